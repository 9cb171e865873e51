use std::collections::BTreeSet;
use std::path::Path;
use std::process::{Command, Output};

use eduspace::pipeline::{untracked_files, RunManifest};
use sha2::{Digest, Sha256};

fn eduspace(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_eduspace"))
        .current_dir(dir)
        .env_remove("EDUSPACE_OUTPUT_DIR")
        .args(args)
        .output()
        .unwrap()
}

fn manifest(dir: &Path) -> RunManifest {
    serde_json::from_slice(&std::fs::read(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn full_run_writes_every_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let out = eduspace(
        tmp.path(),
        &["run", "--preset", "fig1a", "--n", "6000", "--output-dir", "out"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("Pseudo R2"));

    let root = tmp.path().join("out");
    let m = manifest(&root);
    let paths: BTreeSet<&str> = m.artifacts.iter().map(|a| a.path.as_str()).collect();
    for want in [
        "input/secondary.csv",
        "input/enrollment.csv",
        "ingest/rejects.csv",
        "ingest/join_report.json",
        "features/features.csv",
        "features/schools.csv",
        "features/exclusions.json",
        "cluster/cluster_model.json",
        "cluster/assignments.csv",
        "space/space_model.json",
        "space/coordinates.csv",
        "migration/migration_rates.csv",
        "migration/migration_matrix.csv",
        "fit/models.json",
        "fit/model_table.txt",
        "fit/model_table.csv",
        "report/composition.svg",
        "report/composition.csv",
        "report/centroids.svg",
        "report/scatter.svg",
        "report/densities.svg",
        "report/program_shares.csv",
        "report/migration_heatmap.svg",
    ] {
        assert!(paths.contains(want), "manifest lacks {want}");
    }
    for a in &m.artifacts {
        let bytes = std::fs::read(root.join(&a.path)).unwrap();
        assert_eq!(a.bytes, bytes.len() as u64, "{}", a.path);
        assert_eq!(a.sha256, hex::encode(Sha256::digest(&bytes)), "{}", a.path);
    }
    assert!(untracked_files(&root, &m).is_empty());
    assert_eq!(m.inputs.len(), 2);
    assert!(m.started_at.is_none());

    let coords = std::fs::read_to_string(root.join("space/coordinates.csv")).unwrap();
    assert!(coords.starts_with("student_id,pc1,pc2,cluster_label\n"));
    let composition = std::fs::read_to_string(root.join("report/composition.csv")).unwrap();
    let total: usize = composition
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse::<usize>().unwrap())
        .sum();
    assert_eq!(composition.lines().count(), 8);
    assert_eq!(total, coords.lines().count() - 1);
}

#[test]
fn report_regenerates_from_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(eduspace(
        tmp.path(),
        &["space", "--preset", "fig1a", "--n", "3000", "--output-dir", "o"]
    )
    .status
    .success());
    // the migration matrix is missing until migrate has run
    let out = eduspace(tmp.path(), &["report", "--output-dir", "o"]);
    assert_eq!(out.status.code(), Some(5));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing artifact"));

    assert!(eduspace(
        tmp.path(),
        &["migrate", "--preset", "fig1a", "--n", "3000", "--output-dir", "o"]
    )
    .status
    .success());
    let out = eduspace(tmp.path(), &["report", "--output-dir", "o"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let root = tmp.path().join("o");
    assert!(root.join("report/scatter.svg").exists());
    assert!(untracked_files(&root, &manifest(&root)).is_empty());
}

#[test]
fn missing_input_is_an_io_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let out = eduspace(
        tmp.path(),
        &["run", "--secondary", "absent.csv", "--enrollment", "absent2.csv"],
    );
    assert_eq!(out.status.code(), Some(5));
}

#[test]
fn separable_migration_fails_the_models() {
    let tmp = tempfile::tempdir().unwrap();
    let out = eduspace(
        tmp.path(),
        &["fit", "--preset", "separable", "--n", "3000", "--output-dir", "o"],
    );
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Separation"));
    let root = tmp.path().join("o");
    let table = std::fs::read_to_string(root.join("fit/model_table.txt")).unwrap();
    assert!(table.contains("Model 1 failed"));
    assert!(untracked_files(&root, &manifest(&root)).is_empty());
}

#[test]
fn configuration_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(
        tmp.path().join("bad.toml"),
        "[input]\nsynth_preset = \"fig1a\"\n[cluster]\nkay = 3\n",
    )
    .unwrap();
    assert_eq!(
        eduspace(tmp.path(), &["--config", "bad.toml", "run"]).status.code(),
        Some(2)
    );
    assert_eq!(eduspace(tmp.path(), &["run"]).status.code(), Some(2));
    assert_eq!(
        eduspace(tmp.path(), &["fit", "--preset", "nope"]).status.code(),
        Some(2)
    );
    assert_eq!(
        eduspace(tmp.path(), &["fit", "--preset", "fig1a", "--models", "0..9"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn malformed_input_is_a_data_failure() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("s.csv"), "student_id,cohort_year\n1,2023\n").unwrap();
    std::fs::write(tmp.path().join("e.csv"), "student_id\n1\n").unwrap();
    let out = eduspace(tmp.path(), &["ingest", "--secondary", "s.csv", "--enrollment", "e.csv"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn files_round_trip_through_ingest() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(eduspace(
        tmp.path(),
        &["synth", "--preset", "fig1a", "--n", "4000", "--output-dir", "gen"]
    )
    .status
    .success());
    assert!(tmp.path().join("gen/input/ground_truth.csv").exists());
    assert!(eduspace(
        tmp.path(),
        &["features", "--preset", "fig1a", "--n", "4000", "--output-dir", "gen"]
    )
    .status
    .success());
    let out = eduspace(
        tmp.path(),
        &[
            "cluster",
            "--secondary",
            "gen/input/secondary.csv",
            "--enrollment",
            "gen/input/enrollment.csv",
            "--output-dir",
            "from_files",
            "--format",
            "csv",
        ],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.starts_with("cluster,label,students\n"));
    assert_eq!(stdout.lines().count(), 8);

    let a = std::fs::read(tmp.path().join("gen/features/features.csv")).unwrap();
    let b = std::fs::read(tmp.path().join("from_files/features/features.csv")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn output_dir_from_environment_and_table_formats() {
    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_eduspace"))
        .current_dir(tmp.path())
        .env("EDUSPACE_OUTPUT_DIR", "envout")
        .args([
            "fit", "--preset", "fig1a", "--n", "4000", "--models", "1,2", "--format", "csv",
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("term,stat,model_1,model_2\n"));
    assert!(tmp.path().join("envout/manifest.json").exists());

    let out = eduspace(
        tmp.path(),
        &[
            "migrate",
            "--preset",
            "fig1a",
            "--n",
            "4000",
            "--output-dir",
            "m",
            "--format",
            "json",
        ],
    );
    assert!(out.status.success());
    let rows: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(rows.as_array().unwrap().len(), 7);
}

#[test]
fn empty_career_filter_is_a_notice() {
    let tmp = tempfile::tempdir().unwrap();
    let out = eduspace(
        tmp.path(),
        &[
            "run",
            "--preset",
            "fig1a",
            "--n",
            "3000",
            "--output-dir",
            "o",
            "--careers",
            "Law,Astronautics",
        ],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let notices = std::fs::read_to_string(tmp.path().join("o/report/notices.txt")).unwrap();
    assert!(notices.contains("Astronautics"));
    assert!(tmp.path().join("o/space/density_law.csv").exists());
    assert!(!tmp.path().join("o/space/density_astronautics.csv").exists());
}
