//! Stage orchestration: ingest, features, cluster, space, migrate, fit and
//! report, with every artifact recorded in a run manifest.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use log::{info, warn};
use ndarray::Array2;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::clustering::{self, ArchetypeLabel, ClusterError, ClusterModel, KMeansParams, ValidationCurve};
use crate::config::{parse_range, ConfigError, RunConfig, ScalingScope, Seeds};
use crate::features::{self, sig9, FeatureSet};
use crate::ingest::{self, IngestError, JoinReport, Reject, StudentTrajectory};
use crate::migration::{self, GroupKey, MigrationError, MigrationMatrix, MigrationRecord, RateTable};
use crate::regression::{self, Ladder, LogitOptions, RegressionError, ScalingMode};
use crate::report::{self, ReportInputs, StudentPoint};
use crate::space::{self, density_map, DensityMap, GridBounds, SpaceError, SpaceModel};
use crate::synth::{self, GroundTruth, SynthError};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("data validation failed: {0}")]
    Data(String),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("clustering failed: {0}")]
    Cluster(#[from] ClusterError),
    #[error("space construction failed: {0}")]
    Space(#[from] SpaceError),
    #[error(transparent)]
    Migration(#[from] MigrationError),
    #[error("regression failed: {0}")]
    Regression(#[from] RegressionError),
    #[error("model fitting failed: {}", .0.join("; "))]
    ModelFailed(Vec<String>),
    #[error("missing artifact {0}")]
    MissingArtifact(PathBuf),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl PipelineError {
    /// Process exit code: 2 configuration, 3 data, 4 model, 5 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Synth(SynthError::InvalidConfig(_) | SynthError::UnknownPreset(_)) => 2,
            PipelineError::Migration(MigrationError::UnknownGroupKey(_)) => 2,
            PipelineError::Ingest(IngestError::Io { .. }) => 5,
            PipelineError::Ingest(IngestError::Csv { source, .. })
                if matches!(source.kind(), csv::ErrorKind::Io(_)) =>
            {
                5
            }
            PipelineError::Ingest(_) | PipelineError::Data(_) | PipelineError::Synth(_) => 3,
            PipelineError::Migration(_) => 3,
            PipelineError::Cluster(ClusterError::NonFinite) => 3,
            PipelineError::Space(SpaceError::ConstantColumn(_)) => 3,
            PipelineError::Cluster(_) | PipelineError::Space(_) => 4,
            PipelineError::Regression(_) | PipelineError::ModelFailed(_) => 4,
            PipelineError::MissingArtifact(_) | PipelineError::Io { .. } => 5,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Ingest,
    Features,
    Cluster,
    Space,
    Migrate,
    Fit,
    Report,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

fn digest(path: &str, bytes: &[u8]) -> FileDigest {
    FileDigest {
        path: path.to_string(),
        sha256: hex::encode(Sha256::digest(bytes)),
        bytes: bytes.len() as u64,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub module_versions: BTreeMap<String, String>,
    pub command: String,
    pub config_sha256: String,
    pub inputs: Vec<FileDigest>,
    pub seeds: Seeds,
    /// Unix seconds; `None` unless timestamps are enabled.
    pub started_at: Option<u64>,
    pub finished_at: Option<u64>,
    pub artifacts: Vec<FileDigest>,
}

/// Writes files below the output directory and remembers their digests.
pub struct ArtifactWriter {
    root: PathBuf,
    written: Vec<FileDigest>,
}

impl ArtifactWriter {
    pub fn new(root: &Path) -> Result<Self, PipelineError> {
        fs::create_dir_all(root).map_err(io_err(root))?;
        Ok(Self {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<(), PipelineError> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        fs::write(&path, bytes).map_err(io_err(&path))?;
        self.written.retain(|d| d.path != rel);
        self.written.push(digest(rel, bytes));
        Ok(())
    }

    pub fn json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<(), PipelineError> {
        let mut text =
            serde_json::to_string_pretty(value).map_err(|e| PipelineError::Data(format!("serializing {rel}: {e}")))?;
        text.push('\n');
        self.write(rel, text.as_bytes())
    }

    pub fn csv<F>(&mut self, rel: &str, f: F) -> Result<(), PipelineError>
    where
        F: FnOnce(&mut Vec<u8>) -> csv::Result<()>,
    {
        let mut buf = Vec::new();
        f(&mut buf).map_err(|e| PipelineError::Data(format!("writing {rel}: {e}")))?;
        self.write(rel, &buf)
    }

    pub fn artifacts(&self) -> Vec<FileDigest> {
        let mut v = self.written.clone();
        v.sort_by(|a, b| a.path.cmp(&b.path));
        v
    }

    pub fn root(&self) -> &Path {
        &self.root
    }
}

pub struct Cohort {
    pub trajectories: Vec<StudentTrajectory>,
    pub rejects: Vec<Reject>,
    pub join: JoinReport,
    pub truth: Option<GroundTruth>,
    pub inputs: Vec<FileDigest>,
    /// Generated input files, written alongside the results.
    pub generated: Vec<(String, Vec<u8>)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub k: usize,
    pub seed: u64,
    pub restarts: usize,
    pub best_restart: usize,
    pub n_iterations: usize,
    pub objective: f64,
    pub centroids: Vec<Vec<f64>>,
    pub labels: Vec<String>,
    pub rules_version: Option<String>,
    pub sizes: Vec<usize>,
    pub curve: Option<ValidationCurve>,
    /// Agreement with the planted clusters of a synthetic cohort.
    pub adjusted_rand_index: Option<f64>,
}

pub struct Clustering {
    pub model: ClusterModel,
    pub archetypes: Option<ArchetypeLabel>,
    /// Name per cluster index.
    pub labels: Vec<String>,
    pub curve: Option<ValidationCurve>,
    pub ari: Option<f64>,
}

impl Clustering {
    pub fn label_of(&self, row: usize) -> &str {
        &self.labels[self.model.assignments[row]]
    }

    pub fn summary(&self) -> ClusterSummary {
        let mut sizes = vec![0; self.model.k];
        for &a in &self.model.assignments {
            sizes[a] += 1;
        }
        ClusterSummary {
            k: self.model.k,
            seed: self.model.seed,
            restarts: self.model.restarts,
            best_restart: self.model.best_restart,
            n_iterations: self.model.n_iterations,
            objective: self.model.objective,
            centroids: self.model.centroids.rows().into_iter().map(|r| r.to_vec()).collect(),
            labels: self.labels.clone(),
            rules_version: self.archetypes.as_ref().map(|a| a.rules_version.clone()),
            sizes,
            curve: self.curve.clone(),
            adjusted_rand_index: self.ari,
        }
    }
}

pub struct SpaceResult {
    pub model: SpaceModel,
    pub coords: Array2<f64>,
    pub bounds: GridBounds,
    pub densities: Vec<DensityMap>,
    pub notices: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MigrationSummary {
    pub records: usize,
    pub migrants: usize,
    pub metro_region: u16,
    pub metro_excluded: usize,
    pub exclude_metro: bool,
    pub suppressed_groups: usize,
}

pub struct MigrationResult {
    pub records: Vec<MigrationRecord>,
    /// Feature row of each record.
    pub feature_rows: Vec<usize>,
    pub rates: RateTable,
    pub rates_by_year: RateTable,
    pub matrix: MigrationMatrix,
    /// Indices into `records` that enter the regression.
    pub estimation: Vec<usize>,
    pub summary: MigrationSummary,
}

/// In-memory state of one run.
pub struct Pipeline {
    pub config: RunConfig,
    pub seeds: Seeds,
    pub cohort: Option<Cohort>,
    pub features: Option<FeatureSet>,
    pub matrix: Option<Array2<f64>>,
    pub clustering: Option<Clustering>,
    pub space: Option<SpaceResult>,
    pub migration: Option<MigrationResult>,
    pub ladder: Option<Ladder>,
}

fn slug(s: &str) -> String {
    let mut out = String::new();
    for c in s.to_lowercase().chars() {
        if c.is_ascii_alphanumeric() {
            out.push(c);
        } else if !out.ends_with('_') {
            out.push('_');
        }
    }
    out.trim_matches('_').to_string()
}

pub fn load_cohort(cfg: &RunConfig, seeds: &Seeds) -> Result<Cohort, PipelineError> {
    let icfg = &cfg.ingest;
    if let Some(name) = &cfg.input.synth_preset {
        let scfg = synth::preset(name, cfg.input.synth_n, seeds.synth)?;
        let out = synth::generate(&scfg)?;
        let mut sec = Vec::new();
        ingest::write_secondary(&mut sec, &out.secondary, &icfg.secondary_columns)
            .map_err(|e| PipelineError::Data(e.to_string()))?;
        let mut enr = Vec::new();
        ingest::write_enrollment(&mut enr, &out.enrollment, &icfg.enrollment_columns)
            .map_err(|e| PipelineError::Data(e.to_string()))?;
        let mut truth = Vec::new();
        synth::write_ground_truth(&mut truth, &out.truth).map_err(|e| PipelineError::Data(e.to_string()))?;
        let (trajectories, join) = ingest::join_cohort(&out.secondary, &out.enrollment, &icfg.degree_priority);
        return Ok(Cohort {
            trajectories,
            rejects: Vec::new(),
            join,
            truth: Some(out.truth),
            inputs: vec![
                digest("input/secondary.csv", &sec),
                digest("input/enrollment.csv", &enr),
            ],
            generated: vec![
                ("input/secondary.csv".into(), sec),
                ("input/enrollment.csv".into(), enr),
                ("input/ground_truth.csv".into(), truth),
            ],
        });
    }

    let read = |p: &Path| fs::read(p).map_err(io_err(p));
    let sec_path = cfg.input.secondary.clone().unwrap_or_default();
    let enr_path = cfg.input.enrollment.clone().unwrap_or_default();
    let sec_bytes = read(&sec_path)?;
    let enr_bytes = read(&enr_path)?;
    let sec_name = sec_path.display().to_string();
    let enr_name = enr_path.display().to_string();
    let sec = ingest::read_secondary(sec_bytes.as_slice(), &sec_name, icfg)?;
    let enr = ingest::read_enrollment(enr_bytes.as_slice(), &enr_name, icfg)?;
    info!(
        "ingest: {} secondary rows ({} rejected), {} enrollment rows ({} rejected)",
        sec.raw_rows,
        sec.rejects.len(),
        enr.raw_rows,
        enr.rejects.len()
    );
    let (trajectories, join) = ingest::join_cohort(&sec.records, &enr.records, &icfg.degree_priority);
    let mut rejects = sec.rejects;
    rejects.extend(enr.rejects);
    Ok(Cohort {
        trajectories,
        rejects,
        join,
        truth: None,
        inputs: vec![digest(&sec_name, &sec_bytes), digest(&enr_name, &enr_bytes)],
        generated: Vec::new(),
    })
}

impl Pipeline {
    pub fn new(config: RunConfig) -> Self {
        let seeds = config.seeds();
        Self {
            config,
            seeds,
            cohort: None,
            features: None,
            matrix: None,
            clustering: None,
            space: None,
            migration: None,
            ladder: None,
        }
    }

    /// Run every stage up to and including `last`.
    pub fn run_until(&mut self, last: Stage) -> Result<(), PipelineError> {
        self.ingest()?;
        if last >= Stage::Features {
            self.features()?;
        }
        if last >= Stage::Cluster {
            self.cluster()?;
        }
        if last >= Stage::Space {
            self.space()?;
        }
        if last >= Stage::Migrate {
            self.migrate()?;
        }
        if last >= Stage::Fit {
            self.fit()?;
        }
        Ok(())
    }

    pub fn ingest(&mut self) -> Result<(), PipelineError> {
        if self.cohort.is_none() {
            let cohort = load_cohort(&self.config, &self.seeds)?;
            info!(
                "cohort: {} trajectories, {} matched, {} orphan enrollments",
                cohort.join.trajectories, cohort.join.matched, cohort.join.orphan_enrollments
            );
            self.cohort = Some(cohort);
        }
        Ok(())
    }

    pub fn features(&mut self) -> Result<(), PipelineError> {
        self.ingest()?;
        if self.features.is_some() {
            return Ok(());
        }
        let cohort = self.cohort.as_ref().expect("ingested");
        let fs = features::build_features(&cohort.trajectories, &self.config.features);
        if fs.vectors.is_empty() {
            return Err(PipelineError::Data("no student has a complete feature vector".into()));
        }
        let mut m = Array2::zeros((fs.vectors.len(), features::FEATURE_COUNT));
        for (i, v) in fs.vectors.iter().enumerate() {
            for (j, x) in v.values().into_iter().enumerate() {
                m[[i, j]] = x;
            }
        }
        info!(
            "features: {} of {} students retained",
            fs.exclusions.retained, fs.exclusions.input
        );
        self.matrix = Some(m);
        self.features = Some(fs);
        Ok(())
    }

    pub fn cluster(&mut self) -> Result<(), PipelineError> {
        self.features()?;
        if self.clustering.is_some() {
            return Ok(());
        }
        let c = &self.config.cluster;
        let points = self.matrix.as_ref().expect("features built").view();
        let params = KMeansParams {
            k: c.k,
            seed: self.seeds.kmeans,
            restarts: c.restarts,
            tol: c.tol,
            max_iter: c.max_iter,
        };
        let model = clustering::kmeans(points, &params)?;
        let curve = match &c.scan {
            Some(scan) => {
                let ks = parse_range(scan)?;
                Some(clustering::scan_k(points, &ks, &params, c.silhouette_sample)?)
            }
            None => None,
        };
        let (archetypes, labels) = if c.k == 7 {
            let a = clustering::label_archetypes(model.centroids.view())?;
            let names = a.labels.iter().map(|l| l.name().to_string()).collect();
            (Some(a), names)
        } else {
            (None, (0..c.k).map(|i| format!("C{}", i + 1)).collect())
        };
        let ari = match &self.cohort.as_ref().and_then(|co| co.truth.as_ref()) {
            Some(truth) => {
                let fs = self.features.as_ref().expect("features built");
                let planted: Vec<usize> = fs.source_index.iter().map(|&i| truth.cluster[i]).collect();
                Some(synth::adjusted_rand_index(&planted, &model.assignments)?)
            }
            None => None,
        };
        info!("cluster: k = {}, J = {:.6}", model.k, model.objective);
        self.clustering = Some(Clustering {
            model,
            archetypes,
            labels,
            curve,
            ari,
        });
        Ok(())
    }

    fn career_of_rows(&self) -> Vec<Option<&str>> {
        let cohort = self.cohort.as_ref().expect("ingested");
        let fs = self.features.as_ref().expect("features built");
        fs.source_index
            .iter()
            .map(|&i| {
                cohort.trajectories[i]
                    .enrollment
                    .as_ref()
                    .map(|e| e.career_name.as_str())
            })
            .collect()
    }

    pub fn space(&mut self) -> Result<(), PipelineError> {
        self.cluster()?;
        if self.space.is_some() {
            return Ok(());
        }
        let sc = self.config.space.clone();
        let points = self.matrix.as_ref().expect("features built");
        let model = space::fit_space(points.view(), &space::Orientation::default())?;
        let coords = space::project(&model, points.view())?;
        let pairs: Vec<[f64; 2]> = coords.rows().into_iter().map(|r| [r[0], r[1]]).collect();
        let pooled_bw = match sc.bandwidth {
            space::Bandwidth::Scott => space::scott_bandwidth(&pairs),
            space::Bandwidth::Fixed(x, y) => (x, y),
        };
        let bounds = GridBounds::covering(&pairs, pooled_bw, sc.pad);

        let careers = self.career_of_rows();
        let mut present: Vec<&str> = careers.iter().flatten().copied().collect();
        present.sort_unstable();
        present.dedup();
        let wanted: Vec<String> = if sc.careers.is_empty() {
            present.iter().map(|s| s.to_string()).collect()
        } else {
            sc.careers.clone()
        };
        let mut densities = Vec::new();
        let mut notices = Vec::new();
        for career in &wanted {
            let pts: Vec<[f64; 2]> = pairs
                .iter()
                .zip(&careers)
                .filter(|(_, c)| c.is_some_and(|c| c.eq_ignore_ascii_case(career)))
                .map(|(p, _)| *p)
                .collect();
            if pts.len() < 2 {
                let note = format!("career `{career}` has {} students; density panel omitted", pts.len());
                warn!("{note}");
                notices.push(note);
                continue;
            }
            densities.push(density_map(career, &pts, sc.grid, sc.bandwidth, bounds)?);
        }
        let [r1, r2] = model.explained_variance_ratio();
        info!("space: explained variance {r1:.3}, {r2:.3}");
        self.space = Some(SpaceResult {
            model,
            coords,
            bounds,
            densities,
            notices,
        });
        Ok(())
    }

    pub fn migrate(&mut self) -> Result<(), PipelineError> {
        self.cluster()?;
        if self.migration.is_some() {
            return Ok(());
        }
        let mc = self.config.migration.clone();
        let cohort = self.cohort.as_ref().expect("ingested");
        let fs = self.features.as_ref().expect("features built");
        let cl = self.clustering.as_ref().expect("clustered");
        let regions = &self.config.ingest.regions;

        let mut records = Vec::new();
        let mut feature_rows = Vec::new();
        for (row, &src) in fs.source_index.iter().enumerate() {
            let t = &cohort.trajectories[src];
            let Some(e) = &t.enrollment else { continue };
            let migrated = migration::migration_flag(t.secondary.home_region, e.campus_region, regions)?;
            records.push(MigrationRecord {
                student_id: t.secondary.student_id.clone(),
                home_region: t.secondary.home_region,
                campus_region: e.campus_region,
                migrated,
                cluster_label: cl.label_of(row).to_string(),
                career_area: e.career_area.clone(),
                enroll_year: e.enroll_year,
            });
            feature_rows.push(row);
        }
        if records.is_empty() {
            return Err(PipelineError::Data("no enrolled student has a feature vector".into()));
        }

        let estimation: Vec<usize> = (0..records.len())
            .filter(|&i| !mc.exclude_metro || records[i].home_region != mc.metro_region)
            .collect();
        let scoped: Vec<MigrationRecord> = estimation.iter().map(|&i| records[i].clone()).collect();
        let rates = migration::migration_rates(&scoped, &mc.group_by, mc.min_cell);
        let mut by_year_keys = mc.group_by.clone();
        if !by_year_keys.contains(&GroupKey::EnrollYear) {
            by_year_keys.push(GroupKey::EnrollYear);
        }
        let rates_by_year = migration::migration_rates(&scoped, &by_year_keys, mc.min_cell);
        let matrix = migration::migration_matrix(&records, None);
        let summary = MigrationSummary {
            records: records.len(),
            migrants: records.iter().filter(|r| r.migrated).count(),
            metro_region: mc.metro_region,
            metro_excluded: records.len() - estimation.len(),
            exclude_metro: mc.exclude_metro,
            suppressed_groups: rates.suppressed.len(),
        };
        info!(
            "migrate: {} records, {} migrants, {} metropolitan excluded",
            summary.records, summary.migrants, summary.metro_excluded
        );
        self.migration = Some(MigrationResult {
            records,
            feature_rows,
            rates,
            rates_by_year,
            matrix,
            estimation,
            summary,
        });
        Ok(())
    }

    pub fn fit(&mut self) -> Result<(), PipelineError> {
        self.migrate()?;
        if self.ladder.is_some() {
            return Ok(());
        }
        let rc = &self.config.regression;
        let fs = self.features.as_ref().expect("features built");
        let mig = self.migration.as_ref().expect("migrated");
        let values: Vec<[f64; 6]> = fs.vectors.iter().map(|v| v.values()).collect();
        let mut x = Vec::with_capacity(mig.estimation.len());
        let mut clusters = Vec::with_capacity(mig.estimation.len());
        let mut y = Vec::with_capacity(mig.estimation.len());
        for &i in &mig.estimation {
            x.push(values[mig.feature_rows[i]]);
            clusters.push(mig.records[i].cluster_label.clone());
            y.push(mig.records[i].migrated);
        }
        let scaling = match rc.scaling {
            ScalingScope::Sample => ScalingMode::MinMaxSample,
            ScalingScope::Cohort => ScalingMode::MinMaxBounds(
                (0..6)
                    .map(|j| {
                        values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                            (lo.min(v[j]), hi.max(v[j]))
                        })
                    })
                    .collect(),
            ),
        };
        let baseline = clustering::Archetype::from_name(&rc.baseline)
            .map(|a| a.name().to_string())
            .unwrap_or_else(|| rc.baseline.clone());
        let baseline = if clusters.iter().any(|c| clustering::Archetype::from_name(c).is_none()) {
            let mut levels = clusters.clone();
            levels.sort();
            levels.dedup();
            if levels.contains(&baseline) {
                baseline
            } else {
                levels.first().cloned().unwrap_or(baseline)
            }
        } else {
            baseline
        };
        let options = LogitOptions {
            tol: rc.tol,
            max_iter: rc.max_iter,
        };
        let ladder = regression::model_ladder(&x, &clusters, &y, &self.config.models(), &baseline, &scaling, &options)?;
        for e in &ladder.entries {
            match (&e.fit, &e.error) {
                (Some(f), _) => info!(
                    "fit: model {} ll = {:.4}, pseudo R2 = {:.4}",
                    e.model_id, f.log_likelihood, f.pseudo_r2
                ),
                (None, Some(err)) => warn!("fit: model {} failed: {err}", e.model_id),
                _ => {}
            }
        }
        self.ladder = Some(ladder);
        Ok(())
    }

    pub fn report_inputs(&self) -> Option<ReportInputs> {
        let cl = self.clustering.as_ref()?;
        let sp = self.space.as_ref()?;
        let mig = self.migration.as_ref()?;
        let fs = self.features.as_ref()?;
        let careers = self.career_of_rows();
        let students = fs
            .vectors
            .iter()
            .enumerate()
            .map(|(row, v)| StudentPoint {
                student_id: v.student_id.clone(),
                cluster: cl.label_of(row).to_string(),
                pc1: sp.coords[[row, 0]],
                pc2: sp.coords[[row, 1]],
                career: careers[row].map(str::to_string),
            })
            .collect();
        Some(ReportInputs {
            labels: cl.labels.clone(),
            centroids: cl.model.centroids.rows().into_iter().map(|r| r.to_vec()).collect(),
            students,
            densities: sp.densities.clone(),
            notices: sp.notices.clone(),
            matrix: mig.matrix.clone(),
        })
    }

    /// Write the artifacts of every stage that has run.
    pub fn write_artifacts(&self, out: &mut ArtifactWriter, with_report: bool) -> Result<(), PipelineError> {
        if let Some(cohort) = &self.cohort {
            for (rel, bytes) in &cohort.generated {
                out.write(rel, bytes)?;
            }
            out.csv("ingest/rejects.csv", |w| ingest::write_rejects(w, &cohort.rejects))?;
            out.json("ingest/join_report.json", &cohort.join)?;
            out.csv("ingest/cohort.csv", |w| write_cohort(w, &cohort.trajectories))?;
        }
        if let Some(fs) = &self.features {
            out.csv("features/features.csv", |w| features::write_features(w, &fs.vectors))?;
            out.csv("features/schools.csv", |w| features::write_schools(w, &fs.schools))?;
            out.json("features/exclusions.json", &fs.exclusions)?;
        }
        if let (Some(cl), Some(fs)) = (&self.clustering, &self.features) {
            out.json("cluster/cluster_model.json", &cl.summary())?;
            out.csv("cluster/assignments.csv", |w| {
                let mut w = csv::Writer::from_writer(w);
                w.write_record(["student_id", "cluster", "label"])?;
                for (row, v) in fs.vectors.iter().enumerate() {
                    let c = cl.model.assignments[row];
                    w.write_record([v.student_id.as_str(), &c.to_string(), &cl.labels[c]])?;
                }
                w.flush()?;
                Ok(())
            })?;
            if let Some(curve) = &cl.curve {
                out.csv("cluster/validation_curve.csv", |w| {
                    let mut w = csv::Writer::from_writer(w);
                    w.write_record(["k", "objective", "silhouette", "knee"])?;
                    for (i, k) in curve.k_values.iter().enumerate() {
                        w.write_record([
                            k.to_string(),
                            sig9(curve.objective_per_k[i]),
                            sig9(curve.silhouette_per_k[i]),
                            u8::from(curve.knee == Some(*k)).to_string(),
                        ])?;
                    }
                    w.flush()?;
                    Ok(())
                })?;
            }
        }
        if let (Some(sp), Some(cl), Some(fs)) = (&self.space, &self.clustering, &self.features) {
            out.json("space/space_model.json", &sp.model)?;
            out.csv("space/coordinates.csv", |w| {
                let mut w = csv::Writer::from_writer(w);
                w.write_record(["student_id", "pc1", "pc2", "cluster_label"])?;
                for (row, v) in fs.vectors.iter().enumerate() {
                    w.write_record([
                        v.student_id.as_str(),
                        &sig9(sp.coords[[row, 0]]),
                        &sig9(sp.coords[[row, 1]]),
                        cl.label_of(row),
                    ])?;
                }
                w.flush()?;
                Ok(())
            })?;
            for d in &sp.densities {
                out.csv(&format!("space/density_{}.csv", slug(&d.label)), |w| {
                    report::write_grid(w, d)
                })?;
            }
        }
        if let Some(mig) = &self.migration {
            out.csv("migration/migration_rates.csv", |w| {
                migration::write_rate_table(w, &mig.rates)
            })?;
            out.csv("migration/migration_rates_by_year.csv", |w| {
                migration::write_rate_table(w, &mig.rates_by_year)
            })?;
            out.csv("migration/migration_matrix.csv", |w| {
                migration::write_matrix(w, &mig.matrix)
            })?;
            out.json("migration/migration_summary.json", &mig.summary)?;
        }
        if let Some(ladder) = &self.ladder {
            out.write("fit/model_table.txt", regression::render_text(ladder).as_bytes())?;
            out.write("fit/model_table.csv", regression::render_csv(ladder).as_bytes())?;
            out.json("fit/models.json", ladder)?;
        }
        if with_report {
            let inputs = self
                .report_inputs()
                .ok_or_else(|| PipelineError::MissingArtifact(out.root().join("space/coordinates.csv")))?;
            let stamp = self.config.report.timestamps.then(now);
            for (rel, bytes) in
                report::build_report(&inputs, self.seeds.report, self.config.space.scatter_sample, stamp)
            {
                out.write(&format!("report/{rel}"), &bytes)?;
            }
        }
        Ok(())
    }

    /// Failures recorded by the model ladder, if any.
    pub fn model_failures(&self) -> Vec<String> {
        self.ladder
            .iter()
            .flat_map(|l| l.entries.iter())
            .filter_map(|e| e.error.as_ref().map(|err| format!("model {}: {err}", e.model_id)))
            .collect()
    }
}

fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn write_cohort<W: std::io::Write>(writer: W, trajectories: &[StudentTrajectory]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "student_id",
        "cohort_year",
        "home_region",
        "school_id",
        "enroll_year",
        "institution_id",
        "campus_region",
        "career_name",
        "career_area",
        "degree_level",
    ])?;
    for t in trajectories {
        let s = &t.secondary;
        let mut rec = vec![
            s.student_id.clone(),
            s.cohort_year.to_string(),
            s.home_region.to_string(),
            s.school_id.clone(),
        ];
        match &t.enrollment {
            Some(e) => rec.extend([
                e.enroll_year.to_string(),
                e.institution_id.clone(),
                e.campus_region.to_string(),
                e.career_name.clone(),
                e.career_area.clone(),
                e.degree_level.as_str().to_string(),
            ]),
            None => rec.extend(std::iter::repeat_n(String::new(), 6)),
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn module_versions() -> BTreeMap<String, String> {
    let v = env!("CARGO_PKG_VERSION").to_string();
    let mut m: BTreeMap<String, String> = [
        "ingest",
        "features",
        "clustering",
        "space",
        "migration",
        "regression",
        "synth",
        "report",
    ]
    .into_iter()
    .map(|k| (k.to_string(), v.clone()))
    .collect();
    m.insert("archetype_rules".into(), clustering::ARCHETYPE_RULES_VERSION.into());
    m
}

/// Run up to `last`, write artifacts and the manifest.
///
/// Model-ladder failures still produce every artifact; the error is
/// returned afterwards.
pub fn execute(config: RunConfig, last: Stage, command: &str) -> Result<RunManifest, PipelineError> {
    let started = config.report.timestamps.then(now);
    let mut pipeline = Pipeline::new(config);
    pipeline.run_until(last.min(Stage::Fit))?;
    let mut out = ArtifactWriter::new(&pipeline.config.output_dir)?;
    let with_report = last >= Stage::Report && pipeline.config.report.enabled;
    pipeline.write_artifacts(&mut out, with_report)?;

    let config_text = pipeline.config.to_toml_string();
    let manifest = RunManifest {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        module_versions: module_versions(),
        command: command.to_string(),
        config_sha256: hex::encode(Sha256::digest(config_text.as_bytes())),
        inputs: pipeline.cohort.as_ref().map(|c| c.inputs.clone()).unwrap_or_default(),
        seeds: pipeline.seeds,
        started_at: started,
        finished_at: pipeline.config.report.timestamps.then(now),
        artifacts: out.artifacts(),
    };
    out.json(MANIFEST_FILE, &manifest)?;
    warn_untracked(out.root(), &manifest);

    let failures = pipeline.model_failures();
    if !failures.is_empty() {
        return Err(PipelineError::ModelFailed(failures));
    }
    Ok(manifest)
}

fn list_files(root: &Path, dir: &Path, acc: &mut Vec<String>) {
    let Ok(entries) = fs::read_dir(dir) else { return };
    for e in entries.flatten() {
        let p = e.path();
        if p.is_dir() {
            list_files(root, &p, acc);
        } else if let Ok(rel) = p.strip_prefix(root) {
            acc.push(rel.to_string_lossy().replace('\\', "/"));
        }
    }
}

/// Files in the output directory that the manifest does not list.
pub fn untracked_files(root: &Path, manifest: &RunManifest) -> Vec<String> {
    let mut files = Vec::new();
    list_files(root, root, &mut files);
    let known: std::collections::HashSet<&str> = manifest.artifacts.iter().map(|a| a.path.as_str()).collect();
    let mut extra: Vec<String> = files
        .into_iter()
        .filter(|f| f != MANIFEST_FILE && !known.contains(f.as_str()))
        .collect();
    extra.sort();
    extra
}

fn warn_untracked(root: &Path, manifest: &RunManifest) {
    for f in untracked_files(root, manifest) {
        warn!("{} is not part of this run", root.join(f).display());
    }
}

/// Rebuild report inputs from the artifacts of an earlier run.
pub fn load_report_inputs(dir: &Path) -> Result<ReportInputs, PipelineError> {
    let need = |rel: &str| -> Result<Vec<u8>, PipelineError> {
        let p = dir.join(rel);
        if !p.exists() {
            return Err(PipelineError::MissingArtifact(p));
        }
        fs::read(&p).map_err(io_err(&p))
    };
    let bad = |rel: &str, e: &dyn std::fmt::Display| PipelineError::Data(format!("{rel}: {e}"));

    let summary: ClusterSummary = serde_json::from_slice(&need("cluster/cluster_model.json")?)
        .map_err(|e| bad("cluster/cluster_model.json", &e))?;
    let space_model: SpaceModel =
        serde_json::from_slice(&need("space/space_model.json")?).map_err(|e| bad("space/space_model.json", &e))?;

    let mut careers: HashMap<String, String> = HashMap::new();
    let cohort = need("ingest/cohort.csv")?;
    let mut rdr = csv::Reader::from_reader(cohort.as_slice());
    for rec in rdr.records() {
        let rec = rec.map_err(|e| bad("ingest/cohort.csv", &e))?;
        if !rec[7].is_empty() {
            careers.insert(rec[0].to_string(), rec[7].to_string());
        }
    }

    let coords = need("space/coordinates.csv")?;
    let mut rdr = csv::Reader::from_reader(coords.as_slice());
    let mut students = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| bad("space/coordinates.csv", &e))?;
        let num = |i: usize| rec[i].parse::<f64>().map_err(|e| bad("space/coordinates.csv", &e));
        students.push(StudentPoint {
            student_id: rec[0].to_string(),
            pc1: num(1)?,
            pc2: num(2)?,
            cluster: rec[3].to_string(),
            career: careers.get(&rec[0]).cloned(),
        });
    }

    let matrix_csv = need("migration/migration_matrix.csv")?;
    let matrix = report::read_matrix(matrix_csv.as_slice()).map_err(|e| bad("migration/migration_matrix.csv", &e))?;

    // density grids are recomputed from the coordinates
    let cfg_space = crate::config::SpaceConfig::default();
    let pairs: Vec<[f64; 2]> = students.iter().map(|s| [s.pc1, s.pc2]).collect();
    let bw = space::scott_bandwidth(&pairs);
    let bounds = GridBounds::covering(&pairs, bw, cfg_space.pad);
    let mut names: Vec<String> = students.iter().filter_map(|s| s.career.clone()).collect();
    names.sort();
    names.dedup();
    let mut densities = Vec::new();
    let mut notices = Vec::new();
    for name in names {
        let pts: Vec<[f64; 2]> = students
            .iter()
            .filter(|s| s.career.as_deref() == Some(name.as_str()))
            .map(|s| [s.pc1, s.pc2])
            .collect();
        if pts.len() < 2 {
            notices.push(format!(
                "career `{name}` has {} students; density panel omitted",
                pts.len()
            ));
            continue;
        }
        densities.push(density_map(&name, &pts, cfg_space.grid, cfg_space.bandwidth, bounds)?);
    }
    let _ = space_model;
    Ok(ReportInputs {
        labels: summary.labels,
        centroids: summary.centroids,
        students,
        densities,
        notices,
        matrix,
    })
}

/// Regenerate the report bundle from artifacts already on disk.
pub fn report_from_dir(config: &RunConfig) -> Result<Vec<FileDigest>, PipelineError> {
    let dir = &config.output_dir;
    let inputs = load_report_inputs(dir)?;
    let mut out = ArtifactWriter::new(dir)?;
    let stamp = config.report.timestamps.then(now);
    for (rel, bytes) in report::build_report(&inputs, config.seeds().report, config.space.scatter_sample, stamp) {
        out.write(&format!("report/{rel}"), &bytes)?;
    }
    // keep the manifest complete
    let manifest_path = dir.join(MANIFEST_FILE);
    if let Ok(text) = fs::read(&manifest_path) {
        if let Ok(mut m) = serde_json::from_slice::<RunManifest>(&text) {
            let fresh = out.artifacts();
            m.artifacts.retain(|a| !fresh.iter().any(|f| f.path == a.path));
            m.artifacts.extend(fresh.iter().cloned());
            m.artifacts.sort_by(|a, b| a.path.cmp(&b.path));
            out.json(MANIFEST_FILE, &m)?;
        }
    }
    Ok(out.artifacts())
}

/// Subsample indices for plotting, deterministic in `seed`.
pub fn plot_sample(n: usize, max: usize, seed: u64) -> Vec<usize> {
    if n <= max {
        return (0..n).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = sample(&mut rng, n, max).into_vec();
    idx.sort_unstable();
    idx
}
