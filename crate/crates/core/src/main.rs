use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use eduspace::config::{parse_range, RunConfig, ScalingScope};
use eduspace::migration::GroupKey;
use eduspace::pipeline::{self, ClusterSummary, PipelineError, Stage};
use eduspace::space::Bandwidth;

#[derive(Parser, Debug)]
#[command(name = "eduspace", version, about = "Educational trajectory analytics pipeline")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Top-level seed; module seeds derive from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, env = "EDUSPACE_OUTPUT_DIR")]
    output_dir: Option<PathBuf>,
    /// Format of tables printed to stdout.
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,
    #[command(flatten)]
    input: InputArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Json,
    Csv,
}

#[derive(Args, Debug)]
struct InputArgs {
    #[arg(long, global = true)]
    secondary: Option<PathBuf>,
    #[arg(long, global = true)]
    enrollment: Option<PathBuf>,
    /// Generate the cohort from a synthetic preset.
    #[arg(long, global = true)]
    preset: Option<String>,
    /// Students in the synthetic cohort.
    #[arg(long, global = true)]
    n: Option<usize>,
}

#[derive(Args, Debug)]
struct ClusterArgs {
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    restarts: Option<usize>,
    /// k values for the validation curves, e.g. `2..12`.
    #[arg(long)]
    scan: Option<String>,
}

#[derive(Args, Debug)]
struct SpaceArgs {
    /// Comma-separated careers for density panels.
    #[arg(long, value_delimiter = ',')]
    careers: Option<Vec<String>>,
    #[arg(long)]
    grid: Option<usize>,
    /// `scott` or `HX,HY`.
    #[arg(long)]
    bandwidth: Option<String>,
}

#[derive(Args, Debug)]
struct MigrateArgs {
    /// Comma-separated keys: cluster, career_area, home_region, enroll_year.
    #[arg(long, value_delimiter = ',')]
    group_by: Option<Vec<String>>,
    #[arg(long)]
    min_cell: Option<u64>,
    #[arg(long)]
    exclude_metro: Option<bool>,
}

#[derive(Args, Debug)]
struct FitArgs {
    /// Models to fit, e.g. `1..5` or `1,3,5`.
    #[arg(long)]
    models: Option<String>,
    #[arg(long)]
    baseline: Option<String>,
    #[arg(long)]
    exclude_metro: Option<bool>,
    /// `sample` or `cohort`.
    #[arg(long)]
    scaling: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic cohort.
    Synth,
    /// Validate and join the input files.
    Ingest,
    /// Build student feature vectors.
    Features,
    /// Cluster students and label archetypes.
    Cluster(ClusterArgs),
    /// Fit the PCA space and career densities.
    Space {
        #[command(flatten)]
        cluster: ClusterArgs,
        #[command(flatten)]
        space: SpaceArgs,
    },
    /// Compute migration rates and the region matrix.
    Migrate {
        #[command(flatten)]
        cluster: ClusterArgs,
        #[command(flatten)]
        migrate: MigrateArgs,
    },
    /// Fit the logit model ladder.
    Fit {
        #[command(flatten)]
        cluster: ClusterArgs,
        #[command(flatten)]
        fit: FitArgs,
    },
    /// Render the report bundle from an existing output directory.
    Report,
    /// Run every stage.
    Run {
        #[command(flatten)]
        cluster: ClusterArgs,
        #[command(flatten)]
        space: SpaceArgs,
        #[command(flatten)]
        fit: FitArgs,
    },
}

fn invalid(msg: String) -> PipelineError {
    PipelineError::Config(eduspace::config::ConfigError::Invalid(msg))
}

fn apply_cluster(cfg: &mut RunConfig, a: &ClusterArgs) {
    if let Some(k) = a.k {
        cfg.cluster.k = k;
    }
    if let Some(r) = a.restarts {
        cfg.cluster.restarts = r;
    }
    if let Some(s) = &a.scan {
        cfg.cluster.scan = Some(s.clone());
    }
}

fn apply_space(cfg: &mut RunConfig, a: &SpaceArgs) -> Result<(), PipelineError> {
    if let Some(c) = &a.careers {
        cfg.space.careers = c
            .iter()
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect();
    }
    if let Some(g) = a.grid {
        cfg.space.grid = g;
    }
    if let Some(b) = &a.bandwidth {
        cfg.space.bandwidth = if b.eq_ignore_ascii_case("scott") {
            Bandwidth::Scott
        } else {
            let parts: Vec<f64> = b.split(',').filter_map(|p| p.trim().parse().ok()).collect();
            match parts[..] {
                [h] => Bandwidth::Fixed(h, h),
                [x, y] => Bandwidth::Fixed(x, y),
                _ => return Err(invalid(format!("bad bandwidth `{b}`"))),
            }
        };
    }
    Ok(())
}

fn apply_migrate(cfg: &mut RunConfig, a: &MigrateArgs) -> Result<(), PipelineError> {
    if let Some(keys) = &a.group_by {
        cfg.migration.group_by = keys.iter().map(|k| GroupKey::parse(k)).collect::<Result<_, _>>()?;
    }
    if let Some(m) = a.min_cell {
        cfg.migration.min_cell = m;
    }
    if let Some(e) = a.exclude_metro {
        cfg.migration.exclude_metro = e;
    }
    Ok(())
}

fn apply_fit(cfg: &mut RunConfig, a: &FitArgs) -> Result<(), PipelineError> {
    if let Some(m) = &a.models {
        cfg.regression.models = m.clone();
    }
    if let Some(b) = &a.baseline {
        cfg.regression.baseline = b.clone();
    }
    if let Some(e) = a.exclude_metro {
        cfg.migration.exclude_metro = e;
    }
    if let Some(s) = &a.scaling {
        cfg.regression.scaling = match s.as_str() {
            "sample" => ScalingScope::Sample,
            "cohort" => ScalingScope::Cohort,
            other => return Err(invalid(format!("unknown scaling `{other}`"))),
        };
    }
    Ok(())
}

fn build_config(cli: &Cli) -> Result<RunConfig, PipelineError> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|source| eduspace::config::ConfigError::Read {
                path: path.clone(),
                source,
            })?;
            toml::from_str(&text).map_err(eduspace::config::ConfigError::Parse)?
        }
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.output_dir {
        cfg.output_dir = o.clone();
    }
    let i = &cli.input;
    if i.secondary.is_some() || i.enrollment.is_some() {
        cfg.input.secondary = i.secondary.clone().or(cfg.input.secondary);
        cfg.input.enrollment = i.enrollment.clone().or(cfg.input.enrollment);
        cfg.input.synth_preset = None;
    }
    if let Some(p) = &i.preset {
        cfg.input.synth_preset = Some(p.clone());
    }
    if let Some(n) = i.n {
        cfg.input.synth_n = n;
    }
    match &cli.command {
        Command::Cluster(c) => apply_cluster(&mut cfg, c),
        Command::Space { cluster, space } => {
            apply_cluster(&mut cfg, cluster);
            apply_space(&mut cfg, space)?;
        }
        Command::Migrate { cluster, migrate } => {
            apply_cluster(&mut cfg, cluster);
            apply_migrate(&mut cfg, migrate)?;
        }
        Command::Fit { cluster, fit } => {
            apply_cluster(&mut cfg, cluster);
            apply_fit(&mut cfg, fit)?;
        }
        Command::Run { cluster, space, fit } => {
            apply_cluster(&mut cfg, cluster);
            apply_space(&mut cfg, space)?;
            apply_fit(&mut cfg, fit)?;
        }
        Command::Synth | Command::Ingest | Command::Features | Command::Report => {}
    }
    if matches!(cli.command, Command::Synth) && cfg.input.synth_preset.is_none() {
        return Err(invalid("synth needs --preset".into()));
    }
    if !matches!(cli.command, Command::Report) {
        cfg.validate()?;
    }
    Ok(cfg)
}

fn read(path: &Path) -> Result<String, PipelineError> {
    std::fs::read_to_string(path).map_err(|source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn csv_as_json(text: &str) -> String {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let header = rdr.headers().cloned().unwrap_or_default();
    let rows: Vec<BTreeMap<String, String>> = rdr
        .records()
        .flatten()
        .map(|r| {
            header
                .iter()
                .map(str::to_string)
                .zip(r.iter().map(str::to_string))
                .collect()
        })
        .collect();
    serde_json::to_string_pretty(&rows).unwrap_or_default()
}

fn print_cluster(out: &Path, format: Format) -> Result<(), PipelineError> {
    let text = read(&out.join("cluster/cluster_model.json"))?;
    if format == Format::Json {
        println!("{text}");
        return Ok(());
    }
    let s: ClusterSummary = serde_json::from_str(&text).map_err(|e| PipelineError::Data(e.to_string()))?;
    if format == Format::Csv {
        println!("cluster,label,students");
    }
    for (i, (l, n)) in s.labels.iter().zip(&s.sizes).enumerate() {
        match format {
            Format::Csv => println!("{i},{l},{n}"),
            _ => println!("{i:>3}  {l:<14} {n:>8}"),
        }
    }
    if let (Some(ari), Format::Text) = (s.adjusted_rand_index, format) {
        println!("adjusted Rand index vs ground truth: {ari:.4}");
    }
    Ok(())
}

fn print_outputs(command: &Command, out: &Path, format: Format) -> Result<(), PipelineError> {
    match command {
        Command::Cluster(_) => print_cluster(out, format),
        Command::Migrate { .. } => {
            let text = read(&out.join("migration/migration_rates.csv"))?;
            match format {
                Format::Json => println!("{}", csv_as_json(&text)),
                _ => print!("{text}"),
            }
            Ok(())
        }
        Command::Fit { .. } | Command::Run { .. } => {
            let file = match format {
                Format::Text => "fit/model_table.txt",
                Format::Csv => "fit/model_table.csv",
                Format::Json => "fit/models.json",
            };
            print!("{}", read(&out.join(file))?);
            Ok(())
        }
        _ => Ok(()),
    }
}

fn stage_of(command: &Command) -> Stage {
    match command {
        Command::Synth | Command::Ingest => Stage::Ingest,
        Command::Features => Stage::Features,
        Command::Cluster(_) => Stage::Cluster,
        Command::Space { .. } => Stage::Space,
        Command::Migrate { .. } => Stage::Migrate,
        Command::Fit { .. } => Stage::Fit,
        Command::Report | Command::Run { .. } => Stage::Report,
    }
}

fn command_line() -> String {
    std::env::args().skip(1).collect::<Vec<_>>().join(" ")
}

fn real_main(cli: &Cli) -> Result<(), PipelineError> {
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| invalid(format!("cannot build thread pool: {e}")))?;
    }
    let cfg = build_config(cli)?;
    let out = cfg.output_dir.clone();
    if let Command::Report = cli.command {
        let files = pipeline::report_from_dir(&cfg)?;
        eprintln!("wrote {} report files to {}", files.len(), out.join("report").display());
        return Ok(());
    }
    if let Some(scan) = &cfg.cluster.scan {
        parse_range(scan)?;
    }
    let result = pipeline::execute(cfg, stage_of(&cli.command), &command_line());
    match &result {
        Ok(m) => eprintln!("wrote {} artifacts to {}", m.artifacts.len(), out.display()),
        Err(PipelineError::ModelFailed(_)) => {}
        Err(_) => return result.map(|_| ()),
    }
    print_outputs(&cli.command, &out, cli.format)?;
    result.map(|_| ())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match real_main(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
