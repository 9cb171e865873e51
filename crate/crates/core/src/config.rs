//! Declarative run configuration, read from TOML.
//!
//! Every key has a default, and the file may be empty. Unknown keys are
//! rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::FeatureConfig;
use crate::ingest::{IngestConfig, RegionCode};
use crate::migration::GroupKey;
use crate::space::Bandwidth;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid range `{0}`: expected `a..b` (inclusive) or a comma list")]
    Range(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputConfig {
    pub secondary: Option<PathBuf>,
    pub enrollment: Option<PathBuf>,
    /// Generate a cohort instead of reading files.
    pub synth_preset: Option<String>,
    pub synth_n: usize,
}

impl Default for InputConfig {
    fn default() -> Self {
        Self {
            secondary: None,
            enrollment: None,
            synth_preset: None,
            synth_n: 30_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterConfig {
    pub k: usize,
    pub restarts: usize,
    pub tol: f64,
    pub max_iter: usize,
    /// k values for the elbow and silhouette curves, such as `"2..12"`.
    pub scan: Option<String>,
    pub silhouette_sample: usize,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            k: 7,
            restarts: 10,
            tol: 1e-6,
            max_iter: 300,
            scan: None,
            silhouette_sample: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpaceConfig {
    pub grid: usize,
    pub bandwidth: Bandwidth,
    /// Padding of the pooled bounding box, in bandwidths.
    pub pad: f64,
    /// Careers that get a density panel; empty means every career present.
    pub careers: Vec<String>,
    pub scatter_sample: usize,
}

impl Default for SpaceConfig {
    fn default() -> Self {
        Self {
            grid: 200,
            bandwidth: Bandwidth::Scott,
            pad: 3.0,
            careers: Vec::new(),
            scatter_sample: 5_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MigrationConfig {
    pub group_by: Vec<GroupKey>,
    pub min_cell: u64,
    pub metro_region: RegionCode,
    pub exclude_metro: bool,
}

impl Default for MigrationConfig {
    fn default() -> Self {
        Self {
            group_by: vec![GroupKey::Cluster],
            min_cell: 10,
            metro_region: 13,
            exclude_metro: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalingScope {
    /// Min-max over the post-exclusion estimation sample.
    Sample,
    /// Min-max over the full cohort before exclusions.
    Cohort,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegressionConfig {
    pub models: String,
    pub baseline: String,
    pub tol: f64,
    pub max_iter: usize,
    pub scaling: ScalingScope,
}

impl Default for RegressionConfig {
    fn default() -> Self {
        Self {
            models: "1..5".into(),
            baseline: "Achievers".into(),
            tol: 1e-10,
            max_iter: 100,
            scaling: ScalingScope::Sample,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    pub enabled: bool,
    /// Embed a generation timestamp in SVG files and the manifest.
    pub timestamps: bool,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            timestamps: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub input: InputConfig,
    pub ingest: IngestConfig,
    pub features: FeatureConfig,
    pub cluster: ClusterConfig,
    pub space: SpaceConfig,
    pub migration: MigrationConfig,
    pub regression: RegressionConfig,
    pub report: ReportConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            output_dir: PathBuf::from("eduspace-out"),
            input: InputConfig::default(),
            ingest: IngestConfig::default(),
            features: FeatureConfig::default(),
            cluster: ClusterConfig::default(),
            space: SpaceConfig::default(),
            migration: MigrationConfig::default(),
            regression: RegressionConfig::default(),
            report: ReportConfig::default(),
        }
    }
}

/// Module seeds, each derived from the top-level seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub root: u64,
    pub synth: u64,
    pub kmeans: u64,
    pub silhouette: u64,
    pub report: u64,
}

/// SplitMix64 finalizer; spreads nearby seeds far apart.
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).unwrap_or_default()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.input.synth_preset.is_none() && (self.input.secondary.is_none() || self.input.enrollment.is_none()) {
            return bad("[input] needs either synth_preset or both secondary and enrollment".into());
        }
        if self.cluster.k == 0 {
            return bad("cluster.k must be positive".into());
        }
        if self.cluster.restarts == 0 {
            return bad("cluster.restarts must be positive".into());
        }
        if self.space.grid == 0 {
            return bad("space.grid must be positive".into());
        }
        if let Bandwidth::Fixed(x, y) = self.space.bandwidth {
            if !(x > 0.0 && y > 0.0) {
                return bad("space.bandwidth must be positive".into());
            }
        }
        if let Some(scan) = &self.cluster.scan {
            parse_range(scan)?;
        }
        let models = parse_range(&self.regression.models)?;
        if models.iter().any(|&m| !(1..=5).contains(&m)) {
            return bad(format!(
                "regression.models must lie in 1..5, got `{}`",
                self.regression.models
            ));
        }
        if crate::clustering::Archetype::from_name(&self.regression.baseline).is_none() {
            return bad(format!("unknown baseline cluster `{}`", self.regression.baseline));
        }
        Ok(())
    }

    pub fn models(&self) -> Vec<u8> {
        parse_range(&self.regression.models)
            .unwrap_or_default()
            .into_iter()
            .map(|m| m as u8)
            .collect()
    }

    pub fn seeds(&self) -> Seeds {
        let derive = |tag: u64| mix(self.seed ^ mix(tag));
        Seeds {
            root: self.seed,
            synth: self.seed,
            kmeans: derive(1),
            silhouette: derive(2),
            report: derive(3),
        }
    }
}

/// Parse `"a..b"` (inclusive) or `"a,b,c"`.
pub fn parse_range(s: &str) -> Result<Vec<usize>, ConfigError> {
    let err = || ConfigError::Range(s.to_string());
    let s = s.trim();
    if let Some((a, b)) = s.split_once("..") {
        let b = b.strip_prefix('=').unwrap_or(b);
        let a: usize = a.trim().parse().map_err(|_| err())?;
        let b: usize = b.trim().parse().map_err(|_| err())?;
        if a > b {
            return Err(err());
        }
        Ok((a..=b).collect())
    } else {
        let v = s
            .split(',')
            .map(|p| p.trim().parse::<usize>().map_err(|_| err()))
            .collect::<Result<Vec<_>, _>>()?;
        if v.is_empty() {
            return Err(err());
        }
        Ok(v)
    }
}
