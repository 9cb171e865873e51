use super::{ClusterSpec, MigrationSpec, Structure, SynthConfig, SynthError};

pub const PRESET_NAMES: [&str; 4] = ["fig1a", "two_factor", "three_rates", "separable"];

fn component(name: &str, weight: f64, mean: [f64; 6], sd: f64) -> ClusterSpec {
    ClusterSpec {
        name: name.to_string(),
        weight,
        mean,
        sd,
    }
}

fn base(n_students: usize, seed: u64, structure: Structure, migration: MigrationSpec) -> SynthConfig {
    SynthConfig {
        n_students,
        n_schools: (n_students / 60).clamp(32, 4000),
        n_regions: 16,
        metro_region: Some(13),
        metro_share: 0.4,
        cohort_years: vec![2023, 2024],
        structure,
        separation: 1.0,
        migration,
        enroll_rate: 0.85,
        income_base: 250_000.0,
        income_spread: 1.5,
        seed,
    }
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Named starting configurations; callers may adjust fields afterwards.
///
/// * `fig1a`: seven components on the qualitative archetype geometry.
/// * `two_factor`: one latent performance factor and one SES factor.
/// * `three_rates`: three components with migration rates 0.1, 0.4, 0.7.
/// * `separable`: two income groups whose migration is all-or-nothing.
pub fn preset(name: &str, n_students: usize, seed: u64) -> Result<SynthConfig, SynthError> {
    match name {
        "fig1a" => {
            // lang, math, gpa, school_lang, school_math, income
            let components = vec![
                component("Achievers", 0.14, [0.85, 0.85, 0.88, 0.80, 0.80, 0.80], 0.05),
                component("Strivers", 0.12, [0.80, 0.80, 0.80, 0.70, 0.70, 0.20], 0.05),
                component("Atypical", 0.13, [0.45, 0.45, 0.80, 0.30, 0.30, 0.50], 0.05),
                component("Privileged", 0.16, [0.50, 0.50, 0.60, 0.75, 0.75, 0.85], 0.05),
                component("Challenged", 0.15, [0.45, 0.45, 0.40, 0.70, 0.70, 0.25], 0.05),
                component("Resilient", 0.12, [0.25, 0.25, 0.45, 0.45, 0.45, 0.75], 0.05),
                component("Disadvantaged", 0.18, [0.15, 0.15, 0.15, 0.20, 0.20, 0.15], 0.05),
            ];
            let migration = MigrationSpec {
                intercept: -2.0,
                coefficients: [0.6, 0.5, 0.4, 0.5, 0.5, 0.3],
                cluster_offsets: vec![0.0, -0.09, 0.11, -0.11, 0.07, 0.14, 0.39],
            };
            Ok(base(n_students, seed, Structure::Mixture { components }, migration))
        }
        "two_factor" => {
            let migration = MigrationSpec {
                intercept: -1.5,
                coefficients: [0.5, 0.5, 0.5, 0.3, 0.3, 0.8],
                cluster_offsets: Vec::new(),
            };
            Ok(base(n_students, seed, Structure::TwoFactor { noise: 0.35 }, migration))
        }
        "three_rates" => {
            let components = vec![
                component("Low", 1.0 / 3.0, [0.2, 0.2, 0.2, 0.3, 0.3, 0.2], 0.05),
                component("Mid", 1.0 / 3.0, [0.5, 0.5, 0.5, 0.5, 0.5, 0.5], 0.05),
                component("High", 1.0 / 3.0, [0.8, 0.8, 0.8, 0.7, 0.7, 0.8], 0.05),
            ];
            let migration = MigrationSpec {
                intercept: 0.0,
                coefficients: [0.0; 6],
                cluster_offsets: vec![logit(0.1), logit(0.4), logit(0.7)],
            };
            Ok(base(n_students, seed, Structure::Mixture { components }, migration))
        }
        "separable" => {
            let components = vec![
                component("Poor", 0.5, [0.4, 0.4, 0.4, 0.4, 0.4, 0.2], 0.03),
                component("Rich", 0.5, [0.6, 0.6, 0.6, 0.6, 0.6, 0.8], 0.03),
            ];
            let migration = MigrationSpec {
                intercept: -50.0,
                coefficients: [0.0, 0.0, 0.0, 0.0, 0.0, 100.0],
                cluster_offsets: Vec::new(),
            };
            let mut cfg = base(n_students, seed, Structure::Mixture { components }, migration);
            cfg.cohort_years = vec![2023];
            cfg.enroll_rate = 1.0;
            Ok(cfg)
        }
        other => Err(SynthError::UnknownPreset(other.to_string())),
    }
}
