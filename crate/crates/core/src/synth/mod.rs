//! Seeded synthetic cohorts with planted cluster, factor and migration
//! structure.
//!
//! Structure is planted in the six-dimensional feature space and mapped to
//! raw scales: test scores `150 + 700x`, GPA `4 + 3x`, income
//! `base * exp(spread * x)`. Every student draws from its own ChaCha stream
//! keyed by its index, so output does not depend on scheduling.

mod ari;
mod presets;

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{DegreeLevel, EnrollmentRecord, RegionCode, SecondaryRecord};

pub use ari::adjusted_rand_index;
pub use presets::{preset, PRESET_NAMES};

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("invalid synth config: {0}")]
    InvalidConfig(String),
    #[error("labelings differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
}

/// One planted mixture component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSpec {
    pub name: String,
    pub weight: f64,
    pub mean: [f64; 6],
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Structure {
    Mixture {
        components: Vec<ClusterSpec>,
    },
    /// Performance factor drives the first five features, SES the sixth.
    TwoFactor {
        noise: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MigrationSpec {
    pub intercept: f64,
    /// Applied to the planted feature coordinates.
    pub coefficients: [f64; 6],
    /// One offset per mixture component; empty means none.
    pub cluster_offsets: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_students: usize,
    pub n_schools: usize,
    pub n_regions: u16,
    pub metro_region: Option<RegionCode>,
    /// Probability that a student lives in the metropolitan region.
    pub metro_share: f64,
    pub cohort_years: Vec<i32>,
    pub structure: Structure,
    /// Scales component means toward their weighted average.
    pub separation: f64,
    pub migration: MigrationSpec,
    pub enroll_rate: f64,
    pub income_base: f64,
    pub income_spread: f64,
    pub seed: u64,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidConfig(m.to_string()));
        if self.n_students == 0 {
            return bad("n_students must be positive");
        }
        if self.n_schools == 0 {
            return bad("n_schools must be positive");
        }
        if self.n_regions < 2 {
            return bad("n_regions must be at least 2");
        }
        if let Some(m) = self.metro_region {
            if m == 0 || m > self.n_regions {
                return bad("metro_region outside 1..=n_regions");
            }
        }
        if !(0.0..=1.0).contains(&self.metro_share) || !(0.0..=1.0).contains(&self.enroll_rate) {
            return bad("shares must lie in [0, 1]");
        }
        if self.cohort_years.is_empty() {
            return bad("cohort_years is empty");
        }
        if !(self.separation > 0.0 && self.separation.is_finite()) {
            return bad("separation must be positive");
        }
        if !(self.income_base > 0.0 && self.income_spread.is_finite()) {
            return bad("income_base must be positive");
        }
        match &self.structure {
            Structure::Mixture { components } => {
                if components.is_empty() {
                    return bad("no mixture components");
                }
                let total: f64 = components.iter().map(|c| c.weight).sum();
                if (total - 1.0).abs() > 1e-9 || components.iter().any(|c| c.weight < 0.0) {
                    return bad("component weights must be non-negative and sum to 1");
                }
                if components.iter().any(|c| !(c.sd > 0.0 && c.sd.is_finite())) {
                    return bad("component sd must be positive");
                }
                let offsets = self.migration.cluster_offsets.len();
                if offsets != 0 && offsets != components.len() {
                    return bad("cluster_offsets must match the component count");
                }
            }
            Structure::TwoFactor { noise } => {
                if !(*noise >= 0.0 && noise.is_finite()) {
                    return bad("noise must be non-negative");
                }
                if !self.migration.cluster_offsets.is_empty() {
                    return bad("two_factor has no clusters to offset");
                }
            }
        }
        Ok(())
    }

    pub fn component_names(&self) -> Vec<String> {
        match &self.structure {
            Structure::Mixture { components } => components.iter().map(|c| c.name.clone()).collect(),
            Structure::TwoFactor { .. } => vec!["all".to_string()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub student_id: Vec<String>,
    pub cluster: Vec<usize>,
    pub cluster_names: Vec<String>,
    pub performance: Vec<f64>,
    pub ses: Vec<f64>,
    pub migration_probability: Vec<f64>,
    pub planted: Vec<[f64; 6]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub secondary: Vec<SecondaryRecord>,
    pub enrollment: Vec<EnrollmentRecord>,
    pub truth: GroundTruth,
}

#[derive(Debug, Clone)]
struct School {
    id: String,
    quality: f64,
}

struct Career {
    name: &'static str,
    area: &'static str,
    level: DegreeLevel,
    performance: f64,
    ses: f64,
    base: f64,
}

const CAREERS: [Career; 12] = [
    Career {
        name: "Medicine",
        area: "Health",
        level: DegreeLevel::Professional,
        performance: 6.0,
        ses: 1.5,
        base: -4.5,
    },
    Career {
        name: "Dentistry",
        area: "Health",
        level: DegreeLevel::Professional,
        performance: 3.5,
        ses: 2.5,
        base: -4.0,
    },
    Career {
        name: "Law",
        area: "Law",
        level: DegreeLevel::Professional,
        performance: 2.5,
        ses: 1.5,
        base: -2.5,
    },
    Career {
        name: "Industrial Engineering",
        area: "Technology",
        level: DegreeLevel::Professional,
        performance: 4.0,
        ses: 0.5,
        base: -3.0,
    },
    Career {
        name: "Business Administration",
        area: "Administration and Commerce",
        level: DegreeLevel::Professional,
        performance: 1.5,
        ses: 0.0,
        base: -1.0,
    },
    Career {
        name: "Psychology",
        area: "Social Sciences",
        level: DegreeLevel::Professional,
        performance: 1.0,
        ses: 1.0,
        base: -1.5,
    },
    Career {
        name: "Anthropology",
        area: "Social Sciences",
        level: DegreeLevel::Professional,
        performance: 1.5,
        ses: 2.0,
        base: -3.5,
    },
    Career {
        name: "Architecture",
        area: "Art and Architecture",
        level: DegreeLevel::Professional,
        performance: 1.5,
        ses: 2.5,
        base: -3.0,
    },
    Career {
        name: "Nursing",
        area: "Health",
        level: DegreeLevel::Professional,
        performance: 1.0,
        ses: -0.5,
        base: -0.5,
    },
    Career {
        name: "Pedagogy",
        area: "Education",
        level: DegreeLevel::Professional,
        performance: 0.0,
        ses: -0.5,
        base: 0.0,
    },
    Career {
        name: "Accounting Technician",
        area: "Administration and Commerce",
        level: DegreeLevel::Technical,
        performance: -2.0,
        ses: -1.0,
        base: 1.0,
    },
    Career {
        name: "Mechanics Technician",
        area: "Technology",
        level: DegreeLevel::Technical,
        performance: -2.5,
        ses: -1.0,
        base: 1.0,
    },
];

/// Names of the careers the generator can emit.
pub fn career_names() -> Vec<&'static str> {
    CAREERS.iter().map(|c| c.name).collect()
}

fn sigmoid(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

const SCHOOL_STREAM: u64 = u64::MAX;

fn region_of(rng: &mut ChaCha8Rng, cfg: &SynthConfig) -> RegionCode {
    if let Some(m) = cfg.metro_region {
        if rng.random::<f64>() < cfg.metro_share {
            return m;
        }
        let r = rng.random_range(1..cfg.n_regions);
        if r >= m {
            r + 1
        } else {
            r
        }
    } else {
        rng.random_range(1..=cfg.n_regions)
    }
}

fn build_schools(cfg: &SynthConfig) -> Vec<Vec<School>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(SCHOOL_STREAM);
    let mut per_region: Vec<Vec<School>> = vec![Vec::new(); usize::from(cfg.n_regions) + 1];
    // every region gets at least one school
    for r in 1..=cfg.n_regions {
        per_region[usize::from(r)].push(School {
            id: String::new(),
            quality: 0.0,
        });
    }
    for _ in usize::from(cfg.n_regions)..cfg.n_schools {
        let r = region_of(&mut rng, cfg);
        per_region[usize::from(r)].push(School {
            id: String::new(),
            quality: 0.0,
        });
    }
    let mut next_id = 1usize;
    for schools in per_region.iter_mut() {
        let m = schools.len();
        for (k, s) in schools.iter_mut().enumerate() {
            s.quality = (k as f64 + 0.5) / m as f64;
            s.id = format!("{}", 10_000 + next_id);
            next_id += 1;
        }
    }
    per_region
}

fn nearest_school(schools: &[School], q: f64) -> &School {
    let i = schools.partition_point(|s| s.quality < q);
    match (i.checked_sub(1), schools.get(i)) {
        (Some(lo), Some(hi)) if (q - schools[lo].quality) <= (hi.quality - q) => &schools[lo],
        (_, Some(hi)) => hi,
        (Some(lo), None) => &schools[lo],
        (None, None) => unreachable!("regions always have a school"),
    }
}

fn pick_career(rng: &mut ChaCha8Rng, performance: f64, ses: f64) -> &'static Career {
    // Gumbel-max draw from a softmax over career affinities
    let mut best = (f64::NEG_INFINITY, &CAREERS[0]);
    for c in &CAREERS {
        let u: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
        let score = c.base + c.performance * performance + c.ses * ses - (-u.ln()).ln();
        if score > best.0 {
            best = (score, c);
        }
    }
    best.1
}

struct Student {
    secondary: SecondaryRecord,
    enrollment: Option<EnrollmentRecord>,
    cluster: usize,
    performance: f64,
    ses: f64,
    probability: f64,
    planted: [f64; 6],
}

fn mixture_means(components: &[ClusterSpec], separation: f64) -> Vec<[f64; 6]> {
    let mut centre = [0.0; 6];
    for c in components {
        for (acc, m) in centre.iter_mut().zip(c.mean) {
            *acc += c.weight * m;
        }
    }
    components
        .iter()
        .map(|c| std::array::from_fn(|j| centre[j] + separation * (c.mean[j] - centre[j])))
        .collect()
}

fn draw_student(i: usize, cfg: &SynthConfig, means: &[[f64; 6]], schools: &[Vec<School>]) -> Student {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(i as u64);
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };

    let (cluster, planted, performance, ses) = match &cfg.structure {
        Structure::Mixture { components } => {
            // reuse the first normal as the uniform for the component draw
            let u = normal_cdf(normal());
            let mut acc = 0.0;
            let mut cluster = components.len() - 1;
            for (c, comp) in components.iter().enumerate() {
                acc += comp.weight;
                if u < acc {
                    cluster = c;
                    break;
                }
            }
            let sd = components[cluster].sd;
            let x: [f64; 6] = std::array::from_fn(|j| (means[cluster][j] + sd * normal()).clamp(0.0, 1.0));
            let perf = (x[0] + x[1] + x[2]) / 3.0;
            (cluster, x, perf, x[5])
        }
        Structure::TwoFactor { noise } => {
            let f = normal();
            let g = normal();
            let scale = (1.0 + noise * noise).sqrt();
            let mut x = [0.0; 6];
            for v in x.iter_mut().take(5) {
                *v = normal_cdf((f + noise * normal()) / scale);
            }
            x[5] = normal_cdf(g);
            (0, x, f, g)
        }
    };

    let id = format!("{:08}", i + 1);
    let cohort_year = cfg.cohort_years[i % cfg.cohort_years.len()];
    let home = region_of(&mut rng, cfg);
    let jitter: f64 = StandardNormal.sample(&mut rng);
    let school_q = (0.5 * (planted[3] + planted[4]) + 0.02 * jitter).clamp(0.0, 1.0);
    let school = nearest_school(&schools[usize::from(home)], school_q);

    let round = |v: f64, d: i32| (v * 10f64.powi(d)).round() / 10f64.powi(d);
    let secondary = SecondaryRecord {
        student_id: id.clone(),
        cohort_year,
        home_region: home,
        school_id: school.id.clone(),
        math_score: Some(round(150.0 + 700.0 * planted[1], 1)),
        reading_score: Some(round(150.0 + 700.0 * planted[0], 1)),
        gpa: Some(round(4.0 + 3.0 * planted[2], 2)),
        family_income: Some((cfg.income_base * (cfg.income_spread * planted[5]).exp()).round()),
    };

    let m = &cfg.migration;
    let eta = m.intercept
        + m.coefficients.iter().zip(&planted).map(|(b, x)| b * x).sum::<f64>()
        + m.cluster_offsets.get(cluster).copied().unwrap_or(0.0);
    let probability = sigmoid(eta);

    let enrollment = (rng.random::<f64>() < cfg.enroll_rate).then(|| {
        let migrate = rng.random::<f64>() < probability;
        let campus = if migrate {
            let mut others: Vec<(RegionCode, f64)> = (1..=cfg.n_regions)
                .filter(|&r| r != home)
                .map(|r| (r, if Some(r) == cfg.metro_region { 4.0 } else { 1.0 }))
                .collect();
            let total: f64 = others.iter().map(|o| o.1).sum();
            let mut u = rng.random::<f64>() * total;
            let mut pick = others.last().map(|o| o.0).unwrap_or(home);
            for (r, w) in others.drain(..) {
                if u < w {
                    pick = r;
                    break;
                }
                u -= w;
            }
            pick
        } else {
            home
        };
        let career = pick_career(&mut rng, performance.clamp(-3.0, 3.0), planted[5]);
        let delay = u8::from(rng.random::<f64>() < 0.15);
        EnrollmentRecord {
            student_id: id.clone(),
            enroll_year: cohort_year + i32::from(delay),
            institution_id: format!("U{campus:02}{}", u8::from(career.level == DegreeLevel::Technical)),
            campus_region: campus,
            career_name: career.name.to_string(),
            career_area: career.area.to_string(),
            degree_level: career.level,
        }
    });

    Student {
        secondary,
        enrollment,
        cluster,
        performance,
        ses,
        probability,
        planted,
    }
}

/// Draw a full synthetic cohort.
pub fn generate(cfg: &SynthConfig) -> Result<SynthOutput, SynthError> {
    cfg.validate()?;
    let means = match &cfg.structure {
        Structure::Mixture { components } => mixture_means(components, cfg.separation),
        Structure::TwoFactor { .. } => Vec::new(),
    };
    let schools = build_schools(cfg);
    let students: Vec<Student> = (0..cfg.n_students)
        .into_par_iter()
        .map(|i| draw_student(i, cfg, &means, &schools))
        .collect();

    let mut out = SynthOutput {
        secondary: Vec::with_capacity(students.len()),
        enrollment: Vec::new(),
        truth: GroundTruth {
            student_id: Vec::with_capacity(students.len()),
            cluster: Vec::with_capacity(students.len()),
            cluster_names: cfg.component_names(),
            performance: Vec::with_capacity(students.len()),
            ses: Vec::with_capacity(students.len()),
            migration_probability: Vec::with_capacity(students.len()),
            planted: Vec::with_capacity(students.len()),
        },
    };
    for s in students {
        out.truth.student_id.push(s.secondary.student_id.clone());
        out.truth.cluster.push(s.cluster);
        out.truth.performance.push(s.performance);
        out.truth.ses.push(s.ses);
        out.truth.migration_probability.push(s.probability);
        out.truth.planted.push(s.planted);
        out.secondary.push(s.secondary);
        if let Some(e) = s.enrollment {
            out.enrollment.push(e);
        }
    }
    Ok(out)
}

pub fn write_ground_truth<W: Write>(writer: W, truth: &GroundTruth) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "student_id",
        "cluster",
        "cluster_name",
        "performance",
        "ses",
        "migration_probability",
    ])?;
    for i in 0..truth.student_id.len() {
        let c = truth.cluster[i];
        w.write_record([
            truth.student_id[i].clone(),
            c.to_string(),
            truth.cluster_names[c].clone(),
            crate::features::sig9(truth.performance[i]),
            crate::features::sig9(truth.ses[i]),
            crate::features::sig9(truth.migration_probability[i]),
        ])?;
    }
    w.flush()?;
    Ok(())
}
