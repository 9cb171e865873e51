//! Rule table mapping seven centroids to archetype names.
//!
//! Composites per centroid: academic `A = mean(lang, math, gpa)`, school
//! `Q = mean(school_lang, school_math)`, income `I`. Rules are applied in
//! order, each one choosing among the centroids not yet named:
//!
//! 1. Achievers: highest `A` among centroids with `I >= median(I)`.
//! 2. Strivers: highest `A` among those with `I < median(I)`.
//! 3. Disadvantaged: lowest `A + I`.
//! 4. Atypical: largest `gpa - mean(lang, math)`.
//! 5. Privileged: highest `I` among the centroids whose `A` is above the
//!    lowest remaining `A`.
//! 6. Challenged: largest `Q - I`.
//! 7. Resilient: the one left.

use std::fmt;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use super::ClusterError;

pub const ARCHETYPE_RULES_VERSION: &str = "archetype-rules/1";

const TIE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Archetype {
    Achievers,
    Strivers,
    Atypical,
    Privileged,
    Challenged,
    Resilient,
    Disadvantaged,
}

impl Archetype {
    pub const ALL: [Archetype; 7] = [
        Archetype::Achievers,
        Archetype::Strivers,
        Archetype::Atypical,
        Archetype::Privileged,
        Archetype::Challenged,
        Archetype::Resilient,
        Archetype::Disadvantaged,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Archetype::Achievers => "Achievers",
            Archetype::Strivers => "Strivers",
            Archetype::Atypical => "Atypical",
            Archetype::Privileged => "Privileged",
            Archetype::Challenged => "Challenged",
            Archetype::Resilient => "Resilient",
            Archetype::Disadvantaged => "Disadvantaged",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.name().eq_ignore_ascii_case(s.trim()))
    }
}

impl fmt::Display for Archetype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Archetype for each cluster index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchetypeLabel {
    pub labels: Vec<Archetype>,
    pub rules_version: String,
}

impl ArchetypeLabel {
    pub fn cluster_of(&self, a: Archetype) -> Option<usize> {
        self.labels.iter().position(|&l| l == a)
    }
}

struct Composite {
    academic: f64,
    school: f64,
    income: f64,
    gpa_gap: f64,
}

/// Pick the maximizer of `score` over `pool`, failing on a near tie.
fn pick_max(rule: &'static str, pool: &[usize], score: impl Fn(usize) -> f64) -> Result<usize, ClusterError> {
    let mut ranked: Vec<(usize, f64)> = pool.iter().map(|&i| (i, score(i))).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    match ranked.as_slice() {
        [] => Err(ClusterError::WrongClusterCount(0)),
        [(only, _)] => Ok(*only),
        [(first, s1), (second, s2), ..] => {
            if (s1 - s2).abs() <= TIE_EPS {
                Err(ClusterError::AmbiguousLabeling {
                    rule,
                    first: *first,
                    second: *second,
                })
            } else {
                Ok(*first)
            }
        }
    }
}

pub fn label_archetypes(centroids: ArrayView2<'_, f64>) -> Result<ArchetypeLabel, ClusterError> {
    if centroids.nrows() != 7 {
        return Err(ClusterError::WrongClusterCount(centroids.nrows()));
    }
    if centroids.ncols() != 6 {
        return Err(ClusterError::ShapeMismatch(format!(
            "centroids need 6 feature columns, got {}",
            centroids.ncols()
        )));
    }
    let comp: Vec<Composite> = centroids
        .rows()
        .into_iter()
        .map(|c| Composite {
            academic: (c[0] + c[1] + c[2]) / 3.0,
            school: (c[3] + c[4]) / 2.0,
            income: c[5],
            gpa_gap: c[2] - (c[0] + c[1]) / 2.0,
        })
        .collect();

    let mut incomes: Vec<f64> = comp.iter().map(|c| c.income).collect();
    incomes.sort_by(f64::total_cmp);
    let median_income = incomes[3];

    let mut labels: Vec<Option<Archetype>> = vec![None; 7];
    let mut remaining: Vec<usize> = (0..7).collect();
    let mut assign = |idx: usize, a: Archetype, remaining: &mut Vec<usize>| {
        labels[idx] = Some(a);
        remaining.retain(|&i| i != idx);
    };

    let rich: Vec<usize> = remaining
        .iter()
        .copied()
        .filter(|&i| comp[i].income >= median_income)
        .collect();
    let achievers = pick_max("achievers", &rich, |i| comp[i].academic)?;
    assign(achievers, Archetype::Achievers, &mut remaining);

    let poor: Vec<usize> = remaining
        .iter()
        .copied()
        .filter(|&i| comp[i].income < median_income)
        .collect();
    let strivers = pick_max("strivers", &poor, |i| comp[i].academic)?;
    assign(strivers, Archetype::Strivers, &mut remaining);

    let disadvantaged = pick_max("disadvantaged", &remaining, |i| -(comp[i].academic + comp[i].income))?;
    assign(disadvantaged, Archetype::Disadvantaged, &mut remaining);

    let atypical = pick_max("atypical", &remaining, |i| comp[i].gpa_gap)?;
    assign(atypical, Archetype::Atypical, &mut remaining);

    let min_a = remaining
        .iter()
        .map(|&i| comp[i].academic)
        .fold(f64::INFINITY, f64::min);
    let mid: Vec<usize> = remaining
        .iter()
        .copied()
        .filter(|&i| comp[i].academic > min_a + TIE_EPS)
        .collect();
    let privileged = pick_max("privileged", &mid, |i| comp[i].income)?;
    assign(privileged, Archetype::Privileged, &mut remaining);

    let challenged = pick_max("challenged", &remaining, |i| comp[i].school - comp[i].income)?;
    assign(challenged, Archetype::Challenged, &mut remaining);

    let resilient = remaining[0];
    assign(resilient, Archetype::Resilient, &mut remaining);

    Ok(ArchetypeLabel {
        labels: labels.into_iter().map(|l| l.expect("all labeled")).collect(),
        rules_version: ARCHETYPE_RULES_VERSION.to_string(),
    })
}
