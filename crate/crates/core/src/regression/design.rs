use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::RegressionError;
use crate::clustering::Archetype;

/// Row labels of the six covariates, in feature order.
pub const COVARIATE_NAMES: [&str; 6] = [
    "Language Percentile",
    "Math Percentile",
    "GPA Percentile",
    "Language School Percentile",
    "Math School Percentile",
    "Family Income",
];

const LANG: usize = 0;
const MATH: usize = 1;
const INCOME: usize = 5;

/// Product of scaled feature columns. A single factor is a main effect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub name: String,
    pub factors: Vec<usize>,
}

impl Term {
    pub fn main(feature: usize) -> Self {
        Self {
            name: COVARIATE_NAMES[feature].to_string(),
            factors: vec![feature],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalingMode {
    /// Min-max over the rows handed to [`build_design`].
    MinMaxSample,
    /// Min-max with externally supplied `(min, max)` per feature.
    MinMaxBounds(Vec<(f64, f64)>),
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignSpec {
    /// 1..=5 for the standard ladder, 0 for custom designs.
    pub model_id: u8,
    pub terms: Vec<Term>,
    pub cluster_effects: bool,
    /// Every cluster level; dummies are made for all but `baseline`.
    pub cluster_levels: Vec<String>,
    pub baseline: String,
    pub scaling: ScalingMode,
}

impl DesignSpec {
    /// The standard model ladder:
    /// 1 main effects, 2 adds cluster dummies, 3 adds language x math,
    /// 4 adds income x language x math, 5 adds both interactions.
    pub fn model(model_id: u8, baseline: &str) -> Result<Self, RegressionError> {
        let mut terms: Vec<Term> = (0..6).map(Term::main).collect();
        let lang_math = Term {
            name: "Language × Math".into(),
            factors: vec![LANG, MATH],
        };
        let triple = Term {
            name: "Family Income × Language × Math".into(),
            factors: vec![INCOME, LANG, MATH],
        };
        match model_id {
            1 | 2 => {}
            3 => terms.push(lang_math),
            4 => terms.push(triple),
            5 => {
                terms.push(lang_math);
                terms.push(triple);
            }
            other => return Err(RegressionError::UnknownModel(other)),
        }
        Ok(Self {
            model_id,
            terms,
            cluster_effects: model_id >= 2,
            cluster_levels: Archetype::ALL.iter().map(|a| a.name().to_string()).collect(),
            baseline: baseline.to_string(),
            scaling: ScalingMode::MinMaxSample,
        })
    }

    pub fn with_levels(mut self, levels: Vec<String>) -> Self {
        self.cluster_levels = levels;
        self
    }

    pub fn with_scaling(mut self, scaling: ScalingMode) -> Self {
        self.scaling = scaling;
        self
    }

    /// Cluster levels that get a dummy column, sorted by name.
    pub fn dummy_levels(&self) -> Vec<String> {
        if !self.cluster_effects {
            return Vec::new();
        }
        let mut levels: Vec<String> = self
            .cluster_levels
            .iter()
            .filter(|l| !l.eq_ignore_ascii_case(&self.baseline))
            .cloned()
            .collect();
        levels.sort();
        levels.dedup();
        levels
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub matrix: Array2<f64>,
    pub response: Vec<f64>,
    /// `"Intercept"` first, then terms, then cluster dummies.
    pub column_names: Vec<String>,
    /// `(min, max)` used to scale each feature.
    pub scaling: Vec<(f64, f64)>,
}

/// Modified Gram-Schmidt; returns the first column whose residual norm is
/// negligible relative to its own norm.
fn first_dependent_column(m: &Array2<f64>) -> Option<usize> {
    let (_, p) = m.dim();
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(p);
    for j in 0..p {
        let mut v: Vec<f64> = m.column(j).to_vec();
        let norm0 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm0 == 0.0 {
            return Some(j);
        }
        for q in &basis {
            let dot: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(q).for_each(|(a, b)| *a -= dot * b);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm <= 1e-9 * norm0 {
            return Some(j);
        }
        v.iter_mut().for_each(|x| *x /= norm);
        basis.push(v);
    }
    None
}

/// Assemble the design matrix for one model.
///
/// `features` are the six covariates per observation, `clusters` their
/// cluster label (empty means missing) and `migrated` the response.
pub fn build_design(
    features: &[[f64; 6]],
    clusters: &[String],
    migrated: &[bool],
    spec: &DesignSpec,
) -> Result<Design, RegressionError> {
    let n = features.len();
    if migrated.len() != n {
        return Err(RegressionError::LengthMismatch {
            rows: n,
            len: migrated.len(),
        });
    }
    if spec.cluster_effects {
        if clusters.len() != n {
            return Err(RegressionError::LengthMismatch {
                rows: n,
                len: clusters.len(),
            });
        }
        if let Some(i) = clusters.iter().position(|c| c.is_empty()) {
            return Err(RegressionError::MissingCluster(i));
        }
    }

    let scaling: Vec<(f64, f64)> = match &spec.scaling {
        ScalingMode::MinMaxSample => (0..6)
            .map(|j| {
                features.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), f| {
                    (lo.min(f[j]), hi.max(f[j]))
                })
            })
            .collect(),
        ScalingMode::MinMaxBounds(b) => b.clone(),
        ScalingMode::Identity => vec![(0.0, 1.0); 6],
    };
    let scale = |x: f64, (lo, hi): (f64, f64)| if hi > lo { (x - lo) / (hi - lo) } else { 0.5 };

    let dummies = spec.dummy_levels();
    let mut column_names = vec!["Intercept".to_string()];
    column_names.extend(spec.terms.iter().map(|t| t.name.clone()));
    column_names.extend(dummies.iter().cloned());
    let p = column_names.len();

    let mut matrix = Array2::zeros((n, p));
    for (i, f) in features.iter().enumerate() {
        let scaled: [f64; 6] = std::array::from_fn(|j| scale(f[j], scaling[j]));
        let mut row = matrix.row_mut(i);
        row[0] = 1.0;
        for (t, term) in spec.terms.iter().enumerate() {
            row[1 + t] = term.factors.iter().map(|&j| scaled[j]).product();
        }
        for (d, level) in dummies.iter().enumerate() {
            if clusters[i].eq_ignore_ascii_case(level) {
                row[1 + spec.terms.len() + d] = 1.0;
            }
        }
    }
    if let Some(j) = first_dependent_column(&matrix) {
        return Err(RegressionError::CollinearColumn(column_names[j].clone()));
    }
    Ok(Design {
        matrix,
        response: migrated.iter().map(|&m| f64::from(u8::from(m))).collect(),
        column_names,
        scaling,
    })
}
