//! k-means partitioning of the feature space, validation curves for choosing
//! k, and archetype naming of the resulting centroids.

mod archetype;
mod kmeans;
mod validation;

use thiserror::Error;

pub use archetype::{label_archetypes, Archetype, ArchetypeLabel, ARCHETYPE_RULES_VERSION};
pub use kmeans::{kmeans, objective, ClusterModel, KMeansParams};
pub use validation::{knee_point, scan_k, silhouette, ValidationCurve};

#[derive(Debug, Error, PartialEq)]
pub enum ClusterError {
    #[error("need at least k = {k} points, got {n}")]
    TooFewPoints { n: usize, k: usize },
    #[error("k must be at least 1")]
    InvalidK,
    #[error("input contains non-finite values")]
    NonFinite,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("silhouette needs at least two non-empty clusters")]
    SingleCluster,
    #[error("archetype labeling needs exactly 7 centroids, got {0}")]
    WrongClusterCount(usize),
    #[error("ambiguous archetype labeling at rule `{rule}`: clusters {first} and {second} tie")]
    AmbiguousLabeling {
        rule: &'static str,
        first: usize,
        second: usize,
    },
}

/// Rows per work unit for parallel passes.
pub(crate) const CHUNK_ROWS: usize = 2048;

#[inline]
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
