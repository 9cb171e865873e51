//! Logistic regression of the migration indicator on student features,
//! archetype fixed effects and interaction terms.

mod design;
mod logit;
mod table;

use thiserror::Error;

pub use design::{build_design, Design, DesignSpec, ScalingMode, Term, COVARIATE_NAMES};
pub use logit::{
    fit_logit, information, log_likelihood, null_log_likelihood, pseudo_r2, score, LogitFit, LogitOptions,
};
pub use table::{model_ladder, render_csv, render_text, stars, Ladder, LadderEntry, STAR_THRESHOLDS};

#[derive(Debug, Error, PartialEq)]
pub enum RegressionError {
    #[error("model id must be in 1..=5, got {0}")]
    UnknownModel(u8),
    #[error("observation {0} has no cluster label")]
    MissingCluster(usize),
    #[error("column `{0}` is linearly dependent on earlier columns")]
    CollinearColumn(String),
    #[error("design has {rows} rows but {len} responses")]
    LengthMismatch { rows: usize, len: usize },
    #[error("need more observations ({n}) than parameters ({p})")]
    TooFewObservations { n: usize, p: usize },
    #[error("response has a single class")]
    SingleClass,
    #[error("Separation detected: fitted probabilities saturate while coefficients diverge")]
    Separation,
    #[error("information matrix is singular")]
    SingularInformation,
    #[error("no convergence after {0} iterations")]
    NotConverged(usize),
}
