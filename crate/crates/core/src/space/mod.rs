//! The two-dimensional student space: z-scored features, a principal
//! component fit, projection, and kernel density maps over the projection.

mod density;

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use density::{density_map, scott_bandwidth, Bandwidth, DensityMap, GridBounds};

#[derive(Debug, Error, PartialEq)]
pub enum SpaceError {
    #[error("need at least {needed} rows, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("column {0} is constant")]
    ConstantColumn(usize),
    #[error("covariance has rank below 2")]
    DegenerateCovariance,
    #[error("eigen residual {0:e} exceeds tolerance")]
    EigenResidual(f64),
    #[error("space model is not fitted")]
    ModelNotFitted,
    #[error("dimension mismatch: model has {model} features, input has {input}")]
    DimensionMismatch { model: usize, input: usize },
    #[error("bandwidth must be positive and finite")]
    InvalidBandwidth,
}

const EIGEN_RESIDUAL_TOL: f64 = 1e-8;

/// Per-column mean and population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl Standardizer {
    pub fn transform(&self, features: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut z = features.to_owned();
        for (j, mut col) in z.axis_iter_mut(Axis(1)).enumerate() {
            let (m, s) = (self.means[j], self.stds[j]);
            col.mapv_inplace(|x| (x - m) / s);
        }
        z
    }
}

pub fn standardize_fit(features: ArrayView2<'_, f64>) -> Result<Standardizer, SpaceError> {
    let n = features.nrows();
    if n < 2 {
        return Err(SpaceError::TooFewPoints { needed: 2, got: n });
    }
    let mut means = Vec::with_capacity(features.ncols());
    let mut stds = Vec::with_capacity(features.ncols());
    for (j, col) in features.axis_iter(Axis(1)).enumerate() {
        let mean = col.sum() / n as f64;
        let var = col.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
        let std = var.sqrt();
        if std <= 1e-12 * mean.abs().max(1.0) {
            return Err(SpaceError::ConstantColumn(j));
        }
        means.push(mean);
        stds.push(std);
    }
    Ok(Standardizer { means, stds })
}

/// Which loadings fix the arbitrary eigenvector signs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Orientation {
    /// PC1 is flipped so that these loadings sum to a negative value.
    pub performance_columns: Vec<usize>,
    /// PC2 is flipped so that this loading is positive.
    pub ses_column: usize,
}

impl Default for Orientation {
    fn default() -> Self {
        Self {
            performance_columns: vec![0, 1, 2],
            ses_column: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpaceModel {
    pub scaler: Standardizer,
    /// `2 x d` loadings, one component per row.
    pub components: Vec<Vec<f64>>,
    /// Every eigenvalue of the covariance of the z-scored data, descending.
    pub eigenvalues: Vec<f64>,
    /// Share of variance for each eigenvalue; sums to 1.
    pub variance_ratios: Vec<f64>,
    /// Multiplier applied to the solver's eigenvector for PC1 and PC2.
    pub signs: [i8; 2],
}

impl SpaceModel {
    pub fn explained_variance_ratio(&self) -> [f64; 2] {
        [self.variance_ratios[0], self.variance_ratios[1]]
    }

    pub fn dim(&self) -> usize {
        self.scaler.means.len()
    }
}

/// Population covariance of already centred columns.
fn covariance(z: ArrayView2<'_, f64>) -> DMatrix<f64> {
    let n = z.nrows() as f64;
    let d = z.ncols();
    let zt_z = z.t().dot(&z);
    DMatrix::from_fn(d, d, |i, j| zt_z[[i, j]] / n)
}

/// Principal components of z-scored features.
pub fn pca_fit(
    standardized: ArrayView2<'_, f64>,
    scaler: Standardizer,
    orientation: &Orientation,
) -> Result<SpaceModel, SpaceError> {
    let (n, d) = standardized.dim();
    if n < d.max(2) {
        return Err(SpaceError::TooFewPoints {
            needed: d.max(2),
            got: n,
        });
    }
    if d < 2 {
        return Err(SpaceError::DegenerateCovariance);
    }
    let cov = covariance(standardized);
    let eig = SymmetricEigen::new(cov.clone());
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));

    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let trace: f64 = eigenvalues.iter().sum();
    if trace <= 0.0 || eigenvalues[1] <= 1e-12 * trace {
        return Err(SpaceError::DegenerateCovariance);
    }
    let variance_ratios: Vec<f64> = eigenvalues.iter().map(|l| l / trace).collect();

    let mut components = Vec::with_capacity(2);
    let mut signs = [1i8; 2];
    for (pc, &idx) in order.iter().take(2).enumerate() {
        let v = eig.eigenvectors.column(idx);
        let lambda = eig.eigenvalues[idx];
        let residual = (&cov * v - v * lambda).norm();
        if residual > EIGEN_RESIDUAL_TOL {
            return Err(SpaceError::EigenResidual(residual));
        }
        let norm = v.norm();
        let mut load: Vec<f64> = v.iter().map(|x| x / norm).collect();
        let flip = if pc == 0 {
            orientation.performance_columns.iter().map(|&j| load[j]).sum::<f64>() > 0.0
        } else {
            load[orientation.ses_column] < 0.0
        };
        if flip {
            load.iter_mut().for_each(|x| *x = -*x);
            signs[pc] = -1;
        }
        components.push(load);
    }
    Ok(SpaceModel {
        scaler,
        components,
        eigenvalues,
        variance_ratios,
        signs,
    })
}

/// Standardize and fit in one step.
pub fn fit_space(features: ArrayView2<'_, f64>, orientation: &Orientation) -> Result<SpaceModel, SpaceError> {
    let scaler = standardize_fit(features)?;
    let z = scaler.transform(features);
    pca_fit(z.view(), scaler, orientation)
}

/// `n x 2` coordinates: z-scored features times the loadings.
pub fn project(model: &SpaceModel, features: ArrayView2<'_, f64>) -> Result<Array2<f64>, SpaceError> {
    if model.components.len() != 2 || model.components.iter().any(|c| c.len() != model.dim()) {
        return Err(SpaceError::ModelNotFitted);
    }
    if features.ncols() != model.dim() {
        return Err(SpaceError::DimensionMismatch {
            model: model.dim(),
            input: features.ncols(),
        });
    }
    let z = model.scaler.transform(features);
    let d = model.dim();
    let loadings = Array2::from_shape_fn((d, 2), |(j, c)| model.components[c][j]);
    Ok(z.dot(&loadings))
}
