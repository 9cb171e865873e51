use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::design::Design;
use super::RegressionError;

const SATURATION: f64 = 1e-10;
const MAX_HALVINGS: usize = 40;
/// Consecutive iterations of coefficient-norm growth that count as divergence.
const DIVERGENCE_RUN: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogitOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for LogitOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitFit {
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub z_values: Vec<f64>,
    pub p_values: Vec<f64>,
    pub log_likelihood: f64,
    pub null_log_likelihood: f64,
    pub pseudo_r2: f64,
    pub n_observations: usize,
    pub iterations: usize,
    pub converged: bool,
    /// Infinity norm of the score divided by `n`.
    pub gradient_norm: f64,
    /// Log-likelihood at the start and after every accepted step.
    pub ll_trace: Vec<f64>,
}

impl LogitFit {
    pub fn coefficient(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.coefficients[i])
    }

    pub fn std_error(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.std_errors[i])
    }

    pub fn p_value(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.p_values[i])
    }
}

/// `log(1 + e^t)` without overflow.
fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

fn linear_predictor(x: ArrayView2<f64>, beta: &[f64]) -> Array1<f64> {
    x.dot(&Array1::from(beta.to_vec()))
}

/// Bernoulli log-likelihood at `beta`.
pub fn log_likelihood(x: ArrayView2<f64>, y: &[f64], beta: &[f64]) -> f64 {
    linear_predictor(x, beta)
        .iter()
        .zip(y)
        .map(|(&eta, &yi)| yi * eta - softplus(eta))
        .sum()
}

/// Gradient of the log-likelihood, `X'(y - p)`.
pub fn score(x: ArrayView2<f64>, y: &[f64], beta: &[f64]) -> Vec<f64> {
    let resid: Array1<f64> = linear_predictor(x, beta)
        .iter()
        .zip(y)
        .map(|(&eta, &yi)| yi - sigmoid(eta))
        .collect();
    x.t().dot(&resid).to_vec()
}

/// Observed information, `X' diag(p(1-p)) X`.
pub fn information(x: ArrayView2<f64>, beta: &[f64]) -> Array2<f64> {
    let eta = linear_predictor(x, beta);
    let mut xw = x.to_owned();
    for (mut row, &e) in xw.rows_mut().into_iter().zip(eta.iter()) {
        let p = sigmoid(e);
        row *= p * (1.0 - p);
    }
    x.t().dot(&xw)
}

/// Log-likelihood of the intercept-only model.
pub fn null_log_likelihood(y: &[f64]) -> f64 {
    let n = y.len() as f64;
    let k: f64 = y.iter().sum();
    let mut ll = 0.0;
    if k > 0.0 {
        ll += k * (k / n).ln();
    }
    if k < n {
        ll += (n - k) * ((n - k) / n).ln();
    }
    ll
}

/// McFadden's pseudo R-squared.
pub fn pseudo_r2(fit: &LogitFit) -> f64 {
    if fit.null_log_likelihood == 0.0 {
        return 0.0;
    }
    1.0 - fit.log_likelihood / fit.null_log_likelihood
}

fn to_nalgebra(m: &Array2<f64>) -> DMatrix<f64> {
    let (r, c) = m.dim();
    DMatrix::from_fn(r, c, |i, j| m[[i, j]])
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|b| b * b).sum::<f64>().sqrt()
}

fn saturated(x: ArrayView2<f64>, beta: &[f64]) -> bool {
    linear_predictor(x, beta).iter().any(|&eta| {
        let p = sigmoid(eta);
        !(SATURATION..=1.0 - SATURATION).contains(&p)
    })
}

/// Maximum-likelihood logit fit by Newton's method with step halving,
/// starting from zero.
pub fn fit_logit(
    x: ArrayView2<f64>,
    y: &[f64],
    names: &[String],
    options: &LogitOptions,
) -> Result<LogitFit, RegressionError> {
    let (n, p) = x.dim();
    if y.len() != n {
        return Err(RegressionError::LengthMismatch { rows: n, len: y.len() });
    }
    if n <= p {
        return Err(RegressionError::TooFewObservations { n, p });
    }
    let positives = y.iter().filter(|&&v| v > 0.5).count();
    if positives == 0 || positives == n {
        return Err(RegressionError::SingleClass);
    }

    let mut beta = vec![0.0; p];
    let mut ll = log_likelihood(x, y, &beta);
    let mut norms = vec![0.0];
    let mut ll_trace = vec![ll];
    let mut converged = false;
    let mut iterations = 0;

    while iterations < options.max_iter {
        iterations += 1;
        let g = DVector::from_vec(score(x, y, &beta));
        let info = to_nalgebra(&information(x, &beta));
        let chol = info.cholesky().ok_or_else(|| {
            if saturated(x, &beta) {
                RegressionError::Separation
            } else {
                RegressionError::SingularInformation
            }
        })?;
        let step = chol.solve(&g);

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let cand: Vec<f64> = beta.iter().zip(step.iter()).map(|(b, s)| b + t * s).collect();
            let cand_ll = log_likelihood(x, y, &cand);
            // rounding noise in the sum must not veto a converging step
            if cand_ll >= ll - 8.0 * f64::EPSILON * ll.abs() {
                accepted = Some((cand, cand_ll));
                break;
            }
            t *= 0.5;
        }
        let Some((next, next_ll)) = accepted else {
            // no ascent direction left at machine precision
            converged = true;
            break;
        };
        let change = (next_ll - ll).abs() / ll.abs().max(f64::MIN_POSITIVE);
        beta = next;
        ll = next_ll;
        ll_trace.push(ll);
        norms.push(norm(&beta));

        if change < options.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        if saturated(x, &beta) {
            return Err(RegressionError::Separation);
        }
        return Err(RegressionError::NotConverged(iterations));
    }
    let run = norms.len();
    let diverging = run > DIVERGENCE_RUN
        && norms[run - DIVERGENCE_RUN - 1..]
            .windows(2)
            .all(|w| w[1] > w[0] * (1.0 + 1e-3));
    if diverging && saturated(x, &beta) {
        return Err(RegressionError::Separation);
    }

    let info = to_nalgebra(&information(x, &beta));
    let cov = info.cholesky().ok_or(RegressionError::SingularInformation)?.inverse();
    let std_errors: Vec<f64> = (0..p).map(|j| cov[(j, j)].sqrt()).collect();
    if std_errors.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(RegressionError::SingularInformation);
    }
    let z_values: Vec<f64> = beta.iter().zip(&std_errors).map(|(b, s)| b / s).collect();
    let p_values = z_values
        .iter()
        .map(|z| libm::erfc(z.abs() / std::f64::consts::SQRT_2))
        .collect();
    let g = score(x, y, &beta);
    let gradient_norm = g.iter().fold(0.0f64, |m, v| m.max(v.abs())) / n as f64;

    let names = if names.len() == p {
        names.to_vec()
    } else {
        (0..p).map(|j| format!("x{j}")).collect()
    };
    let mut fit = LogitFit {
        names,
        coefficients: beta,
        std_errors,
        z_values,
        p_values,
        log_likelihood: ll,
        null_log_likelihood: null_log_likelihood(y),
        pseudo_r2: 0.0,
        n_observations: n,
        iterations,
        converged,
        gradient_norm,
        ll_trace,
    };
    fit.pseudo_r2 = pseudo_r2(&fit);
    Ok(fit)
}

impl Design {
    pub fn fit(&self, options: &LogitOptions) -> Result<LogitFit, RegressionError> {
        fit_logit(self.matrix.view(), &self.response, &self.column_names, options)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn names(p: usize) -> Vec<String> {
        (0..p).map(|j| format!("b{j}")).collect()
    }

    #[test]
    fn symmetric_data_gives_zero_coefficients() {
        let x = array![[1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [1.0, 1.0]];
        let y = [0.0, 1.0, 0.0, 1.0];
        let fit = fit_logit(x.view(), &y, &names(2), &LogitOptions::default()).unwrap();
        assert!(fit.coefficients.iter().all(|b| b.abs() < 1e-12));
        assert!(fit.pseudo_r2.abs() < 1e-12);
    }

    #[test]
    fn separable_data_is_rejected() {
        let xs: Vec<f64> = (0..20).map(|i| i as f64 - 9.5).collect();
        let x = Array2::from_shape_fn((20, 2), |(i, j)| if j == 0 { 1.0 } else { xs[i] });
        let y: Vec<f64> = xs.iter().map(|&v| f64::from(u8::from(v > 0.0))).collect();
        assert_eq!(
            fit_logit(x.view(), &y, &names(2), &LogitOptions::default()).unwrap_err(),
            RegressionError::Separation
        );
    }

    #[test]
    fn single_class_rejected() {
        let x = Array2::from_shape_fn((10, 2), |(i, j)| if j == 0 { 1.0 } else { i as f64 });
        assert_eq!(
            fit_logit(x.view(), &[1.0; 10], &names(2), &LogitOptions::default()).unwrap_err(),
            RegressionError::SingleClass
        );
    }

    #[test]
    fn too_few_observations() {
        let x = Array2::ones((2, 2));
        assert_eq!(
            fit_logit(x.view(), &[0.0, 1.0], &names(2), &LogitOptions::default()).unwrap_err(),
            RegressionError::TooFewObservations { n: 2, p: 2 }
        );
    }

    #[test]
    fn intercept_only_model_recovers_log_odds() {
        let x = Array2::ones((10, 1));
        let y = [1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let fit = fit_logit(x.view(), &y, &names(1), &LogitOptions::default()).unwrap();
        assert!((fit.coefficients[0] - (0.3f64 / 0.7).ln()).abs() < 1e-9, "{fit:?}");
        assert!(fit.pseudo_r2.abs() < 1e-12);
        assert!((fit.log_likelihood - fit.null_log_likelihood).abs() < 1e-12);
    }

    #[test]
    fn strong_signal_gives_pseudo_r2_near_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 4000;
        let xs: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = xs
            .iter()
            .map(|&v| f64::from(u8::from(rng.random::<f64>() < sigmoid(40.0 * v))))
            .collect();
        let x = Array2::from_shape_fn((n, 2), |(i, j)| if j == 0 { 1.0 } else { xs[i] });
        let fit = fit_logit(x.view(), &y, &names(2), &LogitOptions::default()).unwrap();
        assert!(fit.pseudo_r2 > 0.85, "{}", fit.pseudo_r2);
        assert!(fit.pseudo_r2 <= 1.0);
    }

    #[test]
    fn optimum_has_small_gradient_and_positive_definite_information() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 2000;
        let x = Array2::from_shape_fn((n, 4), |(_, j)| if j == 0 { 1.0 } else { rng.random::<f64>() });
        let truth = [-0.5, 1.0, -2.0, 0.5];
        let y: Vec<f64> = (0..n)
            .map(|i| {
                let eta: f64 = (0..4).map(|j| x[[i, j]] * truth[j]).sum();
                f64::from(u8::from(rng.random::<f64>() < sigmoid(eta)))
            })
            .collect();
        let fit = fit_logit(x.view(), &y, &names(4), &LogitOptions::default()).unwrap();
        assert!(fit.gradient_norm < 1e-6);
        assert!(fit.ll_trace.windows(2).all(|w| w[1] >= w[0] - 1e-12 * w[0].abs()));
        let eig = to_nalgebra(&information(x.view(), &fit.coefficients)).symmetric_eigenvalues();
        assert!(eig.iter().all(|&e| e > 0.0));
        assert!(fit.std_errors.iter().all(|&s| s > 0.0));
        assert!(fit.p_values.iter().all(|&p| (0.0..=1.0).contains(&p)));
    }

    #[test]
    fn softplus_matches_naive_form_in_safe_range() {
        for t in [-30.0, -2.0, 0.0, 1.5, 30.0] {
            assert!((softplus(t) - (1.0f64 + f64::exp(t)).ln()).abs() < 1e-12);
        }
        assert!((softplus(800.0) - 800.0).abs() < 1e-12);
        assert!(softplus(-800.0) >= 0.0);
    }
}
