//! Logistic propensity models fitted by iteratively reweighted least squares.
//!
//! Columns are centred and scaled internally before the Newton iterations and
//! coefficients are mapped back afterwards, so the reported coefficients are on
//! the scale of the supplied design matrix. Fitted probabilities are clamped
//! to `[clamp, 1 - clamp]` so that downstream inverse weights stay finite.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::design::DesignMatrix;
use crate::error::{Error, Result};
use crate::linalg::dependent_columns;

/// Default clamp applied to fitted probabilities.
pub const SCORE_CLAMP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitOptions {
    pub max_iterations: usize,
    /// Stop once the absolute deviance change falls below this.
    pub tolerance: f64,
    pub max_halvings: usize,
    pub clamp: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_iterations: 50,
            tolerance: 1e-8,
            max_halvings: 10,
            clamp: SCORE_CLAMP,
        }
    }
}

/// Result of a propensity fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropensityFit {
    pub labels: Vec<String>,
    pub coefficients: Vec<f64>,
    /// Clamped fitted probabilities, one per training row.
    pub scores: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub deviance: f64,
    /// Deviance at the start value and after every accepted iteration. The
    /// closing gradient refinement is not recorded; it moves the deviance by
    /// rounding error only.
    pub deviance_history: Vec<f64>,
    /// Set when a fitted probability lies within `clamp` of 0 or 1.
    pub separation_warning: bool,
    /// Number of training scores moved by the clamp.
    pub clamped_scores: usize,
    pub clamp: f64,
}

/// Exportable view of a fit: labelled coefficients, convergence and warnings,
/// without the per-patient scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub coefficients: Vec<Coefficient>,
    pub converged: bool,
    pub iterations: usize,
    pub deviance: f64,
    pub separation_warning: bool,
    pub clamped_scores: usize,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub term: String,
    pub estimate: f64,
}

impl PropensityFit {
    pub fn summary(&self) -> FitSummary {
        FitSummary {
            coefficients: self
                .labels
                .iter()
                .cloned()
                .zip(self.coefficients.iter().copied())
                .map(|(term, estimate)| Coefficient { term, estimate })
                .collect(),
            converged: self.converged,
            iterations: self.iterations,
            deviance: self.deviance,
            separation_warning: self.separation_warning,
            clamped_scores: self.clamped_scores,
            n: self.scores.len(),
        }
    }
}

/// Numerically stable inverse logit.
pub fn inv_logit(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// log(1 + e^x) without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Bernoulli deviance, -2 * log-likelihood, as a function of the linear predictor.
pub fn deviance(eta: &[f64], z: &[bool]) -> f64 {
    2.0 * eta
        .iter()
        .zip(z)
        .map(|(&e, &zi)| softplus(e) - if zi { e } else { 0.0 })
        .sum::<f64>()
}

pub fn fit_logistic(x: &DesignMatrix, z: &[bool]) -> Result<PropensityFit> {
    fit_logistic_with(x, z, &FitOptions::default())
}

pub fn fit_logistic_with(x: &DesignMatrix, z: &[bool], opts: &FitOptions) -> Result<PropensityFit> {
    let (n, p) = (x.nrows(), x.ncols());
    if z.len() != n {
        return Err(Error::Dimension(format!(
            "{} responses for {n} design rows",
            z.len()
        )));
    }
    let n1 = z.iter().filter(|&&zi| zi).count();
    if n1 == 0 || n1 == n {
        return Err(Error::DegenerateResponse(format!(
            "response is constant ({n1} of {n} exposed)"
        )));
    }
    if n < p {
        return Err(Error::Unestimable { n, p });
    }

    let scaled = Standardized::new(&x.matrix);
    let xs = &scaled.matrix;
    let dependent = dependent_columns(xs, None, &x.labels);
    if !dependent.is_empty() {
        return Err(Error::RankDeficient { columns: dependent });
    }

    let zf = DVector::from_iterator(n, z.iter().map(|&zi| if zi { 1.0 } else { 0.0 }));
    let mut beta = DVector::zeros(p);
    if let Some(j) = scaled.intercept {
        beta[j] = logit(n1 as f64 / n as f64);
    }
    let mut eta = xs * &beta;
    let mut dev = deviance(eta.as_slice(), z);
    let mut history = vec![dev];
    let mut converged = false;
    let mut iterations = 0;

    for iter in 1..=opts.max_iterations {
        iterations = iter;
        let (_, step) = newton_step(xs, &zf, &eta);
        let Some(delta) = step else {
            let mu = eta.map(inv_logit);
            if near_boundary(mu.as_slice(), opts.clamp) {
                break;
            }
            let w = mu.map(|m| m * (1.0 - m));
            return Err(Error::RankDeficient {
                columns: dependent_columns(xs, Some(w.as_slice()), &x.labels),
            });
        };

        let mut step = 1.0;
        let mut candidate = &beta + &delta;
        let mut cand_eta = xs * &candidate;
        let mut cand_dev = deviance(cand_eta.as_slice(), z);
        let mut halvings = 0;
        while !(cand_dev <= dev) && halvings < opts.max_halvings {
            step *= 0.5;
            halvings += 1;
            candidate = &beta + &delta * step;
            cand_eta = xs * &candidate;
            cand_dev = deviance(cand_eta.as_slice(), z);
        }
        if !(cand_dev <= dev) {
            // No descent direction left at working precision.
            converged = (cand_dev - dev).abs() < opts.tolerance;
            break;
        }
        let change = dev - cand_dev;
        beta = candidate;
        eta = cand_eta;
        dev = cand_dev;
        history.push(dev);
        if change.abs() < opts.tolerance {
            converged = true;
            break;
        }
    }

    // Near the optimum the deviance is flat to working precision, so the
    // deviance test can stop a few digits short on the score equations.
    // Full Newton steps are kept while they shrink the gradient.
    if converged {
        let (mut grad, mut step) = newton_step(xs, &zf, &eta);
        for _ in 0..3 {
            let Some(delta) = step else { break };
            let candidate = &beta + &delta;
            let cand_eta = xs * &candidate;
            let (cand_grad, cand_step) = newton_step(xs, &zf, &cand_eta);
            if !(cand_grad < grad) {
                break;
            }
            beta = candidate;
            eta = cand_eta;
            grad = cand_grad;
            step = cand_step;
        }
        dev = deviance(eta.as_slice(), z);
    }

    let coefficients = scaled.back_transform(beta.as_slice());
    let raw: Vec<f64> = (&x.matrix * DVector::from_column_slice(&coefficients))
        .iter()
        .map(|&e| inv_logit(e))
        .collect();
    let separation_warning = near_boundary(&raw, opts.clamp);
    if !converged && !separation_warning {
        return Err(Error::NonConvergence {
            iterations,
            deviance: dev,
            last_coefficients: coefficients,
        });
    }
    let (scores, clamped_scores) = clamp_scores(&raw, opts.clamp);
    Ok(PropensityFit {
        labels: x.labels.clone(),
        coefficients,
        scores,
        converged,
        iterations,
        deviance: dev,
        deviance_history: history,
        separation_warning,
        clamped_scores,
        clamp: opts.clamp,
    })
}

/// Clamped `logit⁻¹(Xβ)` for new rows.
pub fn predict_scores(fit: &PropensityFit, x: &DesignMatrix) -> Result<Vec<f64>> {
    if x.ncols() != fit.coefficients.len() {
        return Err(Error::Dimension(format!(
            "design has {} columns, fit has {} coefficients",
            x.ncols(),
            fit.coefficients.len()
        )));
    }
    let raw: Vec<f64> = (&x.matrix * DVector::from_column_slice(&fit.coefficients))
        .iter()
        .map(|&e| inv_logit(e))
        .collect();
    Ok(clamp_scores(&raw, fit.clamp).0)
}

/// Max-norm of the score vector at `eta` and the Newton direction, `None`
/// when the information matrix is not positive definite.
fn newton_step(
    xs: &DMatrix<f64>,
    zf: &DVector<f64>,
    eta: &DVector<f64>,
) -> (f64, Option<DVector<f64>>) {
    let mu = eta.map(inv_logit);
    let mut xw = xs.clone();
    for (i, mut row) in xw.row_iter_mut().enumerate() {
        row *= mu[i] * (1.0 - mu[i]);
    }
    let hessian = xs.transpose() * &xw;
    let gradient = xs.transpose() * (zf - &mu);
    let norm = gradient.amax();
    (norm, hessian.cholesky().map(|c| c.solve(&gradient)))
}

fn near_boundary(mu: &[f64], eps: f64) -> bool {
    mu.iter().any(|&m| m < eps || m > 1.0 - eps)
}

fn clamp_scores(raw: &[f64], eps: f64) -> (Vec<f64>, usize) {
    let mut clamped = 0;
    let scores = raw
        .iter()
        .map(|&m| {
            let c = m.clamp(eps, 1.0 - eps);
            if c != m {
                clamped += 1;
            }
            c
        })
        .collect();
    (scores, clamped)
}

/// Centred and scaled copy of a design matrix.
struct Standardized {
    matrix: DMatrix<f64>,
    center: Vec<f64>,
    scale: Vec<f64>,
    intercept: Option<usize>,
}

impl Standardized {
    fn new(x: &DMatrix<f64>) -> Standardized {
        let n = x.nrows() as f64;
        let intercept = (0..x.ncols()).find(|&j| x.column(j).iter().all(|&v| v == 1.0));
        let mut matrix = x.clone();
        let mut center = vec![0.0; x.ncols()];
        let mut scale = vec![1.0; x.ncols()];
        for j in 0..x.ncols() {
            if Some(j) == intercept {
                continue;
            }
            let col = x.column(j);
            // Centring is only a reparameterisation when an intercept absorbs it.
            let m = if intercept.is_some() {
                col.sum() / n
            } else {
                0.0
            };
            let ss = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
            let s = if ss > 0.0 { ss.sqrt() } else { 1.0 };
            center[j] = m;
            scale[j] = s;
            matrix
                .column_mut(j)
                .iter_mut()
                .for_each(|v| *v = (*v - m) / s);
        }
        Standardized {
            matrix,
            center,
            scale,
            intercept,
        }
    }

    fn back_transform(&self, beta: &[f64]) -> Vec<f64> {
        let mut out: Vec<f64> = beta.iter().zip(&self.scale).map(|(b, s)| b / s).collect();
        if let Some(k) = self.intercept {
            let shift: f64 = out.iter().zip(&self.center).map(|(b, m)| b * m).sum();
            out[k] -= shift;
        }
        out
    }
}
