//! Treatment-effect estimation on the weighted pseudo-population.
//!
//! The marginal effect is the exposure coefficient of a weighted least-squares
//! regression of the outcome on an intercept and the exposure indicator, which
//! equals the difference of weighted arm means. Adding covariates turns the
//! estimand into a conditional effect; no marginalisation step is applied.
//!
//! Standard errors come from the HC0 sandwich (weights treated as fixed) or
//! from a bootstrap that re-runs the whole weighting pipeline on every
//! resample, drawing with replacement inside each (stratum, arm) cell.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cohort::Cohort;
use crate::design::{build_design_matrix, DesignMatrix, DesignSpec};
use crate::error::{Error, Result};
use crate::linalg::dependent_columns;
use crate::weights::{compute_weights, quantile_sorted, WeightSet, WeightingConfig};

/// Two-sided 95% standard-normal quantile.
pub const Z_975: f64 = 1.959963984540054;

/// Default number of bootstrap resamples.
pub const DEFAULT_BOOTSTRAP_REPLICATES: usize = 1000;

/// Largest tolerated share of failed bootstrap resamples.
pub const MAX_BOOTSTRAP_FAILURE_RATE: f64 = 0.10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Estimand {
    AteMarginal,
    Conditional,
    Stratum(String),
}

impl fmt::Display for Estimand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Estimand::AteMarginal => f.write_str("ATE-marginal"),
            Estimand::Conditional => f.write_str("conditional"),
            Estimand::Stratum(s) => write!(f, "stratum:{s}"),
        }
    }
}

impl From<Estimand> for String {
    fn from(e: Estimand) -> String {
        e.to_string()
    }
}

impl TryFrom<String> for Estimand {
    type Error = String;

    fn try_from(s: String) -> std::result::Result<Estimand, String> {
        match s.as_str() {
            "ATE-marginal" => Ok(Estimand::AteMarginal),
            "conditional" => Ok(Estimand::Conditional),
            _ => s
                .strip_prefix("stratum:")
                .map(|l| Estimand::Stratum(l.to_string()))
                .ok_or_else(|| format!("unknown estimand '{s}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeMethod {
    Sandwich,
    Bootstrap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectEstimate {
    pub estimand: Estimand,
    pub point: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub method: SeMethod,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_boot: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub boot_failures: Option<usize>,
}

impl EffectEstimate {
    fn normal(estimand: Estimand, point: f64, se: f64) -> EffectEstimate {
        EffectEstimate {
            estimand,
            point,
            se,
            ci_low: point - Z_975 * se,
            ci_high: point + Z_975 * se,
            method: SeMethod::Sandwich,
            n_boot: None,
            boot_failures: None,
        }
    }
}

fn split_arms<'a>(v: &'a [f64], z: &'a [bool], arm: bool) -> impl Iterator<Item = f64> + 'a {
    v.iter()
        .zip(z)
        .filter(move |(_, &zi)| zi == arm)
        .map(|(&x, _)| x)
}

/// Weighted exposed mean minus weighted unexposed mean.
pub fn ate_weighted_difference(y: &[f64], z: &[bool], w: &[f64]) -> Result<f64> {
    if y.len() != z.len() || y.len() != w.len() {
        return Err(Error::Dimension(format!(
            "lengths differ: {} outcomes, {} exposures, {} weights",
            y.len(),
            z.len(),
            w.len()
        )));
    }
    let wy: Vec<f64> = y.iter().zip(w).map(|(a, b)| a * b).collect();
    let arm_mean = |arm: bool| -> Result<f64> {
        let sw: f64 = split_arms(w, z, arm).sum();
        if !(sw > 0.0) {
            let name = if arm { "exposed" } else { "unexposed" };
            return Err(Error::Domain(format!("{name} arm has zero total weight")));
        }
        Ok(split_arms(&wy, z, arm).sum::<f64>() / sw)
    };
    Ok(arm_mean(true)? - arm_mean(false)?)
}

/// Weighted least-squares fit of `y` on `[1, Z, extras...]`.
#[derive(Debug, Clone, PartialEq)]
pub struct WlsFit {
    pub labels: Vec<String>,
    pub coefficients: Vec<f64>,
    pub residuals: Vec<f64>,
    pub design: DMatrix<f64>,
    pub weights: Vec<f64>,
    /// `(XᵀWX)⁻¹`.
    pub bread: DMatrix<f64>,
    pub estimand: Estimand,
}

/// Index of the exposure coefficient in a [`WlsFit`].
pub const EXPOSURE_COEF: usize = 1;

impl WlsFit {
    pub fn effect(&self) -> f64 {
        self.coefficients[EXPOSURE_COEF]
    }

    pub fn sandwich_se(&self) -> Result<f64> {
        sandwich_se(&self.design, &self.weights, &self.residuals, &self.bread)
    }
}

/// Extra outcome-model covariates taken from the cohort (stratum indicators
/// `stratum_<level>` included). The returned matrix has no intercept column.
pub fn extra_covariates(cohort: &Cohort, names: &[String]) -> Result<DesignMatrix> {
    let augmented = cohort.with_stratum_indicators();
    let full = build_design_matrix(&augmented, &DesignSpec::main(names))?;
    let matrix = full.matrix.columns(1, names.len()).into_owned();
    DesignMatrix::new(matrix, names.to_vec())
}

pub fn weighted_outcome_regression(
    y: &[f64],
    z: &[bool],
    w: &[f64],
    extras: Option<&DesignMatrix>,
) -> Result<WlsFit> {
    let n = y.len();
    if z.len() != n || w.len() != n || extras.is_some_and(|e| e.nrows() != n) {
        return Err(Error::Dimension(
            "outcome regression inputs differ in length".into(),
        ));
    }
    if w.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(Error::Domain(
            "regression weights must be finite and non-negative".into(),
        ));
    }
    let k = extras.map_or(0, DesignMatrix::ncols);
    let p = 2 + k;
    let mut labels = vec!["(Intercept)".to_string(), "Z".to_string()];
    if let Some(e) = extras {
        labels.extend(e.labels.iter().cloned());
    }
    let design = DMatrix::from_fn(n, p, |i, j| match j {
        0 => 1.0,
        1 => {
            if z[i] {
                1.0
            } else {
                0.0
            }
        }
        j => extras.expect("k > 0").matrix[(i, j - 2)],
    });
    let mut xw = design.clone();
    for (i, mut row) in xw.row_iter_mut().enumerate() {
        row *= w[i];
    }
    let xtwx = design.transpose() * &xw;
    let Some(chol) = xtwx.clone().cholesky() else {
        let mut columns = dependent_columns(&design, Some(w), &labels);
        if columns.is_empty() {
            columns = labels.clone();
        }
        return Err(Error::RankDeficient { columns });
    };
    let yv = DVector::from_column_slice(y);
    let beta = chol.solve(&(xw.transpose() * &yv));
    let residuals = (&yv - &design * &beta).iter().copied().collect();
    Ok(WlsFit {
        labels,
        coefficients: beta.iter().copied().collect(),
        residuals,
        design,
        weights: w.to_vec(),
        bread: chol.inverse(),
        estimand: if k > 0 {
            Estimand::Conditional
        } else {
            Estimand::AteMarginal
        },
    })
}

/// HC0 covariance `B · XᵀW diag(r²) W X · B` with `B = (XᵀWX)⁻¹`.
pub fn sandwich_covariance(
    x: &DMatrix<f64>,
    w: &[f64],
    residuals: &[f64],
    bread: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let (n, p) = x.shape();
    if w.len() != n || residuals.len() != n || bread.shape() != (p, p) {
        return Err(Error::Dimension(
            "sandwich inputs do not match the design".into(),
        ));
    }
    if bread.iter().any(|v| !v.is_finite()) {
        return Err(Error::RankDeficient {
            columns: vec!["(bread is not finite)".into()],
        });
    }
    let mut scaled = x.clone();
    for (i, mut row) in scaled.row_iter_mut().enumerate() {
        row *= w[i] * residuals[i];
    }
    let meat = scaled.transpose() * &scaled;
    Ok(bread * meat * bread)
}

/// Sandwich standard error of the exposure coefficient.
pub fn sandwich_se(
    x: &DMatrix<f64>,
    w: &[f64],
    residuals: &[f64],
    bread: &DMatrix<f64>,
) -> Result<f64> {
    let cov = sandwich_covariance(x, w, residuals, bread)?;
    Ok(cov[(EXPOSURE_COEF, EXPOSURE_COEF)].max(0.0).sqrt())
}

/// Everything needed to go from a cohort to an effect estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub weighting: WeightingConfig,
    /// Outcome-model covariates; non-empty makes the estimate conditional.
    pub extra_covariates: Vec<String>,
}

impl PipelineConfig {
    pub fn new(weighting: WeightingConfig) -> PipelineConfig {
        PipelineConfig {
            weighting,
            extra_covariates: Vec::new(),
        }
    }
}

fn regress(cohort: &Cohort, ws: &WeightSet, extras: &[String]) -> Result<WlsFit> {
    let y = cohort.outcomes()?;
    let extra = if extras.is_empty() {
        None
    } else {
        Some(extra_covariates(cohort, extras)?)
    };
    weighted_outcome_regression(&y, &cohort.exposures(), ws.final_weights(), extra.as_ref())
}

/// Point estimate with a sandwich SE, using the final weight stage of `ws`.
pub fn sandwich_effect(
    cohort: &Cohort,
    ws: &WeightSet,
    extras: &[String],
) -> Result<EffectEstimate> {
    let fit = regress(cohort, ws, extras)?;
    Ok(EffectEstimate::normal(
        fit.estimand.clone(),
        fit.effect(),
        fit.sandwich_se()?,
    ))
}

/// Re-runs weighting and the outcome regression; returns the exposure coefficient.
pub fn pipeline_point_estimate(cohort: &Cohort, cfg: &PipelineConfig) -> Result<f64> {
    let ws = compute_weights(cohort, &cfg.weighting)?;
    Ok(regress(cohort, &ws, &cfg.extra_covariates)?.effect())
}

/// Record indices of one resample, drawn with replacement inside every
/// (stratum, arm) cell. Cells are emitted in stratum order, unexposed first.
pub fn stratified_resample<R: Rng>(cohort: &Cohort, rng: &mut R) -> Vec<usize> {
    let mut cells: BTreeMap<(&str, bool), Vec<usize>> = BTreeMap::new();
    for (i, p) in cohort.patients().iter().enumerate() {
        cells
            .entry((p.stratum.as_str(), p.exposure))
            .or_default()
            .push(i);
    }
    let mut out = Vec::with_capacity(cohort.len());
    for members in cells.values() {
        for _ in 0..members.len() {
            out.push(members[rng.gen_range(0..members.len())]);
        }
    }
    out
}

fn resample_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

fn run_resample(cohort: &Cohort, cfg: &PipelineConfig, seed: u64, index: usize) -> Option<f64> {
    let idx = stratified_resample(cohort, &mut resample_rng(seed, index));
    let sample = cohort.subset(&idx).ok()?;
    pipeline_point_estimate(&sample, cfg)
        .ok()
        .filter(|v| v.is_finite())
}

/// Bootstrap SE and percentile CI, re-running the full pipeline per resample.
///
/// Resample `b` uses ChaCha8 stream `b` of `seed`, so results do not depend on
/// execution order. The interval is widened to contain the point estimate in
/// the rare case where the percentile interval excludes it.
pub fn bootstrap_effect(
    cohort: &Cohort,
    cfg: &PipelineConfig,
    replicates: usize,
    seed: u64,
) -> Result<EffectEstimate> {
    if replicates < 2 {
        return Err(Error::Validation(
            "bootstrap needs at least 2 replicates".into(),
        ));
    }
    let point = pipeline_point_estimate(cohort, cfg)?;

    #[cfg(feature = "parallel")]
    let draws: Vec<Option<f64>> = {
        use rayon::prelude::*;
        (0..replicates)
            .into_par_iter()
            .map(|b| run_resample(cohort, cfg, seed, b))
            .collect()
    };
    #[cfg(not(feature = "parallel"))]
    let draws: Vec<Option<f64>> = (0..replicates)
        .map(|b| run_resample(cohort, cfg, seed, b))
        .collect();

    let mut estimates: Vec<f64> = draws.into_iter().flatten().collect();
    let failures = replicates - estimates.len();
    if failures as f64 > MAX_BOOTSTRAP_FAILURE_RATE * replicates as f64 || estimates.len() < 2 {
        return Err(Error::BootstrapUnstable {
            failures,
            total: replicates,
        });
    }
    let m = estimates.len() as f64;
    let mean = estimates.iter().sum::<f64>() / m;
    let se = (estimates.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0)).sqrt();
    estimates.sort_by(f64::total_cmp);
    let lo = quantile_sorted(&estimates, 0.025);
    let hi = quantile_sorted(&estimates, 0.975);
    let estimand = if cfg.extra_covariates.is_empty() {
        Estimand::AteMarginal
    } else {
        Estimand::Conditional
    };
    Ok(EffectEstimate {
        estimand,
        point,
        se,
        ci_low: lo.min(point),
        ci_high: hi.max(point),
        method: SeMethod::Bootstrap,
        n_boot: Some(replicates),
        boot_failures: Some(failures),
    })
}

/// Weighted difference and sandwich SE inside each stratum, using the final
/// weight stage. Stage-1 and stage-2 weights give the same answer because they
/// differ by a per-stratum constant.
pub fn stratum_effects(
    cohort: &Cohort,
    ws: &WeightSet,
) -> Result<BTreeMap<String, EffectEstimate>> {
    let y = cohort.outcomes()?;
    let z = cohort.exposures();
    let w = ws.final_weights();
    if w.len() != cohort.len() {
        return Err(Error::Dimension(format!(
            "{} weights for {} patients",
            w.len(),
            cohort.len()
        )));
    }
    let mut out = BTreeMap::new();
    for (stratum, idx) in cohort.stratum_indices() {
        let pick = |v: &[f64]| -> Vec<f64> { idx.iter().map(|&i| v[i]).collect() };
        let zs: Vec<bool> = idx.iter().map(|&i| z[i]).collect();
        if zs.iter().all(|&v| v) || zs.iter().all(|&v| !v) {
            return Err(Error::Positivity {
                stratum,
                detail: "stratum effect needs both arms".into(),
            });
        }
        let fit = weighted_outcome_regression(&pick(&y), &zs, &pick(w), None)
            .map_err(|e| Error::in_stratum(&stratum, e))?;
        let est = EffectEstimate::normal(
            Estimand::Stratum(stratum.clone()),
            fit.effect(),
            fit.sandwich_se()?,
        );
        out.insert(stratum, est);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weighted_difference_cases() {
        let z = [true, true, false, false];
        assert_eq!(
            ate_weighted_difference(&[1.0, 3.0, 0.0, 4.0], &z, &[1.0, 1.0, 3.0, 1.0]).unwrap(),
            1.0
        );
        assert_eq!(
            ate_weighted_difference(&[2.0; 4], &z, &[1.0, 5.0, 2.0, 3.0]).unwrap(),
            0.0
        );
        assert_eq!(
            ate_weighted_difference(&[1.0, 3.0, 0.0, 4.0], &z, &[1.0; 4]).unwrap(),
            0.0
        );
        assert!(ate_weighted_difference(&[1.0, 2.0], &[true, false], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn wls_matches_weighted_difference() {
        let y = [1.0, 3.0, 0.0, 4.0, 2.5];
        let z = [true, true, false, false, true];
        let w = [1.0, 2.0, 3.0, 1.0, 0.5];
        let fit = weighted_outcome_regression(&y, &z, &w, None).unwrap();
        let diff = ate_weighted_difference(&y, &z, &w).unwrap();
        assert!((fit.effect() - diff).abs() < 1e-12);
        assert_eq!(fit.estimand, Estimand::AteMarginal);
    }

    #[test]
    fn extras_switch_estimand_label() {
        let y = [1.0, 3.0, 0.0, 4.0, 2.5];
        let z = [true, true, false, false, true];
        let extra = DesignMatrix::new(
            DMatrix::from_column_slice(5, 1, &[1.0, 0.0, 2.0, 5.0, 1.0]),
            vec!["x".into()],
        )
        .unwrap();
        let fit = weighted_outcome_regression(&y, &z, &[1.0; 5], Some(&extra)).unwrap();
        assert_eq!(fit.estimand, Estimand::Conditional);
        assert_eq!(fit.labels, ["(Intercept)", "Z", "x"]);
    }

    #[test]
    fn collinear_extra_is_rank_deficient() {
        let z = [true, true, false, false];
        let extra = DesignMatrix::new(
            DMatrix::from_column_slice(4, 1, &[1.0, 1.0, 0.0, 0.0]),
            vec!["copy_of_z".into()],
        )
        .unwrap();
        let err = weighted_outcome_regression(&[1.0, 2.0, 3.0, 4.0], &z, &[1.0; 4], Some(&extra))
            .unwrap_err();
        assert!(matches!(err, Error::RankDeficient { .. }));
    }

    #[test]
    fn hc0_with_constant_residual_magnitude_matches_ols_scaling() {
        // y chosen so every residual is ±1 around the arm means.
        let y = [1.0, 3.0, 1.0, 3.0, 5.0, 7.0, 5.0, 7.0];
        let z = [false, false, false, false, true, true, true, true];
        let fit = weighted_outcome_regression(&y, &z, &[1.0; 8], None).unwrap();
        assert!(fit.residuals.iter().all(|r| (r.abs() - 1.0).abs() < 1e-12));
        let (n, p) = (8.0, 2.0);
        let sigma2: f64 = fit.residuals.iter().map(|r| r * r).sum::<f64>() / (n - p);
        let ols_se = (sigma2 * fit.bread[(1, 1)]).sqrt();
        let hc0 = fit.sandwich_se().unwrap();
        assert!((hc0 / ols_se - ((n - p) / n).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn estimand_labels_round_trip() {
        for e in [
            Estimand::AteMarginal,
            Estimand::Conditional,
            Estimand::Stratum("S2".into()),
        ] {
            let s = serde_json::to_string(&e).unwrap();
            assert_eq!(serde_json::from_str::<Estimand>(&s).unwrap(), e);
        }
        assert_eq!(Estimand::Stratum("S1".into()).to_string(), "stratum:S1");
    }
}
