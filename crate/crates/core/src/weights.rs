//! ATE weights and the two-stage stratified rescaling.
//!
//! Stage 1 multiplies each weight by `0.5 * W_s / W_{s,z}`, where `W_s` is
//! the total raw weight of the patient's stratum and `W_{s,z}` the total raw
//! weight of the patient's (stratum, arm) cell. Afterwards both arms of every
//! stratum carry exactly half of that stratum's weight.
//!
//! Stage 2 multiplies by `(Σw / W_s) * (n_s / n)` so that each stratum's share
//! of the total weight equals its share of patients, while the grand total
//! stays at `Σw`.

use std::collections::BTreeMap;
use std::fmt::Display;

use serde::{Deserialize, Serialize};

use crate::cohort::Cohort;
use crate::design::{build_design_matrix, DesignSpec};
use crate::error::{Error, Result};
use crate::propensity::{fit_logistic_with, FitOptions, PropensityFit};

/// Share of each stratum's weight assigned to each arm by stage 1.
pub const TARGET_ARM_SHARE: f64 = 0.5;

/// `1/ê` for exposed patients, `1/(1-ê)` for unexposed.
pub fn ate_weights(scores: &[f64], z: &[bool]) -> Result<Vec<f64>> {
    if scores.len() != z.len() {
        return Err(Error::Dimension(format!(
            "{} scores for {} exposures",
            scores.len(),
            z.len()
        )));
    }
    scores
        .iter()
        .zip(z)
        .map(|(&e, &zi)| {
            if !(e > 0.0 && e < 1.0) {
                return Err(Error::Domain(format!(
                    "propensity score {e} outside (0, 1)"
                )));
            }
            Ok(if zi { 1.0 / e } else { 1.0 / (1.0 - e) })
        })
        .collect()
}

#[derive(Default, Clone, Copy)]
struct CellTotals {
    unexposed: f64,
    exposed: f64,
}

impl CellTotals {
    fn total(&self) -> f64 {
        self.unexposed + self.exposed
    }

    fn arm(&self, z: bool) -> f64 {
        if z {
            self.exposed
        } else {
            self.unexposed
        }
    }
}

fn cell_totals<'a, T: Ord + Display>(
    w: &[f64],
    strata: &'a [T],
    z: &[bool],
) -> Result<BTreeMap<&'a T, CellTotals>> {
    if w.len() != strata.len() || w.len() != z.len() {
        return Err(Error::Dimension(format!(
            "lengths differ: {} weights, {} strata, {} exposures",
            w.len(),
            strata.len(),
            z.len()
        )));
    }
    let mut totals: BTreeMap<&T, CellTotals> = BTreeMap::new();
    for ((&wi, s), &zi) in w.iter().zip(strata).zip(z) {
        let t = totals.entry(s).or_default();
        if zi {
            t.exposed += wi;
        } else {
            t.unexposed += wi;
        }
    }
    for (s, t) in &totals {
        if !(t.exposed > 0.0) || !(t.unexposed > 0.0) {
            let arm = if t.exposed > 0.0 {
                "unexposed"
            } else {
                "exposed"
            };
            return Err(Error::Positivity {
                stratum: s.to_string(),
                detail: format!("{arm} arm has no positive weight"),
            });
        }
    }
    Ok(totals)
}

/// Stage 1: equalise the two arm totals inside every stratum.
pub fn rescale_stage1<T: Ord + Display>(w: &[f64], strata: &[T], z: &[bool]) -> Result<Vec<f64>> {
    let totals = cell_totals(w, strata, z)?;
    Ok(w.iter()
        .zip(strata)
        .zip(z)
        .map(|((&wi, s), &zi)| {
            let t = &totals[s];
            wi * TARGET_ARM_SHARE * t.total() / t.arm(zi)
        })
        .collect())
}

/// Stage 2: restore each stratum's unweighted share of the cohort.
///
/// Stratum totals come from `w_raw`; `w_prime` must be the stage-1 output for
/// the same weights.
pub fn rescale_stage2<T: Ord + Display>(
    w_prime: &[f64],
    w_raw: &[f64],
    strata: &[T],
) -> Result<Vec<f64>> {
    if w_prime.len() != w_raw.len() || w_raw.len() != strata.len() {
        return Err(Error::Dimension(format!(
            "lengths differ: {} stage-1 weights, {} raw weights, {} strata",
            w_prime.len(),
            w_raw.len(),
            strata.len()
        )));
    }
    let mut totals: BTreeMap<&T, (f64, usize)> = BTreeMap::new();
    for (&wi, s) in w_raw.iter().zip(strata) {
        let t = totals.entry(s).or_default();
        t.0 += wi;
        t.1 += 1;
    }
    if let Some((s, _)) = totals.iter().find(|(_, t)| !(t.0 > 0.0)) {
        return Err(Error::Positivity {
            stratum: s.to_string(),
            detail: "stratum has no positive weight".into(),
        });
    }
    let n = w_raw.len() as f64;
    let wsum: f64 = w_raw.iter().sum();
    Ok(w_prime
        .iter()
        .zip(strata)
        .map(|(&wp, s)| {
            let (w_s, n_s) = totals[s];
            wp * (wsum / w_s) * (n_s as f64 / n)
        })
        .collect())
}

/// Caps weights at the `pct` and `1 - pct` empirical quantiles.
pub fn truncate_weights(w: &[f64], pct: f64) -> Result<Vec<f64>> {
    if !(0.0..0.5).contains(&pct) {
        return Err(Error::Validation(format!(
            "truncation percentile {pct} must lie in [0, 0.5)"
        )));
    }
    if w.is_empty() {
        return Ok(Vec::new());
    }
    let mut sorted = w.to_vec();
    sorted.sort_by(f64::total_cmp);
    let lo = quantile_sorted(&sorted, pct);
    let hi = quantile_sorted(&sorted, 1.0 - pct);
    Ok(w.iter().map(|&v| v.clamp(lo, hi)).collect())
}

/// Linear-interpolation quantile of sorted data (R type 7).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty slice");
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Where the propensity model terms come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignSource {
    /// One spec, used for the single pooled model or for every stratum.
    Global(DesignSpec),
    /// One spec per stratum label; must cover every stratum.
    PerStratum(BTreeMap<String, DesignSpec>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightingConfig {
    pub stratify: bool,
    pub design: DesignSource,
    /// Symmetric percentile for capping raw weights; `None` disables it.
    pub truncation: Option<f64>,
    pub fit: FitOptions,
}

impl WeightingConfig {
    pub fn stratified(spec: DesignSpec) -> WeightingConfig {
        WeightingConfig {
            stratify: true,
            design: DesignSource::Global(spec),
            truncation: None,
            fit: FitOptions::default(),
        }
    }

    pub fn pooled(spec: DesignSpec) -> WeightingConfig {
        WeightingConfig {
            stratify: false,
            ..WeightingConfig::stratified(spec)
        }
    }
}

/// Weights at every pipeline stage, aligned with the cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSet {
    pub scores: Vec<f64>,
    pub raw: Vec<f64>,
    pub stage1: Option<Vec<f64>>,
    pub stage2: Option<Vec<f64>>,
    pub stage_labels: Vec<String>,
    pub stratified: bool,
    pub per_stratum_fits: BTreeMap<String, PropensityFit>,
    pub pooled_fit: Option<PropensityFit>,
}

impl WeightSet {
    /// The last stage computed: `w″` for stratified runs, raw weights otherwise.
    pub fn final_weights(&self) -> &[f64] {
        self.stage2.as_deref().unwrap_or(&self.raw)
    }

    pub fn final_label(&self) -> &str {
        self.stage_labels.last().map(String::as_str).unwrap_or("w")
    }

    pub fn clamped_scores(&self) -> usize {
        self.per_stratum_fits
            .values()
            .chain(self.pooled_fit.iter())
            .map(|f| f.clamped_scores)
            .sum()
    }

    /// Weights CSV: `id,stratum,Z,e_hat,w,w_prime,w_doubleprime`.
    pub fn write_csv<W: std::io::Write>(&self, cohort: &Cohort, sink: W) -> Result<()> {
        if cohort.len() != self.raw.len() {
            return Err(Error::Dimension(format!(
                "{} weights for {} patients",
                self.raw.len(),
                cohort.len()
            )));
        }
        let mut w = csv::Writer::from_writer(sink);
        w.write_record([
            "id",
            "stratum",
            "Z",
            "e_hat",
            "w",
            "w_prime",
            "w_doubleprime",
        ])?;
        let opt = |v: &Option<Vec<f64>>, i: usize| {
            v.as_ref().map(|v| v[i].to_string()).unwrap_or_default()
        };
        for (i, p) in cohort.patients().iter().enumerate() {
            w.write_record([
                p.id.clone(),
                p.stratum.clone(),
                if p.exposure { "1".into() } else { "0".into() },
                self.scores[i].to_string(),
                self.raw[i].to_string(),
                opt(&self.stage1, i),
                opt(&self.stage2, i),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn maybe_truncate(w: Vec<f64>, pct: Option<f64>, labels: &mut Vec<String>) -> Result<Vec<f64>> {
    match pct {
        Some(p) if p > 0.0 => {
            labels.push(format!("w (truncated at {p} / {})", 1.0 - p));
            truncate_weights(&w, p)
        }
        _ => {
            labels.push("w".into());
            Ok(w)
        }
    }
}

/// Separate propensity model per stratum, then both rescaling stages.
/// Results are reassembled in the cohort's original order.
pub fn stratified_weight_pipeline(
    cohort: &Cohort,
    specs: &BTreeMap<String, DesignSpec>,
    truncation: Option<f64>,
    fit_opts: &FitOptions,
) -> Result<WeightSet> {
    cohort.check_positivity()?;
    let n = cohort.len();
    let mut scores = vec![0.0; n];
    let mut per_stratum_fits = BTreeMap::new();

    let parts: Vec<(String, Vec<usize>)> = cohort.stratum_indices().into_iter().collect();
    let fits = parts
        .iter()
        .map(|(stratum, idx)| {
            let spec = specs.get(stratum).ok_or_else(|| {
                Error::Spec(format!(
                    "no propensity design given for stratum '{stratum}'"
                ))
            })?;
            let sub = cohort.subset(idx)?;
            build_design_matrix(&sub, spec)
                .and_then(|x| fit_logistic_with(&x, &sub.exposures(), fit_opts))
                .map_err(|e| Error::in_stratum(stratum, e))
        })
        .collect::<Result<Vec<_>>>()?;
    for ((stratum, idx), fit) in parts.into_iter().zip(fits) {
        for (k, &i) in idx.iter().enumerate() {
            scores[i] = fit.scores[k];
        }
        per_stratum_fits.insert(stratum, fit);
    }

    let z = cohort.exposures();
    let strata = cohort.strata();
    let mut stage_labels = Vec::new();
    let raw = maybe_truncate(ate_weights(&scores, &z)?, truncation, &mut stage_labels)?;
    let stage1 = rescale_stage1(&raw, &strata, &z)?;
    stage_labels.push("w'".into());
    let stage2 = rescale_stage2(&stage1, &raw, &strata)?;
    stage_labels.push("w''".into());
    Ok(WeightSet {
        scores,
        raw,
        stage1: Some(stage1),
        stage2: Some(stage2),
        stage_labels,
        stratified: true,
        per_stratum_fits,
        pooled_fit: None,
    })
}

/// Single propensity model over the whole cohort; ATE weights only.
///
/// Stratum indicators (`stratum_<level>`) are available to the spec.
pub fn pooled_weight_pipeline(
    cohort: &Cohort,
    spec: &DesignSpec,
    truncation: Option<f64>,
    fit_opts: &FitOptions,
) -> Result<WeightSet> {
    let augmented = cohort.with_stratum_indicators();
    let x = build_design_matrix(&augmented, spec)?;
    let z = cohort.exposures();
    let fit = fit_logistic_with(&x, &z, fit_opts)?;
    let mut stage_labels = Vec::new();
    let raw = maybe_truncate(ate_weights(&fit.scores, &z)?, truncation, &mut stage_labels)?;
    Ok(WeightSet {
        scores: fit.scores.clone(),
        raw,
        stage1: None,
        stage2: None,
        stage_labels,
        stratified: false,
        per_stratum_fits: BTreeMap::new(),
        pooled_fit: Some(fit),
    })
}

/// Runs whichever pipeline `cfg` selects.
pub fn compute_weights(cohort: &Cohort, cfg: &WeightingConfig) -> Result<WeightSet> {
    match (&cfg.design, cfg.stratify) {
        (DesignSource::Global(spec), false) => {
            pooled_weight_pipeline(cohort, spec, cfg.truncation, &cfg.fit)
        }
        (DesignSource::Global(spec), true) => {
            let specs = cohort
                .stratum_levels()
                .iter()
                .map(|s| (s.clone(), spec.clone()))
                .collect();
            stratified_weight_pipeline(cohort, &specs, cfg.truncation, &cfg.fit)
        }
        (DesignSource::PerStratum(specs), true) => {
            stratified_weight_pipeline(cohort, specs, cfg.truncation, &cfg.fit)
        }
        (DesignSource::PerStratum(_), false) => Err(Error::Validation(
            "per-stratum designs require stratified weighting".into(),
        )),
    }
}
