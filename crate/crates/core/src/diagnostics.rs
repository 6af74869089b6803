//! Balance and weight diagnostics.
//!
//! Standardized mean differences use the unweighted pooled standard deviation
//! `sqrt((s1² + s0²) / 2)` as denominator for both the unadjusted and the
//! adjusted columns. Binary (0/1) covariates use `p(1 - p)` as the arm
//! variance, continuous covariates the sample variance.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::cohort::Cohort;
use crate::error::{Error, Result};
use crate::weights::quantile_sorted;

/// Conventional |SMD| threshold above which a covariate is flagged.
pub const DEFAULT_SMD_THRESHOLD: f64 = 0.1;

/// `(mean1 - mean0) / sd_pool`, or `None` when the denominator is not positive.
pub fn smd(mean1: f64, mean0: f64, sd_pool: f64) -> Option<f64> {
    (sd_pool > 0.0 && sd_pool.is_finite()).then(|| (mean1 - mean0) / sd_pool)
}

fn is_binary(x: &[f64]) -> bool {
    x.iter().all(|&v| v == 0.0 || v == 1.0)
}

/// Unweighted pooled SD across the two arms; `None` if it is undefined.
pub fn pooled_sd(x: &[f64], z: &[bool]) -> Option<f64> {
    if x.len() != z.len() {
        return None;
    }
    let binary = is_binary(x);
    let arm_var = |arm: bool| -> Option<f64> {
        let v: Vec<f64> = x
            .iter()
            .zip(z)
            .filter(|(_, &zi)| zi == arm)
            .map(|(&v, _)| v)
            .collect();
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        if binary {
            (!v.is_empty()).then_some(mean * (1.0 - mean))
        } else {
            (v.len() >= 2).then(|| v.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0))
        }
    };
    let pooled = ((arm_var(true)? + arm_var(false)?) / 2.0).sqrt();
    (pooled > 0.0).then_some(pooled)
}

pub fn weighted_mean(x: &[f64], w: &[f64]) -> Result<f64> {
    if x.len() != w.len() {
        return Err(Error::Dimension(format!(
            "{} values for {} weights",
            x.len(),
            w.len()
        )));
    }
    let sw: f64 = w.iter().sum();
    if !(sw > 0.0) {
        return Err(Error::Domain("weights sum to zero".into()));
    }
    Ok(x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw)
}

fn check_weights(w: &[f64]) -> Result<f64> {
    if w.is_empty() {
        return Err(Error::Domain("empty weight vector".into()));
    }
    if w.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(Error::Domain(
            "weights must be finite and non-negative".into(),
        ));
    }
    let sw: f64 = w.iter().sum();
    if !(sw > 0.0) {
        return Err(Error::Domain("weights sum to zero".into()));
    }
    Ok(sw)
}

/// Effective sample size, `(Σw)² / Σw²`.
pub fn ess(w: &[f64]) -> Result<f64> {
    let sw = check_weights(w)?;
    Ok(sw * sw / w.iter().map(|v| v * v).sum::<f64>())
}

/// Coefficient of variation with the population (divide-by-n) variance.
pub fn coefficient_of_variation(w: &[f64]) -> Result<f64> {
    let sw = check_weights(w)?;
    let n = w.len() as f64;
    let mean = sw / n;
    let var = w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Ok(var.sqrt() / mean)
}

/// Variance inflation `1 + CV²[w]` of a weighted mean, equal to `n / ESS`.
pub fn variance_inflation(w: &[f64]) -> Result<f64> {
    let cv = coefficient_of_variation(w)?;
    Ok(1.0 + cv * cv)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "stratum")]
pub enum Scope {
    Overall,
    Stratum(String),
}

impl std::fmt::Display for Scope {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Scope::Overall => f.write_str("overall"),
            Scope::Stratum(s) => write!(f, "stratum {s}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceRow {
    pub name: String,
    pub binary: bool,
    pub unadj_mean_unexposed: f64,
    pub unadj_mean_exposed: f64,
    pub unadj_smd: Option<f64>,
    pub adj_mean_unexposed: f64,
    pub adj_mean_exposed: f64,
    pub adj_smd: Option<f64>,
    /// `|adj_smd|` exceeds the report threshold.
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceReport {
    pub scope: Scope,
    pub weight_label: String,
    pub smd_threshold: f64,
    pub n_unexposed: usize,
    pub n_exposed: usize,
    pub ess_unexposed: f64,
    pub ess_exposed: f64,
    pub rows: Vec<BalanceRow>,
}

/// Labelling and flagging options for [`balance_report`].
#[derive(Debug, Clone)]
pub struct BalanceOptions {
    pub weight_label: String,
    pub smd_threshold: f64,
}

impl Default for BalanceOptions {
    fn default() -> Self {
        BalanceOptions {
            weight_label: "w".into(),
            smd_threshold: DEFAULT_SMD_THRESHOLD,
        }
    }
}

/// Unadjusted and weighted arm means plus SMDs for each covariate.
///
/// `w` is aligned with the whole cohort. With `Scope::Stratum`, everything
/// (means, pooled SD, ESS) is computed on that stratum's patients only.
pub fn balance_report<S: AsRef<str>>(
    cohort: &Cohort,
    w: &[f64],
    covariates: &[S],
    scope: Scope,
    opts: &BalanceOptions,
) -> Result<BalanceReport> {
    if w.len() != cohort.len() {
        return Err(Error::Dimension(format!(
            "{} weights for {} patients",
            w.len(),
            cohort.len()
        )));
    }
    let keep: Vec<usize> = match &scope {
        Scope::Overall => (0..cohort.len()).collect(),
        Scope::Stratum(s) => {
            let idx: Vec<usize> = cohort
                .patients()
                .iter()
                .enumerate()
                .filter(|(_, p)| &p.stratum == s)
                .map(|(i, _)| i)
                .collect();
            if idx.is_empty() {
                return Err(Error::Validation(format!("unknown stratum '{s}'")));
            }
            idx
        }
    };
    let z: Vec<bool> = keep
        .iter()
        .map(|&i| cohort.patients()[i].exposure)
        .collect();
    let wk: Vec<f64> = keep.iter().map(|&i| w[i]).collect();
    let arm = |v: &[f64], a: bool| -> Vec<f64> {
        v.iter()
            .zip(&z)
            .filter(|(_, &zi)| zi == a)
            .map(|(&x, _)| x)
            .collect()
    };
    let (w1, w0) = (arm(&wk, true), arm(&wk, false));
    if w1.is_empty() || w0.is_empty() {
        return Err(Error::Positivity {
            stratum: scope.to_string(),
            detail: "both arms are needed for a balance report".into(),
        });
    }
    let ones1 = vec![1.0; w1.len()];
    let ones0 = vec![1.0; w0.len()];

    let mut rows = Vec::with_capacity(covariates.len());
    for name in covariates {
        let name = name.as_ref();
        let col = cohort.column(name)?;
        let x: Vec<f64> = keep.iter().map(|&i| col[i]).collect();
        let (x1, x0) = (arm(&x, true), arm(&x, false));
        let sd = pooled_sd(&x, &z);
        let um1 = weighted_mean(&x1, &ones1)?;
        let um0 = weighted_mean(&x0, &ones0)?;
        let am1 = weighted_mean(&x1, &w1)?;
        let am0 = weighted_mean(&x0, &w0)?;
        let adj_smd = sd.and_then(|s| smd(am1, am0, s));
        rows.push(BalanceRow {
            name: name.to_string(),
            binary: is_binary(&x),
            unadj_mean_unexposed: um0,
            unadj_mean_exposed: um1,
            unadj_smd: sd.and_then(|s| smd(um1, um0, s)),
            adj_mean_unexposed: am0,
            adj_mean_exposed: am1,
            adj_smd,
            flagged: adj_smd.is_some_and(|d| d.abs() > opts.smd_threshold),
        });
    }
    Ok(BalanceReport {
        scope,
        weight_label: opts.weight_label.clone(),
        smd_threshold: opts.smd_threshold,
        n_unexposed: w0.len(),
        n_exposed: w1.len(),
        ess_unexposed: ess(&w0)?,
        ess_exposed: ess(&w1)?,
        rows,
    })
}

fn fmt_smd(v: Option<f64>) -> String {
    v.map(|d| format!("{d:.3}")).unwrap_or_else(|| "n/a".into())
}

impl BalanceReport {
    /// Aligned markdown table: unadjusted block, then adjusted block.
    pub fn to_markdown(&self) -> String {
        let mut header = vec![
            String::new(),
            format!("Unadjusted Unexposed (N={})", self.n_unexposed),
            format!("Unadjusted Exposed (N={})", self.n_exposed),
            "Unadjusted SMD".into(),
            format!("Adjusted Unexposed (ESS={:.1})", self.ess_unexposed),
            format!("Adjusted Exposed (ESS={:.1})", self.ess_exposed),
            "Adjusted SMD".into(),
        ];
        header[0] = match &self.scope {
            Scope::Overall => "Covariate".into(),
            Scope::Stratum(s) => format!("Stratum {s} (N={})", self.n_unexposed + self.n_exposed),
        };
        let body: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                let kind = if r.binary { "Prop." } else { "Mean" };
                let flag = if r.flagged { " *" } else { "" };
                vec![
                    format!("{} ({kind})", r.name),
                    format!("{:.3}", r.unadj_mean_unexposed),
                    format!("{:.3}", r.unadj_mean_exposed),
                    fmt_smd(r.unadj_smd),
                    format!("{:.3}", r.adj_mean_unexposed),
                    format!("{:.3}", r.adj_mean_exposed),
                    format!("{}{flag}", fmt_smd(r.adj_smd)),
                ]
            })
            .collect();
        let widths: Vec<usize> = (0..header.len())
            .map(|j| {
                body.iter()
                    .map(|r| r[j].len())
                    .chain([header[j].len()])
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let line = |cells: &[String]| -> String {
            let mut s = String::from("|");
            for (j, c) in cells.iter().enumerate() {
                if j == 0 {
                    let _ = write!(s, " {:<w$} |", c, w = widths[j]);
                } else {
                    let _ = write!(s, " {:>w$} |", c, w = widths[j]);
                }
            }
            s
        };
        let mut out = String::new();
        let _ = writeln!(out, "{}", line(&header));
        let rule: Vec<String> = widths
            .iter()
            .enumerate()
            .map(|(j, &w)| {
                if j == 0 {
                    format!(":{}", "-".repeat(w.max(1) - 1))
                } else {
                    format!("{}:", "-".repeat(w.max(1) - 1))
                }
            })
            .collect();
        let _ = writeln!(out, "{}", line(&rule));
        for r in &body {
            let _ = writeln!(out, "{}", line(r));
        }
        let _ = writeln!(
            out,
            "\nAdjusted with {} weights; * marks |SMD| > {}.",
            self.weight_label, self.smd_threshold
        );
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightDiagnostics {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub cv: f64,
    pub count_clamped_scores: usize,
    /// Largest weights as (patient id, weight), descending.
    pub top_k_weights: Vec<(String, f64)>,
}

pub fn weight_diagnostics(
    cohort: &Cohort,
    w: &[f64],
    count_clamped_scores: usize,
    k: usize,
) -> Result<WeightDiagnostics> {
    if w.len() != cohort.len() {
        return Err(Error::Dimension(format!(
            "{} weights for {} patients",
            w.len(),
            cohort.len()
        )));
    }
    let sw = check_weights(w)?;
    let mut order: Vec<usize> = (0..w.len()).collect();
    order.sort_by(|&a, &b| w[b].total_cmp(&w[a]).then(a.cmp(&b)));
    Ok(WeightDiagnostics {
        min: w.iter().copied().fold(f64::INFINITY, f64::min),
        max: w.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        mean: sw / w.len() as f64,
        cv: coefficient_of_variation(w)?,
        count_clamped_scores,
        top_k_weights: order
            .into_iter()
            .take(k)
            .map(|i| (cohort.patients()[i].id.clone(), w[i]))
            .collect(),
    })
}

/// Min, quartiles and max of one arm's propensity scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmQuantiles {
    pub n: usize,
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
}

impl ArmQuantiles {
    fn from_scores(mut s: Vec<f64>) -> ArmQuantiles {
        s.sort_by(f64::total_cmp);
        ArmQuantiles {
            n: s.len(),
            min: s[0],
            q25: quantile_sorted(&s, 0.25),
            median: quantile_sorted(&s, 0.5),
            q75: quantile_sorted(&s, 0.75),
            max: s[s.len() - 1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapSummary {
    pub unexposed: ArmQuantiles,
    pub exposed: ArmQuantiles,
    /// Exposed scores outside the unexposed arm's [min, max].
    pub exposed_outside_unexposed_range: usize,
    /// Unexposed scores outside the exposed arm's [min, max].
    pub unexposed_outside_exposed_range: usize,
}

pub fn overlap_summary(scores: &[f64], z: &[bool]) -> Result<OverlapSummary> {
    if scores.len() != z.len() {
        return Err(Error::Dimension(format!(
            "{} scores for {} exposures",
            scores.len(),
            z.len()
        )));
    }
    let arm = |a: bool| -> Vec<f64> {
        scores
            .iter()
            .zip(z)
            .filter(|(_, &zi)| zi == a)
            .map(|(&s, _)| s)
            .collect()
    };
    let (s1, s0) = (arm(true), arm(false));
    if s1.is_empty() || s0.is_empty() {
        return Err(Error::Validation("overlap summary needs both arms".into()));
    }
    let exposed = ArmQuantiles::from_scores(s1.clone());
    let unexposed = ArmQuantiles::from_scores(s0.clone());
    let outside =
        |v: &[f64], r: &ArmQuantiles| v.iter().filter(|&&s| s < r.min || s > r.max).count();
    Ok(OverlapSummary {
        exposed_outside_unexposed_range: outside(&s1, &unexposed),
        unexposed_outside_exposed_range: outside(&s0, &exposed),
        unexposed,
        exposed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::PatientRecord;

    #[test]
    fn smd_cases() {
        assert_eq!(smd(3.0, 3.0, 2.0), Some(0.0));
        assert_eq!(smd(1.0, 0.0, 1.0), Some(1.0));
        assert_eq!(smd(1.0, 0.0, 0.0), None);
    }

    #[test]
    fn pooled_sd_cases() {
        let z = [true, true, false, false];
        assert!((pooled_sd(&[-1.0, 1.0, 4.0, 6.0], &z).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        // p1 = p0 = 0.5
        assert_eq!(pooled_sd(&[0.0, 1.0, 1.0, 0.0], &z), Some(0.5));
        // each arm has sample SD 8
        let x = [52.0, 60.0, 68.0, 22.0, 30.0, 38.0];
        let z3 = [true, true, true, false, false, false];
        assert!((pooled_sd(&x, &z3).unwrap() - 8.0).abs() < 1e-12);
        assert_eq!(pooled_sd(&[1.0, 1.0, 1.0, 1.0], &z), None);
        assert_eq!(pooled_sd(&[2.0, 3.0, 5.0], &[true, false, false]), None);
    }

    #[test]
    fn weighted_mean_cases() {
        assert_eq!(weighted_mean(&[0.0, 10.0], &[1.0, 3.0]).unwrap(), 7.5);
        assert_eq!(weighted_mean(&[1.0, 2.0, 6.0], &[2.0; 3]).unwrap(), 3.0);
        assert!(weighted_mean(&[1.0], &[0.0]).is_err());
    }

    #[test]
    fn ess_and_inflation_cases() {
        assert_eq!(ess(&[1.0; 4]).unwrap(), 4.0);
        assert_eq!(ess(&[2.0; 4]).unwrap(), 4.0);
        assert!((ess(&[1.0, 1.0, 2.0]).unwrap() - 16.0 / 6.0).abs() < 1e-15);
        assert!((variance_inflation(&[1.0; 5]).unwrap() - 1.0).abs() < 1e-15);
        assert!((variance_inflation(&[1.0, 1.0, 2.0]).unwrap() - 1.125).abs() < 1e-15);
        assert!((variance_inflation(&[1.0, 3.0]).unwrap() - 1.25).abs() < 1e-15);
        assert!(ess(&[]).is_err());
    }

    fn toy() -> Cohort {
        let rows = [
            ("S1", true, 40.0, 1.0),
            ("S1", false, 55.0, 0.0),
            ("S1", false, 60.0, 1.0),
            ("S2", true, 50.0, 0.0),
            ("S2", true, 52.0, 1.0),
            ("S2", false, 70.0, 1.0),
        ];
        let patients = rows
            .iter()
            .enumerate()
            .map(|(i, &(s, z, age, st))| PatientRecord {
                id: format!("p{i}"),
                stratum: s.into(),
                exposure: z,
                covariates: vec![age, st],
                outcome: None,
            })
            .collect();
        Cohort::new(vec!["age".into(), "stage_IV".into()], patients).unwrap()
    }

    #[test]
    fn identity_weights_reproduce_unadjusted_columns() {
        let c = toy();
        let r = balance_report(
            &c,
            &[1.0; 6],
            &["age", "stage_IV"],
            Scope::Overall,
            &BalanceOptions::default(),
        )
        .unwrap();
        for row in &r.rows {
            assert_eq!(row.adj_mean_exposed, row.unadj_mean_exposed);
            assert_eq!(row.adj_mean_unexposed, row.unadj_mean_unexposed);
            assert_eq!(row.adj_smd, row.unadj_smd);
        }
        assert_eq!((r.n_exposed, r.n_unexposed), (3, 3));
        assert_eq!(r.ess_exposed, 3.0);
        assert!(r.rows[1].binary && !r.rows[0].binary);
    }

    #[test]
    fn stratum_scope_restricts_rows() {
        let c = toy();
        let r = balance_report(
            &c,
            &[1.0, 2.0, 2.0, 1.0, 1.0, 4.0],
            &["age"],
            Scope::Stratum("S2".into()),
            &BalanceOptions::default(),
        )
        .unwrap();
        assert_eq!((r.n_exposed, r.n_unexposed), (2, 1));
        assert_eq!(r.rows[0].unadj_mean_exposed, 51.0);
        assert_eq!(r.ess_unexposed, 1.0);
        // a single unexposed patient: pooled SD undefined
        assert_eq!(r.rows[0].unadj_smd, None);
        let md = r.to_markdown();
        assert!(md.contains("Stratum S2 (N=3)"));
        assert!(md.contains("n/a"));
        assert!(balance_report(
            &c,
            &[1.0; 6],
            &["bmi"],
            Scope::Overall,
            &BalanceOptions::default()
        )
        .is_err());
    }

    #[test]
    fn markdown_has_both_blocks() {
        let c = toy();
        let r = balance_report(
            &c,
            &[1.0; 6],
            &["age", "stage_IV"],
            Scope::Overall,
            &BalanceOptions::default(),
        )
        .unwrap();
        let md = r.to_markdown();
        let header = md.lines().next().unwrap();
        assert!(header.contains("Unadjusted Unexposed (N=3)"));
        assert!(header.contains("Adjusted Exposed (ESS=3.0)"));
        assert!(md.contains("age (Mean)"));
        assert!(md.contains("stage_IV (Prop.)"));
    }

    #[test]
    fn overlap_counts() {
        let z = [true, true, false, false];
        let same = overlap_summary(&[0.2, 0.6, 0.2, 0.6], &z).unwrap();
        assert_eq!(same.exposed_outside_unexposed_range, 0);
        assert_eq!(same.unexposed_outside_exposed_range, 0);
        let disjoint = overlap_summary(&[0.8, 0.9, 0.1, 0.2], &z).unwrap();
        assert_eq!(disjoint.exposed_outside_unexposed_range, 2);
        assert_eq!(disjoint.unexposed_outside_exposed_range, 2);
        assert!((disjoint.exposed.median - 0.85).abs() < 1e-12);
    }

    #[test]
    fn weight_summary() {
        let c = toy();
        let d = weight_diagnostics(&c, &[1.0, 2.0, 5.0, 1.0, 1.0, 2.0], 0, 2).unwrap();
        assert_eq!(d.min, 1.0);
        assert_eq!(d.max, 5.0);
        assert_eq!(
            d.top_k_weights,
            vec![("p2".into(), 5.0), ("p1".into(), 2.0)]
        );
        assert!(d.cv > 0.0);
    }
}
