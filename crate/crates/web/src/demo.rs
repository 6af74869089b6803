//! The computations behind the page, independent of wasm-bindgen.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use stratw::diagnostics::{
    balance_report, coefficient_of_variation, ess, BalanceOptions, BalanceReport, Scope,
};
use stratw::estimation::{sandwich_effect, stratum_effects, EffectEstimate};
use stratw::simulate::{simulate_cohort, CovariateEffects, OutcomeModel, SimConfig};
use stratw::weights::DesignSource;
use stratw::{compute_weights, Cohort, DesignSpec, WeightSet, WeightingConfig};

/// Page controls. Missing fields take the demonstration defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DemoParams {
    pub n_total: usize,
    pub seed: u64,
    /// Mean age of S1 unexposed, S1 exposed, S2 unexposed, S2 exposed.
    pub age_means: [f64; 4],
    pub age_sd: f64,
    pub stage4_props: [f64; 4],
    /// Exposure effect in S1 and S2.
    pub true_effects: [f64; 2],
    pub truncation: Option<f64>,
}

impl Default for DemoParams {
    fn default() -> Self {
        let sim = SimConfig::default();
        DemoParams {
            n_total: sim.total(),
            seed: sim.seed,
            age_means: sim.age_means,
            age_sd: 8.0,
            stage4_props: sim.stage4_props,
            true_effects: OutcomeModel::default().true_effects,
            truncation: None,
        }
    }
}

impl DemoParams {
    pub fn parse(json: &str) -> Result<DemoParams, String> {
        if json.trim().is_empty() {
            return Ok(DemoParams::default());
        }
        serde_json::from_str(json).map_err(|e| format!("bad parameters: {e}"))
    }

    fn sim_config(&self) -> SimConfig {
        SimConfig {
            age_means: self.age_means,
            age_sds: [self.age_sd; 4],
            stage4_props: self.stage4_props,
            seed: self.seed,
            outcome_model: Some(OutcomeModel {
                true_effects: self.true_effects,
                covariate_coefficients: CovariateEffects {
                    age: 0.2,
                    stage_iv: 3.0,
                },
                noise_sd: 5.0,
            }),
            ..SimConfig::default()
        }
        .with_total(self.n_total)
    }

    pub fn cohort(&self) -> Result<Cohort, String> {
        if self.n_total < 8 {
            return Err("the cohort needs at least 8 patients".into());
        }
        simulate_cohort(&self.sim_config()).map_err(|e| e.to_string())
    }

    /// True marginal effect: stratum effects weighted by stratum size.
    pub fn marginal_truth(&self) -> f64 {
        let g = self.sim_config().group_sizes;
        let (s1, s2) = ((g[0] + g[1]) as f64, (g[2] + g[3]) as f64);
        (s1 * self.true_effects[0] + s2 * self.true_effects[1]) / (s1 + s2)
    }
}

/// The demonstration propensity models: the same terms in every stratum, or one
/// pooled model with stratum main effects and interactions.
pub fn weighting(stratified: bool, truncation: Option<f64>) -> WeightingConfig {
    let spec = if stratified {
        DesignSpec::main(&["age", "stage_IV"])
    } else {
        DesignSpec::main(&["age", "stage_IV", "stratum_S2"])
            .with_interaction("age", "stratum_S2")
            .with_interaction("stage_IV", "stratum_S2")
    };
    WeightingConfig {
        stratify: stratified,
        design: DesignSource::Global(spec),
        truncation,
        ..WeightingConfig::stratified(DesignSpec::default())
    }
}

fn weights_for(
    params: &DemoParams,
    cohort: &Cohort,
    stratified: bool,
) -> Result<WeightSet, String> {
    compute_weights(cohort, &weighting(stratified, params.truncation)).map_err(|e| e.to_string())
}

#[derive(Debug, Serialize)]
pub struct CellCount {
    pub stratum: String,
    pub unexposed: usize,
    pub exposed: usize,
}

#[derive(Debug, Serialize)]
pub struct ArmShares {
    pub unexposed: f64,
    pub exposed: f64,
}

#[derive(Debug, Serialize)]
pub struct Adjustment {
    pub weight_label: String,
    pub separation_warning: bool,
    /// Weighted share of each arm that belongs to stratum S2.
    pub s2_share: ArmShares,
    pub reports: Vec<BalanceReport>,
}

#[derive(Debug, Serialize)]
pub struct BalanceDemo {
    pub counts: Vec<CellCount>,
    pub unstratified: Adjustment,
    pub stratified: Adjustment,
}

fn adjustment(cohort: &Cohort, ws: &WeightSet) -> Result<Adjustment, String> {
    let w = ws.final_weights();
    let opts = BalanceOptions {
        weight_label: ws.final_label().to_string(),
        ..BalanceOptions::default()
    };
    let augmented = cohort.with_stratum_indicators();
    let names = ["age", "stage_IV", "stratum_S2"];
    let mut reports =
        vec![balance_report(&augmented, w, &names, Scope::Overall, &opts)
            .map_err(|e| e.to_string())?];
    for s in cohort.stratum_levels() {
        reports.push(
            balance_report(
                cohort,
                w,
                &["age", "stage_IV"],
                Scope::Stratum(s.clone()),
                &opts,
            )
            .map_err(|e| e.to_string())?,
        );
    }
    let share = |arm: bool| {
        let (mut s2, mut all) = (0.0, 0.0);
        for (p, &wi) in cohort.patients().iter().zip(w) {
            if p.exposure == arm {
                all += wi;
                if p.stratum == "S2" {
                    s2 += wi;
                }
            }
        }
        s2 / all
    };
    let separation_warning = ws
        .per_stratum_fits
        .values()
        .chain(ws.pooled_fit.iter())
        .any(|f| f.separation_warning);
    Ok(Adjustment {
        weight_label: opts.weight_label,
        separation_warning,
        s2_share: ArmShares {
            unexposed: share(false),
            exposed: share(true),
        },
        reports,
    })
}

pub fn balance_demo(params: &DemoParams) -> Result<BalanceDemo, String> {
    let cohort = params.cohort()?;
    let counts = cohort
        .arm_counts()
        .into_iter()
        .map(|(stratum, (unexposed, exposed))| CellCount {
            stratum,
            unexposed,
            exposed,
        })
        .collect();
    Ok(BalanceDemo {
        counts,
        unstratified: adjustment(&cohort, &weights_for(params, &cohort, false)?)?,
        stratified: adjustment(&cohort, &weights_for(params, &cohort, true)?)?,
    })
}

#[derive(Debug, Serialize)]
pub struct Histogram {
    pub weight_label: String,
    /// Bin edges on the log10 scale, one more than the counts.
    pub log10_edges: Vec<f64>,
    pub unexposed: Vec<usize>,
    pub exposed: Vec<usize>,
    pub ess_unexposed: f64,
    pub ess_exposed: f64,
    pub min: f64,
    pub max: f64,
    pub cv: f64,
}

pub fn weight_histogram(
    params: &DemoParams,
    stratified: bool,
    bins: usize,
) -> Result<Histogram, String> {
    let bins = bins.clamp(1, 200);
    let cohort = params.cohort()?;
    let ws = weights_for(params, &cohort, stratified)?;
    let w = ws.final_weights();
    let logs: Vec<f64> = w.iter().map(|v| v.log10()).collect();
    let lo = logs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo {
        (hi - lo) / bins as f64
    } else {
        1.0
    };
    let log10_edges = (0..=bins).map(|k| lo + k as f64 * width).collect();
    let (mut unexposed, mut exposed) = (vec![0; bins], vec![0; bins]);
    let mut arm_w: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    for ((p, &l), &wi) in cohort.patients().iter().zip(&logs).zip(w) {
        let k = (((l - lo) / width) as usize).min(bins - 1);
        if p.exposure {
            exposed[k] += 1;
        } else {
            unexposed[k] += 1;
        }
        arm_w[usize::from(p.exposure)].push(wi);
    }
    let err = |e: stratw::Error| e.to_string();
    Ok(Histogram {
        weight_label: ws.final_label().to_string(),
        log10_edges,
        unexposed,
        exposed,
        ess_unexposed: ess(&arm_w[0]).map_err(err)?,
        ess_exposed: ess(&arm_w[1]).map_err(err)?,
        min: 10f64.powf(lo),
        max: 10f64.powf(hi),
        cv: coefficient_of_variation(w).map_err(err)?,
    })
}

#[derive(Debug, Serialize)]
pub struct PipelineEffects {
    pub marginal: EffectEstimate,
    pub strata: BTreeMap<String, EffectEstimate>,
}

#[derive(Debug, Serialize)]
pub struct EffectsDemo {
    pub truth_marginal: f64,
    pub truth_strata: [f64; 2],
    /// Exposed mean minus unexposed mean, no weighting.
    pub crude: f64,
    pub unstratified: PipelineEffects,
    pub stratified: PipelineEffects,
}

pub fn effects_demo(params: &DemoParams) -> Result<EffectsDemo, String> {
    let cohort = params.cohort()?;
    let run = |stratified: bool| -> Result<PipelineEffects, String> {
        let ws = weights_for(params, &cohort, stratified)?;
        Ok(PipelineEffects {
            marginal: sandwich_effect(&cohort, &ws, &[]).map_err(|e| e.to_string())?,
            strata: stratum_effects(&cohort, &ws).map_err(|e| e.to_string())?,
        })
    };
    let y = cohort.outcomes().map_err(|e| e.to_string())?;
    let crude =
        stratw::estimation::ate_weighted_difference(&y, &cohort.exposures(), &vec![1.0; y.len()])
            .map_err(|e| e.to_string())?;
    Ok(EffectsDemo {
        truth_marginal: params.marginal_truth(),
        truth_strata: params.true_effects,
        crude,
        unstratified: run(false)?,
        stratified: run(true)?,
    })
}
