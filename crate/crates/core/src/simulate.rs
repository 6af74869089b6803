//! Synthetic cohorts with the two-stratum oncology layout.
//!
//! Four fixed-size cells (S1 unexposed, S1 exposed, S2 unexposed, S2 exposed)
//! with normal ages and Bernoulli stage-IV indicators. An optional outcome
//! model adds `y = τ_s·Z + γ_age·age + γ_IV·stage_IV + N(0, σ²)`.
//!
//! Random numbers come from ChaCha20 seeded with `seed`; every cell draws from
//! its own stream (`2·cell` for covariates, `2·cell + 1` for outcomes), so
//! enabling the outcome model leaves the covariates untouched. Streams are
//! stable across releases of this crate but are not R's generator, so the
//! published demonstration values are matched in distribution only.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::cohort::{Cohort, PatientRecord};
use crate::error::{Error, Result};

pub const DEFAULT_SEED: u64 = 21_082_025;

/// Stratum and exposure of each of the four cells, in order.
pub const CELLS: [(&str, bool); 4] = [("S1", false), ("S1", true), ("S2", false), ("S2", true)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CovariateEffects {
    pub age: f64,
    #[serde(rename = "stage_IV")]
    pub stage_iv: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutcomeModel {
    /// Exposure effect in S1 and S2.
    pub true_effects: [f64; 2],
    pub covariate_coefficients: CovariateEffects,
    pub noise_sd: f64,
}

impl Default for OutcomeModel {
    fn default() -> Self {
        OutcomeModel {
            true_effects: [5.0, 5.0],
            covariate_coefficients: CovariateEffects {
                age: 0.2,
                stage_iv: 3.0,
            },
            noise_sd: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub group_sizes: [usize; 4],
    pub age_means: [f64; 4],
    pub age_sds: [f64; 4],
    pub stage4_props: [f64; 4],
    pub outcome_model: Option<OutcomeModel>,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            group_sizes: [30, 50, 70, 30],
            age_means: [60.0, 45.0, 70.0, 50.0],
            age_sds: [8.0; 4],
            stage4_props: [0.6, 0.55, 0.45, 0.43],
            outcome_model: None,
            seed: DEFAULT_SEED,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.group_sizes.contains(&0) {
            return Err(Error::Validation(
                "every cell needs at least one patient".into(),
            ));
        }
        if self.stage4_props.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Validation(
                "stage-IV proportions must lie in [0, 1]".into(),
            ));
        }
        if self.age_sds.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::Validation("age SDs must be positive".into()));
        }
        if self.age_means.iter().any(|m| !m.is_finite()) {
            return Err(Error::Validation("age means must be finite".into()));
        }
        if let Some(m) = &self.outcome_model {
            let c = &m.covariate_coefficients;
            if !(m.noise_sd >= 0.0 && m.noise_sd.is_finite())
                || m.true_effects
                    .iter()
                    .chain([&c.age, &c.stage_iv])
                    .any(|v| !v.is_finite())
            {
                return Err(Error::Validation(
                    "outcome model parameters must be finite, noise_sd ≥ 0".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn total(&self) -> usize {
        self.group_sizes.iter().sum()
    }

    /// Rescales the cell sizes to sum to `n`, keeping their proportions
    /// (largest-remainder rounding, each cell at least 1).
    pub fn with_total(mut self, n: usize) -> SimConfig {
        let current = self.total() as f64;
        let exact: Vec<f64> = self
            .group_sizes
            .iter()
            .map(|&g| g as f64 * n as f64 / current)
            .collect();
        let mut sizes: Vec<usize> = exact.iter().map(|e| (e.floor() as usize).max(1)).collect();
        let mut order: Vec<usize> = (0..4).collect();
        order.sort_by(|&a, &b| {
            (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor()))
        });
        let mut k = 0;
        while sizes.iter().sum::<usize>() < n {
            sizes[order[k % 4]] += 1;
            k += 1;
        }
        self.group_sizes.copy_from_slice(&sizes);
        self
    }

    pub fn with_outcome(mut self, model: OutcomeModel) -> SimConfig {
        self.outcome_model = Some(model);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> SimConfig {
        self.seed = seed;
        self
    }
}

fn stream(seed: u64, id: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Cohort with covariates `age` and `stage_IV`, cells in [`CELLS`] order.
pub fn simulate_cohort(cfg: &SimConfig) -> Result<Cohort> {
    cfg.validate()?;
    let mut patients = Vec::with_capacity(cfg.total());
    for (cell, &(stratum, exposure)) in CELLS.iter().enumerate() {
        let mut rng = stream(cfg.seed, 2 * cell as u64);
        let age_dist = Normal::new(cfg.age_means[cell], cfg.age_sds[cell])
            .map_err(|e| Error::Validation(e.to_string()))?;
        let start = patients.len();
        for _ in 0..cfg.group_sizes[cell] {
            let age = age_dist.sample(&mut rng);
            let stage = if rng.gen_bool(cfg.stage4_props[cell]) {
                1.0
            } else {
                0.0
            };
            patients.push(PatientRecord {
                id: format!("P{:05}", patients.len() + 1),
                stratum: stratum.to_string(),
                exposure,
                covariates: vec![age, stage],
                outcome: None,
            });
        }
        if let Some(model) = &cfg.outcome_model {
            let mut rng = stream(cfg.seed, 2 * cell as u64 + 1);
            let tau = model.true_effects[cell / 2];
            let c = &model.covariate_coefficients;
            for p in &mut patients[start..] {
                let noise = if model.noise_sd > 0.0 {
                    Normal::new(0.0, model.noise_sd)
                        .map_err(|e| Error::Validation(e.to_string()))?
                        .sample(&mut rng)
                } else {
                    0.0
                };
                let z = if exposure { 1.0 } else { 0.0 };
                p.outcome =
                    Some(tau * z + c.age * p.covariates[0] + c.stage_iv * p.covariates[1] + noise);
            }
        }
    }
    Cohort::new(vec!["age".into(), "stage_IV".into()], patients)
}

/// Long-format `stratum,Z,age` rows for plotting age densities by cell.
pub fn export_fig1_data<W: Write>(cohort: &Cohort, sink: W) -> Result<()> {
    let age = cohort
        .column("age")
        .map_err(|_| Error::Schema("cohort has no 'age' covariate".into()))?;
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["stratum", "Z", "age"])?;
    for (p, a) in cohort.patients().iter().zip(age) {
        w.write_record([
            p.stratum.as_str(),
            if p.exposure { "1" } else { "0" },
            &a.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
