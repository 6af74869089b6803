//! TOML run configuration and its merge with command-line flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use stratw::estimation::DEFAULT_BOOTSTRAP_REPLICATES;
use stratw::simulate::{SimConfig, DEFAULT_SEED};
use stratw::weights::DesignSource;
use stratw::{Cohort, ColumnSchema, DesignSpec, FitOptions, WeightingConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Md,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SeChoice {
    Sandwich,
    Bootstrap,
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapConfig {
    pub replicates: usize,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            replicates: DEFAULT_BOOTSTRAP_REPLICATES,
            seed: DEFAULT_SEED,
        }
    }
}

/// Everything a run needs. Every field has a default, so an empty file is valid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Cohort CSV. Without it, `run` simulates a cohort from `[simulate]`.
    pub input: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub stratify: bool,
    /// Symmetric percentile at which raw weights are capped.
    pub truncation: Option<f64>,
    pub formats: Vec<Format>,
    pub se: SeChoice,
    pub per_stratum: bool,
    pub smd_threshold: f64,
    /// Covariates shown in balance tables; empty means all of them.
    pub balance_covariates: Vec<String>,
    /// Outcome-model covariates; makes the estimate conditional.
    pub extra_covariates: Vec<String>,
    pub schema: ColumnSchema,
    /// Propensity terms used for every stratum (or for the pooled model).
    pub design: Option<DesignSpec>,
    /// Propensity terms per stratum label; stratified runs only.
    pub designs: Option<BTreeMap<String, DesignSpec>>,
    pub fit: FitOptions,
    pub bootstrap: BootstrapConfig,
    pub simulate: SimConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            input: None,
            out_dir: PathBuf::from("out"),
            stratify: true,
            truncation: None,
            formats: vec![Format::Json, Format::Md],
            se: SeChoice::Sandwich,
            per_stratum: false,
            smd_threshold: stratw::diagnostics::DEFAULT_SMD_THRESHOLD,
            balance_covariates: Vec::new(),
            extra_covariates: Vec::new(),
            schema: ColumnSchema::default(),
            design: None,
            designs: None,
            fit: FitOptions::default(),
            bootstrap: BootstrapConfig::default(),
            simulate: SimConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let cfg: RunConfig =
            toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.design.is_some() && self.designs.is_some() {
            bail!("give either `design` or `designs`, not both");
        }
        if self.designs.is_some() && !self.stratify {
            bail!("per-stratum `designs` need stratify = true");
        }
        if let Some(t) = self.truncation {
            if !(0.0..0.5).contains(&t) {
                bail!("truncation must lie in [0, 0.5), got {t}");
            }
        }
        if self.bootstrap.replicates < 2 {
            bail!("bootstrap.replicates must be at least 2");
        }
        self.simulate.validate()?;
        Ok(())
    }

    /// Weighting setup for `cohort`, falling back to the default designs.
    ///
    /// Stratified runs default to every covariate as a main effect. Pooled
    /// runs add the stratum indicators and every covariate-by-indicator
    /// interaction, so the single model is as flexible as one per stratum.
    pub fn weighting(&self, cohort: &Cohort) -> anyhow::Result<WeightingConfig> {
        let design = match (&self.designs, &self.design) {
            (Some(map), _) => {
                for level in cohort.stratum_levels() {
                    if !map.contains_key(level) {
                        bail!("`designs` has no entry for stratum '{level}'");
                    }
                }
                DesignSource::PerStratum(map.clone())
            }
            (None, Some(spec)) => DesignSource::Global(spec.clone()),
            (None, None) => DesignSource::Global(default_design(cohort, self.stratify)),
        };
        Ok(WeightingConfig {
            stratify: self.stratify,
            design,
            truncation: self.truncation,
            fit: self.fit,
        })
    }
}

pub fn default_design(cohort: &Cohort, stratify: bool) -> DesignSpec {
    let covariates = cohort.covariate_names();
    if stratify {
        return DesignSpec::main(covariates);
    }
    let indicators = cohort.stratum_indicator_names();
    let mut spec = DesignSpec::main(&[covariates, &indicators[..]].concat());
    for ind in &indicators {
        for c in covariates {
            spec = spec.with_interaction(c, ind);
        }
    }
    spec
}
