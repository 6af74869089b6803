//! Subcommand implementations. Each writes its artefacts into the output
//! directory and prints the paths it wrote.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::Serialize;
use stratw::diagnostics::{
    balance_report, overlap_summary, weight_diagnostics, BalanceOptions, BalanceReport,
    OverlapSummary, Scope, WeightDiagnostics,
};
use stratw::estimation::{
    bootstrap_effect, sandwich_effect, stratum_effects, EffectEstimate, PipelineConfig,
};
use stratw::simulate::{export_fig1_data, simulate_cohort};
use stratw::{load_csv, write_csv, Cohort, ColumnSchema, FitSummary, WeightSet};

use crate::config::{Format, RunConfig, SeChoice};

const TOP_WEIGHTS: usize = 5;

fn create(dir: &Path, name: &str) -> anyhow::Result<(PathBuf, BufWriter<File>)> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let path = dir.join(name);
    let file = File::create(&path).with_context(|| format!("cannot write {}", path.display()))?;
    Ok((path, BufWriter::new(file)))
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> anyhow::Result<()> {
    let (path, mut w) = create(dir, name)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    println!("wrote {}", path.display());
    Ok(())
}

fn write_text(dir: &Path, name: &str, text: &str) -> anyhow::Result<()> {
    let (path, mut w) = create(dir, name)?;
    w.write_all(text.as_bytes())?;
    w.flush()?;
    println!("wrote {}", path.display());
    Ok(())
}

/// A `y` column is taken as the outcome when none is configured.
fn effective_schema(path: &Path, schema: &ColumnSchema) -> anyhow::Result<ColumnSchema> {
    let mut schema = schema.clone();
    if schema.outcome.is_none() && !schema.covariates.iter().any(|c| c == "y") {
        let mut reader = csv::Reader::from_path(path)
            .with_context(|| format!("cannot read {}", path.display()))?;
        if reader.headers()?.iter().any(|h| h.trim() == "y") {
            schema.outcome = Some("y".into());
        }
    }
    Ok(schema)
}

pub fn load_cohort(cfg: &RunConfig) -> anyhow::Result<Cohort> {
    let Some(path) = &cfg.input else {
        bail!("no input cohort: pass --input or set `input` in the config");
    };
    let schema = effective_schema(path, &cfg.schema)?;
    Ok(load_csv(path, &schema)?)
}

pub fn simulate(cfg: &RunConfig) -> anyhow::Result<Cohort> {
    let cohort = simulate_cohort(&cfg.simulate)?;
    let (path, w) = create(&cfg.out_dir, "cohort.csv")?;
    write_csv(&cohort, w)?;
    println!("wrote {}", path.display());
    let (path, w) = create(&cfg.out_dir, "fig1.csv")?;
    export_fig1_data(&cohort, w)?;
    println!("wrote {}", path.display());
    print!("{}", crosstab(&cohort));
    Ok(cohort)
}

/// Stratum-by-exposure counts with column percentages.
fn crosstab(cohort: &Cohort) -> String {
    let counts = cohort.arm_counts();
    let (t0, t1) = counts
        .values()
        .fold((0, 0), |(a, b), &(n0, n1)| (a + n0, b + n1));
    let pct = |n: usize, t: usize| 100.0 * n as f64 / t as f64;
    let mut out = String::from("| Stratum | Unexposed | Exposed |\n|---|---|---|\n");
    for (s, &(n0, n1)) in &counts {
        out.push_str(&format!(
            "| {s} | {n0} ({:.1}%) | {n1} ({:.1}%) |\n",
            pct(n0, t0),
            pct(n1, t1)
        ));
    }
    out
}

#[derive(Serialize)]
struct WeighOutput<'a> {
    stratified: bool,
    stage_labels: &'a [String],
    fits: BTreeMap<String, FitSummary>,
    weights: WeightDiagnostics,
    overlap: OverlapSummary,
}

pub fn weigh(cfg: &RunConfig, cohort: &Cohort) -> anyhow::Result<WeightSet> {
    let ws = stratw::compute_weights(cohort, &cfg.weighting(cohort)?)?;
    let (path, w) = create(&cfg.out_dir, "weights.csv")?;
    ws.write_csv(cohort, w)?;
    println!("wrote {}", path.display());

    let mut fits: BTreeMap<String, FitSummary> = ws
        .per_stratum_fits
        .iter()
        .map(|(s, f)| (s.clone(), f.summary()))
        .collect();
    if let Some(f) = &ws.pooled_fit {
        fits.insert("pooled".into(), f.summary());
    }
    for (name, fit) in &fits {
        if fit.separation_warning {
            eprintln!("warning: fitted probabilities near 0 or 1 in {name} model");
        }
    }
    let out = WeighOutput {
        stratified: ws.stratified,
        stage_labels: &ws.stage_labels,
        fits,
        weights: weight_diagnostics(cohort, ws.final_weights(), ws.clamped_scores(), TOP_WEIGHTS)?,
        overlap: overlap_summary(&ws.scores, &cohort.exposures())?,
    };
    write_json(&cfg.out_dir, "fits.json", &out)?;
    Ok(ws)
}

/// Overall report (covariates plus stratum indicators), then one per stratum.
pub fn balance_reports(
    cfg: &RunConfig,
    cohort: &Cohort,
    ws: &WeightSet,
) -> anyhow::Result<Vec<BalanceReport>> {
    let opts = BalanceOptions {
        weight_label: ws.final_label().to_string(),
        smd_threshold: cfg.smd_threshold,
    };
    let covariates: Vec<String> = if cfg.balance_covariates.is_empty() {
        cohort.covariate_names().to_vec()
    } else {
        cfg.balance_covariates.clone()
    };
    let augmented = cohort.with_stratum_indicators();
    let mut names = covariates.clone();
    names.extend(
        cohort
            .stratum_indicator_names()
            .into_iter()
            .filter(|n| !covariates.contains(n)),
    );
    let mut reports = vec![balance_report(
        &augmented,
        ws.final_weights(),
        &names,
        Scope::Overall,
        &opts,
    )?];
    for level in cohort.stratum_levels() {
        reports.push(balance_report(
            &augmented,
            ws.final_weights(),
            &covariates,
            Scope::Stratum(level.clone()),
            &opts,
        )?);
    }
    Ok(reports)
}

pub fn balance(cfg: &RunConfig, cohort: &Cohort, ws: &WeightSet) -> anyhow::Result<()> {
    let reports = balance_reports(cfg, cohort, ws)?;
    if cfg.formats.contains(&Format::Json) {
        write_json(&cfg.out_dir, "balance.json", &reports)?;
    }
    if cfg.formats.contains(&Format::Md) {
        let md: Vec<String> = reports
            .iter()
            .map(|r| format!("## Balance, {}\n\n{}", r.scope, r.to_markdown()))
            .collect();
        write_text(&cfg.out_dir, "balance.md", &md.join("\n"))?;
    }
    let flagged: Vec<String> = reports
        .iter()
        .flat_map(|r| {
            r.rows
                .iter()
                .filter(|row| row.flagged)
                .map(move |row| format!("{} ({})", row.name, r.scope))
        })
        .collect();
    if !flagged.is_empty() {
        eprintln!(
            "warning: |SMD| above {} after weighting: {}",
            cfg.smd_threshold,
            flagged.join(", ")
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct EstimateOutput {
    estimates: Vec<EffectEstimate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    stratum_effects: Option<BTreeMap<String, EffectEstimate>>,
}

fn effect_markdown(out: &EstimateOutput) -> String {
    let mut md =
        String::from("| Estimand | Method | Estimate | SE | 95% CI |\n|---|---|---:|---:|---|\n");
    let rows = out
        .estimates
        .iter()
        .chain(out.stratum_effects.iter().flat_map(|m| m.values()));
    for e in rows {
        let method = match e.method {
            stratw::estimation::SeMethod::Sandwich => "sandwich",
            stratw::estimation::SeMethod::Bootstrap => "bootstrap",
        };
        md.push_str(&format!(
            "| {} | {method} | {:.3} | {:.3} | [{:.3}, {:.3}] |\n",
            e.estimand, e.point, e.se, e.ci_low, e.ci_high
        ));
    }
    md
}

pub fn estimate(cfg: &RunConfig, cohort: &Cohort, ws: &WeightSet) -> anyhow::Result<()> {
    if !cohort.has_outcomes() {
        return Err(stratw::Error::Validation(
            "estimation needs an outcome column (set schema.outcome or --outcome)".into(),
        )
        .into());
    }
    let mut estimates = Vec::new();
    if matches!(cfg.se, SeChoice::Sandwich | SeChoice::Both) {
        estimates.push(sandwich_effect(cohort, ws, &cfg.extra_covariates)?);
    }
    if matches!(cfg.se, SeChoice::Bootstrap | SeChoice::Both) {
        let pipeline = PipelineConfig {
            weighting: cfg.weighting(cohort)?,
            extra_covariates: cfg.extra_covariates.clone(),
        };
        estimates.push(bootstrap_effect(
            cohort,
            &pipeline,
            cfg.bootstrap.replicates,
            cfg.bootstrap.seed,
        )?);
    }
    let out = EstimateOutput {
        estimates,
        stratum_effects: cfg
            .per_stratum
            .then(|| stratum_effects(cohort, ws))
            .transpose()?,
    };
    if cfg.formats.contains(&Format::Json) {
        write_json(&cfg.out_dir, "effect.json", &out)?;
    }
    if cfg.formats.contains(&Format::Md) {
        write_text(&cfg.out_dir, "effect.md", &effect_markdown(&out))?;
    }
    Ok(())
}
