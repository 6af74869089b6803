use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn stratw(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stratw"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn simulated(dir: &Path, extra: &[&str]) {
    let mut args = vec!["simulate", "--out-dir", "sim"];
    args.extend_from_slice(extra);
    let out = stratw(dir, &args);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
}

#[test]
fn simulate_writes_the_demonstration_cohort() {
    let dir = tempfile::tempdir().unwrap();
    simulated(dir.path(), &[]);
    let cohort = fs::read_to_string(dir.path().join("sim/cohort.csv")).unwrap();
    assert_eq!(cohort.lines().count(), 181);
    assert!(cohort.starts_with("id,stratum,Z,age,stage_IV\n"));
    let fig1 = fs::read_to_string(dir.path().join("sim/fig1.csv")).unwrap();
    assert_eq!(fig1.lines().count(), 181);

    let again = stratw(dir.path(), &["simulate", "--out-dir", "again"]);
    assert_eq!(code(&again), 0);
    assert_eq!(
        cohort,
        fs::read_to_string(dir.path().join("again/cohort.csv")).unwrap()
    );
    let stdout = String::from_utf8(again.stdout).unwrap();
    assert!(
        stdout.contains("| S1 | 30 (30.0%) | 50 (62.5%) |"),
        "{stdout}"
    );
}

#[test]
fn bad_config_exits_with_2() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.toml"), "stratfy = true\n").unwrap();
    let out = stratw(dir.path(), &["simulate", "--config", "bad.toml"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("stratfy"), "{}", stderr(&out));

    fs::write(
        dir.path().join("bad.toml"),
        "[simulate]\ngroup_sizes = [30, 0, 70, 30]\n",
    )
    .unwrap();
    assert_eq!(
        code(&stratw(dir.path(), &["simulate", "--config", "bad.toml"])),
        2
    );
}

fn parse_weights(path: &Path) -> Vec<BTreeMap<String, String>> {
    let mut reader = csv::Reader::from_path(path).unwrap();
    reader.deserialize().map(|r| r.unwrap()).collect()
}

#[test]
fn stratified_weigh_balances_arms_in_every_stratum() {
    let dir = tempfile::tempdir().unwrap();
    simulated(dir.path(), &[]);
    let out = stratw(
        dir.path(),
        &["weigh", "--input", "sim/cohort.csv", "--out-dir", "w"],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let fits = json(&dir.path().join("w/fits.json"));
    assert_eq!(fits["stratified"], true);
    assert!(fits["fits"]["S1"]["converged"].as_bool().unwrap());
    assert_eq!(fits["fits"]["S2"]["coefficients"][1]["term"], "age");

    let rows = parse_weights(&dir.path().join("w/weights.csv"));
    assert_eq!(rows.len(), 180);
    let mut cells: BTreeMap<(String, String), f64> = BTreeMap::new();
    let (mut raw, mut final_total) = (0.0, 0.0);
    for r in &rows {
        let w2: f64 = r["w_doubleprime"].parse().unwrap();
        *cells
            .entry((r["stratum"].clone(), r["Z"].clone()))
            .or_default() += w2;
        raw += r["w"].parse::<f64>().unwrap();
        final_total += w2;
    }
    for s in ["S1", "S2"] {
        let (a, b) = (
            cells[&(s.into(), "0".into())],
            cells[&(s.into(), "1".into())],
        );
        assert!((a - b).abs() <= 1e-10 * a, "{s}: {a} vs {b}");
    }
    assert!((raw - final_total).abs() <= 1e-8 * raw);
}

#[test]
fn unstratified_weigh_fits_one_model_with_interactions() {
    let dir = tempfile::tempdir().unwrap();
    simulated(dir.path(), &[]);
    let out = stratw(
        dir.path(),
        &[
            "weigh",
            "--input",
            "sim/cohort.csv",
            "--out-dir",
            "u",
            "--unstratified",
        ],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let fits = json(&dir.path().join("u/fits.json"));
    assert_eq!(fits["stratified"], false);
    let terms: Vec<&str> = fits["fits"]["pooled"]["coefficients"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["term"].as_str().unwrap())
        .collect();
    assert_eq!(
        terms,
        [
            "(Intercept)",
            "age",
            "stage_IV",
            "stratum_S2",
            "age:stratum_S2",
            "stage_IV:stratum_S2"
        ]
    );
    let header = fs::read_to_string(dir.path().join("u/weights.csv")).unwrap();
    assert!(header.lines().nth(1).unwrap().ends_with(",,"));
}

#[test]
fn single_arm_stratum_exits_with_3() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("c.csv"),
        "id,stratum,Z,age\n1,A,0,50\n2,A,1,60\n3,A,0,55\n4,B,0,70\n5,B,0,65\n",
    )
    .unwrap();
    let out = stratw(dir.path(), &["weigh", "--input", "c.csv"]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("'B'"), "{}", stderr(&out));
}

#[test]
fn collinear_covariates_exit_with_4() {
    let dir = tempfile::tempdir().unwrap();
    let mut text = String::from("id,stratum,Z,age,age2\n");
    for i in 0..20 {
        let age = 40 + (i * 7) % 30;
        text.push_str(&format!("{i},A,{},{age},{}\n", i % 2, 2 * age));
    }
    fs::write(dir.path().join("c.csv"), text).unwrap();
    let out = stratw(dir.path(), &["weigh", "--input", "c.csv"]);
    assert_eq!(code(&out), 4, "{}", stderr(&out));
    assert!(stderr(&out).contains("age2"), "{}", stderr(&out));
}

#[test]
fn balance_writes_overall_and_stratum_tables() {
    let dir = tempfile::tempdir().unwrap();
    simulated(dir.path(), &[]);
    let out = stratw(
        dir.path(),
        &[
            "balance",
            "--input",
            "sim/cohort.csv",
            "--out-dir",
            "b",
            "--format",
            "json,md",
        ],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let reports = json(&dir.path().join("b/balance.json"));
    let reports = reports.as_array().unwrap();
    assert_eq!(reports.len(), 3);
    assert_eq!(reports[0]["scope"]["kind"], "overall");
    let s2 = &reports[0]["rows"][2];
    assert_eq!(s2["name"], "stratum_S2");
    assert!(s2["adj_smd"].as_f64().unwrap().abs() < 1e-10);
    assert!((s2["unadj_smd"].as_f64().unwrap() + 0.6896).abs() < 1e-3);
    let md = fs::read_to_string(dir.path().join("b/balance.md")).unwrap();
    assert!(md.contains("Unadjusted Unexposed (N=100)"));
    assert!(md.contains("Adjusted Exposed (ESS="));

    let only_json = stratw(
        dir.path(),
        &[
            "balance",
            "--input",
            "sim/cohort.csv",
            "--out-dir",
            "j",
            "--format",
            "json",
        ],
    );
    assert_eq!(code(&only_json), 0);
    assert!(!dir.path().join("j/balance.md").exists());
}

#[test]
fn unknown_balance_covariate_exits_with_2() {
    let dir = tempfile::tempdir().unwrap();
    simulated(dir.path(), &[]);
    fs::write(
        dir.path().join("c.toml"),
        "balance_covariates = [\"bmi\"]\n",
    )
    .unwrap();
    let out = stratw(
        dir.path(),
        &["balance", "--input", "sim/cohort.csv", "--config", "c.toml"],
    );
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("bmi"));
}

#[test]
fn estimate_needs_an_outcome() {
    let dir = tempfile::tempdir().unwrap();
    simulated(dir.path(), &[]);
    let out = stratw(dir.path(), &["estimate", "--input", "sim/cohort.csv"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("outcome"));
}

const OUTCOME_CONFIG: &str = r#"
[simulate.outcome_model]
true_effects = [3.0, 7.0]
"#;

#[test]
fn run_with_outcomes_reports_sandwich_bootstrap_and_strata() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.toml"), OUTCOME_CONFIG).unwrap();
    let args = [
        "run",
        "--config",
        "run.toml",
        "--boot",
        "40",
        "--per-stratum",
        "--out-dir",
    ];
    let first = stratw(dir.path(), &[&args[..], &["a"]].concat());
    assert_eq!(code(&first), 0, "{}", stderr(&first));
    let effect = json(&dir.path().join("a/effect.json"));
    let est = effect["estimates"].as_array().unwrap();
    assert_eq!(est.len(), 2);
    assert_eq!(est[0]["method"], "sandwich");
    assert_eq!(est[1]["method"], "bootstrap");
    assert_eq!(est[1]["n_boot"], 40);
    assert_eq!(est[0]["estimand"], "ATE-marginal");
    assert!((est[0]["point"].as_f64().unwrap() - est[1]["point"].as_f64().unwrap()).abs() < 1e-12);
    assert_eq!(effect["stratum_effects"]["S2"]["estimand"], "stratum:S2");

    let second = stratw(dir.path(), &[&args[..], &["b"]].concat());
    assert_eq!(code(&second), 0);
    for name in [
        "effect.json",
        "balance.json",
        "fits.json",
        "weights.csv",
        "cohort.csv",
    ] {
        assert_eq!(
            fs::read(dir.path().join("a").join(name)).unwrap(),
            fs::read(dir.path().join("b").join(name)).unwrap(),
            "{name} differs between runs"
        );
    }
}

#[test]
fn outcome_column_is_picked_up_from_simulated_files() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("sim.toml"), OUTCOME_CONFIG).unwrap();
    simulated(dir.path(), &["--config", "sim.toml"]);
    let out = stratw(
        dir.path(),
        &[
            "estimate",
            "--input",
            "sim/cohort.csv",
            "--out-dir",
            "e",
            "--format",
            "json",
        ],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let effect = json(&dir.path().join("e/effect.json"));
    assert!(effect["estimates"][0]["se"].as_f64().unwrap() > 0.0);
    assert!(effect.get("stratum_effects").is_none());
}
