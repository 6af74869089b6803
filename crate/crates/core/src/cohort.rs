//! Patient-level cohort model and CSV ingestion.
//!
//! A [`Cohort`] is an ordered list of [`PatientRecord`]s sharing one covariate
//! layout. Record order is preserved by every operation in the crate so that
//! score and weight vectors line up positionally with the cohort.
//!
//! Categorical covariates named in the [`ColumnSchema`] are expanded to 0/1
//! indicator columns called `<column>_<level>`. Levels are sorted and the first
//! one is the reference level (dropped), so a `stage` column with values
//! `III`/`IV` becomes a single `stage_IV` indicator.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One patient: identifier, stratum, exposure indicator, covariates, outcome.
///
/// `covariates` is positional; its names live on the owning [`Cohort`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub id: String,
    pub stratum: String,
    pub exposure: bool,
    pub covariates: Vec<f64>,
    pub outcome: Option<f64>,
}

/// Maps CSV columns onto cohort roles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ColumnSchema {
    /// Identifier column. When absent, ids are the 1-based row numbers.
    pub id: Option<String>,
    pub exposure: String,
    pub stratum: String,
    /// Covariate columns, in order. Empty means "every column without another role".
    pub covariates: Vec<String>,
    /// Subset of `covariates` holding categorical values, expanded to indicators.
    pub categorical: Vec<String>,
    pub outcome: Option<String>,
}

impl Default for ColumnSchema {
    fn default() -> Self {
        ColumnSchema {
            id: Some("id".into()),
            exposure: "Z".into(),
            stratum: "stratum".into(),
            covariates: Vec::new(),
            categorical: Vec::new(),
            outcome: None,
        }
    }
}

/// Validated, immutable cohort.
#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    patients: Vec<PatientRecord>,
    covariate_names: Vec<String>,
    stratum_levels: Vec<String>,
}

impl Cohort {
    /// Builds a cohort, checking that every record carries one finite value per
    /// covariate and a finite outcome when present. Stratum levels are the
    /// sorted distinct stratum labels.
    pub fn new(covariate_names: Vec<String>, patients: Vec<PatientRecord>) -> Result<Cohort> {
        let mut seen = BTreeSet::new();
        for name in &covariate_names {
            if !seen.insert(name.as_str()) {
                return Err(Error::Validation(format!(
                    "duplicate covariate name '{name}'"
                )));
            }
        }
        for (row, p) in patients.iter().enumerate() {
            if p.covariates.len() != covariate_names.len() {
                return Err(Error::Validation(format!(
                    "record {} ('{}') has {} covariate values, expected {}",
                    row + 1,
                    p.id,
                    p.covariates.len(),
                    covariate_names.len()
                )));
            }
            if let Some(j) = p.covariates.iter().position(|v| !v.is_finite()) {
                return Err(Error::Validation(format!(
                    "record {} ('{}'): covariate '{}' is not finite",
                    row + 1,
                    p.id,
                    covariate_names[j]
                )));
            }
            if matches!(p.outcome, Some(y) if !y.is_finite()) {
                return Err(Error::Validation(format!(
                    "record {} ('{}'): outcome is not finite",
                    row + 1,
                    p.id
                )));
            }
        }
        let stratum_levels = patients
            .iter()
            .map(|p| p.stratum.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        Ok(Cohort {
            patients,
            covariate_names,
            stratum_levels,
        })
    }

    pub fn patients(&self) -> &[PatientRecord] {
        &self.patients
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn stratum_levels(&self) -> &[String] {
        &self.stratum_levels
    }

    pub fn len(&self) -> usize {
        self.patients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patients.is_empty()
    }

    pub fn covariate_index(&self, name: &str) -> Option<usize> {
        self.covariate_names.iter().position(|n| n == name)
    }

    /// Values of one covariate across all patients.
    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let j = self
            .covariate_index(name)
            .ok_or_else(|| Error::Spec(format!("unknown covariate '{name}'")))?;
        Ok(self.patients.iter().map(|p| p.covariates[j]).collect())
    }

    pub fn exposures(&self) -> Vec<bool> {
        self.patients.iter().map(|p| p.exposure).collect()
    }

    pub fn strata(&self) -> Vec<&str> {
        self.patients.iter().map(|p| p.stratum.as_str()).collect()
    }

    pub fn ids(&self) -> Vec<&str> {
        self.patients.iter().map(|p| p.id.as_str()).collect()
    }

    /// Outcomes for every patient, or an error listing the ids that lack one.
    pub fn outcomes(&self) -> Result<Vec<f64>> {
        let missing: Vec<String> = self
            .patients
            .iter()
            .filter(|p| p.outcome.is_none())
            .map(|p| p.id.clone())
            .collect();
        if !missing.is_empty() {
            return Err(Error::MissingOutcome { ids: missing });
        }
        Ok(self.patients.iter().filter_map(|p| p.outcome).collect())
    }

    pub fn has_outcomes(&self) -> bool {
        !self.patients.is_empty() && self.patients.iter().all(|p| p.outcome.is_some())
    }

    /// Record positions grouped by stratum, in stratum-level order.
    pub fn stratum_indices(&self) -> BTreeMap<String, Vec<usize>> {
        let mut out: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, p) in self.patients.iter().enumerate() {
            out.entry(p.stratum.clone()).or_default().push(i);
        }
        out
    }

    /// (unexposed, exposed) counts per stratum.
    pub fn arm_counts(&self) -> BTreeMap<String, (usize, usize)> {
        let mut out: BTreeMap<String, (usize, usize)> = BTreeMap::new();
        for p in &self.patients {
            let cell = out.entry(p.stratum.clone()).or_default();
            if p.exposure {
                cell.1 += 1;
            } else {
                cell.0 += 1;
            }
        }
        out
    }

    /// Fails with a positivity error naming the first stratum that lacks an arm.
    pub fn check_positivity(&self) -> Result<()> {
        for (stratum, (n0, n1)) in self.arm_counts() {
            if n0 == 0 || n1 == 0 {
                let detail = if n1 == 0 {
                    format!("no exposed patients ({n0} unexposed)")
                } else {
                    format!("no unexposed patients ({n1} exposed)")
                };
                return Err(Error::Positivity { stratum, detail });
            }
        }
        Ok(())
    }

    /// Cohort made of the records at `indices`, in that order (repeats allowed).
    pub fn subset(&self, indices: &[usize]) -> Result<Cohort> {
        let patients = indices
            .iter()
            .map(|&i| {
                self.patients.get(i).cloned().ok_or_else(|| {
                    Error::Dimension(format!("record index {i} out of range ({})", self.len()))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Cohort::new(self.covariate_names.clone(), patients)
    }

    /// Partition by stratum. Each part keeps the original ids and order.
    pub fn split_by_stratum(&self) -> BTreeMap<String, Cohort> {
        self.stratum_indices()
            .into_iter()
            .map(|(stratum, idx)| {
                let part = Cohort {
                    patients: idx.iter().map(|&i| self.patients[i].clone()).collect(),
                    covariate_names: self.covariate_names.clone(),
                    stratum_levels: vec![stratum.clone()],
                };
                (stratum, part)
            })
            .collect()
    }

    /// Names of the stratum indicator columns added by [`Cohort::with_stratum_indicators`].
    pub fn stratum_indicator_names(&self) -> Vec<String> {
        self.stratum_levels
            .iter()
            .skip(1)
            .map(|level| format!("stratum_{level}"))
            .collect()
    }

    /// Copy of the cohort with 0/1 indicators for every non-reference stratum
    /// level appended as covariates. Indicators already present are left alone.
    pub fn with_stratum_indicators(&self) -> Cohort {
        let mut names = self.covariate_names.clone();
        let mut added = Vec::new();
        for (level, name) in self
            .stratum_levels
            .iter()
            .skip(1)
            .zip(self.stratum_indicator_names())
        {
            if !names.contains(&name) {
                names.push(name);
                added.push(level.clone());
            }
        }
        let patients = self
            .patients
            .iter()
            .map(|p| {
                let mut p = p.clone();
                p.covariates.extend(
                    added
                        .iter()
                        .map(|l| if &p.stratum == l { 1.0 } else { 0.0 }),
                );
                p
            })
            .collect();
        Cohort {
            patients,
            covariate_names: names,
            stratum_levels: self.stratum_levels.clone(),
        }
    }

    /// Schema that reads back what [`write_csv`] produces.
    pub fn csv_schema(&self) -> ColumnSchema {
        ColumnSchema {
            id: Some("id".into()),
            exposure: "Z".into(),
            stratum: "stratum".into(),
            covariates: self.covariate_names.clone(),
            categorical: Vec::new(),
            outcome: self
                .patients
                .iter()
                .any(|p| p.outcome.is_some())
                .then(|| "y".into()),
        }
    }
}

/// Reads and validates a cohort CSV file.
pub fn load_csv(path: impl AsRef<Path>, schema: &ColumnSchema) -> Result<Cohort> {
    let file = std::fs::File::open(path.as_ref())?;
    read_csv(file, schema)
}

/// Reads a cohort from any CSV source. See [`load_csv`].
pub fn read_csv<R: Read>(source: R, schema: &ColumnSchema) -> Result<Cohort> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(source);
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let find = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("missing column '{name}'")))
    };

    let id_col = schema.id.as_deref().map(find).transpose()?;
    let z_col = find(&schema.exposure)?;
    let s_col = find(&schema.stratum)?;
    let y_col = schema.outcome.as_deref().map(find).transpose()?;

    let covariates: Vec<String> = if schema.covariates.is_empty() {
        let mut taken = vec![Some(z_col), Some(s_col), id_col, y_col];
        taken.retain(Option::is_some);
        headers
            .iter()
            .enumerate()
            .filter(|(i, _)| !taken.contains(&Some(*i)))
            .map(|(_, h)| h.clone())
            .collect()
    } else {
        schema.covariates.clone()
    };
    if covariates.is_empty() {
        return Err(Error::Schema(
            "at least one covariate column is required".into(),
        ));
    }
    for cat in &schema.categorical {
        if !covariates.contains(cat) {
            return Err(Error::Schema(format!(
                "categorical column '{cat}' is not listed as a covariate"
            )));
        }
    }
    let cov_cols = covariates
        .iter()
        .map(|c| find(c))
        .collect::<Result<Vec<_>>>()?;

    let rows = reader
        .records()
        .collect::<std::result::Result<Vec<_>, _>>()?;

    // Levels of each categorical covariate, sorted; the first is the reference.
    let mut levels: BTreeMap<&str, Vec<String>> = BTreeMap::new();
    for cat in &schema.categorical {
        let col = find(cat)?;
        let mut set = BTreeSet::new();
        for (r, rec) in rows.iter().enumerate() {
            let cell = rec.get(col).unwrap_or("");
            if cell.is_empty() {
                return Err(Error::Parse {
                    row: r + 1,
                    message: format!("missing value in column '{cat}'"),
                });
            }
            set.insert(cell.to_string());
        }
        levels.insert(cat.as_str(), set.into_iter().collect());
    }

    let mut names = Vec::new();
    for c in &covariates {
        match levels.get(c.as_str()) {
            Some(lv) => names.extend(lv.iter().skip(1).map(|l| format!("{c}_{l}"))),
            None => names.push(c.clone()),
        }
    }

    let mut patients = Vec::with_capacity(rows.len());
    for (r, rec) in rows.iter().enumerate() {
        let row = r + 1;
        let cell = |col: usize| rec.get(col).unwrap_or("");

        let z_raw = cell(z_col);
        let exposure = match z_raw.parse::<f64>() {
            Ok(0.0) => false,
            Ok(1.0) => true,
            _ => {
                return Err(Error::Validation(format!(
                    "row {row}: exposure value '{z_raw}' is not 0 or 1"
                )))
            }
        };
        let stratum = cell(s_col);
        if stratum.is_empty() {
            return Err(Error::Parse {
                row,
                message: format!("missing value in column '{}'", schema.stratum),
            });
        }

        let mut values = Vec::with_capacity(names.len());
        for (name, &col) in covariates.iter().zip(&cov_cols) {
            let raw = cell(col);
            if let Some(lv) = levels.get(name.as_str()) {
                values.extend(lv.iter().skip(1).map(|l| if l == raw { 1.0 } else { 0.0 }));
                continue;
            }
            if raw.is_empty() {
                return Err(Error::Parse {
                    row,
                    message: format!("missing value in column '{name}'"),
                });
            }
            match raw.parse::<f64>() {
                Ok(v) if v.is_finite() => values.push(v),
                _ => {
                    return Err(Error::Parse {
                        row,
                        message: format!("non-numeric value '{raw}' in column '{name}'"),
                    })
                }
            }
        }

        let outcome = match y_col.map(cell) {
            None | Some("") => None,
            Some(raw) => match raw.parse::<f64>() {
                Ok(v) if v.is_finite() => Some(v),
                _ => {
                    return Err(Error::Parse {
                        row,
                        message: format!("non-numeric outcome '{raw}'"),
                    })
                }
            },
        };

        let id = match id_col {
            Some(col) => cell(col).to_string(),
            None => row.to_string(),
        };
        patients.push(PatientRecord {
            id,
            stratum: stratum.to_string(),
            exposure,
            covariates: values,
            outcome,
        });
    }

    let cohort = Cohort::new(names, patients)?;
    if cohort.is_empty() {
        return Err(Error::Validation("cohort has no rows".into()));
    }
    cohort.check_positivity()?;
    Ok(cohort)
}

/// Writes `id,stratum,Z,<covariates>[,y]`. Values use the shortest
/// representation that parses back to the same `f64`.
pub fn write_csv<W: Write>(cohort: &Cohort, sink: W) -> Result<()> {
    let with_outcome = cohort.patients.iter().any(|p| p.outcome.is_some());
    let mut w = csv::Writer::from_writer(sink);
    let mut header = vec!["id".to_string(), "stratum".into(), "Z".into()];
    header.extend(cohort.covariate_names.iter().cloned());
    if with_outcome {
        header.push("y".into());
    }
    w.write_record(&header)?;
    for p in &cohort.patients {
        let mut rec = vec![
            p.id.clone(),
            p.stratum.clone(),
            if p.exposure { "1".into() } else { "0".into() },
        ];
        rec.extend(p.covariates.iter().map(|v| v.to_string()));
        if with_outcome {
            rec.push(p.outcome.map(|y| y.to_string()).unwrap_or_default());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
