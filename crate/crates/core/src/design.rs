//! Design matrices for propensity and outcome models.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::cohort::Cohort;
use crate::error::{Error, Result};

/// Model terms: an intercept, main effects and pairwise interactions.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignSpec {
    #[serde(rename = "main", default)]
    pub main_effects: Vec<String>,
    #[serde(default)]
    pub interactions: Vec<(String, String)>,
}

impl DesignSpec {
    pub fn main<S: AsRef<str>>(names: &[S]) -> DesignSpec {
        DesignSpec {
            main_effects: names.iter().map(|s| s.as_ref().to_string()).collect(),
            interactions: Vec::new(),
        }
    }

    pub fn with_interaction(mut self, a: &str, b: &str) -> DesignSpec {
        self.interactions.push((a.to_string(), b.to_string()));
        self
    }

    /// Number of columns including the intercept.
    pub fn n_columns(&self) -> usize {
        1 + self.main_effects.len() + self.interactions.len()
    }

    pub fn labels(&self) -> Vec<String> {
        let mut labels = vec!["(Intercept)".to_string()];
        labels.extend(self.main_effects.iter().cloned());
        labels.extend(self.interactions.iter().map(|(a, b)| format!("{a}:{b}")));
        labels
    }

    pub fn validate(&self, cohort: &Cohort) -> Result<()> {
        let check = |name: &str| {
            cohort
                .covariate_index(name)
                .map(|_| ())
                .ok_or_else(|| Error::Spec(format!("unknown covariate '{name}'")))
        };
        self.main_effects.iter().try_for_each(|n| check(n))?;
        for (a, b) in &self.interactions {
            if a == b {
                return Err(Error::Spec(format!(
                    "interaction '{a}:{b}' repeats a covariate"
                )));
            }
            check(a)?;
            check(b)?;
        }
        Ok(())
    }
}

/// Numeric design matrix with one label per column.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub matrix: DMatrix<f64>,
    pub labels: Vec<String>,
}

impl DesignMatrix {
    pub fn new(matrix: DMatrix<f64>, labels: Vec<String>) -> Result<DesignMatrix> {
        if matrix.ncols() != labels.len() {
            return Err(Error::Dimension(format!(
                "{} labels for {} columns",
                labels.len(),
                matrix.ncols()
            )));
        }
        Ok(DesignMatrix { matrix, labels })
    }

    pub fn nrows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.matrix.ncols()
    }
}

/// Column 0 is the intercept, then main effects, then interaction products.
/// Collinearity is not checked here.
pub fn build_design_matrix(cohort: &Cohort, spec: &DesignSpec) -> Result<DesignMatrix> {
    spec.validate(cohort)?;
    let n = cohort.len();
    let col = |name: &str| cohort.covariate_index(name).expect("validated");
    let mains: Vec<usize> = spec.main_effects.iter().map(|m| col(m)).collect();
    let pairs: Vec<(usize, usize)> = spec
        .interactions
        .iter()
        .map(|(a, b)| (col(a), col(b)))
        .collect();

    let p = spec.n_columns();
    let patients = cohort.patients();
    let matrix = DMatrix::from_fn(n, p, |i, j| {
        let x = &patients[i].covariates;
        match j {
            0 => 1.0,
            j if j <= mains.len() => x[mains[j - 1]],
            j => {
                let (a, b) = pairs[j - 1 - mains.len()];
                x[a] * x[b]
            }
        }
    });
    DesignMatrix::new(matrix, spec.labels())
}
