//! Test-only oracles that share no code with the library's numerical paths.
#![allow(dead_code)]

use rand::Rng;
use stratw::{Cohort, PatientRecord};

/// Bernoulli log-likelihood of `beta` for row-major design `x`.
pub fn log_likelihood(x: &[Vec<f64>], z: &[bool], beta: &[f64]) -> f64 {
    x.iter()
        .zip(z)
        .map(|(row, &zi)| {
            let eta: f64 = row.iter().zip(beta).map(|(a, b)| a * b).sum();
            let log1pexp = if eta > 30.0 {
                eta
            } else {
                (1.0 + eta.exp()).ln()
            };
            (if zi { eta } else { 0.0 }) - log1pexp
        })
        .sum()
}

/// Nelder-Mead minimiser with restarts around the incumbent.
pub fn nelder_mead<F: Fn(&[f64]) -> f64>(f: F, x0: &[f64]) -> Vec<f64> {
    let d = x0.len();
    let mut best = x0.to_vec();
    let mut step = 1.0;
    for _restart in 0..60 {
        let mut simplex: Vec<Vec<f64>> = vec![best.clone()];
        for j in 0..d {
            let mut v = best.clone();
            v[j] += step;
            simplex.push(v);
        }
        let mut values: Vec<f64> = simplex.iter().map(|v| f(v)).collect();
        for _ in 0..20_000 {
            let mut order: Vec<usize> = (0..=d).collect();
            order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
            simplex = order.iter().map(|&i| simplex[i].clone()).collect();
            values = order.iter().map(|&i| values[i]).collect();
            let spread = values[d] - values[0];
            let size = simplex
                .iter()
                .skip(1)
                .map(|v| {
                    v.iter()
                        .zip(&simplex[0])
                        .map(|(a, b)| (a - b).abs())
                        .fold(0.0, f64::max)
                })
                .fold(0.0, f64::max);
            if spread <= 1e-16 * (1.0 + values[0].abs()) && size < 1e-10 {
                break;
            }
            let centroid: Vec<f64> = (0..d)
                .map(|j| simplex[..d].iter().map(|v| v[j]).sum::<f64>() / d as f64)
                .collect();
            let along = |t: f64| -> Vec<f64> {
                (0..d)
                    .map(|j| centroid[j] + t * (simplex[d][j] - centroid[j]))
                    .collect()
            };
            let xr = along(-1.0);
            let fr = f(&xr);
            if fr < values[0] {
                let xe = along(-2.0);
                let fe = f(&xe);
                if fe < fr {
                    simplex[d] = xe;
                    values[d] = fe;
                } else {
                    simplex[d] = xr;
                    values[d] = fr;
                }
            } else if fr < values[d - 1] {
                simplex[d] = xr;
                values[d] = fr;
            } else {
                let xc = if fr < values[d] {
                    along(-0.5)
                } else {
                    along(0.5)
                };
                let fc = f(&xc);
                if fc < values[d].min(fr) {
                    simplex[d] = xc;
                    values[d] = fc;
                } else {
                    for i in 1..=d {
                        simplex[i] = (0..d)
                            .map(|j| simplex[0][j] + 0.5 * (simplex[i][j] - simplex[0][j]))
                            .collect();
                        values[i] = f(&simplex[i]);
                    }
                }
            }
        }
        let moved = simplex[0]
            .iter()
            .zip(&best)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if f(&simplex[0]) <= f(&best) {
            best = simplex[0].clone();
        }
        if moved < 1e-11 && step < 1e-3 {
            break;
        }
        step = (step * 0.3).max(1e-6);
    }
    best
}

/// Maximiser of the Bernoulli log-likelihood via [`nelder_mead`].
pub fn logistic_mle_oracle(x: &[Vec<f64>], z: &[bool]) -> Vec<f64> {
    let p = x[0].len();
    nelder_mead(|b| -log_likelihood(x, z, b), &vec![0.0; p])
}

/// Solves `A v = b` by Gaussian elimination with partial pivoting.
pub fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        let (top, rest) = a.split_at_mut(col + 1);
        let pivot_row = &top[col];
        for (k, row) in rest.iter_mut().enumerate() {
            let r = col + 1 + k;
            let factor = row[col] / pivot_row[col];
            for (x, p) in row[col..].iter_mut().zip(&pivot_row[col..]) {
                *x -= factor * p;
            }
            b[r] -= factor * b[col];
        }
    }
    let mut v = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * v[c]).sum();
        v[r] = (b[r] - s) / a[r][r];
    }
    v
}

/// Weighted least squares through the normal equations `XᵀWX β = XᵀWy`.
pub fn wls_normal_equations(x: &[Vec<f64>], w: &[f64], y: &[f64]) -> Vec<f64> {
    let p = x[0].len();
    let mut a = vec![vec![0.0; p]; p];
    let mut b = vec![0.0; p];
    for ((row, &wi), &yi) in x.iter().zip(w).zip(y) {
        for j in 0..p {
            b[j] += wi * row[j] * yi;
            for k in 0..p {
                a[j][k] += wi * row[j] * row[k];
            }
        }
    }
    solve_dense(a, b)
}

/// Random two-arm cohort: `strata` strata, each with 2..=max_per_arm patients
/// per arm, covariates `x1` (continuous) and `x2` (binary), outcome `y`.
pub fn random_cohort<R: Rng>(rng: &mut R, strata: usize, max_per_arm: usize) -> Cohort {
    let mut patients = Vec::new();
    for s in 0..strata {
        for arm in [false, true] {
            let n = rng.gen_range(2..=max_per_arm);
            for _ in 0..n {
                let x1: f64 = rng.gen_range(-2.0..2.0) + if arm { 0.5 } else { 0.0 };
                let x2 = if rng.gen_bool(0.4) { 1.0 } else { 0.0 };
                patients.push(PatientRecord {
                    id: format!("r{}", patients.len()),
                    stratum: format!("S{}", s + 1),
                    exposure: arm,
                    covariates: vec![x1, x2],
                    outcome: Some(
                        2.0 * x1 + rng.gen_range(-1.0..1.0) + if arm { 1.0 } else { 0.0 },
                    ),
                });
            }
        }
    }
    // interleave so that record order is not grouped by cell
    let len = patients.len();
    for i in (1..len).rev() {
        let j = rng.gen_range(0..=i);
        patients.swap(i, j);
    }
    Cohort::new(vec!["x1".into(), "x2".into()], patients).unwrap()
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}
