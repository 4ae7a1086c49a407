//! Ordinary least squares through a Householder QR factorization.

use super::dist::{f_upper_p, t_two_sided_p};
use crate::{Error, Result};

/// Columns whose QR diagonal falls below this fraction of the column norm
/// are treated as linearly dependent on the preceding ones.
const RANK_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct OlsFit {
    /// Intercept first (when fitted), then one per predictor.
    pub coefficients: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub p_values: Vec<f64>,
    pub ss_res: f64,
    pub ss_tot: f64,
    pub r_squared: f64,
    pub f: f64,
    pub f_p_value: f64,
    pub n: usize,
    /// Number of predictors, excluding the intercept.
    pub k: usize,
}

/// Regresses `y` on `predictors` (each a column of length `n`), optionally
/// with an intercept. `names` label predictors in errors.
pub fn ols(predictors: &[Vec<f64>], names: &[String], y: &[f64], intercept: bool) -> Result<OlsFit> {
    let n = y.len();
    let k = predictors.len();
    let p = k + usize::from(intercept);
    if names.len() != k || predictors.iter().any(|c| c.len() != n) {
        return Err(Error::shape("ols", "predictor columns and names must match y"));
    }
    if n <= p {
        return Err(Error::Validation(format!(
            "{n} observations are too few for {p} coefficients"
        )));
    }
    // Row-major n x p design.
    let mut a = vec![0.0; n * p];
    for i in 0..n {
        let mut j = 0;
        if intercept {
            a[i * p] = 1.0;
            j = 1;
        }
        for c in predictors {
            a[i * p + j] = c[i];
            j += 1;
        }
    }
    let col_norms: Vec<f64> = (0..p)
        .map(|j| (0..n).map(|i| a[i * p + j].powi(2)).sum::<f64>().sqrt())
        .collect();
    let design = a.clone();
    let mut qty = y.to_vec();

    for j in 0..p {
        let norm = (j..n).map(|i| a[i * p + j].powi(2)).sum::<f64>().sqrt();
        if norm <= RANK_TOL * col_norms[j] || col_norms[j] == 0.0 {
            return Err(singular(j, intercept, names));
        }
        let alpha = if a[j * p + j] > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = (j..n).map(|i| a[i * p + j]).collect();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        if vnorm2 > 0.0 {
            for c in j..p {
                let dot: f64 = (j..n).map(|i| v[i - j] * a[i * p + c]).sum();
                let s = 2.0 * dot / vnorm2;
                for i in j..n {
                    a[i * p + c] -= s * v[i - j];
                }
            }
            let dot: f64 = (j..n).map(|i| v[i - j] * qty[i]).sum();
            let s = 2.0 * dot / vnorm2;
            for i in j..n {
                qty[i] -= s * v[i - j];
            }
        }
        if a[j * p + j].abs() <= RANK_TOL * col_norms[j] {
            return Err(singular(j, intercept, names));
        }
    }

    let r = |i: usize, j: usize| a[i * p + j];
    let mut beta = vec![0.0; p];
    for i in (0..p).rev() {
        let s: f64 = (i + 1..p).map(|j| r(i, j) * beta[j]).sum();
        beta[i] = (qty[i] - s) / r(i, i);
    }
    // R⁻¹, upper triangular, column by column.
    let mut rinv = vec![0.0; p * p];
    for c in 0..p {
        for i in (0..=c).rev() {
            let rhs = if i == c { 1.0 } else { 0.0 };
            let s: f64 = (i + 1..=c).map(|j| r(i, j) * rinv[j * p + c]).sum();
            rinv[i * p + c] = (rhs - s) / r(i, i);
        }
    }

    let ss_res: f64 = (0..n)
        .map(|i| {
            let fitted: f64 = (0..p).map(|j| design[i * p + j] * beta[j]).sum();
            (y[i] - fitted).powi(2)
        })
        .sum();
    let ss_tot: f64 = if intercept {
        let mean = y.iter().sum::<f64>() / n as f64;
        y.iter().map(|v| (v - mean).powi(2)).sum()
    } else {
        y.iter().map(|v| v * v).sum()
    };
    let df_res = (n - p) as f64;
    let sigma2 = ss_res / df_res;
    let std_errors: Vec<f64> = (0..p)
        .map(|i| (sigma2 * (i..p).map(|c| rinv[i * p + c].powi(2)).sum::<f64>()).sqrt())
        .collect();
    let p_values = beta
        .iter()
        .zip(&std_errors)
        .map(|(b, se)| t_two_sided_p(b / se, df_res))
        .collect();
    let r_squared = if ss_tot > 0.0 { (1.0 - ss_res / ss_tot).clamp(0.0, 1.0) } else { 0.0 };
    let (f, f_p_value) = if k == 0 {
        (0.0, 1.0)
    } else {
        let f = (r_squared / k as f64) / ((1.0 - r_squared) / df_res);
        (f, f_upper_p(f, k as f64, df_res))
    };
    Ok(OlsFit {
        coefficients: beta,
        std_errors,
        p_values,
        ss_res,
        ss_tot,
        r_squared,
        f,
        f_p_value,
        n,
        k,
    })
}

fn singular(col: usize, intercept: bool, names: &[String]) -> Error {
    let label = |j: usize| -> String {
        if intercept && j == 0 {
            "intercept".into()
        } else {
            names[j - usize::from(intercept)].clone()
        }
    };
    let earlier: Vec<String> = (0..col).map(label).collect();
    if earlier.is_empty() {
        Error::Singular(format!("{} has no variation", label(col)))
    } else {
        Error::Singular(format!(
            "{} is collinear with {}",
            label(col),
            earlier.join(", ")
        ))
    }
}
