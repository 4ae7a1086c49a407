//! Central finite-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::{Gradients, ParamStore};
use crate::Result;

pub const DEFAULT_EPS: f64 = 1e-5;

/// `|a - n| / max(|a|, |n|, 1e-8)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Which coordinates of each parameter are perturbed.
#[derive(Clone, Copy, Debug)]
pub enum Coordinates {
    All,
    /// At most `per_param` coordinates per parameter, drawn without replacement.
    Sample { per_param: usize, seed: u64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
    pub checked: usize,
}

/// Compares `analytic` against `(f(θ+ε) − f(θ−ε)) / 2ε` coordinate by coordinate.
pub fn grad_check<F>(
    store: &ParamStore,
    analytic: &Gradients,
    f: F,
    eps: f64,
    coords: Coordinates,
) -> Result<GradCheckReport>
where
    F: Fn(&ParamStore) -> Result<f64>,
{
    grad_check_excluding(store, analytic, f, eps, coords, |_, _| false)
}

/// [`grad_check`] skipping coordinates for which `frozen(name, flat)` holds,
/// such as an embedding row that never receives gradient.
pub fn grad_check_excluding<F, X>(
    store: &ParamStore,
    analytic: &Gradients,
    f: F,
    eps: f64,
    coords: Coordinates,
    frozen: X,
) -> Result<GradCheckReport>
where
    F: Fn(&ParamStore) -> Result<f64>,
    X: Fn(&str, usize) -> bool,
{
    let mut probe = store.clone();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: None,
        analytic_at_worst: 0.0,
        numeric_at_worst: 0.0,
        checked: 0,
    };
    let mut rng = match coords {
        Coordinates::Sample { seed, .. } => Some(ChaCha8Rng::seed_from_u64(seed)),
        Coordinates::All => None,
    };
    let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
    for id in ids {
        let n = store.get(id).value.len();
        let picks: Vec<usize> = match (&coords, rng.as_mut()) {
            (Coordinates::Sample { per_param, .. }, Some(rng)) if n > *per_param => {
                let mut v = sample(rng, n, *per_param).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..n).collect(),
        };
        for flat in picks {
            if frozen(&store.get(id).name, flat) {
                continue;
            }
            let orig = store.get(id).value.as_slice()[flat];
            probe.get_mut(id).value.as_mut_slice()[flat] = orig + eps;
            let plus = f(&probe)?;
            probe.get_mut(id).value.as_mut_slice()[flat] = orig - eps;
            let minus = f(&probe)?;
            probe.get_mut(id).value.as_mut_slice()[flat] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic.scalar(id, flat);
            let err = relative_error(a, numeric);
            report.checked += 1;
            if err > report.max_relative_error || report.worst.is_none() {
                report.max_relative_error = err;
                report.worst = Some((store.get(id).name.clone(), flat));
                report.analytic_at_worst = a;
                report.numeric_at_worst = numeric;
            }
        }
    }
    Ok(report)
}
