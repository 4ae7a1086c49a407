mod common;

use common::{closed_form_r, normal_equation_fit};
use entrain::stats::{
    correlate_measures, ols, pearson, stepwise_regression, zscore, OutcomeTable,
};
use entrain::stats::dist::{f_upper_p, inc_beta, ln_gamma, t_two_sided_p};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, FisherSnedecor, StudentsT};

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-3.0..3.0)).collect()
}

#[test]
fn distributions_agree_with_statrs() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..500 {
        let df = rng.random_range(1.0..200.0);
        let t: f64 = rng.random_range(-8.0..8.0);
        let want = 2.0 * StudentsT::new(0.0, 1.0, df).unwrap().cdf(-t.abs());
        assert!((t_two_sided_p(t, df) - want).abs() < 1e-10, "t={t} df={df}");

        let (d1, d2) = (rng.random_range(1.0..20.0), rng.random_range(1.0..300.0));
        let f = rng.random_range(0.0..15.0);
        let want = 1.0 - FisherSnedecor::new(d1, d2).unwrap().cdf(f);
        assert!((f_upper_p(f, d1, d2) - want).abs() < 1e-10, "f={f} d1={d1} d2={d2}");

        let (a, b, x) = (rng.random_range(0.1..50.0), rng.random_range(0.1..50.0), rng.random());
        let want = statrs::function::beta::beta_reg(a, b, x);
        assert!((inc_beta(a, b, x) - want).abs() < 1e-10, "a={a} b={b} x={x}");

        let z = rng.random_range(0.01..100.0);
        assert!((ln_gamma(z) - statrs::function::gamma::ln_gamma(z)).abs() < 1e-10);
    }
}

#[test]
fn pearson_matches_closed_form_and_statrs_p() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..1000 {
        let n = rng.random_range(3..60);
        let x = random_vec(&mut rng, n);
        let noise = random_vec(&mut rng, n);
        let w: f64 = rng.random_range(-1.0..1.0);
        let y: Vec<f64> = x.iter().zip(&noise).map(|(a, e)| w * a + e).collect();
        let (r, p) = pearson(&x, &y).unwrap();
        let want = closed_form_r(&x, &y);
        assert!((r - want).abs() < 1e-10);
        let df = (n - 2) as f64;
        let t = want * (df / (1.0 - want * want)).sqrt();
        let want_p = 2.0 * StudentsT::new(0.0, 1.0, df).unwrap().cdf(-t.abs());
        assert!((p - want_p).abs() < 1e-9, "{p} vs {want_p}");
    }
}

#[test]
fn single_iv_stepwise_matches_normal_equations() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let n = rng.random_range(10..80);
        let x = random_vec(&mut rng, n);
        let y: Vec<f64> = x.iter().map(|a| 1.5 * a + rng.random_range(-1.0..1.0)).collect();
        let (slope, r2, f) = normal_equation_fit(&x, &y);
        let raw = ols(std::slice::from_ref(&x), &["x".into()], &y, true).unwrap();
        assert!((raw.coefficients[1] - slope).abs() < 1e-8);
        assert!((raw.r_squared - r2).abs() < 1e-8);
        assert!((raw.f - f).abs() < 1e-8 * f.max(1.0));

        let rep = stepwise_regression(&[("x".into(), x.clone())], "y", &y, 0.05).unwrap();
        assert_eq!(rep.selected, ["x"]);
        assert!((rep.r_squared - r2).abs() < 1e-8);
        assert!((rep.f - f).abs() < 1e-8 * f.max(1.0));
        let (zx, zy) = (zscore(&x).unwrap(), zscore(&y).unwrap());
        let (zslope, _, _) = normal_equation_fit(&zx, &zy);
        assert!((rep.betas[0] - zslope).abs() < 1e-8);
        assert!((rep.betas[0] - closed_form_r(&x, &y)).abs() < 1e-10);
    }
}

#[test]
fn noise_rarely_enters() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let trials = 400;
    let mut entered = 0;
    for _ in 0..trials {
        let y = random_vec(&mut rng, 60);
        let x = random_vec(&mut rng, 60);
        let rep = stepwise_regression(&[("x".into(), x)], "y", &y, 0.05).unwrap();
        entered += rep.selected.len();
    }
    let rate = entered as f64 / trials as f64;
    // Binomial(400, 0.05): three standard errors is about 0.033.
    assert!((rate - 0.05).abs() < 0.035, "{rate}");
}

#[test]
fn collinear_ivs_are_named() {
    let x: Vec<f64> = (0..20).map(|i| i as f64).collect();
    let twice: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
    let err = ols(&[x, twice], &["absMax".into(), "Max".into()], &[1.0; 20], true)
        .unwrap_err()
        .to_string();
    assert!(err.contains("Max"), "{err}");
}

fn random_table(rng: &mut ChaCha8Rng, cols: &[&str], rows: usize, missing: f64) -> OutcomeTable {
    OutcomeTable::new(
        cols.iter().map(|c| c.to_string()).collect(),
        (0..rows)
            .map(|i| {
                let v = cols
                    .iter()
                    .map(|_| (!rng.random_bool(missing)).then(|| rng.random_range(-2.0..2.0)))
                    .collect();
                (format!("d{i}"), v)
            })
            .collect(),
    )
    .unwrap()
}

#[test]
fn correlate_matches_per_cell_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let ours = random_table(&mut rng, &["Max", "Min", "absMax", "absMin"], 20, 0.1);
    let ext = random_table(&mut rng, &["A", "B"], 20, 0.0);
    let m = correlate_measures(&ours, &ext).unwrap();
    let complete: Vec<usize> = (0..20)
        .filter(|&i| ours.rows[i].1.iter().all(Option::is_some))
        .collect();
    for (a, row) in m.cells.iter().enumerate() {
        for (b, cell) in row.iter().enumerate() {
            let x: Vec<f64> = complete.iter().map(|&i| ours.rows[i].1[a].unwrap()).collect();
            let y: Vec<f64> = complete.iter().map(|&i| ext.rows[i].1[b].unwrap()).collect();
            let (r, p) = pearson(&x, &y).unwrap();
            assert_eq!((cell.r, cell.p, cell.n), (r, p, complete.len()));
        }
    }
}

#[test]
fn self_and_negated_correlation() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let t = random_table(&mut rng, &["x"], 15, 0.0);
    let neg = OutcomeTable::new(
        vec!["negx".into()],
        t.rows.iter().map(|(k, v)| (k.clone(), vec![v[0].map(|x| -x)])).collect(),
    )
    .unwrap();
    let same = correlate_measures(&t, &t).unwrap();
    assert!((same.cells[0][0].r - 1.0).abs() < 1e-12);
    let opposite = correlate_measures(&t, &neg).unwrap();
    assert!((opposite.cells[0][0].r + 1.0).abs() < 1e-12);
}

fn paired() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (4usize..30).prop_flat_map(|n| {
        (
            prop::collection::vec(-10.0f64..10.0, n),
            prop::collection::vec(-10.0f64..10.0, n),
        )
    })
}

proptest! {
    #[test]
    fn pearson_symmetry_affine_and_sign((x, y) in paired(), a in 0.1f64..5.0, b in -5.0f64..5.0) {
        let Ok((r, _)) = pearson(&x, &y) else { return Ok(()); };
        let (r2, _) = pearson(&y, &x).unwrap();
        prop_assert!((r - r2).abs() < 1e-12);
        let scaled: Vec<f64> = x.iter().map(|v| a * v + b).collect();
        prop_assert!((pearson(&scaled, &y).unwrap().0 - r).abs() < 1e-9);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        prop_assert!((pearson(&neg, &y).unwrap().0 + r).abs() < 1e-12);
    }

    #[test]
    fn adding_an_iv_never_lowers_r_squared(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(8..40);
        let y = random_vec(&mut rng, n);
        let cols: Vec<Vec<f64>> = (0..3).map(|_| random_vec(&mut rng, n)).collect();
        let names: Vec<String> = (0..3).map(|i| format!("x{i}")).collect();
        let mut last = 0.0;
        for k in 1..=3 {
            let fit = ols(&cols[..k], &names[..k], &y, true).unwrap();
            prop_assert!(fit.r_squared >= last - 1e-12);
            prop_assert!((0.0..=1.0 + 1e-12).contains(&fit.r_squared));
            last = fit.r_squared;
        }
    }

    #[test]
    fn reported_f_matches_r_squared(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(20..60);
        let x1 = random_vec(&mut rng, n);
        let x2 = random_vec(&mut rng, n);
        let y: Vec<f64> = x1.iter().zip(&x2).map(|(a, b)| a - 0.8 * b + rng.random_range(-1.0..1.0)).collect();
        let rep = stepwise_regression(&[("x1".into(), x1), ("x2".into(), x2)], "y", &y, 0.05).unwrap();
        let k = rep.selected.len() as f64;
        prop_assume!(k > 0.0);
        let f = (rep.r_squared / k) / ((1.0 - rep.r_squared) / (rep.n as f64 - k - 1.0));
        prop_assert!((f - rep.f).abs() < 1e-8 * rep.f.max(1.0));
        prop_assert!(rep.f >= 0.0);
    }
}
