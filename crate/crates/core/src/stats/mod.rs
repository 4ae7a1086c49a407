//! Pearson correlation and forward stepwise OLS with standardized
//! coefficients, plus CSV and text reports.

pub mod dist;
mod ols;
mod table;

use std::fmt::Write as _;
use std::io::Write;

use crate::{Error, Result};

pub use ols::{ols, OlsFit};
pub use table::OutcomeTable;

pub const DEFAULT_ENTER_P: f64 = 0.05;

/// `*` below 0.05, `**` below 0.01.
pub fn stars(p: f64) -> &'static str {
    if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        ""
    }
}

/// Sample correlation `r` and its two-sided p-value from Student-t with
/// `n − 2` degrees of freedom.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    if x.len() != y.len() {
        return Err(Error::shape(
            "pearson",
            format!("x has {} values, y has {}", x.len(), y.len()),
        ));
    }
    let n = x.len();
    if n < 3 {
        return Err(Error::Validation(format!("pearson needs at least 3 pairs, got {n}")));
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Validation("pearson: zero variance".into()));
    }
    let r = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
    let df = (n - 2) as f64;
    let p = if r.abs() == 1.0 {
        0.0
    } else {
        dist::t_two_sided_p(r * (df / (1.0 - r * r)).sqrt(), df)
    };
    Ok((r, p))
}

/// `(v − mean) / sd` with the sample standard deviation.
pub fn zscore(v: &[f64]) -> Result<Vec<f64>> {
    let n = v.len();
    if n < 2 {
        return Err(Error::Validation("z-score needs at least 2 values".into()));
    }
    let mean = v.iter().sum::<f64>() / n as f64;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    if var == 0.0 {
        return Err(Error::Validation("z-score of a constant".into()));
    }
    let sd = var.sqrt();
    Ok(v.iter().map(|x| (x - mean) / sd).collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegressionReport {
    pub dv: String,
    /// Entered IVs in entry order.
    pub selected: Vec<String>,
    pub betas: Vec<f64>,
    pub iv_p_values: Vec<f64>,
    pub r_squared: f64,
    pub f: f64,
    pub p_value: f64,
    pub n: usize,
}

/// Forward selection: each round fits OLS with every remaining candidate
/// added and enters the one whose coefficient has the smallest p-value, if
/// below `enter_p`. The final model is refit on z-scored variables.
/// `ivs` are `(name, column)` pairs aligned with `dv`, already complete.
pub fn stepwise_regression(
    ivs: &[(String, Vec<f64>)],
    dv_name: &str,
    dv: &[f64],
    enter_p: f64,
) -> Result<RegressionReport> {
    if ivs.is_empty() {
        return Err(Error::Validation("stepwise regression needs a candidate IV".into()));
    }
    if let Some((name, _)) = ivs.iter().find(|(_, c)| c.len() != dv.len()) {
        return Err(Error::shape("stepwise_regression", format!("IV {name} length differs from DV")));
    }
    let n = dv.len();
    let mut selected: Vec<usize> = Vec::new();
    loop {
        // n must exceed the entered IVs plus the intercept after entry.
        if n <= selected.len() + 2 {
            break;
        }
        let mut best: Option<(usize, f64)> = None;
        for c in 0..ivs.len() {
            if selected.contains(&c) {
                continue;
            }
            let trial: Vec<usize> = selected.iter().copied().chain([c]).collect();
            let fit = fit_columns(ivs, &trial, dv)?;
            let p = *fit.p_values.last().expect("at least one coefficient");
            if p < enter_p && best.is_none_or(|(_, bp)| p < bp) {
                best = Some((c, p));
            }
        }
        match best {
            Some((c, _)) => selected.push(c),
            None => break,
        }
    }

    let names: Vec<String> = selected.iter().map(|&c| ivs[c].0.clone()).collect();
    if selected.is_empty() {
        return Ok(RegressionReport {
            dv: dv_name.to_string(),
            selected: names,
            betas: Vec::new(),
            iv_p_values: Vec::new(),
            r_squared: 0.0,
            f: 0.0,
            p_value: 1.0,
            n,
        });
    }
    let z_dv = zscore(dv)?;
    let z_ivs: Vec<Vec<f64>> = selected
        .iter()
        .map(|&c| zscore(&ivs[c].1))
        .collect::<Result<_>>()?;
    let fit = ols(&z_ivs, &names, &z_dv, true)?;
    Ok(RegressionReport {
        dv: dv_name.to_string(),
        selected: names,
        betas: fit.coefficients[1..].to_vec(),
        iv_p_values: fit.p_values[1..].to_vec(),
        r_squared: fit.r_squared,
        f: fit.f,
        p_value: fit.f_p_value,
        n,
    })
}

fn fit_columns(ivs: &[(String, Vec<f64>)], cols: &[usize], dv: &[f64]) -> Result<OlsFit> {
    let x: Vec<Vec<f64>> = cols.iter().map(|&c| ivs[c].1.clone()).collect();
    let names: Vec<String> = cols.iter().map(|&c| ivs[c].0.clone()).collect();
    ols(&x, &names, dv, true)
}

/// Stepwise regression of `dv` on `ivs` over rows of `table` complete in
/// all of them (listwise deletion).
pub fn regress_table(
    table: &OutcomeTable,
    ivs: &[&str],
    dv: &str,
    enter_p: f64,
) -> Result<RegressionReport> {
    let mut cols = Vec::with_capacity(ivs.len() + 1);
    for name in ivs.iter().chain([&dv]) {
        cols.push(
            table
                .column(name)
                .ok_or_else(|| Error::Validation(format!("no column named {name}")))?,
        );
    }
    let data = table.complete_columns(&cols);
    let (dv_col, iv_cols) = data.split_last().expect("dv column");
    let candidates: Vec<(String, Vec<f64>)> = ivs
        .iter()
        .zip(iv_cols)
        .map(|(n, c)| (n.to_string(), c.clone()))
        .collect();
    stepwise_regression(&candidates, dv, dv_col, enter_p)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CorrelationCell {
    pub r: f64,
    pub p: f64,
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationMatrix {
    pub row_names: Vec<String>,
    pub col_names: Vec<String>,
    pub cells: Vec<Vec<CorrelationCell>>,
}

/// Pearson correlation of every column of `ours` with every column of
/// `external`, over joined rows complete in all columns.
pub fn correlate_measures(ours: &OutcomeTable, external: &OutcomeTable) -> Result<CorrelationMatrix> {
    let renamed;
    let external = if ours.columns.iter().any(|c| external.column(c).is_some()) {
        renamed = OutcomeTable::new(
            external.columns.iter().map(|c| format!("{c} (external)")).collect(),
            external.rows.clone(),
        )?;
        &renamed
    } else {
        external
    };
    let joined = ours.join(external, false)?;
    let all: Vec<usize> = (0..joined.columns.len()).collect();
    let data = joined.complete_columns(&all);
    let k = ours.columns.len();
    let mut cells = Vec::with_capacity(k);
    for a in 0..k {
        let mut row = Vec::with_capacity(external.columns.len());
        for b in 0..external.columns.len() {
            let (r, p) = pearson(&data[a], &data[k + b]).map_err(|e| {
                Error::Validation(format!("{} vs {}: {e}", ours.columns[a], external.columns[b]))
            })?;
            row.push(CorrelationCell { r, p, n: data[a].len() });
        }
        cells.push(row);
    }
    Ok(CorrelationMatrix {
        row_names: ours.columns.clone(),
        col_names: external.columns.clone(),
        cells,
    })
}

impl CorrelationMatrix {
    /// Long CSV: `row,column,r,p,n,stars`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["row", "column", "r", "p", "n", "stars"])?;
        for (a, row) in self.cells.iter().enumerate() {
            for (b, c) in row.iter().enumerate() {
                csv.write_record([
                    self.row_names[a].clone(),
                    self.col_names[b].clone(),
                    c.r.to_string(),
                    c.p.to_string(),
                    c.n.to_string(),
                    stars(c.p).to_string(),
                ])?;
            }
        }
        csv.flush().map_err(|e| Error::io("<correlation csv>", e))
    }

    /// Grid of `r` to three decimals with stars.
    pub fn to_text(&self) -> String {
        let width = 12;
        let mut s = format!("{:width$}", "");
        for c in &self.col_names {
            let _ = write!(s, " {c:>width$}");
        }
        s.push('\n');
        for (a, row) in self.cells.iter().enumerate() {
            let _ = write!(s, "{:width$}", self.row_names[a]);
            for c in row {
                let _ = write!(s, " {:>width$}", format!("{:.3}{}", c.r, stars(c.p)));
            }
            s.push('\n');
        }
        s
    }
}

/// One CSV row per entered IV (`iv` empty for an empty model):
/// `dv,iv,beta,iv_p,r_squared,f,p,n`.
pub fn write_regression_csv<W: Write>(w: W, reports: &[RegressionReport]) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(["dv", "iv", "beta", "iv_p", "r_squared", "f", "p", "n"])?;
    for r in reports {
        let tail = [r.r_squared.to_string(), r.f.to_string(), r.p_value.to_string(), r.n.to_string()];
        if r.selected.is_empty() {
            let mut rec = vec![r.dv.clone(), String::new(), String::new(), String::new()];
            rec.extend(tail.iter().cloned());
            csv.write_record(&rec)?;
        }
        for (i, iv) in r.selected.iter().enumerate() {
            let mut rec = vec![
                r.dv.clone(),
                iv.clone(),
                r.betas[i].to_string(),
                r.iv_p_values[i].to_string(),
            ];
            rec.extend(tail.iter().cloned());
            csv.write_record(&rec)?;
        }
    }
    csv.flush().map_err(|e| Error::io("<regression csv>", e))
}

/// Table-style text: one block per DV with `β`, `R²` and `F`.
pub fn format_regression_reports(reports: &[RegressionReport]) -> String {
    let mut s = String::new();
    for r in reports {
        let _ = writeln!(s, "{} (n = {})", r.dv, r.n);
        if r.selected.is_empty() {
            let _ = writeln!(s, "  no IV entered");
            continue;
        }
        for (i, iv) in r.selected.iter().enumerate() {
            let _ = writeln!(
                s,
                "  {iv:<10} beta = {:>7.3}{}",
                r.betas[i],
                stars(r.iv_p_values[i])
            );
        }
        let _ = writeln!(s, "  R2 = {:.3}  F = {:.2}{}", r.r_squared, r.f, stars(r.p_value));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pearson_examples() {
        let (r, _) = pearson(&[1.0, 2.0, 3.0, 4.0], &[2.0, 1.0, 4.0, 3.0]).unwrap();
        assert!((r - 0.6).abs() < 1e-12);
        let x: Vec<f64> = (0..10).map(f64::from).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        let (r, p) = pearson(&x, &y).unwrap();
        assert!((r - 1.0).abs() < 1e-12 && p < 1e-10);
    }

    #[test]
    fn pearson_errors() {
        assert!(pearson(&[1.0, 2.0, 3.0], &[1.0, 2.0]).is_err());
        assert!(pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn perfect_single_iv_fit() {
        let x: Vec<f64> = vec![0.3, 1.2, -0.7, 2.2, 0.9, -1.4];
        let y: Vec<f64> = x.iter().map(|v| 3.0 * v).collect();
        let r = stepwise_regression(&[("iv1".into(), x)], "dv", &y, DEFAULT_ENTER_P).unwrap();
        assert_eq!(r.selected, vec!["iv1".to_string()]);
        assert!((r.betas[0] - 1.0).abs() < 1e-12);
        assert!((r.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn stars_thresholds() {
        assert_eq!(stars(0.009), "**");
        assert_eq!(stars(0.01), "*");
        assert_eq!(stars(0.049), "*");
        assert_eq!(stars(0.05), "");
    }

    #[test]
    fn empty_model_csv_row() {
        let r = RegressionReport {
            dv: "Task".into(),
            selected: vec![],
            betas: vec![],
            iv_p_values: vec![],
            r_squared: 0.0,
            f: 0.0,
            p_value: 1.0,
            n: 30,
        };
        let mut buf = Vec::new();
        write_regression_csv(&mut buf, &[r]).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "dv,iv,beta,iv_p,r_squared,f,p,n\nTask,,,,0,0,1,30\n"
        );
    }
}
