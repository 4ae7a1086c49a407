//! Browser bindings for three small demos: attention weights of a typed-in
//! query/key/value triple, convergence curves of synthetic dialogues, and
//! correlation plus stepwise regression of two pasted columns.
//!
//! Every export returns a JSON string; the plain `*_json` functions do the
//! work and are what the native tests call.

use std::collections::HashSet;

use entrain::corpus::{generate_synthetic_corpus, EchoSchedule, SyntheticConfig};
use entrain::entrainment::{dialogue_convergence, EntrainmentOptions};
use entrain::model::Scorer;
use entrain::nn::ops::attention_weights;
use entrain::nn::{scaled_dot_attention, Matrix};
use entrain::stats::{pearson, stepwise_regression, DEFAULT_ENTER_P};
use entrain::{Error, Result};
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Rows separated by `;` or newlines, values by spaces or commas.
pub fn parse_matrix(text: &str) -> Result<Matrix> {
    let rows: Vec<Vec<f64>> = text
        .split([';', '\n'])
        .map(str::trim)
        .filter(|r| !r.is_empty())
        .map(parse_values)
        .collect::<Result<_>>()?;
    let cols = rows.first().map_or(0, Vec::len);
    if cols == 0 || rows.iter().any(|r| r.len() != cols) {
        return Err(Error::Validation("every row needs the same, nonzero number of values".into()));
    }
    Ok(Matrix::from_rows(&rows))
}

fn parse_values(text: &str) -> Result<Vec<f64>> {
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|v| !v.is_empty())
        .map(|v| {
            v.parse::<f64>()
                .map_err(|_| Error::Validation(format!("not a number: {v:?}")))
        })
        .collect()
}

fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string(value).map_err(|e| Error::Validation(e.to_string()))
}

#[derive(Serialize)]
struct AttentionView {
    weights: Vec<Vec<f64>>,
    output: Vec<Vec<f64>>,
}

pub fn attention_json(q: &str, k: &str, v: &str) -> Result<String> {
    let (q, k, v) = (parse_matrix(q)?, parse_matrix(k)?, parse_matrix(v)?);
    let weights = attention_weights(&q, &k)?;
    let output = scaled_dot_attention(&q, &k, &v)?;
    to_json(&AttentionView {
        weights: rows(&weights),
        output: rows(&output),
    })
}

/// Word-overlap stand-in for a trained model: Jaccard similarity between
/// the response and the pooled context words.
struct OverlapScorer;

impl Scorer for OverlapScorer {
    fn score_group(&self, context: &[String], responses: &[String]) -> Result<Vec<f64>> {
        let ctx: HashSet<&str> = context.iter().flat_map(|t| t.split_whitespace()).collect();
        Ok(responses
            .iter()
            .map(|r| {
                let words: HashSet<&str> = r.split_whitespace().collect();
                let shared = words.intersection(&ctx).count();
                let union = words.union(&ctx).count();
                if union == 0 {
                    0.0
                } else {
                    shared as f64 / union as f64
                }
            })
            .collect())
    }
}

#[derive(Serialize)]
struct ConvergenceView {
    /// Mean TDiff per interval over dialogues that have it.
    tdiff: Vec<Option<f64>>,
    abs_max: Option<f64>,
    abs_min: Option<f64>,
    echo_rate: f64,
    dialogues: usize,
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

pub fn convergence_json(strength: f64, dialogues: usize, speakers: usize, turns: usize, seed: u64) -> Result<String> {
    let cfg = SyntheticConfig::new(dialogues, speakers, turns, 8, strength, seed)
        .with_schedule(EchoSchedule::Converging);
    let corpus = generate_synthetic_corpus(&cfg)?;
    let opts = EntrainmentOptions::default();
    let vars = corpus
        .dialogues
        .iter()
        .map(|d| dialogue_convergence(&OverlapScorer, d, &opts))
        .collect::<Result<Vec<_>>>()?;
    let tdiff = (0..opts.n_intervals)
        .map(|j| mean(vars.iter().map(|v| v.tdiff[j])))
        .collect();
    to_json(&ConvergenceView {
        tdiff,
        abs_max: mean(vars.iter().map(|v| v.abs_max)),
        abs_min: mean(vars.iter().map(|v| v.abs_min)),
        echo_rate: corpus.echo_rate(),
        dialogues: vars.len(),
    })
}

#[derive(Serialize)]
struct CorrelationView {
    n: usize,
    r: f64,
    p: f64,
    entered: bool,
    beta: Option<f64>,
    r_squared: f64,
    f: f64,
    f_p: f64,
}

pub fn correlation_json(x: &str, y: &str) -> Result<String> {
    let (x, y) = (parse_values(x)?, parse_values(y)?);
    let (r, p) = pearson(&x, &y)?;
    let reg = stepwise_regression(&[("x".into(), x.clone())], "y", &y, DEFAULT_ENTER_P)?;
    to_json(&CorrelationView {
        n: x.len(),
        r,
        p,
        entered: !reg.selected.is_empty(),
        beta: reg.betas.first().copied(),
        r_squared: reg.r_squared,
        f: reg.f,
        f_p: reg.p_value,
    })
}

fn js(r: Result<String>) -> std::result::Result<String, JsValue> {
    r.map_err(|e| JsValue::from_str(&e.to_string()))
}

#[wasm_bindgen]
pub fn attention(q: &str, k: &str, v: &str) -> std::result::Result<String, JsValue> {
    js(attention_json(q, k, v))
}

#[wasm_bindgen]
pub fn convergence(
    strength: f64,
    dialogues: usize,
    speakers: usize,
    turns: usize,
    seed: u32,
) -> std::result::Result<String, JsValue> {
    js(convergence_json(strength, dialogues, speakers, turns, seed as u64))
}

#[wasm_bindgen]
pub fn correlation(x: &str, y: &str) -> std::result::Result<String, JsValue> {
    js(correlation_json(x, y))
}
