#![allow(dead_code)]

use entrain::corpus::{
    build_dataset, generate_synthetic_corpus, DatasetConfig, DatasetSplits, Dialogue,
    SyntheticConfig,
};
use entrain::model::{loss_and_gradients, mean_loss, MatchingModel, ModelConfig};
use entrain::corpus::CandidateGroup;
use entrain::nn::ParamStore;
use entrain::tokenizer::{train_bpe, Vocabulary};

pub fn tiny_config(use_stylebook: bool) -> ModelConfig {
    ModelConfig {
        d_model: 8,
        stylebook_size: 3,
        encoder_hidden: 6,
        aggregation_hidden: 5,
        n_heads: 2,
        max_context_tokens: 10,
        max_response_tokens: 6,
        max_epochs: 2,
        use_stylebook,
        ..ModelConfig::desk()
    }
}

pub fn vocab_for(dialogues: &[Dialogue], size: usize) -> Vocabulary {
    let texts: Vec<&str> = dialogues
        .iter()
        .flat_map(|d| d.turns.iter().map(|t| t.text.as_str()))
        .collect();
    train_bpe(&texts, size).unwrap()
}

/// Synthetic corpus, its dataset and a vocabulary trained on it.
pub fn synthetic_dataset(
    n_dialogues: usize,
    turns: usize,
    style_count: usize,
    seed: u64,
) -> (Vec<Dialogue>, DatasetSplits, Vocabulary) {
    let corpus = generate_synthetic_corpus(&SyntheticConfig::new(
        n_dialogues,
        2,
        turns,
        style_count,
        0.8,
        seed,
    ))
    .unwrap();
    let splits = build_dataset(
        &corpus.dialogues,
        &DatasetConfig {
            seed,
            ..DatasetConfig::default()
        },
    )
    .unwrap();
    let vocab = vocab_for(&corpus.dialogues, 300);
    (corpus.dialogues, splits, vocab)
}

#[derive(Debug)]
pub struct CoordinateError {
    pub name: String,
    pub flat: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Central differences at every listed coordinate, against the summed
/// gradient of the mean loss.
pub fn finite_differences(
    model: &MatchingModel,
    groups: &[CandidateGroup],
    eps: f64,
    coords: &[(String, usize)],
) -> Vec<CoordinateError> {
    let n: usize = groups.iter().map(|g| g.candidates.len()).sum();
    let (_, grads) = loss_and_gradients(model, model.params(), groups, 1.0 / n as f64).unwrap();
    let mut probe: ParamStore = model.params().clone();
    coords
        .iter()
        .map(|(name, flat)| {
            let id = probe.find(name).unwrap();
            let orig = probe.get(id).value.as_slice()[*flat];
            probe.get_mut(id).value.as_mut_slice()[*flat] = orig + eps;
            let plus = mean_loss(model, &probe, groups).unwrap();
            probe.get_mut(id).value.as_mut_slice()[*flat] = orig - eps;
            let minus = mean_loss(model, &probe, groups).unwrap();
            probe.get_mut(id).value.as_mut_slice()[*flat] = orig;
            CoordinateError {
                name: name.clone(),
                flat: *flat,
                analytic: grads.scalar(id, *flat),
                numeric: (plus - minus) / (2.0 * eps),
            }
        })
        .collect()
}

use entrain::corpus::Turn;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Random timed multi-speaker dialogue with 1..=max_turns turns.
pub fn random_dialogue(id: &str, rng: &mut ChaCha8Rng, max_turns: usize) -> Dialogue {
    let n = rng.random_range(1..=max_turns);
    let speakers = rng.random_range(1..=4);
    let mut t = rng.random_range(0.0..5.0);
    let turns = (0..n)
        .map(|i| {
            t += rng.random_range(0.0..3.0);
            Turn {
                speaker_id: format!("s{}", rng.random_range(0..speakers)),
                text: format!("w{} u{}", rng.random_range(0..50), i % 7),
                start_time: t,
                end_time: t + rng.random_range(0.0..2.0),
            }
        })
        .collect();
    Dialogue {
        dialogue_id: id.to_string(),
        turns,
    }
}

/// Deterministic stand-in for a model: a hash of the context and response.
pub fn mock_score(context: &[String], response: &str) -> f64 {
    use std::hash::{Hash, Hasher};
    let mut h = std::collections::hash_map::DefaultHasher::new();
    (context, response).hash(&mut h);
    (h.finish() >> 11) as f64 / (1u64 << 53) as f64
}

pub struct MockScorer;

impl entrain::model::Scorer for MockScorer {
    fn score_group(&self, context: &[String], responses: &[String]) -> entrain::Result<Vec<f64>> {
        Ok(responses.iter().map(|r| mock_score(context, r)).collect())
    }
}

/// Brute-force convergence: every (speaker, interval) mean, ordered speaker
/// pair and (q, p) difference is materialized explicitly. Returns the
/// TDiff vector and `[Max, Min, absMax, absMin]`.
pub fn oracle_convergence(
    d: &Dialogue,
    n_intervals: usize,
    context_len: usize,
) -> (Vec<Option<f64>>, [Option<f64>; 4]) {
    let t0 = d.turns[0].start_time;
    let t1 = d.turns.iter().map(|t| t.end_time).fold(f64::MIN, f64::max);
    let width = (t1 - t0) / n_intervals as f64;
    let interval_of = |start: f64| {
        let mut j = 0;
        while j + 1 < n_intervals && start >= t0 + width * (j + 1) as f64 {
            j += 1;
        }
        j
    };
    let mut speakers: Vec<&str> = Vec::new();
    for t in &d.turns {
        if !speakers.contains(&t.speaker_id.as_str()) {
            speakers.push(&t.speaker_id);
        }
    }
    let mut tdiff = vec![None; n_intervals];
    for (j, slot) in tdiff.iter_mut().enumerate() {
        let mut means = Vec::new();
        for s in &speakers {
            let mut terms = Vec::new();
            for (i, t) in d.turns.iter().enumerate() {
                if i == 0 || t.speaker_id != *s || interval_of(t.start_time) != j {
                    continue;
                }
                let ctx: Vec<String> = d.turns[i.saturating_sub(context_len)..i]
                    .iter()
                    .map(|t| t.text.clone())
                    .collect();
                terms.push(mock_score(&ctx, &t.text));
            }
            if !terms.is_empty() {
                let mut sum = 0.0;
                for x in &terms {
                    sum += x;
                }
                means.push(sum / terms.len() as f64);
            }
        }
        let m = means.len();
        if m >= 2 {
            let mut pairs = Vec::new();
            for a in 0..m {
                for b in 0..m {
                    if a != b {
                        pairs.push((means[a] - means[b]).abs());
                    }
                }
            }
            let mut sum = 0.0;
            for x in &pairs {
                sum += x;
            }
            *slot = Some(sum / (m * (m - 1)) as f64);
        }
    }
    let mut c = Vec::new();
    for q in 0..n_intervals {
        for p in 0..n_intervals {
            if q < p {
                if let (Some(a), Some(b)) = (tdiff[q], tdiff[p]) {
                    c.push(a - b);
                }
            }
        }
    }
    let valid = tdiff.iter().filter(|x| x.is_some()).count();
    if valid < 2 {
        return (tdiff, [None; 4]);
    }
    let mut vars = [None::<f64>; 4];
    for &x in &c {
        if x > 0.0 && vars[0].is_none_or(|m| x > m) {
            vars[0] = Some(x);
        }
        if x < 0.0 && vars[1].is_none_or(|m| x < m) {
            vars[1] = Some(x);
        }
        if vars[2].is_none_or(|m| x.abs() > m) {
            vars[2] = Some(x.abs());
        }
        if vars[3].is_none_or(|m| x.abs() < m) {
            vars[3] = Some(x.abs());
        }
    }
    (tdiff, vars)
}

/// Textbook two-pass sample correlation.
pub fn closed_form_r(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    sxy / (sxx * syy).sqrt()
}

/// Simple regression through the 2x2 normal equations: `(slope, R², F)`.
pub fn normal_equation_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let (sx, sy) = (x.iter().sum::<f64>(), y.iter().sum::<f64>());
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    // [n sx; sx sxx] [a; b] = [sy; sxy]
    let det = n * sxx - sx * sx;
    let a = (sxx * sy - sx * sxy) / det;
    let b = (n * sxy - sx * sy) / det;
    let my = sy / n;
    let ss_tot: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let ss_res: f64 = x.iter().zip(y).map(|(u, v)| (v - a - b * u).powi(2)).sum();
    let r2 = 1.0 - ss_res / ss_tot;
    let f = r2 / ((1.0 - r2) / (n - 2.0));
    (b, r2, f)
}
