use std::collections::HashSet;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Dialogue;
use crate::{Error, Result};

/// A `(context, response, label)` triplet. Negatives carry the dialogue id
/// and turn index of the positive whose context they share.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchingExample {
    pub context: Vec<String>,
    pub response: String,
    pub label: u8,
    pub dialogue_id: String,
    pub turn_index: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetSplits {
    pub train: Vec<MatchingExample>,
    pub validation: Vec<MatchingExample>,
    pub test: Vec<MatchingExample>,
    pub seed: u64,
}

impl DatasetSplits {
    pub fn positives(examples: &[MatchingExample]) -> usize {
        examples.iter().filter(|e| e.label == 1).count()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetConfig {
    pub context_len: usize,
    pub split_ratio: (u32, u32, u32),
    pub neg_train: usize,
    pub neg_eval: usize,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            context_len: 5,
            split_ratio: (6, 2, 2),
            neg_train: 1,
            neg_eval: 9,
            seed: 0,
        }
    }
}

struct Positive<'a> {
    dialogue: &'a Dialogue,
    index: usize,
}

impl Positive<'_> {
    fn response(&self) -> &str {
        &self.dialogue.turns[self.index].text
    }
}

/// Builds train/validation/test splits: one positive per turn with a full
/// `context_len` history, positives shuffled and split by ratio, then
/// negatives drawn from responses of other dialogues in the same split.
pub fn build_dataset(dialogues: &[Dialogue], cfg: &DatasetConfig) -> Result<DatasetSplits> {
    if dialogues.is_empty() {
        return Err(Error::Validation("empty corpus".into()));
    }
    if cfg.context_len == 0 {
        return Err(Error::Config("context_len must be at least 1".into()));
    }
    let (a, b, c) = cfg.split_ratio;
    let total = u64::from(a) + u64::from(b) + u64::from(c);
    if total == 0 {
        return Err(Error::Config("split ratio must sum to a positive total".into()));
    }

    let mut positives: Vec<Positive<'_>> = dialogues
        .iter()
        .flat_map(|d| (cfg.context_len..d.turns.len()).map(move |index| Positive { dialogue: d, index }))
        .collect();
    if positives.is_empty() {
        return Err(Error::Validation(format!(
            "no dialogue has more than {} turns",
            cfg.context_len
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    positives.shuffle(&mut rng);

    let p = positives.len() as u64;
    let n_train = (p * u64::from(a) / total) as usize;
    let n_val = (p * u64::from(b) / total) as usize;
    let test_part = positives.split_off(n_train + n_val);
    let val_part = positives.split_off(n_train);
    let train_part = positives;

    Ok(DatasetSplits {
        train: with_negatives(&train_part, cfg.neg_train, cfg.context_len, &mut rng)?,
        validation: with_negatives(&val_part, cfg.neg_eval, cfg.context_len, &mut rng)?,
        test: with_negatives(&test_part, cfg.neg_eval, cfg.context_len, &mut rng)?,
        seed: cfg.seed,
    })
}

fn with_negatives(
    split: &[Positive<'_>],
    n_neg: usize,
    context_len: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<MatchingExample>> {
    let mut out = Vec::with_capacity(split.len() * (1 + n_neg));
    for pos in split {
        let d = pos.dialogue;
        let context: Vec<String> = d.turns[pos.index - context_len..pos.index]
            .iter()
            .map(|t| t.text.clone())
            .collect();
        let example = |response: &str, label| MatchingExample {
            context: context.clone(),
            response: response.to_string(),
            label,
            dialogue_id: d.dialogue_id.clone(),
            turn_index: pos.index,
        };
        out.push(example(pos.response(), 1));
        for j in sample_negatives(split, pos, n_neg, rng)? {
            out.push(example(split[j].response(), 0));
        }
    }
    Ok(out)
}

fn eligible(split: &[Positive<'_>], pos: &Positive<'_>, j: usize) -> bool {
    let cand = &split[j];
    cand.dialogue.dialogue_id != pos.dialogue.dialogue_id && cand.response() != pos.response()
}

/// Distinct indices into `split`, uniformly among eligible candidates.
fn sample_negatives(
    split: &[Positive<'_>],
    pos: &Positive<'_>,
    n_neg: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>> {
    if n_neg == 0 {
        return Ok(Vec::new());
    }
    let mut chosen = Vec::with_capacity(n_neg);
    let mut seen = HashSet::with_capacity(n_neg);
    let mut attempts = 0;
    while chosen.len() < n_neg && attempts < 64 * n_neg {
        attempts += 1;
        let j = rng.random_range(0..split.len());
        if eligible(split, pos, j) && seen.insert(j) {
            chosen.push(j);
        }
    }
    if chosen.len() < n_neg {
        // Rejection sampling stalls only on tiny or very lopsided splits.
        let pool: Vec<usize> = (0..split.len())
            .filter(|&j| eligible(split, pos, j) && !seen.contains(&j))
            .collect();
        let need = n_neg - chosen.len();
        if pool.len() < need {
            return Err(Error::Validation(format!(
                "dialogue {} turn {}: only {} negative candidates from other dialogues, need {n_neg}",
                pos.dialogue.dialogue_id,
                pos.index,
                pool.len() + chosen.len()
            )));
        }
        chosen.extend(pool.choose_multiple(rng, need).copied());
    }
    Ok(chosen)
}

/// Candidates that share one context, in file order.
#[derive(Clone, Debug, PartialEq)]
pub struct CandidateGroup {
    pub dialogue_id: String,
    pub turn_index: usize,
    pub context: Vec<String>,
    /// `(response, label)`
    pub candidates: Vec<(String, u8)>,
}

impl CandidateGroup {
    pub fn positive_count(&self) -> usize {
        self.candidates.iter().filter(|(_, y)| *y == 1).count()
    }
}

/// Groups consecutive examples keyed by `(dialogue_id, turn_index)`.
pub fn group_by_context(examples: &[MatchingExample]) -> Vec<CandidateGroup> {
    let mut groups: Vec<CandidateGroup> = Vec::new();
    for e in examples {
        match groups.last_mut() {
            Some(g) if g.dialogue_id == e.dialogue_id && g.turn_index == e.turn_index => {
                g.candidates.push((e.response.clone(), e.label));
            }
            _ => groups.push(CandidateGroup {
                dialogue_id: e.dialogue_id.clone(),
                turn_index: e.turn_index,
                context: e.context.clone(),
                candidates: vec![(e.response.clone(), e.label)],
            }),
        }
    }
    groups
}

pub fn write_examples<W: Write>(mut w: W, examples: &[MatchingExample]) -> Result<()> {
    for e in examples {
        let line = serde_json::to_string(e).map_err(|e| Error::Validation(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| Error::io("<dataset writer>", e))?;
    }
    Ok(())
}

pub fn read_examples(path: impl AsRef<Path>) -> Result<Vec<MatchingExample>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let e: MatchingExample = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: n + 1,
            message: format!("{}: {e}", path.display()),
        })?;
        if e.label > 1 {
            return Err(Error::Parse {
                line: n + 1,
                message: format!("label must be 0 or 1, got {}", e.label),
            });
        }
        out.push(e);
    }
    Ok(out)
}
