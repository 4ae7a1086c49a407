//! Entrainment as convergence: per-interval speaker similarity scores, the
//! team difference `TDiff_j` and the convergence variables derived from all
//! pairwise changes `C_qp = TDiff_q − TDiff_p` (`q < p`).

use std::io::Write;
use std::ops::Range;
use std::path::Path;

use crate::corpus::Dialogue;
use crate::model::Scorer;
use crate::{Error, Result};

pub const N_INTERVALS: usize = 10;
pub const SCORE_CONTEXT_LEN: usize = 10;

/// Turns of one dialogue split into consecutive intervals.
#[derive(Clone, Debug, PartialEq)]
pub struct IntervalPartition {
    pub dialogue_id: String,
    pub n_intervals: usize,
    /// `n_intervals + 1` time points; empty when split by turn count.
    pub boundaries: Vec<f64>,
    /// Interval of every turn.
    pub assignment: Vec<usize>,
}

impl IntervalPartition {
    pub fn by_turns(&self) -> bool {
        self.boundaries.is_empty()
    }

    /// Turn indices in interval `j`. Turns are ordered by start time, so
    /// each interval is contiguous.
    pub fn turns_in(&self, j: usize) -> Range<usize> {
        let start = self.assignment.partition_point(|&a| a < j);
        let end = self.assignment.partition_point(|&a| a <= j);
        start..end
    }
}

/// Equal-duration intervals over `[first start, last end]`. A turn belongs to
/// the interval containing its start time; intervals are half-open except
/// the last.
pub fn split_intervals(dialogue: &Dialogue, n: usize) -> Result<IntervalPartition> {
    check_split(dialogue, n)?;
    let t0 = dialogue.turns[0].start_time;
    let t1 = dialogue
        .turns
        .iter()
        .map(|t| t.end_time)
        .fold(f64::NEG_INFINITY, f64::max);
    let width = (t1 - t0) / n as f64;
    if width.is_nan() || width <= 0.0 {
        return Err(Error::Validation(format!(
            "dialogue {}: all timestamps equal, cannot split by time",
            dialogue.dialogue_id
        )));
    }
    let boundaries = (0..=n)
        .map(|j| if j == n { t1 } else { t0 + width * j as f64 })
        .collect();
    let assignment = dialogue
        .turns
        .iter()
        .map(|t| (((t.start_time - t0) / width).floor() as usize).min(n - 1))
        .collect();
    Ok(IntervalPartition {
        dialogue_id: dialogue.dialogue_id.clone(),
        n_intervals: n,
        boundaries,
        assignment,
    })
}

/// Fallback for dialogues without usable timestamps: turn `i` of `m` goes
/// to interval `⌊i·n/m⌋`.
pub fn split_by_turns(dialogue: &Dialogue, n: usize) -> Result<IntervalPartition> {
    check_split(dialogue, n)?;
    let m = dialogue.turns.len();
    Ok(IntervalPartition {
        dialogue_id: dialogue.dialogue_id.clone(),
        n_intervals: n,
        boundaries: Vec::new(),
        assignment: (0..m).map(|i| i * n / m).collect(),
    })
}

fn check_split(dialogue: &Dialogue, n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::Config("number of intervals must be positive".into()));
    }
    if dialogue.turns.is_empty() {
        return Err(Error::Validation(format!(
            "dialogue {} has no turns",
            dialogue.dialogue_id
        )));
    }
    dialogue.validate()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpeakerIntervalScore {
    pub speaker_id: String,
    pub interval: usize,
    pub score: f64,
    pub n: usize,
}

/// `g(C, i)` for every turn `i ≥ 1`, with `C` the up to `context_len`
/// preceding turns. Turn 0 has no context and yields `None`.
pub fn utterance_scores<S: Scorer + ?Sized>(
    scorer: &S,
    dialogue: &Dialogue,
    context_len: usize,
) -> Result<Vec<Option<f64>>> {
    let turns = &dialogue.turns;
    let mut out = Vec::with_capacity(turns.len());
    for i in 0..turns.len() {
        if i == 0 || context_len == 0 {
            out.push(None);
            continue;
        }
        let context: Vec<String> = turns[i.saturating_sub(context_len)..i]
            .iter()
            .map(|t| t.text.clone())
            .collect();
        let g = scorer.score_group(&context, std::slice::from_ref(&turns[i].text))?;
        let g = *g
            .first()
            .ok_or_else(|| Error::Numerical("scorer returned no score".into()))?;
        if !g.is_finite() {
            return Err(Error::Numerical(format!(
                "dialogue {}, turn {i}: score {g}",
                dialogue.dialogue_id
            )));
        }
        out.push(Some(g));
    }
    Ok(out)
}

/// Mean score per (interval, speaker), intervals ascending and speakers in
/// order of first appearance. Speakers without scored turns in an interval
/// get no record.
pub fn aggregate_speaker_scores(
    dialogue: &Dialogue,
    partition: &IntervalPartition,
    scores: &[Option<f64>],
) -> Result<Vec<SpeakerIntervalScore>> {
    if partition.assignment.len() != dialogue.turns.len() || scores.len() != dialogue.turns.len() {
        return Err(Error::shape(
            "aggregate_speaker_scores",
            format!(
                "{} turns, {} assignments, {} scores",
                dialogue.turns.len(),
                partition.assignment.len(),
                scores.len()
            ),
        ));
    }
    let speakers = dialogue.speakers();
    let mut out = Vec::new();
    for j in 0..partition.n_intervals {
        for spk in &speakers {
            let (mut sum, mut n) = (0.0, 0usize);
            for i in partition.turns_in(j) {
                if dialogue.turns[i].speaker_id == *spk {
                    if let Some(g) = scores[i] {
                        sum += g;
                        n += 1;
                    }
                }
            }
            if n > 0 {
                out.push(SpeakerIntervalScore {
                    speaker_id: spk.to_string(),
                    interval: j,
                    score: sum / n as f64,
                    n,
                });
            }
        }
    }
    Ok(out)
}

/// [`utterance_scores`] followed by [`aggregate_speaker_scores`].
pub fn speaker_scores<S: Scorer + ?Sized>(
    scorer: &S,
    dialogue: &Dialogue,
    partition: &IntervalPartition,
    context_len: usize,
) -> Result<Vec<SpeakerIntervalScore>> {
    let scores = utterance_scores(scorer, dialogue, context_len)?;
    aggregate_speaker_scores(dialogue, partition, &scores)
}

/// Mean absolute difference over ordered speaker pairs; `None` for fewer
/// than two speakers.
pub fn team_diff(scores: &[f64]) -> Option<f64> {
    let m = scores.len();
    if m < 2 {
        return None;
    }
    let mut sum = 0.0;
    for (a, sa) in scores.iter().enumerate() {
        for (b, sb) in scores.iter().enumerate() {
            if a != b {
                sum += (sa - sb).abs();
            }
        }
    }
    Some(sum / (m * (m - 1)) as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceVars {
    pub dialogue_id: String,
    pub tdiff: Vec<Option<f64>>,
    pub max: Option<f64>,
    pub min: Option<f64>,
    pub abs_max: Option<f64>,
    pub abs_min: Option<f64>,
}

impl ConvergenceVars {
    /// The four variables in `Max, Min, absMax, absMin` order.
    pub fn variables(&self) -> [Option<f64>; 4] {
        [self.max, self.min, self.abs_max, self.abs_min]
    }
}

pub const VARIABLE_NAMES: [&str; 4] = ["Max", "Min", "absMax", "absMin"];

/// Convergence variables over all `C_qp = TDiff_q − TDiff_p`, `q < p`, with
/// both entries present.
pub fn convergence(dialogue_id: &str, tdiff: Vec<Option<f64>>) -> Result<ConvergenceVars> {
    let mut c = Vec::new();
    for q in 0..tdiff.len() {
        for p in q + 1..tdiff.len() {
            if let (Some(a), Some(b)) = (tdiff[q], tdiff[p]) {
                c.push(a - b);
            }
        }
    }
    if c.is_empty() {
        return Err(Error::Validation(format!(
            "dialogue {dialogue_id}: fewer than 2 intervals with a team difference"
        )));
    }
    let fold = |it: &mut dyn Iterator<Item = f64>, pick: fn(f64, f64) -> f64| {
        it.fold(None, |acc: Option<f64>, x| Some(acc.map_or(x, |a| pick(a, x))))
    };
    Ok(ConvergenceVars {
        dialogue_id: dialogue_id.to_string(),
        max: fold(&mut c.iter().copied().filter(|&x| x > 0.0), f64::max),
        min: fold(&mut c.iter().copied().filter(|&x| x < 0.0), f64::min),
        abs_max: fold(&mut c.iter().map(|x| x.abs()), f64::max),
        abs_min: fold(&mut c.iter().map(|x| x.abs()), f64::min),
        tdiff,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EntrainmentOptions {
    pub n_intervals: usize,
    pub context_len: usize,
    /// Split by turn count instead of wall-clock time.
    pub by_turns: bool,
}

impl Default for EntrainmentOptions {
    fn default() -> Self {
        Self {
            n_intervals: N_INTERVALS,
            context_len: SCORE_CONTEXT_LEN,
            by_turns: false,
        }
    }
}

/// `TDiff_j` for each interval of a partition.
pub fn interval_tdiffs(partition: &IntervalPartition, scores: &[SpeakerIntervalScore]) -> Vec<Option<f64>> {
    (0..partition.n_intervals)
        .map(|j| {
            let s: Vec<f64> = scores
                .iter()
                .filter(|s| s.interval == j)
                .map(|s| s.score)
                .collect();
            team_diff(&s)
        })
        .collect()
}

/// Full pipeline for one dialogue. Dialogues with fewer than two intervals
/// holding a team difference (e.g. a single speaker) yield all four
/// variables missing rather than an error.
pub fn dialogue_convergence<S: Scorer + ?Sized>(
    scorer: &S,
    dialogue: &Dialogue,
    opts: &EntrainmentOptions,
) -> Result<ConvergenceVars> {
    let partition = if opts.by_turns {
        split_by_turns(dialogue, opts.n_intervals)?
    } else {
        split_intervals(dialogue, opts.n_intervals)?
    };
    let scores = speaker_scores(scorer, dialogue, &partition, opts.context_len)?;
    let tdiff = interval_tdiffs(&partition, &scores);
    if tdiff.iter().flatten().count() < 2 {
        return Ok(ConvergenceVars {
            dialogue_id: dialogue.dialogue_id.clone(),
            tdiff,
            max: None,
            min: None,
            abs_max: None,
            abs_min: None,
        });
    }
    convergence(&dialogue.dialogue_id, tdiff)
}

/// [`dialogue_convergence`] for every dialogue, in input order.
pub fn corpus_convergence<S: Scorer + ?Sized>(
    scorer: &S,
    dialogues: &[Dialogue],
    opts: &EntrainmentOptions,
) -> Result<Vec<ConvergenceVars>> {
    crate::par_map(dialogues, |d| dialogue_convergence(scorer, d, opts))
        .into_iter()
        .collect()
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// `dialogue_id, tdiff_1..tdiff_n, Max, Min, absMax, absMin`; missing
/// values are empty cells.
pub fn write_convergence_csv<W: Write>(w: W, rows: &[ConvergenceVars]) -> Result<()> {
    let n = rows.first().map_or(N_INTERVALS, |r| r.tdiff.len());
    if let Some(r) = rows.iter().find(|r| r.tdiff.len() != n) {
        return Err(Error::shape(
            "write_convergence_csv",
            format!("dialogue {} has {} intervals, expected {n}", r.dialogue_id, r.tdiff.len()),
        ));
    }
    let mut csv = csv::Writer::from_writer(w);
    let mut header = vec!["dialogue_id".to_string()];
    header.extend((1..=n).map(|j| format!("tdiff_{j}")));
    header.extend(VARIABLE_NAMES.iter().map(|s| s.to_string()));
    csv.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.dialogue_id.clone()];
        rec.extend(r.tdiff.iter().map(|&v| cell(v)));
        rec.extend(r.variables().iter().map(|&v| cell(v)));
        csv.write_record(&rec)?;
    }
    csv.flush().map_err(|e| Error::io("<convergence csv>", e))
}

pub fn read_convergence_csv(path: impl AsRef<Path>) -> Result<Vec<ConvergenceVars>> {
    let path = path.as_ref();
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    let n = headers.iter().filter(|h| h.starts_with("tdiff_")).count();
    if headers.len() != 1 + n + 4 || headers.get(0) != Some("dialogue_id") {
        return Err(Error::Parse {
            line: 1,
            message: format!("{}: unexpected convergence header", path.display()),
        });
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let parse = |s: &str| -> Result<Option<f64>> {
            if s.trim().is_empty() {
                return Ok(None);
            }
            s.trim().parse().map(Some).map_err(|_| Error::Parse {
                line,
                message: format!("invalid number {s:?}"),
            })
        };
        let vals: Vec<Option<f64>> = rec.iter().skip(1).map(parse).collect::<Result<_>>()?;
        rows.push(ConvergenceVars {
            dialogue_id: rec[0].to_string(),
            tdiff: vals[..n].to_vec(),
            max: vals[n],
            min: vals[n + 1],
            abs_max: vals[n + 2],
            abs_min: vals[n + 3],
        });
    }
    Ok(rows)
}
