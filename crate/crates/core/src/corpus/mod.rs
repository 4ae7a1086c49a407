//! Dialogue corpora: loading, matching-dataset construction and synthetic
//! style-conditioned corpora.

mod dataset;
mod synthetic;

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use dataset::{
    build_dataset, group_by_context, read_examples, write_examples, CandidateGroup, DatasetConfig,
    DatasetSplits, MatchingExample,
};
pub use synthetic::{
    generate_synthetic_corpus, EchoSchedule, SyntheticConfig, SyntheticCorpus,
};

/// One inter-pausal unit, treated as a conversational turn.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    #[serde(rename = "speaker")]
    pub speaker_id: String,
    pub text: String,
    #[serde(rename = "start")]
    pub start_time: f64,
    #[serde(rename = "end")]
    pub end_time: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dialogue {
    pub dialogue_id: String,
    pub turns: Vec<Turn>,
}

impl Dialogue {
    /// Checks the turn and ordering invariants.
    pub fn validate(&self) -> Result<()> {
        let id = &self.dialogue_id;
        let mut last_start = f64::NEG_INFINITY;
        for (i, t) in self.turns.iter().enumerate() {
            if !(t.start_time.is_finite() && t.end_time.is_finite()) || t.start_time < 0.0 {
                return Err(Error::Validation(format!(
                    "dialogue {id}, turn {i}: timestamps must be finite and non-negative"
                )));
            }
            if t.end_time < t.start_time {
                return Err(Error::Validation(format!(
                    "dialogue {id}, turn {i}: end_time {} precedes start_time {}",
                    t.end_time, t.start_time
                )));
            }
            if t.text.trim().is_empty() {
                return Err(Error::Validation(format!("dialogue {id}, turn {i}: empty text")));
            }
            if t.start_time < last_start {
                return Err(Error::Validation(format!(
                    "dialogue {id}, turn {i}: turns are not ordered by start_time"
                )));
            }
            last_start = t.start_time;
        }
        Ok(())
    }

    /// Distinct speakers in order of first appearance.
    pub fn speakers(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for t in &self.turns {
            if !out.contains(&t.speaker_id.as_str()) {
                out.push(&t.speaker_id);
            }
        }
        out
    }
}

/// Parses JSONL dialogues, one per line. Blank lines are skipped.
pub fn parse_corpus<R: BufRead>(reader: R) -> Result<Vec<Dialogue>> {
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::Parse {
            line: n + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let d: Dialogue = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: n + 1,
            message: e.to_string(),
        })?;
        d.validate()?;
        out.push(d);
    }
    Ok(out)
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<Dialogue>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(std::io::BufReader::new(file))
}

pub fn write_corpus<W: Write>(mut w: W, dialogues: &[Dialogue]) -> Result<()> {
    for d in dialogues {
        let line = serde_json::to_string(d).map_err(|e| Error::Validation(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| Error::io("<corpus writer>", e))?;
    }
    Ok(())
}

pub fn save_corpus(path: impl AsRef<Path>, dialogues: &[Dialogue]) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_corpus(&mut buf, dialogues)?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}
