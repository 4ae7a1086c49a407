//! Run configuration: profile defaults, then a flat `key = value` file, then
//! command-line overrides.

use std::fmt::Write as _;
use std::path::Path;

use entrain::corpus::DatasetConfig;
use entrain::entrainment::{N_INTERVALS, SCORE_CONTEXT_LEN};
use entrain::model::ModelConfig;
use entrain::stats::DEFAULT_ENTER_P;
use entrain::{Error, Result};

pub const DEFAULT_PROFILE: &str = "desk";
pub const DEFAULT_VOCAB_SIZE: usize = 1000;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub profile: String,
    pub seed: u64,
    pub model: ModelConfig,
    pub dataset: DatasetConfig,
    pub vocab_size: usize,
    pub n_intervals: usize,
    pub score_context_len: usize,
    pub by_turns: bool,
    pub enter_p: f64,
}

impl RunConfig {
    pub fn for_profile(name: &str) -> Result<Self> {
        Ok(Self {
            profile: name.to_string(),
            seed: 0,
            model: ModelConfig::profile(name)?,
            dataset: DatasetConfig::default(),
            vocab_size: DEFAULT_VOCAB_SIZE,
            n_intervals: N_INTERVALS,
            score_context_len: SCORE_CONTEXT_LEN,
            by_turns: false,
            enter_p: DEFAULT_ENTER_P,
        })
    }

    /// Resolves the layered configuration. The profile is taken from the
    /// flags, else the file, else the default; remaining file entries and
    /// then flag overrides are applied on top of it.
    pub fn resolve(file: Option<&Path>, profile_flag: Option<&str>, overrides: &[(String, String)]) -> Result<Self> {
        let file_entries = match file {
            Some(path) => parse_file(path)?,
            None => Vec::new(),
        };
        let profile = profile_flag
            .map(str::to_string)
            .or_else(|| {
                file_entries
                    .iter()
                    .find(|(k, _)| k == "profile")
                    .map(|(_, v)| v.clone())
            })
            .unwrap_or_else(|| DEFAULT_PROFILE.to_string());
        let mut cfg = Self::for_profile(&profile)?;
        for (k, v) in file_entries.iter().chain(overrides) {
            if k != "profile" {
                cfg.set(k, v)?;
            }
        }
        cfg.model.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
        }
        let m = &mut self.model;
        match key {
            "seed" => self.seed = parse(key, value)?,
            "d_model" => m.d_model = parse(key, value)?,
            "stylebook_size" => m.stylebook_size = parse(key, value)?,
            "encoder_hidden" => m.encoder_hidden = parse(key, value)?,
            "aggregation_hidden" => m.aggregation_hidden = parse(key, value)?,
            "n_heads" => m.n_heads = parse(key, value)?,
            "max_context_tokens" => m.max_context_tokens = parse(key, value)?,
            "max_response_tokens" => m.max_response_tokens = parse(key, value)?,
            "batch_size" => m.batch_size = parse(key, value)?,
            "lr" => m.lr = parse(key, value)?,
            "max_epochs" => m.max_epochs = parse(key, value)?,
            "use_stylebook" => m.use_stylebook = parse(key, value)?,
            "shared_encoders" => m.shared_encoders = parse(key, value)?,
            "context_len" => self.dataset.context_len = parse(key, value)?,
            "neg_train" => self.dataset.neg_train = parse(key, value)?,
            "neg_eval" => self.dataset.neg_eval = parse(key, value)?,
            "split_ratio" => {
                let parts: Vec<u32> = value
                    .split(':')
                    .map(|p| parse(key, p.trim()))
                    .collect::<Result<_>>()?;
                let [a, b, c] = parts[..] else {
                    return Err(Error::Config(format!("split_ratio must look like 6:2:2, got {value:?}")));
                };
                self.dataset.split_ratio = (a, b, c);
            }
            "vocab_size" => self.vocab_size = parse(key, value)?,
            "n_intervals" => self.n_intervals = parse(key, value)?,
            "score_context_len" => self.score_context_len = parse(key, value)?,
            "by_turns" => self.by_turns = parse(key, value)?,
            "enter_p" => self.enter_p = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown configuration key {other:?}"))),
        }
        Ok(())
    }

    /// `key = value` lines in a fixed order; readable back by [`parse_file`].
    pub fn to_text(&self) -> String {
        let m = &self.model;
        let (a, b, c) = self.dataset.split_ratio;
        let mut s = String::new();
        let mut line = |k: &str, v: String| writeln!(s, "{k} = {v}").expect("string write");
        line("profile", self.profile.clone());
        line("seed", self.seed.to_string());
        line("d_model", m.d_model.to_string());
        line("stylebook_size", m.stylebook_size.to_string());
        line("encoder_hidden", m.encoder_hidden.to_string());
        line("aggregation_hidden", m.aggregation_hidden.to_string());
        line("n_heads", m.n_heads.to_string());
        line("max_context_tokens", m.max_context_tokens.to_string());
        line("max_response_tokens", m.max_response_tokens.to_string());
        line("batch_size", m.batch_size.to_string());
        line("lr", m.lr.to_string());
        line("max_epochs", m.max_epochs.to_string());
        line("use_stylebook", m.use_stylebook.to_string());
        line("shared_encoders", m.shared_encoders.to_string());
        line("context_len", self.dataset.context_len.to_string());
        line("split_ratio", format!("{a}:{b}:{c}"));
        line("neg_train", self.dataset.neg_train.to_string());
        line("neg_eval", self.dataset.neg_eval.to_string());
        line("vocab_size", self.vocab_size.to_string());
        line("n_intervals", self.n_intervals.to_string());
        line("score_context_len", self.score_context_len.to_string());
        line("by_turns", self.by_turns.to_string());
        line("enter_p", self.enter_p.to_string());
        s
    }

    /// Dataset settings with the run seed.
    pub fn dataset_config(&self) -> DatasetConfig {
        DatasetConfig {
            seed: self.seed,
            ..self.dataset.clone()
        }
    }
}

/// Flat `key = value` pairs; `#` starts a comment.
pub fn parse_text(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: n + 1,
            message: format!("expected key = value, got {raw:?}"),
        })?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub fn parse_file(path: &Path) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_text(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}
