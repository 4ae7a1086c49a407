use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Dialogue, Turn};
use crate::{Error, Result};

const WORDS_PER_FAMILY: usize = 5;
const TURN_SPACING: f64 = 2.0;
const TURN_DURATION: f64 = 1.5;

const CONSONANTS: [char; 14] = ['b', 'd', 'f', 'g', 'k', 'l', 'm', 'n', 'p', 'r', 's', 't', 'v', 'z'];
const VOWELS: [char; 5] = ['a', 'e', 'i', 'o', 'u'];

const FILLERS: [&str; 12] = [
    "really", "maybe", "just", "also", "quite", "pretty", "still", "again", "now", "then", "sure",
    "okay",
];

// `{0}` and `{1}` are family words, `{f}` is a filler.
const TEMPLATES: [&str; 8] = [
    "i think {0} {f}",
    "what about the {0} and {1}",
    "{f} {0} {1}",
    "we should {f} try {0}",
    "the {0} is {f} better than {1}",
    "so {0} then",
    "{0} {0} {f}",
    "do you have {1} or {0}",
];

/// How the echo probability evolves inside a dialogue.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum EchoSchedule {
    /// Every turn echoes with probability `1/K + (1 - 1/K)·s`.
    #[default]
    Constant,
    /// Speaker `k` of `m` at turn `t` of `n` echoes with probability
    /// `1/K + (1 - 1/K)·s·((1-τ)·k/(m-1) + τ)`, `τ = t/(n-1)`: speakers start
    /// with different propensities and converge to the full strength.
    Converging,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub n_dialogues: usize,
    pub n_speakers_per_dialogue: usize,
    pub turns_per_dialogue: usize,
    pub style_count: usize,
    pub convergence_strength: f64,
    pub seed: u64,
    pub schedule: EchoSchedule,
}

impl SyntheticConfig {
    pub fn new(
        n_dialogues: usize,
        n_speakers_per_dialogue: usize,
        turns_per_dialogue: usize,
        style_count: usize,
        convergence_strength: f64,
        seed: u64,
    ) -> Self {
        Self {
            n_dialogues,
            n_speakers_per_dialogue,
            turns_per_dialogue,
            style_count,
            convergence_strength,
            seed,
            schedule: EchoSchedule::Constant,
        }
    }

    pub fn with_schedule(mut self, schedule: EchoSchedule) -> Self {
        self.schedule = schedule;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.n_dialogues == 0 || self.n_speakers_per_dialogue == 0 || self.turns_per_dialogue == 0 {
            return Err(Error::Validation(
                "synthetic corpus counts must all be positive".into(),
            ));
        }
        if self.style_count < 2 {
            return Err(Error::Validation(format!(
                "style_count must be at least 2, got {}",
                self.style_count
            )));
        }
        if !(0.0..=1.0).contains(&self.convergence_strength) {
            return Err(Error::Validation(format!(
                "convergence_strength must lie in [0, 1], got {}",
                self.convergence_strength
            )));
        }
        Ok(())
    }

    fn echo_probability(&self, speaker: usize, turn: usize) -> f64 {
        let k = self.style_count as f64;
        let s = self.convergence_strength;
        let strength = match self.schedule {
            EchoSchedule::Constant => s,
            EchoSchedule::Converging => {
                let m = self.n_speakers_per_dialogue;
                let n = self.turns_per_dialogue;
                let a = if m > 1 { speaker as f64 / (m - 1) as f64 } else { 1.0 };
                let tau = if n > 1 { turn as f64 / (n - 1) as f64 } else { 1.0 };
                s * ((1.0 - tau) * a + tau)
            }
        };
        1.0 / k + (1.0 - 1.0 / k) * strength
    }
}

/// Generated dialogues with the utterance family of every turn.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticCorpus {
    pub dialogues: Vec<Dialogue>,
    pub families: Vec<Vec<usize>>,
}

impl SyntheticCorpus {
    /// Fraction of non-initial turns whose family equals the previous turn's.
    pub fn echo_rate(&self) -> f64 {
        let (mut echoes, mut total) = (0usize, 0usize);
        for fam in &self.families {
            for w in fam.windows(2) {
                total += 1;
                echoes += usize::from(w[0] == w[1]);
            }
        }
        if total == 0 {
            return f64::NAN;
        }
        echoes as f64 / total as f64
    }
}

/// Word `w` of family `f`. Fixed across seeds, so corpora with different
/// seeds share one lexicon.
pub fn family_word(family: usize, w: usize) -> String {
    let syllable = |i: usize| {
        let i = i % (CONSONANTS.len() * VOWELS.len());
        format!("{}{}", CONSONANTS[i / VOWELS.len()], VOWELS[i % VOWELS.len()])
    };
    let i = family * WORDS_PER_FAMILY + w;
    format!("{}{}{}", syllable(i / 70), syllable(i), syllable(i * 37 + 11))
}

fn render(template: &str, family: usize, rng: &mut ChaCha8Rng) -> String {
    let a = family_word(family, rng.random_range(0..WORDS_PER_FAMILY));
    let b = family_word(family, rng.random_range(0..WORDS_PER_FAMILY));
    let f = FILLERS[rng.random_range(0..FILLERS.len())];
    template.replace("{0}", &a).replace("{1}", &b).replace("{f}", f)
}

pub fn generate_synthetic_corpus(cfg: &SyntheticConfig) -> Result<SyntheticCorpus> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let k = cfg.style_count;
    let m = cfg.n_speakers_per_dialogue;
    let mut dialogues = Vec::with_capacity(cfg.n_dialogues);
    let mut families = Vec::with_capacity(cfg.n_dialogues);

    for d in 0..cfg.n_dialogues {
        let styles: Vec<WeightedIndex<f64>> = (0..m)
            .map(|_| {
                let w: Vec<f64> = (0..TEMPLATES.len())
                    .map(|_| rng.random::<f64>().powi(3) + 1e-3)
                    .collect();
                WeightedIndex::new(w).expect("positive template weights")
            })
            .collect();

        let mut speaker = rng.random_range(0..m);
        let mut family = rng.random_range(0..k);
        let mut turns = Vec::with_capacity(cfg.turns_per_dialogue);
        let mut fams = Vec::with_capacity(cfg.turns_per_dialogue);
        for t in 0..cfg.turns_per_dialogue {
            if t > 0 {
                if m > 1 {
                    let next = rng.random_range(0..m - 1);
                    speaker = if next >= speaker { next + 1 } else { next };
                }
                if rng.random::<f64>() >= cfg.echo_probability(speaker, t) {
                    let other = rng.random_range(0..k - 1);
                    family = if other >= family { other + 1 } else { other };
                }
            }
            let template = TEMPLATES[styles[speaker].sample(&mut rng)];
            let start = t as f64 * TURN_SPACING;
            turns.push(Turn {
                speaker_id: format!("spk{speaker}"),
                text: render(template, family, &mut rng),
                start_time: start,
                end_time: start + TURN_DURATION,
            });
            fams.push(family);
        }
        dialogues.push(Dialogue {
            dialogue_id: format!("syn{d:04}"),
            turns,
        });
        families.push(fams);
    }
    Ok(SyntheticCorpus {
        dialogues,
        families,
    })
}
