//! Byte-pair-encoding vocabularies over whitespace-separated words.
//!
//! Words are split into characters and the last character carries the
//! end-of-word marker `</w>`, so that decoding can restore word boundaries.
//! Training repeatedly merges the most frequent adjacent symbol pair, with
//! ties broken by the lexicographically smallest pair.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::BufRead;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::nn::Matrix;
use crate::{Error, Result};

pub const END_OF_WORD: &str = "</w>";
pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";
pub const BOS: &str = "<bos>";
pub const SEP: &str = "<sep>";

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const BOS_ID: usize = 2;
pub const SEP_ID: usize = 3;
const SPECIALS: [&str; 4] = [PAD, UNK, BOS, SEP];

/// Merge rules plus a dense token table. Special tokens occupy ids 0..4.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    merges: Vec<(String, String)>,
    tokens: Vec<String>,
    token_to_id: HashMap<String, usize>,
    merge_rank: HashMap<(String, String), usize>,
}

/// Token ids padded to a fixed length.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<usize>,
    pub true_length: usize,
}

fn word_symbols(word: &str) -> Vec<String> {
    let chars: Vec<char> = word.chars().collect();
    chars
        .iter()
        .enumerate()
        .map(|(i, c)| {
            if i + 1 == chars.len() {
                format!("{c}{END_OF_WORD}")
            } else {
                c.to_string()
            }
        })
        .collect()
}

fn merge_pair(symbols: &[String], left: &str, right: &str) -> Vec<String> {
    let mut out = Vec::with_capacity(symbols.len());
    let mut i = 0;
    while i < symbols.len() {
        if i + 1 < symbols.len() && symbols[i] == left && symbols[i + 1] == right {
            out.push(format!("{left}{right}"));
            i += 2;
        } else {
            out.push(symbols[i].clone());
            i += 1;
        }
    }
    out
}

impl Vocabulary {
    fn from_parts(merges: Vec<(String, String)>, tokens: Vec<String>) -> Result<Self> {
        let mut token_to_id = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if token_to_id.insert(t.clone(), i).is_some() {
                return Err(Error::Validation(format!("duplicate token {t:?}")));
            }
        }
        for (i, s) in SPECIALS.iter().enumerate() {
            if tokens.get(i).map(String::as_str) != Some(s) {
                return Err(Error::Validation(format!(
                    "special token {s} must have id {i}"
                )));
            }
        }
        let merge_rank = merges
            .iter()
            .enumerate()
            .map(|(i, p)| (p.clone(), i))
            .collect();
        Ok(Self {
            merges,
            tokens,
            token_to_id,
            merge_rank,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Subword symbols of `text` after applying merges in training order.
    pub fn segment(&self, text: &str) -> Vec<String> {
        let mut out = Vec::new();
        for word in text.split_whitespace() {
            let mut symbols = word_symbols(word);
            loop {
                let best = symbols
                    .windows(2)
                    .filter_map(|w| {
                        self.merge_rank
                            .get(&(w[0].clone(), w[1].clone()))
                            .map(|&r| (r, w[0].clone(), w[1].clone()))
                    })
                    .min();
                match best {
                    Some((_, l, r)) => symbols = merge_pair(&symbols, &l, &r),
                    None => break,
                }
            }
            out.extend(symbols);
        }
        out
    }

    /// Unpadded ids for `text`; unknown symbols map to UNK.
    pub fn encode_ids(&self, text: &str) -> Vec<usize> {
        self.segment(text)
            .iter()
            .map(|s| self.id(s).unwrap_or(UNK_ID))
            .collect()
    }

    /// Encodes, keeps the last `max_len` ids and right-pads with PAD.
    pub fn encode(&self, text: &str, max_len: usize) -> TokenSequence {
        pad_suffix(self.encode_ids(text), max_len)
    }

    /// Encodes context turns joined by the separator token, keeping the most
    /// recent `max_len` ids.
    pub fn encode_turns<S: AsRef<str>>(&self, turns: &[S], max_len: usize) -> TokenSequence {
        let mut ids = Vec::new();
        for (i, t) in turns.iter().enumerate() {
            if i > 0 {
                ids.push(SEP_ID);
            }
            ids.extend(self.encode_ids(t.as_ref()));
        }
        pad_suffix(ids, max_len)
    }

    /// Inverse of segmentation: drops specials and restores word boundaries.
    pub fn decode(&self, ids: &[usize]) -> String {
        let mut text = String::new();
        for &id in ids {
            if id < SPECIALS.len() {
                continue;
            }
            if let Some(tok) = self.token(id) {
                match tok.strip_suffix(END_OF_WORD) {
                    Some(stem) => {
                        text.push_str(stem);
                        text.push(' ');
                    }
                    None => text.push_str(tok),
                }
            }
        }
        text.trim_end().to_string()
    }

    /// Text form: a `#merges` section of `left right` lines followed by a
    /// `#tokens` section with one token per line in id order.
    pub fn to_text(&self) -> String {
        let mut s = String::from("#merges\n");
        for (l, r) in &self.merges {
            s.push_str(l);
            s.push(' ');
            s.push_str(r);
            s.push('\n');
        }
        s.push_str("#tokens\n");
        for t in &self.tokens {
            s.push_str(t);
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        enum Section {
            None,
            Merges,
            Tokens,
        }
        let mut section = Section::None;
        let mut merges = Vec::new();
        let mut tokens = Vec::new();
        for (n, line) in text.lines().enumerate() {
            match line {
                "#merges" => section = Section::Merges,
                "#tokens" => section = Section::Tokens,
                _ => match section {
                    Section::Merges => {
                        let (l, r) = line.split_once(' ').ok_or_else(|| Error::Parse {
                            line: n + 1,
                            message: "merge rule needs two symbols".into(),
                        })?;
                        merges.push((l.to_string(), r.to_string()));
                    }
                    Section::Tokens => tokens.push(line.to_string()),
                    Section::None if line.is_empty() => {}
                    Section::None => {
                        return Err(Error::Parse {
                            line: n + 1,
                            message: "expected #merges header".into(),
                        })
                    }
                },
            }
        }
        Self::from_parts(merges, tokens)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

fn pad_suffix(mut ids: Vec<usize>, max_len: usize) -> TokenSequence {
    if ids.len() > max_len {
        ids.drain(..ids.len() - max_len);
    }
    let true_length = ids.len();
    ids.resize(max_len, PAD_ID);
    TokenSequence { ids, true_length }
}

/// Trains merges until the vocabulary (specials included) reaches
/// `vocab_size` or no adjacent pair remains.
pub fn train_bpe<S: AsRef<str>>(corpus_texts: &[S], vocab_size: usize) -> Result<Vocabulary> {
    let mut word_counts: BTreeMap<Vec<String>, u64> = BTreeMap::new();
    for text in corpus_texts {
        for word in text.as_ref().split_whitespace() {
            *word_counts.entry(word_symbols(word)).or_default() += 1;
        }
    }
    if word_counts.is_empty() {
        return Err(Error::Validation("cannot train BPE on an empty corpus".into()));
    }
    let base: BTreeSet<String> = word_counts.keys().flatten().cloned().collect();
    let floor = SPECIALS.len() + base.len();
    if vocab_size < floor {
        return Err(Error::Config(format!(
            "vocab_size {vocab_size} is below the {floor} specials and base symbols"
        )));
    }
    let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
    tokens.extend(base);

    let mut words: Vec<(Vec<String>, u64)> = word_counts.into_iter().collect();
    let mut merges = Vec::new();
    while tokens.len() < vocab_size {
        let mut pair_counts: HashMap<(&str, &str), u64> = HashMap::new();
        for (symbols, count) in &words {
            for w in symbols.windows(2) {
                *pair_counts.entry((&w[0], &w[1])).or_default() += count;
            }
        }
        // Highest count; among equal counts the lexicographically smallest pair.
        let Some(((l, r), _)) = pair_counts
            .into_iter()
            .max_by(|(pa, ca), (pb, cb)| ca.cmp(cb).then_with(|| pb.cmp(pa)))
        else {
            break;
        };
        let (l, r) = (l.to_string(), r.to_string());
        for (symbols, _) in &mut words {
            if symbols.windows(2).any(|w| w[0] == l && w[1] == r) {
                *symbols = merge_pair(symbols, &l, &r);
            }
        }
        tokens.push(format!("{l}{r}"));
        merges.push((l, r));
    }
    Vocabulary::from_parts(merges, tokens)
}

/// Loads word vectors (`token v1 .. vd` per line) into a `[vocab x d]`
/// table. Rows absent from the file are drawn from N(0, 0.02²); the PAD row
/// is zero. An optional leading `count dim` header line is skipped.
pub fn load_embeddings(
    path: impl AsRef<Path>,
    vocab: &Vocabulary,
    dim: usize,
    seed: u64,
) -> Result<Matrix> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = std::io::BufReader::new(file);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut table = random_embeddings(vocab.len(), dim, &mut rng);
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let mut fields = line.split_whitespace();
        let Some(token) = fields.next() else { continue };
        let values: Vec<&str> = fields.collect();
        if n == 0 && values.len() == 1 && token.parse::<usize>().is_ok() {
            continue;
        }
        if values.len() != dim {
            return Err(Error::Config(format!(
                "{}: line {} has {} values, expected dimension {dim}",
                path.display(),
                n + 1,
                values.len()
            )));
        }
        let Some(id) = vocab.id(token) else { continue };
        if id == PAD_ID {
            continue;
        }
        for (j, v) in values.iter().enumerate() {
            table[(id, j)] = v.parse().map_err(|_| Error::Parse {
                line: n + 1,
                message: format!("invalid number {v:?}"),
            })?;
        }
    }
    Ok(table)
}

/// `[rows x dim]` drawn from N(0, 0.02²).
pub(crate) fn normal_init(rows: usize, dim: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let normal = Normal::new(0.0, 0.02).expect("valid normal");
    Matrix::from_fn(rows, dim, |_, _| normal.sample(rng))
}

pub(crate) fn random_embeddings(rows: usize, dim: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let mut table = normal_init(rows, dim, rng);
    if rows > 0 {
        table.row_mut(PAD_ID).fill(0.0);
    }
    table
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_merge_is_most_frequent_pair() {
        let corpus = ["aaab aaab"];
        // base symbols: "a", "b</w>"
        let vocab = train_bpe(&corpus, SPECIALS.len() + 2 + 1).unwrap();
        assert_eq!(vocab.merges(), &[("a".to_string(), "a".to_string())]);
    }

    #[test]
    fn single_character_corpus_has_no_merges() {
        let vocab = train_bpe(&["a"], 100).unwrap();
        assert!(vocab.merges().is_empty());
        assert_eq!(vocab.tokens(), &[PAD, UNK, BOS, SEP, "a</w>"]);
    }

    #[test]
    fn too_small_vocabulary_is_rejected() {
        assert!(train_bpe(&["abc"], 5).is_err());
        assert!(train_bpe::<&str>(&[], 50).is_err());
    }

    #[test]
    fn training_is_deterministic() {
        let corpus = ["the cat sat on the mat", "the dog sat on the log", "a cat and a dog"];
        let a = train_bpe(&corpus, 40).unwrap();
        let b = train_bpe(&corpus, 40).unwrap();
        assert_eq!(a.merges(), b.merges());
        assert!(!a.merges().is_empty());
    }

    #[test]
    fn encode_pads_and_truncates_from_the_left() {
        let corpus = ["ab cd ef gh"];
        let vocab = train_bpe(&corpus, 4 + 8).unwrap();
        let empty = vocab.encode("", 5);
        assert_eq!(empty.ids, vec![PAD_ID; 5]);
        assert_eq!(empty.true_length, 0);

        let full = vocab.encode_ids("ab cd ef");
        assert_eq!(full.len(), 6);
        let exact = vocab.encode("ab cd ef", 6);
        assert_eq!(exact.ids, full);
        assert_eq!(exact.true_length, 6);
        let cut = vocab.encode("ab cd ef", 4);
        assert_eq!(cut.ids, full[2..].to_vec());
    }

    #[test]
    fn unknown_characters_map_to_unk() {
        let vocab = train_bpe(&["ab"], 10).unwrap();
        let ids = vocab.encode_ids("zz");
        assert!(ids.iter().all(|&i| i == UNK_ID));
    }

    #[test]
    fn text_roundtrip() {
        let vocab = train_bpe(&["hello world", "hello there"], 30).unwrap();
        let back = Vocabulary::from_text(&vocab.to_text()).unwrap();
        assert_eq!(back, vocab);
        assert_eq!(back.decode(&back.encode_ids("hello there")), "hello there");
    }

    #[test]
    fn turns_are_joined_with_separator() {
        let vocab = train_bpe(&["ab cd"], 20).unwrap();
        let seq = vocab.encode_turns(&["ab", "cd"], 10);
        let ab = vocab.encode_ids("ab");
        let cd = vocab.encode_ids("cd");
        let mut expected = ab.clone();
        expected.push(SEP_ID);
        expected.extend(cd);
        assert_eq!(&seq.ids[..seq.true_length], expected.as_slice());
    }
}
