//! The stylebook-augmented response matching model.
//!
//! A context and a candidate response are embedded, mixed with a learned
//! global stylebook through multi-head attention (Add&Norm), and encoded by
//! a shared LSTM. The response encoding attends over the context encoding,
//! an aggregation LSTM reads the result and a dense softmax yields the
//! matching score `g`.

mod config;
mod recall;
mod style;
mod train;

use std::path::Path;

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::nn::layers::{split_head_attention, LinearIds, LstmIds, MultiHeadIds};
use crate::nn::{Checkpoint, Matrix, ParamId, ParamStore, Tape, Var};
use crate::tokenizer::{self, TokenSequence, Vocabulary, PAD_ID};
use crate::{Error, Result};

pub use config::ModelConfig;
pub use recall::{evaluate_recall, positive_rank, Scorer};
pub use style::{extract_style_embeddings, write_style_tsv};
pub use train::{
    loss_and_gradients, mean_loss, train, train_with, write_train_log, BestCheckpoint, EpochLog,
    TrainReport, VALIDATION_KS,
};

const CHECKPOINT_KIND: &str = "entrain-matching-model";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct StylebookIds {
    values: ParamId,
    key: LinearIds,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct EncoderIds {
    norm_gain: ParamId,
    norm_bias: ParamId,
    lstm: LstmIds,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct ModelIds {
    embedding: ParamId,
    stylebook: Option<StylebookIds>,
    context_encoder: EncoderIds,
    response_encoder: EncoderIds,
    matching: MultiHeadIds,
    aggregation: LstmIds,
    projection: LinearIds,
}

/// Which side of a pair is being encoded; only matters when encoders are
/// not shared.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Context,
    Response,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MatchingModel {
    pub config: ModelConfig,
    vocab: Vocabulary,
    store: ParamStore,
    ids: ModelIds,
}

struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    fn uniform(&mut self, rows: usize, cols: usize, fan_in: usize) -> Matrix {
        let a = 1.0 / (fan_in as f64).sqrt();
        let dist = Uniform::new_inclusive(-a, a).expect("finite bound");
        Matrix::from_fn(rows, cols, |_, _| dist.sample(&mut self.rng))
    }

    fn linear(&mut self, store: &mut ParamStore, name: &str, d_out: usize, d_in: usize) -> LinearIds {
        LinearIds {
            weight: store.add(format!("{name}.weight"), self.uniform(d_out, d_in, d_in)),
            bias: store.add(format!("{name}.bias"), self.uniform(1, d_out, d_in)),
        }
    }

    fn lstm(&mut self, store: &mut ParamStore, name: &str, d_in: usize, h: usize) -> LstmIds {
        LstmIds {
            w_ih: store.add(format!("{name}.w_ih"), self.uniform(4 * h, d_in, h)),
            w_hh: store.add(format!("{name}.w_hh"), self.uniform(4 * h, h, h)),
            bias: store.add(format!("{name}.bias"), self.uniform(1, 4 * h, h)),
        }
    }

    fn encoder(&mut self, store: &mut ParamStore, name: &str, cfg: &ModelConfig) -> EncoderIds {
        let d = cfg.d_model;
        EncoderIds {
            norm_gain: store.add(format!("{name}.norm.gain"), Matrix::filled(1, d, 1.0)),
            norm_bias: store.add(format!("{name}.norm.bias"), Matrix::zeros(1, d)),
            lstm: self.lstm(store, &format!("{name}.lstm"), d, cfg.encoder_hidden),
        }
    }
}

impl MatchingModel {
    /// A freshly initialized model: uniform(±1/√fan_in) for dense and LSTM
    /// weights, N(0, 0.02²) for embeddings and stylebook values.
    pub fn new(config: ModelConfig, vocab: Vocabulary, seed: u64) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let mut init = Init {
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        let mut store = ParamStore::new();
        let embedding = store.add(
            "embedding",
            tokenizer::random_embeddings(vocab.len(), d, &mut init.rng),
        );
        let stylebook = config.use_stylebook.then(|| {
            let values = tokenizer::normal_init(config.stylebook_size, d, &mut init.rng);
            StylebookIds {
                values: store.add("stylebook.values", values),
                key: init.linear(&mut store, "stylebook.key", d, d),
            }
        });
        let context_encoder = init.encoder(&mut store, "encoder", &config);
        let response_encoder = if config.shared_encoders {
            context_encoder
        } else {
            init.encoder(&mut store, "response_encoder", &config)
        };
        let h = config.encoder_hidden;
        let matching = MultiHeadIds {
            query: init.linear(&mut store, "matching.query", d, h),
            key: init.linear(&mut store, "matching.key", d, h),
            value: init.linear(&mut store, "matching.value", d, h),
            output: init.linear(&mut store, "matching.output", d, d),
        };
        let aggregation = init.lstm(&mut store, "aggregation.lstm", d, config.aggregation_hidden);
        let projection = init.linear(&mut store, "projection", 2, config.aggregation_hidden);
        Ok(Self {
            config,
            vocab,
            store,
            ids: ModelIds {
                embedding,
                stylebook,
                context_encoder,
                response_encoder,
                matching,
                aggregation,
                projection,
            },
        })
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn param_count(&self) -> usize {
        self.store.num_scalars()
    }

    /// Replaces the embedding table, e.g. with pre-trained vectors.
    pub fn set_embeddings(&mut self, mut table: Matrix) -> Result<()> {
        let p = self.store.get_mut(self.ids.embedding);
        if table.shape() != p.value.shape() {
            return Err(Error::ConfigMismatch(format!(
                "embedding table {:?}, model expects {:?}",
                table.shape(),
                p.value.shape()
            )));
        }
        table.row_mut(PAD_ID).fill(0.0);
        p.value = table;
        Ok(())
    }

    /// Names of the stylebook parameters (empty for the ablation).
    pub fn stylebook_param_names(&self) -> Vec<&str> {
        match self.ids.stylebook {
            None => Vec::new(),
            Some(sb) => [sb.values, sb.key.weight, sb.key.bias]
                .iter()
                .map(|&id| self.store.get(id).name.as_str())
                .collect(),
        }
    }

    /// Padded context ids: turns joined by the separator, most recent kept.
    pub fn context_ids<S: AsRef<str>>(&self, turns: &[S]) -> Vec<usize> {
        self.vocab
            .encode_turns(turns, self.config.max_context_tokens)
            .ids
    }

    pub fn response_ids(&self, text: &str) -> Vec<usize> {
        self.response_tokens(text).ids
    }

    /// Padded response ids together with the unpadded length.
    pub fn response_tokens(&self, text: &str) -> TokenSequence {
        self.vocab.encode(text, self.config.max_response_tokens)
    }

    pub fn forward<'m>(&'m self) -> ForwardPass<'m> {
        self.forward_with(&self.store)
    }

    /// A forward pass reading parameters from `store`, which must have this
    /// model's layout. Used for finite differences.
    pub fn forward_with<'m>(&'m self, store: &'m ParamStore) -> ForwardPass<'m> {
        ForwardPass {
            model: self,
            tape: Tape::new(store),
            stylebook_kv: None,
        }
    }

    /// `g` for one pair.
    pub fn score(&self, context: &[String], response: &str) -> Result<f64> {
        Ok(self.score_group(context, &[response.to_string()])?[0])
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let config = serde_json::to_string(&self.config)
            .map_err(|e| Error::Checkpoint(format!("serializing config: {e}")))?;
        Ok(Checkpoint {
            meta: vec![
                ("kind".into(), CHECKPOINT_KIND.into()),
                ("config".into(), config),
                ("vocab".into(), self.vocab.to_text()),
            ],
            tensors: self
                .store
                .iter()
                .map(|(_, p)| (p.name.clone(), p.value.clone()))
                .collect(),
        })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.meta("kind") != Some(CHECKPOINT_KIND) {
            return Err(Error::Checkpoint("not a matching-model checkpoint".into()));
        }
        let config: ModelConfig = serde_json::from_str(
            ckpt.meta("config")
                .ok_or_else(|| Error::Checkpoint("missing config".into()))?,
        )
        .map_err(|e| Error::Checkpoint(format!("config: {e}")))?;
        let vocab = Vocabulary::from_text(
            ckpt.meta("vocab")
                .ok_or_else(|| Error::Checkpoint("missing vocabulary".into()))?,
        )?;
        let mut model = Self::new(config, vocab, 0)?;
        if ckpt.tensors.len() != model.store.len() {
            return Err(Error::ConfigMismatch(format!(
                "checkpoint has {} tensors, configuration expects {}",
                ckpt.tensors.len(),
                model.store.len()
            )));
        }
        for ((name, value), p) in ckpt.tensors.iter().zip(model.store.iter_mut()) {
            if *name != p.name || value.shape() != p.value.shape() {
                return Err(Error::ConfigMismatch(format!(
                    "tensor {name} {:?} does not match {} {:?}",
                    value.shape(),
                    p.name,
                    p.value.shape()
                )));
            }
            if !value.is_finite() {
                return Err(Error::Checkpoint(format!("tensor {name} has non-finite values")));
            }
            p.value = value.clone();
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.to_checkpoint()?
            .write_to(&mut w)
            .map_err(|e| Error::io(path, e))?;
        std::io::Write::flush(&mut w).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint(&Checkpoint::read_from(std::io::BufReader::new(file))?)
    }
}

impl Scorer for MatchingModel {
    fn score_group(&self, context: &[String], responses: &[String]) -> Result<Vec<f64>> {
        let mut pass = self.forward();
        let h_c = pass.encode(&self.context_ids(context), Side::Context)?;
        responses
            .iter()
            .map(|r| {
                let r = self.response_tokens(r);
                let h_r = pass.encode(&r.ids, Side::Response)?;
                let m = pass.match_encodings(h_c, h_r)?;
                let logits = pass.aggregate(m, r.true_length)?;
                Ok(pass.probability(logits))
            })
            .collect()
    }
}

/// One differentiable evaluation of the model. The stylebook key is computed
/// once per pass and reused by every sequence encoded on it.
pub struct ForwardPass<'m> {
    model: &'m MatchingModel,
    pub tape: Tape<'m>,
    stylebook_kv: Option<(Var, Var)>,
}

impl<'m> ForwardPass<'m> {
    pub fn embed(&mut self, ids: &[usize]) -> Result<Var> {
        let table = self.tape.param(self.model.ids.embedding);
        self.tape.gather(table, ids, Some(PAD_ID))
    }

    /// `(K, V_global)` of the stylebook.
    fn stylebook(&mut self, sb: StylebookIds) -> Result<(Var, Var)> {
        if let Some(kv) = self.stylebook_kv {
            return Ok(kv);
        }
        let v = self.tape.param(sb.values);
        let k = sb.key.apply(&mut self.tape, v)?;
        self.stylebook_kv = Some((k, v));
        Ok((k, v))
    }

    /// `M_style = MultiHead(E, K, V_global)`; `None` for the ablation.
    pub fn style_attention(&mut self, e: Var) -> Result<Option<Var>> {
        let Some(sb) = self.model.ids.stylebook else {
            return Ok(None);
        };
        let (k, v) = self.stylebook(sb)?;
        split_head_attention(&mut self.tape, e, k, v, self.model.config.n_heads).map(Some)
    }

    /// `LayerNorm(E + M_style)`, or `E` when the stylebook is disabled.
    pub fn stylebook_attend(&mut self, e: Var, side: Side) -> Result<Var> {
        let Some(m) = self.style_attention(e)? else {
            return Ok(e);
        };
        let enc = self.encoder(side);
        let sum = self.tape.add(e, m)?;
        let gain = self.tape.param(enc.norm_gain);
        let bias = self.tape.param(enc.norm_bias);
        self.tape.layer_norm(sum, gain, bias)
    }

    fn encoder(&self, side: Side) -> EncoderIds {
        match side {
            Side::Context => self.model.ids.context_encoder,
            Side::Response => self.model.ids.response_encoder,
        }
    }

    /// Embedding, stylebook and LSTM: every hidden state `[n x d_h]`.
    pub fn encode(&mut self, ids: &[usize], side: Side) -> Result<Var> {
        let e = self.embed(ids)?;
        let hybrid = self.stylebook_attend(e, side)?;
        self.encoder(side).lstm.apply(&mut self.tape, hybrid)
    }

    /// `M_rc = MultiHead(Q = H_r, K = H_c, V = H_c)`, `[n_r x d_model]`.
    pub fn match_encodings(&mut self, h_c: Var, h_r: Var) -> Result<Var> {
        let n_heads = self.model.config.n_heads;
        self.model
            .ids
            .matching
            .apply(&mut self.tape, h_r, h_c, h_c, n_heads)
    }

    /// Aggregation LSTM over `M_rc`, then `W h + b` on the hidden state at
    /// the last real response token (`n_r` of them; padding rows after it
    /// cannot reach that state). Returns the `1 x 2` logits.
    pub fn aggregate(&mut self, m_rc: Var, n_r: usize) -> Result<Var> {
        let h = self.model.ids.aggregation.apply(&mut self.tape, m_rc)?;
        let rows = self.tape.value(h).rows();
        if rows == 0 {
            return Err(Error::shape("aggregate", "empty sequence"));
        }
        let last = self.tape.gather(h, &[n_r.clamp(1, rows) - 1], None)?;
        self.model.ids.projection.apply(&mut self.tape, last)
    }

    /// Positive-class probability `g` of `1 x 2` logits.
    pub fn probability(&self, logits: Var) -> f64 {
        let l = self.tape.value(logits).as_slice();
        crate::nn::ops::softmax_pair([l[0], l[1]]).1
    }

    /// Names of every parameter read so far.
    pub fn touched_param_names(&self) -> Vec<String> {
        let store = self.tape.store();
        self.tape
            .touched_params()
            .into_iter()
            .map(|id| store.get(id).name.clone())
            .collect()
    }
}
