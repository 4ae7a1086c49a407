use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{evaluate_recall, MatchingModel, Side};
use crate::corpus::{group_by_context, CandidateGroup, MatchingExample};
use crate::nn::{AdamState, Gradients, ParamStore};
use crate::{Error, Result};

/// Recall cut-offs reported on the validation split after every epoch.
pub const VALIDATION_KS: [usize; 3] = [1, 2, 5];

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation: BTreeMap<usize, f64>,
}

impl EpochLog {
    pub fn recall(&self, k: usize) -> f64 {
        self.validation.get(&k).copied().unwrap_or(f64::NAN)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub log: Vec<EpochLog>,
    /// Epoch whose parameters the model holds after training.
    pub best_epoch: usize,
}

/// Keeps a copy of the parameters with the highest metric seen so far.
/// Later epochs must be strictly better to replace it; NaN never is.
#[derive(Clone, Debug, Default)]
pub struct BestCheckpoint {
    best: Option<(usize, f64, ParamStore)>,
}

impl BestCheckpoint {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns whether `params` became the new best.
    pub fn observe(&mut self, epoch: usize, metric: f64, params: &ParamStore) -> bool {
        let better = match &self.best {
            None => true,
            Some((_, m, _)) => metric > *m,
        };
        if better {
            self.best = Some((epoch, metric, params.clone()));
        }
        better
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best.as_ref().map(|b| b.0)
    }

    pub fn best_metric(&self) -> Option<f64> {
        self.best.as_ref().map(|b| b.1)
    }

    pub fn restore(&self, params: &mut ParamStore) -> Result<()> {
        match &self.best {
            Some((_, _, p)) => params.copy_values_from(p),
            None => Ok(()),
        }
    }
}

/// Summed cross-entropy of every candidate in `groups` and its gradient,
/// both scaled by `weight`. Each context is encoded once per group.
pub fn loss_and_gradients(
    model: &MatchingModel,
    store: &ParamStore,
    groups: &[CandidateGroup],
    weight: f64,
) -> Result<(f64, Gradients)> {
    let mut pass = model.forward_with(store);
    let mut terms = Vec::new();
    for g in groups {
        let h_c = pass.encode(&model.context_ids(&g.context), Side::Context)?;
        for (response, label) in &g.candidates {
            let r = model.response_tokens(response);
            let h_r = pass.encode(&r.ids, Side::Response)?;
            let m = pass.match_encodings(h_c, h_r)?;
            let logits = pass.aggregate(m, r.true_length)?;
            terms.push((pass.tape.softmax_cross_entropy(logits, *label)?, weight));
        }
    }
    let total = pass.tape.weighted_sum(&terms)?;
    let loss = pass.tape.value(total)[(0, 0)];
    let grads = pass.tape.backward(total)?;
    Ok((loss, grads))
}

/// Mean cross-entropy over every candidate in `groups`.
pub fn mean_loss(model: &MatchingModel, store: &ParamStore, groups: &[CandidateGroup]) -> Result<f64> {
    let n: usize = groups.iter().map(|g| g.candidates.len()).sum();
    let mut pass = model.forward_with(store);
    let mut total = 0.0;
    for g in groups {
        let h_c = pass.encode(&model.context_ids(&g.context), Side::Context)?;
        for (response, label) in &g.candidates {
            let r = model.response_tokens(response);
            let h_r = pass.encode(&r.ids, Side::Response)?;
            let m = pass.match_encodings(h_c, h_r)?;
            let logits = pass.aggregate(m, r.true_length)?;
            total += crate::nn::cross_entropy(pass.probability(logits), *label);
        }
    }
    Ok(total / n as f64)
}

/// Mini-batch Adam on cross-entropy, validating with `validate` after each
/// epoch and finally restoring the parameters of the epoch with the best
/// R@1. Batches are whole candidate groups filled up to `batch_size`
/// examples; gradients are reduced in group order, so the result does not
/// depend on the thread count.
pub fn train_with<V, P>(
    model: &mut MatchingModel,
    train: &[MatchingExample],
    seed: u64,
    mut validate: V,
    mut on_epoch: P,
) -> Result<TrainReport>
where
    V: FnMut(&MatchingModel, usize) -> Result<BTreeMap<usize, f64>>,
    P: FnMut(&EpochLog),
{
    let groups = group_by_context(train);
    if groups.is_empty() {
        return Err(Error::Validation("no training examples".into()));
    }
    let mut adam = AdamState::new(&model.store, model.config.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..groups.len()).collect();
    let mut best = BestCheckpoint::new();
    let mut log = Vec::with_capacity(model.config.max_epochs);

    for epoch in 1..=model.config.max_epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut seen) = (0.0, 0usize);
        let mut start = 0;
        let mut batch_no = 0;
        while start < order.len() {
            let mut end = start;
            let mut n = 0;
            while end < order.len() && n < model.config.batch_size {
                n += groups[order[end]].candidates.len();
                end += 1;
            }
            let batch: Vec<&CandidateGroup> = order[start..end].iter().map(|&i| &groups[i]).collect();
            let results = crate::par_map(&batch, |g| {
                loss_and_gradients(model, &model.store, std::slice::from_ref(*g), 1.0 / n as f64)
            });
            let mut grads = Gradients::empty(model.store.len());
            let mut batch_loss = 0.0;
            for r in results {
                let (l, g) = r?;
                batch_loss += l;
                grads.merge(g);
            }
            if !batch_loss.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite training loss at epoch {epoch}, batch {batch_no}"
                )));
            }
            model.store.accumulate(&grads, 1.0);
            adam.step(&mut model.store)?;
            loss_sum += batch_loss * n as f64;
            seen += n;
            start = end;
            batch_no += 1;
        }

        let validation = validate(model, epoch)?;
        let entry = EpochLog {
            epoch,
            train_loss: loss_sum / seen as f64,
            validation,
        };
        best.observe(epoch, entry.recall(1), &model.store);
        on_epoch(&entry);
        log.push(entry);
    }
    best.restore(&mut model.store)?;
    Ok(TrainReport {
        log,
        best_epoch: best.best_epoch().unwrap_or(0),
    })
}

/// [`train_with`] validating R@1/2/5 on `validation`.
pub fn train(
    model: &mut MatchingModel,
    train: &[MatchingExample],
    validation: &[MatchingExample],
    seed: u64,
) -> Result<TrainReport> {
    let groups = group_by_context(validation);
    if groups.is_empty() {
        return Err(Error::Validation("no validation examples".into()));
    }
    train_with(
        model,
        train,
        seed,
        |m, _| evaluate_recall(m, &groups, &VALIDATION_KS),
        |_| {},
    )
}

/// CSV with columns `epoch,train_loss,val_R@1,val_R@2,val_R@5`.
pub fn write_train_log<W: Write>(w: W, log: &[EpochLog]) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    let mut header = vec!["epoch".to_string(), "train_loss".to_string()];
    header.extend(VALIDATION_KS.iter().map(|k| format!("val_R@{k}")));
    csv.write_record(&header)?;
    for e in log {
        let mut row = vec![e.epoch.to_string(), e.train_loss.to_string()];
        row.extend(VALIDATION_KS.iter().map(|&k| e.recall(k).to_string()));
        csv.write_record(&row)?;
    }
    csv.flush().map_err(|e| Error::io("<train log>", e))
}
