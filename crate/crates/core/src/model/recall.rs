use std::collections::BTreeMap;

use crate::corpus::CandidateGroup;
use crate::{Error, Result};

/// Anything that assigns matching scores to candidate responses.
pub trait Scorer: Sync {
    /// One score per response, higher meaning a better match to `context`.
    fn score_group(&self, context: &[String], responses: &[String]) -> Result<Vec<f64>>;
}

/// Zero-based rank of the single positive when candidates are sorted by
/// descending score. Ties keep input order, so an equal-scored candidate
/// listed before the positive ranks ahead of it.
pub fn positive_rank(scores: &[f64], labels: &[u8]) -> Result<usize> {
    if scores.len() != labels.len() {
        return Err(Error::shape(
            "positive_rank",
            format!("{} scores for {} labels", scores.len(), labels.len()),
        ));
    }
    let positives: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == 1).collect();
    let [pos] = positives[..] else {
        return Err(Error::Validation(format!(
            "candidate group has {} positives, expected exactly one",
            positives.len()
        )));
    };
    if let Some(bad) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::Numerical(format!("score {bad} in candidate group")));
    }
    let s = scores[pos];
    Ok(scores
        .iter()
        .enumerate()
        .filter(|&(i, &x)| x > s || (x == s && i < pos))
        .count())
}

/// `R@k` for each `k`: the fraction of groups whose positive ranks in the
/// top `k`.
pub fn evaluate_recall<S: Scorer + ?Sized>(
    scorer: &S,
    groups: &[CandidateGroup],
    ks: &[usize],
) -> Result<BTreeMap<usize, f64>> {
    if groups.is_empty() {
        return Err(Error::Validation("no candidate groups to evaluate".into()));
    }
    if let Some(g) = groups.iter().find(|g| g.positive_count() != 1) {
        return Err(Error::Validation(format!(
            "group {} turn {} has {} positives, expected exactly one",
            g.dialogue_id,
            g.turn_index,
            g.positive_count()
        )));
    }
    let ranks = crate::par_map(groups, |g| {
        let (responses, labels): (Vec<String>, Vec<u8>) = g.candidates.iter().cloned().unzip();
        let scores = scorer.score_group(&g.context, &responses)?;
        positive_rank(&scores, &labels)
    });
    let ranks = ranks.into_iter().collect::<Result<Vec<_>>>()?;
    let n = ranks.len() as f64;
    Ok(ks
        .iter()
        .map(|&k| (k, ranks.iter().filter(|&&r| r < k).count() as f64 / n))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranks_with_stable_ties() {
        assert_eq!(positive_rank(&[0.9, 0.1, 0.5], &[1, 0, 0]).unwrap(), 0);
        assert_eq!(positive_rank(&[0.2, 0.9, 0.5], &[1, 0, 0]).unwrap(), 2);
        assert_eq!(positive_rank(&[0.5, 0.5, 0.5], &[0, 1, 0]).unwrap(), 1);
        assert_eq!(positive_rank(&[0.5, 0.5], &[1, 0]).unwrap(), 0);
    }

    #[test]
    fn group_needs_exactly_one_positive() {
        assert!(positive_rank(&[0.1, 0.2], &[0, 0]).is_err());
        assert!(positive_rank(&[0.1, 0.2], &[1, 1]).is_err());
    }
}
