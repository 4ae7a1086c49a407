use std::io::Write;

use super::MatchingModel;
use crate::nn::Matrix;
use crate::tokenizer::PAD_ID;
use crate::{Error, Result};

/// Mean `M_style` row over the non-PAD tokens of each utterance,
/// `[n_utterances x d_model]`. Utterances are not truncated.
pub fn extract_style_embeddings<S: AsRef<str>>(
    model: &MatchingModel,
    utterances: &[S],
) -> Result<Matrix> {
    if !model.config.use_stylebook {
        return Err(Error::Config(
            "stylebook absent: this checkpoint is the no-stylebook ablation, style embeddings need a stylebook model".into(),
        ));
    }
    let d = model.config.d_model;
    let mut out = Matrix::zeros(utterances.len(), d);
    for (i, u) in utterances.iter().enumerate() {
        let ids: Vec<usize> = model
            .vocab()
            .encode_ids(u.as_ref())
            .into_iter()
            .filter(|&id| id != PAD_ID)
            .collect();
        if ids.is_empty() {
            return Err(Error::Validation(format!("utterance {i} has no tokens")));
        }
        let mut pass = model.forward();
        let e = pass.embed(&ids)?;
        let m = pass
            .style_attention(e)?
            .expect("stylebook enabled");
        let mean = pass.tape.value(m).sum_rows().scale(1.0 / ids.len() as f64);
        out.row_mut(i).copy_from_slice(mean.as_slice());
    }
    Ok(out)
}

/// One line per utterance: the label, then the vector, tab separated.
pub fn write_style_tsv<W: Write, S: AsRef<str>>(
    mut w: W,
    labels: &[S],
    embeddings: &Matrix,
) -> Result<()> {
    if labels.len() != embeddings.rows() {
        return Err(Error::shape(
            "write_style_tsv",
            format!("{} labels for {} rows", labels.len(), embeddings.rows()),
        ));
    }
    let io = |e| Error::io("<style tsv>", e);
    for (i, label) in labels.iter().enumerate() {
        let clean: String = label
            .as_ref()
            .chars()
            .map(|c| if c == '\t' || c == '\n' || c == '\r' { ' ' } else { c })
            .collect();
        write!(w, "{clean}").map_err(io)?;
        for v in embeddings.row(i) {
            write!(w, "\t{v}").map_err(io)?;
        }
        writeln!(w).map_err(io)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::tokenizer::train_bpe;

    fn model(use_stylebook: bool) -> MatchingModel {
        let vocab = train_bpe(&["hello there", "general kenobi"], 30).unwrap();
        let cfg = ModelConfig {
            d_model: 8,
            stylebook_size: 4,
            encoder_hidden: 4,
            aggregation_hidden: 4,
            use_stylebook,
            ..ModelConfig::desk()
        };
        MatchingModel::new(cfg, vocab, 11).unwrap()
    }

    #[test]
    fn single_token_equals_its_style_row() {
        let m = model(true);
        let ids = m.vocab().encode_ids("h");
        assert_eq!(ids.len(), 1);
        let got = extract_style_embeddings(&m, &["h"]).unwrap();
        let mut pass = m.forward();
        let e = pass.embed(&ids).unwrap();
        let s = pass.style_attention(e).unwrap().unwrap();
        assert_eq!(got.row(0), pass.tape.value(s).row(0));
        assert_eq!(got.cols(), 8);
    }

    #[test]
    fn copies_give_identical_vectors() {
        let got = extract_style_embeddings(&model(true), &["hello there", "hello there"]).unwrap();
        assert_eq!(got.row(0), got.row(1));
    }

    #[test]
    fn disabled_stylebook_is_an_error() {
        assert!(matches!(
            extract_style_embeddings(&model(false), &["hello"]),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn tsv_layout() {
        let mut buf = Vec::new();
        let m = Matrix::from_rows(&[[1.0, 2.5]]);
        write_style_tsv(&mut buf, &["a\tb"], &m).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "a b\t1\t2.5\n");
    }
}
