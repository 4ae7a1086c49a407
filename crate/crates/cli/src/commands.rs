use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use entrain::corpus::{
    build_dataset, generate_synthetic_corpus, group_by_context, load_corpus, read_examples,
    write_corpus, write_examples, DatasetSplits, EchoSchedule, MatchingExample, SyntheticConfig,
};
use entrain::entrainment::{
    corpus_convergence, read_convergence_csv, write_convergence_csv, ConvergenceVars,
    EntrainmentOptions, VARIABLE_NAMES,
};
use entrain::model::{
    evaluate_recall, extract_style_embeddings, train_with, write_style_tsv, write_train_log,
    MatchingModel, TrainReport, VALIDATION_KS,
};
use entrain::stats::{
    correlate_measures, format_regression_reports, regress_table, write_regression_csv,
    CorrelationMatrix, OutcomeTable, RegressionReport,
};
use entrain::tokenizer::{load_embeddings, train_bpe, Vocabulary};
use entrain::{Error, Result};

use crate::{
    AnalyzeArgs, EntrainArgs, EvalArgs, ExportStyleArgs, PrepareArgs, SynthArgs, TrainArgs,
};

pub const SNAPSHOT: &str = "effective_config.txt";
pub const SPLITS: [&str; 3] = ["train", "validation", "test"];
pub const VOCAB_FILE: &str = "vocab.txt";
pub const COUNTS_FILE: &str = "counts.csv";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Snapshot path for a single-file output: `out.csv` -> `out.config.txt`.
pub fn snapshot_beside(out: &Path) -> PathBuf {
    out.with_extension("config.txt")
}

fn split_path(dir: &Path, split: &str) -> PathBuf {
    dir.join(format!("{split}.jsonl"))
}

fn jsonl(examples: &[MatchingExample]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_examples(&mut buf, examples)?;
    Ok(buf)
}

/// Texts the vocabulary is trained on: every distinct context turn and
/// response of the training split, in order of first appearance.
fn training_texts(train: &[MatchingExample]) -> Vec<&str> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for e in train {
        for t in e.context.iter().chain([&e.response]) {
            if seen.insert(t.as_str()) {
                out.push(t.as_str());
            }
        }
    }
    out
}

/// `split,positives,examples,expected_examples` with the expected count
/// `(1 + negatives) · positives`. Errors if any split breaks the identity.
pub fn counts_report(splits: &DatasetSplits, neg_train: usize, neg_eval: usize) -> Result<String> {
    let mut s = String::from("split,positives,examples,expected_examples\n");
    for (name, examples, neg) in [
        ("train", &splits.train, neg_train),
        ("validation", &splits.validation, neg_eval),
        ("test", &splits.test, neg_eval),
    ] {
        let p = DatasetSplits::positives(examples);
        let expected = (1 + neg) * p;
        if examples.len() != expected {
            return Err(Error::Validation(format!(
                "{name}: {} examples for {p} positives, expected {expected}",
                examples.len()
            )));
        }
        writeln!(s, "{name},{p},{},{expected}", examples.len()).expect("string write");
    }
    Ok(s)
}

pub fn prepare(args: &PrepareArgs) -> Result<DatasetSplits> {
    let cfg = args.cfg.resolve(&[])?;
    let dialogues = load_corpus(&args.corpus)?;
    let splits = build_dataset(&dialogues, &cfg.dataset_config())?;
    let counts = counts_report(&splits, cfg.dataset.neg_train, cfg.dataset.neg_eval)?;
    let vocab = train_bpe(&training_texts(&splits.train), cfg.vocab_size)?;
    let files = [
        (split_path(&args.out, "train"), jsonl(&splits.train)?),
        (split_path(&args.out, "validation"), jsonl(&splits.validation)?),
        (split_path(&args.out, "test"), jsonl(&splits.test)?),
        (args.out.join(VOCAB_FILE), vocab.to_text().into_bytes()),
        (args.out.join(COUNTS_FILE), counts.into_bytes()),
        (args.out.join(SNAPSHOT), cfg.to_text().into_bytes()),
    ];
    for (path, bytes) in &files {
        write_file(path, bytes)?;
    }
    log::info!(
        "prepared {} train, {} validation, {} test examples in {}",
        splits.train.len(),
        splits.validation.len(),
        splits.test.len(),
        args.out.display()
    );
    Ok(splits)
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub report: TrainReport,
    pub param_count: usize,
    pub checkpoint: PathBuf,
}

pub fn train(args: &TrainArgs) -> Result<TrainOutcome> {
    let mut extra = vec![];
    if args.no_stylebook {
        extra.push(("use_stylebook", "false".to_string()));
    }
    if let Some(e) = args.epochs {
        extra.push(("max_epochs", e.to_string()));
    }
    let cfg = args.cfg.resolve(&extra)?;
    let train_set = read_examples(split_path(&args.data, "train"))?;
    let validation = read_examples(split_path(&args.data, "validation"))?;
    let vocab = Vocabulary::load(args.data.join(VOCAB_FILE))?;
    let groups = group_by_context(&validation);
    if groups.is_empty() {
        return Err(Error::Validation("validation split is empty".into()));
    }
    let mut model = MatchingModel::new(cfg.model.clone(), vocab, cfg.seed)?;
    if let Some(path) = &args.embeddings {
        let table = load_embeddings(path, model.vocab(), cfg.model.d_model, cfg.seed)?;
        model.set_embeddings(table)?;
    }
    let param_count = model.param_count();
    log::info!("training {param_count} parameters");
    let report = train_with(
        &mut model,
        &train_set,
        cfg.seed,
        |m, _| evaluate_recall(m, &groups, &VALIDATION_KS),
        |e| {
            log::info!(
                "epoch {} train loss {:.5} val R@1 {:.4}",
                e.epoch,
                e.train_loss,
                e.recall(1)
            )
        },
    )?;
    let mut log_csv = Vec::new();
    write_train_log(&mut log_csv, &report.log)?;
    let checkpoint = args.out.join(CHECKPOINT_FILE);
    write_file(&checkpoint, &model.to_checkpoint()?.to_bytes())?;
    write_file(&args.out.join(TRAIN_LOG_FILE), &log_csv)?;
    write_file(&args.out.join(SNAPSHOT), cfg.to_text().as_bytes())?;
    log::info!("best epoch {}, checkpoint {}", report.best_epoch, checkpoint.display());
    Ok(TrainOutcome {
        report,
        param_count,
        checkpoint,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub model: String,
    pub stylebook: bool,
    pub params: usize,
    pub recall: BTreeMap<usize, f64>,
}

/// One row per checkpoint: `model,stylebook,params,R@1,R@2,R@5`.
pub fn eval_csv(rows: &[EvalRow]) -> String {
    let mut s = String::from("model,stylebook,params");
    for k in VALIDATION_KS {
        write!(s, ",R@{k}").expect("string write");
    }
    s.push('\n');
    for r in rows {
        write!(s, "{},{},{}", r.model, r.stylebook, r.params).expect("string write");
        for k in VALIDATION_KS {
            write!(s, ",{}", r.recall[&k]).expect("string write");
        }
        s.push('\n');
    }
    s
}

pub fn eval(args: &EvalArgs) -> Result<Vec<EvalRow>> {
    let cfg = args.cfg.resolve(&[])?;
    let path = match (&args.examples, &args.data) {
        (Some(p), _) => p.clone(),
        (None, Some(dir)) => {
            if !SPLITS.contains(&args.split.as_str()) {
                return Err(Error::Config(format!("unknown split {:?}", args.split)));
            }
            split_path(dir, &args.split)
        }
        (None, None) => return Err(Error::Config("eval needs --data or --examples".into())),
    };
    let groups = group_by_context(&read_examples(&path)?);
    let mut rows = Vec::new();
    for ckpt in &args.checkpoints {
        let model = MatchingModel::load(ckpt)?;
        if args.cfg.is_explicit() {
            // Stylebook presence is a property of each checkpoint here.
            let expected = entrain::model::ModelConfig {
                use_stylebook: model.config.use_stylebook,
                ..cfg.model.clone()
            };
            expected
                .check_compatible(&model.config)
                .map_err(|e| Error::ConfigMismatch(format!("{}: {e}", ckpt.display())))?;
        }
        rows.push(EvalRow {
            model: ckpt.display().to_string(),
            stylebook: model.config.use_stylebook,
            params: model.param_count(),
            recall: evaluate_recall(&model, &groups, &VALIDATION_KS)?,
        });
    }
    let csv = eval_csv(&rows);
    print!("{csv}");
    if let Some(out) = &args.out {
        write_file(out, csv.as_bytes())?;
        write_file(&snapshot_beside(out), cfg.to_text().as_bytes())?;
    }
    Ok(rows)
}

pub fn entrain(args: &EntrainArgs) -> Result<Vec<ConvergenceVars>> {
    let extra = if args.by_turns {
        vec![("by_turns", "true".to_string())]
    } else {
        vec![]
    };
    let cfg = args.cfg.resolve(&extra)?;
    let dialogues = load_corpus(&args.corpus)?;
    let model = MatchingModel::load(&args.checkpoint)?;
    let opts = EntrainmentOptions {
        n_intervals: cfg.n_intervals,
        context_len: cfg.score_context_len,
        by_turns: cfg.by_turns,
    };
    let rows = corpus_convergence(&model, &dialogues, &opts)?;
    let mut buf = Vec::new();
    write_convergence_csv(&mut buf, &rows)?;
    write_file(&args.out, &buf)?;
    write_file(&snapshot_beside(&args.out), cfg.to_text().as_bytes())?;
    log::info!("{} dialogues -> {}", rows.len(), args.out.display());
    Ok(rows)
}

#[derive(Debug)]
pub struct AnalyzeOutcome {
    pub regressions: Vec<RegressionReport>,
    pub correlation: Option<CorrelationMatrix>,
}

pub fn analyze(args: &AnalyzeArgs) -> Result<AnalyzeOutcome> {
    let cfg = args.cfg.resolve(&[])?;
    let ours = OutcomeTable::from_convergence(&read_convergence_csv(&args.convergence)?)?;
    let outcomes = OutcomeTable::read_csv(&args.outcomes)?;
    if outcomes.columns.is_empty() {
        return Err(Error::Validation("outcomes table has no DV columns".into()));
    }
    let joined = ours.join(&outcomes, true)?;
    let regressions = outcomes
        .columns
        .iter()
        .map(|dv| regress_table(&joined, &VARIABLE_NAMES, dv, cfg.enter_p))
        .collect::<Result<Vec<_>>>()?;
    let correlation = match &args.external {
        Some(path) => Some(correlate_measures(&ours, &OutcomeTable::read_csv(path)?)?),
        None => None,
    };

    let mut reg_csv = Vec::new();
    write_regression_csv(&mut reg_csv, &regressions)?;
    let reg_text = format_regression_reports(&regressions);
    write_file(&args.out.join("regression.csv"), &reg_csv)?;
    write_file(&args.out.join("regression.txt"), reg_text.as_bytes())?;
    print!("{reg_text}");
    if let Some(m) = &correlation {
        let mut buf = Vec::new();
        m.write_csv(&mut buf)?;
        write_file(&args.out.join("correlation.csv"), &buf)?;
        write_file(&args.out.join("correlation.txt"), m.to_text().as_bytes())?;
        print!("{}", m.to_text());
    }
    write_file(&args.out.join(SNAPSHOT), cfg.to_text().as_bytes())?;
    Ok(AnalyzeOutcome {
        regressions,
        correlation,
    })
}

/// `label<TAB>text` lines; a line without a tab is its own label.
pub fn parse_utterances(text: &str) -> Vec<(String, String)> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| match l.split_once('\t') {
            Some((label, text)) => (label.to_string(), text.to_string()),
            None => (l.to_string(), l.to_string()),
        })
        .collect()
}

pub fn export_style(args: &ExportStyleArgs) -> Result<usize> {
    let text = std::fs::read_to_string(&args.utterances).map_err(|e| Error::io(&args.utterances, e))?;
    let items = parse_utterances(&text);
    let model = MatchingModel::load(&args.checkpoint)?;
    let texts: Vec<&str> = items.iter().map(|(_, t)| t.as_str()).collect();
    let labels: Vec<&str> = items.iter().map(|(l, _)| l.as_str()).collect();
    let m = extract_style_embeddings(&model, &texts)?;
    let mut buf = Vec::new();
    write_style_tsv(&mut buf, &labels, &m)?;
    write_file(&args.out, &buf)?;
    let snapshot = format!(
        "checkpoint = {}\nd_model = {}\nutterances = {}\n",
        args.checkpoint.display(),
        model.config.d_model,
        items.len()
    );
    write_file(&snapshot_beside(&args.out), snapshot.as_bytes())?;
    Ok(items.len())
}

pub fn synth(args: &SynthArgs) -> Result<usize> {
    let schedule = if args.converging {
        EchoSchedule::Converging
    } else {
        EchoSchedule::Constant
    };
    let cfg = SyntheticConfig::new(
        args.dialogues,
        args.speakers,
        args.turns,
        args.styles,
        args.strength,
        args.seed,
    )
    .with_schedule(schedule);
    let corpus = generate_synthetic_corpus(&cfg)?;
    let mut buf = Vec::new();
    write_corpus(&mut buf, &corpus.dialogues)?;
    write_file(&args.out, &buf)?;
    let snapshot = format!(
        "n_dialogues = {}\nn_speakers_per_dialogue = {}\nturns_per_dialogue = {}\nstyle_count = {}\nconvergence_strength = {}\nschedule = {:?}\nseed = {}\n",
        cfg.n_dialogues,
        cfg.n_speakers_per_dialogue,
        cfg.turns_per_dialogue,
        cfg.style_count,
        cfg.convergence_strength,
        cfg.schedule,
        cfg.seed
    );
    write_file(&snapshot_beside(&args.out), snapshot.as_bytes())?;
    Ok(corpus.dialogues.len())
}
