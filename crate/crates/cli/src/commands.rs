use std::ffi::OsString;
use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use tokprune::compressor::{CompressionRequest, Compressor, OutlierScoring, TokenMetricRecord};
use tokprune::corpus::{
    load_dataset, make_synthetic_corpus, split, write_dataset, LabeledSequence, RuleSpec,
    SplitSpec, Vocabulary, DEFAULT_MIN_FREQUENCY,
};
use tokprune::diagnostics::corpus_report;
use tokprune::eval::{alpha_grid, alpha_sweep, evaluate};
use tokprune::model::{load_checkpoint, save_checkpoint, Model, ModelConfig};
use tokprune::training::{train, TrainConfig};

use crate::config::*;
use crate::Failure;

type Outcome<T = ()> = Result<T, Failure>;

pub fn run(cli: Cli) -> Outcome {
    let file = FileConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Train(a) => cmd_train(a, &file),
        Command::Diagnose(a) => cmd_diagnose(a, &file),
        Command::Compress(a) => cmd_compress(a, &file),
        Command::Evaluate(a) => cmd_evaluate(a, &file),
        Command::Synth(a) => cmd_synth(a, &file),
    }
}

/// Keeps the failure class of `e` and prefixes the offending path.
fn at<T>(path: &Path, r: tokprune::Result<T>) -> Outcome<T> {
    r.map_err(|e| match Failure::from(e) {
        Failure::Data(e) => Failure::Data(e.context(path.display().to_string())),
        Failure::Runtime(e) => Failure::Runtime(e.context(path.display().to_string())),
        usage => usage,
    })
}

fn write_io(path: &Path, r: io::Result<()>) -> Outcome {
    r.map_err(|e| Failure::Runtime(anyhow::Error::new(e).context(format!("writing {}", path.display()))))
}

/// `path` with `suffix` appended to its file name.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = OsString::from(path.as_os_str());
    s.push(suffix);
    PathBuf::from(s)
}

fn emit(out: Option<&Path>, text: &str) -> Outcome {
    match out {
        Some(p) => write_io(p, fs::write(p, text)),
        None => write_io(Path::new("<stdout>"), io::stdout().lock().write_all(text.as_bytes())),
    }
}

fn load_labeled(path: &Path) -> Outcome<Vec<LabeledSequence>> {
    let data = at(path, load_dataset(path))?;
    if data.is_empty() {
        return Err(Failure::Data(anyhow::anyhow!("{}: dataset is empty", path.display())));
    }
    Ok(data)
}

fn cmd_train(a: TrainArgs, f: &FileConfig) -> Outcome {
    let dataset = required(&a.dataset, &f.dataset, "dataset")?;
    let out = required(&a.out, &f.out, "out")?;
    let seed = a.seed.or(f.seed).unwrap_or(0);
    let defaults = ModelConfig::default();
    let dim = a.model.dim.or(f.dim).unwrap_or(defaults.dim);
    let train_defaults = TrainConfig::default();
    let train_config = TrainConfig {
        beta: a.beta.or(f.beta).unwrap_or(train_defaults.beta),
        epochs: a.epochs.or(f.epochs).unwrap_or(train_defaults.epochs),
        batch_size: a.batch.or(f.batch).unwrap_or(train_defaults.batch_size),
        learning_rate: a.lr.or(f.lr).unwrap_or(train_defaults.learning_rate),
        seed,
        ..train_defaults
    };
    train_config.validate()?;

    let data = load_labeled(&dataset)?;
    let (train_set, val_set) = at(&dataset, split(&data, SplitSpec::standard(seed)))?;
    let min_freq = a.min_freq.or(f.min_freq).unwrap_or(DEFAULT_MIN_FREQUENCY);
    let vocab = Vocabulary::build(train_set.iter().map(|s| s.tokens()), min_freq);
    let model_config = ModelConfig {
        layers: a.model.layers.or(f.layers).unwrap_or(defaults.layers),
        dim,
        heads: a.model.heads.or(f.heads).unwrap_or(defaults.heads),
        ffn_dim: a.model.ffn_dim.or(f.ffn_dim).unwrap_or(4 * dim),
        max_len: a.model.max_len.or(f.max_len).unwrap_or(defaults.max_len),
        vocab_size: vocab.len(),
        init_seed: seed,
        ..defaults
    };
    let model = Model::init(model_config)?;
    let encode = |d: &[LabeledSequence]| d.iter().map(|s| s.encode(&vocab)).collect::<Vec<_>>();
    let (model, report) = at(&dataset, train(model, &encode(&train_set), &encode(&val_set), &train_config))?;

    at(&out, save_checkpoint(&out, &model, &vocab.hash(), Some(seed)))?;
    let vocab_path = sibling(&out, ".vocab");
    at(&vocab_path, vocab.save(&vocab_path))?;
    let report_path = sibling(&out, ".report.jsonl");
    let lines = report.to_jsonl();
    write_io(&report_path, fs::write(&report_path, &lines))?;
    emit(None, &lines)?;
    eprintln!(
        "selected epoch {} (validation accuracy {:.4}); wrote {}",
        report.selected_epoch,
        report.selected().val_accuracy,
        out.display()
    );
    Ok(())
}

fn load_model(a: &CheckpointArgs, f: &FileConfig) -> Outcome<(Model, Vocabulary)> {
    let ckpt_path = required(&a.checkpoint, &f.checkpoint, "checkpoint")?;
    let ckpt = at(&ckpt_path, load_checkpoint(&ckpt_path))?;
    let vocab_path = a
        .vocab
        .clone()
        .or_else(|| f.vocab.clone())
        .unwrap_or_else(|| sibling(&ckpt_path, ".vocab"));
    let vocab = at(&vocab_path, Vocabulary::load(&vocab_path))?;
    if vocab.len() != ckpt.model.config.vocab_size {
        return Err(Failure::Data(anyhow::anyhow!(
            "{} has {} entries but the checkpoint expects {}",
            vocab_path.display(),
            vocab.len(),
            ckpt.model.config.vocab_size
        )));
    }
    if let Some(w) = ckpt.vocab_warning(&vocab) {
        eprintln!("warning: {w}");
    }
    Ok((ckpt.model, vocab))
}

fn cmd_diagnose(a: DiagnoseArgs, f: &FileConfig) -> Outcome {
    let dataset = required(&a.dataset, &f.dataset, "dataset")?;
    let (model, vocab) = load_model(&a.checkpoint, f)?;
    let data: Vec<_> = load_labeled(&dataset)?.iter().map(|s| s.encode(&vocab)).collect();
    let report = at(&dataset, corpus_report(&model, &data))?;
    if report.excluded > 0 {
        eprintln!("{} sequences lack one of the classes and were skipped", report.excluded);
    }
    emit(a.out.as_deref().or(f.out.as_deref()), &report.to_csv())
}

fn request(a: &RequestArgs, f: &FileConfig) -> Outcome<CompressionRequest> {
    let tau = resolve_tau(a, f)?;
    let alpha = a.alpha.or(f.alpha).unwrap_or(DEFAULT_ALPHA);
    let scoring = if a.whole_set || f.whole_set.unwrap_or(false) {
        OutlierScoring::WholeSet
    } else {
        OutlierScoring::PerClass
    };
    Ok(CompressionRequest::new(tau, alpha)?.with_scoring(scoring))
}

#[derive(Serialize)]
struct DocRecord<'a> {
    doc: usize,
    #[serde(flatten)]
    record: &'a TokenMetricRecord,
}

fn cmd_compress(a: CompressArgs, f: &FileConfig) -> Outcome {
    let input = required(&a.input, &f.input, "input")?;
    let req = request(&a.request, f)?;
    let (model, vocab) = load_model(&a.checkpoint, f)?;
    let text = if input.as_os_str() == "-" {
        let mut s = String::new();
        io::stdin()
            .read_to_string(&mut s)
            .map_err(|e| Failure::Data(e.into()))?;
        s
    } else {
        fs::read_to_string(&input)
            .map_err(|e| Failure::Data(anyhow::Error::new(e).context(input.display().to_string())))?
    };

    let compressor = Compressor::new(&model, &vocab);
    let docs: Vec<&str> = text.lines().collect();
    let results = docs
        .par_iter()
        .enumerate()
        .map(|(i, doc)| {
            compressor.compress(doc, &req).map_err(|e| match Failure::from(e) {
                Failure::Data(e) => Failure::Data(e.context(format!("document {}", i + 1))),
                other => other,
            })
        })
        .collect::<Outcome<Vec<_>>>()?;

    let mut lines = String::new();
    for r in &results {
        lines.push_str(&r.text);
        lines.push('\n');
    }
    emit(a.out.as_deref().or(f.out.as_deref()), &lines)?;

    if let Some(path) = a.emit_token_records.as_ref().or(f.emit_token_records.as_ref()) {
        let mut out = String::new();
        for (doc, r) in results.iter().enumerate() {
            for record in &r.records {
                let line = serde_json::to_string(&DocRecord { doc, record })
                    .map_err(|e| Failure::Runtime(e.into()))?;
                out.push_str(&line);
                out.push('\n');
            }
        }
        write_io(path, fs::write(path, out))?;
    }
    Ok(())
}

fn cmd_evaluate(a: EvaluateArgs, f: &FileConfig) -> Outcome {
    let dataset = required(&a.dataset, &f.dataset, "dataset")?;
    let req = request(&a.request, f)?;
    let (model, vocab) = load_model(&a.checkpoint, f)?;
    let data = load_labeled(&dataset)?;
    let mut report = at(&dataset, evaluate(&model, &vocab, &data, &req))?;
    if a.alpha_sweep || f.alpha_sweep.unwrap_or(false) {
        report.alpha_sweep = Some(at(&dataset, alpha_sweep(&model, &vocab, &data, &req, &alpha_grid()))?);
    }
    let json = serde_json::to_string_pretty(&report).map_err(|e| Failure::Runtime(e.into()))?;
    emit(a.out.as_deref().or(f.out.as_deref()), &(json + "\n"))
}

fn cmd_synth(a: SynthArgs, f: &FileConfig) -> Outcome {
    let out = required(&a.out, &f.out, "out")?;
    let size = a.size.or(f.size).unwrap_or(500);
    let seed = a.seed.or(f.seed).unwrap_or(0);
    let data = make_synthetic_corpus(&RuleSpec::default(), size, seed);
    at(&out, write_dataset(&out, &data))
}
