//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any criterion fails.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use common::*;
use rand::seq::SliceRandom;
use rand::Rng;
use tokprune::compressor::*;
use tokprune::corpus::*;
use tokprune::diagnostics::{corpus_report, inter_class_similarity};
use tokprune::eval::scaling_exponent;
use tokprune::gradcheck::grad_check;
use tokprune::model::{Model, ModelConfig};
use tokprune::training::{combined_loss_on_tape, cs_loss_on_tape, train, validate, TrainConfig};
use tokprune::{Tape, Tensor, Var};

type Check = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

const CORPUS_SIZE: usize = 1000;

struct Trained {
    model: Model,
    vocab: Vocabulary,
    validation: Vec<EncodedSequence>,
}

fn train_on_synthetic(seed: u64, beta: f64) -> Trained {
    let data = make_synthetic_corpus(&RuleSpec::default(), CORPUS_SIZE, seed);
    let (train_set, val_set) = split(&data, SplitSpec::standard(seed)).unwrap();
    let vocab = Vocabulary::build(train_set.iter().map(|s| s.tokens()), DEFAULT_MIN_FREQUENCY);
    let encode = |d: &[LabeledSequence]| d.iter().map(|s| s.encode(&vocab)).collect::<Vec<_>>();
    let (train_enc, validation) = (encode(&train_set), encode(&val_set));
    let model = Model::init(ModelConfig {
        vocab_size: vocab.len(),
        init_seed: seed,
        ..ModelConfig::default()
    })
    .unwrap();
    let config = TrainConfig {
        beta,
        seed,
        ..TrainConfig::default()
    };
    let (model, _) = train(model, &train_enc, &validation, &config).unwrap();
    Trained {
        model,
        vocab,
        validation,
    }
}

fn random_tokens(rng: &mut rand_chacha::ChaCha8Rng, vocab: &Vocabulary, n: usize) -> Vec<String> {
    (0..n)
        .map(|_| {
            if rng.gen_bool(0.1) {
                format!("unseen{}", rng.gen_range(0..50))
            } else {
                vocab.token(rng.gen_range(2..vocab.len())).unwrap().to_string()
            }
        })
        .collect()
}

fn gradient_correctness() -> Check {
    let mut r = rng(1);
    let mut worst = 0.0f64;
    let mut coords = 0;
    let configs = 5;
    for case in 0..configs {
        let layers = r.gen_range(1..=2);
        let heads = [1, 2, 4][r.gen_range(0..3)];
        let dim = heads * r.gen_range(1..=16 / heads);
        let config = ModelConfig {
            layers,
            dim,
            heads,
            ffn_dim: 2 * dim,
            max_len: 8,
            vocab_size: 7,
            dropout: 0.1,
            init_seed: case,
        };
        let model = Model::init(config).unwrap();
        let batch: Vec<EncodedSequence> = (0..2)
            .map(|_| {
                let n = r.gen_range(2..=8);
                let targets: Vec<usize> = (0..n).map(|_| r.gen_range(0..2)).collect();
                EncodedSequence {
                    ids: (0..n).map(|_| r.gen_range(0..7)).collect(),
                    preserve: (0..n).filter(|&i| targets[i] == 1).collect(),
                    discard: (0..n).filter(|&i| targets[i] == 0).collect(),
                    targets,
                }
            })
            .collect();
        let beta = r.gen_range(0.01..1.0);
        let params: Vec<Tensor> = model.params.leaves().into_iter().cloned().collect();
        let report = grad_check(
            |tape: &mut Tape, vars: &[Var]| {
                let mut it = vars.iter().copied();
                let w = model.params.map(|_| it.next().unwrap());
                Ok(combined_loss_on_tape(tape, &w, &model.config, &batch, beta, None)?.total)
            },
            &params,
            40,
            100 + case,
        )
        .map_err(|e| e.to_string())?;
        worst = worst.max(report.max_relative_error);
        coords = coords.max(report.coordinates);
        if report.coordinates < 20 {
            return Err(format!("config {case} only sampled {} coordinates", report.coordinates));
        }
    }
    ensure(
        worst < 1e-4,
        format!("{configs} configs x {coords} coordinates, max relative error {worst:.2e} (< 1e-4)"),
    )
}

fn equation_oracles() -> Check {
    let mut r = rng(2);
    let mut worst = 0.0f64;
    for instance in 0..100 {
        let n = r.gen_range(1..=64);
        let d = r.gen_range(1..=32);
        let mut h = random_matrix(&mut r, n, d);
        // Every fourth instance gets duplicated rows and a constant column.
        if instance % 4 == 0 && n > 1 {
            let first = h.row(0).to_vec();
            h.row_mut(n - 1).copy_from_slice(&first);
            for i in 0..n {
                h.row_mut(i)[0] = 0.75;
            }
        }
        let probs: Vec<f64> = (0..n).map(|_| r.gen_range(0.0..1.0)).collect();
        let gold: Vec<bool> = (0..n).map(|_| r.gen_bool(0.5)).collect();
        let p: Vec<usize> = (0..n).filter(|&i| gold[i]).collect();
        let q: Vec<usize> = (0..n).filter(|&i| !gold[i]).collect();

        if !p.is_empty() && !q.is_empty() {
            let oracle = pairwise_similarity(&h, &p, &q);
            let sim = inter_class_similarity(&h, &p, &q).unwrap();
            let mut tape = Tape::new();
            let hv = tape.leaf(h.clone());
            let cs = cs_loss_on_tape(&mut tape, hv, &p, &q).unwrap().unwrap();
            worst = worst.max((sim - oracle).abs()).max((tape.value(cs).item() - oracle).abs());
        }

        let scores = partitioned_outlier_scores(&h, &partition(&probs));
        let s_norm = partitioned_oracle(&h, &probs);
        for c in &scores.categories {
            let (s, _) = zscore_oracle(&h, &c.indices);
            for (a, b) in c.scores.iter().zip(&s) {
                worst = worst.max((a - b).abs());
            }
        }
        for (a, b) in scores.normalized.iter().zip(&s_norm) {
            worst = worst.max((a - b).abs());
        }

        let alpha = r.gen_range(0.0..=1.0);
        let m = fuse(&probs, &scores.normalized, alpha);
        for k in 0..n {
            worst = worst.max((m[k] - (alpha * probs[k] + (1.0 - alpha) * scores.normalized[k])).abs());
        }

        let tau = r.gen_range(0.01..=1.0);
        let kept = select(&m, tau);
        let oracle_kept = select_oracle(&m, retained_oracle(n, tau));
        if kept != oracle_kept {
            return Err(format!("instance {instance}: kept {kept:?}, oracle {oracle_kept:?}"));
        }
    }
    ensure(
        worst < 1e-12,
        format!("100 instances, max deviation {worst:.2e} (< 1e-12), index sets identical"),
    )
}

fn beta_trend() -> Check {
    let mut lines = Vec::new();
    let mut gaps = Vec::new();
    let mut all_lower = true;
    for seed in 1..=3 {
        let last = |t: &Trained| {
            let report = corpus_report(&t.model, &t.validation).unwrap();
            report.layers.last().unwrap().mean
        };
        let base = last(&train_on_synthetic(seed, 0.0));
        let with_cs = last(&train_on_synthetic(seed, 0.01));
        all_lower &= with_cs < base;
        gaps.push(base - with_cs);
        lines.push(format!("seed {seed}: {base:.4} -> {with_cs:.4}"));
    }
    let mean_gap = gaps.iter().sum::<f64>() / gaps.len() as f64;
    ensure(
        all_lower && mean_gap >= 0.05,
        format!("validation S^L with beta 0 -> 0.01: {}; mean gap {mean_gap:.4} (>= 0.05)", lines.join(", ")),
    )
}

fn competence(t: &Trained) -> Check {
    let acc = validate(&t.model, &t.validation).map_err(|e| e.to_string())?.accuracy;
    ensure(acc >= 0.95, format!("validation token accuracy {acc:.4} (>= 0.95)"))
}

fn ablation_parity(t: &Trained) -> Check {
    let c = Compressor::new(&t.model, &t.vocab);
    let docs = make_synthetic_corpus(&RuleSpec::default(), 50, 77);
    for (i, doc) in docs.iter().enumerate() {
        for tau in [0.5, 1.0 / 3.0] {
            let req = CompressionRequest::new(tau, 1.0).unwrap();
            let out = c.compress_tokens(doc.tokens(), &req).map_err(|e| e.to_string())?;
            let probs: Vec<f64> = out.records.iter().map(|r| r.p).collect();
            let kept: Vec<usize> = out.records.iter().filter(|r| r.kept).map(|r| r.index).collect();
            if kept != select_oracle(&probs, retained_oracle(probs.len(), tau)) {
                return Err(format!("document {i}: alpha = 1 differs from probability-only ranking"));
            }
        }
        let req = CompressionRequest::new(0.5, 0.5).unwrap().with_scoring(OutlierScoring::WholeSet);
        let out = c.compress_tokens(doc.tokens(), &req).map_err(|e| e.to_string())?;
        let valid = out
            .records
            .iter()
            .all(|r| (0.0..=1.0).contains(&r.s_norm) && (0.0..=1.0).contains(&r.m));
        if !valid {
            return Err(format!("document {i}: whole-set scores leave [0, 1]"));
        }
    }
    Ok("50 documents: alpha = 1 kept sets equal probability-only ranking; whole-set scores in [0, 1]".into())
}

fn compression_contract(t: &Trained) -> Check {
    let c = Compressor::new(&t.model, &t.vocab);
    let mut r = rng(6);
    let docs: Vec<Vec<String>> = (0..100)
        .map(|_| {
            let n = r.gen_range(1..=t.model.config.max_len);
            random_tokens(&mut r, &t.vocab, n)
        })
        .collect();
    for tau in [1.0, 0.5, 1.0 / 3.0, 0.25, 0.2] {
        let req = CompressionRequest::new(tau, 0.5).unwrap();
        for (i, doc) in docs.iter().enumerate() {
            let a = c.compress_tokens(doc, &req).map_err(|e| e.to_string())?;
            let b = c.compress_tokens(doc, &req).map_err(|e| e.to_string())?;
            let expected = retained_oracle(doc.len(), tau);
            let kept: Vec<usize> = a.records.iter().filter(|r| r.kept).map(|r| r.index).collect();
            let in_order: Vec<&str> = kept.iter().map(|&k| doc[k].as_str()).collect();
            let same = a.text == b.text
                && serde_json::to_string(&a.records).unwrap() == serde_json::to_string(&b.records).unwrap();
            if kept.len() != expected || a.text != in_order.join(" ") || !same {
                return Err(format!("tau {tau:.3}, document {i}: contract violated"));
            }
        }
    }
    Ok("5 ratios x 100 documents: exact counts, original order, byte-identical reruns".into())
}

fn degenerate_cases(t: &Trained) -> Check {
    let c = Compressor::new(&t.model, &t.vocab);
    let req = CompressionRequest::new(0.2, 0.5).unwrap();

    let single = c.compress("ka", &req).map_err(|e| e.to_string())?;
    if single.kept_count() != 1 || single.records[0].s_norm != 0.0 || single.ratio != 1.0 {
        return Err("single-token document".into());
    }
    let empty = c.compress("", &req).map_err(|e| e.to_string())?;
    if !empty.text.is_empty() || empty.ratio != 1.0 {
        return Err("empty document".into());
    }

    let mut r = rng(7);
    let h = random_matrix(&mut r, 9, 5);
    let one_class = rank(&h, &[0.9; 9], &req).map_err(|e| e.to_string())?;
    let whole = whole_set_outlier_scores(&h);
    if one_class.s_norm != whole.normalized || one_class.kept.len() != 2 {
        return Err("all-one-class partition".into());
    }

    let flat = Tensor::from_rows(&vec![vec![0.2, -1.0, 3.0]; 6]).unwrap();
    let probs = [0.1, 0.7, 0.3, 0.9, 0.2, 0.8];
    let ranked = rank(&flat, &probs, &CompressionRequest::new(0.5, 0.4).unwrap()).map_err(|e| e.to_string())?;
    if ranked.s_norm.iter().any(|&s| s != 0.0) || ranked.kept != vec![1, 3, 5] {
        return Err("constant activations".into());
    }

    // Two points symmetric about their mean have equal scores.
    let pair = Tensor::from_rows(&[vec![0.0], vec![2.0], vec![5.0]]).unwrap();
    let tied = outlier_scores(&pair, &[0, 1]);
    if tied.min != tied.max || tied.normalized != vec![0.0, 0.0] {
        return Err("s_max = s_min category".into());
    }

    let mut flat_model = t.model.clone();
    flat_model.params.token_embedding = Tensor::zeros(flat_model.params.token_embedding.shape());
    flat_model.params.position_embedding = Tensor::zeros(flat_model.params.position_embedding.shape());
    let fc = Compressor::new(&flat_model, &t.vocab);
    let out = fc.compress("ka fi ze ka fi ze ka fi ze ka", &req).map_err(|e| e.to_string())?;
    let kept: Vec<usize> = out.records.iter().filter(|r| r.kept).map(|r| r.index).collect();
    if out.records.iter().any(|r| r.s_norm != 0.0 || !r.m.is_finite()) || kept != vec![0, 1] {
        return Err("model with constant activations".into());
    }
    let flat_seq = EncodedSequence {
        ids: vec![2, 3, 4],
        targets: vec![1, 0, 1],
        preserve: vec![0, 2],
        discard: vec![1],
    };
    let report = corpus_report(&flat_model, &[flat_seq]).map_err(|e| e.to_string())?;
    if report.layers.iter().any(|l| !l.mean.is_finite()) {
        return Err("diagnostics on constant activations".into());
    }
    Ok("single token, empty input, one-class partition, constant activations, tied scores all follow the fallback rules".into())
}

fn latency(t: &Trained) -> Check {
    let c = Compressor::new(&t.model, &t.vocab);
    let req = CompressionRequest::new(0.5, 0.5).unwrap();
    let mut r = rng(8);
    let sizes = [64usize, 128, 256];
    let mut medians = Vec::new();
    for &n in &sizes {
        let docs: Vec<Vec<String>> = (0..5).map(|_| random_tokens(&mut r, &t.vocab, n)).collect();
        c.compress_tokens(&docs[0], &req).map_err(|e| e.to_string())?;
        let mut times: Vec<f64> = docs
            .iter()
            .map(|d| {
                let start = Instant::now();
                c.compress_tokens(d, &req).unwrap();
                start.elapsed().as_secs_f64()
            })
            .collect();
        times.shuffle(&mut r);
        times.sort_by(f64::total_cmp);
        medians.push(times[times.len() / 2]);
    }
    let ns: Vec<f64> = sizes.iter().map(|&n| n as f64).collect();
    let k = scaling_exponent(&ns, &medians);
    let ms: Vec<String> = medians.iter().map(|t| format!("{:.2}ms", t * 1e3)).collect();
    ensure(k <= 2.3, format!("median time at n = 64/128/256: {}; fitted exponent {k:.3} (<= 2.3)", ms.join(", ")))
}

fn main() -> ExitCode {
    let mut failures = 0;
    let mut report = |id: usize, name: &str, f: &mut dyn FnMut() -> Check| {
        let start = Instant::now();
        let result = f();
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS {id} {name}: {detail} [{secs:.1}s]"),
            Err(detail) => {
                failures += 1;
                println!("FAIL {id} {name}: {detail} [{secs:.1}s]");
            }
        }
    };

    report(1, "gradient correctness", &mut gradient_correctness);
    report(2, "equation oracles", &mut equation_oracles);
    report(3, "beta trend", &mut beta_trend);
    let start = Instant::now();
    let trained = train_on_synthetic(0, TrainConfig::default().beta);
    println!("     trained default model in {:.1}s", start.elapsed().as_secs_f64());
    report(4, "classification competence", &mut || competence(&trained));
    report(5, "ablation parity", &mut || ablation_parity(&trained));
    report(6, "compression contract", &mut || compression_contract(&trained));
    report(7, "degenerate robustness", &mut || degenerate_cases(&trained));
    report(8, "latency scaling", &mut || latency(&trained));

    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failures} criteria failed");
        ExitCode::FAILURE
    }
}
