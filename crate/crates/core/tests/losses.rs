use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tokprune::corpus::{EncodedSequence, Label, LabeledSequence, Vocabulary};
use tokprune::gradcheck::grad_check;
use tokprune::model::{Model, ModelConfig, Weights};
use tokprune::training::{
    combined_loss, combined_loss_on_tape, cross_entropy_loss, cs_loss, cs_loss_on_tape,
};
use tokprune::{Tape, Tensor, Var};

fn config(layers: usize, dim: usize, heads: usize, seed: u64) -> ModelConfig {
    ModelConfig {
        layers,
        dim,
        heads,
        ffn_dim: 2 * dim,
        max_len: 12,
        vocab_size: 9,
        dropout: 0.1,
        init_seed: seed,
    }
}

fn random_sequence(rng: &mut ChaCha8Rng, n: usize, vocab: usize) -> EncodedSequence {
    let ids: Vec<usize> = (0..n).map(|_| rng.gen_range(0..vocab)).collect();
    let targets: Vec<usize> = (0..n).map(|_| rng.gen_range(0..2)).collect();
    EncodedSequence {
        preserve: (0..n).filter(|&i| targets[i] == 1).collect(),
        discard: (0..n).filter(|&i| targets[i] == 0).collect(),
        ids,
        targets,
    }
}

fn random_sequence_in(rng: &mut ChaCha8Rng, min: usize, max: usize) -> EncodedSequence {
    let n = rng.gen_range(min..=max);
    random_sequence(rng, n, 9)
}

fn rebuild(template: &Weights<Tensor>, vars: &[Var]) -> Weights<Var> {
    let mut it = vars.iter().copied();
    template.map(|_| it.next().expect("one var per leaf"))
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Pairwise double loop over cosine similarities.
fn cs_oracle(h: &Tensor, p: &[usize], d: &[usize]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-8);
    let mut total = 0.0;
    for &i in p {
        for &j in d {
            let (a, b) = (h.row(i), h.row(j));
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            total += dot / (norm(a) * norm(b));
        }
    }
    total / (p.len() * d.len()) as f64
}

#[test]
fn combined_loss_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for (case, &(layers, dim, heads)) in [(1, 8, 2), (2, 4, 1), (1, 16, 4)].iter().enumerate() {
        let model = Model::init(config(layers, dim, heads, case as u64)).unwrap();
        let batch: Vec<EncodedSequence> =
            (0..2).map(|_| random_sequence_in(&mut rng, 2, 8)).collect();
        let params: Vec<Tensor> = model.params.leaves().into_iter().cloned().collect();
        let report = grad_check(
            |tape: &mut Tape, vars: &[Var]| {
                let w = rebuild(&model.params, vars);
                Ok(combined_loss_on_tape(tape, &w, &model.config, &batch, 0.3, None)?.total)
            },
            &params,
            30,
            case as u64,
        )
        .unwrap();
        assert!(report.max_relative_error < 1e-4, "case {case}: {report:?}");
    }
}

#[test]
fn cs_loss_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let h = Tensor::new(vec![7, 5], (0..35).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
    let report = grad_check(
        |tape: &mut Tape, vars: &[Var]| Ok(cs_loss_on_tape(tape, vars[0], &[0, 3, 4], &[1, 2, 5, 6])?.unwrap()),
        &[h],
        35,
        1,
    )
    .unwrap();
    assert!(report.max_relative_error < 1e-6, "{report:?}");
}

#[test]
fn cross_entropy_matches_log_softmax_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let model = Model::init(config(2, 8, 2, 4)).unwrap();
    for _ in 0..20 {
        let seq = random_sequence_in(&mut rng, 1, 12);
        let acts = model.forward(&seq.ids).unwrap();
        let h = acts.last();
        let mut total = 0.0;
        for i in 0..h.rows() {
            let logits: Vec<f64> = (0..2)
                .map(|c| {
                    model.params.head_bias.data()[c]
                        + (0..h.cols()).map(|k| h.get(i, k) * model.params.head.get(k, c)).sum::<f64>()
                })
                .collect();
            total += log_sum_exp(&logits) - logits[seq.targets[i]];
        }
        let oracle = total / h.rows() as f64;
        let got = cross_entropy_loss(&model.params, &acts, &seq.targets).unwrap();
        assert!((got - oracle).abs() < 1e-12, "{got} vs {oracle}");
    }
}

#[test]
fn cs_loss_matches_pairwise_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let model = Model::init(config(1, 8, 2, 2)).unwrap();
    for _ in 0..20 {
        let seq = random_sequence_in(&mut rng, 2, 12);
        if seq.preserve.is_empty() || seq.discard.is_empty() {
            continue;
        }
        let acts = model.forward(&seq.ids).unwrap();
        let oracle = cs_oracle(acts.last(), &seq.preserve, &seq.discard);
        assert!((cs_loss(&acts, &seq.preserve, &seq.discard) - oracle).abs() < 1e-12);

        let mut tape = Tape::new();
        let h = tape.leaf(acts.last().clone());
        let v = cs_loss_on_tape(&mut tape, h, &seq.preserve, &seq.discard).unwrap().unwrap();
        assert!((tape.value(v).item() - oracle).abs() < 1e-12);
    }
}

#[test]
fn single_class_sequence_contributes_no_similarity() {
    let model = Model::init(config(1, 8, 2, 2)).unwrap();
    let seq = EncodedSequence {
        ids: vec![1, 2, 3],
        targets: vec![1, 1, 1],
        preserve: vec![0, 1, 2],
        discard: vec![],
    };
    let acts = model.forward(&seq.ids).unwrap();
    assert_eq!(cs_loss(&acts, &seq.preserve, &seq.discard), 0.0);
    let ce = cross_entropy_loss(&model.params, &acts, &seq.targets).unwrap();
    let total = combined_loss(&model.params, &model.config, &[seq], 0.5).unwrap();
    assert_eq!(total.to_bits(), ce.to_bits());
}

#[test]
fn zero_beta_is_cross_entropy_bit_for_bit() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let model = Model::init(config(2, 8, 2, 6)).unwrap();
    for _ in 0..10 {
        let seq = random_sequence_in(&mut rng, 2, 12);
        let acts = model.forward(&seq.ids).unwrap();
        let ce = cross_entropy_loss(&model.params, &acts, &seq.targets).unwrap();
        let total = combined_loss(&model.params, &model.config, std::slice::from_ref(&seq), 0.0).unwrap();
        assert_eq!(total.to_bits(), ce.to_bits());
    }
}

#[test]
fn beta_weights_the_similarity_term() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let model = Model::init(config(1, 8, 2, 1)).unwrap();
    let batch: Vec<EncodedSequence> = (0..3)
        .map(|_| loop {
            let s = random_sequence(&mut rng, 6, 9);
            if s.has_both_classes() {
                break s;
            }
        })
        .collect();
    let oracle_parts: Vec<(f64, f64)> = batch
        .iter()
        .map(|s| {
            let acts = model.forward(&s.ids).unwrap();
            (
                cross_entropy_loss(&model.params, &acts, &s.targets).unwrap(),
                cs_oracle(acts.last(), &s.preserve, &s.discard),
            )
        })
        .collect();
    for beta in [0.0, 0.001, 0.01, 1.0] {
        let oracle = oracle_parts.iter().map(|(ce, cs)| ce + beta * cs).sum::<f64>() / 3.0;
        let got = combined_loss(&model.params, &model.config, &batch, beta).unwrap();
        assert!((got - oracle).abs() < 1e-12, "beta {beta}");
    }
}

#[test]
fn encoder_is_permutation_equivariant_without_positions() {
    let mut model = Model::init(config(2, 8, 2, 12)).unwrap();
    model.params.position_embedding = Tensor::zeros(model.params.position_embedding.shape());
    let ids = vec![3, 1, 4, 1, 5, 2, 6];
    let perm = [6, 0, 5, 1, 4, 2, 3];
    let permuted: Vec<usize> = perm.iter().map(|&i| ids[i]).collect();
    let a = model.forward(&ids).unwrap();
    let b = model.forward(&permuted).unwrap();
    for l in 0..a.len() {
        for (r, &src) in perm.iter().enumerate() {
            for (x, y) in b.layer(l).row(r).iter().zip(a.layer(l).row(src)) {
                assert!((x - y).abs() < 1e-12, "layer {l}");
            }
        }
    }
}

#[test]
fn attention_sees_both_directions() {
    let model = Model::init(config(1, 8, 2, 12)).unwrap();
    let a = model.forward(&[1, 2, 3, 4]).unwrap();
    let b = model.forward(&[1, 2, 3, 5]).unwrap();
    assert_ne!(a.last().row(0), b.last().row(0));
}

#[test]
fn dataset_round_trip_feeds_training_types() {
    let seq = LabeledSequence::new(
        vec!["a".into(), "b".into()],
        vec![Label::Preserve, Label::Discard],
    )
    .unwrap();
    let vocab = Vocabulary::build([seq.tokens()], 1);
    let enc = seq.encode(&vocab);
    assert_eq!(enc.targets, vec![1, 0]);
    assert!(enc.has_both_classes());
}
