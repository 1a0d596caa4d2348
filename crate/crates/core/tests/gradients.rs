mod common;

use common::*;
use ktrace::counters::{assemble_features, compute_counters};
use ktrace::encoder::sigmoid;
use ktrace::evaluation::predict_sequence;
use ktrace::model::{Metadata, Model, ModelSpec};
use ktrace::training::{fit, window_gradient, Batch, StudentInput, TrainConfig};
use ktrace::data::{Step, StudentSequence};

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn instance(seed: u64, multi: bool) -> (ktrace::QMatrix, Vec<StudentSequence>) {
    let q = qmatrix(6, 3, multi);
    let mut r = rng(seed);
    let seqs = [6, 4, 5].iter().enumerate().map(|(s, &len)| random_sequence(&mut r, s, len, 6)).collect();
    (q, seqs)
}

#[test]
fn every_model_family_matches_finite_differences() {
    let specs = [
        ("none", "iswf d'=1", true),
        ("none", "swf d'=1", true),
        ("none", "is d'=1", true),
        ("GRU d=2", "iswf d'=1", true),
        ("GRU d=2", "i d'=2", true),
        ("GRU d=3", "s d'=3", false),
        ("GRU d=2", "s d'=1", true),
        ("GRU d=2 input=skill", "wf d'=1", true),
        ("GRU d=1", "i d'=1", true),
    ];
    for (i, (enc, dec, multi)) in specs.into_iter().enumerate() {
        let (q, seqs) = instance(i as u64, multi);
        let model = random_model(ModelSpec::parse(enc, dec).unwrap(), &q, 40 + i as u64, 0.5);
        let batch = full_batch(&seqs);
        let carries = vec![vec![0.0; model.dim()]; seqs.len()];
        let c = check_gradient(&model, &seqs, &batch, &carries, H);
        assert!(c.max_rel_error <= TOL, "{enc} + {dec}: {} in {}", c.max_rel_error, c.worst_block);
    }
}

#[test]
fn later_window_treats_the_carry_as_constant() {
    let (q, seqs) = instance(7, true);
    let model = random_model(ModelSpec::parse("GRU d=2", "iswf d'=1").unwrap(), &q, 3, 0.7);
    let inputs: Vec<_> = seqs.iter().map(|s| StudentInput::prepare(s, &model).unwrap()).collect();
    let lengths: Vec<usize> = seqs.iter().map(StudentSequence::len).collect();
    let first = Batch::new(vec![0, 1, 2], 0..3, &lengths);
    let zero = vec![vec![0.0; 2]; 3];
    let out = window_gradient(&model, &model.params, &inputs, &first, &zero).unwrap();
    assert!(out.carries.iter().all(|c| c.iter().any(|&v| v != 0.0)));

    let second = Batch::new(vec![0, 1, 2], 3..6, &lengths);
    let c = check_gradient(&model, &seqs, &second, &out.carries, H);
    assert!(c.max_rel_error <= TOL, "{} in {}", c.max_rel_error, c.worst_block);
}

#[test]
fn padding_does_not_leak_into_the_gradient() {
    let (q, seqs) = instance(8, true);
    let model = random_model(ModelSpec::parse("GRU d=2", "iswf d'=1").unwrap(), &q, 5, 0.5);
    let inputs: Vec<_> = seqs.iter().map(|s| StudentInput::prepare(s, &model).unwrap()).collect();
    let lengths: Vec<usize> = seqs.iter().map(StudentSequence::len).collect();
    let zero = |n| vec![vec![0.0; 2]; n];

    let joint = window_gradient(&model, &model.params, &inputs, &Batch::new(vec![0, 1, 2], 0..6, &lengths), &zero(3)).unwrap();
    let mut summed = vec![0.0; model.num_params()];
    for s in 0..3 {
        let alone = window_gradient(&model, &model.params, &inputs, &Batch::new(vec![s], 0..6, &lengths), &zero(1)).unwrap();
        for (acc, g) in summed.iter_mut().zip(&alone.grad) {
            *acc += g * alone.count as f64;
        }
    }
    for (a, b) in joint.grad.iter().zip(&summed) {
        assert!((a * joint.count as f64 - b).abs() < 1e-12);
    }
    assert_eq!(joint.count, 15);
}

/// Sparse logistic regression over the item|skill|wins|fails layout, using
/// the scalar decoder's weights in that order.
fn lr_weights(model: &Model) -> Vec<f64> {
    ["item_bias", "skill_bias", "win_slope", "fail_slope"]
        .iter()
        .flat_map(|b| model.block(b).unwrap().to_vec())
        .collect()
}

#[test]
fn lr_gradient_is_the_closed_form_logistic_gradient() {
    let (q, seqs) = instance(11, true);
    let model = random_model(ModelSpec::parse("none", "iswf d'=1").unwrap(), &q, 9, 0.4);
    let weights = lr_weights(&model);
    let mut expected = vec![0.0; weights.len()];
    let mut n = 0.0;
    for seq in &seqs {
        let counters = compute_counters(seq, &q).unwrap();
        for (t, step) in seq.steps.iter().enumerate() {
            let x = assemble_features(t, step.item, &q, &counters, Metadata::parse("iswf").unwrap()).unwrap();
            let p = sigmoid(x.iter().map(|&(c, v)| weights[c] * v).sum());
            for (c, v) in x {
                expected[c] += (p - step.label()) * v;
            }
            n += 1.0;
        }
    }
    let inputs: Vec<_> = seqs.iter().map(|s| StudentInput::prepare(s, &model).unwrap()).collect();
    let carries = vec![Vec::new(); 3];
    let grad = window_gradient(&model, &model.params, &inputs, &full_batch(&seqs), &carries).unwrap().grad;
    let by_column = lr_weights(&Model::from_parts(model.spec, &q, grad, model.embedding_seed).unwrap());
    for (i, e) in expected.iter().enumerate() {
        assert!((by_column[i] - e / n).abs() < 1e-12, "column {i}");
    }
}

#[test]
fn lr_predictions_equal_sparse_logistic_on_features() {
    let (q, seqs) = instance(12, true);
    let model = random_model(ModelSpec::parse("none", "iswf d'=1").unwrap(), &q, 10, 1.0);
    let weights = lr_weights(&model);
    for seq in &seqs {
        let counters = compute_counters(seq, &q).unwrap();
        let preds = predict_sequence(&model, seq).unwrap();
        for (t, step) in seq.steps.iter().enumerate() {
            let x = assemble_features(t, step.item, &q, &counters, Metadata::parse("iswf").unwrap()).unwrap();
            let p = sigmoid(x.iter().map(|&(c, v)| weights[c] * v).sum());
            assert!((preds[t] - p).abs() < 1e-14);
        }
    }
}

#[test]
fn separable_data_is_learned() {
    let q = qmatrix(8, 2, false);
    let seqs: Vec<StudentSequence> = (0..20)
        .map(|s| StudentSequence {
            student: s,
            steps: (0..8).map(|j| Step::new((j + s) % 8, (j + s) % 8 < 4)).collect(),
        })
        .collect();
    let ds = dataset(seqs, q);
    let cfg = TrainConfig {
        learning_rate: 0.05,
        weight_decay: 0.0,
        minibatch_count: 4,
        epochs: 150,
        ..Default::default()
    };
    let trace = fit(ModelSpec::parse("none", "iswf d'=1").unwrap(), &ds, &cfg).unwrap().loss_trace;
    let (first, last) = (trace[0], *trace.last().unwrap());
    assert!(last < 0.1 * first, "{first} -> {last}");
}
