#![allow(dead_code)]

use ktrace::data::{Dataset, QMatrix, Step, StudentSequence, Vocab};
use ktrace::model::{embedding_seed, Model, ModelSpec};
use ktrace::training::{window_gradient, Batch, StudentInput};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Q-matrix where item `j` has skill `j % k`, and every third item also
/// `(j + 1) % k` when `multi` is set.
pub fn qmatrix(num_items: usize, k: usize, multi: bool) -> QMatrix {
    let rows = (0..num_items)
        .map(|j| {
            let mut row = vec![j % k];
            if multi && k > 1 && j % 3 == 2 {
                row.push((j + 1) % k);
            }
            row
        })
        .collect();
    QMatrix::new(rows, k).unwrap()
}

pub fn random_sequence(rng: &mut ChaCha8Rng, student: usize, len: usize, num_items: usize) -> StudentSequence {
    StudentSequence {
        student,
        steps: (0..len)
            .map(|_| Step::new(rng.random_range(0..num_items), rng.random_bool(0.5)))
            .collect(),
    }
}

pub fn dataset(sequences: Vec<StudentSequence>, q: QMatrix) -> Dataset {
    let vocab = |p: &str, n: usize| {
        let mut v = Vocab::new();
        for i in 0..n {
            v.intern(&format!("{p}{i}"));
        }
        v
    };
    let (ns, ni, nk) = (sequences.len(), q.num_items(), q.num_skills());
    Dataset::new(sequences, q, vocab("u", ns), vocab("q", ni), vocab("k", nk)).unwrap()
}

/// Counts of prior wins and fails on skill `k` before step `t`, recounted
/// from scratch.
pub fn brute_counts(seq: &StudentSequence, q: &QMatrix, t: usize, k: usize) -> (u32, u32) {
    let (mut w, mut f) = (0, 0);
    for s in &seq.steps[..t] {
        if q.skills(s.item).unwrap().contains(&k) {
            if s.correct {
                w += 1;
            } else {
                f += 1;
            }
        }
    }
    (w, f)
}

/// Fraction of (positive, negative) pairs ordered correctly, ties counting 1/2.
pub fn pair_auc(labels: &[bool], scores: &[f64]) -> f64 {
    let (mut num, mut pairs) = (0.0, 0.0);
    for (i, &li) in labels.iter().enumerate() {
        if !li {
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if lj {
                continue;
            }
            pairs += 1.0;
            if scores[i] > scores[j] {
                num += 1.0;
            } else if scores[i] == scores[j] {
                num += 0.5;
            }
        }
    }
    num / pairs
}

/// A model with every parameter drawn from `U(-scale, scale)`.
pub fn random_model(spec: ModelSpec, q: &QMatrix, seed: u64, scale: f64) -> Model {
    let base = Model::init(spec, q, seed).unwrap();
    let mut r = rng(seed ^ 0xabc);
    let params = (0..base.num_params()).map(|_| r.random_range(-scale..scale)).collect();
    Model::from_parts(spec, q, params, embedding_seed(seed)).unwrap()
}

pub struct GradCheck {
    pub max_rel_error: f64,
    pub worst_block: &'static str,
    pub checked: usize,
}

/// Relative error with a floor so parameters that barely touch the loss
/// are judged on absolute error.
pub fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Compares the analytic window gradient with central differences of the
/// window loss at step `h`, for every parameter.
pub fn check_gradient(model: &Model, sequences: &[StudentSequence], batch: &Batch, carries: &[Vec<f64>], h: f64) -> GradCheck {
    let inputs: Vec<StudentInput<'_>> = sequences.iter().map(|s| StudentInput::prepare(s, model).unwrap()).collect();
    let analytic = window_gradient(model, &model.params, &inputs, batch, carries).unwrap().grad;
    let mut params = model.params.clone();
    let mut worst = (0.0, "");
    for i in 0..params.len() {
        let orig = params[i];
        params[i] = orig + h;
        let up = window_gradient(model, &params, &inputs, batch, carries).unwrap().loss;
        params[i] = orig - h;
        let down = window_gradient(model, &params, &inputs, batch, carries).unwrap().loss;
        params[i] = orig;
        let fd = (up - down) / (2.0 * h);
        let e = rel_error(analytic[i], fd);
        if e > worst.0 {
            worst = (e, model.layout.block_of(i));
        }
    }
    GradCheck {
        max_rel_error: worst.0,
        worst_block: worst.1,
        checked: params.len(),
    }
}

/// A single batch spanning all students and their full length.
pub fn full_batch(sequences: &[StudentSequence]) -> Batch {
    let lengths: Vec<usize> = sequences.iter().map(StudentSequence::len).collect();
    let longest = lengths.iter().copied().max().unwrap_or(0);
    Batch::new((0..sequences.len()).collect(), 0..longest, &lengths)
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}
