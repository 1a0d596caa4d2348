//! Masked log-loss, backpropagation through windows of the unrolled encoder,
//! Adam with L2 weight decay, and the epoch/minibatch/window schedule.
//!
//! Students are batched and their sequences cut into windows of
//! `bptt_window` steps. Each window is one optimizer step. The encoder state
//! reached at the end of a window seeds the next one but is treated as a
//! constant, so no gradient crosses a window boundary.

use std::ops::Range;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::counters::{compute_counters, CounterTable};
use crate::data::{Dataset, StudentSequence};
use crate::decoder::resolve_dot_target;
use crate::encoder::{gru_step_backward, gru_step_cached, sigmoid, GruCache};
use crate::error::{Error, Result};
use crate::model::{dot_view, gru_view, scalar_view, DecoderForm, Model, ModelSpec};

/// Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` inside the loss.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub minibatch_count: usize,
    pub bptt_window: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.005,
            weight_decay: 0.0005,
            minibatch_count: 100,
            bptt_window: 100,
            epochs: 200,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            bad.push("learning_rate");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            bad.push("weight_decay");
        }
        if self.minibatch_count == 0 {
            bad.push("minibatch_count");
        }
        if self.bptt_window == 0 {
            bad.push("bptt_window");
        }
        if self.epochs == 0 {
            bad.push("epochs");
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid training settings: {}", bad.join(", "))))
        }
    }
}

/// Mean negative log-likelihood `-(1/N) Σ log(1 - |a - p|)` over unmasked entries.
pub fn nll(labels: &[f64], predictions: &[f64], mask: &[bool]) -> Result<f64> {
    assert!(labels.len() == predictions.len() && labels.len() == mask.len());
    let mut sum = 0.0;
    let mut n = 0usize;
    for ((&a, &p), _) in labels.iter().zip(predictions).zip(mask).filter(|(_, &m)| m) {
        let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
        sum -= (1.0 - (a - p).abs()).ln();
        n += 1;
    }
    if n == 0 {
        return Err(Error::DegenerateBatch);
    }
    Ok(sum / n as f64)
}

/// A group of students and the step range of the current window. `mask` is
/// row-major over `students x window` and is true where a step exists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub students: Vec<usize>,
    pub window: Range<usize>,
    pub mask: Vec<bool>,
}

impl Batch {
    pub fn new(students: Vec<usize>, window: Range<usize>, lengths: &[usize]) -> Self {
        let mask = students
            .iter()
            .flat_map(|&s| window.clone().map(move |t| t < lengths[s]))
            .collect();
        Self { students, window, mask }
    }

    pub fn width(&self) -> usize {
        self.window.len()
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Per-student data that does not change during training.
#[derive(Debug, Clone)]
pub struct StudentInput<'a> {
    pub sequence: &'a StudentSequence,
    pub counters: CounterTable,
    /// Row read by a dot-product decoder at each step.
    pub targets: Vec<usize>,
}

impl<'a> StudentInput<'a> {
    pub fn prepare(sequence: &'a StudentSequence, model: &Model) -> Result<Self> {
        let counters = compute_counters(sequence, &model.qmatrix)?;
        let targets = match model.form() {
            DecoderForm::Dot(kind) => sequence
                .steps
                .iter()
                .map(|s| resolve_dot_target(kind, s.item, &model.qmatrix))
                .collect::<Result<_>>()?,
            DecoderForm::Scalar => Vec::new(),
        };
        Ok(Self {
            sequence,
            counters,
            targets,
        })
    }

    pub fn len(&self) -> usize {
        self.sequence.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequence.is_empty()
    }
}

/// Result of one window: loss, gradient, padded predictions and the states
/// handed to the next window.
#[derive(Debug, Clone)]
pub struct WindowOutput {
    /// Mean loss over the unmasked entries; 0 when there are none.
    pub loss: f64,
    pub count: usize,
    pub grad: Vec<f64>,
    /// Row-major `students x window`; masked entries hold 0.5.
    pub predictions: Vec<f64>,
    pub carries: Vec<Vec<f64>>,
}

struct StepTrace {
    h: Vec<f64>,
    dlogit: f64,
    gru: Option<GruCache>,
}

/// Forward and backward pass of `batch` under `params` (which must follow
/// `model.layout`). `carries[i]` is the state entering the window for
/// `batch.students[i]`; it is a constant of the computation.
pub fn window_gradient(
    model: &Model,
    params: &[f64],
    inputs: &[StudentInput<'_>],
    batch: &Batch,
    carries: &[Vec<f64>],
) -> Result<WindowOutput> {
    assert_eq!(params.len(), model.layout.total);
    assert_eq!(carries.len(), batch.students.len());
    let width = batch.width();
    let count = batch.count();
    let scale = if count == 0 { 0.0 } else { 1.0 / count as f64 };
    let mut grad = vec![0.0; params.len()];
    let mut labels = vec![0.0; batch.mask.len()];
    let mut predictions = vec![0.5; batch.mask.len()];
    let mut next_carries = Vec::with_capacity(carries.len());

    let d = model.dim();
    let gru = gru_view(&model.layout, params, d);
    let dot_dec = dot_view(&model.layout, params, d);
    let scalar_dec = scalar_view(&model.layout, params, model.form());

    for (row, (&s, carry)) in batch.students.iter().zip(carries).enumerate() {
        let input = &inputs[s];
        let steps = batch.window.start.min(input.len())..batch.window.end.min(input.len());
        let mut h = carry.clone();
        let mut trace = Vec::with_capacity(steps.len());

        for t in steps.clone() {
            let step = input.sequence.steps[t];
            let logit = match (&dot_dec, &scalar_dec) {
                (Some(dec), _) => dec.logit(&h, input.targets[t]),
                (_, Some(dec)) => dec.logit(dec.h_prime(&h), step.item, input.counters.step(t)),
                _ => unreachable!("model has a decoder"),
            };
            let p = sigmoid(logit);
            if !p.is_finite() {
                return Err(Error::Numeric(format!("prediction for student {}", input.sequence.student)));
            }
            let cell = row * width + (t - batch.window.start);
            labels[cell] = step.label();
            predictions[cell] = p;
            let clamped = !(PROB_EPS..=1.0 - PROB_EPS).contains(&p);
            let dlogit = if clamped { 0.0 } else { (p - step.label()) * scale };

            let cache = match (&gru, &model.embeddings) {
                (Some(g), Some(table)) => Some(gru_step_cached(&h, table.embed(step.item, step.correct), g)?),
                _ => None,
            };
            let h_t = match &cache {
                Some(c) => std::mem::replace(&mut h, c.h.clone()),
                None => h.clone(),
            };
            trace.push(StepTrace { h: h_t, dlogit, gru: cache });
        }
        next_carries.push(h);

        // backward through the window; the state entering it is a constant
        let mut dh_after: Option<Vec<f64>> = None;
        for (offset, st) in trace.iter().enumerate().rev() {
            let t = steps.start + offset;
            let mut dh = match (&dh_after, &st.gru, &gru) {
                (Some(dh_next), Some(cache), Some(g)) => {
                    let range = model.layout.gru.clone().expect("gru block");
                    gru_step_backward(cache, dh_next, g, &mut grad[range])
                }
                _ => vec![0.0; d],
            };
            let g = st.dlogit;
            if g != 0.0 {
                decoder_backward(model, params, input, t, &st.h, g, &mut grad, &mut dh);
            }
            dh_after = Some(dh);
        }
    }

    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::Numeric(format!("gradient of {}[{}]", model.layout.block_of(i), i)));
    }
    let loss = if count == 0 { 0.0 } else { nll(&labels, &predictions, &batch.mask)? };
    Ok(WindowOutput {
        loss,
        count,
        grad,
        predictions,
        carries: next_carries,
    })
}

#[allow(clippy::too_many_arguments)]
fn decoder_backward(
    model: &Model,
    params: &[f64],
    input: &StudentInput<'_>,
    t: usize,
    h: &[f64],
    dlogit: f64,
    grad: &mut [f64],
    dh: &mut [f64],
) {
    let layout = &model.layout;
    let d = h.len();
    match model.form() {
        DecoderForm::Dot(_) => {
            let target = input.targets[t];
            let (v, w) = (layout.dot_v.clone().unwrap(), layout.dot_w.clone().unwrap());
            if target >= w.len() {
                return;
            }
            let vo = v.start + target * d;
            for j in 0..d {
                grad[vo + j] += dlogit * h[j];
                dh[j] += dlogit * params[vo + j];
            }
            grad[w.start + target] += dlogit;
        }
        DecoderForm::Scalar => {
            if let (Some(a), Some(b)) = (&layout.proj_a, &layout.proj_b) {
                for j in 0..d {
                    grad[a.start + j] += dlogit * h[j];
                    dh[j] += dlogit * params[a.start + j];
                }
                grad[b.start] += dlogit;
            }
            let item = input.sequence.steps[t].item;
            let mut bump = |block: &Option<Range<usize>>, id: usize, by: f64| {
                if let Some(r) = block {
                    if id < r.len() {
                        grad[r.start + id] += by;
                    }
                }
            };
            bump(&layout.item_bias, item, dlogit);
            for c in input.counters.step(t) {
                bump(&layout.skill_bias, c.skill, dlogit);
                bump(&layout.win_slope, c.skill, dlogit * f64::from(c.wins));
                bump(&layout.fail_slope, c.skill, dlogit * f64::from(c.fails));
            }
        }
    }
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
}

/// One Adam step with bias correction. Weight decay is added to the gradient
/// (`g + λθ`) before the moment updates.
pub fn adam_update(params: &mut [f64], grads: &[f64], state: &mut AdamState, config: &TrainConfig) {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), state.m.len());
    state.t += 1;
    let bc1 = 1.0 - ADAM_BETA1.powf(state.t as f64);
    let bc2 = 1.0 - ADAM_BETA2.powf(state.t as f64);
    for (i, p) in params.iter_mut().enumerate() {
        let g = grads[i] + config.weight_decay * *p;
        state.m[i] = ADAM_BETA1 * state.m[i] + (1.0 - ADAM_BETA1) * g;
        state.v[i] = ADAM_BETA2 * state.v[i] + (1.0 - ADAM_BETA2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        *p -= config.learning_rate * m_hat / (v_hat.sqrt() + ADAM_EPS);
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub model: Model,
    /// Mean training loss of each epoch, measured during that epoch.
    pub loss_trace: Vec<f64>,
}

/// Minibatch size for `n` students split into `count` minibatches.
pub fn batch_size(n: usize, count: usize) -> usize {
    n.div_ceil(count).max(1)
}

/// Trains a fresh model on every sequence of `train`.
pub fn fit(spec: ModelSpec, train: &Dataset, config: &TrainConfig) -> Result<FitResult> {
    config.validate()?;
    if train.sequences.is_empty() {
        return Err(Error::Argument("empty training set".into()));
    }
    let mut model = Model::init(spec, &train.qmatrix, config.seed)?;
    let inputs = train
        .sequences
        .iter()
        .map(|s| StudentInput::prepare(s, &model))
        .collect::<Result<Vec<_>>>()?;
    let lengths: Vec<usize> = inputs.iter().map(StudentInput::len).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut adam = AdamState::new(model.num_params());
    let size = batch_size(inputs.len(), config.minibatch_count);
    let d = model.dim();
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut loss_trace = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let (mut total, mut seen) = (0.0, 0usize);
        for (b, members) in order.chunks(size).enumerate() {
            let longest = members.iter().map(|&s| lengths[s]).max().unwrap_or(0);
            let mut carries = vec![vec![0.0; d]; members.len()];
            for start in (0..longest).step_by(config.bptt_window) {
                let end = (start + config.bptt_window).min(longest);
                let batch = Batch::new(members.to_vec(), start..end, &lengths);
                let out = window_gradient(&model, &model.params, &inputs, &batch, &carries)
                    .map_err(|e| e.context(format!("epoch {epoch}, batch {b}")))?;
                if out.count > 0 {
                    adam_update(&mut model.params, &out.grad, &mut adam, config);
                    total += out.loss * out.count as f64;
                    seen += out.count;
                }
                carries = out.carries;
            }
        }
        let epoch_loss = total / seen.max(1) as f64;
        log::debug!("{}: epoch {epoch} loss {epoch_loss:.6}", model.spec);
        loss_trace.push(epoch_loss);
    }
    Ok(FitResult { model, loss_trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{QMatrix, Step, Vocab};

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn nll_values() {
        assert!(close(nll(&[1.0], &[0.5], &[true]).unwrap(), std::f64::consts::LN_2, 1e-12));
        let perfect = nll(&[1.0, 0.0], &[1.0, 0.0], &[true, true]).unwrap();
        assert!(perfect > 0.0 && perfect < 2e-7);
        let v = nll(&[1.0, 0.0], &[0.9, 0.2], &[true, true]).unwrap();
        assert!(close(v, -(0.9f64.ln() + 0.8f64.ln()) / 2.0, 1e-12));
        assert!(close(v, 0.164_252, 1e-6));
        assert!(matches!(nll(&[1.0], &[0.3], &[false]), Err(Error::DegenerateBatch)));
    }

    #[test]
    fn masked_predictions_do_not_matter() {
        let labels = [1.0, 0.0, 1.0, 0.0];
        let mask = [true, false, true, false];
        let a = nll(&labels, &[0.7, 0.1, 0.4, 0.9], &mask).unwrap();
        let b = nll(&labels, &[0.7, 0.99, 0.4, 1e-9], &mask).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn batch_mask_tracks_lengths() {
        let b = Batch::new(vec![0, 2], 2..5, &[3, 9, 6]);
        assert_eq!(b.mask, [true, false, false, true, true, true]);
        assert_eq!(b.count(), 4);
        assert_eq!(batch_size(536, 100), 6);
        assert_eq!(batch_size(40, 100), 1);
    }

    #[test]
    fn first_adam_step() {
        let cfg = TrainConfig { weight_decay: 0.0, ..Default::default() };
        let mut p = [0.0];
        let mut st = AdamState::new(1);
        adam_update(&mut p, &[1.0], &mut st, &cfg);
        assert!(close(p[0], -0.005, 1e-9), "{}", p[0]);
    }

    #[test]
    fn adam_fixed_point_and_symmetry() {
        let cfg = TrainConfig::default();
        let mut p = [0.0, 0.4, 0.4];
        let mut st = AdamState::new(3);
        for _ in 0..5 {
            adam_update(&mut p, &[0.0, 0.3, 0.3], &mut st, &cfg);
        }
        assert_eq!(p[0], 0.0);
        assert_eq!(p[1], p[2]);
    }

    #[test]
    fn weight_decay_shrinks_without_data_gradient() {
        let cfg = TrainConfig::default();
        let mut p = [1.0, -0.5];
        let mut st = AdamState::new(2);
        for _ in 0..50 {
            let before = p;
            adam_update(&mut p, &[0.0, 0.0], &mut st, &cfg);
            assert!(p[0].abs() < before[0].abs() && p[1].abs() < before[1].abs());
        }
    }

    #[test]
    fn invalid_config_names_fields() {
        let cfg = TrainConfig { epochs: 0, learning_rate: -1.0, ..Default::default() };
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.contains("epochs") && msg.contains("learning_rate"), "{msg}");
    }

    fn tiny_dataset() -> Dataset {
        let mut students = Vocab::new();
        let mut items = Vocab::new();
        let mut skills = Vocab::new();
        for i in 0..3 {
            items.intern(&format!("i{i}"));
        }
        skills.intern("a");
        skills.intern("b");
        let seqs = (0..4)
            .map(|s| StudentSequence {
                student: students.intern(&format!("s{s}")),
                steps: (0..5).map(|t| Step::new((s + t) % 3, (s * t) % 3 != 1)).collect(),
            })
            .collect();
        let q = QMatrix::new(vec![vec![0], vec![1], vec![0, 1]], 2).unwrap();
        Dataset::new(seqs, q, students, items, skills).unwrap()
    }

    #[test]
    fn all_masked_window_has_zero_gradient() {
        let ds = tiny_dataset();
        let model = Model::init(ModelSpec::parse("GRU d=2", "iswf d'=1").unwrap(), &ds.qmatrix, 1).unwrap();
        let inputs: Vec<_> = ds.sequences.iter().map(|s| StudentInput::prepare(s, &model).unwrap()).collect();
        let lengths: Vec<usize> = inputs.iter().map(StudentInput::len).collect();
        let batch = Batch::new(vec![0, 1], 10..20, &lengths);
        let out = window_gradient(&model, &model.params, &inputs, &batch, &[vec![0.0; 2], vec![0.0; 2]]).unwrap();
        assert_eq!(out.count, 0);
        assert!(out.grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn fit_is_deterministic() {
        let ds = tiny_dataset();
        let cfg = TrainConfig { epochs: 5, minibatch_count: 2, bptt_window: 2, seed: 3, ..Default::default() };
        let spec = ModelSpec::parse("GRU d=2", "iswf d'=1").unwrap();
        let a = fit(spec, &ds, &cfg).unwrap();
        let b = fit(spec, &ds, &cfg).unwrap();
        assert_eq!(a.loss_trace, b.loss_trace);
        assert_eq!(a.model.params, b.model.params);
        assert_eq!(a.loss_trace.len(), 5);
    }
}
