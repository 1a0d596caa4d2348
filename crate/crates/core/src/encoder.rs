//! Student-state encoders.
//!
//! The recurrent encoder reads each attempt as a fixed Gaussian embedding of
//! its (item, outcome) pair and folds it into a single-layer GRU. The state
//! used to predict step `t` has consumed steps `1..t-1` only, with `h_1 = 0`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::{QMatrix, StudentSequence};
use crate::error::{Error, Result};
use crate::model::ActionKey;

pub type HiddenState = Vec<f64>;

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Fixed random input vectors, one per (token, outcome). Never trained.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionEmbeddingTable {
    seed: u64,
    d: usize,
    token_of_item: Vec<usize>,
    num_tokens: usize,
    table: Vec<f64>,
    zero: Vec<f64>,
}

impl ActionEmbeddingTable {
    /// Draws the table from a standard Gaussian. With [`ActionKey::Skill`],
    /// items sharing the same skill combination share a token.
    pub fn new(seed: u64, d: usize, key: ActionKey, qmatrix: &QMatrix) -> Self {
        let (token_of_item, num_tokens) = match key {
            ActionKey::Item => ((0..qmatrix.num_items()).collect(), qmatrix.num_items()),
            ActionKey::Skill => qmatrix.skill_combination_tokens(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let table = (0..2 * num_tokens * d)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        Self {
            seed,
            d,
            token_of_item,
            num_tokens,
            table,
            zero: vec![0.0; d],
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn num_tokens(&self) -> usize {
        self.num_tokens
    }

    /// Embedding of attempting `item` with the given outcome. Items outside
    /// the table map to the all-zero vector.
    pub fn embed(&self, item: usize, correct: bool) -> &[f64] {
        match self.token_of_item.get(item) {
            Some(&tok) => {
                let row = 2 * tok + usize::from(correct);
                &self.table[row * self.d..(row + 1) * self.d]
            }
            None => &self.zero,
        }
    }

    pub fn entries(&self) -> &[f64] {
        &self.table
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    Update = 0,
    Reset = 1,
    Candidate = 2,
}

/// Borrowed GRU weights laid out as `W_z W_r W_n U_z U_r U_n` (each `d x d`,
/// row-major) followed by `b_z b_r b_n`.
#[derive(Debug, Clone, Copy)]
pub struct GruParams<'a> {
    d: usize,
    data: &'a [f64],
}

impl<'a> GruParams<'a> {
    pub fn len(d: usize) -> usize {
        6 * d * d + 3 * d
    }

    pub fn new(d: usize, data: &'a [f64]) -> Result<Self> {
        if data.len() != Self::len(d) {
            return Err(Error::Dimension(format!(
                "GRU of width {d} needs {} parameters, got {}",
                Self::len(d),
                data.len()
            )));
        }
        Ok(Self { d, data })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn input_offset(d: usize, gate: Gate) -> usize {
        gate as usize * d * d
    }

    pub fn recurrent_offset(d: usize, gate: Gate) -> usize {
        (3 + gate as usize) * d * d
    }

    pub fn bias_offset(d: usize, gate: Gate) -> usize {
        6 * d * d + gate as usize * d
    }

    pub fn input(&self, gate: Gate) -> &'a [f64] {
        let o = Self::input_offset(self.d, gate);
        &self.data[o..o + self.d * self.d]
    }

    pub fn recurrent(&self, gate: Gate) -> &'a [f64] {
        let o = Self::recurrent_offset(self.d, gate);
        &self.data[o..o + self.d * self.d]
    }

    pub fn bias(&self, gate: Gate) -> &'a [f64] {
        let o = Self::bias_offset(self.d, gate);
        &self.data[o..o + self.d]
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `W x + U h + b` for one gate.
fn preactivation(p: &GruParams<'_>, gate: Gate, x: &[f64], h: &[f64]) -> Vec<f64> {
    let d = p.d;
    let (w, u, b) = (p.input(gate), p.recurrent(gate), p.bias(gate));
    (0..d)
        .map(|i| dot(&w[i * d..(i + 1) * d], x) + dot(&u[i * d..(i + 1) * d], h) + b[i])
        .collect()
}

/// Intermediate values of one GRU step, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct GruCache {
    pub h_prev: Vec<f64>,
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    pub r: Vec<f64>,
    pub n: Vec<f64>,
    pub h: Vec<f64>,
}

pub fn gru_step_cached(h_prev: &[f64], x: &[f64], params: &GruParams<'_>) -> Result<GruCache> {
    let d = params.d;
    if h_prev.len() != d || x.len() != d {
        return Err(Error::Dimension(format!(
            "GRU width {d}, state {} and input {}",
            h_prev.len(),
            x.len()
        )));
    }
    if !h_prev.iter().chain(x).all(|v| v.is_finite()) {
        return Err(Error::Numeric("GRU input".into()));
    }
    let z: Vec<f64> = preactivation(params, Gate::Update, x, h_prev).into_iter().map(sigmoid).collect();
    let r: Vec<f64> = preactivation(params, Gate::Reset, x, h_prev).into_iter().map(sigmoid).collect();
    let gated: Vec<f64> = r.iter().zip(h_prev).map(|(r, h)| r * h).collect();
    let n: Vec<f64> = preactivation(params, Gate::Candidate, x, &gated)
        .into_iter()
        .map(f64::tanh)
        .collect();
    let h = (0..d).map(|i| (1.0 - z[i]) * n[i] + z[i] * h_prev[i]).collect();
    Ok(GruCache {
        h_prev: h_prev.to_vec(),
        x: x.to_vec(),
        z,
        r,
        n,
        h,
    })
}

/// One recurrence:
/// `z = σ(W_z x + U_z h + b_z)`, `r = σ(W_r x + U_r h + b_r)`,
/// `n = tanh(W_n x + U_n (r ∘ h) + b_n)`, `h' = (1 - z) ∘ n + z ∘ h`.
pub fn gru_step(h_prev: &[f64], x: &[f64], params: &GruParams<'_>) -> Result<Vec<f64>> {
    gru_step_cached(h_prev, x, params).map(|c| c.h)
}

/// Backpropagates `dh` (gradient w.r.t. the step output) through one step.
/// Parameter gradients are accumulated into `grad` (same layout as the
/// parameters); returns the gradient w.r.t. `h_prev`.
pub fn gru_step_backward(cache: &GruCache, dh: &[f64], params: &GruParams<'_>, grad: &mut [f64]) -> Vec<f64> {
    let d = params.d;
    let GruCache { h_prev, x, z, r, n, .. } = cache;
    let mut dh_prev: Vec<f64> = (0..d).map(|i| dh[i] * z[i]).collect();

    let da_n: Vec<f64> = (0..d).map(|i| dh[i] * (1.0 - z[i]) * (1.0 - n[i] * n[i])).collect();
    let da_z: Vec<f64> = (0..d).map(|i| dh[i] * (h_prev[i] - n[i]) * z[i] * (1.0 - z[i])).collect();
    let gated: Vec<f64> = (0..d).map(|i| r[i] * h_prev[i]).collect();

    // candidate gate; its recurrent input is r ∘ h_prev
    let u_n = params.recurrent(Gate::Candidate);
    let mut d_gated = vec![0.0; d];
    for i in 0..d {
        for j in 0..d {
            d_gated[j] += u_n[i * d + j] * da_n[i];
        }
    }
    let da_r: Vec<f64> = (0..d)
        .map(|j| d_gated[j] * h_prev[j] * r[j] * (1.0 - r[j]))
        .collect();
    for j in 0..d {
        dh_prev[j] += d_gated[j] * r[j];
    }

    for (gate, da, rec_in) in [
        (Gate::Update, &da_z, h_prev.as_slice()),
        (Gate::Reset, &da_r, h_prev.as_slice()),
        (Gate::Candidate, &da_n, gated.as_slice()),
    ] {
        let wo = GruParams::input_offset(d, gate);
        let uo = GruParams::recurrent_offset(d, gate);
        let bo = GruParams::bias_offset(d, gate);
        for i in 0..d {
            for j in 0..d {
                grad[wo + i * d + j] += da[i] * x[j];
                grad[uo + i * d + j] += da[i] * rec_in[j];
            }
            grad[bo + i] += da[i];
        }
        if gate != Gate::Candidate {
            let u = params.recurrent(gate);
            for i in 0..d {
                for j in 0..d {
                    dh_prev[j] += u[i * d + j] * da[i];
                }
            }
        }
    }
    dh_prev
}

/// States `h_1..h_T` for every step plus the state after the last step.
///
/// The sequence is unrolled in windows of `window` steps, each window starting
/// from the previous window's final state. Forward values do not depend on
/// the window size.
pub fn encode_sequence(
    sequence: &StudentSequence,
    table: &ActionEmbeddingTable,
    params: &GruParams<'_>,
    window: usize,
) -> Result<(Vec<HiddenState>, HiddenState)> {
    if window == 0 {
        return Err(Error::Argument("window must be at least 1".into()));
    }
    let mut states = Vec::with_capacity(sequence.len());
    let mut carry = vec![0.0; params.dim()];
    for chunk in sequence.steps.chunks(window) {
        let mut h = carry;
        for step in chunk {
            let next = gru_step(&h, table.embed(step.item, step.correct), params)?;
            states.push(std::mem::replace(&mut h, next));
        }
        carry = h;
    }
    Ok((states, carry))
}

/// The trivial encoder: an empty state at every step.
pub fn encode_none(sequence: &StudentSequence) -> Vec<HiddenState> {
    vec![Vec::new(); sequence.len()]
}
