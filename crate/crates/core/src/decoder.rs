//! Decoders turn a student state `h_t` and the assessment metadata of step `t`
//! into a success probability.
//!
//! Two shapes are supported:
//!
//! * dot product, `σ(<h, v_target> + w_target)` where the target is the item
//!   (dynamic MIRT) or the single skill of the item (DKT readout);
//! * scalar, `σ(h' + w_q + Σ_k β_k + γ_k W_k + δ_k F_k)` with `h' = A h + b`
//!   projected to one dimension. Letters absent from the decoder n-gram drop
//!   their term, and `h' = 0` without an encoder.
//!
//! Ids outside a parameter table contribute nothing (cold start).

use crate::counters::SkillCounts;
use crate::data::QMatrix;
use crate::encoder::{dot, sigmoid};
use crate::error::{Error, Result};
use crate::model::DotTarget;

/// `A h + b`, with `A` stored row-major as `d' x d`.
pub fn project(h: &[f64], a: &[f64], b: &[f64]) -> Vec<f64> {
    let d = h.len();
    assert_eq!(a.len(), d * b.len(), "projection shape");
    b.iter()
        .enumerate()
        .map(|(i, &bi)| dot(&a[i * d..(i + 1) * d], h) + bi)
        .collect()
}

#[derive(Debug, Clone, Copy)]
pub struct DotDecoder<'a> {
    d: usize,
    v: &'a [f64],
    w: &'a [f64],
}

impl<'a> DotDecoder<'a> {
    pub fn new(d: usize, v: &'a [f64], w: &'a [f64]) -> Self {
        assert_eq!(v.len(), d * w.len(), "embedding table shape");
        Self { d, v, w }
    }

    pub fn num_targets(&self) -> usize {
        self.w.len()
    }

    pub fn embedding(&self, target: usize) -> Option<&'a [f64]> {
        (target < self.w.len()).then(|| &self.v[target * self.d..(target + 1) * self.d])
    }

    pub fn bias(&self, target: usize) -> Option<f64> {
        self.w.get(target).copied()
    }

    pub fn logit(&self, h: &[f64], target: usize) -> f64 {
        match self.embedding(target) {
            Some(v) => dot(h, v) + self.w[target],
            None => 0.0,
        }
    }
}

/// Picks the row a dot-product decoder reads for `item`.
pub fn resolve_dot_target(kind: DotTarget, item: usize, qmatrix: &QMatrix) -> Result<usize> {
    match kind {
        DotTarget::Item => Ok(item),
        DotTarget::Skill => match qmatrix.skills(item) {
            Some([k]) => Ok(*k),
            Some(_) => Err(Error::Config(format!(
                "item {item} has several skills; a skill dot-product decoder needs combined-skill tokens \
                 or an iswf decoder"
            ))),
            // unknown item: cold start on an out-of-range row
            None => Ok(usize::MAX),
        },
    }
}

pub fn decode_dot(h: &[f64], target: usize, decoder: &DotDecoder<'_>) -> f64 {
    sigmoid(decoder.logit(h, target))
}

/// Probabilities for every target at once, i.e. the fully connected readout
/// `σ(V h + w)`.
pub fn full_output_vector(h: &[f64], decoder: &DotDecoder<'_>) -> Vec<f64> {
    (0..decoder.num_targets())
        .map(|k| decode_dot(h, k, decoder))
        .collect()
}

/// Scalar-form parameters. `None` blocks are not part of the decoder.
#[derive(Debug, Clone, Copy, Default)]
pub struct ScalarDecoder<'a> {
    /// `(A, b)` projecting the encoder state to one dimension.
    pub proj: Option<(&'a [f64], &'a [f64])>,
    pub item_bias: Option<&'a [f64]>,
    pub skill_bias: Option<&'a [f64]>,
    pub win_slope: Option<&'a [f64]>,
    pub fail_slope: Option<&'a [f64]>,
}

fn term(table: Option<&[f64]>, id: usize) -> f64 {
    table.and_then(|t| t.get(id)).copied().unwrap_or(0.0)
}

impl ScalarDecoder<'_> {
    /// `h' = A h + b`, or zero without a projection.
    pub fn h_prime(&self, h: &[f64]) -> f64 {
        match self.proj {
            Some((a, b)) if !h.is_empty() => project(h, a, b)[0],
            _ => 0.0,
        }
    }

    pub fn logit(&self, h_prime: f64, item: usize, skills: &[SkillCounts]) -> f64 {
        let mut z = h_prime + term(self.item_bias, item);
        for c in skills {
            z += term(self.skill_bias, c.skill)
                + term(self.win_slope, c.skill) * f64::from(c.wins)
                + term(self.fail_slope, c.skill) * f64::from(c.fails);
        }
        z
    }
}

pub fn decode_scalar(h_prime: f64, item: usize, skills: &[SkillCounts], decoder: &ScalarDecoder<'_>) -> f64 {
    sigmoid(decoder.logit(h_prime, item, skills))
}
