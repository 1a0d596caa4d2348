//! Model specifications and the flat parameter store.
//!
//! A model is an encoder (`none`, or a GRU of width `d`) paired with a decoder
//! described by an n-gram over the letters `iswf` (item, skill, wins, fails)
//! and an output embedding size `d'`. Names follow the usual report layout:
//! `GRU d=2` + `iswf d'=1`, `none` + `swf d'=1`, and so on.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::QMatrix;
use crate::decoder::{DotDecoder, ScalarDecoder};
use crate::encoder::{ActionEmbeddingTable, GruParams};
use crate::error::{Error, Result};

/// Which assessment metadata the decoder reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Metadata {
    pub item: bool,
    pub skill: bool,
    pub wins: bool,
    pub fails: bool,
}

impl Metadata {
    /// Parses an n-gram such as `iswf`, `swf` or `i`. Letters must appear in
    /// `iswf` order without repeats.
    pub fn parse(ngram: &str) -> Result<Self> {
        let mut m = Metadata::default();
        let mut last = None;
        for c in ngram.chars() {
            let pos = "iswf"
                .find(c)
                .ok_or_else(|| Error::Config(format!("unknown decoder letter {c:?} in {ngram:?}")))?;
            if last.is_some_and(|l| pos <= l) {
                return Err(Error::Config(format!(
                    "decoder n-gram {ngram:?} must list letters once, in iswf order"
                )));
            }
            last = Some(pos);
            match c {
                'i' => m.item = true,
                's' => m.skill = true,
                'w' => m.wins = true,
                _ => m.fails = true,
            }
        }
        if m.is_empty() {
            return Err(Error::Config("decoder n-gram is empty".into()));
        }
        Ok(m)
    }

    pub fn is_empty(&self) -> bool {
        !(self.item || self.skill || self.wins || self.fails)
    }

    fn only_item(&self) -> bool {
        *self == Metadata { item: true, ..Default::default() }
    }

    fn only_skill(&self) -> bool {
        *self == Metadata { skill: true, ..Default::default() }
    }
}

impl fmt::Display for Metadata {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (on, c) in [(self.item, 'i'), (self.skill, 's'), (self.wins, 'w'), (self.fails, 'f')] {
            if on {
                write!(f, "{c}")?;
            }
        }
        Ok(())
    }
}

/// How actions are keyed in the fixed embedding table of a recurrent encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ActionKey {
    /// One token per (item, outcome).
    #[default]
    Item,
    /// One token per (sorted skill combination, outcome).
    Skill,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EncoderSpec {
    None,
    Gru { d: usize, input: ActionKey },
}

impl EncoderSpec {
    pub fn gru(d: usize) -> Self {
        EncoderSpec::Gru { d, input: ActionKey::Item }
    }

    pub fn dim(&self) -> usize {
        match self {
            EncoderSpec::None => 0,
            EncoderSpec::Gru { d, .. } => *d,
        }
    }
}

impl fmt::Display for EncoderSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EncoderSpec::None => write!(f, "none"),
            EncoderSpec::Gru { d, input: ActionKey::Item } => write!(f, "GRU d={d}"),
            EncoderSpec::Gru { d, input: ActionKey::Skill } => write!(f, "GRU d={d} input=skill"),
        }
    }
}

fn parse_assignment(token: &str, key: &str) -> Option<usize> {
    let (k, v) = token.split_once('=')?;
    (k.trim() == key).then(|| v.trim().parse().ok()).flatten()
}

impl FromStr for EncoderSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("none") {
            return Ok(EncoderSpec::None);
        }
        let mut parts = s.split_whitespace();
        let bad = || Error::Config(format!("cannot parse encoder {s:?}; expected `none` or `GRU d=<n>`"));
        if !parts.next().is_some_and(|p| p.eq_ignore_ascii_case("gru")) {
            return Err(bad());
        }
        let d = parts.next().and_then(|p| parse_assignment(p, "d")).ok_or_else(bad)?;
        let input = match parts.next() {
            None => ActionKey::Item,
            Some(p) => match p.split_once('=') {
                Some(("input", "item")) => ActionKey::Item,
                Some(("input", "skill")) => ActionKey::Skill,
                _ => return Err(bad()),
            },
        };
        if parts.next().is_some() {
            return Err(bad());
        }
        if d == 0 {
            return Err(Error::Config("GRU width must be positive".into()));
        }
        Ok(EncoderSpec::Gru { d, input })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecoderSpec {
    pub metadata: Metadata,
    pub d_prime: usize,
}

impl fmt::Display for DecoderSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} d'={}", self.metadata, self.d_prime)
    }
}

impl FromStr for DecoderSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::Config(format!("cannot parse decoder {s:?}; expected e.g. `iswf d'=1`"));
        let (ngram, rest) = s.split_once(char::is_whitespace).ok_or_else(bad)?;
        let d_prime = parse_assignment(rest.trim(), "d'").ok_or_else(bad)?;
        if d_prime == 0 {
            return Err(Error::Config("d' must be at least 1".into()));
        }
        Ok(DecoderSpec {
            metadata: Metadata::parse(ngram)?,
            d_prime,
        })
    }
}

/// Table read by a dot-product decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DotTarget {
    Item,
    Skill,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecoderForm {
    /// `σ(<h, v_target> + w_target)` with `d' = d`.
    Dot(DotTarget),
    /// `σ(A h + b + selected scalar terms)` with `d' = 1`.
    Scalar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub encoder: EncoderSpec,
    pub decoder: DecoderSpec,
}

impl ModelSpec {
    pub fn new(encoder: EncoderSpec, decoder: DecoderSpec) -> Result<Self> {
        let spec = Self { encoder, decoder };
        spec.form()?;
        Ok(spec)
    }

    /// Parses an encoder and a decoder name, e.g. `("GRU d=2", "iswf d'=1")`.
    pub fn parse(encoder: &str, decoder: &str) -> Result<Self> {
        Self::new(encoder.parse()?, decoder.parse()?)
    }

    /// Resolves which decoder shape the spec denotes. Single-letter `i`/`s`
    /// decoders with `d' = d` are dot products; anything else needs `d' = 1`.
    pub fn form(&self) -> Result<DecoderForm> {
        let d = self.encoder.dim();
        let m = self.decoder.metadata;
        if d > 0 && self.decoder.d_prime == d {
            if m.only_item() {
                return Ok(DecoderForm::Dot(DotTarget::Item));
            }
            if m.only_skill() {
                return Ok(DecoderForm::Dot(DotTarget::Skill));
            }
        }
        if self.decoder.d_prime == 1 {
            return Ok(DecoderForm::Scalar);
        }
        Err(Error::Config(format!(
            "decoder {} with encoder {}: d' > 1 requires a single `i` or `s` letter and d' = d",
            self.decoder, self.encoder
        )))
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} + {}", self.encoder, self.decoder)
    }
}

/// Offsets of every trainable tensor inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ParamLayout {
    pub gru: Option<Range<usize>>,
    pub dot_v: Option<Range<usize>>,
    pub dot_w: Option<Range<usize>>,
    pub proj_a: Option<Range<usize>>,
    pub proj_b: Option<Range<usize>>,
    pub item_bias: Option<Range<usize>>,
    pub skill_bias: Option<Range<usize>>,
    pub win_slope: Option<Range<usize>>,
    pub fail_slope: Option<Range<usize>>,
    pub total: usize,
}

impl ParamLayout {
    pub fn new(spec: &ModelSpec, num_items: usize, num_skills: usize) -> Result<Self> {
        let d = spec.encoder.dim();
        let mut layout = ParamLayout::default();
        let mut next = 0usize;
        let mut take = |len: usize| {
            let r = next..next + len;
            next += len;
            Some(r)
        };
        if d > 0 {
            layout.gru = take(GruParams::len(d));
        }
        match spec.form()? {
            DecoderForm::Dot(target) => {
                let n = match target {
                    DotTarget::Item => num_items,
                    DotTarget::Skill => num_skills,
                };
                layout.dot_v = take(n * d);
                layout.dot_w = take(n);
            }
            DecoderForm::Scalar => {
                let m = spec.decoder.metadata;
                if d > 0 {
                    layout.proj_a = take(d);
                    layout.proj_b = take(1);
                }
                if m.item {
                    layout.item_bias = take(num_items);
                }
                if m.skill {
                    layout.skill_bias = take(num_skills);
                }
                if m.wins {
                    layout.win_slope = take(num_skills);
                }
                if m.fails {
                    layout.fail_slope = take(num_skills);
                }
            }
        }
        layout.total = next;
        Ok(layout)
    }

    /// Named blocks in storage order.
    pub fn blocks(&self) -> Vec<(&'static str, Range<usize>)> {
        [
            ("gru", &self.gru),
            ("dot_v", &self.dot_v),
            ("dot_w", &self.dot_w),
            ("proj_a", &self.proj_a),
            ("proj_b", &self.proj_b),
            ("item_bias", &self.item_bias),
            ("skill_bias", &self.skill_bias),
            ("win_slope", &self.win_slope),
            ("fail_slope", &self.fail_slope),
        ]
        .into_iter()
        .filter_map(|(name, r)| r.clone().map(|r| (name, r)))
        .collect()
    }

    /// Name of the block holding flat index `i`.
    pub fn block_of(&self, i: usize) -> &'static str {
        self.blocks()
            .into_iter()
            .find(|(_, r)| r.contains(&i))
            .map_or("?", |(name, _)| name)
    }
}

/// Seed of the fixed action embeddings, derived from the training seed.
pub fn embedding_seed(seed: u64) -> u64 {
    seed ^ 0x9e37_79b9_7f4a_7c15
}

/// Trainable parameters together with everything needed to run them.
#[derive(Debug, Clone)]
pub struct Model {
    pub spec: ModelSpec,
    pub qmatrix: QMatrix,
    pub layout: ParamLayout,
    pub params: Vec<f64>,
    pub embeddings: Option<ActionEmbeddingTable>,
    pub embedding_seed: u64,
    form: DecoderForm,
}

impl Model {
    /// Fresh model: GRU entries uniform in `±1/sqrt(d)`, dot-product embeddings
    /// Gaussian with standard deviation `1/sqrt(d')`, everything else zero.
    pub fn init(spec: ModelSpec, qmatrix: &QMatrix, seed: u64) -> Result<Self> {
        let form = spec.form()?;
        if form == DecoderForm::Dot(DotTarget::Skill) && !qmatrix.is_single_skill() {
            return Err(Error::Config(format!(
                "decoder {} needs one skill per item; use `GRU ... input=skill` with an iswf decoder or \
                 rebuild the Q-matrix on skill-combination tokens",
                spec.decoder
            )));
        }
        let layout = ParamLayout::new(&spec, qmatrix.num_items(), qmatrix.num_skills())?;
        let mut params = vec![0.0; layout.total];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = spec.encoder.dim();
        if let Some(r) = &layout.gru {
            let bound = 1.0 / (d as f64).sqrt();
            for p in &mut params[r.clone()] {
                *p = rng.random_range(-bound..bound);
            }
        }
        if let Some(r) = &layout.dot_v {
            let normal = Normal::new(0.0, 1.0 / (spec.decoder.d_prime as f64).sqrt())
                .expect("positive standard deviation");
            for p in &mut params[r.clone()] {
                *p = normal.sample(&mut rng);
            }
        }
        let embedding_seed = embedding_seed(seed);
        let embeddings = match spec.encoder {
            EncoderSpec::None => None,
            EncoderSpec::Gru { d, input } => Some(ActionEmbeddingTable::new(embedding_seed, d, input, qmatrix)),
        };
        Ok(Self {
            spec,
            qmatrix: qmatrix.clone(),
            layout,
            params,
            embeddings,
            embedding_seed,
            form,
        })
    }

    /// Rebuilds a model around stored parameters.
    pub fn from_parts(spec: ModelSpec, qmatrix: &QMatrix, params: Vec<f64>, embedding_seed: u64) -> Result<Self> {
        let form = spec.form()?;
        let layout = ParamLayout::new(&spec, qmatrix.num_items(), qmatrix.num_skills())?;
        if params.len() != layout.total {
            return Err(Error::Dimension(format!(
                "{} parameters stored, layout needs {}",
                params.len(),
                layout.total
            )));
        }
        let embeddings = match spec.encoder {
            EncoderSpec::None => None,
            EncoderSpec::Gru { d, input } => Some(ActionEmbeddingTable::new(embedding_seed, d, input, qmatrix)),
        };
        Ok(Self {
            spec,
            qmatrix: qmatrix.clone(),
            layout,
            params,
            embeddings,
            embedding_seed,
            form,
        })
    }

    pub fn form(&self) -> DecoderForm {
        self.form
    }

    pub fn dim(&self) -> usize {
        self.spec.encoder.dim()
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn gru(&self) -> Option<GruParams<'_>> {
        gru_view(&self.layout, &self.params, self.dim())
    }

    pub fn dot_decoder(&self) -> Option<DotDecoder<'_>> {
        dot_view(&self.layout, &self.params, self.dim())
    }

    pub fn scalar_decoder(&self) -> Option<ScalarDecoder<'_>> {
        scalar_view(&self.layout, &self.params, self.form)
    }

    pub fn block(&self, name: &str) -> Option<&[f64]> {
        self.layout
            .blocks()
            .into_iter()
            .find(|(n, _)| *n == name)
            .map(|(_, r)| &self.params[r])
    }
}

pub(crate) fn gru_view<'a>(layout: &ParamLayout, params: &'a [f64], d: usize) -> Option<GruParams<'a>> {
    layout
        .gru
        .clone()
        .map(|r| GruParams::new(d, &params[r]).expect("layout sized for d"))
}

pub(crate) fn dot_view<'a>(layout: &ParamLayout, params: &'a [f64], d: usize) -> Option<DotDecoder<'a>> {
    match (&layout.dot_v, &layout.dot_w) {
        (Some(v), Some(w)) => Some(DotDecoder::new(d, &params[v.clone()], &params[w.clone()])),
        _ => None,
    }
}

pub(crate) fn scalar_view<'a>(layout: &ParamLayout, params: &'a [f64], form: DecoderForm) -> Option<ScalarDecoder<'a>> {
    if form != DecoderForm::Scalar {
        return None;
    }
    let slice = |r: &Option<Range<usize>>| r.clone().map(|r| &params[r]);
    Some(ScalarDecoder {
        proj: slice(&layout.proj_a).zip(slice(&layout.proj_b)),
        item_bias: slice(&layout.item_bias),
        skill_bias: slice(&layout.skill_bias),
        win_slope: slice(&layout.win_slope),
        fail_slope: slice(&layout.fail_slope),
    })
}
