//! Simulated interaction logs drawn from closed-form response models, with
//! the generating parameters kept for recovery checks.
//!
//! * `irt`: `P(correct) = σ(θ_student + w_item)`.
//! * `pfa`: `P(correct) = σ(θ_student + w_item + Σ_k β_k + γ_k W_k + δ_k F_k)`,
//!   simulated step by step so the counts evolve with the outcomes. With the
//!   default zero ability and easiness spreads this is plain PFA.
//!
//! Every step draws an item uniformly at random. Item `j` assesses skill
//! `j mod K`, plus up to `max_skills_per_item - 1` further skills.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::counters::compute_counters;
use crate::data::{Dataset, QMatrix, Step, StudentSequence, Vocab};
use crate::encoder::sigmoid;
use crate::error::{Error, Result};
use crate::kv;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeneratorKind {
    Irt,
    Pfa,
}

impl FromStr for GeneratorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "irt" => Ok(GeneratorKind::Irt),
            "pfa" => Ok(GeneratorKind::Pfa),
            other => Err(Error::Config(format!("unknown generator kind {other:?}; use irt or pfa"))),
        }
    }
}

impl fmt::Display for GeneratorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GeneratorKind::Irt => "irt",
            GeneratorKind::Pfa => "pfa",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub kind: GeneratorKind,
    pub num_students: usize,
    pub num_items: usize,
    pub num_skills: usize,
    pub length: usize,
    pub max_skills_per_item: usize,
    /// Standard deviation of student ability θ.
    pub ability_sd: f64,
    /// Standard deviation of item easiness w.
    pub easiness_sd: f64,
    /// Standard deviation of skill easiness β.
    pub skill_bias_sd: f64,
    /// Uniform range of the win slopes γ.
    pub win_slope: (f64, f64),
    /// Uniform range of the fail slopes δ.
    pub fail_slope: (f64, f64),
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn irt(num_students: usize, num_items: usize, length: usize, seed: u64) -> Self {
        Self {
            kind: GeneratorKind::Irt,
            num_students,
            num_items,
            num_skills: 1,
            length,
            max_skills_per_item: 1,
            ability_sd: 1.0,
            easiness_sd: 1.0,
            skill_bias_sd: 0.0,
            win_slope: (0.0, 0.0),
            fail_slope: (0.0, 0.0),
            seed,
        }
    }

    pub fn pfa(num_students: usize, num_items: usize, num_skills: usize, length: usize, seed: u64) -> Self {
        Self {
            kind: GeneratorKind::Pfa,
            num_students,
            num_items,
            num_skills,
            length,
            max_skills_per_item: 1,
            ability_sd: 0.0,
            easiness_sd: 0.0,
            skill_bias_sd: 1.0,
            win_slope: (0.0, 0.4),
            fail_slope: (-0.3, 0.1),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        for (name, v) in [
            ("num_students", self.num_students),
            ("num_items", self.num_items),
            ("num_skills", self.num_skills),
            ("length", self.length),
            ("max_skills_per_item", self.max_skills_per_item),
        ] {
            if v == 0 {
                bad.push(name);
            }
        }
        if self.max_skills_per_item > self.num_skills {
            bad.push("max_skills_per_item");
        }
        for (name, v) in [
            ("ability_sd", self.ability_sd),
            ("easiness_sd", self.easiness_sd),
            ("skill_bias_sd", self.skill_bias_sd),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                bad.push(name);
            }
        }
        for (name, (lo, hi)) in [("win_slope", self.win_slope), ("fail_slope", self.fail_slope)] {
            if !(lo <= hi && lo.is_finite() && hi.is_finite()) {
                bad.push(name);
            }
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid synthetic spec: {}", bad.join(", "))))
        }
    }

    /// Reads a `key = value` spec. `kind` is required; other keys default to
    /// the kind's defaults. Ranges are written `lo..hi`.
    pub fn parse(text: &str) -> Result<Self> {
        let entries = kv::parse(text)?;
        let kind: GeneratorKind = entries
            .iter()
            .find(|e| e.key == "kind")
            .ok_or_else(|| Error::Config("synthetic spec needs `kind = irt|pfa`".into()))?
            .value
            .parse()?;
        let mut spec = match kind {
            GeneratorKind::Irt => Self::irt(100, 20, 20, 0),
            GeneratorKind::Pfa => Self::pfa(100, 20, 5, 20, 0),
        };
        let mut problems = Vec::new();
        let range = |e: &kv::Entry, problems: &mut Vec<String>| {
            let parsed = e
                .value
                .split_once("..")
                .and_then(|(a, b)| Some((a.trim().parse().ok()?, b.trim().parse().ok()?)));
            if parsed.is_none() {
                problems.push(format!("line {}: {} must look like lo..hi", e.line, e.key));
            }
            parsed
        };
        for e in &entries {
            match e.key.as_str() {
                "kind" => {}
                "num_students" => spec.num_students = kv::typed(e, &mut problems).unwrap_or(0),
                "num_items" => spec.num_items = kv::typed(e, &mut problems).unwrap_or(0),
                "num_skills" => spec.num_skills = kv::typed(e, &mut problems).unwrap_or(0),
                "length" => spec.length = kv::typed(e, &mut problems).unwrap_or(0),
                "max_skills_per_item" => spec.max_skills_per_item = kv::typed(e, &mut problems).unwrap_or(0),
                "ability_sd" => spec.ability_sd = kv::typed(e, &mut problems).unwrap_or(f64::NAN),
                "easiness_sd" => spec.easiness_sd = kv::typed(e, &mut problems).unwrap_or(f64::NAN),
                "skill_bias_sd" => spec.skill_bias_sd = kv::typed(e, &mut problems).unwrap_or(f64::NAN),
                "win_slope" => spec.win_slope = range(e, &mut problems).unwrap_or((1.0, 0.0)),
                "fail_slope" => spec.fail_slope = range(e, &mut problems).unwrap_or((1.0, 0.0)),
                "seed" => spec.seed = kv::typed(e, &mut problems).unwrap_or(0),
                other => problems.push(format!("line {}: unknown key {other:?}", e.line)),
            }
        }
        if !problems.is_empty() {
            return Err(Error::Config(problems.join("; ")));
        }
        spec.validate()?;
        Ok(spec)
    }
}

/// Generating parameters. Vectors are indexed by dense ids of the dataset
/// returned alongside.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTruth {
    pub ability: Vec<f64>,
    pub easiness: Vec<f64>,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub delta: Vec<f64>,
}

impl SyntheticTruth {
    /// True success probability of every step of `sequence`.
    pub fn probabilities(&self, sequence: &StudentSequence, qmatrix: &QMatrix) -> Result<Vec<f64>> {
        let counters = compute_counters(sequence, qmatrix)?;
        Ok(sequence
            .steps
            .iter()
            .enumerate()
            .map(|(t, step)| {
                let mut z = self.ability[sequence.student] + self.easiness[step.item];
                for c in counters.step(t) {
                    z += self.beta[c.skill] + self.gamma[c.skill] * f64::from(c.wins) + self.delta[c.skill] * f64::from(c.fails);
                }
                sigmoid(z)
            })
            .collect())
    }

    /// Writes `parameter,id,value` rows.
    pub fn write_csv<W: Write>(&self, out: W, dataset: &Dataset) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        w.write_record(["parameter", "id", "value"])?;
        let rows = [
            ("ability", &self.ability, Dataset::student_name as fn(&Dataset, usize) -> String),
            ("easiness", &self.easiness, Dataset::item_name),
            ("beta", &self.beta, Dataset::skill_name),
            ("gamma", &self.gamma, Dataset::skill_name),
            ("delta", &self.delta, Dataset::skill_name),
        ];
        for (param, values, name) in rows {
            for (i, v) in values.iter().enumerate() {
                w.write_record([param.to_owned(), name(dataset, i), v.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn normal_draws(rng: &mut ChaCha8Rng, n: usize, sd: f64) -> Vec<f64> {
    if sd == 0.0 {
        return vec![0.0; n];
    }
    let dist = Normal::new(0.0, sd).expect("finite sd");
    (0..n).map(|_| dist.sample(rng)).collect()
}

fn uniform_draws(rng: &mut ChaCha8Rng, n: usize, (lo, hi): (f64, f64)) -> Vec<f64> {
    (0..n)
        .map(|_| if lo == hi { lo } else { rng.random_range(lo..hi) })
        .collect()
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(Dataset, SyntheticTruth)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let k = spec.num_skills;

    let rows: Vec<Vec<usize>> = (0..spec.num_items)
        .map(|j| {
            let mut row = vec![j % k];
            let extra = rng.random_range(0..spec.max_skills_per_item);
            while row.len() < 1 + extra {
                let s = rng.random_range(0..k);
                if !row.contains(&s) {
                    row.push(s);
                }
            }
            row
        })
        .collect();
    let qmatrix = QMatrix::new(rows, k)?;

    let ability = normal_draws(&mut rng, spec.num_students, spec.ability_sd);
    let easiness = normal_draws(&mut rng, spec.num_items, spec.easiness_sd);
    let (beta, gamma, delta) = match spec.kind {
        GeneratorKind::Irt => (vec![0.0; k], vec![0.0; k], vec![0.0; k]),
        GeneratorKind::Pfa => (
            normal_draws(&mut rng, k, spec.skill_bias_sd),
            uniform_draws(&mut rng, k, spec.win_slope),
            uniform_draws(&mut rng, k, spec.fail_slope),
        ),
    };

    let mut sequences = Vec::with_capacity(spec.num_students);
    for (student, &theta) in ability.iter().enumerate() {
        let mut wins = vec![0u32; k];
        let mut fails = vec![0u32; k];
        let mut steps = Vec::with_capacity(spec.length);
        for _ in 0..spec.length {
            let item = rng.random_range(0..spec.num_items);
            let skills = qmatrix.skills(item).expect("generated row");
            let mut z = theta + easiness[item];
            for &s in skills {
                z += beta[s] + gamma[s] * f64::from(wins[s]) + delta[s] * f64::from(fails[s]);
            }
            let correct = rng.random_bool(sigmoid(z));
            for &s in skills {
                if correct {
                    wins[s] += 1;
                } else {
                    fails[s] += 1;
                }
            }
            steps.push(Step::new(item, correct));
        }
        sequences.push(StudentSequence { student, steps });
    }

    let vocab = |prefix: &str, n: usize| {
        let mut v = Vocab::new();
        for i in 0..n {
            v.intern(&format!("{prefix}{i}"));
        }
        v
    };
    let dataset = Dataset::new(
        sequences,
        qmatrix,
        vocab("u", spec.num_students),
        vocab("q", spec.num_items),
        vocab("k", k),
    )?;
    Ok((
        dataset,
        SyntheticTruth {
            ability,
            easiness,
            beta,
            gamma,
            delta,
        },
    ))
}
