//! Prior success/failure counts per skill and the sparse design row built on them.
//!
//! Counts at step `t` only reflect steps `1..t-1`: the outcome being predicted
//! never leaks into its own features.

use std::collections::BTreeMap;

use crate::data::{QMatrix, StudentSequence};
use crate::error::{Error, Result};
use crate::model::Metadata;

/// Win/fail counts of one skill, as seen right before a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SkillCounts {
    pub skill: usize,
    pub wins: u32,
    pub fails: u32,
}

/// Counters for one student.
///
/// `at_step[t]` (0-based) holds the counts of the skills of the item
/// attempted at that step. Arbitrary `(t, k)` lookups go through the
/// per-skill history.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CounterTable {
    at_step: Vec<Vec<SkillCounts>>,
    // skill -> (step index of the update, cumulative wins, cumulative fails after it)
    history: BTreeMap<usize, Vec<(usize, u32, u32)>>,
}

impl CounterTable {
    pub fn len(&self) -> usize {
        self.at_step.len()
    }

    pub fn is_empty(&self) -> bool {
        self.at_step.is_empty()
    }

    /// Counts for the skills of the item at 0-based step `t`.
    pub fn step(&self, t: usize) -> &[SkillCounts] {
        &self.at_step[t]
    }

    /// (wins, fails) of skill `k` over the steps strictly before 0-based step `t`.
    pub fn counts(&self, t: usize, k: usize) -> (u32, u32) {
        let Some(updates) = self.history.get(&k) else {
            return (0, 0);
        };
        let before = updates.partition_point(|&(step, _, _)| step < t);
        if before == 0 {
            (0, 0)
        } else {
            let (_, w, f) = updates[before - 1];
            (w, f)
        }
    }

    pub fn wins(&self, t: usize, k: usize) -> u32 {
        self.counts(t, k).0
    }

    pub fn fails(&self, t: usize, k: usize) -> u32 {
        self.counts(t, k).1
    }
}

pub fn compute_counters(sequence: &StudentSequence, qmatrix: &QMatrix) -> Result<CounterTable> {
    let mut running: BTreeMap<usize, (u32, u32)> = BTreeMap::new();
    let mut history: BTreeMap<usize, Vec<(usize, u32, u32)>> = BTreeMap::new();
    let mut at_step = Vec::with_capacity(sequence.len());

    for (t, step) in sequence.steps.iter().enumerate() {
        let skills = qmatrix
            .skills(step.item)
            .ok_or(Error::MissingItem { item: step.item })?;
        at_step.push(
            skills
                .iter()
                .map(|&k| {
                    let (wins, fails) = running.get(&k).copied().unwrap_or_default();
                    SkillCounts { skill: k, wins, fails }
                })
                .collect(),
        );
        for &k in skills {
            let entry = running.entry(k).or_default();
            if step.correct {
                entry.0 += 1;
            } else {
                entry.1 += 1;
            }
            history.entry(k).or_default().push((t, entry.0, entry.1));
        }
    }
    Ok(CounterTable { at_step, history })
}

/// Index offsets of the item | skill | wins | fails blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureLayout {
    pub num_items: usize,
    pub num_skills: usize,
}

impl FeatureLayout {
    pub fn new(num_items: usize, num_skills: usize) -> Self {
        Self { num_items, num_skills }
    }

    pub fn item(&self, q: usize) -> usize {
        q
    }

    pub fn skill(&self, k: usize) -> usize {
        self.num_items + k
    }

    pub fn wins(&self, k: usize) -> usize {
        self.num_items + self.num_skills + k
    }

    pub fn fails(&self, k: usize) -> usize {
        self.num_items + 2 * self.num_skills + k
    }

    pub fn width(&self) -> usize {
        self.num_items + 3 * self.num_skills
    }
}

/// Sparse design row `(column, value)` for the item at 0-based step `t`.
/// Zero-valued count entries are omitted.
pub fn assemble_features(
    t: usize,
    item: usize,
    qmatrix: &QMatrix,
    counters: &CounterTable,
    metadata: Metadata,
) -> Result<Vec<(usize, f64)>> {
    let layout = FeatureLayout::new(qmatrix.num_items(), qmatrix.num_skills());
    let skills = qmatrix.skills(item).ok_or(Error::MissingItem { item })?;
    let mut row = Vec::with_capacity(1 + 3 * skills.len());
    if metadata.item {
        row.push((layout.item(item), 1.0));
    }
    if metadata.skill {
        row.extend(skills.iter().map(|&k| (layout.skill(k), 1.0)));
    }
    if metadata.wins || metadata.fails {
        for &k in skills {
            let (w, f) = counters.counts(t, k);
            if metadata.wins && w > 0 {
                row.push((layout.wins(k), f64::from(w)));
            }
            if metadata.fails && f > 0 {
                row.push((layout.fails(k), f64::from(f)));
            }
        }
    }
    Ok(row)
}
