//! Interaction logs, Q-matrices, ID vocabularies and fold assignments.
//!
//! Two file layouts are understood:
//!
//! * long: `student,item,outcome,skills`, one row per attempt in attempt
//!   order, skills separated by `~`;
//! * wide: a header of item names followed by one 0/1 row per student, with
//!   a companion `item,skills` Q-matrix. Each student is assumed to attempt
//!   the items in column order.

use std::io::{Read, Write};

use indexmap::IndexSet;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SKILL_SEPARATOR: char = '~';

/// Insertion-ordered mapping between raw string identifiers and dense indices.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    names: IndexSet<String>,
}

impl Vocab {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the dense id of `name`, assigning the next free id on first sight.
    pub fn intern(&mut self, name: &str) -> usize {
        if let Some(id) = self.names.get_index_of(name) {
            return id;
        }
        self.names.insert_full(name.to_owned()).0
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.names.get_index_of(name)
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        self.names.get_index(id).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.names.iter().map(String::as_str)
    }
}

/// Item to skill incidence, stored as one non-empty skill list per item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QMatrix {
    rows: Vec<Vec<usize>>,
    num_skills: usize,
}

impl QMatrix {
    pub fn new(rows: Vec<Vec<usize>>, num_skills: usize) -> Result<Self> {
        for (item, row) in rows.iter().enumerate() {
            if row.is_empty() {
                return Err(Error::Argument(format!("item {item} has no skills")));
            }
            if let Some(&k) = row.iter().find(|&&k| k >= num_skills) {
                return Err(Error::Argument(format!(
                    "item {item} references skill {k} but K = {num_skills}"
                )));
            }
        }
        Ok(Self { rows, num_skills })
    }

    pub fn skills(&self, item: usize) -> Option<&[usize]> {
        self.rows.get(item).map(Vec::as_slice)
    }

    pub fn num_items(&self) -> usize {
        self.rows.len()
    }

    pub fn num_skills(&self) -> usize {
        self.num_skills
    }

    pub fn is_single_skill(&self) -> bool {
        self.rows.iter().all(|r| r.len() == 1)
    }

    /// Maps every item to a token standing for its sorted skill combination.
    /// Returns the per-item token and the number of distinct tokens.
    pub fn skill_combination_tokens(&self) -> (Vec<usize>, usize) {
        let mut combos: IndexSet<Vec<usize>> = IndexSet::new();
        let tokens = self
            .rows
            .iter()
            .map(|row| {
                let mut key = row.clone();
                key.sort_unstable();
                key.dedup();
                combos.insert_full(key).0
            })
            .collect();
        (tokens, combos.len())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub item: usize,
    pub correct: bool,
}

impl Step {
    pub fn new(item: usize, correct: bool) -> Self {
        Self { item, correct }
    }

    pub fn label(&self) -> f64 {
        if self.correct {
            1.0
        } else {
            0.0
        }
    }
}

/// All attempts of one student, in attempt order. Position `t` (1-based) is
/// `steps[t - 1]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudentSequence {
    pub student: usize,
    pub steps: Vec<Step>,
}

impl StudentSequence {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataset {
    pub sequences: Vec<StudentSequence>,
    pub qmatrix: QMatrix,
    pub students: Vocab,
    pub items: Vocab,
    pub skills: Vocab,
}

impl Dataset {
    pub fn new(
        sequences: Vec<StudentSequence>,
        qmatrix: QMatrix,
        students: Vocab,
        items: Vocab,
        skills: Vocab,
    ) -> Result<Self> {
        let ds = Self {
            sequences,
            qmatrix,
            students,
            items,
            skills,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn num_students(&self) -> usize {
        self.sequences.len()
    }

    pub fn num_items(&self) -> usize {
        self.qmatrix.num_items()
    }

    pub fn num_skills(&self) -> usize {
        self.qmatrix.num_skills()
    }

    pub fn num_interactions(&self) -> usize {
        self.sequences.iter().map(StudentSequence::len).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.items.len() != self.qmatrix.num_items() {
            return Err(Error::Dimension(format!(
                "{} item names for {} Q-matrix rows",
                self.items.len(),
                self.qmatrix.num_items()
            )));
        }
        if self.skills.len() != self.qmatrix.num_skills() {
            return Err(Error::Dimension(format!(
                "{} skill names for K = {}",
                self.skills.len(),
                self.qmatrix.num_skills()
            )));
        }
        for seq in &self.sequences {
            if seq.steps.is_empty() {
                return Err(Error::Argument(format!("student {} has no steps", seq.student)));
            }
            if seq.student >= self.students.len() {
                return Err(Error::Argument(format!("student id {} out of range", seq.student)));
            }
            if let Some(step) = seq.steps.iter().find(|s| s.item >= self.num_items()) {
                return Err(Error::MissingItem { item: step.item });
            }
        }
        Ok(())
    }

    /// Keeps only the given sequences (by position in `sequences`), with the
    /// vocabularies and Q-matrix left intact.
    pub fn restrict(&self, positions: &[usize]) -> Dataset {
        Dataset {
            sequences: positions.iter().map(|&i| self.sequences[i].clone()).collect(),
            qmatrix: self.qmatrix.clone(),
            students: self.students.clone(),
            items: self.items.clone(),
            skills: self.skills.clone(),
        }
    }

    pub fn student_name(&self, id: usize) -> String {
        self.students.name(id).map_or_else(|| id.to_string(), str::to_owned)
    }

    pub fn item_name(&self, id: usize) -> String {
        self.items.name(id).map_or_else(|| id.to_string(), str::to_owned)
    }

    pub fn skill_name(&self, id: usize) -> String {
        self.skills.name(id).map_or_else(|| id.to_string(), str::to_owned)
    }

    /// Serializes to the long CSV format.
    pub fn write_long<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        w.write_record(["student", "item", "outcome", "skills"])?;
        for seq in &self.sequences {
            let student = self.student_name(seq.student);
            for step in &seq.steps {
                let skills = self
                    .qmatrix
                    .skills(step.item)
                    .ok_or(Error::MissingItem { item: step.item })?
                    .iter()
                    .map(|&k| self.skill_name(k))
                    .collect::<Vec<_>>()
                    .join(&SKILL_SEPARATOR.to_string());
                let outcome = if step.correct { "1" } else { "0" };
                w.write_record([student.as_str(), &self.item_name(step.item), outcome, &skills])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input)
}

fn line_of(record: &csv::StringRecord) -> u64 {
    record.position().map_or(0, |p| p.line())
}

fn parse_outcome(cell: &str, line: u64) -> Result<bool> {
    match cell {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(Error::parse(line, format!("outcome must be 0 or 1, got {other:?}"))),
    }
}

fn parse_skill_list(cell: &str, skills: &mut Vocab, line: u64) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for name in cell.split(SKILL_SEPARATOR).map(str::trim) {
        if name.is_empty() {
            return Err(Error::parse(line, format!("empty skill name in {cell:?}")));
        }
        let k = skills.intern(name);
        if !out.contains(&k) {
            out.push(k);
        }
    }
    Ok(out)
}

fn same_skill_set(a: &[usize], b: &[usize]) -> bool {
    a.len() == b.len() && a.iter().all(|k| b.contains(k))
}

/// Parses the long `student,item,outcome,skills` format.
pub fn parse_interactions<R: Read>(input: R) -> Result<Dataset> {
    let mut rdr = reader(input);
    let header = match rdr.headers() {
        Ok(h) => h.clone(),
        Err(_) => return Err(Error::Format("no interactions".into())),
    };
    let column = |name: &str| {
        header
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::parse(1, format!("missing column {name:?}")))
    };
    if header.is_empty() || header.iter().all(str::is_empty) {
        return Err(Error::Format("no interactions".into()));
    }
    let (c_student, c_item, c_outcome, c_skills) =
        (column("student")?, column("item")?, column("outcome")?, column("skills")?);

    let mut students = Vocab::new();
    let mut items = Vocab::new();
    let mut skills = Vocab::new();
    let mut item_skills: Vec<Vec<usize>> = Vec::new();
    let mut sequences: Vec<StudentSequence> = Vec::new();

    for record in rdr.records() {
        let record = record?;
        let line = line_of(&record);
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        if record.len() != header.len() {
            return Err(Error::parse(
                line,
                format!("expected {} columns, found {}", header.len(), record.len()),
            ));
        }
        let correct = parse_outcome(&record[c_outcome], line)?;
        let skill_list = parse_skill_list(&record[c_skills], &mut skills, line)?;

        let item_name = &record[c_item];
        let item = items.intern(item_name);
        if item == item_skills.len() {
            item_skills.push(skill_list);
        } else if !same_skill_set(&item_skills[item], &skill_list) {
            return Err(Error::InconsistentSkills {
                item: item_name.to_owned(),
            });
        }

        let student = students.intern(&record[c_student]);
        if student == sequences.len() {
            sequences.push(StudentSequence {
                student,
                steps: Vec::new(),
            });
        }
        sequences[student].steps.push(Step::new(item, correct));
    }

    if sequences.is_empty() {
        return Err(Error::Format("no interactions".into()));
    }
    let num_skills = skills.len();
    Dataset::new(sequences, QMatrix::new(item_skills, num_skills)?, students, items, skills)
}

/// Parses a students x items 0/1 response table plus its `item,skills`
/// Q-matrix. Student `i` (0-based row) is named by its row number.
pub fn parse_wide_matrix<R: Read, Q: Read>(responses: R, qmatrix: Q) -> Result<Dataset> {
    let mut rdr = reader(responses);
    let header = rdr
        .headers()
        .map_err(|_| Error::Format("empty response matrix".into()))?
        .clone();
    let mut items = Vocab::new();
    for name in header.iter() {
        if items.id(name).is_some() {
            return Err(Error::parse(1, format!("duplicate item column {name:?}")));
        }
        items.intern(name);
    }
    if items.is_empty() || header.iter().all(str::is_empty) {
        return Err(Error::Format("empty response matrix".into()));
    }

    let mut skills = Vocab::new();
    let mut rows: Vec<Option<Vec<usize>>> = vec![None; items.len()];
    let mut qrdr = reader(qmatrix);
    let qheader = qrdr.headers()?.clone();
    if qheader.len() != 2 {
        return Err(Error::parse(1, "Q-matrix header must be `item,skills`"));
    }
    let mut qrows = 0usize;
    for record in qrdr.records() {
        let record = record?;
        let line = line_of(&record);
        if record.len() != 2 {
            return Err(Error::parse(line, "Q-matrix rows need exactly 2 columns"));
        }
        qrows += 1;
        let skill_list = parse_skill_list(&record[1], &mut skills, line)?;
        if let Some(item) = items.id(&record[0]) {
            rows[item] = Some(skill_list);
        } else {
            return Err(Error::Dimension(format!(
                "Q-matrix item {:?} is not a response column",
                &record[0]
            )));
        }
    }
    if qrows != items.len() {
        return Err(Error::Dimension(format!(
            "Q-matrix has {qrows} rows for {} items",
            items.len()
        )));
    }
    let rows = rows
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            r.ok_or_else(|| Error::Dimension(format!("item {:?} has no Q-matrix row", items.name(i))))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut students = Vocab::new();
    let mut sequences = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = line_of(&record);
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        if record.len() != items.len() {
            return Err(Error::parse(
                line,
                format!("ragged row: expected {} cells, found {}", items.len(), record.len()),
            ));
        }
        let student = students.intern(&sequences.len().to_string());
        let steps = record
            .iter()
            .enumerate()
            .map(|(item, cell)| parse_outcome(cell, line).map(|c| Step::new(item, c)))
            .collect::<Result<Vec<_>>>()?;
        sequences.push(StudentSequence { student, steps });
    }
    if sequences.is_empty() {
        return Err(Error::Format("no interactions".into()));
    }
    let num_skills = skills.len();
    Dataset::new(sequences, QMatrix::new(rows, num_skills)?, students, items, skills)
}

/// Student-level fold membership. `fold_of[i]` is the fold of the sequence at
/// position `i` in the dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAssignment {
    fold_of: Vec<usize>,
    k: usize,
}

impl FoldAssignment {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn fold_of(&self, position: usize) -> usize {
        self.fold_of[position]
    }

    pub fn test_positions(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_of.len()).filter(|&i| self.fold_of[i] == fold).collect()
    }

    pub fn train_positions(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_of.len()).filter(|&i| self.fold_of[i] != fold).collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.fold_of {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Shuffles students with a seeded generator and deals them round-robin into `k` folds.
pub fn split_folds(dataset: &Dataset, k: usize, seed: u64) -> Result<FoldAssignment> {
    let n = dataset.num_students();
    if k < 2 {
        return Err(Error::Argument(format!("need at least 2 folds, got {k}")));
    }
    if k > n {
        return Err(Error::Argument(format!("{k} folds for only {n} students")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold_of = vec![0; n];
    for (rank, &pos) in order.iter().enumerate() {
        fold_of[pos] = rank % k;
    }
    Ok(FoldAssignment { fold_of, k })
}
