//! Versioned JSON checkpoints and CSV export of the decoder's item and skill
//! parameters.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, QMatrix, Vocab};
use crate::error::{Error, Result};
use crate::model::{DecoderForm, DotTarget, Model, ModelSpec};
use crate::training::TrainConfig;

pub const FORMAT_TAG: &str = "ktrace-checkpoint/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub name: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub spec: ModelSpec,
    pub config: TrainConfig,
    pub embedding_seed: u64,
    pub qmatrix: QMatrix,
    pub items: Vocab,
    pub skills: Vocab,
    pub tensors: Vec<Tensor>,
}

impl Checkpoint {
    pub fn new(model: &Model, config: &TrainConfig, dataset: &Dataset) -> Self {
        let tensors = model
            .layout
            .blocks()
            .into_iter()
            .map(|(name, r)| Tensor {
                name: name.to_owned(),
                values: model.params[r].to_vec(),
            })
            .collect();
        Self {
            format: FORMAT_TAG.to_owned(),
            spec: model.spec,
            config: config.clone(),
            embedding_seed: model.embedding_seed,
            qmatrix: model.qmatrix.clone(),
            items: dataset.items.clone(),
            skills: dataset.skills.clone(),
            tensors,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut w, self)?;
        std::io::Write::flush(&mut w)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        match value.get("format").and_then(|f| f.as_str()) {
            Some(FORMAT_TAG) => Ok(serde_json::from_value(value)?),
            Some(other) => Err(Error::Format(format!(
                "checkpoint format {other:?} is not supported (expected {FORMAT_TAG:?})"
            ))),
            None => Err(Error::Format("checkpoint has no format tag".into())),
        }
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        self.tensors.iter().find(|t| t.name == name).map(|t| t.values.as_slice())
    }

    pub fn model(&self) -> Result<Model> {
        let layout = crate::model::ParamLayout::new(&self.spec, self.qmatrix.num_items(), self.qmatrix.num_skills())?;
        let mut params = vec![0.0; layout.total];
        for (name, r) in layout.blocks() {
            let values = self
                .tensor(name)
                .ok_or_else(|| Error::Format(format!("checkpoint lacks tensor {name}")))?;
            if values.len() != r.len() {
                return Err(Error::Dimension(format!("tensor {name} has {} values, expected {}", values.len(), r.len())));
            }
            params[r].copy_from_slice(values);
        }
        Model::from_parts(self.spec, &self.qmatrix, params, self.embedding_seed)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ItemRow {
    pub item: String,
    pub w: f64,
    pub v: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkillRow {
    pub skill: String,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
    pub v: Vec<f64>,
}

/// The decoder's per-item and per-skill parameters in tabular form.
/// Parameters absent from a decoder are reported as zero.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderTables {
    pub items: Vec<ItemRow>,
    pub skills: Vec<SkillRow>,
}

fn rows_of(values: Option<&[f64]>, n: usize, width: usize) -> Vec<Vec<f64>> {
    match values {
        Some(v) if width > 0 => v.chunks(width).map(<[f64]>::to_vec).collect(),
        _ => vec![Vec::new(); n],
    }
}

impl DecoderTables {
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let model = ck.model()?;
        let (ni, nk, d) = (ck.qmatrix.num_items(), ck.qmatrix.num_skills(), model.dim());
        let at = |name: &str, i: usize| model.block(name).map_or(0.0, |b| b[i]);
        let (item_w, item_v, skill_w, skill_v) = match model.form() {
            DecoderForm::Dot(DotTarget::Item) => ("dot_w", rows_of(model.block("dot_v"), ni, d), "", rows_of(None, nk, 0)),
            DecoderForm::Dot(DotTarget::Skill) => ("", rows_of(None, ni, 0), "dot_w", rows_of(model.block("dot_v"), nk, d)),
            DecoderForm::Scalar => ("item_bias", rows_of(None, ni, 0), "skill_bias", rows_of(None, nk, 0)),
        };
        let name = |vocab: &Vocab, i: usize| vocab.name(i).map_or_else(|| i.to_string(), str::to_owned);
        Ok(Self {
            items: (0..ni)
                .zip(item_v)
                .map(|(i, v)| ItemRow { item: name(&ck.items, i), w: at(item_w, i), v })
                .collect(),
            skills: (0..nk)
                .zip(skill_v)
                .map(|(k, v)| SkillRow {
                    skill: name(&ck.skills, k),
                    beta: at(skill_w, k),
                    gamma: at("win_slope", k),
                    delta: at("fail_slope", k),
                    v,
                })
                .collect(),
        })
    }

    /// Writes `items.csv` (`item,w,v_1..v_d'`) and `skills.csv`
    /// (`skill,beta,gamma,delta[,v_1..]`) into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let writer = |file: &str| -> Result<csv::Writer<File>> {
            Ok(csv::WriterBuilder::new()
                .terminator(csv::Terminator::Any(b'\n'))
                .from_path(dir.join(file))?)
        };
        let v_header = |n: usize| (1..=n).map(|j| format!("v_{j}"));

        let mut w = writer("items.csv")?;
        let width = self.items.first().map_or(0, |r| r.v.len());
        w.write_record(["item".to_owned(), "w".to_owned()].into_iter().chain(v_header(width)))?;
        for r in &self.items {
            w.write_record([r.item.clone(), r.w.to_string()].into_iter().chain(r.v.iter().map(f64::to_string)))?;
        }
        w.flush()?;

        let mut w = writer("skills.csv")?;
        let width = self.skills.first().map_or(0, |r| r.v.len());
        w.write_record(
            ["skill", "beta", "gamma", "delta"]
                .map(str::to_owned)
                .into_iter()
                .chain(v_header(width)),
        )?;
        for r in &self.skills {
            w.write_record(
                [r.skill.clone(), r.beta.to_string(), r.gamma.to_string(), r.delta.to_string()]
                    .into_iter()
                    .chain(r.v.iter().map(f64::to_string)),
            )?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        fn numbers(record: &csv::StringRecord, from: usize) -> Result<Vec<f64>> {
            record
                .iter()
                .skip(from)
                .map(|c| c.parse().map_err(|_| Error::Format(format!("bad number {c:?}"))))
                .collect()
        }
        let mut items = Vec::new();
        for rec in csv::Reader::from_path(dir.join("items.csv"))?.records() {
            let rec = rec?;
            let nums = numbers(&rec, 1)?;
            let (w, v) = nums.split_first().ok_or_else(|| Error::Format("items.csv row lacks w".into()))?;
            items.push(ItemRow { item: rec[0].to_owned(), w: *w, v: v.to_vec() });
        }
        let mut skills = Vec::new();
        for rec in csv::Reader::from_path(dir.join("skills.csv"))?.records() {
            let rec = rec?;
            let nums = numbers(&rec, 1)?;
            if nums.len() < 3 {
                return Err(Error::Format("skills.csv rows need beta, gamma and delta".into()));
            }
            skills.push(SkillRow {
                skill: rec[0].to_owned(),
                beta: nums[0],
                gamma: nums[1],
                delta: nums[2],
                v: nums[3..].to_vec(),
            });
        }
        Ok(Self { items, skills })
    }
}

/// Reads a checkpoint and writes its decoder tables into `out_dir`.
pub fn export_parameters(checkpoint: &Path, out_dir: &Path) -> Result<DecoderTables> {
    let ck = Checkpoint::load(checkpoint)?;
    let tables = DecoderTables::from_checkpoint(&ck)?;
    tables.write(out_dir)?;
    Ok(tables)
}
