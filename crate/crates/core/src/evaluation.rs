//! Held-out prediction, ACC/AUC, and k-fold cross-validation by student.

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::Serialize;

use crate::counters::compute_counters;
use crate::data::{split_folds, Dataset, StudentSequence, Vocab};
use crate::decoder::{decode_dot, decode_scalar, resolve_dot_target};
use crate::encoder::{encode_none, encode_sequence};
use crate::error::{Error, Result};
use crate::model::{DecoderForm, Model, ModelSpec};
use crate::training::{fit, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PredictionRow {
    pub student: usize,
    /// 1-based position within the student's sequence.
    pub step: usize,
    pub item: usize,
    pub label: bool,
    pub prediction: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PredictionLog {
    pub rows: Vec<PredictionRow>,
}

impl PredictionLog {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn labels(&self) -> Vec<bool> {
        self.rows.iter().map(|r| r.label).collect()
    }

    pub fn predictions(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.prediction).collect()
    }
}

/// Success probabilities for every step of one sequence, unrolling the
/// encoder over the student's own history.
pub fn predict_sequence(model: &Model, sequence: &StudentSequence) -> Result<Vec<f64>> {
    let counters = compute_counters(sequence, &model.qmatrix)?;
    let states = match (model.gru(), &model.embeddings) {
        (Some(gru), Some(table)) => encode_sequence(sequence, table, &gru, sequence.len().max(1))?.0,
        _ => encode_none(sequence),
    };
    sequence
        .steps
        .iter()
        .zip(&states)
        .enumerate()
        .map(|(t, (step, h))| match model.form() {
            DecoderForm::Dot(kind) => {
                let target = resolve_dot_target(kind, step.item, &model.qmatrix)?;
                Ok(decode_dot(h, target, &model.dot_decoder().expect("dot decoder")))
            }
            DecoderForm::Scalar => {
                let dec = model.scalar_decoder().expect("scalar decoder");
                Ok(decode_scalar(dec.h_prime(h), step.item, counters.step(t), &dec))
            }
        })
        .collect()
}

pub fn predict_students(model: &Model, test: &[StudentSequence]) -> Result<PredictionLog> {
    let mut rows = Vec::with_capacity(test.iter().map(StudentSequence::len).sum());
    for seq in test {
        let preds = predict_sequence(model, seq)?;
        rows.extend(seq.steps.iter().zip(preds).enumerate().map(|(t, (step, p))| PredictionRow {
            student: seq.student,
            step: t + 1,
            item: step.item,
            label: step.correct,
            prediction: p,
        }));
    }
    Ok(PredictionLog { rows })
}

/// Fraction of rows where `p >= 0.5` agrees with the label.
pub fn accuracy(log: &PredictionLog) -> Result<f64> {
    accuracy_of(&log.labels(), &log.predictions())
}

pub fn accuracy_of(labels: &[bool], scores: &[f64]) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::UndefinedMetric("accuracy of an empty log".into()));
    }
    let hits = labels
        .iter()
        .zip(scores)
        .filter(|(&a, &p)| (p >= 0.5) == a)
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

pub fn auc(log: &PredictionLog) -> Result<f64> {
    auc_of(&log.labels(), &log.predictions())
}

/// Mann-Whitney AUC from midranks: the probability that a random positive
/// outscores a random negative, ties counting one half.
pub fn auc_of(labels: &[bool], scores: &[f64]) -> Result<f64> {
    assert_eq!(labels.len(), scores.len());
    let positives = labels.iter().filter(|&&a| a).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::UndefinedMetric("AUC needs both positive and negative labels".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut positive_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j share their mean
        let midrank = (i + 1 + j) as f64 / 2.0;
        let tied_positives = order[i..j].iter().filter(|&&k| labels[k]).count();
        positive_rank_sum += midrank * tied_positives as f64;
        i = j;
    }
    let (p, n) = (positives as f64, negatives as f64);
    Ok((positive_rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldMetrics {
    pub fold: usize,
    pub acc: Option<f64>,
    pub auc: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub spec: String,
    pub folds: Vec<FoldMetrics>,
    pub mean_acc: Option<f64>,
    pub mean_auc: Option<f64>,
    pub config: TrainConfig,
}

impl MetricReport {
    pub fn failed(&self) -> bool {
        self.folds.iter().any(|f| f.error.is_some())
    }
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let present: Vec<f64> = values.flatten().collect();
    (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64)
}

#[derive(Debug, Clone)]
pub struct FoldRun {
    pub metrics: FoldMetrics,
    pub model: Option<Model>,
    pub predictions: PredictionLog,
    pub loss_trace: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct CrossValidation {
    pub report: MetricReport,
    pub runs: Vec<FoldRun>,
}

fn run_fold(spec: ModelSpec, dataset: &Dataset, train: &[usize], test: &[usize], config: &TrainConfig) -> Result<FoldRun> {
    let fitted = fit(spec, &dataset.restrict(train), config)?;
    let test_set = dataset.restrict(test);
    let predictions = predict_students(&fitted.model, &test_set.sequences)?;
    let acc = accuracy(&predictions).ok();
    let auc = match auc(&predictions) {
        Ok(v) => Some(v),
        Err(e) => {
            log::warn!("{spec}: {e}; fold excluded from the AUC mean");
            None
        }
    };
    Ok(FoldRun {
        metrics: FoldMetrics { fold: 0, acc, auc, error: None },
        model: Some(fitted.model),
        predictions,
        loss_trace: fitted.loss_trace,
    })
}

/// Trains on `k - 1` folds and predicts the remaining one, for every fold.
/// Folds are independent and run on the current rayon pool.
pub fn cross_validate(spec: ModelSpec, dataset: &Dataset, k: usize, config: &TrainConfig) -> Result<CrossValidation> {
    config.validate()?;
    let folds = split_folds(dataset, k, config.seed)?;
    let runs: Vec<FoldRun> = (0..k)
        .into_par_iter()
        .map(|f| {
            let train = folds.train_positions(f);
            let test = folds.test_positions(f);
            let mut run = run_fold(spec, dataset, &train, &test, config).unwrap_or_else(|e| {
                log::error!("{spec}, fold {f}: {e}");
                FoldRun {
                    metrics: FoldMetrics { fold: f, acc: None, auc: None, error: Some(e.to_string()) },
                    model: None,
                    predictions: PredictionLog::default(),
                    loss_trace: Vec::new(),
                }
            });
            run.metrics.fold = f;
            run
        })
        .collect();
    let metrics: Vec<FoldMetrics> = runs.iter().map(|r| r.metrics.clone()).collect();
    let report = MetricReport {
        spec: spec.to_string(),
        mean_acc: mean(metrics.iter().map(|m| m.acc)),
        mean_auc: mean(metrics.iter().map(|m| m.auc)),
        folds: metrics,
        config: config.clone(),
    };
    Ok(CrossValidation { report, runs })
}

/// Writes `fold,student,step,item,label,prediction` rows with raw ids.
pub fn write_predictions<W: Write>(out: W, dataset: &Dataset, logs: &[(usize, &PredictionLog)]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(["fold", "student", "step", "item", "label", "prediction"])?;
    for (fold, log) in logs {
        for r in &log.rows {
            w.write_record([
                fold.to_string(),
                dataset.student_name(r.student),
                r.step.to_string(),
                dataset.item_name(r.item),
                u8::from(r.label).to_string(),
                r.prediction.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a prediction CSV. Only the `label` and `prediction` columns are
/// required; `student`, `step` and `item` are picked up when present.
pub fn read_predictions<R: Read>(input: R) -> Result<PredictionLog> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let header = rdr.headers()?.clone();
    let col = |name: &str| header.iter().position(|h| h == name);
    let label_col = col("label").ok_or_else(|| Error::Format("prediction CSV lacks a `label` column".into()))?;
    let pred_col =
        col("prediction").ok_or_else(|| Error::Format("prediction CSV lacks a `prediction` column".into()))?;
    let (student_col, step_col, item_col) = (col("student"), col("step"), col("item"));
    let mut students = Vocab::new();
    let mut items = Vocab::new();
    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let label = match &record[label_col] {
            "0" => false,
            "1" => true,
            other => return Err(Error::parse(line, format!("label must be 0 or 1, got {other:?}"))),
        };
        let prediction: f64 = record[pred_col]
            .parse()
            .map_err(|_| Error::parse(line, format!("bad prediction {:?}", &record[pred_col])))?;
        rows.push(PredictionRow {
            student: student_col.map_or(0, |c| students.intern(&record[c])),
            step: step_col.and_then(|c| record[c].parse().ok()).unwrap_or(rows.len() + 1),
            item: item_col.map_or(0, |c| items.intern(&record[c])),
            label,
            prediction,
        });
    }
    Ok(PredictionLog { rows })
}
