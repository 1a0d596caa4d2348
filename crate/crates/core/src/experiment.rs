//! Config-driven cross-validation runs over a grid of models.
//!
//! A config is a `key = value` file:
//!
//! ```text
//! dataset = fraction.csv        # relative paths resolve against the config's directory
//! format = wide                 # long (default) | wide
//! qmatrix = fraction_q.csv      # wide format only
//! folds = 5
//! seed = 0
//! epochs = 200
//! model = PFA; none; swf d'=1   # label; encoder; decoder, repeatable
//! model = LR; none; iswf d'=1
//! model = DKT; GRU d=2; s d'=1
//! ```
//!
//! Training keys are those of [`TrainConfig`]. `out` and `workers` may be
//! given in the file or overridden by the caller.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::checkpoint::Checkpoint;
use crate::data::{parse_interactions, parse_wide_matrix, Dataset};
use crate::error::{Error, Result};
use crate::evaluation::{accuracy_of, auc_of, cross_validate, read_predictions, write_predictions, MetricReport};
use crate::kv;
use crate::model::{DecoderSpec, EncoderSpec, ModelSpec};
use crate::training::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataFormat {
    Long,
    Wide,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridEntry {
    pub label: String,
    pub spec: ModelSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: PathBuf,
    pub format: DataFormat,
    pub qmatrix: Option<PathBuf>,
    pub grid: Vec<GridEntry>,
    pub train: TrainConfig,
    pub folds: usize,
    pub out: Option<PathBuf>,
    pub workers: usize,
}

impl ExperimentConfig {
    /// Parses a config. Relative paths are joined onto `base`. Every problem
    /// found is reported in one error.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let entries = kv::parse(text)?;
        let mut problems = Vec::new();
        let mut dataset = None;
        let mut format = DataFormat::Long;
        let mut qmatrix = None;
        let mut grid = Vec::new();
        let mut train = TrainConfig::default();
        let mut folds = 5;
        let mut out = None;
        let mut workers = 1;

        for e in &entries {
            match e.key.as_str() {
                "dataset" => dataset = Some(base.join(&e.value)),
                "qmatrix" => qmatrix = Some(base.join(&e.value)),
                "out" => out = Some(base.join(&e.value)),
                "format" => match e.value.as_str() {
                    "long" => format = DataFormat::Long,
                    "wide" => format = DataFormat::Wide,
                    other => problems.push(format!("line {}: format must be long or wide, got {other:?}", e.line)),
                },
                "model" => match parse_grid_entry(&e.value) {
                    Ok(entry) => grid.push(entry),
                    Err(err) => problems.push(format!("line {}: model: {err}", e.line)),
                },
                "learning_rate" => train.learning_rate = kv::typed(e, &mut problems).unwrap_or(train.learning_rate),
                "weight_decay" => train.weight_decay = kv::typed(e, &mut problems).unwrap_or(train.weight_decay),
                "minibatch_count" => {
                    train.minibatch_count = kv::typed(e, &mut problems).unwrap_or(train.minibatch_count)
                }
                "bptt_window" => train.bptt_window = kv::typed(e, &mut problems).unwrap_or(train.bptt_window),
                "epochs" => train.epochs = kv::typed(e, &mut problems).unwrap_or(train.epochs),
                "seed" => train.seed = kv::typed(e, &mut problems).unwrap_or(train.seed),
                "folds" => folds = kv::typed(e, &mut problems).unwrap_or(folds),
                "workers" => workers = kv::typed(e, &mut problems).unwrap_or(workers),
                other => problems.push(format!("line {}: unknown key {other:?}", e.line)),
            }
        }

        if dataset.is_none() {
            problems.push("dataset: missing".into());
        }
        if format == DataFormat::Wide && qmatrix.is_none() {
            problems.push("qmatrix: required for the wide format".into());
        }
        if grid.is_empty() {
            problems.push("model: the grid is empty".into());
        }
        if folds < 2 {
            problems.push(format!("folds: need at least 2, got {folds}"));
        }
        if workers == 0 {
            problems.push("workers: must be positive".into());
        }
        if let Err(e) = train.validate() {
            problems.push(e.to_string());
        }
        if !problems.is_empty() {
            return Err(Error::Config(problems.join("; ")));
        }
        Ok(Self {
            dataset: dataset.expect("checked"),
            format,
            qmatrix,
            grid,
            train,
            folds,
            out,
            workers,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::from(e).context(path.display().to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base).map_err(|e| e.context(path.display().to_string()))
    }

    pub fn load_dataset(&self) -> Result<Dataset> {
        let open = |p: &Path| {
            File::open(p)
                .map(BufReader::new)
                .map_err(|e| Error::from(e).context(p.display().to_string()))
        };
        match self.format {
            DataFormat::Long => {
                parse_interactions(open(&self.dataset)?).map_err(|e| e.context(self.dataset.display().to_string()))
            }
            DataFormat::Wide => {
                let q = self.qmatrix.as_ref().expect("validated");
                parse_wide_matrix(open(&self.dataset)?, open(q)?).map_err(|e| {
                    e.context(format!("{} with Q-matrix {}", self.dataset.display(), q.display()))
                })
            }
        }
    }
}

/// `label; encoder; decoder`, or `encoder; decoder` with the label derived
/// from the spec.
pub fn parse_grid_entry(text: &str) -> Result<GridEntry> {
    let parts: Vec<&str> = text.split(';').map(str::trim).collect();
    let (label, enc, dec) = match parts.as_slice() {
        [label, enc, dec] => (Some(*label), *enc, *dec),
        [enc, dec] => (None, *enc, *dec),
        _ => return Err(Error::Config(format!("expected `label; encoder; decoder`, got {text:?}"))),
    };
    let spec = ModelSpec::new(enc.parse::<EncoderSpec>()?, dec.parse::<DecoderSpec>()?)?;
    Ok(GridEntry {
        label: label.map_or_else(|| spec.to_string(), str::to_owned),
        spec,
    })
}

#[derive(Debug, Clone)]
pub struct EntryReport {
    pub entry: GridEntry,
    pub report: MetricReport,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub out_dir: PathBuf,
    pub entries: Vec<EntryReport>,
}

impl ExperimentOutcome {
    pub fn failed(&self) -> bool {
        self.entries.iter().any(|e| e.report.failed())
    }
}

fn fmt_metric(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| format!("{v:.6}"))
}

fn slug(index: usize, label: &str) -> String {
    let clean: String = label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    format!("{:02}-{clean}", index + 1)
}

/// Writes `model,encoder,decoder,fold,acc,auc`: one row per fold, then a
/// `mean` row, for each grid entry in grid order.
pub fn write_results_csv<W: Write>(out: W, entries: &[EntryReport]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(["model", "encoder", "decoder", "fold", "acc", "auc"])?;
    for e in entries {
        let (enc, dec) = (e.entry.spec.encoder.to_string(), e.entry.spec.decoder.to_string());
        for f in &e.report.folds {
            w.write_record([&e.entry.label, &enc, &dec, &f.fold.to_string(), &fmt_metric(f.acc), &fmt_metric(f.auc)])?;
        }
        w.write_record([
            &e.entry.label,
            &enc,
            &dec,
            "mean",
            &fmt_metric(e.report.mean_acc),
            &fmt_metric(e.report.mean_auc),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Plain-text summary, one line per grid entry.
pub fn format_results_table(entries: &[EntryReport]) -> String {
    let rows: Vec<[String; 5]> = entries
        .iter()
        .map(|e| {
            let m = |v: Option<f64>| v.map_or_else(|| "-".to_owned(), |v| format!("{v:.3}"));
            [
                e.entry.label.clone(),
                e.entry.spec.encoder.to_string(),
                e.entry.spec.decoder.to_string(),
                m(e.report.mean_acc),
                m(e.report.mean_auc),
            ]
        })
        .collect();
    let header = ["Model", "Encoder", "Decoder", "ACC", "AUC"].map(str::to_owned);
    let mut widths = header.clone().map(|h| h.len());
    for r in &rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let mut text = String::new();
    for r in std::iter::once(&header).chain(&rows) {
        let line: Vec<String> = r.iter().zip(widths).map(|(c, w)| format!("{c:<w$}")).collect();
        let _ = writeln!(text, "{}", line.join("  ").trim_end());
    }
    text
}

/// Runs every grid entry and writes `results.csv`, `results.txt`, one
/// checkpoint per fold under `checkpoints/` and one prediction log per entry
/// under `predictions/`. Grid entries share a pool of `workers` threads.
pub fn run_experiment(config: &ExperimentConfig, out_dir: &Path) -> Result<ExperimentOutcome> {
    let dataset = config.load_dataset()?;
    log::info!(
        "{} students, {} items, {} skills, {} interactions",
        dataset.num_students(),
        dataset.num_items(),
        dataset.num_skills(),
        dataset.num_interactions()
    );
    let ck_dir = out_dir.join("checkpoints");
    let pred_dir = out_dir.join("predictions");
    fs::create_dir_all(&ck_dir)?;
    fs::create_dir_all(&pred_dir)?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {} workers: {e}", config.workers)))?;

    let entries: Vec<Result<EntryReport>> = pool.install(|| {
        config
            .grid
            .par_iter()
            .enumerate()
            .map(|(i, entry)| {
                log::info!("running {} ({})", entry.label, entry.spec);
                let cv = cross_validate(entry.spec, &dataset, config.folds, &config.train)?;
                let name = slug(i, &entry.label);
                for run in &cv.runs {
                    if let Some(model) = &run.model {
                        let path = ck_dir.join(format!("{name}-fold{}.json", run.metrics.fold));
                        Checkpoint::new(model, &config.train, &dataset).save(&path)?;
                    }
                }
                let logs: Vec<(usize, &_)> = cv.runs.iter().map(|r| (r.metrics.fold, &r.predictions)).collect();
                let file = File::create(pred_dir.join(format!("{name}.csv")))?;
                write_predictions(BufWriter::new(file), &dataset, &logs)?;
                Ok(EntryReport {
                    entry: entry.clone(),
                    report: cv.report,
                })
            })
            .collect()
    });
    let entries = entries.into_iter().collect::<Result<Vec<_>>>()?;

    write_results_csv(BufWriter::new(File::create(out_dir.join("results.csv"))?), &entries)?;
    fs::write(out_dir.join("results.txt"), format_results_table(&entries))?;
    Ok(ExperimentOutcome {
        out_dir: out_dir.to_owned(),
        entries,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupMetrics {
    pub fold: String,
    pub rows: usize,
    pub acc: Option<f64>,
    pub auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionMetrics {
    pub folds: Vec<GroupMetrics>,
    pub mean_acc: Option<f64>,
    pub mean_auc: Option<f64>,
}

/// Recomputes ACC and AUC from a prediction CSV. Rows are grouped by the
/// `fold` column when present and the group metrics averaged.
pub fn metrics_from_predictions(text: &[u8]) -> Result<PredictionMetrics> {
    let log = read_predictions(text)?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text);
    let fold_col = rdr.headers()?.iter().position(|h| h == "fold");
    let folds: Vec<String> = match fold_col {
        Some(c) => rdr.records().map(|r| Ok(r?[c].to_owned())).collect::<Result<_>>()?,
        None => vec![String::new(); log.len()],
    };

    let mut order: Vec<String> = Vec::new();
    for f in &folds {
        if !order.contains(f) {
            order.push(f.clone());
        }
    }
    let groups: Vec<GroupMetrics> = order
        .into_iter()
        .map(|fold| {
            let (labels, scores): (Vec<bool>, Vec<f64>) = log
                .rows
                .iter()
                .zip(&folds)
                .filter(|(_, f)| **f == fold)
                .map(|(r, _)| (r.label, r.prediction))
                .unzip();
            GroupMetrics {
                fold,
                rows: labels.len(),
                acc: accuracy_of(&labels, &scores).ok(),
                auc: auc_of(&labels, &scores).ok(),
            }
        })
        .collect();
    let mean = |f: fn(&GroupMetrics) -> Option<f64>| {
        let v: Vec<f64> = groups.iter().filter_map(f).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    Ok(PredictionMetrics {
        mean_acc: mean(|g| g.acc),
        mean_auc: mean(|g| g.auc),
        folds: groups,
    })
}
