use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use ktrace::checkpoint::export_parameters;
use ktrace::counters::{assemble_features, compute_counters, FeatureLayout};
use ktrace::experiment::{format_results_table, metrics_from_predictions, run_experiment, ExperimentConfig};
use ktrace::model::Metadata;
use ktrace::parse_interactions;
use ktrace::synthetic::{generate_synthetic, SyntheticSpec};

#[derive(Parser)]
#[command(name = "ktrace", version, about = "Knowledge tracing experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cross-validate every model of a config's grid and write reports.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides `out` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads; overrides `workers` in the config.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Simulate a long-format dataset. True parameters go next to it as
    /// `<stem>.truth.csv`.
    Generate {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a checkpoint's decoder parameters as items.csv and skills.csv.
    Export {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recompute ACC and AUC from a prediction log.
    Metrics {
        #[arg(long)]
        predictions: PathBuf,
    },
    /// Write the sparse item|skill|wins|fails design matrix as row,col,value.
    Features {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(config: PathBuf, out: Option<PathBuf>, workers: Option<usize>) -> Result<bool> {
    let mut cfg = ExperimentConfig::load(&config)?;
    if let Some(w) = workers {
        if w == 0 {
            bail!("--workers must be positive");
        }
        cfg.workers = w;
    }
    let Some(out) = out.or_else(|| cfg.out.clone()) else {
        bail!("no output directory: pass --out or set `out` in the config");
    };
    let outcome = run_experiment(&cfg, &out)?;
    print!("{}", format_results_table(&outcome.entries));
    for e in &outcome.entries {
        for f in &e.report.folds {
            if let Some(err) = &f.error {
                eprintln!("{} fold {}: {err}", e.entry.label, f.fold);
            }
        }
    }
    Ok(!outcome.failed())
}

fn generate(spec: PathBuf, out: PathBuf) -> Result<()> {
    let text = fs::read_to_string(&spec).with_context(|| format!("reading {}", spec.display()))?;
    let spec = SyntheticSpec::parse(&text).with_context(|| format!("in {}", spec.display()))?;
    let (dataset, truth) = generate_synthetic(&spec)?;
    let file = File::create(&out).with_context(|| format!("creating {}", out.display()))?;
    dataset.write_long(BufWriter::new(file))?;
    let truth_path = out.with_extension("truth.csv");
    truth.write_csv(BufWriter::new(File::create(&truth_path)?), &dataset)?;
    println!(
        "wrote {} interactions to {} and parameters to {}",
        dataset.num_interactions(),
        out.display(),
        truth_path.display()
    );
    Ok(())
}

fn metrics(predictions: PathBuf) -> Result<()> {
    let bytes = fs::read(&predictions).with_context(|| format!("reading {}", predictions.display()))?;
    let m = metrics_from_predictions(&bytes).with_context(|| format!("in {}", predictions.display()))?;
    let show = |v: Option<f64>| v.map_or_else(|| "-".to_owned(), |v| format!("{v:.6}"));
    println!("fold,rows,acc,auc");
    for g in &m.folds {
        println!("{},{},{},{}", g.fold, g.rows, show(g.acc), show(g.auc));
    }
    println!("mean,,{},{}", show(m.mean_acc), show(m.mean_auc));
    Ok(())
}

fn features(data: PathBuf, out: PathBuf) -> Result<()> {
    let file = File::open(&data).with_context(|| format!("opening {}", data.display()))?;
    let ds = parse_interactions(BufReader::new(file)).with_context(|| format!("in {}", data.display()))?;
    let all = Metadata { item: true, skill: true, wins: true, fails: true };
    let layout = FeatureLayout::new(ds.num_items(), ds.num_skills());
    let mut w = BufWriter::new(File::create(&out)?);
    writeln!(w, "row,col,value")?;
    let mut row = 0usize;
    for seq in &ds.sequences {
        let counters = compute_counters(seq, &ds.qmatrix)?;
        for (t, step) in seq.steps.iter().enumerate() {
            for (col, value) in assemble_features(t, step.item, &ds.qmatrix, &counters, all)? {
                writeln!(w, "{row},{col},{value}")?;
            }
            row += 1;
        }
    }
    w.flush()?;
    println!("{row} rows, {} columns", layout.width());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, out, workers } => run(config, out, workers),
        Command::Generate { spec, out } => generate(spec, out).map(|()| true),
        Command::Export { checkpoint, out } => export_parameters(&checkpoint, &out)
            .map(|_| true)
            .with_context(|| format!("exporting {}", checkpoint.display())),
        Command::Metrics { predictions } => metrics(predictions).map(|()| true),
        Command::Features { data, out } => features(data, out).map(|()| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
