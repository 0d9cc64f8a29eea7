use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use stemil::checkpoint::{load_checkpoint, save_checkpoint};
use stemil::data::{load_mil_csv, synth_generate, write_mil_csv, SynthConfig};
use stemil::grad::{fd_check_with_fault, random_fixture, Fault};
use stemil::model::predict_label;
use stemil::{cross_validate, Error, TrainConfig, Trainer};

/// Relative error bound for `gradcheck`.
const GRADCHECK_TOL: f64 = 1e-4;
const GRADCHECK_STEP: f64 = 1e-6;

#[derive(Parser)]
#[command(
    name = "stemil",
    version,
    about = "Soft tree ensembles for multiple instance learning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on a whole dataset and write a checkpoint.
    Fit {
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// k-fold cross-validation; writes a JSON metrics report.
    Cv {
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        report: PathBuf,
    },
    /// Compare analytic gradients with central differences on a random model.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Deliberately corrupt the backward pass (self-test of the checker).
        #[arg(long, value_enum)]
        inject_fault: Option<FaultArg>,
    },
    /// Write a synthetic planted-box dataset.
    Synth {
        #[arg(long)]
        bags: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        features: usize,
        #[arg(long, default_value_t = 3)]
        min_size: usize,
        #[arg(long, default_value_t = 8)]
        max_size: usize,
        #[arg(long, default_value_t = 0.5)]
        positive_fraction: f64,
    },
    /// Score every bag of a dataset with a checkpoint; CSV to stdout.
    Predict { checkpoint: PathBuf, data: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum FaultArg {
    FlipSigmoid,
}

fn read_config(path: Option<&PathBuf>) -> stemil::Result<TrainConfig> {
    match path {
        Some(p) => TrainConfig::from_json(&std::fs::read_to_string(p)?),
        None => Ok(TrainConfig::default()),
    }
}

fn run(cli: Cli) -> stemil::Result<ExitCode> {
    match cli.command {
        Command::Fit { data, config, out } => {
            let dataset = load_mil_csv(&data)?;
            let config = read_config(config.as_ref())?;
            let mut trainer = Trainer::new(&dataset, &config)?;
            trainer.run_to_completion()?;
            save_checkpoint(&trainer, &out)?;
            if let Some(loss) = trainer.loss_history.last() {
                eprintln!("final training loss {loss:.6}");
            }
        }
        Command::Cv { data, config, report } => {
            let dataset = load_mil_csv(&data)?;
            let config = read_config(config.as_ref())?;
            let result = cross_validate(&dataset, &config)?;
            for w in &result.warnings {
                eprintln!("warning: {w}");
            }
            let text = serde_json::to_string_pretty(&result.metrics_json()).expect("metrics serialize");
            std::fs::write(&report, text + "\n")?;
            println!(
                "accuracy {:.4} +- {:.4} over {} folds ({:.1}s)",
                result.mean,
                result.std,
                result.folds.len(),
                result.runtime_seconds
            );
        }
        Command::Gradcheck { seed, inject_fault } => {
            let (model, bags) = random_fixture(seed);
            let refs: Vec<_> = bags.iter().collect();
            let fault = match inject_fault {
                Some(FaultArg::FlipSigmoid) => Fault::FlipSigmoidJacobian,
                None => Fault::None,
            };
            let report = fd_check_with_fault(&model, &refs, GRADCHECK_STEP, fault)?;
            print!("{report}");
            if !report.passes(GRADCHECK_TOL) {
                eprintln!(
                    "gradient check failed: max relative error {:.3e} > {GRADCHECK_TOL:e}",
                    report.max_rel_error()
                );
                return Ok(ExitCode::FAILURE);
            }
            println!("ok: max relative error {:.3e}", report.max_rel_error());
        }
        Command::Synth {
            bags,
            out,
            seed,
            features,
            min_size,
            max_size,
            positive_fraction,
        } => {
            let data = synth_generate(&SynthConfig {
                n_bags: bags,
                min_bag_size: min_size,
                max_bag_size: max_size,
                feature_count: features,
                positive_fraction,
                seed,
            })?;
            write_mil_csv(&data.dataset, BufWriter::new(File::create(&out)?))?;
        }
        Command::Predict { checkpoint, data } => {
            let model = load_checkpoint(&checkpoint)?;
            let dataset = load_mil_csv(&data)?;
            if dataset.feature_count != model.model.feature_count {
                return Err(Error::Dimension {
                    expected: model.model.feature_count,
                    actual: dataset.feature_count,
                });
            }
            let mut out = BufWriter::new(io::stdout().lock());
            writeln!(out, "bag_id,probability,label_pred")?;
            for bag in &dataset.bags {
                let pred = model.predict_bag(bag);
                writeln!(out, "{},{},{}", bag.id, pred.probability, predict_label(&pred, 0.5))?;
            }
            out.flush()?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
