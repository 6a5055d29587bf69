//! `noma`: generate, label, train, evaluate and benchmark beamformers.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use noma_core::beamformer::RepairConfig;
use noma_core::ber::ModulationSpec;
use noma_core::channel::Geometry;
use noma_core::dataset::{generate_dataset, label_dataset, read_jsonl, write_jsonl};
use noma_core::harness::{
    emit_ecdf, read_eval_csv, run_eval, run_timing, run_validation, write_csv, EvalConfig,
    Technique,
};
use noma_core::learner::{mlp_init, mlp_train, MlpArch, MlpModel, TrainConfig};
use noma_core::linksim::GrayMap;

const EXIT_USAGE: u8 = 1;
const EXIT_VALIDATION: u8 = 2;

#[derive(Parser)]
#[command(name = "noma", version, about = "Two-user MISO-NOMA beamforming toolkit")]
struct Cli {
    /// JSON file with default settings for every subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate unlabeled scenarios as JSONL.
    Gen {
        /// Comma-separated antenna counts.
        #[arg(long, value_delimiter = ',', default_value = "2,3,4,5")]
        nt: Vec<usize>,
        #[arg(long, default_value_t = 100)]
        count: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Label scenarios with the multi-start optimizer (skips labeled records).
    Label {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        starts: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Train the network on labeled records.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate techniques on scenarios and write one CSV row per pair.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: Option<PathBuf>,
        /// Comma-separated technique tags.
        #[arg(long, value_delimiter = ',', default_value = "NN,CO,ZFBF,MRT,MRT1_ZFBF2,ZFBF1_MRT2")]
        techniques: Vec<String>,
        #[arg(long)]
        symbols: Option<u64>,
        #[arg(long)]
        starts: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Turn evaluation rows into empirical CDFs.
    Ecdf {
        /// Evaluation CSV.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Time NN inference against the full CO solve.
    Timing {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        starts: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare closed-form BERs with simulation; exits with 2 on mismatch.
    Validate {
        #[arg(long, default_value_t = 50)]
        count: usize,
        #[arg(long, default_value_t = 1_000_000)]
        symbols: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the Gray bit table of an M-QAM constellation.
    Graymap {
        #[arg(long, default_value_t = 4)]
        order: u32,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct AppConfig {
    geometry: Geometry,
    eval: EvalConfig,
    train: TrainConfig,
    arch: MlpArch,
    /// Fit repair defaults to the training labels' mean amplitudes.
    repair_from_labels: Option<bool>,
}

type CliResult<T> = Result<T, Box<dyn std::error::Error>>;

fn load_config(path: Option<&Path>) -> CliResult<AppConfig> {
    match path {
        Some(p) => Ok(serde_json::from_str(&std::fs::read_to_string(p)?)?),
        None => Ok(AppConfig::default()),
    }
}

/// Loads a model and, when present, the repair defaults saved beside it.
fn load_model(path: &Path, eval: &mut EvalConfig) -> CliResult<MlpModel> {
    let model = MlpModel::load(path)?;
    let sidecar = sidecar_path(path);
    if sidecar.exists() {
        let s: RepairSidecar = serde_json::from_str(&std::fs::read_to_string(sidecar)?)?;
        eval.repair = s.repair;
    }
    Ok(model)
}

/// Model file plus the repair defaults fitted at training time.
#[derive(Serialize, Deserialize)]
struct RepairSidecar {
    repair: RepairConfig,
}

fn sidecar_path(model: &Path) -> PathBuf {
    model.with_extension("repair.json")
}

fn run(cli: Cli) -> CliResult<u8> {
    let cfg = load_config(cli.config.as_deref())?;
    let mods = cfg.eval.modulation()?;
    let n0 = cfg.eval.budget.effective_noise_watt();
    match cli.command {
        Command::Gen { nt, count, common } => {
            let records = generate_dataset(&nt, count, &cfg.geometry, common.seed.unwrap_or(0))?;
            write_jsonl(&common.out, &records)?;
            eprintln!("wrote {} records", records.len());
        }
        Command::Label { data, starts, common } => {
            let mut records = read_jsonl(&data)?;
            let mut co = cfg.eval.co.clone();
            co.n_starts = starts.unwrap_or(co.n_starts);
            co.seed = common.seed.unwrap_or(co.seed);
            let report = label_dataset(&mut records, mods, n0, &co)?;
            write_jsonl(&common.out, &records)?;
            eprintln!(
                "labeled {}, skipped {}, failed {}",
                report.labeled,
                report.skipped,
                report.failures.len()
            );
            for (i, e) in &report.failures {
                eprintln!("record {i}: {e}");
            }
        }
        Command::Train { data, epochs, common } => {
            let records = read_jsonl(&data)?;
            let samples: Vec<_> = records.iter().filter_map(|r| r.sample()).collect();
            let mut train = cfg.train.clone();
            train.max_epochs = epochs.unwrap_or(train.max_epochs);
            train.seed = common.seed.unwrap_or(train.seed);
            let mut model = mlp_init(&cfg.arch, train.seed)?;
            let report = mlp_train(&mut model, &samples, &train)?;
            model.save(&common.out)?;
            let repair = if cfg.repair_from_labels.unwrap_or(true) {
                RepairConfig::from_labels(records.iter().filter_map(|r| r.label.as_ref()))?
            } else {
                cfg.eval.repair
            };
            std::fs::write(
                sidecar_path(&common.out),
                serde_json::to_string_pretty(&RepairSidecar { repair })?,
            )?;
            eprintln!(
                "trained on {} samples: best loss {:.6} at epoch {} of {}",
                samples.len(),
                report.best_loss,
                report.best_epoch,
                report.epochs_run
            );
        }
        Command::Eval {
            data,
            model,
            techniques,
            symbols,
            starts,
            common,
        } => {
            let records = read_jsonl(&data)?;
            let techniques: Vec<Technique> =
                techniques.iter().map(|t| t.parse()).collect::<Result<_, _>>()?;
            let mut eval = cfg.eval.clone();
            eval.mc_symbols = symbols.unwrap_or(eval.mc_symbols);
            eval.co.n_starts = starts.unwrap_or(eval.co.n_starts);
            eval.seed = common.seed.unwrap_or(eval.seed);
            let model = match model {
                Some(p) => Some(load_model(&p, &mut eval)?),
                None => None,
            };
            let rows = run_eval(&records, model.as_ref(), &techniques, &eval)?;
            write_csv(&common.out, &rows)?;
            eprintln!("wrote {} rows", rows.len());
        }
        Command::Ecdf { data, out } => {
            let rows = read_eval_csv(&data)?;
            write_csv(&out, &emit_ecdf(&rows)?)?;
        }
        Command::Timing {
            data,
            model,
            starts,
            out,
        } => {
            let records = read_jsonl(&data)?;
            let mut eval = cfg.eval.clone();
            eval.co.n_starts = starts.unwrap_or(eval.co.n_starts);
            let m = load_model(&model, &mut eval)?;
            let rows = run_timing(&records, &m, &eval)?;
            write_csv(&out, &rows)?;
        }
        Command::Validate {
            count,
            symbols,
            seed,
            out,
        } => {
            let report = run_validation(count, symbols, ModulationSpec::qpsk(), &cfg.eval.budget, 5.0, seed)?;
            if let Some(out) = out {
                write_csv(&out, &report.cases)?;
            }
            let failed = report.cases.iter().filter(|c| !c.passed).count();
            println!(
                "{} of {} cases within 5 standard errors (max {:.2})",
                report.cases.len() - failed,
                report.cases.len(),
                report.max_z
            );
            if failed > 0 {
                return Ok(EXIT_VALIDATION);
            }
        }
        Command::Graymap { order, out } => {
            #[derive(Serialize)]
            struct Row {
                bits: String,
                re: f64,
                im: f64,
            }
            let map = GrayMap::new(order)?;
            let rows: Vec<Row> = map
                .table()
                .into_iter()
                .map(|(bits, p)| Row { bits, re: p.re, im: p.im })
                .collect();
            match out {
                Some(out) => write_csv(&out, &rows)?,
                None => {
                    println!("bits,re,im");
                    for r in rows {
                        println!("{},{},{}", r.bits, r.re, r.im);
                    }
                }
            }
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_USAGE)
        }
    }
}
