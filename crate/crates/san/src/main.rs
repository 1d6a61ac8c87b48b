use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use san::activation::ALL_TAGS;
use san::data;
use san::gradcheck::gradcheck_activation;
use san::harness::{self, TableFormat, TrainConfig};
use san::metrics::FlithosReport;
use san::model::SanModel;
use san::{Result, SanError};

#[derive(Parser)]
#[command(name = "san", version, about = "Sparsely activated network trainer and evaluator")]
struct Cli {
    /// Directory results are written to.
    #[arg(long, global = true, env = "SAN_OUTPUT_DIR", default_value = "san-out")]
    output_dir: PathBuf,
    /// Parallel sweep workers; 1 keeps runs bit-deterministic.
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model on a 12000-sample signal and checkpoint the selected epoch.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Signal CSV, one value per line.
        #[arg(long)]
        signal: PathBuf,
    },
    /// Train every (activation, kernel size) cell and write the results table.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        signal: PathBuf,
    },
    /// Accuracy delta of a linear classifier on reconstructions vs raw images.
    EvalClassifier {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        train_images: PathBuf,
        #[arg(long)]
        train_labels: PathBuf,
        #[arg(long)]
        test_images: PathBuf,
        #[arg(long)]
        test_labels: PathBuf,
        /// Cap on training images, 0 = all.
        #[arg(long, default_value_t = 0)]
        limit: usize,
    },
    /// Run a checkpointed model over a signal and write the reconstruction.
    Reconstruct {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        signal: PathBuf,
    },
    /// Write each kernel of a checkpoint as a CSV column for plotting.
    ExportKernels {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Verify analytic gradients against finite differences for all activation kinds.
    Gradcheck {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        instances: usize,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {}", err);
            ExitCode::from(1)
        }
    }
}

fn load_config(path: &Path) -> std::result::Result<TrainConfig, ExitCode> {
    let text = match std::fs::read_to_string(path) {
        Ok(text) => text,
        Err(err) => {
            eprintln!("error: cannot read config {}: {}", path.display(), err);
            return Err(ExitCode::from(2));
        }
    };
    match TrainConfig::parse(&text) {
        Ok(config) => Ok(config),
        Err(err) => {
            eprintln!("error: bad config {}: {}", path.display(), err);
            Err(ExitCode::from(2))
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    std::fs::create_dir_all(&cli.output_dir)?;
    match cli.command {
        Command::Train { config, signal } => {
            let mut config = match load_config(&config) {
                Ok(c) => c,
                Err(code) => return Ok(code),
            };
            config.workers = cli.workers;
            let raw = data::load_signal_csv(&signal)?;
            let split = data::physionet_protocol_split(&raw, &signal.display().to_string())?;
            let tag = config.activations[0].clone();
            let extent = config.kernel_extents[0];
            let outcome = harness::train_san(&config, &split, &tag, extent)?;
            let ckpt = cli.output_dir.join(format!("{}_{}.ckpt", tag, extent));
            outcome.selected.save_checkpoint(&ckpt)?;
            write_phibar_curve(&cli.output_dir, &tag, extent, &outcome.validation_phibar)?;
            write_reports(
                &cli.output_dir.join(format!("{}_{}_test_reports.csv", tag, extent)),
                &harness::evaluate(&outcome.selected, &split.test)?,
            )?;
            println!(
                "selected epoch {} validation phibar {:.4} -> {}",
                outcome.selected_epoch + 1,
                outcome.validation_phibar[outcome.selected_epoch],
                ckpt.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Sweep { config, signal } => {
            let mut config = match load_config(&config) {
                Ok(c) => c,
                Err(code) => return Ok(code),
            };
            config.workers = cli.workers;
            let raw = data::load_signal_csv(&signal)?;
            let split = data::physionet_protocol_split(&raw, &signal.display().to_string())?;
            let records = harness::sweep(&config, &split)?;
            let table = harness::emit_table(&records, TableFormat::Csv)?;
            let table_path = cli.output_dir.join("sweep.csv");
            std::fs::write(&table_path, &table)?;
            let mut per_example = format!("activation,m,{}\n", FlithosReport::CSV_HEADER);
            for record in &records {
                let outcome =
                    harness::train_san(&config, &split, &record.activation, record.kernel_extent)?;
                for report in harness::evaluate(&outcome.selected, &split.test)? {
                    per_example.push_str(&format!(
                        "{},{},{}\n",
                        record.activation,
                        record.kernel_extent,
                        report.to_csv_row()
                    ));
                }
            }
            std::fs::write(cli.output_dir.join("per_example_reports.csv"), per_example)?;
            print!("{}", table);
            Ok(ExitCode::SUCCESS)
        }
        Command::EvalClassifier {
            config,
            checkpoint,
            train_images,
            train_labels,
            test_images,
            test_labels,
            limit,
        } => {
            let config = match load_config(&config) {
                Ok(c) => c,
                Err(code) => return Ok(code),
            };
            let model = SanModel::load_checkpoint(&checkpoint)?;
            let mut train = data::load_idx_images(&train_images, &train_labels)?;
            if limit > 0 {
                train.truncate(limit);
            }
            let test = data::load_idx_images(&test_images, &test_labels)?;
            let split = data::DatasetSplit {
                train: train.iter().map(|(x, _)| x.clone()).collect(),
                validation: Vec::new(),
                test: test.iter().map(|(x, _)| x.clone()).collect(),
                train_labels: Some(train.iter().map(|&(_, y)| y).collect()),
                validation_labels: None,
                test_labels: Some(test.iter().map(|&(_, y)| y).collect()),
                source: train_images.display().to_string(),
                preprocessing: "idx bytes / 255".into(),
            };
            let delta = harness::accuracy_delta(
                &split,
                &model,
                10,
                config.epochs,
                config.batch_size,
                config.seed,
            )?;
            std::fs::write(
                cli.output_dir.join("accuracy_delta.csv"),
                format!("accuracy_delta\n{:.4}\n", delta),
            )?;
            println!("accuracy delta: {:+.2} points", delta);
            Ok(ExitCode::SUCCESS)
        }
        Command::Reconstruct { checkpoint, signal } => {
            let model = SanModel::load_checkpoint(&checkpoint)?;
            let x = data::load_signal_csv(&signal)?;
            let trace = san::model::forward(&model, &x)?;
            let out = cli.output_dir.join("reconstruction.csv");
            std::fs::write(&out, data::signal_to_csv(&trace.reconstruction))?;
            println!("wrote {}", out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::ExportKernels { checkpoint } => {
            let model = SanModel::load_checkpoint(&checkpoint)?;
            for (i, kernel) in model.kernels.iter().enumerate() {
                let out = cli.output_dir.join(format!("kernel_{}.csv", i));
                std::fs::write(&out, data::signal_to_csv(kernel))?;
                println!("wrote {}", out.display());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Gradcheck { seed, instances } => {
            let mut all_pass = true;
            let mut report_text = String::from("activation,rank,max_rel_error,stable_fraction\n");
            for tag in ALL_TAGS {
                for rank in [1usize, 2] {
                    if tag == "extrema" && rank == 2 {
                        continue;
                    }
                    let report = gradcheck_activation(tag, rank, seed, instances)?;
                    let pass = report.passed(1e-5, 0.95);
                    all_pass &= pass;
                    println!(
                        "{} ({}D): max rel error {:.3e}, stable {:.1}% -> {}",
                        tag,
                        rank,
                        report.max_rel_error,
                        100.0 * report.stable_fraction(),
                        if pass { "ok" } else { "FAIL" }
                    );
                    report_text.push_str(&format!(
                        "{},{},{:.6e},{:.6}\n",
                        tag,
                        rank,
                        report.max_rel_error,
                        report.stable_fraction()
                    ));
                }
            }
            std::fs::write(cli.output_dir.join("gradcheck.csv"), report_text)?;
            if all_pass {
                Ok(ExitCode::SUCCESS)
            } else {
                Err(SanError::InvalidArgument(
                    "gradient check failed; see report".into(),
                ))
            }
        }
    }
}

fn write_phibar_curve(dir: &Path, tag: &str, extent: usize, phibar: &[f64]) -> Result<()> {
    let mut out = String::from("epoch,validation_phibar\n");
    for (i, v) in phibar.iter().enumerate() {
        out.push_str(&format!("{},{:.17e}\n", i + 1, v));
    }
    std::fs::write(dir.join(format!("{}_{}_validation_phibar.csv", tag, extent)), out)?;
    Ok(())
}

fn write_reports(path: &Path, reports: &[FlithosReport]) -> Result<()> {
    let mut out = format!("{}\n", FlithosReport::CSV_HEADER);
    for r in reports {
        out.push_str(&format!("{}\n", r.to_csv_row()));
    }
    std::fs::write(path, out)?;
    Ok(())
}
