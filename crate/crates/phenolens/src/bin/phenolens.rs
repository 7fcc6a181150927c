//! Command-line surface for the pipeline: gen-data, train, embed, probe,
//! analyze, drift, and run. Errors print a single-line
//! `ERROR(<category>): <message>` diagnostic and exit with the category
//! code (config = 2, format/io = 3, numeric = 4).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use phenolens::analytics::{class_centers, drift_score};
use phenolens::config::{DataSection, RunConfig};
use phenolens::contrastive::train_ssl;
use phenolens::data::generate_dataset;
use phenolens::error::{Error, Result};
use phenolens::io;
use phenolens::pipeline;
use phenolens::probe::{evaluate, train_probe, ProbeConfig};

#[derive(Parser)]
#[command(name = "phenolens", version, about = "Contrastive phenotype screening toolkit")]
struct Cli {
    /// Seed for commands without a config file (gen-data, probe).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Suppress progress output.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset directory (samples.csv + PGM images).
    GenData {
        /// JSON file with the data section of a run config.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Self-supervised pretraining on a dataset directory.
    Train {
        /// Full run config (uses arch, ssl, and seed).
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Output encoder checkpoint path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Encode a dataset with a trained checkpoint (backbone only).
    Embed {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Output embedding CSV.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and evaluate a linear probe on embedding CSVs.
    Probe {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        val: PathBuf,
        #[arg(long)]
        test: PathBuf,
        /// Output probe checkpoint path.
        #[arg(long)]
        out: PathBuf,
        /// Output report JSON path.
        #[arg(long)]
        report: PathBuf,
    },
    /// Latent-space analysis of embeddings against train-derived centers.
    Analyze {
        #[arg(long)]
        embeddings: PathBuf,
        /// Labeled embedding CSV the class centers are computed from.
        #[arg(long)]
        centers_from: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// Optional CSV of 2-D PCA coordinates.
        #[arg(long)]
        pca: Option<PathBuf>,
        #[arg(long)]
        novel_threshold: Option<f64>,
    },
    /// Drift score of a window of embeddings against reference centers.
    Drift {
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        window: PathBuf,
    },
    /// Full pipeline: gen-data, train, embed, probe, analyze, one report.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory for all artifacts.
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("ERROR({}): {err}", err.category().as_str());
            ExitCode::from(err.category().exit_code() as u8)
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let quiet = cli.quiet;
    let mut progress = |line: &str| {
        if !quiet {
            eprintln!("[phenolens] {line}");
        }
    };
    match cli.command {
        Command::GenData { config, out } => {
            let text = std::fs::read_to_string(&config)?;
            let section: DataSection = serde_json::from_str(&text)
                .map_err(|e| Error::invalid_config("config", e.to_string()))?;
            section.validate()?;
            let seed = cli
                .seed
                .ok_or_else(|| Error::invalid_config("seed", "gen-data requires --seed"))?;
            let samples = generate_dataset(&section.synthetic(section.n_per_class), seed)?;
            io::write_dataset(&out, &samples)?;
            progress(&format!("wrote {} samples to {}", samples.len(), out.display()));
            Ok(())
        }
        Command::Train { config, data, out } => {
            let cfg = RunConfig::from_path(&config)?;
            let samples = io::read_dataset(&data)?;
            let side = samples[0].image.side();
            if side != cfg.data.image_size {
                return Err(Error::DimensionMismatch(format!(
                    "dataset images are {side}x{side} but config says {}",
                    cfg.data.image_size
                )));
            }
            let arch = cfg.arch.arch_for(side);
            let contrastive = pipeline::contrastive_config(&cfg, samples.len(), cfg.seed);
            let images: Vec<_> = samples.iter().map(|s| s.image.clone()).collect();
            progress(&format!(
                "training {} epochs on {} samples",
                contrastive.epochs,
                samples.len()
            ));
            let (params, log) = train_ssl(&arch, &contrastive, &images)?;
            io::save_encoder_checkpoint(
                &out,
                &arch,
                &contrastive.schedule,
                contrastive.schedule.total_steps,
                cfg.seed,
                &params,
            )?;
            let log_path = out.with_extension("trainlog.json");
            pipeline::write_train_log(&log_path, &log)?;
            progress(&format!(
                "checkpoint {} (train log {})",
                out.display(),
                log_path.display()
            ));
            Ok(())
        }
        Command::Embed { model, data, out } => {
            let (arch, params) = io::load_checkpoint(&model)?.into_encoder()?;
            let samples = io::read_dataset(&data)?;
            let set = pipeline::embed_dataset(&arch, &params, &samples)?;
            io::write_embeddings(&set, &out)?;
            progress(&format!(
                "embedded {} samples ({}-d) into {}",
                set.len(),
                set.dim(),
                out.display()
            ));
            Ok(())
        }
        Command::Probe {
            train,
            val,
            test,
            out,
            report,
        } => {
            let train_set = io::read_embeddings(&train)?;
            let val_set = io::read_embeddings(&val)?;
            let test_set = io::read_embeddings(&test)?;
            let cfg = ProbeConfig {
                seed: cli.seed.unwrap_or(42),
                ..ProbeConfig::default()
            };
            let (probe, val_accuracy) = train_probe(&train_set, &val_set, &cfg)?;
            io::save_probe_checkpoint(&out, &probe, cfg.seed)?;
            let metrics = evaluate(&probe, &test_set)?;
            #[derive(serde::Serialize)]
            struct ProbeReport {
                val_accuracy: f64,
                test: phenolens::probe::Metrics,
            }
            let body = serde_json::to_vec_pretty(&ProbeReport {
                val_accuracy,
                test: metrics.clone(),
            })
            .map_err(|e| Error::format(format!("report serialization: {e}")))?;
            io::atomic_write(&report, &body)?;
            progress(&format!(
                "val accuracy {val_accuracy:.4}, test accuracy {:.4}",
                metrics.accuracy
            ));
            Ok(())
        }
        Command::Analyze {
            embeddings,
            centers_from,
            report,
            pca,
            novel_threshold,
        } => {
            let set = io::read_embeddings(&embeddings)?;
            let reference = io::read_embeddings(&centers_from)?;
            let centers = class_centers(&reference)?;
            let threshold = novel_threshold.unwrap_or(0.7);
            let healthy = "Normal";
            let (analysis, coords) =
                pipeline::analyze_embeddings(&set, &centers, threshold, healthy, pca.is_some())?;
            if analysis.gradient.is_none() && !quiet {
                eprintln!(
                    "[phenolens] warning: missing labels or doses, gradient analysis skipped"
                );
            }
            let body = serde_json::to_vec_pretty(&analysis)
                .map_err(|e| Error::format(format!("report serialization: {e}")))?;
            io::atomic_write(&report, &body)?;
            if let (Some(pca_path), Some(coords)) = (pca, coords) {
                pipeline::write_pca_csv(&pca_path, &set, &coords)?;
            }
            progress(&format!("analysis report at {}", report.display()));
            Ok(())
        }
        Command::Drift { reference, window } => {
            let reference_set = io::read_embeddings(&reference)?;
            let window_set = io::read_embeddings(&window)?;
            let centers = class_centers(&reference_set)?;
            let score = drift_score(&window_set, &centers)?;
            #[derive(serde::Serialize)]
            struct DriftReport {
                drift_score: f64,
                window_size: usize,
            }
            let body = serde_json::to_string_pretty(&DriftReport {
                drift_score: score,
                window_size: window_set.len(),
            })
            .map_err(|e| Error::format(format!("report serialization: {e}")))?;
            println!("{body}");
            Ok(())
        }
        Command::Run { config, out } => {
            let cfg = RunConfig::from_path(&config)?;
            let output = pipeline::run_pipeline(&cfg, &out, &mut progress)?;
            if !quiet {
                println!("{}", output.report_path.display());
            }
            Ok(())
        }
    }
}
