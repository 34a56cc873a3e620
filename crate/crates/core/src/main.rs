//! Command-line driver: simulate the conventional link, run the three-phase
//! training schedule, evaluate trained checkpoints, benchmark the Co-GRU
//! against the sliding-window reference, and dump learned constellations.

use clap::{Parser, Subcommand};
use fiberlab::config::ExperimentConfig;
use fiberlab::nn::{load_checkpoint, save_checkpoint};
use fiberlab::training::{
    bench_csv, benchmark_compute, eval_csv, evaluate, history_csv, phase1_run, phase2_run,
    phase3_run, pretrain_encoder, train_all, Phase, TrainState,
};
use fiberlab::{autoencoder::encoder_constellation, Result};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "fiberlab", version, about = "learned coherent optical transmission laboratory")]
struct Cli {
    /// TOML experiment configuration (overrides the profile defaults).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Built-in parameter profile used when no --config is given.
    #[arg(long, global = true, default_value = "desk", value_parser = ["desk", "paper"])]
    profile: String,
    /// Override the base seed from the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (resolved config, checkpoints, CSV reports).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Transmit conventional Gray square-QAM through the fiber link over the
    /// configured power/distance sweep and report BER/Q^2/GMI.
    Simulate,
    /// Run the training schedule (all three phases, or one with --phase).
    Train {
        /// Run only this phase (I, II or III); later phases resume from the
        /// previous phase's checkpoint in the output directory.
        #[arg(long)]
        phase: Option<String>,
    },
    /// Evaluate a trained checkpoint against the conventional baseline.
    Evaluate {
        /// Checkpoint to evaluate (default: <out>/final.ckpt).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Time Co-GRU forward+backward against the sliding-window Bi-GRU.
    Benchmark,
    /// Write the learned constellation of a checkpoint as CSV.
    DumpConstellation {
        /// Checkpoint to read (default: <out>/final.ckpt).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            ExperimentConfig::from_toml_str(&text)?
        }
        None => match cli.profile.as_str() {
            "paper" => ExperimentConfig::paper(),
            _ => ExperimentConfig::desk(),
        },
    };
    if let Some(seed) = cli.seed {
        cfg.train.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.io.out_dir = out.display().to_string();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn prepare_out(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let out = PathBuf::from(&cfg.io.out_dir);
    std::fs::create_dir_all(&out)?;
    std::fs::write(out.join("resolved-config.toml"), cfg.to_toml_string()?)?;
    Ok(out)
}

fn load_state(cfg: &ExperimentConfig, path: &Path) -> Result<TrainState> {
    let mut state = TrainState::init(cfg)?;
    state.restore(&load_checkpoint(path)?)?;
    Ok(state)
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    let out = prepare_out(&cfg)?;
    match &cli.cmd {
        Cmd::Simulate => {
            let rows = evaluate(None, &cfg)?;
            let path = out.join("simulate.csv");
            std::fs::write(&path, eval_csv(&rows))?;
            println!("wrote {}", path.display());
            for r in &rows {
                println!(
                    "{} {:+.1} dBm {:.0} km: BER {:.4e} GMI {:.4} bits/sym",
                    r.system, r.p_dbm, r.distance_km, r.report.ber, r.report.gmi_bits_per_sym
                );
            }
        }
        Cmd::Train { phase } => {
            let (state, label) = match phase.as_deref() {
                None => {
                    let mut state = TrainState::init(&cfg)?;
                    let best = train_all(&mut state, &cfg)?;
                    println!("selected phase-III period {best}");
                    (state, "final")
                }
                Some(p) => match p.parse::<Phase>()? {
                    Phase::I => {
                        let mut state = TrainState::init(&cfg)?;
                        pretrain_encoder(&mut state.encoder, 3000, 1e-2)?;
                        phase1_run(&mut state, &cfg, cfg.train.phase1_epochs)?;
                        (state, "phase1")
                    }
                    Phase::II => {
                        let mut state = load_state(&cfg, &out.join("phase1.ckpt"))?;
                        phase2_run(&mut state, &cfg, cfg.train.phase2_epochs)?;
                        (state, "phase2")
                    }
                    Phase::III => {
                        let mut state = load_state(&cfg, &out.join("phase2.ckpt"))?;
                        let best = phase3_run(&mut state, &cfg, cfg.train.phase3_periods)?;
                        println!("selected phase-III period {best}");
                        (state, "final")
                    }
                },
            };
            save_checkpoint(&state.to_checkpoint(), &out.join(format!("{label}.ckpt")))?;
            std::fs::write(out.join(format!("history-{label}.csv")), history_csv(&state.history))?;
            if phase.is_none() {
                // a full run also leaves the per-phase entry points in place
                save_checkpoint(&state.to_checkpoint(), &out.join("final.ckpt"))?;
            }
            let last = state.history.last();
            if let Some(r) = last {
                println!(
                    "finished at epoch {} (phase {}): loss {:.4e} BER {:.4e}",
                    r.epoch, r.phase, r.loss, r.ber
                );
            }
        }
        Cmd::Evaluate { checkpoint } => {
            let path = checkpoint.clone().unwrap_or_else(|| out.join("final.ckpt"));
            let state = load_state(&cfg, &path)?;
            let rows = evaluate(Some(&state), &cfg)?;
            let csv_path = out.join("evaluation.csv");
            std::fs::write(&csv_path, eval_csv(&rows))?;
            println!("wrote {}", csv_path.display());
            for r in &rows {
                println!(
                    "{} {:+.1} dBm {:.0} km: BER {:.4e} Q^2 {} GMI {:.4} bits/sym",
                    r.system,
                    r.p_dbm,
                    r.distance_km,
                    r.report.ber,
                    r.report
                        .q2_db
                        .map(|q| format!("{q:.2} dB"))
                        .unwrap_or_else(|| "n/a".into()),
                    r.report.gmi_bits_per_sym
                );
            }
        }
        Cmd::Benchmark => {
            let rows = benchmark_compute(1 << 14, 32, &[11, 21, 41], 3, 5)?;
            let path = out.join("benchmark.csv");
            std::fs::write(&path, bench_csv(&rows))?;
            println!("wrote {}", path.display());
            for r in &rows {
                println!("{:>8} window {:>2}: {:.2} ms", r.model, r.window, r.median_ms);
            }
        }
        Cmd::DumpConstellation { checkpoint } => {
            let path = checkpoint.clone().unwrap_or_else(|| out.join("final.ckpt"));
            let state = load_state(&cfg, &path)?;
            let cons = encoder_constellation(&state.encoder)?;
            let csv_path = out.join("constellation.csv");
            std::fs::write(&csv_path, cons.dump())?;
            println!("wrote {}", csv_path.display());
        }
    }
    Ok(())
}

fn main() {
    env_logger::init();
    let cli = Cli::parse();
    if let Err(err) = run(&cli) {
        eprintln!("error: {err}");
        std::process::exit(err.exit_code());
    }
}
