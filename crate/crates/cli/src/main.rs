use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use favc_core::report::{
    run_baseline, run_clean_eval, run_report, run_robustness, run_sweep, run_synth, run_train, CleanReport,
    ExperimentConfig,
};
use favc_core::{FavcError, Result};

#[derive(Parser)]
#[command(name = "favc", version, about = "Virtual EEG channel generation lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON experiment config; omitted fields take their defaults. Without a
    /// file the built-in toy experiment is used.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Overrides the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Overrides the checkpoint path.
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Write the dataset and its subject split.
    Synth,
    /// Train a model on the training split.
    Train,
    /// Model and baselines on the clean test split.
    Eval,
    /// Model and baselines under source perturbations.
    Robust,
    /// Baselines alone on the clean test split.
    Baseline,
    /// Train and evaluate one model per spectral loss weight.
    Sweep,
    /// Clean evaluation plus figures.
    Report,
}

fn load(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| FavcError::InvalidArgument(format!("cannot read config {}: {e}", path.display())))?;
            ExperimentConfig::from_json(&text)?
        }
        None => ExperimentConfig::toy(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    if let Some(ck) = &cli.checkpoint {
        cfg.checkpoint = Some(ck.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_clean(r: &CleanReport) {
    let methods = r.pooled.column("method").unwrap_or_default();
    let lsd = r.pooled.column("lsd_mean").unwrap_or_default();
    let kl = r.pooled.column("psd_kl_mean").unwrap_or_default();
    let nmae = r.pooled.column("nmae_mean").unwrap_or_default();
    println!("{:<8} {:>18} {:>18} {:>18}", "method", "nmae", "lsd", "psd_kl");
    for i in 0..methods.len() {
        println!("{:<8} {:>18} {:>18} {:>18}", methods[i], nmae[i], lsd[i], kl[i]);
    }
}

fn run(command: Command, cfg: &ExperimentConfig) -> Result<()> {
    let out = cfg.out.display();
    match command {
        Command::Synth => {
            let m = run_synth(cfg)?;
            println!("wrote {} segments from {} subjects to {out}/data", m.segments.len(), m.subjects.len());
        }
        Command::Train => {
            let o = run_train(cfg)?;
            let best = &o.log[o.best_epoch];
            println!(
                "trained {} steps, best epoch {} (val loss {:.6}){}; checkpoint {out}/model.ckpt",
                o.steps,
                o.best_epoch,
                best.val_total,
                if o.stopped_early { ", stopped early" } else { "" }
            );
        }
        Command::Eval => print_clean(&run_clean_eval(cfg)?),
        Command::Baseline => print_clean(&run_baseline(cfg)?),
        Command::Robust => {
            let r = run_robustness(cfg)?;
            for t in &r.tests {
                let p = t.test.as_ref().map_or("NA".to_string(), |w| format!("{:.6}", w.p));
                println!(
                    "{:<8} {:<7} vs {:<7} win {:.3} p {p}",
                    t.condition.to_string(),
                    t.metric,
                    t.comparator,
                    t.win_rate
                );
            }
            println!("wrote {out}/robustness.csv");
        }
        Command::Sweep => {
            let r = run_sweep(cfg)?;
            for row in &r.rows {
                println!(
                    "w_psd {:.3}: nmae {:.4} lsd {:.4}",
                    row.w_psd,
                    row.mean("nmae").unwrap_or(f64::NAN),
                    row.mean("lsd").unwrap_or(f64::NAN)
                );
            }
            println!("wrote {out}/sweep.csv");
        }
        Command::Report => {
            let (r, _, _) = run_report(cfg)?;
            print_clean(&r);
            println!("wrote figures to {out}");
        }
    }
    Ok(())
}

fn exit_code(e: &FavcError) -> u8 {
    match e {
        FavcError::Numerical(_) | FavcError::NonFinite(_) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match load(&cli).and_then(|cfg| run(cli.command, &cfg)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
