//! Command-line entry points.
//!
//! Three subcommands cover the whole workflow:
//!
//! ```text
//! diana gen-tasks --config suite_config.json --seed 7 --out suite.json
//! diana train     --suite suite.json --config train_config.json \
//!                 --out-dir runs/diana --mode diana --seed 7
//! diana eval      --checkpoint runs/diana/checkpoint.json \
//!                 --suite suite.json --out eval_out
//! ```
//!
//! Exit codes: 0 success, 1 usage, 2 data/config error, 3 internal invariant
//! violation. The environment variable `DIANA_SEED` overrides `--seed` when
//! set. `--mode diana_wo_memory` implies a rehearsal mix of zero.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::checkpoint::{
    load_checkpoint, load_suite, save_checkpoint, save_suite, to_json_bytes, Checkpoint,
};
use crate::error::{Error, Result};
use crate::metrics::{write_metrics_csv, Summary};
use crate::tasks::{generate_suite, SuiteConfig, TaskSuite};
use crate::trainer::{evaluate_tasks, run_sequence, Mode, TrainConfig};

#[derive(Parser)]
#[command(
    name = "diana",
    version,
    about = "Lifelong QA over synthetic task suites"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic task suite and write it as JSON.
    GenTasks {
        /// Suite generation config (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Generation seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output suite file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a lifelong sequence and write checkpoint and metrics.
    Train {
        /// Task suite produced by gen-tasks.
        #[arg(long)]
        suite: PathBuf,
        /// Training config (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Directory for checkpoint.json, metrics.csv, summary.json.
        #[arg(long)]
        out_dir: PathBuf,
        /// Override the config's mode
        /// (diana|diana_wo_meta|diana_wo_memory|seq_ft|replay).
        #[arg(long)]
        mode: Option<String>,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Re-evaluate a checkpoint on a suite, routing by keys alone.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        suite: PathBuf,
        /// Directory for metrics.csv and summary.json.
        #[arg(long)]
        out: PathBuf,
    },
}

/// Parse arguments from the process environment and run. Returns the exit
/// code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // Help and version requests are not usage errors.
            let code = if err.use_stderr() { 1 } else { 0 };
            let _ = err.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            err.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenTasks { config, seed, out } => cmd_gen_tasks(&config, seed, &out),
        Command::Train {
            suite,
            config,
            out_dir,
            mode,
            seed,
        } => cmd_train(&suite, &config, &out_dir, mode.as_deref(), seed),
        Command::Eval {
            checkpoint,
            suite,
            out,
        } => cmd_eval(&checkpoint, &suite, &out),
    }
}

/// `DIANA_SEED` beats the flag, the flag beats the fallback.
fn resolve_seed(flag: Option<u64>, fallback: u64) -> Result<u64> {
    match std::env::var("DIANA_SEED") {
        Ok(raw) => raw
            .parse::<u64>()
            .map_err(|_| Error::Config(format!("DIANA_SEED={raw:?} is not a u64"))),
        Err(_) => Ok(flag.unwrap_or(fallback)),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path, what: &str) -> Result<T> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::Config(format!("cannot read {what} {}: {e}", path.display())))?;
    serde_json::from_slice(&bytes)
        .map_err(|e| Error::Config(format!("invalid {what} {}: {e}", path.display())))
}

fn cmd_gen_tasks(config: &Path, seed: Option<u64>, out: &Path) -> Result<()> {
    let suite_cfg: SuiteConfig = read_json(config, "suite config")?;
    let seed = resolve_seed(seed, 0)?;
    let suite = generate_suite(seed, &suite_cfg)?;
    save_suite(out, &suite)?;
    println!(
        "wrote {} ({} tasks, {} seen, vocab {})",
        out.display(),
        suite.tasks.len(),
        suite.seen_tasks().count(),
        suite.vocab.len()
    );
    Ok(())
}

fn cmd_train(
    suite_path: &Path,
    config: &Path,
    out_dir: &Path,
    mode: Option<&str>,
    seed: Option<u64>,
) -> Result<()> {
    let suite = load_suite(suite_path)?;
    let mut cfg: TrainConfig = read_json(config, "train config")?;
    if let Some(mode) = mode {
        cfg.mode = mode.parse()?;
    }
    cfg.seed = resolve_seed(seed, cfg.seed)?;
    if cfg.mode == Mode::DianaWoMemory {
        cfg.rehearsal_mix = 0.0;
    }
    cfg.validate()?;

    let (state, matrix) = run_sequence(&suite, &cfg)?;

    std::fs::create_dir_all(out_dir)?;
    let checkpoint = Checkpoint::from_state(&state, &cfg);
    save_checkpoint(&out_dir.join("checkpoint.json"), &checkpoint)?;
    write_metrics_csv(&out_dir.join("metrics.csv"), &matrix, &suite.tasks)?;
    let summary = Summary::from_run(&matrix, &suite, &cfg)?;
    std::fs::write(out_dir.join("summary.json"), to_json_bytes(&summary)?)?;

    match summary.a_unseen {
        Some(a_unseen) => println!(
            "mode {} seed {}: A_N {:.4} F_N {:.4} A_N' {:.4}",
            cfg.mode.as_str(),
            cfg.seed,
            summary.a_n,
            summary.f_n,
            a_unseen
        ),
        None => println!(
            "mode {} seed {}: A_N {:.4} F_N {:.4}",
            cfg.mode.as_str(),
            cfg.seed,
            summary.a_n,
            summary.f_n
        ),
    }
    Ok(())
}

/// Drop every task identity annotation from a loaded suite. Evaluation must
/// rely on key routing alone.
fn strip_task_ids(mut suite: TaskSuite) -> TaskSuite {
    for splits in &mut suite.splits {
        for inst in splits
            .train
            .iter_mut()
            .chain(&mut splits.val)
            .chain(&mut splits.test)
        {
            inst.task_id = None;
        }
    }
    suite
}

fn cmd_eval(checkpoint_path: &Path, suite_path: &Path, out: &Path) -> Result<()> {
    let checkpoint = load_checkpoint(checkpoint_path)?;
    let suite = load_suite(suite_path)?;
    checkpoint.check_compatible(&suite)?;
    let (state, cfg) = checkpoint.into_state();
    let suite = strip_task_ids(suite);

    let (row, report) = evaluate_tasks(&state, &suite, &cfg)?;
    let mut matrix = state.matrix.clone();
    if matrix.rows.is_empty() {
        matrix.push_row(row)?;
    } else {
        let last = matrix.rows.last_mut().expect("non-empty");
        *last = row;
    }

    std::fs::create_dir_all(out)?;
    write_metrics_csv(&out.join("metrics.csv"), &matrix, &suite.tasks)?;
    let summary = Summary::from_run(&matrix, &suite, &cfg)?;
    std::fs::write(out.join("summary.json"), to_json_bytes(&summary)?)?;

    print!(
        "evaluated {} tasks: A_N {:.4} F_N {:.4}",
        suite.tasks.len(),
        summary.a_n,
        summary.f_n
    );
    if let Some(a_unseen) = summary.a_unseen {
        print!(" A_N' {a_unseen:.4}");
    }
    if let (Some(acc), Some(det)) = (report.seen_accuracy(), report.unseen_detection_rate()) {
        print!(" routing_acc {acc:.4} unseen_detect {det:.4}");
    }
    println!();
    Ok(())
}
