//! Checkpoint persistence: save a trained run, reload it, and show that
//! evaluation reproduces the original results exactly.
//!
//! ```bash
//! cargo run --release --example checkpoint_io
//! ```

use diana_lite::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use diana_lite::tasks::{generate_suite, SuiteConfig};
use diana_lite::trainer::{evaluate_tasks, run_sequence, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let suite_cfg = SuiteConfig {
        n_train: 60,
        n_val: 15,
        n_test: 30,
        seen_per_format: 1,
        unseen_per_format: 1,
        ..SuiteConfig::default()
    };
    let suite = generate_suite(3, &suite_cfg)?;
    let cfg = TrainConfig {
        epochs_per_task: 5,
        seed: 3,
        ..TrainConfig::default()
    };
    let (state, matrix) = run_sequence(&suite, &cfg)?;
    println!("trained {} stages", matrix.n_stages());

    let dir = std::env::temp_dir().join("diana_checkpoint_example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("checkpoint.json");
    let checkpoint = Checkpoint::from_state(&state, &cfg);
    save_checkpoint(&path, &checkpoint)?;
    println!(
        "saved {} ({} bytes)",
        path.display(),
        std::fs::metadata(&path)?.len()
    );

    let reloaded = load_checkpoint(&path)?;
    println!("version: {}", reloaded.version);
    println!(
        "featurizer: {} dim {}",
        reloaded.featurizer.id, reloaded.featurizer.dim
    );
    println!("identical after round trip: {}", reloaded == checkpoint);

    // Save again: byte-for-byte identical file.
    let second = dir.join("checkpoint2.json");
    save_checkpoint(&second, &reloaded)?;
    println!(
        "byte-identical re-save: {}",
        std::fs::read(&path)? == std::fs::read(&second)?
    );

    // Evaluation from the restored state reproduces the final matrix row.
    reloaded.check_compatible(&suite)?;
    let (restored, restored_cfg) = reloaded.into_state();
    let (row, _) = evaluate_tasks(&restored, &suite, &restored_cfg)?;
    let max_diff = row
        .iter()
        .zip(matrix.rows.last().unwrap())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    println!("max difference vs final training row: {max_diff}");

    std::fs::remove_dir_all(&dir).ok();
    Ok(())
}
