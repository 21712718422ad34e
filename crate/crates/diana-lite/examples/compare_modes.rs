//! Compare the full mechanism against its ablations and the baselines on one
//! suite: where the forgetting goes, and what each piece buys.
//!
//! ```bash
//! cargo run --release --example compare_modes
//! ```

use diana_lite::metrics::{compute_a_n, compute_a_unseen, compute_f_n};
use diana_lite::tasks::{generate_suite, SuiteConfig};
use diana_lite::trainer::{run_sequence, Mode, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed = 23;
    let suite = generate_suite(seed, &SuiteConfig::default())?;
    let seen: Vec<usize> = suite.seen_tasks().map(|t| t.task_id).collect();
    let unseen: Vec<usize> = suite.unseen_tasks().map(|t| t.task_id).collect();

    println!(
        "{:<18} {:>7} {:>7} {:>7} {:>9} {:>11}",
        "mode", "A_N", "F_N", "A_N'", "routing", "unseen det"
    );
    for mode in [
        Mode::Diana,
        Mode::DianaWoMeta,
        Mode::DianaWoMemory,
        Mode::Replay,
        Mode::SeqFt,
    ] {
        let cfg = TrainConfig {
            mode,
            seed,
            rehearsal_mix: if mode == Mode::DianaWoMemory {
                0.0
            } else {
                0.2
            },
            ..TrainConfig::default()
        };
        let (state, matrix) = run_sequence(&suite, &cfg)?;
        let a_n = compute_a_n(&matrix, &seen)?;
        let f_n = compute_f_n(&matrix, &seen)?;
        let a_u = compute_a_unseen(&matrix, &unseen)?.unwrap();
        let (routing, detect) = match state.last_routing {
            Some(r) => (
                format!("{:.3}", r.seen_accuracy().unwrap()),
                format!("{:.3}", r.unseen_detection_rate().unwrap()),
            ),
            None => ("-".to_string(), "-".to_string()),
        };
        println!(
            "{:<18} {a_n:>7.4} {f_n:>7.4} {a_u:>7.4} {routing:>9} {detect:>11}",
            mode.as_str()
        );
    }

    println!();
    println!("A_N higher is better; F_N lower is better (forgetting).");
    Ok(())
}
