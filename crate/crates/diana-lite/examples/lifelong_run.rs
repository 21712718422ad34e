//! A full lifelong run: six tasks in sequence, evaluation after every stage,
//! and the final lifelong metrics.
//!
//! ```bash
//! cargo run --release --example lifelong_run
//! ```

use diana_lite::metrics::{compute_a_n, compute_a_unseen, compute_f_n};
use diana_lite::tasks::{generate_suite, SuiteConfig};
use diana_lite::trainer::{run_sequence, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let suite = generate_suite(11, &SuiteConfig::default())?;
    let cfg = TrainConfig {
        seed: 11,
        ..TrainConfig::default()
    };

    println!(
        "training {} seen tasks, evaluating {} tasks after each stage",
        suite.seen_tasks().count(),
        suite.tasks.len()
    );
    let start = std::time::Instant::now();
    let (state, matrix) = run_sequence(&suite, &cfg)?;
    println!("done in {:.1}s", start.elapsed().as_secs_f64());
    println!();

    // Stage-by-task score matrix. Unseen columns sit to the right.
    print!("stage |");
    for task in &suite.tasks {
        print!(" t{}{}", task.task_id, if task.seen { " " } else { "*" });
    }
    println!("   (* = unseen)");
    for (stage, row) in matrix.rows.iter().enumerate() {
        print!("  {:>2}  |", stage + 1);
        for value in row {
            print!(" {value:.2}");
        }
        println!();
    }
    println!();

    let seen: Vec<usize> = suite.seen_tasks().map(|t| t.task_id).collect();
    let unseen: Vec<usize> = suite.unseen_tasks().map(|t| t.task_id).collect();
    println!(
        "A_N  (final seen-task average):   {:.4}",
        compute_a_n(&matrix, &seen)?
    );
    println!(
        "F_N  (average forgetting):        {:.4}",
        compute_f_n(&matrix, &seen)?
    );
    println!(
        "A_N' (final unseen-task average): {:.4}",
        compute_a_unseen(&matrix, &unseen)?.unwrap()
    );

    if let Some(routing) = state.last_routing {
        println!();
        println!(
            "routing: {:.1}% of seen test inputs to the right task, {:.1}% of unseen inputs flagged unseen",
            100.0 * routing.seen_accuracy().unwrap(),
            100.0 * routing.unseen_detection_rate().unwrap()
        );
        println!(
            "open-set threshold tau = {:.4}",
            state.keys.tau.unwrap().tau
        );
    }
    Ok(())
}
