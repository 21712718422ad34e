//! Train a single task and verify the model actually learns it.
//!
//! ```bash
//! cargo run --release --example train_one_task
//! ```

use diana_lite::metrics::score_instance;
use diana_lite::tasks::{generate_suite, SuiteConfig};
use diana_lite::trainer::{
    calibrate_threshold, predict_query, train_task, TrainConfig, TrainState,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let suite = generate_suite(7, &SuiteConfig::default())?;
    let cfg = TrainConfig {
        seed: 7,
        ..TrainConfig::default()
    };
    let vocab = suite.vocab_index();
    let mut state = TrainState::new(&suite, &cfg)?;

    let task = suite.seen_tasks().next().unwrap().clone();
    println!("training task {} ({})", task.task_id, task.name);
    train_task(&mut state, &suite, &task, &cfg)?;
    calibrate_threshold(&mut state, &suite, &cfg)?;

    // Scheduled sampling: ground-truth routing fades across epochs.
    println!();
    println!("epoch   epsilon   ground-truth routed");
    for stats in &state.epoch_stats {
        println!(
            "  {:>2}     {:.2}      {:>3} / {:>3}",
            stats.epoch, stats.epsilon, stats.ground_truth_routed, stats.total_routed
        );
    }
    println!();

    let splits = suite.splits_for(task.task_id)?;
    for (name, instances) in [("train", &splits.train), ("test", &splits.test)] {
        let mut correct = 0.0;
        for inst in instances {
            let (pred, _) = predict_query(&state, &cfg, &vocab, &inst.query())?;
            correct += score_instance(task.format, &pred, &inst.answer)?;
        }
        println!(
            "{name} accuracy: {:.3} ({} instances)",
            correct / instances.len() as f64,
            instances.len()
        );
    }

    // A few concrete predictions.
    println!();
    for inst in splits.test.iter().take(3) {
        let (pred, _) = predict_query(&state, &cfg, &vocab, &inst.query())?;
        println!(
            "q: {:<8} gold: {:<12} predicted: {}",
            inst.question.join(" "),
            inst.answer.join(" "),
            pred.join(" ")
        );
    }
    Ok(())
}
