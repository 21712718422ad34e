//! The four-level prompt hierarchy and how one input's prompt is assembled.
//!
//! ```bash
//! cargo run --release --example prompt_composition
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use diana_lite::prompts::{InitPolicy, PromptConfig, PromptRoute, PromptStore};
use diana_lite::tasks::FormatKind;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let config = PromptConfig::default();
    let mut store = PromptStore::new(&config);
    let mut rng = ChaCha8Rng::seed_from_u64(0);

    println!(
        "hierarchy: general ({} vectors), format ({}), task ({}), meta pool {} x {} vectors",
        config.general_len, config.format_len, config.task_len, config.meta_pool, config.meta_len
    );

    // Tasks arrive one at a time; each gets a warm-started prompt.
    for (task_id, format) in [
        (0, FormatKind::Extractive),
        (1, FormatKind::Abstractive),
        (2, FormatKind::MultipleChoice),
    ] {
        store.add_task_prompt(task_id, format, InitPolicy::default(), &mut rng)?;
    }
    println!(
        "task prompts after three arrivals: {}",
        store.task_prompts.len()
    );
    println!();

    // Composition for an input routed to task 1 with meta prompts 3, 0, 7, 12.
    let composed = store.compose(
        FormatKind::Abstractive,
        PromptRoute::Task(1),
        &[3, 0, 7, 12],
    )?;
    println!(
        "composed for task 1: {} vectors = {} general + {} format + {} task + {} meta",
        composed.len(),
        config.general_len,
        config.format_len,
        config.task_len,
        4 * config.meta_len
    );
    println!("provenance: {:?}", composed.provenance);

    let pooled = composed.pooled();
    println!(
        "pooled interface vector: dim {}, first entries {:?}",
        pooled.len(),
        &pooled[..4.min(pooled.len())]
    );
    println!();

    // An input judged to belong to no seen task composes with the dedicated
    // unseen prompt of its format instead.
    let unseen = store.compose(
        FormatKind::Extractive,
        PromptRoute::Unseen(FormatKind::Extractive),
        &[1, 2],
    )?;
    println!(
        "unseen-routed composition: {} vectors, route {:?}",
        unseen.len(),
        unseen.provenance.route
    );

    // Errors: unknown task, repeated meta index.
    println!();
    println!(
        "routing to an unknown task: {}",
        store
            .compose(FormatKind::Extractive, PromptRoute::Task(9), &[])
            .unwrap_err()
    );
    println!(
        "repeating a meta index: {}",
        store
            .compose(FormatKind::Extractive, PromptRoute::Task(0), &[4, 4])
            .unwrap_err()
    );
    Ok(())
}
