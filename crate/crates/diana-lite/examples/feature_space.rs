//! The frozen hashing featurizer, and why key routing works at all: inputs
//! from the same task land closer together than inputs from different tasks.
//!
//! ```bash
//! cargo run --release --example feature_space
//! ```

use diana_lite::featurizer::{encode, FEATURIZER_ID};
use diana_lite::tasks::{generate_suite, SuiteConfig};

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    println!("featurizer: {FEATURIZER_ID}");

    let context: Vec<String> = "k1 v5 k2 v7".split(' ').map(String::from).collect();
    let question: Vec<String> = vec!["k1".into(), "?".into()];
    let f = encode(&context, &question, 16)?;
    println!("dim 16 encoding of \"k1 v5 k2 v7 | k1 ?\":");
    for (i, v) in f.values.iter().enumerate() {
        if *v != 0.0 {
            println!("  bucket {i:>2}: {v:+.3}");
        }
    }
    let norm: f64 = f.values.iter().map(|v| v * v).sum::<f64>().sqrt();
    println!("norm: {norm}");
    println!();

    // Geometry on a generated suite: mean cosine within a task vs across
    // tasks.
    let suite = generate_suite(7, &SuiteConfig::default())?;
    let features = |task_id: usize| -> Vec<Vec<f64>> {
        suite
            .splits_for(task_id)
            .unwrap()
            .test
            .iter()
            .map(|i| encode(&i.context, &i.question, 64).unwrap().values)
            .collect()
    };
    let a = features(0);
    let b = features(1);
    let mut within = 0.0;
    let mut count = 0;
    for i in 0..a.len() {
        for j in i + 1..a.len() {
            within += dot(&a[i], &a[j]);
            count += 1;
        }
    }
    within /= count as f64;
    let mut between = 0.0;
    for x in &a {
        for y in &b {
            between += dot(x, y);
        }
    }
    between /= (a.len() * b.len()) as f64;

    println!("task 0 within-task mean cosine:   {within:.4}");
    println!("task 0 vs task 1 mean cosine:     {between:.4}");
    println!("separation (within - between):    {:.4}", within - between);
    Ok(())
}
