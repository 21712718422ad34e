//! Key-vector routing from scratch: triplet-train two task keys on toy
//! clusters, calibrate the open-set threshold, and watch routing decisions.
//!
//! ```bash
//! cargo run --release --example task_routing
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use diana_lite::keys::{
    calibrate_tau, task_triplet_grad, task_triplet_loss, KeySpace, TaskDecision, TripletForm,
};

/// Points near a center, unit-normalized like real query features.
fn cluster<R: Rng>(rng: &mut R, center: &[f64], spread: f64, n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            let mut p: Vec<f64> = center
                .iter()
                .map(|c| c + rng.gen_range(-spread..spread))
                .collect();
            let norm = p.iter().map(|x| x * x).sum::<f64>().sqrt();
            for x in &mut p {
                *x /= norm;
            }
            p
        })
        .collect()
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let dim = 8;

    let center_a = vec![1.0, 0.0, 0.0, 0.0, 0.5, 0.0, 0.0, 0.0];
    let center_b = vec![0.0, 1.0, 0.0, 0.5, 0.0, 0.0, 0.0, 0.0];
    let task_a = cluster(&mut rng, &center_a, 0.4, 60);
    let task_b = cluster(&mut rng, &center_b, 0.4, 60);

    let mut keys = KeySpace::new(0, dim, &mut rng);
    keys.add_task_key(0, task_a[0].clone())?;
    keys.add_task_key(1, task_b[0].clone())?;

    // Triplet training: each task's queries pull its key, the other task's
    // queries push it.
    let lr = 0.05;
    for epoch in 0..20 {
        let mut loss_sum = 0.0;
        for i in 0..task_a.len() {
            for (task_id, q, negatives) in [(0usize, &task_a[i], &task_b), (1, &task_b[i], &task_a)]
            {
                let neg = &negatives[rng.gen_range(0..negatives.len())];
                let key = keys.task_key(task_id).unwrap().key.clone();
                loss_sum += task_triplet_loss(q, &key, Some(neg), TripletForm::Literal)?;
                let grad = task_triplet_grad(q, &key, Some(neg), TripletForm::Literal)?;
                keys.update_task_key(task_id, &grad, lr)?;
            }
        }
        if epoch % 5 == 0 || epoch == 19 {
            println!(
                "epoch {epoch:>2}: mean triplet loss {:.4}",
                loss_sum / (2.0 * task_a.len() as f64)
            );
        }
    }
    println!();

    // Threshold from positive-key distances of held-out same-task points.
    let validation = cluster(&mut rng, &center_a, 0.4, 40);
    let key_a = keys.task_key(0).unwrap().key.clone();
    let distances: Vec<f64> = validation
        .iter()
        .map(|q| {
            q.iter()
                .zip(&key_a)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    let tau = calibrate_tau(&distances)?;
    keys.tau = Some(tau);
    println!("calibrated tau = {:.4}", tau.tau);
    println!();

    // Route: familiar points, and points from a third cluster nobody trained.
    let familiar = cluster(&mut rng, &center_a, 0.4, 5);
    let novel_center = vec![0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.7, 0.0];
    let novel = cluster(&mut rng, &novel_center, 0.4, 5);
    for (label, points) in [("task-a query", &familiar), ("novel query", &novel)] {
        for q in points.iter() {
            let (decision, dist) = keys.infer_task(q)?;
            let text = match decision {
                TaskDecision::Seen(id) => format!("routed to task {id}"),
                TaskDecision::Unseen => "flagged unseen".to_string(),
            };
            println!("{label}: {text} (distance {dist:.3})");
        }
    }
    Ok(())
}
