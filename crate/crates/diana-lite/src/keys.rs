//! Learned key-vector space: task keys, meta keys, and open-set detection.
//!
//! Task keys are trained with a triplet objective that pulls a key toward
//! query features of its own task and pushes it away from features of other
//! tasks (negatives come from the memory buffer):
//!
//! ```text
//! loss = exp( d(q, k) + max(1 - d(q_neg, k), 0) )        d = Euclidean
//! ```
//!
//! The outer `exp` is kept as printed; a `plain` variant without it is
//! available behind [`TripletForm`]. Meta keys have a simpler pull-only
//! objective: the mean squared distance from the query to the selected keys.
//!
//! At inference a query routes to the nearest task key, unless that distance
//! exceeds the calibrated threshold `tau`, in which case the input is judged
//! to belong to an unseen task.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vecmath::{euclidean, norm};

/// Which form of the triplet objective to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TripletForm {
    /// `exp(d_pos + hinge)`, as printed.
    #[default]
    Literal,
    /// `d_pos + hinge`, without the outer exponential.
    Plain,
}

/// Key vector identifying one seen task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskKey {
    pub task_id: usize,
    pub key: Vec<f64>,
}

/// Key vector paired with one meta prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaKey {
    pub index: usize,
    pub key: Vec<f64>,
}

/// Distance threshold separating seen from unseen inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpenSetThreshold {
    pub tau: f64,
}

/// Routing decision for one query.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskDecision {
    Seen(usize),
    Unseen,
}

fn check_dims(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Invariant(format!(
            "dimension mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

/// Triplet loss for a task key.
///
/// `q` is the query feature of a sample from the key's task, `q_neg` the
/// feature of a sample from a different task. When no negative is available
/// (the buffer holds nothing from other tasks yet) the hinge term is zero.
pub fn task_triplet_loss(
    q: &[f64],
    key: &[f64],
    q_neg: Option<&[f64]>,
    form: TripletForm,
) -> Result<f64> {
    check_dims(q, key)?;
    let d_pos = euclidean(q, key);
    let hinge = match q_neg {
        Some(n) => {
            check_dims(n, key)?;
            (1.0 - euclidean(n, key)).max(0.0)
        }
        None => 0.0,
    };
    let inner = d_pos + hinge;
    Ok(match form {
        TripletForm::Literal => inner.exp(),
        TripletForm::Plain => inner,
    })
}

/// Analytic gradient of [`task_triplet_loss`] with respect to the key.
///
/// At zero distance the corresponding term uses the subgradient 0. The hinge
/// contributes only while `d(q_neg, k) < 1`.
pub fn task_triplet_grad(
    q: &[f64],
    key: &[f64],
    q_neg: Option<&[f64]>,
    form: TripletForm,
) -> Result<Vec<f64>> {
    check_dims(q, key)?;
    let dim = key.len();
    let d_pos = euclidean(q, key);
    let mut inner_grad = vec![0.0; dim];
    if d_pos > 0.0 {
        for i in 0..dim {
            inner_grad[i] += (key[i] - q[i]) / d_pos;
        }
    }
    let mut hinge = 0.0;
    if let Some(n) = q_neg {
        check_dims(n, key)?;
        let d_neg = euclidean(n, key);
        hinge = (1.0 - d_neg).max(0.0);
        if d_neg > 0.0 && d_neg < 1.0 {
            for i in 0..dim {
                inner_grad[i] -= (key[i] - n[i]) / d_neg;
            }
        }
    }
    if form == TripletForm::Literal {
        // Chain rule through exp scales by the loss value.
        let scale = (d_pos + hinge).exp();
        for g in &mut inner_grad {
            *g *= scale;
        }
    }
    Ok(inner_grad)
}

/// Pull-only objective for the selected meta keys: mean squared Euclidean
/// distance from the query.
pub fn meta_pull_loss(q: &[f64], selected: &[&[f64]]) -> Result<f64> {
    if selected.is_empty() {
        return Err(Error::Invariant("no meta keys selected".to_string()));
    }
    let mut total = 0.0;
    for key in selected {
        check_dims(q, key)?;
        let d = euclidean(q, key);
        total += d * d;
    }
    Ok(total / selected.len() as f64)
}

/// Calibrate the open-set threshold from positive-key distances of seen-task
/// validation data: `tau = mean + 2 * stddev` (population).
pub fn calibrate_tau(distances: &[f64]) -> Result<OpenSetThreshold> {
    if distances.is_empty() {
        return Err(Error::Calibration(
            "no validation distances to calibrate from".to_string(),
        ));
    }
    let n = distances.len() as f64;
    let mean = distances.iter().sum::<f64>() / n;
    let var = distances
        .iter()
        .map(|d| (d - mean) * (d - mean))
        .sum::<f64>()
        / n;
    Ok(OpenSetThreshold {
        tau: mean + 2.0 * var.sqrt(),
    })
}

/// The full key space owned by a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeySpace {
    pub task_keys: Vec<TaskKey>,
    pub meta_keys: Vec<MetaKey>,
    pub tau: Option<OpenSetThreshold>,
}

impl KeySpace {
    /// Create a key space with `meta_pool` random unit meta keys and no task
    /// keys yet.
    pub fn new<R: Rng>(meta_pool: usize, dim: usize, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let meta_keys = (0..meta_pool)
            .map(|index| {
                let mut key: Vec<f64> = (0..dim).map(|_| normal.sample(rng)).collect();
                let n = norm(&key);
                if n > 0.0 {
                    for x in &mut key {
                        *x /= n;
                    }
                }
                MetaKey { index, key }
            })
            .collect();
        KeySpace {
            task_keys: Vec::new(),
            meta_keys,
            tau: None,
        }
    }

    pub fn task_key(&self, task_id: usize) -> Option<&TaskKey> {
        self.task_keys.iter().find(|k| k.task_id == task_id)
    }

    /// Register the key for a newly arriving task.
    pub fn add_task_key(&mut self, task_id: usize, key: Vec<f64>) -> Result<()> {
        if self.task_key(task_id).is_some() {
            return Err(Error::Invariant(format!(
                "task {task_id} already has a key"
            )));
        }
        self.task_keys.push(TaskKey { task_id, key });
        Ok(())
    }

    /// SGD step on one task key.
    pub fn update_task_key(&mut self, task_id: usize, grad: &[f64], lr: f64) -> Result<()> {
        let key = self
            .task_keys
            .iter_mut()
            .find(|k| k.task_id == task_id)
            .ok_or_else(|| Error::Routing(format!("no key for task {task_id}")))?;
        for (x, g) in key.key.iter_mut().zip(grad) {
            *x -= lr * g;
        }
        Ok(())
    }

    /// SGD step on one meta key.
    pub fn update_meta_key(&mut self, index: usize, grad: &[f64], lr: f64) -> Result<()> {
        let key = self
            .meta_keys
            .get_mut(index)
            .ok_or_else(|| Error::Invariant(format!("meta index {index} out of range")))?;
        for (x, g) in key.key.iter_mut().zip(grad) {
            *x -= lr * g;
        }
        Ok(())
    }

    /// Route a query to its nearest task key, or to `Unseen` when the nearest
    /// distance exceeds `tau`. Ties break toward the smaller task id.
    /// Before calibration `tau` acts as infinite.
    pub fn infer_task(&self, q: &[f64]) -> Result<(TaskDecision, f64)> {
        if self.task_keys.is_empty() {
            return Err(Error::Routing("no task keys to route against".to_string()));
        }
        let mut best_id = usize::MAX;
        let mut best_dist = f64::INFINITY;
        for key in &self.task_keys {
            let d = euclidean(q, &key.key);
            if d < best_dist || (d == best_dist && key.task_id < best_id) {
                best_dist = d;
                best_id = key.task_id;
            }
        }
        let tau = self.tau.map_or(f64::INFINITY, |t| t.tau);
        let decision = if best_dist > tau {
            TaskDecision::Unseen
        } else {
            TaskDecision::Seen(best_id)
        };
        Ok((decision, best_dist))
    }

    /// Indices of the `m_select` meta keys nearest to the query, ordered by
    /// ascending distance, ties toward the smaller index.
    pub fn select_meta(&self, q: &[f64], m_select: usize) -> Result<Vec<usize>> {
        if m_select == 0 || m_select > self.meta_keys.len() {
            return Err(Error::Config(format!(
                "m_select {m_select} out of range 1..={}",
                self.meta_keys.len()
            )));
        }
        let mut scored: Vec<(f64, usize)> = self
            .meta_keys
            .iter()
            .map(|k| (euclidean(q, &k.key), k.index))
            .collect();
        scored.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
        Ok(scored.into_iter().take(m_select).map(|(_, i)| i).collect())
    }

    /// Set the open-set threshold from validation distances.
    pub fn calibrate(&mut self, distances: &[f64]) -> Result<OpenSetThreshold> {
        let tau = calibrate_tau(distances)?;
        self.tau = Some(tau);
        Ok(tau)
    }
}
