//! Format-matched scorers and the lifelong-learning metrics computed from
//! the stage-by-task performance matrix.
//!
//! After training stage `i` (1-based), row `i` of the matrix holds the test
//! score of every task. From the finished matrix:
//!
//! * `A_N`: mean final score over seen tasks,
//! * `F_N`: mean over the first `N-1` tasks of (best score the task ever had
//!   from its own stage onward) minus (its final score); lower is better,
//! * `A_N'`: mean final score over unseen tasks.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tasks::{FormatKind, TaskDescriptor, TaskSuite};
use crate::trainer::TrainConfig;

/// Stage-by-task score matrix. `rows[i][j]` is the score of task `j` after
/// training stage `i` (both 0-based here).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PerfMatrix {
    pub rows: Vec<Vec<f64>>,
}

impl PerfMatrix {
    pub fn push_row(&mut self, row: Vec<f64>) -> Result<()> {
        if let Some(first) = self.rows.first() {
            if first.len() != row.len() {
                return Err(Error::Invariant(format!(
                    "row width {} does not match matrix width {}",
                    row.len(),
                    first.len()
                )));
            }
        }
        if row.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Invariant("scores must lie in [0, 1]".to_string()));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn n_stages(&self) -> usize {
        self.rows.len()
    }
}

/// Exact match over whole token sequences: 1 iff identical.
pub fn score_em(pred: &[String], gold: &[String]) -> f64 {
    if pred == gold {
        1.0
    } else {
        0.0
    }
}

/// Bag-of-tokens F1.
pub fn score_f1(pred: &[String], gold: &[String]) -> Result<f64> {
    if gold.is_empty() {
        return Err(Error::Data("empty gold answer".to_string()));
    }
    if pred.is_empty() {
        return Ok(0.0);
    }
    let mut gold_counts = std::collections::HashMap::new();
    for tok in gold {
        *gold_counts.entry(tok.as_str()).or_insert(0usize) += 1;
    }
    let mut overlap = 0usize;
    let mut pred_counts = std::collections::HashMap::new();
    for tok in pred {
        *pred_counts.entry(tok.as_str()).or_insert(0usize) += 1;
    }
    for (tok, &pc) in &pred_counts {
        if let Some(&gc) = gold_counts.get(tok) {
            overlap += pc.min(gc);
        }
    }
    if overlap == 0 {
        return Ok(0.0);
    }
    let precision = overlap as f64 / pred.len() as f64;
    let recall = overlap as f64 / gold.len() as f64;
    Ok(2.0 * precision * recall / (precision + recall))
}

/// Accuracy on a single choice token.
pub fn score_accuracy(pred: &str, gold: &str) -> f64 {
    if pred == gold {
        1.0
    } else {
        0.0
    }
}

/// Score one prediction with the scorer matched to the task format.
pub fn score_instance(format: FormatKind, pred: &[String], gold: &[String]) -> Result<f64> {
    match format {
        FormatKind::Extractive => Ok(score_em(pred, gold)),
        FormatKind::Abstractive => score_f1(pred, gold),
        FormatKind::MultipleChoice => {
            if gold.is_empty() {
                return Err(Error::Data("empty gold answer".to_string()));
            }
            let p = pred.first().map(String::as_str).unwrap_or("");
            Ok(score_accuracy(p, &gold[0]))
        }
    }
}

/// Mean final score over the seen tasks.
pub fn compute_a_n(matrix: &PerfMatrix, seen: &[usize]) -> Result<f64> {
    let last = matrix
        .rows
        .last()
        .ok_or_else(|| Error::Evaluation("performance matrix has no rows".to_string()))?;
    if seen.is_empty() {
        return Err(Error::Evaluation("no seen tasks".to_string()));
    }
    let mut total = 0.0;
    for &j in seen {
        let v = last
            .get(j)
            .ok_or_else(|| Error::Evaluation(format!("task column {j} missing")))?;
        total += v;
    }
    Ok(total / seen.len() as f64)
}

/// Average forgetting over the first `N-1` seen tasks.
///
/// For task `j` (trained at stage `j`), forgetting is the best score it
/// reached at any stage from `j` onward minus its final score. Returns 0 when
/// fewer than two stages exist.
pub fn compute_f_n(matrix: &PerfMatrix, seen: &[usize]) -> Result<f64> {
    let n = matrix.n_stages();
    if n < 2 {
        return Ok(0.0);
    }
    if seen.len() < n {
        return Err(Error::Evaluation(format!(
            "{} stages but only {} seen tasks",
            n,
            seen.len()
        )));
    }
    let last = &matrix.rows[n - 1];
    let mut total = 0.0;
    for (stage, &j) in seen.iter().enumerate().take(n - 1) {
        let mut best = f64::NEG_INFINITY;
        for row in &matrix.rows[stage..] {
            let v = *row
                .get(j)
                .ok_or_else(|| Error::Evaluation(format!("task column {j} missing")))?;
            best = best.max(v);
        }
        total += best - last[j];
    }
    Ok(total / (n - 1) as f64)
}

/// Mean final score over the unseen tasks; `None` when there are none.
pub fn compute_a_unseen(matrix: &PerfMatrix, unseen: &[usize]) -> Result<Option<f64>> {
    if unseen.is_empty() {
        return Ok(None);
    }
    let last = matrix
        .rows
        .last()
        .ok_or_else(|| Error::Evaluation("performance matrix has no rows".to_string()))?;
    let mut total = 0.0;
    for &j in unseen {
        let v = last
            .get(j)
            .ok_or_else(|| Error::Evaluation(format!("task column {j} missing")))?;
        total += v;
    }
    Ok(Some(total / unseen.len() as f64))
}

/// CSV name of the scorer matched to a format.
pub fn metric_name(format: FormatKind) -> &'static str {
    match format {
        FormatKind::Extractive => "em",
        FormatKind::Abstractive => "f1",
        FormatKind::MultipleChoice => "accuracy",
    }
}

/// Write the performance matrix as `stage,task_id,metric,value` rows.
/// Stages are 1-based in the file.
pub fn write_metrics_csv(path: &Path, matrix: &PerfMatrix, tasks: &[TaskDescriptor]) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "stage,task_id,metric,value").map_err(Error::Io)?;
    for (stage, row) in matrix.rows.iter().enumerate() {
        for task in tasks {
            let value = row.get(task.task_id).ok_or_else(|| {
                Error::Evaluation(format!("task column {} missing", task.task_id))
            })?;
            writeln!(
                out,
                "{},{},{},{}",
                stage + 1,
                task.task_id,
                metric_name(task.format),
                value
            )
            .map_err(Error::Io)?;
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Final metrics of a run plus its configuration echo.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub a_n: f64,
    pub f_n: f64,
    pub a_unseen: Option<f64>,
    pub seed: u64,
    pub config: TrainConfig,
}

impl Summary {
    pub fn from_run(matrix: &PerfMatrix, suite: &TaskSuite, cfg: &TrainConfig) -> Result<Self> {
        let seen: Vec<usize> = suite.seen_tasks().map(|t| t.task_id).collect();
        let unseen: Vec<usize> = suite.unseen_tasks().map(|t| t.task_id).collect();
        Ok(Summary {
            a_n: compute_a_n(matrix, &seen)?,
            f_n: compute_f_n(matrix, &seen)?,
            a_unseen: compute_a_unseen(matrix, &unseen)?,
            seed: cfg.seed,
            config: cfg.clone(),
        })
    }
}
