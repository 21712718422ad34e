//! Per-task reservoir buffer.
//!
//! Supplies triplet negatives and rehearsal batches. Removing it from a run
//! reproduces the no-memory ablation. Each task keeps an independent
//! reservoir of capacity `B` maintained with standard reservoir sampling, so
//! the retained set is an unbiased sample of everything observed.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tasks::QAInstance;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryBuffer {
    pub capacity_per_task: usize,
    /// task id -> retained instances (at most `capacity_per_task` each).
    pub reservoirs: BTreeMap<usize, Vec<QAInstance>>,
    /// task id -> how many instances were observed in total.
    pub observed: BTreeMap<usize, u64>,
    rng: ChaCha8Rng,
}

impl MemoryBuffer {
    pub fn new(capacity_per_task: usize, seed: u64) -> Self {
        MemoryBuffer {
            capacity_per_task,
            reservoirs: BTreeMap::new(),
            observed: BTreeMap::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Total stored instances across all tasks.
    pub fn len(&self) -> usize {
        self.reservoirs.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Offer one training instance to its task's reservoir.
    ///
    /// The first `B` instances are kept; the n-th observed instance then
    /// replaces slot `u ~ Uniform[0, n)` when `u < B`.
    pub fn observe(&mut self, instance: QAInstance) -> Result<()> {
        let task_id = instance.task_id.ok_or_else(|| {
            Error::Invariant("buffer observed an instance without task id".to_string())
        })?;
        let count = self.observed.entry(task_id).or_insert(0);
        *count += 1;
        let n = *count;
        let reservoir = self.reservoirs.entry(task_id).or_default();
        if reservoir.len() < self.capacity_per_task {
            reservoir.push(instance);
        } else {
            let u = self.rng.gen_range(0..n) as usize;
            if u < self.capacity_per_task {
                reservoir[u] = instance;
            }
        }
        Ok(())
    }

    /// Uniform draw over stored instances whose task differs from
    /// `current_task`; `None` when no such instance exists.
    pub fn sample_negative<R: Rng>(&self, current_task: usize, rng: &mut R) -> Option<&QAInstance> {
        let total: usize = self
            .reservoirs
            .iter()
            .filter(|(&task, _)| task != current_task)
            .map(|(_, r)| r.len())
            .sum();
        if total == 0 {
            return None;
        }
        let mut pick = rng.gen_range(0..total);
        for (&task, reservoir) in &self.reservoirs {
            if task == current_task {
                continue;
            }
            if pick < reservoir.len() {
                return Some(&reservoir[pick]);
            }
            pick -= reservoir.len();
        }
        unreachable!("pick bounded by total")
    }

    /// Uniform sample with replacement across every stored instance.
    pub fn rehearsal_batch<R: Rng>(&self, size: usize, rng: &mut R) -> Vec<QAInstance> {
        let total = self.len();
        if total == 0 || size == 0 {
            return Vec::new();
        }
        let flat: Vec<&QAInstance> = self.reservoirs.values().flatten().collect();
        (0..size)
            .map(|_| flat[rng.gen_range(0..total)].clone())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::FormatKind;

    fn instance(task_id: usize, n: usize) -> QAInstance {
        QAInstance {
            context: vec![format!("k{n}"), format!("v{n}")],
            question: vec![format!("k{n}"), "?".to_string()],
            answer: vec![format!("v{n}")],
            choices: None,
            format: FormatKind::Extractive,
            task_id: Some(task_id),
        }
    }

    #[test]
    fn first_capacity_items_are_all_retained() {
        let mut buf = MemoryBuffer::new(10, 0);
        for n in 0..10 {
            buf.observe(instance(0, n)).unwrap();
        }
        assert_eq!(buf.reservoirs[&0].len(), 10);
        let kept: Vec<String> = buf.reservoirs[&0]
            .iter()
            .map(|i| i.answer[0].clone())
            .collect();
        let expected: Vec<String> = (0..10).map(|n| format!("v{n}")).collect();
        assert_eq!(kept, expected);
    }

    #[test]
    fn capacity_is_never_exceeded() {
        let mut buf = MemoryBuffer::new(5, 1);
        for n in 0..50 {
            buf.observe(instance(0, n)).unwrap();
            assert!(buf.reservoirs[&0].len() <= 5);
        }
        assert_eq!(buf.reservoirs[&0].len(), 5);
    }

    #[test]
    fn observe_without_task_id_is_rejected() {
        let mut buf = MemoryBuffer::new(5, 0);
        let mut inst = instance(0, 0);
        inst.task_id = None;
        assert!(matches!(buf.observe(inst), Err(Error::Invariant(_))));
    }

    #[test]
    fn fixed_seed_reproduces_the_reservoir() {
        // Oracle: replay the same reservoir policy with an independent rng
        // clone and compare final contents.
        let capacity = 4;
        let seed = 99;
        let mut buf = MemoryBuffer::new(capacity, seed);
        let mut oracle: Vec<QAInstance> = Vec::new();
        let mut oracle_rng = ChaCha8Rng::seed_from_u64(seed);
        for n in 0..100 {
            let inst = instance(0, n);
            buf.observe(inst.clone()).unwrap();
            if oracle.len() < capacity {
                oracle.push(inst);
            } else {
                let u = oracle_rng.gen_range(0..(n as u64 + 1)) as usize;
                if u < capacity {
                    oracle[u] = inst;
                }
            }
        }
        assert_eq!(buf.reservoirs[&0], oracle);

        // And a second buffer with the same seed agrees bitwise.
        let mut again = MemoryBuffer::new(capacity, seed);
        for n in 0..100 {
            again.observe(instance(0, n)).unwrap();
        }
        assert_eq!(buf, again);
    }

    #[test]
    fn negatives_never_come_from_the_current_task() {
        let mut buf = MemoryBuffer::new(20, 3);
        for n in 0..10 {
            buf.observe(instance(0, n)).unwrap();
            buf.observe(instance(1, n + 100)).unwrap();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let neg = buf.sample_negative(0, &mut rng).unwrap();
            assert_eq!(neg.task_id, Some(1));
        }
    }

    #[test]
    fn no_negative_when_only_current_task_stored() {
        let mut buf = MemoryBuffer::new(20, 3);
        for n in 0..10 {
            buf.observe(instance(0, n)).unwrap();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        assert!(buf.sample_negative(0, &mut rng).is_none());
        assert!(buf.sample_negative(1, &mut rng).is_some());
    }

    #[test]
    fn negative_sampling_is_uniform_within_bounds() {
        let mut buf = MemoryBuffer::new(20, 7);
        for n in 0..10 {
            buf.observe(instance(1, n)).unwrap();
            buf.observe(instance(2, n + 50)).unwrap();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let draws = 10_000;
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for _ in 0..draws {
            let neg = buf.sample_negative(0, &mut rng).unwrap();
            *counts.entry(neg.answer[0].clone()).or_default() += 1;
        }
        // 20 stored negatives: expect draws/20 each, within 3 sigma of the
        // multinomial bound.
        let expected = draws as f64 / 20.0;
        let sigma = (draws as f64 * (1.0 / 20.0) * (19.0 / 20.0)).sqrt();
        assert_eq!(counts.len(), 20);
        for (_, count) in counts {
            assert!((count as f64 - expected).abs() < 3.0 * sigma);
        }
    }

    #[test]
    fn rehearsal_edge_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let empty = MemoryBuffer::new(5, 0);
        assert!(empty.rehearsal_batch(4, &mut rng).is_empty());

        let mut buf = MemoryBuffer::new(5, 0);
        buf.observe(instance(0, 1)).unwrap();
        assert!(buf.rehearsal_batch(0, &mut rng).is_empty());
        let batch = buf.rehearsal_batch(5, &mut rng);
        assert_eq!(batch.len(), 5);
        assert!(batch.iter().all(|i| i.answer[0] == "v1"));
    }

    #[test]
    fn rehearsal_is_uniform_across_tasks_within_bounds() {
        let mut buf = MemoryBuffer::new(10, 4);
        for n in 0..10 {
            buf.observe(instance(0, n)).unwrap();
            buf.observe(instance(1, n + 10)).unwrap();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let draws = 10_000;
        let mut task0 = 0usize;
        for inst in buf.rehearsal_batch(draws, &mut rng) {
            if inst.task_id == Some(0) {
                task0 += 1;
            }
        }
        let expected = draws as f64 / 2.0;
        let sigma = (draws as f64 * 0.25).sqrt();
        assert!((task0 as f64 - expected).abs() < 3.0 * sigma);
    }
}
