//! Shared trainable answer scorer: a prompt-conditioned linear-softmax model.
//!
//! For a query feature `x`, a pooled prompt `p`, and a decoding step `t`, the
//! score of answer token `a` is `W[a] . (x + p + r_t)`, softmaxed over the
//! format's candidate set:
//!
//! * extractive: the distinct tokens of the context,
//! * multiple-choice: the offered choices,
//! * abstractive: the full vocabulary including the stop token, decoded
//!   greedily step by step.
//!
//! `W` is shared by every task, which is exactly what makes sequential
//! fine-tuning forget; prompts condition the scores without owning them.
//! Step embeddings are fixed positional offsets: `r_0` is zero (so
//! non-abstractive formats and the first decoding step share one scoring
//! rule) and `r_1..` are frozen unit vectors derived from a constant seed.
//! Leaving them trainable lets the step-1 logit scale grow without bound
//! across tasks (each new suffix row co-adapts with `r_1`), which destroys
//! convergence at useful learning rates. All gradients are closed-form
//! softmax cross-entropy.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tasks::{FormatKind, QAInstance, QueryView, VocabIndex};
use crate::vecmath::{axpy, norm};

/// Constant seed for the fixed step-embedding directions. Architecture
/// property, deliberately independent of the run seed.
const STEP_EMB_SEED: u64 = 0x5354_4550;

/// Parameters of the scorer. `w` is trainable; `step_emb` is fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Backbone {
    /// V x D answer-token embeddings.
    pub w: Vec<Vec<f64>>,
    /// K_max step embeddings; row 0 is zero, later rows are frozen unit
    /// vectors.
    pub step_emb: Vec<Vec<f64>>,
    /// Vocabulary index reserved for end-of-answer.
    pub stop_token: usize,
}

/// Gradients produced by one loss evaluation. `w_rows` holds only the rows
/// that were touched.
#[derive(Debug, Clone, Default)]
pub struct BackboneGrads {
    pub w_rows: BTreeMap<usize, Vec<f64>>,
    pub step_rows: BTreeMap<usize, Vec<f64>>,
    pub pooled: Vec<f64>,
}

impl Backbone {
    /// Zero-initialized scorer: every candidate starts uniform.
    pub fn new(vocab_size: usize, dim: usize, k_max: usize, stop_token: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(STEP_EMB_SEED);
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let step_emb = (0..k_max)
            .map(|t| {
                if t == 0 {
                    return vec![0.0; dim];
                }
                let mut row: Vec<f64> = (0..dim).map(|_| normal.sample(&mut rng)).collect();
                let n = norm(&row);
                for x in &mut row {
                    *x /= n;
                }
                row
            })
            .collect();
        Backbone {
            w: vec![vec![0.0; dim]; vocab_size],
            step_emb,
            stop_token,
        }
    }

    pub fn dim(&self) -> usize {
        self.w.first().map_or(0, Vec::len)
    }

    pub fn vocab_size(&self) -> usize {
        self.w.len()
    }

    pub fn k_max(&self) -> usize {
        self.step_emb.len()
    }

    fn z(&self, x: &[f64], pooled: &[f64], step: usize) -> Vec<f64> {
        let mut z = x.to_vec();
        axpy(&mut z, 1.0, pooled);
        axpy(&mut z, 1.0, &self.step_emb[step]);
        z
    }

    /// Logits over `candidates` at one decoding step.
    pub fn score(
        &self,
        x: &[f64],
        pooled: &[f64],
        step: usize,
        candidates: &[usize],
    ) -> Result<Vec<f64>> {
        if candidates.is_empty() {
            return Err(Error::Scoring("empty candidate set".to_string()));
        }
        if step >= self.step_emb.len() {
            return Err(Error::Invariant(format!(
                "step {step} beyond k_max {}",
                self.step_emb.len()
            )));
        }
        let z = self.z(x, pooled, step);
        Ok(candidates
            .iter()
            .map(|&a| crate::vecmath::dot(&self.w[a], &z))
            .collect())
    }

    /// Candidate vocabulary ids for a query, sorted ascending. The sort order
    /// is what makes argmax tie-breaking "smallest vocabulary index".
    pub fn candidates(&self, query: &QueryView<'_>, vocab: &VocabIndex) -> Result<Vec<usize>> {
        let mut ids: Vec<usize> = match query.format {
            FormatKind::Extractive => {
                let mut ids = Vec::with_capacity(query.context.len());
                for tok in query.context {
                    let id = vocab.lookup(tok).ok_or_else(|| {
                        Error::Data(format!("context token {tok} not in vocabulary"))
                    })?;
                    ids.push(id);
                }
                ids
            }
            FormatKind::MultipleChoice => {
                let choices = query.choices.ok_or_else(|| {
                    Error::Data("multiple-choice instance without choices".to_string())
                })?;
                let mut ids = Vec::with_capacity(choices.len());
                for tok in choices {
                    let id = vocab.lookup(tok).ok_or_else(|| {
                        Error::Data(format!("choice token {tok} not in vocabulary"))
                    })?;
                    ids.push(id);
                }
                ids
            }
            FormatKind::Abstractive => (0..vocab.len()).collect(),
        };
        ids.sort_unstable();
        ids.dedup();
        if ids.is_empty() {
            return Err(Error::Scoring("empty candidate set".to_string()));
        }
        Ok(ids)
    }

    /// Gold token ids per decoding step, including the stop step when the
    /// answer is shorter than `k_max`.
    fn gold_steps(&self, instance: &QAInstance, vocab: &VocabIndex) -> Result<Vec<usize>> {
        let mut steps = Vec::with_capacity(instance.answer.len() + 1);
        for tok in &instance.answer {
            let id = vocab
                .lookup(tok)
                .ok_or_else(|| Error::Data(format!("answer token {tok} not in vocabulary")))?;
            steps.push(id);
        }
        if instance.format == FormatKind::Abstractive && steps.len() < self.k_max() {
            steps.push(self.stop_token);
        }
        Ok(steps)
    }

    /// Sum of per-step softmax cross-entropies and its analytic gradients.
    pub fn loss_and_grads(
        &self,
        instance: &QAInstance,
        x: &[f64],
        pooled: &[f64],
        vocab: &VocabIndex,
    ) -> Result<(f64, BackboneGrads)> {
        let query = instance.query();
        let candidates = self.candidates(&query, vocab)?;
        let gold_steps = self.gold_steps(instance, vocab)?;
        if instance.format != FormatKind::Abstractive && gold_steps.len() != 1 {
            return Err(Error::Data(format!(
                "{} answers must be single tokens",
                instance.format.name()
            )));
        }

        let dim = self.dim();
        let mut grads = BackboneGrads {
            pooled: vec![0.0; dim],
            ..BackboneGrads::default()
        };
        let mut total_loss = 0.0;

        for (step, &gold) in gold_steps.iter().enumerate() {
            let gold_pos = candidates.binary_search(&gold).map_err(|_| {
                Error::Data(format!(
                    "gold token {} not in candidate set",
                    vocab.token(gold)
                ))
            })?;
            let logits = self.score(x, pooled, step, &candidates)?;
            let probs = softmax(&logits);
            total_loss += -probs[gold_pos].max(f64::MIN_POSITIVE).ln();

            let z = self.z(x, pooled, step);
            let mut dz = vec![0.0; dim];
            for (pos, &cand) in candidates.iter().enumerate() {
                let dlogit = probs[pos] - if pos == gold_pos { 1.0 } else { 0.0 };
                let row = grads.w_rows.entry(cand).or_insert_with(|| vec![0.0; dim]);
                axpy(row, dlogit, &z);
                axpy(&mut dz, dlogit, &self.w[cand]);
            }
            axpy(&mut grads.pooled, 1.0, &dz);
            let step_row = grads
                .step_rows
                .entry(step)
                .or_insert_with(|| vec![0.0; dim]);
            axpy(step_row, 1.0, &dz);
        }

        Ok((total_loss, grads))
    }

    /// One SGD step on the answer embeddings. Step embeddings are fixed, so
    /// their gradients are reported but never applied.
    pub fn apply_grads(&mut self, grads: &BackboneGrads, lr: f64) {
        for (&row, grad) in &grads.w_rows {
            for (x, g) in self.w[row].iter_mut().zip(grad) {
                *x -= lr * g;
            }
        }
    }

    /// Greedy prediction. Single-step argmax for extractive/multiple-choice;
    /// per-step argmax until the stop token or `k_max` for abstractive. Ties
    /// break toward the smallest vocabulary index.
    pub fn predict(
        &self,
        query: &QueryView<'_>,
        x: &[f64],
        pooled: &[f64],
        vocab: &VocabIndex,
    ) -> Result<Vec<String>> {
        let candidates = self.candidates(query, vocab)?;
        match query.format {
            FormatKind::Extractive | FormatKind::MultipleChoice => {
                let logits = self.score(x, pooled, 0, &candidates)?;
                let best = argmax(&logits);
                Ok(vec![vocab.token(candidates[best]).to_string()])
            }
            FormatKind::Abstractive => {
                let mut tokens = Vec::new();
                for step in 0..self.k_max() {
                    let logits = self.score(x, pooled, step, &candidates)?;
                    let best = candidates[argmax(&logits)];
                    if best == self.stop_token {
                        break;
                    }
                    tokens.push(vocab.token(best).to_string());
                }
                Ok(tokens)
            }
        }
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Index of the first maximal element.
fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::STOP_TOKEN;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny_vocab() -> VocabIndex {
        let mut tokens: Vec<String> = (0..6).map(|i| format!("k{i}")).collect();
        tokens.extend((0..6).map(|i| format!("v{i}")));
        tokens.push("sfx0".to_string());
        tokens.push(STOP_TOKEN.to_string());
        VocabIndex::new(&tokens)
    }

    fn extractive_instance() -> QAInstance {
        QAInstance {
            context: ["k0", "v3", "k1", "v4"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            question: vec!["k0".to_string(), "?".to_string()],
            answer: vec!["v3".to_string()],
            choices: None,
            format: FormatKind::Extractive,
            task_id: Some(0),
        }
    }

    fn abstractive_instance() -> QAInstance {
        QAInstance {
            context: ["k0", "v3", "k1", "v4"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            question: vec!["k0".to_string(), "?".to_string()],
            answer: vec!["v3".to_string(), "sfx0".to_string()],
            choices: None,
            format: FormatKind::Abstractive,
            task_id: Some(0),
        }
    }

    fn random_vec<R: Rng>(rng: &mut R, dim: usize) -> Vec<f64> {
        (0..dim).map(|_| rng.gen_range(-0.5..0.5)).collect()
    }

    #[test]
    fn zero_weights_score_uniformly() {
        let vocab = tiny_vocab();
        let backbone = Backbone::new(vocab.len(), 8, 3, vocab.stop_id().unwrap());
        let inst = extractive_instance();
        let x = vec![0.1; 8];
        let (loss, _) = backbone
            .loss_and_grads(&inst, &x, &[0.0; 8], &vocab)
            .unwrap();
        // Four distinct context tokens: cross-entropy is ln 4.
        assert!((loss - 4.0_f64.ln()).abs() < 1e-12);

        let cands = backbone.candidates(&inst.query(), &vocab).unwrap();
        let logits = backbone.score(&x, &[0.0; 8], 0, &cands).unwrap();
        let probs = softmax(&logits);
        for p in probs {
            assert!((p - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn single_candidate_has_zero_loss() {
        let vocab = tiny_vocab();
        let backbone = Backbone::new(vocab.len(), 4, 3, vocab.stop_id().unwrap());
        let inst = QAInstance {
            choices: Some(vec!["v3".to_string()]),
            format: FormatKind::MultipleChoice,
            ..extractive_instance()
        };
        let (loss, _) = backbone
            .loss_and_grads(&inst, &[0.3; 4], &[0.0; 4], &vocab)
            .unwrap();
        assert!(loss.abs() < 1e-12);
    }

    #[test]
    fn softmax_matches_independent_computation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let logits: Vec<f64> = (0..7).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let probs = softmax(&logits);
        let exps: Vec<f64> = logits.iter().map(|l| l.exp()).collect();
        let sum: f64 = exps.iter().sum();
        for (p, e) in probs.iter().zip(&exps) {
            assert!((p - e / sum).abs() < 1e-12);
        }
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn abstractive_length_two_has_three_step_losses() {
        let vocab = tiny_vocab();
        let backbone = Backbone::new(vocab.len(), 4, 3, vocab.stop_id().unwrap());
        let inst = abstractive_instance();
        let (loss, grads) = backbone
            .loss_and_grads(&inst, &[0.0; 4], &[0.0; 4], &vocab)
            .unwrap();
        // Two answer tokens plus the stop step, all uniform over the vocab.
        assert!((loss - 3.0 * (vocab.len() as f64).ln()).abs() < 1e-10);
        assert_eq!(grads.step_rows.len(), 3);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let vocab = tiny_vocab();
        let stop = vocab.stop_id().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let dim = 5;
        let h = 1e-4;

        for case in 0..50 {
            let mut backbone = Backbone::new(vocab.len(), dim, 3, stop);
            for row in &mut backbone.w {
                *row = random_vec(&mut rng, dim);
            }
            for row in backbone.step_emb.iter_mut() {
                *row = random_vec(&mut rng, dim);
            }
            backbone.step_emb[0] = vec![0.0; dim];

            let inst = match case % 3 {
                0 => extractive_instance(),
                1 => abstractive_instance(),
                _ => QAInstance {
                    choices: Some(vec!["v3".to_string(), "v4".to_string(), "v5".to_string()]),
                    format: FormatKind::MultipleChoice,
                    ..extractive_instance()
                },
            };
            let x = random_vec(&mut rng, dim);
            let pooled = random_vec(&mut rng, dim);
            let (_, grads) = backbone.loss_and_grads(&inst, &x, &pooled, &vocab).unwrap();

            let loss_at = |b: &Backbone, p: &[f64]| -> f64 {
                b.loss_and_grads(&inst, &x, p, &vocab).unwrap().0
            };

            let check = |analytic: f64, fd: f64, what: &str| {
                let denom = analytic.abs().max(fd.abs()).max(1e-3);
                assert!(
                    ((analytic - fd) / denom).abs() < 1e-5,
                    "{what}: analytic {analytic} vs fd {fd}"
                );
            };

            // W rows.
            for (&row, grad) in &grads.w_rows {
                for i in 0..dim {
                    let mut bp = backbone.clone();
                    let mut bm = backbone.clone();
                    bp.w[row][i] += h;
                    bm.w[row][i] -= h;
                    let fd = (loss_at(&bp, &pooled) - loss_at(&bm, &pooled)) / (2.0 * h);
                    check(grad[i], fd, &format!("w[{row}][{i}]"));
                }
            }
            // Step rows.
            for (&row, grad) in &grads.step_rows {
                for i in 0..dim {
                    let mut bp = backbone.clone();
                    let mut bm = backbone.clone();
                    bp.step_emb[row][i] += h;
                    bm.step_emb[row][i] -= h;
                    let fd = (loss_at(&bp, &pooled) - loss_at(&bm, &pooled)) / (2.0 * h);
                    check(grad[i], fd, &format!("r[{row}][{i}]"));
                }
            }
            // Pooled prompt.
            for i in 0..dim {
                let mut pp = pooled.clone();
                let mut pm = pooled.clone();
                pp[i] += h;
                pm[i] -= h;
                let fd = (loss_at(&backbone, &pp) - loss_at(&backbone, &pm)) / (2.0 * h);
                check(grads.pooled[i], fd, &format!("pooled[{i}]"));
            }
        }
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let vocab = tiny_vocab();
        let mut backbone = Backbone::new(vocab.len(), 4, 3, vocab.stop_id().unwrap());
        let before = backbone.clone();
        let inst = extractive_instance();
        let (_, grads) = backbone
            .loss_and_grads(&inst, &[0.2; 4], &[0.0; 4], &vocab)
            .unwrap();
        backbone.apply_grads(&grads, 0.0);
        assert_eq!(backbone, before);
    }

    #[test]
    fn step_embeddings_are_fixed_offsets() {
        let vocab = tiny_vocab();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut backbone = Backbone::new(vocab.len(), 4, 3, vocab.stop_id().unwrap());
        for row in &mut backbone.w {
            *row = random_vec(&mut rng, 4);
        }
        // Row 0 zero, later rows unit, all frozen under updates.
        assert!(backbone.step_emb[0].iter().all(|&x| x == 0.0));
        for row in &backbone.step_emb[1..] {
            let n: f64 = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-9);
        }
        let before = backbone.step_emb.clone();
        let inst = abstractive_instance();
        let (_, grads) = backbone
            .loss_and_grads(&inst, &[0.2; 4], &[0.1; 4], &vocab)
            .unwrap();
        assert_eq!(grads.step_rows.len(), 3);
        backbone.apply_grads(&grads, 0.5);
        assert_eq!(backbone.step_emb, before);
        // Identical across constructions: an architecture constant.
        let other = Backbone::new(vocab.len(), 4, 3, vocab.stop_id().unwrap());
        assert_eq!(other.step_emb, backbone.step_emb);
    }

    #[test]
    fn ties_break_to_the_smallest_vocabulary_index() {
        let vocab = tiny_vocab();
        let backbone = Backbone::new(vocab.len(), 4, 3, vocab.stop_id().unwrap());
        let inst = extractive_instance();
        // All-zero weights: every logit equal, so the smallest vocab index
        // among candidates wins ("k0" here).
        let pred = backbone
            .predict(&inst.query(), &[0.4; 4], &[0.0; 4], &vocab)
            .unwrap();
        assert_eq!(pred, vec!["k0".to_string()]);
    }

    #[test]
    fn multiple_choice_predictions_stay_in_choices() {
        let vocab = tiny_vocab();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..50 {
            let mut backbone = Backbone::new(vocab.len(), 6, 3, vocab.stop_id().unwrap());
            for row in &mut backbone.w {
                *row = random_vec(&mut rng, 6);
            }
            let choices = vec!["v1".to_string(), "v4".to_string(), "v5".to_string()];
            let inst = QAInstance {
                choices: Some(choices.clone()),
                format: FormatKind::MultipleChoice,
                ..extractive_instance()
            };
            let x = random_vec(&mut rng, 6);
            let pred = backbone
                .predict(&inst.query(), &x, &[0.0; 6], &vocab)
                .unwrap();
            assert!(choices.contains(&pred[0]));
        }
    }

    #[test]
    fn predictions_always_lie_in_the_candidate_set() {
        use proptest::prelude::*;

        let vocab = tiny_vocab();
        let stop = vocab.stop_id().unwrap();
        let dim = 6;
        let mut runner = proptest::test_runner::TestRunner::deterministic();
        runner
            .run(
                &(
                    proptest::collection::vec(-1.0f64..1.0, 14 * dim),
                    proptest::sample::subsequence((0..6usize).collect::<Vec<_>>(), 3),
                    0u8..3,
                    proptest::collection::vec(-1.0f64..1.0, dim),
                ),
                |(weights, picked, format_code, x)| {
                    let mut backbone = Backbone::new(vocab.len(), dim, 3, stop);
                    for (row, chunk) in backbone.w.iter_mut().zip(weights.chunks(dim)) {
                        row.copy_from_slice(chunk);
                    }
                    let mut context = Vec::new();
                    for &p in &picked {
                        context.push(format!("k{p}"));
                        context.push(format!("v{p}"));
                    }
                    let format = FormatKind::from_code(format_code).unwrap();
                    let choices: Option<Vec<String>> = match format {
                        FormatKind::MultipleChoice => {
                            Some(picked.iter().map(|p| format!("v{p}")).collect())
                        }
                        _ => None,
                    };
                    let inst = QAInstance {
                        context: context.clone(),
                        question: vec![format!("k{}", picked[0]), "?".to_string()],
                        answer: vec![format!("v{}", picked[0])],
                        choices: choices.clone(),
                        format,
                        task_id: None,
                    };
                    let pred = backbone
                        .predict(&inst.query(), &x, &[0.0; 6], &vocab)
                        .unwrap();
                    match format {
                        FormatKind::Extractive => {
                            prop_assert_eq!(pred.len(), 1);
                            prop_assert!(context.contains(&pred[0]));
                        }
                        FormatKind::MultipleChoice => {
                            prop_assert_eq!(pred.len(), 1);
                            prop_assert!(choices.unwrap().contains(&pred[0]));
                        }
                        FormatKind::Abstractive => {
                            prop_assert!(pred.len() <= backbone.k_max());
                            for tok in &pred {
                                prop_assert!(vocab.lookup(tok).is_some());
                                prop_assert_ne!(tok.as_str(), crate::tasks::STOP_TOKEN);
                            }
                        }
                    }
                    Ok(())
                },
            )
            .unwrap();
    }

    #[test]
    fn gold_outside_candidates_is_a_data_error() {
        let vocab = tiny_vocab();
        let backbone = Backbone::new(vocab.len(), 4, 3, vocab.stop_id().unwrap());
        let inst = QAInstance {
            answer: vec!["v5".to_string()], // not in the context
            ..extractive_instance()
        };
        assert!(matches!(
            backbone.loss_and_grads(&inst, &[0.1; 4], &[0.0; 4], &vocab),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn loss_is_nonnegative() {
        let vocab = tiny_vocab();
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for _ in 0..30 {
            let mut backbone = Backbone::new(vocab.len(), 4, 3, vocab.stop_id().unwrap());
            for row in &mut backbone.w {
                *row = random_vec(&mut rng, 4);
            }
            let inst = abstractive_instance();
            let (loss, _) = backbone
                .loss_and_grads(&inst, &random_vec(&mut rng, 4), &[0.0; 4], &vocab)
                .unwrap();
            assert!(loss >= 0.0);
        }
    }
}
