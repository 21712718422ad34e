//! The lifelong training loop.
//!
//! Seen tasks arrive one at a time. Each task runs a per-batch two-stage
//! loop: the key space trains first (triplet loss on the task key with
//! buffer negatives, pull loss on the selected meta keys), then the composed
//! prompt and the backbone train on the answer loss. Task identities used
//! for routing during stage two follow a scheduled-sampling rule: with
//! probability `eps_k = max(0, alpha - k * beta)` (k the 0-based epoch) the
//! ground-truth task prompt is used, otherwise the key space's own inference
//! decides. After each task the open-set threshold is recalibrated and every
//! task's test split is scored into one row of the performance matrix.
//!
//! Prompts of previously trained tasks stay frozen: a sample whose routing
//! lands on an older task still composes with that prompt, but the task-slot
//! gradient is dropped. Shared levels (general, format, meta, unseen) always
//! train.
//!
//! Ablation and baseline modes reuse the same loop with pieces disabled.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::Backbone;
use crate::error::{Error, Result};
use crate::featurizer::{encode, FeatureVector};
use crate::keys::{task_triplet_grad, KeySpace, TaskDecision, TripletForm};
use crate::memory::MemoryBuffer;
use crate::metrics::{score_instance, PerfMatrix};
use crate::prompts::{InitPolicy, PromptConfig, PromptRoute, PromptStore};
use crate::tasks::{mix_seed, QAInstance, QueryView, TaskDescriptor, TaskSuite, VocabIndex};
use crate::vecmath::axpy;

const SALT_MEMORY_RNG: u64 = 0x4255_4646;

/// Training and ablation modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Full mechanism: prompts, keys, memory, rehearsal.
    Diana,
    /// No meta prompts or meta keys.
    DianaWoMeta,
    /// No memory buffer: no triplet negatives, no rehearsal.
    DianaWoMemory,
    /// Sequential fine-tuning of the backbone alone.
    SeqFt,
    /// Sequential fine-tuning plus rehearsal from the buffer.
    Replay,
}

impl Mode {
    pub fn uses_prompts(self) -> bool {
        matches!(self, Mode::Diana | Mode::DianaWoMeta | Mode::DianaWoMemory)
    }

    pub fn uses_memory(self) -> bool {
        matches!(self, Mode::Diana | Mode::DianaWoMeta | Mode::Replay)
    }

    pub fn uses_meta(self) -> bool {
        matches!(self, Mode::Diana | Mode::DianaWoMemory)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Diana => "diana",
            Mode::DianaWoMeta => "diana_wo_meta",
            Mode::DianaWoMemory => "diana_wo_memory",
            Mode::SeqFt => "seq_ft",
            Mode::Replay => "replay",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "diana" => Ok(Mode::Diana),
            "diana_wo_meta" => Ok(Mode::DianaWoMeta),
            "diana_wo_memory" => Ok(Mode::DianaWoMemory),
            "seq_ft" => Ok(Mode::SeqFt),
            "replay" => Ok(Mode::Replay),
            other => Err(Error::Config(format!("unknown mode {other:?}"))),
        }
    }
}

/// Hyperparameters of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Initial ground-truth routing probability.
    pub alpha: f64,
    /// Per-epoch decay of the ground-truth routing probability.
    pub beta: f64,
    pub epochs_per_task: usize,
    pub batch_size: usize,
    pub lr_backbone: f64,
    pub lr_prompts: f64,
    pub lr_keys: f64,
    /// Rehearsal instances mixed into stage two, as a fraction of the batch.
    pub rehearsal_mix: f64,
    /// Probability per batch of also training the format's unseen prompt.
    pub unseen_update_prob: f64,
    pub mode: Mode,
    pub seed: u64,
    /// Reservoir capacity per task.
    pub memory_capacity: usize,
    /// Whether checkpoints include the buffer contents.
    pub checkpoint_memory: bool,
    pub triplet_form: TripletForm,
    pub task_prompt_init: InitPolicy,
    pub prompt: PromptConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 1.0,
            beta: 0.2,
            epochs_per_task: 10,
            batch_size: 16,
            lr_backbone: 0.45,
            lr_prompts: 0.2,
            lr_keys: 0.05,
            rehearsal_mix: 0.2,
            unseen_update_prob: 0.1,
            mode: Mode::Diana,
            seed: 0,
            memory_capacity: 50,
            checkpoint_memory: true,
            triplet_form: TripletForm::default(),
            task_prompt_init: InitPolicy::default(),
            prompt: PromptConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config("alpha must lie in [0, 1]".to_string()));
        }
        if self.beta < 0.0 {
            return Err(Error::Config("beta must be non-negative".to_string()));
        }
        for (name, lr) in [
            ("lr_backbone", self.lr_backbone),
            ("lr_prompts", self.lr_prompts),
            ("lr_keys", self.lr_keys),
        ] {
            if lr < 0.0 || !lr.is_finite() {
                return Err(Error::Config(format!("{name} must be non-negative")));
            }
        }
        if !(0.0..=1.0).contains(&self.rehearsal_mix) {
            return Err(Error::Config(
                "rehearsal_mix must lie in [0, 1]".to_string(),
            ));
        }
        if !(0.0..=1.0).contains(&self.unseen_update_prob) {
            return Err(Error::Config(
                "unseen_update_prob must lie in [0, 1]".to_string(),
            ));
        }
        if self.epochs_per_task == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "epochs_per_task and batch_size must be positive".to_string(),
            ));
        }
        if self.memory_capacity == 0 {
            return Err(Error::Config(
                "memory_capacity must be positive".to_string(),
            ));
        }
        if self.mode == Mode::DianaWoMemory && self.rehearsal_mix > 0.0 {
            return Err(Error::Config(
                "mode diana_wo_memory is incompatible with rehearsal_mix > 0".to_string(),
            ));
        }
        if self.prompt.meta_select == 0 || self.prompt.meta_select > self.prompt.meta_pool {
            return Err(Error::Config(
                "meta_select must lie in 1..=meta_pool".to_string(),
            ));
        }
        Ok(())
    }
}

/// Ground-truth routing probability at 0-based epoch `k`.
pub fn epsilon(k: usize, alpha: f64, beta: f64) -> f64 {
    (alpha - k as f64 * beta).max(0.0)
}

/// Per-epoch scheduled-sampling bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub task_id: usize,
    pub epoch: usize,
    pub epsilon: f64,
    pub ground_truth_routed: usize,
    pub total_routed: usize,
}

/// Routing quality on test data, collected during evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RoutingReport {
    pub seen_correct: usize,
    pub seen_total: usize,
    pub unseen_flagged: usize,
    pub unseen_total: usize,
}

impl RoutingReport {
    pub fn seen_accuracy(&self) -> Option<f64> {
        (self.seen_total > 0).then(|| self.seen_correct as f64 / self.seen_total as f64)
    }

    pub fn unseen_detection_rate(&self) -> Option<f64> {
        (self.unseen_total > 0).then(|| self.unseen_flagged as f64 / self.unseen_total as f64)
    }
}

/// Everything a training run mutates.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub prompts: PromptStore,
    pub keys: KeySpace,
    pub backbone: Backbone,
    pub memory: MemoryBuffer,
    pub matrix: PerfMatrix,
    pub rng: ChaCha8Rng,
    /// Number of completed training stages.
    pub stage: usize,
    pub epoch_stats: Vec<EpochStats>,
    /// Routing report of the most recent evaluation, when routing ran.
    pub last_routing: Option<RoutingReport>,
}

impl TrainState {
    pub fn new(suite: &TaskSuite, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let vocab = suite.vocab_index();
        if vocab.is_empty() {
            return Err(Error::Data("suite has an empty vocabulary".to_string()));
        }
        let stop = vocab.stop_id()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let keys = KeySpace::new(cfg.prompt.meta_pool, cfg.prompt.dim, &mut rng);
        Ok(TrainState {
            prompts: PromptStore::new(&cfg.prompt),
            keys,
            backbone: Backbone::new(vocab.len(), cfg.prompt.dim, suite.config.k_max, stop),
            memory: MemoryBuffer::new(cfg.memory_capacity, mix_seed(cfg.seed, SALT_MEMORY_RNG, 0)),
            matrix: PerfMatrix::default(),
            rng,
            stage: 0,
            epoch_stats: Vec::new(),
            last_routing: None,
        })
    }
}

fn feature_of(instance: &QAInstance, dim: usize) -> Result<FeatureVector> {
    encode(&instance.context, &instance.question, dim)
}

/// Map a routing decision to the prompt slot it selects.
fn route_of(decision: TaskDecision, query_format: crate::tasks::FormatKind) -> PromptRoute {
    match decision {
        TaskDecision::Seen(id) => PromptRoute::Task(id),
        TaskDecision::Unseen => PromptRoute::Unseen(query_format),
    }
}

/// Train one task in place.
pub fn train_task(
    state: &mut TrainState,
    suite: &TaskSuite,
    task: &TaskDescriptor,
    cfg: &TrainConfig,
) -> Result<()> {
    cfg.validate()?;
    if !task.seen {
        return Err(Error::Config(format!(
            "task {} is unseen and cannot be trained",
            task.task_id
        )));
    }
    let vocab = suite.vocab_index();
    let train = &suite.splits_for(task.task_id)?.train;
    if train.is_empty() {
        return Err(Error::Data(format!(
            "task {} has no training data",
            task.task_id
        )));
    }
    let dim = cfg.prompt.dim;
    let features: Vec<FeatureVector> = train
        .iter()
        .map(|inst| feature_of(inst, dim))
        .collect::<Result<_>>()?;

    if cfg.mode.uses_prompts() {
        if state.prompts.task_prompt(task.task_id).is_some() {
            return Err(Error::Invariant(format!(
                "task {} was already trained",
                task.task_id
            )));
        }
        // Key starts at the mean feature of the task's first training batch.
        let first = cfg.batch_size.min(features.len());
        let mut mean = vec![0.0; dim];
        for f in &features[..first] {
            for (m, v) in mean.iter_mut().zip(&f.values) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= first as f64;
        }
        state.keys.add_task_key(task.task_id, mean)?;
        state.prompts.add_task_prompt(
            task.task_id,
            task.format,
            cfg.task_prompt_init,
            &mut state.rng,
        )?;
    }

    let m_select = cfg.prompt.meta_select;
    for epoch in 0..cfg.epochs_per_task {
        let eps = epsilon(epoch, cfg.alpha, cfg.beta);
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut state.rng);
        let mut gt_routed = 0usize;
        let mut total_routed = 0usize;

        for batch in order.chunks(cfg.batch_size) {
            // Stage one: key-space optimization with batch-mean gradients.
            if cfg.mode.uses_prompts() {
                let key = state
                    .keys
                    .task_key(task.task_id)
                    .ok_or_else(|| Error::Routing(format!("no key for task {}", task.task_id)))?
                    .key
                    .clone();
                let mut key_grad = vec![0.0; dim];
                let mut meta_grads: std::collections::BTreeMap<usize, Vec<f64>> =
                    std::collections::BTreeMap::new();
                for &i in batch {
                    let q = &features[i].values;
                    let neg_feature = if cfg.mode.uses_memory() {
                        state
                            .memory
                            .sample_negative(task.task_id, &mut state.rng)
                            .map(|inst| feature_of(inst, dim))
                            .transpose()?
                    } else {
                        None
                    };
                    let grad = task_triplet_grad(
                        q,
                        &key,
                        neg_feature.as_ref().map(|f| f.values.as_slice()),
                        cfg.triplet_form,
                    )?;
                    crate::vecmath::axpy(&mut key_grad, 1.0, &grad);

                    if cfg.mode.uses_meta() {
                        let selected = state.keys.select_meta(q, m_select)?;
                        for idx in selected {
                            let key = &state.keys.meta_keys[idx].key;
                            let entry = meta_grads.entry(idx).or_insert_with(|| vec![0.0; dim]);
                            for ((g, k), x) in entry.iter_mut().zip(key).zip(q) {
                                *g += 2.0 * (k - x) / m_select as f64;
                            }
                        }
                    }
                }
                let scale = 1.0 / batch.len() as f64;
                for g in &mut key_grad {
                    *g *= scale;
                }
                state
                    .keys
                    .update_task_key(task.task_id, &key_grad, cfg.lr_keys)?;
                for (idx, mut grad) in meta_grads {
                    for g in &mut grad {
                        *g *= scale;
                    }
                    state.keys.update_meta_key(idx, &grad, cfg.lr_keys)?;
                }
            }

            // Stage two: prompt and backbone optimization.
            let rehearsal: Vec<QAInstance> =
                if cfg.mode.uses_memory() && cfg.rehearsal_mix > 0.0 && !state.memory.is_empty() {
                    let size = (cfg.rehearsal_mix * batch.len() as f64).round() as usize;
                    state.memory.rehearsal_batch(size, &mut state.rng)
                } else {
                    Vec::new()
                };
            let train_unseen_prompt =
                cfg.mode.uses_prompts() && state.rng.gen_bool(cfg.unseen_update_prob);

            let fresh = batch.iter().map(|&i| (&train[i], Some(&features[i])));
            let replayed = rehearsal.iter().map(|inst| (inst, None));
            let samples: Vec<(&QAInstance, Option<&FeatureVector>)> =
                fresh.chain(replayed).collect();
            let n_samples = samples.len() as f64;

            // Backbone and prompts take per-sample SGD steps; the batch's
            // mean pooled gradient is kept for the unseen-prompt update.
            let mut pooled_grad_acc = vec![0.0; dim];
            let mut composed_len = 0usize;

            for (inst, cached) in samples {
                let feature;
                let x = match cached {
                    Some(f) => &f.values,
                    None => {
                        feature = feature_of(inst, dim)?;
                        &feature.values
                    }
                };

                if cfg.mode.uses_prompts() {
                    let gt_task = inst.task_id.ok_or_else(|| {
                        Error::Invariant("training instance without task id".to_string())
                    })?;
                    total_routed += 1;
                    let route = if state.rng.gen_bool(eps) {
                        gt_routed += 1;
                        PromptRoute::Task(gt_task)
                    } else {
                        let (decision, _) = state.keys.infer_task(x)?;
                        route_of(decision, inst.format)
                    };
                    let metas = if cfg.mode.uses_meta() {
                        state.keys.select_meta(x, m_select)?
                    } else {
                        Vec::new()
                    };
                    let composed = state.prompts.compose(inst.format, route, &metas)?;
                    let pooled = composed.pooled();
                    let (_, grads) = state.backbone.loss_and_grads(inst, x, &pooled, &vocab)?;
                    state.backbone.apply_grads(&grads, cfg.lr_backbone);
                    // Prompts of other tasks are frozen; only the current
                    // task's slot (or an unseen slot) may move.
                    let update_task_slot = match route {
                        PromptRoute::Task(id) => id == task.task_id,
                        PromptRoute::Unseen(_) => true,
                    };
                    composed_len = composed.len();
                    state.prompts.apply_pooled_grad(
                        &composed.provenance,
                        &grads.pooled,
                        cfg.lr_prompts,
                        composed_len,
                        update_task_slot,
                    )?;
                    axpy(&mut pooled_grad_acc, 1.0 / n_samples, &grads.pooled);
                } else {
                    let pooled = vec![0.0; dim];
                    let (_, grads) = state.backbone.loss_and_grads(inst, x, &pooled, &vocab)?;
                    state.backbone.apply_grads(&grads, cfg.lr_backbone);
                }
            }

            if train_unseen_prompt && composed_len > 0 {
                // The batch's mean pooled gradient also trains the current
                // format's unseen prompt.
                state.prompts.apply_grad_to_unseen(
                    task.format,
                    &pooled_grad_acc,
                    cfg.lr_prompts,
                    composed_len,
                );
            }

            if cfg.mode.uses_memory() {
                for &i in batch {
                    state.memory.observe(train[i].clone())?;
                }
            }
        }

        state.epoch_stats.push(EpochStats {
            task_id: task.task_id,
            epoch,
            epsilon: eps,
            ground_truth_routed: gt_routed,
            total_routed,
        });
    }

    state.stage += 1;
    Ok(())
}

/// Predict the answer for one query, routing by key similarity alone.
///
/// Returns the prediction and the routing decision (absent in modes without
/// prompts). The query view carries no task identity by construction.
pub fn predict_query(
    state: &TrainState,
    cfg: &TrainConfig,
    vocab: &VocabIndex,
    query: &QueryView<'_>,
) -> Result<(Vec<String>, Option<TaskDecision>)> {
    let x = encode(query.context, query.question, cfg.prompt.dim)?;
    if cfg.mode.uses_prompts() {
        let (decision, _) = state.keys.infer_task(&x.values)?;
        let route = route_of(decision, query.format);
        let metas = if cfg.mode.uses_meta() {
            state.keys.select_meta(&x.values, cfg.prompt.meta_select)?
        } else {
            Vec::new()
        };
        let composed = state.prompts.compose(query.format, route, &metas)?;
        let pooled = composed.pooled();
        let pred = state.backbone.predict(query, &x.values, &pooled, vocab)?;
        Ok((pred, Some(decision)))
    } else {
        let pooled = vec![0.0; cfg.prompt.dim];
        let pred = state.backbone.predict(query, &x.values, &pooled, vocab)?;
        Ok((pred, None))
    }
}

/// Score every task's test split. Returns one performance-matrix row indexed
/// by task id, plus routing quality bookkeeping.
pub fn evaluate_tasks(
    state: &TrainState,
    suite: &TaskSuite,
    cfg: &TrainConfig,
) -> Result<(Vec<f64>, RoutingReport)> {
    let vocab = suite.vocab_index();
    let mut row = vec![0.0; suite.tasks.len()];
    let mut report = RoutingReport::default();
    for task in &suite.tasks {
        let splits = suite.splits_for(task.task_id)?;
        if splits.test.is_empty() {
            return Err(Error::Data(format!(
                "task {} has no test data",
                task.task_id
            )));
        }
        let mut total = 0.0;
        for inst in &splits.test {
            let (pred, decision) = predict_query(state, cfg, &vocab, &inst.query())?;
            total += score_instance(task.format, &pred, &inst.answer)?;
            if let Some(decision) = decision {
                if task.seen {
                    report.seen_total += 1;
                    if decision == TaskDecision::Seen(task.task_id) {
                        report.seen_correct += 1;
                    }
                } else {
                    report.unseen_total += 1;
                    if decision == TaskDecision::Unseen {
                        report.unseen_flagged += 1;
                    }
                }
            }
        }
        row[task.task_id] = total / splits.test.len() as f64;
    }
    Ok((row, report))
}

/// Recalibrate the open-set threshold from the validation splits of every
/// task trained so far, each routed to its ground-truth key.
pub fn calibrate_threshold(
    state: &mut TrainState,
    suite: &TaskSuite,
    cfg: &TrainConfig,
) -> Result<()> {
    let mut distances = Vec::new();
    for task in suite.seen_tasks() {
        let Some(key) = state.keys.task_key(task.task_id) else {
            continue;
        };
        for inst in &suite.splits_for(task.task_id)?.val {
            let x = feature_of(inst, cfg.prompt.dim)?;
            distances.push(crate::vecmath::euclidean(&x.values, &key.key));
        }
    }
    state.keys.calibrate(&distances)?;
    Ok(())
}

/// Train all seen tasks in order, evaluating after every stage.
pub fn run_sequence(suite: &TaskSuite, cfg: &TrainConfig) -> Result<(TrainState, PerfMatrix)> {
    let mut state = TrainState::new(suite, cfg)?;
    let seen: Vec<TaskDescriptor> = suite.seen_tasks().cloned().collect();
    if seen.is_empty() {
        return Err(Error::Config("suite has no seen tasks".to_string()));
    }
    for task in &seen {
        train_task(&mut state, suite, task, cfg)?;
        if cfg.mode.uses_prompts() {
            calibrate_threshold(&mut state, suite, cfg)?;
        }
        let (row, report) = evaluate_tasks(&state, suite, cfg)?;
        state.matrix.push_row(row)?;
        if cfg.mode.uses_prompts() {
            state.last_routing = Some(report);
        }
    }
    let matrix = state.matrix.clone();
    Ok((state, matrix))
}
