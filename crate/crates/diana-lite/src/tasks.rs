//! Task domain types and the deterministic synthetic task generator.
//!
//! Tasks are toy key:value retrieval problems in three QA formats. A context
//! renders a handful of `k<i> v<j>` pairs, the question names one present key,
//! and the answer is derived from the paired value according to the format:
//!
//! * extractive: the value token itself (it occurs verbatim in the context),
//! * multiple-choice: the value token, with three distractor values from the
//!   same context offered as choices,
//! * abstractive: the value token followed by a task-specific suffix token.
//!
//! Each task draws its pairs from a private key/value namespace; a
//! configurable fraction `overlap` of pair slots is drawn from one namespace
//! shared by every task instead. The shared namespace uses a single
//! key-to-value mapping across the whole suite, which is what makes knowledge
//! transfer between tasks (and to unseen tasks) possible at all. Generation is
//! a pure function of `(seed, config)`.

use std::collections::{HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::{self, Deserializer};
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};

/// Token reserved for "end of answer" in the decoding loop.
pub const STOP_TOKEN: &str = "<stop>";

/// The three supported QA formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FormatKind {
    Extractive,
    Abstractive,
    MultipleChoice,
}

/// All formats, in stable code order.
pub const ALL_FORMATS: [FormatKind; 3] = [
    FormatKind::Extractive,
    FormatKind::Abstractive,
    FormatKind::MultipleChoice,
];

impl FormatKind {
    /// Stable integer code used everywhere the format is serialized.
    pub fn code(self) -> u8 {
        match self {
            FormatKind::Extractive => 0,
            FormatKind::Abstractive => 1,
            FormatKind::MultipleChoice => 2,
        }
    }

    /// Inverse of [`FormatKind::code`].
    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(FormatKind::Extractive),
            1 => Ok(FormatKind::Abstractive),
            2 => Ok(FormatKind::MultipleChoice),
            other => Err(Error::Data(format!("unknown format code {other}"))),
        }
    }

    /// Short lowercase name, used in task names and reports.
    pub fn name(self) -> &'static str {
        match self {
            FormatKind::Extractive => "extractive",
            FormatKind::Abstractive => "abstractive",
            FormatKind::MultipleChoice => "multiple_choice",
        }
    }
}

impl Serialize for FormatKind {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_u8(self.code())
    }
}

impl<'de> Deserialize<'de> for FormatKind {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let code = u8::deserialize(deserializer)?;
        FormatKind::from_code(code).map_err(de::Error::custom)
    }
}

/// One task in a suite.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskDescriptor {
    pub task_id: usize,
    pub format: FormatKind,
    pub name: String,
    /// False for held-out tasks that never appear in the training sequence.
    pub seen: bool,
}

/// One (context, question, answer) sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QAInstance {
    pub context: Vec<String>,
    pub question: Vec<String>,
    pub answer: Vec<String>,
    /// Present for multiple-choice instances only.
    pub choices: Option<Vec<String>>,
    pub format: FormatKind,
    /// Present in training/validation data, absent at test time.
    pub task_id: Option<usize>,
}

impl QAInstance {
    /// The answer-free view handed to inference. Carries no task identity.
    pub fn query(&self) -> QueryView<'_> {
        QueryView {
            context: &self.context,
            question: &self.question,
            choices: self.choices.as_deref(),
            format: self.format,
        }
    }
}

/// What the model is allowed to look at when predicting: context, question,
/// choices, and the (observable) answer format. No answer, no task identity.
#[derive(Debug, Clone, Copy)]
pub struct QueryView<'a> {
    pub context: &'a [String],
    pub question: &'a [String],
    pub choices: Option<&'a [String]>,
    pub format: FormatKind,
}

/// Train/validation/test splits for one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSplits {
    pub task_id: usize,
    pub train: Vec<QAInstance>,
    pub val: Vec<QAInstance>,
    pub test: Vec<QAInstance>,
}

/// A full generated suite: descriptors, per-task splits, and the global
/// answer vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSuite {
    pub seed: u64,
    pub config: SuiteConfig,
    pub tasks: Vec<TaskDescriptor>,
    pub splits: Vec<TaskSplits>,
    pub vocab: Vec<String>,
}

/// Generation parameters for one task's splits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    /// Key/value pairs per namespace; each namespace holds one fixed
    /// key-to-value bijection.
    pub pairs_per_namespace: usize,
    /// First pair index of this task's private namespace.
    pub namespace_offset: usize,
    /// Number of tasks the suite was sized for (fixes the vocabulary).
    pub total_tasks: usize,
    /// Fraction of context slots drawn from the shared namespace.
    pub overlap: f64,
    pub context_pairs_min: usize,
    pub context_pairs_max: usize,
    /// Upper bound on abstractive answer length.
    pub k_max: usize,
}

impl GenConfig {
    fn validate(&self) -> Result<()> {
        if self.n_train == 0 || self.n_val == 0 || self.n_test == 0 {
            return Err(Error::Config(
                "split counts must all be positive".to_string(),
            ));
        }
        if !(0.0..=1.0).contains(&self.overlap) {
            return Err(Error::Config(format!(
                "overlap must lie in [0, 1], got {}",
                self.overlap
            )));
        }
        if self.context_pairs_min < 4 || self.context_pairs_max < self.context_pairs_min {
            return Err(Error::Config(
                "context pair range must satisfy 4 <= min <= max".to_string(),
            ));
        }
        if self.pairs_per_namespace < self.context_pairs_max {
            return Err(Error::Config(
                "namespace must hold at least context_pairs_max pairs".to_string(),
            ));
        }
        if self.k_max < 2 {
            return Err(Error::Config("k_max must be at least 2".to_string()));
        }
        Ok(())
    }
}

/// Suite-level generation parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteConfig {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub pairs_per_namespace: usize,
    pub overlap: f64,
    pub context_pairs_min: usize,
    pub context_pairs_max: usize,
    pub k_max: usize,
    /// Seen tasks per format, interleaved across formats in task order.
    pub seen_per_format: usize,
    /// Held-out tasks per format, appended after all seen tasks.
    pub unseen_per_format: usize,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            n_train: 200,
            n_val: 50,
            n_test: 100,
            pairs_per_namespace: 12,
            overlap: 0.2,
            context_pairs_min: 6,
            context_pairs_max: 8,
            k_max: 3,
            seen_per_format: 2,
            unseen_per_format: 1,
        }
    }
}

impl SuiteConfig {
    /// Total number of tasks (seen + unseen).
    pub fn total_tasks(&self) -> usize {
        (self.seen_per_format + self.unseen_per_format) * ALL_FORMATS.len()
    }

    /// Task descriptors in suite order: seen tasks first (formats
    /// interleaved), then unseen tasks.
    pub fn descriptors(&self) -> Vec<TaskDescriptor> {
        let mut tasks = Vec::new();
        for round in 0..self.seen_per_format {
            for format in ALL_FORMATS {
                let task_id = tasks.len();
                tasks.push(TaskDescriptor {
                    task_id,
                    format,
                    name: format!("{}-{}-{}", format.name(), "seen", round),
                    seen: true,
                });
            }
        }
        for round in 0..self.unseen_per_format {
            for format in ALL_FORMATS {
                let task_id = tasks.len();
                tasks.push(TaskDescriptor {
                    task_id,
                    format,
                    name: format!("{}-{}-{}", format.name(), "unseen", round),
                    seen: false,
                });
            }
        }
        tasks
    }

    fn gen_config_for(&self, task_id: usize) -> GenConfig {
        GenConfig {
            n_train: self.n_train,
            n_val: self.n_val,
            n_test: self.n_test,
            pairs_per_namespace: self.pairs_per_namespace,
            // Namespace 0 is shared; task namespaces start right after it.
            namespace_offset: (task_id + 1) * self.pairs_per_namespace,
            total_tasks: self.total_tasks(),
            overlap: self.overlap,
            context_pairs_min: self.context_pairs_min,
            context_pairs_max: self.context_pairs_max,
            k_max: self.k_max,
        }
    }

    /// The global answer vocabulary implied by this config: every key and
    /// value token of every namespace, one suffix token per task, and the
    /// stop token last.
    pub fn vocab(&self) -> Vec<String> {
        let total = self.total_tasks();
        let pair_count = (total + 1) * self.pairs_per_namespace;
        let mut vocab = Vec::with_capacity(2 * pair_count + total + 1);
        for i in 0..pair_count {
            vocab.push(format!("k{i}"));
        }
        for i in 0..pair_count {
            vocab.push(format!("v{i}"));
        }
        for t in 0..total {
            vocab.push(format!("sfx{t}"));
        }
        vocab.push(STOP_TOKEN.to_string());
        vocab
    }
}

/// Token-to-index lookup over a suite vocabulary.
#[derive(Debug, Clone)]
pub struct VocabIndex {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl VocabIndex {
    pub fn new(tokens: &[String]) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        VocabIndex {
            tokens: tokens.to_vec(),
            index,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn lookup(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Index of the reserved stop token.
    pub fn stop_id(&self) -> Result<usize> {
        self.lookup(STOP_TOKEN)
            .ok_or_else(|| Error::Data("vocabulary has no stop token".to_string()))
    }
}

impl TaskSuite {
    pub fn vocab_index(&self) -> VocabIndex {
        VocabIndex::new(&self.vocab)
    }

    pub fn seen_tasks(&self) -> impl Iterator<Item = &TaskDescriptor> {
        self.tasks.iter().filter(|t| t.seen)
    }

    pub fn unseen_tasks(&self) -> impl Iterator<Item = &TaskDescriptor> {
        self.tasks.iter().filter(|t| !t.seen)
    }

    pub fn splits_for(&self, task_id: usize) -> Result<&TaskSplits> {
        self.splits
            .iter()
            .find(|s| s.task_id == task_id)
            .ok_or_else(|| Error::Data(format!("no splits for task {task_id}")))
    }
}

// Distinct stream salts keep per-purpose rngs independent under one seed.
const SALT_SHARED_MAPPING: u64 = 0x5348_4152_4544;
const SALT_TASK_MAPPING: u64 = 0x4d41_5050;
const SALT_TASK_DATA: u64 = 0x4441_5441;

pub(crate) fn mix_seed(seed: u64, salt: u64, lane: u64) -> u64 {
    // splitmix64 finalizer over (seed, salt, lane)
    let mut z = seed
        .wrapping_add(salt.wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .wrapping_add(lane.wrapping_mul(0xbf58_476d_1ce4_e5b9));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// The fixed key-to-value bijection of one namespace: pair slot `j` maps the
/// key token `k{base+j}` to the value token `v{base+perm[j]}`.
fn namespace_mapping(seed: u64, salt: u64, lane: u64, pairs: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, salt, lane));
    let mut perm: Vec<usize> = (0..pairs).collect();
    perm.shuffle(&mut rng);
    perm
}

struct PairPool {
    /// (key token, value token) for every pair of one namespace.
    pairs: Vec<(String, String)>,
}

impl PairPool {
    fn new(base: usize, perm: &[usize]) -> Self {
        let pairs = perm
            .iter()
            .enumerate()
            .map(|(j, &p)| (format!("k{}", base + j), format!("v{}", base + p)))
            .collect();
        PairPool { pairs }
    }
}

/// Generate the train/val/test splits of a single task.
///
/// Pure: the same `(seed, descriptor, config)` always produces identical
/// splits. Unseen tasks get a test split only.
pub fn generate_task(
    seed: u64,
    descriptor: &TaskDescriptor,
    config: &GenConfig,
) -> Result<TaskSplits> {
    config.validate()?;

    let pairs = config.pairs_per_namespace;
    let shared_perm = namespace_mapping(seed, SALT_SHARED_MAPPING, 0, pairs);
    let task_perm = namespace_mapping(seed, SALT_TASK_MAPPING, descriptor.task_id as u64, pairs);
    let shared_pool = PairPool::new(0, &shared_perm);
    let task_pool = PairPool::new(config.namespace_offset, &task_perm);
    let suffix = format!("sfx{}", descriptor.task_id);

    let mut rng =
        ChaCha8Rng::seed_from_u64(mix_seed(seed, SALT_TASK_DATA, descriptor.task_id as u64));

    let (n_train, n_val) = if descriptor.seen {
        (config.n_train, config.n_val)
    } else {
        (0, 0)
    };
    let total = n_train + n_val + config.n_test;

    let mut seen_keys: HashSet<String> = HashSet::new();
    let mut instances = Vec::with_capacity(total);
    let mut attempts = 0usize;
    while instances.len() < total {
        attempts += 1;
        if attempts > total * 1000 {
            return Err(Error::Invariant(
                "task generator failed to produce enough distinct instances".to_string(),
            ));
        }
        let inst = sample_instance(
            &mut rng,
            descriptor,
            config,
            &shared_pool,
            &task_pool,
            &suffix,
        );
        // Splits must be disjoint; dedupe on the rendered (context, question).
        let key = format!("{}|{}", inst.context.join(" "), inst.question.join(" "));
        if seen_keys.insert(key) {
            instances.push(inst);
        }
    }

    let mut rest = instances.split_off(n_train);
    let test = rest.split_off(n_val);
    let mut splits = TaskSplits {
        task_id: descriptor.task_id,
        train: instances,
        val: rest,
        test,
    };
    // Task identity is hidden at test time.
    for inst in &mut splits.test {
        inst.task_id = None;
    }
    Ok(splits)
}

fn sample_instance(
    rng: &mut ChaCha8Rng,
    descriptor: &TaskDescriptor,
    config: &GenConfig,
    shared_pool: &PairPool,
    task_pool: &PairPool,
    suffix: &str,
) -> QAInstance {
    let n_pairs = rng.gen_range(config.context_pairs_min..=config.context_pairs_max);

    // Per slot: pick the shared namespace with probability `overlap`, then an
    // unused pair from the chosen pool. Namespaces are disjoint and each pool
    // is a bijection, so keys and values are distinct within a context.
    let mut used_shared: HashSet<usize> = HashSet::new();
    let mut used_task: HashSet<usize> = HashSet::new();
    let mut chosen: Vec<(String, String)> = Vec::with_capacity(n_pairs);
    for _ in 0..n_pairs {
        let from_shared = rng.gen_bool(config.overlap);
        let (pool, used) = if from_shared {
            (shared_pool, &mut used_shared)
        } else {
            (task_pool, &mut used_task)
        };
        loop {
            let idx = rng.gen_range(0..pool.pairs.len());
            if used.insert(idx) {
                chosen.push(pool.pairs[idx].clone());
                break;
            }
        }
    }

    let mut context = Vec::with_capacity(2 * n_pairs);
    for (k, v) in &chosen {
        context.push(k.clone());
        context.push(v.clone());
    }

    let target = rng.gen_range(0..n_pairs);
    let (q_key, q_value) = chosen[target].clone();
    let question = vec![q_key, "?".to_string()];

    let (answer, choices) = match descriptor.format {
        FormatKind::Extractive => (vec![q_value], None),
        FormatKind::Abstractive => (vec![q_value, suffix.to_string()], None),
        FormatKind::MultipleChoice => {
            let mut others: Vec<usize> = (0..n_pairs).filter(|&i| i != target).collect();
            others.shuffle(rng);
            let mut choices: Vec<String> = others
                .into_iter()
                .take(3)
                .map(|i| chosen[i].1.clone())
                .collect();
            choices.push(q_value.clone());
            choices.shuffle(rng);
            (vec![q_value], Some(choices))
        }
    };

    QAInstance {
        context,
        question,
        answer,
        choices,
        format: descriptor.format,
        task_id: Some(descriptor.task_id),
    }
}

/// Generate a full task suite.
pub fn generate_suite(seed: u64, config: &SuiteConfig) -> Result<TaskSuite> {
    let tasks = config.descriptors();
    if tasks.is_empty() {
        return Err(Error::Config("suite has no tasks".to_string()));
    }
    let mut ids = HashSet::new();
    for task in &tasks {
        if !ids.insert(task.task_id) {
            return Err(Error::Config(format!("duplicate task id {}", task.task_id)));
        }
    }

    let mut splits = Vec::with_capacity(tasks.len());
    for task in &tasks {
        let gen = config.gen_config_for(task.task_id);
        splits.push(generate_task(seed, task, &gen)?);
    }

    Ok(TaskSuite {
        seed,
        config: config.clone(),
        tasks,
        splits,
        vocab: config.vocab(),
    })
}
