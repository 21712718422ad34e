//! All trainable prompt vectors and their hierarchical composition.
//!
//! Four levels of granularity, concatenated in a fixed order per input:
//! a general prompt shared by everything, one prompt per answer format, one
//! prompt per seen task (plus a dedicated per-format prompt for inputs judged
//! to belong to no seen task), and a selection from a pool of short meta
//! prompts chosen per input by key similarity. The composed prompt is
//! mean-pooled into a single vector before it reaches the backbone, so a
//! downstream gradient distributes equally (1/len) over every constituent
//! vector.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tasks::{FormatKind, ALL_FORMATS};

/// A sequence of trainable vectors, all of the same dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prompt {
    pub vectors: Vec<Vec<f64>>,
}

impl Prompt {
    pub fn zeros(len: usize, dim: usize) -> Self {
        Prompt {
            vectors: vec![vec![0.0; dim]; len],
        }
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Mean of all vectors in the prompt.
    pub fn mean(&self) -> Vec<f64> {
        let dim = self.vectors.first().map_or(0, Vec::len);
        let mut out = vec![0.0; dim];
        for v in &self.vectors {
            for (o, x) in out.iter_mut().zip(v) {
                *o += x;
            }
        }
        let n = self.vectors.len().max(1) as f64;
        for o in &mut out {
            *o /= n;
        }
        out
    }
}

/// Sizing of the prompt hierarchy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptConfig {
    pub dim: usize,
    pub general_len: usize,
    pub format_len: usize,
    pub task_len: usize,
    /// Number of meta prompts in the pool.
    pub meta_pool: usize,
    /// Vectors per meta prompt.
    pub meta_len: usize,
    /// Meta prompts selected per input.
    pub meta_select: usize,
}

impl Default for PromptConfig {
    fn default() -> Self {
        PromptConfig {
            dim: 64,
            general_len: 4,
            format_len: 4,
            task_len: 8,
            meta_pool: 20,
            meta_len: 2,
            meta_select: 4,
        }
    }
}

impl PromptConfig {
    /// Total composed length when `meta_count` meta prompts are selected.
    pub fn composed_len(&self, meta_count: usize) -> usize {
        self.general_len + self.format_len + self.task_len + meta_count * self.meta_len
    }
}

/// How a fresh task prompt is initialized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitPolicy {
    /// Copies of the task's format-prompt mean plus Gaussian noise.
    WarmStart { sigma: f64 },
    /// Pure Gaussian noise.
    Gaussian { sigma: f64 },
    /// All zeros.
    Zeros,
}

impl Default for InitPolicy {
    fn default() -> Self {
        InitPolicy::WarmStart { sigma: 0.01 }
    }
}

/// Which prompt fills the task-level slot of a composition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PromptRoute {
    /// The prompt of a specific seen task.
    Task(usize),
    /// The dedicated unseen-task prompt of a format.
    Unseen(FormatKind),
}

/// Record of which pieces a composition used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub format: FormatKind,
    pub route: PromptRoute,
    pub meta_indices: Vec<usize>,
}

/// The concatenation `[general; format; task-or-unseen; selected meta]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComposedPrompt {
    pub vectors: Vec<Vec<f64>>,
    pub provenance: Provenance,
}

impl ComposedPrompt {
    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Arithmetic mean of the composed vectors; the interface between the
    /// prompt hierarchy and the backbone.
    pub fn pooled(&self) -> Vec<f64> {
        let dim = self.vectors.first().map_or(0, Vec::len);
        let mut out = vec![0.0; dim];
        for v in &self.vectors {
            for (o, x) in out.iter_mut().zip(v) {
                *o += x;
            }
        }
        let n = self.vectors.len().max(1) as f64;
        for o in &mut out {
            *o /= n;
        }
        out
    }
}

/// Owner of every trainable prompt vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptStore {
    pub config: PromptConfig,
    pub general: Prompt,
    /// One prompt per format, indexed by format code.
    pub format_prompts: Vec<Prompt>,
    /// One prompt per seen task, in arrival order.
    pub task_prompts: Vec<(usize, Prompt)>,
    /// One prompt per format for inputs routed to no seen task.
    pub unseen_prompts: Vec<Prompt>,
    /// Fixed-size pool of short shared prompts.
    pub meta_pool: Vec<Prompt>,
}

impl PromptStore {
    /// Fresh store with all vectors at zero.
    pub fn new(config: &PromptConfig) -> Self {
        PromptStore {
            config: config.clone(),
            general: Prompt::zeros(config.general_len, config.dim),
            format_prompts: ALL_FORMATS
                .iter()
                .map(|_| Prompt::zeros(config.format_len, config.dim))
                .collect(),
            task_prompts: Vec::new(),
            unseen_prompts: ALL_FORMATS
                .iter()
                .map(|_| Prompt::zeros(config.task_len, config.dim))
                .collect(),
            meta_pool: (0..config.meta_pool)
                .map(|_| Prompt::zeros(config.meta_len, config.dim))
                .collect(),
        }
    }

    pub fn format_prompt(&self, format: FormatKind) -> &Prompt {
        &self.format_prompts[format.code() as usize]
    }

    pub fn unseen_prompt(&self, format: FormatKind) -> &Prompt {
        &self.unseen_prompts[format.code() as usize]
    }

    pub fn task_prompt(&self, task_id: usize) -> Option<&Prompt> {
        self.task_prompts
            .iter()
            .find(|(id, _)| *id == task_id)
            .map(|(_, p)| p)
    }

    /// Append a prompt for a task arriving in the sequence.
    pub fn add_task_prompt<R: Rng>(
        &mut self,
        task_id: usize,
        format: FormatKind,
        policy: InitPolicy,
        rng: &mut R,
    ) -> Result<()> {
        if self.task_prompt(task_id).is_some() {
            return Err(Error::Invariant(format!(
                "task {task_id} already has a prompt"
            )));
        }
        let dim = self.config.dim;
        let len = self.config.task_len;
        let prompt = match policy {
            InitPolicy::Zeros => Prompt::zeros(len, dim),
            InitPolicy::Gaussian { sigma } => {
                let normal = Normal::new(0.0, sigma)
                    .map_err(|e| Error::Config(format!("invalid init sigma: {e}")))?;
                Prompt {
                    vectors: (0..len)
                        .map(|_| (0..dim).map(|_| normal.sample(rng)).collect())
                        .collect(),
                }
            }
            InitPolicy::WarmStart { sigma } => {
                let base = self.format_prompt(format).mean();
                let normal = Normal::new(0.0, sigma)
                    .map_err(|e| Error::Config(format!("invalid init sigma: {e}")))?;
                Prompt {
                    vectors: (0..len)
                        .map(|_| base.iter().map(|b| b + normal.sample(rng)).collect())
                        .collect(),
                }
            }
        };
        self.task_prompts.push((task_id, prompt));
        Ok(())
    }

    /// Build the composed prompt for one input.
    ///
    /// `meta_selection` may be empty (meta level disabled), otherwise indices
    /// must be distinct and within the pool.
    pub fn compose(
        &self,
        format: FormatKind,
        route: PromptRoute,
        meta_selection: &[usize],
    ) -> Result<ComposedPrompt> {
        let task_prompt = match route {
            PromptRoute::Task(id) => self
                .task_prompt(id)
                .ok_or_else(|| Error::Routing(format!("no prompt for task {id}")))?,
            PromptRoute::Unseen(f) => self.unseen_prompt(f),
        };

        let mut seen = std::collections::HashSet::new();
        for &idx in meta_selection {
            if idx >= self.meta_pool.len() {
                return Err(Error::Invariant(format!(
                    "meta index {idx} outside pool of {}",
                    self.meta_pool.len()
                )));
            }
            if !seen.insert(idx) {
                return Err(Error::Invariant(format!("repeated meta index {idx}")));
            }
        }

        let mut vectors = Vec::with_capacity(self.config.composed_len(meta_selection.len()));
        vectors.extend(self.general.vectors.iter().cloned());
        vectors.extend(self.format_prompt(format).vectors.iter().cloned());
        vectors.extend(task_prompt.vectors.iter().cloned());
        for &idx in meta_selection {
            vectors.extend(self.meta_pool[idx].vectors.iter().cloned());
        }

        Ok(ComposedPrompt {
            vectors,
            provenance: Provenance {
                format,
                route,
                meta_indices: meta_selection.to_vec(),
            },
        })
    }

    /// Apply one SGD step from a pooled-prompt gradient.
    ///
    /// Mean pooling sends the same `grad / composed_len` to every constituent
    /// vector. `update_task_slot` gates the task-level slot so a caller can
    /// keep prompts of other tasks frozen.
    pub fn apply_pooled_grad(
        &mut self,
        provenance: &Provenance,
        grad: &[f64],
        lr: f64,
        composed_len: usize,
        update_task_slot: bool,
    ) -> Result<()> {
        if composed_len == 0 {
            return Err(Error::Invariant("empty composed prompt".to_string()));
        }
        let step = lr / composed_len as f64;
        let apply = |prompt: &mut Prompt| {
            for v in &mut prompt.vectors {
                for (x, g) in v.iter_mut().zip(grad) {
                    *x -= step * g;
                }
            }
        };

        apply(&mut self.general);
        apply(&mut self.format_prompts[provenance.format.code() as usize]);
        if update_task_slot {
            match provenance.route {
                PromptRoute::Task(id) => {
                    let prompt = self
                        .task_prompts
                        .iter_mut()
                        .find(|(tid, _)| *tid == id)
                        .map(|(_, p)| p)
                        .ok_or_else(|| Error::Routing(format!("no prompt for task {id}")))?;
                    apply(prompt);
                }
                PromptRoute::Unseen(f) => apply(&mut self.unseen_prompts[f.code() as usize]),
            }
        }
        for &idx in &provenance.meta_indices {
            apply(&mut self.meta_pool[idx]);
        }
        Ok(())
    }

    /// Apply a pooled-prompt gradient to the unseen prompt of a format,
    /// regardless of where the composition was routed.
    pub fn apply_grad_to_unseen(
        &mut self,
        format: FormatKind,
        grad: &[f64],
        lr: f64,
        composed_len: usize,
    ) {
        if composed_len == 0 {
            return;
        }
        let step = lr / composed_len as f64;
        for v in &mut self.unseen_prompts[format.code() as usize].vectors {
            for (x, g) in v.iter_mut().zip(grad) {
                *x -= step * g;
            }
        }
    }
}
