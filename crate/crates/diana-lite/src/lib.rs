//! Lifelong question answering with hierarchically organized prompt pools,
//! key-vector task routing, and memory rehearsal, over a self-contained
//! differentiable backbone.
//!
//! A model learns a sequence of toy QA tasks in three formats (extractive,
//! abstractive, multiple-choice) without being told task identities at test
//! time. Knowledge lives at four granularities of trainable prompt vectors
//! (general, per-format, per-task, and a per-input selection from a meta
//! pool); learned key vectors route each input to a task prompt or flag it
//! as belonging to no seen task. A per-task reservoir buffer supplies triplet
//! negatives for key training and rehearsal batches against forgetting.
//!
//! Everything is deterministic under a seed: the synthetic task generator,
//! the frozen hashing featurizer, training, and evaluation.
//!
//! ## Modules
//!
//! * [`tasks`] — domain types and the synthetic key:value task generator
//! * [`featurizer`] — frozen signed-hashing encoder producing unit vectors
//! * [`prompts`] — the prompt hierarchy and its composition
//! * [`keys`] — task/meta key vectors, triplet training, open-set detection
//! * [`backbone`] — prompt-conditioned linear-softmax scorer with analytic
//!   gradients
//! * [`memory`] — per-task reservoir buffer
//! * [`trainer`] — the lifelong loop, scheduled sampling, ablation modes
//! * [`metrics`] — per-format scorers and the lifelong metrics
//! * [`checkpoint`] — lossless JSON persistence of a run
//! * [`cli`] — the `diana` binary: `gen-tasks`, `train`, `eval`
//!
//! ## Quick start
//!
//! ```
//! use diana_lite::tasks::{generate_suite, SuiteConfig};
//! use diana_lite::trainer::{run_sequence, Mode, TrainConfig};
//! use diana_lite::metrics::{compute_a_n, compute_f_n};
//!
//! let config = SuiteConfig {
//!     n_train: 30,
//!     n_val: 8,
//!     n_test: 10,
//!     pairs_per_namespace: 8,
//!     context_pairs_min: 4,
//!     context_pairs_max: 6,
//!     seen_per_format: 1,
//!     unseen_per_format: 1,
//!     ..SuiteConfig::default()
//! };
//! let suite = generate_suite(7, &config).unwrap();
//! let train = TrainConfig {
//!     mode: Mode::Diana,
//!     epochs_per_task: 2,
//!     seed: 7,
//!     ..TrainConfig::default()
//! };
//! let (state, matrix) = run_sequence(&suite, &train).unwrap();
//! let seen: Vec<usize> = suite.seen_tasks().map(|t| t.task_id).collect();
//! println!("A_N = {}", compute_a_n(&matrix, &seen).unwrap());
//! println!("F_N = {}", compute_f_n(&matrix, &seen).unwrap());
//! assert_eq!(matrix.n_stages(), 3);
//! assert!(state.keys.tau.is_some());
//! ```
//!
//! The `examples/` directory holds one runnable walkthrough per capability;
//! start with `lifelong_run`.

pub mod backbone;
pub mod checkpoint;
pub mod cli;
pub mod error;
pub mod featurizer;
pub mod keys;
pub mod memory;
pub mod metrics;
pub mod prompts;
pub mod tasks;
pub mod trainer;
pub(crate) mod vecmath;

pub use error::{Error, Result};
pub use tasks::{FormatKind, QAInstance, TaskDescriptor, TaskSuite};
pub use trainer::{Mode, TrainConfig, TrainState};
