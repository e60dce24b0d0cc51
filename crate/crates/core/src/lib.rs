//! Confidence-based endogenous rewards, the triviality-corrected variant, and
//! reference-augmented GRPO on small softmax sequence policies.
//!
//! The crate is organised bottom-up:
//!
//! - [`vocab`]: vocabularies, tokenization and corpus ingestion.
//! - [`policy`]: tabular n-gram and linear neural softmax policies.
//! - [`reward`]: the reward kernel (EndoR, information gain, gate, TCER,
//!   coverage and the one-step optimizer).
//! - [`sft`]: maximum-likelihood fitting of the generalist and specialist.
//! - [`grpo`]: rollout groups, augmented-group advantages, the clipped
//!   surrogate with KL penalty, and the training loop.
//! - [`diagnostics`]: run-log analysis and sentence-level reward metrics.
//! - [`testbed`]: synthetic grammars and canned experiments.
//! - [`verify`]: randomized property suites over the reward kernel.

pub mod diagnostics;
pub mod error;
pub mod grpo;
pub mod json;
pub mod policy;
pub mod reward;
pub mod rng;
pub mod sft;
pub mod testbed;
pub mod verify;
pub mod vocab;

pub use error::{Error, Result};
