//! Debias tuning: a tiny self-contained language model, the bias losses, and
//! the training loops that connect them.
//!
//! The submodules split along clean seams:
//!
//! - [`model`] — the toy LM itself (embedding, pooled context, one hidden
//!   layer) with forward, backward, and checkpointing;
//! - [`losses`] — the three differentiable bias losses and their gradients;
//! - [`train`] — pretraining on a corpus and bias tuning on probe sets,
//!   including leave-one-out loss ablations;
//! - [`experiment`] — a packaged end-to-end demo experiment with fixtures.

pub mod experiment;
pub mod losses;
pub mod model;
pub mod train;

pub use experiment::{pretrained_demo_model, AblationRow, ExperimentError, ToyExperiment};
pub use losses::{check_gradients, compute_losses, loss_gradients, LossBreakdown, LossConfig, LossError};
pub use model::{ModelError, ToyLm, EOS, UNK};
pub use train::{pretrain, tune, LossSet, TrainError, TuneOptions};
