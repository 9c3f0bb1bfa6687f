//! The contrastive probe: two linear projections into a shared space,
//! trained so that a class's text vector is closest (by cosine) to the
//! vectors of its own audio clips.

mod loss;
mod params;
mod sampling;
mod train;

pub use loss::{contrastive_loss, loss_gradients, Example, Gradients, LossOptions};
pub use params::{init_params, Diagnostics, ProbeParams};
pub use sampling::{sample_negative_rounds, sample_negatives, ClipCounts};
pub use train::{train_probe, TrainConfig, TrainReport};

pub(crate) use train::unit_projections;
