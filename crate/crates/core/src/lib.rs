//! Boundary-aware transformer for binary lesion segmentation.
//!
//! * [`keypatch`] builds the per-patch boundary supervision target from a mask.
//! * [`model`] is the network: convolutional stem, transformer encoder with
//!   boundary-wise attention gates, query-embedding gate and atrous head,
//!   with hand-written reverse-mode gradients.
//! * [`loss`] is the hybrid Dice plus key-patch cross-entropy objective.
//! * [`data`] generates synthetic lesion datasets and handles their files.
//! * [`harness`] trains, evaluates and gradient-checks the model.

pub mod data;
pub mod harness;
pub mod keypatch;
pub mod loss;
pub mod model;
pub mod pnm;
