//! Non-rigid structure from motion with multi-layer sparse dictionaries, and a
//! subspace-projection loss that distills the recovered depth into a pose
//! regressor trained from 2D landmarks only.

pub mod autodiff;
pub mod camera;
pub mod checks;
pub mod checkpoint;
pub mod distill;
pub mod error;
pub mod evaluate;
pub mod geometry;
pub mod jsonl;
pub mod nrsfm;
pub mod optim;
pub mod pipeline;
pub mod sparse;
pub mod student;
pub mod synth;

pub use error::{Error, Result};
