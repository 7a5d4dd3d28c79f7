//! Tape-based autodiff, parameter storage, checkpointing and optimization.

pub mod adam;
pub mod gradcheck;
pub mod stft;
pub mod store;
pub mod tape;

pub use adam::Adam;
pub use store::{load_matching, Checkpoint, LoadReport, Param, ParamStore};
pub use tape::{Tape, Tid};
