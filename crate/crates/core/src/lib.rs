//! Keypose-conditioned motion in-betweening for animation curves.

pub mod error;
pub mod gradcheck;
pub mod heads;
pub mod inference;
pub mod io;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod pose;
pub mod rotation;
pub mod schedule;
pub mod synthgen;
pub mod training;

pub use error::{CheckpointError, Error, Result};
pub use pose::{CharacterSpec, Controller, ControllerKind, MotionSequence, NormalizationStats};
pub use schedule::{Provenance, Schedule};
