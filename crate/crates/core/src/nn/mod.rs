//! Minimal differentiable stack: tensors, an eager reverse-mode tape, MLP
//! and Bi-LSTM layers, Adam and finite-difference gradient checks.

mod adam;
mod gradcheck;
mod graph;
mod layers;
mod params;
mod tensor;

pub use adam::{adam_step, clip_global_norm, AdamConfig, AdamState};
pub use gradcheck::{finite_diff_check, FdOptions, GradCheckReport, Probe};
pub use graph::{Gradients, Graph, Var};
pub use layers::{
    bilstm_forward, logistic, mlp_forward, BiLstmParams, Dense, LstmDirection, MlpParams,
    OutputActivation,
};
pub use params::{ParamId, ParamStore};
pub use tensor::Tensor;
