//! Reverse-mode autodiff and the GraphSAGE mixture-of-experts model.

mod checkpoint;
mod gradcheck;
mod graph;
mod model;
mod tensor;

pub use checkpoint::{CHECKPOINT_MAGIC, CHECKPOINT_VERSION, GATING_PER_TASK};
pub use gradcheck::{check_gradients, GradCheck};
pub use graph::{Graph, Var};
pub use model::{
    encode, gate, graphsage_layer, load_balance_loss, moe_combine, outputs, ForwardOptions, ForwardVars,
    GraphInput, Model, ModelConfig, ModelOutput, N_TASKS, TASKS,
};
pub use tensor::Tensor;
