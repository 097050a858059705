//! Fixed-graph differentiable core and the refinement network.

mod graph;
mod model;
mod optim;

pub use graph::{Gradients, Graph, Tensor, Var};
pub use model::{
    positional_encoding, AttentionBlockConfig, AttentionMap, Checkpoint, ModelConfig, NamedTensor, Pooling, Session,
    ShenetParams, CHECKPOINT_VERSION,
};
pub use optim::{adam_step, loss_cs, loss_target, loss_tra, loss_tra_graph, Adam, AdamConfig, LossChoice};

#[cfg(test)]
mod tests;
