//! Small CPU neural-network engine with hand-written backward passes.

pub mod checkpoint;
pub mod layers;
pub mod model;
pub mod optim;
pub mod tensor;

pub use checkpoint::Checkpoint;
pub use model::{ArchitectureSpec, ConvStage, Gradients, InputBatch, Layout, ModelParams, Network};
pub use optim::{Adam, AdamConfig, PlateauAction, PlateauConfig, PlateauScheduler};
pub use tensor::{Real, Tensor};
