//! The distributed neural controller (DNC): a small fully connected network
//! trained by imitation on teacher trajectories and evaluated independently
//! by every agent on its local view.

mod adam;
mod dnc;
mod mlp;
mod train;

pub use adam::{adam_step, AdamParameters, AdamState};
pub use dnc::{
    dnc_agent_action, dnc_step, extract_samples, read_dataset, write_dataset, DncController, TrainingSample,
};
pub use mlp::{mlp_forward, mlp_gradient, parameter_count, InputScaling, MlpModel, DNC_LAYERS};
pub use train::{train, EpochLoss, TrainConfig};
