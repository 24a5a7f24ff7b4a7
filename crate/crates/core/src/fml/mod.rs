//! Memory-based flow-map surrogate of the drag/lift dynamics.

pub mod flowmap;
pub mod io;
pub mod mlp;
pub mod train;

pub use flowmap::{
    advance_window, batch_loss_and_grad, flowmap_step, input_width, multistep_loss, rollout,
    rollout_with_control_grad, FlowMapModel, MemoryWindow, Normalization, Unroll,
};
pub use io::{load_model, save_model, ModelFile, MODEL_FORMAT_VERSION};
pub use mlp::{Activation, ForwardCache, Layer, Mlp, MlpGrads};
pub use train::{flowmap_widths, train_flowmap, train_from, TrainConfig, TrainReport};
