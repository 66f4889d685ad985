//! Deep image prior: a U-Net written from scratch with its reverse-mode
//! gradient, the DIP loss, Adam with cosine annealing and iterate selection.

mod engine;
pub mod layers;
mod optim;
mod unet;

pub use engine::{
    dip_loss, dip_loss_grad, dip_reconstruct, dip_reconstruct_multi, select_iterate, DipConfig,
    DipOutcome, LossTerms, MeanPenalty, Pick, SelectionMode,
};
pub use optim::{adam_step, cosine_lr, AdamState};
pub use unet::{
    parameter_count, unet_forward, unet_init, unet_vjp, Evaluated, Head, NetworkParams, Slot,
    UNetConfig,
};
