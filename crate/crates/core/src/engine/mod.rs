//! Parameter storage, reverse-mode gradients and the optimizer.

pub mod adam;
pub mod dropout;
pub mod init;
pub mod param;
pub mod tape;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use dropout::{sample_dropout_mask, DropoutMask};
pub use init::{dct_frequencies, dct_init, dct_value, uniform_init};
pub use param::{zero_grads, FieldParams, ParamRef, ParamStore, ParamTensor, Params, ParamsMut, Slot};
pub use tape::{composite_ray, Activation, Gather, NodeId, Tape};
