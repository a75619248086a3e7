//! Desk-scale two-step teacher/student distillation for streaming acoustic
//! models: a minimal reverse-mode tensor tape, weighted finite-state acceptor
//! machinery with LF-MMI forward-backward, MSE hidden-layer and sequence-level
//! distillation objectives, a CNN + transformer acoustic model with
//! chunk-masked streaming attention, a deterministic synthetic speech task,
//! and the training drivers tying them together.

pub mod autodiff;
pub mod chunk;
pub mod fst;
pub mod lfmmi;
pub mod model;
pub mod toydata;
pub mod train;
pub mod wer;
