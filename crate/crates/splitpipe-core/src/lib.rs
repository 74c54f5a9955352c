//! Core library for planning split CNN inference across two accelerators.
//!
//! Everything in this crate is pure computation: model representation and
//! shape inference ([`cnn_ir`]), reference models and a random generator
//! ([`model_zoo`]), a parametric device/link cost oracle ([`cost_model`]),
//! split enumeration with an analytic pipeline model and a discrete-event
//! simulator ([`pipeline`]), a small reverse-mode autodiff engine
//! ([`tensor`]), the GNN split predictor ([`gnn`]) and labeled-corpus
//! construction ([`dataset`]). File formats, CLI and anything that touches
//! the OS live in the companion `splitpipe-cli` crate.
//!
//! The crate is `no_std` (with `alloc`) so the planner can be embedded on
//! the device that hosts the first pipeline stage.

#![no_std]

extern crate alloc;

#[cfg(any(test, feature = "std"))]
extern crate std;

pub mod cnn_ir;
pub mod cost_model;
pub mod dataset;
pub mod gnn;
pub mod model_zoo;
pub mod pipeline;
pub mod tensor;
