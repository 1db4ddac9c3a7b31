//! Sampling engine for generative pseudo-force fields.
//!
//! A [`provider::ForceProvider`] maps a structure to pseudo-forces
//! `F = −2(X − X̂₀)`; the samplers in [`sampler`] turn those forces into
//! denoising steps, noise-level estimates and diffusion updates.

#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::needless_range_loop,
    clippy::too_many_arguments
)]

pub mod alignment;
pub mod cli;
pub mod config;
pub mod error;
pub mod geometry;
pub mod metrics;
pub mod pes;
pub mod provider;
pub mod remote;
pub mod sampler;
pub mod schedule;
pub mod service;
pub mod shape_model;
pub mod xyz;

pub use error::{GpffError, Result};
pub use geometry::{Coords, Structure};
