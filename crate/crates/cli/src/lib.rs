//! Batch tooling around `freqdehaze-core`: toy dataset synthesis, image and
//! checkpoint I/O, the two-stage training loop, inference and evaluation.
//!
//! The core crate holds all numerics and owns no files; everything here is
//! plumbing with three hard rules. Outputs are written to a temp sibling
//! and renamed, so failures never leave partial files. All randomness
//! flows from an explicit seed through fixed stream ids, so identical
//! flags give byte-identical outputs. And error values carry enough
//! context (paths, line numbers, tensor names) that the process exit
//! message alone usually locates the problem.

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod error;
pub mod fsutil;
pub mod gradsuite;
pub mod image_io;
pub mod report;
pub mod synth;
pub mod trainer;
