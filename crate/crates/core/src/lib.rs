//! Dynamic-shifting instance clustering for LiDAR panoptic segmentation.
//!
//! The crate is `no_std` with `alloc`. It carries the clustering kernels
//! (flat-kernel mean shift, BFS, DBSCAN and the learnable dynamic-shifting
//! module with its hand-derived backward pass), consensus fusion of
//! semantic and instance predictions, frame-agnostic 4D association,
//! panoptic metrics (PQ/SQ/RQ, PQ†, mIoU, LSTQ) and a seeded synthetic
//! scene generator that stands in for a trained backbone.
//!
//! File formats, the CLI and parallel benchmark drivers live in the
//! companion `dsnet` crate.
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod cluster;
pub mod dshift;
mod error;
pub mod fusion;
pub mod geom;
pub mod metrics;
pub mod pipeline;
pub mod synth;
pub mod temporal;
pub mod types;

pub use error::{Error, Result};
pub use types::{
    decode_label, encode_label, ClassConfig, ClassId, ClassInfo, ClassKind, Frame, InstanceId,
    Matrix, PanopticLabeling, Point, Pose, Vec3,
};
