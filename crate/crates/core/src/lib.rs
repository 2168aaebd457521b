//! Multi-camera 3D detection association and long-term tracking in
//! bird's-eye-view world coordinates.
//!
//! The crate covers everything downstream of the neural detectors:
//! pinhole projection, circle NMS, 2D–3D detection association,
//! multi-view ReID aggregation, a hierarchical message-passing graph
//! tracker with a global merging block, a Kalman-filter baseline,
//! HOTA/CLEAR evaluation, and a deterministic scene simulator that feeds
//! all of them.

pub mod association;
pub mod detections;
pub mod error;
pub mod geometry;
pub mod graph;
pub mod io;
pub mod kf;
pub mod metrics;
pub mod pipeline;
pub mod reid;
pub mod sim;
pub mod tracks;

pub use error::{Error, Result};
