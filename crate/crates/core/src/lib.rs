//! Algorithmic core for a centralized surface/underwater multi-robot SLAM
//! system.
//!
//! A surface vehicle carrying LiDAR acts as the central estimation node for a
//! team of underwater vehicles carrying imaging sonar. Both sensor streams are
//! reduced to 2D point clouds near the waterline, sonar contacts are compressed
//! into rectangle patches for transmission over a low-bandwidth link, and
//! cross-domain loop closures (sonar-to-LiDAR registration) merge every
//! vehicle's dead-reckoned chain into one jointly optimized pose graph.
//!
//! The crate is `no_std` (it allocates through `alloc`) and has no IO: sensor
//! simulation, preprocessing, compression, place recognition, registration,
//! outlier rejection, and the sparse nonlinear solver are all pure functions of
//! their inputs plus explicit seeds. File formats, the scenario runner, and the
//! CLI live in the companion `tideline` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
#[macro_use]
extern crate std;

pub mod codec;
pub mod geom;
pub mod graph;
pub mod mat3;
pub mod odometry;
pub mod pcm;
pub mod placerec;
pub mod registration;
pub mod rng;
pub mod sensing;
pub mod simenv;
pub mod sparse;
pub mod spatial;

pub use geom::{Cloud2, Point2, PolarReturn, Pose2};
