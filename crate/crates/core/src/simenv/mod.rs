//! Deterministic synthetic littoral worlds and sensor simulation.
//!
//! Generates 2D waterfront environments (seawalls, piers, pilings, pylons,
//! ships) whose structures carry a height attribute and above/below-water
//! visibility flags, then simulates both sensing domains against them:
//! polar sonar contact grids for underwater vehicles and spherical LiDAR
//! returns (with waterline mirror noise) for the surface vehicle, plus
//! dead-reckoning sensor streams.
//!
//! Everything is a pure function of its inputs and an explicit seed
//! ([`crate::rng`]), so identical configurations replay bit-identically.

mod sensors;
mod trajectory;
mod world;

pub use sensors::{
    frame_presence, raycast, simulate_dead_reckoning, simulate_dvl_compass, simulate_lidar,
    simulate_lidar_traced, simulate_sonar, simulate_sonar_traced, DeadReckoningParams,
    DvlCompassSample, SensorKind, SensorSpec,
};
pub use trajectory::{sample_truth, RobotKind, TimedPose, TrajectorySpec};
pub use world::{
    generate_world, generate_world_with, Domain, Structure, StructureKind, WorldModel,
    WorldOptions, WorldTemplate,
};
