//! Reconstruction of drivable OpenDRIVE road descriptions from sparse,
//! odometry-free LiDAR lane-marking point clouds, plus the evaluation
//! machinery (map-distance metrics, continuity validation, synthetic
//! ground-truth generation) used to verify the pipeline.

pub mod cloud;
pub mod clustering;
pub mod config;
pub mod error;
pub mod evaluation;
pub mod extraction;
pub mod geom;
pub mod ingest;
pub mod lane_builder;
pub mod odr;
pub mod pipeline;
pub mod spatial;
pub mod synth;
pub mod topology;

pub use cloud::{CoordFrame, Frame, MarkPoint, PointCloud, Pose};
pub use error::{Error, Result};
