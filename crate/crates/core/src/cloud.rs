//! Point-cloud data model: the payload passed between all pipeline stages.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Coordinate frame a cloud lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CoordFrame {
    /// Sensor-local frame of a single scan.
    Vehicle,
    /// Accumulated frame shared by the whole recording.
    World,
}

/// One LiDAR detection: position plus normalized reflectivity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarkPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    /// Normalized to [0, 1]; sensor-specific intensity models are upstream.
    pub reflectivity: f64,
}

impl MarkPoint {
    pub fn new(x: f64, y: f64, z: f64, reflectivity: f64) -> Self {
        MarkPoint {
            x,
            y,
            z,
            reflectivity,
        }
    }

    pub fn position(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    /// Checks the type invariants: finite coordinates, reflectivity in [0,1].
    pub fn validate(&self) -> std::result::Result<(), String> {
        if !(self.x.is_finite() && self.y.is_finite() && self.z.is_finite()) {
            return Err("non-finite coordinate".into());
        }
        if !(0.0..=1.0).contains(&self.reflectivity) || self.reflectivity.is_nan() {
            return Err(format!("reflectivity {} out of [0,1]", self.reflectivity));
        }
        Ok(())
    }
}

/// Ordered collection of points tagged with their coordinate frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    pub points: Vec<MarkPoint>,
    pub frame: CoordFrame,
}

impl PointCloud {
    pub fn empty(frame: CoordFrame) -> Self {
        PointCloud {
            points: Vec::new(),
            frame,
        }
    }

    pub fn new(points: Vec<MarkPoint>, frame: CoordFrame) -> Self {
        PointCloud { points, frame }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn positions(&self) -> Vec<Vector3<f64>> {
        self.points.iter().map(|p| p.position()).collect()
    }
}

/// 4-DoF sensor pose: world translation plus yaw about world Z.
///
/// Roll and pitch are deliberately absent; road-surface attitude is handled
/// by the per-frame ground plane instead.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub translation: Vector3<f64>,
    /// Radians in (-pi, pi].
    pub yaw: f64,
}

impl Pose {
    pub fn new(translation: Vector3<f64>, yaw: f64) -> Self {
        Pose {
            translation,
            yaw: crate::geom::normalize_angle(yaw),
        }
    }

    pub fn identity() -> Self {
        Pose {
            translation: Vector3::zeros(),
            yaw: 0.0,
        }
    }

    /// Vehicle -> world: rotate by yaw about Z, then translate.
    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let (s, c) = self.yaw.sin_cos();
        Vector3::new(
            c * p.x - s * p.y + self.translation.x,
            s * p.x + c * p.y + self.translation.y,
            p.z + self.translation.z,
        )
    }

    /// World -> vehicle.
    pub fn apply_inverse(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let d = p - self.translation;
        let (s, c) = self.yaw.sin_cos();
        Vector3::new(c * d.x + s * d.y, -s * d.x + c * d.y, d.z)
    }
}

/// One scan: vehicle-frame cloud, pose, and a monotonic timestamp.
#[derive(Debug, Clone)]
pub struct Frame {
    pub cloud: PointCloud,
    pub pose: Pose,
    pub timestamp: f64,
}

/// Transform a frame's cloud into the world frame.
pub fn to_world(frame: &Frame) -> Result<PointCloud> {
    if frame.cloud.frame != CoordFrame::Vehicle {
        return Err(Error::Structural(
            "to_world expects a vehicle-frame cloud".into(),
        ));
    }
    let points = frame
        .cloud
        .points
        .iter()
        .map(|p| {
            let w = frame.pose.apply(&p.position());
            MarkPoint::new(w.x, w.y, w.z, p.reflectivity)
        })
        .collect();
    Ok(PointCloud::new(points, CoordFrame::World))
}

/// Concatenate world-frame clouds, preserving input order.
pub fn merge_world(clouds: &[PointCloud]) -> Result<PointCloud> {
    let mut out = PointCloud::empty(CoordFrame::World);
    for (i, c) in clouds.iter().enumerate() {
        if c.frame != CoordFrame::World {
            return Err(Error::Structural(format!(
                "merge_world: cloud {i} is not in the world frame"
            )));
        }
        out.points.extend_from_slice(&c.points);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn frame_with(points: Vec<MarkPoint>, pose: Pose) -> Frame {
        Frame {
            cloud: PointCloud::new(points, CoordFrame::Vehicle),
            pose,
            timestamp: 0.0,
        }
    }

    #[test]
    fn identity_pose_is_noop() {
        let f = frame_with(vec![MarkPoint::new(1.0, 2.0, 0.1, 0.8)], Pose::identity());
        let w = to_world(&f).unwrap();
        assert_eq!(w.points, f.cloud.points);
        assert_eq!(w.frame, CoordFrame::World);
    }

    #[test]
    fn pure_translation() {
        let pose = Pose::new(Vector3::new(10.0, 0.0, 0.0), 0.0);
        let f = frame_with(vec![MarkPoint::new(1.0, 0.0, 0.0, 0.5)], pose);
        let w = to_world(&f).unwrap();
        assert_relative_eq!(w.points[0].x, 11.0);
        assert_relative_eq!(w.points[0].y, 0.0);
    }

    #[test]
    fn pure_rotation_quarter_turn() {
        let pose = Pose::new(Vector3::zeros(), std::f64::consts::FRAC_PI_2);
        let f = frame_with(vec![MarkPoint::new(1.0, 0.0, 0.0, 0.5)], pose);
        let w = to_world(&f).unwrap();
        assert_relative_eq!(w.points[0].x, 0.0, epsilon = 1e-12);
        assert_relative_eq!(w.points[0].y, 1.0, epsilon = 1e-12);
        assert_relative_eq!(w.points[0].z, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn merge_preserves_order_and_count() {
        let a = PointCloud::new(
            vec![
                MarkPoint::new(0.0, 0.0, 0.0, 0.1),
                MarkPoint::new(1.0, 0.0, 0.0, 0.2),
                MarkPoint::new(2.0, 0.0, 0.0, 0.3),
            ],
            CoordFrame::World,
        );
        let b = PointCloud::new(
            vec![
                MarkPoint::new(3.0, 0.0, 0.0, 0.4),
                MarkPoint::new(4.0, 0.0, 0.0, 0.5),
            ],
            CoordFrame::World,
        );
        let m = merge_world(&[a.clone(), b]).unwrap();
        assert_eq!(m.len(), 5);
        assert_eq!(m.points[0], a.points[0]);
        assert_relative_eq!(m.points[4].x, 4.0);
    }

    #[test]
    fn merge_rejects_vehicle_frame() {
        let v = PointCloud::empty(CoordFrame::Vehicle);
        assert!(matches!(
            merge_world(&[v]),
            Err(Error::Structural(_))
        ));
    }

    #[test]
    fn merge_of_nothing_is_empty_world() {
        let m = merge_world(&[]).unwrap();
        assert!(m.is_empty());
        assert_eq!(m.frame, CoordFrame::World);
    }

    proptest! {
        /// Rigid transform preserves pairwise distances to 1e-9.
        #[test]
        fn to_world_is_isometric(
            pts in proptest::collection::vec((-100.0..100.0f64, -100.0..100.0f64, -5.0..5.0f64), 2..20),
            tx in -1000.0..1000.0f64,
            ty in -1000.0..1000.0f64,
            yaw in -3.14..3.14f64,
        ) {
            let points: Vec<MarkPoint> = pts.iter().map(|&(x, y, z)| MarkPoint::new(x, y, z, 0.5)).collect();
            let pose = Pose::new(Vector3::new(tx, ty, 0.0), yaw);
            let f = frame_with(points.clone(), pose);
            let w = to_world(&f).unwrap();
            for i in 0..points.len() {
                for j in (i + 1)..points.len() {
                    let before = (points[i].position() - points[j].position()).norm();
                    let after = (w.points[i].position() - w.points[j].position()).norm();
                    prop_assert!((before - after).abs() < 1e-9);
                }
            }
        }

        /// Applying the inverse pose undoes the transform to 1e-9.
        #[test]
        fn inverse_pose_round_trips(
            x in -100.0..100.0f64,
            y in -100.0..100.0f64,
            z in -5.0..5.0f64,
            tx in -1000.0..1000.0f64,
            yaw in -3.14..3.14f64,
        ) {
            let pose = Pose::new(Vector3::new(tx, -tx, 1.0), yaw);
            let p = Vector3::new(x, y, z);
            let back = pose.apply_inverse(&pose.apply(&p));
            prop_assert!((back - p).norm() < 1e-9);
        }
    }
}
