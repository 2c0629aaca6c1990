//! Per-frame lane-marking extraction: range crop, RANSAC ground plane,
//! reflectivity filtering, and world-frame radius outlier removal.

use nalgebra::Vector3;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::{CoordFrame, PointCloud};
use crate::error::{Error, Result};
use crate::spatial::GridIndex3;

/// Road plane estimate `normal . p = offset` with `|normal| = 1` and the
/// normal pointing upward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundPlane {
    pub normal: Vector3<f64>,
    pub offset: f64,
    pub inlier_count: usize,
}

impl GroundPlane {
    /// Signed height of `p` above the plane.
    pub fn signed_distance(&self, p: &Vector3<f64>) -> f64 {
        self.normal.dot(p) - self.offset
    }
}

/// A per-frame ground plane carried into the world frame; feeds the
/// superelevation profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlaneSample {
    /// Where the plane was observed (the frame's pose translation).
    pub position: Vector3<f64>,
    /// World-frame plane normal, unit, pointing up.
    pub normal: Vector3<f64>,
    pub inlier_count: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractionConfig {
    /// Maximum sensor range in meters; points beyond it are cropped.
    pub max_range: f64,
    /// Sensor mounting height; points above it are cropped.
    pub sensor_height: f64,
    /// Artificial upward shift of the fitted plane. 15 cm matches the
    /// average European curbstone height.
    pub plane_raise: f64,
    /// Markings must reflect at least this fraction.
    pub reflectivity_threshold: f64,
    /// Radius for the world-frame neighbor count.
    pub outlier_radius: f64,
    /// Minimum number of *other* points within `outlier_radius`.
    pub outlier_min_neighbors: usize,
    pub ransac_iterations: usize,
    pub ransac_inlier_tol: f64,
    pub rng_seed: u64,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        ExtractionConfig {
            max_range: 150.0,
            sensor_height: 2.0,
            plane_raise: 0.15,
            reflectivity_threshold: 0.5,
            outlier_radius: 0.5,
            outlier_min_neighbors: 4,
            ransac_iterations: 200,
            ransac_inlier_tol: 0.05,
            rng_seed: 0,
        }
    }
}

impl ExtractionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_range <= 0.0
            || self.plane_raise <= 0.0
            || self.outlier_radius <= 0.0
            || self.ransac_inlier_tol <= 0.0
        {
            return Err(Error::Config("extraction lengths must be positive".into()));
        }
        if !(0.0 < self.reflectivity_threshold && self.reflectivity_threshold < 1.0) {
            return Err(Error::Config(
                "reflectivity_threshold must lie in (0,1)".into(),
            ));
        }
        if self.outlier_min_neighbors < 1 {
            return Err(Error::Config("outlier_min_neighbors must be >= 1".into()));
        }
        if self.ransac_iterations == 0 {
            return Err(Error::Config("ransac_iterations must be >= 1".into()));
        }
        Ok(())
    }
}

/// Drop points beyond the sensor range or above the mounting height.
pub fn crop(cloud: &PointCloud, cfg: &ExtractionConfig) -> Result<PointCloud> {
    if cloud.frame != CoordFrame::Vehicle {
        return Err(Error::Structural("crop expects a vehicle-frame cloud".into()));
    }
    let points = cloud
        .points
        .iter()
        .filter(|p| p.position().norm() <= cfg.max_range && p.z <= cfg.sensor_height)
        .copied()
        .collect();
    Ok(PointCloud::new(points, cloud.frame))
}

/// Total-least-squares plane through a point set: plane through the centroid
/// whose normal is the smallest covariance eigenvector.
fn tls_plane(points: &[Vector3<f64>]) -> Option<(Vector3<f64>, f64)> {
    if points.len() < 3 {
        return None;
    }
    let n = points.len() as f64;
    let centroid = points.iter().sum::<Vector3<f64>>() / n;
    let mut cov = nalgebra::Matrix3::zeros();
    for p in points {
        let d = p - centroid;
        cov += d * d.transpose();
    }
    cov /= n;
    let eig = cov.symmetric_eigen();
    let mut smallest = 0;
    for i in 1..3 {
        if eig.eigenvalues[i] < eig.eigenvalues[smallest] {
            smallest = i;
        }
    }
    let mut normal = eig.eigenvectors.column(smallest).into_owned();
    let norm = normal.norm();
    if norm == 0.0 {
        return None;
    }
    normal /= norm;
    // Degenerate (collinear) sets have two vanishing eigenvalues.
    let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if vals[1] < 1e-18 {
        return None;
    }
    if normal.z < 0.0 {
        normal = -normal;
    }
    Some((normal, normal.dot(&centroid)))
}

/// RANSAC plane estimation with total-least-squares refinement on the final
/// inlier set. Deterministic for a fixed `rng_seed`.
pub fn fit_ground_plane(cloud: &PointCloud, cfg: &ExtractionConfig) -> Result<GroundPlane> {
    let pts = cloud.positions();
    if pts.len() < 3 {
        return Err(Error::Estimation(format!(
            "ground plane needs >= 3 points, got {}",
            pts.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let tol = cfg.ransac_inlier_tol;
    let mut best: Option<(usize, Vector3<f64>, f64)> = None;
    for _ in 0..cfg.ransac_iterations {
        let i = rng.gen_range(0..pts.len());
        let j = rng.gen_range(0..pts.len());
        let k = rng.gen_range(0..pts.len());
        if i == j || j == k || i == k {
            continue;
        }
        let n = (pts[j] - pts[i]).cross(&(pts[k] - pts[i]));
        let norm = n.norm();
        if norm < 1e-12 {
            continue;
        }
        let n = n / norm;
        let off = n.dot(&pts[i]);
        let count = pts.iter().filter(|p| (n.dot(p) - off).abs() <= tol).count();
        if best.as_ref().is_none_or(|(c, _, _)| count > *c) {
            best = Some((count, n, off));
        }
    }
    let (_, mut normal, mut offset) =
        best.ok_or_else(|| Error::Estimation("ground plane: degenerate point set".into()))?;

    // Refine: alternate least-squares fit and inlier reclassification.
    let mut inliers: Vec<Vector3<f64>> = Vec::new();
    for _ in 0..3 {
        inliers = pts
            .iter()
            .filter(|p| (normal.dot(p) - offset).abs() <= tol)
            .copied()
            .collect();
        match tls_plane(&inliers) {
            Some((n, off)) => {
                normal = n;
                offset = off;
            }
            None => break,
        }
    }
    if inliers.len() < 3 {
        return Err(Error::Estimation("ground plane: degenerate point set".into()));
    }
    if normal.z < 0.0 {
        normal = -normal;
        offset = -offset;
    }
    Ok(GroundPlane {
        normal,
        offset,
        inlier_count: pts
            .iter()
            .filter(|p| (normal.dot(p) - offset).abs() <= tol)
            .count(),
    })
}

/// Keep points at most `plane_raise` above the (raised) ground plane whose
/// reflectivity clears the threshold.
pub fn filter_markings(
    cloud: &PointCloud,
    plane: &GroundPlane,
    cfg: &ExtractionConfig,
) -> PointCloud {
    let points = cloud
        .points
        .iter()
        .filter(|p| {
            plane.signed_distance(&p.position()) <= cfg.plane_raise
                && p.reflectivity >= cfg.reflectivity_threshold
        })
        .copied()
        .collect();
    PointCloud::new(points, cloud.frame)
}

/// Drop points with fewer than `outlier_min_neighbors` other points within
/// `outlier_radius`. Exact; the grid only accelerates the neighbor count.
pub fn remove_radius_outliers(cloud: &PointCloud, cfg: &ExtractionConfig) -> Result<PointCloud> {
    if cloud.frame != CoordFrame::World {
        return Err(Error::Structural(
            "radius outlier removal expects the merged world cloud".into(),
        ));
    }
    let positions = cloud.positions();
    let index = GridIndex3::build(&positions, cfg.outlier_radius);
    let keep: Vec<bool> = positions
        .par_iter()
        .enumerate()
        .map(|(i, p)| index.count_within(p, cfg.outlier_radius, Some(i)) >= cfg.outlier_min_neighbors)
        .collect();
    let points = cloud
        .points
        .iter()
        .zip(&keep)
        .filter(|(_, &k)| k)
        .map(|(p, _)| *p)
        .collect();
    Ok(PointCloud::new(points, CoordFrame::World))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::MarkPoint;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn world(points: Vec<MarkPoint>) -> PointCloud {
        PointCloud::new(points, CoordFrame::World)
    }

    fn vehicle(points: Vec<MarkPoint>) -> PointCloud {
        PointCloud::new(points, CoordFrame::Vehicle)
    }

    #[test]
    fn crop_removes_far_and_high_points() {
        let cfg = ExtractionConfig {
            max_range: 100.0,
            sensor_height: 2.0,
            ..Default::default()
        };
        let cloud = vehicle(vec![
            MarkPoint::new(101.0, 0.0, 0.0, 0.5),  // out of range
            MarkPoint::new(10.0, 0.0, 2.01, 0.5),  // above sensor
            MarkPoint::new(10.0, 0.0, 0.0, 0.5),   // kept
        ]);
        let out = crop(&cloud, &cfg).unwrap();
        assert_eq!(out.len(), 1);
        assert_relative_eq!(out.points[0].x, 10.0);
    }

    #[test]
    fn crop_keeps_in_bound_clouds_unchanged() {
        let cfg = ExtractionConfig::default();
        let cloud = vehicle(vec![
            MarkPoint::new(1.0, 1.0, 0.0, 0.5),
            MarkPoint::new(-5.0, 2.0, -1.0, 0.9),
        ]);
        let out = crop(&cloud, &cfg).unwrap();
        assert_eq!(out, cloud);
    }

    #[test]
    fn plane_on_flat_ground() {
        let mut pts = Vec::new();
        for x in 0..10 {
            for y in 0..10 {
                pts.push(MarkPoint::new(x as f64, y as f64, 0.0, 0.5));
            }
        }
        let plane = fit_ground_plane(&vehicle(pts), &ExtractionConfig::default()).unwrap();
        assert_relative_eq!(plane.normal.z, 1.0, epsilon = 1e-6);
        assert_relative_eq!(plane.offset, 0.0, epsilon = 1e-6);
        assert!(plane.inlier_count >= 99); // >= 99 % on clean planes
    }

    #[test]
    fn plane_needs_three_points() {
        let cloud = vehicle(vec![
            MarkPoint::new(0.0, 0.0, 0.0, 0.5),
            MarkPoint::new(1.0, 0.0, 0.0, 0.5),
        ]);
        assert!(matches!(
            fit_ground_plane(&cloud, &ExtractionConfig::default()),
            Err(Error::Estimation(_))
        ));
    }

    #[test]
    fn collinear_points_are_degenerate() {
        let pts = (0..50)
            .map(|i| MarkPoint::new(i as f64, 2.0 * i as f64, 0.5 * i as f64, 0.5))
            .collect();
        assert!(matches!(
            fit_ground_plane(&vehicle(pts), &ExtractionConfig::default()),
            Err(Error::Estimation(_))
        ));
    }

    /// Oracle: least-squares plane on the known inlier subset of a synthetic
    /// tilted scene. RANSAC + refinement must classify the same inlier set.
    #[test]
    fn tilted_plane_with_outliers_matches_inlier_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut points = Vec::new();
        let mut true_inliers = Vec::new();
        for i in 0..400 {
            let x = rng.gen_range(-20.0..20.0);
            let y = rng.gen_range(-20.0..20.0);
            if i % 5 == 0 {
                // 20% outliers, well clear of the inlier band
                points.push(MarkPoint::new(x, y, 0.05 * x + rng.gen_range(0.3..3.0), 0.5));
            } else {
                let z = 0.05 * x + rng.gen_range(-0.02..0.02);
                true_inliers.push(Vector3::new(x, y, z));
                points.push(MarkPoint::new(x, y, z, 0.5));
            }
        }
        let cfg = ExtractionConfig::default();
        let plane = fit_ground_plane(&world(points.clone()), &cfg).unwrap();

        let (oracle_normal, oracle_offset) = tls_plane(&true_inliers).unwrap();
        let oracle_set: Vec<usize> = points
            .iter()
            .enumerate()
            .filter(|(_, p)| {
                (oracle_normal.dot(&p.position()) - oracle_offset).abs() <= cfg.ransac_inlier_tol
            })
            .map(|(i, _)| i)
            .collect();
        let got_set: Vec<usize> = points
            .iter()
            .enumerate()
            .filter(|(_, p)| plane.signed_distance(&p.position()).abs() <= cfg.ransac_inlier_tol)
            .map(|(i, _)| i)
            .collect();
        assert_eq!(got_set, oracle_set);
        assert!(plane.inlier_count >= true_inliers.len());
        // Plane parameters close to the oracle fit.
        assert!(plane.normal.dot(&oracle_normal) > 1.0 - 1e-6);
        assert!((plane.offset - oracle_offset).abs() < 1e-3);
    }

    #[test]
    fn plane_fit_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<MarkPoint> = (0..200)
            .map(|_| {
                MarkPoint::new(
                    rng.gen_range(-10.0..10.0),
                    rng.gen_range(-10.0..10.0),
                    rng.gen_range(-0.01..0.01),
                    0.5,
                )
            })
            .collect();
        let cfg = ExtractionConfig::default();
        let a = fit_ground_plane(&vehicle(pts.clone()), &cfg).unwrap();
        let b = fit_ground_plane(&vehicle(pts), &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn marking_filter_follows_plane_raise_and_reflectivity() {
        let plane = GroundPlane {
            normal: Vector3::new(0.0, 0.0, 1.0),
            offset: 0.0,
            inlier_count: 0,
        };
        let cfg = ExtractionConfig::default();
        let cloud = world(vec![
            MarkPoint::new(0.0, 0.0, 0.14, 0.9), // kept: below raise, reflective
            MarkPoint::new(0.0, 0.0, 0.16, 0.9), // above raised plane
            MarkPoint::new(0.0, 0.0, 0.0, 0.49), // too dark
        ]);
        let out = filter_markings(&cloud, &plane, &cfg);
        assert_eq!(out.len(), 1);
        assert_relative_eq!(out.points[0].z, 0.14);
    }

    #[test]
    fn marking_filter_is_idempotent() {
        let plane = GroundPlane {
            normal: Vector3::new(0.0, 0.0, 1.0),
            offset: 0.0,
            inlier_count: 0,
        };
        let cfg = ExtractionConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cloud = world(
            (0..200)
                .map(|_| {
                    MarkPoint::new(
                        rng.gen_range(-5.0..5.0),
                        rng.gen_range(-5.0..5.0),
                        rng.gen_range(-0.3..0.5),
                        rng.gen_range(0.0..1.0),
                    )
                })
                .collect(),
        );
        let once = filter_markings(&cloud, &plane, &cfg);
        let twice = filter_markings(&once, &plane, &cfg);
        assert_eq!(once, twice);
    }

    #[test]
    fn isolated_point_is_removed() {
        let cfg = ExtractionConfig::default();
        let cloud = world(vec![MarkPoint::new(0.0, 0.0, 0.0, 0.9)]);
        let out = remove_radius_outliers(&cloud, &cfg).unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn coincident_points_all_kept() {
        let cfg = ExtractionConfig::default();
        let cloud = world(vec![MarkPoint::new(1.0, 1.0, 0.0, 0.9); 6]);
        let out = remove_radius_outliers(&cloud, &cfg).unwrap();
        assert_eq!(out.len(), 6);
    }

    fn brute_force_keep(points: &[MarkPoint], radius: f64, min_neighbors: usize) -> Vec<bool> {
        points
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let n = points
                    .iter()
                    .enumerate()
                    .filter(|(j, q)| *j != i && (p.position() - q.position()).norm() <= radius)
                    .count();
                n >= min_neighbors
            })
            .collect()
    }

    #[test]
    fn outlier_removal_matches_brute_force_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        // Dense marking field plus sparse clutter.
        let mut points = Vec::new();
        for i in 0..1000 {
            let s = i as f64 * 0.1;
            points.push(MarkPoint::new(
                s,
                rng.gen_range(-0.1..0.1),
                0.0,
                0.9,
            ));
        }
        for _ in 0..60 {
            points.push(MarkPoint::new(
                rng.gen_range(-20.0..120.0),
                rng.gen_range(5.0..50.0),
                rng.gen_range(0.0..2.0),
                0.9,
            ));
        }
        let cfg = ExtractionConfig::default();
        let out = remove_radius_outliers(&world(points.clone()), &cfg).unwrap();
        let keep = brute_force_keep(&points, cfg.outlier_radius, cfg.outlier_min_neighbors);
        let want: Vec<MarkPoint> = points
            .iter()
            .zip(&keep)
            .filter(|(_, &k)| k)
            .map(|(p, _)| *p)
            .collect();
        assert_eq!(out.points, want);
    }

    #[test]
    fn outlier_removal_is_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let points: Vec<MarkPoint> = (0..300)
            .map(|_| {
                MarkPoint::new(
                    rng.gen_range(-5.0..5.0),
                    rng.gen_range(-5.0..5.0),
                    0.0,
                    0.9,
                )
            })
            .collect();
        let mut shuffled = points.clone();
        shuffled.reverse();
        let cfg = ExtractionConfig::default();
        let a = remove_radius_outliers(&world(points), &cfg).unwrap();
        let b = remove_radius_outliers(&world(shuffled), &cfg).unwrap();
        let mut sa: Vec<_> = a.points.iter().map(|p| (p.x.to_bits(), p.y.to_bits())).collect();
        let mut sb: Vec<_> = b.points.iter().map(|p| (p.x.to_bits(), p.y.to_bits())).collect();
        sa.sort_unstable();
        sb.sort_unstable();
        assert_eq!(sa, sb);
    }
}
