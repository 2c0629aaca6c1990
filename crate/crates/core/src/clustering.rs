//! Grouping marking points into per-marking clusters: DBSCAN, slicing of
//! long (solid-line) clusters, bounding-box centers, and RANSAC line
//! directions with origin-based sign unification.

use nalgebra::Vector3;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cloud::{CoordFrame, PointCloud};
use crate::error::{Error, Result};
use crate::geom::principal_direction;
use crate::spatial::GridIndex3;

/// One marking blob with its summary geometry.
#[derive(Debug, Clone)]
pub struct Cluster {
    pub points: PointCloud,
    /// Axis-aligned bounding-box center.
    pub center: Vector3<f64>,
    /// Unit direction from the RANSAC line fit; sign fixed by
    /// [`unify_direction`].
    pub raw_direction: Vector3<f64>,
    /// Extent of the point projections along `raw_direction`.
    pub length: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterConfig {
    pub dbscan_eps: f64,
    pub dbscan_min_pts: usize,
    /// Clusters longer than this are sliced.
    pub split_threshold: f64,
    /// Target slice extent; matches the standard dash length.
    pub slice_length: f64,
    pub line_ransac_iterations: usize,
    pub line_ransac_tol: f64,
    pub rng_seed: u64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            dbscan_eps: 0.4,
            dbscan_min_pts: 5,
            split_threshold: 30.0,
            slice_length: 6.0,
            line_ransac_iterations: 100,
            line_ransac_tol: 0.05,
            rng_seed: 0,
        }
    }
}

impl ClusterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dbscan_eps <= 0.0 {
            return Err(Error::Config("dbscan_eps must be positive".into()));
        }
        if self.dbscan_min_pts < 1 {
            return Err(Error::Config("dbscan_min_pts must be >= 1".into()));
        }
        if !(self.split_threshold > self.slice_length && self.slice_length > 0.0) {
            return Err(Error::Config(
                "require split_threshold > slice_length > 0".into(),
            ));
        }
        if self.line_ransac_iterations == 0 || self.line_ransac_tol <= 0.0 {
            return Err(Error::Config("invalid line RANSAC parameters".into()));
        }
        Ok(())
    }
}

/// Raw DBSCAN labeling. `cluster_of[i]` is the cluster index of point `i`
/// (`None` = noise); `core[i]` marks core points ( >= min_pts neighbors
/// within eps, the point itself included).
pub struct DbscanLabels {
    pub cluster_of: Vec<Option<usize>>,
    pub core: Vec<bool>,
    pub cluster_count: usize,
}

/// Standard DBSCAN over a grid index. Core status is order-independent;
/// border points join the first cluster that reaches them.
pub fn dbscan_labels(positions: &[Vector3<f64>], eps: f64, min_pts: usize) -> DbscanLabels {
    let n = positions.len();
    let mut cluster_of = vec![None; n];
    let mut core = vec![false; n];
    if n == 0 {
        return DbscanLabels {
            cluster_of,
            core,
            cluster_count: 0,
        };
    }
    let index = GridIndex3::build(positions, eps);
    let mut buf = Vec::new();
    for i in 0..n {
        index.within_into(&positions[i], eps, &mut buf);
        core[i] = buf.len() >= min_pts;
    }
    let mut cluster_count = 0;
    let mut queue = Vec::new();
    for i in 0..n {
        if !core[i] || cluster_of[i].is_some() {
            continue;
        }
        let id = cluster_count;
        cluster_count += 1;
        cluster_of[i] = Some(id);
        queue.clear();
        queue.push(i);
        while let Some(p) = queue.pop() {
            index.within_into(&positions[p], eps, &mut buf);
            for &q in buf.iter() {
                if cluster_of[q].is_none() {
                    cluster_of[q] = Some(id);
                    if core[q] {
                        queue.push(q);
                    }
                }
            }
        }
    }
    DbscanLabels {
        cluster_of,
        core,
        cluster_count,
    }
}

/// Center of the axis-aligned bounding box of a non-empty point set.
pub fn calc_center_bb(cloud: &PointCloud) -> Result<Vector3<f64>> {
    if cloud.is_empty() {
        return Err(Error::Estimation("bounding box of an empty cluster".into()));
    }
    let mut min = cloud.points[0].position();
    let mut max = min;
    for p in &cloud.points {
        let v = p.position();
        min = min.inf(&v);
        max = max.sup(&v);
    }
    Ok((min + max) * 0.5)
}

/// Direction of the dominant 3D line through the points: RANSAC over
/// two-point samples, refined by the principal direction of the inliers.
/// Sign is arbitrary and later fixed by [`unify_direction`].
pub fn line_ransac(cloud: &PointCloud, cfg: &ClusterConfig) -> Result<Vector3<f64>> {
    let pts = cloud.positions();
    let distinct = pts
        .iter()
        .any(|p| (p - pts[0]).norm() > 1e-12);
    if pts.len() < 2 || !distinct {
        return Err(Error::Estimation(format!(
            "line fit needs >= 2 distinct points, got {}",
            pts.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let tol = cfg.line_ransac_tol;
    let mut best: Option<(usize, usize, usize)> = None;
    for _ in 0..cfg.line_ransac_iterations {
        let i = rng.gen_range(0..pts.len());
        let j = rng.gen_range(0..pts.len());
        if (pts[j] - pts[i]).norm() < 1e-12 {
            continue;
        }
        let dir = (pts[j] - pts[i]).normalize();
        let count = pts
            .iter()
            .filter(|p| {
                let d = *p - pts[i];
                (d - dir * d.dot(&dir)).norm() <= tol
            })
            .count();
        if best.is_none_or(|(c, _, _)| count > c) {
            best = Some((count, i, j));
        }
    }
    let (_, i, j) = best.ok_or_else(|| Error::Estimation("line fit found no valid sample".into()))?;
    let dir = (pts[j] - pts[i]).normalize();
    let inliers: Vec<Vector3<f64>> = pts
        .iter()
        .filter(|p| {
            let d = *p - pts[i];
            (d - dir * d.dot(&dir)).norm() <= tol
        })
        .copied()
        .collect();
    Ok(principal_direction(&inliers).unwrap_or(dir))
}

/// Build the cluster summary for a point group. Degenerate groups (all
/// points coincident) fall back to `fallback_dir` with zero length.
fn analyze(points: PointCloud, cfg: &ClusterConfig, fallback_dir: Vector3<f64>) -> Result<Cluster> {
    let center = calc_center_bb(&points)?;
    let raw_direction = line_ransac(&points, cfg).unwrap_or(fallback_dir);
    let positions = points.positions();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for p in &positions {
        let t = p.dot(&raw_direction);
        lo = lo.min(t);
        hi = hi.max(t);
    }
    let length = (hi - lo).max(0.0);
    Ok(Cluster {
        points,
        center,
        raw_direction,
        length,
    })
}

/// DBSCAN over a world-frame cloud; returns analyzed clusters plus the
/// noise points.
pub fn dbscan(cloud: &PointCloud, cfg: &ClusterConfig) -> Result<(Vec<Cluster>, PointCloud)> {
    if cloud.frame != CoordFrame::World {
        return Err(Error::Structural("dbscan expects the world-frame cloud".into()));
    }
    let labels = dbscan_labels(&cloud.positions(), cfg.dbscan_eps, cfg.dbscan_min_pts);
    let mut groups: Vec<Vec<crate::cloud::MarkPoint>> = vec![Vec::new(); labels.cluster_count];
    let mut noise = PointCloud::empty(CoordFrame::World);
    for (p, label) in cloud.points.iter().zip(&labels.cluster_of) {
        match label {
            Some(id) => groups[*id].push(*p),
            None => noise.points.push(*p),
        }
    }
    let mut clusters = Vec::with_capacity(groups.len());
    for g in groups {
        clusters.push(analyze(
            PointCloud::new(g, CoordFrame::World),
            cfg,
            Vector3::x(),
        )?);
    }
    Ok((clusters, noise))
}

/// Slice clusters longer than the split threshold into uniform slices of
/// roughly `slice_length` along the cluster direction; short clusters pass
/// through unchanged. Slice centers and directions are recomputed.
pub fn split_cluster(c: &Cluster, cfg: &ClusterConfig) -> Result<Vec<Cluster>> {
    if c.length <= cfg.split_threshold {
        return Ok(vec![c.clone()]);
    }
    let n = (c.length / cfg.slice_length).ceil() as usize;
    let extent = c.length / n as f64;
    let lo = c
        .points
        .points
        .iter()
        .map(|p| p.position().dot(&c.raw_direction))
        .fold(f64::INFINITY, f64::min);
    let mut parts: Vec<Vec<crate::cloud::MarkPoint>> = vec![Vec::new(); n];
    for p in &c.points.points {
        let t = p.position().dot(&c.raw_direction) - lo;
        let idx = ((t / extent) as usize).min(n - 1);
        parts[idx].push(*p);
    }
    let mut out = Vec::with_capacity(n);
    for part in parts {
        if part.is_empty() {
            continue;
        }
        out.push(analyze(
            PointCloud::new(part, c.points.frame),
            cfg,
            c.raw_direction,
        )?);
    }
    Ok(out)
}

/// Flip directions that point back toward the world origin so that every
/// cluster direction has a non-negative dot product with `center - origin`.
/// Clusters centered exactly at the origin keep their sign.
pub fn unify_direction(clusters: &mut [Cluster]) {
    for c in clusters.iter_mut() {
        if c.center.norm() == 0.0 {
            continue;
        }
        if c.raw_direction.dot(&c.center) < 0.0 {
            c.raw_direction = -c.raw_direction;
        }
    }
}

/// Full clustering stage: DBSCAN, slicing, sign unification.
pub fn cluster_markings(cloud: &PointCloud, cfg: &ClusterConfig) -> Result<Vec<Cluster>> {
    let (clusters, noise) = dbscan(cloud, cfg)?;
    log::debug!(
        "dbscan: {} clusters, {} noise points",
        clusters.len(),
        noise.len()
    );
    let mut out = Vec::with_capacity(clusters.len());
    for c in &clusters {
        out.extend(split_cluster(c, cfg)?);
    }
    unify_direction(&mut out);
    Ok(out)
}
