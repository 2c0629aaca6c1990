//! Chaining marking clusters into candidate lines.
//!
//! Starting from the unconsumed cluster closest to the origin, the search
//! probes along the stabilized direction in fixed steps with a ball-radius
//! lookup, then candidate lines are merged across occlusion gaps with a
//! longer end-point sweep.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::clustering::Cluster;
use crate::error::{Error, Result};
use crate::geom::point_segment_distance;

/// Ordered chain of cluster centers hypothesized to be one marking line.
#[derive(Debug, Clone)]
pub struct CandidateLine {
    pub id: u64,
    /// Indices into the stage's cluster list, ordered like `centers`.
    pub cluster_ids: Vec<usize>,
    pub centers: Vec<Vector3<f64>>,
    /// Direction the search would continue with at the line end.
    pub stabilized_direction: Vector3<f64>,
}

impl CandidateLine {
    pub fn start(&self) -> &Vector3<f64> {
        &self.centers[0]
    }

    pub fn end(&self) -> &Vector3<f64> {
        self.centers.last().expect("candidate line is never empty")
    }

    /// Direction of the last chord, or the stored search direction for
    /// single-cluster lines.
    pub fn end_direction(&self) -> Vector3<f64> {
        if self.centers.len() >= 2 {
            let d = self.centers[self.centers.len() - 1] - self.centers[self.centers.len() - 2];
            let n = d.norm();
            if n > 1e-12 {
                return d / n;
            }
        }
        self.stabilized_direction
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    /// Probe spacing along the direction vector.
    pub step: f64,
    /// Total sweep length when extending a line (1.5x the dash cycle).
    pub search_length: f64,
    /// Ball-query radius: half of the minimum lane width.
    pub ball_radius: f64,
    /// Direction stabilizer blend factor.
    pub gamma: f64,
    /// Sweep length when combining candidates across occlusions.
    pub combine_length: f64,
    /// Point-to-segment tolerance for attach and merge checks.
    pub seg_attach_tol: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            step: 3.0,
            search_length: 27.0,
            ball_radius: 1.75,
            gamma: 0.5,
            combine_length: 63.0,
            seg_attach_tol: 0.5,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.step <= self.search_length) {
            return Err(Error::Config("require 0 < step <= search_length".into()));
        }
        if self.ball_radius <= 0.0 {
            return Err(Error::Config("ball_radius must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config("gamma must lie in [0,1]".into()));
        }
        if self.combine_length <= 0.0 || self.seg_attach_tol <= 0.0 {
            return Err(Error::Config("combine lengths must be positive".into()));
        }
        Ok(())
    }
}

/// Blend the newest raw direction with the previous one and renormalize.
/// A vanishing blend (antiparallel inputs at gamma 0.5) falls back to the
/// newest direction.
pub fn stabilize_direction(
    v_star_i: &Vector3<f64>,
    v_star_prev: &Vector3<f64>,
    gamma: f64,
) -> Vector3<f64> {
    let blend = gamma * v_star_i + (1.0 - gamma) * v_star_prev;
    let norm = blend.norm();
    if norm < 1e-12 {
        *v_star_i
    } else {
        blend / norm
    }
}

fn ball_query(
    p_c: &Vector3<f64>,
    clusters: &[Cluster],
    consumed: &[bool],
    radius: f64,
) -> Option<usize> {
    let mut best: Option<(f64, usize)> = None;
    for (i, c) in clusters.iter().enumerate() {
        if consumed[i] {
            continue;
        }
        let d = (c.center - p_c).norm();
        if d <= radius && best.is_none_or(|(bd, bi)| d < bd || (d == bd && i < bi)) {
            best = Some((d, i));
        }
    }
    best.map(|(_, i)| i)
}

/// Grow one candidate line from a seed cluster.
///
/// Probes `p_c = current + v * d` for d = step, 2*step, ... up to the search
/// length; the first ball-query hit is appended and the direction is blended
/// once the line holds two clusters. Clusters whose center lies within the
/// attach tolerance of the new chord are collected along the way. Terminates
/// when a full sweep finds nothing.
pub fn search_mark(
    seed: usize,
    clusters: &[Cluster],
    consumed: &mut [bool],
    id: u64,
    cfg: &SearchConfig,
) -> CandidateLine {
    let mut cluster_ids = vec![seed];
    let mut centers = vec![clusters[seed].center];
    consumed[seed] = true;
    let mut direction = clusters[seed].raw_direction;
    let mut prev_raw = clusters[seed].raw_direction;
    let steps = (cfg.search_length / cfg.step + 1e-9).floor() as usize;

    loop {
        let current = *centers.last().unwrap();
        let mut hit = None;
        for k in 1..=steps {
            let p_c = current + direction * (cfg.step * k as f64);
            if let Some(found) = ball_query(&p_c, clusters, consumed, cfg.ball_radius) {
                hit = Some(found);
                break;
            }
        }
        let Some(found) = hit else { break };
        consumed[found] = true;
        let new_center = clusters[found].center;

        // Pick up clusters the ball probes stepped over.
        for (i, c) in clusters.iter().enumerate() {
            if !consumed[i]
                && point_segment_distance(&c.center, &current, &new_center) <= cfg.seg_attach_tol
            {
                consumed[i] = true;
                cluster_ids.push(i);
                centers.push(c.center);
            }
        }

        cluster_ids.push(found);
        centers.push(new_center);
        let raw = clusters[found].raw_direction;
        direction = stabilize_direction(&raw, &prev_raw, cfg.gamma);
        prev_raw = raw;
    }

    let mut line = CandidateLine {
        id,
        cluster_ids,
        centers,
        stabilized_direction: direction,
    };
    dist_sort(&mut line);
    line
}

/// Reorder a line by the greedy nearest-neighbor chain that starts at the
/// center closest to the origin.
pub fn dist_sort(line: &mut CandidateLine) {
    if line.centers.len() <= 1 {
        return;
    }
    let order = crate::geom::greedy_chain_order(&line.centers);
    line.centers = order.iter().map(|&i| line.centers[i]).collect();
    line.cluster_ids = order.iter().map(|&i| line.cluster_ids[i]).collect();
}

/// Build all candidate lines: seeds are taken closest-to-origin first, ties
/// broken by lowest cluster index. Ids are a deterministic counter.
pub fn build_candidate_lines(clusters: &[Cluster], cfg: &SearchConfig) -> Vec<CandidateLine> {
    let mut consumed = vec![false; clusters.len()];
    let mut lines = Vec::new();
    let mut next_id = 0u64;
    loop {
        let seed = (0..clusters.len())
            .filter(|&i| !consumed[i])
            .min_by(|&a, &b| {
                clusters[a]
                    .center
                    .norm()
                    .partial_cmp(&clusters[b].center.norm())
                    .unwrap()
                    .then(a.cmp(&b))
            });
        let Some(seed) = seed else { break };
        lines.push(search_mark(seed, clusters, &mut consumed, next_id, cfg));
        next_id += 1;
    }
    lines
}

fn merge_lines(into: &mut CandidateLine, from: CandidateLine) {
    into.cluster_ids.extend(from.cluster_ids);
    into.centers.extend(from.centers);
    dist_sort(into);
}

/// Endpoint of `a` lies on a segment of `b`?
fn endpoint_touches(a: &CandidateLine, b: &CandidateLine, tol: f64) -> bool {
    for endpoint in [a.start(), a.end()] {
        if b.centers.len() == 1
            && (b.centers[0] - endpoint).norm() <= tol {
                return true;
            }
        for w in b.centers.windows(2) {
            if point_segment_distance(endpoint, &w[0], &w[1]) <= tol {
                return true;
            }
        }
    }
    false
}

/// Signed 2D curvature at the line end, from the Menger circle through
/// three tail centers spaced at least 8 m apart. A straight ray would
/// drift laterally by d^2/2R over a d-meter sweep, which at 63 m exceeds
/// the ball radius even for gentle highway curves and would capture the
/// neighboring lane's line; extrapolating along the end curvature keeps
/// the long occlusion sweep on the lane.
fn end_curvature(line: &CandidateLine) -> f64 {
    let centers = &line.centers;
    let n = centers.len();
    if n < 3 {
        return 0.0;
    }
    let min_sep = 8.0;
    let c = nalgebra::Vector2::new(centers[n - 1].x, centers[n - 1].y);
    let mut b: Option<nalgebra::Vector2<f64>> = None;
    let mut a = None;
    for i in (0..n - 1).rev() {
        let p = nalgebra::Vector2::new(centers[i].x, centers[i].y);
        match b {
            None if (c - p).norm() >= min_sep => b = Some(p),
            Some(mid) if (mid - p).norm() >= min_sep => {
                a = Some(p);
                break;
            }
            _ => {}
        }
    }
    let (Some(a), Some(b)) = (a, b) else { return 0.0 };
    let (ab, bc, ca) = (b - a, c - b, a - c);
    let cross = ab.x * bc.y - ab.y * bc.x;
    let denom = ab.norm() * bc.norm() * ca.norm();
    if denom < 1e-9 {
        0.0
    } else {
        2.0 * cross / denom
    }
}

/// Sweep from `a`'s end along its end direction, following the line's own
/// end curvature; does it reach `b`'s start?
fn sweep_reaches_start(a: &CandidateLine, b: &CandidateLine, cfg: &SearchConfig) -> bool {
    let dir = a.end_direction();
    let origin = *a.end();
    let hdg = dir.y.atan2(dir.x);
    let (sin_h, cos_h) = hdg.sin_cos();
    let planar = dir.x.hypot(dir.y);
    let z_slope = if planar > 1e-9 { dir.z / planar } else { 0.0 };
    let kappa = end_curvature(a);
    let steps = (cfg.combine_length / cfg.step + 1e-9).floor() as usize;
    for k in 1..=steps {
        let d = cfg.step * k as f64;
        let (lu, lv) = if kappa.abs() < 1e-9 {
            (d, 0.0)
        } else {
            let phi = kappa * d;
            (phi.sin() / kappa, (1.0 - phi.cos()) / kappa)
        };
        let p_c = Vector3::new(
            origin.x + cos_h * lu - sin_h * lv,
            origin.y + sin_h * lu + cos_h * lv,
            origin.z + z_slope * d,
        );
        if (b.start() - p_c).norm() <= cfg.ball_radius {
            return true;
        }
    }
    false
}

/// Merge candidate lines to a fixed point: endpoint-on-segment contacts
/// first, then end-point sweeps up to the combine length against other
/// lines' start points. The searching line's id survives a sweep merge;
/// contact merges keep the id of the longer line.
pub fn combine_candidates(mut lines: Vec<CandidateLine>, cfg: &SearchConfig) -> Vec<CandidateLine> {
    loop {
        let mut merged_any = false;

        // (a) endpoint-on-segment contacts
        'contact: for i in 0..lines.len() {
            for j in 0..lines.len() {
                if i == j {
                    continue;
                }
                if endpoint_touches(&lines[i], &lines[j], cfg.seg_attach_tol) {
                    let (keep, absorb) = if lines[j].cluster_ids.len() >= lines[i].cluster_ids.len()
                    {
                        (j, i)
                    } else {
                        (i, j)
                    };
                    let taken = lines.remove(absorb);
                    let keep = if absorb < keep { keep - 1 } else { keep };
                    merge_lines(&mut lines[keep], taken);
                    merged_any = true;
                    break 'contact;
                }
            }
        }
        if merged_any {
            continue;
        }

        // (b) occlusion sweep from line ends to other starts
        'sweep: for i in 0..lines.len() {
            for j in 0..lines.len() {
                if i == j {
                    continue;
                }
                if sweep_reaches_start(&lines[i], &lines[j], cfg) {
                    let taken = lines.remove(j);
                    let i = if j < i { i - 1 } else { i };
                    merge_lines(&mut lines[i], taken);
                    merged_any = true;
                    break 'sweep;
                }
            }
        }
        if !merged_any {
            return lines;
        }
    }
}
