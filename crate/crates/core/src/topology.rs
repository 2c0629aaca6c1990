//! Lateral arrangement of candidate lines without odometry.
//!
//! Segment normals probe sideways for neighboring lines; per-pair relative
//! lookups are resolved into a single global arrangement (superlines with
//! integer lane offsets) by propagating left/right steps, which yields the
//! lane count, lane widths, and the centerline reference polyline.

use std::collections::BTreeMap;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{greedy_chain_order, ray_segment_intersection_2d};
use crate::lane_builder::CandidateLine;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn opposite(self) -> Side {
        match self {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
        }
    }
}

/// One aggregated lateral relation: `target_id` lies on `side` of the
/// source line at median perpendicular `distance`, supported by
/// `support` segment-level intersections.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RelationEntry {
    pub target_id: u64,
    pub side: Side,
    pub distance: f64,
    pub support: usize,
}

/// All lateral relations of one candidate line.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RelativeLookup {
    pub source_id: u64,
    pub entries: Vec<RelationEntry>,
}

/// Maximal set of candidate lines resolved to one lateral lane offset.
#[derive(Debug, Clone)]
pub struct Superline {
    pub id: u64,
    pub member_line_ids: Vec<u64>,
    /// 0 = leftmost resolved line; grows to the right.
    pub lane_offset: i32,
    /// Union of member centers, chain-sorted from the origin.
    pub merged_centers: Vec<Vector3<f64>>,
}

/// Reference polyline plus the lane structure derived from superlines.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoadModel {
    pub reference_polyline: Vec<Vector3<f64>>,
    pub lane_count: usize,
    /// Median width per adjacent marking-line pair, leftmost pair first.
    pub lane_widths: Vec<f64>,
    /// Population sigma over all width samples.
    pub width_sigma: f64,
    /// Per-sample adjacent-line distances backing the width statistics.
    pub width_samples: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopologyConfig {
    /// Regulation lane width used to quantize lateral steps.
    pub nominal_lane_width: f64,
    /// Normal rays are capped at this multiple of the nominal width.
    pub max_ray_factor: f64,
    /// Compatibility switch: record `distance % 3.0` and force single-lane
    /// steps instead of quantizing by the nominal width.
    pub literal_modulo: bool,
    /// Plausibility band for estimated lane widths.
    pub min_lane_width: f64,
    pub max_lane_width: f64,
    /// Width reported for degenerate single-line roads.
    pub default_lane_width: f64,
    /// Relations contradicting better-supported ones are dropped when their
    /// segment support stays below this; at or above it they are an error.
    pub conflict_support: usize,
}

impl Default for TopologyConfig {
    fn default() -> Self {
        TopologyConfig {
            nominal_lane_width: 3.5,
            max_ray_factor: 2.0,
            literal_modulo: false,
            min_lane_width: 2.5,
            max_lane_width: 4.5,
            default_lane_width: 3.5,
            conflict_support: 5,
        }
    }
}

impl TopologyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.nominal_lane_width <= 0.0 || self.max_ray_factor <= 0.0 {
            return Err(Error::Config("topology lengths must be positive".into()));
        }
        if !(self.min_lane_width > 0.0 && self.min_lane_width < self.max_lane_width) {
            return Err(Error::Config("invalid lane width band".into()));
        }
        Ok(())
    }
}

fn xy(p: &Vector3<f64>) -> Vector2<f64> {
    Vector2::new(p.x, p.y)
}

/// Per-segment left/right unit normals of a candidate line, in 2D.
/// Zero-length segments are skipped.
pub struct SegmentNormals {
    pub midpoint: Vector2<f64>,
    pub left: Vector2<f64>,
    pub right: Vector2<f64>,
}

pub fn calc_norm_vec(line: &CandidateLine) -> Vec<SegmentNormals> {
    let mut out = Vec::new();
    for w in line.centers.windows(2) {
        let d = xy(&w[1]) - xy(&w[0]);
        let len = d.norm();
        if len < 1e-12 {
            continue;
        }
        let t = d / len;
        out.push(SegmentNormals {
            midpoint: (xy(&w[0]) + xy(&w[1])) * 0.5,
            left: Vector2::new(-t.y, t.x),
            right: Vector2::new(t.y, -t.x),
        });
    }
    out
}

/// Nearest ray intersection with any segment of any *other* line.
fn first_hit(
    origin: &Vector2<f64>,
    dir: &Vector2<f64>,
    lines: &[CandidateLine],
    skip: usize,
    max_ray: f64,
) -> Option<(u64, f64)> {
    let mut best: Option<(u64, f64)> = None;
    for (j, other) in lines.iter().enumerate() {
        if j == skip {
            continue;
        }
        for w in other.centers.windows(2) {
            if let Some(t) = ray_segment_intersection_2d(origin, dir, &xy(&w[0]), &xy(&w[1])) {
                if t <= max_ray && best.is_none_or(|(_, bt)| t < bt) {
                    best = Some((other.id, t));
                }
            }
        }
    }
    best
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Cast left/right normal rays from every segment midpoint and aggregate
/// the first intersections per (source, target) pair: majority side and
/// median distance. A pair whose side votes are nearly tied is reported as
/// contradictory.
pub fn relative_lookup(
    lines: &[CandidateLine],
    cfg: &TopologyConfig,
) -> Result<Vec<RelativeLookup>> {
    let max_ray = cfg.max_ray_factor * cfg.nominal_lane_width;
    let mut out = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        // (target, side) -> distances
        let mut samples: BTreeMap<(u64, Side), Vec<f64>> = BTreeMap::new();
        for seg in calc_norm_vec(line) {
            for (side, dir) in [(Side::Left, seg.left), (Side::Right, seg.right)] {
                if let Some((target, dist)) = first_hit(&seg.midpoint, &dir, lines, i, max_ray) {
                    samples.entry((target, side)).or_default().push(dist);
                }
            }
        }
        let mut by_target: BTreeMap<u64, Vec<(Side, Vec<f64>)>> = BTreeMap::new();
        for ((target, side), dists) in samples {
            by_target.entry(target).or_default().push((side, dists));
        }
        let mut entries = Vec::new();
        for (target, mut sides) in by_target {
            sides.sort_by_key(|(_, d)| std::cmp::Reverse(d.len()));
            if sides.len() == 2 {
                let (maj, min) = (sides[0].1.len(), sides[1].1.len());
                if min * 2 >= maj && min >= 2 {
                    return Err(Error::Topology(format!(
                        "line {} sees line {} on both sides ({} left/right votes vs {})",
                        line.id, target, maj, min
                    )));
                }
            }
            let (side, mut dists) = sides.swap_remove(0);
            let support = dists.len();
            let mut distance = median(&mut dists);
            if cfg.literal_modulo {
                distance %= 3.0;
            }
            entries.push(RelationEntry {
                target_id: target,
                side,
                distance,
                support,
            });
        }
        out.push(RelativeLookup {
            source_id: line.id,
            entries,
        });
    }
    Ok(out)
}

struct Edge {
    a: u64,
    b: u64,
    /// Lateral step of b relative to a; positive = b right of a.
    step: i32,
    support: usize,
}

/// Union-find over line ids that tracks each node's lateral offset
/// relative to its component root.
struct OffsetForest {
    parent: Vec<usize>,
    rank: Vec<u8>,
    /// offset(node) - offset(parent[node])
    delta: Vec<i32>,
}

impl OffsetForest {
    fn new(n: usize) -> Self {
        OffsetForest {
            parent: (0..n).collect(),
            rank: vec![0; n],
            delta: vec![0; n],
        }
    }

    /// Root of `i` plus offset(i) - offset(root), with path compression.
    fn find(&mut self, i: usize) -> (usize, i32) {
        if self.parent[i] == i {
            return (i, 0);
        }
        let (root, parent_delta) = self.find(self.parent[i]);
        self.parent[i] = root;
        self.delta[i] += parent_delta;
        (root, self.delta[i])
    }

    /// Enforce offset(b) - offset(a) = step. Returns false on a conflict
    /// with the already-established offsets.
    fn union(&mut self, a: usize, b: usize, step: i32) -> bool {
        let (ra, da) = self.find(a);
        let (rb, db) = self.find(b);
        if ra == rb {
            return db - da == step;
        }
        // offset(rb) - offset(ra) required by this edge:
        let root_delta = da + step - db;
        if self.rank[ra] >= self.rank[rb] {
            self.parent[rb] = ra;
            self.delta[rb] = root_delta;
            if self.rank[ra] == self.rank[rb] {
                self.rank[ra] += 1;
            }
        } else {
            self.parent[ra] = rb;
            self.delta[ra] = -root_delta;
        }
        true
    }
}

/// Resolve relative lookups into superlines with global lane offsets.
///
/// Left/right steps are propagated breadth-first from the lowest line id;
/// lines landing on the same offset are partial scans of the same marking
/// and merge into one superline. Offsets are normalized so the leftmost
/// line sits at 0. When the relation graph is disconnected, the largest
/// component wins and lines outside it are dropped with a warning.
pub fn global_lookup(
    lookups: &[RelativeLookup],
    lines: &[CandidateLine],
    cfg: &TopologyConfig,
) -> Result<Vec<Superline>> {
    let line_by_id: BTreeMap<u64, &CandidateLine> =
        lines.iter().map(|l| (l.id, l)).collect();

    // Aggregate directed relations into undirected edges, checking that the
    // two views of a pair are consistent.
    let mut directed: BTreeMap<(u64, u64), (Side, f64, usize)> = BTreeMap::new();
    for lookup in lookups {
        for e in &lookup.entries {
            directed.insert(
                (lookup.source_id, e.target_id),
                (e.side, e.distance, e.support),
            );
        }
    }
    let mut edges: Vec<Edge> = Vec::new();
    let mut seen: BTreeMap<(u64, u64), ()> = BTreeMap::new();
    for (&(a, b), &(side, dist, support)) in &directed {
        let key = (a.min(b), a.max(b));
        if seen.contains_key(&key) {
            continue;
        }
        seen.insert(key, ());
        if let Some(&(back_side, _, back_support)) = directed.get(&(b, a)) {
            if back_side == side {
                return Err(Error::Topology(format!(
                    "contradictory relation: lines {a} and {b} each see the other on the {side:?} \
                     (support {support} vs {back_support})"
                )));
            }
        }
        let steps = if cfg.literal_modulo {
            1
        } else {
            (dist / cfg.nominal_lane_width).round().max(1.0) as i32
        };
        let step = match side {
            Side::Right => steps,
            Side::Left => -steps,
        };
        edges.push(Edge {
            a,
            b,
            step,
            support,
        });
    }

    // Union-find offset propagation, strongest relations first. Weakly
    // supported edges contradicting the established offsets are dropped
    // with a warning; well-supported contradictions are an error.
    let ids: Vec<u64> = line_by_id.keys().copied().collect();
    let idx_of: BTreeMap<u64, usize> = ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    edges.sort_by(|x, y| y.support.cmp(&x.support).then((x.a, x.b).cmp(&(y.a, y.b))));
    let mut forest = OffsetForest::new(ids.len());
    for e in &edges {
        if !forest.union(idx_of[&e.a], idx_of[&e.b], e.step) {
            if e.support >= cfg.conflict_support {
                return Err(Error::Topology(format!(
                    "relation between lines {} and {} (support {}) contradicts the \
                     established lateral offsets",
                    e.a, e.b, e.support
                )));
            }
            log::warn!(
                "topology: dropping contradictory low-support relation {} -> {} ({} segments)",
                e.a,
                e.b,
                e.support
            );
        }
    }
    let mut component: BTreeMap<u64, usize> = BTreeMap::new();
    let mut offset: BTreeMap<u64, i32> = BTreeMap::new();
    for (&id, &i) in &idx_of {
        let (root, delta) = forest.find(i);
        component.insert(id, root);
        offset.insert(id, delta);
    }

    // Keep the dominant component: the one carrying the most marking
    // centers (ties: lowest root).
    let mut sizes: BTreeMap<usize, usize> = BTreeMap::new();
    for (id, root) in &component {
        *sizes.entry(*root).or_default() += line_by_id[id].centers.len();
    }
    let (&main_root, _) = sizes
        .iter()
        .max_by(|(ra, ca), (rb, cb)| ca.cmp(cb).then(rb.cmp(ra)))
        .ok_or_else(|| Error::Topology("no candidate lines to resolve".into()))?;
    let dropped: Vec<u64> = component
        .iter()
        .filter(|(_, &root)| root != main_root)
        .map(|(&id, _)| id)
        .collect();
    if !dropped.is_empty() {
        log::warn!(
            "topology: dropping {} line(s) disconnected from the main component: {:?}",
            dropped.len(),
            dropped
        );
    }

    let mut members: BTreeMap<i32, Vec<u64>> = BTreeMap::new();
    for (&id, &root) in &component {
        if root == main_root {
            members.entry(offset[&id]).or_default().push(id);
        }
    }
    let min_offset = *members.keys().next().unwrap();
    let mut superlines = Vec::new();
    for (sid, (raw_offset, ids)) in members.into_iter().enumerate() {
        let mut centers: Vec<Vector3<f64>> = Vec::new();
        for id in &ids {
            centers.extend_from_slice(&line_by_id[id].centers);
        }
        let order = greedy_chain_order(&centers);
        let merged_centers: Vec<Vector3<f64>> = order.iter().map(|&k| centers[k]).collect();
        superlines.push(Superline {
            id: sid as u64,
            member_line_ids: ids,
            lane_offset: raw_offset - min_offset,
            merged_centers,
        });
    }
    Ok(superlines)
}

/// Perpendicular 2D distance from `p` to the chain, counting only segments
/// whose projection foot is interior. Endpoint-clamped matches would
/// inflate width samples where lines end at different arclengths.
fn interior_distance(p: &Vector2<f64>, chain: &[Vector3<f64>]) -> Option<f64> {
    let mut best: Option<f64> = None;
    for w in chain.windows(2) {
        let (a, b) = (xy(&w[0]), xy(&w[1]));
        let ab = b - a;
        let len2 = ab.norm_squared();
        if len2 == 0.0 {
            continue;
        }
        let t = (p - a).dot(&ab) / len2;
        if !(0.0..=1.0).contains(&t) {
            continue;
        }
        let d = (p - (a + ab * t)).norm();
        if best.is_none_or(|bd| d < bd) {
            best = Some(d);
        }
    }
    best
}

/// Per-sample distances between two adjacent superlines, measured from
/// both sides.
fn width_samples(a: &Superline, b: &Superline) -> Vec<f64> {
    let mut out = Vec::new();
    for p in &a.merged_centers {
        if let Some(d) = interior_distance(&xy(p), &b.merged_centers) {
            out.push(d);
        }
    }
    for p in &b.merged_centers {
        if let Some(d) = interior_distance(&xy(p), &a.merged_centers) {
            out.push(d);
        }
    }
    out
}

/// Build the road model: lane count and widths from adjacent superlines,
/// and the high-resolution centerline obtained by displacing every marking
/// center toward the road center along its local 2D normal (Z copied from
/// the source center).
pub fn build_road_model(superlines: &[Superline], cfg: &TopologyConfig) -> Result<RoadModel> {
    if superlines.is_empty() {
        return Err(Error::Topology("no superlines".into()));
    }
    let mut sorted: Vec<&Superline> = superlines.iter().collect();
    sorted.sort_by_key(|s| s.lane_offset);
    for (i, s) in sorted.iter().enumerate() {
        if s.lane_offset != i as i32 {
            return Err(Error::Topology(format!(
                "non-contiguous lane offsets: expected {} but superline {} sits at {}",
                i, s.id, s.lane_offset
            )));
        }
    }
    let m = sorted.len();

    if m == 1 {
        // Degenerate single-line road: the marking itself is the reference.
        return Ok(RoadModel {
            reference_polyline: sorted[0].merged_centers.clone(),
            lane_count: 1,
            lane_widths: vec![cfg.default_lane_width],
            width_sigma: 0.0,
            width_samples: Vec::new(),
        });
    }

    let mut widths = Vec::with_capacity(m - 1);
    let mut all_samples = Vec::new();
    for pair in sorted.windows(2) {
        let mut samples = width_samples(pair[0], pair[1]);
        if samples.is_empty() {
            return Err(Error::Topology(format!(
                "no width samples between offsets {} and {}",
                pair[0].lane_offset, pair[1].lane_offset
            )));
        }
        let w = median(&mut samples);
        if !(cfg.min_lane_width..=cfg.max_lane_width).contains(&w) {
            return Err(Error::Topology(format!(
                "estimated lane width {w:.2} m between offsets {} and {} is outside \
                 the plausibility band [{}, {}]",
                pair[0].lane_offset, pair[1].lane_offset, cfg.min_lane_width, cfg.max_lane_width
            )));
        }
        widths.push(w);
        all_samples.extend(samples);
    }

    // Lateral position of line o (rightward from line 0) and of the center.
    let mut lateral = Vec::with_capacity(m);
    lateral.push(0.0);
    for w in &widths {
        let last = *lateral.last().unwrap();
        lateral.push(last + w);
    }
    let center_lateral = lateral[m - 1] * 0.5;

    let mut reference: Vec<Vector3<f64>> = Vec::new();
    for (o, line) in sorted.iter().enumerate() {
        let centers = &line.merged_centers;
        let shift = center_lateral - lateral[o]; // positive = move right
        if centers.len() == 1 {
            // No local direction; only valid if the line is already central.
            if shift.abs() < 1e-9 {
                reference.push(centers[0]);
            }
            continue;
        }
        for (k, p) in centers.iter().enumerate() {
            let (a, b) = if k + 1 < centers.len() {
                (centers[k], centers[k + 1])
            } else {
                (centers[k - 1], centers[k])
            };
            let d = xy(&b) - xy(&a);
            let len = d.norm();
            if len < 1e-12 {
                continue;
            }
            let t = d / len;
            let right = Vector2::new(t.y, -t.x);
            let moved = xy(p) + right * shift;
            reference.push(Vector3::new(moved.x, moved.y, p.z));
        }
    }
    if reference.is_empty() {
        return Err(Error::Topology("reference polyline is empty".into()));
    }
    let order = greedy_chain_order(&reference);
    let reference_polyline: Vec<Vector3<f64>> = order.iter().map(|&i| reference[i]).collect();

    let n = all_samples.len() as f64;
    let mean = all_samples.iter().sum::<f64>() / n;
    let var = all_samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;

    Ok(RoadModel {
        reference_polyline,
        lane_count: m - 1,
        lane_widths: widths,
        width_sigma: var.sqrt(),
        width_samples: all_samples,
    })
}

/// Full topology stage.
pub fn resolve_topology(
    lines: &[CandidateLine],
    cfg: &TopologyConfig,
) -> Result<(Vec<RelativeLookup>, Vec<Superline>, RoadModel)> {
    let lookups = relative_lookup(lines, cfg)?;
    let superlines = global_lookup(&lookups, lines, cfg)?;
    let model = build_road_model(&superlines, cfg)?;
    Ok((lookups, superlines, model))
}
