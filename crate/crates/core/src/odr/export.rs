//! Road-model export: segmentation with look-back/look-ahead extensions,
//! heading compensation, weighted paramPoly3 fitting, and elevation /
//! superelevation profiles.

use nalgebra::{DMatrix, DVector, Vector2, Vector3};

use super::{CubicRecord, Curve, ExportConfig, Geometry, LaneLayout, OdrDocument, ParamPoly3};
use crate::error::{Error, Result};
use crate::extraction::PlaneSample;
use crate::geom::{normalize_angle, principal_direction};
use crate::topology::RoadModel;

/// One reference-line slice to be fitted as a single geometry. Extension
/// points steady the fit at the joints but are not part of the emitted
/// geometry.
#[derive(Debug, Clone)]
pub struct Segment {
    /// Own points, chain-ordered. First point becomes the geometry origin.
    pub points: Vec<Vector3<f64>>,
    /// Points reaching back into the predecessor segment.
    pub lookback: Vec<Vector3<f64>>,
    /// Points reaching into the successor segment.
    pub lookahead: Vec<Vector3<f64>>,
    /// Chord arclength of the first own point along the full polyline.
    pub s_start: f64,
}

fn xy(p: &Vector3<f64>) -> Vector2<f64> {
    Vector2::new(p.x, p.y)
}

fn cumulative_xy(points: &[Vector3<f64>]) -> Vec<f64> {
    let mut out = Vec::with_capacity(points.len());
    let mut acc = 0.0;
    out.push(0.0);
    for w in points.windows(2) {
        acc += (xy(&w[1]) - xy(&w[0])).norm();
        out.push(acc);
    }
    out
}

/// Split the reference polyline into segments of the configured chord
/// length. A trailing remainder shorter than half a segment merges into its
/// predecessor. Neighboring segments share their boundary point, and each
/// segment carries extension points spanning `lookahead_fraction` of the
/// segment length into its neighbors.
pub fn split_by_dist(polyline: &[Vector3<f64>], cfg: &ExportConfig) -> Result<Vec<Segment>> {
    if polyline.len() < 2 {
        return Err(Error::Export("reference polyline needs >= 2 points".into()));
    }
    let cum = cumulative_xy(polyline);
    let total = *cum.last().unwrap();
    if total < 1.0 {
        return Err(Error::Export(format!(
            "reference polyline is only {total:.3} m long"
        )));
    }
    let seg_len = cfg.segment_length;
    let n_full = (total / seg_len).floor() as usize;
    let remainder = total - n_full as f64 * seg_len;
    let boundary_count = if n_full == 0 {
        0
    } else if remainder >= seg_len * 0.5 {
        n_full
    } else {
        n_full.saturating_sub(1)
    };

    // Snap each boundary to the nearest polyline vertex.
    let mut cuts = vec![0usize];
    for k in 1..=boundary_count {
        let target = k as f64 * seg_len;
        let idx = cum
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| {
                (*a - target).abs().partial_cmp(&(*b - target).abs()).unwrap()
            })
            .map(|(i, _)| i)
            .unwrap();
        if idx > *cuts.last().unwrap() && idx < polyline.len() - 1 {
            cuts.push(idx);
        }
    }
    cuts.push(polyline.len() - 1);

    let ext_len = cfg.lookahead_fraction * seg_len;
    let mut segments = Vec::with_capacity(cuts.len() - 1);
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let lookback: Vec<Vector3<f64>> = (0..a)
            .filter(|&j| cum[a] - cum[j] <= ext_len)
            .map(|j| polyline[j])
            .collect();
        let lookahead: Vec<Vector3<f64>> = (b + 1..polyline.len())
            .filter(|&j| cum[j] - cum[b] <= ext_len)
            .map(|j| polyline[j])
            .collect();
        segments.push(Segment {
            points: polyline[a..=b].to_vec(),
            lookback,
            lookahead,
            s_start: cum[a],
        });
    }
    Ok(segments)
}

/// Heading of a segment: principal direction of its own points in 2D,
/// sign-aligned with the chain direction.
pub fn eval_rot(segment: &Segment) -> f64 {
    let flat: Vec<Vector3<f64>> = segment
        .points
        .iter()
        .map(|p| Vector3::new(p.x, p.y, 0.0))
        .collect();
    let chain = xy(segment.points.last().unwrap()) - xy(&segment.points[0]);
    let dir = match principal_direction(&flat) {
        Some(d) => {
            let d2 = Vector2::new(d.x, d.y);
            if d2.dot(&chain) < 0.0 {
                -d2
            } else {
                d2
            }
        }
        None => chain,
    };
    normalize_angle(dir.y.atan2(dir.x))
}

/// Weighted least squares over the monomials `p^powers[i]`.
fn weighted_powers_fit(ps: &[f64], values: &[f64], weights: &[f64], powers: &[i32]) -> Vec<f64> {
    let n = powers.len();
    if n == 0 {
        return Vec::new();
    }
    let mut m = DMatrix::zeros(n, n);
    let mut rhs = DVector::zeros(n);
    for ((&p, &y), &w) in ps.iter().zip(values).zip(weights) {
        let basis: Vec<f64> = powers.iter().map(|&k| p.powi(k)).collect();
        for r in 0..n {
            for c in 0..n {
                m[(r, c)] += w * basis[r] * basis[c];
            }
            rhs[r] += w * basis[r] * y;
        }
    }
    match m.lu().solve(&rhs) {
        Some(sol) => sol.iter().copied().collect(),
        None => vec![0.0; n],
    }
}

/// Shared preparation for the u/v fits: points rotated into the local
/// frame, chord-fraction parameters (own points span [0,1], extensions
/// map outside), and endpoint weights.
struct LocalFit {
    ps: Vec<f64>,
    us: Vec<f64>,
    vs: Vec<f64>,
    weights: Vec<f64>,
    degree: usize,
}

fn prepare_local_fit(
    segment: &Segment,
    origin: Vector2<f64>,
    hdg: f64,
    cfg: &ExportConfig,
) -> Result<LocalFit> {
    let all: Vec<Vector3<f64>> = segment
        .lookback
        .iter()
        .chain(&segment.points)
        .chain(&segment.lookahead)
        .copied()
        .collect();
    let own_first = segment.lookback.len();
    let own_last = own_first + segment.points.len() - 1;

    let (sin, cos) = hdg.sin_cos();
    let local: Vec<Vector2<f64>> = all
        .iter()
        .map(|p| {
            let d = xy(p) - origin;
            Vector2::new(cos * d.x + sin * d.y, -sin * d.x + cos * d.y)
        })
        .collect();

    let mut distinct = 1usize;
    for w in local.windows(2) {
        if (w[1] - w[0]).norm() > 1e-12 {
            distinct += 1;
        }
    }
    if distinct < 2 {
        return Err(Error::Export("segment has fewer than 2 distinct points".into()));
    }
    let degree = (distinct - 1).min(3);

    let mut chord = Vec::with_capacity(local.len());
    let mut acc = 0.0;
    chord.push(0.0);
    for w in local.windows(2) {
        acc += (w[1] - w[0]).norm();
        chord.push(acc);
    }
    let span = chord[own_last] - chord[own_first];
    if span <= 0.0 {
        return Err(Error::Export("segment has zero chord span".into()));
    }
    let ps: Vec<f64> = chord
        .iter()
        .map(|t| (t - chord[own_first]) / span)
        .collect();
    let mut weights = vec![1.0; local.len()];
    weights[own_first] = cfg.endpoint_weight;
    weights[own_last] = cfg.endpoint_weight;

    Ok(LocalFit {
        ps,
        us: local.iter().map(|p| p.x).collect(),
        vs: local.iter().map(|p| p.y).collect(),
        weights,
        degree,
    })
}

fn coeff(v: &[f64], i: usize) -> f64 {
    v.get(i).copied().unwrap_or(0.0)
}

/// Fit the u/v cubics of one segment.
///
/// The segment is rotated by the negative heading around its first own
/// point; the fit parameter is the chord-length fraction with own points
/// normalized to [0,1] and extensions mapped outside. The first and last
/// own points carry `endpoint_weight`. Degree drops to the available data
/// (line fit for two distinct points).
pub fn fit_param_poly3(
    segment: &Segment,
    hdg: f64,
    cfg: &ExportConfig,
) -> Result<(ParamPoly3, f64)> {
    let origin = xy(&segment.points[0]);
    let fit = prepare_local_fit(segment, origin, hdg, cfg)?;
    let powers: Vec<i32> = (1..=fit.degree as i32).collect();
    let cu = weighted_powers_fit(&fit.ps, &fit.us, &fit.weights, &powers);
    let cv = weighted_powers_fit(&fit.ps, &fit.vs, &fit.weights, &powers);
    let poly = ParamPoly3 {
        au: 0.0,
        bu: coeff(&cu, 0),
        cu: coeff(&cu, 1),
        du: coeff(&cu, 2),
        av: 0.0,
        bv: coeff(&cv, 0),
        cv: coeff(&cv, 1),
        dv: coeff(&cv, 2),
    };
    Ok((poly, super::sample::poly_arclength(&poly)))
}

/// Fit one segment with its start pinned: the curve begins exactly at
/// `origin` with heading `hdg` (`bV = 0`), so a chain of geometries whose
/// origins are the previous fitted end points has no leaps or kinks by
/// construction. The data fit otherwise works like [`fit_param_poly3`].
pub fn fit_param_poly3_pinned(
    segment: &Segment,
    origin: Vector2<f64>,
    hdg: f64,
    cfg: &ExportConfig,
) -> Result<(ParamPoly3, f64)> {
    let fit = prepare_local_fit(segment, origin, hdg, cfg)?;
    let u_powers: Vec<i32> = (1..=fit.degree as i32).collect();
    // v keeps no linear term; degree 1 data degenerates to a straight.
    let v_powers: Vec<i32> = (2..=fit.degree as i32).collect();
    let cu = weighted_powers_fit(&fit.ps, &fit.us, &fit.weights, &u_powers);
    let cv = weighted_powers_fit(&fit.ps, &fit.vs, &fit.weights, &v_powers);
    let poly = ParamPoly3 {
        au: 0.0,
        bu: coeff(&cu, 0),
        cu: coeff(&cu, 1),
        du: coeff(&cu, 2),
        av: 0.0,
        bv: 0.0,
        cv: coeff(&cv, 0),
        dv: coeff(&cv, 1),
    };
    Ok((poly, super::sample::poly_arclength(&poly)))
}

/// Unweighted cubic elevation over the segment's own points; extensions and
/// endpoint weighting are deliberately not used here. Returns the record
/// anchored at the segment's chord start.
pub fn fit_elevation(segment: &Segment) -> CubicRecord {
    let zs: Vec<f64> = segment.points.iter().map(|p| p.z).collect();
    let cum = cumulative_xy(&segment.points);
    fit_profile_record(&cum, &zs, segment.s_start)
}

fn fit_profile_record(ds: &[f64], values: &[f64], s: f64) -> CubicRecord {
    if values.is_empty() {
        return CubicRecord {
            s,
            a: 0.0,
            b: 0.0,
            c: 0.0,
            d: 0.0,
        };
    }
    let mut distinct = 1usize;
    for w in ds.windows(2) {
        if (w[1] - w[0]).abs() > 1e-12 {
            distinct += 1;
        }
    }
    if distinct < 2 {
        return CubicRecord {
            s,
            a: values.iter().sum::<f64>() / values.len() as f64,
            b: 0.0,
            c: 0.0,
            d: 0.0,
        };
    }
    let degree = (distinct - 1).min(3);
    // Unconstrained fit: include the constant term by solving for
    // [a, b, ..] over basis [1, ds, ds^2, ds^3].
    let n = degree + 1;
    let mut m = DMatrix::zeros(n, n);
    let mut rhs = DVector::zeros(n);
    for (&t, &y) in ds.iter().zip(values) {
        let mut powers = vec![1.0];
        for k in 1..n {
            powers.push(powers[k - 1] * t);
        }
        for r in 0..n {
            for c in 0..n {
                m[(r, c)] += powers[r] * powers[c];
            }
            rhs[r] += powers[r] * y;
        }
    }
    let sol = m.lu().solve(&rhs).unwrap_or_else(|| DVector::zeros(n));
    let coeff = |i: usize| if i < n { sol[i] } else { 0.0 };
    CubicRecord {
        s,
        a: coeff(0),
        b: coeff(1),
        c: coeff(2),
        d: coeff(3),
    }
}

/// Roll of the road surface derived from per-frame ground planes: the
/// signed angle between the plane normal and world up, taken across the
/// local road direction. Segments without any nearby plane sample emit no
/// record; with no samples at all the profile is omitted entirely.
pub fn fit_superelevation(segments: &[Segment], planes: &[PlaneSample]) -> Vec<CubicRecord> {
    if planes.is_empty() {
        return Vec::new();
    }
    // (segment, ds, roll) per plane sample, via the nearest own point.
    let mut per_segment: Vec<Vec<(f64, f64)>> = vec![Vec::new(); segments.len()];
    for sample in planes {
        let pos = xy(&sample.position);
        let mut best: Option<(f64, usize, usize)> = None;
        for (si, seg) in segments.iter().enumerate() {
            for (pi, p) in seg.points.iter().enumerate() {
                let d = (xy(p) - pos).norm();
                if best.is_none_or(|(bd, _, _)| d < bd) {
                    best = Some((d, si, pi));
                }
            }
        }
        let Some((_, si, pi)) = best else { continue };
        let seg = &segments[si];
        let (a, b) = if pi + 1 < seg.points.len() {
            (seg.points[pi], seg.points[pi + 1])
        } else {
            (seg.points[pi - 1], seg.points[pi])
        };
        let dir = xy(&b) - xy(&a);
        if dir.norm() < 1e-12 {
            continue;
        }
        let hdg = dir.y.atan2(dir.x);
        let left = Vector3::new(-hdg.sin(), hdg.cos(), 0.0);
        let n = sample.normal;
        let roll = (-n.dot(&left)).atan2(n.z);
        let cum = cumulative_xy(&seg.points);
        per_segment[si].push((cum[pi], roll));
    }
    let mut out = Vec::new();
    for (si, samples) in per_segment.iter().enumerate() {
        if samples.is_empty() {
            continue;
        }
        let ds: Vec<f64> = samples.iter().map(|(t, _)| *t).collect();
        let rolls: Vec<f64> = samples.iter().map(|(_, r)| *r).collect();
        out.push(fit_profile_record(&ds, &rolls, segments[si].s_start));
    }
    out
}

/// Fit the full road model into an OpenDRIVE document.
pub fn export_road_model(
    model: &RoadModel,
    planes: &[PlaneSample],
    cfg: &ExportConfig,
    georeference: String,
) -> Result<OdrDocument> {
    cfg.validate()?;
    let segments = split_by_dist(&model.reference_polyline, cfg)?;
    let mut plan_view = Vec::with_capacity(segments.len());
    let mut elevation = Vec::with_capacity(segments.len());
    let mut chord_to_geometry_s = Vec::with_capacity(segments.len());
    let mut s_running = 0.0;
    // End pose of the previous fitted geometry when chaining.
    let mut chain_start: Option<(Vector2<f64>, f64)> = None;
    for seg in &segments {
        let (start, hdg, poly, length) = if cfg.chain_segments {
            let (origin, start_hdg) = match chain_start {
                Some(pose) => pose,
                None => {
                    // First segment: take the start tangent of an
                    // unconstrained fit as the chain anchor heading.
                    let mean_hdg = eval_rot(seg);
                    let (free, _) = fit_param_poly3(seg, mean_hdg, cfg)?;
                    let (du, dv) = free.derivative(0.0);
                    (
                        xy(&seg.points[0]),
                        crate::geom::normalize_angle(mean_hdg + dv.atan2(du)),
                    )
                }
            };
            let (poly, length) = fit_param_poly3_pinned(seg, origin, start_hdg, cfg)?;
            (origin, start_hdg, poly, length)
        } else {
            let hdg = eval_rot(seg);
            let (poly, length) = fit_param_poly3(seg, hdg, cfg)?;
            (xy(&seg.points[0]), hdg, poly, length)
        };
        chord_to_geometry_s.push((seg.s_start, s_running));
        plan_view.push(Geometry {
            s: s_running,
            x: start.x,
            y: start.y,
            hdg,
            length,
            curve: Curve::ParamPoly3(poly),
        });
        // Inertial end pose of this fit, for the next link of the chain.
        let (u, v) = poly.eval(1.0);
        let (du, dv) = poly.derivative(1.0);
        let (sin, cos) = hdg.sin_cos();
        chain_start = Some((
            Vector2::new(start.x + cos * u - sin * v, start.y + sin * u + cos * v),
            crate::geom::normalize_angle(hdg + dv.atan2(du)),
        ));
        let mut rec = fit_elevation(seg);
        rec.s = s_running;
        elevation.push(rec);
        s_running += length;
    }
    let mut superelevation = fit_superelevation(&segments, planes);
    for rec in &mut superelevation {
        // Remap chord-based anchors onto the fitted arclength axis.
        if let Some((_, gs)) = chord_to_geometry_s
            .iter()
            .find(|(chord_s, _)| (chord_s - rec.s).abs() < 1e-9)
        {
            rec.s = *gs;
        }
    }
    let doc = OdrDocument {
        georeference,
        road_id: "1".into(),
        plan_view,
        elevation,
        superelevation,
        lanes: LaneLayout {
            lane_widths: model.lane_widths.clone(),
        },
    };
    doc.validate()?;
    Ok(doc)
}
