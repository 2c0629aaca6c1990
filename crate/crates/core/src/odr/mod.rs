//! OpenDRIVE document model, export fitting, XML serialization, and
//! reference-line sampling.

mod export;
mod read;
mod sample;
mod write;

pub use export::{
    eval_rot, export_road_model, fit_elevation, fit_param_poly3, fit_param_poly3_pinned,
    fit_superelevation, split_by_dist, Segment,
};
pub use read::read_opendrive;
pub use sample::{sample_reference_line, GeometrySampler};
pub use write::{opendrive_to_string, write_opendrive};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parametric cubic curve over normalized p in [0,1], in the local U/V
/// frame of its geometry. `au`/`av` are pinned to zero so the curve starts
/// at the local origin; `bv` is left to the fit and stays near zero when
/// the heading compensation is good.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamPoly3 {
    pub au: f64,
    pub bu: f64,
    pub cu: f64,
    pub du: f64,
    pub av: f64,
    pub bv: f64,
    pub cv: f64,
    pub dv: f64,
}

impl ParamPoly3 {
    pub fn eval(&self, p: f64) -> (f64, f64) {
        let u = self.au + p * (self.bu + p * (self.cu + p * self.du));
        let v = self.av + p * (self.bv + p * (self.cv + p * self.dv));
        (u, v)
    }

    pub fn derivative(&self, p: f64) -> (f64, f64) {
        let du = self.bu + p * (2.0 * self.cu + 3.0 * p * self.du);
        let dv = self.bv + p * (2.0 * self.cv + 3.0 * p * self.dv);
        (du, dv)
    }

    pub fn speed(&self, p: f64) -> f64 {
        let (du, dv) = self.derivative(p);
        du.hypot(dv)
    }
}

/// Reference-line primitive of one geometry record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Curve {
    Line,
    Arc { curvature: f64 },
    ParamPoly3(ParamPoly3),
}

/// One planView geometry: local curve placed at (x, y, hdg), covering
/// road arclength [s, s + length].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub s: f64,
    pub x: f64,
    pub y: f64,
    pub hdg: f64,
    pub length: f64,
    pub curve: Curve,
}

/// Cubic record `a + b ds + c ds^2 + d ds^3` valid from road position `s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CubicRecord {
    pub s: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl CubicRecord {
    pub fn eval(&self, s: f64) -> f64 {
        let ds = s - self.s;
        self.a + ds * (self.b + ds * (self.c + ds * self.d))
    }
}

/// Lane structure attached to the reference line: one section of constant
/// width driving lanes. `lane_widths` is ordered leftmost lane first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaneLayout {
    pub lane_widths: Vec<f64>,
}

impl LaneLayout {
    pub fn lane_count(&self) -> usize {
        self.lane_widths.len()
    }

    /// Lanes on the left of the reference line (the rest go right).
    pub fn left_count(&self) -> usize {
        self.lane_count() / 2
    }

    /// Lateral shift of the lane-0 line so lane boundaries align with the
    /// road-center reference line. Odd lane counts put the reference in the
    /// middle of the center lane, half a width away from the next boundary.
    pub fn lane_offset(&self) -> f64 {
        let n = self.lane_count();
        if n % 2 == 1 {
            self.lane_widths[self.left_count()] * 0.5
        } else {
            0.0
        }
    }
}

/// In-memory OpenDRIVE document: one road.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdrDocument {
    pub georeference: String,
    pub road_id: String,
    pub plan_view: Vec<Geometry>,
    pub elevation: Vec<CubicRecord>,
    pub superelevation: Vec<CubicRecord>,
    pub lanes: LaneLayout,
}

impl OdrDocument {
    pub fn total_length(&self) -> f64 {
        self.plan_view
            .last()
            .map(|g| g.s + g.length)
            .unwrap_or(0.0)
    }

    /// Structural validation: non-empty contiguous planView with positive
    /// lengths, records inside the road range.
    pub fn validate(&self) -> Result<()> {
        if self.plan_view.is_empty() {
            return Err(Error::Export("planView has no geometry".into()));
        }
        let mut expected_s = 0.0;
        for (i, g) in self.plan_view.iter().enumerate() {
            if g.length <= 0.0 {
                return Err(Error::Export(format!(
                    "geometry {i} has non-positive length {}",
                    g.length
                )));
            }
            if g.s < 0.0 || (g.s - expected_s).abs() > 1e-6 {
                return Err(Error::Export(format!(
                    "geometry {i} starts at s={} but the previous one ends at {expected_s}",
                    g.s
                )));
            }
            expected_s = g.s + g.length;
        }
        for rec in self.elevation.iter().chain(&self.superelevation) {
            if rec.s < 0.0 || rec.s > self.total_length() + 1e-6 {
                return Err(Error::Export(format!(
                    "profile record at s={} lies outside the road",
                    rec.s
                )));
            }
        }
        if self.lanes.lane_count() == 0 {
            return Err(Error::Export("road needs at least one lane".into()));
        }
        Ok(())
    }

    /// Elevation at road position `s` (0 when no profile is present).
    pub fn elevation_at(&self, s: f64) -> f64 {
        profile_at(&self.elevation, s)
    }

    pub fn superelevation_at(&self, s: f64) -> f64 {
        profile_at(&self.superelevation, s)
    }
}

fn profile_at(records: &[CubicRecord], s: f64) -> f64 {
    let mut current: Option<&CubicRecord> = None;
    for r in records {
        if r.s <= s + 1e-12 {
            current = Some(r);
        } else {
            break;
        }
    }
    current.map_or(0.0, |r| r.eval(s))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExportConfig {
    /// Target planView geometry length.
    pub segment_length: f64,
    /// Look-ahead/look-back extension size as a fraction of the segment.
    pub lookahead_fraction: f64,
    /// Weight multiplier for the first and last own point of a segment.
    pub endpoint_weight: f64,
    /// Step used when sampling documents for validation.
    pub sample_step: f64,
    /// Largest tolerable junction position gap in the self-check.
    pub max_gap: f64,
    /// Largest tolerable junction heading difference, degrees.
    pub max_kink_deg: f64,
    /// Chain geometries: each segment starts exactly at the previous fitted
    /// end pose with its start tangent pinned (bV = 0). Off = every segment
    /// is placed independently from its own heading estimate.
    pub chain_segments: bool,
}

impl Default for ExportConfig {
    fn default() -> Self {
        ExportConfig {
            segment_length: 100.0,
            lookahead_fraction: 0.125,
            endpoint_weight: 100.0,
            sample_step: 1.0,
            max_gap: 0.01,
            max_kink_deg: 0.5,
            chain_segments: true,
        }
    }
}

impl ExportConfig {
    pub fn validate(&self) -> Result<()> {
        if self.segment_length <= 0.0 {
            return Err(Error::Config("segment_length must be positive".into()));
        }
        if !(0.0 < self.lookahead_fraction && self.lookahead_fraction < 0.5) {
            return Err(Error::Config(
                "lookahead_fraction must lie in (0, 0.5)".into(),
            ));
        }
        if self.endpoint_weight < 1.0 {
            return Err(Error::Config("endpoint_weight must be >= 1".into()));
        }
        if self.sample_step <= 0.0 {
            return Err(Error::Config("sample_step must be positive".into()));
        }
        if self.max_gap <= 0.0 || self.max_kink_deg <= 0.0 {
            return Err(Error::Config("continuity limits must be positive".into()));
        }
        Ok(())
    }
}
