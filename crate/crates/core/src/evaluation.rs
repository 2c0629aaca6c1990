//! Map comparison and validation metrics: parametrization-invariant
//! reference-line distance, junction continuity, and lane-width statistics.

use nalgebra::Vector2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::angle_diff;
use crate::odr::{sample_reference_line, GeometrySampler, OdrDocument};
use crate::spatial::GridIndex2;
use crate::topology::RoadModel;

/// Distance statistics between two reference lines.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MapDistanceReport {
    pub rmse: f64,
    pub avg_distance: f64,
    pub sigma: f64,
    pub sample_count: usize,
    /// Length of the sampled (first) reference line in meters.
    pub eval_length: f64,
}

impl MapDistanceReport {
    /// Aligned plain-text table of the report rows.
    pub fn table(&self) -> String {
        format!(
            "RMSE              {:>10.3} (m)\n\
             avg. distance     {:>10.3} (m)\n\
             std. deviation    {:>10.3} (m)\n\
             eval. length      {:>10.3} (km)\n\
             samples           {:>10}\n",
            self.rmse,
            self.avg_distance,
            self.sigma,
            self.eval_length / 1000.0,
            self.sample_count
        )
    }
}

/// Lateral distance between two road descriptions, independent of how the
/// geometries are parameterized: `doc_a` is sampled every `step` meters and
/// measured against a 10x denser sampling of `doc_b` by 2D nearest-neighbor
/// distance.
pub fn map_distance(
    doc_a: &OdrDocument,
    doc_b: &OdrDocument,
    step: f64,
) -> Result<MapDistanceReport> {
    if step <= 0.0 {
        return Err(Error::Config("sampling step must be positive".into()));
    }
    let samples_a = sample_reference_line(doc_a, step);
    let dense_b = sample_reference_line(doc_b, step / 10.0);
    if samples_a.is_empty() || dense_b.is_empty() {
        return Err(Error::Structural(
            "map_distance: a document has no sampleable reference line".into(),
        ));
    }
    let b_points: Vec<Vector2<f64>> = dense_b.iter().map(|p| Vector2::new(p.x, p.y)).collect();
    let index = GridIndex2::build(&b_points, step.max(0.5));
    let distances: Vec<f64> = samples_a
        .par_iter()
        .map(|p| {
            index
                .nearest(&Vector2::new(p.x, p.y))
                .map(|(_, d)| d)
                .unwrap_or(f64::INFINITY)
        })
        .collect();
    let n = distances.len() as f64;
    let avg = distances.iter().sum::<f64>() / n;
    // Two-pass variance; rmse^2 = avg^2 + var keeps rmse >= avg under
    // floating-point round-off as well.
    let var = distances.iter().map(|d| (d - avg).powi(2)).sum::<f64>() / n;
    let sigma = var.sqrt();
    let rmse = (avg * avg + var).sqrt();
    Ok(MapDistanceReport {
        rmse,
        avg_distance: avg,
        sigma,
        sample_count: distances.len(),
        eval_length: doc_a.total_length(),
    })
}

/// Gap and kink at one geometry junction.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct JunctionReport {
    /// Road position of the junction.
    pub s: f64,
    /// Endpoint distance in meters.
    pub gap: f64,
    /// Heading difference in degrees.
    pub kink_deg: f64,
}

/// Endpoint gap and heading difference for every adjacent geometry pair.
pub fn continuity_report(doc: &OdrDocument) -> Vec<JunctionReport> {
    let samplers: Vec<GeometrySampler> = doc.plan_view.iter().map(GeometrySampler::new).collect();
    let mut out = Vec::new();
    for i in 0..samplers.len().saturating_sub(1) {
        let end = samplers[i].end_point();
        let end_hdg = samplers[i].heading_at(doc.plan_view[i].length);
        let start = samplers[i + 1].start_point();
        let start_hdg = samplers[i + 1].heading_at(0.0);
        out.push(JunctionReport {
            s: doc.plan_view[i + 1].s,
            gap: (end - start).norm(),
            kink_deg: angle_diff(end_hdg, start_hdg).to_degrees(),
        });
    }
    out
}

/// Mean and population sigma of the per-sample adjacent-line distances.
pub fn lane_width_stats(model: &RoadModel) -> Result<(f64, f64)> {
    if model.width_samples.is_empty() {
        return Err(Error::Estimation(
            "no lane width samples (single-line road)".into(),
        ));
    }
    let n = model.width_samples.len() as f64;
    let mean = model.width_samples.iter().sum::<f64>() / n;
    let var = model
        .width_samples
        .iter()
        .map(|w| (w - mean).powi(2))
        .sum::<f64>()
        / n;
    Ok((mean, var.sqrt()))
}
