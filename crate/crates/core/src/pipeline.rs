//! Stage drivers chaining the modules into the full pipeline, plus the
//! versioned intermediate artifact formats that let stages be rerun
//! independently.

use std::fs;
use std::path::Path;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::{CoordFrame, Frame, MarkPoint, PointCloud};
use crate::clustering::{cluster_markings, Cluster};
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::evaluation::continuity_report;
use crate::extraction::{self, PlaneSample};
use crate::lane_builder::{build_candidate_lines, combine_candidates, CandidateLine};
use crate::odr::{export_road_model, OdrDocument};
use crate::topology::{resolve_topology, RelativeLookup, RoadModel, Superline};

const CLOUD_HEADER: &str = "# lanemap-cloud v1 world";
const PLANES_HEADER: &str = "# lanemap-planes v1";
const MODEL_FORMAT: &str = "lanemap-road-model";

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ExtractStats {
    pub frames: usize,
    pub frames_skipped: usize,
    pub points_in: usize,
    pub points_cropped: usize,
    pub points_marking: usize,
    pub points_world: usize,
}

/// World cloud, plane sample, cropped count, raw count of one frame.
type FrameExtract = Option<(PointCloud, PlaneSample, usize, usize)>;

/// Per-frame extraction and world accumulation: crop, ground plane,
/// marking filter, world transform, then radius outlier removal on the
/// merged cloud. Frames whose ground plane cannot be estimated are skipped
/// with a warning.
pub fn extract_markings(
    frames: &[Frame],
    cfg: &PipelineConfig,
) -> Result<(PointCloud, Vec<PlaneSample>, ExtractStats)> {
    let per_frame: Vec<Result<FrameExtract>> = frames
        .par_iter()
        .map(|frame| {
            let cropped = extraction::crop(&frame.cloud, &cfg.extraction)?;
            if cropped.len() < 3 {
                return Ok(None);
            }
            let plane = match extraction::fit_ground_plane(&cropped, &cfg.extraction) {
                Ok(p) => p,
                Err(Error::Estimation(_)) => return Ok(None),
                Err(e) => return Err(e),
            };
            let markings = extraction::filter_markings(&cropped, &plane, &cfg.extraction);
            let world = crate::cloud::to_world(&Frame {
                cloud: markings,
                pose: frame.pose,
                timestamp: frame.timestamp,
            })?;
            // Rotate the plane normal into the world frame (yaw only).
            let (sin, cos) = frame.pose.yaw.sin_cos();
            let n = plane.normal;
            let world_normal = Vector3::new(cos * n.x - sin * n.y, sin * n.x + cos * n.y, n.z);
            let sample = PlaneSample {
                position: frame.pose.translation,
                normal: world_normal,
                inlier_count: plane.inlier_count,
            };
            Ok(Some((world, sample, cropped.len(), frame.cloud.len())))
        })
        .collect();

    let mut stats = ExtractStats {
        frames: frames.len(),
        ..Default::default()
    };
    let mut clouds = Vec::new();
    let mut planes = Vec::new();
    for item in per_frame {
        match item? {
            Some((world, plane, cropped, raw)) => {
                stats.points_in += raw;
                stats.points_cropped += cropped;
                stats.points_marking += world.len();
                clouds.push(world);
                planes.push(plane);
            }
            None => stats.frames_skipped += 1,
        }
    }
    if stats.frames_skipped > 0 {
        log::warn!(
            "extract: skipped {}/{} frames without a usable ground plane",
            stats.frames_skipped,
            stats.frames
        );
    }
    let merged = crate::cloud::merge_world(&clouds)?;
    let cleaned = extraction::remove_radius_outliers(&merged, &cfg.extraction)?;
    stats.points_world = cleaned.len();
    log::info!(
        "extract: {} points in, {} after crop, {} markings, {} after outlier removal",
        stats.points_in,
        stats.points_cropped,
        stats.points_marking,
        stats.points_world
    );
    Ok((cleaned, planes, stats))
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct BuildStats {
    pub clusters: usize,
    pub candidate_lines: usize,
    pub combined_lines: usize,
    pub superlines: usize,
}

/// Output of the model-building stage.
pub struct BuildOutput {
    pub clusters: Vec<Cluster>,
    pub lines: Vec<CandidateLine>,
    pub lookups: Vec<RelativeLookup>,
    pub superlines: Vec<Superline>,
    pub model: RoadModel,
    pub stats: BuildStats,
}

/// Clustering, candidate-line search/combination, and topology resolution.
pub fn build_model(cloud: &PointCloud, cfg: &PipelineConfig) -> Result<BuildOutput> {
    let clusters = cluster_markings(cloud, &cfg.clustering)?;
    let candidates = build_candidate_lines(&clusters, &cfg.search);
    let candidate_count = candidates.len();
    let lines = combine_candidates(candidates, &cfg.search);
    let (lookups, superlines, model) = resolve_topology(&lines, &cfg.topology)?;
    let stats = BuildStats {
        clusters: clusters.len(),
        candidate_lines: candidate_count,
        combined_lines: lines.len(),
        superlines: superlines.len(),
    };
    log::info!(
        "build: {} clusters -> {} candidates -> {} lines -> {} superlines, {} lanes",
        stats.clusters,
        stats.candidate_lines,
        stats.combined_lines,
        stats.superlines,
        model.lane_count
    );
    Ok(BuildOutput {
        clusters,
        lines,
        lookups,
        superlines,
        model,
        stats,
    })
}

/// Fit and validate the OpenDRIVE document, enforcing the configured
/// junction continuity limits.
pub fn export_document(
    model: &RoadModel,
    planes: &[PlaneSample],
    cfg: &PipelineConfig,
    georeference: String,
) -> Result<OdrDocument> {
    let doc = export_road_model(model, planes, &cfg.export, georeference)?;
    for junction in continuity_report(&doc) {
        if junction.gap > cfg.export.max_gap || junction.kink_deg > cfg.export.max_kink_deg {
            return Err(Error::Export(format!(
                "continuity violation at s={:.1}: gap {:.4} m, kink {:.3} deg",
                junction.s, junction.gap, junction.kink_deg
            )));
        }
    }
    Ok(doc)
}

/// Everything produced by a full run.
pub struct PipelineOutput {
    pub cloud: PointCloud,
    pub planes: Vec<PlaneSample>,
    pub extract_stats: ExtractStats,
    pub build: BuildOutput,
    pub document: OdrDocument,
}

/// Georeference text embedding the recording origin that ingest
/// subtracted; the proj string is a placeholder, geodesy is out of scope.
pub fn georeference_for_origin(origin: &Vector3<f64>) -> String {
    format!(
        "+proj=tmerc +datum=WGS84 +units=m (placeholder); local origin at world ({}, {}, {})",
        origin.x, origin.y, origin.z
    )
}

/// Full chain: extract, build, export.
pub fn run_pipeline(frames: &[Frame], cfg: &PipelineConfig) -> Result<PipelineOutput> {
    run_pipeline_at_origin(frames, cfg, &Vector3::zeros())
}

/// As [`run_pipeline`], georeferenced to the recording origin returned by
/// [`crate::ingest::read_recording_with_origin`].
pub fn run_pipeline_at_origin(
    frames: &[Frame],
    cfg: &PipelineConfig,
    origin: &Vector3<f64>,
) -> Result<PipelineOutput> {
    cfg.validate()?;
    let (cloud, planes, extract_stats) = extract_markings(frames, cfg)?;
    let build = build_model(&cloud, cfg)?;
    let document = export_document(&build.model, &planes, cfg, georeference_for_origin(origin))?;
    Ok(PipelineOutput {
        cloud,
        planes,
        extract_stats,
        build,
        document,
    })
}

/// Debug dump: every point of every cluster as `cluster_id,x,y,z`.
pub fn write_clusters_debug(path: &Path, clusters: &[Cluster]) -> Result<()> {
    let mut text = String::from("# lanemap-clusters v1
id,x,y,z
");
    for (id, c) in clusters.iter().enumerate() {
        for p in &c.points.points {
            text.push_str(&format!("{},{},{},{}
", id, p.x, p.y, p.z));
        }
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Debug dump: candidate lines as ordered polylines,
/// `line_id,seq,x,y,z`.
pub fn write_lines_debug(path: &Path, lines: &[CandidateLine]) -> Result<()> {
    let mut text = String::from("# lanemap-lines v1
line_id,seq,x,y,z
");
    for line in lines {
        for (seq, c) in line.centers.iter().enumerate() {
            text.push_str(&format!("{},{},{},{},{}
", line.id, seq, c.x, c.y, c.z));
        }
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// Versioned intermediate artifacts
// ---------------------------------------------------------------------------

pub fn write_world_cloud(path: &Path, cloud: &PointCloud) -> Result<()> {
    let mut text = String::with_capacity(cloud.len() * 40 + 64);
    text.push_str(CLOUD_HEADER);
    text.push_str("\nx,y,z,reflectivity\n");
    for p in &cloud.points {
        text.push_str(&format!("{},{},{},{}\n", p.x, p.y, p.z, p.reflectivity));
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_world_cloud(path: &Path) -> Result<PointCloud> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == CLOUD_HEADER => {}
        other => {
            return Err(Error::Structural(format!(
                "{}: expected cloud header {CLOUD_HEADER:?}, found {other:?}",
                path.display()
            )))
        }
    }
    let mut points = Vec::new();
    for (idx, line) in lines.enumerate() {
        let line_no = idx + 2;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed == "x,y,z,reflectivity" {
            continue;
        }
        let cols: Vec<&str> = trimmed.split(',').collect();
        if cols.len() != 4 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: line_no,
                msg: format!("expected 4 columns, got {}", cols.len()),
            });
        }
        let mut vals = [0.0f64; 4];
        for (v, col) in vals.iter_mut().zip(&cols) {
            *v = col.trim().parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line: line_no,
                msg: format!("not a number: {col:?}"),
            })?;
        }
        let p = MarkPoint::new(vals[0], vals[1], vals[2], vals[3]);
        p.validate().map_err(|msg| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            msg,
        })?;
        points.push(p);
    }
    Ok(PointCloud::new(points, CoordFrame::World))
}

pub fn write_planes(path: &Path, planes: &[PlaneSample]) -> Result<()> {
    let mut text = String::from(PLANES_HEADER);
    text.push_str("\npx,py,pz,nx,ny,nz,inliers\n");
    for p in planes {
        text.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            p.position.x, p.position.y, p.position.z, p.normal.x, p.normal.y, p.normal.z, p.inlier_count
        ));
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_planes(path: &Path) -> Result<Vec<PlaneSample>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == PLANES_HEADER => {}
        other => {
            return Err(Error::Structural(format!(
                "{}: expected planes header {PLANES_HEADER:?}, found {other:?}",
                path.display()
            )))
        }
    }
    let mut out = Vec::new();
    for (idx, line) in lines.enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with("px,") {
            continue;
        }
        let cols: Vec<&str> = trimmed.split(',').collect();
        if cols.len() != 7 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: idx + 2,
                msg: format!("expected 7 columns, got {}", cols.len()),
            });
        }
        let f = |i: usize| -> Result<f64> {
            cols[i].trim().parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line: idx + 2,
                msg: format!("not a number: {:?}", cols[i]),
            })
        };
        out.push(PlaneSample {
            position: Vector3::new(f(0)?, f(1)?, f(2)?),
            normal: Vector3::new(f(3)?, f(4)?, f(5)?),
            inlier_count: cols[6].trim().parse().unwrap_or(0),
        });
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct RoadModelFile {
    format: String,
    version: u32,
    model: RoadModel,
}

pub fn write_road_model(path: &Path, model: &RoadModel) -> Result<()> {
    let file = RoadModelFile {
        format: MODEL_FORMAT.into(),
        version: 1,
        model: model.clone(),
    };
    let json = serde_json::to_string_pretty(&file)
        .map_err(|e| Error::Structural(format!("serialize road model: {e}")))?;
    fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub fn read_road_model(path: &Path) -> Result<RoadModel> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: RoadModelFile = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        msg: e.to_string(),
    })?;
    if file.format != MODEL_FORMAT || file.version != 1 {
        return Err(Error::Structural(format!(
            "{}: unsupported road model format {}/{}",
            path.display(),
            file.format,
            file.version
        )));
    }
    Ok(file.model)
}

/// Relation-graph diagnostics dump: one edge per line.
pub fn write_relations(path: &Path, lookups: &[RelativeLookup]) -> Result<()> {
    let mut text = String::from("# lanemap-relations v1\nsource,target,side,distance,support\n");
    for lookup in lookups {
        for e in &lookup.entries {
            text.push_str(&format!(
                "{},{},{:?},{},{}\n",
                lookup.source_id, e.target_id, e.side, e.distance, e.support
            ));
        }
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::TempDir;

    #[test]
    fn cloud_artifact_round_trip() {
        let tmp = TempDir::new().unwrap();
        let path = tmp.path().join("markings.csv");
        let cloud = PointCloud::new(
            vec![
                MarkPoint::new(1.5, -2.0, 0.1, 0.9),
                MarkPoint::new(100.0, 3.5, 0.2, 0.75),
            ],
            CoordFrame::World,
        );
        write_world_cloud(&path, &cloud).unwrap();
        let back = read_world_cloud(&path).unwrap();
        assert_eq!(back, cloud);
    }

    #[test]
    fn cloud_artifact_rejects_wrong_header() {
        let tmp = TempDir::new().unwrap();
        let path = tmp.path().join("markings.csv");
        fs::write(&path, "x,y,z,reflectivity\n1,2,3,0.5\n").unwrap();
        assert!(matches!(
            read_world_cloud(&path),
            Err(Error::Structural(_))
        ));
    }

    #[test]
    fn planes_artifact_round_trip() {
        let tmp = TempDir::new().unwrap();
        let path = tmp.path().join("planes.csv");
        let planes = vec![PlaneSample {
            position: Vector3::new(1.0, 2.0, 0.5),
            normal: Vector3::new(0.0, 0.0, 1.0),
            inlier_count: 123,
        }];
        write_planes(&path, &planes).unwrap();
        let back = read_planes(&path).unwrap();
        assert_eq!(back, planes);
    }

    #[test]
    fn road_model_json_round_trip() {
        let tmp = TempDir::new().unwrap();
        let path = tmp.path().join("road_model.json");
        let model = RoadModel {
            reference_polyline: vec![Vector3::new(0.0, 0.0, 0.0), Vector3::new(5.0, 0.1, 0.0)],
            lane_count: 3,
            lane_widths: vec![3.5, 3.4, 3.6],
            width_sigma: 0.05,
            width_samples: vec![3.5, 3.4, 3.6],
        };
        write_road_model(&path, &model).unwrap();
        let back = read_road_model(&path).unwrap();
        assert_eq!(back.lane_count, 3);
        assert_eq!(back.lane_widths, model.lane_widths);
        assert_eq!(back.reference_polyline, model.reference_polyline);
    }
}
