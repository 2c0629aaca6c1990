//! Minimal OpenDRIVE reader: enough to sample reference lines for
//! evaluation. Supports line, arc, and normalized paramPoly3 geometries;
//! spirals are rejected explicitly.

use std::fs;
use std::path::Path;

use roxmltree::{Document, Node};

use super::{CubicRecord, Curve, Geometry, LaneLayout, OdrDocument, ParamPoly3};
use crate::error::{Error, Result};

fn attr_f64(node: &Node, name: &str, path: &Path) -> Result<f64> {
    let raw = node.attribute(name).ok_or_else(|| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        msg: format!("<{}> missing attribute {name}", node.tag_name().name()),
    })?;
    raw.trim().parse::<f64>().map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        msg: format!("attribute {name}={raw:?} is not a number"),
    })
}

fn parse_cubic(node: &Node, path: &Path) -> Result<CubicRecord> {
    Ok(CubicRecord {
        s: attr_f64(node, "s", path)?,
        a: attr_f64(node, "a", path)?,
        b: attr_f64(node, "b", path)?,
        c: attr_f64(node, "c", path)?,
        d: attr_f64(node, "d", path)?,
    })
}

fn parse_geometry(node: &Node, path: &Path) -> Result<Geometry> {
    let curve_node = node
        .children()
        .find(|c| c.is_element())
        .ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg: "<geometry> has no curve element".into(),
        })?;
    let curve = match curve_node.tag_name().name() {
        "line" => Curve::Line,
        "arc" => Curve::Arc {
            curvature: attr_f64(&curve_node, "curvature", path)?,
        },
        "paramPoly3" => {
            let p_range = curve_node.attribute("pRange").unwrap_or("normalized");
            if p_range != "normalized" {
                return Err(Error::Unsupported(format!(
                    "paramPoly3 pRange={p_range:?}; only \"normalized\" is supported"
                )));
            }
            Curve::ParamPoly3(ParamPoly3 {
                au: attr_f64(&curve_node, "aU", path)?,
                bu: attr_f64(&curve_node, "bU", path)?,
                cu: attr_f64(&curve_node, "cU", path)?,
                du: attr_f64(&curve_node, "dU", path)?,
                av: attr_f64(&curve_node, "aV", path)?,
                bv: attr_f64(&curve_node, "bV", path)?,
                cv: attr_f64(&curve_node, "cV", path)?,
                dv: attr_f64(&curve_node, "dV", path)?,
            })
        }
        "spiral" => {
            return Err(Error::Unsupported(
                "spiral geometry is not supported by this reader".into(),
            ))
        }
        other => {
            return Err(Error::Unsupported(format!(
                "unknown geometry type <{other}>"
            )))
        }
    };
    Ok(Geometry {
        s: attr_f64(node, "s", path)?,
        x: attr_f64(node, "x", path)?,
        y: attr_f64(node, "y", path)?,
        hdg: attr_f64(node, "hdg", path)?,
        length: attr_f64(node, "length", path)?,
        curve,
    })
}

/// Parse an OpenDRIVE file into the document model. The planView must be
/// contiguous in s; spirals and unknown geometry types are rejected.
pub fn read_opendrive(path: &Path) -> Result<OdrDocument> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let doc = Document::parse(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.pos().row as usize,
        msg: e.to_string(),
    })?;
    let root = doc.root_element();
    if root.tag_name().name() != "OpenDRIVE" {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg: format!("root element is <{}>", root.tag_name().name()),
        });
    }
    let georeference = root
        .children()
        .find(|n| n.has_tag_name("header"))
        .and_then(|h| h.children().find(|n| n.has_tag_name("geoReference")))
        .and_then(|n| n.text())
        .unwrap_or("")
        .trim()
        .to_string();

    let road = root
        .children()
        .find(|n| n.has_tag_name("road"))
        .ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg: "no <road> element".into(),
        })?;
    let road_id = road.attribute("id").unwrap_or("1").to_string();

    let plan_view_node = road
        .children()
        .find(|n| n.has_tag_name("planView"))
        .ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg: "road has no <planView>".into(),
        })?;
    let mut plan_view = Vec::new();
    for g in plan_view_node.children().filter(|n| n.has_tag_name("geometry")) {
        plan_view.push(parse_geometry(&g, path)?);
    }
    if plan_view.is_empty() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg: "planView has no geometries".into(),
        });
    }
    let mut expected = 0.0;
    for (i, g) in plan_view.iter().enumerate() {
        if g.s < 0.0 || (g.s - expected).abs() > 1e-6 || g.length <= 0.0 {
            return Err(Error::Structural(format!(
                "non-contiguous planView: geometry {i} at s={} (expected {expected})",
                g.s
            )));
        }
        expected = g.s + g.length;
    }

    let mut elevation = Vec::new();
    if let Some(ep) = road.children().find(|n| n.has_tag_name("elevationProfile")) {
        for e in ep.children().filter(|n| n.has_tag_name("elevation")) {
            elevation.push(parse_cubic(&e, path)?);
        }
    }
    let mut superelevation = Vec::new();
    if let Some(lp) = road.children().find(|n| n.has_tag_name("lateralProfile")) {
        for e in lp.children().filter(|n| n.has_tag_name("superelevation")) {
            superelevation.push(parse_cubic(&e, path)?);
        }
    }

    // Lane widths, leftmost first: left lanes by descending id, then right
    // lanes by descending id (i.e. -1 before -2).
    let mut left: Vec<(i64, f64)> = Vec::new();
    let mut right: Vec<(i64, f64)> = Vec::new();
    if let Some(lanes) = road.children().find(|n| n.has_tag_name("lanes")) {
        if let Some(section) = lanes.children().find(|n| n.has_tag_name("laneSection")) {
            for group in section.children().filter(|n| n.is_element()) {
                let bucket: &mut Vec<(i64, f64)> = match group.tag_name().name() {
                    "left" => &mut left,
                    "right" => &mut right,
                    _ => continue,
                };
                for lane in group.children().filter(|n| n.has_tag_name("lane")) {
                    if lane.attribute("type") != Some("driving") {
                        continue;
                    }
                    let id: i64 = lane
                        .attribute("id")
                        .and_then(|v| v.parse().ok())
                        .unwrap_or(0);
                    let width = lane
                        .children()
                        .find(|n| n.has_tag_name("width"))
                        .map(|w| attr_f64(&w, "a", path))
                        .transpose()?
                        .unwrap_or(0.0);
                    bucket.push((id, width));
                }
            }
        }
    }
    left.sort_by_key(|(id, _)| std::cmp::Reverse(*id));
    right.sort_by_key(|(id, _)| std::cmp::Reverse(*id));
    let lane_widths: Vec<f64> = left
        .into_iter()
        .chain(right)
        .map(|(_, w)| w)
        .collect();

    Ok(OdrDocument {
        georeference,
        road_id,
        plan_view,
        elevation,
        superelevation,
        lanes: LaneLayout {
            lane_widths: if lane_widths.is_empty() {
                vec![3.5]
            } else {
                lane_widths
            },
        },
    })
}
