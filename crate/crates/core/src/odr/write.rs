//! OpenDRIVE 1.6 XML serialization.
//!
//! Formatting is pinned down for byte-stable output: UTF-8, 2-space
//! indent, fixed attribute order, and 17-significant-digit scientific
//! float formatting everywhere.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{Curve, OdrDocument};
use crate::error::{Error, Result};

/// 17 significant digits, platform-independent. Negative zero is
/// normalized so algebraically identical documents serialize identically.
fn num(v: f64) -> String {
    let v = if v == 0.0 { 0.0 } else { v };
    format!("{:.16e}", v)
}

/// Serialize a validated document to its canonical XML string.
pub fn opendrive_to_string(doc: &OdrDocument) -> Result<String> {
    doc.validate()?;
    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(s, "<OpenDRIVE>");
    let _ = writeln!(
        s,
        r#"  <header revMajor="1" revMinor="6" name="lanemap" version="1.00">"#
    );
    if !doc.georeference.is_empty() {
        let _ = writeln!(s, "    <geoReference><![CDATA[{}]]></geoReference>", doc.georeference);
    }
    let _ = writeln!(s, "  </header>");
    let _ = writeln!(
        s,
        r#"  <road name="" length="{}" id="{}" junction="-1">"#,
        num(doc.total_length()),
        doc.road_id
    );
    let _ = writeln!(s, "    <planView>");
    for g in &doc.plan_view {
        let _ = writeln!(
            s,
            r#"      <geometry s="{}" x="{}" y="{}" hdg="{}" length="{}">"#,
            num(g.s),
            num(g.x),
            num(g.y),
            num(g.hdg),
            num(g.length)
        );
        match &g.curve {
            Curve::Line => {
                let _ = writeln!(s, "        <line/>");
            }
            Curve::Arc { curvature } => {
                let _ = writeln!(s, r#"        <arc curvature="{}"/>"#, num(*curvature));
            }
            Curve::ParamPoly3(p) => {
                let _ = writeln!(
                    s,
                    r#"        <paramPoly3 aU="{}" bU="{}" cU="{}" dU="{}" aV="{}" bV="{}" cV="{}" dV="{}" pRange="normalized"/>"#,
                    num(p.au),
                    num(p.bu),
                    num(p.cu),
                    num(p.du),
                    num(p.av),
                    num(p.bv),
                    num(p.cv),
                    num(p.dv)
                );
            }
        }
        let _ = writeln!(s, "      </geometry>");
    }
    let _ = writeln!(s, "    </planView>");

    let _ = writeln!(s, "    <elevationProfile>");
    for r in &doc.elevation {
        let _ = writeln!(
            s,
            r#"      <elevation s="{}" a="{}" b="{}" c="{}" d="{}"/>"#,
            num(r.s),
            num(r.a),
            num(r.b),
            num(r.c),
            num(r.d)
        );
    }
    let _ = writeln!(s, "    </elevationProfile>");

    if !doc.superelevation.is_empty() {
        let _ = writeln!(s, "    <lateralProfile>");
        for r in &doc.superelevation {
            let _ = writeln!(
                s,
                r#"      <superelevation s="{}" a="{}" b="{}" c="{}" d="{}"/>"#,
                num(r.s),
                num(r.a),
                num(r.b),
                num(r.c),
                num(r.d)
            );
        }
        let _ = writeln!(s, "    </lateralProfile>");
    }

    let _ = writeln!(s, "    <lanes>");
    let offset = doc.lanes.lane_offset();
    if offset != 0.0 {
        let _ = writeln!(
            s,
            r#"      <laneOffset s="{}" a="{}" b="{}" c="{}" d="{}"/>"#,
            num(0.0),
            num(offset),
            num(0.0),
            num(0.0),
            num(0.0)
        );
    }
    let _ = writeln!(s, r#"      <laneSection s="{}">"#, num(0.0));
    let left = doc.lanes.left_count();
    let widths = &doc.lanes.lane_widths;
    if left > 0 {
        let _ = writeln!(s, "        <left>");
        // Outermost left lane first (highest id), walking inward.
        for (j, width) in widths.iter().enumerate().take(left) {
            let id = left - j;
            let _ = writeln!(
                s,
                r#"          <lane id="{}" type="driving" level="false">"#,
                id
            );
            let _ = writeln!(
                s,
                r#"            <width sOffset="{}" a="{}" b="{}" c="{}" d="{}"/>"#,
                num(0.0),
                num(*width),
                num(0.0),
                num(0.0),
                num(0.0)
            );
            let _ = writeln!(s, "          </lane>");
        }
        let _ = writeln!(s, "        </left>");
    }
    let _ = writeln!(s, "        <center>");
    let _ = writeln!(s, r#"          <lane id="0" type="none" level="false"/>"#);
    let _ = writeln!(s, "        </center>");
    if widths.len() > left {
        let _ = writeln!(s, "        <right>");
        for (k, j) in (left..widths.len()).enumerate() {
            let id = -(k as i64 + 1);
            let _ = writeln!(
                s,
                r#"          <lane id="{}" type="driving" level="false">"#,
                id
            );
            let _ = writeln!(
                s,
                r#"            <width sOffset="{}" a="{}" b="{}" c="{}" d="{}"/>"#,
                num(0.0),
                num(widths[j]),
                num(0.0),
                num(0.0),
                num(0.0)
            );
            let _ = writeln!(s, "          </lane>");
        }
        let _ = writeln!(s, "        </right>");
    }
    let _ = writeln!(s, "      </laneSection>");
    let _ = writeln!(s, "    </lanes>");
    let _ = writeln!(s, "  </road>");
    let _ = writeln!(s, "</OpenDRIVE>");
    Ok(s)
}

/// Validate and write the document to `path`.
pub fn write_opendrive(doc: &OdrDocument, path: &Path) -> Result<()> {
    let xml = opendrive_to_string(doc)?;
    fs::write(path, xml).map_err(|e| Error::io(path, e))
}
