//! Reference-line evaluation: position/heading at arclength, with a
//! monotone lookup table for paramPoly3 arclength-to-parameter inversion.

use nalgebra::{Vector2, Vector3};

use super::{Curve, Geometry, OdrDocument, ParamPoly3};

/// Nodes/weights of 5-point Gauss-Legendre on [-1, 1].
const GL5: [(f64, f64); 5] = [
    (-0.906179845938664, 0.236926885056189),
    (-0.538469310105683, 0.478628670499366),
    (0.0, 0.568888888888889),
    (0.538469310105683, 0.478628670499366),
    (0.906179845938664, 0.236926885056189),
];

fn gl5_arclength(poly: &ParamPoly3, a: f64, b: f64) -> f64 {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    half * GL5
        .iter()
        .map(|&(x, w)| w * poly.speed(mid + half * x))
        .sum::<f64>()
}

/// Curve length over p in [0,1] by composite Gauss-Legendre quadrature.
pub(crate) fn poly_arclength(poly: &ParamPoly3) -> f64 {
    let mut acc = 0.0;
    for k in 0..TABLE_N {
        acc += gl5_arclength(poly, k as f64 / TABLE_N as f64, (k + 1) as f64 / TABLE_N as f64);
    }
    acc
}

/// Evaluator for one geometry with a cached arclength table.
pub struct GeometrySampler {
    geom: Geometry,
    /// Cumulative arclength at p = k / N for paramPoly3 geometries.
    table: Vec<f64>,
}

const TABLE_N: usize = 1000;

impl GeometrySampler {
    pub fn new(geom: &Geometry) -> Self {
        let table = match &geom.curve {
            Curve::ParamPoly3(poly) => {
                let mut acc = 0.0;
                let mut table = Vec::with_capacity(TABLE_N + 1);
                table.push(0.0);
                for k in 0..TABLE_N {
                    let a = k as f64 / TABLE_N as f64;
                    let b = (k + 1) as f64 / TABLE_N as f64;
                    acc += gl5_arclength(poly, a, b);
                    table.push(acc);
                }
                table
            }
            _ => Vec::new(),
        };
        GeometrySampler { geom: *geom, table }
    }

    /// True curve length over p in [0,1] for paramPoly3 (by quadrature),
    /// or the stored length for analytic primitives.
    pub fn curve_length(&self) -> f64 {
        match self.geom.curve {
            Curve::ParamPoly3(_) => *self.table.last().unwrap(),
            _ => self.geom.length,
        }
    }

    /// Invert arclength to the curve parameter, accurate to well below
    /// 1e-6 m: monotone table lookup, linear interpolation, then Newton.
    fn param_at(&self, ds: f64, poly: &ParamPoly3) -> f64 {
        let total = *self.table.last().unwrap();
        let target = ds.clamp(0.0, total);
        let idx = match self
            .table
            .binary_search_by(|probe| probe.partial_cmp(&target).unwrap())
        {
            Ok(i) => i.min(TABLE_N - 1),
            Err(i) => i.saturating_sub(1).min(TABLE_N - 1),
        };
        let (s0, s1) = (self.table[idx], self.table[idx + 1]);
        let p0 = idx as f64 / TABLE_N as f64;
        let dp = 1.0 / TABLE_N as f64;
        let mut p = if s1 > s0 {
            p0 + dp * (target - s0) / (s1 - s0)
        } else {
            p0
        };
        for _ in 0..3 {
            let s_here = s0 + gl5_arclength(poly, p0, p);
            let speed = poly.speed(p);
            if speed < 1e-15 {
                break;
            }
            p -= (s_here - target) / speed;
            p = p.clamp(0.0, 1.0);
        }
        p
    }

    fn local_point(&self, ds: f64) -> (Vector2<f64>, f64) {
        match &self.geom.curve {
            Curve::Line => (Vector2::new(ds, 0.0), 0.0),
            Curve::Arc { curvature } => {
                let k = *curvature;
                if k.abs() < 1e-15 {
                    (Vector2::new(ds, 0.0), 0.0)
                } else {
                    let phi = k * ds;
                    (
                        Vector2::new(phi.sin() / k, (1.0 - phi.cos()) / k),
                        phi,
                    )
                }
            }
            Curve::ParamPoly3(poly) => {
                let p = self.param_at(ds, poly);
                let (u, v) = poly.eval(p);
                let (du, dv) = poly.derivative(p);
                (Vector2::new(u, v), dv.atan2(du))
            }
        }
    }

    /// Inertial position at local arclength `ds` in [0, length].
    pub fn point_at(&self, ds: f64) -> Vector2<f64> {
        let (local, _) = self.local_point(ds);
        let (sin, cos) = self.geom.hdg.sin_cos();
        Vector2::new(
            self.geom.x + cos * local.x - sin * local.y,
            self.geom.y + sin * local.x + cos * local.y,
        )
    }

    /// Inertial heading at local arclength `ds`.
    pub fn heading_at(&self, ds: f64) -> f64 {
        let (_, local_hdg) = self.local_point(ds);
        crate::geom::normalize_angle(self.geom.hdg + local_hdg)
    }

    pub fn start_point(&self) -> Vector2<f64> {
        self.point_at(0.0)
    }

    pub fn end_point(&self) -> Vector2<f64> {
        self.point_at(self.geom.length)
    }
}

/// Sample a document's reference line at s = 0, step, 2*step, ..., L.
/// The final point at s = L is always included. Z carries the elevation
/// profile.
pub fn sample_reference_line(doc: &OdrDocument, step: f64) -> Vec<Vector3<f64>> {
    assert!(step > 0.0, "sampling step must be positive");
    if doc.plan_view.is_empty() {
        return Vec::new();
    }
    let samplers: Vec<GeometrySampler> = doc.plan_view.iter().map(GeometrySampler::new).collect();
    let total = doc.total_length();
    let mut stations = Vec::new();
    let mut k = 0usize;
    loop {
        let s = k as f64 * step;
        if s >= total - 1e-9 {
            break;
        }
        stations.push(s);
        k += 1;
    }
    stations.push(total);

    let mut out = Vec::with_capacity(stations.len());
    let mut gi = 0usize;
    for s in stations {
        while gi + 1 < samplers.len() && doc.plan_view[gi].s + doc.plan_view[gi].length < s - 1e-9 {
            gi += 1;
        }
        let g = &doc.plan_view[gi];
        let ds = (s - g.s).clamp(0.0, g.length);
        let p = samplers[gi].point_at(ds);
        out.push(Vector3::new(p.x, p.y, doc.elevation_at(s)));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::odr::LaneLayout;
    use approx::assert_relative_eq;

    fn doc_with(plan_view: Vec<Geometry>) -> OdrDocument {
        OdrDocument {
            georeference: String::new(),
            road_id: "1".into(),
            plan_view,
            elevation: Vec::new(),
            superelevation: Vec::new(),
            lanes: LaneLayout {
                lane_widths: vec![3.5],
            },
        }
    }

    #[test]
    fn straight_line_sampling() {
        let doc = doc_with(vec![Geometry {
            s: 0.0,
            x: 0.0,
            y: 0.0,
            hdg: 0.0,
            length: 100.0,
            curve: Curve::Line,
        }]);
        let pts = sample_reference_line(&doc, 10.0);
        assert_eq!(pts.len(), 11);
        for (i, p) in pts.iter().enumerate() {
            assert_relative_eq!(p.x, 10.0 * i as f64, epsilon = 1e-12);
            assert_relative_eq!(p.y, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn arc_sampling_matches_circle_formulas() {
        let radius = 500.0;
        let geom = Geometry {
            s: 0.0,
            x: 10.0,
            y: -5.0,
            hdg: 0.3,
            length: 200.0,
            curve: Curve::Arc {
                curvature: 1.0 / radius,
            },
        };
        let sampler = GeometrySampler::new(&geom);
        for k in 0..=20 {
            let ds = 10.0 * k as f64;
            let got = sampler.point_at(ds);
            // Closed form: rotate around the circle center.
            let cx = geom.x - geom.hdg.sin() * radius;
            let cy = geom.y + geom.hdg.cos() * radius;
            let phi = geom.hdg - std::f64::consts::FRAC_PI_2 + ds / radius;
            let want = Vector2::new(cx + radius * phi.cos(), cy + radius * phi.sin());
            assert!((got - want).norm() < 1e-9, "ds={ds}");
            assert_relative_eq!(
                sampler.heading_at(ds),
                geom.hdg + ds / radius,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn param_poly3_matches_exact_cubic_on_a_line() {
        // u(p) = 100 p, v(p) = 0 describes a 100 m straight.
        let geom = Geometry {
            s: 0.0,
            x: 0.0,
            y: 0.0,
            hdg: 0.0,
            length: 100.0,
            curve: Curve::ParamPoly3(ParamPoly3 {
                au: 0.0,
                bu: 100.0,
                cu: 0.0,
                du: 0.0,
                av: 0.0,
                bv: 0.0,
                cv: 0.0,
                dv: 0.0,
            }),
        };
        let sampler = GeometrySampler::new(&geom);
        assert_relative_eq!(sampler.curve_length(), 100.0, epsilon = 1e-9);
        for k in 0..=10 {
            let ds = 10.0 * k as f64;
            let p = sampler.point_at(ds);
            assert_relative_eq!(p.x, ds, epsilon = 1e-9);
            assert_relative_eq!(p.y, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn sampled_endpoints_coincide_with_geometry_endpoints() {
        let geom = Geometry {
            s: 0.0,
            x: 1.0,
            y: 2.0,
            hdg: 0.1,
            length: 50.0,
            curve: Curve::Arc { curvature: 2e-3 },
        };
        let doc = doc_with(vec![geom]);
        let pts = sample_reference_line(&doc, 7.0);
        let sampler = GeometrySampler::new(&geom);
        let start = sampler.start_point();
        let end = sampler.end_point();
        assert!((pts[0].xy() - start).norm() < 1e-9);
        assert!((pts.last().unwrap().xy() - end).norm() < 1e-9);
    }
}
