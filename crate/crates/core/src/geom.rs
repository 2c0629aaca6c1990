//! Small geometric helpers shared across stages.
//!
//! Everything here operates on plain nalgebra vectors; the road-specific
//! semantics (frames, reflectivity, ...) live in [`crate::cloud`].

use nalgebra::{Matrix3, Vector2, Vector3};

/// Wrap an angle into (-pi, pi].
pub fn normalize_angle(a: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let mut r = a.rem_euclid(two_pi);
    if r > std::f64::consts::PI {
        r -= two_pi;
    }
    r
}

/// Smallest absolute difference between two angles, in radians.
pub fn angle_diff(a: f64, b: f64) -> f64 {
    normalize_angle(a - b).abs()
}

/// Principal direction of a 3D point set (unit eigenvector of the largest
/// covariance eigenvalue). Sign is arbitrary. Returns `None` for fewer than
/// two points or a degenerate (all coincident) set.
pub fn principal_direction(points: &[Vector3<f64>]) -> Option<Vector3<f64>> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let centroid = points.iter().sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - centroid;
        cov += d * d.transpose();
    }
    cov /= n;
    let eig = cov.symmetric_eigen();
    let mut best = 0;
    for i in 1..3 {
        if eig.eigenvalues[i] > eig.eigenvalues[best] {
            best = i;
        }
    }
    if eig.eigenvalues[best] <= 0.0 {
        return None;
    }
    let dir = eig.eigenvectors.column(best).into_owned();
    let norm = dir.norm();
    if norm == 0.0 {
        None
    } else {
        Some(dir / norm)
    }
}

/// Distance from `p` to the segment `[a, b]` in 3D.
pub fn point_segment_distance(p: &Vector3<f64>, a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 == 0.0 {
        return (p - a).norm();
    }
    let t = ((p - a).dot(&ab) / len2).clamp(0.0, 1.0);
    (p - (a + ab * t)).norm()
}

/// Distance from `p` to the segment `[a, b]` in 2D.
pub fn point_segment_distance_2d(p: &Vector2<f64>, a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 == 0.0 {
        return (p - a).norm();
    }
    let t = ((p - a).dot(&ab) / len2).clamp(0.0, 1.0);
    (p - (a + ab * t)).norm()
}

/// Intersect the ray `origin + t * dir` (t >= 0, `dir` unit) with segment
/// `[a, b]` in 2D. Returns the ray parameter `t` of the hit, if any.
pub fn ray_segment_intersection_2d(
    origin: &Vector2<f64>,
    dir: &Vector2<f64>,
    a: &Vector2<f64>,
    b: &Vector2<f64>,
) -> Option<f64> {
    let seg = b - a;
    let denom = dir.x * (-seg.y) - dir.y * (-seg.x);
    if denom.abs() < 1e-12 {
        return None; // parallel
    }
    let diff = a - origin;
    let t = (diff.x * (-seg.y) - diff.y * (-seg.x)) / denom;
    let u = (dir.x * diff.y - dir.y * diff.x) / denom;
    if t >= 0.0 && (0.0..=1.0).contains(&u) {
        Some(t)
    } else {
        None
    }
}

/// Visiting order of the greedy nearest-neighbor chain that starts at the
/// point closest to the origin.
pub fn greedy_chain_order(points: &[Vector3<f64>]) -> Vec<usize> {
    let n = points.len();
    if n == 0 {
        return Vec::new();
    }
    let mut remaining: Vec<usize> = (0..n).collect();
    let mut order = Vec::with_capacity(n);
    let first = remaining
        .iter()
        .enumerate()
        .min_by(|(_, &a), (_, &b)| points[a].norm().partial_cmp(&points[b].norm()).unwrap())
        .map(|(pos, _)| pos)
        .unwrap();
    order.push(remaining.swap_remove(first));
    while !remaining.is_empty() {
        let last = points[*order.last().unwrap()];
        let next = remaining
            .iter()
            .enumerate()
            .min_by(|(_, &a), (_, &b)| {
                (points[a] - last)
                    .norm()
                    .partial_cmp(&(points[b] - last).norm())
                    .unwrap()
            })
            .map(|(pos, _)| pos)
            .unwrap();
        order.push(remaining.swap_remove(next));
    }
    order
}
