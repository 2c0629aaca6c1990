//! Uniform-grid spatial indexes with exact query semantics.
//!
//! A hash grid with cell size equal to the query radius gives exact range
//! queries by scanning the 3x3x3 cell neighborhood; queries with other radii
//! scan the correspondingly larger cell block. Exactness versus brute force
//! is covered by tests, not assumed.

use std::collections::HashMap;

use nalgebra::{Vector2, Vector3};

/// Grid over 3D points. Indices returned by queries refer to the slice the
/// index was built from.
pub struct GridIndex3 {
    cell: f64,
    cells: HashMap<(i64, i64, i64), Vec<u32>>,
    points: Vec<Vector3<f64>>,
}

impl GridIndex3 {
    pub fn build(points: &[Vector3<f64>], cell: f64) -> Self {
        assert!(cell > 0.0, "grid cell size must be positive");
        let mut cells: HashMap<(i64, i64, i64), Vec<u32>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells
                .entry(Self::key(p, cell))
                .or_default()
                .push(i as u32);
        }
        GridIndex3 {
            cell,
            cells,
            points: points.to_vec(),
        }
    }

    fn key(p: &Vector3<f64>, cell: f64) -> (i64, i64, i64) {
        (
            (p.x / cell).floor() as i64,
            (p.y / cell).floor() as i64,
            (p.z / cell).floor() as i64,
        )
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Indices of all points with `|p - center| <= radius`, ascending.
    pub fn within(&self, center: &Vector3<f64>, radius: f64) -> Vec<usize> {
        let mut out = Vec::new();
        self.within_into(center, radius, &mut out);
        out
    }

    /// As [`Self::within`], reusing the output buffer.
    pub fn within_into(&self, center: &Vector3<f64>, radius: f64, out: &mut Vec<usize>) {
        out.clear();
        let r2 = radius * radius;
        let reach = (radius / self.cell).ceil() as i64;
        let (cx, cy, cz) = Self::key(center, self.cell);
        for kz in (cz - reach)..=(cz + reach) {
            for ky in (cy - reach)..=(cy + reach) {
                for kx in (cx - reach)..=(cx + reach) {
                    if let Some(ids) = self.cells.get(&(kx, ky, kz)) {
                        for &i in ids {
                            if (self.points[i as usize] - center).norm_squared() <= r2 {
                                out.push(i as usize);
                            }
                        }
                    }
                }
            }
        }
        out.sort_unstable();
    }

    /// Number of indexed points within `radius` of `center`, excluding the
    /// point at `exclude` if given.
    pub fn count_within(&self, center: &Vector3<f64>, radius: f64, exclude: Option<usize>) -> usize {
        let r2 = radius * radius;
        let reach = (radius / self.cell).ceil() as i64;
        let (cx, cy, cz) = Self::key(center, self.cell);
        let mut n = 0;
        for kz in (cz - reach)..=(cz + reach) {
            for ky in (cy - reach)..=(cy + reach) {
                for kx in (cx - reach)..=(cx + reach) {
                    if let Some(ids) = self.cells.get(&(kx, ky, kz)) {
                        for &i in ids {
                            if Some(i as usize) == exclude {
                                continue;
                            }
                            if (self.points[i as usize] - center).norm_squared() <= r2 {
                                n += 1;
                            }
                        }
                    }
                }
            }
        }
        n
    }
}

/// Grid over 2D points supporting exact nearest-neighbor queries.
pub struct GridIndex2 {
    cell: f64,
    cells: HashMap<(i64, i64), Vec<u32>>,
    points: Vec<Vector2<f64>>,
}

impl GridIndex2 {
    pub fn build(points: &[Vector2<f64>], cell: f64) -> Self {
        assert!(cell > 0.0, "grid cell size must be positive");
        let mut cells: HashMap<(i64, i64), Vec<u32>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells
                .entry(Self::key(p, cell))
                .or_default()
                .push(i as u32);
        }
        GridIndex2 {
            cell,
            cells,
            points: points.to_vec(),
        }
    }

    fn key(p: &Vector2<f64>, cell: f64) -> (i64, i64) {
        ((p.x / cell).floor() as i64, (p.y / cell).floor() as i64)
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Exact nearest neighbor: expands the ring search until the best found
    /// distance is guaranteed minimal. Returns (index, distance).
    pub fn nearest(&self, q: &Vector2<f64>) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let (cx, cy) = Self::key(q, self.cell);
        let mut best: Option<(usize, f64)> = None;
        let mut ring = 0i64;
        loop {
            // Scan the square ring at Chebyshev distance `ring`.
            for ky in (cy - ring)..=(cy + ring) {
                for kx in (cx - ring)..=(cx + ring) {
                    if (ky - cy).abs() != ring && (kx - cx).abs() != ring {
                        continue;
                    }
                    if let Some(ids) = self.cells.get(&(kx, ky)) {
                        for &i in ids {
                            let d = (self.points[i as usize] - q).norm();
                            if best.is_none_or(|(_, bd)| d < bd) {
                                best = Some((i as usize, d));
                            }
                        }
                    }
                }
            }
            if let Some((_, bd)) = best {
                // Any point closer than `bd` must lie in a cell whose ring
                // index is below this bound; once passed, we are done.
                let safe_ring = (bd / self.cell).ceil() as i64 + 1;
                if ring >= safe_ring {
                    return best;
                }
            }
            ring += 1;
            // Bail out once the search ring exceeds the data extent.
            if ring > 2_000_000 {
                return best;
            }
        }
    }
}
