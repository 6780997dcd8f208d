//! Radius-bounded neighbor queries over an immutable point set.
//!
//! A uniform grid with cell size equal to the build radius: every query at
//! radius `r <= build radius` scans the 3^n surrounding cells and checks
//! exact distances, so results match a brute-force scan set-for-set.

use std::collections::HashMap;

use nalgebra::DVector;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NeighborError {
    #[error("query radius {requested} exceeds build radius {built}")]
    RadiusExceedsBuild { requested: f64, built: f64 },
}

pub struct SpatialIndex {
    points: Vec<DVector<f64>>,
    cells: HashMap<Vec<i64>, Vec<usize>>,
    radius: f64,
    dim: usize,
}

/// Builds an index valid for queries at `radius` or smaller.
pub fn build_index(points: &[DVector<f64>], radius: f64) -> SpatialIndex {
    SpatialIndex::build(points, radius)
}

impl SpatialIndex {
    pub fn build(points: &[DVector<f64>], radius: f64) -> Self {
        assert!(radius > 0.0, "radius must be positive");
        let dim = points.first().map_or(0, |p| p.len());
        let mut cells: HashMap<Vec<i64>, Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(cell_of(p, radius)).or_default().push(i);
        }
        Self {
            points: points.to_vec(),
            cells,
            radius,
            dim,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn build_radius(&self) -> f64 {
        self.radius
    }

    pub fn points(&self) -> &[DVector<f64>] {
        &self.points
    }

    /// Indices `j` with `0 < |x_j - center| <= r`, ascending.
    pub fn query_point(&self, center: &DVector<f64>, r: f64) -> Result<Vec<usize>, NeighborError> {
        if r > self.radius {
            return Err(NeighborError::RadiusExceedsBuild {
                requested: r,
                built: self.radius,
            });
        }
        if self.points.is_empty() {
            return Ok(Vec::new());
        }
        let r2 = r * r;
        let base = cell_of(center, self.radius);
        let mut out = Vec::new();
        let mut offset = vec![-1i64; self.dim];
        loop {
            let cell: Vec<i64> = base.iter().zip(&offset).map(|(b, o)| b + o).collect();
            if let Some(bucket) = self.cells.get(&cell) {
                for &j in bucket {
                    let d2 = (&self.points[j] - center).norm_squared();
                    if d2 > 0.0 && d2 <= r2 {
                        out.push(j);
                    }
                }
            }
            // Next offset in {-1, 0, 1}^n.
            let mut k = 0;
            loop {
                if k == self.dim {
                    out.sort_unstable();
                    return Ok(out);
                }
                offset[k] += 1;
                if offset[k] <= 1 {
                    break;
                }
                offset[k] = -1;
                k += 1;
            }
        }
    }

    /// Neighbors of cloud point `i` (itself and coincident points excluded).
    pub fn query_index(&self, i: usize, r: f64) -> Result<Vec<usize>, NeighborError> {
        self.query_point(&self.points[i].clone(), r)
    }
}

fn cell_of(p: &DVector<f64>, cell_size: f64) -> Vec<i64> {
    p.iter().map(|&x| (x / cell_size).floor() as i64).collect()
}

/// Brute-force reference: all `j` with `0 < |x_j - center| <= r`.
pub fn brute_force_radius(
    points: &[DVector<f64>],
    center: &DVector<f64>,
    r: f64,
) -> Vec<usize> {
    let r2 = r * r;
    (0..points.len())
        .filter(|&j| {
            let d2 = (&points[j] - center).norm_squared();
            d2 > 0.0 && d2 <= r2
        })
        .collect()
}
