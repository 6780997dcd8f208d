//! Approximate mean curvature of a point-cloud varifold.
//!
//! At point `i` the estimator is
//!
//! ```text
//! H_i = (1/eps) * sum_{j != i} w_ij * Pi_ij * (x_j - x_i)
//! w_ij = -pref * m_j * rho'(r_ij / eps) / (r_ij * D_i)
//! D_i  = sum_l m_l * xi(r_il / eps)
//! ```
//!
//! with `pref = d/n` for natural kernel pairs (and `C_xi / C_rho` from
//! quadrature otherwise) and `Pi_ij` the operator expression compiled at
//! `(T = P_i, S = P_j)`. Points whose denominator vanishes (no neighbors
//! inside the kernel support) are flagged invalid and carry `H = 0`.

use nalgebra::DVector;
use rayon::prelude::*;

use crate::kernels::{KernelError, KernelPair, NormalizationConstants};
use crate::neighbors::SpatialIndex;
use crate::operator::OperatorSpec;
use crate::varifold::PointCloudVarifold;

/// Denominators at or below `VALIDITY_FACTOR * N` mark a point invalid.
pub const VALIDITY_FACTOR: f64 = 1e-300;

/// Kernel argument for the pairwise weight.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KernelArg {
    /// `rho'` evaluated at the Euclidean distance `|x_j - x_i| / eps`.
    Euclidean,
    /// `rho'` evaluated at `|P_i (x_j - x_i)| / eps`, with the pairwise
    /// `1/r_ij` replaced by `1/|P_i (x_j - x_i)|`. Robust to noise
    /// orthogonal to the tangent plane.
    Tangential,
}

/// Result of one curvature evaluation.
#[derive(Clone, Debug)]
pub struct CurvatureResult {
    pub h: DVector<f64>,
    /// The raw xi-convolution `D_i`.
    pub denominator: f64,
    pub valid: bool,
}

/// Per-point curvature vectors over a whole cloud.
#[derive(Clone, Debug)]
pub struct CurvatureField {
    pub vectors: Vec<DVector<f64>>,
    pub denominators: Vec<f64>,
    pub valid: Vec<bool>,
}

impl CurvatureField {
    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn max_norm(&self) -> f64 {
        self.vectors
            .iter()
            .map(|v| v.norm())
            .fold(0.0, f64::max)
    }
}

/// Pairwise weights of one point: the denominator `D_i` and the list of
/// `(j, w_ij)` over neighbors inside the kernel support.
#[derive(Clone, Debug)]
pub struct NeighborWeights {
    pub denominator: f64,
    pub terms: Vec<(usize, f64)>,
    pub valid: bool,
}

/// Shared state for evaluating curvature at many points of one snapshot:
/// the neighbor index and the kernel prefactor are built once.
pub struct CurvatureEvaluator<'a> {
    v: &'a PointCloudVarifold,
    pair: &'a KernelPair,
    epsilon: f64,
    prefactor: f64,
    index: SpatialIndex,
}

impl<'a> CurvatureEvaluator<'a> {
    pub fn new(
        v: &'a PointCloudVarifold,
        pair: &'a KernelPair,
        epsilon: f64,
    ) -> Result<Self, KernelError> {
        assert!(epsilon > 0.0, "epsilon must be positive");
        let prefactor = curvature_prefactor(v.d, v.n, pair)?;
        let index = SpatialIndex::build(&v.points, epsilon);
        Ok(Self {
            v,
            pair,
            epsilon,
            prefactor,
            index,
        })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn index(&self) -> &SpatialIndex {
        &self.index
    }

    pub fn varifold(&self) -> &PointCloudVarifold {
        self.v
    }

    /// Denominator `D_i` and weights `w_ij` at point `i`.
    pub fn weights(&self, i: usize) -> NeighborWeights {
        let neighbors = self
            .index
            .query_index(i, self.epsilon)
            .expect("query radius equals build radius");
        let eps = self.epsilon;
        // Self term: argument 0; vanishes for natural pairs since xi(0) = 0.
        let mut denominator = self.v.masses[i] * self.pair.xi.value(0.0);
        let mut dists = Vec::with_capacity(neighbors.len());
        for &j in &neighbors {
            let r = (&self.v.points[j] - &self.v.points[i]).norm();
            denominator += self.v.masses[j] * self.pair.xi.value(r / eps);
            dists.push(r);
        }
        let valid =
            !neighbors.is_empty() && denominator > VALIDITY_FACTOR * self.v.len() as f64;
        if !valid {
            return NeighborWeights {
                denominator,
                terms: Vec::new(),
                valid: false,
            };
        }
        let terms = neighbors
            .iter()
            .zip(&dists)
            .map(|(&j, &r)| {
                let w = -self.prefactor * self.v.masses[j] * self.pair.rho.deriv(r / eps)
                    / (r * denominator);
                (j, w)
            })
            .collect();
        NeighborWeights {
            denominator,
            terms,
            valid: true,
        }
    }

    /// `(1/eps) sum_j w_ij r_ij^2`, or `None` for invalid points. Equals the
    /// varifold dimension `d` exactly for natural pairs.
    pub fn weighted_radius_sum(&self, i: usize) -> Option<f64> {
        let w = self.weights(i);
        if !w.valid {
            return None;
        }
        let sum = w
            .terms
            .iter()
            .map(|&(j, wij)| {
                let r2 = (&self.v.points[j] - &self.v.points[i]).norm_squared();
                wij * r2
            })
            .sum::<f64>();
        Some(sum / self.epsilon)
    }

    pub fn at(&self, spec: &OperatorSpec, i: usize) -> CurvatureResult {
        self.evaluate(spec, i, KernelArg::Euclidean)
    }

    pub fn at_tangential(&self, spec: &OperatorSpec, i: usize) -> CurvatureResult {
        self.evaluate(spec, i, KernelArg::Tangential)
    }

    pub fn evaluate(&self, spec: &OperatorSpec, i: usize, arg: KernelArg) -> CurvatureResult {
        match arg {
            KernelArg::Euclidean => {
                let w = self.weights(i);
                let mut h = DVector::zeros(self.v.n);
                if w.valid {
                    for &(j, wij) in &w.terms {
                        let pi = spec.compile(&self.v.tangents[i], &self.v.tangents[j]);
                        let diff = &self.v.points[j] - &self.v.points[i];
                        h += pi * diff * wij;
                    }
                    h /= self.epsilon;
                }
                CurvatureResult {
                    h,
                    denominator: w.denominator,
                    valid: w.valid,
                }
            }
            KernelArg::Tangential => self.evaluate_tangential(spec, i),
        }
    }

    fn evaluate_tangential(&self, spec: &OperatorSpec, i: usize) -> CurvatureResult {
        let eps = self.epsilon;
        let neighbors = self
            .index
            .query_index(i, eps)
            .expect("query radius equals build radius");
        // Denominator unchanged from the Euclidean variant.
        let mut denominator = self.v.masses[i] * self.pair.xi.value(0.0);
        for &j in &neighbors {
            let r = (&self.v.points[j] - &self.v.points[i]).norm();
            denominator += self.v.masses[j] * self.pair.xi.value(r / eps);
        }
        let valid =
            !neighbors.is_empty() && denominator > VALIDITY_FACTOR * self.v.len() as f64;
        let mut h = DVector::zeros(self.v.n);
        if valid {
            for &j in &neighbors {
                let diff = &self.v.points[j] - &self.v.points[i];
                let t_norm = self.v.tangents[i].apply(&diff).norm();
                if t_norm < 1e-14 * eps {
                    continue;
                }
                let w = -self.prefactor * self.v.masses[j] * self.pair.rho.deriv(t_norm / eps)
                    / (t_norm * denominator);
                let pi = spec.compile(&self.v.tangents[i], &self.v.tangents[j]);
                h += pi * diff * w;
            }
            h /= eps;
        }
        CurvatureResult {
            h,
            denominator,
            valid,
        }
    }

    /// Evaluates every point; parallel over points, deterministic because
    /// each per-point sum runs over neighbors in ascending index order.
    pub fn field(&self, spec: &OperatorSpec, arg: KernelArg) -> CurvatureField {
        let results: Vec<CurvatureResult> = (0..self.v.len())
            .into_par_iter()
            .map(|i| self.evaluate(spec, i, arg))
            .collect();
        let mut vectors = Vec::with_capacity(results.len());
        let mut denominators = Vec::with_capacity(results.len());
        let mut valid = Vec::with_capacity(results.len());
        for r in results {
            vectors.push(r.h);
            denominators.push(r.denominator);
            valid.push(r.valid);
        }
        CurvatureField {
            vectors,
            denominators,
            valid,
        }
    }
}

/// `d/n` for natural pairs, `C_xi / C_rho` from quadrature otherwise.
pub fn curvature_prefactor(d: usize, n: usize, pair: &KernelPair) -> Result<f64, KernelError> {
    if pair.is_natural {
        Ok(d as f64 / n as f64)
    } else {
        let c = NormalizationConstants::compute(pair, d)?;
        Ok(c.c_xi / c.c_rho)
    }
}

/// Approximate mean curvature at one point.
pub fn mean_curvature(
    v: &PointCloudVarifold,
    pair: &KernelPair,
    epsilon: f64,
    spec: &OperatorSpec,
    i: usize,
) -> Result<CurvatureResult, KernelError> {
    Ok(CurvatureEvaluator::new(v, pair, epsilon)?.at(spec, i))
}

/// Noise-robust variant: the kernel argument is the tangential distance
/// `|P_i (x_j - x_i)|`.
pub fn mean_curvature_tangential(
    v: &PointCloudVarifold,
    pair: &KernelPair,
    epsilon: f64,
    spec: &OperatorSpec,
    i: usize,
) -> Result<CurvatureResult, KernelError> {
    Ok(CurvatureEvaluator::new(v, pair, epsilon)?.at_tangential(spec, i))
}

/// The whole field at once.
pub fn mean_curvature_field(
    v: &PointCloudVarifold,
    pair: &KernelPair,
    epsilon: f64,
    spec: &OperatorSpec,
    arg: KernelArg,
) -> Result<CurvatureField, KernelError> {
    Ok(CurvatureEvaluator::new(v, pair, epsilon)?.field(spec, arg))
}
