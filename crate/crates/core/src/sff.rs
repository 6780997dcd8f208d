//! Approximate second fundamental form tensors.
//!
//! `beta` is the same kernel-weighted pair sum as the mean curvature with
//! each neighbor's contribution multiplied by the `(j, k)` entry of that
//! neighbor's tangent projector; `c` is the eta-weighted average of the
//! neighbor projectors; `A` assembles both with the mean curvature:
//!
//! ```text
//! A_ijk = beta_ijk - c_jk ((I + c)^-1 H)_i
//! ```

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use thiserror::Error;

use crate::curvature::{CurvatureEvaluator, KernelArg, VALIDITY_FACTOR};
use crate::kernels::{KernelError, KernelPair};
use crate::operator::OperatorSpec;
use crate::varifold::PointCloudVarifold;

#[derive(Debug, Error)]
pub enum SffError {
    #[error("(I + c) is ill-conditioned (estimate {cond:.3e} exceeds {limit:.1e})")]
    IllConditioned { cond: f64, limit: f64 },
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

pub const CONDITION_LIMIT: f64 = 1e8;

/// Dense rank-3 tensor over `R^n`, indexed `(i, j, k)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor3 {
    n: usize,
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n * n],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[(i * self.n + j) * self.n + k]
    }

    pub fn set(&mut self, i: usize, j: usize, k: usize, value: f64) {
        self.data[(i * self.n + j) * self.n + k] = value;
    }

    pub fn add(&mut self, i: usize, j: usize, k: usize, value: f64) {
        self.data[(i * self.n + j) * self.n + k] += value;
    }

    /// Frobenius norm over all entries.
    pub fn norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Entries in `(i, j, k)` lexicographic order.
    pub fn entries(&self) -> &[f64] {
        &self.data
    }
}

/// Per-point second-fundamental-form data.
#[derive(Clone, Debug)]
pub struct SffPoint {
    pub beta: Tensor3,
    pub c: DMatrix<f64>,
    pub a: Tensor3,
    pub valid: bool,
}

/// The field over a whole cloud.
#[derive(Clone, Debug)]
pub struct SffField {
    pub points: Vec<SffPoint>,
}

pub struct SffEvaluator<'a> {
    curv: CurvatureEvaluator<'a>,
    pair: &'a KernelPair,
}

impl<'a> SffEvaluator<'a> {
    pub fn new(
        v: &'a PointCloudVarifold,
        pair: &'a KernelPair,
        epsilon: f64,
    ) -> Result<Self, KernelError> {
        Ok(Self {
            curv: CurvatureEvaluator::new(v, pair, epsilon)?,
            pair,
        })
    }

    pub fn curvature(&self) -> &CurvatureEvaluator<'a> {
        &self.curv
    }

    /// `beta_ijk` at point `i`: for each `(j, k)` the mean-curvature sum with
    /// every neighbor's contribution scaled by `(P_l)_jk`.
    pub fn beta(&self, spec: &OperatorSpec, i: usize) -> (Tensor3, bool) {
        let v = self.curv.varifold();
        let n = v.n;
        let w = self.curv.weights(i);
        let mut out = Tensor3::zeros(n);
        if !w.valid {
            return (out, false);
        }
        let eps = self.curv.epsilon();
        for &(l, wil) in &w.terms {
            let pi = spec.compile(&v.tangents[i], &v.tangents[l]);
            let contrib = pi * (&v.points[l] - &v.points[i]) * (wil / eps);
            let p_l = v.tangents[l].matrix();
            for c in 0..n {
                for j in 0..n {
                    for k in 0..n {
                        out.add(c, j, k, p_l[(j, k)] * contrib[c]);
                    }
                }
            }
        }
        (out, true)
    }

    /// `c_jk` at point `i`: eta-weighted average of the neighbor projectors,
    /// including the self term when `eta(0) > 0`.
    pub fn c_matrix(&self, i: usize) -> (DMatrix<f64>, bool) {
        let v = self.curv.varifold();
        let eps = self.curv.epsilon();
        let n = v.n;
        let neighbors = self
            .curv
            .index()
            .query_index(i, eps)
            .expect("query radius equals build radius");
        let mut numer = DMatrix::zeros(n, n);
        let mut denom = 0.0;
        let eta0 = self.pair.eta.value(0.0);
        if eta0 > 0.0 {
            numer += v.tangents[i].matrix() * (v.masses[i] * eta0);
            denom += v.masses[i] * eta0;
        }
        for &l in &neighbors {
            let r = (&v.points[l] - &v.points[i]).norm();
            let w = v.masses[l] * self.pair.eta.value(r / eps);
            numer += v.tangents[l].matrix() * w;
            denom += w;
        }
        if denom <= VALIDITY_FACTOR * v.len() as f64 {
            return (DMatrix::zeros(n, n), false);
        }
        (numer / denom, true)
    }

    /// Full per-point data: `beta`, `c`, the curvature `H` from `h_spec`
    /// (the plain `S` estimator by default), and the assembled `A`.
    pub fn at(
        &self,
        spec: &OperatorSpec,
        h_spec: &OperatorSpec,
        i: usize,
    ) -> Result<SffPoint, SffError> {
        let (beta, beta_valid) = self.beta(spec, i);
        let (c, c_valid) = self.c_matrix(i);
        let valid = beta_valid && c_valid;
        let a = if valid {
            let h = self.curv.evaluate(h_spec, i, KernelArg::Euclidean).h;
            assemble_a(&beta, &c, &h)?
        } else {
            Tensor3::zeros(beta.dim())
        };
        Ok(SffPoint { beta, c, a, valid })
    }

    pub fn field(&self, spec: &OperatorSpec, h_spec: &OperatorSpec) -> Result<SffField, SffError> {
        let v = self.curv.varifold();
        let points = (0..v.len())
            .into_par_iter()
            .map(|i| self.at(spec, h_spec, i))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(SffField { points })
    }
}

/// `A_ijk = beta_ijk - c_jk ((I + c)^-1 H)_i` via a linear solve.
pub fn assemble_a(
    beta: &Tensor3,
    c: &DMatrix<f64>,
    h: &DVector<f64>,
) -> Result<Tensor3, SffError> {
    let n = c.nrows();
    let m = DMatrix::identity(n, n) + c;
    let svd = m.clone().svd(false, false);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(cond <= CONDITION_LIMIT) {
        return Err(SffError::IllConditioned {
            cond,
            limit: CONDITION_LIMIT,
        });
    }
    let y = m.lu().solve(h).ok_or(SffError::IllConditioned {
        cond,
        limit: CONDITION_LIMIT,
    })?;
    let mut a = Tensor3::zeros(n);
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                a.set(i, j, k, beta.get(i, j, k) - c[(j, k)] * y[i]);
            }
        }
    }
    Ok(a)
}

/// Convenience wrappers mirroring the per-point operations.
pub fn beta(
    v: &PointCloudVarifold,
    pair: &KernelPair,
    epsilon: f64,
    spec: &OperatorSpec,
    i: usize,
) -> Result<(Tensor3, bool), KernelError> {
    Ok(SffEvaluator::new(v, pair, epsilon)?.beta(spec, i))
}

pub fn c_matrix(
    v: &PointCloudVarifold,
    pair: &KernelPair,
    epsilon: f64,
    i: usize,
) -> Result<(DMatrix<f64>, bool), KernelError> {
    Ok(SffEvaluator::new(v, pair, epsilon)?.c_matrix(i))
}
