//! Point-cloud varifolds: positions, masses and tangent projectors.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::neighbors::SpatialIndex;

#[derive(Debug, Error)]
pub enum VarifoldError {
    #[error("invalid projector{}: {detail}", index.map(|i| format!(" at point {i}")).unwrap_or_default())]
    InvalidProjector { index: Option<usize>, detail: String },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("masses must be positive and finite (first offender at index {0})")]
    NonPositiveMass(usize),
    #[error("varifold dimension must satisfy 1 <= d < n, got d={d}, n={n}")]
    BadDimensions { d: usize, n: usize },
    #[error("cloud must contain at least one point")]
    Empty,
    #[error("points {0:?} have fewer than d neighbors within the radius")]
    InsufficientNeighbors(Vec<usize>),
    #[error("non-finite coordinate at point {0}")]
    NonFiniteCoordinate(usize),
}

/// Orthogonal projector onto a d-plane in `R^n`.
///
/// Symmetric, idempotent, with trace equal to its rank.
#[derive(Clone, Debug, PartialEq)]
pub struct Projector {
    matrix: DMatrix<f64>,
    rank: usize,
}

/// Default tolerances from the projector invariants: entrywise symmetry,
/// Frobenius idempotence, trace defect.
pub const PROJECTOR_SYM_TOL: f64 = 1e-12;
pub const PROJECTOR_IDEM_TOL: f64 = 1e-10;
pub const PROJECTOR_TRACE_TOL: f64 = 1e-10;

impl Projector {
    /// Validates and wraps a matrix; all three invariant checks use `tol`.
    pub fn try_new(matrix: DMatrix<f64>, rank: usize, tol: f64) -> Result<Self, VarifoldError> {
        let p = Self { matrix, rank };
        p.check(tol, tol, tol, None)?;
        Ok(p)
    }

    /// `P = sum v v^T` over an orthonormal set of basis vectors.
    pub fn from_orthonormal_basis(basis: &[DVector<f64>], n: usize) -> Self {
        let mut m = DMatrix::zeros(n, n);
        for v in basis {
            debug_assert_eq!(v.len(), n);
            m += v * v.transpose();
        }
        Self {
            matrix: m,
            rank: basis.len(),
        }
    }

    /// Checks the invariants at the spec-default tolerances.
    pub fn verify_strict(&self) -> Result<(), VarifoldError> {
        self.check(
            PROJECTOR_SYM_TOL,
            PROJECTOR_IDEM_TOL,
            PROJECTOR_TRACE_TOL,
            None,
        )
    }

    fn check(
        &self,
        sym_tol: f64,
        idem_tol: f64,
        trace_tol: f64,
        index: Option<usize>,
    ) -> Result<(), VarifoldError> {
        let m = &self.matrix;
        let n = m.nrows();
        if m.ncols() != n {
            return Err(VarifoldError::InvalidProjector {
                index,
                detail: format!("matrix is {}x{}, not square", n, m.ncols()),
            });
        }
        let mut sym: f64 = 0.0;
        for i in 0..n {
            for j in 0..i {
                sym = sym.max((m[(i, j)] - m[(j, i)]).abs());
            }
        }
        if sym > sym_tol {
            return Err(VarifoldError::InvalidProjector {
                index,
                detail: format!("symmetry defect {sym:.3e} exceeds {sym_tol:.1e}"),
            });
        }
        let idem = (m * m - m).norm();
        if idem > idem_tol {
            return Err(VarifoldError::InvalidProjector {
                index,
                detail: format!("idempotence defect {idem:.3e} exceeds {idem_tol:.1e}"),
            });
        }
        let trace_defect = (m.trace() - self.rank as f64).abs();
        if trace_defect > trace_tol {
            return Err(VarifoldError::InvalidProjector {
                index,
                detail: format!(
                    "trace {} differs from rank {} by {trace_defect:.3e}",
                    m.trace(),
                    self.rank
                ),
            });
        }
        Ok(())
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// `Id - P`, the projector onto the orthogonal complement.
    pub fn complement(&self) -> Projector {
        let n = self.dim();
        Projector {
            matrix: DMatrix::identity(n, n) - &self.matrix,
            rank: n - self.rank,
        }
    }

    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.matrix * v
    }
}

/// A point-cloud varifold `V = sum_i m_i delta_(x_i, P_i)`.
#[derive(Clone, Debug)]
pub struct PointCloudVarifold {
    /// Ambient dimension.
    pub n: usize,
    /// Varifold dimension, `1 <= d < n`.
    pub d: usize,
    pub points: Vec<DVector<f64>>,
    pub masses: Vec<f64>,
    pub tangents: Vec<Projector>,
}

impl PointCloudVarifold {
    pub fn new(
        n: usize,
        d: usize,
        points: Vec<DVector<f64>>,
        masses: Vec<f64>,
        tangents: Vec<Projector>,
    ) -> Result<Self, VarifoldError> {
        if d < 1 || d >= n {
            return Err(VarifoldError::BadDimensions { d, n });
        }
        if points.is_empty() {
            return Err(VarifoldError::Empty);
        }
        if points.len() != masses.len() || points.len() != tangents.len() {
            return Err(VarifoldError::DimensionMismatch(format!(
                "{} points, {} masses, {} tangents",
                points.len(),
                masses.len(),
                tangents.len()
            )));
        }
        for (i, p) in points.iter().enumerate() {
            if p.len() != n {
                return Err(VarifoldError::DimensionMismatch(format!(
                    "point {i} has {} coordinates, expected {n}",
                    p.len()
                )));
            }
            if p.iter().any(|x| !x.is_finite()) {
                return Err(VarifoldError::NonFiniteCoordinate(i));
            }
        }
        if let Some(i) = masses.iter().position(|&m| !(m > 0.0) || !m.is_finite()) {
            return Err(VarifoldError::NonPositiveMass(i));
        }
        for (i, t) in tangents.iter().enumerate() {
            if t.dim() != n || t.rank() != d {
                return Err(VarifoldError::InvalidProjector {
                    index: Some(i),
                    detail: format!(
                        "projector is {}x{} of rank {}, expected {n}x{n} of rank {d}",
                        t.dim(),
                        t.dim(),
                        t.rank()
                    ),
                });
            }
        }
        Ok(Self {
            n,
            d,
            points,
            masses,
            tangents,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn translated(&self, shift: &DVector<f64>) -> Self {
        let mut out = self.clone();
        for p in &mut out.points {
            *p += shift;
        }
        out
    }
}

/// Equal masses summing to `total`.
pub fn uniform_masses(count: usize, total: f64) -> Result<Vec<f64>, VarifoldError> {
    if count == 0 {
        return Err(VarifoldError::Empty);
    }
    if !(total > 0.0) {
        return Err(VarifoldError::NonPositiveMass(0));
    }
    Ok(vec![total / count as f64; count])
}

/// Tangent estimation by weighted PCA over the neighbors within `radius`.
///
/// Per point, the projector onto the span of the top-`d` eigenvectors of
/// `sum_j m_j (x_j - x_i)(x_j - x_i)^T`. Eigenpairs are ordered by descending
/// eigenvalue (ties broken lexicographically on the sign-fixed eigenvector);
/// each eigenvector's first nonzero component is made positive.
pub fn estimate_tangents_pca(
    points: &[DVector<f64>],
    masses: &[f64],
    radius: f64,
    d: usize,
) -> Result<Vec<Projector>, VarifoldError> {
    assert!(radius > 0.0, "radius must be positive");
    let index = SpatialIndex::build(points, radius);
    let mut out = Vec::with_capacity(points.len());
    let mut starved = Vec::new();
    for i in 0..points.len() {
        let neighbors = index.query_index(i, radius).expect("radius equals build radius");
        if neighbors.len() < d {
            starved.push(i);
            continue;
        }
        out.push(pca_projector(points, masses, i, &neighbors, d));
    }
    if !starved.is_empty() {
        return Err(VarifoldError::InsufficientNeighbors(starved));
    }
    Ok(out)
}

pub(crate) fn pca_projector(
    points: &[DVector<f64>],
    masses: &[f64],
    i: usize,
    neighbors: &[usize],
    d: usize,
) -> Projector {
    let n = points[i].len();
    let mut cov = DMatrix::zeros(n, n);
    for &j in neighbors {
        let offset = &points[j] - &points[i];
        cov += (&offset * offset.transpose()) * masses[j];
    }
    let eigen = cov.symmetric_eigen();
    let mut pairs: Vec<(f64, DVector<f64>)> = (0..n)
        .map(|k| {
            let mut v: DVector<f64> = eigen.eigenvectors.column(k).into();
            fix_sign(&mut v);
            (eigen.eigenvalues[k], v)
        })
        .collect();
    pairs.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap()
            .then_with(|| lex_cmp(&a.1, &b.1))
    });
    let basis: Vec<DVector<f64>> = pairs.into_iter().take(d).map(|p| p.1).collect();
    Projector::from_orthonormal_basis(&basis, n)
}

fn fix_sign(v: &mut DVector<f64>) {
    if let Some(first) = v.iter().find(|x| x.abs() > 1e-12) {
        if *first < 0.0 {
            *v = -v.clone();
        }
    }
}

fn lex_cmp(a: &DVector<f64>, b: &DVector<f64>) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b.iter()) {
        match x.partial_cmp(y).unwrap() {
            std::cmp::Ordering::Equal => continue,
            other => return other,
        }
    }
    std::cmp::Ordering::Equal
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use std::f64::consts::TAU;

    fn vec2(x: f64, y: f64) -> DVector<f64> {
        DVector::from_vec(vec![x, y])
    }

    fn random_rotation(rng: &mut SplitMix64, n: usize) -> DMatrix<f64> {
        // QR of a random Gaussian matrix, sign-fixed to det +1.
        let g = DMatrix::from_fn(n, n, |_, _| rng.normal());
        let qr = g.qr();
        let mut q = qr.q();
        if q.determinant() < 0.0 {
            let col: DVector<f64> = -q.column(0);
            q.set_column(0, &col);
        }
        q
    }

    #[test]
    fn projector_invariants_enforced() {
        let good = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        assert!(Projector::try_new(good, 1, 1e-12).is_ok());

        let asymmetric = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 0.0]);
        assert!(Projector::try_new(asymmetric, 1, 1e-6).is_err());

        let not_idempotent = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.5]);
        assert!(Projector::try_new(not_idempotent.clone(), 1, 1e-6).is_err());

        // trace != rank
        let wrong_rank = DMatrix::identity(2, 2);
        assert!(Projector::try_new(wrong_rank, 1, 1e-6).is_err());
    }

    #[test]
    fn complement_is_valid() {
        let p = Projector::from_orthonormal_basis(&[vec2(1.0, 0.0)], 2);
        let c = p.complement();
        assert_eq!(c.rank(), 1);
        c.verify_strict().unwrap();
        assert!((c.matrix() - DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0])).norm() < 1e-15);
    }

    #[test]
    fn uniform_masses_cases() {
        assert_eq!(uniform_masses(4, 1.0).unwrap(), vec![0.25; 4]);
        assert_eq!(uniform_masses(1, 2.0).unwrap(), vec![2.0]);
        assert!(uniform_masses(0, 1.0).is_err());
        assert!(uniform_masses(3, 0.0).is_err());
    }

    #[test]
    fn varifold_constructor_validates() {
        let p = Projector::from_orthonormal_basis(&[vec2(1.0, 0.0)], 2);
        assert!(PointCloudVarifold::new(
            2,
            1,
            vec![vec2(0.0, 0.0)],
            vec![1.0],
            vec![p.clone()]
        )
        .is_ok());
        // d must be below n.
        assert!(PointCloudVarifold::new(2, 2, vec![vec2(0.0, 0.0)], vec![1.0], vec![p.clone()])
            .is_err());
        // Negative mass.
        assert!(
            PointCloudVarifold::new(2, 1, vec![vec2(0.0, 0.0)], vec![-1.0], vec![p]).is_err()
        );
    }

    #[test]
    fn pca_on_collinear_points() {
        let points: Vec<DVector<f64>> = (0..10).map(|k| vec2(k as f64 * 0.1, 0.0)).collect();
        let masses = vec![0.1; 10];
        let tangents = estimate_tangents_pca(&points, &masses, 0.25, 1).unwrap();
        let expected = Projector::from_orthonormal_basis(&[vec2(1.0, 0.0)], 2);
        for t in &tangents {
            assert!((t.matrix() - expected.matrix()).norm() < 1e-12);
        }
    }

    #[test]
    fn pca_on_circle_recovers_tangent() {
        let count = 100;
        let points: Vec<DVector<f64>> = (0..count)
            .map(|k| {
                let theta = TAU * k as f64 / count as f64;
                vec2(theta.cos(), theta.sin())
            })
            .collect();
        let masses = vec![1.0 / count as f64; count];
        let tangents = estimate_tangents_pca(&points, &masses, 0.3, 1).unwrap();
        // At (1, 0) the tangent is span{(0, 1)}.
        let expected = Projector::from_orthonormal_basis(&[vec2(0.0, 1.0)], 2);
        assert!((tangents[0].matrix() - expected.matrix()).norm() <= 1e-8);
        for t in &tangents {
            t.verify_strict().unwrap();
        }
    }

    #[test]
    fn pca_on_plane_in_r3() {
        let mut points = Vec::new();
        for i in -3..=3 {
            for j in -3..=3 {
                points.push(DVector::from_vec(vec![i as f64 * 0.1, j as f64 * 0.1, 0.0]));
            }
        }
        let masses = vec![1.0; points.len()];
        let tangents = estimate_tangents_pca(&points, &masses, 0.35, 2).unwrap();
        let expected = Projector::from_orthonormal_basis(
            &[
                DVector::from_vec(vec![1.0, 0.0, 0.0]),
                DVector::from_vec(vec![0.0, 1.0, 0.0]),
            ],
            3,
        );
        for t in &tangents {
            assert!((t.matrix() - expected.matrix()).norm() < 1e-10);
        }
    }

    #[test]
    fn pca_reports_starved_points() {
        let points = vec![vec2(0.0, 0.0), vec2(5.0, 5.0), vec2(5.1, 5.0)];
        let masses = vec![1.0; 3];
        match estimate_tangents_pca(&points, &masses, 0.5, 1) {
            Err(VarifoldError::InsufficientNeighbors(idx)) => assert_eq!(idx, vec![0]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn pca_is_rotation_equivariant() {
        let mut rng = SplitMix64::new(31);
        let count = 60;
        let points: Vec<DVector<f64>> = (0..count)
            .map(|k| {
                let theta = TAU * k as f64 / count as f64;
                vec2(theta.cos(), theta.sin())
            })
            .collect();
        let masses = vec![1.0 / count as f64; count];
        let base = estimate_tangents_pca(&points, &masses, 0.4, 1).unwrap();
        for _ in 0..5 {
            let r = random_rotation(&mut rng, 2);
            let rotated: Vec<DVector<f64>> = points.iter().map(|p| &r * p).collect();
            let got = estimate_tangents_pca(&rotated, &masses, 0.4, 1).unwrap();
            for (t, t0) in got.iter().zip(base.iter()) {
                let expected = &r * t0.matrix() * r.transpose();
                assert!((t.matrix() - expected).norm() <= 1e-8);
            }
        }
    }
}
