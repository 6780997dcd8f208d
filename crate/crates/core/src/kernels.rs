//! Kernel profiles and normalization constants.
//!
//! A profile is a non-negative function on `[0, inf)` supported on `[0, 1]`,
//! together with its analytic derivative. A pair `(rho, xi)` is *natural*
//! when `-s rho'(s) = n xi(s)`; this makes the flow weights non-negative and
//! the weighted-radius identity exact. The default `rho` is the standard
//! smooth bump `exp(1 - 1/(1 - s^2))`.

use std::sync::Arc;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("quadrature did not converge to tolerance {tol} (reached depth {depth})")]
    QuadratureNonConvergence { tol: f64, depth: usize },
    #[error("kernel table invalid: {0}")]
    InvalidTable(String),
}

type EvalFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A kernel profile with support radius 1 and an analytic derivative.
///
/// Immutable after construction; evaluation is thread safe.
#[derive(Clone)]
pub struct KernelProfile {
    value: EvalFn,
    deriv: EvalFn,
}

impl std::fmt::Debug for KernelProfile {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("KernelProfile").finish_non_exhaustive()
    }
}

fn bump_value(s: f64) -> f64 {
    if s >= 1.0 || s < 0.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - s * s)).exp()
    }
}

fn bump_deriv(s: f64) -> f64 {
    if s >= 1.0 || s < 0.0 {
        0.0
    } else {
        let q = 1.0 - s * s;
        bump_value(s) * (-2.0 * s / (q * q))
    }
}

fn bump_second_deriv(s: f64) -> f64 {
    if s >= 1.0 || s < 0.0 {
        0.0
    } else {
        let q = 1.0 - s * s;
        bump_value(s) * (4.0 * s * s / q.powi(4) - (2.0 + 6.0 * s * s) / q.powi(3))
    }
}

impl KernelProfile {
    /// The smooth bump `rho(s) = exp(1 - 1/(1 - s^2))` for `s < 1`, else 0.
    pub fn bump() -> Self {
        Self {
            value: Arc::new(bump_value),
            deriv: Arc::new(bump_deriv),
        }
    }

    /// The profile `xi(s) = -s rho'(s) / n` paired with the bump, so that
    /// `(bump, bump_xi(n))` is a natural pair in ambient dimension `n`.
    pub fn bump_xi(n: usize) -> Self {
        let nf = n as f64;
        Self {
            value: Arc::new(move |s| -s * bump_deriv(s) / nf),
            deriv: Arc::new(move |s| (-bump_deriv(s) - s * bump_second_deriv(s)) / nf),
        }
    }

    /// Profile from explicit closures. The caller is responsible for the
    /// support-radius-1 convention.
    pub fn from_fns<F, G>(value: F, deriv: G) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
        G: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Self {
            value: Arc::new(value),
            deriv: Arc::new(deriv),
        }
    }

    /// Profile from a tabulated `(s, value)` grid via natural cubic spline.
    ///
    /// The table must be strictly increasing in `s`, start at `s = 0` and end
    /// at `s = 1`. Values outside `[0, 1]` evaluate to 0. Pairs built from
    /// tables must be validated with [`validate_natural_pair`], not assumed
    /// natural.
    pub fn from_table(table: &[(f64, f64)]) -> Result<Self, KernelError> {
        let spline = CubicSpline::fit(table)?;
        let spline2 = spline.clone();
        Ok(Self {
            value: Arc::new(move |s| {
                if !(0.0..1.0).contains(&s) {
                    0.0
                } else {
                    spline.value(s)
                }
            }),
            deriv: Arc::new(move |s| {
                if !(0.0..1.0).contains(&s) {
                    0.0
                } else {
                    spline2.deriv(s)
                }
            }),
        })
    }

    pub fn value(&self, s: f64) -> f64 {
        (self.value)(s)
    }

    pub fn deriv(&self, s: f64) -> f64 {
        (self.deriv)(s)
    }
}

/// Natural cubic spline on a strictly increasing grid.
#[derive(Clone)]
struct CubicSpline {
    xs: Vec<f64>,
    ys: Vec<f64>,
    /// Second derivatives at the nodes.
    m: Vec<f64>,
}

impl CubicSpline {
    fn fit(table: &[(f64, f64)]) -> Result<Self, KernelError> {
        if table.len() < 4 {
            return Err(KernelError::InvalidTable(format!(
                "need at least 4 nodes, got {}",
                table.len()
            )));
        }
        let xs: Vec<f64> = table.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = table.iter().map(|p| p.1).collect();
        if xs.windows(2).any(|w| w[1] <= w[0]) {
            return Err(KernelError::InvalidTable("abscissas not increasing".into()));
        }
        if (xs[0] - 0.0).abs() > 1e-12 || (xs[xs.len() - 1] - 1.0).abs() > 1e-12 {
            return Err(KernelError::InvalidTable(
                "table must span [0, 1] exactly".into(),
            ));
        }
        let n = xs.len();
        // Tridiagonal system for the natural spline (Thomas algorithm).
        let mut sub = vec![0.0; n];
        let mut diag = vec![1.0; n];
        let mut sup = vec![0.0; n];
        let mut rhs = vec![0.0; n];
        for i in 1..n - 1 {
            let h0 = xs[i] - xs[i - 1];
            let h1 = xs[i + 1] - xs[i];
            sub[i] = h0 / 6.0;
            diag[i] = (h0 + h1) / 3.0;
            sup[i] = h1 / 6.0;
            rhs[i] = (ys[i + 1] - ys[i]) / h1 - (ys[i] - ys[i - 1]) / h0;
        }
        for i in 1..n {
            let w = sub[i] / diag[i - 1];
            diag[i] -= w * sup[i - 1];
            rhs[i] -= w * rhs[i - 1];
        }
        let mut m = vec![0.0; n];
        m[n - 1] = rhs[n - 1] / diag[n - 1];
        for i in (0..n - 1).rev() {
            m[i] = (rhs[i] - sup[i] * m[i + 1]) / diag[i];
        }
        Ok(Self { xs, ys, m })
    }

    fn segment(&self, s: f64) -> usize {
        match self.xs.binary_search_by(|x| x.partial_cmp(&s).unwrap()) {
            Ok(i) => i.min(self.xs.len() - 2),
            Err(i) => i.saturating_sub(1).min(self.xs.len() - 2),
        }
    }

    fn value(&self, s: f64) -> f64 {
        let i = self.segment(s);
        let h = self.xs[i + 1] - self.xs[i];
        let a = (self.xs[i + 1] - s) / h;
        let b = (s - self.xs[i]) / h;
        a * self.ys[i]
            + b * self.ys[i + 1]
            + ((a * a * a - a) * self.m[i] + (b * b * b - b) * self.m[i + 1]) * h * h / 6.0
    }

    fn deriv(&self, s: f64) -> f64 {
        let i = self.segment(s);
        let h = self.xs[i + 1] - self.xs[i];
        let a = (self.xs[i + 1] - s) / h;
        let b = (s - self.xs[i]) / h;
        (self.ys[i + 1] - self.ys[i]) / h
            + ((3.0 * b * b - 1.0) * self.m[i + 1] - (3.0 * a * a - 1.0) * self.m[i]) * h / 6.0
    }
}

/// The kernel triple used by the estimators: `rho` drives the numerator,
/// `xi` the denominator, `eta` the tangent-averaging matrix `c`.
#[derive(Clone, Debug)]
pub struct KernelPair {
    pub rho: KernelProfile,
    pub xi: KernelProfile,
    pub eta: KernelProfile,
    /// Whether `-s rho'(s) = n xi(s)` holds by construction.
    pub is_natural: bool,
}

/// The default natural pair in ambient dimension `n`:
/// `rho` is the smooth bump and `xi(s) = -s rho'(s) / n`; `eta` defaults
/// to `xi`.
pub fn default_bump_pair(n: usize) -> KernelPair {
    assert!(n >= 2, "ambient dimension must be at least 2");
    let xi = KernelProfile::bump_xi(n);
    KernelPair {
        rho: KernelProfile::bump(),
        xi: xi.clone(),
        eta: xi,
        is_natural: true,
    }
}

/// Result of checking the natural-pair relation on a grid.
#[derive(Clone, Debug)]
pub struct NaturalPairReport {
    /// max over the grid of `|-s rho'(s) - n xi(s)|`.
    pub max_defect: f64,
    pub grid_size: usize,
    pub pass: bool,
}

pub const NATURAL_PAIR_TOL: f64 = 1e-12;

/// Checks `-s rho'(s) = n xi(s)` on a uniform grid over `[0, 1]`.
pub fn validate_natural_pair(pair: &KernelPair, n: usize, grid_size: usize) -> NaturalPairReport {
    assert!(grid_size >= 100, "grid_size must be at least 100");
    let mut max_defect: f64 = 0.0;
    for k in 0..=grid_size {
        let s = k as f64 / grid_size as f64;
        let defect = (-s * pair.rho.deriv(s) - n as f64 * pair.xi.value(s)).abs();
        max_defect = max_defect.max(defect);
    }
    NaturalPairReport {
        max_defect,
        grid_size,
        pass: max_defect <= NATURAL_PAIR_TOL,
    }
}

/// Volume of the unit ball in `R^d`.
pub fn unit_ball_volume(d: usize) -> f64 {
    match d {
        0 => 1.0,
        1 => 2.0,
        _ => unit_ball_volume(d - 2) * std::f64::consts::TAU / d as f64,
    }
}

/// One normalization constant `d * omega_d * int_0^1 profile(t) t^(d-1) dt`
/// with the quadrature error bound actually achieved.
#[derive(Clone, Copy, Debug)]
pub struct NormalizationEntry {
    pub value: f64,
    pub error_bound: f64,
}

pub const QUADRATURE_TOL: f64 = 1e-10;

/// Computes the normalization constant of a profile for varifold dimension
/// `d` by adaptive quadrature (absolute error at most [`QUADRATURE_TOL`]).
pub fn normalization(profile: &KernelProfile, d: usize) -> Result<NormalizationEntry, KernelError> {
    assert!(d >= 1, "varifold dimension must be at least 1");
    let dd = d as f64;
    let f = |t: f64| profile.value(t) * t.powi(d as i32 - 1);
    let (integral, err) = adaptive_simpson(&f, 0.0, 1.0, QUADRATURE_TOL, 50)?;
    let scale = dd * unit_ball_volume(d);
    Ok(NormalizationEntry {
        value: scale * integral,
        error_bound: scale * err,
    })
}

/// The pair of constants `C_rho`, `C_xi` for a kernel pair at dimension `d`.
#[derive(Clone, Copy, Debug)]
pub struct NormalizationConstants {
    pub c_rho: f64,
    pub c_xi: f64,
    pub d: usize,
    pub quad_error: f64,
}

impl NormalizationConstants {
    pub fn compute(pair: &KernelPair, d: usize) -> Result<Self, KernelError> {
        let rho = normalization(&pair.rho, d)?;
        let xi = normalization(&pair.xi, d)?;
        Ok(Self {
            c_rho: rho.value,
            c_xi: xi.value,
            d,
            quad_error: rho.error_bound + xi.error_bound,
        })
    }
}

fn simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    (b - a) / 6.0 * (f(a) + 4.0 * f(0.5 * (a + b)) + f(b))
}

/// Adaptive Simpson quadrature; returns (value, achieved error bound).
fn adaptive_simpson(
    f: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    tol: f64,
    max_depth: usize,
) -> Result<(f64, f64), KernelError> {
    fn recurse(
        f: &impl Fn(f64) -> f64,
        a: f64,
        b: f64,
        whole: f64,
        tol: f64,
        depth: usize,
    ) -> Option<(f64, f64)> {
        let m = 0.5 * (a + b);
        let left = simpson(f, a, m);
        let right = simpson(f, m, b);
        let delta = left + right - whole;
        if delta.abs() <= 15.0 * tol {
            return Some((left + right + delta / 15.0, delta.abs() / 15.0));
        }
        if depth == 0 {
            return None;
        }
        let (lv, le) = recurse(f, a, m, left, tol / 2.0, depth - 1)?;
        let (rv, re) = recurse(f, m, b, right, tol / 2.0, depth - 1)?;
        Some((lv + rv, le + re))
    }
    let whole = simpson(f, a, b);
    recurse(f, a, b, whole, tol, max_depth).ok_or(KernelError::QuadratureNonConvergence {
        tol,
        depth: max_depth,
    })
}
