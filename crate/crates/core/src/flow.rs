//! Evolution of point-cloud varifolds by approximate mean curvature.
//!
//! Three schemes over the common velocity field `x_i' = H_i`:
//!
//! * `continuous-rk4`: classical RK4 on the positions;
//! * `explicit`: `x^{k+1} = x^k + (tau/eps) sum_j w_ij^k Pi_ij^k (x_j^k - x_i^k)`;
//! * `implicit`: the same update with the differences taken at `k+1` while
//!   the weights and operators stay at `k`, which makes each step a
//!   block-linear solve.
//!
//! Mass and tangent updates along the flow are policies: the comparison
//! principles hold for any choice, so they are configuration.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use thiserror::Error;

use crate::barriers;
use crate::curvature::CurvatureEvaluator;
use crate::kernels::{KernelError, KernelPair};
use crate::neighbors::SpatialIndex;
use crate::operator::OperatorSpec;
use crate::varifold::{pca_projector, PointCloudVarifold};

#[derive(Debug, Error)]
pub enum FlowError {
    #[error(
        "implicit solve did not converge: residual {residual:.3e} after {iterations} iterations \
         (tolerance {tolerance:.1e})"
    )]
    SolverNonConvergence {
        residual: f64,
        tolerance: f64,
        iterations: usize,
    },
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scheme {
    ContinuousRk4,
    Explicit,
    Implicit,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MassPolicy {
    Frozen,
    /// Masses proportional to the d-th power of the mean neighbor distance,
    /// renormalized to keep the total mass; a local spacing estimate.
    RecomputePerStep,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TangentPolicy {
    Frozen,
    /// PCA tangents (radius eps) refreshed once at the start of every step.
    RecomputePerStep,
    /// PCA tangents refreshed inside every right-hand-side evaluation,
    /// including each RK4 stage.
    RecomputePerRhs,
}

#[derive(Clone, Debug)]
pub struct FlowConfig {
    pub epsilon: f64,
    /// Time step: tau for the discrete schemes, dt for RK4.
    pub tau: f64,
    pub scheme: Scheme,
    pub operator: OperatorSpec,
    pub mass_policy: MassPolicy,
    pub tangent_policy: TangentPolicy,
    /// Outer fixed-point loop recomputing masses from the candidate
    /// positions inside each implicit step.
    pub implicit_masses: bool,
    /// Hard cap on the number of steps a run may take.
    pub max_steps: usize,
    pub solver_tol: f64,
    pub solver_max_iters: usize,
    /// Snapshot cadence for trajectories (the final state is always kept).
    pub snapshot_every: usize,
    /// Center for the radius diagnostics; origin when absent.
    pub reference_center: Option<DVector<f64>>,
}

impl FlowConfig {
    pub fn new(epsilon: f64, tau: f64, scheme: Scheme, operator: OperatorSpec) -> Self {
        assert!(epsilon > 0.0, "epsilon must be positive");
        assert!(tau >= 0.0, "tau must be non-negative");
        Self {
            epsilon,
            tau,
            scheme,
            operator,
            mass_policy: MassPolicy::Frozen,
            tangent_policy: TangentPolicy::RecomputePerStep,
            implicit_masses: false,
            max_steps: 1_000_000,
            solver_tol: 1e-12,
            solver_max_iters: 500,
            snapshot_every: 1,
            reference_center: None,
        }
    }
}

/// Diagnostics recorded along a trajectory, one row per step (row 0
/// describes the initial cloud).
#[derive(Clone, Debug)]
pub struct StepDiagnostics {
    pub step: usize,
    pub time: f64,
    /// Min/max distance to the reference center.
    pub r_min: f64,
    pub r_max: f64,
    /// Barrier constant of this state for the configured operator; NaN when
    /// no pair lies inside the kernel support.
    pub barrier_constant: f64,
    /// Iterations of the implicit solve that produced this state (0 for the
    /// initial state and for non-implicit schemes).
    pub solver_iterations: usize,
}

/// A flow run: time-stamped snapshots plus per-step diagnostics.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub snapshots: Vec<PointCloudVarifold>,
    /// Step index of each snapshot.
    pub snapshot_steps: Vec<usize>,
    /// One row per step, including step 0.
    pub diagnostics: Vec<StepDiagnostics>,
}

impl Trajectory {
    pub fn final_state(&self) -> &PointCloudVarifold {
        self.snapshots.last().expect("trajectory is never empty")
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }
}

/// Velocities `H_i` for every point; invalid points get zero velocity.
pub fn rhs(
    v: &PointCloudVarifold,
    pair: &KernelPair,
    epsilon: f64,
    spec: &OperatorSpec,
) -> Result<Vec<DVector<f64>>, KernelError> {
    let eval = CurvatureEvaluator::new(v, pair, epsilon)?;
    Ok((0..v.len())
        .into_par_iter()
        .map(|i| eval.at(spec, i).h)
        .collect())
}

fn refresh_tangents(v: &mut PointCloudVarifold, epsilon: f64) {
    let index = SpatialIndex::build(&v.points, epsilon);
    let updated: Vec<_> = (0..v.len())
        .into_par_iter()
        .map(|i| {
            let neighbors = index.query_index(i, epsilon).expect("build radius");
            if neighbors.len() >= v.d {
                Some(pca_projector(&v.points, &v.masses, i, &neighbors, v.d))
            } else {
                // Starved points keep their previous tangent.
                None
            }
        })
        .collect();
    for (i, t) in updated.into_iter().enumerate() {
        if let Some(t) = t {
            v.tangents[i] = t;
        }
    }
}

/// Local-spacing masses: weight_i = (mean neighbor distance)^d, renormalized
/// so points with neighbors share their previous total. Isolated points keep
/// their previous mass.
fn recompute_masses(points: &[DVector<f64>], old: &[f64], epsilon: f64, d: usize) -> Vec<f64> {
    let index = SpatialIndex::build(points, epsilon);
    let mut weights = vec![None; points.len()];
    for i in 0..points.len() {
        let neighbors = index.query_index(i, epsilon).expect("build radius");
        if neighbors.is_empty() {
            continue;
        }
        let mean: f64 = neighbors
            .iter()
            .map(|&j| (&points[j] - &points[i]).norm())
            .sum::<f64>()
            / neighbors.len() as f64;
        weights[i] = Some(mean.powi(d as i32));
    }
    let covered_weight: f64 = weights.iter().flatten().sum();
    let covered_old: f64 = old
        .iter()
        .zip(&weights)
        .filter(|(_, w)| w.is_some())
        .map(|(m, _)| m)
        .sum();
    if covered_weight <= 0.0 || covered_old <= 0.0 {
        return old.to_vec();
    }
    let scale = covered_old / covered_weight;
    weights
        .iter()
        .enumerate()
        .map(|(i, w)| match w {
            Some(w) => w * scale,
            None => old[i],
        })
        .collect()
}

fn apply_per_step_policies(v: &mut PointCloudVarifold, config: &FlowConfig) {
    if config.mass_policy == MassPolicy::RecomputePerStep {
        v.masses = recompute_masses(&v.points, &v.masses, config.epsilon, v.d);
    }
    if matches!(
        config.tangent_policy,
        TangentPolicy::RecomputePerStep | TangentPolicy::RecomputePerRhs
    ) {
        refresh_tangents(v, config.epsilon);
    }
}

/// One classical RK4 step of size `config.tau` on the positions.
pub fn step_continuous(
    v: &PointCloudVarifold,
    pair: &KernelPair,
    config: &FlowConfig,
) -> Result<PointCloudVarifold, FlowError> {
    let mut state = v.clone();
    apply_per_step_policies(&mut state, config);
    let dt = config.tau;

    let stage = |positions: Vec<DVector<f64>>,
                 base: &PointCloudVarifold|
     -> Result<Vec<DVector<f64>>, FlowError> {
        let mut stage_v = base.clone();
        stage_v.points = positions;
        if config.tangent_policy == TangentPolicy::RecomputePerRhs {
            refresh_tangents(&mut stage_v, config.epsilon);
        }
        Ok(rhs(&stage_v, pair, config.epsilon, &config.operator)?)
    };

    let x0 = state.points.clone();
    let k1 = stage(x0.clone(), &state)?;
    let x1: Vec<_> = x0
        .iter()
        .zip(&k1)
        .map(|(x, k)| x + k * (dt / 2.0))
        .collect();
    let k2 = stage(x1, &state)?;
    let x2: Vec<_> = x0
        .iter()
        .zip(&k2)
        .map(|(x, k)| x + k * (dt / 2.0))
        .collect();
    let k3 = stage(x2, &state)?;
    let x3: Vec<_> = x0.iter().zip(&k3).map(|(x, k)| x + k * dt).collect();
    let k4 = stage(x3, &state)?;

    for i in 0..state.len() {
        state.points[i] =
            &x0[i] + (&k1[i] + &k2[i] * 2.0 + &k3[i] * 2.0 + &k4[i]) * (dt / 6.0);
    }
    Ok(state)
}

/// One explicit Euler step: weights, operators and differences at step `k`.
pub fn step_explicit(
    v: &PointCloudVarifold,
    pair: &KernelPair,
    config: &FlowConfig,
) -> Result<PointCloudVarifold, FlowError> {
    let mut state = v.clone();
    apply_per_step_policies(&mut state, config);
    let velocities = rhs(&state, pair, config.epsilon, &config.operator)?;
    for (x, vel) in state.points.iter_mut().zip(&velocities) {
        *x += vel * config.tau;
    }
    Ok(state)
}

/// Precomputed row of the implicit system for one point.
struct ImplicitRow {
    /// `(j, (tau/eps) w_ij, Pi_ij)` over neighbors.
    pairs: Vec<(usize, f64, DMatrix<f64>)>,
    /// LU factorization of the diagonal block `I + (tau/eps) sum w Pi`.
    diag_lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

/// One implicit step: solves `A X^{k+1} = X^k` with
/// `A_ii = I + (tau/eps) sum_j w_ij Pi_ij` and `A_ij = -(tau/eps) w_ij Pi_ij`.
pub fn step_implicit(
    v: &PointCloudVarifold,
    pair: &KernelPair,
    config: &FlowConfig,
) -> Result<PointCloudVarifold, FlowError> {
    Ok(step_implicit_with_info(v, pair, config)?.0)
}

pub fn step_implicit_with_info(
    v: &PointCloudVarifold,
    pair: &KernelPair,
    config: &FlowConfig,
) -> Result<(PointCloudVarifold, usize), FlowError> {
    let mut state = v.clone();
    apply_per_step_policies(&mut state, config);

    let mut total_iters = 0;
    let mut masses = state.masses.clone();
    // With implicit masses, an outer fixed-point loop recomputes the masses
    // from the candidate positions and re-solves.
    let outer_rounds = if config.implicit_masses { 50 } else { 1 };
    let mut solution = state.points.clone();
    let mut previous: Option<Vec<DVector<f64>>> = None;
    for _round in 0..outer_rounds {
        let mut trial = state.clone();
        trial.masses = masses.clone();
        let (x_new, iters) = solve_implicit_system(&trial, pair, config)?;
        total_iters += iters;
        solution = x_new;
        if !config.implicit_masses {
            break;
        }
        let change = match &previous {
            None => f64::INFINITY,
            Some(prev) => prev
                .iter()
                .zip(&solution)
                .map(|(a, b)| (a - b).norm_squared())
                .sum::<f64>()
                .sqrt(),
        };
        let scale = solution
            .iter()
            .map(|x| x.norm_squared())
            .sum::<f64>()
            .sqrt();
        if change <= config.solver_tol * scale.max(1.0) {
            break;
        }
        previous = Some(solution.clone());
        masses = recompute_masses(&solution, &state.masses, config.epsilon, state.d);
    }
    if config.implicit_masses {
        state.masses = masses;
    }
    state.points = solution;
    Ok((state, total_iters))
}

fn solve_implicit_system(
    state: &PointCloudVarifold,
    pair: &KernelPair,
    config: &FlowConfig,
) -> Result<(Vec<DVector<f64>>, usize), FlowError> {
    let n = state.n;
    let count = state.len();
    let scale = config.tau / config.epsilon;
    let eval = CurvatureEvaluator::new(state, pair, config.epsilon)?;

    let rows: Vec<ImplicitRow> = (0..count)
        .into_par_iter()
        .map(|i| {
            let w = eval.weights(i);
            let mut diag = DMatrix::identity(n, n);
            let mut pairs = Vec::with_capacity(w.terms.len());
            if w.valid {
                for &(j, wij) in &w.terms {
                    let pi = config
                        .operator
                        .compile(&state.tangents[i], &state.tangents[j]);
                    diag += &pi * (scale * wij);
                    pairs.push((j, scale * wij, pi));
                }
            }
            ImplicitRow {
                pairs,
                diag_lu: diag.lu(),
            }
        })
        .collect();

    let x0 = &state.points;
    let rhs_norm = x0.iter().map(|x| x.norm_squared()).sum::<f64>().sqrt();
    let tol = config.solver_tol * rhs_norm.max(f64::MIN_POSITIVE);

    let residual_of = |x: &Vec<DVector<f64>>| -> f64 {
        (0..count)
            .into_par_iter()
            .map(|i| {
                let mut ax = x[i].clone();
                for (j, c, pi) in &rows[i].pairs {
                    ax += pi * (&x[i] - &x[*j]) * *c;
                }
                (ax - &x0[i]).norm_squared()
            })
            .sum::<f64>()
            .sqrt()
    };

    // Block-Jacobi iteration started from X^k.
    let mut x: Vec<DVector<f64>> = x0.clone();
    let mut iterations = 0;
    let mut residual = residual_of(&x);
    while residual > tol && iterations < config.solver_max_iters {
        let next: Vec<DVector<f64>> = (0..count)
            .into_par_iter()
            .map(|i| {
                let mut b = x0[i].clone();
                for (j, c, pi) in &rows[i].pairs {
                    b += pi * &x[*j] * *c;
                }
                rows[i].diag_lu.solve(&b).unwrap_or(b)
            })
            .collect();
        x = next;
        iterations += 1;
        residual = residual_of(&x);
    }

    if residual > tol {
        // Dense direct fallback for small systems.
        if count * n <= 3000 {
            let x_dense = solve_dense(state, &rows)?;
            let dense_res = residual_of(&x_dense);
            if dense_res <= tol.max(1e-12 * rhs_norm.max(1.0)) {
                return Ok((x_dense, iterations + 1));
            }
            return Err(FlowError::SolverNonConvergence {
                residual: dense_res,
                tolerance: tol,
                iterations,
            });
        }
        return Err(FlowError::SolverNonConvergence {
            residual,
            tolerance: tol,
            iterations,
        });
    }
    Ok((x, iterations))
}

fn solve_dense(
    state: &PointCloudVarifold,
    rows: &[ImplicitRow],
) -> Result<Vec<DVector<f64>>, FlowError> {
    let n = state.n;
    let count = state.len();
    let dim = count * n;
    let mut a = DMatrix::identity(dim, dim);
    for (i, row) in rows.iter().enumerate() {
        for (j, c, pi) in &row.pairs {
            for r in 0..n {
                for s in 0..n {
                    a[(i * n + r, i * n + s)] += c * pi[(r, s)];
                    a[(i * n + r, j * n + s)] -= c * pi[(r, s)];
                }
            }
        }
    }
    let mut b = DVector::zeros(dim);
    for (i, x) in state.points.iter().enumerate() {
        b.rows_mut(i * n, n).copy_from(x);
    }
    let sol = a.lu().solve(&b).ok_or(FlowError::SolverNonConvergence {
        residual: f64::INFINITY,
        tolerance: 0.0,
        iterations: 0,
    })?;
    Ok((0..count).map(|i| sol.rows(i * n, n).into_owned()).collect())
}

fn diagnostics_for(
    v: &PointCloudVarifold,
    config: &FlowConfig,
    step: usize,
    time: f64,
    solver_iterations: usize,
) -> StepDiagnostics {
    let center = config
        .reference_center
        .clone()
        .unwrap_or_else(|| DVector::zeros(v.n));
    let mut r_min = f64::INFINITY;
    let mut r_max: f64 = 0.0;
    for p in &v.points {
        let r = (p - &center).norm();
        r_min = r_min.min(r);
        r_max = r_max.max(r);
    }
    let barrier_constant =
        barriers::barrier_constant(v, &center, config.epsilon, &config.operator)
            .unwrap_or(f64::NAN);
    StepDiagnostics {
        step,
        time,
        r_min,
        r_max,
        barrier_constant,
        solver_iterations,
    }
}

/// Runs `steps` steps of the configured scheme (capped by
/// `config.max_steps`), recording snapshots and diagnostics.
pub fn run_flow(
    v0: &PointCloudVarifold,
    pair: &KernelPair,
    config: &FlowConfig,
    steps: usize,
) -> Result<Trajectory, FlowError> {
    let steps = steps.min(config.max_steps);
    let every = config.snapshot_every.max(1);
    let mut traj = Trajectory {
        times: vec![0.0],
        snapshots: vec![v0.clone()],
        snapshot_steps: vec![0],
        diagnostics: vec![diagnostics_for(v0, config, 0, 0.0, 0)],
    };
    let mut current = v0.clone();
    for k in 1..=steps {
        let (next, iters) = match config.scheme {
            Scheme::ContinuousRk4 => (step_continuous(&current, pair, config)?, 0),
            Scheme::Explicit => (step_explicit(&current, pair, config)?, 0),
            Scheme::Implicit => step_implicit_with_info(&current, pair, config)?,
        };
        current = next;
        let time = k as f64 * config.tau;
        traj.diagnostics
            .push(diagnostics_for(&current, config, k, time, iters));
        if k % every == 0 || k == steps {
            traj.times.push(time);
            traj.snapshots.push(current.clone());
            traj.snapshot_steps.push(k);
        }
    }
    Ok(traj)
}
