//! Distance fields on grids.
//!
//! Every grid point `z` is projected onto the discrete reachable set by
//! minimising `½‖x_N − z‖²` over Euler trajectories. The minimiser gives the
//! endpoint `x*(z)` and the value `θ(z)`; the set is then approximated as
//! `Ω ∖ ⋃ int B(z, √(2θ(z)))`.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::discretization::{ControlSequence, GridSpec};
use crate::error::{Error, Result};
use crate::scalar::{dist_sq, dot, Scalar};
use crate::systems::ControlSystem;

/// Tolerance below which an endpoint on a sphere is not considered inside the
/// open ball (ball-checking and membership).
pub const TOL_BALL: f64 = 1e-9;

/// Values of `θ` at or below this are exact hits; remaining restarts are skipped.
const THETA_EXACT: f64 = 1e-14;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MayerOptions {
    /// Stop when the projected-gradient step `‖P(u − ∇J) − u‖_∞` is below this.
    pub tol_grad: f64,
    pub max_iter: usize,
    pub restarts: usize,
    /// Armijo sufficient-decrease constant.
    pub armijo: f64,
}

impl Default for MayerOptions {
    fn default() -> Self {
        Self {
            tol_grad: 1e-8,
            max_iter: 500,
            restarts: 5,
            armijo: 1e-4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct MayerResult<T: Scalar> {
    pub z: Vec<T>,
    pub theta: T,
    pub x_star: Vec<T>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub controls: Option<ControlSequence<T>>,
    pub converged: bool,
    pub restarts_used: usize,
}

impl<T: Scalar> MayerResult<T> {
    /// Builds a result with `θ = ½‖x* − z‖²` computed from the endpoint.
    pub fn new(
        z: Vec<T>,
        x_star: Vec<T>,
        controls: Option<ControlSequence<T>>,
        converged: bool,
        restarts_used: usize,
    ) -> Self {
        let theta = T::half() * dist_sq(&x_star, &z);
        Self {
            z,
            theta,
            x_star,
            controls,
            converged,
            restarts_used,
        }
    }

    /// Radius `√(2θ)` of the excluded ball.
    pub fn radius(&self) -> T {
        (T::two() * self.theta).sqrt()
    }
}

/// Terminal state of the Euler transcription, keeping all states for the
/// adjoint sweep.
fn forward<T: Scalar>(
    sys: &ControlSystem<T>,
    u: &[T],
    steps: usize,
    h: T,
    states: &mut Vec<T>,
) -> Result<()> {
    let dx = sys.dim_x();
    let du = sys.dim_u();
    states.clear();
    states.extend_from_slice(sys.x0());
    let mut g = vec![T::zero(); dx];
    for n in 0..steps {
        let t = sys.t0() + h * T::from_usize(n).unwrap_or_else(T::zero);
        let (prev, _) = states.split_at(n * dx + dx);
        let x = &prev[n * dx..];
        sys.eval_into(t, x, &u[n * du..(n + 1) * du], &mut g);
        for i in 0..dx {
            let v = states[n * dx + i] + h * g[i];
            if !v.is_finite() {
                return Err(Error::Divergence { step: n });
            }
            states.push(v);
        }
    }
    Ok(())
}

fn objective_value<T: Scalar>(states: &[T], dx: usize, steps: usize, z: &[T]) -> T {
    T::half() * dist_sq(&states[steps * dx..(steps + 1) * dx], z)
}

/// Discrete adjoint sweep: `p_N = x_N − z`,
/// `∂J/∂u_n = h J_u(t_n,x_n,u_n)ᵀ p_{n+1}`, `p_n = p_{n+1} + h J_x(t_n,x_n,u_n)ᵀ p_{n+1}`.
fn adjoint<T: Scalar>(
    sys: &ControlSystem<T>,
    u: &[T],
    steps: usize,
    h: T,
    z: &[T],
    states: &[T],
    grad: &mut [T],
) {
    let dx = sys.dim_x();
    let du = sys.dim_u();
    let mut p: Vec<T> = states[steps * dx..]
        .iter()
        .zip(z)
        .map(|(&x, &zi)| x - zi)
        .collect();
    let mut jx = vec![T::zero(); dx * dx];
    let mut ju = vec![T::zero(); dx * du];
    let mut next = vec![T::zero(); dx];
    for n in (0..steps).rev() {
        let t = sys.t0() + h * T::from_usize(n).unwrap_or_else(T::zero);
        let x = &states[n * dx..(n + 1) * dx];
        let un = &u[n * du..(n + 1) * du];
        sys.jac_x_into(t, x, un, &mut jx);
        sys.jac_u_into(t, x, un, &mut ju);
        for k in 0..du {
            grad[n * du + k] = h * (0..dx).map(|i| ju[i * du + k] * p[i]).sum::<T>();
        }
        for j in 0..dx {
            next[j] = p[j] + h * (0..dx).map(|i| jx[i * dx + j] * p[i]).sum::<T>();
        }
        std::mem::swap(&mut p, &mut next);
    }
}

/// Objective `½‖x_N − z‖²` and its gradient with respect to all `N · dim_u`
/// control values (step-major), by the discrete adjoint of the Euler scheme.
pub fn mayer_objective_gradient<T: Scalar>(
    sys: &ControlSystem<T>,
    controls: &ControlSequence<T>,
    z: &[T],
) -> Result<(T, Vec<T>)> {
    if z.len() != sys.dim_x() {
        return Err(Error::Dimension {
            expected: sys.dim_x(),
            got: z.len(),
        });
    }
    let steps = controls.steps();
    let mut states = Vec::with_capacity((steps + 1) * sys.dim_x());
    forward(sys, controls.values(), steps, controls.h(), &mut states)?;
    let mut grad = vec![T::zero(); controls.values().len()];
    adjoint(
        sys,
        controls.values(),
        steps,
        controls.h(),
        z,
        &states,
        &mut grad,
    );
    Ok((objective_value(&states, sys.dim_x(), steps, z), grad))
}

struct Projector<'a, T: Scalar> {
    lower: &'a [T],
    upper: &'a [T],
}

impl<T: Scalar> Projector<'_, T> {
    #[inline]
    fn project(&self, k: usize, v: T) -> T {
        let c = k % self.lower.len();
        v.max(self.lower[c]).min(self.upper[c])
    }
}

struct LocalSolution<T> {
    u: Vec<T>,
    theta: T,
    converged: bool,
}

/// Projected gradient with Barzilai–Borwein trial steps and Armijo
/// backtracking along the feasible direction.
fn projected_gradient<T: Scalar>(
    sys: &ControlSystem<T>,
    z: &[T],
    steps: usize,
    h: T,
    mut u: Vec<T>,
    opts: &MayerOptions,
) -> Result<LocalSolution<T>> {
    let dx = sys.dim_x();
    let proj = Projector {
        lower: sys.u_lower(),
        upper: sys.u_upper(),
    };
    let lam_min = T::lit(1e-10);
    let lam_max = T::lit(1e10);
    let tol = T::lit(opts.tol_grad);
    let c1 = T::lit(opts.armijo);
    let exact = T::lit(THETA_EXACT) * T::lit(1e-6);

    let mut states = Vec::with_capacity((steps + 1) * dx);
    let mut trial_states = Vec::with_capacity((steps + 1) * dx);
    for (k, v) in u.iter_mut().enumerate() {
        *v = proj.project(k, *v);
    }
    forward(sys, &u, steps, h, &mut states)?;
    let mut f = objective_value(&states, dx, steps, z);
    let mut g = vec![T::zero(); u.len()];
    adjoint(sys, &u, steps, h, z, &states, &mut g);

    let pg_norm = |u: &[T], g: &[T]| -> T {
        u.iter()
            .zip(g)
            .enumerate()
            .map(|(k, (&ui, &gi))| (proj.project(k, ui - gi) - ui).abs())
            .fold(T::zero(), T::max)
    };

    let mut pg = pg_norm(&u, &g);
    let mut lam = if pg > T::zero() {
        (T::one() / pg).max(lam_min).min(lam_max)
    } else {
        T::one()
    };
    let mut d = vec![T::zero(); u.len()];
    let mut trial = vec![T::zero(); u.len()];
    let mut g_new = vec![T::zero(); u.len()];

    for _ in 0..opts.max_iter {
        if pg < tol || f <= exact {
            break;
        }
        for k in 0..u.len() {
            d[k] = proj.project(k, u[k] - lam * g[k]) - u[k];
        }
        let gd = dot(&g, &d);
        if !(gd < T::zero()) {
            break;
        }
        let mut t = T::one();
        let mut accepted = None;
        for _ in 0..60 {
            for k in 0..u.len() {
                trial[k] = u[k] + t * d[k];
            }
            forward(sys, &trial, steps, h, &mut trial_states)?;
            let ft = objective_value(&trial_states, dx, steps, z);
            if ft <= f + c1 * t * gd {
                accepted = Some(ft);
                break;
            }
            t = t * T::half();
        }
        let Some(f_new) = accepted else { break };
        adjoint(sys, &trial, steps, h, z, &trial_states, &mut g_new);
        let mut ss = T::zero();
        let mut sy = T::zero();
        for k in 0..u.len() {
            let s = trial[k] - u[k];
            ss += s * s;
            sy += s * (g_new[k] - g[k]);
        }
        lam = if sy > T::zero() {
            (ss / sy).max(lam_min).min(lam_max)
        } else {
            lam_max
        };
        std::mem::swap(&mut u, &mut trial);
        std::mem::swap(&mut g, &mut g_new);
        std::mem::swap(&mut states, &mut trial_states);
        f = f_new;
        pg = pg_norm(&u, &g);
    }

    Ok(LocalSolution {
        u,
        theta: f,
        converged: pg < tol || f <= exact,
    })
}

/// Multistart solve of `min ½‖x_N − z‖²` with default tolerances.
pub fn solve_mayer<T: Scalar>(
    sys: &ControlSystem<T>,
    z: &[T],
    steps: usize,
    restarts: usize,
    seed: u64,
) -> Result<MayerResult<T>> {
    let opts = MayerOptions {
        restarts,
        ..MayerOptions::default()
    };
    solve_mayer_with(sys, z, steps, seed, &opts)
}

/// Multistart projected-gradient solve. The first start is the constant
/// box-midpoint control; the others are uniform random in the box. Returns the
/// best local minimum found.
pub fn solve_mayer_with<T: Scalar>(
    sys: &ControlSystem<T>,
    z: &[T],
    steps: usize,
    seed: u64,
    opts: &MayerOptions,
) -> Result<MayerResult<T>> {
    if opts.restarts == 0 {
        return Err(Error::invalid("restarts must be at least 1"));
    }
    if steps == 0 {
        return Err(Error::invalid("steps must be at least 1"));
    }
    if z.len() != sys.dim_x() {
        return Err(Error::Dimension {
            expected: sys.dim_x(),
            got: z.len(),
        });
    }
    let du = sys.dim_u();
    let h = sys.step_size(steps);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mid = sys.control_midpoint();

    let mut best: Option<LocalSolution<T>> = None;
    let mut used = 0;
    for start in 0..opts.restarts {
        let u0: Vec<T> = if start == 0 {
            (0..steps).flat_map(|_| mid.iter().copied()).collect()
        } else {
            (0..steps * du)
                .map(|k| {
                    let c = k % du;
                    let r: f64 = rng.gen();
                    let (l, hi) = (sys.u_lower()[c], sys.u_upper()[c]);
                    l + (hi - l) * T::lit(r)
                })
                .collect()
        };
        let sol = projected_gradient(sys, z, steps, h, u0, opts)?;
        used += 1;
        let better = match &best {
            None => true,
            Some(b) => sol.theta < b.theta,
        };
        if better {
            best = Some(sol);
        }
        if best
            .as_ref()
            .is_some_and(|b| b.theta <= T::lit(THETA_EXACT))
        {
            break;
        }
    }

    let best = best.expect("at least one start");
    let controls = ControlSequence::from_raw(best.u, du, steps, h);
    let mut states = Vec::new();
    forward(sys, controls.values(), steps, h, &mut states)?;
    let dx = sys.dim_x();
    let x_star = states[steps * dx..].to_vec();
    Ok(MayerResult::new(
        z.to_vec(),
        x_star,
        Some(controls),
        best.converged,
        used,
    ))
}

/// Per-point seed; independent of scheduling so results do not depend on the
/// number of workers.
pub fn point_seed(seed: u64, index: usize) -> u64 {
    let mut x = seed
        ^ (index as u64)
            .wrapping_add(1)
            .wrapping_mul(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct DistanceField<T: Scalar> {
    pub grid: GridSpec<T>,
    pub steps: usize,
    pub results: Vec<MayerResult<T>>,
    /// Positions in `results` whose balls failed ball-checking.
    pub suppressed: BTreeSet<usize>,
}

impl<T: Scalar> DistanceField<T> {
    pub fn len(&self) -> usize {
        self.results.len()
    }

    pub fn is_empty(&self) -> bool {
        self.results.is_empty()
    }

    pub fn is_suppressed(&self, k: usize) -> bool {
        self.suppressed.contains(&k)
    }

    /// Drops stored control sequences (they dominate the serialised size).
    pub fn without_controls(mut self) -> Self {
        for r in &mut self.results {
            r.controls = None;
        }
        self
    }
}

pub fn build_distance_field<T: Scalar>(
    sys: &ControlSystem<T>,
    grid: &GridSpec<T>,
    steps: usize,
    restarts: usize,
    seed: u64,
) -> Result<DistanceField<T>> {
    let opts = MayerOptions {
        restarts,
        ..MayerOptions::default()
    };
    build_distance_field_with(sys, grid, steps, seed, &opts)
}

/// Solves one Mayer problem per grid point, in parallel; results follow the
/// grid's row-major order.
pub fn build_distance_field_with<T: Scalar>(
    sys: &ControlSystem<T>,
    grid: &GridSpec<T>,
    steps: usize,
    seed: u64,
    opts: &MayerOptions,
) -> Result<DistanceField<T>> {
    if grid.dim() != sys.dim_x() {
        return Err(Error::Dimension {
            expected: sys.dim_x(),
            got: grid.dim(),
        });
    }
    let points = grid.points();
    if points.is_empty() {
        return Err(Error::invalid("grid has no points"));
    }
    let results = points
        .par_iter()
        .enumerate()
        .map(|(k, z)| solve_mayer_with(sys, z, steps, point_seed(seed, k), opts))
        .collect::<Result<Vec<_>>>()?;
    Ok(DistanceField {
        grid: grid.clone(),
        steps,
        results,
        suppressed: BTreeSet::new(),
    })
}

/// Suppresses every ball `B(z′, √(2θ(z′)))` whose interior strictly contains
/// some other computed endpoint `x*(z)`. Existing suppressions are kept.
pub fn ball_check<T: Scalar>(field: &DistanceField<T>) -> DistanceField<T> {
    let tol = T::lit(TOL_BALL);
    let flagged: Vec<usize> = field
        .results
        .par_iter()
        .enumerate()
        .filter(|(_, r)| r.theta > T::zero())
        .filter(|(k, r)| {
            let limit = r.radius() - tol;
            limit > T::zero()
                && field
                    .results
                    .iter()
                    .enumerate()
                    .any(|(j, other)| j != *k && dist_sq(&other.x_star, &r.z).sqrt() < limit)
        })
        .map(|(k, _)| k)
        .collect();
    let mut out = field.clone();
    out.suppressed.extend(flagged);
    out
}

/// `x ∈ Ω ∖ ⋃ int B(z, √(2θ(z)))` over the unsuppressed balls. A point within
/// [`TOL_BALL`] of a sphere counts as outside the open ball.
pub fn dfog_membership<T: Scalar>(field: &DistanceField<T>, x: &[T]) -> bool {
    if !field.grid.contains_point(x) {
        return false;
    }
    let tol = T::lit(TOL_BALL);
    field.results.iter().enumerate().all(|(k, r)| {
        if r.theta <= T::zero() || field.is_suppressed(k) {
            return true;
        }
        dist_sq(x, &r.z).sqrt() >= r.radius() - tol
    })
}
