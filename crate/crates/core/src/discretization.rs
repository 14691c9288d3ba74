//! Explicit Euler transcription of the control system and the fully discrete
//! set-valued Euler scheme on the lattice `ρℤᵈ`.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::systems::ControlSystem;

/// Piecewise-constant controls `u_0, …, u_{N−1}` stored step-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ControlSequence<T: Scalar> {
    values: Vec<T>,
    dim_u: usize,
    steps: usize,
    h: T,
}

impl<T: Scalar> ControlSequence<T> {
    pub fn new(sys: &ControlSystem<T>, steps: usize, values: Vec<T>) -> Result<Self> {
        if steps == 0 {
            return Err(Error::invalid("control sequence needs at least one step"));
        }
        let dim_u = sys.dim_u();
        if values.len() != steps * dim_u {
            return Err(Error::Dimension {
                expected: steps * dim_u,
                got: values.len(),
            });
        }
        for u in values.chunks(dim_u.max(1)) {
            sys.check_control(u)?;
        }
        Ok(Self {
            values,
            dim_u,
            steps,
            h: sys.step_size(steps),
        })
    }

    pub fn constant(sys: &ControlSystem<T>, steps: usize, u: &[T]) -> Result<Self> {
        let values = (0..steps).flat_map(|_| u.iter().copied()).collect();
        Self::new(sys, steps, values)
    }

    /// Builds a sequence from values already known to be admissible.
    pub(crate) fn from_raw(values: Vec<T>, dim_u: usize, steps: usize, h: T) -> Self {
        Self {
            values,
            dim_u,
            steps,
            h,
        }
    }

    pub fn steps(&self) -> usize {
        self.steps
    }
    pub fn h(&self) -> T {
        self.h
    }
    pub fn dim_u(&self) -> usize {
        self.dim_u
    }
    pub fn values(&self) -> &[T] {
        &self.values
    }
    pub fn control(&self, n: usize) -> &[T] {
        &self.values[n * self.dim_u..(n + 1) * self.dim_u]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Trajectory<T: Scalar> {
    pub states: Vec<Vec<T>>,
    pub h: T,
    pub steps: usize,
}

impl<T: Scalar> Trajectory<T> {
    pub fn endpoint(&self) -> &[T] {
        &self.states[self.steps]
    }
}

/// Runs `x_{n+1} = x_n + h g(t_n, x_n, u_n)` from the system's initial state.
pub fn simulate<T: Scalar>(
    sys: &ControlSystem<T>,
    controls: &ControlSequence<T>,
) -> Result<Trajectory<T>> {
    let h = controls.h();
    let steps = controls.steps();
    let mut states = Vec::with_capacity(steps + 1);
    states.push(sys.x0().to_vec());
    let mut g = vec![T::zero(); sys.dim_x()];
    for n in 0..steps {
        let t = sys.t0() + h * T::from_usize(n).unwrap_or_else(T::zero);
        let x = &states[n];
        sys.eval_into(t, x, controls.control(n), &mut g);
        let next: Vec<T> = x.iter().zip(&g).map(|(&xi, &gi)| xi + h * gi).collect();
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { step: n });
        }
        states.push(next);
    }
    Ok(Trajectory { states, h, steps })
}

/// Box region `Ω` together with the lattice spacing `ρ`; grid points are
/// `Ω ∩ ρℤᵈ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct GridSpec<T: Scalar> {
    pub rho: T,
    pub lower: Vec<T>,
    pub upper: Vec<T>,
}

pub type Index = Vec<i64>;

// Slack in lattice units when deciding whether a boundary plane of Ω carries
// grid points; absorbs rounding in `bound / ρ`.
const INDEX_SLACK: f64 = 1e-9;

impl<T: Scalar> GridSpec<T> {
    pub fn new(rho: T, lower: Vec<T>, upper: Vec<T>) -> Result<Self> {
        if !(rho > T::zero()) {
            return Err(Error::invalid(format!(
                "grid spacing must be positive, got {rho}"
            )));
        }
        if lower.len() != upper.len() {
            return Err(Error::Dimension {
                expected: lower.len(),
                got: upper.len(),
            });
        }
        if let Some(k) = (0..lower.len()).find(|&k| !(lower[k] < upper[k])) {
            return Err(Error::invalid(format!("empty region in coordinate {k}")));
        }
        Ok(Self { rho, lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    /// Same region, different spacing.
    pub fn with_rho(&self, rho: T) -> Result<Self> {
        Self::new(rho, self.lower.clone(), self.upper.clone())
    }

    /// Inclusive index range of lattice points on `axis`.
    pub fn axis_range(&self, axis: usize) -> (i64, i64) {
        let slack = T::lit(INDEX_SLACK);
        let lo = (self.lower[axis] / self.rho - slack).ceil();
        let hi = (self.upper[axis] / self.rho + slack).floor();
        (lo.to_i64().unwrap_or(0), hi.to_i64().unwrap_or(-1))
    }

    pub fn shape(&self) -> Vec<usize> {
        (0..self.dim())
            .map(|a| {
                let (lo, hi) = self.axis_range(a);
                (hi - lo + 1).max(0) as usize
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.shape().iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn point(&self, idx: &[i64]) -> Vec<T> {
        idx.iter()
            .map(|&i| T::from_i64(i).unwrap_or_else(T::zero) * self.rho)
            .collect()
    }

    pub fn contains_index(&self, idx: &[i64]) -> bool {
        idx.len() == self.dim()
            && idx.iter().enumerate().all(|(a, &i)| {
                let (lo, hi) = self.axis_range(a);
                i >= lo && i <= hi
            })
    }

    pub fn contains_point(&self, x: &[T]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(&v, (&l, &u))| v >= l && v <= u)
    }

    /// All lattice indices in row-major order (last axis fastest).
    pub fn indices(&self) -> Vec<Index> {
        let ranges: Vec<(i64, i64)> = (0..self.dim()).map(|a| self.axis_range(a)).collect();
        let mut out = Vec::with_capacity(self.len());
        if ranges.iter().any(|&(lo, hi)| hi < lo) {
            return out;
        }
        let mut cur: Vec<i64> = ranges.iter().map(|r| r.0).collect();
        loop {
            out.push(cur.clone());
            let mut a = self.dim();
            loop {
                if a == 0 {
                    return out;
                }
                a -= 1;
                if cur[a] < ranges[a].1 {
                    cur[a] += 1;
                    break;
                }
                cur[a] = ranges[a].0;
            }
        }
    }

    pub fn points(&self) -> Vec<Vec<T>> {
        self.indices().iter().map(|i| self.point(i)).collect()
    }

    /// Lattice points of `B_∞(x, ρ/2) ∩ ρℤᵈ`, without clipping to `Ω`.
    pub fn inflate(&self, x: &[T]) -> Vec<Index> {
        let half = T::half();
        let ranges: Vec<(i64, i64)> = x
            .iter()
            .map(|&v| {
                let s = v / self.rho;
                let lo = (s - half).ceil().to_i64().unwrap_or(0);
                let hi = (s + half).floor().to_i64().unwrap_or(-1);
                (lo, hi)
            })
            .collect();
        let mut out: Vec<Index> = vec![Vec::with_capacity(x.len())];
        for &(lo, hi) in &ranges {
            let mut next = Vec::with_capacity(out.len() * ((hi - lo + 1).max(0) as usize));
            for prefix in &out {
                for i in lo..=hi {
                    let mut p = prefix.clone();
                    p.push(i);
                    next.push(p);
                }
            }
            out = next;
        }
        out
    }
}

/// A finite subset of the lattice, stored as integer multi-indices so that
/// unions are exact.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct DiscreteReachSet<T: Scalar> {
    #[serde(flatten)]
    pub grid: GridSpec<T>,
    pub h: T,
    pub indices: BTreeSet<Index>,
}

impl<T: Scalar> DiscreteReachSet<T> {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Set insertion; returns whether the index was new.
    pub fn insert(&mut self, idx: Index) -> bool {
        self.indices.insert(idx)
    }

    pub fn contains(&self, idx: &[i64]) -> bool {
        self.indices.contains(idx)
    }

    pub fn points(&self) -> Vec<Vec<T>> {
        self.indices.iter().map(|i| self.grid.point(i)).collect()
    }

    /// Componentwise bounding box of the stored points.
    pub fn bounding_box(&self) -> Option<(Vec<T>, Vec<T>)> {
        let mut it = self.indices.iter();
        let first = self.grid.point(it.next()?);
        let (mut lo, mut hi) = (first.clone(), first);
        for idx in it {
            for (a, v) in self.grid.point(idx).into_iter().enumerate() {
                lo[a] = lo[a].min(v);
                hi[a] = hi[a].max(v);
            }
        }
        Some((lo, hi))
    }
}

/// Uniform lattice over the control box with `samples` points per axis
/// (the midpoint when `samples == 1`).
pub fn control_lattice<T: Scalar>(sys: &ControlSystem<T>, samples: usize) -> Vec<Vec<T>> {
    let axes: Vec<Vec<T>> = sys
        .u_lower()
        .iter()
        .zip(sys.u_upper())
        .map(|(&l, &u)| {
            if samples <= 1 {
                vec![(l + u) * T::half()]
            } else {
                let d = T::from_usize(samples - 1).unwrap_or_else(T::one);
                (0..samples)
                    .map(|k| {
                        if k + 1 == samples {
                            u
                        } else {
                            l + (u - l) * T::from_usize(k).unwrap_or_else(T::zero) / d
                        }
                    })
                    .collect()
            }
        })
        .collect();
    let mut out: Vec<Vec<T>> = vec![Vec::new()];
    for axis in &axes {
        out = out
            .iter()
            .flat_map(|p| {
                axis.iter().map(move |&v| {
                    let mut q = p.clone();
                    q.push(v);
                    q
                })
            })
            .collect();
    }
    out
}

/// Number of Euler steps for step size `h`; `(T − t0)/h` must be a positive
/// integer up to rounding.
pub fn steps_for<T: Scalar>(sys: &ControlSystem<T>, h: T) -> Result<usize> {
    if !(h > T::zero()) {
        return Err(Error::invalid(format!(
            "step size must be positive, got {h}"
        )));
    }
    let ratio = (sys.t_final() - sys.t0()) / h;
    let n = ratio.round();
    if n < T::one() || (ratio - n).abs() > T::lit(1e-6) * n.max(T::one()) {
        return Err(Error::invalid(format!(
            "horizon {} is not a positive multiple of h = {h}",
            sys.t_final() - sys.t0()
        )));
    }
    Ok(n.to_usize().unwrap_or(0))
}

/// Fully discrete set-valued Euler scheme
/// `R_{n+1} = ⋃_{x ∈ R_n} B_∞(x + h G(t_n, x), ρ/2) ∩ ρℤᵈ`,
/// with `G(t_n, x)` sampled on a uniform control lattice.
pub fn euler_reach_reference<T: Scalar>(
    sys: &ControlSystem<T>,
    grid: &GridSpec<T>,
    h: T,
    control_samples: usize,
) -> Result<DiscreteReachSet<T>> {
    if control_samples == 0 {
        return Err(Error::invalid("control_samples must be positive"));
    }
    if grid.dim() != sys.dim_x() {
        return Err(Error::Dimension {
            expected: sys.dim_x(),
            got: grid.dim(),
        });
    }
    let steps = steps_for(sys, h)?;
    let controls = control_lattice(sys, control_samples);

    let mut current: BTreeSet<Index> = BTreeSet::new();
    for idx in grid.inflate(sys.x0()) {
        check_inside(grid, &idx, sys.x0())?;
        current.insert(idx);
    }

    for n in 0..steps {
        let t = sys.t0() + h * T::from_usize(n).unwrap_or_else(T::zero);
        let from: Vec<&Index> = current.iter().collect();
        let images: Vec<Vec<Index>> = from
            .par_iter()
            .map(|idx| {
                let x = grid.point(idx);
                let mut g = vec![T::zero(); x.len()];
                let mut found = Vec::with_capacity(controls.len());
                for u in &controls {
                    sys.eval_into(t, &x, u, &mut g);
                    let y: Vec<T> = x.iter().zip(&g).map(|(&xi, &gi)| xi + h * gi).collect();
                    if y.iter().any(|v| !v.is_finite()) {
                        return Err(Error::Divergence { step: n });
                    }
                    for j in grid.inflate(&y) {
                        check_inside(grid, &j, &y)?;
                        found.push(j);
                    }
                }
                Ok(found)
            })
            .collect::<Result<_>>()?;
        current = images.into_iter().flatten().collect();
    }

    Ok(DiscreteReachSet {
        grid: grid.clone(),
        h,
        indices: current,
    })
}

fn check_inside<T: Scalar>(grid: &GridSpec<T>, idx: &[i64], y: &[T]) -> Result<()> {
    if grid.contains_index(idx) && grid.contains_point(y) {
        Ok(())
    } else {
        Err(clipping(grid, y))
    }
}

/// Drift-free counterpart of [`euler_reach_reference`] used for reference sets.
///
/// Exact Euler states `x + h g(t_n, x, u)` are propagated without rounding to
/// the lattice. After every step the states are thinned to one representative
/// per cell of the sub-lattice `(ρ/refine)ℤᵈ`, keeping the first in (cell,
/// generation order). The result holds the lattice points of `grid` whose
/// box `B_∞(·, ρ/2)` contains a final representative.
pub fn euler_reach_sampled<T: Scalar>(
    sys: &ControlSystem<T>,
    grid: &GridSpec<T>,
    h: T,
    control_samples: usize,
    refine: usize,
) -> Result<DiscreteReachSet<T>> {
    if control_samples == 0 || refine == 0 {
        return Err(Error::invalid(
            "control_samples and refine must be positive",
        ));
    }
    let d = sys.dim_x();
    if grid.dim() != d {
        return Err(Error::Dimension {
            expected: d,
            got: grid.dim(),
        });
    }
    if d > 4 {
        return Err(Error::invalid(
            "sampled reference supports at most four state dimensions",
        ));
    }
    let steps = steps_for(sys, h)?;
    let controls = control_lattice(sys, control_samples);
    let sub = grid.rho / T::from_usize(refine).unwrap_or_else(T::one);
    let key = |y: &[T]| -> u128 {
        y.iter().fold(0u128, |acc, &v| {
            let i = (v / sub).round().to_i64().unwrap_or(0);
            (acc << 32) | u128::from((i + (1i64 << 31)) as u32)
        })
    };

    let mut reps: Vec<T> = sys.x0().to_vec();
    if !grid.contains_point(sys.x0()) {
        return Err(clipping(grid, sys.x0()));
    }
    for n in 0..steps {
        let t = sys.t0() + h * T::from_usize(n).unwrap_or_else(T::zero);
        let images: Vec<(u128, Vec<T>)> = reps
            .par_chunks(d)
            .flat_map_iter(|x| {
                let mut g = vec![T::zero(); d];
                controls
                    .iter()
                    .map(|u| {
                        sys.eval_into(t, x, u, &mut g);
                        let y: Vec<T> = x.iter().zip(&g).map(|(&xi, &gi)| xi + h * gi).collect();
                        (key(&y), y)
                    })
                    .collect::<Vec<_>>()
            })
            .collect();
        if let Some((_, y)) = images.iter().find(|(_, y)| !grid.contains_point(y)) {
            if y.iter().any(|v| !v.is_finite()) {
                return Err(Error::Divergence { step: n });
            }
            return Err(clipping(grid, y));
        }
        let mut order: Vec<(u128, usize)> = images
            .iter()
            .enumerate()
            .map(|(i, (k, _))| (*k, i))
            .collect();
        order.par_sort_unstable();
        order.dedup_by_key(|e| e.0);
        reps = order
            .iter()
            .flat_map(|&(_, i)| images[i].1.iter().copied())
            .collect();
    }

    let mut indices = BTreeSet::new();
    for x in reps.chunks(d) {
        indices.extend(
            grid.inflate(x)
                .into_iter()
                .filter(|i| grid.contains_index(i)),
        );
    }
    Ok(DiscreteReachSet {
        grid: grid.clone(),
        h,
        indices,
    })
}

fn clipping<T: Scalar>(grid: &GridSpec<T>, y: &[T]) -> Error {
    Error::BoundaryClipping {
        point: y.iter().map(|v| v.as_f64()).collect(),
        lower: grid.lower.iter().map(|v| v.as_f64()).collect(),
        upper: grid.upper.iter().map(|v| v.as_f64()).collect(),
    }
}

/// Retries `build` on boxes centred at `x0` with half-width 2, 4, 8, …
/// until no Euler image escapes.
fn on_growing_region<T: Scalar>(
    sys: &ControlSystem<T>,
    rho: T,
    build: impl Fn(&GridSpec<T>) -> Result<DiscreteReachSet<T>>,
) -> Result<DiscreteReachSet<T>> {
    let mut half_width = T::two();
    for _ in 0..12 {
        let lower = sys.x0().iter().map(|&c| c - half_width).collect();
        let upper = sys.x0().iter().map(|&c| c + half_width).collect();
        let grid = GridSpec::new(rho, lower, upper)?;
        match build(&grid) {
            Err(Error::BoundaryClipping { .. }) => half_width = half_width * T::two(),
            other => return other,
        }
    }
    Err(Error::invalid(
        "reachable set does not fit in any tried region",
    ))
}

/// [`euler_reach_reference`] on an automatically sized region.
pub fn euler_reach_reference_auto<T: Scalar>(
    sys: &ControlSystem<T>,
    rho: T,
    h: T,
    control_samples: usize,
) -> Result<DiscreteReachSet<T>> {
    on_growing_region(sys, rho, |g| {
        euler_reach_reference(sys, g, h, control_samples)
    })
}

/// [`euler_reach_sampled`] on an automatically sized region.
pub fn euler_reach_sampled_auto<T: Scalar>(
    sys: &ControlSystem<T>,
    rho: T,
    h: T,
    control_samples: usize,
    refine: usize,
) -> Result<DiscreteReachSet<T>> {
    on_growing_region(sys, rho, |g| {
        euler_reach_sampled(sys, g, h, control_samples, refine)
    })
}
