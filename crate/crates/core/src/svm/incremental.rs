//! Adiabatic insertion and removal of single points.
//!
//! The margin set `S` holds the points whose margin is pinned at zero. While
//! the coefficient `α_c` of the point being trained moves, the coefficients in
//! `S` and the offset follow the sensitivities `β = −R [y_c; Q_Sc]`, where `R`
//! is the inverse of the bordered matrix `[[0, y_Sᵀ], [y_S, Q_SS]]`, and every
//! other margin moves at rate `γ_i`. A step ends at the first event: the
//! candidate reaches its margin or its bound, a member of `S` reaches a bound,
//! or an outside margin reaches zero. `R` is kept up to date by rank-one
//! updates.

use rayon::prelude::*;

use super::{SvmModel, ALPHA_CLIP, OFFSET_TOL, REFRESH_EVERY};
use crate::error::{Error, Result};
use crate::labelling::Label;
use crate::linalg::{Lu, Matrix};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Mode {
    /// Move `α_c` until the candidate satisfies its own KKT condition.
    Increment,
    /// Move `α_c` to zero.
    Decrement,
}

#[derive(Clone, Copy, Debug)]
enum Event<T> {
    OwnMargin,
    OwnBound(T),
    SupportBound(usize, T),
    Margin(usize),
}

fn tiny<T: Scalar>() -> T {
    T::lit(1e-12).max(T::epsilon() * T::lit(64.0))
}

fn sign<T: Scalar>(v: T) -> T {
    if v < T::zero() {
        -T::one()
    } else {
        T::one()
    }
}

fn gather<U: Clone>(v: &[U], src: &[usize]) -> Vec<U> {
    src.iter().map(|&s| v[s].clone()).collect()
}

impl<T: Scalar> SvmModel<T> {
    /// Appends `(x, label)` with `α = 0` and trains it in. Returns its index.
    pub fn insert(&mut self, x: Vec<T>, label: Label) -> Result<usize> {
        if let Some(p) = self.points.first() {
            if p.len() != x.len() {
                return Err(Error::Dimension {
                    expected: p.len(),
                    got: x.len(),
                });
            }
        }
        let c = self.len();
        let yc = label.sign::<T>();
        let row: Vec<T> = self
            .points
            .iter()
            .zip(&self.labels)
            .map(|(p, l)| l.sign::<T>() * yc * self.kernel.eval(p, &x))
            .collect();
        for (qi, &v) in self.q.iter_mut().zip(&row) {
            qi.push(v);
        }
        let gc = row.iter().zip(&self.alpha).map(|(&q, &a)| q * a).sum::<T>() + yc * self.b;
        let mut own = row;
        own.push(self.kernel.eval(&x, &x));
        self.q.push(own);
        self.points.push(x);
        self.labels.push(label);
        self.alpha.push(T::zero());
        self.in_support.push(false);
        self.g.push(gc - self.linear(c));
        self.train_in(c)?;
        Ok(c)
    }

    /// Trains point `index` out and deletes it. Later indices shift down by one.
    pub fn remove(&mut self, index: usize) -> Result<()> {
        if index >= self.len() {
            return Err(Error::invalid(format!(
                "index {index} out of range for {} points",
                self.len()
            )));
        }
        if self.in_support[index] {
            self.remove_support(index);
        }
        if self.alpha[index] != T::zero() {
            let d = -sign(self.alpha[index]);
            self.run(index, d, Mode::Decrement)?;
        }
        self.delete(index);
        Ok(())
    }

    fn train_in(&mut self, c: usize) -> Result<()> {
        let gc = self.g[c];
        let tol = tiny::<T>();
        match self.labels[c] {
            Label::Interior | Label::Exterior if gc >= -tol => return Ok(()),
            Label::Boundary if gc.abs() <= tol => {
                self.g[c] = T::zero();
                return match self.add_support(c) {
                    Ok(()) | Err(Error::Singular { .. }) => Ok(()),
                    Err(e) => Err(e),
                };
            }
            _ => {}
        }
        let d = -sign(gc);
        self.run(c, d, Mode::Increment)
    }

    /// Time until a non-margin point at a bound would start violating its KKT
    /// condition, given the rate of change of its margin.
    fn cross_time(&self, j: usize, rate: T) -> Option<T> {
        let (lo, hi) = self.bounds(j);
        let a = self.alpha[j];
        let tol = tiny::<T>();
        if a <= lo && rate < -tol {
            Some(self.g[j].max(T::zero()) / -rate)
        } else if a >= hi && rate > tol {
            Some((-self.g[j]).max(T::zero()) / rate)
        } else {
            None
        }
    }

    fn run(&mut self, c: usize, d: T, mode: Mode) -> Result<()> {
        let limit = 10 * self.len().max(1);
        let mut count = 0usize;
        // Points whose column is numerically dependent on the margin set stay
        // outside it for the rest of this run.
        let mut blocked = Vec::new();
        loop {
            count += 1;
            if count > limit {
                return Err(Error::Cycling {
                    migrations: count - 1,
                    diagnostic: format!(
                        "point {c} ({:?}), alpha_c = {}, g_c = {}, |S| = {}, m = {}",
                        self.labels[c],
                        self.alpha[c],
                        self.g[c],
                        self.support.len(),
                        self.len()
                    ),
                });
            }
            if self.target_reached(c, d, mode) {
                return Ok(());
            }
            let done = if self.support.is_empty() {
                self.offset_step(c, d, mode)?
            } else {
                self.coupled_step(c, d, mode, &mut blocked)?
            };
            if done {
                return Ok(());
            }
            self.migrations += 1;
            if self.migrations.is_multiple_of(REFRESH_EVERY) {
                self.refresh()?;
            }
        }
    }

    fn target_reached(&self, c: usize, d: T, mode: Mode) -> bool {
        let (lo, hi) = self.bounds(c);
        let a = self.alpha[c];
        match mode {
            Mode::Decrement => a == T::zero(),
            Mode::Increment => (d > T::zero() && a >= hi) || (d < T::zero() && a <= lo),
        }
    }

    fn pick(best: &mut Option<(T, usize, Event<T>)>, t: T, idx: usize, ev: Event<T>) {
        let better = match best {
            None => true,
            Some((bt, bi, _)) => t < *bt || (t == *bt && idx < *bi),
        };
        if better {
            *best = Some((t, idx, ev));
        }
    }

    /// With an empty margin set `α_c` cannot move, so only `b` does, in the
    /// direction that lets the next point entering `S` absorb the change of `α_c`.
    fn offset_step(&mut self, c: usize, d: T, mode: Mode) -> Result<bool> {
        let sb = self.y(c) * d;
        let mut best = None;
        if mode == Mode::Increment {
            Self::pick(&mut best, self.g[c].abs(), c, Event::OwnMargin);
        }
        for j in (0..self.len()).filter(|&j| j != c) {
            if let Some(t) = self.cross_time(j, self.y(j) * sb) {
                Self::pick(&mut best, t, j, Event::Margin(j));
            }
        }
        let Some((t, _, ev)) = best else {
            return Err(Error::NoStep {
                index: c,
                reason: "no margin can enter the support set while only the offset moves".into(),
            });
        };
        let db = sb * t;
        self.b += db;
        for i in 0..self.len() {
            let y = self.y(i);
            self.g[i] += y * db;
        }
        match ev {
            Event::OwnMargin => {
                self.g[c] = T::zero();
                self.add_support(c)?;
                Ok(true)
            }
            Event::Margin(j) => {
                self.g[j] = T::zero();
                self.add_support(j)?;
                Ok(false)
            }
            _ => unreachable!(),
        }
    }

    fn coupled_step(
        &mut self,
        c: usize,
        d: T,
        mode: Mode,
        blocked: &mut Vec<usize>,
    ) -> Result<bool> {
        let m = self.len();
        let tol = tiny::<T>();
        let beta = self.coefficient_sensitivities(c);
        let gamma = self.margin_sensitivities(c, &beta);
        let (lo_c, hi_c) = self.bounds(c);
        let mut best = None;

        match mode {
            Mode::Increment => {
                if gamma[c] > tol {
                    Self::pick(&mut best, self.g[c].abs() / gamma[c], c, Event::OwnMargin);
                }
                if d > T::zero() && hi_c.is_finite() {
                    Self::pick(
                        &mut best,
                        (hi_c - self.alpha[c]).max(T::zero()),
                        c,
                        Event::OwnBound(hi_c),
                    );
                } else if d < T::zero() {
                    Self::pick(
                        &mut best,
                        (self.alpha[c] - lo_c).max(T::zero()),
                        c,
                        Event::OwnBound(lo_c),
                    );
                }
            }
            Mode::Decrement => {
                Self::pick(
                    &mut best,
                    self.alpha[c].abs(),
                    c,
                    Event::OwnBound(T::zero()),
                );
            }
        }
        for (pos, &j) in self.support.iter().enumerate() {
            let rate = beta[pos + 1] * d;
            let (lo, hi) = self.bounds(j);
            if rate > tol && hi.is_finite() {
                Self::pick(
                    &mut best,
                    (hi - self.alpha[j]).max(T::zero()) / rate,
                    j,
                    Event::SupportBound(j, hi),
                );
            } else if rate < -tol {
                Self::pick(
                    &mut best,
                    (self.alpha[j] - lo).max(T::zero()) / -rate,
                    j,
                    Event::SupportBound(j, lo),
                );
            }
        }
        for j in (0..m).filter(|&j| j != c && !self.in_support[j] && !blocked.contains(&j)) {
            if let Some(t) = self.cross_time(j, gamma[j] * d) {
                Self::pick(&mut best, t, j, Event::Margin(j));
            }
        }
        let Some((t, _, ev)) = best else {
            return Err(Error::NoStep {
                index: c,
                reason: "coefficient can grow without bound".into(),
            });
        };

        let da = d * t;
        self.alpha[c] += da;
        self.b += beta[0] * da;
        for (pos, &j) in self.support.iter().enumerate() {
            self.alpha[j] += beta[pos + 1] * da;
        }
        for i in (0..m).filter(|&i| !self.in_support[i]) {
            self.g[i] += gamma[i] * da;
        }
        for k in 0..self.support.len() {
            let j = self.support[k];
            self.snap(j);
        }
        self.snap(c);
        if mode == Mode::Decrement && self.alpha[c].abs() <= T::lit(ALPHA_CLIP) {
            self.alpha[c] = T::zero();
        }

        match ev {
            Event::OwnMargin => {
                self.g[c] = T::zero();
                match self.add_support(c) {
                    Ok(()) | Err(Error::Singular { .. }) => Ok(true),
                    Err(e) => Err(e),
                }
            }
            Event::OwnBound(v) => {
                self.alpha[c] = v;
                Ok(true)
            }
            Event::SupportBound(j, v) => {
                self.alpha[j] = v;
                self.remove_support(j);
                Ok(false)
            }
            Event::Margin(j) => {
                self.g[j] = T::zero();
                match self.add_support(j) {
                    Ok(()) => {}
                    Err(Error::Singular { .. }) => blocked.push(j),
                    Err(e) => return Err(e),
                }
                Ok(false)
            }
        }
    }

    fn snap(&mut self, i: usize) {
        let (lo, hi) = self.bounds(i);
        let clip = T::lit(ALPHA_CLIP);
        let a = self.alpha[i];
        if a - lo <= clip {
            self.alpha[i] = lo;
        } else if hi.is_finite() && hi - a <= clip {
            self.alpha[i] = hi;
        }
    }

    /// `[β_0, β_{s_1}, …] = −R [y_c; Q_{s_1 c}; …]`.
    fn coefficient_sensitivities(&self, c: usize) -> Vec<T> {
        let r = self.r.as_ref().expect("margin set is nonempty");
        let mut v = Vec::with_capacity(self.support.len() + 1);
        v.push(self.y(c));
        v.extend(self.support.iter().map(|&s| self.q[s][c]));
        r.mul_vec(&v).into_iter().map(|x| -x).collect()
    }

    /// `γ_i = Q_ic + Σ_S Q_is β_s + y_i β_0`, zero on the margin set.
    fn margin_sensitivities(&self, c: usize, beta: &[T]) -> Vec<T> {
        let f = |i: usize| {
            if self.in_support[i] {
                return T::zero();
            }
            let row = &self.q[i];
            row[c]
                + self
                    .support
                    .iter()
                    .zip(&beta[1..])
                    .map(|(&s, &bs)| row[s] * bs)
                    .sum::<T>()
                + self.y(i) * beta[0]
        };
        if self.len() * (self.support.len() + 1) > 50_000 {
            (0..self.len()).into_par_iter().map(f).collect()
        } else {
            (0..self.len()).map(f).collect()
        }
    }

    fn add_support(&mut self, k: usize) -> Result<()> {
        let yk = self.y(k);
        let qkk = self.q[k][k];
        let r = match self.r.take() {
            None => Matrix::from_fn(2, |i, j| match (i, j) {
                (0, 0) => -qkk,
                (1, 1) => T::zero(),
                _ => yk,
            }),
            Some(r) => {
                let mut v = Vec::with_capacity(self.support.len() + 1);
                v.push(yk);
                v.extend(self.support.iter().map(|&s| self.q[s][k]));
                let beta: Vec<T> = r.mul_vec(&v).into_iter().map(|x| -x).collect();
                let gamma = qkk + v.iter().zip(&beta).map(|(&a, &b)| a * b).sum::<T>();
                if !(gamma > tiny::<T>() * qkk.max(T::one())) {
                    self.r = Some(r);
                    return Err(Error::Singular {
                        support: self.support.len() + 1,
                    });
                }
                let n = r.dim();
                Matrix::from_fn(n + 1, |i, j| {
                    let bi = if i < n { beta[i] } else { T::one() };
                    let bj = if j < n { beta[j] } else { T::one() };
                    let base = if i < n && j < n {
                        r.get(i, j)
                    } else {
                        T::zero()
                    };
                    base + bi * bj / gamma
                })
            }
        };
        self.r = Some(r);
        self.support.push(k);
        self.in_support[k] = true;
        Ok(())
    }

    fn remove_support(&mut self, k: usize) {
        let pos = self
            .support
            .iter()
            .position(|&s| s == k)
            .expect("point is in the margin set");
        self.support.remove(pos);
        self.in_support[k] = false;
        if self.support.is_empty() {
            self.r = None;
            return;
        }
        let r = self.r.take().expect("margin set was nonempty");
        let p = pos + 1;
        let rpp = r.get(p, p);
        let n = r.dim();
        let keep: Vec<usize> = (0..n).filter(|&i| i != p).collect();
        self.r = Some(Matrix::from_fn(n - 1, |a, b| {
            let (i, j) = (keep[a], keep[b]);
            r.get(i, j) - r.get(i, p) * r.get(p, j) / rpp
        }));
    }

    fn delete(&mut self, c: usize) {
        debug_assert!(!self.in_support[c]);
        self.points.remove(c);
        self.labels.remove(c);
        self.alpha.remove(c);
        self.g.remove(c);
        self.in_support.remove(c);
        self.q.remove(c);
        for row in &mut self.q {
            row.remove(c);
        }
        for s in &mut self.support {
            if *s > c {
                *s -= 1;
            }
        }
    }

    fn recompute_margins(&mut self) {
        let g: Vec<T> = (0..self.len())
            .into_par_iter()
            .map(|i| {
                self.q[i]
                    .iter()
                    .zip(&self.alpha)
                    .map(|(&q, &a)| q * a)
                    .sum::<T>()
                    + self.y(i) * self.b
                    - self.linear(i)
            })
            .collect();
        self.g = g;
    }

    fn bordered(&self) -> Matrix<T> {
        let s = &self.support;
        Matrix::from_fn(s.len() + 1, |i, j| match (i, j) {
            (0, 0) => T::zero(),
            (0, j) => self.y(s[j - 1]),
            (i, 0) => self.y(s[i - 1]),
            (i, j) => self.q[s[i - 1]][s[j - 1]],
        })
    }

    /// Rebuilds the tracked margins and `R` from scratch.
    pub(crate) fn refresh(&mut self) -> Result<()> {
        self.recompute_margins();
        self.r = if self.support.is_empty() {
            None
        } else {
            Some(Lu::new(&self.bordered())?.inverse())
        };
        Ok(())
    }

    /// Rebuilds `Q`, margins and the margin set from `points`, `labels`,
    /// `alpha` and `b`. The margin set becomes every point strictly inside
    /// its box.
    pub(crate) fn rebuild_state(&mut self) -> Result<()> {
        let m = self.len();
        let q: Vec<Vec<T>> = (0..m)
            .into_par_iter()
            .map(|i| {
                (0..m)
                    .map(|j| {
                        self.y(i) * self.y(j) * self.kernel.eval(&self.points[i], &self.points[j])
                    })
                    .collect()
            })
            .collect();
        self.q = q;
        self.in_support = vec![false; m];
        self.support.clear();
        for i in 0..m {
            let (lo, hi) = self.bounds(i);
            if self.alpha[i] > lo && self.alpha[i] < hi {
                self.support.push(i);
                self.in_support[i] = true;
            }
        }
        self.refresh()
    }

    /// Reorders points so that new index `i` holds old index `src[i]`.
    pub(crate) fn permute(&mut self, src: &[usize]) {
        let m = self.len();
        debug_assert_eq!(src.len(), m);
        let mut dst = vec![0; m];
        for (i, &s) in src.iter().enumerate() {
            dst[s] = i;
        }
        self.points = gather(&self.points, src);
        self.labels = gather(&self.labels, src);
        self.alpha = gather(&self.alpha, src);
        self.g = gather(&self.g, src);
        self.in_support = gather(&self.in_support, src);
        self.q = src
            .iter()
            .map(|&s| src.iter().map(|&t| self.q[s][t]).collect())
            .collect();
        for s in &mut self.support {
            *s = dst[*s];
        }
    }

    /// Sets `b` to the mean of the offsets implied by the margin set.
    /// Re-solves the bordered system for `(b, α_S)` with every other
    /// coefficient held fixed, removing drift accumulated by the rank-one
    /// updates. The result is kept only if it stays inside the boxes.
    fn polish(&mut self) {
        if self.support.is_empty() {
            return;
        }
        let s = &self.support;
        let fixed: Vec<usize> = (0..self.len()).filter(|&j| !self.in_support[j]).collect();
        let mut rhs = Vec::with_capacity(s.len() + 1);
        rhs.push(-fixed.iter().map(|&j| self.y(j) * self.alpha[j]).sum::<T>());
        for &i in s {
            rhs.push(
                self.linear(i)
                    - fixed
                        .iter()
                        .map(|&j| self.q[i][j] * self.alpha[j])
                        .sum::<T>(),
            );
        }
        let Ok(lu) = Lu::new(&self.bordered()) else {
            return;
        };
        let mut x = lu.solve(&rhs);
        // One step of iterative refinement.
        let a = self.bordered();
        let r: Vec<T> = a
            .mul_vec(&x)
            .iter()
            .zip(&rhs)
            .map(|(&ax, &b)| b - ax)
            .collect();
        for (xi, di) in x.iter_mut().zip(lu.solve(&r)) {
            *xi += di;
        }
        let clip = T::lit(ALPHA_CLIP);
        let inside = s.iter().zip(&x[1..]).all(|(&i, &v)| {
            let (lo, hi) = self.bounds(i);
            v.is_finite() && v >= lo - clip && v <= hi + clip
        });
        if !(inside && x[0].is_finite()) {
            return;
        }
        self.b = x[0];
        for (&i, &v) in s.iter().zip(&x[1..]) {
            let (lo, hi) = self.bounds(i);
            self.alpha[i] = v.max(lo).min(hi);
        }
    }

    pub(crate) fn finalize_offset(&mut self) -> Result<()> {
        self.polish();
        if !self.support.is_empty() {
            let implied: Vec<T> = self
                .support
                .iter()
                .map(|&i| {
                    let qa: T = self.q[i]
                        .iter()
                        .zip(&self.alpha)
                        .map(|(&q, &a)| q * a)
                        .sum();
                    self.y(i) * (self.linear(i) - qa)
                })
                .collect();
            let lo = implied.iter().copied().fold(T::infinity(), T::min);
            let hi = implied.iter().copied().fold(T::neg_infinity(), T::max);
            let spread = hi - lo;
            if spread > T::lit(OFFSET_TOL) {
                return Err(Error::OffsetMismatch {
                    spread: spread.as_f64(),
                });
            }
            self.b = implied.iter().copied().sum::<T>()
                / T::from_usize(implied.len()).unwrap_or(T::one());
        }
        self.recompute_margins();
        Ok(())
    }
}
