//! Exhaustive solver for small instances of the three-label dual.
//!
//! Every coordinate is either fixed at a finite bound of its box or free. For
//! each such pattern the equality-constrained stationarity system on the
//! free coordinates is solved directly. The smallest objective among
//! box-feasible pattern solutions is the exact optimum of the convex dual.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reachkit::labelling::Label;

#[derive(Clone, Debug)]
pub struct Instance {
    pub points: Vec<Vec<f64>>,
    pub labels: Vec<Label>,
    pub sigma: f64,
    pub c1: f64,
    pub c2: f64,
}

#[derive(Clone, Debug)]
pub struct DualSolution {
    pub alpha: Vec<f64>,
    pub b: f64,
    pub objective: f64,
}

fn y(l: Label) -> f64 {
    if l == Label::Exterior {
        -1.0
    } else {
        1.0
    }
}

fn lin(l: Label) -> f64 {
    if l == Label::Boundary {
        0.0
    } else {
        1.0
    }
}

impl Instance {
    pub fn random(seed: u64, m: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let points = (0..m)
            .map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
            .collect();
        let mut labels: Vec<Label> = vec![Label::Interior, Label::Exterior, Label::Boundary];
        while labels.len() < m {
            labels.push(match rng.gen_range(0..3) {
                0 => Label::Interior,
                1 => Label::Exterior,
                _ => Label::Boundary,
            });
        }
        for i in (1..m).rev() {
            let j = rng.gen_range(0..=i);
            labels.swap(i, j);
        }
        Self {
            points,
            labels,
            sigma: rng.gen_range(0.3..1.5),
            c1: rng.gen_range(0.5..5.0),
            c2: rng.gen_range(0.5..5.0),
        }
    }

    pub fn kernel(&self, a: &[f64], b: &[f64]) -> f64 {
        let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        (-d / self.sigma).exp()
    }

    pub fn q(&self) -> DMatrix<f64> {
        let m = self.points.len();
        DMatrix::from_fn(m, m, |i, j| {
            y(self.labels[i]) * y(self.labels[j]) * self.kernel(&self.points[i], &self.points[j])
        })
    }

    fn finite_bounds(&self, i: usize) -> Vec<f64> {
        match self.labels[i] {
            Label::Interior => vec![0.0],
            Label::Exterior => vec![0.0, self.c1],
            Label::Boundary => vec![-self.c2],
        }
    }

    fn feasible(&self, i: usize, a: f64) -> bool {
        let tol = 1e-12;
        match self.labels[i] {
            Label::Interior => a >= -tol,
            Label::Exterior => a >= -tol && a <= self.c1 + tol,
            Label::Boundary => a >= -self.c2 - tol,
        }
    }

    pub fn objective(&self, q: &DMatrix<f64>, alpha: &[f64]) -> f64 {
        let a = DVector::from_column_slice(alpha);
        0.5 * a.dot(&(q * &a))
            - (0..alpha.len())
                .map(|i| lin(self.labels[i]) * alpha[i])
                .sum::<f64>()
    }

    pub fn decision(&self, sol: &DualSolution, x: &[f64]) -> f64 {
        (0..self.points.len())
            .map(|i| y(self.labels[i]) * sol.alpha[i] * self.kernel(&self.points[i], x))
            .sum::<f64>()
            + sol.b
    }

    pub fn solve(&self) -> DualSolution {
        let m = self.points.len();
        let q = self.q();
        let choices: Vec<Vec<Option<f64>>> = (0..m)
            .map(|i| {
                let mut c: Vec<Option<f64>> = self.finite_bounds(i).into_iter().map(Some).collect();
                c.push(None);
                c
            })
            .collect();
        let mut pick = vec![0usize; m];
        let mut best: Option<DualSolution> = None;
        loop {
            if let Some(sol) = self.solve_pattern(&q, &choices, &pick) {
                if best.as_ref().is_none_or(|b| sol.objective < b.objective) {
                    best = Some(sol);
                }
            }
            let mut k = 0;
            loop {
                if k == m {
                    return best.expect("some pattern is feasible");
                }
                pick[k] += 1;
                if pick[k] < choices[k].len() {
                    break;
                }
                pick[k] = 0;
                k += 1;
            }
        }
    }

    fn solve_pattern(
        &self,
        q: &DMatrix<f64>,
        choices: &[Vec<Option<f64>>],
        pick: &[usize],
    ) -> Option<DualSolution> {
        let m = self.points.len();
        let mut alpha = vec![0.0; m];
        let mut free = Vec::new();
        for i in 0..m {
            match choices[i][pick[i]] {
                Some(v) => alpha[i] = v,
                None => free.push(i),
            }
        }
        let fixed_sum: f64 = (0..m)
            .filter(|i| !free.contains(i))
            .map(|i| y(self.labels[i]) * alpha[i])
            .sum();
        if free.is_empty() {
            if fixed_sum.abs() > 1e-12 {
                return None;
            }
            return Some(DualSolution {
                objective: self.objective(q, &alpha),
                alpha,
                b: f64::NAN,
            });
        }
        let n = free.len() + 1;
        let mut a = DMatrix::zeros(n, n);
        let mut rhs = DVector::zeros(n);
        rhs[0] = -fixed_sum;
        for (r, &i) in free.iter().enumerate() {
            a[(0, r + 1)] = y(self.labels[i]);
            a[(r + 1, 0)] = y(self.labels[i]);
            for (s, &j) in free.iter().enumerate() {
                a[(r + 1, s + 1)] = q[(i, j)];
            }
            let fixed: f64 = (0..m)
                .filter(|j| !free.contains(j))
                .map(|j| q[(i, j)] * alpha[j])
                .sum();
            rhs[r + 1] = lin(self.labels[i]) - fixed;
        }
        let x = a.lu().solve(&rhs)?;
        for (r, &i) in free.iter().enumerate() {
            alpha[i] = x[r + 1];
            if !self.feasible(i, alpha[i]) {
                return None;
            }
        }
        Some(DualSolution {
            objective: self.objective(q, &alpha),
            alpha,
            b: x[0],
        })
    }
}
