//! Point-set distances, Hausdorff distances and rasterization of the two
//! set representations onto a lattice.

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dfog::{dfog_membership, DistanceField};
use crate::discretization::{DiscreteReachSet, GridSpec};
use crate::error::{Error, Result};
use crate::scalar::{dist_sq, Scalar};
use crate::svm::SvmModel;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct PointSet<T: Scalar> {
    pub points: Vec<Vec<T>>,
}

impl<T: Scalar> PointSet<T> {
    pub fn new(points: Vec<Vec<T>>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.points.first().map(Vec::len)
    }

    /// Writes one point per row under a header `x1,…,xd`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let d = self.dim().unwrap_or(0);
        w.write_record((1..=d).map(|k| format!("x{k}")))?;
        for p in &self.points {
            w.write_record(p.iter().map(|v| v.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let mut points = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let p = rec
                .iter()
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map(T::lit)
                        .map_err(|e| Error::invalid(format!("bad coordinate `{s}`: {e}")))
                })
                .collect::<Result<Vec<T>>>()?;
            points.push(p);
        }
        Ok(Self { points })
    }
}

impl<T: Scalar> From<&DiscreteReachSet<T>> for PointSet<T> {
    fn from(r: &DiscreteReachSet<T>) -> Self {
        Self::new(r.points())
    }
}

pub fn dist_point_set<T: Scalar>(x: &[T], a: &PointSet<T>) -> Result<T> {
    if a.is_empty() {
        return Err(Error::EmptySet);
    }
    Ok(a.points
        .iter()
        .map(|p| dist_sq(x, p))
        .fold(T::infinity(), T::min)
        .sqrt())
}

/// One-sided distance `sup_{a∈A} dist(a, B)`.
///
/// Each row stops scanning `B` once it finds a point closer than the running
/// maximum of its worker, since such a row cannot raise the result.
pub fn semi_distance<T: Scalar>(a: &PointSet<T>, b: &PointSet<T>) -> Result<T> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySet);
    }
    let worst_sq = a
        .points
        .par_iter()
        .fold(
            || T::zero(),
            |best, p| {
                let mut row = T::infinity();
                for q in &b.points {
                    row = row.min(dist_sq(p, q));
                    if row <= best {
                        return best;
                    }
                }
                best.max(row)
            },
        )
        .reduce(T::zero, T::max);
    Ok(worst_sq.sqrt())
}

pub fn hausdorff<T: Scalar>(a: &PointSet<T>, b: &PointSet<T>) -> Result<T> {
    Ok(semi_distance(a, b)?.max(semi_distance(b, a)?))
}

/// Lattice points the model classifies as reachable.
#[derive(Clone, Debug, PartialEq)]
pub struct Sublevel<T: Scalar> {
    pub set: PointSet<T>,
    /// Set when no lattice point passed, which signals a degenerate model.
    pub degenerate: bool,
}

pub fn sublevel_pointset<T: Scalar>(model: &SvmModel<T>, grid: &GridSpec<T>) -> Sublevel<T> {
    let points: Vec<Vec<T>> = grid
        .points()
        .into_par_iter()
        .filter(|x| model.classify(x))
        .collect();
    Sublevel {
        degenerate: points.is_empty(),
        set: PointSet::new(points),
    }
}

pub fn dfog_pointset<T: Scalar>(field: &DistanceField<T>, grid: &GridSpec<T>) -> PointSet<T> {
    PointSet::new(
        grid.points()
            .into_par_iter()
            .filter(|x| dfog_membership(field, x))
            .collect(),
    )
}

/// Keeps the points of `set` that lie in the region of `grid`.
pub fn restrict<T: Scalar>(set: &PointSet<T>, grid: &GridSpec<T>) -> PointSet<T> {
    PointSet::new(
        set.points
            .iter()
            .filter(|p| grid.contains_point(p))
            .cloned()
            .collect(),
    )
}
