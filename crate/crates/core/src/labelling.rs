//! Conversion of a distance field into a three-class training set.
//!
//! Every grid point with `θ(z) ≤ ε` becomes an interior sample. Any other grid
//! point contributes itself as an exterior sample followed by its Mayer
//! endpoint `x*(z)` as a boundary sample. Points whose ball was suppressed by
//! ball-checking keep only the boundary endpoint.

use serde::{Deserialize, Serialize};

use crate::dfog::DistanceField;
use crate::error::{Error, Result};
use crate::scalar::{dist_sq, Scalar};

pub const DEFAULT_EPSILON: f64 = 1e-6;

/// Points closer than this (Euclidean) are treated as the same sample.
pub const DEDUP_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Interior,
    Exterior,
    Boundary,
}

impl Label {
    /// `+1` for interior and boundary samples, `-1` for exterior ones.
    pub fn sign<T: Scalar>(self) -> T {
        match self {
            Label::Exterior => -T::one(),
            Label::Interior | Label::Boundary => T::one(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct TrainingSet<T: Scalar> {
    pub points: Vec<Vec<T>>,
    pub interior: Vec<usize>,
    pub exterior: Vec<usize>,
    pub boundary: Vec<usize>,
    pub epsilon: T,
}

impl<T: Scalar> TrainingSet<T> {
    /// Builds a set from points and their labels, in order.
    pub fn from_labelled(points: Vec<Vec<T>>, labels: &[Label], epsilon: T) -> Result<Self> {
        if points.len() != labels.len() {
            return Err(Error::Dimension {
                expected: points.len(),
                got: labels.len(),
            });
        }
        if let Some(d) = points.first().map(Vec::len) {
            if let Some(bad) = points.iter().find(|p| p.len() != d) {
                return Err(Error::Dimension {
                    expected: d,
                    got: bad.len(),
                });
            }
        }
        let mut set = Self {
            points,
            interior: Vec::new(),
            exterior: Vec::new(),
            boundary: Vec::new(),
            epsilon,
        };
        for (i, l) in labels.iter().enumerate() {
            set.class_mut(*l).push(i);
        }
        Ok(set)
    }

    fn class_mut(&mut self, l: Label) -> &mut Vec<usize> {
        match l {
            Label::Interior => &mut self.interior,
            Label::Exterior => &mut self.exterior,
            Label::Boundary => &mut self.boundary,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.first().map_or(0, Vec::len)
    }

    /// Per-point labels, in point order.
    pub fn labels(&self) -> Vec<Label> {
        let mut out = vec![Label::Interior; self.len()];
        for &i in &self.exterior {
            out[i] = Label::Exterior;
        }
        for &i in &self.boundary {
            out[i] = Label::Boundary;
        }
        out
    }

    /// Per-point signs `y_i`.
    pub fn signs(&self) -> Vec<T> {
        self.labels().into_iter().map(Label::sign).collect()
    }

    /// Checks that the three index lists partition `0..len` without overlap.
    pub fn validate(&self) -> Result<()> {
        let mut seen = vec![false; self.len()];
        for &i in self
            .interior
            .iter()
            .chain(&self.exterior)
            .chain(&self.boundary)
        {
            match seen.get_mut(i) {
                Some(s) if !*s => *s = true,
                Some(_) => return Err(Error::invalid(format!("index {i} appears in two classes"))),
                None => return Err(Error::invalid(format!("index {i} out of range"))),
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::invalid("class lists do not cover every point"));
        }
        Ok(())
    }
}

/// Labels the field in grid order. Later samples lying within [`DEDUP_TOL`]
/// of an earlier one are dropped.
pub fn label<T: Scalar>(field: &DistanceField<T>, epsilon: T) -> Result<TrainingSet<T>> {
    label_with(field, epsilon, T::lit(DEDUP_TOL))
}

/// Like [`label`], but also drops a sample lying within `min_separation` of an
/// earlier sample with the same label.
///
/// Mayer endpoints of neighbouring grid points often land a fraction of `ρ`
/// apart on flat parts of the boundary. Such clusters make the kernel matrix
/// numerically singular for small `σ`.
pub fn label_with<T: Scalar>(
    field: &DistanceField<T>,
    epsilon: T,
    min_separation: T,
) -> Result<TrainingSet<T>> {
    if !(epsilon > T::zero()) {
        return Err(Error::invalid("epsilon must be positive"));
    }
    if !(min_separation >= T::zero()) {
        return Err(Error::invalid("min_separation must be nonnegative"));
    }
    let mut points: Vec<Vec<T>> = Vec::with_capacity(2 * field.len());
    let mut labels = Vec::with_capacity(2 * field.len());
    let tol_sq = T::lit(DEDUP_TOL * DEDUP_TOL);
    let sep_sq = min_separation * min_separation;
    let mut push = |p: &[T], l: Label| {
        let clash = points.iter().zip(&labels).any(|(q, &lq)| {
            let d = dist_sq(q, p);
            d <= tol_sq || (lq == l && d <= sep_sq)
        });
        if !clash {
            points.push(p.to_vec());
            labels.push(l);
        }
    };
    for (k, r) in field.results.iter().enumerate() {
        if r.theta <= epsilon {
            push(&r.z, Label::Interior);
        } else {
            if !field.is_suppressed(k) {
                push(&r.z, Label::Exterior);
            }
            push(&r.x_star, Label::Boundary);
        }
    }
    TrainingSet::from_labelled(points, &labels, epsilon)
}
