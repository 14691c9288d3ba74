//! Three-label kernel SVM for reachable-set approximation.
//!
//! Interior points must satisfy `f(x) + b ≥ 1`, exterior points are pushed
//! below `−1` with an `ℓ¹` slack penalty `C1`, and boundary points are pulled
//! onto the zero level set with penalty `C2`. The dual
//!
//! ```text
//! min ½ αᵀQα − Σ_{I∪E} α_i   s.t.  Σ y_i α_i = 0,
//!     α_I ≥ 0,  0 ≤ α_E ≤ C1,  α_B ≥ −C2,       Q_ij = y_i y_j K(x_i, x_j)
//! ```
//!
//! is solved one point at a time by an incremental procedure that keeps every
//! KKT condition satisfied after each insertion or removal.

mod incremental;

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::discretization::GridSpec;
use crate::error::{Error, Result};
use crate::kernel::KernelSpec;
use crate::labelling::{Label, TrainingSet};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

/// Snap distance for dual coefficients near a box bound.
pub const ALPHA_CLIP: f64 = 1e-12;
/// Decision values down to `-CLASSIFY_TOL` count as reachable, so that
/// support vectors on the zero level set survive rounding.
pub const CLASSIFY_TOL: f64 = 1e-9;
/// Largest tolerated disagreement of the offset implied by different support vectors.
pub const OFFSET_TOL: f64 = 1e-6;
/// Margins and the inverse bordered matrix are rebuilt after this many migrations.
pub const REFRESH_EVERY: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VectorStatus {
    Support,
    Error,
    Ignored,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MarginReport<T> {
    pub g: Vec<T>,
    pub max_violation: T,
}

/// Serialised form of a model. Points live in the training set named by
/// `training_ref`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct SvmModelFile<T: Scalar> {
    pub kernel: KernelSpec<T>,
    #[serde(rename = "C1")]
    pub c1: T,
    #[serde(rename = "C2")]
    pub c2: T,
    pub alpha: Vec<T>,
    pub b: T,
    pub status: Vec<VectorStatus>,
    pub training_ref: Option<String>,
}

#[derive(Clone, Debug)]
pub struct SvmModel<T: Scalar> {
    kernel: KernelSpec<T>,
    c1: T,
    c2: T,
    points: Vec<Vec<T>>,
    labels: Vec<Label>,
    alpha: Vec<T>,
    b: T,
    /// Rows of `Q`, each as long as `points`.
    q: Vec<Vec<T>>,
    /// Tracked margins.
    g: Vec<T>,
    /// Points whose margin equality is enforced, in the order of `r`'s rows.
    support: Vec<usize>,
    in_support: Vec<bool>,
    /// Inverse of the bordered matrix `[[0, y_Sᵀ], [y_S, Q_SS]]`; `None` when
    /// the margin set is empty.
    r: Option<Matrix<T>>,
    migrations: usize,
    training_ref: Option<String>,
}

impl<T: Scalar> SvmModel<T> {
    /// An empty model.
    pub fn new(kernel: KernelSpec<T>, c1: T, c2: T) -> Result<Self> {
        kernel.validate()?;
        if !(c1 > T::zero() && c2 > T::zero() && c1.is_finite() && c2.is_finite()) {
            return Err(Error::invalid(format!(
                "C1 and C2 must be positive, got {c1}, {c2}"
            )));
        }
        Ok(Self {
            kernel,
            c1,
            c2,
            points: Vec::new(),
            labels: Vec::new(),
            alpha: Vec::new(),
            b: T::zero(),
            q: Vec::new(),
            g: Vec::new(),
            support: Vec::new(),
            in_support: Vec::new(),
            r: None,
            migrations: 0,
            training_ref: None,
        })
    }

    /// A model with prescribed coefficients and no solver history.
    pub fn from_coefficients(
        kernel: KernelSpec<T>,
        c1: T,
        c2: T,
        training: &TrainingSet<T>,
        alpha: Vec<T>,
        b: T,
    ) -> Result<Self> {
        let mut model = Self::new(kernel, c1, c2)?;
        if alpha.len() != training.len() {
            return Err(Error::Dimension {
                expected: training.len(),
                got: alpha.len(),
            });
        }
        model.points = training.points.clone();
        model.labels = training.labels();
        model.alpha = alpha;
        model.b = b;
        model.rebuild_state()?;
        Ok(model)
    }

    pub fn kernel(&self) -> &KernelSpec<T> {
        &self.kernel
    }

    pub fn c1(&self) -> T {
        self.c1
    }

    pub fn c2(&self) -> T {
        self.c2
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec<T>] {
        &self.points
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn alpha(&self) -> &[T] {
        &self.alpha
    }

    pub fn b(&self) -> T {
        self.b
    }

    pub fn training_ref(&self) -> Option<&str> {
        self.training_ref.as_deref()
    }

    pub fn set_training_ref(&mut self, r: impl Into<String>) {
        self.training_ref = Some(r.into());
    }

    /// Signed expansion coefficients `a_i = y_i α_i`.
    pub fn coefficients(&self) -> Vec<T> {
        self.labels
            .iter()
            .zip(&self.alpha)
            .map(|(l, &a)| l.sign::<T>() * a)
            .collect()
    }

    pub(crate) fn bounds(&self, i: usize) -> (T, T) {
        match self.labels[i] {
            Label::Interior => (T::zero(), T::infinity()),
            Label::Exterior => (T::zero(), self.c1),
            Label::Boundary => (-self.c2, T::infinity()),
        }
    }

    /// Linear term of the dual objective for point `i`.
    pub(crate) fn linear(&self, i: usize) -> T {
        match self.labels[i] {
            Label::Interior | Label::Exterior => T::one(),
            Label::Boundary => T::zero(),
        }
    }

    pub(crate) fn y(&self, i: usize) -> T {
        self.labels[i].sign()
    }

    /// `f(x) + b`.
    pub fn decision(&self, x: &[T]) -> T {
        self.points
            .iter()
            .zip(&self.labels)
            .zip(&self.alpha)
            .filter(|(_, &a)| a != T::zero())
            .map(|((p, l), &a)| l.sign::<T>() * a * self.kernel.eval(p, x))
            .sum::<T>()
            + self.b
    }

    pub fn classify(&self, x: &[T]) -> bool {
        self.decision(x) >= -T::lit(CLASSIFY_TOL)
    }

    /// Dual objective `½ αᵀQα − Σ_{I∪E} α_i`.
    pub fn dual_objective(&self) -> T {
        let quad: T = (0..self.len())
            .map(|i| {
                self.alpha[i]
                    * (0..self.len())
                        .map(|j| self.q[i][j] * self.alpha[j])
                        .sum::<T>()
            })
            .sum();
        T::half() * quad
            - (0..self.len())
                .map(|i| self.linear(i) * self.alpha[i])
                .sum::<T>()
    }

    /// `Σ y_i α_i`.
    pub fn equality_residual(&self) -> T {
        (0..self.len()).map(|i| self.y(i) * self.alpha[i]).sum()
    }

    /// Margins recomputed from the decision function, with the largest KKT violation.
    pub fn margins(&self) -> MarginReport<T> {
        let g: Vec<T> = (0..self.len())
            .into_par_iter()
            .map(|i| self.y(i) * self.decision(&self.points[i]) - self.linear(i))
            .collect();
        let max_violation = g
            .iter()
            .enumerate()
            .map(|(i, &gi)| self.violation(i, gi))
            .fold(T::zero(), T::max);
        MarginReport { g, max_violation }
    }

    fn violation(&self, i: usize, gi: T) -> T {
        let (lo, hi) = self.bounds(i);
        let a = self.alpha[i];
        if a <= lo {
            (-gi).max(T::zero())
        } else if a >= hi {
            gi.max(T::zero())
        } else {
            gi.abs()
        }
    }

    /// Largest difference between the tracked and the recomputed margins.
    pub fn margin_drift(&self) -> T {
        self.margins()
            .g
            .iter()
            .zip(&self.g)
            .map(|(a, b)| (*a - *b).abs())
            .fold(T::zero(), T::max)
    }

    pub fn vector_status(&self, i: usize) -> VectorStatus {
        let (lo, hi) = self.bounds(i);
        let a = self.alpha[i];
        match self.labels[i] {
            Label::Exterior if a >= hi => VectorStatus::Error,
            Label::Boundary if a <= lo => VectorStatus::Error,
            Label::Interior | Label::Exterior if a <= T::zero() => VectorStatus::Ignored,
            _ => VectorStatus::Support,
        }
    }

    pub fn statuses(&self) -> Vec<VectorStatus> {
        (0..self.len()).map(|i| self.vector_status(i)).collect()
    }

    pub fn to_file(&self) -> SvmModelFile<T> {
        SvmModelFile {
            kernel: self.kernel,
            c1: self.c1,
            c2: self.c2,
            alpha: self.alpha.clone(),
            b: self.b,
            status: self.statuses(),
            training_ref: self.training_ref.clone(),
        }
    }

    /// Reattaches a saved model to its training set.
    pub fn from_file(file: SvmModelFile<T>, training: &TrainingSet<T>) -> Result<Self> {
        let mut model =
            Self::from_coefficients(file.kernel, file.c1, file.c2, training, file.alpha, file.b)?;
        model.training_ref = file.training_ref;
        Ok(model)
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer_pretty(f, &self.to_file())?;
        Ok(())
    }

    /// CSV rows `x1, …, xd, decision` over every point of `grid`.
    pub fn write_decision_grid<W: Write>(&self, grid: &GridSpec<T>, out: W) -> Result<()> {
        let points = grid.points();
        let values: Vec<T> = points.par_iter().map(|p| self.decision(p)).collect();
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = (1..=grid.dim()).map(|k| format!("x{k}")).collect();
        header.push("decision".into());
        w.write_record(&header)?;
        for (p, v) in points.iter().zip(values) {
            let mut row: Vec<String> = p.iter().map(|c| c.to_string()).collect();
            row.push(v.to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Insertion order used by [`fit`]: the first interior point, the first
/// exterior point (or boundary point if there is none), the remaining interior
/// points, then exterior and boundary points alternately. Each class keeps its
/// index order.
///
/// Seeding with a mixed pair gives the model a nonzero decision function
/// before the bulk of the interior points arrives. Otherwise they would all
/// share the same margin and enter as one large degenerate tie.
pub fn insertion_order<T: Scalar>(training: &TrainingSet<T>) -> Vec<usize> {
    let (mut e, mut b) = (training.exterior.iter(), training.boundary.iter());
    let mut order: Vec<usize> = training.interior.iter().take(1).copied().collect();
    if !order.is_empty() {
        if let Some(&first) = e.next().or_else(|| b.next()) {
            order.push(first);
        }
    }
    order.extend(training.interior.iter().skip(1));
    loop {
        match (e.next(), b.next()) {
            (None, None) => break,
            (x, y) => order.extend(x.into_iter().chain(y).copied()),
        }
    }
    order
}

/// Trains a model by inserting every training point in [`insertion_order`].
/// Coefficients in the result follow the training set's indexing.
pub fn fit<T: Scalar>(
    training: &TrainingSet<T>,
    kernel: KernelSpec<T>,
    c1: T,
    c2: T,
) -> Result<SvmModel<T>> {
    training.validate()?;
    if training.interior.is_empty() || training.exterior.len() + training.boundary.len() == 0 {
        return Err(Error::invalid(
            "training set needs an interior point and an exterior or boundary point",
        ));
    }
    let labels = training.labels();
    let order = insertion_order(training);
    let mut model = SvmModel::new(kernel, c1, c2)?;
    for &i in &order {
        model.insert(training.points[i].clone(), labels[i])?;
    }
    let mut inverse = vec![0; order.len()];
    for (pos, &i) in order.iter().enumerate() {
        inverse[i] = pos;
    }
    model.permute(&inverse);
    model.finalize_offset()?;
    Ok(model)
}

/// Returns a copy of `model` with `(x, label)` appended and trained in.
pub fn increment_point<T: Scalar>(
    model: &SvmModel<T>,
    x: Vec<T>,
    label: Label,
) -> Result<SvmModel<T>> {
    let mut out = model.clone();
    out.insert(x, label)?;
    Ok(out)
}

/// Returns a copy of `model` with point `index` trained out and deleted.
pub fn decrement_point<T: Scalar>(model: &SvmModel<T>, index: usize) -> Result<SvmModel<T>> {
    let mut out = model.clone();
    out.remove(index)?;
    Ok(out)
}
