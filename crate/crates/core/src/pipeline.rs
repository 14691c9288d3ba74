//! Experiment configuration and the ρ-sweep driver:
//! reference → distance field → labels → SVM → Hausdorff metrics.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dfog::{ball_check, build_distance_field_with, DistanceField, MayerOptions};
use crate::discretization::{euler_reach_sampled_auto, GridSpec};
use crate::error::{Error, Result};
use crate::geometry::{dfog_pointset, hausdorff, restrict, sublevel_pointset, PointSet};
use crate::kernel::KernelSpec;
use crate::labelling::{label_with, TrainingSet, DEFAULT_EPSILON};
use crate::svm::{fit, SvmModel};
use crate::systems::{builtin, ControlSystem};

pub const SUMMARY_FILE: &str = "summary.csv";
pub const METRICS_FILE: &str = "metrics.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OmegaSpec {
    /// Only `"auto"` is accepted.
    Named(String),
    Box {
        lower: Vec<f64>,
        upper: Vec<f64>,
    },
}

impl Default for OmegaSpec {
    fn default() -> Self {
        OmegaSpec::Named("auto".into())
    }
}

/// Settings of the sampled Euler reference and of the evaluation raster.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReferenceConfig {
    pub rho: f64,
    pub control_samples: usize,
    pub refine: usize,
    pub eval_rho: f64,
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        Self {
            rho: 0.02,
            control_samples: 3,
            refine: 4,
            eval_rho: 0.02,
        }
    }
}

/// Hyperparameters replacing the top-level ones for a single ρ. Entries for
/// values outside the sweep are ignored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RhoOverride {
    pub rho: f64,
    #[serde(default)]
    pub kernel: Option<KernelSpec<f64>>,
    #[serde(rename = "C1", default)]
    pub c1: Option<f64>,
    #[serde(rename = "C2", default)]
    pub c2: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: String,
    #[serde(rename = "N")]
    pub n: usize,
    pub rho: Vec<f64>,
    #[serde(default)]
    pub omega: OmegaSpec,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub kernel: KernelSpec<f64>,
    #[serde(rename = "C1")]
    pub c1: f64,
    #[serde(rename = "C2")]
    pub c2: f64,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_true")]
    pub ball_check: bool,
    pub outputs: PathBuf,
    /// Same-label samples closer than `min_separation · ρ` are merged.
    #[serde(default = "default_separation")]
    pub min_separation: f64,
    #[serde(default)]
    pub save_controls: bool,
    #[serde(default)]
    pub reference: ReferenceConfig,
    #[serde(default)]
    pub overrides: Vec<RhoOverride>,
}

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}

fn default_restarts() -> usize {
    MayerOptions::default().restarts
}

fn default_separation() -> f64 {
    0.05
}

fn default_true() -> bool {
    true
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must be positive, got {v}")))
    }
}

/// Hyperparameters in effect for one ρ.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SvmParams {
    pub kernel: KernelSpec<f64>,
    pub c1: f64,
    pub c2: f64,
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let cfg: Self = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let sys = self.system()?;
        if self.n == 0 {
            return Err(Error::invalid("N must be positive"));
        }
        if self.rho.is_empty() {
            return Err(Error::invalid("rho list is empty"));
        }
        for &r in &self.rho {
            positive("rho", r)?;
        }
        if self.rho.windows(2).any(|w| w[0] <= w[1]) {
            return Err(Error::invalid("rho list must be strictly descending"));
        }
        positive("epsilon", self.epsilon)?;
        positive("C1", self.c1)?;
        positive("C2", self.c2)?;
        if !(self.min_separation >= 0.0 && self.min_separation < 1.0) {
            return Err(Error::invalid("min_separation must lie in [0, 1)"));
        }
        self.kernel.validate()?;
        if self.restarts == 0 {
            return Err(Error::invalid("restarts must be positive"));
        }
        positive("reference.rho", self.reference.rho)?;
        positive("reference.eval_rho", self.reference.eval_rho)?;
        if self.reference.control_samples == 0 || self.reference.refine == 0 {
            return Err(Error::invalid(
                "reference.control_samples and reference.refine must be positive",
            ));
        }
        match &self.omega {
            OmegaSpec::Named(s) if s == "auto" => {}
            OmegaSpec::Named(s) => {
                return Err(Error::invalid(format!(
                    "omega must be \"auto\" or a box, got `{s}`"
                )))
            }
            OmegaSpec::Box { lower, upper } => {
                if lower.len() != sys.dim_x() || upper.len() != sys.dim_x() {
                    return Err(Error::Dimension {
                        expected: sys.dim_x(),
                        got: lower.len().min(upper.len()),
                    });
                }
                GridSpec::new(1.0, lower.clone(), upper.clone())?;
            }
        }
        for o in &self.overrides {
            positive("overrides.rho", o.rho)?;
            if let Some(k) = &o.kernel {
                k.validate()?;
            }
            o.c1.map_or(Ok(()), |v| positive("C1", v))?;
            o.c2.map_or(Ok(()), |v| positive("C2", v))?;
        }
        Ok(())
    }

    pub fn system(&self) -> Result<ControlSystem<f64>> {
        builtin(&self.system)
    }

    pub fn params_for(&self, rho: f64) -> SvmParams {
        let o = self.overrides.iter().find(|o| o.rho == rho);
        SvmParams {
            kernel: o.and_then(|o| o.kernel).unwrap_or(self.kernel),
            c1: o.and_then(|o| o.c1).unwrap_or(self.c1),
            c2: o.and_then(|o| o.c2).unwrap_or(self.c2),
        }
    }

    pub fn rho_dir(&self, rho: f64) -> PathBuf {
        self.outputs.join(format!("rho_{rho}"))
    }
}

/// Reference set computed once per sweep.
#[derive(Clone, Debug)]
pub struct Reference {
    pub points: PointSet<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

pub fn compute_reference(cfg: &ExperimentConfig) -> Result<Reference> {
    let sys = cfg.system()?;
    let h = sys.step_size(cfg.n);
    let set = euler_reach_sampled_auto(
        &sys,
        cfg.reference.rho,
        h,
        cfg.reference.control_samples,
        cfg.reference.refine,
    )?;
    let (lower, upper) = set
        .bounding_box()
        .ok_or_else(|| Error::invalid("reference set is empty"))?;
    Ok(Reference {
        points: PointSet::from(&set),
        lower,
        upper,
    })
}

/// The region `Ω` used at spacing `rho`.
pub fn omega_for(cfg: &ExperimentConfig, reference: &Reference, rho: f64) -> Result<GridSpec<f64>> {
    match &cfg.omega {
        OmegaSpec::Box { lower, upper } => {
            let half = 0.5 * rho;
            let covers = reference
                .lower
                .iter()
                .zip(lower)
                .all(|(r, o)| *o <= r - half)
                && reference
                    .upper
                    .iter()
                    .zip(upper)
                    .all(|(r, o)| *o >= r + half);
            if !covers {
                return Err(Error::invalid(format!(
                    "omega does not contain the reference set inflated by rho/2 = {half}"
                )));
            }
            GridSpec::new(rho, lower.clone(), upper.clone())
        }
        OmegaSpec::Named(_) => {
            let margin = 3.0 * rho;
            GridSpec::new(
                rho,
                reference
                    .lower
                    .iter()
                    .map(|v| ((v - margin) / rho).floor() * rho)
                    .collect(),
                reference
                    .upper
                    .iter()
                    .map(|v| ((v + margin) / rho).ceil() * rho)
                    .collect(),
            )
        }
    }
}

pub fn compute_field(cfg: &ExperimentConfig, omega: &GridSpec<f64>) -> Result<DistanceField<f64>> {
    let sys = cfg.system()?;
    let opts = MayerOptions {
        restarts: cfg.restarts,
        ..MayerOptions::default()
    };
    let field = build_distance_field_with(&sys, omega, cfg.n, cfg.seed, &opts)?;
    Ok(if cfg.ball_check {
        ball_check(&field)
    } else {
        field
    })
}

/// Metrics of one ρ entry, stored as `metrics.json` in its directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RhoMetrics {
    pub rho: f64,
    pub d_h_dfog: f64,
    pub d_h_svm: f64,
    pub grid_points: usize,
    pub suppressed: usize,
    pub interior: usize,
    pub exterior: usize,
    pub boundary: usize,
    pub max_violation: f64,
    pub equality_residual: f64,
    pub sublevel_degenerate: bool,
}

/// Rasterizes both representations on the evaluation lattice over `Ω` and
/// measures them against the reference.
pub fn evaluate(
    cfg: &ExperimentConfig,
    reference: &Reference,
    omega: &GridSpec<f64>,
    field: &DistanceField<f64>,
    model: &SvmModel<f64>,
) -> Result<(f64, f64, Evaluation)> {
    let eval_grid = omega.with_rho(cfg.reference.eval_rho)?;
    let reference_pts = restrict(&reference.points, omega);
    let dfog = dfog_pointset(field, &eval_grid);
    let sub = sublevel_pointset(model, &eval_grid);
    let d_dfog = hausdorff(&dfog, &reference_pts)?;
    let d_svm = if sub.degenerate {
        f64::INFINITY
    } else {
        hausdorff(&sub.set, &reference_pts)?
    };
    Ok((
        d_dfog,
        d_svm,
        Evaluation {
            eval_grid,
            reference: reference_pts,
            dfog,
            sublevel_degenerate: sub.degenerate,
        },
    ))
}

pub struct Evaluation {
    pub eval_grid: GridSpec<f64>,
    pub reference: PointSet<f64>,
    pub dfog: PointSet<f64>,
    pub sublevel_degenerate: bool,
}

/// Everything produced for one ρ.
pub struct RhoRun {
    pub metrics: RhoMetrics,
    pub field: DistanceField<f64>,
    pub training: TrainingSet<f64>,
    pub model: SvmModel<f64>,
    pub evaluation: Evaluation,
}

/// Runs the full chain for one ρ without touching the file system.
pub fn run_rho(cfg: &ExperimentConfig, reference: &Reference, rho: f64) -> Result<RhoRun> {
    let omega = omega_for(cfg, reference, rho)?;
    let field = compute_field(cfg, &omega)?;
    let training = label_with(&field, cfg.epsilon, cfg.min_separation * rho)?;
    let p = cfg.params_for(rho);
    let mut model = fit(&training, p.kernel, p.c1, p.c2)?;
    model.set_training_ref("training_set.json");
    let (d_h_dfog, d_h_svm, evaluation) = evaluate(cfg, reference, &omega, &field, &model)?;
    let margins = model.margins();
    let metrics = RhoMetrics {
        rho,
        d_h_dfog,
        d_h_svm,
        grid_points: field.len(),
        suppressed: field.suppressed.len(),
        interior: training.interior.len(),
        exterior: training.exterior.len(),
        boundary: training.boundary.len(),
        max_violation: margins.max_violation,
        equality_residual: model.equality_residual(),
        sublevel_degenerate: evaluation.sublevel_degenerate,
    };
    Ok(RhoRun {
        metrics,
        field,
        training,
        model,
        evaluation,
    })
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let w = BufWriter::new(fs::File::create(path)?);
    serde_json::to_writer_pretty(w, value)?;
    Ok(())
}

fn write_points(path: &Path, set: &PointSet<f64>) -> Result<()> {
    set.write_csv(BufWriter::new(fs::File::create(path)?))
}

/// Writes the per-ρ artifacts into `dir`. `metrics.json` goes last so that its
/// presence marks a completed entry.
pub fn write_artifacts(cfg: &ExperimentConfig, run: &RhoRun, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let field = if cfg.save_controls {
        run.field.clone()
    } else {
        run.field.clone().without_controls()
    };
    write_json(&dir.join("distance_field.json"), &field)?;
    write_json(&dir.join("training_set.json"), &run.training)?;
    run.model.save_json(dir.join("svm_model.json"))?;
    run.model.write_decision_grid(
        &run.evaluation.eval_grid,
        BufWriter::new(fs::File::create(dir.join("decision_grid.csv"))?),
    )?;
    write_points(&dir.join("dfog_points.csv"), &run.evaluation.dfog)?;
    write_points(&dir.join("reference_points.csv"), &run.evaluation.reference)?;
    write_json(&dir.join(METRICS_FILE), &run.metrics)
}

#[derive(Clone, Debug, PartialEq)]
pub enum RhoOutcome {
    Completed(RhoMetrics),
    /// Loaded from an earlier run.
    Resumed(RhoMetrics),
    Failed {
        rho: f64,
        error: String,
    },
}

impl RhoOutcome {
    pub fn metrics(&self) -> Option<&RhoMetrics> {
        match self {
            RhoOutcome::Completed(m) | RhoOutcome::Resumed(m) => Some(m),
            RhoOutcome::Failed { .. } => None,
        }
    }

    pub fn rho(&self) -> f64 {
        match self {
            RhoOutcome::Completed(m) | RhoOutcome::Resumed(m) => m.rho,
            RhoOutcome::Failed { rho, .. } => *rho,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepReport {
    pub outcomes: Vec<RhoOutcome>,
}

impl SweepReport {
    pub fn failed(&self) -> usize {
        self.outcomes
            .iter()
            .filter(|o| matches!(o, RhoOutcome::Failed { .. }))
            .count()
    }
}

/// Runs the sweep in the configured order and writes `summary.csv`. A failing
/// entry is recorded and the sweep continues; its summary row has empty
/// metric fields.
pub fn run_pipeline(cfg: &ExperimentConfig, resume: bool) -> Result<SweepReport> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.outputs)?;
    let mut reference: Option<Reference> = None;
    let mut outcomes = Vec::with_capacity(cfg.rho.len());
    for &rho in &cfg.rho {
        let dir = cfg.rho_dir(rho);
        if resume {
            if let Some(m) = load_metrics(&dir) {
                outcomes.push(RhoOutcome::Resumed(m));
                continue;
            }
        }
        if reference.is_none() {
            reference = Some(compute_reference(cfg)?);
        }
        let reference = reference.as_ref().expect("reference computed above");
        let outcome = run_rho(cfg, reference, rho).and_then(|run| {
            write_artifacts(cfg, &run, &dir)?;
            Ok(run.metrics)
        });
        outcomes.push(match outcome {
            Ok(m) => RhoOutcome::Completed(m),
            Err(e) => RhoOutcome::Failed {
                rho,
                error: e.to_string(),
            },
        });
    }
    let report = SweepReport { outcomes };
    write_summary(&cfg.outputs.join(SUMMARY_FILE), &report)?;
    Ok(report)
}

fn load_metrics(dir: &Path) -> Option<RhoMetrics> {
    let text = fs::read_to_string(dir.join(METRICS_FILE)).ok()?;
    serde_json::from_str(&text).ok()
}

pub fn write_summary(path: &Path, report: &SweepReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["rho", "d_H_dfog", "d_H_svm"])?;
    for o in &report.outcomes {
        match o.metrics() {
            Some(m) => w.write_record([
                m.rho.to_string(),
                m.d_h_dfog.to_string(),
                m.d_h_svm.to_string(),
            ])?,
            None => w.write_record([o.rho().to_string(), String::new(), String::new()])?,
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> serde_json::Value {
        serde_json::json!({
            "system": "bilinear",
            "N": 30,
            "rho": [1.0, 0.5],
            "C1": 15.0,
            "C2": 50.0,
            "outputs": "out"
        })
    }

    #[test]
    fn defaults_fill_optional_fields() {
        let cfg: ExperimentConfig = serde_json::from_value(minimal()).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.omega, OmegaSpec::Named("auto".into()));
        assert!(cfg.ball_check);
        assert_eq!(cfg.epsilon, DEFAULT_EPSILON);
        assert_eq!(cfg.params_for(0.5).c2, 50.0);
    }

    #[test]
    fn rejects_bad_configs() {
        let cases = [
            ("rho", serde_json::json!([0.5, 1.0])),
            ("rho", serde_json::json!([])),
            ("C1", serde_json::json!(0.0)),
            ("system", serde_json::json!("pendulum")),
            ("omega", serde_json::json!("big")),
            ("N", serde_json::json!(0)),
        ];
        for (key, value) in cases {
            let mut v = minimal();
            v[key] = value;
            let cfg: ExperimentConfig = serde_json::from_value(v).unwrap();
            assert!(cfg.validate().is_err(), "{key}");
        }
    }

    #[test]
    fn overrides_apply_per_rho() {
        let mut v = minimal();
        v["overrides"] = serde_json::json!([{"rho": 0.5, "kernel": {"kind": "gaussian", "sigma": 0.6}, "C1": 35.0}]);
        let cfg: ExperimentConfig = serde_json::from_value(v).unwrap();
        cfg.validate().unwrap();
        let p = cfg.params_for(0.5);
        assert_eq!(p.kernel, KernelSpec::Gaussian { sigma: 0.6 });
        assert_eq!((p.c1, p.c2), (35.0, 50.0));
        assert_eq!(cfg.params_for(1.0).c1, 15.0);
    }

    #[test]
    fn auto_omega_contains_inflated_reference() {
        let cfg: ExperimentConfig = serde_json::from_value(minimal()).unwrap();
        let reference = Reference {
            points: PointSet::new(vec![vec![-1.0, 0.0], vec![1.7, 1.1]]),
            lower: vec![-1.0, 0.0],
            upper: vec![1.7, 1.1],
        };
        let g = omega_for(&cfg, &reference, 0.5).unwrap();
        for a in 0..2 {
            assert!(g.lower[a] <= reference.lower[a] - 1.5);
            assert!(g.upper[a] >= reference.upper[a] + 1.5);
        }
        let mut boxed = cfg.clone();
        boxed.omega = OmegaSpec::Box {
            lower: vec![-1.1, -0.1],
            upper: vec![1.8, 1.2],
        };
        assert!(omega_for(&boxed, &reference, 0.5).is_err());
        assert!(omega_for(&boxed, &reference, 0.1).is_ok());
    }
}
