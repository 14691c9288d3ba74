use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use reachkit::dfog::DistanceField;
use reachkit::labelling::{label_with, TrainingSet};
use reachkit::pipeline::{
    compute_field, compute_reference, evaluate, omega_for, run_pipeline, ExperimentConfig,
    RhoMetrics, RhoOutcome, METRICS_FILE, SUMMARY_FILE,
};
use reachkit::svm::{fit, SvmModel, SvmModelFile};

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_PARTIAL: u8 = 3;

#[derive(Parser)]
#[command(
    name = "reachkit",
    version,
    about = "Reachable-set approximation by distance fields and kernel SVMs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (JSON).
    #[arg(short, long)]
    config: PathBuf,
    /// Replaces the configured ρ values (comma separated, descending).
    #[arg(long, value_delimiter = ',')]
    rho: Option<Vec<f64>>,
    #[arg(long)]
    seed: Option<u64>,
    /// Replaces the configured output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (defaults to all cores).
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Computes the Euler reference set and writes reference_points.csv.
    Reference(Common),
    /// Solves the Mayer problems on the grid of one ρ.
    Dfog {
        #[command(flatten)]
        common: Common,
        /// Stores the optimal control sequences in distance_field.json.
        #[arg(long)]
        save_controls: bool,
    },
    /// Turns a distance field into a labelled training set.
    Label {
        #[command(flatten)]
        common: Common,
        /// distance_field.json (defaults to the ρ directory).
        #[arg(long)]
        field: Option<PathBuf>,
    },
    /// Trains the SVM on a training set with the hyperparameters of one ρ.
    Fit {
        #[command(flatten)]
        common: Common,
        /// training_set.json (defaults to the ρ directory).
        #[arg(long)]
        training: Option<PathBuf>,
    },
    /// Measures the stored field and model of one ρ against the reference.
    Eval(Common),
    /// Runs the whole chain for every ρ and writes summary.csv.
    Pipeline {
        #[command(flatten)]
        common: Common,
        /// Skips ρ values whose artifacts are already complete.
        #[arg(long)]
        resume: bool,
        #[arg(long)]
        save_controls: bool,
    },
}

enum Failure {
    Config(String),
    Run(String),
    Partial(usize),
}

impl From<reachkit::Error> for Failure {
    fn from(e: reachkit::Error) -> Self {
        Failure::Run(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Run(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Run(e.to_string())
    }
}

fn load_config(c: &Common) -> Result<ExperimentConfig, Failure> {
    let config_error = |e: reachkit::Error| Failure::Config(format!("{}: {e}", c.config.display()));
    let text = fs::read_to_string(&c.config).map_err(|e| config_error(e.into()))?;
    let mut cfg: ExperimentConfig =
        serde_json::from_str(&text).map_err(|e| config_error(e.into()))?;
    if let Some(rho) = &c.rho {
        cfg.rho = rho.clone();
    }
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &c.out {
        cfg.outputs = out.clone();
    }
    cfg.validate().map_err(config_error)?;
    if let Some(jobs) = c.jobs {
        if jobs == 0 {
            return Err(Failure::Config("--jobs must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| Failure::Run(e.to_string()))?;
    }
    Ok(cfg)
}

fn single_rho(cfg: &ExperimentConfig) -> Result<f64, Failure> {
    match cfg.rho.as_slice() {
        [rho] => Ok(*rho),
        _ => Err(Failure::Config(
            "this command needs exactly one ρ; pass --rho".into(),
        )),
    }
}

fn read_json<D: serde::de::DeserializeOwned>(path: &Path) -> Result<D, Failure> {
    let text =
        fs::read_to_string(path).map_err(|e| Failure::Run(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Run(format!("{}: {e}", path.display())))
}

fn write_json<S: serde::Serialize>(path: &Path, value: &S) -> Result<(), Failure> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    serde_json::to_writer_pretty(BufWriter::new(fs::File::create(path)?), value)?;
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Reference(common) => {
            let cfg = load_config(&common)?;
            let reference = compute_reference(&cfg)?;
            fs::create_dir_all(&cfg.outputs)?;
            let path = cfg.outputs.join("reference_points.csv");
            reference
                .points
                .write_csv(BufWriter::new(fs::File::create(&path)?))?;
            println!(
                "{} reference points -> {}",
                reference.points.len(),
                path.display()
            );
        }
        Command::Dfog {
            common,
            save_controls,
        } => {
            let cfg = load_config(&common)?;
            let rho = single_rho(&cfg)?;
            let reference = compute_reference(&cfg)?;
            let omega = omega_for(&cfg, &reference, rho)?;
            let field = compute_field(&cfg, &omega)?;
            let field = if save_controls || cfg.save_controls {
                field
            } else {
                field.without_controls()
            };
            let path = cfg.rho_dir(rho).join("distance_field.json");
            write_json(&path, &field)?;
            println!(
                "{} grid points, {} suppressed -> {}",
                field.len(),
                field.suppressed.len(),
                path.display()
            );
        }
        Command::Label { common, field } => {
            let cfg = load_config(&common)?;
            let rho = single_rho(&cfg)?;
            let dir = cfg.rho_dir(rho);
            let field: DistanceField<f64> =
                read_json(&field.unwrap_or_else(|| dir.join("distance_field.json")))?;
            let training = label_with(&field, cfg.epsilon, cfg.min_separation * rho)?;
            let path = dir.join("training_set.json");
            write_json(&path, &training)?;
            println!(
                "|I| = {}, |E| = {}, |B| = {} -> {}",
                training.interior.len(),
                training.exterior.len(),
                training.boundary.len(),
                path.display()
            );
        }
        Command::Fit { common, training } => {
            let cfg = load_config(&common)?;
            let rho = single_rho(&cfg)?;
            let dir = cfg.rho_dir(rho);
            let training: TrainingSet<f64> =
                read_json(&training.unwrap_or_else(|| dir.join("training_set.json")))?;
            let p = cfg.params_for(rho);
            let mut model = fit(&training, p.kernel, p.c1, p.c2)?;
            model.set_training_ref("training_set.json");
            fs::create_dir_all(&dir)?;
            model.save_json(dir.join("svm_model.json"))?;
            println!(
                "{} points, max KKT violation {:e} -> {}",
                model.len(),
                model.margins().max_violation,
                dir.join("svm_model.json").display()
            );
        }
        Command::Eval(common) => {
            let cfg = load_config(&common)?;
            let rho = single_rho(&cfg)?;
            let dir = cfg.rho_dir(rho);
            let field: DistanceField<f64> = read_json(&dir.join("distance_field.json"))?;
            let training: TrainingSet<f64> = read_json(&dir.join("training_set.json"))?;
            let file: SvmModelFile<f64> = read_json(&dir.join("svm_model.json"))?;
            let model = SvmModel::from_file(file, &training)?;
            let reference = compute_reference(&cfg)?;
            let (d_dfog, d_svm, ev) = evaluate(&cfg, &reference, &field.grid, &field, &model)?;
            ev.dfog.write_csv(BufWriter::new(fs::File::create(
                dir.join("dfog_points.csv"),
            )?))?;
            ev.reference.write_csv(BufWriter::new(fs::File::create(
                dir.join("reference_points.csv"),
            )?))?;
            model.write_decision_grid(
                &ev.eval_grid,
                BufWriter::new(fs::File::create(dir.join("decision_grid.csv"))?),
            )?;
            let margins = model.margins();
            let metrics = RhoMetrics {
                rho,
                d_h_dfog: d_dfog,
                d_h_svm: d_svm,
                grid_points: field.len(),
                suppressed: field.suppressed.len(),
                interior: training.interior.len(),
                exterior: training.exterior.len(),
                boundary: training.boundary.len(),
                max_violation: margins.max_violation,
                equality_residual: model.equality_residual(),
                sublevel_degenerate: ev.sublevel_degenerate,
            };
            write_json(&dir.join(METRICS_FILE), &metrics)?;
            println!("rho = {rho}: d_H_dfog = {d_dfog}, d_H_svm = {d_svm}");
        }
        Command::Pipeline {
            common,
            resume,
            save_controls,
        } => {
            let mut cfg = load_config(&common)?;
            cfg.save_controls |= save_controls;
            let report = run_pipeline(&cfg, resume)?;
            for o in &report.outcomes {
                match o {
                    RhoOutcome::Completed(m) => {
                        println!(
                            "rho = {}: d_H_dfog = {}, d_H_svm = {}",
                            m.rho, m.d_h_dfog, m.d_h_svm
                        )
                    }
                    RhoOutcome::Resumed(m) => println!(
                        "rho = {}: d_H_dfog = {}, d_H_svm = {} (resumed)",
                        m.rho, m.d_h_dfog, m.d_h_svm
                    ),
                    RhoOutcome::Failed { rho, error } => eprintln!("rho = {rho}: failed: {error}"),
                }
            }
            println!("summary -> {}", cfg.outputs.join(SUMMARY_FILE).display());
            if report.failed() > 0 {
                return Err(Failure::Partial(report.failed()));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("configuration error: {msg}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Run(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_FAILURE)
        }
        Err(Failure::Partial(n)) => {
            eprintln!("{n} sweep entries failed");
            ExitCode::from(EXIT_PARTIAL)
        }
    }
}
