use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use arcline::config::SimSettings;
use arcline::dataset::{calibration_record, Dataset, DatasetFile, FILE_TRANSFORM_TOL};
use arcline::error::{CliError, Result};
use arcline::sweep::{self, SweepPoint};
use arcline_core::evaluation::{fit_holdout_eval, loocv, mean_std, EvalReport, EvalSettings};
use arcline_core::registration::{register, RegistrationProblem, DEFAULT_LAMBDA_INIT_MM, DEFAULT_THETA_BOUND_RAD};
use arcline_core::tracking::{track, TrackingQuery};
use arcline_core::RigidTransform;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Parser)]
#[command(name = "arcline", version, about = "Arc-to-line registration of a tracked laser to a rotating TRUS array")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the laser line from a dataset's pivot session.
    Calibrate {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve for the camera → transducer transform.
    Register {
        #[arg(long)]
        dataset: PathBuf,
        /// Register on the first N pairs only.
        #[arg(long)]
        n_fit: Option<usize>,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rotation that brings the imaging plane onto one marker.
    Track {
        #[arg(long)]
        dataset: PathBuf,
        /// Output of `register`.
        #[arg(long)]
        registration: PathBuf,
        #[arg(long)]
        pair: usize,
        #[arg(long, default_value_t = DEFAULT_THETA_BOUND_RAD.to_degrees())]
        theta_bound_deg: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte-Carlo studies and synthetic datasets.
    Simulate {
        #[arg(value_enum)]
        study: Study,
        #[command(flatten)]
        sim: SimArgs,
        /// Pivot acquisitions stored with a synthetic dataset.
        #[arg(long, default_value_t = 20)]
        calibration_poses: usize,
        /// Per-trial rows (CSV, or JSON for `dataset`). The summary goes to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Held-out error of a registration on a dataset.
    Evaluate {
        #[arg(value_enum)]
        mode: EvalMode,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 10)]
        n_fit: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        repetitions: usize,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Mean and standard deviation of a CSV column grouped by another.
    Report {
        input: PathBuf,
        #[arg(long)]
        x: String,
        #[arg(long)]
        y: String,
    },
    /// Print the default simulation settings.
    Config,
}

#[derive(Clone, Copy, ValueEnum)]
enum Study {
    CalibSweep,
    RegSweep,
    NsSweep,
    Tracking,
    Dataset,
}

#[derive(Clone, Copy, ValueEnum)]
enum EvalMode {
    Tre,
    Loocv,
}

#[derive(Args)]
struct SolverArgs {
    #[arg(long, default_value_t = DEFAULT_THETA_BOUND_RAD.to_degrees())]
    theta_bound_deg: f64,
    #[arg(long, default_value_t = DEFAULT_LAMBDA_INIT_MM)]
    lambda_init_mm: f64,
}

impl SolverArgs {
    fn settings(&self) -> EvalSettings {
        EvalSettings {
            theta_bound_rad: self.theta_bound_deg.to_radians(),
            lambda_init_mm: self.lambda_init_mm,
            ..EvalSettings::default()
        }
    }
}

#[derive(Args)]
struct SimArgs {
    /// Settings file; omitted fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    theta_bound_deg: Option<f64>,
    #[arg(long)]
    lambda_init_mm: Option<f64>,
    /// Quantize simulated scan angles to this step.
    #[arg(long)]
    theta_quant_deg: Option<f64>,
}

impl SimArgs {
    fn settings(&self) -> Result<SimSettings> {
        let mut s = match &self.config {
            Some(path) => SimSettings::read(path)?,
            None => SimSettings::default(),
        };
        if let Some(v) = self.seed {
            s.master_seed = v;
        }
        if let Some(v) = self.trials {
            s.trials = v;
        }
        if let Some(v) = self.theta_bound_deg {
            s.theta_bound_deg = v;
        }
        if let Some(v) = self.lambda_init_mm {
            s.lambda_init_mm = v;
        }
        if self.theta_quant_deg.is_some() {
            s.layout.theta_quant_deg = self.theta_quant_deg;
        }
        if s.trials == 0 {
            return Err(CliError::Usage("--trials must be positive".into()));
        }
        Ok(s)
    }
}

#[derive(Serialize, Deserialize)]
struct RegistrationRecord {
    f_reg: [f64; 16],
    final_cost_mm: f64,
    outer_iterations: usize,
    converged: bool,
    n_fit: usize,
    lambda_mm: Vec<f64>,
    delta_theta_deg: Vec<f64>,
}

#[derive(Serialize)]
struct TrackRecord {
    pair: usize,
    delta_theta_deg: f64,
    lambda_mm: f64,
    residual_mm: f64,
}

#[derive(Serialize)]
struct EvalRecord<'a> {
    tre_mean_mm: f64,
    tre_std_mm: f64,
    n_fit: usize,
    n_holdout: usize,
    per_point_errors_mm: &'a [f64],
    all_converged: bool,
}

impl<'a> From<&'a EvalReport> for EvalRecord<'a> {
    fn from(r: &'a EvalReport) -> Self {
        EvalRecord {
            tre_mean_mm: r.tre_mean_mm,
            tre_std_mm: r.tre_std_mm,
            n_fit: r.n_fit,
            n_holdout: r.n_holdout,
            per_point_errors_mm: &r.per_point_errors_mm,
            all_converged: r.splits.iter().all(|s| s.converged),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load(path: &Path) -> Result<Dataset> {
    DatasetFile::read(path)?.validate()
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| CliError::io(path.display().to_string(), e)),
        None => std::io::stdout().write_all(text.as_bytes()).map_err(|e| CliError::io("stdout", e)),
    }
}

fn json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Calibrate { dataset, out } => {
            let data = load(&dataset)?;
            let session = data
                .calibration_session
                .as_ref()
                .ok_or_else(|| CliError::Dataset("dataset has no calibration session".into()))?;
            let calib = arcline_core::calibration::calibrate(session)?;
            emit(out.as_deref(), &json(&calibration_record(&calib))?)
        }
        Command::Register { dataset, n_fit, solver, out } => {
            let data = load(&dataset)?;
            let mut pairs = data.pairs()?;
            if let Some(n) = n_fit {
                if n > pairs.len() {
                    return Err(CliError::Usage(format!("--n-fit {n} exceeds the {} pairs in the dataset", pairs.len())));
                }
                pairs.truncate(n);
            }
            let settings = solver.settings();
            let prob = RegistrationProblem::new(pairs, data.geometry, settings.theta_bound_rad, settings.lambda_init_mm)?;
            let r = register(&prob, &settings.solver)?;
            let record = RegistrationRecord {
                f_reg: r.f_reg.to_row_major(),
                final_cost_mm: r.final_cost_mm,
                outer_iterations: r.outer_iterations,
                converged: r.converged,
                n_fit: prob.len(),
                lambda_mm: r.lambdas_mm.clone(),
                delta_theta_deg: r
                    .thetas_rad
                    .iter()
                    .zip(prob.pairs())
                    .map(|(t, p)| (t - p.obs.scan_angle_rad).to_degrees())
                    .collect(),
            };
            emit(out.as_deref(), &json(&record)?)?;
            if !r.converged {
                return Err(CliError::NotConverged(format!("{} outer iterations", r.outer_iterations)));
            }
            Ok(())
        }
        Command::Track { dataset, registration, pair, theta_bound_deg, out } => {
            let data = load(&dataset)?;
            let text = std::fs::read_to_string(&registration).map_err(|e| CliError::io(registration.display().to_string(), e))?;
            let record: RegistrationRecord = serde_json::from_str(&text)?;
            let f_reg = RigidTransform::from_row_major(&record.f_reg, FILE_TRANSFORM_TOL)?;
            let pairs = data.pairs()?;
            let p = pairs
                .get(pair)
                .ok_or_else(|| CliError::Usage(format!("--pair {pair} out of range (dataset has {})", pairs.len())))?;
            let s = track(&TrackingQuery {
                f_reg,
                laser_line: p.laser_line,
                obs: p.obs,
                geometry: data.geometry,
                theta_bound_rad: theta_bound_deg.to_radians(),
            })?;
            let record = TrackRecord {
                pair,
                delta_theta_deg: s.delta_theta_rad.to_degrees(),
                lambda_mm: s.lambda_mm,
                residual_mm: s.residual_mm,
            };
            emit(out.as_deref(), &json(&record)?)
        }
        Command::Simulate { study, sim, calibration_poses, out } => simulate(study, &sim.settings()?, calibration_poses, out.as_deref()),
        Command::Evaluate { mode, dataset, n_fit, seed, repetitions, solver, out } => {
            let data = load(&dataset)?;
            let pairs = data.pairs()?;
            let settings = solver.settings();
            let report = match mode {
                EvalMode::Tre => fit_holdout_eval(&pairs, &data.geometry, n_fit, seed, &settings, repetitions)?,
                EvalMode::Loocv => loocv(&pairs, &data.geometry, &settings)?,
            };
            emit(out.as_deref(), &json(&EvalRecord::from(&report))?)
        }
        Command::Report { input, x, y } => report(&input, &x, &y),
        Command::Config => emit(None, &SimSettings::default().to_json()?),
    }
}

fn simulate(study: Study, settings: &SimSettings, calibration_poses: usize, out: Option<&Path>) -> Result<()> {
    fn rows_to<T: Serialize>(rows: &[T], out: Option<&Path>) -> Result<()> {
        if let Some(path) = out {
            let file = std::fs::File::create(path).map_err(|e| CliError::io(path.display().to_string(), e))?;
            sweep::write_csv(rows, std::io::BufWriter::new(file))?;
        }
        Ok(())
    }
    let summary: Vec<SweepPoint> = match study {
        Study::CalibSweep => {
            let (rows, s) = sweep::run_calibration_sweep(settings)?;
            rows_to(&rows, out)?;
            s
        }
        Study::RegSweep => {
            let (rows, s) = sweep::run_registration_sweep(settings)?;
            rows_to(&rows, out)?;
            s
        }
        Study::NsSweep => {
            let (rows, s) = sweep::run_fit_size_sweep(settings)?;
            rows_to(&rows, out)?;
            s
        }
        Study::Tracking => {
            let (rows, s) = sweep::run_tracking_study(settings)?;
            rows_to(&rows, out)?;
            vec![s]
        }
        Study::Dataset => {
            let file = sweep::simulate_dataset(settings, calibration_poses)?;
            return emit(out, &file.to_json()?);
        }
    };
    let mut buf = Vec::new();
    sweep::write_csv(&summary, &mut buf)?;
    emit(None, &String::from_utf8_lossy(&buf))
}

fn report(input: &Path, x: &str, y: &str) -> Result<()> {
    let mut reader = csv::Reader::from_path(input)?;
    let headers = reader.headers()?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::Usage(format!("column {name:?} not found in {}", input.display())))
    };
    let (xi, yi) = (column(x)?, column(y)?);
    let mut groups: Vec<(String, Vec<f64>)> = Vec::new();
    let mut index: BTreeMap<String, usize> = BTreeMap::new();
    for record in reader.records() {
        let record = record?;
        let key = record[xi].to_string();
        let value: f64 = record[yi]
            .parse()
            .map_err(|_| CliError::Usage(format!("non-numeric {y:?} value {:?}", &record[yi])))?;
        let slot = *index.entry(key.clone()).or_insert_with(|| {
            groups.push((key, Vec::new()));
            groups.len() - 1
        });
        groups[slot].1.push(value);
    }
    let mut text = format!("{x},mean,std,n\n");
    for (key, values) in &groups {
        let (mean, std) = mean_std(values);
        text.push_str(&format!("{key},{mean},{std},{}\n", values.len()));
    }
    emit(None, &text)
}
