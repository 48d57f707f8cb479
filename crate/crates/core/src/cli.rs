//! Command-line front end.
//!
//! Exit codes: 0 success or allowed, 1 denied, 2 usage or validation
//! failure, 3 I/O failure.

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::thread;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::config::{load_pipeline, ConfigError};
use crate::pipeline::{analyze_pipeline, Coupling, PipelineModel, PipelineReport};
use crate::policy::{
    policy_path, serialize_policy, write_policy_file, AuthorityDatabase, AuthorizationRequest,
    PolicyDocument, PolicyError,
};
use crate::queue::{
    expected_in_system, performance_metrics, stationary_distribution, BirthDeathSpec,
};
use crate::sim::{
    read_event_log, simulate_level, simulate_pipeline, write_event_log, SimulationConfig,
    SimulationResult,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_DENIED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;

pub const DB_ENV: &str = "AUTHQ_DB";

#[derive(Debug, Parser)]
#[command(
    name = "authq",
    version,
    about = "Promotion queues, their simulation, and the authority database they drive"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Steady-state table for one M/M/1/K level.
    Analyze {
        #[command(flatten)]
        level: LevelArgs,
        #[arg(long, value_enum, default_value_t = AnalyzeFormat::Paper)]
        format: AnalyzeFormat,
    },
    /// Simulate one M/M/1/K level and compare with the analytic table.
    Simulate {
        #[command(flatten)]
        level: LevelArgs,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_enum, default_value_t = ReportFormat::Table)]
        format: ReportFormat,
    },
    /// Per-level metrics for a pipeline configuration file.
    Pipeline {
        config: PathBuf,
        /// Override the coupling given in the file.
        #[arg(long, value_enum)]
        coupling: Option<CouplingArg>,
        /// Also simulate and print analytic-vs-empirical columns.
        #[arg(long)]
        simulate: bool,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_enum, default_value_t = ReportFormat::Table)]
        format: ReportFormat,
    },
    /// Simulate the whole hierarchy and write its promotion event log.
    Events {
        config: PathBuf,
        #[command(flatten)]
        run: RunArgs,
        /// Output file; standard output when omitted.
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Manage and query the authority database.
    Policy {
        /// Database directory (one <id>.xml per employee).
        #[arg(long, env = DB_ENV, default_value = "authority-db")]
        db: PathBuf,
        #[command(subcommand)]
        action: PolicyAction,
    },
}

#[derive(Debug, Args)]
struct LevelArgs {
    /// Arrival rate λ.
    #[arg(long = "lambda")]
    lambda: f64,
    /// Service (promotion) rate μ.
    #[arg(long = "mu")]
    mu: f64,
    /// Capacity K.
    #[arg(long)]
    capacity: usize,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Measured external arrivals.
    #[arg(long, default_value_t = 1_000_000)]
    arrivals: u64,
    /// Warmup arrivals; defaults to 10% of --arrivals.
    #[arg(long)]
    warmup: Option<u64>,
}

impl RunArgs {
    fn config(&self) -> SimulationConfig {
        let config = SimulationConfig::new(self.seed, self.arrivals);
        match self.warmup {
            Some(w) => config.with_warmup(w),
            None => config,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum AnalyzeFormat {
    Paper,
    Json,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ReportFormat {
    Table,
    Json,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum CouplingArg {
    Independent,
    Tandem,
}

#[derive(Debug, Subcommand)]
enum PolicyAction {
    /// Add an employee's policy file.
    Add {
        #[arg(long)]
        name: String,
        #[arg(long)]
        id: u64,
        #[arg(long)]
        designation: String,
        #[arg(long)]
        signing_limit: u64,
    },
    /// Print an employee's policy document.
    Get { id: u64 },
    /// Decide whether a request is within the employee's authority.
    Check {
        #[arg(long)]
        name: String,
        #[arg(long)]
        id: u64,
        #[arg(long)]
        designation: String,
        #[arg(long)]
        amount: u64,
    },
    /// Promote an employee to a new designation and signing limit.
    Promote {
        #[arg(long)]
        id: u64,
        #[arg(long)]
        designation: String,
        #[arg(long)]
        signing_limit: u64,
    },
    /// Apply a simulator event log using a pipeline's grants.
    Replay {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        config: PathBuf,
    },
}

/// A failed command and the exit code it maps to.
#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn usage(message: impl ToString) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.to_string(),
        }
    }

    fn io(message: impl ToString) -> Self {
        Self {
            code: EXIT_IO,
            message: message.to_string(),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::usage(e)
    }
}

impl From<PolicyError> for Failure {
    fn from(e: PolicyError) -> Self {
        if e.is_io() {
            Failure::io(e)
        } else {
            Failure::usage(e)
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::io(e)
    }
}

/// Parses `args` (program name first), runs the command, and returns the
/// process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{}", e.render());
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{}", e.render());
                    EXIT_USAGE
                }
            };
        }
    };
    match dispatch(cli.command, out) {
        Ok(code) => code,
        Err(failure) => {
            let _ = writeln!(err, "error: {}", failure.message);
            failure.code
        }
    }
}

fn dispatch(command: Command, out: &mut dyn Write) -> Result<i32, Failure> {
    match command {
        Command::Analyze { level, format } => analyze(&level, format, out),
        Command::Simulate { level, run, format } => simulate(&level, &run, format, out),
        Command::Pipeline {
            config,
            coupling,
            simulate,
            run,
            format,
        } => pipeline(&config, coupling, simulate.then_some(&run), format, out),
        Command::Events {
            config,
            run,
            out: path,
        } => events(&config, &run, path.as_deref(), out),
        Command::Policy { db, action } => policy(&db, action, out),
    }
}

fn level_spec(level: &LevelArgs) -> Result<BirthDeathSpec, Failure> {
    if !(level.lambda.is_finite() && level.lambda > 0.0) {
        return Err(Failure::usage(format!(
            "--lambda must be a positive number, got {}",
            level.lambda
        )));
    }
    BirthDeathSpec::constant(level.lambda, level.mu, level.capacity).map_err(|e| match e {
        crate::queue::SpecError::ZeroCapacity => Failure::usage("--capacity must be at least 1"),
        crate::queue::SpecError::InvalidServiceRate { value, .. } => {
            Failure::usage(format!("--mu must be a positive number, got {value}"))
        }
        other => Failure::usage(other),
    })
}

fn analyze(level: &LevelArgs, format: AnalyzeFormat, out: &mut dyn Write) -> Result<i32, Failure> {
    let spec = level_spec(level)?;
    let dist = stationary_distribution(&spec);
    let metrics = performance_metrics(&spec, &dist).map_err(Failure::usage)?;
    match format {
        AnalyzeFormat::Paper => {
            writeln!(
                out,
                "Ratio of arrival to departure is --> {:.6}",
                level.lambda / level.mu
            )?;
            writeln!(
                out,
                "Normalization constant is--> {:.6}",
                dist.normalization_constant()
            )?;
            for (i, p) in dist.probabilities().iter().enumerate() {
                writeln!(out, "P{i} is--> {p:.6}")?;
            }
            writeln!(out, "Ls is--> {:.6}", expected_in_system(&dist))?;
        }
        AnalyzeFormat::Json => {
            let value = json!({
                "arrival_rate": level.lambda,
                "service_rate": level.mu,
                "capacity": level.capacity,
                "traffic_intensity": metrics.traffic_intensity,
                "normalization_constant": dist.normalization_constant(),
                "distribution": dist.probabilities(),
                "L": metrics.expected_in_system,
                "Lq": metrics.expected_in_queue,
                "W": metrics.mean_time_in_system,
                "Wq": metrics.mean_time_in_queue,
                "effective_arrival_rate": metrics.effective_arrival_rate,
                "blocking_probability": metrics.blocking_probability,
            });
            writeln!(
                out,
                "{}",
                serde_json::to_string_pretty(&value).map_err(Failure::io)?
            )?;
        }
    }
    Ok(EXIT_OK)
}

fn write_comparison(
    out: &mut dyn Write,
    analytic: &[f64],
    analytic_l: f64,
    sim: &SimulationResult,
) -> io::Result<()> {
    writeln!(
        out,
        "{:>5}  {:>10}  {:>10}  {:>10}",
        "state", "analytic", "empirical", "abs_diff"
    )?;
    for (i, (a, e)) in analytic.iter().zip(&sim.empirical_distribution).enumerate() {
        writeln!(out, "{i:>5}  {a:>10.6}  {e:>10.6}  {:>10.6}", (a - e).abs())?;
    }
    writeln!(
        out,
        "{:>5}  {analytic_l:>10.6}  {:>10.6}  {:>10.6}",
        "L",
        sim.empirical_l,
        (analytic_l - sim.empirical_l).abs()
    )?;
    let w = sim
        .empirical_w
        .map_or("-".to_owned(), |w| format!("{w:.6}"));
    writeln!(
        out,
        "admitted {}  blocked {}  empirical W {w}  window {:.3}",
        sim.admitted_count, sim.blocked_count, sim.total_simulated_time
    )
}

fn simulate(
    level: &LevelArgs,
    run: &RunArgs,
    format: ReportFormat,
    out: &mut dyn Write,
) -> Result<i32, Failure> {
    let spec = level_spec(level)?;
    let dist = stationary_distribution(&spec);
    let config = run.config();
    let sim =
        simulate_level(level.lambda, level.mu, level.capacity, &config).map_err(Failure::usage)?;
    match format {
        ReportFormat::Table => {
            writeln!(
                out,
                "M/M/1/{} λ={} μ={} seed {} arrivals {} warmup {}",
                level.capacity,
                level.lambda,
                level.mu,
                config.seed,
                config.measured_arrivals,
                config.warmup_arrivals
            )?;
            write_comparison(out, dist.probabilities(), expected_in_system(&dist), &sim)?;
        }
        ReportFormat::Json => {
            let value = json!({
                "config": config,
                "analytic": dist.probabilities(),
                "simulation": sim,
            });
            writeln!(
                out,
                "{}",
                serde_json::to_string_pretty(&value).map_err(Failure::io)?
            )?;
        }
    }
    Ok(EXIT_OK)
}

/// Independent levels are simulated as separate queues, each with seed
/// `seed + level_index`, on one thread per level. Tandem pipelines are
/// simulated as one coupled system.
fn simulate_levels(
    model: &PipelineModel,
    config: &SimulationConfig,
) -> Result<Vec<SimulationResult>, Failure> {
    match model.coupling() {
        Coupling::Tandem => Ok(simulate_pipeline(model, config)
            .map_err(Failure::usage)?
            .per_level),
        Coupling::Independent => thread::scope(|scope| {
            let handles: Vec<_> = (0u64..)
                .zip(model.levels())
                .map(|(index, level)| {
                    let config = SimulationConfig {
                        seed: config.seed.wrapping_add(index),
                        ..*config
                    };
                    scope.spawn(move || {
                        simulate_level(
                            level.arrival_rate,
                            level.service_rate,
                            level.capacity,
                            &config,
                        )
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| {
                    h.join()
                        .expect("simulation thread panicked")
                        .map_err(Failure::usage)
                })
                .collect()
        }),
    }
}

fn write_pipeline_table(out: &mut dyn Write, report: &PipelineReport) -> io::Result<()> {
    let coupling = match report.coupling {
        Coupling::Independent => "independent",
        Coupling::Tandem => "tandem",
    };
    writeln!(out, "coupling: {coupling}")?;
    writeln!(
        out,
        "{:>5}  {:<8}  {:>10}  {:>10}  {:>8}  {:>10}  {:>10}  {:>10}  {:>10}  {:>10}",
        "level", "label", "lambda", "mu", "capacity", "L", "Lq", "W", "throughput", "P(K)"
    )?;
    for level in &report.per_level {
        let m = &level.metrics;
        let w = m
            .mean_time_in_system
            .map_or("-".to_owned(), |w| format!("{w:.6}"));
        writeln!(
            out,
            "{:>5}  {:<8}  {:>10.6}  {:>10.6}  {:>8}  {:>10.6}  {:>10.6}  {:>10}  {:>10.6}  {:>10.6}",
            level.level_id,
            level.label,
            level.arrival_rate,
            level.service_rate,
            level.capacity,
            m.expected_in_system,
            m.expected_in_queue,
            w,
            level.throughput,
            m.blocking_probability
        )?;
    }
    Ok(())
}

fn pipeline(
    path: &Path,
    coupling: Option<CouplingArg>,
    run: Option<&RunArgs>,
    format: ReportFormat,
    out: &mut dyn Write,
) -> Result<i32, Failure> {
    let mut model = load_pipeline(path)?;
    if let Some(c) = coupling {
        model = model.with_coupling(match c {
            CouplingArg::Independent => Coupling::Independent,
            CouplingArg::Tandem => Coupling::Tandem,
        });
    }
    let report = analyze_pipeline(&model);
    let simulated = run
        .map(|r| {
            let config = r.config();
            simulate_levels(&model, &config).map(|sims| (config, sims))
        })
        .transpose()?;

    match format {
        ReportFormat::Table => {
            write_pipeline_table(out, &report)?;
            if let Some((config, sims)) = &simulated {
                writeln!(
                    out,
                    "\nsimulation: seed {} arrivals {} warmup {}",
                    config.seed, config.measured_arrivals, config.warmup_arrivals
                )?;
                for (level, sim) in report.per_level.iter().zip(sims) {
                    writeln!(out, "\nlevel {} ({})", level.level_id, level.label)?;
                    write_comparison(
                        out,
                        level.distribution.probabilities(),
                        level.metrics.expected_in_system,
                        sim,
                    )?;
                }
            }
        }
        ReportFormat::Json => {
            let value = match &simulated {
                Some((config, sims)) => json!({
                    "report": report,
                    "simulation": { "config": config, "per_level": sims },
                }),
                None => json!({ "report": report }),
            };
            writeln!(
                out,
                "{}",
                serde_json::to_string_pretty(&value).map_err(Failure::io)?
            )?;
        }
    }
    Ok(EXIT_OK)
}

fn events(
    config_path: &Path,
    run: &RunArgs,
    path: Option<&Path>,
    out: &mut dyn Write,
) -> Result<i32, Failure> {
    let model = load_pipeline(config_path)?;
    let sim = simulate_pipeline(&model, &run.config()).map_err(Failure::usage)?;
    match path {
        Some(path) => {
            let file =
                File::create(path).map_err(|e| Failure::io(format!("{}: {e}", path.display())))?;
            write_event_log(BufWriter::new(file), &sim.events)?;
            let c = sim.counters;
            writeln!(
                out,
                "wrote {} events to {}: admissions {} rejected {} departures {} losses {} in system {}",
                sim.events.len(),
                path.display(),
                c.admissions,
                c.rejected,
                c.departures,
                c.losses,
                sim.in_system.len()
            )?;
        }
        None => write_event_log(&mut *out, &sim.events)?,
    }
    Ok(EXIT_OK)
}

fn load_db(dir: &Path) -> Result<AuthorityDatabase, Failure> {
    if !dir.is_dir() {
        return Err(Failure::io(format!(
            "database directory {} does not exist",
            dir.display()
        )));
    }
    Ok(AuthorityDatabase::load_dir(dir)?)
}

fn policy(dir: &Path, action: PolicyAction, out: &mut dyn Write) -> Result<i32, Failure> {
    match action {
        PolicyAction::Add {
            name,
            id,
            designation,
            signing_limit,
        } => {
            std::fs::create_dir_all(dir)
                .map_err(|e| Failure::io(format!("{}: {e}", dir.display())))?;
            let db = AuthorityDatabase::load_dir(dir)?;
            if db.get(id).is_some() {
                return Err(PolicyError::DuplicateId(id).into());
            }
            let doc = PolicyDocument {
                name,
                id,
                designation,
                signing_limit,
            };
            write_policy_file(dir, &doc)?;
            writeln!(out, "added {}", policy_path(dir, id).display())?;
        }
        PolicyAction::Get { id } => {
            let db = load_db(dir)?;
            let doc = db.get(id).ok_or(PolicyError::NotFound(id))?;
            write!(out, "{}", serialize_policy(doc))?;
        }
        PolicyAction::Check {
            name,
            id,
            designation,
            amount,
        } => {
            let db = load_db(dir)?;
            let decision = db.evaluate(&AuthorizationRequest {
                name,
                id,
                designation,
                amount,
            });
            writeln!(out, "{decision}")?;
            return Ok(if decision.allowed {
                EXIT_OK
            } else {
                EXIT_DENIED
            });
        }
        PolicyAction::Promote {
            id,
            designation,
            signing_limit,
        } => {
            let db = load_db(dir)?;
            let next = db.apply_promotion(id, &designation, signing_limit)?;
            let doc = next.get(id).expect("promoted record exists");
            write_policy_file(dir, doc)?;
            write!(out, "{}", serialize_policy(doc))?;
        }
        PolicyAction::Replay { log, config } => {
            let model = load_pipeline(&config)?;
            let file =
                File::open(&log).map_err(|e| Failure::io(format!("{}: {e}", log.display())))?;
            let events = read_event_log(BufReader::new(file)).map_err(|e| match e {
                crate::sim::EventLogError::Io(e) => Failure::io(e),
                other => Failure::usage(format!("{}: {other}", log.display())),
            })?;
            std::fs::create_dir_all(dir)
                .map_err(|e| Failure::io(format!("{}: {e}", dir.display())))?;
            let db = AuthorityDatabase::load_dir(dir)?;
            let next = db.apply_event_log(&events, &model)?;
            next.save_dir(dir)?;
            writeln!(
                out,
                "replayed {} events; {} records in {}",
                events.len(),
                next.len(),
                dir.display()
            )?;
        }
    }
    Ok(EXIT_OK)
}
