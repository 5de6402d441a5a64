use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::Value;
use shiftbench::error::parse_json;
use shiftbench::ops::{self, EstimateRequest, SimulateRequest, SweepRequest, WorstCaseRequest};
use shiftbench::{RunRecord, RunStore, WorkbenchError};
use shiftbench_core::estimation::{CurvatureEstimate, EstimationConfig};
use shiftbench_core::worst_case::ConstraintSpec;
use shiftbench_sim::ScenarioId;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "shiftbench", version, about = "Worst-case loss under distribution shift")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate the loss gradient and Hessian in the shift parameters.
    Estimate {
        #[command(flatten)]
        source: SourceArgs,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Maximize the second-order loss estimate over a constraint set.
    WorstCase {
        /// Curvature estimate JSON, or a stored estimate run record.
        #[arg(long, conflicts_with_all = ["scenario", "config"])]
        estimate: Option<PathBuf>,
        #[command(flatten)]
        source: SourceArgs,
        /// Radius of the Euclidean ball.
        #[arg(long, allow_negative_numbers = true, conflicts_with = "constraint")]
        lambda: Option<f64>,
        /// Constraint JSON file.
        #[arg(long)]
        constraint: Option<PathBuf>,
        /// Simulate the loss at δ* with this many draws (scenarios only).
        #[arg(long)]
        validate: Option<usize>,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Evaluate the estimate (and optionally simulated truth) on a grid.
    Sweep {
        /// Sweep request JSON file.
        #[arg(long)]
        request: PathBuf,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Run a simulation experiment.
    Simulate {
        #[arg(long, value_enum)]
        experiment: Experiment,
        /// Experiment config JSON; defaults apply to omitted fields.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory for the experiment's CSV files.
        #[arg(long)]
        plot_data: Option<PathBuf>,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Serve the JSON API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
        #[arg(long, default_value = "runs")]
        runs: PathBuf,
    },
}

#[derive(Args)]
struct SourceArgs {
    /// Built-in scenario to sample from.
    #[arg(long, value_parser = parse_scenario)]
    scenario: Option<ScenarioId>,
    /// Model config JSON.
    #[arg(long, requires = "data")]
    config: Option<PathBuf>,
    /// CSV sample with a `__loss` column.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Draws from the scenario.
    #[arg(long, default_value_t = ops::DEFAULT_DRAWS)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fit auxiliaries and average residuals on disjoint halves.
    #[arg(long)]
    sample_split: bool,
}

#[derive(Args)]
struct OutputArgs {
    /// Write the run record here.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
    /// Also append the run record to this store.
    #[arg(long)]
    runs: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Format {
    Text,
    Json,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum Experiment {
    Fig3,
    IsVsTaylor,
    Attributes31,
}

fn parse_scenario(s: &str) -> Result<ScenarioId, String> {
    s.parse::<ScenarioId>().map_err(|e| e.to_string())
}

fn read(path: &Path) -> Result<String, WorkbenchError> {
    std::fs::read_to_string(path).map_err(|e| WorkbenchError::Io(format!("{}: {e}", path.display())))
}

fn io(e: impl std::fmt::Display) -> WorkbenchError {
    WorkbenchError::Io(e.to_string())
}

impl SourceArgs {
    fn request(&self) -> Result<EstimateRequest, WorkbenchError> {
        let mut req = EstimateRequest {
            scenario: self.scenario,
            model: None,
            model_id: None,
            data_csv: None,
            n: self.n,
            seed: self.seed,
            estimation: EstimationConfig { sample_split: self.sample_split, ..EstimationConfig::default() },
        };
        if let Some(path) = &self.config {
            req.model = Some(parse_json(&read(path)?).map_err(|e| e.under("/model"))?);
        }
        if let Some(path) = &self.data {
            req.data_csv = Some(read(path)?);
        }
        Ok(req)
    }
}

fn open_store(out: &OutputArgs) -> Result<Option<RunStore>, WorkbenchError> {
    out.runs.as_ref().map(RunStore::open).transpose()
}

fn emit(run: &RunRecord, out: &OutputArgs, text: impl FnOnce() -> String, csv: impl FnOnce() -> Result<String, WorkbenchError>) -> Result<(), WorkbenchError> {
    let json = serde_json::to_string_pretty(run).map_err(io)?;
    if let Some(path) = &out.out {
        std::fs::write(path, format!("{json}\n")).map_err(|e| WorkbenchError::Io(format!("{}: {e}", path.display())))?;
    }
    match out.format {
        Format::Json => println!("{json}"),
        Format::Csv => print!("{}", csv()?),
        Format::Text => {
            println!("run {} ({})", run.run_id, run.kind);
            print!("{}", text());
        }
    }
    Ok(())
}

fn result<T: serde::de::DeserializeOwned>(run: &RunRecord) -> Result<T, WorkbenchError> {
    serde_json::from_value(run.result.clone()).map_err(io)
}

fn estimate_text(curv: &CurvatureEstimate) -> String {
    let mut s = format!("training loss {:.6}  (n = {}, d = {})\n", curv.base_loss, curv.n, curv.dim());
    s.push_str("largest |sg1|:\n");
    for (label, g) in ops::top_coordinates(curv, 10) {
        s.push_str(&format!("  {g:>+12.6}  {label}\n"));
    }
    s
}

fn estimate_csv(curv: &CurvatureEstimate) -> Result<String, WorkbenchError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["label", "sg1", "sg2_diag"]).map_err(io)?;
    for (i, label) in curv.labels().iter().enumerate() {
        w.write_record([label.clone(), curv.sg1[i].to_string(), curv.sg2[i][i].to_string()]).map_err(io)?;
    }
    String::from_utf8(w.into_inner().map_err(io)?).map_err(io)
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"))
}

fn worst_case_text(out: &ops::WorstCaseOutcome) -> String {
    let tr = &out.trust_region;
    let mut s = format!(
        "training loss {:.6}\npredicted worst-case loss {:.6}  (gain {:+.6}, ‖δ*‖ = {:.4})\n",
        out.estimate.base_loss,
        tr.predicted_loss,
        tr.gain,
        tr.delta_star.iter().map(|x| x * x).sum::<f64>().sqrt()
    );
    s.push_str(&format!("KKT residual {:.2e}, on boundary: {}{}\n", tr.kkt_residual, tr.on_boundary, if tr.approximate { ", approximate" } else { "" }));
    if let Some(v) = &out.validation {
        s.push_str(&format!("simulated loss at δ* {:.6} ± {:.6}\n", v.mean, v.std_error));
    }
    s.push_str(&format!("{:>10}  {:>8}  {:>8}  label\n", "delta", "P", "P_delta"));
    for r in &out.coordinates {
        s.push_str(&format!("{:>+10.4}  {:>8}  {:>8}  {}\n", r.delta, fmt_opt(r.p), fmt_opt(r.p_delta), r.label));
    }
    s
}

fn worst_case_csv(out: &ops::WorstCaseOutcome) -> Result<String, WorkbenchError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["label", "delta", "p", "p_delta"]).map_err(io)?;
    let opt = |x: Option<f64>| x.map_or(String::new(), |v| v.to_string());
    for r in &out.coordinates {
        w.write_record([r.label.clone(), r.delta.to_string(), opt(r.p), opt(r.p_delta)]).map_err(io)?;
    }
    String::from_utf8(w.into_inner().map_err(io)?).map_err(io)
}

/// Reads a curvature estimate, or the source of a stored estimate run.
fn estimate_input(path: &Path) -> Result<(Option<CurvatureEstimate>, Option<EstimateRequest>), WorkbenchError> {
    let text = read(path)?;
    let value: Value = parse_json(&text)?;
    if value.get("run_id").is_some() {
        let run: RunRecord = parse_json(&text)?;
        if run.kind != "estimate" {
            return Err(WorkbenchError::bad("/kind", format!("expected an estimate run, got {}", run.kind)));
        }
        let source = serde_json::from_value(run.config).map_err(|e| WorkbenchError::bad("/config", e.to_string()))?;
        return Ok((None, Some(source)));
    }
    Ok((Some(parse_json(&text)?), None))
}

fn run(cli: Cli) -> Result<(), WorkbenchError> {
    match cli.command {
        Command::Estimate { source, out } => {
            let store = open_store(&out)?;
            let run = ops::estimate_run(source.request()?, store.as_ref())?;
            let curv: CurvatureEstimate = result(&run)?;
            emit(&run, &out, || estimate_text(&curv), || estimate_csv(&curv))
        }
        Command::WorstCase { estimate, source, lambda, constraint, validate, out } => {
            let store = open_store(&out)?;
            let constraint: ConstraintSpec = match (lambda, constraint) {
                (Some(l), None) => ConstraintSpec::ball(l),
                (None, Some(path)) => parse_json(&read(&path)?).map_err(|e| e.under("/constraint"))?,
                _ => return Err(WorkbenchError::bad("/constraint", "give --lambda or --constraint")),
            };
            let (estimate, source) = match estimate {
                Some(path) => estimate_input(&path)?,
                None => (None, Some(source.request()?)),
            };
            let seed = source.as_ref().map_or(0, |s| s.seed);
            let req = WorstCaseRequest {
                estimate,
                estimate_run: None,
                source,
                constraint,
                validate: validate.map(|n| ops::McConfig { n, seed }),
            };
            let run = ops::worst_case_run(req, store.as_ref())?;
            let outcome: ops::WorstCaseOutcome = result(&run)?;
            emit(&run, &out, || worst_case_text(&outcome), || worst_case_csv(&outcome))
        }
        Command::Sweep { request, out } => {
            let store = open_store(&out)?;
            let req: SweepRequest = parse_json(&read(&request)?)?;
            let coords = req.coords.clone();
            let run = ops::sweep_run(req, store.as_ref())?;
            let outcome: ops::SweepOutcome = result(&run)?;
            let table = outcome.csv(&coords);
            emit(&run, &out, || format!("{} points\n{table}", outcome.points.len()), || Ok(outcome.csv(&coords)))
        }
        Command::Simulate { experiment, config, plot_data, out } => {
            let store = open_store(&out)?;
            let config = match &config {
                Some(path) => read(path)?,
                None => "{}".to_string(),
            };
            let name = match experiment {
                Experiment::Fig3 => "fig3",
                Experiment::IsVsTaylor => "is_vs_taylor",
                Experiment::Attributes31 => "attributes31",
            };
            let wrapped = format!("{{\"experiment\": \"{name}\", \"config\": {config}}}");
            let req: SimulateRequest = parse_json(&wrapped)?;
            let (run, files) = ops::simulate_run(req, store.as_ref())?;
            if let Some(dir) = &plot_data {
                std::fs::create_dir_all(dir).map_err(io)?;
                for (file, body) in &files {
                    std::fs::write(dir.join(file), body).map_err(io)?;
                }
            }
            let first = files.first().map(|(_, b)| b.clone()).unwrap_or_default();
            emit(&run, &out, || files.iter().map(|(f, _)| format!("wrote {f}\n")).collect(), || Ok(first))
        }
        Command::Serve { addr, runs } => {
            let store = RunStore::open(&runs)?;
            let rt = tokio::runtime::Runtime::new().map_err(io)?;
            rt.block_on(shiftbench::http::serve(store, &addr))
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match e.pointer() {
                Some(p) if !p.is_empty() => eprintln!("error at {p}: {e}"),
                _ => eprintln!("error: {e}"),
            }
            ExitCode::from(match e {
                WorkbenchError::BadRequest { .. } => 2,
                _ => 1,
            })
        }
    }
}
