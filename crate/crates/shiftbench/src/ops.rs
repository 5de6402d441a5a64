//! One code path per operation, shared by the CLI and the HTTP service.
//!
//! Requests may name stored objects (`model_id`, `estimate_run`); `resolve_*`
//! replaces those references with their content so that the persisted config
//! echo is self-contained and the run id does not depend on how a request
//! arrived.

use crate::error::WorkbenchError;
use crate::store::{RunRecord, RunStore};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use shiftbench_core::estimation::{estimate_curvature, taylor_estimate, CurvatureEstimate, EstimationConfig};
use shiftbench_core::families::{sigmoid, FamilySpec};
use shiftbench_core::model::{ModelConfig, ShiftModel};
use shiftbench_core::rng;
use shiftbench_core::table::SampleTable;
use shiftbench_core::worst_case::{self, ConstraintSpec, TrustRegionResult};
use shiftbench_sim::experiments::{
    run_attributes31, run_fig3, run_is_vs_taylor, Attributes31Config, Fig3Config, IsVsTaylorConfig,
};
use shiftbench_sim::{mc_ground_truth, GroundTruth, Scenario, ScenarioId, ScenarioOptions};

pub const DEFAULT_DRAWS: usize = 10_000;

fn default_draws() -> usize {
    DEFAULT_DRAWS
}

fn is_default<T: Default + PartialEq>(x: &T) -> bool {
    *x == T::default()
}

/// Where the sample and model come from: a built-in scenario, or a model
/// config with a CSV whose `__loss` column holds per-row losses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateRequest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<ScenarioId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelConfig>,
    /// Reference to a registered model; replaced by `model` on resolution.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_csv: Option<String>,
    /// Draws from the scenario at δ = 0.
    #[serde(default = "default_draws")]
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "is_default")]
    pub estimation: EstimationConfig,
}

impl EstimateRequest {
    pub fn scenario(id: ScenarioId, n: usize, seed: u64) -> EstimateRequest {
        EstimateRequest { scenario: Some(id), model: None, model_id: None, data_csv: None, n, seed, estimation: EstimationConfig::default() }
    }
}

/// A built model, plus the scenario when the request named one.
pub struct Source {
    pub model: ShiftModel,
    pub scenario: Option<Scenario>,
}

impl EstimateRequest {
    pub fn resolve(mut self, store: Option<&RunStore>) -> Result<EstimateRequest, WorkbenchError> {
        if let Some(id) = self.model_id.take() {
            if self.model.is_some() {
                return Err(WorkbenchError::bad("/model_id", "give either model or model_id"));
            }
            let store = store.ok_or_else(|| WorkbenchError::bad("/model_id", "model references need a run store"))?;
            self.model = Some(store.model(&id).map_err(|e| match e {
                WorkbenchError::NotFound(m) => WorkbenchError::bad("/model_id", m),
                other => other,
            })?);
        }
        Ok(self)
    }

    pub fn source(&self) -> Result<Source, WorkbenchError> {
        match (&self.scenario, &self.model) {
            (Some(id), None) => {
                if self.data_csv.is_some() {
                    return Err(WorkbenchError::bad("/data_csv", "scenarios generate their own data"));
                }
                let s = Scenario::builtin(*id, &ScenarioOptions::default())?;
                Ok(Source { model: s.model.clone(), scenario: Some(s) })
            }
            (None, Some(config)) => Ok(Source { model: ShiftModel::new(config.clone()).map_err(|e| WorkbenchError::from(e).under("/model"))?, scenario: None }),
            (Some(_), Some(_)) => Err(WorkbenchError::bad("/scenario", "give either scenario or model")),
            (None, None) => Err(WorkbenchError::bad("", "a scenario or a model is required")),
        }
    }

    fn table(&self, src: &Source) -> Result<SampleTable, WorkbenchError> {
        match (&src.scenario, &self.data_csv) {
            (Some(s), _) => {
                if self.n < 2 {
                    return Err(WorkbenchError::bad("/n", "at least 2 draws are needed"));
                }
                let mut r = rng::stream(self.seed, "workbench/sample", 0);
                Ok(s.sample(&vec![0.0; s.model.d_delta()], self.n, &mut r)?)
            }
            (None, Some(text)) => {
                SampleTable::from_csv_reader(text.as_bytes()).map_err(|e| WorkbenchError::bad("/data_csv", e.to_string()))
            }
            (None, None) => Err(WorkbenchError::bad("/data_csv", "a model needs data")),
        }
    }
}

pub fn estimate(req: &EstimateRequest) -> Result<(Source, CurvatureEstimate), WorkbenchError> {
    let src = req.source()?;
    let table = req.table(&src)?;
    let curv = estimate_curvature(&src.model, &table, &req.estimation)?;
    Ok((src, curv))
}

/// Coordinates ordered by `|sg¹|`, largest first.
pub fn top_coordinates(curv: &CurvatureEstimate, k: usize) -> Vec<(String, f64)> {
    let labels = curv.labels();
    let mut idx: Vec<usize> = (0..curv.dim()).collect();
    idx.sort_by(|&a, &b| curv.sg1[b].abs().total_cmp(&curv.sg1[a].abs()).then(a.cmp(&b)));
    idx.into_iter().take(k).map(|i| (labels[i].clone(), curv.sg1[i])).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McConfig {
    #[serde(default = "default_mc_draws")]
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_mc_draws() -> usize {
    100_000
}

/// Curvature input shared by worst-case and sweep requests: exactly one of
/// an inline estimate, a stored estimate run or an estimate request.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorstCaseRequest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimate: Option<CurvatureEstimate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimate_run: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<EstimateRequest>,
    pub constraint: ConstraintSpec,
    /// Simulate the loss at δ* (scenario sources only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validate: Option<McConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepRequest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimate: Option<CurvatureEstimate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimate_run: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<EstimateRequest>,
    /// One or two δ coordinates to vary.
    pub coords: Vec<usize>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub steps: Vec<usize>,
    /// Values of the other coordinates; zero by default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base: Option<Vec<f64>>,
    /// Simulated truth at every grid point (scenario sources only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<McConfig>,
}

fn resolve_curvature_input(
    estimate: &mut Option<CurvatureEstimate>,
    estimate_run: &mut Option<String>,
    source: &mut Option<EstimateRequest>,
    store: Option<&RunStore>,
) -> Result<(), WorkbenchError> {
    if let Some(id) = estimate_run.take() {
        let store = store.ok_or_else(|| WorkbenchError::bad("/estimate_run", "run references need a run store"))?;
        let run = store.get(&id).map_err(|e| match e {
            WorkbenchError::NotFound(m) => WorkbenchError::bad("/estimate_run", m),
            other => other,
        })?;
        if run.kind != "estimate" {
            return Err(WorkbenchError::bad("/estimate_run", format!("run '{id}' is a {} run", run.kind)));
        }
        if estimate.is_some() || source.is_some() {
            return Err(WorkbenchError::bad("/estimate_run", "give one of estimate, estimate_run and source"));
        }
        *source = Some(serde_json::from_value(run.config).map_err(|e| WorkbenchError::Io(e.to_string()))?);
    }
    if let Some(s) = source.take() {
        *source = Some(s.resolve(store).map_err(|e| e.under("/source"))?);
    }
    match (estimate.is_some(), source.is_some()) {
        (true, false) | (false, true) => Ok(()),
        _ => Err(WorkbenchError::bad("", "give one of estimate, estimate_run and source")),
    }
}

impl WorstCaseRequest {
    pub fn resolve(mut self, store: Option<&RunStore>) -> Result<WorstCaseRequest, WorkbenchError> {
        resolve_curvature_input(&mut self.estimate, &mut self.estimate_run, &mut self.source, store)?;
        Ok(self)
    }
}

impl SweepRequest {
    pub fn resolve(mut self, store: Option<&RunStore>) -> Result<SweepRequest, WorkbenchError> {
        resolve_curvature_input(&mut self.estimate, &mut self.estimate_run, &mut self.source, store)?;
        Ok(self)
    }
}

fn curvature_input(inline: &Option<CurvatureEstimate>, source: &Option<EstimateRequest>) -> Result<(Option<Source>, CurvatureEstimate), WorkbenchError> {
    match (inline, source) {
        (Some(c), None) => {
            c.validate().map_err(|e| WorkbenchError::bad("/estimate", e.to_string()))?;
            Ok((None, c.clone()))
        }
        (None, Some(req)) => {
            let (src, c) = estimate(req).map_err(|e| e.under("/source"))?;
            Ok((Some(src), c))
        }
        _ => Err(WorkbenchError::bad("", "give one of estimate, estimate_run and source")),
    }
}

/// One row of the named δ* table: `P` and `P_δ` for Bernoulli per-stratum
/// and constant shifts on parentless variables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoordinateRow {
    pub label: String,
    pub delta: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_delta: Option<f64>,
}

fn stratum_record(model: &ShiftModel, label: &str) -> Option<Vec<f64>> {
    let mut record = vec![0.0; model.record_width()];
    let Some((_, assignments)) = label.split_once(" | ") else {
        return Some(record);
    };
    for part in assignments.split(", ") {
        let (name, value) = part.split_once('=')?;
        let i = model.var_index(name).ok()?;
        record[model.columns_of(i).start] = value.parse().ok()?;
    }
    Some(record)
}

pub fn coordinate_rows(model: Option<&ShiftModel>, curv: &CurvatureEstimate, delta: &[f64]) -> Vec<CoordinateRow> {
    let mut rows = Vec::with_capacity(delta.len());
    for block in &curv.block_index {
        for (k, label) in block.labels.iter().enumerate() {
            let j = block.offset + k;
            let mut row = CoordinateRow { label: label.clone(), delta: delta[j], p: None, p_delta: None };
            if let Some(m) = model {
                if let Ok(i) = m.var_index(&block.variable) {
                    let record = match block.form.as_str() {
                        "per_stratum" => stratum_record(m, label),
                        "constant" if m.parents(i).is_empty() => Some(vec![0.0; m.record_width()]),
                        _ => None,
                    };
                    if let (FamilySpec::BernoulliLogit, Some(r)) = (m.family(i), record) {
                        if let Ok(eta) = m.eta(i, &r) {
                            row.p = Some(sigmoid(eta[0]));
                            row.p_delta = Some(sigmoid(eta[0] + delta[j]));
                        }
                    }
                }
            }
            rows.push(row);
        }
    }
    rows
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorstCaseOutcome {
    pub estimate: CurvatureEstimate,
    pub trust_region: TrustRegionResult,
    pub coordinates: Vec<CoordinateRow>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation: Option<GroundTruth>,
}

pub fn worst_case(req: &WorstCaseRequest) -> Result<WorstCaseOutcome, WorkbenchError> {
    let (src, curv) = curvature_input(&req.estimate, &req.source)?;
    req.constraint.validate(curv.dim()).map_err(|e| WorkbenchError::from(e))?;
    let tr = worst_case::solve(&curv, &req.constraint)?;
    let validation = match (&req.validate, src.as_ref().and_then(|s| s.scenario.as_ref())) {
        (Some(mc), Some(s)) => Some(mc_ground_truth(s, &tr.delta_star, mc.n, mc.seed, false).map_err(|e| WorkbenchError::from(e).under("/validate"))?),
        (Some(_), None) => return Err(WorkbenchError::bad("/validate", "validation needs a scenario source")),
        (None, _) => None,
    };
    let coordinates = coordinate_rows(src.as_ref().map(|s| &s.model), &curv, &tr.delta_star);
    Ok(WorstCaseOutcome { estimate: curv, trust_region: tr, coordinates, validation })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub delta: Vec<f64>,
    pub taylor: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth_se: Option<f64>,
    /// Set when the simulated truth is undefined at this point.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gap: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepOutcome {
    pub labels: Vec<String>,
    pub base_loss: f64,
    pub points: Vec<SweepPoint>,
}

pub const MAX_SWEEP_POINTS: usize = 100_000;

pub fn sweep(req: &SweepRequest) -> Result<SweepOutcome, WorkbenchError> {
    let k = req.coords.len();
    if !(1..=2).contains(&k) {
        return Err(WorkbenchError::bad("/coords", "sweep one or two coordinates"));
    }
    if req.lower.len() != k || req.upper.len() != k || req.steps.len() != k {
        return Err(WorkbenchError::bad("/lower", "lower, upper and steps need one entry per coordinate"));
    }
    for i in 0..k {
        if !(req.lower[i].is_finite() && req.upper[i].is_finite() && req.lower[i] <= req.upper[i]) {
            return Err(WorkbenchError::bad(format!("/lower/{i}"), "bounds must be finite with lower ≤ upper"));
        }
        if req.steps[i] < 2 {
            return Err(WorkbenchError::bad(format!("/steps/{i}"), "at least 2 grid points per coordinate"));
        }
    }
    if req.steps.iter().product::<usize>() > MAX_SWEEP_POINTS {
        return Err(WorkbenchError::bad("/steps", format!("at most {MAX_SWEEP_POINTS} grid points")));
    }
    let (src, curv) = curvature_input(&req.estimate, &req.source)?;
    let d = curv.dim();
    if let Some(i) = req.coords.iter().position(|&c| c >= d) {
        return Err(WorkbenchError::bad(format!("/coords/{i}"), format!("δ has {d} coordinates")));
    }
    if k == 2 && req.coords[0] == req.coords[1] {
        return Err(WorkbenchError::bad("/coords/1", "coordinates must differ"));
    }
    let base = req.base.clone().unwrap_or_else(|| vec![0.0; d]);
    if base.len() != d {
        return Err(WorkbenchError::bad("/base", format!("expected {d} entries")));
    }
    let scenario = src.as_ref().and_then(|s| s.scenario.as_ref());
    if req.truth.is_some() && scenario.is_none() {
        return Err(WorkbenchError::bad("/truth", "simulated truth needs a scenario source"));
    }
    let axis = |i: usize| -> Vec<f64> {
        let (lo, hi, n) = (req.lower[i], req.upper[i], req.steps[i]);
        (0..n).map(|j| lo + (hi - lo) * j as f64 / (n - 1) as f64).collect()
    };
    let axes: Vec<Vec<f64>> = (0..k).map(axis).collect();
    let mut points = Vec::new();
    let second = if k == 2 { axes[1].clone() } else { vec![f64::NAN] };
    for &a in &axes[0] {
        for &b in &second {
            let mut delta = base.clone();
            delta[req.coords[0]] = a;
            if k == 2 {
                delta[req.coords[1]] = b;
            }
            let taylor = taylor_estimate(&curv, &delta)?;
            let mut p = SweepPoint { delta, taylor, truth: None, truth_se: None, gap: None };
            if let (Some(mc), Some(s)) = (&req.truth, scenario) {
                match mc_ground_truth(s, &p.delta, mc.n, mc.seed, false) {
                    Ok(g) => {
                        p.truth = Some(g.mean);
                        p.truth_se = Some(g.std_error);
                    }
                    Err(e) => p.gap = Some(e.to_string()),
                }
            }
            points.push(p);
        }
    }
    let labels = curv.labels();
    Ok(SweepOutcome { labels: req.coords.iter().map(|&c| labels[c].clone()).collect(), base_loss: curv.base_loss, points })
}

impl SweepOutcome {
    pub fn csv(&self, coords: &[usize]) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header: Vec<String> = self.labels.clone();
        header.extend(["taylor", "truth", "truth_se", "gap"].map(String::from));
        w.write_record(&header).expect("in-memory write");
        for p in &self.points {
            let mut row: Vec<String> = coords.iter().map(|&c| p.delta[c].to_string()).collect();
            row.push(p.taylor.to_string());
            row.push(p.truth.map_or(String::new(), |x| x.to_string()));
            row.push(p.truth_se.map_or(String::new(), |x| x.to_string()));
            row.push(p.gap.clone().unwrap_or_default());
            w.write_record(&row).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "experiment", content = "config", rename_all = "snake_case")]
pub enum SimulateRequest {
    Fig3(Fig3Config),
    IsVsTaylor(IsVsTaylorConfig),
    Attributes31(Attributes31Config),
}

/// Runs an experiment; returns the record and its plot-data CSV files.
pub fn simulate(req: &SimulateRequest) -> Result<(Value, Vec<(String, String)>), WorkbenchError> {
    let to_value = |v: Result<Value, serde_json::Error>| v.map_err(|e| WorkbenchError::Io(e.to_string()));
    Ok(match req {
        SimulateRequest::Fig3(c) => {
            let r = run_fig3(c)?;
            (to_value(serde_json::to_value(&r))?, vec![("fig3_sweep.csv".into(), r.sweep_csv())])
        }
        SimulateRequest::IsVsTaylor(c) => {
            let r = run_is_vs_taylor(c)?;
            (to_value(serde_json::to_value(&r))?, vec![("is_vs_taylor.csv".into(), r.csv())])
        }
        SimulateRequest::Attributes31(c) => {
            let r = run_attributes31(c)?;
            (
                to_value(serde_json::to_value(&r))?,
                vec![("attributes31.csv".into(), r.csv()), ("attributes31_sweep.csv".into(), r.sweep_csv())],
            )
        }
    })
}

fn record<T: Serialize, R: Serialize>(kind: &str, config: &T, result: &R) -> Result<RunRecord, WorkbenchError> {
    let c = serde_json::to_value(config).map_err(|e| WorkbenchError::Io(e.to_string()))?;
    let r = serde_json::to_value(result).map_err(|e| WorkbenchError::Io(e.to_string()))?;
    Ok(RunRecord::new(kind, c, r))
}

/// Resolves, runs and records an estimate request.
pub fn estimate_run(req: EstimateRequest, store: Option<&RunStore>) -> Result<RunRecord, WorkbenchError> {
    let req = req.resolve(store)?;
    let (_, curv) = estimate(&req)?;
    persist(record("estimate", &req, &curv)?, store)
}

pub fn worst_case_run(req: WorstCaseRequest, store: Option<&RunStore>) -> Result<RunRecord, WorkbenchError> {
    let req = req.resolve(store)?;
    let out = worst_case(&req)?;
    persist(record("worst_case", &req, &out)?, store)
}

pub fn sweep_run(req: SweepRequest, store: Option<&RunStore>) -> Result<RunRecord, WorkbenchError> {
    let req = req.resolve(store)?;
    let out = sweep(&req)?;
    persist(record("sweep", &req, &out)?, store)
}

pub fn simulate_run(req: SimulateRequest, store: Option<&RunStore>) -> Result<(RunRecord, Vec<(String, String)>), WorkbenchError> {
    let (result, files) = simulate(&req)?;
    let c = serde_json::to_value(&req).map_err(|e| WorkbenchError::Io(e.to_string()))?;
    Ok((persist(RunRecord::new("simulate", c, result), store)?, files))
}

fn persist(r: RunRecord, store: Option<&RunStore>) -> Result<RunRecord, WorkbenchError> {
    match store {
        Some(s) => s.append(r),
        None => Ok(r),
    }
}

/// Re-executes a stored run from its config echo.
pub fn replay(run: &RunRecord) -> Result<RunRecord, WorkbenchError> {
    let text = run.config.to_string();
    let parse_err = |e: WorkbenchError| e.under("/config");
    match run.kind.as_str() {
        "estimate" => estimate_run(crate::error::parse_json(&text).map_err(parse_err)?, None),
        "worst_case" => worst_case_run(crate::error::parse_json(&text).map_err(parse_err)?, None),
        "sweep" => sweep_run(crate::error::parse_json(&text).map_err(parse_err)?, None),
        "simulate" => Ok(simulate_run(crate::error::parse_json(&text).map_err(parse_err)?, None)?.0),
        other => Err(WorkbenchError::bad("/kind", format!("unknown run kind '{other}'"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;
    use shiftbench_core::worst_case::Constraint;

    #[test]
    fn constant_loss_gives_a_zero_estimate() {
        let model: ModelConfig = serde_json::from_value(json!({
            "schema_version": 1,
            "variables": [
                {"name": "Z", "family": {"kind": "bernoulli_logit"}, "eta": {"form": "constant", "eta": [0.2]}},
                {"name": "W", "family": {"kind": "bernoulli_logit"}, "parents": ["Z"], "eta": {"form": "table", "table": [[-0.5], [0.5]]}}
            ],
            "interventions": [{"variable": "W", "shift": {"form": "per_stratum"}}]
        }))
        .unwrap();
        let mut csv = String::from("Z,W,__loss\n");
        for i in 0..40 {
            csv.push_str(&format!("{},{},0.5\n", i % 2, (i / 2) % 2));
        }
        let req = EstimateRequest { model: Some(model), data_csv: Some(csv), ..EstimateRequest::scenario(ScenarioId::Gauss1d, 10, 0) };
        let req = EstimateRequest { scenario: None, ..req };
        let (_, curv) = estimate(&req).unwrap();
        assert_eq!(curv.base_loss, 0.5);
        assert!(curv.sg1.iter().all(|x| *x == 0.0));
        assert!(curv.sg2.iter().flatten().all(|x| *x == 0.0));
    }

    #[test]
    fn bernoulli_rows_carry_base_and_shifted_probabilities() {
        let req = WorstCaseRequest {
            estimate: None,
            estimate_run: None,
            source: Some(EstimateRequest::scenario(ScenarioId::Attributes31, 2000, 1)),
            constraint: ConstraintSpec::ball(2.0),
            validate: None,
        };
        let out = worst_case(&req).unwrap();
        let bald = out.coordinates.iter().find(|r| r.label == "Bald | Male=1, Young=0").unwrap();
        let p = sigmoid(-3.0 + 3.5);
        assert!((bald.p.unwrap() - p).abs() < 1e-15);
        assert!((bald.p_delta.unwrap() - sigmoid(0.5 + bald.delta)).abs() < 1e-15);
        let young = out.coordinates.iter().find(|r| r.label.starts_with("Young")).unwrap();
        assert_eq!(young.p, Some(0.5));
        assert_eq!(out.coordinates.len(), 31);
    }

    #[test]
    fn zero_radius_is_a_domain_error() {
        let req = WorstCaseRequest {
            estimate: None,
            estimate_run: None,
            source: Some(EstimateRequest::scenario(ScenarioId::Gauss1d, 100, 0)),
            constraint: ConstraintSpec::ball(0.0),
            validate: None,
        };
        let err = worst_case(&req).unwrap_err();
        assert_eq!(err.pointer(), Some("/constraint"));
    }

    #[test]
    fn sweep_includes_the_training_point() {
        let req = SweepRequest {
            estimate: None,
            estimate_run: None,
            source: Some(EstimateRequest::scenario(ScenarioId::LabtestSmall, 2000, 3)),
            coords: vec![0, 1],
            lower: vec![-1.0, -1.0],
            upper: vec![1.0, 1.0],
            steps: vec![5, 3],
            base: None,
            truth: Some(McConfig { n: 500, seed: 1 }),
        };
        let out = sweep(&req).unwrap();
        assert_eq!(out.points.len(), 15);
        let origin = out.points.iter().find(|p| p.delta == [0.0, 0.0]).unwrap();
        assert_eq!(origin.taylor, out.base_loss);
        assert!(origin.truth.is_some());
        assert_eq!(out.csv(&req.coords).lines().count(), 16);
        let bad = SweepRequest { coords: vec![0, 5], ..req.clone() };
        assert_eq!(sweep(&bad).unwrap_err().pointer(), Some("/coords/1"));
    }

    #[test]
    fn runs_replay_bit_identically() {
        let req = WorstCaseRequest {
            estimate: None,
            estimate_run: None,
            source: Some(EstimateRequest::scenario(ScenarioId::LabtestSmall, 1000, 5)),
            constraint: Constraint::Box { lower: vec![-1.0, -0.5], upper: vec![1.0, 0.5] }.into(),
            validate: Some(McConfig { n: 1000, seed: 2 }),
        };
        let run = worst_case_run(req, None).unwrap();
        let again = replay(&run).unwrap();
        assert_eq!(again.run_id, run.run_id);
        assert_eq!(again.result, run.result);
    }
}
