//! Experiment runners: the lab-testing sweep, IS-versus-Taylor variance
//! tables and the attribute-network comparison.

use crate::scenario::{Scenario, ScenarioId, ScenarioOptions};
use crate::truth::{mc_ground_truth, GroundTruth};
use crate::SimError;
use serde::{Deserialize, Serialize};
use shiftbench_core::estimation::{
    known_model_residuals, residuals, weighted_mean, CurvatureEstimate, EstimationConfig, ImportanceSampler, Residuals,
};
use shiftbench_core::rng;
use shiftbench_core::table::SampleTable;
use shiftbench_core::worst_case::{self, Constraint, ConstraintSpec, SearchConfig, TrustRegionResult};
use std::time::Instant;

/// Exact `E_δ[ℓ]` when the scenario has one: enumeration for discrete
/// models, the closed form for the anchor scenario and `δ` for `gauss1d`.
pub fn exact_truth(scenario: &Scenario, delta: &[f64]) -> Result<Option<f64>, SimError> {
    if let Some(a) = &scenario.anchor {
        if scenario.loss == crate::LossKind::Squared {
            return Ok(Some(a.closed_form(delta)));
        }
    }
    if scenario.id == Some(ScenarioId::Gauss1d) && scenario.loss == crate::LossKind::Value {
        return Ok(Some(delta[0]));
    }
    if scenario.model.is_fully_discrete() {
        return Ok(Some(mc_ground_truth(scenario, delta, 0, 0, true)?.mean));
    }
    Ok(None)
}

fn csv_string(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(&r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
}

fn f(x: f64) -> String {
    format!("{x}")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fig3Config {
    #[serde(default)]
    pub seed: u64,
    /// Rows of the validation sample used for the curvature estimate.
    #[serde(default = "default_draws")]
    pub n_val: usize,
    /// Draws per grid point for the simulated truth.
    #[serde(default = "default_draws")]
    pub n_truth: usize,
    #[serde(default = "default_fig3_step")]
    pub step: f64,
    #[serde(default = "default_fig3_range")]
    pub range: f64,
    /// Half-width of the box searched for the worst case.
    #[serde(default = "default_fig3_box")]
    pub box_half_width: f64,
    /// Target testing rates for the reparameterized sweep.
    #[serde(default = "default_rates")]
    pub rates: Vec<f64>,
    #[serde(default)]
    pub scenario: ScenarioOptions,
}

fn default_draws() -> usize {
    100_000
}
fn default_fig3_step() -> f64 {
    0.1
}
fn default_fig3_range() -> f64 {
    3.0
}
fn default_fig3_box() -> f64 {
    2.0
}
fn default_rates() -> Vec<f64> {
    (1..20).map(|i| i as f64 * 0.05).collect()
}

impl Default for Fig3Config {
    fn default() -> Self {
        serde_json::from_value(serde_json::json!({})).expect("defaults")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub delta0: f64,
    /// Sample-averaged testing rate under the shift.
    pub rate: f64,
    pub truth: GroundTruth,
    pub taylor: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fig3Record {
    pub config: Fig3Config,
    pub curvature: CurvatureEstimate,
    pub sweep: Vec<CurvePoint>,
    pub rate_sweep: Vec<CurvePoint>,
    pub worst_case: TrustRegionResult,
    /// Grid point in the box with the largest simulated loss.
    pub mc_argmax: f64,
    /// `P(O = 1 | Y = 0)` and `P(O = 1 | Y = 1)` in the validation sample.
    pub base_rates: [f64; 2],
    pub base_counts: [usize; 2],
}

impl Fig3Record {
    pub fn sweep_csv(&self) -> String {
        let rows = self.sweep.iter().chain(&self.rate_sweep).enumerate().map(|(i, p)| {
            let panel = if i < self.sweep.len() { "delta" } else { "rate" };
            vec![panel.into(), f(p.delta0), f(p.rate), f(p.truth.mean), f(p.truth.std_error), f(p.taylor)]
        });
        csv_string(&["panel", "delta0", "rate", "truth", "truth_se", "taylor"], rows)
    }
}

fn grid(range: f64, step: f64) -> Vec<f64> {
    let k = (range / step).round() as i64;
    (-k..=k).map(|i| i as f64 * step).collect()
}

/// Loss of the lab-testing model with age as the ordering rate moves through
/// `δ₀` (with `δ₁ = 0`), against the Taylor surrogate fitted on one sample.
pub fn run_fig3(config: &Fig3Config) -> Result<Fig3Record, SimError> {
    if !(config.step > 0.0 && config.range > 0.0 && config.box_half_width > 0.0) {
        return Err(SimError::Config("step, range and box_half_width must be positive".into()));
    }
    let s = Scenario::builtin(ScenarioId::LabtestAge, &config.scenario)?;
    let mut r = rng::stream(config.seed, "sim/fig3/validation", 0);
    let val = s.sample(&[0.0, 0.0], config.n_val, &mut r)?;
    let curv = shiftbench_core::estimation::estimate_curvature(&s.model, &val, &EstimationConfig::default())?;
    let truth_seed = rng::derive_seed(config.seed, "sim/fig3/truth", 0);
    let point = |d0: f64| -> Result<CurvePoint, SimError> {
        let delta = [d0, 0.0];
        Ok(CurvePoint {
            delta0: d0,
            rate: s.model.marginal_curve("O", &val, &[d0])?[0],
            truth: mc_ground_truth(&s, &delta, config.n_truth, truth_seed, false)?,
            taylor: shiftbench_core::estimation::taylor_estimate(&curv, &delta)?,
        })
    };
    let sweep = grid(config.range, config.step).into_iter().map(point).collect::<Result<Vec<_>, _>>()?;
    let rate_sweep = config
        .rates
        .iter()
        .map(|&rate| point(s.model.solve_delta_for_marginal("O", rate, &val)?))
        .collect::<Result<Vec<_>, _>>()?;
    let b = config.box_half_width;
    let spec = ConstraintSpec::from(Constraint::Box { lower: vec![-b, 0.0], upper: vec![b, 0.0] });
    let worst_case = worst_case::solve(&curv, &spec)?;
    let mc_argmax = sweep
        .iter()
        .filter(|p| p.delta0.abs() <= b + 1e-9)
        .max_by(|a, c| a.truth.mean.total_cmp(&c.truth.mean))
        .map(|p| p.delta0)
        .expect("grid covers the box");
    let (o, y) = (column(&val, "O"), column(&val, "Y"));
    let mut counts = [0usize; 2];
    let mut tested = [0usize; 2];
    for j in 0..val.n_rows() {
        let row = val.row(j);
        let k = row[y] as usize;
        counts[k] += 1;
        tested[k] += row[o] as usize;
    }
    Ok(Fig3Record {
        config: config.clone(),
        curvature: curv,
        sweep,
        rate_sweep,
        worst_case,
        mc_argmax,
        base_rates: [tested[0] as f64 / counts[0] as f64, tested[1] as f64 / counts[1] as f64],
        base_counts: counts,
    })
}

fn column(t: &SampleTable, name: &str) -> usize {
    t.column_index(name).expect("model column")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaylorEstimator {
    /// Fitted conditional means.
    Residual,
    /// The model's own conditional means and the raw loss.
    KnownModel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IsVsTaylorConfig {
    pub scenario: ScenarioId,
    pub deltas: Vec<Vec<f64>>,
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_estimator")]
    pub estimator: TaylorEstimator,
    /// Weight quantile for the clipped-IS baseline.
    #[serde(default = "default_clip")]
    pub clip_quantile: f64,
    /// Draws for the truth when no exact value exists.
    #[serde(default = "default_draws")]
    pub n_truth: usize,
    #[serde(default)]
    pub options: ScenarioOptions,
}

fn default_reps() -> usize {
    2000
}
fn default_n() -> usize {
    1000
}
fn default_estimator() -> TaylorEstimator {
    TaylorEstimator::Residual
}
fn default_clip() -> f64 {
    0.99
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSummary {
    pub mean: f64,
    /// Empirical variance across replications.
    pub variance: f64,
    pub bias: f64,
    /// Share of replications whose 95% interval covers the truth.
    pub coverage: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IsVsTaylorRow {
    pub delta: Vec<f64>,
    pub truth: f64,
    pub truth_exact: bool,
    pub taylor: EstimatorSummary,
    pub is: EstimatorSummary,
    pub clipped_is: EstimatorSummary,
    /// Largest `|Taylor − IS|` over replications.
    pub max_abs_gap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IsVsTaylorRecord {
    pub config: IsVsTaylorConfig,
    pub rows: Vec<IsVsTaylorRow>,
}

impl IsVsTaylorRecord {
    pub fn csv(&self) -> String {
        let rows = self.rows.iter().map(|r| {
            let mut v = vec![format!("{:?}", r.delta), f(r.truth)];
            for s in [&r.taylor, &r.is, &r.clipped_is] {
                v.extend([f(s.mean), f(s.variance), f(s.coverage)]);
            }
            v
        });
        let header = [
            "delta", "truth", "taylor_mean", "taylor_var", "taylor_coverage", "is_mean", "is_var", "is_coverage",
            "clipped_mean", "clipped_var", "clipped_coverage",
        ];
        csv_string(&header, rows)
    }
}

fn summarize(values: &[(f64, f64)], truth: f64) -> EstimatorSummary {
    let k = values.len() as f64;
    let mean = values.iter().map(|v| v.0).sum::<f64>() / k;
    let variance = if values.len() > 1 { values.iter().map(|v| (v.0 - mean).powi(2)).sum::<f64>() / (k - 1.0) } else { 0.0 };
    let covered = values.iter().filter(|(e, se)| (e - truth).abs() <= 1.96 * se).count();
    EstimatorSummary { mean, variance, bias: mean - truth, coverage: covered as f64 / k }
}

fn clipped(weights: &[f64], loss: &[f64], q: f64) -> (f64, f64) {
    let mut sorted = weights.to_vec();
    sorted.sort_by(f64::total_cmp);
    let idx = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len()) - 1;
    let cap = sorted[idx];
    let w: Vec<f64> = weights.iter().map(|x| x.min(cap)).collect();
    let e = weighted_mean(&w, loss);
    (e.mean, e.std_error)
}

/// Replicated Taylor, IS and clipped-IS estimates along a path of shifts.
/// Replication `i` draws its training sample from stream `(seed, i)` and uses
/// it for every δ on the path.
pub fn run_is_vs_taylor(config: &IsVsTaylorConfig) -> Result<IsVsTaylorRecord, SimError> {
    if config.reps < 2 || config.deltas.is_empty() {
        return Err(SimError::Config("need at least two replications and one δ".into()));
    }
    if !(config.clip_quantile > 0.0 && config.clip_quantile <= 1.0) {
        return Err(SimError::Config("clip_quantile must be in (0, 1]".into()));
    }
    let s = Scenario::builtin(config.scenario, &config.options)?;
    let d = s.model.d_delta();
    if let Some(bad) = config.deltas.iter().find(|x| x.len() != d) {
        return Err(SimError::Config(format!("δ {bad:?} has length {}, expected {d}", bad.len())));
    }
    let mut truths = Vec::with_capacity(config.deltas.len());
    for delta in &config.deltas {
        truths.push(match exact_truth(&s, delta)? {
            Some(t) => (t, true),
            None => (mc_ground_truth(&s, delta, config.n_truth, rng::derive_seed(config.seed, "sim/is_vs_taylor/truth", 0), false)?.mean, false),
        });
    }
    let nd = config.deltas.len();
    let mut est = vec![[Vec::with_capacity(config.reps), Vec::with_capacity(config.reps), Vec::with_capacity(config.reps)]; nd];
    let mut gaps = vec![0.0f64; nd];
    for rep in 0..config.reps {
        let mut r = rng::stream(config.seed, "sim/is_vs_taylor", rep as u64);
        let sample = s.sample(&vec![0.0; d], config.n, &mut r)?;
        let res: Residuals = match config.estimator {
            TaylorEstimator::Residual => residuals(&s.model, &sample, &EstimationConfig::default())?,
            TaylorEstimator::KnownModel => known_model_residuals(&s.model, &sample)?,
        };
        let sampler = ImportanceSampler::new(&s.model, &sample)?;
        for (i, delta) in config.deltas.iter().enumerate() {
            let taylor = res.taylor_with_se(delta)?;
            let w = sampler.weights(delta)?;
            let is = weighted_mean(&w, sampler.loss());
            est[i][0].push(taylor);
            est[i][1].push((is.mean, is.std_error));
            est[i][2].push(clipped(&w, sampler.loss(), config.clip_quantile));
            gaps[i] = gaps[i].max((taylor.0 - is.mean).abs());
        }
    }
    let rows = config
        .deltas
        .iter()
        .enumerate()
        .map(|(i, delta)| {
            let (truth, truth_exact) = truths[i];
            IsVsTaylorRow {
                delta: delta.clone(),
                truth,
                truth_exact,
                taylor: summarize(&est[i][0], truth),
                is: summarize(&est[i][1], truth),
                clipped_is: summarize(&est[i][2], truth),
                max_abs_gap: gaps[i],
            }
        })
        .collect();
    Ok(IsVsTaylorRecord { config: config.clone(), rows })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Attributes31Config {
    #[serde(default = "default_k")]
    pub reps: usize,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_n_val")]
    pub n_val: usize,
    #[serde(default = "default_draws")]
    pub n_truth: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub search: SearchConfig,
    /// Radii for the sweep on the first replication's estimate; empty skips it.
    #[serde(default = "default_sweep")]
    pub sweep_lambdas: Vec<f64>,
}

fn default_k() -> usize {
    20
}
fn default_lambda() -> f64 {
    2.0
}
fn default_n_val() -> usize {
    2000
}
fn default_sweep() -> Vec<f64> {
    vec![2.0, 4.0, 6.0, 8.0, 10.0]
}

impl Default for Attributes31Config {
    fn default() -> Self {
        serde_json::from_value(serde_json::json!({})).expect("defaults")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub rep: usize,
    pub base: GroundTruth,
    pub taylor_delta: Vec<f64>,
    pub taylor_self: f64,
    pub taylor_truth: GroundTruth,
    pub taylor_time_s: f64,
    pub is_delta: Vec<f64>,
    pub is_self: f64,
    pub is_truth: GroundTruth,
    pub is_time_s: f64,
    pub is_evals: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub lambda: f64,
    pub predicted: f64,
    pub truth: GroundTruth,
    pub delta: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Attributes31Record {
    pub config: Attributes31Config,
    pub d_delta: usize,
    pub labels: Vec<String>,
    pub replications: Vec<ReplicationRecord>,
    /// Replications where the Taylor shift's simulated loss is strictly higher.
    pub taylor_wins: usize,
    pub ties: usize,
    /// Mean `|self-estimate − truth|` at each method's own shift.
    pub taylor_mae: f64,
    pub is_mae: f64,
    pub sweep: Vec<SweepRecord>,
}

impl Attributes31Record {
    pub fn csv(&self) -> String {
        let rows = self.replications.iter().map(|r| {
            vec![
                r.rep.to_string(),
                f(r.base.mean),
                f(r.taylor_self),
                f(r.taylor_truth.mean),
                f(r.taylor_time_s),
                f(r.is_self),
                f(r.is_truth.mean),
                f(r.is_time_s),
                r.is_evals.to_string(),
            ]
        });
        let header =
            ["rep", "base_truth", "taylor_self", "taylor_truth", "taylor_time_s", "is_self", "is_truth", "is_time_s", "is_evals"];
        csv_string(&header, rows)
    }

    pub fn sweep_csv(&self) -> String {
        let rows = self.sweep.iter().map(|s| vec![f(s.lambda), f(s.predicted), f(s.truth.mean), f(s.truth.std_error)]);
        csv_string(&["lambda", "predicted", "truth", "truth_se"], rows)
    }
}

/// Taylor trust-region shifts against IS-objective search on the attribute
/// network. All simulated truths within a replication share one random
/// stream.
pub fn run_attributes31(config: &Attributes31Config) -> Result<Attributes31Record, SimError> {
    if config.reps == 0 {
        return Err(SimError::Config("reps must be positive".into()));
    }
    let s = Scenario::builtin(ScenarioId::Attributes31, &ScenarioOptions::default())?;
    let d = s.model.d_delta();
    let zero = vec![0.0; d];
    let spec = ConstraintSpec::ball(config.lambda);
    spec.validate(d)?;
    let mut replications = Vec::with_capacity(config.reps);
    let mut first_curv = None;
    for rep in 0..config.reps {
        let mut r = rng::stream(config.seed, "sim/attributes31/validation", rep as u64);
        let val = s.sample(&zero, config.n_val, &mut r)?;
        let truth_seed = rng::derive_seed(config.seed, "sim/attributes31/truth", rep as u64);
        let t0 = Instant::now();
        let curv = shiftbench_core::estimation::estimate_curvature(&s.model, &val, &EstimationConfig::default())?;
        let tr = worst_case::solve(&curv, &spec)?;
        let taylor_time_s = t0.elapsed().as_secs_f64();
        let search = SearchConfig { seed: rng::derive_seed(config.seed, "sim/attributes31/search", rep as u64), ..config.search.clone() };
        let found = worst_case::is_objective_max(&s.model, &val, &spec, &search)?;
        replications.push(ReplicationRecord {
            rep,
            base: mc_ground_truth(&s, &zero, config.n_truth, truth_seed, false)?,
            taylor_truth: mc_ground_truth(&s, &tr.delta_star, config.n_truth, truth_seed, false)?,
            taylor_delta: tr.delta_star,
            taylor_self: tr.predicted_loss,
            taylor_time_s,
            is_truth: mc_ground_truth(&s, &found.delta, config.n_truth, truth_seed, false)?,
            is_delta: found.delta,
            is_self: found.value,
            is_time_s: found.wall_time_s,
            is_evals: found.evals,
        });
        if rep == 0 {
            first_curv = Some(curv);
        }
    }
    let curv = first_curv.expect("at least one replication");
    let sweep_seed = rng::derive_seed(config.seed, "sim/attributes31/sweep", 0);
    let sweep = config
        .sweep_lambdas
        .iter()
        .map(|&lambda| {
            let tr = worst_case::trust_region_max(&curv, lambda)?;
            Ok(SweepRecord {
                lambda,
                predicted: tr.predicted_loss,
                truth: mc_ground_truth(&s, &tr.delta_star, config.n_truth, sweep_seed, false)?,
                delta: tr.delta_star,
            })
        })
        .collect::<Result<Vec<_>, SimError>>()?;
    let k = replications.len() as f64;
    Ok(Attributes31Record {
        config: config.clone(),
        d_delta: d,
        labels: s.model.delta_labels(),
        taylor_wins: replications.iter().filter(|r| r.taylor_truth.mean > r.is_truth.mean).count(),
        ties: replications.iter().filter(|r| r.taylor_truth.mean == r.is_truth.mean).count(),
        taylor_mae: replications.iter().map(|r| (r.taylor_self - r.taylor_truth.mean).abs()).sum::<f64>() / k,
        is_mae: replications.iter().map(|r| (r.is_self - r.is_truth.mean).abs()).sum::<f64>() / k,
        replications,
        sweep,
    })
}
