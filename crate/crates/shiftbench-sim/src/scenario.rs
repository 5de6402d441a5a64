//! Built-in scenarios: a shift model, a trained or fixed predictor and a loss.

use crate::predictor::{Logistic, LossKind, Predictor};
use crate::SimError;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use shiftbench_core::estimation::{CurvatureEstimate, EstimateMethod};
use shiftbench_core::families::gaussian_natural;
use shiftbench_core::model::ShiftModel;
use shiftbench_core::rng;
use shiftbench_core::table::SampleTable;
use std::fmt;
use std::str::FromStr;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioId {
    LabtestSmall,
    LabtestAge,
    LinearAnchor,
    Attributes31,
    Gauss1d,
}

impl ScenarioId {
    pub const ALL: [ScenarioId; 5] =
        [ScenarioId::LabtestSmall, ScenarioId::LabtestAge, ScenarioId::LinearAnchor, ScenarioId::Attributes31, ScenarioId::Gauss1d];

    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioId::LabtestSmall => "labtest_small",
            ScenarioId::LabtestAge => "labtest_age",
            ScenarioId::LinearAnchor => "linear_anchor",
            ScenarioId::Attributes31 => "attributes31",
            ScenarioId::Gauss1d => "gauss1d",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            ScenarioId::LabtestSmall => "disease, test ordering and lab value; two-branch logistic predictor, cross-entropy",
            ScenarioId::LabtestAge => "lab-testing model with a Gaussian age; two-branch logistic predictor, cross-entropy",
            ScenarioId::LinearAnchor => "linear Gaussian SCM with a mean-shifted anchor; linear predictor, squared loss",
            ScenarioId::Attributes31 => "nine binary face attributes, per-stratum shifts on eight; synthetic gender scorer, 0/1 loss",
            ScenarioId::Gauss1d => "single standard Gaussian with a mean shift; the loss is the variable itself",
        }
    }
}

impl fmt::Display for ScenarioId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioId {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, SimError> {
        ScenarioId::ALL
            .into_iter()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| SimError::Config(format!("unknown scenario '{s}'")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioOptions {
    /// Seed for predictor training draws.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_n_train")]
    pub n_train: usize,
    /// Overrides the scenario's default loss.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss: Option<LossKind>,
    #[serde(default)]
    pub anchor: AnchorConfig,
    /// Intercept and slope of the test-ordering log-odds in `labtest_small`.
    #[serde(default = "default_labtest_coefficients")]
    pub labtest_alpha_beta: (f64, f64),
}

fn default_n_train() -> usize {
    100_000
}

fn default_labtest_coefficients() -> (f64, f64) {
    (-1.0, 2.0)
}

impl Default for ScenarioOptions {
    fn default() -> Self {
        ScenarioOptions {
            seed: 0,
            n_train: default_n_train(),
            loss: None,
            anchor: AnchorConfig::default(),
            labtest_alpha_beta: default_labtest_coefficients(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Scenario {
    pub id: Option<ScenarioId>,
    pub model: ShiftModel,
    pub predictor: Predictor,
    pub loss: LossKind,
    /// Record column of the label; `None` for losses of the prediction alone.
    pub target: Option<usize>,
    pub anchor: Option<LinearAnchor>,
}

impl Scenario {
    pub fn builtin(id: ScenarioId, options: &ScenarioOptions) -> Result<Scenario, SimError> {
        match id {
            ScenarioId::LabtestSmall => labtest_small(options),
            ScenarioId::LabtestAge => labtest_age(options),
            ScenarioId::LinearAnchor => linear_anchor(options),
            ScenarioId::Attributes31 => attributes31(options),
            ScenarioId::Gauss1d => gauss1d(options),
        }
    }

    pub fn loss_of(&self, record: &[f64]) -> f64 {
        let target = self.target.map_or(0.0, |c| record[c]);
        self.loss.eval(self.predictor.predict(record), target)
    }

    pub fn losses(&self, table: &SampleTable) -> Vec<f64> {
        (0..table.n_rows()).map(|j| self.loss_of(table.row(j))).collect()
    }

    /// `n` draws from `P_δ` with the loss column attached.
    pub fn sample<R: Rng + ?Sized>(&self, delta: &[f64], n: usize, rng: &mut R) -> Result<SampleTable, SimError> {
        let t = self.model.sample_joint(delta, n, rng)?;
        let l = self.losses(&t);
        Ok(t.with_loss(l))
    }

    pub fn name(&self) -> String {
        self.id.map_or_else(|| "custom".to_string(), |id| id.to_string())
    }
}

fn model(v: serde_json::Value) -> Result<ShiftModel, SimError> {
    let config = serde_json::from_value(v).map_err(|e| SimError::Config(e.to_string()))?;
    Ok(ShiftModel::new(config)?)
}

fn training_draws(m: &ShiftModel, options: &ScenarioOptions) -> Result<SampleTable, SimError> {
    let mut r = rng::stream(options.seed, "sim/train", 0);
    Ok(m.sample_joint(&vec![0.0; m.d_delta()], options.n_train, &mut r)?)
}

fn column(m: &ShiftModel, name: &str) -> usize {
    m.layout().iter().position(|c| c == name).expect("declared column")
}

/// Y → O → L with L observed only when a test is ordered; shift `δ₀ + δ₁Y` on the ordering log-odds.
fn labtest_small(options: &ScenarioOptions) -> Result<Scenario, SimError> {
    let (alpha, beta) = options.labtest_alpha_beta;
    let m = model(json!({
        "schema_version": 1,
        "variables": [
            {"name": "Y", "family": {"kind": "bernoulli_logit"}, "eta": {"form": "constant", "eta": [0.0]}},
            {"name": "O", "family": {"kind": "bernoulli_logit"}, "parents": ["Y"],
             "eta": {"form": "linear", "intercept": [alpha], "coefficients": [[beta]]}},
            {"name": "L", "family": {"kind": "gaussian_known_var", "sigma": 1.0}, "parents": ["Y", "O"],
             "eta": {"form": "gated", "gate": "O", "inactive_value": 0.0,
                     "active": {"form": "linear", "intercept": [-0.5], "coefficients": [[1.0, 0.0]]}}}
        ],
        "interventions": [{"variable": "O", "shift": {"form": "linear_in_z", "features": ["1", "Y"]}}]
    }))?;
    two_branch(ScenarioId::LabtestSmall, m, &[], &["L"], options)
}

/// Age → Disease → Order → Lab, with age also feeding disease and ordering.
fn labtest_age(options: &ScenarioOptions) -> Result<Scenario, SimError> {
    let m = model(json!({
        "schema_version": 1,
        "variables": [
            {"name": "A", "family": {"kind": "gaussian_known_var", "sigma": 0.5}, "eta": {"form": "constant", "eta": [0.0]}},
            {"name": "Y", "family": {"kind": "bernoulli_logit"}, "parents": ["A"],
             "eta": {"form": "linear", "intercept": [-1.0], "coefficients": [[0.5]]}},
            {"name": "O", "family": {"kind": "bernoulli_logit"}, "parents": ["A", "Y"],
             "eta": {"form": "linear", "intercept": [-1.0], "coefficients": [[0.5, 2.0]]}},
            {"name": "L", "family": {"kind": "gaussian_known_var", "sigma": 1.0}, "parents": ["Y", "O"],
             "eta": {"form": "gated", "gate": "O", "inactive_value": 0.0,
                     "active": {"form": "linear", "intercept": [-0.5], "coefficients": [[1.0, 0.0]]}}}
        ],
        "interventions": [{"variable": "O", "shift": {"form": "linear_in_z", "features": ["1", "Y"]}}]
    }))?;
    two_branch(ScenarioId::LabtestAge, m, &["A"], &["A", "L"], options)
}

fn two_branch(id: ScenarioId, m: ShiftModel, untested: &[&str], tested: &[&str], options: &ScenarioOptions) -> Result<Scenario, SimError> {
    let train = training_draws(&m, options)?;
    let (o, y) = (column(&m, "O"), column(&m, "Y"));
    let cols = |names: &[&str]| names.iter().map(|n| column(&m, n)).collect::<Vec<_>>();
    let w = train.width();
    let untested = Logistic::fit(train.data(), w, cols(untested), y, |r| r[o] == 0.0)?;
    let tested = Logistic::fit(train.data(), w, cols(tested), y, |r| r[o] == 1.0)?;
    Ok(Scenario {
        id: Some(id),
        predictor: Predictor::TwoBranch { gate: o, untested, tested },
        loss: options.loss.unwrap_or(LossKind::CrossEntropy),
        target: Some(y),
        model: m,
        anchor: None,
    })
}

fn gauss1d(options: &ScenarioOptions) -> Result<Scenario, SimError> {
    let m = model(json!({
        "schema_version": 1,
        "variables": [{"name": "X", "family": {"kind": "gaussian_known_var", "sigma": 1.0},
                       "eta": {"form": "constant", "eta": [0.0]}}],
        "interventions": [{"variable": "X", "shift": {"form": "constant"}}]
    }))?;
    Ok(Scenario {
        id: Some(ScenarioId::Gauss1d),
        predictor: Predictor::Column { col: 0 },
        loss: options.loss.unwrap_or(LossKind::Value),
        target: None,
        model: m,
        anchor: None,
    })
}

/// Attribute names in declaration order, with their parents and log-odds.
const ATTRIBUTES: [(&str, &[&str], f64, &[f64]); 9] = [
    ("Young", &[], 0.0, &[]),
    ("Male", &[], 0.0, &[]),
    ("Eyeglasses", &["Young"], 0.0, &[-0.4]),
    ("Bald", &["Male", "Young"], -3.0, &[3.5, -1.0]),
    ("Mustache", &["Male", "Young"], -2.5, &[2.5, -1.0]),
    ("Smiling", &["Male", "Young"], 0.25, &[-0.5, 0.5]),
    ("Wearing_Lipstick", &["Male", "Young"], 3.0, &[-5.0, -0.5]),
    ("Mouth_Slightly_Open", &["Smiling", "Young"], -1.0, &[1.0, 0.5]),
    ("Narrow_Eyes", &["Male", "Smiling", "Young"], -0.5, &[0.3, 1.0, 0.2]),
];

/// Synthetic gender scorer: intercept then one weight per attribute in
/// declaration order (the `Male` weight is unused and zero).
pub const ATTRIBUTE_SCORER: [f64; 10] = [0.3, -0.3, 0.0, 0.2, 2.0, 2.5, -0.4, -3.0, -0.2, 0.3];

fn attributes31(options: &ScenarioOptions) -> Result<Scenario, SimError> {
    let vars: Vec<serde_json::Value> = ATTRIBUTES
        .iter()
        .map(|(name, parents, b, w)| {
            json!({"name": name, "family": {"kind": "bernoulli_logit"}, "parents": parents,
                   "eta": {"form": "linear", "intercept": [b], "coefficients": [w]}})
        })
        .map(|mut v| {
            if v["parents"].as_array().is_some_and(|p| p.is_empty()) {
                v["eta"] = json!({"form": "constant", "eta": v["eta"]["intercept"]});
            }
            v
        })
        .collect();
    let interventions: Vec<serde_json::Value> = ATTRIBUTES
        .iter()
        .filter(|(name, ..)| *name != "Male")
        .map(|(name, ..)| json!({"variable": name, "shift": {"form": "per_stratum"}}))
        .collect();
    let m = model(json!({"schema_version": 1, "variables": vars, "interventions": interventions}))?;
    let male = column(&m, "Male");
    let cols: Vec<usize> = (0..ATTRIBUTES.len()).filter(|&c| c != male).collect();
    let coef: Vec<f64> = std::iter::once(ATTRIBUTE_SCORER[0]).chain(cols.iter().map(|&c| ATTRIBUTE_SCORER[c + 1])).collect();
    Ok(Scenario {
        id: Some(ScenarioId::Attributes31),
        predictor: Predictor::Logistic(Logistic { cols, coef }),
        loss: options.loss.unwrap_or(LossKind::ZeroOne),
        target: Some(male),
        model: m,
        anchor: None,
    })
}

/// Linear SCM `V = B V + M A + ε` over named nodes with `A ~ N(μ, Σ)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnchorConfig {
    pub mu: Vec<f64>,
    pub sigma: Vec<Vec<f64>>,
    /// Node names; `b` must be strictly lower triangular in this order.
    pub nodes: Vec<String>,
    pub b: Vec<Vec<f64>>,
    /// One row per node, one column per anchor coordinate.
    pub m: Vec<Vec<f64>>,
    pub noise_sd: Vec<f64>,
    pub response: String,
    pub predictors: Vec<String>,
    pub gamma: Vec<f64>,
}

impl Default for AnchorConfig {
    fn default() -> Self {
        AnchorConfig {
            mu: vec![0.5, -0.3],
            sigma: vec![vec![1.0, 0.3], vec![0.3, 0.5]],
            nodes: vec!["H".into(), "X".into(), "Y".into()],
            b: vec![vec![0.0, 0.0, 0.0], vec![1.0, 0.0, 0.0], vec![0.9, 0.7, 0.0]],
            m: vec![vec![0.8, 0.0], vec![0.6, -0.4], vec![0.0, 0.5]],
            noise_sd: vec![1.0, 1.0, 0.5],
            response: "Y".into(),
            predictors: vec!["X".into()],
            gamma: vec![0.7],
        }
    }
}

/// Moments of the anchor scenario. The shift is a variance-scaled mean shift
/// of `A`: model coordinate `δ` moves the mean by `Σδ`.
#[derive(Clone, Debug)]
pub struct LinearAnchor {
    pub config: AnchorConfig,
    mu: DVector<f64>,
    sigma: DMatrix<f64>,
    /// `R = vᵀA + noise` with `R = Y − γᵀX`.
    v: DVector<f64>,
    noise_var: f64,
    /// Joint mean and covariance of `(A, nodes)`.
    joint_mean: DVector<f64>,
    joint_cov: DMatrix<f64>,
    /// Residual weights on the node block.
    w: DVector<f64>,
}

impl LinearAnchor {
    pub fn new(config: AnchorConfig) -> Result<LinearAnchor, SimError> {
        let da = config.mu.len();
        let k = config.nodes.len();
        let bad = |m: &str| Err(SimError::Config(format!("linear_anchor: {m}")));
        if da == 0 || config.sigma.len() != da || config.sigma.iter().any(|r| r.len() != da) {
            return bad("sigma must be square with the dimension of mu");
        }
        if config.b.len() != k || config.b.iter().any(|r| r.len() != k) {
            return bad("b must be square with one row per node");
        }
        if config.m.len() != k || config.m.iter().any(|r| r.len() != da) || config.noise_sd.len() != k {
            return bad("m and noise_sd need one row per node");
        }
        for (i, row) in config.b.iter().enumerate() {
            if row[i..].iter().any(|x| *x != 0.0) {
                return bad("b must be strictly lower triangular in node order");
            }
        }
        if config.noise_sd.iter().any(|s| !(*s > 0.0)) {
            return bad("noise_sd must be positive");
        }
        if config.gamma.len() != config.predictors.len() {
            return bad("gamma needs one weight per predictor");
        }
        let node = |name: &str| config.nodes.iter().position(|n| n == name);
        let mut w = DVector::zeros(k);
        w[node(&config.response).ok_or_else(|| SimError::Config("linear_anchor: unknown response".into()))?] += 1.0;
        for (p, g) in config.predictors.iter().zip(&config.gamma) {
            let i = node(p).ok_or_else(|| SimError::Config(format!("linear_anchor: unknown predictor '{p}'")))?;
            w[i] -= g;
        }
        let mu = DVector::from_column_slice(&config.mu);
        let sigma = DMatrix::from_fn(da, da, |r, c| config.sigma[r][c]);
        if sigma.clone().cholesky().is_none() || (&sigma - sigma.transpose()).amax() > 0.0 {
            return bad("sigma must be symmetric positive definite");
        }
        let b = DMatrix::from_fn(k, k, |r, c| config.b[r][c]);
        let m = DMatrix::from_fn(k, da, |r, c| config.m[r][c]);
        let d = DMatrix::from_diagonal(&DVector::from_iterator(k, config.noise_sd.iter().map(|s| s * s)));
        let inv = (DMatrix::identity(k, k) - b).try_inverse().expect("unit lower triangular");
        let v = m.transpose() * inv.transpose() * &w;
        let kappa = inv.transpose() * &w;
        let noise_var = (kappa.transpose() * &d * &kappa)[(0, 0)];
        let node_mean = &inv * &m * &mu;
        let node_cov = &inv * (&m * &sigma * m.transpose() + &d) * inv.transpose();
        let cross = &inv * &m * &sigma;
        let mut joint_cov = DMatrix::zeros(da + k, da + k);
        joint_cov.view_mut((0, 0), (da, da)).copy_from(&sigma);
        joint_cov.view_mut((da, da), (k, k)).copy_from(&node_cov);
        joint_cov.view_mut((da, 0), (k, da)).copy_from(&cross);
        joint_cov.view_mut((0, da), (da, k)).copy_from(&cross.transpose());
        let mut joint_mean = DVector::zeros(da + k);
        joint_mean.rows_mut(0, da).copy_from(&mu);
        joint_mean.rows_mut(da, k).copy_from(&node_mean);
        Ok(LinearAnchor { config, mu, sigma, v, noise_var, joint_mean, joint_cov, w })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// Mean shift of `A` for a model-coordinate `δ`.
    pub fn mean_shift(&self, delta: &[f64]) -> DVector<f64> {
        &self.sigma * DVector::from_column_slice(delta)
    }

    /// `E_δ[(Y − γᵀX)²]` in closed form.
    pub fn closed_form(&self, delta: &[f64]) -> f64 {
        let shifted = &self.mu + self.mean_shift(delta);
        self.v.dot(&shifted).powi(2) + (self.v.transpose() * &self.sigma * &self.v)[(0, 0)] + self.noise_var
    }

    /// `(E[ℓ], u, v)` with `E_{δ_m}[ℓ] = E[ℓ] + δ_mᵀu + ½ δ_mᵀ (2vvᵀ) δ_m` for a mean shift `δ_m`.
    pub fn quadratic_coefficients(&self) -> (f64, DVector<f64>, DVector<f64>) {
        (self.closed_form(&vec![0.0; self.dim()]), &self.v * (2.0 * self.v.dot(&self.mu)), self.v.clone())
    }

    /// Shift gradient and Hessian from Gaussian fourth moments of the joint
    /// `(A, nodes)` distribution: with `R = wᵀV`, `k = Cov(A, R)` and
    /// `m = E[R]`, `Cov(R², A) = 2mk` and `Cov(R², (A − μ)(A − μ)ᵀ) = 2kkᵀ`.
    pub fn exact_moment_curvature(&self, model: &ShiftModel) -> CurvatureEstimate {
        let da = self.dim();
        let k_nodes = self.w.len();
        let mut wj = DVector::zeros(da + k_nodes);
        wj.rows_mut(da, k_nodes).copy_from(&self.w);
        let mean_r = wj.dot(&self.joint_mean);
        let var_r = (wj.transpose() * &self.joint_cov * &wj)[(0, 0)];
        let k = self.joint_cov.view((0, 0), (da, da + k_nodes)) * &wj;
        let sg1: Vec<f64> = (&k * (2.0 * mean_r)).iter().copied().collect();
        let sg2 = &k * k.transpose() * 2.0;
        CurvatureEstimate::new(mean_r * mean_r + var_r, sg1, &sg2, 0, model.delta_index().to_vec(), EstimateMethod::ExactMoments)
    }
}

fn linear_anchor(options: &ScenarioOptions) -> Result<Scenario, SimError> {
    let anchor = LinearAnchor::new(options.anchor.clone())?;
    let c = &anchor.config;
    let natural = gaussian_natural(&c.mu, &anchor.sigma).ok_or_else(|| SimError::Config("linear_anchor: bad sigma".into()))?;
    let mut vars = vec![json!({"name": "A", "family": {"kind": "gaussian_full", "dim": c.mu.len()},
                               "eta": {"form": "constant", "eta": natural}})];
    for (i, name) in c.nodes.iter().enumerate() {
        let sd = c.noise_sd[i];
        let mut parents = vec!["A".to_string()];
        let mut coef: Vec<f64> = c.m[i].iter().map(|x| x / sd).collect();
        for (j, other) in c.nodes[..i].iter().enumerate() {
            if c.b[i][j] != 0.0 {
                parents.push(other.clone());
                coef.push(c.b[i][j] / sd);
            }
        }
        vars.push(json!({"name": name, "family": {"kind": "gaussian_known_var", "sigma": sd}, "parents": parents,
                         "eta": {"form": "linear", "intercept": [0.0], "coefficients": [coef]}}));
    }
    let m = model(json!({
        "schema_version": 1,
        "variables": vars,
        "interventions": [{"variable": "A", "shift": {"form": "variance_scaled_mean"}}]
    }))?;
    let cols: Vec<usize> = c.predictors.iter().map(|p| column(&m, p)).collect();
    Ok(Scenario {
        id: Some(ScenarioId::LinearAnchor),
        predictor: Predictor::Linear { cols, coef: c.gamma.clone() },
        loss: options.loss.unwrap_or(LossKind::Squared),
        target: Some(column(&m, &c.response)),
        model: m,
        anchor: Some(anchor),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use shiftbench_core::estimation::taylor_estimate;

    #[test]
    fn attributes_network_has_thirty_one_coordinates() {
        let s = Scenario::builtin(ScenarioId::Attributes31, &ScenarioOptions::default()).unwrap();
        assert_eq!(s.model.d_delta(), 31);
        let labels = s.model.delta_labels();
        assert!(labels.contains(&"Bald | Male=0, Young=0".to_string()));
        assert!(labels.contains(&"Narrow_Eyes | Male=1, Smiling=1, Young=1".to_string()));
        // Bald log-odds for a young man: −3.0 + 3.5 − 1
        let bald = s.model.var_index("Bald").unwrap();
        let mut rec = vec![0.0; 9];
        rec[0] = 1.0;
        rec[1] = 1.0;
        assert!((s.model.eta(bald, &rec).unwrap()[0] + 0.5).abs() < 1e-15);
    }

    #[test]
    fn scenario_ids_round_trip() {
        for id in ScenarioId::ALL {
            assert_eq!(id.as_str().parse::<ScenarioId>().unwrap(), id);
            assert_eq!(serde_json::to_value(id).unwrap(), json!(id.as_str()));
        }
        assert!("labtest".parse::<ScenarioId>().is_err());
    }

    #[test]
    fn anchor_moment_curvature_reproduces_the_closed_form() {
        let s = Scenario::builtin(ScenarioId::LinearAnchor, &ScenarioOptions::default()).unwrap();
        let a = s.anchor.as_ref().unwrap();
        let curv = a.exact_moment_curvature(&s.model);
        for delta in [[0.0, 0.0], [0.3, -1.2], [2.0, 1.5], [-3.0, 0.7]] {
            let t = taylor_estimate(&curv, &delta).unwrap();
            assert!((t - a.closed_form(&delta)).abs() <= 1e-10 * (1.0 + t.abs()), "{t} vs {}", a.closed_form(&delta));
        }
        let (base, u, v) = a.quadratic_coefficients();
        let dm = a.mean_shift(&[0.4, 0.1]);
        let quad = base + dm.dot(&u) + dm.dot(&v).powi(2);
        assert!((quad - a.closed_form(&[0.4, 0.1])).abs() < 1e-12);
        let mut zero_mean = AnchorConfig::default();
        zero_mean.mu = vec![0.0, 0.0];
        let (_, u0, _) = LinearAnchor::new(zero_mean).unwrap().quadratic_coefficients();
        assert_eq!(u0.amax(), 0.0);
    }

    #[test]
    fn invalid_anchor_configs_are_rejected() {
        let mut c = AnchorConfig::default();
        c.b[0][1] = 0.5;
        assert!(LinearAnchor::new(c).is_err());
        let mut c = AnchorConfig::default();
        c.sigma = vec![vec![1.0, 2.0], vec![2.0, 1.0]];
        assert!(LinearAnchor::new(c).is_err());
        let mut c = AnchorConfig::default();
        c.predictors = vec!["Z".into()];
        assert!(LinearAnchor::new(c).is_err());
    }
}
