//! Shift gradient and Hessian estimation, Taylor and importance-sampling
//! estimates of the shifted loss, and the Taylor remainder bound.
//!
//! The residual estimator regresses each intervened variable's sufficient
//! statistic and the loss on the variable's conditioning set, then averages
//! products of residuals:
//!
//! * `sg1_i = mean(ε_ℓ,i · u_i)` with `u_i = D₁ᵀ ε_T,i`
//! * diagonal blocks `mean(ε_ℓ,i · (u_i u_iᵀ + D₂ᵀ ε_T,i))`
//! * off-diagonal blocks `mean((ℓ − ℓ̄) · u_i u_jᵀ)`
//!
//! The `+D₂` sign is the one the second derivative of the density ratio
//! produces; every shift form shipped here is linear in δ, so the term only
//! matters for [`Residuals::from_parts`] callers supplying their own `D₂`.

use crate::model::{DeltaBlock, JacobianTerm, ModelError, ShiftForm, ShiftModel};
use crate::regress::{ConditionalMean, RegressError, RegressionConfig, Regressor};
use crate::rng;
use crate::table::{SampleTable, TableError};
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EstimationError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Table(#[from] TableError),
    #[error("variable '{variable}': stratum {stratum} has no rows")]
    Coverage { variable: String, stratum: String },
    #[error("variable '{variable}': {message}")]
    Regression { variable: String, message: String },
    #[error("row {row}: {message}")]
    Row { row: usize, message: String },
    #[error("δ has length {got}, expected {expected}")]
    DeltaLength { expected: usize, got: usize },
    #[error("{0}")]
    Scope(String),
    #[error("invalid estimate: {0}")]
    Invalid(String),
    #[error("sample is empty")]
    Empty,
}

type Result<T> = std::result::Result<T, EstimationError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimationConfig {
    #[serde(default)]
    pub regression: RegressionConfig,
    /// Fit auxiliaries on one half of the rows and average residuals on the other.
    #[serde(default)]
    pub sample_split: bool,
    #[serde(default)]
    pub split_seed: u64,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        EstimationConfig { regression: RegressionConfig::default(), sample_split: false, split_seed: 0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateMethod {
    /// Fitted conditional means, all rows.
    Residual,
    /// Fitted conditional means, disjoint fit and evaluation halves.
    SampleSplit,
    /// Enumeration weighted by exact probabilities.
    Exact,
    /// Model conditional means and the raw loss.
    KnownModel,
    /// Mean shifts on Gaussians using only the raw-value regression.
    VarianceScaledShortcut,
    /// Closed-form population moments.
    ExactMoments,
}

/// Training loss, shift gradient and shift Hessian.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvatureEstimate {
    pub base_loss: f64,
    pub sg1: Vec<f64>,
    /// Row-major rows of the symmetric Hessian.
    pub sg2: Vec<Vec<f64>>,
    pub n: usize,
    pub block_index: Vec<DeltaBlock>,
    pub method: EstimateMethod,
}

impl CurvatureEstimate {
    pub fn new(
        base_loss: f64,
        sg1: Vec<f64>,
        sg2: &DMatrix<f64>,
        n: usize,
        block_index: Vec<DeltaBlock>,
        method: EstimateMethod,
    ) -> CurvatureEstimate {
        let sym = (sg2 + sg2.transpose()) * 0.5;
        let rows = (0..sym.nrows()).map(|r| sym.row(r).iter().copied().collect()).collect();
        CurvatureEstimate { base_loss, sg1, sg2: rows, n, block_index, method }
    }

    pub fn dim(&self) -> usize {
        self.sg1.len()
    }

    pub fn gradient(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.sg1)
    }

    pub fn hessian(&self) -> DMatrix<f64> {
        let d = self.dim();
        DMatrix::from_fn(d, d, |r, c| self.sg2[r][c])
    }

    /// Shape, finiteness and symmetry checks for estimates read from outside.
    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if self.sg2.len() != d || self.sg2.iter().any(|r| r.len() != d) {
            return Err(EstimationError::Invalid(format!("sg2 must be {d} × {d}")));
        }
        if !self.base_loss.is_finite() || self.sg1.iter().chain(self.sg2.iter().flatten()).any(|x| !x.is_finite()) {
            return Err(EstimationError::Invalid("non-finite entries".into()));
        }
        for r in 0..d {
            for c in 0..r {
                let (a, b) = (self.sg2[r][c], self.sg2[c][r]);
                if (a - b).abs() > 1e-10 * (1.0 + a.abs().max(b.abs())) {
                    return Err(EstimationError::Invalid(format!("sg2 is not symmetric at ({r}, {c})")));
                }
            }
        }
        let covered: usize = self.block_index.iter().map(|b| b.len).sum();
        if !self.block_index.is_empty() && covered != d {
            return Err(EstimationError::Invalid(format!("block_index covers {covered} of {d} coordinates")));
        }
        Ok(())
    }

    pub fn labels(&self) -> Vec<String> {
        let labels: Vec<String> = self.block_index.iter().flat_map(|b| b.labels.iter().cloned()).collect();
        if labels.len() == self.dim() {
            labels
        } else {
            (0..self.dim()).map(|k| format!("δ[{k}]")).collect()
        }
    }
}

/// `Ê[ℓ] + δᵀ sg1 + ½ δᵀ sg2 δ`.
pub fn taylor_estimate(curv: &CurvatureEstimate, delta: &[f64]) -> Result<f64> {
    if delta.len() != curv.dim() {
        return Err(EstimationError::DeltaLength { expected: curv.dim(), got: delta.len() });
    }
    let lin: f64 = delta.iter().zip(&curv.sg1).map(|(a, b)| a * b).sum();
    let quad: f64 = curv
        .sg2
        .iter()
        .zip(delta)
        .map(|(row, dr)| dr * row.iter().zip(delta).map(|(h, dc)| h * dc).sum::<f64>())
        .sum();
    Ok(curv.base_loss + lin + 0.5 * quad)
}

/// Fitted conditional means for one intervened variable.
#[derive(Clone, Debug, Serialize)]
pub struct BlockAuxiliary {
    pub variable: String,
    pub conditioning: Vec<String>,
    /// Model of `E[T | Z]` (or of the raw value for the variance-scaled shortcut).
    pub mu_stat: ConditionalMean,
    pub mu_loss: ConditionalMean,
    #[serde(skip)]
    z_cols: Vec<usize>,
}

#[derive(Clone, Debug, Serialize)]
pub struct AuxiliaryRegressors {
    pub blocks: Vec<BlockAuxiliary>,
    #[serde(skip)]
    stat: StatKind,
}

#[derive(Clone, Copy, Debug, PartialEq, Default)]
enum StatKind {
    #[default]
    Sufficient,
    RawValue,
}

fn conditioning(model: &ShiftModel, var: usize) -> (Vec<Regressor>, Vec<usize>) {
    let layout = model.layout();
    let mut regs = Vec::new();
    let mut cols = Vec::new();
    for &p in model.parents(var) {
        let f = model.family(p);
        match f.cardinality() {
            Some(k) => {
                let c = model.columns_of(p).start;
                regs.push(Regressor::Discrete {
                    name: model.var_name(p).to_string(),
                    values: (0..k).map(|l| f.level_value(l)).collect(),
                });
                cols.push(c);
            }
            None => {
                for c in model.columns_of(p) {
                    regs.push(Regressor::Continuous { name: layout[c].clone() });
                    cols.push(c);
                }
            }
        }
    }
    (regs, cols)
}

fn regress_err(variable: &str, e: RegressError) -> EstimationError {
    match e {
        RegressError::EmptyStratum(stratum) => EstimationError::Coverage { variable: variable.to_string(), stratum },
        other => EstimationError::Regression { variable: variable.to_string(), message: other.to_string() },
    }
}

/// Rows of an aligned table as one row-major slice with the loss.
struct Rows<'a> {
    data: &'a [f64],
    width: usize,
    loss: &'a [f64],
    weights: Option<&'a [f64]>,
}

impl Rows<'_> {
    fn n(&self) -> usize {
        self.loss.len()
    }

    fn row(&self, j: usize) -> &[f64] {
        &self.data[j * self.width..(j + 1) * self.width]
    }
}

fn check_values(model: &ShiftModel, rows: &Rows) -> Result<()> {
    for k in 0..model.shifts().len() {
        let var = model.shifts()[k].var;
        let f = model.family(var);
        for j in 0..rows.n() {
            f.check_value(&rows.row(j)[model.columns_of(var)])
                .map_err(|e| EstimationError::Row { row: j + 1, message: format!("{}: {e}", model.var_name(var)) })?;
        }
    }
    Ok(())
}

fn stat_width(model: &ShiftModel, var: usize, stat: StatKind) -> usize {
    match stat {
        StatKind::Sufficient => model.family(var).dim_t(),
        StatKind::RawValue => model.family(var).value_width(),
    }
}

fn write_target(model: &ShiftModel, var: usize, stat: StatKind, row: &[f64], out: &mut [f64]) {
    let w = &row[model.columns_of(var)];
    match stat {
        StatKind::Sufficient => model.family(var).write_stat(w, out),
        StatKind::RawValue => out.copy_from_slice(w),
    }
}

fn fit_rows(model: &ShiftModel, rows: &Rows, config: &RegressionConfig, stat: StatKind) -> Result<AuxiliaryRegressors> {
    if rows.n() == 0 {
        return Err(EstimationError::Empty);
    }
    check_values(model, rows)?;
    let layout = model.layout();
    let mut blocks = Vec::new();
    for b in model.shifts() {
        let var = b.var;
        let name = model.var_name(var).to_string();
        let (regs, z_cols) = conditioning(model, var);
        let p = z_cols.len();
        let m = stat_width(model, var, stat);
        let mut z = Vec::with_capacity(rows.n() * p);
        let mut y = vec![0.0; rows.n() * m];
        for j in 0..rows.n() {
            let r = rows.row(j);
            z.extend(z_cols.iter().map(|&c| r[c]));
            write_target(model, var, stat, r, &mut y[j * m..(j + 1) * m]);
        }
        let mu_stat = ConditionalMean::fit(&regs, &z, &y, m, rows.weights, config).map_err(|e| regress_err(&name, e))?;
        let mu_loss = ConditionalMean::fit(&regs, &z, rows.loss, 1, rows.weights, config).map_err(|e| regress_err(&name, e))?;
        blocks.push(BlockAuxiliary {
            variable: name,
            conditioning: z_cols.iter().map(|&c| layout[c].clone()).collect(),
            mu_stat,
            mu_loss,
            z_cols,
        });
    }
    Ok(AuxiliaryRegressors { blocks, stat })
}

fn aligned(model: &ShiftModel, sample: &SampleTable) -> Result<SampleTable> {
    let t = model.align(sample)?;
    t.require_loss()?;
    Ok(t)
}

/// Fits `E[T_i | Z_i]` and `E[ℓ | Z_i]` for every intervened variable.
pub fn fit_auxiliaries(model: &ShiftModel, sample: &SampleTable, config: &EstimationConfig) -> Result<AuxiliaryRegressors> {
    let t = aligned(model, sample)?;
    let rows = Rows { data: t.data(), width: t.width(), loss: t.require_loss()?, weights: None };
    fit_rows(model, &rows, &config.regression, StatKind::Sufficient)
}

/// Per-row loss and statistic residuals, the raw material of every curvature estimate.
#[derive(Clone, Debug)]
pub struct Residuals {
    offsets: Vec<usize>,
    lens: Vec<usize>,
    d: usize,
    n: usize,
    /// Normalized to sum to one when present.
    weights: Option<Vec<f64>>,
    ell: Vec<f64>,
    /// `n × blocks`.
    eps_ell: Vec<f64>,
    /// `n × d`, the stacked `u_i = D₁ᵀ ε_T,i`.
    u: Vec<f64>,
    /// `n × Σ len_i²`, row-major `D₂ᵀ ε_T,i` per block.
    d2: Option<Vec<f64>>,
}

impl Residuals {
    /// Assembles residuals computed elsewhere, e.g. for shift functions with a nonzero `D₂`.
    pub fn from_parts(
        block_lens: Vec<usize>,
        ell: Vec<f64>,
        eps_ell: Vec<f64>,
        u: Vec<f64>,
        d2: Option<Vec<f64>>,
        weights: Option<Vec<f64>>,
    ) -> Residuals {
        let n = ell.len();
        let k = block_lens.len();
        let d: usize = block_lens.iter().sum();
        assert_eq!(eps_ell.len(), n * k, "eps_ell must be n × blocks");
        assert_eq!(u.len(), n * d, "u must be n × d");
        if let Some(d2) = &d2 {
            assert_eq!(d2.len(), n * block_lens.iter().map(|l| l * l).sum::<usize>(), "d2 must be n × Σ len²");
        }
        let offsets = block_lens
            .iter()
            .scan(0, |acc, l| {
                let o = *acc;
                *acc += l;
                Some(o)
            })
            .collect();
        let weights = weights.map(|w| {
            assert_eq!(w.len(), n, "one weight per row");
            let total: f64 = w.iter().sum();
            w.iter().map(|x| x / total).collect()
        });
        Residuals { offsets, lens: block_lens, d, n, weights, ell, eps_ell, u, d2 }
    }

    fn compute(model: &ShiftModel, rows: &Rows, aux: &AuxiliaryRegressors, known_model: bool) -> Result<Residuals> {
        let shifts = model.shifts();
        let k_blocks = shifts.len();
        let n = rows.n();
        let d = model.d_delta();
        let mut eps_ell = vec![0.0; n * k_blocks];
        let mut u = vec![0.0; n * d];
        let mut terms: Vec<JacobianTerm> = Vec::new();
        let mut z = Vec::new();
        let mut pred = Vec::new();
        let mut target = Vec::new();
        let mut one = [0.0];
        for j in 0..n {
            let r = rows.row(j);
            for (k, b) in shifts.iter().enumerate() {
                let var = b.var;
                let eta = model.eta(var, r).map_err(|e| EstimationError::Row { row: j + 1, message: e.to_string() })?;
                let m = stat_width(model, var, aux.stat);
                target.resize(m, 0.0);
                pred.resize(m, 0.0);
                write_target(model, var, aux.stat, r, &mut target);
                if known_model {
                    model.family(var).write_mean_stat(&eta, &mut pred);
                    eps_ell[j * k_blocks + k] = rows.loss[j];
                } else {
                    let a = &aux.blocks[k];
                    z.clear();
                    z.extend(a.z_cols.iter().map(|&c| r[c]));
                    a.mu_stat.predict(&z, &mut pred).map_err(|e| regress_err(&a.variable, e))?;
                    a.mu_loss.predict(&z, &mut one).map_err(|e| regress_err(&a.variable, e))?;
                    eps_ell[j * k_blocks + k] = rows.loss[j] - one[0];
                }
                let ub = &mut u[j * d + b.offset..j * d + b.offset + b.len];
                match aux.stat {
                    StatKind::Sufficient => {
                        model.jacobian_terms(k, r, &eta, &mut terms)?;
                        for t in &terms {
                            ub[t.local] += t.coef * (target[t.coord] - pred[t.coord]);
                        }
                    }
                    StatKind::RawValue => {
                        for (a, x) in ub.iter_mut().enumerate() {
                            *x = target[a] - pred[a];
                        }
                    }
                }
            }
        }
        Ok(Residuals::from_parts(
            shifts.iter().map(|b| b.len).collect(),
            rows.loss.to_vec(),
            eps_ell,
            u,
            None,
            rows.weights.map(|w| w.to_vec()),
        ))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    fn weight(&self, j: usize) -> f64 {
        self.weights.as_ref().map_or(1.0 / self.n as f64, |w| w[j])
    }

    fn mean_loss(&self) -> f64 {
        match &self.weights {
            Some(w) => w.iter().zip(&self.ell).map(|(a, b)| a * b).sum(),
            None => self.ell.iter().sum::<f64>() / self.n as f64,
        }
    }

    fn d2_offsets(&self) -> Vec<usize> {
        let mut acc = 0;
        self.lens
            .iter()
            .map(|l| {
                let o = acc;
                acc += l * l;
                o
            })
            .collect()
    }

    /// `(base_loss, sg1, sg2)` with `sg2` as assembled, before symmetrization.
    pub fn raw_curvature(&self) -> (f64, Vec<f64>, DMatrix<f64>) {
        let d = self.d;
        let kb = self.lens.len();
        let ell_bar = self.mean_loss();
        let d2_off = self.d2_offsets();
        let d2_stride: usize = self.lens.iter().map(|l| l * l).sum();
        let mut sg1 = vec![0.0; d];
        let mut sg2 = DMatrix::<f64>::zeros(d, d);
        for j in 0..self.n {
            let w = self.weight(j);
            let u = &self.u[j * d..(j + 1) * d];
            let centered = self.ell[j] - ell_bar;
            for k in 0..kb {
                let (ok, lk) = (self.offsets[k], self.lens[k]);
                let e = w * self.eps_ell[j * kb + k];
                for a in 0..lk {
                    sg1[ok + a] += e * u[ok + a];
                    for b in 0..lk {
                        let mut v = u[ok + a] * u[ok + b];
                        if let Some(d2) = &self.d2 {
                            v += d2[j * d2_stride + d2_off[k] + a * lk + b];
                        }
                        sg2[(ok + a, ok + b)] += e * v;
                    }
                }
                for m in 0..kb {
                    if m == k {
                        continue;
                    }
                    let (om, lm) = (self.offsets[m], self.lens[m]);
                    for a in 0..lk {
                        let ua = w * centered * u[ok + a];
                        for b in 0..lm {
                            sg2[(ok + a, om + b)] += ua * u[om + b];
                        }
                    }
                }
            }
        }
        (ell_bar, sg1, sg2)
    }

    pub fn curvature(&self, block_index: Vec<DeltaBlock>, method: EstimateMethod) -> CurvatureEstimate {
        let (base, sg1, sg2) = self.raw_curvature();
        CurvatureEstimate::new(base, sg1, &sg2, self.n, block_index, method)
    }

    /// Taylor estimate at δ with a standard error from per-row contributions.
    ///
    /// The error treats the fitted conditional means as fixed; weighted
    /// (exact) residuals report zero.
    pub fn taylor_with_se(&self, delta: &[f64]) -> Result<(f64, f64)> {
        if delta.len() != self.d {
            return Err(EstimationError::DeltaLength { expected: self.d, got: delta.len() });
        }
        let kb = self.lens.len();
        let ell_bar = self.mean_loss();
        let d2_off = self.d2_offsets();
        let d2_stride: usize = self.lens.iter().map(|l| l * l).sum();
        let mut contrib = Vec::with_capacity(self.n);
        let mut proj = vec![0.0; kb];
        for j in 0..self.n {
            let u = &self.u[j * self.d..(j + 1) * self.d];
            for k in 0..kb {
                let (o, l) = (self.offsets[k], self.lens[k]);
                proj[k] = (0..l).map(|a| u[o + a] * delta[o + a]).sum();
            }
            let mut c = self.ell[j];
            let mut quad = 0.0;
            let total: f64 = proj.iter().sum();
            for k in 0..kb {
                let e = self.eps_ell[j * kb + k];
                c += e * proj[k];
                let mut diag = proj[k] * proj[k];
                if let Some(d2) = &self.d2 {
                    let (o, l) = (self.offsets[k], self.lens[k]);
                    for a in 0..l {
                        for b in 0..l {
                            diag += delta[o + a] * d2[j * d2_stride + d2_off[k] + a * l + b] * delta[o + b];
                        }
                    }
                }
                quad += e * diag;
                quad += (self.ell[j] - ell_bar) * proj[k] * (total - proj[k]);
            }
            contrib.push(c + 0.5 * quad);
        }
        let mean: f64 = match &self.weights {
            Some(w) => w.iter().zip(&contrib).map(|(a, b)| a * b).sum(),
            None => contrib.iter().sum::<f64>() / self.n as f64,
        };
        let se = match self.weights {
            Some(_) => 0.0,
            None if self.n > 1 => {
                let var = contrib.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (self.n - 1) as f64;
                (var / self.n as f64).sqrt()
            }
            None => f64::NAN,
        };
        Ok((mean, se))
    }
}

fn split_rows(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::stream(seed, "estimation/split", 0));
    let (a, b) = idx.split_at(n / 2);
    let (mut a, mut b) = (a.to_vec(), b.to_vec());
    a.sort_unstable();
    b.sort_unstable();
    (a, b)
}

/// Residuals for a sample, honouring the sample-split flag.
pub fn residuals(model: &ShiftModel, sample: &SampleTable, config: &EstimationConfig) -> Result<Residuals> {
    let t = aligned(model, sample)?;
    if t.n_rows() == 0 {
        return Err(EstimationError::Empty);
    }
    if config.sample_split {
        let (a, b) = split_rows(t.n_rows(), config.split_seed);
        let (fa, fb) = (t.subset(&a), t.subset(&b));
        let fit = Rows { data: fa.data(), width: fa.width(), loss: fa.require_loss()?, weights: None };
        let aux = fit_rows(model, &fit, &config.regression, StatKind::Sufficient)?;
        let eval = Rows { data: fb.data(), width: fb.width(), loss: fb.require_loss()?, weights: None };
        check_values(model, &eval)?;
        Residuals::compute(model, &eval, &aux, false)
    } else {
        let rows = Rows { data: t.data(), width: t.width(), loss: t.require_loss()?, weights: None };
        let aux = fit_rows(model, &rows, &config.regression, StatKind::Sufficient)?;
        Residuals::compute(model, &rows, &aux, false)
    }
}

/// Residual curvature estimate from a sample with a loss column.
pub fn estimate_curvature(model: &ShiftModel, sample: &SampleTable, config: &EstimationConfig) -> Result<CurvatureEstimate> {
    let method = if config.sample_split { EstimateMethod::SampleSplit } else { EstimateMethod::Residual };
    Ok(residuals(model, sample, config)?.curvature(model.delta_index().to_vec(), method))
}

/// Curvature from pre-fitted auxiliaries (fit on this or a disjoint sample).
pub fn estimate_curvature_with(model: &ShiftModel, sample: &SampleTable, aux: &AuxiliaryRegressors) -> Result<CurvatureEstimate> {
    if aux.blocks.len() != model.shifts().len() {
        return Err(EstimationError::Scope("auxiliaries do not match the model's interventions".into()));
    }
    let t = aligned(model, sample)?;
    let rows = Rows { data: t.data(), width: t.width(), loss: t.require_loss()?, weights: None };
    check_values(model, &rows)?;
    Ok(Residuals::compute(model, &rows, aux, false)?.curvature(model.delta_index().to_vec(), EstimateMethod::Residual))
}

/// Residuals over every record of a fully discrete model, weighted by its probability.
pub fn exact_residuals(model: &ShiftModel, loss: &dyn Fn(&[f64]) -> f64) -> Result<Residuals> {
    let records = model.enumerate(&vec![0.0; model.d_delta()])?;
    let width = model.record_width();
    let mut data = Vec::with_capacity(records.len() * width);
    let mut ell = Vec::with_capacity(records.len());
    let mut probs = Vec::with_capacity(records.len());
    for (r, p) in &records {
        data.extend_from_slice(r);
        ell.push(loss(r));
        probs.push(*p);
    }
    let rows = Rows { data: &data, width, loss: &ell, weights: Some(&probs) };
    let aux = fit_rows(model, &rows, &RegressionConfig::default(), StatKind::Sufficient)?;
    Residuals::compute(model, &rows, &aux, false)
}

/// Population curvature of a fully discrete model by enumeration.
pub fn exact_curvature(model: &ShiftModel, loss: &dyn Fn(&[f64]) -> f64) -> Result<CurvatureEstimate> {
    Ok(exact_residuals(model, loss)?.curvature(model.delta_index().to_vec(), EstimateMethod::Exact))
}

/// Residuals against the model's own conditional means, with the raw loss in
/// place of loss residuals.
///
/// Unbiased for the diagonal blocks only when `E[ℓ]` is zero; kept because its
/// variance has a closed form for Gaussian mean shifts.
pub fn known_model_residuals(model: &ShiftModel, sample: &SampleTable) -> Result<Residuals> {
    let t = aligned(model, sample)?;
    if t.n_rows() == 0 {
        return Err(EstimationError::Empty);
    }
    let rows = Rows { data: t.data(), width: t.width(), loss: t.require_loss()?, weights: None };
    check_values(model, &rows)?;
    let aux = AuxiliaryRegressors { blocks: vec![], stat: StatKind::Sufficient };
    Residuals::compute(model, &rows, &aux, true)
}

pub fn known_model_curvature(model: &ShiftModel, sample: &SampleTable) -> Result<CurvatureEstimate> {
    Ok(known_model_residuals(model, sample)?.curvature(model.delta_index().to_vec(), EstimateMethod::KnownModel))
}

/// Curvature for variance-scaled mean shifts without modelling `Σ(Z)`.
///
/// Every intervention must be an unguarded `variance_scaled_mean` shift; only
/// `E[W | Z]` and `E[ℓ | Z]` are fitted.
pub fn variance_scaled_curvature(model: &ShiftModel, sample: &SampleTable, config: &EstimationConfig) -> Result<CurvatureEstimate> {
    if let Some(b) = model.shifts().iter().find(|b| !matches!(b.form(), ShiftForm::VarianceScaledMean)) {
        return Err(EstimationError::Scope(format!(
            "variable '{}' does not use a variance_scaled_mean shift",
            model.var_name(b.var)
        )));
    }
    let t = aligned(model, sample)?;
    let rows = Rows { data: t.data(), width: t.width(), loss: t.require_loss()?, weights: None };
    let aux = fit_rows(model, &rows, &config.regression, StatKind::RawValue)?;
    Ok(Residuals::compute(model, &rows, &aux, false)?
        .curvature(model.delta_index().to_vec(), EstimateMethod::VarianceScaledShortcut))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IsEstimate {
    pub mean: f64,
    pub std_error: f64,
    /// `(Σw)² / Σw²`.
    pub effective_sample_size: f64,
}

/// Training rows with everything needed to evaluate `w_δ` cached per intervened variable.
///
/// Each evaluation costs one pass of sparse products and log-partitions; the
/// shift-domain check still runs for every row.
pub struct ImportanceSampler<'m> {
    model: &'m ShiftModel,
    table: SampleTable,
    loss: Vec<f64>,
    blocks: Vec<CachedBlock>,
}

struct CachedBlock {
    dim_t: usize,
    guarded: bool,
    eta: Vec<f64>,
    stat: Vec<f64>,
    h0: Vec<f64>,
    term_start: Vec<usize>,
    terms: Vec<JacobianTerm>,
}

impl<'m> ImportanceSampler<'m> {
    pub fn new(model: &'m ShiftModel, sample: &SampleTable) -> Result<ImportanceSampler<'m>> {
        let table = aligned(model, sample)?;
        let loss = table.require_loss()?.to_vec();
        if loss.is_empty() {
            return Err(EstimationError::Empty);
        }
        let rows = Rows { data: table.data(), width: table.width(), loss: &loss, weights: None };
        check_values(model, &rows)?;
        let mut blocks = Vec::new();
        let mut scratch = Vec::new();
        for (k, b) in model.shifts().iter().enumerate() {
            let fam = model.family(b.var);
            let dim_t = fam.dim_t();
            let guarded = matches!(b.form(), ShiftForm::DomainGuarded { .. });
            let mut cb = CachedBlock {
                dim_t,
                guarded,
                eta: Vec::with_capacity(rows.n() * dim_t),
                stat: vec![0.0; rows.n() * dim_t],
                h0: Vec::with_capacity(rows.n()),
                term_start: vec![0],
                terms: Vec::new(),
            };
            for j in 0..rows.n() {
                let r = rows.row(j);
                let eta = model.eta(b.var, r).map_err(|e| EstimationError::Row { row: j + 1, message: e.to_string() })?;
                fam.write_stat(&r[model.columns_of(b.var)], &mut cb.stat[j * dim_t..(j + 1) * dim_t]);
                cb.h0.push(fam.log_partition_unchecked(&eta));
                if !guarded {
                    model.jacobian_terms(k, r, &eta, &mut scratch)?;
                    cb.terms.extend_from_slice(&scratch);
                }
                cb.term_start.push(cb.terms.len());
                cb.eta.extend_from_slice(&eta);
            }
            blocks.push(cb);
        }
        Ok(ImportanceSampler { model, table, loss, blocks })
    }

    pub fn n(&self) -> usize {
        self.loss.len()
    }

    pub fn loss(&self) -> &[f64] {
        &self.loss
    }

    /// `log w_δ` of row `j`.
    pub fn log_weight(&self, j: usize, delta: &[f64], s: &mut Vec<f64>, shifted: &mut Vec<f64>) -> Result<f64> {
        let mut total = 0.0;
        for (k, (b, cb)) in self.model.shifts().iter().zip(&self.blocks).enumerate() {
            let fam = self.model.family(b.var);
            if cb.dim_t == 1 && !cb.guarded {
                let mut sj = 0.0;
                for t in &cb.terms[cb.term_start[j]..cb.term_start[j + 1]] {
                    sj += t.coef * delta[b.offset + t.local];
                }
                if sj == 0.0 {
                    continue;
                }
                let shifted = cb.eta[j] + sj;
                if !shifted.is_finite() {
                    let reason = "finite real".to_string();
                    return Err(ModelError::ShiftDomain { variable: self.model.var_name(b.var).to_string(), coord: 0, value: shifted, reason }.into());
                }
                total += sj * cb.stat[j] + cb.h0[j] - fam.log_partition_unchecked(&[shifted]);
                continue;
            }
            let eta = &cb.eta[j * cb.dim_t..(j + 1) * cb.dim_t];
            if cb.guarded {
                *s = self.model.shift_value(k, self.table.row(j), eta, &delta[b.offset..b.offset + b.len])?;
            } else {
                s.clear();
                s.resize(cb.dim_t, 0.0);
                for t in &cb.terms[cb.term_start[j]..cb.term_start[j + 1]] {
                    s[t.coord] += t.coef * delta[b.offset + t.local];
                }
            }
            shifted.clear();
            shifted.extend(eta.iter().zip(s.iter()).map(|(a, c)| a + c));
            if let Err(e) = fam.check_eta(shifted) {
                let (coord, value, reason) = match e {
                    crate::families::FamilyError::Domain { coord, value, constraint, .. } => (coord, value, constraint),
                    other => (0, f64::NAN, other.to_string()),
                };
                return Err(ModelError::ShiftDomain { variable: self.model.var_name(b.var).to_string(), coord, value, reason }.into());
            }
            let st: f64 = s.iter().zip(&cb.stat[j * cb.dim_t..(j + 1) * cb.dim_t]).map(|(a, c)| a * c).sum();
            total += st + cb.h0[j] - fam.log_partition_unchecked(shifted);
        }
        Ok(total)
    }

    pub fn weights(&self, delta: &[f64]) -> Result<Vec<f64>> {
        if delta.len() != self.model.d_delta() {
            return Err(EstimationError::DeltaLength { expected: self.model.d_delta(), got: delta.len() });
        }
        let (mut s, mut shifted) = (Vec::new(), Vec::new());
        (0..self.n()).map(|j| Ok(self.log_weight(j, delta, &mut s, &mut shifted)?.exp())).collect()
    }

    pub fn estimate(&self, delta: &[f64]) -> Result<IsEstimate> {
        Ok(weighted_mean(&self.weights(delta)?, &self.loss))
    }
}

/// Density ratios `w_δ` for every row of a sample with a loss column.
pub fn importance_weights(model: &ShiftModel, sample: &SampleTable, delta: &[f64]) -> Result<Vec<f64>> {
    ImportanceSampler::new(model, sample)?.weights(delta)
}

/// Mean and plug-in standard error of `w ℓ`.
pub fn weighted_mean(weights: &[f64], loss: &[f64]) -> IsEstimate {
    let n = loss.len() as f64;
    let terms: Vec<f64> = weights.iter().zip(loss).map(|(w, l)| w * l).collect();
    let mean = terms.iter().sum::<f64>() / n;
    let var = if loss.len() > 1 {
        terms.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        f64::NAN
    };
    let sw: f64 = weights.iter().sum();
    let sw2: f64 = weights.iter().map(|w| w * w).sum();
    IsEstimate { mean, std_error: (var / n).sqrt(), effective_sample_size: sw * sw / sw2 }
}

/// Importance-sampling estimate of `E_δ[ℓ]` from training rows.
pub fn is_estimate(model: &ShiftModel, sample: &SampleTable, delta: &[f64]) -> Result<IsEstimate> {
    ImportanceSampler::new(model, sample)?.estimate(delta)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonteCarloConfig {
    pub n: usize,
    pub seed: u64,
}

/// Simulated Taylor remainder bound along the segment from 0 to δ.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaylorBound {
    pub bound: f64,
    pub argmax_t: f64,
    pub std_error: f64,
    pub grid: Vec<f64>,
    /// Spectral radius of the curvature difference at each grid point.
    pub radius: Vec<f64>,
}

pub const BOUND_GRID_POINTS: usize = 11;

/// `½ ‖δ‖² · max_t σ(H(tδ) − H(0))` for a single constant shift, with `H(tδ)`
/// simulated from `P_{tδ}` on the grid `t ∈ {0, 0.1, …, 1}`.
///
/// `H(tδ) = E_{tδ}[ℓ (ε εᵀ − Var_{tδ}(T | Z))]` uses the model's conditional
/// moments; every grid point reuses the same random stream. The grid maximum
/// understates the supremum over `[0, 1]`. The standard error is the
/// Frobenius norm of the entrywise errors of the paired differences at the
/// argmax, which dominates the error of the spectral radius.
pub fn taylor_error_bound(
    model: &ShiftModel,
    loss: &dyn Fn(&[f64]) -> f64,
    delta: &[f64],
    mc: &MonteCarloConfig,
) -> Result<TaylorBound> {
    if delta.len() != model.d_delta() {
        return Err(EstimationError::DeltaLength { expected: model.d_delta(), got: delta.len() });
    }
    if mc.n < 2 {
        return Err(EstimationError::Scope("the remainder bound needs at least 2 draws".into()));
    }
    let grid: Vec<f64> = (0..BOUND_GRID_POINTS).map(|i| i as f64 / (BOUND_GRID_POINTS - 1) as f64).collect();
    let norm2: f64 = delta.iter().map(|x| x * x).sum();
    if norm2 == 0.0 {
        return Ok(TaylorBound {
            bound: 0.0,
            argmax_t: 0.0,
            std_error: 0.0,
            radius: vec![0.0; grid.len()],
            grid,
        });
    }
    if model.shifts().len() != 1 || !model.shifts()[0].is_constant() {
        return Err(EstimationError::Scope(
            "the remainder bound covers a single intervened variable with a constant shift".into(),
        ));
    }
    let block = &model.shifts()[0];
    let var = block.var;
    let name = model.var_name(var).to_string();
    let fam = model.family(var);
    let targets = block.targets.clone();
    let l = targets.len();
    let n = mc.n;
    // per-row contributions ℓ_c (uuᵀ − V), l × l each
    let contributions = |t: f64| -> Result<Vec<f64>> {
        let td: Vec<f64> = delta.iter().map(|x| t * x).collect();
        let mut rng = rng::stream(mc.seed, "estimation/bound", 0);
        let table = model.sample_joint(&td, n, &mut rng)?;
        let ell: Vec<f64> = (0..n).map(|j| loss(table.row(j))).collect();
        let ell_bar = ell.iter().sum::<f64>() / n as f64;
        let mut out = vec![0.0; n * l * l];
        let mut stat = vec![0.0; fam.dim_t()];
        let mut mean = vec![0.0; fam.dim_t()];
        for j in 0..n {
            let r = table.row(j);
            let eta = model.apply_shift(&name, r, &td)?;
            fam.write_stat(&r[model.columns_of(var)], &mut stat);
            fam.write_mean_stat(&eta, &mut mean);
            let v = fam.var_stat(&eta).map_err(|e| EstimationError::Row { row: j + 1, message: e.to_string() })?;
            let c = ell[j] - ell_bar;
            for (a, &ta) in targets.iter().enumerate() {
                for (b, &tb) in targets.iter().enumerate() {
                    out[j * l * l + a * l + b] = c * ((stat[ta] - mean[ta]) * (stat[tb] - mean[tb]) - v[(ta, tb)]);
                }
            }
        }
        Ok(out)
    };
    let base = contributions(0.0)?;
    let mut radius = vec![0.0];
    let mut best = (0.0, 0usize, 0.0);
    for (gi, &t) in grid.iter().enumerate().skip(1) {
        let ct = contributions(t)?;
        let diff: Vec<f64> = ct.iter().zip(&base).map(|(a, b)| a - b).collect();
        let mut mean = DMatrix::<f64>::zeros(l, l);
        for j in 0..n {
            for a in 0..l {
                for b in 0..l {
                    mean[(a, b)] += diff[j * l * l + a * l + b] / n as f64;
                }
            }
        }
        let sym = (&mean + mean.transpose()) * 0.5;
        let rho = sym.symmetric_eigenvalues().iter().fold(0.0f64, |m, e| m.max(e.abs()));
        let mut se2 = 0.0;
        for a in 0..l {
            for b in 0..l {
                let var = (0..n).map(|j| (diff[j * l * l + a * l + b] - mean[(a, b)]).powi(2)).sum::<f64>() / (n - 1) as f64;
                se2 += var / n as f64;
            }
        }
        radius.push(rho);
        if rho > best.0 {
            best = (rho, gi, se2.sqrt());
        }
    }
    Ok(TaylorBound {
        bound: 0.5 * norm2 * best.0,
        argmax_t: grid[best.1],
        std_error: 0.5 * norm2 * best.2,
        grid,
        radius,
    })
}
