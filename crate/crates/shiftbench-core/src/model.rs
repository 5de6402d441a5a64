//! Factorized shift models.
//!
//! A [`ShiftModel`] is compiled from a JSON [`ModelConfig`]: variables with a
//! family, an ordered parent list and a natural-parameter map, plus an
//! intervention list attaching a shift function to some variables. Records
//! are flat `&[f64]` slices laid out in variable declaration order (see
//! [`ShiftModel::layout`]). The global δ vector concatenates per-variable
//! blocks in declaration order; inside a block, strata (or features) are
//! major and targeted coordinates minor. Strata are enumerated
//! lexicographically with the leftmost parent most significant.

use crate::families::{sigmoid, CoordDomain, FamilyError, FamilySpec};
use crate::table::{SampleTable, TableError};
use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_GUARD_EPSILON: f64 = 1e-3;
/// Bisection bracket for the marginal-to-δ map.
pub const MARGINAL_BRACKET: f64 = 30.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub schema_version: u32,
    pub variables: Vec<VariableSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub interventions: Vec<InterventionSpec>,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub meta: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariableSpec {
    pub name: String,
    pub family: FamilySpec,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub parents: Vec<String>,
    pub eta: EtaSpec,
}

/// Natural-parameter map from parent values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case", deny_unknown_fields)]
pub enum EtaSpec {
    Constant { eta: Vec<f64> },
    /// `η = intercept + coefficients · z`, with `z` the concatenated parent values.
    Linear { intercept: Vec<f64>, coefficients: Vec<Vec<f64>> },
    /// One row per stratum of the (discrete) parents.
    Table { table: Vec<Vec<f64>> },
    /// Degenerate at `inactive_value` when the binary `gate` parent is 0,
    /// otherwise follows `active`.
    Gated {
        gate: String,
        #[serde(default)]
        inactive_value: f64,
        active: Box<EtaSpec>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterventionSpec {
    pub variable: String,
    pub shift: ShiftForm,
    /// η coordinates the shift adds to; defaults depend on the form.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case", deny_unknown_fields)]
pub enum ShiftForm {
    /// `s = δ`.
    Constant,
    /// `s = Σ_z δ_z 1{Z = z}` over the listed discrete parents (default: all parents).
    PerStratum {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        over: Option<Vec<String>>,
    },
    /// `s = Σ_k δ_k φ_k(Z)`; features are `"1"`, `"A"`, `"A*B"`, `"A^2"`, ...
    LinearInZ { features: Vec<String> },
    /// `s = δ · η(Z)`.
    Multiplicative,
    /// Mean shift by `Σδ` for Gaussians (`σ²δ` for the known-variance family).
    VarianceScaledMean,
    /// Zeroes a coordinate's shift whenever it would come within `epsilon` of a domain bound.
    DomainGuarded {
        inner: Box<ShiftForm>,
        #[serde(default = "default_epsilon")]
        epsilon: f64,
    },
}

fn default_epsilon() -> f64 {
    DEFAULT_GUARD_EPSILON
}

impl ShiftForm {
    pub fn name(&self) -> String {
        match self {
            ShiftForm::Constant => "constant".into(),
            ShiftForm::PerStratum { .. } => "per_stratum".into(),
            ShiftForm::LinearInZ { .. } => "linear_in_z".into(),
            ShiftForm::Multiplicative => "multiplicative".into(),
            ShiftForm::VarianceScaledMean => "variance_scaled_mean".into(),
            ShiftForm::DomainGuarded { inner, .. } => format!("domain_guarded({})", inner.name()),
        }
    }
}

/// Position of one variable's parameters inside the global δ.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaBlock {
    pub variable: String,
    pub offset: usize,
    pub len: usize,
    pub form: String,
    /// One label per coordinate, e.g. `"Bald | Male=1, Young=0"`.
    pub labels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
    #[error("parent graph has a cycle among {0:?}")]
    Cycle(Vec<String>),
    #[error("variable '{variable}': shifted natural parameter coordinate {coord} = {value} leaves the domain ({reason})")]
    ShiftDomain {
        variable: String,
        coord: usize,
        value: f64,
        reason: String,
    },
    #[error("variable '{variable}': {source}")]
    Family {
        variable: String,
        #[source]
        source: FamilyError,
    },
    #[error("variable '{variable}': parent '{parent}' has value {value}, which is not one of its levels")]
    Level {
        variable: String,
        parent: String,
        value: f64,
    },
    #[error("delta has length {got}, the model expects {expected}")]
    DeltaLength { expected: usize, got: usize },
    #[error("record has width {got}, the model layout has {expected} columns")]
    RecordWidth { expected: usize, got: usize },
    #[error("variable '{0}' is gated off in this record")]
    GatedOff(String),
    #[error("unknown variable '{0}'")]
    UnknownVariable(String),
    #[error("variable '{0}' is not discrete")]
    NotDiscrete(String),
    #[error("target marginal {target} is outside the achievable range ({p_plus}, {one_minus_p_minus})")]
    InfeasibleTarget {
        target: f64,
        p_plus: f64,
        one_minus_p_minus: f64,
    },
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Table(#[from] TableError),
}

fn invalid(path: impl Into<String>, message: impl Into<String>) -> ModelError {
    ModelError::Invalid { path: path.into(), message: message.into() }
}

#[derive(Clone, Debug)]
struct Strata {
    cols: Vec<usize>,
    families: Vec<FamilySpec>,
    cards: Vec<usize>,
    names: Vec<String>,
}

impl Strata {
    fn count(&self) -> usize {
        self.cards.iter().product()
    }

    fn index(&self, record: &[f64], variable: &str) -> Result<usize, ModelError> {
        let mut idx = 0;
        for k in 0..self.cols.len() {
            let v = record[self.cols[k]];
            let level = self.families[k].level_index(v).ok_or_else(|| ModelError::Level {
                variable: variable.to_string(),
                parent: self.names[k].clone(),
                value: v,
            })?;
            idx = idx * self.cards[k] + level;
        }
        Ok(idx)
    }

    fn levels(&self, mut idx: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.cards.len()];
        for k in (0..self.cards.len()).rev() {
            out[k] = self.families[k].level_value(idx % self.cards[k]);
            idx /= self.cards[k];
        }
        out
    }

    fn label(&self, idx: usize) -> String {
        self.names
            .iter()
            .zip(self.levels(idx))
            .map(|(n, v)| format!("{n}={v}"))
            .collect::<Vec<_>>()
            .join(", ")
    }
}

#[derive(Clone, Debug)]
enum CompiledEta {
    Constant(Vec<f64>),
    Linear { intercept: Vec<f64>, coefficients: Vec<Vec<f64>> },
    Table { strata: Strata, rows: Vec<Vec<f64>> },
}

#[derive(Clone, Debug)]
struct Gate {
    col: usize,
    inactive: f64,
}

#[derive(Clone, Debug)]
struct CompiledVar {
    name: String,
    family: FamilySpec,
    parents: Vec<usize>,
    parent_cols: Vec<usize>,
    cols: std::ops::Range<usize>,
    eta: CompiledEta,
    gate: Option<Gate>,
}

/// Monomial over parent columns: `(column, power)` factors.
#[derive(Clone, Debug)]
struct Feature {
    factors: Vec<(usize, i32)>,
}

impl Feature {
    fn eval(&self, record: &[f64]) -> f64 {
        self.factors.iter().map(|&(c, p)| record[c].powi(p)).product()
    }
}

#[derive(Clone, Debug)]
enum ShiftKind {
    Constant,
    PerStratum(Strata),
    LinearInZ(Vec<Feature>),
    Multiplicative,
    VarianceScaled(Vec<f64>),
}

/// Compiled shift attached to one intervened variable.
#[derive(Clone, Debug)]
pub struct ShiftBlock {
    pub var: usize,
    pub offset: usize,
    pub len: usize,
    pub targets: Vec<usize>,
    kind: ShiftKind,
    guard: Option<f64>,
    form: ShiftForm,
}

impl ShiftBlock {
    pub fn form(&self) -> &ShiftForm {
        &self.form
    }

    pub fn is_constant(&self) -> bool {
        matches!(self.kind, ShiftKind::Constant) && self.guard.is_none()
    }
}

/// One nonzero entry of `D₁ = ∂s/∂δ` at δ = 0: `s[coord] += coef · δ[local]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JacobianTerm {
    pub coord: usize,
    pub local: usize,
    pub coef: f64,
}

#[derive(Clone, Debug)]
pub struct ShiftModel {
    config: ModelConfig,
    vars: Vec<CompiledVar>,
    order: Vec<usize>,
    width: usize,
    shifts: Vec<ShiftBlock>,
    shift_of: Vec<Option<usize>>,
    delta_index: Vec<DeltaBlock>,
    d_delta: usize,
}

impl ShiftModel {
    pub fn from_json(text: &str) -> Result<ShiftModel, ModelError> {
        let config: ModelConfig =
            serde_json::from_str(text).map_err(|e| invalid("", format!("model config: {e}")))?;
        ShiftModel::new(config)
    }

    pub fn new(config: ModelConfig) -> Result<ShiftModel, ModelError> {
        if config.schema_version != SCHEMA_VERSION {
            return Err(invalid(
                "/schema_version",
                format!("unsupported schema version {} (expected {SCHEMA_VERSION})", config.schema_version),
            ));
        }
        if config.variables.is_empty() {
            return Err(invalid("/variables", "at least one variable is required"));
        }
        let n = config.variables.len();
        let index_of = |name: &str| config.variables.iter().position(|v| v.name == name);
        let mut cols = Vec::with_capacity(n);
        let mut width = 0;
        for (i, v) in config.variables.iter().enumerate() {
            let path = format!("/variables/{i}");
            if v.name.is_empty() || v.name.contains(['|', '=', ',', '*', '^']) {
                return Err(invalid(format!("{path}/name"), format!("invalid variable name '{}'", v.name)));
            }
            if config.variables[..i].iter().any(|u| u.name == v.name) {
                return Err(invalid(format!("{path}/name"), format!("duplicate variable '{}'", v.name)));
            }
            v.family.validate().map_err(|e| invalid(format!("{path}/family"), e.to_string()))?;
            let w = v.family.value_width();
            cols.push(width..width + w);
            width += w;
        }
        let mut parents = Vec::with_capacity(n);
        for (i, v) in config.variables.iter().enumerate() {
            let mut ps = Vec::new();
            for (k, p) in v.parents.iter().enumerate() {
                let path = format!("/variables/{i}/parents/{k}");
                let j = index_of(p).ok_or_else(|| invalid(&path, format!("unknown variable '{p}'")))?;
                if j == i || ps.contains(&j) {
                    return Err(invalid(&path, format!("invalid parent '{p}'")));
                }
                ps.push(j);
            }
            parents.push(ps);
        }
        let order = topological_order(&parents).ok_or_else(|| {
            ModelError::Cycle(config.variables.iter().map(|v| v.name.clone()).collect())
        })?;

        let mut vars = Vec::with_capacity(n);
        for (i, v) in config.variables.iter().enumerate() {
            let path = format!("/variables/{i}/eta");
            let parent_cols: Vec<usize> = parents[i].iter().flat_map(|&p| cols[p].clone()).collect();
            let (eta, gate) = match &v.eta {
                EtaSpec::Gated { gate, inactive_value, active } => {
                    let g = index_of(gate)
                        .filter(|g| parents[i].contains(g))
                        .ok_or_else(|| invalid(format!("{path}/gate"), format!("gate '{gate}' must be a parent")))?;
                    if config.variables[g].family != FamilySpec::BernoulliLogit {
                        return Err(invalid(format!("{path}/gate"), "gate must be a Bernoulli variable"));
                    }
                    if matches!(**active, EtaSpec::Gated { .. }) {
                        return Err(invalid(format!("{path}/active"), "nested gates are not supported"));
                    }
                    let inactive = vec![*inactive_value; v.family.value_width()];
                    v.family
                        .check_value(&inactive)
                        .map_err(|e| invalid(format!("{path}/inactive_value"), e.to_string()))?;
                    let eta = compile_eta(active, &format!("{path}/active"), v, &parents[i], &config, &cols)?;
                    (eta, Some(Gate { col: cols[g].start, inactive: *inactive_value }))
                }
                other => (compile_eta(other, &path, v, &parents[i], &config, &cols)?, None),
            };
            vars.push(CompiledVar {
                name: v.name.clone(),
                family: v.family.clone(),
                parents: parents[i].clone(),
                parent_cols,
                cols: cols[i].clone(),
                eta,
                gate,
            });
        }

        let mut specs: Vec<(usize, usize)> = Vec::new();
        for (k, iv) in config.interventions.iter().enumerate() {
            let path = format!("/interventions/{k}/variable");
            let i = index_of(&iv.variable)
                .ok_or_else(|| invalid(&path, format!("unknown variable '{}'", iv.variable)))?;
            if specs.iter().any(|&(j, _)| j == i) {
                return Err(invalid(&path, format!("variable '{}' is intervened twice", iv.variable)));
            }
            if vars[i].gate.is_some() {
                return Err(invalid(&path, format!("gated variable '{}' cannot be intervened", iv.variable)));
            }
            specs.push((i, k));
        }
        specs.sort();
        let mut shifts = Vec::new();
        let mut shift_of = vec![None; n];
        let mut delta_index = Vec::new();
        let mut offset = 0;
        for (i, k) in specs {
            let iv = &config.interventions[k];
            let path = format!("/interventions/{k}");
            let (block, labels) = compile_shift(iv, &path, i, &vars, &config, offset)?;
            delta_index.push(DeltaBlock {
                variable: vars[i].name.clone(),
                offset,
                len: block.len,
                form: iv.shift.name(),
                labels,
            });
            offset += block.len;
            shift_of[i] = Some(shifts.len());
            shifts.push(block);
        }
        Ok(ShiftModel { config, vars, order, width, shifts, shift_of, delta_index, d_delta: offset })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn d_delta(&self) -> usize {
        self.d_delta
    }

    pub fn delta_index(&self) -> &[DeltaBlock] {
        &self.delta_index
    }

    /// Coordinate labels in global δ order.
    pub fn delta_labels(&self) -> Vec<String> {
        self.delta_index.iter().flat_map(|b| b.labels.iter().cloned()).collect()
    }

    pub fn n_vars(&self) -> usize {
        self.vars.len()
    }

    pub fn var_index(&self, name: &str) -> Result<usize, ModelError> {
        self.vars
            .iter()
            .position(|v| v.name == name)
            .ok_or_else(|| ModelError::UnknownVariable(name.to_string()))
    }

    pub fn var_name(&self, i: usize) -> &str {
        &self.vars[i].name
    }

    pub fn family(&self, i: usize) -> &FamilySpec {
        &self.vars[i].family
    }

    pub fn parents(&self, i: usize) -> &[usize] {
        &self.vars[i].parents
    }

    /// Record columns holding the parent values of variable `i`, in parent order.
    pub fn parent_columns(&self, i: usize) -> &[usize] {
        &self.vars[i].parent_cols
    }

    /// Record columns of variable `i`.
    pub fn columns_of(&self, i: usize) -> std::ops::Range<usize> {
        self.vars[i].cols.clone()
    }

    pub fn is_gated(&self, i: usize) -> bool {
        self.vars[i].gate.is_some()
    }

    /// Topological order used by the samplers.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn shifts(&self) -> &[ShiftBlock] {
        &self.shifts
    }

    pub fn shift_of(&self, i: usize) -> Option<&ShiftBlock> {
        self.shift_of[i].map(|k| &self.shifts[k])
    }

    /// Record column names: the variable name, or `name.j` for vector values.
    pub fn layout(&self) -> Vec<String> {
        self.vars
            .iter()
            .flat_map(|v| {
                let w = v.cols.len();
                (0..w).map(move |j| if w == 1 { v.name.clone() } else { format!("{}.{j}", v.name) })
            })
            .collect()
    }

    pub fn record_width(&self) -> usize {
        self.width
    }

    /// True when every variable is Bernoulli or Categorical.
    pub fn is_fully_discrete(&self) -> bool {
        self.vars.iter().all(|v| v.family.cardinality().is_some())
    }

    /// Reorders a table's columns to the model layout.
    pub fn align(&self, table: &SampleTable) -> Result<SampleTable, ModelError> {
        Ok(table.select(&self.layout())?)
    }

    fn check_delta(&self, delta: &[f64]) -> Result<(), ModelError> {
        if delta.len() != self.d_delta {
            return Err(ModelError::DeltaLength { expected: self.d_delta, got: delta.len() });
        }
        Ok(())
    }

    fn check_record(&self, record: &[f64]) -> Result<(), ModelError> {
        if record.len() != self.width {
            return Err(ModelError::RecordWidth { expected: self.width, got: record.len() });
        }
        Ok(())
    }

    /// Whether variable `i` is degenerate (gate parent equal to 0) in this record.
    pub fn gated_off(&self, i: usize, record: &[f64]) -> bool {
        self.vars[i].gate.as_ref().is_some_and(|g| record[g.col] == 0.0)
    }

    /// Unshifted natural parameter η(z) of variable `i`.
    pub fn eta(&self, i: usize, record: &[f64]) -> Result<Vec<f64>, ModelError> {
        let v = &self.vars[i];
        if self.gated_off(i, record) {
            return Err(ModelError::GatedOff(v.name.clone()));
        }
        let eta = match &v.eta {
            CompiledEta::Constant(e) => e.clone(),
            CompiledEta::Linear { intercept, coefficients } => intercept
                .iter()
                .zip(coefficients)
                .map(|(b, row)| b + row.iter().zip(&v.parent_cols).map(|(c, &col)| c * record[col]).sum::<f64>())
                .collect(),
            CompiledEta::Table { strata, rows } => rows[strata.index(record, &v.name)?].clone(),
        };
        v.family
            .check_eta(&eta)
            .map_err(|source| ModelError::Family { variable: v.name.clone(), source })?;
        Ok(eta)
    }

    /// Nonzero entries of `D₁(z)` for shift block `k`; `eta` is η(z) of its variable.
    pub fn jacobian_terms(
        &self,
        k: usize,
        record: &[f64],
        eta: &[f64],
        out: &mut Vec<JacobianTerm>,
    ) -> Result<(), ModelError> {
        let b = &self.shifts[k];
        block_terms(b, &self.vars[b.var], record, eta, out, true)
    }

    /// `s(z; δ_k)` for shift block `k` given η(z); `delta_block` is the block's slice of δ.
    pub fn shift_value(&self, k: usize, record: &[f64], eta: &[f64], delta_block: &[f64]) -> Result<Vec<f64>, ModelError> {
        let b = &self.shifts[k];
        let mut terms = Vec::new();
        // the guard acts on the shifted value, so start from the unguarded terms
        block_terms(b, &self.vars[b.var], record, eta, &mut terms, false)?;
        let mut s = vec![0.0; eta.len()];
        for t in &terms {
            s[t.coord] += t.coef * delta_block[t.local];
        }
        if let Some(eps) = b.guard {
            let domain = self.vars[b.var].family.param_domain();
            for &c in &b.targets {
                if !guard_ok(&domain.coords[c], eta[c] + s[c], eps) {
                    s[c] = 0.0;
                }
            }
        }
        Ok(s)
    }

    /// Shifted natural parameter of shift block `k`, domain-checked.
    fn shifted_eta_block(&self, k: usize, record: &[f64], eta: &[f64], delta: &[f64]) -> Result<(Vec<f64>, Vec<f64>), ModelError> {
        let b = &self.shifts[k];
        let s = self.shift_value(k, record, eta, &delta[b.offset..b.offset + b.len])?;
        let shifted: Vec<f64> = eta.iter().zip(&s).map(|(a, b)| a + b).collect();
        let v = &self.vars[b.var];
        if let Err(e) = v.family.check_eta(&shifted) {
            let (coord, value, reason) = match e {
                FamilyError::Domain { coord, value, constraint, .. } => (coord, value, constraint),
                other => (0, f64::NAN, other.to_string()),
            };
            return Err(ModelError::ShiftDomain { variable: v.name.clone(), coord, value, reason });
        }
        Ok((shifted, s))
    }

    /// `η(z) + s(z; δ)` for a variable by name; identity for non-intervened variables.
    pub fn apply_shift(&self, var: &str, record: &[f64], delta: &[f64]) -> Result<Vec<f64>, ModelError> {
        self.check_delta(delta)?;
        self.check_record(record)?;
        let i = self.var_index(var)?;
        let eta = self.eta(i, record)?;
        match self.shift_of[i] {
            Some(k) => Ok(self.shifted_eta_block(k, record, &eta, delta)?.0),
            None => Ok(eta),
        }
    }

    /// `D₁(z)` (dim_T × d) and `D₂(z)` (dim_T matrices of size d × d) at δ = 0.
    pub fn shift_jacobians(&self, var: &str, record: &[f64]) -> Result<(DMatrix<f64>, Vec<DMatrix<f64>>), ModelError> {
        self.check_record(record)?;
        let i = self.var_index(var)?;
        let k = self.shift_of[i].ok_or_else(|| ModelError::Unsupported(format!("variable '{var}' is not intervened")))?;
        let eta = self.eta(i, record)?;
        let b = &self.shifts[k];
        let dim_t = self.vars[i].family.dim_t();
        let mut terms = Vec::new();
        self.jacobian_terms(k, record, &eta, &mut terms)?;
        let mut d1 = DMatrix::zeros(dim_t, b.len);
        for t in terms {
            d1[(t.coord, t.local)] += t.coef;
        }
        // every supported form is linear in δ
        let d2 = vec![DMatrix::zeros(b.len, b.len); dim_t];
        Ok((d1, d2))
    }

    /// `log w_δ(record)`.
    pub fn log_density_ratio(&self, delta: &[f64], record: &[f64]) -> Result<f64, ModelError> {
        self.check_delta(delta)?;
        self.check_record(record)?;
        let mut total = 0.0;
        for (k, b) in self.shifts.iter().enumerate() {
            let v = &self.vars[b.var];
            let eta = self.eta(b.var, record)?;
            let (shifted, s) = self.shifted_eta_block(k, record, &eta, delta)?;
            let w = &record[v.cols.clone()];
            let t = v.family.sufficient_stat(w).map_err(|source| ModelError::Family { variable: v.name.clone(), source })?;
            let st: f64 = s.iter().zip(&t).map(|(a, b)| a * b).sum();
            total += st + v.family.log_partition_unchecked(&eta) - v.family.log_partition_unchecked(&shifted);
        }
        Ok(total)
    }

    /// Density ratio `P_δ / P` at a record.
    pub fn density_ratio(&self, delta: &[f64], record: &[f64]) -> Result<f64, ModelError> {
        Ok(self.log_density_ratio(delta, record)?.exp())
    }

    /// Natural parameter used to draw variable `i` under δ.
    fn sampling_eta(&self, i: usize, record: &[f64], delta: &[f64]) -> Result<Vec<f64>, ModelError> {
        let eta = self.eta(i, record)?;
        match self.shift_of[i] {
            Some(k) => Ok(self.shifted_eta_block(k, record, &eta, delta)?.0),
            None => Ok(eta),
        }
    }

    /// Fills one record by ancestral sampling under δ.
    pub fn sample_record<R: Rng + ?Sized>(&self, delta: &[f64], rng: &mut R, record: &mut [f64]) -> Result<(), ModelError> {
        for &i in &self.order {
            let v = &self.vars[i];
            if let Some(g) = &v.gate {
                if record[g.col] == 0.0 {
                    record[v.cols.clone()].iter_mut().for_each(|x| *x = g.inactive);
                    continue;
                }
            }
            let eta = self.sampling_eta(i, record, delta)?;
            let w = v.family.sample(&eta, rng).map_err(|source| ModelError::Family { variable: v.name.clone(), source })?;
            record[v.cols.clone()].copy_from_slice(&w);
        }
        Ok(())
    }

    /// `n` i.i.d. records from `P_δ`, drawn in topological order.
    pub fn sample_joint<R: Rng + ?Sized>(&self, delta: &[f64], n: usize, rng: &mut R) -> Result<SampleTable, ModelError> {
        self.check_delta(delta)?;
        let mut data = vec![0.0; n * self.width];
        for j in 0..n {
            self.sample_record(delta, rng, &mut data[j * self.width..(j + 1) * self.width])?;
        }
        Ok(SampleTable::from_rows(self.layout(), data))
    }

    /// Every record of a fully discrete model with its probability under `P_δ`.
    pub fn enumerate(&self, delta: &[f64]) -> Result<Vec<(Vec<f64>, f64)>, ModelError> {
        self.check_delta(delta)?;
        if let Some(v) = self.vars.iter().find(|v| v.family.cardinality().is_none()) {
            return Err(ModelError::NotDiscrete(v.name.clone()));
        }
        let mut out = Vec::new();
        let mut stack = vec![(0usize, vec![0.0; self.width], 1.0f64)];
        while let Some((depth, record, p)) = stack.pop() {
            if depth == self.order.len() {
                out.push((record, p));
                continue;
            }
            let i = self.order[depth];
            let v = &self.vars[i];
            if let Some(g) = &v.gate {
                if record[g.col] == 0.0 {
                    let mut r = record;
                    r[v.cols.start] = g.inactive;
                    stack.push((depth + 1, r, p));
                    continue;
                }
            }
            let eta = self.sampling_eta(i, &record, delta)?;
            let card = v.family.cardinality().unwrap();
            for level in (0..card).rev() {
                let value = v.family.level_value(level);
                let lp = v
                    .family
                    .log_density(&[value], &eta)
                    .map_err(|source| ModelError::Family { variable: v.name.clone(), source })?;
                let mut r = record.clone();
                r[v.cols.start] = value;
                stack.push((depth + 1, r, p * lp.exp()));
            }
        }
        Ok(out)
    }

    /// δ for which the sample-averaged `P_δ(W = 1)` under `s = δ` equals `target`.
    ///
    /// Bisection on `[−30, 30]`; fails when `target` lies outside the
    /// marginals reachable at the bracket ends.
    pub fn solve_delta_for_marginal(&self, var: &str, target: f64, sample: &SampleTable) -> Result<f64, ModelError> {
        let etas = self.marginal_etas(var, sample)?;
        let marginal = |d: f64| etas.iter().map(|e| sigmoid(e + d)).sum::<f64>() / etas.len() as f64;
        let (mut lo, mut hi) = (-MARGINAL_BRACKET, MARGINAL_BRACKET);
        let (p_lo, p_hi) = (marginal(lo), marginal(hi));
        if !(target > p_lo && target < p_hi) {
            return Err(ModelError::InfeasibleTarget { target, p_plus: p_lo, one_minus_p_minus: p_hi });
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if marginal(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-15 * (1.0 + mid.abs()) {
                break;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// Sample-averaged `P_δ(W = 1)` under `s = δ` for each δ in `grid`.
    pub fn marginal_curve(&self, var: &str, sample: &SampleTable, grid: &[f64]) -> Result<Vec<f64>, ModelError> {
        let etas = self.marginal_etas(var, sample)?;
        Ok(grid
            .iter()
            .map(|d| etas.iter().map(|e| sigmoid(e + d)).sum::<f64>() / etas.len() as f64)
            .collect())
    }

    fn marginal_etas(&self, var: &str, sample: &SampleTable) -> Result<Vec<f64>, ModelError> {
        let i = self.var_index(var)?;
        if self.vars[i].family != FamilySpec::BernoulliLogit || self.vars[i].gate.is_some() {
            return Err(ModelError::Unsupported(format!("'{var}' must be an ungated Bernoulli variable")));
        }
        let table = self.align(sample)?;
        if table.n_rows() == 0 {
            return Err(ModelError::Unsupported("empty sample".into()));
        }
        (0..table.n_rows()).map(|j| Ok(self.eta(i, table.row(j))?[0])).collect()
    }
}

fn block_terms(
    b: &ShiftBlock,
    v: &CompiledVar,
    record: &[f64],
    eta: &[f64],
    out: &mut Vec<JacobianTerm>,
    guarded: bool,
) -> Result<(), ModelError> {
    out.clear();
    let nt = b.targets.len();
    match &b.kind {
        ShiftKind::Constant => {
            out.extend(b.targets.iter().enumerate().map(|(ci, &c)| JacobianTerm { coord: c, local: ci, coef: 1.0 }))
        }
        ShiftKind::PerStratum(strata) => {
            let s = strata.index(record, &v.name)?;
            out.extend(b.targets.iter().enumerate().map(|(ci, &c)| JacobianTerm { coord: c, local: s * nt + ci, coef: 1.0 }));
        }
        ShiftKind::LinearInZ(features) => {
            for (fk, f) in features.iter().enumerate() {
                let val = f.eval(record);
                out.extend(b.targets.iter().enumerate().map(|(ci, &c)| JacobianTerm { coord: c, local: fk * nt + ci, coef: val }));
            }
        }
        ShiftKind::Multiplicative => out.extend(b.targets.iter().map(|&c| JacobianTerm { coord: c, local: 0, coef: eta[c] })),
        ShiftKind::VarianceScaled(scale) => {
            out.extend(b.targets.iter().enumerate().map(|(ci, &c)| JacobianTerm { coord: c, local: ci, coef: scale[ci] }))
        }
    }
    if let (true, Some(eps)) = (guarded, b.guard) {
        let domain = v.family.param_domain();
        out.retain(|t| guard_ok(&domain.coords[t.coord], eta[t.coord], eps));
    }
    Ok(())
}

fn guard_ok(domain: &CoordDomain, x: f64, eps: f64) -> bool {
    match *domain {
        CoordDomain::Open { lower, upper } => {
            (lower == f64::NEG_INFINITY || x > lower + eps) && (upper == f64::INFINITY || x < upper - eps)
        }
        CoordDomain::Pinned(_) => false,
    }
}

/// Kahn's algorithm, smallest declaration index first; `None` on a cycle.
fn topological_order(parents: &[Vec<usize>]) -> Option<Vec<usize>> {
    let n = parents.len();
    let mut indegree: Vec<usize> = parents.iter().map(|p| p.len()).collect();
    let mut children = vec![Vec::new(); n];
    for (i, ps) in parents.iter().enumerate() {
        for &p in ps {
            children[p].push(i);
        }
    }
    let mut ready: std::collections::BTreeSet<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(&i) = ready.iter().next() {
        ready.remove(&i);
        order.push(i);
        for &c in &children[i] {
            indegree[c] -= 1;
            if indegree[c] == 0 {
                ready.insert(c);
            }
        }
    }
    (order.len() == n).then_some(order)
}

fn discrete_strata(
    names: &[String],
    path: &str,
    config: &ModelConfig,
    cols: &[std::ops::Range<usize>],
) -> Result<Strata, ModelError> {
    let mut s = Strata { cols: vec![], families: vec![], cards: vec![], names: vec![] };
    for name in names {
        let j = config
            .variables
            .iter()
            .position(|v| &v.name == name)
            .ok_or_else(|| invalid(path, format!("unknown variable '{name}'")))?;
        let f = &config.variables[j].family;
        let card = f
            .cardinality()
            .ok_or_else(|| invalid(path, format!("stratifying variable '{name}' must be discrete")))?;
        s.cols.push(cols[j].start);
        s.families.push(f.clone());
        s.cards.push(card);
        s.names.push(name.clone());
    }
    Ok(s)
}

fn compile_eta(
    spec: &EtaSpec,
    path: &str,
    v: &VariableSpec,
    parents: &[usize],
    config: &ModelConfig,
    cols: &[std::ops::Range<usize>],
) -> Result<CompiledEta, ModelError> {
    let dim_t = v.family.dim_t();
    let check = |eta: &[f64], p: String| -> Result<(), ModelError> {
        v.family.check_eta(eta).map_err(|e| invalid(p, e.to_string()))
    };
    match spec {
        EtaSpec::Constant { eta } => {
            check(eta, format!("{path}/eta"))?;
            Ok(CompiledEta::Constant(eta.clone()))
        }
        EtaSpec::Linear { intercept, coefficients } => {
            let pw: usize = parents.iter().map(|&p| cols[p].len()).sum();
            if intercept.len() != dim_t {
                return Err(invalid(format!("{path}/intercept"), format!("expected {dim_t} entries, got {}", intercept.len())));
            }
            if coefficients.len() != dim_t {
                return Err(invalid(format!("{path}/coefficients"), format!("expected {dim_t} rows, got {}", coefficients.len())));
            }
            for (r, row) in coefficients.iter().enumerate() {
                if row.len() != pw || row.iter().any(|c| !c.is_finite()) {
                    return Err(invalid(
                        format!("{path}/coefficients/{r}"),
                        format!("expected {pw} finite entries (one per parent column)"),
                    ));
                }
            }
            if intercept.iter().any(|c| !c.is_finite()) {
                return Err(invalid(format!("{path}/intercept"), "non-finite entry"));
            }
            Ok(CompiledEta::Linear { intercept: intercept.clone(), coefficients: coefficients.clone() })
        }
        EtaSpec::Table { table } => {
            let names: Vec<String> = v.parents.clone();
            let strata = discrete_strata(&names, &format!("{path}/table"), config, cols)?;
            if table.len() != strata.count() {
                return Err(invalid(
                    format!("{path}/table"),
                    format!("expected {} rows (one per parent stratum), got {}", strata.count(), table.len()),
                ));
            }
            for (r, row) in table.iter().enumerate() {
                check(row, format!("{path}/table/{r}"))?;
            }
            Ok(CompiledEta::Table { strata, rows: table.clone() })
        }
        EtaSpec::Gated { .. } => Err(invalid(path, "nested gates are not supported")),
    }
}

fn compile_shift(
    iv: &InterventionSpec,
    path: &str,
    i: usize,
    vars: &[CompiledVar],
    config: &ModelConfig,
    offset: usize,
) -> Result<(ShiftBlock, Vec<String>), ModelError> {
    let v = &vars[i];
    let family = &v.family;
    let cols: Vec<std::ops::Range<usize>> = vars.iter().map(|u| u.cols.clone()).collect();
    let (form, guard) = match &iv.shift {
        ShiftForm::DomainGuarded { inner, epsilon } => {
            if matches!(**inner, ShiftForm::DomainGuarded { .. }) {
                return Err(invalid(format!("{path}/shift/inner"), "nested guards are not supported"));
            }
            if !(*epsilon > 0.0 && epsilon.is_finite()) {
                return Err(invalid(format!("{path}/shift/epsilon"), "epsilon must be positive"));
            }
            ((**inner).clone(), Some(*epsilon))
        }
        other => (other.clone(), None),
    };
    let shiftable = family.shiftable_coords();
    let default_targets = match (&form, family) {
        (ShiftForm::VarianceScaledMean, FamilySpec::GaussianFull { dim }) => (0..*dim).collect(),
        (ShiftForm::VarianceScaledMean, FamilySpec::GaussianKnownVar { .. }) => vec![0],
        (ShiftForm::VarianceScaledMean, _) => {
            return Err(invalid(format!("{path}/shift"), "variance_scaled_mean needs a Gaussian variable"))
        }
        _ => shiftable.clone(),
    };
    let targets = match &iv.target {
        Some(t) => {
            if t.is_empty() || t.iter().enumerate().any(|(k, c)| !shiftable.contains(c) || t[..k].contains(c)) {
                return Err(invalid(
                    format!("{path}/target"),
                    format!("targets must be distinct shiftable coordinates among {shiftable:?}"),
                ));
            }
            if matches!(form, ShiftForm::VarianceScaledMean) && *t != default_targets {
                return Err(invalid(format!("{path}/target"), "variance_scaled_mean always targets the mean block"));
            }
            t.clone()
        }
        None => default_targets,
    };
    let nt = targets.len();
    let suffix = |c: usize| if family.dim_t() == 1 { String::new() } else { format!("[{c}]") };
    let name = &v.name;
    let (kind, labels): (ShiftKind, Vec<String>) = match &form {
        ShiftForm::Constant => (ShiftKind::Constant, targets.iter().map(|&c| format!("{name}{}", suffix(c))).collect()),
        ShiftForm::PerStratum { over } => {
            let names: Vec<String> = over.clone().unwrap_or_else(|| v.parents.iter().map(|&p| vars[p].name.clone()).collect());
            for (k, n) in names.iter().enumerate() {
                let is_parent = v.parents.iter().any(|&p| &vars[p].name == n);
                if !is_parent || names[..k].contains(n) {
                    return Err(invalid(format!("{path}/shift/over/{k}"), format!("'{n}' must be a distinct parent of '{name}'")));
                }
            }
            let strata = discrete_strata(&names, &format!("{path}/shift/over"), config, &cols)?;
            let mut labels = Vec::new();
            for s in 0..strata.count() {
                for &c in &targets {
                    let cond = strata.label(s);
                    labels.push(if cond.is_empty() {
                        format!("{name}{}", suffix(c))
                    } else {
                        format!("{name}{} | {cond}", suffix(c))
                    });
                }
            }
            (ShiftKind::PerStratum(strata), labels)
        }
        ShiftForm::LinearInZ { features } => {
            if features.is_empty() {
                return Err(invalid(format!("{path}/shift/features"), "at least one feature is required"));
            }
            let mut compiled = Vec::new();
            let mut labels = Vec::new();
            for (k, f) in features.iter().enumerate() {
                let feat = parse_feature(f, v, vars).map_err(|m| invalid(format!("{path}/shift/features/{k}"), m))?;
                compiled.push(feat);
                for &c in &targets {
                    labels.push(format!("{name}{} · {}", suffix(c), f.trim()));
                }
            }
            (ShiftKind::LinearInZ(compiled), labels)
        }
        ShiftForm::Multiplicative => (ShiftKind::Multiplicative, vec![format!("{name} × η")]),
        ShiftForm::VarianceScaledMean => {
            let scale = match family {
                FamilySpec::GaussianKnownVar { sigma } => vec![*sigma],
                _ => vec![1.0; nt],
            };
            (ShiftKind::VarianceScaled(scale), targets.iter().map(|&c| format!("{name} mean[{c}]")).collect())
        }
        ShiftForm::DomainGuarded { .. } => unreachable!("unwrapped above"),
    };
    let len = match &kind {
        ShiftKind::Multiplicative => 1,
        _ => labels.len(),
    };
    Ok((ShiftBlock { var: i, offset, len, targets, kind, guard, form: iv.shift.clone() }, labels))
}

fn parse_feature(text: &str, v: &CompiledVar, vars: &[CompiledVar]) -> Result<Feature, String> {
    let text = text.trim();
    if text == "1" {
        return Ok(Feature { factors: vec![] });
    }
    let mut factors = Vec::new();
    for part in text.split('*') {
        let part = part.trim();
        let (name, power) = match part.split_once('^') {
            Some((n, p)) => (n.trim(), p.trim().parse::<i32>().map_err(|_| format!("bad power in '{part}'"))?),
            None => (part, 1),
        };
        if !(1..=8).contains(&power) {
            return Err(format!("power must be in 1..=8 in '{part}'"));
        }
        let p = v
            .parents
            .iter()
            .copied()
            .find(|&p| vars[p].name == name)
            .ok_or_else(|| format!("'{name}' is not a parent of '{}'", v.name))?;
        if vars[p].cols.len() != 1 {
            return Err(format!("feature variable '{name}' must be scalar"));
        }
        factors.push((vars[p].cols.start, power));
    }
    Ok(Feature { factors })
}

#[cfg(test)]
pub(crate) mod tests;
