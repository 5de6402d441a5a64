//! Conditional-mean regressions for residualization.
//!
//! Discrete conditioning sets use exact per-stratum means. Anything with a
//! continuous coordinate uses ridge regression on a polynomial expansion
//! (intercept unpenalized). Powers above one of a binary coordinate are
//! dropped since they duplicate lower-order columns.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegressionConfig {
    /// Polynomial degree for continuous conditioning sets, 1 to 3.
    #[serde(default = "default_degree")]
    pub degree: usize,
    /// Ridge penalty on non-intercept coefficients.
    #[serde(default = "default_ridge")]
    pub ridge: f64,
}

fn default_degree() -> usize {
    2
}

fn default_ridge() -> f64 {
    1e-3
}

impl Default for RegressionConfig {
    fn default() -> Self {
        RegressionConfig { degree: default_degree(), ridge: default_ridge() }
    }
}

/// How a conditioning coordinate enters the regression.
#[derive(Clone, Debug, PartialEq)]
pub enum Regressor {
    /// Discrete with levels given by `level(value)`; `values[k]` is the value of level `k`.
    Discrete { name: String, values: Vec<f64> },
    Continuous { name: String },
}

impl Regressor {
    fn name(&self) -> &str {
        match self {
            Regressor::Discrete { name, .. } | Regressor::Continuous { name } => name,
        }
    }

    fn level(&self, x: f64) -> Option<usize> {
        match self {
            Regressor::Discrete { values, .. } => values.iter().position(|v| *v == x),
            Regressor::Continuous { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RegressError {
    #[error("no rows in stratum {0}")]
    EmptyStratum(String),
    #[error("value {value} of '{name}' is not a level")]
    Level { name: String, value: f64 },
    #[error("invalid regression config: {0}")]
    Config(String),
    #[error("no rows to fit")]
    Empty,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "class", rename_all = "snake_case")]
pub enum MeanModel {
    Strata {
        cards: Vec<usize>,
        /// Row-major `strata × outputs`.
        means: Vec<f64>,
        counts: Vec<usize>,
        /// Total row weight per stratum (equal to `counts` when unweighted).
        mass: Vec<f64>,
    },
    Ridge {
        /// Exponent of each regressor in each feature.
        exponents: Vec<Vec<u8>>,
        /// Row-major `features × outputs`.
        coef: Vec<f64>,
        lambda: f64,
    },
}

/// Fitted map `z ↦ E[y | z]` for a vector-valued `y`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConditionalMean {
    #[serde(skip)]
    regressors: Vec<Regressor>,
    pub outputs: usize,
    pub model: MeanModel,
    /// In-sample R² per output (1 when the output is constant and fitted exactly).
    pub r_squared: Vec<f64>,
}

impl ConditionalMean {
    /// Fits on row-major `z` (`n × regressors.len()`) and `y` (`n × outputs`).
    /// Optional row weights make this a weighted fit (exact enumeration passes probabilities).
    pub fn fit(
        regressors: &[Regressor],
        z: &[f64],
        y: &[f64],
        outputs: usize,
        weights: Option<&[f64]>,
        config: &RegressionConfig,
    ) -> Result<ConditionalMean, RegressError> {
        let p = regressors.len();
        let n = y.len() / outputs.max(1);
        if n == 0 {
            return Err(RegressError::Empty);
        }
        let discrete = regressors.iter().all(|r| matches!(r, Regressor::Discrete { .. }));
        let model = if discrete {
            fit_strata(regressors, z, y, weights, n, outputs)?
        } else {
            if !(1..=3).contains(&config.degree) {
                return Err(RegressError::Config(format!("degree must be 1..=3, got {}", config.degree)));
            }
            if !(config.ridge >= 0.0 && config.ridge.is_finite()) {
                return Err(RegressError::Config("ridge penalty must be nonnegative".into()));
            }
            fit_ridge(regressors, z, y, weights, n, p, outputs, config)
        };
        let mut fitted = ConditionalMean { regressors: regressors.to_vec(), outputs, model, r_squared: vec![] };
        fitted.r_squared = fitted.r_squared_on(z, y, weights)?;
        Ok(fitted)
    }

    pub fn predict(&self, z: &[f64], out: &mut [f64]) -> Result<(), RegressError> {
        match &self.model {
            MeanModel::Strata { cards, means, mass, .. } => {
                let s = stratum_index(&self.regressors, cards, z)?;
                if mass[s] <= 0.0 {
                    return Err(RegressError::EmptyStratum(stratum_label(&self.regressors, cards, s)));
                }
                out.copy_from_slice(&means[s * self.outputs..(s + 1) * self.outputs]);
            }
            MeanModel::Ridge { exponents, coef, .. } => {
                out.iter_mut().for_each(|o| *o = 0.0);
                for (f, e) in exponents.iter().enumerate() {
                    let x = monomial(e, z);
                    for (o, c) in out.iter_mut().zip(&coef[f * self.outputs..(f + 1) * self.outputs]) {
                        *o += c * x;
                    }
                }
            }
        }
        Ok(())
    }

    fn r_squared_on(&self, z: &[f64], y: &[f64], weights: Option<&[f64]>) -> Result<Vec<f64>, RegressError> {
        let m = self.outputs;
        let p = self.regressors.len();
        let n = y.len() / m;
        let wt = |j: usize| weights.map_or(1.0, |w| w[j]);
        let total: f64 = (0..n).map(wt).sum();
        let mut mean = vec![0.0; m];
        for j in 0..n {
            for k in 0..m {
                mean[k] += wt(j) * y[j * m + k] / total;
            }
        }
        let mut sst = vec![0.0; m];
        let mut ssr = vec![0.0; m];
        let mut pred = vec![0.0; m];
        for j in 0..n {
            self.predict(&z[j * p..(j + 1) * p], &mut pred)?;
            for k in 0..m {
                sst[k] += wt(j) * (y[j * m + k] - mean[k]).powi(2);
                ssr[k] += wt(j) * (y[j * m + k] - pred[k]).powi(2);
            }
        }
        Ok(sst
            .iter()
            .zip(&ssr)
            .map(|(t, r)| if *t > 0.0 { 1.0 - r / t } else if *r <= 1e-20 { 1.0 } else { 0.0 })
            .collect())
    }
}

fn stratum_index(regressors: &[Regressor], cards: &[usize], z: &[f64]) -> Result<usize, RegressError> {
    let mut s = 0;
    for (k, r) in regressors.iter().enumerate() {
        let level = r.level(z[k]).ok_or_else(|| RegressError::Level { name: r.name().to_string(), value: z[k] })?;
        s = s * cards[k] + level;
    }
    Ok(s)
}

fn stratum_label(regressors: &[Regressor], cards: &[usize], mut s: usize) -> String {
    let mut parts = vec![String::new(); regressors.len()];
    for k in (0..regressors.len()).rev() {
        let level = s % cards[k];
        s /= cards[k];
        if let Regressor::Discrete { name, values } = &regressors[k] {
            parts[k] = format!("{name}={}", values[level]);
        }
    }
    if parts.is_empty() {
        "(all rows)".into()
    } else {
        parts.join(", ")
    }
}

fn fit_strata(
    regressors: &[Regressor],
    z: &[f64],
    y: &[f64],
    weights: Option<&[f64]>,
    n: usize,
    m: usize,
) -> Result<MeanModel, RegressError> {
    let p = regressors.len();
    let cards: Vec<usize> = regressors
        .iter()
        .map(|r| match r {
            Regressor::Discrete { values, .. } => values.len(),
            Regressor::Continuous { .. } => unreachable!(),
        })
        .collect();
    let count: usize = cards.iter().product();
    let mut sums = vec![0.0; count * m];
    let mut counts = vec![0usize; count];
    let mut mass = vec![0.0; count];
    for j in 0..n {
        let s = stratum_index(regressors, &cards, &z[j * p..(j + 1) * p])?;
        let w = weights.map_or(1.0, |w| w[j]);
        counts[s] += 1;
        mass[s] += w;
        for k in 0..m {
            sums[s * m + k] += w * y[j * m + k];
        }
    }
    if let Some(s) = mass.iter().position(|c| *c <= 0.0) {
        return Err(RegressError::EmptyStratum(stratum_label(regressors, &cards, s)));
    }
    for s in 0..count {
        for k in 0..m {
            sums[s * m + k] /= mass[s];
        }
    }
    Ok(MeanModel::Strata { cards, means: sums, counts, mass })
}

fn monomial(e: &[u8], z: &[f64]) -> f64 {
    e.iter().zip(z).map(|(&p, x)| x.powi(p as i32)).product()
}

/// Exponent vectors of total degree ≤ `degree`, constant first, then by degree.
fn exponents(regressors: &[Regressor], degree: usize) -> Vec<Vec<u8>> {
    let p = regressors.len();
    let mut out: Vec<Vec<u8>> = vec![vec![0; p]];
    let mut frontier = vec![vec![0u8; p]];
    for _ in 0..degree {
        let mut next = Vec::new();
        for e in &frontier {
            // extend only at or after the last nonzero position to avoid duplicates
            let start = e.iter().rposition(|&x| x > 0).unwrap_or(0);
            for k in start..p {
                let mut f = e.clone();
                f[k] += 1;
                let binary = matches!(&regressors[k], Regressor::Discrete { values, .. } if values.len() == 2);
                if binary && f[k] > 1 {
                    continue;
                }
                next.push(f);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

fn fit_ridge(
    regressors: &[Regressor],
    z: &[f64],
    y: &[f64],
    weights: Option<&[f64]>,
    n: usize,
    p: usize,
    m: usize,
    config: &RegressionConfig,
) -> MeanModel {
    let exps = exponents(regressors, config.degree);
    let f = exps.len();
    let mut xtx = DMatrix::<f64>::zeros(f, f);
    let mut xty = DMatrix::<f64>::zeros(f, m);
    let mut x = DVector::<f64>::zeros(f);
    for j in 0..n {
        let zr = &z[j * p..(j + 1) * p];
        for (k, e) in exps.iter().enumerate() {
            x[k] = monomial(e, zr);
        }
        let w = weights.map_or(1.0, |w| w[j]);
        xtx.ger(w, &x, &x, 1.0);
        for o in 0..m {
            let yo = w * y[j * m + o];
            for k in 0..f {
                xty[(k, o)] += x[k] * yo;
            }
        }
    }
    // penalty is per unit of average row weight, so probability weights behave like counts
    let mean_weight = weights.map_or(1.0, |w| w.iter().sum::<f64>() / n as f64);
    for k in 1..f {
        xtx[(k, k)] += config.ridge * mean_weight;
    }
    let beta = match xtx.clone().cholesky() {
        Some(c) => c.solve(&xty),
        None => xtx.svd(true, true).solve(&xty, 1e-12).expect("svd solve with both factors"),
    };
    let mut coef = vec![0.0; f * m];
    for k in 0..f {
        for o in 0..m {
            coef[k * m + o] = beta[(k, o)];
        }
    }
    MeanModel::Ridge { exponents: exps, coef, lambda: config.ridge }
}
