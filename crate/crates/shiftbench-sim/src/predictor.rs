//! Scoring rules and losses.

use crate::SimError;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use shiftbench_core::families::sigmoid;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// `1{(p > ½) ≠ y}`.
    ZeroOne,
    /// `−y ln p − (1 − y) ln(1 − p)`, with `p` clipped to `[1e-12, 1 − 1e-12]`.
    CrossEntropy,
    /// `(y − f)²`.
    Squared,
    /// The prediction itself.
    Value,
}

impl LossKind {
    pub fn eval(self, prediction: f64, target: f64) -> f64 {
        match self {
            LossKind::ZeroOne => (((prediction > 0.5) as u8 as f64) != target) as u8 as f64,
            LossKind::CrossEntropy => {
                let p = prediction.clamp(1e-12, 1.0 - 1e-12);
                -(target * p.ln() + (1.0 - target) * (1.0 - p).ln())
            }
            LossKind::Squared => (target - prediction).powi(2),
            LossKind::Value => prediction,
        }
    }
}

/// `σ(coef₀ + Σ coefᵢ₊₁ x_{cols[i]})`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Logistic {
    pub cols: Vec<usize>,
    pub coef: Vec<f64>,
}

impl Logistic {
    pub fn prob(&self, record: &[f64]) -> f64 {
        let z = self.coef[0] + self.cols.iter().zip(&self.coef[1..]).map(|(&c, w)| w * record[c]).sum::<f64>();
        sigmoid(z)
    }

    /// Maximum-likelihood fit by iteratively reweighted least squares on the
    /// rows of `records` (row-major, `width` wide) selected by `keep`.
    pub fn fit(records: &[f64], width: usize, cols: Vec<usize>, target: usize, keep: impl Fn(&[f64]) -> bool) -> Result<Logistic, SimError> {
        let rows: Vec<&[f64]> = records.chunks(width).filter(|r| keep(r)).collect();
        let p = cols.len() + 1;
        if rows.len() < p {
            return Err(SimError::Config(format!("logistic fit needs at least {p} rows, got {}", rows.len())));
        }
        let x = DMatrix::from_fn(rows.len(), p, |i, j| if j == 0 { 1.0 } else { rows[i][cols[j - 1]] });
        let y = DVector::from_fn(rows.len(), |i, _| rows[i][target]);
        let coef = irls(&x, &y)?;
        Ok(Logistic { cols, coef: coef.iter().copied().collect() })
    }
}

fn irls(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>, SimError> {
    let p = x.ncols();
    let mut beta = DVector::zeros(p);
    for _ in 0..100 {
        let eta = x * &beta;
        let mu = eta.map(sigmoid);
        let w = mu.map(|m| (m * (1.0 - m)).max(1e-12));
        let mut xtwx = DMatrix::zeros(p, p);
        for (i, row) in x.row_iter().enumerate() {
            xtwx += row.transpose() * row * w[i];
        }
        let grad = x.transpose() * (y - &mu);
        let step = xtwx
            .cholesky()
            .ok_or_else(|| SimError::Config("logistic fit: separated or collinear design".into()))?
            .solve(&grad);
        beta += &step;
        if step.amax() < 1e-10 * (1.0 + beta.amax()) {
            return Ok(beta);
        }
    }
    Err(SimError::Config("logistic fit did not converge".into()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Predictor {
    /// `untested` when the `gate` column is 0, `tested` otherwise.
    TwoBranch { gate: usize, untested: Logistic, tested: Logistic },
    Logistic(Logistic),
    /// `Σ coefᵢ x_{cols[i]}`.
    Linear { cols: Vec<usize>, coef: Vec<f64> },
    Column { col: usize },
}

impl Predictor {
    pub fn predict(&self, record: &[f64]) -> f64 {
        match self {
            Predictor::TwoBranch { gate, untested, tested } => {
                if record[*gate] == 0.0 {
                    untested.prob(record)
                } else {
                    tested.prob(record)
                }
            }
            Predictor::Logistic(m) => m.prob(record),
            Predictor::Linear { cols, coef } => cols.iter().zip(coef).map(|(&c, w)| w * record[c]).sum(),
            Predictor::Column { col } => record[*col],
        }
    }
}
