//! Conditional exponential-family catalog.
//!
//! Each family is written as `g(w) exp(ηᵀT(w) − h(η))`. The catalog supplies
//! `T`, `h`, `∇h`, `∇²h`, the natural-parameter domain and a sampler.
//! Values are passed as `&[f64]` so that vector-valued families
//! (multivariate Gaussian) share the interface with scalar ones.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

/// Exponential-family kind with its fixed hyper-parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FamilySpec {
    /// `T(w) = w`, `h(η) = log(1 + e^η)`, support {0, 1}.
    BernoulliLogit,
    /// One-hot statistic over categories `1..=k`; the last logit is pinned to 0.
    Categorical { k: usize },
    /// `T(w) = w/σ`, `η = μ/σ`, `h(η) = η²/2`.
    GaussianKnownVar { sigma: f64 },
    /// `T(w) = (w, vec(wwᵀ))` with `η = (Σ⁻¹μ, −½ vec(Σ⁻¹))`.
    GaussianFull { dim: usize },
    /// `T(w) = w`, `h(η) = e^η`, support the nonnegative integers.
    Poisson,
    /// `T(w) = (log w, w)`, shape `η₁ + 1`, rate `−η₂`.
    Gamma,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FamilyError {
    #[error("{family}: natural parameter coordinate {coord} = {value} violates {constraint}")]
    Domain {
        family: String,
        coord: usize,
        value: f64,
        constraint: String,
    },
    #[error("{family}: value {value:?} outside support ({reason})")]
    Support {
        family: String,
        value: Vec<f64>,
        reason: String,
    },
    #[error("{family}: expected length {expected}, got {got}")]
    Dimension {
        family: String,
        expected: usize,
        got: usize,
    },
    #[error("invalid family: {0}")]
    Spec(String),
}

/// Constraint on a single natural-parameter coordinate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CoordDomain {
    /// Open interval `(lower, upper)`; infinite ends allowed.
    Open { lower: f64, upper: f64 },
    /// Coordinate must equal this value (Categorical gauge).
    Pinned(f64),
}

impl CoordDomain {
    pub fn contains(&self, x: f64) -> bool {
        match *self {
            CoordDomain::Open { lower, upper } => x.is_finite() && x > lower && x < upper,
            CoordDomain::Pinned(v) => x == v,
        }
    }

    fn describe(&self) -> String {
        match *self {
            CoordDomain::Open { lower, upper } => format!("open interval ({lower}, {upper})"),
            CoordDomain::Pinned(v) => format!("pinned value {v}"),
        }
    }
}

/// Natural-parameter domain: per-coordinate constraints plus, for the full
/// Gaussian, negative definiteness of the symmetrized precision block.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamDomain {
    pub coords: Vec<CoordDomain>,
    /// `(offset, dim)` of a row-major `dim × dim` block that must be negative definite.
    pub negative_definite: Option<(usize, usize)>,
}

const REALS: CoordDomain = CoordDomain::Open {
    lower: f64::NEG_INFINITY,
    upper: f64::INFINITY,
};

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Polygamma of order one, by recurrence up to `x ≥ 20` and the asymptotic series.
pub fn trigamma(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 20.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let r = 1.0 / x;
    let r2 = r * r;
    acc + r
        + 0.5 * r2
        + r * r2 * (1.0 / 6.0 - r2 * (1.0 / 30.0 - r2 * (1.0 / 42.0 - r2 / 30.0)))
}

impl FamilySpec {
    pub fn name(&self) -> String {
        match self {
            FamilySpec::BernoulliLogit => "bernoulli_logit".into(),
            FamilySpec::Categorical { k } => format!("categorical({k})"),
            FamilySpec::GaussianKnownVar { sigma } => format!("gaussian_known_var(sigma={sigma})"),
            FamilySpec::GaussianFull { dim } => format!("gaussian_full(dim={dim})"),
            FamilySpec::Poisson => "poisson".into(),
            FamilySpec::Gamma => "gamma".into(),
        }
    }

    /// Checks the hyper-parameters.
    pub fn validate(&self) -> Result<(), FamilyError> {
        match *self {
            FamilySpec::Categorical { k } if k < 2 => {
                Err(FamilyError::Spec(format!("categorical needs k >= 2, got {k}")))
            }
            FamilySpec::GaussianKnownVar { sigma } if !(sigma.is_finite() && sigma > 0.0) => Err(
                FamilyError::Spec(format!("gaussian sigma must be positive, got {sigma}")),
            ),
            FamilySpec::GaussianFull { dim } if dim == 0 => {
                Err(FamilyError::Spec("gaussian_full needs dim >= 1".into()))
            }
            _ => Ok(()),
        }
    }

    /// Length of the sufficient statistic.
    pub fn dim_t(&self) -> usize {
        match *self {
            FamilySpec::BernoulliLogit | FamilySpec::GaussianKnownVar { .. } | FamilySpec::Poisson => 1,
            FamilySpec::Categorical { k } => k,
            FamilySpec::GaussianFull { dim } => dim + dim * dim,
            FamilySpec::Gamma => 2,
        }
    }

    /// Number of scalar columns a value occupies.
    pub fn value_width(&self) -> usize {
        match *self {
            FamilySpec::GaussianFull { dim } => dim,
            _ => 1,
        }
    }

    /// Number of levels for discrete families (values `0/1` or `1..=k`).
    pub fn cardinality(&self) -> Option<usize> {
        match *self {
            FamilySpec::BernoulliLogit => Some(2),
            FamilySpec::Categorical { k } => Some(k),
            _ => None,
        }
    }

    /// Level index of a discrete value, `None` when not a valid level.
    pub fn level_index(&self, w: f64) -> Option<usize> {
        match *self {
            FamilySpec::BernoulliLogit if w == 0.0 || w == 1.0 => Some(w as usize),
            FamilySpec::Categorical { k } if w.fract() == 0.0 && w >= 1.0 && w <= k as f64 => {
                Some(w as usize - 1)
            }
            _ => None,
        }
    }

    /// Value corresponding to a level index (inverse of `level_index`).
    pub fn level_value(&self, index: usize) -> f64 {
        match self {
            FamilySpec::Categorical { .. } => (index + 1) as f64,
            _ => index as f64,
        }
    }

    /// Coordinates of η a shift may target.
    pub fn shiftable_coords(&self) -> Vec<usize> {
        match *self {
            FamilySpec::Categorical { k } => (0..k - 1).collect(),
            _ => (0..self.dim_t()).collect(),
        }
    }

    pub fn param_domain(&self) -> ParamDomain {
        match *self {
            FamilySpec::BernoulliLogit | FamilySpec::GaussianKnownVar { .. } | FamilySpec::Poisson => {
                ParamDomain { coords: vec![REALS], negative_definite: None }
            }
            FamilySpec::Categorical { k } => {
                let mut coords = vec![REALS; k];
                coords[k - 1] = CoordDomain::Pinned(0.0);
                ParamDomain { coords, negative_definite: None }
            }
            FamilySpec::GaussianFull { dim } => {
                let mut coords = vec![REALS; dim + dim * dim];
                if dim == 1 {
                    coords[1] = CoordDomain::Open { lower: f64::NEG_INFINITY, upper: 0.0 };
                }
                ParamDomain {
                    coords,
                    negative_definite: if dim > 1 { Some((dim, dim)) } else { None },
                }
            }
            FamilySpec::Gamma => ParamDomain {
                coords: vec![
                    CoordDomain::Open { lower: -1.0, upper: f64::INFINITY },
                    CoordDomain::Open { lower: f64::NEG_INFINITY, upper: 0.0 },
                ],
                negative_definite: None,
            },
        }
    }

    fn dimension_error(&self, expected: usize, got: usize) -> FamilyError {
        FamilyError::Dimension { family: self.name(), expected, got }
    }

    /// Rejects η outside the natural-parameter domain.
    pub fn check_eta(&self, eta: &[f64]) -> Result<(), FamilyError> {
        if eta.len() != self.dim_t() {
            return Err(self.dimension_error(self.dim_t(), eta.len()));
        }
        if matches!(self, FamilySpec::BernoulliLogit | FamilySpec::GaussianKnownVar { .. } | FamilySpec::Poisson)
            && eta[0].is_finite()
        {
            return Ok(());
        }
        let domain = self.param_domain();
        for (c, (x, d)) in eta.iter().zip(&domain.coords).enumerate() {
            if !d.contains(*x) {
                return Err(FamilyError::Domain {
                    family: self.name(),
                    coord: c,
                    value: *x,
                    constraint: d.describe(),
                });
            }
        }
        if let Some((offset, dim)) = domain.negative_definite {
            let s = sym_block(eta, offset, dim);
            let max_eig = s.symmetric_eigenvalues().max();
            if !(max_eig < 0.0) {
                return Err(FamilyError::Domain {
                    family: self.name(),
                    coord: offset,
                    value: max_eig,
                    constraint: "negative definite precision block (largest eigenvalue shown)".into(),
                });
            }
        }
        Ok(())
    }

    /// Rejects values outside the support.
    pub fn check_value(&self, w: &[f64]) -> Result<(), FamilyError> {
        if w.len() != self.value_width() {
            return Err(self.dimension_error(self.value_width(), w.len()));
        }
        let bad = |reason: &str| FamilyError::Support {
            family: self.name(),
            value: w.to_vec(),
            reason: reason.into(),
        };
        if w.iter().any(|x| !x.is_finite()) {
            return Err(bad("non-finite value"));
        }
        match *self {
            FamilySpec::BernoulliLogit | FamilySpec::Categorical { .. } => {
                if self.level_index(w[0]).is_none() {
                    return Err(bad("not a level of the discrete family"));
                }
            }
            FamilySpec::Poisson => {
                if w[0] < 0.0 || w[0].fract() != 0.0 {
                    return Err(bad("Poisson counts are nonnegative integers"));
                }
            }
            FamilySpec::Gamma => {
                if w[0] <= 0.0 {
                    return Err(bad("Gamma support is w > 0"));
                }
            }
            FamilySpec::GaussianKnownVar { .. } | FamilySpec::GaussianFull { .. } => {}
        }
        Ok(())
    }

    /// `T(w)`.
    pub fn sufficient_stat(&self, w: &[f64]) -> Result<Vec<f64>, FamilyError> {
        self.check_value(w)?;
        let mut t = vec![0.0; self.dim_t()];
        self.write_stat(w, &mut t);
        Ok(t)
    }

    /// `T(w)` into a caller buffer; `w` must already be in the support.
    pub fn write_stat(&self, w: &[f64], out: &mut [f64]) {
        match *self {
            FamilySpec::BernoulliLogit | FamilySpec::Poisson => out[0] = w[0],
            FamilySpec::Categorical { .. } => {
                out.iter_mut().for_each(|x| *x = 0.0);
                out[w[0] as usize - 1] = 1.0;
            }
            FamilySpec::GaussianKnownVar { sigma } => out[0] = w[0] / sigma,
            FamilySpec::GaussianFull { dim } => {
                out[..dim].copy_from_slice(w);
                for a in 0..dim {
                    for b in 0..dim {
                        out[dim + a * dim + b] = w[a] * w[b];
                    }
                }
            }
            FamilySpec::Gamma => {
                out[0] = w[0].ln();
                out[1] = w[0];
            }
        }
    }

    /// `log g(w)`.
    pub fn log_base_measure(&self, w: &[f64]) -> Result<f64, FamilyError> {
        self.check_value(w)?;
        Ok(match *self {
            FamilySpec::BernoulliLogit | FamilySpec::Categorical { .. } | FamilySpec::Gamma => 0.0,
            FamilySpec::Poisson => -ln_gamma(w[0] + 1.0),
            FamilySpec::GaussianKnownVar { sigma } => {
                -0.5 * (w[0] / sigma).powi(2) - 0.5 * (2.0 * std::f64::consts::PI * sigma * sigma).ln()
            }
            FamilySpec::GaussianFull { dim } => -0.5 * dim as f64 * (2.0 * std::f64::consts::PI).ln(),
        })
    }

    /// `h(η)`.
    pub fn log_partition(&self, eta: &[f64]) -> Result<f64, FamilyError> {
        self.check_eta(eta)?;
        Ok(self.log_partition_unchecked(eta))
    }

    /// `h(η)` for η already known to be in the domain.
    pub fn log_partition_unchecked(&self, eta: &[f64]) -> f64 {
        match *self {
            FamilySpec::BernoulliLogit => softplus(eta[0]),
            FamilySpec::Categorical { .. } => log_sum_exp(eta),
            FamilySpec::GaussianKnownVar { .. } => 0.5 * eta[0] * eta[0],
            FamilySpec::Poisson => eta[0].exp(),
            FamilySpec::GaussianFull { dim } => {
                let (mu, sigma) = gaussian_moments(eta, dim);
                let eta1 = DVector::from_column_slice(&eta[..dim]);
                // h = ½ μᵀΣ⁻¹μ + ½ log det Σ with Σ⁻¹μ = η₁
                let log_det = sigma.cholesky().map_or(f64::NAN, |c| {
                    2.0 * c.l().diagonal().iter().map(|x| x.ln()).sum::<f64>()
                });
                0.5 * mu.dot(&eta1) + 0.5 * log_det
            }
            FamilySpec::Gamma => {
                let alpha = eta[0] + 1.0;
                ln_gamma(alpha) - alpha * (-eta[1]).ln()
            }
        }
    }

    /// `∇h(η) = E[T]`.
    pub fn mean_stat(&self, eta: &[f64]) -> Result<Vec<f64>, FamilyError> {
        self.check_eta(eta)?;
        let mut out = vec![0.0; self.dim_t()];
        self.write_mean_stat(eta, &mut out);
        Ok(out)
    }

    /// `∇h(η)` into a caller buffer for η known to be in the domain.
    pub fn write_mean_stat(&self, eta: &[f64], out: &mut [f64]) {
        match *self {
            FamilySpec::BernoulliLogit => out[0] = sigmoid(eta[0]),
            FamilySpec::Categorical { .. } => {
                let lse = log_sum_exp(eta);
                for (o, e) in out.iter_mut().zip(eta) {
                    *o = (e - lse).exp();
                }
            }
            FamilySpec::GaussianKnownVar { .. } => out[0] = eta[0],
            FamilySpec::Poisson => out[0] = eta[0].exp(),
            FamilySpec::GaussianFull { dim } => {
                let (mu, sigma) = gaussian_moments(eta, dim);
                out[..dim].copy_from_slice(mu.as_slice());
                for a in 0..dim {
                    for b in 0..dim {
                        out[dim + a * dim + b] = sigma[(a, b)] + mu[a] * mu[b];
                    }
                }
            }
            FamilySpec::Gamma => {
                let alpha = eta[0] + 1.0;
                let beta = -eta[1];
                out[0] = digamma(alpha) - beta.ln();
                out[1] = alpha / beta;
            }
        }
    }

    /// `∇²h(η) = Cov[T]`.
    pub fn var_stat(&self, eta: &[f64]) -> Result<DMatrix<f64>, FamilyError> {
        self.check_eta(eta)?;
        let d = self.dim_t();
        Ok(match *self {
            FamilySpec::BernoulliLogit => {
                let p = sigmoid(eta[0]);
                DMatrix::from_element(1, 1, p * (1.0 - p))
            }
            FamilySpec::Categorical { .. } => {
                let mut p = vec![0.0; d];
                self.write_mean_stat(eta, &mut p);
                DMatrix::from_fn(d, d, |a, b| if a == b { p[a] * (1.0 - p[a]) } else { -p[a] * p[b] })
            }
            FamilySpec::GaussianKnownVar { .. } => DMatrix::from_element(1, 1, 1.0),
            FamilySpec::Poisson => DMatrix::from_element(1, 1, eta[0].exp()),
            FamilySpec::GaussianFull { dim } => gaussian_stat_cov(eta, dim),
            FamilySpec::Gamma => {
                let alpha = eta[0] + 1.0;
                let beta = -eta[1];
                DMatrix::from_row_slice(
                    2,
                    2,
                    &[trigamma(alpha), 1.0 / beta, 1.0 / beta, alpha / (beta * beta)],
                )
            }
        })
    }

    /// `log g(w) + ηᵀT(w) − h(η)`.
    pub fn log_density(&self, w: &[f64], eta: &[f64]) -> Result<f64, FamilyError> {
        let t = self.sufficient_stat(w)?;
        let h = self.log_partition(eta)?;
        let dot: f64 = t.iter().zip(eta).map(|(a, b)| a * b).sum();
        Ok(self.log_base_measure(w)? + dot - h)
    }

    /// One draw at natural parameter η.
    pub fn sample<R: Rng + ?Sized>(&self, eta: &[f64], rng: &mut R) -> Result<Vec<f64>, FamilyError> {
        self.check_eta(eta)?;
        Ok(match *self {
            FamilySpec::BernoulliLogit => {
                let u: f64 = rng.random();
                vec![if u < sigmoid(eta[0]) { 1.0 } else { 0.0 }]
            }
            FamilySpec::Categorical { k } => {
                let mut p = vec![0.0; k];
                self.write_mean_stat(eta, &mut p);
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut level = k - 1;
                for (i, pi) in p.iter().enumerate() {
                    acc += pi;
                    if u < acc {
                        level = i;
                        break;
                    }
                }
                vec![(level + 1) as f64]
            }
            FamilySpec::GaussianKnownVar { sigma } => {
                let z: f64 = StandardNormal.sample(rng);
                vec![sigma * (eta[0] + z)]
            }
            FamilySpec::Poisson => {
                let lambda = eta[0].exp();
                let dist = rand_distr::Poisson::new(lambda).map_err(|e| FamilyError::Domain {
                    family: self.name(),
                    coord: 0,
                    value: eta[0],
                    constraint: format!("sampleable rate ({e})"),
                })?;
                vec![dist.sample(rng)]
            }
            FamilySpec::GaussianFull { dim } => {
                let (mu, sigma) = gaussian_moments(eta, dim);
                let l = sigma.cholesky().expect("negative definite block checked").l();
                let z = DVector::from_fn(dim, |_, _| StandardNormal.sample(rng));
                (mu + l * z).as_slice().to_vec()
            }
            FamilySpec::Gamma => {
                let alpha = eta[0] + 1.0;
                let beta = -eta[1];
                let dist = rand_distr::Gamma::new(alpha, 1.0 / beta).map_err(|e| FamilyError::Domain {
                    family: self.name(),
                    coord: 0,
                    value: eta[0],
                    constraint: format!("sampleable shape/rate ({e})"),
                })?;
                vec![dist.sample(rng)]
            }
        })
    }
}

fn sym_block(eta: &[f64], offset: usize, dim: usize) -> DMatrix<f64> {
    DMatrix::from_fn(dim, dim, |a, b| 0.5 * (eta[offset + a * dim + b] + eta[offset + b * dim + a]))
}

/// Mean and covariance of the full Gaussian from its natural parameter.
pub fn gaussian_moments(eta: &[f64], dim: usize) -> (DVector<f64>, DMatrix<f64>) {
    let s = sym_block(eta, dim, dim);
    // Σ = (−2S)⁻¹, μ = Σ η₁
    let precision = -2.0 * s;
    let sigma = precision
        .cholesky()
        .map(|c| c.inverse())
        .unwrap_or_else(|| DMatrix::from_element(dim, dim, f64::NAN));
    let mu = &sigma * DVector::from_column_slice(&eta[..dim]);
    (mu, sigma)
}

/// Natural parameter of the full Gaussian from mean and covariance.
pub fn gaussian_natural(mu: &[f64], sigma: &DMatrix<f64>) -> Option<Vec<f64>> {
    let dim = mu.len();
    let prec = sigma.clone().cholesky()?.inverse();
    let eta1 = &prec * DVector::from_column_slice(mu);
    let mut eta = eta1.as_slice().to_vec();
    for a in 0..dim {
        for b in 0..dim {
            eta.push(-0.5 * prec[(a, b)]);
        }
    }
    Some(eta)
}

/// Covariance of `(W, vec(WWᵀ))` for `W ~ N(μ, Σ)` by Isserlis' theorem.
fn gaussian_stat_cov(eta: &[f64], dim: usize) -> DMatrix<f64> {
    let (mu, s) = gaussian_moments(eta, dim);
    let n = dim + dim * dim;
    let mut out = DMatrix::zeros(n, n);
    let pair = |p: usize| ((p - dim) / dim, (p - dim) % dim);
    for p in 0..n {
        for q in 0..n {
            out[(p, q)] = match (p < dim, q < dim) {
                (true, true) => s[(p, q)],
                (true, false) | (false, true) => {
                    let (i, (j, k)) = if p < dim { (p, pair(q)) } else { (q, pair(p)) };
                    mu[j] * s[(i, k)] + mu[k] * s[(i, j)]
                }
                (false, false) => {
                    let (i, j) = pair(p);
                    let (k, l) = pair(q);
                    s[(i, k)] * s[(j, l)]
                        + s[(i, l)] * s[(j, k)]
                        + mu[i] * mu[k] * s[(j, l)]
                        + mu[i] * mu[l] * s[(j, k)]
                        + mu[j] * mu[k] * s[(i, l)]
                        + mu[j] * mu[l] * s[(i, k)]
                }
            };
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn all_families() -> Vec<FamilySpec> {
        vec![
            FamilySpec::BernoulliLogit,
            FamilySpec::Categorical { k: 3 },
            FamilySpec::GaussianKnownVar { sigma: 0.7 },
            FamilySpec::GaussianFull { dim: 1 },
            FamilySpec::GaussianFull { dim: 2 },
            FamilySpec::Poisson,
            FamilySpec::Gamma,
        ]
    }

    fn random_eta(f: &FamilySpec, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut u = || rng.random::<f64>() * 2.0 - 1.0;
        match *f {
            FamilySpec::BernoulliLogit | FamilySpec::GaussianKnownVar { .. } => vec![3.0 * u()],
            FamilySpec::Poisson => vec![1.5 * u()],
            FamilySpec::Categorical { k } => {
                let mut e: Vec<f64> = (0..k).map(|_| 2.0 * u()).collect();
                e[k - 1] = 0.0;
                e
            }
            FamilySpec::Gamma => vec![0.5 + 2.0 * u().abs(), -(0.3 + u().abs())],
            FamilySpec::GaussianFull { dim } => {
                let mu: Vec<f64> = (0..dim).map(|_| u()).collect();
                let a = DMatrix::from_fn(dim, dim, |_, _| 0.5 * u());
                let sigma = &a * a.transpose() + DMatrix::identity(dim, dim) * 0.5;
                gaussian_natural(&mu, &sigma).unwrap()
            }
        }
    }

    #[test]
    fn catalog_examples() {
        let b = FamilySpec::BernoulliLogit;
        assert_eq!(b.sufficient_stat(&[1.0]).unwrap(), vec![1.0]);
        assert_eq!(
            FamilySpec::Categorical { k: 3 }.sufficient_stat(&[2.0]).unwrap(),
            vec![0.0, 1.0, 0.0]
        );
        assert_eq!(
            FamilySpec::GaussianFull { dim: 1 }.sufficient_stat(&[2.0]).unwrap(),
            vec![2.0, 4.0]
        );
        assert_eq!(b.log_partition(&[0.0]).unwrap(), 2f64.ln());
        assert_eq!(FamilySpec::Poisson.log_partition(&[0.0]).unwrap(), 1.0);
        assert_eq!(FamilySpec::GaussianKnownVar { sigma: 1.0 }.log_partition(&[2.0]).unwrap(), 2.0);
        assert_eq!(b.mean_stat(&[0.0]).unwrap(), vec![0.5]);
        assert_eq!(b.var_stat(&[0.0]).unwrap()[(0, 0)], 0.25);
        assert_eq!(FamilySpec::Poisson.mean_stat(&[0.0]).unwrap(), vec![1.0]);
        assert_eq!(FamilySpec::Poisson.var_stat(&[0.0]).unwrap()[(0, 0)], 1.0);
    }

    #[test]
    fn out_of_support_and_domain_are_rejected() {
        assert!(matches!(
            FamilySpec::Poisson.sufficient_stat(&[-1.0]),
            Err(FamilyError::Support { .. })
        ));
        assert!(FamilySpec::BernoulliLogit.sufficient_stat(&[0.5]).is_err());
        assert!(FamilySpec::Categorical { k: 3 }.sufficient_stat(&[0.0]).is_err());
        assert!(FamilySpec::Gamma.sufficient_stat(&[0.0]).is_err());
        let g = FamilySpec::GaussianFull { dim: 1 };
        assert!(matches!(g.log_partition(&[0.0, 0.1]), Err(FamilyError::Domain { coord: 1, .. })));
        assert!(FamilySpec::Categorical { k: 3 }.log_partition(&[0.0, 0.0, 0.5]).is_err());
        assert!(FamilySpec::Gamma.log_partition(&[-1.5, -1.0]).is_err());
        assert!(FamilySpec::BernoulliLogit.log_partition(&[f64::INFINITY]).is_err());
        assert!(FamilySpec::BernoulliLogit.log_partition(&[0.0, 1.0]).is_err());
        let g2 = FamilySpec::GaussianFull { dim: 2 };
        // symmetrized block [[-1, 0], [0, 0.2]] is indefinite
        assert!(g2.log_partition(&[0.0, 0.0, -1.0, 0.3, -0.3, 0.2]).is_err());
    }

    #[test]
    fn gradient_matches_central_differences_of_log_partition() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let step = 1e-5;
        for f in all_families() {
            for _ in 0..100 {
                let eta = random_eta(&f, &mut rng);
                let grad = f.mean_stat(&eta).unwrap();
                let hess = f.var_stat(&eta).unwrap();
                for c in f.shiftable_coords() {
                    let mut up = eta.clone();
                    let mut dn = eta.clone();
                    up[c] += step;
                    dn[c] -= step;
                    let fd = (f.log_partition(&up).unwrap() - f.log_partition(&dn).unwrap()) / (2.0 * step);
                    let expected = grad[c];
                    assert!(
                        (fd - expected).abs() <= 1e-6 * expected.abs().max(1.0),
                        "{}: coord {c} fd {fd} vs {expected}",
                        f.name()
                    );
                    let gu = f.mean_stat(&up).unwrap();
                    let gd = f.mean_stat(&dn).unwrap();
                    for r in 0..f.dim_t() {
                        let fd2 = (gu[r] - gd[r]) / (2.0 * step);
                        assert!(
                            (fd2 - hess[(r, c)]).abs() <= 1e-5 * hess[(r, c)].abs().max(1.0),
                            "{}: hessian ({r},{c}) fd {fd2} vs {}",
                            f.name(),
                            hess[(r, c)]
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn var_stat_matches_sample_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 1_000_000;
        for f in all_families() {
            let eta = random_eta(&f, &mut rng);
            let d = f.dim_t();
            let mut stats = Vec::with_capacity(n * d);
            for _ in 0..n {
                let w = f.sample(&eta, &mut rng).unwrap();
                stats.extend(f.sufficient_stat(&w).unwrap());
            }
            let mean: Vec<f64> = (0..d).map(|a| (0..n).map(|j| stats[j * d + a]).sum::<f64>() / n as f64).collect();
            let expected_mean = f.mean_stat(&eta).unwrap();
            let cov = f.var_stat(&eta).unwrap();
            for a in 0..d {
                let se = (cov[(a, a)] / n as f64).sqrt();
                assert!((mean[a] - expected_mean[a]).abs() <= 5.0 * se + 1e-12, "{} mean {a}", f.name());
                for b in 0..d {
                    let prods: Vec<f64> = (0..n)
                        .map(|j| (stats[j * d + a] - mean[a]) * (stats[j * d + b] - mean[b]))
                        .collect();
                    let m = prods.iter().sum::<f64>() / n as f64;
                    let sd = (prods.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n as f64).sqrt();
                    let se = sd / (n as f64).sqrt();
                    assert!(
                        (m - cov[(a, b)]).abs() <= 5.0 * se + 1e-12,
                        "{}: cov ({a},{b}) {m} vs {}",
                        f.name(),
                        cov[(a, b)]
                    );
                }
            }
        }
    }

    #[test]
    fn sampler_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = FamilySpec::BernoulliLogit;
        let ones = (0..100_000).filter(|_| b.sample(&[30.0], &mut rng).unwrap()[0] == 1.0).count();
        assert!(ones as f64 / 1e5 >= 1.0 - 1e-9);

        let n = 1_000_000;
        let g = FamilySpec::GaussianKnownVar { sigma: 1.0 };
        let m = (0..n).map(|_| g.sample(&[0.0], &mut rng).unwrap()[0]).sum::<f64>() / n as f64;
        assert!(m.abs() < 4.0 / (n as f64).sqrt());

        let p = FamilySpec::Poisson;
        let m = (0..n).map(|_| p.sample(&[3f64.ln()], &mut rng).unwrap()[0]).sum::<f64>() / n as f64;
        assert!((m - 3.0).abs() < 4.0 * 3f64.sqrt() / (n as f64).sqrt());
    }

    #[test]
    fn categorical_probabilities_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for k in 2..8 {
            let f = FamilySpec::Categorical { k };
            for _ in 0..100 {
                let eta = random_eta(&f, &mut rng);
                let p = f.mean_stat(&eta).unwrap();
                assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn density_normalizes_for_discrete_and_poisson() {
        let c = FamilySpec::Categorical { k: 4 };
        let eta = [0.3, -1.2, 2.0, 0.0];
        let total: f64 = (1..=4).map(|w| c.log_density(&[w as f64], &eta).unwrap().exp()).sum();
        assert!((total - 1.0).abs() < 1e-14);
        let p = FamilySpec::Poisson;
        let total: f64 = (0..80).map(|w| p.log_density(&[w as f64], &[1.1]).unwrap().exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn trigamma_reference_values() {
        // ψ'(1) = π²/6, ψ'(1/2) = π²/2
        let pi2 = std::f64::consts::PI.powi(2);
        assert!((trigamma(1.0) - pi2 / 6.0).abs() < 1e-12);
        assert!((trigamma(0.5) - pi2 / 2.0).abs() < 1e-12);
    }
}
