//! Worst-case shifts: maximizing the Taylor surrogate over a ball, a single
//! quadratic constraint or a box, a multi-start search on the importance
//! sampling objective, and the closed-form 2×2 conditional subpopulation case.

use crate::estimation::{CurvatureEstimate, EstimationError, ImportanceSampler};
use crate::model::ShiftModel;
use crate::rng;
use crate::table::SampleTable;
use argmin::core::{CostFunction, Executor};
use argmin::solver::neldermead::NelderMead;
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::cell::{Cell, RefCell};
use std::time::Instant;

/// Relative size of the leading-eigenspace component of `g` below which the hard case applies.
pub const HARD_CASE_TOLERANCE: f64 = 1e-10;
/// Largest box dimension solved by exact face enumeration.
pub const EXACT_BOX_MAX_DIM: usize = 10;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum WorstCaseError {
    #[error("{0}")]
    Domain(String),
    #[error("unsupported constraint: {0}")]
    Unsupported(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("sg2 is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error(transparent)]
    Estimation(#[from] EstimationError),
}

type Result<T> = std::result::Result<T, WorstCaseError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case", deny_unknown_fields)]
pub enum Constraint {
    /// `‖δ‖₂ ≤ λ`.
    Ball { lambda: f64 },
    /// `δᵀAδ + bᵀδ ≤ λ` with `A` positive definite.
    Quadratic { a: Vec<Vec<f64>>, b: Vec<f64>, lambda: f64 },
    /// `lower ≤ δ ≤ upper`; equal bounds fix a coordinate.
    Box { lower: Vec<f64>, upper: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSpec {
    #[serde(flatten)]
    pub constraint: Constraint,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
}

impl From<Constraint> for ConstraintSpec {
    fn from(constraint: Constraint) -> Self {
        ConstraintSpec { constraint, description: String::new() }
    }
}

impl ConstraintSpec {
    pub fn ball(lambda: f64) -> ConstraintSpec {
        Constraint::Ball { lambda }.into()
    }

    /// Checks the invariants for a `d`-dimensional δ.
    pub fn validate(&self, d: usize) -> Result<()> {
        match &self.constraint {
            Constraint::Ball { lambda } => {
                if !(*lambda > 0.0 && lambda.is_finite()) {
                    return Err(WorstCaseError::Domain(format!("lambda must be positive and finite, got {lambda}")));
                }
            }
            Constraint::Quadratic { a, b, lambda } => {
                if a.len() != d || a.iter().any(|r| r.len() != d) || b.len() != d {
                    return Err(WorstCaseError::Dimension(format!("A must be {d} × {d} and b of length {d}")));
                }
                if !lambda.is_finite() || a.iter().flatten().chain(b).any(|x| !x.is_finite()) {
                    return Err(WorstCaseError::Domain("quadratic constraint has non-finite entries".into()));
                }
            }
            Constraint::Box { lower, upper } => {
                if lower.len() != d || upper.len() != d {
                    return Err(WorstCaseError::Dimension(format!("box bounds must have length {d}")));
                }
                for (i, (l, u)) in lower.iter().zip(upper).enumerate() {
                    if !l.is_finite() || !u.is_finite() {
                        return Err(WorstCaseError::Domain(format!("box bound {i} must be finite")));
                    }
                    if l > u {
                        return Err(WorstCaseError::Domain(format!("box bound {i}: lower {l} exceeds upper {u}")));
                    }
                }
            }
        }
        Ok(())
    }

    /// Nearest feasible point for ball and box constraints.
    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        match &self.constraint {
            Constraint::Ball { lambda } => {
                let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                Ok(if norm > *lambda { x.iter().map(|v| v * lambda / norm).collect() } else { x.to_vec() })
            }
            Constraint::Box { lower, upper } => {
                Ok(x.iter().zip(lower.iter().zip(upper)).map(|(v, (l, u))| v.clamp(*l, *u)).collect())
            }
            Constraint::Quadratic { .. } => {
                Err(WorstCaseError::Unsupported("projection is only available for ball and box constraints".into()))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrustRegionResult {
    pub delta_star: Vec<f64>,
    pub predicted_loss: f64,
    /// `predicted_loss − base_loss`.
    pub gain: f64,
    /// `ν` in `H δ + g − ν A (δ − c) = 0` (`A = I`, `c = 0` for the ball); zero for boxes.
    pub multiplier: f64,
    /// Box only: multiplier of each active bound (positive at the upper bound, negative at the lower).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bound_multipliers: Option<Vec<f64>>,
    pub on_boundary: bool,
    /// Norm of the stationarity residual (projected gradient for boxes).
    pub kkt_residual: f64,
    /// `ν · slack`.
    pub complementarity: f64,
    /// Smallest eigenvalue of `νA − H` (ball and quadratic constraints).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dual_min_eigenvalue: Option<f64>,
    pub hard_case: bool,
    /// Set when the solver is a heuristic without a global guarantee.
    pub approximate: bool,
    pub iterations: usize,
    pub constraint: ConstraintSpec,
}

fn checked_hessian(curv: &CurvatureEstimate) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let d = curv.dim();
    if curv.sg2.len() != d || curv.sg2.iter().any(|r| r.len() != d) {
        return Err(WorstCaseError::Dimension(format!("sg2 must be {d} × {d}")));
    }
    let h = curv.hessian();
    let asym = (&h - h.transpose()).amax();
    if asym > 1e-10 * (1.0 + h.amax()) {
        return Err(WorstCaseError::NotSymmetric(asym));
    }
    Ok((curv.gradient(), (&h + h.transpose()) * 0.5))
}

fn quad_value(g: &DVector<f64>, h: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    g.dot(x) + 0.5 * x.dot(&(h * x))
}

/// Solution of `max gᵀx + ½ xᵀHx` over `‖x‖ ≤ radius`.
#[derive(Clone, Debug)]
pub struct BallSolution {
    pub x: DVector<f64>,
    pub nu: f64,
    pub on_boundary: bool,
    pub hard_case: bool,
    pub iterations: usize,
    /// Largest eigenvalue of `H`.
    pub lambda_max: f64,
}

/// Dense trust-region solver: eigendecomposition plus a safeguarded Newton
/// iteration on `1/‖x(ν)‖ − 1/radius`, with `x(ν) = (νI − H)⁻¹ g`.
pub fn solve_ball(g: &DVector<f64>, h: &DMatrix<f64>, radius: f64) -> BallSolution {
    let d = g.len();
    let eig = h.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let lam: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let q: Vec<DVector<f64>> = order.iter().map(|&i| eig.eigenvectors.column(i).into_owned()).collect();
    let gamma: Vec<f64> = q.iter().map(|qi| qi.dot(g)).collect();
    let gnorm = g.norm();
    let l1 = lam[0];
    let scale = lam.iter().fold(1.0f64, |m, x| m.max(x.abs()));
    let lead: Vec<bool> = lam.iter().map(|&x| x >= l1 - 1e-12 * scale).collect();
    let assemble = |coef: &dyn Fn(usize) -> f64| -> DVector<f64> {
        let mut x = DVector::zeros(d);
        for i in 0..d {
            let c = coef(i);
            if c != 0.0 {
                x.axpy(c, &q[i], 1.0);
            }
        }
        x
    };
    let phi = |nu: f64, skip_lead: bool| -> f64 {
        (0..d)
            .filter(|&i| !(skip_lead && lead[i]))
            .map(|i| (gamma[i] / (nu - lam[i])).powi(2))
            .sum::<f64>()
            .sqrt()
    };

    if l1 < 0.0 && phi(0.0, false) <= radius {
        let x = assemble(&|i| gamma[i] / -lam[i]);
        return BallSolution { x, nu: 0.0, on_boundary: false, hard_case: false, iterations: 0, lambda_max: l1 };
    }
    let lead_norm = (0..d).filter(|&i| lead[i]).map(|i| gamma[i] * gamma[i]).sum::<f64>().sqrt();
    if l1 >= 0.0 && lead_norm <= HARD_CASE_TOLERANCE * gnorm && phi(l1, true) <= radius {
        let mut x = assemble(&|i| if lead[i] { 0.0 } else { gamma[i] / (l1 - lam[i]) });
        let rest = x.norm();
        let tau = (radius * radius - rest * rest).max(0.0).sqrt();
        let mut v = q[0].clone();
        if let Some(first) = v.iter().find(|c| c.abs() > 1e-12) {
            if *first < 0.0 {
                v = -v;
            }
        }
        x.axpy(tau, &v, 1.0);
        let n = x.norm();
        if n > radius {
            x *= radius / n;
        }
        return BallSolution { x, nu: l1, on_boundary: true, hard_case: true, iterations: 0, lambda_max: l1 };
    }

    let mut lo = l1.max(0.0);
    let mut hi = lo + gnorm / radius;
    let mut nu = hi;
    let mut iterations = 0;
    for it in 0..500 {
        iterations = it + 1;
        let mut s2 = 0.0;
        let mut s3 = 0.0;
        for i in 0..d {
            let r = nu - lam[i];
            s2 += gamma[i] * gamma[i] / (r * r);
            s3 += gamma[i] * gamma[i] / (r * r * r);
        }
        let p = s2.sqrt();
        if (p - radius).abs() <= 1e-15 * radius {
            break;
        }
        let psi = 1.0 / p - 1.0 / radius;
        if psi > 0.0 {
            hi = nu;
        } else {
            lo = nu;
        }
        // dψ/dν = s3 / p³
        let dpsi = s3 / (p * p * p);
        let mut next = nu - psi / dpsi;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = 0.5 * (lo + hi);
        }
        if hi - lo <= 4.0 * f64::EPSILON * hi.abs().max(1e-300) {
            break;
        }
        nu = next;
    }
    let mut x = assemble(&|i| gamma[i] / (nu - lam[i]));
    let n = x.norm();
    if n > radius {
        x *= radius / n;
    }
    BallSolution { x, nu, on_boundary: true, hard_case: false, iterations, lambda_max: l1 }
}

/// Maximizes the Taylor surrogate over `‖δ‖₂ ≤ λ`.
pub fn trust_region_max(curv: &CurvatureEstimate, lambda: f64) -> Result<TrustRegionResult> {
    solve(curv, &ConstraintSpec::ball(lambda))
}

/// Maximizes the Taylor surrogate over `δᵀAδ + bᵀδ ≤ λ`.
pub fn quad_constrained_max(curv: &CurvatureEstimate, a: &DMatrix<f64>, b: &DVector<f64>, lambda: f64) -> Result<TrustRegionResult> {
    let spec = ConstraintSpec::from(Constraint::Quadratic {
        a: (0..a.nrows()).map(|r| a.row(r).iter().copied().collect()).collect(),
        b: b.iter().copied().collect(),
        lambda,
    });
    solve(curv, &spec)
}

/// Maximizes the Taylor surrogate under any supported constraint.
pub fn solve(curv: &CurvatureEstimate, spec: &ConstraintSpec) -> Result<TrustRegionResult> {
    let (g, h) = checked_hessian(curv)?;
    let d = g.len();
    spec.validate(d)?;
    let finish = |x: DVector<f64>| -> (Vec<f64>, f64, f64) {
        let gain = quad_value(&g, &h, &x);
        (x.iter().copied().collect(), curv.base_loss + gain, gain)
    };
    match &spec.constraint {
        Constraint::Ball { lambda } => {
            let s = solve_ball(&g, &h, *lambda);
            let resid = (&h * &s.x - s.x.clone() * s.nu + &g).norm();
            let slack = lambda - s.x.norm();
            let (delta_star, predicted_loss, gain) = finish(s.x);
            Ok(TrustRegionResult {
                delta_star,
                predicted_loss,
                gain,
                multiplier: s.nu,
                bound_multipliers: None,
                on_boundary: s.on_boundary,
                kkt_residual: resid,
                complementarity: s.nu * slack,
                dual_min_eigenvalue: Some(s.nu - s.lambda_max),
                hard_case: s.hard_case,
                approximate: false,
                iterations: s.iterations,
                constraint: spec.clone(),
            })
        }
        Constraint::Quadratic { a, b, lambda } => {
            let a = DMatrix::from_fn(d, d, |r, c| a[r][c]);
            let b = DVector::from_column_slice(b);
            if (&a - a.transpose()).amax() > 1e-12 * (1.0 + a.amax()) {
                return Err(WorstCaseError::Unsupported("A must be symmetric".into()));
            }
            let chol = a
                .clone()
                .cholesky()
                .ok_or_else(|| WorstCaseError::Unsupported("A must be positive definite".into()))?;
            let c = chol.solve(&b) * -0.5;
            let r2 = lambda + c.dot(&(&a * &c));
            if r2 <= 0.0 {
                return Err(WorstCaseError::Domain("the quadratic constraint set has no interior".into()));
            }
            let l_inv = chol
                .l()
                .solve_lower_triangular(&DMatrix::identity(d, d))
                .ok_or_else(|| WorstCaseError::Unsupported("A is numerically singular".into()))?;
            let gw = &l_inv * (&g + &h * &c);
            let hw = &l_inv * &h * l_inv.transpose();
            let hw = (&hw + hw.transpose()) * 0.5;
            let s = solve_ball(&gw, &hw, r2.sqrt());
            let x = &c + l_inv.transpose() * &s.x;
            let resid = (&h * &x + &g - (&a * (&x - &c)) * s.nu).norm();
            let slack = lambda - (x.dot(&(&a * &x)) + b.dot(&x));
            let (delta_star, predicted_loss, gain) = finish(x);
            Ok(TrustRegionResult {
                delta_star,
                predicted_loss,
                gain,
                multiplier: s.nu,
                bound_multipliers: None,
                on_boundary: s.on_boundary,
                kkt_residual: resid,
                complementarity: s.nu * slack,
                dual_min_eigenvalue: Some(s.nu - s.lambda_max),
                hard_case: s.hard_case,
                approximate: false,
                iterations: s.iterations,
                constraint: spec.clone(),
            })
        }
        Constraint::Box { lower, upper } => {
            let (x, approximate, iterations) = if d <= EXACT_BOX_MAX_DIM {
                let (x, faces) = box_by_faces(&g, &h, lower, upper);
                (x, false, faces)
            } else {
                let (x, iters) = box_by_projected_ascent(&g, &h, lower, upper, curv.dim() as u64);
                (x, true, iters)
            };
            let grad = &g + &h * &x;
            let mut resid = 0.0;
            let mut mult = vec![0.0; d];
            let tol = 1e-12;
            for i in 0..d {
                let at_lo = x[i] <= lower[i] + tol * (1.0 + lower[i].abs());
                let at_hi = x[i] >= upper[i] - tol * (1.0 + upper[i].abs());
                let r = match (at_lo, at_hi) {
                    (true, true) => 0.0,
                    (true, false) => grad[i].max(0.0),
                    (false, true) => grad[i].min(0.0),
                    (false, false) => grad[i],
                };
                if at_lo || at_hi {
                    mult[i] = grad[i];
                }
                resid += r * r;
            }
            let on_boundary = mult.iter().any(|m| *m != 0.0)
                || (0..d).any(|i| x[i] <= lower[i] || x[i] >= upper[i]);
            let (delta_star, predicted_loss, gain) = finish(x);
            Ok(TrustRegionResult {
                delta_star,
                predicted_loss,
                gain,
                multiplier: 0.0,
                bound_multipliers: Some(mult),
                on_boundary,
                kkt_residual: resid.sqrt(),
                complementarity: 0.0,
                dual_min_eigenvalue: None,
                hard_case: false,
                approximate,
                iterations,
                constraint: spec.clone(),
            })
        }
    }
}

/// Exact box maximum: every face on which the restricted Hessian is negative
/// definite contributes its unique stationary point when feasible; vertices
/// are always candidates.
fn box_by_faces(g: &DVector<f64>, h: &DMatrix<f64>, lower: &[f64], upper: &[f64]) -> (DVector<f64>, usize) {
    let d = g.len();
    // state per coordinate: 0 lower, 1 upper, 2 free
    let options: Vec<Vec<u8>> = (0..d).map(|i| if lower[i] == upper[i] { vec![0] } else { vec![0, 1, 2] }).collect();
    let mut idx = vec![0usize; d];
    let mut best: Option<(f64, DVector<f64>)> = None;
    let mut faces = 0;
    loop {
        faces += 1;
        let state: Vec<u8> = (0..d).map(|i| options[i][idx[i]]).collect();
        let free: Vec<usize> = (0..d).filter(|&i| state[i] == 2).collect();
        let mut x = DVector::from_fn(d, |i, _| if state[i] == 1 { upper[i] } else { lower[i] });
        let mut ok = true;
        if !free.is_empty() {
            let k = free.len();
            let hff = DMatrix::from_fn(k, k, |r, c| -h[(free[r], free[c])]);
            match hff.cholesky() {
                Some(ch) => {
                    // −H_FF x_F = g_F + H_FB x_B
                    let mut rhs = DVector::from_fn(k, |r, _| g[free[r]]);
                    for (r, &fi) in free.iter().enumerate() {
                        for j in 0..d {
                            if state[j] != 2 {
                                rhs[r] += h[(fi, j)] * x[j];
                            }
                        }
                    }
                    let xf = ch.solve(&rhs);
                    for (r, &fi) in free.iter().enumerate() {
                        if xf[r] < lower[fi] || xf[r] > upper[fi] {
                            ok = false;
                        }
                        x[fi] = xf[r];
                    }
                }
                None => ok = false,
            }
        }
        if ok {
            let v = quad_value(g, h, &x);
            let better = match &best {
                None => true,
                Some((bv, bx)) => v > *bv || (v == *bv && lex_less(&x, bx)),
            };
            if better {
                best = Some((v, x));
            }
        }
        // advance the mixed-radix counter
        let mut i = 0;
        loop {
            if i == d {
                return (best.expect("vertices are always feasible").1, faces);
            }
            idx[i] += 1;
            if idx[i] < options[i].len() {
                break;
            }
            idx[i] = 0;
            i += 1;
        }
    }
}

fn lex_less(a: &DVector<f64>, b: &DVector<f64>) -> bool {
    for (x, y) in a.iter().zip(b.iter()) {
        if x != y {
            return x < y;
        }
    }
    false
}

/// Projected gradient ascent from the centre, random vertices and random interior points.
fn box_by_projected_ascent(g: &DVector<f64>, h: &DMatrix<f64>, lower: &[f64], upper: &[f64], seed: u64) -> (DVector<f64>, usize) {
    let d = g.len();
    let lip = h.clone().symmetric_eigenvalues().iter().fold(1e-12f64, |m, e| m.max(e.abs()));
    let step = 1.0 / lip;
    let proj = |x: &mut DVector<f64>| {
        for i in 0..d {
            x[i] = x[i].clamp(lower[i], upper[i]);
        }
    };
    let mut rng = rng::stream(seed, "worst_case/box", 0);
    let mut best: Option<(f64, DVector<f64>)> = None;
    let mut iterations = 0;
    for start in 0..32 {
        let mut x = DVector::from_fn(d, |i, _| match start {
            0 => 0.5 * (lower[i] + upper[i]),
            s if s < 16 => {
                if rng.random::<bool>() {
                    upper[i]
                } else {
                    lower[i]
                }
            }
            _ => lower[i] + rng.random::<f64>() * (upper[i] - lower[i]),
        });
        for _ in 0..2000 {
            iterations += 1;
            let grad = g + h * &x;
            let mut next = &x + grad * step;
            proj(&mut next);
            let moved = (&next - &x).norm();
            x = next;
            if moved <= 1e-13 * (1.0 + x.norm()) {
                break;
            }
        }
        let v = quad_value(g, h, &x);
        if best.as_ref().is_none_or(|(bv, bx)| v > *bv || (v == *bv && lex_less(&x, bx))) {
            best = Some((v, x));
        }
    }
    (best.unwrap().1, iterations)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchConfig {
    #[serde(default = "default_starts")]
    pub starts: usize,
    #[serde(default)]
    pub seed: u64,
    /// Nelder–Mead iterations per start.
    #[serde(default = "default_max_iters")]
    pub max_iters: u64,
    /// Weight of `‖x − P(x)‖²` subtracted from the objective outside the feasible set.
    #[serde(default = "default_penalty")]
    pub penalty: f64,
    /// Initial simplex edge as a fraction of the constraint scale.
    #[serde(default = "default_simplex")]
    pub simplex_scale: f64,
}

fn default_starts() -> usize {
    20
}
fn default_max_iters() -> u64 {
    400
}
fn default_penalty() -> f64 {
    1e3
}
fn default_simplex() -> f64 {
    0.25
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            starts: default_starts(),
            seed: 0,
            max_iters: default_max_iters(),
            penalty: default_penalty(),
            simplex_scale: default_simplex(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub delta: Vec<f64>,
    pub value: f64,
    pub evals: u64,
    pub wall_time_s: f64,
    pub starts: usize,
}

struct Penalized<'a> {
    f: &'a dyn Fn(&[f64]) -> Option<f64>,
    spec: &'a ConstraintSpec,
    penalty: f64,
    evals: &'a Cell<u64>,
    best: &'a RefCell<Option<(f64, Vec<f64>)>>,
}

impl CostFunction for Penalized<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, x: &Vec<f64>) -> std::result::Result<f64, argmin::core::Error> {
        self.evals.set(self.evals.get() + 1);
        let p = self.spec.project(x).expect("ball or box");
        let dist2: f64 = x.iter().zip(&p).map(|(a, b)| (a - b).powi(2)).sum();
        let value = match (self.f)(&p) {
            Some(v) if v.is_finite() => v,
            _ => return Ok(f64::MAX),
        };
        let mut best = self.best.borrow_mut();
        let better = match best.as_ref() {
            None => true,
            Some((bv, bx)) => value > *bv || (value == *bv && p.iter().zip(bx).find(|(a, b)| a != b).is_some_and(|(a, b)| a < b)),
        };
        if better {
            *best = Some((value, p));
        }
        Ok(-(value - self.penalty * dist2))
    }
}

/// Multi-start Nelder–Mead on a black-box objective over a ball or box.
///
/// Starts are the origin (projected), axis points `±λeᵢ` (box: the faces
/// through the centre) for a seeded subset of coordinates, and seeded random
/// points; each start is evaluated at its projection with a quadratic penalty
/// on the distance moved. The best feasible evaluation over all starts is
/// returned. `f` returns `None` where the objective is undefined.
pub fn maximize_black_box(
    f: &dyn Fn(&[f64]) -> Option<f64>,
    d: usize,
    spec: &ConstraintSpec,
    config: &SearchConfig,
) -> Result<SearchResult> {
    spec.validate(d)?;
    if matches!(spec.constraint, Constraint::Quadratic { .. }) {
        return Err(WorstCaseError::Unsupported("the sampling search supports ball and box constraints".into()));
    }
    if config.starts == 0 {
        return Err(WorstCaseError::Domain("at least one start is required".into()));
    }
    let t0 = Instant::now();
    let mut rng = rng::stream(config.seed, "worst_case/search", 0);
    let (centre, half): (Vec<f64>, Vec<f64>) = match &spec.constraint {
        Constraint::Ball { lambda } => (vec![0.0; d], vec![*lambda; d]),
        Constraint::Box { lower, upper } => (
            lower.iter().zip(upper).map(|(l, u)| 0.5 * (l + u)).collect(),
            lower.iter().zip(upper).map(|(l, u)| 0.5 * (u - l)).collect(),
        ),
        Constraint::Quadratic { .. } => unreachable!(),
    };
    let mut starts: Vec<Vec<f64>> = vec![spec.project(&vec![0.0; d])?];
    let mut axes: Vec<(usize, f64)> = (0..d).flat_map(|i| [(i, 1.0), (i, -1.0)]).collect();
    axes.shuffle(&mut rng);
    let n_axis = (config.starts.saturating_sub(1) / 2).min(axes.len());
    for &(i, sign) in &axes[..n_axis] {
        let mut x = centre.clone();
        x[i] += sign * half[i];
        starts.push(spec.project(&x)?);
    }
    while starts.len() < config.starts {
        let x: Vec<f64> = match &spec.constraint {
            Constraint::Ball { lambda } => {
                let raw: Vec<f64> = (0..d).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
                let n = raw.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
                let r = lambda * rng.random::<f64>().powf(1.0 / d.max(1) as f64);
                raw.iter().map(|v| v / n * r).collect()
            }
            _ => (0..d).map(|i| centre[i] + half[i] * (rng.random::<f64>() * 2.0 - 1.0)).collect(),
        };
        starts.push(x);
    }
    let evals = Cell::new(0u64);
    let best = RefCell::new(None);
    for x0 in &starts {
        let mut simplex = vec![x0.clone()];
        for i in 0..d {
            let mut v = x0.clone();
            let step = config.simplex_scale * half[i].max(1e-8);
            v[i] += if v[i] + step <= centre[i] + half[i] { step } else { -step };
            simplex.push(v);
        }
        let problem = Penalized { f, spec, penalty: config.penalty, evals: &evals, best: &best };
        let solver = NelderMead::new(simplex)
            .with_sd_tolerance(1e-10)
            .map_err(|e| WorstCaseError::Domain(e.to_string()))?;
        // a failed run still leaves its evaluations in `best`
        let _ = Executor::new(problem, solver).configure(|s| s.max_iters(config.max_iters)).run();
    }
    let (value, delta) = best.into_inner().ok_or_else(|| WorstCaseError::Domain("objective undefined at every start".into()))?;
    Ok(SearchResult { delta, value, evals: evals.get(), wall_time_s: t0.elapsed().as_secs_f64(), starts: starts.len() })
}

/// Maximizes the importance-sampling estimate of `E_δ[ℓ]`.
pub fn is_objective_max(model: &ShiftModel, sample: &SampleTable, spec: &ConstraintSpec, config: &SearchConfig) -> Result<SearchResult> {
    let sampler = ImportanceSampler::new(model, sample)?;
    is_objective_max_with(&sampler, model.d_delta(), spec, config)
}

pub fn is_objective_max_with(sampler: &ImportanceSampler, d: usize, spec: &ConstraintSpec, config: &SearchConfig) -> Result<SearchResult> {
    let f = |x: &[f64]| sampler.estimate(x).ok().map(|e| e.mean);
    maximize_black_box(&f, d, spec, config)
}

/// Worst case of a conditional `(1 − α)`-subpopulation shift of `P(O | Y)` with binary `O`, `Y`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubpopulationWorstCase {
    /// `P_h(O = 1 | Y = 1)` at the worst case.
    pub q11: f64,
    /// `P_h(O = 1 | Y = 0)` at the worst case.
    pub q10: f64,
    pub worst_loss: f64,
    pub base_loss: f64,
    pub q11_range: (f64, f64),
    pub q10_range: (f64, f64),
    /// All optimal `(q11, q10)` corners; more than one when a direction coefficient is zero.
    pub corners: Vec<(f64, f64)>,
}

/// `mu[o][y]` is the expected loss given `O = o`, `Y = y`; `p11 = P(O=1|Y=1)`, `p10 = P(O=1|Y=0)`.
pub fn subpop_worst_case_2x2(p11: f64, p10: f64, mu: [[f64; 2]; 2], p_y1: f64, alpha: f64) -> Result<SubpopulationWorstCase> {
    for (name, p) in [("p11", p11), ("p10", p10), ("pY1", p_y1)] {
        if !(0.0..=1.0).contains(&p) {
            return Err(WorstCaseError::Domain(format!("{name} must lie in [0, 1], got {p}")));
        }
    }
    if !(alpha >= 0.0 && alpha < 1.0) {
        return Err(WorstCaseError::Domain(format!("alpha must lie in [0, 1), got {alpha}")));
    }
    if mu.iter().flatten().any(|m| !m.is_finite()) {
        return Err(WorstCaseError::Domain("loss table must be finite".into()));
    }
    let keep = 1.0 - alpha;
    let range = |p: f64| (((p - alpha) / keep).max(0.0), (p / keep).min(1.0));
    let (r11, r10) = (range(p11), range(p10));
    let c11 = p_y1 * (mu[1][1] - mu[0][1]);
    let c10 = (1.0 - p_y1) * (mu[1][0] - mu[0][0]);
    let constant = p_y1 * mu[0][1] + (1.0 - p_y1) * mu[0][0];
    let pick = |c: f64, r: (f64, f64)| -> Vec<f64> {
        if c > 0.0 {
            vec![r.1]
        } else if c < 0.0 {
            vec![r.0]
        } else if r.0 == r.1 {
            vec![r.0]
        } else {
            vec![r.0, r.1]
        }
    };
    let mut corners = Vec::new();
    for &a in &pick(c11, r11) {
        for &b in &pick(c10, r10) {
            corners.push((a, b));
        }
    }
    let (q11, q10) = corners[0];
    Ok(SubpopulationWorstCase {
        q11,
        q10,
        worst_loss: constant + c11 * q11 + c10 * q10,
        base_loss: constant + c11 * p11 + c10 * p10,
        q11_range: r11,
        q10_range: r10,
        corners,
    })
}
