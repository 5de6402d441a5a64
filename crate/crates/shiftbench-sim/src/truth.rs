//! Ground truth for `E_δ[ℓ]` by simulation or enumeration.

use crate::scenario::Scenario;
use crate::SimError;
use serde::{Deserialize, Serialize};
use shiftbench_core::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub mean: f64,
    pub std_error: f64,
    /// Draws used; 0 for enumeration.
    pub n: usize,
    pub exact: bool,
}

pub const MIN_DRAWS: usize = 100;

/// Mean loss under `P_δ` from `n` fresh draws, or by enumeration when `exact`
/// is set (fully discrete scenarios only).
///
/// Draws come from the stream `(seed, "sim/truth", 0)`, so two calls with the
/// same seed share random numbers across δ.
pub fn mc_ground_truth(scenario: &Scenario, delta: &[f64], n: usize, seed: u64, exact: bool) -> Result<GroundTruth, SimError> {
    if exact {
        if !scenario.model.is_fully_discrete() {
            return Err(SimError::Config(format!("scenario '{}' is not fully discrete", scenario.name())));
        }
        let mean = scenario
            .model
            .enumerate(delta)?
            .iter()
            .map(|(r, p)| p * scenario.loss_of(r))
            .sum();
        return Ok(GroundTruth { mean, std_error: 0.0, n: 0, exact: true });
    }
    if n < MIN_DRAWS {
        return Err(SimError::Config(format!("ground truth needs at least {MIN_DRAWS} draws, got {n}")));
    }
    let mut r = rng::stream(seed, "sim/truth", 0);
    let table = scenario.model.sample_joint(delta, n, &mut r)?;
    let losses = scenario.losses(&table);
    let nf = n as f64;
    let mean = losses.iter().sum::<f64>() / nf;
    let var = losses.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    Ok(GroundTruth { mean, std_error: (var / nf).sqrt(), n, exact: false })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{ScenarioId, ScenarioOptions};
    use shiftbench_core::estimation::exact_curvature;

    fn opts() -> ScenarioOptions {
        ScenarioOptions { n_train: 20_000, ..ScenarioOptions::default() }
    }

    #[test]
    fn exact_mode_at_zero_is_the_enumerated_training_loss() {
        let s = Scenario::builtin(ScenarioId::Attributes31, &opts()).unwrap();
        let g = mc_ground_truth(&s, &vec![0.0; 31], 0, 0, true).unwrap();
        let curv = exact_curvature(&s.model, &|r| s.loss_of(r)).unwrap();
        assert_eq!(g.std_error, 0.0);
        assert!((g.mean - curv.base_loss).abs() < 1e-14);
        let cont = Scenario::builtin(ScenarioId::Gauss1d, &opts()).unwrap();
        assert!(mc_ground_truth(&cont, &[0.0], 0, 0, true).is_err());
        assert!(mc_ground_truth(&cont, &[0.0], 99, 0, false).is_err());
    }

    #[test]
    fn labtest_small_tests_half_the_population() {
        let s = Scenario::builtin(ScenarioId::LabtestSmall, &opts()).unwrap();
        let n = 100_000;
        let mut r = rng::stream(5, "test", 0);
        let t = s.model.sample_joint(&[0.0, 0.0], n, &mut r).unwrap();
        let p = t.column("O").unwrap().iter().sum::<f64>() / n as f64;
        assert!((p - 0.5).abs() < 3.0 * (0.25 / n as f64).sqrt(), "{p}");
    }

    #[test]
    fn anchor_simulation_matches_the_closed_form() {
        let s = Scenario::builtin(ScenarioId::LinearAnchor, &opts()).unwrap();
        let a = s.anchor.as_ref().unwrap();
        for (i, delta) in [[0.0, 0.0], [0.5, 0.0], [0.0, -1.0], [1.0, 1.0], [-1.5, 0.5]].iter().enumerate() {
            let g = mc_ground_truth(&s, delta, 100_000, i as u64, false).unwrap();
            let exact = a.closed_form(delta);
            assert!((g.mean - exact).abs() < 3.0 * g.std_error, "δ={delta:?}: {} ± {} vs {exact}", g.mean, g.std_error);
        }
    }

    #[test]
    fn same_seed_gives_identical_results() {
        let s = Scenario::builtin(ScenarioId::LabtestAge, &opts()).unwrap();
        let a = mc_ground_truth(&s, &[-1.0, 0.0], 1000, 9, false).unwrap();
        let b = mc_ground_truth(&s, &[-1.0, 0.0], 1000, 9, false).unwrap();
        assert_eq!(a, b);
    }
}
