//! Random fully binary networks with a Brier-scored logistic predictor.

use crate::predictor::{Logistic, LossKind, Predictor};
use crate::scenario::Scenario;
use crate::SimError;
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;
use serde_json::json;
use shiftbench_core::model::{EtaSpec, ShiftModel};
use shiftbench_core::rng;

pub const MAX_NODES: usize = 10;
pub const MAX_PARENTS: usize = 2;

/// A network of `n_nodes` binary variables named `V0, V1, …` in topological
/// order. Each node draws up to two earlier parents and a log-odds table with
/// N(0, 1) entries; each node carries a per-stratum shift with probability ½
/// (at least one does). The predictor is a logistic score of every node but
/// the last, which is the label; the loss is the Brier score.
pub fn random_network(seed: u64, index: u64, n_nodes: usize) -> Result<Scenario, SimError> {
    if !(2..=MAX_NODES).contains(&n_nodes) {
        return Err(SimError::Config(format!("random networks have 2 to {MAX_NODES} nodes")));
    }
    let mut r = rng::stream(seed, "sim/random_network", index);
    let mut vars = Vec::with_capacity(n_nodes);
    let mut shifted = Vec::new();
    for i in 0..n_nodes {
        let k = r.random_range(0..=i.min(MAX_PARENTS));
        let mut parents: Vec<usize> = sample(&mut r, i.max(1), k).into_vec();
        parents.sort_unstable();
        let table: Vec<[f64; 1]> = (0..1usize << k).map(|_| [r.sample(StandardNormal)]).collect();
        let names: Vec<String> = parents.iter().map(|p| format!("V{p}")).collect();
        vars.push(json!({"name": format!("V{i}"), "family": {"kind": "bernoulli_logit"}, "parents": names,
                         "eta": {"form": "table", "table": table}}));
        if r.random_bool(0.5) {
            shifted.push(i);
        }
    }
    if shifted.is_empty() {
        shifted.push(r.random_range(0..n_nodes));
    }
    let interventions: Vec<_> = shifted
        .iter()
        .map(|i| json!({"variable": format!("V{i}"), "shift": {"form": "per_stratum"}}))
        .collect();
    let config = serde_json::from_value(json!({"schema_version": 1, "variables": vars, "interventions": interventions}))
        .map_err(|e| SimError::Config(e.to_string()))?;
    let model = ShiftModel::new(config)?;
    let cols: Vec<usize> = (0..n_nodes - 1).collect();
    let coef: Vec<f64> = (0..n_nodes).map(|_| r.sample(StandardNormal)).collect();
    Ok(Scenario {
        id: None,
        model,
        predictor: Predictor::Logistic(Logistic { cols, coef }),
        loss: LossKind::Squared,
        target: Some(n_nodes - 1),
        anchor: None,
    })
}

/// The model whose unshifted distribution is `P_δ` of a per-stratum-shifted
/// table model, with the same intervention declarations.
pub fn shifted_model(model: &ShiftModel, delta: &[f64]) -> Result<ShiftModel, SimError> {
    if delta.len() != model.d_delta() {
        return Err(SimError::Config(format!("δ has length {}, expected {}", delta.len(), model.d_delta())));
    }
    let mut config = model.config().clone();
    for block in model.delta_index() {
        let var = config
            .variables
            .iter_mut()
            .find(|v| v.name == block.variable)
            .expect("block variable is declared");
        let d = &delta[block.offset..block.offset + block.len];
        match (&mut var.eta, block.form.as_str()) {
            (EtaSpec::Table { table }, "per_stratum") if table.len() == d.len() => {
                for (row, x) in table.iter_mut().zip(d) {
                    row[0] += x;
                }
            }
            _ => {
                return Err(SimError::Config(format!(
                    "'{}': only per-stratum shifts of table conditionals can be folded in",
                    block.variable
                )))
            }
        }
    }
    Ok(ShiftModel::new(config)?)
}
