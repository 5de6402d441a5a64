use super::*;
use crate::families::logit;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

fn model(v: serde_json::Value) -> ShiftModel {
    ShiftModel::new(serde_json::from_value(v).unwrap()).unwrap()
}

fn model_err(v: serde_json::Value) -> ModelError {
    ShiftModel::new(serde_json::from_value(v).unwrap()).unwrap_err()
}

/// Age → Disease → Order → Lab (gated on Order), with a per-stratum shift on Order.
fn lab_model(shift: serde_json::Value) -> ShiftModel {
    model(json!({
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
        "interventions": [{"variable": "O", "shift": shift}]
    }))
}

/// Random binary network over `n` nodes with per-stratum shifts on a random subset.
pub(crate) fn random_binary_model(rng: &mut ChaCha8Rng, n: usize) -> ShiftModel {
    let mut vars = Vec::new();
    let mut interventions = Vec::new();
    for i in 0..n {
        let parents: Vec<String> = (0..i).filter(|_| rng.random::<f64>() < 0.4).take(3).map(|p| format!("V{p}")).collect();
        let rows: Vec<Vec<f64>> = (0..1usize << parents.len()).map(|_| vec![rng.random::<f64>() * 4.0 - 2.0]).collect();
        vars.push(json!({"name": format!("V{i}"), "family": {"kind": "bernoulli_logit"}, "parents": parents,
                         "eta": {"form": "table", "table": rows}}));
        if rng.random::<f64>() < 0.5 {
            interventions.push(json!({"variable": format!("V{i}"), "shift": {"form": "per_stratum"}}));
        }
    }
    if interventions.is_empty() {
        interventions.push(json!({"variable": "V0", "shift": {"form": "per_stratum"}}));
    }
    model(json!({"schema_version": 1, "variables": vars, "interventions": interventions}))
}

fn random_delta(rng: &mut ChaCha8Rng, d: usize, radius: f64) -> Vec<f64> {
    let raw: Vec<f64> = (0..d).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
    let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    let r = radius * rng.random::<f64>();
    raw.iter().map(|x| x / norm * r).collect()
}

#[test]
fn config_round_trips_losslessly() {
    let m = lab_model(json!({"form": "per_stratum", "over": ["Y"]}));
    let text = serde_json::to_string(m.config()).unwrap();
    let back: ModelConfig = serde_json::from_str(&text).unwrap();
    assert_eq!(&back, m.config());
    assert_eq!(serde_json::to_string(&back).unwrap(), text);
}

#[test]
fn invalid_configs_name_the_offending_field() {
    let base = |vars: serde_json::Value, iv: serde_json::Value| json!({"schema_version": 1, "variables": vars, "interventions": iv});
    let b = |name: &str, parents: Vec<&str>| {
        json!({"name": name, "family": {"kind": "bernoulli_logit"}, "parents": parents,
               "eta": {"form": "constant", "eta": [0.0]}})
    };
    assert!(matches!(model_err(base(json!([b("X", vec!["Y"]), b("Y", vec!["X"])]), json!([]))), ModelError::Cycle(_)));
    match model_err(base(json!([b("X", vec!["Q"])]), json!([]))) {
        ModelError::Invalid { path, .. } => assert_eq!(path, "/variables/0/parents/0"),
        e => panic!("{e:?}"),
    }
    match model_err(json!({"schema_version": 9, "variables": [b("X", vec![])]})) {
        ModelError::Invalid { path, .. } => assert_eq!(path, "/schema_version"),
        e => panic!("{e:?}"),
    }
    match model_err(base(json!([b("X", vec![])]), json!([{"variable": "X", "shift": {"form": "variance_scaled_mean"}}]))) {
        ModelError::Invalid { path, .. } => assert_eq!(path, "/interventions/0/shift"),
        e => panic!("{e:?}"),
    }
    let cont = json!({"name": "A", "family": {"kind": "poisson"}, "eta": {"form": "constant", "eta": [0.0]}});
    let child = json!({"name": "X", "family": {"kind": "bernoulli_logit"}, "parents": ["A"],
                       "eta": {"form": "linear", "intercept": [0.0], "coefficients": [[0.1]]}});
    match model_err(base(json!([cont, child]), json!([{"variable": "X", "shift": {"form": "per_stratum"}}]))) {
        ModelError::Invalid { message, .. } => assert!(message.contains("must be discrete"), "{message}"),
        e => panic!("{e:?}"),
    }
    let gated = ShiftModel::new(lab_model(json!({"form": "constant"})).config().clone());
    assert!(gated.is_ok());
    let mut cfg = lab_model(json!({"form": "constant"})).config().clone();
    cfg.interventions = vec![InterventionSpec { variable: "L".into(), shift: ShiftForm::Constant, target: None }];
    match ShiftModel::new(cfg).unwrap_err() {
        ModelError::Invalid { message, .. } => assert!(message.contains("gated")),
        e => panic!("{e:?}"),
    }
    // table η outside the domain is rejected when the model is built
    let bad = json!({"name": "G", "family": {"kind": "gaussian_full", "dim": 1}, "eta": {"form": "constant", "eta": [0.0, 0.5]}});
    match model_err(base(json!([bad]), json!([]))) {
        ModelError::Invalid { path, .. } => assert_eq!(path, "/variables/0/eta/eta"),
        e => panic!("{e:?}"),
    }
}

#[test]
fn apply_shift_examples() {
    let m = lab_model(json!({"form": "per_stratum", "over": ["Y"]}));
    assert_eq!(m.d_delta(), 2);
    let z = [0.0, 1.0, 0.0, 0.0];
    assert_eq!(m.apply_shift("O", &z, &[0.0, 2.0]).unwrap(), vec![3.0]);
    assert_eq!(m.apply_shift("O", &z, &[0.0, 0.0]).unwrap(), m.eta(2, &z).unwrap());
    assert_eq!(m.apply_shift("O", &[0.3, 0.0, 0.0, 0.0], &[0.5, 2.0]).unwrap(), vec![-1.0 + 0.15 + 0.5]);

    let mult = model(json!({"schema_version": 1,
        "variables": [{"name": "W", "family": {"kind": "bernoulli_logit"}, "eta": {"form": "constant", "eta": [-2.0]}}],
        "interventions": [{"variable": "W", "shift": {"form": "multiplicative"}}]}));
    assert_eq!(mult.apply_shift("W", &[0.0], &[0.5]).unwrap(), vec![-3.0]);
}

#[test]
fn labels_follow_lexicographic_stratum_order() {
    let m = model(json!({"schema_version": 1, "variables": [
        {"name": "Young", "family": {"kind": "bernoulli_logit"}, "eta": {"form": "constant", "eta": [0.0]}},
        {"name": "Male", "family": {"kind": "bernoulli_logit"}, "eta": {"form": "constant", "eta": [0.0]}},
        {"name": "Bald", "family": {"kind": "bernoulli_logit"}, "parents": ["Male", "Young"],
         "eta": {"form": "linear", "intercept": [-3.0], "coefficients": [[3.5, -1.0]]}}],
        "interventions": [{"variable": "Bald", "shift": {"form": "per_stratum"}},
                          {"variable": "Young", "shift": {"form": "per_stratum"}}]}));
    assert_eq!(
        m.delta_labels(),
        vec!["Young", "Bald | Male=0, Young=0", "Bald | Male=0, Young=1", "Bald | Male=1, Young=0", "Bald | Male=1, Young=1"]
    );
    assert_eq!(m.delta_index()[1].offset, 1);
    // Male=1, Young=0 is stratum 2 of Bald's block
    let eta = m.apply_shift("Bald", &[0.0, 1.0, 0.0], &[0.0, 0.0, 0.0, 7.0, 0.0]).unwrap();
    assert_eq!(eta, vec![-3.0 + 3.5 + 7.0]);
}

fn form_models() -> Vec<(ShiftModel, &'static str)> {
    let parents = json!([
        {"name": "A", "family": {"kind": "gaussian_known_var", "sigma": 1.0}, "eta": {"form": "constant", "eta": [0.2]}},
        {"name": "Y", "family": {"kind": "bernoulli_logit"}, "eta": {"form": "constant", "eta": [0.3]}}
    ]);
    let with = |child: serde_json::Value, shift: serde_json::Value| {
        let mut vars = parents.as_array().unwrap().clone();
        vars.push(child);
        model(json!({"schema_version": 1, "variables": vars, "interventions": [{"variable": "W", "shift": shift}]}))
    };
    let bern = json!({"name": "W", "family": {"kind": "bernoulli_logit"}, "parents": ["A", "Y"],
                      "eta": {"form": "linear", "intercept": [-0.4], "coefficients": [[0.7, 1.1]]}});
    let cat = json!({"name": "W", "family": {"kind": "categorical", "k": 3}, "parents": ["A", "Y"],
                     "eta": {"form": "linear", "intercept": [0.1, -0.3, 0.0], "coefficients": [[0.5, 0.2], [-0.1, 0.4], [0.0, 0.0]]}});
    let gauss = json!({"name": "W", "family": {"kind": "gaussian_full", "dim": 1}, "parents": ["A", "Y"],
                       "eta": {"form": "linear", "intercept": [0.3, -0.5], "coefficients": [[0.2, 0.1], [0.0, 0.0]]}});
    let gkv = json!({"name": "W", "family": {"kind": "gaussian_known_var", "sigma": 2.0}, "parents": ["A", "Y"],
                     "eta": {"form": "linear", "intercept": [0.3], "coefficients": [[0.2, 0.1]]}});
    vec![
        (with(bern.clone(), json!({"form": "constant"})), "constant"),
        (with(bern.clone(), json!({"form": "per_stratum", "over": ["Y"]})), "per_stratum"),
        (with(bern.clone(), json!({"form": "linear_in_z", "features": ["1", "A", "A*Y", "A^2"]})), "linear_in_z"),
        (with(bern, json!({"form": "multiplicative"})), "multiplicative"),
        (with(cat.clone(), json!({"form": "constant"})), "categorical constant"),
        (with(cat, json!({"form": "per_stratum", "over": ["Y"]})), "categorical per_stratum"),
        (with(gauss.clone(), json!({"form": "variance_scaled_mean"})), "variance_scaled_mean"),
        (with(gkv, json!({"form": "variance_scaled_mean"})), "variance_scaled_mean known var"),
        (with(gauss, json!({"form": "domain_guarded", "inner": {"form": "constant"}})), "domain_guarded"),
    ]
}

#[test]
fn jacobians_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let h = 1e-5;
    for (m, label) in form_models() {
        let d = m.d_delta();
        for _ in 0..50 {
            let mut z = m.sample_joint(&vec![0.0; d], 1, &mut rng).unwrap().row(0).to_vec();
            z[0] = rng.random::<f64>() * 4.0 - 2.0;
            let (d1, d2) = m.shift_jacobians("W", &z).unwrap();
            let dim_t = d1.nrows();
            for l in 0..d {
                let mut up = vec![0.0; d];
                let mut dn = vec![0.0; d];
                up[l] = h;
                dn[l] = -h;
                let su = m.apply_shift("W", &z, &up).unwrap();
                let sd = m.apply_shift("W", &z, &dn).unwrap();
                let s0 = m.apply_shift("W", &z, &vec![0.0; d]).unwrap();
                let h2 = 1e-3;
                let mut up2 = vec![0.0; d];
                let mut dn2 = vec![0.0; d];
                up2[l] = h2;
                dn2[l] = -h2;
                let su2 = m.apply_shift("W", &z, &up2).unwrap();
                let sd2 = m.apply_shift("W", &z, &dn2).unwrap();
                for c in 0..dim_t {
                    let fd = (su[c] - sd[c]) / (2.0 * h);
                    assert!((fd - d1[(c, l)]).abs() <= 1e-7, "{label}: D1[{c},{l}] fd {fd} vs {}", d1[(c, l)]);
                    let fd2 = (su2[c] - 2.0 * s0[c] + sd2[c]) / (h2 * h2);
                    assert!((fd2 - d2[c][(l, l)]).abs() <= 1e-7, "{label}: D2[{c}][{l},{l}] fd {fd2}");
                }
            }
        }
    }
}

#[test]
fn jacobian_examples() {
    let (m, _) = form_models().remove(0);
    let z = [0.4, 1.0, 0.0];
    let (d1, d2) = m.shift_jacobians("W", &z).unwrap();
    assert_eq!(d1, DMatrix::from_element(1, 1, 1.0));
    assert_eq!(d2[0], DMatrix::zeros(1, 1));
    let (m, _) = form_models().remove(1);
    let (d1, _) = m.shift_jacobians("W", &z).unwrap();
    assert_eq!(d1, DMatrix::from_row_slice(1, 2, &[0.0, 1.0]));
}

#[test]
fn domain_violations_are_explicit_and_guard_zeroes_them() {
    let m = model(json!({"schema_version": 1,
        "variables": [{"name": "W", "family": {"kind": "gaussian_full", "dim": 1}, "eta": {"form": "constant", "eta": [0.0, -0.5]}}],
        "interventions": [{"variable": "W", "shift": {"form": "constant"}}]}));
    match m.apply_shift("W", &[0.0], &[0.0, 1.0]).unwrap_err() {
        ModelError::ShiftDomain { variable, coord, .. } => {
            assert_eq!(variable, "W");
            assert_eq!(coord, 1);
        }
        e => panic!("{e:?}"),
    }
    let g = model(json!({"schema_version": 1,
        "variables": [{"name": "W", "family": {"kind": "gaussian_full", "dim": 1}, "eta": {"form": "constant", "eta": [0.0, -0.5]}}],
        "interventions": [{"variable": "W", "shift": {"form": "domain_guarded", "inner": {"form": "constant"}}}]}));
    assert_eq!(g.apply_shift("W", &[0.0], &[0.3, 1.0]).unwrap(), vec![0.3, -0.5]);
    assert_eq!(g.apply_shift("W", &[0.0], &[0.3, 0.2]).unwrap(), vec![0.3, -0.3]);
}

#[test]
fn density_ratio_single_bernoulli() {
    let m = model(json!({"schema_version": 1,
        "variables": [{"name": "W", "family": {"kind": "bernoulli_logit"}, "eta": {"form": "constant", "eta": [0.0]}}],
        "interventions": [{"variable": "W", "shift": {"form": "constant"}}]}));
    let d = [3f64.ln()];
    let w1 = m.density_ratio(&d, &[1.0]).unwrap();
    let w0 = m.density_ratio(&d, &[0.0]).unwrap();
    assert!((w1 - 1.5).abs() < 1e-14);
    assert!((w0 - 0.5).abs() < 1e-14);
    assert!((0.5 * w1 + 0.5 * w0 - 1.0).abs() < 1e-14);
    assert_eq!(m.density_ratio(&[0.0], &[1.0]).unwrap(), 1.0);
}

#[test]
fn lab_density_ratio_matches_closed_form() {
    let m = lab_model(json!({"form": "per_stratum", "over": ["Y"]}));
    let delta = [0.7, -1.3];
    for rec in [[0.2f64, 0.0, 1.0, 0.4], [-0.1, 1.0, 0.0, 0.0], [0.5, 1.0, 1.0, 2.0]] {
        let (a, y, o) = (rec[0], rec[1], rec[2]);
        let eta = 2.0 * y + 0.5 * a - 1.0;
        let s = delta[0] * (1.0 - y) + delta[1] * y;
        let expected = (s * o).exp() * (1.0 + eta.exp()) / (1.0 + (eta + s).exp());
        let w = m.density_ratio(&delta, &rec).unwrap();
        assert!((w - expected).abs() < 1e-13 * expected);
    }
}

#[test]
fn enumeration_weights_average_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..10 {
        let n = 4 + (rng.random::<u32>() % 9) as usize;
        let m = random_binary_model(&mut rng, n);
        let base = m.enumerate(&vec![0.0; m.d_delta()]).unwrap();
        assert_eq!(base.len(), 1 << n);
        assert!((base.iter().map(|(_, p)| p).sum::<f64>() - 1.0).abs() < 1e-12);
        let loss = |r: &[f64]| r.iter().enumerate().map(|(i, x)| x * (i as f64 + 1.0).sin()).sum::<f64>().cos();
        for _ in 0..5 {
            let delta = random_delta(&mut rng, m.d_delta(), 2.0);
            let ew: f64 = base.iter().map(|(r, p)| p * m.density_ratio(&delta, r).unwrap()).sum();
            assert!((ew - 1.0).abs() < 1e-12, "E[w] = {ew}");
            let shifted = m.enumerate(&delta).unwrap();
            let truth: f64 = shifted.iter().map(|(r, p)| p * loss(r)).sum();
            let is: f64 = base.iter().map(|(r, p)| p * m.density_ratio(&delta, r).unwrap() * loss(r)).sum();
            assert!((truth - is).abs() < 1e-10);
        }
    }
}

#[test]
fn enumeration_handles_categorical_and_gates() {
    let m = model(json!({"schema_version": 1, "variables": [
        {"name": "C", "family": {"kind": "categorical", "k": 3}, "eta": {"form": "constant", "eta": [0.5, -0.5, 0.0]}},
        {"name": "G", "family": {"kind": "bernoulli_logit"}, "parents": ["C"], "eta": {"form": "table", "table": [[0.0], [1.0], [-1.0]]}},
        {"name": "X", "family": {"kind": "bernoulli_logit"}, "parents": ["G"],
         "eta": {"form": "gated", "gate": "G", "inactive_value": 0.0, "active": {"form": "constant", "eta": [2.0]}}}],
        "interventions": [{"variable": "C", "shift": {"form": "constant"}}, {"variable": "G", "shift": {"form": "per_stratum"}}]}));
    assert_eq!(m.d_delta(), 2 + 3);
    assert_eq!(m.delta_labels()[0], "C[0]");
    let delta = [0.3, -0.2, 0.1, 0.4, -0.6];
    let recs = m.enumerate(&delta).unwrap();
    // gated-off X contributes a single record per (C, G=0)
    assert_eq!(recs.len(), 3 * (1 + 2));
    assert!((recs.iter().map(|(_, p)| p).sum::<f64>() - 1.0).abs() < 1e-14);
    let base = m.enumerate(&[0.0; 5]).unwrap();
    let ew: f64 = base.iter().map(|(r, p)| p * m.density_ratio(&delta, r).unwrap()).sum();
    assert!((ew - 1.0).abs() < 1e-12);
}

#[test]
fn continuous_weights_average_to_one_within_mc_error() {
    let m = lab_model(json!({"form": "per_stratum", "over": ["Y"]}));
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let sample = m.sample_joint(&[0.0, 0.0], 100_000, &mut rng).unwrap();
    for _ in 0..20 {
        let delta = random_delta(&mut rng, 2, 2.0);
        let w: Vec<f64> = (0..sample.n_rows()).map(|j| m.density_ratio(&delta, sample.row(j)).unwrap()).collect();
        let n = w.len() as f64;
        let mean = w.iter().sum::<f64>() / n;
        let se = (w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt();
        assert!((mean - 1.0).abs() <= 4.0 * se, "mean {mean} se {se}");
    }
}

#[test]
fn sampling_reproduces_lab_rates_and_dummy_values() {
    let m = model(json!({"schema_version": 1, "variables": [
        {"name": "Y", "family": {"kind": "bernoulli_logit"}, "eta": {"form": "constant", "eta": [0.0]}},
        {"name": "O", "family": {"kind": "bernoulli_logit"}, "parents": ["Y"],
         "eta": {"form": "linear", "intercept": [-1.0], "coefficients": [[2.0]]}},
        {"name": "L", "family": {"kind": "gaussian_known_var", "sigma": 1.0}, "parents": ["Y", "O"],
         "eta": {"form": "gated", "gate": "O", "active": {"form": "linear", "intercept": [-0.5], "coefficients": [[1.0, 0.0]]}}}]}));
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let t = m.sample_joint(&[], 100_000, &mut rng).unwrap();
    let (mut n0, mut o0, mut n1, mut o1) = (0.0, 0.0, 0.0, 0.0);
    for j in 0..t.n_rows() {
        let r = t.row(j);
        if r[1] == 0.0 {
            assert_eq!(r[2], 0.0);
        }
        if r[0] == 0.0 {
            n0 += 1.0;
            o0 += r[1];
        } else {
            n1 += 1.0;
            o1 += r[1];
        }
    }
    for (n, o, p) in [(n0, o0, sigmoid(-1.0)), (n1, o1, sigmoid(1.0))] {
        let se = (p * (1.0 - p) / n).sqrt();
        assert!((o / n - p).abs() <= 3.0 * se, "rate {} vs {p}", o / n);
    }
    let marginal = (o0 + o1) / (n0 + n1);
    assert!((marginal - 0.5).abs() <= 3.0 * (0.25 / (n0 + n1)).sqrt());
}

#[test]
fn marginal_solver_examples() {
    let m = model(json!({"schema_version": 1,
        "variables": [{"name": "W", "family": {"kind": "bernoulli_logit"}, "eta": {"form": "constant", "eta": [0.0]}}],
        "interventions": [{"variable": "W", "shift": {"form": "constant"}}]}));
    let t = SampleTable::from_rows(vec!["W".into()], vec![0.0; 10]);
    let d = m.solve_delta_for_marginal("W", 0.75, &t).unwrap();
    assert!((d - 3f64.ln()).abs() < 1e-9);
    assert!(m.solve_delta_for_marginal("W", 0.5, &t).unwrap().abs() < 1e-9);
    match m.solve_delta_for_marginal("W", 1.0, &t).unwrap_err() {
        ModelError::InfeasibleTarget { p_plus, one_minus_p_minus, .. } => {
            assert!(p_plus < 1e-12 && one_minus_p_minus > 1.0 - 1e-12)
        }
        e => panic!("{e:?}"),
    }
}

#[test]
fn marginal_solver_on_lab_model_verified_by_resimulation() {
    let m = lab_model(json!({"form": "constant"}));
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let sample = m.sample_joint(&[0.0], 100_000, &mut rng).unwrap();
    let d = m.solve_delta_for_marginal("O", 0.15, &sample).unwrap();
    let curve = m.marginal_curve("O", &sample, &[d]).unwrap();
    assert!((curve[0] - 0.15).abs() < 1e-6);
    let fresh = m.sample_joint(&[d], 100_000, &mut rng).unwrap();
    let rate = fresh.column("O").unwrap().iter().sum::<f64>() / 1e5;
    assert!((rate - 0.15).abs() < 0.005, "rate {rate}");
    let grid: Vec<f64> = (0..1000).map(|k| -10.0 + 20.0 * k as f64 / 999.0).collect();
    let curve = m.marginal_curve("O", &sample, &grid).unwrap();
    assert!(curve.windows(2).all(|w| w[1] >= w[0]));
    let base = m.marginal_curve("O", &sample, &[0.0]).unwrap()[0];
    assert!(m.solve_delta_for_marginal("O", base, &sample).unwrap().abs() < 1e-6);
    assert!((logit(0.75) - 3f64.ln()).abs() < 1e-15);
}
