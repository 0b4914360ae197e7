//! PPO loss gradients against central finite differences, plus readout checks.

use std::rc::Rc;
use std::sync::Arc;

use lightpath_agent::gnn::{Activation, ActorCritic, GnnConfig};
use lightpath_agent::ppo::{loss_and_gradients, record_loss, LossBatch, PpoConfig};
use lightpath_agent::tape::{Matrix, Tape};
use lightpath_agent::{encode_observation, Checkpoint, GraphBatch, GraphObservation, ObservationSpec};
use lightpath_core::heuristics::RandomValid;
use lightpath_core::{Env, EpisodeConfig, NsrModel, PathOrdering, PathTable, Policy, Topology, TransmissionConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn toy_table() -> Arc<PathTable> {
    let topo = Topology::new(
        &["a", "b", "c"],
        &[("a", "b", 400.0), ("b", "c", 700.0), ("a", "c", 900.0)],
    )
    .unwrap();
    Arc::new(
        PathTable::build(
            &topo,
            2,
            PathOrdering::Hops,
            &NsrModel::PerKm(1e-4),
            &TransmissionConfig::with_channels(3),
        )
        .unwrap(),
    )
}

fn toy_config() -> GnnConfig {
    GnnConfig {
        latent: 6,
        rounds: 2,
        mlp_layers: 2,
        activation: Activation::Tanh,
        ..GnnConfig::default()
    }
}

/// Eight observations from a random-valid rollout, with random actions.
fn samples(table: &Arc<PathTable>, spec: &ObservationSpec) -> (Vec<GraphObservation>, Vec<Option<usize>>) {
    let mut env = Env::new(table.clone(), EpisodeConfig::fixed(40, 5)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut obs = Vec::new();
    let mut actions = Vec::new();
    while obs.len() < 8 {
        let o = encode_observation(&env, spec, true);
        let mask = env.action_mask();
        let valid: Vec<usize> = (0..o.mask.len()).filter(|&i| o.mask[i]).collect();
        actions.push(if valid.is_empty() {
            None
        } else {
            Some(valid[rng.gen_range(0..valid.len())])
        });
        obs.push(o);
        match RandomValid.select(&env, &mask, &mut rng) {
            Some(a) => env.step(a),
            None => env.block(),
        };
    }
    (obs, actions)
}

fn loss_batch<'o>(obs: &'o [GraphObservation], actions: &[Option<usize>], rng: &mut ChaCha8Rng) -> LossBatch<'o> {
    LossBatch {
        observations: obs.iter().collect(),
        actions: actions.to_vec(),
        old_log_probs: (0..obs.len()).map(|_| rng.gen_range(-2.5..-0.5)).collect(),
        advantages: (0..obs.len()).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        returns: (0..obs.len()).map(|_| rng.gen_range(-2.0..2.0)).collect(),
    }
}

fn loss_value(model: &ActorCritic, table: &PathTable, batch: &LossBatch<'_>, cfg: &PpoConfig) -> f64 {
    let mut tape = Tape::new();
    let p = model.bind(&mut tape);
    let (_, stats) = record_loss(model, &mut tape, &p, table, batch, cfg);
    stats.total
}

#[test]
fn loss_gradient_matches_central_differences() {
    let table = toy_table();
    let spec = ObservationSpec::for_table(&table, true);
    let (obs, actions) = samples(&table, &spec);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let batch = loss_batch(&obs, &actions, &mut rng);
    let cfg = PpoConfig {
        clip_eps: 0.2,
        ..PpoConfig::default()
    };
    let mut model = ActorCritic::new(toy_config(), spec, 3);
    // spread policy outputs so ratios span both sides of the clip range
    let w = model.params().index_of("policy.head.out.w").unwrap();
    model.params_mut().values[w].data.iter_mut().for_each(|x| *x *= 100.0);

    let (_, analytic) = loss_and_gradients(&model, &table, &batch, &cfg);
    let h = 1e-6;
    let (mut diff2, mut norm_a, mut norm_n) = (0.0, 0.0, 0.0);
    for pi in 0..model.params().len() {
        for j in 0..model.params().values[pi].len() {
            let orig = model.params().values[pi].data[j];
            model.params_mut().values[pi].data[j] = orig + h;
            let up = loss_value(&model, &table, &batch, &cfg);
            model.params_mut().values[pi].data[j] = orig - h;
            let down = loss_value(&model, &table, &batch, &cfg);
            model.params_mut().values[pi].data[j] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic[pi].data[j];
            diff2 += (a - numeric).powi(2);
            norm_a += a * a;
            norm_n += numeric * numeric;
        }
    }
    let rel = diff2.sqrt() / norm_a.sqrt().max(norm_n.sqrt());
    assert!(norm_a > 0.0);
    assert!(rel < 1e-4, "relative error {rel}");
}

#[test]
fn unit_ratio_gives_vanilla_policy_gradient() {
    let table = toy_table();
    let spec = ObservationSpec::for_table(&table, true);
    let (obs, actions) = samples(&table, &spec);
    let model = ActorCritic::new(toy_config(), spec, 4);
    let refs: Vec<&GraphObservation> = obs.iter().collect();
    let graphs = GraphBatch::from_observations(&refs, &table);
    let (lp, _) = model.evaluate(&graphs);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut batch = loss_batch(&obs, &actions, &mut rng);
    batch.old_log_probs = actions
        .iter()
        .enumerate()
        .map(|(r, a)| a.map_or(0.0, |c| lp.get(r, c)))
        .collect();
    let cfg = PpoConfig {
        vf_coef: 0.0,
        ent_coef: 0.0,
        ..PpoConfig::default()
    };
    let (stats, ppo) = loss_and_gradients(&model, &table, &batch, &cfg);
    assert_eq!(stats.clip_fraction, 0.0);

    // -mean over acting samples of A * log pi(a|s)
    let mut tape = Tape::new();
    let p = model.bind(&mut tape);
    let f = model.forward(&mut tape, &p, &graphs);
    let index: Vec<usize> = actions.iter().map(|a| a.unwrap_or(0)).collect();
    let acting: Vec<f64> = actions.iter().map(|a| if a.is_some() { 1.0 } else { 0.0 }).collect();
    let n = acting.iter().sum::<f64>();
    let weights: Vec<f64> = batch.advantages.iter().zip(&acting).map(|(a, w)| a * w).collect();
    let picked = tape.pick(f.log_probs, Rc::new(index));
    let weighted = tape.mul_const(picked, Rc::new(Matrix::column(weights)));
    let s = tape.sum(weighted);
    let loss = tape.scale(s, -1.0 / n);
    let grads = tape.backward(loss);
    for (i, v) in p.iter().enumerate() {
        let vanilla = grads.get(*v).cloned().unwrap_or_else(|| Matrix::zeros(ppo[i].rows, ppo[i].cols));
        for (a, b) in ppo[i].data.iter().zip(&vanilla.data) {
            assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()), "param {i}: {a} vs {b}");
        }
    }
}

fn readout_probs(scores: Vec<f64>, mask: Vec<bool>, cols: usize) -> Vec<f64> {
    let mut tape = Tape::new();
    let x = tape.leaf(Matrix::from_vec(scores.len() / cols, cols, scores));
    let lp = tape.masked_log_softmax(x, Rc::new(mask.clone()));
    tape.value(lp)
        .data
        .iter()
        .zip(&mask)
        .map(|(l, &m)| if m { l.exp() } else { 0.0 })
        .collect()
}

#[test]
fn readout_distribution_cases() {
    let p = readout_probs(vec![0.7; 12], vec![true; 12], 12);
    assert!(p.iter().all(|&x| (x - 1.0 / 12.0).abs() < 1e-15));

    let mut one = vec![false; 12];
    one[7] = true;
    let p = readout_probs((0..12).map(|i| i as f64).collect(), one, 12);
    assert_eq!(p[7], 1.0);
    assert_eq!(p.iter().sum::<f64>(), 1.0);

    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..200 {
        let scores: Vec<f64> = (0..12).map(|_| rng.gen_range(-20.0..20.0)).collect();
        let mut mask: Vec<bool> = (0..12).map(|_| rng.gen_bool(0.5)).collect();
        mask[rng.gen_range(0..12)] = true;
        let p = readout_probs(scores.clone(), mask.clone(), 12);
        let z: f64 = scores.iter().zip(&mask).filter(|(_, &m)| m).map(|(s, _)| s.exp()).sum();
        for i in 0..12 {
            let expected = if mask[i] { scores[i].exp() / z } else { 0.0 };
            assert!((p[i] - expected).abs() < 1e-6);
        }
    }
}

#[test]
fn checkpoint_round_trip_and_mismatch() {
    let table = toy_table();
    let spec = ObservationSpec::for_table(&table, true);
    let model = ActorCritic::new(toy_config(), spec, 8);
    let ck = Checkpoint::new(&model, &PpoConfig::default(), &table, 100.0, 3, 999);
    let dir = std::env::temp_dir().join(format!("lp-ck-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("model.json");
    ck.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded, ck);
    let restored = loaded.clone().into_model(&table, 100.0).unwrap();
    assert_eq!(restored.params(), model.params());

    let other = PathTable::build(
        table.topology(),
        2,
        PathOrdering::Length,
        &NsrModel::PerKm(1e-4),
        &TransmissionConfig::with_channels(3),
    )
    .unwrap();
    assert!(loaded.clone().into_model(&other, 100.0).is_err());
    assert!(loaded.into_model(&table, 200.0).is_err());
    std::fs::write(&path, "{\"format\":\"x\"}").unwrap();
    assert!(Checkpoint::load(&path).is_err());
    std::fs::remove_dir_all(&dir).ok();
}
