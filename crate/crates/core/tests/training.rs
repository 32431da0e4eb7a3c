mod common;

use std::collections::BTreeMap;

use cdlab::channel::{build_dataset, ArraySpec, ChannelMatrix, Dataset, DatasetCounts, ScenarioConfig};
use cdlab::nn::{Network, ParameterSet, Variant};
use cdlab::train::{
    layer_groups, loss_and_grads, lr_at, mse, run, sample_batch, trace_csv, train, Adam, TrainConfig, TrainState,
};
use cdlab::Error;
use cdlab_tensor::Tensor;
use common::{random_matrix, random_params, random_samples, rng, toy_spec};
use num_complex::Complex64;
use proptest::prelude::*;

fn toy_data(seed: u64) -> Dataset {
    let s = ScenarioConfig {
        n_c: 4,
        array: ArraySpec::Linear { n: 4 },
        ..ScenarioConfig::default()
    };
    let counts = DatasetCounts {
        train: 16,
        train_len: 8,
        test_mobile: 2,
        test_quasi_static: 2,
        test_len: 3,
        ..DatasetCounts::default()
    };
    build_dataset(&s, &counts, seed).unwrap().train
}

fn toy_cfg(steps: u64) -> TrainConfig {
    TrainConfig {
        batch: 4,
        steps,
        warmup: 5,
        schedule_width: 16,
        seed: 3,
        augment_ratio: 0.5,
        checkpoint_every: 0,
    }
}

#[test]
fn mse_trivial_values() {
    let mut r = rng(1);
    let a = vec![random_matrix(&mut r, 3, 2)];
    assert_eq!(mse(&a, &a).unwrap(), 0.0);
    let t = vec![ChannelMatrix::new(1, 1, vec![Complex64::new(1.0, 0.0)], 0).unwrap()];
    let p = vec![ChannelMatrix::new(1, 1, vec![Complex64::new(0.5, 0.0)], 0).unwrap()];
    assert_eq!(mse(&p, &t).unwrap(), 0.25);
    assert!(mse(&p, &a).is_err());
}

#[test]
fn mse_is_mean_of_per_sample_norms() {
    let mut r = rng(2);
    let p: Vec<ChannelMatrix> = (0..7).map(|_| random_matrix(&mut r, 4, 4)).collect();
    let t: Vec<ChannelMatrix> = (0..7).map(|_| random_matrix(&mut r, 4, 4)).collect();
    let mut total = 0.0;
    for (a, b) in p.iter().zip(&t) {
        let mut s = 0.0;
        for (x, y) in a.entries().iter().zip(b.entries()) {
            s += (x.re - y.re).powi(2) + (x.im - y.im).powi(2);
        }
        total += s;
    }
    assert!((mse(&p, &t).unwrap() - total / 7.0).abs() < 1e-12);
}

#[test]
fn taped_loss_matches_plain_loss() {
    let spec = toy_spec(Variant::RcdNet);
    let net = Network::new(spec.clone(), random_params(&spec, 3)).unwrap();
    let samples = random_samples(&spec, 5, 4);
    let (loss, _) = loss_and_grads(&net, &samples).unwrap();
    let pred = net.infer_batch(&samples).unwrap();
    let truth: Vec<ChannelMatrix> = samples.iter().map(|s| s.truth.clone().unwrap()).collect();
    assert!((loss - mse(&pred, &truth).unwrap()).abs() < 1e-12 * loss.max(1.0));
}

#[test]
fn schedule_arithmetic() {
    // 512^−0.5 · 4000^−1.5, computed by hand.
    assert!((lr_at(1, 512, 4000).unwrap() - 1.746928107421711e-07).abs() < 1e-20);
    let at = lr_at(4000, 512, 4000).unwrap();
    assert!((at - (512f64 * 4000.0).powf(-0.5)).abs() < 1e-18);
    assert!(lr_at(0, 512, 4000).is_err());
    assert!(lr_at(1, 512, 0).is_err());
}

#[test]
fn schedule_rises_then_decays() {
    let lr: Vec<f64> = (1..=400).map(|s| lr_at(s, 64, 200).unwrap()).collect();
    assert!(lr[..200].windows(2).all(|w| w[1] > w[0]));
    assert!(lr[199..].windows(2).all(|w| w[1] < w[0]));
}

#[test]
fn adam_one_step_hand_value() {
    let mut p = ParameterSet::from_tensors([("w".to_string(), Tensor::scalar(1.0))], 0);
    let g = BTreeMap::from([("w".to_string(), Tensor::scalar(1.0))]);
    let mut adam = Adam::default();
    adam.update(&mut p, &g, 0.1).unwrap();
    // m̂ = 1, v̂ = 1, so the step is 0.1 / (1 + 1e-8).
    assert!((p.get("w").unwrap().item() - 0.900000001).abs() < 1e-15);
    assert_eq!(adam.step_count(), 1);
    let (m, v) = adam.moments("w").unwrap();
    assert!((m[0] - 0.1).abs() < 1e-15 && (v[0] - 0.001).abs() < 1e-15);
}

#[test]
fn adam_zero_gradients_leave_parameters() {
    let spec = toy_spec(Variant::AcdNet);
    let mut p = random_params(&spec, 5);
    let before = p.clone();
    let g: BTreeMap<String, Tensor> = p.iter().map(|(n, t)| (n.clone(), Tensor::zeros(t.shape().to_vec()))).collect();
    Adam::default().update(&mut p, &g, 0.1).unwrap();
    assert_eq!(p, before);
}

#[test]
fn adam_two_steps_match_replay() {
    let grads = [[0.3, -1.2, 0.0], [-0.7, 0.4, 2.0]];
    let lrs = [0.05, 0.02];
    let mut p = ParameterSet::from_tensors([("w".to_string(), Tensor::new(vec![3], vec![0.5, -0.2, 1.0]).unwrap())], 0);
    let mut adam = Adam::default();
    for (g, lr) in grads.iter().zip(lrs) {
        let g = BTreeMap::from([("w".to_string(), Tensor::new(vec![3], g.to_vec()).unwrap())]);
        adam.update(&mut p, &g, lr).unwrap();
    }
    // Replay both steps with the textbook recurrences.
    let mut w = [0.5, -0.2, 1.0];
    for i in 0..3 {
        let (mut m, mut v) = (0.0, 0.0);
        for (t, (g, lr)) in grads.iter().zip(lrs).enumerate() {
            let t = (t + 1) as i32;
            m = 0.9 * m + 0.1 * g[i];
            v = 0.999 * v + 0.001 * g[i] * g[i];
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            w[i] -= lr * mh / (vh.sqrt() + 1e-8);
        }
    }
    for (a, b) in p.get("w").unwrap().data().iter().zip(w) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn overfits_a_single_batch() {
    let spec = toy_spec(Variant::RcdNet);
    let mut net = Network::init(spec.clone(), 1).unwrap();
    let batch = random_samples(&spec, 4, 2);
    let mut adam = Adam::default();
    let (first, _) = loss_and_grads(&net, &batch).unwrap();
    let mut last = first;
    for _ in 0..500 {
        let (loss, g) = loss_and_grads(&net, &batch).unwrap();
        adam.update(&mut net.params, &g, 3e-3).unwrap();
        last = loss;
    }
    let (last_eval, _) = loss_and_grads(&net, &batch).unwrap();
    assert!(last_eval < 0.01 * first, "{first} -> {last} ({last_eval})");
}

#[test]
fn training_is_deterministic() {
    let data = toy_data(1);
    for v in Variant::ALL {
        let a = train(toy_spec(v), &data, &toy_cfg(6)).unwrap();
        let b = train(toy_spec(v), &data, &toy_cfg(6)).unwrap();
        assert_eq!(a.trace, b.trace, "{v}");
        assert_eq!(a.network, b.network);
        assert_eq!(a.trace.len(), 6);
        let c = train(toy_spec(v), &data, &TrainConfig { seed: 4, ..toy_cfg(6) }).unwrap();
        assert_ne!(a.trace, c.trace);
    }
}

#[test]
fn resuming_from_a_checkpoint_matches_uninterrupted() {
    let data = toy_data(2);
    let spec = toy_spec(Variant::AcdNet);
    let cfg = TrainConfig {
        checkpoint_every: 4,
        ..toy_cfg(10)
    };
    let whole = train(spec.clone(), &data, &cfg).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("state.ckpt");
    let mut first = TrainState::fresh(spec, cfg.seed).unwrap();
    let mut saved = Vec::new();
    run(&mut first, &data, &cfg, 4, |s| {
        saved.push(s.step());
        s.save(&path)
    })
    .unwrap();
    assert_eq!(saved, vec![4]);

    let mut resumed = TrainState::load(&path).unwrap();
    assert_eq!(resumed, first);
    run(&mut resumed, &data, &cfg, cfg.steps, |_| Ok(())).unwrap();
    assert_eq!(resumed.trace, whole.trace);
    assert_eq!(resumed.network, whole.network);
    assert_eq!(resumed.adam, whole.adam);
    assert_eq!(trace_csv(&resumed.trace), trace_csv(&whole.trace));
}

#[test]
fn every_layer_group_receives_gradient() {
    for v in Variant::ALL {
        let spec = toy_spec(v);
        let net = Network::init(spec.clone(), 7).unwrap();
        let (loss, grads) = loss_and_grads(&net, &random_samples(&spec, 3, 8)).unwrap();
        assert!(loss > 0.0);
        for (group, names) in layer_groups(&net.params) {
            let live = names
                .iter()
                .any(|n| grads[n].data().iter().any(|&g| g != 0.0));
            assert!(live, "{v}: no gradient reaches {group}");
        }
    }
}

#[test]
fn batches_depend_only_on_seed_and_step() {
    let data = toy_data(3);
    let spec = toy_spec(Variant::RcdNet);
    let pattern = spec.pattern().unwrap();
    let cfg = toy_cfg(1);
    let a = sample_batch(&data, &spec, &pattern, &cfg, 5).unwrap();
    assert_eq!(a, sample_batch(&data, &spec, &pattern, &cfg, 5).unwrap());
    assert_ne!(a, sample_batch(&data, &spec, &pattern, &cfg, 6).unwrap());
    assert!(a.iter().all(|s| s.past.len() == 2 && s.pilot.dims() == (2, 2)));
}

#[test]
fn window_longer_than_data_is_rejected() {
    let data = toy_data(4);
    let spec = cdlab::nn::ModelSpec {
        past: 8,
        ..toy_spec(Variant::RcdNet)
    };
    assert!(train(spec, &data, &toy_cfg(1)).is_err());
}

#[test]
fn mismatched_dims_are_rejected() {
    let data = toy_data(5);
    let spec = cdlab::nn::ModelSpec {
        n_t: 8,
        n_c: 8,
        ..toy_spec(Variant::RcdNet)
    };
    assert!(train(spec, &data, &toy_cfg(1)).is_err());
}

#[test]
fn exploding_loss_aborts_with_step() {
    let data = toy_data(6);
    let spec = toy_spec(Variant::Prediction);
    let mut state = TrainState::fresh(spec, 0).unwrap();
    let w = state.network.params.get_mut("recover.w").unwrap();
    w.data_mut()[0] = f64::INFINITY;
    let err = run(&mut state, &data, &toy_cfg(3), 3, |_| Ok(())).unwrap_err();
    assert!(matches!(err, Error::NonFinite { step: 1, .. }), "{err}");
}

#[test]
fn trace_csv_has_one_row_per_step() {
    let t = train(toy_spec(Variant::Estimation), &toy_data(7), &toy_cfg(5)).unwrap();
    let csv = trace_csv(&t.trace);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "step,lr,loss");
    assert_eq!(lines.len(), 6);
    assert!(lines[1].starts_with("1,"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn loss_is_nonnegative_and_zero_only_on_match(seed in 0u64..10_000, eps in 1e-6..1.0f64) {
        let mut r = rng(seed);
        let t: Vec<ChannelMatrix> = (0..3).map(|_| random_matrix(&mut r, 2, 3)).collect();
        prop_assert_eq!(mse(&t, &t).unwrap(), 0.0);
        let mut p = t.clone();
        p[1].entries_mut()[2] += Complex64::new(eps, 0.0);
        prop_assert!(mse(&p, &t).unwrap() > 0.0);
    }

    #[test]
    fn schedule_is_continuous_at_crossover(w in 1usize..1024, warm in 1u64..10_000) {
        let s = warm as f64;
        let up = (w as f64).powf(-0.5) * s * s.powf(-1.5);
        let down = (w as f64).powf(-0.5) * s.powf(-0.5);
        prop_assert!((up - down).abs() <= 1e-15 * down);
        prop_assert_eq!(lr_at(warm, w, warm).unwrap(), down);
        prop_assert_eq!(lr_at(warm, w, warm).unwrap(), (w as f64).powf(-0.5) * (s / s) * s.powf(-0.5));
    }
}
