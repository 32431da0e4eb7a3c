mod common;

use cdlab::channel::ChannelMatrix;
use cdlab::nn::layers::{attention_block, attention_encoder, cmixer, cmixer_layer, layer_norm, linear, lstm};
use cdlab::nn::{complex_batch, init_params, Bound, ModelSpec, Network, ParameterSet, Sample, Variant};
use cdlab_tensor::{ComplexTensor, Tape, Tensor};
use common::{
    attention_defs, cmixer_defs, gradcheck, lstm_defs, owned_set, probe, random_params, random_samples, random_tensor,
    rng, set, toy_spec, token_mlp_defs, with_inputs,
};
use num_complex::Complex64;

/// Full networks at toy dims.
const GRAD_TOL: f64 = 1e-4;
/// Single layers, checked over ten seeds each.
const LAYER_TOL: f64 = 1e-5;
const LAYER_SEEDS: u64 = 10;

fn over_seeds(name: &str, check: impl Fn(u64) -> f64) {
    for seed in 0..LAYER_SEEDS {
        let err = check(seed);
        assert!(err < LAYER_TOL, "{name} seed {seed}: {err}");
    }
}

#[test]
fn linear_gradients_match_differences() {
    over_seeds("linear", |seed| {
        let p = set(vec![("l.w", vec![3, 5]), ("l.b", vec![3]), ("x", vec![4, 5])], seed);
        gradcheck(&p, usize::MAX, |t, b| {
            let y = linear(t, b, "l", b.real("x").unwrap()).unwrap();
            probe(t, y, seed + 100)
        })
    });
}

#[test]
fn layer_norm_gradients_match_differences() {
    over_seeds("layer_norm", |seed| {
        let p = set(vec![("n.g", vec![6]), ("n.b", vec![6]), ("x", vec![3, 6])], seed);
        gradcheck(&p, usize::MAX, |t, b| {
            let y = layer_norm(t, b, "n", b.real("x").unwrap()).unwrap();
            probe(t, y, seed + 100)
        })
    });
}

#[test]
fn cmixer_layer_gradients_match_differences() {
    over_seeds("cmixer_layer", |seed| {
        let mut defs = token_mlp_defs("m.l0.ant", 4);
        defs.extend(token_mlp_defs("m.l0.sub", 3));
        defs.push(("x.re".into(), vec![2, 4, 3]));
        defs.push(("x.im".into(), vec![2, 4, 3]));
        let p = owned_set(defs, seed);
        gradcheck(&p, 12, |t, b| {
            let y = cmixer_layer(t, b, "m", 0, b.complex("x").unwrap()).unwrap();
            let y = t.concat_last(&[y.re, y.im]).unwrap();
            probe(t, y, seed + 100)
        })
    });
}

#[test]
fn two_layer_cmixer_gradients_match_differences() {
    over_seeds("cmixer", |seed| {
        let mut defs = cmixer_defs((2, 2), (4, 4), 2);
        defs.push(("x.re".into(), vec![2, 2, 2]));
        defs.push(("x.im".into(), vec![2, 2, 2]));
        let p = owned_set(defs, seed);
        gradcheck(&p, 6, |t, b| {
            let y = cmixer(t, b, "m", 2, b.complex("x").unwrap()).unwrap();
            let y = t.concat_last(&[y.re, y.im]).unwrap();
            probe(t, y, seed + 100)
        })
    });
}

#[test]
fn lstm_gradients_match_differences() {
    over_seeds("lstm", |seed| {
        let mut defs = lstm_defs(4);
        defs.push(("x".into(), vec![3 * 2, 4]));
        let p = owned_set(defs, seed);
        gradcheck(&p, 16, |t, b| {
            let y = lstm(t, b, b.real("x").unwrap(), 3).unwrap();
            probe(t, y, seed + 100)
        })
    });
}

#[test]
fn attention_gradients_match_differences() {
    over_seeds("attention_block", |seed| {
        let mut defs = attention_defs(8, 12, 1);
        defs.push(("x".into(), vec![2 * 3, 8]));
        let p = owned_set(defs, seed);
        gradcheck(&p, 16, |t, b| {
            let y = attention_block(t, b, 0, b.real("x").unwrap(), 2, 2).unwrap();
            probe(t, y, seed + 100)
        })
    });
}

fn full_model_check(variant: Variant) {
    let spec = toy_spec(variant);
    let params = random_params(&spec, 20);
    let samples = random_samples(&spec, 2, 21);
    let net = Network::new(spec.clone(), params.clone()).unwrap();
    let err = gradcheck(&params, 6, |t, b| {
        let y = net.record(t, b, &samples).unwrap();
        let y = t.concat_last(&[y.re, y.im]).unwrap();
        probe(t, y, 22)
    });
    assert!(err < GRAD_TOL, "{variant}: {err}");
}

#[test]
fn rcdnet_gradients_match_differences() {
    full_model_check(Variant::RcdNet);
}

#[test]
fn acdnet_gradients_match_differences() {
    full_model_check(Variant::AcdNet);
}

#[test]
fn baseline_gradients_match_differences() {
    full_model_check(Variant::Estimation);
    full_model_check(Variant::Prediction);
}

#[test]
fn input_gradients_reach_the_pilot() {
    // The pilot enters as a constant in `record`; check the input side
    // through the raw forward with the pilot bound as a parameter.
    let spec = toy_spec(Variant::RcdNet);
    let mut r = rng(30);
    let base = random_params(&spec, 31);
    let p = with_inputs(
        &base,
        &[
            ("pilot.re", random_tensor(&mut r, &[2, 2, 2])),
            ("pilot.im", random_tensor(&mut r, &[2, 2, 2])),
            ("h0.re", random_tensor(&mut r, &[2, 4, 4])),
            ("h0.im", random_tensor(&mut r, &[2, 4, 4])),
            ("h1.re", random_tensor(&mut r, &[2, 4, 4])),
            ("h1.im", random_tensor(&mut r, &[2, 4, 4])),
        ],
    );
    let err = gradcheck(&p, 6, |t, b| {
        let past = [b.complex("h0").unwrap(), b.complex("h1").unwrap()];
        let y = cdlab::nn::forward(t, b, &spec, &past, Some(b.complex("pilot").unwrap())).unwrap();
        let y = t.concat_last(&[y.re, y.im]).unwrap();
        probe(t, y, 32)
    });
    assert!(err < GRAD_TOL, "{err}");
}

// Plain-arithmetic references.

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh())
}

fn affine(w: &Tensor, b: &Tensor, x: &[f64]) -> Vec<f64> {
    let (out, inp) = (w.shape()[0], w.shape()[1]);
    (0..out)
        .map(|i| b.data()[i] + (0..inp).map(|j| w.data()[i * inp + j] * x[j]).sum::<f64>())
        .collect()
}

fn matvec(w: &Tensor, x: &[f64]) -> Vec<f64> {
    affine(w, &Tensor::zeros(vec![w.shape()[0]]), x)
}

fn normalize(x: &[f64], g: &Tensor, b: &Tensor) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let r = 1.0 / (var + 1e-5).sqrt();
    x.iter()
        .enumerate()
        .map(|(i, v)| (v - mean) * r * g.data()[i] + b.data()[i])
        .collect()
}

fn run_tape(p: &ParameterSet, f: impl FnOnce(&mut Tape, &Bound) -> cdlab_tensor::Var) -> Tensor {
    let mut tape = Tape::new();
    let b = Bound::new(&mut tape, p, false);
    let y = f(&mut tape, &b);
    tape.value(y).clone()
}

#[test]
fn lstm_matches_unrolled_reference() {
    let (w, batch, steps) = (3, 2, 4);
    let mut defs = lstm_defs(w);
    defs.push(("x".into(), vec![steps * batch, w]));
    let p = owned_set(defs, 40);
    let got = run_tape(&p, |t, b| lstm(t, b, b.real("x").unwrap(), steps).unwrap());

    let x = p.get("x").unwrap();
    for n in 0..batch {
        let mut input: Vec<Vec<f64>> = (0..steps)
            .map(|s| x.data()[(s * batch + n) * w..(s * batch + n + 1) * w].to_vec())
            .collect();
        for l in 0..2 {
            let w_ih = p.get(&format!("lstm.l{l}.w_ih")).unwrap();
            let w_hh = p.get(&format!("lstm.l{l}.w_hh")).unwrap();
            let bias = p.get(&format!("lstm.l{l}.b")).unwrap();
            let (mut h, mut c) = (vec![0.0; w], vec![0.0; w]);
            let mut outs = Vec::new();
            for xt in &input {
                let a = affine(w_ih, bias, xt);
                let r = matvec(w_hh, &h);
                let g: Vec<f64> = a.iter().zip(&r).map(|(a, r)| a + r).collect();
                for k in 0..w {
                    let i = sigmoid(g[k]);
                    let f = sigmoid(g[w + k]);
                    let cand = g[2 * w + k].tanh();
                    let o = sigmoid(g[3 * w + k]);
                    c[k] = f * c[k] + i * cand;
                    h[k] = o * c[k].tanh();
                }
                outs.push(h.clone());
            }
            input = outs;
        }
        let last = input.last().unwrap();
        for k in 0..w {
            let v = got.data()[n * w + k];
            assert!((v - last[k]).abs() < 1e-12, "batch {n} unit {k}: {v} vs {}", last[k]);
        }
    }
}

#[test]
fn single_token_attention_is_value_path() {
    let (w, ff, batch) = (4, 6, 3);
    let mut defs = attention_defs(w, ff, 1);
    defs.push(("x".into(), vec![batch, w]));
    let p = owned_set(defs, 41);
    let got = run_tape(&p, |t, b| attention_block(t, b, 0, b.real("x").unwrap(), batch, 2).unwrap());
    let g = |n: &str| p.get(&format!("attn.b0.{n}")).unwrap();
    let x = p.get("x").unwrap();
    for n in 0..batch {
        let xr = &x.data()[n * w..(n + 1) * w];
        let y = normalize(xr, g("ln1.g"), g("ln1.b"));
        let v = affine(g("v.w"), g("v.b"), &y);
        let att = affine(g("o.w"), g("o.b"), &v);
        let x1: Vec<f64> = xr.iter().zip(&att).map(|(a, b)| a + b).collect();
        let y2 = normalize(&x1, g("ln2.g"), g("ln2.b"));
        let h: Vec<f64> = affine(g("ff1.w"), g("ff1.b"), &y2).into_iter().map(gelu).collect();
        let out = affine(g("ff2.w"), g("ff2.b"), &h);
        for k in 0..w {
            let want = x1[k] + out[k];
            assert!((got.data()[n * w + k] - want).abs() < 1e-12);
        }
    }
}

#[test]
fn attention_is_token_permutation_equivariant() {
    let (w, tokens, batch) = (8, 4, 2);
    let mut defs = attention_defs(w, 16, 2);
    defs.push(("x".into(), vec![batch * tokens, w]));
    let p = owned_set(defs, 42);
    let perm = [2, 0, 3, 1];
    let x = p.get("x").unwrap().clone();
    let mut shuffled = x.clone();
    for b in 0..batch {
        for (t, &src) in perm.iter().enumerate() {
            let dst = (b * tokens + t) * w;
            let from = (b * tokens + src) * w;
            shuffled.data_mut()[dst..dst + w].copy_from_slice(&x.data()[from..from + w]);
        }
    }
    let mut q = p.clone();
    *q.get_mut("x").unwrap() = shuffled;
    let y = run_tape(&p, |t, b| attention_encoder(t, b, b.real("x").unwrap(), batch, 2, 2).unwrap());
    let ys = run_tape(&q, |t, b| attention_encoder(t, b, b.real("x").unwrap(), batch, 2, 2).unwrap());
    for b in 0..batch {
        for (t, &src) in perm.iter().enumerate() {
            for k in 0..w {
                let a = ys.data()[(b * tokens + t) * w + k];
                let e = y.data()[(b * tokens + src) * w + k];
                assert!((a - e).abs() < 1e-12);
            }
        }
    }
}

fn ctensor(p: &ParameterSet, name: &str, i: usize, j: usize) -> Complex64 {
    let re = p.get(&format!("{name}.re")).unwrap();
    let im = p.get(&format!("{name}.im")).unwrap();
    let cols = re.shape().get(1).copied().unwrap_or(1);
    let k = i * cols + j;
    Complex64::new(re.data()[k], im.data()[k])
}

/// Residual complex MLP on one vector, written out entry by entry.
fn token_mlp_ref(p: &ParameterSet, name: &str, u: &[Complex64]) -> Vec<Complex64> {
    let len = u.len();
    let cat: Vec<f64> = u.iter().map(|z| z.re).chain(u.iter().map(|z| z.im)).collect();
    let n = normalize(
        &cat,
        p.get(&format!("{name}.norm.g")).unwrap(),
        p.get(&format!("{name}.norm.b")).unwrap(),
    );
    let normed: Vec<Complex64> = (0..len).map(|i| Complex64::new(n[i], n[len + i])).collect();
    let h: Vec<Complex64> = (0..2 * len)
        .map(|i| {
            let z = ctensor(p, &format!("{name}.fc1.b"), i, 0)
                + (0..len)
                    .map(|j| ctensor(p, &format!("{name}.fc1.w"), i, j) * normed[j])
                    .sum::<Complex64>();
            Complex64::new(gelu(z.re), gelu(z.im))
        })
        .collect();
    (0..len)
        .map(|i| {
            u[i] + ctensor(p, &format!("{name}.fc2.b"), i, 0)
                + (0..2 * len)
                    .map(|j| ctensor(p, &format!("{name}.fc2.w"), i, j) * h[j])
                    .sum::<Complex64>()
        })
        .collect()
}

#[test]
fn cmixer_layer_matches_reference() {
    let (b, nt, nc) = (2, 4, 3);
    let mut defs = token_mlp_defs("m.l0.ant", nt);
    defs.extend(token_mlp_defs("m.l0.sub", nc));
    let p = owned_set(defs, 43);
    let mut r = rng(44);
    let mats: Vec<ChannelMatrix> = (0..b).map(|_| common::random_matrix(&mut r, nt, nc)).collect();
    let input = complex_batch(&mats.iter().collect::<Vec<_>>()).unwrap();
    let mut tape = Tape::new();
    let bound = Bound::new(&mut tape, &p, false);
    let x = tape.complex_constant(input);
    let y = cmixer_layer(&mut tape, &bound, "m", 0, x).unwrap();
    let got: ComplexTensor = tape.complex_value(y);

    for (k, m) in mats.iter().enumerate() {
        let mut cur = m.clone();
        for c in 0..nc {
            let col: Vec<Complex64> = (0..nt).map(|a| cur.get(a, c)).collect();
            for (a, z) in token_mlp_ref(&p, "m.l0.ant", &col).into_iter().enumerate() {
                cur.set(a, c, z);
            }
        }
        for a in 0..nt {
            let row: Vec<Complex64> = (0..nc).map(|c| cur.get(a, c)).collect();
            for (c, z) in token_mlp_ref(&p, "m.l0.sub", &row).into_iter().enumerate() {
                cur.set(a, c, z);
            }
        }
        for a in 0..nt {
            for c in 0..nc {
                let i = (k * nt + a) * nc + c;
                let z = Complex64::new(got.re.data()[i], got.im.data()[i]);
                assert!((z - cur.get(a, c)).norm() < 1e-12);
            }
        }
    }
}

#[test]
fn init_follows_fan_in_and_identity_rules() {
    let spec = ModelSpec::new(Variant::RcdNet);
    let p = init_params(&spec, 7).unwrap();
    let std = |t: &Tensor| {
        let n = t.numel() as f64;
        let m = t.data().iter().sum::<f64>() / n;
        (t.data().iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt()
    };
    // U(±a) has std a/√3.
    let w = p.get("lstm.l0.w_ih").unwrap();
    let want = 1.0 / (spec.width as f64).sqrt() / 3f64.sqrt();
    assert!((std(w) / want - 1.0).abs() < 0.02, "{} vs {want}", std(w));
    let w = p.get("reduce.w").unwrap();
    let want = 1.0 / (spec.flat_len() as f64).sqrt() / 3f64.sqrt();
    assert!((std(w) / want - 1.0).abs() < 0.03);
    let w = p.get("post.l0.ant.fc1.w.re").unwrap();
    assert!(w.data().iter().all(|v| v.abs() <= 1.0 / (2.0 * spec.n_t as f64).sqrt()));
    assert_eq!(p.get("post.out.sub.w.re").unwrap(), &Tensor::eye(spec.n_c));
    assert!(p.get("post.out.sub.w.im").unwrap().data().iter().all(|&v| v == 0.0));
    assert!(p.get("lstm.l1.b").unwrap().data().iter().all(|&v| v == 0.0));
    assert!(p.get("post.l2.sub.norm.g").unwrap().data().iter().all(|&v| v == 1.0));
    // Same seed, same parameters; another seed differs.
    assert_eq!(p, init_params(&spec, 7).unwrap());
    assert_ne!(p.get("reduce.w").unwrap(), init_params(&spec, 8).unwrap().get("reduce.w").unwrap());
}

#[test]
fn every_variant_outputs_full_channels() {
    for v in Variant::ALL {
        let spec = toy_spec(v);
        let net = Network::init(spec.clone(), 3).unwrap();
        let out = net.infer_batch(&random_samples(&spec, 5, 4)).unwrap();
        assert_eq!(out.len(), 5);
        assert!(out.iter().all(|m| m.dims() == (4, 4)));
        assert!(out.iter().flat_map(|m| m.entries()).all(|z| z.re.is_finite() && z.im.is_finite()));
    }
}

#[test]
fn estimation_accepts_the_full_grid_as_pilot() {
    let spec = ModelSpec {
        pilot_t: 4,
        pilot_c: 4,
        ..toy_spec(Variant::Estimation)
    };
    let net = Network::init(spec.clone(), 1).unwrap();
    let s = random_samples(&spec, 2, 2);
    assert_eq!(net.infer_batch(&s).unwrap()[0].dims(), (4, 4));
}

#[test]
fn batch_entries_are_independent() {
    for v in [Variant::RcdNet, Variant::AcdNet] {
        let spec = toy_spec(v);
        let net = Network::new(spec.clone(), random_params(&spec, 50)).unwrap();
        let s = random_samples(&spec, 4, 51);
        let together = net.infer_batch(&s).unwrap();
        for (i, one) in s.iter().enumerate() {
            let alone = net.infer_batch(std::slice::from_ref(one)).unwrap();
            for (a, b) in alone[0].entries().iter().zip(together[i].entries()) {
                assert!((a - b).norm() < 1e-12);
            }
        }
    }
}

#[test]
fn window_and_pilot_shapes_are_checked() {
    let spec = toy_spec(Variant::RcdNet);
    let net = Network::init(spec.clone(), 1).unwrap();
    let mut s = random_samples(&spec, 1, 1);
    s[0].past.pop();
    assert!(net.infer_batch(&s).is_err());
    let mut s = random_samples(&spec, 1, 1);
    s[0].pilot = ChannelMatrix::zeros(4, 2);
    assert!(net.infer_batch(&s).is_err());
}

#[test]
fn checkpoint_round_trips_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    for v in Variant::ALL {
        let spec = toy_spec(v);
        let net = Network::new(spec.clone(), random_params(&spec, 60)).unwrap();
        let path = dir.path().join(format!("{v}.ckpt"));
        net.save(&path).unwrap();
        let back = Network::load(&path).unwrap();
        assert_eq!(back, net);
        let s = random_samples(&spec, 2, 61);
        assert_eq!(back.infer_batch(&s).unwrap(), net.infer_batch(&s).unwrap());
    }
}

#[test]
fn attention_costs_more_than_recurrence_at_default_scale() {
    let rc = Network::init(ModelSpec::new(Variant::RcdNet), 0).unwrap();
    let ac = Network::init(ModelSpec::new(Variant::AcdNet), 0).unwrap();
    assert!(ac.cost().unwrap() > rc.cost().unwrap());
}

#[test]
fn sample_from_window_splits_past_and_present() {
    let spec = toy_spec(Variant::RcdNet);
    let mut r = rng(70);
    let window: Vec<ChannelMatrix> = (0..3).map(|i| common::random_matrix(&mut r, 4, 4).with_slot(i)).collect();
    let s = Sample::from_window(&window, &spec.pattern().unwrap()).unwrap();
    assert_eq!(s.past, window[..2].to_vec());
    assert_eq!(s.truth.as_ref(), Some(&window[2]));
    assert_eq!(s.pilot.dims(), (2, 2));
}

#[test]
fn zero_lstm_outputs_zero() {
    let mut defs = lstm_defs(3);
    defs.push(("x".into(), vec![4 * 2, 3]));
    let mut p = owned_set(defs, 80);
    for l in 0..2 {
        for n in ["w_ih", "w_hh", "b"] {
            p.get_mut(&format!("lstm.l{l}.{n}")).unwrap().data_mut().fill(0.0);
        }
    }
    let y = run_tape(&p, |t, b| lstm(t, b, b.real("x").unwrap(), 4).unwrap());
    assert!(y.data().iter().all(|&v| v == 0.0));
}

#[test]
fn single_step_lstm_is_one_cell_per_layer() {
    let w = 3;
    let mut defs = lstm_defs(w);
    defs.push(("x".into(), vec![1, w]));
    let p = owned_set(defs, 81);
    let y = run_tape(&p, |t, b| lstm(t, b, b.real("x").unwrap(), 1).unwrap());
    let mut h = p.get("x").unwrap().data().to_vec();
    for l in 0..2 {
        // Zero state: the forget gate and recurrent weights drop out.
        let g = affine(
            p.get(&format!("lstm.l{l}.w_ih")).unwrap(),
            p.get(&format!("lstm.l{l}.b")).unwrap(),
            &h,
        );
        h = (0..w)
            .map(|k| sigmoid(g[3 * w + k]) * (sigmoid(g[k]) * g[2 * w + k].tanh()).tanh())
            .collect();
    }
    for k in 0..w {
        assert!((y.data()[k] - h[k]).abs() < 1e-12);
    }
}

#[test]
fn cmixer_with_silent_mixing_is_identity() {
    // Identity projections and zero second-layer weights leave only the
    // residual paths.
    let (nt, nc) = (4, 3);
    let mut p = owned_set(cmixer_defs((nt, nc), (nt, nc), 2), 82);
    for (name, dim) in [("m.in.ant", nt), ("m.in.sub", nc), ("m.out.ant", nt), ("m.out.sub", nc)] {
        *p.get_mut(&format!("{name}.w.re")).unwrap() = Tensor::eye(dim);
        for part in ["w.im", "b.re", "b.im"] {
            p.get_mut(&format!("{name}.{part}")).unwrap().data_mut().fill(0.0);
        }
    }
    for k in 0..2 {
        for axis in ["ant", "sub"] {
            for part in ["w.re", "w.im", "b.re", "b.im"] {
                p.get_mut(&format!("m.l{k}.{axis}.fc2.{part}")).unwrap().data_mut().fill(0.0);
            }
        }
    }
    let m = common::random_matrix(&mut rng(83), nt, nc);
    let mut tape = Tape::new();
    let b = Bound::new(&mut tape, &p, false);
    let x = tape.complex_constant(complex_batch(&[&m]).unwrap());
    let y = cmixer(&mut tape, &b, "m", 2, x).unwrap();
    let out = cdlab::nn::matrices_from(&tape.complex_value(y)).unwrap();
    for (a, e) in out[0].entries().iter().zip(m.entries()) {
        assert!((a - e).norm() < 1e-12);
    }
}

#[test]
fn full_pass_equals_stage_composition() {
    use cdlab::nn::{detailed_representation, interaction_attention, interaction_recurrent, preliminary_mapping};
    for v in [Variant::RcdNet, Variant::AcdNet] {
        let spec = toy_spec(v);
        let net = Network::new(spec.clone(), random_params(&spec, 90)).unwrap();
        let samples = random_samples(&spec, 3, 91);
        let whole = net.infer_batch(&samples).unwrap();

        // Each stage on its own tape, handing plain values across.
        let stage = |f: &dyn Fn(&mut Tape, &Bound) -> cdlab_tensor::CVar| {
            let mut tape = Tape::new();
            let b = Bound::new(&mut tape, &net.params, false);
            let y = f(&mut tape, &b);
            tape.complex_value(y)
        };
        let col = |k: usize| complex_batch(&samples.iter().map(|s| &s.past[k]).collect::<Vec<_>>()).unwrap();
        let pilots = complex_batch(&samples.iter().map(|s| &s.pilot).collect::<Vec<_>>()).unwrap();
        let pre = stage(&|t, b| {
            let x = t.complex_constant(pilots.clone());
            preliminary_mapping(t, b, &spec, x).unwrap()
        });
        let mid = stage(&|t, b| {
            let past: Vec<_> = (0..spec.past).map(|k| t.complex_constant(col(k))).collect();
            let x = t.complex_constant(pre.clone());
            if v == Variant::RcdNet {
                interaction_recurrent(t, b, &spec, &past, x).unwrap()
            } else {
                interaction_attention(t, b, &spec, &past, x).unwrap()
            }
        });
        let out = stage(&|t, b| {
            let x = t.complex_constant(mid.clone());
            detailed_representation(t, b, &spec, x).unwrap()
        });
        assert_eq!(cdlab::nn::matrices_from(&out).unwrap(), whole, "{v}");
    }
}

#[test]
fn repeated_inference_is_bit_identical() {
    for v in Variant::ALL {
        let spec = toy_spec(v);
        let a = Network::init(spec.clone(), 5).unwrap();
        let b = Network::init(spec.clone(), 5).unwrap();
        let s = random_samples(&spec, 3, 6);
        assert_eq!(a.infer_batch(&s).unwrap(), b.infer_batch(&s).unwrap());
    }
}

#[test]
fn acdnet_with_equal_embeddings_ignores_token_order() {
    // n = 1 and identical embeddings: the two tokens differ only in content,
    // so swapping past and present swaps the encoder outputs. The recovered
    // present output with inputs swapped must equal the past-token output
    // of the unswapped run.
    let spec = ModelSpec {
        past: 1,
        ..toy_spec(Variant::AcdNet)
    };
    let mut p = random_params(&spec, 95);
    let emb = p.get("emb.past").unwrap().clone();
    *p.get_mut("emb.present").unwrap() = emb;
    let mut r = rng(96);
    let a = common::random_matrix(&mut r, 4, 4);
    let b = common::random_matrix(&mut r, 4, 4);

    let encode = |first: &ChannelMatrix, second: &ChannelMatrix| {
        let mut tape = Tape::new();
        let bound = Bound::new(&mut tape, &p, false);
        let x0 = tape.complex_constant(complex_batch(&[first]).unwrap());
        let x1 = tape.complex_constant(complex_batch(&[second]).unwrap());
        let f0 = cdlab::nn::flatten(&mut tape, x0).unwrap();
        let f1 = cdlab::nn::flatten(&mut tape, x1).unwrap();
        let xs = tape.concat_rows(&[f0, f1]).unwrap();
        let xs = linear(&mut tape, &bound, "reduce", xs).unwrap();
        let xs = tape.add_row(xs, bound.real("emb.past").unwrap()).unwrap();
        let ys = attention_encoder(&mut tape, &bound, xs, 1, spec.heads, spec.k3).unwrap();
        tape.value(ys).clone()
    };
    let ab = encode(&a, &b);
    let ba = encode(&b, &a);
    let w = spec.width;
    for k in 0..w {
        assert!((ab.data()[k] - ba.data()[w + k]).abs() < 1e-12);
        assert!((ab.data()[w + k] - ba.data()[k]).abs() < 1e-12);
    }

    // The assembled interaction reads the present token, which under the
    // swap is the other one.
    let net = Network::new(spec.clone(), p.clone()).unwrap();
    let mut tape = Tape::new();
    let bound = Bound::new(&mut tape, &net.params, false);
    let past = [tape.complex_constant(complex_batch(&[&a]).unwrap())];
    let present = tape.complex_constant(complex_batch(&[&b]).unwrap());
    let y = cdlab::nn::interaction_attention(&mut tape, &bound, &spec, &past, present).unwrap();
    let direct = tape.complex_value(y);
    let mut tape = Tape::new();
    let bound = Bound::new(&mut tape, &net.params, false);
    let last = tape.constant(Tensor::new(vec![1, w], ab.data()[w..].to_vec()).unwrap());
    let v = linear(&mut tape, &bound, "recover", last).unwrap();
    let want = tape.value(v).clone();
    let got: Vec<f64> = direct.re.data().iter().chain(direct.im.data()).copied().collect();
    for (g, e) in got.iter().zip(want.data()) {
        assert!((g - e).abs() < 1e-12);
    }
}
