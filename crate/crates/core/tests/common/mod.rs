//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use std::collections::BTreeMap;

use cdlab::channel::ChannelMatrix;
use cdlab::nn::{init_params, Bound, ModelSpec, ParameterSet, Sample, Variant};
use cdlab_tensor::gradcheck::max_relative_error;
use cdlab_tensor::{Tape, Tensor, Var};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Toy dims used by every gradient check.
pub fn toy_spec(variant: Variant) -> ModelSpec {
    ModelSpec {
        variant,
        n_t: 4,
        n_c: 4,
        pilot_t: 2,
        pilot_c: 2,
        past: 2,
        k1: 1,
        k2: 1,
        k3: 1,
        width: 16,
        heads: 4,
        ff_width: 32,
        estimation_depth: 1,
    }
}

pub fn random_matrix(r: &mut impl Rng, n_t: usize, n_c: usize) -> ChannelMatrix {
    ChannelMatrix::from_fn(n_t, n_c, |_, _| Complex64::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)))
}

pub fn random_tensor(r: &mut impl Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| r.random_range(-1.0..1.0))
}

/// Initialized parameters with every entry moved off its structured
/// starting value (identity, zeros, ones), so no check sits on a special
/// point.
pub fn random_params(spec: &ModelSpec, seed: u64) -> ParameterSet {
    let base = init_params(spec, seed).unwrap();
    let mut r = rng(seed ^ 0x5eed);
    let tensors: Vec<(String, Tensor)> = base
        .iter()
        .map(|(n, t)| {
            let mut t = t.clone();
            for v in t.data_mut() {
                *v += r.random_range(-0.3..0.3);
            }
            (n.clone(), t)
        })
        .collect();
    ParameterSet::from_tensors(tensors, seed)
}

pub fn random_samples(spec: &ModelSpec, batch: usize, seed: u64) -> Vec<Sample> {
    let mut r = rng(seed);
    (0..batch)
        .map(|_| Sample {
            past: (0..spec.past).map(|_| random_matrix(&mut r, spec.n_t, spec.n_c)).collect(),
            pilot: random_matrix(&mut r, spec.pilot_t, spec.pilot_c),
            truth: Some(random_matrix(&mut r, spec.n_t, spec.n_c)),
        })
        .collect()
}

/// Weighted sum `Σ y ⊙ w` with a fixed random `w`, turning any output into
/// a scalar whose gradient exercises every output entry.
pub fn probe(tape: &mut Tape, y: Var, seed: u64) -> Var {
    let w = random_tensor(&mut rng(seed), tape.shape(y));
    let w = tape.constant(w);
    let p = tape.mul(y, w).unwrap();
    tape.sum(p).unwrap()
}

/// Worst relative error between tape gradients and central differences of
/// the scalar `f` over the named tensors of `params`. At most `per_tensor`
/// entries per tensor are perturbed (spread evenly), which keeps every
/// tensor covered at bounded cost.
pub fn gradcheck<F>(params: &ParameterSet, per_tensor: usize, f: F) -> f64
where
    F: Fn(&mut Tape, &Bound) -> Var,
{
    let mut tape = Tape::new();
    let bound = Bound::new(&mut tape, params, true);
    let loss = f(&mut tape, &bound);
    let grads = tape.backward(loss).unwrap();
    let analytic: BTreeMap<String, Tensor> = bound
        .iter()
        .map(|(n, &v)| (n.clone(), grads.tensor(v).unwrap()))
        .collect();

    let eval = |p: &ParameterSet| -> f64 {
        let mut tape = Tape::new();
        let bound = Bound::new(&mut tape, p, false);
        let y = f(&mut tape, &bound);
        tape.value(y).item()
    };
    let h = 1e-6;
    let mut worst = 0.0f64;
    let mut work = params.clone();
    for (name, t) in params.iter() {
        let n = t.numel();
        let stride = (n / per_tensor.max(1)).max(1);
        for i in (0..n).step_by(stride).take(per_tensor) {
            let orig = t.data()[i];
            work.get_mut(name).unwrap().data_mut()[i] = orig + h;
            let plus = eval(&work);
            work.get_mut(name).unwrap().data_mut()[i] = orig - h;
            let minus = eval(&work);
            work.get_mut(name).unwrap().data_mut()[i] = orig;
            let numeric = Tensor::scalar((plus - minus) / (2.0 * h));
            let a = Tensor::scalar(analytic[name].data()[i]);
            worst = worst.max(max_relative_error(&[a], &[numeric], 1e-3));
        }
    }
    worst
}

/// Adds `x.re`/`x.im` input tensors to a parameter set so input gradients
/// are checked alongside the weights.
pub fn with_inputs(params: &ParameterSet, inputs: &[(&str, Tensor)]) -> ParameterSet {
    let mut all: Vec<(String, Tensor)> = params.iter().map(|(n, t)| (n.clone(), t.clone())).collect();
    all.extend(inputs.iter().map(|(n, t)| (n.to_string(), t.clone())));
    ParameterSet::from_tensors(all, params.seed)
}

// Parameter layouts of the individual layers, named as the layers expect.

pub fn set(entries: Vec<(&str, Vec<usize>)>, seed: u64) -> ParameterSet {
    let mut r = rng(seed);
    ParameterSet::from_tensors(
        entries.into_iter().map(|(n, s)| (n.to_string(), random_tensor(&mut r, &s))),
        seed,
    )
}

pub fn linear_defs(name: &str, out: usize, inp: usize) -> Vec<(String, Vec<usize>)> {
    vec![(format!("{name}.w"), vec![out, inp]), (format!("{name}.b"), vec![out])]
}

pub fn clinear_defs(name: &str, out: usize, inp: usize) -> Vec<(String, Vec<usize>)> {
    ["w.re", "w.im"]
        .iter()
        .map(|p| (format!("{name}.{p}"), vec![out, inp]))
        .chain(["b.re", "b.im"].iter().map(|p| (format!("{name}.{p}"), vec![out])))
        .collect()
}

pub fn token_mlp_defs(name: &str, len: usize) -> Vec<(String, Vec<usize>)> {
    let mut d = vec![
        (format!("{name}.norm.g"), vec![2 * len]),
        (format!("{name}.norm.b"), vec![2 * len]),
    ];
    d.extend(clinear_defs(&format!("{name}.fc1"), 2 * len, len));
    d.extend(clinear_defs(&format!("{name}.fc2"), len, 2 * len));
    d
}

pub fn owned_set(defs: Vec<(String, Vec<usize>)>, seed: u64) -> ParameterSet {
    let mut r = rng(seed);
    ParameterSet::from_tensors(defs.into_iter().map(|(n, s)| {
        let t = random_tensor(&mut r, &s);
        (n, t)
    }), seed)
}

pub fn attention_defs(width: usize, ff: usize, depth: usize) -> Vec<(String, Vec<usize>)> {
    let mut d = Vec::new();
    for k in 0..depth {
        let p = format!("attn.b{k}");
        for ln in ["ln1", "ln2"] {
            d.push((format!("{p}.{ln}.g"), vec![width]));
            d.push((format!("{p}.{ln}.b"), vec![width]));
        }
        for m in ["q", "k", "v", "o"] {
            d.extend(linear_defs(&format!("{p}.{m}"), width, width));
        }
        d.extend(linear_defs(&format!("{p}.ff1"), ff, width));
        d.extend(linear_defs(&format!("{p}.ff2"), width, ff));
    }
    d
}

pub fn lstm_defs(width: usize) -> Vec<(String, Vec<usize>)> {
    (0..2)
        .flat_map(|l| {
            vec![
                (format!("lstm.l{l}.w_ih"), vec![4 * width, width]),
                (format!("lstm.l{l}.w_hh"), vec![4 * width, width]),
                (format!("lstm.l{l}.b"), vec![4 * width]),
            ]
        })
        .collect()
}

pub fn cmixer_defs(inp: (usize, usize), out: (usize, usize), depth: usize) -> Vec<(String, Vec<usize>)> {
    let mut defs = clinear_defs("m.in.ant", out.0, inp.0);
    defs.extend(clinear_defs("m.in.sub", out.1, inp.1));
    for k in 0..depth {
        defs.extend(token_mlp_defs(&format!("m.l{k}.ant"), out.0));
        defs.extend(token_mlp_defs(&format!("m.l{k}.sub"), out.1));
    }
    defs.extend(clinear_defs("m.out.ant", out.0, out.0));
    defs.extend(clinear_defs("m.out.sub", out.1, out.1));
    defs
}
