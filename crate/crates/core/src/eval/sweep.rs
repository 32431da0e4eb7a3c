use rayon::prelude::*;

use crate::channel::{DatasetBundle, DisturbanceSpec, Mobility};
use crate::error::{invalid, Result};
use crate::nn::{Model, ModelSpec};
use crate::seed;

use super::report::{evaluate, DisturbMode, EvalReport, InputNoise, Labels};

/// Supplies the model for one sweep cell, by training or by loading a
/// checkpoint.
pub type Provider<'a> = dyn Fn(&ModelSpec) -> Result<Model> + Sync + 'a;

/// Default disturbance grid.
pub const SIGMA_GRID: [f64; 8] = [0.0, 0.02, 0.04, 0.08, 0.16, 0.32, 0.64, 1.28];

const TEST_SETS: [Mobility; 2] = [Mobility::Mobile, Mobility::QuasiStatic];

fn both_sets(model: &Model, bundle: &DatasetBundle, noise: &InputNoise, labels: &Labels) -> Result<Vec<EvalReport>> {
    TEST_SETS
        .iter()
        .map(|&m| evaluate(model, bundle.test_set(m), noise, labels))
        .collect()
}

fn flatten(cells: Vec<Result<Vec<EvalReport>>>) -> Result<Vec<EvalReport>> {
    Ok(cells.into_iter().collect::<Result<Vec<_>>>()?.into_iter().flatten().collect())
}

/// One model per `(size, spec)` with the pilot resized, each scored on
/// both test sets. Rows come out size-major, then spec, then test set.
pub fn sweep_pilot_size(
    provider: &Provider,
    specs: &[ModelSpec],
    bundle: &DatasetBundle,
    sizes: &[(usize, usize)],
    seed: u64,
) -> Result<Vec<EvalReport>> {
    let mut cells = Vec::new();
    for &(pt, pc) in sizes {
        for spec in specs {
            if pt == 0 || pc == 0 || spec.n_t % pt != 0 || spec.n_c % pc != 0 {
                return Err(invalid(format!(
                    "pilot size {pt}x{pc} does not divide the {}x{} channel",
                    spec.n_t, spec.n_c
                )));
            }
            let mut s = spec.clone();
            s.pilot_t = pt;
            s.pilot_c = pc;
            s.validate()?;
            cells.push(s);
        }
    }
    let out = cells
        .par_iter()
        .map(|s| {
            let model = provider(s)?;
            let labels = Labels::new("pilot-size", format!("{}x{}", s.pilot_t, s.pilot_c), seed);
            both_sets(&model, bundle, &InputNoise::none(), &labels)
        })
        .collect();
    flatten(out)
}

/// One model per past length, each scored on both test sets.
pub fn sweep_past_length(
    provider: &Provider,
    spec: &ModelSpec,
    bundle: &DatasetBundle,
    lengths: &[usize],
    seed: u64,
) -> Result<Vec<EvalReport>> {
    let shortest = TEST_SETS.iter().map(|&m| bundle.test_set(m).shortest()).min().unwrap_or(0);
    if let Some(&n) = lengths.iter().find(|&&n| n + 1 > shortest) {
        return Err(invalid(format!(
            "past length {n} needs {} slots per test sequence, the shortest has {shortest}",
            n + 1
        )));
    }
    let specs = lengths
        .iter()
        .map(|&n| {
            let mut s = spec.clone();
            s.past = n;
            s.validate().map(|_| s)
        })
        .collect::<Result<Vec<_>>>()?;
    let out = specs
        .par_iter()
        .map(|s| {
            let model = provider(s)?;
            both_sets(&model, bundle, &InputNoise::none(), &Labels::new("past-length", s.past.to_string(), seed))
        })
        .collect();
    flatten(out)
}

/// Every model at every σ on both test sets. All cells share one noise
/// stream, so the σ = 0 cell is the clean evaluation exactly and larger σ
/// scale the same draws.
pub fn sweep_disturbance(
    models: &[Model],
    bundle: &DatasetBundle,
    sigmas: &[f64],
    mode: DisturbMode,
    seed: u64,
) -> Result<Vec<EvalReport>> {
    let noise_seed = seed::derive(seed, "disturbance", 0);
    let mut cells = Vec::new();
    for &sigma in sigmas {
        let spec = DisturbanceSpec::new(sigma)?;
        for model in models {
            cells.push((spec, model));
        }
    }
    let out = cells
        .par_iter()
        .map(|(spec, model)| {
            let noise = InputNoise {
                spec: *spec,
                mode,
                seed: noise_seed,
            };
            let labels = Labels::new(format!("disturbance-{mode}"), spec.sigma().to_string(), seed);
            both_sets(model, bundle, &noise, &labels)
        })
        .collect();
    flatten(out)
}
