use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use cdlab_tensor::{CVar, Checkpoint, Tape, Tensor, Var};
use rand::Rng;

use super::{lr_at, Adam};
use crate::channel::{augment_sequence, ChannelSequence, Dataset, PilotPattern};
use crate::error::{invalid, Error, Result};
use crate::nn::{complex_batch, Bound, ModelSpec, Network, ParameterSet, Sample};
use crate::seed;

/// Mean over the batch of the squared error norm, real and imaginary parts
/// both counted.
pub fn mse_loss(tape: &mut Tape, pred: CVar, target: CVar) -> Result<Var> {
    let batch = tape.try_value(pred.re)?.shape().first().copied().unwrap_or(1);
    let dr = tape.sub(pred.re, target.re)?;
    let di = tape.sub(pred.im, target.im)?;
    let sr = tape.mul(dr, dr)?;
    let si = tape.mul(di, di)?;
    let total = tape.add(sr, si)?;
    let total = tape.sum(total)?;
    Ok(tape.scale(total, 1.0 / batch as f64)?)
}

/// Plain-value form of [`mse_loss`].
pub fn mse(pred: &[crate::channel::ChannelMatrix], target: &[crate::channel::ChannelMatrix]) -> Result<f64> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(invalid(format!("{} predictions for {} targets", pred.len(), target.len())));
    }
    let mut total = 0.0;
    for (p, t) in pred.iter().zip(target) {
        if p.dims() != t.dims() {
            return Err(crate::error::shape("mse", format!("{:?} vs {:?}", p.dims(), t.dims())));
        }
        total += p.entries().iter().zip(t.entries()).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>();
    }
    Ok(total / pred.len() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch: usize,
    pub steps: u64,
    pub warmup: u64,
    /// Width entering the learning-rate schedule.
    pub schedule_width: usize,
    pub seed: u64,
    /// Fraction of each batch drawn through sequence augmentation.
    pub augment_ratio: f64,
    /// Checkpoint period in steps; 0 disables periodic checkpoints.
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch: 32,
            steps: 3000,
            warmup: 200,
            schedule_width: 64,
            seed: 0,
            augment_ratio: 0.5,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 || self.warmup == 0 || self.schedule_width == 0 {
            return Err(Error::Config("batch, warmup and schedule width must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.augment_ratio) {
            return Err(Error::Config(format!("augment ratio {} outside [0, 1]", self.augment_ratio)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRow {
    pub step: u64,
    pub lr: f64,
    pub loss: f64,
}

pub fn trace_csv(rows: &[TraceRow]) -> String {
    let mut s = String::from("step,lr,loss\n");
    for r in rows {
        let _ = writeln!(s, "{},{:e},{:e}", r.step, r.lr, r.loss);
    }
    s
}

/// Everything needed to continue training bit-exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub network: Network,
    pub adam: Adam,
    pub trace: Vec<TraceRow>,
}

impl TrainState {
    pub fn fresh(spec: ModelSpec, seed: u64) -> Result<Self> {
        Ok(Self {
            network: Network::init(spec, seed::derive(seed, "init", 0))?,
            adam: Adam::default(),
            trace: Vec::new(),
        })
    }

    pub fn step(&self) -> u64 {
        self.adam.step_count()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = self.network.to_checkpoint();
        ck.manifest.push_str(&format!("step={}\n", self.step()));
        for (name, (m, v)) in self.adam.all_moments() {
            let shape = self.network.params.get(name).map(|t| t.shape().to_vec()).unwrap_or(vec![m.len()]);
            ck.push(format!("adam.m/{name}"), Tensor::new(shape.clone(), m.clone()).expect("moment shape"));
            ck.push(format!("adam.v/{name}"), Tensor::new(shape, v.clone()).expect("moment shape"));
        }
        if !self.trace.is_empty() {
            let n = self.trace.len();
            let col = |f: fn(&TraceRow) -> f64| Tensor::new(vec![n], self.trace.iter().map(f).collect()).expect("trace");
            ck.push("trace/step", col(|r| r.step as f64));
            ck.push("trace/lr", col(|r| r.lr));
            ck.push("trace/loss", col(|r| r.loss));
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let network = Network::from_checkpoint(ck)?;
        let step = ck
            .manifest
            .lines()
            .find_map(|l| l.strip_prefix("step="))
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::Config("checkpoint manifest lacks step".into()))?;
        let mut moments = BTreeMap::new();
        for (name, m) in ck.arrays.iter().filter_map(|(n, t)| n.strip_prefix("adam.m/").map(|n| (n, t))) {
            let v = ck
                .get(&format!("adam.v/{name}"))
                .ok_or_else(|| Error::Config(format!("checkpoint lacks second moment of {name}")))?;
            moments.insert(name.to_string(), (m.data().to_vec(), v.data().to_vec()));
        }
        let mut adam = Adam::default();
        adam.restore(step, moments);
        let trace = match (ck.get("trace/step"), ck.get("trace/lr"), ck.get("trace/loss")) {
            (Some(s), Some(l), Some(v)) => s
                .data()
                .iter()
                .zip(l.data())
                .zip(v.data())
                .map(|((&s, &lr), &loss)| TraceRow {
                    step: s as u64,
                    lr,
                    loss,
                })
                .collect(),
            _ => Vec::new(),
        };
        Ok(Self {
            network,
            adam,
            trace,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        Ok(self.to_checkpoint().save(path)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

/// Loss and per-parameter gradients of `network` on one batch.
pub fn loss_and_grads(network: &Network, samples: &[Sample]) -> Result<(f64, BTreeMap<String, Tensor>)> {
    let truths = samples
        .iter()
        .map(|s| s.truth.as_ref().ok_or_else(|| invalid("training samples need a target")))
        .collect::<Result<Vec<_>>>()?;
    let mut tape = Tape::new();
    let p = Bound::new(&mut tape, &network.params, true);
    let pred = network.record(&mut tape, &p, samples)?;
    let target = tape.complex_constant(complex_batch(&truths)?);
    let loss = mse_loss(&mut tape, pred, target)?;
    let value = tape.value(loss).item();
    let grads = tape.backward(loss)?;
    let mut out = BTreeMap::new();
    for (name, &v) in p.iter() {
        out.insert(name.clone(), grads.tensor(v)?);
    }
    Ok((value, out))
}

/// The training batch of `step`; depends only on `(data, cfg.seed, step)`.
pub fn sample_batch(
    data: &Dataset,
    spec: &ModelSpec,
    pattern: &PilotPattern,
    cfg: &TrainConfig,
    step: u64,
) -> Result<Vec<Sample>> {
    let need = spec.past + 1;
    if data.is_empty() || data.shortest() < need {
        return Err(invalid(format!(
            "window of {need} slots does not fit the shortest training sequence ({})",
            data.shortest()
        )));
    }
    let mut rng = seed::rng(cfg.seed, "batch", step);
    (0..cfg.batch)
        .map(|_| {
            let seq = &data.sequences[rng.random_range(0..data.len())];
            let len = seq.len();
            if rng.random_bool(cfg.augment_ratio) {
                let span = rng.random_range(need..=len.min(2 * need));
                let start = rng.random_range(0..=len - span);
                let source = ChannelSequence::new(
                    seq.slots()[start..start + span].to_vec(),
                    seq.positions()[start..start + span].to_vec(),
                    seq.mobility,
                )?;
                let aug = augment_sequence(&source, need, rng.random())?;
                Sample::from_window(aug.slots(), pattern)
            } else {
                let start = rng.random_range(0..=len - need);
                Sample::from_window(&seq.slots()[start..start + need], pattern)
            }
        })
        .collect()
}

/// Advances `state` to `until` steps. `on_checkpoint` runs at each periodic
/// checkpoint.
pub fn run(
    state: &mut TrainState,
    data: &Dataset,
    cfg: &TrainConfig,
    until: u64,
    mut on_checkpoint: impl FnMut(&TrainState) -> Result<()>,
) -> Result<()> {
    cfg.validate()?;
    let spec = state.network.spec.clone();
    if (data.n_t(), data.n_c()) != (spec.n_t, spec.n_c) {
        return Err(invalid(format!(
            "dataset is {}x{}, model expects {}x{}",
            data.n_t(),
            data.n_c(),
            spec.n_t,
            spec.n_c
        )));
    }
    let pattern = spec.pattern()?;
    while state.step() < until {
        let step = state.step() + 1;
        let samples = sample_batch(data, &spec, &pattern, cfg, step)?;
        let (loss, grads) = loss_and_grads(&state.network, &samples)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                what: "loss".into(),
                step,
            });
        }
        let lr = lr_at(step, cfg.schedule_width, cfg.warmup)?;
        state.adam.update(&mut state.network.params, &grads, lr)?;
        state.trace.push(TraceRow { step, lr, loss });
        if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 {
            on_checkpoint(state)?;
        }
    }
    Ok(())
}

/// Fresh training for `cfg.steps` steps.
pub fn train(spec: ModelSpec, data: &Dataset, cfg: &TrainConfig) -> Result<TrainState> {
    let mut state = TrainState::fresh(spec, cfg.seed)?;
    run(&mut state, data, cfg, cfg.steps, |_| Ok(()))?;
    Ok(state)
}

/// Parameter names grouped by layer (everything before the final
/// `.w`/`.b`/`.g`/`.re`/`.im` suffixes).
pub fn layer_groups(params: &ParameterSet) -> BTreeMap<String, Vec<String>> {
    let mut groups: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for name in params.names() {
        let mut base = name.as_str();
        while let Some((head, tail)) = base.rsplit_once('.') {
            if matches!(tail, "re" | "im" | "w" | "b" | "g" | "w_ih" | "w_hh") {
                base = head;
            } else {
                break;
            }
        }
        groups.entry(base.to_string()).or_default().push(name.clone());
    }
    groups
}
