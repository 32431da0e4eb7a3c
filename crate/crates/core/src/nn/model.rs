use std::path::Path;

use cdlab_tensor::{CVar, Checkpoint, ComplexTensor, Tape, Tensor, Var};
use num_complex::Complex64;

use super::layers::{attention_encoder, cmixer, linear, lstm};
use super::{init_params, Bound, ModelSpec, ParameterSet, Variant};
use crate::channel::{extract_pilot, ChannelMatrix, PilotPattern};
use crate::error::{invalid, shape, Result};

const PARAM_PREFIX: &str = "param/";
const INFER_CHUNK: usize = 256;

/// One deduction query: `past` oldest first, the pilot readout of the
/// present slot, and optionally the true present channel.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub past: Vec<ChannelMatrix>,
    pub pilot: ChannelMatrix,
    /// Read only by [`Model::TrueChannel`]; networks never see it.
    pub truth: Option<ChannelMatrix>,
}

impl Sample {
    /// Splits `window` into its first `len − 1` slots as the past and the
    /// last slot as the present.
    pub fn from_window(window: &[ChannelMatrix], pattern: &PilotPattern) -> Result<Self> {
        let (present, past) = window
            .split_last()
            .ok_or_else(|| invalid("window needs at least the present slot"))?;
        Ok(Self {
            past: past.to_vec(),
            pilot: extract_pilot(present, pattern)?,
            truth: Some(present.clone()),
        })
    }
}

/// Stacks matrices of equal dims into a `[batch, n_t, n_c]` complex tensor.
pub fn complex_batch(ms: &[&ChannelMatrix]) -> Result<ComplexTensor> {
    let first = ms.first().ok_or_else(|| invalid("empty batch"))?;
    let (t, c) = first.dims();
    if let Some(m) = ms.iter().find(|m| m.dims() != (t, c)) {
        return Err(shape("batch", format!("{:?} among {:?}", m.dims(), (t, c))));
    }
    let mut re = Vec::with_capacity(ms.len() * t * c);
    let mut im = Vec::with_capacity(ms.len() * t * c);
    for m in ms {
        for z in m.entries() {
            re.push(z.re);
            im.push(z.im);
        }
    }
    let shape = vec![ms.len(), t, c];
    Ok(ComplexTensor::new(Tensor::new(shape.clone(), re)?, Tensor::new(shape, im)?)?)
}

/// Inverse of [`complex_batch`].
pub fn matrices_from(x: &ComplexTensor) -> Result<Vec<ChannelMatrix>> {
    let [b, t, c] = match *x.shape() {
        [b, t, c] => [b, t, c],
        ref s => return Err(shape("matrices_from", format!("{s:?}"))),
    };
    (0..b)
        .map(|k| {
            let off = k * t * c;
            let entries = (0..t * c)
                .map(|i| Complex64::new(x.re.data()[off + i], x.im.data()[off + i]))
                .collect();
            ChannelMatrix::new(t, c, entries, 0)
        })
        .collect()
}

/// Complex `[batch, n_t, n_c]` to real `[batch, 2·n_t·n_c]` as re‖im.
pub fn flatten(tape: &mut Tape, x: CVar) -> Result<Var> {
    let s = tape.try_value(x.re)?.shape().to_vec();
    let rows = [s[0], s[1..].iter().product()];
    let re = tape.reshape(x.re, &rows)?;
    let im = tape.reshape(x.im, &rows)?;
    Ok(tape.concat_last(&[re, im])?)
}

pub fn unflatten(tape: &mut Tape, v: Var, n_t: usize, n_c: usize) -> Result<CVar> {
    let b = tape.try_value(v)?.shape()[0];
    let re = tape.slice_last(v, 0, n_t * n_c)?;
    let im = tape.slice_last(v, n_t * n_c, 2 * n_t * n_c)?;
    Ok(CVar {
        re: tape.reshape(re, &[b, n_t, n_c])?,
        im: tape.reshape(im, &[b, n_t, n_c])?,
    })
}

fn check_window(spec: &ModelSpec, past: &[CVar]) -> Result<()> {
    if past.len() != spec.past {
        return Err(shape(
            "window",
            format!("{} past slots for a model of window {}", past.len(), spec.past),
        ));
    }
    Ok(())
}

/// Reduced past vectors followed by the reduced present, stacked time-major.
fn reduce_all(tape: &mut Tape, p: &Bound, past: &[CVar], present: Option<CVar>) -> Result<Var> {
    let mut flat = Vec::with_capacity(past.len() + 1);
    for &x in past.iter().chain(present.iter()) {
        flat.push(flatten(tape, x)?);
    }
    let stacked = tape.concat_rows(&flat)?;
    linear(tape, p, "reduce", stacked)
}

fn recover(tape: &mut Tape, p: &Bound, spec: &ModelSpec, h: Var) -> Result<CVar> {
    let v = linear(tape, p, "recover", h)?;
    unflatten(tape, v, spec.n_t, spec.n_c)
}

/// Pilot readout to a full-size coarse channel.
pub fn preliminary_mapping(tape: &mut Tape, p: &Bound, spec: &ModelSpec, pilot: CVar) -> Result<CVar> {
    cmixer(tape, p, "pre", spec.k1, pilot)
}

/// Past and premapped present through the shared reduction, the recurrence
/// and the recovery map.
pub fn interaction_recurrent(
    tape: &mut Tape,
    p: &Bound,
    spec: &ModelSpec,
    past: &[CVar],
    present: CVar,
) -> Result<CVar> {
    check_window(spec, past)?;
    let xs = reduce_all(tape, p, past, Some(present))?;
    let h = lstm(tape, p, xs, past.len() + 1)?;
    recover(tape, p, spec, h)
}

/// As [`interaction_recurrent`] with past/present embeddings and an attention
/// encoder; the output token of the present slot is recovered.
pub fn interaction_attention(
    tape: &mut Tape,
    p: &Bound,
    spec: &ModelSpec,
    past: &[CVar],
    present: CVar,
) -> Result<CVar> {
    check_window(spec, past)?;
    let n = past.len();
    let tokens = n + 1;
    let batch = tape.try_value(present.re)?.shape()[0];
    let xs = reduce_all(tape, p, past, Some(present))?;
    let old = tape.slice_rows(xs, 0, n * batch)?;
    let old = tape.add_row(old, p.real("emb.past")?)?;
    let now = tape.slice_rows(xs, n * batch, tokens * batch)?;
    let now = tape.add_row(now, p.real("emb.present")?)?;
    let xs = tape.concat_rows(&[old, now])?;

    let xs = batch_major(tape, xs, tokens, batch, spec.width)?;
    let ys = attention_encoder(tape, p, xs, batch, spec.heads, spec.k3)?;
    let ys = time_major(tape, ys, tokens, batch, spec.width)?;
    let last = tape.slice_rows(ys, n * batch, tokens * batch)?;
    recover(tape, p, spec, last)
}

/// `[tokens·batch, w]` time-major to `[batch·tokens, w]` batch-major.
pub fn batch_major(tape: &mut Tape, x: Var, tokens: usize, batch: usize, width: usize) -> Result<Var> {
    let x = tape.reshape(x, &[tokens, batch, width])?;
    let x = tape.permute(x, &[1, 0, 2])?;
    Ok(tape.reshape(x, &[batch * tokens, width])?)
}

pub fn time_major(tape: &mut Tape, x: Var, tokens: usize, batch: usize, width: usize) -> Result<Var> {
    let x = tape.reshape(x, &[batch, tokens, width])?;
    let x = tape.permute(x, &[1, 0, 2])?;
    Ok(tape.reshape(x, &[tokens * batch, width])?)
}

pub fn detailed_representation(tape: &mut Tape, p: &Bound, spec: &ModelSpec, x: CVar) -> Result<CVar> {
    cmixer(tape, p, "post", spec.k2, x)
}

/// Full forward pass of any variant. `pilot` is required unless the variant
/// is past-only; `past` must match the window unless pilot-only.
pub fn forward(
    tape: &mut Tape,
    p: &Bound,
    spec: &ModelSpec,
    past: &[CVar],
    pilot: Option<CVar>,
) -> Result<CVar> {
    let need_pilot = || pilot.ok_or_else(|| invalid(format!("{} needs a pilot input", spec.variant)));
    match spec.variant {
        Variant::RcdNet | Variant::AcdNet => {
            let pre = preliminary_mapping(tape, p, spec, need_pilot()?)?;
            let mid = if spec.variant == Variant::RcdNet {
                interaction_recurrent(tape, p, spec, past, pre)?
            } else {
                interaction_attention(tape, p, spec, past, pre)?
            };
            detailed_representation(tape, p, spec, mid)
        }
        Variant::Estimation => cmixer(tape, p, "est", spec.estimation_depth, need_pilot()?),
        Variant::Prediction => {
            check_window(spec, past)?;
            let xs = reduce_all(tape, p, past, None)?;
            let h = lstm(tape, p, xs, past.len())?;
            recover(tape, p, spec, h)
        }
    }
}

/// A spec with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub spec: ModelSpec,
    pub params: ParameterSet,
}

impl Network {
    pub fn new(spec: ModelSpec, params: ParameterSet) -> Result<Self> {
        spec.validate()?;
        params.check(&spec)?;
        Ok(Self { spec, params })
    }

    pub fn init(spec: ModelSpec, seed: u64) -> Result<Self> {
        let params = init_params(&spec, seed)?;
        Ok(Self { spec, params })
    }

    /// Records the batch inputs as constants and runs [`forward`].
    pub fn record(&self, tape: &mut Tape, p: &Bound, samples: &[Sample]) -> Result<CVar> {
        let spec = &self.spec;
        let pattern_dims = (spec.pilot_t, spec.pilot_c);
        for s in samples {
            if spec.variant.uses_past() && s.past.len() != spec.past {
                return Err(shape(
                    "window",
                    format!("{} past slots for a model of window {}", s.past.len(), spec.past),
                ));
            }
            if s.past.iter().any(|m| m.dims() != (spec.n_t, spec.n_c)) {
                return Err(shape("window", "past channel dims differ from the spec"));
            }
            if spec.variant.uses_pilot() && s.pilot.dims() != pattern_dims {
                return Err(shape(
                    "pilot",
                    format!("{:?} for a model expecting {pattern_dims:?}", s.pilot.dims()),
                ));
            }
        }
        let mut past = Vec::new();
        if spec.variant.uses_past() {
            for k in 0..spec.past {
                let col: Vec<&ChannelMatrix> = samples.iter().map(|s| &s.past[k]).collect();
                past.push(tape.complex_constant(complex_batch(&col)?));
            }
        }
        let pilot = if spec.variant.uses_pilot() {
            let col: Vec<&ChannelMatrix> = samples.iter().map(|s| &s.pilot).collect();
            Some(tape.complex_constant(complex_batch(&col)?))
        } else {
            None
        };
        forward(tape, p, spec, &past, pilot)
    }

    pub fn infer_batch(&self, samples: &[Sample]) -> Result<Vec<ChannelMatrix>> {
        let mut out = Vec::with_capacity(samples.len());
        for chunk in samples.chunks(INFER_CHUNK) {
            let mut tape = Tape::new();
            let p = Bound::new(&mut tape, &self.params, false);
            let y = self.record(&mut tape, &p, chunk)?;
            out.extend(matrices_from(&tape.complex_value(y))?);
        }
        Ok(out)
    }

    pub fn infer(&self, past: &[ChannelMatrix], pilot: &ChannelMatrix) -> Result<ChannelMatrix> {
        let s = Sample {
            past: past.to_vec(),
            pilot: pilot.clone(),
            truth: None,
        };
        Ok(self.infer_batch(std::slice::from_ref(&s))?.remove(0))
    }

    /// Scalar operations of one single-sample forward pass.
    pub fn cost(&self) -> Result<u64> {
        let s = Sample {
            past: vec![ChannelMatrix::zeros(self.spec.n_t, self.spec.n_c); self.spec.past],
            pilot: ChannelMatrix::zeros(self.spec.pilot_t, self.spec.pilot_c),
            truth: None,
        };
        let mut tape = Tape::new();
        let p = Bound::new(&mut tape, &self.params, false);
        let before = tape.flops();
        self.record(&mut tape, &p, &[s])?;
        Ok(tape.flops() - before)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let manifest = format!("{}seed={}\n", self.spec.to_manifest(), self.params.seed);
        let mut ck = Checkpoint::new(manifest);
        for (name, t) in self.params.iter() {
            ck.push(format!("{PARAM_PREFIX}{name}"), t.clone());
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let spec = ModelSpec::from_manifest(&ck.manifest)?;
        let seed = ck
            .manifest
            .lines()
            .find_map(|l| l.strip_prefix("seed="))
            .and_then(|v| v.parse().ok())
            .unwrap_or(0);
        Self::new(spec, ParameterSet::from_checkpoint(ck, PARAM_PREFIX, seed))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        Ok(self.to_checkpoint().save(path)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

/// Anything that can fill a deduction window: a trained network or the
/// ground-truth stub used to test the harnesses.
#[derive(Clone, Debug)]
pub enum Model {
    Net(Network),
    TrueChannel { past: usize, pattern: PilotPattern },
}

impl Model {
    pub fn name(&self) -> String {
        match self {
            Model::Net(n) => n.spec.variant.to_string(),
            Model::TrueChannel { .. } => "true-channel".into(),
        }
    }

    pub fn past_len(&self) -> usize {
        match self {
            Model::Net(n) if n.spec.variant.uses_past() => n.spec.past,
            Model::Net(_) => 0,
            Model::TrueChannel { past, .. } => *past,
        }
    }

    pub fn pattern(&self) -> Result<PilotPattern> {
        match self {
            Model::Net(n) => n.spec.pattern(),
            Model::TrueChannel { pattern, .. } => Ok(pattern.clone()),
        }
    }

    pub fn deduce_batch(&self, samples: &[Sample]) -> Result<Vec<ChannelMatrix>> {
        match self {
            Model::Net(n) => {
                if n.spec.variant.uses_past() {
                    n.infer_batch(samples)
                } else {
                    let trimmed: Vec<Sample> = samples
                        .iter()
                        .map(|s| Sample {
                            past: Vec::new(),
                            ..s.clone()
                        })
                        .collect();
                    n.infer_batch(&trimmed)
                }
            }
            Model::TrueChannel { .. } => samples
                .iter()
                .map(|s| {
                    s.truth
                        .clone()
                        .ok_or_else(|| invalid("true-channel model needs the truth in every sample"))
                })
                .collect(),
        }
    }
}
