use std::collections::{BTreeMap, HashMap};

use cdlab_tensor::{CVar, Checkpoint, Tape, Tensor, Var};
use rand::Rng;

use super::{ModelSpec, Variant};
use crate::error::{invalid, Error, Result};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq)]
enum Init {
    /// `U(±1/√fan_in)`.
    Uniform(usize),
    /// One part of a complex weight: `U(±1/√(2·fan_in))`.
    ComplexPart(usize),
    Zeros,
    Ones,
    Identity,
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct ParamDef {
    pub name: String,
    pub shape: Vec<usize>,
    init: Init,
}

#[derive(Default)]
struct Layout(Vec<ParamDef>);

impl Layout {
    fn real(&mut self, name: String, shape: &[usize], init: Init) {
        self.0.push(ParamDef {
            name,
            shape: shape.to_vec(),
            init,
        });
    }

    fn linear(&mut self, name: &str, out: usize, inp: usize) {
        self.real(format!("{name}.w"), &[out, inp], Init::Uniform(inp));
        self.real(format!("{name}.b"), &[out], Init::Zeros);
    }

    fn layer_norm(&mut self, name: &str, width: usize) {
        self.real(format!("{name}.g"), &[width], Init::Ones);
        self.real(format!("{name}.b"), &[width], Init::Zeros);
    }

    fn complex_linear(&mut self, name: &str, out: usize, inp: usize, identity: bool) {
        if identity && out == inp {
            self.real(format!("{name}.w.re"), &[out, inp], Init::Identity);
            self.real(format!("{name}.w.im"), &[out, inp], Init::Zeros);
        } else {
            self.real(format!("{name}.w.re"), &[out, inp], Init::ComplexPart(inp));
            self.real(format!("{name}.w.im"), &[out, inp], Init::ComplexPart(inp));
        }
        self.real(format!("{name}.b.re"), &[out], Init::Zeros);
        self.real(format!("{name}.b.im"), &[out], Init::Zeros);
    }

    fn token_mlp(&mut self, name: &str, len: usize) {
        self.layer_norm(&format!("{name}.norm"), 2 * len);
        self.complex_linear(&format!("{name}.fc1"), 2 * len, len, false);
        self.complex_linear(&format!("{name}.fc2"), len, 2 * len, false);
    }

    fn cmixer(&mut self, prefix: &str, inp: (usize, usize), out: (usize, usize), depth: usize) {
        self.complex_linear(&format!("{prefix}.in.ant"), out.0, inp.0, true);
        self.complex_linear(&format!("{prefix}.in.sub"), out.1, inp.1, true);
        for k in 0..depth {
            self.token_mlp(&format!("{prefix}.l{k}.ant"), out.0);
            self.token_mlp(&format!("{prefix}.l{k}.sub"), out.1);
        }
        self.complex_linear(&format!("{prefix}.out.ant"), out.0, out.0, true);
        self.complex_linear(&format!("{prefix}.out.sub"), out.1, out.1, true);
    }

    fn lstm(&mut self, width: usize) {
        for l in 0..2 {
            self.real(format!("lstm.l{l}.w_ih"), &[4 * width, width], Init::Uniform(width));
            self.real(format!("lstm.l{l}.w_hh"), &[4 * width, width], Init::Uniform(width));
            self.real(format!("lstm.l{l}.b"), &[4 * width], Init::Zeros);
        }
    }

    fn attention(&mut self, width: usize, ff: usize, depth: usize) {
        self.real("emb.past".into(), &[width], Init::Uniform(width));
        self.real("emb.present".into(), &[width], Init::Uniform(width));
        for k in 0..depth {
            let p = format!("attn.b{k}");
            self.layer_norm(&format!("{p}.ln1"), width);
            for m in ["q", "k", "v", "o"] {
                self.linear(&format!("{p}.{m}"), width, width);
            }
            self.layer_norm(&format!("{p}.ln2"), width);
            self.linear(&format!("{p}.ff1"), ff, width);
            self.linear(&format!("{p}.ff2"), width, ff);
        }
    }
}

/// Every parameter a spec needs, in a fixed order.
pub(crate) fn layout(spec: &ModelSpec) -> Vec<ParamDef> {
    let mut l = Layout::default();
    let full = (spec.n_t, spec.n_c);
    let pilot = (spec.pilot_t, spec.pilot_c);
    let flat = spec.flat_len();
    match spec.variant {
        Variant::RcdNet | Variant::AcdNet => {
            l.cmixer("pre", pilot, full, spec.k1);
            l.linear("reduce", spec.width, flat);
            if spec.variant == Variant::RcdNet {
                l.lstm(spec.width);
            } else {
                l.attention(spec.width, spec.ff_width, spec.k3);
            }
            l.linear("recover", flat, spec.width);
            l.cmixer("post", full, full, spec.k2);
        }
        Variant::Estimation => l.cmixer("est", pilot, full, spec.estimation_depth),
        Variant::Prediction => {
            l.linear("reduce", spec.width, flat);
            l.lstm(spec.width);
            l.linear("recover", flat, spec.width);
        }
    }
    l.0
}

/// Named real tensors; a complex weight `w` is stored as `w.re` and `w.im`.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterSet {
    tensors: BTreeMap<String, Tensor>,
    pub seed: u64,
}

impl ParameterSet {
    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| invalid(format!("no parameter named '{name}'")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| invalid(format!("no parameter named '{name}'")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    /// Checks names and shapes against what `spec` requires.
    pub fn check(&self, spec: &ModelSpec) -> Result<()> {
        let defs = layout(spec);
        if defs.len() != self.tensors.len() {
            return Err(invalid(format!(
                "spec needs {} parameters, set has {}",
                defs.len(),
                self.tensors.len()
            )));
        }
        for d in defs {
            let t = self.get(&d.name)?;
            if t.shape() != d.shape.as_slice() {
                return Err(invalid(format!(
                    "parameter {} has shape {:?}, spec needs {:?}",
                    d.name,
                    t.shape(),
                    d.shape
                )));
            }
        }
        Ok(())
    }

    pub fn to_checkpoint(&self, manifest: impl Into<String>) -> Checkpoint {
        let mut ck = Checkpoint::new(manifest);
        for (name, t) in &self.tensors {
            ck.push(name.clone(), t.clone());
        }
        ck
    }

    /// Collects arrays whose names start with `prefix`, stripping it.
    pub fn from_checkpoint(ck: &Checkpoint, prefix: &str, seed: u64) -> Self {
        let tensors = ck
            .arrays
            .iter()
            .filter_map(|(n, t)| n.strip_prefix(prefix).map(|n| (n.to_string(), t.clone())))
            .collect();
        Self { tensors, seed }
    }

    pub fn from_tensors(tensors: impl IntoIterator<Item = (String, Tensor)>, seed: u64) -> Self {
        Self {
            tensors: tensors.into_iter().collect(),
            seed,
        }
    }
}

/// Deterministic initialization; each tensor draws from its own stream
/// keyed by name, so adding a layer never perturbs the others.
pub fn init_params(spec: &ModelSpec, seed: u64) -> Result<ParameterSet> {
    spec.validate()?;
    let tensors = layout(spec)
        .into_iter()
        .map(|d| {
            let mut rng = seed::rng(seed, &d.name, 0);
            let mut uniform = |bound: f64| Tensor::from_fn(d.shape.clone(), |_| rng.random_range(-bound..bound));
            let t = match d.init {
                Init::Uniform(fan_in) => uniform(1.0 / (fan_in as f64).sqrt()),
                Init::ComplexPart(fan_in) => uniform(1.0 / (2.0 * fan_in as f64).sqrt()),
                Init::Zeros => Tensor::zeros(d.shape.clone()),
                Init::Ones => Tensor::full(d.shape.clone(), 1.0),
                Init::Identity => Tensor::eye(d.shape[0]),
            };
            (d.name, t)
        })
        .collect();
    Ok(ParameterSet { tensors, seed })
}

/// Parameters recorded on one tape.
pub struct Bound {
    vars: HashMap<String, Var>,
}

impl Bound {
    /// Trainable bindings receive gradients; frozen ones are constants.
    pub fn new(tape: &mut Tape, params: &ParameterSet, trainable: bool) -> Self {
        let vars = params
            .iter()
            .map(|(n, t)| {
                let v = if trainable {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                };
                (n.clone(), v)
            })
            .collect();
        Self { vars }
    }

    pub fn real(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Invalid(format!("no parameter named '{name}'")))
    }

    pub fn complex(&self, name: &str) -> Result<CVar> {
        Ok(CVar {
            re: self.real(&format!("{name}.re"))?,
            im: self.real(&format!("{name}.im"))?,
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_names_are_unique() {
        for v in Variant::ALL {
            let defs = layout(&ModelSpec::new(v));
            let mut names: Vec<_> = defs.iter().map(|d| &d.name).collect();
            names.sort();
            names.dedup();
            assert_eq!(names.len(), defs.len(), "{v}");
        }
    }

    #[test]
    fn init_matches_layout() {
        for v in Variant::ALL {
            let spec = ModelSpec {
                width: 32,
                ..ModelSpec::new(v)
            };
            init_params(&spec, 1).unwrap().check(&spec).unwrap();
        }
    }
}
