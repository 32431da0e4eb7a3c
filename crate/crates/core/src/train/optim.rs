use std::collections::BTreeMap;

use cdlab_tensor::Tensor;

use crate::error::{invalid, Error, Result};
use crate::nn::ParameterSet;

/// Warmup-then-inverse-square-root schedule:
/// `width^−0.5 · min(step^−0.5, step · warmup^−1.5)`.
pub fn lr_at(step: u64, width: usize, warmup: u64) -> Result<f64> {
    if step == 0 {
        return Err(invalid("learning-rate steps count from 1"));
    }
    if warmup == 0 || width == 0 {
        return Err(invalid("warmup and schedule width must be positive"));
    }
    let s = step as f64;
    let w = warmup as f64;
    let decay = s.powf(-0.5);
    // step · warmup^−1.5 written so both arms agree bit for bit at warmup.
    let ramp = (s / w) * w.powf(-0.5);
    Ok((width as f64).powf(-0.5) * decay.min(ramp))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl Default for Adam {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            moments: BTreeMap::new(),
        }
    }
}

impl Adam {
    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// First and second moments of `name`, if it has been updated.
    pub fn moments(&self, name: &str) -> Option<(&[f64], &[f64])> {
        self.moments.get(name).map(|(m, v)| (m.as_slice(), v.as_slice()))
    }

    pub(crate) fn restore(&mut self, step: u64, moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>) {
        self.step = step;
        self.moments = moments;
    }

    pub(crate) fn all_moments(&self) -> &BTreeMap<String, (Vec<f64>, Vec<f64>)> {
        &self.moments
    }

    /// One bias-corrected update of every parameter named in `grads`.
    /// Nothing is modified if any gradient is non-finite.
    pub fn update(
        &mut self,
        params: &mut ParameterSet,
        grads: &BTreeMap<String, Tensor>,
        lr: f64,
    ) -> Result<()> {
        for (name, g) in grads {
            if let Some(bad) = g.data().iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    what: format!("gradient of {name} (entry {bad})"),
                    step: self.step + 1,
                });
            }
            if params.get(name)?.shape() != g.shape() {
                return Err(invalid(format!("gradient shape mismatch for {name}")));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (name, g) in grads {
            let p = params.get_mut(name)?;
            let n = g.numel();
            let (m, v) = self
                .moments
                .entry(name.clone())
                .or_insert_with(|| (vec![0.0; n], vec![0.0; n]));
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let mh = *mi / c1;
                let vh = *vi / c2;
                *w -= lr * mh / (vh.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
