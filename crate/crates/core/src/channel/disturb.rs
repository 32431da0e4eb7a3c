use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::ChannelMatrix;
use crate::error::{invalid, Result};

/// Entrywise multiplicative noise with factors drawn from `N(1, σ²)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DisturbanceSpec {
    sigma: f64,
}

impl DisturbanceSpec {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(invalid(format!("disturbance σ must be a finite value ≥ 0, got {sigma}")));
        }
        Ok(Self { sigma })
    }

    pub fn none() -> Self {
        Self { sigma: 0.0 }
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }
}

/// Draws from `rng` unless σ is zero, in which case the input comes back
/// untouched and the generator is not advanced.
pub fn disturb_with(h: &ChannelMatrix, spec: DisturbanceSpec, rng: &mut impl Rng) -> ChannelMatrix {
    let mut out = h.clone();
    if spec.sigma == 0.0 {
        return out;
    }
    let normal = Normal::new(1.0, spec.sigma).expect("σ validated at construction");
    for z in out.entries_mut() {
        *z *= normal.sample(rng);
    }
    out
}

pub fn apply_disturbance(h: &ChannelMatrix, spec: DisturbanceSpec, seed: u64) -> ChannelMatrix {
    disturb_with(h, spec, &mut ChaCha8Rng::seed_from_u64(seed))
}
