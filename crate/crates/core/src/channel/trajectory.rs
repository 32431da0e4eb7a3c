use std::f64::consts::PI;

use rand::Rng;

use super::{Mobility, Region, Vec3};
use crate::error::{invalid, Result};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MotionParams {
    /// Seconds per slot.
    pub slot_duration: f64,
    pub speed_min: f64,
    pub speed_max: f64,
    /// Largest per-slot displacement of a quasi-static user, meters.
    pub quasi_static_step: f64,
    /// Chance per slot that a mobile user picks a new heading.
    pub turn_probability: f64,
}

impl Default for MotionParams {
    fn default() -> Self {
        Self {
            slot_duration: 1e-3,
            speed_min: 10.0,
            speed_max: 30.0,
            quasi_static_step: 0.01,
            turn_probability: 0.05,
        }
    }
}

impl MotionParams {
    pub fn max_step(&self) -> f64 {
        (self.speed_max * self.slot_duration).max(self.quasi_static_step)
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if !(self.slot_duration > 0.0)
            || !(self.speed_min >= 0.0)
            || !(self.speed_max >= self.speed_min)
            || !(self.quasi_static_step >= 0.0)
            || !(0.0..=1.0).contains(&self.turn_probability)
        {
            return Err(invalid(format!("invalid motion parameters {self:?}")));
        }
        Ok(())
    }

    pub(crate) fn check_region(&self, region: &Region) -> Result<()> {
        let need = 2.0 * self.max_step();
        if region.width() < need || region.depth() < need {
            return Err(invalid(format!(
                "region {region:?} is narrower than two slot steps ({need} m)"
            )));
        }
        Ok(())
    }
}

/// Flips any axis component of `dir` that would carry `p` out of the region
/// in a step of length `len`. The step length is preserved exactly.
fn reflect(p: Vec3, mut dir: Vec3, len: f64, region: &Region) -> Vec3 {
    if !(region.x_min..=region.x_max).contains(&(p.x + dir.x * len)) {
        dir.x = -dir.x;
    }
    if !(region.y_min..=region.y_max).contains(&(p.y + dir.y * len)) {
        dir.y = -dir.y;
    }
    dir
}

fn heading(angle: f64) -> Vec3 {
    Vec3::new(angle.cos(), angle.sin(), 0.0)
}

/// User positions for `num_slots` consecutive slots inside `region`.
pub fn generate_trajectory(
    kind: Mobility,
    num_slots: usize,
    region: &Region,
    motion: &MotionParams,
    seed: u64,
) -> Result<Vec<Vec3>> {
    if num_slots == 0 {
        return Err(invalid("trajectory needs at least one slot"));
    }
    region.validate("trajectory")?;
    motion.validate()?;
    motion.check_region(region)?;

    let mut rng = seed::rng(seed, "trajectory", 0);
    let mut p = Vec3::new(
        rng.random_range(region.x_min..=region.x_max),
        rng.random_range(region.y_min..=region.y_max),
        region.height,
    );
    let mut out = Vec::with_capacity(num_slots);
    out.push(p);
    match kind {
        Mobility::Mobile => {
            let speed = rng.random_range(motion.speed_min..=motion.speed_max);
            let len = speed * motion.slot_duration;
            let mut dir = heading(rng.random_range(0.0..2.0 * PI));
            for _ in 1..num_slots {
                if rng.random_bool(motion.turn_probability) {
                    dir = heading(rng.random_range(0.0..2.0 * PI));
                }
                dir = reflect(p, dir, len, region);
                p = p + dir * len;
                out.push(p);
            }
        }
        Mobility::QuasiStatic => {
            for _ in 1..num_slots {
                let len = rng.random_range(0.0..=motion.quasi_static_step);
                let dir = heading(rng.random_range(0.0..2.0 * PI));
                p = p + reflect(p, dir, len, region) * len;
                out.push(p);
            }
        }
    }
    Ok(out)
}
