//! Geometric multipath MIMO-OFDM channel synthesis.
//!
//! A channel is the coherent sum of a handful of propagation paths, each
//! contributing a delay-dependent phase per subcarrier and a direction-dependent
//! phase per antenna. Sequences are produced by moving a user through a fixed
//! scatterer scene one slot at a time.

mod augment;
mod dataset;
mod disturb;
mod geometry;
mod pilot;
mod scene;
mod trajectory;

use std::ops::{Add, Mul, Sub};

use num_complex::Complex64;

use crate::error::{invalid, shape, Result};

pub use augment::{augment_sequence, augment_with_indices};
pub use dataset::{
    build_dataset, Dataset, DatasetBundle, DatasetCounts, TEST_MOBILE_FILE, TEST_QUASI_STATIC_FILE,
    TRAIN_FILE,
};
pub(crate) use dataset::write_atomic;
pub use disturb::{apply_disturbance, disturb_with, DisturbanceSpec};
pub use geometry::{
    array_response, assemble_channel, channel_at_frequency, ArrayGeometry, ArrayLayout, PathParams,
};
pub use pilot::{extract_pilot, PilotPattern};
pub use scene::{scene_to_paths, Area, ArraySpec, Region, ScenarioConfig, Scatterer, Scene};
pub use trajectory::{generate_trajectory, MotionParams};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3::new(0.0, 0.0, 0.0);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn distance(self, o: Vec3) -> f64 {
        (self - o).norm()
    }

    pub fn normalized(self) -> Vec3 {
        self * (1.0 / self.norm())
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

/// Complex `n_t × n_c` channel of one slot, antenna-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelMatrix {
    n_t: usize,
    n_c: usize,
    entries: Vec<Complex64>,
    pub slot: u64,
}

impl ChannelMatrix {
    pub fn new(n_t: usize, n_c: usize, entries: Vec<Complex64>, slot: u64) -> Result<Self> {
        if n_t == 0 || n_c == 0 || entries.len() != n_t * n_c {
            return Err(shape(
                "channel_matrix",
                format!("{n_t}x{n_c} with {} entries", entries.len()),
            ));
        }
        if entries.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(invalid("channel matrix has non-finite entries"));
        }
        Ok(Self {
            n_t,
            n_c,
            entries,
            slot,
        })
    }

    pub fn zeros(n_t: usize, n_c: usize) -> Self {
        Self {
            n_t,
            n_c,
            entries: vec![Complex64::new(0.0, 0.0); n_t * n_c],
            slot: 0,
        }
    }

    pub fn from_fn(n_t: usize, n_c: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let entries = (0..n_t * n_c).map(|k| f(k / n_c, k % n_c)).collect();
        Self {
            n_t,
            n_c,
            entries,
            slot: 0,
        }
    }

    pub fn with_slot(mut self, slot: u64) -> Self {
        self.slot = slot;
        self
    }

    pub fn n_t(&self) -> usize {
        self.n_t
    }

    pub fn n_c(&self) -> usize {
        self.n_c
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.n_t, self.n_c)
    }

    pub fn get(&self, antenna: usize, subcarrier: usize) -> Complex64 {
        self.entries[antenna * self.n_c + subcarrier]
    }

    pub fn set(&mut self, antenna: usize, subcarrier: usize, v: Complex64) {
        self.entries[antenna * self.n_c + subcarrier] = v;
    }

    pub fn entries(&self) -> &[Complex64] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [Complex64] {
        &mut self.entries
    }

    /// Subcarrier `m` as an antenna vector.
    pub fn column(&self, m: usize) -> Vec<Complex64> {
        (0..self.n_t).map(|a| self.get(a, m)).collect()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.entries.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn scaled(&self, s: Complex64) -> Self {
        let mut out = self.clone();
        out.entries.iter_mut().for_each(|z| *z *= s);
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mobility {
    Mobile,
    QuasiStatic,
}

impl Mobility {
    pub fn code(self) -> u32 {
        match self {
            Mobility::Mobile => 0,
            Mobility::QuasiStatic => 1,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(Mobility::Mobile),
            1 => Some(Mobility::QuasiStatic),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Mobility::Mobile => "mobile",
            Mobility::QuasiStatic => "quasi-static",
        }
    }
}

/// Channels of consecutive slots along one user trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelSequence {
    slots: Vec<ChannelMatrix>,
    positions: Vec<Vec3>,
    pub mobility: Mobility,
}

impl ChannelSequence {
    pub fn new(slots: Vec<ChannelMatrix>, positions: Vec<Vec3>, mobility: Mobility) -> Result<Self> {
        if slots.is_empty() {
            return Err(invalid("empty channel sequence"));
        }
        if positions.len() != slots.len() {
            return Err(invalid(format!(
                "{} positions for {} slots",
                positions.len(),
                slots.len()
            )));
        }
        let dims = slots[0].dims();
        for w in slots.windows(2) {
            if w[1].slot != w[0].slot + 1 {
                return Err(invalid(format!(
                    "slot indices not consecutive: {} then {}",
                    w[0].slot, w[1].slot
                )));
            }
        }
        if slots.iter().any(|s| s.dims() != dims) {
            return Err(invalid("mixed channel dimensions in sequence"));
        }
        Ok(Self {
            slots,
            positions,
            mobility,
        })
    }

    pub fn slots(&self) -> &[ChannelMatrix] {
        &self.slots
    }

    pub fn positions(&self) -> &[Vec3] {
        &self.positions
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.slots[0].dims()
    }
}
