use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;

use super::{
    assemble_channel, ArrayGeometry, ChannelMatrix, ChannelSequence, Mobility, MotionParams,
    PathParams, Vec3, SPEED_OF_LIGHT,
};
use crate::error::{invalid, Result};
use crate::seed;

/// Axis-aligned rectangle of user positions at a fixed height.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Region {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub height: f64,
}

impl Region {
    pub fn new(x: (f64, f64), y: (f64, f64), height: f64) -> Self {
        Self {
            x_min: x.0,
            x_max: x.1,
            y_min: y.0,
            y_max: y.1,
            height,
        }
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn depth(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn contains(&self, p: Vec3) -> bool {
        p.x >= self.x_min && p.x <= self.x_max && p.y >= self.y_min && p.y <= self.y_max
    }

    pub fn center(&self) -> Vec3 {
        Vec3::new(
            0.5 * (self.x_min + self.x_max),
            0.5 * (self.y_min + self.y_max),
            self.height,
        )
    }

    /// Closed rectangles: a shared edge counts as overlap.
    pub fn overlaps(&self, o: &Region) -> bool {
        self.x_min <= o.x_max && o.x_min <= self.x_max && self.y_min <= o.y_max && o.y_min <= self.y_max
    }

    pub(crate) fn validate(&self, what: &str) -> Result<()> {
        let vals = [self.x_min, self.x_max, self.y_min, self.y_max, self.height];
        if vals.iter().any(|v| !v.is_finite()) || self.width() <= 0.0 || self.depth() <= 0.0 {
            return Err(invalid(format!("degenerate {what} region {self:?}")));
        }
        Ok(())
    }
}

/// Union of rectangles. Each trajectory stays inside one of them.
#[derive(Clone, Debug, PartialEq)]
pub struct Area {
    boxes: Vec<Region>,
}

impl Area {
    pub fn new(boxes: Vec<Region>) -> Self {
        Self { boxes }
    }

    pub fn boxes(&self) -> &[Region] {
        &self.boxes
    }

    pub fn contains(&self, p: Vec3) -> bool {
        self.boxes.iter().any(|b| b.contains(p))
    }

    pub fn overlaps(&self, o: &Area) -> bool {
        self.boxes.iter().any(|a| o.boxes.iter().any(|b| a.overlaps(b)))
    }

    /// A box drawn with probability proportional to its surface.
    pub fn pick<R: Rng + ?Sized>(&self, rng: &mut R) -> &Region {
        let total: f64 = self.boxes.iter().map(|b| b.width() * b.depth()).sum();
        let mut u = rng.random_range(0.0..total);
        for b in &self.boxes {
            u -= b.width() * b.depth();
            if u < 0.0 {
                return b;
            }
        }
        self.boxes.last().expect("validated area is nonempty")
    }

    pub(crate) fn validate(&self, what: &str) -> Result<()> {
        if self.boxes.is_empty() {
            return Err(invalid(format!("{what} area has no boxes")));
        }
        self.boxes.iter().try_for_each(|b| b.validate(what))
    }

    /// `x0,x1,y0,y1,h` per box, boxes separated by `;`.
    pub fn to_text(&self) -> String {
        self.boxes
            .iter()
            .map(|r| format!("{},{},{},{},{}", r.x_min, r.x_max, r.y_min, r.y_max, r.height))
            .collect::<Vec<_>>()
            .join(";")
    }

    pub fn parse(text: &str) -> Result<Self> {
        let boxes = text
            .split(';')
            .map(|b| {
                let v = b
                    .split(',')
                    .map(|x| x.trim().parse::<f64>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|e| invalid(format!("bad area box {b:?}: {e}")))?;
                match v[..] {
                    [x0, x1, y0, y1, h] => Ok(Region::new((x0, x1), (y0, y1), h)),
                    _ => Err(invalid(format!("area box {b:?} needs x0,x1,y0,y1,height"))),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { boxes })
    }
}

impl From<Region> for Area {
    fn from(r: Region) -> Self {
        Self { boxes: vec![r] }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ArraySpec {
    Linear { n: usize },
    Planar { rows: usize, cols: usize },
}

impl ArraySpec {
    pub fn len(&self) -> usize {
        match *self {
            ArraySpec::Linear { n } => n,
            ArraySpec::Planar { rows, cols } => rows * cols,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioConfig {
    pub carrier_frequency: f64,
    pub bandwidth: f64,
    pub n_c: usize,
    pub array: ArraySpec,
    pub paths: usize,
    pub speed_of_light: f64,
    pub scene_seed: u64,
    pub bs_position: Vec3,
    pub ring_center: Vec3,
    pub ring_radius: f64,
    /// Path amplitudes scale as `reference_distance / path_length`.
    pub reference_distance: f64,
    pub train_area: Area,
    pub test_area: Area,
    pub motion: MotionParams,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            carrier_frequency: 3.5e9,
            bandwidth: 9e6,
            n_c: 8,
            array: ArraySpec::Linear { n: 8 },
            paths: 5,
            speed_of_light: SPEED_OF_LIGHT,
            scene_seed: 7,
            bs_position: Vec3::new(0.0, 0.0, 10.0),
            ring_center: Vec3::new(0.0, 0.0, 0.0),
            ring_radius: 60.0,
            reference_distance: 50.0,
            // a test strip flanked by two training strips along one street
            train_area: Area::new(vec![
                Region::new((40.0, 80.0), (-20.0, -4.0), 1.5),
                Region::new((40.0, 80.0), (4.0, 20.0), 1.5),
            ]),
            test_area: Region::new((40.0, 80.0), (-3.5, 3.5), 1.5).into(),
            motion: MotionParams::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn n_t(&self) -> usize {
        self.array.len()
    }

    pub fn wavelength(&self) -> f64 {
        self.speed_of_light / self.carrier_frequency
    }

    /// Half-wavelength spaced array at the carrier.
    pub fn geometry(&self) -> Result<ArrayGeometry> {
        let spacing = 0.5 * self.wavelength();
        match self.array {
            ArraySpec::Linear { n } => ArrayGeometry::linear(n, spacing),
            ArraySpec::Planar { rows, cols } => ArrayGeometry::planar(rows, cols, spacing),
        }
    }

    /// Uniform grid spanning the band edge to edge; a single subcarrier
    /// sits at the carrier.
    pub fn subcarrier_frequencies(&self) -> Vec<f64> {
        if self.n_c == 1 {
            return vec![self.carrier_frequency];
        }
        let step = self.bandwidth / (self.n_c - 1) as f64;
        (0..self.n_c)
            .map(|m| self.carrier_frequency - 0.5 * self.bandwidth + m as f64 * step)
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.carrier_frequency > 0.0) || !(self.speed_of_light > 0.0) {
            return Err(invalid("carrier frequency and speed of light must be positive"));
        }
        if self.n_c == 0 || self.array.is_empty() {
            return Err(invalid("need at least one antenna and one subcarrier"));
        }
        if self.n_c > 1 && !(self.bandwidth > 0.0 && self.bandwidth < 2.0 * self.carrier_frequency) {
            return Err(invalid(format!("bandwidth {} out of range", self.bandwidth)));
        }
        if self.paths == 0 {
            return Err(invalid("path count must be at least 1"));
        }
        if !(self.ring_radius > 0.0) || !(self.reference_distance > 0.0) {
            return Err(invalid("ring radius and reference distance must be positive"));
        }
        self.train_area.validate("train")?;
        self.test_area.validate("test")?;
        if self.train_area.overlaps(&self.test_area) {
            return Err(invalid(format!(
                "train area {} overlaps test area {}",
                self.train_area.to_text(),
                self.test_area.to_text()
            )));
        }
        self.motion.validate()?;
        for r in self.train_area.boxes().iter().chain(self.test_area.boxes()) {
            self.motion.check_region(r)?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scatterer {
    pub position: Vec3,
    pub gain: f64,
    pub phase: f64,
}

/// Base station plus a fixed scatterer set drawn once per scene seed.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub bs: Vec3,
    pub scatterers: Vec<Scatterer>,
    reference_distance: f64,
    speed_of_light: f64,
}

impl Scene {
    pub fn generate(scenario: &ScenarioConfig, scene_seed: u64) -> Self {
        let mut rng = seed::rng(scene_seed, "scatterers", 0);
        let scatterers = (1..scenario.paths)
            .map(|_| {
                let angle = rng.random_range(0.0..2.0 * PI);
                let radius = scenario.ring_radius * rng.random_range(0.85..1.15);
                let height = rng.random_range(2.0..20.0);
                Scatterer {
                    position: Vec3::new(
                        scenario.ring_center.x + radius * angle.cos(),
                        scenario.ring_center.y + radius * angle.sin(),
                        height,
                    ),
                    gain: rng.random_range(0.3..0.9),
                    phase: rng.random_range(0.0..2.0 * PI),
                }
            })
            .collect();
        Self {
            bs: scenario.bs_position,
            scatterers,
            reference_distance: scenario.reference_distance,
            speed_of_light: scenario.speed_of_light,
        }
    }

    /// Line of sight first, then one single-bounce path per scatterer.
    pub fn paths(&self, user: Vec3) -> Result<Vec<PathParams>> {
        let c = self.speed_of_light;
        let los = self.bs.distance(user);
        let mut out = Vec::with_capacity(1 + self.scatterers.len());
        out.push(PathParams::new(
            Complex64::new(self.reference_distance / los, 0.0),
            los / c,
            (user - self.bs).normalized(),
        )?);
        for s in &self.scatterers {
            let length = self.bs.distance(s.position) + s.position.distance(user);
            let amp = Complex64::from_polar(s.gain * self.reference_distance / length, s.phase);
            out.push(PathParams::new(
                amp,
                length / c,
                (s.position - self.bs).normalized(),
            )?);
        }
        Ok(out)
    }

    /// Channel sequence along `positions`, slots numbered from `start_slot`.
    pub fn sequence(
        &self,
        scenario: &ScenarioConfig,
        geometry: &ArrayGeometry,
        positions: Vec<Vec3>,
        mobility: Mobility,
        start_slot: u64,
    ) -> Result<ChannelSequence> {
        let slots = positions
            .iter()
            .enumerate()
            .map(|(k, &p)| {
                Ok(assemble_channel(&self.paths(p)?, geometry, scenario).with_slot(start_slot + k as u64))
            })
            .collect::<Result<Vec<ChannelMatrix>>>()?;
        ChannelSequence::new(slots, positions, mobility)
    }
}

pub fn scene_to_paths(position: Vec3, scenario: &ScenarioConfig, scene_seed: u64) -> Result<Vec<PathParams>> {
    Scene::generate(scenario, scene_seed).paths(position)
}
