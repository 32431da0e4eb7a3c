//! `key = value` run configuration shared by every subcommand.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::channel::{Area, ArraySpec, DatasetCounts, ScenarioConfig, Vec3};
use crate::error::{Error, IoContext, Result};
use crate::eval::{DisturbMode, ServeMode, SIGMA_GRID};
use crate::nn::{ModelSpec, Variant};
use crate::seed;
use crate::train::TrainConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepKind {
    PilotSize,
    PastLength,
    Disturbance,
}

impl SweepKind {
    pub fn name(self) -> &'static str {
        match self {
            SweepKind::PilotSize => "pilot-size",
            SweepKind::PastLength => "past-length",
            SweepKind::Disturbance => "disturbance",
        }
    }
}

impl FromStr for SweepKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pilot-size" => Ok(SweepKind::PilotSize),
            "past-length" => Ok(SweepKind::PastLength),
            "disturbance" => Ok(SweepKind::Disturbance),
            _ => Err(Error::Config(format!("unknown sweep {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    /// Root of every random stream in the run.
    pub seed: u64,
    pub data_dir: Option<PathBuf>,
    pub scenario: ScenarioConfig,
    pub counts: DatasetCounts,
    /// Model template; channel dims always follow the scenario.
    pub model: ModelSpec,
    /// Attention feed-forward width; `None` follows twice the width.
    pub ff_width: Option<usize>,
    pub train: TrainConfig,
    /// Width entering the learning-rate schedule; `None` follows the model.
    pub schedule_width: Option<usize>,
    pub resume: bool,
    pub train_in_place: bool,
    /// Variants (or `true-channel`) for eval, sweeps and serving.
    pub models: Vec<String>,
    pub sweep: SweepKind,
    pub pilot_sizes: Vec<(usize, usize)>,
    pub past_lengths: Vec<usize>,
    pub sigmas: Vec<f64>,
    pub disturb_mode: DisturbMode,
    pub serve_slots: usize,
    pub serve_modes: Vec<ServeMode>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data_dir: None,
            scenario: ScenarioConfig::default(),
            counts: DatasetCounts::default(),
            model: ModelSpec::default(),
            ff_width: None,
            train: TrainConfig::default(),
            schedule_width: None,
            resume: false,
            train_in_place: false,
            models: vec![Variant::RcdNet.name().into(), Variant::AcdNet.name().into()],
            sweep: SweepKind::PilotSize,
            pilot_sizes: vec![(2, 2), (4, 4), (8, 8)],
            past_lengths: vec![1, 2, 4],
            sigmas: SIGMA_GRID.to_vec(),
            disturb_mode: DisturbMode::AllInputs,
            serve_slots: 200,
            serve_modes: vec![ServeMode::IdealPast, ServeMode::Autoregressive],
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: Display,
{
    v.parse().map_err(|e| Error::Config(format!("{key}: cannot parse {v:?}: {e}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got {v:?}"))),
    }
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>>
where
    T::Err: Display,
{
    v.split(',').filter(|s| !s.trim().is_empty()).map(|s| parse(key, s.trim())).collect()
}

fn parse_size(key: &str, v: &str) -> Result<(usize, usize)> {
    let (a, b) = v
        .split_once('x')
        .ok_or_else(|| Error::Config(format!("{key}: expected RxC, got {v:?}")))?;
    Ok((parse(key, a.trim())?, parse(key, b.trim())?))
}

fn parse_vec3(key: &str, v: &str) -> Result<Vec3> {
    match parse_list::<f64>(key, v)?[..] {
        [x, y, z] => Ok(Vec3::new(x, y, z)),
        _ => Err(Error::Config(format!("{key}: expected x,y,z, got {v:?}"))),
    }
}

fn parse_array(key: &str, v: &str) -> Result<ArraySpec> {
    if let Some(n) = v.strip_prefix("linear:") {
        return Ok(ArraySpec::Linear { n: parse(key, n)? });
    }
    if let Some(rc) = v.strip_prefix("planar:") {
        let (rows, cols) = parse_size(key, rc)?;
        return Ok(ArraySpec::Planar { rows, cols });
    }
    Err(Error::Config(format!("{key}: expected linear:N or planar:RxC, got {v:?}")))
}

fn join<T: Display>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Sets one key; unknown keys are an error.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let s = &mut self.scenario;
        let m = &mut self.model;
        let t = &mut self.train;
        let c = &mut self.counts;
        match key.trim() {
            "seed" => self.seed = parse(key, v)?,
            "data_dir" => self.data_dir = if v.is_empty() { None } else { Some(PathBuf::from(v)) },
            "carrier_frequency" => s.carrier_frequency = parse(key, v)?,
            "bandwidth" => s.bandwidth = parse(key, v)?,
            "subcarriers" => s.n_c = parse(key, v)?,
            "array" => s.array = parse_array(key, v)?,
            "paths" => s.paths = parse(key, v)?,
            "scene_seed" => s.scene_seed = parse(key, v)?,
            "bs_position" => s.bs_position = parse_vec3(key, v)?,
            "ring_center" => s.ring_center = parse_vec3(key, v)?,
            "ring_radius" => s.ring_radius = parse(key, v)?,
            "reference_distance" => s.reference_distance = parse(key, v)?,
            "train_area" => s.train_area = Area::parse(v)?,
            "test_area" => s.test_area = Area::parse(v)?,
            "slot_duration" => s.motion.slot_duration = parse(key, v)?,
            "speed_min" => s.motion.speed_min = parse(key, v)?,
            "speed_max" => s.motion.speed_max = parse(key, v)?,
            "quasi_static_step" => s.motion.quasi_static_step = parse(key, v)?,
            "turn_probability" => s.motion.turn_probability = parse(key, v)?,
            "train_sequences" => c.train = parse(key, v)?,
            "train_len" => c.train_len = parse(key, v)?,
            "train_quasi_static_fraction" => c.train_quasi_static_fraction = parse(key, v)?,
            "test_mobile" => c.test_mobile = parse(key, v)?,
            "test_quasi_static" => c.test_quasi_static = parse(key, v)?,
            "test_len" => c.test_len = parse(key, v)?,
            "variant" => m.variant = parse(key, v)?,
            "past" => m.past = parse(key, v)?,
            "pilot" => (m.pilot_t, m.pilot_c) = parse_size(key, v)?,
            "k1" => m.k1 = parse(key, v)?,
            "k2" => m.k2 = parse(key, v)?,
            "k3" => m.k3 = parse(key, v)?,
            "width" => m.width = parse(key, v)?,
            "heads" => m.heads = parse(key, v)?,
            "ff_width" => self.ff_width = if v == "auto" { None } else { Some(parse(key, v)?) },
            "estimation_depth" => m.estimation_depth = parse(key, v)?,
            "batch" => t.batch = parse(key, v)?,
            "steps" => t.steps = parse(key, v)?,
            "warmup" => t.warmup = parse(key, v)?,
            "schedule_width" => self.schedule_width = if v == "auto" { None } else { Some(parse(key, v)?) },
            "augment_ratio" => t.augment_ratio = parse(key, v)?,
            "checkpoint_every" => t.checkpoint_every = parse(key, v)?,
            "resume" => self.resume = parse_bool(key, v)?,
            "train_in_place" => self.train_in_place = parse_bool(key, v)?,
            "models" => self.models = parse_list(key, v)?,
            "sweep" => self.sweep = parse(key, v)?,
            "pilot_sizes" => {
                self.pilot_sizes = v.split(',').map(|p| parse_size(key, p.trim())).collect::<Result<_>>()?
            }
            "past_lengths" => self.past_lengths = parse_list(key, v)?,
            "sigmas" => self.sigmas = parse_list(key, v)?,
            "disturb_mode" => self.disturb_mode = parse(key, v)?,
            "serve_slots" => self.serve_slots = parse(key, v)?,
            "serve_modes" => self.serve_modes = parse_list(key, v)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Applies every `key = value` line of `text`; `#` starts a comment.
    pub fn merge_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got {raw:?}", i + 1)))?;
            self.set(k, v)
                .map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.merge_text(&std::fs::read_to_string(path).at(path)?)?;
        Ok(cfg)
    }

    /// Every key with its effective value, in a fixed order; feeding the
    /// result back through [`RunConfig::merge_text`] reproduces the config.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let s = &self.scenario;
        let m = &self.model;
        let t = &self.train;
        let c = &self.counts;
        let vec3 = |p: Vec3| format!("{},{},{}", p.x, p.y, p.z);
        let array = match s.array {
            ArraySpec::Linear { n } => format!("linear:{n}"),
            ArraySpec::Planar { rows, cols } => format!("planar:{rows}x{cols}"),
        };
        let sizes: Vec<String> = self.pilot_sizes.iter().map(|(a, b)| format!("{a}x{b}")).collect();
        vec![
            ("seed", self.seed.to_string()),
            ("data_dir", self.data_dir.as_ref().map(|p| p.display().to_string()).unwrap_or_default()),
            ("carrier_frequency", s.carrier_frequency.to_string()),
            ("bandwidth", s.bandwidth.to_string()),
            ("subcarriers", s.n_c.to_string()),
            ("array", array),
            ("paths", s.paths.to_string()),
            ("scene_seed", s.scene_seed.to_string()),
            ("bs_position", vec3(s.bs_position)),
            ("ring_center", vec3(s.ring_center)),
            ("ring_radius", s.ring_radius.to_string()),
            ("reference_distance", s.reference_distance.to_string()),
            ("train_area", s.train_area.to_text()),
            ("test_area", s.test_area.to_text()),
            ("slot_duration", s.motion.slot_duration.to_string()),
            ("speed_min", s.motion.speed_min.to_string()),
            ("speed_max", s.motion.speed_max.to_string()),
            ("quasi_static_step", s.motion.quasi_static_step.to_string()),
            ("turn_probability", s.motion.turn_probability.to_string()),
            ("train_sequences", c.train.to_string()),
            ("train_len", c.train_len.to_string()),
            ("train_quasi_static_fraction", c.train_quasi_static_fraction.to_string()),
            ("test_mobile", c.test_mobile.to_string()),
            ("test_quasi_static", c.test_quasi_static.to_string()),
            ("test_len", c.test_len.to_string()),
            ("variant", m.variant.to_string()),
            ("past", m.past.to_string()),
            ("pilot", format!("{}x{}", m.pilot_t, m.pilot_c)),
            ("k1", m.k1.to_string()),
            ("k2", m.k2.to_string()),
            ("k3", m.k3.to_string()),
            ("width", m.width.to_string()),
            ("heads", m.heads.to_string()),
            ("ff_width", self.ff_width.map(|f| f.to_string()).unwrap_or_else(|| "auto".into())),
            ("estimation_depth", m.estimation_depth.to_string()),
            ("batch", t.batch.to_string()),
            ("steps", t.steps.to_string()),
            ("warmup", t.warmup.to_string()),
            ("schedule_width", self.schedule_width.map(|f| f.to_string()).unwrap_or_else(|| "auto".into())),
            ("augment_ratio", t.augment_ratio.to_string()),
            ("checkpoint_every", t.checkpoint_every.to_string()),
            ("resume", self.resume.to_string()),
            ("train_in_place", self.train_in_place.to_string()),
            ("models", self.models.join(",")),
            ("sweep", self.sweep.name().to_string()),
            ("pilot_sizes", sizes.join(",")),
            ("past_lengths", join(&self.past_lengths)),
            ("sigmas", join(&self.sigmas)),
            ("disturb_mode", self.disturb_mode.to_string()),
            ("serve_slots", self.serve_slots.to_string()),
            ("serve_modes", join(&self.serve_modes)),
        ]
    }

    pub fn echo(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// The model template with channel dims taken from the scenario.
    pub fn model_spec(&self, variant: Variant) -> ModelSpec {
        let mut spec = self.model.with_variant(variant);
        spec.n_t = self.scenario.n_t();
        spec.n_c = self.scenario.n_c;
        spec.ff_width = self.ff_width.unwrap_or(2 * spec.width);
        spec
    }

    pub fn data_seed(&self) -> u64 {
        seed::derive(self.seed, "data", 0)
    }

    /// Training settings with the batch stream derived from the root seed.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: seed::derive(self.seed, "train", 0),
            schedule_width: self.schedule_width.unwrap_or(self.model.width),
            ..self.train.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn echo_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.set("array", "planar:4x2").unwrap();
        cfg.set("pilot_sizes", "2x2,4x4").unwrap();
        cfg.set("serve_modes", "autoregressive").unwrap();
        cfg.set("ff_width", "96").unwrap();
        let mut back = RunConfig::default();
        back.merge_text(&cfg.echo()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_key_is_rejected() {
        let err = RunConfig::default().merge_text("stepz = 3").unwrap_err();
        assert!(err.to_string().contains("stepz"), "{err}");
    }
}
