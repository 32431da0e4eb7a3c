use std::collections::VecDeque;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use crate::channel::{
    disturb_with, extract_pilot, generate_trajectory, ChannelMatrix, ChannelSequence, Mobility, ScenarioConfig,
    Scene,
};
use crate::error::{invalid, shape, Error, Result};
use crate::nn::{Model, Sample};
use crate::seed;

use super::metrics::{nmse, to_db};
use super::report::{DisturbMode, InputNoise};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ServeMode {
    /// The window always holds true past channels.
    IdealPast,
    /// After the first `n` slots the window holds earlier deductions.
    Autoregressive,
}

impl ServeMode {
    pub fn name(self) -> &'static str {
        match self {
            ServeMode::IdealPast => "ideal-past",
            ServeMode::Autoregressive => "autoregressive",
        }
    }
}

impl fmt::Display for ServeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ServeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ideal-past" => Ok(ServeMode::IdealPast),
            "autoregressive" => Ok(ServeMode::Autoregressive),
            _ => Err(Error::Config(format!("unknown serving mode {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Source {
    True,
    Deduced,
}

/// One window entry: the slot it stands for and where it came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowEntry {
    pub slot: u64,
    pub source: Source,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ServeRow {
    pub slot: u64,
    pub nmse: f64,
    pub window: Vec<WindowEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ServeLog {
    pub model: String,
    pub mode: ServeMode,
    pub past: usize,
    pub rows: Vec<ServeRow>,
}

impl ServeLog {
    pub fn nmse(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.nmse).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("slot,nmse,nmse_db,window\n");
        for r in &self.rows {
            let window: Vec<String> = r
                .window
                .iter()
                .map(|e| {
                    let tag = match e.source {
                        Source::True => 't',
                        Source::Deduced => 'd',
                    };
                    format!("{tag}{}", e.slot)
                })
                .collect();
            let _ = writeln!(s, "{},{:e},{:.6},{}", r.slot, r.nmse, to_db(r.nmse), window.join(" "));
        }
        s
    }
}

/// Serves a user along `truth`. The first `past` slots seed the window with
/// true channels; every later slot is deduced from the window plus the pilot
/// readout of the true present channel. `noise` disturbs channels as they
/// enter the window (and the pilot in all-inputs mode); the ground truth
/// used for scoring is never disturbed.
pub fn serve_trajectory(
    model: &Model,
    truth: &ChannelSequence,
    past: usize,
    mode: ServeMode,
    noise: &InputNoise,
) -> Result<ServeLog> {
    if past != model.past_len() {
        return Err(shape(
            "serve",
            format!("window of {past} for a model that reads {} past slots", model.past_len()),
        ));
    }
    let slots = truth.slots();
    if slots.len() <= past {
        return Err(invalid(format!("{} slots leave nothing to serve after a window of {past}", slots.len())));
    }
    let pattern = model.pattern()?;
    let mut rng = seed::rng(noise.seed, "serve", 0);
    let mut store = |h: &ChannelMatrix| disturb_with(h, noise.spec, &mut rng);

    let mut window: VecDeque<(ChannelMatrix, WindowEntry)> = slots[..past]
        .iter()
        .map(|h| {
            (
                store(h),
                WindowEntry {
                    slot: h.slot,
                    source: Source::True,
                },
            )
        })
        .collect();
    let mut rows = Vec::with_capacity(slots.len() - past);
    for h in &slots[past..] {
        let mut pilot = extract_pilot(h, &pattern)?;
        if noise.mode == DisturbMode::AllInputs {
            pilot = store(&pilot);
        }
        let sample = Sample {
            past: window.iter().map(|(m, _)| m.clone()).collect(),
            pilot,
            truth: Some(h.clone()),
        };
        let out = model.deduce_batch(std::slice::from_ref(&sample))?.remove(0);
        rows.push(ServeRow {
            slot: h.slot,
            nmse: nmse(h, &out)?,
            window: window.iter().map(|(_, e)| *e).collect(),
        });
        if past > 0 {
            let (next, source) = match mode {
                ServeMode::IdealPast => (h, Source::True),
                ServeMode::Autoregressive => (&out, Source::Deduced),
            };
            window.pop_front();
            window.push_back((store(next), WindowEntry { slot: h.slot, source }));
        }
    }
    Ok(ServeLog {
        model: model.name(),
        mode,
        past,
        rows,
    })
}

/// True channels along one fresh trajectory inside the scenario's test area.
pub fn serving_truth(scenario: &ScenarioConfig, mobility: Mobility, slots: usize, seed: u64) -> Result<ChannelSequence> {
    scenario.validate()?;
    let own = seed::derive(seed, "serve-route", 0);
    let region = scenario.test_area.pick(&mut seed::rng(own, "box", 0));
    let positions = generate_trajectory(mobility, slots, region, &scenario.motion, own)?;
    let scene = Scene::generate(scenario, scenario.scene_seed);
    scene.sequence(scenario, &scenario.geometry()?, positions, mobility, 0)
}
