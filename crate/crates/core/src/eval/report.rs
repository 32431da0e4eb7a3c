use std::fmt::{self, Write as _};
use std::str::FromStr;

use crate::channel::{disturb_with, ChannelMatrix, Dataset, DisturbanceSpec};
use crate::error::{invalid, Error, Result};
use crate::nn::{Model, Sample};
use crate::seed;

use super::metrics::{cosine_corr_each, mean, nmse_each, to_db};

/// Which inputs a disturbance touches.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DisturbMode {
    AllInputs,
    PastOnly,
}

impl DisturbMode {
    pub fn name(self) -> &'static str {
        match self {
            DisturbMode::AllInputs => "all-inputs",
            DisturbMode::PastOnly => "past-only",
        }
    }
}

impl fmt::Display for DisturbMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DisturbMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all-inputs" => Ok(DisturbMode::AllInputs),
            "past-only" => Ok(DisturbMode::PastOnly),
            _ => Err(Error::Config(format!("unknown disturbance mode {s:?}"))),
        }
    }
}

/// Evaluation-time input noise. Sample `i` draws from its own stream under
/// `seed`, so any cell can be recomputed alone.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InputNoise {
    pub spec: DisturbanceSpec,
    pub mode: DisturbMode,
    pub seed: u64,
}

impl InputNoise {
    pub fn none() -> Self {
        Self {
            spec: DisturbanceSpec::none(),
            mode: DisturbMode::AllInputs,
            seed: 0,
        }
    }

    pub fn apply(&self, samples: &[Sample]) -> Vec<Sample> {
        samples
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let mut rng = seed::rng(self.seed, "disturb", i as u64);
                let past = s.past.iter().map(|h| disturb_with(h, self.spec, &mut rng)).collect();
                let pilot = match self.mode {
                    DisturbMode::AllInputs => disturb_with(&s.pilot, self.spec, &mut rng),
                    DisturbMode::PastOnly => s.pilot.clone(),
                };
                Sample {
                    past,
                    pilot,
                    truth: s.truth.clone(),
                }
            })
            .collect()
    }
}

/// Deduction queries over the last `past + 1` slots of every sequence.
pub fn test_windows(model: &Model, data: &Dataset) -> Result<Vec<Sample>> {
    let need = model.past_len() + 1;
    let pattern = model.pattern()?;
    data.sequences
        .iter()
        .map(|seq| {
            let slots = seq.slots();
            if slots.len() < need {
                return Err(invalid(format!(
                    "test sequence of {} slots is shorter than the {need}-slot window",
                    slots.len()
                )));
            }
            Sample::from_window(&slots[slots.len() - need..], &pattern)
        })
        .collect()
}

/// Labels identifying one evaluation cell.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Labels {
    pub experiment: String,
    pub cell: String,
    pub seed: u64,
}

impl Labels {
    pub fn new(experiment: impl Into<String>, cell: impl Into<String>, seed: u64) -> Self {
        Self {
            experiment: experiment.into(),
            cell: cell.into(),
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub experiment: String,
    pub model: String,
    pub cell: String,
    pub test_set: String,
    pub seed: u64,
    pub nmse: f64,
    pub nmse_db: f64,
    pub rho: f64,
    pub per_sample: Vec<f64>,
    pub config: Vec<(String, String)>,
}

impl EvalReport {
    /// `experiment_model_cell_testset_seed`, safe as a file stem.
    pub fn stem(&self) -> String {
        file_stem(&[&self.experiment, &self.model, &self.cell, &self.test_set, &self.seed.to_string()])
    }
}

pub(crate) fn file_stem(parts: &[&str]) -> String {
    parts
        .iter()
        .map(|p| {
            p.chars()
                .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '-' })
                .collect::<String>()
        })
        .collect::<Vec<_>>()
        .join("_")
}

/// Scores `model` on every sequence of `data`; the last slot is the present.
pub fn evaluate(model: &Model, data: &Dataset, noise: &InputNoise, labels: &Labels) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(invalid("empty test set"));
    }
    let clean = test_windows(model, data)?;
    let samples = noise.apply(&clean);
    let truths: Vec<ChannelMatrix> = clean
        .iter()
        .map(|s| s.truth.clone().expect("windows carry the truth"))
        .collect();
    let preds = model.deduce_batch(&samples)?;
    let per_sample = nmse_each(&truths, &preds)?;
    let rho = mean(&cosine_corr_each(&truths, &preds)?);
    let nmse = mean(&per_sample);
    let test_set = data.sequences[0].mobility.name().to_string();
    let mut config = vec![
        ("sigma".to_string(), noise.spec.sigma().to_string()),
        ("disturb_mode".to_string(), noise.mode.to_string()),
        ("noise_seed".to_string(), noise.seed.to_string()),
    ];
    if let Model::Net(n) = model {
        config.extend(
            n.spec
                .to_manifest()
                .lines()
                .filter_map(|l| l.split_once('='))
                .map(|(k, v)| (k.to_string(), v.to_string())),
        );
    }
    Ok(EvalReport {
        experiment: labels.experiment.clone(),
        model: model.name(),
        cell: labels.cell.clone(),
        test_set,
        seed: labels.seed,
        nmse,
        nmse_db: to_db(nmse),
        rho,
        per_sample,
        config,
    })
}

pub const REPORT_HEADER: &str = "experiment,model,cell,test_set,seed,nmse,nmse_db,rho,samples";

pub fn reports_csv(reports: &[EvalReport]) -> String {
    let mut s = format!("{REPORT_HEADER}\n");
    for r in reports {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{:e},{:.6},{:.9},{}",
            r.experiment,
            r.model,
            r.cell,
            r.test_set,
            r.seed,
            r.nmse,
            r.nmse_db,
            r.rho,
            r.per_sample.len()
        );
    }
    s
}

/// Reads rows written by [`reports_csv`]. Per-sample lists and the config
/// echo are not part of the table and come back empty.
pub fn parse_reports_csv(text: &str) -> Result<Vec<EvalReport>> {
    let mut lines = text.lines();
    if lines.next() != Some(REPORT_HEADER) {
        return Err(Error::Format("report table lacks the expected header".into()));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            let bad = || Error::Format(format!("report row {l:?}"));
            if f.len() != 9 {
                return Err(bad());
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
            Ok(EvalReport {
                experiment: f[0].into(),
                model: f[1].into(),
                cell: f[2].into(),
                test_set: f[3].into(),
                seed: f[4].parse().map_err(|_| bad())?,
                nmse: num(f[5])?,
                nmse_db: num(f[6])?,
                rho: num(f[7])?,
                per_sample: Vec::new(),
                config: Vec::new(),
            })
        })
        .collect()
}
