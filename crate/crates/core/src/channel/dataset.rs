//! Binary sequence container.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! "CDS1" | u32 n_t | u32 n_c | u32 count | count × (u32 length, u32 mobility)
//!        | every entry of every slot as f64 re, f64 im
//!        | u64 text length | text
//! ```
//!
//! The text block holds `key=value` lines followed by one
//! `seq <i> start=<slot> pos=x,y,z;...` line per sequence.

use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;

use super::{generate_trajectory, Area, ChannelMatrix, ChannelSequence, Mobility, ScenarioConfig, Scene, Vec3};
use crate::error::{invalid, Error, IoContext, Result};
use crate::seed;

const MAGIC: &[u8; 4] = b"CDS1";

pub const TRAIN_FILE: &str = "train.cds";
pub const TEST_MOBILE_FILE: &str = "test_mobile.cds";
pub const TEST_QUASI_STATIC_FILE: &str = "test_quasistatic.cds";

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    n_t: usize,
    n_c: usize,
    pub sequences: Vec<ChannelSequence>,
    /// Free-form provenance stored in the text block.
    pub info: Vec<(String, String)>,
}

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|e| format_err(format!("truncated header: {e}")))?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(|e| format_err(format!("truncated header: {e}")))?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(|e| format_err(format!("truncated payload: {e}")))?;
    Ok(f64::from_le_bytes(b))
}

fn parse_vec3(s: &str) -> Result<Vec3> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.parse::<f64>().map_err(|_| format_err(format!("bad position '{s}'"))))
        .collect::<Result<_>>()?;
    match parts[..] {
        [x, y, z] => Ok(Vec3::new(x, y, z)),
        _ => Err(format_err(format!("bad position '{s}'"))),
    }
}

impl Dataset {
    pub fn new(n_t: usize, n_c: usize, sequences: Vec<ChannelSequence>) -> Result<Self> {
        if let Some(s) = sequences.iter().find(|s| s.dims() != (n_t, n_c)) {
            return Err(invalid(format!(
                "sequence of {:?} in a {n_t}x{n_c} dataset",
                s.dims()
            )));
        }
        Ok(Self {
            n_t,
            n_c,
            sequences,
            info: Vec::new(),
        })
    }

    pub fn n_t(&self) -> usize {
        self.n_t
    }

    pub fn n_c(&self) -> usize {
        self.n_c
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn info_value(&self, key: &str) -> Option<&str> {
        self.info.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn shortest(&self) -> usize {
        self.sequences.iter().map(|s| s.len()).min().unwrap_or(0)
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        for v in [self.n_t, self.n_c, self.sequences.len()] {
            w.write_all(&(v as u32).to_le_bytes())?;
        }
        for s in &self.sequences {
            w.write_all(&(s.len() as u32).to_le_bytes())?;
            w.write_all(&s.mobility.code().to_le_bytes())?;
        }
        for s in &self.sequences {
            for m in s.slots() {
                for z in m.entries() {
                    w.write_all(&z.re.to_le_bytes())?;
                    w.write_all(&z.im.to_le_bytes())?;
                }
            }
        }
        let text = self.metadata_text();
        w.write_all(&(text.len() as u64).to_le_bytes())?;
        w.write_all(text.as_bytes())?;
        Ok(())
    }

    fn metadata_text(&self) -> String {
        let mut t = String::new();
        for (k, v) in &self.info {
            let _ = writeln!(t, "{k}={v}");
        }
        for (i, s) in self.sequences.iter().enumerate() {
            let _ = write!(t, "seq {i} start={} pos=", s.slots()[0].slot);
            for (k, p) in s.positions().iter().enumerate() {
                let sep = if k == 0 { "" } else { ";" };
                let _ = write!(t, "{sep}{},{},{}", p.x, p.y, p.z);
            }
            t.push('\n');
        }
        t
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| format_err("missing magic"))?;
        if &magic != MAGIC {
            return Err(format_err(format!("bad magic {magic:?}")));
        }
        let n_t = read_u32(r)? as usize;
        let n_c = read_u32(r)? as usize;
        let count = read_u32(r)? as usize;
        if n_t == 0 || n_c == 0 {
            return Err(format_err("zero channel dimension"));
        }
        let mut headers = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            let len = read_u32(r)? as usize;
            let code = read_u32(r)?;
            let mob = Mobility::from_code(code).ok_or_else(|| format_err(format!("mobility tag {code}")))?;
            if len == 0 {
                return Err(format_err("empty sequence"));
            }
            headers.push((len, mob));
        }
        let mut raw = Vec::with_capacity(headers.len());
        for &(len, _) in &headers {
            let mut slots = Vec::with_capacity(len);
            for _ in 0..len {
                let mut entries = Vec::with_capacity(n_t * n_c);
                for _ in 0..n_t * n_c {
                    let re = read_f64(r)?;
                    let im = read_f64(r)?;
                    entries.push(Complex64::new(re, im));
                }
                slots.push(entries);
            }
            raw.push(slots);
        }
        let text_len = read_u64(r)? as usize;
        let mut text = vec![0u8; text_len];
        r.read_exact(&mut text).map_err(|_| format_err("truncated metadata"))?;
        let text = String::from_utf8(text).map_err(|_| format_err("metadata is not UTF-8"))?;

        let mut info = Vec::new();
        let mut seq_meta: Vec<Option<(u64, Vec<Vec3>)>> = vec![None; count];
        for line in text.lines() {
            if let Some(rest) = line.strip_prefix("seq ") {
                let mut it = rest.splitn(3, ' ');
                let idx: usize = it
                    .next()
                    .and_then(|v| v.parse().ok())
                    .filter(|&i| i < count)
                    .ok_or_else(|| format_err(format!("bad sequence line '{line}'")))?;
                let start: u64 = it
                    .next()
                    .and_then(|v| v.strip_prefix("start="))
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| format_err(format!("bad sequence line '{line}'")))?;
                let pos = it
                    .next()
                    .and_then(|v| v.strip_prefix("pos="))
                    .ok_or_else(|| format_err(format!("bad sequence line '{line}'")))?;
                let positions = pos.split(';').map(parse_vec3).collect::<Result<Vec<_>>>()?;
                seq_meta[idx] = Some((start, positions));
            } else if let Some((k, v)) = line.split_once('=') {
                info.push((k.to_string(), v.to_string()));
            } else {
                return Err(format_err(format!("unparsable metadata line '{line}'")));
            }
        }

        let mut sequences = Vec::with_capacity(count);
        for (i, (slots, (_, mob))) in raw.into_iter().zip(&headers).enumerate() {
            let (start, positions) = seq_meta[i]
                .take()
                .ok_or_else(|| format_err(format!("no metadata for sequence {i}")))?;
            let slots = slots
                .into_iter()
                .enumerate()
                .map(|(k, e)| ChannelMatrix::new(n_t, n_c, e, start + k as u64))
                .collect::<Result<Vec<_>>>()?;
            sequences.push(ChannelSequence::new(slots, positions, *mob)?);
        }
        let mut ds = Dataset::new(n_t, n_c, sequences)?;
        ds.info = info;
        Ok(ds)
    }

    /// Writes through a temporary sibling file and renames into place.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), &self.to_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).at(path)?;
        Self::read_from(&mut bytes.as_slice())
    }
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("out")
    ));
    std::fs::write(&tmp, bytes).at(&tmp)?;
    std::fs::rename(&tmp, path).at(path)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DatasetCounts {
    pub train: usize,
    pub train_len: usize,
    /// Share of training sequences drawn from the quasi-static regime.
    pub train_quasi_static_fraction: f64,
    pub test_mobile: usize,
    pub test_quasi_static: usize,
    /// Past window plus the present slot.
    pub test_len: usize,
}

impl Default for DatasetCounts {
    fn default() -> Self {
        Self {
            train: 3000,
            train_len: 16,
            train_quasi_static_fraction: 0.5,
            test_mobile: 200,
            test_quasi_static: 200,
            test_len: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetBundle {
    pub train: Dataset,
    pub test_mobile: Dataset,
    pub test_quasi_static: Dataset,
}

impl DatasetBundle {
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).at(dir)?;
        self.train.save(dir.join(TRAIN_FILE))?;
        self.test_mobile.save(dir.join(TEST_MOBILE_FILE))?;
        self.test_quasi_static.save(dir.join(TEST_QUASI_STATIC_FILE))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        Ok(Self {
            train: Dataset::load(dir.join(TRAIN_FILE))?,
            test_mobile: Dataset::load(dir.join(TEST_MOBILE_FILE))?,
            test_quasi_static: Dataset::load(dir.join(TEST_QUASI_STATIC_FILE))?,
        })
    }

    pub fn test_set(&self, mobility: Mobility) -> &Dataset {
        match mobility {
            Mobility::Mobile => &self.test_mobile,
            Mobility::QuasiStatic => &self.test_quasi_static,
        }
    }
}

fn simulate(
    scenario: &ScenarioConfig,
    scene: &Scene,
    area: &Area,
    plan: &[Mobility],
    len: usize,
    seed: u64,
    tag: &str,
) -> Result<Vec<ChannelSequence>> {
    let geometry = scenario.geometry()?;
    plan.par_iter()
        .enumerate()
        .map(|(i, &mob)| {
            let own = seed::derive(seed, tag, i as u64);
            let region = area.pick(&mut seed::rng(own, "box", 0));
            let positions = generate_trajectory(mob, len, region, &scenario.motion, own)?;
            scene.sequence(scenario, &geometry, positions, mob, 0)
        })
        .collect()
}

/// Simulates the train split inside the train area and both test splits
/// inside the disjoint test area. Output depends only on the arguments.
pub fn build_dataset(scenario: &ScenarioConfig, counts: &DatasetCounts, seed: u64) -> Result<DatasetBundle> {
    scenario.validate()?;
    if counts.train_len == 0 || counts.test_len == 0 {
        return Err(invalid("sequence lengths must be at least 1"));
    }
    if !(0.0..=1.0).contains(&counts.train_quasi_static_fraction) {
        return Err(invalid("quasi-static fraction must lie in [0, 1]"));
    }
    let scene = Scene::generate(scenario, scenario.scene_seed);
    let (n_t, n_c) = (scenario.n_t(), scenario.n_c);

    let mut pick = seed::rng(seed, "train-mobility", 0);
    let train_plan: Vec<Mobility> = (0..counts.train)
        .map(|_| {
            if pick.random_bool(counts.train_quasi_static_fraction) {
                Mobility::QuasiStatic
            } else {
                Mobility::Mobile
            }
        })
        .collect();

    let info = |split: &str, area: &Area| -> Vec<(String, String)> {
        [
            ("split", split.to_string()),
            ("seed", seed.to_string()),
            ("scene_seed", scenario.scene_seed.to_string()),
            ("paths", scenario.paths.to_string()),
            ("carrier_frequency", scenario.carrier_frequency.to_string()),
            ("bandwidth", scenario.bandwidth.to_string()),
            ("slot_duration", scenario.motion.slot_duration.to_string()),
            ("area", area.to_text()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    };

    let make = |split: &str, area: &Area, plan: &[Mobility], len: usize| -> Result<Dataset> {
        let seqs = simulate(scenario, &scene, area, plan, len, seed, split)?;
        let mut ds = Dataset::new(n_t, n_c, seqs)?;
        ds.info = info(split, area);
        Ok(ds)
    };

    Ok(DatasetBundle {
        train: make("train", &scenario.train_area, &train_plan, counts.train_len)?,
        test_mobile: make(
            "test_mobile",
            &scenario.test_area,
            &vec![Mobility::Mobile; counts.test_mobile],
            counts.test_len,
        )?,
        test_quasi_static: make(
            "test_quasistatic",
            &scenario.test_area,
            &vec![Mobility::QuasiStatic; counts.test_quasi_static],
            counts.test_len,
        )?,
    })
}
