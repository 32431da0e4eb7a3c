use std::fmt;
use std::str::FromStr;

use crate::channel::PilotPattern;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Recurrent interaction core.
    RcdNet,
    /// Self-attention interaction core.
    AcdNet,
    /// Pilot-only CMixer mapping.
    Estimation,
    /// Past-only recurrence.
    Prediction,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::RcdNet,
        Variant::AcdNet,
        Variant::Estimation,
        Variant::Prediction,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::RcdNet => "rcdnet",
            Variant::AcdNet => "acdnet",
            Variant::Estimation => "estimation",
            Variant::Prediction => "prediction",
        }
    }

    pub fn uses_pilot(self) -> bool {
        !matches!(self, Variant::Prediction)
    }

    pub fn uses_past(self) -> bool {
        !matches!(self, Variant::Estimation)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown model variant '{s}'")))
    }
}

/// Architecture hyperparameters shared by all four variants; fields a
/// variant does not use are ignored.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelSpec {
    pub variant: Variant,
    pub n_t: usize,
    pub n_c: usize,
    pub pilot_t: usize,
    pub pilot_c: usize,
    /// Number of past slots in the window.
    pub past: usize,
    /// Preliminary-mapping CMixer depth.
    pub k1: usize,
    /// Detailed-representation CMixer depth.
    pub k2: usize,
    /// Attention encoder depth.
    pub k3: usize,
    /// Interaction width.
    pub width: usize,
    pub heads: usize,
    pub ff_width: usize,
    pub estimation_depth: usize,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self::new(Variant::RcdNet)
    }
}

impl ModelSpec {
    pub fn new(variant: Variant) -> Self {
        Self {
            variant,
            n_t: 8,
            n_c: 8,
            pilot_t: 2,
            pilot_c: 2,
            past: 4,
            k1: 3,
            k2: 3,
            k3: 6,
            width: 64,
            heads: 4,
            ff_width: 128,
            estimation_depth: 8,
        }
    }

    pub fn with_variant(&self, variant: Variant) -> Self {
        Self {
            variant,
            ..self.clone()
        }
    }

    /// Real length of one flattened channel.
    pub fn flat_len(&self) -> usize {
        2 * self.n_t * self.n_c
    }

    pub fn pattern(&self) -> Result<PilotPattern> {
        PilotPattern::new(self.n_t, self.n_c, self.pilot_t, self.pilot_c)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_t == 0 || self.n_c == 0 {
            return bad("channel dimensions must be positive".into());
        }
        self.pattern()?;
        if self.variant.uses_past() {
            if self.past == 0 {
                return bad("past window must hold at least one slot".into());
            }
            if self.width == 0 || self.width >= self.flat_len() {
                return bad(format!(
                    "interaction width {} must lie in 1..{}",
                    self.width,
                    self.flat_len()
                ));
            }
        }
        match self.variant {
            Variant::RcdNet | Variant::AcdNet if self.k1 == 0 || self.k2 == 0 => {
                return bad("CMixer depths must be at least 1".into())
            }
            Variant::AcdNet if self.k3 == 0 || self.heads == 0 || self.ff_width == 0 => {
                return bad("attention depth, heads and feed-forward width must be positive".into())
            }
            Variant::AcdNet if self.width % self.heads != 0 => {
                return bad(format!("width {} not divisible by {} heads", self.width, self.heads))
            }
            Variant::Estimation if self.estimation_depth == 0 => {
                return bad("estimation depth must be at least 1".into())
            }
            _ => {}
        }
        Ok(())
    }

    pub fn to_manifest(&self) -> String {
        format!(
            "variant={}\nn_t={}\nn_c={}\npilot_t={}\npilot_c={}\npast={}\nk1={}\nk2={}\nk3={}\nwidth={}\nheads={}\nff_width={}\nestimation_depth={}\n",
            self.variant,
            self.n_t,
            self.n_c,
            self.pilot_t,
            self.pilot_c,
            self.past,
            self.k1,
            self.k2,
            self.k3,
            self.width,
            self.heads,
            self.ff_width,
            self.estimation_depth
        )
    }

    /// Parses the spec out of a manifest; unrelated keys are skipped so
    /// training metadata can share the text.
    pub fn from_manifest(text: &str) -> Result<Self> {
        let mut spec = ModelSpec::default();
        let mut seen_variant = false;
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("manifest line '{line}'")))?;
            let num = || {
                v.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::Config(format!("manifest {k}: '{v}' is not a count")))
            };
            match k.trim() {
                "variant" => {
                    spec.variant = v.trim().parse()?;
                    seen_variant = true;
                }
                "n_t" => spec.n_t = num()?,
                "n_c" => spec.n_c = num()?,
                "pilot_t" => spec.pilot_t = num()?,
                "pilot_c" => spec.pilot_c = num()?,
                "past" => spec.past = num()?,
                "k1" => spec.k1 = num()?,
                "k2" => spec.k2 = num()?,
                "k3" => spec.k3 = num()?,
                "width" => spec.width = num()?,
                "heads" => spec.heads = num()?,
                "ff_width" => spec.ff_width = num()?,
                "estimation_depth" => spec.estimation_depth = num()?,
                _ => {}
            }
        }
        if !seen_variant {
            return Err(Error::Config("manifest has no variant".into()));
        }
        spec.validate()?;
        Ok(spec)
    }
}
