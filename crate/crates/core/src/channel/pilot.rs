use super::ChannelMatrix;
use crate::error::{invalid, shape, Result};

/// Evenly strided antenna and subcarrier subsets observed by pilots.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PilotPattern {
    n_t: usize,
    n_c: usize,
    antennas: Vec<usize>,
    subcarriers: Vec<usize>,
}

fn strided(full: usize, kept: usize) -> Vec<usize> {
    let stride = full / kept;
    (0..kept).map(|k| k * stride).collect()
}

impl PilotPattern {
    pub fn new(n_t: usize, n_c: usize, pilot_t: usize, pilot_c: usize) -> Result<Self> {
        if pilot_t == 0 || pilot_c == 0 || pilot_t > n_t || pilot_c > n_c {
            return Err(invalid(format!(
                "pilot size {pilot_t}x{pilot_c} does not fit a {n_t}x{n_c} channel"
            )));
        }
        Ok(Self {
            n_t,
            n_c,
            antennas: strided(n_t, pilot_t),
            subcarriers: strided(n_c, pilot_c),
        })
    }

    pub fn antennas(&self) -> &[usize] {
        &self.antennas
    }

    pub fn subcarriers(&self) -> &[usize] {
        &self.subcarriers
    }

    pub fn full_dims(&self) -> (usize, usize) {
        (self.n_t, self.n_c)
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.antennas.len(), self.subcarriers.len())
    }

    /// Places a pilot observation back at its positions in an otherwise zero
    /// full-size matrix.
    pub fn scatter(&self, pilot: &ChannelMatrix) -> Result<ChannelMatrix> {
        if pilot.dims() != self.dims() {
            return Err(shape(
                "scatter",
                format!("pilot {:?} for pattern {:?}", pilot.dims(), self.dims()),
            ));
        }
        let mut full = ChannelMatrix::zeros(self.n_t, self.n_c).with_slot(pilot.slot);
        for (a, &i) in self.antennas.iter().enumerate() {
            for (b, &j) in self.subcarriers.iter().enumerate() {
                full.set(i, j, pilot.get(a, b));
            }
        }
        Ok(full)
    }
}

/// Entry `(a, b)` of the result is `h[antennas[a], subcarriers[b]]`.
pub fn extract_pilot(h: &ChannelMatrix, pattern: &PilotPattern) -> Result<ChannelMatrix> {
    if h.dims() != pattern.full_dims() {
        return Err(shape(
            "extract_pilot",
            format!("channel {:?} for pattern over {:?}", h.dims(), pattern.full_dims()),
        ));
    }
    let (pt, pc) = pattern.dims();
    let mut entries = Vec::with_capacity(pt * pc);
    for &i in &pattern.antennas {
        for &j in &pattern.subcarriers {
            entries.push(h.get(i, j));
        }
    }
    ChannelMatrix::new(pt, pc, entries, h.slot)
}

#[cfg(test)]
mod tests {
    use num_complex::Complex64;

    use super::*;

    #[test]
    fn strided_indices() {
        let p = PilotPattern::new(32, 8, 4, 2).unwrap();
        assert_eq!(p.antennas(), &[0, 8, 16, 24]);
        assert_eq!(p.subcarriers(), &[0, 4]);
    }

    #[test]
    fn oversized_pattern_is_rejected() {
        assert!(PilotPattern::new(4, 4, 5, 1).is_err());
        assert!(PilotPattern::new(4, 4, 0, 1).is_err());
    }

    #[test]
    fn full_pattern_is_identity() {
        let h = ChannelMatrix::from_fn(3, 2, |a, m| Complex64::new(a as f64, m as f64));
        let p = PilotPattern::new(3, 2, 3, 2).unwrap();
        assert_eq!(extract_pilot(&h, &p).unwrap(), h);
    }
}
