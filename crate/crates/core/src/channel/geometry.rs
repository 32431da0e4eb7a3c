use std::f64::consts::PI;

use num_complex::Complex64;

use super::{ChannelMatrix, ScenarioConfig, Vec3};
use crate::error::{invalid, Result};

const UNIT_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ArrayLayout {
    Linear,
    Planar,
}

/// Antenna displacements relative to the first element, in meters.
#[derive(Clone, Debug, PartialEq)]
pub struct ArrayGeometry {
    displacements: Vec<Vec3>,
    layout: ArrayLayout,
}

impl ArrayGeometry {
    pub fn new(displacements: Vec<Vec3>, layout: ArrayLayout) -> Result<Self> {
        match displacements.first() {
            None => Err(invalid("array needs at least one antenna")),
            Some(d) if *d != Vec3::ZERO => Err(invalid("first antenna must sit at the origin")),
            _ => Ok(Self {
                displacements,
                layout,
            }),
        }
    }

    /// Uniform linear array along the y axis.
    pub fn linear(n: usize, spacing: f64) -> Result<Self> {
        let d = (0..n).map(|i| Vec3::new(0.0, i as f64 * spacing, 0.0)).collect();
        Self::new(d, ArrayLayout::Linear)
    }

    /// Uniform planar array in the y–z plane, `rows` along z and `cols`
    /// along y, indexed row-major.
    pub fn planar(rows: usize, cols: usize, spacing: f64) -> Result<Self> {
        let d = (0..rows * cols)
            .map(|i| Vec3::new(0.0, (i % cols) as f64 * spacing, (i / cols) as f64 * spacing))
            .collect();
        Self::new(d, ArrayLayout::Planar)
    }

    pub fn displacements(&self) -> &[Vec3] {
        &self.displacements
    }

    pub fn layout(&self) -> ArrayLayout {
        self.layout
    }

    pub fn len(&self) -> usize {
        self.displacements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.displacements.is_empty()
    }
}

fn check_unit(direction: Vec3) -> Result<()> {
    if (direction.norm() - 1.0).abs() > UNIT_TOL {
        return Err(invalid(format!(
            "direction {direction:?} is not a unit vector (norm {})",
            direction.norm()
        )));
    }
    Ok(())
}

/// Steering vector: entry `i` is `exp(−j2π f (d_i·p)/c)`.
pub fn array_response(geometry: &ArrayGeometry, direction: Vec3, f: f64) -> Result<Vec<Complex64>> {
    check_unit(direction)?;
    Ok(response(geometry, direction, f, super::SPEED_OF_LIGHT))
}

fn response(geometry: &ArrayGeometry, direction: Vec3, f: f64, c: f64) -> Vec<Complex64> {
    geometry
        .displacements
        .iter()
        .map(|d| Complex64::from_polar(1.0, -2.0 * PI * f * d.dot(direction) / c))
        .collect()
}

/// One propagation path: complex gain, delay in seconds, and unit departure
/// direction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PathParams {
    amplitude: Complex64,
    delay: f64,
    direction: Vec3,
}

impl PathParams {
    pub fn new(amplitude: Complex64, delay: f64, direction: Vec3) -> Result<Self> {
        check_unit(direction)?;
        if delay.is_nan() || delay < 0.0 {
            return Err(invalid(format!("negative path delay {delay}")));
        }
        Ok(Self {
            amplitude,
            delay,
            direction,
        })
    }

    pub fn amplitude(&self) -> Complex64 {
        self.amplitude
    }

    pub fn delay(&self) -> f64 {
        self.delay
    }

    pub fn direction(&self) -> Vec3 {
        self.direction
    }
}

/// Antenna-domain channel at frequency `f`, summed over `paths`.
pub fn channel_at_frequency(paths: &[PathParams], geometry: &ArrayGeometry, f: f64) -> Vec<Complex64> {
    channel_at_frequency_with_c(paths, geometry, f, super::SPEED_OF_LIGHT)
}

fn channel_at_frequency_with_c(
    paths: &[PathParams],
    geometry: &ArrayGeometry,
    f: f64,
    c: f64,
) -> Vec<Complex64> {
    let mut h = vec![Complex64::new(0.0, 0.0); geometry.len()];
    for p in paths {
        let gain = p.amplitude * Complex64::from_polar(1.0, -2.0 * PI * f * p.delay);
        for (h, a) in h.iter_mut().zip(response(geometry, p.direction, f, c)) {
            *h += gain * a;
        }
    }
    h
}

/// Full `N_t × N_c` matrix: column `m` is the channel at subcarrier `f_m`.
pub fn assemble_channel(
    paths: &[PathParams],
    geometry: &ArrayGeometry,
    scenario: &ScenarioConfig,
) -> ChannelMatrix {
    let freqs = scenario.subcarrier_frequencies();
    let columns: Vec<Vec<Complex64>> = freqs
        .iter()
        .map(|&f| channel_at_frequency_with_c(paths, geometry, f, scenario.speed_of_light))
        .collect();
    ChannelMatrix::from_fn(geometry.len(), freqs.len(), |a, m| columns[m][a])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_wavelength_pair_alternates_sign() {
        let f = 3.5e9;
        let g = ArrayGeometry::linear(2, super::super::SPEED_OF_LIGHT / (2.0 * f)).unwrap();
        // rotate so the array lies along x
        let g = ArrayGeometry::new(
            g.displacements().iter().map(|d| Vec3::new(d.y, 0.0, 0.0)).collect(),
            ArrayLayout::Linear,
        )
        .unwrap();
        let a = array_response(&g, Vec3::new(1.0, 0.0, 0.0), f).unwrap();
        assert!((a[0] - Complex64::new(1.0, 0.0)).norm() < 1e-12);
        assert!((a[1] - Complex64::new(-1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn broadside_response_is_all_ones() {
        let g = ArrayGeometry::planar(4, 8, 0.05).unwrap();
        let a = array_response(&g, Vec3::new(1.0, 0.0, 0.0), 3.5e9).unwrap();
        assert!(a.iter().all(|z| (z - Complex64::new(1.0, 0.0)).norm() < 1e-15));
    }

    #[test]
    fn rejects_non_unit_direction() {
        let g = ArrayGeometry::linear(4, 0.05).unwrap();
        assert!(array_response(&g, Vec3::new(1.0, 1.0, 0.0), 3.5e9).is_err());
        assert!(PathParams::new(Complex64::new(1.0, 0.0), 0.0, Vec3::new(0.0, 2.0, 0.0)).is_err());
        assert!(PathParams::new(Complex64::new(1.0, 0.0), -1.0, Vec3::new(0.0, 1.0, 0.0)).is_err());
    }

    #[test]
    fn array_must_start_at_origin() {
        assert!(ArrayGeometry::new(vec![Vec3::new(0.0, 1.0, 0.0)], ArrayLayout::Linear).is_err());
        assert!(ArrayGeometry::new(vec![], ArrayLayout::Linear).is_err());
    }

    #[test]
    fn empty_path_list_gives_zero_channel() {
        let g = ArrayGeometry::linear(3, 0.05).unwrap();
        assert!(channel_at_frequency(&[], &g, 3.5e9).iter().all(|z| z.norm() == 0.0));
    }
}
