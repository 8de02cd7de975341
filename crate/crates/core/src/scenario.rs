//! Single-cell drops: uniform user placement on an annulus, distance-based
//! path loss and conversion of physical powers to noise-normalized ones.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Violation, Violations};
use crate::model::{FadingProfile, SystemConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellGeometry {
    /// Outer cell radius in meters.
    pub cell_radius: f64,
    /// Radius of the inner exclusion circle in meters.
    pub exclusion_radius: f64,
    pub pathloss_exponent: f64,
    /// Attenuation constant `d̄` of the path-loss law `d̄ / d^ν`.
    pub attenuation_const: f64,
}

impl Default for CellGeometry {
    fn default() -> Self {
        CellGeometry {
            cell_radius: 500.0,
            exclusion_radius: 35.0,
            pathloss_exponent: 3.76,
            attenuation_const: 10f64.powf(-3.5),
        }
    }
}

impl CellGeometry {
    pub fn validate(&self) -> Result<()> {
        let mut v = Vec::new();
        if !(self.exclusion_radius > 0.0 && self.exclusion_radius < self.cell_radius && self.cell_radius.is_finite()) {
            v.push(Violation {
                path: "geometry.cell_radius".into(),
                message: format!(
                    "need 0 < exclusion_radius < cell_radius, got {} and {}",
                    self.exclusion_radius, self.cell_radius
                ),
            });
        }
        if !(self.pathloss_exponent > 2.0 && self.pathloss_exponent.is_finite()) {
            v.push(Violation {
                path: "geometry.pathloss_exponent".into(),
                message: format!("must exceed 2, got {}", self.pathloss_exponent),
            });
        }
        if !(self.attenuation_const > 0.0 && self.attenuation_const.is_finite()) {
            v.push(Violation {
                path: "geometry.attenuation_const".into(),
                message: format!("must be positive, got {}", self.attenuation_const),
            });
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(Violations(v)))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadioParams {
    pub bandwidth_hz: f64,
    pub noise_psd_dbm_hz: f64,
    /// Total downlink transmit power in watts.
    pub tx_power_watts: f64,
}

impl Default for RadioParams {
    fn default() -> Self {
        RadioParams {
            bandwidth_hz: 20e6,
            noise_psd_dbm_hz: -174.0,
            tx_power_watts: 10.0,
        }
    }
}

impl RadioParams {
    pub fn validate(&self) -> Result<()> {
        let mut v = Vec::new();
        if !(self.bandwidth_hz > 0.0 && self.bandwidth_hz.is_finite()) {
            v.push(Violation {
                path: "radio.bandwidth_hz".into(),
                message: format!("must be positive, got {}", self.bandwidth_hz),
            });
        }
        if !(self.tx_power_watts > 0.0 && self.tx_power_watts.is_finite()) {
            v.push(Violation {
                path: "radio.tx_power_watts".into(),
                message: format!("must be positive, got {}", self.tx_power_watts),
            });
        }
        if !self.noise_psd_dbm_hz.is_finite() {
            v.push(Violation {
                path: "radio.noise_psd_dbm_hz".into(),
                message: "must be finite".into(),
            });
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(Violations(v)))
        }
    }

    /// Noise power spectral density in W/Hz.
    pub fn noise_psd_watts(&self) -> f64 {
        10f64.powf((self.noise_psd_dbm_hz - 30.0) / 10.0)
    }

    /// Noise power `W σ²` over the whole band, in watts.
    pub fn noise_power_watts(&self) -> f64 {
        self.bandwidth_hz * self.noise_psd_watts()
    }
}

/// Path-loss gain `d̄ / d^ν` for a distance inside the annulus.
pub fn pathloss(geometry: &CellGeometry, distance_m: f64) -> Result<f64> {
    if !(distance_m >= geometry.exclusion_radius && distance_m <= geometry.cell_radius) {
        return Err(Error::invalid(format!(
            "distance {distance_m} m outside [{}, {}] m",
            geometry.exclusion_radius, geometry.cell_radius
        )));
    }
    Ok(pathloss_unchecked(geometry, distance_m))
}

/// [`pathloss`] without the annulus check.
pub fn pathloss_unchecked(geometry: &CellGeometry, distance_m: f64) -> f64 {
    geometry.attenuation_const / distance_m.powf(geometry.pathloss_exponent)
}

/// Polar position relative to the base station.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub radius_m: f64,
    pub angle_rad: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserDrop {
    pub unicast_positions: Vec<Position>,
    pub multicast_positions: Vec<Vec<Position>>,
    pub fading: FadingProfile,
}

/// Places `n_unicast` unicast terminals and the multicast groups uniformly
/// (in area) on the annulus and computes their path-loss gains.
///
/// Draw order is fixed: unicast terminals first, then groups in order, each
/// terminal taking one radius and one angle draw from a ChaCha20 stream seeded
/// with `seed`.
pub fn place_users(
    geometry: &CellGeometry,
    n_unicast: usize,
    group_sizes: &[usize],
    seed: u64,
) -> Result<UserDrop> {
    geometry.validate()?;
    if group_sizes.contains(&0) {
        return Err(Error::invalid("multicast groups must be non-empty"));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let r_min2 = geometry.exclusion_radius * geometry.exclusion_radius;
    let r_max2 = geometry.cell_radius * geometry.cell_radius;
    let mut draw = || {
        let u: f64 = rng.random();
        let v: f64 = rng.random();
        let radius_m = (r_min2 + u * (r_max2 - r_min2))
            .sqrt()
            .clamp(geometry.exclusion_radius, geometry.cell_radius);
        Position {
            radius_m,
            angle_rad: std::f64::consts::TAU * v,
        }
    };
    let unicast_positions: Vec<Position> = (0..n_unicast).map(|_| draw()).collect();
    let multicast_positions: Vec<Vec<Position>> = group_sizes
        .iter()
        .map(|&k| (0..k).map(|_| draw()).collect())
        .collect();
    let gain = |p: &Position| pathloss_unchecked(geometry, p.radius_m);
    let fading = FadingProfile {
        unicast_gains: unicast_positions.iter().map(gain).collect(),
        multicast_gains: multicast_positions
            .iter()
            .map(|row| row.iter().map(gain).collect())
            .collect(),
    };
    Ok(UserDrop {
        unicast_positions,
        multicast_positions,
        fading,
    })
}

/// System description with energies in physical units (joules per pilot
/// transmission); `None` fields take the usual defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhysicalConfig {
    pub n_antennas: usize,
    pub coherence_length: usize,
    pub n_unicast: usize,
    pub group_sizes: Vec<usize>,
    /// Defaults to `U + G`.
    #[serde(default)]
    pub pilot_length: Option<usize>,
    /// Defaults to `0.1 T` for every unicast terminal.
    #[serde(default)]
    pub unicast_energy: Option<Vec<f64>>,
    /// Defaults to `0.1 T` for every multicast terminal.
    #[serde(default)]
    pub multicast_energy: Option<Vec<Vec<f64>>>,
    /// Defaults to all ones.
    #[serde(default)]
    pub sse_weights: Option<Vec<f64>>,
}

impl PhysicalConfig {
    pub fn new(n_antennas: usize, coherence_length: usize, n_unicast: usize, group_sizes: Vec<usize>) -> Self {
        PhysicalConfig {
            n_antennas,
            coherence_length,
            n_unicast,
            group_sizes,
            pilot_length: None,
            unicast_energy: None,
            multicast_energy: None,
            sse_weights: None,
        }
    }

    /// Default per-pilot energy `0.1 T`.
    pub fn default_energy(&self) -> f64 {
        0.1 * self.coherence_length as f64
    }
}

/// Converts physical powers and energies to noise-normalized values:
/// `P = P̄ / (W σ²)` and `E = Ē / (W σ²)`.
pub fn normalize_powers(radio: &RadioParams, physical: &PhysicalConfig) -> Result<SystemConfig> {
    radio.validate()?;
    let noise = radio.noise_power_watts();
    let default_energy = physical.default_energy() / noise;
    let streams = physical.n_unicast + physical.group_sizes.len();
    Ok(SystemConfig {
        n_antennas: physical.n_antennas,
        coherence_length: physical.coherence_length,
        n_unicast: physical.n_unicast,
        group_sizes: physical.group_sizes.clone(),
        pilot_length: physical.pilot_length.unwrap_or(streams),
        total_power: radio.tx_power_watts / noise,
        unicast_energy_caps: match &physical.unicast_energy {
            Some(e) => e.iter().map(|x| x / noise).collect(),
            None => vec![default_energy; physical.n_unicast],
        },
        multicast_energy_caps: match &physical.multicast_energy {
            Some(e) => e.iter().map(|row| row.iter().map(|x| x / noise).collect()).collect(),
            None => physical.group_sizes.iter().map(|&k| vec![default_energy; k]).collect(),
        },
        sse_weights: physical
            .sse_weights
            .clone()
            .unwrap_or_else(|| vec![1.0; physical.n_unicast]),
    })
}

/// Self-contained scenario document: geometry, radio parameters, the seed and
/// positions of the drop, the normalized configuration and the fading profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub geometry: CellGeometry,
    pub radio: RadioParams,
    pub seed: u64,
    pub physical: PhysicalConfig,
    pub config: SystemConfig,
    pub unicast_positions: Vec<Position>,
    pub multicast_positions: Vec<Vec<Position>>,
    pub fading: FadingProfile,
}

impl Scenario {
    /// Draws a scenario and validates the resulting configuration.
    pub fn generate(
        geometry: CellGeometry,
        radio: RadioParams,
        physical: PhysicalConfig,
        seed: u64,
    ) -> Result<Self> {
        let config = normalize_powers(&radio, &physical)?;
        let drop = place_users(&geometry, physical.n_unicast, &physical.group_sizes, seed)?;
        crate::model::check(&config, &drop.fading)?;
        Ok(Scenario {
            geometry,
            radio,
            seed,
            physical,
            config,
            unicast_positions: drop.unicast_positions,
            multicast_positions: drop.multicast_positions,
            fading: drop.fading,
        })
    }
}
