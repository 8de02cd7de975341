//! System configuration, large-scale fading and MMSE estimation statistics.
//!
//! Every power and energy in this module is normalized to unit noise variance.
//! Index conventions: unicast terminals are `m`/`u` in `0..U`, multicast groups
//! are `j`/`g` in `0..G` and members of group `g` are `k`/`t` in `0..K_g`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Violation, Violations};

/// Gains below this are treated as degenerate and rejected.
pub const MIN_GAIN: f64 = 1e-300;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    /// Base-station antennas `N`.
    pub n_antennas: usize,
    /// Coherence interval length `T` in symbols.
    pub coherence_length: usize,
    /// Number of unicast terminals `U`.
    pub n_unicast: usize,
    /// Members per multicast group, `K_1..K_G`.
    pub group_sizes: Vec<usize>,
    /// Uplink pilot length `τ` in symbols.
    pub pilot_length: usize,
    /// Total downlink power `P`.
    pub total_power: f64,
    /// Per-pilot energy caps `E_m` of the unicast terminals.
    pub unicast_energy_caps: Vec<f64>,
    /// Per-pilot energy caps `E_jk` of the multicast terminals.
    pub multicast_energy_caps: Vec<Vec<f64>>,
    /// Weights `α_m` of the unicast sum spectral efficiency.
    pub sse_weights: Vec<f64>,
}

impl SystemConfig {
    pub fn n_groups(&self) -> usize {
        self.group_sizes.len()
    }

    /// `U + G`, the number of orthogonal pilots (and precoded streams).
    pub fn n_streams(&self) -> usize {
        self.n_unicast + self.n_groups()
    }

    pub fn n_multicast_users(&self) -> usize {
        self.group_sizes.iter().sum()
    }

    /// `1 - τ/T`.
    pub fn prelog(&self) -> f64 {
        prelog(self.pilot_length, self.coherence_length)
    }

    /// Zero-forcing beamforming gain `N - G - U`, or an error when it is not positive.
    pub fn zf_gain(&self) -> Result<f64> {
        if self.n_antennas > self.n_streams() {
            Ok((self.n_antennas - self.n_streams()) as f64)
        } else {
            Err(Error::ZfInfeasible {
                n_antennas: self.n_antennas,
                streams: self.n_streams(),
            })
        }
    }

    /// Copy of this configuration with a different pilot length.
    pub fn with_pilot_length(&self, pilot_length: usize) -> Self {
        SystemConfig {
            pilot_length,
            ..self.clone()
        }
    }

    /// All invariant violations of the configuration on its own.
    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut push = |path: String, message: String| out.push(Violation { path, message });

        if self.n_antennas == 0 {
            push("config.n_antennas".into(), "must be positive, got 0".into());
        }
        if self.coherence_length == 0 {
            push("config.coherence_length".into(), "must be positive, got 0".into());
        }
        if self.n_streams() == 0 {
            push("config".into(), "no users: U + G must be at least 1".into());
        }
        for (g, &k) in self.group_sizes.iter().enumerate() {
            if k == 0 {
                push(format!("config.group_sizes[{g}]"), "empty group (K = 0)".into());
            }
        }
        let streams = self.n_streams();
        if self.pilot_length < streams {
            push(
                "config.pilot_length".into(),
                format!("τ < U+G ({} < {streams})", self.pilot_length),
            );
        }
        if self.pilot_length > self.coherence_length {
            push(
                "config.pilot_length".into(),
                format!("τ > T ({} > {})", self.pilot_length, self.coherence_length),
            );
        }
        if !(self.total_power.is_finite() && self.total_power > 0.0) {
            push(
                "config.total_power".into(),
                format!("non-positive or non-finite power {}", self.total_power),
            );
        }
        check_positive_list(
            &mut out,
            "config.unicast_energy_caps",
            &self.unicast_energy_caps,
            self.n_unicast,
            "energy cap",
        );
        check_positive_nested(
            &mut out,
            "config.multicast_energy_caps",
            &self.multicast_energy_caps,
            &self.group_sizes,
            "energy cap",
        );
        check_positive_list(
            &mut out,
            "config.sse_weights",
            &self.sse_weights,
            self.n_unicast,
            "weight",
        );
        out
    }
}

pub(crate) fn prelog(pilot_length: usize, coherence_length: usize) -> f64 {
    1.0 - pilot_length as f64 / coherence_length as f64
}

/// Large-scale fading coefficients `β_u` (unicast) and `η_gk` (multicast).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FadingProfile {
    pub unicast_gains: Vec<f64>,
    pub multicast_gains: Vec<Vec<f64>>,
}

impl FadingProfile {
    pub fn violations(&self, cfg: &SystemConfig) -> Vec<Violation> {
        let mut out = Vec::new();
        check_gains(&mut out, "fading.unicast_gains", &self.unicast_gains, cfg.n_unicast);
        if self.multicast_gains.len() != cfg.n_groups() {
            out.push(Violation {
                path: "fading.multicast_gains".into(),
                message: format!(
                    "shape mismatch: {} groups, expected {}",
                    self.multicast_gains.len(),
                    cfg.n_groups()
                ),
            });
        } else {
            for (g, (gains, &k)) in self.multicast_gains.iter().zip(&cfg.group_sizes).enumerate() {
                check_gains(&mut out, &format!("fading.multicast_gains[{g}]"), gains, k);
            }
        }
        out
    }
}

/// Split of the downlink power between unicast and multicast precoders.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerSplit {
    pub p_unicast: f64,
    pub p_multicast: f64,
}

impl PowerSplit {
    /// Split that spends the whole budget, giving `p_unicast` to unicast.
    pub fn full(total_power: f64, p_unicast: f64) -> Result<Self> {
        if !(0.0..=total_power).contains(&p_unicast) {
            return Err(Error::invalid(format!(
                "unicast power {p_unicast} outside [0, {total_power}]"
            )));
        }
        Ok(PowerSplit {
            p_unicast,
            p_multicast: total_power - p_unicast,
        })
    }

    /// Split with `P_un : P_mu = unicast : multicast`.
    pub fn from_ratio(total_power: f64, unicast: f64, multicast: f64) -> Result<Self> {
        if !(unicast >= 0.0 && multicast >= 0.0 && unicast + multicast > 0.0) {
            return Err(Error::invalid(format!(
                "ratio {unicast}:{multicast} must be non-negative and not both zero"
            )));
        }
        let p_unicast = total_power * unicast / (unicast + multicast);
        Self::full(total_power, p_unicast.min(total_power))
    }

    pub fn total(&self) -> f64 {
        self.p_unicast + self.p_multicast
    }
}

/// Uplink pilot powers `p_u^up` and `q_gk^up`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PilotPowers {
    pub unicast: Vec<f64>,
    pub multicast: Vec<Vec<f64>>,
}

impl PilotPowers {
    /// Pilot powers that spend every terminal's full energy cap over the
    /// configured pilot length, `E / τ`.
    pub fn from_energy_caps(cfg: &SystemConfig) -> Self {
        let tau = cfg.pilot_length as f64;
        PilotPowers {
            unicast: cfg.unicast_energy_caps.iter().map(|e| e / tau).collect(),
            multicast: cfg
                .multicast_energy_caps
                .iter()
                .map(|caps| caps.iter().map(|e| e / tau).collect())
                .collect(),
        }
    }

    pub(crate) fn check_shape(&self, cfg: &SystemConfig) -> Result<()> {
        check_len("pilot_powers.unicast", self.unicast.len(), cfg.n_unicast)?;
        check_nested_shape("pilot_powers.multicast", &self.multicast, &cfg.group_sizes)?;
        let negative = self
            .unicast
            .iter()
            .chain(self.multicast.iter().flatten())
            .any(|&p| !(p >= 0.0 && p.is_finite()));
        if negative {
            return Err(Error::invalid("pilot powers must be finite and non-negative"));
        }
        Ok(())
    }
}

/// Variances of the MMSE channel estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationStats {
    /// `ϑ_u`: variance per antenna of the unicast estimate `f̂_u`.
    pub unicast_var: Vec<f64>,
    /// `ξ_gk`: variance per antenna of the member estimate `ĝ_gk`.
    pub multicast_var: Vec<Vec<f64>>,
    /// `γ_g`: variance per antenna of the composite group estimate `ĝ_g`.
    pub group_var: Vec<f64>,
}

impl EstimationStats {
    pub(crate) fn check_shape(&self, cfg: &SystemConfig) -> Result<()> {
        check_len("stats.unicast_var", self.unicast_var.len(), cfg.n_unicast)?;
        check_len("stats.group_var", self.group_var.len(), cfg.n_groups())?;
        check_nested_shape("stats.multicast_var", &self.multicast_var, &cfg.group_sizes)
    }
}

/// Checks every invariant of the configuration and fading profile and returns
/// them unchanged when all hold.
pub fn validate_config(
    cfg: SystemConfig,
    fading: FadingProfile,
) -> Result<(SystemConfig, FadingProfile)> {
    check(&cfg, &fading)?;
    Ok((cfg, fading))
}

/// Borrowing form of [`validate_config`].
pub fn check(cfg: &SystemConfig, fading: &FadingProfile) -> Result<()> {
    let mut all = cfg.violations();
    all.extend(fading.violations(cfg));
    if all.is_empty() {
        Ok(())
    } else {
        Err(Error::InvalidConfig(Violations(all)))
    }
}

/// MMSE estimate variances for the given uplink pilot powers and the
/// configured pilot length.
pub fn estimation_variances(
    cfg: &SystemConfig,
    fading: &FadingProfile,
    pilots: &PilotPowers,
) -> Result<EstimationStats> {
    check_len("fading.unicast_gains", fading.unicast_gains.len(), cfg.n_unicast)?;
    check_nested_shape("fading.multicast_gains", &fading.multicast_gains, &cfg.group_sizes)?;
    pilots.check_shape(cfg)?;
    let tau = cfg.pilot_length as f64;

    let unicast_var = fading
        .unicast_gains
        .iter()
        .zip(&pilots.unicast)
        .map(|(&beta, &p)| {
            let snr = tau * p * beta;
            snr * beta / (1.0 + snr)
        })
        .collect();

    let mut multicast_var = Vec::with_capacity(cfg.n_groups());
    let mut group_var = Vec::with_capacity(cfg.n_groups());
    for (etas, qs) in fading.multicast_gains.iter().zip(&pilots.multicast) {
        let received: f64 = etas.iter().zip(qs).map(|(&eta, &q)| tau * q * eta).sum();
        multicast_var.push(
            etas.iter()
                .zip(qs)
                .map(|(&eta, &q)| tau * q * eta * eta / (1.0 + received))
                .collect(),
        );
        group_var.push(received * received / (1.0 + received));
    }

    Ok(EstimationStats {
        unicast_var,
        multicast_var,
        group_var,
    })
}

pub(crate) fn check_len(what: &str, found: usize, expected: usize) -> Result<()> {
    if found == expected {
        Ok(())
    } else {
        Err(Error::shape(what, format!("length {expected}"), format!("length {found}")))
    }
}

pub(crate) fn check_nested_shape<T>(what: &str, nested: &[Vec<T>], sizes: &[usize]) -> Result<()> {
    let found: Vec<usize> = nested.iter().map(Vec::len).collect();
    if found == sizes {
        Ok(())
    } else {
        Err(Error::shape(what, format!("{sizes:?}"), format!("{found:?}")))
    }
}

fn check_positive_list(out: &mut Vec<Violation>, path: &str, values: &[f64], len: usize, what: &str) {
    if values.len() != len {
        out.push(Violation {
            path: path.into(),
            message: format!("shape mismatch: length {}, expected {len}", values.len()),
        });
        return;
    }
    for (i, &v) in values.iter().enumerate() {
        if !(v.is_finite() && v > 0.0) {
            out.push(Violation {
                path: format!("{path}[{i}]"),
                message: format!("non-positive or non-finite {what} {v}"),
            });
        }
    }
}

fn check_positive_nested(
    out: &mut Vec<Violation>,
    path: &str,
    values: &[Vec<f64>],
    sizes: &[usize],
    what: &str,
) {
    if values.len() != sizes.len() {
        out.push(Violation {
            path: path.into(),
            message: format!("shape mismatch: {} groups, expected {}", values.len(), sizes.len()),
        });
        return;
    }
    for (g, (row, &k)) in values.iter().zip(sizes).enumerate() {
        check_positive_list(out, &format!("{path}[{g}]"), row, k, what);
    }
}

fn check_gains(out: &mut Vec<Violation>, path: &str, gains: &[f64], len: usize) {
    if gains.len() != len {
        out.push(Violation {
            path: path.into(),
            message: format!("shape mismatch: length {}, expected {len}", gains.len()),
        });
        return;
    }
    for (i, &g) in gains.iter().enumerate() {
        let message = if !g.is_finite() {
            format!("non-finite gain {g}")
        } else if g <= 0.0 {
            format!("non-positive gain {g}")
        } else if g < MIN_GAIN {
            format!("gain {g:e} below {MIN_GAIN:e}")
        } else {
            continue;
        };
        out.push(Violation {
            path: format!("{path}[{i}]"),
            message,
        });
    }
}
