//! Optimal resource allocation for a fixed unicast/multicast power split.
//!
//! Both problems share the same structure at the optimum: the shortest
//! feasible pilot `τ* = U + G`, the whole class budget spent in the downlink,
//! and pilot energies pushed to their caps (for multicast, only as far as the
//! weakest member of each group allows).
//!
//! * Multicast max-min fairness ([`solve_mmf`]): every multicast terminal ends
//!   up with the same SINR `Γ`. Per group,
//!   `Υ_j = min_k E_jk η_jk² / (1 + η_jk P)` and the group load
//!   `B_j = 1/Υ_j + Σ_t 1/η_jt + K_j P`. MRT gives `Γ = N P_mu / Σ_j B_j`, ZF
//!   gives `Γ = (N-G-U) P_mu / Σ_j (B_j - P)`.
//! * Unicast weighted sum SE ([`solve_sse`]): with `ϑ_m* = E_m β_m² / (1 + E_m β_m)`
//!   the SINR of terminal `m` is `p_m / o_m` and the optimal powers water-fill
//!   `P_un` over the offsets `o_m` (see [`waterfill`]).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{estimation_variances, prelog, FadingProfile, PilotPowers, SystemConfig};
use crate::se::{se_report, spectral_efficiency, DownlinkPowers, Precoder, SeReport};

/// Closed-form solution of the multicast max-min fairness problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MmfSolution {
    pub precoder: Precoder,
    /// Common multicast SE `O*_mu`.
    pub objective: f64,
    /// Common multicast SINR `Γ`.
    pub common_sinr: f64,
    /// `τ* = U + G`.
    pub pilot_length: usize,
    /// `q_jk^up* = x_jk* / τ*`.
    pub uplink_pilot_powers: Vec<Vec<f64>>,
    /// `q_j^dl*`.
    pub downlink_powers: Vec<f64>,
    /// `Υ_j`.
    pub upsilon: Vec<f64>,
    /// Group loads `B_j`.
    pub group_loads: Vec<f64>,
    /// Pilot energies `x_jk* = τ* q_jk^up*`.
    pub pilot_energies: Vec<Vec<f64>>,
    /// `P_mu = P - P_un`.
    pub p_multicast: f64,
}

/// Closed-form solution of the unicast weighted sum-SE problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SseSolution {
    pub precoder: Precoder,
    /// Weighted sum SE `O*_un`.
    pub objective: f64,
    /// `τ* = U + G`.
    pub pilot_length: usize,
    /// `p_m^up* = E_m / τ*`.
    pub uplink_pilot_powers: Vec<f64>,
    /// `p_m^dl*`.
    pub downlink_powers: Vec<f64>,
    /// Water level `ν`; `+∞` when the budget is zero (`null` in JSON).
    #[serde(with = "infinite_as_null")]
    pub water_level: f64,
    /// `ϑ_m*`.
    pub effective_vars: Vec<f64>,
    /// Water-filling offsets `o_m`: the SINR of terminal `m` is `p_m / o_m`.
    pub offsets: Vec<f64>,
    pub weights: Vec<f64>,
    /// `P_un = P - P_mu`.
    pub p_unicast: f64,
}

mod infinite_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        if x.is_finite() {
            s.serialize_some(x)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

impl MmfSolution {
    /// Per-terminal SEs at this allocation. The unicast budget `p_unicast` is
    /// spread equally over the unicast terminals, whose pilots spend their
    /// full energy cap.
    pub fn se_report(&self, cfg: &SystemConfig, fading: &FadingProfile, p_unicast: f64) -> Result<SeReport> {
        let cfg = cfg.with_pilot_length(self.pilot_length);
        let pilots = PilotPowers {
            unicast: PilotPowers::from_energy_caps(&cfg).unicast,
            multicast: self.uplink_pilot_powers.clone(),
        };
        let mut powers = DownlinkPowers::equal(&cfg, p_unicast, 0.0);
        powers.multicast = self.downlink_powers.clone();
        let stats = estimation_variances(&cfg, fading, &pilots)?;
        se_report(&cfg, &stats, fading, &powers, self.precoder)
    }
}

impl SseSolution {
    /// Per-terminal SEs at this allocation, with `p_multicast` spread equally
    /// over the groups and full-cap multicast pilots.
    pub fn se_report(&self, cfg: &SystemConfig, fading: &FadingProfile, p_multicast: f64) -> Result<SeReport> {
        let cfg = cfg.with_pilot_length(self.pilot_length);
        let pilots = PilotPowers {
            unicast: self.uplink_pilot_powers.clone(),
            multicast: PilotPowers::from_energy_caps(&cfg).multicast,
        };
        let mut powers = DownlinkPowers::equal(&cfg, 0.0, p_multicast);
        powers.unicast = self.downlink_powers.clone();
        let stats = estimation_variances(&cfg, fading, &pilots)?;
        se_report(&cfg, &stats, fading, &powers, self.precoder)
    }

    /// Largest violation of the water-filling KKT conditions, relative to
    /// `max(o_m, p_m)`: active terminals need `α_m/(ν ln2) - o_m = p_m`,
    /// inactive ones `α_m/(ν ln2) <= o_m`.
    pub fn kkt_residual(&self) -> f64 {
        if self.water_level.is_infinite() {
            return self.downlink_powers.iter().fold(0.0, |acc: f64, p| acc.max(p.abs()));
        }
        let level = 1.0 / (self.water_level * std::f64::consts::LN_2);
        let mut worst = 0.0_f64;
        for ((&p, &o), &a) in self.downlink_powers.iter().zip(&self.offsets).zip(&self.weights) {
            let scale = o.max(p);
            let r = if p > 0.0 {
                (a * level - o - p).abs()
            } else {
                (a * level - o).max(0.0)
            };
            worst = worst.max(r / scale);
        }
        worst
    }
}

fn check_p_fixed(cfg: &SystemConfig, value: f64, what: &str) -> Result<f64> {
    let total = cfg.total_power;
    if !(value.is_finite() && (0.0..=total).contains(&value)) {
        return Err(Error::invalid(format!("{what} = {value} outside [0, P = {total}]")));
    }
    Ok(total - value)
}

fn check_shapes(cfg: &SystemConfig, fading: &FadingProfile) -> Result<()> {
    crate::model::check_len("fading.unicast_gains", fading.unicast_gains.len(), cfg.n_unicast)?;
    crate::model::check_nested_shape("fading.multicast_gains", &fading.multicast_gains, &cfg.group_sizes)?;
    crate::model::check_nested_shape(
        "config.multicast_energy_caps",
        &cfg.multicast_energy_caps,
        &cfg.group_sizes,
    )?;
    crate::model::check_len("config.unicast_energy_caps", cfg.unicast_energy_caps.len(), cfg.n_unicast)?;
    crate::model::check_len("config.sse_weights", cfg.sse_weights.len(), cfg.n_unicast)
}

/// Pilot stage shared by both precoders: `Υ_j`, `x_jk*`, `B_j`.
struct MulticastPilots {
    upsilon: Vec<f64>,
    energies: Vec<Vec<f64>>,
    loads: Vec<f64>,
}

fn multicast_pilots(cfg: &SystemConfig, fading: &FadingProfile) -> MulticastPilots {
    let p = cfg.total_power;
    let mut upsilon = Vec::with_capacity(cfg.n_groups());
    let mut energies = Vec::with_capacity(cfg.n_groups());
    let mut loads = Vec::with_capacity(cfg.n_groups());
    for (etas, caps) in fading.multicast_gains.iter().zip(&cfg.multicast_energy_caps) {
        let ratios: Vec<f64> = etas
            .iter()
            .zip(caps)
            .map(|(&eta, &e)| e * eta * eta / (1.0 + eta * p))
            .collect();
        let ups = ratios.iter().copied().fold(f64::INFINITY, f64::min);
        // members attaining the minimum sit exactly at their cap
        let x: Vec<f64> = etas
            .iter()
            .zip(caps)
            .zip(&ratios)
            .map(|((&eta, &e), &r)| {
                if r == ups {
                    e
                } else {
                    ((1.0 + eta * p) / (eta * eta) * ups).min(e)
                }
            })
            .collect();
        let load = 1.0 / ups + etas.iter().map(|eta| 1.0 / eta).sum::<f64>() + etas.len() as f64 * p;
        upsilon.push(ups);
        energies.push(x);
        loads.push(load);
    }
    MulticastPilots {
        upsilon,
        energies,
        loads,
    }
}

/// Max-min fair multicast allocation for a fixed unicast power `p_unicast_fixed`.
pub fn solve_mmf(
    cfg: &SystemConfig,
    fading: &FadingProfile,
    p_unicast_fixed: f64,
    precoder: Precoder,
) -> Result<MmfSolution> {
    check_shapes(cfg, fading)?;
    if cfg.n_groups() == 0 || cfg.group_sizes.iter().any(|&k| k == 0) {
        return Err(Error::invalid("max-min fairness needs at least one non-empty multicast group"));
    }
    let p_mu = check_p_fixed(cfg, p_unicast_fixed, "P_un")?;
    let gain = precoder.array_gain(cfg)?;
    let tau = cfg.n_streams();
    let pilots = multicast_pilots(cfg, fading);
    let p = cfg.total_power;

    // Effective per-group load: B_j for MRT, B_j - P for ZF.
    let effective: Vec<f64> = match precoder {
        Precoder::Mrt => pilots.loads.clone(),
        Precoder::Zf => pilots
            .loads
            .iter()
            .enumerate()
            .map(|(j, &b)| {
                // B_j >= 1/Υ_j + K_j P > P whenever Υ_j > 0 and K_j >= 1
                if b > p {
                    Ok(b - p)
                } else {
                    Err(Error::DegenerateZf {
                        group: j,
                        load: b,
                        total_power: p,
                    })
                }
            })
            .collect::<Result<_>>()?,
    };
    let load_sum: f64 = effective.iter().sum();
    let common_sinr = gain * p_mu / load_sum;
    let downlink_powers = effective.iter().map(|&l| p_mu * l / load_sum).collect();
    let objective = if p_mu == 0.0 {
        0.0
    } else {
        spectral_efficiency(prelog(tau, cfg.coherence_length), common_sinr)
    };

    Ok(MmfSolution {
        precoder,
        objective,
        common_sinr,
        pilot_length: tau,
        uplink_pilot_powers: pilots
            .energies
            .iter()
            .map(|row| row.iter().map(|x| x / tau as f64).collect())
            .collect(),
        downlink_powers,
        upsilon: pilots.upsilon,
        group_loads: pilots.loads,
        pilot_energies: pilots.energies,
        p_multicast: p_mu,
    })
}

pub fn solve_mmf_mrt(cfg: &SystemConfig, fading: &FadingProfile, p_unicast_fixed: f64) -> Result<MmfSolution> {
    solve_mmf(cfg, fading, p_unicast_fixed, Precoder::Mrt)
}

pub fn solve_mmf_zf(cfg: &SystemConfig, fading: &FadingProfile, p_unicast_fixed: f64) -> Result<MmfSolution> {
    solve_mmf(cfg, fading, p_unicast_fixed, Precoder::Zf)
}

/// Weighted sum-SE unicast allocation for a fixed multicast power `p_multicast_fixed`.
pub fn solve_sse(
    cfg: &SystemConfig,
    fading: &FadingProfile,
    p_multicast_fixed: f64,
    precoder: Precoder,
) -> Result<SseSolution> {
    check_shapes(cfg, fading)?;
    if cfg.n_unicast == 0 {
        return Err(Error::invalid("sum-SE allocation needs at least one unicast user"));
    }
    if cfg.sse_weights.iter().any(|&a| !(a > 0.0 && a.is_finite())) {
        return Err(Error::invalid("sum-SE weights must be positive"));
    }
    let p_un = check_p_fixed(cfg, p_multicast_fixed, "P_mu")?;
    let gain = precoder.array_gain(cfg)?;
    let tau = cfg.n_streams();
    let p = cfg.total_power;

    let effective_vars: Vec<f64> = fading
        .unicast_gains
        .iter()
        .zip(&cfg.unicast_energy_caps)
        .map(|(&beta, &e)| e * beta * beta / (1.0 + e * beta))
        .collect();
    let offsets: Vec<f64> = fading
        .unicast_gains
        .iter()
        .zip(&effective_vars)
        .map(|(&beta, &theta)| match precoder {
            Precoder::Mrt => (1.0 + beta * p) / (gain * theta),
            Precoder::Zf => (1.0 + (beta - theta) * p) / (gain * theta),
        })
        .collect();

    let fill = waterfill(&cfg.sse_weights, &offsets, p_un)?;
    let prelog = prelog(tau, cfg.coherence_length);
    let objective = fill
        .levels
        .iter()
        .zip(&offsets)
        .zip(&cfg.sse_weights)
        .map(|((&pw, &o), &a)| a * spectral_efficiency(prelog, pw / o))
        .sum();

    Ok(SseSolution {
        precoder,
        objective,
        pilot_length: tau,
        uplink_pilot_powers: cfg.unicast_energy_caps.iter().map(|e| e / tau as f64).collect(),
        downlink_powers: fill.levels,
        water_level: fill.water_level,
        effective_vars,
        offsets,
        weights: cfg.sse_weights.clone(),
        p_unicast: p_un,
    })
}

pub fn solve_sse_mrt(cfg: &SystemConfig, fading: &FadingProfile, p_multicast_fixed: f64) -> Result<SseSolution> {
    solve_sse(cfg, fading, p_multicast_fixed, Precoder::Mrt)
}

pub fn solve_sse_zf(cfg: &SystemConfig, fading: &FadingProfile, p_multicast_fixed: f64) -> Result<SseSolution> {
    solve_sse(cfg, fading, p_multicast_fixed, Precoder::Zf)
}

#[derive(Debug, Clone, PartialEq)]
pub struct WaterFill {
    pub levels: Vec<f64>,
    /// `ν`, or `f64::INFINITY` for a zero budget.
    pub water_level: f64,
}

/// Solves `max Σ α_m ln(1 + p_m / o_m)` s.t. `Σ p_m = budget`, `p_m >= 0`.
///
/// Returns `p_m = max(0, α_m/(ν ln 2) - o_m)`. The water level is found by
/// walking the breakpoints `o_m / α_m` in increasing order and solving for `ν`
/// in closed form on each candidate active set. A zero budget yields all-zero
/// levels and `ν = +∞`.
pub fn waterfill(weights: &[f64], offsets: &[f64], budget: f64) -> Result<WaterFill> {
    if weights.len() != offsets.len() {
        return Err(Error::shape("waterfill weights/offsets", offsets.len(), weights.len()));
    }
    if weights.is_empty() {
        return Err(Error::invalid("water-filling over zero users"));
    }
    if !(budget >= 0.0 && budget.is_finite()) {
        return Err(Error::invalid(format!("budget {budget} must be finite and non-negative")));
    }
    if weights.iter().any(|&a| !(a > 0.0 && a.is_finite())) || offsets.iter().any(|&o| !(o > 0.0 && o.is_finite())) {
        return Err(Error::invalid("weights and offsets must be positive and finite"));
    }
    let n = weights.len();
    if budget == 0.0 {
        return Ok(WaterFill {
            levels: vec![0.0; n],
            water_level: f64::INFINITY,
        });
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| (offsets[a] / weights[a]).total_cmp(&(offsets[b] / weights[b])));

    // `level` stands for 1/(ν ln 2).
    let mut weight_sum = 0.0;
    let mut offset_sum = 0.0;
    let mut active = 0;
    let mut level = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        weight_sum += weights[i];
        offset_sum += offsets[i];
        level = (budget + offset_sum) / weight_sum;
        active = rank + 1;
        match order.get(rank + 1) {
            Some(&next) if level > offsets[next] / weights[next] => continue,
            _ => break,
        }
    }
    let active_set = &order[..active];

    let mut levels = vec![0.0; n];
    let fill = |levels: &mut Vec<f64>, level: f64| {
        for &i in active_set {
            levels[i] = (weights[i] * level - offsets[i]).max(0.0);
        }
    };
    fill(&mut levels, level);
    // one correction step against rounding in the closed-form level
    let residual = budget - levels.iter().sum::<f64>();
    if residual != 0.0 {
        level += residual / weight_sum;
        fill(&mut levels, level);
    }

    Ok(WaterFill {
        levels,
        water_level: 1.0 / (level * std::f64::consts::LN_2),
    })
}
