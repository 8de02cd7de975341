//! Closed-form effective SINRs and achievable spectral efficiencies.
//!
//! Each terminal detects its signal over the average effective channel and
//! treats everything else as noise, giving `SE = (1 - τ/T) log2(1 + SINR)`.
//! With `P = P_un + P_mu` recomputed from the downlink power lists:
//!
//! | precoder | unicast `m`                         | multicast `(j, k)`                        |
//! |----------|-------------------------------------|-------------------------------------------|
//! | MRT      | `N p_m ϑ_m / (1 + β_m P)`           | `N q_j ξ_jk / (1 + η_jk P)`               |
//! | ZF       | `(N-G-U) p_m ϑ_m / (1 + (β_m-ϑ_m) P)` | `(N-G-U) q_j ξ_jk / (1 + (η_jk-ξ_jk) P)` |

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{check_len, EstimationStats, FadingProfile, SystemConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precoder {
    Mrt,
    Zf,
}

impl Precoder {
    pub const ALL: [Precoder; 2] = [Precoder::Mrt, Precoder::Zf];

    pub fn as_str(self) -> &'static str {
        match self {
            Precoder::Mrt => "mrt",
            Precoder::Zf => "zf",
        }
    }

    /// Coherent beamforming gain: `N` for MRT, `N - G - U` for ZF.
    pub fn array_gain(self, cfg: &SystemConfig) -> Result<f64> {
        match self {
            Precoder::Mrt => Ok(cfg.n_antennas as f64),
            Precoder::Zf => cfg.zf_gain(),
        }
    }
}

impl fmt::Display for Precoder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Precoder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mrt" => Ok(Precoder::Mrt),
            "zf" => Ok(Precoder::Zf),
            other => Err(Error::invalid(format!("unknown precoder '{other}' (expected mrt or zf)"))),
        }
    }
}

/// Downlink precoding powers `p_m^dl` and `q_j^dl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DownlinkPowers {
    pub unicast: Vec<f64>,
    pub multicast: Vec<f64>,
}

impl DownlinkPowers {
    pub fn unicast_total(&self) -> f64 {
        self.unicast.iter().sum()
    }

    pub fn multicast_total(&self) -> f64 {
        self.multicast.iter().sum()
    }

    /// `P_un + P_mu`.
    pub fn total(&self) -> f64 {
        self.unicast_total() + self.multicast_total()
    }

    /// Equal per-stream powers: `p_un / U` per unicast UT and `p_mu / G` per group.
    pub fn equal(cfg: &SystemConfig, p_unicast: f64, p_multicast: f64) -> Self {
        let u = cfg.n_unicast;
        let g = cfg.n_groups();
        DownlinkPowers {
            unicast: vec![if u > 0 { p_unicast / u as f64 } else { 0.0 }; u],
            multicast: vec![if g > 0 { p_multicast / g as f64 } else { 0.0 }; g],
        }
    }

    /// Every stream's power multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        DownlinkPowers {
            unicast: self.unicast.iter().map(|p| p * factor).collect(),
            multicast: self.multicast.iter().map(|q| q * factor).collect(),
        }
    }

    pub(crate) fn check(&self, cfg: &SystemConfig) -> Result<()> {
        check_len("powers.unicast", self.unicast.len(), cfg.n_unicast)?;
        check_len("powers.multicast", self.multicast.len(), cfg.n_groups())?;
        if self
            .unicast
            .iter()
            .chain(&self.multicast)
            .any(|&p| !(p >= 0.0 && p.is_finite()))
        {
            return Err(Error::invalid("downlink powers must be finite and non-negative"));
        }
        Ok(())
    }
}

/// Per-terminal SINRs and SEs of one operating point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeReport {
    pub precoder: Precoder,
    /// `1 - τ/T`.
    pub prelog: f64,
    pub unicast_sinr: Vec<f64>,
    pub unicast_se: Vec<f64>,
    pub multicast_sinr: Vec<Vec<f64>>,
    pub multicast_se: Vec<Vec<f64>>,
}

impl SeReport {
    /// Smallest multicast SE, or `None` without multicast terminals.
    pub fn min_multicast_se(&self) -> Option<f64> {
        self.multicast_se.iter().flatten().copied().reduce(f64::min)
    }

    pub fn max_multicast_se(&self) -> Option<f64> {
        self.multicast_se.iter().flatten().copied().reduce(f64::max)
    }

    pub fn weighted_sum_se(&self, weights: &[f64]) -> f64 {
        self.unicast_se.iter().zip(weights).map(|(se, a)| a * se).sum()
    }
}

/// `prelog · log2(1 + sinr)`, accurate for small SINR.
pub fn spectral_efficiency(prelog: f64, sinr: f64) -> f64 {
    prelog * sinr.ln_1p() / std::f64::consts::LN_2
}

fn unicast_index(cfg: &SystemConfig, m: usize) -> Result<()> {
    if m < cfg.n_unicast {
        Ok(())
    } else {
        Err(Error::IndexOutOfRange {
            kind: "unicast user",
            index: m,
            len: cfg.n_unicast,
        })
    }
}

fn multicast_index(cfg: &SystemConfig, j: usize, k: usize) -> Result<()> {
    if j >= cfg.n_groups() {
        return Err(Error::IndexOutOfRange {
            kind: "multicast group",
            index: j,
            len: cfg.n_groups(),
        });
    }
    if k >= cfg.group_sizes[j] {
        return Err(Error::IndexOutOfRange {
            kind: "group member",
            index: k,
            len: cfg.group_sizes[j],
        });
    }
    Ok(())
}

fn check_inputs(
    cfg: &SystemConfig,
    stats: &EstimationStats,
    fading: &FadingProfile,
    powers: &DownlinkPowers,
) -> Result<()> {
    stats.check_shape(cfg)?;
    check_len("fading.unicast_gains", fading.unicast_gains.len(), cfg.n_unicast)?;
    crate::model::check_nested_shape("fading.multicast_gains", &fading.multicast_gains, &cfg.group_sizes)?;
    powers.check(cfg)
}

pub fn sinr_mrt_unicast(
    cfg: &SystemConfig,
    stats: &EstimationStats,
    fading: &FadingProfile,
    powers: &DownlinkPowers,
    m: usize,
) -> Result<f64> {
    check_inputs(cfg, stats, fading, powers)?;
    unicast_index(cfg, m)?;
    let n = cfg.n_antennas as f64;
    Ok(n * powers.unicast[m] * stats.unicast_var[m] / (1.0 + fading.unicast_gains[m] * powers.total()))
}

pub fn sinr_mrt_multicast(
    cfg: &SystemConfig,
    stats: &EstimationStats,
    fading: &FadingProfile,
    powers: &DownlinkPowers,
    j: usize,
    k: usize,
) -> Result<f64> {
    check_inputs(cfg, stats, fading, powers)?;
    multicast_index(cfg, j, k)?;
    let n = cfg.n_antennas as f64;
    let eta = fading.multicast_gains[j][k];
    Ok(n * powers.multicast[j] * stats.multicast_var[j][k] / (1.0 + eta * powers.total()))
}

pub fn sinr_zf_unicast(
    cfg: &SystemConfig,
    stats: &EstimationStats,
    fading: &FadingProfile,
    powers: &DownlinkPowers,
    m: usize,
) -> Result<f64> {
    let gain = cfg.zf_gain()?;
    check_inputs(cfg, stats, fading, powers)?;
    unicast_index(cfg, m)?;
    let var = stats.unicast_var[m];
    let error_var = fading.unicast_gains[m] - var;
    Ok(gain * powers.unicast[m] * var / (1.0 + error_var * powers.total()))
}

pub fn sinr_zf_multicast(
    cfg: &SystemConfig,
    stats: &EstimationStats,
    fading: &FadingProfile,
    powers: &DownlinkPowers,
    j: usize,
    k: usize,
) -> Result<f64> {
    let gain = cfg.zf_gain()?;
    check_inputs(cfg, stats, fading, powers)?;
    multicast_index(cfg, j, k)?;
    let var = stats.multicast_var[j][k];
    let error_var = fading.multicast_gains[j][k] - var;
    Ok(gain * powers.multicast[j] * var / (1.0 + error_var * powers.total()))
}

/// Closed-form SINR of unicast terminal `m` under `precoder`.
pub fn sinr_unicast(
    precoder: Precoder,
    cfg: &SystemConfig,
    stats: &EstimationStats,
    fading: &FadingProfile,
    powers: &DownlinkPowers,
    m: usize,
) -> Result<f64> {
    match precoder {
        Precoder::Mrt => sinr_mrt_unicast(cfg, stats, fading, powers, m),
        Precoder::Zf => sinr_zf_unicast(cfg, stats, fading, powers, m),
    }
}

/// Closed-form SINR of member `k` of multicast group `j` under `precoder`.
pub fn sinr_multicast(
    precoder: Precoder,
    cfg: &SystemConfig,
    stats: &EstimationStats,
    fading: &FadingProfile,
    powers: &DownlinkPowers,
    j: usize,
    k: usize,
) -> Result<f64> {
    match precoder {
        Precoder::Mrt => sinr_mrt_multicast(cfg, stats, fading, powers, j, k),
        Precoder::Zf => sinr_zf_multicast(cfg, stats, fading, powers, j, k),
    }
}

/// Every terminal's SINR and SE, with prelog `1 - τ/T` from `cfg.pilot_length`.
pub fn se_report(
    cfg: &SystemConfig,
    stats: &EstimationStats,
    fading: &FadingProfile,
    powers: &DownlinkPowers,
    precoder: Precoder,
) -> Result<SeReport> {
    if precoder == Precoder::Zf {
        cfg.zf_gain()?;
    }
    if cfg.pilot_length > cfg.coherence_length {
        return Err(Error::invalid("pilot length exceeds coherence length"));
    }
    let prelog = cfg.prelog();
    let unicast_sinr = (0..cfg.n_unicast)
        .map(|m| sinr_unicast(precoder, cfg, stats, fading, powers, m))
        .collect::<Result<Vec<_>>>()?;
    let multicast_sinr = cfg
        .group_sizes
        .iter()
        .enumerate()
        .map(|(j, &kj)| {
            (0..kj)
                .map(|k| sinr_multicast(precoder, cfg, stats, fading, powers, j, k))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let unicast_se = unicast_sinr.iter().map(|&s| spectral_efficiency(prelog, s)).collect();
    let multicast_se = multicast_sinr
        .iter()
        .map(|row| row.iter().map(|&s| spectral_efficiency(prelog, s)).collect())
        .collect();
    Ok(SeReport {
        precoder,
        prelog,
        unicast_sinr,
        unicast_se,
        multicast_sinr,
        multicast_se,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// Configuration where the estimate variances are set directly.
    fn fixture(n: usize, u: usize, groups: &[usize]) -> (SystemConfig, FadingProfile) {
        let cfg = SystemConfig {
            n_antennas: n,
            coherence_length: 200,
            n_unicast: u,
            group_sizes: groups.to_vec(),
            pilot_length: u + groups.len(),
            total_power: 10.0,
            unicast_energy_caps: vec![1.0; u],
            multicast_energy_caps: groups.iter().map(|&k| vec![1.0; k]).collect(),
            sse_weights: vec![1.0; u],
        };
        let fading = FadingProfile {
            unicast_gains: vec![1.0; u],
            multicast_gains: groups.iter().map(|&k| vec![1.0; k]).collect(),
        };
        (cfg, fading)
    }

    fn stats(cfg: &SystemConfig, theta: f64, xi: f64) -> EstimationStats {
        EstimationStats {
            unicast_var: vec![theta; cfg.n_unicast],
            multicast_var: cfg.group_sizes.iter().map(|&k| vec![xi; k]).collect(),
            group_var: vec![1.0; cfg.n_groups()],
        }
    }

    #[test]
    fn mrt_unicast_hand_value() {
        let (cfg, fading) = fixture(100, 2, &[1]);
        let st = stats(&cfg, 0.5, 0.5);
        // P_un + P_mu = 2 + 3 + 4 = 9
        let powers = DownlinkPowers {
            unicast: vec![2.0, 3.0],
            multicast: vec![4.0],
        };
        let s = sinr_mrt_unicast(&cfg, &st, &fading, &powers, 0).unwrap();
        assert_relative_eq!(s, 10.0, max_relative = 1e-15);

        let mut doubled = cfg.clone();
        doubled.n_antennas = 200;
        let s2 = sinr_mrt_unicast(&doubled, &st, &fading, &powers, 0).unwrap();
        assert_eq!(s2, 2.0 * s);

        let zero = DownlinkPowers {
            unicast: vec![0.0, 3.0],
            multicast: vec![4.0],
        };
        assert_eq!(sinr_mrt_unicast(&cfg, &st, &fading, &zero, 0).unwrap(), 0.0);
    }

    #[test]
    fn mrt_multicast_hand_value() {
        let (cfg, fading) = fixture(100, 1, &[2]);
        let st = stats(&cfg, 0.5, 0.2);
        let powers = DownlinkPowers {
            unicast: vec![5.0],
            multicast: vec![5.0],
        };
        let s = sinr_mrt_multicast(&cfg, &st, &fading, &powers, 0, 1).unwrap();
        assert_relative_eq!(s, 100.0 / 11.0, max_relative = 1e-15);

        let scaled = stats(&cfg, 0.5, 0.6);
        let s3 = sinr_mrt_multicast(&cfg, &scaled, &fading, &powers, 0, 1).unwrap();
        assert_relative_eq!(s3, 3.0 * s, max_relative = 1e-15);
    }

    #[test]
    fn zf_hand_values() {
        let (cfg, fading) = fixture(100, 2, &[1, 1]);
        let st = stats(&cfg, 0.5, 0.2);
        let powers = DownlinkPowers {
            unicast: vec![1.0, 4.0],
            multicast: vec![5.0, 0.0],
        };
        let su = sinr_zf_unicast(&cfg, &st, &fading, &powers, 0).unwrap();
        assert_relative_eq!(su, 8.0, max_relative = 1e-15);
        let sm = sinr_zf_multicast(&cfg, &st, &fading, &powers, 0, 0).unwrap();
        assert_relative_eq!(sm, 96.0 / 9.0, max_relative = 1e-15);
        assert_eq!(sinr_zf_multicast(&cfg, &st, &fading, &powers, 1, 0).unwrap(), 0.0);
    }

    #[test]
    fn zf_perfect_csi_removes_interference() {
        let (cfg, fading) = fixture(10, 1, &[1]);
        let st = stats(&cfg, 1.0, 1.0);
        let powers = DownlinkPowers {
            unicast: vec![3.0],
            multicast: vec![7.0],
        };
        assert_relative_eq!(sinr_zf_unicast(&cfg, &st, &fading, &powers, 0).unwrap(), 8.0 * 3.0);
        assert_relative_eq!(sinr_zf_multicast(&cfg, &st, &fading, &powers, 0, 0).unwrap(), 8.0 * 7.0);
    }

    #[test]
    fn zf_without_spare_antennas_is_rejected() {
        let (cfg, fading) = fixture(4, 2, &[1, 1]);
        let st = stats(&cfg, 0.5, 0.5);
        let powers = DownlinkPowers::equal(&cfg, 1.0, 1.0);
        assert!(matches!(
            sinr_zf_unicast(&cfg, &st, &fading, &powers, 0),
            Err(Error::ZfInfeasible { n_antennas: 4, streams: 4 })
        ));
        assert!(se_report(&cfg, &st, &fading, &powers, Precoder::Zf).is_err());
        assert!(se_report(&cfg, &st, &fading, &powers, Precoder::Mrt).is_ok());
    }

    #[test]
    fn index_errors() {
        let (cfg, fading) = fixture(10, 1, &[2]);
        let st = stats(&cfg, 0.5, 0.5);
        let powers = DownlinkPowers::equal(&cfg, 1.0, 1.0);
        assert!(matches!(
            sinr_mrt_unicast(&cfg, &st, &fading, &powers, 1),
            Err(Error::IndexOutOfRange { .. })
        ));
        assert!(sinr_mrt_multicast(&cfg, &st, &fading, &powers, 0, 2).is_err());
        assert!(sinr_mrt_multicast(&cfg, &st, &fading, &powers, 1, 0).is_err());
    }

    #[test]
    fn report_structure() {
        let (mut cfg, fading) = fixture(20, 2, &[2, 3]);
        let st = stats(&cfg, 0.5, 0.2);
        let powers = DownlinkPowers::equal(&cfg, 4.0, 6.0);
        for precoder in Precoder::ALL {
            let r = se_report(&cfg, &st, &fading, &powers, precoder).unwrap();
            assert_relative_eq!(r.prelog, 1.0 - 4.0 / 200.0);
            for (se, s) in r.unicast_se.iter().zip(&r.unicast_sinr) {
                assert_relative_eq!(se / r.prelog, (1.0 + s).log2(), max_relative = 1e-14);
            }
            for (se, s) in r.multicast_se.iter().flatten().zip(r.multicast_sinr.iter().flatten()) {
                assert_relative_eq!(se / r.prelog, (1.0 + s).log2(), max_relative = 1e-14);
            }
        }
        cfg.pilot_length = cfg.coherence_length;
        let r = se_report(&cfg, &st, &fading, &powers, Precoder::Mrt).unwrap();
        assert!(r.unicast_se.iter().chain(r.multicast_se.iter().flatten()).all(|&x| x == 0.0));
    }

    #[test]
    fn unit_sinr_gives_prelog() {
        assert_eq!(spectral_efficiency(0.75, 1.0), 0.75);
        // log1p keeps precision far below machine epsilon
        let tiny = spectral_efficiency(1.0, 1e-20);
        assert_relative_eq!(tiny, 1e-20 / std::f64::consts::LN_2, max_relative = 1e-12);
    }

    #[test]
    fn precoder_parsing() {
        assert_eq!("MRT".parse::<Precoder>().unwrap(), Precoder::Mrt);
        assert_eq!("zf".parse::<Precoder>().unwrap(), Precoder::Zf);
        assert!("mmse".parse::<Precoder>().is_err());
        assert_eq!(serde_json::to_string(&Precoder::Zf).unwrap(), "\"zf\"");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            /// Mapping (N, β) -> (N-G-U, β-ϑ) turns the MRT unicast SINR into the ZF one.
            #[test]
            fn zf_is_mrt_with_reduced_gain_and_error_interference(
                n in 6usize..300, theta_frac in 0.01f64..0.99, beta in 1e-3f64..10.0,
                p in 0.0f64..5.0, rest in 0.0f64..20.0,
            ) {
                let (mut cfg, mut fading) = fixture(n, 2, &[1, 2]);
                fading.unicast_gains[0] = beta;
                let st = stats(&cfg, theta_frac * beta, 0.1);
                let powers = DownlinkPowers { unicast: vec![p, rest], multicast: vec![0.5, 0.5] };
                let zf = sinr_zf_unicast(&cfg, &st, &fading, &powers, 0).unwrap();

                cfg.n_antennas = n - 4;
                fading.unicast_gains[0] = beta - theta_frac * beta;
                let mapped = sinr_mrt_unicast(&cfg, &st, &fading, &powers, 0).unwrap();
                prop_assert!((zf - mapped).abs() <= 1e-12 * zf.abs().max(1e-300));
            }

            #[test]
            fn sinr_increases_with_own_power_at_fixed_total(
                p in 0.0f64..4.9, dp in 1e-3f64..0.1, xi in 0.01f64..0.9,
            ) {
                let (cfg, fading) = fixture(64, 2, &[2]);
                let st = stats(&cfg, 0.5, xi);
                for precoder in Precoder::ALL {
                    let lo = DownlinkPowers { unicast: vec![p, 5.0 - p], multicast: vec![5.0] };
                    let hi = DownlinkPowers { unicast: vec![p + dp, 5.0 - p - dp], multicast: vec![5.0] };
                    prop_assert!(sinr_unicast(precoder, &cfg, &st, &fading, &hi, 0).unwrap()
                        > sinr_unicast(precoder, &cfg, &st, &fading, &lo, 0).unwrap());
                }
            }

            #[test]
            fn relabeling_members_permutes_sinrs(
                etas in prop::collection::vec(0.1f64..2.0, 3),
                fracs in prop::collection::vec(0.05f64..0.95, 3),
            ) {
                let (cfg, mut fading) = fixture(32, 1, &[3]);
                fading.multicast_gains[0] = etas.clone();
                let mut st = stats(&cfg, 0.5, 0.0);
                st.multicast_var[0] = etas.iter().zip(&fracs).map(|(e, f)| e * f).collect();
                let powers = DownlinkPowers { unicast: vec![2.0], multicast: vec![3.0] };

                let perm = [2usize, 0, 1];
                let mut f2 = fading.clone();
                let mut s2 = st.clone();
                for (dst, &src) in perm.iter().enumerate() {
                    f2.multicast_gains[0][dst] = fading.multicast_gains[0][src];
                    s2.multicast_var[0][dst] = st.multicast_var[0][src];
                }
                for precoder in Precoder::ALL {
                    let a = se_report(&cfg, &st, &fading, &powers, precoder).unwrap();
                    let b = se_report(&cfg, &s2, &f2, &powers, precoder).unwrap();
                    for (dst, &src) in perm.iter().enumerate() {
                        prop_assert_eq!(b.multicast_sinr[0][dst], a.multicast_sinr[0][src]);
                    }
                }
            }
        }
    }
}
