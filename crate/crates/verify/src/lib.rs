//! Reference oracles used to check the closed-form allocations.
//!
//! The grid searches below re-derive the SINR expressions on their own rather
//! than calling into `umcast::se`, and they search over pilot energies, the
//! split of each class budget across streams and the fraction of the budget
//! actually used. For a fixed total transmit power the SINR of a terminal
//! depends only on its own stream's power and its own group's (or its own)
//! pilot energies, so each stream's best pilot is found separately and the
//! budget split is searched on top.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use umcast::model::{estimation_variances, FadingProfile, PilotPowers, SystemConfig};
use umcast::scenario::{CellGeometry, PhysicalConfig, RadioParams, Scenario};
use umcast::se::{se_report, DownlinkPowers, Precoder, SeReport};
use umcast::Result;

fn grid(points: usize, hi: f64) -> impl Iterator<Item = f64> + Clone {
    let last = (points - 1) as f64;
    (0..points).map(move |i| if i + 1 == points { hi } else { hi * i as f64 / last })
}

fn array_gain(cfg: &SystemConfig, precoder: Precoder) -> f64 {
    match precoder {
        Precoder::Mrt => cfg.n_antennas as f64,
        Precoder::Zf => cfg.n_antennas as f64 - cfg.n_streams() as f64,
    }
}

fn se(cfg: &SystemConfig, sinr: f64) -> f64 {
    (1.0 - cfg.n_streams() as f64 / cfg.coherence_length as f64) * (1.0 + sinr).log2()
}

/// Best `min_k SINR_jk / q_j` of one group over a pilot-energy grid.
fn group_efficiency(
    etas: &[f64],
    caps: &[f64],
    gain: f64,
    p_tot: f64,
    precoder: Precoder,
    points: usize,
) -> f64 {
    fn walk(
        k: usize,
        x: &mut Vec<f64>,
        etas: &[f64],
        caps: &[f64],
        points: usize,
        eval: &dyn Fn(&[f64]) -> f64,
    ) -> f64 {
        if k == etas.len() {
            return eval(x);
        }
        let mut best = 0.0_f64;
        for v in grid(points, caps[k]) {
            x[k] = v;
            best = best.max(walk(k + 1, x, etas, caps, points, eval));
        }
        best
    }
    let eval = |x: &[f64]| {
        let s: f64 = x.iter().zip(etas).map(|(x, e)| x * e).sum();
        x.iter()
            .zip(etas)
            .map(|(&x, &eta)| {
                let xi = x * eta * eta / (1.0 + s);
                let leak = match precoder {
                    Precoder::Mrt => eta,
                    Precoder::Zf => eta - xi,
                };
                gain * xi / (1.0 + leak * p_tot)
            })
            .fold(f64::INFINITY, f64::min)
    };
    walk(0, &mut vec![0.0; etas.len()], etas, caps, points, &eval)
}

/// Best split of `budget` over streams with per-unit-power efficiencies
/// `eff`, scored by `score`; supports up to two streams.
fn best_split(eff: &[f64], budget: f64, points: usize, score: &dyn Fn(&[f64]) -> f64) -> f64 {
    match eff.len() {
        0 => score(&[]),
        1 => score(&[budget * eff[0]]),
        2 => grid(points, 1.0)
            .map(|t| score(&[t * budget * eff[0], (1.0 - t) * budget * eff[1]]))
            .fold(f64::NEG_INFINITY, f64::max),
        n => panic!("grid oracle supports at most 2 streams per class, got {n}"),
    }
}

/// Grid-search maximum of the multicast max-min SE with `P_un = p_unicast`
/// fixed. The pilot length is held at `U + G`: longer pilots cannot raise any
/// pilot energy above its cap and only shrink the prelog.
pub fn mmf_grid_oracle(
    cfg: &SystemConfig,
    fading: &FadingProfile,
    p_unicast: f64,
    precoder: Precoder,
    points: usize,
) -> f64 {
    let p_mu = cfg.total_power - p_unicast;
    if p_mu <= 0.0 {
        return 0.0;
    }
    let gain = array_gain(cfg, precoder);
    let mut best = 0.0_f64;
    for used in grid(points, 1.0).skip(1) {
        let budget = used * p_mu;
        let p_tot = p_unicast + budget;
        let eff: Vec<f64> = fading
            .multicast_gains
            .iter()
            .zip(&cfg.multicast_energy_caps)
            .map(|(etas, caps)| group_efficiency(etas, caps, gain, p_tot, precoder, points))
            .collect();
        let sinr = best_split(&eff, budget, points, &|s| s.iter().copied().fold(f64::INFINITY, f64::min));
        best = best.max(sinr);
    }
    se(cfg, best)
}

/// Grid-search maximum of the unicast weighted sum SE with `P_mu = p_multicast`
/// fixed; pilot length held at `U + G` as in [`mmf_grid_oracle`].
pub fn sse_grid_oracle(
    cfg: &SystemConfig,
    fading: &FadingProfile,
    p_multicast: f64,
    precoder: Precoder,
    points: usize,
) -> f64 {
    let p_un = cfg.total_power - p_multicast;
    if p_un <= 0.0 {
        return 0.0;
    }
    let gain = array_gain(cfg, precoder);
    let mut best = 0.0_f64;
    for used in grid(points, 1.0).skip(1) {
        let budget = used * p_un;
        let p_tot = p_multicast + budget;
        let eff: Vec<f64> = fading
            .unicast_gains
            .iter()
            .zip(&cfg.unicast_energy_caps)
            .map(|(&beta, &cap)| {
                grid(points, cap)
                    .map(|x| {
                        let theta = x * beta * beta / (1.0 + x * beta);
                        let leak = match precoder {
                            Precoder::Mrt => beta,
                            Precoder::Zf => beta - theta,
                        };
                        gain * theta / (1.0 + leak * p_tot)
                    })
                    .fold(0.0, f64::max)
            })
            .collect();
        let total = best_split(&eff, budget, points, &|s| {
            s.iter().zip(&cfg.sse_weights).map(|(&sinr, &a)| a * se(cfg, sinr)).sum()
        });
        best = best.max(total);
    }
    best
}

/// Tiny random instance: `U ∈ {1, 2}`, `G ∈ {1, 2}`, `K_j ∈ {1, 2}`.
pub fn tiny_instance(seed: u64) -> (SystemConfig, FadingProfile) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = rng.random_range(1..=2);
    let groups: Vec<usize> = (0..rng.random_range(1..=2)).map(|_| rng.random_range(1..=2)).collect();
    let log_uniform = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| (lo.ln() + rng.random::<f64>() * (hi / lo).ln()).exp();
    let cfg = SystemConfig {
        n_antennas: rng.random_range(8..=48),
        coherence_length: 100,
        n_unicast: u,
        pilot_length: u + groups.len(),
        total_power: log_uniform(&mut rng, 1.0, 100.0),
        unicast_energy_caps: (0..u).map(|_| log_uniform(&mut rng, 0.5, 20.0)).collect(),
        multicast_energy_caps: groups
            .iter()
            .map(|&k| (0..k).map(|_| log_uniform(&mut rng, 0.5, 20.0)).collect())
            .collect(),
        sse_weights: (0..u).map(|_| rng.random_range(0.5..2.0)).collect(),
        group_sizes: groups.clone(),
    };
    let fading = FadingProfile {
        unicast_gains: (0..u).map(|_| log_uniform(&mut rng, 0.05, 1.0)).collect(),
        multicast_gains: groups
            .iter()
            .map(|&k| (0..k).map(|_| log_uniform(&mut rng, 0.05, 1.0)).collect())
            .collect(),
    };
    (cfg, fading)
}

/// Random cell drop with `N ∈ [50, 200]`, `U ∈ [0, 8]`, `G ∈ [1, 4]`,
/// `K_j ∈ [1, 6]` at the default radio parameters.
pub fn desk_instance(seed: u64) -> Result<Scenario> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(50..=200);
    let u = rng.random_range(0..=8);
    let groups = (0..rng.random_range(1..=4)).map(|_| rng.random_range(1..=6)).collect();
    Scenario::generate(
        CellGeometry::default(),
        RadioParams::default(),
        PhysicalConfig::new(n, 200, u, groups),
        seed,
    )
}

/// Cell drop with the full-scale defaults (`T = 200`, 10 W over 20 MHz).
pub fn full_scale_drop(n: usize, u: usize, groups: Vec<usize>, seed: u64) -> Result<Scenario> {
    Scenario::generate(
        CellGeometry::default(),
        RadioParams::default(),
        PhysicalConfig::new(n, 200, u, groups),
        seed,
    )
}

/// SEs of the max-min allocation `multicast` (pilots, downlink powers) with
/// the unicast budget `p_unicast` spread equally and full-cap unicast pilots.
pub fn score_multicast(
    cfg: &SystemConfig,
    fading: &FadingProfile,
    precoder: Precoder,
    p_unicast: f64,
    pilot_length: usize,
    uplink: &[Vec<f64>],
    downlink: &[f64],
) -> Result<SeReport> {
    let cfg = cfg.with_pilot_length(pilot_length);
    let u = cfg.n_unicast;
    let pilots = PilotPowers {
        unicast: PilotPowers::from_energy_caps(&cfg).unicast,
        multicast: uplink.to_vec(),
    };
    let stats = estimation_variances(&cfg, fading, &pilots)?;
    let powers = DownlinkPowers {
        unicast: vec![if u > 0 { p_unicast / u as f64 } else { 0.0 }; u],
        multicast: downlink.to_vec(),
    };
    se_report(&cfg, &stats, fading, &powers, precoder)
}

/// `AC-n PASS: detail` / `AC-n FAIL: detail`.
pub fn report_line(id: &str, pass: bool, detail: &str) -> String {
    format!("{id} {}: {detail}", if pass { "PASS" } else { "FAIL" })
}

#[cfg(test)]
mod tests {
    use super::*;
    use umcast::allocation::{solve_mmf, solve_sse};

    #[test]
    fn grid_includes_both_ends() {
        let g: Vec<f64> = grid(5, 2.0).collect();
        assert_eq!(g, vec![0.0, 0.5, 1.0, 1.5, 2.0]);
    }

    #[test]
    fn oracle_formulas_agree_with_the_kernels() {
        // a single-terminal group at full cap and full budget is what the
        // oracle's last grid cell evaluates
        let (mut cfg, fading) = tiny_instance(3);
        cfg.group_sizes = vec![1];
        cfg.multicast_energy_caps = vec![vec![4.0]];
        let fading = FadingProfile {
            unicast_gains: fading.unicast_gains.clone(),
            multicast_gains: vec![vec![0.5]],
        };
        cfg.pilot_length = cfg.n_streams();
        for precoder in Precoder::ALL {
            let p_un = 0.25 * cfg.total_power;
            let q = cfg.total_power - p_un;
            let r = score_multicast(&cfg, &fading, precoder, p_un, cfg.pilot_length, &[vec![4.0 / cfg.pilot_length as f64]], &[q])
                .unwrap();
            let eff = group_efficiency(&[0.5], &[4.0], array_gain(&cfg, precoder), cfg.total_power, precoder, 2);
            assert!((eff * q / r.multicast_sinr[0][0] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn oracles_approach_the_closed_form_from_below() {
        let (cfg, fading) = tiny_instance(5);
        for precoder in Precoder::ALL {
            let half = 0.5 * cfg.total_power;
            let mmf = solve_mmf(&cfg, &fading, half, precoder).unwrap().objective;
            let sse = solve_sse(&cfg, &fading, half, precoder).unwrap().objective;
            let mmf_grid = mmf_grid_oracle(&cfg, &fading, half, precoder, 60);
            let sse_grid = sse_grid_oracle(&cfg, &fading, half, precoder, 60);
            assert!(mmf_grid <= mmf * (1.0 + 1e-12) && mmf_grid > 0.9 * mmf);
            assert!(sse_grid <= sse * (1.0 + 1e-12) && sse_grid > 0.9 * sse);
        }
    }

    #[test]
    fn empty_budgets_give_zero() {
        let (cfg, fading) = tiny_instance(1);
        assert_eq!(mmf_grid_oracle(&cfg, &fading, cfg.total_power, Precoder::Mrt, 10), 0.0);
        assert_eq!(sse_grid_oracle(&cfg, &fading, cfg.total_power, Precoder::Zf, 10), 0.0);
    }

    #[test]
    fn instances_respect_their_ranges() {
        for seed in 0..50 {
            let (cfg, _) = tiny_instance(seed);
            assert!((1..=2).contains(&cfg.n_unicast) && (1..=2).contains(&cfg.n_groups()));
            let s = desk_instance(seed).unwrap();
            assert!((50..=200).contains(&s.config.n_antennas));
            assert!(s.config.n_unicast <= 8 && (1..=4).contains(&s.config.n_groups()));
            assert!(s.config.group_sizes.iter().all(|k| (1..=6).contains(k)));
        }
    }

    #[test]
    fn report_line_format() {
        assert_eq!(report_line("AC-9", true, "x"), "AC-9 PASS: x");
        assert_eq!(report_line("AC-9", false, "y"), "AC-9 FAIL: y");
    }
}
