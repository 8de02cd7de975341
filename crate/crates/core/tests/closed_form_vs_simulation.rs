use umcast::model::{estimation_variances, FadingProfile, PilotPowers, SystemConfig};
use umcast::montecarlo::{simulate, validate_closed_form, Target, ValidationReport};
use umcast::se::{se_report, DownlinkPowers, Precoder};

fn config(n: usize, u: usize, groups: Vec<usize>, p: f64) -> (SystemConfig, FadingProfile) {
    let g = groups.len();
    let cfg = SystemConfig {
        n_antennas: n,
        coherence_length: 100,
        n_unicast: u,
        pilot_length: u + g,
        total_power: p,
        unicast_energy_caps: (0..u).map(|i| 2.0 + i as f64).collect(),
        multicast_energy_caps: groups.iter().map(|&k| (0..k).map(|i| 1.0 + 3.0 * i as f64).collect()).collect(),
        sse_weights: vec![1.0; u],
        group_sizes: groups.clone(),
    };
    let fading = FadingProfile {
        unicast_gains: (0..u).map(|i| 1.0 / (1.0 + i as f64)).collect(),
        multicast_gains: groups
            .iter()
            .enumerate()
            .map(|(j, &k)| (0..k).map(|i| 0.2 + 0.5 * ((i + j) % 3) as f64).collect())
            .collect(),
    };
    (cfg, fading)
}

/// 24 combinations of precoder, topology and power; every terminal's
/// empirical SINR must sit within three 95% half-widths of the closed form.
#[test]
fn closed_forms_match_simulation_across_combinations() {
    let topologies = [
        (12, 1, vec![1]),
        (16, 2, vec![2, 2]),
        (24, 0, vec![3]),
        (20, 3, vec![]),
        (32, 2, vec![4, 1, 2]),
        (10, 4, vec![2]),
    ];
    let mut combos = 0;
    for (n, u, groups) in topologies {
        for p in [1.0, 30.0] {
            for precoder in Precoder::ALL {
                let (cfg, fading) = config(n, u, groups.clone(), p);
                let pilots = PilotPowers::from_energy_caps(&cfg);
                let powers = DownlinkPowers::equal(
                    &cfg,
                    if u > 0 { 0.4 * p } else { 0.0 },
                    if groups.is_empty() { 0.0 } else { 0.6 * p },
                );
                let r = validate_closed_form(&cfg, &fading, &pilots, &powers, precoder, 3000, combos).unwrap();
                for rec in &r.records {
                    let gap = (rec.empirical - rec.closed_form).abs();
                    assert!(
                        gap <= 3.0 * rec.ci_halfwidth,
                        "{precoder} N={n} U={u} {:?} P={p}: {rec:?}",
                        groups
                    );
                }
                combos += 1;
            }
        }
    }
    assert!(combos >= 20);
}

#[test]
fn mis_scaled_precoders_are_caught() {
    let (cfg, fading) = config(32, 3, vec![3, 3], 5.0);
    let pilots = PilotPowers::from_energy_caps(&cfg);
    let powers = DownlinkPowers::equal(&cfg, 2.0, 3.0);
    let stats = estimation_variances(&cfg, &fading, &pilots).unwrap();
    for precoder in Precoder::ALL {
        let nominal = se_report(&cfg, &stats, &fading, &powers, precoder).unwrap();
        let run = simulate(
            &cfg,
            &fading,
            &pilots,
            &powers.scaled(1.1),
            precoder,
            &Target::all(&cfg),
            10_000,
            99,
        )
        .unwrap();
        let report = ValidationReport::from_parts(&nominal, &run).unwrap();
        assert!(!report.passed, "{precoder}: {report:?}");
        assert!(report.records.iter().all(|r| r.z > 0.0));
    }
}

#[test]
fn scaling_all_powers_moves_toward_the_interference_limit() {
    let (cfg, fading) = config(16, 2, vec![2], 4.0);
    let pilots = PilotPowers::from_energy_caps(&cfg);
    let stats = estimation_variances(&cfg, &fading, &pilots).unwrap();
    let target = Target::Unicast { index: 0 };
    let mut prev = 0.0;
    for scale in [1.0, 2.0, 4.0] {
        let mut c = cfg.clone();
        c.total_power *= scale;
        let powers = DownlinkPowers::equal(&c, 0.5 * c.total_power, 0.5 * c.total_power);
        let cf = se_report(&c, &stats, &fading, &powers, Precoder::Mrt).unwrap().unicast_sinr[0];
        let run = simulate(&c, &fading, &pilots, &powers, Precoder::Mrt, &[target], 4000, 7).unwrap();
        let s = &run.statistics[0];
        assert!((s.empirical_sinr - cf).abs() <= 3.0 * s.confidence_halfwidth);
        assert!(cf > prev);
        prev = cf;
    }
    // P → ∞ limit: N p ϑ / (β P) with p = P / (2U)
    let limit = 16.0 * 0.25 * stats.unicast_var[0] / fading.unicast_gains[0];
    assert!(prev < limit);
}
