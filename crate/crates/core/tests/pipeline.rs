//! Drop generation through allocation, scored back through the SE kernels.

use umcast::allocation::{solve_mmf, solve_sse};
use umcast::model::{estimation_variances, PilotPowers};
use umcast::pareto::{select_operating_point, sweep_boundary, Policy};
use umcast::scenario::{CellGeometry, PhysicalConfig, RadioParams, Scenario};
use umcast::se::{se_report, DownlinkPowers, Precoder};

fn drop(n: usize, u: usize, groups: Vec<usize>, seed: u64) -> Scenario {
    Scenario::generate(
        CellGeometry::default(),
        RadioParams::default(),
        PhysicalConfig::new(n, 200, u, groups),
        seed,
    )
    .unwrap()
}

#[test]
fn mmf_solution_scores_to_its_objective() {
    let s = drop(128, 6, vec![5, 3, 8], 1);
    let cfg = &s.config;
    for precoder in Precoder::ALL {
        let p_un = 0.3 * cfg.total_power;
        let sol = solve_mmf(cfg, &s.fading, p_un, precoder).unwrap();
        let scored_cfg = cfg.with_pilot_length(sol.pilot_length);
        let pilots = PilotPowers {
            unicast: PilotPowers::from_energy_caps(&scored_cfg).unicast,
            multicast: sol.uplink_pilot_powers.clone(),
        };
        let stats = estimation_variances(&scored_cfg, &s.fading, &pilots).unwrap();
        let powers = DownlinkPowers {
            unicast: vec![p_un / 6.0; 6],
            multicast: sol.downlink_powers.clone(),
        };
        let r = se_report(&scored_cfg, &stats, &s.fading, &powers, precoder).unwrap();
        for se in r.multicast_se.iter().flatten() {
            assert!((se / sol.objective - 1.0).abs() < 1e-9, "{precoder}: {se} vs {}", sol.objective);
        }
    }
}

#[test]
fn sse_solution_scores_to_its_objective() {
    let s = drop(128, 6, vec![5, 3], 2);
    let cfg = &s.config;
    for precoder in Precoder::ALL {
        let p_mu = 0.4 * cfg.total_power;
        let sol = solve_sse(cfg, &s.fading, p_mu, precoder).unwrap();
        let scored_cfg = cfg.with_pilot_length(sol.pilot_length);
        let pilots = PilotPowers {
            unicast: sol.uplink_pilot_powers.clone(),
            multicast: PilotPowers::from_energy_caps(&scored_cfg).multicast,
        };
        let stats = estimation_variances(&scored_cfg, &s.fading, &pilots).unwrap();
        let powers = DownlinkPowers {
            unicast: sol.downlink_powers.clone(),
            multicast: vec![p_mu / 2.0; 2],
        };
        let r = se_report(&scored_cfg, &stats, &s.fading, &powers, precoder).unwrap();
        let scored = r.weighted_sum_se(&cfg.sse_weights);
        assert!((scored / sol.objective - 1.0).abs() < 1e-9, "{precoder}: {scored} vs {}", sol.objective);
    }
}

#[test]
fn more_antennas_never_hurt() {
    for precoder in Precoder::ALL {
        let mut last = (0.0, 0.0);
        for n in [100, 250, 500] {
            let s = drop(n, 20, vec![10; 4], 3);
            let half = s.config.total_power / 2.0;
            let mmf = solve_mmf(&s.config, &s.fading, half, precoder).unwrap().objective;
            let sse = solve_sse(&s.config, &s.fading, half, precoder).unwrap().objective;
            assert!(mmf > last.0 && sse > last.1);
            last = (mmf, sse);
        }
    }
}

#[test]
fn operating_points_lie_on_the_sweep() {
    let s = drop(100, 10, vec![20, 20], 4);
    let b = sweep_boundary(&s.config, &s.fading, Precoder::Mrt, 21).unwrap();
    let op = select_operating_point(&b, Policy::Ratio { unicast: 1.0, multicast: 1.0 }).unwrap();
    assert_eq!(op.point, b.points[10]);
    let op = select_operating_point(&b, Policy::Ratio { unicast: 1.0, multicast: 0.0 }).unwrap();
    assert_eq!(op.point, b.points[20]);
}

#[test]
fn scenario_document_reloads() {
    let s = drop(64, 4, vec![3, 3], 5);
    let text = serde_json::to_string_pretty(&s).unwrap();
    let back: Scenario = serde_json::from_str(&text).unwrap();
    assert_eq!(back, s);
    assert_eq!(serde_json::to_string_pretty(&back).unwrap(), text);
}
