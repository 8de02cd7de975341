//! Strong Pareto boundary between the multicast max-min SE and the unicast
//! weighted sum SE.
//!
//! Every boundary point spends the whole budget, so the boundary is a curve
//! in the single parameter `P_un ∈ [0, P]` with `P_mu = P - P_un`; each point
//! is solved exactly by the closed forms in [`crate::allocation`].

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::allocation::{solve_mmf, solve_sse, MmfSolution, SseSolution};
use crate::error::{Error, Result};
use crate::model::{FadingProfile, SystemConfig};
use crate::se::Precoder;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint {
    pub p_unicast: f64,
    pub p_multicast: f64,
    pub mmf_objective: f64,
    pub sse_objective: f64,
    pub mmf_solution: MmfSolution,
    pub sse_solution: SseSolution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoBoundary {
    /// Sorted by increasing `p_unicast`.
    pub points: Vec<ParetoPoint>,
    pub precoder: Precoder,
    pub config: SystemConfig,
    pub fading: FadingProfile,
}

/// Solves both problems at `P_un = p_unicast`, `P_mu = P - p_unicast`.
pub fn solve_point(
    cfg: &SystemConfig,
    fading: &FadingProfile,
    precoder: Precoder,
    p_unicast: f64,
) -> Result<ParetoPoint> {
    let total = cfg.total_power;
    if !(p_unicast.is_finite() && (0.0..=total).contains(&p_unicast)) {
        return Err(Error::invalid(format!("P_un = {p_unicast} outside [0, {total}]")));
    }
    let p_multicast = total - p_unicast;
    let mmf_solution = solve_mmf(cfg, fading, p_unicast, precoder)?;
    let sse_solution = solve_sse(cfg, fading, p_multicast, precoder)?;
    // zero-power endpoints are pinned rather than routed through the solvers
    let mmf_objective = if p_multicast == 0.0 { 0.0 } else { mmf_solution.objective };
    let sse_objective = if p_unicast == 0.0 { 0.0 } else { sse_solution.objective };
    Ok(ParetoPoint {
        p_unicast,
        p_multicast,
        mmf_objective,
        sse_objective,
        mmf_solution,
        sse_solution,
    })
}

/// Traces the boundary at `P_un = i P / (n_points - 1)`, `i = 0..n_points`.
pub fn sweep_boundary(
    cfg: &SystemConfig,
    fading: &FadingProfile,
    precoder: Precoder,
    n_points: usize,
) -> Result<ParetoBoundary> {
    if n_points < 2 {
        return Err(Error::invalid(format!("need at least 2 boundary points, got {n_points}")));
    }
    crate::model::check(cfg, fading)?;
    if cfg.n_unicast == 0 || cfg.n_groups() == 0 {
        return Err(Error::invalid("the boundary needs at least one unicast user and one multicast group"));
    }
    precoder.array_gain(cfg)?;
    let total = cfg.total_power;
    let last = n_points - 1;
    let points = (0..n_points)
        .into_par_iter()
        .map(|i| {
            let p_un = if i == last { total } else { i as f64 * total / last as f64 };
            solve_point(cfg, fading, precoder, p_un)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ParetoBoundary {
        points,
        precoder,
        config: cfg.clone(),
        fading: fading.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvexityReport {
    pub is_concave_boundary: bool,
    /// Largest `chord - curve` over consecutive triples; positive means a dent.
    pub worst_violation: f64,
    /// Largest sum-SE magnitude on the boundary; the pass threshold is
    /// `1e-9 * scale`.
    pub scale: f64,
}

/// Relative tolerance of the concavity test.
pub const CONCAVITY_TOL: f64 = 1e-9;

/// Midpoint-concavity test of the sum SE viewed as a function of the
/// max-min SE along the boundary.
pub fn check_convexity(boundary: &ParetoBoundary) -> Result<ConvexityReport> {
    let pts = &boundary.points;
    if pts.len() < 3 {
        return Err(Error::invalid(format!("convexity test needs 3 points, got {}", pts.len())));
    }
    if pts.windows(2).any(|w| !(w[0].p_unicast < w[1].p_unicast)) {
        return Err(Error::invalid("boundary points are not ordered by increasing P_un"));
    }
    let scale = pts.iter().fold(0.0_f64, |m, p| m.max(p.sse_objective.abs())).max(f64::MIN_POSITIVE);
    let mut worst = f64::NEG_INFINITY;
    for w in pts.windows(3) {
        let (x0, y0) = (w[0].mmf_objective, w[0].sse_objective);
        let (x1, y1) = (w[1].mmf_objective, w[1].sse_objective);
        let (x2, y2) = (w[2].mmf_objective, w[2].sse_objective);
        let violation = if x0 == x2 {
            // degenerate triple: only the middle ordinate can be checked
            y0.min(y2) - y1
        } else {
            let chord = y0 + (y2 - y0) * (x1 - x0) / (x2 - x0);
            chord - y1
        };
        worst = worst.max(violation);
    }
    let worst = worst.max(0.0);
    Ok(ConvexityReport {
        is_concave_boundary: worst <= CONCAVITY_TOL * scale,
        worst_violation: worst,
        scale,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum Policy {
    /// `P_un : P_mu = unicast : multicast`.
    Ratio { unicast: f64, multicast: f64 },
    /// Smallest `P_mu` reaching the given max-min SE.
    TargetMmf { value: f64 },
    /// Smallest `P_un` reaching the given sum SE.
    TargetSse { value: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub point: ParetoPoint,
    /// Set when the target was outside the achievable range and the nearest
    /// endpoint was returned instead.
    pub clamped: bool,
}

/// Picks the boundary point matching `policy`, re-solved exactly at its split.
pub fn select_operating_point(boundary: &ParetoBoundary, policy: Policy) -> Result<OperatingPoint> {
    let cfg = &boundary.config;
    let fading = &boundary.fading;
    let precoder = boundary.precoder;
    let total = cfg.total_power;
    let solve = |p_un: f64| solve_point(cfg, fading, precoder, p_un.clamp(0.0, total));

    let (p_un, clamped) = match policy {
        Policy::Ratio { unicast, multicast } => {
            let split = crate::model::PowerSplit::from_ratio(total, unicast, multicast)?;
            (split.p_unicast, false)
        }
        Policy::TargetMmf { value } => {
            if !value.is_finite() {
                return Err(Error::invalid("target must be finite"));
            }
            let top = solve(0.0)?;
            if value <= 0.0 {
                (total, value < 0.0)
            } else if value >= top.mmf_objective {
                (0.0, value > top.mmf_objective)
            } else {
                // the common SINR is linear in P_mu: Γ = c P_mu
                let slope = top.mmf_solution.common_sinr / total;
                let prelog = crate::model::prelog(top.mmf_solution.pilot_length, cfg.coherence_length);
                let sinr = (value / prelog * std::f64::consts::LN_2).exp_m1();
                ((total - sinr / slope).clamp(0.0, total), false)
            }
        }
        Policy::TargetSse { value } => {
            if !value.is_finite() {
                return Err(Error::invalid("target must be finite"));
            }
            let top = solve(total)?;
            if value <= 0.0 {
                (0.0, value < 0.0)
            } else if value >= top.sse_objective {
                (total, value > top.sse_objective)
            } else {
                let (mut lo, mut hi) = (0.0, total);
                while hi - lo > 1e-13 * total {
                    let mid = 0.5 * (lo + hi);
                    if mid <= lo || mid >= hi {
                        break;
                    }
                    if solve(mid)?.sse_objective < value {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                (hi, false)
            }
        }
    };
    Ok(OperatingPoint {
        point: solve(p_un)?,
        clamped,
    })
}

/// One CSV row of a serialized boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryRow {
    pub p_un: f64,
    pub p_mu: f64,
    pub mmf_se: f64,
    pub sse: f64,
    pub precoder: Precoder,
    #[serde(rename = "N")]
    pub n_antennas: usize,
}

pub const CSV_HEADER: [&str; 6] = ["p_un", "p_mu", "mmf_se", "sse", "precoder", "N"];

/// Formats a real with 17 significant digits.
pub fn fmt_real(x: f64) -> String {
    format!("{x:.16e}")
}

impl ParetoBoundary {
    pub fn rows(&self) -> Vec<BoundaryRow> {
        self.points
            .iter()
            .map(|p| BoundaryRow {
                p_un: p.p_unicast,
                p_mu: p.p_multicast,
                mmf_se: p.mmf_objective,
                sse: p.sse_objective,
                precoder: self.precoder,
                n_antennas: self.config.n_antennas,
            })
            .collect()
    }
}

pub fn write_csv<W: Write>(rows: &[BoundaryRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record([
            fmt_real(r.p_un),
            fmt_real(r.p_mu),
            fmt_real(r.mmf_se),
            fmt_real(r.sse),
            r.precoder.to_string(),
            r.n_antennas.to_string(),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_csv<R: Read>(input: R) -> Result<Vec<BoundaryRow>> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    if header.iter().ne(CSV_HEADER) {
        return Err(Error::invalid(format!("unexpected CSV header {:?}", header)));
    }
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}
