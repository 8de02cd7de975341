//! Grid sweeps behind the three result figures.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use umcast::allocation::{solve_mmf, solve_sse};
use umcast::pareto::{fmt_real, sweep_boundary, BoundaryRow};
use umcast::scenario::{CellGeometry, PhysicalConfig, RadioParams, Scenario};
use umcast::{Error, Precoder};

use crate::error::CliResult;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub n_values: Vec<usize>,
    pub g_values: Vec<usize>,
    pub k_values: Vec<usize>,
    pub u_values: Vec<usize>,
    /// `U` for fig2 and fig4.
    pub unicast: usize,
    /// `G` for fig3 and fig4.
    pub groups: usize,
    /// `K` for fig3 and fig4.
    pub group_size: usize,
    pub coherence_length: usize,
    pub points: usize,
    pub drops: usize,
    pub seed: u64,
    pub precoders: Vec<Precoder>,
    pub geometry: CellGeometry,
    pub radio: RadioParams,
}

/// Seed of drop `d`.
pub fn drop_seed(seed: u64, d: usize) -> u64 {
    seed.wrapping_add(d as u64)
}

fn drops(spec: &SweepSpec, n: usize, u: usize, groups: Vec<usize>) -> Result<Vec<Scenario>, Error> {
    (0..spec.drops)
        .map(|d| {
            Scenario::generate(
                spec.geometry,
                spec.radio,
                PhysicalConfig::new(n, spec.coherence_length, u, groups.clone()),
                drop_seed(spec.seed, d),
            )
        })
        .collect()
}

/// Mean objective over drops; `None` when ZF has no spare antennas.
fn averaged(scenarios: &[Scenario], mut f: impl FnMut(&Scenario) -> Result<f64, Error>) -> Result<Option<f64>, Error> {
    let mut sum = 0.0;
    for s in scenarios {
        match f(s) {
            Ok(v) => sum += v,
            Err(Error::ZfInfeasible { .. }) => return Ok(None),
            Err(e) => return Err(e),
        }
    }
    Ok(Some(sum / scenarios.len() as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceRow {
    pub precoder: Precoder,
    pub n: usize,
    pub u: usize,
    pub g: usize,
    pub k: usize,
    pub drops: usize,
    /// Multicast max-min SE (fig2) or unicast sum SE (fig3); 0 when infeasible.
    pub value: f64,
    pub feasible: bool,
}

fn surface_row(spec: &SweepSpec, precoder: Precoder, cell: (usize, usize, usize, usize), value: Option<f64>) -> SurfaceRow {
    let (n, u, g, k) = cell;
    SurfaceRow {
        precoder,
        n,
        u,
        g,
        k,
        drops: spec.drops,
        value: value.unwrap_or(0.0),
        feasible: value.is_some(),
    }
}

/// Max-min multicast SE over `G × K × N` at `P_un = P_mu`.
pub fn fig2(spec: &SweepSpec) -> CliResult<Vec<SurfaceRow>> {
    let cells: Vec<(usize, usize, usize)> = spec
        .n_values
        .iter()
        .flat_map(|&n| spec.g_values.iter().flat_map(move |&g| spec.k_values.iter().map(move |&k| (n, g, k))))
        .collect();
    let rows = cells
        .par_iter()
        .map(|&(n, g, k)| -> Result<Vec<SurfaceRow>, Error> {
            let scenarios = drops(spec, n, spec.unicast, vec![k; g])?;
            spec.precoders
                .iter()
                .map(|&precoder| {
                    let v = averaged(&scenarios, |s| {
                        Ok(solve_mmf(&s.config, &s.fading, s.config.total_power / 2.0, precoder)?.objective)
                    })?;
                    Ok(surface_row(spec, precoder, (n, spec.unicast, g, k), v))
                })
                .collect()
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(rows.into_iter().flatten().collect())
}

/// Unicast sum SE over `U × N` at `P_un = P_mu`.
pub fn fig3(spec: &SweepSpec) -> CliResult<Vec<SurfaceRow>> {
    let cells: Vec<(usize, usize)> = spec
        .n_values
        .iter()
        .flat_map(|&n| spec.u_values.iter().map(move |&u| (n, u)))
        .collect();
    let (g, k) = (spec.groups, spec.group_size);
    let rows = cells
        .par_iter()
        .map(|&(n, u)| -> Result<Vec<SurfaceRow>, Error> {
            let scenarios = drops(spec, n, u, vec![k; g])?;
            spec.precoders
                .iter()
                .map(|&precoder| {
                    let v = averaged(&scenarios, |s| {
                        Ok(solve_sse(&s.config, &s.fading, s.config.total_power / 2.0, precoder)?.objective)
                    })?;
                    Ok(surface_row(spec, precoder, (n, u, g, k), v))
                })
                .collect()
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(rows.into_iter().flatten().collect())
}

/// Pareto boundary for every `N` and precoder, objectives averaged over
/// drops point by point.
pub fn fig4(spec: &SweepSpec) -> CliResult<Vec<BoundaryRow>> {
    let mut out = Vec::new();
    for &n in &spec.n_values {
        let scenarios = drops(spec, n, spec.unicast, vec![spec.group_size; spec.groups])?;
        for &precoder in &spec.precoders {
            let boundaries = scenarios
                .iter()
                .map(|s| sweep_boundary(&s.config, &s.fading, precoder, spec.points))
                .collect::<Result<Vec<_>, _>>()?;
            let mut rows = boundaries[0].rows();
            for (i, row) in rows.iter_mut().enumerate() {
                let m = boundaries.len() as f64;
                row.mmf_se = boundaries.iter().map(|b| b.points[i].mmf_objective).sum::<f64>() / m;
                row.sse = boundaries.iter().map(|b| b.points[i].sse_objective).sum::<f64>() / m;
            }
            out.extend(rows);
        }
    }
    Ok(out)
}

pub const FIG2_HEADER: [&str; 8] = ["precoder", "N", "G", "K", "U", "drops", "mmf_se", "feasible"];
pub const FIG3_HEADER: [&str; 8] = ["precoder", "N", "U", "G", "K", "drops", "sse", "feasible"];

pub fn write_fig2<W: Write>(rows: &[SurfaceRow], out: W) -> Result<(), Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(FIG2_HEADER)?;
    for r in rows {
        w.write_record([
            r.precoder.to_string(),
            r.n.to_string(),
            r.g.to_string(),
            r.k.to_string(),
            r.u.to_string(),
            r.drops.to_string(),
            fmt_real(r.value),
            r.feasible.to_string(),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn write_fig3<W: Write>(rows: &[SurfaceRow], out: W) -> Result<(), Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(FIG3_HEADER)?;
    for r in rows {
        w.write_record([
            r.precoder.to_string(),
            r.n.to_string(),
            r.u.to_string(),
            r.g.to_string(),
            r.k.to_string(),
            r.drops.to_string(),
            fmt_real(r.value),
            r.feasible.to_string(),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> SweepSpec {
        SweepSpec {
            n_values: vec![8, 32],
            g_values: vec![1, 2],
            k_values: vec![1, 3],
            u_values: vec![2, 6],
            unicast: 2,
            groups: 2,
            group_size: 2,
            coherence_length: 50,
            points: 5,
            drops: 2,
            seed: 3,
            precoders: vec![Precoder::Mrt, Precoder::Zf],
            geometry: CellGeometry::default(),
            radio: RadioParams::default(),
        }
    }

    #[test]
    fn fig2_grid_shape_and_trend() {
        let rows = fig2(&spec()).unwrap();
        assert_eq!(rows.len(), 2 * 2 * 2 * 2);
        assert!(rows.iter().all(|r| r.feasible && r.value > 0.0));
        let pick = |n, k| rows.iter().find(|r| r.precoder == Precoder::Mrt && r.n == n && r.g == 2 && r.k == k).unwrap().value;
        assert!(pick(32, 1) > pick(8, 1));
        assert!(pick(32, 3) < pick(32, 1));
    }

    #[test]
    fn fig3_flags_zf_without_spare_antennas() {
        let rows = fig3(&spec()).unwrap();
        let zf_small = rows.iter().find(|r| r.precoder == Precoder::Zf && r.n == 8 && r.u == 6).unwrap();
        assert!(!zf_small.feasible);
        assert_eq!(zf_small.value, 0.0);
        let mrt_small = rows.iter().find(|r| r.precoder == Precoder::Mrt && r.n == 8 && r.u == 6).unwrap();
        assert!(mrt_small.feasible && mrt_small.value > 0.0);
    }

    #[test]
    fn fig4_rows_per_n_and_precoder() {
        let rows = fig4(&spec()).unwrap();
        assert_eq!(rows.len(), 2 * 2 * 5);
        assert_eq!(rows[0].sse, 0.0);
        assert_eq!(rows[4].mmf_se, 0.0);
    }

    #[test]
    fn single_drop_average_is_the_drop() {
        let mut s = spec();
        s.drops = 1;
        let rows = fig2(&s).unwrap();
        let scen = drops(&s, 8, 2, vec![1]).unwrap();
        let direct = solve_mmf(&scen[0].config, &scen[0].fading, scen[0].config.total_power / 2.0, Precoder::Mrt)
            .unwrap()
            .objective;
        let row = rows.iter().find(|r| r.precoder == Precoder::Mrt && r.n == 8 && r.g == 1 && r.k == 1).unwrap();
        assert_eq!(row.value, direct);
    }

    #[test]
    fn csv_headers() {
        let mut buf = Vec::new();
        write_fig2(&[], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "precoder,N,G,K,U,drops,mmf_se,feasible\n");
        let mut buf = Vec::new();
        write_fig3(&[], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "precoder,N,U,G,K,drops,sse,feasible\n");
    }
}
