//! Link-level Monte Carlo check of the closed-form SINRs.
//!
//! Each trial draws Rayleigh channels, runs the pilot phase (MMSE estimation
//! with one shared pilot per multicast group), builds the MRT or ZF precoders
//! from the estimates and records the effective gains `h_i = c^H x_i` between
//! every terminal channel `c` and every precoder column `x_i`. The SINR of a
//! terminal is then assembled from sample means as
//!
//! ```text
//! |E[h_own]|² / (1 + Σ_i E[|h_i|²] - |E[h_own]|²)
//! ```
//!
//! Trial `t` draws its channels from ChaCha20 stream `2t` and its receiver
//! noise from stream `2t + 1` of the run seed, and trials are reduced in
//! fixed-size chunks in index order, so results do not depend on the number
//! of threads.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{estimation_variances, EstimationStats, FadingProfile, PilotPowers, SystemConfig};
use crate::se::{se_report, DownlinkPowers, Precoder, SeReport};

pub type CMatrix = DMatrix<Complex64>;

/// Fewest trials accepted by [`simulate`].
pub const MIN_TRIALS: usize = 100;
/// Gram matrices with a larger condition number are treated as singular.
pub const MAX_CONDITION: f64 = 1e12;
/// Trials per reduction chunk.
const CHUNK: usize = 64;

/// Per-trial generators: `(channels, noise)`.
pub fn trial_rngs(seed: u64, trial: u64) -> (ChaCha20Rng, ChaCha20Rng) {
    let mut channel = ChaCha20Rng::seed_from_u64(seed);
    channel.set_stream(2 * trial);
    let mut noise = ChaCha20Rng::seed_from_u64(seed);
    noise.set_stream(2 * trial + 1);
    (channel, noise)
}

fn cn<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> Complex64 {
    let s = (0.5 * variance).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(s * re, s * im)
}

/// `n` rows, one column per variance, filled column by column.
fn cn_matrix<R: Rng + ?Sized>(rng: &mut R, n: usize, variances: &[f64]) -> CMatrix {
    let mut data = Vec::with_capacity(n * variances.len());
    for &v in variances {
        data.extend((0..n).map(|_| cn(rng, v)));
    }
    CMatrix::from_vec(n, variances.len(), data)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelDraw {
    /// `N × U`, column `u` is `f_u`.
    pub unicast_channels: CMatrix,
    /// One `N × K_g` matrix per group, column `k` is `g_gk`.
    pub multicast_channels: Vec<CMatrix>,
}

pub fn draw_channels_with<R: Rng + ?Sized>(cfg: &SystemConfig, fading: &FadingProfile, rng: &mut R) -> ChannelDraw {
    let n = cfg.n_antennas;
    ChannelDraw {
        unicast_channels: cn_matrix(rng, n, &fading.unicast_gains),
        multicast_channels: fading.multicast_gains.iter().map(|etas| cn_matrix(rng, n, etas)).collect(),
    }
}

/// Channels of trial 0 under `seed`.
pub fn draw_channels(cfg: &SystemConfig, fading: &FadingProfile, seed: u64) -> ChannelDraw {
    draw_channels_with(cfg, fading, &mut trial_rngs(seed, 0).0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateSet {
    /// `N × U`, column `u` is `f̂_u`.
    pub unicast_estimates: CMatrix,
    /// `N × G`, column `g` is the composite estimate `ĝ_g`.
    pub group_estimates: CMatrix,
    /// `ĝ_gk = member_scale[g][k] · ĝ_g`.
    pub member_scale: Vec<Vec<f64>>,
}

impl EstimateSet {
    pub fn member_estimate(&self, group: usize, member: usize) -> DVector<Complex64> {
        self.group_estimates.column(group) * Complex64::from(self.member_scale[group][member])
    }
}

pub fn mmse_estimate_with<R: Rng + ?Sized>(
    cfg: &SystemConfig,
    fading: &FadingProfile,
    pilots: &PilotPowers,
    draw: &ChannelDraw,
    rng: &mut R,
) -> Result<EstimateSet> {
    pilots.check_shape(cfg)?;
    let n = cfg.n_antennas;
    let tau = cfg.pilot_length as f64;

    let mut unicast_estimates = CMatrix::zeros(n, cfg.n_unicast);
    for (u, (&beta, &p)) in fading.unicast_gains.iter().zip(&pilots.unicast).enumerate() {
        let amp = (tau * p).sqrt();
        let scale = amp * beta / (1.0 + tau * p * beta);
        let f = draw.unicast_channels.column(u);
        for i in 0..n {
            let y = f[i] * amp + cn(rng, 1.0);
            unicast_estimates[(i, u)] = y * scale;
        }
    }

    let g = cfg.n_groups();
    let mut group_estimates = CMatrix::zeros(n, g);
    let mut member_scale = Vec::with_capacity(g);
    for (j, (etas, qs)) in fading.multicast_gains.iter().zip(&pilots.multicast).enumerate() {
        let amps: Vec<f64> = qs.iter().map(|&q| (tau * q).sqrt()).collect();
        let received: f64 = etas.iter().zip(qs).map(|(&eta, &q)| tau * q * eta).sum();
        let chans = &draw.multicast_channels[j];
        let scale = received / (1.0 + received);
        for i in 0..n {
            let mut y = cn(rng, 1.0);
            for (k, &a) in amps.iter().enumerate() {
                y += chans[(i, k)] * a;
            }
            group_estimates[(i, j)] = y * scale;
        }
        member_scale.push(
            etas.iter()
                .zip(&amps)
                .map(|(&eta, &a)| if received > 0.0 { a * eta / received } else { 0.0 })
                .collect(),
        );
    }
    Ok(EstimateSet {
        unicast_estimates,
        group_estimates,
        member_scale,
    })
}

/// Estimates for `draw` with receiver noise from trial 0 of `noise_seed`.
pub fn mmse_estimate(
    cfg: &SystemConfig,
    fading: &FadingProfile,
    pilots: &PilotPowers,
    draw: &ChannelDraw,
    noise_seed: u64,
) -> Result<EstimateSet> {
    mmse_estimate_with(cfg, fading, pilots, draw, &mut trial_rngs(noise_seed, 0).1)
}

/// Unicast precoders `V` (`N × U`) and multicast precoders `W` (`N × G`).
#[derive(Debug, Clone, PartialEq)]
pub struct Precoders {
    pub v: CMatrix,
    pub w: CMatrix,
}

impl Precoders {
    /// `[V, W]`.
    pub fn combined(&self) -> CMatrix {
        let n = self.v.nrows();
        let (u, g) = (self.v.ncols(), self.w.ncols());
        let mut out = CMatrix::zeros(n, u + g);
        out.columns_mut(0, u).copy_from(&self.v);
        out.columns_mut(u, g).copy_from(&self.w);
        out
    }
}

/// Stream powers and estimate variances in stream order (unicast, then groups).
fn stream_params(cfg: &SystemConfig, powers: &DownlinkPowers, stats: &EstimationStats) -> Result<Vec<(f64, f64)>> {
    powers.check(cfg)?;
    stats.check_shape(cfg)?;
    let params: Vec<(f64, f64)> = powers
        .unicast
        .iter()
        .zip(&stats.unicast_var)
        .chain(powers.multicast.iter().zip(&stats.group_var))
        .map(|(&p, &v)| (p, v))
        .collect();
    for (stream, &(power, var)) in params.iter().enumerate() {
        if power > 0.0 && var <= 0.0 {
            return Err(Error::ZeroEstimateVariance { stream, power });
        }
    }
    Ok(params)
}

fn estimate_matrix(est: &EstimateSet) -> CMatrix {
    Precoders {
        v: est.unicast_estimates.clone(),
        w: est.group_estimates.clone(),
    }
    .combined()
}

fn split(cfg: &SystemConfig, mut x: CMatrix) -> Precoders {
    let u = cfg.n_unicast;
    let w = x.columns(u, cfg.n_groups()).into_owned();
    x.resize_horizontally_mut(u, Complex64::ZERO);
    Precoders { v: x, w }
}

/// `v_m = √(p_m / (N ϑ_m)) f̂_m`, `w_j = √(q_j / (N γ_j)) ĝ_j`.
pub fn build_mrt_precoders(
    cfg: &SystemConfig,
    est: &EstimateSet,
    powers: &DownlinkPowers,
    stats: &EstimationStats,
) -> Result<Precoders> {
    let params = stream_params(cfg, powers, stats)?;
    let n = cfg.n_antennas as f64;
    let mut x = estimate_matrix(est);
    for (i, &(p, var)) in params.iter().enumerate() {
        let s = if p == 0.0 { 0.0 } else { (p / (n * var)).sqrt() };
        x.column_mut(i).scale_mut(s);
    }
    Ok(split(cfg, x))
}

/// Columns of `Ĉ (Ĉ^H Ĉ)^{-1}` scaled by `√((N-G-U) p_i var_i)`, where
/// `Ĉ = [F̂, Ĝ]`. The Gram system is solved through its Cholesky factor.
pub fn build_zf_precoders(
    cfg: &SystemConfig,
    est: &EstimateSet,
    powers: &DownlinkPowers,
    stats: &EstimationStats,
) -> Result<Precoders> {
    let gain = cfg.zf_gain()?;
    let params = stream_params(cfg, powers, stats)?;
    let mut c = estimate_matrix(est);
    // unit-norm columns: the condition test is then scale-free, and
    // Ĉ D (D Ĉ^H Ĉ D)^{-1} = Ĉ (Ĉ^H Ĉ)^{-1} D^{-1} is undone below
    let norms: Vec<f64> = c.column_iter().map(|col| col.norm()).collect();
    if norms.iter().any(|&d| !(d > 0.0 && d.is_finite())) {
        return Err(Error::RankDeficient { condition: f64::INFINITY });
    }
    for (i, &d) in norms.iter().enumerate() {
        c.column_mut(i).unscale_mut(d);
    }
    let gram = c.adjoint() * &c;
    let eig = gram.clone().symmetric_eigenvalues();
    let (lo, hi) = eig.iter().fold((f64::INFINITY, 0.0_f64), |(lo, hi), &e| (lo.min(e), hi.max(e)));
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if !(condition <= MAX_CONDITION) {
        return Err(Error::RankDeficient { condition });
    }
    let chol = gram.cholesky().ok_or(Error::RankDeficient { condition })?;
    let streams = params.len();
    let mut x = &c * chol.solve(&CMatrix::identity(streams, streams));
    for (i, &(p, var)) in params.iter().enumerate() {
        x.column_mut(i).scale_mut((gain * p * var).sqrt() / norms[i]);
    }
    Ok(split(cfg, x))
}

pub fn build_precoders(
    precoder: Precoder,
    cfg: &SystemConfig,
    est: &EstimateSet,
    powers: &DownlinkPowers,
    stats: &EstimationStats,
) -> Result<Precoders> {
    match precoder {
        Precoder::Mrt => build_mrt_precoders(cfg, est, powers, stats),
        Precoder::Zf => build_zf_precoders(cfg, est, powers, stats),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Target {
    Unicast { index: usize },
    Multicast { group: usize, member: usize },
}

impl Target {
    /// Every terminal: unicast in order, then multicast group by group.
    pub fn all(cfg: &SystemConfig) -> Vec<Target> {
        let mut out: Vec<Target> = (0..cfg.n_unicast).map(|index| Target::Unicast { index }).collect();
        for (group, &k) in cfg.group_sizes.iter().enumerate() {
            out.extend((0..k).map(|member| Target::Multicast { group, member }));
        }
        out
    }

    fn check(&self, cfg: &SystemConfig) -> Result<()> {
        match *self {
            Target::Unicast { index } if index >= cfg.n_unicast => Err(Error::IndexOutOfRange {
                kind: "unicast user",
                index,
                len: cfg.n_unicast,
            }),
            Target::Multicast { group, .. } if group >= cfg.n_groups() => Err(Error::IndexOutOfRange {
                kind: "multicast group",
                index: group,
                len: cfg.n_groups(),
            }),
            Target::Multicast { group, member } if member >= cfg.group_sizes[group] => {
                Err(Error::IndexOutOfRange {
                    kind: "group member",
                    index: member,
                    len: cfg.group_sizes[group],
                })
            }
            _ => Ok(()),
        }
    }

    /// `(channel column in [F, G_1, …, G_G], own stream)`.
    fn locate(&self, cfg: &SystemConfig) -> (usize, usize) {
        match *self {
            Target::Unicast { index } => (index, index),
            Target::Multicast { group, member } => {
                let offset: usize = cfg.group_sizes[..group].iter().sum();
                (cfg.n_unicast + offset + member, cfg.n_unicast + group)
            }
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Target::Unicast { .. } => "unicast",
            Target::Multicast { .. } => "multicast",
        }
    }

    pub fn index(&self) -> Vec<usize> {
        match *self {
            Target::Unicast { index } => vec![index],
            Target::Multicast { group, member } => vec![group, member],
        }
    }
}

/// Running mean and co-moment of `(Re h_own, Im h_own, Σ_i |h_i|²)` plus
/// per-stream power sums; merged with Chan's pairwise update.
#[derive(Debug, Clone)]
struct Moments {
    n: f64,
    mean: [f64; 3],
    m2: [[f64; 3]; 3],
    power_sum: Vec<f64>,
}

impl Moments {
    fn new(streams: usize) -> Self {
        Moments {
            n: 0.0,
            mean: [0.0; 3],
            m2: [[0.0; 3]; 3],
            power_sum: vec![0.0; streams],
        }
    }

    fn push(&mut self, x: [f64; 3], powers: impl Iterator<Item = f64>) {
        self.n += 1.0;
        let mut delta = [0.0; 3];
        for a in 0..3 {
            delta[a] = x[a] - self.mean[a];
            self.mean[a] += delta[a] / self.n;
        }
        for a in 0..3 {
            for b in 0..3 {
                self.m2[a][b] += delta[a] * (x[b] - self.mean[b]);
            }
        }
        for (s, p) in self.power_sum.iter_mut().zip(powers) {
            *s += p;
        }
    }

    fn merge(&mut self, other: &Moments) {
        if other.n == 0.0 {
            return;
        }
        let n = self.n + other.n;
        let mut delta = [0.0; 3];
        for a in 0..3 {
            delta[a] = other.mean[a] - self.mean[a];
        }
        for a in 0..3 {
            for b in 0..3 {
                self.m2[a][b] += other.m2[a][b] + delta[a] * delta[b] * self.n * other.n / n;
            }
        }
        for a in 0..3 {
            self.mean[a] += delta[a] * other.n / n;
        }
        for (s, o) in self.power_sum.iter_mut().zip(&other.power_sum) {
            *s += o;
        }
        self.n = n;
    }
}

/// Sample statistics of one terminal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialStatistics {
    pub target: Target,
    /// `E[h_own]`, real and imaginary parts.
    pub desired_mean: [f64; 2],
    /// `|E[h_own]|²`.
    pub desired_power_mean: f64,
    /// `E[|h_i|²]` for every stream `i`, own stream included.
    pub interference_means: Vec<f64>,
    pub empirical_sinr: f64,
    /// Delta-method standard error of `empirical_sinr`.
    pub std_error: f64,
    /// 95% normal-approximation half-width.
    pub confidence_halfwidth: f64,
    pub n_trials: usize,
}

impl TrialStatistics {
    fn from_moments(target: Target, m: &Moments) -> Self {
        let n = m.n;
        let [re, im, s] = m.mean;
        let d = re * re + im * im;
        let den = 1.0 + s - d;
        let sinr = d / den;
        let g = [
            (1.0 + s) / (den * den) * 2.0 * re,
            (1.0 + s) / (den * den) * 2.0 * im,
            -d / (den * den),
        ];
        let mut var = 0.0;
        if n > 1.0 {
            for a in 0..3 {
                for b in 0..3 {
                    var += g[a] * g[b] * m.m2[a][b] / (n - 1.0);
                }
            }
        }
        let std_error = (var.max(0.0) / n).sqrt();
        TrialStatistics {
            target,
            desired_mean: [re, im],
            desired_power_mean: d,
            interference_means: m.power_sum.iter().map(|p| p / n).collect(),
            empirical_sinr: sinr,
            std_error,
            confidence_halfwidth: 1.96 * std_error,
            n_trials: n as usize,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationRun {
    pub precoder: Precoder,
    pub seed: u64,
    pub n_requested: usize,
    /// Trials dropped because the estimate Gram matrix was ill-conditioned.
    pub n_discarded: usize,
    pub statistics: Vec<TrialStatistics>,
}

/// Runs `n_trials` independent trials and collects statistics for `targets`.
#[allow(clippy::too_many_arguments)]
pub fn simulate(
    cfg: &SystemConfig,
    fading: &FadingProfile,
    pilots: &PilotPowers,
    powers: &DownlinkPowers,
    precoder: Precoder,
    targets: &[Target],
    n_trials: usize,
    seed: u64,
) -> Result<SimulationRun> {
    crate::model::check(cfg, fading)?;
    if n_trials < MIN_TRIALS {
        return Err(Error::invalid(format!("need at least {MIN_TRIALS} trials, got {n_trials}")));
    }
    for t in targets {
        t.check(cfg)?;
    }
    if precoder == Precoder::Zf {
        cfg.zf_gain()?;
    }
    let stats = estimation_variances(cfg, fading, pilots)?;
    stream_params(cfg, powers, &stats)?;

    let streams = cfg.n_streams();
    let located: Vec<(usize, usize)> = targets.iter().map(|t| t.locate(cfg)).collect();
    let n_chunks = n_trials.div_ceil(CHUNK);

    let chunks: Vec<(Vec<Moments>, usize)> = (0..n_chunks)
        .into_par_iter()
        .map(|c| -> Result<(Vec<Moments>, usize)> {
            let mut acc = vec![Moments::new(streams); targets.len()];
            let mut discarded = 0;
            for trial in c * CHUNK..((c + 1) * CHUNK).min(n_trials) {
                let (mut ch_rng, mut noise_rng) = trial_rngs(seed, trial as u64);
                let draw = draw_channels_with(cfg, fading, &mut ch_rng);
                let est = mmse_estimate_with(cfg, fading, pilots, &draw, &mut noise_rng)?;
                let pre = match build_precoders(precoder, cfg, &est, powers, &stats) {
                    Ok(p) => p,
                    Err(Error::RankDeficient { condition }) => {
                        log::debug!("trial {trial}: Gram condition {condition:e}, discarded");
                        discarded += 1;
                        continue;
                    }
                    Err(e) => return Err(e),
                };
                let mut chans = draw.unicast_channels.clone();
                for m in &draw.multicast_channels {
                    let cols = chans.ncols();
                    chans = chans.insert_columns(cols, m.ncols(), Complex64::ZERO);
                    chans.columns_mut(cols, m.ncols()).copy_from(m);
                }
                let gains = chans.adjoint() * pre.combined();
                for (a, &(row, own)) in acc.iter_mut().zip(&located) {
                    let h = gains[(row, own)];
                    let total: f64 = (0..streams).map(|i| gains[(row, i)].norm_sqr()).sum();
                    a.push([h.re, h.im, total], (0..streams).map(|i| gains[(row, i)].norm_sqr()));
                }
            }
            Ok((acc, discarded))
        })
        .collect::<Result<_>>()?;

    let mut total = vec![Moments::new(streams); targets.len()];
    let mut n_discarded = 0;
    for (acc, d) in &chunks {
        n_discarded += d;
        for (t, a) in total.iter_mut().zip(acc) {
            t.merge(a);
        }
    }
    if n_trials - n_discarded < 2 {
        return Err(Error::RankDeficient { condition: f64::INFINITY });
    }
    if n_discarded > 0 {
        log::warn!("{n_discarded} of {n_trials} trials discarded as rank deficient");
    }
    Ok(SimulationRun {
        precoder,
        seed,
        n_requested: n_trials,
        n_discarded,
        statistics: targets
            .iter()
            .zip(&total)
            .map(|(&t, m)| TrialStatistics::from_moments(t, m))
            .collect(),
    })
}

/// Statistics for a single terminal.
#[allow(clippy::too_many_arguments)]
pub fn empirical_sinr(
    cfg: &SystemConfig,
    fading: &FadingProfile,
    pilots: &PilotPowers,
    powers: &DownlinkPowers,
    precoder: Precoder,
    target: Target,
    n_trials: usize,
    seed: u64,
) -> Result<TrialStatistics> {
    let mut run = simulate(cfg, fading, pilots, powers, precoder, &[target], n_trials, seed)?;
    Ok(run.statistics.remove(0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationRecord {
    pub kind: String,
    pub index: Vec<usize>,
    pub closed_form: f64,
    pub empirical: f64,
    pub ci_halfwidth: f64,
    pub z: f64,
}

impl ValidationRecord {
    pub fn within(&self, z_max: f64) -> bool {
        self.z.abs() <= z_max
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub precoder: Precoder,
    pub n_trials: usize,
    pub n_discarded: usize,
    pub seed: u64,
    pub records: Vec<ValidationRecord>,
    /// Share of records with `|z| <= 3`.
    pub pass_rate: f64,
    pub passed: bool,
}

pub const Z_MAX: f64 = 3.0;
pub const PASS_RATE: f64 = 0.99;

fn z_score(empirical: f64, closed_form: f64, se: f64) -> f64 {
    let diff = empirical - closed_form;
    if se > 0.0 {
        diff / se
    } else if diff == 0.0 {
        0.0
    } else {
        diff.signum() * f64::INFINITY
    }
}

impl ValidationReport {
    /// Scores a simulation run against closed-form SINRs.
    pub fn from_parts(closed_form: &SeReport, run: &SimulationRun) -> Result<Self> {
        let records = run
            .statistics
            .iter()
            .map(|s| {
                let cf = match s.target {
                    Target::Unicast { index } => closed_form.unicast_sinr.get(index).copied(),
                    Target::Multicast { group, member } => closed_form
                        .multicast_sinr
                        .get(group)
                        .and_then(|g| g.get(member))
                        .copied(),
                }
                .ok_or_else(|| Error::invalid(format!("{:?} missing from closed-form report", s.target)))?;
                Ok(ValidationRecord {
                    kind: s.target.kind().to_string(),
                    index: s.target.index(),
                    closed_form: cf,
                    empirical: s.empirical_sinr,
                    ci_halfwidth: s.confidence_halfwidth,
                    z: z_score(s.empirical_sinr, cf, s.std_error),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let ok = records.iter().filter(|r| r.within(Z_MAX)).count();
        let pass_rate = if records.is_empty() { 1.0 } else { ok as f64 / records.len() as f64 };
        Ok(ValidationReport {
            precoder: run.precoder,
            n_trials: run.n_requested,
            n_discarded: run.n_discarded,
            seed: run.seed,
            records,
            pass_rate,
            passed: pass_rate >= PASS_RATE,
        })
    }
}

/// Simulates every terminal and compares with the closed-form SINRs.
pub fn validate_closed_form(
    cfg: &SystemConfig,
    fading: &FadingProfile,
    pilots: &PilotPowers,
    powers: &DownlinkPowers,
    precoder: Precoder,
    n_trials: usize,
    seed: u64,
) -> Result<ValidationReport> {
    let stats = estimation_variances(cfg, fading, pilots)?;
    let closed = se_report(cfg, &stats, fading, powers, precoder)?;
    let run = simulate(cfg, fading, pilots, powers, precoder, &Target::all(cfg), n_trials, seed)?;
    ValidationReport::from_parts(&closed, &run)
}
