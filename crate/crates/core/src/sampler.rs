//! The RHMC Markov chain targeting `e^{−αφ}` on a polytope, and chain diagnostics.
//!
//! One step: draw a velocity `u ~ N(0, g⁻¹)` (momentum `g u`), integrate
//! Hamilton's equations for time `δ`, then accept with probability
//! `min(1, e^{−ΔH})` when the Metropolis filter is on.
//!
//! Randomness per step, in order: `n` standard normals for the refresh, then one
//! uniform for the filter (only when the filter is on). Chain `k` uses stream `k`
//! of a ChaCha20 generator seeded with the configured seed.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;
use std::thread;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::barrier::{BarrierParams, MetricState};
use crate::dynamics::{self, IntegratorOptions, RejectReason};
use crate::error::{Error, Result};
use crate::polytope::Polytope;

/// Every tunable of a chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChainConfig {
    /// Lewis exponent; `None` means `4 − 1/log m`.
    pub p: Option<f64>,
    pub alpha: f64,
    /// Niceness constant; `None` means `4·√log m`.
    pub c: Option<f64>,
    pub delta_override: Option<f64>,
    pub n_ode_steps: usize,
    pub metropolis: bool,
    pub seed: u64,
    pub n_samples: usize,
    /// `None` means `10·⌈1/δ²⌉`, capped at `10⁵`.
    pub n_burnin: Option<usize>,
    pub thinning: usize,
    /// RNG stream of this chain.
    pub chain_index: u64,
    pub tol_fp: f64,
    pub max_fp_iter: usize,
    pub lewis_tol: f64,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            p: None,
            alpha: 0.0,
            c: None,
            delta_override: None,
            n_ode_steps: 16,
            metropolis: true,
            seed: 0,
            n_samples: 1000,
            n_burnin: None,
            thinning: 1,
            chain_index: 0,
            tol_fp: 1e-12,
            max_fp_iter: 50,
            lewis_tol: 1e-12,
        }
    }
}

pub const MAX_DEFAULT_BURNIN: usize = 100_000;

/// `4·√log m`, never below 1.
pub fn default_c(m: usize) -> f64 {
    (4.0 * (m as f64).ln().max(0.0).sqrt()).max(1.0)
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(c) = self.c {
            if !(c >= 1.0) || !c.is_finite() {
                return Err(Error::Parameter(format!("c = {c} must be finite and ≥ 1")));
            }
        }
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(Error::Parameter(format!("alpha = {} must be finite and ≥ 0", self.alpha)));
        }
        if let Some(d) = self.delta_override {
            if !(d >= 0.0) || !d.is_finite() {
                return Err(Error::Parameter(format!("delta = {d} must be finite and ≥ 0")));
            }
        }
        if self.n_ode_steps == 0 {
            return Err(Error::Parameter("ode steps must be ≥ 1".into()));
        }
        if self.thinning == 0 {
            return Err(Error::Parameter("thinning must be ≥ 1".into()));
        }
        if !(self.tol_fp > 0.0) || !(self.lewis_tol > 0.0) {
            return Err(Error::Parameter("tolerances must be positive".into()));
        }
        if let Some(p) = self.p {
            if !(2.0..4.0).contains(&p) {
                return Err(Error::Parameter(format!("p = {p} outside [2, 4)")));
            }
        }
        Ok(())
    }

    pub fn barrier_params(&self, m: usize, n: usize) -> BarrierParams<f64> {
        let base = BarrierParams::new(m, n);
        let base = match self.p {
            Some(p) => base.with_p(p, m, n),
            None => base,
        };
        base.with_alpha(self.alpha).with_lewis_tol(self.lewis_tol)
    }

    pub fn resolved_c(&self, m: usize) -> f64 {
        self.c.unwrap_or_else(|| default_c(m))
    }

    pub fn integrator_options(&self) -> IntegratorOptions<f64> {
        IntegratorOptions {
            tol_fp: self.tol_fp,
            max_fp_iter: self.max_fp_iter,
            ..Default::default()
        }
    }

    pub fn burnin_for(&self, delta: f64) -> usize {
        self.n_burnin.unwrap_or_else(|| {
            if delta > 0.0 {
                let k = (1.0 / (delta * delta)).ceil();
                if k * 10.0 >= MAX_DEFAULT_BURNIN as f64 {
                    MAX_DEFAULT_BURNIN
                } else {
                    10 * k as usize
                }
            } else {
                0
            }
        })
    }
}

/// `δ = (1/c)·min{n^{−1/3}, (n^{1/3}(α√α₀)^{1/3})⁻¹, (α^{1/2}α₀^{1/4}n^{1/4})⁻¹}`;
/// `delta_override` wins when set. The last two branches are `+∞` at `α = 0`.
pub fn step_size(cfg: &ChainConfig, m: usize, n: usize) -> f64 {
    if let Some(d) = cfg.delta_override {
        return d;
    }
    let params = cfg.barrier_params(m, n);
    step_size_for(cfg.alpha, params.alpha0, cfg.resolved_c(m), n)
}

pub fn step_size_for(alpha: f64, alpha0: f64, c: f64, n: usize) -> f64 {
    let nf = n as f64;
    let first = 1.0 / nf.cbrt();
    let second = 1.0 / (nf.cbrt() * (alpha * alpha0.sqrt()).cbrt());
    let third = 1.0 / (alpha.sqrt() * alpha0.powf(0.25) * nf.powf(0.25));
    first.min(second).min(third) / c
}

/// Draws `u = L^{−T} z` for `g = L Lᵀ` and standard normal `z`, so `u ~ N(0, g⁻¹)`.
pub fn refresh_momentum<R: Rng + ?Sized>(state: &MetricState<f64>, rng: &mut R) -> DVector<f64> {
    let z = DVector::from_fn(state.n(), |_, _| rng.sample::<f64, _>(StandardNormal));
    state
        .g_chol
        .l_dirty()
        .tr_solve_lower_triangular(&z)
        .expect("cholesky factor is nonsingular")
}

/// Result of one chain step.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub accepted: bool,
    pub delta_h: f64,
    pub reason: Option<RejectReason>,
    /// `‖A_x u‖_∞` of the refreshed velocity.
    pub refresh_inf_norm: f64,
    pub fp_iters: usize,
}

/// Running counters of a chain.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StepCounters {
    pub proposed: usize,
    pub accepted: usize,
    pub infeasible: usize,
    pub fp_nonconvergence: usize,
    pub numerical: usize,
    pub sum_abs_energy_error: f64,
    pub finite_energy_errors: usize,
    pub max_refresh_inf_norm: f64,
    pub nice_violations: usize,
    pub fp_iters: usize,
}

impl StepCounters {
    fn record(&mut self, out: &StepOutcome, c: f64) {
        self.proposed += 1;
        self.accepted += out.accepted as usize;
        match out.reason {
            Some(RejectReason::InfeasibleIterate) => self.infeasible += 1,
            Some(RejectReason::FpNonconvergence) => self.fp_nonconvergence += 1,
            Some(RejectReason::Numerical) => self.numerical += 1,
            None => {
                if out.delta_h.is_finite() {
                    self.sum_abs_energy_error += out.delta_h.abs();
                    self.finite_energy_errors += 1;
                }
            }
        }
        self.max_refresh_inf_norm = self.max_refresh_inf_norm.max(out.refresh_inf_norm);
        self.nice_violations += (out.refresh_inf_norm > c) as usize;
        self.fp_iters += out.fp_iters;
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }
}

/// A running chain: position, cached geometry, generator and counters.
pub struct Chain<'a> {
    poly: &'a Polytope<f64>,
    params: BarrierParams<f64>,
    opts: IntegratorOptions<f64>,
    delta: f64,
    delta_override: Option<f64>,
    c: f64,
    n_ode_steps: usize,
    metropolis: bool,
    state: MetricState<f64>,
    rng: ChaCha20Rng,
    pub counters: StepCounters,
}

impl<'a> Chain<'a> {
    pub fn new(cfg: &ChainConfig, poly: &'a Polytope<f64>, start: DVector<f64>) -> Result<Self> {
        cfg.validate()?;
        let params = cfg.barrier_params(poly.m(), poly.n());
        params.validate()?;
        let state = MetricState::new(&params, poly, start)?;
        let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
        rng.set_stream(cfg.chain_index);
        Ok(Self {
            poly,
            delta: step_size(cfg, poly.m(), poly.n()),
            delta_override: cfg.delta_override,
            c: cfg.resolved_c(poly.m()),
            params,
            opts: cfg.integrator_options(),
            n_ode_steps: cfg.n_ode_steps,
            metropolis: cfg.metropolis,
            state,
            rng,
            counters: StepCounters::default(),
        })
    }

    pub fn position(&self) -> &DVector<f64> {
        self.state.x()
    }

    pub fn state(&self) -> &MetricState<f64> {
        &self.state
    }

    pub fn params(&self) -> &BarrierParams<f64> {
        &self.params
    }

    pub fn step_size(&self) -> f64 {
        self.delta
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    /// Retargets the chain to `e^{−αφ}`, recomputing `δ` unless it is overridden.
    pub fn set_alpha(&mut self, alpha: f64) {
        self.params.alpha = alpha;
        if self.delta_override.is_none() {
            self.delta = step_size_for(alpha, self.params.alpha0, self.c, self.poly.n());
        }
    }

    /// One RHMC transition.
    pub fn step(&mut self) -> StepOutcome {
        let u = refresh_momentum(&self.state, &mut self.rng);
        let refresh_inf_norm = self.state.local_inf_norm(&u);
        let momentum = &self.state.g * &u;
        let traj = dynamics::integrate_from(
            &self.params,
            self.poly,
            &self.state,
            &momentum,
            self.delta,
            self.n_ode_steps,
            &self.opts,
        );
        let delta_h = traj.energy_error();
        let accepted = if traj.rejected {
            if self.metropolis {
                let _: f64 = self.rng.random();
            }
            false
        } else if self.metropolis {
            let u: f64 = self.rng.random();
            delta_h.is_finite() && u.ln() < -delta_h
        } else {
            true
        };
        if accepted {
            self.state = traj.end_state.expect("accepted trajectories carry their end state");
        }
        let out = StepOutcome {
            accepted,
            delta_h,
            reason: traj.reason,
            refresh_inf_norm,
            fp_iters: traj.fixed_point_iters_total,
        };
        self.counters.record(&out, self.c);
        out
    }

    /// `burnin` discarded steps, then `n` samples taken every `thinning` steps.
    pub fn sample(&mut self, burnin: usize, n: usize, thinning: usize) -> Vec<DVector<f64>> {
        for _ in 0..burnin {
            self.step();
        }
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            for _ in 0..thinning {
                self.step();
            }
            out.push(self.position().clone());
        }
        out
    }
}

/// Moments and autocorrelation-aware summaries of a sample stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSummary {
    pub count: usize,
    pub mean: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub variance: Vec<f64>,
    pub ess: Vec<f64>,
    /// `√(variance / ESS)` per coordinate.
    pub mean_std_error: Vec<f64>,
}

/// Chain statistics: acceptance, energy errors, niceness and sample summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainStats {
    pub acceptance_rate: f64,
    pub accepted: usize,
    pub proposed: usize,
    pub rejected_infeasible: usize,
    pub rejected_fp_nonconvergence: usize,
    pub rejected_numerical: usize,
    /// Mean `|ΔH|` over completed trajectories.
    pub mean_energy_error: f64,
    pub max_refresh_inf_norm: f64,
    /// Fraction of refreshes with `‖A_x u‖_∞ > c`.
    pub nice_violation_fraction: f64,
    pub mean_fp_iters_per_step: f64,
    pub step_size: f64,
    pub c: f64,
    pub p: f64,
    pub alpha: f64,
    pub alpha0: f64,
    pub n_burnin: usize,
    pub thinning: usize,
    pub seed: u64,
    pub chain_index: u64,
    pub summary: SampleSummary,
}

impl ChainStats {
    fn new(chain: &Chain<'_>, cfg: &ChainConfig, burnin: usize, summary: SampleSummary) -> Self {
        let k = &chain.counters;
        Self {
            acceptance_rate: k.acceptance_rate(),
            accepted: k.accepted,
            proposed: k.proposed,
            rejected_infeasible: k.infeasible,
            rejected_fp_nonconvergence: k.fp_nonconvergence,
            rejected_numerical: k.numerical,
            mean_energy_error: if k.finite_energy_errors > 0 {
                k.sum_abs_energy_error / k.finite_energy_errors as f64
            } else {
                0.0
            },
            max_refresh_inf_norm: k.max_refresh_inf_norm,
            nice_violation_fraction: if k.proposed > 0 {
                k.nice_violations as f64 / k.proposed as f64
            } else {
                0.0
            },
            mean_fp_iters_per_step: if k.proposed > 0 {
                k.fp_iters as f64 / k.proposed as f64
            } else {
                0.0
            },
            step_size: chain.delta,
            c: chain.c,
            p: chain.params.p,
            alpha: chain.params.alpha,
            alpha0: chain.params.alpha0,
            n_burnin: burnin,
            thinning: cfg.thinning,
            seed: cfg.seed,
            chain_index: cfg.chain_index,
            summary,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ChainRun {
    pub samples: Vec<DVector<f64>>,
    pub stats: ChainStats,
}

/// Runs one chain from the analytic center of the log barrier.
pub fn run_chain(cfg: &ChainConfig, poly: &Polytope<f64>) -> Result<ChainRun> {
    let start = poly.find_interior_point(1e-9)?.into_x();
    run_chain_from(cfg, poly, start)
}

pub fn run_chain_from(cfg: &ChainConfig, poly: &Polytope<f64>, start: DVector<f64>) -> Result<ChainRun> {
    let mut chain = Chain::new(cfg, poly, start)?;
    let burnin = cfg.burnin_for(chain.step_size());
    let samples = chain.sample(burnin, cfg.n_samples, cfg.thinning);
    let summary = if samples.len() >= 2 {
        diagnostics(&samples)?
    } else {
        SampleSummary::empty(poly.n(), samples.len())
    };
    Ok(ChainRun {
        stats: ChainStats::new(&chain, cfg, burnin, summary),
        samples,
    })
}

/// `n_chains` independent chains on streams `0..n_chains`, spread over `threads`
/// worker threads. Results are ordered by chain index regardless of scheduling.
pub fn run_chains(cfg: &ChainConfig, poly: &Polytope<f64>, n_chains: usize, threads: usize) -> Result<Vec<ChainRun>> {
    let start = poly.find_interior_point(1e-9)?.into_x();
    let threads = threads.clamp(1, n_chains.max(1));
    let mut slots: Vec<Option<Result<ChainRun>>> = (0..n_chains).map(|_| None).collect();
    thread::scope(|scope| {
        let chunks: Vec<_> = slots.chunks_mut(n_chains.div_ceil(threads).max(1)).collect();
        let mut first = 0u64;
        for chunk in chunks {
            let base = first;
            first += chunk.len() as u64;
            let start = start.clone();
            scope.spawn(move || {
                for (k, slot) in chunk.iter_mut().enumerate() {
                    let mut c = cfg.clone();
                    c.chain_index = base + k as u64;
                    *slot = Some(run_chain_from(&c, poly, start.clone()));
                }
            });
        }
    });
    slots.into_iter().map(|s| s.expect("every chain ran")).collect()
}

impl SampleSummary {
    fn empty(n: usize, count: usize) -> Self {
        Self {
            count,
            mean: vec![f64::NAN; n],
            second_moment: vec![f64::NAN; n],
            variance: vec![f64::NAN; n],
            ess: vec![f64::NAN; n],
            mean_std_error: vec![f64::NAN; n],
        }
    }
}

/// Per-coordinate moments, ESS and Monte Carlo standard errors.
pub fn diagnostics(samples: &[DVector<f64>]) -> Result<SampleSummary> {
    if samples.len() < 2 {
        return Err(Error::TooFewSamples(format!(
            "diagnostics need at least 2 samples, got {}",
            samples.len()
        )));
    }
    let n = samples[0].len();
    let count = samples.len();
    let mut out = SampleSummary::empty(n, count);
    for j in 0..n {
        let series: Vec<f64> = samples.iter().map(|s| s[j]).collect();
        let mean = series.iter().sum::<f64>() / count as f64;
        let second = series.iter().map(|v| v * v).sum::<f64>() / count as f64;
        let var = series.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (count - 1) as f64;
        let ess = effective_sample_size(&series);
        out.mean[j] = mean;
        out.second_moment[j] = second;
        out.variance[j] = var;
        out.ess[j] = ess;
        out.mean_std_error[j] = (var / ess).sqrt();
    }
    Ok(out)
}

/// Effective sample size by Geyer's initial monotone positive sequence estimator.
/// A constant series has ESS 1.
pub fn effective_sample_size(series: &[f64]) -> f64 {
    let n = series.len();
    if n < 2 {
        return n as f64;
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = series.iter().map(|v| v - mean).collect();
    let c0 = centered.iter().map(|v| v * v).sum::<f64>() / n as f64;
    if c0 <= f64::MIN_POSITIVE * 1e6 || c0 <= mean * mean * 1e-28 {
        return 1.0;
    }
    let autocorr = |lag: usize| -> f64 {
        let s: f64 = centered[..n - lag].iter().zip(&centered[lag..]).map(|(a, b)| a * b).sum();
        s / n as f64 / c0
    };
    let mut tau = -1.0;
    let mut prev_pair = f64::INFINITY;
    let mut k = 0;
    while 2 * k + 1 < n {
        let pair = autocorr(2 * k) + autocorr(2 * k + 1);
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev_pair);
        tau += 2.0 * pair;
        prev_pair = pair;
        k += 1;
    }
    (n as f64 / tau.max(1.0 / n as f64)).min(n as f64 * (n as f64).log10().max(1.0))
}

/// Kolmogorov–Smirnov distance between the empirical law of `values` and `U(lo, hi)`.
pub fn ks_uniform(values: &[f64], lo: f64, hi: f64) -> f64 {
    let mut v: Vec<f64> = values.iter().map(|x| ((x - lo) / (hi - lo)).clamp(0.0, 1.0)).collect();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter().enumerate().fold(0.0f64, |d, (i, &f)| {
        d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n)
    })
}

/// Per-coordinate KS statistics against the uniform law on the box
/// `∏[loⱼ, hiⱼ]`, when `poly` is such a box.
pub fn box_ks(poly: &Polytope<f64>, samples: &[DVector<f64>]) -> Option<Vec<f64>> {
    let bounds = axis_box_bounds(poly)?;
    Some(
        bounds
            .iter()
            .enumerate()
            .map(|(j, &(lo, hi))| {
                let col: Vec<f64> = samples.iter().map(|s| s[j]).collect();
                ks_uniform(&col, lo, hi)
            })
            .collect(),
    )
}

/// Bounds of an axis-aligned box given by exactly `±eⱼ` rows (up to positive scaling).
pub fn axis_box_bounds(poly: &Polytope<f64>) -> Option<Vec<(f64, f64)>> {
    let (m, n) = (poly.m(), poly.n());
    if m != 2 * n {
        return None;
    }
    let mut lo = vec![None; n];
    let mut hi = vec![None; n];
    for i in 0..m {
        let row = poly.a().row(i);
        let nz: Vec<usize> = (0..n).filter(|&j| row[j] != 0.0).collect();
        if nz.len() != 1 {
            return None;
        }
        let j = nz[0];
        let bound = poly.b()[i] / row[j];
        if row[j] > 0.0 {
            lo[j] = Some(bound);
        } else {
            hi[j] = Some(bound);
        }
    }
    lo.into_iter().zip(hi).map(|(l, h)| Some((l?, h?))).collect()
}

/// One row per sample, 17 significant digits, `.` decimal separator.
pub fn samples_to_csv(samples: &[DVector<f64>]) -> String {
    let mut out = String::new();
    if let Some(first) = samples.first() {
        let header: Vec<String> = (0..first.len()).map(|j| format!("x{}", j + 1)).collect();
        out.push_str(&header.join(","));
        out.push('\n');
    }
    for s in samples {
        for (j, v) in s.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            write!(out, "{v:.16e}").expect("writing to a string cannot fail");
        }
        out.push('\n');
    }
    out
}

pub fn write_samples_csv(path: impl AsRef<Path>, samples: &[DVector<f64>]) -> Result<()> {
    write_text(path, &samples_to_csv(samples))
}

pub fn write_samples_json(path: impl AsRef<Path>, samples: &[DVector<f64>]) -> Result<()> {
    let rows: Vec<Vec<f64>> = samples.iter().map(|s| s.iter().copied().collect()).collect();
    let text = serde_json::to_string(&rows).map_err(|e| Error::Parse(e.to_string()))?;
    write_text(path, &text)
}

/// Parses a CSV written by [`samples_to_csv`] (the header is optional).
pub fn read_samples_csv(text: &str) -> Result<Vec<Vec<f64>>> {
    let mut rows = Vec::new();
    let mut width = None;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (lineno == 0 && line.starts_with('x')) {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?;
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(Error::Parse(format!(
                    "line {} has {} columns, expected {w}",
                    lineno + 1,
                    row.len()
                )))
            }
            _ => {}
        }
        rows.push(row);
    }
    Ok(rows)
}

pub(crate) fn write_text(path: impl AsRef<Path>, text: &str) -> Result<()> {
    let path = path.as_ref();
    let io = |source| Error::Io {
        path: path.display().to_string(),
        source,
    };
    let mut f = std::fs::File::create(path).map_err(io)?;
    f.write_all(text.as_bytes()).map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::barrier;

    #[test]
    fn step_size_branches() {
        let cfg = ChainConfig {
            c: Some(1.0),
            ..Default::default()
        };
        // α = 0: δ = n^{−1/3}/c, bit for bit.
        assert_eq!(step_size(&cfg, 16, 8), 0.5);
        assert_eq!(step_size(&cfg, 54, 27), 1.0 / 3.0);
        let c4 = ChainConfig { c: Some(4.0), ..cfg.clone() };
        assert_eq!(step_size(&c4, 16, 8), 0.125);
        let over = ChainConfig { delta_override: Some(0.01), ..cfg.clone() };
        assert_eq!(step_size(&over, 16, 8), 0.01);
    }

    #[test]
    fn step_size_matches_the_displayed_minimum() {
        let (m, n, alpha) = (20usize, 5usize, 3.0f64);
        let cfg = ChainConfig { alpha, c: Some(2.0), ..Default::default() };
        let a0 = cfg.barrier_params(m, n).alpha0;
        let nf = n as f64;
        let expected = [
            nf.powf(-1.0 / 3.0),
            1.0 / (nf.powf(1.0 / 3.0) * (alpha * a0.sqrt()).powf(1.0 / 3.0)),
            1.0 / (alpha.sqrt() * a0.powf(0.25) * nf.powf(0.25)),
        ]
        .into_iter()
        .fold(f64::INFINITY, f64::min)
            / 2.0;
        assert!((step_size(&cfg, m, n) - expected).abs() < 1e-15);
    }

    #[test]
    fn step_size_is_monotone() {
        let mut last = f64::INFINITY;
        for alpha in [0.0, 0.1, 1.0, 10.0, 1e3] {
            let d = step_size(&ChainConfig { alpha, ..Default::default() }, 12, 4);
            assert!(d <= last);
            last = d;
        }
        let mut last = f64::INFINITY;
        for c in [1.0, 2.0, 5.0] {
            let d = step_size(&ChainConfig { c: Some(c), alpha: 2.0, ..Default::default() }, 12, 4);
            assert!(d <= last);
            last = d;
        }
    }

    #[test]
    fn burnin_default_and_cap() {
        let cfg = ChainConfig::default();
        assert_eq!(cfg.burnin_for(0.5), 40);
        assert_eq!(cfg.burnin_for(1e-4), MAX_DEFAULT_BURNIN);
        assert_eq!(ChainConfig { n_burnin: Some(7), ..cfg }.burnin_for(0.5), 7);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(ChainConfig { c: Some(0.5), ..Default::default() }.validate().is_err());
        assert!(ChainConfig { alpha: -1.0, ..Default::default() }.validate().is_err());
        assert!(ChainConfig { thinning: 0, ..Default::default() }.validate().is_err());
        assert!(ChainConfig { p: Some(4.0), ..Default::default() }.validate().is_err());
    }

    #[test]
    fn refresh_has_covariance_g_inverse() {
        let poly = Polytope::<f64>::simplex(2);
        let params = BarrierParams::for_polytope(&poly);
        let st = MetricState::new(&params, &poly, DVector::from_vec(vec![0.2, 0.5])).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let draws = 100_000;
        let mut cov = nalgebra::DMatrix::<f64>::zeros(2, 2);
        let mut gnorm = Vec::with_capacity(draws);
        let mut inf = Vec::with_capacity(draws);
        for _ in 0..draws {
            let u = refresh_momentum(&st, &mut rng);
            cov += &u * u.transpose();
            gnorm.push(st.g_norm(&u).powi(2));
            inf.push(st.local_inf_norm(&u));
        }
        cov /= draws as f64;
        let target = st.g_chol.inverse();
        for i in 0..2 {
            for j in 0..2 {
                // Var(uᵢuⱼ) = ΣᵢᵢΣⱼⱼ + Σᵢⱼ² for Gaussians.
                let se = ((target[(i, i)] * target[(j, j)] + target[(i, j)].powi(2)) / draws as f64).sqrt();
                assert!((cov[(i, j)] - target[(i, j)]).abs() < 5.0 * se);
            }
        }
        let mean = gnorm.iter().sum::<f64>() / draws as f64;
        assert!((mean - 2.0).abs() < 5.0 * (4.0 / draws as f64).sqrt());
        inf.sort_by(f64::total_cmp);
        let p99 = inf[(0.99 * draws as f64) as usize];
        assert!(p99 <= (2.0 * (200.0 * poly.m() as f64).ln()).sqrt());
    }

    #[test]
    fn zero_step_size_keeps_the_position() {
        let poly = Polytope::<f64>::cube(2);
        let cfg = ChainConfig { delta_override: Some(0.0), ..Default::default() };
        let mut chain = Chain::new(&cfg, &poly, DVector::from_vec(vec![0.3, -0.2])).unwrap();
        let out = chain.step();
        assert!(out.accepted);
        assert_eq!(out.delta_h, 0.0);
        assert_eq!(chain.position(), &DVector::from_vec(vec![0.3, -0.2]));
    }

    #[test]
    fn acceptance_on_cubes() {
        for n in [2usize, 3] {
            let poly = Polytope::<f64>::cube(n);
            let cfg = ChainConfig { seed: 1, ..Default::default() };
            let mut chain = Chain::new(&cfg, &poly, DVector::zeros(n)).unwrap();
            for _ in 0..300 {
                chain.step();
            }
            assert!(chain.counters.acceptance_rate() >= 0.5, "{:?}", chain.counters);
            assert!(chain.counters.nice_violations as f64 / 300.0 < 0.01);
        }
    }

    #[test]
    fn metropolis_uses_the_integrator_energies() {
        let poly = Polytope::<f64>::simplex(2);
        let cfg = ChainConfig { seed: 9, alpha: 0.5, ..Default::default() };
        let mut chain = Chain::new(&cfg, &poly, DVector::from_vec(vec![0.3, 0.3])).unwrap();
        for _ in 0..20 {
            let before = chain.state().clone();
            let h0 = dynamics::hamiltonian_at(chain.params(), &before, &DVector::zeros(2));
            let out = chain.step();
            if out.accepted && out.reason.is_none() {
                // The stored state is exactly the integrator's end state.
                let h1 = dynamics::hamiltonian_at(chain.params(), chain.state(), &DVector::zeros(2));
                let again = MetricState::new(chain.params(), &poly, chain.position().clone()).unwrap();
                let h1b = dynamics::hamiltonian_at(chain.params(), &again, &DVector::zeros(2));
                assert!((h1 - h1b).abs() <= 1e-12 * h1.abs().max(1.0));
            }
            assert!(h0.is_finite());
        }
    }

    #[test]
    fn detailed_balance_on_an_interval() {
        // Target e^{−φ} on [0, 3]; start points are exact draws by rejection sampling,
        // so the flows A → B and B → A across x = 1 must match in expectation.
        let poly = Polytope::from_rows(&[vec![1.0], vec![-1.0]], &[0.0, -3.0]).unwrap();
        let cfg = ChainConfig { alpha: 1.0, seed: 17, ..Default::default() };
        let params = cfg.barrier_params(2, 1);
        let phi = |x: f64| barrier::phi(&params, &poly, &DVector::from_vec(vec![x])).unwrap();
        let phi_min = phi(1.5);
        let mut rng = ChaCha20Rng::seed_from_u64(99);
        let mut chain = Chain::new(&cfg, &poly, DVector::from_vec(vec![1.5])).unwrap();
        let (mut ab, mut ba) = (0usize, 0usize);
        let mut trials = 0;
        while trials < 6000 {
            let x: f64 = 3.0 * rng.random::<f64>();
            if x <= 0.0 || rng.random::<f64>() >= (phi_min - phi(x)).exp() {
                continue;
            }
            trials += 1;
            chain.state = MetricState::new(&chain.params, &poly, DVector::from_vec(vec![x])).unwrap();
            chain.step();
            let y = chain.position()[0];
            match (x < 1.0, y < 1.0) {
                (true, false) => ab += 1,
                (false, true) => ba += 1,
                _ => {}
            }
        }
        let diff = ab as f64 - ba as f64;
        assert!(ab + ba > 50, "{ab} {ba}");
        assert!(diff.abs() <= 3.0 * ((ab + ba) as f64).sqrt(), "{ab} vs {ba}");
    }

    #[test]
    fn ess_of_iid_constant_and_ar1() {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let iid: Vec<f64> = (0..20_000).map(|_| rng.sample(StandardNormal)).collect();
        let e = effective_sample_size(&iid);
        assert!((e / 20_000.0 - 1.0).abs() < 0.1, "{e}");
        assert_eq!(effective_sample_size(&vec![0.25; 1000]), 1.0);
        let rho = 0.8;
        let mut x = 0.0f64;
        let n = 50_000;
        let ar: Vec<f64> = (0..n)
            .map(|_| {
                x = rho * x + (1.0 - rho * rho).sqrt() * rng.sample::<f64, _>(StandardNormal);
                x
            })
            .collect();
        let expected = n as f64 * (1.0 - rho) / (1.0 + rho);
        let e = effective_sample_size(&ar);
        assert!((e / expected - 1.0).abs() < 0.2, "{e} vs {expected}");
    }

    #[test]
    fn diagnostics_need_two_samples() {
        assert!(matches!(diagnostics(&[DVector::zeros(2)]), Err(Error::TooFewSamples(_))));
    }

    #[test]
    fn ks_and_box_bounds() {
        let vals: Vec<f64> = (0..1000).map(|i| -1.0 + 2.0 * (i as f64 + 0.5) / 1000.0).collect();
        assert!(ks_uniform(&vals, -1.0, 1.0) <= 0.0005 + 1e-12);
        let bounds = axis_box_bounds(&Polytope::centered_box(&[1.0, 2.5])).unwrap();
        assert_eq!(bounds, vec![(-1.0, 1.0), (-2.5, 2.5)]);
        assert!(axis_box_bounds(&Polytope::simplex(2)).is_none());
    }

    #[test]
    fn csv_round_trip_keeps_every_bit() {
        let samples = vec![
            DVector::from_vec(vec![0.1, -1.0 / 3.0]),
            DVector::from_vec(vec![1e-300, std::f64::consts::PI]),
        ];
        let text = samples_to_csv(&samples);
        assert!(text.starts_with("x1,x2\n"));
        let back = read_samples_csv(&text).unwrap();
        for (a, b) in samples.iter().zip(&back) {
            for (u, v) in a.iter().zip(b) {
                assert_eq!(u.to_bits(), v.to_bits());
            }
        }
        assert!(read_samples_csv("1,2\n3\n").is_err());
    }

    #[test]
    fn same_seed_same_stream_and_streams_differ() {
        let poly = Polytope::<f64>::simplex(2);
        let cfg = ChainConfig { seed: 5, n_samples: 20, n_burnin: Some(5), ..Default::default() };
        let a = run_chain(&cfg, &poly).unwrap();
        let b = run_chain(&cfg, &poly).unwrap();
        assert_eq!(samples_to_csv(&a.samples), samples_to_csv(&b.samples));
        let multi = run_chains(&cfg, &poly, 3, 2).unwrap();
        assert_eq!(samples_to_csv(&multi[0].samples), samples_to_csv(&a.samples));
        assert_ne!(samples_to_csv(&multi[1].samples), samples_to_csv(&a.samples));
        assert!(a.samples.iter().all(|s| poly.contains(s)));
    }
}
