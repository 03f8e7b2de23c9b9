//! Gaussian cooling over the barrier: a σ-schedule on `e^{−φ/σ²}` whose
//! telescoping ratios turn the integral of a sharp, nearly Gaussian density at
//! the barrier minimizer into the volume of the polytope.
//!
//! Temperatures are `α = 1/σ²`. All integrals are of `e^{−α(φ − φ*)}` with
//! `φ* = min φ`, so every log-ratio term is non-negative.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::barrier::{self, BarrierParams, MetricState};
use crate::error::{Error, Result};
use crate::polytope::Polytope;
use crate::sampler::{effective_sample_size, Chain, ChainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CoolingConfig {
    /// Target relative volume error.
    pub epsilon: f64,
    /// Barrier parameter bound; `None` means `α₀·n`.
    pub nu: Option<f64>,
    pub c_sigma0: f64,
    pub c_k: f64,
    pub max_phases: usize,
    pub seed: u64,
    /// Steps discarded after every temperature change.
    pub phase_burnin: usize,
    /// Batches per phase for the jackknife.
    pub batches: usize,
    /// Largest relative standard error tolerated for any phase ratio.
    pub max_rel_se: f64,
}

impl Default for CoolingConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.1,
            nu: None,
            c_sigma0: 1.0,
            c_k: 1.0,
            max_phases: 10_000,
            seed: 0,
            phase_burnin: 10,
            batches: 10,
            max_rel_se: 0.5,
        }
    }
}

impl CoolingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::Parameter(format!("epsilon must lie in (0, 1), got {}", self.epsilon)));
        }
        if let Some(nu) = self.nu {
            if !(nu > 0.0 && nu.is_finite()) {
                return Err(Error::Parameter(format!("nu must be positive, got {nu}")));
            }
        }
        if !(self.c_sigma0 > 0.0 && self.c_sigma0.is_finite()) || !(self.c_k > 0.0 && self.c_k.is_finite()) {
            return Err(Error::Parameter("c_sigma0 and c_k must be positive".into()));
        }
        if self.max_phases == 0 {
            return Err(Error::Parameter("max_phases must be at least 1".into()));
        }
        if self.batches < 2 {
            return Err(Error::Parameter("the jackknife needs at least 2 batches".into()));
        }
        if !(self.max_rel_se > 0.0) {
            return Err(Error::Parameter("max_rel_se must be positive".into()));
        }
        Ok(())
    }

    pub fn resolved_nu(&self, alpha0: f64, n: usize) -> f64 {
        self.nu.unwrap_or(alpha0 * n as f64)
    }
}

/// One temperature of the schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub sigma_sq: f64,
    pub k: usize,
}

impl Phase {
    pub fn alpha(&self) -> f64 {
        1.0 / self.sigma_sq
    }
}

/// `σ₀² = c_σ0·ε²·n⁻³·log⁻³(n/ε)`.
pub fn initial_sigma_sq(cfg: &CoolingConfig, n: usize) -> f64 {
    let nf = n as f64;
    cfg.c_sigma0 * cfg.epsilon.powi(2) / (nf.powi(3) * (nf / cfg.epsilon).ln().powi(3))
}

/// Last phase is the first with `σ² > (ν/ε)·log(nν/ε)`.
pub fn sigma_sq_cap(cfg: &CoolingConfig, n: usize, nu: f64) -> f64 {
    nu / cfg.epsilon * (n as f64 * nu / cfg.epsilon).ln().max(1.0)
}

/// Multiplier taking `σᵢ²` to `σᵢ₊₁²`: `1 + 1/√n` while `σ² ≤ ν/n`, then `1 + min{σ/√ν, ½}`.
pub fn multiplier(sigma_sq: f64, n: usize, nu: f64) -> f64 {
    let nf = n as f64;
    if sigma_sq <= nu / nf {
        1.0 + 1.0 / nf.sqrt()
    } else {
        1.0 + (sigma_sq.sqrt() / nu.sqrt()).min(0.5)
    }
}

/// Samples drawn at `σ²`: `c_k·√n·ε⁻²·log(√n/ε)` while `σ² ≤ ν/n`, then
/// `c_k·(√ν/σ + 1)·ε⁻²·log(n/ε)`.
pub fn samples_per_phase(cfg: &CoolingConfig, sigma_sq: f64, n: usize, nu: f64) -> usize {
    let nf = n as f64;
    let eps2 = cfg.epsilon * cfg.epsilon;
    let k = if sigma_sq <= nu / nf {
        cfg.c_k * nf.sqrt() / eps2 * (nf.sqrt() / cfg.epsilon).ln()
    } else {
        cfg.c_k * ((nu / sigma_sq).sqrt() + 1.0) / eps2 * (nf / cfg.epsilon).ln()
    };
    (k.ceil() as usize).max(2)
}

pub fn schedule(cfg: &CoolingConfig, n: usize, nu: f64) -> Result<Vec<Phase>> {
    cfg.validate()?;
    if n == 0 || !(nu > 0.0) {
        return Err(Error::Parameter(format!("schedule needs n ≥ 1 and ν > 0 (n = {n}, ν = {nu})")));
    }
    let cap = sigma_sq_cap(cfg, n, nu);
    let mut sigma_sq = initial_sigma_sq(cfg, n);
    let mut phases = Vec::new();
    loop {
        if phases.len() == cfg.max_phases {
            return Err(Error::Schedule(format!(
                "more than {} phases needed to raise σ² from {:.3e} to {cap:.3e}",
                cfg.max_phases,
                initial_sigma_sq(cfg, n)
            )));
        }
        phases.push(Phase {
            sigma_sq,
            k: samples_per_phase(cfg, sigma_sq, n, nu),
        });
        if sigma_sq > cap {
            return Ok(phases);
        }
        sigma_sq *= multiplier(sigma_sq, n, nu);
    }
}

/// `log E[e^{t}]` from samples `t`, with its relative standard error
/// `sd(e^t)/(mean(e^t)·√ESS)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatioEstimate {
    pub log_ratio: f64,
    pub rel_se: f64,
}

pub fn log_mean_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + (terms.iter().map(|t| (t - max).exp()).sum::<f64>() / terms.len() as f64).ln()
}

pub fn ratio_estimate(terms: &[f64]) -> RatioEstimate {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = terms.iter().map(|t| (t - max).exp()).collect();
    let n = w.len() as f64;
    let mean = w.iter().sum::<f64>() / n;
    let var = w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    let ess = effective_sample_size(&w).max(1.0);
    RatioEstimate {
        log_ratio: max + mean.ln(),
        rel_se: var.sqrt() / (mean * ess.sqrt()),
    }
}

/// `log ∫ e^{−α_last(φ−φ*)}` from `log ∫ e^{−α₀(φ−φ*)}` and the phase ratios.
///
/// `alphas` is the decreasing temperature sequence and `alpha_last` the final target.
/// `log_ratio(i, αᵢ, αᵢ₊₁)` must return `log E_{αᵢ}[e^{(αᵢ−αᵢ₊₁)(φ−φ*)}]`, the
/// log of `Z(αᵢ₊₁)/Z(αᵢ)`.
pub fn telescope<F>(log_z0: f64, alphas: &[f64], alpha_last: f64, mut log_ratio: F) -> Result<f64>
where
    F: FnMut(usize, f64, f64) -> Result<f64>,
{
    let mut acc = log_z0;
    for (i, &a) in alphas.iter().enumerate() {
        let next = alphas.get(i + 1).copied().unwrap_or(alpha_last);
        if next > a {
            return Err(Error::Schedule(format!("temperatures must decrease (α{i} = {a}, next {next})")));
        }
        acc += log_ratio(i, a, next)?;
    }
    Ok(acc)
}

/// Laplace approximation of `log ∫ e^{−α(φ−φ*)}` around the minimizer, with its
/// `1/α` correction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Laplace {
    pub log_z: f64,
    /// `c₁` in `Z ≈ (2π/α)^{n/2} det(g)^{−1/2}(1 + c₁/α)`.
    pub c1: f64,
}

/// In coordinates where `g(x*) = I`:
/// `c₁ = −⅛ Σ φ_iijj + ⅛ Σ_j (Σ_i φ_iij)² + (1/12) Σ φ_ijk²`.
/// Third derivatives come from `Dg`; the fourth from central differences of `Dg`.
pub fn laplace(
    params: &BarrierParams<f64>,
    poly: &Polytope<f64>,
    at_min: &MetricState<f64>,
    alpha: f64,
) -> Result<Laplace> {
    let n = at_min.n();
    let l_inv_t = at_min
        .g_chol
        .l()
        .transpose()
        .try_inverse()
        .ok_or_else(|| Error::Numerical("metric factor is singular at the minimizer".into()))?;
    let dirs: Vec<DVector<f64>> = (0..n).map(|i| l_inv_t.column(i).into_owned()).collect();
    let whiten = |m: &DMatrix<f64>| l_inv_t.transpose() * m * &l_inv_t;

    let mut third = Vec::with_capacity(n);
    for d in &dirs {
        third.push(whiten(&at_min.dmetric(d)?));
    }
    let mut quartic = 0.0;
    for d in &dirs {
        let h = 1e-4 / at_min.local_inf_norm(d).max(f64::MIN_POSITIVE);
        let side = |t: f64| -> Result<DMatrix<f64>> {
            let st = MetricState::new_warm(params, poly, at_min.x() + d * t, Some(&at_min.lewis.w))?;
            Ok(whiten(&st.dmetric(d)?))
        };
        let coarse = (side(h)? - side(-h)?) / (2.0 * h);
        let fine = (side(h / 2.0)? - side(-h / 2.0)?) / h;
        let d4 = (&fine * 4.0 - coarse) / 3.0;
        quartic += d4.trace();
    }
    let mut contracted = 0.0;
    for j in 0..n {
        let s: f64 = (0..n).map(|i| third[i][(i, j)]).sum();
        contracted += s * s;
    }
    let cubic_sq: f64 = third.iter().map(|t| t.norm_squared()).sum();
    let c1 = -quartic / 8.0 + contracted / 8.0 + cubic_sq / 12.0;

    let nf = n as f64;
    let log_det_g = 2.0 * at_min.g_chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let correction = 1.0 + c1 / alpha;
    if !(correction > 0.0) {
        return Err(Error::Numerical(format!(
            "Laplace correction 1 + c₁/α = {correction} is not positive; start colder (larger α)"
        )));
    }
    Ok(Laplace {
        log_z: 0.5 * nf * (2.0 * std::f64::consts::PI / alpha).ln() - 0.5 * log_det_g + correction.ln(),
        c1,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseRecord {
    pub index: usize,
    pub sigma_sq: f64,
    pub alpha: f64,
    pub alpha_next: f64,
    pub k: usize,
    pub log_ratio: f64,
    pub ratio: f64,
    pub rel_se: f64,
    pub acceptance_rate: f64,
    pub step_size: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoolingTrace {
    pub config: CoolingConfig,
    pub chain: ChainConfig,
    pub nu: f64,
    pub phi_min: f64,
    pub x_min: Vec<f64>,
    pub log_z0: f64,
    pub laplace_c1: f64,
    pub phases: Vec<PhaseRecord>,
    pub log_volume: f64,
    pub log_volume_std_error: f64,
    pub volume: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub total_steps: usize,
}

fn minimizer(params: &BarrierParams<f64>, poly: &Polytope<f64>) -> Result<MetricState<f64>> {
    let start = poly.find_interior_point(1e-9)?.into_x();
    barrier::minimize_phi(params, poly, start, 1e-10, 200)
}

fn leave_one_out(terms: &[f64], batches: usize) -> Vec<f64> {
    let len = terms.len();
    (0..batches)
        .map(|b| {
            let (lo, hi) = (b * len / batches, (b + 1) * len / batches);
            let kept: Vec<f64> = terms[..lo].iter().chain(&terms[hi..]).copied().collect();
            log_mean_exp(&kept)
        })
        .collect()
}

/// `vol ≈ Z(α₀)·Πᵢ Ê_{αᵢ}[e^{(αᵢ−αᵢ₊₁)(φ−φ*)}]` with a final ratio to `α = 0`.
///
/// One chain walks the schedule; each phase starts from the previous phase's
/// last state after `phase_burnin` steps. The seed comes from `cfg.seed`; the
/// chain's `alpha`, `seed` and `n_samples` are ignored.
pub fn estimate_volume(cfg: &CoolingConfig, poly: &Polytope<f64>, chain_cfg: &ChainConfig) -> Result<CoolingTrace> {
    cfg.validate()?;
    let (m, n) = (poly.m(), poly.n());
    let mut chain_cfg = chain_cfg.clone();
    chain_cfg.seed = cfg.seed;
    let params = chain_cfg.barrier_params(m, n);
    params.validate()?;
    let nu = cfg.resolved_nu(params.alpha0, n);
    let phases = schedule(cfg, n, nu)?;
    let alphas: Vec<f64> = phases.iter().map(Phase::alpha).collect();

    let at_min = minimizer(&params, poly)?;
    let phi_min = at_min.phi;
    let lap = laplace(&params, poly, &at_min, alphas[0])?;

    chain_cfg.alpha = alphas[0];
    let mut chain = Chain::new(&chain_cfg, poly, at_min.x().clone())?;
    let thinning = chain_cfg.thinning.max(1);
    let mut records = Vec::with_capacity(phases.len());
    let mut jack = vec![lap.log_z; cfg.batches];
    let log_volume = telescope(lap.log_z, &alphas, 0.0, |i, a, next| {
        chain.set_alpha(a);
        let before = chain.counters.clone();
        for _ in 0..cfg.phase_burnin {
            chain.step();
        }
        let k = phases[i].k.max(cfg.batches);
        let mut terms = Vec::with_capacity(k);
        for _ in 0..k {
            for _ in 0..thinning {
                chain.step();
            }
            terms.push((a - next) * (chain.state().phi - phi_min));
        }
        let est = ratio_estimate(&terms);
        if !(est.rel_se <= cfg.max_rel_se) {
            return Err(Error::PhaseVariance { phase: i, rel_se: est.rel_se });
        }
        for (acc, l) in jack.iter_mut().zip(leave_one_out(&terms, cfg.batches)) {
            *acc += l;
        }
        let proposed = chain.counters.proposed - before.proposed;
        let accepted = chain.counters.accepted - before.accepted;
        records.push(PhaseRecord {
            index: i,
            sigma_sq: phases[i].sigma_sq,
            alpha: a,
            alpha_next: next,
            k,
            log_ratio: est.log_ratio,
            ratio: est.log_ratio.exp(),
            rel_se: est.rel_se,
            acceptance_rate: accepted as f64 / proposed.max(1) as f64,
            step_size: chain.step_size(),
        });
        Ok(est.log_ratio)
    })?;

    let b = cfg.batches as f64;
    let jack_mean = jack.iter().sum::<f64>() / b;
    let se = ((b - 1.0) / b * jack.iter().map(|v| (v - jack_mean).powi(2)).sum::<f64>()).sqrt();
    Ok(CoolingTrace {
        config: cfg.clone(),
        chain: chain_cfg,
        nu,
        phi_min,
        x_min: at_min.x().iter().copied().collect(),
        log_z0: lap.log_z,
        laplace_c1: lap.c1,
        phases: records,
        log_volume,
        log_volume_std_error: se,
        volume: log_volume.exp(),
        ci_low: (log_volume - 1.96 * se).exp(),
        ci_high: (log_volume + 1.96 * se).exp(),
        total_steps: chain.counters.proposed,
    })
}

/// Samples from `e^{−α_target φ}` after walking the schedule down from the
/// minimizer. Intermediate phases take `phase_burnin` steps each, standing in for
/// a single warm sample per phase; the final phase draws `chain_cfg.n_samples` samples
/// after `chain_cfg`'s burn-in and thinning.
pub fn sample_anneal(
    cfg: &CoolingConfig,
    poly: &Polytope<f64>,
    chain_cfg: &ChainConfig,
    alpha_target: f64,
) -> Result<Vec<DVector<f64>>> {
    cfg.validate()?;
    if !(alpha_target >= 0.0 && alpha_target.is_finite()) {
        return Err(Error::Parameter(format!("alpha_target must be finite and ≥ 0, got {alpha_target}")));
    }
    let (m, n) = (poly.m(), poly.n());
    let mut chain_cfg = chain_cfg.clone();
    chain_cfg.seed = cfg.seed;
    let params = chain_cfg.barrier_params(m, n);
    params.validate()?;
    let nu = cfg.resolved_nu(params.alpha0, n);
    let phases = schedule(cfg, n, nu)?;
    let at_min = minimizer(&params, poly)?;

    chain_cfg.alpha = phases[0].alpha().max(alpha_target);
    let mut chain = Chain::new(&chain_cfg, poly, at_min.x().clone())?;
    for ph in phases.iter().take_while(|ph| ph.alpha() > alpha_target) {
        chain.set_alpha(ph.alpha());
        for _ in 0..cfg.phase_burnin {
            chain.step();
        }
    }
    chain.set_alpha(alpha_target);
    let burnin = chain_cfg.burnin_for(chain.step_size());
    Ok(chain.sample(burnin, chain_cfg.n_samples, chain_cfg.thinning.max(1)))
}
