//! Numerical verification of the barrier's inequalities on a corpus of polytopes.
//!
//! Every check produces a [`CheckReport`] with `pass ⇔ measured ≤ bound·(1 + tolerance)`.
//! Hard checks have explicit constants; soft checks measure constants that are
//! only known up to polylogarithmic factors and are reported, not enforced.
//! Finite-difference oracles must pass a two-step Richardson check before they
//! judge a bound; when they do not, the report is an oracle error instead.

use std::fmt::Write as _;
use std::thread;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::barrier::{BarrierParams, MetricState, TraceMode};
use crate::error::{Error, Result};
use crate::fd;
use crate::linalg;
use crate::polytope::Polytope;
use crate::sampler::refresh_momentum;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Hard,
    Soft,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Outcome {
    Pass,
    Fail,
    OracleError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub check: String,
    pub family: String,
    pub polytope: String,
    pub point: String,
    pub measured: f64,
    pub bound: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub outcome: Outcome,
    pub severity: Severity,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Where a check runs; copied into its report.
#[derive(Debug, Clone, Copy)]
pub struct Site<'a> {
    pub polytope: &'a str,
    pub point: &'a str,
}

impl CheckReport {
    pub fn judge(
        site: Site<'_>,
        family: &str,
        check: &str,
        severity: Severity,
        measured: f64,
        bound: f64,
        tolerance: f64,
    ) -> Self {
        let pass = measured <= bound * (1.0 + tolerance);
        Self {
            check: check.into(),
            family: family.into(),
            polytope: site.polytope.into(),
            point: site.point.into(),
            measured,
            bound,
            tolerance,
            pass,
            outcome: if pass { Outcome::Pass } else { Outcome::Fail },
            severity,
            note: None,
        }
    }

    pub fn oracle_error(site: Site<'_>, family: &str, check: &str, severity: Severity, err: &Error) -> Self {
        Self {
            check: check.into(),
            family: family.into(),
            polytope: site.polytope.into(),
            point: site.point.into(),
            measured: f64::NAN,
            bound: f64::NAN,
            tolerance: 0.0,
            pass: false,
            outcome: Outcome::OracleError,
            severity,
            note: Some(err.to_string()),
        }
    }

    fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }

    pub fn is_hard_failure(&self) -> bool {
        self.severity == Severity::Hard && self.outcome == Outcome::Fail
    }
}

#[derive(Debug, Clone)]
pub struct CorpusEntry {
    pub polytope: Polytope<f64>,
    pub points: Vec<(String, DVector<f64>)>,
}

impl CorpusEntry {
    pub fn name(&self) -> &str {
        self.polytope.name().unwrap_or("unnamed")
    }
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub entries: Vec<CorpusEntry>,
    pub seed: u64,
    pub n_range: (usize, usize),
    pub m_max: usize,
}

/// Smallest slack any corpus point may have.
pub const MIN_SLACK: f64 = 1e-6;

impl Corpus {
    /// `random` polytopes with `n ∈ [2, 8]`, `m ∈ [n + 1, 60]`, plus cubes,
    /// simplices, cross-polytopes and a box with aspect ratio 10³.
    pub fn generate(seed: u64, random: usize) -> Result<Self> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let (n_lo, n_hi, m_max) = (2, 8, 60);
        let mut polys = Vec::new();
        for _ in 0..random {
            let n = rng.random_range(n_lo..=n_hi);
            let m = rng.random_range(n + 1..=m_max);
            polys.push(Polytope::random(n, m, &mut rng)?);
        }
        for n in [2, 3, 5] {
            polys.push(Polytope::cube(n).with_name(format!("cube{n}")));
            polys.push(Polytope::simplex(n).with_name(format!("simplex{n}")));
        }
        polys.push(Polytope::cross_polytope(3).with_name("cross3"));
        polys.push(Polytope::centered_box(&[1.0, 1.0, 1e-3]).with_name("thin-box3"));

        let mut entries = Vec::with_capacity(polys.len());
        for poly in polys {
            let points = Self::points_for(&poly, &mut rng)?;
            entries.push(CorpusEntry { polytope: poly, points });
        }
        Ok(Self {
            entries,
            seed,
            n_range: (n_lo, n_hi),
            m_max,
        })
    }

    /// A single polytope with the same point recipe.
    pub fn single(poly: Polytope<f64>, seed: u64) -> Result<Self> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let points = Self::points_for(&poly, &mut rng)?;
        let (n, m) = (poly.n(), poly.m());
        Ok(Self {
            entries: vec![CorpusEntry { polytope: poly, points }],
            seed,
            n_range: (n, n),
            m_max: m,
        })
    }

    /// Analytic center, two random interior points and one point whose smallest
    /// slack is `min(10⁻⁴, s_min/10)` with `s_min` the center's.
    fn points_for(poly: &Polytope<f64>, rng: &mut ChaCha20Rng) -> Result<Vec<(String, DVector<f64>)>> {
        let center = poly.find_interior_point(1e-8)?.into_x();
        let mut points = vec![("center".to_string(), center.clone())];
        for k in 0..2 {
            points.push((format!("interior-{k}"), poly.random_point_on_ray(&center, 0.9, rng)));
        }
        let d = DVector::from_fn(poly.n(), |_, _| rng.sample::<f64, _>(StandardNormal));
        let ad = poly.a() * &d;
        let s = poly.slacks(&center);
        let target = (0.1 * s.min()).min(1e-4);
        let t = (0..poly.m())
            .filter(|&i| ad[i] < 0.0)
            .map(|i| (s[i] - target) / -ad[i])
            .fold(f64::INFINITY, f64::min);
        points.push(("near-boundary".to_string(), &center + d * t));
        for (name, x) in &points {
            let min_slack = poly.slacks(x).min();
            if !(min_slack >= MIN_SLACK) {
                return Err(Error::Validation(format!(
                    "corpus point {name} of {} has slack {min_slack:e} < {MIN_SLACK:e}",
                    poly.name().unwrap_or("unnamed")
                )));
            }
        }
        Ok(points)
    }

    pub fn sites(&self) -> usize {
        self.entries.iter().map(|e| e.points.len()).sum()
    }
}

/// Check families, usable as `--only` filters.
pub const FAMILIES: &[&str] = &[
    "fixed-point",
    "derivatives",
    "ginfnorm",
    "row-norm",
    "barrier-parameter",
    "self-concordance",
    "bias-norm",
    "gaussian-percentile",
    "ricci",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteOptions {
    pub only: Option<String>,
    pub trials: usize,
    pub seed: u64,
    pub lewis_tol: f64,
    pub p: Option<f64>,
    /// `C₀` of the soft self-concordance bounds.
    pub c0: f64,
    pub threads: usize,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            only: None,
            trials: 8,
            seed: 0,
            lewis_tol: 1e-12,
            p: None,
            c0: 50.0,
            threads: 1,
        }
    }
}

impl SuiteOptions {
    pub fn validate(&self) -> Result<()> {
        if let Some(f) = &self.only {
            if !FAMILIES.contains(&f.as_str()) {
                return Err(Error::Parameter(format!(
                    "unknown check family {f:?}; expected one of {}",
                    FAMILIES.join(", ")
                )));
            }
        }
        if self.trials == 0 {
            return Err(Error::Parameter("trials must be at least 1".into()));
        }
        if !(self.lewis_tol > 0.0) {
            return Err(Error::Parameter("lewis tolerance must be positive".into()));
        }
        Ok(())
    }

    fn wants(&self, family: &str) -> bool {
        self.only.as_deref().is_none_or(|f| f == family)
    }
}

fn random_direction(n: usize, rng: &mut ChaCha20Rng) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Rescales `v` to unit local infinity norm.
fn unit_local(state: &MetricState<f64>, v: DVector<f64>) -> DVector<f64> {
    let norm = state.local_inf_norm(&v);
    if norm > 0.0 {
        v / norm
    } else {
        v
    }
}

fn inf_ratio_bound(p: f64) -> f64 {
    1.0 / (4.0 / p - 1.0)
}

/// `max ‖G⁻¹Ws‖_∞ / ‖s‖_∞` over the basis vectors and `trials` random `s`.
pub fn check_inf_operator_bound(site: Site<'_>, state: &MetricState<f64>, trials: usize, rng: &mut ChaCha20Rng) -> CheckReport {
    let m = state.m();
    let mut worst: f64 = 0.0;
    let mut probe = |s: &DVector<f64>| {
        let y = state.lewis.g_inv_w(s);
        worst = worst.max(y.amax() / s.amax());
    };
    for i in 0..m {
        probe(&DVector::from_fn(m, |j, _| if i == j { 1.0 } else { 0.0 }));
    }
    for _ in 0..trials {
        probe(&random_direction(m, rng));
        // Sign vectors attain the ∞→∞ norm of a matrix.
        probe(&DVector::from_fn(m, |_, _| if rng.random::<bool>() { 1.0 } else { -1.0 }));
    }
    CheckReport::judge(site, "ginfnorm", "ginfnorm", Severity::Hard, worst, inf_ratio_bound(state.lewis.p), 1e-8)
}

/// `‖σ − w‖_∞` and `|Σw − n|` at the computed weights.
pub fn check_fixed_point(site: Site<'_>, state: &MetricState<f64>) -> Vec<CheckReport> {
    let n = state.n() as f64;
    let sum_err = (state.lewis.w.sum() - n).abs();
    vec![
        CheckReport::judge(site, "fixed-point", "fixed-point-residual", Severity::Hard, state.lewis.residual, 1e-10, 0.0),
        CheckReport::judge(site, "fixed-point", "weight-sum", Severity::Hard, sum_err, 1e-10, 0.0),
    ]
}

/// Analytic `∇φ`, `g` and `Dg` against central differences, and the two forms of `g₁`.
pub fn check_derivatives(
    site: Site<'_>,
    params: &BarrierParams<f64>,
    poly: &Polytope<f64>,
    state: &MetricState<f64>,
    rng: &mut ChaCha20Rng,
) -> Vec<CheckReport> {
    let fam = "derivatives";
    let x = state.x().clone();
    let n = state.n();
    let mut out = Vec::new();
    // Coordinates in which a unit step moves every slack by at most one unit of itself.
    let scale = (0..n)
        .map(|i| state.local_inf_norm(&DVector::from_fn(n, |j, _| if i == j { 1.0 } else { 0.0 })))
        .fold(0.0f64, f64::max);
    let h = 1e-4 / scale;

    // ∇φ and Dg vanish at symmetric points; their errors are measured against
    // the size of the terms that cancel.
    let a = state.ax.matrix();
    let grad_floor = (a.abs().transpose() * state.lewis.w.map(|w| w + state.ratio)).norm() * params.alpha0;
    let phi = |y: &DVector<f64>| crate::barrier::phi(params, poly, y);
    match fd::gradient(phi, &x, h).and_then(|e| e.checked_floor(1e-4, grad_floor, "∇φ")) {
        Ok(est) => {
            let err = fd::rel_err_vec(&state.grad_phi, &est.extrapolated, grad_floor);
            out.push(CheckReport::judge(site, fam, "gradient-fd", Severity::Hard, err, 1e-6, 0.0));
        }
        Err(e) => out.push(CheckReport::oracle_error(site, fam, "gradient-fd", Severity::Hard, &e)),
    }

    let grad = |y: &DVector<f64>| crate::barrier::grad_phi(params, poly, y);
    match fd::jacobian(grad, &x, h).and_then(|e| e.checked(1e-3, "∇²φ")) {
        Ok(est) => {
            let mut hess = est.extrapolated;
            linalg::symmetrize(&mut hess);
            let err = fd::rel_err_mat(&state.g, &hess, 1e-300);
            out.push(CheckReport::judge(site, fam, "hessian-fd", Severity::Hard, err, 1e-4, 0.0));
        }
        Err(e) => out.push(CheckReport::oracle_error(site, fam, "hessian-fd", Severity::Hard, &e)),
    }

    let v = unit_local(state, random_direction(n, rng));
    let dg_floor = state.g.norm();
    let metric = |y: &DVector<f64>| MetricState::new_warm(params, poly, y.clone(), Some(&state.lewis.w)).map(|s| s.g);
    let analytic = state.dmetric(&v);
    match (analytic, fd::directional_mat(metric, &x, &v, 1e-4).and_then(|e| e.checked_floor(1e-3, dg_floor, "Dg"))) {
        (Ok(dg), Ok(est)) => {
            let err = fd::rel_err_mat(&dg, &est.extrapolated, dg_floor);
            out.push(CheckReport::judge(site, fam, "dmetric-fd", Severity::Hard, err, 1e-5, 0.0));
        }
        (Err(e), _) | (_, Err(e)) => out.push(CheckReport::oracle_error(site, fam, "dmetric-fd", Severity::Hard, &e)),
    }

    let forms = fd::rel_err_mat(&state.g1_first_form(), &state.g1_second_form(), 1e-300);
    out.push(CheckReport::judge(site, fam, "metric-forms-agree", Severity::Hard, forms, 1e-10, 0.0));
    out
}

/// `aᵢᵀg⁻¹aᵢ ≤ 1`, `aᵢᵀg''⁻¹aᵢ ≤ (m/n)^{(2/p)/(1+2/p)}`, and the consequences
/// `‖s_v‖_∞ ≤ ‖v‖_g`, `‖r_v‖_∞ ≤ ‖v‖_g/(4/p − 1)`, `‖v‖_{g''} ≤ np‖s_v‖_∞`.
pub fn check_row_norm_bound(site: Site<'_>, state: &MetricState<f64>, trials: usize, rng: &mut ChaCha20Rng) -> Vec<CheckReport> {
    let fam = "row-norm";
    let (m, n) = (state.m() as f64, state.n() as f64);
    let p = state.lewis.p;
    let hard = Severity::Hard;
    let mut out = vec![CheckReport::judge(site, fam, "row-norm-g", hard, state.row_norms_sq().max(), 1.0, 1e-8)];

    let g_pp = &state.g / state.alpha0;
    match linalg::cholesky_jitter(&g_pp, "g''") {
        Ok(chol) => {
            let a = state.ax.matrix();
            let worst = (0..a.nrows())
                .map(|i| {
                    let row = a.row(i).transpose();
                    row.dot(&chol.solve(&row))
                })
                .fold(0.0f64, f64::max);
            out.push(CheckReport::judge(site, fam, "row-norm-g-unscaled", hard, worst, state.alpha0, 1e-8));
        }
        Err(e) => out.push(CheckReport::oracle_error(site, fam, "row-norm-g-unscaled", hard, &e)),
    }

    let (mut s_ratio, mut r_ratio, mut ellipse): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for _ in 0..trials {
        let v = random_direction(state.n(), rng);
        let Ok(rep) = state.reparam(&v) else { continue };
        let gn = state.g_norm(&v);
        s_ratio = s_ratio.max(rep.s_v.amax() / gn);
        r_ratio = r_ratio.max(rep.r_v.amax() * (4.0 / p - 1.0) / gn);
        ellipse = ellipse.max(g_pp_norm(&g_pp, &v) / (n * p * rep.s_v.amax()));
    }
    let _ = m;
    out.push(CheckReport::judge(site, fam, "infwithgnorm-s", hard, s_ratio, 1.0, 1e-8));
    out.push(CheckReport::judge(site, fam, "infwithgnorm-r", hard, r_ratio, 1.0, 1e-8));
    out.push(CheckReport::judge(site, fam, "ellipsebysup", hard, ellipse, 1.0, 1e-8));
    out
}

fn g_pp_norm(g_pp: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
    v.dot(&(g_pp * v)).max(0.0).sqrt()
}

/// `∇φᵀg⁻¹∇φ ≤ α₀n`, and for the plain log barrier `𝟙ᵀA_x(A_xᵀA_x)⁻¹A_xᵀ𝟙 ≤ m`.
pub fn check_barrier_parameter(site: Site<'_>, state: &MetricState<f64>) -> Vec<CheckReport> {
    let fam = "barrier-parameter";
    let nu = state.g_inv_norm(&state.grad_phi).powi(2);
    let bound = state.alpha0 * state.n() as f64;
    let mut out = vec![CheckReport::judge(site, fam, "barrier-parameter", Severity::Hard, nu, bound, 1e-6)
        .with_note(format!("ratio ν/(α₀n) = {:.6}", nu / bound))];
    let a = state.ax.matrix();
    let gram = a.transpose() * a;
    match linalg::cholesky_jitter(&gram, "A_xᵀA_x") {
        Ok(chol) => {
            let t = a.transpose() * DVector::from_element(a.nrows(), 1.0);
            let val = t.dot(&chol.solve(&t));
            out.push(CheckReport::judge(site, fam, "log-barrier-parameter", Severity::Hard, val, a.nrows() as f64, 1e-10));
        }
        Err(e) => out.push(CheckReport::oracle_error(site, fam, "log-barrier-parameter", Severity::Hard, &e)),
    }
    out
}

/// `μ = −g⁻¹∇(αφ) − ½g⁻¹tr(g⁻¹Dg)`.
pub fn drift(state: &MetricState<f64>, alpha: f64) -> Result<DVector<f64>> {
    let t = state.grad_logdet_g(TraceMode::Adjoint)?;
    Ok(-state.g_inv(&(&state.grad_phi * alpha + t * 0.5)))
}

/// `‖μ‖_g ≤ 2(1 + α√α₀)√n`, i.e. `≲` with the constant taken as 2.
pub fn check_bias_norm(site: Site<'_>, state: &MetricState<f64>, alpha: f64) -> CheckReport {
    let check = format!("bias-norm-alpha-{alpha}");
    match drift(state, alpha) {
        Ok(mu) => {
            let bound = 2.0 * (1.0 + alpha * state.alpha0.sqrt()) * (state.n() as f64).sqrt();
            CheckReport::judge(site, "bias-norm", &check, Severity::Soft, state.g_norm(&mu), bound, 0.0)
        }
        Err(e) => CheckReport::oracle_error(site, "bias-norm", &check, Severity::Soft, &e),
    }
}

/// Largest `|λ|` of `B` relative to `g`.
fn relative_spectral_radius(b: &DMatrix<f64>, state: &MetricState<f64>) -> f64 {
    let mut b = b.clone();
    linalg::symmetrize(&mut b);
    let (lo, hi) = linalg::generalized_eig_extremes(&b, &state.g_chol);
    lo.abs().max(hi.abs())
}

/// Which norm the self-concordance bound is stated in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormVariant {
    /// `C₀·log(m)³·Π‖s_·‖_∞`.
    Infinity,
    /// `C₀·Π‖·‖_g`.
    Metric,
}

/// `order`-th directional derivative of `g` along unit-local-norm directions.
/// Order 1 uses the analytic `Dg`; orders 2 and 3 take central differences of it.
fn derivative_of_metric(
    params: &BarrierParams<f64>,
    poly: &Polytope<f64>,
    state: &MetricState<f64>,
    dirs: &[DVector<f64>],
) -> Result<DMatrix<f64>> {
    let x = state.x();
    // Odd derivatives vanish at centers of symmetry; with unit-local directions
    // ‖g‖ is their natural size.
    let floor = state.g.norm();
    let dmetric_at = |y: &DVector<f64>| -> Result<DMatrix<f64>> {
        MetricState::new_warm(params, poly, y.clone(), Some(&state.lewis.w))?.dmetric(&dirs[0])
    };
    match dirs.len() {
        1 => state.dmetric(&dirs[0]),
        2 => Ok(fd::directional_mat(dmetric_at, x, &dirs[1], 1e-4)?
            .checked_floor(1e-3, floor, "D²g")?
            .extrapolated),
        3 => {
            let (z, u) = (&dirs[1], &dirs[2]);
            let mixed = |h: f64| -> Result<DMatrix<f64>> {
                let at = |a: f64, b: f64| dmetric_at(&(x + z * a + u * b));
                Ok((at(h, h)? - at(-h, h)? - at(h, -h)? + at(-h, -h)?) / (4.0 * h * h))
            };
            let h = 1e-3;
            let coarse = mixed(h)?;
            let fine = mixed(h / 2.0)?;
            let inconsistency = (&coarse - &fine).norm() / fine.norm().max(floor);
            if !(inconsistency <= 1e-2) {
                return Err(Error::Numerical(format!(
                    "finite-difference oracle for D³g failed its Richardson check (inconsistency {inconsistency:.3e})"
                )));
            }
            Ok((&fine * 4.0 - coarse) / 3.0)
        }
        k => Err(Error::Parameter(format!("self-concordance order must be 1, 2 or 3, got {k}"))),
    }
}

/// Empirical constant `max |λ(Dᵏg[v, …])| / Π‖·‖` over random directions.
#[allow(clippy::too_many_arguments)]
pub fn check_self_concordance(
    site: Site<'_>,
    params: &BarrierParams<f64>,
    poly: &Polytope<f64>,
    state: &MetricState<f64>,
    order: usize,
    variant: NormVariant,
    trials: usize,
    c0: f64,
    rng: &mut ChaCha20Rng,
) -> CheckReport {
    let fam = "self-concordance";
    let tag = match variant {
        NormVariant::Infinity => "inf",
        NormVariant::Metric => "g",
    };
    let check = format!("self-concordance-{order}-{tag}");
    let log_m = (state.m() as f64).ln();
    let bound = match variant {
        NormVariant::Infinity => c0 * log_m.powi(3),
        NormVariant::Metric => c0,
    };
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let dirs: Vec<DVector<f64>> = (0..order).map(|_| unit_local(state, random_direction(state.n(), rng))).collect();
        let d = match derivative_of_metric(params, poly, state, &dirs) {
            Ok(d) => d,
            Err(e) => return CheckReport::oracle_error(site, fam, &check, Severity::Soft, &e),
        };
        let denom: f64 = dirs
            .iter()
            .map(|v| match variant {
                NormVariant::Infinity => state.local_inf_norm(v),
                NormVariant::Metric => state.g_norm(v),
            })
            .product();
        worst = worst.max(relative_spectral_radius(&d, state) / denom);
    }
    CheckReport::judge(site, fam, &check, Severity::Soft, worst, bound, 0.0)
}

/// The plain log barrier: `Dg₂(v) = −2A_xᵀS_vA_x`, so `|λ(Dg₂(v))| ≤ 2‖s_v‖_∞` relative to `g₂`.
pub fn check_log_barrier_self_concordance(site: Site<'_>, state: &MetricState<f64>, trials: usize, rng: &mut ChaCha20Rng) -> CheckReport {
    let fam = "self-concordance";
    let check = "self-concordance-1-log-barrier";
    let chol = match linalg::cholesky_jitter(&state.g2, "g₂") {
        Ok(c) => c,
        Err(e) => return CheckReport::oracle_error(site, fam, check, Severity::Soft, &e),
    };
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let v = random_direction(state.n(), rng);
        match state.dmetric_parts(&v) {
            Ok((_, mut dg2)) => {
                linalg::symmetrize(&mut dg2);
                let (lo, hi) = linalg::generalized_eig_extremes(&dg2, &chol);
                worst = worst.max(lo.abs().max(hi.abs()) / state.local_inf_norm(&v));
            }
            Err(e) => return CheckReport::oracle_error(site, fam, check, Severity::Soft, &e),
        }
    }
    CheckReport::judge(site, fam, check, Severity::Soft, worst, 2.0, 1e-6)
}

/// For `v ~ N(0, g⁻¹)` each `s_{v,i}` has variance `aᵢᵀg⁻¹aᵢ ≤ 1`, so by a union
/// bound the 95th percentile of `‖s_v‖_∞` is at most `√(2 log(40m))`.
pub fn check_gaussian_percentile(site: Site<'_>, state: &MetricState<f64>, trials: usize, rng: &mut ChaCha20Rng) -> CheckReport {
    let draws = (50 * trials).max(200);
    let mut norms: Vec<f64> = (0..draws).map(|_| state.local_inf_norm(&refresh_momentum(state, rng))).collect();
    norms.sort_by(f64::total_cmp);
    let p95 = norms[(0.95 * (draws - 1) as f64).round() as usize];
    let bound = (2.0 * (40.0 * state.m() as f64).ln()).sqrt();
    CheckReport::judge(site, "gaussian-percentile", "gaussian-percentile", Severity::Soft, p95, bound, 0.0)
}

/// `Ric(u, v) = −¼tr(g⁻¹Dg(u)g⁻¹Dg(v)) + ¼uᵀDg(g⁻¹t)v` with `t = tr(g⁻¹Dg)`.
pub fn ricci_form(state: &MetricState<f64>, u: &DVector<f64>, v: &DVector<f64>) -> Result<f64> {
    let t = state.grad_logdet_g(TraceMode::Adjoint)?;
    let dgu = state.g_chol.solve(&state.dmetric(u)?);
    let dgv = state.g_chol.solve(&state.dmetric(v)?);
    let first = (dgu * dgv).trace();
    let second = u.dot(&(state.dmetric(&state.g_inv(&t))? * v));
    Ok(-0.25 * first + 0.25 * second)
}

pub fn ricci_diagnostic(state: &MetricState<f64>, v: &DVector<f64>) -> Result<f64> {
    ricci_form(state, v, v)
}

/// Ricci curvature `Ric(v, v)` from Christoffel symbols of central differences of
/// `g`, with no use of the Hessian structure. Steps are in `g`-norm units. With `K_{σν} = ∂_ρΓ^ρ_{νσ} − ∂_νΓ^ρ_{ρσ}
/// + Γ^ρ_{ρλ}Γ^λ_{νσ} − Γ^ρ_{νλ}Γ^λ_{ρσ}` this returns `−vᵀKv`, matching the sign
/// convention `R(X, Y)Z = ∇_Y∇_X Z − ∇_X∇_Y Z` of [`ricci_form`].
pub fn ricci_finite_difference(
    params: &BarrierParams<f64>,
    poly: &Polytope<f64>,
    x: &DVector<f64>,
    v: &DVector<f64>,
    h_metric: f64,
    h_christoffel: f64,
) -> Result<f64> {
    let n = x.len();
    // Coordinates y = Lᵀ(x' − x) with g(x) = LLᵀ, in which g(x) = I and the
    // Christoffel products do not cancel catastrophically near the boundary.
    let base = MetricState::new(params, poly, x.clone())?;
    let l = base.g_chol.l();
    let l_inv = l
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Numerical("metric factor is singular".into()))?;
    let to_x = |y: &DVector<f64>| x + l_inv.transpose() * y;
    let metric = |y: &DVector<f64>| {
        MetricState::new_warm(params, poly, to_x(y), Some(&base.lewis.w)).map(|s| &l_inv * s.g * l_inv.transpose())
    };
    let v = &(l.transpose() * v);
    let x = &DVector::zeros(n);
    let unit = |i: usize| DVector::from_fn(n, |j, _| if i == j { 1.0 } else { 0.0 });
    // Γ^k_{ij} at y, as gamma[k][(i, j)].
    let christoffel = |y: &DVector<f64>| -> Result<Vec<DMatrix<f64>>> {
        let dg: Vec<DMatrix<f64>> = (0..n)
            .map(|l| fd::directional_mat(metric, y, &unit(l), h_metric).map(|e| e.extrapolated))
            .collect::<Result<_>>()?;
        let g_inv = metric(y)?
            .try_inverse()
            .ok_or_else(|| Error::Numerical("metric is singular".into()))?;
        let lowered = |l: usize, i: usize, j: usize| 0.5 * (dg[i][(j, l)] + dg[j][(i, l)] - dg[l][(i, j)]);
        Ok((0..n)
            .map(|k| DMatrix::from_fn(n, n, |i, j| (0..n).map(|l| g_inv[(k, l)] * lowered(l, i, j)).sum()))
            .collect())
    };
    let gamma = christoffel(x)?;
    let d_gamma: Vec<Vec<DMatrix<f64>>> = (0..n)
        .map(|mu| {
            let plus = christoffel(&(x + unit(mu) * h_christoffel))?;
            let minus = christoffel(&(x - unit(mu) * h_christoffel))?;
            Ok((0..n).map(|k| (&plus[k] - &minus[k]) / (2.0 * h_christoffel)).collect())
        })
        .collect::<Result<_>>()?;
    let mut ric = DMatrix::zeros(n, n);
    for s in 0..n {
        for nu in 0..n {
            let mut acc = 0.0;
            for rho in 0..n {
                acc += d_gamma[rho][rho][(nu, s)] - d_gamma[nu][rho][(rho, s)];
                for l in 0..n {
                    acc += gamma[rho][(rho, l)] * gamma[l][(nu, s)] - gamma[rho][(nu, l)] * gamma[l][(rho, s)];
                }
            }
            ric[(s, nu)] = acc;
        }
    }
    Ok(-v.dot(&(ric * v)))
}

/// Ricci from the closed form against the Christoffel oracle; 2-D polytopes only.
pub fn check_ricci(
    site: Site<'_>,
    params: &BarrierParams<f64>,
    poly: &Polytope<f64>,
    state: &MetricState<f64>,
    rng: &mut ChaCha20Rng,
) -> Vec<CheckReport> {
    let fam = "ricci";
    let v = unit_local(state, random_direction(state.n(), rng));
    let u = unit_local(state, random_direction(state.n(), rng));
    let mut out = Vec::new();
    let closed = match ricci_diagnostic(state, &v) {
        Ok(r) => r,
        Err(e) => return vec![CheckReport::oracle_error(site, fam, "ricci-closed-form", Severity::Soft, &e)],
    };
    match (ricci_form(state, &u, &v), ricci_form(state, &v, &u)) {
        (Ok(a), Ok(b)) => {
            let scale = a.abs().max(b.abs()).max(state.local_inf_norm(&u) * state.local_inf_norm(&v));
            out.push(CheckReport::judge(site, fam, "ricci-symmetry", Severity::Soft, (a - b).abs() / scale, 1e-10, 0.0));
        }
        (Err(e), _) | (_, Err(e)) => out.push(CheckReport::oracle_error(site, fam, "ricci-symmetry", Severity::Soft, &e)),
    }
    if state.n() == 2 {
        let (h1, h2) = (5e-3, 3e-2);
        let fd = |a: f64, b: f64| ricci_finite_difference(params, poly, state.x(), &v, a, b);
        match (fd(h1, h2), fd(h1 / 2.0, h2 / 2.0)) {
            (Ok(coarse), Ok(fine)) => {
                // v has unit local norm, which sets the natural size of Ric(v, v).
                let scale = fine.abs().max(1.0);
                if (coarse - fine).abs() > 1e-2 * scale {
                    out.push(CheckReport::oracle_error(
                        site,
                        fam,
                        "ricci-christoffel-fd",
                        Severity::Soft,
                        &Error::Numerical(format!("Christoffel oracle inconsistent: {coarse:e} vs {fine:e}")),
                    ));
                } else {
                    let extrapolated = (4.0 * fine - coarse) / 3.0;
                    let err = (closed - extrapolated).abs() / extrapolated.abs().max(1.0);
                    out.push(
                        CheckReport::judge(site, fam, "ricci-christoffel-fd", Severity::Soft, err, 1e-3, 0.0)
                            .with_note(format!("closed form {closed:.9e}, oracle {extrapolated:.9e}")),
                    );
                }
            }
            (Err(e), _) | (_, Err(e)) => out.push(CheckReport::oracle_error(site, fam, "ricci-christoffel-fd", Severity::Soft, &e)),
        }
    }
    out
}

/// All requested checks at one `(polytope, point)` site.
pub fn run_site(
    opts: &SuiteOptions,
    poly: &Polytope<f64>,
    point_name: &str,
    x: &DVector<f64>,
    rng: &mut ChaCha20Rng,
) -> Vec<CheckReport> {
    let site = Site {
        polytope: poly.name().unwrap_or("unnamed"),
        point: point_name,
    };
    let mut params = BarrierParams::for_polytope(poly).with_lewis_tol(opts.lewis_tol);
    if let Some(p) = opts.p {
        params = params.with_p(p, poly.m(), poly.n());
    }
    let state = match MetricState::new(&params, poly, x.clone()) {
        Ok(s) => s,
        Err(e) => {
            return vec![CheckReport {
                outcome: Outcome::Fail,
                ..CheckReport::oracle_error(site, "fixed-point", "metric-state", Severity::Hard, &e)
            }]
        }
    };
    let trials = opts.trials;
    let mut out = Vec::new();
    if opts.wants("fixed-point") {
        out.extend(check_fixed_point(site, &state));
    }
    if opts.wants("derivatives") {
        out.extend(check_derivatives(site, &params, poly, &state, rng));
    }
    if opts.wants("ginfnorm") {
        out.push(check_inf_operator_bound(site, &state, trials, rng));
    }
    if opts.wants("row-norm") {
        out.extend(check_row_norm_bound(site, &state, trials, rng));
    }
    if opts.wants("barrier-parameter") {
        out.extend(check_barrier_parameter(site, &state));
    }
    if opts.wants("self-concordance") {
        out.push(check_log_barrier_self_concordance(site, &state, trials, rng));
        for order in 1..=3 {
            for variant in [NormVariant::Infinity, NormVariant::Metric] {
                out.push(check_self_concordance(site, &params, poly, &state, order, variant, trials, opts.c0, rng));
            }
        }
    }
    if opts.wants("bias-norm") {
        for alpha in [0.0, 1.0] {
            out.push(check_bias_norm(site, &state, alpha));
        }
    }
    if opts.wants("gaussian-percentile") {
        out.push(check_gaussian_percentile(site, &state, trials, rng));
    }
    if opts.wants("ricci") {
        out.extend(check_ricci(site, &params, poly, &state, rng));
    }
    out
}

/// Runs every site; site `k` draws from stream `k` of the seeded generator, so the
/// reports do not depend on the thread count.
pub fn run_suite(corpus: &Corpus, opts: &SuiteOptions) -> Result<Vec<CheckReport>> {
    opts.validate()?;
    let sites: Vec<(&Polytope<f64>, &str, &DVector<f64>)> = corpus
        .entries
        .iter()
        .flat_map(|e| e.points.iter().map(move |(name, x)| (&e.polytope, name.as_str(), x)))
        .collect();
    let run = |k: usize| {
        let (poly, name, x) = sites[k];
        let mut rng = ChaCha20Rng::seed_from_u64(opts.seed);
        rng.set_stream(k as u64);
        run_site(opts, poly, name, x, &mut rng)
    };
    let threads = opts.threads.max(1).min(sites.len().max(1));
    let mut per_site: Vec<Vec<CheckReport>> = vec![Vec::new(); sites.len()];
    if threads == 1 {
        for (k, slot) in per_site.iter_mut().enumerate() {
            *slot = run(k);
        }
    } else {
        thread::scope(|scope| {
            let handles: Vec<_> = (0..threads)
                .map(|t| {
                    let run = &run;
                    let count = sites.len();
                    scope.spawn(move || (t..count).step_by(threads).map(|k| (k, run(k))).collect::<Vec<_>>())
                })
                .collect();
            for h in handles {
                for (k, reports) in h.join().expect("verification worker panicked") {
                    per_site[k] = reports;
                }
            }
        });
    }
    Ok(per_site.into_iter().flatten().collect())
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckSummary {
    pub check: String,
    pub severity: Option<Severity>,
    pub runs: usize,
    pub passed: usize,
    pub failed: usize,
    pub oracle_errors: usize,
    /// Largest `measured/bound` seen.
    pub worst_ratio: f64,
    pub worst_site: String,
}

pub fn summarize(reports: &[CheckReport]) -> Vec<CheckSummary> {
    let mut out: Vec<CheckSummary> = Vec::new();
    for r in reports {
        let idx = match out.iter().position(|s| s.check == r.check) {
            Some(i) => i,
            None => {
                out.push(CheckSummary {
                    check: r.check.clone(),
                    severity: Some(r.severity),
                    worst_ratio: f64::NEG_INFINITY,
                    ..Default::default()
                });
                out.len() - 1
            }
        };
        let s = &mut out[idx];
        s.runs += 1;
        match r.outcome {
            Outcome::Pass => s.passed += 1,
            Outcome::Fail => s.failed += 1,
            Outcome::OracleError => s.oracle_errors += 1,
        }
        let ratio = r.measured / r.bound;
        if ratio.is_finite() && ratio > s.worst_ratio {
            s.worst_ratio = ratio;
            s.worst_site = format!("{}@{}", r.polytope, r.point);
        }
    }
    out
}

pub fn summary_table(reports: &[CheckReport]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<34} {:<5} {:>5} {:>5} {:>5} {:>6} {:>12}  worst site",
        "check", "kind", "runs", "pass", "fail", "oracle", "max m/bound"
    );
    for c in summarize(reports) {
        let kind = match c.severity {
            Some(Severity::Hard) => "hard",
            _ => "soft",
        };
        let _ = writeln!(
            s,
            "{:<34} {:<5} {:>5} {:>5} {:>5} {:>6} {:>12.4e}  {}",
            c.check, kind, c.runs, c.passed, c.failed, c.oracle_errors, c.worst_ratio, c.worst_site
        );
    }
    s
}

pub fn hard_failures(reports: &[CheckReport]) -> Vec<&CheckReport> {
    reports.iter().filter(|r| r.is_hard_failure()).collect()
}

pub fn reports_to_json(reports: &[CheckReport]) -> String {
    serde_json::to_string_pretty(reports).expect("reports serialize")
}
