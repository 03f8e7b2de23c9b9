//! The hybrid barrier `φ = α₀ (φ_p + (n/m) φ_ℓ)` and the Riemannian metric it induces.
//!
//! * `φ_p = ½ log det(A_xᵀ W^{1−2/p} A_x)` at the Lewis weights of `A_x`,
//! * `φ_ℓ = −Σ log sᵢ`,
//! * `α₀ = (m/n)^{(2/p)/(1+2/p)}`.
//!
//! With this normalization `∇φ_p = −A_xᵀ w` and `∇²φ_p = g₁`, where
//! `g₁ = A_xᵀ(W + 2Λ)A_x + 2(1−2/p) A_xᵀ Λ G⁻¹ Λ A_x`, so the metric
//! `g = α₀ (g₁ + (n/m) A_xᵀ A_x)` is exactly the Hessian of `φ`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::lewis::{self, LewisOptions, LewisState, ReparamVector};
use crate::linalg;
use crate::polytope::{InteriorPoint, Polytope, RescaledConstraints};
use crate::scalar::Real;

/// Barrier exponent, normalization and target temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct BarrierParams<T: Real> {
    pub p: T,
    pub alpha0: T,
    /// Target density is `e^{−α φ}`; `α = 0` is uniform.
    pub alpha: T,
    pub lewis_tol: T,
    pub lewis_max_iter: usize,
}

/// `4 − 1/log m`, clamped to `[2, 3.999]`.
pub fn default_exponent<T: Real>(m: usize) -> T {
    let m = T::from_usize_lossy(m);
    let p = T::lit(4.0) - T::one() / m.ln();
    if p.is_finite() {
        p.max(T::lit(2.0)).min(T::lit(3.999))
    } else {
        T::lit(2.0)
    }
}

/// `α₀ = (m/n)^{(2/p)/(1+2/p)}`.
pub fn alpha0<T: Real>(p: T, m: usize, n: usize) -> T {
    let two_over_p = T::lit(2.0) / p;
    (T::from_usize_lossy(m) / T::from_usize_lossy(n)).powf(two_over_p / (T::one() + two_over_p))
}

impl<T: Real> BarrierParams<T> {
    /// Defaults for an `m × n` system: `p = 4 − 1/log m`, `α = 0`, Lewis tolerance `1e-12`.
    pub fn new(m: usize, n: usize) -> Self {
        let p = default_exponent(m);
        Self {
            p,
            alpha0: alpha0(p, m, n),
            alpha: T::zero(),
            lewis_tol: T::lit(1e-12),
            lewis_max_iter: 500,
        }
    }

    pub fn for_polytope(poly: &Polytope<T>) -> Self {
        Self::new(poly.m(), poly.n())
    }

    /// Overrides `p` and recomputes `α₀`.
    pub fn with_p(mut self, p: T, m: usize, n: usize) -> Self {
        self.p = p;
        self.alpha0 = alpha0(p, m, n);
        self
    }

    pub fn with_alpha(mut self, alpha: T) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn with_lewis_tol(mut self, tol: T) -> Self {
        self.lewis_tol = tol;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p >= T::lit(2.0) && self.p < T::lit(4.0)) {
            return Err(Error::Parameter(format!("p = {} outside [2, 4)", self.p)));
        }
        if !(self.alpha >= T::zero()) || !self.alpha.is_finite() {
            return Err(Error::Parameter(format!("alpha = {} must be finite and ≥ 0", self.alpha)));
        }
        if !(self.lewis_tol > T::zero()) {
            return Err(Error::Parameter("Lewis tolerance must be positive".into()));
        }
        Ok(())
    }

    fn lewis_options(&self, warm: Option<&DVector<T>>, weights_only: bool) -> LewisOptions<T> {
        LewisOptions {
            tol: self.lewis_tol,
            max_iter: self.lewis_max_iter,
            warm_start: warm.cloned(),
            weights_only,
            ..LewisOptions::default()
        }
    }
}

fn log_barrier<T: Real>(slacks: &DVector<T>) -> T {
    -slacks.iter().fold(T::zero(), |acc, &s| acc + s.ln())
}

fn mn_ratio<T: Real>(poly: &Polytope<T>) -> T {
    T::from_usize_lossy(poly.n()) / T::from_usize_lossy(poly.m())
}

/// `φ(x)`; errors on infeasible points.
pub fn phi<T: Real>(params: &BarrierParams<T>, poly: &Polytope<T>, x: &DVector<T>) -> Result<T> {
    let pt = InteriorPoint::new(poly, x.clone())?;
    let ax = poly.rescaled(&pt)?;
    let lw = lewis::lewis_weights(&ax, params.p, &params.lewis_options(None, true))?;
    Ok(params.alpha0
        * (T::lit(0.5) * lw.logdet_gram + mn_ratio(poly) * log_barrier(pt.slacks())))
}

/// `∇φ(x) = −α₀ A_xᵀ (w + (n/m) 𝟙)`.
pub fn grad_phi<T: Real>(
    params: &BarrierParams<T>,
    poly: &Polytope<T>,
    x: &DVector<T>,
) -> Result<DVector<T>> {
    let pt = InteriorPoint::new(poly, x.clone())?;
    let ax = poly.rescaled(&pt)?;
    let lw = lewis::lewis_weights(&ax, params.p, &params.lewis_options(None, true))?;
    let ratio = mn_ratio(poly);
    Ok(-(ax.matrix().transpose() * lw.w.map(|w| w + ratio)) * params.alpha0)
}

/// `log det g(x)`, for finite-difference cross-checks of the drift.
pub fn logdet_metric<T: Real>(params: &BarrierParams<T>, poly: &Polytope<T>, x: &DVector<T>) -> Result<T> {
    Ok(MetricState::new(params, poly, x.clone())?.logdet_g)
}

/// How [`MetricState::grad_logdet_g`] evaluates `tᵢ = tr(g⁻¹ ∂ᵢ g)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TraceMode {
    /// One adjoint pass through the metric derivative, `O(m³)`.
    #[default]
    Adjoint,
    /// `n` calls to [`MetricState::dmetric`] along the coordinate axes.
    Directional,
}

/// Local geometry at a point: Lewis state, metric, its factorization, `φ`, `∇φ` and `log det g`.
#[derive(Debug, Clone)]
pub struct MetricState<T: Real> {
    pub point: InteriorPoint<T>,
    pub ax: RescaledConstraints<T>,
    pub lewis: LewisState<T>,
    pub alpha0: T,
    /// `n/m`.
    pub ratio: T,
    /// Hessian of `φ_p` (before `α₀`).
    pub g1: DMatrix<T>,
    /// `(n/m) A_xᵀ A_x` (before `α₀`).
    pub g2: DMatrix<T>,
    pub g: DMatrix<T>,
    pub g_chol: Cholesky<T, Dyn>,
    pub grad_phi: DVector<T>,
    pub logdet_g: T,
    pub phi: T,
    /// `G⁻¹ Λ`.
    n_mat: DMatrix<T>,
    /// `C = W + 2Λ + 2q Λ G⁻¹ Λ`, so `g₁ = A_xᵀ C A_x`.
    c_mat: DMatrix<T>,
    /// `A_x g⁻¹ A_xᵀ`.
    h_mat: DMatrix<T>,
}

impl<T: Real> MetricState<T> {
    pub fn new(params: &BarrierParams<T>, poly: &Polytope<T>, x: DVector<T>) -> Result<Self> {
        Self::new_warm(params, poly, x, None)
    }

    /// As [`MetricState::new`], seeding the Lewis iteration with `warm` weights.
    pub fn new_warm(
        params: &BarrierParams<T>,
        poly: &Polytope<T>,
        x: DVector<T>,
        warm: Option<&DVector<T>>,
    ) -> Result<Self> {
        let point = InteriorPoint::new(poly, x)?;
        let ax = poly.rescaled(&point)?;
        let lewis = lewis::lewis_weights(&ax, params.p, &params.lewis_options(warm, false))?;
        let a = ax.matrix();
        let m = a.nrows();
        let q = lewis.q();
        let ratio = mn_ratio(poly);
        let two = T::lit(2.0);

        let lambda = lewis.lambda();
        let n_mat = lewis.g_chol().solve(lambda);
        let mut c_mat = linalg::diag(&lewis.w) + lambda * two + (lambda * &n_mat) * (two * q);
        linalg::symmetrize(&mut c_mat);

        let mut g1 = a.transpose() * &c_mat * a;
        linalg::symmetrize(&mut g1);
        let mut g2 = (a.transpose() * a) * ratio;
        linalg::symmetrize(&mut g2);
        let g = (&g1 + &g2) * params.alpha0;
        let g_chol = linalg::cholesky_jitter(&g, "metric g")?;
        let logdet_g = linalg::logdet_from_cholesky(&g_chol);

        let phi = params.alpha0
            * (T::lit(0.5) * lewis.logdet_gram + ratio * log_barrier(point.slacks()));
        let grad_phi = -(a.transpose() * lewis.w.map(|w| w + ratio)) * params.alpha0;

        let whitened = g_chol
            .l_dirty()
            .solve_lower_triangular(&a.transpose())
            .expect("cholesky factor is nonsingular");
        let h_mat = whitened.transpose() * whitened;
        debug_assert_eq!(h_mat.nrows(), m);

        Ok(Self {
            point,
            ax,
            lewis,
            alpha0: params.alpha0,
            ratio,
            g1,
            g2,
            g,
            g_chol,
            grad_phi,
            logdet_g,
            phi,
            n_mat,
            c_mat,
            h_mat,
        })
    }

    pub fn x(&self) -> &DVector<T> {
        self.point.x()
    }

    pub fn n(&self) -> usize {
        self.ax.n()
    }

    pub fn m(&self) -> usize {
        self.ax.m()
    }

    /// `g⁻¹ v`.
    pub fn g_inv(&self, v: &DVector<T>) -> DVector<T> {
        self.g_chol.solve(v)
    }

    /// `√(vᵀ g v)`.
    pub fn g_norm(&self, v: &DVector<T>) -> T {
        v.dot(&(&self.g * v)).max(T::zero()).sqrt()
    }

    /// `√(vᵀ g⁻¹ v)`.
    pub fn g_inv_norm(&self, v: &DVector<T>) -> T {
        v.dot(&self.g_inv(v)).max(T::zero()).sqrt()
    }

    /// `aᵢᵀ g⁻¹ aᵢ` for the rows of `A_x`.
    pub fn row_norms_sq(&self) -> DVector<T> {
        self.h_mat.diagonal()
    }

    pub fn reparam(&self, v: &DVector<T>) -> Result<ReparamVector<T>> {
        self.lewis.reparam(&self.ax, v)
    }

    /// Local infinity norm `‖A_x v‖_∞`.
    pub fn local_inf_norm(&self, v: &DVector<T>) -> T {
        self.ax.local_inf_norm(v)
    }

    /// Directional derivative of `C` (the `m × m` core of `g₁`) along `v`.
    fn dcore(&self, rep: &ReparamVector<T>) -> DMatrix<T> {
        let two = T::lit(2.0);
        let q = self.lewis.q();
        let p = self.lewis.proj();
        let lambda = self.lewis.lambda();
        let r = &rep.r_v;

        let dw = self.lewis.weight_derivative(rep);
        let dw_mat = linalg::diag(&dw);
        // DP = −RP − PR + 2PRP
        let rp = linalg::scale_rows(r, p);
        let prp = p * linalg::scale_rows(r, p);
        let dp = &prp * two - &rp - rp.transpose();
        let dp2 = p.component_mul(&dp) * two;
        let dlambda = &dw_mat - &dp2;
        let dg = &dw_mat - &dlambda * q;
        // D(G⁻¹Λ) = G⁻¹ (DΛ − DG · G⁻¹Λ)
        let dn = self.lewis.g_chol().solve(&(&dlambda - &dg * &self.n_mat));
        let d_lam_n = &dlambda * &self.n_mat + lambda * dn;
        let mut dc = dw_mat + &dlambda * two + d_lam_n * (two * q);
        linalg::symmetrize(&mut dc);
        dc
    }

    /// Directional derivatives `(Dg₁(v), Dg₂(v))` before the `α₀` scaling.
    pub fn dmetric_parts(&self, v: &DVector<T>) -> Result<(DMatrix<T>, DMatrix<T>)> {
        let rep = self.reparam(v)?;
        let a = self.ax.matrix();
        let s = &rep.s_v;
        let two = T::lit(2.0);
        let sa = linalg::scale_rows(s, a);
        let ct_sa = a.transpose() * &self.c_mat * &sa;
        let mut dg1 = a.transpose() * self.dcore(&rep) * a - &ct_sa - ct_sa.transpose();
        linalg::symmetrize(&mut dg1);
        let mut dg2 = (a.transpose() * sa) * (-two * self.ratio);
        linalg::symmetrize(&mut dg2);
        Ok((dg1, dg2))
    }

    /// Analytic directional derivative `Dg(v)` of the metric.
    pub fn dmetric(&self, v: &DVector<T>) -> Result<DMatrix<T>> {
        let (dg1, dg2) = self.dmetric_parts(v)?;
        Ok((dg1 + dg2) * self.alpha0)
    }

    /// `∇ log det g`, entry `i` equal to `tr(g⁻¹ ∂ᵢ g)`.
    pub fn grad_logdet_g(&self, mode: TraceMode) -> Result<DVector<T>> {
        match mode {
            TraceMode::Adjoint => Ok(self.trace_vector_adjoint()),
            TraceMode::Directional => {
                let n = self.n();
                let mut out = DVector::zeros(n);
                for i in 0..n {
                    let e = DVector::from_fn(n, |j, _| if i == j { T::one() } else { T::zero() });
                    out[i] = self.trace_g_inv(&self.dmetric(&e)?);
                }
                Ok(out)
            }
        }
    }

    /// `tr(g⁻¹ B)`.
    pub fn trace_g_inv(&self, b: &DMatrix<T>) -> T {
        self.g_chol.solve(b).trace()
    }

    /// Adjoint evaluation of the linear functional `v ↦ tr(g⁻¹ Dg(v))`.
    ///
    /// Writing `g = α₀ A_xᵀ K A_x` with `K = C + (n/m) I` and `H = A_x g⁻¹ A_xᵀ`,
    /// `tr(g⁻¹ Dg(v)) = α₀ [−2 diag(HK)·s_v + tr(H DC(v))]`, and every term of
    /// `tr(H DC(v))` pulls back to a fixed `m`-vector dotted with `r_v = G⁻¹ W s_v`.
    fn trace_vector_adjoint(&self) -> DVector<T> {
        let two = T::lit(2.0);
        let four = T::lit(4.0);
        let q = self.lewis.q();
        let m = self.m();
        let h = &self.h_mat;
        let nm = &self.n_mat;
        let p = self.lewis.proj();
        let lambda = self.lewis.lambda();

        let mut k = self.c_mat.clone();
        for i in 0..m {
            k[(i, i)] += self.ratio;
        }
        let hk_diag = DVector::from_fn(m, |i, _| h.row(i).dot(&k.column(i).transpose()));
        let a1 = hk_diag * (-two);

        let nh = nm * h;
        let nhnt = &nh * nm.transpose();
        let z_w = h - &nhnt * (two * q);
        let z_l = h * two + (&nh + nh.transpose() + &nhnt * q) * (two * q);
        let d = z_w.diagonal() + z_l.diagonal();
        let y = z_l.component_mul(p);
        let yp_rows = y.component_mul(p) * DVector::from_element(m, T::one());
        let pyp = p * &y * p;
        let c = (pyp.diagonal() - yp_rows) * four;
        let e = -(lambda * d) * two - c;
        let pulled = self.lewis.g_chol().solve(&e).component_mul(&self.lewis.w);
        (self.ax.matrix().transpose() * (a1 + pulled)) * self.alpha0
    }

    /// Vector with entries `uᵀ (∂ᵢ g) u`. Uses the symmetry of the third
    /// derivative of `φ`: `Dg(eᵢ)[u, u] = (Dg(u) u)ᵢ`.
    pub fn quad_form_gradient(&self, u: &DVector<T>) -> Result<DVector<T>> {
        Ok(self.dmetric(u)? * u)
    }

    /// First form of `g₁`: `A_xᵀ(W + 2Λ)A_x + 2(1−2/p) A_xᵀ Λ G⁻¹ Λ A_x`.
    pub fn g1_first_form(&self) -> DMatrix<T> {
        let two = T::lit(2.0);
        let a = self.ax.matrix();
        let lambda = self.lewis.lambda();
        let inner = linalg::diag(&self.lewis.w) + lambda * two;
        let lgl = lambda * self.lewis.g_chol().solve(lambda);
        a.transpose() * inner * a + a.transpose() * lgl * a * (two * self.lewis.q())
    }

    /// Second form of `g₁`, written with `G` and `P⁽²⁾` instead of `Λ G⁻¹ Λ`:
    /// `A_xᵀ(W + 2Λ)A_x + (p²/2)q A_xᵀ G A_x − p² q A_xᵀ P⁽²⁾ A_x + (p²/2)q A_xᵀ P⁽²⁾ G⁻¹ P⁽²⁾ A_x`.
    pub fn g1_second_form(&self) -> DMatrix<T> {
        let two = T::lit(2.0);
        let a = self.ax.matrix();
        let lambda = self.lewis.lambda();
        let p2 = self.lewis.proj_sq();
        let p = self.lewis.p;
        let q = self.lewis.q();
        let half_p2q = p * p * q / two;
        let inner = linalg::diag(&self.lewis.w) + lambda * two + self.lewis.g() * half_p2q
            - p2 * (two * half_p2q)
            + p2 * self.lewis.g_chol().solve(p2) * half_p2q;
        a.transpose() * inner * a
    }
}

/// `argmin φ` by damped Newton steps `−g⁻¹∇φ` with Armijo backtracking, from an
/// interior `start`. Stops when the Newton decrement `‖∇φ‖_{g⁻¹}` is at most `tol`.
pub fn minimize_phi<T: Real>(
    params: &BarrierParams<T>,
    poly: &Polytope<T>,
    start: DVector<T>,
    tol: T,
    max_iter: usize,
) -> Result<MetricState<T>> {
    let mut st = MetricState::new(params, poly, start)?;
    let half = T::lit(0.5);
    for _ in 0..max_iter {
        let step = -st.g_inv(&st.grad_phi);
        let decrement = st.g_inv_norm(&st.grad_phi);
        if decrement <= tol {
            return Ok(st);
        }
        let slope = st.grad_phi.dot(&step);
        let mut t = T::one();
        let next = loop {
            let x = st.x() + &step * t;
            if poly.contains(&x) {
                if let Ok(cand) = MetricState::new_warm(params, poly, x, Some(&st.lewis.w)) {
                    if cand.phi <= st.phi + T::lit(1e-4) * t * slope || t < T::lit(1e-10) {
                        break cand;
                    }
                }
            }
            t *= half;
            if t < T::lit(1e-12) {
                return Err(Error::Convergence {
                    context: "line search in barrier minimization".into(),
                    iterations: max_iter,
                    residual: decrement.as_f64(),
                });
            }
        };
        st = next;
    }
    let residual = st.g_inv_norm(&st.grad_phi);
    if residual <= tol * T::lit(1e3) {
        Ok(st)
    } else {
        Err(Error::Convergence {
            context: "barrier minimization".into(),
            iterations: max_iter,
            residual: residual.as_f64(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params_for(poly: &Polytope<f64>) -> BarrierParams<f64> {
        BarrierParams::for_polytope(poly)
    }

    #[test]
    fn alpha0_formula() {
        let p = 3.5f64;
        let a0 = alpha0(p, 12, 3);
        let expected = 4f64.powf((2.0 / 3.5) / (1.0 + 2.0 / 3.5));
        assert!((a0 - expected).abs() < 1e-14);
        assert!(alpha0(3.0f64, 5, 5) == 1.0);
        assert!(alpha0(3.9f64, 60, 8) >= 1.0);
    }

    #[test]
    fn default_exponent_is_clamped() {
        assert_eq!(default_exponent::<f64>(1), 2.0);
        let p: f64 = default_exponent(16);
        assert!((p - (4.0 - 1.0 / 16f64.ln())).abs() < 1e-15);
        assert!(default_exponent::<f64>(1_000_000_000) <= 3.999);
    }

    #[test]
    fn cube_center_closed_form() {
        for n in [2usize, 3, 5] {
            let poly = Polytope::<f64>::cube(n);
            let params = params_for(&poly);
            let q = 1.0 - 2.0 / params.p;
            let val = phi(&params, &poly, &DVector::zeros(n)).unwrap();
            // A_xᵀ W^q A_x = 2 (1/2)^q I at the center and every slack is one.
            let expected = params.alpha0 * 0.5 * n as f64 * (2.0 * 0.5f64.powf(q)).ln();
            assert!((val - expected).abs() < 1e-12, "{val} vs {expected}");
        }
    }

    #[test]
    fn phi_blows_up_towards_a_facet() {
        let poly = Polytope::<f64>::simplex(3);
        let params = params_for(&poly);
        let dir = DVector::from_vec(vec![-1.0, 0.0, 0.0]);
        let start = DVector::from_vec(vec![0.25, 0.25, 0.25]);
        let vals: Vec<f64> = (0..10)
            .map(|k| {
                let t = 0.25 * (1.0 - 10f64.powi(-(k as i32) - 1));
                phi(&params, &poly, &(&start + &dir * t)).unwrap()
            })
            .collect();
        assert!(vals.windows(2).all(|w| w[1] > w[0]), "{vals:?}");
        assert!(phi(&params, &poly, &(&start + &dir * 0.25)).is_err());
    }

    #[test]
    fn translation_invariance() {
        let poly = Polytope::<f64>::simplex(3);
        let shift = DVector::from_vec(vec![3.0, -1.0, 0.5]);
        let moved = poly.translated(&shift);
        let params = params_for(&poly);
        let x = DVector::from_vec(vec![0.1, 0.3, 0.2]);
        let a = phi(&params, &poly, &x).unwrap();
        let b = phi(&params, &moved, &(&x + &shift)).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn cube_center_has_zero_gradient_and_trace() {
        let poly = Polytope::<f64>::cube(3);
        let params = params_for(&poly);
        let st = MetricState::new(&params, &poly, DVector::zeros(3)).unwrap();
        assert!(st.grad_phi.amax() < 1e-14);
        assert!(st.grad_logdet_g(TraceMode::Adjoint).unwrap().amax() < 1e-12);
        assert!(st.dmetric(&DVector::zeros(3)).unwrap().amax() == 0.0);
    }

    #[test]
    fn both_metric_forms_agree() {
        let poly = Polytope::<f64>::simplex(3);
        let params = params_for(&poly);
        let st = MetricState::new(&params, &poly, DVector::from_vec(vec![0.05, 0.6, 0.1])).unwrap();
        let a = st.g1_first_form();
        let b = st.g1_second_form();
        assert!(linalg::frobenius(&(&a - &b)) <= 1e-10 * linalg::frobenius(&a));
        assert!(linalg::frobenius(&(&a - &st.g1)) <= 1e-12 * linalg::frobenius(&a));
    }

    #[test]
    fn trace_modes_agree() {
        let poly = Polytope::<f64>::cross_polytope(3);
        let params = params_for(&poly);
        let st = MetricState::new(&params, &poly, DVector::from_vec(vec![0.2, -0.1, 0.3])).unwrap();
        let adj = st.grad_logdet_g(TraceMode::Adjoint).unwrap();
        let dir = st.grad_logdet_g(TraceMode::Directional).unwrap();
        assert!((&adj - &dir).amax() <= 1e-10 * (1.0 + dir.amax()), "{adj} vs {dir}");
    }

    #[test]
    fn dmetric_is_linear() {
        let poly = Polytope::<f64>::simplex(3);
        let params = params_for(&poly);
        let st = MetricState::new(&params, &poly, DVector::from_vec(vec![0.2, 0.1, 0.3])).unwrap();
        let u = DVector::from_vec(vec![0.3, -0.2, 0.7]);
        let v = DVector::from_vec(vec![-0.5, 0.4, 0.1]);
        let sum = st.dmetric(&(&u + &v)).unwrap();
        let parts = st.dmetric(&u).unwrap() + st.dmetric(&v).unwrap();
        assert!(linalg::frobenius(&(&sum - &parts)) <= 1e-10 * linalg::frobenius(&sum));
    }

    #[test]
    fn g_norm_basics() {
        let poly = Polytope::<f64>::cube(2);
        let params = params_for(&poly);
        let st = MetricState::new(&params, &poly, DVector::from_vec(vec![0.3, -0.4])).unwrap();
        let v = DVector::from_vec(vec![0.7, 0.2]);
        assert_eq!(st.g_norm(&DVector::zeros(2)), 0.0);
        assert!((st.g_norm(&(&v * 2.0)) - 2.0 * st.g_norm(&v)).abs() < 1e-14);
        assert!(st.local_inf_norm(&v) <= st.g_norm(&v) * (1.0 + 1e-8));
    }

    #[test]
    fn infeasible_point_errors() {
        let poly = Polytope::<f64>::cube(2);
        let params = params_for(&poly);
        assert!(matches!(
            phi(&params, &poly, &DVector::from_vec(vec![1.0, 0.0])),
            Err(Error::Infeasible { .. })
        ));
        assert!(MetricState::new(&params, &poly, DVector::from_vec(vec![2.0, 0.0])).is_err());
    }

    use crate::fd;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Random polytopes and points on rays from the origin, up to 90% of the way out.
    fn random_cases(seed: u64, count: usize) -> Vec<(Polytope<f64>, DVector<f64>)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|k| {
                let n = 2 + k % 3;
                let m = n + 2 + 3 * (k % 4);
                let poly = Polytope::random(n, m, &mut rng).unwrap();
                let x = poly.random_point_on_ray(&DVector::zeros(n), 0.9, &mut rng);
                (poly, x)
            })
            .collect()
    }

    #[test]
    fn gradient_matches_central_differences() {
        for (poly, x) in random_cases(11, 8) {
            let params = params_for(&poly);
            let st = MetricState::new(&params, &poly, x.clone()).unwrap();
            let h = fd::default_step(&x, 0.1);
            let est = fd::gradient(|y| phi(&params, &poly, y), &x, h)
                .unwrap()
                .checked(1e-4, "∇φ")
                .unwrap();
            let err = fd::rel_err_vec(&st.grad_phi, &est.extrapolated, 1e-3);
            assert!(err <= 1e-6, "{err:e}");
            let free = grad_phi(&params, &poly, &x).unwrap();
            assert!(fd::rel_err_vec(&free, &st.grad_phi, 1e-12) < 1e-12);
        }
    }

    #[test]
    fn metric_matches_finite_difference_hessian() {
        for (poly, x) in random_cases(12, 8) {
            let params = params_for(&poly);
            let st = MetricState::new(&params, &poly, x.clone()).unwrap();
            let h = fd::default_step(&x, 0.1);
            let est = fd::jacobian(|y| grad_phi(&params, &poly, y), &x, h)
                .unwrap()
                .checked(1e-4, "∇²φ")
                .unwrap();
            let err = fd::rel_err_mat(&st.g, &est.extrapolated, 1e-12);
            assert!(err <= 1e-4, "{err:e}");
        }
    }

    #[test]
    fn dmetric_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for (poly, x) in random_cases(13, 8) {
            let params = params_for(&poly);
            let st = MetricState::new(&params, &poly, x.clone()).unwrap();
            let v = DVector::from_fn(x.len(), |_, _| rand::Rng::random::<f64>(&mut rng) - 0.5);
            let h = fd::default_step(&x, 0.1);
            let est = fd::directional_mat(|y| Ok(MetricState::new(&params, &poly, y.clone())?.g), &x, &v, h)
                .unwrap()
                .checked(1e-3, "Dg")
                .unwrap();
            let err = fd::rel_err_mat(&st.dmetric(&v).unwrap(), &est.extrapolated, 1e-12);
            assert!(err <= 1e-5, "{err:e}");
        }
    }

    #[test]
    fn logdet_gradient_matches_finite_differences() {
        for (poly, x) in random_cases(14, 8) {
            let params = params_for(&poly);
            let st = MetricState::new(&params, &poly, x.clone()).unwrap();
            let h = fd::default_step(&x, 0.1);
            let est = fd::gradient(|y| logdet_metric(&params, &poly, y), &x, h)
                .unwrap()
                .checked(1e-3, "∇ log det g")
                .unwrap();
            for mode in [TraceMode::Adjoint, TraceMode::Directional] {
                let t = st.grad_logdet_g(mode).unwrap();
                let err = fd::rel_err_vec(&t, &est.extrapolated, 1e-8);
                assert!(err <= 1e-5, "{mode:?}: {err:e}");
            }
            let v = DVector::from_fn(x.len(), |i, _| 0.3 - 0.2 * i as f64);
            let lhs = st.grad_logdet_g(TraceMode::Adjoint).unwrap().dot(&v);
            let rhs = st.trace_g_inv(&st.dmetric(&v).unwrap());
            assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + rhs.abs()));
        }
    }

    #[test]
    fn lewis_metric_is_sandwiched() {
        for (poly, x) in random_cases(15, 10) {
            let params = params_for(&poly);
            let st = MetricState::new(&params, &poly, x).unwrap();
            let base = linalg::weighted_gram(st.ax.matrix(), &st.lewis.w);
            let chol = Cholesky::new(base).unwrap();
            let (lo, hi) = linalg::generalized_eig_extremes(&st.g1, &chol);
            assert!(lo >= 1.0 - 1e-8, "{lo}");
            assert!(hi <= (1.0 + params.p) * (1.0 + 1e-8), "{hi}");
        }
    }

    #[test]
    fn row_norms_barrier_parameter_and_norm_domination() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for (poly, x) in random_cases(16, 10) {
            let params = params_for(&poly);
            let st = MetricState::new(&params, &poly, x).unwrap();
            assert!(st.row_norms_sq().max() <= 1.0 + 1e-8);
            // Each of α₀φ_p and α₀(n/m)φ_ℓ has parameter at most α₀n, and
            // parameters add under summation of barriers.
            let nu = st.g_inv_norm(&st.grad_phi).powi(2);
            assert!(nu <= 2.0 * params.alpha0 * st.n() as f64 * (1.0 + 1e-6), "{nu}");
            for _ in 0..20 {
                let v = DVector::from_fn(st.n(), |_, _| rand::Rng::random::<f64>(&mut rng) - 0.5);
                assert!(st.local_inf_norm(&v) <= st.g_norm(&v) * (1.0 + 1e-8));
            }
        }
    }

    fn interval() -> Polytope<f64> {
        Polytope::from_rows(&[vec![1.0], vec![-1.0]], &[-1.0, -1.0]).unwrap()
    }

    #[test]
    fn interval_matches_closed_form() {
        // On [−1, 1] the Lewis weights are wᵢ = |aᵢ|ᵖ / Σ|aⱼ|ᵖ; reference values from
        // 40-digit evaluation of that closed form with p = 4 − 1/log 2.
        let poly = interval();
        let params = params_for(&poly);
        let st = MetricState::new(&params, &poly, DVector::from_vec(vec![0.6])).unwrap();
        assert!((st.phi - 1.55961888219777).abs() < 1e-12);
        assert!((st.g[(0, 0)] - 13.6730656970965).abs() < 1e-11);
        let st0 = MetricState::new(&params, &poly, DVector::zeros(1)).unwrap();
        assert!((st0.phi - 0.367410631239248).abs() < 1e-13);
        assert!((st0.g[(0, 0)] - 6.17755853936887).abs() < 1e-12);
    }

    #[test]
    fn barrier_parameter_on_the_interval() {
        // Closed-form values of ν/α₀ at x = 0.3, 0.9, 0.9999. The last exceeds n = 1:
        // near a facet ν → α₀(1 + n/m).
        let poly = interval();
        let params = params_for(&poly);
        for (x, expected) in [(0.3, 0.394341185247), (0.9, 1.44443883181), (0.9999, 1.49994999663)] {
            let st = MetricState::new(&params, &poly, DVector::from_vec(vec![x])).unwrap();
            let nu = st.g_inv_norm(&st.grad_phi).powi(2) / params.alpha0;
            assert!((nu - expected).abs() < 1e-8, "{x}: {nu}");
        }
    }

    #[test]
    fn minimizer_of_phi() {
        let poly = Polytope::<f64>::cube(3);
        let params = params_for(&poly);
        let st = minimize_phi(&params, &poly, DVector::from_vec(vec![0.5, -0.3, 0.2]), 1e-10, 100).unwrap();
        assert!(st.x().amax() < 1e-9);
        let simplex = Polytope::<f64>::simplex(2);
        let params = params_for(&simplex);
        let st = minimize_phi(&params, &simplex, DVector::from_vec(vec![0.1, 0.1]), 1e-10, 100).unwrap();
        // Symmetric under permuting the three facets: the centroid.
        assert!((st.x() - DVector::from_element(2, 1.0 / 3.0)).amax() < 1e-9);
    }

    #[test]
    fn barrier_parameter_near_a_facet() {
        let poly = Polytope::<f64>::simplex(3);
        let params = params_for(&poly);
        let st = MetricState::new(&params, &poly, DVector::from_vec(vec![1e-4, 0.3, 0.3])).unwrap();
        let nu = st.g_inv_norm(&st.grad_phi).powi(2);
        assert!(nu <= params.alpha0 * 3.0 * (1.0 + 1e-6), "{nu} vs {}", params.alpha0 * 3.0);
    }
}
