//! Hamiltonian dynamics on the Hessian manifold of the hybrid barrier.
//!
//! `H(x, v) = αφ(x) + ½ vᵀ g(x)⁻¹ v + ½ log det g(x)`, where `v` is the momentum.
//! The constant `½ n log 2π` is dropped. Trajectories are integrated with the
//! implicit midpoint rule, which is symmetric and time-reversible.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::barrier::{BarrierParams, MetricState, TraceMode};
use crate::error::{Error, Result};
use crate::polytope::Polytope;
use crate::scalar::Real;

/// A point of phase space: position `x` (strictly interior) and momentum `v`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseState<T: Real> {
    x: DVector<T>,
    v: DVector<T>,
}

impl<T: Real> PhaseState<T> {
    pub fn new(poly: &Polytope<T>, x: DVector<T>, v: DVector<T>) -> Result<Self> {
        if x.len() != poly.n() || v.len() != poly.n() {
            return Err(Error::Dimension(format!(
                "phase state needs length {} (got x: {}, v: {})",
                poly.n(),
                x.len(),
                v.len()
            )));
        }
        poly.interior_point(x.clone())?;
        Ok(Self { x, v })
    }

    pub fn x(&self) -> &DVector<T> {
        &self.x
    }

    pub fn v(&self) -> &DVector<T> {
        &self.v
    }

    /// The same position with the momentum reversed.
    pub fn flipped(&self) -> Self {
        Self {
            x: self.x.clone(),
            v: -&self.v,
        }
    }
}

/// Why a trajectory was abandoned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RejectReason {
    InfeasibleIterate,
    FpNonconvergence,
    /// A factorization or Lewis solve failed at an interior iterate.
    Numerical,
}

impl std::fmt::Display for RejectReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RejectReason::InfeasibleIterate => "infeasible-iterate",
            RejectReason::FpNonconvergence => "fp-nonconvergence",
            RejectReason::Numerical => "numerical",
        })
    }
}

#[derive(Debug, Clone)]
pub struct TrajectoryResult<T: Real> {
    pub end: PhaseState<T>,
    pub energy_start: T,
    pub energy_end: T,
    pub steps_taken: usize,
    pub fixed_point_iters_total: usize,
    pub rejected: bool,
    pub reason: Option<RejectReason>,
    /// Geometry at `end.x`, when the trajectory was accepted.
    pub end_state: Option<MetricState<T>>,
}

impl<T: Real> TrajectoryResult<T> {
    pub fn energy_error(&self) -> T {
        self.energy_end - self.energy_start
    }
}

/// Inner-solve settings for [`integrate`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorOptions<T: Real> {
    /// Relative tolerance on the fixed-point increment, measured as
    /// `‖Δx‖_g + ‖Δv‖_{g⁻¹}` over `1 + ‖v‖_{g⁻¹}`.
    pub tol_fp: T,
    pub max_fp_iter: usize,
    pub trace_mode: TraceMode,
}

impl<T: Real> Default for IntegratorOptions<T> {
    fn default() -> Self {
        Self {
            tol_fp: T::lit(1e-12),
            max_fp_iter: 50,
            trace_mode: TraceMode::Adjoint,
        }
    }
}

/// `αφ(x) + ½ vᵀ g⁻¹ v + ½ log det g` from an already built state.
pub fn hamiltonian_at<T: Real>(params: &BarrierParams<T>, state: &MetricState<T>, v: &DVector<T>) -> T {
    let half = T::lit(0.5);
    params.alpha * state.phi + half * v.dot(&state.g_inv(v)) + half * state.logdet_g
}

pub fn hamiltonian<T: Real>(params: &BarrierParams<T>, poly: &Polytope<T>, ps: &PhaseState<T>) -> Result<T> {
    let state = MetricState::new(params, poly, ps.x.clone())?;
    Ok(hamiltonian_at(params, &state, &ps.v))
}

/// Bias `μ = −g⁻¹(α∇φ) − ½ g⁻¹ ∇ log det g`.
pub fn drift<T: Real>(params: &BarrierParams<T>, state: &MetricState<T>, mode: TraceMode) -> Result<DVector<T>> {
    let t = state.grad_logdet_g(mode)?;
    Ok(drift_with_trace(params, state, &t))
}

/// [`drift`] with a caller-supplied `∇ log det g`.
pub fn drift_with_trace<T: Real>(params: &BarrierParams<T>, state: &MetricState<T>, t: &DVector<T>) -> DVector<T> {
    let rhs = &state.grad_phi * params.alpha + t * T::lit(0.5);
    -state.g_inv(&rhs)
}

/// Drift with `∇ log det g` from central differences instead of the analytic trace.
pub fn drift_finite_difference(
    params: &BarrierParams<f64>,
    poly: &Polytope<f64>,
    state: &MetricState<f64>,
) -> Result<DVector<f64>> {
    let x = state.x();
    let h = crate::fd::default_step(x, 0.1);
    let t = crate::fd::gradient(|y| crate::barrier::logdet_metric(params, poly, y), x, h)?;
    Ok(drift_with_trace(params, state, &t.extrapolated))
}

/// Right-hand side of Hamilton's equations:
/// `dx = g⁻¹v`, `dv = −α∇φ − ½∇ log det g + ½ (dxᵀ ∂ᵢg dx)ᵢ`.
pub fn ode_field_at<T: Real>(
    params: &BarrierParams<T>,
    state: &MetricState<T>,
    v: &DVector<T>,
    mode: TraceMode,
) -> Result<(DVector<T>, DVector<T>)> {
    let dx = state.g_inv(v);
    let half = T::lit(0.5);
    let quad = state.quad_form_gradient(&dx)?;
    let t = state.grad_logdet_g(mode)?;
    let dv = quad * half - t * half - &state.grad_phi * params.alpha;
    Ok((dx, dv))
}

pub fn ode_field<T: Real>(
    params: &BarrierParams<T>,
    poly: &Polytope<T>,
    ps: &PhaseState<T>,
) -> Result<(DVector<T>, DVector<T>)> {
    let state = MetricState::new(params, poly, ps.x.clone())?;
    ode_field_at(params, &state, &ps.v, TraceMode::Adjoint)
}

fn classify(err: &Error) -> RejectReason {
    match err {
        Error::Infeasible { .. } => RejectReason::InfeasibleIterate,
        _ => RejectReason::Numerical,
    }
}

/// Integrates for `total_time` with `n_steps` implicit midpoint steps, starting from
/// a state whose geometry is already known.
///
/// Each step solves `z_mid = z₀ + (h/2) F(z_mid)` by fixed-point iteration (damping 1,
/// dropping to ½ once the increment grows) and sets `z₁ = 2 z_mid − z₀`.
pub fn integrate_from<T: Real>(
    params: &BarrierParams<T>,
    poly: &Polytope<T>,
    start: &MetricState<T>,
    v0: &DVector<T>,
    total_time: T,
    n_steps: usize,
    opts: &IntegratorOptions<T>,
) -> TrajectoryResult<T> {
    let energy_start = hamiltonian_at(params, start, v0);
    let start_ps = PhaseState {
        x: start.x().clone(),
        v: v0.clone(),
    };
    let mut result = TrajectoryResult {
        end: start_ps,
        energy_start,
        energy_end: energy_start,
        steps_taken: 0,
        fixed_point_iters_total: 0,
        rejected: false,
        reason: None,
        end_state: None,
    };
    if n_steps == 0 || total_time == T::zero() {
        result.end_state = Some(start.clone());
        return result;
    }

    let half_h = total_time / T::from_usize_lossy(n_steps) * T::lit(0.5);
    let mut x0 = start.x().clone();
    let mut p0 = v0.clone();
    let mut weights = start.lewis.w.clone();
    // Predictor increment (h/2)·F, initialized from the field at the start point.
    let mut pred = match ode_field_at(params, start, v0, opts.trace_mode) {
        Ok((dx, dv)) => (dx * half_h, dv * half_h),
        Err(e) => return reject(result, classify(&e)),
    };

    for _ in 0..n_steps {
        let mut xm = &x0 + &pred.0;
        let mut pm = &p0 + &pred.1;
        let mut damping = T::one();
        let mut last_inc = T::max_value().unwrap_or(T::lit(f64::MAX));
        let mut converged = false;
        for _ in 0..opts.max_fp_iter {
            result.fixed_point_iters_total += 1;
            let state = match MetricState::new_warm(params, poly, xm.clone(), Some(&weights)) {
                Ok(s) => s,
                Err(e) => return reject(result, classify(&e)),
            };
            weights = state.lewis.w.clone();
            let (dx, dv) = match ode_field_at(params, &state, &pm, opts.trace_mode) {
                Ok(f) => f,
                Err(e) => return reject(result, classify(&e)),
            };
            let target_x = &x0 + &dx * half_h;
            let target_p = &p0 + &dv * half_h;
            let step_x = (&target_x - &xm) * damping;
            let step_p = (&target_p - &pm) * damping;
            let inc = (state.g_norm(&step_x) + state.g_inv_norm(&step_p)) / (T::one() + state.g_inv_norm(&pm));
            if !inc.is_finite() {
                return reject(result, RejectReason::Numerical);
            }
            if inc > last_inc && damping == T::one() {
                damping = T::lit(0.5);
            }
            last_inc = inc;
            xm += step_x;
            pm += step_p;
            pred = (&xm - &x0, &pm - &p0);
            if inc <= opts.tol_fp {
                converged = true;
                break;
            }
        }
        if !converged {
            return reject(result, RejectReason::FpNonconvergence);
        }
        let x1 = &xm * T::lit(2.0) - &x0;
        if !poly.contains(&x1) {
            return reject(result, RejectReason::InfeasibleIterate);
        }
        p0 = &pm * T::lit(2.0) - &p0;
        x0 = x1;
        result.steps_taken += 1;
    }

    let end_state = match MetricState::new_warm(params, poly, x0.clone(), Some(&weights)) {
        Ok(s) => s,
        Err(e) => return reject(result, classify(&e)),
    };
    result.energy_end = hamiltonian_at(params, &end_state, &p0);
    result.end = PhaseState { x: x0, v: p0 };
    result.end_state = Some(end_state);
    result
}

fn reject<T: Real>(mut result: TrajectoryResult<T>, reason: RejectReason) -> TrajectoryResult<T> {
    result.rejected = true;
    result.reason = Some(reason);
    result.energy_end = T::max_value().unwrap_or(T::lit(f64::MAX));
    result.end_state = None;
    result
}

/// [`integrate_from`] starting from a bare phase state.
pub fn integrate<T: Real>(
    params: &BarrierParams<T>,
    poly: &Polytope<T>,
    ps: &PhaseState<T>,
    total_time: T,
    n_steps: usize,
    opts: &IntegratorOptions<T>,
) -> Result<TrajectoryResult<T>> {
    let start = MetricState::new(params, poly, ps.x.clone())?;
    Ok(integrate_from(params, poly, &start, &ps.v, total_time, n_steps, opts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fd;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(poly: &Polytope<f64>, alpha: f64) -> BarrierParams<f64> {
        BarrierParams::for_polytope(poly).with_alpha(alpha)
    }

    #[test]
    fn hamiltonian_at_the_cube_center() {
        let poly = Polytope::<f64>::cube(3);
        let params = setup(&poly, 0.7);
        let ps = PhaseState::new(&poly, DVector::zeros(3), DVector::zeros(3)).unwrap();
        let st = MetricState::new(&params, &poly, DVector::zeros(3)).unwrap();
        let h = hamiltonian(&params, &poly, &ps).unwrap();
        assert!((h - (0.7 * st.phi + 0.5 * st.logdet_g)).abs() < 1e-14);
    }

    #[test]
    fn hamiltonian_is_even_in_momentum() {
        let poly = Polytope::<f64>::simplex(3);
        let params = setup(&poly, 1.0);
        let ps = PhaseState::new(
            &poly,
            DVector::from_vec(vec![0.1, 0.2, 0.3]),
            DVector::from_vec(vec![1.5, -0.3, 0.8]),
        )
        .unwrap();
        let a = hamiltonian(&params, &poly, &ps).unwrap();
        let b = hamiltonian(&params, &poly, &ps.flipped()).unwrap();
        assert!((a - b).abs() <= 1e-14 * a.abs().max(1.0));
    }

    #[test]
    fn hamiltonian_matches_recomputation_from_raw_data() {
        let poly = Polytope::<f64>::simplex(2);
        let params = setup(&poly, 0.5);
        let x = DVector::from_vec(vec![0.2, 0.5]);
        let v = DVector::from_vec(vec![0.4, -1.1]);
        let ps = PhaseState::new(&poly, x.clone(), v.clone()).unwrap();
        let st = MetricState::new(&params, &poly, x.clone()).unwrap();
        // Rebuild g from the first metric form and the raw slacks.
        let s = poly.a() * &x - poly.b();
        let ax = crate::linalg::scale_rows(&s.map(|v| 1.0 / v), poly.a());
        let g = (st.g1_first_form() + ax.transpose() * &ax * (2.0 / 3.0)) * params.alpha0;
        let chol = nalgebra::Cholesky::new(g.clone()).unwrap();
        let logdet = chol.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum::<f64>();
        let phi = crate::barrier::phi(&params, &poly, &x).unwrap();
        let expected = 0.5 * phi + 0.5 * v.dot(&chol.solve(&v)) + 0.5 * logdet;
        assert!((hamiltonian(&params, &poly, &ps).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn drift_vanishes_at_the_cube_center() {
        let poly = Polytope::<f64>::cube(3);
        let params = setup(&poly, 0.0);
        let st = MetricState::new(&params, &poly, DVector::zeros(3)).unwrap();
        assert!(drift(&params, &st, TraceMode::Adjoint).unwrap().amax() < 1e-12);
    }

    #[test]
    fn analytic_and_finite_difference_drifts_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for k in 0..6 {
            let n = 2 + k % 3;
            let poly = Polytope::random(n, n + 4 + k, &mut rng).unwrap();
            let params = setup(&poly, 0.3 * k as f64);
            let x = poly.random_point_on_ray(&DVector::zeros(n), 0.8, &mut rng);
            let st = MetricState::new(&params, &poly, x).unwrap();
            let a = drift(&params, &st, TraceMode::Adjoint).unwrap();
            let b = drift_finite_difference(&params, &poly, &st).unwrap();
            assert!(fd::rel_err_vec(&a, &b, 1e-8) < 1e-5, "{a} vs {b}");
        }
    }

    #[test]
    fn field_conserves_energy_to_first_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for k in 0..6 {
            let n = 2 + k % 3;
            let poly = Polytope::random(n, n + 3 + 2 * k, &mut rng).unwrap();
            let params = setup(&poly, 0.5);
            let x = poly.random_point_on_ray(&DVector::zeros(n), 0.7, &mut rng);
            let v = DVector::from_fn(n, |_, _| rand::Rng::random::<f64>(&mut rng) * 4.0 - 2.0);
            let ps = PhaseState::new(&poly, x.clone(), v.clone()).unwrap();
            let (dx, dv) = ode_field(&params, &poly, &ps).unwrap();
            let h = fd::default_step(&x, 1.0);
            let hx = |y: &DVector<f64>| hamiltonian(&params, &poly, &PhaseState { x: y.clone(), v: v.clone() });
            let hv = |u: &DVector<f64>| hamiltonian(&params, &poly, &PhaseState { x: x.clone(), v: u.clone() });
            let gx = fd::gradient(hx, &x, h).unwrap().extrapolated;
            let gv = fd::gradient(hv, &v, h).unwrap().extrapolated;
            let rate = gx.dot(&dx) + gv.dot(&dv);
            let scale = gx.norm() * dx.norm() + gv.norm() * dv.norm();
            assert!(rate.abs() <= 1e-8 * scale.max(1.0), "{rate:e} (scale {scale:e})");
            // dv is −∂H/∂x and dx is ∂H/∂v.
            assert!(fd::rel_err_vec(&dv, &(-&gx), 1e-8) < 1e-6);
            assert!(fd::rel_err_vec(&dx, &gv, 1e-8) < 1e-6);
        }
    }

    #[test]
    fn field_parity_under_momentum_reversal() {
        let poly = Polytope::<f64>::cross_polytope(2);
        let params = setup(&poly, 1.0);
        let ps = PhaseState::new(
            &poly,
            DVector::from_vec(vec![0.2, -0.3]),
            DVector::from_vec(vec![0.9, 0.4]),
        )
        .unwrap();
        let (dx, dv) = ode_field(&params, &poly, &ps).unwrap();
        let (dx2, dv2) = ode_field(&params, &poly, &ps.flipped()).unwrap();
        assert!((&dx + &dx2).amax() < 1e-14);
        assert!((&dv - &dv2).amax() < 1e-12);
    }

    #[test]
    fn uniform_field_at_the_cube_center() {
        let poly = Polytope::<f64>::cube(2);
        let params = setup(&poly, 0.0);
        let e1 = DVector::from_vec(vec![1.0, 0.0]);
        let ps = PhaseState::new(&poly, DVector::zeros(2), e1.clone()).unwrap();
        let st = MetricState::new(&params, &poly, DVector::zeros(2)).unwrap();
        let (dx, dv) = ode_field(&params, &poly, &ps).unwrap();
        assert!((&dx - st.g_inv(&e1)).amax() < 1e-15);
        let quad = st.quad_form_gradient(&dx).unwrap() * 0.5;
        assert!((&dv - &quad).amax() < 1e-12);
        let hx = |y: &DVector<f64>| hamiltonian(&params, &poly, &PhaseState { x: y.clone(), v: e1.clone() });
        let gx = fd::gradient(hx, &DVector::zeros(2), 1e-4).unwrap().extrapolated;
        assert!((&dv + &gx).amax() < 1e-8);
    }

    #[test]
    fn zero_time_returns_the_start() {
        let poly = Polytope::<f64>::cube(2);
        let params = setup(&poly, 0.0);
        let ps = PhaseState::new(&poly, DVector::from_vec(vec![0.1, 0.2]), DVector::from_vec(vec![1.0, 0.0])).unwrap();
        let r = integrate(&params, &poly, &ps, 0.0, 0, &IntegratorOptions::default()).unwrap();
        assert_eq!(r.end, ps);
        assert_eq!(r.energy_error(), 0.0);
        assert!(!r.rejected);
    }

    fn drift_at(params: &BarrierParams<f64>, poly: &Polytope<f64>, ps: &PhaseState<f64>, t: f64, steps: usize) -> f64 {
        let r = integrate(params, poly, ps, t, steps, &IntegratorOptions::default()).unwrap();
        assert!(!r.rejected, "{:?}", r.reason);
        r.energy_error().abs()
    }

    #[test]
    fn energy_error_is_second_order() {
        let poly = Polytope::<f64>::simplex(3);
        let params = setup(&poly, 0.5);
        let ps = PhaseState::new(
            &poly,
            DVector::from_vec(vec![0.2, 0.3, 0.25]),
            DVector::from_vec(vec![2.0, -1.0, 0.5]),
        )
        .unwrap();
        let coarse = drift_at(&params, &poly, &ps, 0.05, 4);
        let fine = drift_at(&params, &poly, &ps, 0.05, 8);
        let ratio = coarse / fine;
        assert!((3.0..=5.0).contains(&ratio), "{coarse:e} / {fine:e} = {ratio}");
    }

    #[test]
    fn trajectories_are_reversible() {
        let poly = Polytope::<f64>::cross_polytope(3);
        let params = setup(&poly, 0.0);
        let ps = PhaseState::new(
            &poly,
            DVector::from_vec(vec![0.1, -0.2, 0.15]),
            DVector::from_vec(vec![3.0, 1.0, -2.0]),
        )
        .unwrap();
        let opts = IntegratorOptions::default();
        let out = integrate(&params, &poly, &ps, 0.1, 6, &opts).unwrap();
        assert!(!out.rejected);
        let back = integrate(&params, &poly, &out.end.flipped(), 0.1, 6, &opts).unwrap();
        assert!(!back.rejected);
        let st = MetricState::new(&params, &poly, ps.x.clone()).unwrap();
        assert!(st.g_norm(&(back.end.x() - ps.x())) < 1e-6);
        assert!((back.end.v() + ps.v()).amax() < 1e-6 * ps.v().amax());
    }

    #[test]
    fn leaving_the_polytope_is_rejected() {
        let poly = Polytope::<f64>::cube(2);
        let params = setup(&poly, 0.0);
        let ps = PhaseState::new(&poly, DVector::from_vec(vec![0.9, 0.0]), DVector::from_vec(vec![1e4, 0.0])).unwrap();
        let r = integrate(&params, &poly, &ps, 1.0, 1, &IntegratorOptions::default()).unwrap();
        assert!(r.rejected);
        assert!(r.reason.is_some());
        assert!(r.end_state.is_none());
    }

    #[test]
    fn integration_is_deterministic() {
        let poly = Polytope::<f64>::simplex(2);
        let params = setup(&poly, 0.2);
        let ps = PhaseState::new(&poly, DVector::from_vec(vec![0.3, 0.3]), DVector::from_vec(vec![0.5, 1.5])).unwrap();
        let opts = IntegratorOptions::default();
        let a = integrate(&params, &poly, &ps, 0.2, 5, &opts).unwrap();
        let b = integrate(&params, &poly, &ps, 0.2, 5, &opts).unwrap();
        assert_eq!(a.end, b.end);
        assert_eq!(a.energy_end.to_bits(), b.energy_end.to_bits());
    }

    #[test]
    fn single_precision_trajectory() {
        let poly = Polytope::<f32>::cube(2);
        let params = BarrierParams::for_polytope(&poly).with_lewis_tol(1e-5);
        let ps = PhaseState::new(&poly, DVector::from_vec(vec![0.1f32, 0.0]), DVector::from_vec(vec![1.0f32, 0.5])).unwrap();
        let opts = IntegratorOptions { tol_fp: 1e-5, ..Default::default() };
        let r = integrate(&params, &poly, &ps, 0.1, 4, &opts).unwrap();
        assert!(!r.rejected);
        assert!(r.energy_error().abs() < 1e-3);
    }
}
