//! Leverage scores and `p`-Lewis weights of the rescaled constraint matrix,
//! together with the derived `m × m` matrices used by the barrier metric.
//!
//! With `q = 1 − 2/p` the weights are the fixed point of
//! `wᵢ ← (aᵢᵀ (A_xᵀ W^q A_x)⁻¹ aᵢ)^{p/2}`, equivalently `σ(W^{1/2−1/p} A_x) = w`.
//! The map contracts for `p < 4`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::linalg;
use crate::polytope::RescaledConstraints;
use crate::scalar::Real;

/// Leverage scores `σᵢ = eᵢᵀ M (MᵀM)⁻¹ Mᵀ eᵢ` of a tall full-rank matrix.
pub fn leverage_scores<T: Real>(m: &DMatrix<T>) -> Result<DVector<T>> {
    Ok(row_norms_sq(&orthonormal_basis(m, "M")?.0))
}

/// Thin `Q` of `M = QR` together with `log det(MᵀM) = 2 Σ log|Rᵢᵢ|`.
///
/// Working from `Q` rather than the normal equations keeps leverage scores
/// accurate to `ε·κ(M)` instead of `ε·κ(M)²`.
fn orthonormal_basis<T: Real>(m: &DMatrix<T>, what: &str) -> Result<(DMatrix<T>, T)> {
    let qr = m.clone().qr();
    let r = qr.r();
    let diag: Vec<T> = (0..r.nrows().min(r.ncols())).map(|i| r[(i, i)].abs()).collect();
    let largest = diag.iter().fold(T::zero(), |acc, &d| acc.max(d));
    let floor = largest * T::eps() * T::from_usize_lossy(10 * m.nrows());
    if diag.iter().any(|&d| !(d > floor)) {
        return Err(Error::Numerical(format!("{what} is numerically rank deficient")));
    }
    let logdet = diag.iter().fold(T::zero(), |acc, &d| acc + T::lit(2.0) * d.ln());
    Ok((qr.q(), logdet))
}

fn row_norms_sq<T: Real>(q: &DMatrix<T>) -> DVector<T> {
    DVector::from_iterator(q.nrows(), q.row_iter().map(|r| r.norm_squared()))
}

/// Steps that stop contracting below `STALL_FACTOR · tol` have hit the rounding
/// floor of the leverage computation and are accepted. "Stopped contracting"
/// means the last step did not halve its predecessor, or no new smallest step
/// appeared in `STALL_WINDOW` iterations.
const STALL_FACTOR: f64 = 1000.0;
const STALL_WINDOW: usize = 6;

/// Solver settings for [`lewis_weights`].
#[derive(Debug, Clone)]
pub struct LewisOptions<T: Real> {
    /// Stop when `‖log wᵏ⁺¹ − log wᵏ‖_∞ ≤ tol`.
    pub tol: T,
    pub max_iter: usize,
    /// Start from these weights instead of the leverage scores.
    pub warm_start: Option<DVector<T>>,
    /// Skip the dense `m × m` matrices (leverage-only mode).
    pub weights_only: bool,
    /// Switch from the plain fixed-point map to Newton steps once the
    /// fixed-point residual `‖log σ − log w‖_∞` drops below this. Zero disables Newton.
    pub newton_below: T,
}

impl<T: Real> Default for LewisOptions<T> {
    fn default() -> Self {
        Self {
            tol: T::lit(1e-12),
            max_iter: 500,
            warm_start: None,
            weights_only: false,
            newton_below: T::lit(1e-2),
        }
    }
}

/// Lewis weights at a point and the matrices derived from them.
///
/// `P` is the orthogonal projection onto the column space of `W^{1/2−1/p} A_x`,
/// `P2 = P ⊙ P`, `Λ = W − P2` and `G = (2/p) W + (1 − 2/p) P2 = W − (1 − 2/p) Λ`.
#[derive(Debug, Clone)]
pub struct LewisState<T: Real> {
    pub w: DVector<T>,
    pub p: T,
    /// Fixed-point residual `‖σ(W^{1/2−1/p} A_x) − w‖_∞`.
    pub residual: T,
    pub iterations: usize,
    /// `‖Δ log w‖_∞` per iteration.
    pub step_history: Vec<T>,
    /// `log det(A_xᵀ W^{1−2/p} A_x)`.
    pub logdet_gram: T,
    matrices: Option<LewisMatrices<T>>,
}

#[derive(Debug, Clone)]
struct LewisMatrices<T: Real> {
    proj: DMatrix<T>,
    proj_sq: DMatrix<T>,
    lambda: DMatrix<T>,
    g: DMatrix<T>,
    g_chol: Cholesky<T, Dyn>,
}

impl<T: Real> LewisState<T> {
    fn mats(&self) -> &LewisMatrices<T> {
        self.matrices
            .as_ref()
            .expect("dense Lewis matrices were not computed (weights_only mode)")
    }

    pub fn has_matrices(&self) -> bool {
        self.matrices.is_some()
    }

    /// Projection matrix `P`.
    pub fn proj(&self) -> &DMatrix<T> {
        &self.mats().proj
    }

    /// Hadamard square `P ⊙ P`.
    pub fn proj_sq(&self) -> &DMatrix<T> {
        &self.mats().proj_sq
    }

    /// `Λ = W − P⁽²⁾`.
    pub fn lambda(&self) -> &DMatrix<T> {
        &self.mats().lambda
    }

    /// `G = (2/p) W + (1 − 2/p) P⁽²⁾`.
    pub fn g(&self) -> &DMatrix<T> {
        &self.mats().g
    }

    pub fn g_chol(&self) -> &Cholesky<T, Dyn> {
        &self.mats().g_chol
    }

    /// `1 − 2/p`.
    pub fn q(&self) -> T {
        T::one() - T::lit(2.0) / self.p
    }

    /// `G⁻¹ W s`.
    pub fn g_inv_w(&self, s: &DVector<T>) -> DVector<T> {
        self.g_chol().solve(&s.component_mul(&self.w))
    }

    /// `s_v = A_x v` and `r_v = G⁻¹ W s_v`.
    pub fn reparam(&self, ax: &RescaledConstraints<T>, v: &DVector<T>) -> Result<ReparamVector<T>> {
        if v.len() != ax.n() {
            return Err(Error::Dimension(format!(
                "direction has length {}, expected {}",
                v.len(),
                ax.n()
            )));
        }
        let s_v = ax.apply(v);
        let r_v = self.g_inv_w(&s_v);
        if r_v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numerical("G is numerically singular".into()));
        }
        Ok(ReparamVector { s_v, r_v })
    }

    /// Directional derivative of the weights, `Dw(v) = −2 Λ r_v`.
    pub fn weight_derivative(&self, rep: &ReparamVector<T>) -> DVector<T> {
        -(self.lambda() * &rep.r_v) * T::lit(2.0)
    }
}

/// Reparameterized direction: `s_v = A_x v`, `r_v = G⁻¹ W s_v`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReparamVector<T: Real> {
    pub s_v: DVector<T>,
    pub r_v: DVector<T>,
}

fn check_exponent<T: Real>(p: T) -> Result<()> {
    if !(p >= T::lit(2.0) && p < T::lit(4.0)) {
        return Err(Error::Parameter(format!(
            "Lewis exponent p = {p} outside [2, 4)"
        )));
    }
    Ok(())
}

/// `p`-Lewis weights of `A_x` by fixed-point iteration from the leverage scores
/// (or `opts.warm_start`), followed by the derived matrices unless
/// `opts.weights_only` is set.
pub fn lewis_weights<T: Real>(
    ax: &RescaledConstraints<T>,
    p: T,
    opts: &LewisOptions<T>,
) -> Result<LewisState<T>> {
    check_exponent(p)?;
    let a = ax.matrix();
    let m = a.nrows();
    let q = T::one() - T::lit(2.0) / p;
    let half_p = p * T::lit(0.5);

    let mut w = match &opts.warm_start {
        Some(w0) if w0.len() == m && w0.iter().all(|&x| x > T::zero()) => w0.clone(),
        _ => leverage_scores(a)?,
    };
    let mut history: Vec<T> = Vec::new();
    let mut converged = false;
    for _ in 0..opts.max_iter {
        let b = linalg::scale_rows(&w.map(|x| x.powf(q).sqrt()), a);
        let (basis, _) = orthonormal_basis(&b, "W^{q/2} A_x")?;
        // σ(W^{q/2} A_x); the fixed point is σ = w.
        let sigma = row_norms_sq(&basis);
        let f = DVector::from_fn(m, |i, _| sigma[i].ln() - w[i].ln());
        let f_inf = f.amax();
        let delta = if f_inf < opts.newton_below {
            // Jacobian of log σ − log w at the fixed point is −W⁻¹G.
            let proj = &basis * basis.transpose();
            let proj_sq = proj.component_mul(&proj);
            let g = linalg::diag(&w) * (T::lit(2.0) / p) + proj_sq * q;
            match linalg::cholesky_jitter(&g, "Lewis Newton system") {
                Ok(c) => c.solve(&f.component_mul(&w)),
                Err(_) => &f * half_p,
            }
        } else {
            &f * half_p
        };
        let step = delta.amax();
        if !step.is_finite() {
            return Err(Error::Numerical("Lewis weight iteration produced non-finite values".into()));
        }
        w = DVector::from_fn(m, |i, _| w[i] * delta[i].exp());
        let no_progress = history.last().is_some_and(|&prev| step > prev * T::lit(0.5))
            || (history.len() >= STALL_WINDOW && {
                let (old, recent) = history.split_at(history.len() + 1 - STALL_WINDOW);
                let best_old = old.iter().fold(T::max_value().unwrap(), |a, &b| a.min(b));
                recent.iter().chain(std::iter::once(&step)).all(|&r| r >= best_old)
            });
        let stalled = no_progress && step <= opts.tol * T::lit(STALL_FACTOR);
        history.push(step);
        if step <= opts.tol || stalled {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Convergence {
            context: "Lewis weight fixed point".into(),
            iterations: opts.max_iter,
            residual: history.last().map_or(f64::NAN, |r| r.as_f64()),
        });
    }

    let b = linalg::scale_rows(&w.map(|x| x.powf(q).sqrt()), a);
    let (basis, logdet_gram) = orthonormal_basis(&b, "W^{q/2} A_x")?;
    let residual_of = |sigma: &DVector<T>| {
        (0..m).fold(T::zero(), |acc, i| acc.max((sigma[i] - w[i]).abs()))
    };

    let (residual, matrices) = if opts.weights_only {
        (residual_of(&row_norms_sq(&basis)), None)
    } else {
        let proj = &basis * basis.transpose();
        let residual = residual_of(&proj.diagonal());
        let proj_sq = proj.component_mul(&proj);
        let wdiag = linalg::diag(&w);
        let lambda = &wdiag - &proj_sq;
        let g = &wdiag * (T::lit(2.0) / p) + &proj_sq * q;
        let g_chol = linalg::cholesky_jitter(&g, "G = (2/p)W + (1−2/p)P⁽²⁾")?;
        (
            residual,
            Some(LewisMatrices {
                proj,
                proj_sq,
                lambda,
                g,
                g_chol,
            }),
        )
    };

    Ok(LewisState {
        w,
        p,
        residual,
        iterations: history.len(),
        step_history: history,
        logdet_gram,
        matrices,
    })
}

/// Fixed-point residual `‖σ(W^{1/2−1/p} A_x) − w‖_∞` of arbitrary candidate weights.
pub fn fixed_point_residual<T: Real>(ax: &RescaledConstraints<T>, p: T, w: &DVector<T>) -> Result<T> {
    let q = T::one() - T::lit(2.0) / p;
    let b = linalg::scale_rows(&w.map(|x| x.powf(q).sqrt()), ax.matrix());
    let sigma = leverage_scores(&b)?;
    Ok((0..w.len()).fold(T::zero(), |acc, i| acc.max((sigma[i] - w[i]).abs())))
}

/// `‖v‖_{x,∞} = max |(A_x v)ᵢ|`.
pub fn local_inf_norm<T: Real>(ax: &RescaledConstraints<T>, v: &DVector<T>) -> T {
    ax.local_inf_norm(v)
}
