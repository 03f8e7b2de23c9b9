//! Central finite differences with a two-step Richardson consistency check.
//!
//! Used as independent oracles for the analytic derivatives in
//! [`crate::barrier`] and by the verification suite.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Default step: `ε^{1/3} · max(1, ‖x‖) · safety`.
pub fn default_step(x: &DVector<f64>, safety: f64) -> f64 {
    f64::EPSILON.cbrt() * x.norm().max(1.0) * safety
}

/// A central-difference estimate at steps `h` and `h/2`, combined by Richardson extrapolation.
#[derive(Debug, Clone)]
pub struct Estimate<V> {
    pub coarse: V,
    pub fine: V,
    pub extrapolated: V,
    /// `‖coarse − fine‖ / ‖fine‖`.
    pub inconsistency: f64,
    /// `‖coarse − fine‖`.
    pub gap: f64,
}

impl<V> Estimate<V> {
    /// Errors when the two step sizes disagree by more than `tol` (relative).
    pub fn checked(self, tol: f64, what: &str) -> Result<Self> {
        self.checked_floor(tol, 0.0, what)
    }

    /// As [`Estimate::checked`] with `‖fine‖` floored at `floor`, for derivatives
    /// that vanish by symmetry.
    pub fn checked_floor(mut self, tol: f64, floor: f64, what: &str) -> Result<Self> {
        if floor > 0.0 {
            self.inconsistency = self.inconsistency.min(self.gap / floor);
        }
        if self.inconsistency.is_finite() && self.inconsistency <= tol {
            Ok(self)
        } else {
            Err(Error::Numerical(format!(
                "finite-difference oracle for {what} failed its Richardson check (inconsistency {:.3e} > {tol:.1e})",
                self.inconsistency
            )))
        }
    }
}

fn along(x: &DVector<f64>, dir: &DVector<f64>, t: f64) -> DVector<f64> {
    x + dir * t
}

/// Derivative of a scalar function at `x` along `dir`.
pub fn directional<F>(f: F, x: &DVector<f64>, dir: &DVector<f64>, h: f64) -> Result<Estimate<f64>>
where
    F: Fn(&DVector<f64>) -> Result<f64>,
{
    let d = |h: f64| -> Result<f64> { Ok((f(&along(x, dir, h))? - f(&along(x, dir, -h))?) / (2.0 * h)) };
    let coarse = d(h)?;
    let fine = d(h / 2.0)?;
    Ok(Estimate {
        coarse,
        fine,
        extrapolated: (4.0 * fine - coarse) / 3.0,
        inconsistency: (coarse - fine).abs() / fine.abs().max(1e-300),
        gap: (coarse - fine).abs(),
    })
}

/// Gradient of a scalar function by coordinate central differences.
pub fn gradient<F>(f: F, x: &DVector<f64>, h: f64) -> Result<Estimate<DVector<f64>>>
where
    F: Fn(&DVector<f64>) -> Result<f64>,
{
    let n = x.len();
    let (mut coarse, mut fine) = (DVector::zeros(n), DVector::zeros(n));
    for i in 0..n {
        let e = unit(n, i);
        let est = directional(&f, x, &e, h)?;
        coarse[i] = est.coarse;
        fine[i] = est.fine;
    }
    Ok(vector_estimate(coarse, fine))
}

/// Jacobian of a vector field; column `j` is the derivative along `eⱼ`.
pub fn jacobian<F>(f: F, x: &DVector<f64>, h: f64) -> Result<Estimate<DMatrix<f64>>>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    let n = x.len();
    let probe = f(x)?;
    let (mut coarse, mut fine) = (DMatrix::zeros(probe.len(), n), DMatrix::zeros(probe.len(), n));
    for j in 0..n {
        let e = unit(n, j);
        let est = directional_vec(&f, x, &e, h)?;
        coarse.set_column(j, &est.coarse);
        fine.set_column(j, &est.fine);
    }
    Ok(matrix_estimate(coarse, fine))
}

/// Derivative of a vector function along `dir`.
pub fn directional_vec<F>(
    f: F,
    x: &DVector<f64>,
    dir: &DVector<f64>,
    h: f64,
) -> Result<Estimate<DVector<f64>>>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    let d = |h: f64| -> Result<DVector<f64>> {
        Ok((f(&along(x, dir, h))? - f(&along(x, dir, -h))?) / (2.0 * h))
    };
    Ok(vector_estimate(d(h)?, d(h / 2.0)?))
}

/// Derivative of a matrix function along `dir`.
pub fn directional_mat<F>(
    f: F,
    x: &DVector<f64>,
    dir: &DVector<f64>,
    h: f64,
) -> Result<Estimate<DMatrix<f64>>>
where
    F: Fn(&DVector<f64>) -> Result<DMatrix<f64>>,
{
    let d = |h: f64| -> Result<DMatrix<f64>> {
        Ok((f(&along(x, dir, h))? - f(&along(x, dir, -h))?) / (2.0 * h))
    };
    Ok(matrix_estimate(d(h)?, d(h / 2.0)?))
}

fn unit(n: usize, i: usize) -> DVector<f64> {
    DVector::from_fn(n, |j, _| if i == j { 1.0 } else { 0.0 })
}

fn vector_estimate(coarse: DVector<f64>, fine: DVector<f64>) -> Estimate<DVector<f64>> {
    let gap = (&coarse - &fine).norm();
    let extrapolated = (&fine * 4.0 - &coarse) / 3.0;
    Estimate {
        inconsistency: gap / fine.norm().max(1e-300),
        gap,
        coarse,
        fine,
        extrapolated,
    }
}

fn matrix_estimate(coarse: DMatrix<f64>, fine: DMatrix<f64>) -> Estimate<DMatrix<f64>> {
    let gap = (&coarse - &fine).norm();
    let extrapolated = (&fine * 4.0 - &coarse) / 3.0;
    Estimate {
        inconsistency: gap / fine.norm().max(1e-300),
        gap,
        coarse,
        fine,
        extrapolated,
    }
}

/// `‖a − b‖ / ‖b‖` in the Frobenius / Euclidean norm, with `‖b‖` floored at `floor`.
pub fn rel_err_mat(a: &DMatrix<f64>, b: &DMatrix<f64>, floor: f64) -> f64 {
    (a - b).norm() / b.norm().max(floor)
}

pub fn rel_err_vec(a: &DVector<f64>, b: &DVector<f64>, floor: f64) -> f64 {
    (a - b).norm() / b.norm().max(floor)
}
