//! H-polytopes `{x : Ax ≥ b}`: slacks, rescaled constraint matrices,
//! interior points and JSON IO.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::scalar::Real;

/// A full-dimensional polytope `{x : Ax ≥ b}` with `m` constraints in `n` dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct Polytope<T: Real> {
    a: DMatrix<T>,
    b: DVector<T>,
    name: Option<String>,
}

/// On-disk representation. Row-major `A`, UTF-8 JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolytopeFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

impl<T: Real> Polytope<T> {
    /// Validates dimensions (`m ≥ n ≥ 1`, `len(b) = m`), finiteness and nonzero rows.
    pub fn new(a: DMatrix<T>, b: DVector<T>) -> Result<Self> {
        let (m, n) = a.shape();
        if n == 0 {
            return Err(Error::Validation("polytope must have at least one column".into()));
        }
        if m < n {
            return Err(Error::Validation(format!(
                "need at least as many constraints as dimensions (m = {m}, n = {n})"
            )));
        }
        if b.len() != m {
            return Err(Error::Dimension(format!(
                "len(b) = {} but A has {m} rows",
                b.len()
            )));
        }
        if let Some(bad) = a.iter().chain(b.iter()).position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("non-finite entry (flat index {bad})")));
        }
        for (i, row) in a.row_iter().enumerate() {
            if row.norm() <= T::zero() {
                return Err(Error::Validation(format!("row {i} of A is the zero vector")));
            }
        }
        Ok(Self { a, b, name: None })
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = Some(name.into());
        self
    }

    pub fn from_rows(rows: &[Vec<f64>], b: &[f64]) -> Result<Self> {
        let m = rows.len();
        let n = rows.first().map_or(0, Vec::len);
        if let Some(i) = rows.iter().position(|r| r.len() != n) {
            return Err(Error::Dimension(format!(
                "row {i} has {} entries, expected {n}",
                rows[i].len()
            )));
        }
        let a = DMatrix::from_fn(m, n, |i, j| T::lit(rows[i][j]));
        let b = DVector::from_iterator(b.len(), b.iter().map(|&v| T::lit(v)));
        Self::new(a, b)
    }

    pub fn from_file_repr(file: &PolytopeFile) -> Result<Self> {
        let p = Self::from_rows(&file.a, &file.b)?;
        Ok(match &file.name {
            Some(name) => p.with_name(name.clone()),
            None => p,
        })
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: PolytopeFile =
            serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        Self::from_file_repr(&file)
    }

    pub fn to_file_repr(&self) -> PolytopeFile {
        PolytopeFile {
            name: self.name.clone(),
            a: self
                .a
                .row_iter()
                .map(|r| r.iter().map(|v| v.as_f64()).collect())
                .collect(),
            b: self.b.iter().map(|v| v.as_f64()).collect(),
        }
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&self.to_file_repr()).expect("polytope serializes")
    }

    pub fn a(&self) -> &DMatrix<T> {
        &self.a
    }

    pub fn b(&self) -> &DVector<T> {
        &self.b
    }

    pub fn name(&self) -> Option<&str> {
        self.name.as_deref()
    }

    /// Number of constraints.
    pub fn m(&self) -> usize {
        self.a.nrows()
    }

    /// Ambient dimension.
    pub fn n(&self) -> usize {
        self.a.ncols()
    }

    /// `Ax − b`. Entries may be nonpositive; callers decide what that means.
    pub fn slacks(&self, x: &DVector<T>) -> DVector<T> {
        &self.a * x - &self.b
    }

    /// Strict membership: every slack is positive. Boundary points are outside.
    pub fn contains(&self, x: &DVector<T>) -> bool {
        x.len() == self.n() && self.slacks(x).iter().all(|&s| s > T::zero())
    }

    /// Checked interior point at `x`.
    pub fn interior_point(&self, x: DVector<T>) -> Result<InteriorPoint<T>> {
        InteriorPoint::new(self, x)
    }

    /// Row `i` of A divided by the slack `sᵢ`.
    pub fn rescaled(&self, pt: &InteriorPoint<T>) -> Result<RescaledConstraints<T>> {
        if let Some(index) = pt.slacks.iter().position(|&s| s <= T::zero()) {
            return Err(Error::Infeasible {
                index,
                slack: pt.slacks[index].as_f64(),
            });
        }
        let inv = pt.slacks.map(|s| T::one() / s);
        Ok(RescaledConstraints(linalg::scale_rows(&inv, &self.a)))
    }

    /// Applies `x ↦ x + shift` to the polytope: returns `{y : A(y − shift) ≥ b}`.
    pub fn translated(&self, shift: &DVector<T>) -> Self {
        Self {
            a: self.a.clone(),
            b: &self.b + &self.a * shift,
            name: self.name.clone(),
        }
    }

    /// Duplicates every constraint `k` times.
    pub fn with_repeated_rows(&self, k: usize) -> Self {
        let (m, n) = self.a.shape();
        let a = DMatrix::from_fn(m * k, n, |i, j| self.a[(i % m, j)]);
        let b = DVector::from_fn(m * k, |i, _| self.b[i % m]);
        Self {
            a,
            b,
            name: self.name.clone(),
        }
    }

    /// Approximate analytic center of the log barrier `−Σ log sᵢ`.
    ///
    /// Finds a strictly feasible start with a phase-one barrier problem on
    /// `(x, t)` with constraints `sᵢ(x) > t‖aᵢ‖`, then runs damped Newton
    /// until the Newton decrement (gradient norm in the local metric) is at
    /// most `tol`. Divergence is reported as a possibly unbounded polytope.
    pub fn find_interior_point(&self, tol: T) -> Result<InteriorPoint<T>> {
        let start = self.phase_one()?;
        let x = self.center_from(start, tol)?;
        InteriorPoint::new(self, x)
    }

    fn phase_one(&self) -> Result<DVector<T>> {
        let (m, n) = self.a.shape();
        let zero = DVector::zeros(n);
        if self.contains(&zero) {
            return Ok(zero);
        }
        let norms = DVector::from_fn(m, |i, _| self.a.row(i).norm());
        // Extended matrix [A, −‖a‖] so that ext * (x, t) − b = s(x) − t‖a‖.
        let ext = DMatrix::from_fn(m, n + 1, |i, j| if j < n { self.a[(i, j)] } else { -norms[i] });
        let s0 = self.slacks(&zero);
        let t0 = (0..m).map(|i| s0[i] / norms[i]).fold(T::max_value().unwrap(), |a, b| a.min(b))
            - T::one();
        let mut y = DVector::zeros(n + 1);
        y[n] = t0;
        let mut weight = T::one();
        let ridge = T::lit(1e-10);
        for _round in 0..40 {
            for _ in 0..100 {
                let s = &ext * &y - &self.b;
                let inv = s.map(|v| T::one() / v);
                // f = −weight·t − Σ log s
                let mut grad = -(ext.transpose() * &inv);
                grad[n] -= weight;
                let mut hess = linalg::weighted_gram(&ext, &inv.component_mul(&inv));
                let shift = ridge * (hess.trace() / T::from_usize_lossy(n + 1) + T::one());
                for i in 0..=n {
                    hess[(i, i)] += shift;
                }
                let chol = linalg::cholesky_jitter(&hess, "phase-one Hessian")?;
                let step = -chol.solve(&grad);
                let decrement = (-grad.dot(&step)).max(T::zero()).sqrt();
                let mut size = T::one() / (T::one() + decrement);
                let mut accepted = false;
                for _ in 0..60 {
                    let cand = &y + &step * size;
                    if (&ext * &cand - &self.b).iter().all(|&v| v > T::zero()) {
                        y = cand;
                        accepted = true;
                        break;
                    }
                    size *= T::lit(0.5);
                }
                if y[n] > T::zero() {
                    return Ok(y.rows(0, n).into_owned());
                }
                if !accepted || decrement < T::lit(1e-6) {
                    break;
                }
            }
            weight *= T::lit(10.0);
        }
        Err(Error::Convergence {
            context: "phase one found no strictly interior point; empty interior".into(),
            iterations: 40,
            residual: y[n].as_f64(),
        })
    }

    fn center_from(&self, mut x: DVector<T>, tol: T) -> Result<DVector<T>> {
        const MAX_ITER: usize = 200;
        let scale0 = T::one() + x.norm();
        let mut decrement = T::max_value().unwrap();
        for _ in 0..MAX_ITER {
            let s = self.slacks(&x);
            let inv = s.map(|v| T::one() / v);
            let grad = -(self.a.transpose() * &inv);
            let hess = linalg::weighted_gram(&self.a, &inv.component_mul(&inv));
            let chol = nalgebra::Cholesky::new(hess).ok_or_else(|| {
                Error::Numerical(
                    "barrier Hessian is singular: polytope possibly unbounded or empty interior".into(),
                )
            })?;
            let step = -chol.solve(&grad);
            decrement = (-grad.dot(&step)).max(T::zero()).sqrt();
            if decrement <= tol {
                return Ok(x);
            }
            let f0 = -s.iter().fold(T::zero(), |acc, &v| acc + v.ln());
            let slope = grad.dot(&step);
            let mut size = T::one();
            loop {
                let cand = &x + &step * size;
                let sc = self.slacks(&cand);
                if sc.iter().all(|&v| v > T::zero()) {
                    let f1 = -sc.iter().fold(T::zero(), |acc, &v| acc + v.ln());
                    if f1 <= f0 + T::lit(0.25) * size * slope {
                        x = cand;
                        break;
                    }
                }
                size *= T::lit(0.5);
                if size < T::lit(1e-20) {
                    return Err(Error::Numerical("line search failed in analytic center".into()));
                }
            }
            if x.norm() > T::lit(1e12) * scale0 {
                break;
            }
        }
        Err(Error::Convergence {
            context: "analytic center diverged: possibly unbounded or empty interior".into(),
            iterations: MAX_ITER,
            residual: decrement.as_f64(),
        })
    }
}

impl Polytope<f64> {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json_str(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json_string()).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })
    }

    /// Random bounded polytope with unit rows and the origin at slack ≥ 0.5.
    ///
    /// The first `n + 1` rows are a jittered simplex frame (`eᵢ` and `−𝟙/√n`),
    /// which keeps the body bounded; the remaining rows are uniform on the sphere.
    /// Offsets are `bᵢ = −(0.5 + Uᵢ)` with `Uᵢ ~ U(0, 1)`.
    pub fn random<R: Rng + ?Sized>(n: usize, m: usize, rng: &mut R) -> Result<Self> {
        if n == 0 || m < n + 1 {
            return Err(Error::Validation(format!(
                "random polytope needs n ≥ 1 and m ≥ n + 1 (got n = {n}, m = {m})"
            )));
        }
        let mut a = DMatrix::zeros(m, n);
        for i in 0..m {
            let mut row = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
            if i <= n {
                let frame = if i < n {
                    DVector::from_fn(n, |j, _| if j == i { 1.0 } else { 0.0 })
                } else {
                    DVector::from_element(n, -1.0 / (n as f64).sqrt())
                };
                row = frame + row * (0.1 / (n as f64).sqrt());
            }
            let norm = row.norm();
            a.row_mut(i).copy_from(&(row / norm).transpose());
        }
        let b = DVector::from_fn(m, |_, _| -(0.5 + rng.random::<f64>()));
        Ok(Self::new(a, b)?.with_name(format!("random-n{n}-m{m}")))
    }

    /// Point on a random ray from the interior point `from`, a uniform fraction
    /// in `[0, max_frac)` of the way to the boundary.
    pub fn random_point_on_ray<R: Rng + ?Sized>(
        &self,
        from: &DVector<f64>,
        max_frac: f64,
        rng: &mut R,
    ) -> DVector<f64> {
        let n = self.n();
        let d = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let s = self.slacks(from);
        let ad = &self.a * &d;
        let t_max = (0..self.m())
            .filter(|&i| ad[i] < 0.0)
            .map(|i| s[i] / -ad[i])
            .fold(f64::INFINITY, f64::min);
        from + d * (max_frac * rng.random::<f64>() * t_max)
    }
}

/// Standard test bodies.
impl<T: Real> Polytope<T> {
    /// Axis-aligned box `∏ [−hᵢ, hᵢ]`.
    pub fn centered_box(half_widths: &[f64]) -> Self {
        let n = half_widths.len();
        let mut rows = Vec::with_capacity(2 * n);
        let mut b = Vec::with_capacity(2 * n);
        for (j, &h) in half_widths.iter().enumerate() {
            let mut plus = vec![0.0; n];
            plus[j] = 1.0;
            let mut minus = vec![0.0; n];
            minus[j] = -1.0;
            rows.push(plus);
            b.push(-h);
            rows.push(minus);
            b.push(-h);
        }
        Self::from_rows(&rows, &b).expect("box is valid")
    }

    /// `[−1, 1]ⁿ`, rows ordered `+e₁, −e₁, +e₂, −e₂, …`.
    pub fn cube(n: usize) -> Self {
        Self::centered_box(&vec![1.0; n]).with_name(format!("cube{n}"))
    }

    /// `{x ≥ 0, Σx ≤ 1}`.
    pub fn simplex(n: usize) -> Self {
        let mut rows: Vec<Vec<f64>> = (0..n)
            .map(|j| {
                let mut r = vec![0.0; n];
                r[j] = 1.0;
                r
            })
            .collect();
        rows.push(vec![-1.0; n]);
        let mut b = vec![0.0; n];
        b.push(-1.0);
        Self::from_rows(&rows, &b)
            .expect("simplex is valid")
            .with_name(format!("simplex{n}"))
    }

    /// `{x : |±x₁ ± … ± xₙ| ≤ 1}` with all 2ⁿ sign patterns.
    pub fn cross_polytope(n: usize) -> Self {
        let rows: Vec<Vec<f64>> = (0..(1usize << n))
            .map(|mask| {
                (0..n)
                    .map(|j| if mask >> j & 1 == 1 { -1.0 } else { 1.0 })
                    .collect()
            })
            .collect();
        let b = vec![-1.0; rows.len()];
        Self::from_rows(&rows, &b)
            .expect("cross-polytope is valid")
            .with_name(format!("cross{n}"))
    }
}

/// A strictly feasible point with its cached slack vector.
#[derive(Debug, Clone, PartialEq)]
pub struct InteriorPoint<T: Real> {
    x: DVector<T>,
    slacks: DVector<T>,
}

impl<T: Real> InteriorPoint<T> {
    pub fn new(poly: &Polytope<T>, x: DVector<T>) -> Result<Self> {
        if x.len() != poly.n() {
            return Err(Error::Dimension(format!(
                "point has length {} but polytope dimension is {}",
                x.len(),
                poly.n()
            )));
        }
        let slacks = poly.slacks(&x);
        if let Some(index) = slacks.iter().position(|&s| !(s > T::zero())) {
            return Err(Error::Infeasible {
                index,
                slack: slacks[index].as_f64(),
            });
        }
        Ok(Self { x, slacks })
    }

    pub fn x(&self) -> &DVector<T> {
        &self.x
    }

    pub fn slacks(&self) -> &DVector<T> {
        &self.slacks
    }

    pub fn into_x(self) -> DVector<T> {
        self.x
    }
}

/// `A_x = S⁻¹A`: constraint rows divided by their slacks.
#[derive(Debug, Clone, PartialEq)]
pub struct RescaledConstraints<T: Real>(DMatrix<T>);

impl<T: Real> RescaledConstraints<T> {
    pub fn matrix(&self) -> &DMatrix<T> {
        &self.0
    }

    /// `s_v = A_x v`, the reparameterized direction.
    pub fn apply(&self, v: &DVector<T>) -> DVector<T> {
        &self.0 * v
    }

    /// Local infinity norm `‖v‖_{x,∞} = ‖A_x v‖_∞`.
    pub fn local_inf_norm(&self, v: &DVector<T>) -> T {
        linalg::inf_norm(&self.apply(v))
    }

    pub fn m(&self) -> usize {
        self.0.nrows()
    }

    pub fn n(&self) -> usize {
        self.0.ncols()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square() -> Polytope<f64> {
        Polytope::from_rows(
            &[vec![1.0, 0.0], vec![-1.0, 0.0], vec![0.0, 1.0], vec![0.0, -1.0]],
            &[-1.0, -1.0, -1.0, -1.0],
        )
        .unwrap()
    }

    #[test]
    fn parses_cube_json() {
        let p = Polytope::<f64>::from_json_str(
            r#"{"name":"sq","A":[[1,0],[-1,0],[0,1],[0,-1]],"b":[-1,-1,-1,-1]}"#,
        )
        .unwrap();
        assert_eq!((p.m(), p.n()), (4, 2));
        assert_eq!(p.name(), Some("sq"));
        assert_eq!(p, square().with_name("sq"));
    }

    #[test]
    fn zero_row_names_the_index() {
        let err = Polytope::<f64>::from_json_str(r#"{"A":[[1,0],[0,0],[0,1]],"b":[0,0,0]}"#)
            .unwrap_err();
        assert!(matches!(err, Error::Validation(ref msg) if msg.contains("row 1")), "{err}");
    }

    #[test]
    fn length_mismatch_and_bad_json() {
        let err = Polytope::<f64>::from_json_str(r#"{"A":[[1],[-1]],"b":[0]}"#).unwrap_err();
        assert!(matches!(err, Error::Dimension(_)));
        let err = Polytope::<f64>::from_json_str(r#"{"A":[[1],[-1]],"b":[0, NaN]}"#).unwrap_err();
        assert!(matches!(err, Error::Parse(_)));
        let err = Polytope::<f64>::from_json_str(r#"{"A":[[1,2],[-1]],"b":[0,0]}"#).unwrap_err();
        assert!(matches!(err, Error::Dimension(_)));
    }

    #[test]
    fn simplex_has_n_plus_one_rows() {
        let p = Polytope::<f64>::simplex(3);
        assert_eq!((p.m(), p.n()), (4, 3));
        let text = p.to_json_string();
        assert_eq!(Polytope::<f64>::from_json_str(&text).unwrap(), p);
    }

    #[test]
    fn slacks_on_the_square() {
        let p = square();
        let s = p.slacks(&DVector::from_vec(vec![0.0, 0.0]));
        assert_eq!(s.as_slice(), &[1.0, 1.0, 1.0, 1.0]);
        let s = p.slacks(&DVector::from_vec(vec![0.5, 0.0]));
        assert_eq!(s.as_slice(), &[1.5, 0.5, 1.0, 1.0]);
        let s = p.slacks(&DVector::from_vec(vec![1.0, 0.0]));
        assert_eq!(s[1], 0.0);
    }

    #[test]
    fn rescaled_rows() {
        let p = square();
        let origin = p.interior_point(DVector::zeros(2)).unwrap();
        assert_eq!(p.rescaled(&origin).unwrap().matrix(), p.a());
        let pt = p.interior_point(DVector::from_vec(vec![0.5, 0.0])).unwrap();
        let ax = p.rescaled(&pt).unwrap();
        // Constraint −x₁ ≥ −1 has slack 0.5, so its row doubles.
        assert_eq!(ax.matrix().row(1).iter().copied().collect::<Vec<_>>(), vec![-2.0, 0.0]);
        assert!(p.interior_point(DVector::from_vec(vec![1.0, 0.0])).is_err());
    }

    #[test]
    fn membership_is_strict() {
        let p = square();
        assert!(p.contains(&DVector::from_vec(vec![0.0, 0.0])));
        assert!(!p.contains(&DVector::from_vec(vec![2.0, 0.0])));
        assert!(!p.contains(&DVector::from_vec(vec![1.0, 0.0])));
    }

    #[test]
    fn analytic_centers() {
        let c = Polytope::<f64>::cube(4).find_interior_point(1e-10).unwrap();
        assert!(c.x().norm() < 1e-9);
        let s = Polytope::<f64>::simplex(2).find_interior_point(1e-12).unwrap();
        assert!((s.x()[0] - 1.0 / 3.0).abs() < 1e-10 && (s.x()[1] - 1.0 / 3.0).abs() < 1e-10);
        // Shifted far from the origin: phase one has to find the interior.
        let shifted = Polytope::<f64>::simplex(3).translated(&DVector::from_vec(vec![5.0, -3.0, 7.0]));
        let pt = shifted.find_interior_point(1e-10).unwrap();
        assert!((pt.x() - DVector::from_vec(vec![5.25, -2.75, 7.25])).norm() < 1e-8);
    }

    #[test]
    fn unbounded_half_space_diverges() {
        let p = Polytope::<f64>::from_rows(&[vec![1.0]], &[0.0]).unwrap();
        assert!(p.find_interior_point(1e-10).is_err());
        let strip = Polytope::<f64>::from_rows(&[vec![1.0, 0.0], vec![-1.0, 0.0]], &[-1.0, -1.0]).unwrap();
        assert!(strip.find_interior_point(1e-10).is_err());
    }

    #[test]
    fn empty_interior_is_reported() {
        // x ≥ 1 and x ≤ 0.
        let p = Polytope::<f64>::from_rows(&[vec![1.0], vec![-1.0]], &[1.0, 0.0]).unwrap();
        assert!(p.find_interior_point(1e-10).is_err());
    }

    #[test]
    fn works_in_single_precision() {
        let p = Polytope::<f32>::simplex(2);
        let c = p.find_interior_point(1e-4).unwrap();
        assert!((c.x()[0] - 1.0 / 3.0).abs() < 1e-4);
    }
}
