//! Small complex linear-algebra helpers on top of nalgebra.

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};

pub type C64 = Complex<f64>;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;

pub const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
pub const ONE: C64 = C64 { re: 1.0, im: 0.0 };

#[inline]
pub fn real(x: f64) -> C64 {
    C64::new(x, 0.0)
}

pub fn scaled_identity(m: usize, s: f64) -> CMat {
    CMat::from_diagonal_element(m, m, real(s))
}

/// tr(A B) without forming the product.
pub fn trace_product(a: &CMat, b: &CMat) -> C64 {
    debug_assert_eq!(a.ncols(), b.nrows());
    debug_assert_eq!(a.nrows(), b.ncols());
    let mut acc = ZERO;
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            acc += a[(i, j)] * b[(j, i)];
        }
    }
    acc
}

/// x^H A y.
pub fn quad_form(x: &CVec, a: &CMat, y: &CVec) -> C64 {
    x.dotc(&(a * y))
}

/// Inverse of a Hermitian positive-definite matrix through its Cholesky factor.
pub fn hpd_inverse(a: &CMat, what: &'static str) -> Result<CMat> {
    // complex Cholesky happily takes square roots of negative pivots, so the
    // factor's diagonal is checked explicitly
    let chol = a.clone().cholesky().ok_or(Error::NotPositiveDefinite(what))?;
    let l = chol.l_dirty();
    let ok = (0..a.nrows()).all(|i| {
        let d = l[(i, i)];
        d.re > 0.0 && d.re.is_finite() && d.im.abs() <= 1e-12 * d.re
    });
    if !ok {
        return Err(Error::NotPositiveDefinite(what));
    }
    Ok(chol.inverse())
}

/// (s I + beta h h^H)^{-1} in closed form (Sherman-Morrison).
pub fn sherman_morrison_inverse(s: f64, beta: f64, h: &CVec) -> CMat {
    let m = h.len();
    let denom = s + beta * h.norm_squared();
    let mut out = -(h * h.adjoint()) * real(beta / (s * denom));
    for i in 0..m {
        out[(i, i)] += real(1.0 / s);
    }
    out
}

/// Hermitian part (A + A^H)/2; removes rounding asymmetry before eigen solves.
pub fn hermitian_part(a: &CMat) -> CMat {
    (a + a.adjoint()) * real(0.5)
}

pub fn hermitian_eigenvalues(a: &CMat) -> Vec<f64> {
    let mut ev: Vec<f64> = hermitian_part(a)
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .collect();
    ev.sort_by(|x, y| x.total_cmp(y));
    ev
}

pub fn min_eigenvalue(a: &CMat) -> f64 {
    hermitian_eigenvalues(a)[0]
}

/// ||A - B||_F / ||B||_F
pub fn frobenius_rel_err(a: &CMat, b: &CMat) -> f64 {
    (a - b).norm() / b.norm()
}

pub fn is_hermitian(a: &CMat, tol: f64) -> bool {
    a.is_square() && (a - a.adjoint()).norm() <= tol * a.norm().max(f64::MIN_POSITIVE)
}

/// Numerical rank from singular values relative to the largest.
pub fn numerical_rank(a: &CMat, rel_tol: f64) -> usize {
    let sv = a.clone().singular_values();
    let max = sv.iter().cloned().fold(0.0_f64, f64::max);
    sv.iter().filter(|&&s| s > rel_tol * max).count()
}

/// Neumaier-compensated running sum. Deterministic for a fixed input order.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = CompensatedSum::default();
        for x in iter {
            s.add(x);
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_hpd(m: usize) -> (CMat, CVec) {
        let h = CVec::from_fn(m, |i, _| C64::new(0.3 * i as f64 + 0.1, 0.7 - 0.2 * i as f64));
        let a = scaled_identity(m, 0.8) + &h * h.adjoint() * real(1.7);
        (a, h)
    }

    #[test]
    fn sherman_morrison_matches_cholesky() {
        let (a, h) = sample_hpd(5);
        let sm = sherman_morrison_inverse(0.8, 1.7, &h);
        let chol = hpd_inverse(&a, "test").unwrap();
        assert!(frobenius_rel_err(&sm, &chol) < 1e-13);
        let id = &a * &sm;
        assert!(frobenius_rel_err(&id, &scaled_identity(5, 1.0)) < 1e-13);
    }

    #[test]
    fn trace_product_matches_dense() {
        let (a, _) = sample_hpd(4);
        let b = CMat::from_fn(4, 4, |i, j| C64::new(i as f64 - j as f64, (i * j) as f64));
        let dense = (&a * &b).trace();
        assert!((trace_product(&a, &b) - dense).norm() < 1e-12);
    }

    #[test]
    fn non_pd_rejected() {
        let a = scaled_identity(3, -1.0);
        assert!(hpd_inverse(&a, "neg").is_err());
    }

    #[test]
    fn compensated_sum_beats_naive() {
        let xs = [1e16, 1.0, -1e16, 1.0];
        let s: CompensatedSum = xs.iter().copied().collect();
        assert_eq!(s.value(), 2.0);
    }

    #[test]
    fn rank_of_outer_product() {
        let (_, h) = sample_hpd(4);
        assert_eq!(numerical_rank(&(&h * h.adjoint()), 1e-10), 1);
    }
}
