//! M-spline and I-spline bases on `[0, 1]`.

use serde::{Deserialize, Serialize};

use crate::error::{NpmmError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineBasis {
    pub k: usize,
    pub degree: usize,
    /// Clamped knot vector of length `k + degree + 1`.
    pub knots: Vec<f64>,
}

/// Non-zero B-splines of `order` at `x`; returns the first index and values.
///
/// `t` must be clamped on `[0, 1]`. At `x = 1` the last non-empty span is used.
fn bspline_nonzero(t: &[f64], order: usize, x: f64, vals: &mut [f64]) -> usize {
    let p = order - 1;
    let n_basis = t.len() - order;
    // span index with t[span] <= x < t[span+1]
    let mut span = p;
    while span < n_basis - 1 && x >= t[span + 1] {
        span += 1;
    }
    let mut left = [0.0; 8];
    let mut right = [0.0; 8];
    vals[0] = 1.0;
    for j in 1..=p {
        left[j] = x - t[span + 1 - j];
        right[j] = t[span + j] - x;
        let mut saved = 0.0;
        for r in 0..j {
            let denom = right[r + 1] + left[j - r];
            let tmp = if denom > 0.0 { vals[r] / denom } else { 0.0 };
            vals[r] = saved + right[r + 1] * tmp;
            saved = left[j - r] * tmp;
        }
        vals[j] = saved;
    }
    span - p
}

impl SplineBasis {
    /// `k` functions of `degree` with equally spaced interior knots.
    pub fn new(k: usize, degree: usize) -> Result<Self> {
        if degree == 0 || degree > 6 || k < degree + 1 {
            return Err(NpmmError::InvalidParameter(format!(
                "need degree in 1..=6 and k >= degree + 1, got k={k}, degree={degree}"
            )));
        }
        let n_interior = k - degree - 1;
        let mut knots = vec![0.0; degree + 1];
        for j in 1..=n_interior {
            knots.push(j as f64 / (n_interior + 1) as f64);
        }
        knots.extend(std::iter::repeat_n(1.0, degree + 1));
        let basis = SplineBasis { k, degree, knots };
        basis.check_normalization()?;
        Ok(basis)
    }

    /// The default 15 cubic functions.
    pub fn cubic15() -> Self {
        SplineBasis::new(15, 3).expect("valid default basis")
    }

    fn order(&self) -> usize {
        self.degree + 1
    }

    /// Verifies `∫₀¹ M_i = 1` by Gauss–Legendre on every knot span.
    fn check_normalization(&self) -> Result<()> {
        let rule = crate::stats::gauss_legendre(self.order() + 2);
        let mut totals = vec![0.0; self.k];
        let mut buf = vec![0.0; self.k];
        for w in self.knots.windows(2) {
            if w[1] <= w[0] {
                continue;
            }
            let half = 0.5 * (w[1] - w[0]);
            let mid = 0.5 * (w[1] + w[0]);
            for (x, wt) in rule.0.iter().zip(&rule.1) {
                self.eval_into(mid + half * x, &mut buf);
                for i in 0..self.k {
                    totals[i] += wt * half * buf[i];
                }
            }
        }
        if let Some((i, t)) = totals.iter().enumerate().find(|(_, t)| (*t - 1.0).abs() > 1e-8) {
            return Err(NpmmError::Numerical(format!(
                "M-spline {i} integrates to {t}, expected 1"
            )));
        }
        Ok(())
    }

    /// M-spline values at `u` written into `out` (length `k`).
    pub fn eval_into(&self, u: f64, out: &mut [f64]) {
        let order = self.order();
        let mut vals = [0.0; 8];
        let first = bspline_nonzero(&self.knots, order, u, &mut vals);
        out.iter_mut().for_each(|v| *v = 0.0);
        for (j, v) in vals.iter().take(order).enumerate() {
            let i = first + j;
            let width = self.knots[i + order] - self.knots[i];
            if width > 0.0 {
                out[i] = order as f64 * v / width;
            }
        }
    }

    /// I-spline values `∫₀^u M_i` written into `out`.
    pub fn integral_into(&self, u: f64, out: &mut [f64]) {
        // I_i = Σ_{j > i} B_j on the knot vector extended by one boundary
        // knot on each side, with one order higher.
        let order = self.order() + 1;
        let mut ext = Vec::with_capacity(self.knots.len() + 2);
        ext.push(0.0);
        ext.extend_from_slice(&self.knots);
        ext.push(1.0);
        let mut vals = [0.0; 8];
        let first = bspline_nonzero(&ext, order, u, &mut vals);
        let n_ext = ext.len() - order;
        let mut b = vec![0.0; n_ext];
        for j in 0..order {
            b[first + j] = vals[j];
        }
        let mut acc = 0.0;
        for i in (0..self.k).rev() {
            acc += b[i + 1];
            out[i] = acc.min(1.0);
        }
    }

    pub fn eval(&self, u: f64) -> Result<Vec<f64>> {
        if !(u > 0.0 && u < 1.0) {
            return Err(NpmmError::InvalidArgument(format!(
                "spline argument must lie in (0,1), got {u}"
            )));
        }
        let mut out = vec![0.0; self.k];
        self.eval_into(u, &mut out);
        Ok(out)
    }

    /// Mixture weights under which `Σ π_i M_i ≡ 1`.
    pub fn flat_weights(&self) -> Vec<f64> {
        let order = self.order();
        (0..self.k)
            .map(|i| (self.knots[i + order] - self.knots[i]) / order as f64)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{gauss_legendre, integrate_gl};

    #[test]
    fn default_basis_has_fifteen_normalized_functions() {
        let b = SplineBasis::cubic15();
        assert_eq!(b.k, 15);
        assert_eq!(b.knots.len(), 19);
        // normalization is asserted at construction; repeat with a finer rule
        let rule = gauss_legendre(40);
        for i in 0..15 {
            let total: f64 = (0..12)
                .map(|s| {
                    let (a, c) = (s as f64 / 12.0, (s + 1) as f64 / 12.0);
                    integrate_gl(|x| b.eval(x.clamp(1e-15, 1.0 - 1e-15)).unwrap()[i], a, c, &rule)
                })
                .sum();
            assert!((total - 1.0).abs() < 1e-8, "basis {i}: {total}");
        }
    }

    #[test]
    fn equal_weight_density_integrates_to_one() {
        let b = SplineBasis::cubic15();
        let rule = gauss_legendre(40);
        let total: f64 = (0..12)
            .map(|s| {
                let (a, c) = (s as f64 / 12.0, (s + 1) as f64 / 12.0);
                integrate_gl(|x| b.eval(x).unwrap().iter().sum::<f64>() / 15.0, a, c, &rule)
            })
            .sum();
        assert!((total - 1.0).abs() < 1e-8);
    }

    #[test]
    fn linear_pair_is_symmetric() {
        let b = SplineBasis::new(2, 1).unwrap();
        let v = b.eval(0.5).unwrap();
        assert!((v[0] - v[1]).abs() < 1e-15);
        assert!((v[0] - 1.0).abs() < 1e-15);
        let w = b.eval(0.25).unwrap();
        assert!((w[0] - 1.5).abs() < 1e-15 && (w[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn flat_weights_give_unit_density() {
        let b = SplineBasis::cubic15();
        let w = b.flat_weights();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        for i in 1..100 {
            let v = b.eval(i as f64 / 100.0).unwrap();
            let d: f64 = v.iter().zip(&w).map(|(a, b)| a * b).sum();
            assert!((d - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn ispline_matches_quadrature_of_mspline() {
        let b = SplineBasis::cubic15();
        let rule = gauss_legendre(20);
        let mut out = vec![0.0; 15];
        for &x in &[0.0, 0.03, 0.2, 0.5, 0.61, 0.9, 0.999, 1.0] {
            b.integral_into(x, &mut out);
            // integrate span by span up to x
            let mut expect = vec![0.0; 15];
            let mut lo = 0.0;
            while lo < x {
                let hi = (((lo * 12.0).floor() + 1.0) / 12.0).min(x);
                for (i, e) in expect.iter_mut().enumerate() {
                    *e += integrate_gl(
                        |y| {
                            let mut v = vec![0.0; 15];
                            b.eval_into(y, &mut v);
                            v[i]
                        },
                        lo,
                        hi,
                        &rule,
                    );
                }
                lo = hi;
            }
            for i in 0..15 {
                assert!((out[i] - expect[i]).abs() < 1e-12, "x={x} i={i}");
            }
        }
    }

    #[test]
    fn out_of_range_rejected() {
        let b = SplineBasis::cubic15();
        assert!(b.eval(0.0).is_err());
        assert!(b.eval(1.0).is_err());
        assert!(SplineBasis::new(3, 3).is_err());
    }
}
