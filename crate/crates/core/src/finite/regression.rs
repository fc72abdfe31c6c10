//! Least-squares regression on a finite function basis of `x ∈ R^d`.
//!
//! Particles are drawn from `ρ^{-1}/Z_ρ`, so the unweighted least-squares
//! fit over the ensemble is the `L²_ρ` projection onto the basis span.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

/// Relative size of an `R` diagonal entry below which the design matrix is
/// treated as rank deficient.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Basis {
    /// Monomials of total degree `≤ degree`.
    Polynomial { degree: usize },
    /// Products of Chebyshev polynomials `T_n(ξ)` in the bounded coordinate
    /// `ξ = x/sqrt(x² + scale²)`, total degree `≤ degree`.
    MappedChebyshev { degree: usize, scale: f64 },
}

impl Default for Basis {
    fn default() -> Self {
        Basis::Polynomial { degree: 3 }
    }
}

fn exponents(dim: usize, degree: usize) -> Vec<Vec<usize>> {
    match dim {
        1 => (0..=degree).map(|a| vec![a]).collect(),
        _ => {
            let mut out = Vec::new();
            for total in 0..=degree {
                for a in (0..=total).rev() {
                    let mut rest = exponents(dim - 1, total - a)
                        .into_iter()
                        .filter(|e| e.iter().sum::<usize>() == total - a)
                        .collect::<Vec<_>>();
                    for e in rest.iter_mut() {
                        e.insert(0, a);
                    }
                    out.extend(rest);
                }
            }
            out
        }
    }
}

/// `T_0..T_n` at `t`.
fn chebyshev(t: f64, n: usize, out: &mut [f64]) {
    out[0] = 1.0;
    if n >= 1 {
        out[1] = t;
    }
    for k in 2..=n {
        out[k] = 2.0 * t * out[k - 1] - out[k - 2];
    }
}

impl Basis {
    pub fn degree(&self) -> usize {
        match *self {
            Basis::Polynomial { degree } | Basis::MappedChebyshev { degree, .. } => degree,
        }
    }

    pub fn with_degree(&self, degree: usize) -> Self {
        match *self {
            Basis::Polynomial { .. } => Basis::Polynomial { degree },
            Basis::MappedChebyshev { scale, .. } => Basis::MappedChebyshev { degree, scale },
        }
    }

    pub fn len(&self, dim: usize) -> usize {
        exponents(dim, self.degree()).len()
    }

    pub fn is_empty(&self, _dim: usize) -> bool {
        false
    }

    /// Feature vector at `x`.
    pub fn features(&self, x: &[f64]) -> Vec<f64> {
        let exps = exponents(x.len(), self.degree());
        let mut out = vec![0.0; exps.len()];
        let mut scratch = vec![0.0; x.len() * (self.degree() + 1)];
        self.features_into(&exps, x, &mut scratch, &mut out);
        out
    }

    fn features_into(&self, exps: &[Vec<usize>], x: &[f64], uni: &mut [f64], out: &mut [f64]) {
        let deg = self.degree();
        let w = deg + 1;
        for (c, &xc) in x.iter().enumerate() {
            let row = &mut uni[c * w..(c + 1) * w];
            match *self {
                Basis::Polynomial { .. } => {
                    row[0] = 1.0;
                    for k in 1..=deg {
                        row[k] = row[k - 1] * xc;
                    }
                }
                Basis::MappedChebyshev { scale, .. } => {
                    let t = xc / (xc * xc + scale * scale).sqrt();
                    chebyshev(t, deg, row);
                }
            }
        }
        for (o, e) in out.iter_mut().zip(exps) {
            *o = e.iter().enumerate().map(|(c, &a)| uni[c * w + a]).product();
        }
    }

    /// `Σ_k coeffs_k φ_k(x)`.
    pub fn evaluate(&self, coeffs: &[f64], x: &[f64]) -> f64 {
        self.features(x).iter().zip(coeffs).map(|(a, b)| a * b).sum()
    }
}

/// A factorised design matrix ready to project any right-hand side.
#[derive(Debug, Clone)]
pub struct LeastSquares {
    basis: Basis,
    design: DMatrix<f64>,
    scales: Vec<f64>,
    qr: nalgebra::linalg::QR<f64, nalgebra::Dyn, nalgebra::Dyn>,
    reduced: bool,
}

impl LeastSquares {
    /// Factorises the design matrix at particle-major `points`, lowering the
    /// degree until the system has full column rank.
    pub fn new(basis: Basis, dim: usize, points: &[f64]) -> Result<Self> {
        if dim == 0 || points.is_empty() || !points.len().is_multiple_of(dim) {
            return Err(LabError::Argument("regression points do not match dimension".into()));
        }
        let m = points.len() / dim;
        let mut current = basis;
        loop {
            let p = current.len(dim);
            if p <= m {
                let exps = exponents(dim, current.degree());
                let mut uni = vec![0.0; dim * (current.degree() + 1)];
                let mut row = vec![0.0; p];
                let mut design = DMatrix::zeros(m, p);
                for i in 0..m {
                    current.features_into(&exps, &points[i * dim..(i + 1) * dim], &mut uni, &mut row);
                    for (k, v) in row.iter().enumerate() {
                        design[(i, k)] = *v;
                    }
                }
                let scales: Vec<f64> = (0..p)
                    .map(|k| {
                        let s = (design.column(k).norm_squared() / m as f64).sqrt();
                        if s > 0.0 && s.is_finite() {
                            s
                        } else {
                            1.0
                        }
                    })
                    .collect();
                let mut scaled = design.clone();
                for (k, s) in scales.iter().enumerate() {
                    scaled.column_mut(k).scale_mut(1.0 / s);
                }
                if scaled.iter().all(|v| v.is_finite()) {
                    let qr = scaled.qr();
                    let r = qr.r();
                    let diag: Vec<f64> = (0..p).map(|k| r[(k, k)].abs()).collect();
                    let top = diag.iter().cloned().fold(0.0, f64::max);
                    if top > 0.0 && diag.iter().all(|d| *d > RANK_TOL * top) {
                        let reduced = current != basis;
                        if reduced {
                            log::warn!(
                                "regression design rank deficient at degree {}; reduced to {}",
                                basis.degree(),
                                current.degree()
                            );
                        }
                        return Ok(Self { basis: current, design, scales, qr, reduced });
                    }
                }
            }
            if current.degree() == 0 {
                return Err(LabError::Numerical {
                    particle: 0,
                    message: "regression design singular even at degree 0".into(),
                });
            }
            current = current.with_degree(current.degree() - 1);
        }
    }

    pub fn basis(&self) -> Basis {
        self.basis
    }

    pub fn was_reduced(&self) -> bool {
        self.reduced
    }

    /// Coefficients of the projection of `rhs`.
    pub fn coefficients(&self, rhs: &[f64]) -> Vec<f64> {
        let p = self.scales.len();
        let mut b = DVector::from_column_slice(rhs);
        self.qr.q_tr_mul(&mut b);
        let r = self.qr.r();
        let top = b.rows(0, p).into_owned();
        let c = r
            .solve_upper_triangular(&top)
            .unwrap_or_else(|| DVector::zeros(p));
        c.iter().zip(&self.scales).map(|(c, s)| c / s).collect()
    }

    /// Fitted values at the design points.
    pub fn fitted(&self, coeffs: &[f64]) -> Vec<f64> {
        let c = DVector::from_column_slice(coeffs);
        (&self.design * c).iter().copied().collect()
    }

    /// Coefficients and fitted values.
    pub fn project(&self, rhs: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let c = self.coefficients(rhs);
        let f = self.fitted(&c);
        (c, f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponent_counts() {
        assert_eq!(Basis::Polynomial { degree: 3 }.len(1), 4);
        assert_eq!(Basis::Polynomial { degree: 3 }.len(2), 10);
        assert_eq!(Basis::Polynomial { degree: 2 }.features(&[2.0, 3.0]), vec![1.0, 2.0, 3.0, 4.0, 6.0, 9.0]);
    }

    #[test]
    fn recovers_polynomial_exactly() {
        let xs: Vec<f64> = (0..50).map(|i| -3.0 + 0.13 * i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 1.0 - 2.0 * x + 0.5 * x * x * x).collect();
        let ls = LeastSquares::new(Basis::Polynomial { degree: 3 }, 1, &xs).unwrap();
        let (c, f) = ls.project(&ys);
        for (a, b) in c.iter().zip([1.0, -2.0, 0.0, 0.5]) {
            assert!((a - b).abs() < 1e-10);
        }
        for (a, b) in f.iter().zip(&ys) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_rhs_gives_zero_coefficients() {
        let xs: Vec<f64> = (0..20).map(|i| i as f64 * 0.3).collect();
        let ls = LeastSquares::new(Basis::Polynomial { degree: 2 }, 1, &xs).unwrap();
        assert!(ls.coefficients(&[0.0; 20]).iter().all(|c| *c == 0.0));
    }

    #[test]
    fn singular_design_reduces_degree() {
        // two distinct abscissae support at most a line
        let xs = vec![1.0, 1.0, 2.0, 2.0, 1.0];
        let ls = LeastSquares::new(Basis::Polynomial { degree: 3 }, 1, &xs).unwrap();
        assert!(ls.was_reduced());
        assert_eq!(ls.basis().degree(), 1);
    }

    #[test]
    fn chebyshev_features_are_bounded() {
        let b = Basis::MappedChebyshev { degree: 8, scale: 2.0 };
        for x in [-1e6, -3.0, 0.0, 0.5, 40.0] {
            assert!(b.features(&[x]).iter().all(|v| v.abs() <= 1.0 + 1e-12));
        }
    }
}
