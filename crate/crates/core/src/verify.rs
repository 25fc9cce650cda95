//! Reference operators and estimators: dense assembly, power-method norm
//! estimates and conjugate gradients.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::factor::Factorization;
use crate::source::MatrixSource;

/// Largest matrix `dense_assemble` will build by default.
pub const DENSE_LIMIT: usize = 16384;

/// A square linear operator with an adjoint.
pub trait LinOp {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64]) -> Vec<f64>;
    fn apply_adjoint(&self, x: &[f64]) -> Vec<f64>;
}

impl LinOp for DMatrix<f64> {
    fn dim(&self) -> usize {
        self.nrows()
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        (self * DVector::from_column_slice(x)).data.into()
    }

    fn apply_adjoint(&self, x: &[f64]) -> Vec<f64> {
        self.tr_mul(&DVector::from_column_slice(x)).data.into()
    }
}

impl<T: LinOp + ?Sized> LinOp for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        (**self).apply(x)
    }
    fn apply_adjoint(&self, x: &[f64]) -> Vec<f64> {
        (**self).apply_adjoint(x)
    }
}

/// `F` as an operator.
impl LinOp for Factorization {
    fn dim(&self) -> usize {
        self.len()
    }
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        Factorization::apply(self, x).expect("dimension checked by caller")
    }
    fn apply_adjoint(&self, x: &[f64]) -> Vec<f64> {
        self.apply_transpose(x).expect("dimension checked by caller")
    }
}

/// `F⁻¹` as an operator.
pub struct Inverse<'a>(pub &'a Factorization);

impl LinOp for Inverse<'_> {
    fn dim(&self) -> usize {
        self.0.len()
    }
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.0.solve(x).expect("dimension checked by caller")
    }
    fn apply_adjoint(&self, x: &[f64]) -> Vec<f64> {
        self.0.solve_transpose(x).expect("dimension checked by caller")
    }
}

pub struct Identity(pub usize);

impl LinOp for Identity {
    fn dim(&self) -> usize {
        self.0
    }
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.to_vec()
    }
    fn apply_adjoint(&self, x: &[f64]) -> Vec<f64> {
        x.to_vec()
    }
}

/// `A B`
pub struct Product<A, B>(pub A, pub B);

impl<A: LinOp, B: LinOp> LinOp for Product<A, B> {
    fn dim(&self) -> usize {
        self.0.dim()
    }
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.0.apply(&self.1.apply(x))
    }
    fn apply_adjoint(&self, x: &[f64]) -> Vec<f64> {
        self.1.apply_adjoint(&self.0.apply_adjoint(x))
    }
}

/// Original kernel matrix on `ids`, ignoring any factorization updates.
pub fn dense_assemble(src: &MatrixSource, ids: &[usize]) -> Result<DMatrix<f64>> {
    dense_assemble_limited(src, ids, DENSE_LIMIT)
}

pub fn dense_assemble_limited(src: &MatrixSource, ids: &[usize], limit: usize) -> Result<DMatrix<f64>> {
    if ids.len() > limit {
        return Err(Error::TooLarge { n: ids.len(), limit });
    }
    if let Some(&d) = ids.iter().find(|&&d| d >= src.len()) {
        return Err(Error::InvalidInput(format!("index {d} out of range")));
    }
    Ok(DMatrix::from_fn(ids.len(), ids.len(), |a, b| src.raw_entry(ids[a], ids[b])))
}

/// Power-method estimate of an operator norm.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormEstimate {
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn power_method(dim: usize, op: impl Fn(&[f64]) -> Vec<f64>, op_adj: impl Fn(&[f64]) -> Vec<f64>, tol: f64, seed: u64) -> NormEstimate {
    const MAX_ITER: usize = 500;
    // successive changes understate the remaining error when the top
    // singular values are clustered
    let stop = 0.1 * tol;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let nx = norm2(&x);
    x.iter_mut().for_each(|v| *v /= nx);
    let mut prev = 0.0;
    for it in 1..=MAX_ITER {
        let y = op(&x);
        let s = norm2(&y);
        if s == 0.0 {
            return NormEstimate {
                value: 0.0,
                iterations: it,
                converged: true,
            };
        }
        let z = op_adj(&y);
        let nz = norm2(&z);
        if it > 1 && (s - prev).abs() <= stop * s {
            return NormEstimate {
                value: s,
                iterations: it,
                converged: true,
            };
        }
        prev = s;
        if nz == 0.0 {
            break;
        }
        x = z.into_iter().map(|v| v / nz).collect();
    }
    NormEstimate {
        value: prev,
        iterations: MAX_ITER,
        converged: false,
    }
}

/// `‖A‖₂` by power iteration on `AᵀA` from a seeded Gaussian start.
pub fn est_opnorm<A: LinOp>(a: &A, tol: f64, seed: u64) -> NormEstimate {
    power_method(a.dim(), |x| a.apply(x), |y| a.apply_adjoint(y), tol, seed)
}

/// `‖A − B‖₂` by power iteration on `(A − B)ᵀ(A − B)`.
pub fn est_opnorm_diff<A: LinOp, B: LinOp>(a: &A, b: &B, tol: f64, seed: u64) -> Result<NormEstimate> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    let sub = |u: Vec<f64>, v: Vec<f64>| u.into_iter().zip(v).map(|(p, q)| p - q).collect::<Vec<f64>>();
    Ok(power_method(
        a.dim(),
        |x| sub(a.apply(x), b.apply(x)),
        |y| sub(a.apply_adjoint(y), b.apply_adjoint(y)),
        tol,
        seed,
    ))
}

/// Power-method tolerance used for the reported error metrics.
pub const METRIC_TOL: f64 = 1e-2;

/// `‖K − F‖ / ‖K‖`
pub fn forward_error<K: LinOp>(k: &K, f: &Factorization, seed: u64) -> Result<f64> {
    let diff = est_opnorm_diff(k, f, METRIC_TOL, seed)?;
    let norm = est_opnorm(k, METRIC_TOL, seed.wrapping_add(1));
    Ok(diff.value / norm.value)
}

/// `‖I − K F⁻¹‖`
pub fn inverse_error<K: LinOp>(k: &K, f: &Factorization, seed: u64) -> Result<f64> {
    let kf = Product(k, Inverse(f));
    Ok(est_opnorm_diff(&Identity(f.len()), &kf, METRIC_TOL, seed)?.value)
}

#[derive(Clone, Debug)]
pub struct PcgResult {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// Relative residual `‖b − A x‖ / ‖b‖` after each iteration, starting
    /// with the initial guess.
    pub residuals: Vec<f64>,
    pub converged: bool,
}

/// Preconditioned conjugate gradients from a zero initial guess.
pub fn pcg_solve<A: LinOp>(a: &A, m_inv: Option<&dyn LinOp>, b: &[f64], rtol: f64, maxit: usize) -> Result<PcgResult> {
    let n = a.dim();
    if b.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: b.len() });
    }
    let precond = |r: &[f64]| m_inv.map_or_else(|| r.to_vec(), |m| m.apply(r));
    let dot = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(p, q)| p * q).sum::<f64>();
    let bnorm = norm2(b);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok(PcgResult {
            x,
            iterations: 0,
            residuals: vec![0.0],
            converged: true,
        });
    }
    let mut r = b.to_vec();
    let mut z = precond(&r);
    let mut rz = dot(&r, &z);
    let mut p = z.clone();
    let mut residuals = vec![1.0];
    for it in 1..=maxit {
        if !(rz > 0.0) {
            return Err(Error::CgBreakdown(it));
        }
        let ap = a.apply(&p);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::CgBreakdown(it));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rel = norm2(&r) / bnorm;
        residuals.push(rel);
        if rel <= rtol {
            return Ok(PcgResult {
                x,
                iterations: it,
                residuals,
                converged: true,
            });
        }
        z = precond(&r);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Ok(PcgResult {
        x,
        iterations: maxit,
        residuals,
        converged: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random(n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn norm_of_identical_operators_is_zero() {
        let a = random(20, 1);
        let e = est_opnorm_diff(&a, &a.clone(), 1e-2, 0).unwrap();
        assert_eq!(e.value, 0.0);
    }

    #[test]
    fn scaled_identity() {
        let a = DMatrix::<f64>::identity(10, 10) * 2.0;
        let e = est_opnorm_diff(&a, &Identity(10), 1e-2, 0).unwrap();
        assert!((e.value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn random_pair_matches_svd() {
        let a = random(50, 2);
        let b = random(50, 3);
        let sv = (&a - &b).singular_values().max();
        let e = est_opnorm_diff(&a, &b, 1e-2, 7).unwrap();
        assert!(e.converged);
        assert!((e.value - sv).abs() <= 1e-2 * sv, "{} vs {}", e.value, sv);
        // fixed seed reproduces exactly
        assert_eq!(e, est_opnorm_diff(&a, &b, 1e-2, 7).unwrap());
    }

    #[test]
    fn adjoint_consistency() {
        let a = random(30, 4);
        let op = Product(&a, &a);
        let x: Vec<f64> = (0..30).map(|i| (i as f64).cos()).collect();
        let y: Vec<f64> = (0..30).map(|i| (i as f64).sin()).collect();
        let lhs: f64 = op.apply(&x).iter().zip(&y).map(|(p, q)| p * q).sum();
        let rhs: f64 = x.iter().zip(&op.apply_adjoint(&y)).map(|(p, q)| p * q).sum();
        assert!((lhs - rhs).abs() < 1e-12 * lhs.abs().max(1.0));
    }

    #[test]
    fn cg_on_identity_takes_one_step() {
        let b = vec![1.0, 2.0, 3.0];
        let r = pcg_solve(&Identity(3), None, &b, 1e-12, 10).unwrap();
        assert_eq!(r.iterations, 1);
        assert_eq!(r.x, b);
    }

    #[test]
    fn cg_error_decreases_in_energy_norm() {
        let g = random(40, 5);
        let a = g.tr_mul(&g) + DMatrix::identity(40, 40);
        let xs: Vec<f64> = (0..40).map(|i| (i as f64 * 0.3).sin()).collect();
        let b = a.apply(&xs);
        let mut last = f64::INFINITY;
        for k in 1..30 {
            let r = pcg_solve(&a, None, &b, 0.0, k).unwrap();
            let e = DVector::from_iterator(40, r.x.iter().zip(&xs).map(|(p, q)| p - q));
            let energy = e.dot(&(&a * &e)).sqrt();
            assert!(energy <= last * (1.0 + 1e-10));
            last = energy;
        }
    }

    #[test]
    fn cg_detects_indefinite_operator() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0]));
        assert!(matches!(pcg_solve(&a, None, &[1.0, 1.0], 1e-12, 10), Err(Error::CgBreakdown(_))));
    }

    #[test]
    fn dense_guard() {
        let pts = crate::problems::random_points_2d(8, 0).unwrap();
        let src = crate::problems::build_gaussian_spd(pts, 0.5, 0.0).unwrap();
        let ids: Vec<usize> = (0..8).collect();
        assert!(matches!(dense_assemble_limited(&src, &ids, 4), Err(Error::TooLarge { .. })));
        let k = dense_assemble(&src, &ids).unwrap();
        assert!((&k - k.transpose()).norm() == 0.0);
    }
}
