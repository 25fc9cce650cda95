//! Column interpolative decomposition via greedy column-pivoted Householder QR.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Column split `S ∪ R` with `M(:,R) ≈ M(:,S) T`.
///
/// Indices are column positions of the compressed matrix. `skeleton` is in
/// pivot order; `interp` has shape `|S| × |R|` with columns in `redundant`
/// order.
#[derive(Clone, Debug)]
pub struct IdResult {
    pub skeleton: Vec<usize>,
    pub redundant: Vec<usize>,
    pub interp: DMatrix<f64>,
}

impl IdResult {
    pub fn rank(&self) -> usize {
        self.skeleton.len()
    }

    /// `‖M(:,R) − M(:,S) T‖` in the Frobenius norm.
    pub fn residual(&self, m: &DMatrix<f64>) -> f64 {
        let ms = m.select_columns(&self.skeleton);
        let mr = m.select_columns(&self.redundant);
        (mr - ms * &self.interp).norm()
    }
}

/// ε-accurate ID of `m`.
///
/// Pivoting stops at step `k` once the Frobenius norm of the trailing block
/// falls to `eps` times the first pivot's column norm; since that pivot norm
/// never exceeds `‖M‖₂`, the returned `T` satisfies
/// `‖M(:,R) − M(:,S) T‖₂ ≤ eps ‖M‖₂`. Ties between equal column norms go to
/// the lowest original column index.
pub fn interp_decomp(m: &DMatrix<f64>, eps: f64) -> Result<IdResult> {
    if !(eps >= 0.0) {
        return Err(Error::InvalidInput(format!("ID tolerance must be nonnegative, got {eps}")));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("ID input"));
    }
    let (rows, cols) = m.shape();
    let mut perm: Vec<usize> = (0..cols).collect();
    if rows == 0 || cols == 0 {
        return Ok(IdResult {
            skeleton: Vec::new(),
            redundant: perm,
            interp: DMatrix::zeros(0, cols),
        });
    }

    let mut a = m.clone();
    let mut norms = vec![0.0f64; cols];
    let mut lead = 0.0;
    let mut k = 0;
    let steps = rows.min(cols);
    let mut v = vec![0.0f64; rows];
    while k < steps {
        let s = a.as_slice();
        for c in k..cols {
            norms[c] = s[c * rows + k..(c + 1) * rows].iter().map(|x| x * x).sum();
        }
        let mut p = k;
        for c in k + 1..cols {
            if norms[c] > norms[p] || (norms[c] == norms[p] && perm[c] < perm[p]) {
                p = c;
            }
        }
        let trailing = norms[k..].iter().sum::<f64>().sqrt();
        if k == 0 {
            lead = norms[p].sqrt();
        }
        if trailing <= eps * lead || trailing == 0.0 {
            break;
        }
        if p != k {
            a.swap_columns(k, p);
            perm.swap(k, p);
            norms.swap(k, p);
        }

        // Householder reflector for column k, rows k..
        let s = a.as_mut_slice();
        let colk = &s[k * rows..(k + 1) * rows];
        let xnorm = norms[k].sqrt();
        let alpha = if colk[k] >= 0.0 { -xnorm } else { xnorm };
        let len = rows - k;
        v[..len].copy_from_slice(&colk[k..]);
        v[0] -= alpha;
        let vnorm2: f64 = v[..len].iter().map(|x| x * x).sum();
        if vnorm2 > 0.0 {
            let scale = 2.0 / vnorm2;
            for c in k + 1..cols {
                let col = &mut s[c * rows + k..(c + 1) * rows];
                let dot: f64 = col.iter().zip(&v[..len]).map(|(x, y)| x * y).sum();
                let f = dot * scale;
                for (x, y) in col.iter_mut().zip(&v[..len]) {
                    *x -= f * y;
                }
            }
        }
        s[k * rows + k] = alpha;
        for x in &mut s[k * rows + k + 1..(k + 1) * rows] {
            *x = 0.0;
        }
        k += 1;
    }

    // T = R11⁻¹ R12 by back substitution
    let nr = cols - k;
    let mut t = DMatrix::zeros(k, nr);
    for j in 0..nr {
        for i in (0..k).rev() {
            let mut acc = a[(i, k + j)];
            for l in i + 1..k {
                acc -= a[(i, l)] * t[(l, j)];
            }
            t[(i, j)] = acc / a[(i, i)];
        }
    }

    Ok(IdResult {
        skeleton: perm[..k].to_vec(),
        redundant: perm[k..].to_vec(),
        interp: t,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_matrix_is_all_redundant() {
        let m = DMatrix::zeros(4, 3);
        let id = interp_decomp(&m, 1e-6).unwrap();
        assert!(id.skeleton.is_empty());
        assert_eq!(id.redundant, vec![0, 1, 2]);
        assert_eq!(id.interp.shape(), (0, 3));
        assert_eq!(id.residual(&m), 0.0);
    }

    #[test]
    fn empty_rows_degenerate() {
        let m = DMatrix::<f64>::zeros(0, 5);
        let id = interp_decomp(&m, 1e-6).unwrap();
        assert_eq!(id.redundant.len(), 5);
    }

    #[test]
    fn rank_one_columns() {
        let c = [1.0, -2.0, 0.5, 3.0];
        let m = DMatrix::from_fn(4, 3, |i, j| c[i] * [1.0, 1.0, 2.0][j]);
        let id = interp_decomp(&m, 1e-10).unwrap();
        assert_eq!(id.skeleton, vec![2]);
        assert!(id.residual(&m) < 1e-14 * m.norm());
        assert!((id.interp[(0, 0)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn full_rank_random_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let m = DMatrix::from_fn(20, 10, |_, _| rng.gen_range(-1.0..1.0));
        let id = interp_decomp(&m, 1e-12).unwrap();
        let sv = m.clone().svd(false, false).singular_values;
        let numerical_rank = sv.iter().filter(|&&s| s > 1e-12 * sv[0]).count();
        assert_eq!(numerical_rank, 10);
        assert_eq!(id.rank(), 10);
        assert!(id.residual(&m) <= 1e-12 * sv[0]);
    }

    #[test]
    fn non_finite_rejected() {
        let mut m = DMatrix::zeros(2, 2);
        m[(1, 1)] = f64::NAN;
        assert!(matches!(interp_decomp(&m, 1e-3), Err(Error::NonFinite(_))));
    }

    #[test]
    fn ties_pick_lowest_column() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let id = interp_decomp(&m, 0.5).unwrap();
        assert_eq!(id.skeleton[0], 0);
    }
}
