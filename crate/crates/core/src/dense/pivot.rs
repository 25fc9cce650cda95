//! Factorizations of square pivot blocks: Cholesky for SPD blocks, partially
//! pivoted LU otherwise. Factors are packed column-major.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub enum PivotFactor {
    /// `X = L Lᵀ`, lower triangle of `l` holds `L`.
    Cholesky { l: DMatrix<f64> },
    /// `P X = L U` with unit-lower `L` and upper `U` packed in `lu`;
    /// row `i` of `P X` is row `perm[i]` of `X`.
    Lu { lu: DMatrix<f64>, perm: Vec<usize> },
}

/// Factor a square block. `spd` selects Cholesky.
pub fn pivot_factor(x: &DMatrix<f64>, spd: bool) -> Result<PivotFactor> {
    if x.nrows() != x.ncols() {
        return Err(Error::DimensionMismatch {
            expected: x.nrows(),
            got: x.ncols(),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("pivot block"));
    }
    let tol = f64::EPSILON * x.norm();
    if spd {
        cholesky(x.clone(), tol)
    } else {
        lu(x.clone(), tol)
    }
}

/// Panel width of the blocked factorizations.
const PANEL: usize = 64;

fn cholesky(mut a: DMatrix<f64>, tol: f64) -> Result<PivotFactor> {
    let n = a.nrows();
    for k0 in (0..n).step_by(PANEL) {
        let kend = (k0 + PANEL).min(n);
        let s = a.as_mut_slice();
        for k in k0..kend {
            let d = s[k + k * n];
            if d <= 0.0 {
                return Err(Error::NotPositiveDefinite { box_id: None, level: None });
            }
            if d <= tol {
                return Err(Error::SingularPivot { box_id: None, level: None });
            }
            let lkk = d.sqrt();
            s[k + k * n] = lkk;
            for i in k + 1..n {
                s[i + k * n] /= lkk;
            }
            let (head, tail) = s.split_at_mut((k + 1) * n);
            let colk = &head[k * n..];
            for j in k + 1..kend {
                let ljk = colk[j];
                if ljk == 0.0 {
                    continue;
                }
                let colj = &mut tail[(j - k - 1) * n..(j - k) * n];
                for i in j..n {
                    colj[i] -= colk[i] * ljk;
                }
            }
        }
        if kend < n {
            let m = n - kend;
            let l21 = a.view((kend, k0), (m, kend - k0)).clone_owned();
            let l21t = l21.transpose();
            a.view_mut((kend, kend), (m, m)).gemm(-1.0, &l21, &l21t, 1.0);
        }
    }
    let s = a.as_mut_slice();
    for j in 1..n {
        for i in 0..j {
            s[i + j * n] = 0.0;
        }
    }
    Ok(PivotFactor::Cholesky { l: a })
}

fn lu(mut a: DMatrix<f64>, tol: f64) -> Result<PivotFactor> {
    let n = a.nrows();
    let mut perm: Vec<usize> = (0..n).collect();
    for k0 in (0..n).step_by(PANEL) {
        let kend = (k0 + PANEL).min(n);
        for k in k0..kend {
            let mut p = k;
            let mut best = a[(k, k)].abs();
            for i in k + 1..n {
                let v = a[(i, k)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best <= tol || best == 0.0 {
                return Err(Error::SingularPivot { box_id: None, level: None });
            }
            if p != k {
                a.swap_rows(k, p);
                perm.swap(k, p);
            }
            let s = a.as_mut_slice();
            let pivot = s[k + k * n];
            for i in k + 1..n {
                s[i + k * n] /= pivot;
            }
            let (head, tail) = s.split_at_mut((k + 1) * n);
            let colk = &head[k * n..];
            for j in k + 1..kend {
                let colj = &mut tail[(j - k - 1) * n..(j - k) * n];
                let akj = colj[k];
                if akj == 0.0 {
                    continue;
                }
                for i in k + 1..n {
                    colj[i] -= colk[i] * akj;
                }
            }
        }
        if kend < n {
            // U12 = L11⁻¹ A12, then A22 -= L21 U12
            let s = a.as_mut_slice();
            for j in kend..n {
                for k in k0..kend {
                    let v = s[k + j * n];
                    if v == 0.0 {
                        continue;
                    }
                    for i in k + 1..kend {
                        s[i + j * n] -= s[i + k * n] * v;
                    }
                }
            }
            let m = n - kend;
            let l21 = a.view((kend, k0), (m, kend - k0)).clone_owned();
            let u12 = a.view((k0, kend), (kend - k0, m)).clone_owned();
            a.view_mut((kend, kend), (m, m)).gemm(-1.0, &l21, &u12, 1.0);
        }
    }
    Ok(PivotFactor::Lu { lu: a, perm })
}

// Triangular kernels over packed column-major storage.

fn lower_solve(l: &DMatrix<f64>, x: &mut [f64], unit: bool) {
    let n = l.nrows();
    let s = l.as_slice();
    for j in 0..n {
        if !unit {
            x[j] /= s[j + j * n];
        }
        let xj = x[j];
        if xj != 0.0 {
            let col = &s[j * n..(j + 1) * n];
            for i in j + 1..n {
                x[i] -= col[i] * xj;
            }
        }
    }
}

fn lower_tr_solve(l: &DMatrix<f64>, x: &mut [f64], unit: bool) {
    let n = l.nrows();
    let s = l.as_slice();
    for j in (0..n).rev() {
        let col = &s[j * n..(j + 1) * n];
        let mut acc = x[j];
        for i in j + 1..n {
            acc -= col[i] * x[i];
        }
        x[j] = if unit { acc } else { acc / col[j] };
    }
}

fn upper_solve(u: &DMatrix<f64>, x: &mut [f64]) {
    let n = u.nrows();
    let s = u.as_slice();
    for j in (0..n).rev() {
        x[j] /= s[j + j * n];
        let xj = x[j];
        if xj != 0.0 {
            let col = &s[j * n..(j + 1) * n];
            for i in 0..j {
                x[i] -= col[i] * xj;
            }
        }
    }
}

fn upper_tr_solve(u: &DMatrix<f64>, x: &mut [f64]) {
    let n = u.nrows();
    let s = u.as_slice();
    for j in 0..n {
        let col = &s[j * n..(j + 1) * n];
        let mut acc = x[j];
        for i in 0..j {
            acc -= col[i] * x[i];
        }
        x[j] = acc / col[j];
    }
}

fn lower_mul(l: &DMatrix<f64>, x: &mut [f64], unit: bool) {
    let n = l.nrows();
    let s = l.as_slice();
    for j in (0..n).rev() {
        let col = &s[j * n..(j + 1) * n];
        let xj = x[j];
        if !unit {
            x[j] = col[j] * xj;
        }
        for i in j + 1..n {
            x[i] += col[i] * xj;
        }
    }
}

fn lower_tr_mul(l: &DMatrix<f64>, x: &mut [f64], unit: bool) {
    let n = l.nrows();
    let s = l.as_slice();
    for j in 0..n {
        let col = &s[j * n..(j + 1) * n];
        let mut acc = if unit { x[j] } else { col[j] * x[j] };
        for i in j + 1..n {
            acc += col[i] * x[i];
        }
        x[j] = acc;
    }
}

fn upper_mul(u: &DMatrix<f64>, x: &mut [f64]) {
    let n = u.nrows();
    let s = u.as_slice();
    for j in 0..n {
        let col = &s[j * n..(j + 1) * n];
        let xj = x[j];
        for i in 0..j {
            x[i] += col[i] * xj;
        }
        x[j] = col[j] * xj;
    }
}

fn upper_tr_mul(u: &DMatrix<f64>, x: &mut [f64]) {
    let n = u.nrows();
    let s = u.as_slice();
    for j in (0..n).rev() {
        let col = &s[j * n..(j + 1) * n];
        let mut acc = 0.0;
        for i in 0..=j {
            acc += col[i] * x[i];
        }
        x[j] = acc;
    }
}

impl PivotFactor {
    pub fn dim(&self) -> usize {
        match self {
            PivotFactor::Cholesky { l } => l.nrows(),
            PivotFactor::Lu { lu, .. } => lu.nrows(),
        }
    }

    pub fn is_spd(&self) -> bool {
        matches!(self, PivotFactor::Cholesky { .. })
    }

    /// Bytes of dense storage held by the factor.
    pub fn nbytes(&self) -> usize {
        let n = self.dim();
        let body = n * n * std::mem::size_of::<f64>();
        match self {
            PivotFactor::Cholesky { .. } => body,
            PivotFactor::Lu { .. } => body + n * std::mem::size_of::<usize>(),
        }
    }

    /// `x <- X⁻¹ x`
    pub fn solve_in_place(&self, x: &mut [f64]) {
        match self {
            PivotFactor::Cholesky { l } => {
                lower_solve(l, x, false);
                lower_tr_solve(l, x, false);
            }
            PivotFactor::Lu { lu, perm } => {
                let mut y: Vec<f64> = perm.iter().map(|&p| x[p]).collect();
                lower_solve(lu, &mut y, true);
                upper_solve(lu, &mut y);
                x.copy_from_slice(&y);
            }
        }
    }

    /// `x <- X⁻ᵀ x`
    pub fn solve_transpose_in_place(&self, x: &mut [f64]) {
        match self {
            PivotFactor::Cholesky { .. } => self.solve_in_place(x),
            PivotFactor::Lu { lu, perm } => {
                upper_tr_solve(lu, x);
                lower_tr_solve(lu, x, true);
                let w = x.to_vec();
                for (i, &p) in perm.iter().enumerate() {
                    x[p] = w[i];
                }
            }
        }
    }

    /// `x <- X x`
    pub fn mul_in_place(&self, x: &mut [f64]) {
        match self {
            PivotFactor::Cholesky { l } => {
                lower_tr_mul(l, x, false);
                lower_mul(l, x, false);
            }
            PivotFactor::Lu { lu, perm } => {
                upper_mul(lu, x);
                lower_mul(lu, x, true);
                let y = x.to_vec();
                for (i, &p) in perm.iter().enumerate() {
                    x[p] = y[i];
                }
            }
        }
    }

    /// `x <- Xᵀ x`
    pub fn mul_transpose_in_place(&self, x: &mut [f64]) {
        match self {
            PivotFactor::Cholesky { .. } => self.mul_in_place(x),
            PivotFactor::Lu { lu, perm } => {
                let mut z: Vec<f64> = perm.iter().map(|&p| x[p]).collect();
                lower_tr_mul(lu, &mut z, true);
                upper_tr_mul(lu, &mut z);
                x.copy_from_slice(&z);
            }
        }
    }

    /// Apply the symmetric-definite square-root factor: `x <- L x`,
    /// `Lᵀ x`, `L⁻¹ x` or `L⁻ᵀ x`.
    pub fn sqrt_apply(&self, x: &mut [f64], transpose: bool, inverse: bool) -> Result<()> {
        let PivotFactor::Cholesky { l } = self else {
            return Err(Error::NotSpd);
        };
        match (transpose, inverse) {
            (false, false) => lower_mul(l, x, false),
            (true, false) => lower_tr_mul(l, x, false),
            (false, true) => lower_solve(l, x, false),
            (true, true) => lower_tr_solve(l, x, false),
        }
        Ok(())
    }

    /// Solve `X Y = B` column by column.
    pub fn solve_matrix(&self, b: &mut DMatrix<f64>) {
        for mut col in b.column_iter_mut() {
            self.solve_in_place(col.as_mut_slice());
        }
    }

    /// Solve `Xᵀ Y = B` column by column.
    pub fn solve_transpose_matrix(&self, b: &mut DMatrix<f64>) {
        for mut col in b.column_iter_mut() {
            self.solve_transpose_in_place(col.as_mut_slice());
        }
    }

    /// `log |det X|` and the sign of the determinant.
    pub fn log_abs_det(&self) -> (f64, f64) {
        match self {
            PivotFactor::Cholesky { l } => (2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>(), 1.0),
            PivotFactor::Lu { lu, perm } => {
                let mut sign = 1.0;
                let mut acc = 0.0;
                for i in 0..lu.nrows() {
                    let u = lu[(i, i)];
                    acc += u.abs().ln();
                    if u < 0.0 {
                        sign = -sign;
                    }
                }
                // parity of the permutation
                let mut seen = vec![false; perm.len()];
                for start in 0..perm.len() {
                    if seen[start] {
                        continue;
                    }
                    let mut len = 0;
                    let mut j = start;
                    while !seen[j] {
                        seen[j] = true;
                        j = perm[j];
                        len += 1;
                    }
                    if len % 2 == 0 {
                        sign = -sign;
                    }
                }
                (acc, sign)
            }
        }
    }
}
