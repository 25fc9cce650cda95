//! Block elimination of a pivot block against its coupled rows and columns.

use nalgebra::DMatrix;

use super::pivot::PivotFactor;
use crate::error::{Error, Result};

/// Output of eliminating `I` from `[A_II A_IJ; A_JI A_JJ]`.
///
/// `l_block = −A_JI A_II⁻¹` and `u_block = −A_II⁻¹ A_IJ` are the off-diagonal
/// blocks of the unit-triangular `L` and `U`; `schur` is
/// `A_JJ − A_JI A_II⁻¹ A_IJ`.
#[derive(Clone, Debug)]
pub struct Elimination {
    pub l_block: DMatrix<f64>,
    pub u_block: DMatrix<f64>,
    pub schur: DMatrix<f64>,
}

pub fn block_eliminate(
    a_ii: &PivotFactor,
    a_ji: &DMatrix<f64>,
    a_ij: &DMatrix<f64>,
    a_jj: &DMatrix<f64>,
) -> Result<Elimination> {
    let ni = a_ii.dim();
    let nj = a_jj.nrows();
    if a_ji.shape() != (nj, ni) || a_ij.shape() != (ni, nj) || a_jj.ncols() != nj {
        return Err(Error::DimensionMismatch {
            expected: ni,
            got: a_ji.ncols(),
        });
    }
    let (l_block, u_block, correction) = eliminate_coupling(a_ii, a_ji, a_ij, false);
    Ok(Elimination {
        l_block: l_block.expect("unsymmetric path always forms the L block"),
        u_block,
        schur: a_jj + correction,
    })
}

/// Form `u_block = −A_II⁻¹ A_IJ` and the additive Schur correction
/// `A_JI u_block`. With `symmetric`, `A_JI = A_IJᵀ` is assumed, the L block is
/// not formed (it equals `u_blockᵀ`) and the correction is symmetrized.
pub(crate) fn eliminate_coupling(
    a_ii: &PivotFactor,
    a_ji: &DMatrix<f64>,
    a_ij: &DMatrix<f64>,
    symmetric: bool,
) -> (Option<DMatrix<f64>>, DMatrix<f64>, DMatrix<f64>) {
    let mut u = a_ij.clone();
    a_ii.solve_matrix(&mut u);
    u.neg_mut();
    let mut corr = a_ji * &u;
    if symmetric {
        let t = corr.transpose();
        corr += t;
        corr *= 0.5;
        return (None, u, corr);
    }
    let mut lt = a_ji.transpose();
    a_ii.solve_transpose_matrix(&mut lt);
    lt.neg_mut();
    (Some(lt.transpose()), u, corr)
}
