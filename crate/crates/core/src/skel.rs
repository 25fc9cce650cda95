//! Single-box skeletonization steps and their stored operators.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dense::{eliminate_coupling, interp_decomp, pivot_factor, PivotFactor};
use crate::error::{Error, Result};
use crate::geometry::{active_dof_sets, ActiveState, Tree, DEFAULT_PROXY_RADIUS};
use crate::source::MatrixSource;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SkelKind {
    /// Compress against the far field; the near field stays coupled.
    Strong,
    /// Compress against everything outside the box.
    Weak,
}

/// How far-field interactions are sampled for the ID.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Compression {
    /// Kernel evaluations against `n_p` points on a circle/sphere of
    /// `radius` box sidelengths, plus explicit rows for the ring of boxes
    /// inside it.
    Proxy { n_p: usize, radius: f64 },
    /// Every far-field row and column, read from the matrix.
    Direct,
}

impl Compression {
    pub fn proxy(n_p: usize) -> Self {
        Compression::Proxy {
            n_p,
            radius: DEFAULT_PROXY_RADIUS,
        }
    }
}

/// Parameters shared by every step of a factorization.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepParams {
    pub eps: f64,
    pub compression: Compression,
    /// Factor pivot blocks by Cholesky; requires a symmetric source.
    pub spd: bool,
}

/// Stored operators of one skeletonization step.
///
/// With `J = joint` (skeleton first, then near field when strong), the
/// step is `V = L_T⁻¹ L⁻¹` and `W = U⁻¹ U_T⁻¹`, where `U_T` / `L_T` apply
/// the interpolation `T` and `L` / `U` eliminate the redundant pivot block
/// against `J`. `l_block` is absent for symmetric sources, where it equals
/// `u_blockᵀ`.
#[derive(Clone, Debug)]
pub struct SkelFactor {
    pub box_id: usize,
    pub level: usize,
    pub kind: SkelKind,
    pub redundant: Vec<usize>,
    pub joint: Vec<usize>,
    pub n_skel: usize,
    pub interp: DMatrix<f64>,
    pub u_block: DMatrix<f64>,
    pub l_block: Option<DMatrix<f64>>,
}

fn gather(x: &[f64], idx: &[usize]) -> DVector<f64> {
    DVector::from_iterator(idx.len(), idx.iter().map(|&i| x[i]))
}

fn scatter_add(x: &mut [f64], idx: &[usize], v: &DVector<f64>, sign: f64) {
    for (k, &i) in idx.iter().enumerate() {
        x[i] += sign * v[k];
    }
}

impl SkelFactor {
    pub fn skeleton(&self) -> &[usize] {
        &self.joint[..self.n_skel]
    }

    pub fn near(&self) -> &[usize] {
        &self.joint[self.n_skel..]
    }

    pub fn nbytes(&self) -> usize {
        let l = self.l_block.as_ref().map_or(0, |m| m.len());
        8 * (self.interp.len() + self.u_block.len() + l)
    }

    fn l_mul(&self, v: &DVector<f64>) -> DVector<f64> {
        match &self.l_block {
            Some(l) => l * v,
            None => self.u_block.tr_mul(v),
        }
    }

    fn l_tr_mul(&self, v: &DVector<f64>) -> DVector<f64> {
        match &self.l_block {
            Some(l) => l.tr_mul(v),
            None => &self.u_block * v,
        }
    }

    // x_R += ±Tᵀ x_S
    fn t_tr_step(&self, x: &mut [f64], sign: f64) {
        let xs = gather(x, self.skeleton());
        scatter_add(x, &self.redundant, &self.interp.tr_mul(&xs), sign);
    }

    // x_S += ±T x_R
    fn t_step(&self, x: &mut [f64], sign: f64) {
        let xr = gather(x, &self.redundant);
        scatter_add(x, &self.joint[..self.n_skel], &(&self.interp * &xr), sign);
    }

    pub fn apply_v(&self, x: &mut [f64]) {
        let xr = gather(x, &self.redundant);
        scatter_add(x, &self.joint, &self.l_mul(&xr), -1.0);
        self.t_tr_step(x, 1.0);
    }

    pub fn apply_w(&self, x: &mut [f64]) {
        self.t_step(x, 1.0);
        let xj = gather(x, &self.joint);
        scatter_add(x, &self.redundant, &(&self.u_block * &xj), -1.0);
    }

    pub fn apply_v_inv(&self, x: &mut [f64]) {
        self.t_tr_step(x, -1.0);
        let xr = gather(x, &self.redundant);
        scatter_add(x, &self.joint, &self.l_mul(&xr), 1.0);
    }

    pub fn apply_w_inv(&self, x: &mut [f64]) {
        let xj = gather(x, &self.joint);
        scatter_add(x, &self.redundant, &(&self.u_block * &xj), 1.0);
        self.t_step(x, -1.0);
    }

    pub fn apply_vt(&self, x: &mut [f64]) {
        self.t_step(x, 1.0);
        let xj = gather(x, &self.joint);
        scatter_add(x, &self.redundant, &self.l_tr_mul(&xj), -1.0);
    }

    pub fn apply_wt(&self, x: &mut [f64]) {
        let xr = gather(x, &self.redundant);
        scatter_add(x, &self.joint, &self.u_block.tr_mul(&xr), -1.0);
        self.t_tr_step(x, 1.0);
    }

    pub fn apply_vt_inv(&self, x: &mut [f64]) {
        let xj = gather(x, &self.joint);
        scatter_add(x, &self.redundant, &self.l_tr_mul(&xj), 1.0);
        self.t_step(x, -1.0);
    }

    pub fn apply_wt_inv(&self, x: &mut [f64]) {
        self.t_tr_step(x, -1.0);
        let xr = gather(x, &self.redundant);
        scatter_add(x, &self.joint, &self.u_block.tr_mul(&xr), 1.0);
    }
}

/// A completed step: stored operators plus the factored redundant block.
#[derive(Clone, Debug)]
pub struct SkelStep {
    pub factor: SkelFactor,
    pub pivot: PivotFactor,
}

fn stack(blocks: Vec<DMatrix<f64>>, ncols: usize) -> DMatrix<f64> {
    let nrows = blocks.iter().map(|b| b.nrows()).sum();
    let mut m = DMatrix::zeros(nrows, ncols);
    let mut r = 0;
    for b in blocks {
        m.view_mut((r, 0), (b.nrows(), ncols)).copy_from(&b);
        r += b.nrows();
    }
    m
}

/// Rows sampling the interactions of `b` with everything outside `b`
/// except `skip`, given the explicitly listed ring `ring` and the count of
/// active DOFs beyond it.
#[allow(clippy::too_many_arguments)]
fn compression_rows(
    src: &MatrixSource,
    tree: &Tree,
    state: &ActiveState,
    box_id: usize,
    b: &[usize],
    skip: &[usize],
    ring: &[usize],
    beyond: usize,
    compression: Compression,
) -> Result<DMatrix<f64>> {
    let symmetric = src.is_symmetric();
    let rows_for = |others: &[usize]| -> Result<Vec<DMatrix<f64>>> {
        let mut out = Vec::new();
        if !others.is_empty() {
            out.push(src.entries(others, b)?);
            if !symmetric {
                out.push(src.entries(b, others)?.transpose());
            }
        }
        Ok(out)
    };
    let blocks = match compression {
        Compression::Proxy { n_p, radius } => {
            let mut blocks = rows_for(ring)?;
            if beyond > 0 {
                let proxy = tree.proxy_points(box_id, n_p, radius)?;
                blocks.push(src.proxy_rows(b, &proxy));
            }
            blocks
        }
        Compression::Direct => {
            let mut excluded = vec![false; src.len()];
            for &d in b.iter().chain(skip) {
                excluded[d] = true;
            }
            let far: Vec<usize> = state
                .active_dofs()
                .into_iter()
                .filter(|&d| !excluded[d])
                .collect();
            rows_for(&far)?
        }
    };
    Ok(stack(blocks, b.len()))
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}

/// Form the transformed blocks, eliminate `R` against `J = S ∪ near`,
/// push the Schur correction and retire `R`.
#[allow(clippy::too_many_arguments)]
fn eliminate(
    src: &mut MatrixSource,
    state: &mut ActiveState,
    box_id: usize,
    level: usize,
    kind: SkelKind,
    b: &[usize],
    near: &[usize],
    s_loc: &[usize],
    r_loc: &[usize],
    interp: DMatrix<f64>,
    spd: bool,
) -> Result<SkelStep> {
    let symmetric = src.is_symmetric();
    let skel: Vec<usize> = s_loc.iter().map(|&i| b[i]).collect();
    let red: Vec<usize> = r_loc.iter().map(|&i| b[i]).collect();
    let t = &interp;

    let a_bb = src.entries(b, b)?;
    let a_rr = a_bb.select_rows(r_loc).select_columns(r_loc);
    let a_rs = a_bb.select_rows(r_loc).select_columns(s_loc);
    let a_sr = a_bb.select_rows(s_loc).select_columns(r_loc);
    let a_ss = a_bb.select_rows(s_loc).select_columns(s_loc);

    let mut x_rr = &a_rr - t.tr_mul(&a_sr) - &a_rs * t + t.tr_mul(&(&a_ss * t));
    if symmetric {
        symmetrize(&mut x_rr);
    }
    let x_rs = &a_rs - t.tr_mul(&a_ss);
    let x_sr = &a_sr - &a_ss * t;

    let ns = skel.len();
    let nj = ns + near.len();
    let nr = red.len();
    let mut x_rj = DMatrix::zeros(nr, nj);
    let mut x_jr = DMatrix::zeros(nj, nr);
    x_rj.view_mut((0, 0), (nr, ns)).copy_from(&x_rs);
    x_jr.view_mut((0, 0), (ns, nr)).copy_from(&x_sr);
    if !near.is_empty() {
        let a_bn = src.entries(b, near)?;
        let a_rn = a_bn.select_rows(r_loc);
        let a_sn = a_bn.select_rows(s_loc);
        let x_rn = &a_rn - t.tr_mul(&a_sn);
        let x_nr = if symmetric {
            x_rn.transpose()
        } else {
            let a_nb = src.entries(near, b)?;
            a_nb.select_columns(r_loc) - a_nb.select_columns(s_loc) * t
        };
        x_rj.view_mut((0, ns), (nr, near.len())).copy_from(&x_rn);
        x_jr.view_mut((ns, 0), (near.len(), nr)).copy_from(&x_nr);
    }

    let pivot = pivot_factor(&x_rr, spd).map_err(|e| e.at_box(box_id, level))?;
    let (l_block, u_block, corr) = eliminate_coupling(&pivot, &x_jr, &x_rj, symmetric);

    let mut joint = skel.clone();
    joint.extend_from_slice(near);
    if nj > 0 {
        src.add_update(&joint, &joint, &corr)?;
    }
    src.deactivate(&red);
    state.retire(box_id, &skel, &red);
    Ok(SkelStep {
        factor: SkelFactor {
            box_id,
            level,
            kind,
            redundant: red,
            joint,
            n_skel: ns,
            interp,
            u_block,
            l_block,
        },
        pivot,
    })
}

fn check_params(src: &MatrixSource, params: &StepParams) -> Result<()> {
    if !(params.eps >= 0.0) {
        return Err(Error::InvalidInput(format!("tolerance must be nonnegative, got {}", params.eps)));
    }
    if params.spd && !src.is_symmetric() {
        return Err(Error::NotSpd);
    }
    if let Compression::Proxy { n_p, radius } = params.compression {
        if n_p == 0 || !(radius > 0.0) {
            return Err(Error::InvalidInput("proxy count and radius must be positive".into()));
        }
        if !src.kernel().is_harmonic() {
            return Err(Error::InvalidInput("proxy compression needs a harmonic kernel".into()));
        }
    }
    Ok(())
}

/// Skeletonize box `box_id` against its far field. Returns `None` when the
/// step is a no-op (empty box, empty far field, or nothing redundant).
pub fn strong_skeletonize(
    src: &mut MatrixSource,
    tree: &Tree,
    state: &mut ActiveState,
    box_id: usize,
    params: &StepParams,
) -> Result<Option<SkelStep>> {
    check_params(src, params)?;
    let level = tree.get(box_id)?.level;
    let sets = active_dof_sets(tree, state, box_id)?;
    let far = state.num_active() - sets.b.len() - sets.n.len();
    if sets.b.is_empty() || far == 0 {
        return Ok(None);
    }
    let beyond = far - sets.o.len();
    let m = compression_rows(src, tree, state, box_id, &sets.b, &sets.n, &sets.o, beyond, params.compression)?;
    let id = interp_decomp(&m, params.eps)?;
    if id.redundant.is_empty() {
        state.retire(box_id, &sets.b, &[]);
        return Ok(None);
    }
    eliminate(
        src,
        state,
        box_id,
        level,
        SkelKind::Strong,
        &sets.b,
        &sets.n,
        &id.skeleton,
        &id.redundant,
        id.interp,
        params.spd,
    )
    .map(Some)
}

/// Skeletonize box `box_id` against everything outside it, near field
/// included. Only the box's own skeleton block receives a correction.
pub fn weak_skeletonize(
    src: &mut MatrixSource,
    tree: &Tree,
    state: &mut ActiveState,
    box_id: usize,
    params: &StepParams,
) -> Result<Option<SkelStep>> {
    check_params(src, params)?;
    let level = tree.get(box_id)?.level;
    let sets = active_dof_sets(tree, state, box_id)?;
    if sets.b.is_empty() {
        return Ok(None);
    }
    let mut ring = sets.n.clone();
    ring.extend_from_slice(&sets.o);
    ring.sort_unstable();
    let beyond = state.num_active() - sets.b.len() - ring.len();
    let m = compression_rows(src, tree, state, box_id, &sets.b, &[], &ring, beyond, params.compression)?;
    let id = interp_decomp(&m, params.eps)?;
    if id.redundant.is_empty() {
        state.retire(box_id, &sets.b, &[]);
        return Ok(None);
    }
    eliminate(
        src,
        state,
        box_id,
        level,
        SkelKind::Weak,
        &sets.b,
        &[],
        &id.skeleton,
        &id.redundant,
        id.interp,
        params.spd,
    )
    .map(Some)
}
