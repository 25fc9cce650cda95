//! Level-by-level factorization drivers and the resulting operator.

mod serial;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dense::{pivot_factor, PivotFactor};
use crate::error::{Error, Result};
use crate::geometry::{ActiveState, Tree};
use crate::skel::{strong_skeletonize, weak_skeletonize, Compression, SkelFactor, SkelStep, StepParams};
use crate::source::MatrixSource;

/// Which factorization to build.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    /// Strong skeletonization at every level.
    #[serde(rename = "rs-s")]
    RsS,
    /// Weak then strong skeletonization at every level, plus a final weak
    /// pass just below the root.
    #[serde(rename = "rs-ws")]
    RsWs,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::RsS => "rs-s",
            Method::RsWs => "rs-ws",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rs-s" => Ok(Method::RsS),
            "rs-ws" => Ok(Method::RsWs),
            other => Err(Error::InvalidInput(format!("unknown method `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FactorOptions {
    pub method: Method,
    pub eps: f64,
    pub compression: Compression,
    pub spd: bool,
}

/// Per-level summary of a factorization.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LevelStats {
    pub level: usize,
    pub strong_steps: usize,
    pub weak_steps: usize,
    /// Largest number of DOFs left active in any box after the level.
    pub max_skeleton: usize,
    pub active_after: usize,
}

/// One diagonal block of the middle factor.
#[derive(Clone, Debug)]
pub struct DiagBlock {
    pub dofs: Vec<usize>,
    pub pivot: PivotFactor,
}

/// Block-diagonal middle factor; the index sets partition all DOFs.
#[derive(Clone, Debug, Default)]
pub struct BlockDiagonal {
    pub blocks: Vec<DiagBlock>,
}

impl BlockDiagonal {
    fn each(&self, x: &mut [f64], mut op: impl FnMut(&PivotFactor, &mut [f64]) -> Result<()>) -> Result<()> {
        let mut buf = Vec::new();
        for b in &self.blocks {
            buf.clear();
            buf.extend(b.dofs.iter().map(|&i| x[i]));
            op(&b.pivot, &mut buf)?;
            for (k, &i) in b.dofs.iter().enumerate() {
                x[i] = buf[k];
            }
        }
        Ok(())
    }

    pub fn nbytes(&self) -> usize {
        self.blocks.iter().map(|b| b.pivot.nbytes()).sum()
    }

    pub fn logdet(&self) -> f64 {
        self.blocks.iter().map(|b| b.pivot.log_abs_det().0).sum()
    }
}

/// `F = V₁⋯Vₙ D Wₙ⋯W₁`, an approximation of the kernel matrix that can be
/// applied and inverted in factored form.
#[derive(Clone, Debug)]
pub struct Factorization {
    n: usize,
    dim: usize,
    method: Method,
    spd: bool,
    eps: f64,
    factors: Vec<SkelFactor>,
    diag: BlockDiagonal,
    levels: Vec<LevelStats>,
}

struct Builder<'a> {
    src: &'a mut MatrixSource,
    tree: &'a Tree,
    state: ActiveState,
    params: StepParams,
    factors: Vec<SkelFactor>,
    diag: BlockDiagonal,
}

impl Builder<'_> {
    fn push(&mut self, step: Option<SkelStep>) -> usize {
        match step {
            Some(SkelStep { factor, pivot }) => {
                self.diag.blocks.push(DiagBlock {
                    dofs: factor.redundant.clone(),
                    pivot,
                });
                self.factors.push(factor);
                1
            }
            None => 0,
        }
    }

    fn weak_pass(&mut self, level: usize) -> Result<usize> {
        let mut count = 0;
        for &id in self.tree.level(level) {
            let step = weak_skeletonize(self.src, self.tree, &mut self.state, id, &self.params)?;
            count += self.push(step);
        }
        Ok(count)
    }

    fn strong_pass(&mut self, level: usize) -> Result<usize> {
        let mut count = 0;
        for &id in self.tree.level(level) {
            let step = strong_skeletonize(self.src, self.tree, &mut self.state, id, &self.params)?;
            count += self.push(step);
            self.src.cache().check_reach(2)?;
        }
        Ok(count)
    }

    fn stats(&self, level: usize, strong_steps: usize, weak_steps: usize) -> Result<LevelStats> {
        let mut max_skeleton = 0;
        for &id in self.tree.level(level) {
            max_skeleton = max_skeleton.max(self.state.active_in_box(self.tree, id)?.len());
        }
        Ok(LevelStats {
            level,
            strong_steps,
            weak_steps,
            max_skeleton,
            active_after: self.state.num_active(),
        })
    }
}

/// Build a factorization of the matrix described by `src` over `tree`.
/// The update cache of `src` is reset first and left in its final state.
pub fn factorize(src: &mut MatrixSource, tree: &Tree, opts: &FactorOptions) -> Result<Factorization> {
    if !(opts.eps >= 0.0) || !opts.eps.is_finite() {
        return Err(Error::InvalidInput(format!("tolerance must be finite and nonnegative, got {}", opts.eps)));
    }
    if opts.spd && !src.is_symmetric() {
        return Err(Error::NotSpd);
    }
    src.begin(tree)?;
    let n = src.len();
    let dim = src.dim();
    let mut b = Builder {
        state: ActiveState::new(tree),
        src,
        tree,
        params: StepParams {
            eps: opts.eps,
            compression: opts.compression,
            spd: opts.spd,
        },
        factors: Vec::new(),
        diag: BlockDiagonal::default(),
    };
    let num_levels = tree.num_levels();
    let mut levels = Vec::new();
    for level in 1..=num_levels.saturating_sub(2) {
        let weak = if opts.method == Method::RsWs { b.weak_pass(level)? } else { 0 };
        let strong = b.strong_pass(level)?;
        levels.push(b.stats(level, strong, weak)?);
        b.src.promote_level(tree)?;
    }
    if opts.method == Method::RsWs && num_levels >= 2 {
        let level = num_levels - 1;
        let weak = b.weak_pass(level)?;
        levels.push(b.stats(level, 0, weak)?);
    }
    for w in levels.windows(2) {
        if w[1].max_skeleton < w[0].max_skeleton && w[1].strong_steps > 0 {
            log::warn!(
                "skeleton size decreased from {} at level {} to {} at level {}",
                w[0].max_skeleton,
                w[0].level,
                w[1].max_skeleton,
                w[1].level
            );
        }
    }

    let top = b.state.active_dofs();
    if !top.is_empty() {
        let a = b.src.entries(&top, &top)?;
        let pivot = pivot_factor(&a, opts.spd).map_err(|e| e.at_box(tree.boxes().len() - 1, num_levels))?;
        b.diag.blocks.push(DiagBlock { dofs: top, pivot });
    }
    Ok(Factorization {
        n,
        dim,
        method: opts.method,
        spd: opts.spd,
        eps: opts.eps,
        factors: b.factors,
        diag: b.diag,
        levels,
    })
}

/// Strong recursive skeletonization.
pub fn factor_rss(src: &mut MatrixSource, tree: &Tree, eps: f64, compression: Compression, spd: bool) -> Result<Factorization> {
    factorize(
        src,
        tree,
        &FactorOptions {
            method: Method::RsS,
            eps,
            compression,
            spd,
        },
    )
}

/// Hybrid weak/strong recursive skeletonization.
pub fn factor_rsws(src: &mut MatrixSource, tree: &Tree, eps: f64, compression: Compression, spd: bool) -> Result<Factorization> {
    factorize(
        src,
        tree,
        &FactorOptions {
            method: Method::RsWs,
            eps,
            compression,
            spd,
        },
    )
}

impl Factorization {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn is_spd(&self) -> bool {
        self.spd
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn factors(&self) -> &[SkelFactor] {
        &self.factors
    }

    pub fn diagonal(&self) -> &BlockDiagonal {
        &self.diag
    }

    pub fn levels(&self) -> &[LevelStats] {
        &self.levels
    }

    /// Largest skeleton per strongly skeletonized level.
    pub fn k_levels(&self) -> Vec<usize> {
        self.levels
            .iter()
            .filter(|l| l.strong_steps > 0 || l.weak_steps == 0)
            .map(|l| l.max_skeleton)
            .collect()
    }

    /// Bytes held in stored dense blocks.
    pub fn nbytes(&self) -> usize {
        self.factors.iter().map(|f| f.nbytes()).sum::<usize>() + self.diag.nbytes()
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: x.len(),
            });
        }
        Ok(())
    }

    fn require_spd(&self) -> Result<()> {
        if self.spd {
            Ok(())
        } else {
            Err(Error::NotSpd)
        }
    }

    /// `F x`
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check(x)?;
        let mut y = x.to_vec();
        self.factors.iter().for_each(|f| f.apply_w(&mut y));
        self.diag.each(&mut y, |p, v| {
            p.mul_in_place(v);
            Ok(())
        })?;
        self.factors.iter().rev().for_each(|f| f.apply_v(&mut y));
        Ok(y)
    }

    /// `F⁻¹ b`
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        self.check(b)?;
        let mut y = b.to_vec();
        self.factors.iter().for_each(|f| f.apply_v_inv(&mut y));
        self.diag.each(&mut y, |p, v| {
            p.solve_in_place(v);
            Ok(())
        })?;
        self.factors.iter().rev().for_each(|f| f.apply_w_inv(&mut y));
        Ok(y)
    }

    /// `Fᵀ x`
    pub fn apply_transpose(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check(x)?;
        let mut y = x.to_vec();
        self.factors.iter().for_each(|f| f.apply_vt(&mut y));
        self.diag.each(&mut y, |p, v| {
            p.mul_transpose_in_place(v);
            Ok(())
        })?;
        self.factors.iter().rev().for_each(|f| f.apply_wt(&mut y));
        Ok(y)
    }

    /// `F⁻ᵀ b`
    pub fn solve_transpose(&self, b: &[f64]) -> Result<Vec<f64>> {
        self.check(b)?;
        let mut y = b.to_vec();
        self.factors.iter().for_each(|f| f.apply_wt_inv(&mut y));
        self.diag.each(&mut y, |p, v| {
            p.solve_transpose_in_place(v);
            Ok(())
        })?;
        self.factors.iter().rev().for_each(|f| f.apply_vt_inv(&mut y));
        Ok(y)
    }

    /// `F^{1/2} x` with `F = F^{1/2} (F^{1/2})ᵀ`.
    pub fn apply_sqrt(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.require_spd()?;
        self.check(x)?;
        let mut y = x.to_vec();
        self.diag.each(&mut y, |p, v| p.sqrt_apply(v, false, false))?;
        self.factors.iter().rev().for_each(|f| f.apply_v(&mut y));
        Ok(y)
    }

    /// `(F^{1/2})ᵀ x`
    pub fn apply_sqrt_transpose(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.require_spd()?;
        self.check(x)?;
        let mut y = x.to_vec();
        self.factors.iter().for_each(|f| f.apply_vt(&mut y));
        self.diag.each(&mut y, |p, v| p.sqrt_apply(v, true, false))?;
        Ok(y)
    }

    /// `F^{-1/2} b`
    pub fn solve_sqrt(&self, b: &[f64]) -> Result<Vec<f64>> {
        self.require_spd()?;
        self.check(b)?;
        let mut y = b.to_vec();
        self.factors.iter().for_each(|f| f.apply_v_inv(&mut y));
        self.diag.each(&mut y, |p, v| p.sqrt_apply(v, false, true))?;
        Ok(y)
    }

    /// `(F^{1/2})⁻ᵀ b`
    pub fn solve_sqrt_transpose(&self, b: &[f64]) -> Result<Vec<f64>> {
        self.require_spd()?;
        self.check(b)?;
        let mut y = b.to_vec();
        self.diag.each(&mut y, |p, v| p.sqrt_apply(v, true, true))?;
        self.factors.iter().rev().for_each(|f| f.apply_vt_inv(&mut y));
        Ok(y)
    }

    /// `log det F`; the triangular factors have unit determinant.
    pub fn logdet(&self) -> Result<f64> {
        self.require_spd()?;
        Ok(self.diag.logdet())
    }
}
