//! Matrix entries on demand: kernel evaluations, diagonal and near-field
//! overrides, and the Schur-complement corrections accumulated while
//! factoring.

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{cell_distance, Cell, PointSet, Tree};

/// Kernel families supported by the builders.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum KernelKind {
    /// `−ln‖z‖ / 2π`
    Laplace2dLog,
    /// `1 / (4π‖z‖)`
    Laplace3d,
    /// `(x − y)·n_y / (4π‖x − y‖³)`
    Laplace3dDlp,
    /// `exp(−‖z‖² / 2σ²)`
    Gaussian { sigma: f64 },
}

impl KernelKind {
    pub fn is_symmetric(&self) -> bool {
        !matches!(self, KernelKind::Laplace3dDlp)
    }

    pub fn needs_normals(&self) -> bool {
        matches!(self, KernelKind::Laplace3dDlp)
    }

    /// Whether far fields can be compressed through a proxy surface.
    pub fn is_harmonic(&self) -> bool {
        !matches!(self, KernelKind::Gaussian { .. })
    }

    /// Kernel value for target `x`, source `y` with source normal `ny`
    /// (ignored unless the kernel needs normals).
    #[inline]
    pub fn eval(&self, x: &[f64], y: &[f64], ny: &[f64]) -> f64 {
        let mut r2 = 0.0;
        for k in 0..x.len() {
            let d = x[k] - y[k];
            r2 += d * d;
        }
        match *self {
            KernelKind::Laplace2dLog => -0.25 * r2.ln() / PI,
            KernelKind::Laplace3d => 1.0 / (4.0 * PI * r2.sqrt()),
            KernelKind::Laplace3dDlp => {
                let dot = (x[0] - y[0]) * ny[0] + (x[1] - y[1]) * ny[1] + (x[2] - y[2]) * ny[2];
                dot / (4.0 * PI * r2 * r2.sqrt())
            }
            KernelKind::Gaussian { sigma } => (-r2 / (2.0 * sigma * sigma)).exp(),
        }
    }
}

/// Kernel plus the per-point data needed to turn it into matrix entries.
#[derive(Clone, Debug)]
pub struct KernelSpec {
    pub kind: KernelKind,
    /// Column weights `w_j` (quadrature weights or element areas).
    pub weights: Vec<f64>,
    /// Unit normals, `dim` values per point, for kernels that need them.
    pub normals: Option<Vec<f64>>,
}

/// Dense corrections keyed by pairs of cells on the current level's grid.
///
/// Blocks are indexed by the DOF lists of each cell as they stood when the
/// level began; DOFs retired during the level keep their slots until the
/// next promotion.
#[derive(Clone, Debug, Default)]
pub struct UpdateCache {
    level: usize,
    cell_of: Vec<Cell>,
    pos: Vec<usize>,
    cell_dofs: BTreeMap<Cell, Vec<usize>>,
    blocks: BTreeMap<(Cell, Cell), DMatrix<f64>>,
}

/// Groups of (local index, slot within cell) per cell, in first-seen order.
type CellGroups = Vec<(Cell, Vec<(usize, usize)>)>;

impl UpdateCache {
    fn start(&mut self, tree: &Tree, level: usize, active: &[bool]) {
        self.level = level;
        self.cell_of = vec![[0; 3]; active.len()];
        self.pos = vec![usize::MAX; active.len()];
        self.cell_dofs.clear();
        for (d, _) in active.iter().enumerate().filter(|(_, &a)| a) {
            let c = tree.dof_cell(d, level);
            let list = self.cell_dofs.entry(c).or_default();
            self.cell_of[d] = c;
            self.pos[d] = list.len();
            list.push(d);
        }
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    /// Cell pairs currently holding corrections.
    pub fn pairs(&self) -> impl Iterator<Item = &(Cell, Cell)> {
        self.blocks.keys()
    }

    pub fn nbytes(&self) -> usize {
        self.blocks.values().map(|b| b.len() * 8).sum()
    }

    fn group(&self, ids: &[usize]) -> CellGroups {
        let mut groups: CellGroups = Vec::new();
        let mut index: BTreeMap<Cell, usize> = BTreeMap::new();
        for (k, &d) in ids.iter().enumerate() {
            let c = self.cell_of[d];
            let g = *index.entry(c).or_insert_with(|| {
                groups.push((c, Vec::new()));
                groups.len() - 1
            });
            groups[g].1.push((k, self.pos[d]));
        }
        groups
    }

    fn add(&mut self, rows: &[usize], cols: &[usize], corr: &DMatrix<f64>) -> Result<()> {
        let gr = self.group(rows);
        let gc = self.group(cols);
        // all touched cells must fit in a window of width 3 along each axis
        let mut lo = [u32::MAX; 3];
        let mut hi = [0u32; 3];
        for (c, _) in gr.iter().chain(gc.iter()) {
            for k in 0..3 {
                lo[k] = lo[k].min(c[k]);
                hi[k] = hi[k].max(c[k]);
            }
        }
        if (0..3).any(|k| hi[k] > lo[k] + 2) {
            return Err(Error::Invariant(format!(
                "update spans cells {:?}..{:?} at level {}",
                lo, hi, self.level
            )));
        }
        for (ca, ra) in &gr {
            let na = self.cell_dofs[ca].len();
            for (cb, rb) in &gc {
                let nb = self.cell_dofs[cb].len();
                let block = self
                    .blocks
                    .entry((*ca, *cb))
                    .or_insert_with(|| DMatrix::zeros(na, nb));
                for &(jl, jp) in rb {
                    for &(il, ip) in ra {
                        block[(ip, jp)] += corr[(il, jl)];
                    }
                }
            }
        }
        Ok(())
    }

    fn correct(&self, rows: &[usize], cols: &[usize], out: &mut DMatrix<f64>) {
        if self.blocks.is_empty() {
            return;
        }
        let gr = self.group(rows);
        let gc = self.group(cols);
        for (ca, ra) in &gr {
            for (cb, rb) in &gc {
                if let Some(block) = self.blocks.get(&(*ca, *cb)) {
                    for &(jl, jp) in rb {
                        for &(il, ip) in ra {
                            out[(il, jl)] += block[(ip, jp)];
                        }
                    }
                }
            }
        }
    }

    /// Move to the next level: drop retired DOFs and merge blocks into the
    /// parent cell pairs.
    fn promote(&mut self, tree: &Tree, active: &[bool]) -> Result<()> {
        let old_cell_dofs = std::mem::take(&mut self.cell_dofs);
        let old_blocks = std::mem::take(&mut self.blocks);
        self.start(tree, self.level + 1, active);
        for ((ca, cb), block) in old_blocks {
            let ra: Vec<(usize, usize)> = old_cell_dofs[&ca]
                .iter()
                .enumerate()
                .filter(|(_, &d)| active[d])
                .map(|(i, &d)| (i, d))
                .collect();
            let rb: Vec<(usize, usize)> = old_cell_dofs[&cb]
                .iter()
                .enumerate()
                .filter(|(_, &d)| active[d])
                .map(|(i, &d)| (i, d))
                .collect();
            if ra.is_empty() || rb.is_empty() {
                continue;
            }
            let pa = parent_cell(&ca);
            let pb = parent_cell(&cb);
            let na = self.cell_dofs[&pa].len();
            let nb = self.cell_dofs[&pb].len();
            let target = self
                .blocks
                .entry((pa, pb))
                .or_insert_with(|| DMatrix::zeros(na, nb));
            for &(j, dj) in &rb {
                let jp = self.pos[dj];
                for &(i, di) in &ra {
                    target[(self.pos[di], jp)] += block[(i, j)];
                }
            }
        }
        self.check_reach(1)
    }

    /// Every cached pair joins cells at most `reach` apart.
    pub fn check_reach(&self, reach: u32) -> Result<()> {
        for (a, b) in self.blocks.keys() {
            if cell_distance(a, b) > reach {
                return Err(Error::Invariant(format!(
                    "cached cells {:?} and {:?} are {} apart at level {} (limit {})",
                    a,
                    b,
                    cell_distance(a, b),
                    self.level,
                    reach
                )));
            }
        }
        Ok(())
    }
}

fn parent_cell(c: &Cell) -> Cell {
    [c[0] >> 1, c[1] >> 1, c[2] >> 1]
}

/// Entry generator for the kernel matrix and its running Schur transform.
#[derive(Clone, Debug)]
pub struct MatrixSource {
    points: PointSet,
    spec: KernelSpec,
    diag: Vec<f64>,
    near: HashMap<(usize, usize), f64>,
    active: Vec<bool>,
    cache: UpdateCache,
}

impl MatrixSource {
    pub fn new(points: PointSet, spec: KernelSpec, diag: Vec<f64>) -> Result<Self> {
        let n = points.len();
        if spec.weights.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: spec.weights.len(),
            });
        }
        if diag.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: diag.len(),
            });
        }
        match (&spec.normals, spec.kind.needs_normals()) {
            (None, true) => return Err(Error::InvalidInput("kernel requires normals".into())),
            (Some(nr), _) if nr.len() != n * points.dim() => {
                return Err(Error::DimensionMismatch {
                    expected: n * points.dim(),
                    got: nr.len(),
                })
            }
            _ => {}
        }
        if spec.weights.iter().chain(diag.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("weights or diagonal"));
        }
        Ok(Self {
            points,
            spec,
            diag,
            near: HashMap::new(),
            active: vec![true; n],
            cache: UpdateCache::default(),
        })
    }

    /// Replace individual off-diagonal entries (e.g. near-field quadrature).
    pub fn with_near(mut self, near: HashMap<(usize, usize), f64>) -> Self {
        self.near = near;
        self
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.dim()
    }

    pub fn points(&self) -> &PointSet {
        &self.points
    }

    pub fn kernel(&self) -> KernelKind {
        self.spec.kind
    }

    pub fn weights(&self) -> &[f64] {
        &self.spec.weights
    }

    pub fn normal(&self, i: usize) -> &[f64] {
        match &self.spec.normals {
            Some(n) => &n[i * self.dim()..(i + 1) * self.dim()],
            None => &[],
        }
    }

    pub fn is_symmetric(&self) -> bool {
        self.spec.kind.is_symmetric() && self.near.is_empty()
    }

    pub fn cache(&self) -> &UpdateCache {
        &self.cache
    }

    pub fn is_active(&self, dof: usize) -> bool {
        self.active[dof]
    }

    /// Raw matrix entry with no cache corrections.
    #[inline]
    pub fn raw_entry(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return self.diag[i];
        }
        if !self.near.is_empty() {
            if let Some(&v) = self.near.get(&(i, j)) {
                return v;
            }
        }
        self.spec.weights[j] * self.spec.kind.eval(self.points.point(i), self.points.point(j), self.normal(j))
    }

    /// Block of the current (Schur-updated) matrix on active rows and columns.
    pub fn entries(&self, rows: &[usize], cols: &[usize]) -> Result<DMatrix<f64>> {
        if let Some(&d) = rows.iter().chain(cols.iter()).find(|&&d| d >= self.len() || !self.active[d]) {
            return Err(Error::InactiveDof(d));
        }
        let mut out = DMatrix::from_fn(rows.len(), cols.len(), |a, b| self.raw_entry(rows[a], cols[b]));
        self.cache.correct(rows, cols, &mut out);
        Ok(out)
    }

    /// Reset activity and the update cache and begin at the finest level.
    pub fn begin(&mut self, tree: &Tree) -> Result<()> {
        if tree.num_dofs() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                got: tree.num_dofs(),
            });
        }
        self.active.iter_mut().for_each(|a| *a = true);
        self.cache = UpdateCache::default();
        self.cache.start(tree, 1, &self.active);
        Ok(())
    }

    /// Add `corr` to the block `(rows, cols)`. All touched cells at the
    /// current level must lie within a 3-cell window per axis.
    pub fn add_update(&mut self, rows: &[usize], cols: &[usize], corr: &DMatrix<f64>) -> Result<()> {
        if corr.shape() != (rows.len(), cols.len()) {
            return Err(Error::DimensionMismatch {
                expected: rows.len() * cols.len(),
                got: corr.len(),
            });
        }
        if let Some(&d) = rows.iter().chain(cols.iter()).find(|&&d| !self.active[d]) {
            return Err(Error::InactiveDof(d));
        }
        self.cache.add(rows, cols, corr)
    }

    pub fn deactivate(&mut self, dofs: &[usize]) {
        for &d in dofs {
            self.active[d] = false;
        }
    }

    /// Restrict and re-key the cache to the next level and verify every
    /// surviving pair is adjacent there.
    pub fn promote_level(&mut self, tree: &Tree) -> Result<()> {
        self.cache.promote(tree, &self.active)
    }

    /// Proxy-surface rows for the columns `cols`, scaled by column weights.
    /// Unsymmetric kernels get a second block for the transposed direction.
    pub fn proxy_rows(&self, cols: &[usize], proxy: &PointSet) -> DMatrix<f64> {
        let np = proxy.len();
        let kind = self.spec.kind;
        let two_sided = kind == KernelKind::Laplace3dDlp;
        let nrows = if two_sided { 2 * np } else { np };
        let mut m = DMatrix::zeros(nrows, cols.len());
        for (c, &j) in cols.iter().enumerate() {
            let x = self.points.point(j);
            let w = self.spec.weights[j];
            for k in 0..np {
                let y = proxy.point(k);
                if two_sided {
                    m[(k, c)] = w * kind.eval(y, x, self.normal(j));
                    m[(np + k, c)] = w * KernelKind::Laplace3d.eval(x, y, &[]);
                } else {
                    m[(k, c)] = w * kind.eval(y, x, &[]);
                }
            }
        }
        m
    }
}
