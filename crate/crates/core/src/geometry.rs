//! Point clouds, adaptive 2^d-trees, near/far classification and proxy surfaces.
//!
//! Every point is assigned an integer cell on a fixed `2^MAX_DEPTH` grid laid
//! over the root cube. Tree boxes, same-level adjacency and the cell keys used
//! by the update cache are all derived from these integer cells, so geometric
//! classification never depends on floating-point comparisons against box
//! faces.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Depth of the integer grid used to locate points.
pub const MAX_DEPTH: u32 = 20;

/// Proxy radius as a multiple of the box sidelength.
pub const DEFAULT_PROXY_RADIUS: f64 = 2.5;

const PROXY_SEED: u64 = 0x005e_ed0f_9a0c;

/// Integer cell coordinates at some tree depth. Unused axes are zero.
pub type Cell = [u32; 3];

/// A set of points in two or three dimensions, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct PointSet {
    dim: usize,
    coords: Vec<f64>,
}

impl PointSet {
    pub fn new(dim: usize, coords: Vec<f64>) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(Error::InvalidInput(format!("dimension must be 2 or 3, got {dim}")));
        }
        if !coords.len().is_multiple_of(dim) {
            return Err(Error::InvalidInput(
                "coordinate count is not a multiple of the dimension".into(),
            ));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("point coordinates"));
        }
        Ok(Self { dim, coords })
    }

    pub fn from_points<const D: usize>(points: &[[f64; D]]) -> Result<Self> {
        Self::new(D, points.iter().flatten().copied().collect())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    #[inline]
    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.coords.chunks_exact(self.dim)
    }

    pub fn subset(&self, ids: &[usize]) -> PointSet {
        let mut coords = Vec::with_capacity(ids.len() * self.dim);
        for &i in ids {
            coords.extend_from_slice(self.point(i));
        }
        PointSet { dim: self.dim, coords }
    }
}

/// One box of the tree.
#[derive(Clone, Debug)]
pub struct TreeBox {
    pub center: [f64; 3],
    pub sidelength: f64,
    /// 1 is the finest level, the root sits at level `L`.
    pub level: usize,
    pub depth: u32,
    /// Integer coordinates of the box at its own depth.
    pub anchor: Cell,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    /// All points contained in the box, sorted.
    pub dof_ids: Vec<usize>,
}

impl TreeBox {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

/// Adaptive quadtree/octree with boxes numbered in bottom-up level order.
#[derive(Clone, Debug)]
pub struct Tree {
    dim: usize,
    boxes: Vec<TreeBox>,
    levels: Vec<Vec<usize>>,
    origin: [f64; 3],
    root_side: f64,
    fine_cells: Vec<Cell>,
    lookup: HashMap<(u32, Cell), usize>,
}

struct Node {
    depth: u32,
    anchor: Cell,
    dofs: Vec<usize>,
    parent: Option<usize>,
    children: Vec<usize>,
}

fn morton(anchor: &Cell, dim: usize) -> u64 {
    let mut key = 0u64;
    for bit in 0..MAX_DEPTH {
        for (k, a) in anchor.iter().enumerate().take(dim) {
            key |= (((a >> bit) & 1) as u64) << (bit as usize * dim + k);
        }
    }
    key
}

/// Build an adaptive tree whose leaves hold at most `n_occ` points.
pub fn build_tree(points: &PointSet, n_occ: usize) -> Result<Tree> {
    if points.is_empty() {
        return Err(Error::EmptyPointSet);
    }
    if n_occ == 0 {
        return Err(Error::InvalidInput("occupancy must be positive".into()));
    }
    let dim = points.dim();
    let n = points.len();

    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in points.iter() {
        for k in 0..dim {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let extent = (0..dim).map(|k| hi[k] - lo[k]).fold(0.0, f64::max);
    let mut origin = [0.0; 3];
    let root_side;
    if extent > 0.0 {
        let margin = 1e-12 * extent;
        for k in 0..dim {
            origin[k] = lo[k] - margin;
        }
        root_side = extent + 2.0 * margin;
    } else {
        for k in 0..dim {
            origin[k] = lo[k] - 0.5;
        }
        root_side = 1.0;
    }

    let scale = (1u64 << MAX_DEPTH) as f64;
    let top = (1u32 << MAX_DEPTH) - 1;
    let fine_cells: Vec<Cell> = points
        .iter()
        .map(|p| {
            let mut c = [0u32; 3];
            for k in 0..dim {
                // points on a face go to the lower cell
                let t = (p[k] - origin[k]) / root_side * scale;
                let idx = t.ceil() - 1.0;
                c[k] = if idx <= 0.0 { 0 } else { (idx as u64).min(top as u64) as u32 };
            }
            c
        })
        .collect();

    let mut nodes = vec![Node {
        depth: 0,
        anchor: [0; 3],
        dofs: (0..n).collect(),
        parent: None,
        children: Vec::new(),
    }];
    let mut stack = vec![0usize];
    while let Some(id) = stack.pop() {
        if nodes[id].dofs.len() <= n_occ {
            continue;
        }
        let depth = nodes[id].depth;
        if depth == MAX_DEPTH {
            return Err(Error::InvalidInput(format!(
                "more than {n_occ} coincident points cannot be separated"
            )));
        }
        let shift = MAX_DEPTH - depth - 1;
        let mut groups: Vec<Vec<usize>> = vec![Vec::new(); 1 << dim];
        for &d in &nodes[id].dofs {
            let mut ci = 0;
            for k in 0..dim {
                ci |= (((fine_cells[d][k] >> shift) & 1) as usize) << k;
            }
            groups[ci].push(d);
        }
        let anchor = nodes[id].anchor;
        for (ci, dofs) in groups.into_iter().enumerate() {
            if dofs.is_empty() {
                continue;
            }
            let mut a = [0u32; 3];
            for k in 0..dim {
                a[k] = 2 * anchor[k] + ((ci >> k) & 1) as u32;
            }
            let child = nodes.len();
            nodes.push(Node {
                depth: depth + 1,
                anchor: a,
                dofs,
                parent: Some(id),
                children: Vec::new(),
            });
            nodes[id].children.push(child);
            stack.push(child);
        }
    }

    let max_depth = nodes.iter().map(|n| n.depth).max().unwrap_or(0);
    let num_levels = max_depth as usize + 1;

    // bottom-up level-by-level numbering
    let mut order: Vec<usize> = (0..nodes.len()).collect();
    order.sort_by_key(|&i| (std::cmp::Reverse(nodes[i].depth), morton(&nodes[i].anchor, dim)));
    let mut new_id = vec![0usize; nodes.len()];
    for (new, &old) in order.iter().enumerate() {
        new_id[old] = new;
    }

    let mut boxes = Vec::with_capacity(nodes.len());
    let mut levels = vec![Vec::new(); num_levels];
    let mut lookup = HashMap::with_capacity(nodes.len());
    for &old in &order {
        let node = &nodes[old];
        let width = root_side / (1u64 << node.depth) as f64;
        let mut center = [0.0; 3];
        for k in 0..dim {
            center[k] = origin[k] + (node.anchor[k] as f64 + 0.5) * width;
        }
        let level = num_levels - node.depth as usize;
        let mut dof_ids = node.dofs.clone();
        dof_ids.sort_unstable();
        let mut children: Vec<usize> = node.children.iter().map(|&c| new_id[c]).collect();
        children.sort_unstable();
        let id = boxes.len();
        levels[level - 1].push(id);
        lookup.insert((node.depth, node.anchor), id);
        boxes.push(TreeBox {
            center,
            sidelength: width,
            level,
            depth: node.depth,
            anchor: node.anchor,
            parent: node.parent.map(|p| new_id[p]),
            children,
            dof_ids,
        });
    }

    Ok(Tree {
        dim,
        boxes,
        levels,
        origin,
        root_side,
        fine_cells,
        lookup,
    })
}

/// Active DOFs of a box and of its near field and in-proxy far field.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DofSets {
    pub b: Vec<usize>,
    pub n: Vec<usize>,
    pub o: Vec<usize>,
}

impl Tree {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_dofs(&self) -> usize {
        self.fine_cells.len()
    }

    /// Number of levels `L`; the root is at level `L`.
    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn boxes(&self) -> &[TreeBox] {
        &self.boxes
    }

    pub fn get(&self, id: usize) -> Result<&TreeBox> {
        self.boxes.get(id).ok_or(Error::InvalidBox(id))
    }

    /// Ordered box ids at `level` (1-based).
    pub fn level(&self, level: usize) -> &[usize] {
        &self.levels[level - 1]
    }

    pub fn leaves(&self) -> impl Iterator<Item = &TreeBox> {
        self.boxes.iter().filter(|b| b.is_leaf())
    }

    pub fn origin(&self) -> &[f64] {
        &self.origin[..self.dim]
    }

    pub fn root_side(&self) -> f64 {
        self.root_side
    }

    fn depth_of(&self, level: usize) -> u32 {
        (self.num_levels() - level) as u32
    }

    /// Cell of `dof` on the regular grid of boxes at `level`.
    #[inline]
    pub fn dof_cell(&self, dof: usize, level: usize) -> Cell {
        let shift = MAX_DEPTH - self.depth_of(level);
        let f = &self.fine_cells[dof];
        [f[0] >> shift, f[1] >> shift, f[2] >> shift]
    }

    /// Number of cells per axis at `level`.
    pub fn cells_per_axis(&self, level: usize) -> u32 {
        1u32 << self.depth_of(level)
    }

    pub fn box_at(&self, level: usize, cell: Cell) -> Option<usize> {
        self.lookup.get(&(self.depth_of(level), cell)).copied()
    }

    /// Same-level boxes whose closed cubes touch the closed cube of `id`.
    pub fn box_neighbors(&self, id: usize) -> Result<Vec<usize>> {
        let bx = self.get(id)?;
        let mut out = Vec::new();
        for_each_offset(self.dim, 1, |off| {
            if off.iter().all(|&o| o == 0) {
                return;
            }
            if let Some(cell) = shift_cell(&bx.anchor, off, 1u32 << bx.depth) {
                if let Some(&j) = self.lookup.get(&(bx.depth, cell)) {
                    out.push(j);
                }
            }
        });
        out.sort_unstable();
        Ok(out)
    }

    /// Active DOFs whose cell at `level` is `cell`. Falls back to a coarser
    /// leaf covering the cell when no box exists at `level`.
    fn active_in_cell(&self, level: usize, cell: Cell, state: &ActiveState, out: &mut Vec<usize>) {
        let depth = self.depth_of(level);
        if let Some(&id) = self.lookup.get(&(depth, cell)) {
            out.extend(self.boxes[id].dof_ids.iter().filter(|&&d| state.is_active(d)));
            return;
        }
        for d in (0..depth).rev() {
            let s = depth - d;
            let coarse = [cell[0] >> s, cell[1] >> s, cell[2] >> s];
            if let Some(&id) = self.lookup.get(&(d, coarse)) {
                let bx = &self.boxes[id];
                if bx.is_leaf() {
                    out.extend(
                        bx.dof_ids
                            .iter()
                            .filter(|&&dof| state.is_active(dof) && self.dof_cell(dof, level) == cell),
                    );
                }
                return;
            }
        }
    }

    /// Proxy points for box `id` on a circle/sphere of `radius_factor * sidelength`.
    pub fn proxy_points(&self, id: usize, n_p: usize, radius_factor: f64) -> Result<PointSet> {
        let bx = self.get(id)?;
        proxy_points(&bx.center[..self.dim], bx.sidelength, n_p, radius_factor)
    }
}

fn for_each_offset(dim: usize, reach: i64, mut f: impl FnMut(&[i64; 3])) {
    let r = -reach..=reach;
    match dim {
        2 => {
            for dx in r.clone() {
                for dy in r.clone() {
                    f(&[dx, dy, 0]);
                }
            }
        }
        _ => {
            for dx in r.clone() {
                for dy in r.clone() {
                    for dz in r.clone() {
                        f(&[dx, dy, dz]);
                    }
                }
            }
        }
    }
}

fn shift_cell(cell: &Cell, off: &[i64; 3], bound: u32) -> Option<Cell> {
    let mut out = [0u32; 3];
    for k in 0..3 {
        let v = cell[k] as i64 + off[k];
        if v < 0 || v >= bound as i64 {
            return None;
        }
        out[k] = v as u32;
    }
    Some(out)
}

/// Chebyshev distance between two cells.
pub fn cell_distance(a: &Cell, b: &Cell) -> u32 {
    (0..3).map(|k| a[k].abs_diff(b[k])).max().unwrap_or(0)
}

/// Per-DOF activity and per-box skeleton/redundant bookkeeping.
#[derive(Clone, Debug)]
pub struct ActiveState {
    active: Vec<bool>,
    n_active: usize,
    pub skeleton_of: Vec<Vec<usize>>,
    pub redundant_of: Vec<Vec<usize>>,
}

impl ActiveState {
    pub fn new(tree: &Tree) -> Self {
        let n = tree.num_dofs();
        Self {
            active: vec![true; n],
            n_active: n,
            skeleton_of: vec![Vec::new(); tree.boxes.len()],
            redundant_of: vec![Vec::new(); tree.boxes.len()],
        }
    }

    #[inline]
    pub fn is_active(&self, dof: usize) -> bool {
        self.active[dof]
    }

    pub fn num_active(&self) -> usize {
        self.n_active
    }

    pub fn active_dofs(&self) -> Vec<usize> {
        (0..self.active.len()).filter(|&d| self.active[d]).collect()
    }

    /// Record a skeletonization of `box_id`: `redundant` become inactive.
    pub fn retire(&mut self, box_id: usize, skeleton: &[usize], redundant: &[usize]) {
        for &r in redundant {
            debug_assert!(self.active[r]);
            self.active[r] = false;
        }
        self.n_active -= redundant.len();
        self.skeleton_of[box_id] = skeleton.to_vec();
        self.redundant_of[box_id].extend_from_slice(redundant);
    }

    pub fn active_in_box(&self, tree: &Tree, id: usize) -> Result<Vec<usize>> {
        Ok(tree
            .get(id)?
            .dof_ids
            .iter()
            .copied()
            .filter(|&d| self.active[d])
            .collect())
    }
}

/// Split the active DOFs around box `id` into box, near field (adjacent
/// cells) and in-proxy far field (the 5^d stencil minus the 3^d stencil).
pub fn active_dof_sets(tree: &Tree, state: &ActiveState, id: usize) -> Result<DofSets> {
    let bx = tree.get(id)?;
    let level = bx.level;
    let bound = tree.cells_per_axis(level);
    let b = state.active_in_box(tree, id)?;
    let mut n = Vec::new();
    let mut o = Vec::new();
    for_each_offset(tree.dim, 2, |off| {
        if off.iter().all(|&v| v == 0) {
            return;
        }
        if let Some(cell) = shift_cell(&bx.anchor, off, bound) {
            let cheb = off.iter().map(|v| v.abs()).max().unwrap_or(0);
            let target = if cheb == 1 { &mut n } else { &mut o };
            tree.active_in_cell(level, cell, state, target);
        }
    });
    n.sort_unstable();
    o.sort_unstable();
    Ok(DofSets { b, n, o })
}

/// Points on a circle (2D, equispaced) or sphere (3D, seeded random) of
/// radius `radius_factor * sidelength` about `center`.
pub fn proxy_points(center: &[f64], sidelength: f64, n_p: usize, radius_factor: f64) -> Result<PointSet> {
    if n_p == 0 {
        return Err(Error::InvalidInput("proxy point count must be positive".into()));
    }
    let dim = center.len();
    let radius = radius_factor * sidelength;
    let mut coords = Vec::with_capacity(n_p * dim);
    if dim == 2 {
        for k in 0..n_p {
            let theta = 2.0 * std::f64::consts::PI * k as f64 / n_p as f64;
            coords.push(center[0] + radius * theta.cos());
            coords.push(center[1] + radius * theta.sin());
        }
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(PROXY_SEED);
        let mut made = 0;
        while made < n_p {
            let v: [f64; 3] = [
                StandardNormal.sample(&mut rng),
                StandardNormal.sample(&mut rng),
                StandardNormal.sample(&mut rng),
            ];
            let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            if norm < 1e-8 {
                continue;
            }
            for k in 0..3 {
                coords.push(center[k] + radius * v[k] / norm);
            }
            made += 1;
        }
    }
    PointSet::new(dim, coords)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid2d(n: usize) -> PointSet {
        let h = 1.0 / n as f64;
        let mut c = Vec::new();
        for i in 0..n {
            for j in 0..n {
                c.push((i as f64 + 0.5) * h);
                c.push((j as f64 + 0.5) * h);
            }
        }
        PointSet::new(2, c).unwrap()
    }

    fn grid3d(n: usize) -> PointSet {
        let h = 1.0 / n as f64;
        let mut c = Vec::new();
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    c.extend([(i as f64 + 0.5) * h, (j as f64 + 0.5) * h, (k as f64 + 0.5) * h]);
                }
            }
        }
        PointSet::new(3, c).unwrap()
    }

    #[test]
    fn single_point_tree() {
        let t = build_tree(&PointSet::new(2, vec![0.3, 0.7]).unwrap(), 64).unwrap();
        assert_eq!(t.num_levels(), 1);
        assert_eq!(t.boxes().len(), 1);
        assert_eq!(t.boxes()[0].dof_ids, vec![0]);
    }

    #[test]
    fn empty_point_set_rejected() {
        let p = PointSet::new(2, vec![]).unwrap();
        assert!(matches!(build_tree(&p, 4), Err(Error::EmptyPointSet)));
    }

    #[test]
    fn uniform_grid_counts() {
        let t = build_tree(&grid2d(32), 64).unwrap();
        assert_eq!(t.num_levels(), 3);
        let leaves: Vec<_> = t.leaves().collect();
        assert_eq!(leaves.len(), 16);
        assert!(leaves.iter().all(|b| b.dof_ids.len() == 64 && b.level == 1));
        assert_eq!(t.level(2).len(), 4);
        assert_eq!(t.level(3).len(), 1);
    }

    #[test]
    fn clustered_points_refine_locally() {
        let mut c = Vec::new();
        for i in 0..200 {
            let s = i as f64 / 200.0;
            c.push(0.01 * s);
            c.push(0.01 * (1.0 - s) * (i % 7) as f64 / 7.0);
        }
        for i in 0..20 {
            c.push(0.5 + 0.02 * i as f64);
            c.push(0.9);
        }
        c.extend([1.0, 1.0]);
        let p = PointSet::new(2, c).unwrap();
        let t = build_tree(&p, 16).unwrap();
        let mut seen = vec![0usize; p.len()];
        for leaf in t.leaves() {
            assert!(leaf.dof_ids.len() <= 16);
            for &d in &leaf.dof_ids {
                seen[d] += 1;
            }
        }
        assert!(seen.iter().all(|&s| s == 1));
        // leaves near the cluster are deeper than the one holding (1,1)
        let far_leaf = t.leaves().find(|b| b.dof_ids.contains(&(p.len() - 1))).unwrap();
        let near_leaf = t.leaves().find(|b| b.dof_ids.contains(&0)).unwrap();
        assert!(near_leaf.depth > far_leaf.depth);
    }

    #[test]
    fn traversal_is_bottom_up() {
        let t = build_tree(&grid2d(24), 10).unwrap();
        for w in t.boxes().windows(2) {
            assert!(w[0].level <= w[1].level);
        }
        let total: usize = (1..=t.num_levels()).map(|l| t.level(l).len()).sum();
        assert_eq!(total, t.boxes().len());
    }

    #[test]
    fn neighbor_counts() {
        let t = build_tree(&grid2d(32), 16).unwrap();
        // level 1 is an 8x8 grid of boxes
        let interior = t.box_at(1, [3, 4, 0]).unwrap();
        assert_eq!(t.box_neighbors(interior).unwrap().len(), 8);
        let corner = t.box_at(1, [0, 0, 0]).unwrap();
        assert_eq!(t.box_neighbors(corner).unwrap().len(), 3);

        let t3 = build_tree(&grid3d(16), 8).unwrap();
        let interior = t3.box_at(1, [3, 4, 2]).unwrap();
        assert_eq!(t3.box_neighbors(interior).unwrap().len(), 26);
        assert!(t3.box_neighbors(usize::MAX).is_err());
    }

    #[test]
    fn dof_sets_on_fresh_grid() {
        let p = grid2d(32);
        let t = build_tree(&p, 16).unwrap();
        let s = ActiveState::new(&t);
        let id = t.box_at(1, [3, 3, 0]).unwrap();
        let sets = active_dof_sets(&t, &s, id).unwrap();
        assert_eq!(sets.b, t.boxes()[id].dof_ids);
        assert_eq!(sets.n.len(), 8 * 16);
        assert_eq!(sets.o.len(), 16 * 16);
        let mut all: Vec<usize> = sets.b.iter().chain(&sets.n).chain(&sets.o).copied().collect();
        let len = all.len();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), len);
    }

    #[test]
    fn proxy_circle_geometry() {
        let pts = proxy_points(&[0.5, 0.5], 1.0, 4, DEFAULT_PROXY_RADIUS).unwrap();
        let expect = [[3.0, 0.5], [0.5, 3.0], [-2.0, 0.5], [0.5, -2.0]];
        for (p, e) in pts.iter().zip(expect) {
            assert!((p[0] - e[0]).abs() < 1e-14 && (p[1] - e[1]).abs() < 1e-14);
        }
        let sphere = proxy_points(&[0.1, 0.2, 0.3], 0.25, 64, DEFAULT_PROXY_RADIUS).unwrap();
        for p in sphere.iter() {
            let r = ((p[0] - 0.1).powi(2) + (p[1] - 0.2).powi(2) + (p[2] - 0.3).powi(2)).sqrt();
            assert!((r - 0.625).abs() < 1e-14);
        }
        assert!(1.5 * 2f64.sqrt() < DEFAULT_PROXY_RADIUS);
    }

    #[test]
    fn activity_shrinks_by_redundant_count() {
        let t = build_tree(&grid2d(8), 16).unwrap();
        let mut s = ActiveState::new(&t);
        let id = t.level(1)[0];
        let dofs = t.boxes()[id].dof_ids.clone();
        s.retire(id, &dofs[..4], &dofs[4..]);
        assert_eq!(s.num_active(), 64 - (dofs.len() - 4));
        assert_eq!(s.active_in_box(&t, id).unwrap(), dofs[..4].to_vec());
    }
}
