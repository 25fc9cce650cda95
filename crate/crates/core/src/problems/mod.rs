//! Test problems: volume integral operators on the unit square and cube,
//! a double-layer boundary operator on the sphere, and a Gaussian SPD
//! kernel.

mod mesh;
pub mod quadrature;

use std::collections::HashMap;
use std::sync::OnceLock;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub use mesh::TriangleMesh;
use quadrature::{gauss_legendre01, log_self_integral_2d, newton_self_integral_3d};

use crate::error::{Error, Result};
use crate::geometry::PointSet;
use crate::source::{KernelKind, KernelSpec, MatrixSource};

/// Points, weights and diagonal of a discretized integral operator.
#[derive(Clone, Debug)]
pub struct Discretization {
    pub points: PointSet,
    pub weights: Vec<f64>,
    pub normals: Option<Vec<f64>>,
    pub areas: Option<Vec<f64>>,
    pub diagonal: Vec<f64>,
    pub kernel: KernelKind,
}

impl Discretization {
    fn source(&self) -> Result<MatrixSource> {
        MatrixSource::new(
            self.points.clone(),
            KernelSpec {
                kind: self.kernel,
                weights: self.weights.clone(),
                normals: self.normals.clone(),
            },
            self.diagonal.clone(),
        )
    }
}

fn unit_square_self() -> f64 {
    static V: OnceLock<f64> = OnceLock::new();
    *V.get_or_init(|| log_self_integral_2d(1e-12))
}

fn unit_cube_self() -> f64 {
    static V: OnceLock<f64> = OnceLock::new();
    *V.get_or_init(|| newton_self_integral_3d(1e-10))
}

fn cell_centers(n: usize, dim: usize) -> PointSet {
    let h = 1.0 / n as f64;
    let total = n.pow(dim as u32);
    let mut coords = Vec::with_capacity(total * dim);
    for idx in 0..total {
        let mut r = idx;
        for _ in 0..dim {
            coords.push(((r % n) as f64 + 0.5) * h);
            r /= n;
        }
    }
    PointSet::new(dim, coords).expect("grid points are finite")
}

/// Piecewise-constant collocation of `−ln‖x − y‖/2π` on an `n × n` grid of
/// `[0,1]²`: off-diagonal entries `K(x_i − x_j)/N`, diagonal entries the
/// exact cell self-integral.
pub fn build_square2d(n: usize) -> Result<(Discretization, MatrixSource)> {
    if n < 2 {
        return Err(Error::InvalidInput("need at least 2 cells per side".into()));
    }
    let total = n * n;
    let h = 1.0 / n as f64;
    let d = h * h * (-h.ln() / (2.0 * std::f64::consts::PI) + unit_square_self());
    let disc = Discretization {
        points: cell_centers(n, 2),
        weights: vec![h * h; total],
        normals: None,
        areas: None,
        diagonal: vec![d; total],
        kernel: KernelKind::Laplace2dLog,
    };
    let src = disc.source()?;
    Ok((disc, src))
}

/// The 3D analogue of [`build_square2d`] with kernel `1/(4π‖z‖)` on an
/// `n × n × n` grid of `[0,1]³`.
pub fn build_cube3d(n: usize) -> Result<(Discretization, MatrixSource)> {
    if n < 2 {
        return Err(Error::InvalidInput("need at least 2 cells per side".into()));
    }
    let total = n * n * n;
    let h = 1.0 / n as f64;
    let d = h * h * unit_cube_self();
    let disc = Discretization {
        points: cell_centers(n, 3),
        weights: vec![h * h * h; total],
        normals: None,
        areas: None,
        diagonal: vec![d; total],
        kernel: KernelKind::Laplace3d,
    };
    let src = disc.source()?;
    Ok((disc, src))
}

/// `∫_T (x − y)·n/(4π‖x − y‖³) dy` over triangle `t` with a 4×4
/// Gauss–Legendre rule on the square mapped by
/// `y = a + u(b − a) + uv(c − b)`.
pub fn dlp_triangle(mesh: &TriangleMesh, t: usize, x: &[f64; 3]) -> f64 {
    let (g, w) = gauss_legendre01(4);
    let [a, b, c] = mesh.corners(t);
    let n = mesh.normals[t];
    let two_area = 2.0 * mesh.areas[t];
    let kernel = KernelKind::Laplace3dDlp;
    let mut acc = 0.0;
    for (u, wu) in g.iter().zip(&w) {
        for (v, wv) in g.iter().zip(&w) {
            let y = [
                a[0] + u * (b[0] - a[0]) + u * v * (c[0] - b[0]),
                a[1] + u * (b[1] - a[1]) + u * v * (c[1] - b[1]),
                a[2] + u * (b[2] - a[2]) + u * v * (c[2] - b[2]),
            ];
            acc += wu * wv * two_area * u * kernel.eval(x, &y, &n);
        }
    }
    acc
}

/// Pairs of distinct triangles whose centroids are closer than `radius`.
fn close_pairs(mesh: &TriangleMesh, radius: f64) -> Vec<(usize, usize)> {
    let key = |p: &[f64; 3]| -> [i64; 3] { p.map(|v| (v / radius).floor() as i64) };
    let mut grid: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
    for (t, c) in mesh.centroids.iter().enumerate() {
        grid.entry(key(c)).or_default().push(t);
    }
    let mut out = Vec::new();
    for (i, c) in mesh.centroids.iter().enumerate() {
        let k = key(c);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(list) = grid.get(&[k[0] + dx, k[1] + dy, k[2] + dz]) {
                        for &j in list {
                            let cj = &mesh.centroids[j];
                            let d2 = (0..3).map(|q| (c[q] - cj[q]).powi(2)).sum::<f64>();
                            if j != i && d2 < radius * radius {
                                out.push((i, j));
                            }
                        }
                    }
                }
            }
        }
    }
    out.sort_unstable();
    out
}

/// Centroid collocation of `−u/2 + D u` on a refined icosahedron, where
/// `D` is the double-layer operator with outward normals. Entries between
/// triangles closer than the mean triangle diameter use a 4×4 product
/// rule; the flat self term vanishes.
pub fn build_sphere_dlp(level: usize) -> Result<(TriangleMesh, Discretization, MatrixSource)> {
    let mesh = TriangleMesh::icosphere(level)?;
    let n = mesh.len();
    let coords: Vec<f64> = mesh.centroids.iter().flatten().copied().collect();
    let normals: Vec<f64> = mesh.normals.iter().flatten().copied().collect();
    let disc = Discretization {
        points: PointSet::new(3, coords)?,
        weights: mesh.areas.clone(),
        normals: Some(normals),
        areas: Some(mesh.areas.clone()),
        diagonal: vec![-0.5; n],
        kernel: KernelKind::Laplace3dDlp,
    };
    let near: HashMap<(usize, usize), f64> = close_pairs(&mesh, mesh.mean_diameter())
        .into_iter()
        .map(|(i, j)| ((i, j), dlp_triangle(&mesh, j, &mesh.centroids[i])))
        .collect();
    let src = disc.source()?.with_near(near);
    Ok((mesh, disc, src))
}

/// Gaussian kernel `exp(−‖x − y‖²/2σ²)` plus `ridge` on the diagonal.
pub fn build_gaussian_spd(points: PointSet, sigma: f64, ridge: f64) -> Result<MatrixSource> {
    if !(sigma > 0.0) || !(ridge >= 0.0) {
        return Err(Error::InvalidInput("need sigma > 0 and ridge >= 0".into()));
    }
    let n = points.len();
    MatrixSource::new(
        points,
        KernelSpec {
            kind: KernelKind::Gaussian { sigma },
            weights: vec![1.0; n],
            normals: None,
        },
        vec![1.0 + ridge; n],
    )
}

/// Seeded points uniform in the unit square.
pub fn random_points_2d(n: usize, seed: u64) -> Result<PointSet> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coords: Vec<f64> = (0..2 * n).map(|_| rng.gen::<f64>()).collect();
    PointSet::new(2, coords)
}

fn random_sphere_points(n: usize, radius: f64, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
    (0..n)
        .map(|_| loop {
            let v: [f64; 3] = [StandardNormal.sample(rng), StandardNormal.sample(rng), StandardNormal.sample(rng)];
            let r = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            if r > 1e-8 {
                break v.map(|c| radius * c / r);
            }
        })
        .collect()
}

/// Harmonic field from point charges outside the unit sphere, used to
/// measure the error of the interior Dirichlet solve.
#[derive(Clone, Debug)]
pub struct HarmonicReference {
    pub sources: Vec<[f64; 3]>,
    pub charges: Vec<f64>,
    pub targets: Vec<[f64; 3]>,
}

impl HarmonicReference {
    /// 16 sources at radius 2 with standard normal charges and 16 targets
    /// at radius 1/2, all seeded.
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sources = random_sphere_points(16, 2.0, &mut rng);
        let charges = (0..16).map(|_| StandardNormal.sample(&mut rng)).collect();
        let targets = random_sphere_points(16, 0.5, &mut rng);
        Self {
            sources,
            charges,
            targets,
        }
    }

    pub fn field(&self, x: &[f64; 3]) -> f64 {
        self.sources
            .iter()
            .zip(&self.charges)
            .map(|(y, q)| q * KernelKind::Laplace3d.eval(x, y, &[]))
            .sum()
    }

    /// Boundary data at the mesh collocation points.
    pub fn boundary_data(&self, mesh: &TriangleMesh) -> Vec<f64> {
        mesh.centroids.iter().map(|c| self.field(c)).collect()
    }

    /// Double-layer potential of density `u` at `z`, centroid rule.
    pub fn reconstruct(mesh: &TriangleMesh, u: &[f64], z: &[f64; 3]) -> f64 {
        (0..mesh.len())
            .map(|j| KernelKind::Laplace3dDlp.eval(z, &mesh.centroids[j], &mesh.normals[j]) * u[j] * mesh.areas[j])
            .sum()
    }

    /// Relative error of the reconstructed field over the targets.
    pub fn relative_error(&self, mesh: &TriangleMesh, u: &[f64]) -> Result<f64> {
        if u.len() != mesh.len() {
            return Err(Error::DimensionMismatch {
                expected: mesh.len(),
                got: u.len(),
            });
        }
        let mut num = 0.0;
        let mut den = 0.0;
        for z in &self.targets {
            let v = self.field(z);
            let e = Self::reconstruct(mesh, u, z) - v;
            num += e * e;
            den += v * v;
        }
        if den == 0.0 {
            return Err(Error::ZeroField);
        }
        Ok((num / den).sqrt())
    }
}
