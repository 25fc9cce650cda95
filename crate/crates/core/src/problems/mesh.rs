//! Flat-triangle approximation of the unit sphere.

use std::collections::HashMap;
use std::io::Write;

use crate::error::{Error, Result};

type V3 = [f64; 3];

fn sub(a: &V3, b: &V3) -> V3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: &V3, b: &V3) -> V3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn dot(a: &V3, b: &V3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm(a: &V3) -> f64 {
    dot(a, a).sqrt()
}

fn unit(a: V3) -> V3 {
    let n = norm(&a);
    [a[0] / n, a[1] / n, a[2] / n]
}

/// Closed triangle mesh with per-triangle centroid, outward normal and area.
#[derive(Clone, Debug)]
pub struct TriangleMesh {
    pub vertices: Vec<V3>,
    pub triangles: Vec<[usize; 3]>,
    pub centroids: Vec<V3>,
    pub normals: Vec<V3>,
    pub areas: Vec<f64>,
}

impl TriangleMesh {
    /// Icosahedron refined `level` times by edge midpoints, with vertices
    /// pushed onto the unit sphere. Has `20 · 4^level` triangles.
    pub fn icosphere(level: usize) -> Result<Self> {
        if level > 8 {
            return Err(Error::InvalidInput(format!("refinement level {level} too large")));
        }
        let t = (1.0 + 5f64.sqrt()) / 2.0;
        let mut vertices: Vec<V3> = [
            [-1.0, t, 0.0],
            [1.0, t, 0.0],
            [-1.0, -t, 0.0],
            [1.0, -t, 0.0],
            [0.0, -1.0, t],
            [0.0, 1.0, t],
            [0.0, -1.0, -t],
            [0.0, 1.0, -t],
            [t, 0.0, -1.0],
            [t, 0.0, 1.0],
            [-t, 0.0, -1.0],
            [-t, 0.0, 1.0],
        ]
        .into_iter()
        .map(unit)
        .collect();
        let mut triangles: Vec<[usize; 3]> = vec![
            [0, 11, 5],
            [0, 5, 1],
            [0, 1, 7],
            [0, 7, 10],
            [0, 10, 11],
            [1, 5, 9],
            [5, 11, 4],
            [11, 10, 2],
            [10, 7, 6],
            [7, 1, 8],
            [3, 9, 4],
            [3, 4, 2],
            [3, 2, 6],
            [3, 6, 8],
            [3, 8, 9],
            [4, 9, 5],
            [2, 4, 11],
            [6, 2, 10],
            [8, 6, 7],
            [9, 8, 1],
        ];
        for _ in 0..level {
            let mut mid: HashMap<(usize, usize), usize> = HashMap::new();
            let mut midpoint = |a: usize, b: usize, vertices: &mut Vec<V3>| {
                let key = (a.min(b), a.max(b));
                *mid.entry(key).or_insert_with(|| {
                    let (p, q) = (vertices[a], vertices[b]);
                    vertices.push(unit([p[0] + q[0], p[1] + q[1], p[2] + q[2]]));
                    vertices.len() - 1
                })
            };
            let mut next = Vec::with_capacity(triangles.len() * 4);
            for [a, b, c] in triangles {
                let ab = midpoint(a, b, &mut vertices);
                let bc = midpoint(b, c, &mut vertices);
                let ca = midpoint(c, a, &mut vertices);
                next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
            }
            triangles = next;
        }
        Ok(Self::from_parts(vertices, triangles))
    }

    /// Compute centroids, areas and normals, flipping triangles so the
    /// normal points away from the origin.
    fn from_parts(vertices: Vec<V3>, mut triangles: Vec<[usize; 3]>) -> Self {
        let mut centroids = Vec::with_capacity(triangles.len());
        let mut normals = Vec::with_capacity(triangles.len());
        let mut areas = Vec::with_capacity(triangles.len());
        for tri in triangles.iter_mut() {
            let [a, b, c] = tri.map(|i| vertices[i]);
            let cen = [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0, (a[2] + b[2] + c[2]) / 3.0];
            let mut n = cross(&sub(&b, &a), &sub(&c, &a));
            let twice = norm(&n);
            if dot(&n, &cen) < 0.0 {
                tri.swap(1, 2);
                n = [-n[0], -n[1], -n[2]];
            }
            centroids.push(cen);
            normals.push([n[0] / twice, n[1] / twice, n[2] / twice]);
            areas.push(0.5 * twice);
        }
        Self {
            vertices,
            triangles,
            centroids,
            normals,
            areas,
        }
    }

    pub fn len(&self) -> usize {
        self.triangles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn corners(&self, t: usize) -> [V3; 3] {
        self.triangles[t].map(|i| self.vertices[i])
    }

    /// Longest edge of triangle `t`.
    pub fn diameter(&self, t: usize) -> f64 {
        let [a, b, c] = self.corners(t);
        norm(&sub(&a, &b)).max(norm(&sub(&b, &c))).max(norm(&sub(&c, &a)))
    }

    pub fn mean_diameter(&self) -> f64 {
        (0..self.len()).map(|t| self.diameter(t)).sum::<f64>() / self.len() as f64
    }

    /// Whitespace-delimited dump: vertex count, vertices, triangle count,
    /// triangles (0-based).
    pub fn write_text<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{}", self.vertices.len())?;
        for v in &self.vertices {
            writeln!(out, "{:.17e} {:.17e} {:.17e}", v[0], v[1], v[2])?;
        }
        writeln!(out, "{}", self.triangles.len())?;
        for t in &self.triangles {
            writeln!(out, "{} {} {}", t[0], t[1], t[2])?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_and_orientation() {
        for level in 0..4 {
            let m = TriangleMesh::icosphere(level).unwrap();
            assert_eq!(m.len(), 20 * 4usize.pow(level as u32));
            // Euler characteristic of the sphere
            assert_eq!(m.vertices.len() + m.len() - 3 * m.len() / 2, 2);
            for t in 0..m.len() {
                assert!(m.areas[t] > 0.0);
                assert!(dot(&m.normals[t], &m.centroids[t]) > 0.0);
                assert!((norm(&m.normals[t]) - 1.0).abs() < 1e-14);
            }
        }
        assert_eq!(TriangleMesh::icosphere(4).unwrap().len(), 5120);
    }

    #[test]
    fn area_approaches_sphere() {
        let total: f64 = TriangleMesh::icosphere(4).unwrap().areas.iter().sum();
        assert!((total - 4.0 * std::f64::consts::PI).abs() < 0.02);
    }

    #[test]
    fn text_export() {
        let m = TriangleMesh::icosphere(0).unwrap();
        let mut buf = Vec::new();
        m.write_text(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let tokens: Vec<&str> = text.split_whitespace().collect();
        assert_eq!(tokens[0], "12");
        assert_eq!(tokens.len(), 1 + 36 + 1 + 60);
    }
}
