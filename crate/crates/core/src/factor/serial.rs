//! Binary storage for factorizations.
//!
//! All integers are little-endian `u64` unless noted, floats are
//! little-endian `f64`, and matrices are `rows, cols` followed by the
//! entries in column-major order.
//!
//! ```text
//! magic      b"RSKF"
//! version    u32 (currently 1)
//! n, dim     u64, u32
//! method     u8 (0 = rs-s, 1 = rs-ws)
//! spd        u8
//! eps        f64
//! factors    count, then per factor:
//!              box_id, level, kind u8 (0 strong, 1 weak),
//!              redundant list, joint list, n_skel,
//!              interp, u_block, has_l u8, [l_block]
//! diagonal   count, then per block:
//!              dof list, tag u8 (0 cholesky, 1 lu), matrix, [perm list]
//! levels     count, then per level:
//!              level, strong_steps, weak_steps, max_skeleton, active_after
//! ```
//! Lists are a count followed by that many `u64`.

use std::io::{Read, Write};

use nalgebra::DMatrix;

use super::{BlockDiagonal, DiagBlock, Factorization, LevelStats, Method};
use crate::dense::PivotFactor;
use crate::error::{Error, Result};
use crate::skel::{SkelFactor, SkelKind};

const MAGIC: &[u8; 4] = b"RSKF";
const VERSION: u32 = 1;

struct Writer<W: Write>(W);

impl<W: Write> Writer<W> {
    fn u8(&mut self, v: u8) -> Result<()> {
        Ok(self.0.write_all(&[v])?)
    }
    fn u32(&mut self, v: u32) -> Result<()> {
        Ok(self.0.write_all(&v.to_le_bytes())?)
    }
    fn u64(&mut self, v: usize) -> Result<()> {
        Ok(self.0.write_all(&(v as u64).to_le_bytes())?)
    }
    fn f64(&mut self, v: f64) -> Result<()> {
        Ok(self.0.write_all(&v.to_le_bytes())?)
    }
    fn list(&mut self, v: &[usize]) -> Result<()> {
        self.u64(v.len())?;
        v.iter().try_for_each(|&x| self.u64(x))
    }
    fn matrix(&mut self, m: &DMatrix<f64>) -> Result<()> {
        self.u64(m.nrows())?;
        self.u64(m.ncols())?;
        m.iter().try_for_each(|&x| self.f64(x))
    }
}

struct Reader<R: Read>(R);

impl<R: Read> Reader<R> {
    fn bytes<const K: usize>(&mut self) -> Result<[u8; K]> {
        let mut b = [0u8; K];
        self.0.read_exact(&mut b)?;
        Ok(b)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes::<1>()?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }
    fn u64(&mut self) -> Result<usize> {
        usize::try_from(u64::from_le_bytes(self.bytes()?)).map_err(|_| Error::Format("count overflow".into()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }
    fn count(&mut self, limit: usize) -> Result<usize> {
        let n = self.u64()?;
        if n > limit {
            return Err(Error::Format(format!("length {n} exceeds {limit}")));
        }
        Ok(n)
    }
    fn list(&mut self, n_max: usize) -> Result<Vec<usize>> {
        let len = self.count(n_max)?;
        let v = (0..len).map(|_| self.u64()).collect::<Result<Vec<_>>>()?;
        if v.iter().any(|&x| x >= n_max) {
            return Err(Error::Format("index out of range".into()));
        }
        Ok(v)
    }
    fn matrix(&mut self, n_max: usize) -> Result<DMatrix<f64>> {
        let r = self.count(n_max)?;
        let c = self.count(n_max)?;
        let data = (0..r * c).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
        Ok(DMatrix::from_vec(r, c, data))
    }
}

impl Factorization {
    pub fn write_to<W: Write>(&self, out: W) -> Result<()> {
        let mut w = Writer(out);
        w.0.write_all(MAGIC)?;
        w.u32(VERSION)?;
        w.u64(self.n)?;
        w.u32(self.dim as u32)?;
        w.u8(match self.method {
            Method::RsS => 0,
            Method::RsWs => 1,
        })?;
        w.u8(self.spd as u8)?;
        w.f64(self.eps)?;
        w.u64(self.factors.len())?;
        for f in &self.factors {
            w.u64(f.box_id)?;
            w.u64(f.level)?;
            w.u8(match f.kind {
                SkelKind::Strong => 0,
                SkelKind::Weak => 1,
            })?;
            w.list(&f.redundant)?;
            w.list(&f.joint)?;
            w.u64(f.n_skel)?;
            w.matrix(&f.interp)?;
            w.matrix(&f.u_block)?;
            match &f.l_block {
                Some(l) => {
                    w.u8(1)?;
                    w.matrix(l)?;
                }
                None => w.u8(0)?,
            }
        }
        w.u64(self.diag.blocks.len())?;
        for b in &self.diag.blocks {
            w.list(&b.dofs)?;
            match &b.pivot {
                PivotFactor::Cholesky { l } => {
                    w.u8(0)?;
                    w.matrix(l)?;
                }
                PivotFactor::Lu { lu, perm } => {
                    w.u8(1)?;
                    w.matrix(lu)?;
                    w.list(perm)?;
                }
            }
        }
        w.u64(self.levels.len())?;
        for l in &self.levels {
            for v in [l.level, l.strong_steps, l.weak_steps, l.max_skeleton, l.active_after] {
                w.u64(v)?;
            }
        }
        Ok(w.0.flush()?)
    }

    pub fn read_from<R: Read>(input: R) -> Result<Self> {
        let mut r = Reader(input);
        if &r.bytes::<4>()? != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let n = r.u64()?;
        let dim = r.u32()? as usize;
        let method = match r.u8()? {
            0 => Method::RsS,
            1 => Method::RsWs,
            m => return Err(Error::Format(format!("bad method tag {m}"))),
        };
        let spd = r.u8()? != 0;
        let eps = r.f64()?;
        let nf = r.count(n.max(1) * 4)?;
        let mut factors = Vec::with_capacity(nf);
        for _ in 0..nf {
            let box_id = r.u64()?;
            let level = r.u64()?;
            let kind = match r.u8()? {
                0 => SkelKind::Strong,
                1 => SkelKind::Weak,
                k => return Err(Error::Format(format!("bad kind tag {k}"))),
            };
            let redundant = r.list(n)?;
            let joint = r.list(n)?;
            let n_skel = r.u64()?;
            let interp = r.matrix(n)?;
            let u_block = r.matrix(n)?;
            let l_block = if r.u8()? == 1 { Some(r.matrix(n)?) } else { None };
            if n_skel > joint.len()
                || interp.shape() != (n_skel, redundant.len())
                || u_block.shape() != (redundant.len(), joint.len())
                || l_block.as_ref().is_some_and(|l| l.shape() != (joint.len(), redundant.len()))
            {
                return Err(Error::Format("inconsistent factor block shapes".into()));
            }
            factors.push(SkelFactor {
                box_id,
                level,
                kind,
                redundant,
                joint,
                n_skel,
                interp,
                u_block,
                l_block,
            });
        }
        let nb = r.count(n.max(1) * 4)?;
        let mut blocks = Vec::with_capacity(nb);
        for _ in 0..nb {
            let dofs = r.list(n)?;
            let pivot = match r.u8()? {
                0 => PivotFactor::Cholesky { l: r.matrix(n)? },
                1 => {
                    let lu = r.matrix(n)?;
                    let perm = r.list(n)?;
                    PivotFactor::Lu { lu, perm }
                }
                t => return Err(Error::Format(format!("bad pivot tag {t}"))),
            };
            if pivot.dim() != dofs.len() {
                return Err(Error::Format("diagonal block size mismatch".into()));
            }
            blocks.push(DiagBlock { dofs, pivot });
        }
        let nl = r.count(64)?;
        let mut levels = Vec::with_capacity(nl);
        for _ in 0..nl {
            levels.push(LevelStats {
                level: r.u64()?,
                strong_steps: r.u64()?,
                weak_steps: r.u64()?,
                max_skeleton: r.u64()?,
                active_after: r.u64()?,
            });
        }
        Ok(Factorization {
            n,
            dim,
            method,
            spd,
            eps,
            factors,
            diag: BlockDiagonal { blocks },
            levels,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::super::{factorize, FactorOptions};
    use super::*;
    use crate::geometry::{build_tree, PointSet};
    use crate::skel::Compression;
    use crate::source::{KernelKind, KernelSpec, MatrixSource};

    #[test]
    fn round_trip_preserves_operator() {
        let m = 16;
        let pts: Vec<[f64; 2]> = (0..m * m)
            .map(|i| [(i % m) as f64 / m as f64, (i / m) as f64 / m as f64])
            .collect();
        let points = PointSet::from_points(&pts).unwrap();
        let tree = build_tree(&points, 16).unwrap();
        let spec = KernelSpec {
            kind: KernelKind::Laplace2dLog,
            weights: vec![1.0 / 256.0; 256],
            normals: None,
        };
        let mut src = MatrixSource::new(points, spec, vec![0.05; 256]).unwrap();
        for spd in [false, true] {
            let f = factorize(
                &mut src,
                &tree,
                &FactorOptions {
                    method: Method::RsWs,
                    eps: 1e-6,
                    compression: Compression::proxy(32),
                    spd,
                },
            )
            .unwrap();
            let mut buf = Vec::new();
            f.write_to(&mut buf).unwrap();
            let g = Factorization::read_from(buf.as_slice()).unwrap();
            let x: Vec<f64> = (0..256).map(|i| (i as f64).sin()).collect();
            assert_eq!(f.apply(&x).unwrap(), g.apply(&x).unwrap());
            assert_eq!(f.solve(&x).unwrap(), g.solve(&x).unwrap());
            assert_eq!(f.levels(), g.levels());
            assert_eq!(g.is_spd(), spd);
        }
    }

    #[test]
    fn garbage_rejected() {
        assert!(matches!(Factorization::read_from(&b"NOPE"[..]), Err(Error::Format(_))));
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&9u32.to_le_bytes());
        assert!(matches!(Factorization::read_from(buf.as_slice()), Err(Error::Format(_))));
        assert!(Factorization::read_from(&MAGIC[..]).is_err());
    }
}
