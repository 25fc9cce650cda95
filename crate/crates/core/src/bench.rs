//! Benchmark runs: build a problem, factor it, time a solve and compute
//! the requested error metrics.

use std::collections::BTreeSet;
use std::fmt;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factor::{factorize, FactorOptions, Factorization, Method};
use crate::geometry::{build_tree, Tree};
use crate::problems::{
    build_cube3d, build_gaussian_spd, build_sphere_dlp, build_square2d, random_points_2d, HarmonicReference, TriangleMesh,
};
use crate::skel::Compression;
use crate::source::MatrixSource;
use crate::verify::{dense_assemble, forward_error, inverse_error, pcg_solve, Inverse, LinOp};

/// Bandwidth of the Gaussian test kernel.
pub const GAUSSIAN_SIGMA: f64 = 0.1;
/// Diagonal shift of the Gaussian test kernel.
pub const GAUSSIAN_RIDGE: f64 = 1e-3;
/// Relative residual target for preconditioned CG.
pub const CG_RTOL: f64 = 1e-12;
pub const CG_MAXIT: usize = 200;
pub const DEFAULT_NOCC: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Problem {
    Square2d,
    Cube3d,
    Sphere,
    GaussianSpd,
}

impl Problem {
    pub fn dim(&self) -> usize {
        match self {
            Problem::Square2d | Problem::GaussianSpd => 2,
            Problem::Cube3d | Problem::Sphere => 3,
        }
    }

    pub fn is_spd(&self) -> bool {
        !matches!(self, Problem::Sphere)
    }

    pub fn default_nproxy(&self) -> usize {
        if self.dim() == 2 {
            64
        } else {
            512
        }
    }
}

impl fmt::Display for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Problem::Square2d => "square2d",
            Problem::Cube3d => "cube3d",
            Problem::Sphere => "sphere",
            Problem::GaussianSpd => "gaussian-spd",
        })
    }
}

impl FromStr for Problem {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "square2d" => Ok(Problem::Square2d),
            "cube3d" => Ok(Problem::Cube3d),
            "sphere" => Ok(Problem::Sphere),
            "gaussian-spd" => Ok(Problem::GaussianSpd),
            other => Err(Error::InvalidInput(format!("unknown problem `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Metric {
    Ea,
    Es,
    Ni,
    Ep,
    Logdet,
}

impl FromStr for Metric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "e_a" | "ea" => Ok(Metric::Ea),
            "e_s" | "es" => Ok(Metric::Es),
            "n_i" | "ni" => Ok(Metric::Ni),
            "e_p" | "ep" => Ok(Metric::Ep),
            "logdet" => Ok(Metric::Logdet),
            other => Err(Error::InvalidInput(format!("unknown metric `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Format {
    Csv,
    Json,
}

impl FromStr for Format {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(Error::InvalidInput(format!("unknown format `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub problem: Problem,
    /// Cells per side (square2d, cube3d), refinement level (sphere) or
    /// number of points (gaussian-spd).
    pub size: usize,
    pub eps: f64,
    pub method: Method,
    pub n_occ: usize,
    pub n_p: Option<usize>,
    pub seed: u64,
    pub metrics: BTreeSet<Metric>,
}

impl RunConfig {
    pub fn new(problem: Problem, size: usize, eps: f64, method: Method) -> Self {
        Self {
            problem,
            size,
            eps,
            method,
            n_occ: DEFAULT_NOCC,
            n_p: None,
            seed: 0,
            metrics: BTreeSet::new(),
        }
    }

    pub fn with_metrics(mut self, metrics: &[Metric]) -> Self {
        self.metrics.extend(metrics.iter().copied());
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0) || !self.eps.is_finite() {
            return Err(Error::InvalidInput(format!("eps must be positive, got {}", self.eps)));
        }
        if self.n_occ == 0 {
            return Err(Error::InvalidInput("nocc must be positive".into()));
        }
        if self.n_p == Some(0) {
            return Err(Error::InvalidInput("nproxy must be positive".into()));
        }
        if self.metrics.contains(&Metric::Ep) && self.problem != Problem::Sphere {
            return Err(Error::InvalidInput("e_p is only defined for the sphere problem".into()));
        }
        if self.metrics.contains(&Metric::Ni) && !self.problem.is_spd() {
            return Err(Error::InvalidInput("n_i needs a symmetric positive definite problem".into()));
        }
        if self.metrics.contains(&Metric::Logdet) && !self.problem.is_spd() {
            return Err(Error::InvalidInput("logdet needs a symmetric positive definite problem".into()));
        }
        Ok(())
    }
}

/// A built problem ready to be factored.
pub struct Instance {
    pub problem: Problem,
    pub src: MatrixSource,
    pub tree: Tree,
    pub mesh: Option<TriangleMesh>,
    pub options: FactorOptions,
}

pub fn build_instance(cfg: &RunConfig) -> Result<Instance> {
    cfg.validate()?;
    let (src, mesh) = match cfg.problem {
        Problem::Square2d => (build_square2d(cfg.size)?.1, None),
        Problem::Cube3d => (build_cube3d(cfg.size)?.1, None),
        Problem::Sphere => {
            let (mesh, _, src) = build_sphere_dlp(cfg.size)?;
            (src, Some(mesh))
        }
        Problem::GaussianSpd => {
            let pts = random_points_2d(cfg.size, cfg.seed)?;
            (build_gaussian_spd(pts, GAUSSIAN_SIGMA, GAUSSIAN_RIDGE)?, None)
        }
    };
    let tree = build_tree(src.points(), cfg.n_occ)?;
    let compression = if cfg.problem == Problem::GaussianSpd {
        Compression::Direct
    } else {
        Compression::proxy(cfg.n_p.unwrap_or_else(|| cfg.problem.default_nproxy()))
    };
    Ok(Instance {
        problem: cfg.problem,
        src,
        tree,
        mesh,
        options: FactorOptions {
            method: cfg.method,
            eps: cfg.eps,
            compression,
            spd: cfg.problem.is_spd(),
        },
    })
}

/// One row of benchmark output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    #[serde(rename = "N")]
    pub n: usize,
    pub method: Method,
    pub eps: f64,
    pub t_f: f64,
    pub t_s: f64,
    pub m_f: usize,
    pub e_a: Option<f64>,
    pub e_s: Option<f64>,
    pub n_i: Option<usize>,
    pub e_p: Option<f64>,
    pub k_levels: Vec<usize>,
    pub logdet: Option<f64>,
}

pub const CSV_HEADER: [&str; 12] = [
    "N", "method", "eps", "t_f", "t_s", "m_f", "e_a", "e_s", "n_i", "e_p", "k_levels", "logdet",
];

fn opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(|x| x.to_string()).unwrap_or_default()
}

impl RunReport {
    pub fn csv_record(&self) -> [String; 12] {
        [
            self.n.to_string(),
            self.method.to_string(),
            self.eps.to_string(),
            self.t_f.to_string(),
            self.t_s.to_string(),
            self.m_f.to_string(),
            opt(&self.e_a),
            opt(&self.e_s),
            opt(&self.n_i),
            opt(&self.e_p),
            self.k_levels.iter().map(|k| k.to_string()).collect::<Vec<_>>().join(";"),
            opt(&self.logdet),
        ]
    }

    /// The report with wall-clock fields zeroed, for determinism checks.
    pub fn without_timings(&self) -> Self {
        Self {
            t_f: 0.0,
            t_s: 0.0,
            ..self.clone()
        }
    }
}

fn normal_vector(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// Everything a run produces, for callers that want more than the report.
pub struct RunOutput {
    pub report: RunReport,
    pub factorization: Factorization,
    pub instance: Instance,
}

pub fn run_benchmark(cfg: &RunConfig) -> Result<RunReport> {
    run_benchmark_full(cfg).map(|o| o.report)
}

pub fn run_benchmark_full(cfg: &RunConfig) -> Result<RunOutput> {
    let mut inst = build_instance(cfg)?;
    let n = inst.src.len();
    let start = Instant::now();
    let f = factorize(&mut inst.src, &inst.tree, &inst.options)?;
    let t_f = start.elapsed().as_secs_f64();

    let rhs = normal_vector(n, cfg.seed ^ 0x5eed);
    let start = Instant::now();
    let _ = f.solve(&rhs)?;
    let t_s = start.elapsed().as_secs_f64();

    let needs_dense = cfg.metrics.iter().any(|m| matches!(m, Metric::Ea | Metric::Es | Metric::Ni));
    let all: Vec<usize> = (0..n).collect();
    let k = if needs_dense {
        Some(dense_assemble(&inst.src, &all)?)
    } else {
        None
    };
    let mut report = RunReport {
        n,
        method: cfg.method,
        eps: cfg.eps,
        t_f,
        t_s,
        m_f: f.nbytes(),
        e_a: None,
        e_s: None,
        n_i: None,
        e_p: None,
        k_levels: f.k_levels(),
        logdet: None,
    };
    for metric in &cfg.metrics {
        match metric {
            Metric::Ea => report.e_a = Some(forward_error(k.as_ref().unwrap(), &f, cfg.seed)?),
            Metric::Es => report.e_s = Some(inverse_error(k.as_ref().unwrap(), &f, cfg.seed)?),
            Metric::Ni => {
                let k = k.as_ref().unwrap();
                let x = normal_vector(n, cfg.seed.wrapping_add(17));
                let b = k.apply(&x);
                let pre = Inverse(&f);
                let res = pcg_solve(k, Some(&pre as &dyn LinOp), &b, CG_RTOL, CG_MAXIT)?;
                report.n_i = Some(res.iterations);
            }
            Metric::Ep => {
                let mesh = inst.mesh.as_ref().expect("sphere instances carry a mesh");
                let reference = HarmonicReference::new(cfg.seed);
                let u = f.solve(&reference.boundary_data(mesh))?;
                report.e_p = Some(reference.relative_error(mesh, &u)?);
            }
            Metric::Logdet => report.logdet = Some(f.logdet()?),
        }
    }
    Ok(RunOutput {
        report,
        factorization: f,
        instance: inst,
    })
}

pub fn to_json(report: &RunReport) -> String {
    serde_json::to_string(report).expect("reports contain only plain data")
}

/// Append `report` to `path`. CSV files get the header when new or empty;
/// JSON output is one object per line.
pub fn emit_report(report: &RunReport, format: Format, path: &Path) -> Result<()> {
    let mut file = OpenOptions::new().create(true).append(true).open(path)?;
    let fresh = file.metadata()?.len() == 0;
    match format {
        Format::Csv => {
            let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(&mut file);
            let io = |e: csv::Error| Error::Format(e.to_string());
            if fresh {
                w.write_record(CSV_HEADER).map_err(io)?;
            }
            w.write_record(report.csv_record()).map_err(io)?;
            w.flush()?;
        }
        Format::Json => {
            writeln!(file, "{}", to_json(report))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> RunReport {
        RunReport {
            n: 256,
            method: Method::RsS,
            eps: 1e-6,
            t_f: 0.5,
            t_s: 0.01,
            m_f: 1024,
            e_a: Some(1e-7),
            e_s: None,
            n_i: Some(3),
            e_p: None,
            k_levels: vec![10, 20],
            logdet: None,
        }
    }

    #[test]
    fn csv_has_fixed_columns() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.csv");
        let mut empty = sample();
        empty.e_a = None;
        empty.n_i = None;
        emit_report(&empty, Format::Csv, &path).unwrap();
        emit_report(&sample(), Format::Csv, &path).unwrap();
        emit_report(&sample(), Format::Csv, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[0], CSV_HEADER.join(","));
        assert_eq!(lines[1].split(',').count(), 12);
        assert_eq!(lines[1].split(',').nth(6), Some(""));
        assert!(lines[2].contains("10;20"));
    }

    #[test]
    fn json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.json");
        emit_report(&sample(), Format::Json, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let back: RunReport = serde_json::from_str(text.trim()).unwrap();
        assert_eq!(back, sample());
        assert!(text.contains("\"k_levels\":[10,20]"));
    }

    #[test]
    fn config_validation() {
        let cfg = RunConfig::new(Problem::Square2d, 8, 1e-6, Method::RsS).with_metrics(&[Metric::Ep]);
        assert!(run_benchmark(&cfg).is_err());
        let cfg = RunConfig::new(Problem::Sphere, 1, 1e-6, Method::RsS).with_metrics(&[Metric::Ni]);
        assert!(run_benchmark(&cfg).is_err());
        let cfg = RunConfig::new(Problem::Square2d, 8, 0.0, Method::RsS);
        assert!(run_benchmark(&cfg).is_err());
        assert!("cube".parse::<Problem>().is_err());
        assert_eq!("gaussian-spd".parse::<Problem>().unwrap(), Problem::GaussianSpd);
    }

    #[test]
    fn small_run_is_deterministic() {
        let mut cfg = RunConfig::new(Problem::Square2d, 16, 1e-6, Method::RsWs).with_metrics(&[Metric::Ea, Metric::Ni]);
        cfg.n_occ = 16;
        let a = run_benchmark(&cfg).unwrap();
        let b = run_benchmark(&cfg).unwrap();
        assert_eq!(a.without_timings(), b.without_timings());
        assert!(a.e_a.unwrap() < 1e-4);
        assert!(a.n_i.unwrap() <= 5);
    }
}
