//! End-to-end acceptance checks at desk scale. Prints one PASS/FAIL line per
//! criterion and exits non-zero if any hard criterion fails. Criterion 10 is
//! informational: its line says SOFT-FAIL instead of failing the run.

use std::time::Instant;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use rskel::bench::{run_benchmark_full, Metric, Problem, RunConfig, RunOutput, CG_RTOL};
use rskel::factor::{factorize, Factorization, Method};
use rskel::problems::build_sphere_dlp;
use rskel::verify::{dense_assemble, pcg_solve, LinOp};

// Tolerances and budgets, one place.
const EXACT_EPS: f64 = 1e-15;
const EXACT_TOL: f64 = 1e-12;
const EXACT_SECS: f64 = 10.0;
const ACCURACY_FACTOR: f64 = 100.0;
const SQUARE_SECS: f64 = 60.0;
const CUBE_SECS: f64 = 120.0;
const MAX_PCG_ITERS: usize = 5;
const UNPRECONDITIONED_FLOOR: usize = 100;
const SPHERE_EP_MAX: f64 = 5e-2;
const GAUSS_ROWSUM_TOL: f64 = 5e-2;
const ROUNDTRIP_TOL: f64 = 1e-12;
const ROUNDTRIP_PROBES: usize = 10;
const LOGDET_RTOL: f64 = 1e-6;
const SQRT_TOL: f64 = 1e-10;
const SCALING_RATIO: f64 = 6.0;

struct Suite {
    lines: Vec<(usize, bool, bool, String)>,
    worst_roundtrip: f64,
    roundtrip_count: usize,
    cache_blocks_seen: usize,
    invariant_failures: Vec<String>,
}

impl Suite {
    fn record(&mut self, id: usize, pass: bool, detail: String) {
        self.report(id, pass, false, detail);
    }

    fn report(&mut self, id: usize, pass: bool, soft: bool, detail: String) {
        self.lines.push((id, pass, soft, detail));
    }

    /// Bookkeeping every factorization goes through: solve/apply round trip
    /// and a final adjacency scan of the update cache.
    fn audit(&mut self, label: &str, out: &RunOutput) {
        self.audit_parts(label, &out.factorization, &out.instance.src);
    }

    fn audit_parts(&mut self, label: &str, f: &Factorization, src: &rskel::source::MatrixSource) {
        let mut rng = ChaCha8Rng::seed_from_u64(0xacc);
        for _ in 0..ROUNDTRIP_PROBES {
            let x: Vec<f64> = (0..f.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
            let y = f.solve(&f.apply(&x).unwrap()).unwrap();
            let r = norm(&sub(&y, &x)) / norm(&x);
            self.worst_roundtrip = self.worst_roundtrip.max(r);
            self.roundtrip_count += 1;
        }
        self.cache_blocks_seen += src.cache().num_blocks();
        if let Err(e) = src.cache().check_reach(1) {
            self.invariant_failures.push(format!("{label}: {e}"));
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn config(problem: Problem, size: usize, eps: f64, method: Method, metrics: &[Metric]) -> RunConfig {
    RunConfig::new(problem, size, eps, method).with_metrics(metrics)
}

/// Run a benchmark and time the whole thing, metrics included.
fn timed(suite: &mut Suite, label: &str, cfg: &RunConfig) -> Option<(RunOutput, f64)> {
    let start = Instant::now();
    match run_benchmark_full(cfg) {
        Ok(out) => {
            let secs = start.elapsed().as_secs_f64();
            suite.audit(label, &out);
            Some((out, secs))
        }
        Err(e) => {
            suite.invariant_failures.push(format!("{label}: {e}"));
            println!("  {label}: run failed: {e}");
            None
        }
    }
}

fn criterion_1(s: &mut Suite) {
    let start = Instant::now();
    let mut cfg = RunConfig::new(Problem::Square2d, 16, EXACT_EPS, Method::RsS);
    cfg.n_occ = 16;
    let mut worst: f64 = 0.0;
    let mut detail = Vec::new();
    for method in [Method::RsS, Method::RsWs] {
        cfg.method = method;
        let mut inst = rskel::bench::build_instance(&cfg).unwrap();
        let f = factorize(&mut inst.src, &inst.tree, &inst.options).unwrap();
        let n = f.len();
        let ids: Vec<usize> = (0..n).collect();
        let k = dense_assemble(&inst.src, &ids).unwrap();
        let mut fd = DMatrix::zeros(n, n);
        for j in 0..n {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            fd.set_column(j, &nalgebra::DVector::from_vec(f.apply(&e).unwrap()));
        }
        let rel = (&fd - &k).norm() / k.norm();
        worst = worst.max(rel);
        detail.push(format!("{method} {rel:.1e}"));
        s.audit_parts(&format!("exact {method}"), &f, &inst.src);
    }
    let secs = start.elapsed().as_secs_f64();
    s.record(
        1,
        worst <= EXACT_TOL && secs < EXACT_SECS,
        format!("N=256 eps=1e-15 ‖F−K‖_F/‖K‖_F: {} (≤ {EXACT_TOL:.0e}); {secs:.2}s (< {EXACT_SECS}s)", detail.join(", ")),
    );
}

/// Criteria 2, 3 and the square half of 9.
fn square_runs(s: &mut Suite) -> Vec<(Method, usize)> {
    let mut ok2 = true;
    let mut d2 = Vec::new();
    let mut ok3 = true;
    let mut d3 = Vec::new();
    let mut mem = Vec::new();
    for eps in [1e-6, 1e-9] {
        for method in [Method::RsS, Method::RsWs] {
            let mut metrics = vec![Metric::Ea];
            if eps == 1e-6 {
                metrics.push(Metric::Ni);
            }
            let label = format!("square2d 64² {method} eps={eps:.0e}");
            let Some((out, secs)) = timed(s, &label, &config(Problem::Square2d, 64, eps, method, &metrics)) else {
                ok2 = false;
                continue;
            };
            let e_a = out.report.e_a.unwrap();
            ok2 &= e_a <= ACCURACY_FACTOR * eps && secs < SQUARE_SECS;
            d2.push(format!("{method}@{eps:.0e} e_a={e_a:.1e} ({secs:.1}s)"));
            if let Some(n_i) = out.report.n_i {
                ok3 &= n_i <= MAX_PCG_ITERS;
                d3.push(format!("{method} n_i={n_i}"));
                mem.push((method, out.report.m_f));
            }
        }
    }
    s.record(2, ok2, format!("square2d N=4096, e_a ≤ 100·eps, < {SQUARE_SECS}s: {}", d2.join(", ")));

    let (_, src) = rskel::problems::build_square2d(64).unwrap();
    let ids: Vec<usize> = (0..src.len()).collect();
    let k = dense_assemble(&src, &ids).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let x: Vec<f64> = (0..ids.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
    let b = k.apply(&x);
    let plain = pcg_solve(&k, None, &b, CG_RTOL, UNPRECONDITIONED_FLOOR).unwrap();
    ok3 &= !plain.converged;
    d3.push(format!(
        "unpreconditioned residual after {UNPRECONDITIONED_FLOOR} its {:.1e}",
        plain.residuals.last().unwrap()
    ));
    s.record(3, ok3, format!("square2d N=4096 eps=1e-6, n_i ≤ {MAX_PCG_ITERS}, plain CG > {UNPRECONDITIONED_FLOOR}: {}", d3.join(", ")));
    mem
}

fn cube_runs(s: &mut Suite) -> Vec<(Method, usize)> {
    let mut ok = true;
    let mut d = Vec::new();
    let mut mem = Vec::new();
    for method in [Method::RsS, Method::RsWs] {
        let label = format!("cube3d 16³ {method}");
        let Some((out, secs)) = timed(s, &label, &config(Problem::Cube3d, 16, 1e-6, method, &[Metric::Ea, Metric::Ni])) else {
            ok = false;
            continue;
        };
        let (e_a, n_i) = (out.report.e_a.unwrap(), out.report.n_i.unwrap());
        ok &= e_a <= ACCURACY_FACTOR * 1e-6 && n_i <= MAX_PCG_ITERS && secs < CUBE_SECS;
        d.push(format!("{method} e_a={e_a:.1e} n_i={n_i} ({secs:.1}s)"));
        mem.push((method, out.report.m_f));
    }
    s.record(4, ok, format!("cube3d N=4096 eps=1e-6: {}", d.join(", ")));
    mem
}

fn criterion_5(s: &mut Suite) {
    let mut eps_p = Vec::new();
    for level in 2..=4 {
        let label = format!("sphere level {level}");
        match timed(s, &label, &config(Problem::Sphere, level, 1e-6, Method::RsS, &[Metric::Ep])) {
            Some((out, _)) => eps_p.push(out.report.e_p.unwrap()),
            None => eps_p.push(f64::NAN),
        }
    }
    let monotone = eps_p.windows(2).all(|w| w[1] < w[0]);
    let last = *eps_p.last().unwrap();

    let (mesh, _, src) = build_sphere_dlp(3).unwrap();
    let n = mesh.len();
    let mut rowsum: f64 = 0.0;
    for i in 0..n {
        let off: f64 = (0..n).filter(|&j| j != i).map(|j| src.raw_entry(i, j)).sum();
        rowsum = rowsum.max((off + 0.5).abs());
    }
    s.record(
        5,
        monotone && last <= SPHERE_EP_MAX && rowsum <= GAUSS_ROWSUM_TOL,
        format!(
            "sphere e_p levels 2..4: {} (monotone {monotone}, last ≤ {SPHERE_EP_MAX:.0e}); Gauss row-sum deviation at level 3 {rowsum:.1e} (≤ {GAUSS_ROWSUM_TOL:.0e})",
            eps_p.iter().map(|e| format!("{e:.2e}")).collect::<Vec<_>>().join(", ")
        ),
    );
}

fn criterion_8(s: &mut Suite) {
    let mut ok = true;
    let mut d = Vec::new();
    for method in [Method::RsS, Method::RsWs] {
        let label = format!("gaussian-spd {method}");
        let Some((out, _)) = timed(s, &label, &config(Problem::GaussianSpd, 512, 1e-9, method, &[Metric::Logdet])) else {
            ok = false;
            continue;
        };
        let f = &out.factorization;
        let ids: Vec<usize> = (0..f.len()).collect();
        let k = dense_assemble(&out.instance.src, &ids).unwrap();
        let chol = k.clone().cholesky().expect("fixture is positive definite");
        let exact: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let logdet = out.report.logdet.unwrap();
        let rel = ((logdet - exact) / exact).abs();

        let mut rng = ChaCha8Rng::seed_from_u64(88);
        let mut worst: f64 = 0.0;
        let mut vs_k: f64 = 0.0;
        for _ in 0..ROUNDTRIP_PROBES {
            let x: Vec<f64> = (0..f.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
            let fx = f.apply(&x).unwrap();
            let ssx = f.apply_sqrt(&f.apply_sqrt_transpose(&x).unwrap()).unwrap();
            worst = worst.max(norm(&sub(&ssx, &fx)) / norm(&fx));
            let kx = k.apply(&x);
            vs_k = vs_k.max(norm(&sub(&ssx, &kx)) / norm(&kx));
        }
        ok &= rel <= LOGDET_RTOL && worst <= SQRT_TOL;
        d.push(format!("{method} logdet rel err {rel:.1e}, sqrt err {worst:.1e} (vs K: {vs_k:.1e})"));
    }
    s.record(8, ok, format!("gaussian-spd N=512 eps=1e-9 (logdet ≤ {LOGDET_RTOL:.0e}, sqrt ≤ {SQRT_TOL:.0e}): {}", d.join(", ")));
}

fn criterion_9(s: &mut Suite, square: &[(Method, usize)], cube: &[(Method, usize)]) {
    let mut ok = true;
    let mut d = Vec::new();
    for (name, runs) in [("square2d 64²", square), ("cube3d 16³", cube)] {
        let get = |m: Method| runs.iter().find(|(k, _)| *k == m).map(|(_, b)| *b);
        match (get(Method::RsS), get(Method::RsWs)) {
            (Some(a), Some(b)) => {
                ok &= b < a;
                d.push(format!("{name} rs-ws {:.1} MB vs rs-s {:.1} MB", b as f64 / 1e6, a as f64 / 1e6));
            }
            _ => {
                ok = false;
                d.push(format!("{name} missing runs"));
            }
        }
    }
    s.record(9, ok, d.join(", "));
}

fn criterion_10(s: &mut Suite) {
    let mut times = Vec::new();
    let mut ks = Vec::new();
    for n in [32, 64, 128] {
        // best of three, to keep scheduler noise out of the ratio
        let mut best = f64::INFINITY;
        let mut k = Vec::new();
        for rep in 0..3 {
            let Some((out, _)) = timed(s, &format!("square2d {n}² scaling"), &config(Problem::Square2d, n, 1e-6, Method::RsS, &[])) else {
                return s.report(10, false, true, format!("run at {n}² failed"));
            };
            best = best.min(out.report.t_f);
            if rep == 0 {
                k = out.report.k_levels.clone();
            }
        }
        times.push(best);
        ks.push(format!("{}²: k={:?}", n, k));
    }
    let ratios: Vec<f64> = times.windows(2).map(|w| w[1] / w[0]).collect();
    let ok = ratios.iter().all(|&r| r <= SCALING_RATIO);
    s.report(
        10,
        ok,
        true,
        format!(
            "t_f {} s, 4N ratios {} (≤ {SCALING_RATIO}); {}",
            times.iter().map(|t| format!("{t:.3}")).collect::<Vec<_>>().join(" / "),
            ratios.iter().map(|r| format!("{r:.2}")).collect::<Vec<_>>().join(", "),
            ks.join(", ")
        ),
    );
}

fn main() {
    let mut s = Suite {
        lines: Vec::new(),
        worst_roundtrip: 0.0,
        roundtrip_count: 0,
        cache_blocks_seen: 0,
        invariant_failures: Vec::new(),
    };
    criterion_1(&mut s);
    let square = square_runs(&mut s);
    let cube = cube_runs(&mut s);
    criterion_5(&mut s);

    // 6 and 7 summarize every factorization in the suite, so they are
    // tallied last.
    criterion_8(&mut s);
    criterion_9(&mut s, &square, &cube);
    criterion_10(&mut s);

    let inv = s.invariant_failures.clone();
    s.record(
        6,
        inv.is_empty(),
        if inv.is_empty() {
            format!(
                "no adjacency violations during any factorization; final caches held {} blocks, all within distance 1",
                s.cache_blocks_seen
            )
        } else {
            inv.join("; ")
        },
    );
    let (worst, count) = (s.worst_roundtrip, s.roundtrip_count);
    s.record(
        7,
        worst <= ROUNDTRIP_TOL,
        format!("worst ‖solve(apply(x)) − x‖/‖x‖ = {worst:.1e} over {count} probes (≤ {ROUNDTRIP_TOL:.0e})"),
    );

    s.lines.sort_by_key(|l| l.0);
    for (id, pass, soft, detail) in &s.lines {
        let tag = match (pass, soft) {
            (true, _) => "PASS",
            (false, false) => "FAIL",
            (false, true) => "SOFT-FAIL",
        };
        println!("criterion {id:>2}: {tag}  {detail}");
    }
    let failed: Vec<usize> = s.lines.iter().filter(|(_, pass, soft, _)| !pass && !soft).map(|l| l.0).collect();
    if failed.is_empty() {
        println!("acceptance: all hard criteria passed");
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
