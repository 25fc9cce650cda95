//! One-dimensional rules and the self-interaction integrals of the
//! volume problems.

use std::f64::consts::PI;

/// Gauss–Legendre nodes and weights on `[0, 1]`.
pub fn gauss_legendre01(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        // Newton iteration on P_n from the Chebyshev-like initial guess
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let p = if n == 0 { 1.0 } else { p1 };
            let pm1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * p - pm1) / (x * x - 1.0);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = 0.5 * (1.0 - x);
        weights[i] = 1.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

/// Adaptive Simpson quadrature to absolute tolerance `tol`.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn step(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let diff = left + right - whole;
        if depth == 0 || diff.abs() <= 15.0 * tol {
            return left + right + diff / 15.0;
        }
        step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) + step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
    let fa = f(a);
    let fb = f(b);
    let fm = f(0.5 * (a + b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    step(f, a, b, fa, fm, fb, whole, tol, 48)
}

/// `∫ −ln‖u‖/2π du` over the unit square centred at the origin.
///
/// The square is split into four triangles with apex at the origin, each
/// mapped to `u = λ (1/2, s)`; the integrand is then bounded and both
/// directions are integrated adaptively.
pub fn log_self_integral_2d(tol: f64) -> f64 {
    let inner = |s: f64| {
        let rho = (0.25 + s * s).sqrt();
        let g = move |lam: f64| {
            if lam == 0.0 {
                0.0
            } else {
                -0.5 * lam * (lam * rho).ln() / (2.0 * PI)
            }
        };
        adaptive_simpson(&g, 0.0, 1.0, tol * 1e-2)
    };
    8.0 * adaptive_simpson(&inner, 0.0, 0.5, tol / 8.0)
}

/// `∫ 1/(4π‖u‖) du` over the unit cube centred at the origin, by the same
/// apex split into six pyramids with the radial direction done exactly.
pub fn newton_self_integral_3d(tol: f64) -> f64 {
    let outer = |s: f64| {
        let g = move |t: f64| 1.0 / (16.0 * PI * (0.25 + s * s + t * t).sqrt());
        adaptive_simpson(&g, 0.0, 0.5, tol * 1e-2)
    };
    24.0 * adaptive_simpson(&outer, 0.0, 0.5, tol / 24.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_exact_for_polynomials() {
        for n in 1..8 {
            let (x, w) = gauss_legendre01(n);
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-14);
            for p in 0..(2 * n) {
                let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(p as i32)).sum();
                assert!((q - 1.0 / (p as f64 + 1.0)).abs() < 1e-13, "n={n} p={p}");
            }
        }
    }

    #[test]
    fn simpson_handles_smooth_and_log() {
        let v = adaptive_simpson(&|x: f64| x.exp(), 0.0, 1.0, 1e-12);
        assert!((v - (1f64.exp() - 1.0)).abs() < 1e-11);
        let v = adaptive_simpson(&|x: f64| if x == 0.0 { 0.0 } else { x * x.ln() }, 0.0, 1.0, 1e-12);
        assert!((v + 0.25).abs() < 1e-10);
    }

    /// Independent boundary form: `∫_Ω ln‖u‖ = ∮ (u·n)(ln‖u‖ − 1/2)/2` and
    /// `∫_Ω 1/‖u‖ = ∮ (u·n)/(2‖u‖)`, integrated with a fine product
    /// Gauss–Legendre rule.
    #[test]
    fn self_integrals_match_boundary_forms() {
        let (x, w) = gauss_legendre01(40);
        let panels = 8;
        let mut line = 0.0;
        for p in 0..panels {
            for (xi, wi) in x.iter().zip(&w) {
                let s = -0.5 + (p as f64 + xi) / panels as f64;
                let rho = (0.25 + s * s).sqrt();
                line += wi / panels as f64 * 0.5 * (rho.ln() - 0.5) * 0.5;
            }
        }
        let oracle2 = -4.0 * line / (2.0 * PI);
        assert!((log_self_integral_2d(1e-12) - oracle2).abs() < 1e-10);

        let mut face = 0.0;
        for p in 0..panels {
            for q in 0..panels {
                for (xi, wi) in x.iter().zip(&w) {
                    for (xj, wj) in x.iter().zip(&w) {
                        let s = -0.5 + (p as f64 + xi) / panels as f64;
                        let t = -0.5 + (q as f64 + xj) / panels as f64;
                        let weight = wi * wj / (panels * panels) as f64;
                        face += weight * 0.25 / (0.25 + s * s + t * t).sqrt();
                    }
                }
            }
        }
        let oracle3 = 6.0 * face / (4.0 * PI);
        assert!((newton_self_integral_3d(1e-10) - oracle3).abs() < 1e-8);
    }
}
