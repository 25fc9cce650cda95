//! WebAssembly bindings for a small interactive view of the factorization.
//!
//! Every entry point takes the grid size `n` of the unit-square Laplace
//! problem and returns a JSON string, so the page needs no glue beyond
//! `JSON.parse`. The `*_json` functions are the native equivalents used by
//! the tests.

use rskel::bench::{build_instance, RunConfig};
use rskel::factor::{factorize, Factorization, LevelStats, Method};
use rskel::verify::{dense_assemble, inverse_error};
use rskel::{Error, Result};
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Grids beyond this take too long to factor on the page's main thread.
pub const MAX_GRID: usize = 48;

struct Built {
    factorization: Factorization,
    points: Vec<f64>,
    src: rskel::source::MatrixSource,
}

fn build(n: usize, method: &str, eps: f64, n_occ: usize) -> Result<Built> {
    if n > MAX_GRID {
        return Err(Error::InvalidInput(format!("grid size {n} exceeds the demo limit of {MAX_GRID}")));
    }
    let method: Method = method.parse()?;
    let mut cfg = RunConfig::new(rskel::bench::Problem::Square2d, n, eps, method);
    cfg.n_occ = n_occ;
    let mut inst = build_instance(&cfg)?;
    let factorization = factorize(&mut inst.src, &inst.tree, &inst.options)?;
    Ok(Built {
        factorization,
        points: inst.src.points().coords().to_vec(),
        src: inst.src,
    })
}

#[derive(Serialize)]
struct Profile<'a> {
    n: usize,
    m_f: usize,
    top_block: usize,
    levels: &'a [LevelStats],
}

/// Per-level step counts, skeleton sizes and surviving DOFs.
pub fn profile_json(n: usize, method: &str, eps: f64, n_occ: usize) -> Result<String> {
    let b = build(n, method, eps, n_occ)?;
    let f = &b.factorization;
    let top = f.diagonal().blocks.last().map_or(0, |blk| blk.dofs.len());
    let out = Profile {
        n: f.len(),
        m_f: f.nbytes(),
        top_block: top,
        levels: f.levels(),
    };
    Ok(serde_json::to_string(&out).expect("plain data serializes"))
}

/// DOF states after finishing `level`.
pub const RETIRED: u8 = 0;
pub const ELIMINATED_HERE: u8 = 1;
pub const SKELETON_HERE: u8 = 2;
pub const UNTOUCHED: u8 = 3;

#[derive(Serialize)]
struct SkeletonMap {
    points: Vec<f64>,
    state: Vec<u8>,
}

/// Point coordinates plus a state code per DOF describing what happened to
/// it up to and including `level`.
pub fn skeleton_map_json(n: usize, method: &str, eps: f64, n_occ: usize, level: usize) -> Result<String> {
    let b = build(n, method, eps, n_occ)?;
    let mut state = vec![UNTOUCHED; b.factorization.len()];
    for f in b.factorization.factors() {
        if f.level > level {
            continue;
        }
        let here = f.level == level;
        for &d in f.skeleton() {
            if here && state[d] == UNTOUCHED {
                state[d] = SKELETON_HERE;
            }
        }
        for &d in &f.redundant {
            state[d] = if here { ELIMINATED_HERE } else { RETIRED };
        }
    }
    let out = SkeletonMap { points: b.points, state };
    Ok(serde_json::to_string(&out).expect("plain data serializes"))
}

#[derive(Serialize)]
struct Accuracy {
    n: usize,
    e_s: f64,
    m_f: usize,
    m_dense: usize,
}

/// Estimated `‖I − K F⁻¹‖₂` against the dense matrix.
pub fn accuracy_json(n: usize, method: &str, eps: f64, n_occ: usize) -> Result<String> {
    let b = build(n, method, eps, n_occ)?;
    let ids: Vec<usize> = (0..b.src.len()).collect();
    let k = dense_assemble(&b.src, &ids)?;
    let e_s = inverse_error(&k, &b.factorization, 7)?;
    let out = Accuracy {
        n: ids.len(),
        e_s,
        m_f: b.factorization.nbytes(),
        m_dense: ids.len() * ids.len() * std::mem::size_of::<f64>(),
    };
    Ok(serde_json::to_string(&out).expect("plain data serializes"))
}

fn js(r: Result<String>) -> std::result::Result<String, JsError> {
    r.map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
pub fn profile(n: usize, method: &str, eps: f64, n_occ: usize) -> std::result::Result<String, JsError> {
    js(profile_json(n, method, eps, n_occ))
}

#[wasm_bindgen]
pub fn skeleton_map(n: usize, method: &str, eps: f64, n_occ: usize, level: usize) -> std::result::Result<String, JsError> {
    js(skeleton_map_json(n, method, eps, n_occ, level))
}

#[wasm_bindgen]
pub fn accuracy(n: usize, method: &str, eps: f64, n_occ: usize) -> std::result::Result<String, JsError> {
    js(accuracy_json(n, method, eps, n_occ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::Value;

    #[test]
    fn profile_reports_shrinking_active_set() {
        let v: Value = serde_json::from_str(&profile_json(24, "rs-s", 1e-6, 16).unwrap()).unwrap();
        assert_eq!(v["n"], 576);
        let active: Vec<u64> = v["levels"].as_array().unwrap().iter().map(|l| l["active_after"].as_u64().unwrap()).collect();
        assert!(!active.is_empty());
        assert!(active.windows(2).all(|w| w[1] <= w[0]));
        assert!(*active.last().unwrap() < 576);
    }

    #[test]
    fn skeleton_map_codes_are_consistent() {
        let v: Value = serde_json::from_str(&skeleton_map_json(24, "rs-ws", 1e-6, 16, 2).unwrap()).unwrap();
        let state: Vec<u64> = v["state"].as_array().unwrap().iter().map(|s| s.as_u64().unwrap()).collect();
        assert_eq!(state.len(), 576);
        assert_eq!(v["points"].as_array().unwrap().len(), 2 * 576);
        assert!(state.contains(&(ELIMINATED_HERE as u64)));
        assert!(state.contains(&(SKELETON_HERE as u64)));
    }

    #[test]
    fn accuracy_tracks_tolerance() {
        let v: Value = serde_json::from_str(&accuracy_json(16, "rs-s", 1e-8, 16).unwrap()).unwrap();
        assert!(v["e_s"].as_f64().unwrap() < 1e-5);
    }

    #[test]
    fn oversized_grid_and_bad_method_rejected() {
        assert!(profile_json(MAX_GRID + 1, "rs-s", 1e-6, 16).is_err());
        assert!(profile_json(8, "lu", 1e-6, 16).is_err());
    }
}
