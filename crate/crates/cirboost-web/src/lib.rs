//! WebAssembly bindings for the demo page in `www/`.
//!
//! Build with `wasm-pack build --target web --out-dir www/pkg` and serve
//! `www/` with any static file server.

use cirboost::estimators::{map_chunks, CompensatedSum};
use cirboost::heston::{reference_put, HestonParams};
use cirboost::oracle::boosted_laplace;
use cirboost::rng::{StreamFamily, MAIN_LANE};
use cirboost::{laplace_transform, CirParams};
use wasm_bindgen::prelude::*;

fn js_err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

/// Relative errors of the order 1, 2 and 3 approximations of
/// `E[exp(-lambda X_T)]` for `n = 2..=n_max`, computed exactly.
///
/// Returns rows `[n, err1, err2, err3]` flattened.
#[wasm_bindgen]
pub fn order_errors(
    a: f64,
    k: f64,
    sigma: f64,
    x0: f64,
    lambda: f64,
    horizon: f64,
    n_max: usize,
) -> Result<Vec<f64>, JsError> {
    let p = CirParams::new(a, k, sigma).map_err(js_err)?;
    if !(2..=12).contains(&n_max) {
        return Err(JsError::new("n_max must lie in 2..=12"));
    }
    let exact = laplace_transform(&p, x0, horizon, lambda);
    let mut out = Vec::with_capacity(4 * (n_max - 1));
    for n in 2..=n_max {
        out.push(n as f64);
        for order in 1..=3 {
            let v = boosted_laplace(&p, horizon, n, order, x0, lambda).map_err(js_err)?;
            out.push((v - exact) / exact);
        }
    }
    Ok(out)
}

/// Monte Carlo of `E[exp(-lambda X_T)]` with the exact sampler next to the
/// closed form. Returns `[exact, estimate, standard error]`.
#[wasm_bindgen]
pub fn laplace_check(
    a: f64,
    k: f64,
    sigma: f64,
    x0: f64,
    lambda: f64,
    horizon: f64,
    samples: u32,
    seed: u32,
) -> Result<Vec<f64>, JsError> {
    let p = CirParams::new(a, k, sigma).map_err(js_err)?;
    if samples < 2 || !(horizon > 0.0) || x0 < 0.0 {
        return Err(JsError::new("need at least 2 samples, T > 0 and x0 >= 0"));
    }
    let tr = cirboost::cir::ExactTransition::new(&p, horizon);
    let fam = StreamFamily::new(seed as u64, 0);
    let parts = map_chunks(samples as u64, 1, |range| {
        let (mut s, mut s2) = (CompensatedSum::default(), CompensatedSum::default());
        for i in range {
            let v = (-lambda * tr.sample(x0, &mut fam.stream(i, MAIN_LANE))).exp();
            s.add(v);
            s2.add(v * v);
        }
        (s.value(), s2.value())
    });
    let m = samples as f64;
    let (s, s2) = parts.iter().fold((0.0, 0.0), |acc, v| (acc.0 + v.0, acc.1 + v.1));
    let mean = s / m;
    let var = ((s2 - s * s / m) / (m - 1.0)).max(0.0);
    Ok(vec![laplace_transform(&p, x0, horizon, lambda), mean, (var / m).sqrt()])
}

/// Heston put price from the characteristic function.
#[wasm_bindgen]
pub fn heston_put(
    s0: f64,
    strike: f64,
    r: f64,
    rho: f64,
    x0: f64,
    a: f64,
    k: f64,
    sigma: f64,
    horizon: f64,
) -> Result<f64, JsError> {
    let vol = CirParams::new(a, k, sigma).map_err(js_err)?;
    let p = HestonParams::new(s0, r, rho, vol, x0).map_err(js_err)?;
    reference_put(&p, strike, horizon).map_err(js_err)
}
