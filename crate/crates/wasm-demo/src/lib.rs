//! Browser entry points. Each returns a JSON string so the page stays
//! framework-free.

use sgweyl::cutoff::CutoffConfig;
use sgweyl::spectral::{compute_spectrum, ModelOperator};
use sgweyl::stationary::{gaussian_expansion, gaussian_oracle, ORACLE_CENTER};
use wasm_bindgen::prelude::*;

fn err(e: impl std::fmt::Display) -> JsValue {
    JsValue::from_str(&e.to_string())
}

/// Cutoff constants derived from the ellipticity constant `a`, the
/// phase-gradient constant `c` and the eikonal time `t`, with the
/// inequality check.
#[wasm_bindgen]
pub fn cutoff_constants(a: f64, c: f64, t: f64) -> Result<String, JsValue> {
    let cfg = CutoffConfig::derive(a, c, 0.5, t);
    let valid = cfg.validate().map(|_| String::new()).unwrap_or_else(|e| e.to_string());
    Ok(serde_json::json!({ "config": cfg, "violations": valid }).to_string())
}

/// Gaussian oracle ∫∫ e^{iλts} e^{-|(t,s)-c|²/2} against its stationary
/// phase expansion truncated after `j_max` corrections.
#[wasm_bindgen]
pub fn oracle_expansion(lambda: f64, j_max: usize) -> Result<String, JsValue> {
    if !(lambda > 0.0) {
        return Err(err("lambda must be positive"));
    }
    let (a, b) = ORACLE_CENTER;
    let exact = gaussian_oracle(lambda, a, b);
    let e = gaussian_expansion(a, b, j_max).map_err(err)?.eval(lambda);
    Ok(serde_json::json!({
        "lambda": lambda,
        "j_max": j_max,
        "exact": [exact.re, exact.im],
        "expansion": [e.re, e.im],
        "rel_err": (e - exact).norm() / exact.norm(),
    })
    .to_string())
}

/// Lowest `k` eigenvalues of the harmonic oscillator -d² + x² in a
/// Hermite basis of size `n` (exact values 2j + 1).
#[wasm_bindgen]
pub fn oracle_eigenvalues(n: usize, k: usize) -> Result<String, JsValue> {
    if n == 0 || n > 400 {
        return Err(err("basis size must be in 1..=400"));
    }
    let ds = compute_spectrum(&ModelOperator::shipped("oracle-h").map_err(err)?, n).map_err(err)?;
    let rows: Vec<[f64; 2]> = ds.etas.iter().take(k).enumerate().map(|(j, e)| [*e, (e - (2 * j + 1) as f64).abs()]).collect();
    Ok(serde_json::json!({ "basis_dim": n, "eigenvalues": rows }).to_string())
}
