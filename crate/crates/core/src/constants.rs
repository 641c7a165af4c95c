//! Leading constants and exponents of the Weyl asymptotics.

use crate::cutoff::SmoothCutoff;
use crate::error::{Error, Result};
use crate::quad::{integrate_breaks, QuadOpts};
use crate::symbol::{Field, OrderPair, PrincipalTriple};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstantRecord {
    pub name: String,
    pub value: f64,
    pub error: f64,
    pub path: String,
    pub model: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeylPrediction {
    pub leading_coeff: f64,
    pub leading_exp: f64,
    pub remainder_exp: f64,
    pub eps: f64,
    pub n_star: f64,
    pub provenance: String,
}

/// Integral over S^{n-1} (n = 1: the two points ±1; n = 2: trapezoid on the
/// circle, doubled until the change is below `tol`).
pub fn sphere_integral(f: &dyn Fn(&[f64]) -> f64, n: usize, tol: f64) -> Result<f64> {
    match n {
        1 => Ok(f(&[1.0]) + f(&[-1.0])),
        2 => {
            let trap = |k: usize| -> f64 {
                let h = 2.0 * PI / k as f64;
                (0..k).map(|j| {
                    let a = h * j as f64;
                    f(&[a.cos(), a.sin()])
                })
                .sum::<f64>()
                    * h
            };
            let mut k = 16;
            let mut prev = trap(k);
            while k < 1 << 16 {
                k *= 2;
                let cur = trap(k);
                if (cur - prev).abs() <= tol * cur.abs().max(1.0) {
                    return Ok(cur);
                }
                prev = cur;
            }
            Err(Error::QuadratureNotConverged { estimate: prev, error: f64::NAN })
        }
        _ => Err(Error::ConfigInvalid(format!("sphere quadrature only for n <= 2, got {n}"))),
    }
}

/// ∫_{ℝⁿ} g(x) dx for g with power-law decay: adaptive Gauss-Kronrod on
/// geometric radial panels up to R plus the tail R F(R)/(p - n), R doubled
/// until the tail uncertainty is below tol/10.
fn radial_with_tail(g: &dyn Fn(&[f64]) -> f64, n: usize, tol: f64) -> Result<Estimate> {
    let shell = |r: f64| -> Result<f64> {
        let v = sphere_integral(&|th: &[f64]| {
            let x: Vec<f64> = th.iter().map(|c| c * r).collect();
            g(&x)
        }, n, tol * 1e-3)?;
        Ok(v * r.powi(n as i32 - 1))
    };
    let decay = |r: f64| -> Result<f64> {
        // p with g ~ r^{-p}, from the radial density F = r^{n-1} g
        let (a, b) = (shell(r)?, shell(r / 2.0)?);
        Ok(n as f64 - 1.0 - (a / b).log2())
    };
    let mut breaks = vec![0.0, 0.5, 1.0];
    let mut r = 1.0;
    while r < 16.0 {
        r *= 2.0;
        breaks.push(r);
    }
    let opts = QuadOpts::new(tol * 0.1, 1e-14).panels(4000);
    let mut acc = 0.0;
    let mut acc_err = 0.0;
    for w in breaks.windows(2) {
        let q = integrate_breaks(|s| shell(s).unwrap_or(f64::NAN), w, opts);
        acc += q.value;
        acc_err += q.error;
    }
    loop {
        let p1 = decay(r)?;
        let p2 = decay(r / 2.0)?;
        if p1 <= n as f64 + 0.1 {
            return Err(Error::DivergentTail { alpha: p1 });
        }
        let fr = shell(r)?;
        let tail = r * fr / (p1 - n as f64);
        let tail_err = (r * fr / (p2 - n as f64) - tail).abs();
        if !acc.is_finite() {
            return Err(Error::QuadratureNotConverged { estimate: acc, error: acc_err });
        }
        if tail_err < 0.1 * tol && acc_err < 0.5 * tol {
            return Ok(Estimate { value: acc + tail, error: acc_err + tail_err });
        }
        if r > 1e7 {
            return Err(Error::QuadratureNotConverged { estimate: acc + tail, error: acc_err + tail_err });
        }
        let q = integrate_breaks(|s| shell(s).unwrap_or(f64::NAN), &[r, 2.0 * r], opts);
        acc += q.value;
        acc_err += q.error;
        r *= 2.0;
    }
}

/// d₀ = (2π)^{-(n-1)} ∫_{ℝⁿ} ∫_{S^{n-1}} q_ψ(x, ς)^{-n/m'} dς dx.
pub fn d0_constant(q_psi: &Field, n: usize, m_prime: f64, tol: f64) -> Result<Estimate> {
    let p = n as f64 / m_prime;
    let g = |x: &[f64]| -> f64 {
        sphere_integral(&|s: &[f64]| q_psi(x, s).powf(-p), n, 1e-13).unwrap_or(f64::NAN)
    };
    let r = radial_with_tail(&g, n, tol)?;
    let pre = (2.0 * PI).powi(-(n as i32 - 1));
    Ok(Estimate { value: pre * r.value, error: pre * r.error })
}

/// c₀ = (2π)^{-(n-1)} ∫_{ℝⁿ} ∫_{S^{n-1}} H₂(|ξ|) q_e(ς, ξ)^{-n} dς dξ.
pub fn c0_constant(q_e: &Field, h2: &SmoothCutoff, n: usize, tol: f64) -> Result<Estimate> {
    let k2 = h2.cfg.k2;
    let dirs = |r: f64| -> f64 {
        let w = h2.value(r);
        if w == 0.0 {
            return 0.0;
        }
        let inner = sphere_integral(&|th: &[f64]| {
            let xi: Vec<f64> = th.iter().map(|c| c * r).collect();
            sphere_integral(&|s: &[f64]| q_e(s, &xi).powi(-(n as i32)), n, 1e-13).unwrap_or(f64::NAN)
        }, n, 1e-13)
        .unwrap_or(f64::NAN);
        w * inner * r.powi(n as i32 - 1)
    };
    let q = integrate_breaks(dirs, &[0.0, k2, 1.5 * k2, 2.0 * k2], QuadOpts::new(tol * 0.1, 1e-14).panels(4000));
    if !q.converged {
        return Err(Error::QuadratureNotConverged { estimate: q.value, error: q.error });
    }
    let pre = (2.0 * PI).powi(-(n as i32 - 1));
    Ok(Estimate { value: pre * q.value, error: pre * q.error })
}

/// ∫_{ℝⁿ} g via x = tan u per radial direction (u in [0, π/2)), with the
/// angular part by the sphere rule.
fn tangent_route(g: &dyn Fn(&[f64]) -> f64, n: usize, tol: f64) -> Result<Estimate> {
    let radial = |u: f64| -> f64 {
        let c = u.cos();
        if c <= 0.0 {
            return 0.0;
        }
        let r = u.tan();
        let jac = 1.0 / (c * c);
        let s = sphere_integral(&|th: &[f64]| {
            let x: Vec<f64> = th.iter().map(|v| v * r).collect();
            g(&x)
        }, n, 1e-13)
        .unwrap_or(f64::NAN);
        s * r.powi(n as i32 - 1) * jac
    };
    let h = PI / 2.0;
    let breaks: Vec<f64> = (0..=16).map(|k| h * k as f64 / 16.0).collect();
    let q = integrate_breaks(radial, &breaks, QuadOpts::new(tol * 0.1, 1e-14).panels(8000));
    if !q.converged {
        return Err(Error::QuadratureNotConverged { estimate: q.value, error: q.error });
    }
    Ok(Estimate { value: q.value, error: q.error })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeadingConstant {
    pub value: f64,
    pub direct: Estimate,
    pub reduced: Estimate,
    /// "C1" (m < mu) or "C2" (m > mu)
    pub which: String,
}

/// C₁ (m < μ) or C₂ (m > μ) from the principal triple of P, computed directly
/// and again through d₀ of Q = P^{1/l}; the routes must agree to 1e-6.
pub fn leading_constant(t: &PrincipalTriple, order: OrderPair, tol: f64) -> Result<LeadingConstant> {
    let (m, mu, n) = (order.m, order.mu, order.n);
    if m == mu {
        return Err(Error::EqualOrders(m));
    }
    let nf = n as f64;
    let l = m.max(mu);
    let pre = (2.0 * PI).powf(-nf);
    let (which, direct) = if m < mu {
        let psi = t.psi.clone();
        let g = move |x: &[f64]| -> f64 {
            sphere_integral(&|w: &[f64]| psi(x, w).powf(-nf / m), n, 1e-13).unwrap_or(f64::NAN)
        };
        ("C1", tangent_route(&g, n, tol)?)
    } else {
        let e = t.e.clone();
        let g = move |xi: &[f64]| -> f64 {
            sphere_integral(&|th: &[f64]| e(th, xi).powf(-nf / mu), n, 1e-13).unwrap_or(f64::NAN)
        };
        ("C2", tangent_route(&g, n, tol)?)
    };
    let direct = Estimate { value: pre * direct.value, error: pre * direct.error };
    // reduced route: Q = P^{1/l}, N_P(λ) = N_Q(λ^{1/l}) = d₀/(2π) λ^{n/m'} with
    // roles of x and ξ exchanged when m > μ
    let q = crate::symbol::power_triple(t, 1.0 / l)?;
    let d0 = if m < mu {
        d0_constant(&q.psi, n, m / l, tol)?
    } else {
        let qe = q.e.clone();
        let swapped: Field = std::sync::Arc::new(move |xi: &[f64], th: &[f64]| qe(th, xi));
        d0_constant(&swapped, n, mu / l, tol)?
    };
    let reduced = Estimate { value: d0.value / (2.0 * PI), error: d0.error / (2.0 * PI) };
    let rel = (direct.value - reduced.value).abs() / direct.value.abs();
    if rel > 1e-6 || !rel.is_finite() {
        return Err(Error::PathsDisagree { direct: direct.value, reduced: reduced.value });
    }
    Ok(LeadingConstant { value: direct.value, direct, reduced, which: which.into() })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RemainderExponents {
    pub eps: f64,
    pub remainder_exp: f64,
    pub n_star: f64,
    /// max/min >= 2: the remainder is also O(λ^{n/max})
    pub ratio_bound: bool,
    pub ratio_bound_exp: f64,
}

pub fn remainder_exponents(order: OrderPair) -> Result<RemainderExponents> {
    let (m, mu, n) = (order.m, order.mu, order.n as f64);
    if m == mu {
        return Err(Error::EqualOrders(m));
    }
    let (lo, hi) = (m.min(mu), m.max(mu));
    let eps = (1.0 / hi).min(n * (1.0 / lo - 1.0 / hi));
    let mp = lo / hi;
    Ok(RemainderExponents {
        eps,
        remainder_exp: n / lo - eps,
        n_star: n.min(n / mp - 1.0),
        ratio_bound: hi / lo >= 2.0,
        ratio_bound_exp: n / hi,
    })
}

pub fn weyl_prediction(t: &PrincipalTriple, order: OrderPair, tol: f64) -> Result<WeylPrediction> {
    let c = leading_constant(t, order, tol)?;
    let r = remainder_exponents(order)?;
    Ok(WeylPrediction {
        leading_coeff: c.value,
        leading_exp: order.n as f64 / order.m.min(order.mu),
        remainder_exp: r.remainder_exp,
        eps: r.eps,
        n_star: r.n_star,
        provenance: format!("{} direct (tangent map); agrees with d0 of P^(1/l) route", c.which),
    })
}
