//! The trace oscillatory integral
//! I(λ) = (2π)⁻¹ ∫∫∫ e^{i(φ(t;x,ξ) − xξ − tλ)} ψ(t) a(t;x,ξ) dt dξ dx,
//! by direct quadrature (n = 1) and through its H₁/H₂ split, plus the
//! stationary-point, fixed-point, Hessian and expansion data of the two
//! pieces.
//!
//! Direct quadrature substitutes x = X(t; y, ξ) (the characteristic through
//! the seed (y, ξ)), so dx = X_y dy and φ − xξ becomes the action-like
//! quantity R = S − Xξ carried by the ODE itself. Each seed gives a smooth
//! track in t that is stored as a Chebyshev series.

use crate::cutoff::{jb, CutoffConfig, Cutoffs, make_cutoffs};
use crate::eikonal::HamiltonianFlow;
use crate::error::{Error, Result};
use crate::ode::{dopri5, OdeOpts};
use crate::quad::{integrate, integrate_breaks, integrate_par, QValue, QuadOpts};
use crate::real::{factorial, Jet, JetSpace, Real};
use crate::symbol::{Expr, SGSymbol};
use crate::tauberian::{make_window, TauberWindow, TracePrediction};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::ops::{Add, Mul, Sub};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

// ---------------------------------------------------------------- Chebyshev

fn clenshaw(c: &[f64], u: f64) -> f64 {
    let (mut b1, mut b2) = (0.0, 0.0);
    for &cj in c[1..].iter().rev() {
        let b0 = 2.0 * u * b1 - b2 + cj;
        b2 = b1;
        b1 = b0;
    }
    u * b1 - b2 + c[0]
}

/// Coefficients from values at u_k = cos(kπ/N), k = 0..=N.
fn lobatto_coeffs(f: &[f64]) -> Vec<f64> {
    let n = f.len() - 1;
    let nf = n as f64;
    (0..=n)
        .map(|j| {
            let mut s = 0.0;
            for (k, &fk) in f.iter().enumerate() {
                let w = if k == 0 || k == n { 0.5 } else { 1.0 };
                s += w * fk * (PI * (j * k) as f64 / nf).cos();
            }
            let c = 2.0 * s / nf;
            if j == 0 || j == n {
                0.5 * c
            } else {
                c
            }
        })
        .collect()
}

/// Lobatto nodes T cos(kπ/N) on [-T, T], descending, with the middle node
/// exactly 0.
fn lobatto_nodes(t: f64, n: usize) -> Vec<f64> {
    (0..=n).map(|k| if 2 * k == n { 0.0 } else { t * (PI * k as f64 / n as f64).cos() }).collect()
}

const PSI_PIECES: usize = 64;
const PSI_DEG: usize = 20;

/// ψ on [-T, T] as a piecewise Chebyshev series (ψ is even).
#[derive(Clone, Debug)]
pub struct PsiTable {
    t: f64,
    h: f64,
    c: Vec<[f64; PSI_DEG]>,
}

impl PsiTable {
    pub fn new(w: &TauberWindow) -> PsiTable {
        let h = w.t / PSI_PIECES as f64;
        let c = (0..PSI_PIECES)
            .into_par_iter()
            .map(|p| {
                let mid = h * (p as f64 + 0.5);
                let f: Vec<f64> = (0..PSI_DEG)
                    .map(|k| w.psi(mid + 0.5 * h * (PI * (k as f64 + 0.5) / PSI_DEG as f64).cos()))
                    .collect();
                let mut a = [0.0; PSI_DEG];
                for (j, aj) in a.iter_mut().enumerate() {
                    let s: f64 = (0..PSI_DEG)
                        .map(|k| f[k] * (PI * j as f64 * (k as f64 + 0.5) / PSI_DEG as f64).cos())
                        .sum();
                    *aj = if j == 0 { 1.0 } else { 2.0 } * s / PSI_DEG as f64;
                }
                a
            })
            .collect();
        PsiTable { t: w.t, h, c }
    }

    pub fn eval(&self, t: f64) -> f64 {
        let a = t.abs();
        if a >= self.t {
            return 0.0;
        }
        let p = ((a / self.h) as usize).min(PSI_PIECES - 1);
        clenshaw(&self.c[p], 2.0 * (a / self.h - p as f64) - 1.0)
    }
}

/// Even Taylor data of ψ at 0: ψ^{(2k)}(0) = (-1)^k ∫ (χ^{(k)})², k ≤ kmax.
pub fn psi_even_derivs(w: &TauberWindow, kmax: usize) -> Vec<f64> {
    let sp = JetSpace::new(1, kmax);
    let half = 0.5 * w.t;
    let chi_d = |s: f64, k: usize| -> f64 {
        if (s / half).abs() >= 1.0 {
            return 0.0;
        }
        let u = Jet::var(&sp, 0, s) * (1.0 / half);
        let f = (-(-(u.clone() * u) + 1.0).recip()).exp();
        f.partial(&[k as u8])
    };
    // ψ(0) = 1 fixes the normalization of χ
    let norm = integrate(|s| chi_d(s, 0).powi(2), -half, half, QuadOpts::new(1e-15, 1e-14).panels(400)).value;
    (0..=kmax)
        .map(|k| {
            let v = integrate(|s| chi_d(s, k).powi(2), -half, half, QuadOpts::new(1e-15, 1e-13).panels(400)).value;
            if k % 2 == 0 {
                v / norm
            } else {
                -v / norm
            }
        })
        .collect()
}

// ---------------------------------------------------------------- integrand

/// Amplitude a(t; x, ξ) with a(0; ·, ·) = 1.
#[derive(Clone)]
pub enum Amplitude {
    One,
    Zero,
    Custom(Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>),
}

impl std::fmt::Debug for Amplitude {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Amplitude::One => write!(f, "One"),
            Amplitude::Zero => write!(f, "Zero"),
            Amplitude::Custom(_) => write!(f, "Custom"),
        }
    }
}

impl Amplitude {
    fn eval(&self, t: f64, x: f64, xi: f64) -> f64 {
        match self {
            Amplitude::One => 1.0,
            Amplitude::Zero => 0.0,
            Amplitude::Custom(a) => a(t, x, xi),
        }
    }
}

/// Which cutoff product multiplies the integrand.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Region {
    /// no localization (used for λ < 0)
    Full,
    /// H₁(⟨x⟩⟨ξ⟩^m/λ)
    H1,
    /// 1 − H₁
    OutsideH1,
    /// H₁·H₂(|ξ|)
    I1,
    /// H₁·(1 − H₂)
    I2,
    /// H₁·(1 − H₂)·(1 − H₃(ζ/ζ₀ − 1)), ζ = |ξ|^m/λ, ζ₀ = 1/q_ψ(x, ς)
    V1,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectOpts {
    pub rel: f64,
    pub abs: f64,
    /// relative tolerance of the ξ-level integrals
    pub inner_rel: f64,
    pub t_rel: f64,
    pub t_abs: f64,
    /// seed tracks allowed per call
    pub budget: usize,
    /// domain slack over the support bound
    pub slack: f64,
}

impl Default for DirectOpts {
    fn default() -> Self {
        DirectOpts { rel: 1e-6, abs: 1e-10, inner_rel: 1e-6, t_rel: 1e-7, t_abs: 1e-11, budget: 2_000_000, slack: 1.25 }
    }
}

impl DirectOpts {
    /// Tolerances for contributions that are tiny in absolute terms.
    pub fn small() -> Self {
        DirectOpts { rel: 1e-4, abs: 1e-14, inner_rel: 1e-5, t_rel: 1e-8, t_abs: 1e-16, ..Default::default() }
    }
}

/// The integrand pieces: time window, amplitude, flow of q, cutoffs.
#[derive(Clone, Debug)]
pub struct OscillatoryIntegrand {
    pub window: TauberWindow,
    psi: PsiTable,
    pub amplitude: Amplitude,
    pub flow: HamiltonianFlow,
    pub cutoffs: Cutoffs,
    pub config: CutoffConfig,
    pub prediction: TracePrediction,
    q_psi: Expr,
    q_e: Expr,
    symmetric: bool,
    /// tolerances of the seed tracks (phase error ~ rtol·|R| stays far
    /// below the quadrature targets)
    pub track_ode: OdeOpts,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectValue {
    pub re: f64,
    pub im: f64,
    pub error: f64,
    pub seeds: usize,
    /// seeds dropped as nonstationary beyond the window cutoff
    pub skipped: usize,
}

impl DirectValue {
    pub fn value(&self) -> Complex64 {
        Complex64::new(self.re, self.im)
    }
    pub fn abs(&self) -> f64 {
        self.re.hypot(self.im)
    }
}

impl OscillatoryIntegrand {
    pub fn new(flow: HamiltonianFlow, config: CutoffConfig, prediction: TracePrediction) -> Result<OscillatoryIntegrand> {
        let cutoffs = make_cutoffs(&config)?;
        let window = make_window(config.t)?;
        let psi = PsiTable::new(&window);
        let q_psi = flow
            .q
            .psi
            .clone()
            .ok_or_else(|| Error::ConfigInvalid(format!("{} has no closed-form q_psi", flow.q.id)))?;
        let q_e =
            flow.q.e.clone().ok_or_else(|| Error::ConfigInvalid(format!("{} has no closed-form q_e", flow.q.id)))?;
        let mut symmetric = true;
        for k in 0..16 {
            let x = -7.0 + 1.37 * k as f64;
            let xi = 5.0 - 0.91 * k as f64;
            let a = flow.value(x, xi);
            let b = flow.value(-x, -xi);
            if (a - b).abs() > 1e-14 * a.abs() {
                symmetric = false;
            }
        }
        Ok(OscillatoryIntegrand {
            window,
            psi,
            amplitude: Amplitude::One,
            flow,
            cutoffs,
            config,
            prediction,
            q_psi,
            q_e,
            symmetric,
            track_ode: OdeOpts { rtol: 1e-11, atol: 1e-11, ..OdeOpts::default() },
        })
    }

    /// Replaces the amplitude; a(0; x, ξ) = 1 is checked on samples.
    pub fn with_amplitude(mut self, a: Amplitude) -> Result<Self> {
        if let Amplitude::Custom(f) = &a {
            for k in 0..9 {
                let (x, xi) = (-20.0 + 5.0 * k as f64, 3.0 - 0.7 * k as f64);
                let v = f(0.0, x, xi);
                if (v - 1.0).abs() > 1e-12 {
                    return Err(Error::ConfigInvalid(format!("amplitude at t = 0 is {v}, expected 1")));
                }
            }
        }
        self.symmetric &= !matches!(a, Amplitude::Custom(_));
        self.amplitude = a;
        Ok(self)
    }

    pub fn psi(&self, t: f64) -> f64 {
        self.psi.eval(t)
    }

    pub fn q_psi(&self, x: f64, sigma: f64) -> f64 {
        self.q_psi.eval(&[x], &[sigma])
    }

    pub fn q_e(&self, sigma: f64, xi: f64) -> f64 {
        self.q_e.eval(&[sigma], &[xi])
    }

    pub fn weight(&self, r: Region, x: f64, xi: f64, lam: f64) -> f64 {
        let c = &self.cutoffs;
        let m = self.config.m;
        let h1 = || c.h1.value(jb(x) * jb(xi).powf(m) / lam);
        match r {
            Region::Full => 1.0,
            Region::H1 => h1(),
            Region::OutsideH1 => 1.0 - h1(),
            Region::I1 => h1() * c.h2.value(xi.abs()),
            Region::I2 => h1() * (1.0 - c.h2.value(xi.abs())),
            Region::V1 => {
                let w = h1() * (1.0 - c.h2.value(xi.abs()));
                if w == 0.0 {
                    return 0.0;
                }
                let z = xi.abs().powf(m) / lam;
                let z0 = 1.0 / self.q_psi(x, xi.signum());
                w * (1.0 - c.h3.value(z / z0 - 1.0))
            }
        }
    }

    /// False only when the weight vanishes for every x with ⟨x⟩ in
    /// [jlo, jhi] (qψ in [plo, phi]).
    fn may_support(&self, r: Region, jlo: f64, jhi: f64, plo: f64, phi: f64, xi: f64, lam: f64) -> bool {
        let c = &self.config;
        let g = jb(xi).powf(c.m) / lam;
        let (lo, hi) = (jlo * g / 1.01, jhi * g * 1.01);
        let h1 = lam > 0.0 && hi > 0.5 / c.k1 && lo < 2.0 * c.k1;
        match r {
            Region::Full => true,
            Region::H1 => h1,
            Region::OutsideH1 => !(lam > 0.0 && lo >= 1.0 / c.k1 && hi <= c.k1),
            Region::I1 => h1 && xi.abs() < 2.0 * c.k2,
            Region::I2 => h1 && xi.abs() > c.k2,
            Region::V1 => {
                let z = xi.abs().powf(c.m) / lam;
                let (vlo, vhi) = (z * plo / 1.01 - 1.0, z * phi * 1.01 - 1.0);
                h1 && xi.abs() > c.k2 && !(vlo >= -1.5 * c.eps && vhi <= 1.5 * c.eps)
            }
        }
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }
}

// ---------------------------------------------------------------- seed tracks

const TRACK_N: usize = 32;

/// One seed (y, ξ) followed over [-T, T]: X, R = S − Xξ and X_y as
/// Chebyshev series in t/T, Ṙ at the nodes, and the range of ⟨X⟩.
#[derive(Clone, Debug)]
pub struct Track {
    pub y: f64,
    pub xi: f64,
    cx: Vec<f64>,
    cr: Vec<f64>,
    cy: Vec<f64>,
    pub rdot: Vec<f64>,
    pub jx: (f64, f64),
    pub qpsi: (f64, f64),
    pub xy_max: f64,
    /// size of the last two Chebyshev coefficients of R and X_y
    pub tail_r: f64,
    pub tail_y: f64,
}

impl Track {
    pub fn eval(&self, t: f64, half: f64) -> (f64, f64, f64) {
        let u = t / half;
        (clenshaw(&self.cx, u), clenshaw(&self.cr, u), clenshaw(&self.cy, u))
    }
}

impl OscillatoryIntegrand {
    // state [x, δ = p − ξ, R, x_y, p_y]
    fn seed_rhs(&self, xi: f64, s: &[f64; 5]) -> [f64; 5] {
        let l = self.flow.local(s[0], xi + s[1]);
        let [qx, qp] = l.g;
        let [qxx, qxp, qpp] = l.h;
        [-qp, qx, l.q - qp * s[1], -qxp * s[3] - qpp * s[4], qxx * s[3] + qxp * s[4]]
    }

    /// Seed state at a single time.
    pub fn state_at(&self, y: f64, xi: f64, t: f64) -> Result<[f64; 5]> {
        let s0 = [y, 0.0, 0.0, 1.0, 0.0];
        if t == 0.0 {
            return Ok(s0);
        }
        let (v, _) = dopri5(|_, s| self.seed_rhs(xi, s), 0.0, s0, &[t], self.flow.ode)?;
        Ok(v[0])
    }

    pub fn track(&self, y: f64, xi: f64) -> Result<Track> {
        let half = self.config.t;
        let n = TRACK_N;
        let nodes = lobatto_nodes(half, n);
        let s0 = [y, 0.0, 0.0, 1.0, 0.0];
        let pos: Vec<f64> = nodes[..n / 2].iter().rev().copied().collect();
        let neg: Vec<f64> = nodes[n / 2 + 1..].to_vec();
        let (fwd, _) = dopri5(|_, s| self.seed_rhs(xi, s), 0.0, s0, &pos, self.track_ode)?;
        let (bwd, _) = dopri5(|_, s| self.seed_rhs(xi, s), 0.0, s0, &neg, self.track_ode)?;
        let mut st = Vec::with_capacity(n + 1);
        st.extend(fwd.iter().rev());
        st.push(s0);
        st.extend(bwd.iter());
        let col = |i: usize| -> Vec<f64> { st.iter().map(|s| s[i]).collect() };
        let (xs, rs, ys) = (col(0), col(2), col(3));
        if let Some(k) = ys.iter().position(|&v| !(v > 0.0)) {
            return Err(Error::PhaseCoverageInsufficient(format!(
                "caustic on the seed ({y}, {xi}): x_y = {} at t = {}",
                ys[k], nodes[k]
            )));
        }
        let rdot: Vec<f64> = st
            .iter()
            .map(|s| {
                let l = self.flow.local(s[0], xi + s[1]);
                l.q - l.g[1] * s[1]
            })
            .collect();
        let sg = if xi >= 0.0 { 1.0 } else { -1.0 };
        let jxs: Vec<f64> = xs.iter().map(|&x| jb(x)).collect();
        let qps: Vec<f64> = xs.iter().map(|&x| self.q_psi(x, sg)).collect();
        let mm = |v: &[f64]| v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
        let (cx, cr, cy) = (lobatto_coeffs(&xs), lobatto_coeffs(&rs), lobatto_coeffs(&ys));
        let tail = |c: &[f64]| c[n].abs() + c[n - 1].abs();
        Ok(Track {
            y,
            xi,
            tail_r: tail(&cr),
            tail_y: tail(&cy),
            cx,
            cr,
            cy,
            rdot,
            jx: mm(&jxs),
            qpsi: mm(&qps),
            xy_max: mm(&ys).1,
        })
    }
}

// ---------------------------------------------------------------- quadrature

/// Complex value with the propagated error of the levels below.
#[derive(Clone, Copy, Debug, Default)]
struct Acc {
    v: Complex64,
    e: f64,
}

impl Add for Acc {
    type Output = Acc;
    fn add(self, o: Acc) -> Acc {
        Acc { v: self.v + o.v, e: self.e + o.e }
    }
}
impl Sub for Acc {
    type Output = Acc;
    fn sub(self, o: Acc) -> Acc {
        Acc { v: self.v - o.v, e: self.e + o.e }
    }
}
impl Mul<f64> for Acc {
    type Output = Acc;
    fn mul(self, s: f64) -> Acc {
        Acc { v: self.v * s, e: self.e * s.abs() }
    }
}
impl QValue for Acc {
    fn zero() -> Self {
        Acc::default()
    }
    fn norm(&self) -> f64 {
        self.v.norm()
    }
}

/// A parametrization of the seed plane: outer variable s, inner r, and
/// (s, r) ↦ (y, ξ, Jacobian).
struct Chart<'a> {
    outer: Vec<f64>,
    inner: Box<dyn Fn(f64) -> Vec<f64> + Sync + 'a>,
    point: Box<dyn Fn(f64, f64) -> (f64, f64, f64) + Sync + 'a>,
    mult: f64,
    /// largest ⟨y⟩⟨ξ⟩^m the chart reaches
    qmax: f64,
}

struct Ctx {
    seeds: AtomicUsize,
    skipped: AtomicUsize,
    fail: Mutex<Option<Error>>,
}

impl Ctx {
    fn failed(&self) -> bool {
        self.fail.lock().map(|g| g.is_some()).unwrap_or(true)
    }
    fn set(&self, e: Error) {
        if let Ok(mut g) = self.fail.lock() {
            if g.is_none() {
                *g = Some(e);
            }
        }
    }
}

impl Chart<'_> {
    fn outer_len(&self) -> f64 {
        match (self.outer.first(), self.outer.last()) {
            (Some(a), Some(b)) if b > a => b - a,
            _ => 1.0,
        }
    }
}

fn tanhc(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0
    } else {
        x.tanh() / x
    }
}

fn log_cosh(x: f64) -> f64 {
    let a = x.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

/// R ≥ 0 with log cosh(Rc) + m log cosh(Rs) = L. The left side is convex
/// in R, so Newton from a point right of the root converges monotonically.
fn level_radius(c: f64, s: f64, m: f64, l: f64) -> f64 {
    if l <= 0.0 {
        return 0.0;
    }
    let mut r = (l + (1.0 + m) * std::f64::consts::LN_2) / (c.abs() + m * s.abs());
    for _ in 0..200 {
        let f = log_cosh(r * c) + m * log_cosh(r * s) - l;
        let d = c * (r * c).tanh() + m * s * (r * s).tanh();
        let step = f / d;
        r -= step;
        if !(step.abs() > 1e-15 * r) {
            break;
        }
    }
    r.max(0.0)
}

fn asinh_pos(q: f64) -> f64 {
    (q * q - 1.0).max(0.0).sqrt().asinh()
}

impl OscillatoryIntegrand {
    fn seed_value(&self, y: f64, xi: f64, lam: f64, region: Region, chart: &Chart, opts: &DirectOpts, ctx: &Ctx) -> Acc {
        if ctx.failed() {
            return Acc::default();
        }
        if ctx.seeds.fetch_add(1, Ordering::Relaxed) >= opts.budget {
            ctx.set(Error::QuadratureBudgetExceeded(opts.budget));
            return Acc::default();
        }
        if matches!(self.amplitude, Amplitude::Zero) {
            return Acc::default();
        }
        let tr = match self.track(y, xi) {
            Ok(t) => t,
            Err(e) => {
                ctx.set(match e {
                    Error::PhaseCoverageInsufficient(_) => e,
                    other => Error::PhaseCoverageInsufficient(format!("seed ({y}, {xi}): {other}")),
                });
                return Acc::default();
            }
        };
        if !self.may_support(region, tr.jx.0, tr.jx.1, tr.qpsi.0, tr.qpsi.1, xi, lam) {
            return Acc::default();
        }
        // nonstationary beyond the numerical support of ψ̂
        let lim = 1.1 * self.window.cutoff;
        let om: Vec<f64> = tr.rdot.iter().map(|r| r - lam).collect();
        let same_sign = om.iter().all(|&w| w > 0.0) || om.iter().all(|&w| w < 0.0);
        let om_min = om.iter().fold(f64::INFINITY, |a, w| a.min(w.abs()));
        if same_sign && om_min > lim {
            ctx.skipped.fetch_add(1, Ordering::Relaxed);
            return Acc::default();
        }
        if jb(y) * jb(xi).powf(self.config.m) > chart.qmax / 1.1 {
            ctx.set(Error::PhaseCoverageInsufficient(format!(
                "seed ({y}, {xi}) near the edge of the integration domain still contributes"
            )));
            return Acc::default();
        }
        let half = self.config.t;
        let om_max = om.iter().fold(0.0f64, |a, w| a.max(w.abs()));
        let panels = ((2.0 * half * om_max / (4.0 * PI)).ceil() as usize).clamp(8, 4096);
        let breaks: Vec<f64> = (0..=panels).map(|k| -half + 2.0 * half * k as f64 / panels as f64).collect();
        let f = |t: f64| -> Complex64 {
            let (x, r, xy) = tr.eval(t, half);
            let w = self.weight(region, x, xi, lam) * self.amplitude.eval(t, x, xi);
            if w == 0.0 {
                return Complex64::new(0.0, 0.0);
            }
            Complex64::from_polar(self.psi.eval(t) * w * xy, r - lam * t)
        };
        // below ~50ε ∫|f| the Kronrod estimate is roundoff, not truncation
        let floor = 100.0 * f64::EPSILON * 2.0 * half * tr.xy_max;
        let res = integrate_breaks(f, &breaks, QuadOpts::new(opts.t_abs.max(floor), opts.t_rel).panels(4 * panels + 64));
        // interpolation error of the track: phase error times ∫|ψ X_y|
        let interp = (tr.tail_r * tr.xy_max + tr.tail_y) * 2.0 * half;
        Acc { v: res.value, e: res.error + interp }
    }

    /// ∫ ψ(t) w(X, ξ) a X_y e^{i(R − λt)} dt for one seed (no skipping).
    pub fn seed_integral(&self, y: f64, xi: f64, lam: f64, region: Region) -> Result<Complex64> {
        let chart = self.level_chart(lam.abs().max(1.0), f64::INFINITY);
        let ctx = Ctx { seeds: AtomicUsize::new(0), skipped: AtomicUsize::new(0), fail: Mutex::new(None) };
        let opts = DirectOpts { t_abs: 1e-16, t_rel: 1e-12, ..DirectOpts::default() };
        let v = self.seed_value(y, xi, lam, region, &chart, &opts, &ctx);
        match ctx.fail.lock().ok().and_then(|mut g| g.take()) {
            Some(e) => Err(e),
            None => Ok(v.v),
        }
    }

    fn chart_integral(&self, lam: f64, region: Region, chart: &Chart, opts: &DirectOpts) -> Result<DirectValue> {
        // ξ-integrals far below the expected total only need to be small,
        // not accurate; the scale comes from the prediction so the panel
        // pattern does not depend on evaluation order
        let inner_abs = match region {
            Region::H1 | Region::I1 | Region::I2 => {
                (0.1 * opts.abs).max(opts.inner_rel * 2.0 * PI * self.prediction.value(lam).abs() / chart.outer_len())
            }
            _ => 0.1 * opts.abs,
        };
        if chart.outer.len() < 2 {
            return Ok(DirectValue { re: 0.0, im: 0.0, error: 0.0, seeds: 0, skipped: 0 });
        }
        let ctx = Ctx { seeds: AtomicUsize::new(0), skipped: AtomicUsize::new(0), fail: Mutex::new(None) };
        let inner = |s: f64| -> Acc {
            if ctx.failed() {
                return Acc::default();
            }
            let br = (chart.inner)(s);
            if br.len() < 2 {
                return Acc::default();
            }
            let g = |r: f64| -> Acc {
                let (y, xi, jac) = (chart.point)(s, r);
                self.seed_value(y, xi, lam, region, chart, opts, &ctx) * jac
            };
            let res = integrate_breaks(g, &br, QuadOpts::new(inner_abs, opts.inner_rel).panels(400));
            Acc { v: res.value.v, e: res.value.e + res.error }
        };
        let res = integrate_par(inner, &chart.outer, QuadOpts::new(opts.abs, opts.rel).panels(400));
        if let Some(e) = ctx.fail.lock().ok().and_then(|mut g| g.take()) {
            return Err(e);
        }
        let scale = chart.mult / (2.0 * PI);
        let v = res.value.v * scale;
        let err = (res.error + res.value.e) * scale;
        let seeds = ctx.seeds.load(Ordering::Relaxed);
        let target = (opts.abs * scale).max(10.0 * opts.rel * v.norm());
        if !res.converged && err > target {
            return Err(Error::QuadratureBudgetExceeded(seeds));
        }
        Ok(DirectValue { re: v.re, im: v.im, error: err, seeds, skipped: ctx.skipped.load(Ordering::Relaxed) })
    }

    /// Seed plane by level sets of q₀ = ⟨y⟩⟨ξ⟩^m: with (u, v) = (asinh y,
    /// asinh ξ) = R(cos θ, sin θ), the outer variable is θ and the inner one
    /// is q₀. The integrand follows ψ̂ of q − λ, so it oscillates along q₀
    /// and is smooth in θ.
    fn level_chart(&self, lam: f64, qmax: f64) -> Chart<'_> {
        let m = self.config.m;
        let sym = self.symmetric;
        let outer: Vec<f64> = if sym { vec![0.0, 0.5 * PI, PI] } else { vec![0.0, 0.5 * PI, PI, 1.5 * PI, 2.0 * PI] };
        let la = lam.abs().max(1.0);
        Chart {
            outer,
            inner: Box::new(move |_th: f64| {
                if qmax <= 1.0 {
                    return Vec::new();
                }
                let mut br = vec![1.0];
                for q in [la / 4.0, la, 0.5 * (la + qmax)] {
                    if q > 1.0 + 1e-9 && q < qmax * (1.0 - 1e-9) {
                        br.push(q);
                    }
                }
                br.push(qmax);
                br
            }),
            point: Box::new(move |th: f64, q0: f64| {
                let (c, s) = (th.cos(), th.sin());
                let l = q0.ln().max(0.0);
                let r = level_radius(c, s, m, l);
                let (u, v) = (r * c, r * s);
                // R dR/dL, finite at R = 0
                let lr_over_r = c * c * tanhc(r * c) + m * s * s * tanhc(r * s);
                (u.sinh(), v.sinh(), u.cosh() * v.cosh() / (lr_over_r * q0))
            }),
            mult: if sym { 2.0 } else { 1.0 },
            qmax,
        }
    }

    /// x-polar chart y = λζς of the I₁ piece; ξ runs over supp H₂.
    fn polar_x_chart(&self, lam: f64, qmax: f64, sigma: f64) -> Chart<'_> {
        let c = self.config;
        let zb = (qmax * qmax - 1.0).max(0.0).sqrt() / lam;
        let mut outer = vec![0.0];
        for z in [0.25, 0.5, 1.0, 2.0, 4.0] {
            if z < zb {
                outer.push(z);
            }
        }
        outer.push(zb);
        Chart {
            outer,
            inner: Box::new(move |z: f64| {
                let gm = qmax / jb(lam * z);
                if gm <= 1.0 {
                    return Vec::new();
                }
                let l = (2.0 * c.k2).min((gm.powf(2.0 / c.m) - 1.0).sqrt());
                if l <= c.k2 {
                    vec![-l, 0.0, l]
                } else {
                    vec![-l, -c.k2, 0.0, c.k2, l]
                }
            }),
            point: Box::new(move |z: f64, xi: f64| (lam * z * sigma, xi, lam)),
            mult: 1.0,
            qmax,
        }
    }

    /// ξ-polar chart ξ = (λζ)^{1/m}ς of the I₂ piece; y inner.
    fn polar_xi_chart(&self, lam: f64, qmax: f64, sigma: f64) -> Chart<'_> {
        let m = self.config.m;
        let zlo = self.config.k2.powf(m) / lam;
        let zhi = (qmax.powf(2.0 / m) - 1.0).max(0.0).sqrt().powf(m) / lam;
        let pieces = 8;
        let outer: Vec<f64> = if zhi > zlo {
            (0..=pieces).map(|k| zlo * (zhi / zlo).powf(k as f64 / pieces as f64)).collect()
        } else {
            Vec::new()
        };
        Chart {
            outer,
            inner: Box::new(move |z: f64| {
                let xi = (lam * z).powf(1.0 / m);
                let gm = qmax / jb(xi).powf(m);
                if gm <= 1.0 {
                    return Vec::new();
                }
                let u_max = asinh_pos(gm);
                let ridge = lam / jb(xi).powf(m);
                if ridge > 1.0 && asinh_pos(ridge) < u_max {
                    let ur = asinh_pos(ridge);
                    vec![-u_max, -ur, 0.0, ur, u_max]
                } else {
                    vec![-u_max, 0.0, u_max]
                }
            }),
            point: Box::new(move |z: f64, u: f64| {
                let xi = (lam * z).powf(1.0 / m) * sigma;
                let jac = (1.0 / m) * lam.powf(1.0 / m) * z.powf(1.0 / m - 1.0) * u.cosh();
                (u.sinh(), xi, jac)
            }),
            mult: 1.0,
            qmax,
        }
    }

    fn qmax_for(&self, region: Region, lam: f64, opts: &DirectOpts) -> f64 {
        match region {
            // for λ < 0 every seed with q above 1.1·cutoff − |λ| is skipped
            Region::Full if lam < 0.0 => opts.slack * (1.1 * self.window.cutoff - lam.abs()).max(1.0),
            Region::Full | Region::OutsideH1 => opts.slack * (1.1 * self.window.cutoff + lam.abs()),
            _ => opts.slack * 2.0 * self.config.k1 * lam,
        }
    }

    /// Seed-plane integral of the integrand times the `region` weight.
    pub fn region_integral(&self, lam: f64, region: Region, opts: &DirectOpts) -> Result<DirectValue> {
        if lam <= 0.0 && region != Region::Full {
            return Err(Error::ConfigInvalid(format!("region {region:?} needs lambda > 0")));
        }
        let chart = self.level_chart(lam, self.qmax_for(region, lam, opts));
        self.chart_integral(lam, region, &chart, opts)
    }

    fn sum_sides(&self, f: impl Fn(f64) -> Result<DirectValue>) -> Result<DirectValue> {
        let a = f(1.0)?;
        if self.symmetric {
            return Ok(DirectValue { re: 2.0 * a.re, im: 2.0 * a.im, error: 2.0 * a.error, ..a });
        }
        let b = f(-1.0)?;
        Ok(DirectValue {
            re: a.re + b.re,
            im: a.im + b.im,
            error: a.error + b.error,
            seeds: a.seeds + b.seeds,
            skipped: a.skipped + b.skipped,
        })
    }
}

/// I(λ): for λ > 0 with the H₁ localization, for λ < 0 without any
/// cutoff (there q − λ never vanishes).
pub fn direct_i(w: &OscillatoryIntegrand, lambda: f64) -> Result<DirectValue> {
    if lambda < 0.0 && lambda.is_finite() && direct_supported(w).is_ok() {
        return decay_value(w, Region::Full, -lambda);
    }
    direct_i_with(w, lambda, &DirectOpts::default())
}

fn direct_supported(w: &OscillatoryIntegrand) -> Result<()> {
    if w.flow.q.n() != 1 {
        return Err(Error::ConfigInvalid("direct quadrature is implemented for n = 1".into()));
    }
    Ok(())
}

pub fn direct_i_with(w: &OscillatoryIntegrand, lambda: f64, opts: &DirectOpts) -> Result<DirectValue> {
    direct_supported(w)?;
    if !lambda.is_finite() || lambda == 0.0 || lambda.abs() > 2000.0 {
        return Err(Error::ConfigInvalid(format!("lambda = {lambda} outside the supported range")));
    }
    if matches!(w.amplitude, Amplitude::Zero) {
        return Ok(DirectValue { re: 0.0, im: 0.0, error: 0.0, seeds: 0, skipped: 0 });
    }
    let region = if lambda > 0.0 { Region::H1 } else { Region::Full };
    let chart = w.level_chart(lambda, w.qmax_for(region, lambda, opts));
    w.chart_integral(lambda, region, &chart, opts)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayMeasure {
    pub lambdas: Vec<f64>,
    pub values: Vec<f64>,
    pub errors: Vec<f64>,
    /// least-squares slope of log|value| against log λ
    pub slope: f64,
}

pub fn loglog_slope(l: &[f64], v: &[f64]) -> f64 {
    let n = l.len() as f64;
    let xs: Vec<f64> = l.iter().map(|x| x.ln()).collect();
    let ys: Vec<f64> = v.iter().map(|y| y.abs().ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

/// |region contribution| at each λ and the log-log slope.
pub fn region_decay(w: &OscillatoryIntegrand, region: Region, lambdas: &[f64]) -> Result<DecayMeasure> {
    let mut values = Vec::new();
    let mut errors = Vec::new();
    for &l in lambdas {
        let v = decay_value(w, region, l)?;
        values.push(v.abs());
        errors.push(v.error);
    }
    Ok(DecayMeasure { lambdas: lambdas.to_vec(), slope: loglog_slope(lambdas, &values), values, errors })
}

/// Region value for decay measurements. The absolute tolerance drops by
/// 10 per pass until two passes agree to 5e-3 with the tolerance below 5%
/// of the value; the error reported is that last difference. Seeds far out
/// in the plane sit at the roundoff floor of their t-integrals, so a fixed
/// tight tolerance only chases noise.
pub fn decay_value(w: &OscillatoryIntegrand, region: Region, lambda: f64) -> Result<DirectValue> {
    let mut abs = 1e-3;
    let mut prev: Option<DirectValue> = None;
    loop {
        let opts = DirectOpts { rel: 1e-3, abs: abs * 2.0 * PI, inner_rel: 1e-4, t_rel: 1e-7, t_abs: 1e-18, ..DirectOpts::default() };
        let v = if region == Region::Full { direct_i_with(w, -lambda, &opts)? } else { w.region_integral(lambda, region, &opts)? };
        if let Some(p) = prev {
            let diff = (v.value() - p.value()).norm();
            if (diff <= 5e-3 * v.abs() && abs <= 0.05 * v.abs()) || abs <= 1e-13 {
                return Ok(DirectValue { error: diff, seeds: v.seeds + p.seeds, ..v });
            }
        }
        prev = Some(v);
        abs *= 0.1;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitResult {
    pub lambda: f64,
    pub i1: DirectValue,
    pub i2: DirectValue,
    /// decay order −slope of the (1 − H₁) contribution between λ and 2λ
    pub discard_bound: f64,
    pub discard: DecayMeasure,
}

impl SplitResult {
    pub fn sum(&self) -> Complex64 {
        self.i1.value() + self.i2.value()
    }
    pub fn error(&self) -> f64 {
        self.i1.error + self.i2.error
    }
}

/// I₁ (factor H₁H₂, seeds x = λζς) and I₂ (factor H₁(1 − H₂), ξ = (λζ)^{1/m}ς).
pub fn split_i(w: &OscillatoryIntegrand, lambda: f64) -> Result<SplitResult> {
    let (i1, i2) = split_parts(w, lambda, &DirectOpts::default())?;
    let discard = region_decay(w, Region::OutsideH1, &[lambda, 2.0 * lambda])?;
    Ok(SplitResult { lambda, i1, i2, discard_bound: -discard.slope, discard })
}

pub fn split_parts(w: &OscillatoryIntegrand, lambda: f64, opts: &DirectOpts) -> Result<(DirectValue, DirectValue)> {
    Ok((i1_value(w, lambda, opts)?, i2_value(w, lambda, opts)?))
}

fn check_split(w: &OscillatoryIntegrand, lambda: f64) -> Result<()> {
    if w.flow.q.n() != 1 {
        return Err(Error::ConfigInvalid("direct quadrature is implemented for n = 1".into()));
    }
    if !(lambda > 0.0 && lambda <= 2000.0) {
        return Err(Error::ConfigInvalid(format!("lambda = {lambda} outside (0, 2000]")));
    }
    Ok(())
}

pub fn i1_value(w: &OscillatoryIntegrand, lambda: f64, opts: &DirectOpts) -> Result<DirectValue> {
    check_split(w, lambda)?;
    let q = w.qmax_for(Region::H1, lambda, opts);
    w.sum_sides(|s| {
        let c = w.polar_x_chart(lambda, q, s);
        w.chart_integral(lambda, Region::I1, &c, opts)
    })
}

pub fn i2_value(w: &OscillatoryIntegrand, lambda: f64, opts: &DirectOpts) -> Result<DirectValue> {
    check_split(w, lambda)?;
    let q = w.qmax_for(Region::H1, lambda, opts);
    w.sum_sides(|s| {
        let c = w.polar_xi_chart(lambda, q, s);
        w.chart_integral(lambda, Region::I2, &c, opts)
    })
}

/// dx over x = λζς: λⁿ ζ^{n−1} dζ dς.
pub fn jacobian_x_polar(lambda: f64, zeta: f64, n: usize) -> f64 {
    lambda.powi(n as i32) * zeta.powi(n as i32 - 1)
}

/// dξ over ξ = (λζ)^{1/m}ς: (n/m) λ^{n/m} ζ^{n/m−1} dζ dς.
pub fn jacobian_xi_polar(lambda: f64, zeta: f64, n: usize, m: f64) -> f64 {
    let a = n as f64 / m;
    a * lambda.powf(a) * zeta.powf(a - 1.0)
}

/// Extremes of ζ⟨x⟩ over the points of a (x, ζ) grid where the I₂ factor
/// H₁(1 − H₂) is nonzero, ξ = (λζ)^{1/m}.
pub fn zeta_support(w: &OscillatoryIntegrand, lambda: f64, nx: usize, nz: usize) -> (f64, f64) {
    let c = w.config;
    let mut lo = f64::INFINITY;
    let mut hi: f64 = 0.0;
    let xmax = 4.0 * c.k1 * lambda;
    for i in 0..nx {
        let x = xmax * (i as f64 / (nx - 1) as f64).powi(3);
        for k in 0..nz {
            let z = 1e-4 * (1e6f64).powf(k as f64 / (nz - 1) as f64) / jb(x);
            let xi = (lambda * z).powf(1.0 / c.m);
            if w.weight(Region::I2, x, xi, lambda) > 0.0 {
                lo = lo.min(z * jb(x));
                hi = hi.max(z * jb(x));
            }
        }
    }
    (lo, hi)
}

// ---------------------------------------------------------------- stationary points

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Branch {
    I1,
    I2,
    Combined,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StationaryData {
    pub branch: Branch,
    /// (t₀, ζ₀)
    pub x0: [f64; 2],
    pub x0_star: [f64; 2],
    pub hessian: [[f64; 2]; 2],
    pub det: f64,
    pub signature: i32,
}

fn sym_eigs(m: &[[f64; 2]; 2]) -> (f64, f64) {
    let tr = m[0][0] + m[1][1];
    let d = ((m[0][0] - m[1][1]).powi(2) + 4.0 * m[0][1] * m[0][1]).sqrt();
    (0.5 * (tr - d), 0.5 * (tr + d))
}

fn signature(m: &[[f64; 2]; 2]) -> i32 {
    let (a, b) = sym_eigs(m);
    [a, b].iter().map(|&e| if e > 0.0 { 1 } else if e < 0.0 { -1 } else { 0 }).sum()
}

/// I₁ branch: X₀ = (0, 1/q_e(ς, ξ)). The exact Hessian there is
/// [[∂²_tF₁, q_e], [q_e, 0]], so det = −q_e² whatever ∂²_tF₁ is; the
/// leading form below carries ∂²_tF₁ = 0 (see [`f1_jet`] for the full one).
pub fn stationary_point_i1(q_e: &dyn Fn(&[f64], &[f64]) -> f64, sigma: &[f64], xi: &[f64]) -> StationaryData {
    let qe = q_e(sigma, xi);
    let h = [[0.0, qe], [qe, 0.0]];
    StationaryData {
        branch: Branch::I1,
        x0: [0.0, 1.0 / qe],
        x0_star: [0.0, 1.0 / qe],
        hessian: h,
        det: -qe * qe,
        signature: signature(&h),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixedPointResult {
    pub zeta0: f64,
    pub zeta0_star: f64,
    pub iterations: usize,
    pub contraction_estimate: f64,
    pub bracket: (f64, f64),
    pub in_bracket: bool,
    /// |ζ₀* − ζ₀| ≤ (Aε/2)/⟨x⟩
    pub within_bound: bool,
}

fn jbv(v: &[f64]) -> f64 {
    (1.0 + v.iter().map(|a| a * a).sum::<f64>()).sqrt()
}

/// S(x, ς, r) = −(q(x, rς) − r^m q_ψ(x, ς))/λ, the residual of q against
/// its homogeneous part on the ray through ς.
pub fn residual_map(q: &SGSymbol, q_psi: &Expr, m: f64, lambda: f64) -> impl Fn(&[f64], &[f64], f64) -> f64 {
    let q = q.clone();
    let qp = q_psi.clone();
    move |x: &[f64], s: &[f64], r: f64| {
        let xi: Vec<f64> = s.iter().map(|v| r * v).collect();
        -(q.value(x, &xi) - r.powf(m) * qp.eval(x, s)) / lambda
    }
}

/// Fixed point of G(ζ) = ζ₀(1 + S(x, ς, (λζ)^{1/m})), ζ₀ = 1/q_ψ(x, ς).
pub fn fixed_point_zeta(
    x: &[f64],
    sigma: &[f64],
    lambda: f64,
    cfg: &CutoffConfig,
    q_psi: &dyn Fn(&[f64], &[f64]) -> f64,
    s_map: &dyn Fn(&[f64], &[f64], f64) -> f64,
) -> Result<FixedPointResult> {
    let jx = jbv(x);
    let limit = cfg.kappa * lambda;
    if jx > limit {
        return Err(Error::OutOfDomain { jx, limit });
    }
    if lambda < cfg.lambda0 {
        return Err(Error::ConfigInvalid(format!("lambda = {lambda} below lambda0 = {}", cfg.lambda0)));
    }
    let z0 = 1.0 / q_psi(x, sigma);
    let g = |z: f64| z0 * (1.0 + s_map(x, sigma, (lambda * z).powf(1.0 / cfg.m)));
    let lo = (1.0 - cfg.eps / 2.0) / (cfg.a * jx);
    let hi = cfg.a * (1.0 + cfg.eps / 2.0) / jx;
    let k = 16;
    let zs: Vec<f64> = (0..=k).map(|i| lo + (hi - lo) * i as f64 / k as f64).collect();
    let gs: Vec<f64> = zs.iter().map(|&z| g(z)).collect();
    let mut ratio: f64 = 0.0;
    for i in 0..k {
        ratio = ratio.max((gs[i + 1] - gs[i]).abs() / (zs[i + 1] - zs[i]));
    }
    if ratio > cfg.k0 {
        return Err(Error::ContractionViolated { ratio, bound: cfg.k0 });
    }
    let tol = 1e-14 / jx;
    let mut z = z0;
    let mut it = 0;
    loop {
        it += 1;
        let nz = g(z);
        let step = (nz - z).abs();
        z = nz;
        if step <= tol {
            break;
        }
        if it >= 200 {
            return Err(Error::ContractionViolated { ratio, bound: cfg.k0 });
        }
    }
    Ok(FixedPointResult {
        zeta0: z0,
        zeta0_star: z,
        iterations: it,
        contraction_estimate: ratio,
        bracket: (lo, hi),
        in_bracket: z >= lo && z <= hi,
        within_bound: (z - z0).abs() <= cfg.a * cfg.eps / 2.0 / jx,
    })
}

/// Hessian of F₂(t, ζ) = −t + λ⁻¹(φ(t; x, ξ(ζ)) − xξ(ζ)) at (0, ζ₀*):
/// M₁₁ = λ⁻¹ q_ξ·q_x, M₁₂ = (1/m)(λζ)^{1/m−1} ς·q_ξ, M₂₂ = 0.
pub fn hessian_f2(
    q: &SGSymbol,
    q_psi: &dyn Fn(&[f64], &[f64]) -> f64,
    x: &[f64],
    sigma: &[f64],
    lambda: f64,
    zeta: f64,
    cfg: &CutoffConfig,
) -> Result<StationaryData> {
    let n = x.len();
    let m = cfg.m;
    let r = (lambda * zeta).powf(1.0 / m);
    let xi: Vec<f64> = sigma.iter().map(|s| r * s).collect();
    let mut qx = vec![0.0; n];
    let mut qxi = vec![0.0; n];
    for i in 0..n {
        let mut e = vec![0u8; n];
        e[i] = 1;
        let z = vec![0u8; n];
        qx[i] = q.partial(x, &xi, &e, &z)?;
        qxi[i] = q.partial(x, &xi, &z, &e)?;
    }
    let m11 = (0..n).map(|i| qxi[i] * qx[i]).sum::<f64>() / lambda;
    let m12 = (1.0 / m) * (lambda * zeta).powf(1.0 / m - 1.0) * (0..n).map(|i| sigma[i] * qxi[i]).sum::<f64>();
    let h = [[m11, m12], [m12, 0.0]];
    let det = -m12 * m12;
    let jx = jbv(x);
    let a = cfg.a;
    if !(det < 0.0) {
        return Err(Error::HessianDegenerate(format!("det M = {det} at x = {x:?}")));
    }
    let (e1, e2) = sym_eigs(&h);
    let nm = e1.abs().max(e2.abs()) / jx;
    if !(nm >= 0.5 / (a * a) && nm <= 2.0 * a * a) {
        return Err(Error::HessianDegenerate(format!("|M|/<x> = {nm} outside [{}, {}]", 0.5 / (a * a), 2.0 * a * a)));
    }
    let dn = det.abs() / (jx * jx);
    if !(dn >= 0.25 / a.powi(4) && dn <= 4.0 * a.powi(4)) {
        return Err(Error::HessianDegenerate(format!("|det M|/<x>^2 = {dn} outside the band")));
    }
    let z0 = 1.0 / q_psi(x, sigma);
    Ok(StationaryData {
        branch: Branch::I2,
        x0: [0.0, z0],
        x0_star: [0.0, zeta],
        hessian: h,
        det,
        signature: signature(&h),
    })
}

// ---------------------------------------------------------------- phase jets

/// Taylor jet of φ(t; x, ξ) − xξ in (t, δx, δξ) around (0, x, ξ), from the
/// Picard iteration ψ ← ∫₀ᵗ q(x, ξ + ∂_xψ) dt (each sweep fixes one more
/// power of t).
pub fn phase_jet(q: &Expr, x: f64, xi: f64, order: usize) -> Jet {
    let sp = JetSpace::new(3, order);
    let xj = Jet::var(&sp, 1, x);
    let xij = Jet::var(&sp, 2, xi);
    let mut psi = Jet::constant(&sp, 0.0);
    for _ in 0..=order {
        let p = xij.clone() + psi.deriv(1);
        let qv: Jet = q.eval(&[xj.clone()], &[p]);
        psi = qv.integ(0);
    }
    psi
}

/// F₂ in (δt, δζ) around (0, ζ): −t + λ⁻¹(φ − xξ) with ξ = (λζ)^{1/m}ς.
pub fn f2_jet(q: &SGSymbol, x: f64, sigma: f64, lambda: f64, zeta: f64, m: f64, order: usize) -> Result<Jet> {
    let e = q.expr.as_ref().ok_or_else(|| Error::DerivativeUnavailable(format!("{} has no closed form", q.id)))?;
    let xi0 = (lambda * zeta).powf(1.0 / m) * sigma;
    let ph = phase_jet(e, x, xi0, order);
    let sp = JetSpace::new(2, order);
    let t = Jet::var(&sp, 0, 0.0);
    let z = Jet::var(&sp, 1, zeta);
    let dxi = (z * lambda).powf(1.0 / m) * sigma - xi0;
    let s = ph.substitute(&[t.clone(), Jet::constant(&sp, 0.0), dxi]);
    Ok(-t + s * (1.0 / lambda))
}

/// F₁ in (δt, δζ) around (0, ζ): −t + φ_e(t; ζς, ξ) − ζςξ, with the exit
/// part q_e as phase symbol.
pub fn f1_jet(q_e: &Expr, sigma: f64, xi: f64, zeta: f64, order: usize) -> Jet {
    let ph = phase_jet(q_e, zeta * sigma, xi, order);
    let sp = JetSpace::new(2, order);
    let t = Jet::var(&sp, 0, 0.0);
    let dz = Jet::var(&sp, 1, 0.0) * sigma;
    -t.clone() + ph.substitute(&[t, dz, Jet::constant(&sp, 0.0)])
}

pub fn jet_eval(j: &Jet, at: &[f64]) -> f64 {
    j.space().exps().iter().zip(&j.c).map(|(e, c)| c * e.iter().zip(at).map(|(&k, v)| v.powi(k as i32)).product::<f64>()).sum()
}

fn embed(j: &Jet, sp: &Arc<JetSpace>) -> Jet {
    let mut out = Jet::constant(sp, 0.0);
    for (e, &c) in j.space().exps().iter().zip(&j.c) {
        if let Some(k) = sp.index_of(e) {
            out.c[k] = c;
        }
    }
    out
}

// ---------------------------------------------------------------- expansion

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpTerm {
    pub exponent: f64,
    pub re: f64,
    pub im: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticExpansion {
    pub branch: Branch,
    pub terms: Vec<ExpTerm>,
    pub order: usize,
    /// exponent of the first omitted term
    pub residual_exponent: f64,
    /// phase value at the stationary point (the sum carries e^{iλF(X₀)})
    pub phase0: f64,
}

impl AsymptoticExpansion {
    pub fn eval(&self, lambda: f64) -> Complex64 {
        let s: Complex64 = self.terms.iter().map(|t| Complex64::new(t.re, t.im) * lambda.powf(t.exponent)).sum();
        s * Complex64::from_polar(1.0, lambda * self.phase0)
    }

    pub fn truncated(&self, j: usize) -> AsymptoticExpansion {
        AsymptoticExpansion {
            terms: self.terms[..=j.min(self.terms.len() - 1)].to_vec(),
            order: j,
            residual_exponent: -2.0 - j as f64,
            ..self.clone()
        }
    }
}

/// ∫∫ e^{iλF} V dX ~ e^{iλF(X₀)} (2π/λ)|det M|^{-1/2} e^{iπ sgn M/4} Σ_j λ^{-j} L_j V,
/// L_j V = Σ_{k−l=j, 2k≥3l} i^{−j} 2^{−k} ⟨M⁻¹D,D⟩^k (Γ^l V)(X₀)/(k! l!),
/// Γ = F − F(X₀) − ½⟨M δ, δ⟩. `phase` and `amplitude` are jets around X₀*.
pub fn sp_expand(branch: Branch, sd: &StationaryData, phase: &Jet, amplitude: &Jet, j_max: usize) -> Result<AsymptoticExpansion> {
    if j_max > 2 {
        return Err(Error::DerivativeUnavailable(format!("expansion implemented for J <= 2, got {j_max}")));
    }
    let need = 2 * j_max + 2;
    if phase.space().nvars() != 2 || amplitude.space().nvars() != 2 {
        return Err(Error::DerivativeUnavailable("phase and amplitude jets must be in (t, zeta)".into()));
    }
    if phase.space().order() < need || amplitude.space().order() < 2 * j_max {
        return Err(Error::DerivativeUnavailable(format!(
            "J = {j_max} needs phase derivatives to order {need} and amplitude to {}; got {} and {}",
            2 * j_max,
            phase.space().order(),
            amplitude.space().order()
        )));
    }
    let m = sd.hessian;
    let scale = m.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
    let jm = [[phase.partial(&[2, 0]), phase.partial(&[1, 1])], [phase.partial(&[1, 1]), phase.partial(&[0, 2])]];
    for a in 0..2 {
        for b in 0..2 {
            if (jm[a][b] - m[a][b]).abs() > 1e-6 * scale {
                return Err(Error::HessianDegenerate(format!("phase data Hessian {jm:?} disagrees with M = {m:?}")));
            }
        }
    }
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    if det == 0.0 {
        return Err(Error::HessianDegenerate("singular M".into()));
    }
    let inv = [[m[1][1] / det, -m[0][1] / det], [-m[1][0] / det, m[0][0] / det]];
    let big = JetSpace::new(2, (6 * j_max).max(2));
    // Γ: degree ≥ 3 part of the phase, up to the order used
    let mut gamma = embed(&phase.truncate(need), &big);
    for (k, e) in big.exps().iter().enumerate() {
        if e.iter().map(|&v| v as usize).sum::<usize>() < 3 {
            gamma.c[k] = 0.0;
        }
    }
    let v = embed(&amplitude.truncate(need), &big);
    let p_op = |f: &Jet| -> Jet {
        let d0 = f.deriv(0);
        let d1 = f.deriv(1);
        d0.deriv(0) * inv[0][0] + d0.deriv(1) * (inv[0][1] + inv[1][0]) + d1.deriv(1) * inv[1][1]
    };
    let i_pow = |k: i64| -> Complex64 {
        match k.rem_euclid(4) {
            0 => Complex64::new(1.0, 0.0),
            1 => Complex64::new(0.0, 1.0),
            2 => Complex64::new(-1.0, 0.0),
            _ => Complex64::new(0.0, -1.0),
        }
    };
    let sgn = signature(&m);
    let pref = Complex64::from_polar(2.0 * PI / det.abs().sqrt(), PI * sgn as f64 / 4.0);
    let mut terms = Vec::new();
    for j in 0..=j_max {
        let mut lj = Complex64::new(0.0, 0.0);
        let mut gl = v.clone();
        for l in 0..=2 * j {
            let k = j + l;
            let mut f = gl.clone();
            for _ in 0..k {
                f = p_op(&f);
            }
            // ⟨M⁻¹D, D⟩ = −P with D = −i∂
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            let c = sign * 0.5f64.powi(k as i32) / (factorial(k) * factorial(l));
            lj += i_pow(-(j as i64)) * c * f.c[0];
            gl = gl * gamma.clone();
        }
        let cj = pref * lj;
        terms.push(ExpTerm { exponent: -1.0 - j as f64, re: cj.re, im: cj.im });
    }
    Ok(AsymptoticExpansion {
        branch,
        terms,
        order: j_max,
        residual_exponent: -2.0 - j_max as f64,
        phase0: phase.c[0],
    })
}

/// Shifted Gaussian test integral ∫∫ e^{iλts} e^{−((t−a)² + (s−b)²)/2} dt ds
/// in closed form.
pub fn gaussian_oracle(lambda: f64, a: f64, b: f64) -> Complex64 {
    let d = 1.0 + lambda * lambda;
    let mu = Complex64::new(a, lambda * b);
    (mu * mu / (2.0 * d) - a * a / 2.0).exp() * (2.0 * PI / d.sqrt())
}

/// The same integral through [`sp_expand`] at X₀ = 0.
pub fn gaussian_expansion(a: f64, b: f64, j_max: usize) -> Result<AsymptoticExpansion> {
    let sp = JetSpace::new(2, 2 * j_max + 2);
    let t = Jet::var(&sp, 0, 0.0);
    let s = Jet::var(&sp, 1, 0.0);
    let phase = t.clone() * s.clone();
    let (ta, sb) = (t - a, s - b);
    let amp = ((ta.clone() * ta + sb.clone() * sb) * -0.5).exp();
    let h = [[0.0, 1.0], [1.0, 0.0]];
    let sd = StationaryData { branch: Branch::Combined, x0: [0.0; 2], x0_star: [0.0; 2], hessian: h, det: -1.0, signature: 0 };
    sp_expand(Branch::Combined, &sd, &phase, &amp, j_max)
}

pub const ORACLE_CENTER: (f64, f64) = (0.5, 0.3);

/// Measured order of the J-term expansion of the Gaussian oracle: minus
/// the log-log slope of its relative error.
pub fn gaussian_oracle_order(j_max: usize, lambdas: &[f64]) -> Result<f64> {
    let (a, b) = ORACLE_CENTER;
    let e = gaussian_expansion(a, b, j_max)?;
    let errs: Vec<f64> = lambdas
        .iter()
        .map(|&l| {
            let ex = gaussian_oracle(l, a, b);
            (e.eval(l) - ex).norm() / ex.norm()
        })
        .collect();
    Ok(-loglog_slope(lambdas, &errs))
}

// ---------------------------------------------------------------- per-Y I₂ integral

impl OscillatoryIntegrand {
    /// Seed y with X(t; y, ξ) = x, by Newton from `guess`.
    fn invert(&self, x: f64, xi: f64, t: f64, guess: f64) -> Result<(f64, [f64; 5])> {
        let mut y = guess;
        for _ in 0..50 {
            let s = self.state_at(y, xi, t)?;
            let d = s[0] - x;
            if d.abs() <= 1e-14 * jb(x) {
                return Ok((y, s));
            }
            if !(s[3] > 0.0) {
                return Err(Error::FlowNotInvertible { t, detail: format!("x_y = {} at seed {y}", s[3]) });
            }
            y -= d / s[3];
        }
        Err(Error::NewtonDiverged(format!("inverting X(t; y, {xi}) = {x} at t = {t}")))
    }

    /// φ(t; x, ξ) − xξ at fixed (x, ξ).
    pub fn phase_at(&self, x: f64, xi: f64, t: f64) -> Result<f64> {
        Ok(self.invert(x, xi, t, x)?.1[2])
    }

    /// F₂(t, ζ) assembled from characteristics.
    pub fn f2(&self, x: f64, sigma: f64, lambda: f64, t: f64, zeta: f64) -> Result<f64> {
        let xi = (lambda * zeta).powf(1.0 / self.config.m) * sigma;
        Ok(-t + self.phase_at(x, xi, t)? / lambda)
    }

    /// J(Y; λ) = ∫∫ e^{iλF₂} ψ(t) H₁(1 − H₂) H₃(ζ/ζ₀ − 1) (1/m)ζ^{1/m−1} dt dζ
    /// at Y = (x, ς), by quadrature.
    pub fn inner_i2(&self, x: f64, sigma: f64, lambda: f64) -> Result<DirectValue> {
        let c = self.config;
        let m = c.m;
        let half = c.t;
        let z0 = 1.0 / self.q_psi(x, sigma);
        let (za, zb) = (z0 * (1.0 - 2.0 * c.eps), z0 * (1.0 + 2.0 * c.eps));
        let fail: Mutex<Option<Error>> = Mutex::new(None);
        let nodes = lobatto_nodes(half, TRACK_N);
        let zcount = AtomicUsize::new(0);
        let g = |z: f64| -> Acc {
            zcount.fetch_add(1, Ordering::Relaxed);
            let xi = (lambda * z).powf(1.0 / m) * sigma;
            let amp = (1.0 / m) * z.powf(1.0 / m - 1.0)
                * self.weight(Region::I2, x, xi, lambda)
                * self.cutoffs.h3.value(z / z0 - 1.0);
            if amp == 0.0 {
                return Acc::default();
            }
            // φ − xξ at the Lobatto nodes, continuing the seed outward from t = 0
            let n = TRACK_N;
            let mut ph = vec![0.0; n + 1];
            let mut run = |ks: &mut dyn Iterator<Item = usize>| -> Result<()> {
                let mut y = x;
                for k in ks {
                    let (yk, s) = self.invert(x, xi, nodes[k], y)?;
                    y = yk;
                    ph[k] = s[2];
                }
                Ok(())
            };
            let r = run(&mut (0..n / 2).rev()).and_then(|_| run(&mut (n / 2 + 1..=n)));
            if let Err(e) = r {
                if let Ok(mut f) = fail.lock() {
                    f.get_or_insert(e);
                }
                return Acc::default();
            }
            let cr = lobatto_coeffs(&ph);
            let om = ph.iter().zip(&nodes).fold(0.0f64, |a, (p, t)| a.max((p - lambda * t).abs()));
            let panels = ((om / PI).ceil() as usize).clamp(8, 2048);
            let br: Vec<f64> = (0..=panels).map(|k| -half + 2.0 * half * k as f64 / panels as f64).collect();
            let f = |t: f64| Complex64::from_polar(self.psi.eval(t), clenshaw(&cr, t / half) - lambda * t);
            let res = integrate_breaks(f, &br, QuadOpts::new(1e-18, 1e-13).panels(8 * panels));
            Acc { v: res.value * amp, e: (res.error + (cr[n].abs() + cr[n - 1].abs()) * 2.0 * half) * amp }
        };
        let res = integrate_breaks(g, &[za, z0 * (1.0 - c.eps), z0, z0 * (1.0 + c.eps), zb], QuadOpts::new(1e-18, 1e-12).panels(400));
        if let Some(e) = fail.lock().ok().and_then(|mut f| f.take()) {
            return Err(e);
        }
        Ok(DirectValue {
            re: res.value.v.re,
            im: res.value.v.im,
            error: res.error + res.value.e,
            seeds: zcount.load(Ordering::Relaxed),
            skipped: 0,
        })
    }

    /// Stationary-phase expansion of [`Self::inner_i2`] to order J.
    pub fn expand_inner_i2(&self, x: f64, sigma: f64, lambda: f64, j_max: usize) -> Result<AsymptoticExpansion> {
        let c = self.config;
        let q = &self.flow.q;
        let s_map = residual_map(q, &self.q_psi, c.m, lambda);
        let qp = |a: &[f64], s: &[f64]| self.q_psi.eval(a, s);
        let fp = fixed_point_zeta(&[x], &[sigma], lambda, &c, &qp, &s_map)?;
        let z = fp.zeta0_star;
        let sd = hessian_f2(q, &qp, &[x], &[sigma], lambda, z, &c)?;
        let order = 2 * j_max + 2;
        let phase = f2_jet(q, x, sigma, lambda, z, c.m, order)?;
        let sp = phase.space().clone();
        let d = psi_even_derivs(&self.window, order / 2);
        let t = Jet::var(&sp, 0, 0.0);
        let mut psi = Jet::constant(&sp, 0.0);
        let mut tp = Jet::constant(&sp, 1.0);
        for k in 0..=order {
            if k % 2 == 0 {
                psi = psi + tp.clone() * (d[k / 2] / factorial(k));
            }
            tp = tp * t.clone();
        }
        let zj = Jet::var(&sp, 1, z);
        let jac = zj.powf(1.0 / c.m - 1.0) * (1.0 / c.m);
        // the cutoffs are identically 1 around X₀*
        let xi = (lambda * z).powf(1.0 / c.m) * sigma;
        let w = self.weight(Region::I2, x, xi, lambda) * self.cutoffs.h3.value(z * self.q_psi(x, sigma) - 1.0);
        if (w - 1.0).abs() > 1e-12 {
            return Err(Error::DerivativeUnavailable(format!("cutoffs not flat at the stationary point (weight {w})")));
        }
        sp_expand(Branch::I2, &sd, &phase, &(psi * jac), j_max)
    }
}

// ---------------------------------------------------------------- trace

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceAsymptotics {
    pub lambda: f64,
    pub value: f64,
    pub i1_leading: f64,
    pub i2_leading: f64,
}

/// c₀λ^{n−1} + (n/m′)d₀λ^{n/m′−1}, pieces reported separately.
pub fn trace_asymptotics(w: &OscillatoryIntegrand, lambda: f64) -> TraceAsymptotics {
    let (a, b) = w.prediction.breakdown(lambda);
    TraceAsymptotics { lambda, value: a + b, i1_leading: a, i2_leading: b }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub lambda: f64,
    pub direct_re: f64,
    pub direct_im: f64,
    pub expansion: f64,
    pub abs_err: f64,
    pub rel_err: f64,
    pub branch: Branch,
}

impl ComparisonRow {
    pub fn new(lambda: f64, direct: Complex64, expansion: f64, branch: Branch) -> ComparisonRow {
        let abs_err = (direct - expansion).norm();
        ComparisonRow {
            lambda,
            direct_re: direct.re,
            direct_im: direct.im,
            expansion,
            abs_err,
            rel_err: abs_err / direct.norm(),
            branch,
        }
    }
}

pub fn comparison_csv(rows: &[ComparisonRow]) -> String {
    let mut s = String::from("lambda,direct_re,direct_im,expansion,abs_err,rel_err,branch\n");
    for r in rows {
        let b = match r.branch {
            Branch::I1 => "I1",
            Branch::I2 => "I2",
            Branch::Combined => "combined",
        };
        s.push_str(&format!(
            "{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{b}\n",
            r.lambda, r.direct_re, r.direct_im, r.expansion, r.abs_err, r.rel_err
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symbol::{EllipticityBounds, OrderPair};

    fn cfg() -> CutoffConfig {
        CutoffConfig::derive(1.0, 1.1309, 0.5, 0.2)
    }

    fn pred() -> TracePrediction {
        TracePrediction { model: "model-b".into(), power: 0.5, c0: 10.768093327617542, d0: 2.0 * PI, n: 1, m_prime: 0.5 }
    }

    fn model() -> OscillatoryIntegrand {
        let flow = HamiltonianFlow::new(SGSymbol::catalog("q-model", 1).unwrap(), EllipticityBounds { a: 1.0, r: 0.0, c_grad: 1.0 }).unwrap();
        OscillatoryIntegrand::new(flow, cfg(), pred()).unwrap()
    }

    #[test]
    fn chebyshev_roundtrip() {
        let n = 32;
        let nodes = lobatto_nodes(0.7, n);
        assert_eq!(nodes[n / 2], 0.0);
        let f: Vec<f64> = nodes.iter().map(|t| (2.0 * t).sin() + t * t).collect();
        let c = lobatto_coeffs(&f);
        for k in 0..50 {
            let t = -0.7 + 1.4 * k as f64 / 49.0;
            assert!((clenshaw(&c, t / 0.7) - ((2.0 * t).sin() + t * t)).abs() < 1e-14);
        }
    }

    #[test]
    fn psi_table_and_even_derivatives() {
        let w = make_window(0.2).unwrap();
        let tab = PsiTable::new(&w);
        for k in 0..200 {
            let t = -0.21 + 0.42 * k as f64 / 199.0;
            assert!((tab.eval(t) - w.psi(t)).abs() < 1e-12, "t = {t}");
        }
        let d = psi_even_derivs(&w, 2);
        assert!((d[0] - 1.0).abs() < 1e-12);
        assert!((w.psi(0.0) - 1.0).abs() < 1e-12);
        let fd = |h: f64| (w.psi(h) - 2.0 * w.psi(0.0) + w.psi(-h)) / (h * h);
        let rich = (4.0 * fd(5e-4) - fd(1e-3)) / 3.0;
        assert!(((rich - d[1]) / d[1]).abs() < 1e-5, "{rich} vs {}", d[1]);
        // leading error of the plain difference is h²ψ⁗(0)/12
        let lead = (fd(1e-3) - d[1]) / (1e-6 / 12.0);
        assert!(((lead - d[2]) / d[2]).abs() < 0.02, "{lead} vs {}", d[2]);
    }

    #[test]
    fn track_matches_flow() {
        let w = model();
        let (y, xi) = (3.0, -7.0);
        let tr = w.track(y, xi).unwrap();
        let half = w.config.t;
        for &t in &[-0.2, -0.05, 0.0, 0.13, 0.2] {
            let s = w.state_at(y, xi, t).unwrap();
            let (x, r, _) = tr.eval(t, half);
            assert!((x - s[0]).abs() < 1e-9 * jb(s[0]), "{t}");
            assert!((r - s[2]).abs() < 1e-8 * (1.0 + s[2].abs()), "{t}");
        }
        // R is S − Xξ: zero at t = 0, and Ṙ = q − q_p δ equals q there
        let s0 = w.state_at(y, xi, 0.0).unwrap();
        assert_eq!(s0[2], 0.0);
        let h = 1e-4;
        let d = (w.state_at(y, xi, h).unwrap()[2] - w.state_at(y, xi, -h).unwrap()[2]) / (2.0 * h);
        assert!((d - w.flow.q.value(&[y], &[xi])).abs() < 1e-6);
    }

    #[test]
    fn zero_amplitude_and_bad_lambda() {
        let w = model().with_amplitude(Amplitude::Zero).unwrap();
        let v = direct_i(&w, 200.0).unwrap();
        assert_eq!(v.value(), Complex64::new(0.0, 0.0));
        let w = model();
        assert!(matches!(direct_i(&w, 0.0), Err(Error::ConfigInvalid(_))));
        assert!(matches!(direct_i(&w, 5000.0), Err(Error::ConfigInvalid(_))));
    }

    #[test]
    fn huge_k2_empties_i2() {
        let mut c = cfg();
        c.k2 = 1e8;
        c.lambda0 = 1.25 * 2.0 * c.k1 * jb(2.0 * c.k2).powf(c.m);
        c.kappa = (1.0 - c.eps / 2.0) / (c.a * (2.0 * c.k2).powf(c.m));
        let flow = HamiltonianFlow::new(SGSymbol::catalog("q-model", 1).unwrap(), EllipticityBounds { a: 1.0, r: 0.0, c_grad: 1.0 }).unwrap();
        let w = OscillatoryIntegrand::new(flow, c, pred()).unwrap();
        let v = i2_value(&w, 200.0, &DirectOpts::default()).unwrap();
        assert_eq!(v.abs(), 0.0);
        assert_eq!(v.seeds, 0);
    }

    #[test]
    fn polar_jacobians_preserve_gaussian_mass() {
        let lam = 37.0;
        let m = 0.5;
        let o = QuadOpts::new(1e-14, 1e-12).panels(400);
        let mut sx = 0.0;
        let mut sxi = 0.0;
        for sg in [-1.0, 1.0] {
            sx += integrate(|z| jacobian_x_polar(lam, z, 1) * (-(lam * z * sg).powi(2)).exp(), 0.0, 1.0, o).value;
            sxi += integrate(|z| jacobian_xi_polar(lam, z, 1, m) * (-(lam * z).powf(2.0 / m)).exp(), 0.0, 1.0, o).value;
        }
        assert!((sx - PI.sqrt()).abs() < 1e-10, "{sx}");
        assert!((sxi - PI.sqrt()).abs() < 1e-10, "{sxi}");
    }

    #[test]
    fn level_chart_preserves_gaussian_mass() {
        let w = model();
        let ch = w.level_chart(50.0, 1e4);
        let o = QuadOpts::new(1e-13, 1e-11).panels(400);
        let v = integrate_breaks(
            |th: f64| {
                let br = (ch.inner)(th);
                integrate_breaks(
                    |q: f64| {
                        let (y, xi, j) = (ch.point)(th, q);
                        j * (-y * y - xi * xi).exp()
                    },
                    &br,
                    o,
                )
                .value
            },
            &ch.outer,
            o,
        )
        .value;
        assert!((v * ch.mult - PI).abs() < 1e-9, "{}", v * ch.mult);
        for (c, s, l) in [(1.0, 0.0, 3.0), (0.6, 0.8, 1e-6), (-0.28, 0.96, 20.0)] {
            let r = level_radius(c, s, 0.5, l);
            assert!((log_cosh(r * c) + 0.5 * log_cosh(r * s) - l).abs() < 1e-13 * (1.0 + l));
        }
    }

    #[test]
    fn zeta_support_inside_band() {
        let w = model();
        let c = 2.0 * w.config.k1 * (w.config.k2.powi(-2) + 1.0).powf(w.config.m / 2.0);
        for lam in [50.0, 200.0, 800.0] {
            let (lo, hi) = zeta_support(&w, lam, 9, 9);
            assert!(lo >= 1.0 / c - 1e-12 && hi <= c + 1e-12, "{lo} {hi}");
        }
    }

    #[test]
    fn stationary_point_i1_examples() {
        let qe = |_s: &[f64], xi: &[f64]| 1.0 + xi[0] * xi[0];
        let d = stationary_point_i1(&qe, &[1.0], &[0.0]);
        assert_eq!(d.x0, [0.0, 1.0]);
        assert_eq!(d.det, -1.0);
        let d = stationary_point_i1(&qe, &[1.0], &[1.0]);
        assert_eq!(d.x0, [0.0, 0.5]);
        assert_eq!(d.det, -4.0);
        assert_eq!(d.signature, 0);
    }

    #[test]
    fn f1_is_stationary_at_x0() {
        let w = model();
        for &(s, xi) in &[(1.0, 0.0), (-1.0, 1.7), (1.0, -4.0)] {
            let qe = w.q_e(s, xi);
            let z0 = 1.0 / qe;
            let j = f1_jet(&w.q_e, s, xi, z0, 3);
            let h = 1e-5;
            let gt = (jet_eval(&j, &[h, 0.0]) - jet_eval(&j, &[-h, 0.0])) / (2.0 * h);
            let gz = (jet_eval(&j, &[0.0, h]) - jet_eval(&j, &[0.0, -h])) / (2.0 * h);
            assert!(gt.abs() < 1e-8 && gz.abs() < 1e-8, "{gt} {gz}");
            assert!((j.partial(&[1, 1]) - qe).abs() < 1e-12);
            assert_eq!(j.partial(&[0, 2]), 0.0);
        }
    }

    fn jx(x: &[f64], _s: &[f64]) -> f64 {
        jbv(x)
    }

    #[test]
    fn fixed_point_examples() {
        let c = cfg();
        let zero = |_: &[f64], _: &[f64], _: f64| 0.0;
        let r = fixed_point_zeta(&[3.0], &[1.0], 1e4, &c, &jx, &zero).unwrap();
        assert_eq!(r.iterations, 1);
        assert_eq!(r.zeta0_star, r.zeta0);
        let small = |_: &[f64], _: &[f64], r: f64| 0.1 / jb(r);
        let r = fixed_point_zeta(&[3.0], &[1.0], 1e4, &c, &jx, &small).unwrap();
        assert!(r.iterations <= 30 && r.in_bracket && r.within_bound, "{r:?}");
        let far = 2.0 * c.kappa * 1e4;
        let x = (far * far - 1.0).sqrt();
        assert!(matches!(fixed_point_zeta(&[x], &[1.0], 1e4, &c, &jx, &small), Err(Error::OutOfDomain { .. })));
        // G(ζ) = ζ₀(1 + Kζ) has slope ζ₀K
        let lam = 1e4;
        let k = 10.0 * jb(3.0);
        let steep = move |_: &[f64], _: &[f64], r: f64| k * r.powf(c.m) / lam;
        assert!(matches!(fixed_point_zeta(&[3.0], &[1.0], lam, &c, &jx, &steep), Err(Error::ContractionViolated { .. })));
        assert!(matches!(fixed_point_zeta(&[0.0], &[1.0], 10.0, &c, &jx, &zero), Err(Error::ConfigInvalid(_))));
    }

    #[test]
    fn hessian_examples() {
        let c = cfg();
        // q = |ξ|^{1/2}: M = [[0, 1], [1, 0]] wherever ζ sits
        let q = SGSymbol::from_expr("root", Expr::pow(Expr::AbsXi, 0.5), OrderPair::new(0.5, 0.0, 1));
        let one = |_: &[f64], _: &[f64]| 1.0;
        let d = hessian_f2(&q, &one, &[0.0], &[1.0], 200.0, 0.9, &c).unwrap();
        assert!(d.hessian[0][0].abs() < 1e-15 && (d.hessian[0][1] - 1.0).abs() < 1e-12, "{:?}", d.hessian);
        assert!((d.det + 1.0).abs() < 1e-12);
        // bihomogeneous part of the model at x = 0
        let qp = SGSymbol::from_expr("qpsi", Expr::mul(Expr::Jx, Expr::pow(Expr::AbsXi, 0.5)), OrderPair::new(0.5, 1.0, 1));
        let d = hessian_f2(&qp, &jx, &[0.0], &[-1.0], 300.0, 1.0, &c).unwrap();
        assert!((d.det + 1.0).abs() < 1e-12, "{}", d.det);
        // a Hessian that vanishes is rejected
        let flat = SGSymbol::from_expr("flat", Expr::c(1.0), OrderPair::new(0.0, 0.0, 1));
        assert!(matches!(hessian_f2(&flat, &one, &[0.0], &[1.0], 200.0, 1.0, &c), Err(Error::HessianDegenerate(_))));
    }

    /// Finite-difference Hessian of F₂ built from characteristics.
    #[test]
    fn hessian_matches_characteristics() {
        let w = model();
        let c = w.config;
        let q = &w.flow.q;
        let mut worst: f64 = 0.0;
        for k in 0..20 {
            let u = (k as f64 * 0.618034).fract();
            let v = (k as f64 * 0.414214 + 0.1).fract();
            let lam = 60.0 * (10.0f64).powf(1.5 * v);
            let x = (2.0 * u - 1.0) * 0.8 * c.kappa * lam;
            let s = if k % 2 == 0 { 1.0 } else { -1.0 };
            let qp = |a: &[f64], sg: &[f64]| w.q_psi(a[0], sg[0]);
            let sm = residual_map(q, &w.q_psi, c.m, lam);
            let z = fixed_point_zeta(&[x], &[s], lam, &c, &qp, &sm).unwrap().zeta0_star;
            let d = hessian_f2(q, &qp, &[x], &[s], lam, z, &c).unwrap();
            let f = |t: f64, zz: f64| w.f2(x, s, lam, t, zz).unwrap();
            let (ht, hz) = (1e-3, 1e-3 * z);
            let ftt = (f(ht, z) - 2.0 * f(0.0, z) + f(-ht, z)) / (ht * ht);
            let ftz = (f(ht, z + hz) - f(ht, z - hz) - f(-ht, z + hz) + f(-ht, z - hz)) / (4.0 * ht * hz);
            let fzz = (f(0.0, z + hz) - 2.0 * f(0.0, z) + f(0.0, z - hz)) / (hz * hz);
            let scale = d.hessian[0][1].abs();
            let e = [(ftt - d.hessian[0][0]).abs(), (ftz - d.hessian[0][1]).abs(), fzz.abs()];
            worst = worst.max(e.iter().fold(0.0f64, |a, b| a.max(*b)) / scale);
        }
        assert!(worst < 1e-6, "{worst}");
    }

    /// The fixed-point and Hessian checks over a 10×10×5 grid in n = 2.
    #[test]
    fn fixed_point_grid_n2() {
        let q = SGSymbol::catalog("q-model", 2).unwrap();
        let c = cfg();
        let qpe = q.psi.clone().unwrap();
        let qp = |a: &[f64], s: &[f64]| qpe.eval(a, s);
        for &lam in &[40.0, 120.0, 400.0, 1200.0, 4000.0] {
            let sm = residual_map(&q, &qpe, c.m, lam);
            let rmax = ((c.kappa * lam).powi(2) - 1.0).sqrt();
            for i in 0..10 {
                let th = 0.7 * i as f64;
                let rho = rmax * i as f64 / 9.0 * 0.999;
                let x = [rho * th.cos(), rho * th.sin()];
                for j in 0..10 {
                    let a = 2.0 * PI * j as f64 / 10.0 + 0.1;
                    let s = [a.cos(), a.sin()];
                    let r = fixed_point_zeta(&x, &s, lam, &c, &qp, &sm).unwrap();
                    assert!(r.in_bracket && r.within_bound && r.iterations <= 30, "{x:?} {s:?} {lam}: {r:?}");
                    let d = hessian_f2(&q, &qp, &x, &s, lam, r.zeta0_star, &c).unwrap();
                    assert!(d.det < 0.0);
                }
            }
        }
    }

    #[test]
    fn gaussian_oracle_orders() {
        let ls = [100.0, 200.0, 400.0];
        for j in 0..=2 {
            let o = gaussian_oracle_order(j, &ls).unwrap();
            assert!(o >= j as f64 + 0.8, "J = {j}: order {o}");
        }
        let e = gaussian_expansion(0.0, 0.0, 0).unwrap();
        assert!((e.terms[0].re - 2.0 * PI).abs() < 1e-14 && e.terms[0].im == 0.0);
        assert!(matches!(gaussian_expansion(0.0, 0.0, 3), Err(Error::DerivativeUnavailable(_))));
    }

    #[test]
    fn quadratic_phase_leading_term() {
        let sp = JetSpace::new(2, 2);
        let t = Jet::var(&sp, 0, 0.0);
        let s = Jet::var(&sp, 1, 0.0);
        let h = [[0.0, 2.0], [2.0, 0.0]];
        let sd = StationaryData { branch: Branch::Combined, x0: [0.0; 2], x0_star: [0.0; 2], hessian: h, det: -4.0, signature: 0 };
        let e = sp_expand(Branch::Combined, &sd, &(t * s * 2.0), &Jet::constant(&sp, 1.0), 0).unwrap();
        assert!((e.eval(10.0) - Complex64::new(PI / 10.0, 0.0)).norm() < 1e-15);
        let bad = StationaryData { hessian: [[0.0, 1.0], [1.0, 0.0]], det: -1.0, ..sd };
        let sp4 = JetSpace::new(2, 2);
        let (t, s) = (Jet::var(&sp4, 0, 0.0), Jet::var(&sp4, 1, 0.0));
        assert!(matches!(sp_expand(Branch::Combined, &bad, &(t * s * 2.0), &Jet::constant(&sp4, 1.0), 0), Err(Error::HessianDegenerate(_))));
    }

    /// Phase (t² − s²)/2 + βt³ with amplitude e^{−t² − s²/2}: the s-factor
    /// is a complex Gaussian, the t-factor is integrated numerically.
    #[test]
    fn cubic_phase_oracle() {
        let beta = 0.05;
        let sp = JetSpace::new(2, 6);
        let t = Jet::var(&sp, 0, 0.0);
        let s = Jet::var(&sp, 1, 0.0);
        let phase = (t.clone() * t.clone() - s.clone() * s.clone()) * 0.5 + t.clone() * t.clone() * t.clone() * beta;
        let amp = (t.clone() * t * -1.0 - s.clone() * s * 0.5).exp();
        let h = [[1.0, 0.0], [0.0, -1.0]];
        let sd = StationaryData { branch: Branch::Combined, x0: [0.0; 2], x0_star: [0.0; 2], hessian: h, det: -1.0, signature: 0 };
        let ls = [100.0, 200.0, 400.0];
        let exact: Vec<Complex64> = ls
            .iter()
            .map(|&l| {
                let fs = (Complex64::new(2.0 * PI, 0.0) / Complex64::new(1.0, l)).sqrt();
                let br: Vec<f64> = (0..=14000).map(|k| -7.0 + k as f64 * 1e-3).collect();
                let ft = integrate_breaks(
                    |u: f64| Complex64::from_polar((-u * u).exp(), l * (0.5 * u * u + beta * u * u * u)),
                    &br,
                    QuadOpts::new(1e-17, 1e-14).panels(40000),
                )
                .value;
                fs * ft
            })
            .collect();
        for j in 0..=2 {
            let e = sp_expand(Branch::Combined, &sd, &phase, &amp, j).unwrap();
            let errs: Vec<f64> = ls.iter().zip(&exact).map(|(&l, ex)| (e.eval(l) - ex).norm() / ex.norm()).collect();
            let o = -loglog_slope(&ls, &errs);
            assert!(o >= j as f64 + 0.8, "J = {j}: order {o}, errors {errs:?}");
        }
    }

    /// An amplitude vanishing at the stationary point gains a power of λ.
    #[test]
    fn vanishing_amplitude_gains_a_power() {
        let (a, b) = ORACLE_CENTER;
        let sp = JetSpace::new(2, 6);
        let t = Jet::var(&sp, 0, 0.0);
        let s = Jet::var(&sp, 1, 0.0);
        let (ta, sb) = (t.clone() - a, s.clone() - b);
        let amp = (ta.clone() * ta + sb.clone() * sb) * -0.5;
        let amp = t.clone() * amp.exp();
        let h = [[0.0, 1.0], [1.0, 0.0]];
        let sd = StationaryData { branch: Branch::Combined, x0: [0.0; 2], x0_star: [0.0; 2], hessian: h, det: -1.0, signature: 0 };
        let e = sp_expand(Branch::Combined, &sd, &(t * s), &amp, 2).unwrap();
        assert!(e.terms[0].re.abs() < 1e-15 && e.terms[0].im.abs() < 1e-15);
        let ls = [100.0, 200.0, 400.0];
        let errs: Vec<f64> = ls
            .iter()
            .map(|&l| {
                let d = 1.0 + l * l;
                let exact = gaussian_oracle(l, a, b) * Complex64::new(a, l * b) / d;
                (e.eval(l) - exact).norm()
            })
            .collect();
        assert!(loglog_slope(&ls, &errs) <= -3.8, "{errs:?}");
    }

    #[test]
    fn trace_asymptotics_pieces() {
        let w = model();
        let t = trace_asymptotics(&w, 200.0);
        assert!((t.i1_leading - 10.768093327617542).abs() < 1e-12);
        assert!((t.i2_leading - 4.0 * PI * 200.0).abs() < 1e-9);
        assert_eq!(t.value, t.i1_leading + t.i2_leading);
        let csv = comparison_csv(&[ComparisonRow::new(200.0, Complex64::new(2500.0, 0.0), t.value, Branch::Combined)]);
        assert!(csv.starts_with("lambda,direct_re,direct_im,expansion,abs_err,rel_err,branch\n"));
    }
}
