//! Quadrature: adaptive 21-point Gauss-Kronrod, Gauss-Legendre and a
//! Gauss-Hermite table of normalized Hermite functions.

use num_complex::Complex64;
use rayon::prelude::*;
use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::ops::{Add, Mul, Sub};

/// Values that can be integrated: a vector space with a norm.
pub trait QValue:
    Copy + Send + Sync + Add<Output = Self> + Sub<Output = Self> + Mul<f64, Output = Self>
{
    fn zero() -> Self;
    fn norm(&self) -> f64;
}

impl QValue for f64 {
    fn zero() -> Self {
        0.0
    }
    fn norm(&self) -> f64 {
        self.abs()
    }
}

impl QValue for Complex64 {
    fn zero() -> Self {
        Complex64::new(0.0, 0.0)
    }
    fn norm(&self) -> f64 {
        Complex64::norm(*self)
    }
}

const XGK: [f64; 11] = [
    0.995657163025808080735527280689003,
    0.973906528517171720077964012084452,
    0.930157491355708226001207180059508,
    0.865063366688984510732096688423493,
    0.780817726586416897063717578345042,
    0.679409568299024406234327365114874,
    0.562757134668604683339000099272694,
    0.433395394129247190799265943165784,
    0.294392862701460198131126603103866,
    0.148874338981631210884826001129720,
    0.000000000000000000000000000000000,
];

const WGK: [f64; 11] = [
    0.011694638867371874278064396062192,
    0.032558162307964727478818972459390,
    0.054755896574351996031381300244580,
    0.075039674810919952767043140916190,
    0.093125454583697605535065465083366,
    0.109387158802297641899210590325805,
    0.123491976262065851077208640765665,
    0.134709217311473325928054001771707,
    0.142775938577060080797094273138717,
    0.147739104901338491374841515972068,
    0.149445554002916905664936468389821,
];

// 10-point Gauss weights on XGK[1], XGK[3], .., XGK[9]
const WG: [f64; 5] = [
    0.066671344308688137593568809893332,
    0.149451349150580593145776339657697,
    0.219086362515982043995534934228163,
    0.269266719309996355091226921569469,
    0.295524224714752870173892994651338,
];

/// One 21-point rule on [a, b]: (kronrod, error estimate).
fn qk21_from_values<V: QValue>(fv: &[V; 21], a: f64, b: f64) -> (V, f64) {
    let half = 0.5 * (b - a);
    // fv[0] is the center, fv[2k+1], fv[2k+2] the pair at +-XGK[k]
    let fc = fv[0];
    let mut res_k = fc * WGK[10];
    let mut res_g = V::zero();
    let mut res_abs = fc.norm() * WGK[10];
    for k in 0..10 {
        let (f1, f2) = (fv[2 * k + 1], fv[2 * k + 2]);
        res_k = res_k + (f1 + f2) * WGK[k];
        res_abs += WGK[k] * (f1.norm() + f2.norm());
        if k % 2 == 1 {
            res_g = res_g + (f1 + f2) * WG[k / 2];
        }
    }
    let mean = res_k * 0.5;
    let mut res_asc = WGK[10] * (fc - mean).norm();
    for k in 0..10 {
        res_asc += WGK[k] * ((fv[2 * k + 1] - mean).norm() + (fv[2 * k + 2] - mean).norm());
    }
    let h = half.abs();
    let res_abs = res_abs * h;
    let res_asc = res_asc * h;
    let mut err = ((res_k - res_g) * half).norm();
    if res_asc != 0.0 && err != 0.0 {
        err = res_asc * (200.0 * err / res_asc).powf(1.5).min(1.0);
    }
    let floor = 50.0 * f64::EPSILON * res_abs;
    if res_abs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) && floor > err {
        err = floor;
    }
    (res_k * half, err)
}

fn nodes21(a: f64, b: f64) -> [f64; 21] {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut x = [c; 21];
    for k in 0..10 {
        x[2 * k + 1] = c - h * XGK[k];
        x[2 * k + 2] = c + h * XGK[k];
    }
    x
}

/// Single 21-point Gauss-Kronrod panel.
pub fn qk21<V: QValue, F: Fn(f64) -> V>(f: &F, a: f64, b: f64) -> (V, f64) {
    let x = nodes21(a, b);
    let fv: [V; 21] = std::array::from_fn(|i| f(x[i]));
    qk21_from_values(&fv, a, b)
}

fn qk21_par<V: QValue, F: Fn(f64) -> V + Sync>(f: &F, a: f64, b: f64) -> (V, f64) {
    let x = nodes21(a, b);
    let v: Vec<V> = x.par_iter().map(|&t| f(t)).collect();
    let fv: [V; 21] = std::array::from_fn(|i| v[i]);
    qk21_from_values(&fv, a, b)
}

#[derive(Clone, Copy, Debug)]
pub struct QuadOpts {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_panels: usize,
}

impl Default for QuadOpts {
    fn default() -> Self {
        QuadOpts { abs_tol: 1e-10, rel_tol: 1e-10, max_panels: 2000 }
    }
}

impl QuadOpts {
    pub fn new(abs_tol: f64, rel_tol: f64) -> Self {
        QuadOpts { abs_tol, rel_tol, ..Default::default() }
    }
    pub fn panels(mut self, n: usize) -> Self {
        self.max_panels = n;
        self
    }
}

#[derive(Clone, Copy, Debug)]
pub struct QuadResult<V> {
    pub value: V,
    pub error: f64,
    pub evals: usize,
    pub converged: bool,
}

struct Panel<V> {
    a: f64,
    b: f64,
    val: V,
    err: f64,
}

impl<V> PartialEq for Panel<V> {
    fn eq(&self, o: &Self) -> bool {
        self.err == o.err
    }
}
impl<V> Eq for Panel<V> {}
impl<V> PartialOrd for Panel<V> {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl<V> Ord for Panel<V> {
    fn cmp(&self, o: &Self) -> Ordering {
        self.err.total_cmp(&o.err).then(o.a.total_cmp(&self.a))
    }
}

fn adapt<V: QValue>(
    rule: &dyn Fn(f64, f64) -> (V, f64),
    breaks: &[f64],
    opts: QuadOpts,
) -> QuadResult<V> {
    let mut heap = BinaryHeap::new();
    let mut evals = 0;
    for w in breaks.windows(2) {
        let (val, err) = rule(w[0], w[1]);
        evals += 21;
        heap.push(Panel { a: w[0], b: w[1], val, err });
    }
    loop {
        let (total, err) = sum_panels(&heap);
        let target = opts.abs_tol.max(opts.rel_tol * total.norm());
        if err <= target {
            return QuadResult { value: total, error: err, evals, converged: true };
        }
        if heap.len() >= opts.max_panels {
            return QuadResult { value: total, error: err, evals, converged: false };
        }
        let p = heap.pop().expect("nonempty");
        let m = 0.5 * (p.a + p.b);
        if m <= p.a || m >= p.b {
            heap.push(p);
            let (total, err) = sum_panels(&heap);
            return QuadResult { value: total, error: err, evals, converged: false };
        }
        let (v1, e1) = rule(p.a, m);
        let (v2, e2) = rule(m, p.b);
        evals += 42;
        heap.push(Panel { a: p.a, b: m, val: v1, err: e1 });
        heap.push(Panel { a: m, b: p.b, val: v2, err: e2 });
    }
}

// Sum in left-to-right order so results do not depend on heap layout.
fn sum_panels<V: QValue>(heap: &BinaryHeap<Panel<V>>) -> (V, f64) {
    let mut ps: Vec<&Panel<V>> = heap.iter().collect();
    ps.sort_by(|x, y| x.a.total_cmp(&y.a));
    let mut total = V::zero();
    let mut err = 0.0;
    for p in ps {
        total = total + p.val;
        err += p.err;
    }
    (total, err)
}

/// Globally adaptive integration over [a, b] (finite).
pub fn integrate<V: QValue, F: Fn(f64) -> V>(f: F, a: f64, b: f64, opts: QuadOpts) -> QuadResult<V> {
    integrate_breaks(f, &[a, b], opts)
}

/// Adaptive integration with initial breakpoints.
pub fn integrate_breaks<V: QValue, F: Fn(f64) -> V>(
    f: F,
    breaks: &[f64],
    opts: QuadOpts,
) -> QuadResult<V> {
    adapt(&|a, b| qk21(&f, a, b), breaks, opts)
}

/// Same as [`integrate_breaks`] but the 21 nodes of each panel are evaluated
/// in parallel; summation order is fixed, so results are deterministic.
pub fn integrate_par<V: QValue, F: Fn(f64) -> V + Sync>(
    f: F,
    breaks: &[f64],
    opts: QuadOpts,
) -> QuadResult<V> {
    adapt(&|a, b| qk21_par(&f, a, b), breaks, opts)
}

/// Gauss-Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut pp = 1.0;
        for _ in 0..100 {
            let (mut p1, mut p2) = (1.0, 0.0);
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                p1 = ((2 * j + 1) as f64 * z * p2 - j as f64 * p3) / (j + 1) as f64;
            }
            pp = n as f64 * (z * p1 - p2) / (z * z - 1.0);
            let dz = p1 / pp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * pp * pp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// Normalized Hermite functions at `x` up to degree `n`, returned as scaled
/// values with a per-entry log scale: psi_k(x) = v[k] * exp(ls[k]).
fn hermite_scaled(x: f64, n: usize) -> (Vec<f64>, Vec<f64>) {
    const BIG: f64 = 1e150;
    let lbig = BIG.ln();
    let mut v = Vec::with_capacity(n + 1);
    let mut ls = Vec::with_capacity(n + 1);
    let mut scale = -0.5 * x * x - 0.25 * std::f64::consts::PI.ln();
    let mut prev = 0.0;
    let mut cur = 1.0;
    v.push(cur);
    ls.push(scale);
    for k in 0..n {
        let kf = k as f64;
        let next = (2.0 / (kf + 1.0)).sqrt() * x * cur - (kf / (kf + 1.0)).sqrt() * prev;
        prev = cur;
        cur = next;
        if cur.abs() > BIG {
            cur /= BIG;
            prev /= BIG;
            scale += lbig;
        }
        v.push(cur);
        ls.push(scale);
    }
    (v, ls)
}

/// psi_n(x) and psi_{n-1}(x) up to a common positive factor; `co` holds
/// the recurrence coefficients (sqrt(2/(k+1)), sqrt(k/(k+1))).
fn hermite_pair(x: f64, co: &[(f64, f64)]) -> (f64, f64) {
    let mut prev = 0.0;
    let mut cur = 1.0;
    for &(c1, c2) in co {
        let next = c1 * x * cur - c2 * prev;
        prev = cur;
        cur = next;
        if cur.abs() > 1e150 {
            cur *= 1e-150;
            prev *= 1e-150;
        }
    }
    (cur, prev)
}

/// Roots of H_n (ascending). Positive roots are found by marching from the
/// origin in steps below the local zero spacing (WKB in the bulk, Airy
/// scale near the turning point) and polishing each sign change with a
/// bracketed Newton iteration.
pub fn hermite_nodes(n: usize) -> Vec<f64> {
    assert!(n >= 2);
    let nf = n as f64;
    let nu = 2.0 * nf + 1.0;
    let co: Vec<(f64, f64)> =
        (0..n).map(|k| ((2.0 / (k as f64 + 1.0)).sqrt(), (k as f64 / (k as f64 + 1.0)).sqrt())).collect();
    let f = |z: f64| {
        let (pn, pn1) = hermite_pair(z, &co);
        (pn, (2.0 * nf).sqrt() * pn1 - z * pn)
    };
    let m = n / 2;
    let airy = nu.powf(-1.0 / 6.0);
    let mut pos: Vec<f64> = Vec::with_capacity(m);
    let mut a = if n % 2 == 1 { 0.25 * std::f64::consts::PI / nu.sqrt() } else { 0.0 };
    let mut fa = f(a).0;
    while pos.len() < m {
        let wkb = std::f64::consts::PI / (nu - a * a).max(1e-300).sqrt();
        let b = a + 0.4 * wkb.min(airy);
        assert!(b < nu.sqrt() + 10.0, "Hermite root march overran at n = {n}");
        let fb = f(b).0;
        if fb.signum() == fa.signum() {
            a = b;
            fa = fb;
            continue;
        }
        let (mut lo, mut hi) = (a, b);
        let mut z = if fa == 0.0 { a } else { a + (b - a) * fa / (fa - fb) };
        let mut last = false;
        for _ in 0..60 {
            let (v, d) = f(z);
            if v == 0.0 {
                break;
            }
            let zn = z - v / d;
            if last {
                z = zn;
                break;
            }
            if v.signum() == fa.signum() {
                lo = z;
            } else {
                hi = z;
            }
            let inside = zn > lo && zn < hi;
            last = inside && (zn - z).abs() <= 1e-9 * zn.abs().max(1.0);
            z = if inside { zn } else { 0.5 * (lo + hi) };
        }
        pos.push(z);
        a = b;
        fa = fb;
    }
    let mut out: Vec<f64> = pos.iter().rev().map(|&p| -p).collect();
    if n % 2 == 1 {
        out.push(0.0);
    }
    out.extend(pos.iter().copied());
    out
}

/// Gauss-Hermite table of weight-absorbed Hermite functions:
/// `phi[q * nbasis + j] = psi_j(x_q) * sqrt(w_q e^{x_q^2})`, so that
/// `∫ f psi_j psi_k ≈ Σ_q f(x_q) phi[q,j] phi[q,k]`.
#[derive(Clone, Debug)]
pub struct HermiteTable {
    pub nodes: Vec<f64>,
    pub nbasis: usize,
    pub phi: Vec<f64>,
    /// Same layout, derivative psi_j'.
    pub dphi: Vec<f64>,
}

impl HermiteTable {
    pub fn new(nbasis: usize, nq: usize) -> HermiteTable {
        let nodes = hermite_nodes(nq);
        let nbp = nbasis + 1;
        let rows: Vec<(Vec<f64>, Vec<f64>)> = nodes
            .par_iter()
            .map(|&x| {
                let top = nq.max(nbp);
                let (v, ls) = hermite_scaled(x, top);
                let lw = -(ls[nq - 1] + v[nq - 1].abs().ln()) - 0.5 * (nq as f64).ln();
                let val = |j: usize| -> f64 {
                    if v[j] == 0.0 {
                        return 0.0;
                    }
                    let e = ls[j] + lw;
                    v[j] * e.exp()
                };
                let full: Vec<f64> = (0..=nbasis).map(val).collect();
                let mut d = vec![0.0; nbasis];
                for j in 0..nbasis {
                    let jm = if j > 0 { (j as f64 / 2.0).sqrt() * full[j - 1] } else { 0.0 };
                    d[j] = jm - ((j as f64 + 1.0) / 2.0).sqrt() * full[j + 1];
                }
                (full[..nbasis].to_vec(), d)
            })
            .collect();
        let mut phi = Vec::with_capacity(nq * nbasis);
        let mut dphi = Vec::with_capacity(nq * nbasis);
        for (p, d) in rows {
            phi.extend(p);
            dphi.extend(d);
        }
        HermiteTable { nodes, nbasis, phi, dphi }
    }

    pub fn nq(&self) -> usize {
        self.nodes.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kronrod_is_exact_for_degree_31() {
        let f = |x: f64| x.powi(31) + 3.0 * x.powi(10) - 1.0;
        let (v, _) = qk21(&f, 0.0, 1.0);
        let exact = 1.0 / 32.0 + 3.0 / 11.0 - 1.0;
        assert!((v - exact).abs() < 1e-14);
    }

    #[test]
    fn adaptive_handles_endpoint_singularity() {
        let r = integrate(|x: f64| x.sqrt().recip(), 0.0, 1.0, QuadOpts::new(1e-10, 1e-10));
        assert!(r.converged);
        assert!((r.value - 2.0).abs() < 1e-9);
    }

    #[test]
    fn complex_oscillatory() {
        let r = integrate(
            |x: f64| Complex64::new(0.0, 40.0 * x).exp(),
            0.0,
            1.0,
            QuadOpts::new(1e-13, 0.0),
        );
        let exact = (Complex64::new(0.0, 40.0).exp() - 1.0) / Complex64::new(0.0, 40.0);
        assert!((r.value - exact).norm() < 1e-12);
    }

    #[test]
    fn legendre_weights() {
        let (x, w) = gauss_legendre(17);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-14);
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(32)).sum();
        assert!((s - 2.0 / 33.0).abs() < 1e-14);
    }

    #[test]
    fn hermite_table_orthonormal() {
        for &(nb, nq) in &[(40usize, 120usize), (300, 632)] {
            let t = HermiteTable::new(nb, nq);
            for j in (0..nb).step_by(7) {
                for k in (0..nb).step_by(5) {
                    let s: f64 = (0..nq).map(|q| t.phi[q * nb + j] * t.phi[q * nb + k]).sum();
                    let want = if j == k { 1.0 } else { 0.0 };
                    assert!((s - want).abs() < 1e-11, "({j},{k}) -> {s}");
                }
            }
        }
    }

    #[test]
    fn hermite_nodes_distinct_and_symmetric() {
        let x = hermite_nodes(1001);
        for w in x.windows(2) {
            assert!(w[1] > w[0]);
        }
        for i in 0..x.len() {
            assert!((x[i] + x[x.len() - 1 - i]).abs() < 1e-10);
        }
    }
}
