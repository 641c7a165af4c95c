//! Scalar types that carry derivative information.
//!
//! Symbols and cutoffs are written once against [`Real`] and evaluated on
//! plain `f64`, on the second-order dual [`Hd2`] (Hamiltonian flow
//! right-hand sides) or on truncated multivariate Taylor jets [`Jet`]
//! (stationary-phase coefficients, Hamilton-Jacobi series).

use std::collections::HashMap;
use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Neg, Sub};
use std::sync::Arc;

pub trait Real:
    Clone
    + Debug
    + Send
    + Sync
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    fn val(&self) -> f64;
    /// A constant living in the same derivative space as `self`.
    fn cst(&self, c: f64) -> Self;
    /// Highest derivative order carried.
    fn depth(&self) -> usize;
    /// `f(self)` where `taylor[k] = f^{(k)}(self.val()) / k!`.
    fn compose(&self, taylor: &[f64]) -> Self;

    fn powf(&self, p: f64) -> Self {
        let a = self.val();
        let d = self.depth();
        let mut t = Vec::with_capacity(d + 1);
        let mut coef = 1.0;
        for k in 0..=d {
            t.push(coef * a.powf(p - k as f64));
            coef *= (p - k as f64) / (k as f64 + 1.0);
        }
        self.compose(&t)
    }

    fn recip(&self) -> Self {
        let a = self.val();
        let d = self.depth();
        let mut t = Vec::with_capacity(d + 1);
        let mut v = 1.0 / a;
        for _ in 0..=d {
            t.push(v);
            v *= -1.0 / a;
        }
        self.compose(&t)
    }

    fn exp(&self) -> Self {
        let e = self.val().exp();
        let mut t = Vec::with_capacity(self.depth() + 1);
        let mut f = 1.0;
        for k in 0..=self.depth() {
            if k > 0 {
                f *= k as f64;
            }
            t.push(e / f);
        }
        self.compose(&t)
    }

    fn ln(&self) -> Self {
        let a = self.val();
        let mut t = vec![a.ln()];
        for k in 1..=self.depth() {
            let s = if k % 2 == 1 { 1.0 } else { -1.0 };
            t.push(s / (k as f64 * a.powi(k as i32)));
        }
        self.compose(&t)
    }

    fn sqrt(&self) -> Self {
        self.powf(0.5)
    }

    fn abs(&self) -> Self {
        if self.val() < 0.0 {
            -self.clone()
        } else {
            self.clone()
        }
    }

    fn sq(&self) -> Self {
        self.clone() * self.clone()
    }
}

impl Real for f64 {
    #[inline]
    fn val(&self) -> f64 {
        *self
    }
    #[inline]
    fn cst(&self, c: f64) -> Self {
        c
    }
    #[inline]
    fn depth(&self) -> usize {
        0
    }
    #[inline]
    fn compose(&self, taylor: &[f64]) -> Self {
        taylor[0]
    }
    #[inline]
    fn powf(&self, p: f64) -> Self {
        f64::powf(*self, p)
    }
    #[inline]
    fn recip(&self) -> Self {
        1.0 / self
    }
    #[inline]
    fn exp(&self) -> Self {
        f64::exp(*self)
    }
    #[inline]
    fn ln(&self) -> Self {
        f64::ln(*self)
    }
    #[inline]
    fn sqrt(&self) -> Self {
        f64::sqrt(*self)
    }
    #[inline]
    fn abs(&self) -> Self {
        f64::abs(*self)
    }
}

/// Value, gradient and Hessian in two variables.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hd2 {
    pub v: f64,
    pub g: [f64; 2],
    /// h[0] = d11, h[1] = d12, h[2] = d22
    pub h: [f64; 3],
}

impl Hd2 {
    pub fn constant(v: f64) -> Self {
        Hd2 { v, g: [0.0; 2], h: [0.0; 3] }
    }
    pub fn var(v: f64, i: usize) -> Self {
        let mut g = [0.0; 2];
        g[i] = 1.0;
        Hd2 { v, g, h: [0.0; 3] }
    }
}

impl Add for Hd2 {
    type Output = Hd2;
    #[inline]
    fn add(self, o: Hd2) -> Hd2 {
        Hd2 {
            v: self.v + o.v,
            g: [self.g[0] + o.g[0], self.g[1] + o.g[1]],
            h: [self.h[0] + o.h[0], self.h[1] + o.h[1], self.h[2] + o.h[2]],
        }
    }
}
impl Sub for Hd2 {
    type Output = Hd2;
    #[inline]
    fn sub(self, o: Hd2) -> Hd2 {
        self + (-o)
    }
}
impl Neg for Hd2 {
    type Output = Hd2;
    #[inline]
    fn neg(self) -> Hd2 {
        Hd2 { v: -self.v, g: [-self.g[0], -self.g[1]], h: [-self.h[0], -self.h[1], -self.h[2]] }
    }
}
impl Mul for Hd2 {
    type Output = Hd2;
    #[inline]
    fn mul(self, o: Hd2) -> Hd2 {
        let (a, b) = (self, o);
        Hd2 {
            v: a.v * b.v,
            g: [a.v * b.g[0] + b.v * a.g[0], a.v * b.g[1] + b.v * a.g[1]],
            h: [
                a.v * b.h[0] + b.v * a.h[0] + 2.0 * a.g[0] * b.g[0],
                a.v * b.h[1] + b.v * a.h[1] + a.g[0] * b.g[1] + a.g[1] * b.g[0],
                a.v * b.h[2] + b.v * a.h[2] + 2.0 * a.g[1] * b.g[1],
            ],
        }
    }
}
impl Div for Hd2 {
    type Output = Hd2;
    #[inline]
    fn div(self, o: Hd2) -> Hd2 {
        self * o.recip()
    }
}
impl Add<f64> for Hd2 {
    type Output = Hd2;
    #[inline]
    fn add(mut self, c: f64) -> Hd2 {
        self.v += c;
        self
    }
}
impl Sub<f64> for Hd2 {
    type Output = Hd2;
    #[inline]
    fn sub(mut self, c: f64) -> Hd2 {
        self.v -= c;
        self
    }
}
impl Mul<f64> for Hd2 {
    type Output = Hd2;
    #[inline]
    fn mul(self, c: f64) -> Hd2 {
        Hd2 {
            v: self.v * c,
            g: [self.g[0] * c, self.g[1] * c],
            h: [self.h[0] * c, self.h[1] * c, self.h[2] * c],
        }
    }
}
impl Div<f64> for Hd2 {
    type Output = Hd2;
    #[inline]
    fn div(self, c: f64) -> Hd2 {
        self * (1.0 / c)
    }
}

impl Real for Hd2 {
    #[inline]
    fn val(&self) -> f64 {
        self.v
    }
    #[inline]
    fn cst(&self, c: f64) -> Self {
        Hd2::constant(c)
    }
    #[inline]
    fn depth(&self) -> usize {
        2
    }
    #[inline]
    fn compose(&self, t: &[f64]) -> Self {
        let (c1, c2) = (t[1], 2.0 * t[2]);
        let g = self.g;
        Hd2 {
            v: t[0],
            g: [c1 * g[0], c1 * g[1]],
            h: [
                c1 * self.h[0] + c2 * g[0] * g[0],
                c1 * self.h[1] + c2 * g[0] * g[1],
                c1 * self.h[2] + c2 * g[1] * g[1],
            ],
        }
    }
}

/// Monomial bookkeeping for truncated Taylor series in `nvars` variables.
#[derive(Debug)]
pub struct JetSpace {
    nvars: usize,
    order: usize,
    exps: Vec<Vec<u8>>,
    index: HashMap<Vec<u8>, usize>,
    mul: Vec<(u32, u32, u32)>,
}

impl JetSpace {
    pub fn new(nvars: usize, order: usize) -> Arc<JetSpace> {
        let mut exps: Vec<Vec<u8>> = Vec::new();
        for deg in 0..=order {
            let mut cur = vec![0u8; nvars];
            fill(&mut exps, &mut cur, 0, deg);
        }
        let index: HashMap<Vec<u8>, usize> =
            exps.iter().enumerate().map(|(i, e)| (e.clone(), i)).collect();
        let mut mul = Vec::new();
        for (i, a) in exps.iter().enumerate() {
            for (j, b) in exps.iter().enumerate() {
                let s: Vec<u8> = a.iter().zip(b).map(|(x, y)| x + y).collect();
                if let Some(&k) = index.get(&s) {
                    mul.push((i as u32, j as u32, k as u32));
                }
            }
        }
        Arc::new(JetSpace { nvars, order, exps, index, mul })
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }
    pub fn order(&self) -> usize {
        self.order
    }
    pub fn len(&self) -> usize {
        self.exps.len()
    }
    pub fn is_empty(&self) -> bool {
        self.exps.is_empty()
    }
    pub fn exps(&self) -> &[Vec<u8>] {
        &self.exps
    }
    pub fn index_of(&self, e: &[u8]) -> Option<usize> {
        self.index.get(e).copied()
    }
}

fn fill(out: &mut Vec<Vec<u8>>, cur: &mut Vec<u8>, pos: usize, left: usize) {
    if pos + 1 == cur.len() {
        cur[pos] = left as u8;
        out.push(cur.clone());
        return;
    }
    for k in (0..=left).rev() {
        cur[pos] = k as u8;
        fill(out, cur, pos + 1, left - k);
    }
    cur[pos] = 0;
}

/// Truncated Taylor polynomial around an implicit base point.
#[derive(Clone, Debug)]
pub struct Jet {
    sp: Arc<JetSpace>,
    pub c: Vec<f64>,
}

impl Jet {
    pub fn constant(sp: &Arc<JetSpace>, v: f64) -> Jet {
        let mut c = vec![0.0; sp.len()];
        c[0] = v;
        Jet { sp: sp.clone(), c }
    }

    /// The variable `i` with value `v` at the base point.
    pub fn var(sp: &Arc<JetSpace>, i: usize, v: f64) -> Jet {
        let mut j = Jet::constant(sp, v);
        if sp.order >= 1 {
            let mut e = vec![0u8; sp.nvars];
            e[i] = 1;
            j.c[sp.index[&e]] = 1.0;
        }
        j
    }

    pub fn space(&self) -> &Arc<JetSpace> {
        &self.sp
    }

    pub fn coeff(&self, e: &[u8]) -> f64 {
        self.sp.index.get(e).map_or(0.0, |&i| self.c[i])
    }

    /// Partial derivative `∂^e` at the base point (`e! * coeff`).
    pub fn partial(&self, e: &[u8]) -> f64 {
        let f: f64 = e.iter().map(|&k| factorial(k as usize)).product();
        f * self.coeff(e)
    }

    /// Derivative in variable `i`; the top-degree terms become unknown and are
    /// left at zero.
    pub fn deriv(&self, i: usize) -> Jet {
        let mut out = vec![0.0; self.c.len()];
        for (k, e) in self.sp.exps.iter().enumerate() {
            if e[i] == 0 || self.c[k] == 0.0 {
                continue;
            }
            let mut d = e.clone();
            d[i] -= 1;
            out[self.sp.index[&d]] += e[i] as f64 * self.c[k];
        }
        Jet { sp: self.sp.clone(), c: out }
    }

    /// Antiderivative in variable `i` vanishing on `{v_i = 0}`, truncated.
    pub fn integ(&self, i: usize) -> Jet {
        let mut out = vec![0.0; self.c.len()];
        for (k, e) in self.sp.exps.iter().enumerate() {
            if self.c[k] == 0.0 {
                continue;
            }
            let mut d = e.clone();
            d[i] += 1;
            if let Some(&j) = self.sp.index.get(&d) {
                out[j] += self.c[k] / d[i] as f64;
            }
        }
        Jet { sp: self.sp.clone(), c: out }
    }

    /// Substitute jets (in another space) for the deviations of each variable
    /// from the base point.
    pub fn substitute(&self, dev: &[Jet]) -> Jet {
        assert_eq!(dev.len(), self.sp.nvars);
        let tsp = dev[0].sp.clone();
        let ord = self.sp.order;
        let powers: Vec<Vec<Jet>> = dev
            .iter()
            .map(|d| {
                let mut p = vec![Jet::constant(&tsp, 1.0)];
                for k in 1..=ord {
                    let nxt = p[k - 1].clone() * d.clone();
                    p.push(nxt);
                }
                p
            })
            .collect();
        let mut acc = Jet::constant(&tsp, 0.0);
        for (k, e) in self.sp.exps.iter().enumerate() {
            if self.c[k] == 0.0 {
                continue;
            }
            let mut term = Jet::constant(&tsp, self.c[k]);
            for (v, &p) in e.iter().enumerate() {
                if p > 0 {
                    term = term * powers[v][p as usize].clone();
                }
            }
            acc = acc + term;
        }
        acc
    }

    /// Drop all terms of total degree above `d`.
    pub fn truncate(&self, d: usize) -> Jet {
        let mut out = self.clone();
        for (k, e) in self.sp.exps.iter().enumerate() {
            if e.iter().map(|&x| x as usize).sum::<usize>() > d {
                out.c[k] = 0.0;
            }
        }
        out
    }
}

pub fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

impl Add for Jet {
    type Output = Jet;
    fn add(mut self, o: Jet) -> Jet {
        for (a, b) in self.c.iter_mut().zip(&o.c) {
            *a += b;
        }
        self
    }
}
impl Sub for Jet {
    type Output = Jet;
    fn sub(mut self, o: Jet) -> Jet {
        for (a, b) in self.c.iter_mut().zip(&o.c) {
            *a -= b;
        }
        self
    }
}
impl Neg for Jet {
    type Output = Jet;
    fn neg(mut self) -> Jet {
        for a in self.c.iter_mut() {
            *a = -*a;
        }
        self
    }
}
impl Mul for Jet {
    type Output = Jet;
    fn mul(self, o: Jet) -> Jet {
        let mut out = vec![0.0; self.c.len()];
        for &(i, j, k) in &self.sp.mul {
            let (a, b) = (self.c[i as usize], o.c[j as usize]);
            if a != 0.0 && b != 0.0 {
                out[k as usize] += a * b;
            }
        }
        Jet { sp: self.sp, c: out }
    }
}
impl Div for Jet {
    type Output = Jet;
    fn div(self, o: Jet) -> Jet {
        self * o.recip()
    }
}
impl Add<f64> for Jet {
    type Output = Jet;
    fn add(mut self, c: f64) -> Jet {
        self.c[0] += c;
        self
    }
}
impl Sub<f64> for Jet {
    type Output = Jet;
    fn sub(mut self, c: f64) -> Jet {
        self.c[0] -= c;
        self
    }
}
impl Mul<f64> for Jet {
    type Output = Jet;
    fn mul(mut self, c: f64) -> Jet {
        for a in self.c.iter_mut() {
            *a *= c;
        }
        self
    }
}
impl Div<f64> for Jet {
    type Output = Jet;
    fn div(self, c: f64) -> Jet {
        self * (1.0 / c)
    }
}

impl Real for Jet {
    fn val(&self) -> f64 {
        self.c[0]
    }
    fn cst(&self, c: f64) -> Self {
        Jet::constant(&self.sp, c)
    }
    fn depth(&self) -> usize {
        self.sp.order
    }
    fn compose(&self, t: &[f64]) -> Self {
        let mut h = self.clone();
        h.c[0] = 0.0;
        let d = self.sp.order;
        let mut r = Jet::constant(&self.sp, t[d]);
        for k in (0..d).rev() {
            r = r * h.clone() + t[k];
        }
        r
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hd2_matches_closed_form() {
        // f(x, y) = exp(x) * sqrt(1 + y^2)
        let (x0, y0) = (0.3, 1.7);
        let f = Hd2::var(x0, 0).exp() * (Hd2::var(y0, 1).sq() + 1.0).sqrt();
        let r = (1.0 + y0 * y0).sqrt();
        let e = x0.exp();
        assert!((f.v - e * r).abs() < 1e-14);
        assert!((f.g[0] - e * r).abs() < 1e-14);
        assert!((f.g[1] - e * y0 / r).abs() < 1e-14);
        assert!((f.h[1] - e * y0 / r).abs() < 1e-14);
        assert!((f.h[2] - e / r.powi(3)).abs() < 1e-14);
    }

    #[test]
    fn jet_exp_of_sum() {
        let sp = JetSpace::new(2, 6);
        let x = Jet::var(&sp, 0, 0.0);
        let y = Jet::var(&sp, 1, 0.0);
        let f = (x + y).exp();
        // coefficient of x^a y^b is 1/(a! b!)
        for a in 0..=3u8 {
            for b in 0..=3u8 {
                let want = 1.0 / (factorial(a as usize) * factorial(b as usize));
                assert!((f.coeff(&[a, b]) - want).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn jet_powf_and_ln() {
        let sp = JetSpace::new(1, 5);
        let x = Jet::var(&sp, 0, 2.0);
        let f = x.powf(1.5).ln();
        // ln(x^1.5) = 1.5 ln x ; third derivative 1.5 * 2 / x^3
        assert!((f.partial(&[3]) - 3.0 / 8.0).abs() < 1e-13);
    }

    #[test]
    fn jet_integ_deriv_roundtrip() {
        let sp = JetSpace::new(2, 4);
        let x = Jet::var(&sp, 0, 0.0);
        let y = Jet::var(&sp, 1, 1.0);
        let f = (x.clone() * y.clone() + 1.0).sq();
        let g = f.truncate(3).integ(0).deriv(0);
        for (k, e) in sp.exps().iter().enumerate() {
            if e.iter().map(|&v| v as usize).sum::<usize>() <= 3 {
                assert!((g.c[k] - f.c[k]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn jet_substitute_composes() {
        let sp1 = JetSpace::new(1, 5);
        let sp2 = JetSpace::new(1, 5);
        // f(u) = exp(u) around u = 0, u = sin-like polynomial s - s^3/6
        let f = Jet::var(&sp1, 0, 0.0).exp();
        let s = Jet::var(&sp2, 0, 0.0);
        let u = s.clone() - s.clone() * s.clone() * s / 6.0;
        let g = f.substitute(&[u.clone()]);
        let h = u.exp();
        for k in 0..sp2.len() {
            assert!((g.c[k] - h.c[k]).abs() < 1e-14);
        }
    }
}
