//! The C^∞ cutoff family ω, H₁, H₂, H₃ and the constants that size them.

use crate::error::{Error, Result};
use crate::real::{Hd2, Real};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CutoffConfig {
    pub b: f64,
    pub k1: f64,
    pub k2: f64,
    pub eps: f64,
    pub lambda0: f64,
    pub k0: f64,
    pub kappa: f64,
    pub t: f64,
    /// ellipticity constant of q and the phase-gradient constant the
    /// inequalities were checked against
    pub a: f64,
    pub c: f64,
    /// order of q in xi
    pub m: f64,
}

pub fn jb(v: f64) -> f64 {
    (1.0 + v * v).sqrt()
}

impl CutoffConfig {
    /// Constants from measured A, C: k₁ = s·4AC, k₂ = s·max(2B, 1),
    /// λ₀ = s·2k₁⟨2k₂⟩^m and κ from its defining identity, with slack s.
    pub fn derive(a: f64, c: f64, m: f64, t: f64) -> CutoffConfig {
        let slack = 1.25;
        let (b, eps, k0): (f64, f64, f64) = (1.0, 0.4, 0.5);
        let k1 = slack * 4.0 * a * c;
        let k2 = slack * (2.0 * b).max(1.0);
        let lambda0 = slack * 2.0 * k1 * jb(2.0 * k2).powf(m);
        let kappa = (1.0 - eps / 2.0) / (a * (2.0 * k2).powf(m));
        CutoffConfig { b, k1, k2, eps, lambda0, k0, kappa, t, a, c, m }
    }

    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if !(self.k1 > 4.0 * self.a * self.c) {
            bad.push(format!("k1 > 4AC fails: k1 = {}, 4AC = {}", self.k1, 4.0 * self.a * self.c));
        }
        let l = 2.0 * self.k1 * jb(2.0 * self.k2).powf(self.m);
        if !(self.lambda0 > l) {
            bad.push(format!("lambda0 > 2 k1 <2 k2>^m fails: lambda0 = {}, bound = {l}", self.lambda0));
        }
        if !(self.eps > 0.0 && self.eps < 0.5) {
            bad.push(format!("eps in (0, 1/2) fails: eps = {}", self.eps));
        }
        if !(self.k2 > self.b.max(1.0)) {
            bad.push(format!("k2 > max(B, 1) fails: k2 = {}", self.k2));
        }
        if !(self.k1 > 1.0) {
            bad.push(format!("k1 > 1 fails: k1 = {}", self.k1));
        }
        if !(self.k0 > 0.0 && self.k0 < 1.0) {
            bad.push(format!("k0 in (0, 1) fails: k0 = {}", self.k0));
        }
        if !(self.b > 0.0 && self.t > 0.0) {
            bad.push("B > 0 and T > 0 required".into());
        }
        let kappa = (1.0 - self.eps / 2.0) / (self.a * (2.0 * self.k2).powf(self.m));
        if (self.kappa - kappa).abs() > 1e-15 * kappa {
            bad.push(format!("kappa = (1 - eps/2)/(A (2 k2)^m) fails: {} vs {kappa}", self.kappa));
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::ConfigInvariantViolated(bad.join("; ")))
        }
    }
}

/// e^{-1/s} for s > 0, else 0.
fn bump_g<T: Real>(s: &T) -> T {
    if s.val() <= 0.0 {
        s.cst(0.0)
    } else {
        (-s.recip()).exp()
    }
}

/// Smooth step: 0 for u <= 0, 1 for u >= 1.
pub fn smooth_step<T: Real>(u: &T) -> T {
    let v = u.val();
    if v <= 0.0 {
        return u.cst(0.0);
    }
    if v >= 1.0 {
        return u.cst(1.0);
    }
    let a = bump_g(u);
    let b = bump_g(&(-u.clone() + 1.0));
    a.clone() / (a + b)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CutoffKind {
    Omega,
    H1,
    H2,
    H3,
}

#[derive(Clone, Copy, Debug)]
pub struct SmoothCutoff {
    pub kind: CutoffKind,
    pub cfg: CutoffConfig,
}

impl SmoothCutoff {
    pub fn eval<T: Real>(&self, v: &T) -> T {
        let c = &self.cfg;
        match self.kind {
            CutoffKind::Omega => smooth_step(&((v.abs() - c.b) / c.b)),
            CutoffKind::H1 => {
                let lo = 1.0 / (2.0 * c.k1);
                let rise = smooth_step(&((v.clone() - lo) / lo));
                let fall = -smooth_step(&((v.clone() - c.k1) / c.k1)) + 1.0;
                rise * fall
            }
            CutoffKind::H2 => -smooth_step(&((v.abs() - c.k2) / c.k2)) + 1.0,
            CutoffKind::H3 => -smooth_step(&((v.abs() - 1.5 * c.eps) / (0.5 * c.eps))) + 1.0,
        }
    }

    pub fn value(&self, v: f64) -> f64 {
        self.eval(&v)
    }

    /// (value, first derivative, second derivative)
    pub fn derivs(&self, v: f64) -> (f64, f64, f64) {
        let r = self.eval(&Hd2::var(v, 0));
        (r.v, r.g[0], r.h[0])
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Cutoffs {
    pub omega: SmoothCutoff,
    pub h1: SmoothCutoff,
    pub h2: SmoothCutoff,
    pub h3: SmoothCutoff,
}

pub fn make_cutoffs(cfg: &CutoffConfig) -> Result<Cutoffs> {
    cfg.validate()?;
    let mk = |kind| SmoothCutoff { kind, cfg: *cfg };
    Ok(Cutoffs { omega: mk(CutoffKind::Omega), h1: mk(CutoffKind::H1), h2: mk(CutoffKind::H2), h3: mk(CutoffKind::H3) })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg_with(k1: f64, k2: f64) -> CutoffConfig {
        let mut c = CutoffConfig::derive(1.0, 1.0, 0.5, 0.2);
        c.k1 = k1;
        c.k2 = k2;
        c.lambda0 = 4.0 * k1 * jb(2.0 * k2).powf(c.m);
        c.kappa = (1.0 - c.eps / 2.0) / (c.a * (2.0 * k2).powf(c.m));
        c
    }

    #[test]
    fn breakpoints() {
        let cs = make_cutoffs(&cfg_with(16.0, 8.0)).unwrap();
        assert_eq!(cs.h1.value(1.0), 1.0);
        assert_eq!(cs.h1.value(1.0 / 40.0), 0.0);
        assert_eq!(cs.h1.value(16.0), 1.0);
        assert_eq!(cs.h1.value(32.0), 0.0);
        assert_eq!(cs.h2.value(8.0), 1.0);
        assert_eq!(cs.h2.value(16.0), 0.0);
        assert_eq!(cs.h3.value(0.5), 1.0);
        assert_eq!(cs.h3.value(0.6), 1.0);
        assert_eq!(cs.h3.value(0.9), 0.0);
        assert_eq!(cs.h3.value(0.8), 0.0);
        assert_eq!(cs.omega.value(1.0), 0.0);
        assert_eq!(cs.omega.value(2.0), 1.0);
        let mut prev = 1.0;
        for k in 0..=200 {
            let v = cs.h2.value(8.0 + 8.0 * k as f64 / 200.0);
            assert!(v <= prev + 1e-15);
            prev = v;
        }
    }

    #[test]
    fn invariant_violations_are_named() {
        let mut c = CutoffConfig::derive(1.0, 1.0, 0.5, 0.2);
        c.k1 = 3.0;
        match make_cutoffs(&c) {
            Err(Error::ConfigInvariantViolated(s)) => assert!(s.contains("k1 > 4AC")),
            other => panic!("{other:?}"),
        }
        let mut c = CutoffConfig::derive(1.0, 1.0, 0.5, 0.2);
        c.eps = 0.6;
        c.kappa = (1.0 - c.eps / 2.0) / (c.a * (2.0 * c.k2).powf(c.m));
        assert!(matches!(make_cutoffs(&c), Err(Error::ConfigInvariantViolated(s)) if s.contains("eps")));
    }

    #[test]
    fn derivatives_continuous_across_breakpoints() {
        let cs = make_cutoffs(&cfg_with(16.0, 8.0)).unwrap();
        for (c, bps) in [(cs.h1, vec![1.0 / 32.0, 1.0 / 16.0, 16.0, 32.0]), (cs.h2, vec![8.0, 16.0]), (cs.h3, vec![0.6, 0.8])] {
            for b in bps {
                let (_, dl, d2l) = c.derivs(b * (1.0 - 1e-9));
                let (_, dr, d2r) = c.derivs(b * (1.0 + 1e-9));
                assert!((dl - dr).abs() < 1e-6 && (d2l - d2r).abs() < 1e-4, "{:?} at {b}", c.kind);
            }
        }
    }
}
