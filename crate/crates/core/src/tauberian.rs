//! Time windows with nonnegative Fourier transform, smoothed spectral sums
//! Σ ψ̂(λ - η_j) and the checks built on them.

use crate::constants::WeylPrediction;
use crate::error::{Error, Result};
use crate::quad::{gauss_legendre, integrate, QuadOpts};
use crate::spectral::{fit_weyl, SpectrumDataset};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

fn bump(u: f64) -> f64 {
    if u.abs() >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - u * u)).exp()
    }
}

const PANELS: usize = 64;
const GL: usize = 16;

/// Composite Gauss-Legendre rule on [a, b].
fn composite(a: f64, b: f64, panels: usize) -> Vec<(f64, f64)> {
    let (x, w) = gauss_legendre(GL);
    let h = (b - a) / panels as f64;
    let mut out = Vec::with_capacity(panels * GL);
    for p in 0..panels {
        let c = a + h * (p as f64 + 0.5);
        for k in 0..GL {
            out.push((c + 0.5 * h * x[k], 0.5 * h * w[k]));
        }
    }
    out
}

/// ψ = χ ∗ χ (χ even, real, supported in (-T/2, T/2)) normalized to
/// ψ(0) = 1; ψ̂ = |χ̂|².
#[derive(Clone, Debug)]
pub struct TauberWindow {
    pub t: f64,
    scale: f64,
    rule: Vec<(f64, f64)>,
    /// ψ on the uniform grid -T..T (`grid_len` points)
    pub psi_grid: Vec<f64>,
    /// ψ̂ < 1e-6 ψ̂(0) beyond this |τ|
    pub margin: f64,
    /// ψ̂ < 1e-14 ψ̂(0) beyond this |τ|
    pub cutoff: f64,
    /// χ̂ on [0, cutoff] as piecewise Chebyshev series of width `cheb_h`
    cheb: Vec<[f64; CHEB]>,
    cheb_h: f64,
}

const CHEB: usize = 25;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowMeta {
    pub t: f64,
    pub margin: f64,
    pub cutoff: f64,
    pub psi_hat0: f64,
}

pub const GRID_LEN: usize = 401;

pub fn make_window(t: f64) -> Result<TauberWindow> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::ConfigInvalid(format!("window half-width must be positive, got {t}")));
    }
    let rule = composite(0.0, 0.5 * t, PANELS);
    let raw = |s: f64| bump(2.0 * s / t);
    let norm2: f64 = 2.0 * rule.iter().map(|&(s, w)| w * raw(s) * raw(s)).sum::<f64>();
    let mut w = TauberWindow {
        t,
        scale: 1.0 / norm2.sqrt(),
        rule,
        psi_grid: Vec::new(),
        margin: 0.0,
        cutoff: 0.0,
        cheb: Vec::new(),
        cheb_h: 2.0 * PI / t,
    };
    w.psi_grid = (0..GRID_LEN).map(|k| w.psi(-t + 2.0 * t * k as f64 / (GRID_LEN - 1) as f64)).collect();
    w.margin = w.tail(1e-6);
    w.cutoff = w.tail(1e-14);
    // χ̂ is entire of exponential type T/2, so degree 24 on intervals of
    // width 2π/T is far past machine precision
    let pieces = (w.cutoff / w.cheb_h).ceil() as usize;
    let nodes: Vec<f64> = (0..CHEB).map(|k| (PI * (k as f64 + 0.5) / CHEB as f64).cos()).collect();
    w.cheb = (0..pieces)
        .into_par_iter()
        .map(|p| {
            let c = w.cheb_h * (p as f64 + 0.5);
            let f: Vec<f64> = nodes.iter().map(|&u| w.chi_hat_exact(c + 0.5 * w.cheb_h * u)).collect();
            let mut a = [0.0; CHEB];
            for (j, aj) in a.iter_mut().enumerate() {
                let s: f64 = (0..CHEB).map(|k| f[k] * (PI * j as f64 * (k as f64 + 0.5) / CHEB as f64).cos()).sum();
                *aj = if j == 0 { 1.0 } else { 2.0 } * s / CHEB as f64;
            }
            a
        })
        .collect();
    Ok(w)
}

impl TauberWindow {
    pub fn chi(&self, s: f64) -> f64 {
        self.scale * bump(2.0 * s / self.t)
    }

    /// ψ(t) = ∫ χ(s) χ(s - |t|) ds
    pub fn psi(&self, t: f64) -> f64 {
        let a = t.abs();
        let h = 0.5 * self.t;
        if a >= 2.0 * h {
            return 0.0;
        }
        composite(a - h, h, 32).iter().map(|&(s, w)| w * self.chi(s) * self.chi(s - a)).sum()
    }

    /// χ̂ by quadrature, with enough panels to resolve cos(sτ).
    pub fn chi_hat_exact(&self, tau: f64) -> f64 {
        let need = (tau.abs() * self.t / 16.0).ceil() as usize;
        if need <= PANELS {
            return 2.0 * self.rule.iter().map(|&(s, w)| w * self.chi(s) * (s * tau).cos()).sum::<f64>();
        }
        2.0 * composite(0.0, 0.5 * self.t, need).iter().map(|&(s, w)| w * self.chi(s) * (s * tau).cos()).sum::<f64>()
    }

    pub fn chi_hat(&self, tau: f64) -> f64 {
        let a = tau.abs();
        let p = (a / self.cheb_h) as usize;
        if p >= self.cheb.len() {
            return self.chi_hat_exact(a);
        }
        let u = 2.0 * (a / self.cheb_h - p as f64) - 1.0;
        // Clenshaw
        let c = &self.cheb[p];
        let (mut b1, mut b2) = (0.0, 0.0);
        for j in (1..CHEB).rev() {
            let b0 = 2.0 * u * b1 - b2 + c[j];
            b2 = b1;
            b1 = b0;
        }
        u * b1 - b2 + c[0]
    }

    pub fn psi_hat(&self, tau: f64) -> f64 {
        let c = self.chi_hat(tau);
        c * c
    }

    /// Smallest τ past which ψ̂ stays below eps ψ̂(0) over a scan of
    /// several sidelobe periods.
    fn tail(&self, eps: f64) -> f64 {
        let top = self.chi_hat_exact(0.0).powi(2);
        let step = PI / (4.0 * self.t);
        let run = 32;
        let mut last = 0.0;
        let mut below = 0;
        let mut k = 0usize;
        while below < run {
            let tau = step * k as f64;
            let c = self.chi_hat_exact(tau);
            if c * c > eps * top {
                last = tau;
                below = 0;
            } else {
                below += 1;
            }
            k += 1;
        }
        last + step
    }

    pub fn meta(&self) -> WindowMeta {
        WindowMeta { t: self.t, margin: self.margin, cutoff: self.cutoff, psi_hat0: self.psi_hat(0.0) }
    }

    /// ∫ψ̂ over the real line (equals 2π ψ(0)).
    pub fn psi_hat_mass(&self) -> f64 {
        let r = integrate(|tau| self.psi_hat(tau), 0.0, 2.0 * self.cutoff, QuadOpts::new(1e-13, 1e-13).panels(4000));
        2.0 * r.value
    }
}

/// Σ over trusted η_j of ψ̂(λ - η_j).
pub fn smoothed_count(ds: &SpectrumDataset, w: &TauberWindow, lambda: f64) -> Result<f64> {
    let e = ds.trusted();
    let max = e.last().copied().unwrap_or(f64::NEG_INFINITY);
    if lambda + w.margin > max {
        return Err(Error::BeyondTrustedRange { lambda: lambda + w.margin, max });
    }
    let i0 = e.partition_point(|&v| v < lambda - w.cutoff);
    let i1 = e.partition_point(|&v| v <= lambda + w.cutoff);
    Ok(e[i0..i1].iter().map(|&v| w.psi_hat(lambda - v)).sum())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TauberCheck {
    pub verified: bool,
    /// (a): max relative deviation of the smoothed samples from (n/m')d₀λ^{n/m'-1}
    pub max_rel_dev: f64,
    /// (b): envelope growth exponent of |N(λ) - d₀/(2π) λ^{n/m'}|
    pub residual_exp: f64,
    pub residual_bound: f64,
    pub tolerance: f64,
}

/// Checks both halves of the Tauberian statement on one dataset: the
/// smoothed samples against the hypothesis and N against the conclusion
/// over `window`.
pub fn tauber_recover(
    samples: &[(f64, f64)],
    ds: &SpectrumDataset,
    window: (f64, f64),
    d0: f64,
    n: usize,
    m_prime: f64,
    tol: f64,
) -> Result<TauberCheck> {
    let nf = n as f64;
    let a = nf / m_prime;
    let mut dev: f64 = 0.0;
    let mut worst = (0.0, 0.0);
    for &(lam, s) in samples {
        let p = a * d0 * lam.powf(a - 1.0);
        let r = (s - p).abs() / p;
        if r > dev {
            dev = r;
            worst = (lam, s);
        }
    }
    if dev > tol {
        return Err(Error::HypothesisFailed(format!(
            "(a) smoothed sum {:.6e} at lambda = {} deviates {:.3}% from (n/m')d0 lambda^(n/m'-1)",
            worst.1,
            worst.0,
            100.0 * dev
        )));
    }
    let n_star = nf.min(a - 1.0);
    let pred = WeylPrediction {
        leading_coeff: d0 / (2.0 * PI),
        leading_exp: a,
        remainder_exp: n_star,
        eps: a - n_star,
        n_star,
        provenance: "Tauberian conclusion".into(),
    };
    let fit = fit_weyl(&ds.counting(), &pred, window)?;
    let bound = n_star + 0.1;
    if !(fit.residual_exp <= bound) {
        return Err(Error::HypothesisFailed(format!(
            "(b) remainder of N grows like lambda^{:.3} on [{}, {}], allowed lambda^{bound:.3}",
            fit.residual_exp, window.0, window.1
        )));
    }
    Ok(TauberCheck { verified: true, max_rel_dev: dev, residual_exp: fit.residual_exp, residual_bound: bound, tolerance: tol })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowCount {
    pub count: usize,
    /// count / ((1+K)^{n/m'} (1+|λ|)^{n/m'-1})
    pub bound_constant: f64,
}

pub fn window_count_bound(ds: &SpectrumDataset, lambda: f64, k: f64, n: usize, m_prime: f64) -> Result<WindowCount> {
    let e = ds.trusted();
    let max = e.last().copied().unwrap_or(f64::NEG_INFINITY);
    if lambda + k > max {
        return Err(Error::BeyondTrustedRange { lambda: lambda + k, max });
    }
    let count = e.partition_point(|&v| v <= lambda + k) - e.partition_point(|&v| v < lambda - k);
    let a = n as f64 / m_prime;
    Ok(WindowCount { count, bound_constant: count as f64 / ((1.0 + k).powf(a) * (1.0 + lambda.abs()).powf(a - 1.0)) })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LemmaSweep {
    pub constant: f64,
    pub refined_constant: f64,
    pub rel_change: f64,
    pub stable: bool,
}

/// Smallest constant over a (λ, K) lattice with `nl` uniform λ values in
/// `lams`, compared with the same sweep on the doubled λ lattice.
pub fn lemma_constant(
    ds: &SpectrumDataset,
    lams: (f64, f64),
    nl: usize,
    ks: &[f64],
    n: usize,
    m_prime: f64,
) -> Result<LemmaSweep> {
    let sweep = |nl: usize| -> Result<f64> {
        let mut c: f64 = 0.0;
        for i in 0..nl {
            let lam = lams.0 + (lams.1 - lams.0) * i as f64 / (nl - 1) as f64;
            for &k in ks {
                c = c.max(window_count_bound(ds, lam, k, n, m_prime)?.bound_constant);
            }
        }
        Ok(c)
    };
    let c = sweep(nl)?;
    let r = sweep(2 * nl - 1)?;
    let rel = (r - c).abs() / c;
    Ok(LemmaSweep { constant: c, refined_constant: r, rel_change: rel, stable: rel < 0.1 })
}

/// c₀λ^{n-1} + (n/m')d₀λ^{n/m'-1} for a named operator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TracePrediction {
    pub model: String,
    /// power s with Q = P^s
    pub power: f64,
    pub c0: f64,
    pub d0: f64,
    pub n: usize,
    pub m_prime: f64,
}

impl TracePrediction {
    /// (I₁ leading, I₂ leading)
    pub fn breakdown(&self, lambda: f64) -> (f64, f64) {
        let nf = self.n as f64;
        let a = nf / self.m_prime;
        (self.c0 * lambda.powf(nf - 1.0), a * self.d0 * lambda.powf(a - 1.0))
    }

    pub fn value(&self, lambda: f64) -> f64 {
        let (a, b) = self.breakdown(lambda);
        a + b
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossRow {
    pub lambda: f64,
    pub smoothed: f64,
    pub predicted: f64,
    pub rel_dev: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossReport {
    pub model: String,
    pub window_t: f64,
    pub rows: Vec<CrossRow>,
    pub final_dev: f64,
    /// max deviation over the first and last third of the grid
    pub head_dev: f64,
    pub tail_dev: f64,
    pub shrinking: bool,
}

impl CrossReport {
    pub fn csv(&self) -> String {
        let mut s = String::from("lambda,smoothed,predicted,rel_dev\n");
        for r in &self.rows {
            s.push_str(&format!("{:.17e},{:.17e},{:.17e},{:.17e}\n", r.lambda, r.smoothed, r.predicted, r.rel_dev));
        }
        s
    }
}

pub fn trace_crosscheck(
    ds: &SpectrumDataset,
    pred: &TracePrediction,
    w: &TauberWindow,
    lams: &[f64],
) -> Result<CrossReport> {
    if ds.model != pred.model || (ds.power - pred.power).abs() > 1e-12 {
        return Err(Error::ModelMismatch(
            format!("{} (power {})", ds.model, ds.power),
            format!("{} (power {})", pred.model, pred.power),
        ));
    }
    if lams.len() < 3 {
        return Err(Error::InsufficientData("trace cross-check needs at least 3 lambda values".into()));
    }
    let rows: Vec<CrossRow> = lams
        .par_iter()
        .map(|&l| -> Result<CrossRow> {
            let s = smoothed_count(ds, w, l)?;
            let p = pred.value(l);
            Ok(CrossRow { lambda: l, smoothed: s, predicted: p, rel_dev: (s - p).abs() / s.abs() })
        })
        .collect::<Result<Vec<_>>>()?;
    let third = (rows.len() / 3).max(1);
    let head = rows[..third].iter().map(|r| r.rel_dev).fold(0.0, f64::max);
    let tail = rows[rows.len() - third..].iter().map(|r| r.rel_dev).fold(0.0, f64::max);
    Ok(CrossReport {
        model: pred.model.clone(),
        window_t: w.t,
        final_dev: rows.last().map(|r| r.rel_dev).unwrap_or(f64::NAN),
        head_dev: head,
        tail_dev: tail,
        shrinking: tail < head,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sqrt_spectrum(jmax: usize) -> SpectrumDataset {
        SpectrumDataset::synthetic("sqrt-j", (1..=jmax).map(|j| (j as f64).sqrt()).collect())
    }

    #[test]
    fn window_structure() {
        let w = make_window(8.0).unwrap();
        assert!((w.psi(0.0) - 1.0).abs() < 1e-13);
        assert_eq!(w.psi(8.0), 0.0);
        assert!(w.psi(7.9) > 0.0);
        let n = w.psi_grid.len();
        for k in 0..n {
            assert!((w.psi_grid[k] - w.psi_grid[n - 1 - k]).abs() < 1e-15);
        }
        assert!((w.psi_hat_mass() - 2.0 * PI).abs() < 1e-6, "{}", w.psi_hat_mass());
        for k in 0..400 {
            let tau = 0.37 * k as f64;
            assert!(w.psi_hat(tau) >= 0.0);
            let d = (w.chi_hat(tau) - w.chi_hat_exact(tau)).abs();
            assert!(d < 1e-14 * w.chi_hat(0.0), "{tau}: {d:e}");
        }
        // past the table the quadrature is resolved down to roundoff
        assert!(w.psi_hat(400.0) < 1e-28 && w.psi_hat(800.0) < 1e-28);
    }

    #[test]
    fn single_eigenvalue() {
        let w = make_window(8.0).unwrap();
        let ds = SpectrumDataset::synthetic("one", vec![3.0, 1e3]);
        assert!((smoothed_count(&ds, &w, 3.0).unwrap() - w.psi_hat(0.0)).abs() < 1e-15);
    }

    #[test]
    fn sqrt_staircase_density() {
        let w = make_window(8.0).unwrap();
        let ds = sqrt_spectrum(200 * 200);
        let s = smoothed_count(&ds, &w, 100.0).unwrap();
        assert!((s / (400.0 * PI) - 1.0).abs() < 0.02, "{s}");
        assert!(smoothed_count(&ds, &w, -50.0).unwrap() <= 1e-10);
        assert!(matches!(smoothed_count(&ds, &w, 199.9), Err(Error::BeyondTrustedRange { .. })));
    }

    #[test]
    fn recover_on_sqrt_staircase() {
        let w = make_window(8.0).unwrap();
        let ds = sqrt_spectrum(250 * 250);
        let samples: Vec<(f64, f64)> =
            (0..=36).map(|k| 20.0 + 5.0 * k as f64).map(|l| (l, smoothed_count(&ds, &w, l).unwrap())).collect();
        let c = tauber_recover(&samples, &ds, (20.0, 200.0), 2.0 * PI, 1, 0.5, 0.02).unwrap();
        assert!(c.verified && c.max_rel_dev <= 0.02);
        let bad = tauber_recover(&samples, &ds, (20.0, 200.0), 1.2 * 2.0 * PI, 1, 0.5, 0.02);
        assert!(matches!(bad, Err(Error::HypothesisFailed(s)) if s.starts_with("(a)")));
    }

    #[test]
    fn window_counts() {
        let ds = sqrt_spectrum(200 * 200);
        let c = window_count_bound(&ds, 100.0, 1.0, 1, 0.5).unwrap();
        // closed window: j = 99², ..., 101²
        assert_eq!(c.count, 401);
        assert!((c.bound_constant - 401.0 / (4.0 * 101.0)).abs() < 1e-12);
        let ds2 = SpectrumDataset::synthetic("double", vec![1.0, 2.0, 2.0, 3.0, 9.0]);
        assert_eq!(window_count_bound(&ds2, 2.0, 0.0, 1, 0.5).unwrap().count, 2);
        let sweep = lemma_constant(&ds, (20.0, 150.0), 14, &[0.5, 1.0, 2.0, 4.0], 1, 0.5).unwrap();
        assert!(sweep.stable, "{sweep:?}");
    }

    #[test]
    fn crosscheck_on_exact_weyl_spectrum() {
        // N(λ) = λ² exactly at the jumps
        let ds = sqrt_spectrum(150 * 150);
        let w = make_window(8.0).unwrap();
        let pred = TracePrediction { model: "sqrt-j".into(), power: 1.0, c0: 0.0, d0: 2.0 * PI, n: 1, m_prime: 0.5 };
        let lams: Vec<f64> = (0..10).map(|k| 20.0 + 10.0 * k as f64).collect();
        let r = trace_crosscheck(&ds, &pred, &w, &lams).unwrap();
        assert!(r.final_dev <= 0.02, "{r:?}");
        let other = TracePrediction { model: "model-b".into(), ..pred };
        assert!(matches!(trace_crosscheck(&ds, &other, &w, &lams), Err(Error::ModelMismatch(..))));
    }
}
