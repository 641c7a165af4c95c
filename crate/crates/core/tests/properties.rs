//! Property tests for structural invariants across the modules.

use faer::Mat;
use proptest::prelude::*;
use sgweyl::cutoff::{make_cutoffs, smooth_step, CutoffConfig};
use sgweyl::eikonal::{characteristics, HamiltonianFlow};
use sgweyl::spectral::{eigen_values, SpectrumDataset};
use sgweyl::stationary::{fixed_point_zeta, loglog_slope, residual_map};
use sgweyl::symbol::{EllipticityBounds, SGSymbol};
use sgweyl::tauberian::{make_window, smoothed_count, TauberWindow};
use std::f64::consts::PI;
use std::sync::OnceLock;

fn window() -> &'static TauberWindow {
    static W: OnceLock<TauberWindow> = OnceLock::new();
    W.get_or_init(|| make_window(8.0).unwrap())
}

fn sqrt_staircase() -> &'static SpectrumDataset {
    static D: OnceLock<SpectrumDataset> = OnceLock::new();
    D.get_or_init(|| SpectrumDataset::synthetic("sqrt-j", (1..=150 * 150).map(|j| (j as f64).sqrt()).collect()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn smooth_step_is_monotone_in_unit_interval(u in -0.5f64..1.5, d in 0.0f64..0.5) {
        let a = smooth_step(&u);
        let b = smooth_step(&(u + d));
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!(b >= a);
    }

    #[test]
    fn derived_cutoffs_satisfy_inequalities(a in 1.0f64..3.0, c in 1.0f64..2.5, t in 0.05f64..1.0) {
        let cfg = CutoffConfig::derive(a, c, 0.5, t);
        prop_assert!(cfg.validate().is_ok());
        let cs = make_cutoffs(&cfg).unwrap();
        // H₂ is 1 below k₂ and 0 beyond 2k₂
        prop_assert!((cs.h2.value(0.5 * cfg.k2) - 1.0).abs() < 1e-15);
        prop_assert!(cs.h2.value(2.5 * cfg.k2).abs() < 1e-15);
    }

    #[test]
    fn psi_hat_nonnegative_and_psi_even(tau in -300.0f64..300.0, t in 0.0f64..8.0) {
        let w = window();
        prop_assert!(w.psi_hat(tau) >= 0.0);
        prop_assert!((w.psi(t) - w.psi(-t)).abs() <= 1e-14);
    }

    /// N(λ+|τ|) − N(λ−|τ|) ≥ |N(λ−τ) − N(λ)| for a monotone count.
    #[test]
    fn window_count_dominates_shift(lam in 1.0f64..140.0, tau in -5.0f64..5.0) {
        let cf = sqrt_staircase().counting();
        let n = |l: f64| cf.count(l.max(0.0)).unwrap() as f64;
        prop_assert!(n(lam + tau.abs()) - n(lam - tau.abs()) >= (n(lam - tau) - n(lam)).abs());
    }

    /// |S(λ+h) − S(λ)| ≤ h·sup|ψ̂'|·#{η_j within the cutoff}, with
    /// sup|ψ̂'| ≤ ∫|t ψ(t)| dt ≤ 2T² since |ψ| ≤ 1 on [−T, T].
    #[test]
    fn smoothed_count_is_continuous(lam in 20.0f64..100.0, h in 1e-4f64..1e-2) {
        let ds = sqrt_staircase();
        let w = window();
        let a = smoothed_count(ds, w, lam).unwrap();
        let b = smoothed_count(ds, w, lam + h).unwrap();
        let e = ds.trusted();
        let terms = e.partition_point(|&v| v <= lam + h + w.cutoff) - e.partition_point(|&v| v < lam - w.cutoff);
        prop_assert!((a - b).abs() <= h * 2.0 * w.t * w.t * terms as f64);
    }

    #[test]
    fn counting_function_is_monotone_and_relabels(a in 1.0f64..140.0, d in 0.0f64..10.0, s in 0.3f64..2.0) {
        let ds = sqrt_staircase();
        let cf = ds.counting();
        let hi = (a + d).min(cf.max_trusted());
        prop_assert!(cf.count(a).unwrap() <= cf.count(hi).unwrap());
        let p = ds.power(s);
        prop_assert_eq!(p.counting().count(a.powf(s)).unwrap(), cf.count(a).unwrap());
    }

    #[test]
    fn csv_round_trip(vals in prop::collection::vec(0.5f64..1e6, 1..40)) {
        let ds = SpectrumDataset::synthetic("any", vals);
        let back = SpectrumDataset::from_parts(&ds.csv(), ds.meta()).unwrap();
        prop_assert_eq!(back, ds);
    }

    #[test]
    fn eigenvalues_invariant_under_permutation(
        entries in prop::collection::vec(-1.0f64..1.0, 36),
        shift in 0usize..6,
        stride in prop::sample::select(vec![1usize, 5]),
    ) {
        let n = 6;
        let a = Mat::from_fn(n, n, |i, j| entries[i.min(j) * n + i.max(j)]);
        let p: Vec<usize> = (0..n).map(|i| (stride * i + shift) % n).collect();
        let b = Mat::from_fn(n, n, |i, j| a[(p[i], p[j])]);
        let ea = eigen_values(a.as_ref()).unwrap();
        let eb = eigen_values(b.as_ref()).unwrap();
        for (x, y) in ea.iter().zip(&eb) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
        let tr: f64 = (0..n).map(|i| a[(i, i)]).sum();
        prop_assert!((ea.iter().sum::<f64>() - tr).abs() <= 1e-12);
    }

    #[test]
    fn loglog_slope_recovers_power(p in -8.0f64..3.0, c in 0.1f64..10.0, l0 in 1.0f64..100.0) {
        let ls = [l0, 2.0 * l0, 4.0 * l0];
        let vs: Vec<f64> = ls.iter().map(|l| c * l.powf(p)).collect();
        prop_assert!((loglog_slope(&ls, &vs) - p).abs() < 1e-10);
    }

    /// Every fixed point of the I₂ radial map stays in its bracket and
    /// near ζ₀.
    #[test]
    fn fixed_point_in_bracket(lam in 40.0f64..4000.0, frac in 0.0f64..0.999, th in 0.0f64..(2.0 * PI), a in 0.0f64..(2.0 * PI)) {
        let q = SGSymbol::catalog("q-model", 2).unwrap();
        let c = CutoffConfig::derive(1.0, 1.1309, 0.5, 0.2);
        let qpe = q.psi.clone().unwrap();
        let qp = |x: &[f64], s: &[f64]| qpe.eval(x, s);
        let sm = residual_map(&q, &qpe, c.m, lam);
        let rho = frac * ((c.kappa * lam).powi(2) - 1.0).sqrt();
        let x = [rho * th.cos(), rho * th.sin()];
        let r = fixed_point_zeta(&x, &[a.cos(), a.sin()], lam, &c, &qp, &sm).unwrap();
        prop_assert!(r.in_bracket && r.within_bound && r.iterations <= 30);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    /// q is conserved along characteristics of q = ⟨x⟩⟨ξ⟩^{1/2}.
    #[test]
    fn hamiltonian_conserved(y in -6.0f64..6.0, xi in -6.0f64..6.0, t in -0.2f64..0.2) {
        prop_assume!(t.abs() > 1e-3);
        let f = HamiltonianFlow::new(SGSymbol::catalog("q-model", 1).unwrap(), EllipticityBounds { a: 1.0, r: 0.0, c_grad: 1.0 }).unwrap();
        let tr = characteristics(&f, y, xi, t, 64).unwrap();
        prop_assert!(tr.hamiltonian_drift <= 1e-8 * f.value(y, xi));
    }
}
