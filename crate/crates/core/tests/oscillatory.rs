//! Direct quadrature of the trace integral against its split and its
//! leading asymptotics, on the model q = ⟨x⟩⟨ξ⟩^{1/2} in one dimension.

use num_complex::Complex64;
use sgweyl::cutoff::CutoffConfig;
use sgweyl::eikonal::HamiltonianFlow;
use sgweyl::stationary::*;
use sgweyl::symbol::{EllipticityBounds, SGSymbol};
use sgweyl::tauberian::TracePrediction;

fn integrand() -> OscillatoryIntegrand {
    let flow = HamiltonianFlow::new(SGSymbol::catalog("q-model", 1).unwrap(), EllipticityBounds { a: 1.0, r: 0.0, c_grad: 1.0 }).unwrap();
    let pred = TracePrediction { model: "model-b".into(), power: 0.5, c0: 10.768093327617542, d0: 2.0 * std::f64::consts::PI, n: 1, m_prime: 0.5 };
    OscillatoryIntegrand::new(flow, CutoffConfig::derive(1.0, 1.1309, 0.5, 0.2), pred).unwrap()
}

#[test]
fn direct_matches_split_and_asymptotics_at_200() {
    let w = integrand();
    let lam = 200.0;
    let d = direct_i(&w, lam).unwrap();
    let (i1, i2) = split_parts(&w, lam, &DirectOpts::default()).unwrap();
    let gap = (d.value() - (i1.value() + i2.value())).norm();
    assert!(gap <= 2.0 * (d.error + i1.error + i2.error), "gap {gap}, errors {} {} {}", d.error, i1.error, i2.error);
    // I₁ carries the c₀ term, I₂ the Weyl term
    assert!((i1.re - 10.768093327617542).abs() < 0.01, "{}", i1.re);
    let t = trace_asymptotics(&w, lam);
    let rel = (d.value() - Complex64::new(t.value, 0.0)).norm() / d.abs();
    assert!(rel <= 0.15, "{rel}");
    assert!(d.im.abs() < 1e-6 * d.re.abs());
}

#[test]
fn inner_i2_expansion_orders() {
    let w = integrand();
    let ls = [100.0, 200.0, 400.0];
    for &x in &[0.0, 3.0, -10.0] {
        let direct: Vec<Complex64> = ls.iter().map(|&l| w.inner_i2(x, 1.0, l).unwrap().value()).collect();
        for j in 0..=2 {
            let errs: Vec<f64> = ls
                .iter()
                .zip(&direct)
                .map(|(&l, d)| (w.expand_inner_i2(x, 1.0, l, j).unwrap().eval(l) - d).norm() / d.norm())
                .collect();
            let order = -loglog_slope(&ls, &errs);
            assert!(order >= j as f64 + 0.8, "x = {x}, J = {j}: order {order}, errors {errs:?}");
        }
    }
}
