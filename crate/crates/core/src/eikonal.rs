//! Eikonal equation ∂_tφ = q(x, d_xφ), φ(0) = xξ, by characteristics (n = 1).

use crate::error::{Error, Result};
use crate::ode::{dopri5, OdeOpts};
use crate::real::Hd2;
use crate::symbol::{EllipticityBounds, SGSymbol};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

fn jb(v: f64) -> f64 {
    (1.0 + v * v).sqrt()
}

#[derive(Clone, Debug)]
pub struct HamiltonianFlow {
    pub q: SGSymbol,
    pub bounds: EllipticityBounds,
    pub ode: OdeOpts,
}

/// q, its gradient (q_x, q_p) and Hessian (q_xx, q_xp, q_pp) at one point.
#[derive(Clone, Copy, Debug)]
pub struct Local {
    pub q: f64,
    pub g: [f64; 2],
    pub h: [f64; 3],
}

impl HamiltonianFlow {
    pub fn new(q: SGSymbol, bounds: EllipticityBounds) -> Result<HamiltonianFlow> {
        if q.n() != 1 {
            return Err(Error::ConfigInvalid(format!("characteristics implemented for n = 1, got n = {}", q.n())));
        }
        Ok(HamiltonianFlow { q, bounds, ode: OdeOpts { rtol: 1e-13, atol: 1e-13, ..OdeOpts::default() } })
    }

    pub fn local(&self, x: f64, p: f64) -> Local {
        if self.q.has_analytic_derivatives() {
            let r: Hd2 = self.q.eval_real(&[Hd2::var(x, 0)], &[Hd2::var(p, 1)]);
            return Local { q: r.v, g: r.g, h: r.h };
        }
        let d = |bx: u8, bp: u8| self.q.partial(&[x], &[p], &[bx], &[bp]).unwrap_or(f64::NAN);
        Local { q: self.q.value(&[x], &[p]), g: [d(1, 0), d(0, 1)], h: [d(2, 0), d(1, 1), d(0, 2)] }
    }

    pub fn value(&self, x: f64, p: f64) -> f64 {
        self.q.value(&[x], &[p])
    }

    /// Right-hand side for the state
    /// [x, p, S, x_y, p_y, x_ξ, p_ξ, S_ξ], S = φ(t; x(t), ξ).
    fn rhs(&self, s: &[f64; 8]) -> [f64; 8] {
        let l = self.local(s[0], s[1]);
        let [qx, qp] = l.g;
        let [qxx, qxp, qpp] = l.h;
        let p = s[1];
        // p = d_xφ along the curve forces ẋ = -q_p, ṗ = q_x
        [
            -qp,
            qx,
            l.q - p * qp,
            -qxp * s[3] - qpp * s[4],
            qxx * s[3] + qxp * s[4],
            -qxp * s[5] - qpp * s[6],
            qxx * s[5] + qxp * s[6],
            (qx - p * qxp) * s[5] - p * qpp * s[6],
        ]
    }

    /// States at the requested times from the seed (y, ξ).
    pub fn flow(&self, y: f64, xi: f64, touts: &[f64]) -> Result<Vec<[f64; 8]>> {
        let s0 = [y, xi, y * xi, 1.0, 0.0, 0.0, 1.0, y];
        let pos: Vec<f64> = touts.iter().copied().filter(|&t| t > 0.0).collect();
        let neg: Vec<f64> = touts.iter().copied().filter(|&t| t < 0.0).rev().collect();
        let (fwd, _) = dopri5(|_, s| self.rhs(s), 0.0, s0, &pos, self.ode)?;
        let (bwd, _) = dopri5(|_, s| self.rhs(s), 0.0, s0, &neg, self.ode)?;
        let mut out = Vec::with_capacity(touts.len());
        let (mut i, mut j) = (0, bwd.len());
        for &t in touts {
            if t > 0.0 {
                out.push(fwd[i]);
                i += 1;
            } else if t < 0.0 {
                j -= 1;
                out.push(bwd[j]);
            } else {
                out.push(s0);
            }
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub x: Vec<f64>,
    pub xi: Vec<f64>,
    /// S(t) = φ(t; x(t), ξ)
    pub action: Vec<f64>,
    pub hamiltonian_drift: f64,
}

/// Characteristic from (y, ξ) sampled at `steps` + 1 uniform times in
/// [0, T] (T may be negative).
pub fn characteristics(flow: &HamiltonianFlow, y: f64, xi: f64, t_end: f64, steps: usize) -> Result<Trajectory> {
    if steps < 64 {
        return Err(Error::ConfigInvalid(format!("characteristics need at least 64 steps, got {steps}")));
    }
    let ts: Vec<f64> = (0..=steps).map(|k| t_end * k as f64 / steps as f64).collect();
    let st = flow.flow(y, xi, &ts)?;
    let q0 = flow.value(y, xi);
    let mut drift: f64 = 0.0;
    for s in &st {
        drift = drift.max((flow.value(s[0], s[1]) - q0).abs());
    }
    let tol = 100.0 * flow.ode.rtol * q0.abs().max(1.0);
    if drift > tol {
        return Err(Error::OdeToleranceNotMet(format!("Hamiltonian drift {drift:.3e} > {tol:.3e}")));
    }
    Ok(Trajectory {
        x: st.iter().map(|s| s[0]).collect(),
        xi: st.iter().map(|s| s[1]).collect(),
        action: st.iter().map(|s| s[2]).collect(),
        t: ts,
        hamiltonian_drift: drift,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeSpec {
    pub nt: usize,
    pub nx: usize,
    pub nxi: usize,
    /// x, ξ ∈ [-l, l]
    pub l: f64,
}

impl LatticeSpec {
    pub const SHIPPED: LatticeSpec = LatticeSpec { nt: 17, nx: 33, nxi: 33, l: 8.0 };

    pub fn refined(&self) -> LatticeSpec {
        LatticeSpec { nt: 2 * self.nt - 1, nx: 2 * self.nx - 1, nxi: 2 * self.nxi - 1, l: self.l }
    }
}

pub const MAX_NEWTON: usize = 12;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PhaseField {
    pub t_half: f64,
    pub lattice: LatticeSpec,
    pub ts: Vec<f64>,
    pub xs: Vec<f64>,
    pub xis: Vec<f64>,
    /// Indexed [(k * nx + i) * nxi + j] for (t_k, x_i, ξ_j).
    pub phi: Vec<f64>,
    pub dphix: Vec<f64>,
    pub dphixi: Vec<f64>,
    /// Seed y with X(t; y, ξ) = x, and ∂X/∂y there.
    pub seed: Vec<f64>,
    pub jacobian: Vec<f64>,
    pub newton_max: usize,
    pub ode_tol: f64,
    pub max_residual: f64,
}

fn grid(n: usize, a: f64) -> Vec<f64> {
    (0..n).map(|k| a * (2 * k as i64 - (n as i64 - 1)) as f64 / (n - 1) as f64).collect()
}

/// Solve X(t; y, ξ) = x for y by Newton from y = x.
fn invert(flow: &HamiltonianFlow, t: f64, x: f64, xi: f64) -> Result<([f64; 8], f64, usize)> {
    let mut y = x;
    for it in 1..=MAX_NEWTON {
        let s = flow.flow(y, xi, &[t])?[0];
        let r = s[0] - x;
        let jac = s[3];
        if !(jac > 0.05) {
            return Err(Error::FlowNotInvertible { t, detail: format!("dX/dy = {jac:.3e} at x = {x}, xi = {xi}") });
        }
        if r.abs() <= 1e-13 * (1.0 + x.abs()) {
            return Ok((s, y, it));
        }
        y -= r / jac;
        if !y.is_finite() || (y - x).abs() > 1e3 * (1.0 + x.abs()) {
            return Err(Error::NewtonDiverged(format!("seed ran off to {y} for x = {x}, xi = {xi}, t = {t}")));
        }
    }
    Err(Error::FlowNotInvertible { t, detail: format!("Newton needed more than {MAX_NEWTON} steps at x = {x}, xi = {xi}") })
}

pub fn build_phase(flow: &HamiltonianFlow, t_half: f64, lat: LatticeSpec) -> Result<PhaseField> {
    if lat.nt < 7 || lat.nt % 2 == 0 {
        return Err(Error::ConfigInvalid("time lattice needs an odd count >= 7 (t = 0 on the lattice)".into()));
    }
    let ts = grid(lat.nt, t_half);
    let xs = grid(lat.nx, lat.l);
    let xis = grid(lat.nxi, lat.l);
    let jobs: Vec<(usize, usize, usize)> =
        (0..lat.nt).flat_map(|k| (0..lat.nx).flat_map(move |i| (0..lat.nxi).map(move |j| (k, i, j)))).collect();
    let res: Vec<Result<([f64; 8], f64, usize)>> = jobs
        .par_iter()
        .map(|&(k, i, j)| {
            let (t, x, xi) = (ts[k], xs[i], xis[j]);
            if t == 0.0 {
                return Ok(([x, xi, x * xi, 1.0, 0.0, 0.0, 1.0, x], x, 0));
            }
            invert(flow, t, x, xi)
        })
        .collect();
    let len = jobs.len();
    let mut pf = PhaseField {
        t_half,
        lattice: lat,
        ts,
        xs,
        xis,
        phi: Vec::with_capacity(len),
        dphix: Vec::with_capacity(len),
        dphixi: Vec::with_capacity(len),
        seed: Vec::with_capacity(len),
        jacobian: Vec::with_capacity(len),
        newton_max: 0,
        ode_tol: flow.ode.rtol,
        max_residual: 0.0,
    };
    for r in res {
        let (s, y, it) = r?;
        pf.phi.push(s[2]);
        pf.dphix.push(s[1]);
        // ∂_ξ[φ(t, X, ξ)] = φ_x X_ξ + φ_ξ
        pf.dphixi.push(s[7] - s[1] * s[5]);
        pf.seed.push(y);
        pf.jacobian.push(s[3]);
        pf.newton_max = pf.newton_max.max(it);
    }
    pf.max_residual = pf.nodal_residual(flow);
    Ok(pf)
}

/// Halve T from `t0` until the flow map inverts everywhere on the lattice.
pub fn select_t(flow: &HamiltonianFlow, t0: f64, lat: LatticeSpec) -> Result<PhaseField> {
    let mut t = t0;
    for _ in 0..12 {
        match build_phase(flow, t, lat) {
            Ok(p) => return Ok(p),
            Err(Error::FlowNotInvertible { .. }) | Err(Error::NewtonDiverged(_)) => t *= 0.5,
            Err(e) => return Err(e),
        }
    }
    Err(Error::FlowNotInvertible { t, detail: "no admissible T after 12 halvings".into() })
}

impl PhaseField {
    pub fn idx(&self, k: usize, i: usize, j: usize) -> usize {
        (k * self.lattice.nx + i) * self.lattice.nxi + j
    }

    /// max |∂_tφ - q(x, d_xφ)| over interior nodes, ∂_t by 6th-order
    /// central differences on the lattice.
    pub fn nodal_residual(&self, flow: &HamiltonianFlow) -> f64 {
        let h = self.ts[1] - self.ts[0];
        let lat = self.lattice;
        let mut worst: f64 = 0.0;
        for k in 3..lat.nt - 3 {
            for i in 0..lat.nx {
                for j in 0..lat.nxi {
                    let f = |kk: usize| self.phi[self.idx(kk, i, j)];
                    let dt = (f(k + 3) - 9.0 * f(k + 2) + 45.0 * f(k + 1) - 45.0 * f(k - 1) + 9.0 * f(k - 2)
                        - f(k - 3))
                        / (60.0 * h);
                    let id = self.idx(k, i, j);
                    worst = worst.max((dt - flow.value(self.xs[i], self.dphix[id])).abs());
                }
            }
        }
        worst
    }

    /// Tensor cubic-spline interpolant: (φ, ∂_tφ, ∂_xφ) at an off-lattice point.
    pub fn interp(&self, t: f64, x: f64, xi: f64) -> (f64, f64, f64) {
        let lat = self.lattice;
        let mut g = vec![0.0; lat.nt * lat.nx];
        for k in 0..lat.nt {
            for i in 0..lat.nx {
                let line: Vec<f64> = (0..lat.nxi).map(|j| self.phi[self.idx(k, i, j)]).collect();
                g[k * lat.nx + i] = Spline::new(&self.xis, &line).eval(xi).0;
            }
        }
        let mut h = vec![0.0; lat.nt];
        let mut hx = vec![0.0; lat.nt];
        for k in 0..lat.nt {
            let sp = Spline::new(&self.xs, &g[k * lat.nx..(k + 1) * lat.nx]);
            let (v, d) = sp.eval(x);
            h[k] = v;
            hx[k] = d;
        }
        let (v, vt) = Spline::new(&self.ts, &h).eval(t);
        let (vx, _) = Spline::new(&self.ts, &hx).eval(t);
        (v, vt, vx)
    }

    /// max |∂_tφ - q(x, ∂_xφ)| of the spline interpolant at cell centres in
    /// the middle half of the lattice (at most `per_axis` per axis).
    pub fn spline_residual(&self, flow: &HamiltonianFlow, per_axis: usize) -> f64 {
        let pick = |v: &[f64]| -> Vec<f64> {
            let n = v.len();
            let (a, b) = (n / 4, 3 * n / 4);
            let cells: Vec<f64> = (a..b).map(|i| 0.5 * (v[i] + v[i + 1])).collect();
            let stride = cells.len().div_ceil(per_axis).max(1);
            cells.into_iter().step_by(stride).collect()
        };
        let (pt, px, pxi) = (pick(&self.ts), pick(&self.xs), pick(&self.xis));
        let mut pts = Vec::new();
        for &t in &pt {
            for &x in &px {
                pts.extend(pxi.iter().map(|&xi| (t, x, xi)));
            }
        }
        pts.par_iter()
            .map(|&(t, x, xi)| {
                let (_, dt, dx) = self.interp(t, x, xi);
                (dt - flow.value(x, dx)).abs()
            })
            .collect::<Vec<f64>>()
            .into_iter()
            .fold(0.0, f64::max)
    }

    pub fn csv(&self) -> String {
        let lat = self.lattice;
        let mut s = String::from("t,x,xi,phi,dphix\n");
        for k in 0..lat.nt {
            for i in 0..lat.nx {
                for j in 0..lat.nxi {
                    let id = self.idx(k, i, j);
                    s.push_str(&format!(
                        "{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}\n",
                        self.ts[k], self.xs[i], self.xis[j], self.phi[id], self.dphix[id]
                    ));
                }
            }
        }
        s
    }

    pub fn meta(&self) -> PhaseMeta {
        PhaseMeta {
            t_half: self.t_half,
            lattice: self.lattice,
            ode_tol: self.ode_tol,
            newton_max: self.newton_max,
            max_residual: self.max_residual,
            interpolation: "tensor natural cubic spline".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseMeta {
    pub t_half: f64,
    pub lattice: LatticeSpec,
    pub ode_tol: f64,
    pub newton_max: usize,
    pub max_residual: f64,
    pub interpolation: String,
}

/// Natural cubic spline on a uniform or non-uniform grid.
pub struct Spline<'a> {
    x: &'a [f64],
    y: &'a [f64],
    m: Vec<f64>,
}

impl<'a> Spline<'a> {
    pub fn new(x: &'a [f64], y: &'a [f64]) -> Spline<'a> {
        let n = x.len();
        let mut m = vec![0.0; n];
        if n > 2 {
            // Thomas algorithm for the interior second derivatives
            let mut c = vec![0.0; n];
            let mut d = vec![0.0; n];
            for i in 1..n - 1 {
                let h0 = x[i] - x[i - 1];
                let h1 = x[i + 1] - x[i];
                let a = h0 / 6.0;
                let b = (h0 + h1) / 3.0;
                let cc = h1 / 6.0;
                let r = (y[i + 1] - y[i]) / h1 - (y[i] - y[i - 1]) / h0;
                let den = b - a * c[i - 1];
                c[i] = cc / den;
                d[i] = (r - a * d[i - 1]) / den;
            }
            for i in (1..n - 1).rev() {
                m[i] = d[i] - c[i] * m[i + 1];
            }
        }
        Spline { x, y, m }
    }

    /// (value, derivative)
    pub fn eval(&self, t: f64) -> (f64, f64) {
        let x = self.x;
        let n = x.len();
        let i = x.partition_point(|&v| v <= t).clamp(1, n - 1) - 1;
        let h = x[i + 1] - x[i];
        let a = (x[i + 1] - t) / h;
        let b = (t - x[i]) / h;
        let (m0, m1) = (self.m[i], self.m[i + 1]);
        let v = a * self.y[i] + b * self.y[i + 1] + ((a * a * a - a) * m0 + (b * b * b - b) * m1) * h * h / 6.0;
        let d = (self.y[i + 1] - self.y[i]) / h + (-(3.0 * a * a - 1.0) * m0 + (3.0 * b * b - 1.0) * m1) * h / 6.0;
        (v, d)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub c_grad: f64,
    pub taylor_const: f64,
    pub xi_grad_const: f64,
    pub bounds: EllipticityBounds,
}

/// Structural constants of the phase measured on its lattice.
pub fn certify_phase(phase: &PhaseField, flow: &HamiltonianFlow, bounds: EllipticityBounds) -> Certificate {
    let lat = phase.lattice;
    let m = flow.q.order.m;
    let mut c_grad: f64 = 1.0;
    let mut taylor: f64 = 0.0;
    let mut xig: f64 = 0.0;
    for k in 0..lat.nt {
        let t = phase.ts[k];
        for i in 0..lat.nx {
            let x = phase.xs[i];
            for j in 0..lat.nxi {
                let xi = phase.xis[j];
                let id = phase.idx(k, i, j);
                let r = jb(phase.dphix[id]) / jb(xi);
                c_grad = c_grad.max(r).max(1.0 / r);
                if t != 0.0 {
                    let tq = phase.phi[id] - x * xi - t * flow.value(x, xi);
                    taylor = taylor.max(tq.abs() / (t * t * jb(x) * jb(xi).powf(2.0 * m - 1.0)));
                    xig = xig.max((phase.dphixi[id] - x).abs() / (t.abs() * jb(x)));
                }
            }
        }
    }
    Certificate { c_grad, taylor_const: taylor, xi_grad_const: xig, bounds: EllipticityBounds { c_grad, ..bounds } }
}

/// Fails if a certified quotient more than doubles under refinement.
pub fn certify_refinement(coarse: &Certificate, fine: &Certificate) -> Result<()> {
    for (name, a, b) in [
        ("C_grad", coarse.c_grad, fine.c_grad),
        ("taylor_const", coarse.taylor_const, fine.taylor_const),
        ("xi_grad_const", coarse.xi_grad_const, fine.xi_grad_const),
    ] {
        if !b.is_finite() || b > 2.0 * a.max(1e-12) {
            return Err(Error::CertificateFailed(format!("{name} grew from {a:.6e} to {b:.6e} under refinement")));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bounds() -> EllipticityBounds {
        EllipticityBounds { a: 1.0, r: 0.0, c_grad: 1.0 }
    }

    fn flow_of(a: f64, b: f64) -> HamiltonianFlow {
        HamiltonianFlow::new(SGSymbol::weight(a, b, 1), bounds()).unwrap()
    }

    #[test]
    fn free_flow_is_exact() {
        let f = flow_of(0.0, 0.5);
        let small = LatticeSpec { nt: 7, nx: 9, nxi: 9, l: 4.0 };
        let p = build_phase(&f, 0.1, small).unwrap();
        for k in 0..7 {
            for i in 0..9 {
                for j in 0..9 {
                    let (t, x, xi) = (p.ts[k], p.xs[i], p.xis[j]);
                    let id = p.idx(k, i, j);
                    assert!((p.phi[id] - (x * xi + t * jb(xi).sqrt())).abs() < 1e-11);
                    // ∇_ξφ - x = t q'(ξ)
                    let dq = xi / (2.0 * jb(xi).powf(1.5));
                    assert!((p.dphixi[id] - x - t * dq).abs() < 1e-11);
                }
            }
        }
    }

    #[test]
    fn position_only_hamiltonian() {
        let f = flow_of(1.0, 0.0);
        let p = build_phase(&f, 0.05, LatticeSpec { nt: 7, nx: 17, nxi: 9, l: 8.0 }).unwrap();
        let mut worst: f64 = 0.0;
        for k in 0..7 {
            for i in 0..17 {
                for j in 0..9 {
                    let id = p.idx(k, i, j);
                    worst = worst.max((p.phi[id] - (p.xs[i] * p.xis[j] + p.ts[k] * jb(p.xs[i]))).abs());
                }
            }
        }
        assert!(worst < 1e-10, "{worst}");
        let c = certify_phase(&p, &f, bounds());
        assert!(c.c_grad <= 1.06, "{}", c.c_grad);
        assert!(c.taylor_const < 1e-6, "{}", c.taylor_const);
    }

    #[test]
    fn model_trajectory_conserves_hamiltonian() {
        let f = flow_of(1.0, 0.5);
        let tr = characteristics(&f, 1.0, 2.0, 0.05, 64).unwrap();
        assert!(tr.hamiltonian_drift <= 1e-10);
        assert!(characteristics(&f, 1.0, 2.0, 0.05, 10).is_err());
    }

    #[test]
    fn group_property() {
        let f = flow_of(1.0, 0.5);
        let mut seed = 7u64;
        let mut rnd = || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((seed >> 11) as f64 / (1u64 << 53) as f64) * 16.0 - 8.0
        };
        for _ in 0..20 {
            let (y, xi) = (rnd(), rnd());
            let half = f.flow(y, xi, &[0.1]).unwrap()[0];
            let twice = f.flow(half[0], half[1], &[0.1]).unwrap()[0];
            let once = f.flow(y, xi, &[0.2]).unwrap()[0];
            assert!((twice[0] - once[0]).abs() < 1e-10 && (twice[1] - once[1]).abs() < 1e-10);
        }
    }

    #[test]
    fn spline_reproduces_cubics_in_the_interior() {
        let x: Vec<f64> = (0..21).map(|i| i as f64 * 0.1).collect();
        let y: Vec<f64> = x.iter().map(|v| v.sin()).collect();
        let s = Spline::new(&x, &y);
        let (v, d) = s.eval(1.05);
        assert!((v - 1.05f64.sin()).abs() < 1e-5 && (d - 1.05f64.cos()).abs() < 1e-4);
    }
}

#[cfg(test)]
mod shipped {
    use super::*;

    #[test]
    fn model_phase_on_shipped_lattice() {
        let f = HamiltonianFlow::new(SGSymbol::weight(1.0, 0.5, 1), EllipticityBounds { a: 1.0, r: 0.0, c_grad: 1.0 }).unwrap();
        let p = select_t(&f, 0.2, LatticeSpec::SHIPPED).unwrap();
        assert!(p.max_residual <= 1e-7, "{}", p.max_residual);
        let c = certify_phase(&p, &f, f.bounds);
        assert!(c.c_grad <= 2.0);
        let r = build_phase(&f, p.t_half, LatticeSpec::SHIPPED.refined()).unwrap();
        assert!(r.max_residual < p.max_residual);
        assert!(r.spline_residual(&f, 6) < 0.25 * p.spline_residual(&f, 6));
        certify_refinement(&c, &certify_phase(&r, &f, f.bounds)).unwrap();
    }
}
