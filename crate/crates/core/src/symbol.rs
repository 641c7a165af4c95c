//! SG symbols with double order (m, mu), their principal triples and
//! empirical symbol estimates on dyadic probe grids.

use crate::error::{Error, Result};
use crate::real::{Jet, JetSpace, Real};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderPair {
    /// order in xi
    pub m: f64,
    /// order in x
    pub mu: f64,
    pub n: usize,
}

impl OrderPair {
    pub fn new(m: f64, mu: f64, n: usize) -> Self {
        OrderPair { m, mu, n }
    }
}

/// Closed-form symbol expressions. `Jx` is ⟨x⟩, `Jxi` is ⟨ξ⟩.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Expr {
    Const { v: f64 },
    Jx,
    Jxi,
    AbsX,
    AbsXi,
    X { i: usize },
    Xi { i: usize },
    Add { a: Box<Expr>, b: Box<Expr> },
    Mul { a: Box<Expr>, b: Box<Expr> },
    Pow { a: Box<Expr>, p: f64 },
    Scale { a: Box<Expr>, c: f64 },
}

impl Expr {
    pub fn c(v: f64) -> Expr {
        Expr::Const { v }
    }
    pub fn add(a: Expr, b: Expr) -> Expr {
        Expr::Add { a: Box::new(a), b: Box::new(b) }
    }
    pub fn mul(a: Expr, b: Expr) -> Expr {
        Expr::Mul { a: Box::new(a), b: Box::new(b) }
    }
    pub fn pow(a: Expr, p: f64) -> Expr {
        if p == 1.0 {
            a
        } else {
            Expr::Pow { a: Box::new(a), p }
        }
    }
    pub fn scale(a: Expr, c: f64) -> Expr {
        Expr::Scale { a: Box::new(a), c }
    }

    pub fn eval<T: Real>(&self, x: &[T], xi: &[T]) -> T {
        let proto = &x[0];
        match self {
            Expr::Const { v } => proto.cst(*v),
            Expr::Jx => (sumsq(x) + 1.0).sqrt(),
            Expr::Jxi => (sumsq(xi) + 1.0).sqrt(),
            Expr::AbsX => norm(x),
            Expr::AbsXi => norm(xi),
            Expr::X { i } => x[*i].clone(),
            Expr::Xi { i } => xi[*i].clone(),
            Expr::Add { a, b } => a.eval(x, xi) + b.eval(x, xi),
            Expr::Mul { a, b } => a.eval(x, xi) * b.eval(x, xi),
            Expr::Pow { a, p } => pow_real(a.eval(x, xi), *p),
            Expr::Scale { a, c } => a.eval(x, xi) * *c,
        }
    }
}

fn pow_real<T: Real>(v: T, p: f64) -> T {
    if p == 2.0 {
        v.sq()
    } else if p == -1.0 {
        v.recip()
    } else {
        v.powf(p)
    }
}

fn sumsq<T: Real>(v: &[T]) -> T {
    let mut s = v[0].sq();
    for a in &v[1..] {
        s = s + a.sq();
    }
    s
}

fn norm<T: Real>(v: &[T]) -> T {
    if v.len() == 1 {
        v[0].abs()
    } else {
        sumsq(v).sqrt()
    }
}

pub type Field = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;

/// ⟨x⟩^a ⟨ξ⟩^b with its homogeneous parts.
fn weight_parts(a: f64, b: f64) -> (Expr, Expr, Expr, Expr) {
    let full = Expr::mul(Expr::pow(Expr::Jx, a), Expr::pow(Expr::Jxi, b));
    let psi = Expr::mul(Expr::pow(Expr::Jx, a), Expr::pow(Expr::AbsXi, b));
    let e = Expr::mul(Expr::pow(Expr::AbsX, a), Expr::pow(Expr::Jxi, b));
    let psie = Expr::mul(Expr::pow(Expr::AbsX, a), Expr::pow(Expr::AbsXi, b));
    (full, psi, e, psie)
}

/// A symbol together with optional closed-form principal parts.
#[derive(Clone)]
pub struct SGSymbol {
    pub id: String,
    pub order: OrderPair,
    pub expr: Option<Expr>,
    func: Option<Field>,
    pub psi: Option<Expr>,
    pub e: Option<Expr>,
    pub psie: Option<Expr>,
}

impl std::fmt::Debug for SGSymbol {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SGSymbol").field("id", &self.id).field("order", &self.order).finish()
    }
}

impl SGSymbol {
    pub fn from_expr(id: &str, expr: Expr, order: OrderPair) -> SGSymbol {
        SGSymbol { id: id.into(), order, expr: Some(expr), func: None, psi: None, e: None, psie: None }
    }

    /// A symbol known only through point values; derivatives use finite
    /// differences.
    pub fn from_fn(id: &str, f: Field, order: OrderPair) -> SGSymbol {
        SGSymbol { id: id.into(), order, expr: None, func: Some(f), psi: None, e: None, psie: None }
    }

    /// ⟨x⟩^a ⟨ξ⟩^b in dimension n, with order (b, a).
    pub fn weight(a: f64, b: f64, n: usize) -> SGSymbol {
        let (full, psi, e, psie) = weight_parts(a, b);
        SGSymbol {
            id: format!("weight({a},{b})"),
            order: OrderPair::new(b, a, n),
            expr: Some(full),
            func: None,
            psi: Some(psi),
            e: Some(e),
            psie: Some(psie),
        }
    }

    /// Registered catalog entries.
    pub fn catalog(id: &str, n: usize) -> Result<SGSymbol> {
        let s = match id {
            "model-a" => SGSymbol { id: id.into(), ..SGSymbol::weight(1.0, 2.0, n) },
            "model-b" => SGSymbol { id: id.into(), ..SGSymbol::weight(2.0, 1.0, n) },
            "q-model" => SGSymbol { id: id.into(), ..SGSymbol::weight(1.0, 0.5, n) },
            "q-model-b" => SGSymbol { id: id.into(), ..SGSymbol::weight(1.0, 0.5, n) },
            "oracle-h" => {
                let ex = Expr::add(Expr::pow(Expr::AbsXi, 2.0), Expr::pow(Expr::AbsX, 2.0));
                SGSymbol::from_expr(id, ex, OrderPair::new(2.0, 2.0, n))
            }
            "anisotropic" => {
                let ex = Expr::mul(Expr::Jx, Expr::add(Expr::c(1.0), Expr::scale(Expr::pow(Expr::AbsXi, 2.0), 2.0)));
                SGSymbol::from_expr(id, ex, OrderPair::new(2.0, 1.0, n))
            }
            "xi-squared" => SGSymbol::from_expr(id, Expr::pow(Expr::AbsXi, 2.0), OrderPair::new(2.0, 1.0, n)),
            "constant" => SGSymbol::from_expr(id, Expr::c(1.0), OrderPair::new(0.0, 0.0, n)),
            "b-plus-lower" => {
                let ex = Expr::add(Expr::mul(Expr::pow(Expr::Jx, 2.0), Expr::Jxi), Expr::Jx);
                SGSymbol::from_expr(id, ex, OrderPair::new(1.0, 2.0, n))
            }
            _ => return Err(Error::ConfigInvalid(format!("unknown symbol id {id}"))),
        };
        Ok(s)
    }

    pub fn n(&self) -> usize {
        self.order.n
    }

    pub fn value(&self, x: &[f64], xi: &[f64]) -> f64 {
        match (&self.expr, &self.func) {
            (Some(e), _) => e.eval(x, xi),
            (None, Some(f)) => f(x, xi),
            _ => unreachable!("symbol without evaluator"),
        }
    }

    pub fn has_analytic_derivatives(&self) -> bool {
        self.expr.is_some()
    }

    pub fn field(&self) -> Field {
        let s = self.clone();
        Arc::new(move |x: &[f64], xi: &[f64]| s.value(x, xi))
    }

    /// Generic evaluation (jets, duals); requires a closed form.
    pub fn eval_real<T: Real>(&self, x: &[T], xi: &[T]) -> T {
        self.expr.as_ref().expect("closed form required for generic evaluation").eval(x, xi)
    }

    /// `D_x^bx D_ξ^bxi p` at (x, ξ).
    pub fn partial(&self, x: &[f64], xi: &[f64], bx: &[u8], bxi: &[u8]) -> Result<f64> {
        let n = x.len();
        let ord: usize = bx.iter().chain(bxi).map(|&k| k as usize).sum();
        if ord == 0 {
            return Ok(self.value(x, xi));
        }
        if let Some(e) = &self.expr {
            let sp = JetSpace::new(2 * n, ord);
            let jx: Vec<Jet> = (0..n).map(|i| Jet::var(&sp, i, x[i])).collect();
            let jxi: Vec<Jet> = (0..n).map(|i| Jet::var(&sp, n + i, xi[i])).collect();
            let v = e.eval(&jx, &jxi);
            let mut ex: Vec<u8> = bx.to_vec();
            ex.extend_from_slice(bxi);
            return Ok(v.partial(&ex));
        }
        let d1 = fd_partial(&|a: &[f64], b: &[f64]| self.value(a, b), x, xi, bx, bxi, 1.0);
        let d2 = fd_partial(&|a: &[f64], b: &[f64]| self.value(a, b), x, xi, bx, bxi, 2.0);
        let scale = d1.abs().max(d2.abs());
        let rel = if scale > 0.0 { (d1 - d2).abs() / scale } else { 0.0 };
        // absolute floor for derivatives that vanish
        let floor = 1e-6 * self.value(x, xi).abs().max(1.0);
        if rel > 1e-3 && (d1 - d2).abs() > floor {
            return Err(Error::DerivativeUnstable { what: format!("x={x:?} xi={xi:?} bx={bx:?} bxi={bxi:?}"), rel });
        }
        Ok(d1)
    }
}

/// Fourth-order central differences, step 1e-4 (1 + |coordinate|) times `mult`.
fn fd_partial(
    f: &dyn Fn(&[f64], &[f64]) -> f64,
    x: &[f64],
    xi: &[f64],
    bx: &[u8],
    bxi: &[u8],
    mult: f64,
) -> f64 {
    let n = x.len();
    let mut z: Vec<f64> = x.iter().chain(xi).copied().collect();
    let orders: Vec<u8> = bx.iter().chain(bxi).copied().collect();
    fn rec(
        f: &dyn Fn(&[f64], &[f64]) -> f64,
        z: &mut Vec<f64>,
        orders: &[u8],
        var: usize,
        n: usize,
        mult: f64,
    ) -> f64 {
        if var == orders.len() {
            return f(&z[..n], &z[n..]);
        }
        let k = orders[var];
        if k == 0 {
            return rec(f, z, orders, var + 1, n, mult);
        }
        let z0 = z[var];
        let h = 1e-4 * (1.0 + z0.abs()) * mult * if k >= 2 { 10.0 } else { 1.0 };
        let at = |d: f64, z: &mut Vec<f64>| {
            z[var] = z0 + d;
            let mut sub = orders.to_vec();
            sub[var] = k - 1;
            let v = if k == 1 {
                rec(f, z, &{
                    let mut o = orders.to_vec();
                    o[var] = 0;
                    o
                }, var + 1, n, mult)
            } else {
                rec(f, z, &sub, var, n, mult)
            };
            z[var] = z0;
            v
        };
        // first difference of the (k-1)-th derivative
        (-at(2.0 * h, z) + 8.0 * at(h, z) - 8.0 * at(-h, z) + at(-2.0 * h, z)) / (12.0 * h)
    }
    rec(f, &mut z, &orders, 0, n, mult)
}

/// Dyadic probe grid: radii {0, 1, 2, 4, .., 2^kmax} times unit directions.
#[derive(Clone, Debug)]
pub struct ProbeGrid {
    pub radii: Vec<f64>,
    pub dirs: Vec<Vec<f64>>,
}

impl ProbeGrid {
    pub fn dyadic(n: usize, kmax: u32, ndir: usize) -> ProbeGrid {
        let mut radii = vec![0.0];
        radii.extend((0..=kmax).map(|k| 2f64.powi(k as i32)));
        ProbeGrid { radii, dirs: unit_dirs(n, ndir) }
    }

    pub fn standard(n: usize) -> ProbeGrid {
        ProbeGrid::dyadic(n, 10, 32)
    }

    pub fn points(&self) -> Vec<Vec<f64>> {
        let mut out = Vec::new();
        for &r in &self.radii {
            if r == 0.0 {
                out.push(vec![0.0; self.dirs[0].len()]);
                continue;
            }
            for d in &self.dirs {
                out.push(d.iter().map(|c| c * r).collect());
            }
        }
        out
    }
}

pub fn unit_dirs(n: usize, ndir: usize) -> Vec<Vec<f64>> {
    match n {
        1 => vec![vec![1.0], vec![-1.0]],
        2 => (0..ndir)
            .map(|k| {
                let a = 2.0 * std::f64::consts::PI * (k as f64 + 0.5) / ndir as f64;
                vec![a.cos(), a.sin()]
            })
            .collect(),
        _ => panic!("probe directions implemented for n <= 2"),
    }
}

fn jb(v: &[f64]) -> f64 {
    (1.0 + v.iter().map(|a| a * a).sum::<f64>()).sqrt()
}

#[derive(Clone, Debug, Serialize)]
pub struct OrderEstimate {
    pub order: OrderPair,
    /// (|alpha|, |beta|, max quotient) with alpha on xi and beta on x
    pub constants: Vec<(usize, usize, f64)>,
}

impl OrderEstimate {
    pub fn c(&self, a: usize, b: usize) -> f64 {
        self.constants.iter().find(|c| c.0 == a && c.1 == b).map_or(f64::NAN, |c| c.2)
    }
}

fn multi_indices(n: usize, total: usize) -> Vec<Vec<u8>> {
    let mut out = Vec::new();
    if n == 1 {
        out.push(vec![total as u8]);
    } else {
        for k in 0..=total {
            out.push(vec![k as u8, (total - k) as u8]);
        }
    }
    out
}

/// Smallest orders whose weights bound all sampled derivatives with
/// |alpha|, |beta| <= 2, plus the resulting constant table.
pub fn estimate_order(sym: &SGSymbol, grid: &ProbeGrid) -> Result<OrderEstimate> {
    let n = sym.n();
    let shells: Vec<f64> = grid.radii.iter().copied().filter(|&r| r >= 1.0).collect();
    let top = shells.len();
    let mut mhat = f64::NEG_INFINITY;
    let mut muhat = f64::NEG_INFINITY;
    let fixed: Vec<Vec<f64>> = grid.points().into_iter().step_by(grid.dirs.len().max(1) / 2).collect();
    for la in 0..=2usize {
        for lb in 0..=2usize {
            for a in multi_indices(n, la) {
                for b in multi_indices(n, lb) {
                    for d in &grid.dirs {
                        for other in &fixed {
                            // growth in xi with x fixed
                            let vals: Vec<f64> = shells
                                .iter()
                                .map(|&r| {
                                    let xi: Vec<f64> = d.iter().map(|c| c * r).collect();
                                    sym.partial(other, &xi, &b, &a).map(f64::abs)
                                })
                                .collect::<Result<_>>()?;
                            if let Some(s) = top_slope(&shells, &vals) {
                                mhat = mhat.max(s + la as f64);
                            }
                            let vals: Vec<f64> = shells
                                .iter()
                                .map(|&r| {
                                    let x: Vec<f64> = d.iter().map(|c| c * r).collect();
                                    sym.partial(&x, other, &b, &a).map(f64::abs)
                                })
                                .collect::<Result<_>>()?;
                            if let Some(s) = top_slope(&shells, &vals) {
                                muhat = muhat.max(s + lb as f64);
                            }
                        }
                    }
                }
            }
        }
    }
    let _ = top;
    let snap = |v: f64| if v.is_finite() { (v * 100.0).round() / 100.0 } else { 0.0 };
    let order = OrderPair::new(snap(mhat), snap(muhat), n);
    let pts = grid.points();
    let mut constants = Vec::new();
    for la in 0..=2usize {
        for lb in 0..=2usize {
            let mut cmax: f64 = 0.0;
            for a in multi_indices(n, la) {
                for b in multi_indices(n, lb) {
                    for x in &pts {
                        for xi in &pts {
                            let d = sym.partial(x, xi, &b, &a)?.abs();
                            let w = jb(xi).powf(order.m - la as f64) * jb(x).powf(order.mu - lb as f64);
                            cmax = cmax.max(d / w);
                        }
                    }
                }
            }
            constants.push((la, lb, cmax));
        }
    }
    Ok(OrderEstimate { order, constants })
}

/// Growth exponent d log|v| / d log⟨r⟩ over the last three shells; `None`
/// if the derivative vanishes there.
fn top_slope(r: &[f64], v: &[f64]) -> Option<f64> {
    let k = r.len();
    let mut best: Option<f64> = None;
    for i in k.saturating_sub(3)..k - 1 {
        let (a, b) = (v[i], v[i + 1]);
        let scale = v.iter().fold(0.0f64, |m, &x| m.max(x));
        if a <= 1e-12 * scale.max(1e-300) || b <= 1e-12 * scale.max(1e-300) {
            continue;
        }
        let s = (b / a).ln() / ((1.0 + r[i + 1] * r[i + 1]).sqrt() / (1.0 + r[i] * r[i]).sqrt()).ln();
        best = Some(best.map_or(s, |x: f64| x.max(s)));
    }
    best
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EllipticityBounds {
    pub a: f64,
    pub r: f64,
    pub c_grad: f64,
}

/// Two-sided comparability constant A of q against ⟨x⟩^mu ⟨ξ⟩^m.
pub fn check_ellipticity(sym: &SGSymbol, order: OrderPair, grid: &ProbeGrid) -> Result<EllipticityBounds> {
    let shells: Vec<f64> = grid.radii.clone();
    let mut a: f64 = 1.0;
    let mut radius: f64 = 0.0;
    let ratio = |x: &[f64], xi: &[f64]| -> (f64, f64) {
        let q = sym.value(x, xi);
        let w = jb(x).powf(order.mu) * jb(xi).powf(order.m);
        (q / w, w / q)
    };
    for d in &grid.dirs {
        for &rf in &shells {
            let other: Vec<f64> = d.iter().map(|c| c * rf).collect();
            // sweep x shells at fixed xi and xi shells at fixed x
            for sweep_x in [true, false] {
                let mut seq_up = Vec::new();
                let mut seq_dn = Vec::new();
                for &r in &shells {
                    let v: Vec<f64> = d.iter().map(|c| c * r).collect();
                    let (x, xi) = if sweep_x { (&v, &other) } else { (&other, &v) };
                    let q = sym.value(x, xi);
                    if q <= 0.0 || !q.is_finite() {
                        return Err(Error::NotElliptic(format!("q = {q} at x={x:?}, xi={xi:?}")));
                    }
                    let (up, dn) = ratio(x, xi);
                    a = a.max(up).max(dn);
                    if up.max(dn) > 1e8 {
                        radius = radius.max(jb(x).max(jb(xi)));
                    }
                    seq_up.push(up);
                    seq_dn.push(dn);
                }
                for seq in [&seq_up, &seq_dn] {
                    let k = seq.len();
                    if k >= 3 && seq[k - 2] > 1.5 * seq[k - 3] && seq[k - 1] > 1.5 * seq[k - 2] {
                        return Err(Error::NotElliptic(format!(
                            "ratio grows along {} shells: {:.3e} -> {:.3e} -> {:.3e}",
                            if sweep_x { "x" } else { "xi" },
                            seq[k - 3],
                            seq[k - 2],
                            seq[k - 1]
                        )));
                    }
                }
            }
        }
    }
    Ok(EllipticityBounds { a, r: radius, c_grad: 1.0 })
}

/// A callable homogeneous component with its declared degrees
/// (degree in xi, degree in x).
#[derive(Clone)]
pub struct Component {
    pub f: Field,
    pub deg_xi: f64,
    pub deg_x: f64,
}

impl Component {
    pub fn from_expr(e: Expr, deg_xi: f64, deg_x: f64) -> Component {
        Component { f: Arc::new(move |x: &[f64], xi: &[f64]| e.eval(x, xi)), deg_xi, deg_x }
    }
}

/// Leading homogeneous components: `psi` (degree m in xi), `e` (degree mu in x).
#[derive(Clone)]
pub struct ClassicalSpec {
    pub order: OrderPair,
    pub psi: Field,
    pub e: Field,
}

impl ClassicalSpec {
    /// Components of a symbol: closed forms if registered, else ray limits.
    pub fn from_symbol(sym: &SGSymbol) -> ClassicalSpec {
        let order = sym.order;
        let psi: Field = match &sym.psi {
            Some(e) => {
                let e = e.clone();
                Arc::new(move |x: &[f64], xi: &[f64]| e.eval(x, xi))
            }
            None => {
                let f = sym.field();
                Arc::new(move |x: &[f64], xi: &[f64]| {
                    ray_limit(&|s: f64| {
                        let v: Vec<f64> = xi.iter().map(|c| c * s).collect();
                        f(x, &v) / s.powf(order.m)
                    })
                })
            }
        };
        let e: Field = match &sym.e {
            Some(e) => {
                let e = e.clone();
                Arc::new(move |x: &[f64], xi: &[f64]| e.eval(x, xi))
            }
            None => {
                let f = sym.field();
                Arc::new(move |x: &[f64], xi: &[f64]| {
                    ray_limit(&|s: f64| {
                        let v: Vec<f64> = x.iter().map(|c| c * s).collect();
                        f(&v, xi) / s.powf(order.mu)
                    })
                })
            }
        };
        ClassicalSpec { order, psi, e }
    }
}

/// lim_{s→∞} g(s) for g(s) = L + a/s + b/s^2 + ..., by two Richardson
/// steps at s = 1e4, 2e4, 4e4.
pub fn ray_limit(g: &dyn Fn(f64) -> f64) -> f64 {
    let s = 1e4;
    let (f1, f2, f4) = (g(s), g(2.0 * s), g(4.0 * s));
    let r1 = 2.0 * f2 - f1;
    let r2 = 2.0 * f4 - f2;
    (4.0 * r2 - r1) / 3.0
}

/// (p_ψ, p_e, p_ψe) with the degrees they carry.
#[derive(Clone)]
pub struct PrincipalTriple {
    pub order: OrderPair,
    pub psi: Field,
    pub e: Field,
    pub psie: Field,
}

impl std::fmt::Debug for PrincipalTriple {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PrincipalTriple").field("order", &self.order).finish()
    }
}

/// Sample points with x ≠ 0 and ξ ≠ 0 for the compatibility check.
fn corner_samples(n: usize) -> Vec<(Vec<f64>, Vec<f64>)> {
    let dirs = unit_dirs(n, 8);
    let radii = [0.5, 1.0, 3.0, 10.0];
    let mut out = Vec::new();
    for (i, dx) in dirs.iter().enumerate() {
        for (j, dxi) in dirs.iter().enumerate() {
            let rx = radii[(i + j) % radii.len()];
            let rxi = radii[(i + 2 * j + 1) % radii.len()];
            out.push((dx.iter().map(|c| c * rx).collect(), dxi.iter().map(|c| c * rxi).collect()));
        }
    }
    out
}

/// Build the triple, computing p_ψe as the exit limit of p_ψ and as the
/// ξ-limit of p_e; both routes must agree to relative 1e-8.
pub fn principal_triple(spec: &ClassicalSpec) -> Result<PrincipalTriple> {
    let order = spec.order;
    let psi = spec.psi.clone();
    let e = spec.e.clone();
    let via_psi = {
        let psi = psi.clone();
        move |x: &[f64], xi: &[f64]| {
            ray_limit(&|s: f64| {
                let v: Vec<f64> = x.iter().map(|c| c * s).collect();
                psi(&v, xi) / s.powf(order.mu)
            })
        }
    };
    let via_e = {
        let e = e.clone();
        move |x: &[f64], xi: &[f64]| {
            ray_limit(&|s: f64| {
                let v: Vec<f64> = xi.iter().map(|c| c * s).collect();
                e(x, &v) / s.powf(order.m)
            })
        }
    };
    for (x, xi) in corner_samples(order.n) {
        let a = via_psi(&x, &xi);
        let b = via_e(&x, &xi);
        let rel = (a - b).abs() / a.abs().max(b.abs()).max(1e-300);
        if rel > 1e-8 || !rel.is_finite() {
            return Err(Error::CompatibilityViolation(format!(
                "sigma_e(sigma_psi) = {a:.12e} but sigma_psi(sigma_e) = {b:.12e} at x={x:?}, xi={xi:?}"
            )));
        }
    }
    Ok(PrincipalTriple { order, psi, e, psie: Arc::new(via_psi) })
}

/// Componentwise s-th power; degrees scale by s.
pub fn power_triple(t: &PrincipalTriple, s: f64) -> Result<PrincipalTriple> {
    let n = t.order.n;
    for (x, xi) in corner_samples(n) {
        for (name, f) in [("psi", &t.psi), ("e", &t.e), ("psie", &t.psie)] {
            let v = f(&x, &xi);
            if v <= 0.0 || !v.is_finite() {
                return Err(Error::NonPositiveComponent {
                    component: name.into(),
                    at: format!("x={x:?}, xi={xi:?}"),
                });
            }
        }
    }
    let pw = |f: &Field| -> Field {
        let f = f.clone();
        Arc::new(move |x: &[f64], xi: &[f64]| f(x, xi).powf(s))
    };
    Ok(PrincipalTriple {
        order: OrderPair::new(t.order.m * s, t.order.mu * s, n),
        psi: pw(&t.psi),
        e: pw(&t.e),
        psie: pw(&t.psie),
    })
}

/// max relative deviation from psi(x, sξ) = s^m psi(x, ξ) and the analogues
/// for e and psie over the given samples.
pub fn homogeneity_defect(t: &PrincipalTriple, s: f64, samples: &[(Vec<f64>, Vec<f64>)]) -> f64 {
    let (m, mu) = (t.order.m, t.order.mu);
    let mut worst: f64 = 0.0;
    for (x, xi) in samples {
        let sx: Vec<f64> = x.iter().map(|c| c * s).collect();
        let sxi: Vec<f64> = xi.iter().map(|c| c * s).collect();
        let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1e-300);
        worst = worst.max(rel((t.psi)(x, &sxi), s.powf(m) * (t.psi)(x, xi)));
        worst = worst.max(rel((t.e)(&sx, xi), s.powf(mu) * (t.e)(x, xi)));
        worst = worst.max(rel((t.psie)(&sx, &sxi), s.powf(m + mu) * (t.psie)(x, xi)));
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_grid() -> ProbeGrid {
        ProbeGrid::dyadic(1, 10, 2)
    }

    #[test]
    fn order_of_model_a() {
        let s = SGSymbol::catalog("model-a", 1).unwrap();
        let est = estimate_order(&s, &small_grid()).unwrap();
        assert_eq!((est.order.m, est.order.mu), (2.0, 1.0));
        assert!((est.c(0, 0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn order_of_constant() {
        let s = SGSymbol::catalog("constant", 1).unwrap();
        let est = estimate_order(&s, &small_grid()).unwrap();
        assert_eq!((est.order.m, est.order.mu), (0.0, 0.0));
    }

    #[test]
    fn order_with_lower_term() {
        let s = SGSymbol::catalog("b-plus-lower", 1).unwrap();
        let est = estimate_order(&s, &small_grid()).unwrap();
        assert_eq!((est.order.m, est.order.mu), (1.0, 2.0));
        // oracle: max over the grid of (⟨x⟩²⟨ξ⟩ + ⟨x⟩)/(⟨x⟩²⟨ξ⟩) = 1 + 1/(⟨x⟩⟨ξ⟩) <= 2
        let c = est.c(0, 0);
        assert!(c <= 2.0 + 1e-12 && c > 1.9, "{c}");
    }

    #[test]
    fn finite_differences_match_jets() {
        let s = SGSymbol::catalog("q-model", 1).unwrap();
        let f = SGSymbol::from_fn("q-fd", s.field(), s.order);
        for &(x, xi) in &[(0.3, 2.0), (-3.0, 0.7), (10.0, -5.0)] {
            for (bx, bxi) in [([1u8], [0u8]), ([0], [1]), ([1], [1]), ([0], [2]), ([2], [0])] {
                let a = s.partial(&[x], &[xi], &bx, &bxi).unwrap();
                let b = f.partial(&[x], &[xi], &bx, &bxi).unwrap();
                assert!((a - b).abs() <= 1e-6 * a.abs().max(1.0), "{bx:?}{bxi:?}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn ellipticity_examples() {
        let g = ProbeGrid::standard(1);
        let a = check_ellipticity(&SGSymbol::catalog("model-a", 1).unwrap(), OrderPair::new(2.0, 1.0, 1), &g).unwrap();
        assert!((a.a - 1.0).abs() < 1e-12);
        let b = check_ellipticity(&SGSymbol::catalog("anisotropic", 1).unwrap(), OrderPair::new(2.0, 1.0, 1), &g)
            .unwrap();
        // sup (1 + 2ξ²)/(1 + ξ²) = 2, approached at the outer shell
        assert!((b.a - 2.0).abs() < 1e-5, "{}", b.a);
        let c = check_ellipticity(&SGSymbol::catalog("xi-squared", 1).unwrap(), OrderPair::new(2.0, 1.0, 1), &g);
        assert!(matches!(c, Err(Error::NotElliptic(_))));
    }

    #[test]
    fn triple_of_model_a_by_ray_limits() {
        let s = SGSymbol::catalog("model-a", 1).unwrap();
        let spec = ClassicalSpec::from_symbol(&SGSymbol::from_fn("a", s.field(), s.order));
        let t = principal_triple(&spec).unwrap();
        for &(x, xi) in &[(0.5, 2.0), (3.0, -1.0), (-7.0, 0.25)] {
            let jx = (1.0f64 + x * x).sqrt();
            assert!(((t.psi)(&[x], &[xi]) - jx * xi * xi).abs() < 1e-6 * jx * xi * xi);
            let e = x.abs() * (1.0 + xi * xi);
            assert!(((t.e)(&[x], &[xi]) - e).abs() < 1e-6 * e);
            let c = x.abs() * xi * xi;
            assert!(((t.psie)(&[x], &[xi]) - c).abs() < 1e-8 * c);
        }
    }

    #[test]
    fn inconsistent_components_rejected() {
        let (_, psi_a, _, _) = weight_parts(1.0, 2.0);
        let (_, _, e_b, _) = weight_parts(2.0, 1.0);
        let spec = ClassicalSpec {
            order: OrderPair::new(2.0, 1.0, 1),
            psi: Component::from_expr(psi_a, 2.0, 1.0).f,
            e: Component::from_expr(e_b, 1.0, 2.0).f,
        };
        assert!(matches!(principal_triple(&spec), Err(Error::CompatibilityViolation(_))));
    }

    #[test]
    fn power_triple_scales_degrees() {
        let s = SGSymbol::catalog("model-a", 1).unwrap();
        let t = principal_triple(&ClassicalSpec::from_symbol(&s)).unwrap();
        let h = power_triple(&t, 0.5).unwrap();
        assert_eq!((h.order.m, h.order.mu), (1.0, 0.5));
        let v = (h.psi)(&[2.0], &[3.0]);
        assert!((v - 5f64.powf(0.25) * 3.0).abs() < 1e-12);
        let id = power_triple(&t, 1.0).unwrap();
        assert_eq!((id.psi)(&[2.0], &[3.0]), (t.psi)(&[2.0], &[3.0]));
    }
}
