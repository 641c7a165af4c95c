//! Model operators, their Hermite-Galerkin matrices, dense eigen-sweeps and
//! the counting-function fits built on them.

use crate::constants::WeylPrediction;
use crate::error::{Error, Result};
use crate::ode::{dopri5, OdeOpts};
use crate::quad::HermiteTable;
use crate::symbol::{principal_triple, ClassicalSpec, OrderPair, PrincipalTriple, SGSymbol};
use faer::dyn_stack::{MemBuffer, MemStack};
use faer::linalg::matmul::matmul;
use faer::{Accum, Mat, MatRef, Par};
use serde::{Deserialize, Serialize};
use std::io::Write;

/// Scale of the Hermite basis in the mapped variable s.
const SIGMA: f64 = std::f64::consts::SQRT_2;
/// Stretch parameter c of the pencil map Y(s) = s sqrt(1 + s²/c).
const STRETCH: f64 = 16.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Route {
    /// Hermite functions in x; multiplication operators by Gauss-Hermite,
    /// functions of D through the Fourier eigen-relation.
    Hermite,
    /// Hermite functions in a stretched variable adapted to the SG growth.
    Mapped,
}

#[derive(Clone, Debug)]
pub struct ModelOperator {
    pub id: String,
    pub order: OrderPair,
    pub route: Route,
    /// Additive shift c, P + c; zero for the shipped catalog.
    pub shift: f64,
    /// Every eigenvalue is at least this (before the shift).
    pub lower_bound: f64,
}

/// Canonical model id for user-facing spellings ("A", "model-a", "oracle-H", ...).
pub fn canonical_model(id: &str) -> Result<&'static str> {
    match id.to_ascii_lowercase().as_str() {
        "a" | "model-a" | "model_a" => Ok("model-a"),
        "b" | "model-b" | "model_b" => Ok("model-b"),
        "h" | "oracle-h" | "oracle_h" | "oracle" => Ok("oracle-h"),
        _ => Err(Error::ConfigInvalid(format!("unknown model {id}"))),
    }
}

impl ModelOperator {
    pub fn catalog(id: &str, route: Route) -> Result<ModelOperator> {
        let id = canonical_model(id)?;
        let order = match id {
            "model-a" => OrderPair::new(2.0, 1.0, 1),
            "model-b" => OrderPair::new(1.0, 2.0, 1),
            _ => OrderPair::new(2.0, 2.0, 1),
        };
        let route = if id == "oracle-h" { Route::Hermite } else { route };
        Ok(ModelOperator { id: id.into(), order, route, shift: 0.0, lower_bound: 1.0 })
    }

    /// Shipping discretization: mapped for the SG models.
    pub fn shipped(id: &str) -> Result<ModelOperator> {
        ModelOperator::catalog(id, Route::Mapped)
    }

    pub fn symbol(&self) -> SGSymbol {
        SGSymbol::catalog(&self.id, self.order.n).expect("catalog model has a symbol")
    }

    pub fn triple(&self) -> Result<PrincipalTriple> {
        principal_triple(&ClassicalSpec::from_symbol(&self.symbol()))
    }

    pub fn nodes_for(&self, n: usize) -> usize {
        2 * n + 32
    }
}

/// Symmetric matrix, or a symmetric-definite pencil K v = η M v.
#[derive(Clone, Debug)]
pub struct Galerkin {
    pub stiffness: Mat<f64>,
    pub mass: Option<Mat<f64>>,
    pub nodes: usize,
    /// max |K - K^T| / max |K| before symmetrization
    pub asymmetry: f64,
    /// Largest relative change of sampled entries under 1.5x nodes.
    pub resolution_delta: f64,
}

/// One quadrature contribution L^T R, with the weights folded into L.
struct Term {
    l: Mat<f64>,
    r: Mat<f64>,
}

enum Part {
    Stiff,
    Mass,
}

fn jb(x: f64) -> f64 {
    (1.0 + x * x).sqrt()
}

/// d²/dx² kinetic part -u'' in the orthonormal Hermite basis (exact).
fn kinetic(n: usize, scale: f64) -> Mat<f64> {
    let mut t = Mat::<f64>::zeros(n, n);
    for k in 0..n {
        t[(k, k)] = scale * (2 * k + 1) as f64 / 2.0;
        if k + 2 < n {
            let v = -scale * (((k + 1) * (k + 2)) as f64).sqrt() / 2.0;
            t[(k, k + 2)] = v;
            t[(k + 2, k)] = v;
        }
    }
    t
}

fn table_mat(tab: &HermiteTable, deriv: bool, w: &[f64]) -> Mat<f64> {
    let n = tab.nbasis;
    let src = if deriv { &tab.dphi } else { &tab.phi };
    Mat::from_fn(tab.nq(), n, |q, j| w[q] * src[q * n + j])
}

/// X(s) solving dX/ds = ⟨X⟩^{1/2}, X(0) = 0, so that s = ∫_0^X ⟨y⟩^{-1/2}.
pub fn liouville_x(s: &[f64]) -> Result<Vec<f64>> {
    let mut pos: Vec<(usize, f64)> = s.iter().copied().enumerate().filter(|p| p.1 > 0.0).collect();
    pos.sort_by(|a, b| a.1.total_cmp(&b.1));
    let mut neg: Vec<(usize, f64)> = s.iter().copied().enumerate().filter(|p| p.1 < 0.0).collect();
    neg.sort_by(|a, b| b.1.total_cmp(&a.1));
    let mut out = vec![0.0; s.len()];
    let opts = OdeOpts { rtol: 1e-14, atol: 1e-14, ..OdeOpts::default() };
    for side in [pos, neg] {
        let touts: Vec<f64> = side.iter().map(|p| p.1).collect();
        let (ys, _) = dopri5(|_, y: &[f64; 1]| [jb(y[0]).sqrt()], 0.0, [0.0], &touts, opts)?;
        for ((i, _), y) in side.iter().zip(ys) {
            out[*i] = y[0];
        }
    }
    Ok(out)
}

/// Potential of the Liouville-transformed model A, -d²/ds² + V(s).
fn liouville_potential(x: f64) -> f64 {
    let j = jb(x);
    let j3 = j * j * j;
    j + x * x / (16.0 * j3) - (1.0 - x * x / 2.0) / (4.0 * j3)
}

/// Quadrature terms of the requested part. Returns (terms, analytic part).
fn terms(model: &ModelOperator, tab: &HermiteTable, part: &Part) -> Result<(Vec<Term>, Option<Mat<f64>>)> {
    let n = tab.nbasis;
    let x = &tab.nodes;
    let one = vec![1.0; x.len()];
    let phi = table_mat(tab, false, &one);
    let out = match (model.id.as_str(), model.route, part) {
        ("oracle-h", _, Part::Stiff) => {
            let w: Vec<f64> = x.iter().map(|v| v * v).collect();
            (vec![Term { l: table_mat(tab, false, &w), r: phi }], Some(kinetic(n, 1.0)))
        }
        ("model-a", Route::Hermite, Part::Stiff) => {
            // A = R1^T R1 + R0^T R0 with f = ⟨x⟩^{1/2}: R1 = (f u)', R0 = f u
            let f: Vec<f64> = x.iter().map(|&v| jb(v).sqrt()).collect();
            let fp: Vec<f64> = x.iter().map(|&v| v / (2.0 * jb(v).powf(1.5))).collect();
            let dphi = table_mat(tab, true, &f);
            let r1 = table_mat(tab, false, &fp) + dphi;
            let r0 = table_mat(tab, false, &f);
            (vec![Term { l: r1.clone(), r: r1 }, Term { l: r0.clone(), r: r0 }], None)
        }
        ("model-b", Route::Hermite, Part::Stiff) => {
            // factor M_⟨x⟩; the sandwich is composed by the caller
            let w: Vec<f64> = x.iter().map(|&v| jb(v)).collect();
            (vec![Term { l: table_mat(tab, false, &w), r: phi }], None)
        }
        ("model-a", Route::Mapped, Part::Stiff) => {
            let s: Vec<f64> = x.iter().map(|v| SIGMA * v).collect();
            let xs = liouville_x(&s)?;
            let w: Vec<f64> = xs.iter().map(|&v| liouville_potential(v)).collect();
            (vec![Term { l: table_mat(tab, false, &w), r: phi }], Some(kinetic(n, 1.0 / (SIGMA * SIGMA))))
        }
        ("model-b", Route::Mapped, Part::Stiff) => {
            // ∫ (u_Y² + u²) dY in s = Y^{-1}: pencil of (1 - d²) against ⟨Y⟩^{-1}
            let yp: Vec<f64> = x.iter().map(|v| stretch_dy(SIGMA * v)).collect();
            let wd: Vec<f64> = yp.iter().map(|v| 1.0 / (SIGMA * SIGMA * v)).collect();
            let dphi = table_mat(tab, true, &one);
            (
                vec![Term { l: table_mat(tab, true, &wd), r: dphi }, Term { l: table_mat(tab, false, &yp), r: phi }],
                None,
            )
        }
        ("model-b", Route::Mapped, Part::Mass) => {
            let w: Vec<f64> = x
                .iter()
                .map(|v| {
                    let s = SIGMA * v;
                    stretch_dy(s) / jb(stretch_y(s))
                })
                .collect();
            (vec![Term { l: table_mat(tab, false, &w), r: phi }], None)
        }
        _ => (Vec::new(), None),
    };
    Ok(out)
}

pub fn stretch_y(s: f64) -> f64 {
    s * (1.0 + s * s / STRETCH).sqrt()
}

pub fn stretch_dy(s: f64) -> f64 {
    (1.0 + 2.0 * s * s / STRETCH) / (1.0 + s * s / STRETCH).sqrt()
}

fn gram(ts: &[Term], rows: Option<&[usize]>, analytic: Option<&Mat<f64>>) -> Mat<f64> {
    let n = ts[0].r.ncols();
    let nr = rows.map_or(n, |r| r.len());
    let mut out = Mat::<f64>::zeros(nr, n);
    for t in ts {
        match rows {
            None => matmul(out.as_mut(), Accum::Add, t.l.transpose(), t.r.as_ref(), 1.0, Par::Seq),
            Some(r) => {
                let lsub = Mat::from_fn(t.l.nrows(), r.len(), |q, i| t.l[(q, r[i])]);
                matmul(out.as_mut(), Accum::Add, lsub.transpose(), t.r.as_ref(), 1.0, Par::Seq)
            }
        }
    }
    if let Some(a) = analytic {
        for i in 0..nr {
            let gi = rows.map_or(i, |r| r[i]);
            for j in 0..n {
                out[(i, j)] += a[(gi, j)];
            }
        }
    }
    out
}

fn max_abs(m: MatRef<'_, f64>) -> f64 {
    let mut v: f64 = 0.0;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            v = v.max(m[(i, j)].abs());
        }
    }
    v
}

fn symmetrize(m: &mut Mat<f64>) -> f64 {
    let n = m.nrows();
    let scale = max_abs(m.as_ref()).max(1e-300);
    let mut asym: f64 = 0.0;
    for j in 0..n {
        for i in j + 1..n {
            let (a, b) = (m[(i, j)], m[(j, i)]);
            asym = asym.max((a - b).abs());
            let v = 0.5 * (a + b);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    asym / scale
}

fn sample_rows(n: usize) -> Vec<usize> {
    if n <= 64 {
        return (0..n).collect();
    }
    let k = 24;
    (0..k).map(|i| i * (n - 1) / (k - 1)).collect()
}

/// Matrix of a catalog part at `nq` nodes, and the sampled-row change when
/// the node count grows by half.
fn assemble(model: &ModelOperator, n: usize, nq: usize, part: &Part) -> Result<(Mat<f64>, f64)> {
    let tab = HermiteTable::new(n, nq);
    let (ts, analytic) = terms(model, &tab, part)?;
    drop(tab);
    let full = gram(&ts, None, analytic.as_ref());
    drop(ts);
    let rows = sample_rows(n);
    let tab2 = HermiteTable::new(n, nq + nq / 2);
    let (ts2, an2) = terms(model, &tab2, part)?;
    drop(tab2);
    let fine = gram(&ts2, Some(&rows), an2.as_ref());
    let scale = max_abs(full.as_ref()).max(1e-300);
    let mut worst: f64 = 0.0;
    for (i, &r) in rows.iter().enumerate() {
        for j in 0..n {
            worst = worst.max((fine[(i, j)] - full[(r, j)]).abs());
        }
    }
    Ok((full, worst / scale))
}

/// Grow the node count by 1.5x from 2N + 32 until the sampled entries
/// settle, at most `MAX_REFINE` times.
fn assemble_resolved(model: &ModelOperator, n: usize, part: Part) -> Result<(Mat<f64>, f64, usize)> {
    let mut nq = model.nodes_for(n);
    let mut last = 0.0;
    for _ in 0..=MAX_REFINE {
        let (m, delta) = assemble(model, n, nq, &part)?;
        if delta <= RESOLUTION_TOL {
            return Ok((m, delta, nq));
        }
        last = delta;
        nq += nq / 2;
    }
    Err(Error::QuadratureUnderResolved { delta: last })
}

const MAX_REFINE: usize = 4;

/// Threshold on the sampled entry change relative to the matrix scale.
pub const RESOLUTION_TOL: f64 = 1e-10;

/// Galerkin matrix (or pencil) of the model in a basis of dimension n.
pub fn hermite_matrix(model: &ModelOperator, n: usize) -> Result<Galerkin> {
    if n < 16 {
        return Err(Error::ConfigInvalid(format!("basis dimension {n} < 16")));
    }
    let (mut k, mut delta, mut nodes) = assemble_resolved(model, n, Part::Stiff)?;
    let mut mass = None;
    if model.id == "model-b" {
        match model.route {
            Route::Hermite => {
                // M_⟨x⟩ S M_⟨x⟩ with S_jk = i^{j-k} (M_⟨ξ⟩)_jk, since ĥ_k = (-i)^k h_k
                let mx = k;
                let mut s = mx.clone();
                for j in 0..n {
                    for i in 0..n {
                        let d = (i as i64 - j as i64).rem_euclid(4);
                        s[(i, j)] *= match d {
                            0 => 1.0,
                            2 => -1.0,
                            _ => 0.0,
                        };
                    }
                }
                let mut tmp = Mat::<f64>::zeros(n, n);
                matmul(tmp.as_mut(), Accum::Replace, mx.as_ref(), s.as_ref(), 1.0, Par::Seq);
                k = Mat::<f64>::zeros(n, n);
                matmul(k.as_mut(), Accum::Replace, tmp.as_ref(), mx.as_ref(), 1.0, Par::Seq);
            }
            Route::Mapped => {
                let (m, dm, nm) = assemble_resolved(model, n, Part::Mass)?;
                delta = f64::max(delta, dm);
                nodes = nodes.max(nm);
                mass = Some(m);
            }
        }
    }
    if model.shift != 0.0 {
        match &mass {
            None => {
                for i in 0..n {
                    k[(i, i)] += model.shift;
                }
            }
            Some(m) => k += m * faer::Scale(model.shift),
        }
    }
    let asymmetry = symmetrize(&mut k);
    if let Some(m) = mass.as_mut() {
        symmetrize(m);
    }
    Ok(Galerkin { stiffness: k, mass, nodes, asymmetry, resolution_delta: delta })
}

/// Ascending eigenvalues of a dense symmetric matrix.
pub fn eigen_values(a: MatRef<'_, f64>) -> Result<Vec<f64>> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::SolverFailure(format!("matrix is {}x{}", n, a.ncols())));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    use faer::linalg::evd;
    let par = Par::Seq;
    let mut s = faer::diag::Diag::<f64>::zeros(n);
    let mut buf =
        MemBuffer::new(evd::self_adjoint_evd_scratch::<f64>(n, evd::ComputeEigenvectors::No, par, Default::default()));
    evd::self_adjoint_evd(a, s.as_mut(), None, par, MemStack::new(&mut buf), Default::default())
        .map_err(|e| Error::SolverFailure(format!("{e:?}")))?;
    let mut v: Vec<f64> = (0..n).map(|i| s[i]).collect();
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::SolverFailure("non-finite eigenvalue".into()));
    }
    v.sort_by(|a, b| a.total_cmp(b));
    Ok(v)
}

/// Ascending eigenvalues of K v = η M v, M positive definite, through
/// the Cholesky factor: L^{-1} K L^{-T}.
pub fn pencil_values(k: MatRef<'_, f64>, m: MatRef<'_, f64>) -> Result<Vec<f64>> {
    use faer::linalg::cholesky::llt::factor;
    use faer::linalg::triangular_solve::solve_lower_triangular_in_place;
    let n = k.nrows();
    let par = Par::Seq;
    let mut l = m.to_owned();
    let mut buf = MemBuffer::new(factor::cholesky_in_place_scratch::<f64>(n, par, Default::default()));
    factor::cholesky_in_place(l.as_mut(), Default::default(), par, MemStack::new(&mut buf), Default::default())
        .map_err(|e| Error::SolverFailure(format!("mass matrix not positive definite: {e:?}")))?;
    for j in 0..n {
        for i in 0..j {
            l[(i, j)] = 0.0;
        }
    }
    let mut c = k.to_owned();
    solve_lower_triangular_in_place(l.as_ref(), c.as_mut(), par);
    let mut ct = c.transpose().to_owned();
    solve_lower_triangular_in_place(l.as_ref(), ct.as_mut(), par);
    symmetrize(&mut ct);
    eigen_values(ct.as_ref())
}

pub fn eigen_spectrum(g: &Galerkin) -> Result<Vec<f64>> {
    match &g.mass {
        None => eigen_values(g.stiffness.as_ref()),
        Some(m) => pencil_values(g.stiffness.as_ref(), m.as_ref()),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumDataset {
    pub model: String,
    pub route: Route,
    pub basis_dim: usize,
    pub nodes: usize,
    pub etas: Vec<f64>,
    pub trusted_count: usize,
    pub rel_tol: f64,
    pub shift: f64,
    pub lower_bound: f64,
    /// Exponent s when the dataset holds η^s of a computed spectrum.
    pub power: f64,
}

/// Metadata of a dataset without the eigenvalues (JSON sidecar).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumMeta {
    pub model: String,
    pub route: Route,
    pub basis_dim: usize,
    pub nodes: usize,
    pub count: usize,
    pub trusted_count: usize,
    pub rel_tol: f64,
    pub shift: f64,
    pub lower_bound: f64,
    pub power: f64,
}

impl SpectrumDataset {
    /// Untrusted dataset from raw eigenvalues; trust comes from
    /// `convergence_trust`.
    pub fn new(model: &ModelOperator, basis_dim: usize, nodes: usize, mut etas: Vec<f64>) -> Result<SpectrumDataset> {
        etas.sort_by(|a, b| a.total_cmp(b));
        let lb = model.lower_bound + model.shift;
        if let Some(&e0) = etas.first() {
            if e0 < lb - 1e-8 * lb.abs().max(1.0) {
                return Err(Error::SolverFailure(format!("lowest eigenvalue {e0} below lower bound {lb}")));
            }
        }
        Ok(SpectrumDataset {
            model: model.id.clone(),
            route: model.route,
            basis_dim,
            nodes,
            etas,
            trusted_count: 0,
            rel_tol: 0.0,
            shift: model.shift,
            lower_bound: lb,
            power: 1.0,
        })
    }

    /// Synthetic dataset (all values trusted).
    pub fn synthetic(name: &str, etas: Vec<f64>) -> SpectrumDataset {
        let n = etas.len();
        let mut etas = etas;
        etas.sort_by(|a, b| a.total_cmp(b));
        SpectrumDataset {
            model: name.into(),
            route: Route::Hermite,
            basis_dim: n,
            nodes: 0,
            lower_bound: etas.first().copied().unwrap_or(0.0),
            etas,
            trusted_count: n,
            rel_tol: 0.0,
            shift: 0.0,
            power: 1.0,
        }
    }

    pub fn trusted(&self) -> &[f64] {
        &self.etas[..self.trusted_count]
    }

    pub fn counting(&self) -> CountingFunction<'_> {
        CountingFunction { etas: self.trusted() }
    }

    /// Dataset of P^s: η_j ↦ η_j^s (a relabeling, N_{P^s}(η) = N_P(η^{1/s})).
    pub fn power(&self, s: f64) -> SpectrumDataset {
        let mut d = self.clone();
        d.etas = self.etas.iter().map(|e| e.powf(s)).collect();
        d.lower_bound = self.lower_bound.powf(s);
        d.power = self.power * s;
        d
    }

    pub fn meta(&self) -> SpectrumMeta {
        SpectrumMeta {
            model: self.model.clone(),
            route: self.route,
            basis_dim: self.basis_dim,
            nodes: self.nodes,
            count: self.etas.len(),
            trusted_count: self.trusted_count,
            rel_tol: self.rel_tol,
            shift: self.shift,
            lower_bound: self.lower_bound,
            power: self.power,
        }
    }

    pub fn csv(&self) -> String {
        let mut s = String::with_capacity(32 * self.etas.len() + 16);
        s.push_str("index,eta\n");
        for (i, e) in self.etas.iter().enumerate() {
            s.push_str(&format!("{},{:.17e}\n", i + 1, e));
        }
        s
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(self.csv().as_bytes())?;
        Ok(())
    }

    pub fn from_parts(csv: &str, meta: SpectrumMeta) -> Result<SpectrumDataset> {
        let mut lines = csv.lines();
        if lines.next() != Some("index,eta") {
            return Err(Error::CacheCorrupt("spectrum CSV header".into()));
        }
        let mut etas = Vec::new();
        for (k, l) in lines.enumerate() {
            let (i, v) = l.split_once(',').ok_or_else(|| Error::CacheCorrupt(format!("line {}", k + 2)))?;
            let i: usize = i.parse().map_err(|_| Error::CacheCorrupt(format!("index on line {}", k + 2)))?;
            if i != k + 1 {
                return Err(Error::CacheCorrupt(format!("index {i} out of sequence")));
            }
            etas.push(v.parse::<f64>().map_err(|_| Error::CacheCorrupt(format!("value on line {}", k + 2)))?);
        }
        if etas.len() != meta.count || meta.trusted_count > etas.len() {
            return Err(Error::CacheCorrupt("row count disagrees with sidecar".into()));
        }
        if etas.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::CacheCorrupt("eigenvalues not ascending".into()));
        }
        Ok(SpectrumDataset {
            model: meta.model,
            route: meta.route,
            basis_dim: meta.basis_dim,
            nodes: meta.nodes,
            etas,
            trusted_count: meta.trusted_count,
            rel_tol: meta.rel_tol,
            shift: meta.shift,
            lower_bound: meta.lower_bound,
            power: meta.power,
        })
    }
}

/// Assemble and diagonalize; the dataset is untrusted until compared.
pub fn compute_spectrum(model: &ModelOperator, n: usize) -> Result<SpectrumDataset> {
    let g = hermite_matrix(model, n)?;
    let etas = eigen_spectrum(&g)?;
    SpectrumDataset::new(model, n, g.nodes, etas)
}

pub const TRUST_CAP: f64 = 0.8;

/// Largest k with max_{j<k} |η_j(N) - η_j(N')|/η_j(N') ≤ rel_tol, capped
/// at 0.8 N. `coarse` must have the smaller basis.
pub fn convergence_trust(coarse: &SpectrumDataset, fine: &SpectrumDataset, rel_tol: f64) -> Result<usize> {
    if coarse.model != fine.model || coarse.power != fine.power {
        return Err(Error::ModelMismatch(coarse.model.clone(), fine.model.clone()));
    }
    let cap = (TRUST_CAP * coarse.etas.len() as f64).floor() as usize;
    let mut k = 0;
    for (a, b) in coarse.etas.iter().zip(&fine.etas) {
        if (a - b).abs() > rel_tol * b.abs() {
            break;
        }
        k += 1;
    }
    Ok(k.min(cap))
}

/// Mark `coarse` trusted against `fine`.
pub fn with_trust(mut coarse: SpectrumDataset, fine: &SpectrumDataset, rel_tol: f64) -> Result<SpectrumDataset> {
    coarse.trusted_count = convergence_trust(&coarse, fine, rel_tol)?;
    coarse.rel_tol = rel_tol;
    Ok(coarse)
}

/// Largest violation of η_j(fine) ≤ η_j(coarse) over the first k values.
pub fn ritz_violation(coarse: &SpectrumDataset, fine: &SpectrumDataset, k: usize) -> f64 {
    coarse.etas.iter().zip(&fine.etas).take(k).map(|(a, b)| b - a).fold(f64::NEG_INFINITY, f64::max)
}

#[derive(Clone, Copy, Debug)]
pub struct CountingFunction<'a> {
    pub etas: &'a [f64],
}

impl CountingFunction<'_> {
    pub fn max_trusted(&self) -> f64 {
        self.etas.last().copied().unwrap_or(f64::NEG_INFINITY)
    }

    /// #{η_j ≤ λ} over trusted values, with multiplicity.
    pub fn count(&self, lambda: f64) -> Result<usize> {
        if lambda > self.max_trusted() {
            return Err(Error::BeyondTrustedRange { lambda, max: self.max_trusted() });
        }
        Ok(self.etas.partition_point(|&e| e <= lambda))
    }
}

pub fn counting(cf: &CountingFunction<'_>, lambda: f64) -> Result<usize> {
    cf.count(lambda)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeylFit {
    pub window: (f64, f64),
    pub jumps: usize,
    pub fitted_exp: f64,
    pub fitted_coeff: f64,
    /// Least-squares C in N ≈ C λ^a with a pinned to the predicted exponent.
    pub pinned_coeff: f64,
    pub residual_exp: f64,
    pub max_residual_ratio: f64,
}

fn lsq_line(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
    }
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// max |N(λ) - Cλ^a| / λ^p over [lo, hi]; the sup on each step interval
/// is attained at its ends.
pub fn residual_ratio(cf: &CountingFunction<'_>, c: f64, a: f64, p: f64, lo: f64, hi: f64) -> f64 {
    let e = cf.etas;
    let mut worst: f64 = 0.0;
    let mut probe = |lam: f64, nval: f64| {
        if lam >= lo && lam <= hi {
            worst = worst.max((nval - c * lam.powf(a)).abs() / lam.powf(p));
        }
    };
    let i0 = e.partition_point(|&v| v < lo);
    probe(lo, e.partition_point(|&v| v <= lo) as f64);
    for i in i0..e.len() {
        if e[i] > hi {
            break;
        }
        // just below the jump and at it
        probe(e[i], i as f64);
        probe(e[i], e.partition_point(|&v| v <= e[i]) as f64);
    }
    if hi <= cf.max_trusted() {
        probe(hi, e.partition_point(|&v| v <= hi) as f64);
    }
    worst
}

pub fn fit_weyl(cf: &CountingFunction<'_>, pred: &WeylPrediction, window: (f64, f64)) -> Result<WeylFit> {
    let (lo, hi) = window;
    if hi > cf.max_trusted() {
        return Err(Error::BeyondTrustedRange { lambda: hi, max: cf.max_trusted() });
    }
    let e = cf.etas;
    let i0 = e.partition_point(|&v| v < lo);
    let i1 = e.partition_point(|&v| v <= hi);
    let jumps = i1 - i0;
    if jumps < 200 {
        return Err(Error::InsufficientData(format!("{jumps} jump points in [{lo}, {hi}], need 200")));
    }
    let (c, a) = (pred.leading_coeff, pred.leading_exp);
    let mut lx = Vec::new();
    let mut ly = Vec::new();
    let mut lams = Vec::new();
    let mut ns = Vec::new();
    for i in i0..i1.saturating_sub(1) {
        if e[i + 1] <= e[i] {
            continue;
        }
        let mid = 0.5 * (e[i] + e[i + 1]);
        let nv = (i + 1) as f64;
        lx.push(mid.ln());
        ly.push(nv.ln());
        lams.push(mid);
        ns.push(nv);
    }
    let (fitted_exp, icpt) = lsq_line(&lx, &ly);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (l, nv) in lams.iter().zip(&ns) {
        let x = l.powf(a);
        sxy += x * nv;
        sxx += x * x;
    }
    // envelope slope of |N - Cλ^a| over ten log-equal blocks
    let blocks = 10;
    let (llo, lhi) = (lo.ln(), hi.ln());
    let mut bx = Vec::new();
    let mut by = Vec::new();
    for b in 0..blocks {
        let a0 = (llo + (lhi - llo) * b as f64 / blocks as f64).exp();
        let a1 = (llo + (lhi - llo) * (b + 1) as f64 / blocks as f64).exp();
        let m = lams
            .iter()
            .zip(&ns)
            .filter(|(l, _)| **l >= a0 && **l < a1)
            .map(|(l, nv)| (nv - c * l.powf(a)).abs())
            .fold(0.0, f64::max);
        if m > 0.0 {
            bx.push((a0 * a1).sqrt().ln());
            by.push(m.ln());
        }
    }
    let residual_exp = if bx.len() >= 2 { lsq_line(&bx, &by).0 } else { f64::NAN };
    Ok(WeylFit {
        window,
        jumps,
        fitted_exp,
        fitted_coeff: icpt.exp(),
        pinned_coeff: sxy / sxx,
        residual_exp,
        max_residual_ratio: residual_ratio(cf, c, a, pred.remainder_exp + 0.1, lo, hi),
    })
}

/// Top decade [λ_max/10, λ_max] of the trusted range.
pub fn top_decade(cf: &CountingFunction<'_>) -> (f64, f64) {
    let hi = cf.max_trusted();
    (hi / 10.0, hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pred(c: f64, a: f64, r: f64) -> WeylPrediction {
        WeylPrediction {
            leading_coeff: c,
            leading_exp: a,
            remainder_exp: r,
            eps: a - r,
            n_star: 0.0,
            provenance: "test".into(),
        }
    }

    #[test]
    fn diagonal_two_by_two() {
        let m = Mat::from_fn(2, 2, |i, j| if i == j { [3.0, 1.0][i] } else { 0.0 });
        assert_eq!(eigen_values(m.as_ref()).unwrap(), vec![1.0, 3.0]);
    }

    #[test]
    fn oracle_reproduces_odd_integers() {
        let m = ModelOperator::catalog("oracle-h", Route::Hermite).unwrap();
        let d = compute_spectrum(&m, 400).unwrap();
        for k in 0..50 {
            let ex = (2 * k + 1) as f64;
            assert!((d.etas[k] - ex).abs() <= 1e-8 * ex, "{k}: {}", d.etas[k]);
        }
    }

    #[test]
    fn permutation_invariance() {
        let m = ModelOperator::catalog("model-a", Route::Hermite).unwrap();
        let g = hermite_matrix(&m, 32).unwrap();
        let n = 32;
        let p: Vec<usize> = (0..n).map(|i| (7 * i + 3) % n).collect();
        let pm = Mat::from_fn(n, n, |i, j| g.stiffness[(p[i], p[j])]);
        let a = eigen_values(g.stiffness.as_ref()).unwrap();
        let b = eigen_values(pm.as_ref()).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-10 * x.abs());
        }
    }

    #[test]
    fn model_a_plain_is_positive_definite() {
        use faer::linalg::cholesky::llt::factor;
        let m = ModelOperator::catalog("model-a", Route::Hermite).unwrap();
        let g = hermite_matrix(&m, 64).unwrap();
        assert!(g.asymmetry < 1e-12);
        let mut l = g.stiffness.clone();
        let mut buf = MemBuffer::new(factor::cholesky_in_place_scratch::<f64>(64, Par::Seq, Default::default()));
        assert!(factor::cholesky_in_place(l.as_mut(), Default::default(), Par::Seq, MemStack::new(&mut buf), Default::default())
            .is_ok());
    }

    #[test]
    fn fourier_multiplier_is_at_least_one() {
        let m = ModelOperator::catalog("model-b", Route::Hermite).unwrap();
        let tab = HermiteTable::new(64, m.nodes_for(64));
        let (ts, _) = terms(&m, &tab, &Part::Stiff).unwrap();
        let mx = gram(&ts, None, None);
        let mut s = mx.clone();
        for j in 0..64 {
            for i in 0..64 {
                s[(i, j)] *= [1.0, 0.0, -1.0, 0.0][(i as i64 - j as i64).rem_euclid(4) as usize];
            }
        }
        let ev = eigen_values(s.as_ref()).unwrap();
        assert!(ev[0] >= 1.0 - 1e-8, "{}", ev[0]);
        let g = hermite_matrix(&m, 64).unwrap();
        assert!(g.asymmetry < 1e-12);
    }

    #[test]
    fn routes_agree_on_low_eigenvalues() {
        let a_plain = compute_spectrum(&ModelOperator::catalog("A", Route::Hermite).unwrap(), 400).unwrap();
        let a_map = compute_spectrum(&ModelOperator::catalog("A", Route::Mapped).unwrap(), 200).unwrap();
        let b_map = compute_spectrum(&ModelOperator::catalog("B", Route::Mapped).unwrap(), 200).unwrap();
        for k in 0..5 {
            let (x, y, z) = (a_plain.etas[k], a_map.etas[k], b_map.etas[k]);
            assert!((x - y).abs() < 1e-6 * y, "{k}: plain {x} mapped {y}");
            assert!((z - y).abs() < 1e-9 * y, "{k}: pencil {z} mapped {y}");
        }
        let b_plain = compute_spectrum(&ModelOperator::catalog("B", Route::Hermite).unwrap(), 400).unwrap();
        assert!((b_plain.etas[0] - a_map.etas[0]).abs() < 1e-3 * a_map.etas[0], "{} {}", b_plain.etas[0], a_map.etas[0]);
    }

    #[test]
    fn ritz_values_decrease_with_basis() {
        let m = ModelOperator::shipped("A").unwrap();
        let c = compute_spectrum(&m, 100).unwrap();
        let f = compute_spectrum(&m, 200).unwrap();
        let k = convergence_trust(&c, &f, 1e-6).unwrap();
        assert!(k > 10);
        assert!(ritz_violation(&c, &f, k) <= 1e-10);
    }

    #[test]
    fn trust_rules() {
        let d = SpectrumDataset::synthetic("s", (1..=100).map(|j| j as f64).collect());
        assert_eq!(convergence_trust(&d, &d, 1e-6).unwrap(), 80);
        let other = SpectrumDataset::synthetic("t", d.etas.clone());
        assert!(matches!(convergence_trust(&d, &other, 1e-6), Err(Error::ModelMismatch(..))));
        let mut e = d.clone();
        e.etas[5] *= 1.0 + 1e-5;
        assert_eq!(convergence_trust(&d, &e, 1e-6).unwrap(), 5);
    }

    #[test]
    fn counting_examples() {
        let d = SpectrumDataset::synthetic("s", vec![1.0, 2.0, 3.0]);
        let cf = d.counting();
        assert_eq!(cf.count(2.5).unwrap(), 2);
        assert_eq!(cf.count(2.0).unwrap(), 2);
        assert!(matches!(cf.count(3.5), Err(Error::BeyondTrustedRange { .. })));
        let d = SpectrumDataset::synthetic("s", vec![1.0, 1.0, 2.0]);
        assert_eq!(d.counting().count(1.0).unwrap(), 2);
    }

    #[test]
    fn synthetic_staircases() {
        let d = SpectrumDataset::synthetic("lin", (1..=3000).map(|j| j as f64).collect());
        let f = fit_weyl(&d.counting(), &pred(1.0, 1.0, 0.0), (300.0, 3000.0)).unwrap();
        assert!((f.fitted_exp - 1.0).abs() <= 0.01 && (f.fitted_coeff - 1.0).abs() <= 0.02, "{f:?}");
        let d = SpectrumDataset::synthetic("sq", (1..=40000).map(|j| (j as f64).sqrt()).collect());
        let f = fit_weyl(&d.counting(), &pred(1.0, 2.0, 1.0), (20.0, 200.0)).unwrap();
        assert!((f.fitted_exp - 2.0).abs() <= 0.02, "{f:?}");
        assert!(f.max_residual_ratio < 1.0);
        let few = SpectrumDataset::synthetic("few", (1..=100).map(|j| j as f64).collect());
        assert!(matches!(fit_weyl(&few.counting(), &pred(1.0, 1.0, 0.0), (1.0, 100.0)), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn power_relabeling() {
        let d = SpectrumDataset::synthetic("p", (1..=50).map(|j| (j * j) as f64 + 0.5).collect());
        let q = d.power(0.5);
        for eta in [3.0, 7.5, 20.0] {
            assert_eq!(q.counting().count(eta).unwrap(), d.counting().count(eta * eta).unwrap());
        }
    }

    #[test]
    fn csv_round_trip() {
        let m = ModelOperator::catalog("oracle-h", Route::Hermite).unwrap();
        let mut d = compute_spectrum(&m, 20 + 16).unwrap();
        d.trusted_count = 10;
        let back = SpectrumDataset::from_parts(&d.csv(), d.meta()).unwrap();
        assert_eq!(back, d);
    }
}
