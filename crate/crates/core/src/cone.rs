//! One-period polyhedral analysis at interior nodes: reversible cone,
//! least-norm decomposition, no-arbitrage check, the admissible set of
//! wealth fractions, its norm-max basis, and the dominating strategy.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg;
use crate::lp::{maximize, Constraint, LpOutcome, Sense};
use crate::par;
use crate::polytope::{dot, lex_cmp, norm, vertices, Halfspace};
use crate::strategy::{validate_strategy, LotMatrix, Strategy};
use crate::tree::ScenarioTree;

pub const DIM_CAP: usize = 8;
pub const NA_DELTA: f64 = 1e-6;
const VERTEX_TOL: f64 = 1e-9;

/// The one-period market seen from an interior node.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocalMarket {
    pub node: u64,
    /// 1 + r_c per child
    pub gross: Vec<f64>,
    /// S_c − (1+r_c) S_node per child
    pub excess: Vec<Vec<f64>>,
}

impl LocalMarket {
    pub fn at(tree: &ScenarioTree, n: usize) -> LocalMarket {
        let kids = &tree.node(n).children;
        LocalMarket {
            node: tree.label(n),
            gross: kids.iter().map(|&c| 1.0 + tree.rate(c)).collect(),
            excess: kids.iter().map(|&c| tree.excess(n, c)).collect(),
        }
    }

    pub fn new(excess: Vec<Vec<f64>>, gross: Vec<f64>) -> LocalMarket {
        LocalMarket { node: 0, gross, excess }
    }

    pub fn dim(&self) -> usize {
        self.excess.first().map(|e| e.len()).unwrap_or(0)
    }

    /// ⟨β, ΔS_c⟩ for each child.
    pub fn returns(&self, beta: &[f64]) -> Vec<f64> {
        self.excess.iter().map(|e| dot(e, beta)).collect()
    }

    fn check_dim(&self) -> Result<()> {
        if self.dim() > DIM_CAP {
            return Err(Error::DimensionCapExceeded { d: self.dim(), cap: DIM_CAP });
        }
        Ok(())
    }

    fn scale(&self) -> f64 {
        self.excess.iter().flatten().fold(1.0f64, |m, v| m.max(v.abs()))
    }
}

fn nonneg_halfspaces(d: usize) -> Vec<Halfspace> {
    (0..d)
        .map(|i| {
            let mut a = vec![0.0; d];
            a[i] = -1.0;
            Halfspace { a, b: 0.0 }
        })
        .collect()
}

/// Extreme rays of {β ≥ 0 : ⟨β, ΔS_c⟩ = 0 ∀c}, normalized to Σβ = 1.
/// Empty means the cone is {0}.
pub fn reversible_cone(m: &LocalMarket) -> Result<Vec<Vec<f64>>> {
    m.check_dim()?;
    let d = m.dim();
    let s = m.scale();
    let mut eqs: Vec<(Vec<f64>, f64)> = m.excess.iter().map(|e| (e.iter().map(|v| v / s).collect(), 0.0)).collect();
    eqs.push((vec![1.0; d], 1.0));
    let gens = vertices(d, &eqs, &nonneg_halfspaces(d), VERTEX_TOL);
    Ok(gens
        .into_iter()
        .map(|g| g.into_iter().map(|v| if v.abs() < 1e-13 { 0.0 } else { v }).collect())
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Decomposition {
    /// reversible part
    pub p: Vec<f64>,
    /// least-norm purely nonreversible part
    pub q: Vec<f64>,
}

/// Reusable least-norm decomposition β = p + q for one node.
///
/// p ranges over {0 <= p <= β, E p = 0} with E the scaled excess returns, and
/// q = β − p has least norm. Only coordinates touched by the null space of E
/// can carry p. The optimum lies in the relative interior of some face
/// {p_i = 0 on L, p_i = β_i on U}; each face is an equality-constrained least
/// squares problem, so the faces are enumerated and the best feasible
/// candidate kept (3^m faces for m touched coordinates, m <= d <= 8).
#[derive(Debug, Clone)]
pub struct Decomposer {
    d: usize,
    k: usize,
    /// coordinates with a nonzero null-space row
    free: Vec<usize>,
    /// scaled excess returns restricted to `free`, one row per child
    e: DMatrix<f64>,
}

impl Decomposer {
    pub fn new(m: &LocalMarket) -> Result<Decomposer> {
        m.check_dim()?;
        let d = m.dim();
        let s = m.scale();
        // zero rows pad the matrix to at least d rows so the SVD returns a full V
        let rows = m.excess.len().max(d);
        let e = DMatrix::from_fn(rows, d, |r, c| m.excess.get(r).map_or(0.0, |x| x[c] / s));
        let null = linalg::svd(&e).null_space(1e-9);
        let free: Vec<usize> = (0..d).filter(|&i| null.iter().map(|z| z[i] * z[i]).sum::<f64>().sqrt() > 1e-9).collect();
        let e = DMatrix::from_fn(rows, free.len(), |r, c| e[(r, free[c])]);
        Ok(Decomposer { d, k: null.len(), free, e })
    }

    pub fn null_dim(&self) -> usize {
        self.k
    }

    pub fn decompose(&self, beta: &[f64]) -> Result<Decomposition> {
        let d = self.d;
        if beta.len() != d {
            return Err(Error::DimensionMismatch(format!("β has {} entries, d = {}", beta.len(), d)));
        }
        if beta.iter().any(|&b| b < 0.0 || !b.is_finite()) {
            return Err(Error::InvalidParameter("β must be finite and nonnegative".into()));
        }
        let idx: Vec<usize> = (0..self.free.len()).filter(|&c| beta[self.free[c]] > 0.0).collect();
        if idx.is_empty() {
            return Ok(Decomposition { p: vec![0.0; d], q: beta.to_vec() });
        }
        let m = idx.len();
        let b: Vec<f64> = idx.iter().map(|&c| beta[self.free[c]]).collect();
        let bn = norm(&b);
        let tol = 1e-10 * (1.0 + bn);
        // best (objective, p on idx); p = 0 is always feasible
        let mut best = (b.iter().map(|v| v * v).sum::<f64>(), vec![0.0; m]);
        let faces = 3usize.pow(m as u32);
        for code in 1..faces {
            // state per coordinate: 0 at zero, 1 at β_i, 2 free
            let mut state = vec![0u8; m];
            let mut c = code;
            for st in state.iter_mut() {
                *st = (c % 3) as u8;
                c /= 3;
            }
            let fixed_obj: f64 = (0..m).filter(|&i| state[i] == 0).map(|i| b[i] * b[i]).sum();
            if fixed_obj >= best.0 {
                continue;
            }
            let fr: Vec<usize> = (0..m).filter(|&i| state[i] == 2).collect();
            // r = E_F β_F + E_U β_U; free part solves min |δ| s.t. E_F δ = −r
            let r = DVector::from_fn(self.e.nrows(), |row, _| {
                (0..m).filter(|&i| state[i] != 0).map(|i| self.e[(row, idx[i])] * b[i]).sum::<f64>()
            });
            let mut p: Vec<f64> = (0..m).map(|i| if state[i] == 1 { b[i] } else { 0.0 }).collect();
            let mut obj = fixed_obj;
            if fr.is_empty() {
                if r.norm() > tol {
                    continue;
                }
            } else {
                let ef = DMatrix::from_fn(self.e.nrows(), fr.len(), |row, c| self.e[(row, idx[fr[c]])]);
                let f = linalg::svd(&ef);
                let mut delta = f.solve(&(-&r), 1e-12);
                // one refinement step against cancellation in r
                let fix = f.solve(&(&ef * &delta + &r), 1e-12);
                delta -= fix;
                if (&ef * &delta + &r).norm() > tol {
                    continue;
                }
                for (k, &i) in fr.iter().enumerate() {
                    p[i] = b[i] + delta[k];
                    obj += delta[k] * delta[k];
                }
                if fr.iter().any(|&i| p[i] < -tol || p[i] > b[i] + tol) {
                    continue;
                }
            }
            if obj < best.0 {
                best = (obj, p);
            }
        }
        let mut full = vec![0.0; d];
        for (k, &i) in idx.iter().enumerate() {
            let j = self.free[i];
            full[j] = best.1[k].clamp(0.0, beta[j]);
        }
        let q = beta.iter().zip(&full).map(|(b, p)| b - p).collect();
        Ok(Decomposition { p: full, q })
    }

    /// q(β) = β within 1e−9(1+|β|).
    pub fn is_purely_nonreversible(&self, beta: &[f64]) -> Result<bool> {
        let dec = self.decompose(beta)?;
        Ok(norm(&dec.p) <= 1e-9 * (1.0 + norm(beta)))
    }
}

pub fn decompose(m: &LocalMarket, beta: &[f64]) -> Result<Decomposition> {
    Decomposer::new(m)?.decompose(beta)
}

pub fn is_purely_nonreversible(m: &LocalMarket, beta: &[f64]) -> Result<bool> {
    Decomposer::new(m)?.is_purely_nonreversible(beta)
}

/// A long-only one-period arbitrage at this node, if any: β ≥ 0, Σβ = 1,
/// every child excess return ≥ 0 and some child's ≥ [`NA_DELTA`].
pub fn node_arbitrage(m: &LocalMarket) -> Option<Vec<f64>> {
    let d = m.dim();
    if d == 0 {
        return None;
    }
    let mut cons = vec![Constraint::new(vec![1.0; d], Sense::Eq, 1.0)];
    cons.extend(m.excess.iter().map(|e| Constraint::new(e.clone(), Sense::Ge, 0.0)));
    for e in &m.excess {
        match maximize(e, &cons) {
            LpOutcome::Infeasible => return None,
            LpOutcome::Optimal { x, value } if value >= NA_DELTA => return Some(x),
            _ => {}
        }
    }
    None
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NaVerdict {
    pub holds: bool,
    /// first violating node (input id), canonical order
    pub node: Option<u64>,
    pub certificate: Option<Vec<f64>>,
    /// child excess returns of the certificate
    pub returns: Option<Vec<f64>>,
}

pub fn check_na(tree: &ScenarioTree) -> NaVerdict {
    let interior: Vec<usize> = (0..tree.len()).filter(|&n| !tree.is_leaf(n)).collect();
    let found = par::map(&interior, |&n| {
        let m = LocalMarket::at(tree, n);
        node_arbitrage(&m).map(|b| (m.node, m.returns(&b), b))
    });
    match found.into_iter().flatten().next() {
        None => NaVerdict { holds: true, node: None, certificate: None, returns: None },
        Some((node, ret, b)) => NaVerdict { holds: false, node: Some(node), certificate: Some(b), returns: Some(ret) },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Face {
    /// coordinates allowed to be positive
    pub support: Vec<usize>,
    pub vertices: Vec<Vec<f64>>,
}

/// A_t = {β ≥ 0 : q(β) = β, 1 + r_c + ⟨β, ΔS_c⟩ ≥ 0 ∀c}. The purely
/// nonreversible set is the union of coordinate faces whose support contains
/// no reversible generator, so A_t is a union of polytopes, one per maximal
/// such support.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdmissibleSet {
    pub node: u64,
    pub dim: usize,
    /// β ≥ 0 and the budget constraints, as a·β <= b
    pub halfspaces: Vec<Halfspace>,
    pub faces: Vec<Face>,
    pub vertices: Vec<Vec<f64>>,
    /// max |β| over the set (attained at a vertex)
    pub radius: f64,
    /// sqrt of the sum of squared per-coordinate LP maxima, worst face
    pub radius_bound: f64,
}

impl AdmissibleSet {
    pub fn contains(&self, beta: &[f64], tol: f64) -> bool {
        if beta.iter().any(|&b| b < -tol) || self.halfspaces.iter().any(|h| h.slack(beta) < -tol) {
            return false;
        }
        self.faces
            .iter()
            .any(|f| beta.iter().enumerate().all(|(i, &b)| b <= tol || f.support.contains(&i)))
    }
}

pub fn admissible_polytope(m: &LocalMarket) -> Result<AdmissibleSet> {
    m.check_dim()?;
    let d = m.dim();
    let gens = reversible_cone(m)?;
    let gen_masks: Vec<u32> = gens
        .iter()
        .map(|g| g.iter().enumerate().filter(|(_, &v)| v > 1e-12).fold(0u32, |acc, (i, _)| acc | (1 << i)))
        .collect();
    let free: Vec<u32> = (0u32..(1 << d)).filter(|&s| gen_masks.iter().all(|&g| g & !s != 0)).collect();
    let maximal: Vec<u32> = free.iter().copied().filter(|&s| !free.iter().any(|&o| o != s && o & s == s)).collect();

    let mut halfspaces = nonneg_halfspaces(d);
    for (e, g) in m.excess.iter().zip(&m.gross) {
        halfspaces.push(Halfspace { a: e.iter().map(|v| -v).collect(), b: *g });
    }

    let mut faces = vec![];
    let mut radius_bound = 0.0f64;
    for &mask in &maximal {
        let support: Vec<usize> = (0..d).filter(|i| mask & (1 << i) != 0).collect();
        let k = support.len();
        let restrict = |v: &[f64]| -> Vec<f64> { support.iter().map(|&i| v[i]).collect() };
        let budget: Vec<Constraint> = m
            .excess
            .iter()
            .zip(&m.gross)
            .map(|(e, g)| Constraint::new(restrict(e).iter().map(|v| -v).collect(), Sense::Le, *g))
            .collect();
        let mut sq = 0.0;
        for j in 0..k {
            let mut c = vec![0.0; k];
            c[j] = 1.0;
            match maximize(&c, &budget) {
                LpOutcome::Optimal { value, .. } => sq += value * value,
                _ => return Err(Error::UnboundedAdmissibleSet { node: m.node }),
            }
        }
        radius_bound = radius_bound.max(sq.sqrt());
        let mut hs = nonneg_halfspaces(k);
        hs.extend(budget.iter().map(|c| Halfspace { a: c.a.clone(), b: c.b }));
        let verts: Vec<Vec<f64>> = vertices(k, &[], &hs, VERTEX_TOL)
            .into_iter()
            .map(|v| {
                let mut full = vec![0.0; d];
                for (&i, x) in support.iter().zip(v) {
                    full[i] = if x.abs() < 1e-14 { 0.0 } else { x };
                }
                full
            })
            .collect();
        faces.push(Face { support, vertices: verts });
    }
    let mut all: Vec<Vec<f64>> = vec![];
    for f in &faces {
        for v in &f.vertices {
            if !all.iter().any(|w| w.iter().zip(v).all(|(a, b)| (a - b).abs() <= 1e-12 * (1.0 + a.abs()))) {
                all.push(v.clone());
            }
        }
    }
    all.sort_by(|a, b| lex_cmp(a, b));
    let radius = all.iter().map(|v| norm(v)).fold(0.0, f64::max);
    Ok(AdmissibleSet { node: m.node, dim: d, halfspaces, faces, vertices: all, radius, radius_bound })
}

/// Y^1..Y^d (index i-1 holds Y^i). Y^d maximizes |β| over A, Y^{d-1} is a
/// preimage of the maximizer on A projected along Y^d, and so on. When the
/// projected set collapses to {0} the remaining low indices are zero.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormMaxBasis {
    pub vectors: Vec<Vec<f64>>,
    pub rank: usize,
}

pub fn norm_max_basis(set: &AdmissibleSet) -> NormMaxBasis {
    let d = set.dim;
    let mut vectors = vec![vec![0.0; d]; d];
    let mut images = set.vertices.clone();
    let tol = 1e-12 * (1.0 + set.radius);
    let mut rank = 0;
    for level in (0..d).rev() {
        let mut best: Option<usize> = None;
        for (k, img) in images.iter().enumerate() {
            let nk = norm(img);
            best = match best {
                None => Some(k),
                Some(b) => {
                    let nb = norm(&images[b]);
                    if nk > nb + tol || ((nk - nb).abs() <= tol && lex_cmp(&set.vertices[k], &set.vertices[b]).is_lt()) {
                        Some(k)
                    } else {
                        Some(b)
                    }
                }
            };
        }
        let Some(b) = best else { break };
        let u = images[b].clone();
        let uu = dot(&u, &u);
        if uu.sqrt() <= tol {
            break;
        }
        vectors[level] = set.vertices[b].clone();
        rank += 1;
        for img in images.iter_mut() {
            let f = dot(img, &u) / uu;
            for (x, ui) in img.iter_mut().zip(&u) {
                *x -= f * ui;
            }
        }
    }
    NormMaxBasis { vectors, rank }
}

impl NormMaxBasis {
    /// Least-squares λ with Σ λ_i Y^i ≈ β; zero for padded entries.
    /// Returns (λ, residual norm).
    pub fn coefficients(&self, beta: &[f64]) -> (Vec<f64>, f64) {
        let d = beta.len();
        let used: Vec<usize> = (0..self.vectors.len()).filter(|&i| norm(&self.vectors[i]) > 0.0).collect();
        let mut lambda = vec![0.0; self.vectors.len()];
        if used.is_empty() {
            return (lambda, norm(beta));
        }
        let a = DMatrix::from_fn(d, used.len(), |r, c| self.vectors[used[c]][r]);
        let b = DVector::from_column_slice(beta);
        let sol = linalg::svd(&a).solve(&b, 1e-14);
        for (k, &i) in used.iter().enumerate() {
            lambda[i] = sol[k];
        }
        let resid = (a * sol - b).norm();
        (lambda, resid)
    }

    /// Σ_i 2^{i-1}/(2^{d+1}−1) Y^i.
    pub fn dominating_weight(&self) -> Vec<f64> {
        let d = self.vectors.len();
        let denom = ((1u64 << (d + 1)) - 1) as f64;
        let mut out = vec![0.0; d];
        for (i, y) in self.vectors.iter().enumerate() {
            let w = (1u64 << i) as f64 / denom;
            for (o, v) in out.iter_mut().zip(y) {
                *o += w * v;
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DominatingStrategy {
    /// (2^{d+1} − 1)^T x
    pub x_hat: f64,
    /// β̂ per node (empty at leaves)
    pub weights: Vec<Vec<f64>>,
    /// q(β̂) per node (empty at leaves)
    pub invest: Vec<Vec<f64>>,
    /// frictionless wealth of (x̂, N̂) per node
    pub wealth: Vec<f64>,
    pub strategy: Strategy,
}

pub fn dominating_strategy(tree: &ScenarioTree, x: f64) -> Result<DominatingStrategy> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::NonPositiveCapital(x));
    }
    let d = tree.dim();
    if d > DIM_CAP {
        return Err(Error::DimensionCapExceeded { d, cap: DIM_CAP });
    }
    let per_node = par::try_map_range(tree.len(), |n| -> Result<Option<(Vec<f64>, Vec<f64>)>> {
        if tree.is_leaf(n) {
            return Ok(None);
        }
        let m = LocalMarket::at(tree, n);
        if node_arbitrage(&m).is_some() {
            return Err(Error::ArbitrageDetected { node: m.node });
        }
        let set = admissible_polytope(&m)?;
        let w = norm_max_basis(&set).dominating_weight();
        let q = Decomposer::new(&m)?.decompose(&w.iter().map(|v| v.max(0.0)).collect::<Vec<_>>())?.q;
        Ok(Some((w, q)))
    })?;
    let growth = ((1u64 << (d + 1)) - 1) as f64;
    let x_hat = growth.powi(tree.horizon() as i32) * x;
    let mut weights = vec![vec![]; tree.len()];
    let mut invest = vec![vec![]; tree.len()];
    for (n, v) in per_node.into_iter().enumerate() {
        if let Some((w, q)) = v {
            weights[n] = w;
            invest[n] = q;
        }
    }
    let mut wealth = vec![0.0; tree.len()];
    wealth[0] = x_hat;
    let mut lots = LotMatrix::zeros(tree);
    for n in 0..tree.len() {
        if let Some(p) = tree.node(n).parent {
            let ex = tree.excess(p, n);
            wealth[n] = wealth[p] * (1.0 + tree.rate(n) + dot(&weights[p], &ex));
        }
        if !tree.is_leaf(n) {
            let t = tree.time(n);
            for (j, q) in invest[n].iter().enumerate() {
                lots.set(n, t, j, wealth[n] * q);
            }
        }
    }
    let strategy = validate_strategy(tree, &lots)?;
    Ok(DominatingStrategy { x_hat, weights, invest, wealth, strategy })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeReport {
    pub node: u64,
    pub time: usize,
    pub generators: Vec<Vec<f64>>,
    pub na: bool,
    pub certificate: Option<Vec<f64>>,
    pub admissible: Option<AdmissibleSet>,
    pub basis: Option<NormMaxBasis>,
}

/// Per-node analysis of every interior node, canonical order.
pub fn cone_report(tree: &ScenarioTree) -> Result<Vec<NodeReport>> {
    let interior: Vec<usize> = (0..tree.len()).filter(|&n| !tree.is_leaf(n)).collect();
    par::map(&interior, |&n| {
        let m = LocalMarket::at(tree, n);
        let generators = reversible_cone(&m)?;
        let certificate = node_arbitrage(&m);
        let (admissible, basis) = if certificate.is_none() {
            let set = admissible_polytope(&m)?;
            let basis = norm_max_basis(&set);
            (Some(set), Some(basis))
        } else {
            (None, None)
        };
        Ok(NodeReport { node: m.node, time: tree.time(n), generators, na: certificate.is_none(), certificate, admissible, basis })
    })
    .into_iter()
    .collect()
}
