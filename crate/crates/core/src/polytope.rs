//! Vertex enumeration by active-set combinations, for small dimensions.

use itertools::Itertools;
use nalgebra::{DMatrix, DVector};

/// Halfspace a·x <= b.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct Halfspace {
    pub a: Vec<f64>,
    pub b: f64,
}

impl Halfspace {
    pub fn slack(&self, x: &[f64]) -> f64 {
        self.b - dot(&self.a, x)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn rank(rows: &[Vec<f64>], dim: usize, tol: f64) -> usize {
    if rows.is_empty() {
        return 0;
    }
    let m = DMatrix::from_fn(rows.len(), dim, |r, c| rows[r][c]);
    crate::linalg::svd(&m).rank(tol)
}

/// Solve the stacked system if it pins down a unique point: pick `dim`
/// independent rows greedily, LU-solve them, then check every row.
fn unique_solution(rows: &[Vec<f64>], rhs: &[f64], dim: usize, tol: f64) -> Option<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = vec![];
    let mut picked = vec![];
    for (r, row) in rows.iter().enumerate() {
        let scale = norm(row);
        if scale == 0.0 {
            continue;
        }
        let mut v = row.clone();
        for b in &basis {
            let f = dot(&v, b);
            for (x, y) in v.iter_mut().zip(b) {
                *x -= f * y;
            }
        }
        let nv = norm(&v);
        if nv > tol.max(1e-10) * scale {
            basis.push(v.iter().map(|x| x / nv).collect());
            picked.push(r);
            if picked.len() == dim {
                break;
            }
        }
    }
    if picked.len() < dim {
        return None;
    }
    let m = DMatrix::from_fn(dim, dim, |r, c| rows[picked[r]][c]);
    let b = DVector::from_iterator(dim, picked.iter().map(|&r| rhs[r]));
    let x = m.lu().solve(&b)?;
    let bmax = rhs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for (row, &r) in rows.iter().zip(rhs) {
        if (dot(row, x.as_slice()) - r).abs() > 1e-9 * (1.0 + bmax) * (1.0 + norm(row)) {
            return None;
        }
    }
    Some(x.iter().copied().collect())
}

/// Vertices of {x : eq rows · x = rhs, halfspaces}, sorted and deduplicated.
pub fn vertices(dim: usize, eqs: &[(Vec<f64>, f64)], ineqs: &[Halfspace], tol: f64) -> Vec<Vec<f64>> {
    let eq_rows: Vec<Vec<f64>> = eqs.iter().map(|(a, _)| a.clone()).collect();
    let r = rank(&eq_rows, dim, 1e-12);
    if r > dim {
        return vec![];
    }
    let k = dim - r;
    let mut out: Vec<Vec<f64>> = vec![];
    for combo in (0..ineqs.len()).combinations(k) {
        let mut rows = eq_rows.clone();
        let mut rhs: Vec<f64> = eqs.iter().map(|(_, b)| *b).collect();
        for &h in &combo {
            rows.push(ineqs[h].a.clone());
            rhs.push(ineqs[h].b);
        }
        if rows.is_empty() {
            // dim == 0
            out.push(vec![]);
            continue;
        }
        let Some(x) = unique_solution(&rows, &rhs, dim, 1e-12) else { continue };
        let scale = 1.0 + x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if ineqs.iter().all(|h| h.slack(&x) >= -tol * scale) && !out.iter().any(|v| close(v, &x, tol * scale)) {
            out.push(x);
        }
    }
    out.sort_by(|a, b| lex_cmp(a, b));
    out
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

pub fn lex_cmp(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.partial_cmp(y) {
            Some(std::cmp::Ordering::Equal) | None => continue,
            Some(o) => return o,
        }
    }
    std::cmp::Ordering::Equal
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nonneg(dim: usize) -> Vec<Halfspace> {
        (0..dim)
            .map(|i| {
                let mut a = vec![0.0; dim];
                a[i] = -1.0;
                Halfspace { a, b: 0.0 }
            })
            .collect()
    }

    #[test]
    fn unit_square() {
        let mut h = nonneg(2);
        h.push(Halfspace { a: vec![1.0, 0.0], b: 1.0 });
        h.push(Halfspace { a: vec![0.0, 1.0], b: 1.0 });
        let v = vertices(2, &[], &h, 1e-9);
        assert_eq!(v, vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0, 1.0]]);
    }

    #[test]
    fn simplex_section_with_equality() {
        // {x >= 0, x1+x2+x3 = 1, x1 - x2 = 0}
        let v = vertices(3, &[(vec![1.0, 1.0, 1.0], 1.0), (vec![1.0, -1.0, 0.0], 0.0)], &nonneg(3), 1e-9);
        assert_eq!(v.len(), 2);
        assert!(close(&v[0], &[0.0, 0.0, 1.0], 1e-12));
        assert!(close(&v[1], &[0.5, 0.5, 0.0], 1e-12));
    }

    #[test]
    fn degenerate_vertex_counted_once() {
        // pyramid apex where four facets meet
        let mut h = nonneg(2);
        h.push(Halfspace { a: vec![1.0, 1.0], b: 1.0 });
        h.push(Halfspace { a: vec![2.0, 2.0], b: 2.0 });
        assert_eq!(vertices(2, &[], &h, 1e-9).len(), 3);
    }
}
