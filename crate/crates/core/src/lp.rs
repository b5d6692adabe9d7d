//! Dense two-phase simplex with Bland's rule. Variables are nonnegative.
//! Sized for per-node problems (a handful of assets and children).

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Sense {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub a: Vec<f64>,
    pub sense: Sense,
    pub b: f64,
}

impl Constraint {
    pub fn new(a: Vec<f64>, sense: Sense, b: f64) -> Constraint {
        Constraint { a, sense, b }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal { x: Vec<f64>, value: f64 },
    Infeasible,
    Unbounded,
}

impl LpOutcome {
    pub fn value(&self) -> Option<f64> {
        match self {
            LpOutcome::Optimal { value, .. } => Some(*value),
            _ => None,
        }
    }
}

const PIV_TOL: f64 = 1e-11;
const MAX_PIVOTS: usize = 100_000;

struct Tableau {
    rows: Vec<Vec<f64>>,
    basis: Vec<usize>,
    ncols: usize,
}

impl Tableau {
    fn pivot(&mut self, r: usize, c: usize) {
        let p = self.rows[r][c];
        for v in self.rows[r].iter_mut() {
            *v /= p;
        }
        let prow = self.rows[r].clone();
        for (k, row) in self.rows.iter_mut().enumerate() {
            if k == r {
                continue;
            }
            let f = row[c];
            if f != 0.0 {
                for (v, pv) in row.iter_mut().zip(&prow) {
                    *v -= f * pv;
                }
                row[c] = 0.0;
            }
        }
        self.basis[r] = c;
    }

    /// Maximize cost·z over columns with `allowed`. Returns false if unbounded.
    fn optimize(&mut self, cost: &[f64], allowed: &[bool]) -> bool {
        for _ in 0..MAX_PIVOTS {
            let mut enter = None;
            for j in 0..self.ncols {
                if !allowed[j] || self.basis.contains(&j) {
                    continue;
                }
                let mut d = cost[j];
                for (row, &b) in self.rows.iter().zip(&self.basis) {
                    d -= cost[b] * row[j];
                }
                if d > 1e-10 {
                    enter = Some(j);
                    break;
                }
            }
            let Some(c) = enter else { return true };
            let mut leave: Option<(usize, f64)> = None;
            for (r, row) in self.rows.iter().enumerate() {
                let a = row[c];
                if a > PIV_TOL {
                    let ratio = row[self.ncols] / a;
                    leave = match leave {
                        None => Some((r, ratio)),
                        Some((lr, lratio)) => {
                            if ratio < lratio - 1e-12 || (ratio <= lratio + 1e-12 && self.basis[r] < self.basis[lr]) {
                                Some((r, ratio))
                            } else {
                                Some((lr, lratio))
                            }
                        }
                    };
                }
            }
            match leave {
                None => return false,
                Some((r, _)) => self.pivot(r, c),
            }
        }
        true
    }
}

/// Maximize c·x subject to the constraints and x >= 0.
pub fn maximize(c: &[f64], constraints: &[Constraint]) -> LpOutcome {
    let n = c.len();
    let m = constraints.len();
    // column layout: x (n) | slack/surplus (one per inequality) | artificial (per Ge/Eq row)
    let mut slack_col = vec![None; m];
    let mut art_col = vec![None; m];
    let mut ncols = n;
    let mut norm: Vec<(Vec<f64>, Sense, f64)> = constraints
        .iter()
        .map(|k| {
            if k.b < 0.0 {
                let flip = match k.sense {
                    Sense::Le => Sense::Ge,
                    Sense::Ge => Sense::Le,
                    Sense::Eq => Sense::Eq,
                };
                (k.a.iter().map(|v| -v).collect(), flip, -k.b)
            } else {
                (k.a.clone(), k.sense, k.b)
            }
        })
        .collect();
    for (r, (_, sense, _)) in norm.iter().enumerate() {
        if *sense != Sense::Eq {
            slack_col[r] = Some(ncols);
            ncols += 1;
        }
    }
    let first_art = ncols;
    for (r, (_, sense, _)) in norm.iter().enumerate() {
        if *sense != Sense::Le {
            art_col[r] = Some(ncols);
            ncols += 1;
        }
    }
    let mut rows = vec![vec![0.0; ncols + 1]; m];
    let mut basis = vec![0; m];
    for (r, (a, sense, b)) in norm.iter_mut().enumerate() {
        rows[r][..n].copy_from_slice(&a[..n]);
        if let Some(s) = slack_col[r] {
            rows[r][s] = if *sense == Sense::Le { 1.0 } else { -1.0 };
        }
        if let Some(a) = art_col[r] {
            rows[r][a] = 1.0;
            basis[r] = a;
        } else {
            basis[r] = slack_col[r].unwrap();
        }
        rows[r][ncols] = *b;
    }
    let mut tab = Tableau { rows, basis, ncols };

    if first_art < ncols {
        let mut cost = vec![0.0; ncols];
        for c in cost.iter_mut().skip(first_art) {
            *c = -1.0;
        }
        tab.optimize(&cost, &vec![true; ncols]);
        let infeas: f64 = tab
            .rows
            .iter()
            .zip(&tab.basis)
            .filter(|(_, &b)| b >= first_art)
            .map(|(row, _)| row[ncols])
            .sum();
        let scale = 1.0 + norm.iter().map(|(_, _, b)| b.abs()).fold(0.0, f64::max);
        if infeas > 1e-9 * scale {
            return LpOutcome::Infeasible;
        }
        // drive remaining artificials out of the basis; redundant rows stay
        for r in 0..m {
            if tab.basis[r] >= first_art {
                if let Some(c) = (0..first_art).find(|&c| tab.rows[r][c].abs() > 1e-9 && !tab.basis.contains(&c)) {
                    tab.pivot(r, c);
                }
            }
        }
    }
    let mut cost = vec![0.0; ncols];
    cost[..n].copy_from_slice(c);
    let allowed: Vec<bool> = (0..ncols).map(|j| j < first_art).collect();
    if !tab.optimize(&cost, &allowed) {
        return LpOutcome::Unbounded;
    }
    let mut x = vec![0.0; n];
    for (row, &b) in tab.rows.iter().zip(&tab.basis) {
        if b < n {
            x[b] = row[ncols].max(0.0);
        }
    }
    let value = c.iter().zip(&x).map(|(c, x)| c * x).sum();
    LpOutcome::Optimal { x, value }
}
