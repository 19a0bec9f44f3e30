//! Two-phase primal simplex.
//!
//! [`solve_f64`] is a revised simplex over an explicit dense basis inverse
//! with rank-one updates and periodic refactorization. Pricing is Dantzig's
//! rule; after a run of degenerate pivots it switches to Bland's rule until
//! the objective moves again. [`solve_exact`] is a dense tableau over exact
//! rationals with Bland's rule throughout, used for certification and as a
//! fallback on small models.

use num::{Signed, Zero};
use thiserror::Error;

use crate::rational::Rational;

/// Primal feasibility tolerance.
pub const FEASIBILITY_TOL: f64 = 1e-7;
/// Reduced-cost optimality tolerance.
pub const REDUCED_COST_TOL: f64 = 1e-9;
const PIVOT_TOL: f64 = 1e-7;
const DEGENERATE_STEP: f64 = 1e-12;
const DEGENERATE_RUN_BEFORE_BLAND: usize = 64;
const REFACTOR_EVERY: usize = 512;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sense {
    Le,
    Ge,
    Eq,
}

impl Sense {
    fn flipped(self) -> Sense {
        match self {
            Sense::Le => Sense::Ge,
            Sense::Ge => Sense::Le,
            Sense::Eq => Sense::Eq,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Constraint<T> {
    pub coeffs: Vec<(usize, T)>,
    pub sense: Sense,
    pub rhs: T,
}

/// `min cost·x` subject to `rows`, `x ≥ 0`.
#[derive(Clone, Debug)]
pub struct Problem<T> {
    pub num_vars: usize,
    pub cost: Vec<T>,
    pub rows: Vec<Constraint<T>>,
}

#[derive(Clone, Debug)]
pub struct Optimum<T> {
    pub x: Vec<T>,
    pub objective: T,
    pub iterations: usize,
}

#[derive(Clone, Debug, Error, PartialEq)]
pub enum SimplexError {
    #[error("problem is infeasible")]
    Infeasible,
    #[error("problem is unbounded")]
    Unbounded,
    #[error("iteration limit {limit} exceeded (last objective {objective})")]
    IterationLimit { limit: usize, objective: f64 },
    #[error("numerical trouble: {0}")]
    Numerical(String),
}

/// Column layout after sign normalization: structurals, then one logical
/// (slack or surplus) per inequality, then one artificial per `=`/`≥` row.
struct Layout<T> {
    m: usize,
    total: usize,
    art_start: usize,
    /// Sparse columns.
    cols: Vec<Vec<(usize, T)>>,
    rhs: Vec<T>,
    basis: Vec<usize>,
}

fn standardize<T, F>(problem: &Problem<T>, is_zero: F) -> Result<Layout<T>, SimplexError>
where
    T: Clone + PartialOrd + Zero + std::ops::Neg<Output = T>,
    F: Fn(&T) -> bool,
{
    let n = problem.num_vars;
    let mut rows: Vec<(Vec<(usize, T)>, Sense, T)> = Vec::new();
    for row in &problem.rows {
        let coeffs: Vec<(usize, T)> = row
            .coeffs
            .iter()
            .filter(|(_, v)| !is_zero(v))
            .cloned()
            .collect();
        if coeffs.is_empty() {
            let zero = T::zero();
            let ok = match row.sense {
                Sense::Le => zero <= row.rhs || is_zero(&row.rhs),
                Sense::Ge => zero >= row.rhs || is_zero(&row.rhs),
                Sense::Eq => is_zero(&row.rhs),
            };
            if !ok {
                return Err(SimplexError::Infeasible);
            }
            continue;
        }
        if row.rhs < T::zero() {
            rows.push((
                coeffs.into_iter().map(|(j, v)| (j, -v)).collect(),
                row.sense.flipped(),
                -row.rhs.clone(),
            ));
        } else {
            rows.push((coeffs, row.sense, row.rhs.clone()));
        }
    }
    let m = rows.len();
    let logicals = rows.iter().filter(|r| r.1 != Sense::Eq).count();
    let art_start = n + logicals;
    let arts = rows.iter().filter(|r| r.1 != Sense::Le).count();
    let total = art_start + arts;

    let mut cols: Vec<Vec<(usize, T)>> = vec![Vec::new(); total];
    let mut basis = vec![0usize; m];
    let mut rhs = Vec::with_capacity(m);
    let (mut next_logical, mut next_art) = (n, art_start);
    for (r, (coeffs, sense, b)) in rows.into_iter().enumerate() {
        for (j, v) in coeffs {
            cols[j].push((r, v));
        }
        rhs.push(b);
        match sense {
            Sense::Le => {
                basis[r] = next_logical;
                next_logical += 1;
            }
            Sense::Ge => {
                next_logical += 1;
                basis[r] = next_art;
                next_art += 1;
            }
            Sense::Eq => {
                basis[r] = next_art;
                next_art += 1;
            }
        }
    }
    Ok(Layout {
        m,
        total,
        art_start,
        cols,
        rhs,
        basis,
    })
}

/// Fills in the ±1 entries of logical and artificial columns. Kept separate
/// from [`standardize`] so the numeric type needs no `One` bound there.
fn add_unit_columns<T: Clone>(
    layout: &mut Layout<T>,
    num_vars: usize,
    problem_rows: &[Sense],
    one: T,
    minus_one: T,
) {
    let mut logical = num_vars;
    let mut art = layout.art_start;
    for (r, sense) in problem_rows.iter().enumerate() {
        match sense {
            Sense::Le => {
                layout.cols[logical].push((r, one.clone()));
                logical += 1;
            }
            Sense::Ge => {
                layout.cols[logical].push((r, minus_one.clone()));
                logical += 1;
                layout.cols[art].push((r, one.clone()));
                art += 1;
            }
            Sense::Eq => {
                layout.cols[art].push((r, one.clone()));
                art += 1;
            }
        }
    }
}

/// Senses of the rows that survive [`standardize`], after sign flips.
fn normalized_senses<T, F>(problem: &Problem<T>, is_zero: F) -> Vec<Sense>
where
    T: PartialOrd + Zero,
    F: Fn(&T) -> bool,
{
    problem
        .rows
        .iter()
        .filter(|row| row.coeffs.iter().any(|(_, v)| !is_zero(v)))
        .map(|row| {
            if row.rhs < T::zero() {
                row.sense.flipped()
            } else {
                row.sense
            }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Floating point revised simplex

struct Revised {
    m: usize,
    total: usize,
    art_start: usize,
    cols: Vec<Vec<(usize, f64)>>,
    rhs: Vec<f64>,
    basis: Vec<usize>,
    /// Row of each basic column, `usize::MAX` when nonbasic.
    position: Vec<usize>,
    /// Dense row-major basis inverse.
    binv: Vec<f64>,
    xb: Vec<f64>,
    iterations: usize,
    since_refactor: usize,
    limit: usize,
}

impl Revised {
    fn refactor(&mut self) -> Result<(), SimplexError> {
        let m = self.m;
        let mut dense = vec![0.0; m * m];
        for (r, &col) in self.basis.iter().enumerate() {
            for &(i, v) in &self.cols[col] {
                dense[i * m + r] = v;
            }
        }
        self.binv = invert_dense(dense, m)
            .ok_or_else(|| SimplexError::Numerical("basis matrix became singular".into()))?;
        for i in 0..m {
            let row = &self.binv[i * m..(i + 1) * m];
            self.xb[i] = row.iter().zip(&self.rhs).map(|(a, b)| a * b).sum();
        }
        self.since_refactor = 0;
        Ok(())
    }

    fn duals(&self, cost: &[f64]) -> Vec<f64> {
        let m = self.m;
        let mut pi = vec![0.0; m];
        for (i, &col) in self.basis.iter().enumerate() {
            let c = cost[col];
            if c != 0.0 {
                let row = &self.binv[i * m..(i + 1) * m];
                for (p, b) in pi.iter_mut().zip(row) {
                    *p += c * b;
                }
            }
        }
        pi
    }

    fn objective(&self, cost: &[f64]) -> f64 {
        self.basis
            .iter()
            .zip(&self.xb)
            .map(|(&c, x)| cost[c] * x)
            .sum()
    }

    fn column_image(&self, q: usize) -> Vec<f64> {
        let m = self.m;
        let mut alpha = vec![0.0; m];
        for &(k, v) in &self.cols[q] {
            for (i, a) in alpha.iter_mut().enumerate() {
                let b = self.binv[i * m + k];
                if b != 0.0 {
                    *a += b * v;
                }
            }
        }
        alpha
    }

    fn pivot(&mut self, r: usize, q: usize, alpha: &[f64]) {
        let m = self.m;
        let piv = alpha[r];
        let (before, rest) = self.binv.split_at_mut(r * m);
        let (row_r, after) = rest.split_at_mut(m);
        for v in row_r.iter_mut() {
            *v /= piv;
        }
        for (i, chunk) in before.chunks_exact_mut(m).enumerate() {
            let a = alpha[i];
            if a != 0.0 {
                for (x, y) in chunk.iter_mut().zip(row_r.iter()) {
                    *x -= a * y;
                }
            }
        }
        for (off, chunk) in after.chunks_exact_mut(m).enumerate() {
            let a = alpha[r + 1 + off];
            if a != 0.0 {
                for (x, y) in chunk.iter_mut().zip(row_r.iter()) {
                    *x -= a * y;
                }
            }
        }
        self.position[self.basis[r]] = usize::MAX;
        self.basis[r] = q;
        self.position[q] = r;
    }

    fn run_phase(&mut self, cost: &[f64]) -> Result<(), SimplexError> {
        let m = self.m;
        let mut pi = self.duals(cost);
        let mut bland = false;
        let mut degenerate_run = 0usize;
        loop {
            if self.since_refactor >= REFACTOR_EVERY {
                self.refactor()?;
                pi = self.duals(cost);
            }
            if self.iterations >= self.limit {
                return Err(SimplexError::IterationLimit {
                    limit: self.limit,
                    objective: self.objective(cost),
                });
            }

            // pricing
            let mut entering = None;
            let mut best = -REDUCED_COST_TOL;
            for j in 0..self.art_start {
                if self.position[j] != usize::MAX {
                    continue;
                }
                let d = cost[j] - self.cols[j].iter().map(|&(i, v)| pi[i] * v).sum::<f64>();
                if d < best {
                    entering = Some((j, d));
                    if bland {
                        break;
                    }
                    best = d;
                }
            }
            let Some((q, dq)) = entering else {
                return Ok(());
            };

            let alpha = self.column_image(q);

            // ratio test
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..m {
                let a = alpha[i];
                let is_art = self.basis[i] >= self.art_start;
                let ratio = if a > PIVOT_TOL {
                    self.xb[i].max(0.0) / a
                } else if is_art && a < -PIVOT_TOL && self.xb[i] <= DEGENERATE_STEP {
                    // a zero-level artificial must not turn positive
                    0.0
                } else {
                    continue;
                };
                match leave {
                    None => leave = Some((i, ratio)),
                    Some((r, best_ratio)) => {
                        let better = if (ratio - best_ratio).abs() <= DEGENERATE_STEP {
                            if bland {
                                self.basis[i] < self.basis[r]
                            } else {
                                a.abs() > alpha[r].abs()
                            }
                        } else {
                            ratio < best_ratio
                        };
                        if better {
                            leave = Some((i, ratio));
                        }
                    }
                }
            }
            let Some((r, theta)) = leave else {
                return Err(SimplexError::Unbounded);
            };

            for i in 0..m {
                if alpha[i] != 0.0 {
                    self.xb[i] -= theta * alpha[i];
                }
            }
            self.xb[r] = theta;
            self.pivot(r, q, &alpha);
            let row_r = &self.binv[r * m..(r + 1) * m];
            for (p, b) in pi.iter_mut().zip(row_r) {
                *p += dq * b;
            }

            self.iterations += 1;
            self.since_refactor += 1;
            if theta <= DEGENERATE_STEP {
                degenerate_run += 1;
                if degenerate_run > DEGENERATE_RUN_BEFORE_BLAND {
                    bland = true;
                }
            } else {
                degenerate_run = 0;
                bland = false;
            }
        }
    }

    /// Pivots basic artificials out of the basis where some structural or
    /// logical column has a nonzero entry in their row.
    fn drive_out_artificials(&mut self) {
        let m = self.m;
        for r in 0..m {
            if self.basis[r] < self.art_start {
                continue;
            }
            let row = self.binv[r * m..(r + 1) * m].to_vec();
            let candidate = (0..self.art_start).find(|&j| {
                self.position[j] == usize::MAX
                    && self.cols[j]
                        .iter()
                        .map(|&(i, v)| row[i] * v)
                        .sum::<f64>()
                        .abs()
                        > 1e-7
            });
            if let Some(q) = candidate {
                let alpha = self.column_image(q);
                let theta = self.xb[r] / alpha[r];
                for i in 0..m {
                    self.xb[i] -= theta * alpha[i];
                }
                self.xb[r] = theta;
                self.pivot(r, q, &alpha);
            }
        }
    }
}

/// Gauss-Jordan inverse with partial pivoting; `None` if singular.
fn invert_dense(mut a: Vec<f64>, n: usize) -> Option<Vec<f64>> {
    let mut inv = vec![0.0; n * n];
    for i in 0..n {
        inv[i * n + i] = 1.0;
    }
    for col in 0..n {
        let pivot_row =
            (col..n).max_by(|&x, &y| a[x * n + col].abs().total_cmp(&a[y * n + col].abs()))?;
        if a[pivot_row * n + col].abs() < 1e-12 {
            return None;
        }
        if pivot_row != col {
            for k in 0..n {
                a.swap(pivot_row * n + k, col * n + k);
                inv.swap(pivot_row * n + k, col * n + k);
            }
        }
        let p = a[col * n + col];
        for k in 0..n {
            a[col * n + k] /= p;
            inv[col * n + k] /= p;
        }
        let a_row: Vec<f64> = a[col * n..(col + 1) * n].to_vec();
        let i_row: Vec<f64> = inv[col * n..(col + 1) * n].to_vec();
        for r in 0..n {
            if r == col {
                continue;
            }
            let f = a[r * n + col];
            if f != 0.0 {
                for k in 0..n {
                    a[r * n + k] -= f * a_row[k];
                    inv[r * n + k] -= f * i_row[k];
                }
            }
        }
    }
    Some(inv)
}

pub fn solve_f64(problem: &Problem<f64>) -> Result<Optimum<f64>, SimplexError> {
    let is_zero = |v: &f64| *v == 0.0;
    let senses = normalized_senses(problem, is_zero);
    let mut layout = standardize(problem, is_zero)?;
    add_unit_columns(&mut layout, problem.num_vars, &senses, 1.0, -1.0);
    let n = problem.num_vars;
    let m = layout.m;
    let mut position = vec![usize::MAX; layout.total];
    for (r, &b) in layout.basis.iter().enumerate() {
        position[b] = r;
    }
    let mut binv = vec![0.0; m * m];
    for i in 0..m {
        binv[i * m + i] = 1.0;
    }
    let limit = 50 * (m + layout.total) + 10_000;
    let mut s = Revised {
        m,
        total: layout.total,
        art_start: layout.art_start,
        xb: layout.rhs.clone(),
        cols: layout.cols,
        rhs: layout.rhs,
        basis: layout.basis,
        position,
        binv,
        iterations: 0,
        since_refactor: 0,
        limit,
    };

    if s.art_start < s.total {
        let mut phase1 = vec![0.0; s.total];
        for c in phase1.iter_mut().skip(s.art_start) {
            *c = 1.0;
        }
        s.run_phase(&phase1)?;
        s.refactor()?;
        let scale = 1.0 + s.rhs.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        if s.objective(&phase1) > FEASIBILITY_TOL * scale {
            return Err(SimplexError::Infeasible);
        }
        s.drive_out_artificials();
    }

    let mut cost = vec![0.0; s.total];
    cost[..n].copy_from_slice(&problem.cost);
    s.run_phase(&cost)?;
    s.refactor()?;
    // a refactorization can expose small primal infeasibilities; polish
    if s.xb.iter().any(|&v| v < -FEASIBILITY_TOL) {
        return Err(SimplexError::Numerical(
            "negative basic value after refactorization".into(),
        ));
    }
    s.run_phase(&cost)?;

    let mut x = vec![0.0; n];
    for (r, &col) in s.basis.iter().enumerate() {
        if col < n {
            x[col] = s.xb[r].max(0.0);
        }
    }
    let objective = x.iter().zip(&problem.cost).map(|(a, b)| a * b).sum();
    Ok(Optimum {
        x,
        objective,
        iterations: s.iterations,
    })
}

// ---------------------------------------------------------------------------
// Exact tableau

pub fn solve_exact(problem: &Problem<Rational>) -> Result<Optimum<Rational>, SimplexError> {
    let is_zero = |v: &Rational| v.is_zero();
    let senses = normalized_senses(problem, is_zero);
    let mut layout = standardize(problem, is_zero)?;
    let one = Rational::from_integer(1.into());
    add_unit_columns(&mut layout, problem.num_vars, &senses, one.clone(), -one);
    let n = problem.num_vars;
    let (m, total, art_start) = (layout.m, layout.total, layout.art_start);

    let mut tab = vec![vec![Rational::zero(); total]; m];
    for (j, col) in layout.cols.iter().enumerate() {
        for (i, v) in col {
            tab[*i][j] = v.clone();
        }
    }
    let mut rhs = layout.rhs;
    let mut basis = layout.basis;
    let mut iterations = 0usize;
    let limit = 200 * (m + total) + 10_000;

    let mut run = |cost: &[Rational],
                   tab: &mut Vec<Vec<Rational>>,
                   rhs: &mut Vec<Rational>,
                   basis: &mut Vec<usize>|
     -> Result<(), SimplexError> {
        loop {
            if iterations >= limit {
                return Err(SimplexError::IterationLimit {
                    limit,
                    objective: f64::NAN,
                });
            }
            let is_basic = {
                let mut v = vec![false; total];
                for &b in basis.iter() {
                    v[b] = true;
                }
                v
            };
            let entering = (0..art_start).find(|&j| {
                if is_basic[j] {
                    return false;
                }
                let mut d = cost[j].clone();
                for i in 0..m {
                    if !tab[i][j].is_zero() && !cost[basis[i]].is_zero() {
                        d -= &cost[basis[i]] * &tab[i][j];
                    }
                }
                d.is_negative()
            });
            let Some(q) = entering else {
                return Ok(());
            };
            let mut leave: Option<(usize, Rational)> = None;
            for i in 0..m {
                if tab[i][q].is_positive() {
                    let ratio = &rhs[i] / &tab[i][q];
                    let better = match &leave {
                        None => true,
                        Some((r, best)) => {
                            ratio < *best || (ratio == *best && basis[i] < basis[*r])
                        }
                    };
                    if better {
                        leave = Some((i, ratio));
                    }
                }
            }
            let Some((r, _)) = leave else {
                return Err(SimplexError::Unbounded);
            };
            exact_pivot(tab, rhs, r, q);
            basis[r] = q;
            iterations += 1;
        }
    };

    if art_start < total {
        let mut phase1 = vec![Rational::zero(); total];
        for c in phase1.iter_mut().skip(art_start) {
            *c = Rational::from_integer(1.into());
        }
        run(&phase1, &mut tab, &mut rhs, &mut basis)?;
        let infeasibility: Rational = basis
            .iter()
            .zip(&rhs)
            .filter(|(b, _)| **b >= art_start)
            .map(|(_, v)| v.clone())
            .sum();
        if infeasibility.is_positive() {
            return Err(SimplexError::Infeasible);
        }
        for r in 0..m {
            if basis[r] < art_start {
                continue;
            }
            if let Some(q) = (0..art_start).find(|&j| !basis.contains(&j) && !tab[r][j].is_zero()) {
                exact_pivot(&mut tab, &mut rhs, r, q);
                basis[r] = q;
            }
        }
    }

    let mut cost = vec![Rational::zero(); total];
    cost[..n].clone_from_slice(&problem.cost);
    run(&cost, &mut tab, &mut rhs, &mut basis)?;

    let mut x = vec![Rational::zero(); n];
    for (r, &col) in basis.iter().enumerate() {
        if col < n {
            x[col] = rhs[r].clone();
        }
    }
    let objective = x.iter().zip(&problem.cost).map(|(a, b)| a * b).sum();
    Ok(Optimum {
        x,
        objective,
        iterations,
    })
}

fn exact_pivot(tab: &mut [Vec<Rational>], rhs: &mut [Rational], r: usize, q: usize) {
    let piv = tab[r][q].clone();
    for v in tab[r].iter_mut() {
        if !v.is_zero() {
            *v /= &piv;
        }
    }
    rhs[r] /= &piv;
    let pivot_row = tab[r].clone();
    let pivot_rhs = rhs[r].clone();
    for i in 0..tab.len() {
        if i == r || tab[i][q].is_zero() {
            continue;
        }
        let f = tab[i][q].clone();
        for (v, p) in tab[i].iter_mut().zip(&pivot_row) {
            if !p.is_zero() {
                *v -= &f * p;
            }
        }
        rhs[i] -= &f * &pivot_rhs;
    }
}
