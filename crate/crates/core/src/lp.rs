//! Dense bounded-variable primal simplex.
//!
//! Solves `min c'x  s.t.  rows (<=, >=, =),  l <= x <= u` with finite lower
//! bounds. Upper bounds are handled implicitly (nonbasic variables sit at
//! either bound), so box constraints cost no tableau rows. Phase I minimizes
//! the sum of artificials; Dantzig pricing switches to Bland's rule after a
//! run of degenerate pivots. The final basis is refactored from the original
//! data so reported values do not carry accumulated pivoting error.

use thiserror::Error;

use crate::linalg::solve_dense;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowKind {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub coeffs: Vec<(usize, f64)>,
    pub kind: RowKind,
    pub rhs: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub rows: Vec<Row>,
}

impl LinearProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_var(&mut self, cost: f64, lower: f64, upper: f64) -> usize {
        assert!(lower.is_finite(), "lower bounds must be finite");
        self.objective.push(cost);
        self.lower.push(lower);
        self.upper.push(upper);
        self.objective.len() - 1
    }

    pub fn add_row(&mut self, coeffs: Vec<(usize, f64)>, kind: RowKind, rhs: f64) {
        self.rows.push(Row { coeffs, kind, rhs });
    }

    pub fn n_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    /// Largest violation of any row or bound at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst = 0.0f64;
        for (j, &v) in x.iter().enumerate() {
            worst = worst.max(self.lower[j] - v).max(v - self.upper[j]);
        }
        for r in &self.rows {
            let lhs: f64 = r.coeffs.iter().map(|&(j, a)| a * x[j]).sum();
            let v = match r.kind {
                RowKind::Le => lhs - r.rhs,
                RowKind::Ge => r.rhs - lhs,
                RowKind::Eq => (lhs - r.rhs).abs(),
            };
            worst = worst.max(v);
        }
        worst
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    /// Reduced cost of each variable at the final basis (zero when basic).
    pub reduced_costs: Vec<f64>,
    /// Reduced cost of each row's slack; zero for equality rows. A nonzero
    /// value means every optimal solution keeps the row tight.
    pub row_reduced_costs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LpError {
    #[error("linear program is infeasible")]
    Infeasible,
    #[error("linear program is unbounded")]
    Unbounded,
    #[error("simplex iteration limit reached")]
    IterationLimit,
    #[error("numerical failure: {0}")]
    Numerical(String),
}

#[derive(Debug, Clone, Copy)]
pub struct SimplexOptions {
    pub feasibility_tol: f64,
    pub optimality_tol: f64,
    pub pivot_tol: f64,
    pub max_iterations: usize,
    /// Consecutive degenerate pivots before switching to Bland's rule.
    pub bland_after: usize,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        Self {
            feasibility_tol: 1e-9,
            optimality_tol: 1e-10,
            pivot_tol: 1e-10,
            max_iterations: 200_000,
            bland_after: 50,
        }
    }
}

struct Tableau {
    m: usize,
    n: usize,
    /// Row-major `m x n`, equal to `B^-1 A`.
    t: Vec<f64>,
    /// Current values of basic variables.
    beta: Vec<f64>,
    /// Reduced costs.
    d: Vec<f64>,
    upper: Vec<f64>,
    at_upper: Vec<bool>,
    basis: Vec<usize>,
    is_basic: Vec<bool>,
    /// Columns that may not enter (artificials in phase II).
    blocked: Vec<bool>,
}

impl Tableau {
    fn col(&self, i: usize, j: usize) -> f64 {
        self.t[i * self.n + j]
    }

    fn nonbasic_value(&self, j: usize) -> f64 {
        if self.at_upper[j] {
            self.upper[j]
        } else {
            0.0
        }
    }

    fn price(&mut self, cost: &[f64]) {
        self.d.copy_from_slice(cost);
        for i in 0..self.m {
            let cb = cost[self.basis[i]];
            if cb != 0.0 {
                let row = &self.t[i * self.n..(i + 1) * self.n];
                for (dj, a) in self.d.iter_mut().zip(row) {
                    *dj -= cb * a;
                }
            }
        }
    }

    fn pivot(&mut self, r: usize, j: usize) {
        let n = self.n;
        let p = self.t[r * n + j];
        for k in 0..n {
            self.t[r * n + k] /= p;
        }
        self.t[r * n + j] = 1.0;
        let (before, rest) = self.t.split_at_mut(r * n);
        let (prow, after) = rest.split_at_mut(n);
        for row in before.chunks_exact_mut(n).chain(after.chunks_exact_mut(n)) {
            let f = row[j];
            if f != 0.0 {
                for (a, b) in row.iter_mut().zip(prow.iter()) {
                    *a -= f * b;
                }
                row[j] = 0.0;
            }
        }
        let f = self.d[j];
        if f != 0.0 {
            for (a, b) in self.d.iter_mut().zip(prow.iter()) {
                *a -= f * b;
            }
            self.d[j] = 0.0;
        }
        let leaving = self.basis[r];
        self.is_basic[leaving] = false;
        self.is_basic[j] = true;
        self.basis[r] = j;
    }

    /// Runs primal simplex iterations until optimal for the current
    /// reduced costs.
    fn iterate(&mut self, opts: &SimplexOptions, iterations: &mut usize) -> Result<(), LpError> {
        let mut degenerate_run = 0usize;
        let dscale = 1.0 + self.d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let dtol = opts.optimality_tol * dscale;
        loop {
            if *iterations >= opts.max_iterations {
                return Err(LpError::IterationLimit);
            }
            let bland = degenerate_run >= opts.bland_after;
            let mut entering: Option<(usize, f64)> = None;
            for j in 0..self.n {
                if self.is_basic[j] || self.blocked[j] || self.upper[j] <= 0.0 {
                    continue;
                }
                let dj = self.d[j];
                let improving = if self.at_upper[j] { dj > dtol } else { dj < -dtol };
                if !improving {
                    continue;
                }
                if bland {
                    entering = Some((j, dj));
                    break;
                }
                if entering.is_none_or(|(_, best)| dj.abs() > best.abs()) {
                    entering = Some((j, dj));
                }
            }
            let Some((j, _)) = entering else {
                return Ok(());
            };
            *iterations += 1;
            let dir = if self.at_upper[j] { -1.0 } else { 1.0 };

            // ratio test
            let mut t_max = self.upper[j];
            let mut leave: Option<(usize, bool)> = None;
            let mut best_pivot = 0.0f64;
            for i in 0..self.m {
                let a = self.col(i, j);
                if a.abs() <= opts.pivot_tol {
                    continue;
                }
                let rate = dir * a;
                let b = self.basis[i];
                let (limit, to_upper) = if rate > 0.0 {
                    (self.beta[i].max(0.0) / rate, false)
                } else if self.upper[b].is_finite() {
                    ((self.upper[b] - self.beta[i]).max(0.0) / -rate, true)
                } else {
                    continue;
                };
                let better = match leave {
                    None => limit < t_max,
                    Some((li, _)) => {
                        if limit < t_max - 1e-12 {
                            true
                        } else if limit <= t_max + 1e-12 {
                            if bland {
                                b < self.basis[li]
                            } else {
                                a.abs() > best_pivot
                            }
                        } else {
                            false
                        }
                    }
                };
                if better || (leave.is_none() && limit <= t_max) {
                    t_max = limit.min(t_max);
                    leave = Some((i, to_upper));
                    best_pivot = a.abs();
                }
            }
            if !t_max.is_finite() {
                return Err(LpError::Unbounded);
            }
            if t_max <= 1e-12 {
                degenerate_run += 1;
            } else {
                degenerate_run = 0;
            }
            let step = dir * t_max;
            for i in 0..self.m {
                let a = self.col(i, j);
                if a != 0.0 {
                    self.beta[i] -= a * step;
                }
            }
            match leave {
                None => {
                    // bound flip
                    self.at_upper[j] = !self.at_upper[j];
                }
                Some((r, to_upper)) => {
                    let entering_value = self.nonbasic_value(j) + step;
                    let leaving = self.basis[r];
                    self.at_upper[leaving] = to_upper;
                    self.at_upper[j] = false;
                    self.beta[r] = entering_value;
                    self.pivot(r, j);
                }
            }
        }
    }
}

/// Solves `lp` to optimality.
pub fn solve(lp: &LinearProgram, opts: &SimplexOptions) -> Result<LpSolution, LpError> {
    let n_struct = lp.n_vars();
    let m = lp.rows.len();
    for j in 0..n_struct {
        if lp.upper[j] < lp.lower[j] - opts.feasibility_tol {
            return Err(LpError::Infeasible);
        }
    }

    // shifted rhs, sign-normalized rows
    let mut sign = vec![1.0; m];
    let mut rhs = vec![0.0; m];
    for (i, r) in lp.rows.iter().enumerate() {
        let shift: f64 = r.coeffs.iter().map(|&(j, a)| a * lp.lower[j]).sum();
        rhs[i] = r.rhs - shift;
        if rhs[i] < 0.0 {
            sign[i] = -1.0;
            rhs[i] = -rhs[i];
        }
    }
    let n_slack = lp.rows.iter().filter(|r| r.kind != RowKind::Eq).count();
    let needs_artificial: Vec<bool> = lp
        .rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let slack_sign = match r.kind {
                RowKind::Le => 1.0,
                RowKind::Ge => -1.0,
                RowKind::Eq => 0.0,
            } * sign[i];
            slack_sign <= 0.0
        })
        .collect();
    let n_art = needs_artificial.iter().filter(|&&b| b).count();
    let n = n_struct + n_slack + n_art;

    // original normalized matrix, kept for the final refactorization
    let mut a = vec![0.0; m * n];
    let mut upper = vec![f64::INFINITY; n];
    let mut basis = vec![0usize; m];
    let mut slack_col = n_struct;
    let mut slack_of_row = vec![None; m];
    let mut art_col = n_struct + n_slack;
    for (i, r) in lp.rows.iter().enumerate() {
        for &(j, v) in &r.coeffs {
            a[i * n + j] += sign[i] * v;
        }
        if r.kind != RowKind::Eq {
            let s = if r.kind == RowKind::Le { 1.0 } else { -1.0 };
            a[i * n + slack_col] = sign[i] * s;
            slack_of_row[i] = Some(slack_col);
            if !needs_artificial[i] {
                basis[i] = slack_col;
            }
            slack_col += 1;
        }
        if needs_artificial[i] {
            a[i * n + art_col] = 1.0;
            basis[i] = art_col;
            art_col += 1;
        }
    }
    for j in 0..n_struct {
        upper[j] = lp.upper[j] - lp.lower[j];
    }

    let mut is_basic = vec![false; n];
    for &b in &basis {
        is_basic[b] = true;
    }
    let mut tab = Tableau {
        m,
        n,
        t: a.clone(),
        beta: rhs.clone(),
        d: vec![0.0; n],
        upper,
        at_upper: vec![false; n],
        basis,
        is_basic,
        blocked: vec![false; n],
    };
    let art_start = n_struct + n_slack;
    let mut iterations = 0usize;

    if n_art > 0 {
        let phase1: Vec<f64> = (0..n).map(|j| if j >= art_start { 1.0 } else { 0.0 }).collect();
        tab.price(&phase1);
        tab.iterate(opts, &mut iterations)?;
        let infeas: f64 = (0..m).filter(|&i| tab.basis[i] >= art_start).map(|i| tab.beta[i]).sum();
        let scale = 1.0 + rhs.iter().fold(0.0f64, |s, v| s.max(v.abs()));
        if infeas > opts.feasibility_tol * scale {
            return Err(LpError::Infeasible);
        }
        // drive remaining artificials out of the basis
        for r in 0..m {
            if tab.basis[r] < art_start {
                continue;
            }
            let best = (0..art_start)
                .filter(|&j| !tab.is_basic[j])
                .max_by(|&x, &y| tab.col(r, x).abs().total_cmp(&tab.col(r, y).abs()));
            if let Some(j) = best {
                if tab.col(r, j).abs() > 1e-9 {
                    let v = tab.nonbasic_value(j);
                    tab.pivot(r, j);
                    tab.beta[r] = v;
                    continue;
                }
            }
            // redundant row: the artificial stays basic, pinned at zero
        }
        for j in art_start..n {
            tab.upper[j] = 0.0;
            tab.blocked[j] = true;
        }
    }

    let mut cost = vec![0.0; n];
    cost[..n_struct].copy_from_slice(&lp.objective);
    tab.price(&cost);
    tab.iterate(opts, &mut iterations)?;

    // refactor: solve B xB = b - N xN on the original data
    let mut xs = vec![0.0; n];
    for j in 0..n {
        if !tab.is_basic[j] {
            xs[j] = tab.nonbasic_value(j);
        }
    }
    let mut bmat = vec![0.0; m * m];
    let mut b = rhs.clone();
    for i in 0..m {
        for j in 0..n {
            let v = a[i * n + j];
            if v != 0.0 && !tab.is_basic[j] {
                b[i] -= v * xs[j];
            }
        }
        for (k, &bj) in tab.basis.iter().enumerate() {
            bmat[i * m + k] = a[i * n + bj];
        }
    }
    match solve_dense(&mut bmat, &mut b, m) {
        Some(xb) => {
            for (k, &bj) in tab.basis.iter().enumerate() {
                xs[bj] = xb[k];
            }
        }
        None if m == 0 => {}
        None => {
            for (k, &bj) in tab.basis.iter().enumerate() {
                xs[bj] = tab.beta[k];
            }
        }
    }

    let x: Vec<f64> = (0..n_struct).map(|j| (lp.lower[j] + xs[j]).clamp(lp.lower[j], lp.upper[j])).collect();
    let viol = lp.max_violation(&x);
    let scale = 1.0 + lp.rows.iter().fold(0.0f64, |s, r| s.max(r.rhs.abs()));
    if viol > 1e-7 * scale {
        return Err(LpError::Numerical(format!("final solution violates constraints by {viol:e}")));
    }
    let reduced_costs = (0..n_struct).map(|j| if tab.is_basic[j] { 0.0 } else { tab.d[j] }).collect();
    let row_reduced_costs =
        slack_of_row.iter().map(|s| s.filter(|&j| !tab.is_basic[j]).map_or(0.0, |j| tab.d[j])).collect();
    Ok(LpSolution { objective: lp.objective_value(&x), x, iterations, reduced_costs, row_reduced_costs })
}
