//! Dense bounded-variable primal simplex.
//!
//! Solves `min c'x` subject to linear rows (`<=`, `>=`, `=`) and per-variable
//! bounds `l <= x <= u`, where each variable has at least one finite bound.
//! Phase 1 starts from an all-artificial basis; phase 2 pins the artificials to
//! zero. Pricing is Dantzig's rule, falling back to Bland's smallest-index rule
//! after a run of degenerate pivots.

use thiserror::Error;

const FEAS_TOL: f64 = 1e-9;
const OPT_TOL: f64 = 1e-9;
const PIVOT_TOL: f64 = 1e-11;
const DEGENERATE_RUN: usize = 50;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LpError {
    #[error("problem is infeasible")]
    Infeasible,
    #[error("problem is unbounded")]
    Unbounded,
    #[error("iteration limit reached")]
    IterationLimit,
    #[error("malformed problem: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowKind {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub coefs: Vec<(usize, f64)>,
    pub kind: RowKind,
    pub rhs: f64,
    pub name: String,
}

/// A linear program in minimisation form.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LinearProgram {
    pub cost: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub names: Vec<String>,
    pub rows: Vec<Row>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
}

impl LinearProgram {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a variable and returns its column index.
    pub fn add_var(&mut self, name: impl Into<String>, cost: f64, lower: f64, upper: f64) -> usize {
        self.cost.push(cost);
        self.lower.push(lower);
        self.upper.push(upper);
        self.names.push(name.into());
        self.cost.len() - 1
    }

    pub fn add_row(
        &mut self,
        name: impl Into<String>,
        coefs: Vec<(usize, f64)>,
        kind: RowKind,
        rhs: f64,
    ) {
        self.rows.push(Row {
            coefs,
            kind,
            rhs,
            name: name.into(),
        });
    }

    pub fn n_vars(&self) -> usize {
        self.cost.len()
    }

    pub fn objective_at(&self, x: &[f64]) -> f64 {
        self.cost.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    /// Largest violation of any row or bound at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst = 0.0f64;
        for (j, v) in x.iter().enumerate() {
            worst = worst.max(self.lower[j] - v).max(v - self.upper[j]);
        }
        for row in &self.rows {
            let lhs: f64 = row.coefs.iter().map(|(j, a)| a * x[*j]).sum();
            let gap = match row.kind {
                RowKind::Le => lhs - row.rhs,
                RowKind::Ge => row.rhs - lhs,
                RowKind::Eq => (lhs - row.rhs).abs(),
            };
            worst = worst.max(gap);
        }
        worst
    }

    pub fn solve(&self) -> Result<LpSolution, LpError> {
        let limit = 50 * (self.n_vars() + 2 * self.rows.len()) + 1000;
        self.solve_with_limit(limit)
    }

    pub fn solve_with_limit(&self, max_iter: usize) -> Result<LpSolution, LpError> {
        self.check()?;
        let mut tab = Tableau::new(self);
        tab.run(self, max_iter)?;
        let x: Vec<f64> = tab.values[..self.n_vars()]
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(v, (l, u))| v.clamp(*l, *u))
            .collect();
        Ok(LpSolution {
            objective: self.objective_at(&x),
            x,
            iterations: tab.iterations,
        })
    }

    fn check(&self) -> Result<(), LpError> {
        let n = self.n_vars();
        if self.lower.len() != n || self.upper.len() != n {
            return Err(LpError::Malformed("bound vectors differ in length".into()));
        }
        for j in 0..n {
            let (l, u) = (self.lower[j], self.upper[j]);
            if l.is_nan() || u.is_nan() || !self.cost[j].is_finite() {
                return Err(LpError::Malformed(format!("variable {j} has NaN data")));
            }
            if !l.is_finite() && !u.is_finite() {
                return Err(LpError::Malformed(format!("variable {j} is free")));
            }
            if l > u {
                return Err(LpError::Infeasible);
            }
        }
        for row in &self.rows {
            if !row.rhs.is_finite() || row.coefs.iter().any(|(j, a)| *j >= n || !a.is_finite()) {
                return Err(LpError::Malformed(format!("row {} is malformed", row.name)));
            }
        }
        Ok(())
    }

    /// Writes the problem in CPLEX LP text format.
    pub fn to_lp_format(&self) -> String {
        use std::fmt::Write;
        let term = |out: &mut String, a: f64, name: &str, first: bool| {
            let sign = if a < 0.0 { "-" } else if first { "" } else { "+" };
            let _ = write!(out, " {sign} {} {name}", a.abs());
        };
        let mut out = String::from("Minimize\n obj:");
        let mut first = true;
        for (j, c) in self.cost.iter().enumerate() {
            if *c != 0.0 {
                term(&mut out, *c, &self.names[j], first);
                first = false;
            }
        }
        if first {
            out.push_str(" 0");
        }
        out.push_str("\nSubject To\n");
        for row in &self.rows {
            let _ = write!(out, " {}:", row.name);
            let mut first = true;
            for (j, a) in &row.coefs {
                term(&mut out, *a, &self.names[*j], first);
                first = false;
            }
            let op = match row.kind {
                RowKind::Le => "<=",
                RowKind::Ge => ">=",
                RowKind::Eq => "=",
            };
            let _ = writeln!(out, " {op} {}", row.rhs);
        }
        out.push_str("Bounds\n");
        for j in 0..self.n_vars() {
            let (l, u) = (self.lower[j], self.upper[j]);
            let name = &self.names[j];
            match (l.is_finite(), u.is_finite()) {
                (true, true) if l == u => {
                    let _ = writeln!(out, " {name} = {l}");
                }
                (true, true) => {
                    let _ = writeln!(out, " {l} <= {name} <= {u}");
                }
                (true, false) => {
                    let _ = writeln!(out, " {name} >= {l}");
                }
                (false, true) => {
                    let _ = writeln!(out, " -inf <= {name} <= {u}");
                }
                (false, false) => {
                    let _ = writeln!(out, " {name} free");
                }
            }
        }
        out.push_str("End\n");
        out
    }
}

/// Full dense tableau `B^-1 [A | I | D]` over structural, slack and artificial
/// columns.
struct Tableau {
    m: usize,
    ncols: usize,
    n_struct: usize,
    t: Vec<f64>,
    values: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    cost: Vec<f64>,
    reduced: Vec<f64>,
    basis: Vec<usize>,
    is_basic: Vec<bool>,
    iterations: usize,
}

impl Tableau {
    fn new(lp: &LinearProgram) -> Self {
        let n = lp.n_vars();
        let m = lp.rows.len();
        let ncols = n + 2 * m;
        let mut t = vec![0.0; m * ncols];
        let mut lower = lp.lower.clone();
        let mut upper = lp.upper.clone();
        lower.resize(ncols, 0.0);
        upper.resize(ncols, 0.0);
        let mut values = vec![0.0; ncols];
        for j in 0..n {
            values[j] = if lower[j].is_finite() { lower[j] } else { upper[j] };
        }
        for (i, row) in lp.rows.iter().enumerate() {
            let r = &mut t[i * ncols..(i + 1) * ncols];
            for (j, a) in &row.coefs {
                r[*j] += a;
            }
            let s = n + i;
            r[s] = 1.0;
            let (sl, su) = match row.kind {
                RowKind::Le => (0.0, f64::INFINITY),
                RowKind::Ge => (f64::NEG_INFINITY, 0.0),
                RowKind::Eq => (0.0, 0.0),
            };
            lower[s] = sl;
            upper[s] = su;
            values[s] = 0.0;
            let residual: f64 = row.rhs - r[..n].iter().zip(&values[..n]).map(|(a, v)| a * v).sum::<f64>();
            let a = n + m + i;
            let sign = if residual < 0.0 { -1.0 } else { 1.0 };
            r[a] = sign;
            lower[a] = 0.0;
            upper[a] = f64::INFINITY;
            values[a] = residual.abs();
            // Normalise so the artificial column is the unit vector.
            if sign < 0.0 {
                for v in r.iter_mut() {
                    *v = -*v;
                }
            }
        }
        let mut cost = vec![0.0; ncols];
        for c in &mut cost[n + m..] {
            *c = 1.0;
        }
        let basis: Vec<usize> = (0..m).map(|i| n + m + i).collect();
        let mut is_basic = vec![false; ncols];
        for &b in &basis {
            is_basic[b] = true;
        }
        let mut tab = Self {
            m,
            ncols,
            n_struct: n,
            t,
            values,
            lower,
            upper,
            cost,
            reduced: vec![0.0; ncols],
            basis,
            is_basic,
            iterations: 0,
        };
        tab.price_all();
        tab
    }

    fn price_all(&mut self) {
        for j in 0..self.ncols {
            let mut d = self.cost[j];
            for i in 0..self.m {
                d -= self.cost[self.basis[i]] * self.t[i * self.ncols + j];
            }
            self.reduced[j] = d;
        }
    }

    fn run(&mut self, lp: &LinearProgram, max_iter: usize) -> Result<(), LpError> {
        self.iterate(max_iter)?;
        let n = self.n_struct;
        let m = self.m;
        let infeasibility: f64 = self.values[n + m..].iter().sum();
        let scale = 1.0 + lp.rows.iter().fold(0.0f64, |a, r| a.max(r.rhs.abs()));
        if infeasibility > 1e-7 * scale {
            return Err(LpError::Infeasible);
        }
        for a in n + m..self.ncols {
            self.upper[a] = 0.0;
            self.values[a] = 0.0;
        }
        self.cost.iter_mut().for_each(|c| *c = 0.0);
        self.cost[..n].copy_from_slice(&lp.cost);
        self.price_all();
        self.iterate(max_iter)
    }

    fn iterate(&mut self, max_iter: usize) -> Result<(), LpError> {
        let mut degenerate = 0usize;
        loop {
            if self.iterations >= max_iter {
                return Err(LpError::IterationLimit);
            }
            let bland = degenerate >= DEGENERATE_RUN;
            let Some((q, dir)) = self.choose_entering(bland) else {
                return Ok(());
            };
            let step = self.ratio_test(q, dir, bland)?;
            self.iterations += 1;
            if step.theta <= FEAS_TOL {
                degenerate += 1;
            } else {
                degenerate = 0;
            }
            self.apply(q, dir, step);
        }
    }

    fn choose_entering(&self, bland: bool) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        let mut best_score = 0.0;
        for j in 0..self.ncols {
            if self.is_basic[j] || self.lower[j] == self.upper[j] {
                continue;
            }
            let d = self.reduced[j];
            let v = self.values[j];
            let dir = if d < -OPT_TOL && v < self.upper[j] - FEAS_TOL {
                1.0
            } else if d > OPT_TOL && v > self.lower[j] + FEAS_TOL {
                -1.0
            } else {
                continue;
            };
            if bland {
                return Some((j, dir));
            }
            if d.abs() > best_score {
                best_score = d.abs();
                best = Some((j, dir));
            }
        }
        best
    }

    fn ratio_test(&self, q: usize, dir: f64, bland: bool) -> Result<Step, LpError> {
        let mut theta = self.upper[q] - self.lower[q];
        let mut leave: Option<(usize, bool)> = None;
        let mut pivot_mag = 0.0;
        for i in 0..self.m {
            let alpha = dir * self.t[i * self.ncols + q];
            if alpha.abs() <= PIVOT_TOL {
                continue;
            }
            let b = self.basis[i];
            let (limit, to_upper) = if alpha > 0.0 {
                if !self.lower[b].is_finite() {
                    continue;
                }
                (((self.values[b] - self.lower[b]) / alpha).max(0.0), false)
            } else {
                if !self.upper[b].is_finite() {
                    continue;
                }
                (((self.upper[b] - self.values[b]) / -alpha).max(0.0), true)
            };
            if limit < theta - FEAS_TOL || (leave.is_none() && limit < theta) {
                theta = limit;
                leave = Some((i, to_upper));
                pivot_mag = alpha.abs();
            } else if let Some((r, _)) = leave {
                if limit <= theta + FEAS_TOL {
                    let take = if bland {
                        b < self.basis[r]
                    } else {
                        alpha.abs() > pivot_mag
                    };
                    if take {
                        theta = theta.min(limit);
                        leave = Some((i, to_upper));
                        pivot_mag = alpha.abs();
                    }
                }
            }
        }
        if !theta.is_finite() {
            return Err(LpError::Unbounded);
        }
        Ok(Step { theta, leave })
    }

    fn apply(&mut self, q: usize, dir: f64, step: Step) {
        let nc = self.ncols;
        let theta = step.theta;
        if theta > 0.0 {
            self.values[q] += dir * theta;
            for i in 0..self.m {
                let b = self.basis[i];
                self.values[b] -= dir * theta * self.t[i * nc + q];
            }
        }
        let Some((r, to_upper)) = step.leave else {
            // Bound flip: the entering variable moved across its whole range.
            self.values[q] = if dir > 0.0 { self.upper[q] } else { self.lower[q] };
            return;
        };
        let leaving = self.basis[r];
        self.values[leaving] = if to_upper { self.upper[leaving] } else { self.lower[leaving] };

        let piv = self.t[r * nc + q];
        {
            let row = &mut self.t[r * nc..(r + 1) * nc];
            for v in row.iter_mut() {
                *v /= piv;
            }
            row[q] = 1.0;
        }
        let pivot_row: Vec<f64> = self.t[r * nc..(r + 1) * nc].to_vec();
        for i in 0..self.m {
            if i == r {
                continue;
            }
            let f = self.t[i * nc + q];
            if f == 0.0 {
                continue;
            }
            let row = &mut self.t[i * nc..(i + 1) * nc];
            for (v, p) in row.iter_mut().zip(&pivot_row) {
                *v -= f * p;
            }
            row[q] = 0.0;
        }
        let f = self.reduced[q];
        if f != 0.0 {
            for (d, p) in self.reduced.iter_mut().zip(&pivot_row) {
                *d -= f * p;
            }
            self.reduced[q] = 0.0;
        }
        self.is_basic[leaving] = false;
        self.is_basic[q] = true;
        self.basis[r] = q;
    }
}

#[derive(Debug, Clone, Copy)]
struct Step {
    theta: f64,
    leave: Option<(usize, bool)>,
}
