//! Dense two-phase primal simplex.
//!
//! Solves
//!
//! ```text
//!     min  c'x
//!     s.t. a_i'x  {<=, =, >=}  rhs_i      for every row i
//!          l_j <= x_j <= u_j              per-variable bounds
//! ```
//!
//! Bounds use [`INF`] (1e30) as the infinity sentinel. Internally the problem
//! is rewritten over nonnegative variables (shift, negate, or split per
//! variable), rows gain slack and phase-1 artificial columns, and the full
//! tableau is updated in place. Pricing is Dantzig's rule; after 50 stalled
//! (degenerate) iterations the solver switches to Bland's rule, which
//! guarantees termination.
//!
//! Dual convention: for a minimization, duals of `<=` rows are nonpositive,
//! duals of `>=` rows nonnegative, duals of `=` rows free, and
//! `c'x* = duals'rhs + sum_j max(rc_j, 0) l_j + min(rc_j, 0) u_j` over the
//! finite bounds, where `rc` are the reduced costs reported alongside.

use crate::mat::Mat;
use serde::{Deserialize, Serialize};
use std::ops::Range;
use thiserror::Error;

/// Infinity sentinel for variable bounds.
pub const INF: f64 = 1e30;

const BOUND_IS_INF: f64 = 1e29;
const PIVOT_TOL: f64 = 1e-9;
const PIVOT_BREAKDOWN: f64 = 1e-12;
const STALL_LIMIT: usize = 50;
const REFACTOR_EVERY: usize = 32;

pub fn is_finite_bound(b: f64) -> bool {
    b.abs() < BOUND_IS_INF
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    Le,
    Eq,
    Ge,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub constraint_matrix: Mat,
    pub rhs: Vec<f64>,
    pub senses: Vec<Sense>,
    pub bounds: Vec<(f64, f64)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Clone, Debug)]
pub struct LpSolution {
    pub status: LpStatus,
    pub primal: Vec<f64>,
    /// One dual per constraint row (bound rows are folded into `reduced_costs`).
    pub duals: Vec<f64>,
    pub objective_value: f64,
    pub reduced_costs: Vec<f64>,
    /// Phase-1 row duals when infeasible, an improving ray when unbounded.
    pub certificate: Option<Vec<f64>>,
}

#[derive(Error, Debug)]
pub enum LpError {
    #[error("invalid program: {0}")]
    InvalidProgram(String),
    #[error("numerical breakdown: {0}")]
    NumericalBreakdown(String),
}

impl LinearProgram {
    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn num_rows(&self) -> usize {
        self.rhs.len()
    }

    pub fn validate(&self) -> Result<(), LpError> {
        let n = self.objective.len();
        let m = self.rhs.len();
        if self.constraint_matrix.cols() != n {
            return Err(LpError::InvalidProgram(format!(
                "constraint matrix has {} columns for {} variables",
                self.constraint_matrix.cols(),
                n
            )));
        }
        if self.constraint_matrix.rows() != m || self.senses.len() != m {
            return Err(LpError::InvalidProgram("row count mismatch".into()));
        }
        if self.bounds.len() != n {
            return Err(LpError::InvalidProgram("bounds length mismatch".into()));
        }
        for (j, &(l, u)) in self.bounds.iter().enumerate() {
            if l > u {
                return Err(LpError::InvalidProgram(format!("variable {j} has l > u")));
            }
            if l.is_nan() || u.is_nan() {
                return Err(LpError::InvalidProgram(format!("variable {j} has NaN bound")));
            }
        }
        Ok(())
    }
}

/// Incremental construction of a [`LinearProgram`] from sparse rows.
#[derive(Clone, Debug, Default)]
pub struct LpBuilder {
    objective: Vec<f64>,
    bounds: Vec<(f64, f64)>,
    rows: Vec<(Vec<(usize, f64)>, Sense, f64)>,
}

impl LpBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_var(&mut self, cost: f64, lower: f64, upper: f64) -> usize {
        self.objective.push(cost);
        self.bounds.push((lower, upper));
        self.objective.len() - 1
    }

    pub fn add_vars(&mut self, count: usize, cost: f64, lower: f64, upper: f64) -> Range<usize> {
        let start = self.objective.len();
        for _ in 0..count {
            self.add_var(cost, lower, upper);
        }
        start..start + count
    }

    pub fn set_cost(&mut self, var: usize, cost: f64) {
        self.objective[var] = cost;
    }

    pub fn set_bounds(&mut self, var: usize, lower: f64, upper: f64) {
        self.bounds[var] = (lower, upper);
    }

    pub fn add_row(&mut self, terms: &[(usize, f64)], sense: Sense, rhs: f64) {
        self.rows.push((terms.to_vec(), sense, rhs));
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn build(self) -> LinearProgram {
        let n = self.objective.len();
        let mut matrix = Mat::with_cols(n);
        let mut rhs = Vec::with_capacity(self.rows.len());
        let mut senses = Vec::with_capacity(self.rows.len());
        let mut dense = vec![0.0; n];
        for (terms, sense, r) in &self.rows {
            dense.iter_mut().for_each(|x| *x = 0.0);
            for &(j, a) in terms {
                dense[j] += a;
            }
            matrix.push_row(&dense);
            rhs.push(*r);
            senses.push(*sense);
        }
        LinearProgram { objective: self.objective, constraint_matrix: matrix, rhs, senses, bounds: self.bounds }
    }
}

/// Named, contiguous variable groups; keeps builder code and solution
/// extraction in sync.
#[derive(Clone, Debug, Default)]
pub struct VarLayout {
    groups: Vec<(String, Range<usize>)>,
}

impl VarLayout {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: &str, range: Range<usize>) {
        self.groups.push((name.to_string(), range));
    }

    pub fn range(&self, name: &str) -> Range<usize> {
        self.groups
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, r)| r.clone())
            .unwrap_or_else(|| panic!("no variable group named {name}"))
    }

    pub fn slice<'a>(&self, name: &str, x: &'a [f64]) -> &'a [f64] {
        &x[self.range(name)]
    }
}

pub fn solve(lp: &LinearProgram) -> Result<LpSolution, LpError> {
    solve_lp(lp, 1e-9)
}

pub fn solve_lp(lp: &LinearProgram, tol: f64) -> Result<LpSolution, LpError> {
    lp.validate()?;
    let first = Simplex::prepare(lp, tol.max(1e-12))?.run();
    if let Err(LpError::NumericalBreakdown(msg)) = &first {
        if msg.contains("refresh") {
            // Drift between refreshes walked the basis off the feasible set.
            // Refreshing nearly every pivot is slow but keeps it honest.
            let mut s = Simplex::prepare(lp, tol.max(1e-12))?;
            s.refactor_interval = 4;
            return s.run();
        }
    }
    first
}

#[derive(Clone, Debug)]
pub enum Feasibility {
    Feasible(Vec<f64>),
    Infeasible(FarkasEvidence),
}

/// Phase-1 outcome on an infeasible system: the leftover infeasibility mass
/// and the row duals that certify it.
#[derive(Clone, Debug)]
pub struct FarkasEvidence {
    pub infeasibility: f64,
    pub row_duals: Vec<f64>,
}

pub fn check_feasible(lp: &LinearProgram) -> Result<Feasibility, LpError> {
    let probe = LinearProgram { objective: vec![0.0; lp.num_vars()], ..lp.clone() };
    let sol = solve_lp(&probe, 1e-9)?;
    match sol.status {
        LpStatus::Infeasible => Ok(Feasibility::Infeasible(FarkasEvidence {
            infeasibility: sol.objective_value,
            row_duals: sol.certificate.unwrap_or_default(),
        })),
        _ => Ok(Feasibility::Feasible(sol.primal)),
    }
}

enum Transform {
    Fixed(f64),
    /// x = lower + z, z >= 0; finite upper handled by an extra bound row.
    Shift { col: usize, lower: f64 },
    /// x = upper - z, z >= 0.
    Negate { col: usize, upper: f64 },
    /// x = z_pos - z_neg.
    Split { pos: usize, neg: usize },
}

enum RowOrigin {
    Constraint(usize),
    Bound(usize),
}

struct Simplex {
    tol: f64,
    n_orig: usize,
    objective: Vec<f64>,
    transforms: Vec<Transform>,
    total_cols: usize,
    art_start: usize,
    tableau: Vec<Vec<f64>>,
    b: Vec<f64>,
    basis: Vec<usize>,
    /// Column that started as the identity column of each row.
    idcol: Vec<usize>,
    row_sign: Vec<f64>,
    row_origin: Vec<RowOrigin>,
    costs: Vec<f64>,
    n_constraints: usize,
    bounds: Vec<(f64, f64)>,
    orig_matrix: Mat,
    /// Untouched copy of the standard-form rows, for basis refreshes.
    pristine: Vec<Vec<f64>>,
    pristine_b: Vec<f64>,
    refactor_interval: usize,
    pivots_since_refresh: usize,
}

enum CoreOutcome {
    Optimal,
    Unbounded { entering: usize },
}

impl Simplex {
    fn prepare(lp: &LinearProgram, tol: f64) -> Result<Self, LpError> {
        let n = lp.num_vars();
        let m0 = lp.num_rows();

        let mut transforms = Vec::with_capacity(n);
        let mut n_struct = 0usize;
        for &(l, u) in &lp.bounds {
            let lf = is_finite_bound(l);
            let uf = is_finite_bound(u);
            let t = if lf && uf && (u - l).abs() == 0.0 {
                Transform::Fixed(l)
            } else if lf {
                let col = n_struct;
                n_struct += 1;
                Transform::Shift { col, lower: l }
            } else if uf {
                let col = n_struct;
                n_struct += 1;
                Transform::Negate { col, upper: u }
            } else {
                let pos = n_struct;
                n_struct += 2;
                Transform::Split { pos, neg: pos + 1 }
            };
            transforms.push(t);
        }

        // Rows in std space: constraint rows, then upper-bound rows for
        // shifted variables with a finite upper bound.
        let mut std_rows: Vec<(Vec<f64>, Sense, f64)> = Vec::with_capacity(m0 + n);
        let mut row_origin = Vec::with_capacity(m0 + n);
        for i in 0..m0 {
            let arow = lp.constraint_matrix.row(i);
            let mut dense = vec![0.0; n_struct];
            let mut rhs = lp.rhs[i];
            for (j, &a) in arow.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                match transforms[j] {
                    Transform::Fixed(v) => rhs -= a * v,
                    Transform::Shift { col, lower } => {
                        dense[col] += a;
                        rhs -= a * lower;
                    }
                    Transform::Negate { col, upper } => {
                        dense[col] -= a;
                        rhs -= a * upper;
                    }
                    Transform::Split { pos, neg } => {
                        dense[pos] += a;
                        dense[neg] -= a;
                    }
                }
            }
            std_rows.push((dense, lp.senses[i], rhs));
            row_origin.push(RowOrigin::Constraint(i));
        }
        for (j, t) in transforms.iter().enumerate() {
            if let Transform::Shift { col, lower } = t {
                let u = lp.bounds[j].1;
                if is_finite_bound(u) {
                    let mut dense = vec![0.0; n_struct];
                    dense[*col] = 1.0;
                    std_rows.push((dense, Sense::Le, u - lower));
                    row_origin.push(RowOrigin::Bound(j));
                }
            }
        }

        let m = std_rows.len();
        let n_slack = std_rows.iter().filter(|(_, s, _)| *s != Sense::Eq).count();
        // Artificial columns are allocated per row but only rows without a
        // usable slack take one into the initial basis; unused ones are
        // harmless zero columns that never price in.
        let art_start = n_struct + n_slack;
        let total_cols = art_start + m;

        let mut tableau = Vec::with_capacity(m);
        let mut b = Vec::with_capacity(m);
        let mut basis = Vec::with_capacity(m);
        let mut idcol = Vec::with_capacity(m);
        let mut row_sign = Vec::with_capacity(m);

        let mut slack_cursor = n_struct;
        for (i, (dense, sense, rhs)) in std_rows.iter().enumerate() {
            let mut row = vec![0.0; total_cols];
            row[..n_struct].copy_from_slice(dense);
            let slack_col = match sense {
                Sense::Le => {
                    let c = slack_cursor;
                    slack_cursor += 1;
                    row[c] = 1.0;
                    Some(c)
                }
                Sense::Ge => {
                    let c = slack_cursor;
                    slack_cursor += 1;
                    row[c] = -1.0;
                    Some(c)
                }
                Sense::Eq => None,
            };
            let mut rhs = *rhs;
            let sign = if rhs < 0.0 {
                rhs = -rhs;
                row.iter_mut().for_each(|x| *x = -*x);
                -1.0
            } else {
                1.0
            };
            let basic = match slack_col {
                Some(c) if row[c] == 1.0 => c,
                _ => {
                    let c = art_start + i;
                    row[c] = 1.0;
                    c
                }
            };
            tableau.push(row);
            b.push(rhs);
            basis.push(basic);
            // The initial basic column of a row is exactly the column that
            // starts as e_i, which is what dual recovery reads later.
            idcol.push(basic);
            row_sign.push(sign);
        }

        Ok(Simplex {
            tol,
            n_orig: n,
            objective: lp.objective.clone(),
            transforms,
            total_cols,
            art_start,
            pristine: tableau.clone(),
            pristine_b: b.clone(),
            tableau,
            b,
            basis,
            idcol,
            row_sign,
            row_origin,
            costs: vec![0.0; total_cols],
            n_constraints: m0,
            bounds: lp.bounds.clone(),
            orig_matrix: lp.constraint_matrix.clone(),
            refactor_interval: REFACTOR_EVERY.max(m / 2),
            pivots_since_refresh: 0,
        })
    }

    fn run(mut self) -> Result<LpSolution, LpError> {
        let needs_phase1 = self.basis.iter().any(|&c| c >= self.art_start);
        if needs_phase1 {
            for c in self.art_start..self.total_cols {
                self.costs[c] = 1.0;
            }
            let outcome = self.iterate(true)?;
            if matches!(outcome, CoreOutcome::Unbounded { .. }) {
                return Err(LpError::NumericalBreakdown("phase 1 reported unbounded".into()));
            }
            let bscale = 1.0 + self.b.iter().fold(0.0f64, |a, &x| a.max(x.abs()));
            let infeas: f64 = self
                .basis
                .iter()
                .zip(&self.b)
                .filter(|(&c, _)| c >= self.art_start)
                .map(|(_, &bi)| bi)
                .sum();
            if infeas > 1e-9 * bscale {
                return Ok(self.infeasible_solution(infeas));
            }
            self.drive_out_artificials();
        }

        self.costs = self.phase2_costs();
        let outcome = self.iterate(false)?;
        match outcome {
            CoreOutcome::Optimal => Ok(self.optimal_solution()),
            CoreOutcome::Unbounded { entering } => Ok(self.unbounded_solution(entering)),
        }
    }

    fn phase2_costs(&self) -> Vec<f64> {
        let mut costs = vec![0.0; self.total_cols];
        for (j, t) in self.transforms.iter().enumerate() {
            let c = self.objective[j];
            match *t {
                Transform::Fixed(_) => {}
                Transform::Shift { col, .. } => costs[col] += c,
                Transform::Negate { col, .. } => costs[col] -= c,
                Transform::Split { pos, neg } => {
                    costs[pos] += c;
                    costs[neg] -= c;
                }
            }
        }
        costs
    }

    /// Runs the simplex core for the current cost vector. In phase 2 the
    /// artificial columns are barred from entering.
    fn iterate(&mut self, phase1: bool) -> Result<CoreOutcome, LpError> {
        let m = self.tableau.len();
        let allowed_cols = if phase1 { self.total_cols } else { self.art_start };
        let mut rc = self.reduced_costs_row();
        let mut bland = false;
        let mut stalled = 0usize;
        let limit = 10_000 + 100 * (m + self.total_cols);

        for iteration in 0.. {
            if iteration > limit {
                return Err(LpError::NumericalBreakdown(format!(
                    "iteration limit {limit} exceeded"
                )));
            }
            if self.pivots_since_refresh >= self.refactor_interval {
                self.refresh_basis()?;
                rc = self.reduced_costs_row();
            }

            let entering = if bland {
                (0..allowed_cols).find(|&j| rc[j] < -self.tol)
            } else {
                let mut best: Option<(usize, f64)> = None;
                for (j, &r) in rc.iter().enumerate().take(allowed_cols) {
                    if r < -self.tol && best.map_or(true, |(_, br)| r < br) {
                        best = Some((j, r));
                    }
                }
                best.map(|(j, _)| j)
            };
            let Some(jc) = entering else {
                if self.pivots_since_refresh > 0 {
                    self.refresh_basis()?;
                    rc = self.reduced_costs_row();
                    continue;
                }
                return Ok(CoreOutcome::Optimal);
            };

            let mut leave: Option<(usize, f64)> = None;
            let mut max_col_entry = 0.0f64;
            for i in 0..m {
                let a = self.tableau[i][jc];
                max_col_entry = max_col_entry.max(a);
                if a > PIVOT_TOL {
                    let ratio = self.b[i].max(0.0) / a;
                    match leave {
                        None => leave = Some((i, ratio)),
                        Some((li, lr)) => {
                            let tie = (ratio - lr).abs() <= 1e-9 * (1.0 + lr.abs());
                            if ratio < lr - 1e-12 || (tie && self.basis[i] < self.basis[li]) {
                                leave = Some((i, ratio));
                            }
                        }
                    }
                }
            }
            let Some((ir, ratio)) = leave else {
                if self.pivots_since_refresh > 0 {
                    self.refresh_basis()?;
                    rc = self.reduced_costs_row();
                    continue;
                }
                if phase1 {
                    // The phase 1 objective is bounded below by zero, so a
                    // priced-in column without a usable pivot is roundoff in
                    // the reduced cost, not a ray. Retire the column; a later
                    // pivot that changes it genuinely can price it back in.
                    rc[jc] = 0.0;
                    continue;
                }
                if max_col_entry > PIVOT_BREAKDOWN {
                    return Err(LpError::NumericalBreakdown(format!(
                        "pivot candidates in column {jc} all below {PIVOT_TOL:e}"
                    )));
                }
                return Ok(CoreOutcome::Unbounded { entering: jc });
            };

            if ratio <= 1e-10 {
                stalled += 1;
                if stalled >= STALL_LIMIT {
                    bland = true;
                }
            } else {
                stalled = 0;
            }

            self.pivot(ir, jc, &mut rc);
        }
        unreachable!()
    }

    fn pivot(&mut self, ir: usize, jc: usize, rc: &mut [f64]) {
        let piv = self.tableau[ir][jc];
        let inv = 1.0 / piv;
        for x in self.tableau[ir].iter_mut() {
            *x *= inv;
        }
        self.b[ir] *= inv;

        let pivot_row = std::mem::take(&mut self.tableau[ir]);
        let pivot_b = self.b[ir];
        for i in 0..self.tableau.len() {
            if i == ir {
                continue;
            }
            let f = self.tableau[i][jc];
            if f != 0.0 {
                let row = &mut self.tableau[i];
                for (x, p) in row.iter_mut().zip(&pivot_row) {
                    *x -= f * p;
                }
                row[jc] = 0.0;
                self.b[i] -= f * pivot_b;
                if self.b[i] < 0.0 && self.b[i] > -1e-11 {
                    self.b[i] = 0.0;
                }
            }
        }
        let f = rc[jc];
        if f != 0.0 {
            for (x, p) in rc.iter_mut().zip(&pivot_row) {
                *x -= f * p;
            }
            rc[jc] = 0.0;
        }
        self.tableau[ir] = pivot_row;
        self.basis[ir] = jc;
        self.pivots_since_refresh += 1;
    }

    /// Rebuilds the tableau for the current basis from the pristine rows.
    ///
    /// Long pivot runs over rows of very different magnitude let roundoff
    /// pile up in the dense tableau, and the basic solution can drift off
    /// the constraint set while every individual pivot still looks healthy.
    /// One fresh elimination pass (full pivoting over the basic columns)
    /// resets that drift, so verdicts are only issued on a tableau at most
    /// one elimination old.
    fn refresh_basis(&mut self) -> Result<(), LpError> {
        let m = self.tableau.len();
        let mut t = self.pristine.clone();
        let mut b = self.pristine_b.clone();
        let mut cols = self.basis.clone();
        let mut rows: Vec<usize> = (0..m).collect();
        let mut new_basis = vec![0usize; m];
        while let Some((ci, ri)) = {
            let mut best: Option<(usize, usize, f64)> = None;
            for (a, &c) in cols.iter().enumerate() {
                for (d, &r) in rows.iter().enumerate() {
                    let v = t[r][c].abs();
                    if best.map_or(true, |(_, _, bv)| v > bv) {
                        best = Some((a, d, v));
                    }
                }
            }
            match best {
                Some((_, _, v)) if v < PIVOT_BREAKDOWN => {
                    return Err(LpError::NumericalBreakdown(
                        "singular basis during refresh".into(),
                    ));
                }
                other => other.map(|(a, d, _)| (a, d)),
            }
        } {
            let c = cols.swap_remove(ci);
            let r = rows.swap_remove(ri);
            new_basis[r] = c;
            let inv = 1.0 / t[r][c];
            for x in t[r].iter_mut() {
                *x *= inv;
            }
            b[r] *= inv;
            let prow = std::mem::take(&mut t[r]);
            let pb = b[r];
            for i in 0..m {
                if i == r {
                    continue;
                }
                let f = t[i][c];
                if f != 0.0 {
                    for (x, p) in t[i].iter_mut().zip(&prow) {
                        *x -= f * p;
                    }
                    t[i][c] = 0.0;
                    b[i] -= f * pb;
                }
            }
            t[r] = prow;
        }
        let bscale = 1.0 + b.iter().fold(0.0f64, |a, &x| a.max(x.abs()));
        if b.iter().any(|&x| x < -1e-6 * bscale) {
            return Err(LpError::NumericalBreakdown(
                "basis infeasible after refresh".into(),
            ));
        }
        self.tableau = t;
        self.b = b;
        self.basis = new_basis;
        self.pivots_since_refresh = 0;
        Ok(())
    }

    fn reduced_costs_row(&self) -> Vec<f64> {
        let mut rc = self.costs.clone();
        for (i, &bi) in self.basis.iter().enumerate() {
            let cb = self.costs[bi];
            if cb != 0.0 {
                for (r, a) in rc.iter_mut().zip(&self.tableau[i]) {
                    *r -= cb * a;
                }
            }
        }
        rc
    }

    fn drive_out_artificials(&mut self) {
        let mut i = 0;
        while i < self.tableau.len() {
            if self.basis[i] < self.art_start {
                i += 1;
                continue;
            }
            let pivot_col = (0..self.art_start).find(|&j| self.tableau[i][j].abs() > 1e-7);
            match pivot_col {
                Some(jc) => {
                    self.b[i] = 0.0;
                    let mut rc = vec![0.0; self.total_cols];
                    self.pivot(i, jc, &mut rc);
                    i += 1;
                }
                None => {
                    // Redundant row: every structural and slack coefficient is
                    // eliminated, so the constraint is implied by the others.
                    self.tableau.remove(i);
                    self.b.remove(i);
                    self.basis.remove(i);
                    self.idcol.remove(i);
                    self.row_sign.remove(i);
                    self.row_origin.remove(i);
                    self.pristine.remove(i);
                    self.pristine_b.remove(i);
                }
            }
        }
    }

    fn current_primal(&self) -> Vec<f64> {
        let mut z = vec![0.0; self.total_cols];
        for (i, &bi) in self.basis.iter().enumerate() {
            z[bi] = self.b[i];
        }
        let mut x = vec![0.0; self.n_orig];
        for (j, t) in self.transforms.iter().enumerate() {
            x[j] = match *t {
                Transform::Fixed(v) => v,
                Transform::Shift { col, lower } => lower + z[col],
                Transform::Negate { col, upper } => upper - z[col],
                Transform::Split { pos, neg } => z[pos] - z[neg],
            };
            let (l, u) = self.bounds[j];
            if is_finite_bound(l) {
                x[j] = x[j].max(l);
            }
            if is_finite_bound(u) {
                x[j] = x[j].min(u);
            }
        }
        x
    }

    /// Row duals of the current tableau under `costs`, reported per original
    /// constraint row. Bound-row duals are returned separately by variable.
    fn extract_duals(&self, costs: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut constraint_duals = vec![0.0; self.n_constraints];
        let mut bound_duals = vec![0.0; self.n_orig];
        for (i, origin) in self.row_origin.iter().enumerate() {
            let col = self.idcol[i];
            let mut y = 0.0;
            for (r, &bvar) in self.basis.iter().enumerate() {
                let cb = costs[bvar];
                if cb != 0.0 {
                    y += cb * self.tableau[r][col];
                }
            }
            y *= self.row_sign[i];
            match origin {
                RowOrigin::Constraint(k) => constraint_duals[*k] = y,
                RowOrigin::Bound(j) => bound_duals[*j] = y,
            }
        }
        (constraint_duals, bound_duals)
    }

    /// Reduced costs in the original space, `c - A'y` over constraint rows.
    /// A tight upper bound shows up as a negative entry, a tight lower bound
    /// as a positive one, matching the usual bounded-variable convention.
    fn reduced_costs_original(&self, duals: &[f64]) -> Vec<f64> {
        let mut rc = self.objective.clone();
        let backed = self.orig_matrix.tr_mul_vec(duals);
        for j in 0..self.n_orig {
            rc[j] -= backed[j];
        }
        rc
    }

    fn optimal_solution(self) -> LpSolution {
        let primal = self.current_primal();
        let (duals, _) = self.extract_duals(&self.costs);
        let reduced_costs = self.reduced_costs_original(&duals);
        let objective_value = crate::mat::dot(&self.objective, &primal);
        LpSolution { status: LpStatus::Optimal, primal, duals, objective_value, reduced_costs, certificate: None }
    }

    fn infeasible_solution(self, infeas: f64) -> LpSolution {
        let (duals, _) = self.extract_duals(&self.costs);
        let reduced_costs = self.reduced_costs_original(&duals);
        LpSolution {
            status: LpStatus::Infeasible,
            primal: self.current_primal(),
            duals: duals.clone(),
            objective_value: infeas,
            reduced_costs,
            certificate: Some(duals),
        }
    }

    fn unbounded_solution(self, entering: usize) -> LpSolution {
        let mut dz = vec![0.0; self.total_cols];
        dz[entering] = 1.0;
        for (i, &bi) in self.basis.iter().enumerate() {
            dz[bi] = -self.tableau[i][entering];
        }
        let mut ray = vec![0.0; self.n_orig];
        for (j, t) in self.transforms.iter().enumerate() {
            ray[j] = match *t {
                Transform::Fixed(_) => 0.0,
                Transform::Shift { col, .. } => dz[col],
                Transform::Negate { col, .. } => -dz[col],
                Transform::Split { pos, neg } => dz[pos] - dz[neg],
            };
        }
        LpSolution {
            status: LpStatus::Unbounded,
            primal: self.current_primal(),
            duals: vec![0.0; self.n_constraints],
            objective_value: -INF,
            reduced_costs: vec![0.0; self.n_orig],
            certificate: Some(ray),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn lp(
        objective: Vec<f64>,
        rows: Vec<(Vec<f64>, Sense, f64)>,
        bounds: Vec<(f64, f64)>,
    ) -> LinearProgram {
        let n = objective.len();
        let mut matrix = Mat::with_cols(n);
        let mut rhs = Vec::new();
        let mut senses = Vec::new();
        for (row, sense, r) in rows {
            matrix.push_row(&row);
            senses.push(sense);
            rhs.push(r);
        }
        LinearProgram { objective, constraint_matrix: matrix, rhs, senses, bounds }
    }

    #[test]
    fn single_variable_with_ge_row() {
        let p = lp(vec![1.0], vec![(vec![1.0], Sense::Ge, 1.0)], vec![(0.0, INF)]);
        let s = solve(&p).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.objective_value - 1.0).abs() < 1e-9);
        assert!((s.primal[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn contradictory_row_and_bound_is_infeasible() {
        let p = lp(vec![0.0], vec![(vec![1.0], Sense::Le, -1.0)], vec![(0.0, INF)]);
        let s = solve(&p).unwrap();
        assert_eq!(s.status, LpStatus::Infeasible);
        assert!(s.objective_value > 1e-9);
        assert!(s.certificate.is_some());
    }

    #[test]
    fn simplex_face_optimum_and_row_dual() {
        // min -x - y over x + y <= 1 in the nonnegative quadrant. The three
        // vertices are (0,0), (1,0), (0,1); the best objective is -1 and the
        // row dual under the min convention is -1.
        let p = lp(
            vec![-1.0, -1.0],
            vec![(vec![1.0, 1.0], Sense::Le, 1.0)],
            vec![(0.0, INF), (0.0, INF)],
        );
        let s = solve(&p).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.objective_value + 1.0).abs() < 1e-9);
        assert!((s.duals[0] + 1.0).abs() < 1e-9);
    }

    #[test]
    fn equality_row_dual_is_free_and_positive_here() {
        let p = lp(
            vec![1.0, 1.0],
            vec![(vec![1.0, 1.0], Sense::Eq, 1.0)],
            vec![(0.0, INF), (0.0, INF)],
        );
        let s = solve(&p).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.objective_value - 1.0).abs() < 1e-9);
        assert!((s.duals[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn free_variable_reaches_negative_bound_row() {
        let p = lp(vec![1.0], vec![(vec![-1.0], Sense::Le, 5.0)], vec![(-INF, INF)]);
        let s = solve(&p).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.objective_value + 5.0).abs() < 1e-9);
    }

    #[test]
    fn unbounded_direction_reported_with_ray() {
        let p = lp(vec![-1.0], vec![(vec![-1.0], Sense::Le, 0.0)], vec![(-INF, INF)]);
        let s = solve(&p).unwrap();
        assert_eq!(s.status, LpStatus::Unbounded);
        let ray = s.certificate.unwrap();
        assert!(ray[0] > 0.0);
    }

    #[test]
    fn check_feasible_examples() {
        let p = lp(
            vec![0.0, 0.0],
            vec![(vec![1.0, 1.0], Sense::Ge, 1.0)],
            vec![(0.0, 1.0), (0.0, 1.0)],
        );
        match check_feasible(&p).unwrap() {
            Feasibility::Feasible(x) => assert!(x[0] + x[1] >= 1.0 - 1e-9),
            Feasibility::Infeasible(_) => panic!("should be feasible"),
        }

        let p = lp(
            vec![0.0],
            vec![(vec![1.0], Sense::Ge, 2.0), (vec![1.0], Sense::Le, 1.0)],
            vec![(0.0, INF)],
        );
        match check_feasible(&p).unwrap() {
            Feasibility::Feasible(_) => panic!("should be infeasible"),
            Feasibility::Infeasible(ev) => {
                assert!(ev.infeasibility > 0.5);
                assert_eq!(ev.row_duals.len(), 2);
            }
        }
    }

    #[test]
    fn fixed_variables_fold_into_constants() {
        let p = lp(
            vec![1.0, 3.0],
            vec![(vec![1.0, 1.0], Sense::Ge, 4.0)],
            vec![(0.0, INF), (2.0, 2.0)],
        );
        let s = solve(&p).unwrap();
        assert!((s.primal[1] - 2.0).abs() < 1e-12);
        assert!((s.objective_value - 8.0).abs() < 1e-9);
    }

    // Brute-force oracle: enumerate all vertices given by n-subsets of tight
    // constraints (rows plus finite bounds) and keep the feasible ones.
    fn vertex_oracle_min(p: &LinearProgram) -> Option<f64> {
        let n = p.num_vars();
        let mut planes: Vec<(Vec<f64>, f64)> = Vec::new();
        for i in 0..p.num_rows() {
            planes.push((p.constraint_matrix.row(i).to_vec(), p.rhs[i]));
        }
        for (j, &(l, u)) in p.bounds.iter().enumerate() {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            if is_finite_bound(l) {
                planes.push((e.clone(), l));
            }
            if is_finite_bound(u) {
                planes.push((e, u));
            }
        }
        let mut best: Option<f64> = None;
        let idx: Vec<usize> = (0..planes.len()).collect();
        for combo in combinations(&idx, n) {
            let mut a: Vec<Vec<f64>> = combo.iter().map(|&i| planes[i].0.clone()).collect();
            let mut rhs: Vec<f64> = combo.iter().map(|&i| planes[i].1).collect();
            if let Some(x) = gauss_solve(&mut a, &mut rhs) {
                if point_feasible(p, &x, 1e-7) {
                    let obj = crate::mat::dot(&p.objective, &x);
                    best = Some(best.map_or(obj, |b: f64| b.min(obj)));
                }
            }
        }
        best
    }

    fn combinations(items: &[usize], k: usize) -> Vec<Vec<usize>> {
        if k == 0 {
            return vec![vec![]];
        }
        if items.len() < k {
            return vec![];
        }
        let mut out = Vec::new();
        for rest in combinations(&items[1..], k - 1) {
            let mut c = vec![items[0]];
            c.extend(rest);
            out.push(c);
        }
        out.extend(combinations(&items[1..], k));
        out
    }

    fn gauss_solve(a: &mut [Vec<f64>], b: &mut [f64]) -> Option<Vec<f64>> {
        let n = b.len();
        for col in 0..n {
            let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
            if a[piv][col].abs() < 1e-10 {
                return None;
            }
            a.swap(col, piv);
            b.swap(col, piv);
            for i in 0..n {
                if i != col {
                    let f = a[i][col] / a[col][col];
                    if f != 0.0 {
                        for j in col..n {
                            a[i][j] -= f * a[col][j];
                        }
                        b[i] -= f * b[col];
                    }
                }
            }
        }
        Some((0..n).map(|i| b[i] / a[i][i]).collect())
    }

    fn point_feasible(p: &LinearProgram, x: &[f64], tol: f64) -> bool {
        if x.iter().any(|v| !v.is_finite()) {
            return false;
        }
        for (j, &(l, u)) in p.bounds.iter().enumerate() {
            if is_finite_bound(l) && x[j] < l - tol {
                return false;
            }
            if is_finite_bound(u) && x[j] > u + tol {
                return false;
            }
        }
        let ax = p.constraint_matrix.mul_vec(x);
        for i in 0..p.num_rows() {
            let ok = match p.senses[i] {
                Sense::Le => ax[i] <= p.rhs[i] + tol,
                Sense::Ge => ax[i] >= p.rhs[i] - tol,
                Sense::Eq => (ax[i] - p.rhs[i]).abs() <= tol,
            };
            if !ok {
                return false;
            }
        }
        true
    }

    fn random_feasible_lp(rng: &mut ChaCha8Rng, degenerate: bool) -> LinearProgram {
        let n = rng.random_range(1..=4usize);
        let m = rng.random_range(1..=(8 - n).max(1)).min(8);
        let interior: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..1.8)).collect();
        let mut rows = Vec::new();
        for _ in 0..m {
            let a: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0f64)).collect();
            let lhs = crate::mat::dot(&a, &interior);
            let slack = if degenerate && rng.random_bool(0.4) {
                0.0
            } else {
                rng.random_range(0.1..1.5)
            };
            rows.push((a, Sense::Le, lhs + slack));
        }
        if degenerate && m >= 2 {
            rows[1] = rows[0].clone();
        }
        let objective: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let bounds = vec![(0.0, 2.0); n];
        LinearProgram {
            objective,
            constraint_matrix: Mat::from_rows(&rows.iter().map(|r| r.0.clone()).collect::<Vec<_>>()).unwrap(),
            rhs: rows.iter().map(|r| r.2).collect(),
            senses: rows.iter().map(|_| Sense::Le).collect(),
            bounds,
        }
    }

    #[test]
    fn randomized_suite_matches_vertex_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for case in 0..200 {
            let p = random_feasible_lp(&mut rng, case % 3 == 0);
            let s = solve(&p).unwrap();
            assert_eq!(s.status, LpStatus::Optimal, "case {case}");
            assert!(point_feasible(&p, &s.primal, 1e-8), "case {case} infeasible point");

            let oracle = vertex_oracle_min(&p).expect("bounded feasible LP has a vertex");
            assert!(
                (s.objective_value - oracle).abs() <= 1e-7 * (1.0 + oracle.abs()),
                "case {case}: solver {} oracle {}",
                s.objective_value,
                oracle
            );
        }
    }

    #[test]
    fn randomized_suite_satisfies_strong_duality() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for case in 0..200 {
            let p = random_feasible_lp(&mut rng, case % 4 == 0);
            let s = solve(&p).unwrap();
            assert_eq!(s.status, LpStatus::Optimal);

            for (i, &d) in s.duals.iter().enumerate() {
                match p.senses[i] {
                    Sense::Le => assert!(d <= 1e-7, "case {case} row {i} dual sign"),
                    Sense::Ge => assert!(d >= -1e-7, "case {case} row {i} dual sign"),
                    Sense::Eq => {}
                }
            }

            let mut dual_bound = crate::mat::dot(&s.duals, &p.rhs);
            for (j, &(l, u)) in p.bounds.iter().enumerate() {
                let rc = s.reduced_costs[j];
                if rc > 0.0 {
                    assert!(is_finite_bound(l));
                    dual_bound += rc * l;
                } else if rc < 0.0 {
                    assert!(is_finite_bound(u));
                    dual_bound += rc * u;
                }
            }
            let gap = (s.objective_value - dual_bound).abs();
            assert!(
                gap <= 1e-6 * (1.0 + s.objective_value.abs()),
                "case {case}: duality gap {gap}"
            );

            // Complementary slackness on constraint rows.
            let ax = p.constraint_matrix.mul_vec(&s.primal);
            for i in 0..p.num_rows() {
                let slack = p.rhs[i] - ax[i];
                assert!(
                    (s.duals[i] * slack).abs() <= 1e-5 * (1.0 + s.objective_value.abs()),
                    "case {case} row {i} complementary slackness"
                );
            }
        }
    }

    #[test]
    fn builder_assembles_sparse_rows_densely() {
        let mut b = LpBuilder::new();
        let x = b.add_var(1.0, 0.0, INF);
        let y = b.add_var(2.0, 0.0, INF);
        b.add_row(&[(x, 1.0), (y, 1.0), (y, 1.0)], Sense::Ge, 4.0);
        let p = b.build();
        assert_eq!(p.constraint_matrix.row(0), &[1.0, 2.0]);
        let s = solve(&p).unwrap();
        assert!((s.objective_value - 4.0).abs() < 1e-9);
    }
}
