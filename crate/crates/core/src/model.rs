//! Two-stage problem data and helpers.
//!
//! The canonical form is
//!
//! ```text
//!     min_x  c'x + max_v min_y  b'y
//!     s.t.   A x <= q
//!            T x + W y + M v  {<=, =}  h    row-wise
//! ```
//!
//! with `x` partly binary and `y` free. Bounds on recourse variables are
//! expressed as explicit linking rows (e.g. `-y_j <= 0`), which keeps the
//! dualization used by the subproblem builder uniform.
//!
//! [`stack_mpc`] compiles a finite-horizon linear control problem into this
//! shape: open-loop inputs become the first stage, disturbances become `v`,
//! and per-step state bounds become linking rows, optionally softened by
//! penalized slacks so that recourse stays feasible for every disturbance.

use crate::lp::{self, LinearProgram, LpError, LpStatus, Sense, INF};
use crate::mat::Mat;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TwoStageProblem {
    pub first_stage_cost: Vec<f64>,
    pub recourse_cost: Vec<f64>,
    /// Rows over `x` only, all `<=`.
    pub first_stage_matrix: Mat,
    pub first_stage_rhs: Vec<f64>,
    pub link_x: Mat,
    pub link_y: Mat,
    pub link_v: Mat,
    pub link_rhs: Vec<f64>,
    pub link_senses: Vec<Sense>,
    pub x_binary: Vec<bool>,
    pub x_bounds: Vec<(f64, f64)>,
    pub uncertainty_dim: usize,
}

#[derive(Error, Debug)]
pub enum ModelError {
    #[error("{field}: expected {expected} {unit}, got {got}")]
    DimensionMismatch { field: &'static str, expected: usize, got: usize, unit: &'static str },
    #[error("{field} contains a non-finite entry")]
    NonFinite { field: &'static str },
    #[error("x_bounds[{0}] must lie inside [0, 1] for a binary variable")]
    BadBinaryBound(usize),
    #[error("link_senses[{0}] must be <= or =")]
    BadLinkSense(usize),
}

impl TwoStageProblem {
    pub fn num_x(&self) -> usize {
        self.first_stage_cost.len()
    }

    pub fn num_y(&self) -> usize {
        self.recourse_cost.len()
    }

    pub fn num_links(&self) -> usize {
        self.link_rhs.len()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let nx = self.num_x();
        let ny = self.num_y();
        let ml = self.num_links();

        let dims: [(&'static str, usize, usize, &'static str); 8] = [
            ("first_stage_matrix", self.first_stage_matrix.cols(), nx, "columns"),
            ("first_stage_rhs", self.first_stage_rhs.len(), self.first_stage_matrix.rows(), "entries"),
            ("link_x", self.link_x.cols(), nx, "columns"),
            ("link_y", self.link_y.cols(), ny, "columns"),
            ("link_v", self.link_v.cols(), self.uncertainty_dim, "columns"),
            ("link_x rows", self.link_x.rows(), ml, "rows"),
            ("link_y rows", self.link_y.rows(), ml, "rows"),
            ("link_v rows", self.link_v.rows(), ml, "rows"),
        ];
        for (field, got, expected, unit) in dims {
            if got != expected {
                return Err(ModelError::DimensionMismatch { field, expected, got, unit });
            }
        }
        if self.link_senses.len() != ml {
            return Err(ModelError::DimensionMismatch {
                field: "link_senses",
                expected: ml,
                got: self.link_senses.len(),
                unit: "entries",
            });
        }
        if self.x_binary.len() != nx {
            return Err(ModelError::DimensionMismatch {
                field: "x_binary",
                expected: nx,
                got: self.x_binary.len(),
                unit: "entries",
            });
        }
        if self.x_bounds.len() != nx {
            return Err(ModelError::DimensionMismatch {
                field: "x_bounds",
                expected: nx,
                got: self.x_bounds.len(),
                unit: "entries",
            });
        }

        let finite = |field: &'static str, xs: &[f64]| {
            if xs.iter().all(|v| v.is_finite()) {
                Ok(())
            } else {
                Err(ModelError::NonFinite { field })
            }
        };
        finite("first_stage_cost", &self.first_stage_cost)?;
        finite("recourse_cost", &self.recourse_cost)?;
        finite("first_stage_rhs", &self.first_stage_rhs)?;
        finite("link_rhs", &self.link_rhs)?;

        for (j, &b) in self.x_binary.iter().enumerate() {
            if b {
                let (l, u) = self.x_bounds[j];
                if l < -1e-9 || u > 1.0 + 1e-9 {
                    return Err(ModelError::BadBinaryBound(j));
                }
            }
        }
        for (i, s) in self.link_senses.iter().enumerate() {
            if *s == Sense::Ge {
                return Err(ModelError::BadLinkSense(i));
            }
        }
        Ok(())
    }

    /// The inner LP `min b'y s.t. W y {<=,=} h - T x - M v` with `y` free.
    pub fn recourse_lp(&self, x: &[f64], v: &[f64]) -> LinearProgram {
        let tx = self.link_x.mul_vec(x);
        let mv = self.link_v.mul_vec(v);
        let rhs: Vec<f64> = self
            .link_rhs
            .iter()
            .zip(tx.iter().zip(&mv))
            .map(|(&h, (&a, &b))| h - a - b)
            .collect();
        LinearProgram {
            objective: self.recourse_cost.clone(),
            constraint_matrix: self.link_y.clone(),
            rhs,
            senses: self.link_senses.clone(),
            bounds: vec![(-INF, INF); self.num_y()],
        }
    }
}

#[derive(Clone, Debug)]
pub struct RecourseEval {
    pub cost: f64,
    pub y: Vec<f64>,
}

#[derive(Error, Debug)]
pub enum RecourseError {
    #[error("recourse infeasible at the given (x, v); phase-1 residual {0:.3e}")]
    RecourseInfeasible(f64),
    #[error("inner minimization is unbounded below")]
    InnerUnbounded,
    #[error(transparent)]
    Lp(#[from] LpError),
}

pub fn evaluate_recourse(problem: &TwoStageProblem, x: &[f64], v: &[f64]) -> Result<RecourseEval, RecourseError> {
    let sol = lp::solve(&problem.recourse_lp(x, v))?;
    match sol.status {
        LpStatus::Optimal => Ok(RecourseEval { cost: sol.objective_value, y: sol.primal }),
        LpStatus::Infeasible => Err(RecourseError::RecourseInfeasible(sol.objective_value)),
        LpStatus::Unbounded => Err(RecourseError::InnerUnbounded),
    }
}

/// Finite-horizon linear system `s_{t+1} = Phi s_t + Gu u_t + Gv v_t`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LinearDynamics {
    pub state_matrix: Mat,
    pub input_matrix: Mat,
    pub disturbance_matrix: Mat,
    pub initial_state: Vec<f64>,
    pub horizon: usize,
    pub input_cost: Vec<f64>,
    pub state_cost: Vec<f64>,
    pub input_bounds: Vec<(f64, f64)>,
    /// Bounds on the state after steps 1..=horizon; use [`INF`] for none.
    pub state_bounds: Vec<Vec<(f64, f64)>>,
    /// When set, every state bound gets a nonnegative slack at this cost per
    /// unit of violation, so recourse is feasible for any disturbance.
    pub state_slack_penalty: Option<f64>,
}

/// Compiles the control problem into the two-stage form: open-loop inputs
/// `u_0..u_{N-1}` are the first stage, per-step disturbances are `v`, state
/// bounds (plus slacks and, for a nonzero state cost, one epigraph variable)
/// are the recourse side.
pub fn stack_mpc(dynamics: &LinearDynamics) -> TwoStageProblem {
    let n = dynamics.horizon;
    let ns = dynamics.state_matrix.rows();
    let nu = dynamics.input_matrix.cols();
    let nv = dynamics.disturbance_matrix.cols();
    assert_eq!(dynamics.state_matrix.cols(), ns);
    assert_eq!(dynamics.input_matrix.rows(), ns);
    assert_eq!(dynamics.disturbance_matrix.rows(), ns);
    assert_eq!(dynamics.initial_state.len(), ns);
    assert_eq!(dynamics.state_bounds.len(), n);

    // Influence of u_tau / v_tau on s_t (t = 1..=n): Phi^(t-1-tau) Gu.
    // powers[k] = Phi^k.
    let mut powers: Vec<Mat> = Vec::with_capacity(n);
    powers.push(Mat::identity(ns));
    for _ in 1..n {
        powers.push(dynamics.state_matrix.mul(powers.last().unwrap()));
    }
    let u_influence: Vec<Mat> = powers.iter().map(|p| p.mul(&dynamics.input_matrix)).collect();
    let v_influence: Vec<Mat> = powers.iter().map(|p| p.mul(&dynamics.disturbance_matrix)).collect();

    // Deterministic drift Phi^t s0.
    let mut drift: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    drift.push(dynamics.initial_state.clone());
    for t in 1..=n {
        drift.push(dynamics.state_matrix.mul_vec(&drift[t - 1]));
    }

    let nx = nu * n;
    let first_stage_cost: Vec<f64> = (0..n).flat_map(|_| dynamics.input_cost.iter().copied()).collect();
    let x_bounds: Vec<(f64, f64)> = (0..n).flat_map(|_| dynamics.input_bounds.iter().copied()).collect();

    let use_epigraph = dynamics.state_cost.iter().any(|&c| c != 0.0);
    let penalty = dynamics.state_slack_penalty;

    // Recourse variables: optional epigraph for the state cost, then one
    // slack per finite state bound when softening is on.
    let mut recourse_cost: Vec<f64> = Vec::new();
    let epi = if use_epigraph {
        recourse_cost.push(1.0);
        Some(0usize)
    } else {
        None
    };

    struct PendingRow {
        t_row: Vec<f64>,
        y_terms: Vec<(usize, f64)>,
        v_row: Vec<f64>,
        rhs: f64,
        sense: Sense,
    }
    let mut rows: Vec<PendingRow> = Vec::new();

    // s_t(x, v) coefficient rows for a single state coordinate.
    let state_rows = |t: usize, i: usize| -> (Vec<f64>, Vec<f64>, f64) {
        let mut ux = vec![0.0; nx];
        let mut vx = vec![0.0; nv * n];
        for tau in 0..t {
            let infl = &u_influence[t - 1 - tau];
            for j in 0..nu {
                ux[tau * nu + j] = infl.get(i, j);
            }
            let infl = &v_influence[t - 1 - tau];
            for j in 0..nv {
                vx[tau * nv + j] = infl.get(i, j);
            }
        }
        (ux, vx, drift[t][i])
    };

    for t in 1..=n {
        for i in 0..ns {
            let (lb, ub) = dynamics.state_bounds[t - 1][i];
            if lp::is_finite_bound(lb) {
                let (ux, vx, d) = state_rows(t, i);
                let slack = penalty.map(|p| {
                    recourse_cost.push(p);
                    recourse_cost.len() - 1
                });
                // -s_t_i - slack <= -lb
                let mut y_terms = Vec::new();
                if let Some(s) = slack {
                    y_terms.push((s, -1.0));
                }
                rows.push(PendingRow {
                    t_row: ux.iter().map(|a| -a).collect(),
                    y_terms,
                    v_row: vx.iter().map(|a| -a).collect(),
                    rhs: -lb + d,
                    sense: Sense::Le,
                });
                if let Some(s) = slack {
                    rows.push(PendingRow {
                        t_row: vec![0.0; nx],
                        y_terms: vec![(s, -1.0)],
                        v_row: vec![0.0; nv * n],
                        rhs: 0.0,
                        sense: Sense::Le,
                    });
                }
            }
            if lp::is_finite_bound(ub) {
                let (ux, vx, d) = state_rows(t, i);
                let slack = penalty.map(|p| {
                    recourse_cost.push(p);
                    recourse_cost.len() - 1
                });
                // s_t_i - slack <= ub
                let mut y_terms = Vec::new();
                if let Some(s) = slack {
                    y_terms.push((s, -1.0));
                }
                rows.push(PendingRow { t_row: ux, y_terms, v_row: vx, rhs: ub - d, sense: Sense::Le });
                if let Some(s) = slack {
                    rows.push(PendingRow {
                        t_row: vec![0.0; nx],
                        y_terms: vec![(s, -1.0)],
                        v_row: vec![0.0; nv * n],
                        rhs: 0.0,
                        sense: Sense::Le,
                    });
                }
            }
        }
    }

    if let Some(epi_var) = epi {
        // sum_t state_cost's_t <= tau, expanded over (x, v).
        let mut ux_total = vec![0.0; nx];
        let mut vx_total = vec![0.0; nv * n];
        let mut d_total = 0.0;
        for t in 1..=n {
            for i in 0..ns {
                let ci = dynamics.state_cost[i];
                if ci == 0.0 {
                    continue;
                }
                let (ux, vx, d) = state_rows(t, i);
                for (acc, a) in ux_total.iter_mut().zip(&ux) {
                    *acc += ci * a;
                }
                for (acc, a) in vx_total.iter_mut().zip(&vx) {
                    *acc += ci * a;
                }
                d_total += ci * d;
            }
        }
        rows.push(PendingRow {
            t_row: ux_total,
            y_terms: vec![(epi_var, -1.0)],
            v_row: vx_total,
            rhs: -d_total,
            sense: Sense::Le,
        });
    }

    let ny = recourse_cost.len();
    let mut link_x = Mat::with_cols(nx);
    let mut link_y = Mat::with_cols(ny);
    let mut link_v = Mat::with_cols(nv * n);
    let mut link_rhs = Vec::with_capacity(rows.len());
    let mut link_senses = Vec::with_capacity(rows.len());
    for r in rows {
        link_x.push_row(&r.t_row);
        let mut yrow = vec![0.0; ny];
        for (j, a) in r.y_terms {
            yrow[j] = a;
        }
        link_y.push_row(&yrow);
        link_v.push_row(&r.v_row);
        link_rhs.push(r.rhs);
        link_senses.push(r.sense);
    }

    TwoStageProblem {
        first_stage_cost,
        recourse_cost,
        first_stage_matrix: Mat::with_cols(nx),
        first_stage_rhs: Vec::new(),
        link_x,
        link_y,
        link_v,
        link_rhs,
        link_senses,
        x_binary: vec![false; nx],
        x_bounds,
        uncertainty_dim: nv * n,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn tiny_problem() -> TwoStageProblem {
        // min 0'x + min y with y >= v1: linking rows -y + v <= 0 and -y <= 0.
        TwoStageProblem {
            first_stage_cost: vec![0.0],
            recourse_cost: vec![1.0],
            first_stage_matrix: Mat::with_cols(1),
            first_stage_rhs: vec![],
            link_x: Mat::from_rows_with_cols(&[vec![0.0], vec![0.0]], 1).unwrap(),
            link_y: Mat::from_rows_with_cols(&[vec![-1.0], vec![-1.0]], 1).unwrap(),
            link_v: Mat::from_rows_with_cols(&[vec![1.0], vec![0.0]], 1).unwrap(),
            link_rhs: vec![0.0, 0.0],
            link_senses: vec![Sense::Le, Sense::Le],
            x_binary: vec![false],
            x_bounds: vec![(0.0, 1.0)],
            uncertainty_dim: 1,
        }
    }

    #[test]
    fn recourse_tracks_disturbance() {
        let p = tiny_problem();
        p.validate().unwrap();
        let r = evaluate_recourse(&p, &[0.0], &[0.7]).unwrap();
        assert!((r.cost - 0.7).abs() < 1e-9);
        let r = evaluate_recourse(&p, &[0.0], &[-0.5]).unwrap();
        assert!(r.cost.abs() < 1e-9, "y >= 0 binds");
    }

    #[test]
    fn validate_names_the_offending_field() {
        let mut p = tiny_problem();
        p.link_y = Mat::from_rows_with_cols(&[vec![-1.0, 0.0], vec![-1.0, 0.0]], 2).unwrap();
        let err = p.validate().unwrap_err();
        assert!(err.to_string().contains("link_y"), "{err}");
    }

    #[test]
    fn infeasible_recourse_is_an_error() {
        let mut p = tiny_problem();
        // 0'y <= -1 can never hold.
        p.link_y = Mat::from_rows_with_cols(&[vec![0.0], vec![-1.0]], 1).unwrap();
        p.link_rhs = vec![-1.0, 0.0];
        p.link_v = Mat::from_rows_with_cols(&[vec![0.0], vec![0.0]], 1).unwrap();
        match evaluate_recourse(&p, &[0.0], &[0.0]) {
            Err(RecourseError::RecourseInfeasible(_)) => {}
            other => panic!("expected infeasible, got {other:?}"),
        }
    }

    #[test]
    fn unbounded_recourse_is_an_error() {
        let mut p = tiny_problem();
        // min -y with only a lower bound row on y.
        p.recourse_cost = vec![-1.0];
        p.link_y = Mat::from_rows_with_cols(&[vec![-1.0], vec![0.0]], 1).unwrap();
        p.link_rhs = vec![0.0, 1.0];
        match evaluate_recourse(&p, &[0.0], &[0.0]) {
            Err(RecourseError::InnerUnbounded) => {}
            other => panic!("expected unbounded, got {other:?}"),
        }
    }

    fn scalar_dynamics(penalty: Option<f64>) -> LinearDynamics {
        LinearDynamics {
            state_matrix: Mat::from_rows(&[vec![0.5]]).unwrap(),
            input_matrix: Mat::from_rows(&[vec![1.0]]).unwrap(),
            disturbance_matrix: Mat::from_rows(&[vec![1.0]]).unwrap(),
            initial_state: vec![1.0],
            horizon: 2,
            input_cost: vec![1.0],
            state_cost: vec![0.0],
            input_bounds: vec![(0.0, 10.0)],
            state_bounds: vec![vec![(0.8, INF)], vec![(0.8, INF)]],
            state_slack_penalty: penalty,
        }
    }

    #[test]
    fn stacked_control_problem_matches_hand_solution() {
        // s1 = 0.5 + u0 >= 0.8 and s2 = 0.5 s1 + u1 >= 0.8 with cost u0 + u1:
        // u0 = 0.3, u1 = 0.8 - 0.5*0.8 = 0.4, total 0.7.
        let p = stack_mpc(&scalar_dynamics(None));
        p.validate().unwrap();
        assert_eq!(p.num_y(), 0);

        // v = 0 reduces the whole thing to an LP over (x, y).
        let mut b = crate::lp::LpBuilder::new();
        for j in 0..p.num_x() {
            let (l, u) = p.x_bounds[j];
            b.add_var(p.first_stage_cost[j], l, u);
        }
        for i in 0..p.num_links() {
            let terms: Vec<(usize, f64)> = (0..p.num_x()).map(|j| (j, p.link_x.get(i, j))).collect();
            b.add_row(&terms, p.link_senses[i], p.link_rhs[i]);
        }
        let sol = lp::solve(&b.build()).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.objective_value - 0.7).abs() < 1e-8, "got {}", sol.objective_value);
    }

    #[test]
    fn slack_penalty_keeps_recourse_feasible_for_any_disturbance() {
        let p = stack_mpc(&scalar_dynamics(Some(100.0)));
        p.validate().unwrap();
        assert_eq!(p.num_y(), 2, "one slack per finite bound");
        // A huge negative disturbance makes the hard bound impossible at
        // u = 0, but the softened problem still evaluates.
        let r = evaluate_recourse(&p, &[0.0, 0.0], &[-5.0, -5.0]).unwrap();
        assert!(r.cost > 0.0);

        let hard = stack_mpc(&scalar_dynamics(None));
        match evaluate_recourse(&hard, &[0.0, 0.0], &[-5.0, -5.0]) {
            Err(RecourseError::RecourseInfeasible(_)) => {}
            other => panic!("hard bounds should be infeasible, got {other:?}"),
        }
    }

    #[test]
    fn state_cost_adds_single_epigraph_variable() {
        let mut d = scalar_dynamics(None);
        d.state_cost = vec![2.0];
        let p = stack_mpc(&d);
        assert_eq!(p.num_y(), 1);
        // At u = (0.3, 0.4), v = 0: s1 = 0.8, s2 = 0.8, recourse = 2*(1.6).
        let r = evaluate_recourse(&p, &[0.3, 0.4], &[0.0, 0.0]).unwrap();
        assert!((r.cost - 3.2).abs() < 1e-8, "got {}", r.cost);
    }

    #[test]
    fn recourse_value_is_convex_in_disturbance() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = stack_mpc(&scalar_dynamics(Some(50.0)));
        let x = vec![0.2, 0.1];
        for _ in 0..50 {
            let v1: Vec<f64> = (0..2).map(|_| rng.random_range(-2.0..2.0)).collect();
            let v2: Vec<f64> = (0..2).map(|_| rng.random_range(-2.0..2.0)).collect();
            let mid: Vec<f64> = v1.iter().zip(&v2).map(|(a, b)| 0.5 * (a + b)).collect();
            let g1 = evaluate_recourse(&p, &x, &v1).unwrap().cost;
            let g2 = evaluate_recourse(&p, &x, &v2).unwrap().cost;
            let gm = evaluate_recourse(&p, &x, &mid).unwrap().cost;
            assert!(gm <= 0.5 * (g1 + g2) + 1e-7, "midpoint {gm} vs {}", 0.5 * (g1 + g2));
        }
    }
}
