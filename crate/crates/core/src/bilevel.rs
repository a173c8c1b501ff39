//! Single-level reformulation of the adversarial subproblem.
//!
//! For a fixed first stage x*, the subproblem is
//!
//! ```text
//!     max_{v in V} min_y { b'y : W y <= h - T x* - M v  (per-row <= or =) }
//! ```
//!
//! The inner LP is replaced by its KKT system: primal feasibility,
//! stationarity W'lambda = -b with lambda >= 0 on inequality rows (free on
//! equality rows), and complementarity linearized with binaries z and the cap
//! m_comp on dual magnitudes:
//!
//! ```text
//!     lambda_i <= m_comp z_i,     slack_i <= m_comp (1 - z_i)
//! ```
//!
//! Equality rows need no complementarity. The uncertainty side is either the
//! selector encoding of a product of unions (delta/w rows with the constant
//! Delta) or one explicit polytope subset. Both caps are heuristics, so
//! [`validate_big_m`] re-solves with both caps scaled up and reports whether
//! the value moved.

use crate::lp::{LpBuilder, Sense, VarLayout, INF};
use crate::mip::{self, MilpError, MilpOptions, MilpSolution, MilpStatus, MixedIntegerProgram, ObjSense};
use crate::model::{RecourseError, TwoStageProblem};
use crate::uncertainty::{MonolithicEncoding, PolytopeSubset, MEMBERSHIP_TOL};
use thiserror::Error;

#[derive(Clone, Debug)]
pub struct KktReformConfig {
    /// Cap on |lambda| and the complementarity big-M.
    pub m_comp: f64,
    /// Overrides the encoding's Delta (or the subset box) when set.
    pub big_delta: Option<f64>,
    /// Cap multiplier used by [`validate_big_m`].
    pub validation_factor: f64,
}

impl Default for KktReformConfig {
    fn default() -> Self {
        KktReformConfig { m_comp: 1e4, big_delta: None, validation_factor: 10.0 }
    }
}

#[derive(Clone, Copy, Debug)]
pub enum SubproblemKind<'a> {
    /// Product-of-unions via selector binaries.
    Monolithic(&'a MonolithicEncoding),
    /// One explicit subset over the full uncertainty dimension.
    Subset(&'a PolytopeSubset),
}

#[derive(Error, Debug)]
pub enum BilevelError {
    #[error("uncertainty dimension mismatch: problem has {problem}, {kind} has {kind_dim}")]
    DimensionMismatch { problem: usize, kind: &'static str, kind_dim: usize },
    #[error("subproblem is infeasible; the recourse LP must be feasible for every (x, v) and duals must fit under m_comp = {m_comp}")]
    InfeasibleSubproblem { m_comp: f64 },
    #[error(transparent)]
    Milp(#[from] MilpError),
    #[error(transparent)]
    Recourse(#[from] RecourseError),
}

pub struct SubproblemMilp {
    pub mip: MixedIntegerProgram,
    pub layout: VarLayout,
    num_le_links: usize,
    le_rows: Vec<usize>,
    horizon: usize,
    num_subsets: usize,
}

impl SubproblemMilp {
    pub fn v_star(&self, sol: &MilpSolution) -> Vec<f64> {
        self.layout.slice("v", &sol.primal).to_vec()
    }

    pub fn y_star(&self, sol: &MilpSolution) -> Vec<f64> {
        self.layout.slice("y", &sol.primal).to_vec()
    }

    /// Multipliers per linking row, in row order.
    pub fn lambda_star(&self, sol: &MilpSolution) -> Vec<f64> {
        self.layout.slice("lambda", &sol.primal).to_vec()
    }

    /// Chosen subset per step (empty for the explicit-subset kind).
    pub fn chosen_subsets(&self, sol: &MilpSolution) -> Vec<usize> {
        if self.num_subsets == 0 {
            return Vec::new();
        }
        let delta = self.layout.slice("delta", &sol.primal);
        (0..self.horizon)
            .map(|t| {
                let row = &delta[t * self.num_subsets..(t + 1) * self.num_subsets];
                row.iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .map(|(k, _)| k)
                    .unwrap()
            })
            .collect()
    }

    pub fn num_le_links(&self) -> usize {
        self.num_le_links
    }

    pub fn le_rows(&self) -> &[usize] {
        &self.le_rows
    }
}

pub fn build_subproblem(
    x_star: &[f64],
    problem: &TwoStageProblem,
    kind: SubproblemKind<'_>,
    cfg: &KktReformConfig,
) -> Result<SubproblemMilp, BilevelError> {
    let nv = problem.uncertainty_dim;
    match kind {
        SubproblemKind::Monolithic(enc) => {
            if enc.total_dim() != nv {
                return Err(BilevelError::DimensionMismatch {
                    problem: nv,
                    kind: "encoding",
                    kind_dim: enc.total_dim(),
                });
            }
        }
        SubproblemKind::Subset(s) => {
            if s.dim() != nv {
                return Err(BilevelError::DimensionMismatch { problem: nv, kind: "subset", kind_dim: s.dim() });
            }
        }
    }
    assert_eq!(x_star.len(), problem.num_x());

    let ny = problem.num_y();
    let ml = problem.num_links();
    let m_comp = cfg.m_comp;
    let tx = problem.link_x.mul_vec(x_star);
    let link_rhs: Vec<f64> = problem.link_rhs.iter().zip(&tx).map(|(&h, &t)| h - t).collect();
    let le_rows: Vec<usize> = (0..ml).filter(|&i| problem.link_senses[i] == Sense::Le).collect();

    let mut b = LpBuilder::new();
    let mut layout = VarLayout::new();

    let v_range = match kind {
        SubproblemKind::Monolithic(enc) => {
            let delta = cfg.big_delta.unwrap_or(enc.big_m());
            b.add_vars(nv, 0.0, -delta, delta)
        }
        SubproblemKind::Subset(s) => {
            let r = b.add_vars(nv, 0.0, 0.0, 0.0);
            for (j, &(lo, hi)) in s.bbox().iter().enumerate() {
                let (lo, hi) = match cfg.big_delta {
                    Some(d) => (lo.max(-d), hi.min(d)),
                    None => (lo, hi),
                };
                b.set_bounds(r.start + j, lo, hi);
            }
            r
        }
    };
    layout.push("v", v_range.clone());

    let y_range = b.add_vars(ny, 0.0, -INF, INF);
    layout.push("y", y_range.clone());
    for (j, &cost) in problem.recourse_cost.iter().enumerate() {
        b.set_cost(y_range.start + j, cost);
    }

    let lambda_range = b.add_vars(ml, 0.0, 0.0, m_comp);
    layout.push("lambda", lambda_range.clone());
    for i in 0..ml {
        if problem.link_senses[i] == Sense::Eq {
            b.set_bounds(lambda_range.start + i, -m_comp, m_comp);
        }
    }

    let z_range = b.add_vars(le_rows.len(), 0.0, 0.0, 1.0);
    layout.push("z", z_range.clone());

    // Primal feasibility: W y + M v {<=,=} h - T x*.
    for i in 0..ml {
        let mut terms: Vec<(usize, f64)> = Vec::new();
        for j in 0..ny {
            let w = problem.link_y.get(i, j);
            if w != 0.0 {
                terms.push((y_range.start + j, w));
            }
        }
        for j in 0..nv {
            let m = problem.link_v.get(i, j);
            if m != 0.0 {
                terms.push((v_range.start + j, m));
            }
        }
        b.add_row(&terms, problem.link_senses[i], link_rhs[i]);
    }

    // Stationarity: W' lambda = -b.
    for j in 0..ny {
        let mut terms: Vec<(usize, f64)> = Vec::new();
        for i in 0..ml {
            let w = problem.link_y.get(i, j);
            if w != 0.0 {
                terms.push((lambda_range.start + i, w));
            }
        }
        b.add_row(&terms, Sense::Eq, -problem.recourse_cost[j]);
    }

    // Complementarity on inequality rows.
    for (zi, &i) in le_rows.iter().enumerate() {
        b.add_row(&[(lambda_range.start + i, 1.0), (z_range.start + zi, -m_comp)], Sense::Le, 0.0);
        // slack_i <= m_comp (1 - z_i) with slack_i = rhs_i - (W y)_i - (M v)_i.
        let mut terms: Vec<(usize, f64)> = vec![(z_range.start + zi, m_comp)];
        for j in 0..ny {
            let w = problem.link_y.get(i, j);
            if w != 0.0 {
                terms.push((y_range.start + j, -w));
            }
        }
        for j in 0..nv {
            let m = problem.link_v.get(i, j);
            if m != 0.0 {
                terms.push((v_range.start + j, -m));
            }
        }
        b.add_row(&terms, Sense::Le, m_comp - link_rhs[i]);
    }

    // Uncertainty membership.
    let (horizon, num_subsets) = match kind {
        SubproblemKind::Subset(s) => {
            for r in 0..s.num_rows() {
                let terms: Vec<(usize, f64)> = (0..nv)
                    .filter_map(|j| {
                        let a = s.d_mat().get(r, j);
                        (a != 0.0).then_some((v_range.start + j, a))
                    })
                    .collect();
                b.add_row(&terms, Sense::Le, s.d_vec()[r]);
            }
            layout.push("delta", 0..0);
            layout.push("w", 0..0);
            (0, 0)
        }
        SubproblemKind::Monolithic(enc) => {
            let k = enc.num_subsets();
            let n = enc.horizon();
            let d = enc.step_dim();
            let big = cfg.big_delta.unwrap_or(enc.big_m());

            let delta_range = b.add_vars(n * k, 0.0, 0.0, 1.0);
            layout.push("delta", delta_range.clone());
            let w_range = b.add_vars(n * k * d, 0.0, -big, big);
            layout.push("w", w_range.clone());
            let dvar = |t: usize, kk: usize| delta_range.start + t * k + kk;
            let wvar = |t: usize, kk: usize, j: usize| w_range.start + (t * k + kk) * d + j;

            for t in 0..n {
                let terms: Vec<(usize, f64)> = (0..k).map(|kk| (dvar(t, kk), 1.0)).collect();
                b.add_row(&terms, Sense::Eq, 1.0);

                for r in 0..enc.row_count() {
                    let mut terms: Vec<(usize, f64)> = Vec::new();
                    for kk in 0..k {
                        for j in 0..d {
                            let a = enc.padded_mats()[kk].get(r, j);
                            if a != 0.0 {
                                terms.push((wvar(t, kk, j), a));
                            }
                        }
                        terms.push((dvar(t, kk), -enc.padded_vecs()[kk][r]));
                    }
                    b.add_row(&terms, Sense::Le, 0.0);
                }

                for kk in 0..k {
                    for j in 0..d {
                        let vj = v_range.start + t * d + j;
                        // |v_t - w_{t,k}| <= Delta (1 - delta)
                        b.add_row(&[(vj, 1.0), (wvar(t, kk, j), -1.0), (dvar(t, kk), big)], Sense::Le, big);
                        b.add_row(&[(vj, -1.0), (wvar(t, kk, j), 1.0), (dvar(t, kk), big)], Sense::Le, big);
                        // |w_{t,k}| <= Delta delta
                        b.add_row(&[(wvar(t, kk, j), 1.0), (dvar(t, kk), -big)], Sense::Le, 0.0);
                        b.add_row(&[(wvar(t, kk, j), -1.0), (dvar(t, kk), -big)], Sense::Le, 0.0);
                    }
                }
            }
            (n, k)
        }
    };

    let mut binary_mask = vec![false; b.num_vars()];
    for i in z_range {
        binary_mask[i] = true;
    }
    if num_subsets > 0 {
        for i in layout.range("delta") {
            binary_mask[i] = true;
        }
    }

    Ok(SubproblemMilp {
        mip: MixedIntegerProgram { lp: b.build(), binary_mask, sense: ObjSense::Max },
        layout,
        num_le_links: le_rows.len(),
        le_rows,
        horizon,
        num_subsets,
    })
}

#[derive(Clone, Debug)]
pub struct SpOutcome {
    /// The worst-case recourse value max_v min_y b'y.
    pub value: f64,
    pub v: Vec<f64>,
    pub y: Vec<f64>,
    pub lambda: Vec<f64>,
    pub chosen_subsets: Vec<usize>,
    pub node_count: usize,
}

/// Builds and solves the subproblem. `warm_v` seeds branch and bound with the
/// recourse solution at that uncertainty point (must lie in the set).
pub fn solve_subproblem(
    x_star: &[f64],
    problem: &TwoStageProblem,
    kind: SubproblemKind<'_>,
    cfg: &KktReformConfig,
    options: &MilpOptions,
    warm_v: Option<&[f64]>,
) -> Result<SpOutcome, BilevelError> {
    let sp = build_subproblem(x_star, problem, kind, cfg)?;
    let mut options = options.clone();
    if let Some(v) = warm_v {
        if let Some(warm) = warm_point(&sp, x_star, problem, kind, cfg, v) {
            options.warm_incumbent = Some(warm);
        }
    }
    let sol = mip::solve_milp(&sp.mip, &options)?;
    if sol.status != MilpStatus::Optimal {
        return Err(BilevelError::InfeasibleSubproblem { m_comp: cfg.m_comp });
    }
    Ok(SpOutcome {
        value: sol.objective_value,
        v: sp.v_star(&sol),
        y: sp.y_star(&sol),
        lambda: sp.lambda_star(&sol),
        chosen_subsets: sp.chosen_subsets(&sol),
        node_count: sol.node_count,
    })
}

/// Assembles a fully feasible subproblem point from the recourse solution at
/// a known uncertainty point, for use as a warm incumbent.
fn warm_point(
    sp: &SubproblemMilp,
    x_star: &[f64],
    problem: &TwoStageProblem,
    kind: SubproblemKind<'_>,
    cfg: &KktReformConfig,
    v: &[f64],
) -> Option<(Vec<f64>, f64)> {
    let lp_prob = problem.recourse_lp(x_star, v);
    let sol = crate::lp::solve(&lp_prob).ok()?;
    if sol.status != crate::lp::LpStatus::Optimal {
        return None;
    }
    // lambda = -dual under the min/<= convention; must fit under the cap.
    let lambda: Vec<f64> = sol.duals.iter().map(|&d| -d).collect();
    if lambda.iter().any(|l| l.abs() > cfg.m_comp * 0.999) {
        return None;
    }

    let n_total = sp.mip.lp.num_vars();
    let mut point = vec![0.0; n_total];
    let vr = sp.layout.range("v");
    point[vr].copy_from_slice(v);
    let yr = sp.layout.range("y");
    point[yr].copy_from_slice(&sol.primal);
    let lr = sp.layout.range("lambda");
    point[lr].copy_from_slice(&lambda);
    let zr = sp.layout.range("z");
    for (zi, &row) in sp.le_rows.iter().enumerate() {
        point[zr.start + zi] = if lambda[row] > 1e-7 { 1.0 } else { 0.0 };
    }
    if let SubproblemKind::Monolithic(enc) = kind {
        let d = enc.step_dim();
        let k = enc.num_subsets();
        let dr = sp.layout.range("delta");
        let wr = sp.layout.range("w");
        for t in 0..enc.horizon() {
            let vt = &v[t * d..(t + 1) * d];
            let kk = (0..k).find(|&kk| {
                let mat = &enc.padded_mats()[kk];
                let vec_ = &enc.padded_vecs()[kk];
                (0..enc.row_count()).all(|r| {
                    let lhs: f64 = (0..d).map(|j| mat.get(r, j) * vt[j]).sum();
                    lhs <= vec_[r] + MEMBERSHIP_TOL
                })
            })?;
            point[dr.start + t * k + kk] = 1.0;
            for j in 0..d {
                point[wr.start + (t * k + kk) * d + j] = vt[j];
            }
        }
    }
    Some((point, sol.objective_value))
}

#[derive(Clone, Debug)]
pub enum BigMValidation {
    Consistent { base: f64, scaled: f64 },
    Suspect { base: Option<f64>, scaled: Option<f64>, detail: String },
}

/// Re-solves the subproblem with m_comp and Delta multiplied by the
/// validation factor. A status flip or a value shift beyond tolerance means
/// the caps were binding, so the base solution cannot be trusted.
pub fn validate_big_m(
    x_star: &[f64],
    problem: &TwoStageProblem,
    kind: SubproblemKind<'_>,
    cfg: &KktReformConfig,
    options: &MilpOptions,
) -> Result<BigMValidation, BilevelError> {
    let solve_with = |c: &KktReformConfig| -> Result<Option<f64>, BilevelError> {
        let sp = build_subproblem(x_star, problem, kind, c)?;
        let sol = mip::solve_milp(&sp.mip, options)?;
        Ok((sol.status == MilpStatus::Optimal).then_some(sol.objective_value))
    };

    let base = solve_with(cfg)?;
    let base_delta = match kind {
        SubproblemKind::Monolithic(enc) => cfg.big_delta.unwrap_or(enc.big_m()),
        SubproblemKind::Subset(_) => cfg.big_delta.unwrap_or(INF / cfg.validation_factor),
    };
    let scaled_cfg = KktReformConfig {
        m_comp: cfg.m_comp * cfg.validation_factor,
        big_delta: Some(base_delta * cfg.validation_factor),
        validation_factor: cfg.validation_factor,
    };
    let scaled = solve_with(&scaled_cfg)?;

    Ok(match (base, scaled) {
        (Some(b), Some(s)) if (b - s).abs() <= 1e-6 * (1.0 + b.abs()) => {
            BigMValidation::Consistent { base: b, scaled: s }
        }
        (Some(b), Some(s)) => BigMValidation::Suspect {
            base: Some(b),
            scaled: Some(s),
            detail: format!("value moved from {b} to {s} when caps were scaled"),
        },
        (b, s) => BigMValidation::Suspect {
            base: b,
            scaled: s,
            detail: "feasibility status changed when caps were scaled".into(),
        },
    })
}
