//! Branch and bound for mixed-binary programs, plus an outer-approximation
//! loop for smooth convex constraints.
//!
//! The tree search uses best-bound node selection and most-fractional
//! branching (ties to the lowest variable index). Nodes carry only their
//! binary fixings; the LP relaxation is re-solved on a scratch copy whose
//! bounds are rewritten per node, so the constraint matrix is shared.
//!
//! `solve_convex_mip` handles rows of the form `g(z) <= 0` with `g` smooth
//! and convex by Kelley cuts: solve the MILP over the current linear outer
//! approximation, linearize every violated constraint at the iterate, repeat.
//! Because each cut is a supporting hyperplane, every MILP value along the
//! way is a valid lower bound (for minimization) on the true optimum.

use crate::lp::{self, LinearProgram, LpError, LpStatus, Sense, INF};
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::BinaryHeap;
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ObjSense {
    Min,
    Max,
}

#[derive(Clone, Debug)]
pub struct MixedIntegerProgram {
    pub lp: LinearProgram,
    /// true entries are binary variables; bounds must be within [0, 1].
    pub binary_mask: Vec<bool>,
    pub sense: ObjSense,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MilpStatus {
    Optimal,
    Infeasible,
}

#[derive(Clone, Debug)]
pub struct MilpSolution {
    pub status: MilpStatus,
    pub primal: Vec<f64>,
    pub objective_value: f64,
    /// Proven bound in the problem's sense (lower for Min, upper for Max).
    pub bound: f64,
    /// Number of nodes that were branched on; 0 when the root is integral.
    pub node_count: usize,
}

#[derive(Clone, Debug)]
pub struct MilpOptions {
    pub gap_tol: f64,
    pub node_limit: usize,
    pub integrality_tol: f64,
    /// Known feasible point and its objective value (in the problem's sense),
    /// used to prune from the start.
    pub warm_incumbent: Option<(Vec<f64>, f64)>,
}

impl Default for MilpOptions {
    fn default() -> Self {
        MilpOptions { gap_tol: 1e-9, node_limit: 100_000, integrality_tol: 1e-6, warm_incumbent: None }
    }
}

#[derive(Error, Debug)]
pub enum MilpError {
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error("relaxation is unbounded")]
    RelaxationUnbounded,
    #[error("node limit {0} exceeded")]
    NodeLimit(usize),
    #[error("binary variable {0} must have bounds inside [0, 1]")]
    BadBinaryBounds(usize),
}

struct Node {
    bound: f64,
    seq: u64,
    fixings: Vec<(usize, f64)>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.bound == other.bound && self.seq == other.seq
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    fn cmp(&self, other: &Self) -> Ordering {
        // BinaryHeap pops the max; flip so the lowest bound pops first, with
        // the insertion sequence as a deterministic tie-break.
        other
            .bound
            .total_cmp(&self.bound)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

pub fn solve_milp(mip: &MixedIntegerProgram, options: &MilpOptions) -> Result<MilpSolution, MilpError> {
    let n = mip.lp.num_vars();
    assert_eq!(mip.binary_mask.len(), n, "binary mask length mismatch");
    for (j, &is_bin) in mip.binary_mask.iter().enumerate() {
        if is_bin {
            let (l, u) = mip.lp.bounds[j];
            if l < -1e-9 || u > 1.0 + 1e-9 {
                return Err(MilpError::BadBinaryBounds(j));
            }
        }
    }

    let mut scratch = mip.lp.clone();
    if mip.sense == ObjSense::Max {
        scratch.objective.iter_mut().for_each(|c| *c = -*c);
    }
    let root_bounds = scratch.bounds.clone();

    let mut incumbent: Option<(Vec<f64>, f64)> = options.warm_incumbent.clone().map(|(x, v)| {
        let v = if mip.sense == ObjSense::Max { -v } else { v };
        (x, v)
    });

    let mut heap = BinaryHeap::new();
    heap.push(Node { bound: -INF, seq: 0, fixings: Vec::new() });
    let mut seq = 1u64;
    let mut node_count = 0usize;
    let mut solved = 0usize;

    while let Some(node) = heap.pop() {
        if let Some((_, inc)) = &incumbent {
            if node.bound >= inc - options.gap_tol {
                continue;
            }
        }
        solved += 1;
        if solved > options.node_limit {
            return Err(MilpError::NodeLimit(options.node_limit));
        }

        scratch.bounds.copy_from_slice(&root_bounds);
        for &(j, v) in &node.fixings {
            scratch.bounds[j] = (v, v);
        }
        let rel = lp::solve(&scratch)?;
        match rel.status {
            LpStatus::Infeasible => continue,
            LpStatus::Unbounded => return Err(MilpError::RelaxationUnbounded),
            LpStatus::Optimal => {}
        }
        if let Some((_, inc)) = &incumbent {
            if rel.objective_value >= inc - options.gap_tol {
                continue;
            }
        }

        // Most-fractional selection: smallest |v - 0.5|, ties to lowest index.
        let mut frac: Option<(usize, f64)> = None;
        for (j, &is_bin) in mip.binary_mask.iter().enumerate() {
            if !is_bin {
                continue;
            }
            let v = rel.primal[j];
            if v <= options.integrality_tol || v >= 1.0 - options.integrality_tol {
                continue;
            }
            let score = (v - 0.5).abs();
            if frac.map_or(true, |(_, s)| score < s - 1e-12) {
                frac = Some((j, score));
            }
        }
        let frac = frac.map(|(j, _)| j);

        match frac {
            None => {
                let mut x = rel.primal.clone();
                for (j, &is_bin) in mip.binary_mask.iter().enumerate() {
                    if is_bin {
                        x[j] = x[j].round();
                    }
                }
                let better = incumbent.as_ref().map_or(true, |(_, inc)| rel.objective_value < *inc);
                if better {
                    incumbent = Some((x, rel.objective_value));
                }
            }
            Some(j) => {
                node_count += 1;
                for v in [0.0, 1.0] {
                    let mut fixings = node.fixings.clone();
                    fixings.push((j, v));
                    heap.push(Node { bound: rel.objective_value, seq, fixings });
                    seq += 1;
                }
            }
        }
    }

    let (status, primal, value) = match incumbent {
        Some((x, v)) => (MilpStatus::Optimal, x, v),
        None => (MilpStatus::Infeasible, Vec::new(), INF),
    };
    // The heap drained, so the incumbent is optimal to within gap_tol and the
    // proven bound equals its value.
    let bound = value;
    let (value, bound) = if mip.sense == ObjSense::Max { (-value, -bound) } else { (value, bound) };
    Ok(MilpSolution { status, primal, objective_value: value, bound, node_count })
}

/// A smooth convex constraint `g(z) <= 0` over a subset of the variables.
pub struct ConvexConstraint {
    /// Global variable indices making up `z`, in the order `eval` expects.
    pub vars: Vec<usize>,
    pub eval: Box<dyn Fn(&[f64]) -> f64 + Send + Sync>,
    pub grad: Box<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>,
    /// (position in `vars`, minimum value): `z` is clamped there before
    /// evaluation to keep `g` inside its domain.
    pub guards: Vec<(usize, f64)>,
    /// Points to linearize at before the first MILP solve.
    pub initial_points: Vec<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct OaCut {
    pub constraint: usize,
    pub point: Vec<f64>,
    pub coeffs: Vec<f64>,
    pub rhs: f64,
}

#[derive(Debug)]
pub struct ConvexSolveReport {
    pub solution: MilpSolution,
    pub cuts: Vec<OaCut>,
    pub rounds: usize,
}

#[derive(Error, Debug)]
pub enum ConvexMipError {
    #[error(transparent)]
    Milp(#[from] MilpError),
    #[error("cut limit exceeded after {rounds} rounds, max violation {violation:.3e}")]
    CutLimitExceeded { rounds: usize, violation: f64 },
    #[error("iterate pinned at domain guard of constraint {constraint} (var slot {slot}, value {value:.3e})")]
    DomainGuardViolated { constraint: usize, slot: usize, value: f64 },
}

const OA_MAX_ROUNDS: usize = 100;

fn clamp_to_guards(c: &ConvexConstraint, z: &mut [f64]) {
    for &(slot, min) in &c.guards {
        if z[slot] < min {
            z[slot] = min;
        }
    }
}

/// Finds a point on the segment from `anchor` to `z` where both `g` and its
/// gradient are finite, backing off geometrically from `z`.
fn finite_linearization_point(c: &ConvexConstraint, anchor: &[f64], z: &[f64]) -> Option<(Vec<f64>, f64, Vec<f64>)> {
    let mut t = 1.0;
    for _ in 0..60 {
        let mut p: Vec<f64> = anchor
            .iter()
            .zip(z)
            .map(|(&a, &b)| a + t * (b - a))
            .collect();
        clamp_to_guards(c, &mut p);
        let g = (c.eval)(&p);
        if g.is_finite() {
            let gr = (c.grad)(&p);
            if gr.iter().all(|x| x.is_finite()) {
                return Some((p, g, gr));
            }
        }
        t *= 0.5;
    }
    None
}

pub fn solve_convex_mip(
    mip: &MixedIntegerProgram,
    constraints: &[ConvexConstraint],
    options: &MilpOptions,
    oa_tol: f64,
) -> Result<ConvexSolveReport, ConvexMipError> {
    let mut working = mip.clone();
    let mut cuts: Vec<OaCut> = Vec::new();
    // Anchors give the backoff somewhere finite to retreat toward when an
    // iterate lands where exp overflows.
    let mut anchors: Vec<Vec<f64>> = Vec::new();

    for (ci, c) in constraints.iter().enumerate() {
        assert!(!c.initial_points.is_empty(), "constraint {ci} needs at least one initial point");
        let mut anchor = None;
        for p0 in &c.initial_points {
            let mut p = p0.clone();
            clamp_to_guards(c, &mut p);
            if let Some((p, g, gr)) = finite_linearization_point(c, &p, &p) {
                add_cut(&mut working.lp, &mut cuts, ci, c, &p, g, &gr);
                if anchor.is_none() {
                    anchor = Some(p);
                }
            }
        }
        anchors.push(anchor.unwrap_or_else(|| {
            let mut p = c.initial_points[0].clone();
            clamp_to_guards(c, &mut p);
            p
        }));
    }

    let mut prev_iterate: Option<Vec<f64>> = None;
    for round in 1..=OA_MAX_ROUNDS {
        let solution = solve_milp(&working, options)?;
        if solution.status != MilpStatus::Optimal {
            return Ok(ConvexSolveReport { solution, cuts, rounds: round });
        }

        let mut worst = 0.0f64;
        let mut added = false;
        for (ci, c) in constraints.iter().enumerate() {
            let z: Vec<f64> = c.vars.iter().map(|&j| solution.primal[j]).collect();
            let mut zc = z.clone();
            clamp_to_guards(c, &mut zc);
            let g = (c.eval)(&zc);
            let violated = !g.is_finite() || g > oa_tol;
            if !violated {
                continue;
            }
            worst = worst.max(if g.is_finite() { g } else { INF });
            if let Some((p, gp, gr)) = finite_linearization_point(c, &anchors[ci], &zc) {
                add_cut(&mut working.lp, &mut cuts, ci, c, &p, gp, &gr);
                anchors[ci] = p;
                added = true;
            }
        }

        if worst <= oa_tol {
            return Ok(ConvexSolveReport { solution, cuts, rounds: round });
        }

        let stalled = prev_iterate
            .as_ref()
            .map_or(false, |prev| {
                prev.len() == solution.primal.len()
                    && prev
                        .iter()
                        .zip(&solution.primal)
                        .all(|(a, b)| (a - b).abs() <= 1e-12 * (1.0 + a.abs()))
            });
        if stalled || !added {
            // A repeated iterate that still violates means the cut at the
            // clamped point no longer separates; that happens exactly when a
            // guard is pinning the evaluation point away from the iterate.
            for (ci, c) in constraints.iter().enumerate() {
                let z: Vec<f64> = c.vars.iter().map(|&j| solution.primal[j]).collect();
                for &(slot, min) in &c.guards {
                    if z[slot] < min - 1e-12 {
                        return Err(ConvexMipError::DomainGuardViolated { constraint: ci, slot, value: z[slot] });
                    }
                }
            }
            return Err(ConvexMipError::CutLimitExceeded { rounds: round, violation: worst });
        }
        prev_iterate = Some(solution.primal);
    }
    Err(ConvexMipError::CutLimitExceeded { rounds: OA_MAX_ROUNDS, violation: INF })
}

fn add_cut(
    lp: &mut LinearProgram,
    cuts: &mut Vec<OaCut>,
    ci: usize,
    c: &ConvexConstraint,
    point: &[f64],
    g: f64,
    grad: &[f64],
) {
    // g(p) + grad'(z - p) <= 0 rearranges to grad'z <= grad'p - g(p).
    let rhs = crate::mat::dot(grad, point) - g;
    let mut dense = vec![0.0; lp.num_vars()];
    for (slot, &j) in c.vars.iter().enumerate() {
        dense[j] += grad[slot];
    }
    lp.constraint_matrix.push_row(&dense);
    lp.rhs.push(rhs);
    lp.senses.push(Sense::Le);
    cuts.push(OaCut { constraint: ci, point: point.to_vec(), coeffs: grad.to_vec(), rhs });
}

/// Compares `grad` against central finite differences of `eval` at `point`.
/// Returns the worst relative mismatch.
pub fn check_gradient(c: &ConvexConstraint, point: &[f64]) -> f64 {
    let gr = (c.grad)(point);
    let mut worst = 0.0f64;
    for i in 0..point.len() {
        let h = 1e-6 * (1.0 + point[i].abs());
        let mut hi = point.to_vec();
        let mut lo = point.to_vec();
        hi[i] += h;
        lo[i] -= h;
        let fd = ((c.eval)(&hi) - (c.eval)(&lo)) / (2.0 * h);
        let err = (fd - gr[i]).abs() / (1.0 + gr[i].abs());
        worst = worst.max(err);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lp::LpBuilder;

    fn binary_pair_program() -> MixedIntegerProgram {
        let mut b = LpBuilder::new();
        let x1 = b.add_var(1.0, 0.0, 1.0);
        let x2 = b.add_var(1.0, 0.0, 1.0);
        b.add_row(&[(x1, 1.0), (x2, 1.0)], Sense::Le, 1.5);
        MixedIntegerProgram { lp: b.build(), binary_mask: vec![true, true], sense: ObjSense::Max }
    }

    #[test]
    fn fractional_capacity_forces_one_unit() {
        let mip = binary_pair_program();
        let s = solve_milp(&mip, &MilpOptions::default()).unwrap();
        assert_eq!(s.status, MilpStatus::Optimal);
        assert!((s.objective_value - 1.0).abs() < 1e-9);
        let total: f64 = s.primal.iter().sum();
        assert!((total - 1.0).abs() < 1e-9);
        assert!(s.node_count >= 1, "LP relaxation value 1.5 is fractional");
    }

    #[test]
    fn small_knapsack() {
        let mut b = LpBuilder::new();
        let v = b.add_vars(3, 0.0, 0.0, 1.0);
        for (j, profit) in v.clone().zip([3.0, 2.0, 2.0]) {
            b.set_cost(j, profit);
        }
        b.add_row(&[(0, 2.0), (1, 2.0), (2, 1.0)], Sense::Le, 3.0);
        let mip = MixedIntegerProgram { lp: b.build(), binary_mask: vec![true; 3], sense: ObjSense::Max };
        let s = solve_milp(&mip, &MilpOptions::default()).unwrap();
        assert!((s.objective_value - 5.0).abs() < 1e-9);
        assert_eq!(s.primal, vec![1.0, 0.0, 1.0]);
        assert!((s.bound - 5.0).abs() < 1e-9);
    }

    #[test]
    fn integral_relaxation_never_branches() {
        let mut b = LpBuilder::new();
        let x = b.add_var(-1.0, 0.0, 1.0);
        b.add_row(&[(x, 1.0)], Sense::Le, 1.0);
        let mip = MixedIntegerProgram { lp: b.build(), binary_mask: vec![true], sense: ObjSense::Min };
        let s = solve_milp(&mip, &MilpOptions::default()).unwrap();
        assert_eq!(s.node_count, 0);
        assert!((s.objective_value + 1.0).abs() < 1e-9);
    }

    #[test]
    fn infeasible_integer_program_reported() {
        let mut b = LpBuilder::new();
        let x = b.add_var(1.0, 0.0, 1.0);
        let y = b.add_var(1.0, 0.0, 1.0);
        // x + y = 1 with x = y forces x = y = 0.5, impossible for binaries.
        b.add_row(&[(x, 1.0), (y, 1.0)], Sense::Eq, 1.0);
        b.add_row(&[(x, 1.0), (y, -1.0)], Sense::Eq, 0.0);
        let mip = MixedIntegerProgram { lp: b.build(), binary_mask: vec![true, true], sense: ObjSense::Min };
        let s = solve_milp(&mip, &MilpOptions::default()).unwrap();
        assert_eq!(s.status, MilpStatus::Infeasible);
    }

    #[test]
    fn warm_incumbent_is_kept_when_already_optimal() {
        let mip = binary_pair_program();
        let opts = MilpOptions {
            warm_incumbent: Some((vec![1.0, 0.0], 1.0)),
            ..MilpOptions::default()
        };
        let s = solve_milp(&mip, &opts).unwrap();
        assert_eq!(s.status, MilpStatus::Optimal);
        assert!((s.objective_value - 1.0).abs() < 1e-9);
    }

    #[test]
    fn mixed_continuous_and_binary() {
        // max 2b + y with y <= 3 - 2b, y >= 0: b=1 gives 2+1=3, b=0 gives 3.
        // Tie resolved to the same value; then prefer checking the value only.
        let mut b = LpBuilder::new();
        let bin = b.add_var(2.0, 0.0, 1.0);
        let y = b.add_var(1.0, 0.0, INF);
        b.add_row(&[(y, 1.0), (bin, 2.0)], Sense::Le, 3.0);
        let mip = MixedIntegerProgram { lp: b.build(), binary_mask: vec![true, false], sense: ObjSense::Max };
        let s = solve_milp(&mip, &MilpOptions::default()).unwrap();
        assert!((s.objective_value - 3.0).abs() < 1e-9);
    }

    fn exp_constraint(vars: Vec<usize>) -> ConvexConstraint {
        ConvexConstraint {
            vars,
            eval: Box::new(|z: &[f64]| z[0].exp() - z[1]),
            grad: Box::new(|z: &[f64]| vec![z[0].exp(), -1.0]),
            guards: vec![],
            initial_points: vec![vec![0.5, 1.0]],
        }
    }

    #[test]
    fn exp_epigraph_minimum_at_origin() {
        // min y s.t. e^x <= y, x in [0, 2]: optimum x = 0, y = 1.
        let mut b = LpBuilder::new();
        let _x = b.add_var(0.0, 0.0, 2.0);
        let _y = b.add_var(1.0, 0.0, INF);
        let mip = MixedIntegerProgram { lp: b.build(), binary_mask: vec![false, false], sense: ObjSense::Min };
        let report = solve_convex_mip(&mip, &[exp_constraint(vec![0, 1])], &MilpOptions::default(), 1e-7).unwrap();
        assert!((report.solution.objective_value - 1.0).abs() < 1e-5);
        assert!(report.rounds <= OA_MAX_ROUNDS);
    }

    #[test]
    fn disk_boundary_optimum_with_binary_switch() {
        // min -z1 - z2 + 0.2 b over the unit disk with z1 <= b.
        // b = 1: optimum (sqrt(1/2), sqrt(1/2)), value 0.2 - sqrt(2).
        let mut b = LpBuilder::new();
        let z1 = b.add_var(-1.0, -2.0, 2.0);
        let z2 = b.add_var(-1.0, -2.0, 2.0);
        let bin = b.add_var(0.2, 0.0, 1.0);
        b.add_row(&[(z1, 1.0), (bin, -1.0)], Sense::Le, 0.0);
        let disk = ConvexConstraint {
            vars: vec![z1, z2],
            eval: Box::new(|z: &[f64]| z[0] * z[0] + z[1] * z[1] - 1.0),
            grad: Box::new(|z: &[f64]| vec![2.0 * z[0], 2.0 * z[1]]),
            guards: vec![],
            initial_points: vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]],
        };
        let mip = MixedIntegerProgram { lp: b.build(), binary_mask: vec![false, false, true], sense: ObjSense::Min };
        let report = solve_convex_mip(&mip, &[disk], &MilpOptions::default(), 1e-7).unwrap();
        let expect = 0.2 - 2f64.sqrt();
        assert!(
            (report.solution.objective_value - expect).abs() < 1e-4,
            "got {}, want {}",
            report.solution.objective_value,
            expect
        );
        assert!((report.solution.primal[2] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn cuts_are_valid_outer_approximations() {
        let mut b = LpBuilder::new();
        let _ = b.add_var(-1.0, -2.0, 2.0);
        let _ = b.add_var(-1.0, -2.0, 2.0);
        let disk = ConvexConstraint {
            vars: vec![0, 1],
            eval: Box::new(|z: &[f64]| z[0] * z[0] + z[1] * z[1] - 1.0),
            grad: Box::new(|z: &[f64]| vec![2.0 * z[0], 2.0 * z[1]]),
            guards: vec![],
            initial_points: vec![vec![0.0, 0.0]],
        };
        let mip = MixedIntegerProgram { lp: b.build(), binary_mask: vec![false, false], sense: ObjSense::Min };
        let report = solve_convex_mip(&mip, &[disk], &MilpOptions::default(), 1e-7).unwrap();
        // Every point of the true feasible set must satisfy every cut.
        for i in 0..=20 {
            let theta = i as f64 / 20.0 * std::f64::consts::TAU;
            for r in [0.0, 0.5, 0.999] {
                let p = [r * theta.cos(), r * theta.sin()];
                for cut in &report.cuts {
                    let lhs = cut.coeffs[0] * p[0] + cut.coeffs[1] * p[1];
                    assert!(lhs <= cut.rhs + 1e-9, "cut at {:?} excludes feasible {:?}", cut.point, p);
                }
            }
        }
    }

    #[test]
    fn overflow_iterates_back_off_to_finite_cut_points() {
        // min y s.t. e^(40 x) <= y with x in [0, 30]: evaluating at x = 30
        // overflows f64, forcing the backoff path. Optimum x = 0, y = 1,
        // objective -x + y pulls x up but the exp wall keeps it near 0.
        let mut b = LpBuilder::new();
        let _x = b.add_var(-1.0, 0.0, 30.0);
        let _y = b.add_var(1.0, 0.0, 1e6);
        let c = ConvexConstraint {
            vars: vec![0, 1],
            eval: Box::new(|z: &[f64]| (40.0 * z[0]).exp() - z[1]),
            grad: Box::new(|z: &[f64]| vec![40.0 * (40.0 * z[0]).exp(), -1.0]),
            guards: vec![],
            initial_points: vec![vec![0.0, 1.0]],
        };
        let mip = MixedIntegerProgram { lp: b.build(), binary_mask: vec![false, false], sense: ObjSense::Min };
        let report = solve_convex_mip(&mip, &[c], &MilpOptions::default(), 1e-6).unwrap();
        let x = report.solution.primal[0];
        let y = report.solution.primal[1];
        assert!((40.0 * x).exp() <= y + 1e-4, "returned point violates the true constraint");
    }

    #[test]
    fn gradient_check_flags_wrong_derivative() {
        let good = exp_constraint(vec![0, 1]);
        assert!(check_gradient(&good, &[0.3, 2.0]) < 1e-7);
        let bad = ConvexConstraint {
            vars: vec![0, 1],
            eval: Box::new(|z: &[f64]| z[0].exp() - z[1]),
            grad: Box::new(|z: &[f64]| vec![z[0].exp() * 1.05, -1.0]),
            guards: vec![],
            initial_points: vec![vec![0.0, 1.0]],
        };
        assert!(check_gradient(&bad, &[0.3, 2.0]) > 1e-3);
    }
}
