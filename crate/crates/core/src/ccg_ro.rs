//! Column-and-constraint generation for the two-stage robust problem.
//!
//! The master keeps one recourse block y_i per scenario v_i found so far:
//!
//! ```text
//!     min c'x + eta
//!     s.t. A x <= q
//!          eta >= b' y_i                      for every scenario i
//!          T x + W y_i + M v_i {<=,=} h      for every scenario i
//! ```
//!
//! Each round solves the master (lower bound), then the adversarial
//! subproblem at the master's x (upper bound via c'x plus the worst-case
//! recourse), and adds the worst v as a new scenario. Two routes differ only
//! in the subproblem: [`solve_monolithic`] uses one MILP over the whole
//! product of unions, [`solve_enumerated`] solves one MILP per explicit
//! subset combination and takes the max.

use crate::bilevel::{
    solve_subproblem, validate_big_m, BigMValidation, BilevelError, KktReformConfig, SubproblemKind,
};
use crate::lp::{LpBuilder, Sense, VarLayout, INF};
use crate::mat::dot;
use crate::mip::{self, MilpError, MilpOptions, MilpStatus, MixedIntegerProgram, ObjSense};
use crate::model::{ModelError, TwoStageProblem};
use crate::uncertainty::{
    encode_monolithic_with_big_m, enumerate_explicit_subsets_capped, ExplicitSubset, ProductUnionSet,
    UncertaintyError,
};
use rayon::prelude::*;
use std::time::Instant;
use thiserror::Error;

#[derive(Clone, Debug)]
pub struct CcgConfig {
    /// Convergence tolerance on UB - LB, relative to 1 + |UB|.
    pub epsilon: f64,
    pub max_iterations: usize,
    pub kkt: KktReformConfig,
    pub milp: MilpOptions,
    /// Scenarios closer than this (sup norm) count as repeats and stop the loop.
    pub scenario_repeat_tol: f64,
    /// Lower bound on eta in the first master, which has no scenarios yet.
    pub eta_floor: f64,
    /// Re-solve the final subproblem with scaled caps and report the outcome.
    pub validate_big_m: bool,
    /// Refuse to enumerate more explicit subsets than this.
    pub explosion_cap: usize,
}

impl Default for CcgConfig {
    fn default() -> Self {
        CcgConfig {
            epsilon: 1e-6,
            max_iterations: 100,
            kkt: KktReformConfig::default(),
            milp: MilpOptions::default(),
            scenario_repeat_tol: 1e-9,
            eta_floor: -1e12,
            validate_big_m: false,
            explosion_cap: crate::uncertainty::DEFAULT_EXPLOSION_CAP,
        }
    }
}

#[derive(Error, Debug)]
pub enum CcgError {
    #[error("iteration limit {limit} reached with gap {gap:.3e}")]
    IterationLimit { limit: usize, gap: f64 },
    #[error("master problem is infeasible")]
    MasterInfeasible,
    #[error("uncertainty dimension mismatch: problem has {problem}, set has {set}")]
    DimensionMismatch { problem: usize, set: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Bilevel(#[from] BilevelError),
    #[error(transparent)]
    Milp(#[from] MilpError),
    #[error(transparent)]
    Uncertainty(#[from] UncertaintyError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CcgStatus {
    Converged,
    /// The subproblem returned a scenario already in the master; with exact
    /// solves this certifies optimality even when the gap check has not
    /// fired yet.
    RepeatedScenario,
}

#[derive(Clone, Debug)]
pub struct CcgIteration {
    pub lower_bound: f64,
    pub upper_bound: f64,
    pub sp_value: f64,
    pub scenario: Vec<f64>,
    pub subproblems_solved: usize,
    pub eta_floored: bool,
    pub wall_time_s: f64,
}

#[derive(Clone, Debug)]
pub struct CcgTrace {
    pub iterations: Vec<CcgIteration>,
    pub status: CcgStatus,
    pub big_m_check: Option<BigMValidation>,
}

#[derive(Clone, Debug)]
pub struct RoSolution {
    pub first_stage: Vec<f64>,
    /// c'x plus the worst-case recourse at that x.
    pub objective: f64,
    pub scenarios: Vec<Vec<f64>>,
    pub trace: CcgTrace,
}

fn build_master(
    problem: &TwoStageProblem,
    scenarios: &[Vec<f64>],
    eta_floor: f64,
) -> (MixedIntegerProgram, VarLayout) {
    let nx = problem.num_x();
    let ny = problem.num_y();
    let ml = problem.num_links();
    let mut b = LpBuilder::new();
    let mut layout = VarLayout::new();

    let x_range = b.add_vars(nx, 0.0, 0.0, 0.0);
    layout.push("x", x_range.clone());
    for j in 0..nx {
        let (lo, hi) = problem.x_bounds[j];
        b.set_bounds(x_range.start + j, lo, hi);
        b.set_cost(x_range.start + j, problem.first_stage_cost[j]);
    }
    let eta_lower = if scenarios.is_empty() { eta_floor } else { -INF };
    let eta = b.add_var(1.0, eta_lower, INF);
    layout.push("eta", eta..eta + 1);

    for i in 0..problem.first_stage_rhs.len() {
        let terms: Vec<(usize, f64)> = (0..nx)
            .filter_map(|j| {
                let a = problem.first_stage_matrix.get(i, j);
                (a != 0.0).then_some((x_range.start + j, a))
            })
            .collect();
        b.add_row(&terms, Sense::Le, problem.first_stage_rhs[i]);
    }

    for (s, v) in scenarios.iter().enumerate() {
        let yr = b.add_vars(ny, 0.0, -INF, INF);
        layout.push(&format!("y{s}"), yr.clone());

        let mut terms: Vec<(usize, f64)> = problem
            .recourse_cost
            .iter()
            .enumerate()
            .filter(|(_, &c)| c != 0.0)
            .map(|(j, &c)| (yr.start + j, c))
            .collect();
        terms.push((eta, -1.0));
        b.add_row(&terms, Sense::Le, 0.0);

        let mv = problem.link_v.mul_vec(v);
        for i in 0..ml {
            let mut terms: Vec<(usize, f64)> = Vec::new();
            for j in 0..nx {
                let a = problem.link_x.get(i, j);
                if a != 0.0 {
                    terms.push((x_range.start + j, a));
                }
            }
            for j in 0..ny {
                let w = problem.link_y.get(i, j);
                if w != 0.0 {
                    terms.push((yr.start + j, w));
                }
            }
            b.add_row(&terms, problem.link_senses[i], problem.link_rhs[i] - mv[i]);
        }
    }

    let mut mask = vec![false; b.num_vars()];
    for (j, &bin) in problem.x_binary.iter().enumerate() {
        mask[x_range.start + j] = bin;
    }
    (MixedIntegerProgram { lp: b.build(), binary_mask: mask, sense: ObjSense::Min }, layout)
}

struct SpReport {
    value: f64,
    v: Vec<f64>,
    solved: usize,
}

fn run_ccg<F>(problem: &TwoStageProblem, cfg: &CcgConfig, mut solve_sp: F) -> Result<RoSolution, CcgError>
where
    F: FnMut(&[f64], Option<&[f64]>) -> Result<SpReport, CcgError>,
{
    problem.validate()?;
    let mut scenarios: Vec<Vec<f64>> = Vec::new();
    let mut iterations: Vec<CcgIteration> = Vec::new();
    let mut best_ub = f64::INFINITY;
    let mut best_x: Vec<f64> = vec![0.0; problem.num_x()];
    let mut last_v: Option<Vec<f64>> = None;

    loop {
        let started = Instant::now();
        let floored = scenarios.is_empty();
        let (master, layout) = build_master(problem, &scenarios, cfg.eta_floor);
        let msol = mip::solve_milp(&master, &cfg.milp)?;
        if msol.status != MilpStatus::Optimal {
            return Err(CcgError::MasterInfeasible);
        }
        let x = layout.slice("x", &msol.primal).to_vec();
        let lower_bound = msol.objective_value;

        let sp = solve_sp(&x, last_v.as_deref())?;
        let candidate = dot(&problem.first_stage_cost, &x) + sp.value;
        if candidate < best_ub {
            best_ub = candidate;
            best_x = x.clone();
        }

        iterations.push(CcgIteration {
            lower_bound,
            upper_bound: best_ub,
            sp_value: sp.value,
            scenario: sp.v.clone(),
            subproblems_solved: sp.solved,
            eta_floored: floored,
            wall_time_s: started.elapsed().as_secs_f64(),
        });

        let gap = best_ub - lower_bound;
        if gap <= cfg.epsilon * (1.0 + best_ub.abs()) {
            return Ok(RoSolution {
                first_stage: best_x,
                objective: best_ub,
                scenarios,
                trace: CcgTrace { iterations, status: CcgStatus::Converged, big_m_check: None },
            });
        }
        let repeated = scenarios
            .iter()
            .any(|s| s.iter().zip(&sp.v).all(|(a, b)| (a - b).abs() <= cfg.scenario_repeat_tol));
        if repeated {
            return Ok(RoSolution {
                first_stage: best_x,
                objective: best_ub,
                scenarios,
                trace: CcgTrace { iterations, status: CcgStatus::RepeatedScenario, big_m_check: None },
            });
        }
        if iterations.len() >= cfg.max_iterations {
            return Err(CcgError::IterationLimit { limit: cfg.max_iterations, gap });
        }
        last_v = Some(sp.v.clone());
        scenarios.push(sp.v);
    }
}

/// One subproblem MILP per round over the selector encoding of the whole
/// product of unions.
pub fn solve_monolithic(
    problem: &TwoStageProblem,
    pu: &ProductUnionSet,
    cfg: &CcgConfig,
) -> Result<RoSolution, CcgError> {
    if pu.total_dim() != problem.uncertainty_dim {
        return Err(CcgError::DimensionMismatch { problem: problem.uncertainty_dim, set: pu.total_dim() });
    }
    let enc = encode_monolithic_with_big_m(pu, cfg.kkt.big_delta);
    let mut sol = run_ccg(problem, cfg, |x, warm| {
        let out = solve_subproblem(x, problem, SubproblemKind::Monolithic(&enc), &cfg.kkt, &cfg.milp, warm)?;
        Ok(SpReport { value: out.value, v: out.v, solved: 1 })
    })?;
    if cfg.validate_big_m {
        sol.trace.big_m_check = Some(validate_big_m(
            &sol.first_stage,
            problem,
            SubproblemKind::Monolithic(&enc),
            &cfg.kkt,
            &cfg.milp,
        )?);
    }
    Ok(sol)
}

/// One subproblem MILP per explicit subset combination per round; the worst
/// value wins, lowest index on ties. Subproblems run in parallel.
pub fn solve_enumerated(
    problem: &TwoStageProblem,
    pu: &ProductUnionSet,
    cfg: &CcgConfig,
) -> Result<RoSolution, CcgError> {
    if pu.total_dim() != problem.uncertainty_dim {
        return Err(CcgError::DimensionMismatch { problem: problem.uncertainty_dim, set: pu.total_dim() });
    }
    let subsets: Vec<ExplicitSubset> = enumerate_explicit_subsets_capped(pu, cfg.explosion_cap)?.collect();
    let mut sol = run_ccg(problem, cfg, |x, _warm| {
        let outs: Vec<_> = subsets
            .par_iter()
            .map(|e| solve_subproblem(x, problem, SubproblemKind::Subset(&e.subset), &cfg.kkt, &cfg.milp, None))
            .collect::<Result<_, _>>()?;
        let mut best = 0;
        for (i, out) in outs.iter().enumerate() {
            if out.value > outs[best].value {
                best = i;
            }
        }
        Ok(SpReport { value: outs[best].value, v: outs[best].v.clone(), solved: subsets.len() })
    })?;
    if cfg.validate_big_m {
        let mut worst: Option<BigMValidation> = None;
        for e in &subsets {
            let check =
                validate_big_m(&sol.first_stage, problem, SubproblemKind::Subset(&e.subset), &cfg.kkt, &cfg.milp)?;
            let suspect = matches!(check, BigMValidation::Suspect { .. });
            if worst.is_none() || suspect {
                worst = Some(check);
            }
            if suspect {
                break;
            }
        }
        sol.trace.big_m_check = worst;
    }
    Ok(sol)
}

/// Deterministic counterpart with the uncertainty pinned at one point:
/// min c'x + b'y over all constraints at v. Returns (x, objective).
pub fn solve_fixed_scenario(
    problem: &TwoStageProblem,
    v: &[f64],
    milp: &MilpOptions,
) -> Result<(Vec<f64>, f64), CcgError> {
    problem.validate()?;
    assert_eq!(v.len(), problem.uncertainty_dim);
    let nx = problem.num_x();
    let ny = problem.num_y();
    let mut b = LpBuilder::new();
    let x_range = b.add_vars(nx, 0.0, 0.0, 0.0);
    for j in 0..nx {
        let (lo, hi) = problem.x_bounds[j];
        b.set_bounds(x_range.start + j, lo, hi);
        b.set_cost(x_range.start + j, problem.first_stage_cost[j]);
    }
    let y_range = b.add_vars(ny, 0.0, -INF, INF);
    for j in 0..ny {
        b.set_cost(y_range.start + j, problem.recourse_cost[j]);
    }
    for i in 0..problem.first_stage_rhs.len() {
        let terms: Vec<(usize, f64)> = (0..nx)
            .filter_map(|j| {
                let a = problem.first_stage_matrix.get(i, j);
                (a != 0.0).then_some((x_range.start + j, a))
            })
            .collect();
        b.add_row(&terms, Sense::Le, problem.first_stage_rhs[i]);
    }
    let mv = problem.link_v.mul_vec(v);
    for i in 0..problem.num_links() {
        let mut terms: Vec<(usize, f64)> = Vec::new();
        for j in 0..nx {
            let a = problem.link_x.get(i, j);
            if a != 0.0 {
                terms.push((x_range.start + j, a));
            }
        }
        for j in 0..ny {
            let w = problem.link_y.get(i, j);
            if w != 0.0 {
                terms.push((y_range.start + j, w));
            }
        }
        b.add_row(&terms, problem.link_senses[i], problem.link_rhs[i] - mv[i]);
    }
    let mut mask = vec![false; b.num_vars()];
    for (j, &bin) in problem.x_binary.iter().enumerate() {
        mask[x_range.start + j] = bin;
    }
    let milp_prob = MixedIntegerProgram { lp: b.build(), binary_mask: mask, sense: ObjSense::Min };
    let sol = mip::solve_milp(&milp_prob, milp)?;
    if sol.status != MilpStatus::Optimal {
        return Err(CcgError::MasterInfeasible);
    }
    Ok((sol.primal[x_range].to_vec(), sol.objective_value))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mat::Mat;
    use crate::uncertainty::{PolytopeSubset, UnionSet};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    use crate::testutil::random_piecewise as random_instance;

    fn two_interval_union() -> UnionSet {
        UnionSet::new(vec![
            PolytopeSubset::from_box(&[(-1.0, -0.2)], 0).unwrap(),
            PolytopeSubset::from_box(&[(0.5, 1.0)], 1).unwrap(),
        ])
        .unwrap()
    }

    #[test]
    fn singleton_uncertainty_reduces_to_the_deterministic_problem() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for case in 0..5 {
            let inst = random_instance(&mut rng, 1, 2, 2, true);
            let v0 = rng.random_range(-0.5..0.5);
            let union = UnionSet::new(vec![PolytopeSubset::from_box(&[(v0, v0)], 0).unwrap()]).unwrap();
            let pu = ProductUnionSet::new(union, 1).unwrap();
            let cfg = CcgConfig::default();

            let robust = solve_monolithic(&inst.problem, &pu, &cfg).unwrap();
            let (_, det_obj) = solve_fixed_scenario(&inst.problem, &[v0], &cfg.milp).unwrap();
            assert!(
                (robust.objective - det_obj).abs() <= 1e-6 * (1.0 + det_obj.abs()),
                "case {case}: robust {} deterministic {}",
                robust.objective,
                det_obj
            );
        }
    }

    #[test]
    fn one_dimensional_hedging_has_a_closed_form() {
        // min x + 2 max(0, v - x) with x in [0, 1], worst v = 1: the optimum
        // hedges fully at x = 1 with value 1.
        let problem = TwoStageProblem {
            first_stage_cost: vec![1.0],
            recourse_cost: vec![2.0],
            first_stage_matrix: Mat::with_cols(1),
            first_stage_rhs: vec![],
            link_x: Mat::from_rows_with_cols(&[vec![-1.0], vec![0.0]], 1).unwrap(),
            link_y: Mat::from_rows_with_cols(&[vec![-1.0], vec![-1.0]], 1).unwrap(),
            link_v: Mat::from_rows_with_cols(&[vec![1.0], vec![0.0]], 1).unwrap(),
            link_rhs: vec![0.0, 0.0],
            link_senses: vec![Sense::Le, Sense::Le],
            x_binary: vec![false],
            x_bounds: vec![(0.0, 1.0)],
            uncertainty_dim: 1,
        };
        let pu = ProductUnionSet::new(two_interval_union(), 1).unwrap();
        let sol = solve_monolithic(&problem, &pu, &CcgConfig::default()).unwrap();
        assert!((sol.objective - 1.0).abs() < 1e-6, "got {}", sol.objective);
        assert!((sol.first_stage[0] - 1.0).abs() < 1e-6);
        assert_eq!(sol.trace.status, CcgStatus::Converged);
    }

    #[test]
    fn monolithic_and_enumerated_routes_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(57);
        for case in 0..6 {
            let inst = random_instance(&mut rng, 2, 2, 2, case % 2 == 0);
            let pu = ProductUnionSet::new(two_interval_union(), 2).unwrap();
            let cfg = CcgConfig::default();

            let mono = solve_monolithic(&inst.problem, &pu, &cfg).unwrap();
            let enumd = solve_enumerated(&inst.problem, &pu, &cfg).unwrap();
            assert!(
                (mono.objective - enumd.objective).abs() <= 1e-6 * (1.0 + mono.objective.abs()),
                "case {case}: monolithic {} enumerated {}",
                mono.objective,
                enumd.objective
            );
            assert_eq!(enumd.trace.iterations[0].subproblems_solved, 4, "2 subsets to the power of 2 steps");
        }
    }

    #[test]
    fn trace_bounds_are_monotone_and_close() {
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        let inst = random_instance(&mut rng, 2, 3, 2, false);
        let pu = ProductUnionSet::new(two_interval_union(), 2).unwrap();
        let cfg = CcgConfig::default();
        let sol = solve_monolithic(&inst.problem, &pu, &cfg).unwrap();

        let iters = &sol.trace.iterations;
        assert!(iters[0].eta_floored);
        assert!(iters.iter().skip(1).all(|it| !it.eta_floored));
        for w in iters.windows(2) {
            assert!(w[1].lower_bound >= w[0].lower_bound - 1e-7, "master lower bounds must not regress");
            assert!(w[1].upper_bound <= w[0].upper_bound + 1e-12, "incumbent upper bounds must not regress");
        }
        let last = iters.last().unwrap();
        match sol.trace.status {
            CcgStatus::Converged => {
                assert!(last.upper_bound - last.lower_bound <= cfg.epsilon * (1.0 + last.upper_bound.abs()));
            }
            CcgStatus::RepeatedScenario => {}
        }
        assert!((sol.objective - last.upper_bound).abs() < 1e-12);
    }

    #[test]
    fn grid_search_oracle_on_a_scalar_first_stage() {
        let mut rng = ChaCha8Rng::seed_from_u64(83);
        let inst = random_instance(&mut rng, 1, 2, 1, false);
        let problem = TwoStageProblem { first_stage_rhs: vec![1.0], ..inst.problem.clone() };
        let union = two_interval_union();
        let pu = ProductUnionSet::new(union.clone(), 1).unwrap();
        let sol = solve_monolithic(&problem, &pu, &CcgConfig::default()).unwrap();

        // Inner value in closed form; worst case over interval endpoints
        // because the inner value is convex in v.
        let endpoints = [-1.0, -0.2, 0.5, 1.0];
        let inner = |x: f64, v: f64| -> f64 {
            (0..2)
                .map(|j| {
                    problem.recourse_cost[j] * (inst.a[j][0] * v + inst.g[j][0] * x - inst.h[j]).max(0.0)
                })
                .sum()
        };
        let mut best = f64::INFINITY;
        for step in 0..=1000 {
            let x = step as f64 / 1000.0;
            let worst = endpoints.iter().map(|&v| inner(x, v)).fold(f64::NEG_INFINITY, f64::max);
            best = best.min(problem.first_stage_cost[0] * x + worst);
        }
        assert!(
            (sol.objective - best).abs() <= 1e-2 * (1.0 + best.abs()),
            "ccg {} grid {}",
            sol.objective,
            best
        );
        assert!(sol.objective <= best + 1e-9, "ccg must not exceed the grid optimum");
    }

    #[test]
    fn single_subset_union_converges_on_both_routes() {
        let mut rng = ChaCha8Rng::seed_from_u64(97);
        let inst = random_instance(&mut rng, 1, 2, 2, false);
        let union = UnionSet::new(vec![PolytopeSubset::from_box(&[(-0.5, 0.5)], 0).unwrap()]).unwrap();
        let pu = ProductUnionSet::new(union, 1).unwrap();
        let cfg = CcgConfig::default();
        let mono = solve_monolithic(&inst.problem, &pu, &cfg).unwrap();
        let enumd = solve_enumerated(&inst.problem, &pu, &cfg).unwrap();
        assert!((mono.objective - enumd.objective).abs() <= 1e-6 * (1.0 + mono.objective.abs()));
        assert_eq!(enumd.trace.iterations[0].subproblems_solved, 1);
    }

    #[test]
    fn iteration_cap_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(103);
        let inst = random_instance(&mut rng, 2, 2, 2, false);
        let pu = ProductUnionSet::new(two_interval_union(), 2).unwrap();
        let cfg = CcgConfig { max_iterations: 1, ..CcgConfig::default() };
        match solve_monolithic(&inst.problem, &pu, &cfg) {
            Err(CcgError::IterationLimit { limit: 1, .. }) => {}
            other => panic!("expected iteration limit, got {other:?}"),
        }
    }

    #[test]
    fn big_m_validation_is_attached_when_asked() {
        let mut rng = ChaCha8Rng::seed_from_u64(107);
        let inst = random_instance(&mut rng, 1, 2, 1, false);
        let pu = ProductUnionSet::new(two_interval_union(), 1).unwrap();
        let cfg = CcgConfig { validate_big_m: true, ..CcgConfig::default() };
        let sol = solve_monolithic(&inst.problem, &pu, &cfg).unwrap();
        match sol.trace.big_m_check {
            Some(BigMValidation::Consistent { .. }) => {}
            other => panic!("expected a consistent check, got {other:?}"),
        }
    }
}
