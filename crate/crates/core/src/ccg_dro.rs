//! Distributionally robust extension over the subsets of a union.
//!
//! The adversary now picks a probability vector p over the K subsets inside
//! a KL ball around a nominal estimate, and within each subset the usual
//! worst-case point:
//!
//! ```text
//!     min_x c'x + max_{p : KL(p||pbar) <= rho} sum_k p_k C_k(x)
//!     C_k(x) = max_{v in V_k} min_y { b'y : T x + W y + M v {<=,=} h }
//! ```
//!
//! Strong duality turns the inner maximum into a one-dimensional convex
//! minimization,
//!
//! ```text
//!     WCE(C) = min_{nu > 0} nu ln( sum_k pbar_k exp(C_k / nu) ) + rho nu,
//! ```
//!
//! which the master approximates with epigraph variables eta_k >= b'y per
//! generated scenario, handled by outer approximation over the MILP
//! relaxation. The [`MasterVariant::Direct`] master linearizes the
//! log-sum-exp perspective itself, whose gradients are softmax weights and
//! therefore bounded; [`MasterVariant::Epigraph`] keeps the saddle form
//! mu + rho nu + nu sum_k pbar_k exp((eta_k - mu)/nu - 1) with one epigraph
//! variable per exponential, plus linear caps on the exponents (valid at
//! every master optimum, where mu >= eta_k + nu ln pbar_k - nu) so the cut
//! coefficients stay sane. Upper bounds evaluate the dual formula exactly at
//! the subproblem costs.

use crate::bilevel::{solve_subproblem, BilevelError, KktReformConfig, SubproblemKind};
use crate::ccg_ro::CcgStatus;
use crate::lp::{LpBuilder, Sense, VarLayout, INF};
use crate::mat::dot;
use crate::mip::{
    self, ConvexConstraint, ConvexMipError, MilpOptions, MilpStatus, MixedIntegerProgram, ObjSense,
};
use crate::model::{ModelError, TwoStageProblem};
use crate::uncertainty::{NominalEstimate, UnionSet};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::time::Instant;
use thiserror::Error;

#[derive(Error, Debug)]
pub enum DroError {
    #[error("iteration limit {limit} reached with gap {gap:.3e}")]
    IterationLimit { limit: usize, gap: f64 },
    #[error("master problem is infeasible")]
    MasterInfeasible,
    #[error("ambiguity set: {0}")]
    BadAmbiguity(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Bilevel(#[from] BilevelError),
    #[error(transparent)]
    ConvexMip(#[from] ConvexMipError),
}

/// Forward KL divergence sum_k p_k ln(p_k / q_k), with 0 ln 0 = 0 and
/// +inf whenever p puts mass where q has none.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    debug_assert_eq!(p.len(), q.len());
    let mut s = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if pi <= 0.0 {
            continue;
        }
        if qi <= 0.0 {
            return f64::INFINITY;
        }
        s += pi * (pi / qi).ln();
    }
    s
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AmbiguitySet {
    nominal_probs: Vec<f64>,
    radius: f64,
}

impl AmbiguitySet {
    pub fn new(nominal_probs: Vec<f64>, radius: f64) -> Result<Self, DroError> {
        if nominal_probs.is_empty() {
            return Err(DroError::BadAmbiguity("no subsets".into()));
        }
        if nominal_probs.iter().any(|&p| !p.is_finite() || p < 0.0) {
            return Err(DroError::BadAmbiguity("probabilities must be finite and nonnegative".into()));
        }
        let sum: f64 = nominal_probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(DroError::BadAmbiguity(format!("probabilities sum to {sum}, not 1")));
        }
        if !radius.is_finite() || radius < 0.0 {
            return Err(DroError::BadAmbiguity(format!("radius {radius} must be finite and nonnegative")));
        }
        Ok(AmbiguitySet { nominal_probs, radius })
    }

    pub fn from_estimate(estimate: &NominalEstimate, radius: f64) -> Result<Self, DroError> {
        Self::new(estimate.probs.clone(), radius)
    }

    pub fn nominal_probs(&self) -> &[f64] {
        &self.nominal_probs
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn worst_case_expectation(&self, costs: &[f64]) -> WceDual {
        worst_case_expectation_dual(costs, &self.nominal_probs, self.radius)
    }
}

#[derive(Clone, Debug)]
pub struct WceDual {
    pub value: f64,
    /// Dual temperature; infinite when rho = 0 (the nominal expectation).
    pub nu: f64,
    pub mu: f64,
    /// The maximizing distribution pbar_k exp(C_k / nu) / Z.
    pub worst_probs: Vec<f64>,
}

/// Stable evaluation of nu ln(sum pbar e^{C/nu}) + rho nu by factoring out
/// the support maximum, so every exponent is nonpositive.
fn dual_objective(costs: &[f64], probs: &[f64], rho: f64, nu: f64, m: f64) -> f64 {
    let s: f64 = costs
        .iter()
        .zip(probs)
        .filter(|(_, &p)| p > 0.0)
        .map(|(&c, &p)| p * ((c - m) / nu).exp())
        .sum();
    m + nu * s.ln() + rho * nu
}

pub fn worst_case_expectation_dual(costs: &[f64], probs: &[f64], rho: f64) -> WceDual {
    assert_eq!(costs.len(), probs.len());
    let nominal = dot(costs, probs);
    if rho == 0.0 {
        return WceDual { value: nominal, nu: f64::INFINITY, mu: nominal, worst_probs: probs.to_vec() };
    }
    let m = costs
        .iter()
        .zip(probs)
        .filter(|(_, &p)| p > 0.0)
        .map(|(&c, _)| c)
        .fold(f64::NEG_INFINITY, f64::max);

    let g = |t: f64| dual_objective(costs, probs, rho, t.exp(), m);
    let inv_phi = (5.0f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = ((1e-9f64).ln(), (1e7f64).ln());
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (g(c), g(d));
    for _ in 0..200 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = g(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = g(d);
        }
    }
    let t = 0.5 * (a + b);
    let nu = t.exp();
    // The dual is bounded below by the nominal expectation; clip roundoff.
    let value = g(t).max(nominal);

    let mut worst: Vec<f64> = costs
        .iter()
        .zip(probs)
        .map(|(&ck, &p)| if p > 0.0 { p * ((ck - m) / nu).exp() } else { 0.0 })
        .collect();
    let z: f64 = worst.iter().sum();
    worst.iter_mut().for_each(|w| *w /= z);
    let mu = m + nu * z.ln() - nu;
    WceDual { value, nu, mu, worst_probs: worst }
}

fn for_each_composition(total: usize, parts: usize, f: &mut impl FnMut(&[usize])) {
    fn rec(remaining: usize, idx: usize, buf: &mut [usize], f: &mut impl FnMut(&[usize])) {
        if idx == buf.len() - 1 {
            buf[idx] = remaining;
            f(buf);
            return;
        }
        for v in 0..=remaining {
            buf[idx] = v;
            rec(remaining - v, idx + 1, buf, f);
        }
    }
    let mut buf = vec![0usize; parts];
    rec(total, 0, &mut buf, f);
}

/// Grid search over the simplex, zooming toward the incumbent. Every
/// candidate is checked against the KL constraint directly, so the result is
/// a certified feasible lower bound on the worst-case expectation. Used as
/// an independent check on the dual formula.
pub fn worst_case_expectation_primal(
    costs: &[f64],
    probs: &[f64],
    rho: f64,
    granularity: usize,
    levels: usize,
) -> (f64, Vec<f64>) {
    let k = costs.len();
    let mut best_val = dot(costs, probs);
    let mut best_p = probs.to_vec();
    let mut scale = 1.0f64;
    for _ in 0..levels {
        let center = best_p.clone();
        for_each_composition(granularity, k, &mut |n| {
            let mut p = vec![0.0; k];
            for i in 0..k {
                let q = n[i] as f64 / granularity as f64;
                p[i] = (1.0 - scale) * center[i] + scale * q;
            }
            if kl_divergence(&p, probs) <= rho + 1e-12 {
                let val = dot(&p, costs);
                if val > best_val {
                    best_val = val;
                    best_p = p;
                }
            }
        });
        scale *= 0.35;
    }
    (best_val, best_p)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MasterVariant {
    /// One epigraph variable for the whole dual expression.
    Direct,
    /// One epigraph variable per subset exponential.
    Epigraph,
}

#[derive(Clone, Debug)]
pub struct DroConfig {
    pub epsilon: f64,
    pub max_iterations: usize,
    pub kkt: KktReformConfig,
    pub milp: MilpOptions,
    pub oa_tol: f64,
    pub scenario_repeat_tol: f64,
    pub eta_floor: f64,
    pub variant: MasterVariant,
    /// Bounds on the dual temperature in the master.
    pub nu_bounds: (f64, f64),
    /// Symmetric bound on the dual shift mu; must exceed any achievable
    /// worst-case expectation magnitude.
    pub mu_bound: f64,
}

impl Default for DroConfig {
    fn default() -> Self {
        DroConfig {
            epsilon: 1e-6,
            max_iterations: 100,
            kkt: KktReformConfig::default(),
            milp: MilpOptions::default(),
            oa_tol: 1e-7,
            scenario_repeat_tol: 1e-9,
            eta_floor: -1e12,
            variant: MasterVariant::Direct,
            nu_bounds: (1e-9, 1e7),
            mu_bound: 1e7,
        }
    }
}

/// Exponents above this are treated as overflow so the cut backoff engages
/// before the coefficients blow up. The epigraph master's cap rows keep its
/// LP iterates below roughly `5 - ln pbar_min`, so this only fires at stray
/// evaluation points.
const EXP_CLAMP: f64 = 80.0;

/// Slack added to the exponent caps of the epigraph master. Any cap above
/// zero is valid (at a master optimum the exponent of term k is at most
/// `-ln pbar_k`); the margin just keeps the caps away from active cuts.
const EXP_CAP_MARGIN: f64 = 5.0;

fn stable_log_sum(etas: &[f64], probs: &[f64], nu: f64) -> (f64, f64) {
    // Returns (m, s) with sum_k pbar_k exp(eta_k / nu) = exp(m / nu) * s and
    // every exponent inside s at most zero.
    let m = etas
        .iter()
        .zip(probs)
        .filter(|(_, &p)| p > 0.0)
        .map(|(&e, _)| e)
        .fold(f64::NEG_INFINITY, f64::max);
    let s = etas
        .iter()
        .zip(probs)
        .filter(|(_, &p)| p > 0.0)
        .map(|(&e, &p)| p * ((e - m) / nu).exp())
        .sum();
    (m, s)
}

fn direct_constraint(vars: Vec<usize>, probs: Vec<f64>, rho: f64) -> ConvexConstraint {
    // z = [tau, eta_0 .. eta_{K-1}];
    // g = max { p'eta : KL(p || pbar) <= rho } - tau, evaluated through the
    // same one-dimensional dual minimization the upper bound uses. As the
    // support function of the ambiguity ball the worst-case expectation is
    // convex in eta, and by the envelope theorem the maximizing
    // distribution is a gradient, so every cut coefficient lies in [0, 1].
    // Solving the temperature exactly per evaluation keeps it out of the
    // master, which would otherwise see the flat valley the explicit
    // perspective form has in that direction and crawl along it.
    let k = probs.len();
    let p_eval = probs.clone();
    let eval = move |z: &[f64]| -> f64 {
        worst_case_expectation_dual(&z[1..], &p_eval, rho).value - z[0]
    };
    let p_grad = probs;
    let grad = move |z: &[f64]| -> Vec<f64> {
        let d = worst_case_expectation_dual(&z[1..], &p_grad, rho);
        let mut out = Vec::with_capacity(z.len());
        out.push(-1.0);
        out.extend_from_slice(&d.worst_probs);
        out
    };
    ConvexConstraint {
        vars,
        eval: Box::new(eval),
        grad: Box::new(grad),
        guards: vec![],
        initial_points: vec![vec![0.0; 1 + k]],
    }
}

fn epigraph_constraint(vars: Vec<usize>, nu_lo: f64) -> ConvexConstraint {
    // z = [phi, mu, nu, eta]; g = nu exp((eta - mu)/nu - 1) - phi.
    let eval = move |z: &[f64]| -> f64 {
        let t = (z[3] - z[1]) / z[2] - 1.0;
        if t > EXP_CLAMP {
            return f64::INFINITY;
        }
        z[2] * t.exp() - z[0]
    };
    let grad = move |z: &[f64]| -> Vec<f64> {
        let t = (z[3] - z[1]) / z[2] - 1.0;
        if t > EXP_CLAMP {
            return vec![f64::INFINITY; 4];
        }
        let e = t.exp();
        vec![-1.0, -e, -t * e, e]
    };
    ConvexConstraint {
        vars,
        eval: Box::new(eval),
        grad: Box::new(grad),
        guards: vec![(2, nu_lo)],
        initial_points: vec![vec![0.4, 0.0, 1.0, 0.0], vec![0.1, 0.0, 0.25, 0.0], vec![1.0, 0.0, 2.0, 1.0]],
    }
}

struct DroMaster {
    mip: MixedIntegerProgram,
    constraints: Vec<ConvexConstraint>,
    layout: VarLayout,
}

/// Dual optimum of the previous round's worst-case expectation. Linearizing
/// the master's nonlinearity around that temperature up front pins down the
/// flat valley the saddle form has in (mu, nu), which otherwise takes outer
/// approximation many near-parallel cuts to fence in.
struct SaddleAnchor {
    costs: Vec<f64>,
    nu: f64,
}

fn build_dro_master(
    problem: &TwoStageProblem,
    ambiguity: &AmbiguitySet,
    scenarios: &[Vec<Vec<f64>>],
    cfg: &DroConfig,
    anchor: Option<&SaddleAnchor>,
) -> DroMaster {
    let nx = problem.num_x();
    let ny = problem.num_y();
    let kc = scenarios.len();
    let probs = ambiguity.nominal_probs();
    let rho = ambiguity.radius();
    let mut b = LpBuilder::new();
    let mut layout = VarLayout::new();
    let mut constraints = Vec::new();

    let x_range = b.add_vars(nx, 0.0, 0.0, 0.0);
    layout.push("x", x_range.clone());
    for j in 0..nx {
        let (lo, hi) = problem.x_bounds[j];
        b.set_bounds(x_range.start + j, lo, hi);
        b.set_cost(x_range.start + j, problem.first_stage_cost[j]);
    }

    let eta_lower = |k: usize| if scenarios[k].is_empty() { cfg.eta_floor } else { -INF };

    if rho == 0.0 {
        // The ambiguity ball is a point, so the objective is the exact
        // nominal expectation: no dual variables needed.
        let eta_range = b.add_vars(kc, 0.0, 0.0, INF);
        layout.push("eta", eta_range.clone());
        for k in 0..kc {
            b.set_bounds(eta_range.start + k, eta_lower(k), INF);
            b.set_cost(eta_range.start + k, probs[k]);
        }
    } else {
        match cfg.variant {
            MasterVariant::Direct => {
                let eta_range = b.add_vars(kc, 0.0, 0.0, INF);
                layout.push("eta", eta_range.clone());
                for k in 0..kc {
                    b.set_bounds(eta_range.start + k, eta_lower(k), INF);
                }
                let tau = b.add_var(1.0, -INF, INF);
                layout.push("tau", tau..tau + 1);
                let mut vars = vec![tau];
                vars.extend(eta_range.clone());
                let mut c = direct_constraint(vars, probs.to_vec(), rho);
                if let Some(a) = anchor {
                    let mut p = vec![0.0];
                    p.extend_from_slice(&a.costs);
                    c.initial_points.push(p);
                }
                constraints.push(c);
            }
            MasterVariant::Epigraph => {
                let mu = b.add_var(1.0, -cfg.mu_bound, cfg.mu_bound);
                layout.push("mu", mu..mu + 1);
                let nu = b.add_var(rho, cfg.nu_bounds.0, cfg.nu_bounds.1);
                layout.push("nu", nu..nu + 1);
                let eta_range = b.add_vars(kc, 0.0, 0.0, INF);
                layout.push("eta", eta_range.clone());
                for k in 0..kc {
                    b.set_bounds(eta_range.start + k, eta_lower(k), INF);
                }
                let phi_range = b.add_vars(kc, 0.0, 0.0, INF);
                layout.push("phi", phi_range.clone());
                for k in 0..kc {
                    if probs[k] > 0.0 {
                        b.set_cost(phi_range.start + k, probs[k]);
                        let vars = vec![phi_range.start + k, mu, nu, eta_range.start + k];
                        let mut c = epigraph_constraint(vars, cfg.nu_bounds.0);
                        if let Some(a) = anchor {
                            // Tangents across two decades either side of the
                            // anchored temperature, each with the shift that
                            // is exactly optimal there. A single anchor is
                            // useless when the incoming costs are far from
                            // where the master will move, and outer
                            // approximation crawls toward the right scale
                            // one near-parallel cut at a time.
                            let nu_hat = a.nu.clamp(cfg.nu_bounds.0, cfg.nu_bounds.1);
                            for f in [0.01, 0.1, 1.0, 10.0, 100.0] {
                                let nu_g = (nu_hat * f).clamp(cfg.nu_bounds.0, cfg.nu_bounds.1);
                                let (m, s) = stable_log_sum(&a.costs, probs, nu_g);
                                let mu_g =
                                    (m + nu_g * s.ln() - nu_g).clamp(-cfg.mu_bound, cfg.mu_bound);
                                let t = (a.costs[k] - mu_g) / nu_g - 1.0;
                                // A tangent whose exponent has collapsed or
                                // blown up contributes coefficients outside
                                // anything the simplex tolerances can touch:
                                // the flat ones are vacuous next to phi >= 0,
                                // yet their subnormal entries still corrupt
                                // pivots. Keep the informative decades only.
                                if !(-12.0..=30.0).contains(&t) {
                                    continue;
                                }
                                c.initial_points.push(vec![
                                    nu_g * t.exp(),
                                    mu_g,
                                    nu_g,
                                    a.costs[k],
                                ]);
                            }
                        }
                        constraints.push(c);
                        // At any master optimum mu >= eta_k + nu ln pbar_k - nu,
                        // so this linear cap on the exponent never cuts one off,
                        // but it stops the LP relaxation from wandering into
                        // territory where the exponential's cuts are enormous.
                        let cap = EXP_CAP_MARGIN - probs[k].ln();
                        b.add_row(
                            &[(eta_range.start + k, 1.0), (mu, -1.0), (nu, -(cap + 1.0))],
                            Sense::Le,
                            0.0,
                        );
                    }
                }
            }
        }
    }
    let eta_range = layout.range("eta");

    for i in 0..problem.first_stage_rhs.len() {
        let terms: Vec<(usize, f64)> = (0..nx)
            .filter_map(|j| {
                let a = problem.first_stage_matrix.get(i, j);
                (a != 0.0).then_some((x_range.start + j, a))
            })
            .collect();
        b.add_row(&terms, Sense::Le, problem.first_stage_rhs[i]);
    }

    for (k, scen_k) in scenarios.iter().enumerate() {
        for (s, v) in scen_k.iter().enumerate() {
            let yr = b.add_vars(ny, 0.0, -INF, INF);
            layout.push(&format!("y{k}_{s}"), yr.clone());

            let mut terms: Vec<(usize, f64)> = problem
                .recourse_cost
                .iter()
                .enumerate()
                .filter(|(_, &c)| c != 0.0)
                .map(|(j, &c)| (yr.start + j, c))
                .collect();
            terms.push((eta_range.start + k, -1.0));
            b.add_row(&terms, Sense::Le, 0.0);

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
                        terms.push((yr.start + j, w));
                    }
                }
                b.add_row(&terms, problem.link_senses[i], problem.link_rhs[i] - mv[i]);
            }
        }
    }

    let mut mask = vec![false; b.num_vars()];
    for (j, &bin) in problem.x_binary.iter().enumerate() {
        mask[x_range.start + j] = bin;
    }
    DroMaster {
        mip: MixedIntegerProgram { lp: b.build(), binary_mask: mask, sense: ObjSense::Min },
        constraints,
        layout,
    }
}

#[derive(Clone, Debug)]
pub struct DroIteration {
    pub lower_bound: f64,
    pub upper_bound: f64,
    pub subset_costs: Vec<f64>,
    pub oa_rounds: usize,
    pub subproblems_solved: usize,
    pub wall_time_s: f64,
}

#[derive(Clone, Debug)]
pub struct DroTrace {
    pub iterations: Vec<DroIteration>,
    pub status: CcgStatus,
}

#[derive(Clone, Debug)]
pub struct DroSolution {
    pub first_stage: Vec<f64>,
    pub objective: f64,
    /// Dual certificate of the reported objective: the worst-case
    /// expectation at `first_stage` is mu-shifted softmax with temperature nu.
    pub mu: f64,
    pub nu: f64,
    pub worst_probs: Vec<f64>,
    pub subset_costs: Vec<f64>,
    pub scenarios: Vec<Vec<Vec<f64>>>,
    pub trace: DroTrace,
    pub variant: MasterVariant,
}

fn cheapest_first_stage(
    problem: &TwoStageProblem,
    options: &MilpOptions,
) -> Result<Vec<f64>, DroError> {
    let nx = problem.num_x();
    let mut b = LpBuilder::new();
    for j in 0..nx {
        let (lo, hi) = problem.x_bounds[j];
        b.add_var(problem.first_stage_cost[j], lo, hi);
    }
    for i in 0..problem.first_stage_rhs.len() {
        let terms: Vec<(usize, f64)> = (0..nx)
            .filter_map(|j| {
                let a = problem.first_stage_matrix.get(i, j);
                (a != 0.0).then_some((j, a))
            })
            .collect();
        b.add_row(&terms, Sense::Le, problem.first_stage_rhs[i]);
    }
    let mip = MixedIntegerProgram {
        lp: b.build(),
        binary_mask: problem.x_binary.clone(),
        sense: ObjSense::Min,
    };
    let sol = mip::solve_milp(&mip, options).map_err(ConvexMipError::from)?;
    if sol.status != MilpStatus::Optimal {
        return Err(DroError::MasterInfeasible);
    }
    Ok(sol.primal)
}

pub fn solve_dro(
    problem: &TwoStageProblem,
    union: &UnionSet,
    ambiguity: &AmbiguitySet,
    cfg: &DroConfig,
) -> Result<DroSolution, DroError> {
    problem.validate()?;
    if union.dim() != problem.uncertainty_dim {
        return Err(DroError::Dimension(format!(
            "problem uncertainty dimension {} vs union dimension {}",
            problem.uncertainty_dim,
            union.dim()
        )));
    }
    let kc = union.num_subsets();
    if ambiguity.nominal_probs().len() != kc {
        return Err(DroError::Dimension(format!(
            "{} nominal probabilities for {} subsets",
            ambiguity.nominal_probs().len(),
            kc
        )));
    }

    let mut scenarios: Vec<Vec<Vec<f64>>> = vec![Vec::new(); kc];
    let mut iterations: Vec<DroIteration> = Vec::new();
    let mut best_ub = f64::INFINITY;
    let mut best: Option<(Vec<f64>, Vec<f64>, WceDual)> = None;
    let mut last_vs: Vec<Option<Vec<f64>>> = vec![None; kc];
    let mut saddle: Option<SaddleAnchor> = None;
    let status;

    loop {
        let started = Instant::now();
        // Until the first subproblems land, every eta sits on the floor and
        // any cut through that point inherits its scale, which is poison for
        // the master LP on problems with large costs. The cheapest feasible
        // first stage seeds the loop just as well.
        let seeding = scenarios.iter().all(|s| s.is_empty());
        let (lower_bound, x, oa_rounds) = if seeding {
            (f64::NEG_INFINITY, cheapest_first_stage(problem, &cfg.milp)?, 0)
        } else {
            let master = build_dro_master(problem, ambiguity, &scenarios, cfg, saddle.as_ref());
            let report =
                mip::solve_convex_mip(&master.mip, &master.constraints, &cfg.milp, cfg.oa_tol)?;
            if report.solution.status != MilpStatus::Optimal {
                return Err(DroError::MasterInfeasible);
            }
            let x = master.layout.slice("x", &report.solution.primal).to_vec();
            (report.solution.objective_value, x, report.rounds)
        };

        let outs: Vec<_> = (0..kc)
            .into_par_iter()
            .map(|k| {
                solve_subproblem(
                    &x,
                    problem,
                    SubproblemKind::Subset(&union.subsets()[k]),
                    &cfg.kkt,
                    &cfg.milp,
                    last_vs[k].as_deref(),
                )
            })
            .collect::<Result<_, _>>()?;
        let costs: Vec<f64> = outs.iter().map(|o| o.value).collect();
        let wce = worst_case_expectation_dual(&costs, ambiguity.nominal_probs(), ambiguity.radius());
        saddle = Some(SaddleAnchor { costs: costs.clone(), nu: wce.nu });
        let candidate = dot(&problem.first_stage_cost, &x) + wce.value;
        if candidate < best_ub {
            best_ub = candidate;
            best = Some((x, costs.clone(), wce));
        }

        iterations.push(DroIteration {
            lower_bound,
            upper_bound: best_ub,
            subset_costs: costs,
            oa_rounds,
            subproblems_solved: kc,
            wall_time_s: started.elapsed().as_secs_f64(),
        });

        let gap = best_ub - lower_bound;
        if gap <= cfg.epsilon * (1.0 + best_ub.abs()) {
            status = CcgStatus::Converged;
            break;
        }
        fn present(scen: &[Vec<f64>], v: &[f64], tol: f64) -> bool {
            scen.iter().any(|s| s.iter().zip(v).all(|(a, b)| (a - b).abs() <= tol))
        }
        if (0..kc).all(|k| present(&scenarios[k], &outs[k].v, cfg.scenario_repeat_tol)) {
            status = CcgStatus::RepeatedScenario;
            break;
        }
        if iterations.len() >= cfg.max_iterations {
            return Err(DroError::IterationLimit { limit: cfg.max_iterations, gap });
        }
        for (k, out) in outs.into_iter().enumerate() {
            if !present(&scenarios[k], &out.v, cfg.scenario_repeat_tol) {
                scenarios[k].push(out.v.clone());
            }
            last_vs[k] = Some(out.v);
        }
    }

    let (first_stage, subset_costs, wce) = best.expect("at least one iteration ran");
    Ok(DroSolution {
        first_stage,
        objective: best_ub,
        mu: wce.mu,
        nu: wce.nu,
        worst_probs: wce.worst_probs,
        subset_costs,
        scenarios,
        trace: DroTrace { iterations, status },
        variant: cfg.variant,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ccg_ro::{solve_monolithic, CcgConfig};
    use crate::testutil::{box_corners, closed_form_inner, random_piecewise};
    use crate::uncertainty::{PolytopeSubset, ProductUnionSet};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_simplex(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
        let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.05)).collect();
        let s: f64 = raw.iter().sum();
        raw.into_iter().map(|x| x / s).collect()
    }

    #[test]
    fn dual_value_is_certified_by_its_own_maximizer() {
        let mut rng = ChaCha8Rng::seed_from_u64(301);
        for case in 0..200 {
            let k = rng.random_range(2..=4);
            let costs: Vec<f64> = (0..k).map(|_| rng.random_range(-5.0..15.0)).collect();
            let probs = random_simplex(&mut rng, k);
            let rho = [0.01, 0.1, 0.5, 2.0][case % 4];

            let dual = worst_case_expectation_dual(&costs, &probs, rho);
            let div = kl_divergence(&dual.worst_probs, &probs);
            assert!(div <= rho + 1e-6, "case {case}: maximizer has divergence {div} > {rho}");
            let attained = dot(&dual.worst_probs, &costs);
            assert!(
                (attained - dual.value).abs() <= 1e-4 * (1.0 + dual.value.abs()),
                "case {case}: maximizer attains {attained}, dual value {}",
                dual.value
            );

            let (granularity, levels) = match k {
                2 => (2000, 1),
                3 => (48, 6),
                _ => (24, 7),
            };
            let (primal, p) = worst_case_expectation_primal(&costs, &probs, rho, granularity, levels);
            assert!(kl_divergence(&p, &probs) <= rho + 1e-9);
            assert!(
                primal <= dual.value + 1e-7 * (1.0 + dual.value.abs()),
                "case {case}: feasible grid point {primal} beats the dual {}",
                dual.value
            );
            assert!(
                dual.value - primal <= 1e-2 * (1.0 + dual.value.abs()),
                "case {case}: grid search stuck at {primal}, dual {}",
                dual.value
            );
        }
    }

    #[test]
    fn binary_support_boundary_has_a_bisection_oracle() {
        // K = 2, costs (0, 1): the worst case puts as much mass on the
        // second subset as the ball allows, so the value solves
        // kl((1-q, q) || pbar) = rho in q.
        let probs = vec![0.5, 0.5];
        let costs = vec![0.0, 1.0];
        let rho = 0.1;
        let (mut lo, mut hi) = (0.5, 1.0 - 1e-12);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let d = kl_divergence(&[1.0 - mid, mid], &probs);
            if d <= rho {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let dual = worst_case_expectation_dual(&costs, &probs, rho);
        assert!((dual.value - lo).abs() < 1e-5, "dual {}, bisection {lo}", dual.value);

        // At rho = ln 2 the point mass on the dearer subset is exactly
        // feasible, so the value reaches the support maximum.
        let exact = worst_case_expectation_dual(&costs, &probs, 2.0f64.ln());
        assert!((exact.value - 1.0).abs() < 1e-6, "got {}", exact.value);
    }

    #[test]
    fn radius_interpolates_between_nominal_and_support_maximum() {
        let mut rng = ChaCha8Rng::seed_from_u64(307);
        for _ in 0..30 {
            let k = rng.random_range(2..=4);
            let costs: Vec<f64> = (0..k).map(|_| rng.random_range(-3.0..9.0)).collect();
            let probs = random_simplex(&mut rng, k);
            let nominal = dot(&costs, &probs);
            let support_max = costs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);

            let mut prev = f64::NEG_INFINITY;
            for rho in [0.0, 0.02, 0.1, 0.4, 1.5, 6.0, 50.0] {
                let d = worst_case_expectation_dual(&costs, &probs, rho);
                assert!(d.value >= prev - 1e-9, "value must be nondecreasing in the radius");
                assert!(d.value >= nominal - 1e-9);
                // The bracketed search never sends nu fully to zero, so allow
                // the rho * nu_lo residue on top of the support maximum.
                assert!(d.value <= support_max + 1e-6);
                prev = d.value;
            }
            let zero = worst_case_expectation_dual(&costs, &probs, 0.0);
            assert!((zero.value - nominal).abs() < 1e-12);
            let huge = worst_case_expectation_dual(&costs, &probs, 50.0);
            assert!((huge.value - support_max).abs() <= 1e-3 * (1.0 + support_max.abs()));
        }
    }

    #[test]
    fn constraint_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(311);
        for _ in 0..20 {
            let probs = random_simplex(&mut rng, 3);
            let rho = rng.random_range(0.01..2.0);
            let dc = direct_constraint((0..4).collect(), probs, rho);
            let point = vec![
                rng.random_range(-1.0..1.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
            ];
            let err = mip::check_gradient(&dc, &point);
            assert!(err < 1e-5, "direct gradient error {err}");

            let ec = epigraph_constraint((0..4).collect(), 1e-9);
            let point = vec![
                rng.random_range(0.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(0.2..3.0),
                rng.random_range(-2.0..2.0),
            ];
            let err = mip::check_gradient(&ec, &point);
            assert!(err < 1e-5, "epigraph gradient error {err}");
        }
    }

    #[test]
    fn perspective_exponential_is_positive_semidefinite() {
        // f(nu, w) = nu exp(w/nu - 1) has Hessian e^{w/nu-1} *
        // [[w^2/nu^3, -w/nu^2], [-w/nu^2, 1/nu]]: rank one and PSD.
        let mut rng = ChaCha8Rng::seed_from_u64(313);
        for _ in 0..100 {
            let nu = rng.random_range(0.05..4.0);
            let w = rng.random_range(-3.0..3.0);
            let e = (w / nu - 1.0f64).exp();
            let (a, bb, c) = (w * w / nu.powi(3) * e, -w / nu.powi(2) * e, 1.0 / nu * e);
            let trace = a + c;
            let det = a * c - bb * bb;
            assert!(trace >= 0.0);
            assert!(det >= -1e-10 * (1.0 + trace * trace), "det {det}");
            let eig_min = 0.5 * (trace - (trace * trace - 4.0 * det).max(0.0).sqrt());
            assert!(eig_min >= -1e-10 * (1.0 + trace), "eig_min {eig_min}");
        }
    }

    #[test]
    fn direct_eval_is_convex_along_random_segments() {
        let mut rng = ChaCha8Rng::seed_from_u64(317);
        let probs = vec![0.4, 0.35, 0.25];
        let dc = direct_constraint((0..4).collect(), probs, 0.3);
        for _ in 0..200 {
            let sample = |rng: &mut ChaCha8Rng| {
                vec![
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-2.0..2.0),
                ]
            };
            let za = sample(&mut rng);
            let zb = sample(&mut rng);
            let mid: Vec<f64> = za.iter().zip(&zb).map(|(a, b)| 0.5 * (a + b)).collect();
            let lhs = (dc.eval)(&mid);
            let rhs = 0.5 * ((dc.eval)(&za) + (dc.eval)(&zb));
            assert!(lhs <= rhs + 1e-9 * (1.0 + rhs.abs()), "midpoint {lhs} above chord {rhs}");
        }
    }

    fn two_interval_union() -> UnionSet {
        UnionSet::new(vec![
            PolytopeSubset::from_box(&[(-1.0, -0.2)], 0).unwrap(),
            PolytopeSubset::from_box(&[(0.5, 1.0)], 1).unwrap(),
        ])
        .unwrap()
    }

    #[test]
    fn zero_radius_reduces_to_the_nominal_expectation() {
        let mut rng = ChaCha8Rng::seed_from_u64(331);
        let mut inst = random_piecewise(&mut rng, 1, 2, 1, false);
        inst.problem.first_stage_rhs = vec![1.0];
        let union = two_interval_union();
        let probs = vec![0.3, 0.7];
        let ambiguity = AmbiguitySet::new(probs.clone(), 0.0).unwrap();
        let sol = solve_dro(&inst.problem, &union, &ambiguity, &DroConfig::default()).unwrap();

        // Scalar first stage: scan x and use the closed-form inner optimum
        // at the interval endpoints (the inner value is convex in v).
        let mut grid_best = f64::INFINITY;
        for step in 0..=1000 {
            let x = [step as f64 / 1000.0];
            let expect: f64 = union
                .subsets()
                .iter()
                .zip(&probs)
                .map(|(s, &p)| {
                    let worst = box_corners(s.bbox())
                        .iter()
                        .map(|corner| closed_form_inner(&inst, &x, corner))
                        .fold(f64::NEG_INFINITY, f64::max);
                    p * worst
                })
                .sum();
            grid_best = grid_best.min(inst.problem.first_stage_cost[0] * x[0] + expect);
        }
        assert!(sol.objective <= grid_best + 1e-6, "solver {} above grid {grid_best}", sol.objective);
        assert!(grid_best - sol.objective <= 2e-3 * (1.0 + grid_best.abs()), "grid {grid_best} solver {}", sol.objective);
        assert!(sol.nu.is_infinite());
    }

    #[test]
    fn single_subset_matches_plain_robust() {
        let mut rng = ChaCha8Rng::seed_from_u64(337);
        let inst = random_piecewise(&mut rng, 1, 2, 2, false);
        let union = UnionSet::new(vec![PolytopeSubset::from_box(&[(-0.5, 0.5)], 0).unwrap()]).unwrap();
        let ambiguity = AmbiguitySet::new(vec![1.0], 0.7).unwrap();
        let dro = solve_dro(&inst.problem, &union, &ambiguity, &DroConfig::default()).unwrap();

        let pu = ProductUnionSet::new(union, 1).unwrap();
        let ro = solve_monolithic(&inst.problem, &pu, &CcgConfig::default()).unwrap();
        assert!(
            (dro.objective - ro.objective).abs() <= 1e-5 * (1.0 + ro.objective.abs()),
            "dro {} ro {}",
            dro.objective,
            ro.objective
        );
    }

    #[test]
    fn huge_radius_matches_pure_robust_over_the_union() {
        let mut rng = ChaCha8Rng::seed_from_u64(347);
        let inst = random_piecewise(&mut rng, 1, 2, 2, true);
        let union = two_interval_union();
        let ambiguity = AmbiguitySet::new(vec![0.5, 0.5], 50.0).unwrap();
        let dro = solve_dro(&inst.problem, &union, &ambiguity, &DroConfig::default()).unwrap();

        let pu = ProductUnionSet::new(union, 1).unwrap();
        let ro = solve_monolithic(&inst.problem, &pu, &CcgConfig::default()).unwrap();
        assert!(
            (dro.objective - ro.objective).abs() <= 1e-3 * (1.0 + ro.objective.abs()),
            "dro {} ro {}",
            dro.objective,
            ro.objective
        );
    }

    #[test]
    fn master_variants_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(353);
        let inst = random_piecewise(&mut rng, 1, 2, 2, true);
        let union = UnionSet::new(vec![
            PolytopeSubset::from_box(&[(-1.0, -0.3)], 0).unwrap(),
            PolytopeSubset::from_box(&[(-0.1, 0.4)], 1).unwrap(),
            PolytopeSubset::from_box(&[(0.6, 1.1)], 2).unwrap(),
        ])
        .unwrap();
        let ambiguity = AmbiguitySet::new(vec![0.5, 0.3, 0.2], 0.3).unwrap();

        let direct = solve_dro(&inst.problem, &union, &ambiguity, &DroConfig::default()).unwrap();
        let cfg = DroConfig { variant: MasterVariant::Epigraph, ..DroConfig::default() };
        let epi = solve_dro(&inst.problem, &union, &ambiguity, &cfg).unwrap();
        assert!(
            (direct.objective - epi.objective).abs() <= 1e-5 * (1.0 + direct.objective.abs()),
            "direct {} epigraph {}",
            direct.objective,
            epi.objective
        );
        assert_eq!(direct.variant, MasterVariant::Direct);
        assert_eq!(epi.variant, MasterVariant::Epigraph);
    }

    #[test]
    fn objective_is_monotone_in_the_radius() {
        let mut rng = ChaCha8Rng::seed_from_u64(359);
        let inst = random_piecewise(&mut rng, 1, 2, 2, false);
        let union = two_interval_union();
        let probs = vec![0.6, 0.4];

        let mut prev = f64::NEG_INFINITY;
        let mut values = Vec::new();
        for rho in [0.0, 0.05, 0.3, 2.0, 50.0] {
            let ambiguity = AmbiguitySet::new(probs.clone(), rho).unwrap();
            let sol = solve_dro(&inst.problem, &union, &ambiguity, &DroConfig::default()).unwrap();
            assert!(sol.objective >= prev - 1e-6, "objective fell from {prev} to {} at rho {rho}", sol.objective);
            prev = sol.objective;
            values.push(sol.objective);
        }
        let pu = ProductUnionSet::new(union, 1).unwrap();
        let ro = solve_monolithic(&inst.problem, &pu, &CcgConfig::default()).unwrap();
        assert!((values.last().unwrap() - ro.objective).abs() <= 1e-3 * (1.0 + ro.objective.abs()));
    }

    #[test]
    fn trace_bounds_behave() {
        let mut rng = ChaCha8Rng::seed_from_u64(367);
        let inst = random_piecewise(&mut rng, 2, 3, 2, true);
        let union = UnionSet::new(vec![
            PolytopeSubset::from_box(&[(-1.0, -0.2), (-0.5, 0.5)], 0).unwrap(),
            PolytopeSubset::from_box(&[(0.4, 1.2), (0.0, 0.8)], 1).unwrap(),
        ])
        .unwrap();
        let ambiguity = AmbiguitySet::new(vec![0.7, 0.3], 0.25).unwrap();
        let cfg = DroConfig::default();
        let sol = solve_dro(&inst.problem, &union, &ambiguity, &cfg).unwrap();

        let iters = &sol.trace.iterations;
        for w in iters.windows(2) {
            assert!(w[1].lower_bound >= w[0].lower_bound - 1e-5, "lower bounds regressed");
            assert!(w[1].upper_bound <= w[0].upper_bound + 1e-12);
        }
        let last = iters.last().unwrap();
        if sol.trace.status == CcgStatus::Converged {
            assert!(last.upper_bound - last.lower_bound <= cfg.epsilon * (1.0 + last.upper_bound.abs()));
        }
        assert!((sol.objective - last.upper_bound).abs() < 1e-12);
        assert_eq!(last.subproblems_solved, 2);
        assert_eq!(sol.worst_probs.len(), 2);
        let kl = kl_divergence(&sol.worst_probs, ambiguity.nominal_probs());
        assert!(kl <= ambiguity.radius() + 1e-6);
    }

    #[test]
    fn ambiguity_validation_rejects_bad_inputs() {
        assert!(AmbiguitySet::new(vec![], 0.1).is_err());
        assert!(AmbiguitySet::new(vec![0.5, 0.6], 0.1).is_err());
        assert!(AmbiguitySet::new(vec![0.5, 0.5], -0.1).is_err());
        assert!(AmbiguitySet::new(vec![1.2, -0.2], 0.1).is_err());
        assert!(AmbiguitySet::new(vec![0.25; 4], 0.5).is_ok());
    }
}
