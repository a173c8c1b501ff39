//! Experiment drivers behind the CLI: radius sweeps, runtime scaling tables,
//! the brute-force deterministic oracle, and the problem-file check harness.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::file::ProblemFile;
use super::BenchError;
use crate::bilevel::{validate_big_m, BigMValidation, SubproblemKind};
use crate::ccg_dro::{
    kl_divergence, solve_dro, worst_case_expectation_dual, AmbiguitySet, DroConfig,
};
use crate::ccg_ro::{solve_enumerated, solve_fixed_scenario, solve_monolithic, CcgConfig};
use crate::lp::{self, LpBuilder, LpStatus, INF};
use crate::mat::dot;
use crate::mip::MilpOptions;
use crate::model::TwoStageProblem;
use crate::uncertainty::encode_monolithic;

use super::cases::build_climate_mpc;

/// Brute-force reference for a fixed scenario: enumerate every assignment of
/// the binary first-stage variables and solve the remaining LP, keeping the
/// best value. Exponential on purpose; refuses more than 20 binaries.
pub fn deterministic_oracle(problem: &TwoStageProblem, v: &[f64]) -> Result<f64, BenchError> {
    problem.validate()?;
    if v.len() != problem.uncertainty_dim {
        return Err(BenchError::Dimension(format!(
            "scenario has {} entries, problem expects {}",
            v.len(),
            problem.uncertainty_dim
        )));
    }
    let binaries: Vec<usize> = (0..problem.num_x()).filter(|&j| problem.x_binary[j]).collect();
    if binaries.len() > 20 {
        return Err(BenchError::Oracle(format!(
            "{} binaries is past the enumeration budget",
            binaries.len()
        )));
    }
    let nx = problem.num_x();
    let ny = problem.num_y();
    let mut best: Option<f64> = None;
    for pattern in 0..(1usize << binaries.len()) {
        let mut b = LpBuilder::new();
        for j in 0..nx {
            let (lo, hi) = problem.x_bounds[j];
            b.add_var(problem.first_stage_cost[j], lo, hi);
        }
        for (bit, &j) in binaries.iter().enumerate() {
            let val = ((pattern >> bit) & 1) as f64;
            b.set_bounds(j, val, val);
        }
        for l in 0..ny {
            b.add_var(problem.recourse_cost[l], -INF, INF);
        }
        for i in 0..problem.first_stage_rhs.len() {
            let terms: Vec<(usize, f64)> = (0..nx)
                .filter(|&j| problem.first_stage_matrix.get(i, j) != 0.0)
                .map(|j| (j, problem.first_stage_matrix.get(i, j)))
                .collect();
            b.add_row(&terms, crate::lp::Sense::Le, problem.first_stage_rhs[i]);
        }
        for i in 0..problem.num_links() {
            let mut terms: Vec<(usize, f64)> = Vec::new();
            for j in 0..nx {
                let t = problem.link_x.get(i, j);
                if t != 0.0 {
                    terms.push((j, t));
                }
            }
            for l in 0..ny {
                let w = problem.link_y.get(i, l);
                if w != 0.0 {
                    terms.push((nx + l, w));
                }
            }
            let shift: f64 = (0..problem.uncertainty_dim)
                .map(|k| problem.link_v.get(i, k) * v[k])
                .sum();
            b.add_row(&terms, problem.link_senses[i], problem.link_rhs[i] - shift);
        }
        let sol = lp::solve(&b.build()).map_err(|e| BenchError::Oracle(e.to_string()))?;
        match sol.status {
            LpStatus::Optimal => {
                if best.map_or(true, |cur| sol.objective_value < cur) {
                    best = Some(sol.objective_value);
                }
            }
            LpStatus::Infeasible => {}
            LpStatus::Unbounded => {
                return Err(BenchError::Oracle(format!(
                    "unbounded under binary pattern {pattern:#b}"
                )))
            }
        }
    }
    best.ok_or_else(|| BenchError::Oracle("every binary pattern is infeasible".into()))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RhoSweepRow {
    pub rho: f64,
    /// Optimal value of the distributionally robust program at this radius.
    pub objective: f64,
    pub expected_min: f64,
    pub expected_mean: f64,
    pub expected_max: f64,
    pub samples: usize,
}

pub const SWEEP_CSV_HEADER: &str = "rho,objective,min,mean,max,samples";

/// Full precision and no timing columns, so a fixed seed reproduces the
/// table byte for byte.
pub fn sweep_to_csv(rows: &[RhoSweepRow]) -> String {
    let mut out = String::from(SWEEP_CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.rho, r.objective, r.expected_min, r.expected_mean, r.expected_max, r.samples
        ));
    }
    out
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Largest point of the segment `from -> to` still inside the ball
/// KL(. || from) <= rho. KL grows monotonically along the segment, so a
/// bisection on the step length suffices.
fn clip_to_ball(from: &[f64], to: &[f64], rho: f64) -> Vec<f64> {
    let blend = |s: f64| -> Vec<f64> {
        from.iter().zip(to).map(|(&a, &b)| (1.0 - s) * a + s * b).collect()
    };
    if kl_divergence(to, from) <= rho {
        return to.to_vec();
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if kl_divergence(&blend(mid), from) <= rho {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    blend(lo)
}

/// Solves the distributionally robust program at each radius, then reports
/// the spread of the expected cost over the ambiguity ball at the chosen
/// first stage. The spread combines rejection samples (logit-normal
/// proposal, accepted while KL stays inside the ball) with deterministic
/// probes: the nominal distribution, the dual maximizer, and the furthest
/// feasible point toward each vertex. Probes pin the extremes, so the max
/// column matches the reported objective; the mean is over the random
/// samples alone. At rho = 0 the ball is a point and the three columns
/// coincide.
#[allow(clippy::too_many_arguments)]
pub fn sweep_rho(
    problem: &TwoStageProblem,
    union: &crate::uncertainty::UnionSet,
    nominal: &[f64],
    rhos: &[f64],
    n_samples: usize,
    seed: u64,
    cfg: &DroConfig,
) -> Result<Vec<RhoSweepRow>, BenchError> {
    let mut rows = Vec::with_capacity(rhos.len());
    for &rho in rhos {
        let ambiguity = AmbiguitySet::new(nominal.to_vec(), rho)?;
        let sol = solve_dro(problem, union, &ambiguity, cfg)?;
        let base = dot(&problem.first_stage_cost, &sol.first_stage);
        let expected = |p: &[f64]| base + dot(p, &sol.subset_costs);

        if rho == 0.0 {
            let at_nominal = expected(nominal);
            rows.push(RhoSweepRow {
                rho,
                objective: sol.objective,
                expected_min: at_nominal,
                expected_mean: at_nominal,
                expected_max: at_nominal,
                samples: 1,
            });
            continue;
        }

        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ rho.to_bits());
        let sigma = (2.0 * rho).sqrt().min(3.0);
        let mut accepted: Vec<f64> = Vec::with_capacity(n_samples);
        let mut attempts: usize = 0;
        while accepted.len() < n_samples {
            attempts += 1;
            let weights: Vec<f64> = nominal
                .iter()
                .map(|&p| p * (sigma * standard_normal(&mut rng)).exp())
                .collect();
            let total: f64 = weights.iter().sum();
            let p: Vec<f64> = weights.iter().map(|w| w / total).collect();
            if kl_divergence(&p, nominal) <= rho {
                accepted.push(expected(&p));
            }
            if attempts >= 10_000 && (accepted.len() as f64) < 1e-4 * attempts as f64 {
                return Err(BenchError::SamplerStarved {
                    rho,
                    attempts,
                    accepted: accepted.len(),
                });
            }
        }

        let mut probes: Vec<f64> = vec![expected(nominal)];
        probes.push(expected(&clip_to_ball(nominal, &sol.worst_probs, rho)));
        for k in 0..nominal.len() {
            if nominal[k] == 0.0 {
                continue;
            }
            let mut vertex = vec![0.0; nominal.len()];
            vertex[k] = 1.0;
            probes.push(expected(&clip_to_ball(nominal, &vertex, rho)));
        }

        let mean = accepted.iter().sum::<f64>() / accepted.len() as f64;
        let min = accepted
            .iter()
            .chain(&probes)
            .cloned()
            .fold(f64::INFINITY, f64::min);
        let max = accepted
            .iter()
            .chain(&probes)
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        rows.push(RhoSweepRow {
            rho,
            objective: sol.objective,
            expected_min: min,
            expected_mean: mean,
            expected_max: max,
            samples: n_samples,
        });
    }
    Ok(rows)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScalingRow {
    pub horizon: usize,
    /// Number of explicit subset combinations, K^N. None when it overflows.
    pub explicit_count: Option<u64>,
    pub monolithic_objective: f64,
    pub monolithic_cpu_s: f64,
    pub monolithic_iterations: usize,
    pub monolithic_sp_per_iteration: usize,
    pub enumerated_objective: Option<f64>,
    pub enumerated_cpu_s: Option<f64>,
    pub enumerated_iterations: Option<usize>,
    pub enumerated_sp_per_iteration: Option<u64>,
}

pub const SCALING_CSV_HEADER: &str = "horizon,explicit_subsets,monolithic_objective,\
monolithic_cpu_s,monolithic_iterations,monolithic_sp_per_iter,enumerated_objective,\
enumerated_cpu_s,enumerated_iterations,enumerated_sp_per_iter";

pub fn scaling_to_csv(rows: &[ScalingRow]) -> String {
    let mut out = String::from(SCALING_CSV_HEADER);
    out.push('\n');
    for r in rows {
        let count = r
            .explicit_count
            .map_or_else(|| "overflow".into(), |c| c.to_string());
        let skipped = |s: Option<String>| s.unwrap_or_else(|| "skipped".into());
        out.push_str(&format!(
            "{},{},{},{:.2},{},{},{},{},{},{}\n",
            r.horizon,
            count,
            r.monolithic_objective,
            r.monolithic_cpu_s,
            r.monolithic_iterations,
            r.monolithic_sp_per_iteration,
            skipped(r.enumerated_objective.map(|v| v.to_string())),
            skipped(r.enumerated_cpu_s.map(|v| format!("{v:.2}"))),
            skipped(r.enumerated_iterations.map(|v| v.to_string())),
            skipped(r.enumerated_sp_per_iteration.map(|v| v.to_string())),
        ));
    }
    out
}

/// Runs the climate controller at growing horizons, solving each instance
/// with the single-subproblem scheme and, while K^N stays under the
/// explosion cap, with full enumeration as the baseline. Past the cap the
/// baseline columns read "skipped".
pub fn runtime_scaling(
    seed: u64,
    subsets_per_step: usize,
    horizons: &[usize],
    cfg: &CcgConfig,
) -> Result<Vec<ScalingRow>, BenchError> {
    let mut rows = Vec::with_capacity(horizons.len());
    for &n in horizons {
        let case = build_climate_mpc(seed, n, subsets_per_step)?;
        let t0 = Instant::now();
        let mono = solve_monolithic(&case.problem, &case.union, cfg)?;
        let mono_cpu = t0.elapsed().as_secs_f64();
        let mono_sp = mono
            .trace
            .iterations
            .iter()
            .map(|it| it.subproblems_solved)
            .max()
            .unwrap_or(1);

        let explicit = (subsets_per_step as u64).checked_pow(n as u32);
        let in_budget = explicit.is_some_and(|c| c <= cfg.explosion_cap as u64);
        let mut row = ScalingRow {
            horizon: n,
            explicit_count: explicit,
            monolithic_objective: mono.objective,
            monolithic_cpu_s: mono_cpu,
            monolithic_iterations: mono.trace.iterations.len(),
            monolithic_sp_per_iteration: mono_sp,
            enumerated_objective: None,
            enumerated_cpu_s: None,
            enumerated_iterations: None,
            enumerated_sp_per_iteration: None,
        };
        if in_budget {
            let t1 = Instant::now();
            let enumr = solve_enumerated(&case.problem, &case.union, cfg)?;
            row.enumerated_cpu_s = Some(t1.elapsed().as_secs_f64());
            row.enumerated_objective = Some(enumr.objective);
            row.enumerated_iterations = Some(enumr.trace.iterations.len());
            row.enumerated_sp_per_iteration = Some(
                enumr
                    .trace
                    .iterations
                    .iter()
                    .map(|it| it.subproblems_solved as u64)
                    .max()
                    .unwrap_or(0),
            );
        }
        rows.push(row);
    }
    Ok(rows)
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckReport {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, outcome: Result<String, String>) -> CheckReport {
    match outcome {
        Ok(detail) => CheckReport { name, passed: true, detail },
        Err(detail) => CheckReport { name, passed: false, detail },
    }
}

/// Self-checks for a problem file: serialization round-trip, the
/// deterministic brute-force cross-check at the nominal scenario, the dual
/// certificate of the worst-case expectation on random cost draws, and a
/// big-M cap validation of the worst-case subproblem. Returns one report
/// per check instead of failing fast, so the CLI can print them all.
pub fn verify_problem_file(pf: &ProblemFile) -> Result<Vec<CheckReport>, BenchError> {
    let mut reports = Vec::new();

    reports.push(check(
        "file-round-trip",
        match pf.round_trips() {
            Ok(true) => Ok("serialize-parse-serialize is stable".into()),
            Ok(false) => Err("value tree changed across a round trip".into()),
            Err(e) => Err(e.to_string()),
        },
    ));

    let milp = MilpOptions::default();
    let v0 = vec![0.0; pf.problem.uncertainty_dim];
    let mut fixed_x: Option<Vec<f64>> = None;
    let num_binaries = pf.problem.x_binary.iter().filter(|&&b| b).count();
    reports.push(check(
        "deterministic-limit",
        if num_binaries > 12 {
            Ok(format!(
                "skipped: {num_binaries} binaries is past the brute-force budget"
            ))
        } else {
            match (
                solve_fixed_scenario(&pf.problem, &v0, &milp),
                deterministic_oracle(&pf.problem, &v0),
            ) {
                (Ok((x, milp_obj)), Ok(oracle_obj)) => {
                    fixed_x = Some(x);
                    let tol = 1e-6 * (1.0 + milp_obj.abs());
                    if (milp_obj - oracle_obj).abs() <= tol {
                        Ok(format!("solver {milp_obj} vs brute force {oracle_obj}"))
                    } else {
                        Err(format!(
                            "solver {milp_obj} vs brute force {oracle_obj} beyond {tol:.1e}"
                        ))
                    }
                }
                (Err(e), _) => Err(format!("fixed-scenario solve failed: {e}")),
                (_, Err(e)) => Err(format!("brute force failed: {e}")),
            }
        },
    ));

    if let Some(spec) = &pf.ambiguity {
        reports.push(check(
            "dual-certificate",
            (|| {
                let ambiguity = spec.set().map_err(|e| e.to_string())?;
                let probs = ambiguity.nominal_probs();
                let rho = ambiguity.radius();
                let mut rng = ChaCha8Rng::seed_from_u64(pf.solver.seed);
                for case in 0..20 {
                    let costs: Vec<f64> =
                        (0..probs.len()).map(|_| rng.random_range(-5.0..15.0)).collect();
                    let d = worst_case_expectation_dual(&costs, probs, rho);
                    let mass: f64 = d.worst_probs.iter().sum();
                    if (mass - 1.0).abs() > 1e-9 {
                        return Err(format!("case {case}: maximizer mass {mass}"));
                    }
                    if kl_divergence(&d.worst_probs, probs) > rho + 1e-7 {
                        return Err(format!("case {case}: maximizer leaves the ball"));
                    }
                    let attained = dot(&d.worst_probs, &costs);
                    if (attained - d.value).abs() > 1e-4 * (1.0 + d.value.abs()) {
                        return Err(format!(
                            "case {case}: certificate gap {} vs {}",
                            attained, d.value
                        ));
                    }
                    if d.value < dot(probs, &costs) - 1e-9 {
                        return Err(format!("case {case}: value below the nominal expectation"));
                    }
                }
                Ok("20 random cost vectors certified".into())
            })(),
        ));
    }

    reports.push(check(
        "big-m-validation",
        (|| {
            let x = match &fixed_x {
                Some(x) => x.clone(),
                None => solve_fixed_scenario(&pf.problem, &v0, &milp)
                    .map_err(|e| format!("fixed-scenario solve failed: {e}"))?
                    .0,
            };
            let pu = pf.uncertainty.product().map_err(|e| e.to_string())?;
            let enc = encode_monolithic(&pu);
            let kkt = pf.solver.ccg_config().kkt;
            match validate_big_m(&x, &pf.problem, SubproblemKind::Monolithic(&enc), &kkt, &milp) {
                Ok(BigMValidation::Consistent { base, scaled }) => {
                    Ok(format!("caps not binding ({base} vs {scaled} when scaled)"))
                }
                Ok(BigMValidation::Suspect { detail, .. }) => Err(detail),
                Err(e) => Err(e.to_string()),
            }
        })(),
    ));

    Ok(reports)
}
