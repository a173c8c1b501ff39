//! The three shipped case studies: facility location-transportation,
//! chemical process network planning, and building climate control.
//!
//! The printed coefficients of the location-transportation instance are kept
//! verbatim; the other two are synthetic instances drawn from seeded ranges,
//! so a (seed, params) pair pins an instance exactly and the committed
//! problem files can be regenerated byte for byte.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use super::BenchError;
use crate::ccg_dro::AmbiguitySet;
use crate::lp::{Sense, INF};
use crate::mat::Mat;
use crate::model::TwoStageProblem;
use crate::uncertainty::{
    encode_monolithic, MonolithicEncoding, PolytopeSubset, ProductUnionSet, UnionSet,
};

/// Seeds behind the committed benchmark files. Changing any of these changes
/// the shipped instances, so the regeneration tests will catch a drift.
pub const CASE2_SEED: u64 = 7101;
pub const CPNP_SEED: u64 = 7102;
pub const CLIMATE_SEED: u64 = 7103;

const FACILITY_FIXED_COST: [f64; 3] = [400.0, 414.0, 326.0];
const CAPACITY_UNIT_COST: [f64; 3] = [18.0, 25.0, 20.0];
const TRANSPORT_COST: [[f64; 3]; 3] = [[22.0, 33.0, 24.0], [33.0, 23.0, 30.0], [20.0, 25.0, 27.0]];
const BASE_DEMAND: [f64; 3] = [206.0, 274.0, 220.0];
const CAPACITY_CAP: f64 = 800.0;
const DEMAND_SWING: f64 = 40.0;

/// Per-unit cost of the outsourcing recourse added to each demand row. It
/// dwarfs every transport cost, so the optimizer only touches it when built
/// capacity cannot cover a realized demand; its presence is what makes the
/// recourse feasible for every (x, v), which the subproblem reformulation
/// needs.
pub const OUTSOURCE_COST: f64 = 1000.0;

/// Location-transportation planning: three candidate facilities (open/not
/// plus sized capacity) serve three customers whose demands move with v:
///
/// ```text
///     min  sum_i (f_i x_i + a_i z_i) + max_v min_y sum_ij t_ij y_ij + 1000 sum_j o_j
///     s.t. z_i <= 800 x_i,  x_i binary
///          sum_j y_ij <= z_i
///          sum_i y_ij + o_j >= d_j + 40 v_j
///          y, o >= 0
/// ```
pub fn build_location_transportation(uncertainty: &UnionSet) -> Result<TwoStageProblem, BenchError> {
    if uncertainty.dim() != 3 {
        return Err(BenchError::Dimension(format!(
            "location-transportation wants 3-dimensional uncertainty, got {}",
            uncertainty.dim()
        )));
    }
    let nx = 6; // x_0..x_2 open decisions, x_3..x_5 capacities
    let ny = 12; // y_ij row-major, then o_0..o_2
    let o0 = 9;

    let mut first_stage_cost = FACILITY_FIXED_COST.to_vec();
    first_stage_cost.extend(CAPACITY_UNIT_COST);

    let mut recourse_cost = Vec::with_capacity(ny);
    for row in TRANSPORT_COST {
        recourse_cost.extend(row);
    }
    recourse_cost.extend([OUTSOURCE_COST; 3]);

    // z_i - 800 x_i <= 0
    let mut a = Mat::zeros(3, nx);
    for i in 0..3 {
        a.set(i, 3 + i, 1.0);
        a.set(i, i, -CAPACITY_CAP);
    }

    let ml = 3 + 3 + 9 + 3;
    let mut link_x = Mat::zeros(ml, nx);
    let mut link_y = Mat::zeros(ml, ny);
    let mut link_v = Mat::zeros(ml, 3);
    let mut link_rhs = vec![0.0; ml];

    // sum_j y_ij - z_i <= 0
    for i in 0..3 {
        for j in 0..3 {
            link_y.set(i, 3 * i + j, 1.0);
        }
        link_x.set(i, 3 + i, -1.0);
    }
    // -sum_i y_ij - o_j + 40 v_j <= -d_j
    for j in 0..3 {
        let r = 3 + j;
        for i in 0..3 {
            link_y.set(r, 3 * i + j, -1.0);
        }
        link_y.set(r, o0 + j, -1.0);
        link_v.set(r, j, DEMAND_SWING);
        link_rhs[r] = -BASE_DEMAND[j];
    }
    // -y <= 0, -o <= 0
    for j in 0..ny {
        link_y.set(6 + j, j, -1.0);
    }

    let problem = TwoStageProblem {
        first_stage_cost,
        recourse_cost,
        first_stage_matrix: a,
        first_stage_rhs: vec![0.0; 3],
        link_x,
        link_y,
        link_v,
        link_rhs,
        link_senses: vec![Sense::Le; ml],
        x_binary: vec![true, true, true, false, false, false],
        x_bounds: vec![(0.0, 1.0), (0.0, 1.0), (0.0, 1.0), (0.0, INF), (0.0, INF), (0.0, INF)],
        uncertainty_dim: 3,
    };
    problem.validate()?;
    Ok(problem)
}

/// Four seeded demand-deviation boxes inside [0, 1]^3, standing in for the
/// instance's unavailable original subsets.
pub fn default_case2_union(seed: u64) -> UnionSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut subsets = Vec::with_capacity(4);
    for k in 0..4 {
        let mut bounds = [(0.0, 0.0); 3];
        for b in &mut bounds {
            let center: f64 = rng.random_range(0.15..0.85);
            let half: f64 = rng.random_range(0.05..0.15);
            *b = ((center - half).max(0.0), (center + half).min(1.0));
        }
        subsets.push(PolytopeSubset::from_box(&bounds, k).expect("box bounds are ordered"));
    }
    UnionSet::new(subsets).expect("four 3-dimensional boxes")
}

pub fn default_case2_ambiguity() -> AmbiguitySet {
    AmbiguitySet::new(vec![0.7, 0.1, 0.1, 0.1], 0.5).expect("valid nominal")
}

// Chemical process network: chemicals A..G = 0..6, eight processes, each
// converting one input chemical into one output at a fixed yield.
const CHEMICALS: usize = 7;
const PROC_IN: [usize; 8] = [0, 1, 2, 0, 4, 5, 1, 2];
const PROC_OUT: [usize; 8] = [1, 2, 3, 2, 5, 6, 5, 6];
const PROC_YIELD: [f64; 8] = [0.9, 0.85, 0.9, 0.75, 0.9, 0.85, 0.8, 0.8];
const RAW: [usize; 2] = [0, 4]; // A, E are purchased
const PRODUCTS: [usize; 2] = [3, 6]; // D, G are sold

#[derive(Clone, Debug)]
pub struct CpnpParams {
    pub periods: usize,
    /// Per-period discount factor applied to every cash flow.
    pub discount: f64,
    pub budget_per_period: f64,
    /// Cap on a single period's capacity expansion of one process.
    pub max_expansion: f64,
    pub expansion_unit_cost: (f64, f64),
    pub expansion_fixed_cost: (f64, f64),
    pub initial_capacity: (f64, f64),
    pub operating_cost: (f64, f64),
    pub raw_cost: (f64, f64),
    pub product_price: (f64, f64),
    pub supply_cap: (f64, f64),
    pub demand_cap: (f64, f64),
    /// Relative swing of the supply/demand caps at |v| = 1; keeping it below
    /// one keeps every cap positive, so shutting the plant down stays
    /// feasible under any disturbance in [-1, 1].
    pub uncertainty_share: f64,
}

impl Default for CpnpParams {
    fn default() -> Self {
        CpnpParams {
            periods: 5,
            discount: 0.9,
            budget_per_period: 150.0,
            max_expansion: 60.0,
            expansion_unit_cost: (1.5, 3.0),
            expansion_fixed_cost: (8.0, 15.0),
            initial_capacity: (10.0, 30.0),
            operating_cost: (0.5, 1.5),
            raw_cost: (2.0, 4.0),
            product_price: (9.0, 14.0),
            supply_cap: (40.0, 80.0),
            demand_cap: (30.0, 60.0),
            uncertainty_share: 0.3,
        }
    }
}

struct Network<'a> {
    chemicals: usize,
    inputs: &'a [usize],
    outputs: &'a [usize],
    yields: &'a [f64],
    raw: &'a [usize],
    products: &'a [usize],
}

impl Network<'_> {
    fn validate(&self) -> Result<(), BenchError> {
        let bad = |msg: String| Err(BenchError::GraphInconsistent(msg));
        if self.inputs.len() != self.outputs.len() || self.inputs.len() != self.yields.len() {
            return bad("process arrays disagree in length".into());
        }
        if self.inputs.is_empty() {
            return bad("no processes".into());
        }
        for i in 0..self.inputs.len() {
            if self.inputs[i] >= self.chemicals || self.outputs[i] >= self.chemicals {
                return bad(format!("process {i} references a chemical out of range"));
            }
            if self.inputs[i] == self.outputs[i] {
                return bad(format!("process {i} converts a chemical into itself"));
            }
            if !(self.yields[i] > 0.0 && self.yields[i] <= 1.0) {
                return bad(format!("process {i} has yield {} outside (0, 1]", self.yields[i]));
            }
        }
        for r in self.raw {
            if self.products.contains(r) {
                return bad(format!("chemical {r} is both raw material and product"));
            }
            if self.outputs.contains(r) {
                return bad(format!("raw material {r} is produced by a process"));
            }
        }
        for p in self.products {
            if self.inputs.contains(p) {
                return bad(format!("product {p} is consumed by a process"));
            }
        }
        for c in 0..self.chemicals {
            let produced = self.outputs.contains(&c) || self.raw.contains(&c);
            let consumed = self.inputs.contains(&c) || self.products.contains(&c);
            if !(produced && consumed) {
                return bad(format!("chemical {c} has no balanced source and sink"));
            }
        }
        Ok(())
    }
}

fn build_network(
    net: &Network,
    params: &CpnpParams,
    seed: u64,
) -> Result<TwoStageProblem, BenchError> {
    net.validate()?;
    let bad = |msg: &str| Err(BenchError::GraphInconsistent(msg.into()));
    if params.periods == 0 {
        return bad("periods must be at least 1");
    }
    if !(params.discount > 0.0 && params.discount <= 1.0) {
        return bad("discount must lie in (0, 1]");
    }
    if !(params.uncertainty_share >= 0.0 && params.uncertainty_share < 1.0) {
        return bad("uncertainty_share must lie in [0, 1)");
    }
    if params.budget_per_period < 0.0 || params.max_expansion <= 0.0 {
        return bad("budget must be nonnegative and max_expansion positive");
    }
    for (lo, hi) in [
        params.expansion_unit_cost,
        params.expansion_fixed_cost,
        params.initial_capacity,
        params.operating_cost,
        params.raw_cost,
        params.product_price,
        params.supply_cap,
        params.demand_cap,
    ] {
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return bad("every parameter range needs 0 < lo <= hi");
        }
    }

    let np = net.inputs.len();
    let nraw = net.raw.len();
    let nprod = net.products.len();
    let tt = params.periods;
    let draw = |rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)| {
        if lo == hi {
            lo
        } else {
            rng.random_range(lo..hi)
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let alpha: Vec<f64> = (0..np).map(|_| draw(&mut rng, params.expansion_unit_cost)).collect();
    let beta: Vec<f64> = (0..np).map(|_| draw(&mut rng, params.expansion_fixed_cost)).collect();
    let q0: Vec<f64> = (0..np).map(|_| draw(&mut rng, params.initial_capacity)).collect();
    let opex: Vec<f64> = (0..np).map(|_| draw(&mut rng, params.operating_cost)).collect();
    let raw_cost: Vec<f64> = (0..nraw).map(|_| draw(&mut rng, params.raw_cost)).collect();
    let price: Vec<f64> = (0..nprod).map(|_| draw(&mut rng, params.product_price)).collect();
    let supply: Vec<f64> = (0..nraw).map(|_| draw(&mut rng, params.supply_cap)).collect();
    let demand: Vec<f64> = (0..nprod).map(|_| draw(&mut rng, params.demand_cap)).collect();

    // Per-period variable layout. First stage: expansions QE then decisions Y.
    // Recourse: operating levels W, capacities Q, purchases P, sales S.
    let x_stride = 2 * np;
    let y_stride = 2 * np + nraw + nprod;
    let v_stride = nraw + nprod;
    let nx = x_stride * tt;
    let ny = y_stride * tt;
    let nv = v_stride * tt;
    let xi_qe = |i: usize, t: usize| t * x_stride + i;
    let xi_y = |i: usize, t: usize| t * x_stride + np + i;
    let yi_w = |i: usize, t: usize| t * y_stride + i;
    let yi_q = |i: usize, t: usize| t * y_stride + np + i;
    let yi_p = |r: usize, t: usize| t * y_stride + 2 * np + r;
    let yi_s = |p: usize, t: usize| t * y_stride + 2 * np + nraw + p;
    let vi_su = |r: usize, t: usize| t * v_stride + r;
    let vi_du = |p: usize, t: usize| t * v_stride + nraw + p;

    let mut first_stage_cost = vec![0.0; nx];
    let mut recourse_cost = vec![0.0; ny];
    for t in 0..tt {
        let disc = params.discount.powi(t as i32);
        for i in 0..np {
            first_stage_cost[xi_qe(i, t)] = disc * alpha[i];
            first_stage_cost[xi_y(i, t)] = disc * beta[i];
            recourse_cost[yi_w(i, t)] = disc * opex[i];
        }
        for r in 0..nraw {
            recourse_cost[yi_p(r, t)] = disc * raw_cost[r];
        }
        for p in 0..nprod {
            recourse_cost[yi_s(p, t)] = -disc * price[p];
        }
    }

    // First stage: QE_{i,t} <= max_expansion * Y_{i,t}, plus a budget row
    // per period.
    let na = tt * (np + 1);
    let mut a = Mat::zeros(na, nx);
    let mut q = vec![0.0; na];
    for t in 0..tt {
        for i in 0..np {
            let r = t * (np + 1) + i;
            a.set(r, xi_qe(i, t), 1.0);
            a.set(r, xi_y(i, t), -params.max_expansion);
        }
        let r = t * (np + 1) + np;
        for i in 0..np {
            a.set(r, xi_qe(i, t), alpha[i]);
            a.set(r, xi_y(i, t), beta[i]);
        }
        q[r] = params.budget_per_period;
    }

    let intermediates: Vec<usize> = (0..net.chemicals)
        .filter(|c| !net.raw.contains(c) && !net.products.contains(c))
        .collect();
    // Rows per period: capacity evolution (np, =), W <= Q (np), -W <= 0 (np),
    // mass balances (intermediates + raw + products, =), market caps
    // (nraw + nprod), -P <= 0, -S <= 0.
    let rows_per_t = 3 * np + intermediates.len() + 2 * (nraw + nprod) + nraw + nprod;
    let ml = rows_per_t * tt;
    let mut link_x = Mat::zeros(ml, nx);
    let mut link_y = Mat::zeros(ml, ny);
    let mut link_v = Mat::zeros(ml, nv);
    let mut link_rhs = vec![0.0; ml];
    let mut link_senses = vec![Sense::Le; ml];

    let mut r = 0;
    for t in 0..tt {
        // Q_{i,t} = q0_i + sum_{tau <= t} QE_{i,tau}
        for i in 0..np {
            link_y.set(r, yi_q(i, t), 1.0);
            for tau in 0..=t {
                link_x.set(r, xi_qe(i, tau), -1.0);
            }
            link_rhs[r] = q0[i];
            link_senses[r] = Sense::Eq;
            r += 1;
        }
        for i in 0..np {
            link_y.set(r, yi_w(i, t), 1.0);
            link_y.set(r, yi_q(i, t), -1.0);
            r += 1;
        }
        for i in 0..np {
            link_y.set(r, yi_w(i, t), -1.0);
            r += 1;
        }
        for &c in &intermediates {
            for i in 0..np {
                if net.outputs[i] == c {
                    link_y.set(r, yi_w(i, t), net.yields[i]);
                }
                if net.inputs[i] == c {
                    link_y.set(r, yi_w(i, t), -1.0);
                }
            }
            link_senses[r] = Sense::Eq;
            r += 1;
        }
        for (ri, &c) in net.raw.iter().enumerate() {
            link_y.set(r, yi_p(ri, t), 1.0);
            for i in 0..np {
                if net.inputs[i] == c {
                    link_y.set(r, yi_w(i, t), -1.0);
                }
            }
            link_senses[r] = Sense::Eq;
            r += 1;
        }
        for (pi, &c) in net.products.iter().enumerate() {
            for i in 0..np {
                if net.outputs[i] == c {
                    link_y.set(r, yi_w(i, t), net.yields[i]);
                }
            }
            link_y.set(r, yi_s(pi, t), -1.0);
            link_senses[r] = Sense::Eq;
            r += 1;
        }
        for ri in 0..nraw {
            link_y.set(r, yi_p(ri, t), 1.0);
            link_v.set(r, vi_su(ri, t), -params.uncertainty_share * supply[ri]);
            link_rhs[r] = supply[ri];
            r += 1;
        }
        for pi in 0..nprod {
            link_y.set(r, yi_s(pi, t), 1.0);
            link_v.set(r, vi_du(pi, t), -params.uncertainty_share * demand[pi]);
            link_rhs[r] = demand[pi];
            r += 1;
        }
        for ri in 0..nraw {
            link_y.set(r, yi_p(ri, t), -1.0);
            r += 1;
        }
        for pi in 0..nprod {
            link_y.set(r, yi_s(pi, t), -1.0);
            r += 1;
        }
    }
    debug_assert_eq!(r, ml);

    let mut x_binary = vec![false; nx];
    let mut x_bounds = vec![(0.0, params.max_expansion); nx];
    for t in 0..tt {
        for i in 0..np {
            x_binary[xi_y(i, t)] = true;
            x_bounds[xi_y(i, t)] = (0.0, 1.0);
        }
    }

    let problem = TwoStageProblem {
        first_stage_cost,
        recourse_cost,
        first_stage_matrix: a,
        first_stage_rhs: q,
        link_x,
        link_y,
        link_v,
        link_rhs,
        link_senses,
        x_binary,
        x_bounds,
        uncertainty_dim: nv,
    };
    problem.validate()?;
    Ok(problem)
}

/// Chemical process network planning over the fixed eight-process,
/// seven-chemical topology: first-stage capacity expansions (sized QE plus a
/// build decision Y per process and period), recourse operation (production,
/// purchases, sales), and supply/demand caps that move with v. The cash
/// flows are negated internally, so the solver minimizes -NPV; negate the
/// reported objective to read net present value.
///
/// Disturbances are relative: the builders assume v in [-1, 1] per
/// coordinate, which `default_cpnp_union` respects.
pub fn build_cpnp(params: &CpnpParams, seed: u64) -> Result<TwoStageProblem, BenchError> {
    let net = Network {
        chemicals: CHEMICALS,
        inputs: &PROC_IN,
        outputs: &PROC_OUT,
        yields: &PROC_YIELD,
        raw: &RAW,
        products: &PRODUCTS,
    };
    build_network(&net, params, seed)
}

/// Four seeded boxes inside [-1, 1]^4 over (su_A, su_E, du_D, du_G).
pub fn default_cpnp_union(seed: u64) -> UnionSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut subsets = Vec::with_capacity(4);
    for k in 0..4 {
        let mut bounds = [(0.0, 0.0); 4];
        for b in &mut bounds {
            let center: f64 = rng.random_range(-0.55..0.55);
            let half: f64 = rng.random_range(0.15..0.4);
            *b = ((center - half).max(-1.0), (center + half).min(1.0));
        }
        subsets.push(PolytopeSubset::from_box(&bounds, k).expect("box bounds are ordered"));
    }
    UnionSet::new(subsets).expect("four 4-dimensional boxes")
}

pub fn default_cpnp_ambiguity() -> AmbiguitySet {
    AmbiguitySet::new(vec![0.4, 0.3, 0.2, 0.1], 0.5).expect("valid nominal")
}

/// The shipped planning horizon. The printed model defaults to five periods;
/// the committed instance uses one so the distributionally robust runs stay
/// inside the bundled solver's comfort zone.
pub fn shipped_cpnp_params() -> CpnpParams {
    CpnpParams { periods: 1, ..CpnpParams::default() }
}

pub struct ClimateCase {
    pub problem: TwoStageProblem,
    pub union: ProductUnionSet,
    pub encoding: MonolithicEncoding,
    pub dynamics: Mat,
    /// Indoor-temperature lower bound per step (21 in work hours, 15
    /// otherwise).
    pub comfort_bounds: Vec<f64>,
}

const CLIMATE_STATES: usize = 4;
const WORK_HOURS: std::ops::Range<usize> = 7..18;
const START_HOUR: usize = 5;
const HEAT_LIMIT: f64 = 150.0;
/// Cost per degree of comfort violation; large against the unit heating
/// cost, so slack only absorbs genuinely unreachable bounds and the
/// recourse stays feasible for every disturbance.
const COMFORT_PENALTY: f64 = 1e3;

fn spectral_norm(m: &Mat, iters: usize) -> f64 {
    let n = m.to_row_vecs().first().map_or(0, Vec::len);
    let mut x = vec![1.0; n];
    let mut norm = 0.0;
    for _ in 0..iters {
        let y = m.mul_vec(&x);
        let z = m.tr_mul_vec(&y);
        norm = z.iter().map(|a| a * a).sum::<f64>().sqrt().sqrt();
        if norm <= 1e-12 {
            return 0.0;
        }
        x = z.iter().map(|a| a / (norm * norm)).collect();
    }
    norm
}

/// Building climate control: four thermal states driven by heating input
/// u_t in [0, 150] and a scalar disturbance per step drawn from `subsets`
/// intervals. The first stage is the heating schedule, the recourse a
/// per-step comfort slack; minimizing total heating plus heavily penalized
/// slack keeps the indoor temperature above the working-hours bound wherever
/// the heater can reach it.
pub fn build_climate_mpc(
    seed: u64,
    horizon: usize,
    subsets: usize,
) -> Result<ClimateCase, BenchError> {
    if horizon == 0 || subsets == 0 {
        return Err(BenchError::Dimension(format!(
            "horizon {horizon} and subset count {subsets} must both be positive"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = CLIMATE_STATES;

    // Nonnegative coupling: heat added now never cools a later step, so the
    // working-hours bound stays reachable for every draw. The scale pins the
    // spectral norm at 0.85, a building losing heat toward ambient zero.
    let raw: Vec<Vec<f64>> =
        (0..n).map(|_| (0..n).map(|_| rng.random_range(0.0..1.0)).collect()).collect();
    let mut phi = Mat::from_rows(&raw).expect("square rows");
    let sigma = spectral_norm(&phi, 60).max(1e-9);
    let scale = 0.85 / sigma;
    for i in 0..n {
        for j in 0..n {
            phi.set(i, j, phi.get(i, j) * scale);
        }
    }

    let jitter = |rng: &mut ChaCha8Rng| rng.random_range(0.9..1.1);
    let gamma_u: Vec<f64> =
        [0.25, 0.04, 0.04, 0.02].iter().map(|g| g * jitter(&mut rng)).collect();
    let gamma_v: Vec<f64> = [0.3, 0.1, 0.1, 0.05].iter().map(|g| g * jitter(&mut rng)).collect();
    let x0: Vec<f64> =
        [18.0, 17.0, 16.0, 15.0].iter().map(|x| x + rng.random_range(-1.0..1.0)).collect();

    // phi^m for m = 0..horizon
    let mut powers: Vec<Mat> = Vec::with_capacity(horizon + 1);
    let mut eye = Mat::zeros(n, n);
    for i in 0..n {
        eye.set(i, i, 1.0);
    }
    powers.push(eye);
    for m in 1..=horizon {
        let prev = &powers[m - 1];
        let mut next = Mat::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for k in 0..n {
                    s += phi.get(i, k) * prev.get(k, j);
                }
                next.set(i, j, s);
            }
        }
        powers.push(next);
    }
    let temp_row = |m: usize| -> Vec<f64> { powers[m].to_row_vecs()[0].clone() };

    let comfort_bounds: Vec<f64> = (1..=horizon)
        .map(|t| if WORK_HOURS.contains(&((START_HOUR + t) % 24)) { 21.0 } else { 15.0 })
        .collect();

    // Rows t = 1..=horizon: -temp_t(u, v) - s_t <= -bound_t, then -s <= 0.
    let ml = 2 * horizon;
    let mut link_x = Mat::zeros(ml, horizon);
    let mut link_y = Mat::zeros(ml, horizon);
    let mut link_v = Mat::zeros(ml, horizon);
    let mut link_rhs = vec![0.0; ml];
    for t in 1..=horizon {
        let r = t - 1;
        for tau in 0..t {
            let w = temp_row(t - 1 - tau);
            let cu: f64 = w.iter().zip(&gamma_u).map(|(a, b)| a * b).sum();
            let cv: f64 = w.iter().zip(&gamma_v).map(|(a, b)| a * b).sum();
            link_x.set(r, tau, -cu);
            link_v.set(r, tau, -cv);
        }
        link_y.set(r, r, -1.0);
        let drift: f64 = temp_row(t).iter().zip(&x0).map(|(a, b)| a * b).sum();
        link_rhs[r] = drift - comfort_bounds[t - 1];
        link_y.set(horizon + r, r, -1.0);
    }

    let problem = TwoStageProblem {
        first_stage_cost: vec![1.0; horizon],
        recourse_cost: vec![COMFORT_PENALTY; horizon],
        first_stage_matrix: Mat::zeros(0, horizon),
        first_stage_rhs: vec![],
        link_x,
        link_y,
        link_v,
        link_rhs,
        link_senses: vec![Sense::Le; ml],
        x_binary: vec![false; horizon],
        x_bounds: vec![(0.0, HEAT_LIMIT); horizon],
        uncertainty_dim: horizon,
    };
    problem.validate()?;

    // K disjoint disturbance intervals carved out of [-2.5, 2].
    let (lo, hi) = (-2.5, 2.0);
    let band = (hi - lo) / subsets as f64;
    let mut intervals = Vec::with_capacity(subsets);
    for k in 0..subsets {
        let b_lo = lo + k as f64 * band;
        let a = b_lo + rng.random_range(0.0..0.2) * band;
        let b = b_lo + band - rng.random_range(0.0..0.2) * band;
        intervals.push(PolytopeSubset::from_box(&[(a, b)], k).expect("nonempty interval"));
    }
    let union = ProductUnionSet::new(UnionSet::new(intervals)?, horizon)?;
    let encoding = encode_monolithic(&union);

    Ok(ClimateCase { problem, union, encoding, dynamics: phi, comfort_bounds })
}
