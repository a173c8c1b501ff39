//! Random instances shared by solver tests.

use crate::lp::Sense;
use crate::mat::{dot, Mat};
use crate::model::TwoStageProblem;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

/// Instance whose recourse rows are y_j >= a_j'v + g_j'x - h_j and y_j >= 0
/// with positive recourse costs, so the recourse LP is feasible and bounded
/// for every (x, v) and the inner optimum has the closed form
/// sum_j c_j max(0, a_j'v + g_j'x - h_j).
pub(crate) struct PiecewiseInstance {
    pub problem: TwoStageProblem,
    pub a: Vec<Vec<f64>>,
    pub g: Vec<Vec<f64>>,
    pub h: Vec<f64>,
}

pub(crate) fn random_piecewise(
    rng: &mut ChaCha8Rng,
    nv: usize,
    ny: usize,
    nx: usize,
    binary_x: bool,
) -> PiecewiseInstance {
    let c: Vec<f64> = (0..ny).map(|_| rng.random_range(0.1..3.0)).collect();
    let f: Vec<f64> = (0..nx).map(|_| rng.random_range(0.1..2.0)).collect();
    let a: Vec<Vec<f64>> = (0..ny).map(|_| (0..nv).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
    let g: Vec<Vec<f64>> = (0..ny).map(|_| (0..nx).map(|_| rng.random_range(-1.5..0.0)).collect()).collect();
    let h: Vec<f64> = (0..ny).map(|_| rng.random_range(-0.5..0.5)).collect();

    let mut link_x = Mat::with_cols(nx);
    let mut link_y = Mat::with_cols(ny);
    let mut link_v = Mat::with_cols(nv);
    let mut link_rhs = Vec::new();
    for j in 0..ny {
        let mut yrow = vec![0.0; ny];
        yrow[j] = -1.0;
        link_x.push_row(&g[j]);
        link_y.push_row(&yrow);
        link_v.push_row(&a[j]);
        link_rhs.push(h[j]);
        link_x.push_row(&vec![0.0; nx]);
        link_y.push_row(&yrow);
        link_v.push_row(&vec![0.0; nv]);
        link_rhs.push(0.0);
    }
    let ml = link_rhs.len();
    let mut first_stage_matrix = Mat::with_cols(nx);
    first_stage_matrix.push_row(&vec![1.0; nx]);
    PiecewiseInstance {
        problem: TwoStageProblem {
            first_stage_cost: f,
            recourse_cost: c,
            first_stage_matrix,
            first_stage_rhs: vec![(nx as f64) * 0.75],
            link_x,
            link_y,
            link_v,
            link_rhs,
            link_senses: vec![Sense::Le; ml],
            x_binary: {
                let mut m = vec![false; nx];
                if binary_x && nx > 0 {
                    m[0] = true;
                }
                m
            },
            x_bounds: vec![(0.0, 1.0); nx],
            uncertainty_dim: nv,
        },
        a,
        g,
        h,
    }
}

pub(crate) fn closed_form_inner(inst: &PiecewiseInstance, x: &[f64], v: &[f64]) -> f64 {
    (0..inst.h.len())
        .map(|j| {
            let lhs = dot(&inst.a[j], v) + dot(&inst.g[j], x) - inst.h[j];
            inst.problem.recourse_cost[j] * lhs.max(0.0)
        })
        .sum()
}

pub(crate) fn box_corners(bounds: &[(f64, f64)]) -> Vec<Vec<f64>> {
    let mut out = vec![vec![]];
    for &(lo, hi) in bounds {
        let mut next = Vec::new();
        for p in &out {
            for val in [lo, hi] {
                let mut q = p.clone();
                q.push(val);
                next.push(q);
            }
        }
        out = next;
    }
    out
}
