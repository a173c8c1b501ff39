//! Uncertainty sets: bounded polytope subsets, K-way unions, N-fold products,
//! and the selector-binary encoding that represents the whole product with
//! K*N binaries instead of K^N explicit subsets.
//!
//! A subset is {v | D v <= d}, checked nonempty and bounded at construction.
//! The per-step union picks one subset via binaries delta_{t,k}; summing the
//! selected rows only works if every subset contributes the same row count,
//! so the encoding pads short subsets with vacuous rows 0'v <= 1.

use crate::lp::{self, Feasibility, LinearProgram, LpError, LpStatus, Sense, INF};
use crate::mat::Mat;
use thiserror::Error;

pub const MEMBERSHIP_TOL: f64 = 1e-9;
pub const DEFAULT_EXPLOSION_CAP: usize = 4096;

#[derive(Error, Debug)]
pub enum UncertaintyError {
    #[error("subset {label}: D has {rows} rows but d has {entries} entries")]
    Shape { label: usize, rows: usize, entries: usize },
    #[error("subset {label} is empty")]
    EmptySubset { label: usize },
    #[error("subset {label} is unbounded in coordinate {coord}")]
    UnboundedSubset { label: usize, coord: usize },
    #[error("union has no subsets")]
    EmptyUnion,
    #[error("subset {label} has dimension {got}, union dimension is {expected}")]
    DimensionMismatch { label: usize, got: usize, expected: usize },
    #[error("vertex enumeration supports dimension <= {max}, got {dim}")]
    DimensionTooLarge { dim: usize, max: usize },
    #[error("no sample lies in the union")]
    NoSamplesInUnion,
    #[error("explicit subset count {count} exceeds the cap {cap}")]
    ExplosionCapExceeded { count: String, cap: usize },
    #[error(transparent)]
    Lp(#[from] LpError),
}

#[derive(Clone, Debug)]
pub struct PolytopeSubset {
    d_mat: Mat,
    d_vec: Vec<f64>,
    label: usize,
    bbox: Vec<(f64, f64)>,
}

impl PolytopeSubset {
    pub fn new(d_mat: Mat, d_vec: Vec<f64>, label: usize) -> Result<Self, UncertaintyError> {
        if d_mat.rows() != d_vec.len() {
            return Err(UncertaintyError::Shape { label, rows: d_mat.rows(), entries: d_vec.len() });
        }
        let dim = d_mat.cols();
        let base = LinearProgram {
            objective: vec![0.0; dim],
            constraint_matrix: d_mat.clone(),
            rhs: d_vec.clone(),
            senses: vec![Sense::Le; d_mat.rows()],
            bounds: vec![(-INF, INF); dim],
        };
        match lp::check_feasible(&base)? {
            Feasibility::Feasible(_) => {}
            Feasibility::Infeasible(_) => return Err(UncertaintyError::EmptySubset { label }),
        }
        let mut bbox = Vec::with_capacity(dim);
        for j in 0..dim {
            let mut lo_lp = base.clone();
            lo_lp.objective[j] = 1.0;
            let lo = lp::solve(&lo_lp)?;
            if lo.status == LpStatus::Unbounded {
                return Err(UncertaintyError::UnboundedSubset { label, coord: j });
            }
            let mut hi_lp = base.clone();
            hi_lp.objective[j] = -1.0;
            let hi = lp::solve(&hi_lp)?;
            if hi.status == LpStatus::Unbounded {
                return Err(UncertaintyError::UnboundedSubset { label, coord: j });
            }
            bbox.push((lo.objective_value, -hi.objective_value));
        }
        Ok(PolytopeSubset { d_mat, d_vec, label, bbox })
    }

    /// Axis-aligned box [lo, hi]^dim as a subset.
    pub fn from_box(bounds: &[(f64, f64)], label: usize) -> Result<Self, UncertaintyError> {
        let dim = bounds.len();
        let mut d_mat = Mat::with_cols(dim);
        let mut d_vec = Vec::with_capacity(2 * dim);
        for (j, &(lo, hi)) in bounds.iter().enumerate() {
            let mut row = vec![0.0; dim];
            row[j] = 1.0;
            d_mat.push_row(&row);
            d_vec.push(hi);
            row[j] = -1.0;
            d_mat.push_row(&row);
            d_vec.push(-lo);
        }
        Self::new(d_mat, d_vec, label)
    }

    /// Skips the construction LPs; used when the parts are already known to
    /// describe a nonempty bounded set (e.g. products of validated subsets).
    fn from_validated_parts(d_mat: Mat, d_vec: Vec<f64>, label: usize, bbox: Vec<(f64, f64)>) -> Self {
        PolytopeSubset { d_mat, d_vec, label, bbox }
    }

    pub fn d_mat(&self) -> &Mat {
        &self.d_mat
    }

    pub fn d_vec(&self) -> &[f64] {
        &self.d_vec
    }

    pub fn label(&self) -> usize {
        self.label
    }

    pub fn dim(&self) -> usize {
        self.d_mat.cols()
    }

    pub fn num_rows(&self) -> usize {
        self.d_vec.len()
    }

    pub fn bbox(&self) -> &[(f64, f64)] {
        &self.bbox
    }

    pub fn contains_point(&self, v: &[f64], tol: f64) -> bool {
        if v.len() != self.dim() {
            return false;
        }
        self.d_mat
            .mul_vec(v)
            .iter()
            .zip(&self.d_vec)
            .all(|(lhs, rhs)| *lhs <= rhs + tol)
    }

    /// An arbitrary point of the subset (the bounding-box probe midpoint is
    /// not necessarily inside, so this re-solves a feasibility LP).
    pub fn any_point(&self) -> Result<Vec<f64>, UncertaintyError> {
        let base = LinearProgram {
            objective: vec![0.0; self.dim()],
            constraint_matrix: self.d_mat.clone(),
            rhs: self.d_vec.clone(),
            senses: vec![Sense::Le; self.num_rows()],
            bounds: vec![(-INF, INF); self.dim()],
        };
        match lp::check_feasible(&base)? {
            Feasibility::Feasible(v) => Ok(v),
            Feasibility::Infeasible(_) => Err(UncertaintyError::EmptySubset { label: self.label }),
        }
    }
}

#[derive(Clone, Debug)]
pub struct UnionSet {
    subsets: Vec<PolytopeSubset>,
}

impl UnionSet {
    pub fn new(subsets: Vec<PolytopeSubset>) -> Result<Self, UncertaintyError> {
        let first = subsets.first().ok_or(UncertaintyError::EmptyUnion)?;
        let dim = first.dim();
        for s in &subsets {
            if s.dim() != dim {
                return Err(UncertaintyError::DimensionMismatch { label: s.label(), got: s.dim(), expected: dim });
            }
        }
        Ok(UnionSet { subsets })
    }

    pub fn subsets(&self) -> &[PolytopeSubset] {
        &self.subsets
    }

    pub fn num_subsets(&self) -> usize {
        self.subsets.len()
    }

    pub fn dim(&self) -> usize {
        self.subsets[0].dim()
    }

    /// First subset containing `v` within [`MEMBERSHIP_TOL`].
    pub fn contains(&self, v: &[f64]) -> Option<usize> {
        self.subsets.iter().position(|s| s.contains_point(v, MEMBERSHIP_TOL))
    }

    /// Bounding box of the whole union.
    pub fn bbox(&self) -> Vec<(f64, f64)> {
        let mut out = self.subsets[0].bbox().to_vec();
        for s in &self.subsets[1..] {
            for (acc, &(lo, hi)) in out.iter_mut().zip(s.bbox()) {
                acc.0 = acc.0.min(lo);
                acc.1 = acc.1.max(hi);
            }
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct ProductUnionSet {
    base: UnionSet,
    horizon: usize,
}

impl ProductUnionSet {
    pub fn new(base: UnionSet, horizon: usize) -> Result<Self, UncertaintyError> {
        assert!(horizon >= 1, "horizon must be at least 1");
        Ok(ProductUnionSet { base, horizon })
    }

    pub fn base(&self) -> &UnionSet {
        &self.base
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn step_dim(&self) -> usize {
        self.base.dim()
    }

    pub fn total_dim(&self) -> usize {
        self.base.dim() * self.horizon
    }

    /// K^N when it fits in usize.
    pub fn explicit_count(&self) -> Option<usize> {
        self.base.num_subsets().checked_pow(self.horizon as u32)
    }

    /// Per-step first-match subset indices, or None if some step fails.
    pub fn contains(&self, v: &[f64]) -> Option<Vec<usize>> {
        if v.len() != self.total_dim() {
            return None;
        }
        let d = self.step_dim();
        let mut idx = Vec::with_capacity(self.horizon);
        for t in 0..self.horizon {
            idx.push(self.base.contains(&v[t * d..(t + 1) * d])?);
        }
        Some(idx)
    }
}

/// Selector-binary representation of a product of unions: the per-step rows
///
/// ```text
///     sum_k D_k w_{t,k} <= sum_k delta_{t,k} d_k
///     -Delta (1 - delta_{t,k}) e <= v_t - w_{t,k} <= Delta (1 - delta_{t,k}) e
///     -Delta delta_{t,k} e      <=      w_{t,k}   <= Delta delta_{t,k} e
///     sum_k delta_{t,k} = 1
/// ```
///
/// where all D_k are padded to a common row count. A binary assignment picks
/// one subset per step; w_{t,k} equals v_t for the picked subset and 0
/// otherwise, provided Delta dominates every coordinate of every subset.
#[derive(Clone, Debug)]
pub struct MonolithicEncoding {
    padded_mats: Vec<Mat>,
    padded_vecs: Vec<Vec<f64>>,
    row_count: usize,
    step_dim: usize,
    horizon: usize,
    big_m: f64,
}

impl MonolithicEncoding {
    pub fn padded_mats(&self) -> &[Mat] {
        &self.padded_mats
    }

    pub fn padded_vecs(&self) -> &[Vec<f64>] {
        &self.padded_vecs
    }

    pub fn row_count(&self) -> usize {
        self.row_count
    }

    pub fn step_dim(&self) -> usize {
        self.step_dim
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn num_subsets(&self) -> usize {
        self.padded_mats.len()
    }

    pub fn big_m(&self) -> f64 {
        self.big_m
    }

    pub fn total_dim(&self) -> usize {
        self.step_dim * self.horizon
    }
}

pub fn encode_monolithic(pu: &ProductUnionSet) -> MonolithicEncoding {
    encode_monolithic_with_big_m(pu, None)
}

pub fn encode_monolithic_with_big_m(pu: &ProductUnionSet, big_m: Option<f64>) -> MonolithicEncoding {
    let subsets = pu.base().subsets();
    let row_count = subsets.iter().map(|s| s.num_rows()).max().unwrap();
    let step_dim = pu.step_dim();

    let mut padded_mats = Vec::with_capacity(subsets.len());
    let mut padded_vecs = Vec::with_capacity(subsets.len());
    for s in subsets {
        let mut m = s.d_mat().clone();
        let mut d = s.d_vec().to_vec();
        // Vacuous rows 0'v <= 1 hold everywhere, so padding never cuts.
        let zero = vec![0.0; step_dim];
        while d.len() < row_count {
            m.push_row(&zero);
            d.push(1.0);
        }
        padded_mats.push(m);
        padded_vecs.push(d);
    }

    let max_coord = subsets
        .iter()
        .flat_map(|s| s.bbox().iter())
        .fold(0.0f64, |a, &(lo, hi)| a.max(lo.abs()).max(hi.abs()));
    let big_m = big_m.unwrap_or_else(|| (1.1 * max_coord).max(1.0));

    MonolithicEncoding { padded_mats, padded_vecs, row_count, step_dim, horizon: pu.horizon(), big_m }
}

/// All vertices of a low-dimensional subset: solve every dim-subset of rows
/// as an equality system, keep feasible solutions, drop duplicates.
pub fn enumerate_vertices(p: &PolytopeSubset) -> Result<Vec<Vec<f64>>, UncertaintyError> {
    const MAX_DIM: usize = 4;
    let dim = p.dim();
    if dim > MAX_DIM {
        return Err(UncertaintyError::DimensionTooLarge { dim, max: MAX_DIM });
    }
    let m = p.num_rows();
    let mut vertices: Vec<Vec<f64>> = Vec::new();
    let mut combo = (0..dim).collect::<Vec<usize>>();
    if m < dim {
        return Ok(vertices);
    }
    loop {
        let mut a: Vec<Vec<f64>> = combo.iter().map(|&i| p.d_mat().row(i).to_vec()).collect();
        let mut rhs: Vec<f64> = combo.iter().map(|&i| p.d_vec()[i]).collect();
        if let Some(x) = solve_square(&mut a, &mut rhs) {
            if p.contains_point(&x, MEMBERSHIP_TOL)
                && !vertices.iter().any(|v| close(v, &x, MEMBERSHIP_TOL))
            {
                vertices.push(x);
            }
        }
        if !next_combination(&mut combo, m) {
            break;
        }
    }
    vertices.sort_by(|a, b| {
        a.iter()
            .zip(b)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| *o != std::cmp::Ordering::Equal)
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    Ok(vertices)
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

fn next_combination(combo: &mut [usize], m: usize) -> bool {
    let k = combo.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if combo[i] < m - (k - i) {
            combo[i] += 1;
            for j in i + 1..k {
                combo[j] = combo[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

fn solve_square(a: &mut [Vec<f64>], b: &mut [f64]) -> Option<Vec<f64>> {
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

#[derive(Clone, Debug, PartialEq)]
pub struct NominalEstimate {
    pub probs: Vec<f64>,
    pub counted: usize,
    pub outliers: usize,
}

/// Frequency estimate of the per-subset probabilities from samples; points
/// outside the union are excluded and reported as outliers.
pub fn estimate_nominal_probs(samples: &[Vec<f64>], u: &UnionSet) -> Result<NominalEstimate, UncertaintyError> {
    let mut counts = vec![0usize; u.num_subsets()];
    let mut outliers = 0usize;
    for s in samples {
        match u.contains(s) {
            Some(k) => counts[k] += 1,
            None => outliers += 1,
        }
    }
    let counted: usize = counts.iter().sum();
    if counted == 0 {
        return Err(UncertaintyError::NoSamplesInUnion);
    }
    let probs = counts.iter().map(|&c| c as f64 / counted as f64).collect();
    Ok(NominalEstimate { probs, counted, outliers })
}

/// One product subset: the per-step subset choice and the block-diagonal
/// polytope it induces over the stacked dimension.
#[derive(Clone, Debug)]
pub struct ExplicitSubset {
    pub index: Vec<usize>,
    pub subset: PolytopeSubset,
}

pub struct ExplicitSubsets<'a> {
    pu: &'a ProductUnionSet,
    next_index: Option<Vec<usize>>,
    rank: usize,
}

impl<'a> Iterator for ExplicitSubsets<'a> {
    type Item = ExplicitSubset;

    fn next(&mut self) -> Option<ExplicitSubset> {
        let index = self.next_index.clone()?;
        let item = build_product_subset(self.pu, &index, self.rank);
        self.rank += 1;

        // Lexicographic successor, last position fastest.
        let k = self.pu.base().num_subsets();
        let mut idx = index;
        let mut pos = idx.len();
        loop {
            if pos == 0 {
                self.next_index = None;
                break;
            }
            pos -= 1;
            if idx[pos] + 1 < k {
                idx[pos] += 1;
                idx[pos + 1..].iter_mut().for_each(|x| *x = 0);
                self.next_index = Some(idx);
                break;
            }
        }
        Some(item)
    }
}

fn build_product_subset(pu: &ProductUnionSet, index: &[usize], rank: usize) -> ExplicitSubset {
    let d = pu.step_dim();
    let n = pu.horizon();
    let total = d * n;
    let mut mat = Mat::with_cols(total);
    let mut vec_ = Vec::new();
    let mut bbox = Vec::with_capacity(total);
    for (t, &k) in index.iter().enumerate() {
        let s = &pu.base().subsets()[k];
        for r in 0..s.num_rows() {
            let mut row = vec![0.0; total];
            row[t * d..(t + 1) * d].copy_from_slice(s.d_mat().row(r));
            mat.push_row(&row);
            vec_.push(s.d_vec()[r]);
        }
        bbox.extend_from_slice(s.bbox());
    }
    ExplicitSubset {
        index: index.to_vec(),
        subset: PolytopeSubset::from_validated_parts(mat, vec_, rank, bbox),
    }
}

pub fn enumerate_explicit_subsets(pu: &ProductUnionSet) -> Result<ExplicitSubsets<'_>, UncertaintyError> {
    enumerate_explicit_subsets_capped(pu, DEFAULT_EXPLOSION_CAP)
}

pub fn enumerate_explicit_subsets_capped(
    pu: &ProductUnionSet,
    cap: usize,
) -> Result<ExplicitSubsets<'_>, UncertaintyError> {
    match pu.explicit_count() {
        Some(count) if count <= cap => Ok(ExplicitSubsets {
            pu,
            next_index: Some(vec![0; pu.horizon()]),
            rank: 0,
        }),
        Some(count) => Err(UncertaintyError::ExplosionCapExceeded { count: count.to_string(), cap }),
        None => Err(UncertaintyError::ExplosionCapExceeded {
            count: format!(
                "{}^{} (overflows usize)",
                pu.base().num_subsets(),
                pu.horizon()
            ),
            cap,
        }),
    }
}
