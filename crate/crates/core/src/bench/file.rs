//! On-disk problem files and result tables.
//!
//! A [`ProblemFile`] bundles everything a solver run needs: the two-stage
//! program, the uncertainty union (as raw `D v <= d` rows so the file stands
//! alone), an optional ambiguity ball, and the solver settings that should be
//! used when no flags override them. The format is versioned JSON with
//! matrices stored as row lists; `save`/`load` round-trip losslessly.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::cases::{self, CASE2_SEED, CLIMATE_SEED, CPNP_SEED};
use super::BenchError;
use crate::bilevel::KktReformConfig;
use crate::ccg_dro::{AmbiguitySet, DroConfig, MasterVariant};
use crate::ccg_ro::CcgConfig;
use crate::mat::Mat;
use crate::model::TwoStageProblem;
use crate::uncertainty::{PolytopeSubset, ProductUnionSet, UnionSet};

pub const FILE_VERSION: u32 = 1;

/// One polytope subset as raw rows, dimension implied by the row length.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SubsetSpec {
    pub d: Vec<Vec<f64>>,
    pub rhs: Vec<f64>,
}

impl SubsetSpec {
    pub fn from_subset(s: &PolytopeSubset) -> Self {
        SubsetSpec { d: s.d_mat().to_row_vecs(), rhs: s.d_vec().to_vec() }
    }
}

/// The union of subsets plus how many stages it repeats over.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct UncertaintySpec {
    pub horizon: usize,
    pub subsets: Vec<SubsetSpec>,
}

impl UncertaintySpec {
    pub fn from_product(pu: &ProductUnionSet) -> Self {
        UncertaintySpec {
            horizon: pu.horizon(),
            subsets: pu.base().subsets().iter().map(SubsetSpec::from_subset).collect(),
        }
    }

    pub fn from_union(u: &UnionSet) -> Self {
        UncertaintySpec {
            horizon: 1,
            subsets: u.subsets().iter().map(SubsetSpec::from_subset).collect(),
        }
    }

    pub fn union(&self) -> Result<UnionSet, BenchError> {
        let mut subsets = Vec::with_capacity(self.subsets.len());
        for (k, s) in self.subsets.iter().enumerate() {
            let d = Mat::from_rows(&s.d).map_err(BenchError::BadFile)?;
            subsets.push(PolytopeSubset::new(d, s.rhs.clone(), k)?);
        }
        Ok(UnionSet::new(subsets)?)
    }

    pub fn product(&self) -> Result<ProductUnionSet, BenchError> {
        Ok(ProductUnionSet::new(self.union()?, self.horizon)?)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AmbiguitySpec {
    pub nominal_probs: Vec<f64>,
    pub radius: f64,
}

impl AmbiguitySpec {
    pub fn from_set(a: &AmbiguitySet) -> Self {
        AmbiguitySpec { nominal_probs: a.nominal_probs().to_vec(), radius: a.radius() }
    }

    pub fn set(&self) -> Result<AmbiguitySet, BenchError> {
        Ok(AmbiguitySet::new(self.nominal_probs.clone(), self.radius)?)
    }
}

/// Solver settings shipped with the file. CLI flags override field by field.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolverSettings {
    pub epsilon: f64,
    pub max_iterations: usize,
    pub m_comp: f64,
    pub big_delta: Option<f64>,
    pub validation_factor: f64,
    pub oa_tol: f64,
    pub variant: MasterVariant,
    pub seed: u64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        let kkt = KktReformConfig::default();
        SolverSettings {
            epsilon: 1e-6,
            max_iterations: 100,
            m_comp: kkt.m_comp,
            big_delta: kkt.big_delta,
            validation_factor: kkt.validation_factor,
            oa_tol: 1e-7,
            variant: MasterVariant::Direct,
            seed: 0,
        }
    }
}

impl SolverSettings {
    fn kkt(&self) -> KktReformConfig {
        KktReformConfig {
            m_comp: self.m_comp,
            big_delta: self.big_delta,
            validation_factor: self.validation_factor,
        }
    }

    pub fn ccg_config(&self) -> CcgConfig {
        CcgConfig {
            epsilon: self.epsilon,
            max_iterations: self.max_iterations,
            kkt: self.kkt(),
            ..CcgConfig::default()
        }
    }

    pub fn dro_config(&self) -> DroConfig {
        DroConfig {
            epsilon: self.epsilon,
            max_iterations: self.max_iterations,
            kkt: self.kkt(),
            oa_tol: self.oa_tol,
            variant: self.variant,
            ..DroConfig::default()
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProblemFile {
    pub version: u32,
    pub name: String,
    pub problem: TwoStageProblem,
    pub uncertainty: UncertaintySpec,
    pub ambiguity: Option<AmbiguitySpec>,
    pub solver: SolverSettings,
}

impl ProblemFile {
    pub fn to_json(&self) -> Result<String, BenchError> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self, BenchError> {
        let pf: ProblemFile = serde_json::from_str(text)?;
        if pf.version != FILE_VERSION {
            return Err(BenchError::BadFile(format!(
                "unsupported file version {} (expected {})",
                pf.version, FILE_VERSION
            )));
        }
        pf.problem.validate().map_err(BenchError::from)?;
        if pf.uncertainty.horizon == 0 || pf.uncertainty.subsets.is_empty() {
            return Err(BenchError::BadFile("empty uncertainty description".into()));
        }
        Ok(pf)
    }

    pub fn save(&self, path: &Path) -> Result<(), BenchError> {
        Ok(std::fs::write(path, self.to_json()?)?)
    }

    pub fn load(path: &Path) -> Result<Self, BenchError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Parse-serialize-parse equality on the JSON value tree. The value
    /// comparison (rather than byte comparison) keeps the check independent
    /// of key order and float formatting.
    pub fn round_trips(&self) -> Result<bool, BenchError> {
        let once = self.to_json()?;
        let again = Self::from_json(&once)?.to_json()?;
        let a: serde_json::Value = serde_json::from_str(&once)?;
        let b: serde_json::Value = serde_json::from_str(&again)?;
        Ok(a == b)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShippedCase {
    Case2,
    Cpnp,
    Climate,
}

impl ShippedCase {
    pub fn parse(name: &str) -> Result<Self, BenchError> {
        match name {
            "case2" => Ok(ShippedCase::Case2),
            "cpnp" => Ok(ShippedCase::Cpnp),
            "climate" => Ok(ShippedCase::Climate),
            other => Err(BenchError::BadFile(format!(
                "unknown case {other:?} (expected case2, cpnp or climate)"
            ))),
        }
    }

    pub fn file_stem(self) -> &'static str {
        match self {
            ShippedCase::Case2 => "case2",
            ShippedCase::Cpnp => "cpnp",
            ShippedCase::Climate => "climate",
        }
    }
}

/// Builds the committed benchmark instances from their pinned seeds. The
/// files under benchmarks/ are exactly these; a test regenerates and
/// compares them byte for byte.
pub fn shipped_problem_file(case: ShippedCase) -> Result<ProblemFile, BenchError> {
    match case {
        ShippedCase::Case2 => {
            let union = cases::default_case2_union(CASE2_SEED);
            let problem = cases::build_location_transportation(&union)?;
            Ok(ProblemFile {
                version: FILE_VERSION,
                name: "case2-location-transportation".into(),
                problem,
                uncertainty: UncertaintySpec::from_union(&union),
                ambiguity: Some(AmbiguitySpec::from_set(&cases::default_case2_ambiguity())),
                solver: SolverSettings { seed: CASE2_SEED, ..SolverSettings::default() },
            })
        }
        ShippedCase::Cpnp => {
            let params = cases::shipped_cpnp_params();
            let problem = cases::build_cpnp(&params, CPNP_SEED)?;
            let union = cases::default_cpnp_union(CPNP_SEED);
            Ok(ProblemFile {
                version: FILE_VERSION,
                name: "cpnp-process-network".into(),
                problem,
                uncertainty: UncertaintySpec::from_union(&union),
                ambiguity: Some(AmbiguitySpec::from_set(&cases::default_cpnp_ambiguity())),
                solver: SolverSettings { seed: CPNP_SEED, ..SolverSettings::default() },
            })
        }
        ShippedCase::Climate => {
            let case = cases::build_climate_mpc(CLIMATE_SEED, 6, 2)?;
            Ok(ProblemFile {
                version: FILE_VERSION,
                name: "climate-mpc".into(),
                problem: case.problem,
                uncertainty: UncertaintySpec::from_product(&case.union),
                ambiguity: None,
                solver: SolverSettings { seed: CLIMATE_SEED, ..SolverSettings::default() },
            })
        }
    }
}

/// One row of a result table: which scheme ran, what it found, how long it
/// took. `iterations` is at least 1 for any run that converged.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ResultRecord {
    pub scheme: String,
    pub objective: f64,
    pub first_stage: Vec<f64>,
    pub cpu_s: f64,
    pub iterations: usize,
}

pub const RESULT_CSV_HEADER: &str = "scheme,objective,x,cpu_s,iterations";

impl ResultRecord {
    pub fn csv_row(&self) -> String {
        let x = self
            .first_stage
            .iter()
            .map(|v| format!("{v}"))
            .collect::<Vec<_>>()
            .join(";");
        format!(
            "{},{},{},{:.2},{}",
            self.scheme, self.objective, x, self.cpu_s, self.iterations
        )
    }
}

pub fn results_to_csv(records: &[ResultRecord]) -> String {
    let mut out = String::from(RESULT_CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

pub fn results_to_json(records: &[ResultRecord]) -> Result<String, BenchError> {
    let mut s = serde_json::to_string_pretty(records)?;
    s.push('\n');
    Ok(s)
}
