//! JSON job configuration: parsing, defaults, validation and problem construction.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::eigen::EigenOptions;
use crate::error::{Error, Result};
use crate::fem::{FeModel, PlaneModel};
use crate::filter::{DensityMap, FilterOperator};
use crate::material::{default_threshold, MaterialScheme, SchemeKind, SchemeParams};
use crate::mesh::{Mesh, Support, Symmetry};
use crate::optimize::{BoundProblem, Formulation, MmaParams, ProblemSpec};
use crate::verify::{StudyOptions, VariableSpace};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobConfig {
    pub problem: ProblemConfig,
    pub mesh: MeshConfig,
    pub supports: Vec<Support>,
    #[serde(default)]
    pub point_masses: Vec<PointMassConfig>,
    #[serde(default)]
    pub symmetry: Symmetry,
    pub material: MaterialConfig,
    #[serde(default)]
    pub plane: PlaneModel,
    pub filter_radius: f64,
    /// One threshold per design channel.
    pub volumes: Vec<f64>,
    #[serde(default = "default_m")]
    pub m: usize,
    #[serde(default = "default_cluster_tol")]
    pub cluster_tol: f64,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_move_limit")]
    pub move_limit: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub eigen: EigenConfig,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Density snapshots every this many iterations; 0 keeps only the first and last.
    #[serde(default = "default_snapshot_every")]
    pub snapshot_every: usize,
    #[serde(default)]
    pub eig: EigConfig,
    #[serde(default)]
    pub verify: VerifyConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub kind: Formulation,
    /// Target cluster order: `n` for eigmax, the gap above cluster `n` for bandgap.
    #[serde(default = "one")]
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshConfig {
    #[serde(default = "two")]
    pub dim: usize,
    pub cells: Vec<usize>,
    pub lengths: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointMassConfig {
    pub at: Vec<f64>,
    pub mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialConfig {
    pub scheme: SchemeKind,
    pub youngs: Vec<f64>,
    pub densities: Vec<f64>,
    #[serde(default = "default_poisson")]
    pub poisson: f64,
    #[serde(default = "default_p1")]
    pub p1: f64,
    #[serde(default = "default_p2")]
    pub p2: f64,
    #[serde(default = "default_p1")]
    pub p_bi: f64,
    /// Mass-penalty threshold; 0.1 in 2D and 0.02 in 3D when absent.
    #[serde(default)]
    pub rho_t: Option<f64>,
    #[serde(default = "default_rho_l")]
    pub rho_l: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EigenConfig {
    pub tol: f64,
    pub block: usize,
    pub max_restarts: usize,
    pub dense_below: usize,
    /// Eigenpairs requested beyond those needed by the required clusters.
    pub budget_pad: usize,
    pub max_extensions: usize,
}

impl Default for EigenConfig {
    fn default() -> Self {
        let e = EigenOptions::default();
        Self { tol: e.tol, block: e.block, max_restarts: e.max_restarts, dense_below: e.dense_below, budget_pad: 5, max_extensions: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EigConfig {
    /// Number of eigenpairs written by the `eig` command.
    pub count: usize,
    /// Uniform design value; the volume-threshold initial design when absent.
    pub design: Option<f64>,
}

impl Default for EigConfig {
    fn default() -> Self {
        Self { count: 10, design: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VerifyMode {
    /// Constraint gradients against CDM at seeded random points.
    Gradients,
    /// Warmup, then repeated-eigenvalue and aggregate differentiability.
    Study,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    pub mode: VerifyMode,
    /// Random points checked in gradient mode.
    pub states: usize,
    pub warmup: usize,
    pub spaces: Vec<VariableSpace>,
    pub step: f64,
    pub tolerance: f64,
    pub mismatch: f64,
    pub p: f64,
    pub q: f64,
    pub aggregate_clusters: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        let s = StudyOptions::default();
        Self {
            mode: VerifyMode::Gradients,
            states: 3,
            warmup: s.warmup,
            spaces: s.spaces,
            step: s.step,
            tolerance: s.tolerance,
            mismatch: s.mismatch,
            p: s.p,
            q: s.q,
            aggregate_clusters: s.aggregate_clusters,
        }
    }
}

fn one() -> usize {
    1
}
fn two() -> usize {
    2
}
fn default_m() -> usize {
    10
}
fn default_cluster_tol() -> f64 {
    crate::spectrum::DEFAULT_CLUSTER_TOL
}
fn default_iterations() -> usize {
    500
}
fn default_move_limit() -> f64 {
    MmaParams::default().move_limit
}
fn default_snapshot_every() -> usize {
    50
}
fn default_poisson() -> f64 {
    0.3
}
fn default_p1() -> f64 {
    3.0
}
fn default_p2() -> f64 {
    6.0
}
fn default_rho_l() -> f64 {
    1e-4
}

fn invalid(path: &str, message: impl Into<String>) -> Error {
    Error::Config { path: path.to_string(), message: message.into() }
}

fn at(path: &'static str) -> impl FnOnce(Error) -> Error {
    move |e| invalid(path, e.to_string())
}

/// Parses and validates a JSON job configuration.
pub fn parse_config(text: &str) -> Result<JobConfig> {
    if text.trim().is_empty() {
        return Err(invalid("<root>", "empty input"));
    }
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: JobConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        invalid(if path == "." { "<root>" } else { &path }, e.into_inner().to_string())
    })?;
    cfg.validate()?;
    Ok(cfg)
}

impl JobConfig {
    pub fn validate(&self) -> Result<()> {
        let dim = self.mesh.dim;
        if dim != 2 && dim != 3 {
            return Err(invalid("mesh.dim", format!("must be 2 or 3, got {dim}")));
        }
        if self.mesh.cells.len() != dim || self.mesh.cells.contains(&0) {
            return Err(invalid("mesh.cells", format!("need {dim} positive counts")));
        }
        if self.mesh.lengths.len() != dim || self.mesh.lengths.iter().any(|l| !(*l > 0.0) || !l.is_finite()) {
            return Err(invalid("mesh.lengths", format!("need {dim} positive lengths")));
        }
        if self.supports.is_empty() {
            return Err(invalid("supports", "at least one support is required"));
        }
        if self.problem.n < 1 {
            return Err(invalid("problem.n", "must be >= 1"));
        }
        if self.m < 1 {
            return Err(invalid("m", "must be >= 1"));
        }
        if !(self.cluster_tol > 0.0 && self.cluster_tol < 1.0) {
            return Err(invalid("cluster_tol", format!("must lie in (0, 1), got {}", self.cluster_tol)));
        }
        if !(self.move_limit > 0.0 && self.move_limit <= 1.0) {
            return Err(invalid("move_limit", format!("must lie in (0, 1], got {}", self.move_limit)));
        }
        if !(self.filter_radius > 0.0) || !self.filter_radius.is_finite() {
            return Err(invalid("filter_radius", format!("must be positive, got {}", self.filter_radius)));
        }
        let channels = self.material.scheme.channels();
        if self.volumes.len() != channels {
            return Err(invalid("volumes", format!("{:?} needs {channels} thresholds, got {}", self.material.scheme, self.volumes.len())));
        }
        if let Some(v) = self.volumes.iter().find(|v| !(**v > 0.0 && **v <= 1.0)) {
            return Err(invalid("volumes", format!("threshold {v} outside (0, 1]")));
        }
        if self.volumes.windows(2).any(|w| w[1] > w[0]) {
            return Err(invalid("volumes", format!("thresholds must be nested (each at most the previous), got {:?}", self.volumes)));
        }
        if self.eigen.block < 1 || !(self.eigen.tol > 0.0) {
            return Err(invalid("eigen", "block must be >= 1 and tol positive"));
        }
        if self.eig.count < 1 {
            return Err(invalid("eig.count", "must be >= 1"));
        }
        if let Some(d) = self.eig.design {
            if !(d > 0.0 && d <= 1.0) {
                return Err(invalid("eig.design", format!("must lie in (0, 1], got {d}")));
            }
        }
        if !(self.verify.step > 0.0) {
            return Err(invalid("verify.step", "must be positive"));
        }
        if !(self.verify.tolerance > 0.0 && self.verify.mismatch >= self.verify.tolerance) {
            return Err(invalid("verify.mismatch", "need 0 < tolerance <= mismatch"));
        }
        if self.verify.spaces.is_empty() {
            return Err(invalid("verify.spaces", "at least one space is required"));
        }
        for (i, pm) in self.point_masses.iter().enumerate() {
            if pm.at.len() != dim || !(pm.mass >= 0.0) {
                return Err(invalid(&format!("point_masses[{i}]"), format!("need {dim} coordinates and a mass >= 0")));
            }
        }
        self.scheme_params().and_then(MaterialScheme::new).map_err(at("material"))?;
        Ok(())
    }

    /// Overrides the seed; the command line takes precedence over the file.
    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        if let Some(s) = seed {
            self.seed = s;
        }
        self
    }

    pub fn scheme_params(&self) -> Result<SchemeParams> {
        let m = &self.material;
        Ok(SchemeParams {
            kind: m.scheme,
            youngs: m.youngs.clone(),
            densities: m.densities.clone(),
            poisson: m.poisson,
            p1: m.p1,
            p2: m.p2,
            p_bi: m.p_bi,
            rho_t: m.rho_t.unwrap_or_else(|| default_threshold(self.mesh.dim)),
            rho_l: m.rho_l,
        })
    }

    pub fn eigen_options(&self) -> EigenOptions {
        EigenOptions {
            tol: self.eigen.tol,
            block: self.eigen.block,
            max_restarts: self.eigen.max_restarts,
            seed: self.seed,
            dense_below: self.eigen.dense_below,
        }
    }

    pub fn mma_params(&self) -> MmaParams {
        MmaParams { move_limit: self.move_limit, ..MmaParams::default() }
    }

    pub fn study_options(&self) -> StudyOptions {
        let v = &self.verify;
        StudyOptions {
            warmup: v.warmup,
            spaces: v.spaces.clone(),
            step: v.step,
            tolerance: v.tolerance,
            mismatch: v.mismatch,
            p: v.p,
            q: v.q,
            aggregate_clusters: v.aggregate_clusters,
            mma: self.mma_params(),
        }
    }

    /// Supported mesh with point masses attached.
    pub fn build_mesh(&self) -> Result<Mesh> {
        let mut mesh = Mesh::build_grid(self.mesh.dim, &self.mesh.cells, &self.mesh.lengths).map_err(at("mesh"))?;
        mesh = mesh.apply_boundary(&self.supports).map_err(at("supports"))?;
        for pm in &self.point_masses {
            mesh = mesh.add_point_mass(&pm.at, pm.mass).map_err(at("point_masses"))?;
        }
        Ok(mesh)
    }

    pub fn build_problem(&self) -> Result<BoundProblem> {
        let mesh = self.build_mesh()?;
        let orbits = mesh.compute_orbits(self.symmetry).map_err(at("symmetry"))?;
        let filter = FilterOperator::build(&mesh, self.filter_radius).map_err(at("filter_radius"))?;
        let scheme = MaterialScheme::new(self.scheme_params()?).map_err(at("material"))?;
        let map = DensityMap::new(orbits, filter, scheme.channels())?;
        let model = FeModel::new(mesh, scheme.poisson(), self.plane).map_err(at("supports"))?;
        let mut spec = ProblemSpec::new(self.problem.kind, self.problem.n, self.volumes.clone());
        spec.m = self.m;
        spec.cluster_tol = self.cluster_tol;
        spec.eigen = self.eigen_options();
        spec.budget_pad = self.eigen.budget_pad;
        spec.max_extensions = self.eigen.max_extensions;
        BoundProblem::new(spec, model, scheme, map)
    }

    /// Pretty JSON with every default written out.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }
}
