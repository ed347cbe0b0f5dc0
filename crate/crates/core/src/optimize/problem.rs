use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::eigen::{EigenOptions, EigenSet, EigenSolver};
use crate::error::{Error, Result};
use crate::fem::FeModel;
use crate::filter::DensityMap;
use crate::material::{MaterialPoint, MaterialScheme, SchemeKind};
use crate::sparse::CsrMatrix;
use crate::spectrum::{cluster, cluster_mean_sensitivity, ClusterSet};

pub const BOUND_MIN: f64 = 1e-3;
pub const BOUND_MAX: f64 = 1e3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Formulation {
    /// Maximize the `n`-th cluster mean.
    Eigmax,
    /// Maximize the gap between clusters `n` and `n + 1`.
    Bandgap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    pub kind: Formulation,
    pub n: usize,
    pub m: usize,
    pub cluster_tol: f64,
    /// One threshold per design channel, nested for multi-phase schemes.
    pub volumes: Vec<f64>,
    pub eigen: EigenOptions,
    pub budget_pad: usize,
    pub max_extensions: usize,
}

impl ProblemSpec {
    pub fn new(kind: Formulation, n: usize, volumes: Vec<f64>) -> Self {
        Self {
            kind,
            n,
            m: 10,
            cluster_tol: crate::spectrum::DEFAULT_CLUSTER_TOL,
            volumes,
            eigen: EigenOptions::default(),
            budget_pad: 5,
            max_extensions: 4,
        }
    }

    /// Number of leading clusters the constraints touch.
    pub fn required_clusters(&self) -> usize {
        match self.kind {
            Formulation::Eigmax => self.n + self.m - 1,
            Formulation::Bandgap => self.n + self.m,
        }
    }

    pub fn num_bounds(&self) -> usize {
        match self.kind {
            Formulation::Eigmax => 1,
            Formulation::Bandgap => 2,
        }
    }

    pub fn num_eigen_constraints(&self) -> usize {
        match self.kind {
            Formulation::Eigmax => self.m,
            Formulation::Bandgap => self.n + self.m,
        }
    }

    fn validate(&self, channels: usize) -> Result<()> {
        if self.n < 1 || self.m < 1 {
            return Err(Error::Parameter(format!("need n >= 1 and m >= 1, got n={} m={}", self.n, self.m)));
        }
        if !(self.cluster_tol > 0.0) {
            return Err(Error::Parameter(format!("cluster tolerance must be positive, got {}", self.cluster_tol)));
        }
        if self.volumes.len() != channels {
            return Err(Error::Parameter(format!("{} volume thresholds given for {channels} design channels", self.volumes.len())));
        }
        if let Some(v) = self.volumes.iter().find(|v| !(**v > 0.0 && **v <= 1.0)) {
            return Err(Error::Parameter(format!("volume threshold {v} outside (0, 1]")));
        }
        if self.volumes.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::Parameter(format!("volume thresholds must be nested (non-increasing), got {:?}", self.volumes)));
        }
        Ok(())
    }
}

/// Eigenpairs and clusters with every required cluster complete.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub eigs: EigenSet,
    pub clusters: ClusterSet,
    pub solves: usize,
}

impl Spectrum {
    /// Eigenvalues covered by the required clusters.
    pub fn clustered_count(&self) -> usize {
        self.clusters.count_through(self.clusters.len())
    }
}

/// Everything an optimizer step needs at one point `y = [beta~, x_reduced]`.
#[derive(Debug, Clone)]
pub struct Evaluation {
    /// Physical objective: `beta` or `beta2 - beta1`.
    pub objective: f64,
    /// Scaled objective minimized by MMA, and its gradient.
    pub mma_objective: f64,
    pub mma_gradient: Vec<f64>,
    pub constraints: Vec<f64>,
    pub jacobian: Vec<Vec<f64>>,
    pub spectrum: Spectrum,
    pub densities: Vec<Vec<f64>>,
}

/// Per-element state derived from a reduced design.
pub struct DesignState {
    pub densities: Vec<Vec<f64>>,
    pub materials: Vec<MaterialPoint>,
    pub stiffness: CsrMatrix,
    pub mass: CsrMatrix,
}

/// Bound formulation over a mesh, material scheme and design map.
#[derive(Debug, Clone)]
pub struct BoundProblem {
    spec: ProblemSpec,
    model: FeModel,
    scheme: MaterialScheme,
    map: DensityMap,
    solver: EigenSolver,
    scale: Vec<f64>,
}

impl BoundProblem {
    pub fn new(spec: ProblemSpec, model: FeModel, scheme: MaterialScheme, map: DensityMap) -> Result<Self> {
        spec.validate(scheme.channels())?;
        if map.channels() != scheme.channels() {
            return Err(Error::Shape { expected: scheme.channels(), got: map.channels() });
        }
        if map.num_elements() != model.mesh().num_elements() {
            return Err(Error::Shape { expected: model.mesh().num_elements(), got: map.num_elements() });
        }
        let ne = map.num_elements();
        let (k, _) = model.assemble(&vec![1.0; ne], &vec![1.0; ne])?;
        let solver = EigenSolver::new(&k)?;
        let scale = vec![1.0; spec.num_bounds()];
        Ok(Self { spec, model, scheme, map, solver, scale })
    }

    pub fn spec(&self) -> &ProblemSpec {
        &self.spec
    }

    pub fn model(&self) -> &FeModel {
        &self.model
    }

    pub fn scheme(&self) -> &MaterialScheme {
        &self.scheme
    }

    pub fn map(&self) -> &DensityMap {
        &self.map
    }

    pub fn scale(&self) -> &[f64] {
        &self.scale
    }

    pub fn set_scale(&mut self, scale: Vec<f64>) -> Result<()> {
        if scale.len() != self.spec.num_bounds() || scale.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Parameter(format!("bound scaling must be {} positive values", self.spec.num_bounds())));
        }
        self.scale = scale;
        Ok(())
    }

    pub fn num_bounds(&self) -> usize {
        self.spec.num_bounds()
    }

    pub fn num_variables(&self) -> usize {
        self.num_bounds() + self.map.num_reduced()
    }

    pub fn num_constraints(&self) -> usize {
        self.spec.num_eigen_constraints() + self.scheme.channels()
    }

    /// Box of the optimization vector `y`.
    pub fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let nb = self.num_bounds();
        let per = self.map.orbits().num_orbits();
        let mut lo = vec![BOUND_MIN; nb];
        let mut hi = vec![BOUND_MAX; nb];
        for c in 0..self.scheme.channels() {
            lo.extend(std::iter::repeat_n(self.scheme.lower_bound(c), per));
            hi.extend(std::iter::repeat_n(1.0, per));
        }
        (lo, hi)
    }

    /// Uniform start at the volume thresholds; later channels hold ratios of consecutive thresholds.
    pub fn initial_design(&self) -> Vec<f64> {
        let per = self.map.orbits().num_orbits();
        let v = &self.spec.volumes;
        let mut x = Vec::with_capacity(self.map.num_reduced());
        for c in 0..self.scheme.channels() {
            let val = if c == 0 { v[0] } else { v[c] / v[c - 1] };
            x.extend(std::iter::repeat_n(val.clamp(self.scheme.lower_bound(c), 1.0), per));
        }
        x
    }

    /// Starting `y` with unit scaled bounds.
    pub fn initial_point(&self) -> Vec<f64> {
        let mut y = vec![1.0; self.num_bounds()];
        y.extend(self.initial_design());
        y
    }

    pub fn design_state(&self, x_reduced: &[f64]) -> Result<DesignState> {
        self.state_from_densities(self.map.densities(x_reduced)?)
    }

    /// Materials and system matrices for given filtered densities `[channel][element]`.
    pub fn state_from_densities(&self, densities: Vec<Vec<f64>>) -> Result<DesignState> {
        let ne = self.map.num_elements();
        let channels = self.scheme.channels();
        let materials = (0..ne)
            .map(|e| {
                let rho: Vec<f64> = (0..channels).map(|c| densities[c][e]).collect();
                self.scheme.interpolate(&rho)
            })
            .collect::<Result<Vec<_>>>()?;
        let youngs: Vec<f64> = materials.iter().map(|m| m.youngs).collect();
        let dens: Vec<f64> = materials.iter().map(|m| m.density).collect();
        let (stiffness, mass) = self.model.assemble(&youngs, &dens)?;
        Ok(DesignState { densities, materials, stiffness, mass })
    }

    /// The `nev` smallest eigenpairs of a design state.
    pub fn eigenpairs(&self, state: &DesignState, nev: usize) -> Result<EigenSet> {
        self.solver.solve(&state.stiffness, &state.mass, nev, &self.spec.eigen)
    }

    /// Solves for enough eigenpairs that every required cluster is complete.
    /// `hint` is the expected number of clustered eigenvalues.
    pub fn compute_spectrum(&self, state: &DesignState, hint: usize) -> Result<Spectrum> {
        let required = self.spec.required_clusters();
        let n_free = self.model.num_free();
        let mut nev = (hint.max(required) + self.spec.budget_pad).min(n_free);
        let mut solves = 0;
        loop {
            let eigs = self.solver.solve(&state.stiffness, &state.mass, nev, &self.spec.eigen)?;
            solves += 1;
            let mut clusters = cluster(&eigs.values, self.spec.cluster_tol)?;
            if nev == n_free {
                clusters.mark_exhaustive();
            }
            let enough = clusters.len() > required || (nev == n_free && clusters.len() >= required);
            if enough {
                clusters.truncate(required);
                return Ok(Spectrum { eigs, clusters, solves });
            }
            if solves > self.spec.max_extensions || nev == n_free {
                return Err(Error::PathologicalDegeneracy { solves, count: nev });
            }
            nev = (nev + self.spec.budget_pad).min(n_free);
        }
    }

    /// Sets the bound scaling from the cluster means at `x_reduced`.
    pub fn calibrate(&mut self, x_reduced: &[f64]) -> Result<Spectrum> {
        let state = self.design_state(x_reduced)?;
        let spec = self.compute_spectrum(&state, 0)?;
        let n = self.spec.n;
        let scale = match self.spec.kind {
            Formulation::Eigmax => vec![spec.clusters.mean(n - 1)],
            Formulation::Bandgap => vec![spec.clusters.mean(n - 1), spec.clusters.mean(n)],
        };
        self.set_scale(scale)?;
        Ok(spec)
    }

    fn split<'a>(&self, y: &'a [f64]) -> Result<(&'a [f64], &'a [f64])> {
        if y.len() != self.num_variables() {
            return Err(Error::Shape { expected: self.num_variables(), got: y.len() });
        }
        Ok(y.split_at(self.num_bounds()))
    }

    /// Eigen constraint values from cluster means (physical bounds `beta`).
    fn eigen_constraints(&self, beta: &[f64], means: &[f64]) -> Vec<f64> {
        let (n, m) = (self.spec.n, self.spec.m);
        match self.spec.kind {
            Formulation::Eigmax => (0..m).map(|i| beta[0] / means[n - 1 + i] - 1.0).collect(),
            Formulation::Bandgap => (0..n)
                .map(|k| 1.0 - beta[0] / means[k])
                .chain((0..m).map(|j| beta[1] / means[n + j] - 1.0))
                .collect(),
        }
    }

    /// Full evaluation with all gradients.
    pub fn evaluate(&self, y: &[f64], hint: usize) -> Result<Evaluation> {
        let (bt, x) = self.split(y)?;
        let beta: Vec<f64> = bt.iter().zip(&self.scale).map(|(b, s)| b * s).collect();
        let state = self.design_state(x)?;
        let spectrum = self.compute_spectrum(&state, hint)?;
        let means = spectrum.clusters.means().to_vec();
        let nb = self.num_bounds();
        let nv = self.num_variables();

        let mut constraints = self.eigen_constraints(&beta, &means);
        let mut jacobian = Vec::with_capacity(self.num_constraints());
        let (n, m) = (self.spec.n, self.spec.m);
        let mean_grad = |q: usize| -> Result<Vec<f64>> {
            let g = cluster_mean_sensitivity(&self.model, &state.materials, &spectrum.eigs, &spectrum.clusters, q)?;
            self.map.pull_back(&g)
        };
        let mut push_row = |bound: usize, d_beta: f64, scale_x: f64, gx: Vec<f64>| {
            let mut row = vec![0.0; nv];
            row[bound] = d_beta;
            for (r, g) in row[nb..].iter_mut().zip(gx) {
                *r = scale_x * g;
            }
            jacobian.push(row);
        };
        match self.spec.kind {
            Formulation::Eigmax => {
                for i in 0..m {
                    let q = n - 1 + i;
                    let lm = means[q];
                    push_row(0, self.scale[0] / lm, -beta[0] / (lm * lm), mean_grad(q)?);
                }
            }
            Formulation::Bandgap => {
                for k in 0..n {
                    let lm = means[k];
                    push_row(0, -self.scale[0] / lm, beta[0] / (lm * lm), mean_grad(k)?);
                }
                for j in 0..m {
                    let lm = means[n + j];
                    push_row(1, self.scale[1] / lm, -beta[1] / (lm * lm), mean_grad(n + j)?);
                }
            }
        }

        let (vals, grads) = self.volume_constraints(&state.densities)?;
        constraints.extend(vals);
        for g in grads {
            let mut row = vec![0.0; nb];
            row.extend(self.map.pull_back(&g)?);
            jacobian.push(row);
        }

        let (objective, mma_objective, mut mma_gradient) = match self.spec.kind {
            Formulation::Eigmax => (beta[0], -bt[0], vec![-1.0]),
            Formulation::Bandgap => {
                let r = self.scale[1] / self.scale[0];
                (beta[1] - beta[0], bt[0] - r * bt[1], vec![1.0, -r])
            }
        };
        mma_gradient.resize(nv, 0.0);
        Ok(Evaluation { objective, mma_objective, mma_gradient, constraints, jacobian, spectrum, densities: state.densities })
    }

    /// Constraint values only, with cluster index sets frozen to `reference`.
    /// Used by finite-difference checks where clustering must not change.
    pub fn constraint_values(&self, y: &[f64], reference: &Spectrum) -> Result<Vec<f64>> {
        let (bt, x) = self.split(y)?;
        let beta: Vec<f64> = bt.iter().zip(&self.scale).map(|(b, s)| b * s).collect();
        let state = self.design_state(x)?;
        let nev = reference.clustered_count();
        let eigs = self.eigenpairs(&state, nev)?;
        let means: Vec<f64> = (0..reference.clusters.len())
            .map(|q| {
                let r = reference.clusters.members(q);
                eigs.values[r.clone()].iter().sum::<f64>() / r.len() as f64
            })
            .collect();
        let mut out = self.eigen_constraints(&beta, &means);
        out.extend(self.volume_constraints(&state.densities)?.0);
        Ok(out)
    }

    /// `f(bt, x_b) - f(bt, x_a)` with cluster index sets frozen to `reference`.
    ///
    /// Cluster sums are differenced through `sum(lambda_b - lambda_a) = tr(C^-1 N)`
    /// with `C = Phi_a^T M_b Phi_b` and `N = Phi_a^T dK Phi_b - Lambda_a Phi_a^T dM Phi_b`,
    /// where `dK`, `dM` collect only the elements whose coefficients changed. This
    /// keeps the difference accurate when `x_a` and `x_b` are close.
    pub fn constraint_difference(&self, bt: &[f64], x_a: &[f64], x_b: &[f64], reference: &Spectrum) -> Result<Vec<f64>> {
        if bt.len() != self.num_bounds() {
            return Err(Error::Shape { expected: self.num_bounds(), got: bt.len() });
        }
        let beta: Vec<f64> = bt.iter().zip(&self.scale).map(|(b, s)| b * s).collect();
        let (sa, sb) = (self.design_state(x_a)?, self.design_state(x_b)?);
        let nev = reference.clustered_count();
        let (ea, eb) = (self.eigenpairs(&sa, nev)?, self.eigenpairs(&sb, nev)?);
        let changed: Vec<(usize, f64, f64)> = sa
            .materials
            .iter()
            .zip(&sb.materials)
            .enumerate()
            .filter_map(|(e, (a, b))| {
                let (dk, dm) = (b.youngs - a.youngs, b.density - a.density);
                (dk != 0.0 || dm != 0.0).then_some((e, dk, dm))
            })
            .collect();
        let cross = |u: &[f64], v: &[f64]| -> (f64, f64) {
            changed.iter().fold((0.0, 0.0), |(k, m), &(e, dk, dm)| {
                let unit = self.model.unit(e);
                let (pu, pv) = (self.model.gather(e, u), self.model.gather(e, v));
                (k + dk * pu.dot(&(&unit.stiffness * &pv)), m + dm * pu.dot(&(&unit.mass * &pv)))
            })
        };
        let clusters = reference.clusters.len();
        let mut means_a = Vec::with_capacity(clusters);
        let mut means_b = Vec::with_capacity(clusters);
        let mut d_means = Vec::with_capacity(clusters);
        for q in 0..clusters {
            let r = reference.clusters.members(q);
            let s = r.len();
            let mut c = DMatrix::zeros(s, s);
            let mut n = DMatrix::zeros(s, s);
            for (i, a) in r.clone().enumerate() {
                for (j, b) in r.clone().enumerate() {
                    let mv = sb.mass.mul_vec(&eb.vectors[b]);
                    c[(i, j)] = ea.vectors[a].iter().zip(&mv).map(|(p, q)| p * q).sum::<f64>();
                    let (dk, dm) = cross(&ea.vectors[a], &eb.vectors[b]);
                    n[(i, j)] = dk - ea.values[a] * dm;
                }
            }
            let c_inv = c.try_inverse().ok_or_else(|| Error::Parameter(format!("cluster {q}: eigenspaces at the two points are orthogonal")))?;
            let mean = |v: &[f64]| v[r.clone()].iter().sum::<f64>() / s as f64;
            means_a.push(mean(&ea.values));
            means_b.push(mean(&eb.values));
            d_means.push((c_inv * n).trace() / s as f64);
        }
        let (n, m) = (self.spec.n, self.spec.m);
        let recip = |b: f64, q: usize| -b * d_means[q] / (means_a[q] * means_b[q]);
        let mut out: Vec<f64> = match self.spec.kind {
            Formulation::Eigmax => (0..m).map(|i| recip(beta[0], n - 1 + i)).collect(),
            Formulation::Bandgap => (0..n).map(|k| -recip(beta[0], k)).chain((0..m).map(|j| recip(beta[1], n + j))).collect(),
        };
        let (va, vb) = (self.volume_constraints(&sa.densities)?.0, self.volume_constraints(&sb.densities)?.0);
        out.extend(vb.iter().zip(&va).map(|(b, a)| b - a));
        Ok(out)
    }

    /// Volume constraint values and their gradients `[constraint][channel][element]`.
    pub fn volume_constraints(&self, rho: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<Vec<Vec<f64>>>)> {
        let channels = self.scheme.channels();
        if rho.len() != channels {
            return Err(Error::Shape { expected: channels, got: rho.len() });
        }
        volume_constraints(self.model.mesh().volumes(), rho, &self.spec.volumes)
    }

    /// Per-phase volume fractions from the volume constraint values.
    pub fn report_fractions(&self, volume_values: &[f64]) -> Vec<f64> {
        report_fractions(self.scheme.kind(), &self.spec.volumes, volume_values)
    }
}

/// Nested product volume constraints: `sum(rho_1 ... rho_k v) / V - V_k` for each `k`.
pub fn volume_constraints(volumes: &[f64], rho: &[Vec<f64>], thresholds: &[f64]) -> Result<(Vec<f64>, Vec<Vec<Vec<f64>>>)> {
    let ne = volumes.len();
    if let Some(r) = rho.iter().find(|r| r.len() != ne) {
        return Err(Error::Shape { expected: ne, got: r.len() });
    }
    let total: f64 = volumes.iter().sum();
    let mut vals = Vec::with_capacity(rho.len());
    let mut grads = Vec::with_capacity(rho.len());
    for k in 0..rho.len() {
        let mut value = 0.0;
        let mut g = vec![vec![0.0; ne]; rho.len()];
        for e in 0..ne {
            let w = volumes[e] / total;
            let prod: f64 = (0..=k).map(|c| rho[c][e]).product();
            value += prod * w;
            for c in 0..=k {
                g[c][e] = w * (0..=k).filter(|&o| o != c).map(|o| rho[o][e]).product::<f64>();
            }
        }
        vals.push(value - thresholds[k]);
        grads.push(g);
    }
    Ok((vals, grads))
}

/// Realized phase fractions, stiffest phase first.
pub fn report_fractions(kind: SchemeKind, v: &[f64], f: &[f64]) -> Vec<f64> {
    match kind {
        SchemeKind::SolidVoid | SchemeKind::BiMaterial => vec![v[0] + f[0]],
        SchemeKind::BiVoid => {
            let vr = v[1] + f[1];
            let vg = v[0] - vr + f[0];
            vec![vr, vg]
        }
        SchemeKind::TriVoid => {
            let vr = v[2] + f[2];
            let vg = v[1] - vr + f[1];
            let vb = v[0] - vr - vg + f[0];
            vec![vr, vg, vb]
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn required_cluster_counts() {
        let mut s = ProblemSpec::new(Formulation::Eigmax, 1, vec![0.5]);
        assert_eq!(s.required_clusters(), 10);
        s.n = 2;
        assert_eq!(s.required_clusters(), 11);
        s.kind = Formulation::Bandgap;
        assert_eq!(s.required_clusters(), 12);
    }

    #[test]
    fn spec_validation() {
        assert!(ProblemSpec::new(Formulation::Eigmax, 1, vec![0.5, 0.6]).validate(2).is_err());
        assert!(ProblemSpec::new(Formulation::Eigmax, 1, vec![0.5]).validate(2).is_err());
        assert!(ProblemSpec::new(Formulation::Eigmax, 0, vec![0.5]).validate(1).is_err());
        assert!(ProblemSpec::new(Formulation::Eigmax, 1, vec![1.5]).validate(1).is_err());
        assert!(ProblemSpec::new(Formulation::Eigmax, 1, vec![0.6, 0.3, 0.1]).validate(3).is_ok());
    }

    #[test]
    fn uniform_fields_meet_thresholds() {
        let vols = vec![0.25; 4];
        let (v, _) = volume_constraints(&vols, &[vec![0.4; 4]], &[0.4]).unwrap();
        assert!(v[0].abs() < 1e-15);
        let (v, _) = volume_constraints(&vols, &[vec![0.6; 4], vec![0.5; 4]], &[0.6, 0.3]).unwrap();
        assert!(v.iter().all(|x| x.abs() < 1e-15));
    }

    #[test]
    fn product_gradients_match_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let vols: Vec<f64> = (0..6).map(|_| rng.random_range(0.5..1.5)).collect();
        let rho: Vec<Vec<f64>> = (0..3).map(|_| (0..6).map(|_| rng.random_range(0.1..0.9)).collect()).collect();
        let th = [0.5, 0.3, 0.1];
        let (v0, g) = volume_constraints(&vols, &rho, &th).unwrap();
        let h = 1e-6;
        for c in 0..3 {
            for e in 0..6 {
                let mut up = rho.clone();
                up[c][e] += h;
                let mut dn = rho.clone();
                dn[c][e] -= h;
                let (vu, _) = volume_constraints(&vols, &up, &th).unwrap();
                let (vd, _) = volume_constraints(&vols, &dn, &th).unwrap();
                for k in 0..3 {
                    let fd = (vu[k] - vd[k]) / (2.0 * h);
                    assert!((fd - g[k][c][e]).abs() <= 1e-8, "{k} {c} {e}");
                }
            }
        }
        assert_eq!(v0.len(), 3);
    }

    #[test]
    fn fractions() {
        assert_eq!(report_fractions(SchemeKind::BiVoid, &[0.5, 0.2], &[0.0, 0.0]), vec![0.2, 0.3]);
        let t = report_fractions(SchemeKind::TriVoid, &[0.6, 0.4, 0.1], &[0.0, 0.0, 0.0]);
        assert!((t[0] - 0.1).abs() < 1e-15 && (t[1] - 0.3).abs() < 1e-15 && (t[2] - 0.2).abs() < 1e-15);
        let f = [-0.02, -0.01, -0.005];
        let t = report_fractions(SchemeKind::TriVoid, &[0.6, 0.4, 0.1], &f);
        assert!((t.iter().sum::<f64>() - (0.6 + f[0])).abs() < 1e-15);
        let b = report_fractions(SchemeKind::BiVoid, &[0.6, 0.4], &f[..2]);
        assert!((b.iter().sum::<f64>() - (0.6 + f[0])).abs() < 1e-15);
    }
}
