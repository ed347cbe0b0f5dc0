//! Central-difference gradient oracle, analytic-vs-numeric reports, and the
//! differentiability study on a warmed-up square block.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{FeModel, PlaneModel};
use crate::filter::{orbit_expand, DensityMap, FilterOperator};
use crate::material::{MaterialScheme, SchemeParams};
use crate::mesh::{Mesh, OrbitMap, Support, Symmetry};
use crate::optimize::{run, BoundProblem, Formulation, MmaParams, ProblemSpec, Spectrum};
use crate::spectrum::{eigenpair_gradient, ks_stable, pnorm_stable};

pub const DEFAULT_STEP: f64 = 1e-8;
pub const MATCH_TOL: f64 = 1e-4;
pub const MISMATCH_TOL: f64 = 1e-3;

/// Numeric Jacobian `[variable][output]` plus which coordinates fell back to one-sided differences.
#[derive(Debug, Clone, PartialEq)]
pub struct CdmJacobian {
    pub columns: Vec<Vec<f64>>,
    pub one_sided: Vec<bool>,
}

impl CdmJacobian {
    /// Column-major to row view: the gradient of output `k`.
    pub fn gradient(&self, k: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[k]).collect()
    }
}

/// Central differences of a vector-valued function, one coordinate per task.
/// Steps that would leave `[lower, upper]` switch to one-sided differences.
pub fn cdm_jacobian<F>(f: F, x: &[f64], h: f64, lower: Option<&[f64]>, upper: Option<&[f64]>) -> Result<CdmJacobian>
where
    F: Fn(&[f64]) -> Result<Vec<f64>> + Sync,
{
    if !(h > 0.0) {
        return Err(Error::Parameter(format!("difference step must be positive, got {h}")));
    }
    let n = x.len();
    for b in [lower, upper].into_iter().flatten() {
        if b.len() != n {
            return Err(Error::Shape { expected: n, got: b.len() });
        }
    }
    let fits_up = |i: usize| upper.is_none_or(|u| x[i] + h <= u[i]);
    let fits_dn = |i: usize| lower.is_none_or(|l| x[i] - h >= l[i]);
    let base = if (0..n).any(|i| !fits_up(i) || !fits_dn(i)) { Some(f(x)?) } else { None };
    let at = |i: usize, delta: f64| -> Result<Vec<f64>> {
        let mut p = x.to_vec();
        p[i] += delta;
        f(&p).map_err(|e| Error::Perturbation { index: i, source: Box::new(e) })
    };
    let results: Vec<(Vec<f64>, bool)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let (up, dn) = (fits_up(i), fits_dn(i));
            let col = match (up, dn, base.as_ref()) {
                (true, true, _) => {
                    let (a, b) = (at(i, h)?, at(i, -h)?);
                    a.iter().zip(&b).map(|(p, q)| (p - q) / (2.0 * h)).collect()
                }
                (true, false, Some(f0)) => at(i, h)?.iter().zip(f0).map(|(p, q)| (p - q) / h).collect(),
                (false, true, Some(f0)) => f0.iter().zip(&at(i, -h)?).map(|(p, q)| (p - q) / h).collect(),
                _ => return Err(Error::Parameter(format!("coordinate {i}: box narrower than the difference step"))),
            };
            Ok((col, !(up && dn)))
        })
        .collect::<Result<_>>()?;
    let (columns, one_sided) = results.into_iter().unzip();
    Ok(CdmJacobian { columns, one_sided })
}

/// Scalar convenience wrapper over [`cdm_jacobian`].
pub fn cdm_gradient<F>(f: F, x: &[f64], h: f64, lower: Option<&[f64]>, upper: Option<&[f64]>) -> Result<(Vec<f64>, Vec<bool>)>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    let j = cdm_jacobian(|p| f(p).map(|v| vec![v]), x, h, lower, upper)?;
    Ok((j.gradient(0), j.one_sided))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VariableSpace {
    /// Every element's design variable, ignoring symmetry.
    All,
    /// One variable per symmetry orbit.
    Symmetric,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Match,
    Mismatch,
    /// Between the match and mismatch thresholds.
    Inconclusive,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Match => "match",
            Verdict::Mismatch => "mismatch",
            Verdict::Inconclusive => "inconclusive",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityReport {
    pub quantity: String,
    pub space: VariableSpace,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub rel_error: Vec<f64>,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub verdict: Verdict,
}

/// Elementwise relative errors with denominator `max(|a|, 1e-12 ||a||_inf)`.
/// Entries with `|a| <= ignore_below * ||a||_inf` are reported but left out of the maximum.
pub fn compare(
    quantity: &str,
    space: VariableSpace,
    analytic: &[f64],
    numeric: &[f64],
    tolerance: f64,
    mismatch: f64,
    ignore_below: f64,
) -> Result<SensitivityReport> {
    if analytic.len() != numeric.len() {
        return Err(Error::Shape { expected: analytic.len(), got: numeric.len() });
    }
    let scale = analytic.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let floor = 1e-12 * scale;
    let rel_error: Vec<f64> = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| {
            let d = (a - n).abs();
            if d == 0.0 {
                0.0
            } else {
                d / a.abs().max(floor)
            }
        })
        .collect();
    let max_rel_error = rel_error
        .iter()
        .zip(analytic)
        .filter(|(_, a)| a.abs() > ignore_below * scale || ignore_below == 0.0)
        .fold(0.0f64, |m, (r, _)| m.max(*r));
    let verdict = if max_rel_error <= tolerance {
        Verdict::Match
    } else if max_rel_error >= mismatch {
        Verdict::Mismatch
    } else {
        Verdict::Inconclusive
    };
    Ok(SensitivityReport {
        quantity: quantity.to_string(),
        space,
        analytic: analytic.to_vec(),
        numeric: numeric.to_vec(),
        rel_error,
        max_rel_error,
        tolerance,
        verdict,
    })
}

/// One report per constraint of `problem` at `y`, against CDM with frozen cluster index sets.
pub fn constraint_reports(problem: &BoundProblem, y: &[f64], opts: &StudyOptions) -> Result<Vec<SensitivityReport>> {
    let eval = problem.evaluate(y, 0)?;
    let jac = constraint_cdm(problem, y, opts.step, &eval.spectrum)?;
    (0..problem.num_constraints())
        .map(|k| {
            let name = format!("f{}", k + 1);
            compare(&name, VariableSpace::Symmetric, &eval.jacobian[k], &jac.gradient(k), opts.tolerance, opts.mismatch, 0.0)
        })
        .collect()
}

/// Central-difference Jacobian of the constraints with clusters frozen to `reference`.
/// Bound columns difference the constraint values directly; design columns use
/// [`BoundProblem::constraint_difference`] for the numerator.
pub fn constraint_cdm(problem: &BoundProblem, y: &[f64], h: f64, reference: &Spectrum) -> Result<CdmJacobian> {
    if !(h > 0.0) {
        return Err(Error::Parameter(format!("difference step must be positive, got {h}")));
    }
    let nb = problem.num_bounds();
    let (lo, hi) = problem.bounds();
    if y.len() != lo.len() {
        return Err(Error::Shape { expected: lo.len(), got: y.len() });
    }
    let results: Vec<(Vec<f64>, bool)> = (0..y.len())
        .into_par_iter()
        .map(|i| {
            let (up, dn) = (y[i] + h <= hi[i], y[i] - h >= lo[i]);
            let (a, b) = match (up, dn) {
                (true, true) => (y[i] - h, y[i] + h),
                (true, false) => (y[i], y[i] + h),
                (false, true) => (y[i] - h, y[i]),
                _ => return Err(Error::Parameter(format!("coordinate {i}: box narrower than the difference step"))),
            };
            let point = |v: f64| {
                let mut p = y.to_vec();
                p[i] = v;
                p
            };
            let (pa, pb) = (point(a), point(b));
            let diff = if i < nb {
                let (fa, fb) = (problem.constraint_values(&pa, reference)?, problem.constraint_values(&pb, reference)?);
                fb.iter().zip(&fa).map(|(p, q)| p - q).collect()
            } else {
                problem.constraint_difference(&y[..nb], &pa[nb..], &pb[nb..], reference)?
            };
            let col = diff.iter().map(|d| d / (b - a)).collect();
            Ok((col, !(up && dn)))
        })
        .collect::<Result<_>>()?;
    let (columns, one_sided) = results.into_iter().unzip();
    Ok(CdmJacobian { columns, one_sided })
}

/// A seeded point inside the box: bound variables in `[0.5, 0.95]`,
/// design variables in `[0.1, 0.9]`.
pub fn random_point(problem: &BoundProblem, seed: u64) -> Vec<f64> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let nb = problem.num_bounds();
    (0..problem.num_variables())
        .map(|i| if i < nb { rng.random_range(0.5..0.95) } else { rng.random_range(0.1..0.9) })
        .collect()
}

/// Settings of the differentiability study that do not depend on the problem.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyOptions {
    pub warmup: usize,
    pub spaces: Vec<VariableSpace>,
    pub step: f64,
    pub tolerance: f64,
    pub mismatch: f64,
    pub p: f64,
    pub q: f64,
    /// Clusters pooled into the p-norm and KS aggregates.
    pub aggregate_clusters: usize,
    pub mma: MmaParams,
}

impl Default for StudyOptions {
    fn default() -> Self {
        Self {
            warmup: 10,
            spaces: vec![VariableSpace::All, VariableSpace::Symmetric],
            step: DEFAULT_STEP,
            tolerance: MATCH_TOL,
            mismatch: MISMATCH_TOL,
            p: 10.0,
            q: 10.0,
            aggregate_clusters: 8,
            mma: MmaParams::default(),
        }
    }
}

/// Differentiability study on a corner-supported square block.
#[derive(Debug, Clone, PartialEq)]
pub struct StudySpec {
    pub cells: usize,
    pub side: f64,
    pub filter_radius: f64,
    pub volume: f64,
    pub youngs: f64,
    pub density: f64,
    pub poisson: f64,
    pub symmetry: Symmetry,
    pub m: usize,
    pub cluster_tol: f64,
    pub options: StudyOptions,
}

impl Default for StudySpec {
    fn default() -> Self {
        Self {
            cells: 20,
            side: 1.0,
            filter_radius: 0.6,
            volume: 0.5,
            youngs: 1.0,
            density: 1.0,
            poisson: 0.3,
            symmetry: Symmetry::Half,
            m: 10,
            cluster_tol: crate::spectrum::DEFAULT_CLUSTER_TOL,
            options: StudyOptions::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct StudyOutput {
    pub reports: Vec<SensitivityReport>,
    pub eigenvalues: Vec<f64>,
    pub cluster_sizes: Vec<usize>,
    /// Full-mesh design after warmup.
    pub design: Vec<f64>,
}

/// What each study quantity reads from the eigenvalues.
enum Quantity {
    Eigenvalue(usize),
    Mean(Vec<usize>),
    PNorm(Vec<usize>),
    Ks(Vec<usize>),
}

impl Quantity {
    fn value(&self, values: &[f64], p: f64, q: f64) -> Result<f64> {
        let pick = |idx: &[usize]| idx.iter().map(|&i| values[i]).collect::<Vec<_>>();
        Ok(match self {
            Quantity::Eigenvalue(i) => values[*i],
            Quantity::Mean(idx) => pick(idx).iter().sum::<f64>() / idx.len() as f64,
            Quantity::PNorm(idx) => pnorm_stable(&pick(idx), p, None)?.0,
            Quantity::Ks(idx) => ks_stable(&pick(idx), q, None)?.0,
        })
    }

    /// Weights on individual eigenvalue gradients.
    fn weights(&self, values: &[f64], p: f64, q: f64) -> Result<Vec<(usize, f64)>> {
        let pick = |idx: &[usize]| idx.iter().map(|&i| values[i]).collect::<Vec<_>>();
        Ok(match self {
            Quantity::Eigenvalue(i) => vec![(*i, 1.0)],
            Quantity::Mean(idx) => idx.iter().map(|&i| (i, 1.0 / idx.len() as f64)).collect(),
            Quantity::PNorm(idx) => idx.iter().copied().zip(pnorm_stable(&pick(idx), p, None)?.1).collect(),
            Quantity::Ks(idx) => idx.iter().copied().zip(ks_stable(&pick(idx), q, None)?.1).collect(),
        })
    }
}

fn study_problem(spec: &StudySpec) -> Result<BoundProblem> {
    let mesh = Mesh::build_grid(2, &[spec.cells, spec.cells], &[spec.side, spec.side])?.apply_boundary(&[Support::corners()])?;
    let orbits = mesh.compute_orbits(spec.symmetry)?;
    let filter = FilterOperator::build(&mesh, spec.filter_radius)?;
    let map = DensityMap::new(orbits, filter, 1)?;
    let mut params = SchemeParams::solid_void(spec.youngs, spec.density, 2);
    params.poisson = spec.poisson;
    let scheme = MaterialScheme::new(params)?;
    let model = FeModel::new(mesh, spec.poisson, PlaneModel::Strain)?;
    let mut pspec = ProblemSpec::new(Formulation::Eigmax, 1, vec![spec.volume]);
    pspec.m = spec.m;
    pspec.cluster_tol = spec.cluster_tol;
    BoundProblem::new(pspec, model, scheme, map)
}

/// Runs [`study`] on the block described by `spec`.
pub fn run_study(spec: &StudySpec) -> Result<StudyOutput> {
    let mut problem = study_problem(spec)?;
    study(&mut problem, &spec.options)
}

/// Warms up `problem`, freezes the design, and compares analytic and CDM
/// gradients of the repeated eigenvalues, the cluster means and the p-norm/KS
/// aggregates in each requested variable space.
pub fn study(problem: &mut BoundProblem, spec: &StudyOptions) -> Result<StudyOutput> {
    if problem.scheme().channels() != 1 {
        return Err(Error::Parameter("the differentiability study needs a single design channel".into()));
    }
    let warm = run(problem, spec.warmup, spec.mma.clone(), &mut |_, _, _| Ok(()))?;
    let x_reduced = warm.point[problem.num_bounds()..].to_vec();
    let state = problem.design_state(&x_reduced)?;
    let base: Spectrum = problem.compute_spectrum(&state, 0)?;
    let clusters = &base.clusters;
    let values = base.eigs.values.clone();

    let mut quantities: Vec<(String, Quantity)> = Vec::new();
    for q in 0..clusters.len() {
        if clusters.size(q) > 1 {
            for i in clusters.members(q) {
                quantities.push((format!("lambda_{}", i + 1), Quantity::Eigenvalue(i)));
            }
            quantities.push((format!("mean_{}", q + 1), Quantity::Mean(clusters.members(q).collect())));
        }
    }
    let pooled = spec.aggregate_clusters.min(clusters.len());
    let complete: Vec<usize> = (0..clusters.count_through(pooled)).collect();
    quantities.push(("pnorm_complete".into(), Quantity::PNorm(complete.clone())));
    quantities.push(("ks_complete".into(), Quantity::Ks(complete)));
    if let Some(last_multi) = (0..pooled).rev().find(|&q| clusters.size(q) > 1) {
        let incomplete: Vec<usize> = (0..clusters.members(last_multi).end - 1).collect();
        quantities.push(("pnorm_incomplete".into(), Quantity::PNorm(incomplete.clone())));
        quantities.push(("ks_incomplete".into(), Quantity::Ks(incomplete)));
    }

    let eig_grads: Vec<Vec<f64>> = (0..base.clustered_count())
        .map(|i| eigenpair_gradient(problem.model(), &state.materials, values[i], &base.eigs.vectors[i]).map(|g| g[0].clone()))
        .collect::<Result<_>>()?;
    let nev = base.clustered_count();

    let design = orbit_expand(problem.map().orbits(), &x_reduced)?;
    let mut reports = Vec::new();
    for &space in &spec.spaces {
        let map = match space {
            VariableSpace::Symmetric => problem.map().clone(),
            VariableSpace::All => {
                DensityMap::new(OrbitMap::identity(design.len()), problem.map().filter().clone(), 1)?
            }
        };
        let x0 = match space {
            VariableSpace::Symmetric => x_reduced.clone(),
            VariableSpace::All => design.clone(),
        };
        let f = |x: &[f64]| -> Result<Vec<f64>> {
            let st = problem.state_from_densities(map.densities(x)?)?;
            let eigs = problem.eigenpairs(&st, nev)?;
            quantities.iter().map(|(_, qt)| qt.value(&eigs.values, spec.p, spec.q)).collect()
        };
        let lo = vec![problem.scheme().lower_bound(0); x0.len()];
        let hi = vec![1.0; x0.len()];
        let jac = cdm_jacobian(f, &x0, spec.step, Some(&lo), Some(&hi))?;
        for (k, (name, qt)) in quantities.iter().enumerate() {
            let mut g_rho = vec![0.0; design.len()];
            for (i, w) in qt.weights(&values, spec.p, spec.q)? {
                for (a, b) in g_rho.iter_mut().zip(&eig_grads[i]) {
                    *a += w * b;
                }
            }
            let analytic = map.pull_back(&[g_rho])?;
            reports.push(compare(name, space, &analytic, &jac.gradient(k), spec.tolerance, spec.mismatch, 0.0)?);
        }
    }
    Ok(StudyOutput { reports, eigenvalues: values[..nev].to_vec(), cluster_sizes: clusters.sizes(), design })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_derivative() {
        let (g, flags) = cdm_gradient(|x| Ok(x[0] * x[0]), &[1.0], 1e-8, None, None).unwrap();
        assert!((g[0] - 2.0).abs() <= 1e-6);
        assert!(!flags[0]);
    }

    #[test]
    fn constant_function() {
        let (g, _) = cdm_gradient(|_| Ok(3.5), &[0.2, 0.4, 0.9], 1e-8, None, None).unwrap();
        assert!(g.iter().all(|v| v.abs() <= 1e-6 * 3.5));
    }

    #[test]
    fn one_sided_at_bounds() {
        let lo = [0.0, 0.0];
        let hi = [1.0, 1.0];
        let (g, flags) = cdm_gradient(|x| Ok(x[0] * 3.0 + x[1] * x[1]), &[0.0, 1.0], 1e-6, Some(&lo), Some(&hi)).unwrap();
        assert_eq!(flags, vec![true, true]);
        assert!((g[0] - 3.0).abs() < 1e-8);
        assert!((g[1] - 2.0).abs() < 1e-5);
    }

    #[test]
    fn failures_name_the_coordinate() {
        let r = cdm_gradient(|x| if x[1] > 0.5 { Err(Error::Solver("boom".into())) } else { Ok(x[0]) }, &[0.0, 0.5], 1e-3, None, None);
        assert!(matches!(r, Err(Error::Perturbation { index: 1, .. })));
    }

    #[test]
    fn compare_verdicts() {
        let r = compare("a", VariableSpace::All, &[1.0, 2.0], &[1.0, 2.0], 1e-4, 1e-3, 0.0).unwrap();
        assert_eq!((r.max_rel_error, r.verdict), (0.0, Verdict::Match));
        let r = compare("z", VariableSpace::All, &[0.0, 0.0], &[0.0, 0.0], 1e-4, 1e-3, 0.0).unwrap();
        assert_eq!(r.verdict, Verdict::Match);
        let r = compare("b", VariableSpace::All, &[1.0, 2.0], &[1.1, 2.0], 1e-4, 1e-3, 0.0).unwrap();
        assert_eq!(r.verdict, Verdict::Mismatch);
        assert!((r.max_rel_error - 0.1).abs() < 1e-12);
        assert!(compare("c", VariableSpace::All, &[1.0], &[1.0, 2.0], 1e-4, 1e-3, 0.0).is_err());
    }

    #[test]
    fn constraint_difference_equals_plain_difference() {
        let spec = StudySpec { cells: 6, filter_radius: 0.3, m: 4, symmetry: Symmetry::Eighth, ..StudySpec::default() };
        let mut problem = study_problem(&spec).unwrap();
        problem.calibrate(&problem.initial_design()).unwrap();
        let y = random_point(&problem, 7);
        let reference = problem.evaluate(&y, 0).unwrap().spectrum;
        assert!((0..reference.clusters.len()).any(|q| reference.clusters.members(q).len() > 1));
        let nb = problem.num_bounds();
        for i in [0, 3, 5] {
            let mut xb = y[nb..].to_vec();
            xb[i] += 1e-3;
            let mut yb = y[..nb].to_vec();
            yb.extend(&xb);
            let got = problem.constraint_difference(&y[..nb], &y[nb..], &xb, &reference).unwrap();
            let (fa, fb) = (problem.constraint_values(&y, &reference).unwrap(), problem.constraint_values(&yb, &reference).unwrap());
            for (g, (b, a)) in got.iter().zip(fb.iter().zip(&fa)) {
                assert!((g - (b - a)).abs() <= 1e-13, "{i}: {g} vs {}", b - a);
            }
        }
    }

    #[test]
    fn small_block_cluster_mean_matches() {
        let spec = StudySpec {
            cells: 4,
            filter_radius: 0.3,
            m: 4,
            options: StudyOptions {
                warmup: 2,
                aggregate_clusters: 4,
                spaces: vec![VariableSpace::Symmetric],
                ..StudyOptions::default()
            },
            ..StudySpec::default()
        };
        let out = run_study(&spec).unwrap();
        let means: Vec<_> = out.reports.iter().filter(|r| r.quantity.starts_with("mean")).collect();
        assert!(!means.is_empty(), "{:?}", out.cluster_sizes);
        for r in means {
            assert!(r.max_rel_error <= 1e-5, "{} {}", r.quantity, r.max_rel_error);
        }
    }
}
