use std::time::Instant;

use crate::error::Result;
use crate::optimize::mma::{Mma, MmaParams};
use crate::optimize::problem::{BoundProblem, Evaluation};

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub objective: f64,
    pub constraints: Vec<f64>,
    /// `sqrt(lambda)` for every eigenvalue in the required clusters.
    pub omegas: Vec<f64>,
    pub cluster_sizes: Vec<usize>,
    pub fractions: Vec<f64>,
    pub wall_ms: f64,
}

impl IterationRecord {
    fn from_evaluation(problem: &BoundProblem, iteration: usize, eval: &Evaluation, wall_ms: f64) -> Self {
        let clusters = &eval.spectrum.clusters;
        let count = clusters.count_through(clusters.len());
        let nvol = problem.scheme().channels();
        let vol = &eval.constraints[eval.constraints.len() - nvol..];
        Self {
            iteration,
            objective: eval.objective,
            constraints: eval.constraints.clone(),
            omegas: eval.spectrum.eigs.values[..count].iter().map(|l| l.sqrt()).collect(),
            cluster_sizes: clusters.sizes(),
            fractions: problem.report_fractions(vol),
            wall_ms,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub records: Vec<IterationRecord>,
    /// Final optimization vector `[beta~, x_reduced]`.
    pub point: Vec<f64>,
    pub densities: Vec<Vec<f64>>,
}

/// Called after each evaluation with the record, the evaluation and the current point.
pub type Observer<'a> = dyn FnMut(&IterationRecord, &Evaluation, &[f64]) -> Result<()> + 'a;

/// Runs `iterations` MMA updates from the uniform initial design.
/// Iteration 0 is the initial evaluation, so `iterations + 1` records are produced.
pub fn run(problem: &mut BoundProblem, iterations: usize, mma: MmaParams, observer: &mut Observer<'_>) -> Result<RunOutput> {
    let start = Instant::now();
    let x0 = problem.initial_design();
    let first = problem.calibrate(&x0)?;
    let mut hint = first.clustered_count();
    let mut y = problem.initial_point();
    let (lo, hi) = problem.bounds();
    let mut opt = Mma::new(lo, hi, mma)?;
    let mut records = Vec::with_capacity(iterations + 1);
    let mut last = None;
    for it in 0..=iterations {
        let eval = problem.evaluate(&y, hint)?;
        hint = eval.spectrum.clustered_count();
        let rec = IterationRecord::from_evaluation(problem, it, &eval, start.elapsed().as_secs_f64() * 1e3);
        observer(&rec, &eval, &y)?;
        records.push(rec);
        if it < iterations {
            y = opt.step(&y, &eval.mma_gradient, &eval.constraints, &eval.jacobian)?;
        }
        last = Some(eval);
    }
    let densities = last.map(|e| e.densities).unwrap_or_default();
    Ok(RunOutput { records, point: y, densities })
}
