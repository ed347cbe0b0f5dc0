//! The `optimize`, `eig` and `verify` jobs and the files they write.

use std::path::Path;

use crate::config::{JobConfig, VerifyMode};
use crate::eigen::EigenSet;
use crate::error::Result;
use crate::optimize::{run, IterationRecord, RunOutput};
use crate::output::{fmt_f64, numbered, push_values, OutputDir};
use crate::spectrum::cluster;
use crate::verify::{constraint_reports, random_point, study, SensitivityReport, StudyOutput};

/// Runs the configured optimization and writes `history.csv`, `eigs.csv`,
/// `clusters.csv`, `timing.csv`, density snapshots and, for multi-phase
/// schemes, `fractions.csv`. Only `timing.csv` depends on wall-clock time.
pub fn cmd_optimize(cfg: &JobConfig, out: &Path) -> Result<RunOutput> {
    let dir = OutputDir::create(out, &cfg.to_json())?;
    let mut problem = cfg.build_problem()?;
    let mesh = problem.model().mesh().clone();
    let iterations = cfg.iterations;
    let every = cfg.snapshot_every;
    let mut records: Vec<IterationRecord> = Vec::new();
    let result = run(&mut problem, iterations, cfg.mma_params(), &mut |rec, eval, _| {
        let it = rec.iteration;
        if it == 0 || it == iterations || (every > 0 && it % every == 0) {
            dir.write_density(&mesh, it, &eval.densities)?;
        }
        records.push(rec.clone());
        Ok(())
    });
    write_history(&dir, &records, problem.num_constraints(), problem.scheme().channels() > 1)?;
    result
}

fn write_history(dir: &OutputDir, records: &[IterationRecord], constraints: usize, fractions: bool) -> Result<()> {
    let mut header = vec!["iter".to_string(), "f0".into()];
    header.extend(numbered("f", constraints));
    let mut history = dir.table(&header);

    let width = records.iter().map(|r| r.omegas.len()).max().unwrap_or(0);
    let mut header = vec!["iter".to_string()];
    header.extend(numbered("omega", width));
    let mut eigs = dir.table(&header);

    let width = records.iter().map(|r| r.cluster_sizes.len()).max().unwrap_or(0);
    let mut header = vec!["iter".to_string()];
    header.extend(numbered("size", width));
    let mut clusters = dir.table(&header);

    let mut timing = dir.table(&["iter".to_string(), "wall_ms".into()]);

    let phases = records.first().map_or(0, |r| r.fractions.len());
    let mut header = vec!["iter".to_string()];
    header.extend(numbered("fraction", phases));
    let mut frac = dir.table(&header);

    for r in records {
        let it = r.iteration.to_string();
        let mut row = vec![it.clone(), fmt_f64(r.objective)];
        push_values(&mut row, &r.constraints);
        history.row(&row);

        let mut row = vec![it.clone()];
        push_values(&mut row, &r.omegas);
        eigs.row(&row);

        let mut row = vec![it.clone()];
        row.extend(r.cluster_sizes.iter().map(|s| s.to_string()));
        clusters.row(&row);

        timing.row(&[it.clone(), fmt_f64(r.wall_ms)]);

        let mut row = vec![it];
        push_values(&mut row, &r.fractions);
        frac.row(&row);
    }
    history.write(&dir.path("history.csv"))?;
    eigs.write(&dir.path("eigs.csv"))?;
    clusters.write(&dir.path("clusters.csv"))?;
    timing.write(&dir.path("timing.csv"))?;
    if fractions {
        frac.write(&dir.path("fractions.csv"))?;
    }
    Ok(())
}

/// Solves for the smallest `eig.count` eigenpairs at a uniform design and
/// writes `eigs.csv` (`index, lambda, omega`) and `clusters.csv`.
pub fn cmd_eig(cfg: &JobConfig, out: &Path) -> Result<EigenSet> {
    let dir = OutputDir::create(out, &cfg.to_json())?;
    let problem = cfg.build_problem()?;
    let x = match cfg.eig.design {
        Some(d) => vec![d; problem.map().num_reduced()],
        None => problem.initial_design(),
    };
    let state = problem.design_state(&x)?;
    let eigs = problem.eigenpairs(&state, cfg.eig.count)?;

    let mut t = dir.table(&["index".to_string(), "lambda".into(), "omega".into()]);
    for (i, l) in eigs.values.iter().enumerate() {
        t.row(&[(i + 1).to_string(), fmt_f64(*l), fmt_f64(l.sqrt())]);
    }
    t.write(&dir.path("eigs.csv"))?;

    let cs = cluster(&eigs.values, cfg.cluster_tol)?;
    let mut t = dir.table(&["cluster".to_string(), "size".into(), "mean".into(), "complete".into()]);
    for q in 0..cs.len() {
        t.row(&[(q + 1).to_string(), cs.size(q).to_string(), fmt_f64(cs.mean(q)), cs.is_complete(q).to_string()]);
    }
    t.write(&dir.path("clusters.csv"))?;
    dir.write_density(problem.model().mesh(), 0, &state.densities)?;
    Ok(eigs)
}

/// Result of the `verify` job; `state` is the random point index in gradient mode.
#[derive(Debug, Clone)]
pub struct VerifyOutput {
    pub reports: Vec<(Option<usize>, SensitivityReport)>,
    pub study: Option<StudyOutput>,
}

/// Gradient checks against CDM. Writes `verify_summary.csv` (one row per
/// quantity) and `verify_gradients.csv` (one row per variable).
pub fn cmd_verify(cfg: &JobConfig, out: &Path) -> Result<VerifyOutput> {
    let dir = OutputDir::create(out, &cfg.to_json())?;
    let mut problem = cfg.build_problem()?;
    let opts = cfg.study_options();
    let output = match cfg.verify.mode {
        VerifyMode::Gradients => {
            problem.calibrate(&problem.initial_design())?;
            let mut reports = Vec::new();
            for s in 0..cfg.verify.states {
                let y = random_point(&problem, cfg.seed.wrapping_add(s as u64));
                reports.extend(constraint_reports(&problem, &y, &opts)?.into_iter().map(|r| (Some(s), r)));
            }
            VerifyOutput { reports, study: None }
        }
        VerifyMode::Study => {
            let st = study(&mut problem, &opts)?;
            let mut t = dir.table(&["index".to_string(), "lambda".into(), "cluster".into()]);
            let mut idx = 0;
            for (q, &size) in st.cluster_sizes.iter().enumerate() {
                for _ in 0..size {
                    if let Some(l) = st.eigenvalues.get(idx) {
                        t.row(&[(idx + 1).to_string(), fmt_f64(*l), (q + 1).to_string()]);
                    }
                    idx += 1;
                }
            }
            t.write(&dir.path("verify_spectrum.csv"))?;
            dir.write_density(problem.model().mesh(), cfg.verify.warmup, &[st.design.clone()])?;
            VerifyOutput { reports: st.reports.iter().cloned().map(|r| (None, r)).collect(), study: Some(st) }
        }
    };

    let state_cell = |s: Option<usize>| s.map(|v| v.to_string()).unwrap_or_default();
    let cols = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    let mut summary = dir.table(&cols(&["state", "quantity", "space", "max_rel_error", "tolerance", "verdict"]));
    let mut detail = dir.table(&cols(&["state", "quantity", "space", "index", "analytic", "numeric", "rel_error"]));
    for (s, r) in &output.reports {
        let space = serde_json::to_value(r.space).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default();
        summary.row(&[
            state_cell(*s),
            r.quantity.clone(),
            space.clone(),
            fmt_f64(r.max_rel_error),
            fmt_f64(r.tolerance),
            r.verdict.as_str().to_string(),
        ]);
        for i in 0..r.analytic.len() {
            detail.row(&[
                state_cell(*s),
                r.quantity.clone(),
                space.clone(),
                i.to_string(),
                fmt_f64(r.analytic[i]),
                fmt_f64(r.numeric[i]),
                fmt_f64(r.rel_error[i]),
            ]);
        }
    }
    summary.write(&dir.path("verify_summary.csv"))?;
    detail.write(&dir.path("verify_gradients.csv"))?;
    Ok(output)
}
