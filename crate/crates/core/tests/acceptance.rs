//! End-to-end acceptance checks. Each test prints one `criterion N: PASS|FAIL` line.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::OnceLock;
use std::time::Instant;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use eigentopo::commands::cmd_optimize;
use eigentopo::config::parse_config;
use eigentopo::eigen::{solve_smallest, EigenOptions, EigenSet};
use eigentopo::fem::{FeModel, PlaneModel};
use eigentopo::material::{continuity_coeffs, MaterialScheme, SchemeParams};
use eigentopo::mesh::{AxisName, AxisPosition, Mesh, Support, Symmetry};
use eigentopo::optimize::{Mma, MmaParams};
use eigentopo::sparse::CsrMatrix;
use eigentopo::spectrum::{cluster, cluster_mean_sensitivity, ks_stable, pnorm_stable};
use eigentopo::verify::{constraint_reports, random_point, run_study, StudyOptions, StudyOutput, StudySpec, VariableSpace};

fn verdict(n: u32, name: &str, pass: bool, detail: &str) {
    println!("criterion {n} ({name}): {} | {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {n} ({name}) failed: {detail}");
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

/// Independent dense generalized eigensolver: `L^-1 K L^-T` with `M = L L^T`.
fn dense_eigenvalues(k: &CsrMatrix, m: &CsrMatrix) -> Vec<f64> {
    let l = m.to_dense().cholesky().expect("mass is SPD").unpack();
    let n = l.nrows();
    let li = l.solve_lower_triangular(&DMatrix::identity(n, n)).expect("triangular solve");
    let c = &li * k.to_dense() * li.transpose();
    let mut v: Vec<f64> = SymmetricEigen::new((&c + c.transpose()) * 0.5).eigenvalues.iter().copied().collect();
    v.sort_by(f64::total_cmp);
    v
}

fn random_system(dim: usize, cells: &[usize], seed: u64) -> (CsrMatrix, CsrMatrix) {
    let lengths = vec![1.0; dim];
    let mut support = Support::corners();
    if dim == 3 {
        support.z = Some(AxisPosition::Named(AxisName::Min));
    }
    let mesh = Mesh::build_grid(dim, cells, &lengths).unwrap().apply_boundary(&[support]).unwrap();
    let ne = mesh.num_elements();
    let model = FeModel::new(mesh, 0.3, PlaneModel::Strain).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let e: Vec<f64> = (0..ne).map(|_| rng.random_range(0.1..1.0)).collect();
    let r: Vec<f64> = (0..ne).map(|_| rng.random_range(0.1..1.0)).collect();
    model.assemble(&e, &r).unwrap()
}

#[test]
fn oracle_equivalence() {
    let start = Instant::now();
    let cases: [(usize, Vec<usize>); 4] = [(2, vec![2, 2]), (2, vec![4, 3]), (2, vec![6, 6]), (3, vec![3, 3, 3])];
    let mut worst_val = 0.0f64;
    let mut worst_orth = 0.0f64;
    for (seed, (dim, cells)) in cases.iter().enumerate() {
        let (k, m) = random_system(*dim, cells, seed as u64);
        let want = dense_eigenvalues(&k, &m);
        let nev = 10.min(k.nrows());
        for dense_below in [usize::MAX, 0] {
            if dense_below == 0 && k.nrows() < 60 {
                continue;
            }
            let opts = EigenOptions { dense_below, ..EigenOptions::default() };
            let got = solve_smallest(&k, &m, nev, &opts).unwrap();
            for (g, w) in got.values.iter().zip(&want) {
                worst_val = worst_val.max(rel(*g, *w));
            }
            worst_orth = worst_orth.max(got.orthonormality_error(&m));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = worst_val <= 1e-10 && worst_orth <= 1e-8 && secs < 5.0;
    verdict(1, "eigensolver vs dense oracle", pass, &format!("max rel err {worst_val:.2e}, M-orth err {worst_orth:.2e}, {secs:.2} s"));
}

fn gradient_config(scheme: &str, youngs: &str, densities: &str, volumes: &str, kind: &str) -> String {
    format!(
        r#"{{
        "problem": {{"kind": "{kind}", "n": 1}},
        "mesh": {{"cells": [10, 10], "lengths": [1.0, 1.0]}},
        "supports": [{{"x": "ends", "y": "ends"}}],
        "symmetry": "half",
        "material": {{"scheme": "{scheme}", "youngs": {youngs}, "densities": {densities}}},
        "filter_radius": 0.15,
        "volumes": {volumes},
        "m": 4
    }}"#
    )
}

#[test]
fn sensitivity_suite() {
    let start = Instant::now();
    let cases = [
        ("solid-void eigmax", gradient_config("solid_void", "[1.0]", "[1.0]", "[0.5]", "eigmax")),
        ("bi-void eigmax", gradient_config("bi_void", "[1.0, 0.5]", "[1.0, 0.4]", "[0.6, 0.3]", "eigmax")),
        ("tri-void eigmax", gradient_config("tri_void", "[1.0, 0.6, 0.3]", "[1.0, 0.5, 0.2]", "[0.6, 0.4, 0.2]", "eigmax")),
        ("solid-void bandgap", gradient_config("solid_void", "[1.0]", "[1.0]", "[0.5]", "bandgap")),
    ];
    let opts = StudyOptions::default();
    let mut worst: BTreeMap<&str, f64> = BTreeMap::new();
    for (name, text) in &cases {
        let cfg = parse_config(text).unwrap();
        let mut problem = cfg.build_problem().unwrap();
        problem.calibrate(&problem.initial_design()).unwrap();
        for s in 0..3u64 {
            let y = random_point(&problem, 100 + s);
            for r in constraint_reports(&problem, &y, &opts).unwrap() {
                let w = worst.entry(name).or_insert(0.0);
                *w = w.max(r.max_rel_error);
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let max = worst.values().fold(0.0f64, |a, b| a.max(*b));
    let detail: Vec<String> = worst.iter().map(|(k, v)| format!("{k} {v:.2e}")).collect();
    verdict(2, "constraint gradients vs CDM", max <= 1e-4 && secs < 60.0, &format!("{}; {secs:.1} s", detail.join(", ")));
}

fn study(symmetry: Symmetry) -> &'static (StudyOutput, f64) {
    static HALF: OnceLock<(StudyOutput, f64)> = OnceLock::new();
    static EIGHTH: OnceLock<(StudyOutput, f64)> = OnceLock::new();
    let cell = if symmetry == Symmetry::Half { &HALF } else { &EIGHTH };
    cell.get_or_init(|| {
        let start = Instant::now();
        let out = run_study(&StudySpec { symmetry, ..StudySpec::default() }).unwrap();
        (out, start.elapsed().as_secs_f64())
    })
}

fn worst(out: &StudyOutput, space: VariableSpace, prefix: &str) -> (f64, f64) {
    let errs: Vec<f64> = out.reports.iter().filter(|r| r.space == space && r.quantity.starts_with(prefix)).map(|r| r.max_rel_error).collect();
    assert!(!errs.is_empty(), "no {prefix} quantities in {space:?}");
    (errs.iter().copied().fold(f64::INFINITY, f64::min), errs.iter().copied().fold(0.0, f64::max))
}

#[test]
fn differentiability_table() {
    let mut lines = Vec::new();
    let mut pass = true;
    let mut secs = 0.0;
    for symmetry in [Symmetry::Half, Symmetry::Eighth] {
        let (out, t) = study(symmetry);
        secs += t;
        pass &= out.cluster_sizes.iter().any(|&s| s >= 2);
        for space in [VariableSpace::All, VariableSpace::Symmetric] {
            let (_, mean_max) = worst(out, space, "mean_");
            let (lam_min, lam_max) = worst(out, space, "lambda_");
            let expect_match = symmetry == Symmetry::Eighth && space == VariableSpace::Symmetric;
            let lam_ok = if expect_match { lam_max <= 1e-4 } else { lam_min >= 1e-3 };
            pass &= mean_max <= 1e-4 && lam_ok;
            lines.push(format!("{symmetry:?}/{space:?}: means {mean_max:.1e}, repeated [{lam_min:.1e}, {lam_max:.1e}]"));
        }
        lines.push(format!("{symmetry:?} sizes {:?}", out.cluster_sizes));
    }
    pass &= secs < 600.0;
    verdict(3, "cluster means vs repeated eigenvalues", pass, &format!("{}; {secs:.0} s", lines.join("; ")));
}

#[test]
fn completeness_property() {
    let (out, _) = study(Symmetry::Half);
    let mut pass = true;
    let mut lines = Vec::new();
    for space in [VariableSpace::All, VariableSpace::Symmetric] {
        for agg in ["pnorm", "ks"] {
            let (_, complete) = worst(out, space, &format!("{agg}_complete"));
            let (incomplete, _) = worst(out, space, &format!("{agg}_incomplete"));
            pass &= complete <= 1e-4 && incomplete >= 1e-3;
            lines.push(format!("{space:?} {agg}: complete {complete:.1e}, incomplete {incomplete:.1e}"));
        }
    }
    verdict(4, "aggregates over complete clusters", pass, &lines.join("; "));
}

#[test]
fn symmetric_function_closed_forms() {
    let mut worst = 0.0f64;
    for n in [1usize, 2, 8] {
        for p in [4.0, 10.0, 64.0] {
            let c = 3.7;
            let v = vec![c; n];
            let (pn, _) = pnorm_stable(&v, p, None).unwrap();
            let (ks, _) = ks_stable(&v, p, None).unwrap();
            worst = worst.max(rel(pn, c * (n as f64).powf(1.0 / p)));
            worst = worst.max(rel(ks, c + (n as f64).ln() / p));
        }
    }
    verdict(5, "p-norm and KS closed forms", worst <= 1e-12, &format!("max rel err {worst:.2e}"));
}

#[test]
fn rotation_invariance() {
    let mesh = Mesh::build_grid(2, &[8, 8], &[1.0, 1.0]).unwrap().apply_boundary(&[Support::corners()]).unwrap();
    let ne = mesh.num_elements();
    let model = FeModel::new(mesh, 0.3, PlaneModel::Strain).unwrap();
    let scheme = MaterialScheme::new(SchemeParams::solid_void(1.0, 1.0, 2)).unwrap();
    let mats: Vec<_> = (0..ne).map(|_| scheme.interpolate(&[0.5]).unwrap()).collect();
    let (k, m) = model.assemble(&mats.iter().map(|p| p.youngs).collect::<Vec<_>>(), &mats.iter().map(|p| p.density).collect::<Vec<_>>()).unwrap();
    let eigs = solve_smallest(&k, &m, 8, &EigenOptions::default()).unwrap();
    let clusters = cluster(&eigs.values, 1e-8).unwrap();
    let q = (0..clusters.len()).find(|&q| clusters.size(q) == 2 && clusters.is_complete(q)).expect("a doubled eigenvalue");
    let base = cluster_mean_sensitivity(&model, &mats, &eigs, &clusters, q).unwrap();
    let scale = base[0].iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let r = clusters.members(q);
    let (i, j) = (r.start, r.start + 1);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let t: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let (c, s) = (t.cos(), t.sin());
        let mut vectors = eigs.vectors.clone();
        for d in 0..vectors[i].len() {
            let (a, b) = (eigs.vectors[i][d], eigs.vectors[j][d]);
            vectors[i][d] = c * a + s * b;
            vectors[j][d] = -s * a + c * b;
        }
        let mixed = EigenSet { values: eigs.values.clone(), vectors };
        let g = cluster_mean_sensitivity(&model, &mats, &mixed, &clusters, q).unwrap();
        for (a, b) in g[0].iter().zip(&base[0]) {
            worst = worst.max((a - b).abs() / scale);
        }
    }
    verdict(6, "cluster-mean gradient under eigenvector remixing", worst <= 1e-9, &format!("max rel change {worst:.2e}"));
}

#[test]
fn mass_interpolation_continuity() {
    let mut lines = Vec::new();
    let mut pass = true;
    for (p2, rho_t, c1, c2) in [(6.0, 0.1, 6e5, -5e6), (6.0, 0.02, 1.875e9, -7.8125e10)] {
        let (a, b) = continuity_coeffs(p2, rho_t).unwrap();
        let coeff_err = rel(a, c1).max(rel(b, c2));
        let mut params = SchemeParams::solid_void(1.0, 1.0, 2);
        params.p2 = p2;
        params.rho_t = rho_t;
        params.rho_l = 1e-4;
        let s = MaterialScheme::new(params).unwrap();
        let below = s.interpolate(&[rho_t]).unwrap();
        let above = s.interpolate(&[rho_t * (1.0 + 1e-15)]).unwrap();
        let value_jump = (above.density - below.density).abs();
        let slope_jump = (above.d_density[0] - below.d_density[0]).abs();
        pass &= coeff_err <= 1e-12 && value_jump <= 1e-10 && slope_jump <= 1e-10;
        lines.push(format!("rho_T {rho_t}: coeff err {coeff_err:.1e}, value jump {value_jump:.1e}, slope jump {slope_jump:.1e}"));
    }
    verdict(7, "C1 mass interpolation", pass, &lines.join("; "));
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap()
}

fn data_rows(text: &str) -> Vec<Vec<f64>> {
    text.lines().skip(2).map(|l| l.split(',').filter(|c| !c.is_empty()).map(|c| c.parse().unwrap()).collect()).collect()
}

#[test]
fn end_to_end_block() {
    let start = Instant::now();
    let text = r#"{
        "problem": {"kind": "eigmax", "n": 1},
        "mesh": {"cells": [20, 20], "lengths": [1.0, 1.0]},
        "supports": [{"x": "ends", "y": "ends"}],
        "symmetry": "eighth",
        "material": {"scheme": "solid_void", "youngs": [1.0], "densities": [1.0]},
        "filter_radius": 0.6,
        "volumes": [0.5],
        "iterations": 100,
        "snapshot_every": 1
    }"#;
    let cfg = parse_config(text).unwrap();
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        cmd_optimize(&cfg, d.path()).unwrap();
    }
    let history = data_rows(&read(&dirs[0].path().join("history.csv")));
    let (first, last) = (&history[0], history.last().unwrap());
    let volume = *last.last().unwrap();
    let improved = last[1] > first[1];

    let mut names: Vec<String> = std::fs::read_dir(dirs[0].path()).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    let identical = names.iter().filter(|n| *n != "timing.csv").all(|n| std::fs::read(dirs[0].path().join(n)).unwrap() == std::fs::read(dirs[1].path().join(n)).unwrap());

    let mut symmetric = true;
    for it in 0..=100 {
        let rows = data_rows(&read(&dirs[0].path().join(format!("density_{it}.csv"))));
        let g: Vec<Vec<f64>> = rows.iter().map(|r| r[3..].to_vec()).collect();
        let n = g.len();
        for a in 0..n {
            for b in 0..n {
                let v = g[a][b];
                symmetric &= v == g[n - 1 - a][b] && v == g[a][n - 1 - b] && v == g[b][a];
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = history.len() == 101 && volume <= 1e-6 && improved && symmetric && identical && secs < 600.0;
    verdict(
        8,
        "20x20 eighth-symmetric run",
        pass,
        &format!("f0 {} -> {}, volume {volume:.2e}, symmetric {symmetric}, identical {identical}, {secs:.0} s", first[1], last[1]),
    );
}

fn beam_sizes(cluster_tol: f64) -> Vec<usize> {
    let text = format!(
        r#"{{
        "problem": {{"kind": "eigmax", "n": 1}},
        "mesh": {{"cells": [80, 10], "lengths": [8.0, 1.0]}},
        "supports": [{{"x": "ends", "y": "mid"}}],
        "symmetry": "quarter",
        "material": {{"scheme": "solid_void", "youngs": [1.0e7], "densities": [1.0]}},
        "filter_radius": 0.055,
        "volumes": [0.5],
        "cluster_tol": {cluster_tol:e},
        "iterations": 200,
        "snapshot_every": 0
    }}"#
    );
    let cfg = parse_config(&text).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let out = cmd_optimize(&cfg, dir.path()).unwrap();
    out.records.iter().map(|r| r.cluster_sizes[0]).collect()
}

#[test]
fn clustering_tolerance_study() {
    let loose = beam_sizes(1e-4);
    let tight = beam_sizes(1e-8);
    let merged = loose.iter().position(|&s| s == 2);
    let oscillates = merged.is_some_and(|i| loose[i..].contains(&1));
    let merged_tight: Vec<usize> = (0..tight.len()).filter(|&i| tight[i] != 1).collect();
    let switches = loose.windows(2).filter(|w| w[0] != w[1]).count();
    verdict(
        9,
        "beam clustering tolerance",
        oscillates && merged_tight.is_empty(),
        &format!("loose: first merge at {merged:?}, {switches} size changes; tight: merged at iterations {merged_tight:?}"),
    );
}

/// Runs MMA from `x0` and returns the final point and the largest step as a fraction of the range.
fn run_mma<F>(x0: Vec<f64>, lo: Vec<f64>, hi: Vec<f64>, iters: usize, eval: F) -> (Vec<f64>, f64)
where
    F: Fn(&[f64]) -> (Vec<f64>, Vec<f64>, Vec<Vec<f64>>),
{
    let mut mma = Mma::new(lo.clone(), hi.clone(), MmaParams::default()).unwrap();
    let mut x = x0;
    let mut max_step = 0.0f64;
    for _ in 0..iters {
        let (df0, f, dfdx) = eval(&x);
        let next = mma.step(&x, &df0, &f, &dfdx).unwrap();
        for i in 0..x.len() {
            max_step = max_step.max((next[i] - x[i]).abs() / (hi[i] - lo[i]));
        }
        x = next;
    }
    (x, max_step)
}

#[test]
fn mma_sanity() {
    // Separable quadratic with one inactive constraint.
    let t = [0.3, -0.7, 1.2];
    let (x1, s1) = run_mma(vec![0.0; 3], vec![-2.0; 3], vec![2.0; 3], 150, |x| {
        let df0 = x.iter().zip(&t).map(|(a, b)| 2.0 * (a - b)).collect();
        (df0, vec![x[0] - 5.0], vec![vec![1.0, 0.0, 0.0]])
    });
    let e1 = x1.iter().zip(&t).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));

    // Two nonlinear ball constraints; optimum near (2.0175, 1.7800, 1.2375).
    let (x2, s2) = run_mma(vec![4.0, 3.0, 2.0], vec![0.0; 3], vec![5.0; 3], 300, |x| {
        let df0 = x.iter().map(|v| 2.0 * v).collect();
        let c = [[5.0, 2.0, 1.0], [3.0, 4.0, 3.0]];
        let f = c.iter().map(|ci| (0..3).map(|k| (x[k] - ci[k]).powi(2)).sum::<f64>() - 9.0).collect();
        let dfdx = c.iter().map(|ci| (0..3).map(|k| 2.0 * (x[k] - ci[k])).collect()).collect();
        (df0, f, dfdx)
    });
    let want = [2.017526, 1.779961, 1.237517];
    let e2 = x2.iter().zip(&want).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));

    // Linear objective on a linear constraint: vertex (0, 1).
    let (x3, s3) = run_mma(vec![0.5, 0.5], vec![0.0; 2], vec![1.0; 2], 150, |x| {
        (vec![1.0, -1.0], vec![x[0] + x[1] - 1.0], vec![vec![1.0, 1.0]])
    });
    let e3 = (x3[0] - 0.0).abs().max((x3[1] - 1.0).abs());

    let err = e1.max(e2).max(e3);
    let step = s1.max(s2).max(s3);
    verdict(10, "MMA analytic problems", err <= 1e-3 && step <= 0.05 + 1e-12, &format!("max error {err:.2e}, max step {step:.4} of range"));
}
