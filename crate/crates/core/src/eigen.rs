//! Smallest eigenpairs of the sparse pencil `K phi = lambda M phi`.
//!
//! Shift-invert block Krylov on `K^-1 M` with thick restarts, followed by a
//! Rayleigh-Ritz pass whose small matrices are accumulated in double-double.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::sparse::{Cholesky, CholeskyPattern, CsrMatrix};

#[derive(Debug, Clone, PartialEq)]
pub struct EigenOptions {
    /// Relative residual target for the inverted operator.
    pub tol: f64,
    pub block: usize,
    pub max_restarts: usize,
    pub seed: u64,
    /// Problems at most this size are solved densely.
    pub dense_below: usize,
}

impl Default for EigenOptions {
    fn default() -> Self {
        Self { tol: 1e-10, block: 4, max_restarts: 400, seed: 0, dense_below: 200 }
    }
}

/// Ascending eigenvalues with M-orthonormal eigenvectors over the free DOFs.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenSet {
    pub values: Vec<f64>,
    pub vectors: Vec<Vec<f64>>,
}

impl EigenSet {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Largest `|phi_i^T M phi_j - delta_ij|`.
    pub fn orthonormality_error(&self, m: &CsrMatrix) -> f64 {
        let mut worst = 0.0f64;
        for (i, a) in self.vectors.iter().enumerate() {
            let ma = m.mul_vec(a);
            for (j, b) in self.vectors.iter().enumerate() {
                let d = dot(&ma, b) - if i == j { 1.0 } else { 0.0 };
                worst = worst.max(d.abs());
            }
        }
        worst
    }

    /// Largest `||K phi - lambda M phi|| / ||K phi||`.
    pub fn residual_ratio(&self, k: &CsrMatrix, m: &CsrMatrix) -> f64 {
        self.values
            .iter()
            .zip(&self.vectors)
            .map(|(&l, p)| {
                let kp = k.mul_vec(p);
                let mp = m.mul_vec(p);
                let r: f64 = kp.iter().zip(&mp).map(|(a, b)| (a - l * b).powi(2)).sum();
                r.sqrt() / dot(&kp, &kp).sqrt()
            })
            .fold(0.0, f64::max)
    }
}

/// Eigensolver bound to one stiffness sparsity pattern.
#[derive(Debug, Clone)]
pub struct EigenSolver {
    pattern: CholeskyPattern,
}

impl EigenSolver {
    pub fn new(k: &CsrMatrix) -> Result<Self> {
        Ok(Self { pattern: CholeskyPattern::analyze(k)? })
    }

    /// The `nev` smallest eigenpairs.
    pub fn solve(&self, k: &CsrMatrix, m: &CsrMatrix, nev: usize, opts: &EigenOptions) -> Result<EigenSet> {
        let n = k.nrows();
        if m.nrows() != n {
            return Err(Error::Shape { expected: n, got: m.nrows() });
        }
        if nev > n {
            return Err(Error::Parameter(format!("requested {nev} eigenpairs of a size-{n} problem")));
        }
        if nev == 0 {
            return Ok(EigenSet { values: vec![], vectors: vec![] });
        }
        let chol = self.pattern.factor(k)?;
        let block = opts.block.max(1).min(nev);
        let phi = if n <= opts.dense_below || n < nev + 4 * block {
            dense_vectors(k, m, nev)?
        } else {
            krylov_vectors(&chol, m, nev, block, opts)?
        };
        refine(k, m, phi)
    }
}

pub fn solve_smallest(k: &CsrMatrix, m: &CsrMatrix, nev: usize, opts: &EigenOptions) -> Result<EigenSet> {
    EigenSolver::new(k)?.solve(k, m, nev, opts)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += alpha * xi);
}

/// Generalized symmetric-definite eigenproblem on small dense matrices, ascending.
fn small_generalized(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let l = b.clone().cholesky().ok_or_else(|| Error::Solver("projected mass matrix not positive definite".into()))?.unpack();
    let linv = l.clone().try_inverse().ok_or_else(|| Error::Solver("singular projected mass factor".into()))?;
    let c = &linv * a * linv.transpose();
    let c = (&c + c.transpose()) * 0.5;
    let eig = SymmetricEigen::new(c);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let y = DMatrix::from_fn(a.nrows(), order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
    Ok((values, linv.transpose() * y))
}

fn dense_vectors(k: &CsrMatrix, m: &CsrMatrix, nev: usize) -> Result<Vec<Vec<f64>>> {
    let (_, s) = small_generalized(&k.to_dense(), &m.to_dense())?;
    Ok((0..nev).map(|c| s.column(c).iter().copied().collect()).collect())
}

struct Basis {
    v: Vec<Vec<f64>>,
    mv: Vec<Vec<f64>>,
    opv: Vec<Vec<f64>>,
}

/// M-orthonormalizes candidates against `basis` and each other, replacing
/// collapsed directions with random ones.
fn orthonormalize(
    basis: &Basis,
    cands: Vec<Vec<f64>>,
    m: &CsrMatrix,
    rng: &mut ChaCha8Rng,
) -> Vec<(Vec<f64>, Vec<f64>)> {
    let mut out: Vec<(Vec<f64>, Vec<f64>)> = Vec::with_capacity(cands.len());
    for mut w in cands {
        let mut attempts = 0;
        loop {
            let norm0 = dot(&w, &m.mul_vec(&w)).sqrt();
            for _ in 0..2 {
                for (v, mv) in basis.v.iter().zip(&basis.mv).chain(out.iter().map(|(a, b)| (a, b))) {
                    let c = dot(mv, &w);
                    axpy(-c, v, &mut w);
                }
            }
            let mw = m.mul_vec(&w);
            let nrm = dot(&w, &mw).sqrt();
            if nrm.is_finite() && nrm > 1e-8 * norm0 && nrm > 0.0 {
                let inv = 1.0 / nrm;
                out.push((w.iter().map(|x| x * inv).collect(), mw.iter().map(|x| x * inv).collect()));
                break;
            }
            attempts += 1;
            if attempts > 5 {
                break;
            }
            w = (0..m.nrows()).map(|_| rng.random_range(-1.0..1.0)).collect();
        }
    }
    out
}

fn apply_op(chol: &Cholesky, mvs: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = chol.size();
    let mut buf: Vec<f64> = mvs.iter().flatten().copied().collect();
    chol.solve_block_in_place(&mut buf, mvs.len());
    buf.chunks(n).map(|c| c.to_vec()).collect()
}

fn combine(cols: &[Vec<f64>], s: &DMatrix<f64>, j: usize) -> Vec<f64> {
    let mut y = vec![0.0; cols[0].len()];
    for (i, c) in cols.iter().enumerate() {
        let w = s[(i, j)];
        if w != 0.0 {
            axpy(w, c, &mut y);
        }
    }
    y
}

/// Restarts without halving the residual before it counts as a roundoff floor.
const STALL_RESTARTS: usize = 20;
/// A stalled residual within this factor of the target is accepted.
const STALL_ACCEPT: f64 = 1e4;

fn krylov_vectors(chol: &Cholesky, m: &CsrMatrix, nev: usize, block: usize, opts: &EigenOptions) -> Result<Vec<Vec<f64>>> {
    let n = m.nrows();
    let m_max = (2 * nev + 2 * block).max(nev + 6 * block).min(n);
    let keep = (nev + (m_max - nev) / 3).min(m_max - block);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);

    let mut basis = Basis { v: vec![], mv: vec![], opv: vec![] };
    let start: Vec<Vec<f64>> = (0..block).map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let mut pending = orthonormalize(&basis, start, m, &mut rng);
    let mut restarts = 0;
    let (mut best, mut since_best) = (f64::INFINITY, 0usize);
    loop {
        // Grow the basis, applying the operator to each new block.
        loop {
            let fresh = pending.len();
            for (v, mv) in pending.drain(..) {
                basis.v.push(v);
                basis.mv.push(mv);
            }
            let new_op = apply_op(chol, &basis.mv[basis.mv.len() - fresh..]);
            basis.opv.extend(new_op);
            let last = basis.opv[basis.opv.len() - fresh..].to_vec();
            pending = orthonormalize(&basis, last, m, &mut rng);
            if basis.v.len() + pending.len() > m_max || pending.is_empty() {
                break;
            }
        }

        let dim = basis.v.len();
        let mut h = DMatrix::zeros(dim, dim);
        for i in 0..dim {
            for j in 0..dim {
                h[(i, j)] = dot(&basis.mv[i], &basis.opv[j]);
            }
        }
        let h = (&h + h.transpose()) * 0.5;
        let eig = SymmetricEigen::new(h);
        let mut order: Vec<usize> = (0..dim).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
        let nkeep = keep.min(dim);
        let s = DMatrix::from_fn(dim, nkeep, |r, c| eig.eigenvectors[(r, order[c])]);
        let theta: Vec<f64> = order[..nkeep].iter().map(|&i| eig.eigenvalues[i]).collect();

        let y: Vec<Vec<f64>> = (0..nkeep).map(|j| combine(&basis.v, &s, j)).collect();
        let opy: Vec<Vec<f64>> = (0..nkeep).map(|j| combine(&basis.opv, &s, j)).collect();
        let mut worst = 0.0f64;
        for j in 0..nev {
            let mut r = opy[j].clone();
            axpy(-theta[j], &y[j], &mut r);
            let rn = dot(&r, &m.mul_vec(&r)).max(0.0).sqrt();
            worst = worst.max(rn / theta[j].abs());
        }
        if worst <= opts.tol {
            // One more operator application sharpens the vectors at no extra cost.
            return Ok(opy.into_iter().take(nev).collect());
        }
        if worst < 0.5 * best {
            (best, since_best) = (worst, 0);
        } else {
            since_best += 1;
        }
        if since_best >= STALL_RESTARTS && worst <= STALL_ACCEPT * opts.tol {
            log::warn!("eigensolver stagnated at residual {worst:.3e} after {restarts} restarts; accepting");
            return Ok(opy.into_iter().take(nev).collect());
        }
        if restarts >= opts.max_restarts {
            return Err(Error::NoConvergence { iterations: restarts, worst_residual: worst });
        }
        restarts += 1;
        let my: Vec<Vec<f64>> = (0..nkeep).map(|j| combine(&basis.mv, &s, j)).collect();
        basis = Basis { v: y, mv: my, opv: opy };
        if pending.is_empty() {
            let fresh = (0..block).map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
            pending = orthonormalize(&basis, fresh, m, &mut rng);
        }
    }
}

/// Unevaluated sum `hi + lo` carrying about 32 significant digits.
#[derive(Debug, Clone, Copy, Default)]
struct Dd {
    hi: f64,
    lo: f64,
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

impl Dd {
    fn from_parts(hi: f64, lo: f64) -> Self {
        let (s, e) = two_sum(hi, lo);
        Self { hi: s, lo: e }
    }

    fn add(self, o: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, o.hi);
        let (t, f) = two_sum(self.lo, o.lo);
        let (s, e) = two_sum(s, e + t);
        Dd::from_parts(s, e + f)
    }

    fn add_prod(self, a: f64, b: f64) -> Dd {
        let (p, e) = two_prod(a, b);
        self.add(Dd { hi: p, lo: e })
    }

    fn mul_f64(self, x: f64) -> Dd {
        let (p, e) = two_prod(self.hi, x);
        Dd::from_parts(p, e + self.lo * x)
    }

    fn neg(self) -> Dd {
        Dd { hi: -self.hi, lo: -self.lo }
    }

    fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    fn div(self, o: Dd) -> f64 {
        let q1 = self.hi / o.hi;
        let r = self.add(o.mul_f64(q1).neg());
        q1 + r.to_f64() / o.to_f64()
    }
}

fn matvec_dd(a: &CsrMatrix, x: &[f64]) -> Vec<Dd> {
    (0..a.nrows()).map(|i| a.row(i).fold(Dd::default(), |acc, (j, v)| acc.add_prod(v, x[j]))).collect()
}

fn dot_dd(x: &[f64], y: &[Dd]) -> Dd {
    x.iter().zip(y).fold(Dd::default(), |acc, (&a, b)| acc.add_prod(a, b.hi).add_prod(a, b.lo))
}

/// Projected `(Phi^T K Phi, Phi^T M Phi)` in double-double.
fn projected(k: &CsrMatrix, m: &CsrMatrix, phi: &[Vec<f64>]) -> (Vec<Vec<Dd>>, Vec<Vec<Dd>>) {
    let kphi: Vec<Vec<Dd>> = phi.iter().map(|p| matvec_dd(k, p)).collect();
    let mphi: Vec<Vec<Dd>> = phi.iter().map(|p| matvec_dd(m, p)).collect();
    let q = phi.len();
    let mut a = vec![vec![Dd::default(); q]; q];
    let mut b = vec![vec![Dd::default(); q]; q];
    for i in 0..q {
        for j in i..q {
            a[i][j] = dot_dd(&phi[i], &kphi[j]);
            b[i][j] = dot_dd(&phi[i], &mphi[j]);
            a[j][i] = a[i][j];
            b[j][i] = b[i][j];
        }
    }
    (a, b)
}

fn rotate(phi: &[Vec<f64>], s: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..s.ncols()).map(|j| combine(phi, s, j)).collect()
}

/// Rayleigh-Ritz on the converged vectors, then a shifted solve inside each
/// near-degenerate group so that eigenvalue differences keep full precision.
fn refine(k: &CsrMatrix, m: &CsrMatrix, phi: Vec<Vec<f64>>) -> Result<EigenSet> {
    let q = phi.len();
    let to_mat = |x: &[Vec<Dd>]| DMatrix::from_fn(q, q, |i, j| x[i][j].to_f64());
    let (a, b) = projected(k, m, &phi);
    let (_, s) = small_generalized(&to_mat(&a), &to_mat(&b))?;
    let mut phi = rotate(&phi, &s);

    let (a, b) = projected(k, m, &phi);
    let rq: Vec<f64> = (0..q).map(|i| a[i][i].div(b[i][i])).collect();
    let mut order: Vec<usize> = (0..q).collect();
    order.sort_by(|&i, &j| rq[i].total_cmp(&rq[j]));

    let mut values = Vec::with_capacity(q);
    let mut vectors = Vec::with_capacity(q);
    let mut start = 0;
    while start < q {
        let mut end = start + 1;
        while end < q && (rq[order[end]] - rq[order[end - 1]]).abs() <= 1e-6 * rq[order[end - 1]].abs() {
            end += 1;
        }
        let group = &order[start..end];
        if group.len() == 1 {
            let i = group[0];
            values.push(rq[i]);
            vectors.push(std::mem::take(&mut phi[i]));
        } else {
            let g = group.len();
            let mu = group.iter().map(|&i| rq[i]).sum::<f64>() / g as f64;
            let shifted = DMatrix::from_fn(g, g, |r, c| {
                let (i, j) = (group[r], group[c]);
                a[i][j].add(b[i][j].mul_f64(-mu)).to_f64()
            });
            let bg = DMatrix::from_fn(g, g, |r, c| b[group[r]][group[c]].to_f64());
            let (theta, sg) = small_generalized(&shifted, &bg)?;
            let members: Vec<Vec<f64>> = group.iter().map(|&i| std::mem::take(&mut phi[i])).collect();
            for (t, v) in theta.iter().zip(rotate(&members, &sg)) {
                values.push(mu + t);
                vectors.push(v);
            }
        }
        start = end;
    }

    for v in &mut vectors {
        let norm = dot_dd(v, &matvec_dd(m, v)).to_f64().sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
    }
    let mut idx: Vec<usize> = (0..q).collect();
    idx.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    Ok(EigenSet {
        values: idx.iter().map(|&i| values[i]).collect(),
        vectors: idx.iter().map(|&i| std::mem::take(&mut vectors[i])).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{FeModel, PlaneModel};
    use crate::mesh::{Mesh, Support};

    fn plate(n: usize, dim: usize) -> (CsrMatrix, CsrMatrix) {
        let cells = vec![n; dim];
        let lengths = vec![1.0; dim];
        let mesh = Mesh::build_grid(dim, &cells, &lengths).unwrap().apply_boundary(&[Support::corners()]).unwrap();
        let model = FeModel::new(mesh, 0.3, PlaneModel::Strain).unwrap();
        let ne = model.mesh().num_elements();
        // Graded coefficients so the spectrum is not trivially structured.
        let e: Vec<f64> = (0..ne).map(|i| 1.0 + 0.5 * ((i * 7) % 11) as f64 / 11.0).collect();
        let r: Vec<f64> = (0..ne).map(|i| 1.0 + 0.3 * ((i * 5) % 13) as f64 / 13.0).collect();
        model.assemble(&e, &r).unwrap()
    }

    /// Independent dense oracle: `M = L L^T`, eigenvalues of `L^-1 K L^-T`.
    fn oracle(k: &CsrMatrix, m: &CsrMatrix) -> Vec<f64> {
        let l = m.to_dense().cholesky().unwrap().unpack();
        let li = l.try_inverse().unwrap();
        let c = &li * k.to_dense() * li.transpose();
        let mut v: Vec<f64> = SymmetricEigen::new((&c + c.transpose()) * 0.5).eigenvalues.iter().copied().collect();
        v.sort_by(f64::total_cmp);
        v
    }

    fn krylov() -> EigenOptions {
        EigenOptions { dense_below: 0, ..EigenOptions::default() }
    }

    fn check(k: &CsrMatrix, m: &CsrMatrix, nev: usize, opts: &EigenOptions) -> EigenSet {
        let got = solve_smallest(k, m, nev, opts).unwrap();
        let want = oracle(k, m);
        for (g, w) in got.values.iter().zip(&want) {
            assert!((g - w).abs() <= 1e-9 * w.abs(), "{g} vs {w}");
        }
        assert!(got.orthonormality_error(m) <= 1e-8);
        assert!(got.residual_ratio(k, m) <= 1e-8);
        got
    }

    #[test]
    fn krylov_matches_dense_oracle_2d() {
        let (k, m) = plate(8, 2);
        check(&k, &m, 12, &krylov());
    }

    #[test]
    fn dense_path_matches_oracle() {
        let (k, m) = plate(4, 2);
        check(&k, &m, 10, &EigenOptions::default());
    }

    #[test]
    fn krylov_matches_dense_oracle_3d() {
        let (k, m) = plate(3, 3);
        check(&k, &m, 9, &krylov());
    }

    #[test]
    fn uniform_square_has_double_eigenvalues() {
        let mesh = Mesh::build_grid(2, &[10, 10], &[1.0, 1.0]).unwrap().apply_boundary(&[Support::corners()]).unwrap();
        let model = FeModel::new(mesh, 0.3, PlaneModel::Strain).unwrap();
        let (k, m) = model.assemble(&[1.0; 100], &[1.0; 100]).unwrap();
        let got = check(&k, &m, 10, &krylov());
        let doubles = got.values.windows(2).filter(|w| (w[1] - w[0]) <= 1e-10 * w[0]).count();
        assert!(doubles >= 2, "{:?}", got.values);
    }

    #[test]
    fn identity_pencil() {
        let k = CsrMatrix::from_dense(&DMatrix::from_fn(300, 300, |i, j| if i == j { 2.0 } else if i.abs_diff(j) == 1 { 0.5 } else { 0.0 }));
        let got = solve_smallest(&k, &k, 6, &krylov()).unwrap();
        assert!(got.values.iter().all(|v| (v - 1.0).abs() < 1e-13));
    }

    #[test]
    fn diagonal_pencil() {
        let n = 250;
        let k = CsrMatrix::from_dense(&DMatrix::from_fn(n, n, |i, j| if i == j { (n - i) as f64 } else { 0.0 }));
        let m = CsrMatrix::from_dense(&DMatrix::identity(n, n));
        let got = solve_smallest(&k, &m, 5, &krylov()).unwrap();
        assert_eq!(got.values, vec![1.0, 2.0, 3.0, 4.0, 5.0]);
    }

    #[test]
    fn scaling_and_renumbering() {
        let (k, m) = plate(8, 2);
        let base = solve_smallest(&k, &m, 8, &krylov()).unwrap();
        let mut k3 = k.clone();
        k3.values_mut().iter_mut().for_each(|v| *v *= 3.0);
        let scaled = solve_smallest(&k3, &m, 8, &krylov()).unwrap();
        let n = k.nrows();
        let perm: Vec<usize> = (0..n).map(|i| (i * 37 + 11) % n).collect();
        let renumbered = solve_smallest(&k.permute(&perm), &m.permute(&perm), 8, &krylov()).unwrap();
        for i in 0..8 {
            assert!((scaled.values[i] - 3.0 * base.values[i]).abs() <= 1e-12 * scaled.values[i]);
            assert!((renumbered.values[i] - base.values[i]).abs() <= 1e-12 * base.values[i]);
        }
    }

    #[test]
    fn repeatable() {
        let (k, m) = plate(8, 2);
        let a = solve_smallest(&k, &m, 8, &krylov()).unwrap();
        let b = solve_smallest(&k, &m, 8, &krylov()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn unreachable_tolerance_stalls_gracefully() {
        let (k, m) = plate(8, 2);
        let got = solve_smallest(&k, &m, 6, &EigenOptions { tol: 1e-17, ..krylov() }).unwrap();
        assert!(got.residual_ratio(&k, &m) <= 1e-8);
        let hopeless = EigenOptions { tol: 1e-30, max_restarts: 30, ..krylov() };
        assert!(matches!(solve_smallest(&k, &m, 6, &hopeless), Err(Error::NoConvergence { .. })));
    }

    #[test]
    fn too_many_requested() {
        let (k, m) = plate(2, 2);
        assert!(matches!(solve_smallest(&k, &m, k.nrows() + 1, &krylov()), Err(Error::Parameter(_))));
    }

    #[test]
    fn double_double_products() {
        let (p, e) = two_prod(1.0 + 2f64.powi(-30), 1.0 + 2f64.powi(-30));
        assert_eq!(p + e, p);
        assert_eq!(e, 2f64.powi(-60));
        let x = Dd::default().add_prod(1.0, 1.0).add_prod(1e-20, 1.0).add_prod(-1.0, 1.0);
        assert_eq!(x.to_f64(), 1e-20);
    }
}
