//! Q4/H8 unit element matrices and global sparse assembly over free DOFs.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::sparse::CsrMatrix;

/// 2D kinematic assumption. The 3D Lame law reduces to plane strain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PlaneModel {
    #[default]
    Strain,
    Stress,
}

/// Element stiffness for `E = 1` and consistent mass for `rho_m = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitElementMatrices {
    pub stiffness: DMatrix<f64>,
    pub mass: DMatrix<f64>,
}

const GAUSS: [f64; 2] = [-0.577_350_269_189_625_8, 0.577_350_269_189_625_8];

fn natural_corners(dim: usize) -> Vec<[f64; 3]> {
    let q4 = [[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]];
    if dim == 2 {
        q4.iter().map(|c| [c[0], c[1], 0.0]).collect()
    } else {
        [-1.0, 1.0].iter().flat_map(|&z| q4.iter().map(move |c| [c[0], c[1], z])).collect()
    }
}

fn constitutive(dim: usize, nu: f64, plane: PlaneModel) -> DMatrix<f64> {
    let lambda = nu / ((1.0 + nu) * (1.0 - 2.0 * nu));
    let mu = 1.0 / (2.0 * (1.0 + nu));
    if dim == 3 {
        let mut d = DMatrix::zeros(6, 6);
        for i in 0..3 {
            for j in 0..3 {
                d[(i, j)] = lambda;
            }
            d[(i, i)] = lambda + 2.0 * mu;
            d[(i + 3, i + 3)] = mu;
        }
        return d;
    }
    match plane {
        PlaneModel::Strain => DMatrix::from_row_slice(
            3,
            3,
            &[lambda + 2.0 * mu, lambda, 0.0, lambda, lambda + 2.0 * mu, 0.0, 0.0, 0.0, mu],
        ),
        PlaneModel::Stress => {
            let c = 1.0 / (1.0 - nu * nu);
            DMatrix::from_row_slice(3, 3, &[c, c * nu, 0.0, c * nu, c, 0.0, 0.0, 0.0, mu])
        }
    }
}

/// Full Gauss quadrature (2 points per axis) of the Q4/H8 stiffness and mass.
pub fn unit_matrices(coords: &[[f64; 3]], nu: f64, dim: usize, plane: PlaneModel) -> Result<UnitElementMatrices> {
    let corners = natural_corners(dim);
    let nn = corners.len();
    if coords.len() != nn {
        return Err(Error::InvalidGeometry(format!("expected {nn} element nodes, got {}", coords.len())));
    }
    let ndof = nn * dim;
    let nstrain = if dim == 2 { 3 } else { 6 };
    let d = constitutive(dim, nu, plane);
    let mut ke = DMatrix::zeros(ndof, ndof);
    let mut me = DMatrix::zeros(ndof, ndof);

    let zs: &[f64] = if dim == 2 { &[0.0] } else { &GAUSS };
    for &gz in zs {
        for &gy in &GAUSS {
            for &gx in &GAUSS {
                let g = [gx, gy, gz];
                let mut shape = vec![0.0; nn];
                let mut dn_nat = DMatrix::zeros(dim, nn);
                for (a, c) in corners.iter().enumerate() {
                    let f: [f64; 3] = std::array::from_fn(|k| if k < dim { 1.0 + c[k] * g[k] } else { 1.0 });
                    let scale = 0.5f64.powi(dim as i32);
                    shape[a] = scale * f[0] * f[1] * f[2];
                    for k in 0..dim {
                        let mut prod = scale * c[k];
                        for (l, fl) in f.iter().enumerate().take(dim) {
                            if l != k {
                                prod *= fl;
                            }
                        }
                        dn_nat[(k, a)] = prod;
                    }
                }
                let x = DMatrix::from_fn(nn, dim, |a, k| coords[a][k]);
                let jac = &dn_nat * &x;
                let det = jac.determinant();
                if !(det > 0.0) {
                    return Err(Error::InvalidGeometry(format!("nonpositive Jacobian {det:e}")));
                }
                let inv = jac.try_inverse().ok_or_else(|| Error::InvalidGeometry("singular Jacobian".into()))?;
                let dn = inv * dn_nat;

                let mut b = DMatrix::zeros(nstrain, ndof);
                for a in 0..nn {
                    let c = a * dim;
                    if dim == 2 {
                        b[(0, c)] = dn[(0, a)];
                        b[(1, c + 1)] = dn[(1, a)];
                        b[(2, c)] = dn[(1, a)];
                        b[(2, c + 1)] = dn[(0, a)];
                    } else {
                        b[(0, c)] = dn[(0, a)];
                        b[(1, c + 1)] = dn[(1, a)];
                        b[(2, c + 2)] = dn[(2, a)];
                        b[(3, c)] = dn[(1, a)];
                        b[(3, c + 1)] = dn[(0, a)];
                        b[(4, c + 1)] = dn[(2, a)];
                        b[(4, c + 2)] = dn[(1, a)];
                        b[(5, c)] = dn[(2, a)];
                        b[(5, c + 2)] = dn[(0, a)];
                    }
                }
                ke += b.transpose() * &d * &b * det;
                for a in 0..nn {
                    for bb in 0..nn {
                        let v = shape[a] * shape[bb] * det;
                        for k in 0..dim {
                            me[(a * dim + k, bb * dim + k)] += v;
                        }
                    }
                }
            }
        }
    }
    ke = (&ke + ke.transpose()) * 0.5;
    Ok(UnitElementMatrices { stiffness: ke, mass: me })
}

/// Mesh plus the data needed to assemble and differentiate `K` and `M`.
#[derive(Debug, Clone)]
pub struct FeModel {
    mesh: Mesh,
    units: Vec<UnitElementMatrices>,
    unit_of: Vec<usize>,
    free_index: Vec<Option<usize>>,
    n_free: usize,
    pattern: CsrMatrix,
    lumped: Vec<f64>,
}

impl FeModel {
    pub fn new(mesh: Mesh, nu: f64, plane: PlaneModel) -> Result<Self> {
        mesh.validate()?;
        let dim = mesh.dim();
        let n_ele = mesh.num_elements();

        // Elements with identical relative node coordinates share matrices.
        let mut units: Vec<UnitElementMatrices> = Vec::new();
        let mut shapes: Vec<Vec<[f64; 3]>> = Vec::new();
        let mut unit_of = Vec::with_capacity(n_ele);
        let tol = 1e-12 * mesh.lengths().iter().cloned().fold(0.0, f64::max);
        for e in 0..n_ele {
            let c = mesh.element_coords(e);
            let rel: Vec<[f64; 3]> = c.iter().map(|p| std::array::from_fn(|k| p[k] - c[0][k])).collect();
            let found = shapes.iter().position(|s| {
                s.iter().zip(&rel).all(|(a, b)| (0..3).all(|k| (a[k] - b[k]).abs() <= tol))
            });
            let id = match found {
                Some(id) => id,
                None => {
                    units.push(unit_matrices(&c, nu, dim, plane)?);
                    shapes.push(rel);
                    units.len() - 1
                }
            };
            unit_of.push(id);
        }

        let mut free_index = vec![None; mesh.num_dofs()];
        let mut n_free = 0;
        for (dof, slot) in free_index.iter_mut().enumerate() {
            if !mesh.fixed_dofs().contains(&dof) {
                *slot = Some(n_free);
                n_free += 1;
            }
        }
        if n_free == 0 {
            return Err(Error::FullyConstrained);
        }

        let mut rows: Vec<Vec<usize>> = vec![Vec::new(); n_free];
        for e in 0..n_ele {
            let dofs: Vec<usize> = mesh.element_dofs(e).filter_map(|d| free_index[d]).collect();
            for &r in &dofs {
                rows[r].extend_from_slice(&dofs);
            }
        }
        for r in &mut rows {
            r.sort_unstable();
            r.dedup();
        }
        let pattern = CsrMatrix::from_rows(n_free, &rows);

        let mut lumped = vec![0.0; n_free];
        for pm in mesh.point_masses() {
            for k in 0..dim {
                if let Some(f) = free_index[pm.node * dim + k] {
                    lumped[f] += pm.mass;
                }
            }
        }

        Ok(Self { mesh, units, unit_of, free_index, n_free, pattern, lumped })
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn num_free(&self) -> usize {
        self.n_free
    }

    pub fn unit(&self, e: usize) -> &UnitElementMatrices {
        &self.units[self.unit_of[e]]
    }

    pub fn free_index(&self) -> &[Option<usize>] {
        &self.free_index
    }

    /// Free-DOF positions of an element's local DOFs (`None` when fixed).
    pub fn element_free_dofs(&self, e: usize) -> Vec<Option<usize>> {
        self.mesh.element_dofs(e).map(|d| self.free_index[d]).collect()
    }

    /// Assembles `K = sum E_e K_unit` and `M = sum rho_e M_unit + point masses`.
    pub fn assemble(&self, youngs: &[f64], density: &[f64]) -> Result<(CsrMatrix, CsrMatrix)> {
        let n_ele = self.mesh.num_elements();
        for (name, v) in [("stiffness", youngs), ("mass", density)] {
            if v.len() != n_ele {
                return Err(Error::Shape { expected: n_ele, got: v.len() });
            }
            if let Some(e) = v.iter().position(|&c| !(c > 0.0) || !c.is_finite()) {
                return Err(Error::Assembly(format!("{name} coefficient of element {e} is {}", v[e])));
            }
        }
        let mut k = self.pattern.clone();
        let mut m = self.pattern.clone();
        for e in 0..n_ele {
            let unit = self.unit(e);
            let dofs = self.element_free_dofs(e);
            for (a, ra) in dofs.iter().enumerate() {
                let Some(r) = *ra else { continue };
                for (b, cb) in dofs.iter().enumerate() {
                    let Some(c) = *cb else { continue };
                    let pos = k.position(r, c).expect("pattern covers element couplings");
                    k.values_mut()[pos] += youngs[e] * unit.stiffness[(a, b)];
                    m.values_mut()[pos] += density[e] * unit.mass[(a, b)];
                }
            }
        }
        for (i, &pm) in self.lumped.iter().enumerate() {
            if pm != 0.0 {
                let pos = m.position(i, i).expect("diagonal present");
                m.values_mut()[pos] += pm;
            }
        }
        Ok((k, m))
    }

    /// Element-local vector of a free-DOF field (fixed DOFs read as zero).
    pub fn gather(&self, e: usize, field: &[f64]) -> DVector<f64> {
        let dofs = self.element_free_dofs(e);
        DVector::from_iterator(dofs.len(), dofs.iter().map(|d| d.map_or(0.0, |i| field[i])))
    }

    /// Per-element `(phi_e^T K_unit phi_e, phi_e^T M_unit phi_e)`.
    pub fn element_energies(&self, phi: &[f64]) -> Vec<(f64, f64)> {
        (0..self.mesh.num_elements())
            .map(|e| {
                let u = self.unit(e);
                let pe = self.gather(e, phi);
                (pe.dot(&(&u.stiffness * &pe)), pe.dot(&(&u.mass * &pe)))
            })
            .collect()
    }

    /// Bilinear version of [`Self::element_energies`] for two fields.
    pub fn element_cross_energies(&self, a: &[f64], b: &[f64]) -> Vec<(f64, f64)> {
        (0..self.mesh.num_elements())
            .map(|e| {
                let u = self.unit(e);
                let (pa, pb) = (self.gather(e, a), self.gather(e, b));
                (pa.dot(&(&u.stiffness * &pb)), pa.dot(&(&u.mass * &pb)))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::Support;
    use nalgebra::SymmetricEigen;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn square(side: f64) -> Vec<[f64; 3]> {
        vec![[0.0, 0.0, 0.0], [side, 0.0, 0.0], [side, side, 0.0], [0.0, side, 0.0]]
    }

    fn cube() -> Vec<[f64; 3]> {
        let mut c = square(1.0);
        c.extend(square(1.0).iter().map(|p| [p[0], p[1], 1.0]));
        c
    }

    fn count_zero_eigs(k: &DMatrix<f64>) -> usize {
        let tr = k.trace();
        SymmetricEigen::new(k.clone()).eigenvalues.iter().filter(|v| v.abs() < 1e-10 * tr).count()
    }

    #[test]
    fn q4_rigid_modes_and_mass() {
        let u = unit_matrices(&square(1.0), 0.3, 2, PlaneModel::Strain).unwrap();
        assert_eq!(count_zero_eigs(&u.stiffness), 3);
        assert!((&u.stiffness - u.stiffness.transpose()).amax() <= 1e-12 * u.stiffness.amax());
        let x_mass: f64 = (0..4).flat_map(|a| (0..4).map(move |b| (a, b))).map(|(a, b)| u.mass[(2 * a, 2 * b)]).sum();
        assert!((x_mass - 1.0).abs() < 1e-14);
        assert!(SymmetricEigen::new(u.mass.clone()).eigenvalues.min() > 0.0);
    }

    #[test]
    fn h8_rigid_modes_and_mass() {
        let u = unit_matrices(&cube(), 0.3, 3, PlaneModel::Strain).unwrap();
        assert_eq!(count_zero_eigs(&u.stiffness), 6);
        for k in 0..3 {
            let s: f64 = (0..8).flat_map(|a| (0..8).map(move |b| (a, b))).map(|(a, b)| u.mass[(3 * a + k, 3 * b + k)]).sum();
            assert!((s - 1.0).abs() < 1e-14);
        }
        assert!(SymmetricEigen::new(u.mass.clone()).eigenvalues.min() > 0.0);
    }

    #[test]
    fn q4_scaling() {
        let a = unit_matrices(&square(1.0), 0.3, 2, PlaneModel::Strain).unwrap();
        let b = unit_matrices(&square(2.0), 0.3, 2, PlaneModel::Strain).unwrap();
        assert!((&a.stiffness - &b.stiffness).amax() < 1e-13);
        assert!((&a.mass * 4.0 - &b.mass).amax() < 1e-13);
    }

    #[test]
    fn inverted_element_is_rejected() {
        let mut c = square(1.0);
        c.swap(1, 3);
        assert!(matches!(unit_matrices(&c, 0.3, 2, PlaneModel::Strain), Err(Error::InvalidGeometry(_))));
    }

    #[test]
    fn fully_fixed_element() {
        let m = Mesh::build_grid(2, &[1, 1], &[1.0, 1.0]).unwrap().apply_boundary(&[Support::corners()]).unwrap();
        assert!(matches!(FeModel::new(m, 0.3, PlaneModel::Strain), Err(Error::FullyConstrained)));
    }

    #[test]
    fn two_elements_sum_unit_matrices() {
        let mesh = Mesh::build_grid(2, &[2, 1], &[2.0, 1.0])
            .unwrap()
            .apply_boundary(&[Support {
                x: Some(crate::mesh::AxisPosition::Value(0.0)),
                y: Some(crate::mesh::AxisPosition::Value(0.0)),
                z: None,
                dofs: Some(vec![0]),
            }])
            .unwrap();
        let model = FeModel::new(mesh, 0.3, PlaneModel::Strain).unwrap();
        let (k, _) = model.assemble(&[1.0, 1.0], &[1.0, 1.0]).unwrap();
        let kd = k.to_dense();
        let mut expect = DMatrix::<f64>::zeros(model.num_free(), model.num_free());
        for e in 0..2 {
            let dofs = model.element_free_dofs(e);
            for (a, ra) in dofs.iter().enumerate() {
                for (b, rb) in dofs.iter().enumerate() {
                    if let (Some(r), Some(c)) = (ra, rb) {
                        expect[(*r, *c)] += model.unit(e).stiffness[(a, b)];
                    }
                }
            }
        }
        assert!((kd - expect).amax() < 1e-15);
    }

    /// Dense scatter straight from the element definition, without the CSR pattern.
    fn dense_assembly(mesh: &Mesh, e_coef: &[f64], r_coef: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
        let dim = mesh.dim();
        let n = mesh.num_dofs();
        let mut k = DMatrix::zeros(n, n);
        let mut m = DMatrix::zeros(n, n);
        for e in 0..mesh.num_elements() {
            let u = unit_matrices(&mesh.element_coords(e), 0.3, dim, PlaneModel::Strain).unwrap();
            let dofs: Vec<usize> = mesh.element_dofs(e).collect();
            for (a, &ga) in dofs.iter().enumerate() {
                for (b, &gb) in dofs.iter().enumerate() {
                    k[(ga, gb)] += e_coef[e] * u.stiffness[(a, b)];
                    m[(ga, gb)] += r_coef[e] * u.mass[(a, b)];
                }
            }
        }
        for pm in mesh.point_masses() {
            for c in 0..dim {
                m[(pm.node * dim + c, pm.node * dim + c)] += pm.mass;
            }
        }
        let free: Vec<usize> = (0..n).filter(|d| !mesh.fixed_dofs().contains(d)).collect();
        let pick = |a: &DMatrix<f64>| DMatrix::from_fn(free.len(), free.len(), |i, j| a[(free[i], free[j])]);
        (pick(&k), pick(&m))
    }

    #[test]
    fn random_coefficients_match_dense_assembly() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mesh = Mesh::build_grid(2, &[3, 3], &[1.0, 1.0])
            .unwrap()
            .apply_boundary(&[Support::corners()])
            .unwrap()
            .add_point_mass(&[0.5, 0.5], 0.4)
            .unwrap();
        let e: Vec<f64> = (0..9).map(|_| rng.random_range(0.01..2.0)).collect();
        let r: Vec<f64> = (0..9).map(|_| rng.random_range(0.01..2.0)).collect();
        let model = FeModel::new(mesh.clone(), 0.3, PlaneModel::Strain).unwrap();
        let (k, m) = model.assemble(&e, &r).unwrap();
        let (kd, md) = dense_assembly(&mesh, &e, &r);
        assert!((k.to_dense() - kd).amax() <= 1e-12);
        assert!((m.to_dense() - md).amax() <= 1e-12);
    }

    #[test]
    fn nonpositive_coefficient_is_rejected() {
        let mesh = Mesh::build_grid(2, &[2, 2], &[1.0, 1.0]).unwrap().apply_boundary(&[Support::corners()]).unwrap();
        let model = FeModel::new(mesh, 0.3, PlaneModel::Strain).unwrap();
        assert!(matches!(model.assemble(&[1.0, 1.0, 0.0, 1.0], &[1.0; 4]), Err(Error::Assembly(_))));
        assert!(model.assemble(&[1.0; 3], &[1.0; 4]).is_err());
    }
}
