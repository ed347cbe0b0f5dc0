//! Structured Q4/H8 grids, supports, point masses and symmetry orbits.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which axes of the grid a node predicate constrains, and how.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AxisPosition {
    Named(AxisName),
    Value(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AxisName {
    Min,
    Max,
    Mid,
    /// Either the minimum or the maximum of the axis.
    Ends,
}

/// Geometric node predicate plus the DOF components it fixes.
///
/// `at[axis] = None` leaves that axis unconstrained, so `{x: ends, y: ends}`
/// selects the four corners of a rectangle and `{x: min}` a whole edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Support {
    #[serde(default)]
    pub x: Option<AxisPosition>,
    #[serde(default)]
    pub y: Option<AxisPosition>,
    #[serde(default)]
    pub z: Option<AxisPosition>,
    /// Fixed displacement components (0 = x, 1 = y, 2 = z); all when absent.
    #[serde(default)]
    pub dofs: Option<Vec<usize>>,
}

impl Support {
    pub fn new(x: Option<AxisPosition>, y: Option<AxisPosition>, z: Option<AxisPosition>) -> Self {
        Self { x, y, z, dofs: None }
    }

    pub fn corners() -> Self {
        Self::new(
            Some(AxisPosition::Named(AxisName::Ends)),
            Some(AxisPosition::Named(AxisName::Ends)),
            None,
        )
    }

    fn axis(&self, a: usize) -> Option<AxisPosition> {
        match a {
            0 => self.x,
            1 => self.y,
            _ => self.z,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointMass {
    pub node: usize,
    pub mass: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Symmetry {
    #[default]
    None,
    /// Mirror across the plane x = Lx/2.
    Half,
    /// Mirrors across x = Lx/2 and y = Ly/2.
    Quarter,
    /// Dihedral group of the square in the xy-plane (mirrors x, y and the diagonal).
    Eighth,
}

impl Symmetry {
    pub fn group_order(self) -> usize {
        match self {
            Symmetry::None => 1,
            Symmetry::Half => 2,
            Symmetry::Quarter => 4,
            Symmetry::Eighth => 8,
        }
    }
}

/// Regular grid of bilinear quadrilaterals (2D) or trilinear bricks (3D).
#[derive(Debug, Clone)]
pub struct Mesh {
    dim: usize,
    cells: [usize; 3],
    lengths: [f64; 3],
    coords: Vec<[f64; 3]>,
    connectivity: Vec<usize>,
    volumes: Vec<f64>,
    centroids: Vec<[f64; 3]>,
    fixed: BTreeSet<usize>,
    point_masses: Vec<PointMass>,
}

impl Mesh {
    /// Lexicographic grid: node `(i, j, k)` has id `i + (nx+1)(j + (ny+1)k)`,
    /// element `(i, j, k)` has id `i + nx(j + ny k)`.
    pub fn build_grid(dim: usize, cells: &[usize], lengths: &[f64]) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(Error::InvalidGeometry(format!("dimension must be 2 or 3, got {dim}")));
        }
        if cells.len() != dim || lengths.len() != dim {
            return Err(Error::InvalidGeometry(format!(
                "expected {dim} cell counts and side lengths, got {} and {}",
                cells.len(),
                lengths.len()
            )));
        }
        if cells.iter().any(|&c| c == 0) {
            return Err(Error::InvalidGeometry("cells per axis must be >= 1".into()));
        }
        if lengths.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
            return Err(Error::InvalidGeometry("side lengths must be positive".into()));
        }
        let mut n = [1usize; 3];
        let mut l = [0.0f64; 3];
        n[..dim].copy_from_slice(cells);
        l[..dim].copy_from_slice(lengths);
        if dim == 2 {
            n[2] = 1;
        }
        let (nx, ny, nz) = (n[0], n[1], n[2]);
        let h = [l[0] / nx as f64, l[1] / ny as f64, if dim == 3 { l[2] / nz as f64 } else { 0.0 }];

        let nnz = if dim == 3 { nz + 1 } else { 1 };
        let mut coords = Vec::with_capacity((nx + 1) * (ny + 1) * nnz);
        for k in 0..nnz {
            for j in 0..=ny {
                for i in 0..=nx {
                    coords.push([i as f64 * h[0], j as f64 * h[1], k as f64 * h[2]]);
                }
            }
        }

        let node = |i: usize, j: usize, k: usize| i + (nx + 1) * (j + (ny + 1) * k);
        let nodes_per = if dim == 2 { 4 } else { 8 };
        let n_ele = nx * ny * nz;
        let mut connectivity = Vec::with_capacity(n_ele * nodes_per);
        let mut centroids = Vec::with_capacity(n_ele);
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    let base = [node(i, j, k), node(i + 1, j, k), node(i + 1, j + 1, k), node(i, j + 1, k)];
                    connectivity.extend_from_slice(&base);
                    if dim == 3 {
                        connectivity.extend_from_slice(&[
                            node(i, j, k + 1),
                            node(i + 1, j, k + 1),
                            node(i + 1, j + 1, k + 1),
                            node(i, j + 1, k + 1),
                        ]);
                    }
                    centroids.push([
                        (i as f64 + 0.5) * h[0],
                        (j as f64 + 0.5) * h[1],
                        if dim == 3 { (k as f64 + 0.5) * h[2] } else { 0.0 },
                    ]);
                }
            }
        }
        let cell_volume = if dim == 2 { h[0] * h[1] } else { h[0] * h[1] * h[2] };

        Ok(Self {
            dim,
            cells: n,
            lengths: l,
            coords,
            connectivity,
            volumes: vec![cell_volume; n_ele],
            centroids,
            fixed: BTreeSet::new(),
            point_masses: Vec::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Cell counts per axis; the third entry is 1 for 2D meshes.
    pub fn cells(&self) -> [usize; 3] {
        self.cells
    }

    pub fn lengths(&self) -> [f64; 3] {
        self.lengths
    }

    pub fn num_nodes(&self) -> usize {
        self.coords.len()
    }

    pub fn num_elements(&self) -> usize {
        self.volumes.len()
    }

    pub fn nodes_per_element(&self) -> usize {
        if self.dim == 2 {
            4
        } else {
            8
        }
    }

    pub fn dofs_per_node(&self) -> usize {
        self.dim
    }

    pub fn num_dofs(&self) -> usize {
        self.num_nodes() * self.dim
    }

    pub fn num_free_dofs(&self) -> usize {
        self.num_dofs() - self.fixed.len()
    }

    pub fn coords(&self) -> &[[f64; 3]] {
        &self.coords
    }

    pub fn element_nodes(&self, e: usize) -> &[usize] {
        let n = self.nodes_per_element();
        &self.connectivity[e * n..(e + 1) * n]
    }

    /// Global DOF ids of an element in node-major order.
    pub fn element_dofs(&self, e: usize) -> impl Iterator<Item = usize> + '_ {
        let d = self.dim;
        self.element_nodes(e).iter().flat_map(move |&n| (0..d).map(move |c| n * d + c))
    }

    pub fn element_coords(&self, e: usize) -> Vec<[f64; 3]> {
        self.element_nodes(e).iter().map(|&n| self.coords[n]).collect()
    }

    pub fn volumes(&self) -> &[f64] {
        &self.volumes
    }

    pub fn total_volume(&self) -> f64 {
        self.volumes.iter().sum()
    }

    pub fn centroids(&self) -> &[[f64; 3]] {
        &self.centroids
    }

    /// Grid indices `(i, j, k)` of an element.
    pub fn element_index(&self, e: usize) -> [usize; 3] {
        let [nx, ny, _] = self.cells;
        [e % nx, (e / nx) % ny, e / (nx * ny)]
    }

    pub fn element_at(&self, idx: [usize; 3]) -> usize {
        let [nx, ny, _] = self.cells;
        idx[0] + nx * (idx[1] + ny * idx[2])
    }

    pub fn fixed_dofs(&self) -> &BTreeSet<usize> {
        &self.fixed
    }

    pub fn point_masses(&self) -> &[PointMass] {
        &self.point_masses
    }

    fn diagonal(&self) -> f64 {
        self.lengths[..self.dim].iter().map(|l| l * l).sum::<f64>().sqrt()
    }

    fn matches(&self, p: &[f64; 3], support: &Support, tol: f64) -> bool {
        (0..self.dim).all(|a| match support.axis(a) {
            None => true,
            Some(AxisPosition::Value(v)) => (p[a] - v).abs() <= tol,
            Some(AxisPosition::Named(name)) => {
                let l = self.lengths[a];
                match name {
                    AxisName::Min => p[a].abs() <= tol,
                    AxisName::Max => (p[a] - l).abs() <= tol,
                    AxisName::Mid => (p[a] - 0.5 * l).abs() <= tol,
                    AxisName::Ends => p[a].abs() <= tol || (p[a] - l).abs() <= tol,
                }
            }
        })
    }

    /// Fixes the DOFs selected by each support predicate.
    ///
    /// Every predicate must match at least one node, and at least one DOF must
    /// end up fixed so rigid-body motion is suppressed.
    pub fn apply_boundary(mut self, supports: &[Support]) -> Result<Self> {
        if supports.is_empty() {
            return Err(Error::EmptySupport("no supports given".into()));
        }
        let tol = 1e-9 * self.diagonal();
        for (s_idx, support) in supports.iter().enumerate() {
            let comps: Vec<usize> = match &support.dofs {
                Some(c) => c.clone(),
                None => (0..self.dim).collect(),
            };
            if comps.is_empty() || comps.iter().any(|&c| c >= self.dim) {
                return Err(Error::InvalidGeometry(format!(
                    "support {s_idx}: dof components must lie in 0..{}",
                    self.dim
                )));
            }
            let mut hits = 0;
            for n in 0..self.coords.len() {
                if self.matches(&self.coords[n], support, tol) {
                    hits += 1;
                    for &c in &comps {
                        self.fixed.insert(n * self.dim + c);
                    }
                }
            }
            if hits == 0 {
                return Err(Error::EmptySupport(format!("support {s_idx} matches no node")));
            }
        }
        Ok(self)
    }

    /// Attaches a lumped mass to the grid node nearest to `at`.
    pub fn add_point_mass(mut self, at: &[f64], mass: f64) -> Result<Self> {
        if !(mass >= 0.0) || !mass.is_finite() {
            return Err(Error::InvalidGeometry(format!("point mass must be >= 0, got {mass}")));
        }
        if at.len() != self.dim {
            return Err(Error::InvalidGeometry(format!(
                "point mass location needs {} coordinates",
                self.dim
            )));
        }
        let dist2 = |p: &[f64; 3]| (0..self.dim).map(|a| (p[a] - at[a]).powi(2)).sum::<f64>();
        let node = (0..self.coords.len())
            .min_by(|&a, &b| dist2(&self.coords[a]).total_cmp(&dist2(&self.coords[b])))
            .expect("grid has nodes");
        self.point_masses.push(PointMass { node, mass });
        Ok(self)
    }

    /// Applies a node relabelling `new_id = perm[old_id]`; geometry is unchanged.
    pub fn renumber_nodes(&self, perm: &[usize]) -> Result<Self> {
        let n = self.num_nodes();
        if perm.len() != n {
            return Err(Error::Shape { expected: n, got: perm.len() });
        }
        let mut seen = vec![false; n];
        for &p in perm {
            if p >= n || seen[p] {
                return Err(Error::InvalidGeometry("node permutation is not a bijection".into()));
            }
            seen[p] = true;
        }
        let mut coords = vec![[0.0; 3]; n];
        for (old, &new) in perm.iter().enumerate() {
            coords[new] = self.coords[old];
        }
        let d = self.dim;
        Ok(Self {
            coords,
            connectivity: self.connectivity.iter().map(|&v| perm[v]).collect(),
            fixed: self.fixed.iter().map(|&dof| perm[dof / d] * d + dof % d).collect(),
            point_masses: self
                .point_masses
                .iter()
                .map(|pm| PointMass { node: perm[pm.node], mass: pm.mass })
                .collect(),
            ..self.clone()
        })
    }

    /// Checks the structural invariants a finished mesh must satisfy.
    pub fn validate(&self) -> Result<()> {
        let n = self.num_nodes();
        for e in 0..self.num_elements() {
            let nodes = self.element_nodes(e);
            let distinct: BTreeSet<_> = nodes.iter().collect();
            if distinct.len() != nodes.len() || nodes.iter().any(|&v| v >= n) {
                return Err(Error::InvalidGeometry(format!("element {e} has bad connectivity")));
            }
        }
        if self.volumes.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::InvalidGeometry("nonpositive element volume".into()));
        }
        if self.fixed.is_empty() {
            return Err(Error::EmptySupport("no fixed DOFs".into()));
        }
        Ok(())
    }

    fn mirror_ops(&self, symmetry: Symmetry) -> Result<Vec<[[i8; 3]; 3]>> {
        // Each op is a signed permutation of the first two axes acting on
        // centred grid indices; z is never mirrored.
        let id = [[1, 0, 0], [0, 1, 0], [0, 0, 1]];
        let mx = [[-1, 0, 0], [0, 1, 0], [0, 0, 1]];
        let my = [[1, 0, 0], [0, -1, 0], [0, 0, 1]];
        let mxy = [[-1, 0, 0], [0, -1, 0], [0, 0, 1]];
        let swap = [[0, 1, 0], [1, 0, 0], [0, 0, 1]];
        let swap_mx = [[0, -1, 0], [1, 0, 0], [0, 0, 1]];
        let swap_my = [[0, 1, 0], [-1, 0, 0], [0, 0, 1]];
        let swap_mxy = [[0, -1, 0], [-1, 0, 0], [0, 0, 1]];
        Ok(match symmetry {
            Symmetry::None => vec![id],
            Symmetry::Half => vec![id, mx],
            Symmetry::Quarter => vec![id, mx, my, mxy],
            Symmetry::Eighth => {
                let [nx, ny, _] = self.cells;
                let [lx, ly, _] = self.lengths;
                if nx != ny || (lx - ly).abs() > 1e-12 * lx.max(ly) {
                    return Err(Error::SymmetryMismatch(format!(
                        "eighth symmetry needs a square xy cross-section, got {nx}x{ny} cells on {lx}x{ly}"
                    )));
                }
                vec![id, mx, my, mxy, swap, swap_mx, swap_my, swap_mxy]
            }
        })
    }

    /// Groups elements into orbits of the reflection group named by `symmetry`.
    pub fn compute_orbits(&self, symmetry: Symmetry) -> Result<OrbitMap> {
        let ops = self.mirror_ops(symmetry)?;
        let n_ele = self.num_elements();
        let c = self.cells;
        let mut owner = vec![usize::MAX; n_ele];
        let mut orbits: Vec<Vec<usize>> = Vec::new();
        for e in 0..n_ele {
            if owner[e] != usize::MAX {
                continue;
            }
            let idx = self.element_index(e);
            // Twice the centred index is an odd integer, so mirrors stay exact.
            let centred: [i64; 3] =
                std::array::from_fn(|a| 2 * idx[a] as i64 + 1 - c[a] as i64);
            let mut members = BTreeSet::new();
            for op in &ops {
                let img: [i64; 3] = std::array::from_fn(|r| {
                    (0..3).map(|s| op[r][s] as i64 * centred[s]).sum()
                });
                let back: [usize; 3] =
                    std::array::from_fn(|a| ((img[a] + c[a] as i64 - 1) / 2) as usize);
                members.insert(self.element_at(back));
            }
            let orbit_id = orbits.len();
            for &m in &members {
                owner[m] = orbit_id;
            }
            orbits.push(members.into_iter().collect());
        }
        Ok(OrbitMap { symmetry, orbits, owner })
    }
}

/// Partition of elements into symmetry orbits; one design variable per orbit.
#[derive(Debug, Clone, PartialEq)]
pub struct OrbitMap {
    symmetry: Symmetry,
    orbits: Vec<Vec<usize>>,
    owner: Vec<usize>,
}

impl OrbitMap {
    pub fn identity(n_ele: usize) -> Self {
        Self {
            symmetry: Symmetry::None,
            orbits: (0..n_ele).map(|e| vec![e]).collect(),
            owner: (0..n_ele).collect(),
        }
    }

    pub fn symmetry(&self) -> Symmetry {
        self.symmetry
    }

    pub fn num_orbits(&self) -> usize {
        self.orbits.len()
    }

    pub fn num_elements(&self) -> usize {
        self.owner.len()
    }

    pub fn orbits(&self) -> &[Vec<usize>] {
        &self.orbits
    }

    /// Reduced index of the orbit containing element `e`.
    pub fn orbit_of(&self, e: usize) -> usize {
        self.owner[e]
    }
}
