//! Linear density filter and the symmetry-orbit design maps.
//!
//! The design chain is `x_reduced -> orbit_expand -> W x -> densities`;
//! gradients travel back through `W^T` and an orbit sum.

use crate::error::{Error, Result};
use crate::mesh::{Mesh, OrbitMap};

/// Row-normalized cone-weight filter `rho = W x` in CSR form.
#[derive(Debug, Clone)]
pub struct FilterOperator {
    radius: f64,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    weights: Vec<f64>,
}

impl FilterOperator {
    /// Weights `w_pq v_q / sum_q w_pq v_q` with `w_pq = max(r - |X_p - X_q|, 0)`.
    pub fn build(mesh: &Mesh, radius: f64) -> Result<Self> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::InvalidRadius(radius));
        }
        let n = mesh.num_elements();
        let dim = mesh.dim();
        let cells = mesh.cells();
        let lengths = mesh.lengths();
        let mut reach = [0usize; 3];
        for a in 0..dim {
            let h = lengths[a] / cells[a] as f64;
            reach[a] = (radius / h).ceil() as usize;
        }
        let centroids = mesh.centroids();
        let volumes = mesh.volumes();

        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut weights = Vec::new();
        row_ptr.push(0);
        for p in 0..n {
            let ip = mesh.element_index(p);
            let lo: [usize; 3] = std::array::from_fn(|a| ip[a].saturating_sub(reach[a]));
            let hi: [usize; 3] = std::array::from_fn(|a| (ip[a] + reach[a]).min(cells[a] - 1));
            let start = cols.len();
            let mut total = 0.0;
            for k in lo[2]..=hi[2] {
                for j in lo[1]..=hi[1] {
                    for i in lo[0]..=hi[0] {
                        let q = mesh.element_at([i, j, k]);
                        let d = (0..dim)
                            .map(|a| (centroids[p][a] - centroids[q][a]).powi(2))
                            .sum::<f64>()
                            .sqrt();
                        let w = (radius - d).max(0.0) * volumes[q];
                        if w > 0.0 {
                            cols.push(q);
                            weights.push(w);
                            total += w;
                        }
                    }
                }
            }
            for w in &mut weights[start..] {
                *w /= total;
            }
            row_ptr.push(cols.len());
        }
        Ok(Self { radius, row_ptr, cols, weights })
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn size(&self) -> usize {
        self.row_ptr.len() - 1
    }

    /// Nonzeros of row `p` as `(column, weight)` pairs.
    pub fn row(&self, p: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[p]..self.row_ptr[p + 1];
        self.cols[r.clone()].iter().copied().zip(self.weights[r].iter().copied())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len(self.size(), x.len())?;
        Ok((0..self.size()).map(|p| self.row(p).map(|(q, w)| w * x[q]).sum()).collect())
    }

    /// `g_x = W^T g_rho`.
    pub fn backward(&self, g: &[f64]) -> Result<Vec<f64>> {
        check_len(self.size(), g.len())?;
        let mut out = vec![0.0; self.size()];
        for (p, &gp) in g.iter().enumerate() {
            for (q, w) in self.row(p) {
                out[q] += w * gp;
            }
        }
        Ok(out)
    }
}

fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Shape { expected, got })
    }
}

/// Copies each reduced value onto every element of its orbit.
pub fn orbit_expand(orbits: &OrbitMap, reduced: &[f64]) -> Result<Vec<f64>> {
    check_len(orbits.num_orbits(), reduced.len())?;
    let mut full = vec![0.0; orbits.num_elements()];
    for (r, members) in orbits.orbits().iter().enumerate() {
        for &e in members {
            full[e] = reduced[r];
        }
    }
    Ok(full)
}

/// Sums a full-mesh gradient over each orbit (adjoint of [`orbit_expand`]).
pub fn orbit_reduce_grad(orbits: &OrbitMap, full: &[f64]) -> Result<Vec<f64>> {
    check_len(orbits.num_elements(), full.len())?;
    Ok(orbits.orbits().iter().map(|members| members.iter().map(|&e| full[e]).sum()).collect())
}

/// Composite map from reduced multi-channel design variables to filtered
/// element densities. Reduced variables are laid out channel-major.
#[derive(Debug, Clone)]
pub struct DensityMap {
    orbits: OrbitMap,
    filter: FilterOperator,
    channels: usize,
}

impl DensityMap {
    pub fn new(orbits: OrbitMap, filter: FilterOperator, channels: usize) -> Result<Self> {
        if orbits.num_elements() != filter.size() {
            return Err(Error::Shape { expected: filter.size(), got: orbits.num_elements() });
        }
        Ok(Self { orbits, filter, channels })
    }

    pub fn orbits(&self) -> &OrbitMap {
        &self.orbits
    }

    pub fn filter(&self) -> &FilterOperator {
        &self.filter
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn num_reduced(&self) -> usize {
        self.channels * self.orbits.num_orbits()
    }

    pub fn num_elements(&self) -> usize {
        self.orbits.num_elements()
    }

    /// Unfiltered full-mesh design field per channel.
    pub fn expand(&self, x_reduced: &[f64]) -> Result<Vec<Vec<f64>>> {
        check_len(self.num_reduced(), x_reduced.len())?;
        x_reduced.chunks(self.orbits.num_orbits()).map(|c| orbit_expand(&self.orbits, c)).collect()
    }

    /// Filtered densities `rho_c = W expand(x_c)` per channel.
    ///
    /// The filter commutes with the symmetry group, so each orbit's value is
    /// computed once and copied, which keeps the field exactly symmetric.
    pub fn densities(&self, x_reduced: &[f64]) -> Result<Vec<Vec<f64>>> {
        let ne = self.num_elements();
        Ok(self
            .expand(x_reduced)?
            .iter()
            .map(|x| {
                let mut rho = vec![0.0; ne];
                for members in self.orbits.orbits() {
                    let v: f64 = self.filter.row(members[0]).map(|(q, w)| w * x[q]).sum();
                    for &e in members {
                        rho[e] = v;
                    }
                }
                rho
            })
            .collect())
    }

    /// Pulls per-channel density gradients back to the reduced variables.
    pub fn pull_back(&self, g_rho: &[Vec<f64>]) -> Result<Vec<f64>> {
        check_len(self.channels, g_rho.len())?;
        let mut out = Vec::with_capacity(self.num_reduced());
        for g in g_rho {
            let gx = self.filter.backward(g)?;
            out.extend(orbit_reduce_grad(&self.orbits, &gx)?);
        }
        Ok(out)
    }
}
