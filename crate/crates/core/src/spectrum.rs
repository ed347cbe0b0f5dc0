//! Eigenvalue clustering, cluster means, their sensitivities, and smooth aggregates.

use std::ops::Range;

use crate::eigen::EigenSet;
use crate::error::{Error, Result};
use crate::fem::FeModel;
use crate::material::MaterialPoint;

pub const DEFAULT_CLUSTER_TOL: f64 = 1e-8;

/// Contiguous eigen-index ranges grouped by relative distance to each cluster's minimum.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSet {
    clusters: Vec<Range<usize>>,
    means: Vec<f64>,
    last_complete: bool,
    tol: f64,
}

impl ClusterSet {
    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    pub fn members(&self, q: usize) -> Range<usize> {
        self.clusters[q].clone()
    }

    pub fn size(&self, q: usize) -> usize {
        self.clusters[q].len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.clusters.iter().map(|r| r.len()).collect()
    }

    pub fn mean(&self, q: usize) -> f64 {
        self.means[q]
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    /// Whether cluster `q` is known to hold all eigenvalues at its level.
    pub fn is_complete(&self, q: usize) -> bool {
        q + 1 < self.clusters.len() || (q + 1 == self.clusters.len() && self.last_complete)
    }

    /// Cluster containing eigen-index `i`.
    pub fn cluster_of(&self, i: usize) -> Option<usize> {
        self.clusters.iter().position(|r| r.contains(&i))
    }

    /// Number of eigenvalues in the first `count` clusters.
    pub fn count_through(&self, count: usize) -> usize {
        self.clusters[..count.min(self.clusters.len())].iter().map(|r| r.len()).sum()
    }

    /// Marks the last cluster complete, for when the whole spectrum was computed.
    pub fn mark_exhaustive(&mut self) {
        self.last_complete = true;
    }

    /// Keeps the first `count` clusters, which stay complete if a later one existed.
    pub fn truncate(&mut self, count: usize) {
        if count < self.clusters.len() {
            self.clusters.truncate(count);
            self.means.truncate(count);
            self.last_complete = true;
        }
    }
}

/// Greedy anchored clustering. The last cluster is flagged incomplete since
/// nothing beyond it was seen.
pub fn cluster(values: &[f64], tol: f64) -> Result<ClusterSet> {
    if !(tol > 0.0) {
        return Err(Error::Parameter(format!("cluster tolerance must be positive, got {tol}")));
    }
    if let Some(i) = values.iter().position(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::Contract(format!("eigenvalue {i} is {} (must be positive)", values[i])));
    }
    if let Some(i) = values.windows(2).position(|w| w[1] < w[0]) {
        return Err(Error::Contract(format!("eigenvalues not ascending at index {}", i + 1)));
    }
    let mut clusters = Vec::new();
    let mut start = 0;
    while start < values.len() {
        let anchor = values[start];
        let mut end = start + 1;
        while end < values.len() && (values[end] - anchor).abs() / anchor.abs() <= tol {
            end += 1;
        }
        clusters.push(start..end);
        start = end;
    }
    let means = clusters.iter().map(|r| cluster_mean(&values[r.clone()])).collect::<Result<_>>()?;
    Ok(ClusterSet { clusters, means, last_complete: false, tol })
}

pub fn cluster_mean(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Contract("mean of an empty cluster".into()));
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// `d lambda / d rho_{c,e}` for one eigenpair, indexed `[channel][element]`.
pub fn eigenpair_gradient(model: &FeModel, materials: &[MaterialPoint], lambda: f64, phi: &[f64]) -> Result<Vec<Vec<f64>>> {
    let ne = model.mesh().num_elements();
    if materials.len() != ne {
        return Err(Error::Shape { expected: ne, got: materials.len() });
    }
    if phi.len() != model.num_free() {
        return Err(Error::Shape { expected: model.num_free(), got: phi.len() });
    }
    let channels = materials.first().map_or(0, |m| m.channels);
    let energies = model.element_energies(phi);
    let mut g = vec![vec![0.0; ne]; channels];
    for (e, (mat, (ke, me))) in materials.iter().zip(energies).enumerate() {
        for (c, gc) in g.iter_mut().enumerate() {
            gc[e] = mat.d_youngs[c] * ke - lambda * mat.d_density[c] * me;
        }
    }
    Ok(g)
}

/// Gradient of a simple (singleton-cluster) eigenvalue.
pub fn simple_eig_sensitivity(
    model: &FeModel,
    materials: &[MaterialPoint],
    eigs: &EigenSet,
    clusters: &ClusterSet,
    index: usize,
) -> Result<Vec<Vec<f64>>> {
    let q = clusters.cluster_of(index).ok_or_else(|| Error::Contract(format!("eigen-index {index} is not clustered")))?;
    if clusters.size(q) != 1 {
        return Err(Error::Contract(format!(
            "eigenvalue {index} belongs to a cluster of size {}; use the cluster mean",
            clusters.size(q)
        )));
    }
    eigenpair_gradient(model, materials, eigs.values[index], &eigs.vectors[index])
}

/// Gradient of the mean of cluster `q`, averaged over its members.
pub fn cluster_mean_sensitivity(
    model: &FeModel,
    materials: &[MaterialPoint],
    eigs: &EigenSet,
    clusters: &ClusterSet,
    q: usize,
) -> Result<Vec<Vec<f64>>> {
    let members = clusters.members(q);
    if members.end > eigs.vectors.len() {
        return Err(Error::Contract(format!("cluster {q} needs eigenvectors up to index {}", members.end - 1)));
    }
    let weight = 1.0 / members.len() as f64;
    let mut acc: Option<Vec<Vec<f64>>> = None;
    for i in members {
        let g = eigenpair_gradient(model, materials, eigs.values[i], &eigs.vectors[i])?;
        match acc.as_mut() {
            None => acc = Some(g.into_iter().map(|c| c.into_iter().map(|v| v * weight).collect()).collect()),
            Some(a) => a.iter_mut().zip(g).for_each(|(ac, gc)| ac.iter_mut().zip(gc).for_each(|(x, y)| *x += y * weight)),
        }
    }
    Ok(acc.unwrap_or_default())
}

/// `beta0 (sum (lambda/beta0)^p)^(1/p)` and its partials; `beta0` defaults to the maximum.
pub fn pnorm_stable(values: &[f64], p: f64, beta0: Option<f64>) -> Result<(f64, Vec<f64>)> {
    if !(p >= 1.0) {
        return Err(Error::Parameter(format!("p-norm exponent must be >= 1, got {p}")));
    }
    let b = aggregate_base(values, beta0)?;
    let s: f64 = values.iter().map(|v| (v / b).powf(p)).sum();
    let value = b * s.powf(1.0 / p);
    let outer = s.powf(1.0 / p - 1.0);
    Ok((value, values.iter().map(|v| outer * (v / b).powf(p - 1.0)).collect()))
}

/// `beta0 + ln(sum exp(q (lambda - beta0))) / q` and its softmax partials.
pub fn ks_stable(values: &[f64], q: f64, beta0: Option<f64>) -> Result<(f64, Vec<f64>)> {
    if !(q > 0.0) {
        return Err(Error::Parameter(format!("KS parameter must be positive, got {q}")));
    }
    let b = aggregate_base(values, beta0)?;
    let w: Vec<f64> = values.iter().map(|v| (q * (v - b)).exp()).collect();
    let s: f64 = w.iter().sum();
    Ok((b + s.ln() / q, w.iter().map(|x| x / s).collect()))
}

fn aggregate_base(values: &[f64], beta0: Option<f64>) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Contract("aggregate of no values".into()));
    }
    let b = beta0.unwrap_or_else(|| values.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
    if !(b > 0.0) {
        return Err(Error::Parameter(format!("aggregate base must be positive, got {b}")));
    }
    Ok(b)
}
