//! Density-to-property interpolation laws.
//!
//! Four schemes are supported: solid/void (modified SIMP), two solids without
//! void, and two or three solids with a void phase. Every evaluation returns
//! Young's modulus and mass density together with their partial derivatives
//! with respect to each density channel.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slack allowed on the density box; filtered densities are convex
/// combinations and may overshoot a bound by a few ulps.
const DOMAIN_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeKind {
    SolidVoid,
    BiMaterial,
    BiVoid,
    TriVoid,
}

impl SchemeKind {
    pub fn channels(self) -> usize {
        match self {
            SchemeKind::SolidVoid | SchemeKind::BiMaterial => 1,
            SchemeKind::BiVoid => 2,
            SchemeKind::TriVoid => 3,
        }
    }

    pub fn phases(self) -> usize {
        match self {
            SchemeKind::SolidVoid => 1,
            SchemeKind::BiMaterial | SchemeKind::BiVoid => 2,
            SchemeKind::TriVoid => 3,
        }
    }

    pub fn has_void(self) -> bool {
        self != SchemeKind::BiMaterial
    }
}

/// Coefficients `(c1, c2)` making `c1 r^p + c2 r^(p+1)` meet the linear law
/// `r` with matching value and slope at `r = rho_t`.
pub fn continuity_coeffs(p2: f64, rho_t: f64) -> Result<(f64, f64)> {
    if !(rho_t > 0.0 && rho_t < 1.0) {
        return Err(Error::InvalidMaterial(format!("threshold must lie in (0, 1), got {rho_t}")));
    }
    if !(p2 >= 1.0) {
        return Err(Error::InvalidMaterial(format!("mass penalty must be >= 1, got {p2}")));
    }
    // With a = c1 T^p and b = c2 T^(p+1): a + b = T and p a + (p+1) b = T.
    let c1 = p2 * rho_t.powf(1.0 - p2);
    let c2 = (1.0 - p2) * rho_t.powf(-p2);
    Ok((c1, c2))
}

/// Interpolated properties at one element.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaterialPoint {
    pub youngs: f64,
    pub density: f64,
    /// `dE/d rho_i` for each channel; unused trailing entries are zero.
    pub d_youngs: [f64; 3],
    pub d_density: [f64; 3],
    pub channels: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaterialScheme {
    kind: SchemeKind,
    youngs: Vec<f64>,
    densities: Vec<f64>,
    poisson: f64,
    p1: f64,
    p2: f64,
    p_bi: f64,
    rho_t: f64,
    rho_l: f64,
    c1: f64,
    c2: f64,
}

/// User-facing parameters; [`MaterialScheme::new`] validates them.
#[derive(Debug, Clone, PartialEq)]
pub struct SchemeParams {
    pub kind: SchemeKind,
    pub youngs: Vec<f64>,
    pub densities: Vec<f64>,
    pub poisson: f64,
    pub p1: f64,
    pub p2: f64,
    pub p_bi: f64,
    pub rho_t: f64,
    pub rho_l: f64,
}

impl SchemeParams {
    /// Solid/void defaults: `p1 = 3`, `p2 = 6`, threshold 0.1 (2D) or 0.02 (3D).
    pub fn solid_void(youngs: f64, density: f64, dim: usize) -> Self {
        Self {
            kind: SchemeKind::SolidVoid,
            youngs: vec![youngs],
            densities: vec![density],
            poisson: 0.3,
            p1: 3.0,
            p2: 6.0,
            p_bi: 3.0,
            rho_t: default_threshold(dim),
            rho_l: 1e-4,
        }
    }
}

pub fn default_threshold(dim: usize) -> f64 {
    if dim == 3 {
        0.02
    } else {
        0.1
    }
}

impl MaterialScheme {
    pub fn new(p: SchemeParams) -> Result<Self> {
        let phases = p.kind.phases();
        if p.youngs.len() != phases || p.densities.len() != phases {
            return Err(Error::InvalidMaterial(format!(
                "{:?} needs {phases} moduli and densities, got {} and {}",
                p.kind,
                p.youngs.len(),
                p.densities.len()
            )));
        }
        if p.youngs.iter().chain(&p.densities).any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidMaterial("moduli and densities must be positive".into()));
        }
        if !(p.poisson > 0.0 && p.poisson < 0.5) {
            return Err(Error::InvalidMaterial(format!("Poisson ratio must lie in (0, 0.5), got {}", p.poisson)));
        }
        if !(p.p1 >= 1.0) || !(p.p2 >= 1.0) || !(p.p_bi >= 1.0) {
            return Err(Error::InvalidMaterial("penalties must be >= 1".into()));
        }
        let (c1, c2) = continuity_coeffs(p.p2, p.rho_t)?;
        let rho_l = if p.kind.has_void() { p.rho_l } else { 0.0 };
        if p.kind.has_void() && !(rho_l > 0.0 && rho_l <= p.rho_t) {
            return Err(Error::InvalidMaterial(format!(
                "lower density bound must lie in (0, {}], got {rho_l}",
                p.rho_t
            )));
        }
        Ok(Self {
            kind: p.kind,
            youngs: p.youngs,
            densities: p.densities,
            poisson: p.poisson,
            p1: p.p1,
            p2: p.p2,
            p_bi: p.p_bi,
            rho_t: p.rho_t,
            rho_l,
            c1,
            c2,
        })
    }

    pub fn kind(&self) -> SchemeKind {
        self.kind
    }

    pub fn channels(&self) -> usize {
        self.kind.channels()
    }

    pub fn poisson(&self) -> f64 {
        self.poisson
    }

    pub fn rho_t(&self) -> f64 {
        self.rho_t
    }

    pub fn rho_l(&self) -> f64 {
        self.rho_l
    }

    pub fn coeffs(&self) -> (f64, f64) {
        (self.c1, self.c2)
    }

    pub fn youngs(&self) -> &[f64] {
        &self.youngs
    }

    pub fn densities(&self) -> &[f64] {
        &self.densities
    }

    /// Lower bound of channel `c`; only the void-controlling first channel is
    /// bounded away from zero.
    pub fn lower_bound(&self, c: usize) -> f64 {
        if c == 0 {
            self.rho_l
        } else {
            0.0
        }
    }

    fn check(&self, c: usize, v: f64) -> Result<()> {
        let lo = self.lower_bound(c);
        if v.is_finite() && v >= lo - DOMAIN_SLACK && v <= 1.0 + DOMAIN_SLACK {
            Ok(())
        } else {
            Err(Error::DensityDomain { channel: c, value: v, lower: lo, upper: 1.0 })
        }
    }

    /// Mass-penalty factor `g(r)` and its slope: high-order polynomial below
    /// the threshold, identity above.
    fn mass_factor(&self, r: f64) -> (f64, f64) {
        if r <= self.rho_t {
            let p = self.p2;
            let rp1 = r.powf(p - 1.0);
            let g = (self.c1 + self.c2 * r) * rp1 * r;
            let dg = p * self.c1 * rp1 + (p + 1.0) * self.c2 * rp1 * r;
            (g, dg)
        } else {
            (r, 1.0)
        }
    }

    /// Evaluates the scheme at one element's densities (one value per channel).
    pub fn interpolate(&self, rho: &[f64]) -> Result<MaterialPoint> {
        if rho.len() != self.channels() {
            return Err(Error::Shape { expected: self.channels(), got: rho.len() });
        }
        for (c, &v) in rho.iter().enumerate() {
            self.check(c, v)?;
        }
        Ok(match self.kind {
            SchemeKind::SolidVoid => self.solid_void(rho[0]),
            SchemeKind::BiMaterial => self.bi(rho[0]),
            SchemeKind::BiVoid => self.bi_void(rho[0], rho[1]),
            SchemeKind::TriVoid => self.tri_void(rho[0], rho[1], rho[2]),
        })
    }

    fn solid_void(&self, r: f64) -> MaterialPoint {
        let (es, rs) = (self.youngs[0], self.densities[0]);
        let p1 = self.p1;
        let (g, dg) = self.mass_factor(r);
        MaterialPoint {
            youngs: r.powf(p1) * es,
            density: g * rs,
            d_youngs: [p1 * r.powf(p1 - 1.0) * es, 0.0, 0.0],
            d_density: [dg * rs, 0.0, 0.0],
            channels: 1,
        }
    }

    fn bi(&self, r: f64) -> MaterialPoint {
        let (e1, e2) = (self.youngs[0], self.youngs[1]);
        let (r1, r2) = (self.densities[0], self.densities[1]);
        let p = self.p_bi;
        let w = r.powf(p);
        MaterialPoint {
            youngs: w * e1 + (1.0 - w) * e2,
            density: r * r1 + (1.0 - r) * r2,
            d_youngs: [p * r.powf(p - 1.0) * (e1 - e2), 0.0, 0.0],
            d_density: [r1 - r2, 0.0, 0.0],
            channels: 1,
        }
    }

    fn bi_void(&self, a: f64, b: f64) -> MaterialPoint {
        let (e1, e2) = (self.youngs[0], self.youngs[1]);
        let (r1, r2) = (self.densities[0], self.densities[1]);
        let p1 = self.p1;
        let wa = a.powf(p1);
        let dwa = p1 * a.powf(p1 - 1.0);
        let wb = b.powf(p1);
        let dwb = p1 * b.powf(p1 - 1.0);
        let e12 = wb * e1 + (1.0 - wb) * e2;
        let r12 = b * r1 + (1.0 - b) * r2;
        let (g, dg) = self.mass_factor(a);
        MaterialPoint {
            youngs: wa * e12,
            density: g * r12,
            d_youngs: [dwa * e12, wa * dwb * (e1 - e2), 0.0],
            d_density: [dg * r12, g * (r1 - r2), 0.0],
            channels: 2,
        }
    }

    fn tri_void(&self, a: f64, b: f64, c: f64) -> MaterialPoint {
        let (e1, e2, e3) = (self.youngs[0], self.youngs[1], self.youngs[2]);
        let (r1, r2, r3) = (self.densities[0], self.densities[1], self.densities[2]);
        let p1 = self.p1;
        let pw = |v: f64| (v.powf(p1), p1 * v.powf(p1 - 1.0));
        let (wa, dwa) = pw(a);
        let (wb, dwb) = pw(b);
        let (wc, dwc) = pw(c);
        let e12 = wc * e1 + (1.0 - wc) * e2;
        let e123 = wb * e12 + (1.0 - wb) * e3;
        let r12 = c * r1 + (1.0 - c) * r2;
        let r123 = b * r12 + (1.0 - b) * r3;
        let (g, dg) = self.mass_factor(a);
        MaterialPoint {
            youngs: wa * e123,
            density: g * r123,
            d_youngs: [dwa * e123, wa * dwb * (e12 - e3), wa * wb * dwc * (e1 - e2)],
            d_density: [dg * r123, g * (r12 - r3), g * b * (r1 - r2)],
            channels: 3,
        }
    }
}
