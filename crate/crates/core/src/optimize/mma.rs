//! Method of Moving Asymptotes with a primal-dual interior-point subproblem solver.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct MmaParams {
    /// Fraction of each variable's range it may move per step.
    pub move_limit: f64,
    pub asy_init: f64,
    pub asy_incr: f64,
    pub asy_decr: f64,
    pub albefa: f64,
    /// Closest an asymptote may come to the current point, as a fraction of the range.
    pub asy_min: f64,
    pub a0: f64,
    pub c: f64,
    pub d: f64,
    /// Final barrier parameter of the subproblem solve.
    pub epsimin: f64,
}

impl Default for MmaParams {
    fn default() -> Self {
        Self {
            move_limit: 0.05,
            asy_init: 0.5,
            asy_incr: 1.2,
            asy_decr: 0.7,
            albefa: 0.1,
            asy_min: 1e-5,
            a0: 1.0,
            c: 1000.0,
            d: 1.0,
            epsimin: 1e-9,
        }
    }
}

/// Optimizer state carried between steps. Minimizes `f0` subject to `f_i <= 0`.
#[derive(Debug, Clone)]
pub struct Mma {
    params: MmaParams,
    xmin: Vec<f64>,
    xmax: Vec<f64>,
    low: Vec<f64>,
    upp: Vec<f64>,
    xold1: Vec<f64>,
    xold2: Vec<f64>,
    iter: usize,
}

impl Mma {
    pub fn new(xmin: Vec<f64>, xmax: Vec<f64>, params: MmaParams) -> Result<Self> {
        if xmin.len() != xmax.len() {
            return Err(Error::Shape { expected: xmin.len(), got: xmax.len() });
        }
        if let Some(i) = (0..xmin.len()).find(|&i| !(xmin[i] < xmax[i]) || !xmin[i].is_finite() || !xmax[i].is_finite()) {
            return Err(Error::Optimizer(format!("bad bounds [{}, {}] for variable {i}", xmin[i], xmax[i])));
        }
        if !(params.move_limit > 0.0) {
            return Err(Error::Parameter(format!("move limit must be positive, got {}", params.move_limit)));
        }
        let n = xmin.len();
        Ok(Self { params, xmin, xmax, low: vec![0.0; n], upp: vec![0.0; n], xold1: vec![], xold2: vec![], iter: 0 })
    }

    pub fn iteration(&self) -> usize {
        self.iter
    }

    /// One update from the current point, objective gradient, constraint values and Jacobian rows.
    pub fn step(&mut self, x: &[f64], df0: &[f64], fval: &[f64], dfdx: &[Vec<f64>]) -> Result<Vec<f64>> {
        let n = self.xmin.len();
        let m = fval.len();
        if x.len() != n || df0.len() != n {
            return Err(Error::Shape { expected: n, got: x.len().min(df0.len()) });
        }
        if dfdx.len() != m || dfdx.iter().any(|r| r.len() != n) {
            return Err(Error::Shape { expected: m, got: dfdx.len() });
        }
        self.iter += 1;
        let p = &self.params;
        let range: Vec<f64> = (0..n).map(|j| self.xmax[j] - self.xmin[j]).collect();

        if self.iter <= 2 {
            for j in 0..n {
                self.low[j] = x[j] - p.asy_init * range[j];
                self.upp[j] = x[j] + p.asy_init * range[j];
            }
        } else {
            for j in 0..n {
                let z = (x[j] - self.xold1[j]) * (self.xold1[j] - self.xold2[j]);
                let f = if z > 0.0 {
                    p.asy_incr
                } else if z < 0.0 {
                    p.asy_decr
                } else {
                    1.0
                };
                let low = x[j] - f * (self.xold1[j] - self.low[j]);
                let upp = x[j] + f * (self.upp[j] - self.xold1[j]);
                self.low[j] = low.clamp(x[j] - 10.0 * range[j], x[j] - p.asy_min * range[j]);
                self.upp[j] = upp.clamp(x[j] + p.asy_min * range[j], x[j] + 10.0 * range[j]);
            }
        }

        let mut alfa = vec![0.0; n];
        let mut beta = vec![0.0; n];
        for j in 0..n {
            alfa[j] = (self.low[j] + p.albefa * (x[j] - self.low[j])).max(x[j] - p.move_limit * range[j]).max(self.xmin[j]);
            beta[j] = (self.upp[j] - p.albefa * (self.upp[j] - x[j])).min(x[j] + p.move_limit * range[j]).min(self.xmax[j]);
        }

        let raa0 = 1e-5;
        let mut p0 = vec![0.0; n];
        let mut q0 = vec![0.0; n];
        let mut pm = DMatrix::zeros(m, n);
        let mut qm = DMatrix::zeros(m, n);
        let mut b = vec![0.0; m];
        for j in 0..n {
            let xmami = range[j].max(1e-5);
            let ux = self.upp[j] - x[j];
            let xl = x[j] - self.low[j];
            let (pp, qq) = (df0[j].max(0.0), (-df0[j]).max(0.0));
            let pq = 0.001 * (pp + qq) + raa0 / xmami;
            p0[j] = (pp + pq) * ux * ux;
            q0[j] = (qq + pq) * xl * xl;
            for i in 0..m {
                let g = dfdx[i][j];
                let (pp, qq) = (g.max(0.0), (-g).max(0.0));
                let pq = 0.001 * (pp + qq) + raa0 / xmami;
                pm[(i, j)] = (pp + pq) * ux * ux;
                qm[(i, j)] = (qq + pq) * xl * xl;
                b[i] += pm[(i, j)] / ux + qm[(i, j)] / xl;
            }
        }
        for i in 0..m {
            b[i] -= fval[i];
        }

        let sub = Subproblem {
            low: &self.low,
            upp: &self.upp,
            alfa: &alfa,
            beta: &beta,
            p0: &p0,
            q0: &q0,
            p: &pm,
            q: &qm,
            b: &b,
            a0: p.a0,
            c: p.c,
            d: p.d,
        };
        let xnew = sub.solve(p.epsimin)?;
        self.xold2 = std::mem::replace(&mut self.xold1, x.to_vec());
        if self.xold2.is_empty() {
            self.xold2 = x.to_vec();
        }
        Ok(xnew)
    }
}

struct Subproblem<'a> {
    low: &'a [f64],
    upp: &'a [f64],
    alfa: &'a [f64],
    beta: &'a [f64],
    p0: &'a [f64],
    q0: &'a [f64],
    p: &'a DMatrix<f64>,
    q: &'a DMatrix<f64>,
    b: &'a [f64],
    a0: f64,
    c: f64,
    d: f64,
}

/// Primal and dual unknowns of the subproblem (`a_i = 0` for every constraint).
#[derive(Clone)]
struct Point {
    x: Vec<f64>,
    y: Vec<f64>,
    z: f64,
    lam: Vec<f64>,
    xsi: Vec<f64>,
    eta: Vec<f64>,
    mu: Vec<f64>,
    zet: f64,
    s: Vec<f64>,
}

impl Subproblem<'_> {
    fn plam_qlam(&self, pt: &Point) -> (Vec<f64>, Vec<f64>) {
        let n = pt.x.len();
        let mut plam = self.p0.to_vec();
        let mut qlam = self.q0.to_vec();
        for (i, &l) in pt.lam.iter().enumerate() {
            for j in 0..n {
                plam[j] += self.p[(i, j)] * l;
                qlam[j] += self.q[(i, j)] * l;
            }
        }
        (plam, qlam)
    }

    fn gvec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.b.len())
            .map(|i| (0..x.len()).map(|j| self.p[(i, j)] / (self.upp[j] - x[j]) + self.q[(i, j)] / (x[j] - self.low[j])).sum())
            .collect()
    }

    fn residual(&self, pt: &Point, epsi: f64) -> Vec<f64> {
        let n = pt.x.len();
        let (plam, qlam) = self.plam_qlam(pt);
        let g = self.gvec(&pt.x);
        let mut r = Vec::with_capacity(3 * n + 4 * pt.y.len() + 2);
        for j in 0..n {
            let (ux, xl) = (self.upp[j] - pt.x[j], pt.x[j] - self.low[j]);
            r.push(plam[j] / (ux * ux) - qlam[j] / (xl * xl) - pt.xsi[j] + pt.eta[j]);
        }
        for i in 0..pt.y.len() {
            r.push(self.c + self.d * pt.y[i] - pt.mu[i] - pt.lam[i]);
        }
        r.push(self.a0 - pt.zet);
        for i in 0..pt.y.len() {
            r.push(g[i] - pt.y[i] + pt.s[i] - self.b[i]);
        }
        for j in 0..n {
            r.push(pt.xsi[j] * (pt.x[j] - self.alfa[j]) - epsi);
            r.push(pt.eta[j] * (self.beta[j] - pt.x[j]) - epsi);
        }
        for i in 0..pt.y.len() {
            r.push(pt.mu[i] * pt.y[i] - epsi);
            r.push(pt.lam[i] * pt.s[i] - epsi);
        }
        r.push(pt.zet * pt.z - epsi);
        r
    }

    fn solve(&self, epsimin: f64) -> Result<Vec<f64>> {
        let n = self.alfa.len();
        let m = self.b.len();
        let x: Vec<f64> = (0..n).map(|j| 0.5 * (self.alfa[j] + self.beta[j])).collect();
        let mut pt = Point {
            xsi: (0..n).map(|j| (1.0 / (x[j] - self.alfa[j])).max(1.0)).collect(),
            eta: (0..n).map(|j| (1.0 / (self.beta[j] - x[j])).max(1.0)).collect(),
            x,
            y: vec![1.0; m],
            z: 1.0,
            lam: vec![1.0; m],
            mu: vec![(0.5 * self.c).max(1.0); m],
            zet: 1.0,
            s: vec![1.0; m],
        };
        let norm = |r: &[f64]| r.iter().map(|v| v * v).sum::<f64>().sqrt();
        let maxabs = |r: &[f64]| r.iter().fold(0.0f64, |a, v| a.max(v.abs()));

        let mut epsi = 1.0;
        while epsi > epsimin {
            let res = self.residual(&pt, epsi);
            let mut resnorm = norm(&res);
            let mut resmax = maxabs(&res);
            let mut inner = 0;
            while resmax > 0.9 * epsi && inner < 200 {
                inner += 1;
                let dir = self.newton_direction(&pt, epsi)?;
                // Fraction-to-boundary step, then backtrack on the residual norm.
                let mut stm: f64 = 1.0;
                let ratio = |v: f64, dv: f64| -1.01 * dv / v;
                for (v, dv) in pt.y.iter().chain(&pt.lam).chain(&pt.xsi).chain(&pt.eta).chain(&pt.mu).chain(&pt.s).zip(
                    dir.y.iter().chain(&dir.lam).chain(&dir.xsi).chain(&dir.eta).chain(&dir.mu).chain(&dir.s),
                ) {
                    stm = stm.max(ratio(*v, *dv));
                }
                stm = stm.max(ratio(pt.z, dir.z)).max(ratio(pt.zet, dir.zet));
                for j in 0..n {
                    stm = stm.max(-1.01 * dir.x[j] / (pt.x[j] - self.alfa[j]));
                    stm = stm.max(1.01 * dir.x[j] / (self.beta[j] - pt.x[j]));
                }
                let mut steg = 1.0 / stm;
                let old = pt.clone();
                let mut tries = 0;
                let mut resnew = 2.0 * resnorm;
                let mut r = res.clone();
                while resnew > resnorm && tries < 50 {
                    tries += 1;
                    pt = advance(&old, &dir, steg);
                    r = self.residual(&pt, epsi);
                    resnew = norm(&r);
                    steg /= 2.0;
                }
                resnorm = resnew;
                resmax = maxabs(&r);
            }
            epsi *= 0.1;
        }
        if pt.x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Optimizer(format!(
                "subproblem diverged (max slack {:e})",
                pt.y.iter().fold(0.0f64, |a, v| a.max(*v))
            )));
        }
        Ok(pt.x)
    }

    fn newton_direction(&self, pt: &Point, epsi: f64) -> Result<Point> {
        let n = pt.x.len();
        let m = pt.y.len();
        let (plam, qlam) = self.plam_qlam(pt);
        let g = self.gvec(&pt.x);
        let mut gg = DMatrix::zeros(m, n);
        let mut delx = vec![0.0; n];
        let mut diagx = vec![0.0; n];
        for j in 0..n {
            let (ux, xl) = (self.upp[j] - pt.x[j], pt.x[j] - self.low[j]);
            let (ux2, xl2) = (ux * ux, xl * xl);
            for i in 0..m {
                gg[(i, j)] = self.p[(i, j)] / ux2 - self.q[(i, j)] / xl2;
            }
            let (xa, bx) = (pt.x[j] - self.alfa[j], self.beta[j] - pt.x[j]);
            delx[j] = plam[j] / ux2 - qlam[j] / xl2 - epsi / xa + epsi / bx;
            diagx[j] = 2.0 * (plam[j] / (ux2 * ux) + qlam[j] / (xl2 * xl)) + pt.xsi[j] / xa + pt.eta[j] / bx;
        }
        let dely: Vec<f64> = (0..m).map(|i| self.c + self.d * pt.y[i] - pt.lam[i] - epsi / pt.y[i]).collect();
        let delz = self.a0 - epsi / pt.z;
        let dellam: Vec<f64> = (0..m).map(|i| g[i] - pt.y[i] - self.b[i] + epsi / pt.lam[i]).collect();
        let diagy: Vec<f64> = (0..m).map(|i| self.d + pt.mu[i] / pt.y[i]).collect();
        let diaglamyi: Vec<f64> = (0..m).map(|i| pt.s[i] / pt.lam[i] + 1.0 / diagy[i]).collect();

        let singular = || Error::Optimizer("singular subproblem Newton system".into());
        let (dx, dlam, dz) = if m < n {
            // Reduced system in (lambda, z); with a = 0 the z-equation decouples.
            let mut alam = DMatrix::from_diagonal(&DVector::from_vec(diaglamyi.clone()));
            for i in 0..m {
                for k in 0..m {
                    alam[(i, k)] += (0..n).map(|j| gg[(i, j)] * gg[(k, j)] / diagx[j]).sum::<f64>();
                }
            }
            let blam = DVector::from_fn(m, |i, _| {
                dellam[i] + dely[i] / diagy[i] - (0..n).map(|j| gg[(i, j)] * delx[j] / diagx[j]).sum::<f64>()
            });
            let dlam = if m > 0 { alam.lu().solve(&blam).ok_or_else(singular)? } else { DVector::zeros(0) };
            let dz = -delz / (pt.zet / pt.z);
            let dx: Vec<f64> =
                (0..n).map(|j| (-delx[j] - (0..m).map(|i| gg[(i, j)] * dlam[i]).sum::<f64>()) / diagx[j]).collect();
            (dx, dlam.iter().copied().collect::<Vec<f64>>(), dz)
        } else {
            let dellamyi: Vec<f64> = (0..m).map(|i| dellam[i] + dely[i] / diagy[i]).collect();
            let mut axx = DMatrix::from_diagonal(&DVector::from_vec(diagx.clone()));
            for j in 0..n {
                for k in 0..n {
                    axx[(j, k)] += (0..m).map(|i| gg[(i, j)] * gg[(i, k)] / diaglamyi[i]).sum::<f64>();
                }
            }
            let bx = DVector::from_fn(n, |j, _| {
                -(delx[j] + (0..m).map(|i| gg[(i, j)] * dellamyi[i] / diaglamyi[i]).sum::<f64>())
            });
            let dx = axx.lu().solve(&bx).ok_or_else(singular)?;
            let dz = -delz / (pt.zet / pt.z);
            let dlam: Vec<f64> = (0..m)
                .map(|i| ((0..n).map(|j| gg[(i, j)] * dx[j]).sum::<f64>()) / diaglamyi[i] + dellamyi[i] / diaglamyi[i])
                .collect();
            (dx.iter().copied().collect(), dlam, dz)
        };
        let dy: Vec<f64> = (0..m).map(|i| -dely[i] / diagy[i] + dlam[i] / diagy[i]).collect();
        let dxsi: Vec<f64> =
            (0..n).map(|j| { let xa = pt.x[j] - self.alfa[j]; -pt.xsi[j] + epsi / xa - pt.xsi[j] * dx[j] / xa }).collect();
        let deta: Vec<f64> =
            (0..n).map(|j| { let bx = self.beta[j] - pt.x[j]; -pt.eta[j] + epsi / bx + pt.eta[j] * dx[j] / bx }).collect();
        let dmu: Vec<f64> = (0..m).map(|i| -pt.mu[i] + epsi / pt.y[i] - pt.mu[i] * dy[i] / pt.y[i]).collect();
        let dzet = -pt.zet + epsi / pt.z - pt.zet * dz / pt.z;
        let ds: Vec<f64> = (0..m).map(|i| -pt.s[i] + epsi / pt.lam[i] - pt.s[i] * dlam[i] / pt.lam[i]).collect();
        Ok(Point { x: dx, y: dy, z: dz, lam: dlam, xsi: dxsi, eta: deta, mu: dmu, zet: dzet, s: ds })
    }
}

fn advance(p: &Point, d: &Point, t: f64) -> Point {
    let add = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x + t * y).collect();
    Point {
        x: add(&p.x, &d.x),
        y: add(&p.y, &d.y),
        z: p.z + t * d.z,
        lam: add(&p.lam, &d.lam),
        xsi: add(&p.xsi, &d.xsi),
        eta: add(&p.eta, &d.eta),
        mu: add(&p.mu, &d.mu),
        zet: p.zet + t * d.zet,
        s: add(&p.s, &d.s),
    }
}
