//! Dense reference computations for small lattices.

use faer::prelude::*;
use faer::Mat;

use super::{chain, fld_to_transformed, HlikSystem, Terms};
use crate::error::{Error, Result};
use crate::spectral::dense_basis_matrix;
use crate::variogram::FldParams;

/// Largest grid the dense routines accept.
pub const DENSE_ORACLE_MAX_PIXELS: usize = 2000;

/// Explicit X, Q and the data vector of the augmented regression.
struct Assembly {
    x: Mat<f64>,
    q: Vec<f64>,
    y: Vec<f64>,
    /// `Q⁻¹ Q_i` diagonals.
    d: [Vec<f64>; 4],
    m_llt: faer::linalg::solvers::Llt<f64>,
    m: Mat<f64>,
}

fn kron_basis(system: &HlikSystem) -> Result<Mat<f64>> {
    let grid = system.grid();
    let (r, c) = (grid.rows(), grid.cols());
    let pr = dense_basis_matrix(r)?;
    let pc = dense_basis_matrix(c)?;
    Ok(Mat::from_fn(r * c, r * c, |i, j| {
        pc[(i / r, j / r)] * pr[(i % r, j % r)]
    }))
}

fn assemble(system: &HlikSystem, params: &FldParams) -> Result<Assembly> {
    let q = system.len();
    if q > DENSE_ORACLE_MAX_PIXELS {
        return Err(Error::Config(format!(
            "dense oracle is limited to {DENSE_ORACLE_MAX_PIXELS} pixels, got {q}"
        )));
    }
    let terms = Terms::new(system.grid(), params)?;
    let p = kron_basis(system)?;
    let n = system.n_obs();
    let big = n + q - 1;
    let obs = system.observed();
    let x = Mat::from_fn(big, q, |row, col| {
        if row < n {
            p[(col, obs[row])]
        } else if col == row - n + 1 {
            1.0
        } else {
            0.0
        }
    });
    let mut qd = vec![terms.tau; big];
    let mut y = vec![0.0; big];
    let mut d = [
        vec![0.0; big],
        vec![0.0; big],
        vec![0.0; big],
        vec![0.0; big],
    ];
    for (k, &pix) in obs.iter().enumerate() {
        y[k] = system.z_data()[pix];
        d[0][k] = 1.0 / terms.tau;
    }
    for j in 1..q {
        let row = n + j - 1;
        qd[row] = terms.pen[j];
        d[1][row] = 1.0 / terms.lambda;
        d[2][row] = terms.dlog_nu[j];
        d[3][row] = terms.dlog_alpha[j];
    }
    let m = Mat::from_fn(q, q, |a, b| {
        (0..big).map(|k| x[(k, a)] * qd[k] * x[(k, b)]).sum::<f64>()
    });
    let m_llt = m
        .llt(faer::Side::Lower)
        .map_err(|_| Error::Numerical("XᵀQX is not positive definite".into()))?;
    Ok(Assembly {
        x,
        q: qd,
        y,
        d,
        m_llt,
        m,
    })
}

impl Assembly {
    fn beta(&self) -> Mat<f64> {
        let big = self.y.len();
        let rhs = Mat::from_fn(self.x.ncols(), 1, |a, _| {
            (0..big)
                .map(|k| self.x[(k, a)] * self.q[k] * self.y[k])
                .sum::<f64>()
        });
        self.m_llt.solve(&rhs)
    }

    fn residual(&self) -> Vec<f64> {
        let beta = self.beta();
        let fitted = &self.x * &beta;
        (0..self.y.len())
            .map(|k| self.y[k] - fitted[(k, 0)])
            .collect()
    }

    /// `I − X M⁻¹ XᵀQ`.
    fn annihilator(&self) -> Mat<f64> {
        let big = self.y.len();
        let xtq = Mat::from_fn(self.x.ncols(), big, |a, k| self.x[(k, a)] * self.q[k]);
        let h = &self.x * self.m_llt.solve(&xtq);
        Mat::from_fn(big, big, |a, b| if a == b { 1.0 } else { 0.0 } - h[(a, b)])
    }
}

/// Exact REML score and information.
#[derive(Clone, Debug)]
pub struct OracleScore {
    /// Score in the unconstrained coordinates of the stochastic estimator.
    pub g: [f64; 4],
    /// `½ tr{(I − H) Q⁻¹Q_i (I − H) Q⁻¹Q_j}` on the natural scale.
    pub info: Mat<f64>,
}

/// Dense score and Fisher information; refuses grids above
/// [`DENSE_ORACLE_MAX_PIXELS`].
pub fn dense_score_oracle(params: &FldParams, system: &HlikSystem) -> Result<OracleScore> {
    let a = assemble(system, params)?;
    let r = a.residual();
    let ih = a.annihilator();
    let big = r.len();
    let x = fld_to_transformed(params);
    let ch = chain(params, &x);
    let mut g = [0.0; 4];
    for i in 0..4 {
        let trace: f64 = (0..big).map(|k| ih[(k, k)] * a.d[i][k]).sum();
        let quad: f64 = (0..big).map(|k| r[k] * r[k] * a.q[k] * a.d[i][k]).sum();
        g[i] = 0.5 * ch[i] * (trace - quad);
    }
    // (I − H) D_i as dense matrices
    let prods: Vec<Mat<f64>> = (0..4)
        .map(|i| Mat::from_fn(big, big, |u, v| ih[(u, v)] * a.d[i][v]))
        .collect();
    let info = Mat::from_fn(4, 4, |i, j| {
        let mut t = 0.0;
        for u in 0..big {
            for v in 0..big {
                t += prods[i][(u, v)] * prods[j][(v, u)];
            }
        }
        0.5 * t
    });
    Ok(OracleScore { g, info })
}

/// Restricted log-likelihood `½[log det Q − log det XᵀQX − rᵀQr]`, up to a constant.
pub fn dense_reml_objective(params: &FldParams, system: &HlikSystem) -> Result<f64> {
    let a = assemble(system, params)?;
    let r = a.residual();
    let logdet_q: f64 = a.q.iter().map(|v| v.ln()).sum();
    let l = a.m_llt.L();
    let logdet_m: f64 = 2.0 * (0..a.m.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>();
    let quad: f64 = r.iter().zip(&a.q).map(|(v, w)| v * v * w).sum();
    Ok(0.5 * (logdet_q - logdet_m - quad))
}

/// BLUP `Pᵀ β̂` from the dense normal equations.
pub fn dense_blup(params: &FldParams, system: &HlikSystem) -> Result<Vec<f64>> {
    let a = assemble(system, params)?;
    let beta = a.beta();
    let p = kron_basis(system)?;
    let q = system.len();
    Ok((0..q)
        .map(|i| (0..q).map(|j| p[(j, i)] * beta[(j, 0)]).sum())
        .collect())
}
