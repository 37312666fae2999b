//! Exact likelihood of the continuum model through orthonormal contrasts.
//!
//! Only contrasts `Cy` of the data have a proper distribution, with
//! covariance `C Σ Cᵀ + τ⁻¹ I` where `Σ_ij = −γ(s_i − s_j)`. The default
//! basis is the first `n − 1` rows of the Householder reflection that maps
//! `1/√n` onto the last unit vector, so `C Σ Cᵀ` costs `O(n²)` on top of the
//! Cholesky factorization.

use faer::linalg::solvers::DenseSolveCore;
use faer::prelude::*;
use faer::{Mat, Side};

use crate::error::{check_len, Error, Result};
use crate::fit::{FitResult, Model, ParamValues};
use crate::numopt::{minimize_quasi_newton, QuasiNewtonOptions};
use crate::variogram::{FgfParams, PowerVariogram, NU_GUARD};

#[derive(Clone, Debug)]
enum Basis {
    /// `C` = leading rows of `I − 2 v vᵀ`.
    Householder(Vec<f64>),
    Explicit(Mat<f64>),
}

/// An `(n−1) × n` matrix with orthonormal rows orthogonal to `1`.
#[derive(Clone, Debug)]
pub struct ContrastBasis {
    n: usize,
    basis: Basis,
}

impl ContrastBasis {
    /// The Householder basis.
    pub fn new(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::Input(format!("contrasts need n >= 2, got {n}")));
        }
        let u = (n as f64).sqrt().recip();
        let mut v = vec![u; n];
        v[n - 1] -= 1.0;
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        Ok(Self {
            n,
            basis: Basis::Householder(v),
        })
    }

    /// Normalized Helmert contrasts: row `k` compares observation `k+1` with
    /// the mean of the first `k+1`.
    pub fn helmert(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::Input(format!("contrasts need n >= 2, got {n}")));
        }
        let c = Mat::from_fn(n - 1, n, |k, j| {
            let m = (k + 1) as f64;
            let norm = (m * (m + 1.0)).sqrt();
            if j <= k {
                1.0 / norm
            } else if j == k + 1 {
                -m / norm
            } else {
                0.0
            }
        });
        Self::from_matrix(c)
    }

    /// Validates and wraps an explicit basis.
    pub fn from_matrix(c: Mat<f64>) -> Result<Self> {
        let n = c.ncols();
        if n < 2 || c.nrows() != n - 1 {
            return Err(Error::Input(format!(
                "contrast matrix must be (n-1) x n, got {} x {}",
                c.nrows(),
                n
            )));
        }
        for i in 0..n - 1 {
            let row_sum: f64 = (0..n).map(|j| c[(i, j)]).sum();
            if row_sum.abs() > 1e-10 {
                return Err(Error::Input(format!("contrast row {i} sums to {row_sum}")));
            }
            for k in 0..=i {
                let d: f64 = (0..n).map(|j| c[(i, j)] * c[(k, j)]).sum();
                let want = if i == k { 1.0 } else { 0.0 };
                if (d - want).abs() > 1e-10 {
                    return Err(Error::Input(format!(
                        "contrast rows {i} and {k} are not orthonormal"
                    )));
                }
            }
        }
        Ok(Self {
            n,
            basis: Basis::Explicit(c),
        })
    }

    /// Number of observations `n`.
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn matrix(&self) -> Mat<f64> {
        match &self.basis {
            Basis::Householder(v) => Mat::from_fn(self.n - 1, self.n, |i, j| {
                let delta = if i == j { 1.0 } else { 0.0 };
                delta - 2.0 * v[i] * v[j]
            }),
            Basis::Explicit(c) => c.clone(),
        }
    }

    /// `C y`.
    pub fn apply(&self, y: &[f64]) -> Result<Vec<f64>> {
        check_len(self.n, y.len())?;
        Ok(match &self.basis {
            Basis::Householder(v) => {
                let vy: f64 = v.iter().zip(y).map(|(a, b)| a * b).sum();
                (0..self.n - 1).map(|i| y[i] - 2.0 * v[i] * vy).collect()
            }
            Basis::Explicit(c) => (0..self.n - 1)
                .map(|i| (0..self.n).map(|j| c[(i, j)] * y[j]).sum())
                .collect(),
        })
    }

    /// `C S Cᵀ` for symmetric `S`, of which only the lower triangle is read.
    fn project(&self, s: Mat<f64>) -> Mat<f64> {
        let n = self.n;
        match &self.basis {
            Basis::Householder(v) => {
                let mut s = s;
                // w = S v from the lower triangle
                let mut w = vec![0.0; n];
                for j in 0..n {
                    w[j] += s[(j, j)] * v[j];
                    for i in j + 1..n {
                        let sij = s[(i, j)];
                        w[i] += sij * v[j];
                        w[j] += sij * v[i];
                    }
                }
                let t: f64 = v.iter().zip(&w).map(|(a, b)| a * b).sum();
                for j in 0..n - 1 {
                    for i in j..n - 1 {
                        s[(i, j)] += -2.0 * (v[i] * w[j] + w[i] * v[j]) + 4.0 * t * v[i] * v[j];
                    }
                }
                s.as_ref().submatrix(0, 0, n - 1, n - 1).to_owned()
            }
            Basis::Explicit(c) => {
                let full = Mat::from_fn(n, n, |i, j| if i >= j { s[(i, j)] } else { s[(j, i)] });
                c * &full * c.transpose()
            }
        }
    }
}

/// The Householder contrast basis for `n` observations.
pub fn contrast_basis(n: usize) -> Result<ContrastBasis> {
    ContrastBasis::new(n)
}

/// Maps unconstrained coordinates to `(τ, σ², ν, α)`.
pub fn fgf_from_transformed(x: &[f64; 4]) -> FgfParams {
    let e = x[3].exp();
    let alpha = if e.is_infinite() {
        0.5
    } else {
        0.5 * e / (1.0 + e)
    };
    FgfParams::new(x[0].exp(), (-x[1]).exp(), 1.0 + x[2].exp(), alpha)
}

pub fn fgf_to_transformed(p: &FgfParams) -> [f64; 4] {
    let a = 2.0 * p.alpha;
    [
        p.tau.ln(),
        -p.sigma2.ln(),
        (p.nu - 1.0).ln(),
        (a / (1.0 - a)).ln(),
    ]
}

/// Pairwise geometry and contrasts for repeated likelihood evaluations.
pub struct DenseProblem {
    n: usize,
    // squared lags of the lower triangle, row by row
    h2: Vec<f64>,
    k2: Vec<f64>,
    cy: Vec<f64>,
    basis: ContrastBasis,
}

impl DenseProblem {
    pub fn new(sites: &[(f64, f64)], y: &[f64], basis: ContrastBasis) -> Result<Self> {
        let n = sites.len();
        check_len(n, y.len())?;
        check_len(n, basis.len())?;
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("observations must be finite".into()));
        }
        let mut h2 = Vec::with_capacity(n * (n - 1) / 2);
        let mut k2 = Vec::with_capacity(n * (n - 1) / 2);
        for i in 0..n {
            for j in 0..i {
                h2.push((sites[i].0 - sites[j].0).powi(2));
                k2.push((sites[i].1 - sites[j].1).powi(2));
            }
        }
        Ok(Self {
            n,
            h2,
            k2,
            cy: basis.apply(y)?,
            basis,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// `C Σ Cᵀ + τ⁻¹ I`.
    fn contrast_covariance(&self, p: &FgfParams) -> Result<Mat<f64>> {
        let vg = PowerVariogram::new(p.sigma2, p.nu, p.alpha)?;
        let (a, b) = (0.25 / p.alpha, 0.25 / (0.5 - p.alpha));
        let (scale, power) = (vg.scale(), p.nu - 1.0);
        let mut s = Mat::<f64>::zeros(self.n, self.n);
        let mut idx = 0;
        for i in 0..self.n {
            for j in 0..i {
                let d2 = a * self.h2[idx] + b * self.k2[idx];
                s[(i, j)] = if d2 > 0.0 {
                    -scale * d2.powf(power)
                } else {
                    0.0
                };
                idx += 1;
            }
        }
        let mut cov = self.basis.project(s);
        let nugget = p.tau.recip();
        for i in 0..self.n - 1 {
            cov[(i, i)] += nugget;
        }
        Ok(cov)
    }

    /// Negative log-likelihood at natural parameters.
    pub fn neg_log_likelihood_at(&self, p: &FgfParams) -> Result<f64> {
        p.validate()?;
        let cov = self.contrast_covariance(p)?;
        let m = self.n - 1;
        let llt = cov.llt(Side::Lower).map_err(|_| {
            Error::Numerical(format!(
                "contrast covariance not positive definite at tau={}, sigma2={}, nu={}, alpha={}",
                p.tau, p.sigma2, p.nu, p.alpha
            ))
        })?;
        let l = llt.L();
        let logdet: f64 = 2.0 * (0..m).map(|i| l[(i, i)].ln()).sum::<f64>();
        let rhs = Col::from_fn(m, |i| self.cy[i]);
        let sol = llt.solve(&rhs);
        let quad: f64 = (0..m).map(|i| self.cy[i] * sol[i]).sum();
        Ok(0.5 * (m as f64 * (2.0 * std::f64::consts::PI).ln() + logdet + quad))
    }

    /// Negative log-likelihood at unconstrained coordinates; `+∞` outside the
    /// `ν` guard band.
    pub fn neg_log_likelihood(&self, x: &[f64; 4]) -> Result<f64> {
        let p = fgf_from_transformed(x);
        if !(1.0 + NU_GUARD..=2.0 - NU_GUARD).contains(&p.nu) || !(p.alpha > 0.0 && p.alpha < 0.5) {
            return Ok(f64::INFINITY);
        }
        if !(p.tau.is_finite() && p.tau > 0.0 && p.sigma2.is_finite() && p.sigma2 > 0.0) {
            return Ok(f64::INFINITY);
        }
        self.neg_log_likelihood_at(&p)
    }
}

/// `−ℓ(x)` for unconstrained coordinates `x = (log τ, log σ⁻², log(ν−1), logit 2α)`.
pub fn neg_log_likelihood(
    x: &[f64; 4],
    sites: &[(f64, f64)],
    y: &[f64],
    basis: &ContrastBasis,
) -> Result<f64> {
    DenseProblem::new(sites, y, basis.clone())?.neg_log_likelihood(x)
}

#[derive(Clone, Debug)]
pub struct DenseFitOptions {
    pub max_sites: usize,
    pub optimizer: QuasiNewtonOptions,
}

impl Default for DenseFitOptions {
    fn default() -> Self {
        Self {
            max_sites: 5000,
            optimizer: QuasiNewtonOptions::default(),
        }
    }
}

/// Maximum-likelihood fit of the continuum model by quasi-Newton descent in
/// unconstrained coordinates, with delta-method standard errors.
pub fn fit_fgf(
    sites: &[(f64, f64)],
    y: &[f64],
    init: &FgfParams,
    options: &DenseFitOptions,
) -> Result<FitResult> {
    init.validate()?;
    if sites.len() > options.max_sites {
        return Err(Error::Config(format!(
            "{} sites exceed the dense limit of {}",
            sites.len(),
            options.max_sites
        )));
    }
    let problem = DenseProblem::new(sites, y, ContrastBasis::new(sites.len())?)?;
    let x0 = fgf_to_transformed(init);
    let report = minimize_quasi_newton(
        |x| {
            let x: [f64; 4] = x.try_into().expect("four parameters");
            problem.neg_log_likelihood(&x).unwrap_or(f64::INFINITY)
        },
        &x0,
        &options.optimizer,
    )?;
    let x: [f64; 4] = report.x.as_slice().try_into().expect("four parameters");
    let p = fgf_from_transformed(&x);

    let mut warnings = Vec::new();
    let se_x = report.curvature.as_ref().and_then(|h| {
        let inv = h.partial_piv_lu().inverse();
        let diag: Vec<f64> = (0..4).map(|i| inv[(i, i)]).collect();
        diag.iter()
            .all(|d| d.is_finite() && *d > 0.0)
            .then(|| diag.iter().map(|d| d.sqrt()).collect::<Vec<_>>())
    });
    if se_x.is_none() {
        warnings.push("Hessian not positive definite; standard errors unavailable".into());
    }
    let se = se_x.map(|s| {
        let e = x[3].exp();
        ParamValues {
            tau: p.tau * s[0],
            sigma2: Some(p.sigma2 * s[1]),
            lambda: None,
            nu: (p.nu - 1.0) * s[2],
            alpha: 0.5 * e / (1.0 + e).powi(2) * s[3],
        }
    });
    warnings.extend(boundary_warnings(p.nu, p.alpha, &x));
    Ok(FitResult {
        model: Model::Fgf,
        estimates: ParamValues {
            tau: p.tau,
            sigma2: Some(p.sigma2),
            lambda: None,
            nu: p.nu,
            alpha: p.alpha,
        },
        se,
        transformed_optimum: x,
        converged: report.converged,
        stop_reason: report.reason,
        iterations: report.iterations,
        evaluations: report.evaluations,
        n_obs: sites.len(),
        neg_loglik: Some(report.value),
        score_norm: None,
        gradient_norm: Some(report.residual.iter().fold(0.0, |m, g| m.max(g.abs()))),
        kappa: None,
        probes: None,
        seed: None,
        warnings,
    })
}

/// Flags estimates that sit against the edge of the parameter space.
pub(crate) fn boundary_warnings(nu: f64, alpha: f64, x: &[f64; 4]) -> Vec<String> {
    let mut w = Vec::new();
    if !(1.0 + 10.0 * NU_GUARD..=2.0 - 10.0 * NU_GUARD).contains(&nu) {
        w.push(format!("nu = {nu:.4} is at the boundary of (1, 2)"));
    }
    if !(0.005..=0.495).contains(&alpha) {
        w.push(format!("alpha = {alpha:.4} is at the boundary of (0, 1/2)"));
    }
    if x.iter().any(|v| v.abs() > 20.0) {
        w.push("a transformed parameter diverged; the likelihood may be degenerate".into());
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::variogram::generalized_covariance;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_sites(n: usize, seed: u64) -> (Vec<(f64, f64)>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sites = (0..n)
            .map(|_| (rng.random::<f64>() * 10.0, rng.random::<f64>() * 10.0))
            .collect();
        let y = (0..n).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
        (sites, y)
    }

    fn check_basis(b: &ContrastBasis, tol: f64) {
        let c = b.matrix();
        let n = b.len();
        for i in 0..n - 1 {
            assert!((0..n).map(|j| c[(i, j)]).sum::<f64>().abs() < tol);
            for k in 0..n - 1 {
                let d: f64 = (0..n).map(|j| c[(i, j)] * c[(k, j)]).sum();
                assert!((d - if i == k { 1.0 } else { 0.0 }).abs() < tol);
            }
        }
    }

    #[test]
    fn two_point_basis() {
        let c = ContrastBasis::new(2).unwrap().matrix();
        let r = std::f64::consts::FRAC_1_SQRT_2;
        assert!((c[(0, 0)].abs() - r).abs() < 1e-15 && (c[(0, 0)] + c[(0, 1)]).abs() < 1e-15);
    }

    #[test]
    fn bases_are_orthonormal_contrasts() {
        for n in [3, 10, 100] {
            check_basis(&ContrastBasis::new(n).unwrap(), 1e-12);
            check_basis(&ContrastBasis::helmert(n).unwrap(), 1e-12);
        }
        assert!(ContrastBasis::new(1).is_err());
        assert!(ContrastBasis::from_matrix(Mat::from_fn(1, 2, |_, j| j as f64)).is_err());
    }

    #[test]
    fn householder_apply_matches_matrix() {
        let b = ContrastBasis::new(7).unwrap();
        let y: Vec<f64> = (0..7).map(|i| (i as f64).sin()).collect();
        let c = b.matrix();
        let cy = b.apply(&y).unwrap();
        for i in 0..6 {
            let want: f64 = (0..7).map(|j| c[(i, j)] * y[j]).sum();
            assert!((cy[i] - want).abs() < 1e-14);
        }
    }

    /// Determinant and solve by Gaussian elimination with partial pivoting.
    #[allow(clippy::needless_range_loop)]
    fn lu_logdet_and_quad(mut a: Vec<Vec<f64>>, b: &[f64]) -> (f64, f64) {
        let n = b.len();
        let mut rhs = b.to_vec();
        let mut logdet = 0.0;
        for k in 0..n {
            let p = (k..n)
                .max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs()))
                .unwrap();
            a.swap(k, p);
            rhs.swap(k, p);
            logdet += a[k][k].abs().ln();
            for i in k + 1..n {
                let f = a[i][k] / a[k][k];
                for j in k..n {
                    a[i][j] -= f * a[k][j];
                }
                rhs[i] -= f * rhs[k];
            }
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            x[i] = (rhs[i] - (i + 1..n).map(|j| a[i][j] * x[j]).sum::<f64>()) / a[i][i];
        }
        (logdet, b.iter().zip(&x).map(|(u, v)| u * v).sum())
    }

    #[test]
    fn matches_brute_force_oracle() {
        let (sites, y) = random_sites(10, 4);
        let p = FgfParams::new(2.5, 1.7, 1.35, 0.18);
        let x = fgf_to_transformed(&p);
        let got = neg_log_likelihood(&x, &sites, &y, &ContrastBasis::new(10).unwrap()).unwrap();

        let n = 10;
        let c = ContrastBasis::helmert(n).unwrap().matrix();
        let sigma: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| {
                        generalized_covariance(
                            sites[i].0 - sites[j].0,
                            sites[i].1 - sites[j].1,
                            p.sigma2,
                            p.nu,
                            p.alpha,
                        )
                        .unwrap()
                    })
                    .collect()
            })
            .collect();
        let a: Vec<Vec<f64>> = (0..n - 1)
            .map(|i| {
                (0..n - 1)
                    .map(|k| {
                        let mut v = 0.0;
                        for j in 0..n {
                            for l in 0..n {
                                v += c[(i, j)] * sigma[j][l] * c[(k, l)];
                            }
                        }
                        v + if i == k { 1.0 / p.tau } else { 0.0 }
                    })
                    .collect()
            })
            .collect();
        let cy: Vec<f64> = (0..n - 1)
            .map(|i| (0..n).map(|j| c[(i, j)] * y[j]).sum())
            .collect();
        let (logdet, quad) = lu_logdet_and_quad(a, &cy);
        let want = 0.5 * ((n - 1) as f64 * (2.0 * std::f64::consts::PI).ln() + logdet + quad);
        assert!((got - want).abs() < 1e-8, "{got} vs {want}");
    }

    #[test]
    fn invariant_to_basis_shift_and_permutation() {
        let (sites, y) = random_sites(40, 9);
        let x = fgf_to_transformed(&FgfParams::new(1.2, 0.8, 1.6, 0.3));
        let base = neg_log_likelihood(&x, &sites, &y, &ContrastBasis::new(40).unwrap()).unwrap();
        let helmert =
            neg_log_likelihood(&x, &sites, &y, &ContrastBasis::helmert(40).unwrap()).unwrap();
        assert!((base - helmert).abs() < 1e-9);
        let shifted: Vec<f64> = y.iter().map(|v| v + 123.4).collect();
        let s = neg_log_likelihood(&x, &sites, &shifted, &ContrastBasis::new(40).unwrap()).unwrap();
        assert!((base - s).abs() < 1e-9);
        let perm: Vec<usize> = (0..40).map(|i| (i * 7) % 40).collect();
        let ps: Vec<(f64, f64)> = perm.iter().map(|&i| sites[i]).collect();
        let py: Vec<f64> = perm.iter().map(|&i| y[i]).collect();
        let p = neg_log_likelihood(&x, &ps, &py, &ContrastBasis::new(40).unwrap()).unwrap();
        assert!((base - p).abs() < 1e-9);
    }

    #[test]
    fn guard_band_is_infinite() {
        let (sites, y) = random_sites(5, 1);
        let b = ContrastBasis::new(5).unwrap();
        let mut x = fgf_to_transformed(&FgfParams::new(1.0, 1.0, 1.5, 0.25));
        x[2] = (1.0f64 - 1e-4).ln();
        assert_eq!(
            neg_log_likelihood(&x, &sites, &y, &b).unwrap(),
            f64::INFINITY
        );
        x[2] = (1e-4f64).ln();
        assert_eq!(
            neg_log_likelihood(&x, &sites, &y, &b).unwrap(),
            f64::INFINITY
        );
    }

    #[test]
    fn transform_round_trip() {
        let p = FgfParams::new(3.0, 0.2, 1.77, 0.41);
        let q = fgf_from_transformed(&fgf_to_transformed(&p));
        assert!((p.tau - q.tau).abs() < 1e-12 && (p.sigma2 - q.sigma2).abs() < 1e-12);
        assert!((p.nu - q.nu).abs() < 1e-12 && (p.alpha - q.alpha).abs() < 1e-12);
    }

    #[test]
    fn dense_limit_is_enforced() {
        let (sites, y) = random_sites(20, 2);
        let opts = DenseFitOptions {
            max_sites: 10,
            ..Default::default()
        };
        assert!(matches!(
            fit_fgf(&sites, &y, &FgfParams::new(1.0, 1.0, 1.5, 0.25), &opts),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn constant_data_is_flagged() {
        let (sites, _) = random_sites(30, 3);
        let y = vec![2.0; 30];
        let r = fit_fgf(
            &sites,
            &y,
            &FgfParams::new(1.0, 1.0, 1.5, 0.25),
            &Default::default(),
        )
        .unwrap();
        assert!(!r.converged || !r.warnings.is_empty(), "{r:?}");
    }
}
