//! Samplers for the lattice field, the continuum field at scattered sites,
//! and the observation layer.
//!
//! Every sampler takes an explicit 64-bit seed. Independent draws made from
//! the same seed (field, nugget, site selection) use separate ChaCha streams.

use faer::{Col, Mat, Side};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::spectral::{lattice_eigenvalues, GridSpec, SpectralPlan};
use crate::variogram::{FldParams, PowerVariogram};

pub const FIELD_STREAM: u64 = 0;
pub const NUGGET_STREAM: u64 = 1;
pub const SELECTION_STREAM: u64 = 2;

/// Generator for `stream` of `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn normals(rng: &mut ChaCha20Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldSample {
    pub grid: GridSpec,
    /// Column-major field values.
    pub values: Vec<f64>,
    pub seed: u64,
}

/// Draws the lattice field with precision `λ (κ + Δ)^ν`, constant mode zeroed.
pub fn sample_fld(grid: &GridSpec, params: &FldParams, seed: u64) -> Result<FieldSample> {
    let eps = normals(&mut stream_rng(seed, FIELD_STREAM), grid.len());
    Ok(FieldSample {
        grid: grid.clone(),
        values: sample_fld_with_noise(grid, params, &eps)?,
        seed,
    })
}

/// [`sample_fld`] with the spectral white noise supplied by the caller.
pub fn sample_fld_with_noise(grid: &GridSpec, params: &FldParams, eps: &[f64]) -> Result<Vec<f64>> {
    params.validate()?;
    check_len(grid.len(), eps.len())?;
    let eig = lattice_eigenvalues(grid, params.alpha, params.nu, params.kappa, params.lambda)?;
    let mut coeffs: Vec<f64> = eps
        .iter()
        .zip(&eig)
        .map(|(e, l)| if *l > 0.0 { e / l.sqrt() } else { 0.0 })
        .collect();
    coeffs[0] = 0.0;
    let plan = SpectralPlan::new(grid);
    let mut ws = plan.workspace();
    plan.inverse_in_place(&mut coeffs, &mut ws);
    Ok(coeffs)
}

/// Continuum field sampler at fixed sites, factorized once for many draws.
///
/// Uses the doubly centered kernel `K = J(−Γ)J`; every contrast of a draw
/// has variance `aᵀ(−Γ)a`, and each draw has mean exactly zero.
pub struct SiteFieldSampler {
    factor: Mat<f64>,
}

impl SiteFieldSampler {
    pub fn new(sites: &[(f64, f64)], sigma2: f64, nu: f64, alpha: f64) -> Result<Self> {
        let n = sites.len();
        if n < 2 {
            return Err(Error::Input(format!("need at least two sites, got {n}")));
        }
        let mut sorted: Vec<(f64, f64)> = sites.to_vec();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Input("duplicate sites".into()));
        }
        let vg = PowerVariogram::new(sigma2, nu, alpha)?;
        let mut k = Mat::from_fn(n, n, |i, j| {
            -vg.eval(sites[i].0 - sites[j].0, sites[i].1 - sites[j].1)
        });
        let means: Vec<f64> = (0..n)
            .map(|i| (0..n).map(|j| k[(i, j)]).sum::<f64>() / n as f64)
            .collect();
        let grand = means.iter().sum::<f64>() / n as f64;
        for j in 0..n {
            for i in 0..n {
                k[(i, j)] += grand - means[i] - means[j];
            }
        }
        let trace: f64 = (0..n).map(|i| k[(i, i)]).sum();
        let mut jitter = 1e-10 * trace / n as f64;
        for _ in 0..=3 {
            let mut shifted = k.clone();
            for i in 0..n {
                shifted[(i, i)] += jitter;
            }
            if let Ok(llt) = shifted.llt(Side::Lower) {
                return Ok(Self {
                    factor: llt.L().to_owned(),
                });
            }
            jitter *= 10.0;
        }
        Err(Error::Numerical(
            "centered kernel is not positive semi-definite after jitter escalation".into(),
        ))
    }

    pub fn len(&self) -> usize {
        self.factor.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sample(&self, seed: u64) -> Vec<f64> {
        let z = normals(&mut stream_rng(seed, FIELD_STREAM), self.len());
        self.sample_with_noise(&z)
    }

    pub fn sample_with_noise(&self, z: &[f64]) -> Vec<f64> {
        let zc = Col::from_fn(z.len(), |i| z[i]);
        let y = &self.factor * &zc;
        let mean = (0..y.nrows()).map(|i| y[i]).sum::<f64>() / y.nrows() as f64;
        (0..y.nrows()).map(|i| y[i] - mean).collect()
    }
}

/// One draw of the continuum field at `sites`.
pub fn sample_fgf_sites(
    sites: &[(f64, f64)],
    sigma2: f64,
    nu: f64,
    alpha: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    Ok(SiteFieldSampler::new(sites, sigma2, nu, alpha)?.sample(seed))
}

/// `y_i = μ + ψ_i + ε_i` with `ε_i ~ N(0, 1/τ)`.
pub fn add_noise_and_mean(field: &[f64], mu: f64, tau: f64, seed: u64) -> Result<Vec<f64>> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::Domain(format!("tau must be positive, got {tau}")));
    }
    let sd = tau.sqrt().recip();
    let mut rng = stream_rng(seed, NUGGET_STREAM);
    Ok(field
        .iter()
        .map(|p| mu + p + sd * rng.sample::<f64, _>(StandardNormal))
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Selection {
    /// Exactly this many distinct pixels.
    Count(usize),
    /// Each pixel kept independently with this probability.
    Fraction(f64),
}

/// Random pixel indices (column-major), ascending.
pub fn select_sites(grid: &GridSpec, selection: Selection, seed: u64) -> Result<Vec<usize>> {
    let q = grid.len();
    let mut rng = stream_rng(seed, SELECTION_STREAM);
    match selection {
        Selection::Count(k) => {
            if k > q {
                return Err(Error::Input(format!("cannot select {k} of {q} pixels")));
            }
            let mut idx = rand::seq::index::sample(&mut rng, q, k).into_vec();
            idx.sort_unstable();
            Ok(idx)
        }
        Selection::Fraction(p) => {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Input(format!(
                    "fraction must lie in [0, 1], got {p}"
                )));
            }
            Ok((0..q).filter(|_| rng.random::<f64>() < p).collect())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::dct2;
    use crate::variogram::{continuum_variogram, lattice_variogram_table};

    fn grid(r: usize, c: usize) -> GridSpec {
        GridSpec::new(r, c).unwrap()
    }

    #[test]
    fn zero_noise_gives_zero_field() {
        let g = grid(5, 7);
        let v =
            sample_fld_with_noise(&g, &FldParams::new(1.0, 2.0, 1.3, 0.2), &vec![0.0; 35]).unwrap();
        assert!(v.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn field_has_zero_mean_and_is_reproducible() {
        let g = grid(17, 9);
        let p = FldParams::new(1.0, 8.0, 1.5, 0.3);
        for seed in 0..5 {
            let a = sample_fld(&g, &p, seed).unwrap();
            let mean = a.values.iter().sum::<f64>() / a.values.len() as f64;
            let scale = a.values.iter().map(|v| v.abs()).fold(0.0, f64::max);
            assert!(mean.abs() < 1e-14 * scale.max(1.0));
            let b = sample_fld(&g, &p, seed).unwrap();
            assert_eq!(a.values, b.values);
        }
        assert_ne!(
            sample_fld(&g, &p, 1).unwrap().values,
            sample_fld(&g, &p, 2).unwrap().values
        );
    }

    #[test]
    fn white_noise_coefficients_pass_ks() {
        let g = grid(100, 100);
        let p = FldParams::new(1.0, 1.0, 0.0, 0.25);
        let s = sample_fld(&g, &p, 99).unwrap();
        let mut c = dct2(&s.values, &g).unwrap().coeffs[1..].to_vec();
        c.sort_by(f64::total_cmp);
        let n = c.len() as f64;
        let d = c
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let cdf = 0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2));
                (cdf - i as f64 / n)
                    .abs()
                    .max(((i + 1) as f64 / n - cdf).abs())
            })
            .fold(0.0, f64::max);
        // 1% critical value of the Kolmogorov distribution
        assert!(d < 1.628 / n.sqrt(), "D = {d}");
    }

    #[test]
    fn increments_match_lattice_variogram() {
        let g = grid(64, 64);
        let p = FldParams::new(1.0, 1.0, 1.5, 0.25);
        let mut sum = 0.0;
        let mut count = 0usize;
        for seed in 0..200 {
            let v = sample_fld(&g, &p, seed).unwrap().values;
            for c in 0..63 {
                for r in 0..64 {
                    let d = v[g.index(r, c + 1)] - v[g.index(r, c)];
                    sum += d * d;
                    count += 1;
                }
            }
        }
        // horizontal neighbours differ by one column, i.e. lag (0, 1)
        let gamma = lattice_variogram_table(&p, 1, 1, 512)
            .unwrap()
            .get(0, 1)
            .unwrap();
        let ratio = sum / count as f64 / (2.0 * gamma);
        assert!((ratio - 1.0).abs() < 0.05, "ratio {ratio}");
    }

    #[test]
    fn two_site_increment_variance() {
        let sampler = SiteFieldSampler::new(&[(0.0, 0.0), (1.0, 0.0)], 1.0, 1.5, 0.25).unwrap();
        let reps = 10_000;
        let var: f64 = (0..reps)
            .map(|s| {
                let y = sampler.sample(s);
                (y[0] - y[1]).powi(2)
            })
            .sum::<f64>()
            / reps as f64;
        let want = 2.0 * continuum_variogram(1.0, 0.0, 1.0, 1.5, 0.25).unwrap();
        assert!((want - 1.0 / std::f64::consts::PI).abs() < 1e-12);
        assert!((var / want - 1.0).abs() < 0.05, "{var} vs {want}");
    }

    #[test]
    fn site_draws_are_centered() {
        let sites: Vec<(f64, f64)> = (0..30)
            .map(|i| ((i % 6) as f64, (i / 6) as f64 * 1.3))
            .collect();
        let y = sample_fgf_sites(&sites, 2.0, 1.25, 0.3, 7).unwrap();
        assert!(y.iter().sum::<f64>().abs() < 1e-12 * y.iter().map(|v| v.abs()).sum::<f64>());
    }

    #[test]
    fn contrast_covariance_matches_kernel() {
        let sites = [(0.0, 0.0), (1.0, 0.5), (2.5, 2.0), (0.3, 3.0), (4.0, 1.0)];
        let n = sites.len();
        let (sigma2, nu, alpha) = (1.5, 1.4, 0.2);
        let sampler = SiteFieldSampler::new(&sites, sigma2, nu, alpha).unwrap();
        let reps = 10_000;
        let draws: Vec<Vec<f64>> = (0..reps).map(|s| sampler.sample(s as u64)).collect();
        // exact covariance J(−Γ)J
        let neg_gamma = |i: usize, j: usize| {
            -continuum_variogram(
                sites[i].0 - sites[j].0,
                sites[i].1 - sites[j].1,
                sigma2,
                nu,
                alpha,
            )
            .unwrap()
        };
        let row_mean = |i: usize| (0..n).map(|j| neg_gamma(i, j)).sum::<f64>() / n as f64;
        let grand = (0..n).map(row_mean).sum::<f64>() / n as f64;
        for i in 0..n {
            for j in 0..n {
                let want = neg_gamma(i, j) - row_mean(i) - row_mean(j) + grand;
                let prods: Vec<f64> = draws.iter().map(|d| d[i] * d[j]).collect();
                let mean = prods.iter().sum::<f64>() / reps as f64;
                let sd = (prods.iter().map(|p| (p - mean).powi(2)).sum::<f64>()
                    / (reps - 1) as f64)
                    .sqrt();
                let se = sd / (reps as f64).sqrt();
                assert!(
                    (mean - want).abs() < 4.0 * se,
                    "({i},{j}): {mean} vs {want} (se {se})"
                );
            }
        }
    }

    #[test]
    fn contrast_variance_ignores_reference_site() {
        let sites = [(0.0, 0.0), (1.0, 2.0), (3.0, 1.0)];
        let s = SiteFieldSampler::new(&sites, 1.0, 1.6, 0.35).unwrap();
        let kernel = |a: &[f64]| {
            // covariance of aᵀψ from the factor
            let n = a.len();
            let mut total = 0.0;
            for k in 0..n {
                let v: f64 = (0..n).map(|i| a[i] * s.factor[(i, k)]).sum();
                total += v * v;
            }
            total
        };
        let direct: f64 = {
            let a = [1.0, -1.0, 0.0];
            let mut q = 0.0;
            for i in 0..3 {
                for j in 0..3 {
                    q -= a[i]
                        * a[j]
                        * continuum_variogram(
                            sites[i].0 - sites[j].0,
                            sites[i].1 - sites[j].1,
                            1.0,
                            1.6,
                            0.35,
                        )
                        .unwrap();
                }
            }
            q
        };
        assert!((kernel(&[1.0, -1.0, 0.0]) - direct).abs() < 1e-8 * direct);
        assert!((kernel(&[-1.0, 1.0, 0.0]) - direct).abs() < 1e-8 * direct);
    }

    #[test]
    fn duplicate_sites_rejected() {
        assert!(matches!(
            SiteFieldSampler::new(&[(0.0, 1.0), (0.0, 1.0)], 1.0, 1.5, 0.25),
            Err(Error::Input(_))
        ));
        assert!(matches!(
            SiteFieldSampler::new(&[(0.0, 1.0)], 1.0, 1.5, 0.25),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn nugget_layer() {
        let psi: Vec<f64> = (0..100).map(|i| i as f64 * 0.1).collect();
        let y = add_noise_and_mean(&psi, 0.0, 1e12, 3).unwrap();
        assert!(y.iter().zip(&psi).all(|(a, b)| (a - b).abs() < 1e-5));

        let tau = 4.0;
        let y = add_noise_and_mean(&[0.0; 10_000], 7.0, tau, 11).unwrap();
        let mean = y.iter().sum::<f64>() / 1e4;
        assert!((mean - 7.0).abs() < 3.0 / (tau * 1e4).sqrt());
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (1e4 - 1.0);
        assert!((var * tau - 1.0).abs() < 0.05);
        assert!(add_noise_and_mean(&psi, 0.0, 0.0, 1).is_err());
    }

    #[test]
    fn nugget_stream_is_independent_of_field_stream() {
        let g = grid(8, 8);
        let field = sample_fld(&g, &FldParams::new(1.0, 1.0, 0.0, 0.25), 5)
            .unwrap()
            .values;
        let noise = add_noise_and_mean(&vec![0.0; 64], 0.0, 1.0, 5).unwrap();
        assert!(field.iter().zip(&noise).all(|(a, b)| a != b));
    }

    #[test]
    fn selection_edge_cases() {
        let g = grid(10, 10);
        assert_eq!(
            select_sites(&g, Selection::Fraction(1.0), 1).unwrap(),
            (0..100).collect::<Vec<_>>()
        );
        assert!(select_sites(&g, Selection::Count(0), 1).unwrap().is_empty());
        let idx = select_sites(&g, Selection::Count(40), 1).unwrap();
        assert_eq!(idx.len(), 40);
        assert!(idx.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(idx, select_sites(&g, Selection::Count(40), 1).unwrap());
        assert!(matches!(
            select_sites(&g, Selection::Count(101), 1),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn sixty_percent_of_large_grid() {
        let g = grid(256, 256);
        let sizes: Vec<f64> = (0..30)
            .map(|s| select_sites(&g, Selection::Fraction(0.6), s).unwrap().len() as f64)
            .collect();
        let mean = sizes.iter().sum::<f64>() / sizes.len() as f64;
        // binomial sd is about 125, so the mean of 30 has sd about 23
        assert!((mean - 39321.6).abs() < 100.0, "{mean}");
        assert!(sizes.iter().all(|&s| (s - 39321.6).abs() < 5.0 * 125.0));
    }
}
