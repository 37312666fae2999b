//! Continuum and lattice variograms.
//!
//! The continuum power variogram has a closed form. The lattice variogram is
//! a double integral over the Brillouin zone with a `|ω|^{-2ν}` singularity at
//! the origin. The integrand is split as
//!
//! ```text
//! f = F_per + g,   F_per(a, b) = Σ_{p,q} f_c(a + 2πp, b + 2πq)
//! ```
//!
//! where `f_c` is the continuum spectral density in lattice units. Integrated
//! against `1 - cos(aH + bK)` on the square, `F_per` unfolds to the whole
//! plane and contributes the closed-form continuum variogram; `g` is periodic
//! with only a mild cusp at the origin and is summed on an `N x N` grid. The
//! image sum uses the nearest `(2P+1)²` images exactly, the exact mean of the
//! remaining images, and their quadratic Taylor term.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::Site;

/// Width of the excluded band at each end of `1 < ν < 2`.
pub const NU_GUARD: f64 = 1e-3;

/// Parameters of the continuum model `y = μ + ψ + ε`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FgfParams {
    /// Nugget precision.
    pub tau: f64,
    pub sigma2: f64,
    pub nu: f64,
    pub alpha: f64,
    pub mu: f64,
}

impl FgfParams {
    pub fn new(tau: f64, sigma2: f64, nu: f64, alpha: f64) -> Self {
        Self {
            tau,
            sigma2,
            nu,
            alpha,
            mu: 0.0,
        }
    }

    /// Checks the domain used by the dense likelihood (`1 < ν < 2` with guard band).
    pub fn validate(&self) -> Result<()> {
        positive("tau", self.tau)?;
        positive("sigma2", self.sigma2)?;
        check_power_nu(self.nu)?;
        check_open_alpha(self.alpha)
    }
}

/// Parameters of the lattice model with precision `λ (κ + Δ)^ν`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FldParams {
    pub tau: f64,
    /// Field precision scale, `m² / σ_m²`.
    pub lambda: f64,
    pub nu: f64,
    pub alpha: f64,
    /// Fixed range shift; never estimated.
    pub kappa: f64,
    pub mu: f64,
}

impl FldParams {
    pub fn new(tau: f64, lambda: f64, nu: f64, alpha: f64) -> Self {
        Self {
            tau,
            lambda,
            nu,
            alpha,
            kappa: 0.0,
            mu: 0.0,
        }
    }

    pub fn with_kappa(mut self, kappa: f64) -> Self {
        self.kappa = kappa;
        self
    }

    pub fn validate(&self) -> Result<()> {
        positive("tau", self.tau)?;
        positive("lambda", self.lambda)?;
        if !(self.nu >= 0.0 && self.nu.is_finite()) {
            return Err(Error::Domain(format!(
                "nu must be nonnegative, got {}",
                self.nu
            )));
        }
        if !(0.0..=0.5).contains(&self.alpha) {
            return Err(Error::Domain(format!(
                "alpha must lie in [0, 1/2], got {}",
                self.alpha
            )));
        }
        if !(self.kappa >= 0.0 && self.kappa.is_finite()) {
            return Err(Error::Domain(format!(
                "kappa must be nonnegative, got {}",
                self.kappa
            )));
        }
        Ok(())
    }
}

fn positive(name: &str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name} must be positive, got {x}")))
    }
}

fn check_power_nu(nu: f64) -> Result<()> {
    if (1.0 + NU_GUARD..=2.0 - NU_GUARD).contains(&nu) {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "nu must lie in [{}, {}], got {nu}",
            1.0 + NU_GUARD,
            2.0 - NU_GUARD
        )))
    }
}

fn check_open_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 0.5 {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "alpha must lie in (0, 1/2), got {alpha}"
        )))
    }
}

/// Squared anisotropic lag distance `h²/(4α) + k²/(4(½−α))`.
#[inline]
pub fn anisotropic_distance2(h: f64, k: f64, alpha: f64) -> f64 {
    h * h / (4.0 * alpha) + k * k / (4.0 * (0.5 - alpha))
}

/// The power variogram with its prefactor evaluated once.
#[derive(Clone, Copy, Debug)]
pub struct PowerVariogram {
    scale: f64,
    nu: f64,
    alpha: f64,
}

impl PowerVariogram {
    pub fn new(sigma2: f64, nu: f64, alpha: f64) -> Result<Self> {
        positive("sigma2", sigma2)?;
        check_power_nu(nu)?;
        check_open_alpha(alpha)?;
        let gamma = libm::tgamma;
        let denom = 16.0
            * (PI * alpha * (0.5 - alpha)).sqrt()
            * gamma(nu)
            * gamma(2.0 * nu - 1.0)
            * (-nu * PI).sin();
        Ok(Self {
            scale: sigma2 * gamma(nu - 0.5) / denom,
            nu,
            alpha,
        })
    }

    #[inline]
    pub fn eval(&self, h: f64, k: f64) -> f64 {
        let d2 = anisotropic_distance2(h, k, self.alpha);
        if d2 == 0.0 {
            0.0
        } else {
            self.scale * d2.powf(self.nu - 1.0)
        }
    }

    /// Value at anisotropic distance 1.
    pub fn scale(&self) -> f64 {
        self.scale
    }
}

/// Continuum power variogram `γ(h, k)`.
pub fn continuum_variogram(h: f64, k: f64, sigma2: f64, nu: f64, alpha: f64) -> Result<f64> {
    Ok(PowerVariogram::new(sigma2, nu, alpha)?.eval(h, k))
}

/// Generalized covariance `-γ(h, k)`; its contrast projections are PSD.
pub fn generalized_covariance(h: f64, k: f64, sigma2: f64, nu: f64, alpha: f64) -> Result<f64> {
    Ok(-continuum_variogram(h, k, sigma2, nu, alpha)?)
}

/// Nearest periodic images summed explicitly on each side.
const NEAR_IMAGES: i64 = 4;
/// Extent of the explicit sum that feeds the far-image Taylor term.
const FAR_IMAGES: i64 = 400;

/// Default frequency-grid size.
pub const DEFAULT_FREQUENCIES: usize = 4096;

/// Regularized lattice spectral samples on the quarter grid `0..=N/2` squared.
struct RegularizedSpectrum {
    n: usize,
    half: usize,
    // row-major (j, l), already multiplied by the mirror weights
    values: Vec<f64>,
}

impl RegularizedSpectrum {
    fn new(nu: f64, alpha: f64, n: usize) -> Self {
        let beta = 0.5 - alpha;
        let half = n / 2;
        let step = 2.0 * PI / n as f64;
        let far_mean = far_image_mean(nu, alpha);
        let (maa, mbb) = far_image_hessian(nu, alpha);
        let third = PI * PI / 3.0;
        let weight = |j: usize| if j == 0 || j == half { 1.0 } else { 2.0 };

        let mut values = vec![0.0; (half + 1) * (half + 1)];
        values
            .par_chunks_mut(half + 1)
            .enumerate()
            .for_each(|(j, row)| {
                let a = step * j as f64;
                let sa = (0.5 * a).sin().powi(2);
                for (l, slot) in row.iter_mut().enumerate() {
                    if j == 0 && l == 0 {
                        continue;
                    }
                    let b = step * l as f64;
                    let sb = (0.5 * b).sin().powi(2);
                    let lattice = (4.0 * alpha * sa + 4.0 * beta * sb).powf(-nu);
                    let mut images = 0.0;
                    for p in -NEAR_IMAGES..=NEAR_IMAGES {
                        let ap = a + 2.0 * PI * p as f64;
                        let qa = alpha * ap * ap;
                        for q in -NEAR_IMAGES..=NEAR_IMAGES {
                            let bq = b + 2.0 * PI * q as f64;
                            images += (qa + beta * bq * bq).powf(-nu);
                        }
                    }
                    let far = far_mean + 0.5 * (maa * (a * a - third) + mbb * (b * b - third));
                    *slot = weight(j) * weight(l) * (lattice - images - far);
                }
            });
        Self { n, half, values }
    }

    /// `Σ_{j,l} g_{jl} (1 - cos(a_j H) cos(b_l K))` over the full grid, for every
    /// requested `(H, K)`.
    fn cosine_sums(&self, lags: &[(u64, u64)]) -> Vec<f64> {
        let n = self.n;
        let width = self.half + 1;
        let cos_table: Vec<f64> = (0..n)
            .map(|t| (2.0 * PI * t as f64 / n as f64).cos())
            .collect();
        let total: f64 = self.values.iter().sum();

        let mut ks: Vec<u64> = lags.iter().map(|&(_, k)| k).collect();
        ks.sort_unstable();
        ks.dedup();
        // row sums weighted by cos(b_l K), one vector per distinct K
        let row_sums: Vec<Vec<f64>> = ks
            .par_iter()
            .map(|&k| {
                self.values
                    .chunks_exact(width)
                    .map(|row| {
                        row.iter()
                            .enumerate()
                            .map(|(l, g)| g * cos_table[((l as u64 * k) % n as u64) as usize])
                            .sum()
                    })
                    .collect()
            })
            .collect();

        lags.iter()
            .map(|&(h, k)| {
                let rs = &row_sums[ks.binary_search(&k).expect("lag column present")];
                let mixed: f64 = rs
                    .iter()
                    .enumerate()
                    .map(|(j, s)| s * cos_table[((j as u64 * h) % n as u64) as usize])
                    .sum();
                total - mixed
            })
            .collect()
    }
}

/// Exact mean over the square of the images outside the explicit block, i.e.
/// `(1/4π²) ∫_{outside [-L, L]²} f_c` with `L = (2P+1)π`, by Simpson's rule in
/// polar angle.
fn far_image_mean(nu: f64, alpha: f64) -> f64 {
    let beta = 0.5 - alpha;
    let half_width = (2 * NEAR_IMAGES + 1) as f64 * PI;
    let integrand = |theta: f64| {
        let (s, c) = theta.sin_cos();
        let phi = alpha * c * c + beta * s * s;
        let radius = half_width / c.abs().max(s.abs());
        phi.powf(-nu) * radius.powf(2.0 - 2.0 * nu) / (2.0 * nu - 2.0)
    };
    let panels = 4096;
    let simpson = |lo: f64, hi: f64| {
        let h = (hi - lo) / panels as f64;
        let mut acc = integrand(lo) + integrand(hi);
        for i in 1..panels {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * integrand(lo + h * i as f64);
        }
        acc * h / 3.0
    };
    // the integrand has the symmetry of the rectangle; the box corner sits at π/4
    let quarter = simpson(0.0, PI / 4.0) + simpson(PI / 4.0, PI / 2.0);
    4.0 * quarter / (4.0 * PI * PI)
}

/// Diagonal of `Σ ∇² f_c` over the images outside the explicit block. The
/// cross term vanishes by symmetry.
fn far_image_hessian(nu: f64, alpha: f64) -> (f64, f64) {
    let beta = 0.5 - alpha;
    let mut maa = 0.0;
    let mut mbb = 0.0;
    for p in -FAR_IMAGES..=FAR_IMAGES {
        let a = 2.0 * PI * p as f64;
        for q in -FAR_IMAGES..=FAR_IMAGES {
            if p.abs().max(q.abs()) <= NEAR_IMAGES {
                continue;
            }
            let b = 2.0 * PI * q as f64;
            let quad = alpha * a * a + beta * b * b;
            let p1 = quad.powf(-nu - 1.0);
            let p2 = p1 / quad;
            maa += -2.0 * alpha * nu * p1 + 4.0 * alpha * alpha * a * a * nu * (nu + 1.0) * p2;
            mbb += -2.0 * beta * nu * p1 + 4.0 * beta * beta * b * b * nu * (nu + 1.0) * p2;
        }
    }
    (maa, mbb)
}

/// Lattice variogram at integer lags of the unit-spaced lattice.
fn lattice_variogram_at(
    sigma2_m: f64,
    nu: f64,
    alpha: f64,
    lattice_lags: &[(u64, u64)],
    n_freq: usize,
) -> Result<Vec<f64>> {
    let spectrum = RegularizedSpectrum::new(nu, alpha, n_freq);
    lattice_variogram_with(&spectrum, sigma2_m, nu, alpha, lattice_lags)
}

fn lattice_variogram_with(
    spectrum: &RegularizedSpectrum,
    sigma2_m: f64,
    nu: f64,
    alpha: f64,
    lattice_lags: &[(u64, u64)],
) -> Result<Vec<f64>> {
    let sums = spectrum.cosine_sums(lattice_lags);
    // 4^ν γ_c with σ² = 1 is the whole-plane part in lattice units
    let continuum = PowerVariogram::new(4f64.powf(nu), nu, alpha)?;
    let norm = (spectrum.n * spectrum.n) as f64;
    Ok(lattice_lags
        .iter()
        .zip(sums)
        .map(|(&(h, k), s)| {
            if h == 0 && k == 0 {
                0.0
            } else {
                sigma2_m * (continuum.eval(h as f64, k as f64) + s / norm)
            }
        })
        .collect())
}

/// `γ_m(h, k)` for all integer lags `|h|, |k| <= max_lag`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatticeVariogramTable {
    pub max_lag: usize,
    pub refinement: usize,
    // (max_lag+1)² nonnegative-lag values, row-major in (h, k)
    values: Vec<f64>,
}

impl LatticeVariogramTable {
    pub fn get(&self, h: i64, k: i64) -> Option<f64> {
        let (h, k) = (h.unsigned_abs() as usize, k.unsigned_abs() as usize);
        (h <= self.max_lag && k <= self.max_lag).then(|| self.values[h * (self.max_lag + 1) + k])
    }

    /// Rows `(h, k, lag_distance, value)` over the full symmetric range.
    pub fn rows(&self, alpha: f64) -> Vec<(i64, i64, f64, f64)> {
        let l = self.max_lag as i64;
        let mut out = Vec::new();
        for h in -l..=l {
            for k in -l..=l {
                let d = anisotropic_distance2(h as f64, k as f64, alpha).sqrt();
                out.push((h, k, d, self.get(h, k).expect("in range")));
            }
        }
        out
    }
}

fn check_lattice_inputs(nu: f64, alpha: f64, n_freq: usize, max_lattice_lag: u64) -> Result<()> {
    if !(nu > 1.0 && nu < 2.0) {
        return Err(Error::Domain(format!(
            "lattice variogram needs 1 < nu < 2, got {nu}"
        )));
    }
    check_open_alpha(alpha)?;
    if n_freq < 4 || n_freq % 2 != 0 {
        return Err(Error::Config(format!(
            "frequency grid size must be even and >= 4, got {n_freq}"
        )));
    }
    if (n_freq as u64) < 4 * max_lattice_lag {
        return Err(Error::Config(format!(
            "frequency grid size {n_freq} too small for lattice lag {max_lattice_lag} (need >= {})",
            4 * max_lattice_lag
        )));
    }
    Ok(())
}

/// Variogram of the lattice field at refinement `m` for integer lags in the
/// original units; lag `(h, k)` spans `(m h, m k)` lattice steps. The field
/// scale is `σ_m² = m² / λ`.
pub fn lattice_variogram_table(
    params: &FldParams,
    refinement: usize,
    max_lag: usize,
    n_freq: usize,
) -> Result<LatticeVariogramTable> {
    params.validate()?;
    if refinement == 0 {
        return Err(Error::Domain("refinement must be at least 1".into()));
    }
    let m = refinement as u64;
    check_lattice_inputs(params.nu, params.alpha, n_freq, m * max_lag as u64)?;
    let sigma2_m = (refinement * refinement) as f64 / params.lambda;
    let lags: Vec<(u64, u64)> = (0..=max_lag as u64)
        .flat_map(|h| (0..=max_lag as u64).map(move |k| (m * h, m * k)))
        .collect();
    let values = lattice_variogram_at(sigma2_m, params.nu, params.alpha, &lags, n_freq)?;
    Ok(LatticeVariogramTable {
        max_lag,
        refinement,
        values,
    })
}

/// One point of the lattice-minus-continuum comparison.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapPoint {
    pub h: i64,
    pub k: i64,
    pub lag_distance: f64,
    pub gap: f64,
}

/// `γ_m − γ` at the given lags with `σ² = 1` and the matching lattice scale
/// `σ_m² = 4^{-ν} m^{2-2ν}`.
pub fn variogram_gap(
    nu: f64,
    alpha: f64,
    refinement: usize,
    lags: &[(i64, i64)],
    n_freq: usize,
) -> Result<Vec<GapPoint>> {
    Ok(variogram_gaps(nu, alpha, &[refinement], lags, n_freq)?.remove(0))
}

/// [`variogram_gap`] for several refinements, sharing one spectral grid.
pub fn variogram_gaps(
    nu: f64,
    alpha: f64,
    refinements: &[usize],
    lags: &[(i64, i64)],
    n_freq: usize,
) -> Result<Vec<Vec<GapPoint>>> {
    if refinements.contains(&0) {
        return Err(Error::Domain("refinement must be at least 1".into()));
    }
    let reach = lags
        .iter()
        .map(|&(h, k)| h.unsigned_abs().max(k.unsigned_abs()))
        .max()
        .unwrap_or(0);
    let m_max = refinements.iter().copied().max().unwrap_or(1) as u64;
    check_lattice_inputs(nu, alpha, n_freq, m_max * reach)?;
    let continuum = PowerVariogram::new(1.0, nu, alpha)?;
    let spectrum = RegularizedSpectrum::new(nu, alpha, n_freq);
    refinements
        .iter()
        .map(|&refinement| {
            let m = refinement as u64;
            let sigma2_m = 4f64.powf(-nu) * (refinement as f64).powf(2.0 - 2.0 * nu);
            let lattice_lags: Vec<(u64, u64)> = lags
                .iter()
                .map(|&(h, k)| (m * h.unsigned_abs(), m * k.unsigned_abs()))
                .collect();
            let lattice = lattice_variogram_with(&spectrum, sigma2_m, nu, alpha, &lattice_lags)?;
            Ok(lags
                .iter()
                .zip(lattice)
                .map(|(&(h, k), gm)| GapPoint {
                    h,
                    k,
                    lag_distance: anisotropic_distance2(h as f64, k as f64, alpha).sqrt(),
                    gap: gm - continuum.eval(h as f64, k as f64),
                })
                .collect())
        })
        .collect()
}

/// One lag bin of an empirical variogram.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariogramBin {
    pub lower: f64,
    pub upper: f64,
    /// Mean pair distance in the bin.
    pub mean_lag: Option<f64>,
    /// `None` when the bin holds no pairs.
    pub semivariance: Option<f64>,
    pub pairs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectionalVariogram {
    /// Degrees from the `v` axis towards the `u` axis; `None` is omnidirectional.
    pub direction: Option<f64>,
    pub bins: Vec<VariogramBin>,
}

/// The four directions used for exploratory analysis.
pub const STANDARD_DIRECTIONS: [f64; 4] = [0.0, 45.0, 90.0, 135.0];

/// Classical (Matheron) empirical semivariogram along each direction.
///
/// Every unordered pair of sites contributes `½ (y_i − y_j)²` to the bin of
/// its distance, provided the pair's axis lies within `angle_tol` degrees of
/// the direction (axes are taken modulo 180°). Bins are `[lower, upper)`.
pub fn empirical_directional_variogram(
    sites: &[Site],
    directions: &[Option<f64>],
    angle_tol: f64,
    bin_edges: &[f64],
) -> Result<Vec<DirectionalVariogram>> {
    if sites.len() < 2 {
        return Err(Error::Input(format!(
            "need at least two sites, got {}",
            sites.len()
        )));
    }
    if bin_edges.len() < 2
        || bin_edges
            .windows(2)
            .any(|w| w[1].partial_cmp(&w[0]) != Some(std::cmp::Ordering::Greater))
    {
        return Err(Error::Input(
            "bin edges must be strictly increasing with at least two entries".into(),
        ));
    }
    let nbins = bin_edges.len() - 1;
    let mut acc = vec![vec![(0.0f64, 0.0f64, 0usize); nbins]; directions.len()];
    for i in 0..sites.len() {
        for j in i + 1..sites.len() {
            let du = sites[j].u - sites[i].u;
            let dv = sites[j].v - sites[i].v;
            let dist = du.hypot(dv);
            let bin = match bin_edges.partition_point(|&e| e <= dist) {
                0 => continue,
                b if b > nbins => continue,
                b => b - 1,
            };
            let axis = du.atan2(dv).to_degrees().rem_euclid(180.0);
            let semi = 0.5 * (sites[j].value - sites[i].value).powi(2);
            for (d, dir) in directions.iter().enumerate() {
                let keep = match dir {
                    None => true,
                    Some(theta) => {
                        let diff = (axis - theta).rem_euclid(180.0);
                        diff.min(180.0 - diff) <= angle_tol
                    }
                };
                if keep {
                    let slot = &mut acc[d][bin];
                    slot.0 += semi;
                    slot.1 += dist;
                    slot.2 += 1;
                }
            }
        }
    }
    Ok(directions
        .iter()
        .zip(acc)
        .map(|(dir, bins)| DirectionalVariogram {
            direction: *dir,
            bins: bins
                .into_iter()
                .enumerate()
                .map(|(b, (sum, lag, count))| VariogramBin {
                    lower: bin_edges[b],
                    upper: bin_edges[b + 1],
                    mean_lag: (count > 0).then(|| lag / count as f64),
                    semivariance: (count > 0).then(|| sum / count as f64),
                    pairs: count,
                })
                .collect(),
        })
        .collect())
}
