//! Matrix-free REML for the lattice model.
//!
//! With `φ̃ = P φ` the spectral coefficients of the latent field, the
//! hierarchical model has the augmented design
//!
//! ```text
//! X = [ F Pᵀ ; 0 | I_{q−1} ],   Q = diag(τ 1_n, G),   G_j = λ s_j^ν  (j ≥ 1)
//! ```
//!
//! where `s_j` is the Laplacian symbol. The constant coefficient `φ̃_0` is
//! never penalized and plays the role of the mean. Every product with
//! `XᵀQX = τ P FᵀF Pᵀ + diag(0, G)` costs two cosine transforms, so the BLUP
//! and each column of `(I − H) u` need one preconditioned CG solve. Traces in
//! the score equations are estimated with frozen Rademacher probes.

mod oracle;
pub mod pcg;

pub use oracle::{dense_blup, dense_reml_objective, dense_score_oracle, DENSE_ORACLE_MAX_PIXELS};

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fit::{FitResult, Model, ParamValues};
use crate::io::{GriddedData, QuadraticTrend};
use crate::numopt::{invert, solve_nonlinear_system, SystemOptions};
use crate::simulate::stream_rng;
use crate::spectral::{laplacian_line_eigenvalues, laplacian_symbols, GridSpec, SpectralPlan};
use crate::variogram::FldParams;
use pcg::pcg;

/// Default number of Rademacher probes.
pub const DEFAULT_PROBES: usize = 50;
const PROBE_STREAM: u64 = 3;

/// Observed lattice data plus the frozen probe set of one fit.
#[derive(Debug)]
pub struct HlikSystem {
    grid: GridSpec,
    plan: SpectralPlan,
    counts: Vec<u32>,
    observed: Vec<usize>,
    mask: Vec<f64>,
    z: Vec<f64>,
    // probe-major, each of length n + q − 1
    probes: Vec<i8>,
    num_probes: usize,
    seed: u64,
}

impl HlikSystem {
    /// Draws `num_probes` probes from `seed`; they stay fixed for the
    /// lifetime of the system.
    pub fn new(data: &GriddedData, num_probes: usize, seed: u64) -> Result<Self> {
        let grid = data.grid.clone();
        let observed: Vec<usize> = (0..grid.len()).filter(|&i| data.counts[i] > 0).collect();
        if observed.is_empty() {
            return Err(Error::Input("no observed pixels".into()));
        }
        let mut mask = vec![0.0; grid.len()];
        let mut z = vec![0.0; grid.len()];
        for &i in &observed {
            mask[i] = 1.0;
            z[i] = data.values[i];
        }
        let len = observed.len() + grid.len() - 1;
        let mut rng = stream_rng(seed, PROBE_STREAM);
        let probes = (0..len * num_probes)
            .map(|_| if rng.random::<bool>() { 1 } else { -1 })
            .collect();
        Ok(Self {
            plan: SpectralPlan::new(&grid),
            grid,
            counts: data.counts.clone(),
            observed,
            mask,
            z,
            probes,
            num_probes,
            seed,
        })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    /// Number of observed pixels `n`.
    pub fn n_obs(&self) -> usize {
        self.observed.len()
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    /// Indices of observed pixels, ascending.
    pub fn observed(&self) -> &[usize] {
        &self.observed
    }

    /// `Fᵀ y`: pixel values, zero where unobserved.
    pub fn z_data(&self) -> &[f64] {
        &self.z
    }

    pub fn num_probes(&self) -> usize {
        self.num_probes
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Probe `t` as ±1 values, observation block first.
    pub fn probe(&self, t: usize) -> impl Iterator<Item = f64> + '_ {
        let len = self.augmented_len();
        self.probes[t * len..(t + 1) * len]
            .iter()
            .map(|&v| v as f64)
    }

    /// `n + q − 1`.
    pub fn augmented_len(&self) -> usize {
        self.observed.len() + self.grid.len() - 1
    }
}

/// Maps unconstrained coordinates `(log τ, log λ, log ν, logit 2α)` to parameters.
pub fn fld_from_transformed(x: &[f64; 4], kappa: f64) -> FldParams {
    let alpha = 0.5 / (1.0 + (-x[3]).exp());
    FldParams::new(x[0].exp(), x[1].exp(), x[2].exp(), alpha).with_kappa(kappa)
}

pub fn fld_to_transformed(p: &FldParams) -> [f64; 4] {
    let a = 2.0 * p.alpha;
    [p.tau.ln(), p.lambda.ln(), p.nu.ln(), (a / (1.0 - a)).ln()]
}

/// `dθ/dx` for the four coordinates.
fn chain(p: &FldParams, x: &[f64; 4]) -> [f64; 4] {
    let e = x[3].exp();
    let da = if e.is_finite() {
        0.5 * e / (1.0 + e).powi(2)
    } else {
        0.0
    };
    [p.tau, p.lambda, p.nu, da]
}

/// Spectral quantities at one parameter point.
struct Terms {
    tau: f64,
    lambda: f64,
    /// Penalty `diag(0, G)`.
    pen: Vec<f64>,
    /// `∂ log G / ∂ν`, `∂ log G / ∂α`; entry 0 unused.
    dlog_nu: Vec<f64>,
    dlog_alpha: Vec<f64>,
    minv: Vec<f64>,
}

impl Terms {
    fn new(grid: &GridSpec, p: &FldParams) -> Result<Self> {
        p.validate()?;
        if !(p.alpha > 0.0 && p.alpha < 0.5) {
            return Err(Error::Domain(format!(
                "alpha must lie in (0, 1/2) for fitting, got {}",
                p.alpha
            )));
        }
        let symbols = laplacian_symbols(grid, p.alpha, p.kappa)?;
        let d_row = laplacian_line_eigenvalues(grid.rows());
        let d_col = laplacian_line_eigenvalues(grid.cols());
        let q = grid.len();
        let mut pen = vec![0.0; q];
        let mut dlog_nu = vec![0.0; q];
        let mut dlog_alpha = vec![0.0; q];
        for j in 1..q {
            let s = symbols[j];
            let (r, c) = grid.coords(j);
            pen[j] = p.lambda * s.powf(p.nu);
            dlog_nu[j] = s.ln();
            dlog_alpha[j] = 4.0 * p.nu * (d_row[r] - d_col[c]) / s;
        }
        let minv = pen.iter().map(|l| 1.0 / (p.tau + l)).collect();
        Ok(Self {
            tau: p.tau,
            lambda: p.lambda,
            pen,
            dlog_nu,
            dlog_alpha,
            minv,
        })
    }
}

/// Per-thread buffers for operator applications.
struct Scratch {
    ws: crate::spectral::TransformWorkspace,
    field: Vec<f64>,
}

impl Scratch {
    fn new(system: &HlikSystem) -> Self {
        Self {
            ws: system.plan.workspace(),
            field: vec![0.0; system.len()],
        }
    }
}

/// Solves `(τ P D Pᵀ + diag(pen)) x = rhs` from the contents of `x`.
fn solve(
    system: &HlikSystem,
    terms: &Terms,
    rhs: &[f64],
    x: &mut [f64],
    tol: f64,
    s: &mut Scratch,
) -> std::result::Result<usize, f64> {
    pcg(
        |v, out| {
            s.field.copy_from_slice(v);
            system.plan.inverse_in_place(&mut s.field, &mut s.ws);
            for (f, m) in s.field.iter_mut().zip(&system.mask) {
                *f *= m;
            }
            system.plan.forward_in_place(&mut s.field, &mut s.ws);
            for i in 0..v.len() {
                out[i] = terms.tau * s.field[i] + terms.pen[i] * v[i];
            }
        },
        &terms.minv,
        rhs,
        x,
        tol,
        system.len().max(50),
    )
    .map(|st| st.iterations)
}

/// BLUP in both representations.
#[derive(Clone, Debug, PartialEq)]
pub struct BlupSolution {
    /// `φ̂` on the lattice, column-major.
    pub field: Vec<f64>,
    /// `φ̃ = P φ̂`.
    pub spectral: Vec<f64>,
    pub iterations: usize,
}

fn blup_with_terms(
    system: &HlikSystem,
    terms: &Terms,
    tol: f64,
    start: Option<&[f64]>,
    s: &mut Scratch,
) -> Result<BlupSolution> {
    let mut rhs = system.z.clone();
    system.plan.forward_in_place(&mut rhs, &mut s.ws);
    rhs.iter_mut().for_each(|v| *v *= terms.tau);
    let mut x = start.map_or_else(|| vec![0.0; system.len()], <[f64]>::to_vec);
    let iterations = solve(system, terms, &rhs, &mut x, tol, s).map_err(|res| {
        Error::Numerical(format!("BLUP solve stalled at relative residual {res:.3e}"))
    })?;
    let mut field = x.clone();
    system.plan.inverse_in_place(&mut field, &mut s.ws);
    Ok(BlupSolution {
        field,
        spectral: x,
        iterations,
    })
}

/// Best linear unbiased predictor of the lattice field (relative residual 1e−10).
pub fn blup_solve(system: &HlikSystem, params: &FldParams) -> Result<Vec<f64>> {
    Ok(blup_solve_with(system, params, 1e-10)?.field)
}

pub fn blup_solve_with(system: &HlikSystem, params: &FldParams, tol: f64) -> Result<BlupSolution> {
    let terms = Terms::new(&system.grid, params)?;
    blup_with_terms(system, &terms, tol, None, &mut Scratch::new(system))
}

/// How the trace terms of the score are evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TraceMode {
    /// Average over the system's frozen Rademacher probes.
    Probes,
    /// Sum over all unit vectors; `n + q − 1` solves, for small problems.
    Exact,
}

/// Score together with its ingredients, on the natural scale.
#[derive(Clone, Debug)]
pub struct ScoreDetail {
    /// Score in unconstrained coordinates.
    pub g: [f64; 4],
    /// Trace estimates `tr(Q⁻¹ Q_i (I − H))`.
    pub trace: [f64; 4],
    /// `rᵀ Q_i r`.
    pub quad: [f64; 4],
    /// Per-probe trace samples (empty in exact mode).
    pub samples: Vec<[f64; 4]>,
    pub chain: [f64; 4],
    pub blup: BlupSolution,
}

/// Score evaluator that can reuse solutions between nearby points.
pub struct ScoreEvaluator<'a> {
    system: &'a HlikSystem,
    kappa: f64,
    mode: TraceMode,
    tol: f64,
    warm: Option<WarmStarts>,
}

struct WarmStarts {
    blup: Vec<f64>,
    probes: Vec<Vec<f64>>,
}

impl<'a> ScoreEvaluator<'a> {
    pub fn new(system: &'a HlikSystem, kappa: f64, mode: TraceMode) -> Self {
        Self {
            system,
            kappa,
            mode,
            tol: 1e-10,
            warm: None,
        }
    }

    /// Relative residual for every inner solve.
    pub fn with_tolerance(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    /// Start each solve from the previous solution of the same right-hand side.
    pub fn with_warm_starts(mut self) -> Self {
        let q = self.system.len();
        self.warm = Some(WarmStarts {
            blup: vec![0.0; q],
            probes: vec![vec![0.0; q]; self.system.num_probes],
        });
        self
    }

    pub fn score(&mut self, x: &[f64; 4]) -> Result<[f64; 4]> {
        Ok(self.detail(x)?.g)
    }

    pub fn detail(&mut self, x: &[f64; 4]) -> Result<ScoreDetail> {
        let system = self.system;
        let params = fld_from_transformed(x, self.kappa);
        let terms = Terms::new(&system.grid, &params)?;
        let mut scratch = Scratch::new(system);
        let blup = blup_with_terms(
            system,
            &terms,
            self.tol,
            self.warm.as_ref().map(|w| w.blup.as_slice()),
            &mut scratch,
        )?;
        if let Some(w) = &mut self.warm {
            w.blup.copy_from_slice(&blup.spectral);
        }

        let mut quad = [0.0; 4];
        for &i in &system.observed {
            quad[0] += (system.z[i] - blup.field[i]).powi(2);
        }
        for j in 1..system.len() {
            let gp = terms.pen[j] * blup.spectral[j].powi(2);
            quad[1] += gp / terms.lambda;
            quad[2] += gp * terms.dlog_nu[j];
            quad[3] += gp * terms.dlog_alpha[j];
        }

        let tol = self.tol;
        let (trace, samples) = match self.mode {
            TraceMode::Probes => {
                let k = system.num_probes;
                let samples: Vec<[f64; 4]> = match &mut self.warm {
                    Some(w) => w
                        .probes
                        .par_iter_mut()
                        .enumerate()
                        .map(|(t, start)| {
                            let u: Vec<f64> = system.probe(t).collect();
                            probe_sample(system, &terms, &u, tol, Some(start), t)
                        })
                        .collect::<Result<_>>()?,
                    None => (0..k)
                        .into_par_iter()
                        .map(|t| {
                            let u: Vec<f64> = system.probe(t).collect();
                            probe_sample(system, &terms, &u, tol, None, t)
                        })
                        .collect::<Result<_>>()?,
                };
                let mut trace = [0.0; 4];
                for s in &samples {
                    for i in 0..4 {
                        trace[i] += s[i];
                    }
                }
                trace.iter_mut().for_each(|t| *t /= k as f64);
                (trace, samples)
            }
            TraceMode::Exact => {
                let len = system.augmented_len();
                let cols: Vec<[f64; 4]> = (0..len)
                    .into_par_iter()
                    .map(|e| {
                        let mut u = vec![0.0; len];
                        u[e] = 1.0;
                        probe_sample(system, &terms, &u, tol, None, e)
                    })
                    .collect::<Result<_>>()?;
                let mut trace = [0.0; 4];
                for s in &cols {
                    for i in 0..4 {
                        trace[i] += s[i];
                    }
                }
                (trace, Vec::new())
            }
        };
        let ch = chain(&params, x);
        let g = std::array::from_fn(|i| 0.5 * ch[i] * (trace[i] - quad[i]));
        Ok(ScoreDetail {
            g,
            trace,
            quad,
            samples,
            chain: ch,
            blup,
        })
    }
}

/// `uᵀ Q⁻¹ Q_i (I − H) u` for one augmented vector `u`.
fn probe_sample(
    system: &HlikSystem,
    terms: &Terms,
    u: &[f64],
    tol: f64,
    start: Option<&mut Vec<f64>>,
    index: usize,
) -> Result<[f64; 4]> {
    let n = system.n_obs();
    let q = system.len();
    let mut s = Scratch::new(system);
    // XᵀQ u in spectral coordinates
    let mut rhs = vec![0.0; q];
    for (k, &pix) in system.observed.iter().enumerate() {
        rhs[pix] = u[k];
    }
    system.plan.forward_in_place(&mut rhs, &mut s.ws);
    for j in 0..q {
        rhs[j] *= terms.tau;
        if j > 0 {
            rhs[j] += terms.pen[j] * u[n + j - 1];
        }
    }
    let mut v = match &start {
        Some(w) => w.to_vec(),
        None => vec![0.0; q],
    };
    solve(system, terms, &rhs, &mut v, tol, &mut s).map_err(|res| {
        Error::Numerical(format!(
            "probe {index}: solve stalled at relative residual {res:.3e}"
        ))
    })?;
    if let Some(w) = start {
        w.copy_from_slice(&v);
    }
    let mut xv = v.clone();
    system.plan.inverse_in_place(&mut xv, &mut s.ws);

    let mut out = [0.0; 4];
    for (k, &pix) in system.observed.iter().enumerate() {
        out[0] += u[k] * (u[k] - xv[pix]);
    }
    out[0] /= terms.tau;
    for j in 1..q {
        let uj = u[n + j - 1];
        let w = uj * (uj - v[j]);
        out[1] += w;
        out[2] += w * terms.dlog_nu[j];
        out[3] += w * terms.dlog_alpha[j];
    }
    out[1] /= terms.lambda;
    Ok(out)
}

/// Stochastic REML score at unconstrained coordinates `x` with the system's probes.
pub fn stochastic_score(x: &[f64; 4], system: &HlikSystem, kappa: f64) -> Result<[f64; 4]> {
    ScoreEvaluator::new(system, kappa, TraceMode::Probes).score(x)
}

/// Score with probe averages or exact traces, plus its ingredients.
pub fn score_detail(
    x: &[f64; 4],
    system: &HlikSystem,
    kappa: f64,
    mode: TraceMode,
) -> Result<ScoreDetail> {
    ScoreEvaluator::new(system, kappa, mode).detail(x)
}

#[derive(Clone, Debug)]
pub struct FldFitOptions {
    pub solver: SystemOptions,
    /// Relative residual of the inner solves.
    pub tolerance: f64,
    pub warm_starts: bool,
    pub mode: TraceMode,
}

impl Default for FldFitOptions {
    fn default() -> Self {
        Self {
            solver: SystemOptions::default(),
            tolerance: 1e-10,
            warm_starts: true,
            mode: TraceMode::Probes,
        }
    }
}

/// Solves the stochastic score equations from `init`; κ is held fixed.
pub fn fit_fld(
    system: &HlikSystem,
    init: &FldParams,
    options: &FldFitOptions,
) -> Result<FitResult> {
    init.validate()?;
    let kappa = init.kappa;
    let mut eval =
        ScoreEvaluator::new(system, kappa, options.mode).with_tolerance(options.tolerance);
    if options.warm_starts {
        eval = eval.with_warm_starts();
    }
    let x0 = fld_to_transformed(init);
    let report = solve_nonlinear_system(
        |x| {
            let x: [f64; 4] = x.try_into().expect("four parameters");
            match eval.score(&x) {
                Ok(g) => Ok(g.to_vec()),
                // outside the representable range the point is simply rejected
                Err(Error::Domain(_)) => Ok(vec![f64::NAN; 4]),
                Err(e) => Err(e),
            }
        },
        &x0,
        &options.solver,
    )?;
    let x: [f64; 4] = report.x.as_slice().try_into().expect("four parameters");
    let p = fld_from_transformed(&x, kappa);

    let mut warnings = Vec::new();
    let se_x = report.curvature.as_ref().and_then(|j| {
        let neg = faer::Mat::from_fn(4, 4, |r, c| -j[(r, c)]);
        let inv = invert(&neg)?;
        let diag: Vec<f64> = (0..4).map(|i| inv[(i, i)]).collect();
        diag.iter()
            .all(|d| *d > 0.0)
            .then(|| diag.iter().map(|d| d.sqrt()).collect::<Vec<_>>())
    });
    if se_x.is_none() {
        warnings.push(
            "score Jacobian does not give positive variances; standard errors unavailable".into(),
        );
    }
    let ch = chain(&p, &x);
    let se = se_x.map(|s| ParamValues {
        tau: ch[0] * s[0],
        sigma2: None,
        lambda: Some(ch[1] * s[1]),
        nu: ch[2] * s[2],
        alpha: ch[3] * s[3],
    });
    if !(0.005..=0.495).contains(&p.alpha) {
        warnings.push(format!(
            "alpha = {:.4} is at the boundary of (0, 1/2)",
            p.alpha
        ));
    }
    if x.iter().any(|v| v.abs() > 20.0) {
        warnings
            .push("a transformed parameter diverged; the score equations may have no root".into());
    }
    Ok(FitResult {
        model: Model::Fld,
        estimates: ParamValues {
            tau: p.tau,
            sigma2: None,
            lambda: Some(p.lambda),
            nu: p.nu,
            alpha: p.alpha,
        },
        se,
        transformed_optimum: x,
        converged: report.converged,
        stop_reason: report.reason,
        iterations: report.iterations,
        evaluations: report.evaluations,
        n_obs: system.n_obs(),
        neg_loglik: None,
        score_norm: Some(report.value),
        gradient_norm: None,
        kappa: Some(kappa),
        probes: Some(system.num_probes),
        seed: Some(system.seed),
        warnings,
    })
}

/// Kriged surface: the BLUP at the fitted parameters, plus the trend
/// evaluated at each pixel row's latitude when given.
pub fn krige_surface(
    fit: &FitResult,
    system: &HlikSystem,
    trend: Option<&QuadraticTrend>,
) -> Result<Vec<f64>> {
    let params = fit
        .fld_params()
        .ok_or_else(|| Error::Input("kriging needs a lattice-model fit".into()))?;
    let mut surface = blup_solve(system, &params)?;
    if let Some(t) = trend {
        let grid = system.grid();
        if grid.bbox().is_none() {
            return Err(Error::Input(
                "adding a trend needs a grid with a bounding box".into(),
            ));
        }
        for (idx, v) in surface.iter_mut().enumerate() {
            let (row, _) = grid.coords(idx);
            *v += t.eval(grid.row_latitude(row).expect("bbox present"));
        }
    }
    Ok(surface)
}

/// Probe-trace Monte-Carlo standard errors of each score component.
pub fn score_standard_errors(detail: &ScoreDetail) -> [f64; 4] {
    let k = detail.samples.len();
    if k < 2 {
        return [f64::NAN; 4];
    }
    std::array::from_fn(|i| {
        let mean = detail.samples.iter().map(|s| s[i]).sum::<f64>() / k as f64;
        let var = detail
            .samples
            .iter()
            .map(|s| (s[i] - mean).powi(2))
            .sum::<f64>()
            / (k - 1) as f64;
        0.5 * detail.chain[i].abs() * (var / k as f64).sqrt()
    })
}
