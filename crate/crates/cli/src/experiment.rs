//! Replicated simulation studies.
//!
//! `accuracy` draws a continuum field with a nugget at random pixels of a
//! square lattice embedded in the unit square and fits both estimators.
//! `scale` draws a lattice field on a large grid, keeps a random fraction of
//! pixels and fits the lattice model alone.

use std::path::{Path, PathBuf};
use std::time::Instant;

use fracfield::dense::{fit_fgf, DenseFitOptions};
use fracfield::error::{Error, Result};
use fracfield::fit::{FitResult, Model};
use fracfield::hlik::{fit_fld, FldFitOptions, HlikSystem};
use fracfield::io::{write_table_csv, Cell, GriddedData};
use fracfield::simulate::{
    add_noise_and_mean, sample_fgf_sites, sample_fld, select_sites, Selection,
};
use fracfield::spectral::GridSpec;
use fracfield::variogram::{FgfParams, FldParams};
use rayon::prelude::*;
use serde_json::json;

use crate::args::{ExperimentArgs, Study};
use crate::provenance::{sidecar_path, Provenance};
use crate::CliError;

pub const MAX_SIZE: usize = 256;
pub const MAX_REPLICATES: usize = 100;
/// Normal quantile for 95% intervals.
pub const Z95: f64 = 1.959_963_984_540_054;

#[derive(Clone, Debug)]
pub struct AccuracyConfig {
    pub size: usize,
    pub sites: usize,
    pub truth: FgfParams,
    pub probes: usize,
    pub replicates: usize,
    pub seed: u64,
}

impl Default for AccuracyConfig {
    fn default() -> Self {
        Self {
            size: 60,
            sites: 1500,
            truth: FgfParams::new(1.0, 2.0, 1.25, 0.25),
            probes: 50,
            replicates: 20,
            seed: 0,
        }
    }
}

impl AccuracyConfig {
    /// Lattice precision scale matching the continuum field at this pixel size.
    pub fn implied_lambda(&self) -> f64 {
        let nu = self.truth.nu;
        4f64.powf(nu) * (self.size as f64).powf(2.0 * nu - 2.0) / self.truth.sigma2
    }

    /// The continuum truth restated in lattice parameters.
    pub fn fld_truth(&self) -> FldParams {
        FldParams::new(
            self.truth.tau,
            self.implied_lambda(),
            self.truth.nu,
            self.truth.alpha,
        )
    }
}

#[derive(Clone, Debug)]
pub struct ScaleConfig {
    pub size: usize,
    pub fraction: f64,
    pub truth: FldParams,
    pub probes: usize,
    pub replicates: usize,
    pub seed: u64,
}

impl Default for ScaleConfig {
    fn default() -> Self {
        Self {
            size: 128,
            fraction: 0.6,
            truth: FldParams::new(4.0, 8.0, 1.25, 0.25),
            probes: 50,
            replicates: 20,
            seed: 0,
        }
    }
}

/// One fit of one replicate.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub replicate: usize,
    pub seed: u64,
    pub model: Model,
    pub fit: std::result::Result<FitResult, String>,
    pub seconds: f64,
}

impl Outcome {
    pub fn converged(&self) -> bool {
        self.fit.as_ref().is_ok_and(|f| f.converged)
    }
}

/// Seed of replicate `r`; distinct replicates get unrelated streams.
pub fn replicate_seed(base: u64, r: usize) -> u64 {
    let mut z = base ^ (r as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn timed(
    replicate: usize,
    seed: u64,
    model: Model,
    f: impl FnOnce() -> Result<FitResult>,
) -> Outcome {
    let start = Instant::now();
    let fit = f().map_err(|e| e.to_string());
    Outcome {
        replicate,
        seed,
        model,
        fit,
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn check_caps(size: usize, replicates: usize) -> Result<()> {
    if size == 0 || size > MAX_SIZE {
        return Err(Error::Config(format!(
            "grid side must lie in 1..={MAX_SIZE}, got {size}"
        )));
    }
    if replicates == 0 || replicates > MAX_REPLICATES {
        return Err(Error::Config(format!(
            "replicates must lie in 1..={MAX_REPLICATES}, got {replicates}"
        )));
    }
    Ok(())
}

/// Replicate `r`: the dense fit first, then the lattice fit.
pub fn accuracy_replicate(cfg: &AccuracyConfig, r: usize) -> Result<[Outcome; 2]> {
    let seed = replicate_seed(cfg.seed, r);
    let grid = GridSpec::new(cfg.size, cfg.size)?;
    let idx = select_sites(&grid, Selection::Count(cfg.sites), seed)?;
    let side = cfg.size as f64;
    let coords: Vec<(f64, f64)> = idx
        .iter()
        .map(|&i| {
            let (row, col) = grid.coords(i);
            (row as f64 / side, col as f64 / side)
        })
        .collect();
    let t = &cfg.truth;
    let psi = sample_fgf_sites(&coords, t.sigma2, t.nu, t.alpha, seed)?;
    let y = add_noise_and_mean(&psi, 0.0, t.tau, seed)?;

    let fgf = timed(r, seed, Model::Fgf, || {
        fit_fgf(&coords, &y, t, &DenseFitOptions::default())
    });

    let mut values = vec![0.0; grid.len()];
    let mut counts = vec![0; grid.len()];
    for (&i, &v) in idx.iter().zip(&y) {
        values[i] = v;
        counts[i] = 1;
    }
    let data = GriddedData::new(grid, values, counts)?;
    let fld = timed(r, seed, Model::Fld, || {
        let system = HlikSystem::new(&data, cfg.probes, seed)?;
        fit_fld(&system, &cfg.fld_truth(), &FldFitOptions::default())
    });
    Ok([fgf, fld])
}

/// Both estimators on every replicate, ordered by replicate then model.
pub fn run_accuracy(cfg: &AccuracyConfig) -> Result<Vec<Outcome>> {
    check_caps(cfg.size, cfg.replicates)?;
    cfg.truth.validate()?;
    if cfg.sites > cfg.size * cfg.size {
        return Err(Error::Config(format!(
            "{} sites do not fit on a {0}x{0} grid",
            cfg.sites
        )));
    }
    let per: Vec<[Outcome; 2]> = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| accuracy_replicate(cfg, r))
        .collect::<Result<_>>()?;
    Ok(per.into_iter().flatten().collect())
}

/// Replicate `r` of the lattice-only study.
pub fn scale_replicate(cfg: &ScaleConfig, r: usize) -> Result<Outcome> {
    let seed = replicate_seed(cfg.seed, r);
    let grid = GridSpec::new(cfg.size, cfg.size)?;
    let field = sample_fld(&grid, &cfg.truth, seed)?;
    let y = add_noise_and_mean(&field.values, 0.0, cfg.truth.tau, seed)?;
    let keep = select_sites(&grid, Selection::Fraction(cfg.fraction), seed)?;
    let mut values = vec![0.0; grid.len()];
    let mut counts = vec![0; grid.len()];
    for &i in &keep {
        values[i] = y[i];
        counts[i] = 1;
    }
    let data = GriddedData::new(grid, values, counts)?;
    Ok(timed(r, seed, Model::Fld, || {
        let system = HlikSystem::new(&data, cfg.probes, seed)?;
        fit_fld(&system, &cfg.truth, &FldFitOptions::default())
    }))
}

/// Lattice fits on every replicate, in replicate order.
pub fn run_scale(cfg: &ScaleConfig) -> Result<Vec<Outcome>> {
    check_caps(cfg.size, cfg.replicates)?;
    cfg.truth.validate()?;
    (0..cfg.replicates)
        .into_par_iter()
        .map(|r| scale_replicate(cfg, r))
        .collect()
}

/// Per-parameter summary of one estimator across replicates.
#[derive(Clone, Debug)]
pub struct ParamSummary {
    pub model: Model,
    pub parameter: &'static str,
    pub truth: f64,
    /// Replicates with a finite estimate.
    pub fits: usize,
    pub median: f64,
    pub mean: f64,
    pub median_relative_bias: f64,
    /// Share of 95% intervals containing the truth, among fits with standard errors.
    pub coverage: f64,
    pub mean_width: f64,
    /// Replicates that errored or did not converge.
    pub failures: usize,
    pub mean_seconds: f64,
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        f64::NAN
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

fn fld_array(p: &FldParams) -> [f64; 4] {
    [p.tau, p.lambda, p.nu, p.alpha]
}

fn names(model: Model) -> [&'static str; 4] {
    match model {
        Model::Fgf => ["tau", "sigma2", "nu", "alpha"],
        Model::Fld => ["tau", "lambda", "nu", "alpha"],
    }
}

/// Summaries for `model`, one per parameter.
pub fn summarize(outcomes: &[Outcome], model: Model, truth: [f64; 4]) -> Vec<ParamSummary> {
    let ours: Vec<&Outcome> = outcomes.iter().filter(|o| o.model == model).collect();
    let failures = ours.iter().filter(|o| !o.converged()).count();
    let seconds: Vec<f64> = ours.iter().map(|o| o.seconds).collect();
    let fits: Vec<&FitResult> = ours.iter().filter_map(|o| o.fit.as_ref().ok()).collect();
    (0..4)
        .map(|p| {
            let est: Vec<f64> = fits
                .iter()
                .map(|f| f.estimates.as_array()[p])
                .filter(|x| x.is_finite())
                .collect();
            let intervals: Vec<(f64, f64)> = fits
                .iter()
                .filter_map(|f| f.intervals(Z95))
                .map(|iv| iv[p])
                .filter(|(lo, hi)| lo.is_finite() && hi.is_finite())
                .collect();
            let covered = intervals
                .iter()
                .filter(|(lo, hi)| *lo <= truth[p] && truth[p] <= *hi)
                .count();
            let widths: Vec<f64> = intervals.iter().map(|(lo, hi)| hi - lo).collect();
            let med = median(&est);
            ParamSummary {
                model,
                parameter: names(model)[p],
                truth: truth[p],
                fits: est.len(),
                median: med,
                mean: mean(&est),
                median_relative_bias: (med - truth[p]) / truth[p],
                coverage: if intervals.is_empty() {
                    f64::NAN
                } else {
                    covered as f64 / intervals.len() as f64
                },
                mean_width: mean(&widths),
                failures,
                mean_seconds: mean(&seconds),
            }
        })
        .collect()
}

pub const REPLICATE_HEADER: [&str; 14] = [
    "replicate",
    "seed",
    "model",
    "converged",
    "tau",
    "scale",
    "nu",
    "alpha",
    "se_tau",
    "se_scale",
    "se_nu",
    "se_alpha",
    "seconds",
    "error",
];

pub const SUMMARY_HEADER: [&str; 12] = [
    "model",
    "parameter",
    "truth",
    "fits",
    "median",
    "mean",
    "median_relative_bias",
    "coverage",
    "mean_ci_width",
    "failures",
    "mean_seconds",
    "replicates",
];

fn model_name(m: Model) -> &'static str {
    match m {
        Model::Fgf => "fgf",
        Model::Fld => "fld",
    }
}

pub fn replicate_rows(outcomes: &[Outcome]) -> Vec<Vec<Cell>> {
    outcomes
        .iter()
        .map(|o| {
            let mut row: Vec<Cell> = vec![
                o.replicate.into(),
                Cell::Text(o.seed.to_string()),
                model_name(o.model).into(),
                Cell::Int(o.converged() as i64),
            ];
            match &o.fit {
                Ok(f) => {
                    row.extend(f.estimates.as_array().map(Cell::from));
                    match f.se {
                        Some(se) => row.extend(se.as_array().map(Cell::from)),
                        None => {
                            row.extend([Cell::Missing, Cell::Missing, Cell::Missing, Cell::Missing])
                        }
                    }
                    row.push(o.seconds.into());
                    row.push(Cell::Missing);
                }
                Err(e) => {
                    row.extend(std::iter::repeat(Cell::Missing).take(8));
                    row.push(o.seconds.into());
                    row.push(Cell::Text(format!("\"{}\"", e.replace('"', "'"))));
                }
            }
            row
        })
        .collect()
}

pub fn summary_rows(summaries: &[ParamSummary], replicates: usize) -> Vec<Vec<Cell>> {
    summaries
        .iter()
        .map(|s| {
            vec![
                model_name(s.model).into(),
                s.parameter.into(),
                s.truth.into(),
                s.fits.into(),
                s.median.into(),
                s.mean.into(),
                s.median_relative_bias.into(),
                s.coverage.into(),
                s.mean_width.into(),
                s.failures.into(),
                s.mean_seconds.into(),
                replicates.into(),
            ]
        })
        .collect()
}

/// `runs.csv` -> `runs_summary.csv`.
pub fn summary_path(out: &Path) -> PathBuf {
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let ext = out
        .extension()
        .map(|e| e.to_string_lossy().into_owned())
        .unwrap_or_else(|| "csv".into());
    out.with_file_name(format!("{stem}_summary.{ext}"))
}

pub fn run_command(a: &ExperimentArgs) -> Result<(), CliError> {
    let default_size = match a.which {
        Study::Accuracy => 60,
        Study::Scale => 128,
    };
    let size = a.size.unwrap_or(default_size);
    if size == 0 || size > MAX_SIZE {
        return Err(CliError::usage(format!(
            "--size must lie in 1..={MAX_SIZE}"
        )));
    }
    if a.replicates == 0 || a.replicates > MAX_REPLICATES {
        return Err(CliError::usage(format!(
            "--replicates must lie in 1..={MAX_REPLICATES}"
        )));
    }
    let nu = a.nu.unwrap_or(1.25);
    let (outcomes, summaries, params) = match a.which {
        Study::Accuracy => {
            let cfg = AccuracyConfig {
                size,
                sites: a.sites,
                truth: FgfParams::new(a.tau.unwrap_or(1.0), a.sigma2, nu, a.alpha),
                probes: a.probes,
                replicates: a.replicates,
                seed: a.seed,
            };
            let outcomes = run_accuracy(&cfg)?;
            let t = cfg.truth;
            let mut s = summarize(&outcomes, Model::Fgf, [t.tau, t.sigma2, t.nu, t.alpha]);
            s.extend(summarize(
                &outcomes,
                Model::Fld,
                fld_array(&cfg.fld_truth()),
            ));
            let params = json!({
                "which": "accuracy", "size": size, "sites": cfg.sites, "tau": t.tau, "sigma2": t.sigma2,
                "nu": t.nu, "alpha": t.alpha, "implied_lambda": cfg.implied_lambda(),
                "probes": cfg.probes, "replicates": cfg.replicates,
            });
            (outcomes, s, params)
        }
        Study::Scale => {
            let cfg = ScaleConfig {
                size,
                fraction: a.fraction,
                truth: FldParams::new(a.tau.unwrap_or(4.0), a.lambda, nu, a.alpha),
                probes: a.probes,
                replicates: a.replicates,
                seed: a.seed,
            };
            let outcomes = run_scale(&cfg)?;
            let s = summarize(&outcomes, Model::Fld, fld_array(&cfg.truth));
            let t = cfg.truth;
            let params = json!({
                "which": "scale", "size": size, "fraction": cfg.fraction, "tau": t.tau, "lambda": t.lambda,
                "nu": t.nu, "alpha": t.alpha, "probes": cfg.probes, "replicates": cfg.replicates,
            });
            (outcomes, s, params)
        }
    };
    write_table_csv(&a.out, &REPLICATE_HEADER, &replicate_rows(&outcomes))?;
    let summary = summary_path(&a.out);
    write_table_csv(
        &summary,
        &SUMMARY_HEADER,
        &summary_rows(&summaries, a.replicates),
    )?;
    for s in &summaries {
        println!(
            "{} {:>6}: median {:.4} (truth {:.4}), coverage {:.2}, mean width {:.4}, failures {}",
            model_name(s.model),
            s.parameter,
            s.median,
            s.truth,
            s.coverage,
            s.mean_width,
            s.failures
        );
    }
    Provenance::new("experiment", Some(a.seed), params)
        .output(&a.out)
        .output(&summary)
        .write(&sidecar_path(&a.out))
}
