//! Ocean temperature pipeline: latitude trend, directional variograms, the
//! dense fit at the sites, binning, the lattice fit and the kriged map.

use std::fs;
use std::path::{Path, PathBuf};

use fracfield::dense::{fit_fgf, DenseFitOptions};
use fracfield::error::Result;
use fracfield::fit::FitResult;
use fracfield::hlik::{fit_fld, krige_surface, FldFitOptions, HlikSystem};
use fracfield::io::{
    bin_to_grid, fit_quadratic_trend, read_site_csv, write_json, write_surface_csv,
    write_table_csv, Cell, ColumnMap, CsvOptions, Delimiter, GriddedData, OutsidePolicy,
    QuadraticTrend, Site,
};
use fracfield::spectral::BoundingBox;
use fracfield::variogram::{
    continuum_variogram, empirical_directional_variogram, lattice_variogram_table,
    DirectionalVariogram, FgfParams, FldParams, STANDARD_DIRECTIONS,
};
use serde::Serialize;
use serde_json::json;

use crate::args::ArgoArgs;
use crate::commands::{default_bins, require_input};
use crate::provenance::Provenance;
use crate::{CliError, StageExt};

/// Starting smoothness for both fits.
const INIT_NU: f64 = 1.25;
const INIT_ALPHA: f64 = 0.25;
const VARIOGRAM_BINS: usize = 15;
const ANGLE_TOL: f64 = 22.5;
/// Lag in pixels at which the lattice start matches half the residual variance.
const MATCH_LAG: usize = 4;

#[derive(Clone, Debug)]
pub struct ArgoConfig {
    pub bbox: BoundingBox,
    pub rows: usize,
    pub cols: usize,
    pub probes: usize,
    pub seed: u64,
    pub run_fgf: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct TrendReport {
    /// `a0 + a1 l + a2 l²` in degrees latitude.
    pub coefficients: [f64; 3],
    pub std_errors: [f64; 3],
    pub sites: usize,
    pub malformed: usize,
    pub outside_box: usize,
    pub residual_variance: f64,
}

#[derive(Clone, Debug)]
pub struct ArgoOutput {
    pub trend: QuadraticTrend,
    pub report: TrendReport,
    pub variograms: Vec<DirectionalVariogram>,
    pub fgf: Option<FitResult>,
    pub fld: FitResult,
    pub gridded: GriddedData,
    pub surface: Vec<f64>,
}

fn variance(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)
}

/// Starting values: half the residual variance as nugget, the other half as
/// the variogram at a moderate lag.
fn fgf_start(residuals: &[Site], var: f64) -> Result<FgfParams> {
    let edges = default_bins(residuals, VARIOGRAM_BINS);
    let lag = edges[edges.len() / 3].max(f64::MIN_POSITIVE);
    let unit = continuum_variogram(lag, 0.0, 1.0, INIT_NU, INIT_ALPHA)?;
    Ok(FgfParams::new(
        2.0 / var,
        0.5 * var / unit,
        INIT_NU,
        INIT_ALPHA,
    ))
}

fn fld_start(var: f64) -> Result<FldParams> {
    let unit = FldParams::new(1.0, 1.0, INIT_NU, INIT_ALPHA);
    let table = lattice_variogram_table(&unit, 1, MATCH_LAG, 1024)?;
    let gamma = table.get(MATCH_LAG as i64, 0).unwrap_or(1.0);
    Ok(FldParams::new(
        2.0 / var,
        gamma / (0.5 * var),
        INIT_NU,
        INIT_ALPHA,
    ))
}

/// Runs every stage on a site table already read from disk.
pub fn run_pipeline(
    table_sites: &[Site],
    malformed: usize,
    cfg: &ArgoConfig,
) -> Result<ArgoOutput, CliError> {
    let b = cfg.bbox;
    let inside: Vec<Site> = table_sites
        .iter()
        .copied()
        .filter(|s| s.u <= b.north && s.u >= b.south && s.v >= b.west && s.v <= b.east)
        .collect();
    let outside_box = table_sites.len() - inside.len();
    if inside.len() < 10 {
        return Err(CliError::usage(format!(
            "only {} observations inside the bounding box",
            inside.len()
        )));
    }

    let trend = fit_quadratic_trend(&inside).stage("trend")?;
    let residuals: Vec<Site> = inside
        .iter()
        .zip(&trend.residuals)
        .map(|(s, &r)| Site { value: r, ..*s })
        .collect();
    let var = variance(&trend.residuals);
    let report = TrendReport {
        coefficients: trend.coefficients,
        std_errors: trend.std_errors,
        sites: inside.len(),
        malformed,
        outside_box,
        residual_variance: var,
    };

    let edges = default_bins(&residuals, VARIOGRAM_BINS);
    let directions: Vec<Option<f64>> = STANDARD_DIRECTIONS.iter().map(|&d| Some(d)).collect();
    let variograms = empirical_directional_variogram(&residuals, &directions, ANGLE_TOL, &edges)
        .stage("variogram")?;

    let fgf = if cfg.run_fgf {
        let coords: Vec<(f64, f64)> = residuals.iter().map(|s| (s.u, s.v)).collect();
        let y: Vec<f64> = residuals.iter().map(|s| s.value).collect();
        let init = fgf_start(&residuals, var).stage("fgf fit")?;
        Some(fit_fgf(&coords, &y, &init, &DenseFitOptions::default()).stage("fgf fit")?)
    } else {
        None
    };

    let gridded =
        bin_to_grid(&residuals, b, cfg.rows, cfg.cols, OutsidePolicy::Drop).stage("binning")?;
    let system = HlikSystem::new(&gridded, cfg.probes, cfg.seed).stage("fld fit")?;
    let init = fld_start(var).stage("fld fit")?;
    let fld = fit_fld(&system, &init, &FldFitOptions::default()).stage("fld fit")?;
    let surface = krige_surface(&fld, &system, Some(&trend)).stage("kriging")?;

    Ok(ArgoOutput {
        trend,
        report,
        variograms,
        fgf,
        fld,
        gridded,
        surface,
    })
}

/// Writes the artifacts of [`run_pipeline`] into `dir` and returns their paths.
pub fn write_outputs(out: &ArgoOutput, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let path = dir.join("trend.json");
    write_json(&path, &out.report)?;
    written.push(path);

    let path = dir.join("variogram.csv");
    let rows: Vec<Vec<Cell>> = out
        .variograms
        .iter()
        .flat_map(|vg| {
            vg.bins.iter().map(move |b| {
                vec![
                    vg.direction.into(),
                    b.lower.into(),
                    b.upper.into(),
                    b.mean_lag.into(),
                    b.semivariance.into(),
                    b.pairs.into(),
                ]
            })
        })
        .collect();
    write_table_csv(
        &path,
        &[
            "direction",
            "lower",
            "upper",
            "mean_lag",
            "semivariance",
            "pairs",
        ],
        &rows,
    )?;
    written.push(path);

    if let Some(fgf) = &out.fgf {
        let path = dir.join("fgf_fit.json");
        write_json(&path, fgf)?;
        written.push(path);
    }
    let path = dir.join("fld_fit.json");
    write_json(&path, &out.fld)?;
    written.push(path);

    let path = dir.join("kriged_surface.csv");
    write_surface_csv(&path, &out.gridded.grid, &out.surface)?;
    written.push(path);
    let path = dir.join("kriged_surface.json");
    write_json(&path, &out.gridded.grid)?;
    written.push(path);
    Ok(written)
}

pub fn run_command(a: &ArgoArgs) -> Result<(), CliError> {
    require_input(&a.input)?;
    let bbox = BoundingBox::new(a.north, a.south, a.west, a.east)
        .map_err(|e| CliError::usage(e.to_string()))?;
    let options = CsvOptions {
        delimiter: if a.whitespace {
            Delimiter::Whitespace
        } else {
            Delimiter::Comma
        },
        columns: ColumnMap::argo(),
        geographic: true,
    };
    let table = read_site_csv(&a.input, &options).stage("read")?;
    let cfg = ArgoConfig {
        bbox,
        rows: a.rows,
        cols: a.cols,
        probes: a.probes,
        seed: a.seed,
        run_fgf: !a.skip_fgf,
    };
    let out = run_pipeline(&table.sites, table.malformed, &cfg)?;
    fs::create_dir_all(&a.out_dir).map_err(|source| CliError::Stage {
        stage: "write",
        source: fracfield::error::Error::Io {
            path: a.out_dir.clone(),
            source,
        },
    })?;
    let written = write_outputs(&out, &a.out_dir).stage("write")?;

    let [a0, a1, a2] = out.trend.coefficients;
    println!(
        "trend: {a0:.4} + {a1:.6} l + {a2:.8} l^2 ({} sites)",
        out.report.sites
    );
    if let Some(f) = &out.fgf {
        println!("fgf: {}", f.summary());
    }
    println!("fld: {}", out.fld.summary());

    let params = json!({
        "input": a.input.display().to_string(),
        "bbox": bbox, "rows": a.rows, "cols": a.cols, "probes": a.probes, "skip_fgf": a.skip_fgf,
    });
    let mut prov = Provenance::new("argo", Some(a.seed), params);
    for p in &written {
        prov = prov.output(p);
    }
    prov.write(&a.out_dir.join("provenance.json"))
}
