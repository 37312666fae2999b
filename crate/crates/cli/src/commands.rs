//! `simulate`, `fit` and `variogram`.

use std::path::Path;

use fracfield::dense::{fit_fgf, DenseFitOptions};
use fracfield::fit::FitResult;
use fracfield::hlik::{fit_fld, krige_surface, FldFitOptions, HlikSystem};
use fracfield::io::{
    read_site_csv, read_surface_csv, write_json, write_site_csv, write_surface_csv,
    write_table_csv, Cell, ColumnMap, CsvOptions, Delimiter, GriddedData, Site,
};
use fracfield::simulate::{
    add_noise_and_mean, sample_fgf_sites, sample_fld, select_sites, Selection,
};
use fracfield::spectral::GridSpec;
use fracfield::variogram::{
    continuum_variogram, empirical_directional_variogram, lattice_variogram_table, variogram_gaps,
    FgfParams, FldParams,
};
use serde_json::json;

use crate::args::{ColumnArgs, FitArgs, ModelArg, SimulateArgs, VariogramArgs, VariogramMode};
use crate::provenance::{sidecar_path, Provenance};
use crate::CliError;

fn selection(sites: Option<usize>, fraction: Option<f64>) -> Option<Selection> {
    sites
        .map(Selection::Count)
        .or(fraction.map(Selection::Fraction))
}

pub fn simulate(a: &SimulateArgs) -> Result<(), CliError> {
    let grid = GridSpec::new(a.rows, a.cols)?;
    let params;
    match a.model {
        ModelArg::Fld => {
            let p = FldParams::new(a.tau, a.lambda, a.nu, a.alpha).with_kappa(a.kappa);
            p.validate()?;
            let field = sample_fld(&grid, &p, a.seed)?;
            let mut y = add_noise_and_mean(&field.values, a.mu, a.tau, a.seed)?;
            if let Some(sel) = selection(a.sites, a.fraction) {
                let keep = select_sites(&grid, sel, a.seed)?;
                let mut mask = vec![true; grid.len()];
                keep.iter().for_each(|&i| mask[i] = false);
                y.iter_mut()
                    .zip(&mask)
                    .filter(|(_, &m)| m)
                    .for_each(|(v, _)| *v = f64::NAN);
            }
            write_surface_csv(&a.out, &grid, &y)?;
            params = json!({
                "model": "fld", "rows": a.rows, "cols": a.cols, "tau": a.tau, "lambda": a.lambda,
                "nu": a.nu, "alpha": a.alpha, "kappa": a.kappa, "mu": a.mu,
                "sites": a.sites, "fraction": a.fraction,
            });
        }
        ModelArg::Fgf => {
            let n = a
                .sites
                .ok_or_else(|| CliError::usage("--model fgf needs --sites"))?;
            if !(a.spacing > 0.0 && a.spacing.is_finite()) {
                return Err(CliError::usage("--spacing must be positive"));
            }
            FgfParams::new(a.tau, a.sigma2, a.nu, a.alpha).validate()?;
            let keep = select_sites(&grid, Selection::Count(n), a.seed)?;
            let coords: Vec<(f64, f64)> = keep
                .iter()
                .map(|&i| {
                    let (r, c) = grid.coords(i);
                    (r as f64 * a.spacing, c as f64 * a.spacing)
                })
                .collect();
            let psi = sample_fgf_sites(&coords, a.sigma2, a.nu, a.alpha, a.seed)?;
            let y = add_noise_and_mean(&psi, a.mu, a.tau, a.seed)?;
            let sites: Vec<Site> = coords
                .iter()
                .zip(&y)
                .map(|(&(u, v), &value)| Site { u, v, value })
                .collect();
            write_site_csv(&a.out, &sites)?;
            params = json!({
                "model": "fgf", "rows": a.rows, "cols": a.cols, "tau": a.tau, "sigma2": a.sigma2,
                "nu": a.nu, "alpha": a.alpha, "mu": a.mu, "sites": n, "spacing": a.spacing,
            });
        }
    }
    Provenance::new("simulate", Some(a.seed), params)
        .output(&a.out)
        .write(&sidecar_path(&a.out))
}

/// Missing inputs are usage errors rather than I/O failures.
pub(crate) fn require_input(path: &Path) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::usage(format!(
            "input file {} does not exist",
            path.display()
        )))
    }
}

fn csv_options(c: &ColumnArgs) -> CsvOptions {
    CsvOptions {
        delimiter: if c.whitespace {
            Delimiter::Whitespace
        } else {
            Delimiter::Comma
        },
        columns: ColumnMap::new(&c.u_col, &c.v_col, &c.value_col),
        geographic: false,
    }
}

type Coords = Vec<(f64, f64)>;

fn read_sites(path: &Path, columns: &ColumnArgs) -> Result<(Coords, Vec<f64>), CliError> {
    let table = read_site_csv(path, &csv_options(columns))?;
    if table.malformed > 0 {
        eprintln!(
            "warning: skipped {} malformed rows in {}",
            table.malformed,
            path.display()
        );
    }
    Ok((
        table.sites.iter().map(|s| (s.u, s.v)).collect(),
        table.values(),
    ))
}

fn report(fit: &FitResult) {
    println!("{}", fit.summary());
    for w in &fit.warnings {
        eprintln!("warning: {w}");
    }
}

pub fn fit(a: &FitArgs) -> Result<(), CliError> {
    require_input(&a.input)?;
    let fit = match a.model {
        ModelArg::Fgf => {
            if a.krige.is_some() {
                return Err(CliError::usage("--krige is only available for --model fld"));
            }
            let (sites, y) = read_sites(&a.input, &a.columns)?;
            let init = FgfParams::new(a.init_tau, a.init_scale, a.init_nu, a.init_alpha);
            fit_fgf(&sites, &y, &init, &DenseFitOptions::default())?
        }
        ModelArg::Fld => {
            let (grid, values) = read_surface_csv(&a.input)?;
            let data = GriddedData::from_surface(grid, values)?;
            let system = HlikSystem::new(&data, a.probes, a.seed)?;
            let init = FldParams::new(a.init_tau, a.init_scale, a.init_nu, a.init_alpha)
                .with_kappa(a.kappa);
            let fit = fit_fld(&system, &init, &FldFitOptions::default())?;
            if let Some(path) = &a.krige {
                let surface = krige_surface(&fit, &system, None)?;
                write_surface_csv(path, system.grid(), &surface)?;
                write_json(&sidecar_path(path), &system.grid())?;
            }
            fit
        }
    };
    report(&fit);
    write_json(&a.out, &fit)?;
    let params = json!({
        "model": fit.model, "input": a.input.display().to_string(),
        "init": [a.init_tau, a.init_scale, a.init_nu, a.init_alpha],
        "kappa": a.kappa, "probes": a.probes,
    });
    let mut prov = Provenance::new("fit", Some(a.seed), params).output(&a.out);
    if let Some(k) = &a.krige {
        prov = prov.output(k);
    }
    prov.write(&sidecar_path(&a.out))
}

pub fn variogram(a: &VariogramArgs) -> Result<(), CliError> {
    let max_lag = a
        .max_lag
        .unwrap_or(if a.mode == VariogramMode::Gap { 20 } else { 10 });
    let alpha = a.alpha.unwrap_or(if a.mode == VariogramMode::Gap {
        0.1
    } else {
        0.25
    });
    let (header, rows): (Vec<&str>, Vec<Vec<Cell>>) = match a.mode {
        VariogramMode::Continuum => {
            let mut rows = Vec::new();
            for h in 0..=max_lag as i64 {
                for k in 0..=max_lag as i64 {
                    let g = continuum_variogram(h as f64, k as f64, a.sigma2, a.nu, alpha)?;
                    let d = ((h * h + k * k) as f64).sqrt();
                    rows.push(vec![h.into(), k.into(), d.into(), g.into()]);
                }
            }
            (vec!["h", "k", "lag_distance", "gamma"], rows)
        }
        VariogramMode::Lattice => {
            let p = FldParams::new(1.0, a.lambda, a.nu, alpha);
            let table = lattice_variogram_table(&p, a.refinement, max_lag, a.frequencies)?;
            let rows = table
                .rows(alpha)
                .into_iter()
                .map(|(h, k, d, g)| vec![h.into(), k.into(), d.into(), g.into()])
                .collect();
            (vec!["h", "k", "lag_distance", "gamma"], rows)
        }
        VariogramMode::Gap => {
            let lags: Vec<(i64, i64)> = (1..=max_lag as i64).map(|h| (h, 0)).collect();
            let mut rows = Vec::new();
            for &nu in &a.nus {
                let gaps = variogram_gaps(nu, alpha, &a.ms, &lags, a.frequencies)?;
                for (&m, points) in a.ms.iter().zip(gaps) {
                    for p in points {
                        rows.push(vec![
                            nu.into(),
                            m.into(),
                            p.lag_distance.into(),
                            p.gap.into(),
                        ]);
                    }
                }
            }
            (vec!["nu", "m", "lag_distance", "gap"], rows)
        }
        VariogramMode::Empirical => {
            let input = a
                .input
                .as_ref()
                .ok_or_else(|| CliError::usage("empirical mode needs --input"))?;
            require_input(input)?;
            let table = read_site_csv(input, &csv_options(&a.columns))?;
            let edges = match &a.bins {
                Some(b) => b.clone(),
                None => default_bins(&table.sites, 10),
            };
            let directions: Vec<Option<f64>> = match &a.directions {
                Some(d) => d.iter().map(|&x| Some(x)).collect(),
                None => vec![None],
            };
            let vgs =
                empirical_directional_variogram(&table.sites, &directions, a.angle_tol, &edges)?;
            let mut rows = Vec::new();
            for vg in &vgs {
                for b in &vg.bins {
                    rows.push(vec![
                        vg.direction.into(),
                        b.lower.into(),
                        b.upper.into(),
                        b.mean_lag.into(),
                        b.semivariance.into(),
                        (b.pairs as i64).into(),
                    ]);
                }
            }
            (
                vec![
                    "direction",
                    "lower",
                    "upper",
                    "mean_lag",
                    "semivariance",
                    "pairs",
                ],
                rows,
            )
        }
    };
    write_table_csv(&a.out, &header, &rows)?;
    let params = json!({
        "mode": format!("{:?}", a.mode).to_lowercase(), "nu": a.nu, "alpha": alpha,
        "sigma2": a.sigma2, "lambda": a.lambda, "refinement": a.refinement, "max_lag": max_lag,
        "frequencies": a.frequencies, "nus": a.nus, "ms": a.ms,
    });
    Provenance::new("variogram", None, params)
        .output(&a.out)
        .write(&sidecar_path(&a.out))
}

/// `count` equal bins up to half the diagonal of the sites' bounding box.
pub fn default_bins(sites: &[Site], count: usize) -> Vec<f64> {
    let (mut umin, mut umax, mut vmin, mut vmax) = (
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
    );
    for s in sites {
        umin = umin.min(s.u);
        umax = umax.max(s.u);
        vmin = vmin.min(s.v);
        vmax = vmax.max(s.v);
    }
    let reach = 0.5 * ((umax - umin).powi(2) + (vmax - vmin).powi(2)).sqrt();
    let reach = if reach > 0.0 { reach } else { 1.0 };
    (0..=count)
        .map(|i| reach * i as f64 / count as f64)
        .collect()
}
