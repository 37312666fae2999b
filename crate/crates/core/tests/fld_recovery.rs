//! Lattice-model parameters recovered from data simulated under that model.

use fracfield::hlik::{fit_fld, krige_surface, FldFitOptions, HlikSystem};
use fracfield::io::GriddedData;
use fracfield::simulate::{add_noise_and_mean, sample_fld, select_sites, Selection};
use fracfield::spectral::GridSpec;
use fracfield::variogram::FldParams;

fn simulate(grid: &GridSpec, truth: &FldParams, seed: u64) -> GriddedData {
    let field = sample_fld(grid, truth, seed).unwrap();
    let y = add_noise_and_mean(&field.values, 1.5, truth.tau, seed).unwrap();
    let keep = select_sites(grid, Selection::Fraction(0.6), seed).unwrap();
    let mut counts = vec![0; grid.len()];
    keep.iter().for_each(|&i| counts[i] = 1);
    GriddedData::new(grid.clone(), y, counts).unwrap()
}

#[test]
fn estimates_cover_truth() {
    let truth = FldParams::new(4.0, 8.0, 1.25, 0.25);
    let grid = GridSpec::new(64, 64).unwrap();
    let mut covered = 0;
    let reps = 5;
    for seed in 0..reps {
        let data = simulate(&grid, &truth, seed);
        let system = HlikSystem::new(&data, 50, seed).unwrap();
        let fit = fit_fld(&system, &truth, &FldFitOptions::default()).unwrap();
        assert!(fit.converged, "{}", fit.summary());
        let se = fit.se.expect("standard errors").as_array();
        let est = fit.estimates.as_array();
        let t = [truth.tau, truth.lambda, truth.nu, truth.alpha];
        covered += (0..4)
            .filter(|&i| (est[i] - t[i]).abs() < 3.0 * se[i])
            .count();
    }
    assert!(
        covered >= 4 * reps as usize - 1,
        "{covered} of {}",
        4 * reps
    );
}

#[test]
fn kriged_surface_is_close_to_field() {
    let truth = FldParams::new(16.0, 2.0, 1.5, 0.25);
    let grid = GridSpec::new(32, 32).unwrap();
    let field = sample_fld(&grid, &truth, 3).unwrap();
    let data = simulate(&grid, &truth, 3);
    let system = HlikSystem::new(&data, 50, 3).unwrap();
    let fit = fit_fld(&system, &truth, &FldFitOptions::default()).unwrap();
    let surface = krige_surface(&fit, &system, None).unwrap();
    // field and surface differ by the mean
    let offset = surface
        .iter()
        .zip(&field.values)
        .map(|(s, f)| s - f)
        .sum::<f64>()
        / grid.len() as f64;
    let rmse = (surface
        .iter()
        .zip(&field.values)
        .map(|(s, f)| (s - f - offset).powi(2))
        .sum::<f64>()
        / grid.len() as f64)
        .sqrt();
    let spread = {
        let m = field.values.iter().sum::<f64>() / grid.len() as f64;
        (field.values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / grid.len() as f64).sqrt()
    };
    assert!(rmse < 0.5 * spread, "rmse {rmse}, field sd {spread}");
    assert!((offset - 1.5).abs() < 3.0 * spread);
}
