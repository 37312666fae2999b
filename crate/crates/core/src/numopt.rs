//! Small dense optimizers: BFGS minimization, a dogleg trust-region root
//! finder, and central finite differences.

use faer::linalg::solvers::DenseSolveCore;
use faer::prelude::*;
use faer::Mat;

use crate::error::{Error, Result};

/// Why an optimizer stopped.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    GradientTolerance,
    StepTolerance,
    ObjectiveTolerance,
    MaxIterations,
    LineSearchFailure,
    RadiusCollapse,
    NonFinite,
}

impl StopReason {
    pub fn is_success(self) -> bool {
        matches!(
            self,
            StopReason::GradientTolerance
                | StopReason::StepTolerance
                | StopReason::ObjectiveTolerance
        )
    }
}

#[derive(Clone, Debug)]
pub struct OptReport {
    pub x: Vec<f64>,
    /// Objective value, or `‖g‖∞` for the root finder.
    pub value: f64,
    /// Gradient, or the system residual `g(x)`.
    pub residual: Vec<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    pub reason: StopReason,
    /// Hessian for the minimizer, Jacobian for the root finder.
    pub curvature: Option<Mat<f64>>,
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn fd_step(x: f64, rel: f64) -> f64 {
    (rel * x.abs()).max(rel)
}

/// Central-difference Jacobian; column `j` holds `∂g/∂x_j`.
pub fn finite_difference_jacobian<G>(mut g: G, x: &[f64], rel_step: f64) -> Result<Mat<f64>>
where
    G: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let n = x.len();
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut xp = x.to_vec();
    for j in 0..n {
        let h = fd_step(x[j], rel_step);
        xp[j] = x[j] + h;
        let up = g(&xp)?;
        xp[j] = x[j] - h;
        let down = g(&xp)?;
        xp[j] = x[j];
        if up.len() != down.len() {
            return Err(Error::Numerical(
                "system changed length between evaluations".into(),
            ));
        }
        let col: Vec<f64> = up
            .iter()
            .zip(&down)
            .map(|(a, b)| (a - b) / (2.0 * h))
            .collect();
        if col.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite difference along coordinate {j}"
            )));
        }
        cols.push(col);
    }
    let m = cols.first().map_or(0, Vec::len);
    Ok(Mat::from_fn(m, n, |i, j| cols[j][i]))
}

/// A scalar objective with an optional analytic gradient.
pub trait Objective {
    fn value(&mut self, x: &[f64]) -> f64;

    /// Defaults to central differences, falling back to a one-sided
    /// difference where one neighbour is not finite.
    fn gradient(&mut self, x: &[f64], fx: f64, rel_step: f64) -> Result<Vec<f64>> {
        let mut grad = vec![0.0; x.len()];
        let mut xp = x.to_vec();
        for j in 0..x.len() {
            let h = fd_step(x[j], rel_step);
            xp[j] = x[j] + h;
            let up = self.value(&xp);
            xp[j] = x[j] - h;
            let down = self.value(&xp);
            xp[j] = x[j];
            grad[j] = match (up.is_finite(), down.is_finite()) {
                (true, true) => (up - down) / (2.0 * h),
                (true, false) => (up - fx) / h,
                (false, true) => (fx - down) / h,
                (false, false) => {
                    return Err(Error::Numerical(format!(
                        "objective not finite around coordinate {j}"
                    )));
                }
            };
        }
        Ok(grad)
    }
}

/// Adapts a closure into an [`Objective`] with finite-difference gradients.
pub struct FnObjective<F>(pub F);

impl<F: FnMut(&[f64]) -> f64> Objective for FnObjective<F> {
    fn value(&mut self, x: &[f64]) -> f64 {
        (self.0)(x)
    }
}

struct Counted<'a, O: ?Sized> {
    inner: &'a mut O,
    evals: usize,
}

impl<O: Objective + ?Sized> Objective for Counted<'_, O> {
    fn value(&mut self, x: &[f64]) -> f64 {
        self.evals += 1;
        self.inner.value(x)
    }

    fn gradient(&mut self, x: &[f64], fx: f64, rel_step: f64) -> Result<Vec<f64>> {
        let before = self.evals;
        // default differencing bypasses the counter; charge two evaluations per coordinate
        let g = self.inner.gradient(x, fx, rel_step)?;
        self.evals = before + 2 * x.len();
        Ok(g)
    }
}

#[derive(Clone, Debug)]
pub struct QuasiNewtonOptions {
    /// Absolute tolerance on `‖∇f‖∞`.
    pub gtol: f64,
    /// Tolerance on `‖Δx‖∞ / (1 + ‖x‖∞)`.
    pub xtol: f64,
    /// Tolerance on `|Δf| / max(1, |f|)`.
    pub ftol: f64,
    pub max_iter: usize,
    pub rel_step: f64,
    /// Outer step when differencing the gradient for the Hessian.
    pub hessian_step: f64,
    /// Cap on `‖Δx‖∞` for a single step.
    pub max_step: f64,
    pub compute_hessian: bool,
}

impl Default for QuasiNewtonOptions {
    fn default() -> Self {
        Self {
            gtol: 1e-5,
            xtol: 1e-10,
            ftol: 1e-13,
            max_iter: 200,
            rel_step: 1e-5,
            hessian_step: 1e-4,
            max_step: 2.0,
            compute_hessian: true,
        }
    }
}

/// BFGS with an Armijo backtracking line search.
pub fn minimize_quasi_newton<F>(f: F, x0: &[f64], options: &QuasiNewtonOptions) -> Result<OptReport>
where
    F: FnMut(&[f64]) -> f64,
{
    minimize(&mut FnObjective(f), x0, options)
}

/// As [`minimize_quasi_newton`] for any [`Objective`].
pub fn minimize<O: Objective + ?Sized>(
    objective: &mut O,
    x0: &[f64],
    options: &QuasiNewtonOptions,
) -> Result<OptReport> {
    let mut obj = Counted {
        inner: objective,
        evals: 0,
    };
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut fx = obj.value(&x);
    if !fx.is_finite() {
        return Err(Error::Numerical(format!(
            "objective is not finite at the starting point {x0:?}"
        )));
    }
    let mut grad = obj.gradient(&x, fx, options.rel_step)?;
    // inverse Hessian approximation, row-major
    let mut hinv = identity(n);
    let mut first_step = true;
    let mut iterations = 0;
    let reason = loop {
        if inf_norm(&grad) < options.gtol {
            break StopReason::GradientTolerance;
        }
        if iterations >= options.max_iter {
            break StopReason::MaxIterations;
        }
        iterations += 1;

        let mut dir = mat_vec(&hinv, &grad, -1.0);
        if dot(&dir, &grad) >= 0.0 {
            hinv = identity(n);
            dir = grad.iter().map(|g| -g).collect();
        }
        let scale = options.max_step / inf_norm(&dir).max(options.max_step);
        dir.iter_mut().for_each(|d| *d *= scale);

        let slope = dot(&dir, &grad);
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + step * d).collect();
            let ft = obj.value(&trial);
            if ft.is_finite() && ft <= fx + 1e-4 * step * slope {
                accepted = Some((trial, ft));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, fnew)) = accepted else {
            break StopReason::LineSearchFailure;
        };
        let gn = obj.gradient(&xn, fnew, options.rel_step)?;
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if first_step {
                let gamma = sy / dot(&y, &y);
                hinv = identity(n);
                hinv.iter_mut().for_each(|h| *h *= gamma);
                first_step = false;
            }
            bfgs_update(&mut hinv, &s, &y, sy);
        }
        let df = fx - fnew;
        let xscale = 1.0 + inf_norm(&xn);
        x = xn;
        grad = gn;
        let fold = fx;
        fx = fnew;
        if inf_norm(&grad) < options.gtol {
            break StopReason::GradientTolerance;
        }
        if inf_norm(&s) < options.xtol * xscale {
            break StopReason::StepTolerance;
        }
        if df.abs() <= options.ftol * fold.abs().max(1.0) {
            break StopReason::ObjectiveTolerance;
        }
    };

    let curvature = if options.compute_hessian {
        let h = options.hessian_step;
        let rel = options.rel_step;
        finite_difference_jacobian(
            |p| {
                let fp = obj.value(p);
                if !fp.is_finite() {
                    return Err(Error::Numerical(
                        "objective not finite near the solution".into(),
                    ));
                }
                obj.gradient(p, fp, rel)
            },
            &x,
            h,
        )
        .ok()
        .map(|m| Mat::from_fn(n, n, |i, j| 0.5 * (m[(i, j)] + m[(j, i)])))
    } else {
        None
    };
    Ok(OptReport {
        x,
        value: fx,
        residual: grad,
        iterations,
        evaluations: obj.evals,
        converged: reason.is_success(),
        reason,
        curvature,
    })
}

fn identity(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        m[i * n + i] = 1.0;
    }
    m
}

fn mat_vec(m: &[f64], v: &[f64], scale: f64) -> Vec<f64> {
    let n = v.len();
    (0..n)
        .map(|i| scale * dot(&m[i * n..(i + 1) * n], v))
        .collect()
}

/// `H ← (I − ρ s yᵀ) H (I − ρ y sᵀ) + ρ s sᵀ`.
fn bfgs_update(h: &mut [f64], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let rho = 1.0 / sy;
    let hy = mat_vec(h, y, 1.0);
    let yhy = dot(y, &hy);
    for i in 0..n {
        for j in 0..n {
            h[i * n + j] +=
                -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
}

#[derive(Clone, Debug)]
pub struct SystemOptions {
    /// Converged when `‖g‖∞` falls below this.
    pub gtol: f64,
    /// Give up when an accepted step is below `xtol (1 + ‖x‖∞)` without
    /// meeting `gtol`.
    pub xtol: f64,
    pub max_iter: usize,
    pub rel_step: f64,
    pub initial_radius: f64,
    /// Broyden rank-one Jacobian updates between full finite-difference
    /// refreshes; 0 recomputes the Jacobian after every accepted step.
    pub broyden_updates: usize,
}

impl Default for SystemOptions {
    fn default() -> Self {
        Self {
            gtol: 1e-2,
            xtol: 1e-8,
            max_iter: 40,
            rel_step: 1e-5,
            initial_radius: 1.0,
            broyden_updates: 0,
        }
    }
}

fn norm2(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

fn jac_vec(j: &Mat<f64>, v: &[f64]) -> Vec<f64> {
    (0..j.nrows())
        .map(|r| (0..j.ncols()).map(|c| j[(r, c)] * v[c]).sum())
        .collect()
}

fn jac_t_vec(j: &Mat<f64>, v: &[f64]) -> Vec<f64> {
    (0..j.ncols())
        .map(|c| (0..j.nrows()).map(|r| j[(r, c)] * v[r]).sum())
        .collect()
}

/// Powell dogleg step inside a ball of radius `delta`.
fn dogleg(j: &Mat<f64>, g: &[f64], delta: f64) -> Vec<f64> {
    let n = g.len();
    let rhs = Mat::from_fn(n, 1, |i, _| -g[i]);
    let newton_mat = j.partial_piv_lu().solve(&rhs);
    let newton: Vec<f64> = (0..n).map(|i| newton_mat[(i, 0)]).collect();
    let newton_ok = newton.iter().all(|v| v.is_finite());
    if newton_ok && norm2(&newton) <= delta {
        return newton;
    }
    let grad = jac_t_vec(j, g);
    let jg = jac_vec(j, &grad);
    let gnorm = norm2(&grad);
    if gnorm == 0.0 {
        return vec![0.0; n];
    }
    let t = gnorm * gnorm / dot(&jg, &jg);
    let cauchy: Vec<f64> = grad.iter().map(|v| -t * v).collect();
    let cnorm = norm2(&cauchy);
    if cnorm >= delta || !newton_ok {
        let s = delta.min(cnorm) / gnorm;
        return grad.iter().map(|v| -s * v).collect();
    }
    // ‖c + τ(p − c)‖ = Δ
    let d: Vec<f64> = newton.iter().zip(&cauchy).map(|(a, b)| a - b).collect();
    let a = dot(&d, &d);
    let b = 2.0 * dot(&cauchy, &d);
    let c = cnorm * cnorm - delta * delta;
    let tau = (-b + (b * b - 4.0 * a * c).max(0.0).sqrt()) / (2.0 * a);
    cauchy.iter().zip(&d).map(|(c, d)| c + tau * d).collect()
}

/// Trust-region dogleg root finder for square systems.
pub fn solve_nonlinear_system<G>(mut g: G, x0: &[f64], options: &SystemOptions) -> Result<OptReport>
where
    G: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let mut evals = 0usize;
    let mut eval = |x: &[f64]| -> Result<Vec<f64>> {
        evals += 1;
        g(x)
    };
    let mut x = x0.to_vec();
    let mut gx = eval(&x)?;
    if gx.len() != x.len() {
        return Err(Error::Dimension {
            expected: x.len(),
            actual: gx.len(),
        });
    }
    if gx.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!(
            "system is not finite at the starting point {x0:?}"
        )));
    }
    let mut delta = options.initial_radius;
    let mut jac: Option<Mat<f64>> = None;
    let mut since_refresh = 0;
    let mut iterations = 0;
    let reason = loop {
        if inf_norm(&gx) < options.gtol {
            break StopReason::GradientTolerance;
        }
        if iterations >= options.max_iter {
            break StopReason::MaxIterations;
        }
        iterations += 1;
        let j = match jac.take() {
            Some(j) => j,
            None => {
                since_refresh = 0;
                finite_difference_jacobian(&mut eval, &x, options.rel_step)?
            }
        };

        let mut accepted = false;
        let mut step_norm = 0.0;
        while !accepted {
            let p = dogleg(&j, &gx, delta);
            step_norm = norm2(&p);
            let trial: Vec<f64> = x.iter().zip(&p).map(|(a, b)| a + b).collect();
            let gt = match eval(&trial) {
                Ok(v) if v.iter().all(|e| e.is_finite()) => Some(v),
                Ok(_) | Err(Error::Numerical(_)) => None,
                Err(e) => return Err(e),
            };
            let f0 = dot(&gx, &gx);
            let predicted_res: Vec<f64> =
                gx.iter().zip(jac_vec(&j, &p)).map(|(a, b)| a + b).collect();
            let predicted = f0 - dot(&predicted_res, &predicted_res);
            let ratio = match &gt {
                Some(gt) if predicted > 0.0 => (f0 - dot(gt, gt)) / predicted,
                _ => -1.0,
            };
            if ratio < 0.25 {
                delta = 0.25 * step_norm;
            } else if ratio > 0.75 && step_norm >= 0.99 * delta {
                delta *= 2.0;
            }
            if ratio > 1e-4 {
                let gt = gt.expect("ratio positive only with a finite trial");
                let mut next = None;
                if since_refresh < options.broyden_updates {
                    // J ← J + (Δg − J p) pᵀ / pᵀp
                    let jp = jac_vec(&j, &p);
                    let pp = dot(&p, &p);
                    let mut jn = j.clone();
                    for r in 0..jn.nrows() {
                        let resid = gt[r] - gx[r] - jp[r];
                        for c in 0..jn.ncols() {
                            jn[(r, c)] += resid * p[c] / pp;
                        }
                    }
                    since_refresh += 1;
                    next = Some(jn);
                }
                jac = next;
                x = trial;
                gx = gt;
                accepted = true;
            } else if delta < 1e-10 * (1.0 + inf_norm(&x)) {
                break;
            }
        }
        if !accepted {
            break StopReason::RadiusCollapse;
        }
        if inf_norm(&gx) < options.gtol {
            break StopReason::GradientTolerance;
        }
        if step_norm < options.xtol * (1.0 + inf_norm(&x)) {
            break StopReason::StepTolerance;
        }
    };
    let jacobian = finite_difference_jacobian(&mut eval, &x, options.rel_step).ok();
    Ok(OptReport {
        value: inf_norm(&gx),
        x,
        residual: gx,
        iterations,
        evaluations: evals,
        converged: reason == StopReason::GradientTolerance,
        reason,
        curvature: jacobian,
    })
}

/// Inverse of a small square matrix, or `None` if singular.
pub fn invert(m: &Mat<f64>) -> Option<Mat<f64>> {
    let inv = m.partial_piv_lu().inverse();
    (0..inv.nrows())
        .all(|i| (0..inv.ncols()).all(|j| inv[(i, j)].is_finite()))
        .then_some(inv)
}
