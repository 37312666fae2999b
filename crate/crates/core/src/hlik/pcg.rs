//! Jacobi-preconditioned conjugate gradients.

/// Converged solve statistics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PcgStats {
    pub iterations: usize,
    /// Final `‖b − A x‖ / ‖b‖`.
    pub relative_residual: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves `A x = b` for symmetric positive definite `A`, starting from the
/// contents of `x`. `minv` is the inverse of the diagonal preconditioner.
///
/// Returns the final relative residual as the error when `max_iter` is hit.
pub fn pcg<A>(
    mut apply: A,
    minv: &[f64],
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    max_iter: usize,
) -> Result<PcgStats, f64>
where
    A: FnMut(&[f64], &mut [f64]),
{
    let n = b.len();
    let bnorm = dot(b, b).sqrt();
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(PcgStats {
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let mut r = vec![0.0; n];
    let mut ap = vec![0.0; n];
    apply(x, &mut ap);
    for i in 0..n {
        r[i] = b[i] - ap[i];
    }
    let mut z: Vec<f64> = r.iter().zip(minv).map(|(a, m)| a * m).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut rel = dot(&r, &r).sqrt() / bnorm;
    let mut it = 0;
    while rel > tol {
        if it >= max_iter {
            return Err(rel);
        }
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap.is_nan() || pap <= 0.0 {
            return Err(rel);
        }
        let step = rz / pap;
        for i in 0..n {
            x[i] += step * p[i];
            r[i] -= step * ap[i];
        }
        for i in 0..n {
            z[i] = r[i] * minv[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        rel = dot(&r, &r).sqrt() / bnorm;
        it += 1;
    }
    Ok(PcgStats {
        iterations: it,
        relative_residual: rel,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_small_spd_system() {
        let a = [[4.0, 1.0, 0.0], [1.0, 3.0, 1.0], [0.0, 1.0, 2.0]];
        let b = [1.0, 2.0, 3.0];
        let mut x = [0.0; 3];
        let minv = [0.25, 1.0 / 3.0, 0.5];
        let stats = pcg(
            |v, out| {
                for i in 0..3 {
                    out[i] = (0..3).map(|j| a[i][j] * v[j]).sum();
                }
            },
            &minv,
            &b,
            &mut x,
            1e-14,
            10,
        )
        .unwrap();
        assert!(stats.iterations <= 3);
        for i in 0..3 {
            let ax: f64 = (0..3).map(|j| a[i][j] * x[j]).sum();
            assert!((ax - b[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let mut x = [5.0, 5.0];
        let s = pcg(
            |v, out| out.copy_from_slice(v),
            &[1.0, 1.0],
            &[0.0, 0.0],
            &mut x,
            1e-10,
            5,
        )
        .unwrap();
        assert_eq!(s.iterations, 0);
        assert_eq!(x, [0.0, 0.0]);
    }

    #[test]
    fn iteration_cap_reports_residual() {
        let diag: Vec<f64> = (1..=50).map(|i| i as f64).collect();
        let b = vec![1.0; 50];
        let mut x = vec![0.0; 50];
        let err = pcg(
            |v, out| {
                for i in 0..50 {
                    out[i] = diag[i] * v[i];
                }
            },
            &[1.0; 50],
            &b,
            &mut x,
            1e-12,
            2,
        )
        .unwrap_err();
        assert!(err > 1e-12);
    }
}
