//! Orthonormal two-dimensional cosine transforms on a rectangular lattice and
//! the spectrum of the restricted lattice Laplacian.
//!
//! Every field exchanged with this module is a column-major vector of an
//! `rows x cols` array, so entry `(i, j)` lives at `i + j * rows`. The 2-D
//! transform is `P = P_c ⊗ P_r`, where `P_l` is the orthonormal type-II cosine
//! matrix of size `l`. Under that layout `P vec(V) = vec(P_r V P_cᵀ)`, which is
//! how the transform is evaluated: fast 1-D transforms down every column, then
//! along every row.

#![allow(clippy::needless_range_loop)]

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// Geographic extent of a lattice, in degrees.
///
/// Row 0 is the northern edge and column 0 the western edge.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub north: f64,
    pub south: f64,
    pub west: f64,
    pub east: f64,
}

impl BoundingBox {
    pub fn new(north: f64, south: f64, west: f64, east: f64) -> Result<Self> {
        let finite = [north, south, west, east].iter().all(|x| x.is_finite());
        if !finite || north <= south || east <= west {
            return Err(Error::Input(format!(
                "degenerate bounding box (N {north}, S {south}, W {west}, E {east})"
            )));
        }
        Ok(Self {
            north,
            south,
            west,
            east,
        })
    }
}

/// Geometry of a finite regular lattice with mesh `1/m`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    rows: usize,
    cols: usize,
    refinement: f64,
    bbox: Option<BoundingBox>,
}

impl GridSpec {
    /// A unit-spaced (`m = 1`) lattice.
    pub fn new(rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Input(format!(
                "grid must have at least one row and column, got {rows}x{cols}"
            )));
        }
        Ok(Self {
            rows,
            cols,
            refinement: 1.0,
            bbox: None,
        })
    }

    pub fn with_refinement(mut self, m: f64) -> Result<Self> {
        if !(m > 0.0 && m.is_finite()) {
            return Err(Error::Domain(format!(
                "refinement m must be positive, got {m}"
            )));
        }
        self.refinement = m;
        Ok(self)
    }

    pub fn with_bbox(mut self, bbox: BoundingBox) -> Self {
        self.bbox = Some(bbox);
        self
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Number of lattice sites, `q = rows * cols`.
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Lattice refinement `m`; the mesh is `1/m`.
    pub fn refinement(&self) -> f64 {
        self.refinement
    }

    pub fn bbox(&self) -> Option<&BoundingBox> {
        self.bbox.as_ref()
    }

    /// Column-major index of `(row, col)`.
    #[inline]
    pub fn index(&self, row: usize, col: usize) -> usize {
        row + col * self.rows
    }

    /// Inverse of [`GridSpec::index`].
    #[inline]
    pub fn coords(&self, index: usize) -> (usize, usize) {
        (index % self.rows, index / self.rows)
    }

    /// Pixel height and width in degrees, when a bounding box is attached.
    pub fn pixel_size(&self) -> Option<(f64, f64)> {
        self.bbox.map(|b| {
            (
                (b.north - b.south) / self.rows as f64,
                (b.east - b.west) / self.cols as f64,
            )
        })
    }

    /// Latitude of the centre of pixel row `row`.
    pub fn row_latitude(&self, row: usize) -> Option<f64> {
        let (dlat, _) = self.pixel_size()?;
        self.bbox.map(|b| b.north - (row as f64 + 0.5) * dlat)
    }

    /// Longitude of the centre of pixel column `col`.
    pub fn col_longitude(&self, col: usize) -> Option<f64> {
        let (_, dlon) = self.pixel_size()?;
        self.bbox.map(|b| b.west + (col as f64 + 0.5) * dlon)
    }
}

/// Coefficients of a lattice field in the cosine basis, column-major.
///
/// Coefficient 0 multiplies the constant basis function, which is the null
/// direction of the lattice Laplacian.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralField {
    pub coeffs: Vec<f64>,
}

/// Fast orthonormal DCT-II / DCT-III pair of one length.
///
/// Uses the even/odd reordering that turns a length-`n` cosine transform into
/// a length-`n` complex FFT, so any `n` is supported in `O(n log n)`.
pub struct CosineTransform {
    len: usize,
    forward: Arc<dyn Fft<f64>>,
    backward: Arc<dyn Fft<f64>>,
    // e^{-i pi k / 2n} times the orthonormal scale
    post: Vec<Complex<f64>>,
    // conj(e^{-i pi k / 2n})
    pre: Vec<Complex<f64>>,
    inv_scale: Vec<f64>,
    scratch_len: usize,
}

impl std::fmt::Debug for CosineTransform {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CosineTransform")
            .field("len", &self.len)
            .finish()
    }
}

impl CosineTransform {
    pub fn new(len: usize) -> Self {
        assert!(len > 0, "cosine transform length must be positive");
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(len);
        let backward = planner.plan_fft_inverse(len);
        let scratch_len = forward
            .get_inplace_scratch_len()
            .max(backward.get_inplace_scratch_len());
        let n = len as f64;
        let scale: Vec<f64> = (0..len)
            .map(|k| {
                if k == 0 {
                    n.recip().sqrt()
                } else {
                    (2.0 / n).sqrt()
                }
            })
            .collect();
        let twiddle = |k: usize| Complex::from_polar(1.0, -PI * k as f64 / (2.0 * n));
        Self {
            len,
            forward,
            backward,
            post: (0..len).map(|k| twiddle(k) * scale[k]).collect(),
            pre: (0..len).map(|k| twiddle(k).conj()).collect(),
            inv_scale: scale.iter().map(|s| s.recip()).collect(),
            scratch_len,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    fn pack_forward(&self, x: impl Fn(usize) -> f64, buf: &mut [Complex<f64>]) {
        let n = self.len;
        for j in 0..n.div_ceil(2) {
            buf[j] = Complex::new(x(2 * j), 0.0);
        }
        for j in 0..n / 2 {
            buf[n - 1 - j] = Complex::new(x(2 * j + 1), 0.0);
        }
    }

    fn unpack_forward(&self, buf: &[Complex<f64>], mut out: impl FnMut(usize, f64)) {
        for (k, (b, t)) in buf.iter().zip(&self.post).enumerate() {
            out(k, t.re * b.re - t.im * b.im);
        }
    }

    fn pack_inverse(&self, x: impl Fn(usize) -> f64, buf: &mut [Complex<f64>]) {
        let n = self.len;
        buf[0] = Complex::new(x(0) * self.inv_scale[0], 0.0);
        for k in 1..n {
            let w = Complex::new(x(k) * self.inv_scale[k], -x(n - k) * self.inv_scale[n - k]);
            buf[k] = self.pre[k] * w;
        }
    }

    fn unpack_inverse(&self, buf: &[Complex<f64>], mut out: impl FnMut(usize, f64)) {
        let n = self.len;
        let inv_n = 1.0 / n as f64;
        for j in 0..n.div_ceil(2) {
            out(2 * j, buf[j].re * inv_n);
        }
        for j in 0..n / 2 {
            out(2 * j + 1, buf[n - 1 - j].re * inv_n);
        }
    }

    /// Transforms `count` lines of `v`, element `i` of line `l` sitting at
    /// `at(l, i)`. Real lines are paired into one complex FFT, and all pairs
    /// go through a single batched call.
    fn apply_lines(
        &self,
        v: &mut [f64],
        count: usize,
        at: impl Fn(usize, usize) -> usize,
        ws: &mut TransformWorkspace,
        forward: bool,
    ) {
        let n = self.len;
        let pairs = count.div_ceil(2);
        let buf = &mut ws.buf[..pairs * n];
        for (p, chunk) in buf.chunks_exact_mut(n).enumerate() {
            let (a, b) = (2 * p, 2 * p + 1);
            let get = |i: usize| {
                let im = if b < count { v[at(b, i)] } else { 0.0 };
                (v[at(a, i)], im)
            };
            if forward {
                for j in 0..n.div_ceil(2) {
                    let (re, im) = get(2 * j);
                    chunk[j] = Complex::new(re, im);
                }
                for j in 0..n / 2 {
                    let (re, im) = get(2 * j + 1);
                    chunk[n - 1 - j] = Complex::new(re, im);
                }
            } else {
                let (xa, xb) = get(0);
                chunk[0] = Complex::new(xa, xb) * self.inv_scale[0];
                for k in 1..n {
                    let (xa, xb) = get(k);
                    let (ya, yb) = get(n - k);
                    let s = self.inv_scale[k];
                    let t = self.inv_scale[n - k];
                    // (xa − i ya) + i (xb − i yb)
                    let w = Complex::new(xa * s + yb * t, xb * s - ya * t);
                    chunk[k] = self.pre[k] * w;
                }
            }
        }
        let fft = if forward {
            &self.forward
        } else {
            &self.backward
        };
        fft.process_with_scratch(buf, &mut ws.scratch[..self.scratch_len]);
        for (p, chunk) in buf.chunks_exact(n).enumerate() {
            let (a, b) = (2 * p, 2 * p + 1);
            if forward {
                for k in 0..n {
                    let z = chunk[k];
                    let zc = chunk[if k == 0 { 0 } else { n - k }].conj();
                    let t = self.post[k];
                    let fa = (z + zc) * 0.5;
                    v[at(a, k)] = t.re * fa.re - t.im * fa.im;
                    if b < count {
                        // (z − zc) / 2i
                        let d = (z - zc) * 0.5;
                        let fb = Complex::new(d.im, -d.re);
                        v[at(b, k)] = t.re * fb.re - t.im * fb.im;
                    }
                }
            } else {
                let inv_n = 1.0 / n as f64;
                let mut put = |i: usize, z: Complex<f64>| {
                    v[at(a, i)] = z.re * inv_n;
                    if b < count {
                        v[at(b, i)] = z.im * inv_n;
                    }
                };
                for j in 0..n.div_ceil(2) {
                    put(2 * j, chunk[j]);
                }
                for j in 0..n / 2 {
                    put(2 * j + 1, chunk[n - 1 - j]);
                }
            }
        }
    }

    /// In-place orthonormal DCT-II: `x <- P_n x`.
    pub fn forward(&self, x: &mut [f64], buf: &mut [Complex<f64>], scratch: &mut [Complex<f64>]) {
        let n = self.len;
        debug_assert_eq!(x.len(), n);
        let buf = &mut buf[..n];
        self.pack_forward(|i| x[i], buf);
        self.forward
            .process_with_scratch(buf, &mut scratch[..self.scratch_len]);
        self.unpack_forward(buf, |k, v| x[k] = v);
    }

    /// In-place orthonormal DCT-III, the exact inverse of [`forward`](Self::forward).
    pub fn inverse(&self, x: &mut [f64], buf: &mut [Complex<f64>], scratch: &mut [Complex<f64>]) {
        let n = self.len;
        debug_assert_eq!(x.len(), n);
        let buf = &mut buf[..n];
        self.pack_inverse(|i| x[i], buf);
        self.backward
            .process_with_scratch(buf, &mut scratch[..self.scratch_len]);
        self.unpack_inverse(buf, |k, v| x[k] = v);
    }
}

/// Scratch buffers for one thread of [`SpectralPlan`] work.
#[derive(Debug, Clone)]
pub struct TransformWorkspace {
    buf: Vec<Complex<f64>>,
    scratch: Vec<Complex<f64>>,
}

/// Planned 2-D transform pair for one grid shape. Cheap to share across
/// threads; each thread brings its own [`TransformWorkspace`].
#[derive(Debug)]
pub struct SpectralPlan {
    rows: usize,
    cols: usize,
    row_t: CosineTransform,
    col_t: CosineTransform,
}

impl SpectralPlan {
    pub fn new(grid: &GridSpec) -> Self {
        Self {
            rows: grid.rows(),
            cols: grid.cols(),
            row_t: CosineTransform::new(grid.rows()),
            col_t: CosineTransform::new(grid.cols()),
        }
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn workspace(&self) -> TransformWorkspace {
        let scratch = self.row_t.scratch_len.max(self.col_t.scratch_len);
        TransformWorkspace {
            buf: vec![Complex::new(0.0, 0.0); self.len()],
            scratch: vec![Complex::new(0.0, 0.0); scratch],
        }
    }

    /// In-place `v <- P v`.
    pub fn forward_in_place(&self, v: &mut [f64], ws: &mut TransformWorkspace) {
        debug_assert_eq!(v.len(), self.len());
        self.apply(v, ws, true);
    }

    /// In-place `v <- Pᵀ v`.
    pub fn inverse_in_place(&self, v: &mut [f64], ws: &mut TransformWorkspace) {
        debug_assert_eq!(v.len(), self.len());
        self.apply(v, ws, false);
    }

    fn apply(&self, v: &mut [f64], ws: &mut TransformWorkspace, forward: bool) {
        let (r, c) = (self.rows, self.cols);
        if r > 1 {
            self.row_t
                .apply_lines(v, c, |line, i| line * r + i, ws, forward);
        }
        if c > 1 {
            self.col_t
                .apply_lines(v, r, |line, j| line + j * r, ws, forward);
        }
    }

    pub fn dct2(&self, field: &[f64]) -> Result<SpectralField> {
        check_len(self.len(), field.len())?;
        let mut coeffs = field.to_vec();
        self.forward_in_place(&mut coeffs, &mut self.workspace());
        Ok(SpectralField { coeffs })
    }

    pub fn idct2(&self, coeffs: &SpectralField) -> Result<Vec<f64>> {
        check_len(self.len(), coeffs.coeffs.len())?;
        let mut field = coeffs.coeffs.clone();
        self.inverse_in_place(&mut field, &mut self.workspace());
        Ok(field)
    }
}

/// Orthonormal 2-D cosine transform `P v` of a column-major field.
pub fn dct2(field: &[f64], grid: &GridSpec) -> Result<SpectralField> {
    SpectralPlan::new(grid).dct2(field)
}

/// Inverse transform `Pᵀ v`.
pub fn idct2(coeffs: &SpectralField, grid: &GridSpec) -> Result<Vec<f64>> {
    SpectralPlan::new(grid).idct2(coeffs)
}

/// Eigenvalues `d_i = sin²(π i / 2l)`, `i = 0..l`, of the 1-D Neumann lattice
/// Laplacian (scaled by 1/4).
pub fn laplacian_line_eigenvalues(len: usize) -> Vec<f64> {
    (0..len)
        .map(|i| (PI * i as f64 / (2.0 * len as f64)).sin().powi(2))
        .collect()
}

fn check_anisotropy(alpha: f64) -> Result<()> {
    if !(0.0..=0.5).contains(&alpha) {
        return Err(Error::Domain(format!(
            "anisotropy alpha must lie in [0, 1/2], got {alpha}"
        )));
    }
    Ok(())
}

/// Symbol of the shifted anisotropic lattice Laplacian in the cosine basis,
/// `κ + 4α d_row(i) + 4(½ − α) d_col(j)`, column-major.
pub fn laplacian_symbols(grid: &GridSpec, alpha: f64, kappa: f64) -> Result<Vec<f64>> {
    check_anisotropy(alpha)?;
    if !(kappa >= 0.0 && kappa.is_finite()) {
        return Err(Error::Domain(format!(
            "shift kappa must be nonnegative, got {kappa}"
        )));
    }
    let d_row = laplacian_line_eigenvalues(grid.rows());
    let d_col = laplacian_line_eigenvalues(grid.cols());
    let mut out = Vec::with_capacity(grid.len());
    for dc in &d_col {
        for dr in &d_row {
            out.push(kappa + 4.0 * alpha * dr + 4.0 * (0.5 - alpha) * dc);
        }
    }
    Ok(out)
}

/// Eigenvalues `λ (κ + 4α d_row + 4(½ − α) d_col)^ν` of the lattice precision
/// operator, column-major. `0^0` is taken as 1, so `ν = 0` gives `λ` everywhere.
pub fn lattice_eigenvalues(
    grid: &GridSpec,
    alpha: f64,
    nu: f64,
    kappa: f64,
    lambda: f64,
) -> Result<Vec<f64>> {
    if !(nu >= 0.0 && nu.is_finite()) {
        return Err(Error::Domain(format!("nu must be nonnegative, got {nu}")));
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::Domain(format!(
            "lambda must be positive, got {lambda}"
        )));
    }
    let mut out = laplacian_symbols(grid, alpha, kappa)?;
    for s in &mut out {
        *s = lambda * s.powf(nu);
    }
    Ok(out)
}

/// Explicit orthonormal cosine matrix `P_l`, for testing the fast transforms.
pub fn dense_basis_matrix(len: usize) -> Result<faer::Mat<f64>> {
    if !(1..=64).contains(&len) {
        return Err(Error::Domain(format!(
            "dense basis is limited to 1 <= l <= 64, got {len}"
        )));
    }
    let l = len as f64;
    Ok(faer::Mat::from_fn(len, len, |i, j| {
        if i == 0 {
            l.sqrt().recip()
        } else {
            (2.0 / l).sqrt() * (PI * i as f64 * (j as f64 + 0.5) / l).cos()
        }
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid(r: usize, c: usize) -> GridSpec {
        GridSpec::new(r, c).unwrap()
    }

    /// `P_r V P_cᵀ` from the explicit matrices.
    fn dense_dct2(v: &[f64], r: usize, c: usize) -> Vec<f64> {
        let pr = dense_basis_matrix(r).unwrap();
        let pc = dense_basis_matrix(c).unwrap();
        let mut tmp = vec![0.0; r * c];
        for j in 0..c {
            for i in 0..r {
                tmp[i + j * r] = (0..r).map(|k| pr[(i, k)] * v[k + j * r]).sum();
            }
        }
        let mut out = vec![0.0; r * c];
        for j in 0..c {
            for i in 0..r {
                out[i + j * r] = (0..c).map(|k| tmp[i + k * r] * pc[(j, k)]).sum();
            }
        }
        out
    }

    #[test]
    fn identity_on_single_cell() {
        let out = dct2(&[3.7], &grid(1, 1)).unwrap();
        assert_eq!(out.coeffs, vec![3.7]);
    }

    #[test]
    fn constant_field_maps_to_first_coefficient() {
        let out = dct2(&[2.0; 16], &grid(4, 4)).unwrap();
        assert!((out.coeffs[0] - 8.0).abs() < 1e-12);
        assert!(out.coeffs[1..].iter().all(|c| c.abs() < 1e-12));
    }

    #[test]
    fn two_point_transform() {
        let (a, b) = (1.3, -0.4);
        let out = dct2(&[a, b], &grid(2, 1)).unwrap();
        let s = 2f64.sqrt();
        assert!((out.coeffs[0] - (a + b) / s).abs() < 1e-14);
        assert!((out.coeffs[1] - (a - b) / s).abs() < 1e-14);

        let back = idct2(
            &SpectralField {
                coeffs: vec![1.0, 0.0],
            },
            &grid(2, 1),
        )
        .unwrap();
        assert!((back[0] - 1.0 / s).abs() < 1e-14);
        assert!((back[1] - 1.0 / s).abs() < 1e-14);
    }

    #[test]
    fn first_basis_function_is_constant() {
        let g = grid(3, 5);
        let mut coeffs = vec![0.0; 15];
        coeffs[0] = 1.0;
        let field = idct2(&SpectralField { coeffs }, &g).unwrap();
        for v in field {
            assert!((v - 1.0 / 15f64.sqrt()).abs() < 1e-14);
        }
    }

    #[test]
    fn rejects_wrong_length() {
        assert!(matches!(
            dct2(&[1.0; 5], &grid(2, 3)),
            Err(Error::Dimension {
                expected: 6,
                actual: 5
            })
        ));
        let bad = SpectralField {
            coeffs: vec![0.0; 7],
        };
        assert!(idct2(&bad, &grid(2, 3)).is_err());
    }

    #[test]
    fn small_dense_bases() {
        let p1 = dense_basis_matrix(1).unwrap();
        assert_eq!(p1[(0, 0)], 1.0);
        let p2 = dense_basis_matrix(2).unwrap();
        let s = 0.5f64.sqrt();
        for (i, j, want) in [(0, 0, s), (0, 1, s), (1, 0, s), (1, 1, -s)] {
            assert!((p2[(i, j)] - want).abs() < 1e-15);
        }
        let p3 = dense_basis_matrix(3).unwrap();
        for a in 0..3 {
            for b in 0..3 {
                let dot: f64 = (0..3).map(|k| p3[(a, k)] * p3[(b, k)]).sum();
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-12);
            }
        }
        assert!(dense_basis_matrix(0).is_err());
        assert!(dense_basis_matrix(65).is_err());
    }

    #[test]
    fn dense_bases_are_orthogonal() {
        for l in [5, 16, 31, 64] {
            let p = dense_basis_matrix(l).unwrap();
            let ppt = &p * p.transpose();
            for i in 0..l {
                for j in 0..l {
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((ppt[(i, j)] - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn matches_kronecker_oracle_on_small_grids() {
        // Full Kronecker product, entry by entry.
        for (r, c) in [(2, 3), (4, 4), (5, 7), (8, 3)] {
            let pr = dense_basis_matrix(r).unwrap();
            let pc = dense_basis_matrix(c).unwrap();
            let v: Vec<f64> = (0..r * c)
                .map(|k| ((k * 7919) % 23) as f64 - 11.0)
                .collect();
            let out = dct2(&v, &grid(r, c)).unwrap().coeffs;
            for row in 0..r * c {
                let (i, j) = (row % r, row / r);
                let mut acc = 0.0;
                for col in 0..r * c {
                    let (k, l) = (col % r, col / r);
                    acc += pc[(j, l)] * pr[(i, k)] * v[col];
                }
                assert!((out[row] - acc).abs() < 1e-10, "{r}x{c} entry {row}");
            }
        }
    }

    #[test]
    fn lattice_eigenvalue_examples() {
        let g = grid(2, 2);
        let e = lattice_eigenvalues(&g, 0.25, 1.0, 0.0, 1.0).unwrap();
        for (a, b) in e.iter().zip([0.0, 0.5, 0.5, 1.0]) {
            assert!((a - b).abs() < 1e-14);
        }
        let e = lattice_eigenvalues(&g, 0.25, 2.0, 0.0, 1.0).unwrap();
        for (a, b) in e.iter().zip([0.0, 0.25, 0.25, 1.0]) {
            assert!((a - b).abs() < 1e-14);
        }
        let e = lattice_eigenvalues(&g, 0.25, 1.0, 0.5, 1.0).unwrap();
        for (a, b) in e.iter().zip([0.5, 1.0, 1.0, 1.5]) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_nu_gives_identity_operator() {
        let e = lattice_eigenvalues(&grid(3, 4), 0.2, 0.0, 0.0, 2.5).unwrap();
        assert!(e.iter().all(|&x| x == 2.5));
    }

    #[test]
    fn eigenvalue_domain_errors() {
        let g = grid(3, 3);
        assert!(lattice_eigenvalues(&g, 0.6, 1.0, 0.0, 1.0).is_err());
        assert!(lattice_eigenvalues(&g, -0.1, 1.0, 0.0, 1.0).is_err());
        assert!(lattice_eigenvalues(&g, 0.2, -1.0, 0.0, 1.0).is_err());
        assert!(lattice_eigenvalues(&g, 0.2, 1.0, -1.0, 1.0).is_err());
        assert!(lattice_eigenvalues(&g, 0.2, 1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn grid_geometry() {
        let bbox = BoundingBox::new(21.0, -67.0, 20.0, 145.0).unwrap();
        let g = grid(128, 180).with_bbox(bbox);
        let (dlat, dlon) = g.pixel_size().unwrap();
        assert!((dlat - 0.6875).abs() < 1e-12);
        assert!((dlon - 125.0 / 180.0).abs() < 1e-12);
        assert_eq!(g.coords(g.index(5, 7)), (5, 7));
        assert!(BoundingBox::new(0.0, 1.0, 0.0, 1.0).is_err());
        assert!(GridSpec::new(0, 3).is_err());
        assert!(grid(2, 2).with_refinement(0.0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn roundtrip_and_norm(r in 1usize..40, c in 1usize..40, seed in any::<u64>()) {
            let q = r * c;
            let v: Vec<f64> = (0..q)
                .map(|k| (((k as u64).wrapping_mul(6364136223846793005).wrapping_add(seed) >> 11) as f64 / (1u64 << 53) as f64) - 0.5)
                .collect();
            let g = grid(r, c);
            let coeffs = dct2(&v, &g).unwrap();
            let n0: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            let n1: f64 = coeffs.coeffs.iter().map(|x| x * x).sum::<f64>().sqrt();
            prop_assert!((n0 - n1).abs() <= 1e-10 * n0.max(1e-300));
            let back = idct2(&coeffs, &g).unwrap();
            for (a, b) in v.iter().zip(&back) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn agrees_with_dense_oracle(r in 1usize..=64, c in 1usize..=64, seed in any::<u32>()) {
            let q = r * c;
            let v: Vec<f64> = (0..q).map(|k| ((k as f64 + seed as f64) * 0.37).sin()).collect();
            let fast = dct2(&v, &grid(r, c)).unwrap().coeffs;
            let slow = dense_dct2(&v, r, c);
            for (a, b) in fast.iter().zip(&slow) {
                prop_assert!((a - b).abs() < 1e-10);
            }
        }

        #[test]
        fn single_zero_eigenvalue(r in 1usize..20, c in 1usize..20, alpha in 0.01f64..0.49, nu in 0.05f64..3.0) {
            prop_assume!(r * c > 1);
            let e = lattice_eigenvalues(&grid(r, c), alpha, nu, 0.0, 1.0).unwrap();
            prop_assert_eq!(e[0], 0.0);
            prop_assert!(e[1..].iter().all(|&x| x > 0.0));
        }

        #[test]
        fn transpose_symmetry(r in 1usize..15, c in 1usize..15, alpha in 0.0f64..=0.5, nu in 0.0f64..3.0) {
            let mut a = lattice_eigenvalues(&grid(r, c), alpha, nu, 0.0, 1.0).unwrap();
            let mut b = lattice_eigenvalues(&grid(c, r), 0.5 - alpha, nu, 0.0, 1.0).unwrap();
            a.sort_by(f64::total_cmp);
            b.sort_by(f64::total_cmp);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
