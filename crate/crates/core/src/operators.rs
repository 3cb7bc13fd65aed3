//! Linear operators and projections.
//!
//! The Fourier transform is unitary (`1/sqrt(n)` in both directions). The
//! MRI forward model is `A = S F` mapping real images to the sampled
//! coefficients, with real adjoint `A* z = Re(F^{-1} S^T z)`. Gradients are
//! forward differences with a zero difference in the last row/column, and the
//! divergence is defined as the exact negative adjoint of the gradient.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::types::{
    dot, ComplexSpectrum, DualField, Grid, KSpaceData, LabelRelaxation, RealImage, SamplingMask,
    Validate,
};

/// Operator norm bound of the forward-difference gradient used for PDHG steps.
pub const GRADIENT_NORM: f64 = 2.828_427_124_746_190_1; // sqrt(8)

/// Primal and dual PDHG step size, `0.99 / ||grad||`.
pub const PDHG_STEP: f64 = 0.99 / GRADIENT_NORM;

/// Planned unitary 2-D FFT for one grid.
#[derive(Clone)]
pub struct Fft2 {
    grid: Grid,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
    scale: f64,
}

impl std::fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft2").field("grid", &self.grid).finish()
    }
}

impl Fft2 {
    pub fn new(grid: Grid) -> Self {
        let mut planner = FftPlanner::new();
        Fft2 {
            grid,
            row_fwd: planner.plan_fft_forward(grid.n2()),
            row_inv: planner.plan_fft_inverse(grid.n2()),
            col_fwd: planner.plan_fft_forward(grid.n1()),
            col_inv: planner.plan_fft_inverse(grid.n1()),
            scale: 1.0 / (grid.n() as f64).sqrt(),
        }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    /// In-place unitary transform of a row-major buffer.
    pub fn process(&self, data: &mut [Complex64], inverse: bool) {
        let (n1, n2) = (self.grid.n1(), self.grid.n2());
        debug_assert_eq!(data.len(), n1 * n2);
        let (row, col) = if inverse {
            (&self.row_inv, &self.col_inv)
        } else {
            (&self.row_fwd, &self.col_fwd)
        };
        row.process(data);
        let mut t = vec![Complex64::new(0.0, 0.0); n1 * n2];
        for r in 0..n1 {
            for c in 0..n2 {
                t[c * n1 + r] = data[r * n2 + c];
            }
        }
        col.process(&mut t);
        for c in 0..n2 {
            for r in 0..n1 {
                data[r * n2 + c] = t[c * n1 + r] * self.scale;
            }
        }
    }

    pub(crate) fn forward_real(&self, values: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = values.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.process(&mut buf, false);
        buf
    }
}

/// Unitary DFT of a real image.
pub fn dft(img: &RealImage) -> ComplexSpectrum {
    let fft = Fft2::new(img.grid());
    ComplexSpectrum::new(img.grid(), fft.forward_real(img.values())).expect("same grid")
}

/// Unitary forward DFT of a complex spectrum-shaped array.
pub fn dft_complex(spec: &ComplexSpectrum) -> ComplexSpectrum {
    let mut out = spec.clone();
    Fft2::new(spec.grid()).process(out.values_mut(), false);
    out
}

/// Unitary inverse DFT.
pub fn idft(spec: &ComplexSpectrum) -> ComplexSpectrum {
    let mut out = spec.clone();
    Fft2::new(spec.grid()).process(out.values_mut(), true);
    out
}

/// Index of the bin holding frequency `-k`.
pub fn mirror_bin(grid: Grid, bin: usize) -> usize {
    let (r, c) = grid.coords(bin);
    let mr = (grid.n1() - r) % grid.n1();
    let mc = (grid.n2() - c) % grid.n2();
    grid.index(mr, mc)
}

/// `A = S F` restricted to real images, with its real adjoint.
#[derive(Debug, Clone)]
pub struct ForwardOperator {
    mask: SamplingMask,
    fft: Fft2,
    /// Fourier symbol of `A*A`: `(M(k) + M(-k)) / 2`.
    normal_symbol: Vec<f64>,
}

impl ForwardOperator {
    pub fn new(mask: SamplingMask) -> Result<Self> {
        let violations = mask.validate();
        if !violations.is_empty() {
            return Err(Error::InvalidArgument(crate::types::join_violations(&violations)));
        }
        let grid = mask.grid();
        let normal_symbol = (0..grid.n())
            .map(|k| {
                let a = mask.contains(k) as u8 as f64;
                let b = mask.contains(mirror_bin(grid, k)) as u8 as f64;
                0.5 * (a + b)
            })
            .collect();
        Ok(ForwardOperator {
            fft: Fft2::new(grid),
            mask,
            normal_symbol,
        })
    }

    pub fn for_data(data: &KSpaceData) -> Result<Self> {
        Self::new(data.mask().clone())
    }

    pub fn grid(&self) -> Grid {
        self.mask.grid()
    }

    pub fn mask(&self) -> &SamplingMask {
        &self.mask
    }

    pub fn fft(&self) -> &Fft2 {
        &self.fft
    }

    pub(crate) fn normal_symbol(&self) -> &[f64] {
        &self.normal_symbol
    }

    pub fn forward(&self, u: &RealImage) -> Result<Vec<Complex64>> {
        self.grid().ensure_same(&u.grid())?;
        Ok(self.forward_slice(u.values()))
    }

    pub(crate) fn forward_slice(&self, u: &[f64]) -> Vec<Complex64> {
        let spec = self.fft.forward_real(u);
        self.mask.indices().iter().map(|&k| spec[k]).collect()
    }

    pub fn adjoint(&self, z: &[Complex64]) -> Result<RealImage> {
        if z.len() != self.mask.m() {
            return Err(Error::Shape {
                expected: self.mask.m(),
                actual: z.len(),
            });
        }
        let mut out = vec![0.0; self.grid().n()];
        self.adjoint_into(z, &mut out);
        Ok(RealImage::new(self.grid(), out).expect("same grid"))
    }

    pub(crate) fn adjoint_into(&self, z: &[Complex64], out: &mut [f64]) {
        let mut buf = vec![Complex64::new(0.0, 0.0); self.grid().n()];
        for (&k, &zk) in self.mask.indices().iter().zip(z) {
            buf[k] = zk;
        }
        self.fft.process(&mut buf, true);
        for (o, b) in out.iter_mut().zip(&buf) {
            *o = b.re;
        }
    }

    /// `A*A u` computed as `A*(A u)`.
    pub(crate) fn normal_into(&self, u: &[f64], out: &mut [f64]) {
        let z = self.forward_slice(u);
        self.adjoint_into(&z, out);
    }

    /// `A* f` for the measured samples.
    pub fn zero_fill(&self, data: &KSpaceData) -> Result<RealImage> {
        if data.mask() != &self.mask {
            return Err(Error::InvalidArgument(
                "k-space data was sampled with a different mask".into(),
            ));
        }
        self.adjoint(data.samples())
    }

    /// `||A u - f||_2`.
    pub fn residual_norm(&self, u: &[f64], f: &[Complex64]) -> f64 {
        self.forward_slice(u)
            .iter()
            .zip(f)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    /// Estimates `||A||` with `iters` steps of power iteration on `A*A`.
    pub fn norm_estimate(&self, iters: usize, seed: u64) -> f64 {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n = self.grid().n();
        let mut x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut y = vec![0.0; n];
        let mut lambda = 0.0;
        for _ in 0..iters {
            let nx = dot(&x, &x).sqrt();
            x.iter_mut().for_each(|v| *v /= nx);
            self.normal_into(&x, &mut y);
            lambda = dot(&x, &y);
            std::mem::swap(&mut x, &mut y);
        }
        lambda.max(0.0).sqrt()
    }
}

/// Zero-filled reconstruction `A* f`.
pub fn zero_fill(data: &KSpaceData) -> Result<RealImage> {
    ForwardOperator::for_data(data)?.zero_fill(data)
}

/// Solves `(a I + b A*A) x = rhs` for real `x`.
///
/// `A*A` is diagonal in Fourier space with symbol `(M(k) + M(-k))/2`, so the
/// exact solve is one FFT pair. The conjugate-gradient route applies `A*A`
/// through the forward model and serves as an independent check.
#[derive(Debug, Clone)]
pub struct ShiftedNormalSolver<'a> {
    op: &'a ForwardOperator,
    a: f64,
    b: f64,
    inv_symbol: Vec<f64>,
}

impl<'a> ShiftedNormalSolver<'a> {
    pub fn new(op: &'a ForwardOperator, a: f64, b: f64) -> Self {
        let inv_symbol = op.normal_symbol().iter().map(|&s| 1.0 / (a + b * s)).collect();
        ShiftedNormalSolver {
            op,
            a,
            b,
            inv_symbol,
        }
    }

    pub fn solve_fourier(&self, rhs: &[f64], out: &mut [f64]) {
        let fft = self.op.fft();
        let mut buf = fft.forward_real(rhs);
        for (z, &s) in buf.iter_mut().zip(&self.inv_symbol) {
            *z *= s;
        }
        fft.process(&mut buf, true);
        for (o, z) in out.iter_mut().zip(&buf) {
            *o = z.re;
        }
    }

    /// CG solve warm-started from `out`. Returns the iteration count.
    pub fn solve_cg(&self, rhs: &[f64], out: &mut [f64], tol: f64, max_iter: usize) -> CgOutcome {
        let (a, b) = (self.a, self.b);
        let mut scratch = vec![0.0; rhs.len()];
        conjugate_gradient(
            |x, y| {
                self.op.normal_into(x, &mut scratch);
                for ((yi, xi), si) in y.iter_mut().zip(x).zip(&scratch) {
                    *yi = a * xi + b * si;
                }
            },
            rhs,
            out,
            tol,
            max_iter,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgOutcome {
    pub iterations: usize,
    /// Final relative residual `||b - Ax|| / ||b||`.
    pub relative_residual: f64,
}

/// Matrix-free conjugate gradient for a symmetric positive definite operator.
/// `x` holds the initial guess and receives the solution.
pub fn conjugate_gradient(
    mut apply: impl FnMut(&[f64], &mut [f64]),
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    max_iter: usize,
) -> CgOutcome {
    let n = b.len();
    let b_norm = dot(b, b).sqrt();
    if b_norm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return CgOutcome {
            iterations: 0,
            relative_residual: 0.0,
        };
    }
    let mut ax = vec![0.0; n];
    apply(x, &mut ax);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let mut ap = vec![0.0; n];
    let mut iterations = 0;
    while iterations < max_iter && rr.sqrt() > tol * b_norm {
        apply(&p, &mut ap);
        let alpha = rr / dot(&p, &ap);
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        rr = rr_new;
        iterations += 1;
    }
    CgOutcome {
        iterations,
        relative_residual: rr.sqrt() / b_norm,
    }
}

/// Forward differences of the pixels `src[i * stride + offset]`.
pub(crate) fn grad_strided(
    grid: Grid,
    src: &[f64],
    stride: usize,
    offset: usize,
    d1: &mut [f64],
    d2: &mut [f64],
) {
    let (n1, n2) = (grid.n1(), grid.n2());
    let at = |i: usize| src[i * stride + offset];
    for r in 0..n1 {
        for c in 0..n2 {
            let i = r * n2 + c;
            let x = at(i);
            d1[i] = if r + 1 < n1 { at(i + n2) - x } else { 0.0 };
            d2[i] = if c + 1 < n2 { at(i + 1) - x } else { 0.0 };
        }
    }
}

/// Negative adjoint of [`grad_strided`], written to `dst[i * stride + offset]`.
pub(crate) fn div_strided(
    grid: Grid,
    y1: &[f64],
    y2: &[f64],
    dst: &mut [f64],
    stride: usize,
    offset: usize,
) {
    let (n1, n2) = (grid.n1(), grid.n2());
    for r in 0..n1 {
        for c in 0..n2 {
            let i = r * n2 + c;
            let a = if r + 1 < n1 { y1[i] } else { 0.0 };
            let a_prev = if r > 0 { y1[i - n2] } else { 0.0 };
            let b = if c + 1 < n2 { y2[i] } else { 0.0 };
            let b_prev = if c > 0 { y2[i - 1] } else { 0.0 };
            dst[i * stride + offset] = (a - a_prev) + (b - b_prev);
        }
    }
}

/// Discrete gradient of a scalar image (two channels).
pub fn gradient(u: &RealImage) -> DualField {
    let grid = u.grid();
    let n = grid.n();
    let mut values = vec![0.0; 2 * n];
    let (d1, d2) = values.split_at_mut(n);
    grad_strided(grid, u.values(), 1, 0, d1, d2);
    DualField::new(grid, 2, values).expect("two channels")
}

/// Discrete gradient of every class of a label field (`2l` channels).
pub fn gradient_vec(v: &LabelRelaxation) -> DualField {
    let grid = v.grid();
    let (n, l) = (grid.n(), v.classes());
    let mut values = vec![0.0; 2 * l * n];
    for (j, chunk) in values.chunks_exact_mut(2 * n).enumerate() {
        let (d1, d2) = chunk.split_at_mut(n);
        grad_strided(grid, v.values(), l, j, d1, d2);
    }
    DualField::new(grid, 2 * l, values).expect("even channels")
}

/// Divergence of a two-channel field, `div = -grad^T`.
pub fn divergence(y: &DualField) -> Result<RealImage> {
    if y.channels() != 2 {
        return Err(Error::InvalidArgument(format!(
            "scalar divergence needs 2 channels, got {}",
            y.channels()
        )));
    }
    let grid = y.grid();
    let mut out = vec![0.0; grid.n()];
    div_strided(grid, y.channel(0), y.channel(1), &mut out, 1, 0);
    Ok(RealImage::new(grid, out).expect("same grid"))
}

/// Per-class divergence of a `2l`-channel field, in label-field layout.
pub fn divergence_vec(w: &DualField) -> Vec<f64> {
    let grid = w.grid();
    let l = w.channels() / 2;
    let mut out = vec![0.0; grid.n() * l];
    for j in 0..l {
        div_strided(grid, w.channel(2 * j), w.channel(2 * j + 1), &mut out, l, j);
    }
    out
}

/// Isotropic total variation `sum_i |grad u|_i`.
pub fn tv_scalar(u: &RealImage) -> f64 {
    tv_slice(u.grid(), u.values())
}

pub(crate) fn tv_slice(grid: Grid, u: &[f64]) -> f64 {
    let (n1, n2) = (grid.n1(), grid.n2());
    let mut total = 0.0;
    for r in 0..n1 {
        for c in 0..n2 {
            let i = r * n2 + c;
            let d1 = if r + 1 < n1 { u[i + n2] - u[i] } else { 0.0 };
            let d2 = if c + 1 < n2 { u[i + 1] - u[i] } else { 0.0 };
            total += (d1 * d1 + d2 * d2).sqrt();
        }
    }
    total
}

/// Vector total variation coupling all classes in one pointwise norm.
pub fn tv_vector(v: &LabelRelaxation) -> f64 {
    tv_vec_slice(v.grid(), v.classes(), v.values())
}

pub(crate) fn tv_vec_slice(grid: Grid, l: usize, v: &[f64]) -> f64 {
    let (n1, n2) = (grid.n1(), grid.n2());
    let mut total = 0.0;
    for r in 0..n1 {
        for c in 0..n2 {
            let i = r * n2 + c;
            let mut s = 0.0;
            for j in 0..l {
                let x = v[i * l + j];
                let d1 = if r + 1 < n1 { v[(i + n2) * l + j] - x } else { 0.0 };
                let d2 = if c + 1 < n2 { v[(i + 1) * l + j] - x } else { 0.0 };
                s += d1 * d1 + d2 * d2;
            }
            total += s.sqrt();
        }
    }
    total
}

/// Pointwise projection onto the ball of `radius` (norm across all channels).
pub fn project_dual_ball(y: &DualField, radius: f64) -> Result<DualField> {
    if !(radius > 0.0) {
        return Err(Error::InvalidArgument(format!("radius must be positive, got {radius}")));
    }
    let mut out = y.clone();
    let (n, ch) = (y.grid().n(), y.channels());
    project_ball_in_place(out.values_mut(), n, ch, radius);
    Ok(out)
}

pub(crate) fn project_ball_in_place(values: &mut [f64], n: usize, channels: usize, radius: f64) {
    for i in 0..n {
        let mut s = 0.0;
        for c in 0..channels {
            let x = values[c * n + i];
            s += x * x;
        }
        let norm = s.sqrt();
        if norm > radius {
            let f = radius / norm;
            for c in 0..channels {
                values[c * n + i] *= f;
            }
        }
    }
}

/// Euclidean projection onto the probability simplex (sort-based).
pub fn project_simplex(row: &[f64]) -> Result<Vec<f64>> {
    if row.len() < 2 {
        return Err(Error::InvalidArgument("simplex projection needs at least 2 entries".into()));
    }
    let mut out = row.to_vec();
    let mut scratch = Vec::with_capacity(row.len());
    project_simplex_in_place(&mut out, &mut scratch);
    Ok(out)
}

pub(crate) fn project_simplex_in_place(row: &mut [f64], scratch: &mut Vec<f64>) {
    scratch.clear();
    scratch.extend_from_slice(row);
    scratch.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (k, &s) in scratch.iter().enumerate() {
        cumsum += s;
        let t = (cumsum - 1.0) / (k + 1) as f64;
        if s - t > 0.0 {
            theta = t;
        } else {
            break;
        }
    }
    for x in row.iter_mut() {
        *x = (*x - theta).max(0.0);
    }
}
