//! Shared value types: pixel grids, images, k-space data, label fields and
//! solver configuration.
//!
//! Pixels are stored row-major, `index = row * n2 + col` (zero based). Every
//! per-pixel sum in the solvers iterates in this order, which keeps results
//! bit-reproducible across runs.
//!
//! Constructors only reject structurally broken input (wrong buffer length).
//! Semantic invariants such as simplex membership are reported by
//! [`Validate::validate`] so that callers can inspect a broken object instead of
//! losing it to an early error.

use std::fmt;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Slack used when checking simplex membership of a [`LabelRelaxation`].
pub const EPS_SIMPLEX: f64 = 1e-8;

/// Slack used when checking that a projected [`DualField`] is inside its ball.
pub const EPS_DUAL_BALL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Grid {
    n1: usize,
    n2: usize,
}

impl Grid {
    pub fn new(n1: usize, n2: usize) -> Result<Self> {
        if n1 < 2 || n2 < 2 {
            return Err(Error::InvalidGrid { n1, n2 });
        }
        Ok(Grid { n1, n2 })
    }

    /// Number of rows.
    pub fn n1(&self) -> usize {
        self.n1
    }

    /// Number of columns.
    pub fn n2(&self) -> usize {
        self.n2
    }

    /// Total pixel count.
    pub fn n(&self) -> usize {
        self.n1 * self.n2
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.n2 + col
    }

    #[inline]
    pub fn coords(&self, index: usize) -> (usize, usize) {
        (index / self.n2, index % self.n2)
    }

    pub(crate) fn ensure_same(&self, other: &Grid) -> Result<()> {
        if self != other {
            return Err(Error::GridMismatch {
                left: self.to_string(),
                right: other.to_string(),
            });
        }
        Ok(())
    }
}

impl fmt::Display for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.n1, self.n2)
    }
}

fn check_len(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::Shape { expected, actual });
    }
    Ok(())
}

/// Real-valued image on a grid. Houses reconstructions and TV subgradients.
#[derive(Debug, Clone, PartialEq)]
pub struct RealImage {
    grid: Grid,
    values: Vec<f64>,
}

impl RealImage {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        check_len(grid.n(), values.len())?;
        Ok(RealImage { grid, values })
    }

    pub fn zeros(grid: Grid) -> Self {
        RealImage {
            grid,
            values: vec![0.0; grid.n()],
        }
    }

    pub fn filled(grid: Grid, value: f64) -> Self {
        RealImage {
            grid,
            values: vec![value; grid.n()],
        }
    }

    pub fn from_fn(grid: Grid, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.n());
        for r in 0..grid.n1() {
            for c in 0..grid.n2() {
                values.push(f(r, c));
            }
        }
        RealImage { grid, values }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[self.grid.index(row, col)]
    }

    pub fn norm(&self) -> f64 {
        norm(&self.values)
    }

    pub fn dot(&self, other: &RealImage) -> f64 {
        dot(&self.values, &other.values)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Complex spectrum on a grid, bins in unshifted FFT order.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrum {
    grid: Grid,
    values: Vec<Complex64>,
}

impl ComplexSpectrum {
    pub fn new(grid: Grid, values: Vec<Complex64>) -> Result<Self> {
        check_len(grid.n(), values.len())?;
        Ok(ComplexSpectrum { grid, values })
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }
}

/// Binary selection of frequency bins. `indices` lists the selected bins in
/// ascending (row-major) order, which is also the order of the sample vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SamplingMask {
    grid: Grid,
    selected: Vec<bool>,
    indices: Vec<usize>,
}

impl SamplingMask {
    pub fn from_selection(grid: Grid, selected: Vec<bool>) -> Result<Self> {
        check_len(grid.n(), selected.len())?;
        let indices = selected
            .iter()
            .enumerate()
            .filter_map(|(i, &s)| s.then_some(i))
            .collect();
        Ok(SamplingMask {
            grid,
            selected,
            indices,
        })
    }

    /// Builds a mask from bin indices; duplicates are merged.
    pub fn from_indices(grid: Grid, indices: &[usize]) -> Result<Self> {
        let mut selected = vec![false; grid.n()];
        for &i in indices {
            if i >= grid.n() {
                return Err(Error::InvalidArgument(format!(
                    "bin index {i} out of range for grid {grid}"
                )));
            }
            selected[i] = true;
        }
        Self::from_selection(grid, selected)
    }

    pub fn full(grid: Grid) -> Self {
        Self::from_selection(grid, vec![true; grid.n()]).expect("length matches grid")
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    /// Number of selected bins.
    pub fn m(&self) -> usize {
        self.indices.len()
    }

    pub fn selected(&self) -> &[bool] {
        &self.selected
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn contains(&self, bin: usize) -> bool {
        self.selected[bin]
    }

    pub fn rate(&self) -> f64 {
        self.m() as f64 / self.grid.n() as f64
    }
}

/// Undersampled noisy k-space measurements.
#[derive(Debug, Clone, PartialEq)]
pub struct KSpaceData {
    mask: SamplingMask,
    samples: Vec<Complex64>,
    noise_sigma: f64,
}

impl KSpaceData {
    pub fn new(mask: SamplingMask, samples: Vec<Complex64>, noise_sigma: f64) -> Result<Self> {
        check_len(mask.m(), samples.len())?;
        if !(noise_sigma >= 0.0) || !noise_sigma.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "noise sigma must be finite and nonnegative, got {noise_sigma}"
            )));
        }
        Ok(KSpaceData {
            mask,
            samples,
            noise_sigma,
        })
    }

    pub fn grid(&self) -> Grid {
        self.mask.grid()
    }

    pub fn mask(&self) -> &SamplingMask {
        &self.mask
    }

    pub fn samples(&self) -> &[Complex64] {
        &self.samples
    }

    pub fn noise_sigma(&self) -> f64 {
        self.noise_sigma
    }

    /// Discrepancy level `sigma * sqrt(m)`.
    pub fn discrepancy_level(&self) -> f64 {
        self.noise_sigma * (self.mask.m() as f64).sqrt()
    }
}

/// Fixed class intensities `c_1 .. c_l`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionMeans {
    values: Vec<f64>,
}

impl RegionMeans {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "at least two region means are required, got {}",
                values.len()
            )));
        }
        Ok(RegionMeans { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn classes(&self) -> usize {
        self.values.len()
    }

    /// Errors unless the means are finite and pairwise distinct.
    pub fn ensure_valid(&self) -> Result<()> {
        let violations = self.validate();
        if violations.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidArgument(join_violations(&violations)))
        }
    }

    /// Index of the class whose mean is closest to `x`, ties to the lowest index.
    pub fn nearest(&self, x: f64) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (j, &c) in self.values.iter().enumerate() {
            let d = (c - x) * (c - x);
            if d < best_d {
                best_d = d;
                best = j;
            }
        }
        best
    }
}

/// Per-pixel, per-class real field with pixel-major layout
/// (`values[pixel * classes + class]`). Used for the fidelity field `g`
/// and the segmentation subgradient `q`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassField {
    grid: Grid,
    classes: usize,
    values: Vec<f64>,
}

impl ClassField {
    pub fn new(grid: Grid, classes: usize, values: Vec<f64>) -> Result<Self> {
        check_len(grid.n() * classes, values.len())?;
        Ok(ClassField {
            grid,
            classes,
            values,
        })
    }

    pub fn zeros(grid: Grid, classes: usize) -> Self {
        ClassField {
            grid,
            classes,
            values: vec![0.0; grid.n() * classes],
        }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn row(&self, pixel: usize) -> &[f64] {
        &self.values[pixel * self.classes..(pixel + 1) * self.classes]
    }
}

/// Relaxed label field `v`: one probability vector per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelRelaxation {
    grid: Grid,
    classes: usize,
    values: Vec<f64>,
}

impl LabelRelaxation {
    pub fn new(grid: Grid, classes: usize, values: Vec<f64>) -> Result<Self> {
        check_len(grid.n() * classes, values.len())?;
        Ok(LabelRelaxation {
            grid,
            classes,
            values,
        })
    }

    /// Uniform `1/l` everywhere.
    pub fn uniform(grid: Grid, classes: usize) -> Self {
        LabelRelaxation {
            grid,
            classes,
            values: vec![1.0 / classes as f64; grid.n() * classes],
        }
    }

    pub fn one_hot(seg: &HardSegmentation) -> Self {
        let classes = seg.classes();
        let mut values = vec![0.0; seg.grid().n() * classes];
        for (i, &l) in seg.labels().iter().enumerate() {
            values[i * classes + l] = 1.0;
        }
        LabelRelaxation {
            grid: seg.grid(),
            classes,
            values,
        }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn row(&self, pixel: usize) -> &[f64] {
        &self.values[pixel * self.classes..(pixel + 1) * self.classes]
    }

    /// Per-pixel weighted class mean `sum_j v_ij c_j`.
    pub fn weighted_means(&self, c: &RegionMeans) -> Vec<f64> {
        self.values
            .chunks_exact(self.classes)
            .map(|row| row.iter().zip(c.values()).map(|(v, c)| v * c).sum())
            .collect()
    }
}

/// Hard label map with labels in `0..classes`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HardSegmentation {
    grid: Grid,
    classes: usize,
    labels: Vec<usize>,
}

impl HardSegmentation {
    pub fn new(grid: Grid, classes: usize, labels: Vec<usize>) -> Result<Self> {
        check_len(grid.n(), labels.len())?;
        Ok(HardSegmentation {
            grid,
            classes,
            labels,
        })
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }
}

/// Gradient-shaped dual variable. Planar layout: channel `c` of pixel `i` is
/// `values[c * n + i]`. Scalar fields have two channels; vector fields over
/// `l` classes have `2l` channels ordered `(d1 v_1, d2 v_1, d1 v_2, ...)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DualField {
    grid: Grid,
    channels: usize,
    values: Vec<f64>,
}

impl DualField {
    pub fn new(grid: Grid, channels: usize, values: Vec<f64>) -> Result<Self> {
        if channels == 0 || channels % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "dual field needs an even, positive channel count, got {channels}"
            )));
        }
        check_len(grid.n() * channels, values.len())?;
        Ok(DualField {
            grid,
            channels,
            values,
        })
    }

    pub fn zeros(grid: Grid, channels: usize) -> Self {
        DualField {
            grid,
            channels,
            values: vec![0.0; grid.n() * channels],
        }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.grid.n();
        &self.values[c * n..(c + 1) * n]
    }

    /// Euclidean norm across channels at `pixel`.
    pub fn pointwise_norm(&self, pixel: usize) -> f64 {
        let n = self.grid.n();
        (0..self.channels)
            .map(|c| {
                let x = self.values[c * n + pixel];
                x * x
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn max_pointwise_norm(&self) -> f64 {
        (0..self.grid.n())
            .map(|i| self.pointwise_norm(i))
            .fold(0.0, f64::max)
    }
}

/// How the u-subproblem's `(a I + b A*A)` system is solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LinearSolver {
    /// Exact division by the symmetrised mask in Fourier space.
    #[default]
    Fourier,
    /// Matrix-free conjugate gradient with `cg_tol` / `cg_max`.
    ConjugateGradient,
}

/// Parameters of the reconstruction, segmentation and joint solvers.
#[derive(Debug, Clone, PartialEq)]
pub struct JointConfig {
    /// TV weight of the reconstruction.
    pub alpha: f64,
    /// TV weight of the segmentation.
    pub beta: f64,
    /// Coupling weight between image and labels.
    pub delta: f64,
    /// Outer stop on `||v^{k+1} - v^k||_2`; `None` means `1e-3 * sqrt(n * l)`.
    pub tol_v: Option<f64>,
    pub max_outer: usize,
    /// PDHG iterations per subproblem.
    pub inner_iters: usize,
    /// Early PDHG stop on relative primal change; `0` runs all `inner_iters`.
    pub inner_tol: f64,
    pub cg_tol: f64,
    pub cg_max: usize,
    /// Strong-convexity augmentation `eps/2 ||x - x^k||^2` of both subproblems.
    pub epsilon_aug: f64,
    /// Threshold for two-class labelling.
    pub mu: f64,
    pub linear_solver: LinearSolver,
    /// Re-estimate the class means after every v-step.
    pub update_means: bool,
    /// PDHG steps `tau = t / w`, `sigma = t w` with `w < 1` the TV weight of
    /// the subproblem instead of `tau = sigma = t`. Same product, so the same
    /// convergence condition; small weights converge far faster.
    pub weighted_steps: bool,
}

impl Default for JointConfig {
    fn default() -> Self {
        JointConfig {
            alpha: 1.0,
            beta: 1e-3,
            delta: 0.1,
            tol_v: None,
            max_outer: 50,
            inner_iters: 300,
            inner_tol: 0.0,
            cg_tol: 1e-10,
            cg_max: 50,
            epsilon_aug: 0.0,
            mu: 0.5,
            linear_solver: LinearSolver::Fourier,
            update_means: false,
            weighted_steps: true,
        }
    }
}

impl JointConfig {
    pub fn resolved_tol_v(&self, grid: Grid, classes: usize) -> f64 {
        self.tol_v
            .unwrap_or_else(|| 1e-3 * ((grid.n() * classes) as f64).sqrt())
    }

    pub(crate) fn ensure_valid(&self) -> Result<()> {
        let violations = self.validate();
        if violations.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(join_violations(&violations)))
        }
    }
}

/// Why an outer iteration stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Tolerance,
    Discrepancy,
    MaxIters,
}

impl StopReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            StopReason::Tolerance => "tolerance",
            StopReason::Discrepancy => "discrepancy",
            StopReason::MaxIters => "max_iters",
        }
    }
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Diagnostics recorded after outer iteration `k` (producing `z^{k+1}`).
/// Quantities that do not apply to a solver are `None`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct IterRecord {
    pub k: usize,
    /// `||A u^{k+1} - f||_2`
    pub data_residual: f64,
    /// `sum_ij v_ij (c_j - u_i)^2`
    pub coupling: Option<f64>,
    pub tv_u: Option<f64>,
    pub tv_v: Option<f64>,
    /// `E(u^{k+1}, v^{k+1})`
    pub energy: Option<f64>,
    /// `D_TV^{p^k}(u^{k+1}, u^k)`
    pub bregman_u: Option<f64>,
    /// `D_TV^{q^k}(v^{k+1}, v^k)`
    pub bregman_v: Option<f64>,
    /// Surrogate `F(z^{k+1}, r^k)`.
    pub surrogate: Option<f64>,
    pub step_u: Option<f64>,
    pub step_v: Option<f64>,
    /// Norm of the surrogate subgradient `w^{k+1}`.
    pub w_norm: Option<f64>,
    /// Norm of the first block of `w^{k+1}`.
    pub w_u_norm: Option<f64>,
    /// `||w^{k+1}|| / ||z^{k+1} - z^k||`, absent when the step is zero.
    pub subgrad_ratio: Option<f64>,
    pub inner_u: Option<usize>,
    pub inner_v: Option<usize>,
}

impl IterRecord {
    pub fn step_norm(&self) -> Option<f64> {
        match (self.step_u, self.step_v) {
            (None, None) => None,
            (u, v) => Some((u.unwrap_or(0.0).powi(2) + v.unwrap_or(0.0).powi(2)).sqrt()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub iterations: Vec<IterRecord>,
    pub stop_reason: StopReason,
    pub max_outer: usize,
    /// Non-fatal conditions such as a surrogate increase or an empty class.
    pub flags: Vec<String>,
}

impl SolveReport {
    pub(crate) fn new(max_outer: usize) -> Self {
        SolveReport {
            iterations: Vec::new(),
            stop_reason: StopReason::MaxIters,
            max_outer,
            flags: Vec::new(),
        }
    }

    pub fn outer_iters(&self) -> usize {
        self.iterations.len()
    }

    pub fn last(&self) -> Option<&IterRecord> {
        self.iterations.last()
    }
}

/// Kinds of invariant violations reported by [`Validate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    GridTooSmall,
    Length,
    NonFinite,
    EmptyMask,
    MaskCount,
    NegativeSigma,
    TooFewClasses,
    DuplicateMeans,
    SimplexNegative,
    SimplexRowSum,
    LabelRange,
    ChannelCount,
    DualBall,
    ConfigSign,
    ReportLength,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub kind: ViolationKind,
    pub message: String,
}

impl Violation {
    fn new(kind: ViolationKind, message: impl Into<String>) -> Self {
        Violation {
            kind,
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}: {}", self.kind, self.message)
    }
}

pub(crate) fn join_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

/// Reports violated invariants without aborting. An empty list means valid.
pub trait Validate {
    fn validate(&self) -> Vec<Violation>;

    fn is_valid(&self) -> bool {
        self.validate().is_empty()
    }
}

fn grid_violations(grid: &Grid, out: &mut Vec<Violation>) {
    if grid.n1 < 2 || grid.n2 < 2 {
        out.push(Violation::new(
            ViolationKind::GridTooSmall,
            format!("grid {grid} is smaller than 2x2"),
        ));
    }
}

fn finite_violations(values: &[f64], what: &str, out: &mut Vec<Violation>) {
    if let Some(i) = values.iter().position(|x| !x.is_finite()) {
        out.push(Violation::new(
            ViolationKind::NonFinite,
            format!("{what} has a non-finite entry at {i}"),
        ));
    }
}

impl Validate for Grid {
    fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        grid_violations(self, &mut out);
        out
    }
}

impl Validate for RealImage {
    fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        grid_violations(&self.grid, &mut out);
        if self.values.len() != self.grid.n() {
            out.push(Violation::new(ViolationKind::Length, "pixel count"));
        }
        finite_violations(&self.values, "image", &mut out);
        out
    }
}

impl Validate for ComplexSpectrum {
    fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        grid_violations(&self.grid, &mut out);
        if self.values.len() != self.grid.n() {
            out.push(Violation::new(ViolationKind::Length, "bin count"));
        }
        if let Some(i) = self.values.iter().position(|z| !z.is_finite()) {
            out.push(Violation::new(
                ViolationKind::NonFinite,
                format!("spectrum has a non-finite entry at {i}"),
            ));
        }
        out
    }
}

impl Validate for SamplingMask {
    fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        grid_violations(&self.grid, &mut out);
        if self.indices.is_empty() {
            out.push(Violation::new(ViolationKind::EmptyMask, "mask selects no bins"));
        }
        let count = self.selected.iter().filter(|&&s| s).count();
        if count != self.indices.len() || self.indices.len() > self.grid.n() {
            out.push(Violation::new(
                ViolationKind::MaskCount,
                format!("m = {} but {} bins selected", self.indices.len(), count),
            ));
        }
        out
    }
}

impl Validate for KSpaceData {
    fn validate(&self) -> Vec<Violation> {
        let mut out = self.mask.validate();
        if self.samples.len() != self.mask.m() {
            out.push(Violation::new(
                ViolationKind::Length,
                format!("{} samples for m = {}", self.samples.len(), self.mask.m()),
            ));
        }
        if self.samples.iter().any(|z| !z.is_finite()) {
            out.push(Violation::new(ViolationKind::NonFinite, "non-finite sample"));
        }
        if !(self.noise_sigma >= 0.0) {
            out.push(Violation::new(ViolationKind::NegativeSigma, "noise sigma < 0"));
        }
        out
    }
}

impl Validate for RegionMeans {
    fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.values.len() < 2 {
            out.push(Violation::new(ViolationKind::TooFewClasses, "fewer than two classes"));
        }
        finite_violations(&self.values, "region means", &mut out);
        for i in 0..self.values.len() {
            for j in i + 1..self.values.len() {
                if self.values[i] == self.values[j] {
                    out.push(Violation::new(
                        ViolationKind::DuplicateMeans,
                        format!("c_{i} equals c_{j}"),
                    ));
                }
            }
        }
        out
    }
}

impl Validate for LabelRelaxation {
    fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        grid_violations(&self.grid, &mut out);
        if self.classes < 2 {
            out.push(Violation::new(ViolationKind::TooFewClasses, "fewer than two classes"));
        }
        if self.values.len() != self.grid.n() * self.classes {
            out.push(Violation::new(ViolationKind::Length, "label field size"));
            return out;
        }
        finite_violations(&self.values, "label field", &mut out);
        for (i, row) in self.values.chunks_exact(self.classes.max(1)).enumerate() {
            if let Some(j) = row.iter().position(|&x| x < -EPS_SIMPLEX) {
                out.push(Violation::new(
                    ViolationKind::SimplexNegative,
                    format!("v[{i}][{j}] = {} is negative", row[j]),
                ));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > EPS_SIMPLEX {
                out.push(Violation::new(
                    ViolationKind::SimplexRowSum,
                    format!("row {i} sums to {s}"),
                ));
            }
        }
        out
    }
}

impl Validate for HardSegmentation {
    fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        grid_violations(&self.grid, &mut out);
        if self.labels.len() != self.grid.n() {
            out.push(Violation::new(ViolationKind::Length, "label count"));
        }
        if let Some(i) = self.labels.iter().position(|&l| l >= self.classes) {
            out.push(Violation::new(
                ViolationKind::LabelRange,
                format!("label {} at pixel {i} >= {}", self.labels[i], self.classes),
            ));
        }
        out
    }
}

impl DualField {
    /// Checks the ball constraint that holds after projection with `radius`.
    pub fn validate_ball(&self, radius: f64) -> Vec<Violation> {
        let mut out = self.validate();
        let worst = self.max_pointwise_norm();
        if worst > radius + EPS_DUAL_BALL {
            out.push(Violation::new(
                ViolationKind::DualBall,
                format!("pointwise norm {worst} exceeds radius {radius}"),
            ));
        }
        out
    }
}

impl Validate for DualField {
    fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        grid_violations(&self.grid, &mut out);
        if self.channels == 0 || self.channels % 2 != 0 {
            out.push(Violation::new(ViolationKind::ChannelCount, "odd channel count"));
        }
        if self.values.len() != self.grid.n() * self.channels {
            out.push(Violation::new(ViolationKind::Length, "dual field size"));
        }
        finite_violations(&self.values, "dual field", &mut out);
        out
    }
}

impl Validate for JointConfig {
    fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut check = |ok: bool, what: &str| {
            if !ok {
                out.push(Violation::new(ViolationKind::ConfigSign, what.to_string()));
            }
        };
        check(self.alpha > 0.0 && self.alpha.is_finite(), "alpha must be positive");
        check(self.beta > 0.0 && self.beta.is_finite(), "beta must be positive");
        check(self.delta >= 0.0 && self.delta.is_finite(), "delta must be nonnegative");
        check(
            self.tol_v.is_none_or(|t| t > 0.0 && t.is_finite()),
            "tol_v must be positive",
        );
        check(self.max_outer > 0, "max_outer must be positive");
        check(self.inner_iters > 0, "inner_iters must be positive");
        check(self.inner_tol >= 0.0, "inner_tol must be nonnegative");
        check(self.cg_tol > 0.0, "cg_tol must be positive");
        check(self.cg_max > 0, "cg_max must be positive");
        check(
            self.epsilon_aug >= 0.0 && self.epsilon_aug.is_finite(),
            "epsilon_aug must be nonnegative",
        );
        check(self.mu > 0.0 && self.mu < 1.0, "mu must lie in (0, 1)");
        out
    }
}

impl Validate for SolveReport {
    fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.iterations.len() > self.max_outer {
            out.push(Violation::new(
                ViolationKind::ReportLength,
                format!("{} records for max_outer {}", self.iterations.len(), self.max_outer),
            ));
        }
        out
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n1: usize, n2: usize) -> Grid {
        Grid::new(n1, n2).unwrap()
    }

    #[test]
    fn grid_rejects_degenerate_sizes() {
        assert!(Grid::new(1, 4).is_err());
        assert!(Grid::new(4, 1).is_err());
        let g = grid(3, 5);
        assert_eq!(g.n(), 15);
        assert_eq!(g.index(2, 1), 11);
        assert_eq!(g.coords(11), (2, 1));
    }

    #[test]
    fn feasible_relaxation_has_no_violations() {
        let g = grid(2, 2);
        let v = LabelRelaxation::new(g, 3, vec![0.2, 0.3, 0.5, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.4, 0.3, 0.3])
            .unwrap();
        assert!(v.validate().is_empty());
    }

    #[test]
    fn row_sum_violation_is_reported() {
        let g = grid(2, 2);
        let v = LabelRelaxation::new(g, 2, vec![0.5, 0.5, 1.0, 0.5, 0.0, 1.0, 1.0, 0.0]).unwrap();
        let kinds: Vec<_> = v.validate().into_iter().map(|v| v.kind).collect();
        assert_eq!(kinds, vec![ViolationKind::SimplexRowSum]);
    }

    #[test]
    fn negative_entry_is_reported() {
        let g = grid(2, 2);
        let v = LabelRelaxation::new(g, 2, vec![-0.1, 1.1, 1.0, 0.0, 0.0, 1.0, 1.0, 0.0]).unwrap();
        let kinds: Vec<_> = v.validate().into_iter().map(|v| v.kind).collect();
        assert_eq!(kinds, vec![ViolationKind::SimplexNegative]);
    }

    #[test]
    fn empty_mask_is_reported() {
        let g = grid(4, 4);
        let mask = SamplingMask::from_selection(g, vec![false; 16]).unwrap();
        let kinds: Vec<_> = mask.validate().into_iter().map(|v| v.kind).collect();
        assert_eq!(kinds, vec![ViolationKind::EmptyMask]);
        assert!(SamplingMask::full(g).validate().is_empty());
    }

    #[test]
    fn duplicate_means_are_reported() {
        let c = RegionMeans::new(vec![0.0, 1.0, 0.0]).unwrap();
        assert_eq!(c.validate()[0].kind, ViolationKind::DuplicateMeans);
        assert!(RegionMeans::new(vec![1.0]).is_err());
    }

    #[test]
    fn label_out_of_range_is_reported() {
        let s = HardSegmentation::new(grid(2, 2), 2, vec![0, 1, 2, 0]).unwrap();
        assert_eq!(s.validate()[0].kind, ViolationKind::LabelRange);
    }

    #[test]
    fn non_finite_image_is_reported() {
        let img = RealImage::new(grid(2, 2), vec![0.0, f64::NAN, 1.0, 2.0]).unwrap();
        assert_eq!(img.validate()[0].kind, ViolationKind::NonFinite);
        assert!(RealImage::new(grid(2, 2), vec![0.0; 3]).is_err());
    }

    #[test]
    fn config_sign_checks() {
        assert!(JointConfig::default().validate().is_empty());
        let cfg = JointConfig {
            alpha: 0.0,
            mu: 1.0,
            ..JointConfig::default()
        };
        assert_eq!(cfg.validate().len(), 2);
    }

    #[test]
    fn default_outer_tolerance_scales_with_size() {
        let cfg = JointConfig::default();
        let tol = cfg.resolved_tol_v(grid(8, 8), 4);
        assert!((tol - 1e-3 * 16.0).abs() < 1e-15);
    }

    #[test]
    fn dual_ball_violation() {
        let g = grid(2, 2);
        let y = DualField::new(g, 2, vec![3.0, 0.0, 0.0, 0.0, 4.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(y.pointwise_norm(0), 5.0);
        assert!(y.validate_ball(5.0).is_empty());
        assert_eq!(y.validate_ball(1.0)[0].kind, ViolationKind::DualBall);
    }
}
