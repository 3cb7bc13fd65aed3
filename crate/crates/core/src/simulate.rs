//! Procedural phantoms, sampling masks and k-space simulation.
//!
//! Every generator is a pure function of its spec and seed (ChaCha8 streams).

use std::collections::HashSet;
use std::f64::consts::PI;

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::operators::{mirror_bin, ForwardOperator};
use crate::types::{Grid, HardSegmentation, KSpaceData, RealImage, RegionMeans, SamplingMask};

/// A filled disk in fractional coordinates: centre `(cy, cx)` relative to
/// `(n1, n2)`, radius relative to `min(n1, n2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Disk {
    pub cy: f64,
    pub cx: f64,
    pub radius: f64,
    /// Index into the phantom's intensities.
    pub class: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PhantomKind {
    /// Random, mostly non-overlapping bubbles of class 1 on a class-0 background.
    Bubbles {
        count: usize,
        radius_min: f64,
        radius_max: f64,
    },
    /// Explicit disks, drawn in order (later disks overwrite earlier ones).
    Disks(Vec<Disk>),
    /// Piecewise-constant head-like stack of ellipses with four classes.
    SheppLoganLike,
    /// Centred disk of class 1 on a class-0 background.
    TwoRegion { radius: f64 },
}

impl PhantomKind {
    pub fn name(&self) -> &'static str {
        match self {
            PhantomKind::Bubbles { .. } => "bubbles",
            PhantomKind::Disks(_) => "disks",
            PhantomKind::SheppLoganLike => "shepp_logan_like",
            PhantomKind::TwoRegion { .. } => "two_region",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSpec {
    pub kind: PhantomKind,
    pub grid: Grid,
    /// Intensity per class; label `j` gets `intensities[j]`.
    pub intensities: Vec<f64>,
    pub seed: u64,
}

impl PhantomSpec {
    pub fn two_region(grid: Grid, radius: f64) -> Self {
        PhantomSpec {
            kind: PhantomKind::TwoRegion { radius },
            grid,
            intensities: vec![0.0, 1.0],
            seed: 0,
        }
    }

    pub fn bubbles(grid: Grid, count: usize, seed: u64) -> Self {
        PhantomSpec {
            kind: PhantomKind::Bubbles {
                count,
                radius_min: 0.05,
                radius_max: 0.12,
            },
            grid,
            intensities: vec![0.0, 1.0],
            seed,
        }
    }

    /// Concentric rings alternating over the given intensities.
    pub fn concentric(grid: Grid, rings: usize, intensities: Vec<f64>) -> Self {
        let classes = intensities.len();
        let disks = (0..rings)
            .map(|i| Disk {
                cy: 0.5,
                cx: 0.5,
                radius: 0.42 * (rings - i) as f64 / rings as f64,
                class: 1 + i % (classes - 1),
            })
            .collect();
        PhantomSpec {
            kind: PhantomKind::Disks(disks),
            grid,
            intensities,
            seed: 0,
        }
    }

    pub fn shepp_logan_like(grid: Grid) -> Self {
        PhantomSpec {
            kind: PhantomKind::SheppLoganLike,
            grid,
            intensities: vec![0.0, 0.3, 0.6, 1.0],
            seed: 0,
        }
    }
}

/// Ground truth produced by [`make_phantom`].
#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub image: RealImage,
    pub labels: HardSegmentation,
    pub means: RegionMeans,
}

struct Ellipse {
    cy: f64,
    cx: f64,
    ry: f64,
    rx: f64,
    angle: f64,
    class: usize,
}

fn paint_ellipse(grid: Grid, labels: &mut [usize], e: &Ellipse) {
    let (n1, n2) = (grid.n1() as f64, grid.n2() as f64);
    let s = n1.min(n2);
    let (sin, cos) = e.angle.sin_cos();
    for r in 0..grid.n1() {
        for c in 0..grid.n2() {
            let y = r as f64 + 0.5 - e.cy * n1;
            let x = c as f64 + 0.5 - e.cx * n2;
            let yr = -x * sin + y * cos;
            let xr = x * cos + y * sin;
            let q = (yr / (e.ry * s)).powi(2) + (xr / (e.rx * s)).powi(2);
            if q <= 1.0 {
                labels[grid.index(r, c)] = e.class;
            }
        }
    }
}

fn disk_ellipse(d: &Disk) -> Ellipse {
    Ellipse {
        cy: d.cy,
        cx: d.cx,
        ry: d.radius,
        rx: d.radius,
        angle: 0.0,
        class: d.class,
    }
}

fn bubble_disks(count: usize, rmin: f64, rmax: f64, rng: &mut ChaCha8Rng) -> Vec<Disk> {
    let mut disks: Vec<Disk> = Vec::with_capacity(count);
    for _ in 0..count {
        let mut candidate = None;
        for _ in 0..200 {
            let radius = rng.random_range(rmin..=rmax);
            let cy = rng.random_range(radius + 0.02..=1.0 - radius - 0.02);
            let cx = rng.random_range(radius + 0.02..=1.0 - radius - 0.02);
            let d = Disk {
                cy,
                cx,
                radius,
                class: 1,
            };
            candidate = Some(d);
            let clear = disks.iter().all(|o| {
                let dist = ((o.cy - cy).powi(2) + (o.cx - cx).powi(2)).sqrt();
                dist > o.radius + radius + 0.02
            });
            if clear {
                break;
            }
        }
        disks.extend(candidate);
    }
    disks
}

/// Rasterises a phantom and its ground-truth labels.
pub fn make_phantom(spec: &PhantomSpec) -> Result<Phantom> {
    let grid = spec.grid;
    let means = RegionMeans::new(spec.intensities.clone())?;
    let classes = means.classes();
    let check_class = |class: usize| {
        if class >= classes {
            Err(Error::InvalidArgument(format!(
                "phantom uses class {class} but only {classes} intensities are given"
            )))
        } else {
            Ok(())
        }
    };
    let mut labels = vec![0usize; grid.n()];
    match &spec.kind {
        PhantomKind::TwoRegion { radius } => {
            check_class(1)?;
            if !(*radius > 0.0) {
                return Err(Error::InvalidArgument("disk radius must be positive".into()));
            }
            paint_ellipse(
                grid,
                &mut labels,
                &disk_ellipse(&Disk {
                    cy: 0.5,
                    cx: 0.5,
                    radius: *radius,
                    class: 1,
                }),
            );
        }
        PhantomKind::Disks(disks) => {
            for d in disks {
                check_class(d.class)?;
                paint_ellipse(grid, &mut labels, &disk_ellipse(d));
            }
        }
        PhantomKind::Bubbles {
            count,
            radius_min,
            radius_max,
        } => {
            check_class(1)?;
            if !(0.0 < *radius_min && radius_min <= radius_max && *radius_max < 0.45) {
                return Err(Error::InvalidArgument(format!(
                    "bubble radii must satisfy 0 < min <= max < 0.45, got {radius_min}..{radius_max}"
                )));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            for d in bubble_disks(*count, *radius_min, *radius_max, &mut rng) {
                paint_ellipse(grid, &mut labels, &disk_ellipse(&d));
            }
        }
        PhantomKind::SheppLoganLike => {
            check_class(3)?;
            let stack = [
                Ellipse { cy: 0.5, cx: 0.5, ry: 0.45, rx: 0.35, angle: 0.0, class: 3 },
                Ellipse { cy: 0.5, cx: 0.5, ry: 0.41, rx: 0.31, angle: 0.0, class: 2 },
                Ellipse { cy: 0.45, cx: 0.41, ry: 0.14, rx: 0.05, angle: -0.3, class: 1 },
                Ellipse { cy: 0.45, cx: 0.59, ry: 0.16, rx: 0.06, angle: 0.3, class: 1 },
                Ellipse { cy: 0.25, cx: 0.5, ry: 0.05, rx: 0.05, angle: 0.0, class: 3 },
                Ellipse { cy: 0.72, cx: 0.44, ry: 0.03, rx: 0.04, angle: 0.0, class: 3 },
                Ellipse { cy: 0.72, cx: 0.56, ry: 0.04, rx: 0.03, angle: 0.0, class: 1 },
            ];
            for e in &stack {
                paint_ellipse(grid, &mut labels, e);
            }
        }
    }
    let values = labels.iter().map(|&l| means.values()[l]).collect();
    Ok(Phantom {
        image: RealImage::new(grid, values)?,
        labels: HardSegmentation::new(grid, classes, labels)?,
        means,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskKind {
    UniformRandom,
    VariableDensity,
    Spiral,
}

impl MaskKind {
    pub fn name(&self) -> &'static str {
        match self {
            MaskKind::UniformRandom => "uniform_random",
            MaskKind::VariableDensity => "variable_density_random",
            MaskKind::Spiral => "spiral",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskSpec {
    pub kind: MaskKind,
    /// Fraction of bins to select, in `(0, 1]`.
    pub rate: f64,
    pub seed: u64,
    /// Spiral turns; `None` picks the arm spacing from the rate.
    pub turns: Option<f64>,
    /// Select bins in `k / -k` pairs (random kinds only).
    pub symmetric: bool,
}

impl MaskSpec {
    pub fn new(kind: MaskKind, rate: f64, seed: u64) -> Self {
        MaskSpec {
            kind,
            rate,
            seed,
            turns: None,
            symmetric: false,
        }
    }
}

/// Signed frequency of bin index `r` along an axis of length `n`.
fn signed_freq(r: usize, n: usize) -> f64 {
    if r <= n / 2 {
        r as f64
    } else {
        r as f64 - n as f64
    }
}

/// Builds a sampling mask with exactly `round(rate * n)` bins (the spiral may
/// stop a few bins short only if the path cannot be extended). The DC bin is
/// always selected.
pub fn make_mask(spec: &MaskSpec, grid: Grid) -> Result<SamplingMask> {
    if !(spec.rate > 0.0 && spec.rate <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "sampling rate must lie in (0, 1], got {}",
            spec.rate
        )));
    }
    let n = grid.n();
    let m = (spec.rate * n as f64).round() as usize;
    if m < 1 {
        return Err(Error::InvalidArgument(format!(
            "sampling rate {} selects no bins on {grid}, not even DC",
            spec.rate
        )));
    }
    if m >= n {
        return Ok(SamplingMask::full(grid));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let selected = match spec.kind {
        MaskKind::UniformRandom => {
            let weights = vec![1.0; n];
            weighted_selection(grid, &weights, m, spec.symmetric, &mut rng)
        }
        MaskKind::VariableDensity => {
            let weights: Vec<f64> = (0..n)
                .map(|k| {
                    let (r, c) = grid.coords(k);
                    let fy = signed_freq(r, grid.n1()) / (grid.n1() as f64 / 2.0);
                    let fx = signed_freq(c, grid.n2()) / (grid.n2() as f64 / 2.0);
                    let rho = ((fy * fy + fx * fx) / 2.0).sqrt();
                    (1.0 - rho).max(0.0).powi(3) + 0.02
                })
                .collect();
            weighted_selection(grid, &weights, m, spec.symmetric, &mut rng)
        }
        MaskKind::Spiral => spiral_selection(grid, m, spec.turns)?,
    };
    SamplingMask::from_selection(grid, selected)
}

/// Weighted sampling without replacement (exponential keys), DC forced.
fn weighted_selection(
    grid: Grid,
    weights: &[f64],
    m: usize,
    symmetric: bool,
    rng: &mut ChaCha8Rng,
) -> Vec<bool> {
    let n = grid.n();
    let mut selected = vec![false; n];
    selected[0] = true;
    let mut count = 1;
    // orbits {k, -k} when symmetric, singletons otherwise
    let mut orbits: Vec<(f64, usize)> = Vec::new();
    let mut order: Vec<usize> = (1..n).collect();
    order.shuffle(rng);
    for k in order {
        let mk = mirror_bin(grid, k);
        if symmetric && mk < k {
            continue;
        }
        let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
        let key = u.ln() / weights[k];
        orbits.push((key, k));
    }
    orbits.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, k) in &orbits {
        if count >= m {
            break;
        }
        let mk = mirror_bin(grid, k);
        let size = if symmetric && mk != k { 2 } else { 1 };
        if count + size > m {
            continue;
        }
        selected[k] = true;
        if size == 2 {
            selected[mk] = true;
        }
        count += size;
    }
    selected
}

/// Archimedean spiral from DC, rasterised as an 8-connected pixel path in
/// centred k-space coordinates.
fn spiral_selection(grid: Grid, m: usize, turns: Option<f64>) -> Result<Vec<bool>> {
    let r_max = 0.5 * grid.n1().min(grid.n2()) as f64 - 1.0;
    let mut spacing = match turns {
        Some(t) if t > 0.0 => r_max / t,
        Some(t) => {
            return Err(Error::InvalidArgument(format!("spiral turns must be positive, got {t}")))
        }
        None => (PI * r_max * r_max / (1.1 * m as f64)).max(1.0),
    };
    loop {
        let path = trace_spiral(grid, spacing, r_max, m);
        if path.len() >= m || spacing <= 1.0 {
            if path.len() < m {
                return Err(Error::InvalidArgument(format!(
                    "spiral reaches only {} of {m} bins on {grid}",
                    path.len()
                )));
            }
            let mut selected = vec![false; grid.n()];
            for k in path {
                selected[k] = true;
            }
            return Ok(selected);
        }
        spacing = (spacing * 0.9).max(1.0);
    }
}

fn trace_spiral(grid: Grid, spacing: f64, r_max: f64, m: usize) -> Vec<usize> {
    let b = spacing / (2.0 * PI);
    let mut seen = HashSet::new();
    let mut path = Vec::with_capacity(m);
    let mut theta: f64 = 0.0;
    loop {
        let r = b * theta;
        if r > r_max || path.len() >= m {
            break;
        }
        let y = (r * theta.sin()).round() as i64;
        let x = (r * theta.cos()).round() as i64;
        let row = y.rem_euclid(grid.n1() as i64) as usize;
        let col = x.rem_euclid(grid.n2() as i64) as usize;
        let k = grid.index(row, col);
        if seen.insert(k) {
            path.push(k);
        }
        theta += 0.4 / (r * r + b * b).sqrt().max(0.4);
    }
    path
}

/// `f = A u + eta` with i.i.d. `N(0, sigma^2)` noise on the real and imaginary
/// part of every sample.
pub fn simulate_kspace(
    u_gt: &RealImage,
    mask: &SamplingMask,
    sigma: f64,
    seed: u64,
) -> Result<KSpaceData> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidArgument(format!("sigma must be nonnegative, got {sigma}")));
    }
    let op = ForwardOperator::new(mask.clone())?;
    let mut samples = op.forward(u_gt)?;
    if sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for z in samples.iter_mut() {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            *z += Complex64::new(sigma * re, sigma * im);
        }
    }
    KSpaceData::new(mask.clone(), samples, sigma)
}

/// `20 log10(||clean|| / (sigma sqrt(2m)))` in dB; `+inf` for `sigma = 0`
/// and `-inf` for a zero clean signal.
pub fn snr_of(data: &KSpaceData, clean: &[Complex64]) -> Result<f64> {
    if clean.len() != data.samples().len() {
        return Err(Error::Shape {
            expected: data.samples().len(),
            actual: clean.len(),
        });
    }
    let sigma = data.noise_sigma();
    if sigma == 0.0 {
        return Ok(f64::INFINITY);
    }
    let signal = clean.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if signal == 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    let noise = sigma * (2.0 * clean.len() as f64).sqrt();
    Ok(20.0 * (signal / noise).log10())
}
