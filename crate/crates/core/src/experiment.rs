//! Experiment recipes: simulate, solve, score and write everything to disk.
//!
//! Layout of the output directory:
//!
//! ```text
//! manifest.cfg                  resolved configuration, rerunnable as is
//! results.csv                   one row per run
//! ground_truth.pgm (+ .f64)     phantom in configured units
//! ground_truth_labels.pgm
//! run_000/mask.pgm
//! run_000/kspace.ksp
//! run_000/recon.pgm (+ .f64)
//! run_000/segmentation.pgm
//! run_000/relaxation.f64        v, row-major, classes fastest
//! run_000/iterations.csv
//! ```

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::config::{ExperimentConfig, Method, SweepParam, Units};
use crate::error::{Error, Result};
use crate::io;
use crate::joint::{constrained_joint_solve, joint_solve};
use crate::metrics::evaluate;
use crate::operators::zero_fill;
use crate::recon::{bregman_tv_reconstruct, tv_reconstruct};
use crate::segment::{segment, threshold};
use crate::simulate::{make_mask, make_phantom, simulate_kspace, Phantom};
use crate::types::{
    HardSegmentation, IterRecord, JointConfig, KSpaceData, LabelRelaxation, RealImage, RegionMeans,
    SolveReport,
};

/// Environment variable with the worker-thread count for sweeps.
pub const THREADS_ENV: &str = "RECSEG_THREADS";

pub const CSV_COLUMNS: [&str; 13] = [
    "method",
    "alpha",
    "beta",
    "delta",
    "rate",
    "sigma",
    "rre",
    "psnr_unsquared",
    "psnr_standard",
    "rse",
    "outer_iters",
    "stop_reason",
    "wall_ms",
];

/// Parameters of one run, in configured units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunParams {
    pub alpha: f64,
    pub beta: f64,
    pub delta: f64,
    pub rate: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub method: Method,
    pub params: RunParams,
    pub rre: f64,
    pub psnr_unsquared: f64,
    pub psnr_standard: f64,
    pub rse: f64,
    pub outer_iters: usize,
    pub stop_reason: String,
    pub wall_ms: u64,
}

impl ResultRow {
    fn record(&self) -> Vec<String> {
        let p = &self.params;
        vec![
            self.method.name().to_string(),
            p.alpha.to_string(),
            p.beta.to_string(),
            p.delta.to_string(),
            p.rate.to_string(),
            p.sigma.to_string(),
            self.rre.to_string(),
            self.psnr_unsquared.to_string(),
            self.psnr_standard.to_string(),
            self.rse.to_string(),
            self.outer_iters.to_string(),
            self.stop_reason.clone(),
            self.wall_ms.to_string(),
        ]
    }
}

/// Everything one run produces. Images are in configured units.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub row: ResultRow,
    pub data: KSpaceData,
    pub u: RealImage,
    pub v: LabelRelaxation,
    pub segmentation: HardSegmentation,
    pub report: Option<SolveReport>,
}

impl ExperimentConfig {
    /// Parameters of every run, in sweep order.
    pub fn runs(&self) -> Vec<RunParams> {
        let base = RunParams {
            alpha: self.solver.alpha,
            beta: self.solver.beta,
            delta: if self.method.is_sequential() {
                self.segment_delta
            } else {
                self.solver.delta
            },
            rate: self.mask.rate,
            sigma: self.sigma,
        };
        let Some(sweep) = &self.sweep else {
            return vec![base];
        };
        sweep
            .values
            .iter()
            .map(|&x| {
                let mut p = base;
                match sweep.param {
                    SweepParam::Alpha => p.alpha = x,
                    SweepParam::Beta => p.beta = x,
                    SweepParam::Delta => p.delta = x,
                    SweepParam::Rate => p.rate = x,
                    SweepParam::Sigma => p.sigma = x,
                }
                p
            })
            .collect()
    }
}

/// Phantom in configured units and its solver-unit copy.
pub fn phantoms(cfg: &ExperimentConfig) -> Result<(Phantom, Phantom)> {
    let shown = make_phantom(&cfg.phantom)?;
    let s = cfg.units.intensity_scale(cfg.phantom.grid);
    let mut spec = cfg.phantom.clone();
    spec.intensities.iter_mut().for_each(|x| *x *= s);
    Ok((shown, make_phantom(&spec)?))
}

fn scaled(u: &RealImage, factor: f64) -> RealImage {
    let mut out = u.clone();
    out.values_mut().iter_mut().for_each(|x| *x *= factor);
    out
}

/// Runs one parameter set. `truth` is in configured units, `solver_truth` in
/// solver units.
pub fn run_single(
    cfg: &ExperimentConfig,
    params: RunParams,
    truth: &Phantom,
    solver_truth: &Phantom,
) -> Result<RunOutput> {
    let started = Instant::now();
    let grid = cfg.phantom.grid;
    let units: Units = cfg.units;
    let mut mask_spec = cfg.mask.clone();
    mask_spec.rate = params.rate;
    let mask = make_mask(&mask_spec, grid)?;
    let data = simulate_kspace(&solver_truth.image, &mask, params.sigma, cfg.seed)?;
    let c: &RegionMeans = &solver_truth.means;
    let alpha = units.solver_alpha(grid, params.alpha);
    let delta = units.solver_delta(grid, params.delta);
    let solver = JointConfig {
        alpha,
        beta: params.beta,
        delta,
        ..cfg.solver.clone()
    };

    let (u, v, report) = match cfg.method {
        Method::ZeroFill | Method::TvSeq | Method::BregmanSeq => {
            let (u, report) = match cfg.method {
                Method::ZeroFill => (zero_fill(&data)?, None),
                Method::TvSeq => {
                    let r = tv_reconstruct(&data, alpha, &solver)?;
                    (r.u, Some(r.report))
                }
                _ => {
                    let r = bregman_tv_reconstruct(&data, alpha, &solver)?;
                    (r.u, Some(r.report))
                }
            };
            let seg = segment(&u, c, params.beta, delta, None, &solver)?;
            (u, seg.v, report)
        }
        Method::Joint => {
            let r = joint_solve(&data, c, &solver)?;
            (r.u, r.v, Some(r.report))
        }
        Method::ConstrainedJoint => {
            let r = constrained_joint_solve(&data, c, params.beta, delta, &solver)?;
            (r.u, r.v, Some(r.report))
        }
    };

    let u = scaled(&u, 1.0 / units.intensity_scale(grid));
    let segmentation = threshold(&v, solver.mu)?;
    let m = evaluate(&u, &truth.image, &segmentation, &truth.labels)?;
    let row = ResultRow {
        method: cfg.method,
        params,
        rre: m.rre,
        psnr_unsquared: m.psnr_unsquared,
        psnr_standard: m.psnr_standard,
        rse: m.rse,
        outer_iters: report.as_ref().map_or(0, |r| r.outer_iters()),
        stop_reason: report
            .as_ref()
            .map_or("none".to_string(), |r| r.stop_reason.to_string()),
        wall_ms: if cfg.timing {
            started.elapsed().as_millis() as u64
        } else {
            0
        },
    };
    Ok(RunOutput {
        row,
        data,
        u,
        v,
        segmentation,
        report,
    })
}

/// Worker threads from [`THREADS_ENV`], or `None` for the rayon default.
pub fn thread_count() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Error::Config(format!("{THREADS_ENV} must be a positive integer, got `{s}`"))),
        },
    }
}

/// Runs every configured run and writes the output directory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    let (truth, solver_truth) = phantoms(cfg)?;
    let runs = cfg.runs();
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_count()? {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker threads: {e}")))?;
    let outputs: Vec<Result<RunOutput>> = pool.install(|| {
        use rayon::prelude::*;
        runs.par_iter()
            .map(|&p| run_single(cfg, p, &truth, &solver_truth))
            .collect()
    });
    let outputs: Vec<RunOutput> = outputs.into_iter().collect::<Result<_>>()?;

    let out = &cfg.output;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    fs::write(out.join("manifest.cfg"), cfg.to_text()).map_err(|e| Error::io(out.join("manifest.cfg"), e))?;
    io::write_image(&out.join("ground_truth.pgm"), &truth.image)?;
    io::write_labels(&out.join("ground_truth_labels.pgm"), &truth.labels)?;
    for (i, o) in outputs.iter().enumerate() {
        write_run(&run_dir(out, i), o)?;
    }
    let rows: Vec<ResultRow> = outputs.into_iter().map(|o| o.row).collect();
    write_results(&out.join("results.csv"), &rows)?;
    Ok(rows)
}

pub fn run_dir(out: &Path, index: usize) -> PathBuf {
    out.join(format!("run_{index:03}"))
}

fn write_run(dir: &Path, o: &RunOutput) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    io::write_mask(&dir.join("mask.pgm"), o.data.mask())?;
    io::write_kspace(&dir.join("kspace.ksp"), &o.data)?;
    io::write_image(&dir.join("recon.pgm"), &o.u)?;
    io::write_labels(&dir.join("segmentation.pgm"), &o.segmentation)?;
    let raw: Vec<u8> = o.v.values().iter().flat_map(|x| x.to_le_bytes()).collect();
    let vpath = dir.join("relaxation.f64");
    fs::write(&vpath, raw).map_err(|e| Error::io(&vpath, e))?;
    write_iterations(&dir.join("iterations.csv"), o.report.as_ref())
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e))
}

pub fn write_results(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(CSV_COLUMNS).map_err(|e| csv_error(path, e))?;
    for r in rows {
        w.write_record(r.record()).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

const ITER_COLUMNS: [&str; 16] = [
    "k",
    "data_residual",
    "coupling",
    "tv_u",
    "tv_v",
    "energy",
    "bregman_u",
    "bregman_v",
    "surrogate",
    "step_u",
    "step_v",
    "w_norm",
    "w_u_norm",
    "subgrad_ratio",
    "inner_u",
    "inner_v",
];

fn iter_record(r: &IterRecord) -> Vec<String> {
    let f = |x: Option<f64>| x.map_or(String::new(), |v| v.to_string());
    let n = |x: Option<usize>| x.map_or(String::new(), |v| v.to_string());
    vec![
        r.k.to_string(),
        r.data_residual.to_string(),
        f(r.coupling),
        f(r.tv_u),
        f(r.tv_v),
        f(r.energy),
        f(r.bregman_u),
        f(r.bregman_v),
        f(r.surrogate),
        f(r.step_u),
        f(r.step_v),
        f(r.w_norm),
        f(r.w_u_norm),
        f(r.subgrad_ratio),
        n(r.inner_u),
        n(r.inner_v),
    ]
}

/// Per-iteration diagnostics; only the header when there is no report.
pub fn write_iterations(path: &Path, report: Option<&SolveReport>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(ITER_COLUMNS).map_err(|e| csv_error(path, e))?;
    for r in report.map_or(&[][..], |r| &r.iterations[..]) {
        w.write_record(iter_record(r)).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::{MaskKind, MaskSpec, PhantomSpec};
    use crate::types::Grid;

    fn small(method: Method, dir: &Path) -> ExperimentConfig {
        let g = Grid::new(16, 16).unwrap();
        let mut cfg = ExperimentConfig::new(
            method,
            PhantomSpec::two_region(g, 0.3),
            MaskSpec::new(MaskKind::UniformRandom, 0.5, 2),
            0.05,
        );
        cfg.seed = 2;
        cfg.output = dir.to_path_buf();
        cfg.solver.beta = 0.05;
        cfg.solver.alpha = 0.05;
        cfg.solver.max_outer = 4;
        cfg.solver.inner_iters = 60;
        cfg
    }

    #[test]
    fn zero_fill_of_full_noiseless_data_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small(Method::ZeroFill, dir.path());
        cfg.mask.rate = 1.0;
        cfg.sigma = 0.0;
        let rows = run_experiment(&cfg).unwrap();
        assert_eq!(rows.len(), 1);
        assert!(rows[0].rre < 1e-12);
        assert_eq!(rows[0].rse, 0.0);
        assert_eq!(rows[0].stop_reason, "none");
        let gt = io::read_image(&dir.path().join("ground_truth.pgm")).unwrap();
        let u = io::read_image(&run_dir(dir.path(), 0).join("recon.pgm")).unwrap();
        assert!(crate::metrics::rre(&u, &gt).unwrap() < 1e-12);
    }

    #[test]
    fn sweep_writes_one_row_per_value() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small(Method::TvSeq, dir.path());
        cfg.sweep = Some(crate::config::Sweep {
            param: SweepParam::Rate,
            values: vec![0.2, 0.4, 0.8],
        });
        let rows = run_experiment(&cfg).unwrap();
        assert_eq!(rows.iter().map(|r| r.params.rate).collect::<Vec<_>>(), vec![0.2, 0.4, 0.8]);
        let text = fs::read_to_string(dir.path().join("results.csv")).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), CSV_COLUMNS.join(","));
        assert_eq!(lines.count(), 3);
        for i in 0..3 {
            let ksp = io::read_kspace(&run_dir(dir.path(), i).join("kspace.ksp")).unwrap();
            assert_eq!(ksp.mask().m(), (rows[i].params.rate * 256.0).round() as usize);
        }
    }

    #[test]
    fn unnormalized_units_match_a_rescaled_unitary_run() {
        let dir = tempfile::tempdir().unwrap();
        let mut b = small(Method::Joint, dir.path());
        b.units = Units::Unnormalized;
        b.solver.alpha = 0.8;
        b.solver.delta = 2.56;
        let mut a = b.clone();
        a.units = Units::Unitary;
        a.phantom.intensities = vec![0.0, 16.0];
        a.solver.alpha = 0.05;
        a.solver.delta = 0.01;
        let (ta, sa) = phantoms(&a).unwrap();
        let (tb, sb) = phantoms(&b).unwrap();
        assert_eq!(sa.image, sb.image);
        assert_eq!(tb.image, scaled(&ta.image, 1.0 / 16.0));
        let ra = run_single(&a, a.runs()[0], &ta, &sa).unwrap();
        let rb = run_single(&b, b.runs()[0], &tb, &sb).unwrap();
        assert_eq!(ra.v, rb.v);
        assert_eq!(ra.row.rse, rb.row.rse);
        assert!((ra.row.rre - rb.row.rre).abs() < 1e-12);
        assert_eq!(rb.u, scaled(&ra.u, 1.0 / 16.0));
    }

    #[test]
    fn rerun_from_manifest_is_byte_identical() {
        let first = tempfile::tempdir().unwrap();
        let second = tempfile::tempdir().unwrap();
        let mut cfg = small(Method::Joint, first.path());
        cfg.sweep = Some(crate::config::Sweep {
            param: SweepParam::Delta,
            values: vec![0.0, 0.1],
        });
        run_experiment(&cfg).unwrap();
        let text = fs::read_to_string(first.path().join("manifest.cfg")).unwrap();
        let mut again = ExperimentConfig::parse(&text).unwrap();
        assert_eq!(again, cfg);
        again.output = second.path().to_path_buf();
        run_experiment(&again).unwrap();
        for name in ["results.csv", "run_001/recon.f64", "run_001/relaxation.f64", "run_001/iterations.csv"] {
            assert_eq!(
                fs::read(first.path().join(name)).unwrap(),
                fs::read(second.path().join(name)).unwrap(),
                "{name}"
            );
        }
    }
}
