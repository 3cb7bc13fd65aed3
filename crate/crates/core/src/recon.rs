//! TV-regularised reconstruction and Bregman-TV iterative reconstruction.
//!
//! Both are driven by one PDHG solver for the u-subproblem
//!
//! ```text
//! min_u  1/2 ||Au - f||^2 + alpha (TV(u) - <p, u>) + delta sum_ij v_ij (c_j - u_i)^2
//!        + eps/2 ||u - u_k||^2
//! ```
//!
//! with `K = grad`, the TV weight carried by the dual-ball radius `alpha`, and
//! a proximal step that solves `((1 + tau (2 delta + eps)) I + tau A*A) u = rhs`.
//! The joint solver reuses the same code path, so with `delta = 0` the two
//! produce bit-identical u-iterates.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::operators::{
    div_strided, grad_strided, project_ball_in_place, tv_slice, ForwardOperator,
    ShiftedNormalSolver, PDHG_STEP,
};
use crate::types::{
    dist, dot, norm, Grid, IterRecord, JointConfig, KSpaceData, LabelRelaxation, LinearSolver,
    RealImage, SolveReport, StopReason,
};

/// Result of a reconstruction: the image, the TV subgradient certified by the
/// optimality condition, and per-iteration diagnostics.
#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub u: RealImage,
    pub p: RealImage,
    pub report: SolveReport,
}

/// Fixed data of one u-subproblem.
pub(crate) struct UProblem<'a> {
    pub op: &'a ForwardOperator,
    pub f: &'a [Complex64],
    pub atf: &'a [f64],
    pub alpha: f64,
    pub p: &'a [f64],
    pub delta: f64,
    /// Per-pixel `sum_j v_ij c_j`; zeros when there is no coupling.
    pub target: &'a [f64],
    pub eps: f64,
    /// `u^k`, the anchor of the strong-convexity term.
    pub anchor: &'a [f64],
}

impl UProblem<'_> {
    /// Constant part of the proximal right-hand side, divided by `tau`.
    fn linear_part(&self) -> Vec<f64> {
        let two_delta = 2.0 * self.delta;
        (0..self.atf.len())
            .map(|i| {
                self.atf[i]
                    + self.alpha * self.p[i]
                    + two_delta * self.target[i]
                    + self.eps * self.anchor[i]
            })
            .collect()
    }

    /// Objective value, with the coupling term evaluated from `coupling` when given.
    pub fn objective(&self, grid: Grid, u: &[f64], coupling: Option<(&LabelRelaxation, &[f64])>) -> f64 {
        let r = self.op.residual_norm(u, self.f);
        let mut obj = 0.5 * r * r + self.alpha * (tv_slice(grid, u) - dot(self.p, u));
        if let Some((v, c)) = coupling {
            obj += self.delta * coupling_energy(v, c, u);
        }
        if self.eps > 0.0 {
            let d = dist(u, self.anchor);
            obj += 0.5 * self.eps * d * d;
        }
        obj
    }
}

pub(crate) fn coupling_energy(v: &LabelRelaxation, c: &[f64], u: &[f64]) -> f64 {
    let l = v.classes();
    let mut total = 0.0;
    for (i, row) in v.values().chunks_exact(l).enumerate() {
        for (vj, cj) in row.iter().zip(c) {
            let d = cj - u[i];
            total += vj * d * d;
        }
    }
    total
}

/// Inner solver controls shared by the u- and v-PDHG loops.
#[derive(Debug, Clone, Copy)]
pub(crate) struct InnerControl {
    pub iters: usize,
    pub tol: f64,
    pub linear_solver: LinearSolver,
    pub cg_tol: f64,
    pub cg_max: usize,
    /// Record the objective of the ergodic average every `trace_every` steps.
    pub trace_every: usize,
    pub weighted_steps: bool,
}

impl InnerControl {
    /// `(tau, sigma)` for a subproblem whose TV weight is `weight`. Weights
    /// of one or more keep unit steps.
    pub fn steps(&self, weight: f64) -> (f64, f64) {
        if self.weighted_steps && weight < 1.0 {
            (PDHG_STEP / weight, PDHG_STEP * weight)
        } else {
            (PDHG_STEP, PDHG_STEP)
        }
    }
}

impl InnerControl {
    pub fn from_config(cfg: &JointConfig) -> Self {
        InnerControl {
            iters: cfg.inner_iters,
            tol: cfg.inner_tol,
            linear_solver: cfg.linear_solver,
            cg_tol: cfg.cg_tol,
            cg_max: cfg.cg_max,
            trace_every: 0,
            weighted_steps: cfg.weighted_steps,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub(crate) struct PdhgOutcome {
    pub iterations: usize,
    /// `(iteration, objective of the running ergodic average)`.
    pub trace: Vec<(usize, f64)>,
}

/// Runs PDHG on a u-subproblem, warm-started from `u` and `y` (2n planar).
pub(crate) fn solve_u(
    problem: &UProblem<'_>,
    u: &mut Vec<f64>,
    y: &mut [f64],
    ctl: InnerControl,
    coupling: Option<(&LabelRelaxation, &[f64])>,
) -> Result<PdhgOutcome> {
    let grid = problem.op.grid();
    let n = grid.n();
    let (tau, sigma) = ctl.steps(problem.alpha);
    let a = 1.0 + tau * (2.0 * problem.delta + problem.eps);
    let solver = ShiftedNormalSolver::new(problem.op, a, tau);
    let lin = problem.linear_part();

    let mut u_bar = u.clone();
    let mut d1 = vec![0.0; n];
    let mut d2 = vec![0.0; n];
    let mut div = vec![0.0; n];
    let mut rhs = vec![0.0; n];
    let mut u_new = u.clone();
    let mut avg = vec![0.0; n];
    let mut outcome = PdhgOutcome::default();

    for it in 0..ctl.iters {
        grad_strided(grid, &u_bar, 1, 0, &mut d1, &mut d2);
        {
            let (y1, y2) = y.split_at_mut(n);
            for i in 0..n {
                y1[i] += sigma * d1[i];
                y2[i] += sigma * d2[i];
            }
        }
        project_ball_in_place(y, n, 2, problem.alpha);
        let (y1, y2) = y.split_at(n);
        div_strided(grid, y1, y2, &mut div, 1, 0);
        for i in 0..n {
            rhs[i] = u[i] + tau * div[i] + tau * lin[i];
        }
        match ctl.linear_solver {
            LinearSolver::Fourier => solver.solve_fourier(&rhs, &mut u_new),
            LinearSolver::ConjugateGradient => {
                solver.solve_cg(&rhs, &mut u_new, ctl.cg_tol, ctl.cg_max);
            }
        }
        let mut change = 0.0;
        for i in 0..n {
            let d = u_new[i] - u[i];
            change += d * d;
            u_bar[i] = 2.0 * u_new[i] - u[i];
        }
        std::mem::swap(u, &mut u_new);
        // keep the CG warm start at the latest iterate
        u_new.copy_from_slice(u);
        outcome.iterations = it + 1;
        if !change.is_finite() {
            return Err(Error::Diverged {
                stage: "u-subproblem",
                iteration: it,
            });
        }
        if ctl.trace_every > 0 {
            let w = 1.0 / (it + 1) as f64;
            for i in 0..n {
                avg[i] += (u[i] - avg[i]) * w;
            }
            if (it + 1) % ctl.trace_every == 0 {
                outcome.trace.push((it + 1, problem.objective(grid, &avg, coupling)));
            }
        }
        if ctl.tol > 0.0 && change.sqrt() <= ctl.tol * norm(u).max(f64::MIN_POSITIVE) {
            break;
        }
    }
    Ok(outcome)
}

/// `p^{k+1} = p^k - (1/alpha) [A*(Au - f) + 2 delta sum_j v_j (u - c_j) + eps (u - u^k)]`.
///
/// `coupling` carries `(sum_j v_ij, sum_j v_ij c_j)` per pixel; `None` means no
/// coupling term.
#[allow(clippy::too_many_arguments)]
pub(crate) fn subgradient_step(
    op: &ForwardOperator,
    f: &[Complex64],
    p: &mut [f64],
    u: &[f64],
    u_prev: &[f64],
    alpha: f64,
    delta: f64,
    coupling: Option<(&[f64], &[f64])>,
    eps: f64,
) {
    let residual: Vec<Complex64> = op
        .forward_slice(u)
        .iter()
        .zip(f)
        .map(|(a, b)| a - b)
        .collect();
    let mut atr = vec![0.0; u.len()];
    op.adjoint_into(&residual, &mut atr);
    let two_delta = 2.0 * delta;
    for i in 0..u.len() {
        let couple = match coupling {
            Some((mass, target)) => two_delta * (u[i] * mass[i] - target[i]),
            None => 0.0,
        };
        let g = atr[i] + couple + eps * (u[i] - u_prev[i]);
        p[i] -= g / alpha;
    }
}

pub(crate) fn check_data(data: &KSpaceData, cfg: &JointConfig, alpha: f64) -> Result<ForwardOperator> {
    cfg.ensure_valid()?;
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::InvalidArgument(format!("alpha must be positive, got {alpha}")));
    }
    ForwardOperator::for_data(data)
}

/// Objective `1/2 ||Au - f||^2 + alpha TV(u)`.
pub fn tv_objective(data: &KSpaceData, u: &RealImage, alpha: f64) -> Result<f64> {
    let op = ForwardOperator::for_data(data)?;
    data.grid().ensure_same(&u.grid())?;
    let r = op.residual_norm(u.values(), data.samples());
    Ok(0.5 * r * r + alpha * tv_slice(u.grid(), u.values()))
}

/// Single TV-regularised reconstruction from zero initialisation.
pub fn tv_reconstruct(data: &KSpaceData, alpha: f64, cfg: &JointConfig) -> Result<Reconstruction> {
    let (rec, _) = tv_reconstruct_traced(data, alpha, cfg, 0)?;
    Ok(rec)
}

/// As [`tv_reconstruct`], also returning the objective of the running ergodic
/// average every `trace_every` PDHG steps.
pub fn tv_reconstruct_traced(
    data: &KSpaceData,
    alpha: f64,
    cfg: &JointConfig,
    trace_every: usize,
) -> Result<(Reconstruction, Vec<(usize, f64)>)> {
    let cfg = JointConfig {
        alpha,
        max_outer: 1,
        epsilon_aug: 0.0,
        ..cfg.clone()
    };
    let mut ctl = InnerControl::from_config(&cfg);
    ctl.trace_every = trace_every;
    let mut run = BregmanRun::new(data, alpha, &cfg)?;
    let trace = run.step(ctl)?;
    run.report.stop_reason = StopReason::MaxIters;
    Ok((run.finish(), trace))
}

/// Bregman-TV iterations stopped by the discrepancy principle
/// `||f - A u^{k+1}|| <= sigma sqrt(m)`, or after `max_outer` steps.
pub fn bregman_tv_reconstruct(
    data: &KSpaceData,
    alpha: f64,
    cfg: &JointConfig,
) -> Result<Reconstruction> {
    let mut run = BregmanRun::new(data, alpha, cfg)?;
    let level = data.discrepancy_level();
    let ctl = InnerControl::from_config(cfg);
    for _ in 0..cfg.max_outer {
        run.step(ctl)?;
        let residual = run.report.last().map(|r| r.data_residual).unwrap_or(f64::INFINITY);
        if residual <= level {
            run.report.stop_reason = StopReason::Discrepancy;
            break;
        }
    }
    Ok(run.finish())
}

struct BregmanRun<'a> {
    data: &'a KSpaceData,
    op: ForwardOperator,
    atf: Vec<f64>,
    zeros: Vec<f64>,
    alpha: f64,
    eps: f64,
    u: Vec<f64>,
    p: Vec<f64>,
    y: Vec<f64>,
    report: SolveReport,
}

impl<'a> BregmanRun<'a> {
    fn new(data: &'a KSpaceData, alpha: f64, cfg: &JointConfig) -> Result<Self> {
        let op = check_data(data, cfg, alpha)?;
        let n = op.grid().n();
        let mut atf = vec![0.0; n];
        op.adjoint_into(data.samples(), &mut atf);
        Ok(BregmanRun {
            data,
            op,
            atf,
            zeros: vec![0.0; n],
            alpha,
            eps: cfg.epsilon_aug,
            u: vec![0.0; n],
            p: vec![0.0; n],
            y: vec![0.0; 2 * n],
            report: SolveReport::new(cfg.max_outer),
        })
    }

    fn step(&mut self, ctl: InnerControl) -> Result<Vec<(usize, f64)>> {
        let grid = self.op.grid();
        let u_prev = self.u.clone();
        let problem = UProblem {
            op: &self.op,
            f: self.data.samples(),
            atf: &self.atf,
            alpha: self.alpha,
            p: &self.p,
            delta: 0.0,
            target: &self.zeros,
            eps: self.eps,
            anchor: &u_prev,
        };
        let outcome = solve_u(&problem, &mut self.u, &mut self.y, ctl, None)?;
        let p_prev = self.p.clone();
        subgradient_step(
            &self.op,
            self.data.samples(),
            &mut self.p,
            &self.u,
            &u_prev,
            self.alpha,
            0.0,
            None,
            self.eps,
        );

        let residual = self.op.residual_norm(&self.u, self.data.samples());
        let tv_u = tv_slice(grid, &self.u);
        let tv_prev = tv_slice(grid, &u_prev);
        let du: Vec<f64> = self.u.iter().zip(&u_prev).map(|(a, b)| a - b).collect();
        let bregman_u = tv_u - tv_prev - dot(&p_prev, &du);
        let energy = 0.5 * residual * residual;
        let step_u = norm(&du);
        // w = grad E(u^{k+1}) + alpha (p^{k+1} - p^k), then (u^k - u^{k+1})
        let mut atr = vec![0.0; grid.n()];
        let res: Vec<Complex64> = self
            .op
            .forward_slice(&self.u)
            .iter()
            .zip(self.data.samples())
            .map(|(a, b)| a - b)
            .collect();
        self.op.adjoint_into(&res, &mut atr);
        let w_u_sq: f64 = (0..grid.n())
            .map(|i| {
                let w = atr[i] + self.alpha * (self.p[i] - p_prev[i]);
                w * w
            })
            .sum();
        let w_norm = (w_u_sq + step_u * step_u).sqrt();
        let k = self.report.iterations.len();
        self.report.iterations.push(IterRecord {
            k,
            data_residual: residual,
            tv_u: Some(tv_u),
            energy: Some(energy),
            bregman_u: Some(bregman_u),
            surrogate: Some(energy + self.alpha * bregman_u),
            step_u: Some(step_u),
            w_norm: Some(w_norm),
            w_u_norm: Some(w_u_sq.sqrt()),
            subgrad_ratio: (step_u > 0.0).then(|| w_norm / step_u),
            inner_u: Some(outcome.iterations),
            ..IterRecord::default()
        });
        Ok(outcome.trace)
    }

    fn finish(self) -> Reconstruction {
        let grid = self.op.grid();
        Reconstruction {
            u: RealImage::new(grid, self.u).expect("grid"),
            p: RealImage::new(grid, self.p).expect("grid"),
            report: self.report,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::{make_mask, make_phantom, simulate_kspace, MaskKind, MaskSpec, PhantomSpec};
    use crate::types::SamplingMask;

    fn disk_data(n: usize, rate: f64, sigma: f64, seed: u64) -> (RealImage, KSpaceData) {
        let grid = Grid::new(n, n).unwrap();
        let phantom = make_phantom(&PhantomSpec::two_region(grid, 0.25)).unwrap();
        let mask = if rate >= 1.0 {
            SamplingMask::full(grid)
        } else {
            make_mask(&MaskSpec::new(MaskKind::UniformRandom, rate, seed), grid).unwrap()
        };
        let data = simulate_kspace(&phantom.image, &mask, sigma, seed + 1).unwrap();
        (phantom.image, data)
    }

    #[test]
    fn tiny_alpha_full_mask_recovers_truth() {
        let (gt, data) = disk_data(16, 1.0, 0.0, 1);
        let cfg = JointConfig {
            inner_iters: 500,
            ..JointConfig::default()
        };
        let rec = tv_reconstruct(&data, 1e-6, &cfg).unwrap();
        let rre = crate::metrics::rre(&rec.u, &gt).unwrap();
        assert!(rre <= 1e-3, "rre {rre}");
    }

    #[test]
    fn zero_data_gives_zero_image() {
        let grid = Grid::new(8, 8).unwrap();
        let data = KSpaceData::new(
            SamplingMask::full(grid),
            vec![Complex64::new(0.0, 0.0); 64],
            0.1,
        )
        .unwrap();
        let rec = tv_reconstruct(&data, 0.5, &JointConfig::default()).unwrap();
        assert!(rec.u.values().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn invalid_alpha_is_rejected() {
        let (_, data) = disk_data(8, 1.0, 0.0, 1);
        assert!(tv_reconstruct(&data, 0.0, &JointConfig::default()).is_err());
        assert!(bregman_tv_reconstruct(&data, -1.0, &JointConfig::default()).is_err());
    }

    #[test]
    fn first_bregman_step_equals_tv_reconstruct() {
        let (_, data) = disk_data(16, 0.3, 0.1, 3);
        let cfg = JointConfig {
            inner_iters: 100,
            max_outer: 1,
            ..JointConfig::default()
        };
        let tv = tv_reconstruct(&data, 2.0, &cfg).unwrap();
        let br = bregman_tv_reconstruct(&data, 2.0, &cfg).unwrap();
        assert_eq!(tv.u, br.u);
        assert_eq!(tv.p, br.p);
    }

    #[test]
    fn noiseless_bregman_runs_to_max_with_decreasing_residual() {
        let (_, data) = disk_data(16, 0.4, 0.0, 4);
        let cfg = JointConfig {
            inner_iters: 200,
            max_outer: 8,
            ..JointConfig::default()
        };
        let rec = bregman_tv_reconstruct(&data, 5.0, &cfg).unwrap();
        assert_eq!(rec.report.stop_reason, StopReason::MaxIters);
        assert_eq!(rec.report.outer_iters(), 8);
        let res: Vec<f64> = rec.report.iterations.iter().map(|r| r.data_residual).collect();
        for w in res.windows(2) {
            assert!(w[1] <= w[0] + 1e-8, "{res:?}");
        }
        assert!(res[7] < 0.2 * res[0]);
    }

    #[test]
    fn cg_route_matches_fourier_route() {
        let (_, data) = disk_data(16, 0.3, 0.1, 5);
        let base = JointConfig {
            inner_iters: 60,
            ..JointConfig::default()
        };
        let cg = JointConfig {
            linear_solver: LinearSolver::ConjugateGradient,
            cg_tol: 1e-13,
            cg_max: 100,
            ..base.clone()
        };
        let a = tv_reconstruct(&data, 0.3, &base).unwrap();
        let b = tv_reconstruct(&data, 0.3, &cg).unwrap();
        let d = dist(a.u.values(), b.u.values());
        assert!(d <= 1e-9 * a.u.norm(), "difference {d}");
    }
}
