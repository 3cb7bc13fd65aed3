//! Multi-class convex-relaxed Chan-Vese segmentation and its Bregman variant.
//!
//! The v-subproblem
//!
//! ```text
//! min_{v in C}  <delta g - beta q, v> + beta TV(v) + eps/2 ||v - v_k||^2
//! ```
//!
//! is solved by PDHG with one dual ball of radius `beta` over all `2l`
//! gradient channels and a per-pixel simplex projection.

use crate::error::{Error, Result};
use crate::operators::{div_strided, grad_strided, project_simplex_in_place, tv_vec_slice};
use crate::recon::{InnerControl, PdhgOutcome};
use crate::types::{
    dist, dot, ClassField, Grid, HardSegmentation, IterRecord, JointConfig, LabelRelaxation,
    RealImage, RegionMeans, SolveReport, StopReason,
};

/// Relaxed labels, the last subgradient `q`, and per-iteration diagnostics.
#[derive(Debug, Clone)]
pub struct Segmentation {
    pub v: LabelRelaxation,
    pub q: ClassField,
    pub report: SolveReport,
}

/// `g_ij = (c_j - u_i)^2`.
pub fn fidelity_field(u: &RealImage, c: &RegionMeans) -> ClassField {
    let l = c.classes();
    let mut values = Vec::with_capacity(u.values().len() * l);
    for &x in u.values() {
        values.extend(c.values().iter().map(|cj| (cj - x) * (cj - x)));
    }
    ClassField::new(u.grid(), l, values).expect("sized from grid")
}

/// Value of `delta <g, v> + beta TV(v)` for the plain model.
pub fn segment_objective(
    u: &RealImage,
    c: &RegionMeans,
    v: &LabelRelaxation,
    beta: f64,
    delta: f64,
) -> Result<f64> {
    check_shapes(u, c, v)?;
    let g = fidelity_field(u, c);
    Ok(delta * dot(g.values(), v.values()) + beta * tv_vec_slice(v.grid(), v.classes(), v.values()))
}

fn check_shapes(u: &RealImage, c: &RegionMeans, v: &LabelRelaxation) -> Result<()> {
    u.grid().ensure_same(&v.grid())?;
    if v.classes() != c.classes() {
        return Err(Error::Shape {
            expected: c.classes(),
            actual: v.classes(),
        });
    }
    Ok(())
}

/// Hard labels: for two classes label 0 iff `v_0 >= mu`, otherwise the
/// per-pixel argmax with ties going to the lowest index.
pub fn threshold(v: &LabelRelaxation, mu: f64) -> Result<HardSegmentation> {
    if !(mu > 0.0 && mu < 1.0) {
        return Err(Error::InvalidArgument(format!("threshold must lie in (0, 1), got {mu}")));
    }
    let l = v.classes();
    let labels = v
        .values()
        .chunks_exact(l)
        .map(|row| {
            if l == 2 {
                usize::from(row[0] < mu)
            } else {
                argmax(row)
            }
        })
        .collect();
    HardSegmentation::new(v.grid(), l, labels)
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &x) in row.iter().enumerate().skip(1) {
        if x > row[best] {
            best = j;
        }
    }
    best
}

/// Fixed data of one v-subproblem; `lin = delta g - beta q`.
pub(crate) struct VProblem<'a> {
    pub grid: Grid,
    pub classes: usize,
    pub lin: &'a [f64],
    pub beta: f64,
    pub eps: f64,
    pub anchor: &'a [f64],
}

impl VProblem<'_> {
    pub fn objective(&self, v: &[f64]) -> f64 {
        let mut obj = dot(self.lin, v) + self.beta * tv_vec_slice(self.grid, self.classes, v);
        if self.eps > 0.0 {
            let d = dist(v, self.anchor);
            obj += 0.5 * self.eps * d * d;
        }
        obj
    }
}

/// Ball projection over all `2l` channels. Per-class partial sums are added
/// in sorted order so the result does not depend on the class order.
fn project_class_ball(w: &mut [f64], n: usize, classes: usize, radius: f64, parts: &mut Vec<f64>) {
    for i in 0..n {
        parts.clear();
        for j in 0..classes {
            let a = w[2 * j * n + i];
            let b = w[(2 * j + 1) * n + i];
            parts.push(a * a + b * b);
        }
        parts.sort_unstable_by(f64::total_cmp);
        let norm = parts.iter().sum::<f64>().sqrt();
        if norm > radius {
            let f = radius / norm;
            for ch in 0..2 * classes {
                w[ch * n + i] *= f;
            }
        }
    }
}

/// PDHG on a v-subproblem, warm-started from `v` (pixel-major) and `w`
/// (planar, channels `2j` and `2j + 1` belong to class `j`).
pub(crate) fn solve_v(
    problem: &VProblem<'_>,
    v: &mut Vec<f64>,
    w: &mut [f64],
    ctl: InnerControl,
) -> Result<PdhgOutcome> {
    let (grid, l) = (problem.grid, problem.classes);
    let n = grid.n();
    let (tau, sigma) = ctl.steps(problem.beta);
    let shrink = 1.0 / (1.0 + tau * problem.eps);

    let mut v_bar = v.clone();
    let mut v_new = v.clone();
    let mut d1 = vec![0.0; n];
    let mut d2 = vec![0.0; n];
    let mut div = vec![0.0; n * l];
    let mut avg = vec![0.0; n * l];
    let mut parts = Vec::with_capacity(l);
    let mut scratch = Vec::with_capacity(l);
    let mut outcome = PdhgOutcome::default();

    for it in 0..ctl.iters {
        for j in 0..l {
            grad_strided(grid, &v_bar, l, j, &mut d1, &mut d2);
            let (w1, w2) = w[2 * j * n..(2 * j + 2) * n].split_at_mut(n);
            for i in 0..n {
                w1[i] += sigma * d1[i];
                w2[i] += sigma * d2[i];
            }
        }
        project_class_ball(w, n, l, problem.beta, &mut parts);
        for j in 0..l {
            let (w1, w2) = w[2 * j * n..(2 * j + 2) * n].split_at(n);
            div_strided(grid, w1, w2, &mut div, l, j);
        }
        for k in 0..n * l {
            v_new[k] = shrink * (v[k] + tau * (div[k] - problem.lin[k] + problem.eps * problem.anchor[k]));
        }
        for row in v_new.chunks_exact_mut(l) {
            project_simplex_in_place(row, &mut scratch);
        }
        let mut change = 0.0;
        for k in 0..n * l {
            let d = v_new[k] - v[k];
            change += d * d;
            v_bar[k] = 2.0 * v_new[k] - v[k];
        }
        std::mem::swap(v, &mut v_new);
        outcome.iterations = it + 1;
        if !change.is_finite() {
            return Err(Error::Diverged {
                stage: "v-subproblem",
                iteration: it,
            });
        }
        if ctl.trace_every > 0 {
            let wgt = 1.0 / (it + 1) as f64;
            for k in 0..n * l {
                avg[k] += (v[k] - avg[k]) * wgt;
            }
            if (it + 1) % ctl.trace_every == 0 {
                outcome.trace.push((it + 1, problem.objective(&avg)));
            }
        }
        if ctl.tol > 0.0 && change.sqrt() <= ctl.tol * dot(v, v).sqrt() {
            break;
        }
    }
    Ok(outcome)
}

fn check_weights(beta: f64, delta: f64) -> Result<()> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::InvalidArgument(format!("beta must be positive, got {beta}")));
    }
    if !(delta >= 0.0 && delta.is_finite()) {
        return Err(Error::InvalidArgument(format!("delta must be nonnegative, got {delta}")));
    }
    Ok(())
}

/// One segmentation solve from the uniform initialisation. `q = None` is the
/// plain model.
pub fn segment(
    u: &RealImage,
    c: &RegionMeans,
    beta: f64,
    delta: f64,
    q: Option<&ClassField>,
    cfg: &JointConfig,
) -> Result<Segmentation> {
    let v0 = LabelRelaxation::uniform(u.grid(), c.classes());
    let (seg, _) = segment_from(u, c, beta, delta, q, &v0, cfg, 0)?;
    Ok(seg)
}

/// As [`segment`] from an arbitrary initial `v0`, also returning the
/// objective of the running ergodic average every `trace_every` steps.
#[allow(clippy::too_many_arguments)]
pub fn segment_from(
    u: &RealImage,
    c: &RegionMeans,
    beta: f64,
    delta: f64,
    q: Option<&ClassField>,
    v0: &LabelRelaxation,
    cfg: &JointConfig,
    trace_every: usize,
) -> Result<(Segmentation, Vec<(usize, f64)>)> {
    cfg.ensure_valid()?;
    c.ensure_valid()?;
    check_weights(beta, delta)?;
    check_shapes(u, c, v0)?;
    let grid = u.grid();
    let l = c.classes();
    let q = match q {
        Some(q) => {
            grid.ensure_same(&q.grid())?;
            if q.classes() != l {
                return Err(Error::Shape {
                    expected: l,
                    actual: q.classes(),
                });
            }
            q.clone()
        }
        None => ClassField::zeros(grid, l),
    };
    let g = fidelity_field(u, c);
    let lin: Vec<f64> = g
        .values()
        .iter()
        .zip(q.values())
        .map(|(g, q)| delta * g - beta * q)
        .collect();
    let anchor = v0.values().to_vec();
    let problem = VProblem {
        grid,
        classes: l,
        lin: &lin,
        beta,
        eps: 0.0,
        anchor: &anchor,
    };
    let mut v = anchor.clone();
    let mut w = vec![0.0; 2 * l * grid.n()];
    let mut ctl = InnerControl::from_config(cfg);
    ctl.trace_every = trace_every;
    let outcome = solve_v(&problem, &mut v, &mut w, ctl)?;

    let mut report = SolveReport::new(1);
    report.iterations.push(IterRecord {
        k: 0,
        coupling: Some(dot(g.values(), &v)),
        tv_v: Some(tv_vec_slice(grid, l, &v)),
        step_v: Some(dist(&v, &anchor)),
        inner_v: Some(outcome.iterations),
        ..IterRecord::default()
    });
    let seg = Segmentation {
        v: LabelRelaxation::new(grid, l, v)?,
        q,
        report,
    };
    Ok((seg, outcome.trace))
}

/// Bregman-iterated segmentation of a fixed image:
/// `q^{k+1} = q^k - (delta / beta) g`, stopped when
/// `||v^{k+1} - v^k|| < tol_v` or after `max_outer` steps.
pub fn bregman_segment(
    u: &RealImage,
    c: &RegionMeans,
    beta: f64,
    delta: f64,
    cfg: &JointConfig,
) -> Result<Segmentation> {
    cfg.ensure_valid()?;
    c.ensure_valid()?;
    check_weights(beta, delta)?;
    let grid = u.grid();
    let l = c.classes();
    let n = grid.n();
    let g = fidelity_field(u, c);
    let tol_v = cfg.resolved_tol_v(grid, l);
    let ctl = InnerControl::from_config(cfg);

    let mut v = LabelRelaxation::uniform(grid, l).values().to_vec();
    let mut q = vec![0.0; n * l];
    let mut w = vec![0.0; 2 * l * n];
    let mut report = SolveReport::new(cfg.max_outer);
    for k in 0..cfg.max_outer {
        let v_prev = v.clone();
        let lin: Vec<f64> = g
            .values()
            .iter()
            .zip(&q)
            .map(|(g, q)| delta * g - beta * q)
            .collect();
        let problem = VProblem {
            grid,
            classes: l,
            lin: &lin,
            beta,
            eps: 0.0,
            anchor: &v_prev,
        };
        let outcome = solve_v(&problem, &mut v, &mut w, ctl)?;
        let tv_prev = tv_vec_slice(grid, l, &v_prev);
        let tv_v = tv_vec_slice(grid, l, &v);
        let dv: Vec<f64> = v.iter().zip(&v_prev).map(|(a, b)| a - b).collect();
        let bregman_v = tv_v - tv_prev - dot(&q, &dv);
        for (qk, gk) in q.iter_mut().zip(g.values()) {
            *qk -= delta / beta * gk;
        }
        let step_v = dot(&dv, &dv).sqrt();
        report.iterations.push(IterRecord {
            k,
            coupling: Some(dot(g.values(), &v)),
            tv_v: Some(tv_v),
            bregman_v: Some(bregman_v),
            step_v: Some(step_v),
            inner_v: Some(outcome.iterations),
            ..IterRecord::default()
        });
        if step_v < tol_v {
            report.stop_reason = StopReason::Tolerance;
            break;
        }
    }
    Ok(Segmentation {
        v: LabelRelaxation::new(grid, l, v)?,
        q: ClassField::new(grid, l, q)?,
        report,
    })
}
