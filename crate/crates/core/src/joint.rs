//! Joint reconstruction and segmentation by alternating Bregman iterations.
//!
//! Each outer step solves, in order,
//!
//! ```text
//! u^{k+1} = argmin_u 1/2 ||Au - f||^2 + delta sum v^k_ij (c_j - u_i)^2 + alpha D_TV^{p^k}(u, u^k)
//! p^{k+1} = p^k - (1/alpha) [A*(Au^{k+1} - f) + 2 delta sum_j v^k_j (u^{k+1} - c_j)]
//! v^{k+1} = argmin_{v in C} delta <g(u^{k+1}), v> + beta D_TV^{q^k}(v, v^k)
//! q^{k+1} = q^k - (delta / beta) g(u^{k+1})
//! ```
//!
//! plus `eps/2 ||. - .^k||^2` on both blocks when `epsilon_aug > 0`, whose
//! gradients then also enter the subgradient updates.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::operators::{tv_slice, tv_vec_slice, ForwardOperator};
use crate::recon::{check_data, coupling_energy, solve_u, subgradient_step, InnerControl, UProblem};
use crate::segment::{fidelity_field, solve_v, VProblem};
use crate::types::{
    dist, dot, norm, ClassField, IterRecord, JointConfig, KSpaceData, LabelRelaxation, RealImage,
    RegionMeans, SolveReport, StopReason,
};

/// Output of [`joint_solve`].
#[derive(Debug, Clone)]
pub struct JointResult {
    pub u: RealImage,
    pub v: LabelRelaxation,
    pub p: RealImage,
    pub q: ClassField,
    /// Final class means (unchanged unless `update_means` is set).
    pub means: RegionMeans,
    pub report: SolveReport,
}

/// Re-estimated class means.
#[derive(Debug, Clone, PartialEq)]
pub struct MeansUpdate {
    pub values: Vec<f64>,
    /// Classes with no label mass; their previous mean is kept.
    pub empty_classes: Vec<usize>,
}

/// `c_j = sum_i v_ij u_i / sum_i v_ij`; empty classes keep `previous`.
pub fn update_region_means(
    u: &RealImage,
    v: &LabelRelaxation,
    previous: &RegionMeans,
) -> Result<MeansUpdate> {
    u.grid().ensure_same(&v.grid())?;
    let l = v.classes();
    if previous.classes() != l {
        return Err(Error::Shape {
            expected: l,
            actual: previous.classes(),
        });
    }
    let mut mass = vec![0.0; l];
    let mut weighted = vec![0.0; l];
    for (row, &x) in v.values().chunks_exact(l).zip(u.values()) {
        for j in 0..l {
            mass[j] += row[j];
            weighted[j] += row[j] * x;
        }
    }
    let mut empty_classes = Vec::new();
    let values = (0..l)
        .map(|j| {
            if mass[j] > 0.0 {
                weighted[j] / mass[j]
            } else {
                empty_classes.push(j);
                previous.values()[j]
            }
        })
        .collect();
    Ok(MeansUpdate {
        values,
        empty_classes,
    })
}

fn check_means(data: &KSpaceData, c: &RegionMeans, v: Option<&LabelRelaxation>) -> Result<()> {
    if let Some(v) = v {
        data.grid().ensure_same(&v.grid())?;
        if v.classes() != c.classes() {
            return Err(Error::Shape {
                expected: c.classes(),
                actual: v.classes(),
            });
        }
    }
    Ok(())
}

/// The u-subgradient update from the optimality condition of the u-step:
/// `p^{k+1} = p^k - (1/alpha) [A*(Au - f) + 2 delta sum_j v_j (u - c_j) + eps (u - u^k)]`.
pub fn subgradient_update_u(
    data: &KSpaceData,
    p: &RealImage,
    u_new: &RealImage,
    u_prev: &RealImage,
    v_prev: &LabelRelaxation,
    c: &RegionMeans,
    cfg: &JointConfig,
) -> Result<RealImage> {
    let op = check_data(data, cfg, cfg.alpha)?;
    check_means(data, c, Some(v_prev))?;
    for img in [p, u_new, u_prev] {
        data.grid().ensure_same(&img.grid())?;
    }
    let mass = vec![1.0; data.grid().n()];
    let target = v_prev.weighted_means(c);
    let mut out = p.values().to_vec();
    subgradient_step(
        &op,
        data.samples(),
        &mut out,
        u_new.values(),
        u_prev.values(),
        cfg.alpha,
        cfg.delta,
        Some((&mass, &target)),
        cfg.epsilon_aug,
    );
    RealImage::new(data.grid(), out)
}

/// Alternating Bregman scheme from `u = 0, p = 0, v = 1/l, q = 0`.
/// Stops when `||v^{k+1} - v^k|| < tol_v` or after `max_outer` steps.
pub fn joint_solve(data: &KSpaceData, c: &RegionMeans, cfg: &JointConfig) -> Result<JointResult> {
    let op = check_data(data, cfg, cfg.alpha)?;
    c.ensure_valid()?;
    let grid = data.grid();
    let (n, l) = (grid.n(), c.classes());
    let (alpha, beta, delta, eps) = (cfg.alpha, cfg.beta, cfg.delta, cfg.epsilon_aug);
    let f = data.samples();
    let ctl = InnerControl::from_config(cfg);
    let tol_v = cfg.resolved_tol_v(grid, l);

    let mut atf = vec![0.0; n];
    op.adjoint_into(f, &mut atf);
    let ones = vec![1.0; n];
    let mut means = c.clone();
    let mut u = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut y = vec![0.0; 2 * n];
    let mut v = LabelRelaxation::uniform(grid, l);
    let mut q = vec![0.0; n * l];
    let mut w = vec![0.0; 2 * l * n];
    let mut report = SolveReport::new(cfg.max_outer);
    let mut prev_surrogate: Option<f64> = None;

    for k in 0..cfg.max_outer {
        let u_prev = u.clone();
        let v_prev = v.clone();
        let p_prev = p.clone();
        let q_prev = q.clone();
        let cv = means.values().to_vec();

        // u-step
        let target = v_prev.weighted_means(&means);
        let problem = UProblem {
            op: &op,
            f,
            atf: &atf,
            alpha,
            p: &p_prev,
            delta,
            target: &target,
            eps,
            anchor: &u_prev,
        };
        let out_u = solve_u(&problem, &mut u, &mut y, ctl, None)?;
        subgradient_step(&op, f, &mut p, &u, &u_prev, alpha, delta, Some((&ones, &target)), eps);

        // v-step
        let u_img = RealImage::new(grid, u.clone())?;
        let g = fidelity_field(&u_img, &means);
        let lin: Vec<f64> = g
            .values()
            .iter()
            .zip(&q_prev)
            .map(|(g, q)| delta * g - beta * q)
            .collect();
        let vp = VProblem {
            grid,
            classes: l,
            lin: &lin,
            beta,
            eps,
            anchor: v_prev.values(),
        };
        let mut v_vals = v_prev.values().to_vec();
        let out_v = solve_v(&vp, &mut v_vals, &mut w, ctl)?;
        for ((qk, gk), (vn, vo)) in q
            .iter_mut()
            .zip(g.values())
            .zip(v_vals.iter().zip(v_prev.values()))
        {
            *qk -= (delta * gk + eps * (vn - vo)) / beta;
        }
        v = LabelRelaxation::new(grid, l, v_vals)?;

        let rec = outer_record(
            &op, f, k, &OuterState {
                u: &u, u_prev: &u_prev, p: &p, p_prev: &p_prev,
                v: &v, v_prev: &v_prev, q: &q, q_prev: &q_prev,
            },
            &cv, &g, cfg,
        );
        let rec = IterRecord {
            inner_u: Some(out_u.iterations),
            inner_v: Some(out_v.iterations),
            ..rec
        };
        if let (Some(prev), Some(cur)) = (prev_surrogate, rec.surrogate) {
            if cur > prev + 1e-6 {
                report.flags.push(format!("surrogate increased at iteration {k}: {prev} -> {cur}"));
            }
        }
        prev_surrogate = rec.surrogate;
        let step_v = rec.step_v.unwrap_or(0.0);
        report.iterations.push(rec);

        if cfg.update_means {
            let update = update_region_means(&u_img, &v, &means)?;
            for j in &update.empty_classes {
                report.flags.push(format!("class {j} is empty at iteration {k}; mean kept"));
            }
            match RegionMeans::new(update.values).and_then(|m| m.ensure_valid().map(|_| m)) {
                Ok(m) => means = m,
                Err(_) => report
                    .flags
                    .push(format!("class means coincide at iteration {k}; means kept")),
            }
        }
        if step_v < tol_v {
            report.stop_reason = StopReason::Tolerance;
            break;
        }
    }
    Ok(JointResult {
        u: RealImage::new(grid, u)?,
        v,
        p: RealImage::new(grid, p)?,
        q: ClassField::new(grid, l, q)?,
        means,
        report,
    })
}

struct OuterState<'a> {
    u: &'a [f64],
    u_prev: &'a [f64],
    p: &'a [f64],
    p_prev: &'a [f64],
    v: &'a LabelRelaxation,
    v_prev: &'a LabelRelaxation,
    q: &'a [f64],
    q_prev: &'a [f64],
}

/// Energies, Bregman distances, the surrogate and its subgradient for one
/// outer step. `c` are the means used in that step.
fn outer_record(
    op: &ForwardOperator,
    f: &[Complex64],
    k: usize,
    s: &OuterState<'_>,
    c: &[f64],
    g: &ClassField,
    cfg: &JointConfig,
) -> IterRecord {
    let grid = op.grid();
    let (n, l) = (grid.n(), s.v.classes());
    let (alpha, beta, delta, eps) = (cfg.alpha, cfg.beta, cfg.delta, cfg.epsilon_aug);

    let du: Vec<f64> = s.u.iter().zip(s.u_prev).map(|(a, b)| a - b).collect();
    let dv: Vec<f64> = s.v.values().iter().zip(s.v_prev.values()).map(|(a, b)| a - b).collect();
    let step_u = norm(&du);
    let step_v = norm(&dv);

    let residual: Vec<Complex64> = op.forward_slice(s.u).iter().zip(f).map(|(a, b)| a - b).collect();
    let r = residual.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let coupling = coupling_energy(s.v, c, s.u);
    let energy = 0.5 * r * r + delta * coupling;

    let tv_u = tv_slice(grid, s.u);
    let tv_v = tv_vec_slice(grid, l, s.v.values());
    let bregman_u = tv_u - tv_slice(grid, s.u_prev) - dot(s.p_prev, &du);
    let bregman_v = tv_v - tv_vec_slice(grid, l, s.v_prev.values()) - dot(s.q_prev, &dv);
    // Bregman distances of TV + eps/2 ||.||^2 (per unit weight)
    let surrogate = energy
        + alpha * bregman_u
        + beta * bregman_v
        + 0.5 * eps * (step_u * step_u + step_v * step_v);

    // w = (grad_u E + alpha dp, grad_v E + beta dq, -du, -dv)
    let mut atr = vec![0.0; n];
    op.adjoint_into(&residual, &mut atr);
    let mut w_u_sq = 0.0;
    for i in 0..n {
        let row = s.v.row(i);
        let couple: f64 = row.iter().zip(c).map(|(vj, cj)| vj * (s.u[i] - cj)).sum();
        let wi = atr[i] + 2.0 * delta * couple + alpha * (s.p[i] - s.p_prev[i]);
        w_u_sq += wi * wi;
    }
    let mut w_v_sq = 0.0;
    for k in 0..n * l {
        let wk = delta * g.values()[k] + beta * (s.q[k] - s.q_prev[k]);
        w_v_sq += wk * wk;
    }
    let step_sq = step_u * step_u + step_v * step_v;
    let w_norm = (w_u_sq + w_v_sq + step_sq).sqrt();
    IterRecord {
        k,
        data_residual: r,
        coupling: Some(coupling),
        tv_u: Some(tv_u),
        tv_v: Some(tv_v),
        energy: Some(energy),
        bregman_u: Some(bregman_u),
        bregman_v: Some(bregman_v),
        surrogate: Some(surrogate),
        step_u: Some(step_u),
        step_v: Some(step_v),
        w_norm: Some(w_norm),
        w_u_norm: Some(w_u_sq.sqrt()),
        subgrad_ratio: (step_sq > 0.0).then(|| w_norm / step_sq.sqrt()),
        inner_u: None,
        inner_v: None,
    }
}

/// Projection onto the real images whose spectrum matches the data on the
/// (conjugate-symmetrised) sampled bins.
///
/// For inconsistent data (noise on a bin and its mirror) the matched values
/// are the least-squares ones, `F(A* f) / ((M(k) + M(-k)) / 2)`.
#[derive(Debug, Clone)]
pub struct DataProjector {
    op: ForwardOperator,
    support: Vec<bool>,
    target: Vec<Complex64>,
}

impl DataProjector {
    pub fn new(data: &KSpaceData) -> Result<Self> {
        let op = ForwardOperator::for_data(data)?;
        let uz = op.zero_fill(data)?;
        let spec = op.fft().forward_real(uz.values());
        let symbol = op.normal_symbol();
        let support: Vec<bool> = symbol.iter().map(|&s| s > 0.0).collect();
        let target = spec
            .iter()
            .zip(symbol)
            .map(|(z, &s)| if s > 0.0 { z / s } else { Complex64::new(0.0, 0.0) })
            .collect();
        Ok(DataProjector {
            op,
            support,
            target,
        })
    }

    /// Spectrum values the projection enforces; zero off the support.
    pub fn target(&self) -> &[Complex64] {
        &self.target
    }

    pub fn support(&self) -> &[bool] {
        &self.support
    }

    pub fn project(&self, x: &[f64], out: &mut [f64]) {
        let fft = self.op.fft();
        let mut buf = fft.forward_real(x);
        for ((z, &inside), t) in buf.iter_mut().zip(&self.support).zip(&self.target) {
            if inside {
                *z = *t;
            }
        }
        fft.process(&mut buf, true);
        for (o, z) in out.iter_mut().zip(&buf) {
            *o = z.re;
        }
    }
}

/// Output of [`constrained_joint_solve`].
#[derive(Debug, Clone)]
pub struct ConstrainedResult {
    pub u: RealImage,
    pub v: LabelRelaxation,
    pub report: SolveReport,
}

/// Joint model with the data term replaced by the hard constraint that `u`
/// reproduces the measured coefficients.
///
/// The u-step is the proximal step
/// `u^{k+1} = P((u^k + 2 delta t) / (1 + 2 delta))` with `t_i = sum_j v_ij c_j`
/// and `P` the [`DataProjector`]; the v-step is the plain segmentation model
/// warm-started from `v^k`. Starting from `u^0 = P(0)`, `delta = 0` returns
/// the least-squares zero-fill.
pub fn constrained_joint_solve(
    data: &KSpaceData,
    c: &RegionMeans,
    beta: f64,
    delta: f64,
    cfg: &JointConfig,
) -> Result<ConstrainedResult> {
    cfg.ensure_valid()?;
    c.ensure_valid()?;
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::InvalidArgument(format!("beta must be positive, got {beta}")));
    }
    if !(delta >= 0.0 && delta.is_finite()) {
        return Err(Error::InvalidArgument(format!("delta must be nonnegative, got {delta}")));
    }
    let projector = DataProjector::new(data)?;
    let grid = data.grid();
    let (n, l) = (grid.n(), c.classes());
    let ctl = InnerControl::from_config(cfg);
    let tol_v = cfg.resolved_tol_v(grid, l);

    let mut u = vec![0.0; n];
    let zeros = u.clone();
    projector.project(&zeros, &mut u);
    let mut v = LabelRelaxation::uniform(grid, l);
    let mut w = vec![0.0; 2 * l * n];
    let mut report = SolveReport::new(cfg.max_outer);
    let mut rhs = vec![0.0; n];
    for k in 0..cfg.max_outer {
        let u_prev = u.clone();
        let target = v.weighted_means(c);
        for i in 0..n {
            rhs[i] = (u_prev[i] + 2.0 * delta * target[i]) / (1.0 + 2.0 * delta);
        }
        projector.project(&rhs, &mut u);

        let u_img = RealImage::new(grid, u.clone())?;
        let g = fidelity_field(&u_img, c);
        let lin: Vec<f64> = g.values().iter().map(|g| delta * g).collect();
        let v_prev = v.values().to_vec();
        let vp = VProblem {
            grid,
            classes: l,
            lin: &lin,
            beta,
            eps: 0.0,
            anchor: &v_prev,
        };
        let mut v_vals = v_prev.clone();
        let out_v = solve_v(&vp, &mut v_vals, &mut w, ctl)?;
        v = LabelRelaxation::new(grid, l, v_vals)?;
        let step_v = dist(v.values(), &v_prev);
        report.iterations.push(IterRecord {
            k,
            data_residual: projector.op.residual_norm(&u, data.samples()),
            coupling: Some(coupling_energy(&v, c.values(), &u)),
            tv_u: Some(tv_slice(grid, &u)),
            tv_v: Some(tv_vec_slice(grid, l, v.values())),
            step_u: Some(dist(&u, &u_prev)),
            step_v: Some(step_v),
            inner_v: Some(out_v.iterations),
            ..IterRecord::default()
        });
        if step_v < tol_v {
            report.stop_reason = StopReason::Tolerance;
            break;
        }
    }
    Ok(ConstrainedResult {
        u: RealImage::new(grid, u)?,
        v,
        report,
    })
}
