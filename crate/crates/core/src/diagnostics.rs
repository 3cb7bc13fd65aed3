//! Runtime checks of the convergence quantities of the joint scheme:
//! the energy, Bregman distances, surrogate decrease and subgradient bound.

use crate::error::{Error, Result};
use crate::operators::{tv_slice, tv_vec_slice, ForwardOperator};
use crate::recon::coupling_energy;
use crate::types::{dot, ClassField, IterRecord, KSpaceData, LabelRelaxation, RealImage, RegionMeans, SolveReport};

/// Slack allowed on surrogate increases.
pub const DECREASE_SLACK: f64 = 1e-6;

fn check_pair(u: &RealImage, v: &LabelRelaxation, data: &KSpaceData, c: &RegionMeans) -> Result<ForwardOperator> {
    u.grid().ensure_same(&data.grid())?;
    u.grid().ensure_same(&v.grid())?;
    if v.classes() != c.classes() {
        return Err(Error::Shape {
            expected: c.classes(),
            actual: v.classes(),
        });
    }
    ForwardOperator::for_data(data)
}

/// `E(u, v) = 1/2 ||Au - f||^2 + delta sum_ij v_ij (c_j - u_i)^2`.
pub fn energy_e(
    u: &RealImage,
    v: &LabelRelaxation,
    data: &KSpaceData,
    c: &RegionMeans,
    delta: f64,
) -> Result<f64> {
    let op = check_pair(u, v, data, c)?;
    let r = op.residual_norm(u.values(), data.samples());
    Ok(0.5 * r * r + delta * coupling_energy(v, c.values(), u.values()))
}

/// `grad_u E = A*(Au - f) + 2 delta sum_j v_j (u - c_j)`.
pub fn energy_grad_u(
    u: &RealImage,
    v: &LabelRelaxation,
    data: &KSpaceData,
    c: &RegionMeans,
    delta: f64,
) -> Result<RealImage> {
    let op = check_pair(u, v, data, c)?;
    let res: Vec<_> = op
        .forward_slice(u.values())
        .iter()
        .zip(data.samples())
        .map(|(a, b)| a - b)
        .collect();
    let mut out = vec![0.0; u.values().len()];
    op.adjoint_into(&res, &mut out);
    for (i, o) in out.iter_mut().enumerate() {
        let x = u.values()[i];
        let couple: f64 = v.row(i).iter().zip(c.values()).map(|(vj, cj)| vj * (x - cj)).sum();
        *o += 2.0 * delta * couple;
    }
    RealImage::new(u.grid(), out)
}

/// `grad_v E = delta g`.
pub fn energy_grad_v(u: &RealImage, c: &RegionMeans, delta: f64) -> ClassField {
    let mut g = crate::segment::fidelity_field(u, c);
    g.values_mut().iter_mut().for_each(|x| *x *= delta);
    g
}

/// `D^{p_ref}(u, u_ref) = TV(u) - TV(u_ref) - <p_ref, u - u_ref>`.
pub fn bregman_tv(u: &RealImage, u_ref: &RealImage, p_ref: &RealImage) -> Result<f64> {
    u.grid().ensure_same(&u_ref.grid())?;
    u.grid().ensure_same(&p_ref.grid())?;
    let d: Vec<f64> = u.values().iter().zip(u_ref.values()).map(|(a, b)| a - b).collect();
    Ok(tv_slice(u.grid(), u.values()) - tv_slice(u.grid(), u_ref.values()) - dot(p_ref.values(), &d))
}

/// Vector-TV Bregman distance for label fields.
pub fn bregman_tv_vec(v: &LabelRelaxation, v_ref: &LabelRelaxation, q_ref: &ClassField) -> Result<f64> {
    v.grid().ensure_same(&v_ref.grid())?;
    v.grid().ensure_same(&q_ref.grid())?;
    let l = v.classes();
    if v_ref.classes() != l || q_ref.classes() != l {
        return Err(Error::Shape {
            expected: l,
            actual: v_ref.classes().min(q_ref.classes()),
        });
    }
    let d: Vec<f64> = v.values().iter().zip(v_ref.values()).map(|(a, b)| a - b).collect();
    let grid = v.grid();
    Ok(tv_vec_slice(grid, l, v.values()) - tv_vec_slice(grid, l, v_ref.values()) - dot(q_ref.values(), &d))
}

/// Surrogate bookkeeping for one outer step, extracted from a report.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurrogateRecord {
    pub k: usize,
    pub energy: f64,
    pub bregman_u: f64,
    pub bregman_v: f64,
    pub surrogate: f64,
    pub step_norm: f64,
    pub w_norm: f64,
    pub ratio: Option<f64>,
}

impl SurrogateRecord {
    fn from_record(rec: &IterRecord) -> Option<Self> {
        Some(SurrogateRecord {
            k: rec.k,
            energy: rec.energy?,
            bregman_u: rec.bregman_u.unwrap_or(0.0),
            bregman_v: rec.bregman_v.unwrap_or(0.0),
            surrogate: rec.surrogate?,
            step_norm: rec.step_norm().unwrap_or(0.0),
            w_norm: rec.w_norm.unwrap_or(f64::NAN),
            ratio: rec.subgrad_ratio,
        })
    }
}

pub fn surrogate_records(report: &SolveReport) -> Vec<SurrogateRecord> {
    report.iterations.iter().filter_map(SurrogateRecord::from_record).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecreaseCheck {
    pub passed: bool,
    /// Largest `F_k - F_{k-1}`; `-inf` for fewer than two records.
    pub worst_margin: f64,
    /// `(F_{k-1} - F_k) / ||z^{k+1} - z^k||^2` for steps with a nonzero move.
    pub rho2_estimates: Vec<f64>,
}

/// Passes iff consecutive surrogate values never rise by more than
/// [`DECREASE_SLACK`].
pub fn check_sufficient_decrease(report: &SolveReport) -> DecreaseCheck {
    let recs = surrogate_records(report);
    let mut worst = f64::NEG_INFINITY;
    let mut rho2 = Vec::new();
    for pair in recs.windows(2) {
        let margin = pair[1].surrogate - pair[0].surrogate;
        worst = worst.max(margin);
        let step = pair[1].step_norm;
        if step > 0.0 {
            rho2.push(-margin / (step * step));
        }
    }
    DecreaseCheck {
        passed: !(worst > DECREASE_SLACK) && recs.iter().all(|r| r.surrogate.is_finite()),
        worst_margin: worst,
        rho2_estimates: rho2,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubgradientCheck {
    /// `(k, ||w^{k+1}|| / ||z^{k+1} - z^k||)`; zero steps are skipped.
    pub ratios: Vec<(usize, f64)>,
    pub max_ratio: Option<f64>,
    pub all_finite: bool,
}

pub fn check_subgradient_bound(report: &SolveReport) -> SubgradientCheck {
    let ratios: Vec<(usize, f64)> = report
        .iterations
        .iter()
        .filter_map(|r| r.subgrad_ratio.map(|x| (r.k, x)))
        .collect();
    let all_finite = ratios.iter().all(|(_, x)| x.is_finite());
    let max_ratio = ratios.iter().map(|&(_, x)| x).reduce(f64::max);
    SubgradientCheck {
        ratios,
        max_ratio,
        all_finite,
    }
}
