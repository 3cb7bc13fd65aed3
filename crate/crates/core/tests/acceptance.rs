//! Acceptance checks. Prints one line per criterion and exits nonzero if any
//! fails. Run with `cargo test --release --test acceptance`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use recseg::config::ExperimentConfig;
use recseg::diagnostics::{check_subgradient_bound, check_sufficient_decrease};
use recseg::experiment::{phantoms, run_experiment, run_single, RunParams};
use recseg::operators::{dft, divergence, gradient, project_simplex, zero_fill, ForwardOperator};
use recseg::simulate::{make_mask, make_phantom, simulate_kspace, MaskKind, MaskSpec, PhantomSpec};
use recseg::*;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn random_image(g: Grid, rng: &mut ChaCha8Rng) -> RealImage {
    RealImage::from_fn(g, |_, _| rng.random_range(-1.0..1.0))
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

fn operators() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst_a, mut worst_grad, mut worst_norm) = (0.0f64, 0.0f64, 0.0f64);
    for side in [4, 8, 16] {
        let g = Grid::new(side, side).unwrap();
        for i in 0..100 {
            let rate = rng.random_range(0.2..1.0);
            let mask = make_mask(&MaskSpec::new(MaskKind::UniformRandom, rate, i), g).unwrap();
            let op = ForwardOperator::new(mask).unwrap();
            let u = random_image(g, &mut rng);
            let z: Vec<Complex64> = (0..op.mask().m())
                .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                .collect();
            let lhs: f64 = op.forward(&u).unwrap().iter().zip(&z).map(|(a, b)| (a * b.conj()).re).sum();
            let rhs = u.dot(&op.adjoint(&z).unwrap());
            worst_a = worst_a.max(rel(lhs, rhs));

            let y = recseg::DualField::new(g, 2, (0..2 * g.n()).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
            let lhs: f64 = gradient(&u).values().iter().zip(y.values()).map(|(a, b)| a * b).sum();
            let rhs = -u.dot(&divergence(&y).unwrap());
            worst_grad = worst_grad.max(rel(lhs, rhs));
        }
        for mask in [
            SamplingMask::full(g),
            make_mask(&MaskSpec::new(MaskKind::VariableDensity, 0.3, 2), g).unwrap(),
        ] {
            worst_norm = worst_norm.max(ForwardOperator::new(mask).unwrap().norm_estimate(200, 3));
        }
    }
    outcome(
        worst_a <= 1e-10 && worst_grad <= 1e-10 && worst_norm <= 1.0 + 1e-6,
        format!("adjoint rel {worst_a:.1e}, grad/div rel {worst_grad:.1e}, |A| {worst_norm:.9}"),
    )
}

/// Best feasible point over every support set of the simplex projection.
fn simplex_oracle(y: &[f64]) -> Vec<f64> {
    let n = y.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for set in 1u32..(1 << n) {
        let idx: Vec<usize> = (0..n).filter(|i| set & (1 << i) != 0).collect();
        let shift = (idx.iter().map(|&i| y[i]).sum::<f64>() - 1.0) / idx.len() as f64;
        let mut x = vec![0.0; n];
        for &i in &idx {
            x[i] = y[i] - shift;
        }
        if x.iter().any(|&v| v < -1e-15) {
            continue;
        }
        let d: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
        if best.as_ref().is_none_or(|(bd, _)| d < *bd) {
            best = Some((d, x));
        }
    }
    best.expect("the vertex sets are always feasible").1
}

fn simplex() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let scale = rng.random_range(0.1..10.0);
        let y: Vec<f64> = (0..5).map(|_| scale * rng.random_range(-1.0..1.0)).collect();
        let got = project_simplex(&y).unwrap();
        let want = simplex_oracle(&y);
        worst = got.iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(worst, f64::max);
    }
    outcome(worst <= 1e-9, format!("max deviation {worst:.1e}"))
}

fn segmentation_exact() -> Outcome {
    let g = Grid::new(64, 64).unwrap();
    let p = make_phantom(&PhantomSpec::two_region(g, 0.25)).unwrap();
    let s = segment(&p.image, &p.means, 0.01, 1.0, None, &JointConfig::default()).unwrap();
    let e = rse(&threshold(&s.v, 0.5).unwrap(), &p.labels).unwrap();
    outcome(e == 0.0, format!("rse {e}"))
}

fn discrepancy_stop() -> Outcome {
    let g = Grid::new(64, 64).unwrap();
    let p = make_phantom(&PhantomSpec::two_region(g, 0.25)).unwrap();
    let mask = make_mask(&MaskSpec::new(MaskKind::UniformRandom, 0.3, 1), g).unwrap();
    let data = simulate_kspace(&p.image, &mask, 0.25, 1).unwrap();
    let cfg = JointConfig {
        max_outer: 50,
        ..JointConfig::default()
    };
    let r = bregman_tv_reconstruct(&data, 1.0, &cfg).unwrap();
    let level = data.discrepancy_level();
    let res: Vec<f64> = r.report.iterations.iter().map(|x| x.data_residual).collect();
    let k = res.len();
    let first = k >= 2 && res[k - 1] <= level && res[k - 2] > level && res[..k - 1].iter().all(|&x| x > level);
    let monotone = res.windows(2).all(|w| w[1] <= w[0] + 1e-8);
    outcome(
        r.report.stop_reason == StopReason::Discrepancy && first && monotone,
        format!(
            "stop {} at K={k}, residual {:.4} <= {level:.4} < {:.4}",
            r.report.stop_reason,
            res[k - 1],
            if k >= 2 { res[k - 2] } else { f64::NAN }
        ),
    )
}

fn contrast() -> Outcome {
    let g = Grid::new(64, 64).unwrap();
    let p = make_phantom(&PhantomSpec::two_region(g, 0.25)).unwrap();
    let data = simulate_kspace(&p.image, &SamplingMask::full(g), 0.1, 0).unwrap();
    let inside = |u: &RealImage| {
        let (mut s, mut c) = (0.0, 0.0);
        for (x, &l) in u.values().iter().zip(p.labels.labels()) {
            if l == 1 {
                s += x;
                c += 1.0;
            }
        }
        s / c
    };
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for alpha in [0.02, 0.05, 0.1, 0.2, 0.3, 0.5] {
        let r = tv_reconstruct(&data, alpha, &JointConfig::default()).unwrap();
        let e = rre(&r.u, &p.image).unwrap();
        if e < best.0 {
            best = (e, alpha, inside(&r.u));
        }
    }
    let cfg = JointConfig {
        max_outer: 30,
        ..JointConfig::default()
    };
    let b = bregman_tv_reconstruct(&data, 2.0, &cfg).unwrap();
    let (tv_bias, breg_bias) = ((best.2 - 1.0).abs(), (inside(&b.u) - 1.0).abs());
    outcome(
        breg_bias < tv_bias,
        format!(
            "in-disk bias bregman {breg_bias:.4} (stop {} K={}) vs tv {tv_bias:.4} (alpha {})",
            b.report.stop_reason,
            b.report.outer_iters(),
            best.1
        ),
    )
}

fn bubble_config(method: &str, side: usize, mask: &str, inner_iters: usize) -> ExperimentConfig {
    ExperimentConfig::parse(&format!(
        "method = {method}
seed = 7
units = unnormalized
segment.delta = 0.1
phantom.kind = bubbles
phantom.n1 = {side}
phantom.n2 = {side}
phantom.count = 12
phantom.seed = 7
mask.kind = {mask}
mask.rate = 0.15
mask.seed = 7
solver.beta = 0.05
solver.inner_iters = {inner_iters}
"
    ))
    .unwrap()
}

/// Lowest RRE and lowest RSE over the given parameter sets.
fn best_case(cfg: &ExperimentConfig, params: &[RunParams]) -> (f64, f64) {
    let (truth, solver_truth) = phantoms(cfg).unwrap();
    params.iter().fold((f64::INFINITY, f64::INFINITY), |(a, b), &p| {
        let row = run_single(cfg, p, &truth, &solver_truth).unwrap().row;
        (a.min(row.rre), b.min(row.rse))
    })
}

fn joint_vs_sequential() -> Outcome {
    let tv = bubble_config("tv_seq", 64, "uniform_random", 10000);
    let joint = bubble_config("joint", 64, "uniform_random", 300);
    let base = RunParams {
        alpha: 1.0,
        beta: 0.05,
        delta: 0.1,
        rate: 0.15,
        sigma: 0.0,
    };
    let mut ok = true;
    let mut detail = Vec::new();
    for (i, sigma) in [0.1, 0.25, 0.5].into_iter().enumerate() {
        let tv_runs: Vec<RunParams> = [0.2, 0.5, 1.0, 2.0, 5.0, 10.0]
            .iter()
            .map(|&alpha| RunParams { alpha, sigma, ..base })
            .collect();
        let joint_runs: Vec<RunParams> = [0.1, 1.0]
            .iter()
            .flat_map(|&delta| {
                [5.0, 10.0, 20.0, 50.0, 100.0]
                    .iter()
                    .map(move |&alpha| RunParams { alpha, delta, sigma, ..base })
            })
            .collect();
        let (tv_rre, tv_rse) = best_case(&tv, &tv_runs);
        let (j_rre, j_rse) = best_case(&joint, &joint_runs);
        ok &= j_rre <= tv_rre && j_rse <= tv_rse;
        if i == 2 {
            ok &= j_rre < tv_rre || j_rse < tv_rse;
        }
        detail.push(format!("sigma {sigma}: rre {j_rre:.4}/{tv_rre:.4} rse {j_rse:.4}/{tv_rse:.4}"));
    }
    outcome(ok, format!("joint/tv {}", detail.join("; ")))
}

fn sampling_rates() -> Outcome {
    let cfg = bubble_config("joint", 128, "variable_density_random", 300);
    let mut rses = BTreeMap::new();
    for rate in [0.15, 0.08, 0.05, 0.01] {
        let runs: Vec<RunParams> = [38.4, 128.0]
            .iter()
            .map(|&alpha| RunParams {
                alpha,
                beta: 0.05,
                delta: 0.1,
                rate,
                sigma: 0.25,
            })
            .collect();
        rses.insert((rate * 100.0) as u32, best_case(&cfg, &runs).1);
    }
    let ok = [15, 8, 5].iter().all(|r| rses[r] < 0.05) && rses[&1] > rses[&5];
    let list: Vec<String> = rses.iter().rev().map(|(r, e)| format!("{r}%: {e:.4}")).collect();
    outcome(ok, format!("rse {}", list.join(", ")))
}

fn delta_study() -> Outcome {
    let g = Grid::new(64, 64).unwrap();
    let p = make_phantom(&PhantomSpec::bubbles(g, 12, 7)).unwrap();
    let mut spec = MaskSpec::new(MaskKind::VariableDensity, 0.3, 9);
    spec.symmetric = true;
    let mask = make_mask(&spec, g).unwrap();
    let data = simulate_kspace(&p.image, &mask, 0.1, 9).unwrap();
    let cfg = JointConfig {
        max_outer: 20,
        ..JointConfig::default()
    };
    let median_dist = |u: &RealImage| {
        let mut d: Vec<f64> = u
            .values()
            .iter()
            .map(|&x| (x - p.means.values()[p.means.nearest(x)]).abs())
            .collect();
        d.sort_by(f64::total_cmp);
        d[d.len() / 2]
    };
    let mut medians = Vec::new();
    let mut zf_gap = f64::NAN;
    for delta in [0.0, 0.1, 1.0] {
        let r = constrained_joint_solve(&data, &p.means, 0.05, delta, &cfg).unwrap();
        if delta == 0.0 {
            let uz = zero_fill(&data).unwrap();
            let (a, b) = (dft(&r.u), dft(&uz));
            zf_gap = mask
                .indices()
                .iter()
                .map(|&k| (a.values()[k] - b.values()[k]).norm())
                .chain(r.u.values().iter().zip(uz.values()).map(|(x, y)| (x - y).abs()))
                .fold(0.0, f64::max);
        }
        medians.push(median_dist(&r.u));
    }
    let ok = zf_gap <= 1e-10 && medians.windows(2).all(|w| w[1] <= w[0]);
    outcome(
        ok,
        format!(
            "zero-fill gap {zf_gap:.1e}, median distance {:.4} / {:.4} / {:.4}",
            medians[0], medians[1], medians[2]
        ),
    )
}

fn diagnostics() -> Outcome {
    let g = Grid::new(32, 32).unwrap();
    let p = make_phantom(&PhantomSpec::two_region(g, 0.3)).unwrap();
    let mask = make_mask(&MaskSpec::new(MaskKind::UniformRandom, 0.4, 3), g).unwrap();
    let data = simulate_kspace(&p.image, &mask, 0.1, 3).unwrap();
    let cfg = JointConfig {
        alpha: 0.05,
        beta: 0.05,
        delta: 0.5,
        epsilon_aug: 1e-3,
        max_outer: 20,
        inner_iters: 500,
        tol_v: Some(1e-300),
        ..JointConfig::default()
    };
    let res = joint_solve(&data, &p.means, &cfg).unwrap();
    let dec = check_sufficient_decrease(&res.report);
    let sub = check_subgradient_bound(&res.report);
    let min_dist = res
        .report
        .iterations
        .iter()
        .flat_map(|r| [r.bregman_u, r.bregman_v])
        .map(|d| d.unwrap_or(f64::NAN))
        .fold(f64::INFINITY, f64::min);
    outcome(
        dec.passed && dec.worst_margin <= 1e-6 && min_dist >= -1e-8 && sub.all_finite && !sub.ratios.is_empty(),
        format!(
            "{} steps, worst F rise {:.2e}, min distance {min_dist:.2e}, max ratio {:.3}",
            res.report.outer_iters(),
            dec.worst_margin,
            sub.max_ratio.unwrap_or(f64::NAN)
        ),
    )
}

fn files_under(root: &Path) -> Vec<String> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push(path.strip_prefix(root).unwrap().to_string_lossy().into_owned());
            }
        }
    }
    out.sort();
    out
}

fn determinism() -> Outcome {
    let mut checked = 0;
    for (method, sweep) in [("joint", "sweep.param = delta\nsweep.values = 0, 0.1, 1"), ("bregman_seq", "sweep.param = alpha\nsweep.values = 0.5, 1, 2")] {
        let first = tempfile::tempdir().unwrap();
        let second = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig::parse(&format!(
            "method = {method}\nsigma = 0.1\noutput = {}\nphantom.kind = shepp_logan_like\nphantom.n1 = 32\nphantom.n2 = 32\nmask.kind = spiral\nmask.rate = 0.3\nsolver.alpha = 0.05\nsolver.beta = 0.01\nsolver.max_outer = 5\n{sweep}\n",
            first.path().display()
        ))
        .unwrap();
        run_experiment(&cfg).unwrap();
        let mut again = ExperimentConfig::from_file(&first.path().join("manifest.cfg")).unwrap();
        again.output = second.path().to_path_buf();
        run_experiment(&again).unwrap();
        let names = files_under(first.path());
        if names != files_under(second.path()) {
            return outcome(false, format!("{method}: different file sets"));
        }
        for name in names.iter().filter(|n| *n != "manifest.cfg") {
            if fs::read(first.path().join(name)).unwrap() != fs::read(second.path().join(name)).unwrap() {
                return outcome(false, format!("{method}: {name} differs"));
            }
            checked += 1;
        }
    }
    outcome(true, format!("{checked} files identical across reruns"))
}

fn main() -> ExitCode {
    let criteria: [(u32, &str, Duration, fn() -> Outcome); 10] = [
        (1, "operator adjoints and norm", Duration::from_secs(5), operators),
        (2, "simplex projection oracle", Duration::from_secs(5), simplex),
        (3, "noiseless segmentation exact", Duration::from_secs(30), segmentation_exact),
        (4, "discrepancy stopping", Duration::from_secs(120), discrepancy_stop),
        (5, "bregman contrast restoration", Duration::from_secs(120), contrast),
        (6, "joint beats sequential", Duration::from_secs(900), joint_vs_sequential),
        (7, "sampling-rate degradation", Duration::from_secs(900), sampling_rates),
        (8, "delta study", Duration::from_secs(300), delta_study),
        (9, "convergence diagnostics", Duration::from_secs(120), diagnostics),
        (10, "manifest determinism", Duration::from_secs(300), determinism),
    ];
    let only: Option<u32> = std::env::args().skip(1).find_map(|a| a.parse().ok());
    let mut failed = 0;
    for (id, name, budget, check) in criteria {
        if only.is_some_and(|o| o != id) {
            continue;
        }
        let start = Instant::now();
        let out = check();
        let took = start.elapsed();
        let pass = out.pass && took <= budget;
        if !pass {
            failed += 1;
        }
        println!(
            "criterion {id:2} {} {name} ({:.1}s of {}s) {}",
            if pass { "PASS" } else { "FAIL" },
            took.as_secs_f64(),
            budget.as_secs(),
            out.detail
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
