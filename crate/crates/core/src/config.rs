//! Flat `key = value` experiment configuration.
//!
//! One assignment per line, `#` starts a comment, keys are dotted names. Every
//! key has a default except `method`; [`ExperimentConfig::to_text`] writes all
//! of them, so a written manifest parses back to the same configuration.
//!
//! ```text
//! method = joint
//! seed = 7
//! sigma = 0.25
//! units = unnormalized
//! phantom.kind = bubbles
//! phantom.n1 = 64
//! mask.kind = uniform_random
//! mask.rate = 0.15
//! solver.alpha = 50
//! sweep.param = delta
//! sweep.values = 0.1, 1
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::simulate::{Disk, MaskKind, MaskSpec, PhantomKind, PhantomSpec};
use crate::types::{Grid, JointConfig, LinearSolver};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    ZeroFill,
    TvSeq,
    BregmanSeq,
    Joint,
    ConstrainedJoint,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::ZeroFill,
        Method::TvSeq,
        Method::BregmanSeq,
        Method::Joint,
        Method::ConstrainedJoint,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Method::ZeroFill => "zero_fill",
            Method::TvSeq => "tv_seq",
            Method::BregmanSeq => "bregman_seq",
            Method::Joint => "joint",
            Method::ConstrainedJoint => "constrained_joint",
        }
    }

    pub fn parse(s: &str) -> Option<Method> {
        Method::ALL.into_iter().find(|m| m.name() == s)
    }

    /// Reconstruction first, segmentation afterwards.
    pub fn is_sequential(&self) -> bool {
        matches!(self, Method::ZeroFill | Method::TvSeq | Method::BregmanSeq)
    }
}

/// Scale in which `alpha`, `delta` and the phantom intensities are given.
///
/// `Unnormalized` reads them as if the forward operator were the plain DFT
/// `sum_x u(x) e^{-2 pi i k x / N}` rather than the unitary one. The solver
/// always uses the unitary operator; the two are related exactly by
/// `u -> sqrt(n) u`, `alpha -> alpha / sqrt(n)`, `delta -> delta / n`, with the
/// noise level, `beta` and all reported metrics unchanged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Units {
    #[default]
    Unitary,
    Unnormalized,
}

impl Units {
    pub fn name(&self) -> &'static str {
        match self {
            Units::Unitary => "unitary",
            Units::Unnormalized => "unnormalized",
        }
    }

    pub fn parse(s: &str) -> Option<Units> {
        match s {
            "unitary" => Some(Units::Unitary),
            "unnormalized" => Some(Units::Unnormalized),
            _ => None,
        }
    }

    /// Factor from configured intensities to solver intensities.
    pub fn intensity_scale(&self, grid: Grid) -> f64 {
        match self {
            Units::Unitary => 1.0,
            Units::Unnormalized => (grid.n() as f64).sqrt(),
        }
    }

    pub fn solver_alpha(&self, grid: Grid, alpha: f64) -> f64 {
        alpha / self.intensity_scale(grid)
    }

    pub fn solver_delta(&self, grid: Grid, delta: f64) -> f64 {
        let s = self.intensity_scale(grid);
        delta / (s * s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    Alpha,
    Beta,
    Delta,
    Rate,
    Sigma,
}

impl SweepParam {
    pub fn name(&self) -> &'static str {
        match self {
            SweepParam::Alpha => "alpha",
            SweepParam::Beta => "beta",
            SweepParam::Delta => "delta",
            SweepParam::Rate => "rate",
            SweepParam::Sigma => "sigma",
        }
    }

    pub fn parse(s: &str) -> Option<SweepParam> {
        [
            SweepParam::Alpha,
            SweepParam::Beta,
            SweepParam::Delta,
            SweepParam::Rate,
            SweepParam::Sigma,
        ]
        .into_iter()
        .find(|p| p.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub param: SweepParam,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub method: Method,
    pub phantom: PhantomSpec,
    pub mask: MaskSpec,
    pub sigma: f64,
    /// Noise seed.
    pub seed: u64,
    pub units: Units,
    pub solver: JointConfig,
    /// Coupling weight used by the segmentation step of sequential methods.
    pub segment_delta: f64,
    pub sweep: Option<Sweep>,
    pub output: PathBuf,
    /// Record wall-clock times; off by default so reruns are byte-identical.
    pub timing: bool,
}

impl ExperimentConfig {
    pub fn new(method: Method, phantom: PhantomSpec, mask: MaskSpec, sigma: f64) -> Self {
        ExperimentConfig {
            method,
            phantom,
            mask,
            sigma,
            seed: 0,
            units: Units::Unitary,
            solver: JointConfig::default(),
            segment_delta: 1.0,
            sweep: None,
            output: PathBuf::from("out"),
            timing: false,
        }
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = Entries::read(text)?;
        let cfg = build(&mut kv)?;
        if let Some((key, line)) = kv.leftover() {
            return Err(Error::Config(format!("line {line}: unknown key `{key}`")));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.solver.ensure_valid()?;
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config(format!("sigma must be nonnegative, got {}", self.sigma)));
        }
        if !(self.mask.rate > 0.0 && self.mask.rate <= 1.0) {
            return Err(Error::Config(format!("mask.rate must lie in (0, 1], got {}", self.mask.rate)));
        }
        if !(self.segment_delta > 0.0 && self.segment_delta.is_finite()) {
            return Err(Error::Config("segment.delta must be positive".into()));
        }
        if self.phantom.intensities.len() < 2 {
            return Err(Error::Config("phantom.intensities needs at least two values".into()));
        }
        if let Some(sweep) = &self.sweep {
            if sweep.values.is_empty() {
                return Err(Error::Config("sweep.values is empty".into()));
            }
            for &x in &sweep.values {
                let ok = match sweep.param {
                    SweepParam::Alpha | SweepParam::Beta => x > 0.0,
                    SweepParam::Delta | SweepParam::Sigma => x >= 0.0,
                    SweepParam::Rate => x > 0.0 && x <= 1.0,
                };
                if !ok || !x.is_finite() {
                    return Err(Error::Config(format!(
                        "sweep value {x} is out of range for {}",
                        sweep.param.name()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Every key with its resolved value, in a fixed order.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("method", self.method.name().into());
        put("seed", self.seed.to_string());
        put("sigma", self.sigma.to_string());
        put("units", self.units.name().into());
        put("output", self.output.display().to_string());
        put("timing", self.timing.to_string());
        put("segment.delta", self.segment_delta.to_string());

        let p = &self.phantom;
        put("phantom.kind", p.kind.name().into());
        put("phantom.n1", p.grid.n1().to_string());
        put("phantom.n2", p.grid.n2().to_string());
        put("phantom.seed", p.seed.to_string());
        put("phantom.intensities", join(&p.intensities));
        match &p.kind {
            PhantomKind::Bubbles {
                count,
                radius_min,
                radius_max,
            } => {
                put("phantom.count", count.to_string());
                put("phantom.radius_min", radius_min.to_string());
                put("phantom.radius_max", radius_max.to_string());
            }
            PhantomKind::TwoRegion { radius } => put("phantom.radius", radius.to_string()),
            PhantomKind::Disks(disks) => {
                let list: Vec<String> = disks
                    .iter()
                    .map(|d| format!("{} {} {} {}", d.cy, d.cx, d.radius, d.class))
                    .collect();
                put("phantom.disks", list.join("; "));
            }
            PhantomKind::SheppLoganLike => {}
        }

        let m = &self.mask;
        put("mask.kind", m.kind.name().into());
        put("mask.rate", m.rate.to_string());
        put("mask.seed", m.seed.to_string());
        put("mask.symmetric", m.symmetric.to_string());
        if let Some(t) = m.turns {
            put("mask.turns", t.to_string());
        }

        let c = &self.solver;
        put("solver.alpha", c.alpha.to_string());
        put("solver.beta", c.beta.to_string());
        put("solver.delta", c.delta.to_string());
        put("solver.tol_v", c.tol_v.map_or("auto".into(), |t| t.to_string()));
        put("solver.max_outer", c.max_outer.to_string());
        put("solver.inner_iters", c.inner_iters.to_string());
        put("solver.inner_tol", c.inner_tol.to_string());
        put("solver.cg_tol", c.cg_tol.to_string());
        put("solver.cg_max", c.cg_max.to_string());
        put("solver.epsilon_aug", c.epsilon_aug.to_string());
        put("solver.mu", c.mu.to_string());
        put(
            "solver.linear_solver",
            match c.linear_solver {
                LinearSolver::Fourier => "fourier",
                LinearSolver::ConjugateGradient => "cg",
            }
            .into(),
        );
        put("solver.update_means", c.update_means.to_string());
        put("solver.weighted_steps", c.weighted_steps.to_string());

        if let Some(sw) = &self.sweep {
            put("sweep.param", sw.param.name().into());
            put("sweep.values", join(&sw.values));
        }
        s
    }
}

fn join(xs: &[f64]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ")
}

/// Parsed assignments with the line each came from.
struct Entries(BTreeMap<String, (String, usize)>);

impl Entries {
    fn read(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {line_no}: expected `key = value`")))?;
            let key = k.trim();
            if key.is_empty() {
                return Err(Error::Config(format!("line {line_no}: empty key")));
            }
            if map.insert(key.to_string(), (v.trim().to_string(), line_no)).is_some() {
                return Err(Error::Config(format!("line {line_no}: duplicate key `{key}`")));
            }
        }
        Ok(Entries(map))
    }

    fn take(&mut self, key: &str) -> Option<(String, usize)> {
        self.0.remove(key)
    }

    fn leftover(&self) -> Option<(&str, usize)> {
        self.0.iter().next().map(|(k, (_, l))| (k.as_str(), *l))
    }

    fn get<T: std::str::FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        match self.take(key) {
            None => Ok(default),
            Some((v, line)) => v
                .parse()
                .map_err(|_| Error::Config(format!("line {line}: cannot parse `{v}` for `{key}`"))),
        }
    }

    fn list(&mut self, key: &str) -> Result<Option<Vec<f64>>> {
        let Some((v, line)) = self.take(key) else {
            return Ok(None);
        };
        v.split(',')
            .map(|x| {
                x.trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("line {line}: `{}` in `{key}` is not a number", x.trim())))
            })
            .collect::<Result<Vec<f64>>>()
            .map(Some)
    }

    fn word<T>(&mut self, key: &str, parse: impl Fn(&str) -> Option<T>) -> Result<Option<T>> {
        match self.take(key) {
            None => Ok(None),
            Some((v, line)) => parse(&v)
                .map(Some)
                .ok_or_else(|| Error::Config(format!("line {line}: unknown value `{v}` for `{key}`"))),
        }
    }
}

fn parse_disks(text: &str) -> Option<Vec<Disk>> {
    text.split(';')
        .filter(|s| !s.trim().is_empty())
        .map(|entry| {
            let f: Vec<&str> = entry.split_whitespace().collect();
            if f.len() != 4 {
                return None;
            }
            Some(Disk {
                cy: f[0].parse().ok()?,
                cx: f[1].parse().ok()?,
                radius: f[2].parse().ok()?,
                class: f[3].parse().ok()?,
            })
        })
        .collect()
}

fn build(kv: &mut Entries) -> Result<ExperimentConfig> {
    let method = kv
        .word("method", Method::parse)?
        .ok_or_else(|| Error::Config("missing required key `method`".into()))?;
    let seed: u64 = kv.get("seed", 0)?;
    let sigma = kv.get("sigma", 0.0)?;
    let units = kv.word("units", Units::parse)?.unwrap_or_default();
    let output = PathBuf::from(kv.get("output", "out".to_string())?);
    let timing = kv.get("timing", false)?;
    let segment_delta = kv.get("segment.delta", 1.0)?;

    let n1 = kv.get("phantom.n1", 64usize)?;
    let n2 = kv.get("phantom.n2", n1)?;
    let grid = Grid::new(n1, n2).map_err(|e| Error::Config(e.to_string()))?;
    let kind_name = kv.get("phantom.kind", "bubbles".to_string())?;
    let (kind, default_intensities) = match kind_name.as_str() {
        "bubbles" => (
            PhantomKind::Bubbles {
                count: kv.get("phantom.count", 12)?,
                radius_min: kv.get("phantom.radius_min", 0.05)?,
                radius_max: kv.get("phantom.radius_max", 0.12)?,
            },
            vec![0.0, 1.0],
        ),
        "two_region" => (
            PhantomKind::TwoRegion {
                radius: kv.get("phantom.radius", 0.25)?,
            },
            vec![0.0, 1.0],
        ),
        "shepp_logan_like" => (PhantomKind::SheppLoganLike, vec![0.0, 0.3, 0.6, 1.0]),
        "disks" => {
            let (text, line) = kv
                .take("phantom.disks")
                .ok_or_else(|| Error::Config("phantom.kind = disks needs phantom.disks".into()))?;
            let disks = parse_disks(&text).ok_or_else(|| {
                Error::Config(format!("line {line}: phantom.disks wants `cy cx radius class; ...`"))
            })?;
            let classes = disks.iter().map(|d| d.class).max().unwrap_or(0) + 1;
            let defaults = (0..classes.max(2)).map(|j| j as f64 / (classes.max(2) - 1) as f64).collect();
            (PhantomKind::Disks(disks), defaults)
        }
        other => return Err(Error::Config(format!("unknown phantom.kind `{other}`"))),
    };
    let phantom = PhantomSpec {
        kind,
        grid,
        intensities: kv.list("phantom.intensities")?.unwrap_or(default_intensities),
        seed: kv.get("phantom.seed", seed)?,
    };

    let mask_kind = kv
        .word("mask.kind", |s| {
            [MaskKind::UniformRandom, MaskKind::VariableDensity, MaskKind::Spiral]
                .into_iter()
                .find(|k| k.name() == s)
        })?
        .unwrap_or(MaskKind::UniformRandom);
    let mut mask = MaskSpec::new(mask_kind, kv.get("mask.rate", 0.15)?, kv.get("mask.seed", seed)?);
    mask.symmetric = kv.get("mask.symmetric", false)?;
    if let Some((v, line)) = kv.take("mask.turns") {
        mask.turns = Some(
            v.parse()
                .map_err(|_| Error::Config(format!("line {line}: cannot parse `{v}` for `mask.turns`")))?,
        );
    }

    let d = JointConfig::default();
    let tol_v = match kv.take("solver.tol_v") {
        None => d.tol_v,
        Some((v, _)) if v == "auto" => None,
        Some((v, line)) => Some(
            v.parse()
                .map_err(|_| Error::Config(format!("line {line}: cannot parse `{v}` for `solver.tol_v`")))?,
        ),
    };
    let solver = JointConfig {
        alpha: kv.get("solver.alpha", d.alpha)?,
        beta: kv.get("solver.beta", d.beta)?,
        delta: kv.get("solver.delta", d.delta)?,
        tol_v,
        max_outer: kv.get("solver.max_outer", d.max_outer)?,
        inner_iters: kv.get("solver.inner_iters", d.inner_iters)?,
        inner_tol: kv.get("solver.inner_tol", d.inner_tol)?,
        cg_tol: kv.get("solver.cg_tol", d.cg_tol)?,
        cg_max: kv.get("solver.cg_max", d.cg_max)?,
        epsilon_aug: kv.get("solver.epsilon_aug", d.epsilon_aug)?,
        mu: kv.get("solver.mu", d.mu)?,
        linear_solver: kv
            .word("solver.linear_solver", |s| match s {
                "fourier" => Some(LinearSolver::Fourier),
                "cg" => Some(LinearSolver::ConjugateGradient),
                _ => None,
            })?
            .unwrap_or(d.linear_solver),
        update_means: kv.get("solver.update_means", d.update_means)?,
        weighted_steps: kv.get("solver.weighted_steps", d.weighted_steps)?,
    };

    let sweep = match (kv.word("sweep.param", SweepParam::parse)?, kv.list("sweep.values")?) {
        (None, None) => None,
        (Some(param), Some(values)) => Some(Sweep { param, values }),
        _ => return Err(Error::Config("sweep.param and sweep.values go together".into())),
    };

    Ok(ExperimentConfig {
        method,
        phantom,
        mask,
        sigma,
        seed,
        units,
        solver,
        segment_delta,
        sweep,
        output,
        timing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "
        # bubbles at 15%
        method = joint
        seed = 7
        sigma = 0.25
        units = unnormalized
        phantom.kind = bubbles
        phantom.count = 9
        mask.rate = 0.08
        mask.kind = variable_density_random
        solver.alpha = 50
        solver.tol_v = 0.01
        solver.linear_solver = cg
        sweep.param = delta
        sweep.values = 0.1, 1
    ";

    #[test]
    fn parses_and_fills_defaults() {
        let cfg = ExperimentConfig::parse(SAMPLE).unwrap();
        assert_eq!(cfg.method, Method::Joint);
        assert_eq!(cfg.units, Units::Unnormalized);
        assert_eq!(cfg.phantom.grid, Grid::new(64, 64).unwrap());
        assert_eq!(cfg.phantom.seed, 7);
        assert!(matches!(cfg.phantom.kind, PhantomKind::Bubbles { count: 9, .. }));
        assert_eq!(cfg.mask.kind, MaskKind::VariableDensity);
        assert_eq!(cfg.mask.seed, 7);
        assert_eq!(cfg.solver.tol_v, Some(0.01));
        assert_eq!(cfg.solver.linear_solver, LinearSolver::ConjugateGradient);
        assert_eq!(cfg.solver.inner_iters, JointConfig::default().inner_iters);
        assert_eq!(cfg.sweep.as_ref().unwrap().values, vec![0.1, 1.0]);
    }

    #[test]
    fn text_roundtrip_is_identity() {
        let cfg = ExperimentConfig::parse(SAMPLE).unwrap();
        let again = ExperimentConfig::parse(&cfg.to_text()).unwrap();
        assert_eq!(again, cfg);
        let mut disks = cfg.clone();
        disks.phantom.kind = PhantomKind::Disks(vec![
            Disk { cy: 0.3, cx: 0.4, radius: 0.1, class: 1 },
            Disk { cy: 0.6, cx: 0.6, radius: 0.2, class: 2 },
        ]);
        disks.phantom.intensities = vec![0.0, 0.5, 1.0];
        disks.sigma = 0.1 + 0.2;
        assert_eq!(ExperimentConfig::parse(&disks.to_text()).unwrap(), disks);
    }

    #[test]
    fn rejects_bad_input() {
        let bad = [
            ("sigma = 1", "method"),
            ("method = joint\nfoo = 1", "unknown key"),
            ("method = joint\nsigma = 1\nsigma = 2", "duplicate"),
            ("method = nope", "unknown value"),
            ("method = joint\nsolver.alpha = x", "cannot parse"),
            ("method = joint\nsweep.param = alpha", "go together"),
            ("method = joint\nsweep.param = rate\nsweep.values = 0.5, 2", "out of range"),
            ("method = joint\nsolver.alpha = -1", "alpha"),
            ("method = joint\njust words", "key = value"),
        ];
        for (text, needle) in bad {
            let err = ExperimentConfig::parse(text).unwrap_err();
            assert!(matches!(err, Error::Config(_)), "{text}: {err}");
            assert!(err.to_string().contains(needle), "{text}: {err}");
        }
    }

    #[test]
    fn unit_conversion() {
        let g = Grid::new(64, 64).unwrap();
        assert_eq!(Units::Unitary.solver_alpha(g, 2.0), 2.0);
        assert_eq!(Units::Unnormalized.intensity_scale(g), 64.0);
        assert_eq!(Units::Unnormalized.solver_alpha(g, 64.0), 1.0);
        assert_eq!(Units::Unnormalized.solver_delta(g, 4096.0), 1.0);
    }
}
