//! Refinement studies behind the command line runner: configuration,
//! dispatch to the module suites, and CSV / pretty reports.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::algebra::{alpha_dot, shell_sigma_min_exact, Spinor, Vec3};
use crate::calderon::{identity_residuals, loglog_slope, make_anticommutator, smoothing_profile, CalderonOps, IDENTITY_NAMES};
use crate::layerpot::{assemble_cs, one_sided_trace_report, reproducing_residual_with, LayerConfig, Side};
use crate::models::{critical_witness, mit_boundary_form, mit_bootstrap_with, mit_project, shell_system_conditioning};
use crate::surface::{build_surface, HarmonicSpectrum, SpinorTrace, SurfaceGrid, SurfaceKind};
use crate::{Error, Result};

/// Environment variable read by [`init_threads_from_env`].
pub const THREADS_ENV: &str = "DIRAC_BIE_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    Identities,
    Jump,
    Reproduce,
    Smoothing,
    Mit,
    ShellSweep,
    Critical,
}

impl Experiment {
    pub const ALL: [Experiment; 7] = [
        Experiment::Identities,
        Experiment::Jump,
        Experiment::Reproduce,
        Experiment::Smoothing,
        Experiment::Mit,
        Experiment::ShellSweep,
        Experiment::Critical,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Identities => "identities",
            Experiment::Jump => "jump",
            Experiment::Reproduce => "reproduce",
            Experiment::Smoothing => "smoothing",
            Experiment::Mit => "mit",
            Experiment::ShellSweep => "shell-sweep",
            Experiment::Critical => "critical",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|e| e.name() == s).ok_or_else(|| Error::UnknownExperiment(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Final relative jump residual on the sphere.
    pub jump: f64,
    pub plemelj_square: f64,
    pub partition: f64,
    pub reproduce_field: f64,
    pub reproduce_trace: f64,
    /// Upper bound on the log-log slope of the smoothing gains.
    pub smoothing_slope: f64,
    /// |form| ≤ mit_form·‖f‖‖g‖.
    pub mit_form: f64,
    pub sigma_min: f64,
    /// Minimal growth of the H^{1/2} norm per doubling of the cutoff.
    pub growth: f64,
    /// Maximal max/min ratio of the H^{−1/2} norm of the input.
    pub flatness: f64,
    /// Residuals below this count as converged.
    pub round_off: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            jump: 1e-3,
            plemelj_square: 5e-2,
            partition: 1e-13,
            reproduce_field: 1e-6,
            reproduce_trace: 1e-3,
            smoothing_slope: -0.8,
            mit_form: 1e-12,
            sigma_min: 1e-10,
            growth: 1.5,
            flatness: 1.2,
            round_off: 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WitnessConfig {
    pub epsilon: f64,
    /// Roughness of the input coefficient law.
    pub delta: f64,
    pub cutoffs: Vec<usize>,
    /// Grid level of the cutoff sweep.
    pub level: usize,
    pub refine_cutoff: usize,
    /// Coarser levels of the refinement study; the sweep level is appended.
    pub refine_levels: Vec<usize>,
}

impl Default for WitnessConfig {
    fn default() -> Self {
        Self { epsilon: 1.0, delta: 0.05, cutoffs: vec![8, 16, 32], level: 4, refine_cutoff: 8, refine_levels: vec![2, 3] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: String,
    pub seed: u64,
    /// First and last refinement level.
    pub levels: [usize; 2],
    pub mu: Vec<f64>,
    pub tau: Vec<f64>,
    /// Radius of the μ = 0 evaluation ball; must exceed the surface diameter.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ball_radius: Option<f64>,
    pub probe_degree: usize,
    pub smoothing_degrees: Vec<usize>,
    /// Exterior sources of the reproducing test.
    pub sources: Vec<[f64; 3]>,
    /// Interior evaluation points; empty picks points for the surface kind.
    pub interior_points: Vec<[f64; 3]>,
    /// Not printed into report headers, so reruns to other paths compare equal.
    #[serde(skip_serializing)]
    pub output: Option<PathBuf>,
    pub surface: SurfaceKind,
    pub layer: LayerConfig,
    pub witness: WitnessConfig,
    pub tolerances: Tolerances,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: "identities".into(),
            seed: 1,
            levels: [1, 3],
            mu: vec![0.0, 1.0],
            tau: (0..25).map(|k| (k as f64 - 12.0) / 3.0).collect(),
            ball_radius: None,
            probe_degree: crate::calderon::PROBE_DEGREE,
            smoothing_degrees: vec![2, 4, 8, 16],
            sources: vec![[0.0, 0.0, 2.0], [0.0, 3.0, 4.0]],
            interior_points: Vec::new(),
            output: None,
            surface: SurfaceKind::Sphere { radius: 1.0 },
            layer: LayerConfig::default(),
            witness: WitnessConfig::default(),
            tolerances: Tolerances::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<Experiment> {
        let exp = self.experiment.parse()?;
        self.surface.validate()?;
        let [lo, hi] = self.levels;
        if lo > hi {
            return Err(Error::Config(format!("empty level range {lo}..{hi}")));
        }
        if hi > 6 {
            return Err(Error::Config(format!("level {hi} exceeds the dense assembly limit 6")));
        }
        if self.mu.is_empty() {
            return Err(Error::Config("mu list is empty".into()));
        }
        if let Some(r) = self.ball_radius {
            if r <= self.surface.diameter() {
                return Err(Error::Config(format!("ball radius {r} must exceed the surface diameter {}", self.surface.diameter())));
            }
        }
        if exp == Experiment::ShellSweep && self.tau.is_empty() {
            return Err(Error::Config("tau list is empty".into()));
        }
        Ok(exp)
    }

    /// Layer parameters with the ball radius applied.
    pub fn layer_config(&self) -> LayerConfig {
        let mut cfg = self.layer;
        if let Some(r) = self.ball_radius {
            cfg.ball_factor = r / self.surface.diameter();
        }
        cfg
    }

    fn level_range(&self) -> std::ops::RangeInclusive<usize> {
        self.levels[0]..=self.levels[1]
    }

    fn interior(&self) -> Vec<Vec3> {
        if !self.interior_points.is_empty() {
            return self.interior_points.iter().map(|p| Vec3::new(p[0], p[1], p[2])).collect();
        }
        let base = [Vec3::new(0.0, 0.0, 0.0), Vec3::new(0.2, -0.3, 0.1), Vec3::new(0.0, 0.4, -0.3)];
        match self.surface {
            SurfaceKind::Sphere { radius } => base.iter().map(|p| p * radius).collect(),
            SurfaceKind::Ellipsoid { a, b, c } => base.iter().map(|p| p * a.min(b).min(c)).collect(),
            SurfaceKind::Torus { major, minor } => base
                .iter()
                .map(|p| {
                    let ang = std::f64::consts::PI * (p[0] + p[1]);
                    Vec3::new(major * ang.cos(), major * ang.sin(), 0.0) + p * minor
                })
                .collect(),
        }
    }
}

/// Builds the global rayon pool from [`THREADS_ENV`] when it is set.
pub fn init_threads_from_env() -> Result<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else { return Ok(()) };
    let n: usize = v.trim().parse().map_err(|_| Error::Config(format!("{THREADS_ENV}={v:?} is not a thread count")))?;
    // a pool built earlier in the process is kept
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Text(String),
    Int(usize),
    Num(f64),
    Empty,
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cell::Text(s) => f.write_str(s),
            Cell::Int(n) => write!(f, "{n}"),
            Cell::Num(x) if x.is_infinite() => f.write_str(if *x > 0.0 { "inf" } else { "-inf" }),
            Cell::Num(x) => write!(f, "{x:.6e}"),
            Cell::Empty => Ok(()),
        }
    }
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::Text(s.to_string())
    }
}

impl From<usize> for Cell {
    fn from(n: usize) -> Self {
        Cell::Int(n)
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Num(x)
    }
}

/// log₂(prev/cur), empty without a predecessor.
fn rate(prev: Option<f64>, cur: f64) -> Cell {
    match prev {
        Some(p) if p > 0.0 && cur > 0.0 => Cell::Num((p / cur).log2()),
        _ => Cell::Empty,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub experiment: Experiment,
    /// Configuration lines printed above the table.
    pub header: Vec<String>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
    pub checks: Vec<Check>,
    /// Wall-clock seconds per stage; shown in the pretty format only.
    pub timings: Vec<(String, f64)>,
}

impl RunReport {
    pub fn new(experiment: Experiment, config: &ExperimentConfig, columns: &[&str]) -> Self {
        let mut header = vec![format!("experiment = {:?}", experiment.name())];
        header.extend(config.to_toml().lines().filter(|l| !l.is_empty() && !l.starts_with("experiment =")).map(String::from));
        Self {
            experiment,
            header,
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
            checks: Vec::new(),
            timings: Vec::new(),
        }
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    fn push_check(&mut self, name: impl Into<String>, passed: bool, detail: impl Into<String>) {
        self.checks.push(Check { name: name.into(), passed, detail: detail.into() });
    }

    fn time<T>(&mut self, stage: String, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let t = Instant::now();
        let out = f()?;
        self.timings.push((stage, t.elapsed().as_secs_f64()));
        Ok(out)
    }

    fn summary(&self) -> String {
        let failed = self.checks.iter().filter(|c| !c.passed).count();
        if failed == 0 {
            format!("PASS: {} of {} checks passed", self.checks.len(), self.checks.len())
        } else {
            format!("FAIL: {failed} of {} checks failed", self.checks.len())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Pretty,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "pretty" => Ok(ReportFormat::Pretty),
            _ => Err(Error::Config(format!("unknown report format {s:?}"))),
        }
    }
}

pub fn emit_report(report: &RunReport, format: ReportFormat) -> Vec<u8> {
    let mut out = String::new();
    match format {
        ReportFormat::Csv => {
            for h in &report.header {
                out += &format!("# {h}\n");
            }
            out += &report.columns.join(",");
            out.push('\n');
            for row in &report.rows {
                out += &row.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(",");
                out.push('\n');
            }
            for c in &report.checks {
                out += &format!("# check {}: {} ({})\n", c.name, if c.passed { "pass" } else { "FAIL" }, c.detail);
            }
            if !report.checks.is_empty() {
                out += &format!("# {}\n", report.summary());
            }
        }
        ReportFormat::Pretty => {
            out += &format!("{} report\n", report.experiment);
            for h in &report.header {
                out += &format!("  {h}\n");
            }
            out.push('\n');
            let cells: Vec<Vec<String>> = report.rows.iter().map(|r| r.iter().map(|c| c.to_string()).collect()).collect();
            let widths: Vec<usize> = report
                .columns
                .iter()
                .enumerate()
                .map(|(k, c)| cells.iter().map(|r| r.get(k).map_or(0, |s| s.len())).max().unwrap_or(0).max(c.len()))
                .collect();
            let line = |vals: Vec<&str>| {
                vals.iter().zip(&widths).map(|(v, w)| format!("{v:>w$}")).collect::<Vec<_>>().join("  ") + "\n"
            };
            out += &line(report.columns.iter().map(String::as_str).collect());
            for r in &cells {
                out += &line(r.iter().map(String::as_str).collect());
            }
            if report.columns.iter().any(|c| c.starts_with("rate")) {
                out += "\n  rate columns: log2 of the residual ratio between consecutive levels (2 = second order)\n";
            }
            out.push('\n');
            for c in &report.checks {
                out += &format!("  [{}] {}: {}\n", if c.passed { "pass" } else { "FAIL" }, c.name, c.detail);
            }
            if !report.timings.is_empty() {
                out += "\n  timings:\n";
                for (stage, s) in &report.timings {
                    out += &format!("    {stage}: {s:.2} s\n");
                }
            }
            out += &report.summary();
            out.push('\n');
        }
    }
    out.into_bytes()
}

/// Writes the report to `path`, or to stdout when `path` is None.
pub fn write_report(report: &RunReport, format: ReportFormat, path: Option<&Path>) -> Result<()> {
    let bytes = emit_report(report, format);
    match path {
        Some(p) => fs::write(p, bytes)?,
        None => std::io::stdout().write_all(&bytes)?,
    }
    Ok(())
}

/// Seeded quadratic spinor field, band-limited on the sphere.
pub fn smooth_density(grid: &Arc<SurfaceGrid>, seed: u64) -> SpinorTrace {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coef: Vec<[C64; 4]> = (0..7)
        .map(|_| std::array::from_fn(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))))
        .collect();
    SpinorTrace::from_fn(grid, |_, x, _| {
        let m = [1.0, x[0], x[1], x[2], x[0] * x[1], x[1] * x[2], x[2] * x[2] - x[0] * x[0]];
        Spinor::from_fn(|r, _| m.iter().zip(&coef).map(|(m, c)| c[r] * *m).sum())
    })
}

fn random_trace(grid: &Arc<SurfaceGrid>, seed: u64) -> SpinorTrace {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..4 * grid.len()).map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
    SpinorTrace::new(grid.clone(), data).expect("length matches")
}

fn grid_at(kind: SurfaceKind, level: usize) -> Result<Arc<SurfaceGrid>> {
    Ok(build_surface(kind, level)?.shared())
}

fn strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}

/// Decreasing, or already below the round-off floor.
fn decreasing_with_floor(v: &[f64], floor: f64) -> bool {
    v.windows(2).all(|w| w[1] < w[0] || w[1].max(w[0]) < floor)
}

fn fmt_seq(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.3e}")).collect::<Vec<_>>().join(" -> ")
}

/// Runs the configured experiment.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunReport> {
    let exp = config.validate()?;
    match exp {
        Experiment::Identities => run_identities(config),
        Experiment::Jump => run_jump(config),
        Experiment::Reproduce => run_reproduce(config),
        Experiment::Smoothing => run_smoothing(config),
        Experiment::Mit => run_mit(config),
        Experiment::ShellSweep => run_shell_sweep(config),
        Experiment::Critical => run_critical(config),
    }
}

fn run_identities(config: &ExperimentConfig) -> Result<RunReport> {
    let mut cols = vec!["surface", "level", "mu"];
    cols.extend(IDENTITY_NAMES);
    let rate_names: Vec<String> = IDENTITY_NAMES.iter().map(|n| format!("rate_{n}")).collect();
    cols.extend(rate_names.iter().map(String::as_str));
    let mut report = RunReport::new(Experiment::Identities, config, &cols);
    let cfg = config.layer_config();
    let name = config.surface.name();
    for &mu in &config.mu {
        let mut series: Vec<Vec<f64>> = vec![Vec::new(); IDENTITY_NAMES.len()];
        for level in config.level_range() {
            let grid = grid_at(config.surface, level)?;
            let res = report.time(format!("{name} level {level} mu {mu}"), || {
                identity_residuals(&grid, mu, &cfg, config.probe_degree)
            })?;
            let mut row: Vec<Cell> = vec![name.into(), level.into(), mu.into()];
            let vals: Vec<f64> = IDENTITY_NAMES.iter().map(|n| res.get(n).unwrap_or(f64::NAN)).collect();
            row.extend(vals.iter().map(|&v| Cell::Num(v)));
            for (k, &v) in vals.iter().enumerate() {
                row.push(rate(series[k].last().copied(), v));
                series[k].push(v);
            }
            report.rows.push(row);
        }
        let tol = &config.tolerances;
        for (k, n) in IDENTITY_NAMES.iter().enumerate() {
            let s = &series[k];
            if *n == "partition" {
                let worst = s.iter().copied().fold(0.0, f64::max);
                report.push_check(format!("partition mu={mu}"), worst <= tol.partition, format!("max {worst:.3e} <= {:.0e}", tol.partition));
            } else {
                report.push_check(format!("{n} decreasing mu={mu}"), strictly_decreasing(s), fmt_seq(s));
            }
        }
        let k = IDENTITY_NAMES.iter().position(|n| *n == "plemelj_square").expect("named");
        let last = *series[k].last().expect("nonempty level range");
        report.push_check(
            format!("plemelj_square final mu={mu}"),
            last <= tol.plemelj_square,
            format!("{last:.3e} <= {:.0e}", tol.plemelj_square),
        );
    }
    Ok(report)
}

fn run_jump(config: &ExperimentConfig) -> Result<RunReport> {
    let mut report = RunReport::new(Experiment::Jump, config, &["surface", "level", "mu", "jump_residual", "diverged_nodes", "rate"]);
    let cfg = config.layer_config();
    let name = config.surface.name();
    for &mu in &config.mu {
        let mut series = Vec::new();
        for level in config.level_range() {
            let grid = grid_at(config.surface, level)?;
            let g = smooth_density(&grid, config.seed);
            let (res, diverged) = report.time(format!("{name} level {level} mu {mu}"), || {
                let plus = one_sided_trace_report(&g, Side::Plus, mu, &cfg)?;
                let minus = one_sided_trace_report(&g, Side::Minus, mu, &cfg)?;
                let ng = g.map_nodes(|i| alpha_dot(&grid.normals[i]) * C64::i());
                let r = plus.trace.sub(&minus.trace).add(&ng).l2_norm() / g.l2_norm();
                Ok((r, plus.diverged.len() + minus.diverged.len()))
            })?;
            report.rows.push(vec![name.into(), level.into(), mu.into(), res.into(), diverged.into(), rate(series.last().copied(), res)]);
            series.push(res);
        }
        report.push_check(format!("jump decreasing mu={mu}"), strictly_decreasing(&series), fmt_seq(&series));
        if config.surface.is_sphere() {
            let last = *series.last().expect("nonempty level range");
            let tol = config.tolerances.jump;
            report.push_check(format!("jump final mu={mu}"), last <= tol, format!("{last:.3e} <= {tol:.0e}"));
        }
    }
    Ok(report)
}

fn run_reproduce(config: &ExperimentConfig) -> Result<RunReport> {
    let cols = ["surface", "level", "mu", "source_radius", "field_residual", "trace_residual", "rate_trace"];
    let mut report = RunReport::new(Experiment::Reproduce, config, &cols);
    let cfg = config.layer_config();
    let name = config.surface.name();
    let xs = config.interior();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let c = Spinor::from_fn(|_, _| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
    let tol = config.tolerances.clone();
    for &mu in &config.mu {
        let mut series: Vec<Vec<(f64, f64)>> = vec![Vec::new(); config.sources.len()];
        for level in config.level_range() {
            let grid = grid_at(config.surface, level)?;
            let cs = report.time(format!("{name} level {level} mu {mu} C_s"), || assemble_cs(&grid, mu, cfg.method))?;
            for (k, x0) in config.sources.iter().enumerate() {
                let x0 = Vec3::new(x0[0], x0[1], x0[2]);
                let r = reproducing_residual_with(&cs, mu, &x0, &c, &xs, &cfg)?;
                let prev = series[k].last().map(|p| p.1);
                report.rows.push(vec![
                    name.into(),
                    level.into(),
                    mu.into(),
                    x0.norm().into(),
                    r.field.into(),
                    r.trace_relative.into(),
                    rate(prev, r.trace_relative),
                ]);
                series[k].push((r.field, r.trace_relative));
            }
        }
        for (k, s) in series.iter().enumerate() {
            let radius = Vec3::from(config.sources[k]).norm();
            let &(field, trace) = s.last().expect("nonempty level range");
            report.push_check(
                format!("field mu={mu} |x0|={radius}"),
                field <= tol.reproduce_field,
                format!("{field:.3e} <= {:.0e}", tol.reproduce_field),
            );
            report.push_check(
                format!("trace mu={mu} |x0|={radius}"),
                trace <= tol.reproduce_trace,
                format!("{trace:.3e} <= {:.0e}", tol.reproduce_trace),
            );
            let t: Vec<f64> = s.iter().map(|p| p.1).collect();
            report.push_check(format!("trace decreasing mu={mu} |x0|={radius}"), strictly_decreasing(&t), fmt_seq(&t));
        }
    }
    Ok(report)
}

fn run_smoothing(config: &ExperimentConfig) -> Result<RunReport> {
    if !config.surface.is_sphere() {
        return Err(Error::Unsupported("the smoothing profile needs a sphere".into()));
    }
    let mut report = RunReport::new(Experiment::Smoothing, config, &["surface", "level", "mu", "degree", "gain"]);
    let level = config.levels[1];
    let grid = grid_at(config.surface, level)?;
    let cfg = config.layer_config();
    for &mu in &config.mu {
        let profile = report.time(format!("level {level} mu {mu}"), || {
            let cs = assemble_cs(&grid, mu, cfg.method)?;
            smoothing_profile(&make_anticommutator(&cs, &grid)?, &config.smoothing_degrees)
        })?;
        for &(l, gain) in &profile {
            report.rows.push(vec!["sphere".into(), level.into(), mu.into(), l.into(), gain.into()]);
        }
        let pts: Vec<(f64, f64)> = profile.iter().map(|&(l, g)| (l as f64, g)).collect();
        let slope = loglog_slope(&pts);
        if mu == 0.0 {
            // 𝒜 vanishes identically on the sphere at μ = 0
            report.push_check(format!("slope mu={mu}"), true, format!("{slope:.3}, informational: A = 0 on the sphere"));
        } else {
            let tol = config.tolerances.smoothing_slope;
            report.push_check(format!("slope mu={mu}"), slope <= tol, format!("{slope:.3} <= {tol}"));
        }
    }
    Ok(report)
}

fn run_mit(config: &ExperimentConfig) -> Result<RunReport> {
    let cols = [
        "surface",
        "level",
        "bootstrap_residual",
        "rate",
        "bootstrap_literal",
        "beta_commutation",
        "beta_anticommutation_literal",
        "boundary_form",
    ];
    let mut report = RunReport::new(Experiment::Mit, config, &cols);
    report.header.push("mit runs at mu = 0 regardless of the mu list".into());
    let cfg = config.layer_config();
    let name = config.surface.name();
    let (mut boot, mut comm, mut forms) = (Vec::new(), Vec::new(), Vec::new());
    for level in config.level_range() {
        let grid = grid_at(config.surface, level)?;
        let r = report.time(format!("{name} level {level}"), || {
            let ops = CalderonOps::assemble(&grid, 0.0, &cfg)?;
            mit_bootstrap_with(&ops, &smooth_density(&grid, config.seed))
        })?;
        let f = mit_project(&random_trace(&grid, config.seed.wrapping_add(1)))?;
        let g = mit_project(&random_trace(&grid, config.seed.wrapping_add(2)))?;
        let form = mit_boundary_form(&f, &g)?.norm() / (f.l2_norm() * g.l2_norm());
        report.rows.push(vec![
            name.into(),
            level.into(),
            r.residual.into(),
            rate(boot.last().copied(), r.residual),
            r.literal_residual.into(),
            r.beta_commutation.into(),
            r.beta_anticommutation.into(),
            form.into(),
        ]);
        boot.push(r.residual);
        comm.push(r.beta_commutation);
        forms.push(form);
    }
    let tol = &config.tolerances;
    let worst = forms.iter().copied().fold(0.0, f64::max);
    report.push_check("boundary_form", worst <= tol.mit_form, format!("max {worst:.3e} <= {:.0e}", tol.mit_form));
    report.push_check("bootstrap decreasing", strictly_decreasing(&boot), fmt_seq(&boot));
    report.push_check("beta_commutation decreasing", decreasing_with_floor(&comm, tol.round_off), fmt_seq(&comm));
    Ok(report)
}

fn run_shell_sweep(config: &ExperimentConfig) -> Result<RunReport> {
    let cols = ["surface", "level", "tau", "sigma_min", "sigma_exact", "kappa"];
    let mut report = RunReport::new(Experiment::ShellSweep, config, &cols);
    let level = config.levels[1];
    let grid = build_surface(config.surface, level)?;
    let rows = report.time(format!("level {level}"), || Ok(shell_system_conditioning(&grid, config.mu[0], &config.tau)))?;
    let mut worst: f64 = 0.0;
    for r in &rows {
        let exact = shell_sigma_min_exact(r.tau);
        worst = worst.max((r.sigma_min - exact).abs());
        report.rows.push(vec![
            config.surface.name().into(),
            level.into(),
            r.tau.into(),
            r.sigma_min.into(),
            exact.into(),
            r.kappa.into(),
        ]);
    }
    let tol = config.tolerances.sigma_min;
    report.push_check("sigma_min law", worst <= tol, format!("max deviation {worst:.3e} <= {tol:.0e}"));
    Ok(report)
}

fn run_critical(config: &ExperimentConfig) -> Result<RunReport> {
    if !config.surface.is_sphere() {
        return Err(Error::Unsupported("the critical witness needs a sphere".into()));
    }
    let mu = config.mu.iter().copied().find(|&m| m != 0.0).ok_or(Error::ZeroMass)?;
    let w = &config.witness;
    let cols = ["study", "level", "cutoff", "transm_residual", "h_half_norm", "f_minus_half_norm"];
    let mut report = RunReport::new(Experiment::Critical, config, &cols);
    report.header.push(format!("critical witness at mu = {mu}"));
    let mut cutoffs = w.cutoffs.clone();
    cutoffs.sort_unstable();
    cutoffs.dedup();
    let lmax = cutoffs.iter().copied().chain([w.refine_cutoff]).max().unwrap_or(0);
    let spec = HarmonicSpectrum::rough(lmax, w.delta, config.seed);

    let mut sweep_cutoffs = cutoffs.clone();
    if !sweep_cutoffs.contains(&w.refine_cutoff) {
        sweep_cutoffs.push(w.refine_cutoff);
    }
    let grid = grid_at(config.surface, w.level)?;
    let sweep = report.time(format!("sweep level {}", w.level), || critical_witness(&grid, mu, w.epsilon, &spec, &sweep_cutoffs))?;
    let mut refine = Vec::new();
    for &level in &w.refine_levels {
        let g = grid_at(config.surface, level)?;
        let row = report.time(format!("refine level {level}"), || critical_witness(&g, mu, w.epsilon, &spec, &[w.refine_cutoff]))?;
        refine.push((level, row[0]));
    }
    let top = *sweep.iter().find(|r| r.cutoff == w.refine_cutoff).expect("refine cutoff is in the sweep");
    refine.push((w.level, top));

    for r in sweep.iter().filter(|r| cutoffs.contains(&r.cutoff)) {
        report.rows.push(vec![
            "cutoff".into(),
            w.level.into(),
            r.cutoff.into(),
            r.transm_residual.into(),
            r.h_half_norm.into(),
            r.f_minus_half_norm.into(),
        ]);
    }
    for (level, r) in &refine {
        report.rows.push(vec![
            "refine".into(),
            (*level).into(),
            r.cutoff.into(),
            r.transm_residual.into(),
            r.h_half_norm.into(),
            r.f_minus_half_norm.into(),
        ]);
    }

    let tol = &config.tolerances;
    let by_cut: Vec<_> = sweep.iter().filter(|r| cutoffs.contains(&r.cutoff)).collect();
    let growth: Vec<f64> = by_cut.windows(2).map(|p| p[1].h_half_norm / p[0].h_half_norm).collect();
    report.push_check(
        "h_half_norm growth per doubling",
        growth.iter().all(|&g| g >= tol.growth),
        format!("ratios {} >= {}", growth.iter().map(|g| format!("{g:.4}")).collect::<Vec<_>>().join(", "), tol.growth),
    );
    let fm: Vec<f64> = by_cut.iter().map(|r| r.f_minus_half_norm).collect();
    let hi = fm.iter().copied().fold(0.0, f64::max);
    let lo = fm.iter().copied().fold(f64::INFINITY, f64::min);
    let steps: Vec<String> = fm.windows(2).map(|p| format!("{:.4}", p[1] / p[0])).collect();
    report.push_check(
        "f_minus_half_norm flatness",
        hi / lo <= tol.flatness,
        format!("max/min {:.4} <= {} (per doubling {})", hi / lo, tol.flatness, steps.join(", ")),
    );
    let t: Vec<f64> = refine.iter().map(|r| r.1.transm_residual).collect();
    report.push_check("transm_residual decreasing under refinement", strictly_decreasing(&t), fmt_seq(&t));
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(exp: &str) -> ExperimentConfig {
        ExperimentConfig { experiment: exp.into(), levels: [0, 1], ..Default::default() }
    }

    #[test]
    fn names_round_trip() {
        for e in Experiment::ALL {
            assert_eq!(e.name().parse::<Experiment>().unwrap(), e);
        }
        assert!(matches!("bogus".parse::<Experiment>(), Err(Error::UnknownExperiment(_))));
    }

    #[test]
    fn config_round_trips_through_toml() {
        let c = ExperimentConfig { ball_radius: Some(5.0), ..config("jump") };
        let back = ExperimentConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        let with_path = ExperimentConfig { output: Some("x.csv".into()), ..c.clone() };
        assert_eq!(with_path.to_toml(), c.to_toml());
        let partial = ExperimentConfig::from_toml("experiment = \"mit\"\nlevels = [1, 2]\n[surface]\nkind = \"torus\"\nmajor = 2.0\nminor = 0.7\n").unwrap();
        assert_eq!(partial.levels, [1, 2]);
        assert_eq!(partial.tolerances, Tolerances::default());
        assert!(ExperimentConfig::from_toml("nonsense = 1").is_err());
    }

    #[test]
    fn validation_errors() {
        let mut c = config("identities");
        c.levels = [3, 1];
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = config("identities");
        c.surface = SurfaceKind::Torus { major: 1.0, minor: 1.5 };
        assert!(matches!(run_experiment(&c), Err(Error::InvalidSurface(_))));
        let c = config("nope");
        assert!(matches!(run_experiment(&c), Err(Error::UnknownExperiment(_))));
        let c = ExperimentConfig { ball_radius: Some(1.5), ..config("jump") };
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let c = ExperimentConfig { surface: SurfaceKind::Ellipsoid { a: 1.0, b: 1.3, c: 0.8 }, ..config("smoothing") };
        assert!(matches!(run_experiment(&c), Err(Error::Unsupported(_))));
        let c = ExperimentConfig { mu: vec![0.0], ..config("critical") };
        assert!(matches!(run_experiment(&c), Err(Error::ZeroMass)));
    }

    #[test]
    fn identities_schema_and_rates() {
        let c = ExperimentConfig { mu: vec![1.0], levels: [0, 2], probe_degree: 2, ..config("identities") };
        let r = run_experiment(&c).unwrap();
        assert_eq!(r.rows.len(), 3);
        assert_eq!(r.columns.len(), 3 + 16);
        let k = r.column("plemelj_square").unwrap();
        let rk = r.column("rate_plemelj_square").unwrap();
        assert_eq!(r.rows[0][rk], Cell::Empty);
        for l in 1..3 {
            let (Cell::Num(a), Cell::Num(b), Cell::Num(rate)) = (&r.rows[l - 1][k], &r.rows[l][k], &r.rows[l][rk]) else {
                panic!("numeric cells expected")
            };
            assert!((rate - (a / b).log2()).abs() < 1e-12);
        }
    }

    #[test]
    fn shell_sweep_has_one_row_per_tau() {
        let r = run_experiment(&config("shell-sweep")).unwrap();
        assert_eq!(r.rows.len(), 25);
        assert!(r.passed());
        let csv = String::from_utf8(emit_report(&r, ReportFormat::Csv)).unwrap();
        assert!(csv.contains(",inf\n"));
        assert!(csv.contains("# PASS"));
    }

    #[test]
    fn empty_report_is_header_only() {
        let r = RunReport::new(Experiment::Jump, &config("jump"), &["a", "b"]);
        let csv = String::from_utf8(emit_report(&r, ReportFormat::Csv)).unwrap();
        let body: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(body, ["a,b"]);
        let pretty = String::from_utf8(emit_report(&r, ReportFormat::Pretty)).unwrap();
        assert!(pretty.contains("PASS: 0 of 0"));
    }

    #[test]
    fn report_is_deterministic() {
        let c = ExperimentConfig { mu: vec![1.0], ..config("mit") };
        let a = emit_report(&run_experiment(&c).unwrap(), ReportFormat::Csv);
        let b = emit_report(&run_experiment(&c).unwrap(), ReportFormat::Csv);
        assert_eq!(a, b);
    }

    #[test]
    fn unwritable_path_is_an_error() {
        let r = RunReport::new(Experiment::Jump, &config("jump"), &["a"]);
        let p = Path::new("/nonexistent-dir/report.csv");
        assert!(matches!(write_report(&r, ReportFormat::Csv, Some(p)), Err(Error::Io(_))));
    }
}
