//! Configuration and driver for the `gradedfem` command-line tool.
//!
//! A run is described by a [`RunConfig`], read from an optional JSON file and
//! overridden by flags. Results go to `report.json` (which embeds the
//! resolved configuration), `rates.csv` and optionally `field.vtk`.
//!
//! Exit codes: 0 success, 2 invalid configuration, 3 assembly or solve
//! failure, 4 failed `--check`.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::analysis::{
    compute_errors, convergence_series, mesh_shift_study, FittedRates, RateTable, SectorRun, SectorSetup,
    ShiftSpec, ShiftStudy,
};
use crate::assembly::{assemble, Discretization, DofSplit, NitscheParams};
use crate::geometry::{PolygonDomain, ReferenceMesh};
use crate::mapping::{min_gamma, GradedMap};
use crate::multipatch::{run_multipatch, MultipatchRun, PatchSet, PatchSetSpec, TopEdgeProblem};
use crate::par::{self, Execution};
use crate::problems::{FnProblem, Problem, SECTOR_ARC_SEGMENTS};
use crate::solver::{solve, SolveMethod};
use crate::Vec2;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_SOLVE: i32 = 3;
pub const EXIT_CHECK: i32 = 4;

/// Relative spread allowed in `--check` for mesh-shift studies.
const SHIFT_CHECK_H1: f64 = 0.10;
const SHIFT_CHECK_L2: f64 = 0.15;
/// Half-width of the rate windows used by `--check`.
const RATE_TOLERANCE: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProblemKind {
    /// Singular solution on a circle sector.
    #[serde(rename = "sector")]
    Sector,
    /// Singular solution plus `x²y`.
    #[serde(rename = "sector+smooth")]
    SectorSmooth,
    /// `u = x²y` on a polygon read from `--polygon`.
    #[serde(rename = "polygon")]
    Polygon,
    /// Three-patch inverted T with data on the top edge.
    #[serde(rename = "multipatch-fig8")]
    MultipatchT,
    /// `u = x²y` on the patch set given in the config file.
    #[serde(rename = "multipatch")]
    Multipatch,
}

impl FromStr for ProblemKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| {
            format!("unknown problem `{s}` (expected sector, sector+smooth, polygon, multipatch-fig8 or multipatch)")
        })
    }
}

/// `"auto"` (= 2p) or a number.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum GammaSpec {
    #[default]
    Auto,
    Value(f64),
}

impl Serialize for GammaSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            GammaSpec::Auto => s.serialize_str("auto"),
            GammaSpec::Value(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for GammaSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        match serde_json::Value::deserialize(d)? {
            serde_json::Value::String(s) => s.parse().map_err(serde::de::Error::custom),
            serde_json::Value::Number(n) => Ok(GammaSpec::Value(n.as_f64().unwrap_or(f64::NAN))),
            other => Err(serde::de::Error::custom(format!("invalid gamma {other}"))),
        }
    }
}

impl FromStr for GammaSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "auto" {
            return Ok(GammaSpec::Auto);
        }
        s.parse().map(GammaSpec::Value).map_err(|_| format!("invalid gamma `{s}`"))
    }
}

/// Mesh placement: `center`, `x,y`, or `random(seed,n)` / `random(n)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum ShiftConfig {
    Center,
    Fixed { x: f64, y: f64 },
    /// `seed` falls back to the config's `seed`.
    Random { seed: Option<u64>, n: usize },
}

impl Default for ShiftConfig {
    fn default() -> Self {
        ShiftConfig::Center
    }
}

impl FromStr for ShiftConfig {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let s = s.trim();
        if s == "center" {
            return Ok(ShiftConfig::Center);
        }
        if let Some(inner) = s.strip_prefix("random(").and_then(|r| r.strip_suffix(')')) {
            let parts: Vec<&str> = inner.split(',').map(str::trim).collect();
            let num = |t: &str| t.parse::<u64>().map_err(|_| format!("invalid shift `{s}`"));
            return match parts.as_slice() {
                [n] => Ok(ShiftConfig::Random { seed: None, n: num(n)? as usize }),
                [seed, n] => Ok(ShiftConfig::Random { seed: Some(num(seed)?), n: num(n)? as usize }),
                _ => Err(format!("invalid shift `{s}`")),
            };
        }
        let xy: Vec<f64> = s
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| format!("invalid shift `{s}` (expected center, x,y or random(seed,n))"))?;
        match xy.as_slice() {
            [x, y] => Ok(ShiftConfig::Fixed { x: *x, y: *y }),
            _ => Err(format!("invalid shift `{s}`")),
        }
    }
}

/// Everything that defines a run. Missing fields take the defaults of
/// [`RunConfig::default`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemKind,
    pub omega: f64,
    pub p: usize,
    /// Defaults to `p - 1`.
    pub regularity: Option<usize>,
    pub gamma: GammaSpec,
    pub beta: f64,
    pub tau: f64,
    pub h: Vec<f64>,
    pub shift: ShiftConfig,
    pub fix: DofSplit,
    /// Also run with the split off (and on) and report both.
    pub compare_fix: bool,
    pub solver: SolveMethod,
    pub tol: f64,
    pub seed: u64,
    pub out: PathBuf,
    pub check: bool,
    pub polygon: Option<PathBuf>,
    pub patches: Option<PatchSetSpec>,
    pub dump_field: bool,
    /// Samples per direction in `field.vtk`.
    pub field_samples: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            problem: ProblemKind::Sector,
            omega: 1.5 * std::f64::consts::PI,
            p: 2,
            regularity: None,
            gamma: GammaSpec::Auto,
            beta: 100.0,
            tau: 0.1,
            h: vec![0.4, 0.2, 0.1, 0.05],
            shift: ShiftConfig::Center,
            fix: DofSplit::Auto,
            compare_fix: false,
            solver: SolveMethod::Direct,
            tol: 1e-10,
            seed: 0,
            out: PathBuf::from("out"),
            check: false,
            polygon: None,
            patches: None,
            dump_field: false,
            field_samples: 101,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "gradedfem", version, about = "Graded cut finite element solver for Poisson problems with corners")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a convergence series, mesh-shift study or multipatch example.
    Run(RunArgs),
}

#[derive(Debug, Args, Default)]
pub struct RunArgs {
    /// JSON file with a (partial) configuration; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// sector, sector+smooth, polygon, multipatch-fig8 or multipatch.
    #[arg(long)]
    pub problem: Option<ProblemKind>,
    /// Opening angle in radians.
    #[arg(long)]
    pub omega: Option<f64>,
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long)]
    pub regularity: Option<usize>,
    /// Grading exponent or `auto` (= 2p).
    #[arg(long)]
    pub gamma: Option<GammaSpec>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    /// Comma-separated reference mesh sizes.
    #[arg(long, value_delimiter = ',')]
    pub h: Option<Vec<f64>>,
    /// center, x,y or random(seed,n).
    #[arg(long, allow_hyphen_values = true)]
    pub shift: Option<ShiftConfig>,
    /// DOF splitting across disjoint support parts: on, off or auto.
    #[arg(long)]
    pub fix: Option<DofSplit>,
    /// Run both with and without the DOF split.
    #[arg(long)]
    pub compare_fix: bool,
    /// direct or cg.
    #[arg(long)]
    pub solver: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Check rates (or spreads) against their expected windows.
    #[arg(long)]
    pub check: bool,
    /// Polygon JSON for `--problem polygon`.
    #[arg(long)]
    pub polygon: Option<PathBuf>,
    /// Write `field.vtk` for the finest mesh.
    #[arg(long)]
    pub dump_field: bool,
}

/// Failure of a run, mapped to an exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("run failed: {0}")]
    Run(#[from] crate::Error),
    #[error("check failed: {}", .0.join("; "))]
    Check(Vec<String>),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Run(_) => EXIT_SOLVE,
            CliError::Check(_) => EXIT_CHECK,
        }
    }
}

fn config_err(field: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("`{field}`: {msg}"))
}

impl RunConfig {
    /// Reads the optional config file and applies flag overrides.
    pub fn from_args(args: &RunArgs) -> Result<Self, CliError> {
        let mut c = match &args.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| config_err("config", format!("{}: {e}", path.display())))?;
                serde_json::from_str(&text).map_err(|e| config_err("config", format!("{}: {e}", path.display())))?
            }
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = args.$f.clone() { c.$f = v; })* };
        }
        set!(problem, omega, p, gamma, beta, tau, h, shift, fix, seed, out);
        if let Some(r) = args.regularity {
            c.regularity = Some(r);
        }
        if let Some(s) = &args.solver {
            c.solver = serde_json::from_value(serde_json::Value::String(s.clone()))
                .map_err(|_| config_err("solver", format!("unknown solver `{s}` (expected direct or cg)")))?;
        }
        if let Some(p) = &args.polygon {
            c.polygon = Some(p.clone());
        }
        c.check |= args.check;
        c.dump_field |= args.dump_field;
        c.compare_fix |= args.compare_fix;
        Ok(c)
    }

    /// Fills in `auto` values and validates every field.
    pub fn resolve(mut self) -> Result<Self, CliError> {
        if self.p == 0 || self.p > 6 {
            return Err(config_err("p", format!("degree must be in 1..=6, got {}", self.p)));
        }
        let r = self.regularity.unwrap_or(self.p - 1);
        if r >= self.p {
            return Err(config_err("regularity", format!("must be below p = {}, got {r}", self.p)));
        }
        self.regularity = Some(r);
        let gamma = match self.gamma {
            GammaSpec::Auto => 2.0 * self.p as f64,
            GammaSpec::Value(g) => g,
        };
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(config_err("gamma", format!("must be positive, got {gamma}")));
        }
        self.gamma = GammaSpec::Value(gamma);
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(config_err("beta", "must be positive"));
        }
        if !(self.tau >= 0.0 && self.tau.is_finite()) {
            return Err(config_err("tau", "must be nonnegative"));
        }
        if !(self.tol > 0.0) {
            return Err(config_err("tol", "must be positive"));
        }
        if self.h.is_empty() || self.h.iter().any(|&h| !(h > 0.0 && h <= 1.0)) {
            return Err(config_err("h", "need at least one mesh size in (0, 1]"));
        }
        if self.field_samples < 2 {
            return Err(config_err("field_samples", "need at least 2"));
        }
        match self.problem {
            ProblemKind::Sector | ProblemKind::SectorSmooth => {
                let min = min_gamma(self.p, self.omega).map_err(|e| config_err("omega", e))?;
                if gamma < min {
                    log::warn!("gamma = {gamma} is below {min}; expect reduced convergence");
                }
            }
            ProblemKind::Polygon => {
                let Some(path) = &self.polygon else {
                    return Err(config_err("polygon", "required for problem `polygon`"));
                };
                let poly = PolygonDomain::from_json_file(path).map_err(|e| config_err("polygon", format!("{}: {e}", path.display())))?;
                if gamma != 1.0 && poly.corner_index().is_none() {
                    return Err(config_err("polygon", "a graded run needs `corner_index`"));
                }
            }
            ProblemKind::Multipatch => {
                if self.patches.is_none() {
                    return Err(config_err("patches", "required for problem `multipatch`"));
                }
            }
            ProblemKind::MultipatchT => {}
        }
        if let ShiftConfig::Random { n, .. } = self.shift {
            if !matches!(self.problem, ProblemKind::Sector | ProblemKind::SectorSmooth) {
                return Err(config_err("shift", "random shifts are only supported for sector problems"));
            }
            if n < 10 {
                return Err(config_err("shift", format!("a random study needs at least 10 trials, got {n}")));
            }
        }
        Ok(self)
    }

    fn gamma_value(&self) -> f64 {
        match self.gamma {
            GammaSpec::Value(g) => g,
            GammaSpec::Auto => 2.0 * self.p as f64,
        }
    }

    fn params(&self) -> NitscheParams {
        NitscheParams {
            beta: self.beta,
            tau: self.tau,
        }
    }

    fn sector_setup(&self, split: DofSplit) -> SectorSetup {
        let mut s = SectorSetup::new(self.omega, self.p);
        s.regularity = self.regularity.unwrap_or(self.p - 1);
        s.gamma = self.gamma_value();
        s.params = self.params();
        s.split = split;
        s.solver = self.solver;
        s.smooth = self.problem == ProblemKind::SectorSmooth;
        s.n_arc = SECTOR_ARC_SEGMENTS;
        s.tol = self.tol;
        s
    }
}

/// One check with its measured value and window.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub value: f64,
    pub min: f64,
    pub max: f64,
    pub pass: bool,
}

impl CheckResult {
    fn new(name: &str, value: f64, min: f64, max: f64) -> Self {
        CheckResult {
            name: name.to_string(),
            value,
            min,
            max,
            pass: value >= min && value <= max,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SeriesReport {
    pub split: DofSplit,
    pub table: RateTable,
    pub rates: Option<FittedRates>,
}

/// Contents of `report.json`.
#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub config: RunConfig,
    pub series: Vec<SeriesReport>,
    pub shift_studies: Vec<ShiftStudy>,
    pub multipatch: Vec<MultipatchRun>,
    pub checks: Vec<CheckResult>,
}

/// What [`run`] wrote.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: Report,
    pub files: Vec<PathBuf>,
}

/// Executes a resolved configuration and writes its artifacts.
pub fn run(config: &RunConfig) -> Result<RunOutcome, CliError> {
    let config = config.clone().resolve()?;
    let exec = Execution::Parallel;
    let mut report = Report {
        config: config.clone(),
        series: Vec::new(),
        shift_studies: Vec::new(),
        multipatch: Vec::new(),
        checks: Vec::new(),
    };
    let mut field: Option<String> = None;
    match config.problem {
        ProblemKind::Sector | ProblemKind::SectorSmooth => match config.shift {
            ShiftConfig::Random { seed, n } => {
                let setup = config.sector_setup(config.fix);
                for &h in &config.h {
                    let study = mesh_shift_study(&setup, h, n, seed.unwrap_or(config.seed), exec)?;
                    report.checks.push(CheckResult::new(&format!("h={h} rel std h1"), study.h1_semi.rel_std, 0.0, SHIFT_CHECK_H1));
                    report.checks.push(CheckResult::new(&format!("h={h} rel std l2"), study.l2.rel_std, 0.0, SHIFT_CHECK_L2));
                    report.shift_studies.push(study);
                }
            }
            _ => {
                let shift = match config.shift {
                    ShiftConfig::Fixed { x, y } => ShiftSpec::Fixed { x, y },
                    _ => ShiftSpec::Center,
                };
                let splits = if config.compare_fix {
                    vec![DofSplit::Off, DofSplit::On]
                } else {
                    vec![config.fix]
                };
                for split in splits {
                    let setup = config.sector_setup(split);
                    let (table, runs) = convergence_series(&setup, &config.h, shift, exec)?;
                    if config.dump_field && field.is_none() {
                        field = Some(sector_field(&setup, &config, &runs, shift)?);
                    }
                    report.series.push(series_report(split, table));
                }
                if config.gamma_value() >= min_gamma(config.p, config.omega).unwrap_or(f64::INFINITY) {
                    rate_checks(&config, &mut report);
                }
            }
        },
        ProblemKind::Polygon => {
            let path = config.polygon.as_ref().expect("validated");
            let domain = PolygonDomain::from_json_file(path).map_err(|e| config_err("polygon", e))?;
            let shift = match config.shift {
                ShiftConfig::Fixed { x, y } => ShiftSpec::Fixed { x, y },
                _ => ShiftSpec::Center,
            };
            let problem = FnProblem::x2y();
            let mut rows = Vec::new();
            for &h in &config.h {
                let disc = Discretization::new(
                    domain.clone(),
                    GradedMap::new(config.gamma_value())?,
                    &ReferenceMesh::new(h, shift.resolve(h))?,
                    config.p,
                    config.regularity.unwrap_or(config.p - 1),
                    config.fix,
                )?;
                let sys = assemble(&disc, &problem, config.params(), exec);
                let sol = solve(&sys.matrix, &sys.rhs, config.tol, config.solver)?;
                rows.push(compute_errors(&disc, &sol.solution, &problem, config.params(), None, exec));
                if config.dump_field && Some(&h) == config.h.iter().min_by(|a, b| a.total_cmp(b)) {
                    field = Some(field_vtk(&disc, &sol.solution, config.field_samples));
                }
            }
            report.series.push(series_report(config.fix, RateTable::new(rows)));
            rate_checks(&config, &mut report);
        }
        ProblemKind::MultipatchT | ProblemKind::Multipatch => {
            let (spec, problem): (PatchSetSpec, Box<dyn Problem>) = match config.problem {
                ProblemKind::MultipatchT => (PatchSetSpec::inverted_t(config.gamma_value()), Box::new(TopEdgeProblem)),
                _ => (config.patches.clone().expect("validated"), Box::new(FnProblem::x2y())),
            };
            let mut hs = config.h.clone();
            hs.sort_by(|a, b| b.total_cmp(a));
            for &h in &hs {
                let set = PatchSet::new(&spec, h, config.p, config.regularity.unwrap_or(config.p - 1), config.fix)?;
                let r = run_multipatch(&set, problem.as_ref(), config.params(), config.solver, config.tol, exec)?;
                if config.dump_field && Some(&h) == hs.last() {
                    let mut s = String::new();
                    for (k, patch) in set.patches().iter().enumerate() {
                        s.push_str(&field_vtk(patch.discretization(), set.patch_coefficients(k, &r.solution), config.field_samples));
                    }
                    field = Some(s);
                }
                report.multipatch.push(r);
            }
            for w in report.multipatch.windows(2) {
                report.checks.push(CheckResult::new(
                    &format!("jump decreases h={}->{}", w[0].h, w[1].h),
                    w[1].interface_jump - w[0].interface_jump,
                    f64::NEG_INFINITY,
                    0.0,
                ));
            }
        }
    }
    let files = write_outputs(&config.out, &report, field.as_deref()).map_err(crate::Error::from)?;
    if config.check {
        let failed: Vec<String> = report
            .checks
            .iter()
            .filter(|c| !c.pass)
            .map(|c| format!("{} = {} outside [{}, {}]", c.name, c.value, c.min, c.max))
            .collect();
        if !failed.is_empty() {
            return Err(CliError::Check(failed));
        }
    }
    Ok(RunOutcome { report, files })
}

fn series_report(split: DofSplit, table: RateTable) -> SeriesReport {
    let rates = table.fitted().ok();
    SeriesReport { split, table, rates }
}

/// `L²` rate near `p + 1` and `H¹` rate near `p` for every series.
fn rate_checks(config: &RunConfig, report: &mut Report) {
    let p = config.p as f64;
    for s in &report.series {
        if let Some(r) = s.rates {
            let tag = format!("{:?}", s.split).to_lowercase();
            report.checks.push(CheckResult::new(&format!("{tag} l2 rate"), r.l2, p + 1.0 - RATE_TOLERANCE, p + 1.0 + RATE_TOLERANCE));
            report.checks.push(CheckResult::new(&format!("{tag} h1 rate"), r.h1_semi, p - RATE_TOLERANCE, p + RATE_TOLERANCE));
        }
    }
}

fn sector_field(setup: &SectorSetup, config: &RunConfig, runs: &[SectorRun], shift: ShiftSpec) -> Result<String, CliError> {
    let (k, run) = runs
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.report.h.total_cmp(&b.1.report.h))
        .expect("at least one mesh size");
    let h = config.h[k];
    let disc = setup.discretize(h, shift.resolve(h))?;
    Ok(field_vtk(&disc, &run.solution, config.field_samples))
}

/// Legacy VTK structured grid over the bounding box of the reference domain.
/// Points carry physical coordinates; `inside` marks samples in the domain,
/// where `u` is the discrete solution (zero elsewhere).
pub fn field_vtk(disc: &Discretization, u: &[f64], samples: usize) -> String {
    let verts = disc.domain().vertices();
    let (mut lo, mut hi) = (verts[0], verts[0]);
    for v in verts {
        lo = lo.inf(v);
        hi = hi.sup(v);
    }
    let n = samples;
    let mut pts = Vec::with_capacity(n * n);
    for j in 0..n {
        for i in 0..n {
            let t = Vec2::new(i as f64 / (n - 1) as f64, j as f64 / (n - 1) as f64);
            pts.push(lo + (hi - lo).component_mul(&t));
        }
    }
    let values = par::map_collect(Execution::Parallel, &pts, |&q| match disc.active().locate_piece(q) {
        Some((cell, piece)) => (1, disc.space().eval_in_piece(cell, piece, q, 0).combine(u, 0, 0)),
        None => (0, 0.0),
    });
    let mut s = String::new();
    let _ = writeln!(s, "# vtk DataFile Version 3.0\ngradedfem field\nASCII\nDATASET STRUCTURED_GRID");
    let _ = writeln!(s, "DIMENSIONS {n} {n} 1\nPOINTS {} double", n * n);
    for q in &pts {
        let x = disc.map().forward(*q);
        let _ = writeln!(s, "{:.12e} {:.12e} 0", x.x, x.y);
    }
    let _ = writeln!(s, "POINT_DATA {}", n * n);
    let _ = writeln!(s, "SCALARS u double 1\nLOOKUP_TABLE default");
    for (_, v) in &values {
        let _ = writeln!(s, "{v:.12e}");
    }
    let _ = writeln!(s, "SCALARS inside int 1\nLOOKUP_TABLE default");
    for (m, _) in &values {
        let _ = writeln!(s, "{m}");
    }
    let _ = writeln!(s, "VECTORS reference double");
    for q in &pts {
        let _ = writeln!(s, "{:.12e} {:.12e} 0", q.x, q.y);
    }
    s
}

fn write_outputs(dir: &Path, report: &Report, field: Option<&str>) -> std::io::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    let json = serde_json::to_string_pretty(report).map_err(std::io::Error::other)?;
    let path = dir.join("report.json");
    std::fs::write(&path, json + "\n")?;
    files.push(path);
    if let Some(s) = report.series.first() {
        let mut csv = s.table.to_csv();
        for extra in &report.series[1..] {
            // later series follow without repeating the header
            csv.push_str(extra.table.to_csv().split_once('\n').map_or("", |x| x.1));
        }
        let path = dir.join("rates.csv");
        std::fs::write(&path, csv)?;
        files.push(path);
    }
    if let Some(f) = field {
        let path = dir.join("field.vtk");
        std::fs::write(&path, f)?;
        files.push(path);
    }
    Ok(files)
}

fn threads_from_env() -> Option<usize> {
    let v = std::env::var("GRADEDFEM_THREADS").ok()?;
    match v.trim().parse::<usize>() {
        Ok(n) if n > 0 => Some(n),
        _ => {
            log::warn!("ignoring GRADEDFEM_THREADS={v}");
            None
        }
    }
}

/// Parses `args` (including the program name), runs, and returns the exit
/// code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { 0 };
        }
    };
    par::init_threads(threads_from_env());
    let Command::Run(args) = cli.command;
    let outcome = RunConfig::from_args(&args).and_then(|c| run(&c));
    match outcome {
        Ok(o) => {
            for f in &o.files {
                println!("wrote {}", f.display());
            }
            for c in &o.report.checks {
                println!("{} {} = {:.4}", if c.pass { "ok  " } else { "FAIL" }, c.name, c.value);
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
