//! Error norms, convergence rates and mesh-position studies.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::assembly::{assemble, ghost_penalty_energy, Discretization, DofSplit, NitscheParams};
use crate::geometry::ReferenceMesh;
use crate::mapping::GradedMap;
use crate::par::{self, Execution};
use crate::problems::{sector_polygon, ExactSolution, SectorProblem, SECTOR_ARC_SEGMENTS};
use crate::solver::{solve, SolveMethod};
use crate::{Error, Result, Vec2};

/// Subdivision levels toward the corner in error quadrature.
const ERROR_CORNER_LEVELS: usize = 30;

/// Errors of one discrete solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub h: f64,
    pub n_dofs: usize,
    pub l2: f64,
    pub h1_semi: f64,
    /// `(‖∇e‖² + h‖n·B∇̂e‖²_∂ + β/h‖e‖²_∂ + s_h(u_h,u_h))^{1/2}` in reference
    /// coordinates.
    pub energy: f64,
    pub gamma: f64,
    pub omega: Option<f64>,
    pub p: usize,
    pub beta: f64,
    pub tau: f64,
}

#[derive(Default)]
struct Sums {
    l2: f64,
    h1: f64,
    bnd_flux: f64,
    bnd_value: f64,
}

/// Error of the coefficient vector `u` against `exact`, using `order` Gauss
/// points per direction (default `p + 3`).
pub fn compute_errors(
    disc: &Discretization,
    u: &[f64],
    exact: &dyn ExactSolution,
    params: NitscheParams,
    order: Option<usize>,
    exec: Execution,
) -> ErrorReport {
    let order = order.unwrap_or(disc.degree() + 3);
    let map = disc.map();
    let space = disc.space();
    let volume = |cell: usize| -> Sums {
        let mut s = Sums::default();
        let q = disc
            .volume_quadrature(cell, order, ERROR_CORNER_LEVELS)
            .expect("quadrature cells are active and not slivers");
        for ((x, w), &piece) in q.points.iter().zip(&q.weights).zip(&q.pieces) {
            let e = space.eval_in_piece(cell, piece, *x, 1);
            let xp = map.forward(*x);
            let err = exact.value(xp) - e.combine(u, 0, 0);
            let grad_ref = map.reference_gradient(*x, exact.gradient(xp))
                - Vec2::new(e.combine(u, 1, 0), e.combine(u, 0, 1));
            s.l2 += w * map.load_weight(*x) * err * err;
            s.h1 += w * grad_ref.dot(&(map.b_matrix(*x) * grad_ref));
        }
        s
    };
    let boundary = |cell: usize| -> Sums {
        let mut s = Sums::default();
        let Ok(q) = disc.active().boundary_quadrature(cell, order) else {
            return s;
        };
        for i in 0..q.len() {
            let x = q.points[i];
            let e = space.eval_in_piece(cell, q.pieces[i], x, 1);
            let xp = map.forward(x);
            let err = exact.value(xp) - e.combine(u, 0, 0);
            let grad_ref = map.reference_gradient(x, exact.gradient(xp))
                - Vec2::new(e.combine(u, 1, 0), e.combine(u, 0, 1));
            let flux = q.normals[i].dot(&(map.b_matrix(x) * grad_ref));
            s.bnd_flux += q.weights[i] * flux * flux;
            s.bnd_value += q.weights[i] * err * err;
        }
        s
    };
    let vol = par::map_collect(exec, &disc.quadrature_cells(), |&c| volume(c));
    let bnd = par::map_collect(exec, &disc.active().boundary_cells(), |&c| boundary(c));
    let mut t = Sums::default();
    for s in vol.iter().chain(&bnd) {
        t.l2 += s.l2;
        t.h1 += s.h1;
        t.bnd_flux += s.bnd_flux;
        t.bnd_value += s.bnd_value;
    }
    let h = disc.h();
    let ghost = ghost_penalty_energy(disc, params, u);
    let energy = t.h1 + h * t.bnd_flux + params.beta / h * t.bnd_value + ghost;
    ErrorReport {
        h,
        n_dofs: disc.n_dofs(),
        l2: t.l2.sqrt(),
        h1_semi: t.h1.sqrt(),
        energy: energy.sqrt(),
        gamma: map.gamma(),
        omega: None,
        p: disc.degree(),
        beta: params.beta,
        tau: params.tau,
    }
}

/// Least-squares slope of `log e` against `log h` over the last three
/// points.
pub fn fit_rate(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 3 {
        return Err(Error::TooFewRows {
            needed: 3,
            got: points.len(),
        });
    }
    let tail = &points[points.len() - 3..];
    let xs: Vec<f64> = tail.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = tail.iter().map(|p| p.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / 3.0;
    let my = ys.iter().sum::<f64>() / 3.0;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let rate = sxy / sxx;
    if !rate.is_finite() {
        return Err(Error::param("rates", "mesh sizes must be distinct and errors positive"));
    }
    Ok(rate)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FittedRates {
    pub l2: f64,
    pub h1_semi: f64,
    pub energy: f64,
}

/// Errors over a refinement sequence.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RateTable {
    pub rows: Vec<ErrorReport>,
}

impl RateTable {
    pub fn new(mut rows: Vec<ErrorReport>) -> Self {
        rows.sort_by(|a, b| b.h.total_cmp(&a.h));
        RateTable { rows }
    }

    fn column(&self, f: impl Fn(&ErrorReport) -> f64) -> Vec<(f64, f64)> {
        self.rows.iter().map(|r| (r.h, f(r))).collect()
    }

    pub fn fitted(&self) -> Result<FittedRates> {
        Ok(FittedRates {
            l2: fit_rate(&self.column(|r| r.l2))?,
            h1_semi: fit_rate(&self.column(|r| r.h1_semi))?,
            energy: fit_rate(&self.column(|r| r.energy))?,
        })
    }

    /// Rate between row `i - 1` and row `i`.
    pub fn step_rate(&self, i: usize, f: impl Fn(&ErrorReport) -> f64) -> Option<f64> {
        if i == 0 || i >= self.rows.len() {
            return None;
        }
        let (a, b) = (&self.rows[i - 1], &self.rows[i]);
        Some((f(a) / f(b)).ln() / (a.h / b.h).ln())
    }

    /// CSV with columns `h,n_dofs,l2,h1_semi,energy,rate_l2,rate_h1`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("h,n_dofs,l2,h1_semi,energy,rate_l2,rate_h1\n");
        for (i, r) in self.rows.iter().enumerate() {
            let fmt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
            s.push_str(&format!(
                "{},{},{:.12e},{:.12e},{:.12e},{},{}\n",
                r.h,
                r.n_dofs,
                r.l2,
                r.h1_semi,
                r.energy,
                fmt(self.step_rate(i, |r| r.l2)),
                fmt(self.step_rate(i, |r| r.h1_semi)),
            ));
        }
        s
    }
}

/// Mesh placement for a sector run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum ShiftSpec {
    /// Corner at the centre of a cell.
    Center,
    Fixed { x: f64, y: f64 },
}

impl ShiftSpec {
    pub fn resolve(&self, h: f64) -> Vec2 {
        match *self {
            ShiftSpec::Center => ReferenceMesh::centering_shift(h),
            ShiftSpec::Fixed { x, y } => Vec2::new(x.rem_euclid(h), y.rem_euclid(h)),
        }
    }
}

/// Everything that defines a sector experiment except the mesh.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SectorSetup {
    pub omega: f64,
    pub p: usize,
    pub regularity: usize,
    pub gamma: f64,
    pub params: NitscheParams,
    pub split: DofSplit,
    pub solver: SolveMethod,
    /// Add the smooth term `x²y` to the singular solution.
    pub smooth: bool,
    pub n_arc: usize,
    pub tol: f64,
}

impl SectorSetup {
    /// `C^{p-1}` splines, `γ = 2p`, `β = 100`, `τ = 0.1`.
    pub fn new(omega: f64, p: usize) -> Self {
        SectorSetup {
            omega,
            p,
            regularity: p.saturating_sub(1),
            gamma: 2.0 * p as f64,
            params: NitscheParams::default(),
            split: DofSplit::Auto,
            solver: SolveMethod::Direct,
            smooth: false,
            n_arc: SECTOR_ARC_SEGMENTS,
            tol: 1e-10,
        }
    }

    pub fn problem(&self) -> Result<SectorProblem> {
        Ok(SectorProblem::new(self.omega)?.with_smooth(self.smooth))
    }

    pub fn discretize(&self, h: f64, shift: Vec2) -> Result<Discretization> {
        let domain = sector_polygon(self.omega, self.n_arc)?;
        let mesh = ReferenceMesh::new(h, shift)?;
        Discretization::new(domain, GradedMap::new(self.gamma)?, &mesh, self.p, self.regularity, self.split)
    }
}

/// Result of one solve.
#[derive(Debug, Clone, Serialize)]
pub struct SectorRun {
    pub report: ErrorReport,
    pub shift: [f64; 2],
    pub split: bool,
    pub iterations: usize,
    pub residual: f64,
    #[serde(skip)]
    pub solution: Vec<f64>,
}

/// Discretizes, assembles, solves and measures errors for one mesh.
pub fn run_sector(setup: &SectorSetup, h: f64, shift: Vec2, exec: Execution) -> Result<SectorRun> {
    let disc = setup.discretize(h, shift)?;
    let problem = setup.problem()?;
    let sys = assemble(&disc, &problem, setup.params, exec);
    let sol = solve(&sys.matrix, &sys.rhs, setup.tol, setup.solver)?;
    let mut report = compute_errors(&disc, &sol.solution, &problem, setup.params, None, exec);
    report.omega = Some(setup.omega);
    Ok(SectorRun {
        report,
        shift: [shift.x, shift.y],
        split: disc.is_split(),
        iterations: sol.iterations,
        residual: sol.residual_norm,
        solution: sol.solution,
    })
}

/// Runs every mesh size; levels run concurrently under `exec`.
pub fn convergence_series(
    setup: &SectorSetup,
    hs: &[f64],
    shift: ShiftSpec,
    exec: Execution,
) -> Result<(RateTable, Vec<SectorRun>)> {
    let runs = par::map_collect(exec, hs, |&h| run_sector(setup, h, shift.resolve(h), exec));
    let runs: Vec<SectorRun> = runs.into_iter().collect::<Result<_>>()?;
    let table = RateTable::new(runs.iter().map(|r| r.report.clone()).collect());
    Ok((table, runs))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Statistics {
    pub mean: f64,
    /// Sample standard deviation.
    pub std: f64,
    pub rel_std: f64,
    /// Largest `|x - mean| / mean`.
    pub max_rel_dev: f64,
}

impl Statistics {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = if xs.len() > 1 {
            xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        let std = var.sqrt();
        Statistics {
            mean,
            std,
            rel_std: std / mean,
            max_rel_dev: xs.iter().map(|x| (x - mean).abs() / mean).fold(0.0, f64::max),
        }
    }

    /// Fraction of samples within `tol` relative deviation of the mean.
    pub fn fraction_within(xs: &[f64], tol: f64) -> f64 {
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        xs.iter().filter(|x| ((*x - mean) / mean).abs() <= tol).count() as f64 / xs.len() as f64
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ShiftStudy {
    pub seed: u64,
    pub h: f64,
    pub trials: Vec<SectorRun>,
    pub l2: Statistics,
    pub h1_semi: Statistics,
    pub energy: Statistics,
}

/// Shift of trial `trial`: uniform in `[0, h)²` from a ChaCha8 stream keyed
/// by `(seed, trial)`.
pub fn trial_shift(seed: u64, trial: usize, h: f64) -> Vec2 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64);
    Vec2::new(rng.random_range(0.0..h), rng.random_range(0.0..h))
}

/// Solves with `n_trials` random mesh shifts and reports error statistics.
pub fn mesh_shift_study(
    setup: &SectorSetup,
    h: f64,
    n_trials: usize,
    seed: u64,
    exec: Execution,
) -> Result<ShiftStudy> {
    mesh_shift_study_with(setup, h, n_trials, exec, seed, |t| trial_shift(seed, t, h))
}

/// Like [`mesh_shift_study`] with caller-supplied shifts.
pub fn mesh_shift_study_with(
    setup: &SectorSetup,
    h: f64,
    n_trials: usize,
    exec: Execution,
    seed: u64,
    shift: impl Fn(usize) -> Vec2 + Sync + Send,
) -> Result<ShiftStudy> {
    if n_trials < 10 {
        return Err(Error::param("n_trials", format!("need at least 10 trials, got {n_trials}")));
    }
    let runs = par::map_range(exec, n_trials, |t| {
        let s = shift(t);
        run_sector(setup, h, s, Execution::Sequential).map_err(|e| Error::TrialFailed {
            trial: t,
            sx: s.x,
            sy: s.y,
            source: Box::new(e),
        })
    });
    let trials: Vec<SectorRun> = runs.into_iter().collect::<Result<_>>()?;
    let col = |f: fn(&ErrorReport) -> f64| trials.iter().map(|r| f(&r.report)).collect::<Vec<_>>();
    Ok(ShiftStudy {
        seed,
        h,
        l2: Statistics::of(&col(|r| r.l2)),
        h1_semi: Statistics::of(&col(|r| r.h1_semi)),
        energy: Statistics::of(&col(|r| r.energy)),
        trials,
    })
}
