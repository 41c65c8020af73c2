//! One function per verb. Each writes its artifacts to the output directory
//! and returns an [`Outcome`] that maps onto the exit-code contract.

use std::io;
use std::path::PathBuf;

use kfp_core::discretization::{assemble_q, VelocityGrid};
use kfp_core::eigensolver::{fit_exponent, sweep, DiffusionFit, EigenError, EigenResult, SearchOptions};
use kfp_core::equilibria::{check_assumptions, AssumptionReport, EquilibriumModel, ScanSpec};
use kfp_core::kinetic_propagator::{
    convergence_study, ConvergenceTable, GridPolicy, InitialSpec, Reference, StepControl,
};
use kfp_core::limit_problem::{drift_j, jm_limit, solve_h0_1d, LimitSolution, RescaledGrid, Regime};
use kfp_core::montecarlo::{
    empirical_cf, rescaled_displacement, simulate_sde, velocity_ks, CdfTable, CfPoint, SimulationSpec,
};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, ReferenceKind, RunConfig, ThetaKind};
use crate::output::{Cell, CsvTable, OutDir};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("{stage}: {message}")]
    Stage { stage: &'static str, message: String },
}

fn stage_err(stage: &'static str, e: impl std::fmt::Display) -> CliError {
    CliError::Stage { stage, message: e.to_string() }
}

/// Exit status of a verb.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Ok,
    CheckFailed,
    FitDegenerate,
}

impl Outcome {
    pub fn code(self) -> i32 {
        match self {
            Outcome::Ok => 0,
            Outcome::CheckFailed => 2,
            Outcome::FitDegenerate => 3,
        }
    }
}

/// Shared state of one invocation.
pub struct Context {
    pub cfg: RunConfig,
    pub out: OutDir,
}

impl Context {
    pub fn new(mut cfg: RunConfig, out: Option<PathBuf>, seed: Option<u64>) -> Result<Self, CliError> {
        if let Some(s) = seed {
            cfg.montecarlo.seed = s;
        }
        let root = out.or_else(|| cfg.output.clone().map(PathBuf::from)).unwrap_or_else(|| PathBuf::from("out"));
        Ok(Context { out: OutDir::create(&root)?, cfg })
    }
}

// ---------------------------------------------------------------- check

/// Assumption report, or the reason the model could not be built.
#[derive(Debug, Clone, Serialize)]
#[serde(untagged)]
pub enum CheckRecord {
    Report(AssumptionReport),
    Rejected { error: String, beta: f64, d: usize, pass: bool },
}

impl CheckRecord {
    pub fn pass(&self) -> bool {
        match self {
            CheckRecord::Report(r) => r.pass,
            CheckRecord::Rejected { .. } => false,
        }
    }
}

pub fn run_check(cfg: &RunConfig) -> CheckRecord {
    let scan = ScanSpec { radius: cfg.check.radius, points: cfg.check.points, ..ScanSpec::default() };
    match cfg.model() {
        Ok(model) => {
            let mut report = check_assumptions(&model, &scan);
            if cfg.equilibrium.allow_out_of_range && !report.pass {
                report.notes.push("beta range override set".into());
            }
            CheckRecord::Report(report)
        }
        Err(e) => CheckRecord::Rejected { error: e.to_string(), beta: cfg.beta(), d: cfg.equilibrium.d, pass: false },
    }
}

pub fn cmd_check(ctx: &Context) -> Result<Outcome, CliError> {
    let record = run_check(&ctx.cfg);
    ctx.out.write_json("assumptions.json", &record)?;
    Ok(if record.pass() { Outcome::Ok } else { Outcome::CheckFailed })
}

fn admissible_model(cfg: &RunConfig) -> Result<Option<EquilibriumModel>, CliError> {
    if !cfg.beta_admissible() {
        return Ok(None);
    }
    Ok(Some(cfg.model()?))
}

// ---------------------------------------------------------------- sweep

pub struct SweepOutcome {
    pub vmax: f64,
    pub n: usize,
    pub points: Vec<(f64, Result<EigenResult, EigenError>)>,
    pub drift: Vec<f64>,
    pub fit: Result<DiffusionFit, EigenError>,
}

pub fn run_sweep(cfg: &RunConfig, model: &EquilibriumModel) -> Result<SweepOutcome, CliError> {
    let vmax = cfg.sweep_vmax();
    let grid = VelocityGrid::new(model.d(), vmax, cfg.grid.n, cfg.grid.stretch).map_err(|e| stage_err("eigensweep", e))?;
    let q = assemble_q(model, &grid).map_err(|e| stage_err("eigensweep", e))?;
    let opts = SearchOptions { tol: cfg.sweep.tol, max_iter: cfg.sweep.max_iter, ..SearchOptions::default() };
    let etas = cfg.sweep.etas.clone();
    let results = sweep(&q, &etas, &opts);
    let drift: Vec<f64> = etas
        .iter()
        .map(|&e| if e < 1.0 { drift_j(model, e).map(|d| d.j1).unwrap_or(f64::NAN) } else { f64::NAN })
        .collect();
    let (mut fe, mut fm, mut fd) = (Vec::new(), Vec::new(), Vec::new());
    for ((e, r), j) in etas.iter().zip(&results).zip(&drift) {
        if let Ok(r) = r {
            fe.push(*e);
            fm.push(r.mu);
            fd.push(*j);
        }
    }
    let fit = fit_exponent(&fe, &fm, &fd, model.alpha());
    Ok(SweepOutcome { vmax, n: cfg.grid.n, points: etas.into_iter().zip(results).collect(), drift, fit })
}

#[derive(Serialize)]
struct GridInfo {
    #[serde(rename = "N")]
    n: usize,
    vmax: f64,
}

#[derive(Serialize)]
struct Failure {
    eta: f64,
    error: String,
}

#[derive(Serialize)]
struct FitRecord<'a> {
    alpha_hat: f64,
    alpha_ref: f64,
    kappa_hat: f64,
    fit_residual: f64,
    grid: GridInfo,
    lower_half: bool,
    alpha_full: f64,
    kappa_full: f64,
    alpha_lower: f64,
    kappa_lower: f64,
    failures: &'a [Failure],
}

#[derive(Serialize)]
struct FitFailure<'a> {
    error: &'static str,
    message: String,
    alpha_ref: f64,
    grid: GridInfo,
    failures: &'a [Failure],
}

pub fn cmd_eigensweep(ctx: &Context) -> Result<Outcome, CliError> {
    let Some(model) = admissible_model(&ctx.cfg)? else {
        return Ok(Outcome::CheckFailed);
    };
    let s = run_sweep(&ctx.cfg, &model)?;
    let mut csv = CsvTable::new(&["eta", "re_mu", "im_mu", "j1", "dirichlet", "norm_Meta", "newton_iters", "residual"]);
    let mut failures = Vec::new();
    for ((eta, r), j1) in s.points.iter().zip(&s.drift) {
        match r {
            Ok(r) => csv.row(&[
                Cell::F(*eta),
                Cell::F(r.mu.re),
                Cell::F(r.mu.im),
                Cell::F(*j1),
                Cell::F(r.dirichlet),
                Cell::F(r.norm_sq.sqrt()),
                Cell::U(r.iterations as u64),
                Cell::F(r.residual),
            ]),
            Err(e) => {
                failures.push(Failure { eta: *eta, error: e.to_string() });
                csv.row(&[
                    Cell::F(*eta),
                    Cell::F(f64::NAN),
                    Cell::F(f64::NAN),
                    Cell::F(*j1),
                    Cell::F(f64::NAN),
                    Cell::F(f64::NAN),
                    Cell::U(0),
                    Cell::F(f64::NAN),
                ]);
            }
        }
    }
    ctx.out.write_text("sweep.csv", &csv.into_string())?;
    let grid = GridInfo { n: s.n, vmax: s.vmax };
    match &s.fit {
        Ok(f) => {
            ctx.out.write_json(
                "fit.json",
                &FitRecord {
                    alpha_hat: f.alpha_hat,
                    alpha_ref: f.alpha_ref,
                    kappa_hat: f.kappa_hat,
                    fit_residual: f.fit_residual,
                    grid,
                    lower_half: f.lower_half,
                    alpha_full: f.alpha_full,
                    kappa_full: f.kappa_full,
                    alpha_lower: f.alpha_lower,
                    kappa_lower: f.kappa_lower,
                    failures: &failures,
                },
            )?;
            Ok(Outcome::Ok)
        }
        Err(e) => {
            let error = if matches!(e, EigenError::FitDegenerate(_)) { "FitDegenerate" } else { "FitFailed" };
            ctx.out.write_json(
                "fit.json",
                &FitFailure { error, message: e.to_string(), alpha_ref: model.alpha(), grid, failures: &failures },
            )?;
            Ok(Outcome::FitDegenerate)
        }
    }
}

// ---------------------------------------------------------------- limit

pub fn run_limit(cfg: &RunConfig, model: &EquilibriumModel) -> Result<LimitSolution, CliError> {
    let grid = RescaledGrid::new(cfg.limit.s_min, cfg.limit.s_max, cfg.limit.n).map_err(|e| stage_err("limit-kappa", e))?;
    solve_h0_1d(model, &grid).map_err(|e| stage_err("limit-kappa", e))
}

#[derive(Serialize)]
struct ComplexRecord {
    re: f64,
    im: f64,
}

#[derive(Serialize)]
struct LimitGrid {
    s_min: f64,
    s_max: f64,
    n: usize,
}

#[derive(Serialize)]
struct KappaRecord {
    kappa_unified: f64,
    kappa_branch: ComplexRecord,
    regime: &'static str,
    kappa_sweep: Option<f64>,
    grid: LimitGrid,
    kappa_doubled: f64,
    residual: f64,
}

pub fn cmd_limit_kappa(ctx: &Context) -> Result<Outcome, CliError> {
    let Some(model) = admissible_model(&ctx.cfg)? else {
        return Ok(Outcome::CheckFailed);
    };
    let sol = run_limit(&ctx.cfg, &model)?;
    let kappa_sweep = run_sweep(&ctx.cfg, &model).ok().and_then(|s| s.fit.ok()).map(|f| f.kappa_hat);
    let rec = KappaRecord {
        kappa_unified: sol.kappa_unified,
        kappa_branch: ComplexRecord { re: sol.kappa_branch.re, im: sol.kappa_branch.im },
        regime: sol.regime.tag(),
        kappa_sweep,
        grid: LimitGrid { s_min: ctx.cfg.limit.s_min, s_max: ctx.cfg.limit.s_max, n: ctx.cfg.limit.n },
        kappa_doubled: sol.kappa_doubled,
        residual: sol.residual,
    };
    ctx.out.write_json("kappa.json", &rec)?;
    let mut csv = CsvTable::new(&["s", "re_H0", "im_H0", "m"]);
    let t = sol.grid.nodes();
    let (mp, mm) = (&sol.m_plus, &sol.m_minus);
    for k in (0..t.len()).rev() {
        let h = sol.h0(k, true);
        csv.row(&[Cell::F(-t[k]), Cell::F(h.re), Cell::F(h.im), Cell::F(mm[k])]);
    }
    for k in 0..t.len() {
        let h = sol.h0(k, false);
        csv.row(&[Cell::F(t[k]), Cell::F(h.re), Cell::F(h.im), Cell::F(mp[k])]);
    }
    ctx.out.write_text("h0.csv", &csv.into_string())?;
    Ok(Outcome::Ok)
}

// ---------------------------------------------------------------- drift

#[derive(Debug, Clone, Serialize)]
pub struct DriftRow {
    pub eps: f64,
    pub j1: f64,
    pub asymptote: Option<f64>,
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DriftRecord {
    pub beta: f64,
    pub d: usize,
    pub regime: &'static str,
    pub symmetric: bool,
    /// Spherical moment of the limit profile along the first axis.
    pub jm: f64,
    pub values: Vec<DriftRow>,
    /// Drift at the smallest `ε` of the list.
    pub j1: f64,
    /// Critical regime: ratio to the logarithmic asymptote at the smallest `ε`.
    pub log_ratio: Option<f64>,
}

pub fn run_drift(cfg: &RunConfig, model: &EquilibriumModel) -> Result<DriftRecord, CliError> {
    let mut eps = cfg.drift.eps.clone();
    eps.sort_by(|a, b| b.total_cmp(a));
    let values: Vec<DriftRow> = eps
        .iter()
        .map(|&e| {
            drift_j(model, e)
                .map(|d| DriftRow { eps: e, j1: d.j1, asymptote: d.asymptote, ratio: d.ratio })
                .map_err(|e| stage_err("drift", e))
        })
        .collect::<Result<_, _>>()?;
    let last = values.last().ok_or_else(|| stage_err("drift", "empty eps list"))?;
    let regime = Regime::of(model);
    let jm = jm_limit(model).map(|v| v[0]).unwrap_or(f64::NAN);
    Ok(DriftRecord {
        beta: model.beta(),
        d: model.d(),
        regime: regime.tag(),
        symmetric: model.is_symmetric(),
        jm,
        j1: last.j1,
        log_ratio: if regime == Regime::Critical { last.ratio } else { None },
        values,
    })
}

pub fn cmd_drift(ctx: &Context) -> Result<Outcome, CliError> {
    let Some(model) = admissible_model(&ctx.cfg)? else {
        return Ok(Outcome::CheckFailed);
    };
    let rec = run_drift(&ctx.cfg, &model)?;
    ctx.out.write_json("drift.json", &rec)?;
    Ok(Outcome::Ok)
}

// ---------------------------------------------------------------- propagate

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ReferenceRecord {
    pub kappa: f64,
    pub alpha: f64,
    pub source: ReferenceKind,
    pub theta_alpha: f64,
    pub theta: ThetaKind,
}

/// `(κ, α)` of the reference multiplier and the time-scale exponent.
pub fn resolve_reference(cfg: &RunConfig, model: &EquilibriumModel) -> Result<ReferenceRecord, CliError> {
    let needs_fit = cfg.propagator.reference == ReferenceKind::Fitted || cfg.propagator.theta == ThetaKind::Fitted;
    let fit = if needs_fit {
        Some(run_sweep(cfg, model)?.fit.map_err(|e| stage_err("propagate", e))?)
    } else {
        None
    };
    let (kappa, alpha) = match cfg.propagator.reference {
        ReferenceKind::Limit => (run_limit(cfg, model)?.kappa_unified, model.alpha()),
        ReferenceKind::Fitted => {
            let f = fit.as_ref().expect("fit computed");
            (f.kappa_hat, f.alpha_hat)
        }
    };
    let theta_alpha = match cfg.propagator.theta {
        ThetaKind::Analytic => model.alpha(),
        ThetaKind::Fitted => fit.as_ref().expect("fit computed").alpha_hat,
    };
    Ok(ReferenceRecord { kappa, alpha, source: cfg.propagator.reference, theta_alpha, theta: cfg.propagator.theta })
}

pub fn run_propagate(cfg: &RunConfig, model: &EquilibriumModel) -> Result<(ConvergenceTable, ReferenceRecord), CliError> {
    let reference = resolve_reference(cfg, model)?;
    let p = &cfg.propagator;
    let policy = GridPolicy { n: p.n, stretch: p.stretch, r0: p.r0, c: p.extent_factor };
    let control = StepControl { max_change: p.max_change, dt_init: p.dt_init, dt_min: p.dt_min, substeps: p.substeps };
    let table = convergence_study(
        model,
        &p.xi,
        &p.t,
        &p.eps,
        &InitialSpec::WellPrepared { rho0: Complex64::new(1.0, 0.0) },
        Reference { kappa: reference.kappa, alpha: reference.alpha },
        reference.theta_alpha,
        &policy,
        &control,
    )
    .map_err(|e| stage_err("propagate", e))?;
    Ok((table, reference))
}

#[derive(Serialize)]
struct CellRecord {
    xi: f64,
    t: f64,
    monotone: bool,
}

#[derive(Serialize)]
struct PropagatorSummary {
    monotone_fraction: f64,
    max_err_at_smallest_eps: f64,
    max_projection_error: f64,
    reference: ReferenceRecord,
    cells: Vec<CellRecord>,
}

pub fn cmd_propagate(ctx: &Context) -> Result<Outcome, CliError> {
    let Some(model) = admissible_model(&ctx.cfg)? else {
        return Ok(Outcome::CheckFailed);
    };
    let (table, reference) = run_propagate(&ctx.cfg, &model)?;
    let mut csv = CsvTable::new(&["eps", "xi", "t", "re_rho", "im_rho", "ref_re", "ref_im", "abs_err"]);
    for r in &table.rows {
        csv.row(&[
            Cell::F(r.eps),
            Cell::F(r.xi),
            Cell::F(r.t),
            Cell::F(r.rho.re),
            Cell::F(r.rho.im),
            Cell::F(r.reference.re),
            Cell::F(r.reference.im),
            Cell::F(r.abs_err),
        ]);
    }
    ctx.out.write_text("propagator.csv", &csv.into_string())?;
    ctx.out.write_json(
        "propagator_summary.json",
        &PropagatorSummary {
            monotone_fraction: table.monotone_fraction,
            max_err_at_smallest_eps: table.max_err_at_smallest_eps,
            max_projection_error: table.max_projection_error,
            reference,
            cells: table.monotone.iter().map(|&(xi, t, monotone)| CellRecord { xi, t, monotone }).collect(),
        },
    )?;
    Ok(Outcome::Ok)
}

// ---------------------------------------------------------------- montecarlo

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CfRecord {
    pub xi: f64,
    pub re: f64,
    pub im: f64,
    pub ci_radius: f64,
    /// `exp(-κ̂ t |ξ|^α̂)`.
    pub reference: f64,
    pub abs_err: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McSummary {
    pub beta: f64,
    pub n: usize,
    pub eps: f64,
    pub t_macro: f64,
    pub horizon: f64,
    pub dt: f64,
    pub steps: usize,
    pub seed: u64,
    pub drift: f64,
    pub kappa_hat: f64,
    pub alpha_hat: f64,
    pub theta_alpha: f64,
    pub ks_initial: f64,
    pub ks_final: f64,
    pub cf: Vec<CfRecord>,
    pub cf_pass: bool,
}

pub struct McOutcome {
    pub summary: McSummary,
    pub v: Vec<f64>,
    pub x: Vec<f64>,
}

pub fn run_montecarlo(cfg: &RunConfig, model: &EquilibriumModel) -> Result<McOutcome, CliError> {
    let mc = &cfg.montecarlo;
    let fit = run_sweep(cfg, model)?.fit.map_err(|e| stage_err("montecarlo", e))?;
    let theta_alpha = match cfg.propagator.theta {
        ThetaKind::Analytic => model.alpha(),
        ThetaKind::Fitted => fit.alpha_hat,
    };
    let horizon = mc.eps.powf(-theta_alpha) * mc.t_macro;
    let dt = horizon / (horizon / mc.dt).ceil();
    let spec = SimulationSpec {
        n: mc.n,
        dt,
        t_end: horizon,
        seed: mc.seed,
        v_cap: mc.v_cap,
        initial: kfp_core::montecarlo::InitialVelocity::Stationary,
        snapshots: vec![0.0],
    };
    let ens = simulate_sde(model, &spec).map_err(|e| stage_err("montecarlo", e))?;
    let drift = drift_j(model, mc.eps).map_err(|e| stage_err("montecarlo", e))?.j1;
    let samples = rescaled_displacement(&ens, mc.eps, theta_alpha, mc.t_macro, drift).map_err(|e| stage_err("montecarlo", e))?;
    let cf: Vec<CfPoint> = empirical_cf(&samples, &mc.xi, mc.bootstrap, mc.seed).map_err(|e| stage_err("montecarlo", e))?;
    let table = CdfTable::new(model, 200_001).map_err(|e| stage_err("montecarlo", e))?;
    let ks_initial = velocity_ks(&table, &ens.snapshot_v[0]);
    let ks_final = velocity_ks(&table, &ens.v);
    let records: Vec<CfRecord> = cf
        .iter()
        .map(|p| {
            let reference = (-fit.kappa_hat * mc.t_macro * p.xi.abs().powf(fit.alpha_hat)).exp();
            let abs_err = Complex64::new(p.re - reference, p.im).norm();
            let pass = abs_err <= p.ci_radius + cfg.tolerances.cf_relative * reference;
            CfRecord { xi: p.xi, re: p.re, im: p.im, ci_radius: p.ci_radius, reference, abs_err, pass }
        })
        .collect();
    let cf_pass = records.iter().all(|r| r.pass);
    Ok(McOutcome {
        summary: McSummary {
            beta: model.beta(),
            n: mc.n,
            eps: mc.eps,
            t_macro: mc.t_macro,
            horizon: ens.t,
            dt,
            steps: ens.steps,
            seed: mc.seed,
            drift,
            kappa_hat: fit.kappa_hat,
            alpha_hat: fit.alpha_hat,
            theta_alpha,
            ks_initial,
            ks_final,
            cf: records,
            cf_pass,
        },
        v: ens.v,
        x: ens.x,
    })
}

pub fn cmd_montecarlo(ctx: &Context) -> Result<Outcome, CliError> {
    let Some(model) = admissible_model(&ctx.cfg)? else {
        return Ok(Outcome::CheckFailed);
    };
    if model.d() != 1 {
        return Err(stage_err("montecarlo", "particle simulation is available for d = 1 only"));
    }
    let o = run_montecarlo(&ctx.cfg, &model)?;
    if ctx.cfg.montecarlo.snapshot {
        let mut csv = CsvTable::new(&["particle", "V", "X"]);
        for (i, (v, x)) in o.v.iter().zip(&o.x).enumerate() {
            csv.row(&[Cell::U(i as u64), Cell::F(*v), Cell::F(*x)]);
        }
        ctx.out.write_text("mc_snapshot.csv", &csv.into_string())?;
    }
    ctx.out.write_json("cf.json", &o.summary.cf)?;
    ctx.out.write_json("mc_summary.json", &o.summary)?;
    Ok(Outcome::Ok)
}
