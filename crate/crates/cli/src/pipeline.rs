//! From a validated [`RunConfig`] to verdicts: grid, bounds, assembly, solve,
//! certificate checks and oracle runs.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::time::Instant;

use parastab::bounds::{
    coercivity_alpha, mesh_rhos, partition_bounds, poincare_constant, vertex_values, BoundsError,
};
use parastab::lmi::{
    assemble_thm1, assemble_thm2, make_certificate, pointwise_check, LmiSystem, Theorem,
};
use parastab::mesh::{
    box_mesh, interval_mesh, spherical_ball_partition, uniform_box_partition,
    uniform_interval_partition, Domain, Partition, SimplicialMesh,
};
use parastab::oracle::{
    bisect_threshold, bisect_threshold_parallel, discretize_1d, lyapunov_decay_check,
    sample_initial, simulate, stability_by_eigs, OracleError,
};
use parastab::sdp::{solve_feasibility, SolveStatus};

use crate::config::{Method, RunConfig, SweepTarget};
use crate::error::CliError;
use crate::report::{
    CertificateSummary, OracleRecord, PointwiseSummary, ProbeRecord, RunReport, ThresholdRow,
    Verdict,
};

/// Execution settings that are not part of the experiment record.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Speculative parallel bisection.
    pub parallel: bool,
}

fn bounds_err(e: BoundsError) -> CliError {
    match e {
        BoundsError::NotCoercive { alpha } => CliError::NotCoercive { alpha },
        BoundsError::MissingPoincare(_)
        | BoundsError::InvalidPoincare(_)
        | BoundsError::InvalidInflation(_) => CliError::Config(e.to_string()),
        other => CliError::Numerical(other.to_string()),
    }
}

fn theorem(method: Method) -> Theorem {
    match method {
        Method::Thm1 => Theorem::Thm1,
        Method::Thm2 => Theorem::Thm2,
    }
}

/// An assembled system with what is needed to turn a solution into a certificate.
pub struct Assembled {
    pub system: LmiSystem,
    pub mesh: Option<SimplicialMesh>,
    pub c: f64,
    pub grid_n: usize,
}

fn partition(cfg: &RunConfig, domain: &Domain, splits: &[usize]) -> Result<Partition, CliError> {
    let samples = cfg.grid.samples_per_cell;
    let p = match domain {
        Domain::Interval { a, b } => uniform_interval_partition(*a, *b, splits[0], samples),
        Domain::Box { lower, upper } => uniform_box_partition(lower, upper, splits, samples),
        Domain::UnitBall3d => spherical_ball_partition(splits[0], samples),
        _ => return Err(CliError::Config("unsupported domain".into())),
    };
    p.map_err(|e| CliError::Config(e.to_string()))
}

fn mesh(domain: &Domain, splits: &[usize]) -> Result<SimplicialMesh, CliError> {
    let m = match domain {
        Domain::Interval { a, b } => interval_mesh(*a, *b, splits[0]),
        Domain::Box { lower, upper } => box_mesh(lower, upper, splits),
        _ => {
            return Err(CliError::Config(
                "method thm2 needs an interval or box domain".into(),
            ))
        }
    };
    m.map_err(|e| CliError::Config(e.to_string()))
}

/// Builds the matrix inequalities for the given parameters and grid size
/// (`None` uses the configured grid).
pub fn assemble(
    cfg: &RunConfig,
    params: &BTreeMap<String, f64>,
    grid_n: Option<usize>,
) -> Result<Assembled, CliError> {
    let spec = cfg.problem_spec(params)?;
    coercivity_alpha(&spec.a).map_err(bounds_err)?;
    let c = poincare_constant(&spec.domain, cfg.poincare.value)
        .map_err(bounds_err)?
        .c;
    let splits = cfg.splits(grid_n);
    let n_report = grid_n.unwrap_or_else(|| cfg.grid_size());
    let lmi_err = |e: parastab::lmi::LmiError| CliError::Numerical(e.to_string());
    match cfg.method {
        Method::Thm1 => {
            let part = partition(cfg, &spec.domain, &splits)?;
            let cells = partition_bounds(&spec.b, &part, &spec.params, cfg.grid.rho_inflation)
                .map_err(bounds_err)?;
            let system = assemble_thm1(&spec.a, &cells, c, spec.n).map_err(lmi_err)?;
            Ok(Assembled {
                system,
                mesh: None,
                c,
                grid_n: n_report,
            })
        }
        Method::Thm2 => {
            let mesh = mesh(&spec.domain, &splits)?;
            let vals = vertex_values(&spec.b, &mesh, &spec.params).map_err(bounds_err)?;
            let rhos = mesh_rhos(
                &spec.b,
                &mesh,
                &vals,
                &spec.params,
                cfg.grid.samples_per_cell,
                cfg.grid.rho_inflation,
            )
            .map_err(bounds_err)?;
            let system = assemble_thm2(&spec.a, &mesh, &vals, &rhos, c, spec.n).map_err(lmi_err)?;
            Ok(Assembled {
                system,
                mesh: Some(mesh),
                c,
                grid_n: n_report,
            })
        }
    }
}

/// Outcome of one feasibility probe, with the certificate when feasible.
pub struct ProbeOutcome {
    pub record: ProbeRecord,
    pub assembled: Assembled,
    pub y: Option<Vec<f64>>,
}

pub fn probe(
    cfg: &RunConfig,
    params: &BTreeMap<String, f64>,
    grid_n: Option<usize>,
    swept: Option<(&str, f64)>,
) -> Result<ProbeOutcome, CliError> {
    let assembled = assemble(cfg, params, grid_n)?;
    let res = solve_feasibility(&assembled.system, &cfg.solver);
    let verdict = match res.status {
        SolveStatus::Feasible => Verdict::Feasible,
        SolveStatus::NotFeasibleWithinBounds => Verdict::Infeasible,
        SolveStatus::NumericalFailure => Verdict::NumericalFailure,
    };
    let record = ProbeRecord {
        grid_n: assembled.grid_n,
        param: swept.map(|(p, _)| p.to_string()),
        value: swept.map(|(_, v)| v),
        verdict,
        margin: res.best_margin.is_finite().then_some(res.best_margin),
        iterations: res.iterations,
        wall_time: res.wall_time,
        blocks: assembled.system.blocks.len(),
        variables: assembled.system.layout.total_len(),
        message: res.message.clone(),
    };
    Ok(ProbeOutcome {
        record,
        assembled,
        y: res.y,
    })
}

/// Single analysis at the configured parameters.
pub fn analyze(cfg: &RunConfig) -> Result<RunReport, CliError> {
    let start = Instant::now();
    let mut report = RunReport::new("analyze", cfg);
    let params = cfg.problem.params.clone();
    let out = probe(cfg, &params, None, None)?;
    report.probes.push(out.record.clone());
    if let Some(y) = &out.y {
        let spec = cfg.problem_spec(&params)?;
        let cert = make_certificate(
            &out.assembled.system,
            y,
            theorem(cfg.method),
            out.assembled.mesh.as_ref(),
        )
        .map_err(|e| CliError::Numerical(format!("certificate extraction: {e}")))?;
        report.certificate = Some(CertificateSummary {
            theorem: cfg.method,
            margin_eps: cert.margin_eps,
            gamma: cert.gamma,
            overshoot_m: cert.overshoot_m,
        });
        if cfg.check.pointwise {
            let samples = spec
                .domain
                .sample_uniform(cfg.check.samples, cfg.check.seed)
                .map_err(|e| CliError::Config(e.to_string()))?;
            let pw = pointwise_check(
                &cert,
                &spec.b,
                &spec.params,
                &samples,
                out.assembled.c,
                &spec.a,
                cfg.check.tol,
            )
            .map_err(|e| CliError::Numerical(format!("pointwise check: {e}")))?;
            report.pointwise = Some(PointwiseSummary {
                samples: pw.samples,
                worst_coefficient_margin: pw.worst_coefficient_margin,
                worst_poincare_margin: pw.worst_poincare_margin,
                violations: pw.violations.len(),
                passed: pw.passed(),
            });
        }
        if cfg.oracle.enabled && cfg.oracle.simulate && spec.m == 1 {
            let sys = discretize_1d(&spec, cfg.oracle.grid_points).map_err(oracle_err)?;
            let traj = simulate(
                &sys,
                &initial_state(&sys),
                cfg.oracle.dt,
                cfg.oracle.t_end,
                Some(&cert.p),
            )
            .map_err(oracle_err)?;
            report.decay = Some(lyapunov_decay_check(&traj, &cert, cfg.check.decay_slack));
            report.trajectory = Some(traj);
        }
    }
    if cfg.oracle.enabled && cfg.problem.m == 1 {
        report.oracle.push(oracle_at(cfg, &params, None)?);
    }
    report.timings.total_seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

fn oracle_err(e: OracleError) -> CliError {
    match e {
        OracleError::Unsupported | OracleError::TooFewPoints(_) | OracleError::Invalid(_) => {
            CliError::Config(e.to_string())
        }
        OracleError::BracketInvalid { .. } => CliError::BracketInvalid(e.to_string()),
        other => CliError::Numerical(other.to_string()),
    }
}

/// Smooth initial data exciting every component.
pub fn initial_state(sys: &parastab::oracle::DiscreteSystem) -> Vec<f64> {
    let (lo, hi) = (
        sys.coords[0] - sys.h,
        sys.coords[sys.coords.len() - 1] + sys.h,
    );
    let n = sys.n;
    sample_initial(sys, |x| {
        let s = (x - lo) / (hi - lo);
        (0..n)
            .map(|c| (PI * s).sin() + 0.5 * ((c + 2) as f64 * PI * s).sin())
            .collect()
    })
}

fn oracle_at(
    cfg: &RunConfig,
    params: &BTreeMap<String, f64>,
    swept: Option<f64>,
) -> Result<OracleRecord, CliError> {
    let spec = cfg.problem_spec(params)?;
    let sys = discretize_1d(&spec, cfg.oracle.grid_points).map_err(oracle_err)?;
    let v = stability_by_eigs(&sys, &cfg.oracle.power()).map_err(oracle_err)?;
    Ok(OracleRecord {
        value: swept,
        grid_points: cfg.oracle.grid_points,
        stable: v.stable,
        decay_estimate: v.decay_estimate,
        method: v.method,
    })
}

/// Oracle verdict at the configured parameters, plus an optional trajectory.
pub fn oracle(cfg: &RunConfig) -> Result<RunReport, CliError> {
    let start = Instant::now();
    let mut report = RunReport::new("oracle", cfg);
    let params = cfg.problem.params.clone();
    report.oracle.push(oracle_at(cfg, &params, None)?);
    if cfg.oracle.simulate {
        let spec = cfg.problem_spec(&params)?;
        let sys = discretize_1d(&spec, cfg.oracle.grid_points).map_err(oracle_err)?;
        let traj = simulate(
            &sys,
            &initial_state(&sys),
            cfg.oracle.dt,
            cfg.oracle.t_end,
            None,
        )
        .map_err(oracle_err)?;
        report.trajectory = Some(traj);
    }
    report.timings.total_seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Bisection over the sweep parameter, once per grid size.
pub fn bisect(cfg: &RunConfig, opts: RunOptions) -> Result<RunReport, CliError> {
    let start = Instant::now();
    let sweep = cfg
        .sweep
        .clone()
        .ok_or_else(|| CliError::Config("bisect needs a [sweep] section".into()))?;
    let mut report = RunReport::new("bisect", cfg);
    let sizes: Vec<Option<usize>> = match sweep.target {
        SweepTarget::Oracle => vec![None],
        SweepTarget::Lmi if sweep.grid_sizes.is_empty() => vec![None],
        SweepTarget::Lmi => sweep.grid_sizes.iter().map(|&n| Some(n)).collect(),
    };
    for grid_n in sizes {
        let with_value = |v: f64| {
            let mut p = cfg.problem.params.clone();
            p.insert(sweep.param.clone(), v);
            p
        };
        // every probe outcome, keyed by the bits of the probed value
        let log = std::sync::Mutex::new(Vec::<(f64, Result<Probed, CliError>)>::new());
        let decide = |v: f64| -> bool {
            let outcome = match sweep.target {
                SweepTarget::Lmi => probe(cfg, &with_value(v), grid_n, Some((&sweep.param, v)))
                    .map(|o| Probed::Lmi(o.record)),
                SweepTarget::Oracle => oracle_at(cfg, &with_value(v), Some(v)).map(Probed::Oracle),
            };
            // numerical failures count as infeasible
            let ok = matches!(&outcome, Ok(p) if p.positive());
            log.lock().expect("probe log").push((v, outcome));
            ok
        };
        let result = if opts.parallel {
            let depth = (usize::BITS - rayon::current_num_threads().leading_zeros()) as usize;
            bisect_threshold_parallel(decide, sweep.lo, sweep.hi, sweep.tol, depth.max(1))
        } else {
            bisect_threshold(decide, sweep.lo, sweep.hi, sweep.tol)
        };
        let mut entries = log.into_inner().expect("probe log");
        // hard errors (bad config, non-coercive A) abort the sweep
        if let Some(pos) = entries.iter().position(|(_, r)| r.is_err()) {
            return Err(entries.swap_remove(pos).1.err().expect("error entry"));
        }
        let path: Vec<f64> = match &result {
            Ok(r) => r.probes.iter().map(|p| p.value).collect(),
            Err(_) => entries.iter().map(|(v, _)| *v).collect(),
        };
        // report probes in sequential order; speculative extras are dropped
        for v in &path {
            if let Some(idx) = entries.iter().position(|(x, _)| x.to_bits() == v.to_bits()) {
                let (_, r) = entries.swap_remove(idx);
                match r.expect("errors handled above") {
                    Probed::Lmi(rec) => report.probes.push(rec),
                    Probed::Oracle(rec) => report.oracle.push(rec),
                }
            }
        }
        let n_row = match sweep.target {
            SweepTarget::Lmi => grid_n.unwrap_or_else(|| cfg.grid_size()),
            SweepTarget::Oracle => cfg.oracle.grid_points,
        };
        let b_max = match result {
            Ok(r) => Some(r.threshold),
            Err(OracleError::BracketInvalid { lo_ok: false, .. }) => None,
            Err(e) => return Err(oracle_err(e)),
        };
        report.thresholds.push(ThresholdRow {
            grid_n: n_row,
            param: sweep.param.clone(),
            target: sweep.target,
            b_max,
            probes: path.len(),
        });
    }
    report.timings.total_seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

enum Probed {
    Lmi(ProbeRecord),
    Oracle(OracleRecord),
}

impl Probed {
    fn positive(&self) -> bool {
        match self {
            Probed::Lmi(r) => r.verdict == Verdict::Feasible,
            Probed::Oracle(r) => r.stable,
        }
    }
}

/// SDPA text of the configured system.
pub fn export(cfg: &RunConfig) -> Result<String, CliError> {
    let assembled = assemble(cfg, &cfg.problem.params, None)?;
    parastab::sdp::export_sdpa(&assembled.system, None).map_err(|e| CliError::Other(e.to_string()))
}
