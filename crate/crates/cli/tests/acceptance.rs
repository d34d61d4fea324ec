//! Acceptance run: one PASS/FAIL line per check.
//!
//! Runs without the libtest harness so every line is printed. The extended
//! ball sweep (N = 20, 25, 30) takes a long time and only runs when
//! `PARASTAB_EXTENDED=1` is set.

use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use parastab::linalg::{kron, sym_eig, DenseMatrix};
use parastab::lmi::lemma1_expand;
use parastab::mesh::{barycentric, interval_mesh, simplex_gradients};
use parastab::sdp::{export_sdpa, import_sdpa, solve_feasibility, SolveStatus};
use parastab_cli::config::{load_config, preset_text, RunConfig, PRESETS};
use parastab_cli::pipeline::{self, RunOptions};
use parastab_cli::report::RunReport;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn preset(name: &str, overrides: &[&str]) -> RunConfig {
    let sets: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    load_config(preset_text(name).unwrap(), &sets).unwrap()
}

fn bisect(cfg: &RunConfig) -> RunReport {
    pipeline::bisect(cfg, RunOptions::default()).unwrap()
}

fn b_max(report: &RunReport, n: usize) -> Option<f64> {
    report
        .thresholds
        .iter()
        .find(|t| t.grid_n == n)
        .and_then(|t| t.b_max)
}

fn show(b: Option<f64>) -> String {
    b.map(|v| format!("{v:.4}"))
        .unwrap_or_else(|| "infeasible".into())
}

fn within(value: f64, lo: f64, hi: f64) -> bool {
    (lo..=hi).contains(&value)
}

fn verdict(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn interval_threshold_constant_p(thm1: f64, secs: f64) -> Check {
    verdict(
        within(thm1, 6.51, 6.81) && secs < 120.0,
        format!("b_max = {thm1:.4} in [6.51, 6.81], {secs:.1}s"),
    )
}

fn interval_threshold_piecewise_p(thm1: f64) -> Check {
    let t = Instant::now();
    let report = bisect(&preset("paper-1d", &["method=thm2"]));
    let thm2 = b_max(&report, 100).ok_or("no threshold")?;
    verdict(
        within(thm2, 6.69, 6.99) && thm2 > thm1,
        format!(
            "b_max = {thm2:.4} in [6.69, 6.99], above {thm1:.4}, {:.1}s",
            t.elapsed().as_secs_f64()
        ),
    )
}

fn oracle_threshold() -> Check {
    let t = Instant::now();
    let report = bisect(&preset(
        "paper-1d",
        &["sweep.target=oracle", "sweep.tol=0.01"],
    ));
    let secs = t.elapsed().as_secs_f64();
    let b = report
        .thresholds
        .first()
        .and_then(|r| r.b_max)
        .ok_or("no threshold")?;
    verdict(
        (b - 8.35).abs() <= 0.05 && secs < 60.0,
        format!("G = 1000 threshold {b:.4} (8.35 ± 0.05), {secs:.1}s"),
    )
}

fn ball_thresholds() -> Check {
    let t = Instant::now();
    let report = bisect(&preset("paper-3d-ball", &["sweep.grid_sizes=[5, 10, 15]"]));
    let (n5, n10, n15) = (b_max(&report, 5), b_max(&report, 10), b_max(&report, 15));
    let ok = n5.is_none()
        && n10.is_some_and(|b| (b - 0.14).abs() <= 0.10)
        && n15.is_some_and(|b| (b - 0.84).abs() <= 0.15);
    verdict(
        ok,
        format!(
            "N=5 {}, N=10 {} (0.14 ± 0.10), N=15 {} (0.84 ± 0.15), {:.1}s",
            show(n5),
            show(n10),
            show(n15),
            t.elapsed().as_secs_f64()
        ),
    )
}

fn ball_thresholds_extended() -> Check {
    let report = bisect(&preset(
        "paper-3d-ball",
        &["sweep.grid_sizes=[15, 20, 25, 30]"],
    ));
    let rows: Vec<Option<f64>> = [15, 20, 25, 30]
        .iter()
        .map(|&n| b_max(&report, n))
        .collect();
    let values: Vec<f64> = rows.iter().flatten().copied().collect();
    let monotone = values.len() == rows.len() && values.windows(2).all(|w| w[1] >= w[0]);
    verdict(
        monotone && values.iter().all(|&b| b <= 2.07 + 0.15),
        format!(
            "N=15..30: {}",
            rows.iter().map(|&b| show(b)).collect::<Vec<_>>().join(", ")
        ),
    )
}

const SCALAR_HEAT: &str = r#"
method = "thm1"

[problem]
m = 1
n = 1
A = [1.0]
B = [["b"]]
params = { b = 0.0 }

[domain]
kind = "interval"
bounds = [[0.0, 1.0]]

[grid]
n = 1

[sweep]
param = "b"
lo = 0.0
hi = 12.0
tol = 0.01
"#;

fn scalar_heat_gate() -> Check {
    let t = Instant::now();
    let report = bisect(&load_config(SCALAR_HEAT, &[]).unwrap());
    let secs = t.elapsed().as_secs_f64();
    let b = report
        .thresholds
        .first()
        .and_then(|r| r.b_max)
        .ok_or("no threshold")?;
    verdict(
        (b - PI * PI).abs() <= 0.05 && secs < 5.0,
        format!("b_max = {b:.4}, π² = {:.4}, {secs:.2}s", PI * PI),
    )
}

fn random_matrix(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |_, _| rng.gen_range(-2.0..2.0))
}

fn to_dense(m: &DMatrix<f64>) -> DenseMatrix {
    DenseMatrix::from_row_major(m.nrows(), m.ncols(), m.transpose().as_slice().to_vec()).unwrap()
}

fn min_eig(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new((m + m.transpose()) * 0.5)
        .eigenvalues
        .min()
}

fn expanded(
    m: &DMatrix<f64>,
    b: &DMatrix<f64>,
    p: &DMatrix<f64>,
    u: &DMatrix<f64>,
    xi: &DMatrix<f64>,
) -> DMatrix<f64> {
    let x = lemma1_expand(
        &to_dense(m),
        &to_dense(b),
        &to_dense(p),
        &to_dense(u),
        &to_dense(xi),
    )
    .unwrap()
    .to_dense();
    DMatrix::from_fn(x.rows(), x.cols(), |i, j| x[(i, j)])
}

/// Slack-variable expansion, both directions, on random 4×4 data.
///
/// Forward: if `M − BᵀP − PᵀB ⪰ 0`, then `Υ = P`, `Ξ = 0` makes the expansion
/// semidefinite. Reverse: `M` is built so that the expansion is semidefinite
/// for a random slack pair (Schur complement), and the reduced inequality
/// must follow.
fn slack_expansion_equivalence() -> Check {
    const TOL: f64 = 1e-9;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut failures = 0;
    for _ in 0..1000 {
        let (b, p, u, g) = (
            random_matrix(&mut rng, 4),
            random_matrix(&mut rng, 4),
            random_matrix(&mut rng, 4),
            random_matrix(&mut rng, 4),
        );
        let mut g = g;
        let rank = rng.gen_range(1..=4);
        for c in rank..4 {
            g.column_mut(c).fill(0.0);
        }
        let psd = &g * g.transpose();

        let m = b.transpose() * &p + p.transpose() * &b + &psd;
        let reduced = &m - b.transpose() * &p - p.transpose() * &b;
        let forward = min_eig(&reduced) >= -TOL
            && min_eig(&expanded(&m, &b, &p, &p, &DMatrix::zeros(4, 4))) >= -TOL;

        let f = random_matrix(&mut rng, 4);
        let s = random_matrix(&mut rng, 4);
        let h = DMatrix::identity(4, 4) + &f * f.transpose() * 0.25;
        let xi = &h + (&s - s.transpose()) * 0.5;
        let b12 = u.transpose() - p.transpose() - b.transpose() * &xi;
        let inv = (&h * 2.0).try_inverse().unwrap();
        let m = b.transpose() * &u + u.transpose() * &b + &b12 * inv * b12.transpose() + &psd;
        let m = (&m + m.transpose()) * 0.5;
        let reverse = min_eig(&expanded(&m, &b, &p, &u, &xi)) >= -TOL
            && min_eig(&(&m - b.transpose() * &p - p.transpose() * &b)) >= -TOL;

        failures += usize::from(!forward) + usize::from(!reverse);
    }
    verdict(
        failures == 0,
        format!("1000 instances × 2 directions, {failures} failures"),
    )
}

/// Every feasible verdict: independent eigenvalue check of each scaled block
/// and the pointwise check at 1000 sampled points.
fn certificate_soundness() -> Check {
    let cases: [(&str, &[&str]); 6] = [
        ("paper-1d", &["problem.params.b=2.0"]),
        ("paper-1d", &["problem.params.b=6.0"]),
        ("paper-1d", &["problem.params.b=6.5"]),
        ("paper-1d", &["method=thm2", "problem.params.b=6.0"]),
        ("paper-1d", &["method=thm2", "problem.params.b=6.7"]),
        ("paper-3d-ball", &["problem.params.b=0.1"]),
    ];
    let mut worst_block = f64::INFINITY;
    let mut worst_point = f64::INFINITY;
    for (name, sets) in cases {
        let mut sets = sets.to_vec();
        sets.extend(["check.samples=1000", "check.tol=1e-7"]);
        let cfg = preset(name, &sets);
        let assembled =
            pipeline::assemble(&cfg, &cfg.problem.params, None).map_err(|e| e.to_string())?;
        let res = solve_feasibility(&assembled.system, &cfg.solver);
        if res.status != SolveStatus::Feasible {
            return Err(format!(
                "{name} {sets:?}: expected a feasible verdict, got {:?}",
                res.status
            ));
        }
        let y = res.y.as_ref().unwrap();
        for (block, s) in assembled.system.blocks.iter().zip(&res.block_scales) {
            let d = block.dim;
            let c = block.constant.to_dense();
            let mut m = DMatrix::from_fn(d, d, |i, j| c[(i, j)]);
            for (k, f) in &block.coeffs {
                let f = f.to_dense();
                m += DMatrix::from_fn(d, d, |i, j| f[(i, j)]) * y[*k];
            }
            let margin = min_eig(&(m / *s));
            worst_block = worst_block.min(margin);
            if margin < cfg.solver.feas_floor - 1e-7 {
                return Err(format!(
                    "{name} {sets:?}: block {} margin {margin:e}",
                    block.name
                ));
            }
        }
        let report = pipeline::analyze(&cfg).map_err(|e| e.to_string())?;
        let pw = report.pointwise.ok_or("no pointwise check")?;
        worst_point = worst_point.min(pw.worst_coefficient_margin.min(pw.worst_poincare_margin));
        if pw.samples != 1000 || !pw.passed {
            return Err(format!(
                "{name} {sets:?}: {} violations over {} samples",
                pw.violations, pw.samples
            ));
        }
    }
    Ok(format!(
        "6 feasible verdicts, worst scaled block margin {worst_block:.3e}, worst pointwise eigenvalue {worst_point:.3e}"
    ))
}

fn lyapunov_decay() -> Check {
    let cfg = preset(
        "paper-1d",
        &[
            "problem.params.b=6.0",
            "oracle.enabled=true",
            "oracle.simulate=true",
            "oracle.grid_points=500",
            "oracle.dt=1e-4",
            "oracle.t_end=2.0",
            "check.decay_slack=0.05",
        ],
    );
    let report = pipeline::analyze(&cfg).map_err(|e| e.to_string())?;
    let decay = report.decay.ok_or("no decay check (not certified?)")?;
    verdict(
        decay.passed() && decay.checked > 20_000,
        format!(
            "{} points, gamma = {:.4e}, first violation {:?}",
            decay.checked, decay.gamma, decay.first_violation
        ),
    )
}

fn mesh_properties() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut failures = Vec::new();
    for trial in 0..500 {
        let m = rng.gen_range(1..=3);
        let scale = rng.gen_range(0.05..3.0);
        let shift: Vec<f64> = (0..m).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let mut vs = vec![shift.clone()];
        for l in 0..m {
            vs.push(
                (0..m)
                    .map(|c| {
                        shift[c] + scale * (f64::from(u8::from(l == c)) + rng.gen_range(-0.3..0.3))
                    })
                    .collect(),
            );
        }
        let g = simplex_gradients(&vs).unwrap();
        for c in 0..m {
            if g[0][c] + g[1..].iter().fold(0.0, |acc, v| acc + v[c]) != 0.0 {
                failures.push(format!("trial {trial}: gradient sum"));
            }
        }
        let w: Vec<f64> = (0..=m).map(|_| rng.gen_range(0.0..1.0)).collect();
        let total: f64 = w.iter().sum::<f64>().max(1e-3);
        let x: Vec<f64> = (0..m)
            .map(|c| (0..=m).map(|l| w[l] / total * vs[l][c]).sum())
            .collect();
        let alpha = barycentric(&vs, &x).unwrap();
        let err = (0..m)
            .map(|c| ((0..=m).map(|l| alpha[l] * vs[l][c]).sum::<f64>() - x[c]).abs())
            .fold((alpha.iter().sum::<f64>() - 1.0).abs(), f64::max);
        if err > 1e-10 {
            failures.push(format!("trial {trial}: reconstruction error {err:e}"));
        }

        let n = rng.gen_range(1..400);
        let mesh = interval_mesh(0.0, 1.0, n).unwrap();
        let nf = n as f64;
        if mesh.simplices.iter().any(|s| {
            (s.gradients[0][0] + nf).abs() > 1e-9 * nf || (s.gradients[1][0] - nf).abs() > 1e-9 * nf
        }) {
            failures.push(format!("trial {trial}: interval gradients for N = {n}"));
        }

        let k = rng.gen_range(1..=4);
        let reps = rng.gen_range(1..=3);
        let small = DenseMatrix::from_row_major(
            k,
            k,
            (0..k * k).map(|_| rng.gen_range(-3.0..3.0)).collect(),
        )
        .unwrap()
        .sym_part();
        let big = kron(&small.to_dense(), &DenseMatrix::identity(reps)).sym_part();
        let mut expected: Vec<f64> = sym_eig(&small)
            .unwrap()
            .values
            .iter()
            .flat_map(|&v| std::iter::repeat_n(v, reps))
            .collect();
        expected.sort_by(f64::total_cmp);
        let d = big.to_dense();
        let mut reference: Vec<f64> =
            SymmetricEigen::new(DMatrix::from_fn(k * reps, k * reps, |i, j| d[(i, j)]))
                .eigenvalues
                .iter()
                .copied()
                .collect();
        reference.sort_by(f64::total_cmp);
        let ours = sym_eig(&big).unwrap().values;
        let dev = DVector::from_iterator(
            expected.len(),
            expected
                .iter()
                .zip(&reference)
                .zip(&ours)
                .map(|((e, r), o)| (e - r).abs().max((e - o).abs())),
        )
        .max();
        if dev > 1e-9 {
            failures.push(format!(
                "trial {trial}: Kronecker spectrum deviation {dev:e}"
            ));
        }
    }
    verdict(
        failures.is_empty(),
        format!(
            "500 seeded trials, {} failures{}",
            failures.len(),
            failures
                .first()
                .map(|f| format!(" ({f})"))
                .unwrap_or_default()
        ),
    )
}

fn sdpa_round_trip() -> Check {
    for name in PRESETS {
        for method in ["thm1", "thm2"] {
            if name == "paper-3d-ball" && method == "thm2" {
                continue;
            }
            let cfg = preset(name, &[&format!("method={method}")]);
            let text = pipeline::export(&cfg).map_err(|e| e.to_string())?;
            let original = pipeline::assemble(&cfg, &cfg.problem.params, None)
                .map_err(|e| e.to_string())?
                .system;
            let back = import_sdpa(&text).map_err(|e| e.to_string())?;
            let same = back.layout.total_len() == original.layout.total_len()
                && back.blocks.len() == original.blocks.len()
                && back.blocks.iter().zip(&original.blocks).all(|(a, b)| {
                    a.dim == b.dim && a.constant == b.constant && a.coeffs == b.coeffs
                });
            if !same {
                return Err(format!("{name}/{method}: imported system differs"));
            }
            if export_sdpa(&back, None).map_err(|e| e.to_string())? != text {
                return Err(format!("{name}/{method}: re-export is not byte-identical"));
            }
            if pipeline::export(&cfg).map_err(|e| e.to_string())? != text {
                return Err(format!("{name}/{method}: export differs between runs"));
            }
        }
    }
    Ok("paper-1d (thm1, thm2) and paper-3d-ball (thm1) round-trip byte-identically".into())
}

fn run(id: &str, name: &str, f: impl FnOnce() -> Check) -> bool {
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into());
        Err(format!("panicked: {msg}"))
    });
    match &outcome {
        Ok(detail) => println!("PASS {id} {name}: {detail}"),
        Err(detail) => println!("FAIL {id} {name}: {detail}"),
    }
    outcome.is_ok()
}

fn main() -> ExitCode {
    let mut ok = true;
    let t = Instant::now();
    let thm1 = catch_unwind(|| b_max(&bisect(&preset("paper-1d", &[])), 100))
        .ok()
        .flatten();
    let thm1_secs = t.elapsed().as_secs_f64();
    ok &= run("1", "interval threshold, constant P", || {
        interval_threshold_constant_p(thm1.ok_or("bisection failed")?, thm1_secs)
    });
    ok &= run("2", "interval threshold, piecewise-linear P", || {
        interval_threshold_piecewise_p(thm1.ok_or("no constant-P threshold to compare")?)
    });
    ok &= run(
        "3",
        "finite-difference stability threshold",
        oracle_threshold,
    );
    ok &= run("4", "ball thresholds N = 5, 10, 15", ball_thresholds);
    if std::env::var("PARASTAB_EXTENDED").is_ok_and(|v| v == "1") {
        ok &= run(
            "4x",
            "ball thresholds N = 20, 25, 30",
            ball_thresholds_extended,
        );
    } else {
        println!("SKIP 4x ball thresholds N = 20, 25, 30 (set PARASTAB_EXTENDED=1)");
    }
    ok &= run("5", "scalar heat gate", scalar_heat_gate);
    ok &= run(
        "6",
        "slack-variable expansion equivalence",
        slack_expansion_equivalence,
    );
    ok &= run("7", "certificate soundness", certificate_soundness);
    ok &= run("8", "simulated Lyapunov decay", lyapunov_decay);
    ok &= run("9", "mesh and barycentric properties", mesh_properties);
    ok &= run("10", "SDPA round-trip", sdpa_round_trip);
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
