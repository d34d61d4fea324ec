//! Finite-difference stability oracle for 1-D problems.
//!
//! The semi-discrete operator `L = A ⊗ D₂ + blockdiag(B(xᵢ))` acts on
//! node-major vectors (`z[i·n + c]` is component `c` at interior node `i`).
//! Stability is decided from the rightmost eigenvalue, either by a dense
//! Schur decomposition or by power iteration on the implicit-Euler
//! propagator `(I − dt·L)⁻¹`, whose dominant eigenvalue `1/(1 − dt·λ)`
//! belongs to the rightmost real eigenvalue λ of `L`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{EvalContext, ExprError};
use crate::linalg::{DenseMatrix, LinalgError};
use crate::lmi::{Certificate, PField};
use crate::mesh::Domain;
use crate::problem::ProblemSpec;

/// Largest operator dimension handled by the dense eigenvalue path.
pub const DENSE_EIGEN_LIMIT: usize = 800;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("the finite-difference oracle needs a 1-D interval domain")]
    Unsupported,
    #[error("need at least 3 interior grid points, got {0}")]
    TooFewPoints(usize),
    #[error("B is not finite at node {node} (x = {x})")]
    NonFinite { node: usize, x: f64 },
    #[error("evaluating B at node {node}: {source}")]
    Eval { node: usize, source: ExprError },
    #[error("implicit step matrix is singular at node {0}")]
    SingularStep(usize),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("initial state has length {got}, expected {expected}")]
    StateLength { expected: usize, got: usize },
    #[error("Lyapunov weight undefined at x = {0}")]
    WeightUndefined(f64),
    #[error("bracket [{lo}, {hi}] is invalid: decider({lo}) = {lo_ok}, decider({hi}) = {hi_ok}")]
    BracketInvalid {
        lo: f64,
        hi: f64,
        lo_ok: bool,
        hi_ok: bool,
    },
}

/// Semi-discrete operator on the interior nodes of a uniform grid.
#[derive(Debug, Clone)]
pub struct DiscreteSystem {
    pub grid_points: usize,
    pub m: usize,
    pub n: usize,
    pub h: f64,
    pub coords: Vec<f64>,
    pub a: DenseMatrix,
    /// `B(xᵢ)` per interior node.
    pub b_nodes: Vec<DenseMatrix>,
}

/// Discretizes a 1-D problem with `g` interior points.
pub fn discretize_1d(problem: &ProblemSpec, g: usize) -> Result<DiscreteSystem, OracleError> {
    let Domain::Interval { a: lo, b: hi } = problem.domain else {
        return Err(OracleError::Unsupported);
    };
    if problem.m != 1 {
        return Err(OracleError::Unsupported);
    }
    if g < 3 {
        return Err(OracleError::TooFewPoints(g));
    }
    let h = (hi - lo) / (g + 1) as f64;
    let coords: Vec<f64> = (1..=g).map(|i| lo + i as f64 * h).collect();
    let b_nodes = coords
        .iter()
        .enumerate()
        .map(|(node, &x)| {
            let xs = [x];
            let ctx = EvalContext::new(&xs, &problem.params);
            let v = problem
                .b
                .eval(&ctx)
                .map_err(|source| OracleError::Eval { node, source })?;
            if !v.is_finite() {
                return Err(OracleError::NonFinite { node, x });
            }
            Ok(v)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(DiscreteSystem {
        grid_points: g,
        m: 1,
        n: problem.n,
        h,
        coords,
        a: problem.a.clone(),
        b_nodes,
    })
}

impl DiscreteSystem {
    pub fn dim(&self) -> usize {
        self.n * self.grid_points
    }

    /// `L z`.
    pub fn apply(&self, z: &[f64]) -> Vec<f64> {
        let (n, g) = (self.n, self.grid_points);
        let inv_h2 = 1.0 / (self.h * self.h);
        let mut out = vec![0.0; n * g];
        let mut lap = vec![0.0; n];
        for i in 0..g {
            for c in 0..n {
                let left = if i > 0 { z[(i - 1) * n + c] } else { 0.0 };
                let right = if i + 1 < g { z[(i + 1) * n + c] } else { 0.0 };
                lap[c] = (left - 2.0 * z[i * n + c] + right) * inv_h2;
            }
            let zi = &z[i * n..(i + 1) * n];
            let al = self.a.matvec(&lap);
            let bz = self.b_nodes[i].matvec(zi);
            for c in 0..n {
                out[i * n + c] = al[c] + bz[c];
            }
        }
        out
    }

    /// Dense copy of `L`.
    pub fn to_dense(&self) -> DenseMatrix {
        let (n, g) = (self.n, self.grid_points);
        let inv_h2 = 1.0 / (self.h * self.h);
        let mut l = DenseMatrix::zeros(n * g, n * g);
        for i in 0..g {
            let diag = &self.b_nodes[i] - &self.a.scale(2.0 * inv_h2);
            l.set_block(i * n, i * n, &diag);
            let off = self.a.scale(inv_h2);
            if i > 0 {
                l.set_block(i * n, (i - 1) * n, &off);
            }
            if i + 1 < g {
                l.set_block(i * n, (i + 1) * n, &off);
            }
        }
        l
    }

    /// Factors `I − dt·L` (block tridiagonal) for repeated solves.
    pub fn implicit_stepper(&self, dt: f64) -> Result<ImplicitStepper, OracleError> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(OracleError::Invalid(format!(
                "time step must be positive, got {dt}"
            )));
        }
        let (n, g) = (self.n, self.grid_points);
        let k = dt / (self.h * self.h);
        // sub- and super-diagonal blocks are both −k·A
        let off = self.a.scale(-k);
        let eye = DenseMatrix::identity(n);
        let mut inv_diag = Vec::with_capacity(g);
        let mut upper = Vec::with_capacity(g);
        for i in 0..g {
            let mut d = &(&eye - &self.b_nodes[i].scale(dt)) + &self.a.scale(2.0 * k);
            if i > 0 {
                let prev: &DenseMatrix = &upper[i - 1];
                d = &d - &(&off * prev);
            }
            let di = d
                .inverse(1e-14)
                .map_err(|_: LinalgError| OracleError::SingularStep(i))?;
            upper.push(&di * &off);
            inv_diag.push(di);
        }
        Ok(ImplicitStepper {
            n,
            off,
            inv_diag,
            upper,
        })
    }
}

/// Block-Thomas factorization of `I − dt·L`.
#[derive(Debug, Clone)]
pub struct ImplicitStepper {
    n: usize,
    off: DenseMatrix,
    inv_diag: Vec<DenseMatrix>,
    /// `D'ᵢ⁻¹ U`
    upper: Vec<DenseMatrix>,
}

impl ImplicitStepper {
    /// Solves `(I − dt·L) z⁺ = z`.
    pub fn step(&self, z: &[f64]) -> Vec<f64> {
        let n = self.n;
        let g = self.inv_diag.len();
        let mut y = vec![0.0; n * g];
        for i in 0..g {
            let mut r = z[i * n..(i + 1) * n].to_vec();
            if i > 0 {
                let c = self.off.matvec(&y[(i - 1) * n..i * n]);
                for (rv, cv) in r.iter_mut().zip(c) {
                    *rv -= cv;
                }
            }
            let yi = self.inv_diag[i].matvec(&r);
            y[i * n..(i + 1) * n].copy_from_slice(&yi);
        }
        for i in (0..g.saturating_sub(1)).rev() {
            let c = self.upper[i].matvec(&y[(i + 1) * n..(i + 2) * n]);
            for (yv, cv) in y[i * n..(i + 1) * n].iter_mut().zip(c) {
                *yv -= cv;
            }
        }
        y
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleMethod {
    Eigen,
    Simulate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleVerdict {
    pub stable: bool,
    /// Rightmost real part of the spectrum (the asymptotic growth rate).
    pub decay_estimate: f64,
    pub method: OracleMethod,
}

/// Power-iteration settings for the implicit-Euler spectral estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerOptions {
    pub dt: f64,
    pub steps: usize,
    pub seed: u64,
}

impl Default for PowerOptions {
    fn default() -> Self {
        Self {
            dt: 0.05,
            steps: 400,
            seed: 7,
        }
    }
}

/// Rightmost real part via dense Schur form; `None` when it does not converge.
pub fn rightmost_eigenvalue_dense(sys: &DiscreteSystem) -> Option<f64> {
    let l = sys.to_dense();
    let dim = l.rows();
    let m = nalgebra::DMatrix::from_row_slice(dim, dim, l.as_slice());
    let schur = nalgebra::linalg::Schur::try_new(m, 1e-14, 10_000)?;
    schur
        .complex_eigenvalues()
        .iter()
        .map(|z| z.re)
        .filter(|v| v.is_finite())
        .reduce(f64::max)
}

/// Rightmost real eigenvalue from power iteration on `(I − dt·L)⁻¹`.
///
/// The log-growth per step is fitted by least squares over the last half of
/// the iterations and mapped back through `λ = (1 − e^{−s}) / dt`.
pub fn rightmost_eigenvalue_power(
    sys: &DiscreteSystem,
    opts: &PowerOptions,
) -> Result<f64, OracleError> {
    if opts.steps < 4 {
        return Err(OracleError::Invalid(
            "power iteration needs at least 4 steps".into(),
        ));
    }
    let stepper = sys.implicit_stepper(opts.dt)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut z: Vec<f64> = (0..sys.dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let n0 = norm(&z);
    z.iter_mut().for_each(|v| *v /= n0);
    let mut log_norm = Vec::with_capacity(opts.steps + 1);
    let mut acc = 0.0;
    log_norm.push(acc);
    for _ in 0..opts.steps {
        z = stepper.step(&z);
        let nz = norm(&z);
        if !(nz > 0.0) || !nz.is_finite() {
            return Err(OracleError::Invalid(
                "power iteration lost the iterate".into(),
            ));
        }
        acc += nz.ln();
        log_norm.push(acc);
        z.iter_mut().for_each(|v| *v /= nz);
    }
    let half = log_norm.len() / 2;
    let ks: Vec<f64> = (half..log_norm.len()).map(|k| k as f64).collect();
    let s = ls_slope(&ks, &log_norm[half..]);
    Ok((1.0 - (-s).exp()) / opts.dt)
}

fn ls_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Decides stability from the rightmost eigenvalue. Small systems use the
/// dense path; larger ones, or a dense path that fails to converge, use the
/// implicit-Euler power estimate and are flagged `Simulate`.
pub fn stability_by_eigs(
    sys: &DiscreteSystem,
    power: &PowerOptions,
) -> Result<OracleVerdict, OracleError> {
    if sys.dim() <= DENSE_EIGEN_LIMIT {
        if let Some(re) = rightmost_eigenvalue_dense(sys) {
            return Ok(OracleVerdict {
                stable: re < 0.0,
                decay_estimate: re,
                method: OracleMethod::Eigen,
            });
        }
    }
    let re = rightmost_eigenvalue_power(sys, power)?;
    Ok(OracleVerdict {
        stable: re < 0.0,
        decay_estimate: re,
        method: OracleMethod::Simulate,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub t: f64,
    /// Discrete L² norm `√(h Σ |zᵢ|²)`.
    pub norm: f64,
    /// `Σ h zᵢᵀ P(xᵢ) zᵢ` when a weight was supplied.
    pub v: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Trajectory {
    pub points: Vec<TrajectoryPoint>,
}

impl Trajectory {
    /// CSV with header `t,norm,V`; `V` is empty when not recorded.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,norm,V\n");
        for p in &self.points {
            let v = p.v.map(|v| format!("{v:.12e}")).unwrap_or_default();
            out.push_str(&format!("{:.12e},{:.12e},{v}\n", p.t, p.norm));
        }
        out
    }

    /// Least-squares slope of `ln ‖z(t)‖` over the second half of the run.
    /// `None` when fewer than two usable points remain.
    pub fn fitted_rate(&self) -> Option<f64> {
        let half = self.points.len() / 2;
        let (ts, ls): (Vec<f64>, Vec<f64>) = self.points[half..]
            .iter()
            .filter(|p| p.norm > 0.0)
            .map(|p| (p.t, p.norm.ln()))
            .unzip();
        if ts.len() < 2 {
            return None;
        }
        Some(ls_slope(&ts, &ls))
    }
}

/// Sampled initial condition `z0(xᵢ)` in node-major order.
pub fn sample_initial(sys: &DiscreteSystem, f: impl Fn(f64) -> Vec<f64>) -> Vec<f64> {
    sys.coords.iter().flat_map(|&x| f(x)).collect()
}

/// Implicit-Euler trajectory from `z0` up to time `t_end`, recording every
/// step. `weight` adds `V(t)`.
pub fn simulate(
    sys: &DiscreteSystem,
    z0: &[f64],
    dt: f64,
    t_end: f64,
    weight: Option<&PField>,
) -> Result<Trajectory, OracleError> {
    if z0.len() != sys.dim() {
        return Err(OracleError::StateLength {
            expected: sys.dim(),
            got: z0.len(),
        });
    }
    if !(t_end > 0.0) || !t_end.is_finite() {
        return Err(OracleError::Invalid(format!(
            "horizon must be positive, got {t_end}"
        )));
    }
    let stepper = sys.implicit_stepper(dt)?;
    let n = sys.n;
    let p_nodes = match weight {
        Some(p) => Some(
            sys.coords
                .iter()
                .map(|&x| {
                    p.at(&[x])
                        .map(|m| m.to_dense())
                        .ok_or(OracleError::WeightUndefined(x))
                })
                .collect::<Result<Vec<_>, _>>()?,
        ),
        None => None,
    };
    let record = |t: f64, z: &[f64]| {
        let norm = (sys.h * z.iter().map(|v| v * v).sum::<f64>()).sqrt();
        let v = p_nodes.as_ref().map(|ps| {
            ps.iter()
                .enumerate()
                .map(|(i, p)| {
                    let zi = &z[i * n..(i + 1) * n];
                    let pz = p.matvec(zi);
                    sys.h * zi.iter().zip(&pz).map(|(a, b)| a * b).sum::<f64>()
                })
                .sum()
        });
        TrajectoryPoint { t, norm, v }
    };
    let steps = (t_end / dt).round().max(1.0) as usize;
    let mut traj = Trajectory {
        points: Vec::with_capacity(steps + 1),
    };
    let mut z = z0.to_vec();
    traj.points.push(record(0.0, &z));
    for k in 1..=steps {
        z = stepper.step(&z);
        traj.points.push(record(k as f64 * dt, &z));
    }
    Ok(traj)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayViolation {
    pub t: f64,
    pub v: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayReport {
    pub checked: usize,
    pub gamma: f64,
    pub first_violation: Option<DecayViolation>,
}

impl DecayReport {
    pub fn passed(&self) -> bool {
        self.first_violation.is_none()
    }
}

/// Checks `V(t) ≤ V(0)·e^{−2γt}·(1 + slack)` at every recorded point that
/// carries `V`.
pub fn lyapunov_decay_check(traj: &Trajectory, cert: &Certificate, slack: f64) -> DecayReport {
    decay_check_with_rate(traj, cert.gamma, slack)
}

/// [`lyapunov_decay_check`] with an explicit rate.
pub fn decay_check_with_rate(traj: &Trajectory, gamma: f64, slack: f64) -> DecayReport {
    let mut report = DecayReport {
        checked: 0,
        gamma,
        first_violation: None,
    };
    let Some(v0) = traj.points.iter().find_map(|p| p.v) else {
        return report;
    };
    for p in &traj.points {
        let Some(v) = p.v else { continue };
        report.checked += 1;
        let bound = v0 * (-2.0 * gamma * p.t).exp() * (1.0 + slack);
        if v > bound && report.first_violation.is_none() {
            report.first_violation = Some(DecayViolation { t: p.t, v, bound });
        }
    }
    report
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub value: f64,
    pub verdict: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BisectionResult {
    /// Largest probed value with a `true` verdict.
    pub threshold: f64,
    /// Every evaluation, in the order it was made (endpoints first).
    pub probes: Vec<Probe>,
}

fn midpoint(lo: f64, hi: f64) -> f64 {
    lo + 0.5 * (hi - lo)
}

fn check_bracket(lo: f64, hi: f64, tol: f64) -> Result<(), OracleError> {
    if !(lo.is_finite() && hi.is_finite() && lo < hi) || !(tol > 0.0) {
        return Err(OracleError::Invalid(format!(
            "need lo < hi and tol > 0, got [{lo}, {hi}], tol {tol}"
        )));
    }
    Ok(())
}

/// Bisection for the largest value where `decider` holds, assuming it is
/// true at `lo` and false at `hi`.
pub fn bisect_threshold(
    mut decider: impl FnMut(f64) -> bool,
    lo: f64,
    hi: f64,
    tol: f64,
) -> Result<BisectionResult, OracleError> {
    check_bracket(lo, hi, tol)?;
    let mut probes = Vec::new();
    let mut probe = |x: f64, probes: &mut Vec<Probe>| {
        let verdict = decider(x);
        probes.push(Probe { value: x, verdict });
        verdict
    };
    let lo_ok = probe(lo, &mut probes);
    let hi_ok = probe(hi, &mut probes);
    if !lo_ok || hi_ok {
        return Err(OracleError::BracketInvalid {
            lo,
            hi,
            lo_ok,
            hi_ok,
        });
    }
    let (mut lo, mut hi) = (lo, hi);
    while hi - lo > tol {
        let mid = midpoint(lo, hi);
        if probe(mid, &mut probes) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(BisectionResult {
        threshold: lo,
        probes,
    })
}

/// Speculative parallel bisection: each round evaluates every midpoint of the
/// next `depth` levels concurrently, then walks them exactly as the sequential
/// search would. The threshold equals [`bisect_threshold`]'s for a
/// deterministic decider; `probes` lists only the on-path evaluations, in
/// sequential order.
pub fn bisect_threshold_parallel(
    decider: impl Fn(f64) -> bool + Sync,
    lo: f64,
    hi: f64,
    tol: f64,
    depth: usize,
) -> Result<BisectionResult, OracleError> {
    check_bracket(lo, hi, tol)?;
    let depth = depth.clamp(1, 6);
    let (lo_ok, hi_ok) = rayon::join(|| decider(lo), || decider(hi));
    if !lo_ok || hi_ok {
        return Err(OracleError::BracketInvalid {
            lo,
            hi,
            lo_ok,
            hi_ok,
        });
    }
    let mut probes = vec![
        Probe {
            value: lo,
            verdict: lo_ok,
        },
        Probe {
            value: hi,
            verdict: hi_ok,
        },
    ];
    let (mut lo, mut hi) = (lo, hi);
    while hi - lo > tol {
        // breadth-first midpoints of the subtree below (lo, hi)
        let mut intervals = vec![(lo, hi)];
        let mut points = Vec::new();
        for _ in 0..depth {
            let mut next = Vec::new();
            for &(a, b) in &intervals {
                if b - a > tol {
                    let m = midpoint(a, b);
                    points.push(m);
                    next.push((a, m));
                    next.push((m, b));
                }
            }
            intervals = next;
        }
        let verdicts: Vec<(f64, bool)> = points.par_iter().map(|&x| (x, decider(x))).collect();
        for _ in 0..depth {
            if hi - lo <= tol {
                break;
            }
            let mid = midpoint(lo, hi);
            let verdict = verdicts
                .iter()
                .find(|(x, _)| x.to_bits() == mid.to_bits())
                .map(|&(_, v)| v)
                .expect("midpoint evaluated speculatively");
            probes.push(Probe {
                value: mid,
                verdict,
            });
            if verdict {
                lo = mid;
            } else {
                hi = mid;
            }
        }
    }
    Ok(BisectionResult {
        threshold: lo,
        probes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::MatrixExpr;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn scalar_heat(b: f64) -> ProblemSpec {
        ProblemSpec {
            m: 1,
            n: 1,
            a: DenseMatrix::identity(1),
            b: MatrixExpr::parse(&[vec!["b".to_string()]]).unwrap(),
            domain: Domain::Interval { a: 0.0, b: 1.0 },
            params: [("b".to_string(), b)].into(),
        }
    }

    fn sym_eigs_sorted(sys: &DiscreteSystem) -> Vec<f64> {
        let l = sys.to_dense();
        let s = crate::linalg::SymmetricMatrix::from_dense(&l, 1e-12).unwrap();
        crate::linalg::sym_eig(&s).unwrap().values
    }

    #[test]
    fn three_point_spectrum_matches_closed_form() {
        let sys = discretize_1d(&scalar_heat(0.0), 3).unwrap();
        let h: f64 = 0.25;
        let mut expected: Vec<f64> = (1..=3)
            .map(|k| -(2.0 - 2.0 * (k as f64 * PI / 4.0).cos()) / (h * h))
            .collect();
        expected.sort_by(f64::total_cmp);
        let got = sym_eigs_sorted(&sys);
        for (g, e) in got.iter().zip(&expected) {
            assert!((g - e).abs() < 1e-10, "{g} vs {e}");
        }
    }

    #[test]
    fn two_components_double_the_dimension() {
        let mut p = scalar_heat(0.0);
        p.n = 2;
        p.a = DenseMatrix::identity(2);
        p.b = MatrixExpr::constant(&DenseMatrix::zeros(2, 2));
        let sys = discretize_1d(&p, 10).unwrap();
        assert_eq!(sys.dim(), 20);
        assert_eq!(sys.to_dense().rows(), 20);
    }

    #[test]
    fn constant_b_shifts_the_spectrum() {
        let base = sym_eigs_sorted(&discretize_1d(&scalar_heat(0.0), 12).unwrap());
        let shifted = sym_eigs_sorted(&discretize_1d(&scalar_heat(2.5), 12).unwrap());
        for (a, b) in base.iter().zip(&shifted) {
            assert!((b - a - 2.5).abs() < 1e-9);
        }
    }

    #[test]
    fn apply_agrees_with_dense_operator() {
        let mut p = scalar_heat(0.3);
        p.n = 2;
        p.a = DenseMatrix::from_rows(&[vec![1.0, 0.1], vec![0.5, 1.0]]).unwrap();
        p.b = MatrixExpr::parse(&[
            vec!["sin(x1) + b".into(), "1".into()],
            vec!["x1".into(), "-2".into()],
        ])
        .unwrap();
        let sys = discretize_1d(&p, 7).unwrap();
        let z: Vec<f64> = (0..sys.dim()).map(|i| (i as f64 * 0.7).cos()).collect();
        let dense = sys.to_dense().matvec(&z);
        for (a, b) in sys.apply(&z).iter().zip(&dense) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn implicit_step_inverts_i_minus_dt_l() {
        let mut p = scalar_heat(1.0);
        p.n = 2;
        p.a = DenseMatrix::from_rows(&[vec![1.0, 0.1], vec![0.5, 1.0]]).unwrap();
        p.b = MatrixExpr::parse(&[vec!["b".into(), "x1".into()], vec!["2".into(), "-1".into()]])
            .unwrap();
        let sys = discretize_1d(&p, 9).unwrap();
        let dt = 0.01;
        let z: Vec<f64> = (0..sys.dim()).map(|i| 1.0 + i as f64).collect();
        let next = sys.implicit_stepper(dt).unwrap().step(&z);
        let lz = sys.apply(&next);
        for i in 0..z.len() {
            assert!((next[i] - dt * lz[i] - z[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn scalar_heat_is_stable_near_minus_pi_squared() {
        let v = stability_by_eigs(
            &discretize_1d(&scalar_heat(0.0), 200).unwrap(),
            &PowerOptions::default(),
        )
        .unwrap();
        assert!(v.stable);
        assert_eq!(v.method, OracleMethod::Eigen);
        assert!(
            (v.decay_estimate + PI * PI).abs() < 0.02 * PI * PI,
            "{}",
            v.decay_estimate
        );
    }

    #[test]
    fn scalar_heat_above_pi_squared_is_unstable() {
        let sys = discretize_1d(&scalar_heat(11.0), 200).unwrap();
        assert!(
            !stability_by_eigs(&sys, &PowerOptions::default())
                .unwrap()
                .stable
        );
        assert!(rightmost_eigenvalue_power(&sys, &PowerOptions::default()).unwrap() > 0.0);
    }

    #[test]
    fn power_estimate_matches_dense_path() {
        let mut p = scalar_heat(7.0);
        p.n = 2;
        p.a = DenseMatrix::from_rows(&[vec![1.0, 0.1], vec![0.5, 1.0]]).unwrap();
        p.b = MatrixExpr::parse(&[
            vec!["2*sin(2*pi*x1) + b".into(), "2*tan(x1)".into()],
            vec!["2*cos(pi*x1)".into(), "2*(2*x1) + b".into()],
        ])
        .unwrap();
        let sys = discretize_1d(&p, 150).unwrap();
        let dense = rightmost_eigenvalue_dense(&sys).unwrap();
        let power = rightmost_eigenvalue_power(&sys, &PowerOptions::default()).unwrap();
        assert!((dense - power).abs() < 1e-3, "dense {dense} power {power}");
    }

    #[test]
    fn heat_trajectory_decays_at_pi_squared() {
        let sys = discretize_1d(&scalar_heat(0.0), 200).unwrap();
        let z0 = sample_initial(&sys, |x| vec![(PI * x).sin()]);
        let traj = simulate(&sys, &z0, 1e-4, 0.5, None).unwrap();
        let rate = traj.fitted_rate().unwrap();
        assert!((rate + PI * PI).abs() < 0.02 * PI * PI, "{rate}");
        assert!(traj.points.windows(2).all(|w| w[1].norm <= w[0].norm));
    }

    #[test]
    fn zero_state_stays_zero() {
        let sys = discretize_1d(&scalar_heat(3.0), 20).unwrap();
        let traj = simulate(&sys, &vec![0.0; 20], 1e-3, 0.1, None).unwrap();
        assert!(traj.points.iter().all(|p| p.norm == 0.0));
        let weight = PField::Constant {
            p: crate::linalg::SymmetricMatrix::identity(1),
        };
        let traj = simulate(&sys, &vec![0.0; 20], 1e-3, 0.1, Some(&weight)).unwrap();
        assert!(decay_check_with_rate(&traj, 5.0, 0.0).passed());
    }

    #[test]
    fn overstated_rate_is_reported() {
        let sys = discretize_1d(&scalar_heat(0.0), 50).unwrap();
        let z0 = sample_initial(&sys, |x| vec![(PI * x).sin()]);
        let weight = PField::Constant {
            p: crate::linalg::SymmetricMatrix::identity(1),
        };
        let traj = simulate(&sys, &z0, 1e-3, 0.5, Some(&weight)).unwrap();
        // V decays like e^{-2π²t}, so γ slightly below π² passes and 10× fails
        assert!(decay_check_with_rate(&traj, 9.0, 0.05).passed());
        let bad = decay_check_with_rate(&traj, 90.0, 0.05);
        assert!(!bad.passed());
        assert!(bad.first_violation.unwrap().t > 0.0);
    }

    #[test]
    fn csv_header_is_fixed() {
        let traj = Trajectory {
            points: vec![TrajectoryPoint {
                t: 0.0,
                norm: 1.0,
                v: None,
            }],
        };
        assert!(traj.to_csv().starts_with("t,norm,V\n"));
    }

    #[test]
    fn bisection_finds_step_threshold() {
        let r = bisect_threshold(|b| b <= 8.35, 0.0, 20.0, 0.01).unwrap();
        assert!((r.threshold - 8.35).abs() <= 0.01);
        assert!(r.probes.len() > 2);
    }

    #[test]
    fn bisection_rejects_bad_brackets() {
        assert!(matches!(
            bisect_threshold(|_| true, 0.0, 1.0, 0.01),
            Err(OracleError::BracketInvalid { hi_ok: true, .. })
        ));
        assert!(matches!(
            bisect_threshold_parallel(|_| false, 0.0, 1.0, 0.01, 2),
            Err(OracleError::BracketInvalid { lo_ok: false, .. })
        ));
    }

    #[test]
    fn grid_refinement_approaches_pi_squared() {
        let mut prev = 0.0;
        for g in [50, 200, 1000] {
            let sys = discretize_1d(&scalar_heat(0.0), g).unwrap();
            let threshold = -rightmost_eigenvalue_power(&sys, &PowerOptions::default()).unwrap();
            assert!(threshold > prev, "G={g}: {threshold} not above {prev}");
            prev = threshold;
        }
        assert!((prev - PI * PI).abs() < 1e-2, "{prev}");
    }

    proptest! {
        #[test]
        fn parallel_bisection_matches_sequential(t in 0.0f64..10.0, tol in 0.001f64..0.5, depth in 1usize..5) {
            let seq = bisect_threshold(|b| b <= t, -1.0, 11.0, tol).unwrap();
            let par = bisect_threshold_parallel(|b| b <= t, -1.0, 11.0, tol, depth).unwrap();
            prop_assert_eq!(seq.threshold.to_bits(), par.threshold.to_bits());
            prop_assert_eq!(seq.probes, par.probes);
        }

        #[test]
        fn random_shift_moves_rightmost_eigenvalue(
            entries in proptest::collection::vec(-3.0f64..3.0, 4),
            shift in -5.0f64..5.0,
        ) {
            let mut p = scalar_heat(0.0);
            p.n = 2;
            p.a = DenseMatrix::from_rows(&[vec![1.0, 0.2], vec![0.1, 0.8]]).unwrap();
            let rows = |s: f64| vec![
                vec![format!("{} + {s}", entries[0]), format!("{}", entries[1])],
                vec![format!("{}", entries[2]), format!("{} + {s}", entries[3])],
            ];
            p.b = MatrixExpr::parse(&rows(0.0)).unwrap();
            let base = rightmost_eigenvalue_dense(&discretize_1d(&p, 8).unwrap()).unwrap();
            p.b = MatrixExpr::parse(&rows(shift)).unwrap();
            let moved = rightmost_eigenvalue_dense(&discretize_1d(&p, 8).unwrap()).unwrap();
            prop_assert!((moved - base - shift).abs() < 1e-8);
        }

        #[test]
        fn implicit_euler_never_amplifies_pure_diffusion(
            z0 in proptest::collection::vec(-1.0f64..1.0, 24),
            dt in 1e-5f64..1e-1,
        ) {
            let mut p = scalar_heat(0.0);
            p.n = 2;
            p.a = DenseMatrix::identity(2);
            p.b = MatrixExpr::constant(&DenseMatrix::zeros(2, 2));
            let sys = discretize_1d(&p, 12).unwrap();
            let traj = simulate(&sys, &z0, dt, 20.0 * dt, None).unwrap();
            for w in traj.points.windows(2) {
                prop_assert!(w[1].norm <= w[0].norm * (1.0 + 1e-12));
            }
        }
    }
}
