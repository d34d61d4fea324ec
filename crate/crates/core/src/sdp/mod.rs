//! Feasibility of block-diagonal linear matrix inequalities.
//!
//! [`solve_feasibility`] maximizes a common margin `t` subject to
//! `F_j(y)/s_j ⪰ tI` for every block and `‖y‖_∞ ≤ R`, following the central
//! path of the log-det barrier with damped Newton steps. The Newton system is
//! factored with a sparse Cholesky ([`sparse`]) whose pattern is derived once
//! from which variables share a block.
//!
//! [`sdpa`] reads and writes the SDPA sparse text format.

pub mod sdpa;
pub mod sparse;

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::linalg::{Cholesky, SymmetricMatrix};
use crate::lmi::{evaluate_system, LmiSystem, Strictness};
use sparse::SymbolicCholesky;

pub use sdpa::{export_sdpa, import_sdpa, SdpaError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveOptions {
    /// Relative margin improvement below which continuation stops.
    pub margin_tol: f64,
    /// Margin a point needs to count as feasible.
    pub feas_floor: f64,
    /// Newton iteration cap per centering stage.
    pub max_newton_iters: usize,
    /// Box bound on every variable.
    pub var_bound_r: f64,
    /// Factor applied to the barrier weight `μ = 1/w` after each stage.
    pub barrier_mu_shrink: f64,
    /// Stop as soon as an iterate reaches `feas_floor` and passes the
    /// eigenvalue check. The verdict is unchanged; `best_margin` is then a
    /// lower bound on the optimal margin rather than its converged value.
    pub stop_when_feasible: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            margin_tol: 1e-7,
            feas_floor: 1e-6,
            max_newton_iters: 200,
            var_bound_r: 1e4,
            barrier_mu_shrink: 0.2,
            stop_when_feasible: true,
        }
    }
}

impl SolveOptions {
    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("margin_tol", self.margin_tol),
            ("feas_floor", self.feas_floor),
            ("var_bound_r", self.var_bound_r),
            ("barrier_mu_shrink", self.barrier_mu_shrink),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("{name} must be positive, got {v}"));
            }
        }
        if self.barrier_mu_shrink >= 1.0 {
            return Err(format!(
                "barrier_mu_shrink must be < 1, got {}",
                self.barrier_mu_shrink
            ));
        }
        if self.max_newton_iters == 0 {
            return Err("max_newton_iters must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Feasible,
    NotFeasibleWithinBounds,
    NumericalFailure,
}

/// One centering stage of the barrier continuation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub weight: f64,
    pub margin: f64,
    pub newton_steps: usize,
    pub decrement: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveResult {
    pub status: SolveStatus,
    /// Present iff `status` is `Feasible`.
    pub y: Option<Vec<f64>>,
    pub best_margin: f64,
    /// Total Newton iterations.
    pub iterations: usize,
    pub wall_time: f64,
    /// Per-block scale factors `s_j`.
    pub block_scales: Vec<f64>,
    pub trace: Vec<StageRecord>,
    pub message: Option<String>,
}

/// Dense local data of one block: scaled constant and coefficients, with the
/// margin variable appended as the last entry of `vars` (coefficient `−I`).
struct BlockData {
    dim: usize,
    constant: SymmetricMatrix,
    vars: Vec<usize>,
    coeffs: Vec<SymmetricMatrix>,
    /// Storage slot of Hessian entry `(vars[a], vars[b])`, `b ≤ a`, row-major.
    slots: Vec<usize>,
}

impl BlockData {
    fn eval(&self, x: &[f64]) -> SymmetricMatrix {
        let mut g = self.constant.clone();
        for (&k, f) in self.vars.iter().zip(&self.coeffs) {
            g.axpy(x[k], f);
        }
        g
    }
}

/// Gradient and Hessian of `−log det G(x)` restricted to a block's variables.
struct LocalDerivs {
    grad: Vec<f64>,
    hess: Vec<f64>,
}

struct Problem {
    blocks: Vec<BlockData>,
    sym: SymbolicCholesky,
    /// Number of `y` variables; `x = (y, t)` has length `d + 1`.
    d: usize,
    diag_slots: Vec<usize>,
    slot_coords: Vec<(usize, usize)>,
    r: f64,
    nu: f64,
}

impl Problem {
    fn new(system: &LmiSystem, r: f64) -> (Self, Vec<f64>) {
        let d = system.layout.total_len();
        let t_idx = d;
        let scales: Vec<f64> = system
            .blocks
            .iter()
            .map(|b| b.constant.frobenius_norm().max(1.0))
            .collect();
        let mut edges = Vec::new();
        let mut raw: Vec<(usize, SymmetricMatrix, Vec<usize>, Vec<SymmetricMatrix>)> = Vec::new();
        for (b, &s) in system.blocks.iter().zip(&scales) {
            let mut vars: Vec<usize> = b.coeffs.iter().map(|(k, _)| *k).collect();
            let mut coeffs: Vec<SymmetricMatrix> =
                b.coeffs.iter().map(|(_, f)| f.scale(1.0 / s)).collect();
            vars.push(t_idx);
            coeffs.push(SymmetricMatrix::identity(b.dim).scale(-1.0));
            for (i, &a) in vars.iter().enumerate() {
                for &c in &vars[..i] {
                    edges.push((a, c));
                }
            }
            raw.push((b.dim, b.constant.scale(1.0 / s), vars, coeffs));
        }
        let sym = SymbolicCholesky::analyze(d + 1, edges);
        let blocks = raw
            .into_iter()
            .map(|(dim, constant, vars, coeffs)| {
                let mut slots = Vec::with_capacity(vars.len() * (vars.len() + 1) / 2);
                for (i, &a) in vars.iter().enumerate() {
                    for &c in &vars[..=i] {
                        slots.push(sym.slot(a, c).expect("pattern covers block pairs"));
                    }
                }
                BlockData {
                    dim,
                    constant,
                    vars,
                    coeffs,
                    slots,
                }
            })
            .collect::<Vec<_>>();
        let diag_slots = (0..=d).map(|i| sym.slot(i, i).expect("diagonal")).collect();
        let nu = blocks.iter().map(|b| b.dim as f64).sum::<f64>() + 2.0 * d as f64;
        let slot_coords = sym.slot_coords();
        (
            Self {
                blocks,
                sym,
                d,
                diag_slots,
                slot_coords,
                r,
                nu,
            },
            scales,
        )
    }

    /// Barrier value `−Σ log det G_j − Σ log(R² − y_i²)`, or `None` outside the domain.
    fn barrier(&self, x: &[f64]) -> Option<f64> {
        let parts: Vec<Option<f64>> = self
            .blocks
            .par_iter()
            .map(|b| Cholesky::factor(&b.eval(x)).map(|c| -c.log_det()))
            .collect();
        let mut total = 0.0;
        for p in parts {
            total += p?;
        }
        for &yi in &x[..self.d] {
            let s = self.r * self.r - yi * yi;
            if !(s > 0.0) {
                return None;
            }
            total -= s.ln();
        }
        Some(total)
    }

    fn local_derivs(b: &BlockData, x: &[f64]) -> Option<LocalDerivs> {
        let chol = Cholesky::factor(&b.eval(x))?;
        let ginv = chol.inverse();
        let dim = b.dim;
        // M_a = G⁻¹ F_a, dense row-major
        let ms: Vec<Vec<f64>> = b
            .coeffs
            .iter()
            .map(|f| {
                let fd = f.to_dense();
                let mut m = vec![0.0; dim * dim];
                for i in 0..dim {
                    for k in 0..dim {
                        let gik = ginv[(i, k)];
                        if gik == 0.0 {
                            continue;
                        }
                        for j in 0..dim {
                            m[i * dim + j] += gik * fd[(k, j)];
                        }
                    }
                }
                m
            })
            .collect();
        let grad: Vec<f64> = ms
            .iter()
            .map(|m| -(0..dim).map(|i| m[i * dim + i]).sum::<f64>())
            .collect();
        let mut hess = Vec::with_capacity(ms.len() * (ms.len() + 1) / 2);
        for (a, ma) in ms.iter().enumerate() {
            for mb in &ms[..=a] {
                let mut tr = 0.0;
                for i in 0..dim {
                    for j in 0..dim {
                        tr += ma[i * dim + j] * mb[j * dim + i];
                    }
                }
                hess.push(tr);
            }
        }
        Some(LocalDerivs { grad, hess })
    }

    /// Gradient and packed Hessian of `w·(−t) + barrier`.
    fn derivs(&self, x: &[f64], w: f64) -> Option<(Vec<f64>, Vec<f64>)> {
        let locals: Vec<Option<LocalDerivs>> = self
            .blocks
            .par_iter()
            .map(|b| Self::local_derivs(b, x))
            .collect();
        let mut grad = vec![0.0; self.d + 1];
        let mut hess = vec![0.0; self.sym.nnz()];
        for (b, loc) in self.blocks.iter().zip(locals) {
            let loc = loc?;
            for (&k, g) in b.vars.iter().zip(&loc.grad) {
                grad[k] += g;
            }
            for (&slot, h) in b.slots.iter().zip(&loc.hess) {
                hess[slot] += h;
            }
        }
        for i in 0..self.d {
            let (up, lo) = (self.r - x[i], self.r + x[i]);
            grad[i] += 1.0 / up - 1.0 / lo;
            hess[self.diag_slots[i]] += 1.0 / (up * up) + 1.0 / (lo * lo);
        }
        grad[self.d] -= w;
        Some((grad, hess))
    }

    /// Newton direction, retrying with growing diagonal shifts when the
    /// factorization breaks down.
    fn newton_step(&self, grad: &[f64], hess: &[f64]) -> Option<Vec<f64>> {
        // symmetric diagonal equilibration: D H D with D = diag(H_ii)^(-1/2)
        let scale: Vec<f64> = self
            .diag_slots
            .iter()
            .map(|&s| {
                let h = hess[s];
                if h > 0.0 && h.is_finite() {
                    1.0 / h.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        let scaled: Vec<f64> = hess
            .iter()
            .zip(&self.slot_coords)
            .map(|(h, &(i, j))| h * scale[i] * scale[j])
            .collect();
        let rhs: Vec<f64> = grad.iter().zip(&scale).map(|(g, s)| -g * s).collect();
        let mut shift = 0.0;
        for _ in 0..8 {
            if let Some(f) = self.sym.factor(&scaled, shift) {
                let dz = f.solve(&rhs);
                if dz.iter().all(|v| v.is_finite()) {
                    return Some(dz.iter().zip(&scale).map(|(z, s)| z * s).collect());
                }
            }
            shift = if shift == 0.0 { 1e-14 } else { shift * 100.0 };
        }
        None
    }
}

/// Decides feasibility of `system` by maximizing the common block margin.
///
/// Every block, strict or not, is held to the same margin `t`; the result is
/// `Feasible` when the best `t` reaches `opts.feas_floor` and an independent
/// eigenvalue check of the strict blocks confirms it.
pub fn solve_feasibility(system: &LmiSystem, opts: &SolveOptions) -> SolveResult {
    let start = Instant::now();
    let (prob, scales) = Problem::new(system, opts.var_bound_r);
    let d = prob.d;
    let mut result = SolveResult {
        status: SolveStatus::NumericalFailure,
        y: None,
        best_margin: f64::NEG_INFINITY,
        iterations: 0,
        wall_time: 0.0,
        block_scales: scales.clone(),
        trace: Vec::new(),
        message: None,
    };
    if let Err(msg) = opts.validate() {
        result.message = Some(msg);
        return result;
    }
    if prob.blocks.is_empty() {
        result.status = SolveStatus::Feasible;
        result.y = Some(vec![0.0; d]);
        result.best_margin = f64::INFINITY;
        result.wall_time = start.elapsed().as_secs_f64();
        return result;
    }

    let mut x = vec![0.0; d + 1];
    let t0 = prob
        .blocks
        .iter()
        .map(|b| b.constant.min_eigenvalue().unwrap_or(f64::NAN))
        .fold(f64::INFINITY, f64::min);
    if !t0.is_finite() {
        result.message = Some("initial eigenvalue computation failed".into());
        return result;
    }
    x[d] = t0 - 1.0;
    let mut best_t = f64::NEG_INFINITY;
    let mut best_y: Option<Vec<f64>> = None;
    let mut w = 1.0;
    let mut prev_t = f64::NEG_INFINITY;
    const MAX_STAGES: usize = 120;
    // approximate centering: the gap bound below tolerates a small decrement
    const CENTER_DECREMENT: f64 = 0.25;

    let mut failure: Option<String> = None;
    let mut proven_infeasible = false;
    let mut converged = false;
    let mut next_check = opts.feas_floor;
    let mut early: Option<Vec<f64>> = None;
    'stages: for _ in 0..MAX_STAGES {
        let mut steps = 0;
        let mut decrement = f64::INFINITY;
        while steps < opts.max_newton_iters {
            if opts.stop_when_feasible && x[d] >= next_check {
                if soundness_check(system, &x[..d], opts).is_ok() {
                    result.iterations += steps;
                    early = Some(x[..d].to_vec());
                    break 'stages;
                }
                // rounding kept a block below the floor; look again further along
                next_check = 2.0 * x[d];
            }
            let Some((grad, hess)) = prob.derivs(&x, w) else {
                failure = Some("iterate left the barrier domain".into());
                break;
            };
            let Some(dx) = prob.newton_step(&grad, &hess) else {
                failure = Some(format!(
                    "Newton system could not be factored at weight {w:e}"
                ));
                break;
            };
            let lambda2: f64 = -grad.iter().zip(&dx).map(|(g, v)| g * v).sum::<f64>();
            decrement = lambda2.max(0.0).sqrt();
            steps += 1;
            if decrement <= CENTER_DECREMENT {
                // take the full step and stop centering
                let trial: Vec<f64> = x.iter().zip(&dx).map(|(a, b)| a + b).collect();
                if prob.barrier(&trial).is_some() {
                    x = trial;
                }
                break;
            }
            let f0 = prob.barrier(&x).map(|b| b - w * x[d]);
            let damped = 1.0 / (1.0 + decrement);
            let mut alpha = 1.0;
            let mut accepted = None;
            while alpha >= damped {
                let trial: Vec<f64> = x.iter().zip(&dx).map(|(a, b)| a + alpha * b).collect();
                if let (Some(fb), Some(f0)) = (prob.barrier(&trial), f0) {
                    if fb - w * trial[d] <= f0 - 0.01 * alpha * lambda2 {
                        accepted = Some(trial);
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if accepted.is_none() {
                // self-concordance guarantees the damped step stays inside and decreases
                alpha = damped;
                for _ in 0..60 {
                    let trial: Vec<f64> = x.iter().zip(&dx).map(|(a, b)| a + alpha * b).collect();
                    if prob.barrier(&trial).is_some() {
                        accepted = Some(trial);
                        break;
                    }
                    alpha *= 0.5;
                }
            }
            match accepted {
                Some(next) => x = next,
                None => {
                    failure = Some("line search could not find an interior point".into());
                    break;
                }
            }
        }
        result.iterations += steps;
        let t = x[d];
        result.trace.push(StageRecord {
            weight: w,
            margin: t,
            newton_steps: steps,
            decrement,
        });
        if t > best_t {
            best_t = t;
            best_y = Some(x[..d].to_vec());
        }
        if failure.is_some() {
            break;
        }
        if decrement > CENTER_DECREMENT {
            // the duality bound only holds near the central path; keep centering
            continue;
        }
        let gap = 1.1 * prob.nu / w;
        if t + gap < opts.feas_floor {
            proven_infeasible = true;
            break;
        }
        let tol = opts.margin_tol * t.abs().max(1.0);
        if gap < tol || (t - prev_t).abs() < tol {
            converged = true;
            break;
        }
        prev_t = t;
        w /= opts.barrier_mu_shrink;
    }

    if let Some(y) = early {
        result.status = SolveStatus::Feasible;
        result.best_margin = x[d];
        result.y = Some(y);
        result.wall_time = start.elapsed().as_secs_f64();
        return result;
    }
    result.best_margin = best_t;
    result.wall_time = start.elapsed().as_secs_f64();
    if best_t >= opts.feas_floor {
        let y = best_y.expect("best point recorded with best margin");
        match soundness_check(system, &y, opts) {
            Ok(()) => {
                result.status = SolveStatus::Feasible;
                result.y = Some(y);
            }
            Err(msg) => {
                result.status = SolveStatus::NumericalFailure;
                result.message = Some(msg);
            }
        }
    } else if proven_infeasible || converged {
        result.status = SolveStatus::NotFeasibleWithinBounds;
    } else {
        result.status = SolveStatus::NumericalFailure;
        result.message =
            Some(failure.unwrap_or_else(|| "stage limit reached before convergence".into()));
    }
    result.wall_time = start.elapsed().as_secs_f64();
    result
}

/// Re-evaluates every strict block at `y` with the Jacobi eigen-solver.
fn soundness_check(system: &LmiSystem, y: &[f64], opts: &SolveOptions) -> Result<(), String> {
    let evals = evaluate_system(system, y).map_err(|e| e.to_string())?;
    for (b, e) in system.blocks.iter().zip(&evals) {
        if b.strictness == Strictness::Strict && e.lambda_min < opts.feas_floor - opts.margin_tol {
            return Err(format!(
                "block `{}` fails the eigenvalue check: λ_min = {:e}",
                b.name, e.lambda_min
            ));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::CellBounds;
    use crate::linalg::DenseMatrix;
    use crate::lmi::{assemble_thm1, AffineMatrix, BlockRole, VarLayout};
    use std::f64::consts::PI;

    fn scalar_heat(b: f64) -> LmiSystem {
        let cells = vec![CellBounds {
            cell_id: 1,
            b_center: DenseMatrix::from_rows(&[vec![b]]).unwrap(),
            rho: 0.0,
            inflation: 1.0,
        }];
        assemble_thm1(&DenseMatrix::identity(1), &cells, 1.0 / PI, 1).unwrap()
    }

    #[test]
    fn lower_bound_is_feasible() {
        let mut l = VarLayout::new();
        let y = l.scalar("y").unwrap();
        let blk = l
            .affine(y)
            .sub(&AffineMatrix::constant(DenseMatrix::identity(1)))
            .into_block("y >= 1".into(), BlockRole::Main, Strictness::Strict)
            .unwrap();
        let sys = LmiSystem::new(l, vec![blk]).unwrap();
        let opts = SolveOptions {
            stop_when_feasible: false,
            ..Default::default()
        };
        let res = solve_feasibility(&sys, &opts);
        assert_eq!(res.status, SolveStatus::Feasible);
        assert!(res.y.as_ref().unwrap()[0] >= 1.0 + opts.feas_floor);
        let small = solve_feasibility(
            &sys,
            &SolveOptions {
                var_bound_r: 10.0,
                ..opts
            },
        );
        assert!(res.best_margin > small.best_margin);
    }

    #[test]
    fn contradictory_signs_are_infeasible() {
        let mut l = VarLayout::new();
        let y = l.scalar("y").unwrap();
        let blk = l
            .affine(y)
            .kron_right(&DenseMatrix::diag(&[1.0, -1.0]))
            .into_block("sign".into(), BlockRole::Main, Strictness::Strict)
            .unwrap();
        let sys = LmiSystem::new(l, vec![blk]).unwrap();
        let res = solve_feasibility(&sys, &SolveOptions::default());
        assert_eq!(res.status, SolveStatus::NotFeasibleWithinBounds);
        assert!(res.y.is_none());
        assert!(res.best_margin <= 0.0);
    }

    #[test]
    fn scalar_heat_closed_form() {
        let opts = SolveOptions::default();
        assert_eq!(
            solve_feasibility(&scalar_heat(9.0), &opts).status,
            SolveStatus::Feasible
        );
        assert_eq!(
            solve_feasibility(&scalar_heat(10.0), &opts).status,
            SolveStatus::NotFeasibleWithinBounds
        );
        assert_eq!(
            solve_feasibility(&scalar_heat(9.8), &opts).status,
            SolveStatus::Feasible
        );
        assert_eq!(
            solve_feasibility(&scalar_heat(9.95), &opts).status,
            SolveStatus::NotFeasibleWithinBounds
        );
    }

    #[test]
    fn early_stop_keeps_the_verdict() {
        let full = SolveOptions {
            stop_when_feasible: false,
            ..Default::default()
        };
        for b in [1.0, 9.0, 9.95] {
            let early = solve_feasibility(&scalar_heat(b), &SolveOptions::default());
            let late = solve_feasibility(&scalar_heat(b), &full);
            assert_eq!(early.status, late.status);
            assert!(early.iterations <= late.iterations);
        }
    }

    #[test]
    fn deterministic_output() {
        let sys = scalar_heat(5.0);
        let a = solve_feasibility(&sys, &SolveOptions::default());
        let b = solve_feasibility(&sys, &SolveOptions::default());
        assert_eq!(a.status, b.status);
        let bits = |r: &SolveResult| {
            r.y.as_ref()
                .unwrap()
                .iter()
                .map(|v| v.to_bits())
                .collect::<Vec<_>>()
        };
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn invalid_options_fail_cleanly() {
        let res = solve_feasibility(
            &scalar_heat(1.0),
            &SolveOptions {
                barrier_mu_shrink: 1.5,
                ..Default::default()
            },
        );
        assert_eq!(res.status, SolveStatus::NumericalFailure);
        assert!(res.message.is_some());
    }
}
