//! Scalar and matrix data consumed by the LMIs: coercivity of `A`, the
//! Poincaré constant of the domain, cellwise values of `B`, and sampled bounds
//! on the approximation error `ρ`.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{EvalContext, ExprError, MatrixExpr, Params};
use crate::linalg::{operator_norm, DenseMatrix, LinalgError};
use crate::mesh::{barycentric, Cell, Domain, MeshError, Partition, SimplicialMesh};

/// Default multiplier applied to sampled error maxima.
pub const DEFAULT_RHO_INFLATION: f64 = 1.05;

/// Default samples per axis per cell (spacing h/20).
pub const DEFAULT_SAMPLES_PER_CELL: usize = 21;

#[derive(Debug, Error)]
pub enum BoundsError {
    #[error(
        "diffusion matrix is not coercive: smallest eigenvalue of its symmetric part is {alpha:e}"
    )]
    NotCoercive { alpha: f64 },
    #[error("no Poincaré constant is known for {0}; supply one explicitly")]
    MissingPoincare(String),
    #[error("invalid Poincaré constant {0}")]
    InvalidPoincare(f64),
    #[error("inflation factor must be ≥ 1, got {0}")]
    InvalidInflation(f64),
    #[error("coefficient evaluation failed in cell {cell}: {source}")]
    Eval {
        cell: usize,
        #[source]
        source: ExprError,
    },
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoercivityResult {
    pub alpha: f64,
}

/// `α = λ_min((A + Aᵀ)/2)`; fails with [`BoundsError::NotCoercive`] when `α ≤ 0`.
pub fn coercivity_alpha(a: &DenseMatrix) -> Result<CoercivityResult, BoundsError> {
    if !a.is_square() {
        return Err(LinalgError::Dimension(format!(
            "A must be square, got {}×{}",
            a.rows(),
            a.cols()
        ))
        .into());
    }
    let alpha = a.sym_part().min_eigenvalue()?;
    if alpha > 0.0 {
        Ok(CoercivityResult { alpha })
    } else {
        Err(BoundsError::NotCoercive { alpha })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoincareMethod {
    Interval,
    Slab,
    UnitBall3d,
    UserSupplied,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoincareConstant {
    pub c: f64,
    pub method: PoincareMethod,
}

/// Poincaré constant `c` with `‖z‖ ≤ c‖∇z‖` on `H¹₀(Ω)`.
///
/// A user value takes precedence. Boxes use the slab bound (smallest side).
pub fn poincare_constant(
    domain: &Domain,
    user: Option<f64>,
) -> Result<PoincareConstant, BoundsError> {
    if let Some(c) = user {
        if !(c > 0.0 && c.is_finite()) {
            return Err(BoundsError::InvalidPoincare(c));
        }
        return Ok(PoincareConstant {
            c,
            method: PoincareMethod::UserSupplied,
        });
    }
    let (c, method) = match domain {
        Domain::Interval { a, b } => ((b - a) / PI, PoincareMethod::Interval),
        Domain::Slab { width } => (*width, PoincareMethod::Slab),
        Domain::Box { lower, upper } => {
            let side = lower
                .iter()
                .zip(upper)
                .map(|(l, u)| u - l)
                .fold(f64::INFINITY, f64::min);
            (side, PoincareMethod::Slab)
        }
        Domain::UnitBall3d => (1.0 / PI, PoincareMethod::UnitBall3d),
        Domain::Other { m } => {
            return Err(BoundsError::MissingPoincare(format!(
                "a general {m}-dimensional domain"
            )))
        }
    };
    if !(c > 0.0 && c.is_finite()) {
        return Err(BoundsError::InvalidPoincare(c));
    }
    Ok(PoincareConstant { c, method })
}

/// Per-cell data for the constant-`P` analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellBounds {
    pub cell_id: usize,
    pub b_center: DenseMatrix,
    pub rho: f64,
    pub inflation: f64,
}

fn eval_at(
    b: &MatrixExpr,
    x: &[f64],
    params: &Params,
    cell: usize,
) -> Result<DenseMatrix, BoundsError> {
    b.eval(&EvalContext::new(x, params))
        .map_err(|source| BoundsError::Eval { cell, source })
}

/// `B_k := B(center)`.
pub fn center_value(
    b: &MatrixExpr,
    cell: &Cell,
    params: &Params,
) -> Result<DenseMatrix, BoundsError> {
    eval_at(b, &cell.center, params, cell.id)
}

fn check_inflation(inflation: f64) -> Result<(), BoundsError> {
    if inflation >= 1.0 && inflation.is_finite() {
        Ok(())
    } else {
        Err(BoundsError::InvalidInflation(inflation))
    }
}

/// `inflation × max_{x ∈ samples} ‖B(x) − B_k‖₂`.
pub fn estimate_rho_thm1(
    b: &MatrixExpr,
    cell: &Cell,
    b_k: &DenseMatrix,
    params: &Params,
    inflation: f64,
) -> Result<f64, BoundsError> {
    check_inflation(inflation)?;
    let mut worst: f64 = 0.0;
    for x in &cell.sample_points {
        let bx = eval_at(b, x, params, cell.id)?;
        worst = worst.max(operator_norm(&(&bx - b_k)));
    }
    Ok(worst * inflation)
}

/// Center values and error bounds for every cell, computed in parallel and
/// returned in cell order.
pub fn partition_bounds(
    b: &MatrixExpr,
    partition: &Partition,
    params: &Params,
    inflation: f64,
) -> Result<Vec<CellBounds>, BoundsError> {
    check_inflation(inflation)?;
    partition
        .cells
        .par_iter()
        .map(|cell| {
            let b_center = center_value(b, cell, params)?;
            let rho = estimate_rho_thm1(b, cell, &b_center, params, inflation)?;
            Ok(CellBounds {
                cell_id: cell.id,
                b_center,
                rho,
                inflation,
            })
        })
        .collect()
}

/// `B_p := B(ξ_p)` for every mesh vertex.
pub fn vertex_values(
    b: &MatrixExpr,
    mesh: &SimplicialMesh,
    params: &Params,
) -> Result<Vec<DenseMatrix>, BoundsError> {
    mesh.vertices
        .par_iter()
        .map(|v| eval_at(b, v, params, 0))
        .collect()
}

/// Barycentric lattice points of an m-simplex: all `α = i/(s−1)` with
/// nonnegative integer `i` summing to `s − 1`. On an interval these are the
/// `s` equispaced points including both endpoints.
pub fn barycentric_lattice(m: usize, samples_per_edge: usize) -> Vec<Vec<f64>> {
    let denom = samples_per_edge.saturating_sub(1).max(1);
    let mut out = Vec::new();
    let mut current = vec![0usize; m + 1];
    fn rec(
        pos: usize,
        remaining: usize,
        current: &mut Vec<usize>,
        denom: usize,
        out: &mut Vec<Vec<f64>>,
    ) {
        let last = current.len() - 1;
        if pos == last {
            current[last] = remaining;
            out.push(current.iter().map(|&i| i as f64 / denom as f64).collect());
            return;
        }
        for i in (0..=remaining).rev() {
            current[pos] = i;
            rec(pos + 1, remaining - i, current, denom, out);
        }
    }
    rec(0, denom, &mut current, denom, &mut out);
    out
}

/// `inflation × max ‖B(x) − Σ α_ℓ(x) B_{p(k,ℓ)}‖₂` over a barycentric lattice
/// of simplex `k`.
pub fn estimate_rho_thm2(
    b: &MatrixExpr,
    mesh: &SimplicialMesh,
    k: usize,
    vertex_values: &[DenseMatrix],
    params: &Params,
    samples_per_edge: usize,
    inflation: f64,
) -> Result<f64, BoundsError> {
    check_inflation(inflation)?;
    if vertex_values.len() != mesh.vertices.len() {
        return Err(MeshError::Dimension(format!(
            "{} vertex values for {} mesh vertices",
            vertex_values.len(),
            mesh.vertices.len()
        ))
        .into());
    }
    let ids = &mesh.simplices[k].vertex_ids;
    let coords = mesh.simplex_coords(k);
    let m = mesh.m;
    let mut worst: f64 = 0.0;
    for alpha in barycentric_lattice(m, samples_per_edge) {
        let x: Vec<f64> = (0..m)
            .map(|d| alpha.iter().zip(&coords).map(|(a, v)| a * v[d]).sum())
            .collect();
        // recompute α from x so that the residual uses the same map as the analysis
        let alpha = barycentric(&coords, &x)?;
        let bx = eval_at(b, &x, params, k + 1)?;
        let mut interp = DenseMatrix::zeros(bx.rows(), bx.cols());
        for (a, &p) in alpha.iter().zip(ids) {
            interp = &interp + &vertex_values[p].scale(*a);
        }
        worst = worst.max(operator_norm(&(&bx - &interp)));
    }
    Ok(worst * inflation)
}

/// Interpolation-error bounds for all simplices, in simplex order.
pub fn mesh_rhos(
    b: &MatrixExpr,
    mesh: &SimplicialMesh,
    vertex_values: &[DenseMatrix],
    params: &Params,
    samples_per_edge: usize,
    inflation: f64,
) -> Result<Vec<f64>, BoundsError> {
    (0..mesh.simplices.len())
        .into_par_iter()
        .map(|k| {
            estimate_rho_thm2(
                b,
                mesh,
                k,
                vertex_values,
                params,
                samples_per_edge,
                inflation,
            )
        })
        .collect()
}
