//! Lyapunov matrix inequalities as block-diagonal affine maps
//! `y ↦ F₀ + Σ yᵢ Fᵢ` over a flat variable vector, plus post-processing of a
//! feasible point into a stability certificate.
//!
//! Two families are assembled:
//!
//! * constant `P` over a partition ([`assemble_thm1`]): one `2n × 2n` block per
//!   cell, one `n × n` Poincaré block;
//! * piecewise-linear `P(x)` over a simplicial mesh ([`assemble_thm2`]): one
//!   `(3+m)n` block per (simplex, local vertex).
//!
//! Positivity of `P`, `Λ` and the `σ` scalars is expressed as extra strict
//! blocks so that every constraint goes through the same solver path.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bounds::CellBounds;
use crate::expr::{EvalContext, ExprError, MatrixExpr, Params};
use crate::linalg::{kron, sym_eig, DenseMatrix, LinalgError, SymmetricMatrix};
use crate::mesh::{barycentric, MeshError, SimplicialMesh};

/// Floor used for strict inequalities (`≻ 0` realized as `λ_min ≥ DELTA_STRICT`).
pub const DELTA_STRICT: f64 = 1e-6;

/// Relative tolerance for symmetry of assembled blocks.
const SYMMETRY_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum LmiError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("variable `{0}` is declared twice")]
    DuplicateVariable(String),
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("block `{block}` is not symmetric (asymmetry {asymmetry:e})")]
    NotSymmetric { block: String, asymmetry: f64 },
    #[error("point is infeasible: block `{block}` has smallest eigenvalue {lambda_min:e}")]
    InfeasiblePoint { block: String, lambda_min: f64 },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Expr(#[from] ExprError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarKind {
    Sym { dim: usize },
    Diag { dim: usize },
    Scalar,
    Full { rows: usize, cols: usize },
}

impl VarKind {
    pub fn len(&self) -> usize {
        match *self {
            VarKind::Sym { dim } => dim * (dim + 1) / 2,
            VarKind::Diag { dim } => dim,
            VarKind::Scalar => 1,
            VarKind::Full { rows, cols } => rows * cols,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarDesc {
    pub name: String,
    pub kind: VarKind,
    pub offset: usize,
}

/// Handle to a declared variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VarId(usize);

/// Ordered, contiguous mapping from named matrix variables to scalar slots.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VarLayout {
    vars: Vec<VarDesc>,
    #[serde(skip)]
    by_name: BTreeMap<String, usize>,
    total_len: usize,
}

impl VarLayout {
    pub fn new() -> Self {
        Self::default()
    }

    /// A layout of `len` anonymous scalars `y1..y_len`.
    pub fn anonymous(len: usize) -> Self {
        let mut layout = Self::new();
        for i in 0..len {
            layout
                .declare(&format!("y{}", i + 1), VarKind::Scalar)
                .unwrap();
        }
        layout
    }

    pub fn declare(&mut self, name: &str, kind: VarKind) -> Result<VarId, LmiError> {
        if self.by_name.contains_key(name) {
            return Err(LmiError::DuplicateVariable(name.to_string()));
        }
        let id = self.vars.len();
        self.vars.push(VarDesc {
            name: name.to_string(),
            kind,
            offset: self.total_len,
        });
        self.by_name.insert(name.to_string(), id);
        self.total_len += kind.len();
        Ok(VarId(id))
    }

    pub fn sym_matrix(&mut self, name: &str, dim: usize) -> Result<VarId, LmiError> {
        self.declare(name, VarKind::Sym { dim })
    }

    pub fn diag_matrix(&mut self, name: &str, dim: usize) -> Result<VarId, LmiError> {
        self.declare(name, VarKind::Diag { dim })
    }

    pub fn scalar(&mut self, name: &str) -> Result<VarId, LmiError> {
        self.declare(name, VarKind::Scalar)
    }

    pub fn full_matrix(&mut self, name: &str, rows: usize, cols: usize) -> Result<VarId, LmiError> {
        self.declare(name, VarKind::Full { rows, cols })
    }

    pub fn total_len(&self) -> usize {
        self.total_len
    }

    pub fn vars(&self) -> &[VarDesc] {
        &self.vars
    }

    pub fn desc(&self, id: VarId) -> &VarDesc {
        &self.vars[id.0]
    }

    pub fn lookup(&self, name: &str) -> Result<VarId, LmiError> {
        if self.by_name.len() != self.vars.len() {
            // deserialized layouts carry no name index
            return self
                .vars
                .iter()
                .position(|v| v.name == name)
                .map(VarId)
                .ok_or_else(|| LmiError::UnknownVariable(name.to_string()));
        }
        self.by_name
            .get(name)
            .map(|&i| VarId(i))
            .ok_or_else(|| LmiError::UnknownVariable(name.to_string()))
    }

    /// The variable as an affine matrix with unit coefficients.
    pub fn affine(&self, id: VarId) -> AffineMatrix {
        let desc = &self.vars[id.0];
        let o = desc.offset;
        match desc.kind {
            VarKind::Sym { dim } => {
                let mut a = AffineMatrix::zeros(dim, dim);
                let mut slot = o;
                for i in 0..dim {
                    for j in i..dim {
                        let mut e = DenseMatrix::zeros(dim, dim);
                        e[(i, j)] = 1.0;
                        e[(j, i)] = 1.0;
                        a.terms.insert(slot, e);
                        slot += 1;
                    }
                }
                a
            }
            VarKind::Diag { dim } => {
                let mut a = AffineMatrix::zeros(dim, dim);
                for i in 0..dim {
                    let mut e = DenseMatrix::zeros(dim, dim);
                    e[(i, i)] = 1.0;
                    a.terms.insert(o + i, e);
                }
                a
            }
            VarKind::Scalar => {
                let mut a = AffineMatrix::zeros(1, 1);
                a.terms.insert(o, DenseMatrix::identity(1));
                a
            }
            VarKind::Full { rows, cols } => {
                let mut a = AffineMatrix::zeros(rows, cols);
                for i in 0..rows {
                    for j in 0..cols {
                        let mut e = DenseMatrix::zeros(rows, cols);
                        e[(i, j)] = 1.0;
                        a.terms.insert(o + i * cols + j, e);
                    }
                }
                a
            }
        }
    }

    /// Value of a variable at `y` as a dense matrix (scalars are 1×1).
    pub fn value(&self, id: VarId, y: &[f64]) -> DenseMatrix {
        let a = self.affine(id);
        a.eval(y)
    }
}

/// A rows × cols matrix whose entries are affine in the flat variable vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineMatrix {
    rows: usize,
    cols: usize,
    constant: DenseMatrix,
    terms: BTreeMap<usize, DenseMatrix>,
}

impl AffineMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            constant: DenseMatrix::zeros(rows, cols),
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(m: DenseMatrix) -> Self {
        Self {
            rows: m.rows(),
            cols: m.cols(),
            constant: m,
            terms: BTreeMap::new(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    fn map(&self, rows: usize, cols: usize, f: impl Fn(&DenseMatrix) -> DenseMatrix) -> Self {
        Self {
            rows,
            cols,
            constant: f(&self.constant),
            terms: self.terms.iter().map(|(&k, v)| (k, f(v))).collect(),
        }
    }

    pub fn transpose(&self) -> Self {
        self.map(self.cols, self.rows, DenseMatrix::transpose)
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(self.rows, self.cols, |m| m.scale(s))
    }

    /// `L · self`
    pub fn left_mul(&self, l: &DenseMatrix) -> Self {
        assert_eq!(l.cols(), self.rows, "left factor does not conform");
        self.map(l.rows(), self.cols, |m| l.matmul(m).expect("conformable"))
    }

    /// `self · R`
    pub fn right_mul(&self, r: &DenseMatrix) -> Self {
        assert_eq!(r.rows(), self.cols, "right factor does not conform");
        self.map(self.rows, r.cols(), |m| m.matmul(r).expect("conformable"))
    }

    /// `self ⊗ K`
    pub fn kron_right(&self, k: &DenseMatrix) -> Self {
        self.map(self.rows * k.rows(), self.cols * k.cols(), |m| kron(m, k))
    }

    fn combine(&self, other: &Self, sign: f64) -> Self {
        assert_eq!(
            (self.rows, self.cols),
            (other.rows, other.cols),
            "affine shapes differ"
        );
        let mut out = self.clone();
        out.constant = &out.constant + &other.constant.scale(sign);
        for (&k, v) in &other.terms {
            let scaled = v.scale(sign);
            out.terms
                .entry(k)
                .and_modify(|t| *t = &*t + &scaled)
                .or_insert(scaled);
        }
        out
    }

    pub fn add(&self, other: &Self) -> Self {
        self.combine(other, 1.0)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.combine(other, -1.0)
    }

    pub fn eval(&self, y: &[f64]) -> DenseMatrix {
        let mut out = self.constant.clone();
        for (&k, v) in &self.terms {
            out = &out + &v.scale(y[k]);
        }
        out
    }

    /// Coefficient matrix of slot `k` (zero when absent).
    pub fn coeff(&self, k: usize) -> DenseMatrix {
        self.terms
            .get(&k)
            .cloned()
            .unwrap_or_else(|| DenseMatrix::zeros(self.rows, self.cols))
    }

    /// Assembles a square matrix from a grid of blocks; `None` entries are zero
    /// and entries below the diagonal are mirrored from above when absent.
    pub fn from_sym_blocks(sizes: &[usize], upper: &[Vec<Option<&AffineMatrix>>]) -> Self {
        let dim: usize = sizes.iter().sum();
        let starts: Vec<usize> = sizes
            .iter()
            .scan(0, |acc, s| {
                let st = *acc;
                *acc += s;
                Some(st)
            })
            .collect();
        let mut out = AffineMatrix::zeros(dim, dim);
        let mut place = |r0: usize, c0: usize, blk: &AffineMatrix| {
            out.constant.set_block(r0, c0, &blk.constant);
            for (&k, v) in &blk.terms {
                out.terms
                    .entry(k)
                    .or_insert_with(|| DenseMatrix::zeros(dim, dim))
                    .set_block(r0, c0, v);
            }
        };
        for (bi, row) in upper.iter().enumerate() {
            for (bj, blk) in row.iter().enumerate() {
                let Some(blk) = blk else { continue };
                assert!(bj >= bi, "only diagonal and upper blocks may be supplied");
                assert_eq!(
                    (blk.rows, blk.cols),
                    (sizes[bi], sizes[bj]),
                    "block ({bi},{bj}) has wrong shape"
                );
                place(starts[bi], starts[bj], blk);
                if bj > bi {
                    place(starts[bj], starts[bi], &blk.transpose());
                }
            }
        }
        out
    }

    /// Converts a square symmetric affine matrix into a solver block.
    pub fn into_block(
        self,
        name: String,
        role: BlockRole,
        strictness: Strictness,
    ) -> Result<LmiBlock, LmiError> {
        if self.rows != self.cols {
            return Err(LmiError::Dimension(format!(
                "block `{name}` is {}×{}",
                self.rows, self.cols
            )));
        }
        let to_sym = |m: &DenseMatrix| -> Result<SymmetricMatrix, LmiError> {
            let scale = m.max_abs().max(1.0);
            let asym = (0..m.rows())
                .flat_map(|i| (0..i).map(move |j| (i, j)))
                .map(|(i, j)| (m[(i, j)] - m[(j, i)]).abs())
                .fold(0.0, f64::max);
            if asym > SYMMETRY_TOL * scale {
                return Err(LmiError::NotSymmetric {
                    block: name.clone(),
                    asymmetry: asym,
                });
            }
            Ok(SymmetricMatrix::from_dense(m, f64::INFINITY)?)
        };
        let constant = to_sym(&self.constant)?;
        let mut coeffs = Vec::with_capacity(self.terms.len());
        for (k, v) in &self.terms {
            let s = to_sym(v)?;
            if !s.is_zero() {
                coeffs.push((*k, s));
            }
        }
        Ok(LmiBlock {
            name,
            dim: self.rows,
            constant,
            coeffs,
            role,
            strictness,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strictness {
    Strict,
    NonStrict,
}

/// What a block encodes; the certificate margin is taken over `Main` blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockRole {
    Main,
    Poincare,
    Positivity,
}

/// One symmetric block `F₀ + Σ yᵢ Fᵢ`, coefficients sorted by variable index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmiBlock {
    pub name: String,
    pub dim: usize,
    pub constant: SymmetricMatrix,
    pub coeffs: Vec<(usize, SymmetricMatrix)>,
    pub role: BlockRole,
    pub strictness: Strictness,
}

impl LmiBlock {
    pub fn eval(&self, y: &[f64]) -> SymmetricMatrix {
        let mut out = self.constant.clone();
        for (k, f) in &self.coeffs {
            out.axpy(y[*k], f);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Theorem {
    /// Constant `P` over a partition.
    Thm1,
    /// Piecewise-linear `P(x)` over a simplicial mesh.
    Thm2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmiSystem {
    pub layout: VarLayout,
    pub blocks: Vec<LmiBlock>,
}

impl LmiSystem {
    pub fn new(layout: VarLayout, blocks: Vec<LmiBlock>) -> Result<Self, LmiError> {
        let n = layout.total_len();
        for b in &blocks {
            if b.constant.dim() != b.dim || b.coeffs.iter().any(|(_, f)| f.dim() != b.dim) {
                return Err(LmiError::Dimension(format!(
                    "block `{}` mixes matrix sizes",
                    b.name
                )));
            }
            if let Some((k, _)) = b.coeffs.iter().find(|(k, _)| *k >= n) {
                return Err(LmiError::Dimension(format!(
                    "block `{}` references variable {k} but the layout has {n}",
                    b.name
                )));
            }
            if b.coeffs.windows(2).any(|w| w[0].0 >= w[1].0) {
                return Err(LmiError::Invalid(format!(
                    "block `{}` coefficients are not sorted",
                    b.name
                )));
            }
        }
        Ok(Self { layout, blocks })
    }

    pub fn strictness(&self) -> Vec<Strictness> {
        self.blocks.iter().map(|b| b.strictness).collect()
    }

    pub fn count_role(&self, role: BlockRole) -> usize {
        self.blocks.iter().filter(|b| b.role == role).count()
    }
}

fn positivity_blocks(layout: &VarLayout, ids: &[VarId]) -> Result<Vec<LmiBlock>, LmiError> {
    ids.iter()
        .map(|&id| {
            let name = format!("{} > 0", layout.desc(id).name);
            layout
                .affine(id)
                .into_block(name, BlockRole::Positivity, Strictness::Strict)
        })
        .collect()
}

fn check_square(a: &DenseMatrix, n: usize, what: &str) -> Result<(), LmiError> {
    if a.rows() != n || a.cols() != n {
        return Err(LmiError::Dimension(format!(
            "{what} must be {n}×{n}, got {}×{}",
            a.rows(),
            a.cols()
        )));
    }
    Ok(())
}

/// Constant-`P` system. Variables `P` (sym n), `Λ` (diag n), `σ_1..σ_N`.
///
/// Per cell: `[[Λ − σ_k I − B_kᵀP − PB_k, ρ_k P], [⋆, σ_k I]] ≻ 0`.
/// Poincaré block: `AᵀP + PA − c²Λ ⪰ 0`.
pub fn assemble_thm1(
    a: &DenseMatrix,
    cells: &[CellBounds],
    c: f64,
    n: usize,
) -> Result<LmiSystem, LmiError> {
    check_square(a, n, "A")?;
    if !(c > 0.0 && c.is_finite()) {
        return Err(LmiError::Invalid(format!(
            "Poincaré constant must be positive, got {c}"
        )));
    }
    if cells.is_empty() {
        return Err(LmiError::Invalid("partition has no cells".into()));
    }
    for cb in cells {
        check_square(&cb.b_center, n, &format!("B at cell {}", cb.cell_id))?;
        if !(cb.rho >= 0.0 && cb.rho.is_finite()) {
            return Err(LmiError::Invalid(format!(
                "ρ of cell {} is {}",
                cb.cell_id, cb.rho
            )));
        }
    }
    let mut layout = VarLayout::new();
    let p = layout.sym_matrix("P", n)?;
    let lam = layout.diag_matrix("Lambda", n)?;
    let sigmas: Vec<VarId> = cells
        .iter()
        .map(|cb| layout.scalar(&format!("sigma_{}", cb.cell_id)))
        .collect::<Result<_, _>>()?;
    let p_aff = layout.affine(p);
    let lam_aff = layout.affine(lam);
    let eye = DenseMatrix::identity(n);

    let mut blocks: Vec<LmiBlock> = cells
        .par_iter()
        .zip(&sigmas)
        .map(|(cb, &s)| {
            let sigma_i = layout.affine(s).kron_right(&eye);
            let bk = &cb.b_center;
            let top = lam_aff
                .sub(&sigma_i)
                .sub(&p_aff.left_mul(&bk.transpose()))
                .sub(&p_aff.right_mul(bk));
            let off = p_aff.scale(cb.rho);
            let full = AffineMatrix::from_sym_blocks(
                &[n, n],
                &[vec![Some(&top), Some(&off)], vec![None, Some(&sigma_i)]],
            );
            full.into_block(
                format!("cell {}", cb.cell_id),
                BlockRole::Main,
                Strictness::Strict,
            )
        })
        .collect::<Result<_, _>>()?;

    let poincare = p_aff
        .left_mul(&a.transpose())
        .add(&p_aff.right_mul(a))
        .sub(&lam_aff.scale(c * c));
    blocks.push(poincare.into_block(
        "poincare".into(),
        BlockRole::Poincare,
        Strictness::NonStrict,
    )?);
    let mut pos_ids = vec![p, lam];
    pos_ids.extend(&sigmas);
    blocks.extend(positivity_blocks(&layout, &pos_ids)?);
    LmiSystem::new(layout, blocks)
}

/// Variable handles of the piecewise-linear system.
#[derive(Debug, Clone)]
struct Thm2Vars {
    p: Vec<VarId>,
    lam: VarId,
    sigma: Vec<Vec<VarId>>,
    upsilon: Vec<VarId>,
    xi: Vec<VarId>,
}

/// Piecewise-linear-`P` system over a simplicial mesh.
///
/// Variables (in order): `P_1..P_{N0}` (sym n), `Λ` (diag n), `σ_{k,ℓ}`,
/// `Υ_k`, `Ξ_k` (full n×n). For each simplex `k` and local vertex `ℓ`, with
/// `p = p(k,ℓ)`, the strict block has rows of sizes `[n, n, n, mn]`:
///
/// ```text
/// [ Λ − σI − B_pᵀΥ − ΥᵀB_p   Υᵀ − P_p − B_pᵀΞ   ρ_k P_p   Σ_r (P_{p(k,r)}A) ⊗ v_rᵀ ]
/// [ ⋆                        Ξ + Ξᵀ             0         0                        ]
/// [ ⋆                        ⋆                  σI        0                        ]
/// [ ⋆                        ⋆                  ⋆         (AᵀP_p + P_pA − c²Λ) ⊗ I_m ]
/// ```
pub fn assemble_thm2(
    a: &DenseMatrix,
    mesh: &SimplicialMesh,
    vertex_values: &[DenseMatrix],
    rhos: &[f64],
    c: f64,
    n: usize,
) -> Result<LmiSystem, LmiError> {
    check_square(a, n, "A")?;
    if !(c > 0.0 && c.is_finite()) {
        return Err(LmiError::Invalid(format!(
            "Poincaré constant must be positive, got {c}"
        )));
    }
    if mesh.simplices.is_empty() {
        return Err(LmiError::Invalid("mesh has no simplices".into()));
    }
    if vertex_values.len() != mesh.vertices.len() {
        return Err(LmiError::Dimension(format!(
            "{} vertex values for {} vertices",
            vertex_values.len(),
            mesh.vertices.len()
        )));
    }
    if rhos.len() != mesh.simplices.len() {
        return Err(LmiError::Dimension(format!(
            "{} ρ values for {} simplices",
            rhos.len(),
            mesh.simplices.len()
        )));
    }
    for (i, bp) in vertex_values.iter().enumerate() {
        check_square(bp, n, &format!("B at vertex {}", i + 1))?;
    }
    if let Some(r) = rhos.iter().find(|r| !(**r >= 0.0 && r.is_finite())) {
        return Err(LmiError::Invalid(format!(
            "ρ must be finite and nonnegative, got {r}"
        )));
    }
    let m = mesh.m;
    let mut layout = VarLayout::new();
    let vars = Thm2Vars {
        p: (0..mesh.vertices.len())
            .map(|i| layout.sym_matrix(&format!("P_{}", i + 1), n))
            .collect::<Result<_, _>>()?,
        lam: layout.diag_matrix("Lambda", n)?,
        sigma: (0..mesh.simplices.len())
            .map(|k| {
                (0..=m)
                    .map(|l| layout.scalar(&format!("sigma_{}_{}", k + 1, l)))
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<_, _>>()?,
        upsilon: (0..mesh.simplices.len())
            .map(|k| layout.full_matrix(&format!("Upsilon_{}", k + 1), n, n))
            .collect::<Result<_, _>>()?,
        xi: (0..mesh.simplices.len())
            .map(|k| layout.full_matrix(&format!("Xi_{}", k + 1), n, n))
            .collect::<Result<_, _>>()?,
    };
    let eye = DenseMatrix::identity(n);
    let eye_m = DenseMatrix::identity(m);
    let lam_aff = layout.affine(vars.lam);
    let zero_n = AffineMatrix::zeros(n, n);

    let per_simplex: Vec<Vec<LmiBlock>> = (0..mesh.simplices.len())
        .into_par_iter()
        .map(|k| {
            let simplex = &mesh.simplices[k];
            let ups = layout.affine(vars.upsilon[k]);
            let xi = layout.affine(vars.xi[k]);
            // Σ_r (P_{p(k,r)} A) ⊗ v_rᵀ
            let mut coupling = AffineMatrix::zeros(n, m * n);
            for (r, &p) in simplex.vertex_ids.iter().enumerate() {
                let v_row = DenseMatrix::from_row_major(1, m, simplex.gradients[r].clone())?;
                coupling = coupling.add(&layout.affine(vars.p[p]).right_mul(a).kron_right(&v_row));
            }
            let xi_sym = xi.add(&xi.transpose());
            (0..=m)
                .map(|l| {
                    let p = simplex.vertex_ids[l];
                    let bp = &vertex_values[p];
                    let pp = layout.affine(vars.p[p]);
                    let sigma_i = layout.affine(vars.sigma[k][l]).kron_right(&eye);
                    let b11 = lam_aff
                        .sub(&sigma_i)
                        .sub(&ups.left_mul(&bp.transpose()))
                        .sub(&ups.transpose().right_mul(bp));
                    let b12 = ups.transpose().sub(&pp).sub(&xi.left_mul(&bp.transpose()));
                    let b13 = pp.scale(rhos[k]);
                    let b44 = pp
                        .left_mul(&a.transpose())
                        .add(&pp.right_mul(a))
                        .sub(&lam_aff.scale(c * c))
                        .kron_right(&eye_m);
                    let z23 = zero_n.clone();
                    let full = AffineMatrix::from_sym_blocks(
                        &[n, n, n, m * n],
                        &[
                            vec![Some(&b11), Some(&b12), Some(&b13), Some(&coupling)],
                            vec![None, Some(&xi_sym), Some(&z23), None],
                            vec![None, None, Some(&sigma_i), None],
                            vec![None, None, None, Some(&b44)],
                        ],
                    );
                    full.into_block(
                        format!("simplex {} vertex {}", k + 1, l),
                        BlockRole::Main,
                        Strictness::Strict,
                    )
                })
                .collect()
        })
        .collect::<Result<_, LmiError>>()?;

    let mut blocks: Vec<LmiBlock> = per_simplex.into_iter().flatten().collect();
    let mut pos_ids = vars.p.clone();
    pos_ids.push(vars.lam);
    pos_ids.extend(vars.sigma.iter().flatten());
    blocks.extend(positivity_blocks(&layout, &pos_ids)?);
    LmiSystem::new(layout, blocks)
}

/// `[[M − BᵀΥ − ΥᵀB, Υᵀ − Pᵀ − BᵀΞ], [⋆, Ξ + Ξᵀ]]`.
///
/// The congruence `[I; B]ᵀ · (·) · [I; B]` of this matrix equals
/// `M − BᵀP − PᵀB`, so it is positive semidefinite for some `(Υ, Ξ)` exactly
/// when `M − BᵀP − PᵀB` is.
pub fn lemma1_expand(
    m: &DenseMatrix,
    b: &DenseMatrix,
    p: &DenseMatrix,
    upsilon: &DenseMatrix,
    xi: &DenseMatrix,
) -> Result<SymmetricMatrix, LmiError> {
    let n = m.rows();
    for (what, x) in [
        ("M", m),
        ("B", b),
        ("P", p),
        ("Upsilon", upsilon),
        ("Xi", xi),
    ] {
        check_square(x, n, what)?;
    }
    let bt = b.transpose();
    let b11 = &(m - &bt.matmul(upsilon)?) - &upsilon.transpose().matmul(b)?;
    let b12 = &(&upsilon.transpose() - &p.transpose()) - &bt.matmul(xi)?;
    let b22 = xi + &xi.transpose();
    let mut full = DenseMatrix::zeros(2 * n, 2 * n);
    full.set_block(0, 0, &b11);
    full.set_block(0, n, &b12);
    full.set_block(n, 0, &b12.transpose());
    full.set_block(n, n, &b22);
    let scale = full.max_abs().max(1.0);
    Ok(SymmetricMatrix::from_dense(&full, 1e-12 * scale)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockEval {
    pub matrix: SymmetricMatrix,
    pub lambda_min: f64,
}

/// Evaluates every block at `y` and its smallest eigenvalue (Jacobi).
pub fn evaluate_system(system: &LmiSystem, y: &[f64]) -> Result<Vec<BlockEval>, LmiError> {
    if y.len() != system.layout.total_len() {
        return Err(LmiError::Dimension(format!(
            "point has {} entries, layout has {}",
            y.len(),
            system.layout.total_len()
        )));
    }
    system
        .blocks
        .par_iter()
        .map(|b| {
            let matrix = b.eval(y);
            let lambda_min = matrix.min_eigenvalue()?;
            Ok(BlockEval { matrix, lambda_min })
        })
        .collect()
}

/// Lyapunov weight: a single matrix or vertex matrices interpolated over a mesh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PField {
    Constant {
        p: SymmetricMatrix,
    },
    PiecewiseLinear {
        mesh: SimplicialMesh,
        vertices: Vec<SymmetricMatrix>,
    },
}

impl PField {
    /// `P(x)`; `None` outside the mesh.
    pub fn at(&self, x: &[f64]) -> Option<SymmetricMatrix> {
        match self {
            PField::Constant { p } => Some(p.clone()),
            PField::PiecewiseLinear { mesh, vertices } => {
                let k = mesh.locate(x, 1e-12)?;
                let alpha = barycentric(&mesh.simplex_coords(k), x).ok()?;
                let mut out = SymmetricMatrix::zeros(vertices[0].dim());
                for (a, &p) in alpha.iter().zip(&mesh.simplices[k].vertex_ids) {
                    out.axpy(*a, &vertices[p]);
                }
                Some(out)
            }
        }
    }

    pub fn matrices(&self) -> Vec<&SymmetricMatrix> {
        match self {
            PField::Constant { p } => vec![p],
            PField::PiecewiseLinear { vertices, .. } => vertices.iter().collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub theorem: Theorem,
    pub p: PField,
    pub lambda: Vec<f64>,
    pub sigmas: Vec<f64>,
    pub margin_eps: f64,
    pub gamma: f64,
    pub overshoot_m: f64,
}

/// `γ = ε / (2 δ_max)` and `M = √(δ_max / δ_min)` over the eigenvalues of the
/// given Lyapunov matrices.
pub fn decay_constants(ps: &[&SymmetricMatrix], eps: f64) -> Result<(f64, f64), LmiError> {
    let mut dmin = f64::INFINITY;
    let mut dmax = f64::NEG_INFINITY;
    for p in ps {
        let e = sym_eig(p)?;
        dmin = dmin.min(e.values[0]);
        dmax = dmax.max(*e.values.last().unwrap());
    }
    if !(dmin > 0.0) {
        return Err(LmiError::InfeasiblePoint {
            block: "P > 0".into(),
            lambda_min: dmin,
        });
    }
    Ok((eps / (2.0 * dmax), (dmax / dmin).sqrt()))
}

/// Turns a feasible point into a certificate.
///
/// The margin `ε` is the smallest eigenvalue over the main blocks. Every
/// strict block must be positive definite and every nonstrict block positive
/// semidefinite (up to rounding) at `y`. `mesh` is required for
/// [`Theorem::Thm2`].
pub fn make_certificate(
    system: &LmiSystem,
    y: &[f64],
    theorem: Theorem,
    mesh: Option<&SimplicialMesh>,
) -> Result<Certificate, LmiError> {
    let evals = evaluate_system(system, y)?;
    let mut eps = f64::INFINITY;
    for (b, e) in system.blocks.iter().zip(&evals) {
        let ok = match b.strictness {
            Strictness::Strict => e.lambda_min > 0.0,
            Strictness::NonStrict => e.lambda_min >= -1e-9 * e.matrix.frobenius_norm().max(1.0),
        };
        if !ok {
            return Err(LmiError::InfeasiblePoint {
                block: b.name.clone(),
                lambda_min: e.lambda_min,
            });
        }
        if b.role == BlockRole::Main {
            eps = eps.min(e.lambda_min);
        }
    }
    let layout = &system.layout;
    let sym_of = |name: &str| -> Result<SymmetricMatrix, LmiError> {
        let v = layout.value(layout.lookup(name)?, y);
        Ok(SymmetricMatrix::from_dense(&v, 0.0)?)
    };
    let lam_id = layout.lookup("Lambda")?;
    let lambda: Vec<f64> = {
        let v = layout.value(lam_id, y);
        (0..v.rows()).map(|i| v[(i, i)]).collect()
    };
    let sigmas: Vec<f64> = layout
        .vars()
        .iter()
        .filter(|d| d.name.starts_with("sigma_"))
        .map(|d| y[d.offset])
        .collect();
    let p = match theorem {
        Theorem::Thm1 => PField::Constant { p: sym_of("P")? },
        Theorem::Thm2 => {
            let mesh = mesh.ok_or_else(|| {
                LmiError::Invalid("a mesh is required for piecewise-linear P".into())
            })?;
            let vertices = (0..mesh.vertices.len())
                .map(|i| sym_of(&format!("P_{}", i + 1)))
                .collect::<Result<_, _>>()?;
            PField::PiecewiseLinear {
                mesh: mesh.clone(),
                vertices,
            }
        }
    };
    let (gamma, overshoot_m) = decay_constants(&p.matrices(), eps)?;
    Ok(Certificate {
        theorem,
        p,
        lambda,
        sigmas,
        margin_eps: eps,
        gamma,
        overshoot_m,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointViolation {
    pub x: Vec<f64>,
    /// Which inequality failed: `"coefficient"` or `"poincare"`.
    pub condition: String,
    pub lambda_min: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointwiseReport {
    pub samples: usize,
    /// Smallest eigenvalue of the coefficient condition over all samples.
    pub worst_coefficient_margin: f64,
    /// Smallest eigenvalue of the Poincaré condition over all samples.
    pub worst_poincare_margin: f64,
    pub violations: Vec<PointViolation>,
}

impl PointwiseReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks the certificate's pointwise inequalities at each sample `x`.
///
/// Constant `P`: `Λ − B(x)ᵀP − PB(x) ⪰ εI` and `AᵀP + PA − c²Λ ⪰ 0`.
///
/// Piecewise-linear `P`: the combined matrix
/// `[[Λ − εI − B(x)ᵀP(x) − P(x)B(x), Σ_r (P_rA) ⊗ v_rᵀ], [⋆, (AᵀP(x) + P(x)A − c²Λ) ⊗ I_m]] ⪰ 0`
/// on the containing simplex, with the Poincaré block also reported alone.
///
/// A violation is an eigenvalue below `−tol`.
pub fn pointwise_check(
    cert: &Certificate,
    b: &MatrixExpr,
    params: &Params,
    samples: &[Vec<f64>],
    c: f64,
    a: &DenseMatrix,
    tol: f64,
) -> Result<PointwiseReport, LmiError> {
    let n = a.rows();
    let lam = DenseMatrix::diag(&cert.lambda);
    let results: Vec<(f64, f64, Vec<f64>)> = samples
        .par_iter()
        .map(|x| {
            let bx = b.eval(&EvalContext::new(x, params))?;
            let px = cert
                .p
                .at(x)
                .ok_or_else(|| LmiError::Invalid(format!("sample {x:?} lies outside the mesh")))?
                .to_dense();
            let w = &(&a.transpose().matmul(&px)? + &px.matmul(a)?) - &lam.scale(c * c);
            let top = &(&(&lam - &DenseMatrix::identity(n).scale(cert.margin_eps))
                - &bx.transpose().matmul(&px)?)
                - &px.matmul(&bx)?;
            let w_min = w.sym_part().min_eigenvalue()?;
            let coeff_min = match &cert.p {
                PField::Constant { .. } => top.sym_part().min_eigenvalue()?,
                PField::PiecewiseLinear { mesh, vertices } => {
                    let m = mesh.m;
                    let k = mesh.locate(x, 1e-12).expect("located above");
                    let simplex = &mesh.simplices[k];
                    let mut coupling = DenseMatrix::zeros(n, m * n);
                    for (r, &p) in simplex.vertex_ids.iter().enumerate() {
                        let v_row =
                            DenseMatrix::from_row_major(1, m, simplex.gradients[r].clone())?;
                        coupling = &coupling + &kron(&vertices[p].to_dense().matmul(a)?, &v_row);
                    }
                    let mut full = DenseMatrix::zeros(n + m * n, n + m * n);
                    full.set_block(0, 0, &top);
                    full.set_block(0, n, &coupling);
                    full.set_block(n, 0, &coupling.transpose());
                    full.set_block(n, n, &kron(&w, &DenseMatrix::identity(m)));
                    full.sym_part().min_eigenvalue()?
                }
            };
            Ok((coeff_min, w_min, x.clone()))
        })
        .collect::<Result<_, LmiError>>()?;
    let mut report = PointwiseReport {
        samples: samples.len(),
        worst_coefficient_margin: f64::INFINITY,
        worst_poincare_margin: f64::INFINITY,
        violations: Vec::new(),
    };
    for (cm, wm, x) in results {
        report.worst_coefficient_margin = report.worst_coefficient_margin.min(cm);
        report.worst_poincare_margin = report.worst_poincare_margin.min(wm);
        if cm < -tol {
            report.violations.push(PointViolation {
                x: x.clone(),
                condition: "coefficient".into(),
                lambda_min: cm,
            });
        }
        if wm < -tol {
            report.violations.push(PointViolation {
                x,
                condition: "poincare".into(),
                lambda_min: wm,
            });
        }
    }
    Ok(report)
}
