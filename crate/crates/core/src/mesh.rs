//! Domain decompositions.
//!
//! Two kinds are produced here:
//!
//! * [`Partition`]: disjoint cells with a center and a sample grid, used by the
//!   constant-`P` analysis (any bounded domain, including the unit ball).
//! * [`SimplicialMesh`]: a face-to-face simplicial mesh with deduplicated
//!   vertices and per-simplex barycentric gradients, used by the
//!   piecewise-linear-`P` analysis. Intervals and axis-aligned boxes (Kuhn
//!   triangulation) are supported.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::DenseMatrix;

/// Relative tolerance below which an edge matrix counts as singular.
pub const DEGENERACY_TOL: f64 = 1e-12;

/// Vertex merge tolerance, relative to the domain diameter.
pub const DEDUP_REL_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeshError {
    #[error("invalid bounds: {0}")]
    InvalidBounds(String),
    #[error("degenerate simplex (condition number {condition:e})")]
    Degenerate { condition: f64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
}

/// Geometric description of the spatial domain Ω.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Domain {
    Interval {
        a: f64,
        b: f64,
    },
    Box {
        lower: Vec<f64>,
        upper: Vec<f64>,
    },
    /// Region between two parallel hyperplanes at distance `width`.
    Slab {
        width: f64,
    },
    #[serde(rename = "unit_ball_3d")]
    UnitBall3d,
    /// Any other bounded open set; carries only its dimension.
    Other {
        m: usize,
    },
}

impl Domain {
    pub fn dim(&self) -> usize {
        match self {
            Domain::Interval { .. } => 1,
            Domain::Box { lower, .. } => lower.len(),
            Domain::Slab { .. } => 1,
            Domain::UnitBall3d => 3,
            Domain::Other { m } => *m,
        }
    }

    /// `count` points drawn uniformly from the closed domain with a seeded
    /// generator (rejection sampling for the ball).
    pub fn sample_uniform(&self, count: usize, seed: u64) -> Result<Vec<Vec<f64>>, MeshError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (lower, upper) = match self {
            Domain::Interval { a, b } => (vec![*a], vec![*b]),
            Domain::Box { lower, upper } => (lower.clone(), upper.clone()),
            Domain::UnitBall3d => (vec![-1.0; 3], vec![1.0; 3]),
            Domain::Slab { .. } | Domain::Other { .. } => {
                return Err(MeshError::Unsupported(
                    "sampling needs a bounded, explicit domain".into(),
                ))
            }
        };
        if lower.iter().zip(&upper).any(|(l, u)| !(l < u)) {
            return Err(MeshError::InvalidBounds(
                "need lower < upper on every axis".into(),
            ));
        }
        let ball = matches!(self, Domain::UnitBall3d);
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            let x: Vec<f64> = lower
                .iter()
                .zip(&upper)
                .map(|(l, u)| rng.gen_range(*l..=*u))
                .collect();
            if !ball || x.iter().map(|v| v * v).sum::<f64>() <= 1.0 {
                out.push(x);
            }
        }
        Ok(out)
    }
}

/// One cell Ω_k of a partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    /// 1-based cell id.
    pub id: usize,
    pub center: Vec<f64>,
    pub sample_points: Vec<Vec<f64>>,
    pub volume_hint: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub m: usize,
    pub cells: Vec<Cell>,
    pub domain: Domain,
}

impl Partition {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }
}

fn linspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![0.5 * (lo + hi)];
    }
    let step = (hi - lo) / (count - 1) as f64;
    (0..count)
        .map(|i| {
            if i + 1 == count {
                hi
            } else {
                lo + step * i as f64
            }
        })
        .collect()
}

/// Splits `[a, b]` into `n_cells` equal intervals with `samples_per_cell`
/// equispaced sample points per cell (endpoints included).
pub fn uniform_interval_partition(
    a: f64,
    b: f64,
    n_cells: usize,
    samples_per_cell: usize,
) -> Result<Partition, MeshError> {
    if !(a < b) || !a.is_finite() || !b.is_finite() {
        return Err(MeshError::InvalidBounds(format!(
            "need a < b, got [{a}, {b}]"
        )));
    }
    if n_cells == 0 {
        return Err(MeshError::InvalidBounds(
            "at least one cell is required".into(),
        ));
    }
    if samples_per_cell < 2 {
        return Err(MeshError::InvalidBounds(
            "at least two samples per cell are required".into(),
        ));
    }
    let h = (b - a) / n_cells as f64;
    let cells = (0..n_cells)
        .map(|k| {
            let lo = a + h * k as f64;
            let hi = if k + 1 == n_cells {
                b
            } else {
                a + h * (k + 1) as f64
            };
            Cell {
                id: k + 1,
                center: vec![0.5 * (lo + hi)],
                sample_points: linspace(lo, hi, samples_per_cell)
                    .into_iter()
                    .map(|x| vec![x])
                    .collect(),
                volume_hint: Some(hi - lo),
            }
        })
        .collect();
    Ok(Partition {
        m: 1,
        cells,
        domain: Domain::Interval { a, b },
    })
}

/// Uniform tensor partition of an axis-aligned box.
pub fn uniform_box_partition(
    lower: &[f64],
    upper: &[f64],
    splits: &[usize],
    samples_per_axis: usize,
) -> Result<Partition, MeshError> {
    let m = lower.len();
    if m == 0 || upper.len() != m || splits.len() != m {
        return Err(MeshError::Dimension(
            "box bounds and splits must share one dimension".into(),
        ));
    }
    if lower.iter().zip(upper).any(|(l, u)| !(l < u)) {
        return Err(MeshError::InvalidBounds(
            "need lower < upper on every axis".into(),
        ));
    }
    if splits.contains(&0) || samples_per_axis < 2 {
        return Err(MeshError::InvalidBounds(
            "need ≥ 1 split per axis and ≥ 2 samples per axis".into(),
        ));
    }
    let widths: Vec<f64> = (0..m)
        .map(|d| (upper[d] - lower[d]) / splits[d] as f64)
        .collect();
    let mut cells = Vec::new();
    for idx in multi_indices(splits) {
        let lo: Vec<f64> = (0..m)
            .map(|d| lower[d] + widths[d] * idx[d] as f64)
            .collect();
        let hi: Vec<f64> = (0..m).map(|d| lo[d] + widths[d]).collect();
        let center: Vec<f64> = (0..m).map(|d| 0.5 * (lo[d] + hi[d])).collect();
        let axes: Vec<Vec<f64>> = (0..m)
            .map(|d| linspace(lo[d], hi[d], samples_per_axis))
            .collect();
        let mut sample_points: Vec<Vec<f64>> = multi_indices(&vec![samples_per_axis; m])
            .map(|s| (0..m).map(|d| axes[d][s[d]]).collect())
            .collect();
        if samples_per_axis % 2 == 0 {
            sample_points.push(center.clone());
        }
        cells.push(Cell {
            id: cells.len() + 1,
            center,
            sample_points,
            volume_hint: Some(widths.iter().product()),
        });
    }
    Ok(Partition {
        m,
        cells,
        domain: Domain::Box {
            lower: lower.to_vec(),
            upper: upper.to_vec(),
        },
    })
}

/// Row-major enumeration of `0..dims[0] × 0..dims[1] × ...` (last axis fastest).
fn multi_indices(dims: &[usize]) -> impl Iterator<Item = Vec<usize>> + '_ {
    let total: usize = dims.iter().product();
    (0..total).map(move |mut flat| {
        let mut idx = vec![0; dims.len()];
        for d in (0..dims.len()).rev() {
            idx[d] = flat % dims[d];
            flat /= dims[d];
        }
        idx
    })
}

fn spherical_to_cartesian(r: f64, theta: f64, phi: f64) -> Vec<f64> {
    vec![
        r * theta.sin() * phi.cos(),
        r * theta.sin() * phi.sin(),
        r * theta.cos(),
    ]
}

/// Partition of the unit ball into `n³` spherical-coordinate boxes
/// `(r, θ, φ) ∈ [0,1) × [0,π] × [0,2π)`, each axis split uniformly.
///
/// Centers are the midpoints in spherical coordinates. Sample points form a
/// `samples_per_axis³` grid in spherical coordinates (endpoints included),
/// mapped to Cartesian coordinates; the center is always among them.
pub fn spherical_ball_partition(
    n_splits: usize,
    samples_per_axis: usize,
) -> Result<Partition, MeshError> {
    if n_splits == 0 {
        return Err(MeshError::InvalidBounds(
            "at least one split is required".into(),
        ));
    }
    if samples_per_axis < 2 {
        return Err(MeshError::InvalidBounds(
            "at least two samples per axis are required".into(),
        ));
    }
    let n = n_splits as f64;
    let (dr, dt, dp) = (1.0 / n, PI / n, 2.0 * PI / n);
    let mut cells = Vec::with_capacity(n_splits.pow(3));
    for idx in multi_indices(&[n_splits, n_splits, n_splits]) {
        let (i, j, k) = (idx[0] as f64, idx[1] as f64, idx[2] as f64);
        let rs = linspace(i * dr, (i + 1.0) * dr, samples_per_axis);
        let ts = linspace(j * dt, (j + 1.0) * dt, samples_per_axis);
        let ps = linspace(k * dp, (k + 1.0) * dp, samples_per_axis);
        let center = spherical_to_cartesian((i + 0.5) * dr, (j + 0.5) * dt, (k + 0.5) * dp);
        let mut sample_points = Vec::with_capacity(samples_per_axis.pow(3) + 1);
        for r in &rs {
            for t in &ts {
                for p in &ps {
                    sample_points.push(spherical_to_cartesian(*r, *t, *p));
                }
            }
        }
        if samples_per_axis % 2 == 0 {
            sample_points.push(center.clone());
        }
        // volume of the spherical box: ∫ r² sinθ dr dθ dφ
        let vol = ((i + 1.0).powi(3) - i.powi(3)) * dr.powi(3) / 3.0
            * ((j * dt).cos() - ((j + 1.0) * dt).cos())
            * dp;
        cells.push(Cell {
            id: cells.len() + 1,
            center,
            sample_points,
            volume_hint: Some(vol),
        });
    }
    Ok(Partition {
        m: 3,
        cells,
        domain: Domain::UnitBall3d,
    })
}

/// One m-simplex of a mesh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Simplex {
    /// Indices into the mesh vertex table; `vertex_ids[0]` plays the role of ξ₀.
    pub vertex_ids: Vec<usize>,
    /// Barycentric gradients `v_0, ..., v_m`.
    pub gradients: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimplicialMesh {
    pub m: usize,
    pub vertices: Vec<Vec<f64>>,
    pub simplices: Vec<Simplex>,
    /// True when produced by a structured generator that is face-to-face by construction.
    pub structured: bool,
}

impl SimplicialMesh {
    /// Builds a mesh from a vertex table and per-simplex vertex ids, computing gradients.
    pub fn from_parts(
        m: usize,
        vertices: Vec<Vec<f64>>,
        simplex_ids: Vec<Vec<usize>>,
    ) -> Result<Self, MeshError> {
        if vertices.iter().any(|v| v.len() != m) {
            return Err(MeshError::Dimension(format!(
                "every vertex must have {m} coordinates"
            )));
        }
        let mut simplices = Vec::with_capacity(simplex_ids.len());
        for ids in simplex_ids {
            if ids.len() != m + 1 || ids.iter().any(|&i| i >= vertices.len()) {
                return Err(MeshError::Dimension(format!(
                    "simplex {ids:?} is not a valid {m}-simplex"
                )));
            }
            let coords: Vec<Vec<f64>> = ids.iter().map(|&i| vertices[i].clone()).collect();
            let gradients = simplex_gradients(&coords)?;
            simplices.push(Simplex {
                vertex_ids: ids,
                gradients,
            });
        }
        Ok(Self {
            m,
            vertices,
            simplices,
            structured: false,
        })
    }

    /// Builds a mesh from raw simplex coordinates, merging vertices closer than
    /// `DEDUP_REL_TOL × diameter`.
    pub fn from_simplex_coords(m: usize, simplices: &[Vec<Vec<f64>>]) -> Result<Self, MeshError> {
        let all: Vec<&Vec<f64>> = simplices.iter().flatten().collect();
        let diameter = bounding_diameter(all.iter().copied());
        let tol = DEDUP_REL_TOL * diameter.max(f64::MIN_POSITIVE);
        let mut vertices: Vec<Vec<f64>> = Vec::new();
        // sort-based merge on the first coordinate
        let mut order: Vec<usize> = (0..all.len()).collect();
        order.sort_by(|&a, &b| all[a][0].total_cmp(&all[b][0]).then(a.cmp(&b)));
        let mut id_of = vec![usize::MAX; all.len()];
        let mut window_start = 0;
        for (pos, &p) in order.iter().enumerate() {
            while all[order[window_start]][0] < all[p][0] - tol {
                window_start += 1;
            }
            let existing = order[window_start..pos]
                .iter()
                .find(|&&q| dist(all[q], all[p]) <= tol)
                .map(|&q| id_of[q]);
            id_of[p] = existing.unwrap_or_else(|| {
                vertices.push(all[p].clone());
                vertices.len() - 1
            });
        }
        // renumber vertices in first-appearance order for stable output
        let mut renumber = vec![usize::MAX; vertices.len()];
        let mut ordered = Vec::with_capacity(vertices.len());
        for &id in &id_of {
            if renumber[id] == usize::MAX {
                renumber[id] = ordered.len();
                ordered.push(vertices[id].clone());
            }
        }
        let ids: Vec<Vec<usize>> = id_of
            .chunks(m + 1)
            .map(|c| c.iter().map(|&i| renumber[i]).collect())
            .collect();
        Self::from_parts(m, ordered, ids)
    }

    pub fn simplex_coords(&self, k: usize) -> Vec<Vec<f64>> {
        self.simplices[k]
            .vertex_ids
            .iter()
            .map(|&i| self.vertices[i].clone())
            .collect()
    }

    pub fn diameter(&self) -> f64 {
        bounding_diameter(self.vertices.iter())
    }

    /// Index of a simplex containing `x` (barycentric coordinates ≥ −tol).
    pub fn locate(&self, x: &[f64], tol: f64) -> Option<usize> {
        if self.m == 1 && self.structured {
            // sorted, contiguous intervals
            let idx = self
                .simplices
                .partition_point(|s| self.vertices[s.vertex_ids[1]][0] < x[0]);
            let idx = idx.min(self.simplices.len().saturating_sub(1));
            let s = &self.simplices[idx];
            let (lo, hi) = (
                self.vertices[s.vertex_ids[0]][0],
                self.vertices[s.vertex_ids[1]][0],
            );
            return (x[0] >= lo - tol && x[0] <= hi + tol).then_some(idx);
        }
        (0..self.simplices.len()).find(|&k| {
            barycentric(&self.simplex_coords(k), x).is_ok_and(|a| a.iter().all(|v| *v >= -tol))
        })
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn bounding_diameter<'a>(points: impl Iterator<Item = &'a Vec<f64>>) -> f64 {
    let mut lo: Vec<f64> = Vec::new();
    let mut hi: Vec<f64> = Vec::new();
    for p in points {
        if lo.is_empty() {
            lo = p.clone();
            hi = p.clone();
        }
        for d in 0..p.len() {
            lo[d] = lo[d].min(p[d]);
            hi[d] = hi[d].max(p[d]);
        }
    }
    dist(&lo, &hi)
}

/// Edge matrix `D = [ξ₁ − ξ₀, …, ξ_m − ξ₀]` (edges as columns).
fn edge_matrix(vertices: &[Vec<f64>]) -> Result<DenseMatrix, MeshError> {
    let m = vertices
        .len()
        .checked_sub(1)
        .ok_or_else(|| MeshError::Dimension("empty simplex".into()))?;
    if vertices.iter().any(|v| v.len() != m) {
        return Err(MeshError::Dimension(format!(
            "an {m}-simplex needs {m}-dimensional vertices"
        )));
    }
    let mut d = DenseMatrix::zeros(m, m);
    for l in 1..=m {
        for r in 0..m {
            d[(r, l - 1)] = vertices[l][r] - vertices[0][r];
        }
    }
    Ok(d)
}

fn edge_inverse(vertices: &[Vec<f64>]) -> Result<DenseMatrix, MeshError> {
    let d = edge_matrix(vertices)?;
    let cond = d.condition_number();
    if !(cond.is_finite() && cond * DEGENERACY_TOL < 1.0) {
        return Err(MeshError::Degenerate { condition: cond });
    }
    d.inverse(DEGENERACY_TOL)
        .map_err(|_| MeshError::Degenerate { condition: cond })
}

/// Barycentric gradients of an m-simplex.
///
/// `v_ℓ` (ℓ ≥ 1) is the ℓ-th row of `D⁻¹`, so that `Dᵀ v_ℓ = e_ℓ`, and
/// `v₀ = −(v₁ + … + v_m)`.
pub fn simplex_gradients(vertices: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, MeshError> {
    let inv = edge_inverse(vertices)?;
    let m = inv.rows();
    let mut grads = Vec::with_capacity(m + 1);
    let rows: Vec<Vec<f64>> = (0..m)
        .map(|l| (0..m).map(|c| inv[(l, c)]).collect())
        .collect();
    let mut sum = vec![0.0; m];
    for row in &rows {
        for (s, v) in sum.iter_mut().zip(row) {
            *s += v;
        }
    }
    grads.push(sum.iter().map(|v| -v).collect());
    grads.extend(rows);
    Ok(grads)
}

/// Barycentric coordinates `α₀..α_m` of `x` with respect to the simplex.
pub fn barycentric(vertices: &[Vec<f64>], x: &[f64]) -> Result<Vec<f64>, MeshError> {
    let inv = edge_inverse(vertices)?;
    let m = inv.rows();
    if x.len() != m {
        return Err(MeshError::Dimension(format!(
            "point has {} coordinates, expected {m}",
            x.len()
        )));
    }
    let rel: Vec<f64> = (0..m).map(|r| x[r] - vertices[0][r]).collect();
    let tail = inv.matvec(&rel);
    let mut alpha = Vec::with_capacity(m + 1);
    alpha.push(1.0 - tail.iter().sum::<f64>());
    alpha.extend(tail);
    Ok(alpha)
}

/// Uniform mesh of `[a, b]` by `n_cells` 1-simplices.
pub fn interval_mesh(a: f64, b: f64, n_cells: usize) -> Result<SimplicialMesh, MeshError> {
    if !(a < b) || !a.is_finite() || !b.is_finite() {
        return Err(MeshError::InvalidBounds(format!(
            "need a < b, got [{a}, {b}]"
        )));
    }
    if n_cells == 0 {
        return Err(MeshError::InvalidBounds(
            "at least one cell is required".into(),
        ));
    }
    let h = (b - a) / n_cells as f64;
    let vertices: Vec<Vec<f64>> = (0..=n_cells)
        .map(|k| vec![if k == n_cells { b } else { a + h * k as f64 }])
        .collect();
    let ids = (0..n_cells).map(|k| vec![k, k + 1]).collect();
    let mut mesh = SimplicialMesh::from_parts(1, vertices, ids)?;
    mesh.structured = true;
    Ok(mesh)
}

/// Kuhn (Freudenthal) triangulation of a uniform box grid: every grid cell is
/// split into `m!` simplices, one per axis permutation.
pub fn box_mesh(
    lower: &[f64],
    upper: &[f64],
    splits: &[usize],
) -> Result<SimplicialMesh, MeshError> {
    let m = lower.len();
    if m == 0 || upper.len() != m || splits.len() != m {
        return Err(MeshError::Dimension(
            "box bounds and splits must share one dimension".into(),
        ));
    }
    if lower.iter().zip(upper).any(|(l, u)| !(l < u)) || splits.contains(&0) {
        return Err(MeshError::InvalidBounds(
            "need lower < upper and ≥ 1 split per axis".into(),
        ));
    }
    let node_dims: Vec<usize> = splits.iter().map(|s| s + 1).collect();
    let node_id = |idx: &[usize]| {
        idx.iter()
            .zip(&node_dims)
            .fold(0, |acc, (i, d)| acc * d + i)
    };
    let vertices: Vec<Vec<f64>> = multi_indices(&node_dims)
        .map(|idx| {
            (0..m)
                .map(|d| {
                    if idx[d] == splits[d] {
                        upper[d]
                    } else {
                        lower[d] + (upper[d] - lower[d]) * idx[d] as f64 / splits[d] as f64
                    }
                })
                .collect()
        })
        .collect();
    let perms = permutations(m);
    let mut ids = Vec::new();
    for cell in multi_indices(splits) {
        for perm in &perms {
            let mut cur = cell.clone();
            let mut simplex = vec![node_id(&cur)];
            for &axis in perm {
                cur[axis] += 1;
                simplex.push(node_id(&cur));
            }
            ids.push(simplex);
        }
    }
    let mut mesh = SimplicialMesh::from_parts(m, vertices, ids)?;
    mesh.structured = true;
    Ok(mesh)
}

fn permutations(m: usize) -> Vec<Vec<usize>> {
    if m == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(m - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, m - 1);
            out.push(q);
        }
    }
    out.sort();
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum MeshViolation {
    DuplicateVertex {
        first: usize,
        second: usize,
    },
    Degenerate {
        simplex: usize,
    },
    GradientSum {
        simplex: usize,
    },
    /// Two simplices intersect in something other than a common face.
    NotFaceToFace {
        first: usize,
        second: usize,
    },
}

/// Number of random simplex pairs spot-checked for structured meshes with m ≥ 2.
const FACE_SPOT_CHECKS: usize = 64;

/// Checks vertex deduplication, nondegeneracy, the gradient-sum identity and the
/// face-to-face condition; returns every violation found.
pub fn validate_mesh(mesh: &SimplicialMesh) -> Vec<MeshViolation> {
    let mut out = Vec::new();
    let tol = DEDUP_REL_TOL * mesh.diameter().max(f64::MIN_POSITIVE);
    let mut order: Vec<usize> = (0..mesh.vertices.len()).collect();
    order.sort_by(|&a, &b| mesh.vertices[a][0].total_cmp(&mesh.vertices[b][0]));
    for (pos, &p) in order.iter().enumerate() {
        for &q in &order[pos + 1..] {
            if mesh.vertices[q][0] - mesh.vertices[p][0] > tol {
                break;
            }
            if dist(&mesh.vertices[p], &mesh.vertices[q]) <= tol {
                out.push(MeshViolation::DuplicateVertex {
                    first: p.min(q),
                    second: p.max(q),
                });
            }
        }
    }
    for (k, s) in mesh.simplices.iter().enumerate() {
        if simplex_gradients(&mesh.simplex_coords(k)).is_err() {
            out.push(MeshViolation::Degenerate { simplex: k });
            continue;
        }
        let mut tail = vec![0.0; mesh.m];
        for g in &s.gradients[1..] {
            for (t, v) in tail.iter_mut().zip(g) {
                *t += v;
            }
        }
        if s.gradients[0].iter().zip(&tail).any(|(a, b)| *a != -b) {
            out.push(MeshViolation::GradientSum { simplex: k });
        }
    }

    if mesh.m == 1 {
        let mut spans: Vec<(f64, f64, usize)> = mesh
            .simplices
            .iter()
            .enumerate()
            .map(|(k, s)| {
                let (a, b) = (
                    mesh.vertices[s.vertex_ids[0]][0],
                    mesh.vertices[s.vertex_ids[1]][0],
                );
                (a.min(b), a.max(b), k)
            })
            .collect();
        spans.sort_by(|x, y| x.0.total_cmp(&y.0));
        for w in spans.windows(2) {
            let ((_, hi0, k0), (lo1, _, k1)) = (w[0], w[1]);
            if lo1 < hi0 - tol {
                out.push(MeshViolation::NotFaceToFace {
                    first: k0.min(k1),
                    second: k0.max(k1),
                });
            } else if (lo1 - hi0).abs() <= tol {
                let shared = mesh.simplices[k0]
                    .vertex_ids
                    .iter()
                    .any(|v| mesh.simplices[k1].vertex_ids.contains(v));
                if !shared {
                    out.push(MeshViolation::NotFaceToFace {
                        first: k0.min(k1),
                        second: k0.max(k1),
                    });
                }
            }
        }
    } else {
        let n = mesh.simplices.len();
        let pairs: Vec<(usize, usize)> = if mesh.structured {
            let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
            (0..FACE_SPOT_CHECKS.min(n * n.saturating_sub(1) / 2))
                .map(|_| {
                    let a = rng.gen_range(0..n);
                    let b = (a + rng.gen_range(1..n)) % n;
                    (a.min(b), a.max(b))
                })
                .collect()
        } else {
            (0..n)
                .flat_map(|a| ((a + 1)..n).map(move |b| (a, b)))
                .collect()
        };
        for (a, b) in pairs {
            if interiors_overlap(mesh, a, b) {
                out.push(MeshViolation::NotFaceToFace {
                    first: a,
                    second: b,
                });
            }
        }
    }
    out
}

/// Probes interior points of each simplex against the other one.
fn interiors_overlap(mesh: &SimplicialMesh, a: usize, b: usize) -> bool {
    let m = mesh.m;
    let (ca, cb) = (mesh.simplex_coords(a), mesh.simplex_coords(b));
    let mut rng = ChaCha8Rng::seed_from_u64((a * 7919 + b) as u64);
    let probe = |from: &[Vec<f64>], into: &[Vec<f64>], rng: &mut ChaCha8Rng| {
        (0..16).any(|i| {
            let weights: Vec<f64> = if i == 0 {
                vec![1.0 / (m + 1) as f64; m + 1]
            } else {
                let w: Vec<f64> = (0..=m).map(|_| rng.gen_range(0.05..1.0)).collect();
                let s: f64 = w.iter().sum();
                w.into_iter().map(|v| v / s).collect()
            };
            let x: Vec<f64> = (0..m)
                .map(|d| (0..=m).map(|l| weights[l] * from[l][d]).sum())
                .collect();
            barycentric(into, &x).is_ok_and(|al| al.iter().all(|v| *v > 1e-9))
        })
    };
    probe(&ca, &cb, &mut rng) || probe(&cb, &ca, &mut rng)
}
