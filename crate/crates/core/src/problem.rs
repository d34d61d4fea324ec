//! Problem description: `∂t z = AΔz + B(x)z` on a domain, with named scalar
//! parameters appearing in `B`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{MatrixExpr, Params};
use crate::linalg::DenseMatrix;
use crate::mesh::Domain;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProblemError {
    #[error("A must be {n}×{n}, got {rows}×{cols}")]
    DiffusionShape { n: usize, rows: usize, cols: usize },
    #[error("B must be {n}×{n}, got {got}×{got}")]
    CoefficientShape { n: usize, got: usize },
    #[error("domain has dimension {domain}, problem declares m = {m}")]
    DomainDimension { domain: usize, m: usize },
    #[error("B uses coordinate x{used} but the domain has dimension {m}")]
    Coordinate { used: usize, m: usize },
    #[error("B uses parameter `{0}` which has no value")]
    UnboundParameter(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    /// Spatial dimension.
    pub m: usize,
    /// Number of coupled components.
    pub n: usize,
    pub a: DenseMatrix,
    pub b: MatrixExpr,
    pub domain: Domain,
    pub params: Params,
}

impl ProblemSpec {
    pub fn validate(&self) -> Result<(), ProblemError> {
        let n = self.n;
        if self.a.rows() != n || self.a.cols() != n {
            return Err(ProblemError::DiffusionShape {
                n,
                rows: self.a.rows(),
                cols: self.a.cols(),
            });
        }
        if self.b.dim() != n {
            return Err(ProblemError::CoefficientShape {
                n,
                got: self.b.dim(),
            });
        }
        if self.domain.dim() != self.m {
            return Err(ProblemError::DomainDimension {
                domain: self.domain.dim(),
                m: self.m,
            });
        }
        if self.b.coord_count() > self.m {
            return Err(ProblemError::Coordinate {
                used: self.b.coord_count(),
                m: self.m,
            });
        }
        if let Some(p) = self
            .b
            .params()
            .into_iter()
            .find(|p| !self.params.contains_key(p))
        {
            return Err(ProblemError::UnboundParameter(p));
        }
        Ok(())
    }

    /// Copy with one parameter replaced.
    pub fn with_param(&self, name: &str, value: f64) -> Self {
        let mut out = self.clone();
        out.params.insert(name.to_string(), value);
        out
    }
}
