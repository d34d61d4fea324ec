//! SDPA sparse format (`.dat-s`).
//!
//! The system `F_j(y) = C_j + Σ yᵢ F_{j,i} ⪰ 0` is written with the SDPA sign
//! convention `Σ yᵢ Fᵢ − F₀ ⪰ 0`, so matrix 0 holds `−C_j`. Entries are sorted
//! by `(matno, blockno, i, j)`, use 1-based indices with `i ≤ j`, and print
//! with 17 significant digits so that re-export after import is byte-identical.
//!
//! Import produces anonymous scalar variables `y1..y_mDIM` and strict blocks
//! named `block 1..`; names, roles and strictness are not part of the format.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::linalg::SymmetricMatrix;
use crate::lmi::{BlockRole, LmiBlock, LmiSystem, Strictness, VarLayout};

#[derive(Debug, Error, PartialEq)]
pub enum SdpaError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("objective has {got} entries, expected {expected}")]
    Objective { expected: usize, got: usize },
    #[error("unexpected end of input: missing {0}")]
    Truncated(&'static str),
}

fn fmt_num(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes `system` in SDPA sparse format; `objective` defaults to zeros.
pub fn export_sdpa(system: &LmiSystem, objective: Option<&[f64]>) -> Result<String, SdpaError> {
    let m = system.layout.total_len();
    let zeros = vec![0.0; m];
    let obj = objective.unwrap_or(&zeros);
    if obj.len() != m {
        return Err(SdpaError::Objective {
            expected: m,
            got: obj.len(),
        });
    }
    let mut out = String::new();
    let _ = writeln!(out, "{m}");
    let _ = writeln!(out, "{}", system.blocks.len());
    let sizes: Vec<String> = system.blocks.iter().map(|b| b.dim.to_string()).collect();
    let _ = writeln!(out, "{}", sizes.join(" "));
    let objs: Vec<String> = obj.iter().map(|v| fmt_num(*v)).collect();
    let _ = writeln!(out, "{}", objs.join(" "));

    // (matno, blockno, i, j) → value, gathered then emitted in key order
    let mut entries: BTreeMap<(usize, usize, usize, usize), f64> = BTreeMap::new();
    let mut push = |mat: usize, blk: usize, s: &SymmetricMatrix, sign: f64| {
        for i in 0..s.dim() {
            for j in i..s.dim() {
                let v = s.get(i, j);
                if v != 0.0 {
                    entries.insert((mat, blk, i + 1, j + 1), sign * v);
                }
            }
        }
    };
    for (bi, b) in system.blocks.iter().enumerate() {
        push(0, bi + 1, &b.constant, -1.0);
        for (k, f) in &b.coeffs {
            push(k + 1, bi + 1, f, 1.0);
        }
    }
    for ((mat, blk, i, j), v) in entries {
        let _ = writeln!(out, "{mat} {blk} {i} {j} {}", fmt_num(v));
    }
    Ok(out)
}

fn tokens(line: &str) -> Vec<&str> {
    line.split(|c: char| c.is_whitespace() || matches!(c, ',' | '{' | '}' | '(' | ')'))
        .filter(|t| !t.is_empty())
        .collect()
}

fn parse_err(line: usize, message: impl Into<String>) -> SdpaError {
    SdpaError::Parse {
        line,
        message: message.into(),
    }
}

/// Parses SDPA sparse text. Lines starting with `"` or `*` are comments.
/// Negative block sizes (diagonal blocks) are read as dense blocks.
pub fn import_sdpa(text: &str) -> Result<LmiSystem, SdpaError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !(l.starts_with('"') || l.starts_with('*')));
    let mut header = |what: &'static str| -> Result<(usize, &str), SdpaError> {
        lines.next().ok_or(SdpaError::Truncated(what))
    };
    let (ln, l) = header("mDIM")?;
    let m: usize = tokens(l)
        .first()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| parse_err(ln, "expected the number of variables"))?;
    let (ln, l) = header("nBLOCK")?;
    let nblock: usize = tokens(l)
        .first()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| parse_err(ln, "expected the number of blocks"))?;
    let (ln, l) = header("block sizes")?;
    let toks = tokens(l);
    if toks.len() < nblock {
        return Err(parse_err(
            ln,
            format!("expected {nblock} block sizes, found {}", toks.len()),
        ));
    }
    let mut sizes = Vec::with_capacity(nblock);
    for t in &toks[..nblock] {
        let s: i64 = t
            .parse()
            .map_err(|_| parse_err(ln, format!("invalid block size `{t}`")))?;
        if s == 0 {
            return Err(parse_err(ln, "block size 0"));
        }
        sizes.push(s.unsigned_abs() as usize);
    }
    // the objective may be empty when there are no variables
    let mut rest: Vec<(usize, &str)> = Vec::new();
    if m > 0 {
        let mut got = 0;
        while got < m {
            let (ln, l) = header("objective")?;
            for t in tokens(l) {
                t.parse::<f64>()
                    .map_err(|_| parse_err(ln, format!("invalid objective coefficient `{t}`")))?;
                got += 1;
            }
        }
    } else if let Some((ln, l)) = lines.next() {
        // an objective line with no numbers is optional here
        if !l.is_empty() {
            rest.push((ln, l));
        }
    }
    rest.extend(lines);

    let mut mats: Vec<BTreeMap<usize, SymmetricMatrix>> = vec![BTreeMap::new(); nblock];
    for (ln, l) in rest {
        let toks = tokens(l);
        if toks.is_empty() {
            continue;
        }
        if toks.len() < 5 {
            return Err(parse_err(ln, "expected `matno blockno i j value`"));
        }
        let int = |t: &str, what: &str| -> Result<usize, SdpaError> {
            t.parse()
                .map_err(|_| parse_err(ln, format!("invalid {what} `{t}`")))
        };
        let mat = int(toks[0], "matrix number")?;
        let blk = int(toks[1], "block number")?;
        let i = int(toks[2], "row index")?;
        let j = int(toks[3], "column index")?;
        let v: f64 = toks[4]
            .parse()
            .map_err(|_| parse_err(ln, format!("invalid value `{}`", toks[4])))?;
        if mat > m {
            return Err(parse_err(
                ln,
                format!("matrix number {mat} exceeds mDIM {m}"),
            ));
        }
        if blk == 0 || blk > nblock {
            return Err(parse_err(ln, format!("block number {blk} out of range")));
        }
        let dim = sizes[blk - 1];
        if i == 0 || j == 0 || i > dim || j > dim {
            return Err(parse_err(
                ln,
                format!("index ({i}, {j}) outside a {dim}×{dim} block"),
            ));
        }
        let v = if mat == 0 { -v } else { v };
        mats[blk - 1]
            .entry(mat)
            .or_insert_with(|| SymmetricMatrix::zeros(dim))
            .set(i - 1, j - 1, v);
    }
    let blocks: Vec<LmiBlock> = mats
        .into_iter()
        .enumerate()
        .map(|(bi, mut by_mat)| {
            let dim = sizes[bi];
            let constant = by_mat
                .remove(&0)
                .unwrap_or_else(|| SymmetricMatrix::zeros(dim));
            LmiBlock {
                name: format!("block {}", bi + 1),
                dim,
                constant,
                coeffs: by_mat
                    .into_iter()
                    .filter(|(_, f)| !f.is_zero())
                    .map(|(k, f)| (k - 1, f))
                    .collect(),
                role: BlockRole::Main,
                strictness: Strictness::Strict,
            }
        })
        .collect();
    LmiSystem::new(VarLayout::anonymous(m), blocks).map_err(|e| parse_err(0, e.to_string()))
}
