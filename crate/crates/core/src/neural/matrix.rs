//! Soft-alignment matrices and their text serialization.
//!
//! File layout (UTF-8, LF):
//!
//! ```text
//! T A
//! a_11 a_12 ... a_1A        (T rows, %.17g decimals)
//! ...
//! source tokens, space-separated
//! target symbols, space-separated
//! ```

use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Row sums must lie within this distance of 1.
pub const ROW_SUM_TOLERANCE: f64 = 1e-5;

/// Attention weights of one sentence pair: row `t` is the distribution
/// over source positions at target step `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftAlignmentMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    source_tokens: Vec<String>,
    target_symbols: Vec<String>,
}

impl SoftAlignmentMatrix {
    /// Builds a matrix from row-major entries. Shape must match the token
    /// counts; row-stochasticity is not checked here (see
    /// [`SoftAlignmentMatrix::invalid_rows`]).
    pub fn new(
        data: Vec<f64>,
        source_tokens: Vec<String>,
        target_symbols: Vec<String>,
    ) -> Result<Self> {
        let (rows, cols) = (target_symbols.len(), source_tokens.len());
        if rows == 0 || cols == 0 {
            return Err(Error::Shape(format!("empty matrix {rows}x{cols}")));
        }
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self {
            rows,
            cols,
            data,
            source_tokens,
            target_symbols,
        })
    }

    pub fn from_rows(
        rows: &[Vec<f64>],
        source_tokens: Vec<String>,
        target_symbols: Vec<String>,
    ) -> Result<Self> {
        if let Some(r) = rows.iter().find(|r| r.len() != source_tokens.len()) {
            return Err(Error::Shape(format!(
                "row of {} entries for {} source tokens",
                r.len(),
                source_tokens.len()
            )));
        }
        Self::new(rows.concat(), source_tokens, target_symbols)
    }

    /// `(T, A)`.
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.cols..(t + 1) * self.cols]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols)
    }

    pub fn get(&self, t: usize, i: usize) -> f64 {
        self.data[t * self.cols + i]
    }

    pub fn source_tokens(&self) -> &[String] {
        &self.source_tokens
    }

    pub fn target_symbols(&self) -> &[String] {
        &self.target_symbols
    }

    /// Rows that are not probability distributions within
    /// [`ROW_SUM_TOLERANCE`].
    pub fn invalid_rows(&self) -> Vec<usize> {
        self.rows()
            .enumerate()
            .filter(|(_, r)| {
                r.iter().any(|&x| !(x >= 0.0) || !x.is_finite())
                    || (r.iter().sum::<f64>() - 1.0).abs() > ROW_SUM_TOLERANCE
            })
            .map(|(t, _)| t)
            .collect()
    }

    pub fn is_row_stochastic(&self) -> bool {
        self.invalid_rows().is_empty()
    }

    /// Same matrix with columns permuted: new column `j` is old column
    /// `perm[j]`.
    pub fn permute_columns(&self, perm: &[usize]) -> Result<Self> {
        let mut seen = vec![false; self.cols];
        if perm.len() != self.cols
            || perm
                .iter()
                .any(|&p| p >= self.cols || std::mem::replace(&mut seen[p], true))
        {
            return Err(Error::Shape("not a column permutation".into()));
        }
        let data = self
            .rows()
            .flat_map(|r| perm.iter().map(move |&p| r[p]))
            .collect();
        let source = perm
            .iter()
            .map(|&p| self.source_tokens[p].clone())
            .collect();
        Self::new(data, source, self.target_symbols.clone())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{} {}", self.rows, self.cols);
        for r in self.rows() {
            let line: Vec<String> = r.iter().map(|&x| format_g17(x)).collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
        let _ = writeln!(out, "{}", self.source_tokens.join(" "));
        let _ = writeln!(out, "{}", self.target_symbols.join(" "));
        out
    }

    /// Parses the text layout. Shape problems are errors; rows that are not
    /// distributions are returned alongside the matrix.
    pub fn from_text(text: &str) -> Result<(Self, Vec<usize>)> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Parse {
            line: 1,
            message: "missing header".into(),
        })?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse {
                line: 1,
                message: format!("bad header `{header}`: {e}"),
            })?;
        let &[rows, cols] = dims.as_slice() else {
            return Err(Error::Parse {
                line: 1,
                message: format!("header must be `T A`, got `{header}`"),
            });
        };
        let mut data = Vec::with_capacity(rows * cols);
        for t in 0..rows {
            let line_no = t + 2;
            let line = lines.next().ok_or_else(|| Error::Parse {
                line: line_no,
                message: format!("expected {rows} data rows, found {t}"),
            })?;
            let row: Vec<f64> = line
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse {
                    line: line_no,
                    message: format!("bad number: {e}"),
                })?;
            if row.len() != cols {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("expected {cols} entries, found {}", row.len()),
                });
            }
            data.extend(row);
        }
        let mut token_line = |what: &str, line_no: usize| -> Result<Vec<String>> {
            lines
                .next()
                .map(|l| l.split_whitespace().map(String::from).collect())
                .ok_or_else(|| Error::Parse {
                    line: line_no,
                    message: format!("missing {what} line"),
                })
        };
        let source = token_line("source token", rows + 2)?;
        let target = token_line("target symbol", rows + 3)?;
        if source.len() != cols || target.len() != rows {
            return Err(Error::Shape(format!(
                "header says {rows}x{cols}, token lines give {}x{}",
                target.len(),
                source.len()
            )));
        }
        let m = Self::new(data, source, target)?;
        let invalid = m.invalid_rows();
        Ok((m, invalid))
    }
}

/// Entrywise mean of matrices for the same sentence pair.
pub fn average_matrices(matrices: &[SoftAlignmentMatrix]) -> Result<SoftAlignmentMatrix> {
    let first = matrices
        .first()
        .ok_or_else(|| Error::invalid("averaging zero matrices"))?;
    for m in &matrices[1..] {
        if m.shape() != first.shape() {
            return Err(Error::Shape(format!(
                "cannot average {:?} with {:?}",
                first.shape(),
                m.shape()
            )));
        }
        if m.source_tokens != first.source_tokens || m.target_symbols != first.target_symbols {
            return Err(Error::Shape(
                "matrices belong to different sentence pairs".into(),
            ));
        }
    }
    let n = matrices.len() as f64;
    let data = (0..first.data.len())
        .map(|k| matrices.iter().map(|m| m.data[k]).sum::<f64>() / n)
        .collect();
    SoftAlignmentMatrix::new(
        data,
        first.source_tokens.clone(),
        first.target_symbols.clone(),
    )
}

/// C-style `%.17g`: shortest of fixed or exponent notation carrying 17
/// significant digits, trailing zeros removed. Round-trips every finite
/// f64 exactly.
pub fn format_g17(x: f64) -> String {
    const PRECISION: i32 = 17;
    if x == 0.0 {
        return if x.is_sign_negative() {
            "-0".into()
        } else {
            "0".into()
        };
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{:.*e}", (PRECISION - 1) as usize, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent format");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..PRECISION).contains(&exp) {
        let fixed = format!("{:.*}", (PRECISION - 1 - exp) as usize, x);
        strip_zeros(&fixed).to_string()
    } else {
        let m = strip_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    }
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}
