//! Dense row-major embedding matrices and the word2vec text format.
//!
//! The text format is a header line `rows dim` followed by one line per row:
//! `token f1 ... fd`, space separated. Floats are written with Rust's
//! shortest round-trip representation, so a write/read cycle is lossless.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    rows: usize,
    dim: usize,
    data: Vec<f64>,
}

/// Network embedding `F`: one row per graph node.
pub type NodeEmbeddingMatrix = EmbeddingMatrix;

impl EmbeddingMatrix {
    pub fn zeros(rows: usize, dim: usize) -> Self {
        EmbeddingMatrix {
            rows,
            dim,
            data: vec![0.0; rows * dim],
        }
    }

    pub fn from_vec(rows: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * dim {
            return Err(Error::DimensionMismatch {
                expected: rows * dim,
                found: data.len(),
            });
        }
        Ok(EmbeddingMatrix { rows, dim, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            if r.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(EmbeddingMatrix {
            rows: rows.len(),
            dim,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn max_abs_diff(&self, other: &EmbeddingMatrix) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Writes the matrix with one token per row; `prefix` is prepended to every token.
    pub fn write_word2vec(&self, path: &Path, tokens: &[String], prefix: &str) -> Result<()> {
        if tokens.len() != self.rows {
            return Err(Error::DimensionMismatch {
                expected: self.rows,
                found: tokens.len(),
            });
        }
        if let Some(t) = tokens.iter().find(|t| t.is_empty() || t.contains(char::is_whitespace)) {
            return Err(Error::InvalidArgument(format!(
                "token {t:?} cannot be written in word2vec text format"
            )));
        }
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let mut write = || -> std::io::Result<()> {
            writeln!(w, "{} {}", self.rows, self.dim)?;
            for (i, tok) in tokens.iter().enumerate() {
                write!(w, "{prefix}{tok}")?;
                for x in self.row(i) {
                    write!(w, " {x}")?;
                }
                writeln!(w)?;
            }
            w.flush()
        };
        write().map_err(|e| Error::io(path, e))
    }

    /// Reads a word2vec text file, stripping `prefix` from tokens that carry it.
    pub fn read_word2vec(path: &Path, prefix: &str) -> Result<(Vec<String>, EmbeddingMatrix)> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(file).lines();
        let parse_err = |line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let header = lines
            .next()
            .ok_or_else(|| parse_err(1, "missing header".into()))?
            .map_err(|e| Error::io(path, e))?;
        let mut it = header.split_whitespace();
        let (rows, dim) = match (
            it.next().and_then(|s| s.parse::<usize>().ok()),
            it.next().and_then(|s| s.parse::<usize>().ok()),
        ) {
            (Some(r), Some(d)) => (r, d),
            _ => return Err(parse_err(1, "expected `rows dim` header".into())),
        };
        let mut tokens = Vec::with_capacity(rows);
        let mut data = Vec::with_capacity(rows * dim);
        for (idx, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split_whitespace();
            let tok = fields.next().unwrap();
            let tok = tok.strip_prefix(prefix).unwrap_or(tok);
            tokens.push(tok.to_owned());
            let before = data.len();
            for f in fields {
                let x: f64 = f
                    .parse()
                    .map_err(|_| parse_err(idx + 2, format!("bad float {f:?}")))?;
                data.push(x);
            }
            if data.len() - before != dim {
                return Err(parse_err(
                    idx + 2,
                    format!("expected {dim} values, found {}", data.len() - before),
                ));
            }
        }
        if tokens.len() != rows {
            return Err(parse_err(
                1,
                format!("header declares {rows} rows, found {}", tokens.len()),
            ));
        }
        Ok((tokens, EmbeddingMatrix { rows, dim, data }))
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity; zero vectors have similarity 0 to everything.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot(a, b) / (na * nb)
    }
}
