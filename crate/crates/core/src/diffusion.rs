//! Heat diffusion on the normalized Laplacian.
//!
//! `Psi = U diag(exp(-s * lambda)) U^T = exp(-s L)`. Column `j` is the heat
//! profile after time `s` of a unit source placed at node `j`.
//!
//! Two routes compute it: a dense symmetric eigendecomposition (exact, capped
//! in size) and a Chebyshev expansion of `exp(-s x)` on `[0, lambda_max]` that
//! needs only sparse mat-vecs, `O(K |edges|)` per column.
//!
//! `exp(-s L)` with the symmetric normalized Laplacian is column-stochastic
//! only on regular graphs. Before use, entries below `clip_epsilon` (and all
//! negatives) are zeroed and each column is rescaled to sum to one. The raw
//! matrices stay available through the `raw_*` functions.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::NormalizedLaplacian;

pub const DEFAULT_SCALE: f64 = 5.0;
pub const DEFAULT_CHEBYSHEV_DEGREE: usize = 30;
pub const DEFAULT_CLIP_EPSILON: f64 = 1e-12;
pub const DEFAULT_EXACT_CAP: usize = 5000;
pub const DEFAULT_BINS: usize = 50;

const PSI_MAGIC: &[u8; 4] = b"PSI1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DiffusionMethod {
    Exact,
    Chebyshev,
}

impl std::str::FromStr for DiffusionMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "exact" => Ok(DiffusionMethod::Exact),
            "chebyshev" => Ok(DiffusionMethod::Chebyshev),
            other => Err(Error::InvalidArgument(format!("unknown diffusion method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatKernelConfig {
    pub scale: f64,
    pub method: DiffusionMethod,
    pub chebyshev_degree: usize,
    pub clip_epsilon: f64,
    /// Largest node count accepted by the dense eigendecomposition.
    pub exact_cap: usize,
    /// Compute columns on the rayon pool. Results are identical either way.
    pub parallel: bool,
}

impl Default for HeatKernelConfig {
    fn default() -> Self {
        HeatKernelConfig {
            scale: DEFAULT_SCALE,
            method: DiffusionMethod::Exact,
            chebyshev_degree: DEFAULT_CHEBYSHEV_DEGREE,
            clip_epsilon: DEFAULT_CLIP_EPSILON,
            exact_cap: DEFAULT_EXACT_CAP,
            parallel: false,
        }
    }
}

impl HeatKernelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.scale >= 0.0 && self.scale.is_finite()) {
            return Err(Error::InvalidArgument(format!("scale must be >= 0, got {}", self.scale)));
        }
        if self.chebyshev_degree < 1 {
            return Err(Error::InvalidArgument("chebyshev degree must be >= 1".into()));
        }
        if !(self.clip_epsilon >= 0.0) {
            return Err(Error::InvalidArgument("clip epsilon must be >= 0".into()));
        }
        Ok(())
    }
}

/// Column-normalized heat matrix at one scale.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatDiffusionMatrix {
    psi: DMatrix<f64>,
    scale: f64,
    /// Whether the matrix before clipping was symmetric within 1e-9;
    /// `None` when loaded from disk.
    pub raw_symmetric: Option<bool>,
}

impl HeatDiffusionMatrix {
    /// Clips and column-normalizes a raw `exp(-s L)`.
    pub fn from_raw(raw: DMatrix<f64>, scale: f64, clip_epsilon: f64) -> Result<Self> {
        if !raw.is_square() {
            return Err(Error::DimensionMismatch {
                expected: raw.nrows(),
                found: raw.ncols(),
            });
        }
        let raw_symmetric = Some(max_asymmetry(&raw) <= 1e-9);
        let mut psi = raw;
        for (j, mut col) in psi.column_iter_mut().enumerate() {
            normalize_column(col.as_mut_slice(), clip_epsilon)
                .map_err(|_| Error::Numeric(format!("heat column {j} has no positive mass")))?;
        }
        Ok(HeatDiffusionMatrix {
            psi,
            scale,
            raw_symmetric,
        })
    }

    pub fn n(&self) -> usize {
        self.psi.nrows()
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.psi
    }

    /// Heat distribution of a unit source at `j`.
    pub fn column(&self, j: usize) -> &[f64] {
        let n = self.n();
        &self.psi.as_slice()[j * n..(j + 1) * n]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.psi[(i, j)]
    }

    /// `PSI1`, u64 n, f64 scale, then `n*n` column-major f64, all little-endian.
    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let mut write = || -> std::io::Result<()> {
            w.write_all(PSI_MAGIC)?;
            w.write_all(&(self.n() as u64).to_le_bytes())?;
            w.write_all(&self.scale.to_le_bytes())?;
            for x in self.psi.as_slice() {
                w.write_all(&x.to_le_bytes())?;
            }
            w.flush()
        };
        write().map_err(|e| Error::io(path, e))
    }

    pub fn read_binary(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let bad = |message: &str| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: message.to_owned(),
        };
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
        if &magic != PSI_MAGIC {
            return Err(bad("bad magic, expected PSI1"));
        }
        let mut buf = [0u8; 8];
        r.read_exact(&mut buf).map_err(|_| bad("truncated header"))?;
        let n = u64::from_le_bytes(buf) as usize;
        r.read_exact(&mut buf).map_err(|_| bad("truncated header"))?;
        let scale = f64::from_le_bytes(buf);
        let len = n.checked_mul(n).ok_or_else(|| bad("size overflow"))?;
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            r.read_exact(&mut buf).map_err(|_| bad("truncated body"))?;
            data.push(f64::from_le_bytes(buf));
        }
        if r.read(&mut buf).map_err(|e| Error::io(path, e))? != 0 {
            return Err(bad("trailing bytes after body"));
        }
        Ok(HeatDiffusionMatrix {
            psi: DMatrix::from_vec(n, n, data),
            scale,
            raw_symmetric: None,
        })
    }
}

fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for j in 0..n {
        for i in j + 1..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

fn normalize_column(col: &mut [f64], clip_epsilon: f64) -> std::result::Result<(), ()> {
    for x in col.iter_mut() {
        if *x < clip_epsilon || *x < 0.0 || !x.is_finite() {
            *x = 0.0;
        }
    }
    let sum: f64 = col.iter().sum();
    if sum <= 0.0 {
        return Err(());
    }
    for x in col.iter_mut() {
        *x /= sum;
    }
    Ok(())
}

/// Dense `U diag(exp(-s lambda)) U^T`, before clipping.
pub fn raw_heat_kernel_exact(lap: &NormalizedLaplacian, scale: f64, cap: usize) -> Result<DMatrix<f64>> {
    let n = lap.n();
    if n > cap {
        return Err(Error::TooLarge { n, cap });
    }
    let eig = nalgebra::linalg::SymmetricEigen::try_new(lap.to_dense(), f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Numeric("symmetric eigendecomposition did not converge".into()))?;
    if eig.eigenvalues.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite eigenvalue".into()));
    }
    let u = &eig.eigenvectors;
    let mut scaled = u.clone();
    for (k, mut col) in scaled.column_iter_mut().enumerate() {
        col *= (-scale * eig.eigenvalues[k]).exp();
    }
    Ok(scaled * u.transpose())
}

pub fn heat_matrix_exact(lap: &NormalizedLaplacian, scale: f64) -> Result<HeatDiffusionMatrix> {
    heat_matrix(
        lap,
        &HeatKernelConfig {
            scale,
            method: DiffusionMethod::Exact,
            ..Default::default()
        },
    )
}

pub fn heat_matrix_chebyshev(lap: &NormalizedLaplacian, scale: f64, degree: usize) -> Result<HeatDiffusionMatrix> {
    heat_matrix(
        lap,
        &HeatKernelConfig {
            scale,
            method: DiffusionMethod::Chebyshev,
            chebyshev_degree: degree,
            ..Default::default()
        },
    )
}

pub fn heat_matrix(lap: &NormalizedLaplacian, cfg: &HeatKernelConfig) -> Result<HeatDiffusionMatrix> {
    cfg.validate()?;
    let raw = match cfg.method {
        DiffusionMethod::Exact => raw_heat_kernel_exact(lap, cfg.scale, cfg.exact_cap)?,
        DiffusionMethod::Chebyshev => {
            let kernel = ChebyshevHeatKernel::new(lap, cfg.scale, cfg.chebyshev_degree);
            kernel.raw_matrix(lap, cfg.parallel)
        }
    };
    HeatDiffusionMatrix::from_raw(raw, cfg.scale, cfg.clip_epsilon)
}

/// Chebyshev expansion of `exp(-s x)` on `[0, lambda_hat]`.
#[derive(Debug, Clone)]
pub struct ChebyshevHeatKernel {
    coeffs: Vec<f64>,
    domain: f64,
}

impl ChebyshevHeatKernel {
    pub fn new(lap: &NormalizedLaplacian, scale: f64, degree: usize) -> Self {
        let lambda_hat = estimate_lambda_max(lap);
        // An all-zero Laplacian has any positive domain.
        let domain = if lambda_hat > 0.0 { lambda_hat } else { 2.0 };
        ChebyshevHeatKernel {
            coeffs: chebyshev_coefficients(|x| (-scale * x).exp(), domain, degree),
            domain,
        }
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn domain(&self) -> f64 {
        self.domain
    }

    /// `p(L) x` by the three-term recurrence on the shifted operator
    /// `(2 / domain) L - I`.
    pub fn apply(&self, lap: &NormalizedLaplacian, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        let shift = |v: &[f64], out: &mut [f64]| {
            lap.matvec(v, out);
            for (o, vi) in out.iter_mut().zip(v) {
                *o = 2.0 / self.domain * *o - vi;
            }
        };
        let mut out: Vec<f64> = x.iter().map(|v| 0.5 * self.coeffs[0] * v).collect();
        if self.coeffs.len() == 1 {
            return out;
        }
        let mut prev = x.to_vec();
        let mut cur = vec![0.0; n];
        shift(&prev, &mut cur);
        let mut next = vec![0.0; n];
        for (k, &c) in self.coeffs.iter().enumerate().skip(1) {
            for (o, t) in out.iter_mut().zip(&cur) {
                *o += c * t;
            }
            if k + 1 == self.coeffs.len() {
                break;
            }
            shift(&cur, &mut next);
            for (nx, p) in next.iter_mut().zip(&prev) {
                *nx = 2.0 * *nx - p;
            }
            std::mem::swap(&mut prev, &mut cur);
            std::mem::swap(&mut cur, &mut next);
        }
        out
    }

    /// Unnormalized column `exp(-s L) e_j`.
    pub fn raw_column(&self, lap: &NormalizedLaplacian, j: usize) -> Vec<f64> {
        let mut e = vec![0.0; lap.n()];
        e[j] = 1.0;
        self.apply(lap, &e)
    }

    /// Clipped and normalized column, for graphs too large to materialize.
    pub fn column(&self, lap: &NormalizedLaplacian, j: usize, clip_epsilon: f64) -> Result<Vec<f64>> {
        let mut col = self.raw_column(lap, j);
        normalize_column(&mut col, clip_epsilon)
            .map_err(|_| Error::Numeric(format!("heat column {j} has no positive mass")))?;
        Ok(col)
    }

    pub fn raw_matrix(&self, lap: &NormalizedLaplacian, parallel: bool) -> DMatrix<f64> {
        let n = lap.n();
        let cols: Vec<Vec<f64>> = if parallel {
            (0..n).into_par_iter().map(|j| self.raw_column(lap, j)).collect()
        } else {
            (0..n).map(|j| self.raw_column(lap, j)).collect()
        };
        DMatrix::from_iterator(n, n, cols.into_iter().flatten())
    }
}

/// Coefficients `c_0..=c_degree` with `f(x) ~ c_0/2 + sum c_k T_k(2x/domain - 1)`,
/// by Chebyshev-Gauss quadrature.
fn chebyshev_coefficients(f: impl Fn(f64) -> f64, domain: f64, degree: usize) -> Vec<f64> {
    let nodes = (4 * (degree + 1)).max(128);
    let samples: Vec<(f64, f64)> = (0..nodes)
        .map(|j| {
            let theta = std::f64::consts::PI * (j as f64 + 0.5) / nodes as f64;
            let x = 0.5 * domain * (theta.cos() + 1.0);
            (theta, f(x))
        })
        .collect();
    (0..=degree)
        .map(|k| {
            let s: f64 = samples.iter().map(|(theta, fx)| fx * (k as f64 * theta).cos()).sum();
            2.0 * s / nodes as f64
        })
        .collect()
}

/// Upper bound on the largest eigenvalue of `L`: power iteration, times 1.01,
/// capped at 2 (the spectrum of a normalized Laplacian lies in `[0, 2]`).
pub fn estimate_lambda_max(lap: &NormalizedLaplacian) -> f64 {
    let n = lap.n();
    if n == 0 {
        return 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_1a9c);
    let mut v: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 0.5).collect();
    let mut w = vec![0.0; n];
    let mut rayleigh = 0.0;
    for _ in 0..2000 {
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        lap.matvec(&v, &mut w);
        let next: f64 = v.iter().zip(&w).map(|(a, b)| a * b).sum();
        std::mem::swap(&mut v, &mut w);
        if (next - rayleigh).abs() <= 1e-13 * next.abs().max(1.0) {
            rayleigh = next;
            break;
        }
        rayleigh = next;
    }
    (1.01 * rayleigh.max(0.0)).min(2.0)
}

/// Empirical distribution of the values in one heat column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatSignature {
    pub node: usize,
    pub histogram: Vec<f64>,
}

/// Histogram of the `n` entries of column `node` over `bins` equal-width bins
/// on `[0, 1]`, normalized to sum to one. The value 1 falls in the last bin.
pub fn heat_signature(psi: &HeatDiffusionMatrix, node: usize, bins: usize) -> HeatSignature {
    assert!(bins >= 2, "need at least two bins");
    let col = psi.column(node);
    let mut histogram = vec![0.0; bins];
    for &v in col {
        let b = ((v * bins as f64) as usize).min(bins - 1);
        histogram[b] += 1.0;
    }
    let n = col.len() as f64;
    histogram.iter_mut().for_each(|h| *h /= n);
    HeatSignature { node, histogram }
}

pub fn heat_signatures(psi: &HeatDiffusionMatrix, bins: usize, parallel: bool) -> Vec<HeatSignature> {
    if parallel {
        (0..psi.n()).into_par_iter().map(|u| heat_signature(psi, u, bins)).collect()
    } else {
        (0..psi.n()).map(|u| heat_signature(psi, u, bins)).collect()
    }
}

pub fn write_signatures(path: &Path, signatures: &[HeatSignature]) -> Result<()> {
    let rows: Vec<&Vec<f64>> = signatures.iter().map(|s| &s.histogram).collect();
    let text = serde_json::to_string(&rows).map_err(|e| Error::Internal(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_signatures(path: &Path) -> Result<Vec<HeatSignature>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let rows: Vec<Vec<f64>> = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })?;
    Ok(rows
        .into_iter()
        .enumerate()
        .map(|(node, histogram)| HeatSignature { node, histogram })
        .collect())
}
