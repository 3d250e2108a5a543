//! Trained model, its binary file format and prediction metrics.
//!
//! File layout (little-endian): magic `GLMMODEL`, `u32` version, `u32`
//! objective code, `f64` λ, `u64` n_alpha, `u64` n_weights, then α and the
//! primal weights as `f64`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::objective::ObjectiveKind;
use crate::scalar::Scalar;
use crate::sparse::SparseColumnMatrix;

pub const MODEL_MAGIC: &[u8; 8] = b"GLMMODEL";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub kind: ObjectiveKind,
    pub lambda: f64,
    /// Optimization variables (dual variables for dual kinds).
    pub alpha: Vec<f64>,
    /// Primal weights over features.
    pub weights: Vec<f64>,
}

impl Model {
    pub fn new(kind: ObjectiveKind, lambda: f64, alpha: Vec<f64>, weights: Vec<f64>) -> Self {
        Self { kind, lambda, alpha, weights }
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MODEL_MAGIC)?;
        w.write_all(&MODEL_VERSION.to_le_bytes())?;
        w.write_all(&self.kind.code().to_le_bytes())?;
        w.write_all(&self.lambda.to_le_bytes())?;
        w.write_all(&(self.alpha.len() as u64).to_le_bytes())?;
        w.write_all(&(self.weights.len() as u64).to_le_bytes())?;
        for x in self.alpha.iter().chain(&self.weights) {
            w.write_all(&x.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let truncated = |e: std::io::Error| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                Error::format("model file is truncated")
            } else {
                Error::Io(e)
            }
        };
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(truncated)?;
        if &magic != MODEL_MAGIC {
            return Err(Error::format("not a model file (bad magic)"));
        }
        let mut b4 = [0u8; 4];
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b4).map_err(truncated)?;
        let version = u32::from_le_bytes(b4);
        if version != MODEL_VERSION {
            return Err(Error::format(format!("unsupported model format version {version}")));
        }
        r.read_exact(&mut b4).map_err(truncated)?;
        let kind = ObjectiveKind::from_code(u32::from_le_bytes(b4))?;
        r.read_exact(&mut b8).map_err(truncated)?;
        let lambda = f64::from_le_bytes(b8);
        r.read_exact(&mut b8).map_err(truncated)?;
        let n_alpha = u64::from_le_bytes(b8) as usize;
        r.read_exact(&mut b8).map_err(truncated)?;
        let n_weights = u64::from_le_bytes(b8) as usize;
        let mut read_vec = |n: usize| -> Result<Vec<f64>> {
            let mut bytes = vec![0u8; n.checked_mul(8).ok_or_else(|| Error::format("model size overflow"))?];
            r.read_exact(&mut bytes).map_err(truncated)?;
            Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
        };
        let alpha = read_vec(n_alpha)?;
        let weights = read_vec(n_weights)?;
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::format("trailing bytes after model"));
        }
        Ok(Self { kind, lambda, alpha, weights })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }

    /// Linear scores `wᵀx` for example-major data.
    pub fn scores<T: Scalar>(&self, examples: &SparseColumnMatrix<T>) -> Result<Vec<f64>> {
        if examples.n_rows() > self.weights.len() {
            return Err(Error::Dimension { expected: self.weights.len(), got: examples.n_rows() });
        }
        Ok((0..examples.n_cols())
            .map(|j| {
                let (rows, vals) = examples.column(j);
                rows.iter().zip(vals).map(|(&r, &v)| self.weights[r as usize] * v.as_f64()).sum()
            })
            .collect())
    }

    /// Class-1 probabilities `σ(wᵀx)`.
    pub fn probabilities<T: Scalar>(&self, examples: &SparseColumnMatrix<T>) -> Result<Vec<f64>> {
        Ok(self.scores(examples)?.into_iter().map(sigmoid).collect())
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Maps ±1 or 0/1 labels to 0/1.
fn zero_one(labels: &[f64]) -> Result<Vec<f64>> {
    labels
        .iter()
        .map(|&y| {
            if y == 1.0 {
                Ok(1.0)
            } else if y == 0.0 || y == -1.0 {
                Ok(0.0)
            } else {
                Err(Error::invalid(format!("label {y} is not binary")))
            }
        })
        .collect()
}

/// `−mean[y log p + (1−y) log(1−p)]`, probabilities clipped to `[1e-15, 1−1e-15]`.
pub fn logloss(labels: &[f64], probs: &[f64]) -> Result<f64> {
    check_pair(labels, probs)?;
    let y = zero_one(labels)?;
    let total: f64 = y
        .iter()
        .zip(probs)
        .map(|(&y, &p)| {
            let p = p.clamp(1e-15, 1.0 - 1e-15);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum();
    Ok(total / labels.len() as f64)
}

/// Fraction of examples with `1[p ≥ 0.5]` equal to the label.
pub fn accuracy(labels: &[f64], probs: &[f64]) -> Result<f64> {
    check_pair(labels, probs)?;
    let y = zero_one(labels)?;
    let hits = y.iter().zip(probs).filter(|(&y, &p)| (p >= 0.5) == (y == 1.0)).count();
    Ok(hits as f64 / labels.len() as f64)
}

pub fn mean_squared_error(targets: &[f64], predictions: &[f64]) -> Result<f64> {
    check_pair(targets, predictions)?;
    Ok(targets.iter().zip(predictions).map(|(t, p)| (t - p) * (t - p)).sum::<f64>() / targets.len() as f64)
}

fn check_pair(a: &[f64], b: &[f64]) -> Result<()> {
    if a.is_empty() {
        return Err(Error::invalid("no examples to evaluate"));
    }
    if a.len() != b.len() {
        return Err(Error::Dimension { expected: a.len(), got: b.len() });
    }
    Ok(())
}
