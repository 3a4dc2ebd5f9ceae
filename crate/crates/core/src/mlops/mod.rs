//! Synthetic data generation and streaming outlier detectors.

mod autoencoder;
mod codec;
mod generator;
mod iforest;
mod kmeans;

use bytes::Bytes;
use thiserror::Error;

pub use autoencoder::{AeState, AE_LAYOUT};
pub use codec::{deserialize_state, serialize_state, ModelState};
pub use generator::{generate_block, Generator, GeneratorSpec};
pub use iforest::{
    average_path_length, harmonic, iforest_fit, IForestConfig, IForestState, ITree, Node,
    EULER_GAMMA,
};
pub use kmeans::{kmeans_update, KMeansState};

/// Feature count of every point in the pipeline.
pub const FEATURES: usize = 32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("batch has {distinct} distinct points, need {k} to initialize")]
    DegenerateBatch { distinct: usize, k: usize },
    #[error("model is not initialized")]
    Uninitialized,
    #[error("isolation forest needs at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("isolation forest is not fitted")]
    Unfitted,
    #[error("weights are not finite")]
    NonFiniteWeights,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("unknown model tag {0}")]
    UnknownModelTag(u8),
    #[error("model blob is truncated or corrupt: {0}")]
    TruncatedBlob(String),
}

/// `n` points of `dim` features, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PointBlock {
    dim: usize,
    values: Vec<f64>,
}

impl PointBlock {
    pub fn new(dim: usize, values: Vec<f64>) -> Result<Self, ModelError> {
        if dim == 0 || !values.len().is_multiple_of(dim) {
            return Err(ModelError::InvalidArgument(format!(
                "{} values do not form rows of {dim}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::InvalidArgument("non-finite value".into()));
        }
        Ok(Self { dim, values })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self, ModelError> {
        let dim = rows.first().map_or(FEATURES, |r| r.as_ref().len());
        let mut values = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(ModelError::DimensionMismatch {
                    expected: dim,
                    got: r.len(),
                });
            }
            values.extend_from_slice(r);
        }
        Self::new(dim, values)
    }

    pub fn zeros(n: usize, dim: usize) -> Self {
        Self {
            dim,
            values: vec![0.0; n * dim],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.values.chunks_exact(self.dim)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Little-endian IEEE-754 doubles, row-major: `n · dim · 8` bytes.
    pub fn to_payload(&self) -> Bytes {
        let mut out = Vec::with_capacity(self.values.len() * 8);
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Bytes::from(out)
    }

    /// Decodes a payload of [`FEATURES`]-wide points.
    pub fn from_payload(payload: &[u8]) -> Result<Self, ModelError> {
        let row_bytes = FEATURES * 8;
        if payload.is_empty() || !payload.len().is_multiple_of(row_bytes) {
            return Err(ModelError::InvalidArgument(format!(
                "payload of {} bytes is not a whole number of points",
                payload.len()
            )));
        }
        let values = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(FEATURES, values)
    }

    pub(crate) fn check_dim(&self, expected: usize) -> Result<(), ModelError> {
        if self.dim == expected {
            Ok(())
        } else {
            Err(ModelError::DimensionMismatch {
                expected,
                got: self.dim,
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Verdict {
    pub score: f64,
    pub is_outlier: bool,
}

/// `(mean, population stddev)`; `(0, 0)` for an empty slice.
pub(crate) fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn payload_sizes() {
        assert_eq!(PointBlock::zeros(25, FEATURES).to_payload().len(), 6_400);
        assert_eq!(PointBlock::zeros(10_000, FEATURES).to_payload().len(), 2_560_000);
    }

    #[test]
    fn payload_round_trip() {
        let vals: Vec<f64> = (0..64).map(|i| i as f64 * -0.37).collect();
        let b = PointBlock::new(FEATURES, vals).unwrap();
        let back = PointBlock::from_payload(&b.to_payload()).unwrap();
        assert_eq!(b, back);
        assert!(PointBlock::from_payload(&[0u8; 255]).is_err());
        assert!(PointBlock::from_payload(&[]).is_err());
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(PointBlock::new(32, vec![0.0; 33]).is_err());
        assert!(PointBlock::new(2, vec![0.0, f64::NAN]).is_err());
        assert!(PointBlock::from_rows(&[vec![1.0, 2.0], vec![1.0]]).is_err());
    }
}
