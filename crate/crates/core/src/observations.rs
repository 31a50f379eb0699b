use nalgebra::{DMatrix, DVectorView};

use crate::error::{Error, Result};

/// A `d × T` observation matrix; column `t` is the frame at time index `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Observations {
    data: DMatrix<f64>,
}

impl Observations {
    pub fn new(data: DMatrix<f64>) -> Self {
        Self { data }
    }

    /// Build from frames (one `Vec` per time step). All frames must share a length.
    pub fn from_frames(frames: &[Vec<f64>]) -> Result<Self> {
        let d = frames.first().map_or(0, Vec::len);
        if let Some((t, f)) = frames.iter().enumerate().find(|(_, f)| f.len() != d) {
            return Err(Error::Invalid(format!(
                "frame {t} has {} values, expected {d}",
                f.len()
            )));
        }
        let data = DMatrix::from_fn(d, frames.len(), |i, t| frames[t][i]);
        Ok(Self { data })
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn len(&self) -> usize {
        self.data.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.data.ncols() == 0
    }

    pub fn frame(&self, t: usize) -> DVectorView<'_, f64> {
        self.data.column(t)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn to_frames(&self) -> Vec<Vec<f64>> {
        (0..self.len())
            .map(|t| self.frame(t).iter().copied().collect())
            .collect()
    }

    /// Unbiased sample covariance (divisor `T − 1`) of all frames.
    pub fn sample_covariance(&self) -> Result<DMatrix<f64>> {
        let (d, n) = self.data.shape();
        if n < 2 {
            return Err(Error::Invalid(format!(
                "covariance needs at least 2 frames, got {n}"
            )));
        }
        let mean = self.data.column_mean();
        let mut centered = self.data.clone();
        for mut col in centered.column_iter_mut() {
            col -= &mean;
        }
        let mut cov = DMatrix::zeros(d, d);
        cov.gemm(
            1.0 / (n as f64 - 1.0),
            &centered,
            &centered.transpose(),
            0.0,
        );
        crate::linalg::symmetrize(&mut cov);
        Ok(cov)
    }

    /// SHA-256 over the little-endian bytes of `d`, `T`, and every value.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut hasher = Sha256::new();
        hasher.update((self.dim() as u64).to_le_bytes());
        hasher.update((self.len() as u64).to_le_bytes());
        for v in self.data.iter() {
            hasher.update(v.to_bits().to_le_bytes());
        }
        hex::encode(hasher.finalize())
    }
}
