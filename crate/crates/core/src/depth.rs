use thiserror::Error;

use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DepthError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("depth map must be rank 2, got shape {0:?}")]
    NotImage(Vec<usize>),
    #[error("mask entry {value} at flat index {index} is not 0 or 1")]
    BadMask { index: usize, value: f64 },
    #[error("non-finite depth at masked flat index {0}")]
    NonFinite(usize),
}

/// Depth in millimeters over an `H x W` pixel grid with a validity mask.
///
/// Depth values under `mask == 0` carry no meaning and are stored as 0.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    depth: Tensor,
    mask: Tensor,
}

impl DepthMap {
    pub fn new(depth: Tensor, mask: Tensor) -> Result<Self, DepthError> {
        if depth.rank() != 2 {
            return Err(DepthError::NotImage(depth.shape().to_vec()));
        }
        mask.expect_shape(depth.shape())?;
        let mut depth = depth;
        for (i, (d, &m)) in depth.data_mut().iter_mut().zip(mask.data()).enumerate() {
            if m == 0.0 {
                *d = 0.0;
            } else if m == 1.0 {
                if !d.is_finite() {
                    return Err(DepthError::NonFinite(i));
                }
            } else {
                return Err(DepthError::BadMask { index: i, value: m });
            }
        }
        Ok(Self { depth, mask })
    }

    /// Fully valid map.
    pub fn dense(depth: Tensor) -> Result<Self, DepthError> {
        let mask = Tensor::new(depth.shape(), 1.0)?;
        Self::new(depth, mask)
    }

    /// Builds a map from a per-pixel closure returning `None` for invalid pixels.
    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> Option<f64>,
    ) -> Result<Self, DepthError> {
        let mut depth = Tensor::zeros(&[height, width])?;
        let mut mask = Tensor::zeros(&[height, width])?;
        for r in 0..height {
            for c in 0..width {
                if let Some(d) = f(r, c) {
                    depth.data_mut()[r * width + c] = d;
                    mask.data_mut()[r * width + c] = 1.0;
                }
            }
        }
        Self::new(depth, mask)
    }

    pub fn width(&self) -> usize {
        self.depth.shape()[1]
    }

    pub fn height(&self) -> usize {
        self.depth.shape()[0]
    }

    pub fn depth(&self) -> &Tensor {
        &self.depth
    }

    pub fn mask(&self) -> &Tensor {
        &self.mask
    }

    pub fn valid(&self, r: usize, c: usize) -> bool {
        self.mask.data()[r * self.width() + c] == 1.0
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.depth.data()[r * self.width() + c]
    }

    pub fn valid_count(&self) -> usize {
        self.mask.data().iter().filter(|&&m| m == 1.0).count()
    }

    /// Same mask, depth replaced pointwise by `f(depth)` on valid pixels.
    pub fn map_valid(&self, f: impl Fn(f64) -> f64) -> Self {
        let mut depth = self.depth.clone();
        for (d, &m) in depth.data_mut().iter_mut().zip(self.mask.data()) {
            if m == 1.0 {
                *d = f(*d);
            }
        }
        Self {
            depth,
            mask: self.mask.clone(),
        }
    }

    /// Keeps only pixels valid in both `self` and `mask`.
    pub fn restrict(&self, mask: &Tensor) -> Result<Self, DepthError> {
        mask.expect_shape(self.mask.shape())?;
        let m = Tensor::from_vec(
            self.mask.shape(),
            self.mask
                .data()
                .iter()
                .zip(mask.data())
                .map(|(&a, &b)| if a == 1.0 && b == 1.0 { 1.0 } else { 0.0 })
                .collect(),
        )?;
        Self::new(self.depth.clone(), m)
    }

    pub fn into_parts(self) -> (Tensor, Tensor) {
        (self.depth, self.mask)
    }
}
