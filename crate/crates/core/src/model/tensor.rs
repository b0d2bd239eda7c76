use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Channel-outermost `C x H x W` tensor, used both for preprocessed model
/// inputs and for intermediate activations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Tensor {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::Input(format!(
                "tensor data has {} values, expected {}x{}x{}",
                data.len(),
                channels,
                height,
                width
            )));
        }
        Ok(Tensor {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn from_planes(planes: &[Grid]) -> Result<Self> {
        let first = planes
            .first()
            .ok_or_else(|| Error::Input("tensor needs at least one plane".into()))?;
        let (h, w) = first.dims();
        let mut data = Vec::with_capacity(planes.len() * h * w);
        for p in planes {
            if p.dims() != (h, w) {
                return Err(Error::Input("planes differ in size".into()));
            }
            data.extend_from_slice(p.as_slice());
        }
        Ok(Tensor {
            channels: planes.len(),
            height: h,
            width: w,
            data,
        })
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    #[inline]
    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.plane_len();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn plane_grid(&self, c: usize) -> Grid {
        Grid::from_vec(self.height, self.width, self.plane(c).to_vec())
            .expect("plane length matches")
    }

    pub fn planes(&self) -> Vec<Grid> {
        (0..self.channels).map(|c| self.plane_grid(c)).collect()
    }

    /// `baseline + (self - baseline) * mask`, broadcasting the mask over
    /// channels. With `baseline = 0` this is the plain point-wise product.
    pub fn masked(&self, mask: &Grid, baseline: f64) -> Result<Tensor> {
        if mask.dims() != (self.height, self.width) {
            return Err(Error::Input(format!(
                "mask is {}x{}, input is {}x{}",
                mask.height(),
                mask.width(),
                self.height,
                self.width
            )));
        }
        let m = mask.as_slice();
        let mut out = self.clone();
        for c in 0..self.channels {
            for (v, &w) in out.plane_mut(c).iter_mut().zip(m) {
                *v = baseline + (*v - baseline) * w;
            }
        }
        Ok(out)
    }
}
