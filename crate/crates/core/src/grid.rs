//! Dense row-major 2-D grids of `f64`, the common currency of every map in
//! the pipeline (feature maps, masks, visualization and explanation maps).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Grid {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, 0.0)
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Grid {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Input(format!(
                "grid data has {} values, expected {}x{}",
                data.len(),
                height,
                width
            )));
        }
        Ok(Grid {
            height,
            width,
            data,
        })
    }

    /// Builds a grid from nested rows. Panics on ragged input; meant for
    /// literals in tests and examples.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(height * width);
        for row in rows {
            let row = row.as_ref();
            assert_eq!(row.len(), width, "ragged rows");
            data.extend_from_slice(row);
        }
        Grid {
            height,
            width,
            data,
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Grid {
            height,
            width,
            data,
        }
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
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, value: f64) {
        self.data[y * self.width + x] = value;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Grid {
        Grid {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn same_dims(&self, other: &Grid) -> bool {
        self.dims() == other.dims()
    }

    /// Affine min-max rescale into `[0, 1]`. A constant grid maps to all ones
    /// when its value is positive and to all zeros otherwise.
    pub fn rescaled_unit(&self) -> Grid {
        let (lo, hi) = (self.min(), self.max());
        if hi > lo {
            let span = hi - lo;
            self.map(|v| (v - lo) / span)
        } else if hi > 0.0 {
            Grid::filled(self.height, self.width, 1.0)
        } else {
            Grid::zeros(self.height, self.width)
        }
    }

    /// Bilinear resize with corner-aligned sampling: output pixel `(y, x)`
    /// samples the source at `y * (h - 1) / (H - 1)`, so the four corners of
    /// source and target coincide.
    pub fn resize_bilinear(&self, height: usize, width: usize) -> Grid {
        if self.dims() == (height, width) {
            return self.clone();
        }
        let xs = axis_weights(self.width, width);
        let ys = axis_weights(self.height, height);
        let mut out = Vec::with_capacity(height * width);
        for &(y0, y1, fy) in &ys {
            let r0 = &self.data[y0 * self.width..(y0 + 1) * self.width];
            let r1 = &self.data[y1 * self.width..(y1 + 1) * self.width];
            for &(x0, x1, fx) in &xs {
                let top = r0[x0] * (1.0 - fx) + r0[x1] * fx;
                let bottom = r1[x0] * (1.0 - fx) + r1[x1] * fx;
                out.push(top * (1.0 - fy) + bottom * fy);
            }
        }
        Grid {
            height,
            width,
            data: out,
        }
    }

    /// Copies the `height x width` window whose top-left corner is `(top, left)`.
    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Grid {
        assert!(top + height <= self.height && left + width <= self.width);
        let mut data = Vec::with_capacity(height * width);
        for y in top..top + height {
            let start = y * self.width + left;
            data.extend_from_slice(&self.data[start..start + width]);
        }
        Grid {
            height,
            width,
            data,
        }
    }
}

fn axis_weights(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    (0..dst)
        .map(|i| {
            if src <= 1 || dst <= 1 {
                return (0, 0, 0.0);
            }
            let pos = i as f64 * (src - 1) as f64 / (dst - 1) as f64;
            let lo = (pos.floor() as usize).min(src - 1);
            let hi = (lo + 1).min(src - 1);
            (lo, hi, pos - lo as f64)
        })
        .collect()
}
