//! Separable 2x bicubic upsampling (Catmull-Rom, `a = -0.5`) with
//! half-pixel-centred sampling and edge clamping, plus its adjoint.

use ndarray::Array2;

use crate::error::{Error, Result};

const A: f64 = -0.5;

/// Cubic convolution kernel.
pub fn cubic_kernel(x: f64) -> f64 {
    let x = x.abs();
    if x <= 1.0 {
        ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((A * x - 5.0 * A) * x + 8.0 * A) * x - 4.0 * A
    } else {
        0.0
    }
}

type Taps = [(usize, f64); 4];

fn axis_taps(n_in: usize, factor: usize) -> Vec<Taps> {
    let last = n_in as isize - 1;
    (0..n_in * factor)
        .map(|o| {
            let src = (o as f64 + 0.5) / factor as f64 - 0.5;
            let base = src.floor();
            let t = src - base;
            let base = base as isize;
            let mut taps = [(0, 0.0); 4];
            for (k, tap) in taps.iter_mut().enumerate() {
                let offset = k as isize - 1;
                let idx = (base + offset).clamp(0, last) as usize;
                *tap = (idx, cubic_kernel(t - offset as f64));
            }
            taps
        })
        .collect()
}

/// Precomputed interpolation weights for one input size.
#[derive(Clone, Debug)]
pub struct Bicubic2x {
    rows: Vec<Taps>,
    cols: Vec<Taps>,
    in_shape: (usize, usize),
}

impl Bicubic2x {
    pub fn new(height: usize, width: usize) -> Result<Self> {
        if height < 2 || width < 2 {
            return Err(Error::contract(format!(
                "bicubic upsampling needs at least 2x2 input, got {height}x{width}"
            )));
        }
        Ok(Bicubic2x {
            rows: axis_taps(height, 2),
            cols: axis_taps(width, 2),
            in_shape: (height, width),
        })
    }

    fn check(&self, shape: &[usize], want: (usize, usize)) -> Result<()> {
        if shape != [want.0, want.1] {
            return Err(Error::contract(format!(
                "expected {}x{} map, got {shape:?}",
                want.0, want.1
            )));
        }
        Ok(())
    }

    pub fn forward(&self, map: &Array2<f64>) -> Result<Array2<f64>> {
        self.check(map.shape(), self.in_shape)?;
        let (h, _) = self.in_shape;
        // horizontal pass, then vertical
        let mut tmp = Array2::<f64>::zeros((h, self.cols.len()));
        for y in 0..h {
            for (x, taps) in self.cols.iter().enumerate() {
                tmp[[y, x]] = taps.iter().map(|&(i, w)| w * map[[y, i]]).sum();
            }
        }
        let mut out = Array2::zeros((self.rows.len(), self.cols.len()));
        for (y, taps) in self.rows.iter().enumerate() {
            for x in 0..self.cols.len() {
                out[[y, x]] = taps.iter().map(|&(i, w)| w * tmp[[i, x]]).sum();
            }
        }
        Ok(out)
    }

    /// Transpose of [`forward`](Self::forward): maps a gradient on the
    /// upsampled grid back to the input grid.
    pub fn adjoint(&self, grad: &Array2<f64>) -> Result<Array2<f64>> {
        self.check(grad.shape(), (self.rows.len(), self.cols.len()))?;
        let (h, w) = self.in_shape;
        let mut tmp = Array2::<f64>::zeros((h, self.cols.len()));
        for (y, taps) in self.rows.iter().enumerate() {
            for x in 0..self.cols.len() {
                let g = grad[[y, x]];
                for &(i, wt) in taps {
                    tmp[[i, x]] += wt * g;
                }
            }
        }
        let mut out = Array2::zeros((h, w));
        for y in 0..h {
            for (x, taps) in self.cols.iter().enumerate() {
                let g = tmp[[y, x]];
                for &(i, wt) in taps {
                    out[[y, i]] += wt * g;
                }
            }
        }
        Ok(out)
    }
}

pub fn bicubic_upsample(map: &Array2<f64>) -> Result<Array2<f64>> {
    let (h, w) = map.dim();
    Bicubic2x::new(h, w)?.forward(map)
}
