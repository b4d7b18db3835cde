//! Lightweight CNN branch: a 3x3 embedding convolution, a two-layer 3x3
//! encoder with LeakyReLU, and a per-pixel channel-mixing head.
//!
//! `F_CNN = fcl(lrelu(conv2(lrelu(conv1(embed(X))))))`
//!
//! All convolutions use stride 1 and zero padding 1, so every layer keeps
//! the `H x W` grid. Tensors are channel-major `C x H x W`.

use ndarray::{Array1, Array2, Array3, Array4, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};

pub const NEGATIVE_SLOPE: f64 = 0.2;
pub const DEFAULT_FEAT_WIDTH: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer {
    /// `out_ch x in_ch x 3 x 3`
    pub kernel: Array4<f64>,
    pub bias: Array1<f64>,
}

impl ConvLayer {
    pub fn zeros(in_ch: usize, out_ch: usize) -> Self {
        ConvLayer {
            kernel: Array4::zeros((out_ch, in_ch, 3, 3)),
            bias: Array1::zeros(out_ch),
        }
    }

    /// Kaiming-normal weights (fan-in), zero bias.
    pub fn kaiming<R: Rng + ?Sized>(in_ch: usize, out_ch: usize, rng: &mut R) -> Self {
        let std = (2.0 / (in_ch * 9) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("positive std");
        ConvLayer {
            kernel: Array4::from_shape_simple_fn((out_ch, in_ch, 3, 3), || normal.sample(rng)),
            bias: Array1::zeros(out_ch),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.kernel.dim().1
    }

    pub fn out_channels(&self) -> usize {
        self.kernel.dim().0
    }

    pub fn n_params(&self) -> usize {
        self.kernel.len() + self.bias.len()
    }
}

/// Per-pixel projection of `feat_ch` channels to one.
#[derive(Clone, Debug, PartialEq)]
pub struct Fcl {
    pub weights: Array1<f64>,
    pub bias: f64,
}

impl Fcl {
    pub fn n_params(&self) -> usize {
        self.weights.len() + 1
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CnnParams {
    pub embed: ConvLayer,
    pub conv1: ConvLayer,
    pub conv2: ConvLayer,
    pub fcl: Fcl,
}

impl CnnParams {
    pub fn zeros(in_ch: usize, feat_width: usize) -> Self {
        CnnParams {
            embed: ConvLayer::zeros(in_ch, feat_width),
            conv1: ConvLayer::zeros(feat_width, feat_width),
            conv2: ConvLayer::zeros(feat_width, feat_width),
            fcl: Fcl {
                weights: Array1::zeros(feat_width),
                bias: 0.0,
            },
        }
    }

    pub fn random<R: Rng + ?Sized>(in_ch: usize, feat_width: usize, rng: &mut R) -> Self {
        let embed = ConvLayer::kaiming(in_ch, feat_width, rng);
        let conv1 = ConvLayer::kaiming(feat_width, feat_width, rng);
        let conv2 = ConvLayer::kaiming(feat_width, feat_width, rng);
        let normal = Normal::new(0.0, (1.0 / feat_width as f64).sqrt()).expect("positive std");
        let fcl = Fcl {
            weights: Array1::from_shape_simple_fn(feat_width, || normal.sample(rng)),
            bias: 0.0,
        };
        CnnParams {
            embed,
            conv1,
            conv2,
            fcl,
        }
    }

    pub fn feat_width(&self) -> usize {
        self.fcl.weights.len()
    }

    pub fn in_channels(&self) -> usize {
        self.embed.in_channels()
    }

    pub fn n_params(&self) -> usize {
        self.embed.n_params() + self.conv1.n_params() + self.conv2.n_params() + self.fcl.n_params()
    }

    /// Flat order: embed kernel, embed bias, conv1 kernel, conv1 bias,
    /// conv2 kernel, conv2 bias, head weights, head bias.
    pub fn write_flat(&self, out: &mut Vec<f64>) {
        for layer in [&self.embed, &self.conv1, &self.conv2] {
            out.extend(layer.kernel.iter());
            out.extend(layer.bias.iter());
        }
        out.extend(self.fcl.weights.iter());
        out.push(self.fcl.bias);
    }

    /// Which flat entries are weights (decayed) rather than biases.
    pub fn write_weight_mask(&self, out: &mut Vec<bool>) {
        for layer in [&self.embed, &self.conv1, &self.conv2] {
            out.extend(std::iter::repeat_n(true, layer.kernel.len()));
            out.extend(std::iter::repeat_n(false, layer.bias.len()));
        }
        out.extend(std::iter::repeat_n(true, self.fcl.weights.len()));
        out.push(false);
    }

    /// Inverse of [`write_flat`](Self::write_flat); consumes `n_params()`
    /// values from the front of `src`.
    pub fn read_flat(&mut self, src: &mut &[f64]) -> Result<()> {
        if src.len() < self.n_params() {
            return Err(Error::contract("flat CNN parameter vector too short"));
        }
        let mut take = |dst: &mut dyn Iterator<Item = &mut f64>| {
            for d in dst {
                *d = src[0];
                *src = &src[1..];
            }
        };
        for layer in [&mut self.embed, &mut self.conv1, &mut self.conv2] {
            take(&mut layer.kernel.iter_mut());
            take(&mut layer.bias.iter_mut());
        }
        take(&mut self.fcl.weights.iter_mut());
        take(&mut std::iter::once(&mut self.fcl.bias));
        Ok(())
    }
}

// Adds `w * src` shifted by (dy, dx) into `dst`, zero outside the grid:
// dst[y, x] += w * src[y + dy, x + dx].
fn shifted_axpy(dst: &mut [f64], src: &[f64], h: usize, w: usize, dy: isize, dx: isize, wt: f64) {
    let y0 = (-dy).max(0) as usize;
    let y1 = (h as isize - dy).min(h as isize) as usize;
    let x0 = (-dx).max(0) as usize;
    let x1 = (w as isize - dx).min(w as isize) as usize;
    for y in y0..y1 {
        let sy = (y as isize + dy) as usize;
        let d = &mut dst[y * w + x0..y * w + x1];
        let s = &src[sy * w + (x0 as isize + dx) as usize..sy * w + (x1 as isize + dx) as usize];
        for (a, b) in d.iter_mut().zip(s) {
            *a += wt * b;
        }
    }
}

// sum over y, x of a[y, x] * b[y + dy, x + dx]
fn shifted_dot(a: &[f64], b: &[f64], h: usize, w: usize, dy: isize, dx: isize) -> f64 {
    let y0 = (-dy).max(0) as usize;
    let y1 = (h as isize - dy).min(h as isize) as usize;
    let x0 = (-dx).max(0) as usize;
    let x1 = (w as isize - dx).min(w as isize) as usize;
    let mut acc = 0.0;
    for y in y0..y1 {
        let sy = (y as isize + dy) as usize;
        let ra = &a[y * w + x0..y * w + x1];
        let rb = &b[sy * w + (x0 as isize + dx) as usize..sy * w + (x1 as isize + dx) as usize];
        acc += ra.iter().zip(rb).map(|(p, q)| p * q).sum::<f64>();
    }
    acc
}

fn tap_offset(k: usize) -> isize {
    k as isize - 1
}

/// 3x3 cross-correlation, stride 1, zero padding 1.
pub fn conv2d_forward(input: &Array3<f64>, layer: &ConvLayer) -> Result<Array3<f64>> {
    let (cin, h, w) = input.dim();
    if cin != layer.in_channels() {
        return Err(Error::contract(format!(
            "conv expects {} input channels, got {cin}",
            layer.in_channels()
        )));
    }
    let input = input.as_standard_layout();
    let inp = input.as_slice().expect("standard layout");
    let hw = h * w;
    let planes: Vec<Vec<f64>> = (0..layer.out_channels())
        .into_par_iter()
        .map(|o| {
            let mut plane = vec![layer.bias[o]; hw];
            for i in 0..cin {
                let src = &inp[i * hw..(i + 1) * hw];
                for ky in 0..3 {
                    for kx in 0..3 {
                        let wt = layer.kernel[[o, i, ky, kx]];
                        shifted_axpy(&mut plane, src, h, w, tap_offset(ky), tap_offset(kx), wt);
                    }
                }
            }
            plane
        })
        .collect();
    Ok(
        Array3::from_shape_vec((layer.out_channels(), h, w), planes.concat())
            .expect("shape matches"),
    )
}

/// Gradients of one convolution.
#[derive(Clone, Debug)]
pub struct ConvGrads {
    pub input: Array3<f64>,
    pub layer: ConvLayer,
}

/// Backward pass of [`conv2d_forward`] given `dL/d(output)`.
pub fn conv2d_backward(
    input: &Array3<f64>,
    layer: &ConvLayer,
    grad_out: &Array3<f64>,
    want_input_grad: bool,
) -> Result<ConvGrads> {
    let (cin, h, w) = input.dim();
    let cout = layer.out_channels();
    if cin != layer.in_channels() || grad_out.dim() != (cout, h, w) {
        return Err(Error::contract("conv backward shape mismatch"));
    }
    let hw = h * w;
    let input = input.as_standard_layout();
    let inp = input.as_slice().expect("standard layout");
    let grad_out = grad_out.as_standard_layout();
    let go = grad_out.as_slice().expect("standard layout");

    let kernel_rows: Vec<Vec<f64>> = (0..cout)
        .into_par_iter()
        .map(|o| {
            let g = &go[o * hw..(o + 1) * hw];
            let mut k = Vec::with_capacity(cin * 9);
            for i in 0..cin {
                let src = &inp[i * hw..(i + 1) * hw];
                for ky in 0..3 {
                    for kx in 0..3 {
                        k.push(shifted_dot(g, src, h, w, tap_offset(ky), tap_offset(kx)));
                    }
                }
            }
            k
        })
        .collect();
    let kernel =
        Array4::from_shape_vec((cout, cin, 3, 3), kernel_rows.concat()).expect("shape matches");
    let bias = Array1::from_iter((0..cout).map(|o| go[o * hw..(o + 1) * hw].iter().sum()));

    let input_grad = if want_input_grad {
        let planes: Vec<Vec<f64>> = (0..cin)
            .into_par_iter()
            .map(|i| {
                let mut plane = vec![0.0; hw];
                for o in 0..cout {
                    let g = &go[o * hw..(o + 1) * hw];
                    for ky in 0..3 {
                        for kx in 0..3 {
                            // input[y+dy, x+dx] feeds output[y, x]
                            let wt = layer.kernel[[o, i, ky, kx]];
                            shifted_axpy(&mut plane, g, h, w, -tap_offset(ky), -tap_offset(kx), wt);
                        }
                    }
                }
                plane
            })
            .collect();
        Array3::from_shape_vec((cin, h, w), planes.concat()).expect("shape matches")
    } else {
        Array3::zeros((0, 0, 0))
    };
    Ok(ConvGrads {
        input: input_grad,
        layer: ConvLayer { kernel, bias },
    })
}

pub fn leaky_relu(x: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        NEGATIVE_SLOPE * x
    }
}

/// Derivative of [`leaky_relu`]; 1 at the origin.
pub fn leaky_relu_grad(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        NEGATIVE_SLOPE
    }
}

fn fcl_forward(features: &Array3<f64>, fcl: &Fcl) -> Array2<f64> {
    let mut out = Array2::from_elem((features.dim().1, features.dim().2), fcl.bias);
    for (c, plane) in features.axis_iter(Axis(0)).enumerate() {
        out.scaled_add(fcl.weights[c], &plane);
    }
    out
}

/// Activations of one CNN forward pass.
#[derive(Clone, Debug)]
pub struct CnnTrace {
    embedded: Array3<f64>,
    pre1: Array3<f64>,
    act1: Array3<f64>,
    pre2: Array3<f64>,
    act2: Array3<f64>,
    pub output: Array2<f64>,
}

pub fn cnn_forward_traced(x: &Array3<f64>, params: &CnnParams) -> Result<CnnTrace> {
    let embedded = conv2d_forward(x, &params.embed)?;
    let pre1 = conv2d_forward(&embedded, &params.conv1)?;
    let act1 = pre1.mapv(leaky_relu);
    let pre2 = conv2d_forward(&act1, &params.conv2)?;
    let act2 = pre2.mapv(leaky_relu);
    let output = fcl_forward(&act2, &params.fcl);
    Ok(CnnTrace {
        embedded,
        pre1,
        act1,
        pre2,
        act2,
        output,
    })
}

/// `F_CNN` for a `C x H x W` input; output is `H x W`.
pub fn cnn_forward(x: &Array3<f64>, params: &CnnParams) -> Result<Array2<f64>> {
    Ok(cnn_forward_traced(x, params)?.output)
}

fn through_activation(grad: &mut Array3<f64>, pre: &Array3<f64>) {
    Zip::from(grad)
        .and(pre)
        .for_each(|g, &p| *g *= leaky_relu_grad(p));
}

/// Parameter gradients given `dL/dF_CNN`.
pub fn cnn_backward(
    x: &Array3<f64>,
    params: &CnnParams,
    trace: &CnnTrace,
    grad_output: &Array2<f64>,
) -> Result<CnnParams> {
    let (_, h, w) = trace.act2.dim();
    if grad_output.dim() != (h, w) {
        return Err(Error::contract("CNN output gradient shape mismatch"));
    }
    let fcl_weights = Array1::from_iter(
        trace
            .act2
            .axis_iter(Axis(0))
            .map(|plane| (&plane * grad_output).sum()),
    );
    let fcl = Fcl {
        weights: fcl_weights,
        bias: grad_output.sum(),
    };
    let go: ArrayView2<f64> = grad_output.view();
    let mut g2 = Array3::from_shape_fn(trace.act2.dim(), |(c, y, xx)| {
        params.fcl.weights[c] * go[[y, xx]]
    });
    through_activation(&mut g2, &trace.pre2);
    let conv2 = conv2d_backward(&trace.act1, &params.conv2, &g2, true)?;
    let mut g1 = conv2.input;
    through_activation(&mut g1, &trace.pre1);
    let conv1 = conv2d_backward(&trace.embedded, &params.conv1, &g1, true)?;
    let embed = conv2d_backward(x, &params.embed, &conv1.input, false)?;
    Ok(CnnParams {
        embed: embed.layer,
        conv1: conv1.layer,
        conv2: conv2.layer,
        fcl,
    })
}
