//! Forward and backward passes of the primitive layers. All activations are
//! `[channels, frames]` matrices.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};

const NORM_EPS: f64 = 1e-8;

/// Frames of length `kernel` taken every `hop` samples: `out[k, t] = x[t * hop + k]`.
pub fn frames(x: &[f64], kernel: usize, hop: usize) -> Array2<f64> {
    let n_frames = (x.len() - kernel) / hop + 1;
    Array2::from_shape_fn((kernel, n_frames), |(k, t)| x[t * hop + k])
}

/// Overlap-add of `[kernel, frames]` columns spaced `hop` apart.
pub fn overlap_add(cols: ArrayView2<f64>, hop: usize, out_len: usize) -> Vec<f64> {
    let (kernel, n_frames) = cols.dim();
    let mut out = vec![0.0; out_len];
    for t in 0..n_frames {
        let base = t * hop;
        for k in 0..kernel {
            out[base + k] += cols[[k, t]];
        }
    }
    out
}

/// Zero-padded signal layout shared by encoder and decoder: `hop` zeros in
/// front, and enough at the back that every input sample lies under two frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Framing {
    pub hop: usize,
    pub kernel: usize,
    pub len: usize,
    pub padded_len: usize,
}

impl Framing {
    pub fn new(len: usize, kernel: usize) -> Self {
        let hop = kernel / 2;
        let padded_len = hop * (len + 2 * hop).div_ceil(hop);
        Self {
            hop,
            kernel,
            len,
            padded_len,
        }
    }

    pub fn n_frames(&self) -> usize {
        (self.padded_len - self.kernel) / self.hop + 1
    }

    pub fn pad(&self, x: &[f64]) -> Vec<f64> {
        let mut p = vec![0.0; self.padded_len];
        p[self.hop..self.hop + self.len].copy_from_slice(x);
        p
    }

    pub fn trim(&self, padded: &[f64]) -> Vec<f64> {
        padded[self.hop..self.hop + self.len].to_vec()
    }
}

pub fn conv1x1(w: ArrayView2<f64>, b: Option<ArrayView1<f64>>, x: ArrayView2<f64>) -> Array2<f64> {
    let mut y = w.dot(&x);
    if let Some(b) = b {
        y += &b.insert_axis(Axis(1));
    }
    y
}

/// Returns `(dW, dX)`; the bias gradient is the row sum of `dy`.
pub fn conv1x1_backward(
    w: ArrayView2<f64>,
    x: ArrayView2<f64>,
    dy: ArrayView2<f64>,
) -> (Array2<f64>, Array2<f64>) {
    (dy.dot(&x.t()), w.t().dot(&dy))
}

pub fn row_sums(dy: ArrayView2<f64>) -> Array1<f64> {
    dy.sum_axis(Axis(1))
}

pub fn relu(x: Array2<f64>) -> Array2<f64> {
    x.mapv_into(|v| v.max(0.0))
}

/// Gradient through ReLU given its output.
pub fn relu_backward(y: ArrayView2<f64>, dy: &mut Array2<f64>) {
    Zip::from(dy).and(y).for_each(|d, &v| {
        if v <= 0.0 {
            *d = 0.0
        }
    });
}

pub fn prelu(x: ArrayView2<f64>, alpha: f64) -> Array2<f64> {
    x.mapv(|v| if v > 0.0 { v } else { alpha * v })
}

/// Returns `(dx, dalpha)`.
pub fn prelu_backward(x: ArrayView2<f64>, alpha: f64, dy: ArrayView2<f64>) -> (Array2<f64>, f64) {
    let mut dalpha = 0.0;
    let mut dx = Array2::zeros(x.dim());
    Zip::from(&mut dx).and(x).and(dy).for_each(|dx, &x, &dy| {
        if x > 0.0 {
            *dx = dy;
        } else {
            *dx = alpha * dy;
            dalpha += dy * x;
        }
    });
    (dx, dalpha)
}

pub fn sigmoid(x: Array2<f64>) -> Array2<f64> {
    x.mapv_into(|v| 1.0 / (1.0 + (-v).exp()))
}

/// Global layer normalization: statistics over all channels and frames,
/// per-channel affine.
pub struct GlnCache {
    pub xhat: Array2<f64>,
    pub inv_std: f64,
}

pub fn gln(x: ArrayView2<f64>, gamma: ArrayView1<f64>, beta: ArrayView1<f64>) -> (Array2<f64>, GlnCache) {
    let n = x.len() as f64;
    let mean = x.sum() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv_std = 1.0 / (var + NORM_EPS).sqrt();
    let xhat = x.mapv(|v| (v - mean) * inv_std);
    let mut y = xhat.clone();
    Zip::from(y.rows_mut())
        .and(gamma)
        .and(beta)
        .for_each(|mut row, &g, &b| row.mapv_inplace(|v| g * v + b));
    (y, GlnCache { xhat, inv_std })
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn gln_backward(
    cache: &GlnCache,
    gamma: ArrayView1<f64>,
    dy: ArrayView2<f64>,
) -> (Array2<f64>, Array1<f64>, Array1<f64>) {
    let dgamma = (&dy * &cache.xhat).sum_axis(Axis(1));
    let dbeta = dy.sum_axis(Axis(1));
    let mut dxhat = dy.to_owned();
    Zip::from(dxhat.rows_mut())
        .and(gamma)
        .for_each(|mut row, &g| row.mapv_inplace(|v| v * g));
    let n = dxhat.len() as f64;
    let mean_d = dxhat.sum() / n;
    let mean_dx = Zip::from(&dxhat)
        .and(&cache.xhat)
        .fold(0.0, |acc, &d, &xh| acc + d * xh)
        / n;
    let inv = cache.inv_std;
    Zip::from(&mut dxhat)
        .and(&cache.xhat)
        .for_each(|d, &xh| *d = inv * (*d - mean_d - xh * mean_dx));
    (dxhat, dgamma, dbeta)
}

/// Depthwise 3-tap convolution with dilation and zero "same" padding.
pub fn dconv(x: ArrayView2<f64>, w: ArrayView2<f64>, b: ArrayView1<f64>, dilation: usize) -> Array2<f64> {
    let (channels, len) = x.dim();
    let taps = w.ncols();
    let half = (taps / 2) as isize;
    let mut y = Array2::zeros((channels, len));
    for c in 0..channels {
        let xr = x.row(c);
        let xs = xr.as_slice().expect("contiguous activations");
        let mut yr = y.row_mut(c);
        let ys = yr.as_slice_mut().expect("contiguous activations");
        ys.fill(b[c]);
        for j in 0..taps {
            let wj = w[[c, j]];
            let off = (j as isize - half) * dilation as isize;
            let (lo, hi) = valid_range(len, off);
            for t in lo..hi {
                ys[t] += wj * xs[(t as isize + off) as usize];
            }
        }
    }
    y
}

/// Output indices `t` for which `t + off` is a valid input index.
fn valid_range(len: usize, off: isize) -> (usize, usize) {
    let lo = (-off).max(0) as usize;
    let hi = (len as isize - off.max(0)).max(0) as usize;
    (lo.min(len), hi.max(lo.min(len)))
}

/// Returns `(dx, dw, db)`.
pub fn dconv_backward(
    x: ArrayView2<f64>,
    w: ArrayView2<f64>,
    dilation: usize,
    dy: ArrayView2<f64>,
) -> (Array2<f64>, Array2<f64>, Array1<f64>) {
    let (channels, len) = x.dim();
    let taps = w.ncols();
    let half = (taps / 2) as isize;
    let mut dx = Array2::zeros((channels, len));
    let mut dw = Array2::zeros(w.dim());
    let db = dy.sum_axis(Axis(1));
    for c in 0..channels {
        let xr = x.row(c);
        let xs = xr.as_slice().expect("contiguous activations");
        let dyr = dy.row(c);
        let dys = dyr.as_slice().expect("contiguous activations");
        let mut dxr = dx.row_mut(c);
        let dxs = dxr.as_slice_mut().expect("contiguous activations");
        for j in 0..taps {
            let wj = w[[c, j]];
            let off = (j as isize - half) * dilation as isize;
            let (lo, hi) = valid_range(len, off);
            let mut acc = 0.0;
            for t in lo..hi {
                let s = (t as isize + off) as usize;
                dxs[s] += wj * dys[t];
                acc += dys[t] * xs[s];
            }
            dw[[c, j]] = acc;
        }
    }
    (dx, dw, db)
}
