//! Dense f64 kernels with their reverse-mode counterparts.
//!
//! Backward functions accumulate parameter gradients into the supplied
//! buffers (`+=`) and return the gradient with respect to the input.

/// Row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Self { rows, cols, data }
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Channel-major volume (`C×H×W`).
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Volume {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }
}

/// `x · w + b` with `w` stored `in×out`.
pub fn linear(x: &Matrix, w: &[f64], b: &[f64]) -> Matrix {
    let out_dim = b.len();
    debug_assert_eq!(w.len(), x.cols * out_dim);
    let mut y = Matrix::zeros(x.rows, out_dim);
    for r in 0..x.rows {
        let yr = &mut y.data[r * out_dim..(r + 1) * out_dim];
        yr.copy_from_slice(b);
        for (i, &xi) in x.row(r).iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let wi = &w[i * out_dim..(i + 1) * out_dim];
            for (yj, &wij) in yr.iter_mut().zip(wi) {
                *yj += xi * wij;
            }
        }
    }
    y
}

pub fn linear_backward(x: &Matrix, w: &[f64], dy: &Matrix, dw: &mut [f64], db: &mut [f64]) -> Matrix {
    let out_dim = dy.cols;
    let mut dx = Matrix::zeros(x.rows, x.cols);
    for r in 0..x.rows {
        let dyr = dy.row(r);
        for (dbj, &g) in db.iter_mut().zip(dyr) {
            *dbj += g;
        }
        let xr = x.row(r);
        let dxr = &mut dx.data[r * x.cols..(r + 1) * x.cols];
        for i in 0..x.cols {
            let wi = &w[i * out_dim..(i + 1) * out_dim];
            let dwi = &mut dw[i * out_dim..(i + 1) * out_dim];
            let mut acc = 0.0;
            for j in 0..out_dim {
                dwi[j] += xr[i] * dyr[j];
                acc += wi[j] * dyr[j];
            }
            dxr[i] = acc;
        }
    }
    dx
}

pub const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct LayerNormCache {
    pub normalized: Matrix,
    pub inv_std: Vec<f64>,
}

/// Per-row normalization with learned gain and shift.
pub fn layer_norm(x: &Matrix, gamma: &[f64], beta: &[f64]) -> (Matrix, LayerNormCache) {
    let n = x.cols as f64;
    let mut normalized = Matrix::zeros(x.rows, x.cols);
    let mut y = Matrix::zeros(x.rows, x.cols);
    let mut inv_std = Vec::with_capacity(x.rows);
    for r in 0..x.rows {
        let xr = x.row(r);
        let mean = xr.iter().sum::<f64>() / n;
        let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let is = 1.0 / (var + LN_EPS).sqrt();
        inv_std.push(is);
        for c in 0..x.cols {
            let xh = (xr[c] - mean) * is;
            normalized.data[r * x.cols + c] = xh;
            y.data[r * x.cols + c] = xh * gamma[c] + beta[c];
        }
    }
    (y, LayerNormCache { normalized, inv_std })
}

pub fn layer_norm_backward(
    dy: &Matrix,
    cache: &LayerNormCache,
    gamma: &[f64],
    dgamma: &mut [f64],
    dbeta: &mut [f64],
) -> Matrix {
    let cols = dy.cols;
    let n = cols as f64;
    let mut dx = Matrix::zeros(dy.rows, cols);
    let mut dxhat = vec![0.0; cols];
    for r in 0..dy.rows {
        let dyr = dy.row(r);
        let xh = cache.normalized.row(r);
        let mut mean_d = 0.0;
        let mut mean_dx = 0.0;
        for c in 0..cols {
            dgamma[c] += dyr[c] * xh[c];
            dbeta[c] += dyr[c];
            dxhat[c] = dyr[c] * gamma[c];
            mean_d += dxhat[c];
            mean_dx += dxhat[c] * xh[c];
        }
        mean_d /= n;
        mean_dx /= n;
        let is = cache.inv_std[r];
        let dxr = dx.row_mut(r);
        for c in 0..cols {
            dxr[c] = is * (dxhat[c] - mean_d - xh[c] * mean_dx);
        }
    }
    dx
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

#[inline]
pub fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

const GELU_C: f64 = 0.044_715;
const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;

/// Tanh-approximated GELU.
#[inline]
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (SQRT_2_OVER_PI * (x + GELU_C * x * x * x)).tanh())
}

#[inline]
pub fn gelu_grad(x: f64) -> f64 {
    let t = (SQRT_2_OVER_PI * (x + GELU_C * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_C * x * x)
}

/// Geometry of a square-kernel 2-D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl ConvGeometry {
    pub fn output_len(&self, input: usize) -> usize {
        (input + 2 * self.padding - self.dilation * (self.kernel - 1) - 1) / self.stride + 1
    }
}

/// Zero-padded cross-correlation. `weight` is `out×in×k×k`.
pub fn conv2d(input: &Volume, weight: &[f64], bias: &[f64], geo: ConvGeometry) -> Volume {
    let out_c = bias.len();
    let k = geo.kernel;
    let (ih, iw) = (input.height as isize, input.width as isize);
    let oh = geo.output_len(input.height);
    let ow = geo.output_len(input.width);
    debug_assert_eq!(weight.len(), out_c * input.channels * k * k);
    let mut out = Volume::zeros(out_c, oh, ow);
    for (oc, &b) in bias.iter().enumerate() {
        let plane = &mut out.data[oc * oh * ow..(oc + 1) * oh * ow];
        plane.iter_mut().for_each(|v| *v = b);
        for ic in 0..input.channels {
            let src = input.plane(ic);
            let wk = &weight[(oc * input.channels + ic) * k * k..(oc * input.channels + ic + 1) * k * k];
            for ky in 0..k {
                for kx in 0..k {
                    let wv = wk[ky * k + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    let dy = (ky * geo.dilation) as isize - geo.padding as isize;
                    let dx = (kx * geo.dilation) as isize - geo.padding as isize;
                    for oy in 0..oh {
                        let y = (oy * geo.stride) as isize + dy;
                        if y < 0 || y >= ih {
                            continue;
                        }
                        let row = &src[y as usize * iw as usize..(y as usize + 1) * iw as usize];
                        let orow = &mut plane[oy * ow..(oy + 1) * ow];
                        for (ox, o) in orow.iter_mut().enumerate() {
                            let x = (ox * geo.stride) as isize + dx;
                            if x >= 0 && x < iw {
                                *o += wv * row[x as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

pub fn conv2d_backward(
    input: &Volume,
    weight: &[f64],
    dout: &Volume,
    geo: ConvGeometry,
    dweight: &mut [f64],
    dbias: &mut [f64],
) -> Volume {
    let k = geo.kernel;
    let (ih, iw) = (input.height as isize, input.width as isize);
    let (oh, ow) = (dout.height, dout.width);
    let mut din = Volume::zeros(input.channels, input.height, input.width);
    for oc in 0..dout.channels {
        let g = dout.plane(oc);
        dbias[oc] += g.iter().sum::<f64>();
        for ic in 0..input.channels {
            let src = input.plane(ic);
            let base = (oc * input.channels + ic) * k * k;
            for ky in 0..k {
                for kx in 0..k {
                    let wv = weight[base + ky * k + kx];
                    let dy = (ky * geo.dilation) as isize - geo.padding as isize;
                    let dx = (kx * geo.dilation) as isize - geo.padding as isize;
                    let mut dw = 0.0;
                    for oy in 0..oh {
                        let y = (oy * geo.stride) as isize + dy;
                        if y < 0 || y >= ih {
                            continue;
                        }
                        let yoff = (ic * input.height + y as usize) * input.width;
                        for ox in 0..ow {
                            let x = (ox * geo.stride) as isize + dx;
                            if x < 0 || x >= iw {
                                continue;
                            }
                            let go = g[oy * ow + ox];
                            dw += go * src[y as usize * iw as usize + x as usize];
                            din.data[yoff + x as usize] += go * wv;
                        }
                    }
                    dweight[base + ky * k + kx] += dw;
                }
            }
        }
    }
    din
}

/// Interpolation taps for half-pixel-centred linear resampling from `input`
/// to `input * scale` samples, clamped at the edges.
pub fn linear_taps(input: usize, scale: usize) -> Vec<[(usize, f64); 2]> {
    (0..input * scale)
        .map(|o| {
            let src = ((o as f64 + 0.5) / scale as f64 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            let frac = src - i0 as f64;
            [(i0, 1.0 - frac), (i1, frac)]
        })
        .collect()
}

/// Bilinear upsampling of a single plane by an integer factor.
pub fn upsample_bilinear(plane: &[f64], height: usize, width: usize, scale: usize) -> Vec<f64> {
    let ty = linear_taps(height, scale);
    let tx = linear_taps(width, scale);
    let ow = width * scale;
    let mut out = vec![0.0; height * scale * ow];
    for (oy, wy) in ty.iter().enumerate() {
        for (ox, wx) in tx.iter().enumerate() {
            let mut v = 0.0;
            for &(iy, ay) in wy {
                for &(ix, ax) in wx {
                    v += ay * ax * plane[iy * width + ix];
                }
            }
            out[oy * ow + ox] = v;
        }
    }
    out
}

pub fn upsample_bilinear_backward(dout: &[f64], height: usize, width: usize, scale: usize) -> Vec<f64> {
    let ty = linear_taps(height, scale);
    let tx = linear_taps(width, scale);
    let ow = width * scale;
    let mut din = vec![0.0; height * width];
    for (oy, wy) in ty.iter().enumerate() {
        for (ox, wx) in tx.iter().enumerate() {
            let g = dout[oy * ow + ox];
            for &(iy, ay) in wy {
                for &(ix, ax) in wx {
                    din[iy * width + ix] += ay * ax * g;
                }
            }
        }
    }
    din
}
