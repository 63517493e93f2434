//! Convolutional sequentialization: four stride-2 3×3 conv + SiLU blocks
//! (×16 downsampling), row-major flattening and a learned positional
//! embedding.

use super::ops::{conv2d, conv2d_backward, silu, silu_grad, ConvGeometry, Matrix, Volume};
use super::params::{ConvParams, Tensor};
use super::ImageTensor;

pub const STEM_GEOMETRY: ConvGeometry = ConvGeometry {
    kernel: 3,
    stride: 2,
    padding: 1,
    dilation: 1,
};

#[derive(Debug, Clone)]
pub struct StemTrace {
    inputs: Vec<Volume>,
    pre: Vec<Volume>,
}

pub fn conv_stem(image: &ImageTensor, stem: &[ConvParams]) -> (Volume, StemTrace) {
    let mut x = image.to_volume();
    let mut inputs = Vec::with_capacity(stem.len());
    let mut pre = Vec::with_capacity(stem.len());
    for block in stem {
        let y = conv2d(&x, &block.weight.data, &block.bias.data, STEM_GEOMETRY);
        let act = Volume {
            data: y.data.iter().map(|&v| silu(v)).collect(),
            ..y.clone()
        };
        inputs.push(x);
        pre.push(y);
        x = act;
    }
    (x, StemTrace { inputs, pre })
}

pub fn conv_stem_backward(dout: &Volume, t: &StemTrace, stem: &[ConvParams], grads: &mut [ConvParams]) {
    let mut g = dout.clone();
    for i in (0..stem.len()).rev() {
        for (gv, &p) in g.data.iter_mut().zip(&t.pre[i].data) {
            *gv *= silu_grad(p);
        }
        let din = conv2d_backward(
            &t.inputs[i],
            &stem[i].weight.data,
            &g,
            STEM_GEOMETRY,
            &mut grads[i].weight.data,
            &mut grads[i].bias.data,
        );
        if i == 0 {
            break;
        }
        g = din;
    }
}

/// Flattens the `C×h×w` grid row-major into an `L×C` sequence and adds the
/// positional embedding. Sequence index `r * w + c` matches the key-patch
/// index of grid cell `(r, c)`.
pub fn sequentialize(feat: &Volume, pos: &Tensor) -> Matrix {
    let l = feat.height * feat.width;
    let c = feat.channels;
    assert_eq!(pos.data.len(), l * c, "positional embedding shape");
    let mut e = Matrix::from_vec(l, c, pos.data.clone());
    for ch in 0..c {
        for (i, &v) in feat.plane(ch).iter().enumerate() {
            e.data[i * c + ch] += v;
        }
    }
    e
}

/// Returns the gradient for the feature grid and accumulates into `dpos`.
pub fn sequentialize_backward(de: &Matrix, height: usize, width: usize, dpos: &mut Tensor) -> Volume {
    let c = de.cols;
    let mut dfeat = Volume::zeros(c, height, width);
    for i in 0..de.rows {
        for ch in 0..c {
            let g = de.at(i, ch);
            dfeat.data[ch * height * width + i] = g;
            dpos.data[i * c + ch] += g;
        }
    }
    dfeat
}
