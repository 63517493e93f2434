//! Atrous prediction head: three parallel dilated 3×3 convolutions (rates
//! 1, 3, 6) concatenated along channels, a 1×1 projection to one logit per
//! patch, bilinear upsampling to image size and a sigmoid.

use super::ops::{conv2d, conv2d_backward, sigmoid, upsample_bilinear, upsample_bilinear_backward, ConvGeometry, Matrix, Volume};
use super::params::{HeadParams, ATROUS_RATES};
use super::SegmentationMap;

const PROJECT: ConvGeometry = ConvGeometry {
    kernel: 1,
    stride: 1,
    padding: 0,
    dilation: 1,
};

fn branch_geometry(rate: usize) -> ConvGeometry {
    ConvGeometry {
        kernel: 3,
        stride: 1,
        padding: rate,
        dilation: rate,
    }
}

#[derive(Debug, Clone)]
pub struct HeadTrace {
    grid: Volume,
    concat: Volume,
    logits: Volume,
    upsample: usize,
}

/// Inverse of the sequence flattening: `L×C` back to `C×rows×cols`.
pub fn to_grid(z: &Matrix, rows: usize, cols: usize) -> Volume {
    assert_eq!(z.rows, rows * cols, "sequence length vs grid");
    let c = z.cols;
    let mut g = Volume::zeros(c, rows, cols);
    for i in 0..z.rows {
        for ch in 0..c {
            g.data[ch * rows * cols + i] = z.at(i, ch);
        }
    }
    g
}

fn from_grid(g: &Volume) -> Matrix {
    let l = g.height * g.width;
    let mut z = Matrix::zeros(l, g.channels);
    for ch in 0..g.channels {
        for (i, &v) in g.plane(ch).iter().enumerate() {
            z.data[i * g.channels + ch] = v;
        }
    }
    z
}

/// Per-branch outputs before concatenation, exposed for inspection.
pub fn atrous_branches(grid: &Volume, head: &HeadParams) -> Vec<Volume> {
    head.branches
        .iter()
        .zip(ATROUS_RATES)
        .map(|(b, rate)| conv2d(grid, &b.weight.data, &b.bias.data, branch_geometry(rate)))
        .collect()
}

pub fn atrous_head(z: &Matrix, head: &HeadParams, rows: usize, cols: usize, upsample: usize) -> (SegmentationMap, HeadTrace) {
    let grid = to_grid(z, rows, cols);
    let branches = atrous_branches(&grid, head);
    let per = rows * cols;
    let mut concat = Volume::zeros(branches.iter().map(|b| b.channels).sum(), rows, cols);
    let mut at = 0;
    for b in &branches {
        concat.data[at..at + b.data.len()].copy_from_slice(&b.data);
        at += b.data.len();
    }
    debug_assert_eq!(at, concat.channels * per);
    let logits = conv2d(&concat, &head.project.weight.data, &head.project.bias.data, PROJECT);
    let up = upsample_bilinear(&logits.data, rows, cols, upsample);
    let pred = SegmentationMap {
        height: rows * upsample,
        width: cols * upsample,
        values: up.into_iter().map(sigmoid).collect(),
    };
    (
        pred,
        HeadTrace {
            grid,
            concat,
            logits,
            upsample,
        },
    )
}

/// `dprob` is the loss gradient with respect to the output probabilities.
pub fn atrous_head_backward(
    dprob: &[f64],
    pred: &SegmentationMap,
    t: &HeadTrace,
    head: &HeadParams,
    grads: &mut HeadParams,
) -> Matrix {
    let dup: Vec<f64> = dprob
        .iter()
        .zip(&pred.values)
        .map(|(g, &p)| g * p * (1.0 - p))
        .collect();
    let (rows, cols) = (t.logits.height, t.logits.width);
    let dlogits = Volume {
        channels: 1,
        height: rows,
        width: cols,
        data: upsample_bilinear_backward(&dup, rows, cols, t.upsample),
    };
    let dconcat = conv2d_backward(
        &t.concat,
        &head.project.weight.data,
        &dlogits,
        PROJECT,
        &mut grads.project.weight.data,
        &mut grads.project.bias.data,
    );
    let per = rows * cols;
    let mut dgrid = Volume::zeros(t.grid.channels, rows, cols);
    let mut at = 0;
    for (i, rate) in ATROUS_RATES.iter().enumerate() {
        let ch = head.branches[i].bias.len();
        let dbranch = Volume {
            channels: ch,
            height: rows,
            width: cols,
            data: dconcat.data[at..at + ch * per].to_vec(),
        };
        at += ch * per;
        let g = &mut grads.branches[i];
        let d = conv2d_backward(
            &t.grid,
            &head.branches[i].weight.data,
            &dbranch,
            branch_geometry(*rate),
            &mut g.weight.data,
            &mut g.bias.data,
        );
        for (a, b) in dgrid.data.iter_mut().zip(&d.data) {
            *a += b;
        }
    }
    from_grid(&dgrid)
}
