//! Transformer encoder with boundary-wise attention gates.
//!
//! Each layer computes
//!
//! ```text
//! X = Z + MSA(LN1(Z))                     (X = MSA(LN1(Z)) without token_residual)
//! V = X + MLP(LN2(X))
//! M = sigmoid(V w_gate + b_gate)          (one value per patch)
//! Z' = V + V ⊙ M                          (M broadcast over channels)
//! ```
//!
//! After the last layer
//! the query gate compares every patch with a learned prototype `q`:
//! `M = sigmoid(Z q / sqrt(C))`, `Z' = Z + Z ⊙ M`.

use super::ops::{
    gelu, gelu_grad, layer_norm, layer_norm_backward, linear, linear_backward, sigmoid, LayerNormCache, Matrix,
};
use super::params::{LayerParams, LinearParams, Tensor};
use super::ModelConfig;

pub type AttentionMap = Vec<f64>;

#[derive(Debug, Clone)]
pub struct MsaTrace {
    norm: LayerNormCache,
    normed: Matrix,
    q: Matrix,
    k: Matrix,
    v: Matrix,
    /// Row-stochastic `L×L` attention weights, one per head.
    pub probs: Vec<Matrix>,
    concat: Matrix,
}

/// Pre-normalized multi-head scaled dot-product self-attention.
pub fn msa(z: &Matrix, layer: &LayerParams, heads: usize) -> (Matrix, MsaTrace) {
    let (normed, norm) = layer_norm(z, &layer.norm1.gamma.data, &layer.norm1.beta.data);
    let q = linear(&normed, &layer.query.weight.data, &layer.query.bias.data);
    let k = linear(&normed, &layer.key.weight.data, &layer.key.bias.data);
    let v = linear(&normed, &layer.value.weight.data, &layer.value.bias.data);
    let (l, c) = (z.rows, z.cols);
    let dh = c / heads;
    let scale = 1.0 / (dh as f64).sqrt();

    let mut concat = Matrix::zeros(l, c);
    let mut probs = Vec::with_capacity(heads);
    for h in 0..heads {
        let off = h * dh;
        let mut p = Matrix::zeros(l, l);
        for i in 0..l {
            let qi = &q.row(i)[off..off + dh];
            let row = p.row_mut(i);
            for (j, s) in row.iter_mut().enumerate() {
                let kj = &k.row(j)[off..off + dh];
                *s = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale;
            }
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for s in row.iter_mut() {
                *s = (*s - max).exp();
                sum += *s;
            }
            row.iter_mut().for_each(|s| *s /= sum);
        }
        for i in 0..l {
            let out = &mut concat.data[i * c + off..i * c + off + dh];
            for j in 0..l {
                let w = p.at(i, j);
                for (o, &vv) in out.iter_mut().zip(&v.row(j)[off..off + dh]) {
                    *o += w * vv;
                }
            }
        }
        probs.push(p);
    }
    let out = linear(&concat, &layer.output.weight.data, &layer.output.bias.data);
    (
        out,
        MsaTrace {
            norm,
            normed,
            q,
            k,
            v,
            probs,
            concat,
        },
    )
}

pub fn msa_backward(dout: &Matrix, t: &MsaTrace, layer: &LayerParams, grads: &mut LayerParams) -> Matrix {
    let heads = t.probs.len();
    let (l, c) = (dout.rows, dout.cols);
    let dh = c / heads;
    let scale = 1.0 / (dh as f64).sqrt();

    let dconcat = lin_back(&t.concat, &layer.output, dout, &mut grads.output);
    let mut dq = Matrix::zeros(l, c);
    let mut dk = Matrix::zeros(l, c);
    let mut dv = Matrix::zeros(l, c);
    let mut dp = vec![0.0; l];
    for (h, p) in t.probs.iter().enumerate() {
        let off = h * dh;
        for i in 0..l {
            let dci = &dconcat.row(i)[off..off + dh];
            // dP[i][j] = <dO_i, v_j>; dV_j += P[i][j] dO_i
            for j in 0..l {
                let vj = &t.v.row(j)[off..off + dh];
                dp[j] = dci.iter().zip(vj).map(|(a, b)| a * b).sum();
                let w = p.at(i, j);
                let dvj = &mut dv.data[j * c + off..j * c + off + dh];
                for (d, &g) in dvj.iter_mut().zip(dci) {
                    *d += w * g;
                }
            }
            // softmax Jacobian
            let pi = p.row(i);
            let dot: f64 = pi.iter().zip(&dp).map(|(a, b)| a * b).sum();
            for j in 0..l {
                let ds = pi[j] * (dp[j] - dot) * scale;
                if ds == 0.0 {
                    continue;
                }
                for d in 0..dh {
                    dq.data[i * c + off + d] += ds * t.k.at(j, off + d);
                    dk.data[j * c + off + d] += ds * t.q.at(i, off + d);
                }
            }
        }
    }
    let mut dnormed = lin_back(&t.normed, &layer.query, &dq, &mut grads.query);
    for part in [
        lin_back(&t.normed, &layer.key, &dk, &mut grads.key),
        lin_back(&t.normed, &layer.value, &dv, &mut grads.value),
    ] {
        for (a, b) in dnormed.data.iter_mut().zip(&part.data) {
            *a += b;
        }
    }
    layer_norm_backward(
        &dnormed,
        &t.norm,
        &layer.norm1.gamma.data,
        &mut grads.norm1.gamma.data,
        &mut grads.norm1.beta.data,
    )
}

fn lin(x: &Matrix, p: &LinearParams) -> Matrix {
    linear(x, &p.weight.data, &p.bias.data)
}

fn lin_back(x: &Matrix, p: &LinearParams, dy: &Matrix, g: &mut LinearParams) -> Matrix {
    linear_backward(x, &p.weight.data, dy, &mut g.weight.data, &mut g.bias.data)
}

#[derive(Debug, Clone)]
pub struct EncoderLayerTrace {
    pub msa: MsaTrace,
    /// `MSA(LN1(Z))`, plus `Z` with the token residual.
    pub attended: Matrix,
    norm2: LayerNormCache,
    normed2: Matrix,
    hidden_pre: Matrix,
    hidden: Matrix,
    /// `V`, the layer's transformed feature before gating.
    pub transformed: Matrix,
    /// Gate map, absent when boundary gates are disabled.
    pub gate: Option<AttentionMap>,
    pub output: Matrix,
    pub token_residual: bool,
}

/// One encoder layer. Returns `Z'` and, when gates are enabled, the map `M`.
pub fn encoder_layer(z: &Matrix, layer: &LayerParams, cfg: &ModelConfig) -> (Matrix, Option<AttentionMap>, EncoderLayerTrace) {
    let (mut attended, msa_trace) = msa(z, layer, cfg.heads);
    if cfg.token_residual {
        for (a, x) in attended.data.iter_mut().zip(&z.data) {
            *a += x;
        }
    }
    let (normed2, norm2) = layer_norm(&attended, &layer.norm2.gamma.data, &layer.norm2.beta.data);
    let hidden_pre = lin(&normed2, &layer.mlp_in);
    let hidden = Matrix {
        data: hidden_pre.data.iter().map(|&x| gelu(x)).collect(),
        ..hidden_pre.clone()
    };
    let mlp = lin(&hidden, &layer.mlp_out);
    let transformed = Matrix {
        data: attended.data.iter().zip(&mlp.data).map(|(a, m)| a + m).collect(),
        ..attended.clone()
    };

    let (output, gate) = if cfg.boundary_gates {
        let logits = lin(&transformed, &layer.gate);
        let m: AttentionMap = logits.data.iter().map(|&s| sigmoid(s)).collect();
        (gate_residual(&transformed, &m), Some(m))
    } else {
        (transformed.clone(), None)
    };
    let trace = EncoderLayerTrace {
        msa: msa_trace,
        attended,
        norm2,
        normed2,
        hidden_pre,
        hidden,
        transformed,
        gate: gate.clone(),
        output: output.clone(),
        token_residual: cfg.token_residual,
    };
    (output, gate, trace)
}

/// `X + X ⊙ M` with `M` broadcast across channels.
pub fn gate_residual(x: &Matrix, m: &[f64]) -> Matrix {
    let mut out = x.clone();
    for (r, &mr) in m.iter().enumerate() {
        for v in out.row_mut(r) {
            *v += *v * mr;
        }
    }
    out
}

/// Backward through [`gate_residual`] followed by the sigmoid that produced
/// `m` from logits. Returns `(dX through the product, dlogits)`.
fn gate_residual_backward(x: &Matrix, m: &[f64], dout: &Matrix, dm_ext: Option<&[f64]>) -> (Matrix, Vec<f64>) {
    let mut dx = dout.clone();
    let mut dlogits = vec![0.0; m.len()];
    for (r, &mr) in m.iter().enumerate() {
        let mut dm = dm_ext.map_or(0.0, |d| d[r]);
        let xr = x.row(r);
        for (c, g) in dx.row_mut(r).iter_mut().enumerate() {
            dm += *g * xr[c];
            *g *= 1.0 + mr;
        }
        dlogits[r] = dm * mr * (1.0 - mr);
    }
    (dx, dlogits)
}

pub fn encoder_layer_backward(
    dout: &Matrix,
    dmap: Option<&[f64]>,
    t: &EncoderLayerTrace,
    layer: &LayerParams,
    grads: &mut LayerParams,
) -> Matrix {
    let mut dtransformed = match &t.gate {
        Some(m) => {
            let (mut dv, dlogits) = gate_residual_backward(&t.transformed, m, dout, dmap);
            let dlog = Matrix::from_vec(dlogits.len(), 1, dlogits);
            let via_gate = lin_back(&t.transformed, &layer.gate, &dlog, &mut grads.gate);
            for (a, b) in dv.data.iter_mut().zip(&via_gate.data) {
                *a += b;
            }
            dv
        }
        None => dout.clone(),
    };
    // X = A (+ Z), V = X + MLP(LN2(X))
    let dhidden = lin_back(&t.hidden, &layer.mlp_out, &dtransformed, &mut grads.mlp_out);
    let dhidden_pre = Matrix {
        data: dhidden
            .data
            .iter()
            .zip(&t.hidden_pre.data)
            .map(|(g, &x)| g * gelu_grad(x))
            .collect(),
        ..dhidden
    };
    let dnormed2 = lin_back(&t.normed2, &layer.mlp_in, &dhidden_pre, &mut grads.mlp_in);
    let dattended_mlp = layer_norm_backward(
        &dnormed2,
        &t.norm2,
        &layer.norm2.gamma.data,
        &mut grads.norm2.gamma.data,
        &mut grads.norm2.beta.data,
    );
    for (a, b) in dtransformed.data.iter_mut().zip(&dattended_mlp.data) {
        *a += b;
    }
    let mut dz = msa_backward(&dtransformed, &t.msa, layer, grads);
    if t.token_residual {
        for (a, b) in dz.data.iter_mut().zip(&dtransformed.data) {
            *a += b;
        }
    }
    dz
}

#[derive(Debug, Clone)]
pub struct QueryGateTrace {
    pub input: Matrix,
    pub gate: AttentionMap,
    pub output: Matrix,
}

/// Query-embedding gate: similarity of each patch to the prototype `q`.
pub fn query_bag(z: &Matrix, q: &[f64]) -> (Matrix, AttentionMap) {
    let inv = 1.0 / (z.cols as f64).sqrt();
    let m: AttentionMap = (0..z.rows)
        .map(|r| sigmoid(z.row(r).iter().zip(q).map(|(a, b)| a * b).sum::<f64>() * inv))
        .collect();
    (gate_residual(z, &m), m)
}

pub fn query_bag_backward(dout: &Matrix, dmap: Option<&[f64]>, t: &QueryGateTrace, q: &[f64], dq: &mut Tensor) -> Matrix {
    let inv = 1.0 / (t.input.cols as f64).sqrt();
    let (mut dz, dlogits) = gate_residual_backward(&t.input, &t.gate, dout, dmap);
    for (r, &ds) in dlogits.iter().enumerate() {
        let zr = t.input.row(r);
        for c in 0..q.len() {
            dq.data[c] += ds * zr[c] * inv;
            dz.data[r * q.len() + c] += ds * q[c] * inv;
        }
    }
    dz
}

/// Forward record of the whole encoder stack.
#[derive(Debug, Clone)]
pub struct EncoderTrace {
    pub input: Matrix,
    pub layers: Vec<EncoderLayerTrace>,
    pub query: Option<QueryGateTrace>,
    pub output: Matrix,
    /// `n` layer maps followed by the query-gate map, or empty without gates.
    pub maps: Vec<AttentionMap>,
}

/// Encoder layers followed by the query gate.
pub fn encode(e: &Matrix, layers: &[LayerParams], boundary_query: &[f64], cfg: &ModelConfig) -> EncoderTrace {
    let mut z = e.clone();
    let mut traces = Vec::with_capacity(layers.len());
    let mut maps = Vec::new();
    for layer in layers {
        let (next, m, t) = encoder_layer(&z, layer, cfg);
        maps.extend(m);
        traces.push(t);
        z = next;
    }
    let query = if cfg.boundary_gates {
        let (out, m) = query_bag(&z, boundary_query);
        maps.push(m.clone());
        let t = QueryGateTrace {
            input: z,
            gate: m,
            output: out.clone(),
        };
        z = out;
        Some(t)
    } else {
        None
    };
    EncoderTrace {
        input: e.clone(),
        layers: traces,
        query,
        output: z,
        maps,
    }
}

/// Returns dE. `dmaps` is either empty (no map supervision) or has one entry
/// per map in [`EncoderTrace::maps`].
pub fn encode_backward(
    dout: &Matrix,
    dmaps: &[Vec<f64>],
    t: &EncoderTrace,
    layers: &[LayerParams],
    boundary_query: &[f64],
    grad_layers: &mut [LayerParams],
    grad_query: &mut Tensor,
) -> Matrix {
    let dmap = |i: usize| dmaps.get(i).map(|v| v.as_slice());
    let mut dz = dout.clone();
    if let Some(qt) = &t.query {
        dz = query_bag_backward(&dz, dmap(layers.len()), qt, boundary_query, grad_query);
    }
    for (i, lt) in t.layers.iter().enumerate().rev() {
        dz = encoder_layer_backward(&dz, dmap(i), lt, &layers[i], &mut grad_layers[i]);
    }
    dz
}
