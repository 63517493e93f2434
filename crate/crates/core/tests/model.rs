use bat_core::data::{generate_sample, SyntheticSpec};
use bat_core::harness::{
    batch_loss_and_grad, compare_gradients, gradcheck, gradcheck_batch, GradcheckConfig, HarnessError, Prepared,
};
use bat_core::loss::{dice_loss, dice_loss_grad};
use bat_core::model::ops::{sigmoid, Matrix};
use bat_core::model::{
    atrous_head, backward, encode, encoder_layer, forward, forward_traced, msa, query_bag, ImageTensor, LayerParams,
    ModelConfig, ModelError, OutputGradients, ParameterSet, Tensor, ATROUS_RATES,
};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_matrix(rows: usize, cols: usize, std: f64, r: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_vec(rows, cols, Tensor::normal(&[rows, cols], std, r).data)
}

/// Parameters with larger weights than the default init, so attention is far
/// from uniform and the gates are far from one half.
fn sharp_params(cfg: &ModelConfig, seed: u64) -> ParameterSet {
    let mut r = rng(seed);
    let mut p = ParameterSet::init(cfg, &mut r);
    for (_, t) in p.tensors_mut() {
        for v in t.data.iter_mut() {
            *v += r.random_range(-0.3..0.3);
        }
    }
    p
}

fn small_cfg() -> ModelConfig {
    ModelConfig {
        channels: 8,
        heads: 2,
        layers: 2,
        mlp_hidden: 12,
        ..ModelConfig::default()
    }
}

fn image(seed: u64) -> ImageTensor {
    generate_sample(
        &SyntheticSpec {
            seed,
            ..SyntheticSpec::default()
        },
        0,
    )
    .unwrap()
    .image
}

fn dense_layer_norm(x: &[f64], gamma: &[f64], beta: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    x.iter()
        .enumerate()
        .map(|(i, v)| (v - mean) / (var + 1e-5).sqrt() * gamma[i] + beta[i])
        .collect()
}

fn dense_linear(x: &[f64], w: &Tensor, b: &Tensor) -> Vec<f64> {
    let (n_in, n_out) = (w.shape[0], w.shape[1]);
    (0..n_out)
        .map(|o| b.data[o] + (0..n_in).map(|k| x[k] * w.data[k * n_out + o]).sum::<f64>())
        .collect()
}

/// Textbook multi-head attention, one query row at a time.
fn dense_msa(z: &Matrix, layer: &LayerParams, heads: usize) -> Vec<Vec<f64>> {
    let l = z.rows;
    let c = z.cols;
    let dh = c / heads;
    let normed: Vec<Vec<f64>> = (0..l)
        .map(|i| dense_layer_norm(z.row(i), &layer.norm1.gamma.data, &layer.norm1.beta.data))
        .collect();
    let proj = |p: &bat_core::model::LinearParams| -> Vec<Vec<f64>> {
        normed.iter().map(|x| dense_linear(x, &p.weight, &p.bias)).collect()
    };
    let (q, k, v) = (proj(&layer.query), proj(&layer.key), proj(&layer.value));
    (0..l)
        .map(|i| {
            let mut concat = vec![0.0; c];
            for h in 0..heads {
                let cols = h * dh..(h + 1) * dh;
                let scores: Vec<f64> = (0..l)
                    .map(|j| cols.clone().map(|d| q[i][d] * k[j][d]).sum::<f64>() / (dh as f64).sqrt())
                    .collect();
                let denom: f64 = scores.iter().map(|s| s.exp()).sum();
                for j in 0..l {
                    let w = scores[j].exp() / denom;
                    for d in cols.clone() {
                        concat[d] += w * v[j][d];
                    }
                }
            }
            dense_linear(&concat, &layer.output.weight, &layer.output.bias)
        })
        .collect()
}

#[test]
fn msa_matches_dense_reference() {
    let cfg = small_cfg();
    for seed in 0..5 {
        let p = sharp_params(&cfg, seed);
        let z = random_matrix(16, 8, 1.0, &mut rng(seed + 100));
        let (out, _) = msa(&z, &p.layers[0], cfg.heads);
        let dense = dense_msa(&z, &p.layers[0], cfg.heads);
        for i in 0..16 {
            for c in 0..8 {
                assert!((out.at(i, c) - dense[i][c]).abs() < 1e-10);
            }
        }
    }
}

#[test]
fn softmax_rows_and_maps_are_probabilities() {
    let cfg = ModelConfig::default();
    for seed in 0..4 {
        let p = sharp_params(&cfg, seed);
        let t = forward_traced(&image(seed), &p, &cfg).unwrap();
        for layer in &t.encoder.layers {
            for probs in &layer.msa.probs {
                for i in 0..probs.rows {
                    let s: f64 = probs.row(i).iter().sum();
                    assert!((s - 1.0).abs() < 1e-12);
                }
            }
        }
        assert_eq!(t.maps().len(), cfg.layers + 1);
        for m in t.maps() {
            assert_eq!(m.len(), cfg.seq_len());
            assert!(m.iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }
}

#[test]
fn gate_residual_identity_holds_exactly() {
    let cfg = ModelConfig::default();
    let p = sharp_params(&cfg, 3);
    let t = forward_traced(&image(3), &p, &cfg).unwrap();
    for layer in &t.encoder.layers {
        let m = layer.gate.as_ref().unwrap();
        for i in 0..layer.output.rows {
            for c in 0..layer.output.cols {
                let v = layer.transformed.at(i, c);
                assert!((layer.output.at(i, c) - v - v * m[i]).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn closed_gate_passes_transformed_feature() {
    let cfg = small_cfg();
    let mut p = sharp_params(&cfg, 1);
    p.layers[0].gate.bias.data[0] = -800.0;
    let z = random_matrix(16, 8, 1.0, &mut rng(5));
    let (out, m, trace) = encoder_layer(&z, &p.layers[0], &cfg);
    assert!(m.unwrap().iter().all(|&v| v < 1e-300));
    assert!(out.max_abs_diff(&trace.transformed) < 1e-250);
}

#[test]
fn token_residual_adds_layer_input() {
    let cfg = small_cfg();
    let p = sharp_params(&cfg, 2);
    let z = random_matrix(16, 8, 1.0, &mut rng(6));
    let literal = ModelConfig {
        token_residual: false,
        ..cfg
    };
    let (_, _, with) = encoder_layer(&z, &p.layers[0], &cfg);
    let (_, _, without) = encoder_layer(&z, &p.layers[0], &literal);
    let (a, _) = msa(&z, &p.layers[0], cfg.heads);
    for i in 0..a.data.len() {
        assert!((without.attended.data[i] - a.data[i]).abs() == 0.0);
        assert!((with.attended.data[i] - a.data[i] - z.data[i]).abs() < 1e-15);
    }
}

#[test]
fn query_gate_matches_formula() {
    let mut r = rng(8);
    let z = random_matrix(16, 32, 1.0, &mut r);
    let q = Tensor::normal(&[32], 0.5, &mut r).data;
    let (out, m) = query_bag(&z, &q);
    for i in 0..16 {
        let s: f64 = z.row(i).iter().zip(&q).map(|(a, b)| a * b).sum();
        let expect = 1.0 / (1.0 + (-s / 32f64.sqrt()).exp());
        assert!((m[i] - expect).abs() < 1e-14);
        for c in 0..32 {
            assert!((out.at(i, c) - z.at(i, c) * (1.0 + m[i])).abs() < 1e-13);
        }
    }
}

fn bilinear_reference(grid: &[f64], n: usize, scale: usize, y: usize, x: usize) -> f64 {
    let src = |o: usize| ((o as f64 + 0.5) / scale as f64 - 0.5).clamp(0.0, (n - 1) as f64);
    let (sy, sx) = (src(y), src(x));
    let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(n - 1), (x0 + 1).min(n - 1));
    let (fy, fx) = (sy - y0 as f64, sx - x0 as f64);
    let g = |r: usize, c: usize| grid[r * n + c];
    (1.0 - fy) * ((1.0 - fx) * g(y0, x0) + fx * g(y0, x1)) + fy * ((1.0 - fx) * g(y1, x0) + fx * g(y1, x1))
}

#[test]
fn head_matches_direct_dilated_convolution() {
    let cfg = small_cfg();
    let p = sharp_params(&cfg, 4);
    let (rows, cols, c) = (4, 4, 8);
    let z = random_matrix(rows * cols, c, 1.0, &mut rng(9));
    let (pred, _) = atrous_head(&z, &p.head, rows, cols, 16);
    let feat = |ch: usize, y: i64, x: i64| -> f64 {
        if y < 0 || x < 0 || y >= rows as i64 || x >= cols as i64 {
            0.0
        } else {
            z.at(y as usize * cols + x as usize, ch)
        }
    };
    let mut logits = vec![0.0; rows * cols];
    for y in 0..rows as i64 {
        for x in 0..cols as i64 {
            let mut acc = p.head.project.bias.data[0];
            for (bi, &rate) in ATROUS_RATES.iter().enumerate() {
                let b = &p.head.branches[bi];
                for o in 0..c {
                    let mut v = b.bias.data[o];
                    for i in 0..c {
                        for ky in 0..3i64 {
                            for kx in 0..3i64 {
                                let w = b.weight.data[((o * c + i) * 3 + ky as usize) * 3 + kx as usize];
                                v += w * feat(i, y + (ky - 1) * rate as i64, x + (kx - 1) * rate as i64);
                            }
                        }
                    }
                    acc += p.head.project.weight.data[bi * c + o] * v;
                }
            }
            logits[y as usize * cols + x as usize] = acc;
        }
    }
    for y in 0..64 {
        for x in 0..64 {
            let expect = sigmoid(bilinear_reference(&logits, 4, 16, y, x));
            assert!((pred.values[y * 64 + x] - expect).abs() < 1e-12);
        }
    }
}

fn seg_only_loss(items: &[Prepared], params: &ParameterSet, cfg: &ModelConfig) -> f64 {
    items
        .iter()
        .map(|it| dice_loss(&it.seg_target, &forward(&it.image, params, cfg).unwrap().0.values).unwrap())
        .sum()
}

#[test]
fn query_gradient_flows_through_residual_without_map_loss() {
    let cfg = ModelConfig::default();
    let params = ParameterSet::init(&cfg, &mut rng(11));
    let items = gradcheck_batch(&cfg, 11, 1).unwrap();
    let t = forward_traced(&items[0].image, &params, &cfg).unwrap();
    let upstream = OutputGradients {
        prediction: dice_loss_grad(&items[0].seg_target, &t.prediction.values).unwrap(),
        maps: Vec::new(),
    };
    let g = backward(&t, &params, &cfg, &upstream).unwrap();
    assert!(g.boundary_query.data.iter().any(|&v| v != 0.0));
    let h = 1e-5;
    for idx in 0..cfg.channels {
        let mut up = params.clone();
        up.boundary_query.data[idx] += h;
        let mut down = params.clone();
        down.boundary_query.data[idx] -= h;
        let numeric = (seg_only_loss(&items, &up, &cfg) - seg_only_loss(&items, &down, &cfg)) / (2.0 * h);
        let a = g.boundary_query.data[idx];
        assert!((a - numeric).abs() <= 1e-4 * a.abs().max(numeric.abs()).max(1e-5), "{idx}: {a} vs {numeric}");
    }
}

#[test]
fn ungated_model_has_dead_gate_parameters() {
    let cfg = ModelConfig {
        boundary_gates: false,
        ..ModelConfig::default()
    };
    let params = sharp_params(&cfg, 12);
    let t = forward_traced(&image(12), &params, &cfg).unwrap();
    assert!(t.maps().is_empty());
    let upstream = OutputGradients {
        prediction: vec![1.0; 64 * 64],
        maps: Vec::new(),
    };
    let g = backward(&t, &params, &cfg, &upstream).unwrap();
    assert!(g.boundary_query.data.iter().all(|&v| v == 0.0));
    for l in &g.layers {
        assert!(l.gate.weight.data.iter().chain(&l.gate.bias.data).all(|&v| v == 0.0));
        assert!(l.query.weight.data.iter().any(|&v| v != 0.0));
    }
}

#[test]
fn gradcheck_passes_without_gates_and_reports_excluded_groups() {
    let cfg = ModelConfig {
        boundary_gates: false,
        ..ModelConfig::default()
    };
    let report = gradcheck(&cfg, &GradcheckConfig::default()).unwrap();
    assert!(report.passed, "{}", report.max_rel_error);
    assert_eq!(report.groups_excluded.len(), 2 * cfg.layers + 1);
    assert!(report.groups_excluded.iter().any(|g| g == "boundary_query"));
    assert!(report.groups_covered.iter().all(|g| !g.contains(".gate.") && g != "boundary_query"));
}

#[test]
fn gradcheck_passes_for_literal_layer() {
    let cfg = ModelConfig {
        token_residual: false,
        ..ModelConfig::default()
    };
    let report = gradcheck(&cfg, &GradcheckConfig { seed: 3, ..GradcheckConfig::default() }).unwrap();
    assert!(report.passed, "{}", report.max_rel_error);
}

#[test]
fn gradcheck_passes_on_sharp_small_model() {
    // larger weights give gradients well above the comparison floor
    let cfg = small_cfg();
    let params = sharp_params(&cfg, 21);
    let items = gradcheck_batch(&cfg, 21, 2).unwrap();
    let refs: Vec<&Prepared> = items.iter().collect();
    let (_, analytic) = batch_loss_and_grad(&refs, &params, &cfg).unwrap();
    let gc = GradcheckConfig {
        params: 120,
        ..GradcheckConfig::default()
    };
    let report = compare_gradients(&cfg, &params, &items, &analytic, &gc).unwrap();
    assert!(report.passed, "{}", report.max_rel_error);
    let large = report.checks.iter().filter(|c| c.analytic.abs() > 1e-3).count();
    assert!(large > 30, "{large}");
}

#[test]
fn corrupted_gradient_is_reported() {
    let cfg = ModelConfig::default();
    let gc = GradcheckConfig::default();
    let params = ParameterSet::init(&cfg, &mut rng(gc.seed));
    let items = gradcheck_batch(&cfg, gc.seed, gc.batch).unwrap();
    let refs: Vec<&Prepared> = items.iter().collect();
    let (_, mut analytic) = batch_loss_and_grad(&refs, &params, &cfg).unwrap();
    analytic.head.project.weight.data.iter_mut().for_each(|v| *v = -*v);
    let report = compare_gradients(&cfg, &params, &items, &analytic, &gc).unwrap();
    assert!(!report.passed);
    assert!(report.failures >= 1);
    assert!(report
        .checks
        .iter()
        .filter(|c| c.rel_error >= gc.tolerance)
        .all(|c| c.path == "head.project.weight"));
}

#[test]
fn gradcheck_rejects_zero_parameters() {
    let cfg = GradcheckConfig {
        params: 0,
        ..GradcheckConfig::default()
    };
    assert!(matches!(gradcheck(&ModelConfig::default(), &cfg), Err(HarnessError::Config(_))));
}

#[test]
fn forward_rejects_wrong_image_size() {
    let cfg = ModelConfig::default();
    let p = ParameterSet::init(&cfg, &mut rng(0));
    assert!(matches!(forward(&ImageTensor::zeros(32, 32), &p, &cfg), Err(ModelError::Shape(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10))]

    #[test]
    fn encoder_is_permutation_equivariant(seed in 0u64..1000) {
        let cfg = ModelConfig::default();
        let p = sharp_params(&cfg, seed);
        let mut r = rng(seed ^ 0xabc);
        let e = random_matrix(16, 32, 1.0, &mut r);
        let mut perm: Vec<usize> = (0..16).collect();
        perm.shuffle(&mut r);
        let mut permuted = Matrix::zeros(16, 32);
        for (dst, &src) in perm.iter().enumerate() {
            permuted.row_mut(dst).copy_from_slice(e.row(src));
        }
        let a = encode(&e, &p.layers, &p.boundary_query.data, &cfg);
        let b = encode(&permuted, &p.layers, &p.boundary_query.data, &cfg);
        for (dst, &src) in perm.iter().enumerate() {
            for c in 0..32 {
                prop_assert!((b.output.at(dst, c) - a.output.at(src, c)).abs() < 1e-9);
            }
            for (ma, mb) in a.maps.iter().zip(&b.maps) {
                prop_assert!((mb[dst] - ma[src]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn outputs_are_finite_probabilities(seed in 0u64..1000) {
        let cfg = small_cfg();
        let p = sharp_params(&cfg, seed);
        let (pred, maps) = forward(&image(seed % 7), &p, &cfg).unwrap();
        prop_assert!(pred.values.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)));
        prop_assert_eq!(maps.len(), 3);
    }
}
