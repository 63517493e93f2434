//! The boundary-aware transformer and its exact parameter gradients.
//!
//! Everything runs in f64 on the CPU. [`forward_traced`] records what
//! [`backward`] needs; [`forward`] is the inference-only entry point.
//! Forward and backward are pure in the parameters, so any number of threads
//! may evaluate against one shared [`ParameterSet`].

pub mod checkpoint;
pub mod encoder;
pub mod head;
pub mod ops;
mod params;
pub mod stem;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pnm::{self, PnmError};

pub use encoder::{encode, encoder_layer, msa, query_bag, AttentionMap, EncoderTrace};
pub use head::atrous_head;
pub use ops::{Matrix, Volume};
pub use params::{ConvParams, HeadParams, LayerParams, LinearParams, NormParams, ParameterSet, Tensor, ATROUS_RATES, INIT_STD};
pub use stem::{conv_stem, sequentialize};

/// Output channels of the first three stem blocks; the fourth emits `C`.
pub const STEM_CHANNELS: [usize; 3] = [8, 16, 32];
/// Side of the square image region each sequence element covers.
pub const PATCH_SIDE: usize = 16;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite gradient in {path}")]
    NonFinite { path: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

/// Architecture hyper-parameters. `boundary_gates = false` gives the plain
/// transformer: no layer gates, no query gate and no map outputs.
/// `token_residual` adds the layer input to the attention output before the
/// MLP; without it the layer is built from the MSA and MLP terms alone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub image_side: usize,
    pub patch_side: usize,
    pub channels: usize,
    pub layers: usize,
    pub heads: usize,
    pub mlp_hidden: usize,
    pub boundary_gates: bool,
    pub token_residual: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            image_side: 64,
            patch_side: PATCH_SIDE,
            channels: 32,
            layers: 4,
            heads: 4,
            mlp_hidden: 64,
            boundary_gates: true,
            token_residual: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |m: String| Err(ModelError::InvalidConfig(m));
        if self.patch_side != PATCH_SIDE {
            return fail(format!("patch side is fixed at {PATCH_SIDE} by the stem, got {}", self.patch_side));
        }
        if self.image_side == 0 || !self.image_side.is_multiple_of(self.patch_side) {
            return fail(format!("image side {} is not a positive multiple of {}", self.image_side, self.patch_side));
        }
        if self.channels == 0 || self.heads == 0 || !self.channels.is_multiple_of(self.heads) {
            return fail(format!("{} channels cannot be split into {} heads", self.channels, self.heads));
        }
        if self.layers == 0 || self.mlp_hidden == 0 {
            return fail("layers and mlp_hidden must be >= 1".into());
        }
        Ok(())
    }

    pub fn grid_side(&self) -> usize {
        self.image_side / self.patch_side
    }

    pub fn seq_len(&self) -> usize {
        self.grid_side() * self.grid_side()
    }

    /// Number of attention maps produced (and supervised): `n + 1` with
    /// gates, none without.
    pub fn num_maps(&self) -> usize {
        if self.boundary_gates {
            self.layers + 1
        } else {
            0
        }
    }
}

/// `H×W×3` image, row-major with interleaved channels, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl ImageTensor {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self, ModelError> {
        if data.len() != height * width * 3 {
            return Err(ModelError::Shape(format!(
                "{} values for a {height}x{width}x3 image",
                data.len()
            )));
        }
        Ok(Self { height, width, data })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0.0; height * width * 3],
        }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, channel: usize) -> f64 {
        self.data[(row * self.width + col) * 3 + channel]
    }

    pub fn to_volume(&self) -> Volume {
        let n = self.height * self.width;
        let mut v = Volume::zeros(3, self.height, self.width);
        for (i, px) in self.data.chunks_exact(3).enumerate() {
            for c in 0..3 {
                v.data[c * n + i] = px[c];
            }
        }
        v
    }

    /// 8-bit RGB quantization (rounded, clamped).
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect()
    }

    pub fn from_rgb8(height: usize, width: usize, rgb: &[u8]) -> Self {
        Self {
            height,
            width,
            data: rgb.iter().map(|&v| v as f64 / 255.0).collect(),
        }
    }

    pub fn read_ppm(path: &Path) -> Result<Self, PnmError> {
        let r = pnm::read(path)?;
        if r.channels != 3 {
            return Err(PnmError::Malformed {
                path: path.display().to_string(),
                reason: "expected an RGB PPM".into(),
            });
        }
        Ok(Self::from_rgb8(r.height, r.width, &r.data))
    }

    pub fn write_ppm(&self, path: &Path) -> Result<(), PnmError> {
        pnm::write(path, &pnm::encode_ppm(self.width, self.height, &self.to_rgb8()))
    }
}

/// Per-pixel lesion probabilities, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl SegmentationMap {
    /// Probability × 255, rounded.
    pub fn to_pgm_bytes(&self) -> Vec<u8> {
        let data: Vec<u8> = self.values.iter().map(|&p| (p.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
        pnm::encode_pgm(self.width, self.height, &data)
    }

    pub fn from_pgm_bytes(bytes: &[u8], origin: &str) -> Result<Self, PnmError> {
        let r = pnm::decode(bytes, origin)?;
        if r.channels != 1 {
            return Err(PnmError::Malformed {
                path: origin.to_string(),
                reason: "expected a single-channel PGM".into(),
            });
        }
        Ok(Self {
            height: r.height,
            width: r.width,
            values: r.data.iter().map(|&v| v as f64 / 255.0).collect(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct ForwardTrace {
    stem: stem::StemTrace,
    pub encoder: EncoderTrace,
    head: head::HeadTrace,
    pub prediction: SegmentationMap,
}

impl ForwardTrace {
    pub fn maps(&self) -> &[AttentionMap] {
        &self.encoder.maps
    }
}

/// Upstream gradients of the objective with respect to the model outputs.
/// `maps` may be empty, meaning the maps carry no loss.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputGradients {
    pub prediction: Vec<f64>,
    pub maps: Vec<Vec<f64>>,
}

fn check_inputs(image: &ImageTensor, params: &ParameterSet, cfg: &ModelConfig) -> Result<(), ModelError> {
    cfg.validate()?;
    if image.height != cfg.image_side || image.width != cfg.image_side {
        return Err(ModelError::Shape(format!(
            "image is {}x{}, model expects {}x{}",
            image.height, image.width, cfg.image_side, cfg.image_side
        )));
    }
    if params.layers.len() != cfg.layers
        || params.pos_embed.shape != [cfg.seq_len(), cfg.channels]
        || params.boundary_query.len() != cfg.channels
    {
        return Err(ModelError::Shape("parameter set does not match the model config".into()));
    }
    Ok(())
}

pub fn forward_traced(image: &ImageTensor, params: &ParameterSet, cfg: &ModelConfig) -> Result<ForwardTrace, ModelError> {
    check_inputs(image, params, cfg)?;
    let (feat, stem_trace) = conv_stem(image, &params.stem);
    let e = sequentialize(&feat, &params.pos_embed);
    let enc = encode(&e, &params.layers, &params.boundary_query.data, cfg);
    let g = cfg.grid_side();
    let (prediction, head_trace) = atrous_head(&enc.output, &params.head, g, g, cfg.patch_side);
    Ok(ForwardTrace {
        stem: stem_trace,
        encoder: enc,
        head: head_trace,
        prediction,
    })
}

/// Segmentation probabilities and the `n + 1` boundary maps (none without
/// gates).
pub fn forward(image: &ImageTensor, params: &ParameterSet, cfg: &ModelConfig) -> Result<(SegmentationMap, Vec<AttentionMap>), ModelError> {
    let t = forward_traced(image, params, cfg)?;
    Ok((t.prediction, t.encoder.maps))
}

/// Exact parameter gradients given the upstream output gradients.
pub fn backward(
    trace: &ForwardTrace,
    params: &ParameterSet,
    cfg: &ModelConfig,
    upstream: &OutputGradients,
) -> Result<ParameterSet, ModelError> {
    if upstream.prediction.len() != trace.prediction.values.len() {
        return Err(ModelError::Shape("prediction gradient length".into()));
    }
    if !upstream.maps.is_empty() && upstream.maps.len() != trace.encoder.maps.len() {
        return Err(ModelError::Shape(format!(
            "{} map gradients for {} maps",
            upstream.maps.len(),
            trace.encoder.maps.len()
        )));
    }
    let mut grads = params.zeros_like();
    let dz = head::atrous_head_backward(&upstream.prediction, &trace.prediction, &trace.head, &params.head, &mut grads.head);
    let de = encoder::encode_backward(
        &dz,
        &upstream.maps,
        &trace.encoder,
        &params.layers,
        &params.boundary_query.data,
        &mut grads.layers,
        &mut grads.boundary_query,
    );
    let g = cfg.grid_side();
    let dfeat = stem::sequentialize_backward(&de, g, g, &mut grads.pos_embed);
    stem::conv_stem_backward(&dfeat, &trace.stem, &params.stem, &mut grads.stem);

    if let Some(path) = grads.first_non_finite() {
        return Err(ModelError::NonFinite { path });
    }
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(side: usize, rng: &mut ChaCha8Rng) -> ImageTensor {
        ImageTensor::new(side, side, (0..side * side * 3).map(|_| rng.random::<f64>()).collect()).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(ModelConfig::default().validate().is_ok());
        let bad_heads = ModelConfig {
            heads: 5,
            ..ModelConfig::default()
        };
        assert!(bad_heads.validate().is_err());
        let bad_side = ModelConfig {
            image_side: 40,
            ..ModelConfig::default()
        };
        assert!(bad_side.validate().is_err());
        assert_eq!(ModelConfig::default().num_maps(), 5);
    }

    #[test]
    fn stem_shape_and_zero_input() {
        let cfg = ModelConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params = ParameterSet::init(&cfg, &mut rng);
        let (feat, _) = conv_stem(&random_image(64, &mut rng), &params.stem);
        assert_eq!((feat.channels, feat.height, feat.width), (32, 4, 4));
        let (zero, _) = conv_stem(&ImageTensor::zeros(64, 64), &params.stem);
        assert!(zero.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sequentialize_adds_position_row_major() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let feat = Volume {
            channels: 3,
            height: 4,
            width: 4,
            data: (0..48).map(|_| rng.random()).collect(),
        };
        let pos = Tensor::normal(&[16, 3], 1.0, &mut rng);
        let e = sequentialize(&feat, &pos);
        for r in 0..4 {
            for c in 0..4 {
                let l = crate::keypatch::to_patch_index(r * 16, c * 16, 16, 4);
                for ch in 0..3 {
                    assert_eq!(e.at(l, ch), pos.data[l * 3 + ch] + feat.at(ch, r, c));
                }
            }
        }
        let flat = sequentialize(&feat, &Tensor::zeros(&[16, 3]));
        assert_eq!(flat.at(5, 2), feat.at(2, 1, 1));
    }

    #[test]
    fn forward_shapes_and_ranges() {
        let cfg = ModelConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = ParameterSet::init(&cfg, &mut rng);
        let img = random_image(64, &mut rng);
        let (pred, maps) = forward(&img, &params, &cfg).unwrap();
        assert_eq!((pred.height, pred.width), (64, 64));
        assert_eq!(maps.len(), 5);
        assert!(maps.iter().all(|m| m.len() == 16 && m.iter().all(|&v| v > 0.0 && v < 1.0)));
        assert!(pred.values.iter().all(|&p| p > 0.0 && p < 1.0));
        let (pred2, maps2) = forward(&img, &params, &cfg).unwrap();
        assert_eq!(pred, pred2);
        assert_eq!(maps, maps2);

        let plain = ModelConfig {
            boundary_gates: false,
            ..cfg
        };
        let (_, none) = forward(&img, &params, &plain).unwrap();
        assert!(none.is_empty());
    }

    #[test]
    fn wrong_image_size_is_rejected() {
        let cfg = ModelConfig::default();
        let params = ParameterSet::init(&cfg, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(matches!(
            forward(&ImageTensor::zeros(32, 32), &params, &cfg),
            Err(ModelError::Shape(_))
        ));
    }

    #[test]
    fn non_finite_gradients_name_the_parameter() {
        let cfg = ModelConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let params = ParameterSet::init(&cfg, &mut rng);
        let trace = forward_traced(&random_image(64, &mut rng), &params, &cfg).unwrap();
        let mut upstream = OutputGradients {
            prediction: vec![0.0; 64 * 64],
            maps: vec![],
        };
        upstream.prediction[100] = f64::NAN;
        match backward(&trace, &params, &cfg, &upstream) {
            Err(ModelError::NonFinite { path }) => assert_eq!(path, "stem.0.weight"),
            other => panic!("expected non-finite error, got {other:?}"),
        }
    }

    #[test]
    fn image_ppm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.ppm");
        let img = ImageTensor::from_rgb8(2, 2, &[0, 10, 20, 30, 40, 50, 60, 70, 80, 255, 128, 1]);
        img.write_ppm(&path).unwrap();
        assert_eq!(ImageTensor::read_ppm(&path).unwrap(), img);
    }
}
