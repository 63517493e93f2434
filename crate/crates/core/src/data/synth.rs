//! Procedural lesion images.
//!
//! A lesion is a star-convex region: an ellipse whose radius is modulated by
//! a short Fourier series. The image is a flat skin tone, a darker lesion
//! tone (the gap is set by the contrast level), per-pixel Gaussian noise and
//! optional dark arcs imitating hair. Each sample draws from three ChaCha
//! streams keyed by `(seed, index)`: geometry, tones and noise, and hair. Hair
//! therefore never perturbs the rest of the render.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::keypatch::{trace_boundary, BinaryMask};
use crate::model::ImageTensor;

use super::DataError;

pub const MIN_COVERAGE: f64 = 0.02;
pub const MAX_COVERAGE: f64 = 0.70;
pub const MAX_RETRIES: usize = 100;
const NOISE_STD: f64 = 0.03;
const HARMONICS: std::ops::RangeInclusive<usize> = 2..=6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Contrast {
    Low,
    Medium,
    High,
}

impl Contrast {
    /// Tone gap between skin and lesion.
    pub fn gap(self) -> f64 {
        match self {
            Contrast::Low => 0.12,
            Contrast::Medium => 0.25,
            Contrast::High => 0.45,
        }
    }
}

impl std::str::FromStr for Contrast {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "low" => Ok(Contrast::Low),
            "medium" => Ok(Contrast::Medium),
            "high" => Ok(Contrast::High),
            other => Err(format!("unknown contrast {other:?} (expected low, medium or high)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub count: usize,
    pub image_side: usize,
    pub contrast: Contrast,
    /// Hair arcs drawn per image.
    pub hair_density: usize,
    /// Amplitude of the Fourier boundary perturbation; 0 gives an ellipse.
    pub boundary_roughness: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            count: 16,
            image_side: 64,
            contrast: Contrast::Medium,
            hair_density: 2,
            boundary_roughness: 0.3,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.count == 0 {
            return Err(DataError::InvalidSpec("count must be >= 1".into()));
        }
        if self.image_side == 0 || !self.image_side.is_multiple_of(16) {
            return Err(DataError::InvalidSpec(format!(
                "image side {} is not a positive multiple of 16",
                self.image_side
            )));
        }
        if !(self.boundary_roughness >= 0.0 && self.boundary_roughness.is_finite()) {
            return Err(DataError::InvalidSpec("boundary roughness must be finite and >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: ImageTensor,
    pub mask: BinaryMask,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Harmonic {
    pub order: usize,
    pub amplitude: f64,
    pub phase: f64,
}

/// Lesion outline in continuous pixel coordinates (pixel `(r, c)` has its
/// centre at `(r + 0.5, c + 0.5)`).
#[derive(Debug, Clone, PartialEq)]
pub struct LesionGeometry {
    pub center_row: f64,
    pub center_col: f64,
    /// Semi-axis along `angle`.
    pub semi_axis_u: f64,
    /// Semi-axis perpendicular to `angle`.
    pub semi_axis_v: f64,
    /// Rotation from the column axis towards the row axis, radians.
    pub angle: f64,
    pub roughness: f64,
    pub harmonics: Vec<Harmonic>,
}

impl LesionGeometry {
    fn draw(side: usize, roughness: f64, rng: &mut ChaCha8Rng) -> Self {
        let s = side as f64;
        let mean_radius = s * rng.random_range(0.15..0.30);
        let aspect: f64 = rng.random_range(0.65..1.0);
        let harmonics = HARMONICS
            .map(|order| Harmonic {
                order,
                amplitude: 0.5 * rng.random::<f64>() / order as f64,
                phase: rng.random_range(0.0..2.0 * PI),
            })
            .collect();
        Self {
            center_row: s * (0.5 + rng.random_range(-0.12..0.12)),
            center_col: s * (0.5 + rng.random_range(-0.12..0.12)),
            semi_axis_u: mean_radius / aspect.sqrt(),
            semi_axis_v: mean_radius * aspect.sqrt(),
            angle: rng.random_range(0.0..PI),
            roughness,
            harmonics,
        }
    }

    /// Radial scale of the outline at polar angle `phi` (ellipse-normalized).
    pub fn radius_factor(&self, phi: f64) -> f64 {
        let wobble: f64 = self
            .harmonics
            .iter()
            .map(|h| h.amplitude * (h.order as f64 * phi + h.phase).cos())
            .sum();
        (1.0 + self.roughness * wobble).max(0.1)
    }

    pub fn contains(&self, y: f64, x: f64) -> bool {
        let (dy, dx) = (y - self.center_row, x - self.center_col);
        let (sin, cos) = self.angle.sin_cos();
        let u = (dx * cos + dy * sin) / self.semi_axis_u;
        let v = (-dx * sin + dy * cos) / self.semi_axis_v;
        let f = if self.roughness == 0.0 {
            1.0
        } else {
            self.radius_factor(v.atan2(u))
        };
        u * u + v * v <= f * f
    }

    pub fn rasterize(&self, side: usize) -> BinaryMask {
        BinaryMask::from_fn(side, side, |r, c| self.contains(r as f64 + 0.5, c as f64 + 0.5))
    }
}

fn stream(spec: &SyntheticSpec, index: usize, which: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64 * 3 + which);
    rng
}

/// The accepted lesion outline of sample `index`, after rejection sampling
/// on coverage and boundary length.
pub fn sample_geometry(spec: &SyntheticSpec, index: usize) -> Result<(LesionGeometry, BinaryMask), DataError> {
    spec.validate()?;
    let mut rng = stream(spec, index, 0);
    for _ in 0..MAX_RETRIES {
        let geo = LesionGeometry::draw(spec.image_side, spec.boundary_roughness, &mut rng);
        let mask = geo.rasterize(spec.image_side);
        let cov = mask.coverage();
        if !(MIN_COVERAGE..=MAX_COVERAGE).contains(&cov) {
            continue;
        }
        let boundary: usize = trace_boundary(&mask).iter().map(|c| c.len()).sum();
        if boundary >= 4 {
            return Ok((geo, mask));
        }
    }
    Err(DataError::Generation {
        index,
        retries: MAX_RETRIES,
    })
}

fn quantize(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

/// Skin, lesion tone and noise; no hair.
pub fn render_without_hair(spec: &SyntheticSpec, index: usize, mask: &BinaryMask) -> ImageTensor {
    let mut rng = stream(spec, index, 1);
    let skin = [
        0.80 + rng.random_range(-0.06..0.06),
        0.62 + rng.random_range(-0.06..0.06),
        0.52 + rng.random_range(-0.06..0.06),
    ];
    let depth = spec.contrast.gap() * rng.random_range(0.9..1.1);
    let tint = [1.0, 1.15, 1.05];
    let lesion: Vec<f64> = skin.iter().zip(tint).map(|(s, t)| s - depth * t).collect();
    let noise = Normal::new(0.0, NOISE_STD).expect("finite std");

    let side = spec.image_side;
    let mut data = Vec::with_capacity(side * side * 3);
    for r in 0..side {
        for c in 0..side {
            let base = if mask.get(r, c) { &lesion[..] } else { &skin[..] };
            for &b in base {
                data.push(quantize(b + noise.sample(&mut rng)));
            }
        }
    }
    ImageTensor {
        height: side,
        width: side,
        data,
    }
}

/// Dark one-pixel arcs drawn over both skin and lesion.
pub fn draw_hair(spec: &SyntheticSpec, index: usize, image: &mut ImageTensor) {
    let mut rng = stream(spec, index, 2);
    let s = spec.image_side as f64;
    for _ in 0..spec.hair_density {
        let cy = s * rng.random_range(-0.5..1.5);
        let cx = s * rng.random_range(-0.5..1.5);
        let radius = s * rng.random_range(0.4..1.2);
        let start = rng.random_range(0.0..2.0 * PI);
        let span = rng.random_range(0.4..1.0);
        let shade = rng.random_range(0.0..0.05);
        let color = [0.12 + shade, 0.09 + shade, 0.07 + shade].map(quantize);
        let steps = (radius * span / 0.35).ceil() as usize;
        for i in 0..=steps {
            let t = start + span * i as f64 / steps as f64;
            let y = (cy + radius * t.sin()).floor();
            let x = (cx + radius * t.cos()).floor();
            if y < 0.0 || x < 0.0 || y >= s || x >= s {
                continue;
            }
            let at = (y as usize * image.width + x as usize) * 3;
            image.data[at..at + 3].copy_from_slice(&color);
        }
    }
}

pub fn sample_id(index: usize) -> String {
    format!("sample_{index:05}")
}

/// Sample `index` of `spec`; a pure function of `(spec, index)`.
pub fn generate_sample(spec: &SyntheticSpec, index: usize) -> Result<Sample, DataError> {
    if index >= spec.count {
        return Err(DataError::InvalidSpec(format!("index {index} >= count {}", spec.count)));
    }
    let (_, mask) = sample_geometry(spec, index)?;
    let mut image = render_without_hair(spec, index, &mask);
    draw_hair(spec, index, &mut image);
    Ok(Sample {
        id: sample_id(index),
        image,
        mask,
    })
}

/// All samples of `spec`, generated in parallel.
pub fn generate_samples(spec: &SyntheticSpec) -> Result<Vec<Sample>, DataError> {
    use rayon::prelude::*;
    spec.validate()?;
    (0..spec.count).into_par_iter().map(|i| generate_sample(spec, i)).collect()
}
