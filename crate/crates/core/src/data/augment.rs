//! Training-time augmentation: horizontal and vertical flips and an isotropic
//! rescale about the image centre (0.9 to 1.1), keeping the image size.

use rand::Rng;

use crate::keypatch::BinaryMask;
use crate::model::ImageTensor;

use super::Sample;

pub const SCALE_RANGE: (f64, f64) = (0.9, 1.1);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Augmentation {
    pub flip_horizontal: bool,
    pub flip_vertical: bool,
    pub scale: f64,
}

impl Augmentation {
    pub const IDENTITY: Self = Self {
        flip_horizontal: false,
        flip_vertical: false,
        scale: 1.0,
    };

    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self {
            flip_horizontal: rng.random_bool(0.5),
            flip_vertical: rng.random_bool(0.5),
            scale: rng.random_range(SCALE_RANGE.0..=SCALE_RANGE.1),
        }
    }

    /// Continuous source coordinate of output index `i` along an axis.
    fn source(&self, i: usize, n: usize, flip: bool) -> f64 {
        let i = if flip { n - 1 - i } else { i };
        let half = n as f64 / 2.0;
        (i as f64 + 0.5 - half) / self.scale + half - 0.5
    }

    pub fn apply(&self, sample: &Sample) -> Sample {
        let (h, w) = (sample.image.height, sample.image.width);
        let mut data = Vec::with_capacity(h * w * 3);
        let mut mask = BinaryMask::zeros(h, w);
        for r in 0..h {
            let sy = self.source(r, h, self.flip_vertical);
            for c in 0..w {
                let sx = self.source(c, w, self.flip_horizontal);
                for ch in 0..3 {
                    data.push(bilinear(&sample.image, sy, sx, ch));
                }
                let (my, mx) = (sy.round(), sx.round());
                let inside = my >= 0.0 && mx >= 0.0 && my < h as f64 && mx < w as f64;
                mask.set(r, c, inside && sample.mask.get(my as usize, mx as usize));
            }
        }
        Sample {
            id: sample.id.clone(),
            image: ImageTensor { height: h, width: w, data },
            mask,
        }
    }
}

/// Edge-clamped bilinear lookup.
fn bilinear(img: &ImageTensor, y: f64, x: f64, ch: usize) -> f64 {
    let y = y.clamp(0.0, (img.height - 1) as f64);
    let x = x.clamp(0.0, (img.width - 1) as f64);
    let (y0, x0) = (y.floor() as usize, x.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(img.height - 1), (x0 + 1).min(img.width - 1));
    let (fy, fx) = (y - y0 as f64, x - x0 as f64);
    let top = img.get(y0, x0, ch) * (1.0 - fx) + img.get(y0, x1, ch) * fx;
    let bottom = img.get(y1, x0, ch) * (1.0 - fx) + img.get(y1, x1, ch) * fx;
    top * (1.0 - fy) + bottom * fy
}
