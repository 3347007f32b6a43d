//! Gaussian scale space and its difference pyramid.

use crate::imaging::{gaussian_blur, resize_bilinear, Image, ImageF};

use super::ScaleSpaceConfig;

/// Blur assumed to already be present in the input image.
const ASSUMED_INPUT_BLUR: f32 = 0.5;

/// Octaves stop once the image side drops below this.
const MIN_OCTAVE_SIDE: u32 = 16;

pub struct Octave {
    /// `scales_per_octave + 3` progressively blurred images.
    pub gaussians: Vec<ImageF>,
    /// `scales_per_octave + 2` adjacent differences.
    pub dog: Vec<ImageF>,
}

/// Gaussian pyramid plus DoG, built once per image and shared by detection
/// and description. Construction is single-threaded so results are
/// bit-reproducible.
pub struct ScaleSpace {
    pub octaves: Vec<Octave>,
    pub cfg: ScaleSpaceConfig,
    /// Factor from original image coordinates to base (octave 0) coordinates.
    pub base_scale: f32,
}

impl ScaleSpace {
    pub fn build(img: &Image, cfg: &ScaleSpaceConfig) -> ScaleSpace {
        let gray = img.to_float();
        let (base, base_scale, input_blur) = if cfg.upsample {
            (
                resize_bilinear(&gray, gray.width() * 2, gray.height() * 2),
                2.0,
                ASSUMED_INPUT_BLUR * 2.0,
            )
        } else {
            (gray, 1.0, ASSUMED_INPUT_BLUR)
        };

        let delta = (cfg.initial_sigma * cfg.initial_sigma - input_blur * input_blur)
            .max(0.0)
            .sqrt();
        let mut current = gaussian_blur(&base, delta);

        let s = cfg.scales_per_octave;
        let k = 2f32.powf(1.0 / s as f32);
        // Incremental blur from level i-1 to level i.
        let increments: Vec<f32> = (1..s + 3)
            .map(|i| {
                let prev = cfg.initial_sigma * k.powi(i as i32 - 1);
                let next = prev * k;
                (next * next - prev * prev).sqrt()
            })
            .collect();

        let mut octaves = Vec::new();
        for _ in 0..cfg.octaves {
            if current.width() < MIN_OCTAVE_SIDE || current.height() < MIN_OCTAVE_SIDE {
                break;
            }
            let mut gaussians = Vec::with_capacity(s + 3);
            gaussians.push(current);
            for inc in &increments {
                let next = gaussian_blur(gaussians.last().unwrap(), *inc);
                gaussians.push(next);
            }
            let dog = (0..s + 2)
                .map(|i| subtract(&gaussians[i + 1], &gaussians[i]))
                .collect();
            // Next octave starts from the level with twice the base blur.
            current = downsample2(&gaussians[s]);
            octaves.push(Octave { gaussians, dog });
        }

        ScaleSpace {
            octaves,
            cfg: cfg.clone(),
            base_scale,
        }
    }

    /// Blur of level `level` relative to the octave base resolution.
    pub fn level_sigma(&self, level: f32) -> f32 {
        self.cfg.initial_sigma * 2f32.powf(level / self.cfg.scales_per_octave as f32)
    }

    /// Locates the pyramid cell for a keypoint given in original image
    /// coordinates: `(octave, level, x, y, sigma_in_octave)`.
    pub fn locate(&self, x: f32, y: f32, scale: f32) -> (usize, usize, f32, f32, f32) {
        let s = self.cfg.scales_per_octave as f32;
        let scale_base = (scale * self.base_scale).max(self.cfg.initial_sigma * 0.5);
        let t = (scale_base / self.cfg.initial_sigma).log2();
        // Within an octave the refined level lies in [0.5, s + 0.5).
        let octave = ((t - 0.5 / s).floor() as i64).clamp(0, self.octaves.len() as i64 - 1)
            as usize;
        let level_f = (t - octave as f32) * s;
        let level = (level_f.round() as i64).clamp(0, s as i64 + 2) as usize;
        let factor = self.base_scale / (1 << octave) as f32;
        let sigma_rel = scale_base / (1 << octave) as f32;
        (octave, level, x * factor, y * factor, sigma_rel)
    }
}

fn subtract(a: &ImageF, b: &ImageF) -> ImageF {
    let mut out = ImageF::new(a.width(), a.height());
    for y in 0..a.height() {
        for x in 0..a.width() {
            out.set(x, y, a.get(x, y) - b.get(x, y));
        }
    }
    out
}

fn downsample2(img: &ImageF) -> ImageF {
    let w = (img.width() / 2).max(1);
    let h = (img.height() / 2).max(1);
    let mut out = ImageF::new(w, h);
    for y in 0..h {
        for x in 0..w {
            out.set(x, y, img.get(x * 2, y * 2));
        }
    }
    out
}

/// Image gradient at integer coordinates from central differences, with
/// reflected borders. Returns (dx, dy).
#[inline]
pub fn gradient(img: &ImageF, x: i64, y: i64) -> (f32, f32) {
    let dx = 0.5 * (img.get_reflect(x + 1, y) - img.get_reflect(x - 1, y));
    let dy = 0.5 * (img.get_reflect(x, y + 1) - img.get_reflect(x, y - 1));
    (dx, dy)
}
