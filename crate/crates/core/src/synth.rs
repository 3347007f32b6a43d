//! Seeded synthetic raster generators. These back the ground-truth scene
//! builder and the oracle tests: every pattern is a pure function of its
//! seed, so fixtures are reproducible byte for byte.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::imaging::{gaussian_blur, Image};

/// Smooth random field: a coarse random lattice, bilinearly interpolated.
/// Good low-texture clutter for backgrounds.
pub fn value_noise(width: u32, height: u32, cell: u32, lo: u8, hi: u8, seed: u64) -> Image {
    assert!(cell >= 1 && hi >= lo);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gw = width / cell + 2;
    let gh = height / cell + 2;
    let lattice: Vec<f32> = (0..gw * gh)
        .map(|_| rng.gen_range(lo as f32..=hi as f32))
        .collect();
    Image::from_fn(width, height, |x, y| {
        let fx = x as f32 / cell as f32;
        let fy = y as f32 / cell as f32;
        let x0 = fx.floor() as u32;
        let y0 = fy.floor() as u32;
        let tx = fx - x0 as f32;
        let ty = fy - y0 as f32;
        let at = |gx: u32, gy: u32| lattice[(gy * gw + gx) as usize];
        let v = (1.0 - tx) * (1.0 - ty) * at(x0, y0)
            + tx * (1.0 - ty) * at(x0 + 1, y0)
            + (1.0 - tx) * ty * at(x0, y0 + 1)
            + tx * ty * at(x0 + 1, y0 + 1);
        v.round().clamp(0.0, 255.0) as u8
    })
}

/// Feature-rich patch: layered value noise plus high-contrast rectangles and
/// discs, lightly blurred so gradients are well defined.
pub fn textured_patch(width: u32, height: u32, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let coarse = value_noise(width, height, 11, 40, 215, rng.gen());
    let fine = value_noise(width, height, 3, 0, 70, rng.gen());
    let mut img = Image::from_fn(width, height, |x, y| {
        let v = coarse.get(x, y) as i32 + fine.get(x, y) as i32 - 35;
        v.clamp(0, 255) as u8
    });

    let shapes = 3 + (width as u64 * height as u64 / 900) as u32;
    for _ in 0..shapes {
        let bright: u8 = if rng.gen_bool(0.5) { rng.gen_range(200..=255) } else { rng.gen_range(0..=55) };
        if rng.gen_bool(0.5) {
            let w = rng.gen_range(4..=width.max(8) / 4);
            let h = rng.gen_range(4..=height.max(8) / 4);
            let x0 = rng.gen_range(0..width.saturating_sub(w).max(1));
            let y0 = rng.gen_range(0..height.saturating_sub(h).max(1));
            for y in y0..(y0 + h).min(height) {
                for x in x0..(x0 + w).min(width) {
                    img.set(x, y, bright);
                }
            }
        } else {
            let r = rng.gen_range(3..=(width.min(height) / 6).max(4)) as i64;
            let cx = rng.gen_range(0..width) as i64;
            let cy = rng.gen_range(0..height) as i64;
            for y in (cy - r).max(0)..(cy + r + 1).min(height as i64) {
                for x in (cx - r).max(0)..(cx + r + 1).min(width as i64) {
                    if (x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r {
                        img.set(x as u32, y as u32, bright);
                    }
                }
            }
        }
    }

    gaussian_blur(&img.to_float(), 0.7).to_u8()
}

/// Near-uniform patch with faint internal structure: a couple of low-contrast
/// marks over a flat tone. Segments as one large region, yet still yields a
/// handful of local features.
pub fn flat_patch(width: u32, height: u32, tone: u8, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x51ab_77f0);
    let mut img = Image::from_fn(width, height, |_, _| tone);
    let marks = 4;
    for _ in 0..marks {
        let r = rng.gen_range(2..=4i64);
        let cx = rng.gen_range(width / 4..3 * width / 4) as i64;
        let cy = rng.gen_range(height / 4..3 * height / 4) as i64;
        let delta: i32 = if rng.gen_bool(0.5) { 9 } else { -9 };
        for y in (cy - r).max(0)..(cy + r + 1).min(height as i64) {
            for x in (cx - r).max(0)..(cx + r + 1).min(width as i64) {
                if (x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r {
                    let v = (img.get(x as u32, y as u32) as i32 + delta).clamp(0, 255) as u8;
                    img.set(x as u32, y as u32, v);
                }
            }
        }
    }
    img
}

/// Adds a Gaussian intensity bump centered at `(cx, cy)`.
pub fn add_gaussian_blob(img: &mut Image, cx: f32, cy: f32, sigma: f32, amplitude: f32) {
    let r = (4.0 * sigma).ceil() as i64;
    let denom = 2.0 * sigma * sigma;
    for y in ((cy as i64) - r).max(0)..((cy as i64) + r + 1).min(img.height() as i64) {
        for x in ((cx as i64) - r).max(0)..((cx as i64) + r + 1).min(img.width() as i64) {
            let dx = x as f32 - cx;
            let dy = y as f32 - cy;
            let v = img.get(x as u32, y as u32) as f32
                + amplitude * (-(dx * dx + dy * dy) / denom).exp();
            img.set(x as u32, y as u32, v.round().clamp(0.0, 255.0) as u8);
        }
    }
}

pub fn checkerboard(width: u32, height: u32, tile: u32, dark: u8, light: u8) -> Image {
    assert!(tile >= 1);
    Image::from_fn(width, height, |x, y| {
        if ((x / tile) + (y / tile)) % 2 == 0 {
            dark
        } else {
            light
        }
    })
}

/// Left-dark / right-bright vertical step at column `at`.
pub fn vertical_step(width: u32, height: u32, at: u32, dark: u8, light: u8) -> Image {
    Image::from_fn(width, height, |x, _| if x < at { dark } else { light })
}

/// Uniform pixel noise, for null scenes and negative pools.
pub fn uniform_noise(width: u32, height: u32, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfeed_beef);
    Image::from_fn(width, height, |_, _| rng.gen())
}

/// Cluster-structured unit descriptors, the shape real gradient histograms
/// take: non-negative, concentrated around a limited set of prototypes.
pub fn clustered_descriptors(
    count: usize,
    n_clusters: usize,
    jitter: f32,
    seed: u64,
) -> Vec<crate::features::DescriptorVector> {
    use crate::features::DESCRIPTOR_DIM;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x2545_f491_4f6c_dd1d));
    let mut centers = Vec::with_capacity(n_clusters);
    for _ in 0..n_clusters {
        let mut c = [0f32; DESCRIPTOR_DIM];
        for v in &mut c {
            *v = rng.gen_range(0.0..1.0f32);
        }
        normalize(&mut c);
        centers.push(c);
    }
    (0..count)
        .map(|_| {
            let mut v = centers[rng.gen_range(0..n_clusters)];
            for x in &mut v {
                *x = (*x + rng.gen_range(-jitter..jitter)).max(0.0);
            }
            normalize(&mut v);
            v
        })
        .collect()
}

/// Query vectors for matching benchmarks: perturbed copies of database
/// entries, the way a redetected feature relates to its stored descriptor.
pub fn perturbed_queries(
    db: &[crate::features::DescriptorVector],
    count: usize,
    jitter: f32,
    seed: u64,
) -> Vec<crate::features::DescriptorVector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0dd_ba11);
    (0..count)
        .map(|_| {
            let mut v = db[rng.gen_range(0..db.len())];
            for x in &mut v {
                *x = (*x + rng.gen_range(-jitter..jitter)).max(0.0);
            }
            normalize(&mut v);
            v
        })
        .collect()
}

fn normalize(v: &mut [f32]) {
    let n = v.iter().map(|x| x * x).sum::<f32>().sqrt();
    if n > 0.0 {
        for x in v {
            *x /= n;
        }
    }
}
