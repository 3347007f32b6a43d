//! Difference-of-Gaussians keypoint detection and 128-dimensional
//! gradient-orientation descriptors. This is the feature substrate for the
//! recognition pipeline and the visual vocabulary.
//!
//! The detector interface is pluggable by construction (everything downstream
//! consumes plain `Keypoint`/`Descriptor` lists); only the DoG detector is
//! implemented here.

mod descriptor;
mod detect;
mod pyramid;

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::imaging::Image;

pub use pyramid::ScaleSpace;

/// Dimension of the descriptor vector: 4x4 spatial grid x 8 orientation bins.
pub const DESCRIPTOR_DIM: usize = 128;

/// Descriptor payload.
pub type DescriptorVector = [f32; DESCRIPTOR_DIM];

/// Smallest image side the detector accepts.
pub const MIN_IMAGE_SIDE: u32 = 32;

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ScaleSpaceConfig {
    /// Upper bound on pyramid octaves; the pyramid also stops when the
    /// image becomes too small.
    pub octaves: usize,
    pub scales_per_octave: usize,
    pub initial_sigma: f32,
    /// Minimum absolute extremum response, on [0, 1] intensities.
    pub contrast_threshold: f32,
    /// Maximum principal-curvature ratio before a response is discarded
    /// as an edge.
    pub edge_ratio_threshold: f32,
    /// Double the base image before the first octave. On by default: the
    /// small objects in robot imagery benefit from the extra features.
    pub upsample: bool,
}

impl Default for ScaleSpaceConfig {
    fn default() -> Self {
        ScaleSpaceConfig {
            octaves: 5,
            scales_per_octave: 3,
            initial_sigma: 1.6,
            contrast_threshold: 0.03,
            edge_ratio_threshold: 10.0,
            upsample: true,
        }
    }
}

impl ScaleSpaceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.octaves < 1 || self.scales_per_octave < 2 {
            return Err(Error::Config(
                "need octaves >= 1 and scales_per_octave >= 2".into(),
            ));
        }
        if self.initial_sigma <= 0.0
            || self.contrast_threshold <= 0.0
            || self.edge_ratio_threshold <= 0.0
        {
            return Err(Error::Config("scale-space thresholds must be positive".into()));
        }
        Ok(())
    }
}

/// Scale- and orientation-covariant interest point, in original image
/// coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint {
    pub x: f32,
    pub y: f32,
    /// Blur units in the original image.
    pub scale: f32,
    /// Radians in [0, 2pi).
    pub orientation: f32,
}

#[derive(Debug, Clone)]
pub struct Descriptor {
    pub values: DescriptorVector,
    /// Support window extended past the image border (sampled with
    /// reflection).
    pub border: bool,
    /// Pre-normalization gradient energy was negligible; the payload is a
    /// uniform unit vector.
    pub low_contrast: bool,
}

impl Descriptor {
    pub fn distance(&self, other: &Descriptor) -> f32 {
        distance(&self.values, &other.values)
    }
}

pub fn distance(a: &DescriptorVector, b: &DescriptorVector) -> f32 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f32>()
        .sqrt()
}

/// Detects DoG extrema surviving the contrast and edge-ratio tests, with
/// sub-pixel interpolation and dominant-orientation assignment (several
/// orientations may be emitted for one location).
///
/// Images smaller than [`MIN_IMAGE_SIDE`] yield an empty list.
pub fn detect_keypoints(img: &Image, cfg: &ScaleSpaceConfig) -> Vec<Keypoint> {
    if img.width() < MIN_IMAGE_SIDE || img.height() < MIN_IMAGE_SIDE {
        return Vec::new();
    }
    let ss = ScaleSpace::build(img, cfg);
    detect::scan_extrema(&ss)
}

/// One descriptor per keypoint, computed in the keypoint's scale- and
/// orientation-normalized frame. Values are clamped at 0.2 of the unit norm
/// and renormalized.
pub fn compute_descriptors(
    img: &Image,
    keypoints: &[Keypoint],
    cfg: &ScaleSpaceConfig,
) -> Vec<Descriptor> {
    let ss = ScaleSpace::build(img, cfg);
    keypoints
        .iter()
        .map(|kp| descriptor::describe(&ss, kp))
        .collect()
}

/// Detection and description over a single shared pyramid.
pub fn extract(img: &Image, cfg: &ScaleSpaceConfig) -> (Vec<Keypoint>, Vec<Descriptor>) {
    if img.width() < MIN_IMAGE_SIDE || img.height() < MIN_IMAGE_SIDE {
        return (Vec::new(), Vec::new());
    }
    let ss = ScaleSpace::build(img, cfg);
    let kps = detect::scan_extrema(&ss);
    let descs = kps.iter().map(|kp| descriptor::describe(&ss, kp)).collect();
    (kps, descs)
}

// ---------------------------------------------------------------------------
// Feature dump format. Binary layout, little-endian:
//   magic   8 bytes  "FEAT0001"
//   count   u32
//   record  count times: f32 x, f32 y, f32 scale, f32 orientation,
//           128 x f32 descriptor values
// The text export mirrors one record per line for debugging.
// ---------------------------------------------------------------------------

const FEATURE_MAGIC: &[u8; 8] = b"FEAT0001";

pub fn write_features<W: Write>(
    mut w: W,
    keypoints: &[Keypoint],
    descriptors: &[Descriptor],
) -> Result<()> {
    assert_eq!(keypoints.len(), descriptors.len());
    w.write_all(FEATURE_MAGIC)?;
    w.write_all(&(keypoints.len() as u32).to_le_bytes())?;
    for (kp, d) in keypoints.iter().zip(descriptors) {
        for v in [kp.x, kp.y, kp.scale, kp.orientation] {
            w.write_all(&v.to_le_bytes())?;
        }
        for v in &d.values {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_features<R: Read>(mut r: R) -> Result<(Vec<Keypoint>, Vec<Descriptor>)> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != FEATURE_MAGIC {
        return Err(Error::ModelFormat("bad feature file magic".into()));
    }
    let mut count_buf = [0u8; 4];
    r.read_exact(&mut count_buf)?;
    let count = u32::from_le_bytes(count_buf) as usize;
    let mut read_f32 = |r: &mut R| -> Result<f32> {
        let mut b = [0u8; 4];
        r.read_exact(&mut b)?;
        Ok(f32::from_le_bytes(b))
    };
    let mut kps = Vec::with_capacity(count);
    let mut descs = Vec::with_capacity(count);
    for _ in 0..count {
        let kp = Keypoint {
            x: read_f32(&mut r)?,
            y: read_f32(&mut r)?,
            scale: read_f32(&mut r)?,
            orientation: read_f32(&mut r)?,
        };
        let mut values = [0f32; DESCRIPTOR_DIM];
        for v in &mut values {
            *v = read_f32(&mut r)?;
        }
        kps.push(kp);
        descs.push(Descriptor {
            values,
            border: false,
            low_contrast: false,
        });
    }
    Ok((kps, descs))
}

pub fn write_features_text<W: Write>(
    mut w: W,
    keypoints: &[Keypoint],
    descriptors: &[Descriptor],
) -> Result<()> {
    writeln!(w, "# x y scale orientation v0..v127 ({} records)", keypoints.len())?;
    for (kp, d) in keypoints.iter().zip(descriptors) {
        write!(w, "{} {} {} {}", kp.x, kp.y, kp.scale, kp.orientation)?;
        for v in &d.values {
            write!(w, " {v}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn read_features_text<R: Read>(r: R) -> Result<(Vec<Keypoint>, Vec<Descriptor>)> {
    let reader = BufReader::new(r);
    let mut kps = Vec::new();
    let mut descs = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 + DESCRIPTOR_DIM {
            return Err(Error::Parse {
                file: "<features>".into(),
                line: idx + 1,
                msg: format!("expected {} fields, got {}", 4 + DESCRIPTOR_DIM, fields.len()),
            });
        }
        let parse = |s: &str| -> Result<f32> {
            s.parse().map_err(|_| Error::Parse {
                file: "<features>".into(),
                line: idx + 1,
                msg: format!("bad float {s:?}"),
            })
        };
        kps.push(Keypoint {
            x: parse(fields[0])?,
            y: parse(fields[1])?,
            scale: parse(fields[2])?,
            orientation: parse(fields[3])?,
        });
        let mut values = [0f32; DESCRIPTOR_DIM];
        for (i, v) in values.iter_mut().enumerate() {
            *v = parse(fields[4 + i])?;
        }
        descs.push(Descriptor {
            values,
            border: false,
            low_contrast: false,
        });
    }
    Ok((kps, descs))
}

pub fn save_features(
    path: impl AsRef<Path>,
    keypoints: &[Keypoint],
    descriptors: &[Descriptor],
) -> Result<()> {
    let f = std::fs::File::create(path)?;
    write_features(std::io::BufWriter::new(f), keypoints, descriptors)
}

pub fn load_features(path: impl AsRef<Path>) -> Result<(Vec<Keypoint>, Vec<Descriptor>)> {
    let f = std::fs::File::open(path)?;
    read_features(BufReader::new(f))
}
