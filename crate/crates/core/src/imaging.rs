//! Grayscale rasters, summed-area tables, bounding boxes and the two overlap
//! criteria used by every detector and by the evaluation harness.
//!
//! Coordinate convention: origin at the top-left, boxes and windows are
//! inclusive-exclusive (`x_min <= x < x_max`), so `area = (x_max - x_min) *
//! (y_max - y_min)` with no off-by-one corrections anywhere downstream.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// 8-bit grayscale raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl Image {
    pub fn new(width: u32, height: u32) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        Image {
            width,
            height,
            data: vec![0; (width * height) as usize],
        }
    }

    pub fn from_vec(width: u32, height: u32, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidImage("zero dimension".into()));
        }
        if data.len() != (width as usize) * (height as usize) {
            return Err(Error::InvalidImage(format!(
                "data length {} does not match {}x{}",
                data.len(),
                width,
                height
            )));
        }
        Ok(Image {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> u8) -> Self {
        let mut img = Image::new(width, height);
        for y in 0..height {
            for x in 0..width {
                img.set(x, y, f(x, y));
            }
        }
        img
    }

    #[inline]
    pub fn width(&self) -> u32 {
        self.width
    }

    #[inline]
    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> u8 {
        debug_assert!(x < self.width && y < self.height);
        self.data[(y * self.width + x) as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: u8) {
        debug_assert!(x < self.width && y < self.height);
        self.data[(y * self.width + x) as usize] = v;
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.data
    }

    pub fn mean(&self) -> f64 {
        let sum: u64 = self.data.iter().map(|&v| v as u64).sum();
        sum as f64 / self.data.len() as f64
    }

    /// Floating-point view with intensities scaled to [0, 1].
    pub fn to_float(&self) -> ImageF {
        ImageF {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| v as f32 / 255.0).collect(),
        }
    }

    /// Crop, clamped to image bounds.
    pub fn crop(&self, window: &Window) -> Image {
        let w = window.clip(self.width, self.height).expect("empty crop");
        Image::from_fn(w.width(), w.height(), |x, y| {
            self.get(w.x0() + x, w.y0() + y)
        })
    }
}

/// f32 raster used by the filtering and feature pipelines. Values are
/// nominally in [0, 1] but intermediate results (e.g. difference images)
/// may leave that range.
#[derive(Debug, Clone)]
pub struct ImageF {
    width: u32,
    height: u32,
    data: Vec<f32>,
}

impl ImageF {
    pub fn new(width: u32, height: u32) -> Self {
        ImageF {
            width,
            height,
            data: vec![0.0; (width * height) as usize],
        }
    }

    #[inline]
    pub fn width(&self) -> u32 {
        self.width
    }

    #[inline]
    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> f32 {
        debug_assert!(x < self.width && y < self.height);
        self.data[(y * self.width + x) as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: f32) {
        debug_assert!(x < self.width && y < self.height);
        self.data[(y * self.width + x) as usize] = v;
    }

    /// Read with coordinates reflected at the border.
    #[inline]
    pub fn get_reflect(&self, x: i64, y: i64) -> f32 {
        let x = reflect_index(x, self.width as i64);
        let y = reflect_index(y, self.height as i64);
        self.data[(y * self.width as i64 + x) as usize]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    /// Bilinear sample with border clamp.
    pub fn sample_bilinear(&self, x: f32, y: f32) -> f32 {
        let maxx = (self.width - 1) as f32;
        let maxy = (self.height - 1) as f32;
        let x = x.clamp(0.0, maxx);
        let y = y.clamp(0.0, maxy);
        let x0 = x.floor() as u32;
        let y0 = y.floor() as u32;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f32;
        let fy = y - y0 as f32;
        let p00 = self.get(x0, y0);
        let p10 = self.get(x1, y0);
        let p01 = self.get(x0, y1);
        let p11 = self.get(x1, y1);
        (1.0 - fx) * (1.0 - fy) * p00 + fx * (1.0 - fy) * p10 + (1.0 - fx) * fy * p01 + fx * fy * p11
    }

    pub fn to_u8(&self) -> Image {
        Image {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
                .collect(),
        }
    }
}

#[inline]
fn reflect_index(i: i64, n: i64) -> i64 {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let mut i = i.rem_euclid(period);
    if i >= n {
        i = period - i;
    }
    i
}

/// Summed-area table. `S(x, y)` is the exact sum of all pixels strictly
/// above and to the left of `(x, y)`, so the table is one larger than its
/// source in each dimension and the first row and column are zero.
#[derive(Debug, Clone)]
pub struct IntegralImage {
    /// width of the source image + 1
    cols: u32,
    /// height of the source image + 1
    rows: u32,
    data: Vec<u64>,
}

/// Builds the summed-area table of `img` with 64-bit accumulators.
pub fn integral_build(img: &Image) -> IntegralImage {
    IntegralImage::build_with(img, |v| v as u64)
}

/// Summed-area table of squared intensities, used for window variance.
pub fn integral_build_squared(img: &Image) -> IntegralImage {
    IntegralImage::build_with(img, |v| (v as u64) * (v as u64))
}

impl IntegralImage {
    fn build_with(img: &Image, f: impl Fn(u8) -> u64) -> IntegralImage {
        let cols = img.width() + 1;
        let rows = img.height() + 1;
        let mut data = vec![0u64; (cols * rows) as usize];
        for y in 1..rows {
            let mut row_sum = 0u64;
            for x in 1..cols {
                row_sum += f(img.get(x - 1, y - 1));
                data[(y * cols + x) as usize] = data[((y - 1) * cols + x) as usize] + row_sum;
            }
        }
        IntegralImage { cols, rows, data }
    }

    /// Build directly from per-pixel u32 counts (used for visual-word rasters).
    pub fn from_counts(width: u32, height: u32, counts: &[u32]) -> IntegralImage {
        assert_eq!(counts.len(), (width * height) as usize);
        let cols = width + 1;
        let rows = height + 1;
        let mut data = vec![0u64; (cols * rows) as usize];
        for y in 1..rows {
            let mut row_sum = 0u64;
            for x in 1..cols {
                row_sum += counts[((y - 1) * width + (x - 1)) as usize] as u64;
                data[(y * cols + x) as usize] = data[((y - 1) * cols + x) as usize] + row_sum;
            }
        }
        IntegralImage { cols, rows, data }
    }

    /// Source image width.
    #[inline]
    pub fn width(&self) -> u32 {
        self.cols - 1
    }

    /// Source image height.
    #[inline]
    pub fn height(&self) -> u32 {
        self.rows - 1
    }

    /// `S(x, y)`: sum over `[0, x) x [0, y)`.
    #[inline]
    pub fn at(&self, x: u32, y: u32) -> u64 {
        debug_assert!(x < self.cols && y < self.rows);
        self.data[(y * self.cols + x) as usize]
    }
}

/// Exact sum of the pixels inside `window`, from four table lookups.
pub fn rect_sum(ii: &IntegralImage, window: &Window) -> Result<u64> {
    if window.x1() > ii.width() || window.y1() > ii.height() {
        return Err(Error::OutOfBounds {
            x0: window.x0(),
            y0: window.y0(),
            x1: window.x1(),
            y1: window.y1(),
            width: ii.width(),
            height: ii.height(),
        });
    }
    let (tl, tr, bl, br) = window.corners();
    Ok(ii.at(br.0, br.1) + ii.at(tl.0, tl.1) - ii.at(tr.0, tr.1) - ii.at(bl.0, bl.1))
}

/// Axis-aligned box with inclusive-exclusive bounds. Coordinates are signed
/// so that projected detections may extend past the frame; clip before any
/// pixel access.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct BoundingBox {
    pub x_min: i32,
    pub y_min: i32,
    pub x_max: i32,
    pub y_max: i32,
}

impl BoundingBox {
    pub fn new(x_min: i32, y_min: i32, x_max: i32, y_max: i32) -> Result<Self> {
        if x_min >= x_max || y_min >= y_max {
            return Err(Error::Degenerate(format!(
                "empty box ({x_min},{y_min},{x_max},{y_max})"
            )));
        }
        Ok(BoundingBox {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    pub fn area(&self) -> i64 {
        (self.x_max - self.x_min) as i64 * (self.y_max - self.y_min) as i64
    }

    pub fn intersection_area(&self, other: &BoundingBox) -> i64 {
        let w = (self.x_max.min(other.x_max) - self.x_min.max(other.x_min)).max(0) as i64;
        let h = (self.y_max.min(other.y_max) - self.y_min.max(other.y_min)).max(0) as i64;
        w * h
    }

    pub fn center(&self) -> (f64, f64) {
        (
            (self.x_min + self.x_max) as f64 / 2.0,
            (self.y_min + self.y_max) as f64 / 2.0,
        )
    }

    /// Clip to a `width x height` frame; `None` when nothing remains.
    pub fn clip(&self, width: u32, height: u32) -> Option<BoundingBox> {
        let x_min = self.x_min.max(0);
        let y_min = self.y_min.max(0);
        let x_max = self.x_max.min(width as i32);
        let y_max = self.y_max.min(height as i32);
        BoundingBox::new(x_min, y_min, x_max, y_max).ok()
    }
}

/// Overlap between a ground-truth and a detected box.
///
/// `occluded = false` is the intersection-over-union criterion;
/// `occluded = true` normalizes by the ground-truth area alone, so a
/// detection that covers the whole (partially visible) object is not
/// penalized for its excess.
pub fn overlap_ratio(gt: &BoundingBox, det: &BoundingBox, occluded: bool) -> f64 {
    let inter = gt.intersection_area(det);
    if inter == 0 {
        return 0.0;
    }
    let denom = if occluded {
        gt.area()
    } else {
        gt.area() + det.area() - inter
    };
    inter as f64 / denom as f64
}

/// Non-empty in-frame rectangle, inclusive-exclusive, with the four corner
/// coordinates used by summed-area lookups.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    x0: u32,
    y0: u32,
    x1: u32,
    y1: u32,
}

impl Window {
    pub fn new(x0: u32, y0: u32, x1: u32, y1: u32) -> Result<Self> {
        if x0 >= x1 || y0 >= y1 {
            return Err(Error::Degenerate(format!(
                "empty window ({x0},{y0},{x1},{y1})"
            )));
        }
        Ok(Window { x0, y0, x1, y1 })
    }

    #[inline]
    pub fn x0(&self) -> u32 {
        self.x0
    }
    #[inline]
    pub fn y0(&self) -> u32 {
        self.y0
    }
    #[inline]
    pub fn x1(&self) -> u32 {
        self.x1
    }
    #[inline]
    pub fn y1(&self) -> u32 {
        self.y1
    }

    #[inline]
    pub fn width(&self) -> u32 {
        self.x1 - self.x0
    }

    #[inline]
    pub fn height(&self) -> u32 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> u64 {
        self.width() as u64 * self.height() as u64
    }

    /// Corner coordinates (top-left, top-right, bottom-left, bottom-right)
    /// in summed-area table space.
    pub fn corners(&self) -> ((u32, u32), (u32, u32), (u32, u32), (u32, u32)) {
        (
            (self.x0, self.y0),
            (self.x1, self.y0),
            (self.x0, self.y1),
            (self.x1, self.y1),
        )
    }

    pub fn to_bbox(&self) -> BoundingBox {
        BoundingBox {
            x_min: self.x0 as i32,
            y_min: self.y0 as i32,
            x_max: self.x1 as i32,
            y_max: self.y1 as i32,
        }
    }

    pub fn clip(&self, width: u32, height: u32) -> Option<Window> {
        let x1 = self.x1.min(width);
        let y1 = self.y1.min(height);
        if self.x0 >= x1 || self.y0 >= y1 {
            return None;
        }
        Some(Window {
            x0: self.x0,
            y0: self.y0,
            x1,
            y1,
        })
    }

    pub fn from_bbox(b: &BoundingBox, width: u32, height: u32) -> Option<Window> {
        let c = b.clip(width, height)?;
        Some(Window {
            x0: c.x_min as u32,
            y0: c.y_min as u32,
            x1: c.x_max as u32,
            y1: c.y_max as u32,
        })
    }
}

// ---------------------------------------------------------------------------
// Filtering and geometric helpers shared by the feature and scene pipelines.
// ---------------------------------------------------------------------------

/// Separable Gaussian blur with reflected borders. `sigma <= 0` returns a copy.
pub fn gaussian_blur(img: &ImageF, sigma: f32) -> ImageF {
    if sigma <= 0.0 {
        return img.clone();
    }
    let radius = (sigma * 4.0).ceil().max(1.0) as i64;
    let mut kernel = Vec::with_capacity((2 * radius + 1) as usize);
    let denom = 2.0 * sigma * sigma;
    for i in -radius..=radius {
        kernel.push((-(i * i) as f32 / denom).exp());
    }
    let sum: f32 = kernel.iter().sum();
    for k in &mut kernel {
        *k /= sum;
    }

    let w = img.width();
    let h = img.height();
    let mut tmp = ImageF::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (ki, k) in kernel.iter().enumerate() {
                let sx = x as i64 + ki as i64 - radius;
                acc += k * img.get_reflect(sx, y as i64);
            }
            tmp.set(x, y, acc);
        }
    }
    let mut out = ImageF::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (ki, k) in kernel.iter().enumerate() {
                let sy = y as i64 + ki as i64 - radius;
                acc += k * tmp.get_reflect(x as i64, sy);
            }
            out.set(x, y, acc);
        }
    }
    out
}

/// Bilinear resize.
pub fn resize_bilinear(img: &ImageF, width: u32, height: u32) -> ImageF {
    assert!(width > 0 && height > 0);
    let mut out = ImageF::new(width, height);
    let sx = img.width() as f32 / width as f32;
    let sy = img.height() as f32 / height as f32;
    for y in 0..height {
        for x in 0..width {
            // Align pixel centers.
            let src_x = (x as f32 + 0.5) * sx - 0.5;
            let src_y = (y as f32 + 0.5) * sy - 0.5;
            out.set(x, y, img.sample_bilinear(src_x, src_y));
        }
    }
    out
}

/// Lossless quarter-turn, clockwise. A source pixel (x, y) lands at
/// (h - 1 - y, x) in the rotated image.
pub fn rotate90_cw(img: &Image) -> Image {
    let w = img.width();
    let h = img.height();
    Image::from_fn(h, w, |x, y| img.get(y, h - 1 - x))
}

// ---------------------------------------------------------------------------
// Image file I/O. Binary PGM (P5) is the native format; PNG is accepted
// through the same entry points.
// ---------------------------------------------------------------------------

/// Reads a binary PGM (P5) with maxval <= 255, bit-exact.
pub fn read_pgm<R: Read>(reader: R) -> Result<Image> {
    let mut r = BufReader::new(reader);
    let magic = read_pgm_token(&mut r)?;
    if magic != "P5" {
        return Err(Error::InvalidImage(format!(
            "expected P5 magic, got {magic:?}"
        )));
    }
    let width: u32 = parse_pgm_number(&read_pgm_token(&mut r)?)?;
    let height: u32 = parse_pgm_number(&read_pgm_token(&mut r)?)?;
    let maxval: u32 = parse_pgm_number(&read_pgm_token(&mut r)?)?;
    if width == 0 || height == 0 {
        return Err(Error::InvalidImage("zero dimension".into()));
    }
    if maxval == 0 || maxval > 255 {
        return Err(Error::InvalidImage(format!(
            "unsupported maxval {maxval}, only 8-bit supported"
        )));
    }
    let mut data = vec![0u8; (width as usize) * (height as usize)];
    r.read_exact(&mut data)
        .map_err(|e| Error::InvalidImage(format!("truncated pixel data: {e}")))?;
    Image::from_vec(width, height, data)
}

/// One whitespace-delimited header token, skipping `#` comments. The single
/// whitespace byte after the maxval token is consumed by the caller's final
/// token read, as required for bit-exact raster recovery.
fn read_pgm_token<R: BufRead>(r: &mut R) -> Result<String> {
    let mut tok = String::new();
    let mut byte = [0u8; 1];
    loop {
        if r.read(&mut byte)? == 0 {
            return Err(Error::InvalidImage("unexpected EOF in header".into()));
        }
        let c = byte[0];
        if c == b'#' {
            // comment to end of line
            loop {
                if r.read(&mut byte)? == 0 || byte[0] == b'\n' {
                    break;
                }
            }
            continue;
        }
        if c.is_ascii_whitespace() {
            if tok.is_empty() {
                continue;
            }
            return Ok(tok);
        }
        tok.push(c as char);
    }
}

fn parse_pgm_number(tok: &str) -> Result<u32> {
    tok.parse::<u32>()
        .map_err(|_| Error::InvalidImage(format!("bad header number {tok:?}")))
}

/// Writes a binary PGM (P5). `read_pgm(write_pgm(img)) == img`, byte for byte.
pub fn write_pgm<W: Write>(img: &Image, mut w: W) -> Result<()> {
    let mut header = String::new();
    let _ = write!(header, "P5\n{} {}\n255\n", img.width(), img.height());
    w.write_all(header.as_bytes())?;
    w.write_all(img.as_bytes())?;
    Ok(())
}

pub fn save_pgm(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let f = std::fs::File::create(path)?;
    write_pgm(img, std::io::BufWriter::new(f))
}

/// Loads a grayscale image. `.pgm` uses the native P5 reader; anything else
/// is decoded with the `image` crate and reduced to luminance with the
/// Rec. 601 weights.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let is_pgm = path
        .extension()
        .map(|e| e.eq_ignore_ascii_case("pgm"))
        .unwrap_or(false);
    if is_pgm {
        return read_pgm(std::fs::File::open(path)?);
    }
    let decoded = image::open(path)
        .map_err(|e| Error::InvalidImage(format!("{}: {e}", path.display())))?;
    let rgb = decoded.to_rgb8();
    let (w, h) = rgb.dimensions();
    let mut img = Image::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let p = rgb.get_pixel(x, y);
            // Rec. 601 luminance.
            let luma = 0.299 * p[0] as f32 + 0.587 * p[1] as f32 + 0.114 * p[2] as f32;
            img.set(x, y, luma.round().clamp(0.0, 255.0) as u8);
        }
    }
    Ok(img)
}
