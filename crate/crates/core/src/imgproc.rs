//! Grayscale images and the linear filters the similarity maps are built on.
//!
//! All filtering uses symmetric (mirror) boundary extension: sample `-1` maps
//! to `0`, sample `n` maps to `n - 1`, and so on with period `2n`.

use std::path::Path;

use image::{DynamicImage, ImageFormat, ImageReader};

use crate::error::{Error, Result};

/// Smallest side accepted by the feature pipeline.
pub const MIN_SIDE: usize = 16;

/// A dense row-major grid of reals with no range restrictions.
///
/// Used for filter responses and local moments; [`GrayImage`] wraps one with
/// the luminance invariants.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Grid {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Parameter("grid must be non-empty".into()));
        }
        if data.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {width}x{height} grid",
                data.len()
            )));
        }
        Ok(Grid {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        assert!(width > 0 && height > 0, "grid must be non-empty");
        Grid {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(width > 0 && height > 0, "grid must be non-empty");
        let mut data = Vec::with_capacity(width * height);
        for row in 0..height {
            for col in 0..width {
                data.push(f(row, col));
            }
        }
        Grid {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    /// Value at a possibly out-of-range position, resolved by mirror extension.
    #[inline]
    pub fn get_mirrored(&self, row: isize, col: isize) -> f64 {
        self.get(mirror(row, self.height), mirror(col, self.width))
    }

    pub fn same_shape(&self, other: &Grid) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Element-wise combination of two equally shaped grids.
    pub fn zip_map(&self, other: &Grid, f: impl Fn(f64, f64) -> f64) -> Result<Grid> {
        if !self.same_shape(other) {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Grid {
            width: self.width,
            height: self.height,
            data,
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Grid {
        Grid {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// Symmetric boundary extension of index `i` into `0..n`.
#[inline]
pub fn mirror(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let mut k = i.rem_euclid(period);
    if k >= n {
        k = period - 1 - k;
    }
    k as usize
}

/// Luminance image with values in `[0, 255]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    grid: Grid,
}

impl GrayImage {
    /// Builds an image, checking that every value is finite and inside `[0, 255]`.
    ///
    /// Any non-empty size is accepted here; the [`MIN_SIDE`] limit is applied
    /// where local windows need it (decoding and feature extraction).
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        let grid = Grid::new(width, height, data)?;
        Self::from_grid(grid)
    }

    pub fn from_grid(grid: Grid) -> Result<Self> {
        if let Some((i, v)) = grid
            .data
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && (0.0..=255.0).contains(*v)))
        {
            return Err(Error::Range(format!(
                "pixel {i} has value {v}, expected a finite value in [0, 255]"
            )));
        }
        Ok(GrayImage { grid })
    }

    /// Builds an image from a grid, clamping values into `[0, 255]`.
    pub fn from_grid_clamped(grid: Grid) -> Self {
        GrayImage {
            grid: grid.map(|v| v.clamp(0.0, 255.0)),
        }
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.grid.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.grid.height
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.grid.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.grid.get(row, col)
    }

    #[inline]
    pub fn as_grid(&self) -> &Grid {
        &self.grid
    }

    pub fn into_grid(self) -> Grid {
        self.grid
    }

    pub fn check_min_size(&self) -> Result<()> {
        if self.width() < MIN_SIDE || self.height() < MIN_SIDE {
            return Err(Error::TooSmall {
                width: self.width(),
                height: self.height(),
                min: MIN_SIDE,
            });
        }
        Ok(())
    }

    /// Mean absolute difference against another image of the same size.
    pub fn mean_abs_diff(&self, other: &GrayImage) -> Result<f64> {
        let d = self.grid.zip_map(&other.grid, |a, b| (a - b).abs())?;
        Ok(d.data.iter().sum::<f64>() / d.len() as f64)
    }
}

/// ITU-R BT.601 luma.
#[inline]
pub fn luminance(r: u8, g: u8, b: u8) -> f64 {
    0.299 * f64::from(r) + 0.587 * f64::from(g) + 0.114 * f64::from(b)
}

/// Decodes an 8-bit grayscale or RGB PNG/BMP file into a luminance image.
pub fn load_gray(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let format_err = |message: String| Error::Format {
        path: path.to_path_buf(),
        message,
    };
    let format = image::guess_format(&bytes).map_err(|e| format_err(e.to_string()))?;
    if !matches!(format, ImageFormat::Png | ImageFormat::Bmp) {
        return Err(format_err(format!("{format:?} is not supported, use PNG or BMP")));
    }
    let decoded = ImageReader::with_format(std::io::Cursor::new(&bytes), format)
        .decode()
        .map_err(|e| format_err(e.to_string()))?;
    let (width, height) = (decoded.width() as usize, decoded.height() as usize);
    let data: Vec<f64> = match decoded {
        DynamicImage::ImageLuma8(img) => img.pixels().map(|p| f64::from(p.0[0])).collect(),
        DynamicImage::ImageLumaA8(img) => img.pixels().map(|p| f64::from(p.0[0])).collect(),
        DynamicImage::ImageRgb8(img) => img
            .pixels()
            .map(|p| luminance(p.0[0], p.0[1], p.0[2]))
            .collect(),
        DynamicImage::ImageRgba8(img) => img
            .pixels()
            .map(|p| luminance(p.0[0], p.0[1], p.0[2]))
            .collect(),
        other => {
            return Err(format_err(format!(
                "pixel layout {:?} is not 8-bit gray or RGB",
                other.color()
            )))
        }
    };
    let img = GrayImage::new(width, height, data)?;
    img.check_min_size()?;
    Ok(img)
}

/// Writes an image as 8-bit grayscale PNG, rounding to the nearest level.
pub fn save_gray_png(img: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let pixels: Vec<u8> = img
        .data()
        .iter()
        .map(|v| v.round().clamp(0.0, 255.0) as u8)
        .collect();
    let buf = image::GrayImage::from_raw(img.width() as u32, img.height() as u32, pixels)
        .expect("buffer length matches dimensions");
    buf.save_with_format(path, ImageFormat::Png)
        .map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(path, io),
            other => Error::Format {
                path: path.to_path_buf(),
                message: other.to_string(),
            },
        })
}

/// Normalized, truncated 2-D Gaussian `h_s`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianKernel {
    scale: f64,
    radius: usize,
    taps: Vec<f64>,
    profile: Vec<f64>,
}

impl GaussianKernel {
    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn side(&self) -> usize {
        2 * self.radius + 1
    }

    /// Row-major `side x side` weights.
    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    /// Weight at offset `(dy, dx)` from the centre.
    pub fn tap(&self, dy: isize, dx: isize) -> f64 {
        let r = self.radius as isize;
        self.taps[((dy + r) as usize) * self.side() + (dx + r) as usize]
    }

    /// Normalized 1-D factor; the 2-D taps equal its outer product up to rounding.
    pub fn profile(&self) -> &[f64] {
        &self.profile
    }
}

fn check_scale(s: f64) -> Result<()> {
    if !(s.is_finite() && s > 0.0) {
        return Err(Error::Parameter(format!("scale must be finite and > 0, got {s}")));
    }
    Ok(())
}

/// Gaussian of scale `s`, truncated at `ceil(3s)` (minimum 1) and renormalized.
pub fn gaussian_kernel(s: f64) -> Result<GaussianKernel> {
    check_scale(s)?;
    let radius = ((3.0 * s).ceil() as usize).max(1);
    let side = 2 * radius + 1;
    let r = radius as isize;
    let two_s2 = 2.0 * s * s;
    let norm = 1.0 / (std::f64::consts::PI * two_s2);

    let mut taps = Vec::with_capacity(side * side);
    for dy in -r..=r {
        for dx in -r..=r {
            let d2 = (dx * dx + dy * dy) as f64;
            taps.push(norm * (-d2 / two_s2).exp());
        }
    }
    let total: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= total);

    let mut profile: Vec<f64> = (-r..=r)
        .map(|d| (-((d * d) as f64) / two_s2).exp())
        .collect();
    let total: f64 = profile.iter().sum();
    profile.iter_mut().for_each(|t| *t /= total);

    Ok(GaussianKernel {
        scale: s,
        radius,
        taps,
        profile,
    })
}

/// Separable correlation of a grid with a symmetric 1-D profile along both axes.
pub(crate) fn separable_filter(src: &Grid, profile: &[f64]) -> Grid {
    let (w, h) = (src.width, src.height);
    let radius = profile.len() / 2;
    let r = radius as isize;

    // Horizontal pass over mirror-padded rows.
    let mut tmp = vec![0.0; w * h];
    let mut padded = vec![0.0; w + 2 * radius];
    for row in 0..h {
        let line = &src.data[row * w..(row + 1) * w];
        for (i, slot) in padded.iter_mut().enumerate() {
            *slot = line[mirror(i as isize - r, w)];
        }
        let out = &mut tmp[row * w..(row + 1) * w];
        for (col, o) in out.iter_mut().enumerate() {
            let window = &padded[col..col + profile.len()];
            *o = window.iter().zip(profile).map(|(a, b)| a * b).sum();
        }
    }

    // Vertical pass, accumulating whole rows at a time.
    let mut data = vec![0.0; w * h];
    for row in 0..h {
        let out = &mut data[row * w..(row + 1) * w];
        for (k, &weight) in profile.iter().enumerate() {
            let srow = mirror(row as isize + k as isize - r, h);
            let line = &tmp[srow * w..(srow + 1) * w];
            for (o, &v) in out.iter_mut().zip(line) {
                *o += weight * v;
            }
        }
    }
    Grid {
        width: w,
        height: h,
        data,
    }
}

/// Gaussian smoothing of an arbitrary grid (no range clamping).
pub fn smooth_grid(src: &Grid, kernel: &GaussianKernel) -> Grid {
    separable_filter(src, kernel.profile())
}

/// Gaussian smoothing with mirror boundaries; output has the input's size.
pub fn smooth(img: &GrayImage, kernel: &GaussianKernel) -> GrayImage {
    // A convex combination stays in range; the clamp only absorbs rounding.
    GrayImage::from_grid_clamped(smooth_grid(img.as_grid(), kernel))
}

/// Integer pixel shift, `dm` rows and `dn` columns.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Translation {
    dm: i32,
    dn: i32,
}

impl Translation {
    pub const MAX_OFFSET: i32 = 2;

    pub fn new(dm: i32, dn: i32) -> Result<Self> {
        if dm.abs() > Self::MAX_OFFSET || dn.abs() > Self::MAX_OFFSET {
            return Err(Error::Parameter(format!(
                "translation ({dm}, {dn}) exceeds {} pixels",
                Self::MAX_OFFSET
            )));
        }
        Ok(Translation { dm, dn })
    }

    pub fn dm(&self) -> i32 {
        self.dm
    }

    pub fn dn(&self) -> i32 {
        self.dn
    }

    pub fn negated(&self) -> Self {
        Translation {
            dm: -self.dm,
            dn: -self.dn,
        }
    }
}

/// Output pixel `(x, y)` takes input pixel `(x - dm, y - dn)`, mirrored at the borders.
pub fn translate(img: &GrayImage, t: Translation) -> GrayImage {
    let g = img.as_grid();
    let (dm, dn) = (t.dm as isize, t.dn as isize);
    let grid = Grid::from_fn(g.width, g.height, |row, col| {
        g.get_mirrored(row as isize - dm, col as isize - dn)
    });
    GrayImage { grid }
}

/// Zero-mean Laplacian-of-Gaussian kernel.
#[derive(Clone, Debug, PartialEq)]
pub struct LogKernel {
    scale: f64,
    radius: usize,
    taps: Vec<f64>,
}

impl LogKernel {
    /// LOG of scale `s`, truncated at `ceil(4s)` (minimum 2), mean removed.
    pub fn new(s: f64) -> Result<Self> {
        check_scale(s)?;
        let radius = ((4.0 * s).ceil() as usize).max(2);
        let r = radius as isize;
        let s2 = s * s;
        let lead = -1.0 / (std::f64::consts::PI * s2 * s2);
        let mut taps = Vec::with_capacity((2 * radius + 1).pow(2));
        for dy in -r..=r {
            for dx in -r..=r {
                let q = (dx * dx + dy * dy) as f64 / (2.0 * s2);
                taps.push(lead * (1.0 - q) * (-q).exp());
            }
        }
        let mean = taps.iter().sum::<f64>() / taps.len() as f64;
        taps.iter_mut().for_each(|t| *t -= mean);
        Ok(LogKernel {
            scale: s,
            radius,
            taps,
        })
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn side(&self) -> usize {
        2 * self.radius + 1
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }
}

/// Correlation with a [`LogKernel`] of scale `s`.
///
/// Evaluated as `sum_k w_k * (I(p + k) - I(p))`, which equals the plain
/// correlation because the taps sum to zero, and returns exact zeros on flat
/// patches so they never produce spurious zero crossings.
pub fn log_response(img: &GrayImage, s: f64) -> Result<Grid> {
    let kernel = LogKernel::new(s)?;
    Ok(log_response_with(img.as_grid(), &kernel))
}

pub fn log_response_with(src: &Grid, kernel: &LogKernel) -> Grid {
    let (w, h) = (src.width, src.height);
    let radius = kernel.radius;
    let side = kernel.side();
    let pw = w + 2 * radius;
    let r = radius as isize;

    let mut padded = vec![0.0; pw * (h + 2 * radius)];
    for (prow, line) in padded.chunks_exact_mut(pw).enumerate() {
        let srow = mirror(prow as isize - r, h);
        for (pcol, slot) in line.iter_mut().enumerate() {
            *slot = src.data[srow * w + mirror(pcol as isize - r, w)];
        }
    }

    let mut data = vec![0.0; w * h];
    for row in 0..h {
        for col in 0..w {
            let centre = padded[(row + radius) * pw + col + radius];
            let mut acc = 0.0;
            for ky in 0..side {
                let line = &padded[(row + ky) * pw + col..(row + ky) * pw + col + side];
                let weights = &kernel.taps[ky * side..(ky + 1) * side];
                for (&v, &wt) in line.iter().zip(weights) {
                    acc += wt * (v - centre);
                }
            }
            data[row * w + col] = acc;
        }
    }
    Grid {
        width: w,
        height: h,
        data,
    }
}

/// Boolean edge mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EdgeMap {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl EdgeMap {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn is_edge(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

/// Marks a pixel when its response and that of its right or bottom neighbour
/// have strictly opposite signs.
pub fn zero_crossings(resp: &Grid) -> Result<EdgeMap> {
    let (w, h) = (resp.width, resp.height);
    if w < 2 || h < 2 {
        return Err(Error::Parameter(format!(
            "zero crossings need at least a 2x2 grid, got {w}x{h}"
        )));
    }
    let d = &resp.data;
    let mut bits = vec![false; w * h];
    for row in 0..h {
        for col in 0..w {
            let v = d[row * w + col];
            let right = col + 1 < w && v * d[row * w + col + 1] < 0.0;
            let below = row + 1 < h && v * d[(row + 1) * w + col] < 0.0;
            bits[row * w + col] = right || below;
        }
    }
    Ok(EdgeMap {
        width: w,
        height: h,
        bits,
    })
}
