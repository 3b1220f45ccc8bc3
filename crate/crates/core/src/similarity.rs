//! Reference sets and local similarity maps.
//!
//! Every image is compared with eight references: four one-pixel
//! translations (intra-scale) followed by four Gaussian smoothings of
//! increasing scale (inter-scale). The order is fixed so feature vectors line
//! up across images and runs.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::imgproc::{
    gaussian_kernel, log_response_with, smooth, smooth_grid, translate, zero_crossings, EdgeMap,
    GaussianKernel, GrayImage, Grid, LogKernel, Translation,
};

/// Row/column offsets of the intra-scale references.
pub const TRANSLATIONS: [(i32, i32); 4] = [(0, 1), (1, 0), (1, 1), (-1, 1)];

/// Gaussian scales of the inter-scale references, ascending.
pub const SMOOTHING_SCALES: [f64; 4] = [0.5, 1.0, 2.0, 4.0];

/// Analysis scale (SSIM window / LOG filter) used for intra-scale comparisons.
pub const INTRA_SCALE: f64 = 0.5;

pub const NUM_REFERENCES: usize = 8;

/// Side of the square window used by the rNSE map.
pub const DEFAULT_RNSE_WINDOW: usize = 15;

/// Largest value of the log-MSE map: `log10(1 + 255^2) / 10`.
pub fn mse_max() -> f64 {
    (1.0 + 255.0f64 * 255.0).log10() / 10.0
}

/// Which local similarity function builds the maps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SimilarityFn {
    Ssim,
    Rnse,
    Mse,
}

impl SimilarityFn {
    pub const ALL: [SimilarityFn; 3] = [SimilarityFn::Ssim, SimilarityFn::Rnse, SimilarityFn::Mse];

    pub fn tag(&self) -> &'static str {
        match self {
            SimilarityFn::Ssim => "ssim",
            SimilarityFn::Rnse => "rnse",
            SimilarityFn::Mse => "mse",
        }
    }

    /// Range every map of this family is guaranteed to stay in.
    pub fn declared_range(&self) -> (f64, f64) {
        match self {
            SimilarityFn::Ssim | SimilarityFn::Rnse => (0.0, 1.0),
            SimilarityFn::Mse => (0.0, mse_max()),
        }
    }
}

impl fmt::Display for SimilarityFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for SimilarityFn {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ssim" => Ok(SimilarityFn::Ssim),
            "rnse" => Ok(SimilarityFn::Rnse),
            "mse" => Ok(SimilarityFn::Mse),
            other => Err(Error::Parameter(format!(
                "unknown similarity function '{other}' (expected ssim, rnse or mse)"
            ))),
        }
    }
}

/// How a reference was derived from the source image.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RefKind {
    Intra(Translation),
    Inter(f64),
}

impl RefKind {
    /// Scale of the SSIM window or LOG filter used when comparing against this reference.
    pub fn analysis_scale(&self) -> f64 {
        match self {
            RefKind::Intra(_) => INTRA_SCALE,
            RefKind::Inter(s) => *s,
        }
    }

    pub fn canonical() -> [RefKind; NUM_REFERENCES] {
        let t = |(dm, dn): (i32, i32)| {
            RefKind::Intra(Translation::new(dm, dn).expect("canonical offsets are valid"))
        };
        [
            t(TRANSLATIONS[0]),
            t(TRANSLATIONS[1]),
            t(TRANSLATIONS[2]),
            t(TRANSLATIONS[3]),
            RefKind::Inter(SMOOTHING_SCALES[0]),
            RefKind::Inter(SMOOTHING_SCALES[1]),
            RefKind::Inter(SMOOTHING_SCALES[2]),
            RefKind::Inter(SMOOTHING_SCALES[3]),
        ]
    }
}

#[derive(Clone, Debug)]
pub struct Reference {
    pub kind: RefKind,
    pub image: GrayImage,
}

/// The eight references of one image in canonical order.
#[derive(Clone, Debug)]
pub struct ReferenceSet {
    entries: Vec<Reference>,
}

impl ReferenceSet {
    pub fn entries(&self) -> &[Reference] {
        &self.entries
    }

    pub fn get(&self, i: usize) -> &Reference {
        &self.entries[i]
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

pub fn build_reference_set(img: &GrayImage) -> Result<ReferenceSet> {
    img.check_min_size()?;
    let entries = RefKind::canonical()
        .into_iter()
        .map(|kind| {
            let image = match kind {
                RefKind::Intra(t) => translate(img, t),
                RefKind::Inter(s) => smooth(img, &gaussian_kernel(s)?),
            };
            Ok(Reference { kind, image })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ReferenceSet { entries })
}

/// SSIM exponents, stabilizing constants and window scale.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SsimParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub window_scale: f64,
}

impl SsimParams {
    /// Unit exponents, `c1 = (0.01 * 255)^2`, `c2 = (0.03 * 255)^2`, `c3 = c2 / 2`.
    pub fn standard(window_scale: f64) -> Self {
        let c1 = (0.01f64 * 255.0).powi(2);
        let c2 = (0.03f64 * 255.0).powi(2);
        SsimParams {
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
            c1,
            c2,
            c3: c2 / 2.0,
            window_scale,
        }
    }

    pub fn with_window_scale(self, window_scale: f64) -> Self {
        SsimParams {
            window_scale,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.alpha, self.beta, self.gamma, self.c1, self.c2, self.c3];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Parameter(format!("invalid SSIM parameters {self:?}")));
        }
        if !(self.window_scale.is_finite() && self.window_scale > 0.0) {
            return Err(Error::Parameter(format!(
                "SSIM window scale must be > 0, got {}",
                self.window_scale
            )));
        }
        Ok(())
    }

    // With unit contrast/structure exponents and c3 = c2/2 the product C*S
    // collapses to (2 cov + c2) / (var_i + var_r + c2).
    fn collapses(&self) -> bool {
        self.beta == 1.0 && self.gamma == 1.0 && self.c3 == self.c2 / 2.0
    }
}

impl Default for SsimParams {
    fn default() -> Self {
        SsimParams::standard(INTRA_SCALE)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RnseParams {
    pub log_scale: f64,
    pub window: usize,
}

impl RnseParams {
    pub fn new(log_scale: f64, window: usize) -> Result<Self> {
        let p = RnseParams { log_scale, window };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.log_scale.is_finite() && self.log_scale > 0.0) {
            return Err(Error::Parameter(format!(
                "LOG scale must be > 0, got {}",
                self.log_scale
            )));
        }
        if self.window < 5 || self.window % 2 == 0 {
            return Err(Error::Parameter(format!(
                "rNSE window must be odd and >= 5, got {}",
                self.window
            )));
        }
        Ok(())
    }
}

/// Per-pixel similarity between an image and one reference.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalSimilarityMap {
    grid: Grid,
    function: SimilarityFn,
}

impl LocalSimilarityMap {
    pub fn new(grid: Grid, function: SimilarityFn) -> Self {
        LocalSimilarityMap { grid, function }
    }

    pub fn width(&self) -> usize {
        self.grid.width()
    }

    pub fn height(&self) -> usize {
        self.grid.height()
    }

    pub fn values(&self) -> &[f64] {
        self.grid.data()
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn function(&self) -> SimilarityFn {
        self.function
    }

    pub fn declared_range(&self) -> (f64, f64) {
        self.function.declared_range()
    }

    /// Writes the map as a binary PGM (values scaled by 255 and rounded).
    pub fn write_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let io = |e| Error::io(path, e);
        let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
        write!(out, "P5\n{} {}\n255\n", self.width(), self.height()).map_err(io)?;
        let bytes: Vec<u8> = self
            .values()
            .iter()
            .map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect();
        out.write_all(&bytes).map_err(io)?;
        out.flush().map_err(io)
    }
}

fn check_same_size(a: &GrayImage, b: &GrayImage) -> Result<()> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::DimensionMismatch(format!(
            "images are {}x{} and {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    Ok(())
}

/// Gaussian-weighted local mean and mean of squares of one image.
struct Moments {
    mean: Grid,
    sq_mean: Grid,
}

impl Moments {
    fn new(img: &Grid, window: &GaussianKernel) -> Self {
        Moments {
            mean: smooth_grid(img, window),
            sq_mean: smooth_grid(&img.map(|v| v * v), window),
        }
    }
}

/// Luminance, contrast and structure terms of SSIM, each as a full grid.
#[derive(Clone, Debug)]
pub struct SsimComponents {
    pub luminance: Grid,
    pub contrast: Grid,
    pub structure: Grid,
}

struct LocalStats {
    mu_i: f64,
    mu_r: f64,
    var_i: f64,
    var_r: f64,
    cov: f64,
}

fn for_each_stat(
    i: &GrayImage,
    r: &GrayImage,
    mi: &Moments,
    mr: &Moments,
    window: &GaussianKernel,
    mut f: impl FnMut(&LocalStats) -> f64,
) -> Grid {
    let cross = smooth_grid(
        &i.as_grid().zip_map(r.as_grid(), |a, b| a * b).expect("sizes checked"),
        window,
    );
    let n = cross.len();
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let (mu_i, mu_r) = (mi.mean.data()[k], mr.mean.data()[k]);
        let stats = LocalStats {
            mu_i,
            mu_r,
            var_i: (mi.sq_mean.data()[k] - mu_i * mu_i).max(0.0),
            var_r: (mr.sq_mean.data()[k] - mu_r * mu_r).max(0.0),
            cov: cross.data()[k] - mu_i * mu_r,
        };
        out.push(f(&stats));
    }
    Grid::new(i.width(), i.height(), out).expect("shape preserved")
}

fn luminance_term(s: &LocalStats, c1: f64) -> f64 {
    (2.0 * s.mu_i * s.mu_r + c1) / (s.mu_i * s.mu_i + s.mu_r * s.mu_r + c1)
}

fn contrast_term(s: &LocalStats, c2: f64) -> f64 {
    (2.0 * (s.var_i * s.var_r).sqrt() + c2) / (s.var_i + s.var_r + c2)
}

fn structure_term(s: &LocalStats, c3: f64) -> f64 {
    (s.cov + c3) / ((s.var_i * s.var_r).sqrt() + c3)
}

fn signed_pow(x: f64, e: f64) -> f64 {
    if e == 1.0 {
        x
    } else {
        x.signum() * x.abs().powf(e)
    }
}

fn ssim_value(s: &LocalStats, p: &SsimParams) -> f64 {
    let lum = signed_pow(luminance_term(s, p.c1), p.alpha);
    let rest = if p.collapses() {
        (2.0 * s.cov + p.c2) / (s.var_i + s.var_r + p.c2)
    } else {
        signed_pow(contrast_term(s, p.c2), p.beta) * signed_pow(structure_term(s, p.c3), p.gamma)
    };
    (lum * rest).clamp(0.0, 1.0)
}

/// The three SSIM terms before exponents and clamping.
pub fn ssim_components(i: &GrayImage, r: &GrayImage, p: &SsimParams) -> Result<SsimComponents> {
    check_same_size(i, r)?;
    p.validate()?;
    let window = gaussian_kernel(p.window_scale)?;
    let mi = Moments::new(i.as_grid(), &window);
    let mr = Moments::new(r.as_grid(), &window);
    let luminance = for_each_stat(i, r, &mi, &mr, &window, |s| luminance_term(s, p.c1));
    let contrast = for_each_stat(i, r, &mi, &mr, &window, |s| contrast_term(s, p.c2));
    let structure = for_each_stat(i, r, &mi, &mr, &window, |s| structure_term(s, p.c3));
    Ok(SsimComponents {
        luminance,
        contrast,
        structure,
    })
}

/// SSIM map `L^a * C^b * S^g` with Gaussian-window moments, clamped to `[0, 1]`.
pub fn ssim_lsm(i: &GrayImage, r: &GrayImage, p: &SsimParams) -> Result<LocalSimilarityMap> {
    check_same_size(i, r)?;
    p.validate()?;
    let window = gaussian_kernel(p.window_scale)?;
    let mi = Moments::new(i.as_grid(), &window);
    let mr = Moments::new(r.as_grid(), &window);
    Ok(ssim_with_moments(i, r, &mi, &mr, &window, p))
}

fn ssim_with_moments(
    i: &GrayImage,
    r: &GrayImage,
    mi: &Moments,
    mr: &Moments,
    window: &GaussianKernel,
    p: &SsimParams,
) -> LocalSimilarityMap {
    let grid = for_each_stat(i, r, mi, mr, window, |s| ssim_value(s, p));
    LocalSimilarityMap::new(grid, SimilarityFn::Ssim)
}

/// Edge-agreement map `2|E_I ∩ E_R| / (|E_I| + |E_R|)` over a square window
/// clipped at the borders. Windows with no edges in either image score 1.
pub fn rnse_lsm(i: &GrayImage, r: &GrayImage, p: &RnseParams) -> Result<LocalSimilarityMap> {
    check_same_size(i, r)?;
    p.validate()?;
    let kernel = LogKernel::new(p.log_scale)?;
    let ei = zero_crossings(&log_response_with(i.as_grid(), &kernel))?;
    let er = zero_crossings(&log_response_with(r.as_grid(), &kernel))?;
    Ok(rnse_from_edges(&ei, &er, p.window))
}

/// Summed-area table with a zero first row and column.
struct CountTable {
    stride: usize,
    sums: Vec<u32>,
}

impl CountTable {
    fn new(width: usize, height: usize, bit: impl Fn(usize) -> bool) -> Self {
        let stride = width + 1;
        let mut sums = vec![0u32; stride * (height + 1)];
        for row in 0..height {
            let mut run = 0u32;
            for col in 0..width {
                run += u32::from(bit(row * width + col));
                sums[(row + 1) * stride + col + 1] = sums[row * stride + col + 1] + run;
            }
        }
        CountTable { stride, sums }
    }

    /// Count over rows `r0..r1` and columns `c0..c1` (half-open).
    fn count(&self, r0: usize, r1: usize, c0: usize, c1: usize) -> u32 {
        let s = self.stride;
        self.sums[r1 * s + c1] + self.sums[r0 * s + c0] - self.sums[r0 * s + c1] - self.sums[r1 * s + c0]
    }
}

fn rnse_from_edges(ei: &EdgeMap, er: &EdgeMap, window: usize) -> LocalSimilarityMap {
    let (w, h) = (ei.width(), ei.height());
    let (bi, br) = (ei.bits(), er.bits());
    let ti = CountTable::new(w, h, |k| bi[k]);
    let tr = CountTable::new(w, h, |k| br[k]);
    let tb = CountTable::new(w, h, |k| bi[k] && br[k]);
    let half = window / 2;
    let grid = Grid::from_fn(w, h, |row, col| {
        let (r0, r1) = (row.saturating_sub(half), (row + half + 1).min(h));
        let (c0, c1) = (col.saturating_sub(half), (col + half + 1).min(w));
        let ni = ti.count(r0, r1, c0, c1);
        let nr = tr.count(r0, r1, c0, c1);
        if ni + nr == 0 {
            1.0
        } else {
            2.0 * f64::from(tb.count(r0, r1, c0, c1)) / f64::from(ni + nr)
        }
    });
    LocalSimilarityMap::new(grid, SimilarityFn::Rnse)
}

/// Per-pixel `log10(1 + (I - R)^2) / 10`.
pub fn mse_lsm(i: &GrayImage, r: &GrayImage) -> Result<LocalSimilarityMap> {
    check_same_size(i, r)?;
    let grid = i
        .as_grid()
        .zip_map(r.as_grid(), |a, b| (1.0 + (a - b) * (a - b)).log10() / 10.0)?;
    Ok(LocalSimilarityMap::new(grid, SimilarityFn::Mse))
}

/// Parameters shared by all eight comparisons; the per-reference analysis
/// scale is filled in from [`RefKind::analysis_scale`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimilarityConfig {
    pub ssim: SsimParams,
    pub rnse_window: usize,
}

impl Default for SimilarityConfig {
    fn default() -> Self {
        SimilarityConfig {
            ssim: SsimParams::default(),
            rnse_window: DEFAULT_RNSE_WINDOW,
        }
    }
}

/// The eight maps of `img`, in canonical reference order.
pub fn compute_all_lsms(
    img: &GrayImage,
    function: SimilarityFn,
    cfg: &SimilarityConfig,
) -> Result<Vec<LocalSimilarityMap>> {
    let refs = build_reference_set(img)?;
    match function {
        SimilarityFn::Mse => refs.entries().iter().map(|r| mse_lsm(img, &r.image)).collect(),
        SimilarityFn::Ssim => {
            cfg.ssim.validate()?;
            // Moments of the source image are shared by every reference at the same scale.
            let mut cache: Vec<(f64, GaussianKernel, Moments)> = Vec::new();
            let mut maps = Vec::with_capacity(NUM_REFERENCES);
            for r in refs.entries() {
                let scale = r.kind.analysis_scale();
                if !cache.iter().any(|(s, _, _)| *s == scale) {
                    let window = gaussian_kernel(scale)?;
                    let m = Moments::new(img.as_grid(), &window);
                    cache.push((scale, window, m));
                }
                let (_, window, mi) = cache.iter().find(|(s, _, _)| *s == scale).unwrap();
                let mr = Moments::new(r.image.as_grid(), window);
                let p = cfg.ssim.with_window_scale(scale);
                maps.push(ssim_with_moments(img, &r.image, mi, &mr, window, &p));
            }
            Ok(maps)
        }
        SimilarityFn::Rnse => {
            let mut cache: Vec<(f64, LogKernel, EdgeMap)> = Vec::new();
            let mut maps = Vec::with_capacity(NUM_REFERENCES);
            for r in refs.entries() {
                let scale = r.kind.analysis_scale();
                RnseParams::new(scale, cfg.rnse_window)?;
                if !cache.iter().any(|(s, _, _)| *s == scale) {
                    let kernel = LogKernel::new(scale)?;
                    let e = zero_crossings(&log_response_with(img.as_grid(), &kernel))?;
                    cache.push((scale, kernel, e));
                }
                let (_, kernel, ei) = cache.iter().find(|(s, _, _)| *s == scale).unwrap();
                let er = zero_crossings(&log_response_with(r.image.as_grid(), kernel))?;
                maps.push(rnse_from_edges(ei, &er, cfg.rnse_window));
            }
            Ok(maps)
        }
    }
}
