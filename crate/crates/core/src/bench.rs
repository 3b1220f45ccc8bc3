//! Dataset manifests, reference-disjoint splits, synthetic distortions and
//! end-to-end benchmark runs.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Mutex;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::eval::{self, EvalReport, LogisticParams};
use crate::features::{extract_features, fmt_f64, FeatureKind};
use crate::imgproc::{gaussian_kernel, load_gray, save_gray_png, smooth, smooth_grid, GrayImage, Grid};
use crate::rng;
use crate::similarity::{SimilarityConfig, SimilarityFn};
use crate::svr::{GridSpec, QualityModel, SvrConfig, TargetScale};

pub const MANIFEST_COLUMNS: [&str; 6] = ["image_path", "reference_id", "distortion", "level", "score", "score_kind"];

/// Polarity of a subjective score.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ScoreKind {
    /// Higher is better.
    Mos,
    /// Higher is worse.
    Dmos,
}

impl ScoreKind {
    pub fn tag(&self) -> &'static str {
        match self {
            ScoreKind::Mos => "MOS",
            ScoreKind::Dmos => "DMOS",
        }
    }

    pub fn flipped(&self) -> Self {
        match self {
            ScoreKind::Mos => ScoreKind::Dmos,
            ScoreKind::Dmos => ScoreKind::Mos,
        }
    }
}

impl fmt::Display for ScoreKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for ScoreKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "MOS" => Ok(ScoreKind::Mos),
            "DMOS" => Ok(ScoreKind::Dmos),
            other => Err(Error::Parameter(format!("unknown score kind '{other}' (expected MOS or DMOS)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestRecord {
    /// Resolved against the manifest's directory.
    pub image_path: PathBuf,
    pub reference_id: String,
    pub distortion: String,
    /// 0 marks a pristine image.
    pub level: u32,
    pub score: f64,
    pub score_kind: ScoreKind,
}

impl ManifestRecord {
    pub fn is_pristine(&self) -> bool {
        self.level == 0
    }

    /// Score in "higher is worse" orientation, so MOS and DMOS sets agree.
    pub fn badness(&self) -> f64 {
        match self.score_kind {
            ScoreKind::Mos => -self.score,
            ScoreKind::Dmos => self.score,
        }
    }
}

/// Parses a manifest CSV. Relative image paths are taken relative to the manifest.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestRecord>> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let ctx = |msg: String| Error::Data(format!("{}: {msg}", path.display()));

    let header = reader.headers().map_err(|e| ctx(e.to_string()))?.clone();
    let mut col = [0usize; 6];
    for (k, name) in MANIFEST_COLUMNS.iter().enumerate() {
        col[k] = header
            .iter()
            .position(|h| h == *name)
            .ok_or_else(|| ctx(format!("missing column '{name}'")))?;
    }

    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (i, rec) in reader.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| ctx(format!("row {row}: {e}")))?;
        let field = |k: usize| rec.get(col[k]).unwrap_or("");
        let raw_path = field(0);
        if raw_path.is_empty() {
            return Err(ctx(format!("row {row}: empty image_path")));
        }
        let image_path = base.join(raw_path);
        if !seen.insert(image_path.clone()) {
            return Err(ctx(format!("row {row}: duplicate image_path '{raw_path}'")));
        }
        if !image_path.is_file() {
            return Err(ctx(format!("row {row}: image '{}' not found", image_path.display())));
        }
        let reference_id = field(1).to_string();
        if reference_id.is_empty() {
            return Err(ctx(format!("row {row}: empty reference_id")));
        }
        let level = field(3)
            .parse::<u32>()
            .map_err(|_| ctx(format!("row {row}: level '{}' is not a non-negative integer", field(3))))?;
        let score = field(4)
            .parse::<f64>()
            .ok()
            .filter(|s| s.is_finite())
            .ok_or_else(|| ctx(format!("row {row}: score '{}' is not a finite number", field(4))))?;
        let score_kind = field(5).parse::<ScoreKind>().map_err(|e| ctx(format!("row {row}: {e}")))?;
        records.push(ManifestRecord {
            image_path,
            reference_id,
            distortion: field(2).to_string(),
            level,
            score,
            score_kind,
        });
    }
    Ok(records)
}

/// Writes a manifest; image paths under the manifest's directory are stored relative to it.
pub fn write_manifest(path: impl AsRef<Path>, records: &[ManifestRecord]) -> Result<()> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    let err = |e: csv::Error| Error::Data(format!("{}: {e}", path.display()));
    w.write_record(MANIFEST_COLUMNS).map_err(err)?;
    for r in records {
        let p = r.image_path.strip_prefix(base).unwrap_or(&r.image_path);
        w.write_record([
            p.to_string_lossy().as_ref(),
            &r.reference_id,
            &r.distortion,
            &r.level.to_string(),
            &fmt_score(r.score),
            r.score_kind.tag(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn fmt_score(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{v:.0}")
    } else {
        fmt_f64(v)
    }
}

/// Records with a subjective score, i.e. everything but pristine images.
pub fn scored(records: &[ManifestRecord]) -> Vec<ManifestRecord> {
    records.iter().filter(|r| !r.is_pristine()).cloned().collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub repeats: usize,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_fraction: 0.8,
            repeats: 1000,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Parameter(format!(
                "train fraction must lie in (0, 1), got {}",
                self.train_fraction
            )));
        }
        if self.repeats == 0 {
            return Err(Error::Parameter("repeats must be at least 1".into()));
        }
        Ok(())
    }
}

/// Row indices of one train/test partition.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub train_refs: Vec<String>,
    pub test_refs: Vec<String>,
}

/// Number of training references out of `total`: `round(fraction * total)`
/// kept within `1..total`.
pub fn train_reference_count(total: usize, fraction: f64) -> usize {
    ((fraction * total as f64).round() as usize).clamp(1, total - 1)
}

/// Reference-disjoint splits. Distinct reference ids are sorted, then for
/// each repeat shuffled by one seeded generator; the first references form
/// the training side. Indices refer to `records`.
pub fn split_by_reference(records: &[ManifestRecord], spec: &SplitSpec) -> Result<Vec<Split>> {
    spec.validate()?;
    let refs: Vec<String> = records
        .iter()
        .map(|r| r.reference_id.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if refs.len() < 2 {
        return Err(Error::Data(format!(
            "splitting needs at least 2 distinct references, found {}",
            refs.len()
        )));
    }
    let n_train = train_reference_count(refs.len(), spec.train_fraction);
    let mut gen = rng::seeded(spec.seed);
    let mut out = Vec::with_capacity(spec.repeats);
    for _ in 0..spec.repeats {
        let mut order = refs.clone();
        rng::shuffle(&mut order, &mut gen);
        let test_refs = order.split_off(n_train);
        let train_refs = order;
        let train_set: HashSet<&str> = train_refs.iter().map(String::as_str).collect();
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for (i, r) in records.iter().enumerate() {
            if train_set.contains(r.reference_id.as_str()) {
                train.push(i);
            } else {
                test.push(i);
            }
        }
        out.push(Split {
            train,
            test,
            train_refs,
            test_refs,
        });
    }
    Ok(out)
}

/// Synthetic distortion families.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Family {
    GaussBlur,
    Awgn,
    Impulse,
    BlockDctQuant,
    Contrast,
}

impl Family {
    pub const ALL: [Family; 5] = [
        Family::GaussBlur,
        Family::Awgn,
        Family::Impulse,
        Family::BlockDctQuant,
        Family::Contrast,
    ];

    pub fn tag(&self) -> &'static str {
        match self {
            Family::GaussBlur => "gauss_blur",
            Family::Awgn => "awgn",
            Family::Impulse => "impulse",
            Family::BlockDctQuant => "blockdct_quant",
            Family::Contrast => "contrast",
        }
    }

    /// Contrast strengths are scale factors, so severity grows as they shrink.
    fn severity_decreases_with_strength(&self) -> bool {
        matches!(self, Family::Contrast)
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.tag() == s.trim())
            .ok_or_else(|| Error::Parameter(format!("unknown distortion family '{s}'")))
    }
}

/// A family with its strengths, ordered from mildest to most severe.
#[derive(Clone, Debug, PartialEq)]
pub struct DistortionSpec {
    pub family: Family,
    pub levels: Vec<f64>,
}

impl DistortionSpec {
    pub fn new(family: Family, levels: Vec<f64>) -> Result<Self> {
        let spec = DistortionSpec { family, levels };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let f = self.family;
        if self.levels.len() < 2 {
            return Err(Error::Parameter(format!("{f}: need at least 2 levels")));
        }
        if self.levels.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Parameter(format!("{f}: strengths must be positive")));
        }
        if f == Family::Impulse && self.levels.iter().any(|&v| v > 1.0) {
            return Err(Error::Parameter("impulse: fractions must not exceed 1".into()));
        }
        let ordered = self.levels.windows(2).all(|w| {
            if f.severity_decreases_with_strength() {
                w[1] < w[0]
            } else {
                w[1] > w[0]
            }
        });
        if !ordered {
            let dir = if f.severity_decreases_with_strength() { "decreasing" } else { "increasing" };
            return Err(Error::Parameter(format!("{f}: strengths must be strictly {dir}")));
        }
        Ok(())
    }

    /// Default strengths used by the synthetic benchmark.
    pub fn default_for(family: Family) -> Self {
        let levels = match family {
            Family::GaussBlur => vec![0.6, 1.0, 1.6, 2.5, 4.0],
            Family::Awgn => vec![4.0, 8.0, 16.0, 28.0, 48.0],
            Family::Impulse => vec![0.01, 0.03, 0.07, 0.13, 0.22],
            Family::BlockDctQuant => vec![12.0, 24.0, 48.0, 90.0, 160.0],
            Family::Contrast => vec![0.8, 0.6, 0.45, 0.3, 0.2],
        };
        DistortionSpec { family, levels }
    }
}

/// Applies one family at strength `level`. Only `awgn` and `impulse` consume randomness.
pub fn apply_distortion(img: &GrayImage, family: Family, level: f64, rng: &mut rng::Rng) -> Result<GrayImage> {
    if !(level.is_finite() && level >= 0.0) {
        return Err(Error::Parameter(format!("{family}: strength must be finite and non-negative")));
    }
    match family {
        Family::GaussBlur => Ok(smooth(img, &gaussian_kernel(level)?)),
        Family::Awgn => {
            if level == 0.0 {
                return Ok(img.clone());
            }
            let normal = Normal::new(0.0, level).map_err(|e| Error::Parameter(e.to_string()))?;
            let data = img.data().iter().map(|v| (v + normal.sample(rng)).clamp(0.0, 255.0)).collect();
            GrayImage::new(img.width(), img.height(), data)
        }
        Family::Impulse => {
            if level > 1.0 {
                return Err(Error::Parameter("impulse: fraction must not exceed 1".into()));
            }
            let n = img.width() * img.height();
            let k = (level * n as f64).round() as usize;
            // Partial Fisher–Yates picks exactly k distinct pixels.
            let mut idx: Vec<usize> = (0..n).collect();
            let mut data = img.data().to_vec();
            for i in 0..k {
                let j = i + rng::uniform_index(rng, n - i);
                idx.swap(i, j);
                data[idx[i]] = if rng.random::<bool>() { 255.0 } else { 0.0 };
            }
            GrayImage::new(img.width(), img.height(), data)
        }
        Family::BlockDctQuant => {
            if level == 0.0 {
                return Err(Error::Parameter("blockdct_quant: step must be positive".into()));
            }
            Ok(block_dct_quantize(img, level))
        }
        Family::Contrast => {
            let grid = img.as_grid().map(|v| (128.0 + level * (v - 128.0)).clamp(0.0, 255.0));
            GrayImage::from_grid(grid)
        }
    }
}

fn dct_matrix() -> [[f64; 8]; 8] {
    let mut m = [[0.0; 8]; 8];
    for (u, row) in m.iter_mut().enumerate() {
        let a = if u == 0 { (1.0f64 / 8.0).sqrt() } else { 0.5 };
        for (x, v) in row.iter_mut().enumerate() {
            *v = a * (std::f64::consts::PI * (2 * x + 1) as f64 * u as f64 / 16.0).cos();
        }
    }
    m
}

/// Orthonormal 8×8 DCT-II of a row-major block.
pub fn dct8x8(block: &[f64; 64]) -> [f64; 64] {
    let c = dct_matrix();
    let mut tmp = [0.0; 64];
    let mut out = [0.0; 64];
    for u in 0..8 {
        for x in 0..8 {
            tmp[u * 8 + x] = (0..8).map(|y| c[u][y] * block[y * 8 + x]).sum();
        }
    }
    for u in 0..8 {
        for v in 0..8 {
            out[u * 8 + v] = (0..8).map(|x| tmp[u * 8 + x] * c[v][x]).sum();
        }
    }
    out
}

pub fn idct8x8(coef: &[f64; 64]) -> [f64; 64] {
    let c = dct_matrix();
    let mut tmp = [0.0; 64];
    let mut out = [0.0; 64];
    for y in 0..8 {
        for v in 0..8 {
            tmp[y * 8 + v] = (0..8).map(|u| c[u][y] * coef[u * 8 + v]).sum();
        }
    }
    for y in 0..8 {
        for x in 0..8 {
            out[y * 8 + x] = (0..8).map(|v| tmp[y * 8 + v] * c[v][x]).sum();
        }
    }
    out
}

/// Quantizes the AC coefficients of every 8×8 block with uniform step
/// `step`; the DC coefficient is kept. Partial border blocks are filled by
/// mirroring before the transform.
pub fn block_dct_quantize(img: &GrayImage, step: f64) -> GrayImage {
    let (w, h) = (img.width(), img.height());
    let grid = img.as_grid();
    let mut out = img.data().to_vec();
    for by in (0..h).step_by(8) {
        for bx in (0..w).step_by(8) {
            let mut block = [0.0; 64];
            for y in 0..8 {
                for x in 0..8 {
                    block[y * 8 + x] = grid.get_mirrored((by + y) as isize, (bx + x) as isize);
                }
            }
            // Reconstruct as block + IDCT(quantization error) so untouched
            // blocks come back bit-exact.
            // AC coefficients ignore the block mean; removing it first keeps
            // them exactly zero on flat blocks.
            let mean = block.iter().sum::<f64>() / 64.0;
            let coef = dct8x8(&block.map(|v| v - mean));
            let mut err = [0.0; 64];
            for (e, c) in err.iter_mut().zip(&coef).skip(1) {
                *e = (c / step).round() * step - c;
            }
            let delta = idct8x8(&err);
            for y in 0..8.min(h - by) {
                for x in 0..8.min(w - bx) {
                    out[(by + y) * w + bx + x] = (block[y * 8 + x] + delta[y * 8 + x]).clamp(0.0, 255.0);
                }
            }
        }
    }
    GrayImage::from_grid_clamped(Grid::new(w, h, out).expect("same shape"))
}

fn image_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if p.is_file() && matches!(ext.as_deref(), Some("png" | "bmp")) {
            files.push(p);
        }
    }
    files.sort();
    Ok(files)
}

/// Distorts every PNG/BMP in `pristine_dir` with every family and level,
/// writing `<stem>_<family>_<k>.png` files and `manifest.csv` to `out_dir`.
///
/// Level `k` is the 1-based position in the spec's strength list and the
/// score is `-k` (MOS polarity: higher is better).
pub fn generate_distortions(
    pristine_dir: impl AsRef<Path>,
    specs: &[DistortionSpec],
    out_dir: impl AsRef<Path>,
    seed: u64,
) -> Result<Vec<ManifestRecord>> {
    let (pristine_dir, out_dir) = (pristine_dir.as_ref(), out_dir.as_ref());
    for s in specs {
        s.validate()?;
    }
    let files = image_files(pristine_dir)?;
    if files.len() < 2 {
        return Err(Error::Data(format!(
            "{}: need at least 2 pristine images, found {}",
            pristine_dir.display(),
            files.len()
        )));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let mut jobs = Vec::new();
    for (fi, file) in files.iter().enumerate() {
        let stem = file
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        for s in specs {
            for (li, &strength) in s.levels.iter().enumerate() {
                jobs.push((fi, stem.clone(), s.family, li + 1, strength));
            }
        }
    }
    let images = files.iter().map(load_gray).collect::<Result<Vec<_>>>()?;
    let records = jobs
        .par_iter()
        .map(|(fi, stem, family, level, strength)| {
            let stream = ((*fi as u64) << 32) ^ ((*family as u64) << 16) ^ *level as u64;
            let mut gen = rng::seeded(rng::derive_seed(seed, stream));
            let img = apply_distortion(&images[*fi], *family, *strength, &mut gen)?;
            let out = out_dir.join(format!("{stem}_{family}_{level}.png"));
            save_gray_png(&img, &out)?;
            Ok(ManifestRecord {
                image_path: out,
                reference_id: stem.clone(),
                distortion: family.tag().to_string(),
                level: *level as u32,
                score: -(*level as f64),
                score_kind: ScoreKind::Mos,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    write_manifest(out_dir.join("manifest.csv"), &records)?;
    Ok(records)
}

/// A procedural grayscale scene: smooth shading, hard-edged shapes, a
/// grating patch and fine texture, quantized to integer levels.
pub fn synthesize_pristine(width: usize, height: usize, seed: u64) -> Result<GrayImage> {
    let mut gen = rng::seeded(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let noise = |scale: f64, gen: &mut rng::Rng| -> Result<Grid> {
        let g = Grid::from_fn(width, height, |_, _| normal.sample(gen));
        let s = smooth_grid(&g, &gaussian_kernel(scale)?);
        let m = s.data().iter().sum::<f64>() / s.len() as f64;
        let sd = (s.data().iter().map(|v| (v - m).powi(2)).sum::<f64>() / s.len() as f64).sqrt();
        Ok(s.map(|v| (v - m) / sd.max(1e-12)))
    };
    let shading = noise((width.min(height) as f64 / 12.0).max(1.0), &mut gen)?;
    let fine = noise(0.8, &mut gen)?;
    let base = gen.random_range(90.0..170.0);

    let mut data: Vec<f64> = (0..width * height)
        .map(|i| base + 35.0 * shading.data()[i] + 8.0 * fine.data()[i])
        .collect();

    let (wf, hf) = (width as f64, height as f64);
    let shapes = gen.random_range(6..12);
    for _ in 0..shapes {
        let (cx, cy) = (gen.random_range(0.0..wf), gen.random_range(0.0..hf));
        let (rx, ry) = (gen.random_range(0.05..0.25) * wf, gen.random_range(0.05..0.25) * hf);
        let delta = gen.random_range(-70.0..70.0);
        let disk = gen.random::<bool>();
        for r in 0..height {
            for c in 0..width {
                let (dx, dy) = ((c as f64 - cx) / rx, (r as f64 - cy) / ry);
                let inside = if disk { dx * dx + dy * dy <= 1.0 } else { dx.abs() <= 1.0 && dy.abs() <= 1.0 };
                if inside {
                    data[r * width + c] += delta;
                }
            }
        }
    }

    let (gx, gy, gr) = (gen.random_range(0.2..0.8) * wf, gen.random_range(0.2..0.8) * hf, 0.2 * wf.min(hf));
    let theta = gen.random_range(0.0..std::f64::consts::PI);
    let freq = gen.random_range(0.06..0.18);
    for r in 0..height {
        for c in 0..width {
            let (dx, dy) = (c as f64 - gx, r as f64 - gy);
            if dx * dx + dy * dy <= gr * gr {
                let u = dx * theta.cos() + dy * theta.sin();
                data[r * width + c] += 30.0 * (std::f64::consts::TAU * freq * u).sin();
            }
        }
    }

    let grid = Grid::new(width, height, data.into_iter().map(|v| v.round().clamp(0.0, 255.0)).collect())?;
    GrayImage::from_grid(grid)
}

/// Writes `count` procedural images named `pristine_NN.png` and returns their paths.
pub fn write_pristine_set(dir: impl AsRef<Path>, count: usize, size: usize, seed: u64) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    (0..count)
        .into_par_iter()
        .map(|i| {
            let img = synthesize_pristine(size, size, rng::derive_seed(seed, i as u64))?;
            let p = dir.join(format!("pristine_{i:02}.png"));
            save_gray_png(&img, &p)?;
            Ok(p)
        })
        .collect()
}

/// Feature kind, similarity function and its parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Method {
    pub kind: FeatureKind,
    pub function: SimilarityFn,
    pub similarity: SimilarityConfig,
}

impl Method {
    pub fn new(kind: FeatureKind, function: SimilarityFn) -> Self {
        Method {
            kind,
            function,
            similarity: SimilarityConfig::default(),
        }
    }

    fn cache_key(&self) -> String {
        format!("{}|{}|{:?}", self.kind, self.function, self.similarity)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "sos-{}-{}", self.kind, self.function)
    }
}

/// Feature vectors keyed by image content and method, kept in memory and
/// optionally mirrored to a directory so later runs can skip extraction.
#[derive(Debug, Default)]
pub struct FeatureCache {
    dir: Option<PathBuf>,
    mem: Mutex<HashMap<String, Vec<f64>>>,
}

impl FeatureCache {
    pub fn in_memory() -> Self {
        FeatureCache::default()
    }

    pub fn with_dir(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(FeatureCache {
            dir: Some(dir),
            mem: Mutex::default(),
        })
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    fn key(bytes: &[u8], method: &Method) -> String {
        let mut h = Sha256::new();
        h.update(method.cache_key().as_bytes());
        h.update([0u8]);
        h.update(bytes);
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    fn read_disk(&self, key: &str, dim: usize) -> Option<Vec<f64>> {
        let p = self.dir.as_ref()?.join(format!("{key}.txt"));
        let text = std::fs::read_to_string(p).ok()?;
        let v: Vec<f64> = text.lines().map(|l| l.parse().ok()).collect::<Option<_>>()?;
        (v.len() == dim).then_some(v)
    }

    fn write_disk(&self, key: &str, values: &[f64]) -> Result<()> {
        let Some(dir) = &self.dir else { return Ok(()) };
        let tmp = dir.join(format!(
            "{key}.{}.{}.tmp",
            std::process::id(),
            rayon::current_thread_index().unwrap_or(usize::MAX)
        ));
        let body: String = values.iter().map(|&v| fmt_f64(v) + "\n").collect();
        std::fs::write(&tmp, body).map_err(|e| Error::io(&tmp, e))?;
        let dst = dir.join(format!("{key}.txt"));
        std::fs::rename(&tmp, &dst).map_err(|e| Error::io(&dst, e))
    }

    /// Features of the image at `path`, computed at most once per content and method.
    pub fn features(&self, path: &Path, method: &Method) -> Result<Vec<f64>> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let key = Self::key(&bytes, method);
        if let Some(v) = self.mem.lock().expect("cache lock").get(&key) {
            return Ok(v.clone());
        }
        let values = match self.read_disk(&key, method.kind.dim()) {
            Some(v) => v,
            None => {
                let img = load_gray(path)?;
                let v = extract_features(&img, method.kind, method.function, &method.similarity)?.values;
                self.write_disk(&key, &v)?;
                v
            }
        };
        self.mem.lock().expect("cache lock").insert(key, values.clone());
        Ok(values)
    }

    /// Features of many images, extracted in parallel, in input order.
    pub fn features_many(&self, paths: &[PathBuf], method: &Method) -> Result<Vec<Vec<f64>>> {
        paths.par_iter().map(|p| self.features(p, method)).collect()
    }
}

/// Like [`eval::evaluate`], but a split whose predictions (or targets) are
/// constant gets SRCC = PLCC = 0 and the RMSE of predicting the target mean.
pub fn evaluate_or_degenerate(pred: &[f64], target: &[f64]) -> Result<EvalReport> {
    match eval::evaluate(pred, target) {
        Err(Error::Numerical(msg)) => {
            log::warn!("degenerate evaluation ({msg}); scoring it as uncorrelated");
            let m = target.iter().sum::<f64>() / target.len() as f64;
            let rmse = (target.iter().map(|t| (t - m).powi(2)).sum::<f64>() / target.len() as f64).sqrt();
            Ok(EvalReport {
                srcc: 0.0,
                plcc: 0.0,
                rmse,
                n: pred.len(),
                logistic: LogisticParams::linear(0.0, m),
            })
        }
        other => other,
    }
}

/// Minimum number of test images of one distortion for a per-distortion row.
pub const MIN_PER_DISTORTION: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HyperChoice {
    pub log2_c: f64,
    pub log2_gamma: f64,
    pub cv_rmse: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitOutcome {
    pub overall: EvalReport,
    pub per_distortion: BTreeMap<String, EvalReport>,
    pub chosen: HyperChoice,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DistortionSummary {
    pub distortion: String,
    pub median: EvalReport,
    /// Splits that contributed a row for this distortion.
    pub splits: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkReport {
    pub method: Method,
    pub overall: EvalReport,
    pub per_distortion: Vec<DistortionSummary>,
    pub splits: Vec<SplitOutcome>,
}

/// SVR settings shared by all fits of a run.
#[derive(Clone, Debug, PartialEq)]
pub struct Training {
    pub grid: GridSpec,
    pub svr: SvrConfig,
}

impl Default for Training {
    fn default() -> Self {
        Training {
            grid: GridSpec::default(),
            svr: SvrConfig::default(),
        }
    }
}

fn rows<T: Clone>(v: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| v[i].clone()).collect()
}

fn fit_split(
    method: &Method,
    x: &[Vec<f64>],
    badness: &[f64],
    training: &Training,
    grid_seed: u64,
) -> Result<(QualityModel, HyperChoice)> {
    let target = TargetScale::fit(badness, false)?;
    let grid = GridSpec {
        seed: grid_seed,
        ..training.grid.clone()
    };
    let (model, search) =
        QualityModel::fit_tuned(method.function, method.kind, x, badness, target, &grid, &training.svr)?;
    let chosen = HyperChoice {
        log2_c: search.best.log2_c,
        log2_gamma: search.best.log2_gamma,
        cv_rmse: search.best.cv_rmse,
    };
    Ok((model, chosen))
}

/// Within-database protocol: per reference-disjoint split, grid-search and
/// train on the training side, evaluate on the test side overall and per
/// distortion, then take medians across splits. Pristine records are ignored.
pub fn run_benchmark(
    records: &[ManifestRecord],
    method: &Method,
    split_spec: &SplitSpec,
    training: &Training,
    cache: &FeatureCache,
) -> Result<BenchmarkReport> {
    let records = scored(records);
    let splits = split_by_reference(&records, split_spec)?;
    let paths: Vec<PathBuf> = records.iter().map(|r| r.image_path.clone()).collect();
    let features = cache.features_many(&paths, method)?;
    let badness: Vec<f64> = records.iter().map(ManifestRecord::badness).collect();

    let outcomes = splits
        .par_iter()
        .enumerate()
        .map(|(si, split)| {
            let x = rows(&features, &split.train);
            let y = rows(&badness, &split.train);
            let (model, chosen) = fit_split(method, &x, &y, training, rng::derive_seed(split_spec.seed, si as u64))?;
            let pred = split
                .test
                .iter()
                .map(|&i| model.predict(&features[i]))
                .collect::<Result<Vec<_>>>()?;
            let truth = rows(&badness, &split.test);
            let overall = evaluate_or_degenerate(&pred, &truth)?;

            let mut groups: BTreeMap<&str, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
            for (k, &i) in split.test.iter().enumerate() {
                let g = groups.entry(records[i].distortion.as_str()).or_default();
                g.0.push(pred[k]);
                g.1.push(truth[k]);
            }
            let mut per_distortion = BTreeMap::new();
            for (tag, (p, t)) in groups {
                if p.len() >= MIN_PER_DISTORTION {
                    per_distortion.insert(tag.to_string(), evaluate_or_degenerate(&p, &t)?);
                }
            }
            Ok(SplitOutcome {
                overall,
                per_distortion,
                chosen,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let overall = eval::median_aggregate(&outcomes.iter().map(|o| o.overall).collect::<Vec<_>>())?;
    let tags: BTreeSet<&String> = outcomes.iter().flat_map(|o| o.per_distortion.keys()).collect();
    let per_distortion = tags
        .into_iter()
        .map(|tag| {
            let reps: Vec<EvalReport> = outcomes.iter().filter_map(|o| o.per_distortion.get(tag).copied()).collect();
            Ok(DistortionSummary {
                distortion: tag.clone(),
                median: eval::median_aggregate(&reps)?,
                splits: reps.len(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BenchmarkReport {
        method: *method,
        overall,
        per_distortion,
        splits: outcomes,
    })
}

impl BenchmarkReport {
    pub fn per_split(&self) -> Vec<EvalReport> {
        self.splits.iter().map(|s| s.overall).collect()
    }

    pub fn distortion(&self, tag: &str) -> Option<&DistortionSummary> {
        self.per_distortion.iter().find(|d| d.distortion == tag)
    }

    /// Writes `overall.csv`, `per_distortion.csv`, `per_split.csv` and
    /// `chosen_hyperparams.csv` into `dir`.
    pub fn write_bundle(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let m = &self.method;
        let f = fmt_f64;

        let mut s = String::from("features,similarity,srcc,plcc,rmse,splits\n");
        let o = &self.overall;
        s += &format!("{},{},{},{},{},{}\n", m.kind, m.function, f(o.srcc), f(o.plcc), f(o.rmse), self.splits.len());
        write_text(&dir.join("overall.csv"), &s)?;

        let mut s = String::from("distortion,srcc,plcc,rmse,splits\n");
        for d in &self.per_distortion {
            let r = &d.median;
            s += &format!("{},{},{},{},{}\n", d.distortion, f(r.srcc), f(r.plcc), f(r.rmse), d.splits);
        }
        write_text(&dir.join("per_distortion.csv"), &s)?;

        eval::write_split_csv(dir.join("per_split.csv"), &self.per_split())?;

        let mut s = String::from("split_index,log2_c,log2_gamma,cv_rmse\n");
        for (i, o) in self.splits.iter().enumerate() {
            let c = &o.chosen;
            s += &format!("{i},{},{},{}\n", f(c.log2_c), f(c.log2_gamma), f(c.cv_rmse));
        }
        write_text(&dir.join("chosen_hyperparams.csv"), &s)
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Min-max normalization of badness scores to `[0, 1]` within one database.
fn normalized_badness(records: &[ManifestRecord]) -> Result<Vec<f64>> {
    let b: Vec<f64> = records.iter().map(ManifestRecord::badness).collect();
    let scale = TargetScale::fit(&b, false)?;
    Ok(b.into_iter().map(|v| scale.forward(v)).collect())
}

/// Trains on every distorted image of `train` and evaluates on every distorted
/// image of `test`. Each database's scores are oriented to "higher is worse"
/// and scaled to `[0, 1]` independently, so RMSE is in those units.
pub fn cross_database(
    train: &[ManifestRecord],
    test: &[ManifestRecord],
    method: &Method,
    training: &Training,
    cache: &FeatureCache,
) -> Result<EvalReport> {
    let (train, test) = (scored(train), scored(test));
    if train.is_empty() || test.is_empty() {
        return Err(Error::Data("cross-database evaluation needs scored images on both sides".into()));
    }
    let paths = |r: &[ManifestRecord]| r.iter().map(|x| x.image_path.clone()).collect::<Vec<_>>();
    let x_train = cache.features_many(&paths(&train), method)?;
    let x_test = cache.features_many(&paths(&test), method)?;
    let y_train = normalized_badness(&train)?;
    let y_test = normalized_badness(&test)?;
    let (model, _) = fit_split(method, &x_train, &y_train, training, training.grid.seed)?;
    let pred = x_test.iter().map(|x| model.predict(x)).collect::<Result<Vec<_>>>()?;
    evaluate_or_degenerate(&pred, &y_test)
}
