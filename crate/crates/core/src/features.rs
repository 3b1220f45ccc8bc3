//! SOS features: per-map mean and standard deviation (MD) or 10-bin
//! histograms (H), concatenated in canonical reference order.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::imgproc::GrayImage;
use crate::similarity::{compute_all_lsms, LocalSimilarityMap, SimilarityConfig, SimilarityFn, NUM_REFERENCES};

pub const NUM_BINS: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FeatureKind {
    /// Mean and standard deviation of each map (16 values).
    Md,
    /// Normalized 10-bin histogram of each map (80 values).
    H,
}

impl FeatureKind {
    pub fn tag(&self) -> &'static str {
        match self {
            FeatureKind::Md => "md",
            FeatureKind::H => "h",
        }
    }

    pub fn per_map(&self) -> usize {
        match self {
            FeatureKind::Md => 2,
            FeatureKind::H => NUM_BINS,
        }
    }

    pub fn dim(&self) -> usize {
        self.per_map() * NUM_REFERENCES
    }

    /// Column names in feature order.
    pub fn column_names(&self) -> Vec<String> {
        (1..=NUM_REFERENCES)
            .flat_map(|m| match self {
                FeatureKind::Md => vec![format!("mean_{m}"), format!("std_{m}")],
                FeatureKind::H => (0..NUM_BINS).map(|b| format!("hist_{m}_{b}")).collect(),
            })
            .collect()
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for FeatureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "md" => Ok(FeatureKind::Md),
            "h" => Ok(FeatureKind::H),
            other => Err(Error::Parameter(format!(
                "unknown feature kind '{other}' (expected md or h)"
            ))),
        }
    }
}

/// Bin frequencies of one map; bin `k` covers `[0.1k, 0.1(k+1))`, the last bin is closed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Histogram10 {
    pub bins: [f64; NUM_BINS],
}

impl AsRef<[f64]> for LocalSimilarityMap {
    fn as_ref(&self) -> &[f64] {
        self.values()
    }
}

fn non_empty(values: &[f64]) -> Result<()> {
    if values.is_empty() {
        return Err(Error::Data("similarity map is empty".into()));
    }
    Ok(())
}

pub fn lsm_mean(map: impl AsRef<[f64]>) -> Result<f64> {
    let v = map.as_ref();
    non_empty(v)?;
    Ok(v.iter().sum::<f64>() / v.len() as f64)
}

/// Population standard deviation (divides by N).
pub fn lsm_std(map: impl AsRef<[f64]>) -> Result<f64> {
    let v = map.as_ref();
    let mean = lsm_mean(v)?;
    let ss: f64 = v.iter().map(|x| (x - mean) * (x - mean)).sum();
    Ok((ss / v.len() as f64).sqrt())
}

#[inline]
fn bin_index(v: f64) -> usize {
    ((v * NUM_BINS as f64).floor() as usize).min(NUM_BINS - 1)
}

pub fn lsm_histogram(map: impl AsRef<[f64]>) -> Result<Histogram10> {
    let v = map.as_ref();
    non_empty(v)?;
    let mut counts = [0usize; NUM_BINS];
    for &x in v {
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::Range(format!(
                "similarity value {x} outside [0, 1], cannot be histogrammed"
            )));
        }
        counts[bin_index(x)] += 1;
    }
    let n = v.len() as f64;
    Ok(Histogram10 {
        bins: counts.map(|c| c as f64 / n),
    })
}

/// Quality-aware feature vector of one image.
#[derive(Clone, Debug, PartialEq)]
pub struct SosFeatureVector {
    pub kind: FeatureKind,
    pub function: SimilarityFn,
    pub values: Vec<f64>,
}

/// Per-map statistics of already computed maps.
pub fn summarize(
    maps: &[LocalSimilarityMap],
    kind: FeatureKind,
    function: SimilarityFn,
) -> Result<SosFeatureVector> {
    if maps.len() != NUM_REFERENCES {
        return Err(Error::DimensionMismatch(format!(
            "expected {NUM_REFERENCES} similarity maps, got {}",
            maps.len()
        )));
    }
    let mut values = Vec::with_capacity(kind.dim());
    for m in maps {
        match kind {
            FeatureKind::Md => {
                values.push(lsm_mean(m)?);
                values.push(lsm_std(m)?);
            }
            FeatureKind::H => values.extend_from_slice(&lsm_histogram(m)?.bins),
        }
    }
    Ok(SosFeatureVector {
        kind,
        function,
        values,
    })
}

pub fn extract_features(
    img: &GrayImage,
    kind: FeatureKind,
    function: SimilarityFn,
    cfg: &SimilarityConfig,
) -> Result<SosFeatureVector> {
    let maps = compute_all_lsms(img, function, cfg)?;
    summarize(&maps, kind, function)
}

/// Formats a float with 17 significant digits; parsing it back is exact.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes `image_id,<feature columns>` followed by one row per image.
pub fn write_feature_csv(
    path: impl AsRef<Path>,
    kind: FeatureKind,
    rows: &[(String, Vec<f64>)],
) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_feature_rows(file, kind, rows).map_err(|e| match e {
        Error::Data(msg) => Error::Data(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn write_feature_rows<W: std::io::Write>(
    out: W,
    kind: FeatureKind,
    rows: &[(String, Vec<f64>)],
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Data(e.to_string());
    let mut header = vec!["image_id".to_string()];
    header.extend(kind.column_names());
    w.write_record(&header).map_err(csv_err)?;
    for (id, values) in rows {
        if values.len() != kind.dim() {
            return Err(Error::DimensionMismatch(format!(
                "row '{id}' has {} values, {} features need {}",
                values.len(),
                kind,
                kind.dim()
            )));
        }
        let mut record = vec![id.clone()];
        record.extend(values.iter().map(|&v| fmt_f64(v)));
        w.write_record(&record).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Data(e.to_string()))
}

/// Reads a feature CSV written by [`write_feature_csv`]; the kind is inferred from the header.
pub fn read_feature_csv(path: impl AsRef<Path>) -> Result<(FeatureKind, Vec<(String, Vec<f64>)>)> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let header: Vec<String> = r
        .headers()
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?
        .iter()
        .map(str::to_string)
        .collect();
    let kind = [FeatureKind::Md, FeatureKind::H]
        .into_iter()
        .find(|k| header.len() == k.dim() + 1 && header[1..] == k.column_names()[..])
        .ok_or_else(|| Error::Data(format!("{}: unrecognized feature header", path.display())))?;
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::Data(format!("{} line {line}: {e}", path.display())))?;
        let id = rec.get(0).unwrap_or_default().to_string();
        let values = rec
            .iter()
            .skip(1)
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|_| Error::Data(format!("{} line {line}: bad value '{s}'", path.display())))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push((id, values));
    }
    Ok((kind, rows))
}
