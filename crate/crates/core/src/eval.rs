//! Prediction metrics: rank and linear correlation, logistic-mapped RMSE,
//! a right-tailed Welch test and median aggregation over splits.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::features::fmt_f64;

/// Nelder–Mead iteration cap for [`fit_logistic`].
pub const LOGISTIC_MAX_ITER: usize = 2000;

// Slope bounds in standard-deviation units of the predictor. As the slope
// goes to 0 the least-squares optimum degenerates into a cubic with
// unbounded b1; bounding it keeps the minimizer attained and stable.
const SLOPE_MIN: f64 = 0.1;
const SLOPE_MAX: f64 = 100.0;

/// `q(x) = b1 (1/2 − 1/(1 + exp(b2 (x − b3)))) + b4 x + b5`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogisticParams {
    pub b1: f64,
    pub b2: f64,
    pub b3: f64,
    pub b4: f64,
    pub b5: f64,
}

impl LogisticParams {
    /// Pure linear map `b4 x + b5`.
    pub fn linear(b4: f64, b5: f64) -> Self {
        LogisticParams {
            b1: 0.0,
            b2: 0.0,
            b3: 0.0,
            b4,
            b5,
        }
    }

    pub fn apply(&self, x: f64) -> f64 {
        self.b1 * sigmoid_term(self.b2 * (x - self.b3)) + self.b4 * x + self.b5
    }

    pub fn as_array(&self) -> [f64; 5] {
        [self.b1, self.b2, self.b3, self.b4, self.b5]
    }

    pub fn from_array(b: [f64; 5]) -> Self {
        LogisticParams {
            b1: b[0],
            b2: b[1],
            b3: b[2],
            b4: b[3],
            b5: b[4],
        }
    }

    fn is_finite(&self) -> bool {
        self.as_array().iter().all(|v| v.is_finite())
    }
}

#[inline]
fn sigmoid_term(u: f64) -> f64 {
    0.5 - 1.0 / (1.0 + u.exp())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalReport {
    pub srcc: f64,
    pub plcc: f64,
    pub rmse: f64,
    pub n: usize,
    pub logistic: LogisticParams,
}

fn check_pair(a: &[f64], b: &[f64], min: usize) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!(
            "sequences have lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < min {
        return Err(Error::Data(format!("need at least {min} samples, got {}", a.len())));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite value in metric input".into()));
    }
    Ok(())
}

fn mean(a: &[f64]) -> f64 {
    a.iter().sum::<f64>() / a.len() as f64
}

/// Centered correlation; errors if either input is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    check_pair(a, b, 3)?;
    let (ma, mb) = (mean(a), mean(b));
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::Numerical("correlation of a constant sequence".into()));
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// 1-based ranks; tied values share the mean of their rank span.
pub fn average_ranks(a: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..a.len()).collect();
    idx.sort_by(|&i, &j| a[i].total_cmp(&a[j]));
    let mut ranks = vec![0.0; a.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && a[idx[end]] == a[idx[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1 ..= end
        let r = (start + 1 + end) as f64 / 2.0;
        for &i in &idx[start..end] {
            ranks[i] = r;
        }
        start = end;
    }
    ranks
}

pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    check_pair(a, b, 3)?;
    pearson(&average_ranks(a), &average_ranks(b))
}

fn sse(p: &LogisticParams, x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(&xi, &yi)| (p.apply(xi) - yi).powi(2)).sum()
}

/// Residual RMSE of `q(pred)` against `mos`.
pub fn logistic_rmse(p: &LogisticParams, pred: &[f64], mos: &[f64]) -> f64 {
    (sse(p, pred, mos) / pred.len() as f64).sqrt()
}

/// Ordinary least squares of `y` on the columns, via SVD.
fn least_squares(cols: &[Vec<f64>], y: &[f64]) -> Option<Vec<f64>> {
    let a = DMatrix::from_fn(y.len(), cols.len(), |r, c| cols[c][r]);
    let b = DVector::from_column_slice(y);
    let sol = a.svd(true, true).solve(&b, 1e-12).ok()?;
    let v: Vec<f64> = sol.iter().copied().collect();
    v.iter().all(|x| x.is_finite()).then_some(v)
}

/// Best `b4 x + b5` in the least-squares sense.
pub fn fit_linear(pred: &[f64], mos: &[f64]) -> Result<LogisticParams> {
    check_pair(pred, mos, 2)?;
    let ones = vec![1.0; pred.len()];
    let c = least_squares(&[pred.to_vec(), ones], mos)
        .ok_or_else(|| Error::Numerical("linear fit failed".into()))?;
    Ok(LogisticParams::linear(c[0], c[1]))
}

/// Standardized predictor. `z = s (x − m) / sd` with `s` the sign of the
/// correlation with the targets, so mirrored inputs give the same problem.
struct Standardized {
    z: Vec<f64>,
    m: f64,
    scale: f64,
}

impl Standardized {
    fn new(pred: &[f64], mos: &[f64]) -> Option<Self> {
        let m = mean(pred);
        let sd = (pred.iter().map(|v| (v - m).powi(2)).sum::<f64>() / pred.len() as f64).sqrt();
        if sd == 0.0 || !sd.is_finite() {
            return None;
        }
        let mm = mean(mos);
        let cov: f64 = pred.iter().zip(mos).map(|(p, y)| (p - m) * (y - mm)).sum();
        let scale = if cov < 0.0 { -sd } else { sd };
        let z = pred.iter().map(|v| (v - m) / scale).collect();
        Some(Standardized { z, m, scale })
    }

    /// Linear coefficients (b1, b4', b5') for fixed nonlinear (b2', b3').
    fn project(&self, mos: &[f64], b2: f64, b3: f64) -> Option<(LogisticParams, f64)> {
        let g: Vec<f64> = self.z.iter().map(|&z| sigmoid_term(b2 * (z - b3))).collect();
        let ones = vec![1.0; self.z.len()];
        let c = least_squares(&[g, self.z.clone(), ones], mos)?;
        let p = LogisticParams::from_array([c[0], b2, b3, c[1], c[2]]);
        let e = sse(&p, &self.z, mos);
        e.is_finite().then_some((p, e))
    }

    /// Rewrites params fitted on `z` in terms of the raw predictor.
    fn unstandardize(&self, p: &LogisticParams) -> LogisticParams {
        LogisticParams {
            b1: p.b1,
            b2: p.b2 / self.scale,
            b3: self.m + self.scale * p.b3,
            b4: p.b4 / self.scale,
            b5: p.b5 - p.b4 * self.m / self.scale,
        }
    }
}

/// Minimizes `f` over two variables with the Nelder–Mead simplex method.
/// Returns the best vertex and its value.
fn nelder_mead(mut f: impl FnMut([f64; 2]) -> f64, start: [f64; 2], step: f64, max_iter: usize) -> ([f64; 2], f64) {
    let mut s: Vec<([f64; 2], f64)> = [start, [start[0] + step, start[1]], [start[0], start[1] + step]]
        .into_iter()
        .map(|v| (v, f(v)))
        .collect();
    let lerp = |a: [f64; 2], b: [f64; 2], t: f64| [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
    for _ in 0..max_iter {
        s.sort_by(|a, b| a.1.total_cmp(&b.1));
        let spread = (s[2].1 - s[0].1).abs();
        let size = s[1..]
            .iter()
            .map(|v| (v.0[0] - s[0].0[0]).abs().max((v.0[1] - s[0].0[1]).abs()))
            .fold(0.0, f64::max);
        if size < 1e-13 || (spread <= 1e-30 && size < 1e-9) {
            break;
        }
        let c = [(s[0].0[0] + s[1].0[0]) / 2.0, (s[0].0[1] + s[1].0[1]) / 2.0];
        let worst = s[2];
        let r = lerp(c, worst.0, -1.0);
        let fr = f(r);
        if fr < s[0].1 {
            let e = lerp(c, worst.0, -2.0);
            let fe = f(e);
            s[2] = if fe < fr { (e, fe) } else { (r, fr) };
        } else if fr < s[1].1 {
            s[2] = (r, fr);
        } else {
            let (k, fk) = if fr < worst.1 {
                let k = lerp(c, worst.0, -0.5);
                (k, f(k))
            } else {
                let k = lerp(c, worst.0, 0.5);
                (k, f(k))
            };
            if fk < worst.1.min(fr) {
                s[2] = (k, fk);
            } else {
                let best = s[0].0;
                for v in s.iter_mut().skip(1) {
                    v.0 = lerp(best, v.0, 0.5);
                    v.1 = f(v.0);
                }
            }
        }
    }
    s.sort_by(|a, b| a.1.total_cmp(&b.1));
    (s[0].0, s[0].1)
}

/// Least-squares fit of the 5-parameter logistic mapping `pred → mos`.
///
/// The slope and center are searched by Nelder–Mead, starting from slope
/// `1/std(pred)` at `mean(pred)`, with the slope bounded to
/// `[0.1, 100] / std(pred)`. For each candidate the three linear
/// coefficients are solved exactly, so the result is never worse than the
/// best linear fit or than the conventional starting curve.
pub fn fit_logistic(pred: &[f64], mos: &[f64]) -> Result<LogisticParams> {
    check_pair(pred, mos, 5)?;
    let st = Standardized::new(pred, mos)
        .ok_or_else(|| Error::Numerical("logistic fit on constant predictions".into()))?;
    let slope = |v: f64| v.clamp(SLOPE_MIN, SLOPE_MAX);
    let obj = |v: [f64; 2]| st.project(mos, slope(v[0]), v[1]).map_or(f64::INFINITY, |(_, e)| e);
    let (best, _) = nelder_mead(obj, [1.0, 0.0], 0.5, LOGISTIC_MAX_ITER);
    let (p, _) = st
        .project(mos, slope(best[0]), best[1])
        .ok_or_else(|| Error::Numerical("logistic fit diverged".into()))?;
    let raw = st.unstandardize(&p);
    let linear = fit_linear(pred, mos)?;
    // Guard against rounding in the back-substitution.
    let out = if raw.is_finite() && sse(&raw, pred, mos) <= sse(&linear, pred, mos) {
        raw
    } else {
        linear
    };
    Ok(out)
}

/// SRCC on raw predictions; PLCC and RMSE after the logistic mapping
/// (a linear mapping when fewer than five samples are available).
pub fn evaluate(pred: &[f64], mos: &[f64]) -> Result<EvalReport> {
    check_pair(pred, mos, 3)?;
    let srcc = spearman(pred, mos)?;
    let logistic = if pred.len() >= 5 {
        fit_logistic(pred, mos)?
    } else {
        fit_linear(pred, mos)?
    };
    let mapped: Vec<f64> = pred.iter().map(|&x| logistic.apply(x)).collect();
    let rmse = logistic_rmse(&logistic, pred, mos);
    let plcc = match pearson(&mapped, mos) {
        Ok(v) => v,
        // The mapping collapsed to a constant: no linear association survives.
        Err(Error::Numerical(_)) => 0.0,
        Err(e) => return Err(e),
    };
    Ok(EvalReport {
        srcc,
        plcc,
        rmse,
        n: pred.len(),
        logistic,
    })
}

/// Right-tailed Welch test of `mean(a) > mean(b)`. Returns `(p, p < alpha)`.
pub fn right_tailed_ttest(a: &[f64], b: &[f64], alpha: f64) -> Result<(f64, bool)> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Data("t-test needs at least 2 samples per group".into()));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite value in t-test input".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Parameter(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let var = |x: &[f64], m: f64| x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64;
    let (ma, mb) = (mean(a), mean(b));
    let (qa, qb) = (var(a, ma) / a.len() as f64, var(b, mb) / b.len() as f64);
    let se2 = qa + qb;
    let p = if se2 == 0.0 {
        match ma.total_cmp(&mb) {
            std::cmp::Ordering::Greater => 0.0,
            std::cmp::Ordering::Less => 1.0,
            std::cmp::Ordering::Equal => 0.5,
        }
    } else {
        let t = (ma - mb) / se2.sqrt();
        let dof = se2 * se2
            / (qa * qa / (a.len() - 1) as f64 + qb * qb / (b.len() - 1) as f64);
        let dist = StudentsT::new(0.0, 1.0, dof)
            .map_err(|e| Error::Numerical(format!("t distribution: {e}")))?;
        dist.sf(t)
    };
    Ok((p, p < alpha))
}

/// Middle order statistic; mean of the two middle ones for even counts.
pub fn median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Data("median of an empty sequence".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len() / 2;
    Ok(if v.len() % 2 == 1 { v[k] } else { (v[k - 1] + v[k]) / 2.0 })
}

/// Per-metric medians. `n` and `logistic` come from the split holding the
/// median SRCC (the lower middle one for even counts).
pub fn median_aggregate(reports: &[EvalReport]) -> Result<EvalReport> {
    if reports.is_empty() {
        return Err(Error::Data("no reports to aggregate".into()));
    }
    let col = |f: fn(&EvalReport) -> f64| median(&reports.iter().map(f).collect::<Vec<_>>());
    let mut order: Vec<usize> = (0..reports.len()).collect();
    order.sort_by(|&i, &j| reports[i].srcc.total_cmp(&reports[j].srcc).then(i.cmp(&j)));
    let pivot = &reports[order[(reports.len() - 1) / 2]];
    Ok(EvalReport {
        srcc: col(|r| r.srcc)?,
        plcc: col(|r| r.plcc)?,
        rmse: col(|r| r.rmse)?,
        n: pivot.n,
        logistic: pivot.logistic,
    })
}

/// `split_index,srcc,plcc,rmse`, one row per split.
pub fn write_split_rows(mut w: impl Write, reports: &[EvalReport]) -> std::io::Result<()> {
    writeln!(w, "split_index,srcc,plcc,rmse")?;
    for (i, r) in reports.iter().enumerate() {
        writeln!(w, "{i},{},{},{}", fmt_f64(r.srcc), fmt_f64(r.plcc), fmt_f64(r.rmse))?;
    }
    Ok(())
}

pub fn write_split_csv(path: impl AsRef<Path>, reports: &[EvalReport]) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    write_split_rows(&mut w, reports)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}
