//! ε-support-vector regression with an RBF kernel.
//!
//! The dual is solved by SMO with maximal-violating-pair working-set
//! selection over the stacked variables `[α; α*]`, following the LibSVM
//! formulation:
//!
//! ```text
//! min  ½ βᵀQβ + pᵀβ   s.t.  Σ s_t β_t = 0,  0 ≤ β_t ≤ C
//! s_t = +1 (t < l), −1 (t ≥ l);   Q_ts = s_t s_s K(x_t mod l, x_s mod l)
//! p_t = ε − y_t (t < l),  ε + y_{t−l} (t ≥ l)
//! ```

use std::fmt::Write as _;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::{fmt_f64, FeatureKind};
use crate::rng;
use crate::similarity::SimilarityFn;

/// Coefficients at or below this magnitude are dropped from the model.
pub const COEF_EPS: f64 = 1e-12;

const TAU: f64 = 1e-12;

/// Per-dimension min/max affine map to `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Scaler {
    min: Vec<f64>,
    max: Vec<f64>,
}

impl Scaler {
    /// Leaves values unchanged.
    pub fn identity(dim: usize) -> Self {
        Scaler {
            min: vec![0.0; dim],
            max: vec![1.0; dim],
        }
    }

    pub fn from_bounds(min: Vec<f64>, max: Vec<f64>) -> Result<Self> {
        if min.len() != max.len() {
            return Err(Error::DimensionMismatch("scaler bounds differ in length".into()));
        }
        if min.iter().zip(&max).any(|(a, b)| !(a.is_finite() && b.is_finite() && b >= a)) {
            return Err(Error::Parameter("scaler bounds must be finite with max >= min".into()));
        }
        Ok(Scaler { min, max })
    }

    pub fn dim(&self) -> usize {
        self.min.len()
    }

    pub fn min(&self) -> &[f64] {
        &self.min
    }

    pub fn max(&self) -> &[f64] {
        &self.max
    }

    /// Constant training dimensions map to 0.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(x.len(), self.dim())?;
        Ok(x
            .iter()
            .zip(self.min.iter().zip(&self.max))
            .map(|(&v, (&lo, &hi))| if hi > lo { (v - lo) / (hi - lo) } else { 0.0 })
            .collect())
    }

    pub fn apply_all(&self, rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        rows.iter().map(|r| self.apply(r)).collect()
    }
}

fn check_dim(got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::DimensionMismatch(format!(
            "vector has {got} dimensions, expected {want}"
        )));
    }
    Ok(())
}

fn check_matrix(x: &[Vec<f64>]) -> Result<usize> {
    let first = x.first().ok_or_else(|| Error::Data("feature matrix is empty".into()))?;
    let dim = first.len();
    for (i, row) in x.iter().enumerate() {
        if row.len() != dim {
            return Err(Error::DimensionMismatch(format!(
                "row {i} has {} features, row 0 has {dim}",
                row.len()
            )));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data(format!("row {i} contains a non-finite feature")));
        }
    }
    Ok(dim)
}

pub fn fit_scaler(x: &[Vec<f64>]) -> Result<Scaler> {
    let dim = check_matrix(x)?;
    let mut min = vec![f64::INFINITY; dim];
    let mut max = vec![f64::NEG_INFINITY; dim];
    for row in x {
        for (d, &v) in row.iter().enumerate() {
            min[d] = min[d].min(v);
            max[d] = max[d].max(v);
        }
    }
    Ok(Scaler { min, max })
}

#[inline]
fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// `exp(-gamma * |x - y|^2)`.
pub fn rbf(x: &[f64], y: &[f64], gamma: f64) -> Result<f64> {
    check_dim(y.len(), x.len())?;
    Ok((-gamma * sq_dist(x, y)).exp())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SvrConfig {
    pub c: f64,
    pub gamma: f64,
    pub epsilon: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SvrConfig {
    fn default() -> Self {
        SvrConfig {
            c: 1.0,
            gamma: 1.0,
            epsilon: 0.1,
            tol: 1e-3,
            max_iter: 100_000,
        }
    }
}

impl SvrConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.c.is_finite()
            && self.c > 0.0
            && self.gamma.is_finite()
            && self.gamma > 0.0
            && self.epsilon.is_finite()
            && self.epsilon >= 0.0
            && self.tol.is_finite()
            && self.tol > 0.0
            && self.max_iter > 0;
        if !ok {
            return Err(Error::Parameter(format!("invalid SVR configuration {self:?}")));
        }
        Ok(())
    }
}

/// Outcome of one SMO run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainStats {
    pub iterations: usize,
    pub converged: bool,
    /// Final dual objective (maximization form).
    pub dual_objective: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SvrModel {
    pub support_vectors: Vec<Vec<f64>>,
    pub dual_coefs: Vec<f64>,
    pub bias: f64,
    pub gamma: f64,
    pub scaler: Scaler,
    pub stats: TrainStats,
}

impl SvrModel {
    /// Decision value for an already scaled vector.
    pub fn decision(&self, scaled: &[f64]) -> f64 {
        self.support_vectors
            .iter()
            .zip(&self.dual_coefs)
            .map(|(sv, &a)| a * (-self.gamma * sq_dist(sv, scaled)).exp())
            .sum::<f64>()
            + self.bias
    }

    pub fn dim(&self) -> usize {
        self.scaler.dim()
    }
}

/// `Σ coef_i K(sv_i, scale(x)) + bias`.
pub fn predict(model: &SvrModel, x: &[f64]) -> Result<f64> {
    let scaled = model.scaler.apply(x)?;
    Ok(model.decision(&scaled))
}

fn gram(x: &[Vec<f64>], gamma: f64) -> Vec<f64> {
    let l = x.len();
    let mut k = vec![0.0; l * l];
    for i in 0..l {
        k[i * l + i] = 1.0;
        for j in 0..i {
            let v = (-gamma * sq_dist(&x[i], &x[j])).exp();
            k[i * l + j] = v;
            k[j * l + i] = v;
        }
    }
    k
}

struct Solution {
    beta: Vec<f64>,
    rho: f64,
    stats: TrainStats,
}

struct Smo<'a> {
    k: &'a [f64],
    l: usize,
    c: f64,
}

impl Smo<'_> {
    #[inline]
    fn sign(&self, t: usize) -> f64 {
        if t < self.l {
            1.0
        } else {
            -1.0
        }
    }

    #[inline]
    fn q(&self, t: usize, s: usize) -> f64 {
        self.sign(t) * self.sign(s) * self.k[(t % self.l) * self.l + s % self.l]
    }

    fn objective(beta: &[f64], grad: &[f64], p: &[f64]) -> f64 {
        // ½ βᵀQβ + pᵀβ = ½ Σ β_t (G_t + p_t)
        0.5 * beta
            .iter()
            .zip(grad.iter().zip(p))
            .map(|(b, (g, pp))| b * (g + pp))
            .sum::<f64>()
    }

    fn solve(&self, y: &[f64], cfg: &SvrConfig, mut trace: Option<&mut Vec<f64>>) -> Solution {
        let (l, c) = (self.l, self.c);
        let n = 2 * l;
        let p: Vec<f64> = (0..n)
            .map(|t| if t < l { cfg.epsilon - y[t] } else { cfg.epsilon + y[t - l] })
            .collect();
        let mut beta = vec![0.0; n];
        let mut grad = p.clone();
        if let Some(tr) = trace.as_deref_mut() {
            tr.push(0.0);
        }

        let mut iterations = 0;
        let mut converged = false;
        loop {
            let (mut gmax, mut gmin) = (f64::NEG_INFINITY, f64::INFINITY);
            let (mut i, mut j) = (usize::MAX, usize::MAX);
            for t in 0..n {
                let st = self.sign(t);
                let v = -st * grad[t];
                let (up, low) = if st > 0.0 {
                    (beta[t] < c, beta[t] > 0.0)
                } else {
                    (beta[t] > 0.0, beta[t] < c)
                };
                if up && v > gmax {
                    gmax = v;
                    i = t;
                }
                if low && v < gmin {
                    gmin = v;
                    j = t;
                }
            }
            if i == usize::MAX || j == usize::MAX || gmax - gmin < cfg.tol {
                converged = true;
                break;
            }
            if iterations >= cfg.max_iter {
                break;
            }
            iterations += 1;

            let (old_i, old_j) = (beta[i], beta[j]);
            let qij = self.q(i, j);
            let (qii, qjj) = (self.q(i, i), self.q(j, j));
            let (mut ai, mut aj) = (old_i, old_j);
            if self.sign(i) != self.sign(j) {
                let quad = (qii + qjj + 2.0 * qij).max(TAU);
                let delta = (-grad[i] - grad[j]) / quad;
                let diff = ai - aj;
                ai += delta;
                aj += delta;
                if diff > 0.0 {
                    if aj < 0.0 {
                        aj = 0.0;
                        ai = diff;
                    }
                } else if ai < 0.0 {
                    ai = 0.0;
                    aj = -diff;
                }
                if diff > 0.0 {
                    if ai > c {
                        ai = c;
                        aj = c - diff;
                    }
                } else if aj > c {
                    aj = c;
                    ai = c + diff;
                }
            } else {
                let quad = (qii + qjj - 2.0 * qij).max(TAU);
                let delta = (grad[i] - grad[j]) / quad;
                let sum = ai + aj;
                ai -= delta;
                aj += delta;
                if sum > c {
                    if ai > c {
                        ai = c;
                        aj = sum - c;
                    }
                } else if aj < 0.0 {
                    aj = 0.0;
                    ai = sum;
                }
                if sum > c {
                    if aj > c {
                        aj = c;
                        ai = sum - c;
                    }
                } else if ai < 0.0 {
                    ai = 0.0;
                    aj = sum;
                }
            }

            beta[i] = ai;
            beta[j] = aj;

            let (di, dj) = (beta[i] - old_i, beta[j] - old_j);
            for (t, g) in grad.iter_mut().enumerate() {
                *g += self.q(t, i) * di + self.q(t, j) * dj;
            }
            if let Some(tr) = trace.as_deref_mut() {
                tr.push(-Self::objective(&beta, &grad, &p));
            }
        }

        let rho = self.rho(&beta, &grad);
        let dual_objective = -Self::objective(&beta, &grad, &p);
        Solution {
            beta,
            rho,
            stats: TrainStats {
                iterations,
                converged,
                dual_objective,
            },
        }
    }

    fn rho(&self, beta: &[f64], grad: &[f64]) -> f64 {
        let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut free, mut sum_free) = (0usize, 0.0);
        for t in 0..beta.len() {
            let st = self.sign(t);
            let yg = st * grad[t];
            if beta[t] >= self.c {
                if st < 0.0 {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else if beta[t] <= 0.0 {
                if st > 0.0 {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else {
                free += 1;
                sum_free += yg;
            }
        }
        if free > 0 {
            sum_free / free as f64
        } else {
            (ub + lb) / 2.0
        }
    }
}

fn train_inner(
    x: &[Vec<f64>],
    y: &[f64],
    cfg: &SvrConfig,
    trace: Option<&mut Vec<f64>>,
) -> Result<SvrModel> {
    cfg.validate()?;
    let dim = check_matrix(x)?;
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} feature rows but {} targets",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::Data("training needs at least 2 samples".into()));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("targets contain a non-finite value".into()));
    }

    let l = x.len();
    let k = gram(x, cfg.gamma);
    let smo = Smo { k: &k, l, c: cfg.c };
    let sol = smo.solve(y, cfg, trace);
    if !sol.stats.converged {
        log::warn!(
            "SMO stopped after {} iterations without reaching tol {} (C={}, gamma={})",
            sol.stats.iterations,
            cfg.tol,
            cfg.c,
            cfg.gamma
        );
    }

    let mut support_vectors = Vec::new();
    let mut dual_coefs = Vec::new();
    for i in 0..l {
        let coef = sol.beta[i] - sol.beta[i + l];
        if coef.abs() > COEF_EPS {
            support_vectors.push(x[i].clone());
            dual_coefs.push(coef);
        }
    }
    Ok(SvrModel {
        support_vectors,
        dual_coefs,
        bias: -sol.rho,
        gamma: cfg.gamma,
        scaler: Scaler::identity(dim),
        stats: sol.stats,
    })
}

/// Trains on already scaled features. The returned model carries an identity scaler.
pub fn train(x: &[Vec<f64>], y: &[f64], cfg: &SvrConfig) -> Result<SvrModel> {
    train_inner(x, y, cfg, None)
}

/// Like [`train`], also returning the dual objective after every SMO step
/// (index 0 is the starting point).
pub fn train_traced(x: &[Vec<f64>], y: &[f64], cfg: &SvrConfig) -> Result<(SvrModel, Vec<f64>)> {
    let mut trace = Vec::new();
    let model = train_inner(x, y, cfg, Some(&mut trace))?;
    Ok((model, trace))
}

/// Log2-spaced `(C, gamma)` grid with k-fold cross-validation.
#[derive(Clone, Debug, PartialEq)]
pub struct GridSpec {
    pub log2_c: Vec<f64>,
    pub log2_gamma: Vec<f64>,
    pub folds: usize,
    pub seed: u64,
}

/// `start, start + step, ...` up to and including `end` (with a little slack for rounding).
pub fn log2_range(start: f64, end: f64, step: f64) -> Result<Vec<f64>> {
    if !(start.is_finite() && end.is_finite() && step.is_finite() && step > 0.0) || end < start {
        return Err(Error::Parameter(format!(
            "bad grid range {start}..{end} step {step}"
        )));
    }
    let n = ((end - start) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| start + i as f64 * step).collect())
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            log2_c: log2_range(-1.0, 9.0, 2.0).expect("valid range"),
            log2_gamma: log2_range(-11.0, 1.0, 2.0).expect("valid range"),
            folds: 5,
            seed: 0,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.log2_c.is_empty() || self.log2_gamma.is_empty() {
            return Err(Error::Parameter("grid search needs non-empty grids".into()));
        }
        if self.folds < 2 {
            return Err(Error::Parameter(format!("need at least 2 folds, got {}", self.folds)));
        }
        if self.log2_c.iter().chain(&self.log2_gamma).any(|v| !v.is_finite()) {
            return Err(Error::Parameter("grid values must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CvEntry {
    pub log2_c: f64,
    pub log2_gamma: f64,
    pub cv_rmse: f64,
}

impl CvEntry {
    pub fn c(&self) -> f64 {
        self.log2_c.exp2()
    }

    pub fn gamma(&self) -> f64 {
        self.log2_gamma.exp2()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridResult {
    pub best: CvEntry,
    pub table: Vec<CvEntry>,
}

/// Fold id of every row: a seeded shuffle dealt round-robin into `folds` groups.
pub fn fold_assignment(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    rng::shuffle(&mut order, &mut rng::seeded(seed));
    let mut fold = vec![0; n];
    for (pos, &row) in order.iter().enumerate() {
        fold[row] = pos % folds;
    }
    fold
}

fn cv_rmse(x: &[Vec<f64>], y: &[f64], fold: &[usize], folds: usize, cfg: &SvrConfig) -> Result<f64> {
    let mut total = 0.0;
    for f in 0..folds {
        let (mut tx, mut ty, mut vx, mut vy) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for i in 0..x.len() {
            if fold[i] == f {
                vx.push(x[i].clone());
                vy.push(y[i]);
            } else {
                tx.push(x[i].clone());
                ty.push(y[i]);
            }
        }
        let model = train(&tx, &ty, cfg)?;
        let se: f64 = vx
            .iter()
            .zip(&vy)
            .map(|(v, t)| (model.decision(v) - t).powi(2))
            .sum();
        total += (se / vx.len() as f64).sqrt();
    }
    Ok(total / folds as f64)
}

/// Exhaustive search for the `(C, gamma)` pair with the lowest mean k-fold
/// RMSE. Ties go to the smaller C, then the smaller gamma. `base` supplies
/// epsilon, tolerance and the iteration cap.
pub fn grid_search(x: &[Vec<f64>], y: &[f64], spec: &GridSpec, base: &SvrConfig) -> Result<GridResult> {
    spec.validate()?;
    check_matrix(x)?;
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} feature rows but {} targets",
            x.len(),
            y.len()
        )));
    }
    // Every training fold needs two rows and every validation fold one.
    if x.len() < spec.folds || x.len() < 3 {
        return Err(Error::Data(format!(
            "grid search with {} folds needs at least {} rows, got {}",
            spec.folds,
            spec.folds.max(3),
            x.len()
        )));
    }
    let fold = fold_assignment(x.len(), spec.folds, spec.seed);
    let points: Vec<(f64, f64)> = spec
        .log2_c
        .iter()
        .flat_map(|&lc| spec.log2_gamma.iter().map(move |&lg| (lc, lg)))
        .collect();
    let table = points
        .par_iter()
        .map(|&(log2_c, log2_gamma)| {
            let cfg = SvrConfig {
                c: log2_c.exp2(),
                gamma: log2_gamma.exp2(),
                ..*base
            };
            let rmse = cv_rmse(x, y, &fold, spec.folds, &cfg)?;
            Ok(CvEntry {
                log2_c,
                log2_gamma,
                cv_rmse: if rmse.is_nan() { f64::INFINITY } else { rmse },
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let best = *table
        .iter()
        .min_by(|a, b| {
            a.cv_rmse
                .total_cmp(&b.cv_rmse)
                .then(a.log2_c.total_cmp(&b.log2_c))
                .then(a.log2_gamma.total_cmp(&b.log2_gamma))
        })
        .expect("grid is non-empty");
    Ok(GridResult { best, table })
}

/// Affine map between raw scores and training targets, `t = (y - lo) / (hi - lo)`.
///
/// `hi < lo` is allowed and flips orientation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TargetScale {
    pub lo: f64,
    pub hi: f64,
}

impl TargetScale {
    /// Maps the observed range onto `[0, 1]`; with `descending`, the largest
    /// raw score maps to 0.
    pub fn fit(y: &[f64], descending: bool) -> Result<Self> {
        if y.is_empty() || y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("scores must be non-empty and finite".into()));
        }
        let lo = y.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Ok(if descending {
            TargetScale { lo: hi, hi: lo }
        } else {
            TargetScale { lo, hi }
        })
    }

    fn span(&self) -> f64 {
        let s = self.hi - self.lo;
        if s == 0.0 {
            1.0
        } else {
            s
        }
    }

    pub fn forward(&self, y: f64) -> f64 {
        (y - self.lo) / self.span()
    }

    pub fn inverse(&self, t: f64) -> f64 {
        t * self.span() + self.lo
    }
}

/// Scaler, target normalization and SVR bundled for scoring raw feature vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct QualityModel {
    pub function: SimilarityFn,
    pub kind: FeatureKind,
    pub config: SvrConfig,
    pub target: TargetScale,
    pub svr: SvrModel,
}

impl QualityModel {
    /// Fits the scaler and target map on the training data, then trains with `cfg`.
    pub fn fit(
        function: SimilarityFn,
        kind: FeatureKind,
        features: &[Vec<f64>],
        scores: &[f64],
        target: TargetScale,
        cfg: &SvrConfig,
    ) -> Result<Self> {
        let scaler = fit_scaler(features)?;
        let x = scaler.apply_all(features)?;
        let y: Vec<f64> = scores.iter().map(|&s| target.forward(s)).collect();
        let mut svr = train(&x, &y, cfg)?;
        svr.scaler = scaler;
        Ok(QualityModel {
            function,
            kind,
            config: *cfg,
            target,
            svr,
        })
    }

    /// Grid-searches `(C, gamma)` on the training data, then fits with the winner.
    pub fn fit_tuned(
        function: SimilarityFn,
        kind: FeatureKind,
        features: &[Vec<f64>],
        scores: &[f64],
        target: TargetScale,
        grid: &GridSpec,
        base: &SvrConfig,
    ) -> Result<(Self, GridResult)> {
        let scaler = fit_scaler(features)?;
        let x = scaler.apply_all(features)?;
        let y: Vec<f64> = scores.iter().map(|&s| target.forward(s)).collect();
        let search = grid_search(&x, &y, grid, base)?;
        let cfg = SvrConfig {
            c: search.best.c(),
            gamma: search.best.gamma(),
            ..*base
        };
        let mut svr = train(&x, &y, &cfg)?;
        svr.scaler = scaler;
        let model = QualityModel {
            function,
            kind,
            config: cfg,
            target,
            svr,
        };
        Ok((model, search))
    }

    /// Predicted score in the units of the training scores.
    pub fn predict(&self, features: &[f64]) -> Result<f64> {
        Ok(self.target.inverse(predict(&self.svr, features)?))
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let join = |v: &[f64]| v.iter().map(|&x| fmt_f64(x)).collect::<Vec<_>>().join(" ");
        let _ = writeln!(s, "sosiq-svr-model {MODEL_VERSION}");
        let _ = writeln!(s, "similarity {}", self.function);
        let _ = writeln!(s, "features {}", self.kind);
        let _ = writeln!(s, "dim {}", self.svr.dim());
        let _ = writeln!(s, "c {}", fmt_f64(self.config.c));
        let _ = writeln!(s, "gamma {}", fmt_f64(self.svr.gamma));
        let _ = writeln!(s, "epsilon {}", fmt_f64(self.config.epsilon));
        let _ = writeln!(s, "tol {}", fmt_f64(self.config.tol));
        let _ = writeln!(s, "max_iter {}", self.config.max_iter);
        let _ = writeln!(s, "bias {}", fmt_f64(self.svr.bias));
        let _ = writeln!(s, "target_lo {}", fmt_f64(self.target.lo));
        let _ = writeln!(s, "target_hi {}", fmt_f64(self.target.hi));
        let _ = writeln!(s, "iterations {}", self.svr.stats.iterations);
        let _ = writeln!(s, "converged {}", self.svr.stats.converged);
        let _ = writeln!(s, "dual_objective {}", fmt_f64(self.svr.stats.dual_objective));
        let _ = writeln!(s, "scaler_min {}", join(self.svr.scaler.min()));
        let _ = writeln!(s, "scaler_max {}", join(self.svr.scaler.max()));
        let _ = writeln!(s, "support_vectors {}", self.svr.dual_coefs.len());
        for (coef, sv) in self.svr.dual_coefs.iter().zip(&self.svr.support_vectors) {
            let _ = writeln!(s, "{} {}", fmt_f64(*coef), join(sv));
        }
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let lines = BufReader::new(file)
            .lines()
            .collect::<std::io::Result<Vec<_>>>()
            .map_err(|e| Error::io(path, e))?;
        Self::from_lines(&lines).map_err(|e| match e {
            Error::Data(m) => Error::Data(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let lines: Vec<String> = text.lines().map(str::to_string).collect();
        Self::from_lines(&lines)
    }

    fn from_lines(lines: &[String]) -> Result<Self> {
        let mut it = lines.iter().enumerate();
        let mut field = |key: &str| -> Result<String> {
            let (no, line) = it
                .next()
                .ok_or_else(|| Error::Data(format!("model file ends before '{key}'")))?;
            let rest = line
                .strip_prefix(key)
                .and_then(|r| r.strip_prefix(' '))
                .ok_or_else(|| Error::Data(format!("line {}: expected '{key}'", no + 1)))?;
            Ok(rest.to_string())
        };
        let num = |s: String, key: &str| -> Result<f64> {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::Data(format!("bad number for '{key}': {s}")))
        };
        let int = |s: String, key: &str| -> Result<usize> {
            s.trim()
                .parse::<usize>()
                .map_err(|_| Error::Data(format!("bad integer for '{key}': {s}")))
        };
        let vec = |s: String, key: &str| -> Result<Vec<f64>> {
            s.split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|_| Error::Data(format!("bad number in '{key}': {t}"))))
                .collect()
        };

        let version = field("sosiq-svr-model")?;
        if version.trim() != MODEL_VERSION.to_string() {
            return Err(Error::Data(format!("unsupported model version {version}")));
        }
        let function: SimilarityFn = field("similarity")?.trim().parse()?;
        let kind: FeatureKind = field("features")?.trim().parse()?;
        let dim = int(field("dim")?, "dim")?;
        let c = num(field("c")?, "c")?;
        let gamma = num(field("gamma")?, "gamma")?;
        let epsilon = num(field("epsilon")?, "epsilon")?;
        let tol = num(field("tol")?, "tol")?;
        let max_iter = int(field("max_iter")?, "max_iter")?;
        let bias = num(field("bias")?, "bias")?;
        let lo = num(field("target_lo")?, "target_lo")?;
        let hi = num(field("target_hi")?, "target_hi")?;
        let iterations = int(field("iterations")?, "iterations")?;
        let converged = match field("converged")?.trim() {
            "true" => true,
            "false" => false,
            other => return Err(Error::Data(format!("bad converged flag '{other}'"))),
        };
        let dual_objective = num(field("dual_objective")?, "dual_objective")?;
        let smin = vec(field("scaler_min")?, "scaler_min")?;
        let smax = vec(field("scaler_max")?, "scaler_max")?;
        let n_sv = int(field("support_vectors")?, "support_vectors")?;
        let mut support_vectors = Vec::with_capacity(n_sv);
        let mut dual_coefs = Vec::with_capacity(n_sv);
        for k in 0..n_sv {
            let (no, line) = it
                .next()
                .ok_or_else(|| Error::Data(format!("expected {n_sv} support vectors, found {k}")))?;
            let mut v = vec(line.clone(), "support vector")?;
            if v.len() != dim + 1 {
                return Err(Error::Data(format!(
                    "line {}: support vector has {} values, expected {}",
                    no + 1,
                    v.len(),
                    dim + 1
                )));
            }
            dual_coefs.push(v.remove(0));
            support_vectors.push(v);
        }
        if smin.len() != dim || smax.len() != dim {
            return Err(Error::Data("scaler length does not match dim".into()));
        }
        let scaler = Scaler::from_bounds(smin, smax)?;
        Ok(QualityModel {
            function,
            kind,
            config: SvrConfig {
                c,
                gamma,
                epsilon,
                tol,
                max_iter,
            },
            target: TargetScale { lo, hi },
            svr: SvrModel {
                support_vectors,
                dual_coefs,
                bias,
                gamma,
                scaler,
                stats: TrainStats {
                    iterations,
                    converged,
                    dual_objective,
                },
            },
        })
    }
}

pub const MODEL_VERSION: u32 = 1;
