//! Property and oracle checks that report failures as values, so the same
//! code drives both `cargo test` and the acceptance harness.

use rand::Rng;
use sosiq_core::bench::{split_by_reference, ManifestRecord, ScoreKind, SplitSpec};
use sosiq_core::eval;
use sosiq_core::features::{extract_features, lsm_histogram, FeatureKind};
use sosiq_core::imgproc::{
    gaussian_kernel, log_response, log_response_with, smooth, smooth_grid, translate, zero_crossings, GrayImage,
    Grid, LogKernel, Translation,
};
use sosiq_core::similarity::{
    compute_all_lsms, mse_lsm, rnse_lsm, ssim_components, ssim_lsm, RnseParams, SimilarityConfig, SimilarityFn,
    SsimParams,
};
use sosiq_core::svr::{self, SvrConfig};

use super::*;

pub type Check = std::result::Result<(), String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

const FUNCTIONS: [SimilarityFn; 3] = [SimilarityFn::Ssim, SimilarityFn::Rnse, SimilarityFn::Mse];

fn image(w: usize, h: usize, seed: u64) -> GrayImage {
    GrayImage::new(w, h, random_pixels(w, h, seed)).unwrap()
}

/// Random image with some structure: a smooth pattern plus noise, so edge
/// maps and similarity values are not all degenerate.
fn textured(w: usize, h: usize, seed: u64) -> GrayImage {
    let mut r = rng(seed);
    let (fx, fy, amp) = (r.random_range(0.05..0.8), r.random_range(0.05..0.8), r.random_range(10.0..100.0));
    let noise = r.random_range(0.0..40.0);
    let data = (0..w * h)
        .map(|i| {
            let (y, x) = ((i / w) as f64, (i % w) as f64);
            (128.0 + amp * (fx * x).sin() * (fy * y).cos() + r.random_range(-noise..=noise)).clamp(0.0, 255.0)
        })
        .collect();
    GrayImage::new(w, h, data).unwrap()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn err(e: sosiq_core::Error) -> String {
    e.to_string()
}

// ---------------------------------------------------------------- invariants

pub fn kernel_normalization(cases: usize) -> Check {
    let mut r = rng(11);
    for case in 0..cases {
        let s = r.random_range(0.2..5.0);
        let k = gaussian_kernel(s).map_err(err)?;
        let sum: f64 = k.taps().iter().sum();
        ensure!((sum - 1.0).abs() <= 1e-12, "case {case}: gaussian s={s} sums to {sum}");
        let rad = k.radius() as isize;
        for dy in -rad..=rad {
            for dx in -rad..=rad {
                let t = k.tap(dy, dx);
                let mirrored = [k.tap(-dy, dx), k.tap(dy, -dx), k.tap(dx, dy)];
                ensure!(mirrored.iter().all(|&m| m == t), "case {case}: s={s} asymmetric at ({dy},{dx})");
            }
        }
        let lk = LogKernel::new(s).map_err(err)?;
        let lsum: f64 = lk.taps().iter().sum();
        ensure!(lsum.abs() <= 1e-9, "case {case}: LOG s={s} sums to {lsum}");
    }
    Ok(())
}

pub fn smoothing_is_linear(cases: usize) -> Check {
    let mut r = rng(12);
    for case in 0..cases {
        let s = [0.5, 1.0, 2.0, 4.0][case % 4];
        let k = gaussian_kernel(s).map_err(err)?;
        let x = random_pixels(32, 32, 1000 + case as u64);
        let y = random_pixels(32, 32, 5000 + case as u64);
        let (a, b) = (r.random_range(-3.0..3.0), r.random_range(-3.0..3.0));
        let mix: Vec<f64> = x.iter().zip(&y).map(|(u, v)| a * u + b * v).collect();
        let grid = |d: Vec<f64>| Grid::new(32, 32, d).unwrap();
        let lhs = smooth_grid(&grid(mix), &k);
        let sx = smooth_grid(&grid(x), &k);
        let sy = smooth_grid(&grid(y), &k);
        let rhs: Vec<f64> = sx.data().iter().zip(sy.data()).map(|(u, v)| a * u + b * v).collect();
        let d = max_abs_diff(lhs.data(), &rhs);
        ensure!(d <= 1e-9, "case {case}: linearity error {d}");
    }
    Ok(())
}

pub fn translation_round_trip(cases: usize) -> Check {
    let mut r = rng(13);
    for case in 0..cases {
        let (w, h) = (r.random_range(16..28), r.random_range(16..28));
        let img = image(w, h, 200 + case as u64);
        let t = Translation::new(r.random_range(-2..=2), r.random_range(-2..=2)).map_err(err)?;
        let back = translate(&translate(&img, t), t.negated());
        let (mr, mc) = (t.dm().unsigned_abs() as usize, t.dn().unsigned_abs() as usize);
        for row in mr..h - mr {
            for col in mc..w - mc {
                ensure!(
                    back.get(row, col) == img.get(row, col),
                    "case {case}: ({},{}) not recovered at ({row},{col})",
                    t.dm(),
                    t.dn()
                );
            }
        }
    }
    Ok(())
}

pub fn log_response_properties(cases: usize) -> Check {
    let mut r = rng(14);
    for case in 0..cases {
        let s = r.random_range(0.3..2.5);
        let v = r.random_range(0.0..=255.0);
        let flat = GrayImage::constant(16, 16, v).map_err(err)?;
        let resp = log_response(&flat, s).map_err(err)?;
        let worst = resp.data().iter().fold(0.0f64, |m, x| m.max(x.abs()));
        ensure!(worst <= 1e-9, "case {case}: constant {v} at s={s} gives response {worst}");

        let img = textured(20, 20, 300 + case as u64);
        let resp = log_response_with(img.as_grid(), &LogKernel::new(s).map_err(err)?);
        let k = r.random_range(0.01..100.0);
        let scaled = resp.map(|x| k * x);
        let a = zero_crossings(&resp).map_err(err)?;
        let b = zero_crossings(&scaled).map_err(err)?;
        ensure!(a.bits() == b.bits(), "case {case}: edges change under scaling by {k}");
        ensure!(a.width() == 20 && a.height() == 20, "case {case}: edge map has wrong shape");
    }
    Ok(())
}

pub fn lsm_ranges_and_shapes(cases: usize) -> Check {
    let cfg = SimilarityConfig::default();
    for case in 0..cases {
        let mut r = rng(15 + case as u64);
        let (w, h) = (r.random_range(16..26), r.random_range(16..26));
        let img = if case % 2 == 0 { textured(w, h, case as u64) } else { image(w, h, case as u64) };
        let f = FUNCTIONS[case % 3];
        let maps = compute_all_lsms(&img, f, &cfg).map_err(err)?;
        ensure!(maps.len() == 8, "case {case}: {} maps", maps.len());
        let (lo, hi) = f.declared_range();
        for (k, m) in maps.iter().enumerate() {
            ensure!(m.width() == w && m.height() == h, "case {case}: map {k} has wrong shape");
            ensure!(
                m.values().iter().all(|v| v.is_finite() && *v >= lo && *v <= hi),
                "case {case}: {f} map {k} leaves [{lo}, {hi}]"
            );
        }
    }
    Ok(())
}

pub fn lsm_symmetry(cases: usize) -> Check {
    let rp = RnseParams::new(0.5, 7).map_err(err)?;
    for case in 0..cases {
        let mut r = rng(16 + case as u64);
        let (w, h) = (r.random_range(16..24), r.random_range(16..24));
        let a = textured(w, h, 2 * case as u64);
        let b = if case % 2 == 0 {
            textured(w, h, 2 * case as u64 + 1)
        } else {
            smooth(&a, &gaussian_kernel(r.random_range(0.5..3.0)).map_err(err)?)
        };
        let p = SsimParams::standard(r.random_range(0.5..3.0));
        ensure!(
            ssim_lsm(&a, &b, &p).map_err(err)? == ssim_lsm(&b, &a, &p).map_err(err)?,
            "case {case}: ssim not symmetric"
        );
        ensure!(
            rnse_lsm(&a, &b, &rp).map_err(err)? == rnse_lsm(&b, &a, &rp).map_err(err)?,
            "case {case}: rnse not symmetric"
        );
        ensure!(
            mse_lsm(&a, &b).map_err(err)? == mse_lsm(&b, &a).map_err(err)?,
            "case {case}: mse not symmetric"
        );
    }
    Ok(())
}

pub fn ssim_shift_invariance(cases: usize) -> Check {
    for case in 0..cases {
        let mut r = rng(17 + case as u64);
        let (w, h) = (r.random_range(16..24), r.random_range(16..24));
        let k = r.random_range(1.0..55.0);
        let base = |seed: u64| {
            let px: Vec<f64> = random_pixels(w, h, seed).iter().map(|v| v * 200.0 / 255.0).collect();
            GrayImage::new(w, h, px).unwrap()
        };
        let (i, j) = (base(3 * case as u64), base(3 * case as u64 + 1));
        let shift = |g: &GrayImage| GrayImage::new(w, h, g.data().iter().map(|v| v + k).collect()).unwrap();
        let p = SsimParams::standard(r.random_range(0.5..2.0));
        let before = ssim_components(&i, &j, &p).map_err(err)?;
        let after = ssim_components(&shift(&i), &shift(&j), &p).map_err(err)?;
        let dc = max_abs_diff(before.contrast.data(), after.contrast.data());
        let ds = max_abs_diff(before.structure.data(), after.structure.data());
        ensure!(dc < 1e-8 && ds < 1e-8, "case {case}: shift by {k} moves contrast {dc}, structure {ds}");
    }
    Ok(())
}

pub fn histogram_normalization(cases: usize) -> Check {
    let mut r = rng(18);
    for case in 0..cases {
        let n = r.random_range(1..500);
        let v: Vec<f64> = (0..n)
            .map(|_| if r.random_range(0..4) == 0 { 1.0 } else { r.random_range(0.0..=1.0) })
            .collect();
        let h = lsm_histogram(&v).map_err(err)?;
        let sum: f64 = h.bins.iter().sum();
        ensure!((sum - 1.0).abs() <= 1e-12, "case {case}: bins sum to {sum}");
        ensure!(h.bins.iter().all(|b| *b >= 0.0), "case {case}: negative bin");
    }
    Ok(())
}

pub fn feature_vector_properties(cases: usize) -> Check {
    let cfg = SimilarityConfig::default();
    for case in 0..cases {
        let mut r = rng(19 + case as u64);
        let (w, h) = (r.random_range(16..24), r.random_range(16..24));
        let img = textured(w, h, 7 * case as u64);
        let f = FUNCTIONS[case % 3];
        let kind = if case % 2 == 0 { FeatureKind::H } else { FeatureKind::Md };
        let v = extract_features(&img, kind, f, &cfg).map_err(err)?;
        ensure!(v.values.len() == kind.dim(), "case {case}: length {}", v.values.len());
        match kind {
            FeatureKind::H => {
                for (b, block) in v.values.chunks(10).enumerate() {
                    let s: f64 = block.iter().sum();
                    ensure!((s - 1.0).abs() <= 1e-12, "case {case}: block {b} sums to {s}");
                }
            }
            FeatureKind::Md => {
                for pair in v.values.chunks(2) {
                    ensure!((0.0..=1.0).contains(&pair[0]), "case {case}: mean {}", pair[0]);
                    ensure!((0.0..=0.5).contains(&pair[1]), "case {case}: std {}", pair[1]);
                }
            }
        }
        let again = extract_features(&img, kind, f, &cfg).map_err(err)?;
        let same = v.values.iter().zip(&again.values).all(|(a, b)| a.to_bits() == b.to_bits());
        ensure!(same, "case {case}: extraction not bitwise repeatable");
    }
    Ok(())
}

fn svr_problem(seed: u64, n: usize, d: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut r = rng(seed);
    let x: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| r.random::<f64>()).collect()).collect();
    let y = (0..n).map(|_| r.random::<f64>()).collect();
    (x, y)
}

pub fn svr_dual_constraints(cases: usize) -> Check {
    for case in 0..cases {
        let mut r = rng(20 + case as u64);
        let n = r.random_range(2..25);
        let (x, y) = svr_problem(4000 + case as u64, n, 3);
        let cfg = SvrConfig {
            c: 2f64.powi(r.random_range(-2..8)),
            gamma: 2f64.powi(r.random_range(-4..3)),
            epsilon: r.random_range(0.0..0.2),
            ..Default::default()
        };
        let m = svr::train(&x, &y, &cfg).map_err(err)?;
        let sum: f64 = m.dual_coefs.iter().sum();
        ensure!(sum.abs() <= 1e-6, "case {case}: coefficients sum to {sum}");
        ensure!(
            m.dual_coefs.iter().all(|a| a.abs() <= cfg.c + 1e-9),
            "case {case}: coefficient outside [-C, C]"
        );
    }
    Ok(())
}

fn fake_records(refs: usize, per_ref: usize) -> Vec<ManifestRecord> {
    (0..refs)
        .flat_map(|r| {
            (0..per_ref).map(move |k| ManifestRecord {
                image_path: format!("img_{r}_{k}.png").into(),
                reference_id: format!("ref{r:02}"),
                distortion: "d".into(),
                level: k as u32 + 1,
                score: k as f64,
                score_kind: ScoreKind::Dmos,
            })
        })
        .collect()
}

pub fn split_disjointness(cases: usize) -> Check {
    let mut r = rng(21);
    for case in 0..cases {
        let refs = r.random_range(2..15);
        let records = fake_records(refs, r.random_range(1..5));
        let spec = SplitSpec {
            train_fraction: r.random_range(0.05..0.95),
            repeats: r.random_range(1..6),
            seed: r.random(),
        };
        let splits = split_by_reference(&records, &spec).map_err(err)?;
        ensure!(splits.len() == spec.repeats, "case {case}: {} splits", splits.len());
        let want_train = ((spec.train_fraction * refs as f64).round() as usize).clamp(1, refs - 1);
        for s in &splits {
            ensure!(s.train_refs.len() == want_train, "case {case}: {} train refs", s.train_refs.len());
            ensure!(
                s.train_refs.iter().all(|t| !s.test_refs.contains(t)),
                "case {case}: a reference is on both sides"
            );
            ensure!(s.train.len() + s.test.len() == records.len(), "case {case}: rows lost");
            for &i in &s.train {
                ensure!(s.train_refs.contains(&records[i].reference_id), "case {case}: train row from test ref");
            }
            for &i in &s.test {
                ensure!(s.test_refs.contains(&records[i].reference_id), "case {case}: test row from train ref");
            }
        }
        ensure!(
            splits == split_by_reference(&records, &spec).map_err(err)?,
            "case {case}: splits not deterministic"
        );
    }
    Ok(())
}

pub fn metric_bounds(cases: usize) -> Check {
    let mut r = rng(22);
    for case in 0..cases {
        let n = r.random_range(3..40);
        let a: Vec<f64> = (0..n).map(|_| r.random_range(-5.0..5.0)).collect();
        let b: Vec<f64> = (0..n).map(|_| r.random_range(-5.0..5.0)).collect();
        let p = eval::pearson(&a, &b).map_err(err)?;
        ensure!(p == eval::pearson(&b, &a).map_err(err)?, "case {case}: pearson not symmetric");
        ensure!(p.abs() <= 1.0 + 1e-12, "case {case}: |pearson| = {}", p.abs());
        let s = eval::spearman(&a, &b).map_err(err)?;
        ensure!(s.abs() <= 1.0 + 1e-12, "case {case}: |spearman| = {}", s.abs());
        let ta: Vec<f64> = a.iter().map(|v| v.powi(3) + (0.3 * v).exp()).collect();
        let tb: Vec<f64> = b.iter().map(|v| (v + 6.0).ln()).collect();
        ensure!(
            s == eval::spearman(&ta, &tb).map_err(err)?,
            "case {case}: spearman changes under monotone transforms"
        );
        let rep = eval::evaluate(&a, &b).map_err(err)?;
        ensure!(
            rep.srcc.abs() <= 1.0 + 1e-12 && rep.plcc.abs() <= 1.0 + 1e-12 && rep.rmse >= 0.0 && rep.rmse.is_finite(),
            "case {case}: evaluate out of bounds {rep:?}"
        );
    }
    Ok(())
}

/// Every randomized property, each over `cases` inputs.
pub fn invariants(cases: usize) -> Vec<(&'static str, Check)> {
    vec![
        ("kernel normalization", kernel_normalization(cases)),
        ("smoothing linearity", smoothing_is_linear(cases)),
        ("translation round trip", translation_round_trip(cases)),
        ("LOG response", log_response_properties(cases)),
        ("LSM ranges", lsm_ranges_and_shapes(cases)),
        ("LSM symmetry", lsm_symmetry(cases)),
        ("SSIM shift invariance", ssim_shift_invariance(cases)),
        ("histogram normalization", histogram_normalization(cases)),
        ("feature vectors", feature_vector_properties(cases)),
        ("SVR dual constraints", svr_dual_constraints(cases)),
        ("split disjointness", split_disjointness(cases)),
        ("metric bounds", metric_bounds(cases)),
    ]
}

// ------------------------------------------------------------------- oracles

pub fn filters_match_brute_force(images: usize) -> Check {
    for case in 0..images {
        let px = random_pixels(16, 16, 9000 + case as u64);
        let img = GrayImage::new(16, 16, px.clone()).unwrap();
        for s in [0.5, 1.0, 2.0] {
            let (rad, w) = gaussian_weights(s);
            let want = correlate(&px, 16, 16, rad, &*w);
            let got = smooth(&img, &gaussian_kernel(s).map_err(err)?);
            let d = max_abs_diff(got.data(), &want);
            ensure!(d < 1e-9, "image {case}: smoothing s={s} off by {d}");

            let (rad, w) = log_weights(s);
            let want = correlate(&px, 16, 16, rad, &*w);
            let got = log_response(&img, s).map_err(err)?;
            let d = max_abs_diff(got.data(), &want);
            ensure!(d < 1e-9, "image {case}: LOG s={s} off by {d}");
        }
    }
    Ok(())
}

pub fn smo_matches_qp(problems: usize) -> Check {
    for case in 0..problems {
        let seed = case as u64;
        let (x, y) = svr_problem(100 + seed, 8, 2);
        let c = [4.0, 10.0, 32.0][case % 3];
        let gamma = [0.5, 2.0][case % 2];
        let cfg = SvrConfig {
            c,
            gamma,
            epsilon: 0.05,
            tol: 1e-10,
            max_iter: 1_000_000,
        };
        let model = svr::train(&x, &y, &cfg).map_err(err)?;
        let oracle = svr_dual_oracle(&x, &y, c, gamma, 0.05, 100_000);
        let d = (model.stats.dual_objective - oracle.objective).abs();
        ensure!(d < 1e-6, "problem {case}: dual objective differs by {d}");
        let (held, _) = svr_problem(900 + seed, 5, 2);
        for q in held.iter().chain(&x) {
            let a = svr::predict(&model, q).map_err(err)?;
            let b = qp_predict(&x, &oracle, gamma, q);
            ensure!((a - b).abs() < 1e-4, "problem {case}: prediction {a} vs {b}");
        }
    }
    Ok(())
}

pub fn correlations_match_formulas(vectors: usize) -> Check {
    let mut r = rng(23);
    let mut done = 0;
    while done < vectors {
        let n = r.random_range(5..60);
        let mut tied = || (0..n).map(|_| r.random_range(0..8) as f64 * 0.5).collect::<Vec<f64>>();
        let (a, b) = (tied(), tied());
        if a.iter().all(|v| *v == a[0]) || b.iter().all(|v| *v == b[0]) {
            continue;
        }
        let s = eval::spearman(&a, &b).map_err(err)?;
        let want = rank_pearson(&a, &b);
        ensure!((s - want).abs() < 1e-12, "vector {done}: spearman {s} vs {want}");
        let p = eval::pearson(&a, &b).map_err(err)?;
        let want = covariance_pearson(&a, &b);
        ensure!((p - want).abs() < 1e-12, "vector {done}: pearson {p} vs {want}");
        done += 1;
    }
    Ok(())
}

// ------------------------------------------------------------------- anchors

pub fn anchors() -> Check {
    let img = textured(32, 32, 77);
    let ssim = ssim_lsm(&img, &img, &SsimParams::default()).map_err(err)?;
    ensure!(ssim.values().iter().all(|v| *v == 1.0), "SSIM of an image with itself is not 1 everywhere");
    let mse = mse_lsm(&img, &img).map_err(err)?;
    ensure!(mse.values().iter().all(|v| *v == 0.0), "MSE of an image with itself is not 0 everywhere");

    let flat = GrayImage::constant(32, 32, 93.0).map_err(err)?;
    let h = extract_features(&flat, FeatureKind::H, SimilarityFn::Ssim, &SimilarityConfig::default()).map_err(err)?;
    let mut want = Vec::new();
    for _ in 0..8 {
        want.extend_from_slice(&[0.0; 9]);
        want.push(1.0);
    }
    ensure!(h.values == want, "SOS-H(ssim) of a constant image is {:?}", h.values);
    Ok(())
}

// ------------------------------------------------------------------ logistic

pub fn logistic_self_consistency() -> Check {
    let b = [60.0, 0.1, 50.0, 0.2, 10.0];
    let mut r = rng(24);
    let pred: Vec<f64> = (0..80).map(|_| r.random_range(0.0..100.0)).collect();
    let mos: Vec<f64> = pred.iter().map(|&x| vqeg_logistic(b, x)).collect();
    let fit = eval::fit_logistic(&pred, &mos).map_err(err)?;
    let rmse = (pred.iter().zip(&mos).map(|(&x, &y)| (fit.apply(x) - y).powi(2)).sum::<f64>() / 80.0).sqrt();
    ensure!(rmse < 1e-6, "noise-free refit RMSE {rmse}");

    let mos: Vec<f64> = (0..60).map(|_| r.random_range(0.0..100.0)).collect();
    let pred: Vec<f64> = mos.iter().map(|m| (m / 30.0).sqrt() + r.random_range(-0.2..0.2)).collect();
    let base = eval::evaluate(&pred, &mos).map_err(err)?;
    for k in 0..20 {
        let a = r.random_range(0.01..100.0) * if r.random::<bool>() { 1.0 } else { -1.0 };
        let c = r.random_range(-500.0..500.0);
        let scaled: Vec<f64> = pred.iter().map(|p| a * p + c).collect();
        let rep = eval::evaluate(&scaled, &mos).map_err(err)?;
        let d = (rep.plcc - base.plcc).abs();
        ensure!(d < 1e-6, "rescaling {k} (a={a}, c={c}) moves PLCC by {d}");
    }
    Ok(())
}
