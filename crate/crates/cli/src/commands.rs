use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use sosiq_core::bench::{self, DistortionSpec, Family, FeatureCache, Method, SplitSpec, Training};
use sosiq_core::features::{fmt_f64, write_feature_rows};
use sosiq_core::similarity::{SimilarityConfig, SsimParams};
use sosiq_core::svr::{log2_range, GridSpec, QualityModel, SvrConfig, TargetScale};
use sosiq_core::{Error, Result};

use crate::args::*;
use crate::config::RunConfig;

pub const CACHE_ENV: &str = "SOSIQ_CACHE";

pub fn dispatch(cmd: Command, argv: &[String]) -> Result<()> {
    match cmd {
        Command::Extract(a) => extract(a, argv),
        Command::Train(a) => train(a, argv),
        Command::Predict(a) => predict(a),
        Command::Benchmark(a) => benchmark(a, argv),
        Command::Crossdb(a) => crossdb(a, argv),
        Command::Distort(a) => distort(a, argv),
        Command::Synth(a) => synth(a, argv),
        Command::Replay(_) => unreachable!("handled in main"),
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn method(a: &MethodArgs) -> Result<Method> {
    let similarity = SimilarityConfig {
        ssim: SsimParams::default(),
        rnse_window: a.rnse_window,
    };
    sosiq_core::similarity::RnseParams::new(0.5, a.rnse_window)?;
    Ok(Method {
        kind: a.features,
        function: a.function,
        similarity,
    })
}

fn parse_range(text: &str, what: &str) -> Result<Vec<f64>> {
    let parts: Vec<f64> = text
        .split(':')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Parameter(format!("{what}: expected START:END:STEP, got '{text}'")))?;
    match parts[..] {
        [v] => Ok(vec![v]),
        [s, e, st] => log2_range(s, e, st),
        _ => Err(Error::Parameter(format!("{what}: expected START:END:STEP, got '{text}'"))),
    }
}

fn training(a: &TrainingArgs, seed: u64) -> Result<Training> {
    let grid = GridSpec {
        log2_c: parse_range(&a.log2c, "--log2c")?,
        log2_gamma: parse_range(&a.log2g, "--log2g")?,
        folds: a.folds,
        seed,
    };
    grid.validate()?;
    let svr = SvrConfig {
        epsilon: a.epsilon,
        tol: a.tol,
        max_iter: a.max_iter,
        ..SvrConfig::default()
    };
    svr.validate()?;
    Ok(Training { grid, svr })
}

fn cache() -> Result<FeatureCache> {
    match std::env::var_os(CACHE_ENV) {
        Some(dir) if !dir.is_empty() => FeatureCache::with_dir(PathBuf::from(dir)),
        _ => Ok(FeatureCache::in_memory()),
    }
}

fn record_method(c: &mut RunConfig, m: &Method) {
    c.set("fn", m.function)
        .set("features", m.kind)
        .set("ssim_window_scale", fmt_f64(m.similarity.ssim.window_scale))
        .set("rnse_window", m.similarity.rnse_window);
}

fn record_training(c: &mut RunConfig, t: &Training) {
    let list = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
    c.set("log2c", list(&t.grid.log2_c))
        .set("log2g", list(&t.grid.log2_gamma))
        .set("folds", t.grid.folds)
        .set("epsilon", fmt_f64(t.svr.epsilon))
        .set("tol", fmt_f64(t.svr.tol))
        .set("max_iter", t.svr.max_iter);
}

fn sidecar(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".config.txt");
    out.with_file_name(name)
}

fn extract(a: ExtractArgs, argv: &[String]) -> Result<()> {
    let m = method(&a.method)?;
    let mut items: Vec<(String, PathBuf)> = a
        .images
        .iter()
        .map(|p| (p.to_string_lossy().into_owned(), p.clone()))
        .collect();
    if let Some(manifest) = &a.manifest {
        for r in bench::load_manifest(manifest)? {
            items.push((r.image_path.to_string_lossy().into_owned(), r.image_path));
        }
    }
    let paths: Vec<PathBuf> = items.iter().map(|(_, p)| p.clone()).collect();
    let features = cache()?.features_many(&paths, &m)?;
    let rows: Vec<(String, Vec<f64>)> = items.into_iter().map(|(id, _)| id).zip(features).collect();

    // Write beside the target and rename, so a failure never leaves a partial file.
    let tmp = sidecar(&a.out).with_extension("partial");
    let result = std::fs::File::create(&tmp)
        .map_err(io_err(&tmp))
        .and_then(|f| write_feature_rows(std::io::BufWriter::new(f), m.kind, &rows))
        .and_then(|_| std::fs::rename(&tmp, &a.out).map_err(io_err(&a.out)));
    if let Err(e) = result {
        let _ = std::fs::remove_file(&tmp);
        return Err(e);
    }

    let mut c = RunConfig::new("extract");
    record_method(&mut c, &m);
    c.set("images", rows.len()).set("out", a.out.display());
    c.write(&sidecar(&a.out), argv)
}

fn train(a: TrainArgs, argv: &[String]) -> Result<()> {
    let m = method(&a.method)?;
    let t = training(&a.training, a.seed)?;
    let records = bench::scored(&bench::load_manifest(&a.manifest)?);
    if records.is_empty() {
        return Err(Error::Data(format!("{}: no scored images", a.manifest.display())));
    }
    let paths: Vec<PathBuf> = records.iter().map(|r| r.image_path.clone()).collect();
    let x = cache()?.features_many(&paths, &m)?;
    let y: Vec<f64> = records.iter().map(|r| r.score).collect();
    let target = TargetScale::fit(&y, false)?;
    let (model, search) = QualityModel::fit_tuned(m.function, m.kind, &x, &y, target, &t.grid, &t.svr)?;
    model.save(&a.out)?;

    let mut c = RunConfig::new("train");
    record_method(&mut c, &m);
    record_training(&mut c, &t);
    c.set("manifest", a.manifest.display())
        .set("seed", a.seed)
        .set("images", records.len())
        .set("chosen_log2c", search.best.log2_c)
        .set("chosen_log2g", search.best.log2_gamma)
        .set("converged", model.svr.stats.converged)
        .set("out", a.out.display());
    c.write(&sidecar(&a.out), argv)
}

fn predict(a: PredictArgs) -> Result<()> {
    let model = QualityModel::load(&a.model)?;
    let m = Method::new(model.kind, model.function);
    let features = cache()?.features_many(&a.images, &m)?;
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for (p, f) in a.images.iter().zip(&features) {
        let score = model.predict(f)?;
        writeln!(out, "{},{}", p.display(), fmt_f64(score)).map_err(io_err(Path::new("<stdout>")))?;
    }
    Ok(())
}

fn benchmark(a: BenchmarkArgs, argv: &[String]) -> Result<()> {
    let m = method(&a.method)?;
    let t = training(&a.training, a.seed)?;
    let split = SplitSpec {
        train_fraction: a.train_frac,
        repeats: a.repeats,
        seed: a.seed,
    };
    split.validate()?;
    let records = bench::load_manifest(&a.manifest)?;
    let report = bench::run_benchmark(&records, &m, &split, &t, &cache()?)?;
    report.write_bundle(&a.out)?;

    let mut c = RunConfig::new("benchmark");
    record_method(&mut c, &m);
    record_training(&mut c, &t);
    c.set("manifest", a.manifest.display())
        .set("seed", a.seed)
        .set("repeats", a.repeats)
        .set("train_frac", a.train_frac)
        .set("out", a.out.display());
    c.write(&a.out.join("config.txt"), argv)?;
    println!(
        "{}: median srcc {:.4} plcc {:.4} rmse {:.4} over {} splits",
        m,
        report.overall.srcc,
        report.overall.plcc,
        report.overall.rmse,
        report.splits.len()
    );
    Ok(())
}

fn crossdb(a: CrossdbArgs, argv: &[String]) -> Result<()> {
    let m = method(&a.method)?;
    let t = training(&a.training, a.seed)?;
    let train = bench::load_manifest(&a.train)?;
    let test = bench::load_manifest(&a.test)?;
    let r = bench::cross_database(&train, &test, &m, &t, &cache()?)?;
    std::fs::create_dir_all(&a.out).map_err(io_err(&a.out))?;
    let path = a.out.join("crossdb.csv");
    let body = format!(
        "features,similarity,srcc,plcc,rmse,n\n{},{},{},{},{},{}\n",
        m.kind,
        m.function,
        fmt_f64(r.srcc),
        fmt_f64(r.plcc),
        fmt_f64(r.rmse),
        r.n
    );
    std::fs::write(&path, body).map_err(io_err(&path))?;

    let mut c = RunConfig::new("crossdb");
    record_method(&mut c, &m);
    record_training(&mut c, &t);
    c.set("train", a.train.display())
        .set("test", a.test.display())
        .set("seed", a.seed)
        .set("out", a.out.display());
    c.write(&a.out.join("config.txt"), argv)?;
    println!("{m}: srcc {:.4} plcc {:.4} rmse {:.4} (n = {})", r.srcc, r.plcc, r.rmse, r.n);
    Ok(())
}

fn distortion_specs(a: &DistortArgs) -> Result<Vec<DistortionSpec>> {
    let mut custom = BTreeMap::new();
    for item in &a.levels {
        let (fam, list) = item
            .split_once('=')
            .ok_or_else(|| Error::Parameter(format!("--level expects FAMILY=S1,S2,..., got '{item}'")))?;
        let family: Family = fam.parse()?;
        let levels = list
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| Error::Parameter(format!("--level {fam}: bad strength list '{list}'")))?;
        custom.insert(family, levels);
    }
    let families: Vec<Family> = if a.families.is_empty() {
        Family::ALL.to_vec()
    } else {
        a.families.iter().map(|f| f.parse()).collect::<Result<_>>()?
    };
    families
        .into_iter()
        .map(|f| match custom.remove(&f) {
            Some(levels) => DistortionSpec::new(f, levels),
            None => Ok(DistortionSpec::default_for(f)),
        })
        .collect()
}

fn distort(a: DistortArgs, argv: &[String]) -> Result<()> {
    let specs = distortion_specs(&a)?;
    let records = bench::generate_distortions(&a.pristine, &specs, &a.out, a.seed)?;
    let mut c = RunConfig::new("distort");
    c.set("pristine", a.pristine.display()).set("seed", a.seed);
    for s in &specs {
        let levels: Vec<String> = s.levels.iter().map(|v| v.to_string()).collect();
        c.set(&format!("levels.{}", s.family), levels.join(","));
    }
    c.set("records", records.len()).set("out", a.out.display());
    c.write(&a.out.join("config.txt"), argv)?;
    println!("wrote {} images and {}", records.len(), a.out.join("manifest.csv").display());
    Ok(())
}

fn synth(a: SynthArgs, argv: &[String]) -> Result<()> {
    if a.count == 0 {
        return Err(Error::Parameter("--count must be at least 1".into()));
    }
    let min = sosiq_core::imgproc::MIN_SIDE;
    if a.size < min {
        return Err(Error::Parameter(format!("--size must be at least {min}")));
    }
    let paths = bench::write_pristine_set(&a.out, a.count, a.size, a.seed)?;
    let mut c = RunConfig::new("synth");
    c.set("count", a.count)
        .set("size", a.size)
        .set("seed", a.seed)
        .set("out", a.out.display());
    c.write(&a.out.join("config.txt"), argv)?;
    println!("wrote {} images to {}", paths.len(), a.out.display());
    Ok(())
}
