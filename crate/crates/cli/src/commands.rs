use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use qednet::data::{
    extract_patches, normalize, pad_even, read_mask, read_raster, synth_scene, write_atomic,
    write_mask, write_raster, Mask, Raster, SynthSpec,
};
use qednet::indices::{classify_index, compute_index, Direction, SpectralIndex};
use qednet::metrics::{confusion, report_csv, report_table, ConfusionMatrix, MetricsRow};
use qednet::model::{self, apply_threshold, auto_threshold, ModelParams};
use qednet::train::{self, Sample, TrainConfig};
use qednet::Error;

use crate::{EvaluateArgs, IndexArgs, PredictArgs, SynthArgs, TrainArgs};

/// Failure classes with distinct exit codes.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags or paths: exit 2.
    Config(String),
    /// Unreadable or inconsistent input files: exit 3.
    Data(String),
    /// Anything else: exit 1.
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Runtime(_) => 1,
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) | CliError::Data(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        if e.is_data_error() {
            CliError::Data(e.to_string())
        } else {
            CliError::Runtime(e.to_string())
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn config(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn data(msg: impl Into<String>) -> CliError {
    CliError::Data(msg.into())
}

fn require_file(p: &Path) -> CliResult {
    if p.is_file() {
        Ok(())
    } else {
        Err(config(format!("{}: no such file", p.display())))
    }
}

fn require_dir(p: &Path) -> CliResult {
    if p.is_dir() {
        Ok(())
    } else {
        Err(config(format!("{}: no such directory", p.display())))
    }
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn sibling_mask(scene: &Path) -> PathBuf {
    scene.with_extension("mqm")
}

/// Reads a scene for the model: 12 bands, normalized by its header scale.
fn load_scene(path: &Path) -> CliResult<Raster> {
    let r = read_raster(path)?;
    if r.bands() != 12 {
        return Err(data(format!(
            "{}: model input needs 12 bands, found {}",
            path.display(),
            r.bands()
        )));
    }
    if r.scale() == 1.0 {
        return Ok(r);
    }
    let n = normalize(&r, r.scale())?;
    if n.clamped > 0 {
        log::warn!("{}: {} values clamped to [0, 1]", path.display(), n.clamped);
    }
    Ok(n.raster)
}

fn load_pair(scene: &Path) -> CliResult<(Raster, Mask)> {
    let raster = load_scene(scene)?;
    let mpath = sibling_mask(scene);
    if !mpath.is_file() {
        return Err(data(format!("{}: mask not found", mpath.display())));
    }
    let mask = read_mask(&mpath)?;
    if (mask.height(), mask.width()) != (raster.height(), raster.width()) {
        return Err(data(format!(
            "{}: mask is {}x{} but scene is {}x{}",
            mpath.display(),
            mask.height(),
            mask.width(),
            raster.height(),
            raster.width()
        )));
    }
    Ok((raster, mask))
}

fn scenes_in(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "mqr"))
        .collect();
    out.sort();
    if out.is_empty() {
        return Err(config(format!("{}: no .mqr scenes", dir.display())));
    }
    Ok(out)
}

/// Padded whole-scene sample with padding marked invalid.
fn scene_sample(raster: &Raster, mask: &Mask) -> CliResult<Sample> {
    let (h, w) = (raster.height(), raster.width());
    let size = (h + h % 2).max(w + w % 2);
    let mut p = extract_patches(raster, Some(mask), size, size)?;
    if p.len() != 1 {
        return Err(CliError::Runtime(
            "scene tiling produced several tiles".into(),
        ));
    }
    Ok(Sample::from_patch(&p.remove(0))?)
}

fn load_sets(a: &TrainArgs) -> CliResult<(Vec<Sample>, Vec<Sample>)> {
    require_dir(&a.train_dir)?;
    require_dir(&a.val_dir)?;
    if a.size == 0 || a.size % 2 != 0 {
        return Err(config(format!(
            "--size must be a positive even number, got {}",
            a.size
        )));
    }
    if a.epochs == 0 || a.batch == 0 || a.feat_width == 0 {
        return Err(config(
            "--epochs, --batch and --feat-width must be positive",
        ));
    }
    let mut train_set = Vec::new();
    for scene in scenes_in(&a.train_dir)? {
        let (r, m) = load_pair(&scene)?;
        for p in extract_patches(&r, Some(&m), a.size, a.size)? {
            train_set.push(Sample::from_patch(&p)?);
        }
    }
    let mut val_set = Vec::new();
    for scene in scenes_in(&a.val_dir)? {
        let (r, m) = load_pair(&scene)?;
        val_set.push(scene_sample(&r, &m)?);
    }
    Ok((train_set, val_set))
}

fn train_config(a: &TrainArgs) -> TrainConfig {
    TrainConfig {
        variant: a.variant,
        feat_width: a.feat_width,
        max_epochs: a.epochs,
        batch_size: a.batch,
        seed: a.seed,
        ..TrainConfig::default()
    }
}

fn write_text(path: &Path, text: &str) -> CliResult {
    Ok(write_atomic(path, text.as_bytes())?)
}

pub fn train(a: &TrainArgs) -> CliResult {
    let (train_set, val_set) = load_sets(a)?;
    let cfg = train_config(a);
    log::info!(
        "training {} (width {}) on {} patches, validating on {} scenes",
        cfg.variant,
        cfg.feat_width,
        train_set.len(),
        val_set.len()
    );
    let out = train::train(&train_set, &val_set, &cfg)?;
    train::save_checkpoint(&a.out, &out.best)?;
    let history = a
        .report
        .clone()
        .unwrap_or_else(|| with_suffix(&a.out, ".history.csv"));
    write_text(&history, &train::history_csv(&out.history))?;
    println!(
        "best epoch {} kappa {:.6} ({} epochs run, {} parameters)",
        out.best_epoch,
        out.best_kappa,
        out.history.len(),
        out.best.n_params()
    );
    Ok(())
}

pub fn ablation(a: &TrainArgs) -> CliResult {
    let (train_set, val_set) = load_sets(a)?;
    let rows = train::ablation(&train_set, &val_set, &val_set, &train_config(a))?;
    write_text(&a.out, &train::ablation_csv(&rows))?;
    print!("{}", train::ablation_table(&rows));
    Ok(())
}

fn load_model(a: &PredictArgs) -> CliResult<ModelParams> {
    let params = train::load_checkpoint(&a.checkpoint)?;
    let mismatch = |found: String, expected: String| Error::ModelMismatch {
        path: a.checkpoint.clone(),
        found,
        expected,
    };
    if let Some(v) = a.variant.filter(|&v| v != params.variant()) {
        return Err(mismatch(params.variant().to_string(), v.to_string()).into());
    }
    if let Some(w) = a.feat_width.filter(|&w| w != params.feat_width()) {
        return Err(mismatch(
            format!("feature width {}", params.feat_width()),
            format!("feature width {w}"),
        )
        .into());
    }
    Ok(params)
}

/// Sigmoid map over the scene, cropped back to its original size.
fn predict_scene(params: &ModelParams, raster: &Raster) -> CliResult<model::SigmoidMap> {
    let padded = pad_even(raster)?;
    let y = model::forward(&padded.to_f64(), params)?;
    let (h, w) = (raster.height(), raster.width());
    let cropped = y.values().slice(ndarray::s![..h, ..w]).to_owned();
    Ok(model::SigmoidMap::new(cropped)?)
}

pub fn predict(a: &PredictArgs) -> CliResult {
    require_file(&a.checkpoint)?;
    require_file(&a.input)?;
    if a.threshold.is_some_and(|t| !t.is_finite()) {
        return Err(config("--threshold must be finite"));
    }
    let params = load_model(a)?;
    let raster = load_scene(&a.input)?;
    let y = predict_scene(&params, &raster)?;
    let (threshold, classes) = match a.threshold {
        Some(t) => (t, apply_threshold(y.values(), t)),
        None => {
            let t = auto_threshold(&y)?;
            (t.threshold, t.classes)
        }
    };
    let sig = y.values().mapv(|v| v as f32).insert_axis(ndarray::Axis(0));
    let sig = Raster::new(vec!["sigmoid".into()], sig, 1.0)?;
    write_raster(with_suffix(&a.out, ".sigmoid.mqr"), &sig)?;
    write_mask(with_suffix(&a.out, ".class.mqm"), &Mask::new(classes)?)?;
    println!("threshold {threshold:.9}");
    Ok(())
}

fn index_threshold(index: SpectralIndex, flag: Option<f64>) -> CliResult<f64> {
    let t = flag.or(index.default_threshold()).ok_or_else(|| {
        config(format!(
            "{index} has no default threshold; pass --threshold"
        ))
    })?;
    if !t.is_finite() {
        return Err(config("--threshold must be finite"));
    }
    Ok(t)
}

pub fn index(a: &IndexArgs) -> CliResult {
    require_file(&a.input)?;
    let threshold = match a.index {
        SpectralIndex::Mndwi => a.threshold,
        i => Some(index_threshold(i, a.threshold)?),
    };
    if threshold.is_some_and(|t| !t.is_finite()) {
        return Err(config("--threshold must be finite"));
    }
    let raster = read_raster(&a.input)?;
    let map = compute_index(&raster, a.index).map_err(|e| match e {
        Error::Contract(m) => data(format!("{}: {m}", a.input.display())),
        e => e.into(),
    })?;
    let values = map.values.mapv(|v| v as f32).insert_axis(ndarray::Axis(0));
    write_raster(
        with_suffix(&a.out, ".index.mqr"),
        &Raster::new(vec![a.index.to_string()], values, 1.0)?,
    )?;
    if let Some(t) = threshold {
        let classes = classify_index(&map.values, t, Direction::Above)?;
        write_mask(with_suffix(&a.out, ".class.mqm"), &Mask::new(classes)?)?;
        println!("{} threshold {t}", a.index);
    }
    if map.flagged > 0 {
        println!("{} pixels with zero denominator set to 0", map.flagged);
    }
    Ok(())
}

fn pool(acc: Option<ConfusionMatrix>, cm: ConfusionMatrix) -> CliResult<Option<ConfusionMatrix>> {
    Ok(Some(match acc {
        None => cm,
        Some(a) => a.merge(&cm)?,
    }))
}

pub fn evaluate(a: &EvaluateArgs) -> CliResult {
    for p in &a.input {
        require_file(p)?;
    }
    let is_mask = |p: &PathBuf| p.extension().is_some_and(|x| x == "mqm");
    let rows = if a.input.iter().all(is_mask) {
        if a.input.len() != 2 || a.checkpoint.is_some() || a.index.is_some() {
            return Err(config(
                "mask evaluation takes exactly `--input pred.mqm --input gt.mqm`",
            ));
        }
        let pred = read_mask(&a.input[0])?;
        let gt = read_mask(&a.input[1])?;
        if pred.values().dim() != gt.values().dim() {
            return Err(data("prediction and ground truth differ in shape"));
        }
        let cm = confusion(pred.values(), gt.values(), None)?;
        vec![MetricsRow::new("prediction", &cm)]
    } else if a.input.iter().any(is_mask) {
        return Err(config("mix of .mqm and .mqr inputs"));
    } else {
        evaluate_scenes(a)?
    };
    write_text(&a.report, &report_csv(&rows))?;
    print!("{}", report_table(&rows));
    Ok(())
}

fn evaluate_scenes(a: &EvaluateArgs) -> CliResult<Vec<MetricsRow>> {
    if let Some(c) = &a.checkpoint {
        require_file(c)?;
    }
    let indices: Vec<(SpectralIndex, f64)> = match a.index {
        Some(i) => vec![(i, index_threshold(i, a.threshold)?)],
        None if a.checkpoint.is_none() => {
            [SpectralIndex::Ndvi, SpectralIndex::Mmri, SpectralIndex::Mvi]
                .into_iter()
                .map(|i| (i, i.default_threshold().expect("published threshold")))
                .collect()
        }
        None => Vec::new(),
    };
    let model = match &a.checkpoint {
        Some(c) => Some(train::load_checkpoint(c)?),
        None => None,
    };
    let mut model_cm = None;
    let mut index_cm: Vec<Option<ConfusionMatrix>> = vec![None; indices.len()];
    for scene in &a.input {
        let (raster, mask) = load_pair(scene)?;
        if let Some(params) = &model {
            let y = predict_scene(params, &raster)?;
            let pred = match a.threshold.filter(|_| a.index.is_none()) {
                Some(t) => apply_threshold(y.values(), t),
                None => auto_threshold(&y)?.classes,
            };
            model_cm = pool(model_cm, confusion(&pred, mask.values(), None)?)?;
        }
        for (k, &(index, t)) in indices.iter().enumerate() {
            let map = compute_index(&raster, index)?;
            let pred = classify_index(&map.values, t, Direction::Above)?;
            index_cm[k] = pool(index_cm[k].take(), confusion(&pred, mask.values(), None)?)?;
        }
    }
    let mut rows = Vec::new();
    for ((index, _), cm) in indices.iter().zip(&index_cm) {
        rows.push(MetricsRow::new(
            index.as_str().to_uppercase(),
            cm.as_ref().unwrap(),
        ));
    }
    if let (Some(params), Some(cm)) = (&model, &model_cm) {
        rows.push(MetricsRow::new(params.variant().as_str(), cm));
    }
    log::info!(
        "kappa {}",
        rows.iter()
            .map(|r| format!("{}={:.4}", r.name, r.kappa))
            .collect::<Vec<_>>()
            .join(" ")
    );
    Ok(rows)
}

pub fn synth(a: &SynthArgs) -> CliResult {
    if a.size < 2 {
        return Err(config("--size must be at least 2"));
    }
    if !(a.noise >= 0.0 && a.noise.is_finite()) {
        return Err(config("--noise must be a non-negative number"));
    }
    let (raster, mask) = synth_scene(&SynthSpec::new(a.seed, a.size, a.noise))?;
    write_raster(with_suffix(&a.out, ".mqr"), &raster)?;
    write_mask(with_suffix(&a.out, ".mqm"), &mask)?;
    let frac =
        mask.values().iter().filter(|&&v| v == 1).count() as f64 / mask.values().len() as f64;
    println!(
        "wrote {}x{} scene, mangrove fraction {frac:.3}",
        a.size, a.size
    );
    Ok(())
}

pub fn selftest() -> CliResult {
    let results = qednet::selftest::run_all();
    let mut failed = 0;
    for r in &results {
        println!(
            "{} {:<22} {}",
            if r.passed { "PASS" } else { "FAIL" },
            r.name,
            r.detail
        );
        failed += usize::from(!r.passed);
    }
    if failed > 0 {
        return Err(CliError::Runtime(format!(
            "{failed} of {} checks failed",
            results.len()
        )));
    }
    println!("all {} checks passed", results.len());
    Ok(())
}
