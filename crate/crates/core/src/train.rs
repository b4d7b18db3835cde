//! BCE loss, AdamW with cosine annealing, the training loop with
//! validation-kappa checkpointing, checkpoint files and the ablation
//! harness.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use fnv::FnvHasher;
use ndarray::{Array2, Array3};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::hash::Hasher;

use crate::data::{write_atomic, Mask, Patch};
use crate::error::{Error, Result};
use crate::metrics::{self, ConfusionMatrix, MetricsRow};
use crate::model::{self, auto_threshold, ModelParams, SigmoidMap, Variant};

const BCE_CLAMP: f64 = 1e-7;

#[derive(Clone, Debug, PartialEq)]
pub struct BceOutput {
    pub loss: f64,
    /// Gradient of the loss with respect to the pre-sigmoid logits.
    pub grad_logits: Array2<f64>,
}

/// Mean binary cross-entropy over valid pixels.
pub fn bce_loss(
    y: &SigmoidMap,
    gt: &Array2<u8>,
    valid: Option<&Array2<bool>>,
) -> Result<BceOutput> {
    let yv = y.values();
    if yv.dim() != gt.dim() || valid.is_some_and(|v| v.dim() != gt.dim()) {
        return Err(Error::contract(format!(
            "loss inputs differ in shape: {:?} vs {:?}",
            yv.dim(),
            gt.dim()
        )));
    }
    let n = match valid {
        Some(v) => v.iter().filter(|&&b| b).count(),
        None => gt.len(),
    };
    if n == 0 {
        return Err(Error::contract("loss needs at least one valid pixel"));
    }
    let inv_n = 1.0 / n as f64;
    let mut loss = 0.0;
    let mut grad_logits = Array2::zeros(gt.dim());
    for ((idx, &p), &g) in yv.indexed_iter().zip(gt.iter()) {
        if valid.is_some_and(|v| !v[idx]) {
            continue;
        }
        let g = f64::from(g);
        let pc = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
        loss -= g * pc.ln() + (1.0 - g) * (1.0 - pc).ln();
        grad_logits[idx] = (p - g) * inv_n;
    }
    Ok(BceOutput {
        loss: loss * inv_n,
        grad_logits,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamW {
    pub lr0: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        AdamW {
            lr0: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl OptimizerState {
    pub fn new(n: usize) -> Self {
        OptimizerState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
}

/// One AdamW update in place. Decay `theta -= lr * wd * theta` is applied
/// first, only where `decay_mask` is true (everywhere when `None`).
pub fn adamw_step(
    state: &mut OptimizerState,
    params: &mut [f64],
    grads: &[f64],
    lr: f64,
    hp: &AdamW,
    decay_mask: Option<&[bool]>,
) -> Result<()> {
    let n = params.len();
    if grads.len() != n || state.m.len() != n || state.v.len() != n {
        return Err(Error::contract(format!(
            "optimizer length mismatch: {n} params, {} grads, {} moments",
            grads.len(),
            state.m.len()
        )));
    }
    if decay_mask.is_some_and(|d| d.len() != n) {
        return Err(Error::contract("decay mask length mismatch"));
    }
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - hp.beta1.powi(t);
    let bc2 = 1.0 - hp.beta2.powi(t);
    for i in 0..n {
        if decay_mask.is_none_or(|d| d[i]) {
            params[i] -= lr * hp.weight_decay * params[i];
        }
        let g = grads[i];
        state.m[i] = hp.beta1 * state.m[i] + (1.0 - hp.beta1) * g;
        state.v[i] = hp.beta2 * state.v[i] + (1.0 - hp.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + hp.eps);
    }
    Ok(())
}

/// Cosine annealing from `lr0` at epoch 0 to 0 at `max_epochs`.
pub fn cosine_lr(epoch: usize, max_epochs: usize, lr0: f64) -> f64 {
    let e = epoch.min(max_epochs) as f64;
    lr0 * (1.0 + (PI * e / max_epochs.max(1) as f64).cos()) / 2.0
}

/// One training or validation example.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub x: Array3<f64>,
    pub gt: Array2<u8>,
    pub valid: Array2<bool>,
}

impl Sample {
    pub fn new(x: Array3<f64>, gt: Array2<u8>) -> Result<Self> {
        let (_, h, w) = x.dim();
        if gt.dim() != (h, w) {
            return Err(Error::contract("label and image differ in shape"));
        }
        Ok(Sample {
            valid: Array2::from_elem((h, w), true),
            x,
            gt,
        })
    }

    pub fn from_patch(p: &Patch) -> Result<Self> {
        let mask = p
            .mask
            .as_ref()
            .ok_or_else(|| Error::contract("training patch has no mask"))?;
        Ok(Sample {
            x: p.raster.to_f64(),
            gt: mask.values().clone(),
            valid: p.valid.clone(),
        })
    }

    pub fn from_scene(raster: &crate::data::Raster, mask: &Mask) -> Result<Self> {
        Sample::new(raster.to_f64(), mask.values().clone())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub variant: Variant,
    pub feat_width: usize,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Epochs without a validation-loss improvement of `min_delta` before
    /// stopping.
    pub patience: usize,
    pub min_delta: f64,
    pub optimizer: AdamW,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            variant: Variant::CnnQnn,
            feat_width: 64,
            max_epochs: 200,
            batch_size: 1,
            seed: 0,
            patience: 10,
            min_delta: 1e-5,
            optimizer: AdamW::default(),
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.max_epochs == 0 {
            return Err(Error::contract("max_epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::contract("batch size must be at least 1"));
        }
        if self.feat_width == 0 {
            return Err(Error::contract("feature width must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based epoch number.
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_kappa: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    /// Parameters at the epoch with the highest validation kappa.
    pub best: ModelParams,
    pub best_epoch: usize,
    pub best_kappa: f64,
    pub history: Vec<EpochRecord>,
}

/// Loss and flat gradient for one sample.
pub fn sample_loss_grad(params: &ModelParams, s: &Sample) -> Result<(f64, Vec<f64>)> {
    let trace = model::forward_traced(&s.x, params)?;
    let y = SigmoidMap::from_logits(&trace.logits);
    let bce = bce_loss(&y, &s.gt, Some(&s.valid))?;
    let g = model::backward(&s.x, params, &trace, &bce.grad_logits)?;
    Ok((bce.loss, g.to_flat()))
}

/// Mean loss and gradient over a batch. Per-sample results are summed in
/// batch order so the result does not depend on the thread count.
pub fn batch_loss_grad(params: &ModelParams, batch: &[&Sample]) -> Result<(f64, Vec<f64>)> {
    let parts: Vec<(f64, Vec<f64>)> = batch
        .par_iter()
        .map(|s| sample_loss_grad(params, s))
        .collect::<Result<_>>()?;
    let mut loss = 0.0;
    let mut grad = vec![0.0; params.n_params()];
    for (l, g) in &parts {
        loss += l;
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
    }
    let k = batch.len() as f64;
    grad.iter_mut().for_each(|g| *g /= k);
    Ok((loss / k, grad))
}

/// Validation loss, pooled confusion matrix and the per-sample maps.
pub struct Evaluation {
    pub loss: f64,
    pub confusion: ConfusionMatrix,
    pub maps: Vec<SigmoidMap>,
}

/// Runs the model on every sample, thresholds each map automatically and
/// pools the confusion counts over valid pixels.
pub fn evaluate(params: &ModelParams, samples: &[Sample]) -> Result<Evaluation> {
    if samples.is_empty() {
        return Err(Error::contract("evaluation set is empty"));
    }
    let parts: Vec<(f64, ConfusionMatrix, SigmoidMap)> = samples
        .par_iter()
        .map(|s| {
            let y = model::forward(&s.x, params)?;
            let loss = bce_loss(&y, &s.gt, Some(&s.valid))?.loss;
            let pred = auto_threshold(&y)?.classes;
            let cm = metrics::confusion(&pred, &s.gt, Some(&s.valid))?;
            Ok((loss, cm, y))
        })
        .collect::<Result<_>>()?;
    let mut loss = 0.0;
    let mut confusion: Option<ConfusionMatrix> = None;
    let mut maps = Vec::with_capacity(parts.len());
    for (l, cm, y) in parts {
        loss += l;
        confusion = Some(match confusion {
            None => cm,
            Some(acc) => acc.merge(&cm)?,
        });
        maps.push(y);
    }
    Ok(Evaluation {
        loss: loss / samples.len() as f64,
        confusion: confusion.expect("nonempty"),
        maps,
    })
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Initial parameters for a config, drawn from the seed's first stream.
pub fn init_params(cfg: &TrainConfig) -> ModelParams {
    ModelParams::random(cfg.variant, cfg.feat_width, &mut stream_rng(cfg.seed, 0))
}

/// Trains from [`init_params`].
pub fn train(train_set: &[Sample], val_set: &[Sample], cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_from(init_params(cfg), train_set, val_set, cfg, |_| {})
}

/// Trains from given parameters, calling `on_epoch` after each epoch.
pub fn train_from(
    init: ModelParams,
    train_set: &[Sample],
    val_set: &[Sample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::contract(
            "training and validation sets must be nonempty",
        ));
    }
    let mut params = init;
    let mut flat = params.to_flat();
    let mask = params.decay_mask();
    let mut state = OptimizerState::new(flat.len());

    let mut history = Vec::new();
    let mut best: Option<(ModelParams, usize, f64)> = None;
    let mut best_val_loss = f64::INFINITY;
    let mut stale = 0usize;

    for epoch in 0..cfg.max_epochs {
        let lr = cosine_lr(epoch, cfg.max_epochs, cfg.optimizer.lr0);
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut stream_rng(cfg.seed, 1 + epoch as u64));

        let mut train_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &train_set[i]).collect();
            let (loss, grad) = batch_loss_grad(&params, &batch)?;
            train_loss += loss * batch.len() as f64;
            adamw_step(
                &mut state,
                &mut flat,
                &grad,
                lr,
                &cfg.optimizer,
                Some(&mask),
            )?;
            params.assign_flat(&flat)?;
        }
        train_loss /= train_set.len() as f64;

        let eval = evaluate(&params, val_set)?;
        let kappa = metrics::kappa(&eval.confusion);
        let rec = EpochRecord {
            epoch: epoch + 1,
            lr,
            train_loss,
            val_loss: eval.loss,
            val_kappa: kappa,
        };
        log::info!(
            "epoch {:>3} lr {:.3e} train {:.5} val {:.5} kappa {:.4}",
            rec.epoch,
            lr,
            train_loss,
            eval.loss,
            kappa
        );
        on_epoch(&rec);
        history.push(rec);

        if best.as_ref().is_none_or(|b| kappa > b.2) {
            best = Some((params.clone(), rec.epoch, kappa));
        }
        if eval.loss < best_val_loss - cfg.min_delta {
            best_val_loss = eval.loss;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                log::info!("validation loss flat for {stale} epochs, stopping");
                break;
            }
        }
    }
    let (best, best_epoch, best_kappa) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        best,
        best_epoch,
        best_kappa,
        history,
    })
}

/// CSV with header `epoch,lr,train_loss,val_loss,val_kappa`. Floats use the
/// shortest representation that round-trips.
pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,lr,train_loss,val_loss,val_kappa\n");
    for r in history {
        let _ = writeln!(
            s,
            "{},{:?},{:?},{:?},{:?}",
            r.epoch, r.lr, r.train_loss, r.val_loss, r.val_kappa
        );
    }
    s
}

const CKPT_MAGIC: &[u8; 8] = b"QEDNCKPT";
const CKPT_VERSION: u32 = 1;

/// Checkpoint bytes: magic, u32 version, u8 variant tag, u32 feature
/// width, u64 parameter count, f64 LE parameters, then a u64 FNV-1a of
/// everything before it.
pub fn checkpoint_to_bytes(params: &ModelParams) -> Vec<u8> {
    let flat = params.to_flat();
    let mut out = Vec::with_capacity(25 + 8 * flat.len() + 8);
    out.extend_from_slice(CKPT_MAGIC);
    out.extend_from_slice(&CKPT_VERSION.to_le_bytes());
    out.push(params.variant().tag());
    out.extend_from_slice(&(params.feat_width() as u32).to_le_bytes());
    out.extend_from_slice(&(flat.len() as u64).to_le_bytes());
    for v in &flat {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let mut h = FnvHasher::default();
    h.write(&out);
    out.extend_from_slice(&h.finish().to_le_bytes());
    out
}

pub fn checkpoint_from_bytes(path: &Path, bytes: &[u8]) -> Result<ModelParams> {
    let p = || path.to_path_buf();
    let invalid = |reason: String| Error::HeaderInvalid { path: p(), reason };
    if bytes.len() < 8 || &bytes[..8] != CKPT_MAGIC {
        return Err(Error::BadMagic { path: p() });
    }
    const HEAD: usize = 8 + 4 + 1 + 4 + 8;
    if bytes.len() < HEAD {
        return Err(Error::Truncated {
            path: p(),
            expected: HEAD as u64,
            found: bytes.len() as u64,
        });
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != CKPT_VERSION {
        return Err(Error::VersionMismatch {
            path: p(),
            found: version,
            expected: CKPT_VERSION,
        });
    }
    let variant = Variant::from_tag(bytes[12])
        .ok_or_else(|| invalid(format!("variant tag {}", bytes[12])))?;
    let feat_width = u32::from_le_bytes(bytes[13..17].try_into().unwrap()) as usize;
    let n = u64::from_le_bytes(bytes[17..25].try_into().unwrap());
    if feat_width == 0 || feat_width > 1 << 16 {
        return Err(invalid(format!("feature width {feat_width}")));
    }
    let expected_n = ModelParams::count_for(variant, feat_width) as u64;
    if n != expected_n {
        return Err(invalid(format!(
            "{n} parameters, but {variant} with width {feat_width} has {expected_n}"
        )));
    }
    let total = HEAD as u64 + 8 * n + 8;
    if (bytes.len() as u64) < total {
        return Err(Error::Truncated {
            path: p(),
            expected: total,
            found: bytes.len() as u64,
        });
    }
    if bytes.len() as u64 > total {
        return Err(invalid("trailing bytes after checksum".into()));
    }
    let body_end = bytes.len() - 8;
    let stored = u64::from_le_bytes(bytes[body_end..].try_into().unwrap());
    let mut h = FnvHasher::default();
    h.write(&bytes[..body_end]);
    let computed = h.finish();
    if stored != computed {
        return Err(Error::ChecksumMismatch {
            path: p(),
            stored,
            computed,
        });
    }
    let flat: Vec<f64> = bytes[HEAD..body_end]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let mut params = ModelParams::zeros(variant, feat_width);
    params.assign_flat(&flat)?;
    Ok(params)
}

pub fn save_checkpoint(path: impl AsRef<Path>, params: &ModelParams) -> Result<()> {
    write_atomic(path.as_ref(), &checkpoint_to_bytes(params))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelParams> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    checkpoint_from_bytes(path, &bytes)
}

/// One row of the ablation table.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub variant: Variant,
    pub n_params: usize,
    pub best_epoch: usize,
    pub metrics: MetricsRow,
    pub outcome: TrainOutcome,
    pub train_seconds: f64,
}

/// Trains every variant with the same data, seed and schedule and scores
/// the best checkpoint of each on `test_set`.
pub fn ablation(
    train_set: &[Sample],
    val_set: &[Sample],
    test_set: &[Sample],
    base: &TrainConfig,
) -> Result<Vec<AblationRow>> {
    Variant::ALL
        .into_iter()
        .map(|variant| {
            let cfg = TrainConfig {
                variant,
                ..base.clone()
            };
            let start = std::time::Instant::now();
            let outcome = train(train_set, val_set, &cfg)?;
            let train_seconds = start.elapsed().as_secs_f64();
            let eval = evaluate(&outcome.best, test_set)?;
            Ok(AblationRow {
                variant,
                n_params: outcome.best.n_params(),
                best_epoch: outcome.best_epoch,
                metrics: MetricsRow::new(variant.as_str(), &eval.confusion),
                outcome,
                train_seconds,
            })
        })
        .collect()
}

/// Track-checkmark table: `Track 1 (CNN) | Track 2 (CNN) | Track 2 (QNN) |
/// OA (%) | AA (%) | kappa`.
pub fn ablation_table(rows: &[AblationRow]) -> String {
    let mut s = format!(
        "{:^9} {:^9} {:^9} | {:>7} {:>7} {:>6} | {:>8}\n",
        "T1 (CNN)", "T2 (CNN)", "T2 (QNN)", "OA (%)", "AA (%)", "kappa", "params"
    );
    s.push_str(&"-".repeat(s.len() - 1));
    s.push('\n');
    for r in rows {
        let (c2, q2) = match r.variant {
            Variant::CnnOnly => ("", ""),
            Variant::CnnCnn => ("x", ""),
            Variant::CnnQnn => ("", "x"),
        };
        let _ = writeln!(
            s,
            "{:^9} {:^9} {:^9} | {:>7.2} {:>7.2} {:>6.3} | {:>8}",
            "x", c2, q2, r.metrics.oa, r.metrics.aa, r.metrics.kappa, r.n_params
        );
    }
    s
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from("variant,track2_cnn,track2_qnn,oa,aa,kappa,params,best_epoch\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{:.6},{:.6},{:.9},{},{}",
            r.variant,
            u8::from(r.variant == Variant::CnnCnn),
            u8::from(r.variant == Variant::CnnQnn),
            r.metrics.oa,
            r.metrics.aa,
            r.metrics.kappa,
            r.n_params,
            r.best_epoch
        );
    }
    s
}
