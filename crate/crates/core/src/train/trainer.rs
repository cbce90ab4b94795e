use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use neuralecho_nn::optim::{Adam, AdamConfig};
use neuralecho_nn::{Graph, NnError};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{neuralecho_loss, si_sdr, LossConfig, LossTarget};
use crate::error::{Error, IoContext, Result};
use crate::model::{save_model, ModelConfig, ModelInput, NeuralEcho};
use crate::simulate::{splitmix64, DatasetManifest};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Schedule {
    pub steps: usize,
    pub lr: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub clip_norm: f64,
    pub seed: u64,
    /// Validate every this many steps; 0 disables validation.
    pub val_every: usize,
    /// Fraction of the manifest (from its end, rounded down) held out for
    /// validation.
    pub val_fraction: f64,
    /// Also write a numbered checkpoint every this many steps; 0 disables.
    pub checkpoint_every: usize,
    /// Keep precomputed inputs in memory when the training set has at most
    /// this many items.
    pub cache_items: usize,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            steps: 200,
            lr: 1e-3,
            clip_norm: 5.0,
            seed: 0,
            val_every: 50,
            val_fraction: 0.1,
            checkpoint_every: 0,
            cache_items: 64,
        }
    }
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.clip_norm.is_finite() && self.clip_norm >= 0.0) {
            return Err(Error::Config(format!("clip_norm must be non-negative, got {}", self.clip_norm)));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config(format!("val_fraction must lie in [0, 1), got {}", self.val_fraction)));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            clip_norm: (self.clip_norm > 0.0).then_some(self.clip_norm),
            ..AdamConfig::default()
        }
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub loss: f64,
    pub si_sdr_term: f64,
    pub l1_term: f64,
    pub agc_term: Option<f64>,
    pub grad_norm: f64,
}

/// One line of the validation log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationLog {
    pub step: usize,
    pub si_sdr_mixture: f64,
    pub si_sdr_enhanced: f64,
}

/// Output locations of a training run.
#[derive(Clone, Debug)]
pub struct TrainPaths {
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    pub val_log: PathBuf,
}

impl TrainPaths {
    /// Logs next to the checkpoint: `train_log.jsonl`, `val_log.jsonl`.
    pub fn beside(checkpoint: &Path) -> Self {
        let dir = checkpoint.parent().unwrap_or(Path::new(""));
        Self {
            checkpoint: checkpoint.to_path_buf(),
            log: dir.join("train_log.jsonl"),
            val_log: dir.join("val_log.jsonl"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub steps: Vec<StepLog>,
    pub validation: Vec<ValidationLog>,
    pub train_items: usize,
    pub checkpoint: PathBuf,
}

impl TrainSummary {
    /// Trailing moving average of the loss over `window` steps ending at
    /// `step` (1-based).
    pub fn smoothed_loss(&self, step: usize, window: usize) -> Option<f64> {
        if step == 0 || step > self.steps.len() || window == 0 {
            return None;
        }
        let lo = step.saturating_sub(window);
        let slice = &self.steps[lo..step];
        Some(slice.iter().map(|s| s.loss).sum::<f64>() / slice.len() as f64)
    }
}

/// A prepared utterance.
#[derive(Clone, Debug)]
pub struct TrainItem {
    pub id: String,
    pub input: ModelInput,
    pub target: LossTarget,
    pub mixture_si_sdr: f64,
}

/// Checks that every record carries what the model variant needs.
pub fn check_manifest(manifest: &DatasetManifest, model: &ModelConfig) -> Result<()> {
    if model.speaker_aware {
        if let Some(rec) = manifest.records.iter().find(|r| r.embedding_path.is_none()) {
            return Err(Error::Manifest(format!(
                "record {} has no embedding_path, required by the speaker-aware model",
                rec.id
            )));
        }
    }
    Ok(())
}

pub fn prepare_item(
    manifest: &DatasetManifest,
    index: usize,
    model: &ModelConfig,
    loss: &LossConfig,
) -> Result<TrainItem> {
    let rec = &manifest.records[index];
    let item = manifest.load_item(rec)?;
    if item.mic.sample_rate() != model.stft.sample_rate {
        return Err(Error::RateMismatch { expected: model.stft.sample_rate, actual: item.mic.sample_rate() });
    }
    let embedding = if model.speaker_aware { item.embedding.as_deref() } else { None };
    let input = ModelInput::prepare(model, &item.mic, &item.farend, embedding)?;
    let agc = loss.agc_task.then_some(&item.agc_target);
    let target = LossTarget::prepare(model, &item.target, agc)?;
    let mixture_si_sdr = si_sdr(&item.mic, &item.target)?;
    Ok(TrainItem { id: item.id, input, target, mixture_si_sdr })
}

/// Splits a manifest into training and held-out indices.
pub fn split(n: usize, val_fraction: f64) -> (Vec<usize>, Vec<usize>) {
    let n_val = ((n as f64 * val_fraction).floor() as usize).min(n.saturating_sub(1));
    ((0..n - n_val).collect(), (n - n_val..n).collect())
}

fn to_diverged(step: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Nn(NnError::NonFinite { .. }) => Error::Diverged { step, loss: f64::NAN },
        e => e,
    }
}

struct Items<'a> {
    manifest: &'a DatasetManifest,
    model: &'a ModelConfig,
    loss: &'a LossConfig,
    cache: Vec<Option<TrainItem>>,
    use_cache: bool,
}

impl Items<'_> {
    fn get(&mut self, index: usize) -> Result<TrainItem> {
        if let Some(Some(item)) = self.cache.get(index) {
            return Ok(item.clone());
        }
        let item = prepare_item(self.manifest, index, self.model, self.loss)?;
        if self.use_cache {
            self.cache[index] = Some(item.clone());
        }
        Ok(item)
    }
}

fn json_line(out: &mut impl Write, value: &impl Serialize, path: &Path) -> Result<()> {
    let line = serde_json::to_string(value)?;
    writeln!(out, "{line}").at(path)
}

/// Trains a fresh model on `manifest` and writes the final checkpoint.
pub fn train(
    manifest: &DatasetManifest,
    model_cfg: &ModelConfig,
    loss_cfg: &LossConfig,
    schedule: &Schedule,
    paths: &TrainPaths,
) -> Result<TrainSummary> {
    model_cfg.validate()?;
    loss_cfg.validate()?;
    schedule.validate()?;
    if loss_cfg.agc_task && !model_cfg.agc_branch {
        return Err(Error::Config("the AGC task needs agc_branch in the model config".into()));
    }
    if manifest.records.is_empty() {
        return Err(Error::Manifest("cannot train on an empty manifest".into()));
    }
    check_manifest(manifest, model_cfg)?;

    let mut model = NeuralEcho::new(model_cfg.clone(), schedule.seed)?;
    let mut adam = Adam::new(schedule.adam(), &model.store);
    let (train_idx, val_idx) = split(manifest.records.len(), schedule.val_fraction);
    let mut items = Items {
        manifest,
        model: model_cfg,
        loss: loss_cfg,
        cache: vec![None; manifest.records.len()],
        use_cache: train_idx.len() <= schedule.cache_items,
    };
    let val_items: Vec<TrainItem> = if schedule.val_every > 0 {
        val_idx.iter().map(|&i| items.get(i)).collect::<Result<_>>()?
    } else {
        Vec::new()
    };

    let mut log = BufWriter::new(File::create(&paths.log).at(&paths.log)?);
    let mut val_log = BufWriter::new(File::create(&paths.val_log).at(&paths.val_log)?);
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(schedule.seed ^ 0x0005_eed0_0f0d));
    let mut order: Vec<usize> = Vec::new();
    let mut summary = TrainSummary {
        steps: Vec::with_capacity(schedule.steps),
        validation: Vec::new(),
        train_items: train_idx.len(),
        checkpoint: paths.checkpoint.clone(),
    };

    for step in 1..=schedule.steps {
        if order.is_empty() {
            order = train_idx.clone();
            order.shuffle(&mut rng);
            order.reverse();
        }
        let index = order.pop().expect("refilled above");
        let item = items.get(index)?;
        let mut g = Graph::new();
        let vars = model.forward(&mut g, &item.input).map_err(to_diverged(step))?;
        let terms = neuralecho_loss(&mut g, &vars, &item.target, loss_cfg).map_err(to_diverged(step))?;
        let loss = g.value(terms.total).data()[0];
        if !loss.is_finite() {
            return Err(Error::Diverged { step, loss });
        }
        g.backward(terms.total, &mut model.store).map_err(|e| to_diverged(step)(e.into()))?;
        let grad_norm = adam.step(&mut model.store);
        if !grad_norm.is_finite() {
            return Err(Error::Diverged { step, loss: grad_norm });
        }
        let entry = StepLog {
            step,
            loss,
            si_sdr_term: g.value(terms.si_sdr).data()[0],
            l1_term: g.value(terms.l1).data()[0],
            agc_term: terms.agc.map(|v| g.value(v).data()[0]),
            grad_norm,
        };
        json_line(&mut log, &entry, &paths.log)?;
        summary.steps.push(entry);

        if schedule.val_every > 0 && !val_items.is_empty() && (step % schedule.val_every == 0 || step == schedule.steps) {
            let entry = validate(&model, &val_items, step)?;
            json_line(&mut val_log, &entry, &paths.val_log)?;
            summary.validation.push(entry);
        }
        if schedule.checkpoint_every > 0 && step % schedule.checkpoint_every == 0 && step != schedule.steps {
            save_model(&model, Some(&adam), step, &numbered(&paths.checkpoint, step))?;
        }
    }
    log.flush().at(&paths.log)?;
    val_log.flush().at(&paths.val_log)?;
    save_model(&model, Some(&adam), schedule.steps, &paths.checkpoint)?;
    Ok(summary)
}

fn validate(model: &NeuralEcho, items: &[TrainItem], step: usize) -> Result<ValidationLog> {
    let (mut mix, mut enh) = (0.0, 0.0);
    for item in items {
        let out = model.enhance_input(&item.input)?;
        let reference = crate::signal::AudioSignal::new(item.target.target.clone(), out.signal.sample_rate())?;
        enh += si_sdr(&out.signal, &reference)?;
        mix += item.mixture_si_sdr;
    }
    let n = items.len() as f64;
    Ok(ValidationLog { step, si_sdr_mixture: mix / n, si_sdr_enhanced: enh / n })
}

/// `dir/name.ckpt` → `dir/name_step000050.ckpt`.
pub fn numbered(path: &Path, step: usize) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("checkpoint");
    let name = match path.extension().and_then(|e| e.to_str()) {
        Some(ext) => format!("{stem}_step{step:06}.{ext}"),
        None => format!("{stem}_step{step:06}"),
    };
    path.with_file_name(name)
}
