use std::path::Path;
use std::time::Instant;

use neuralecho_nn::Graph;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::{neuralecho_loss, si_sdr, LossConfig};
use super::trainer::{check_manifest, prepare_item};
use crate::error::{IoContext, Result};
use crate::model::NeuralEcho;
use crate::signal::AudioSignal;
use crate::simulate::DatasetManifest;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalItem {
    pub id: String,
    pub si_sdr_mixture: f64,
    pub si_sdr_enhanced: f64,
    pub si_sdr_improvement: f64,
    pub loss: f64,
    pub agc_loss: Option<f64>,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub items: usize,
    pub si_sdr_mixture: Option<f64>,
    pub si_sdr_enhanced: Option<f64>,
    pub si_sdr_improvement: Option<f64>,
    pub loss: Option<f64>,
    pub total_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub items: Vec<EvalItem>,
    pub summary: EvalSummary,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

impl EvalReport {
    pub fn from_items(items: Vec<EvalItem>, total_seconds: f64) -> Self {
        let summary = EvalSummary {
            items: items.len(),
            si_sdr_mixture: mean(items.iter().map(|i| i.si_sdr_mixture)),
            si_sdr_enhanced: mean(items.iter().map(|i| i.si_sdr_enhanced)),
            si_sdr_improvement: mean(items.iter().map(|i| i.si_sdr_improvement)),
            loss: mean(items.iter().map(|i| i.loss)),
            total_seconds,
        };
        Self { items, summary }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n").at(path)
    }
}

/// SI-SDR of the mixture and of the model output against `s_r` for every
/// record, in manifest order. The AGC loss is reported when the model has
/// the AGC branch.
pub fn evaluate(model: &NeuralEcho, manifest: &DatasetManifest, loss_cfg: &LossConfig) -> Result<EvalReport> {
    check_manifest(manifest, model.config())?;
    let loss_cfg = LossConfig { agc_task: model.config().agc_branch, ..loss_cfg.clone() };
    let start = Instant::now();
    let items = (0..manifest.records.len())
        .into_par_iter()
        .map(|i| {
            let t0 = Instant::now();
            let item = prepare_item(manifest, i, model.config(), &loss_cfg)?;
            let mut g = Graph::new();
            let vars = model.forward(&mut g, &item.input)?;
            let terms = neuralecho_loss(&mut g, &vars, &item.target, &loss_cfg)?;
            let enhanced = AudioSignal::new(g.value(vars.enhanced).data().to_vec(), model.config().stft.sample_rate)?;
            let reference = AudioSignal::new(item.target.target.clone(), model.config().stft.sample_rate)?;
            let si_sdr_enhanced = si_sdr(&enhanced, &reference)?;
            Ok(EvalItem {
                id: item.id,
                si_sdr_mixture: item.mixture_si_sdr,
                si_sdr_enhanced,
                si_sdr_improvement: si_sdr_enhanced - item.mixture_si_sdr,
                loss: g.value(terms.total).data()[0],
                agc_loss: terms.agc.map(|v| g.value(v).data()[0]),
                seconds: t0.elapsed().as_secs_f64(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::from_items(items, start.elapsed().as_secs_f64()))
}
