use std::path::Path;

use neuralecho_nn::optim::{Adam, AdamConfig};
use neuralecho_nn::Checkpoint;
use serde::{Deserialize, Serialize};

use super::{ModelConfig, NeuralEcho};
use crate::error::{Error, Result};

const FORMAT: &str = "neuralecho";

/// JSON header stored inside every checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub format: String,
    pub model: ModelConfig,
    pub step: usize,
    pub param_count: usize,
}

pub fn save_model(model: &NeuralEcho, adam: Option<&Adam>, step: usize, path: &Path) -> Result<()> {
    let meta = CheckpointMeta {
        format: FORMAT.into(),
        model: model.config().clone(),
        step,
        param_count: model.param_count(),
    };
    Checkpoint::from_store(&model.store, adam, serde_json::to_string(&meta)?).write(path)?;
    Ok(())
}

/// Rebuilds a model (and the optimizer state, if stored) from a checkpoint.
pub fn load_model(path: &Path, adam: AdamConfig) -> Result<(NeuralEcho, Option<Adam>, CheckpointMeta)> {
    let ckpt = Checkpoint::read(path)?;
    let meta: CheckpointMeta = serde_json::from_str(&ckpt.metadata)
        .map_err(|e| Error::Config(format!("{}: bad checkpoint header: {e}", path.display())))?;
    if meta.format != FORMAT {
        return Err(Error::Config(format!("{}: not a {FORMAT} checkpoint", path.display())));
    }
    let mut model = NeuralEcho::new(meta.model.clone(), 0)?;
    ckpt.restore_params(&mut model.store)?;
    let adam = ckpt.restore_adam(&model.store, adam)?;
    Ok((model, adam, meta))
}
