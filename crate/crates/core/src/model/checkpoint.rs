use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{layout, Model, ModelConfig};
use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_VERSION: u32 = 1;
const FORMAT: &str = "tokprune-checkpoint";

#[derive(Serialize, Deserialize)]
struct NamedTensor {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    config: ModelConfig,
    vocab_hash: String,
    train_seed: Option<u64>,
    tensors: Vec<NamedTensor>,
}

/// A model with the provenance it was saved with.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub vocab_hash: String,
    pub train_seed: Option<u64>,
}

impl Checkpoint {
    /// A warning when `vocab` differs from the vocabulary used in training.
    pub fn vocab_warning(&self, vocab: &Vocabulary) -> Option<String> {
        let actual = vocab.hash();
        (actual != self.vocab_hash).then(|| {
            format!(
                "vocabulary hash {} does not match checkpoint vocabulary {}",
                short(&actual),
                short(&self.vocab_hash)
            )
        })
    }
}

fn short(hash: &str) -> &str {
    &hash[..hash.len().min(12)]
}

/// Writes the model as JSON. Values round-trip exactly.
pub fn save_checkpoint(
    path: &Path,
    model: &Model,
    vocab_hash: &str,
    train_seed: Option<u64>,
) -> Result<()> {
    let names = model.params.names();
    let tensors = names
        .into_iter()
        .zip(model.params.leaves())
        .map(|(name, t)| NamedTensor {
            name,
            shape: t.shape().to_vec(),
            data: t.data().to_vec(),
        })
        .collect();
    let file = CheckpointFile {
        format: FORMAT.into(),
        version: CHECKPOINT_VERSION,
        config: model.config.clone(),
        vocab_hash: vocab_hash.into(),
        train_seed,
        tensors,
    };
    fs::write(path, serde_json::to_vec(&file)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path)?;
    let file: CheckpointFile = serde_json::from_slice(&bytes)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    if file.format != FORMAT {
        return Err(Error::Checkpoint(format!("unknown format {:?}", file.format)));
    }
    if file.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "version {} is not supported (expected {CHECKPOINT_VERSION})",
            file.version
        )));
    }
    file.config
        .validate()
        .map_err(|e| Error::Checkpoint(e.to_string()))?;

    let mut stored: HashMap<String, NamedTensor> = HashMap::new();
    for t in file.tensors {
        if stored.contains_key(&t.name) {
            return Err(Error::Checkpoint(format!("duplicate tensor {}", t.name)));
        }
        stored.insert(t.name.clone(), t);
    }

    let mut failure = None;
    let params = layout(&file.config).map_named(|name, shape| {
        let found = match stored.remove(name) {
            Some(t) if &t.shape != shape => Err(format!(
                "tensor {name} has shape {:?}, config requires {shape:?}",
                t.shape
            )),
            Some(t) => Tensor::new(t.shape, t.data).map_err(|e| format!("tensor {name}: {e}")),
            None => Err(format!("missing tensor {name}")),
        };
        found.unwrap_or_else(|msg| {
            failure.get_or_insert(msg);
            Tensor::zeros(shape)
        })
    });
    if let Some(msg) = failure {
        return Err(Error::Checkpoint(msg));
    }
    if let Some(extra) = stored.keys().next() {
        return Err(Error::Checkpoint(format!("unexpected tensor {extra}")));
    }
    if !params.is_finite() {
        return Err(Error::Checkpoint("non-finite parameter values".into()));
    }

    Ok(Checkpoint {
        model: Model {
            config: file.config,
            params,
        },
        vocab_hash: file.vocab_hash,
        train_seed: file.train_seed,
    })
}
