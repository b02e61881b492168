//! JSON checkpoints: `{"format": "autotrig-checkpoint/v1", "kind": ..., "model": ...}`.
//! No timestamps are stored, so identical training runs give identical files.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FORMAT_TAG: &str = "autotrig-checkpoint/v1";

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    format: String,
    kind: String,
    model: T,
}

pub fn to_checkpoint_string<T: Serialize>(kind: &str, model: &T) -> Result<String> {
    Ok(serde_json::to_string(&Envelope { format: FORMAT_TAG.into(), kind: kind.into(), model })?)
}

pub fn save_checkpoint<T: Serialize>(path: &Path, kind: &str, model: &T) -> Result<()> {
    fs::write(path, to_checkpoint_string(kind, model)?)?;
    Ok(())
}

/// Reads the `kind` tag without decoding the model.
pub fn checkpoint_kind(path: &Path) -> Result<String> {
    #[derive(Deserialize)]
    struct Head {
        format: String,
        kind: String,
    }
    let head: Head = serde_json::from_str(&fs::read_to_string(path)?)?;
    if head.format != FORMAT_TAG {
        return Err(Error::Input(format!("{}: unsupported checkpoint format {:?}", path.display(), head.format)));
    }
    Ok(head.kind)
}

pub fn load_checkpoint<T: DeserializeOwned>(path: &Path, kinds: &[&str]) -> Result<T> {
    let env: Envelope<T> = serde_json::from_str(&fs::read_to_string(path)?)?;
    if env.format != FORMAT_TAG {
        return Err(Error::Input(format!("{}: unsupported checkpoint format {:?}", path.display(), env.format)));
    }
    if !kinds.contains(&env.kind.as_str()) {
        return Err(Error::Input(format!(
            "{}: checkpoint holds a {} model, expected {}",
            path.display(),
            env.kind,
            kinds.join(" or ")
        )));
    }
    Ok(env.model)
}
