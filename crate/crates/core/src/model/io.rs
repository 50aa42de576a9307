use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use super::{Adiff, ModelConfig, ModelError, Result};
use crate::audio::TaggerConfig;
use crate::tensor::{read_checkpoint, write_checkpoint, ParamStore, Scalar};

pub const WEIGHTS: &str = "model.bin";
pub const GROUPS: &str = "model.groups";
pub const CONFIG: &str = "model.config";

/// Writes weights, the group sidecar (with metadata as `#` lines) and the config.
pub fn save_model<S: Scalar>(model: &Adiff<S>, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    write_checkpoint(BufWriter::new(fs::File::create(dir.join(WEIGHTS))?), &model.store)?;
    let mut sidecar = String::new();
    for (k, v) in &model.meta {
        sidecar.push_str(&format!("# meta {k}={v}\n"));
    }
    sidecar.push_str(&model.store.group_sidecar());
    fs::write(dir.join(GROUPS), sidecar)?;
    let mut cfg = model.config.to_text();
    cfg.push_str(&model.tagger_config.header());
    fs::write(dir.join(CONFIG), cfg)?;
    Ok(())
}

pub fn load_model<S: Scalar>(dir: impl AsRef<Path>) -> Result<Adiff<S>> {
    let dir = dir.as_ref();
    let weights = dir.join(WEIGHTS);
    if !weights.exists() {
        return Err(ModelError::Checkpoint(format!("no checkpoint at {}", weights.display())));
    }
    let cfg_text = fs::read_to_string(dir.join(CONFIG))?;
    let config = ModelConfig::from_text(&cfg_text)?;
    let tagger_config = TaggerConfig::parse_header(&cfg_text)
        .ok_or_else(|| ModelError::Checkpoint("model config lacks a tagger line".into()))?;
    let mut model = Adiff::<S>::new(config, tagger_config, 0)?;
    let sidecar = fs::read_to_string(dir.join(GROUPS))?;
    let groups = ParamStore::<S>::parse_group_sidecar(&sidecar).map_err(ModelError::Checkpoint)?;
    for (name, group) in groups {
        let id = model.store.id(&name)?;
        if model.store.get(id).group != group {
            return Err(ModelError::Checkpoint(format!("{name} recorded in group {group}")));
        }
    }
    for line in sidecar.lines() {
        if let Some((k, v)) = line.strip_prefix("# meta ").and_then(|kv| kv.split_once('=')) {
            model.meta.insert(k.to_string(), v.to_string());
        }
    }
    let entries = read_checkpoint::<S, _>(BufReader::new(fs::File::open(weights)?))?;
    let n = model.store.load_values(entries.into_iter().map(|e| (e.name, e.value)))?;
    if n != model.store.len() {
        return Err(ModelError::Checkpoint(format!("checkpoint holds {n} of {} parameters", model.store.len())));
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let tc = TaggerConfig { hidden: 8, mels: 8, ..TaggerConfig::default() };
        let mut m = Adiff::<f32>::new(ModelConfig::toy(), tc, 9).unwrap();
        m.meta.insert("stage2".into(), "complete".into());
        save_model(&m, dir.path()).unwrap();
        let back = load_model::<f32>(dir.path()).unwrap();
        assert_eq!(back.config, m.config);
        assert_eq!(back.meta, m.meta);
        for ((_, a), (_, b)) in back.store.iter().zip(m.store.iter()) {
            assert_eq!(a.value, b.value);
        }
        assert!(load_model::<f32>(dir.path().join("missing")).is_err());
    }
}
