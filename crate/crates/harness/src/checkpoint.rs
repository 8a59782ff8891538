//! Training checkpoints: parameters, Adam moments, step counters and the
//! sampling RNG in one named-tensor container. Values are stored as f64 so a
//! resumed run continues bit for bit.

use std::collections::BTreeMap;
use std::path::Path;

use ltrack_core::container::{Container, DType};
use ltrack_core::optim::Adam;
use ltrack_core::{ParamStore, Tensor};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::error::{Error, Result};

const FORMAT: &str = "ltrack-checkpoint";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Meta {
    format: String,
    version: u32,
    config: Config,
    step: u64,
    adam_step: u64,
    rng: ChaCha8Rng,
    frozen: BTreeMap<String, bool>,
}

/// Everything a run needs to continue where it stopped.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub config: Config,
    pub step: u64,
    pub store: ParamStore,
    pub adam: Adam,
    pub rng: ChaCha8Rng,
}

fn param_key(name: &str) -> String {
    format!("param.{name}")
}

pub fn to_container(state: &TrainState) -> Result<Container> {
    let mut c = Container::new();
    let mut frozen = BTreeMap::new();
    for (id, p) in state.store.iter() {
        c.push(param_key(&p.name), DType::F64, p.value.clone());
        frozen.insert(p.name.clone(), p.frozen);
        if let Some((m, v)) = &state.adam.moments[id.index()] {
            c.push(format!("adam.m.{}", p.name), DType::F64, m.clone());
            c.push(format!("adam.v.{}", p.name), DType::F64, v.clone());
        }
    }
    let meta = Meta {
        format: FORMAT.into(),
        version: VERSION,
        config: state.config.clone(),
        step: state.step,
        adam_step: state.adam.step,
        rng: state.rng.clone(),
        frozen,
    };
    c.metadata = serde_json::to_value(meta)?;
    Ok(c)
}

/// Loads a checkpoint into `store`, whose layout (names, shapes, frozen
/// flags) must match the saved one exactly.
pub fn from_container(c: &Container, mut store: ParamStore) -> Result<TrainState> {
    let meta: Meta = serde_json::from_value(c.metadata.clone())
        .map_err(|e| Error::Checkpoint(format!("bad metadata: {e}")))?;
    if meta.format != FORMAT || meta.version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format {} v{}",
            meta.format, meta.version
        )));
    }
    let saved = c.tensors.iter().filter(|t| t.name.starts_with("param.")).count();
    if saved != store.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {saved} parameters, model has {}",
            store.len()
        )));
    }
    let mut adam = Adam::new(meta.config.adam, &store);
    adam.step = meta.adam_step;
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let (name, frozen, shape) = {
            let p = store.get(id);
            (p.name.clone(), p.frozen, p.value.shape())
        };
        let t = fetch(c, &param_key(&name), shape)?;
        if meta.frozen.get(&name) != Some(&frozen) {
            return Err(Error::Checkpoint(format!("frozen flag of {name} differs")));
        }
        *store.value_mut(id) = t;
        let m = c.get(&format!("adam.m.{name}"));
        let v = c.get(&format!("adam.v.{name}"));
        match (m, v) {
            (Some(_), Some(_)) => {
                let m = fetch(c, &format!("adam.m.{name}"), shape)?;
                let v = fetch(c, &format!("adam.v.{name}"), shape)?;
                adam.moments[id.index()] = Some((m, v));
            }
            (None, None) => {}
            _ => return Err(Error::Checkpoint(format!("incomplete moments for {name}"))),
        }
    }
    Ok(TrainState {
        config: meta.config,
        step: meta.step,
        store,
        adam,
        rng: meta.rng,
    })
}

fn fetch(c: &Container, key: &str, shape: (usize, usize)) -> Result<Tensor> {
    let t = c
        .get(key)
        .ok_or_else(|| Error::Checkpoint(format!("missing tensor {key}")))?;
    if t.dtype != DType::F64 {
        return Err(Error::Checkpoint(format!("{key} is not f64")));
    }
    if t.value.shape() != shape {
        return Err(Error::Checkpoint(format!(
            "{key} has shape {:?}, expected {shape:?}",
            t.value.shape()
        )));
    }
    Ok(t.value.clone())
}

/// Reads only the config stored in a checkpoint.
pub fn read_config(path: impl AsRef<Path>) -> Result<Config> {
    let c = Container::read(path)?;
    let meta: Meta = serde_json::from_value(c.metadata).map_err(|e| Error::Checkpoint(format!("bad metadata: {e}")))?;
    Ok(meta.config)
}

pub fn save(path: impl AsRef<Path>, state: &TrainState) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    to_container(state)?.write(path)?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>, store: ParamStore) -> Result<TrainState> {
    from_container(&Container::read(path)?, store)
}
