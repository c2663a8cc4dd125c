use std::collections::HashMap;
use std::fs;
use std::path::Path;

use mostnet_autograd::{Adam, ParamId, Tensor};
use safetensors::tensor::{Dtype, SafeTensors, TensorView};
use sha2::{Digest, Sha256};

use super::TrainConfig;
use crate::mostnet::{ModelConfig, MostNet};
use crate::{Error, Result};

const PARAM_PREFIX: &str = "param/";
const ADAM_M_PREFIX: &str = "adam.m/";
const ADAM_V_PREFIX: &str = "adam.v/";

/// SHA-256 of the canonical JSON form of a model configuration.
pub fn config_fingerprint(config: &ModelConfig) -> String {
    let json = serde_json::to_string(config).expect("model config serializes");
    hex::encode(Sha256::digest(json.as_bytes()))
}

/// Optimizer moments keyed by parameter name.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub steps: u64,
    pub moments: Vec<(String, Tensor<f32>, Tensor<f32>)>,
}

/// Everything needed to resume training or run inference.
///
/// Stored as a safetensors archive: tensors `param/<name>`, `adam.m/<name>`,
/// `adam.v/<name>`; metadata keys `model_config` and `train_config` (JSON),
/// `step`, `adam_steps` and `fingerprint`.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model_config: ModelConfig,
    pub train_config: Option<TrainConfig>,
    pub step: u64,
    pub params: Vec<(String, Tensor<f32>)>,
    pub adam: Option<AdamState>,
}

fn bytes_of(t: &Tensor<f32>) -> Vec<u8> {
    t.data().iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn tensor_of(view: &TensorView<'_>, name: &str) -> Result<Tensor<f32>> {
    if view.dtype() != Dtype::F32 {
        return Err(Error::Checkpoint(format!("tensor {name} is not f32")));
    }
    let data = view
        .data()
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    Ok(Tensor::new(view.shape(), data))
}

impl Checkpoint {
    pub fn from_model(model: &MostNet<f32>, opt: Option<&Adam<f32>>, step: u64, train: Option<&TrainConfig>) -> Self {
        let store = model.store();
        let params = store
            .ids()
            .map(|id| (store.name(id).to_string(), store.value(id).clone()))
            .collect();
        let adam = opt.map(|o| {
            let mut moments: Vec<(String, Tensor<f32>, Tensor<f32>)> = o
                .moments()
                .map(|(id, m, v)| (store.name(id).to_string(), m.clone(), v.clone()))
                .collect();
            moments.sort_by(|a, b| a.0.cmp(&b.0));
            AdamState {
                steps: o.steps(),
                moments,
            }
        });
        Self {
            model_config: model.config().clone(),
            train_config: train.cloned(),
            step,
            params,
            adam,
        }
    }

    pub fn fingerprint(&self) -> String {
        config_fingerprint(&self.model_config)
    }

    /// Rebuilds the model and loads every stored tensor into it.
    pub fn to_model(&self) -> Result<MostNet<f32>> {
        let mut model = MostNet::new(self.model_config.clone())?;
        let store = model.store_mut();
        let ids: Vec<ParamId> = store.ids().collect();
        if ids.len() != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} tensors, model expects {}",
                self.params.len(),
                ids.len()
            )));
        }
        for (name, value) in &self.params {
            let id = store
                .find(name)
                .ok_or_else(|| Error::Checkpoint(format!("unexpected tensor {name}")))?;
            if store.value(id).shape() != value.shape() {
                return Err(Error::Checkpoint(format!("shape mismatch for {name}")));
            }
            store.set(id, value.clone());
        }
        Ok(model)
    }

    /// Optimizer restored against `model`'s parameter ids.
    pub fn to_optimizer(&self, model: &MostNet<f32>) -> Result<Adam<f32>> {
        let mut opt = Adam::default();
        if let Some(state) = &self.adam {
            let store = model.store();
            let moments = state
                .moments
                .iter()
                .map(|(name, m, v)| {
                    store
                        .find(name)
                        .map(|id| (id, m.clone(), v.clone()))
                        .ok_or_else(|| Error::Checkpoint(format!("optimizer state for unknown tensor {name}")))
                })
                .collect::<Result<Vec<_>>>()?;
            opt.restore(state.steps, moments);
        }
        Ok(opt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut owned: Vec<(String, Vec<usize>, Vec<u8>)> = Vec::new();
        for (name, t) in &self.params {
            owned.push((format!("{PARAM_PREFIX}{name}"), t.shape().to_vec(), bytes_of(t)));
        }
        let mut meta = HashMap::new();
        if let Some(adam) = &self.adam {
            for (name, m, v) in &adam.moments {
                owned.push((format!("{ADAM_M_PREFIX}{name}"), m.shape().to_vec(), bytes_of(m)));
                owned.push((format!("{ADAM_V_PREFIX}{name}"), v.shape().to_vec(), bytes_of(v)));
            }
            meta.insert("adam_steps".to_string(), adam.steps.to_string());
        }
        let views = owned
            .iter()
            .map(|(n, s, b)| {
                TensorView::new(Dtype::F32, s.clone(), b)
                    .map(|v| (n.clone(), v))
                    .map_err(|e| Error::Checkpoint(e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        meta.insert(
            "model_config".to_string(),
            serde_json::to_string(&self.model_config).expect("model config serializes"),
        );
        if let Some(tc) = &self.train_config {
            meta.insert("train_config".to_string(), serde_json::to_string(tc).expect("train config serializes"));
        }
        meta.insert("step".to_string(), self.step.to_string());
        meta.insert("fingerprint".to_string(), self.fingerprint());
        let bytes = safetensors::serialize(views, &Some(meta)).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let bad = |m: String| Error::Checkpoint(format!("{}: {m}", path.display()));
        let (_, header) = SafeTensors::read_metadata(&bytes).map_err(|e| bad(e.to_string()))?;
        let meta = header.metadata().clone().ok_or_else(|| bad("missing metadata".into()))?;
        let get = |k: &str| meta.get(k).ok_or_else(|| bad(format!("missing metadata key {k}")));
        let model_config: ModelConfig =
            serde_json::from_str(get("model_config")?).map_err(|e| bad(e.to_string()))?;
        if &config_fingerprint(&model_config) != get("fingerprint")? {
            return Err(bad("config fingerprint mismatch".into()));
        }
        let train_config = match meta.get("train_config") {
            Some(s) => Some(serde_json::from_str(s).map_err(|e| bad(e.to_string()))?),
            None => None,
        };
        let step = get("step")?.parse().map_err(|_| bad("invalid step".into()))?;
        let st = SafeTensors::deserialize(&bytes).map_err(|e| bad(e.to_string()))?;
        let mut names: Vec<String> = st.names().into_iter().cloned().collect();
        names.sort();
        let mut params = Vec::new();
        let mut m_map = HashMap::new();
        let mut v_map = HashMap::new();
        for full in names {
            let view = st.tensor(&full).map_err(|e| bad(e.to_string()))?;
            let t = tensor_of(&view, &full)?;
            if let Some(n) = full.strip_prefix(PARAM_PREFIX) {
                params.push((n.to_string(), t));
            } else if let Some(n) = full.strip_prefix(ADAM_M_PREFIX) {
                m_map.insert(n.to_string(), t);
            } else if let Some(n) = full.strip_prefix(ADAM_V_PREFIX) {
                v_map.insert(n.to_string(), t);
            } else {
                return Err(bad(format!("unexpected tensor {full}")));
            }
        }
        let adam = match meta.get("adam_steps") {
            Some(s) => {
                let steps = s.parse().map_err(|_| bad("invalid adam_steps".into()))?;
                let mut moments = Vec::new();
                let mut keys: Vec<String> = m_map.keys().cloned().collect();
                keys.sort();
                for k in keys {
                    let m = m_map.remove(&k).expect("key present");
                    let v = v_map.remove(&k).ok_or_else(|| bad(format!("missing second moment for {k}")))?;
                    moments.push((k, m, v));
                }
                Some(AdamState { steps, moments })
            }
            None => None,
        };
        Ok(Self {
            model_config,
            train_config,
            step,
            params,
            adam,
        })
    }
}
