//! Checkpoint directories: `model.json` (architecture descriptor) plus
//! `params.ictn` (tensor container).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::network::{build_model, Model};
use crate::data::container::{read_container, write_container, AnyTensor};
use crate::error::{Error, Result};
use crate::tensor::{DType, Scalar, Tensor};

pub const DESCRIPTOR: &str = "model.json";
pub const PARAMS: &str = "params.ictn";
const FORMAT: &str = "intercnn-checkpoint/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Descriptor {
    pub format: String,
    pub config: ModelConfig,
    pub dtype: String,
    pub seed: u64,
    pub params: Vec<String>,
    pub stats: Vec<String>,
}

fn dtype_name(d: DType) -> &'static str {
    match d {
        DType::F32 => "f32",
        DType::F64 => "f64",
    }
}

impl<T: Scalar> Model<T> {
    pub fn descriptor(&self) -> Descriptor {
        Descriptor {
            format: FORMAT.into(),
            config: self.config.clone(),
            dtype: dtype_name(T::DTYPE).into(),
            seed: self.seed,
            params: self.params.names().to_vec(),
            stats: self.params.stat_names().to_vec(),
        }
    }

    /// Named tensors in container order: parameters, then running stats.
    pub fn state_entries(&self) -> Vec<(String, AnyTensor)>
    where
        AnyTensor: From<Tensor<T>>,
    {
        let mut out = Vec::new();
        for (n, v) in self.params.names().iter().zip(self.params.values()) {
            out.push((format!("param/{n}"), AnyTensor::from(v.clone())));
        }
        for (n, s) in self.params.stat_names().iter().zip(self.params.stats()) {
            let c = s.mean.len();
            let mean = Tensor::new(&[c], s.mean.clone()).expect("stat length");
            let var = Tensor::new(&[c], s.var.clone()).expect("stat length");
            out.push((format!("stat/{n}/mean"), AnyTensor::from(mean)));
            out.push((format!("stat/{n}/var"), AnyTensor::from(var)));
        }
        out
    }

    pub fn save(&self, dir: &Path) -> Result<()>
    where
        AnyTensor: From<Tensor<T>>,
    {
        fs::create_dir_all(dir)?;
        let desc = serde_json::to_string_pretty(&self.descriptor())?;
        fs::write(dir.join(DESCRIPTOR), desc)?;
        write_container(&self.state_entries(), &dir.join(PARAMS))
    }

    /// Loads a checkpoint, rebuilding the architecture from its descriptor.
    pub fn load(dir: &Path) -> Result<Self> {
        let desc: Descriptor = serde_json::from_str(&fs::read_to_string(dir.join(DESCRIPTOR))?)?;
        if desc.format != FORMAT {
            return Err(Error::CorruptedState(format!("unknown checkpoint format `{}`", desc.format)));
        }
        if desc.dtype != dtype_name(T::DTYPE) {
            return Err(Error::CorruptedState(format!(
                "checkpoint holds {} parameters, requested {}",
                desc.dtype,
                dtype_name(T::DTYPE)
            )));
        }
        let mut model: Model<T> = build_model(&desc.config, desc.seed)?;
        let expected = model.descriptor();
        if expected.params != desc.params || expected.stats != desc.stats {
            return Err(Error::CorruptedState(
                "descriptor parameter list does not match its architecture".into(),
            ));
        }
        let entries = read_container(&dir.join(PARAMS))?;
        let want = model.params.len() + 2 * model.params.stat_names().len();
        if entries.len() != want {
            return Err(Error::CorruptedState(format!(
                "container holds {} entries, architecture needs {want}",
                entries.len()
            )));
        }
        let mut it = entries.into_iter();
        for i in 0..model.params.len() {
            let (name, t) = it.next().unwrap();
            let want_name = format!("param/{}", model.params.names()[i]);
            let slot = &mut model.params.values_mut()[i];
            *slot = typed(name, &want_name, slot.shape(), t)?;
        }
        for i in 0..model.params.stat_names().len() {
            let base = format!("stat/{}", model.params.stat_names()[i]);
            let c = model.params.stats()[i].mean.len();
            let (n, t) = it.next().unwrap();
            let mean = typed::<T>(n, &format!("{base}/mean"), &[c], t)?;
            let (n, t) = it.next().unwrap();
            let var = typed::<T>(n, &format!("{base}/var"), &[c], t)?;
            let s = &mut model.params.stats_mut()[i];
            s.mean = mean.into_data();
            s.var = var.into_data();
        }
        Ok(model)
    }

    /// Like [`Model::load`] but also requires the stored config to equal `cfg`.
    pub fn load_matching(dir: &Path, cfg: &ModelConfig) -> Result<Self> {
        let m = Self::load(dir)?;
        if &m.config != cfg {
            return Err(Error::CorruptedState(format!(
                "checkpoint architecture differs from the requested one:\n stored {}\n wanted {}",
                serde_json::to_string(&m.config)?,
                serde_json::to_string(cfg)?
            )));
        }
        Ok(m)
    }
}

fn typed<T: Scalar>(name: String, want: &str, shape: &[usize], t: AnyTensor) -> Result<Tensor<T>> {
    if name != want {
        return Err(Error::CorruptedState(format!("expected entry `{want}`, found `{name}`")));
    }
    if t.shape() != shape {
        return Err(Error::CorruptedState(format!(
            "entry `{name}` has shape {:?}, expected {shape:?}",
            t.shape()
        )));
    }
    t.into_typed()
}
