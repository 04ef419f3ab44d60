//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic   8 bytes  "LOBTCKPT"
//! version u32
//! meta    u64 length + UTF-8 JSON
//! count   u32
//! entry*  u32 name length, name, u8 dtype (0 = f32, 1 = f64),
//!         u32 rank, u64 dims[rank], values
//! ```

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::model::{Architecture, Model, ModelSpec};
use crate::optim::RmsProp;
use crate::svm::LinearSvm;
use crate::tensor::{NnError, Tensor};
use crate::Result;

pub const MAGIC: &[u8; 8] = b"LOBTCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dtype {
    #[default]
    F32,
    F64,
}

impl Dtype {
    fn tag(self) -> u8 {
        match self {
            Dtype::F32 => 0,
            Dtype::F64 => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub spec: ModelSpec,
    #[serde(default)]
    pub extra: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub metadata: Metadata,
    pub dtype: Dtype,
    pub tensors: Vec<(String, Tensor)>,
}

const OPTIM_PREFIX: &str = "optim.";

impl Checkpoint {
    pub fn from_model(model: &Model, optimizer: Option<&RmsProp>, extra: serde_json::Value, dtype: Dtype) -> Self {
        let params = model.named_params();
        let mut tensors: Vec<(String, Tensor)> = params.iter().map(|(n, p)| (n.clone(), p.value.clone())).collect();
        tensors.extend(model.named_buffers().into_iter().map(|(n, t)| (n, t.clone())));
        if let Some(opt) = optimizer {
            for ((name, _), acc) in params.iter().zip(opt.accumulators()) {
                tensors.push((format!("{OPTIM_PREFIX}{name}"), acc.clone()));
            }
        }
        Checkpoint {
            metadata: Metadata {
                spec: model.spec().clone(),
                extra,
            },
            dtype,
            tensors,
        }
    }

    pub fn from_svm(spec: &ModelSpec, svm: &LinearSvm, extra: serde_json::Value, dtype: Dtype) -> Self {
        Checkpoint {
            metadata: Metadata {
                spec: spec.clone(),
                extra,
            },
            dtype,
            tensors: vec![
                ("svm.weight".into(), svm.weight.clone()),
                ("svm.bias".into(), svm.bias.clone()),
            ],
        }
    }

    fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| NnError::Checkpoint(format!("missing tensor {name}")))
    }

    /// Rebuilds the model described by the metadata and loads every tensor.
    pub fn restore_model(&self) -> Result<Model> {
        let mut model = Model::build(self.metadata.spec.clone(), 0)?;
        self.load_into(&mut model, None)?;
        Ok(model)
    }

    pub fn load_into(&self, model: &mut Model, optimizer: Option<&mut RmsProp>) -> Result<()> {
        if model.spec() != &self.metadata.spec {
            return Err(NnError::Checkpoint("model spec differs from checkpoint".into()));
        }
        let param_names: Vec<String> = model.named_params().into_iter().map(|(n, _)| n).collect();
        for (name, t) in model.named_tensors_mut() {
            let src = self.get(&name)?;
            if src.shape() != t.shape() {
                return Err(NnError::Checkpoint(format!(
                    "{name}: shape {:?} in checkpoint, {:?} in model",
                    src.shape(),
                    t.shape()
                )));
            }
            *t = src.clone();
        }
        if let Some(opt) = optimizer {
            let acc: Vec<Tensor> = param_names
                .iter()
                .map(|n| self.get(&format!("{OPTIM_PREFIX}{n}")).cloned())
                .collect::<Result<_>>()?;
            opt.set_accumulators(acc)?;
        }
        Ok(())
    }

    pub fn restore_svm(&self) -> Result<LinearSvm> {
        if self.metadata.spec.architecture != Architecture::LinearSvm {
            return Err(NnError::Checkpoint("checkpoint does not hold a linear SVM".into()));
        }
        let weight = self.get("svm.weight")?.clone();
        let bias = self.get("svm.bias")?.clone();
        Ok(LinearSvm {
            weight,
            bias,
            steps: 0,
        })
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        let meta = serde_json::to_vec(&self.metadata).map_err(|e| NnError::Checkpoint(e.to_string()))?;
        w.write_all(&(meta.len() as u64).to_le_bytes())?;
        w.write_all(&meta)?;
        w.write_all(&(self.tensors.len() as u32).to_le_bytes())?;
        for (name, t) in &self.tensors {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&[self.dtype.tag()])?;
            w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
            for &d in t.shape() {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            match self.dtype {
                Dtype::F32 => {
                    for &v in t.data() {
                        w.write_all(&(v as f32).to_le_bytes())?;
                    }
                }
                Dtype::F64 => {
                    for &v in t.data() {
                        w.write_all(&v.to_le_bytes())?;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to memory");
        out
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(NnError::Checkpoint("bad magic".into()));
        }
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(NnError::Checkpoint(format!("unsupported version {version}")));
        }
        let meta_len = read_u64(r)? as usize;
        let meta = read_vec(r, meta_len)?;
        let metadata: Metadata =
            serde_json::from_slice(&meta).map_err(|e| NnError::Checkpoint(e.to_string()))?;
        let count = read_u32(r)? as usize;
        let mut tensors = Vec::with_capacity(count.min(4096));
        let mut dtype = None;
        for _ in 0..count {
            let nlen = read_u32(r)? as usize;
            let name = String::from_utf8(read_vec(r, nlen)?)
                .map_err(|_| NnError::Checkpoint("tensor name is not UTF-8".into()))?;
            let mut tag = [0u8];
            r.read_exact(&mut tag)?;
            let dt = match tag[0] {
                0 => Dtype::F32,
                1 => Dtype::F64,
                t => return Err(NnError::Checkpoint(format!("unknown dtype tag {t}"))),
            };
            if *dtype.get_or_insert(dt) != dt {
                return Err(NnError::Checkpoint("mixed dtypes".into()));
            }
            let rank = read_u32(r)? as usize;
            let shape = (0..rank).map(|_| read_u64(r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let data = match dt {
                Dtype::F32 => read_vec(r, n * 4)?
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
                    .collect(),
                Dtype::F64 => read_vec(r, n * 8)?
                    .chunks_exact(8)
                    .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                    .collect(),
            };
            tensors.push((name, Tensor::new(shape, data)?));
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(NnError::Checkpoint("trailing bytes".into()));
        }
        Ok(Checkpoint {
            metadata,
            dtype: dtype.unwrap_or_default(),
            tensors,
        })
    }

    pub fn from_bytes(mut bytes: &[u8]) -> Result<Self> {
        Self::read_from(&mut bytes)
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_vec<R: Read>(r: &mut R, n: usize) -> Result<Vec<u8>> {
    let mut v = Vec::new();
    r.take(n as u64).read_to_end(&mut v)?;
    if v.len() != n {
        return Err(NnError::Checkpoint("truncated".into()));
    }
    Ok(v)
}
