//! Binary model container: magic `SNCB`, u16 version, a JSON architecture
//! descriptor, then a table of named f32 tensors. All integers little-endian.

use std::path::Path;

use diffcomp::{Activation, Mlp, MlpSpec, ParamBundle, Tensor};
use serde::{Deserialize, Serialize};

use crate::barrier::{BarrierArch, BarrierHyper, BarrierModel, NonSeqArch, NonSeqBarrierModel};
use crate::dynamics::{learned_input_width, DynamicsKind, DynamicsParams, LearnedDynamics};
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"SNCB";
pub const VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct ContainerTensor {
    pub name: String,
    pub dims: Vec<u32>,
    pub data: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelContainer {
    pub version: u16,
    /// UTF-8 JSON text describing the architecture.
    pub descriptor: String,
    pub tensors: Vec<ContainerTensor>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Container(msg.into())
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            bad(format!("truncated container: {what} needs {n} bytes at offset {}, {} left", self.at, self.bytes.len() - self.at))
        })?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

impl ModelContainer {
    pub fn new(descriptor: String, tensors: Vec<ContainerTensor>) -> Self {
        Self { version: VERSION, descriptor, tensors }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        let desc = self.descriptor.as_bytes();
        let desc_len = u32::try_from(desc.len()).map_err(|_| bad("descriptor longer than u32::MAX bytes"))?;
        out.extend_from_slice(&desc_len.to_le_bytes());
        out.extend_from_slice(desc);
        let count = u32::try_from(self.tensors.len()).map_err(|_| bad("too many tensors"))?;
        out.extend_from_slice(&count.to_le_bytes());
        for t in &self.tensors {
            let name = t.name.as_bytes();
            let name_len = u16::try_from(name.len()).map_err(|_| bad(format!("tensor name of {} bytes exceeds u16", name.len())))?;
            let rank = u8::try_from(t.dims.len()).map_err(|_| bad(format!("tensor '{}' has rank {} > 255", t.name, t.dims.len())))?;
            let n = t.dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d as usize)).ok_or_else(|| bad("dimension product overflows"))?;
            if n != t.data.len() {
                return Err(bad(format!("tensor '{}' has {} values for dims {:?}", t.name, t.data.len(), t.dims)));
            }
            out.extend_from_slice(&name_len.to_le_bytes());
            out.extend_from_slice(name);
            out.push(rank);
            for d in &t.dims {
                out.extend_from_slice(&d.to_le_bytes());
            }
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, at: 0 };
        let magic = r.take(4, "magic")?;
        if magic != MAGIC {
            return Err(bad(format!("bad magic {magic:?}, expected {MAGIC:?}")));
        }
        let version = r.u16("version")?;
        if version != VERSION {
            return Err(bad(format!("unsupported container version {version}, this build reads version {VERSION}")));
        }
        let desc_len = r.u32("descriptor length")? as usize;
        let descriptor = String::from_utf8(r.take(desc_len, "descriptor")?.to_vec()).map_err(|_| bad("descriptor is not UTF-8"))?;
        let count = r.u32("tensor count")?;
        let mut tensors = Vec::new();
        for i in 0..count {
            let name_len = r.u16("tensor name length")? as usize;
            let name = String::from_utf8(r.take(name_len, "tensor name")?.to_vec()).map_err(|_| bad(format!("tensor {i} name is not UTF-8")))?;
            let rank = r.u8("tensor rank")?;
            let dims = (0..rank).map(|_| r.u32("tensor dims")).collect::<Result<Vec<u32>>>()?;
            let n = dims
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d as usize))
                .and_then(|n| n.checked_mul(4).map(|_| n))
                .ok_or_else(|| bad(format!("tensor '{name}' dims {dims:?} overflow")))?;
            let payload = r.take(n * 4, "tensor payload")?;
            let data = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            tensors.push(ContainerTensor { name, dims, data });
        }
        if r.at != bytes.len() {
            return Err(bad(format!("{} trailing bytes after the tensor table", bytes.len() - r.at)));
        }
        Ok(Self { version, descriptor, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Tensors as f64 parameters, skipping the names in `except`.
    fn params(&self, except: &[&str]) -> Result<ParamBundle> {
        let mut p = ParamBundle::new();
        for t in self.tensors.iter().filter(|t| !except.contains(&t.name.as_str())) {
            let dims: Vec<usize> = t.dims.iter().map(|&d| d as usize).collect();
            p.push(t.name.clone(), Tensor::new(dims, t.data.iter().map(|&v| v as f64).collect())?)?;
        }
        Ok(p)
    }
}

fn tensors_of(p: &ParamBundle) -> Vec<ContainerTensor> {
    p.iter()
        .map(|(name, t)| ContainerTensor {
            name: name.to_string(),
            dims: t.shape().iter().map(|&d| d as u32).collect(),
            data: t.data().iter().map(|&v| v as f32).collect(),
        })
        .collect()
}

/// What a container holds, as recorded in its descriptor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum Descriptor {
    Barrier { arch: BarrierArch, hyper: BarrierHyper, q: usize },
    NonSeqBarrier { arch: NonSeqArch, hyper: BarrierHyper, q: usize },
    LearnedDynamics { kind: DynamicsKind, widths: Vec<usize>, held_out_rmse: Vec<f64>, state_params: DynamicsParams },
}

/// A model that can be stored in a container.
#[derive(Clone, Debug)]
pub enum StoredModel {
    Barrier(BarrierModel),
    NonSeqBarrier(NonSeqBarrierModel),
    LearnedDynamics(LearnedDynamics),
}

const NORM: [&str; 4] = ["norm.in_mean", "norm.in_scale", "norm.out_mean", "norm.out_scale"];

impl StoredModel {
    pub fn to_container(&self) -> Result<ModelContainer> {
        let q = crate::observe::RelativeState::DIM;
        let (desc, tensors) = match self {
            StoredModel::Barrier(m) => (Descriptor::Barrier { arch: m.arch.clone(), hyper: m.hyper, q }, tensors_of(&m.params)),
            StoredModel::NonSeqBarrier(m) => (Descriptor::NonSeqBarrier { arch: m.arch.clone(), hyper: m.hyper, q }, tensors_of(&m.params)),
            StoredModel::LearnedDynamics(m) => {
                let mut t = tensors_of(&m.params);
                for (name, v) in NORM.iter().zip([&m.in_mean, &m.in_scale, &m.out_mean, &m.out_scale]) {
                    t.push(ContainerTensor { name: name.to_string(), dims: vec![v.len() as u32], data: v.iter().map(|&x| x as f32).collect() });
                }
                let desc = Descriptor::LearnedDynamics {
                    kind: m.kind,
                    widths: m.mlp.spec().widths.clone(),
                    held_out_rmse: m.held_out_rmse.clone(),
                    state_params: m.state_params,
                };
                (desc, t)
            }
        };
        let text = serde_json::to_string(&desc).map_err(|e| bad(e.to_string()))?;
        Ok(ModelContainer::new(text, tensors))
    }

    pub fn from_container(c: &ModelContainer) -> Result<Self> {
        let desc: Descriptor = serde_json::from_str(&c.descriptor).map_err(|e| bad(format!("descriptor: {e}")))?;
        match desc {
            Descriptor::Barrier { arch, hyper, .. } => Ok(StoredModel::Barrier(BarrierModel::from_params(arch, hyper, c.params(&[])?)?)),
            Descriptor::NonSeqBarrier { arch, hyper, .. } => {
                Ok(StoredModel::NonSeqBarrier(NonSeqBarrierModel::from_params(arch, hyper, c.params(&[])?)?))
            }
            Descriptor::LearnedDynamics { kind, widths, held_out_rmse, state_params } => {
                let mut norm = Vec::new();
                for name in NORM {
                    let t = c.tensors.iter().find(|t| t.name == name).ok_or_else(|| bad(format!("missing tensor '{name}'")))?;
                    norm.push(t.data.iter().map(|&v| v as f64).collect::<Vec<f64>>());
                }
                let params = c.params(&NORM)?;
                if widths.first() != Some(&learned_input_width(kind)) || widths.last() != Some(&kind.state_dim()) {
                    return Err(bad(format!("dynamics widths {widths:?} do not fit kind {}", kind.name())));
                }
                let mlp = Mlp::bind(MlpSpec::new(widths, Activation::Tanh)?, "dyn", &params)?;
                let [in_mean, in_scale, out_mean, out_scale]: [Vec<f64>; 4] = norm.try_into().unwrap();
                Ok(StoredModel::LearnedDynamics(LearnedDynamics {
                    kind,
                    params,
                    mlp,
                    in_mean,
                    in_scale,
                    out_mean,
                    out_scale,
                    held_out_rmse,
                    state_params,
                }))
            }
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container()?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&ModelContainer::load(path)?)
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            StoredModel::Barrier(_) => "barrier",
            StoredModel::NonSeqBarrier(_) => "nonseq_barrier",
            StoredModel::LearnedDynamics(_) => "learned_dynamics",
        }
    }
}
