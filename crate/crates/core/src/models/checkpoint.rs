//! Binary checkpoint files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      8 bytes  "PNXCKPT\0"
//! version    u32
//! desc_len   u64
//! descriptor desc_len bytes of JSON: architecture, training metadata and
//!            the (name, shape) list of every blob
//! blobs      f32 values of each blob in descriptor order
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FusionNet, FusionNetConfig, Network, PatchNet, PatchNetConfig};
use crate::error::{Error, Result};
use crate::rng::seeded;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"PNXCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "config", rename_all = "snake_case")]
pub enum Architecture {
    PatchNet(PatchNetConfig),
    FusionNet(FusionNetConfig),
}

impl Architecture {
    fn name(&self) -> &'static str {
        match self {
            Architecture::PatchNet(_) => "patch_net",
            Architecture::FusionNet(_) => "fusion_net",
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub epoch: u32,
    pub seed: u64,
    pub final_lr: f64,
}

#[derive(Serialize, Deserialize)]
struct BlobInfo {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Descriptor {
    architecture: Architecture,
    meta: TrainMeta,
    blobs: Vec<BlobInfo>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub architecture: Architecture,
    pub meta: TrainMeta,
    pub blobs: Vec<(String, Tensor<f32>)>,
}

fn collect<N: Network<f32>>(net: &N) -> Vec<(String, Tensor<f32>)> {
    net.named_params().into_iter().map(|(n, t)| (n, t.clone())).collect()
}

/// Copies blobs into `net`, checking names and shapes one by one.
fn assign<N: Network<f32>>(net: &mut N, blobs: &[(String, Tensor<f32>)]) -> Result<()> {
    let expected: Vec<(String, Vec<usize>)> =
        net.named_params().into_iter().map(|(n, t)| (n, t.shape().to_vec())).collect();
    for (i, (name, shape)) in expected.iter().enumerate() {
        let Some((bname, blob)) = blobs.get(i) else {
            return Err(Error::Load(format!("blob `{name}` is missing from the checkpoint")));
        };
        if bname != name {
            return Err(Error::Load(format!("blob `{bname}` found where the architecture expects `{name}`")));
        }
        if blob.shape() != shape.as_slice() {
            return Err(Error::Load(format!(
                "blob `{name}` has shape {:?} but the architecture expects {shape:?}",
                blob.shape()
            )));
        }
    }
    if let Some((extra, _)) = blobs.get(expected.len()) {
        return Err(Error::Load(format!("blob `{extra}` is not part of the architecture")));
    }
    for (p, (_, blob)) in net.params_mut().into_iter().zip(blobs) {
        *p = blob.clone();
    }
    Ok(())
}

impl Checkpoint {
    pub fn from_patchnet(net: &PatchNet<f32>, meta: TrainMeta) -> Self {
        Self { architecture: Architecture::PatchNet(net.config.clone()), meta, blobs: collect(net) }
    }

    pub fn from_fusionnet(net: &FusionNet<f32>, meta: TrainMeta) -> Self {
        Self { architecture: Architecture::FusionNet(net.config.clone()), meta, blobs: collect(net) }
    }

    /// Rebuilds a stage-1 network with the given architecture.
    pub fn patchnet_as(&self, config: &PatchNetConfig) -> Result<PatchNet<f32>> {
        let mut net = PatchNet::init(config.clone(), &mut seeded(0))?;
        assign(&mut net, &self.blobs)?;
        Ok(net)
    }

    pub fn patchnet(&self) -> Result<PatchNet<f32>> {
        match &self.architecture {
            Architecture::PatchNet(cfg) => self.patchnet_as(cfg),
            other => Err(Error::Load(format!("checkpoint holds a {}, not a patch_net", other.name()))),
        }
    }

    pub fn fusionnet_as(&self, config: &FusionNetConfig) -> Result<FusionNet<f32>> {
        let mut net = FusionNet::init(config.clone(), &mut seeded(0))?;
        assign(&mut net, &self.blobs)?;
        Ok(net)
    }

    pub fn fusionnet(&self) -> Result<FusionNet<f32>> {
        match &self.architecture {
            Architecture::FusionNet(cfg) => self.fusionnet_as(cfg),
            other => Err(Error::Load(format!("checkpoint holds a {}, not a fusion_net", other.name()))),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let desc = Descriptor {
            architecture: self.architecture.clone(),
            meta: self.meta.clone(),
            blobs: self
                .blobs
                .iter()
                .map(|(n, t)| BlobInfo { name: n.clone(), shape: t.shape().to_vec() })
                .collect(),
        };
        let json = serde_json::to_vec(&desc).expect("descriptor serializes");
        let floats: usize = self.blobs.iter().map(|(_, t)| t.len()).sum();
        let mut out = Vec::with_capacity(20 + json.len() + 4 * floats);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in &self.blobs {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let short = |what: &str| Error::Load(format!("checkpoint truncated while reading {what}"));
        if bytes.len() < 8 {
            return Err(short("the magic"));
        }
        if &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(Error::Load("not a checkpoint file (bad magic)".into()));
        }
        let version = u32::from_le_bytes(bytes.get(8..12).ok_or_else(|| short("the version"))?.try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(Error::Load(format!(
                "checkpoint format version {version} is not supported (expected {CHECKPOINT_VERSION})"
            )));
        }
        let len = u64::from_le_bytes(bytes.get(12..20).ok_or_else(|| short("the descriptor length"))?.try_into().unwrap());
        let end = usize::try_from(len).ok().and_then(|l| l.checked_add(20)).ok_or_else(|| short("the descriptor"))?;
        let json = bytes.get(20..end).ok_or_else(|| short("the descriptor"))?;
        let desc: Descriptor =
            serde_json::from_slice(json).map_err(|e| Error::Load(format!("checkpoint descriptor: {e}")))?;
        let mut pos = end;
        let mut blobs = Vec::with_capacity(desc.blobs.len());
        for info in desc.blobs {
            let n: usize = info.shape.iter().product();
            let chunk = bytes.get(pos..pos + 4 * n).ok_or_else(|| short(&format!("blob `{}`", info.name)))?;
            let data = chunk.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            let t = Tensor::new(info.shape, data).map_err(|e| Error::Load(format!("blob `{}`: {e}", info.name)))?;
            blobs.push((info.name, t));
            pos += 4 * n;
        }
        if pos != bytes.len() {
            return Err(Error::Load(format!("{} trailing bytes after the last blob", bytes.len() - pos)));
        }
        Ok(Self { architecture: desc.architecture, meta: desc.meta, blobs })
    }
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, checkpoint.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes).map_err(|e| match e {
        Error::Load(m) => Error::Load(format!("{}: {m}", path.display())),
        other => other,
    })
}
