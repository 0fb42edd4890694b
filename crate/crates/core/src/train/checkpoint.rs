//! Checkpoint container.
//!
//! ```text
//! magic      8 bytes  "DMAECKPT"
//! version    u32
//! header     u32 n, T, h_s, k1, k2, k3, K; f64 lambda, gamma, m_r, sigma
//! meta       u32 length + UTF-8 JSON (full configs, normalizer, head task)
//! params     u32 count, then per parameter:
//!            u16 id length + UTF-8 id, u8 rank, u32 dims, f32 values
//! ```
//!
//! All integers and floats are little-endian.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::NormalizerState;
use crate::error::{DmaeError, Result};
use crate::model::{DmaeModel, ModelConfig};
use crate::nn::{Module, Param, Tensor};
use crate::train::config::{Pooling, TrainConfig};
use crate::train::finetune::{Head, Task};
use crate::train::pretrain::{stream, INIT_STREAM};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DMAECKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadSpec {
    pub task: Task,
    pub pooling: Pooling,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub normalizer: NormalizerState,
    pub head: Option<HeadSpec>,
    /// Attention layers were in warm-up (uniform weights) when saved.
    #[serde(default)]
    pub warm_up: bool,
}

/// Fixed-layout header fields, duplicated from the JSON metadata so the
/// shape can be read without parsing it.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointHeader {
    pub n: u32,
    pub len: u32,
    pub hidden: u32,
    pub kernel_sizes: [u32; 3],
    pub num_kernels: u32,
    pub kernel_temperature: f64,
    pub fusion_temperature: f64,
    pub mask_ratio: f64,
    pub noise_std: f64,
}

impl CheckpointHeader {
    pub fn of(meta: &CheckpointMeta) -> Self {
        let m = &meta.model;
        CheckpointHeader {
            n: m.n as u32,
            len: m.len as u32,
            hidden: m.hidden as u32,
            kernel_sizes: m.kernel_sizes.map(|k| k as u32),
            num_kernels: m.num_kernels as u32,
            kernel_temperature: m.kernel_temperature,
            fusion_temperature: m.fusion_temperature,
            mask_ratio: meta.train.mask_ratio,
            noise_std: m.noise_std,
        }
    }
}

pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub meta: CheckpointMeta,
    pub model: DmaeModel<f32>,
    pub head: Option<Head>,
}

pub fn encode_checkpoint(model: &DmaeModel<f32>, head: Option<&Head>, meta: &CheckpointMeta) -> Vec<u8> {
    let mut b = Vec::new();
    b.extend_from_slice(CHECKPOINT_MAGIC);
    b.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let h = CheckpointHeader::of(meta);
    for v in [h.n, h.len, h.hidden, h.kernel_sizes[0], h.kernel_sizes[1], h.kernel_sizes[2], h.num_kernels] {
        b.extend_from_slice(&v.to_le_bytes());
    }
    for v in [h.kernel_temperature, h.fusion_temperature, h.mask_ratio, h.noise_std] {
        b.extend_from_slice(&v.to_le_bytes());
    }
    let json = serde_json::to_vec(meta).expect("metadata serializes");
    b.extend_from_slice(&(json.len() as u32).to_le_bytes());
    b.extend_from_slice(&json);
    let mut params = model.params();
    if let Some(head) = head {
        params.extend(head.params());
    }
    b.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for p in params {
        b.extend_from_slice(&(p.id().len() as u16).to_le_bytes());
        b.extend_from_slice(p.id().as_bytes());
        b.push(p.value.ndim() as u8);
        for &d in p.value.shape() {
            b.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in p.value.data() {
            b.extend_from_slice(&v.to_le_bytes());
        }
    }
    b
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| DmaeError::Truncated(format!("checkpoint ends inside {what}")))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
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

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

fn inconsistent(msg: String) -> DmaeError {
    DmaeError::Inconsistent(msg)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8, "magic").map_err(|_| DmaeError::BadMagic("checkpoint".into()))? != CHECKPOINT_MAGIC {
        return Err(DmaeError::BadMagic("checkpoint".into()));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(DmaeError::VersionMismatch { found: version, expected: CHECKPOINT_VERSION });
    }
    let mut ints = [0u32; 7];
    for v in &mut ints {
        *v = r.u32("header")?;
    }
    let mut floats = [0f64; 4];
    for v in &mut floats {
        *v = r.f64("header")?;
    }
    let header = CheckpointHeader {
        n: ints[0],
        len: ints[1],
        hidden: ints[2],
        kernel_sizes: [ints[3], ints[4], ints[5]],
        num_kernels: ints[6],
        kernel_temperature: floats[0],
        fusion_temperature: floats[1],
        mask_ratio: floats[2],
        noise_std: floats[3],
    };
    let json_len = r.u32("metadata length")? as usize;
    let json = r.take(json_len, "metadata")?;
    let meta: CheckpointMeta =
        serde_json::from_slice(json).map_err(|e| inconsistent(format!("metadata does not parse: {e}")))?;
    if CheckpointHeader::of(&meta) != header {
        return Err(inconsistent("fixed header disagrees with metadata".into()));
    }
    let mut model = DmaeModel::<f32>::new(meta.model.clone(), &mut stream(0, INIT_STREAM))
        .map_err(|e| inconsistent(format!("metadata describes an invalid model: {e}")))?;
    let mut head = meta.head.as_ref().map(|h| {
        Head::new(h.task, h.pooling, meta.model.hidden, &mut stream(0, INIT_STREAM))
    });
    let count = r.u32("parameter count")? as usize;
    {
        let mut slots = model.params_mut();
        if let Some(h) = head.as_mut() {
            slots.extend(h.params_mut());
        }
        if count != slots.len() {
            return Err(inconsistent(format!("{count} parameters stored, model has {}", slots.len())));
        }
        for slot in slots {
            read_param(&mut r, slot)?;
        }
    }
    if r.pos != bytes.len() {
        return Err(inconsistent(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    model.set_warm_up(meta.warm_up);
    Ok(Checkpoint { header, meta, model, head })
}

fn read_param(r: &mut Reader, slot: &mut Param<f32>) -> Result<()> {
    let id_len = r.u16("parameter id")? as usize;
    let id = std::str::from_utf8(r.take(id_len, "parameter id")?)
        .map_err(|_| inconsistent("parameter id is not UTF-8".into()))?;
    if id != slot.id() {
        return Err(inconsistent(format!("expected parameter {}, found {id}", slot.id())));
    }
    let rank = r.u8("parameter rank")? as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(r.u32("parameter shape")? as usize);
    }
    if shape != slot.value.shape() {
        return Err(inconsistent(format!("parameter {id} has shape {shape:?}, expected {:?}", slot.value.shape())));
    }
    let raw = r.take(4 * slot.value.len(), "parameter values")?;
    let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    slot.value = Tensor::from_vec(&shape, data)?;
    Ok(())
}

pub fn save_checkpoint(path: &Path, model: &DmaeModel<f32>, head: Option<&Head>, meta: &CheckpointMeta) -> Result<()> {
    fs::write(path, encode_checkpoint(model, head, meta)).map_err(|e| DmaeError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| DmaeError::io(path, e))?;
    decode_checkpoint(&bytes)
}
