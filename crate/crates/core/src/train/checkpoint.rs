//! Binary checkpoints, little-endian:
//! `"MTGN" | u32 version | u32 count | records… | u32 count | moment records… | u32 epoch | u64 step | u64 seed`,
//! each record being `u16 name_len | name | u8 rank | u32 dims[rank] | f32 data`.
//!
//! Besides network parameters the first section holds the replay buffers
//! (`buffer/<net>/<i>`) and the run configuration as bytes (`meta/config`).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::step::{DepthBranch, Net, SemanticBranch};
use super::{Moments, ReplayBuffer, TrainConfig, TrainerState};
use crate::error::{CheckpointFault, Error, Result};
use crate::nn::ModelParams;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"MTGN";
pub const CHECKPOINT_VERSION: u32 = 1;
const CONFIG_KEY: &str = "meta/config";

/// The sections of a checkpoint file before interpretation.
#[derive(Clone, Debug, PartialEq)]
pub struct RawCheckpoint {
    pub params: Vec<(String, Tensor)>,
    pub moments: Vec<(String, Tensor)>,
    pub epoch: u32,
    pub step: u64,
    pub seed: u64,
}

fn put_records(out: &mut Vec<u8>, records: &[(String, Tensor)]) -> Result<()> {
    out.extend_from_slice(&(records.len() as u32).to_le_bytes());
    for (name, t) in records {
        let len = u16::try_from(name.len())
            .map_err(|_| Error::Contract(format!("tensor name too long: {name}")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        let rank = u8::try_from(t.shape().len()).map_err(|_| Error::Contract(format!("rank too high: {name}")))?;
        out.push(rank);
        for &d in t.shape() {
            let d = u32::try_from(d).map_err(|_| Error::Contract(format!("dimension too large: {name}")))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(())
}

impl RawCheckpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        put_records(&mut out, &self.params)?;
        put_records(&mut out, &self.moments)?;
        out.extend_from_slice(&self.epoch.to_le_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader {
            bytes,
            pos: 0,
            path: path.to_path_buf(),
        };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(r.fault_at(0, CheckpointFault::BadMagic));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(r.fault_at(4, CheckpointFault::BadVersion(version)));
        }
        let params = r.records()?;
        let moments = r.records()?;
        let epoch = r.u32()?;
        let step = r.u64()?;
        let seed = r.u64()?;
        if r.pos != bytes.len() {
            return Err(r.fault_at(r.pos, CheckpointFault::TrailingBytes));
        }
        Ok(RawCheckpoint {
            params,
            moments,
            epoch,
            step,
            seed,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: PathBuf,
}

impl Reader<'_> {
    fn fault_at(&self, offset: usize, fault: CheckpointFault) -> Error {
        Error::Checkpoint {
            path: self.path.clone(),
            offset: offset as u64,
            fault,
        }
    }

    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.fault_at(self.pos, CheckpointFault::Truncated));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn records(&mut self) -> Result<Vec<(String, Tensor)>> {
        let count = self.u32()? as usize;
        let mut out = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let start = self.pos;
            let len = u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")) as usize;
            let name = String::from_utf8(self.take(len)?.to_vec())
                .map_err(|_| self.fault_at(start, CheckpointFault::BadRecord("name is not UTF-8".into())))?;
            let rank = self.take(1)?[0] as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(self.u32()? as usize);
            }
            let n = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .and_then(|n| n.checked_mul(4))
                .ok_or_else(|| self.fault_at(start, CheckpointFault::BadRecord(format!("{name}: size overflow"))))?;
            let data = self
                .take(n)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            let t = Tensor::new(shape, data)
                .map_err(|e| self.fault_at(start, CheckpointFault::BadRecord(format!("{name}: {e}"))))?;
            out.push((name, t));
        }
        Ok(out)
    }
}

fn buffer_records(out: &mut Vec<(String, Tensor)>, name: &str, buf: &ReplayBuffer) {
    for (i, t) in buf.items().iter().enumerate() {
        out.push((format!("buffer/{name}/{i:03}"), t.clone()));
    }
}

impl TrainerState {
    pub fn to_raw(&self) -> RawCheckpoint {
        let mut params = Vec::new();
        let mut moments = Vec::new();
        for (net, n) in self.nets() {
            for (k, t) in n.params.iter() {
                params.push((format!("{net}/{k}"), t.clone()));
                moments.push((format!("{net}/{k}/m"), n.moments.m[k].clone()));
                moments.push((format!("{net}/{k}/v"), n.moments.v[k].clone()));
            }
        }
        buffer_records(&mut params, "D_X1", &self.semantic.buf_x);
        buffer_records(&mut params, "D_Y1", &self.semantic.buf_y);
        buffer_records(&mut params, "D_X2", &self.depth.buf_x);
        buffer_records(&mut params, "D_Y2", &self.depth.buf_y);
        let text = self.config.to_text();
        let bytes: Vec<f32> = text.bytes().map(f32::from).collect();
        params.push((
            CONFIG_KEY.to_string(),
            Tensor::new(vec![bytes.len()], bytes).expect("1-D tensor"),
        ));
        RawCheckpoint {
            params,
            moments,
            epoch: self.epoch,
            step: self.step,
            seed: self.config.seed,
        }
    }

    pub fn from_raw(raw: RawCheckpoint) -> Result<Self> {
        let mut params: BTreeMap<String, Tensor> = BTreeMap::new();
        for (k, t) in raw.params {
            if params.insert(k.clone(), t).is_some() {
                return Err(Error::ModelMismatch(format!("duplicate tensor {k}")));
            }
        }
        let mut moments: BTreeMap<String, Tensor> = raw.moments.into_iter().collect();
        let config_t = params
            .remove(CONFIG_KEY)
            .ok_or_else(|| Error::ModelMismatch("checkpoint has no run configuration".into()))?;
        let text: String = config_t.data().iter().map(|&b| b as u8 as char).collect();
        let config = TrainConfig::parse(&text)?;
        if config.seed != raw.seed {
            return Err(Error::ModelMismatch(format!(
                "seed {} in header differs from configured seed {}",
                raw.seed, config.seed
            )));
        }

        let mut take_net = |net: &str| -> Result<Net> {
            let prefix = format!("{net}/");
            let keys: Vec<String> = params.keys().filter(|k| k.starts_with(&prefix)).cloned().collect();
            let mut tensors = BTreeMap::new();
            let (mut m, mut v) = (BTreeMap::new(), BTreeMap::new());
            for full in keys {
                let short = full[prefix.len()..].to_string();
                let t = params.remove(&full).expect("key listed");
                let missing = || Error::ModelMismatch(format!("no optimizer moments for {full}"));
                m.insert(short.clone(), moments.remove(&format!("{full}/m")).ok_or_else(missing)?);
                v.insert(short.clone(), moments.remove(&format!("{full}/v")).ok_or_else(missing)?);
                tensors.insert(short, t);
            }
            let params = ModelParams::from_tensors(config.archs()[net].clone(), tensors)
                .map_err(|e| Error::ModelMismatch(format!("{net}: {e}")))?;
            let moments = Moments { m, v };
            moments.check(&params)?;
            Ok(Net { params, moments })
        };
        let (gs, fs, dx1, dy1) = (take_net("G_s")?, take_net("F_s")?, take_net("D_X1")?, take_net("D_Y1")?);
        let (gd, fd, dx2, dy2) = (take_net("G_d")?, take_net("F_d")?, take_net("D_X2")?, take_net("D_Y2")?);

        let mut take_buffer = |net: &str| {
            let prefix = format!("buffer/{net}/");
            let keys: Vec<String> = params.keys().filter(|k| k.starts_with(&prefix)).cloned().collect();
            let items = keys.iter().map(|k| params.remove(k).expect("key listed")).collect();
            ReplayBuffer::from_items(config.buffer_capacity, items)
        };
        let (bx1, by1, bx2, by2) = (take_buffer("D_X1"), take_buffer("D_Y1"), take_buffer("D_X2"), take_buffer("D_Y2"));
        if let Some(k) = params.keys().next() {
            return Err(Error::ModelMismatch(format!("unexpected tensor {k}")));
        }
        if let Some(k) = moments.keys().next() {
            return Err(Error::ModelMismatch(format!("unexpected moment tensor {k}")));
        }
        if raw.epoch as usize > config.optimizer.total_epochs() {
            return Err(Error::ModelMismatch(format!("epoch {} beyond schedule", raw.epoch)));
        }
        Ok(TrainerState {
            semantic: SemanticBranch {
                gs,
                fs,
                dx: dx1,
                dy: dy1,
                buf_x: bx1,
                buf_y: by1,
            },
            depth: DepthBranch {
                gd,
                fd,
                dx: dx2,
                dy: dy2,
                buf_x: bx2,
                buf_y: by2,
            },
            config,
            epoch: raw.epoch,
            step: raw.step,
        })
    }
}

/// Writes to a sibling temporary file first so a crash never leaves a torn checkpoint.
pub fn save_checkpoint(state: &TrainerState, path: &Path) -> Result<()> {
    let bytes = state.to_raw().to_bytes()?;
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<TrainerState> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    TrainerState::from_raw(RawCheckpoint::from_bytes(&bytes, path)?)
}
