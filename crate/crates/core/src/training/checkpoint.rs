//! Checkpoint container.
//!
//! Layout (all integers little-endian):
//! magic `DEOCCKPT`, u32 version, u64 metadata length, metadata JSON,
//! u32 array count, then per array: u32 name length, name, u32 c/h/w, c·h·w f32;
//! finally the SHA-256 of everything before it.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Stage, TrainConfig, TrainState};
use crate::error::{Error, Result};
use crate::losses::LossReport;
use crate::model::{Discriminator, Generator, ModelConfig};
use crate::nn::{Adam, ParamStore, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DEOCCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
struct AdamMeta {
    lr: f32,
    beta1: f32,
    beta2: f32,
    eps: f32,
    t: u64,
}

impl AdamMeta {
    fn of(a: &Adam) -> Self {
        Self {
            lr: a.lr,
            beta1: a.beta1,
            beta2: a.beta2,
            eps: a.eps,
            t: a.t,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Metadata {
    model: ModelConfig,
    stage: Stage,
    step: u64,
    seed: u64,
    train: Option<TrainConfig>,
    adam_g: AdamMeta,
    adam_d: AdamMeta,
    last_report: Option<LossReport>,
}

const GROUPS: [&str; 6] = ["gen", "disc", "adam_g.m", "adam_g.v", "adam_d.m", "adam_d.v"];

fn groups(s: &TrainState) -> [&ParamStore; 6] {
    [
        &s.generator.params,
        &s.discriminator.params,
        &s.opt_g.m,
        &s.opt_g.v,
        &s.opt_d.m,
        &s.opt_d.v,
    ]
}

/// Serializes `state` (and the config that produced it, if any) to `path`.
pub fn save_checkpoint(state: &TrainState, cfg: Option<&TrainConfig>, path: &Path) -> Result<()> {
    let meta = Metadata {
        model: *state.model_config(),
        stage: state.stage,
        step: state.step,
        seed: state.seed,
        train: cfg.cloned(),
        adam_g: AdamMeta::of(&state.opt_g),
        adam_d: AdamMeta::of(&state.opt_d),
        last_report: state.last_report,
    };
    let meta = serde_json::to_vec(&meta).expect("metadata serializes");
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(meta.len() as u64).to_le_bytes());
    buf.extend_from_slice(&meta);
    let count: usize = groups(state).iter().map(|g| g.len()).sum();
    buf.extend_from_slice(&(count as u32).to_le_bytes());
    for (prefix, store) in GROUPS.iter().zip(groups(state)) {
        for (name, t) in store.iter() {
            let full = format!("{prefix}/{name}");
            buf.extend_from_slice(&(full.len() as u32).to_le_bytes());
            buf.extend_from_slice(full.as_bytes());
            for d in [t.c, t.h, t.w] {
                buf.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in &t.data {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    // write then rename so a crash never leaves a half-written checkpoint in place
    let tmp = path.with_extension("ckpt.tmp");
    fs::write(&tmp, &buf).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(self.corrupt("unexpected end of file"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn corrupt(&self, reason: &str) -> Error {
        Error::CorruptCheckpoint {
            path: self.path.to_path_buf(),
            reason: reason.into(),
        }
    }
}

/// Reads a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<TrainState> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let corrupt = |reason: &str| Error::CorruptCheckpoint {
        path: path.to_path_buf(),
        reason: reason.into(),
    };
    if bytes.len() < CHECKPOINT_MAGIC.len() || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(corrupt("bad magic"));
    }
    if bytes.len() < 12 {
        return Err(corrupt("unexpected end of file"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::CheckpointVersion {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    if bytes.len() < 12 + 32 {
        return Err(corrupt("unexpected end of file"));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(corrupt("checksum mismatch (truncated or modified)"));
    }

    let mut r = Reader {
        buf: body,
        pos: 12,
        path,
    };
    let meta_len = r.u64()? as usize;
    let meta: Metadata = serde_json::from_slice(r.take(meta_len)?).map_err(|e| corrupt(&format!("metadata: {e}")))?;
    let count = r.u32()? as usize;
    let mut stores: [ParamStore; 6] = Default::default();
    for _ in 0..count {
        let n = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(n)?).map_err(|_| corrupt("array name is not UTF-8"))?;
        let (prefix, rest) = name
            .split_once('/')
            .ok_or_else(|| corrupt("array name without group"))?;
        let gi = GROUPS
            .iter()
            .position(|g| *g == prefix)
            .ok_or_else(|| corrupt("unknown array group"))?;
        let (c, h, w) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
        let len = c
            .checked_mul(h)
            .and_then(|v| v.checked_mul(w))
            .ok_or_else(|| corrupt("array too large"))?;
        let raw = r.take(len.checked_mul(4).ok_or_else(|| corrupt("array too large"))?)?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        stores[gi].insert(rest, Tensor::from_vec(c, h, w, data));
    }
    if r.pos != body.len() {
        return Err(corrupt("trailing bytes"));
    }
    let [gp, dp, gm, gv, dm, dv] = stores;

    // the stored arrays must match what the stored config would build
    let reference_g = Generator::new(meta.model, 0).map_err(|e| corrupt(&format!("model config: {e}")))?;
    let reference_d = Discriminator::new(meta.model, 0).map_err(|e| corrupt(&format!("model config: {e}")))?;
    for (store, reference) in [
        (&gp, &reference_g.params),
        (&gm, &reference_g.params),
        (&gv, &reference_g.params),
        (&dp, &reference_d.params),
        (&dm, &reference_d.params),
        (&dv, &reference_d.params),
    ] {
        if !store.same_layout(reference) {
            return Err(corrupt("array layout does not match the stored model config"));
        }
    }
    let adam = |a: &AdamMeta, m, v| Adam {
        lr: a.lr,
        beta1: a.beta1,
        beta2: a.beta2,
        eps: a.eps,
        t: a.t,
        m,
        v,
    };
    Ok(TrainState {
        stage: meta.stage,
        step: meta.step,
        seed: meta.seed,
        generator: Generator {
            config: meta.model,
            params: gp,
        },
        discriminator: Discriminator {
            config: meta.model,
            params: dp,
        },
        opt_g: adam(&meta.adam_g, gm, gv),
        opt_d: adam(&meta.adam_d, dm, dv),
        last_report: meta.last_report,
    })
}

/// Loads a checkpoint and checks it was built for `model`.
pub fn load_checkpoint_for(path: &Path, model: &ModelConfig) -> Result<TrainState> {
    let s = load_checkpoint(path)?;
    if s.model_config() != model {
        return Err(Error::Config(format!(
            "checkpoint {} was trained with a different model config",
            path.display()
        )));
    }
    Ok(s)
}
