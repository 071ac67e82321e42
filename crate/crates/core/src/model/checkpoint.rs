//! Versioned binary checkpoint container.
//!
//! ```text
//! magic "SSNMTCKP" | u32 version | u32 header_len | header (JSON)
//! | params (f32 LE, layout order) | adam m | adam v | sha256 of all preceding bytes
//! ```

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::layout::Layout;
use super::{Model, ModelConfig};
use crate::nn::{Mat, ParamSet};
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"SSNMTCKP";
pub const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    step: u64,
    languages: Vec<String>,
    param_names: Vec<String>,
}

fn push_mats(buf: &mut Vec<u8>, mats: impl Iterator<Item = impl AsRef<[f32]>>) {
    for m in mats {
        for x in m.as_ref() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
}

pub(super) fn save(model: &Model<f32>, path: &Path) -> Result<()> {
    let header = Header {
        config: model.config.clone(),
        step: model.step,
        languages: model.languages.clone(),
        param_names: model.params.iter().map(|(n, _)| n.to_string()).collect(),
    };
    let header = serde_json::to_vec(&header).expect("header serializes");
    let mut buf = Vec::with_capacity(64 + 12 * model.params.num_scalars());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(header.len() as u32).to_le_bytes());
    buf.extend_from_slice(&header);
    push_mats(&mut buf, model.params.iter().map(|(_, m)| m.data()));
    push_mats(&mut buf, model.optim.m.iter().map(Mat::data));
    push_mats(&mut buf, model.optim.v.iter().map(Mat::data));
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.at + n > self.buf.len() {
            return Err(Error::Checkpoint("truncated file".into()));
        }
        let s = &self.buf[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn fill(&mut self, m: &mut Mat<f32>) -> Result<()> {
        let n = m.data().len();
        let bytes = self.take(4 * n)?;
        for (x, b) in m.data_mut().iter_mut().zip(bytes.chunks_exact(4)) {
            *x = f32::from_le_bytes(b.try_into().expect("4 bytes"));
        }
        Ok(())
    }
}

pub(super) fn load(path: &Path) -> Result<Model<f32>> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    let ctx = |msg: String| Error::Checkpoint(format!("{}: {msg}", path.display()));
    if buf.len() < MAGIC.len() + 8 + 32 || &buf[..8] != MAGIC {
        return Err(ctx("not a checkpoint (bad magic or truncated)".into()));
    }
    let (body, digest) = buf.split_at(buf.len() - 32);
    let mut r = Reader { buf: body, at: 8 };
    let version = r.u32().map_err(|e| ctx(e.to_string()))?;
    if version != VERSION {
        return Err(ctx(format!("unsupported version {version} (expected {VERSION})")));
    }
    if Sha256::digest(body).as_slice() != digest {
        return Err(ctx("checksum mismatch (truncated or corrupt)".into()));
    }
    let hlen = r.u32()? as usize;
    let header: Header = serde_json::from_slice(r.take(hlen)?).map_err(|e| ctx(format!("bad header: {e}")))?;
    header.config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(header.config.seed);
    let (layout, mut params): (Layout, ParamSet<f32>) = Layout::build(&header.config, &mut rng);
    let names: Vec<String> = params.iter().map(|(n, _)| n.to_string()).collect();
    if names != header.param_names {
        return Err(ctx("parameter layout differs from this build".into()));
    }
    for id in params.ids().collect::<Vec<_>>() {
        r.fill(params.get_mut(id))?;
    }
    let mut model = Model::assemble(header.config, layout, params);
    for m in model.optim.m.iter_mut().chain(model.optim.v.iter_mut()) {
        r.fill(m)?;
    }
    if r.at != body.len() {
        return Err(ctx("trailing bytes".into()));
    }
    model.step = header.step;
    model.languages = header.languages;
    Ok(model)
}
