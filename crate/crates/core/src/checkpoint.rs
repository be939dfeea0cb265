//! Checkpoint bundles: a directory of canonically serialized files whose
//! bytes are a pure function of the model state, so save -> load -> save is
//! byte-identical. Writes go to a temp directory first and are renamed into
//! place.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::encoders::UnitCodebook;
use crate::error::{Error, Result};
use crate::params::{AdamState, ParamStore};
use crate::tensor::Tensor;
use crate::training::TrainConfig;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

const META_FILE: &str = "meta.json";
const PARAMS_FILE: &str = "params.bin";
const CODEBOOK_FILE: &str = "codebook.bin";
const TENSOR_MAGIC: &[u8; 4] = b"EVXT";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CodebookMeta {
    pub k: usize,
    pub feature_dim: usize,
    /// Identifier of the content backend the codebook was fitted on.
    pub backend_id: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub step: u64,
    pub opt_g_t: u64,
    pub opt_d_t: u64,
    pub config: TrainConfig,
    pub codebook: CodebookMeta,
}

pub struct CheckpointBundle {
    pub meta: CheckpointMeta,
    pub gen_params: ParamStore,
    pub disc_params: ParamStore,
    pub opt_g: AdamState,
    pub opt_d: AdamState,
    pub codebook: UnitCodebook,
}

impl CheckpointBundle {
    pub fn save(&self, dir: &Path) -> Result<()> {
        let tmp = tmp_sibling(dir);
        if tmp.exists() {
            fs::remove_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
        }
        fs::create_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;

        let mut meta_json = serde_json::to_string_pretty(&self.meta)?;
        meta_json.push('\n');
        fs::write(tmp.join(META_FILE), meta_json).map_err(|e| Error::io(tmp.join(META_FILE), e))?;

        let mut blocks: Vec<(String, &Tensor)> = Vec::new();
        for (name, t) in self.gen_params.iter() {
            blocks.push((format!("gen/{name}"), t));
        }
        for (name, t) in self.disc_params.iter() {
            blocks.push((format!("disc/{name}"), t));
        }
        for (name, t) in &self.opt_g.m {
            blocks.push((format!("optg.m/{name}"), t));
        }
        for (name, t) in &self.opt_g.v {
            blocks.push((format!("optg.v/{name}"), t));
        }
        for (name, t) in &self.opt_d.m {
            blocks.push((format!("optd.m/{name}"), t));
        }
        for (name, t) in &self.opt_d.v {
            blocks.push((format!("optd.v/{name}"), t));
        }
        write_blocks(&tmp.join(PARAMS_FILE), &blocks)?;
        write_blocks(
            &tmp.join(CODEBOOK_FILE),
            &[("codebook".to_string(), self.codebook.centroids())],
        )?;

        if dir.exists() {
            fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::rename(&tmp, dir).map_err(|e| Error::io(dir, e))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta_path = dir.join(META_FILE);
        let meta_text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta: CheckpointMeta = serde_json::from_str(&meta_text)?;
        if meta.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint format {} (this build reads {})",
                meta.format_version, CHECKPOINT_FORMAT_VERSION
            )));
        }
        let blocks = read_blocks(&dir.join(PARAMS_FILE))?;
        let mut gen_params = ParamStore::new();
        let mut disc_params = ParamStore::new();
        let mut opt_g = AdamState {
            t: meta.opt_g_t,
            ..AdamState::default()
        };
        let mut opt_d = AdamState {
            t: meta.opt_d_t,
            ..AdamState::default()
        };
        for (name, t) in blocks {
            if let Some(rest) = name.strip_prefix("gen/") {
                gen_params.insert(rest, t);
            } else if let Some(rest) = name.strip_prefix("disc/") {
                disc_params.insert(rest, t);
            } else if let Some(rest) = name.strip_prefix("optg.m/") {
                opt_g.m.insert(rest.to_string(), t);
            } else if let Some(rest) = name.strip_prefix("optg.v/") {
                opt_g.v.insert(rest.to_string(), t);
            } else if let Some(rest) = name.strip_prefix("optd.m/") {
                opt_d.m.insert(rest.to_string(), t);
            } else if let Some(rest) = name.strip_prefix("optd.v/") {
                opt_d.v.insert(rest.to_string(), t);
            } else {
                return Err(Error::Checkpoint(format!("unknown parameter block '{name}'")));
            }
        }
        let cb_blocks = read_blocks(&dir.join(CODEBOOK_FILE))?;
        let centroids = cb_blocks
            .into_iter()
            .find(|(n, _)| n == "codebook")
            .map(|(_, t)| t)
            .ok_or_else(|| Error::Checkpoint("codebook block missing".into()))?;
        let codebook = UnitCodebook::new(centroids)?;
        if codebook.k() != meta.codebook.k || codebook.feature_dim() != meta.codebook.feature_dim {
            return Err(Error::Checkpoint(format!(
                "codebook {}x{} does not match metadata {}x{}",
                codebook.k(),
                codebook.feature_dim(),
                meta.codebook.k,
                meta.codebook.feature_dim
            )));
        }
        Ok(CheckpointBundle {
            meta,
            gen_params,
            disc_params,
            opt_g,
            opt_d,
            codebook,
        })
    }
}

fn tmp_sibling(dir: &Path) -> PathBuf {
    let name = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "checkpoint".into());
    dir.with_file_name(format!(".{name}.tmp"))
}

fn write_blocks(path: &Path, blocks: &[(String, &Tensor)]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut buf = Vec::new();
    buf.extend_from_slice(TENSOR_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(blocks.len() as u64).to_le_bytes());
    for (name, t) in blocks {
        let nb = name.as_bytes();
        buf.extend_from_slice(&(nb.len() as u32).to_le_bytes());
        buf.extend_from_slice(nb);
        buf.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    f.write_all(&buf).map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn read_blocks(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let mut cur = Cursor { bytes: &bytes, pos: 0, path };
    let magic = cur.take(4)?;
    if magic != TENSOR_MAGIC {
        return Err(Error::Checkpoint(format!(
            "{}: bad tensor-file magic",
            path.display()
        )));
    }
    let version = cur.u32()?;
    if version != CHECKPOINT_FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "{}: tensor file version {version} unsupported",
            path.display()
        )));
    }
    let count = cur.u64()? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = cur.u32()? as usize;
        let name = String::from_utf8(cur.take(name_len)?.to_vec())
            .map_err(|_| Error::Checkpoint(format!("{}: invalid block name", path.display())))?;
        let rank = cur.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cur.u64()? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            data.push(f64::from_le_bytes(cur.take(8)?.try_into().unwrap()));
        }
        out.push((name, Tensor::from_vec(&shape, data)));
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{}: truncated tensor file",
                self.path.display()
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Byte-level digest of an entire checkpoint directory, for round-trip
/// stability checks.
pub fn dir_digest(dir: &Path) -> Result<Vec<(String, Vec<u8>)>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.is_file() {
            let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            files.push((entry.file_name().to_string_lossy().into_owned(), bytes));
        }
    }
    files.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(files)
}
