//! `UPML` checkpoint files.
//!
//! Layout (little-endian): magic, version, seven `u32` config fields
//! (layers, heads, hidden, ffn, vocab, max length, mask id), `u64` seed,
//! `u64` parameter count, the parameters as f32 in declared order, then a
//! `u64`-length-prefixed JSON word list for the vocabulary.

use std::fs;
use std::path::Path;

use super::{Model, ModelConfig};
use crate::error::{Error, Result};
use crate::repr::ByteReader;
use crate::vocab::{Vocab, SPECIAL_TOKENS};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"UPML";
pub const CHECKPOINT_VERSION: u32 = 1;

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Config(format!("{what} {v} does not fit in u32")))
}

/// Writes `model` and `vocab`. Parameters are stored at f32 precision.
pub fn save_checkpoint(path: impl AsRef<Path>, model: &Model, vocab: &Vocab) -> Result<()> {
    let path = path.as_ref();
    let c = model.config();
    if vocab.len() != c.vocab_size {
        return Err(Error::Config(format!(
            "vocabulary has {} words but the model expects {}",
            vocab.len(),
            c.vocab_size
        )));
    }
    let mut out = Vec::with_capacity(64 + 4 * model.params().len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for (v, what) in [
        (c.n_layers, "n_layers"),
        (c.n_heads, "n_heads"),
        (c.hidden_dim, "hidden_dim"),
        (c.ffn_dim, "ffn_dim"),
        (c.vocab_size, "vocab_size"),
        (c.max_seq_len, "max_seq_len"),
    ] {
        out.extend_from_slice(&to_u32(v, what)?.to_le_bytes());
    }
    out.extend_from_slice(&c.mask_token_id.to_le_bytes());
    out.extend_from_slice(&c.seed.to_le_bytes());
    out.extend_from_slice(&(model.params().len() as u64).to_le_bytes());
    for &p in model.params() {
        out.extend_from_slice(&(p as f32).to_le_bytes());
    }
    let json = serde_json::to_vec(vocab)?;
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(Model, Vocab)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = ByteReader::new(path, &bytes);
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::format(path, "missing UPML magic"));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(path, format!("unsupported version {version}")));
    }
    let mut fields = [0usize; 6];
    for f in &mut fields {
        *f = r.u32()? as usize;
    }
    let [n_layers, n_heads, hidden_dim, ffn_dim, vocab_size, max_seq_len] = fields;
    let config = ModelConfig {
        n_layers,
        n_heads,
        hidden_dim,
        ffn_dim,
        vocab_size,
        max_seq_len,
        mask_token_id: r.u32()?,
        seed: r.u64()?,
    };
    config
        .validate()
        .map_err(|e| Error::format(path, e.to_string()))?;
    let count = usize::try_from(r.u64()?).map_err(|_| Error::format(path, "parameter count overflows"))?;
    let params: Vec<f64> = r.f32s(count)?.into_iter().map(f64::from).collect();
    let model = Model::from_parts(config, params).map_err(|e| Error::format(path, e.to_string()))?;

    let len = usize::try_from(r.u64()?).map_err(|_| Error::format(path, "vocabulary length overflows"))?;
    let vocab: Vocab = serde_json::from_slice(r.take(len)?).map_err(|e| Error::format(path, e.to_string()))?;
    if r.remaining() != 0 {
        return Err(Error::format(path, "trailing bytes after vocabulary"));
    }
    if vocab.len() != model.config().vocab_size {
        return Err(Error::format(path, "vocabulary size disagrees with config"));
    }
    let specials_ok = SPECIAL_TOKENS
        .iter()
        .enumerate()
        .all(|(i, s)| vocab.word(i as u32) == Some(*s));
    if !specials_ok || vocab.mask_id() != model.config().mask_token_id {
        return Err(Error::format(path, "vocabulary special tokens are inconsistent"));
    }
    Ok((model, vocab))
}
