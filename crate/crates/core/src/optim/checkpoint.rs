//! Binary checkpoint of a [`ToyModel`].
//!
//! Layout (all integers little-endian `u32`):
//! `MMCK`, format version, hash_dim, number of n-gram orders, the orders,
//! visual input dim, embedding dim, hidden width (0 = none), then every
//! weight tensor in row-major little-endian `f32`: text layers first, then
//! visual layers.

use std::io::{Read, Write};

use super::encoder::{LinearStack, ModelConfig, ToyModel, ToyTextEncoder, ToyVisualEncoder};
use super::features::TextFeaturizer;
use crate::linalg::Matrix;
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"MMCK";
pub const CHECKPOINT_VERSION: u32 = 1;

fn put(w: &mut impl Write, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format("header field exceeds u32".into()))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn get(r: &mut impl Read) -> Result<usize> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b) as usize)
}

pub fn write_checkpoint(model: &ToyModel, mut w: impl Write) -> Result<()> {
    let cfg = model.config();
    w.write_all(MAGIC)?;
    put(&mut w, CHECKPOINT_VERSION as usize)?;
    put(&mut w, cfg.featurizer.hash_dim)?;
    put(&mut w, cfg.featurizer.ngram_orders.len())?;
    for &o in &cfg.featurizer.ngram_orders {
        put(&mut w, o)?;
    }
    put(&mut w, cfg.visual_dim)?;
    put(&mut w, cfg.embed_dim)?;
    put(&mut w, cfg.hidden.unwrap_or(0))?;
    for t in model.tensors() {
        for &x in t.as_slice() {
            w.write_all(&(x as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint(mut r: impl Read) -> Result<ToyModel> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a model checkpoint".into()));
    }
    let version = get(&mut r)? as u32;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let hash_dim = get(&mut r)?;
    let n_orders = get(&mut r)?;
    if n_orders > 64 {
        return Err(Error::Format("implausible n-gram order count".into()));
    }
    let orders = (0..n_orders).map(|_| get(&mut r)).collect::<Result<Vec<_>>>()?;
    let visual_dim = get(&mut r)?;
    let embed_dim = get(&mut r)?;
    let hidden = match get(&mut r)? {
        0 => None,
        h => Some(h),
    };
    let cfg = ModelConfig { featurizer: TextFeaturizer::new(hash_dim, orders)?, visual_dim, embed_dim, hidden };

    let mut read_stack = |input: usize| -> Result<LinearStack> {
        let dims = match cfg.hidden {
            Some(h) => vec![input, h, embed_dim],
            None => vec![input, embed_dim],
        };
        let mut layers = Vec::new();
        for w in dims.windows(2) {
            let mut bytes = vec![0u8; w[0] * w[1] * 4];
            r.read_exact(&mut bytes)?;
            let data = bytes.chunks_exact(4).map(|b| f64::from(f32::from_le_bytes(b.try_into().unwrap()))).collect();
            layers.push(Matrix::from_vec(w[0], w[1], data)?);
        }
        LinearStack::from_layers(layers)
    };
    let text = read_stack(hash_dim)?;
    let visual = read_stack(visual_dim)?;
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Format("trailing bytes after checkpoint weights".into()));
    }
    Ok(ToyModel { text: ToyTextEncoder { featurizer: cfg.featurizer, net: text }, visual: ToyVisualEncoder { net: visual } })
}
