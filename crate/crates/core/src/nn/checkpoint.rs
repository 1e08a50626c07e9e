//! Checkpoint layout (all integers u32 little-endian):
//! `AUPAT1`, spec JSON length + bytes, layer count, then per layer a
//! trainable byte and two tensors (weights, bias), each as a rank, the
//! dimensions, and the values as f32 little-endian. Values are rounded to
//! f32 on save.

use std::io::{Read, Write};

use super::{LayerParams, ModelSpec, ModelState, NnError};

pub const CHECKPOINT_MAGIC: &[u8; 6] = b"AUPAT1";

fn put_u32<W: Write>(w: &mut W, v: usize) -> Result<(), NnError> {
    let v = u32::try_from(v).map_err(|_| NnError::Checkpoint(format!("{v} does not fit in u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn get_u32<R: Read>(r: &mut R) -> Result<usize, NnError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b) as usize)
}

fn put_tensor<W: Write>(w: &mut W, values: &[f64]) -> Result<(), NnError> {
    put_u32(w, 1)?;
    put_u32(w, values.len())?;
    let mut buf = Vec::with_capacity(values.len() * 4);
    for v in values {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

fn get_tensor<R: Read>(r: &mut R) -> Result<Vec<f64>, NnError> {
    let rank = get_u32(r)?;
    if rank > 8 {
        return Err(NnError::Checkpoint(format!("implausible tensor rank {rank}")));
    }
    let mut len = 1usize;
    for _ in 0..rank {
        len = len.checked_mul(get_u32(r)?).ok_or_else(|| NnError::Checkpoint("tensor too large".into()))?;
    }
    let mut buf = vec![0u8; len * 4];
    r.read_exact(&mut buf)?;
    Ok(buf.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect())
}

pub fn save_checkpoint<W: Write>(mut w: W, state: &ModelState) -> Result<(), NnError> {
    w.write_all(CHECKPOINT_MAGIC)?;
    let spec = serde_json::to_vec(state.spec()).map_err(|e| NnError::Checkpoint(e.to_string()))?;
    put_u32(&mut w, spec.len())?;
    w.write_all(&spec)?;
    put_u32(&mut w, state.params.len())?;
    for (p, t) in state.params.iter().zip(&state.trainable) {
        w.write_all(&[u8::from(*t)])?;
        put_tensor(&mut w, &p.weights)?;
        put_tensor(&mut w, &p.bias)?;
    }
    Ok(())
}

pub fn load_checkpoint<R: Read>(mut r: R) -> Result<ModelState, NnError> {
    let mut magic = [0u8; 6];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(NnError::Checkpoint("not a model checkpoint (bad magic)".into()));
    }
    let n = get_u32(&mut r)?;
    let mut spec = vec![0u8; n];
    r.read_exact(&mut spec)?;
    let spec: ModelSpec = serde_json::from_slice(&spec).map_err(|e| NnError::Checkpoint(e.to_string()))?;
    let layers = get_u32(&mut r)?;
    if layers != spec.layers.len() {
        return Err(NnError::Checkpoint(format!("{layers} parameter blocks for {} layers", spec.layers.len())));
    }
    let mut params = Vec::with_capacity(layers);
    let mut trainable = Vec::with_capacity(layers);
    for _ in 0..layers {
        let mut t = [0u8; 1];
        r.read_exact(&mut t)?;
        trainable.push(t[0] != 0);
        let weights = get_tensor(&mut r)?;
        let bias = get_tensor(&mut r)?;
        params.push(LayerParams { weights, bias });
    }
    ModelState::from_parts(spec, params, trainable)
}
