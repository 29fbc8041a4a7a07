//! Model checkpoints: one JSON header line followed by little-endian `f32`
//! parameter blobs (student blocks, teacher blocks, center) in header order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::layers::{Branch, Linear, ModelState, ParamSet};
use crate::error::{Error, Result};

pub const FORMAT: &str = "trackcluster-checkpoint-1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct BlockInfo {
    name: String,
    len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    format: String,
    dim: usize,
    hidden: usize,
    dropout: f64,
    teacher_temp: f64,
    student_temp: f64,
    ema_momentum: f64,
    center_momentum: f64,
    blocks: Vec<BlockInfo>,
}

fn header_of(state: &ModelState) -> Header {
    let s = &state.student;
    let mut blocks = Vec::new();
    for (branch, prefix) in [(&state.student, "student"), (&state.teacher, "teacher")] {
        for (name, b) in branch.block_names().iter().zip(branch.blocks()) {
            blocks.push(BlockInfo {
                name: format!("{prefix}.{name}"),
                len: b.len(),
            });
        }
    }
    blocks.push(BlockInfo {
        name: "center".into(),
        len: state.center.len(),
    });
    Header {
        format: FORMAT.into(),
        dim: s.dim(),
        hidden: s.hidden(),
        dropout: s.dropout,
        teacher_temp: state.teacher_temp,
        student_temp: state.student_temp,
        ema_momentum: state.ema_momentum,
        center_momentum: state.center_momentum,
        blocks,
    }
}

pub fn to_bytes(state: &ModelState) -> Vec<u8> {
    let mut out = serde_json::to_vec(&header_of(state)).expect("header serializes");
    out.push(b'\n');
    let values = state
        .student
        .blocks()
        .into_iter()
        .chain(state.teacher.blocks())
        .chain(std::iter::once(state.center.as_slice()));
    for block in values {
        for &v in block {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

fn empty_branch(dim: usize, hidden: usize, dropout: f64) -> Branch {
    let zeros = |i: usize, o: usize| Linear {
        in_dim: i,
        out_dim: o,
        weight: vec![0.0; i * o],
        bias: vec![0.0; o],
    };
    Branch {
        adapter: zeros(dim, dim),
        head: [zeros(dim, hidden), zeros(hidden, hidden), zeros(hidden, dim)],
        dropout,
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<ModelState> {
    let bad = |m: String| Error::Checkpoint(m);
    let split = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| bad("missing header line".into()))?;
    let header: Header = serde_json::from_slice(&bytes[..split])
        .map_err(|e| bad(format!("malformed header: {e}")))?;
    if header.format != FORMAT {
        return Err(bad(format!("unsupported format {:?}", header.format)));
    }
    if header.dim < 2 || header.hidden == 0 {
        return Err(bad("invalid dimensions".into()));
    }
    let mut state = ModelState {
        student: empty_branch(header.dim, header.hidden, header.dropout),
        teacher: empty_branch(header.dim, header.hidden, header.dropout),
        center: vec![0.0; header.dim],
        teacher_temp: header.teacher_temp,
        student_temp: header.student_temp,
        ema_momentum: header.ema_momentum,
        center_momentum: header.center_momentum,
    };
    let expected = header_of(&state);
    if expected.blocks != header.blocks {
        return Err(bad("block layout does not match dimensions".into()));
    }
    let payload = &bytes[split + 1..];
    let total: usize = header.blocks.iter().map(|b| b.len).sum();
    if payload.len() != total * 4 {
        return Err(bad(format!(
            "expected {} payload bytes, found {}",
            total * 4,
            payload.len()
        )));
    }
    let mut values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64);
    if let Some(pos) = values.clone().position(|v| !v.is_finite()) {
        return Err(bad(format!("non-finite value at byte offset {}", split + 1 + pos * 4)));
    }
    let ModelState {
        student,
        teacher,
        center,
        ..
    } = &mut state;
    for block in student
        .blocks_mut()
        .into_iter()
        .chain(teacher.blocks_mut())
        .chain(std::iter::once(center.as_mut_slice()))
    {
        for v in block.iter_mut() {
            *v = values.next().expect("length checked");
        }
    }
    Ok(state)
}

pub fn save_checkpoint(state: &ModelState, path: &Path) -> Result<()> {
    fs::write(path, to_bytes(state)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelState> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

/// Rounds every parameter to `f32`, i.e. the state a checkpoint reload gives.
pub fn round_to_f32(state: &ModelState) -> ModelState {
    from_bytes(&to_bytes(state)).expect("own encoding decodes")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::layers::ModelConfig;
    use crate::rng::Rng;
    use rand::SeedableRng;

    fn model() -> ModelState {
        let mut rng = Rng::seed_from_u64(11);
        let mut m = ModelState::new(4, &ModelConfig::default(), &mut rng).unwrap();
        m.center = vec![0.5, -0.25, 1.0, 2.0];
        m
    }

    #[test]
    fn round_trip_is_exact_after_f32_rounding() {
        let m = round_to_f32(&model());
        let back = from_bytes(&to_bytes(&m)).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.student.hidden(), 16);
    }

    #[test]
    fn truncated_and_garbled_files_are_rejected() {
        let bytes = to_bytes(&model());
        assert!(from_bytes(&bytes[..bytes.len() - 4]).is_err());
        assert!(from_bytes(b"{}\n").is_err());
        assert!(from_bytes(b"no header").is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let m = round_to_f32(&model());
        save_checkpoint(&m, &path).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), m);
    }
}
