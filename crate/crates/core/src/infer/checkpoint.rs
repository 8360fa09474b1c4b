//! Binary checkpoint format for predictor networks.
//!
//! Layout: magic `SGCK`, version u16 LE, header length u32 LE, a JSON header
//! describing the architecture and every buffer, then the buffers as f32
//! little-endian in header order. Trainable parameters come first, batch-norm
//! running statistics after, both in the network's fixed visit order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::brdf::ModelKind;
use crate::infer::unet::PredictorNet;
use crate::infer::InferError;

const MAGIC: &[u8; 4] = b"SGCK";
const VERSION: u16 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    model: ModelKind,
    widths: [usize; 4],
    leaky_slope: f64,
    /// Buffer lengths: all parameter buffers, then all running-stat buffers.
    param_lens: Vec<usize>,
    buffer_lens: Vec<usize>,
}

fn format_err(path: &Path, reason: impl Into<String>) -> InferError {
    InferError::CheckpointFormat { path: path.to_path_buf(), reason: reason.into() }
}

/// Serializes the network (weights and batch-norm running statistics) to
/// `path`. Weights are stored as f32, which is plenty for inference and
/// keeps checkpoints half the size.
pub fn save_checkpoint(net: &mut PredictorNet, path: &Path) -> Result<(), InferError> {
    let mut param_lens = Vec::new();
    let mut blob: Vec<u8> = Vec::new();
    net.visit_params(&mut |p, _| {
        param_lens.push(p.len());
        for &v in p {
            blob.extend_from_slice(&(v as f32).to_le_bytes());
        }
    });
    let mut buffer_lens = Vec::new();
    net.visit_buffers_mut(&mut |b| {
        buffer_lens.push(b.len());
        for &v in b.iter() {
            blob.extend_from_slice(&(v as f32).to_le_bytes());
        }
    });
    let header = CheckpointHeader {
        model: net.model(),
        widths: net.widths(),
        leaky_slope: net.leaky_slope(),
        param_lens,
        buffer_lens,
    };
    let header_json = serde_json::to_vec(&header)
        .map_err(|e| format_err(path, format!("header encode: {e}")))?;

    let io_err = |e: std::io::Error| InferError::Io { path: path.to_path_buf(), source: e };
    let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
    w.write_all(MAGIC).map_err(io_err)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io_err)?;
    w.write_all(&(header_json.len() as u32).to_le_bytes()).map_err(io_err)?;
    w.write_all(&header_json).map_err(io_err)?;
    w.write_all(&blob).map_err(io_err)?;
    w.flush().map_err(io_err)
}

/// Rebuilds a network from a checkpoint. The returned network is in
/// inference mode.
pub fn load_checkpoint(path: &Path) -> Result<PredictorNet, InferError> {
    let io_err = |e: std::io::Error| InferError::Io { path: path.to_path_buf(), source: e };
    let mut r = BufReader::new(File::open(path).map_err(io_err)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io_err)?;
    if &magic != MAGIC {
        return Err(format_err(path, "bad magic (not a checkpoint file)"));
    }
    let mut buf2 = [0u8; 2];
    r.read_exact(&mut buf2).map_err(io_err)?;
    let version = u16::from_le_bytes(buf2);
    if version != VERSION {
        return Err(format_err(path, format!("unsupported version {version}")));
    }
    let mut buf4 = [0u8; 4];
    r.read_exact(&mut buf4).map_err(io_err)?;
    let header_len = u32::from_le_bytes(buf4) as usize;
    let mut header_json = vec![0u8; header_len];
    r.read_exact(&mut header_json).map_err(io_err)?;
    let header: CheckpointHeader = serde_json::from_slice(&header_json)
        .map_err(|e| format_err(path, format!("header decode: {e}")))?;

    let mut net =
        PredictorNet::new(header.model, header.widths, header.leaky_slope, 0);
    let read_into = |dst: &mut [f64], r: &mut BufReader<File>| -> Result<(), InferError> {
        let mut bytes = vec![0u8; dst.len() * 4];
        r.read_exact(&mut bytes)
            .map_err(|e| InferError::Io { path: path.to_path_buf(), source: e })?;
        for (i, chunk) in bytes.chunks_exact(4).enumerate() {
            dst[i] = f32::from_le_bytes(chunk.try_into().unwrap()) as f64;
        }
        Ok(())
    };

    let mut idx = 0;
    let mut result = Ok(());
    net.visit_params_mut(&mut |p, _| {
        if result.is_err() {
            return;
        }
        if idx >= header.param_lens.len() || header.param_lens[idx] != p.len() {
            result = Err(format_err(path, format!("parameter buffer {idx} length mismatch")));
        } else {
            result = read_into(p, &mut r);
        }
        idx += 1;
    });
    result?;
    if idx != header.param_lens.len() {
        return Err(format_err(path, "parameter buffer count mismatch"));
    }

    let mut idx = 0;
    let mut result = Ok(());
    net.visit_buffers_mut(&mut |b| {
        if result.is_err() {
            return;
        }
        if idx >= header.buffer_lens.len() || header.buffer_lens[idx] != b.len() {
            result = Err(format_err(path, format!("stat buffer {idx} length mismatch")));
        } else {
            result = read_into(b, &mut r);
        }
        idx += 1;
    });
    result?;

    net.set_training(false);
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::infer::nn::Tensor4;
    use tempfile::tempdir;

    fn toy_input() -> Tensor4 {
        Tensor4::from_vec(1, 1, 16, 16, (0..256).map(|i| (i as f64 * 0.21).sin()).collect())
    }

    #[test]
    fn round_trip_preserves_inference_output() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("net.sgck");
        let mut net = PredictorNet::new(ModelKind::M2, [3, 4, 5, 6], 0.01, 17);
        // Train-mode forwards to give the running stats something real, and
        // a nonzero head (second-to-last parameter buffer) so outputs aren't
        // trivially zero.
        let total = {
            let mut n = 0;
            net.visit_params(&mut |_, _| n += 1);
            n
        };
        let mut i = 0;
        net.visit_params_mut(&mut |p, _| {
            if i == total - 2 {
                p.iter_mut().enumerate().for_each(|(j, w)| *w = 0.1 * (j as f64 + 1.0));
            }
            i += 1;
        });
        for _ in 0..3 {
            net.forward(&toy_input());
        }
        net.set_training(false);
        let want = net.forward(&toy_input());

        save_checkpoint(&mut net, &path).unwrap();
        let mut loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.model(), ModelKind::M2);
        assert!(!loaded.is_training());
        let got = loaded.forward(&toy_input());
        // Stored as f32, so agreement is f32-level, not exact.
        for (a, b) in want.data.iter().zip(&got.data) {
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
    }

    #[test]
    fn rejects_wrong_magic() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bogus.sgck");
        std::fs::write(&path, b"NOPE0000").unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(matches!(err, InferError::CheckpointFormat { .. }));
    }

    #[test]
    fn rejects_truncation() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("net.sgck");
        let mut net = PredictorNet::new(ModelKind::M1, [2, 3, 4, 5], 0.01, 1);
        save_checkpoint(&mut net, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 100]).unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}
