//! Binary model files.
//!
//! Pre-trained model layout (little-endian):
//! `b"VPGNNMDL"`, u32 version, u32 f, u32 d, u32 epochs, u64 seed,
//! u64 graph fingerprint, f64 final loss, then W1 (f×d), W2 (d×d) and Wr (d×d)
//! as row-major f64.
//!
//! Tuned classifier layout: `b"VPGNNTUN"`, u32 version, u8 mode tag, u64 length
//! and the embedded pre-trained model bytes (carrying the tuned encoder),
//! u32 rows, u32 cols, then the prompt matrix or head values.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{Dense, ModelParams};
use crate::pretrain::{PretrainedModel, TrainMeta};
use crate::prompt::{PromptMatrix, TuneMode, TunedClassifier};

pub const MODEL_MAGIC: &[u8; 8] = b"VPGNNMDL";
pub const TUNED_MAGIC: &[u8; 8] = b"VPGNNTUN";
pub const FORMAT_VERSION: u32 = 1;

fn fmt_err(msg: impl Into<String>) -> Error {
    Error::ModelFormat(msg.into())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            fmt_err(format!("truncated: need {n} bytes at offset {}, have {}", self.pos, self.buf.len() - self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn header(&mut self, magic: &[u8; 8]) -> Result<()> {
        if self.take(8)? != magic {
            return Err(fmt_err(format!("bad magic, expected {}", String::from_utf8_lossy(magic))));
        }
        let v = self.u32()?;
        if v != FORMAT_VERSION {
            return Err(fmt_err(format!("unsupported version {v}")));
        }
        Ok(())
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Result<Dense> {
        let len = rows.checked_mul(cols).filter(|l| l.checked_mul(8).is_some()).ok_or_else(|| fmt_err("matrix too large"))?;
        let bytes = self.take(len * 8)?;
        let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Dense::from_vec(rows, cols, data).map_err(|e| fmt_err(e.to_string()))
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(fmt_err(format!("{} trailing bytes", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| fmt_err(format!("dimension {v} exceeds u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_matrix(out: &mut Vec<u8>, m: &Dense) {
    for x in m.as_slice() {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

pub fn encode_model(model: &PretrainedModel) -> Result<Vec<u8>> {
    let p = &model.params;
    p.validate()?;
    let (f, d) = (p.feature_width(), p.hidden());
    let mut out = Vec::with_capacity(48 + 8 * (f * d + 2 * d * d));
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    put_u32(&mut out, f)?;
    put_u32(&mut out, d)?;
    put_u32(&mut out, model.meta.epochs)?;
    out.extend_from_slice(&model.meta.seed.to_le_bytes());
    out.extend_from_slice(&model.meta.graph_fingerprint.to_le_bytes());
    out.extend_from_slice(&model.meta.final_loss.to_le_bytes());
    put_matrix(&mut out, &p.w1);
    put_matrix(&mut out, &p.w2);
    put_matrix(&mut out, &p.wr);
    Ok(out)
}

fn read_model(r: &mut Reader<'_>) -> Result<PretrainedModel> {
    r.header(MODEL_MAGIC)?;
    let f = r.u32()? as usize;
    let d = r.u32()? as usize;
    if f == 0 || d == 0 {
        return Err(fmt_err(format!("zero dimension (f={f}, d={d})")));
    }
    let epochs = r.u32()? as usize;
    let seed = r.u64()?;
    let graph_fingerprint = r.u64()?;
    let final_loss = r.f64()?;
    let w1 = r.matrix(f, d)?;
    let w2 = r.matrix(d, d)?;
    let wr = r.matrix(d, d)?;
    Ok(PretrainedModel {
        params: ModelParams { w1, w2, wr },
        meta: TrainMeta {
            epochs,
            final_loss,
            seed,
            graph_fingerprint,
        },
    })
}

pub fn decode_model(bytes: &[u8]) -> Result<PretrainedModel> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let m = read_model(&mut r)?;
    r.finish()?;
    Ok(m)
}

pub fn save_model(model: &PretrainedModel, path: &Path) -> Result<()> {
    crate::graph::ensure_parent(path)?;
    fs::write(path, encode_model(model)?)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<PretrainedModel> {
    decode_model(&fs::read(path)?)
}

/// A fine-tuned classifier together with the mode that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct TunedArtifact {
    pub mode: TuneMode,
    pub meta: TrainMeta,
    pub classifier: TunedClassifier,
}

pub fn encode_tuned(t: &TunedArtifact) -> Result<Vec<u8>> {
    let (params, m) = match &t.classifier {
        TunedClassifier::Prompt { params, z } => (params, z.as_dense()),
        TunedClassifier::Head { params, head } => (params, head),
    };
    let inner = encode_model(&PretrainedModel {
        params: params.clone(),
        meta: t.meta.clone(),
    })?;
    let mut out = Vec::with_capacity(inner.len() + 32 + 8 * m.as_slice().len());
    out.extend_from_slice(TUNED_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(t.mode.tag());
    out.extend_from_slice(&(inner.len() as u64).to_le_bytes());
    out.extend_from_slice(&inner);
    put_u32(&mut out, m.rows())?;
    put_u32(&mut out, m.cols())?;
    put_matrix(&mut out, m);
    Ok(out)
}

pub fn decode_tuned(bytes: &[u8]) -> Result<TunedArtifact> {
    let mut r = Reader { buf: bytes, pos: 0 };
    r.header(TUNED_MAGIC)?;
    let tag = r.u8()?;
    let mode = TuneMode::from_tag(tag).ok_or_else(|| fmt_err(format!("unknown mode tag {tag}")))?;
    let len = usize::try_from(r.u64()?).map_err(|_| fmt_err("embedded model too large"))?;
    let inner = decode_model(r.take(len)?)?;
    let rows = r.u32()? as usize;
    let cols = r.u32()? as usize;
    let m = r.matrix(rows, cols)?;
    r.finish()?;
    let d = inner.hidden();
    let classifier = if mode == TuneMode::NoPrompt {
        if (rows, cols) != (d, 2) {
            return Err(fmt_err(format!("head is {rows}x{cols}, expected {d}x2")));
        }
        TunedClassifier::Head {
            params: inner.params,
            head: m,
        }
    } else {
        if (rows, cols) != (2, d) {
            return Err(fmt_err(format!("prompt matrix is {rows}x{cols}, expected 2x{d}")));
        }
        TunedClassifier::Prompt {
            params: inner.params,
            z: PromptMatrix::new(m).map_err(|e| fmt_err(e.to_string()))?,
        }
    };
    Ok(TunedArtifact {
        mode,
        meta: inner.meta,
        classifier,
    })
}

pub fn save_tuned(t: &TunedArtifact, path: &Path) -> Result<()> {
    crate::graph::ensure_parent(path)?;
    fs::write(path, encode_tuned(t)?)?;
    Ok(())
}

pub fn load_tuned(path: &Path) -> Result<TunedArtifact> {
    decode_tuned(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    fn model() -> PretrainedModel {
        let mut rng = RngStream::new(9);
        PretrainedModel {
            params: ModelParams::init(3, 4, &mut rng),
            meta: TrainMeta {
                epochs: 7,
                final_loss: 0.5,
                seed: 11,
                graph_fingerprint: 0xDEAD_BEEF,
            },
        }
    }

    #[test]
    fn model_round_trip_is_bit_exact() {
        let m = model();
        let bytes = encode_model(&m).unwrap();
        assert_eq!(bytes.len(), 8 + 4 * 4 + 8 * 3 + 8 * (12 + 32));
        assert_eq!(decode_model(&bytes).unwrap(), m);
    }

    #[test]
    fn rejects_corruption() {
        let bytes = encode_model(&model()).unwrap();
        assert!(matches!(decode_model(&bytes[..bytes.len() - 1]), Err(Error::ModelFormat(_))));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode_model(&extra).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_model(&bad).is_err());
        let mut ver = bytes.clone();
        ver[8] = 2;
        assert!(decode_model(&ver).is_err());
        // claims f = 2^31 rows
        let mut huge = bytes;
        huge[12..16].copy_from_slice(&(1u32 << 31).to_le_bytes());
        assert!(decode_model(&huge).is_err());
    }

    #[test]
    fn tuned_round_trip() {
        let m = model();
        let z = PromptMatrix::new(Dense::from_vec(2, 4, (0..8).map(f64::from).collect()).unwrap()).unwrap();
        let t = TunedArtifact {
            mode: TuneMode::RandomInit,
            meta: m.meta.clone(),
            classifier: TunedClassifier::Prompt { params: m.params.clone(), z },
        };
        assert_eq!(decode_tuned(&encode_tuned(&t).unwrap()).unwrap(), t);
        let h = TunedArtifact {
            mode: TuneMode::NoPrompt,
            meta: m.meta.clone(),
            classifier: TunedClassifier::Head {
                params: m.params,
                head: Dense::zeros(4, 2),
            },
        };
        let bytes = encode_tuned(&h).unwrap();
        assert_eq!(decode_tuned(&bytes).unwrap(), h);
        let mut wrong_mode = bytes;
        wrong_mode[12] = TuneMode::Vpgnn.tag();
        assert!(decode_tuned(&wrong_mode).is_err());
    }
}
