//! Versioned binary checkpoint container.
//!
//! Layout (little-endian): magic+version, tokenizer rule hash, hash seed,
//! feat_dim, rank, alpha, answer vocabulary, W0, A, B, then an optional
//! optimizer block (step counter and both moment matrices). Save then load
//! is bitwise lossless; a checkpoint written under a different tokenizer
//! rule is rejected.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::token::tokenizer_spec_hash;

use super::mat::Mat;
use super::{OptimState, RefLm};

const MAGIC: &[u8; 8] = b"XTRLM\x01\x00\x00";

pub fn save_checkpoint(
    lm: &RefLm,
    state: Option<&OptimState>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let bytes = encode(lm, state);
    if let Some(parent) = path.as_ref().parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, bytes)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(RefLm, Option<OptimState>)> {
    let bytes = fs::read(path)?;
    decode(&bytes)
}

fn encode(lm: &RefLm, state: Option<&OptimState>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&tokenizer_spec_hash());
    out.extend_from_slice(&lm.hash_seed().to_le_bytes());
    out.extend_from_slice(&(lm.feat_dim() as u64).to_le_bytes());
    out.extend_from_slice(&(lm.rank() as u64).to_le_bytes());
    out.extend_from_slice(&lm.alpha().to_le_bytes());
    out.extend_from_slice(&(lm.vocab_len() as u64).to_le_bytes());
    for t in lm.vocab() {
        out.extend_from_slice(&(t.len() as u32).to_le_bytes());
        out.extend_from_slice(t.as_bytes());
    }
    for m in [lm.w0(), lm.adapter_a(), lm.adapter_b()] {
        write_mat(&mut out, m);
    }
    match state {
        Some(s) => {
            out.push(1);
            out.extend_from_slice(&s.step.to_le_bytes());
            for m in [&s.m_a, &s.v_a, &s.m_b, &s.v_b] {
                write_mat(&mut out, m);
            }
        }
        None => out.push(0),
    }
    out
}

fn write_mat(out: &mut Vec<u8>, m: &Mat) {
    for v in m.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::FormatFile("truncated checkpoint".into()));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
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

    fn mat(&mut self, rows: usize, cols: usize) -> Result<Mat> {
        let mut m = Mat::zeros(rows, cols);
        for v in m.data_mut() {
            *v = f64::from_le_bytes(self.take(8)?.try_into().unwrap());
        }
        Ok(m)
    }
}

fn decode(bytes: &[u8]) -> Result<(RefLm, Option<OptimState>)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::FormatFile("not a checkpoint file".into()));
    }
    if r.take(32)? != tokenizer_spec_hash() {
        return Err(Error::FormatFile(
            "checkpoint was written under a different tokenizer rule".into(),
        ));
    }
    let hash_seed = r.u64()?;
    let feat_dim = r.u64()? as usize;
    let rank = r.u64()? as usize;
    let alpha = r.f64()?;
    let vocab_len = r.u64()? as usize;
    let mut vocab = Vec::with_capacity(vocab_len);
    for _ in 0..vocab_len {
        let len = r.u32()? as usize;
        let text = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::FormatFile("invalid vocab entry".into()))?;
        vocab.push(text.to_string());
    }
    let input_dim = feat_dim + vocab_len;
    let w0 = r.mat(vocab_len, input_dim)?;
    let a = r.mat(vocab_len, rank)?;
    let b = r.mat(input_dim, rank)?;
    let lm = RefLm::from_parts(vocab, feat_dim, hash_seed, rank, alpha, w0, a, b);
    let state = match r.take(1)?[0] {
        0 => None,
        1 => {
            let step = r.u64()?;
            let m_a = r.mat(vocab_len, rank)?;
            let v_a = r.mat(vocab_len, rank)?;
            let m_b = r.mat(input_dim, rank)?;
            let v_b = r.mat(input_dim, rank)?;
            Some(OptimState {
                step,
                m_a,
                v_a,
                m_b,
                v_b,
            })
        }
        _ => return Err(Error::FormatFile("invalid optimizer flag".into())),
    };
    if r.pos != bytes.len() {
        return Err(Error::FormatFile("trailing bytes in checkpoint".into()));
    }
    Ok((lm, state))
}
