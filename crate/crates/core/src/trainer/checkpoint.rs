//! Binary checkpoint.
//!
//! ```text
//! magic      b"APRCKPT1"
//! version    u32
//! d_f, d, h  u32 x 3
//! f64 arrays adapter_q (d·d_f), adapter_p (d·d_f), W_q (h·d), W_p (h·d), w_a (h), log_tau (1)
//! tokenizer  u8 lowercase, u8 strip_diacritics, u8 unicode form (0 = NFC, 1 = NFKC)
//! optimizer  u8 flag; when 1: u64 step, then m and v for each group above, in order
//! ```
//!
//! All integers and floats are little-endian. Writes go to a temporary file
//! that is renamed over the target.

use std::io::Write;
use std::path::Path;

use crate::ars::ArsParameters;
use crate::encoder::{HashingFeaturizer, TokenizerConfig, Tower, TowerAdapter, UnicodeForm};
use crate::error::{Error, Result};
use crate::losses::Temperature;
use crate::numerics::{Matrix, Vector};

use super::model::{Model, ModelDims, ParamGroup};
use super::optim::OptimizerState;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"APRCKPT1";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub optimizer: Option<OptimizerState>,
}

fn put_f64s(out: &mut Vec<u8>, xs: &[f64]) {
    for x in xs {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn err(&self, reason: impl Into<String>) -> Error {
        Error::Format {
            path: self.path.to_path_buf(),
            reason: reason.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(self.err(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
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

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| self.err("array too large"))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn flag(&mut self) -> Result<bool> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            b => Err(self.err(format!("invalid flag byte {b}"))),
        }
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let m = &self.model;
        let dims = m.dims();
        let mut out = Vec::with_capacity(64 + 8 * m.param_count());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        for dim in [dims.feature_dim, dims.embed_dim, dims.hidden_dim] {
            out.extend_from_slice(&(dim as u32).to_le_bytes());
        }
        for g in ParamGroup::ALL {
            put_f64s(&mut out, m.group(g));
        }
        out.push(m.tokenizer.lowercase as u8);
        out.push(m.tokenizer.strip_diacritics as u8);
        out.push(m.tokenizer.unicode_form.code());
        match &self.optimizer {
            None => out.push(0),
            Some(opt) => {
                out.push(1);
                out.extend_from_slice(&opt.step.to_le_bytes());
                for (mv, vv) in opt.m.iter().zip(&opt.v) {
                    put_f64s(&mut out, mv);
                    put_f64s(&mut out, vv);
                }
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader { buf, pos: 0, path };
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err(r.err("bad magic"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(r.err(format!("unsupported version {version}")));
        }
        let (d_f, d, h) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
        if d_f == 0 || d < 2 || h == 0 {
            return Err(r.err(format!("invalid dims d_f={d_f} d={d} h={h}")));
        }
        let dims = ModelDims {
            feature_dim: d_f,
            embed_dim: d,
            hidden_dim: h,
        };
        let to_fmt = |e: Error| Error::Format {
            path: path.to_path_buf(),
            reason: e.to_string(),
        };
        let adapter_q = Matrix::new(d, d_f, r.f64s(d * d_f)?).map_err(to_fmt)?;
        let adapter_p = Matrix::new(d, d_f, r.f64s(d * d_f)?).map_err(to_fmt)?;
        let w_q = Matrix::new(h, d, r.f64s(h * d)?).map_err(to_fmt)?;
        let w_p = Matrix::new(h, d, r.f64s(h * d)?).map_err(to_fmt)?;
        let w_a = Vector::new(r.f64s(h)?).map_err(to_fmt)?;
        let log_tau = r.f64s(1)?[0];
        if !log_tau.is_finite() {
            return Err(r.err("non-finite log_tau"));
        }
        let lowercase = r.flag()?;
        let strip_diacritics = r.flag()?;
        let form_code = r.u8()?;
        let unicode_form =
            UnicodeForm::from_code(form_code).ok_or_else(|| r.err(format!("unknown unicode form {form_code}")))?;
        let model = Model {
            tokenizer: TokenizerConfig {
                lowercase,
                strip_diacritics,
                unicode_form,
            },
            featurizer: HashingFeaturizer::new(d_f)?,
            question: TowerAdapter::new(Tower::Question, adapter_q).map_err(to_fmt)?,
            passage: TowerAdapter::new(Tower::Passage, adapter_p).map_err(to_fmt)?,
            head: ArsParameters::new(w_q, w_p, w_a).map_err(to_fmt)?,
            temperature: Temperature { log_tau },
        };
        let optimizer = if r.flag()? {
            let step = r.u64()?;
            let mut m = Vec::new();
            let mut v = Vec::new();
            for g in ParamGroup::ALL {
                let n = model.group(g).len();
                m.push(r.f64s(n)?);
                v.push(r.f64s(n)?);
            }
            Some(OptimizerState { step, m, v })
        } else {
            None
        };
        if r.pos != buf.len() {
            return Err(r.err(format!("{} trailing bytes", buf.len() - r.pos)));
        }
        debug_assert_eq!(model.dims(), dims);
        Ok(Checkpoint { model, optimizer })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Checkpoint::from_bytes(&std::fs::read(path)?, path)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }
}

/// Writes `bytes` to a sibling temp file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("not a file path: {}", path.display())))?;
    let mut tmp_name = file_name.to_os_string();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}
