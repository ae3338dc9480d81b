//! Single-file binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! u8 version | "RANCKPT" | u8 dtype
//! str config            (key=value text)
//! u8 token mode | u64 n | n x str      (vocabulary without reserved entries)
//! u64 n | n x str                      (label or tag names)
//! u64 n | n x (str name | u32 rank | rank x u64 dim | payload)
//! u8 has_optimizer [| u64 step | 4 x f64 | m payloads | v payloads]
//! ```
//!
//! `str` is a `u64` byte length followed by UTF-8.

use std::fs;
use std::path::Path;

use ran_core::data::{TokenMode, Vocab};
use ran_core::kv::KvMap;
use ran_core::training::AdamState;
use ran_core::{DType, ModelConfig, RanError, RanModel, Result, Scalar, Tensor};

pub const VERSION: u8 = 1;
pub const MAGIC: &[u8; 7] = b"RANCKPT";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub config: ModelConfig,
    pub vocab: Vocab,
    /// Class names for document tasks, tag names for tagging, empty for LM.
    pub labels: Vec<String>,
    pub params: Vec<(String, Tensor<T>)>,
    pub optimizer: Option<AdamState<T>>,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn from_model(model: &RanModel<T>, vocab: &Vocab, labels: &[String], optimizer: Option<&AdamState<T>>) -> Self {
        Checkpoint {
            config: model.config.clone(),
            vocab: vocab.clone(),
            labels: labels.to_vec(),
            params: model
                .params
                .iter()
                .map(|(n, t)| (n.to_string(), t.clone()))
                .collect(),
            optimizer: optimizer.cloned(),
        }
    }

    pub fn model(&self) -> Result<RanModel<T>> {
        RanModel::with_params(self.config.clone(), self.params.clone())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = vec![VERSION];
        out.extend_from_slice(MAGIC);
        out.push(T::DTYPE.tag());
        let mut kv = KvMap::default();
        self.config.write_kv(&mut kv);
        put_str(&mut out, &kv.to_text());
        out.push(match self.vocab.mode() {
            TokenMode::Char => 0,
            TokenMode::Word => 1,
        });
        let words = self.vocab.entries();
        put_u64(&mut out, words.len() as u64);
        for w in words {
            put_str(&mut out, w);
        }
        put_u64(&mut out, self.labels.len() as u64);
        for l in &self.labels {
            put_str(&mut out, l);
        }
        put_u64(&mut out, self.params.len() as u64);
        for (name, t) in &self.params {
            put_str(&mut out, name);
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                put_u64(&mut out, d as u64);
            }
            put_payload(&mut out, t);
        }
        match &self.optimizer {
            None => out.push(0),
            Some(o) => {
                out.push(1);
                put_u64(&mut out, o.step);
                for x in [o.lr, o.beta1, o.beta2, o.eps] {
                    out.extend_from_slice(&x.to_le_bytes());
                }
                for t in o.m.iter().chain(&o.v) {
                    put_payload(&mut out, t);
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let dtype = peek_dtype(bytes)?;
        if dtype != T::DTYPE {
            return Err(bad(format!("checkpoint holds {dtype:?}, expected {:?}", T::DTYPE)));
        }
        let mut r = Reader { bytes, pos: 1 + MAGIC.len() + 1 };
        let config = ModelConfig::from_kv(&KvMap::parse(&r.str()?)?)?;
        config.validate()?;
        let mode = match r.u8()? {
            0 => TokenMode::Char,
            1 => TokenMode::Word,
            t => return Err(bad(format!("unknown token mode tag {t}"))),
        };
        let n = r.len()?;
        let words = (0..n).map(|_| r.str()).collect::<Result<Vec<_>>>()?;
        let vocab = Vocab::from_tokens(mode, words)?;
        let n = r.len()?;
        let labels = (0..n).map(|_| r.str()).collect::<Result<Vec<_>>>()?;
        let n = r.len()?;
        let mut params = Vec::with_capacity(n);
        for _ in 0..n {
            let name = r.str()?;
            let rank = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes")) as usize;
            let shape = (0..rank).map(|_| r.len()).collect::<Result<Vec<_>>>()?;
            let t = r.payload::<T>(&shape)?;
            params.push((name, t));
        }
        let optimizer = match r.u8()? {
            0 => None,
            1 => {
                let step = r.u64()?;
                let mut f = [0.0; 4];
                for x in &mut f {
                    *x = f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
                }
                let mut moments = Vec::with_capacity(2 * params.len());
                for _ in 0..2 {
                    for (_, p) in &params {
                        moments.push(r.payload::<T>(p.shape())?);
                    }
                }
                let v = moments.split_off(params.len());
                Some(AdamState {
                    step,
                    lr: f[0],
                    beta1: f[1],
                    beta2: f[2],
                    eps: f[3],
                    m: moments,
                    v,
                })
            }
            t => return Err(bad(format!("bad optimizer flag {t}"))),
        };
        if r.pos != bytes.len() {
            return Err(bad(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Checkpoint {
            config,
            vocab,
            labels,
            params,
            optimizer,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

/// Validate the header and return the stored element type.
pub fn peek_dtype(bytes: &[u8]) -> Result<DType> {
    let header = 1 + MAGIC.len() + 1;
    if bytes.len() < header {
        return Err(bad("file too short for a checkpoint header"));
    }
    if bytes[0] != VERSION {
        return Err(bad(format!("unsupported checkpoint version {} (expected {VERSION})", bytes[0])));
    }
    if &bytes[1..1 + MAGIC.len()] != MAGIC {
        return Err(bad("missing RANCKPT magic"));
    }
    DType::from_tag(bytes[header - 1]).ok_or_else(|| bad(format!("unknown dtype tag {}", bytes[header - 1])))
}

fn bad(msg: impl Into<String>) -> RanError {
    RanError::Checkpoint(msg.into())
}

fn put_u64(out: &mut Vec<u8>, x: u64) {
    out.extend_from_slice(&x.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u64(out, s.len() as u64);
    out.extend_from_slice(s.as_bytes());
}

fn put_payload<T: Scalar>(out: &mut Vec<u8>, t: &Tensor<T>) {
    for &x in t.data() {
        x.write_le(out);
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| bad("truncated checkpoint"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self) -> Result<usize> {
        let x = self.u64()?;
        usize::try_from(x)
            .ok()
            .filter(|&n| n <= self.bytes.len())
            .ok_or_else(|| bad(format!("implausible length {x}")))
    }

    fn str(&mut self) -> Result<String> {
        let n = self.len()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| bad("invalid UTF-8 in checkpoint"))
    }

    fn payload<T: Scalar>(&mut self, shape: &[usize]) -> Result<Tensor<T>> {
        let n: usize = shape.iter().product();
        let size = T::DTYPE.size();
        let raw = self.take(n.checked_mul(size).ok_or_else(|| bad("tensor too large"))?)?;
        let data = raw.chunks_exact(size).map(T::read_le).collect();
        Tensor::new(shape.to_vec(), data)
    }
}
