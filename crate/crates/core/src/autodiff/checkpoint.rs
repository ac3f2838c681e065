//! Binary checkpoint archive.
//!
//! Layout (all integers `u32` little-endian, all reals `f64` little-endian):
//!
//! ```text
//! magic   b"SGCK"
//! version 1
//! count   number of entries
//! entry*  name_len, name (UTF-8), rows, cols, rows*cols reals
//! ```
//!
//! An MLP stored under prefix `p` writes `p.layers` (`[[n]]`), and per layer
//! `k`: `p.{k}.meta` (`[activation code, spectral flag, sigma]`),
//! `p.{k}.weight`, `p.{k}.bias`, and `p.{k}.u` when spectrally normalized.
//! Adam state under `p` writes `p.meta` (`[step, lr, beta1, beta2, eps, n]`)
//! and `p.m{i}`, `p.v{i}`.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::{Activation, AdamConfig, AdamState, Linear, Mlp, SpectralState, Tensor};

const MAGIC: &[u8; 4] = b"SGCK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Ordered map of named `f64` tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TensorArchive {
    entries: BTreeMap<String, Tensor<f64>>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl TensorArchive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert<T: Scalar>(&mut self, name: impl Into<String>, t: &Tensor<T>) {
        self.entries.insert(name.into(), t.cast());
    }

    pub fn insert_values(&mut self, name: impl Into<String>, values: &[f64]) {
        self.entries.insert(name.into(), Tensor::row_vector(values.to_vec()));
    }

    pub fn get<T: Scalar>(&self, name: &str) -> Result<Tensor<T>> {
        self.entries
            .get(name)
            .map(|t| t.cast())
            .ok_or_else(|| bad(format!("missing entry `{name}`")))
    }

    pub fn values(&self, name: &str) -> Result<Vec<f64>> {
        Ok(self.get::<f64>(name)?.into_data())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let io = |e| Error::io("<checkpoint>", e);
        w.write_all(MAGIC).map_err(io)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes()).map_err(io)?;
        w.write_all(&(self.entries.len() as u32).to_le_bytes()).map_err(io)?;
        for (name, t) in &self.entries {
            w.write_all(&(name.len() as u32).to_le_bytes()).map_err(io)?;
            w.write_all(name.as_bytes()).map_err(io)?;
            w.write_all(&(t.rows() as u32).to_le_bytes()).map_err(io)?;
            w.write_all(&(t.cols() as u32).to_le_bytes()).map_err(io)?;
            for v in t.data() {
                w.write_all(&v.to_le_bytes()).map_err(io)?;
            }
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf).map_err(|e| Error::io("<checkpoint>", e))?;
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8]> {
            let s = buf.get(pos..pos + n).ok_or_else(|| bad("truncated checkpoint"))?;
            pos += n;
            Ok(s)
        };
        if take(4)? != MAGIC {
            return Err(bad("bad magic"));
        }
        let u32_at = |b: &[u8]| u32::from_le_bytes(b.try_into().expect("4 bytes"));
        let version = u32_at(take(4)?);
        if version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let count = u32_at(take(4)?) as usize;
        let mut entries = BTreeMap::new();
        for _ in 0..count {
            let len = u32_at(take(4)?) as usize;
            let name = String::from_utf8(take(len)?.to_vec()).map_err(|_| bad("entry name is not UTF-8"))?;
            let rows = u32_at(take(4)?) as usize;
            let cols = u32_at(take(4)?) as usize;
            let raw = take(rows * cols * 8)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            entries.insert(name, Tensor::new([rows, cols], data)?);
        }
        Ok(Self { entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(std::io::BufWriter::new(f))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(std::io::BufReader::new(f))
    }

    pub fn put_mlp<T: Scalar>(&mut self, prefix: &str, mlp: &Mlp<T>) {
        self.insert_values(format!("{prefix}.layers"), &[mlp.layers.len() as f64]);
        for (k, l) in mlp.layers.iter().enumerate() {
            let sigma = l.spectral.as_ref().map_or(1.0, |s| s.sigma.f64());
            self.insert_values(
                format!("{prefix}.{k}.meta"),
                &[l.activation.code() as f64, l.spectral.is_some() as u8 as f64, sigma],
            );
            self.insert(format!("{prefix}.{k}.weight"), &l.weight);
            self.insert(format!("{prefix}.{k}.bias"), &l.bias);
            if let Some(s) = &l.spectral {
                self.insert(format!("{prefix}.{k}.u"), &Tensor::row_vector(s.u.clone()));
            }
        }
    }

    pub fn get_mlp<T: Scalar>(&self, prefix: &str) -> Result<Mlp<T>> {
        let n = self.values(&format!("{prefix}.layers"))?[0] as usize;
        let mut layers = Vec::with_capacity(n);
        for k in 0..n {
            let meta = self.values(&format!("{prefix}.{k}.meta"))?;
            if meta.len() != 3 {
                return Err(bad(format!("{prefix}.{k}.meta has {} values", meta.len())));
            }
            let activation = Activation::from_code(meta[0] as u8)
                .ok_or_else(|| bad(format!("unknown activation code {}", meta[0])))?;
            let spectral = if meta[1] != 0.0 {
                let u = self.get::<T>(&format!("{prefix}.{k}.u"))?.into_data();
                Some(SpectralState {
                    u,
                    sigma: T::of(meta[2]),
                })
            } else {
                None
            };
            layers.push(Linear {
                weight: self.get(&format!("{prefix}.{k}.weight"))?,
                bias: self.get(&format!("{prefix}.{k}.bias"))?,
                activation,
                spectral,
            });
        }
        Mlp::from_layers(layers)
    }

    pub fn put_adam<T: Scalar>(&mut self, prefix: &str, adam: &AdamState<T>) {
        let c = adam.config;
        self.insert_values(
            format!("{prefix}.meta"),
            &[adam.step as f64, c.lr, c.beta1, c.beta2, c.eps, adam.m.len() as f64],
        );
        for (i, (m, v)) in adam.m.iter().zip(&adam.v).enumerate() {
            self.insert(format!("{prefix}.m{i}"), m);
            self.insert(format!("{prefix}.v{i}"), v);
        }
    }

    pub fn get_adam<T: Scalar>(&self, prefix: &str) -> Result<AdamState<T>> {
        let meta = self.values(&format!("{prefix}.meta"))?;
        if meta.len() != 6 {
            return Err(bad(format!("{prefix}.meta has {} values", meta.len())));
        }
        let n = meta[5] as usize;
        let mut m = Vec::with_capacity(n);
        let mut v = Vec::with_capacity(n);
        for i in 0..n {
            m.push(self.get(&format!("{prefix}.m{i}"))?);
            v.push(self.get(&format!("{prefix}.v{i}"))?);
        }
        Ok(AdamState {
            config: AdamConfig {
                lr: meta[1],
                beta1: meta[2],
                beta2: meta[3],
                eps: meta[4],
            },
            step: meta[0] as u64,
            m,
            v,
        })
    }
}
