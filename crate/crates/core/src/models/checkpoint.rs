//! EGW1 parameter container.
//!
//! ```text
//! "EGW1" | u32 version | u32 header_len | header (TOML, header_len bytes)
//!        | records: u32 name_len | name | u32 rank | rank × u32 extent | f32 payload
//!        | u32 CRC32 of every preceding byte
//! ```
//! Little-endian throughout. Records run until the checksum.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::config::{CriticConfig, GeneratorConfig};
use super::critic::build_critic;
use super::generator::{build_generator, Generator};
use super::params::ParamStore;

pub const WEIGHTS_MAGIC: &[u8; 4] = b"EGW1";
pub const WEIGHTS_VERSION: u32 = 1;

/// Frames a TOML header and named tensors, appending the CRC32.
pub fn write_container<'a, T: Scalar + 'a>(
    header: &str,
    records: impl IntoIterator<Item = (&'a str, &'a Tensor<T>)>,
) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(WEIGHTS_MAGIC);
    out.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
    out.extend_from_slice(&u32_len(header.len())?.to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    for (name, t) in records {
        out.extend_from_slice(&u32_len(name.len())?.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&u32_len(t.rank())?.to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&u32_len(d)?.to_le_bytes());
        }
        for &x in t.data() {
            out.extend_from_slice(&(x.to_f64_lossy() as f32).to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

fn u32_len(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Format(format!("length {n} exceeds u32")))
}

struct Reader<'a> {
    b: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.b.len() - self.pos < n {
            return Err(Error::Truncated {
                expected: self.pos + n,
                found: self.b.len(),
            });
        }
        let s = &self.b[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Verifies framing and checksum; returns the header text and records.
pub fn read_container(bytes: &[u8]) -> Result<(String, Vec<(String, Tensor<f32>)>)> {
    if bytes.len() < 4 || &bytes[..4] != WEIGHTS_MAGIC {
        return Err(Error::Format("not an EGW1 container (bad magic)".into()));
    }
    if bytes.len() < 16 {
        return Err(Error::Truncated {
            expected: 16,
            found: bytes.len(),
        });
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }
    let mut r = Reader { b: body, pos: 4 };
    let version = r.u32()?;
    if version != WEIGHTS_VERSION {
        return Err(Error::Format(format!("unsupported EGW1 version {version}")));
    }
    let hl = r.u32()? as usize;
    let header = std::str::from_utf8(r.take(hl)?)
        .map_err(|_| Error::Format("EGW1 header is not UTF-8".into()))?
        .to_string();
    let mut records = Vec::new();
    while r.pos < body.len() {
        let nl = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(nl)?)
            .map_err(|_| Error::Format("record name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32()? as usize;
        if rank > 8 {
            return Err(Error::Format(format!("record {name} declares rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let n = n
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::Format(format!("record {name} is too large")))?;
        let data = r
            .take(n)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = Tensor::new(&shape, data)
            .map_err(|e| Error::Format(format!("record {name}: {e}")))?;
        records.push((name, t));
    }
    Ok((header, records))
}

/// Structured header of a model checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub kind: String,
    pub step: u64,
    pub epoch: u64,
    pub fingerprint: String,
    /// Digest of the normalization stats the model was trained against.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stats_ref: Option<String>,
    pub generator: GeneratorConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub critic: Option<CriticConfig>,
}

/// Generator (and optionally critic) parameters with provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub step: u64,
    pub epoch: u64,
    pub stats_ref: Option<String>,
    pub generator: Generator<T>,
    pub critic: Option<(CriticConfig, ParamStore<T>)>,
}

/// Architecture fingerprint over both configs.
pub fn model_fingerprint(g: &GeneratorConfig, c: Option<&CriticConfig>) -> String {
    let mut h = Sha256::new();
    h.update(super::generator::config_fingerprint("generator", g));
    if let Some(c) = c {
        h.update(super::generator::config_fingerprint("critic", c));
    }
    hex::encode(h.finalize())
}

const GEN_PREFIX: &str = "gen/";
const CRITIC_PREFIX: &str = "critic/";

impl<T: Scalar> Checkpoint<T> {
    pub fn generator_only(generator: Generator<T>) -> Self {
        Self {
            step: 0,
            epoch: 0,
            stats_ref: None,
            generator,
            critic: None,
        }
    }

    pub fn fingerprint(&self) -> String {
        model_fingerprint(
            &self.generator.config,
            self.critic.as_ref().map(|(c, _)| c),
        )
    }

    pub fn header(&self) -> CheckpointHeader {
        CheckpointHeader {
            kind: "model".into(),
            step: self.step,
            epoch: self.epoch,
            fingerprint: self.fingerprint(),
            stats_ref: self.stats_ref.clone(),
            generator: self.generator.config.clone(),
            critic: self.critic.as_ref().map(|(c, _)| c.clone()),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = toml::to_string(&self.header())
            .map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
        let gen_names: Vec<String> = self
            .generator
            .params
            .names()
            .iter()
            .map(|n| format!("{GEN_PREFIX}{n}"))
            .collect();
        let mut records: Vec<(&str, &Tensor<T>)> = gen_names
            .iter()
            .map(String::as_str)
            .zip(self.generator.params.tensors())
            .collect();
        let critic_names: Vec<String> = match &self.critic {
            Some((_, p)) => p.names().iter().map(|n| format!("{CRITIC_PREFIX}{n}")).collect(),
            None => Vec::new(),
        };
        if let Some((_, p)) = &self.critic {
            records.extend(critic_names.iter().map(String::as_str).zip(p.tensors()));
        }
        write_container(&header, records)
    }

    /// Parses and validates a checkpoint. A header whose fingerprint does
    /// not match its own configs, or records that do not match the
    /// architecture, fail with a fingerprint error.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (text, records) = read_container(bytes)?;
        let header: CheckpointHeader = toml::from_str(&text)
            .map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
        if header.kind != "model" {
            return Err(Error::Format(format!(
                "expected a model checkpoint, found kind {:?}",
                header.kind
            )));
        }
        let computed = model_fingerprint(&header.generator, header.critic.as_ref());
        if computed != header.fingerprint {
            return Err(Error::Fingerprint {
                expected: header.fingerprint,
                found: computed,
            });
        }
        let gen_layout: ParamStore<T> = build_generator(&header.generator, 0)?;
        let critic_layout: Option<ParamStore<T>> = match &header.critic {
            Some(c) => Some(build_critic(c, 0)?),
            None => None,
        };
        let mut records = records.into_iter();
        let gen = fill(gen_layout, GEN_PREFIX, &mut records, &header.fingerprint)?;
        let critic = match critic_layout {
            Some(l) => Some(fill(l, CRITIC_PREFIX, &mut records, &header.fingerprint)?),
            None => None,
        };
        if let Some((name, _)) = records.next() {
            return Err(Error::Fingerprint {
                expected: header.fingerprint,
                found: format!("unexpected record {name}"),
            });
        }
        Ok(Self {
            step: header.step,
            epoch: header.epoch,
            stats_ref: header.stats_ref,
            generator: Generator {
                config: header.generator,
                params: gen,
            },
            critic: header.critic.zip(critic),
        })
    }

    /// Like [`Self::from_bytes`] but also requires a specific fingerprint.
    pub fn from_bytes_expecting(bytes: &[u8], fingerprint: &str) -> Result<Self> {
        let c = Self::from_bytes(bytes)?;
        let found = c.fingerprint();
        if found != fingerprint {
            return Err(Error::Fingerprint {
                expected: fingerprint.to_string(),
                found,
            });
        }
        Ok(c)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

fn fill<T: Scalar>(
    mut layout: ParamStore<T>,
    prefix: &str,
    records: &mut impl Iterator<Item = (String, Tensor<f32>)>,
    fingerprint: &str,
) -> Result<ParamStore<T>> {
    let names = layout.names().to_vec();
    for name in names {
        let mismatch = |found: String| Error::Fingerprint {
            expected: fingerprint.to_string(),
            found,
        };
        let (rec_name, t) = records
            .next()
            .ok_or_else(|| mismatch(format!("missing record {prefix}{name}")))?;
        if rec_name != format!("{prefix}{name}") {
            return Err(mismatch(format!("record {rec_name} where {prefix}{name} belongs")));
        }
        layout
            .set(&name, t.cast())
            .map_err(|e| mismatch(format!("{rec_name}: {e}")))?;
    }
    Ok(layout)
}

/// Generator-only serialization.
pub fn serialize_generator<T: Scalar>(g: &Generator<T>) -> Result<Vec<u8>> {
    Checkpoint::generator_only(g.clone()).to_bytes()
}

pub fn deserialize_generator<T: Scalar>(bytes: &[u8]) -> Result<Generator<T>> {
    Ok(Checkpoint::from_bytes(bytes)?.generator)
}
