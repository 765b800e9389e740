//! EGV1 volume container.
//!
//! ```text
//! "EGV1" | u32 version | u32 V | u32 R | u32 H | u32 W | u64 timestep
//!        | V × (f32 min, f32 max) | V × 32-byte zero-padded name
//!        | V·R·H·W × f32 values, (variable, radial, lat, lon) row-major
//! ```
//! All integers and floats are little-endian. A grid without normalization
//! stats stores NaN for every min/max pair.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::shell::{ShellGrid, VarStats};

pub const VOLUME_MAGIC: &[u8; 4] = b"EGV1";
pub const VOLUME_VERSION: u32 = 1;
const NAME_BYTES: usize = 32;

/// Decoded EGV1 header.
#[derive(Clone, Debug, PartialEq)]
pub struct VolumeHeader {
    pub version: u32,
    pub dims: [usize; 4],
    pub timestep: u64,
    pub stats: Option<Vec<VarStats>>,
    pub variables: Vec<String>,
}

impl VolumeHeader {
    pub fn header_len(&self) -> usize {
        header_len(self.dims[0])
    }

    pub fn payload_len(&self) -> usize {
        self.dims.iter().product::<usize>() * 4
    }
}

fn header_len(v: usize) -> usize {
    4 + 4 * 5 + 8 + v * 8 + v * NAME_BYTES
}

pub fn encode_volume<T: Scalar>(grid: &ShellGrid<T>) -> Result<Vec<u8>> {
    let [v, r, h, w] = grid.dims();
    let mut out = Vec::with_capacity(header_len(v) + v * r * h * w * 4);
    out.extend_from_slice(VOLUME_MAGIC);
    out.extend_from_slice(&VOLUME_VERSION.to_le_bytes());
    for d in [v, r, h, w] {
        let d = u32::try_from(d)
            .map_err(|_| Error::Format(format!("dimension {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    out.extend_from_slice(&grid.timestep().to_le_bytes());
    for i in 0..v {
        let (lo, hi) = match grid.stats() {
            Some(s) => (s[i].min as f32, s[i].max as f32),
            None => (f32::NAN, f32::NAN),
        };
        out.extend_from_slice(&lo.to_le_bytes());
        out.extend_from_slice(&hi.to_le_bytes());
    }
    for name in grid.variables() {
        let b = name.as_bytes();
        if b.len() > NAME_BYTES {
            return Err(Error::Format(format!(
                "variable name {name:?} longer than {NAME_BYTES} bytes"
            )));
        }
        let mut field = [0u8; NAME_BYTES];
        field[..b.len()].copy_from_slice(b);
        out.extend_from_slice(&field);
    }
    for &x in grid.values().data() {
        out.extend_from_slice(&(x.to_f64_lossy() as f32).to_le_bytes());
    }
    Ok(out)
}

fn u32_at(b: &[u8], off: usize) -> u32 {
    u32::from_le_bytes(b[off..off + 4].try_into().unwrap())
}

fn f32_at(b: &[u8], off: usize) -> f32 {
    f32::from_le_bytes(b[off..off + 4].try_into().unwrap())
}

pub fn decode_header(bytes: &[u8]) -> Result<VolumeHeader> {
    if bytes.len() < 4 || &bytes[..4] != VOLUME_MAGIC {
        return Err(Error::Format("not an EGV1 volume (bad magic)".into()));
    }
    let fixed = header_len(0);
    if bytes.len() < fixed {
        return Err(Error::Truncated {
            expected: fixed,
            found: bytes.len(),
        });
    }
    let version = u32_at(bytes, 4);
    if version != VOLUME_VERSION {
        return Err(Error::Format(format!("unsupported EGV1 version {version}")));
    }
    let dims = [8, 12, 16, 20].map(|o| u32_at(bytes, o) as usize);
    if dims.iter().any(|&d| d == 0) {
        return Err(Error::Format(format!("EGV1 header declares empty dims {dims:?}")));
    }
    let timestep = u64::from_le_bytes(bytes[24..32].try_into().unwrap());
    let v = dims[0];
    let hl = header_len(v);
    if bytes.len() < hl {
        return Err(Error::Truncated {
            expected: hl,
            found: bytes.len(),
        });
    }
    let mut pairs = Vec::with_capacity(v);
    for i in 0..v {
        pairs.push((f32_at(bytes, 32 + 8 * i), f32_at(bytes, 36 + 8 * i)));
    }
    let stats = if pairs.iter().all(|(a, b)| a.is_nan() && b.is_nan()) {
        None
    } else if pairs.iter().any(|(a, b)| a.is_nan() || b.is_nan()) {
        return Err(Error::Format("EGV1 header mixes present and absent stats".into()));
    } else {
        Some(
            pairs
                .iter()
                .map(|&(a, b)| VarStats::new(a as f64, b as f64))
                .collect(),
        )
    };
    let names_off = 32 + 8 * v;
    let mut variables = Vec::with_capacity(v);
    for i in 0..v {
        let field = &bytes[names_off + i * NAME_BYTES..names_off + (i + 1) * NAME_BYTES];
        let end = field.iter().position(|&c| c == 0).unwrap_or(NAME_BYTES);
        let name = std::str::from_utf8(&field[..end])
            .map_err(|_| Error::Format(format!("variable name {i} is not UTF-8")))?;
        variables.push(name.to_string());
    }
    Ok(VolumeHeader {
        version,
        dims,
        timestep,
        stats,
        variables,
    })
}

pub fn decode_volume<T: Scalar>(bytes: &[u8]) -> Result<ShellGrid<T>> {
    let header = decode_header(bytes)?;
    let expected = header.header_len() + header.payload_len();
    if bytes.len() != expected {
        return Err(Error::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    let values: Vec<T> = bytes[header.header_len()..]
        .chunks_exact(4)
        .map(|c| T::lit(f32::from_le_bytes(c.try_into().unwrap()) as f64))
        .collect();
    ShellGrid::new(header.variables, header.timestep, Tensor::new(&header.dims, values)?)?
        .with_stats(header.stats)
}

pub fn save_volume<T: Scalar>(grid: &ShellGrid<T>, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_volume(grid)?)?;
    Ok(())
}

pub fn load_volume<T: Scalar>(path: impl AsRef<Path>) -> Result<ShellGrid<T>> {
    decode_volume(&fs::read(path)?)
}

/// Reads only as much of the file as the header needs.
pub fn read_volume_header(path: impl AsRef<Path>) -> Result<VolumeHeader> {
    use std::io::Read;
    let mut f = fs::File::open(path)?;
    let mut head = vec![0u8; header_len(0)];
    let n = f.read(&mut head)?;
    head.truncate(n);
    let v = if head.len() >= 12 && &head[..4] == VOLUME_MAGIC {
        u32_at(&head, 8) as usize
    } else {
        0
    };
    let mut rest = vec![0u8; header_len(v) - header_len(0)];
    let m = f.read(&mut rest)?;
    head.extend_from_slice(&rest[..m]);
    decode_header(&head)
}
