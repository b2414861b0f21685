//! Checkpoint persistence.
//!
//! The file format is deliberately primitive so it stays diff-able and
//! bit-exact: magic `FRDF`, a u32 format version, a u32 entry count, then
//! one record per entry. A record is a u16 name length, the UTF-8 name, a
//! dtype byte, a u8 rank, u32 dims and the raw payload. Dtype 0 is f32
//! little-endian (network weights and optimizer moments); dtype 1 is a raw
//! byte blob (stage marker, config snapshot, generator states). All
//! integers are little-endian. Save, load and save again produces byte
//! identical files.

use std::path::Path;

use freqdehaze_core::nn::Parameterized;
use freqdehaze_core::optim::{Adam, AdamEntry};
use freqdehaze_core::rng::RngState;

use crate::error::{CkptFault, Error, Result};
use crate::fsutil::{read_bytes, write_atomic};

pub const MAGIC: [u8; 4] = *b"FRDF";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32 { dims: Vec<usize>, data: Vec<f32> },
    Bytes(Vec<u8>),
}

/// An ordered collection of named entries. Order is part of the format:
/// the same nets packed in the same sequence serialize identically.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    entries: Vec<(String, TensorData)>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Checkpoint::default()
    }

    /// Adds an entry. Names must be unique; a duplicate is a programming
    /// error, not a data error.
    pub fn insert(&mut self, name: impl Into<String>, data: TensorData) {
        let name = name.into();
        assert!(
            self.get(&name).is_none(),
            "duplicate checkpoint entry {name}"
        );
        self.entries.push((name, data));
    }

    pub fn get(&self, name: &str) -> Option<&TensorData> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, d)| d)
    }

    pub fn entries(&self) -> &[(String, TensorData)] {
        &self.entries
    }

    pub fn f32s(&self, name: &str) -> Result<(&[usize], &[f32])> {
        match self.get(name) {
            Some(TensorData::F32 { dims, data }) => Ok((dims, data)),
            Some(TensorData::Bytes(_)) => Err(Error::data(format!(
                "checkpoint entry {name} is a byte blob, expected an f32 tensor"
            ))),
            None => Err(Error::data(format!("checkpoint lacks tensor {name}"))),
        }
    }

    pub fn bytes(&self, name: &str) -> Result<&[u8]> {
        match self.get(name) {
            Some(TensorData::Bytes(b)) => Ok(b),
            Some(TensorData::F32 { .. }) => Err(Error::data(format!(
                "checkpoint entry {name} is an f32 tensor, expected bytes"
            ))),
            None => Err(Error::data(format!("checkpoint lacks entry {name}"))),
        }
    }

    /// Stage marker: 1 after stage-one training, 2 after stage two.
    pub fn stage(&self) -> Result<u8> {
        let b = self.bytes("meta.stage")?;
        match b {
            [s @ (1 | 2)] => Ok(*s),
            other => Err(Error::data(format!(
                "meta.stage holds {other:?}, expected [1] or [2]"
            ))),
        }
    }

    /// The config snapshot taken when the checkpoint was written.
    pub fn config_text(&self) -> Result<&str> {
        std::str::from_utf8(self.bytes("meta.config")?)
            .map_err(|e| Error::data(format!("meta.config is not UTF-8: {e}")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(&MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, data) in &self.entries {
            buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
            buf.extend_from_slice(name.as_bytes());
            match data {
                TensorData::F32 { dims, data } => {
                    buf.push(0);
                    buf.push(dims.len() as u8);
                    for &d in dims {
                        buf.extend_from_slice(&(d as u32).to_le_bytes());
                    }
                    for &v in data {
                        buf.extend_from_slice(&v.to_le_bytes());
                    }
                }
                TensorData::Bytes(b) => {
                    buf.push(1);
                    buf.push(1);
                    buf.extend_from_slice(&(b.len() as u32).to_le_bytes());
                    buf.extend_from_slice(b);
                }
            }
        }
        buf
    }

    /// Parses a checkpoint. The magic and version are checked before any
    /// tensor payload is touched, so a foreign file is rejected without
    /// allocating for its contents; truncation errors name the tensor the
    /// data ran out in.
    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let fault = |f: CkptFault| Error::Ckpt {
            path: origin.to_path_buf(),
            fault: f,
        };
        if bytes.len() < 4 || bytes[..4] != MAGIC {
            return Err(fault(CkptFault::BadMagic));
        }
        let mut cur = Cursor {
            bytes,
            pos: 4,
            tensor: "<header>".to_string(),
        };
        let version = u32::from_le_bytes(cur.take(4, origin)?.try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(fault(CkptFault::Version {
                got: version,
                want: VERSION,
            }));
        }
        let count = u32::from_le_bytes(cur.take(4, origin)?.try_into().expect("4 bytes")) as usize;
        let mut ckpt = Checkpoint::new();
        for _ in 0..count {
            let name_len =
                u16::from_le_bytes(cur.take(2, origin)?.try_into().expect("2 bytes")) as usize;
            let name = std::str::from_utf8(cur.take(name_len, origin)?)
                .map_err(|e| fault(CkptFault::Malformed { detail: format!("tensor name: {e}") }))?
                .to_string();
            cur.tensor = name.clone();
            let dtype = cur.take(1, origin)?[0];
            let ndim = cur.take(1, origin)?[0] as usize;
            let mut dims = Vec::with_capacity(ndim);
            let mut len = 1usize;
            for _ in 0..ndim {
                let d =
                    u32::from_le_bytes(cur.take(4, origin)?.try_into().expect("4 bytes")) as usize;
                len = len.checked_mul(d).ok_or_else(|| {
                    fault(CkptFault::Malformed {
                        detail: format!("tensor {name}: dims overflow"),
                    })
                })?;
                dims.push(d);
            }
            if ckpt.get(&name).is_some() {
                return Err(fault(CkptFault::Malformed {
                    detail: format!("duplicate tensor {name}"),
                }));
            }
            let data = match dtype {
                0 => {
                    let raw = cur.take(len * 4, origin)?;
                    let data = raw
                        .chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                        .collect();
                    TensorData::F32 { dims, data }
                }
                1 => TensorData::Bytes(cur.take(len, origin)?.to_vec()),
                other => {
                    return Err(fault(CkptFault::Malformed {
                        detail: format!("tensor {name}: unknown dtype {other}"),
                    }))
                }
            };
            ckpt.entries.push((name, data));
        }
        if cur.pos != bytes.len() {
            return Err(fault(CkptFault::Malformed {
                detail: format!("{} trailing bytes after the last tensor", bytes.len() - cur.pos),
            }));
        }
        Ok(ckpt)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    tensor: String,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, origin: &Path) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Ckpt {
                path: origin.to_path_buf(),
                fault: CkptFault::Truncated {
                    tensor: self.tensor.clone(),
                },
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    write_atomic(path, &ckpt.to_bytes())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&read_bytes(path)?, path)
}

// ---------------------------------------------------------------------------
// Packing networks, optimizers and generator states
// ---------------------------------------------------------------------------

/// Stores every parameter of `net` under `prefix.` in visitation order.
pub fn pack_params(ckpt: &mut Checkpoint, prefix: &str, net: &dyn Parameterized<f32>) {
    net.visit_params(&mut |name, p| {
        ckpt.insert(
            format!("{prefix}.{name}"),
            TensorData::F32 {
                dims: p.dims.clone(),
                data: p.value.clone(),
            },
        );
    });
}

/// Loads every parameter of `net` from `prefix.` entries. A missing tensor
/// or a shape disagreement is rejected with both sides of the diff.
pub fn unpack_params(
    ckpt: &Checkpoint,
    prefix: &str,
    net: &mut dyn Parameterized<f32>,
) -> Result<()> {
    let mut failure = None;
    net.visit_params_mut(&mut |name, p| {
        if failure.is_some() {
            return;
        }
        let key = format!("{prefix}.{name}");
        match ckpt.f32s(&key) {
            Ok((dims, data)) => {
                if dims != p.dims.as_slice() {
                    failure = Some(Error::data(format!(
                        "checkpoint tensor {key}: network expects dims {:?}, file has {:?}",
                        p.dims, dims
                    )));
                } else {
                    p.value.copy_from_slice(data);
                }
            }
            Err(e) => failure = Some(e),
        }
    });
    match failure {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

/// Stores Adam state as `adam.<prefix>.<param>.{m,v,step}` entries. A
/// freshly constructed optimizer (no steps taken) packs nothing.
pub fn pack_adam(ckpt: &mut Checkpoint, prefix: &str, adam: &Adam<f32>) {
    for entry in adam.entries() {
        let base = format!("adam.{prefix}.{}", entry.name);
        ckpt.insert(
            format!("{base}.m"),
            TensorData::F32 {
                dims: vec![entry.m.len()],
                data: entry.m.clone(),
            },
        );
        ckpt.insert(
            format!("{base}.v"),
            TensorData::F32 {
                dims: vec![entry.v.len()],
                data: entry.v.clone(),
            },
        );
        ckpt.insert(
            format!("{base}.step"),
            TensorData::Bytes(entry.step.to_le_bytes().to_vec()),
        );
    }
}

/// Restores Adam state for `net`'s parameters. When the checkpoint holds
/// no state under this prefix the optimizer is left fresh; partial state
/// is an error.
pub fn unpack_adam(
    ckpt: &Checkpoint,
    prefix: &str,
    adam: &mut Adam<f32>,
    net: &dyn Parameterized<f32>,
) -> Result<()> {
    let mut names = Vec::new();
    net.visit_params(&mut |name, _| names.push(name.to_string()));
    let present: Vec<bool> = names
        .iter()
        .map(|n| ckpt.get(&format!("adam.{prefix}.{n}.m")).is_some())
        .collect();
    if present.iter().all(|&p| !p) {
        return Ok(());
    }
    if !present.iter().all(|&p| p) {
        return Err(Error::data(format!(
            "checkpoint holds optimizer state for only some of the {prefix} parameters"
        )));
    }
    let mut entries = Vec::with_capacity(names.len());
    for name in names {
        let base = format!("adam.{prefix}.{name}");
        let (_, m) = ckpt.f32s(&format!("{base}.m"))?;
        let (_, v) = ckpt.f32s(&format!("{base}.v"))?;
        let raw = ckpt.bytes(&format!("{base}.step"))?;
        let step = u64::from_le_bytes(raw.try_into().map_err(|_| {
            Error::data(format!("{base}.step holds {} bytes, expected 8", raw.len()))
        })?);
        entries.push(AdamEntry {
            name,
            m: m.to_vec(),
            v: v.to_vec(),
            step,
        });
    }
    adam.set_entries(entries);
    Ok(())
}

/// Generator state: 32 seed bytes, the u64 stream id, the u128 word
/// position.
pub fn pack_rng(ckpt: &mut Checkpoint, name: &str, state: &RngState) {
    let mut b = Vec::with_capacity(56);
    b.extend_from_slice(&state.seed);
    b.extend_from_slice(&state.stream.to_le_bytes());
    b.extend_from_slice(&state.word_pos.to_le_bytes());
    ckpt.insert(name, TensorData::Bytes(b));
}

pub fn unpack_rng(ckpt: &Checkpoint, name: &str) -> Result<RngState> {
    let b = ckpt.bytes(name)?;
    if b.len() != 56 {
        return Err(Error::data(format!(
            "{name} holds {} bytes, expected 56",
            b.len()
        )));
    }
    Ok(RngState {
        seed: b[..32].try_into().expect("32 bytes"),
        stream: u64::from_le_bytes(b[32..40].try_into().expect("8 bytes")),
        word_pos: u128::from_le_bytes(b[40..56].try_into().expect("16 bytes")),
    })
}
