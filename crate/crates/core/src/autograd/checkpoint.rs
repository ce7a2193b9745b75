//! Checkpoint files: a line-oriented text header followed by a
//! little-endian `f32` payload.
//!
//! ```text
//! HSICUBE-CHECKPOINT 1
//! meta seed=7
//! param stage1.conv.weight 32x10x3x3
//! buffer stage1.bn.running_mean 32
//! end
//! <payload: each tensor in header order>
//! ```

use std::path::Path;

use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &str = "HSICUBE-CHECKPOINT 1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntryKind {
    Param,
    Buffer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub kind: EntryKind,
    pub name: String,
    pub tensor: Tensor,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub meta: Vec<(String, String)>,
    pub entries: Vec<Entry>,
}

fn shape_str(shape: &[usize]) -> String {
    if shape.is_empty() {
        return "-".into();
    }
    shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x")
}

fn parse_shape(s: &str) -> Result<Vec<usize>> {
    if s == "-" {
        return Ok(Vec::new());
    }
    s.split('x')
        .map(|d| d.parse().map_err(|_| Error::Format(format!("bad shape '{s}'"))))
        .collect()
}

impl Checkpoint {
    pub fn from_store(store: &ParamStore, meta: Vec<(String, String)>) -> Self {
        let mut entries = Vec::new();
        for (kind, list) in [(EntryKind::Param, store.params()), (EntryKind::Buffer, store.buffers())] {
            for p in list {
                let mut t = Tensor::new(p.tensor.shape().to_vec(), p.tensor.data().to_vec()).expect("valid tensor");
                t.requires_grad = kind == EntryKind::Param;
                entries.push(Entry {
                    kind,
                    name: p.name.clone(),
                    tensor: t,
                });
            }
        }
        Self { meta, entries }
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    /// Number of stored trainable scalars.
    pub fn param_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.kind == EntryKind::Param)
            .map(|e| e.tensor.len())
            .sum()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut header = format!("{MAGIC}\n");
        for (k, v) in &self.meta {
            if k.contains(['=', '\n', ' ']) || v.contains('\n') {
                return Err(Error::Argument(format!("checkpoint metadata key/value '{k}' not representable")));
            }
            header.push_str(&format!("meta {k}={v}\n"));
        }
        for e in &self.entries {
            let kind = match e.kind {
                EntryKind::Param => "param",
                EntryKind::Buffer => "buffer",
            };
            header.push_str(&format!("{kind} {} {}\n", e.name, shape_str(e.tensor.shape())));
        }
        header.push_str("end\n");
        let mut out = header.into_bytes();
        for e in &self.entries {
            for &v in e.tensor.data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0;
        let mut next_line = || -> Result<String> {
            let rest = &bytes[pos..];
            let end = rest
                .iter()
                .position(|&b| b == b'\n')
                .ok_or_else(|| Error::Format("truncated checkpoint header".into()))?;
            pos += end + 1;
            String::from_utf8(rest[..end].to_vec()).map_err(|_| Error::Format("non-UTF-8 checkpoint header".into()))
        };
        if next_line()? != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let mut meta = Vec::new();
        let mut layout = Vec::new();
        loop {
            let line = next_line()?;
            if line == "end" {
                break;
            }
            let mut parts = line.splitn(2, ' ');
            let tag = parts.next().unwrap_or("");
            let rest = parts.next().unwrap_or("");
            match tag {
                "meta" => {
                    let (k, v) = rest
                        .split_once('=')
                        .ok_or_else(|| Error::Format(format!("bad metadata line '{line}'")))?;
                    meta.push((k.to_string(), v.to_string()));
                }
                "param" | "buffer" => {
                    let (name, shape) = rest
                        .rsplit_once(' ')
                        .ok_or_else(|| Error::Format(format!("bad entry line '{line}'")))?;
                    let kind = if tag == "param" { EntryKind::Param } else { EntryKind::Buffer };
                    layout.push((kind, name.to_string(), parse_shape(shape)?));
                }
                _ => return Err(Error::Format(format!("unknown checkpoint line '{line}'"))),
            }
        }
        let mut payload = bytes[pos..].chunks_exact(4);
        let mut entries = Vec::with_capacity(layout.len());
        for (kind, name, shape) in layout {
            let n: usize = shape.iter().product();
            let data: Vec<f64> = payload
                .by_ref()
                .take(n)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect();
            if data.len() != n {
                return Err(Error::Format(format!("payload truncated in '{name}'")));
            }
            let mut tensor = Tensor::new(shape, data)?;
            tensor.requires_grad = kind == EntryKind::Param;
            entries.push(Entry { kind, name, tensor });
        }
        if payload.next().is_some() || !payload.remainder().is_empty() {
            return Err(Error::Format("trailing bytes after checkpoint payload".into()));
        }
        Ok(Self { meta, entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }

    /// Copies every stored tensor into the same-named slot of `store`.
    /// Names and shapes must match exactly.
    pub fn restore_into(&self, store: &mut ParamStore) -> Result<()> {
        let expected = store.params().len() + store.buffers().len();
        if self.entries.len() != expected {
            return Err(Error::Format(format!(
                "checkpoint holds {} tensors, model has {expected}",
                self.entries.len()
            )));
        }
        for e in &self.entries {
            let slot = match e.kind {
                EntryKind::Param => store.params_mut().iter_mut().find(|p| p.name == e.name),
                EntryKind::Buffer => store.buffers_mut().iter_mut().find(|p| p.name == e.name),
            }
            .ok_or_else(|| Error::Format(format!("model has no tensor '{}'", e.name)))?;
            if slot.tensor.shape() != e.tensor.shape() {
                return Err(Error::Format(format!(
                    "'{}': checkpoint shape {:?}, model shape {:?}",
                    e.name,
                    e.tensor.shape(),
                    slot.tensor.shape()
                )));
            }
            slot.tensor.data_mut().copy_from_slice(e.tensor.data());
        }
        Ok(())
    }
}
