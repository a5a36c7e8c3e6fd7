//! Named trainable parameters with Adam moment buffers, and the binary
//! checkpoint container.
//!
//! Checkpoint layout: the 8 magic bytes `ICCKPT01`, a little-endian `u64`
//! byte length, a UTF-8 JSON manifest (an ordered array of
//! `{name, shape, byte_offset}`), then the raw little-endian `f64` payload.
//! Offsets are relative to the start of the payload. Adam state is stored
//! as extra entries suffixed `#adam_m` / `#adam_v`, with the step counter
//! carried in the manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tape::{Gradients, Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"ICCKPT01";

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub value: Tensor,
    pub first_moment: Tensor,
    pub second_moment: Tensor,
    pub step: u64,
}

impl ParamEntry {
    pub fn new(value: Tensor) -> Self {
        let zeros = Tensor::zeros(value.shape());
        Self {
            first_moment: zeros.clone(),
            second_moment: zeros,
            value,
            step: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: BTreeMap<String, ParamEntry>,
}

/// Parameters recorded as leaves of one tape.
#[derive(Clone, Debug)]
pub struct BoundParams<'t> {
    vars: BTreeMap<String, Var<'t>>,
}

impl<'t> BoundParams<'t> {
    pub fn get(&self, name: &str) -> Result<&Var<'t>> {
        self.vars.get(name).ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var<'t>)> {
        self.vars.iter()
    }

    /// Collects the gradient of every bound parameter.
    pub fn gradients(&self, grads: &Gradients) -> BTreeMap<String, Tensor> {
        self.vars.iter().map(|(k, v)| (k.clone(), grads.wrt(v))).collect()
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::invalid("param_store", format!("duplicate parameter `{name}`")));
        }
        self.entries.insert(name, ParamEntry::new(value));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut ParamEntry> {
        self.entries.get_mut(name)
    }

    pub fn value(&self, name: &str) -> Result<&Tensor> {
        self.entries
            .get(name)
            .map(|e| &e.value)
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn set_value(&mut self, name: &str, value: Tensor) -> Result<()> {
        let entry = self.entries.get_mut(name).ok_or_else(|| Error::MissingParam(name.to_string()))?;
        if entry.value.shape() != value.shape() {
            return Err(Error::shape("param_store", &[entry.value.shape(), value.shape()]));
        }
        entry.value = value;
        Ok(())
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &ParamEntry)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut ParamEntry)> {
        self.entries.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(|e| e.value.len()).sum()
    }

    /// Records every value as a leaf on `tape`.
    pub fn bind<'t>(&self, tape: &'t Tape) -> BoundParams<'t> {
        BoundParams {
            vars: self
                .entries
                .iter()
                .map(|(k, e)| (k.clone(), tape.leaf(e.value.clone())))
                .collect(),
        }
    }

    /// Resets Adam moments and step counters, keeping values.
    pub fn reset_optimizer_state(&mut self) {
        for e in self.entries.values_mut() {
            *e = ParamEntry::new(e.value.clone());
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, &path.display().to_string())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut manifest = Vec::new();
        let mut payload: Vec<u8> = Vec::new();
        let mut push = |name: String, t: &Tensor, step: Option<u64>, payload: &mut Vec<u8>| {
            manifest.push(ManifestEntry {
                name,
                shape: t.shape().to_vec(),
                byte_offset: payload.len() as u64,
                step,
            });
            for v in t.data() {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        };
        for (name, e) in &self.entries {
            push(name.clone(), &e.value, Some(e.step), &mut payload);
            push(format!("{name}{M_SUFFIX}"), &e.first_moment, None, &mut payload);
            push(format!("{name}{V_SUFFIX}"), &e.second_moment, None, &mut payload);
        }
        let json = serde_json::to_vec(&manifest)?;
        let mut out = Vec::with_capacity(16 + json.len() + payload.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], context: &str) -> Result<Self> {
        if bytes.len() < 16 {
            return Err(Error::format(context, bytes.len(), "truncated header"));
        }
        if &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(Error::format(context, 0, "bad magic, expected ICCKPT01"));
        }
        let json_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let payload_start = 16usize
            .checked_add(json_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| Error::format(context, 16, "manifest length exceeds file size"))?;
        let manifest: Vec<ManifestEntry> = serde_json::from_slice(&bytes[16..payload_start])
            .map_err(|e| Error::format(context, 16, format!("manifest: {e}")))?;
        let payload = &bytes[payload_start..];

        let mut tensors: BTreeMap<String, (Tensor, Option<u64>)> = BTreeMap::new();
        for m in manifest {
            let n: usize = m.shape.iter().product();
            let start = m.byte_offset as usize;
            let end = start + 8 * n;
            if end > payload.len() {
                return Err(Error::format(context, payload_start + start, format!("entry `{}` truncated", m.name)));
            }
            let data = payload[start..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let t = Tensor::new(&m.shape, data).map_err(|e| Error::format(context, payload_start + start, e.to_string()))?;
            tensors.insert(m.name, (t, m.step));
        }

        let mut store = ParamStore::new();
        let names: Vec<String> = tensors
            .keys()
            .filter(|k| !k.ends_with(M_SUFFIX) && !k.ends_with(V_SUFFIX))
            .cloned()
            .collect();
        for name in names {
            let (value, step) = tensors.remove(&name).expect("present");
            let mut entry = ParamEntry::new(value);
            entry.step = step.unwrap_or(0);
            if let Some((m, _)) = tensors.remove(&format!("{name}{M_SUFFIX}")) {
                entry.first_moment = m;
            }
            if let Some((v, _)) = tensors.remove(&format!("{name}{V_SUFFIX}")) {
                entry.second_moment = v;
            }
            if entry.first_moment.shape() != entry.value.shape() || entry.second_moment.shape() != entry.value.shape() {
                return Err(Error::format(context, payload_start, format!("moment shapes of `{name}` do not match")));
            }
            store.entries.insert(name, entry);
        }
        Ok(store)
    }
}

const M_SUFFIX: &str = "#adam_m";
const V_SUFFIX: &str = "#adam_v";

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    byte_offset: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    step: Option<u64>,
}
