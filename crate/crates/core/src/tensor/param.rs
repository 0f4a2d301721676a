use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::Tensor;
use crate::error::{Error, Result};

pub const PARAM_FILE_MAGIC: &[u8; 4] = b"TFW1";
pub const PARAM_FILE_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How a parameter is filled by [`Params::initialize`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Zeros,
    /// Normal(0, sqrt(2 / fan_in)).
    He { fan_in: usize },
    /// Uniform(-bound, bound).
    Uniform { bound: f64 },
    /// Normal(0, std).
    Normal { std: f64 },
}

#[derive(Clone, Debug, Default)]
pub struct Params {
    names: Vec<String>,
    values: Vec<Tensor>,
    inits: Vec<Init>,
    decay: Vec<bool>,
    lookup: HashMap<String, usize>,
}

impl Params {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.lookup.get(name).copied().map(ParamId)
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    /// Whether L2 regularisation applies to this parameter.
    pub fn decays(&self, id: ParamId) -> bool {
        self.decay[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    /// Total number of learnable scalars.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// Draws every parameter from its registered initializer.
    pub fn initialize<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        for (value, init) in self.values.iter_mut().zip(&self.inits) {
            match *init {
                Init::Zeros => value.fill(0.0),
                Init::He { fan_in } => {
                    let std = (2.0 / fan_in.max(1) as f64).sqrt();
                    let normal = Normal::new(0.0, std).expect("finite std");
                    value.data_mut().iter_mut().for_each(|v| *v = normal.sample(rng));
                }
                Init::Normal { std } => {
                    let normal = Normal::new(0.0, std).expect("finite std");
                    value.data_mut().iter_mut().for_each(|v| *v = normal.sample(rng));
                }
                Init::Uniform { bound } => value
                    .data_mut()
                    .iter_mut()
                    .for_each(|v| *v = rng.random_range(-bound..=bound)),
            }
        }
    }
}

/// Gradient buffers aligned one-to-one with a [`Params`] set.
#[derive(Clone, Debug)]
pub struct Gradients {
    values: Vec<Tensor>,
}

impl Gradients {
    pub fn zeros_like(params: &Params) -> Self {
        Self {
            values: params.values.iter().map(Tensor::zeros_like).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn zero(&mut self) {
        self.values.iter_mut().for_each(|g| g.fill(0.0));
    }

    pub fn accumulate(&mut self, other: &Gradients) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            a.add_assign(b).expect("gradient sets share a layout");
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.values.iter_mut().for_each(|g| g.scale(factor));
    }

    pub fn l2_norm(&self) -> f64 {
        self.values
            .iter()
            .flat_map(|g| g.data())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Slot {
    pub first: Tensor,
    pub second: Tensor,
}

/// Learnable parameters, their gradients and optimizer state.
///
/// The three parts are separate fields so a backward pass can read
/// `params` while writing `grads`.
#[derive(Clone, Debug)]
pub struct ParamStore {
    pub params: Params,
    pub grads: Gradients,
    pub(crate) slots: Vec<Slot>,
    pub(crate) adam_steps: u64,
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self {
            params: Params::default(),
            grads: Gradients { values: Vec::new() },
            slots: Vec::new(),
            adam_steps: 0,
        }
    }

    /// Adds a zero-filled parameter. Panics on a duplicate name.
    pub fn register(&mut self, name: &str, shape: &[usize], init: Init, decay: bool) -> ParamId {
        assert!(
            !self.params.lookup.contains_key(name),
            "duplicate parameter name {name:?}"
        );
        let id = self.params.values.len();
        let value = Tensor::zeros(shape);
        self.grads.values.push(value.zeros_like());
        self.slots.push(Slot {
            first: value.zeros_like(),
            second: value.zeros_like(),
        });
        self.params.values.push(value);
        self.params.names.push(name.to_string());
        self.params.inits.push(init);
        self.params.decay.push(decay);
        self.params.lookup.insert(name.to_string(), id);
        ParamId(id)
    }

    pub fn zero_grads(&mut self) {
        self.grads.zero();
    }

    pub fn reset_optimizer(&mut self) {
        for slot in &mut self.slots {
            slot.first.fill(0.0);
            slot.second.fill(0.0);
        }
        self.adam_steps = 0;
    }

    /// Copies every parameter whose name starts with `prefix` from `other`.
    /// Returns how many tensors were copied.
    pub fn copy_prefix_from(&mut self, other: &Params, prefix: &str) -> Result<usize> {
        let mut copied = 0;
        for (name, value) in other.iter().filter(|(n, _)| n.starts_with(prefix)) {
            let id = self
                .params
                .id(name)
                .ok_or_else(|| Error::Dimension(format!("no parameter named {name:?}")))?;
            let dst = self.params.get_mut(id);
            dst.expect_shape(value.shape())?;
            dst.data_mut().copy_from_slice(value.data());
            copied += 1;
        }
        Ok(copied)
    }

    /// Serializes all parameters as little-endian f32 records.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(PARAM_FILE_MAGIC)?;
        w.write_all(&PARAM_FILE_VERSION.to_le_bytes())?;
        for (name, value) in self.params.iter() {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(value.rank() as u32).to_le_bytes())?;
            for &extent in value.shape() {
                w.write_all(&(extent as u64).to_le_bytes())?;
            }
            for &v in value.data() {
                w.write_all(&(v as f32).to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::from(e).at(path))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    /// Overwrites parameter values from serialized records. Every stored
    /// parameter must be present in the file with an identical shape.
    pub fn load_from<R: Read>(&mut self, r: R) -> Result<()> {
        let records = read_param_records(r)?;
        let mut seen = vec![false; self.params.len()];
        for (name, tensor) in records {
            let id = self
                .params
                .id(&name)
                .ok_or_else(|| Error::Format(format!("unexpected parameter {name:?}")))?;
            let dst = self.params.get_mut(id);
            if dst.shape() != tensor.shape() {
                return Err(Error::Format(format!(
                    "parameter {name:?}: file shape {:?}, model shape {:?}",
                    tensor.shape(),
                    dst.shape()
                )));
            }
            *dst = tensor;
            seen[id.0] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::Format(format!(
                "parameter {:?} missing from file",
                self.params.names[missing]
            )));
        }
        Ok(())
    }

    pub fn load(&mut self, path: &Path) -> Result<()> {
        let file = std::fs::File::open(path).map_err(|e| Error::from(e).at(path))?;
        self.load_from(std::io::BufReader::new(file))
            .map_err(|e| e.at(path))
    }
}

/// Reads every `(name, tensor)` record of a parameter file.
pub fn read_param_records<R: Read>(mut r: R) -> Result<Vec<(String, Tensor)>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Format("truncated header".into()))?;
    if &magic != PARAM_FILE_MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}")));
    }
    let version = read_u32(&mut r)?.ok_or_else(|| Error::Format("truncated header".into()))?;
    if version != PARAM_FILE_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }

    let mut records = Vec::new();
    while let Some(name_len) = read_u32(&mut r)? {
        let mut name = vec![0u8; name_len as usize];
        read_exact(&mut r, &mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Format("parameter name is not UTF-8".into()))?;
        let rank = read_u32(&mut r)?.ok_or_else(|| truncated(&name))? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let mut b = [0u8; 8];
            read_exact(&mut r, &mut b)?;
            shape.push(u64::from_le_bytes(b) as usize);
        }
        let n: usize = shape.iter().product();
        let mut raw = vec![0u8; n * 4];
        read_exact(&mut r, &mut raw)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        let tensor = Tensor::new(&shape, data).map_err(|e| Error::Format(format!("{name}: {e}")))?;
        records.push((name, tensor));
    }
    Ok(records)
}

fn truncated(name: &str) -> Error {
    Error::Format(format!("record {name:?} is truncated"))
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::Format("unexpected end of file".into()))
}

/// `None` at a clean end of file.
fn read_u32<R: Read>(r: &mut R) -> Result<Option<u32>> {
    let mut b = [0u8; 4];
    let mut filled = 0;
    while filled < 4 {
        let n = r.read(&mut b[filled..])?;
        if n == 0 {
            return if filled == 0 {
                Ok(None)
            } else {
                Err(Error::Format("unexpected end of file".into()))
            };
        }
        filled += n;
    }
    Ok(Some(u32::from_le_bytes(b)))
}
