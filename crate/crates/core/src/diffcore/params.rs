use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub(crate) usize);

/// Bias-corrected Adam moments for one tensor.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub m: Array2<f64>,
    pub v: Array2<f64>,
}

impl AdamState {
    pub fn zeros(shape: (usize, usize)) -> Self {
        Self {
            m: Array2::zeros(shape),
            v: Array2::zeros(shape),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub value: Array2<f64>,
    pub grad: Array2<f64>,
    pub adam: AdamState,
}

/// Named tensors with gradient slots and persistent Adam state.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    by_name: BTreeMap<String, ParamId>,
    version: u64,
    step: u64,
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    rows: usize,
    cols: usize,
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    dtype: String,
    endianness: String,
    tensors: Vec<ManifestEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Array2<f64>) -> ParamId {
        let name = name.into();
        let id = ParamId(self.params.len());
        let shape = value.dim();
        assert!(
            self.by_name.insert(name.clone(), id).is_none(),
            "duplicate parameter name {name}"
        );
        self.params.push(Param {
            name,
            value,
            grad: Array2::zeros(shape),
            adam: AdamState::zeros(shape),
        });
        self.version += 1;
        id
    }

    /// Glorot-uniform weight matrix `fan_in x fan_out`.
    pub fn add_glorot(
        &mut self,
        name: impl Into<String>,
        fan_in: usize,
        fan_out: usize,
        rng: &mut Rng,
    ) -> ParamId {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let w = Array2::from_shape_simple_fn((fan_in, fan_out), || a * (2.0 * rng.uniform() - 1.0));
        self.add(name, w)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn value(&self, id: ParamId) -> &Array2<f64> {
        &self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Array2<f64> {
        &self.params[id.0].grad
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn set_value(&mut self, id: ParamId, value: Array2<f64>) {
        assert_eq!(value.dim(), self.params[id.0].value.dim());
        self.params[id.0].value = value;
        self.version += 1;
    }

    pub(crate) fn add_grad(&mut self, id: ParamId, g: &Array2<f64>) {
        self.params[id.0].grad += g;
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub(crate) fn bump(&mut self) {
        self.version += 1;
        self.step += 1;
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Copy of all parameter values (for best-checkpoint tracking).
    pub fn snapshot(&self) -> Vec<Array2<f64>> {
        self.params.iter().map(|p| p.value.clone()).collect()
    }

    pub fn restore(&mut self, values: &[Array2<f64>]) {
        assert_eq!(values.len(), self.params.len());
        for (p, v) in self.params.iter_mut().zip(values) {
            p.value.assign(v);
        }
        self.version += 1;
    }

    /// Writes `<stem>.bin` (flat little-endian f64, tensors in insertion
    /// order, row-major) and `<stem>.json` (names, shapes, offsets). Adam
    /// state is not persisted.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        let mut bytes = Vec::with_capacity(self.num_scalars() * 8);
        let mut tensors = Vec::new();
        let mut offset = 0;
        for p in &self.params {
            tensors.push(ManifestEntry {
                name: p.name.clone(),
                rows: p.value.nrows(),
                cols: p.value.ncols(),
                offset,
            });
            for x in p.value.iter() {
                bytes.extend_from_slice(&x.to_le_bytes());
            }
            offset += p.value.len();
        }
        let manifest = Manifest {
            dtype: "f64".into(),
            endianness: "little".into(),
            tensors,
        };
        let bin = dir.join(format!("{stem}.bin"));
        std::fs::write(&bin, bytes).map_err(|e| Error::io(&bin, e))?;
        let json = dir.join(format!("{stem}.json"));
        std::fs::write(&json, serde_json::to_vec_pretty(&manifest)?)
            .map_err(|e| Error::io(&json, e))?;
        Ok(())
    }

    /// Loads values saved by [`ParamStore::save`] into an already-built store
    /// with the same parameter names and shapes.
    pub fn load_into(&mut self, dir: &Path, stem: &str) -> Result<()> {
        let json = dir.join(format!("{stem}.json"));
        let text = std::fs::read(&json).map_err(|e| Error::io(&json, e))?;
        let manifest: Manifest = serde_json::from_slice(&text)?;
        let bin = dir.join(format!("{stem}.bin"));
        let bytes = std::fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
        if bytes.len() % 8 != 0 {
            return Err(Error::Shape(format!("{} is not a whole number of f64", bin.display())));
        }
        let flat: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        for entry in manifest.tensors {
            let id = self
                .id(&entry.name)
                .ok_or_else(|| Error::Missing(format!("parameter `{}`", entry.name)))?;
            let shape = self.value(id).dim();
            if shape != (entry.rows, entry.cols) {
                return Err(Error::Shape(format!(
                    "parameter `{}`: stored {}x{}, expected {}x{}",
                    entry.name, entry.rows, entry.cols, shape.0, shape.1
                )));
            }
            let end = entry.offset + entry.rows * entry.cols;
            let slice = flat
                .get(entry.offset..end)
                .ok_or_else(|| Error::Shape(format!("parameter `{}` out of range", entry.name)))?;
            let v = Array2::from_shape_vec(shape, slice.to_vec())
                .map_err(|e| Error::Shape(e.to_string()))?;
            self.set_value(id, v);
        }
        Ok(())
    }
}
