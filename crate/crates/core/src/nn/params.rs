use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::{DType, Device, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Named trainable variables plus non-trainable state buffers, initialized
/// from a seeded generator so that model construction is reproducible.
pub struct ParamStore {
    vars: BTreeMap<String, Var>,
    buffers: BTreeMap<String, Var>,
    rng: ChaCha8Rng,
    dtype: DType,
    device: Device,
}

impl ParamStore {
    pub fn new(seed: u64, dtype: DType, device: &Device) -> Self {
        Self {
            vars: BTreeMap::new(),
            buffers: BTreeMap::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            dtype,
            device: device.clone(),
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    fn check_free(&self, name: &str) -> Result<()> {
        if self.vars.contains_key(name) || self.buffers.contains_key(name) {
            return Err(Error::Contract(format!("parameter `{name}` registered twice")));
        }
        Ok(())
    }

    fn sample_normal(&mut self, n: usize, std: f64) -> Vec<f64> {
        let dist = Normal::new(0.0, std).expect("finite std");
        (0..n).map(|_| dist.sample(&mut self.rng)).collect()
    }

    /// Registers a trainable tensor drawn from `N(0, std²)`.
    pub fn normal(&mut self, name: &str, shape: &[usize], std: f64) -> Result<Var> {
        self.check_free(name)?;
        let data = self.sample_normal(shape.iter().product(), std);
        let t = Tensor::from_vec(data, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        self.vars.insert(name.to_string(), var.clone());
        Ok(var)
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f64) -> Result<Var> {
        self.check_free(name)?;
        let t = Tensor::full(value, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        self.vars.insert(name.to_string(), var.clone());
        Ok(var)
    }

    /// Registers a non-trainable buffer with a random unit-norm initial value.
    pub fn unit_buffer(&mut self, name: &str, len: usize) -> Result<Var> {
        self.check_free(name)?;
        let mut data = self.sample_normal(len, 1.0);
        let norm = data.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        data.iter_mut().for_each(|x| *x /= norm);
        let t = Tensor::from_vec(data, len, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        self.buffers.insert(name.to_string(), var.clone());
        Ok(var)
    }

    /// Trainable variables in name order.
    pub fn trainable(&self) -> &BTreeMap<String, Var> {
        &self.vars
    }

    pub fn buffers(&self) -> &BTreeMap<String, Var> {
        &self.buffers
    }

    pub fn num_parameters(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }

    /// All tensors keyed by name (buffers under `buffer.` prefix).
    pub fn tensors(&self) -> HashMap<String, Tensor> {
        let mut out: HashMap<String, Tensor> = self
            .vars
            .iter()
            .map(|(k, v)| (k.clone(), v.as_tensor().clone()))
            .collect();
        for (k, v) in &self.buffers {
            out.insert(format!("buffer.{k}"), v.as_tensor().clone());
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        candle_core::safetensors::save(&self.tensors(), path)
            .map_err(|e| Error::Checkpoint(format!("saving {}: {e}", path.display())))
    }

    /// Overwrites every registered tensor from `tensors`; names and shapes
    /// must match exactly.
    pub fn assign(&self, tensors: &HashMap<String, Tensor>) -> Result<()> {
        let expected = self.vars.len() + self.buffers.len();
        if tensors.len() != expected {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} tensors, model expects {expected}",
                tensors.len()
            )));
        }
        let entries = self
            .vars
            .iter()
            .map(|(k, v)| (k.clone(), v))
            .chain(self.buffers.iter().map(|(k, v)| (format!("buffer.{k}"), v)));
        for (name, var) in entries {
            let t = tensors
                .get(&name)
                .ok_or_else(|| Error::Checkpoint(format!("checkpoint lacks `{name}`")))?;
            if t.dims() != var.dims() {
                return Err(Error::Checkpoint(format!(
                    "`{name}`: checkpoint shape {:?}, model shape {:?}",
                    t.dims(),
                    var.dims()
                )));
            }
            var.set(&t.to_dtype(self.dtype)?.to_device(&self.device)?)?;
        }
        Ok(())
    }

    pub fn load(&self, path: &Path) -> Result<()> {
        let tensors = candle_core::safetensors::load(path, &self.device)
            .map_err(|e| Error::Checkpoint(format!("loading {}: {e}", path.display())))?;
        self.assign(&tensors)
    }

    /// Copies values from another store with identical layout.
    pub fn copy_from(&self, other: &ParamStore) -> Result<()> {
        self.assign(&other.tensors())
    }
}
