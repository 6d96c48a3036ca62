use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::backprop::GradStore;
use candle_core::{Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam over a fixed, named set of variables with checkpointable moments.
pub struct Adam {
    pub config: AdamConfig,
    vars: BTreeMap<String, Var>,
    moments: BTreeMap<String, (Tensor, Tensor)>,
    step: u64,
}

impl Adam {
    pub fn new(vars: BTreeMap<String, Var>, config: AdamConfig) -> Result<Self> {
        let mut moments = BTreeMap::new();
        for (name, v) in &vars {
            let z = v.as_tensor().zeros_like()?;
            moments.insert(name.clone(), (z.clone(), z));
        }
        Ok(Self {
            config,
            vars,
            moments,
            step: 0,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn vars(&self) -> &BTreeMap<String, Var> {
        &self.vars
    }

    /// Applies one update; variables without a gradient are left untouched.
    pub fn step(&mut self, grads: &GradStore) -> Result<()> {
        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step as i32;
        let lr_t = learning_rate * (1.0 - beta2.powi(t)).sqrt() / (1.0 - beta1.powi(t));
        for (name, var) in &self.vars {
            let Some(g) = grads.get(var.as_tensor()) else {
                continue;
            };
            // Detached so moments never hold on to the backward graph.
            let g = g.detach();
            let (m, v) = self.moments.get_mut(name).expect("moment per var");
            *m = ((&*m * beta1)? + (&g * (1.0 - beta1))?)?.detach();
            *v = ((&*v * beta2)? + (g.sqr()? * (1.0 - beta2))?)?.detach();
            let update = (&*m / (v.sqrt()? + eps)?)?;
            var.set(&(var.as_tensor().detach() - (update * lr_t)?)?)?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut map = HashMap::new();
        for (name, (m, v)) in &self.moments {
            map.insert(format!("m.{name}"), m.clone());
            map.insert(format!("v.{name}"), v.clone());
        }
        candle_core::safetensors::save(&map, path)
            .map_err(|e| Error::Checkpoint(format!("saving {}: {e}", path.display())))
    }

    pub fn load(&mut self, path: &Path, step: u64) -> Result<()> {
        let device = self
            .vars
            .values()
            .next()
            .map(|v| v.device().clone())
            .unwrap_or(candle_core::Device::Cpu);
        let map = candle_core::safetensors::load(path, &device)
            .map_err(|e| Error::Checkpoint(format!("loading {}: {e}", path.display())))?;
        for (name, (m, v)) in self.moments.iter_mut() {
            let get = |k: String| {
                map.get(&k)
                    .cloned()
                    .ok_or_else(|| Error::Checkpoint(format!("optimizer state lacks `{k}`")))
            };
            let (nm, nv) = (get(format!("m.{name}"))?, get(format!("v.{name}"))?);
            if nm.dims() != m.dims() || nv.dims() != v.dims() {
                return Err(Error::Checkpoint(format!("optimizer state shape mismatch for `{name}`")));
            }
            *m = nm.to_dtype(m.dtype())?;
            *v = nv.to_dtype(v.dtype())?;
        }
        self.step = step;
        Ok(())
    }
}
