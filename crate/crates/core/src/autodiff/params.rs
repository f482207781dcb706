use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use super::tensor::Tensor;
use crate::error::{invalid, Error, Result};
use crate::math;

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    shape: Vec<usize>,
    values: Vec<f64>,
    adam_m: Vec<f64>,
    adam_v: Vec<f64>,
}

impl ParamEntry {
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Named trainable arrays with their Adam moments.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParameterSet {
    entries: Vec<ParamEntry>,
    pub step_count: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a parameter; returns its index.
    pub fn insert(&mut self, name: &str, t: Tensor) -> Result<usize> {
        if self.index_of(name).is_some() {
            return Err(invalid(format!("duplicate parameter name {name:?}")));
        }
        let shape = t.shape().to_vec();
        let values = t.into_data();
        let n = values.len();
        self.entries.push(ParamEntry {
            name: name.to_string(),
            shape,
            values,
            adam_m: vec![0.0; n],
            adam_v: vec![0.0; n],
        });
        Ok(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.name == name)
    }

    pub fn entry(&self, idx: usize) -> &ParamEntry {
        &self.entries[idx]
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn get(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn numel(&self, idx: usize) -> usize {
        self.entries[idx].values.len()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.values.len()).sum()
    }

    pub fn tensor(&self, idx: usize) -> Tensor {
        let e = &self.entries[idx];
        Tensor::new(&e.shape, e.values.clone()).expect("entry shape is consistent")
    }

    pub fn values_mut(&mut self, idx: usize) -> &mut [f64] {
        &mut self.entries[idx].values
    }

    /// Replaces the values of `name`, keeping its shape.
    pub fn set_values(&mut self, name: &str, values: &[f64]) -> Result<()> {
        let idx = self
            .index_of(name)
            .ok_or_else(|| invalid(format!("unknown parameter {name:?}")))?;
        let e = &mut self.entries[idx];
        if e.values.len() != values.len() {
            return Err(Error::ShapeMismatch {
                op: "set_values",
                lhs: e.shape.clone(),
                rhs: vec![values.len()],
            });
        }
        e.values.copy_from_slice(values);
        Ok(())
    }

    fn check_grads(&self, grads: &[Vec<f64>]) -> Result<()> {
        if grads.len() != self.entries.len() {
            return Err(invalid(format!(
                "{} gradient arrays for {} parameters",
                grads.len(),
                self.entries.len()
            )));
        }
        for (e, g) in self.entries.iter().zip(grads) {
            if g.len() != e.values.len() {
                return Err(Error::ShapeMismatch {
                    op: "adam_step",
                    lhs: e.shape.clone(),
                    rhs: vec![g.len()],
                });
            }
        }
        Ok(())
    }

    /// One bias-corrected Adam update.
    pub fn adam_step(&mut self, grads: &[Vec<f64>], cfg: &AdamConfig) -> Result<()> {
        self.check_grads(grads)?;
        self.step_count += 1;
        let t = self.step_count as f64;
        let c1 = 1.0 - math::powf(cfg.beta1, t);
        let c2 = 1.0 - math::powf(cfg.beta2, t);
        for (e, g) in self.entries.iter_mut().zip(grads) {
            for i in 0..g.len() {
                let gi = g[i];
                e.adam_m[i] = cfg.beta1 * e.adam_m[i] + (1.0 - cfg.beta1) * gi;
                e.adam_v[i] = cfg.beta2 * e.adam_v[i] + (1.0 - cfg.beta2) * gi * gi;
                let m_hat = e.adam_m[i] / c1;
                let v_hat = e.adam_v[i] / c2;
                e.values[i] -= cfg.lr * m_hat / (math::sqrt(v_hat) + cfg.eps);
            }
        }
        Ok(())
    }
}

/// Central-difference gradient of `f` with respect to every scalar in `params`.
pub fn finite_diff_gradient(
    mut f: impl FnMut(&ParameterSet) -> f64,
    params: &ParameterSet,
    step: f64,
) -> Vec<Vec<f64>> {
    let mut work = params.clone();
    let mut out = Vec::with_capacity(params.len());
    for idx in 0..params.len() {
        let mut g = vec![0.0; params.numel(idx)];
        for (j, gj) in g.iter_mut().enumerate() {
            let orig = work.entries[idx].values[j];
            work.entries[idx].values[j] = orig + step;
            let fp = f(&work);
            work.entries[idx].values[j] = orig - step;
            let fm = f(&work);
            work.entries[idx].values[j] = orig;
            *gj = (fp - fm) / (2.0 * step);
        }
        out.push(g);
    }
    out
}
