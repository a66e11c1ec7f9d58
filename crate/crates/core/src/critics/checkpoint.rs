//! JSON parameter checkpoints.
//!
//! A checkpoint is a flat list of `{name, shape, values}` records, values
//! row-major. Records follow layer order, each layer's `weight` before its
//! `bias`: `layer0.weight, layer0.bias, layer1.weight, ...`.

use super::Critic;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedParam {
    pub name: String,
    pub shape: [usize; 2],
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub params: Vec<NamedParam>,
}

impl Checkpoint {
    pub fn from_critic(critic: &Critic) -> Self {
        let params = critic
            .param_names()
            .into_iter()
            .zip(critic.params())
            .map(|(name, p)| NamedParam {
                name,
                shape: [p.rows(), p.cols()],
                values: p.as_slice().to_vec(),
            })
            .collect();
        Self { params }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Copies the stored values into `critic`, which must have the same
    /// parameter names and shapes.
    pub fn restore_into(&self, critic: &mut Critic) -> Result<()> {
        let names = critic.param_names();
        if names.len() != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "{} stored parameters, critic has {}",
                self.params.len(),
                names.len()
            )));
        }
        for ((stored, name), p) in self.params.iter().zip(&names).zip(critic.params()) {
            if &stored.name != name || stored.shape != [p.rows(), p.cols()] {
                return Err(Error::Checkpoint(format!(
                    "expected {name} {:?}, found {} {:?}",
                    [p.rows(), p.cols()],
                    stored.name,
                    stored.shape
                )));
            }
            if stored.values.len() != p.len() {
                return Err(Error::Checkpoint(format!("{name}: wrong value count")));
            }
        }
        for (stored, p) in self.params.iter().zip(critic.params_mut()) {
            p.as_mut_slice().copy_from_slice(&stored.values);
        }
        Ok(())
    }
}
