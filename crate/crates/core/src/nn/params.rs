use std::collections::HashMap;

use candle_core::{Tensor, Var};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{device, DTYPE};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub enum Init {
    Normal(f64),
    Zeros,
    Ones,
}

/// Where parameter values come from when a model is constructed.
pub enum Source<'a> {
    Init(&'a mut ChaCha8Rng),
    Load(&'a HashMap<String, Tensor>),
}

/// Named trainable parameters in registration order.
#[derive(Debug, Clone, Default)]
pub struct Params {
    entries: Vec<(String, Var)>,
}

impl Params {
    pub fn take(&mut self, src: &mut Source<'_>, name: &str, shape: &[usize], init: Init) -> Result<Var> {
        let tensor = match src {
            Source::Init(rng) => {
                let n: usize = shape.iter().product();
                let data: Vec<f64> = match init {
                    Init::Zeros => vec![0.0; n],
                    Init::Ones => vec![1.0; n],
                    Init::Normal(std) => {
                        let dist = Normal::new(0.0, std).map_err(|e| Error::Config(e.to_string()))?;
                        (0..n).map(|_| dist.sample(*rng)).collect()
                    }
                };
                Tensor::from_vec(data, shape, &device())?
            }
            Source::Load(map) => {
                let t = map
                    .get(name)
                    .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
                if t.dims() != shape {
                    return Err(Error::Checkpoint(format!(
                        "tensor {name} has shape {:?}, expected {shape:?}",
                        t.dims()
                    )));
                }
                t.to_dtype(DTYPE)?.copy()?
            }
        };
        let var = Var::from_tensor(&tensor)?;
        self.entries.push((name.to_string(), var.clone()));
        Ok(var)
    }

    pub fn vars(&self) -> Vec<Var> {
        self.entries.iter().map(|(_, v)| v.clone()).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Var)> {
        self.entries.iter().map(|(n, v)| (n.as_str(), v))
    }

    pub fn num_parameters(&self) -> usize {
        self.entries.iter().map(|(_, v)| v.elem_count()).sum()
    }

    pub fn tensors_copy(&self) -> Result<HashMap<String, Tensor>> {
        self.entries
            .iter()
            .map(|(n, v)| Ok((n.clone(), v.as_tensor().copy()?)))
            .collect()
    }

    /// All parameter values flattened in registration order.
    pub fn flatten(&self) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.num_parameters());
        for (_, v) in &self.entries {
            out.extend(v.as_tensor().flatten_all()?.to_vec1::<f64>()?);
        }
        Ok(out)
    }

    /// Overwrites parameters from a flat vector laid out as in [`Params::flatten`].
    pub fn assign_flat(&self, values: &[f64]) -> Result<()> {
        if values.len() != self.num_parameters() {
            return Err(Error::invalid("flat parameter vector has the wrong length"));
        }
        let mut offset = 0;
        for (_, v) in &self.entries {
            let n = v.elem_count();
            let t = Tensor::from_slice(&values[offset..offset + n], v.dims(), &device())?;
            v.set(&t)?;
            offset += n;
        }
        Ok(())
    }
}
