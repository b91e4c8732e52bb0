//! Named, seeded parameter storage.
//!
//! Parameters are created lazily the first time a layer asks for them and are
//! initialized from a ChaCha8 stream, so two stores built with the same seed
//! and the same construction order hold bit-identical weights.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use candle_core::{DType, Device, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    Const(f64),
    /// Zero-mean normal with the given standard deviation.
    Normal(f64),
    /// He-normal for a layer with `fan_in` inputs followed by a leaky ReLU
    /// with `slope` (0 for plain ReLU).
    Kaiming {
        fan_in: usize,
        slope: f64,
    },
}

impl Init {
    fn std(&self) -> f64 {
        match *self {
            Init::Normal(s) => s,
            Init::Kaiming { fan_in, slope } => (2.0 / ((1.0 + slope * slope) * fan_in.max(1) as f64)).sqrt(),
            _ => 0.0,
        }
    }
}

struct Inner {
    vars: BTreeMap<String, Var>,
    rng: ChaCha8Rng,
}

#[derive(Clone)]
pub struct ParamStore {
    inner: Arc<Mutex<Inner>>,
    prefix: String,
    dtype: DType,
    device: Device,
}

impl std::fmt::Debug for ParamStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ParamStore").field("prefix", &self.prefix).field("dtype", &self.dtype).finish_non_exhaustive()
    }
}

impl ParamStore {
    pub fn new(seed: u64, dtype: DType) -> Self {
        Self {
            inner: Arc::new(Mutex::new(Inner { vars: BTreeMap::new(), rng: ChaCha8Rng::seed_from_u64(seed) })),
            prefix: String::new(),
            dtype,
            device: Device::Cpu,
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    /// A view whose names are nested under `name`.
    pub fn pp(&self, name: impl AsRef<str>) -> Self {
        let prefix = if self.prefix.is_empty() {
            name.as_ref().to_string()
        } else {
            format!("{}.{}", self.prefix, name.as_ref())
        };
        Self { inner: self.inner.clone(), prefix, dtype: self.dtype, device: self.device.clone() }
    }

    fn full_name(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.prefix, name)
        }
    }

    /// Returns the parameter `name`, creating it with `init` if absent.
    pub fn get(&self, name: &str, shape: &[usize], init: Init) -> Result<Tensor> {
        let key = self.full_name(name);
        let mut inner = self.inner.lock().expect("parameter store poisoned");
        if let Some(v) = inner.vars.get(&key) {
            if v.dims() != shape {
                return Err(Error::config(format!(
                    "parameter {key}: shape {:?} requested, {:?} stored",
                    shape,
                    v.dims()
                )));
            }
            return Ok(v.as_tensor().clone());
        }
        let n: usize = shape.iter().product();
        let values: Vec<f64> = match init {
            Init::Zeros => vec![0.0; n],
            Init::Const(c) => vec![c; n],
            Init::Normal(_) | Init::Kaiming { .. } => {
                let std = init.std();
                (0..n)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut inner.rng);
                        std * z
                    })
                    .collect()
            }
        };
        let t = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        let out = var.as_tensor().clone();
        inner.vars.insert(key, var);
        Ok(out)
    }

    /// All parameters sorted by name.
    pub fn named_vars(&self) -> Vec<(String, Var)> {
        let inner = self.inner.lock().expect("parameter store poisoned");
        inner.vars.iter().map(|(k, v)| (k.clone(), v.clone())).collect()
    }

    /// Parameters whose names start with `prefix`.
    pub fn vars_with_prefix(&self, prefix: &str) -> Vec<Var> {
        self.named_vars().into_iter().filter(|(k, _)| k.starts_with(prefix)).map(|(_, v)| v).collect()
    }

    pub fn all_vars(&self) -> Vec<Var> {
        self.named_vars().into_iter().map(|(_, v)| v).collect()
    }

    pub fn num_params(&self) -> usize {
        self.named_vars().iter().map(|(_, v)| v.elem_count()).sum()
    }

    /// Name to tensor snapshot, for serialization.
    pub fn tensors(&self) -> BTreeMap<String, Tensor> {
        self.named_vars().into_iter().map(|(k, v)| (k, v.as_tensor().clone())).collect()
    }

    /// Overwrites every stored parameter from `tensors`; names and shapes must
    /// match exactly.
    pub fn assign(&self, tensors: &BTreeMap<String, Tensor>) -> Result<()> {
        let named = self.named_vars();
        if named.len() != tensors.len() {
            return Err(Error::Checkpoint(format!(
                "parameter count mismatch: model has {}, checkpoint has {}",
                named.len(),
                tensors.len()
            )));
        }
        for (name, var) in named {
            let t = tensors.get(&name).ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
            if t.dims() != var.dims() {
                return Err(Error::Checkpoint(format!("parameter {name}: shape {:?} vs {:?}", t.dims(), var.dims())));
            }
            var.set(&t.to_dtype(self.dtype)?)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_weights() {
        let a = ParamStore::new(7, DType::F32);
        let b = ParamStore::new(7, DType::F32);
        let ta = a.pp("x").get("w", &[3, 4], Init::Kaiming { fan_in: 4, slope: 0.0 }).unwrap();
        let tb = b.pp("x").get("w", &[3, 4], Init::Kaiming { fan_in: 4, slope: 0.0 }).unwrap();
        let va: Vec<f32> = ta.flatten_all().unwrap().to_vec1().unwrap();
        let vb: Vec<f32> = tb.flatten_all().unwrap().to_vec1().unwrap();
        assert_eq!(va, vb);
        assert!(va.iter().any(|v| *v != 0.0));
    }

    #[test]
    fn get_is_idempotent_and_shape_checked() {
        let s = ParamStore::new(0, DType::F64);
        let a = s.get("z", &[2], Init::Zeros).unwrap();
        let b = s.get("z", &[2], Init::Normal(1.0)).unwrap();
        assert_eq!(a.to_vec1::<f64>().unwrap(), b.to_vec1::<f64>().unwrap());
        assert!(s.get("z", &[3], Init::Zeros).is_err());
        assert_eq!(s.num_params(), 2);
    }

    #[test]
    fn kaiming_scale_is_close() {
        let s = ParamStore::new(1, DType::F64);
        let t = s.get("w", &[200, 50], Init::Kaiming { fan_in: 50, slope: 0.0 }).unwrap();
        let v: Vec<f64> = t.flatten_all().unwrap().to_vec1().unwrap();
        let var = v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64;
        assert!((var - 2.0 / 50.0).abs() < 0.004, "{var}");
    }
}
