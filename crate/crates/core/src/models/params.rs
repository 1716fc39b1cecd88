use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, Mutex};

use candle_core::{DType, Device, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub enum Init {
    Zeros,
    Ones,
    /// He-normal with the given fan (std = sqrt(2 / fan)).
    KaimingNormal { fan: usize },
    Uniform { bound: f64 },
}

#[derive(Default)]
struct Inner {
    vars: BTreeMap<String, Var>,
    frozen: BTreeSet<String>,
}

/// Named parameter registry. Every tensor is initialized from its own
/// ChaCha stream derived from the store seed and the parameter name, so
/// initial weights do not depend on construction order.
#[derive(Clone)]
pub struct ParamStore {
    inner: Arc<Mutex<Inner>>,
    seed: u64,
    dtype: DType,
    device: Device,
}

fn name_hash(name: &str) -> u64 {
    // FNV-1a
    name.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3))
}

impl ParamStore {
    pub fn new(seed: u64, dtype: DType) -> Self {
        ParamStore {
            inner: Arc::default(),
            seed,
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

    fn make(&self, name: &str, shape: &[usize], init: Init) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ name_hash(name));
        let data: Vec<f64> = match init {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::KaimingNormal { fan } => {
                let d = Normal::new(0.0, (2.0 / fan.max(1) as f64).sqrt()).map_err(|e| Error::Config(e.to_string()))?;
                (0..n).map(|_| d.sample(&mut rng)).collect()
            }
            Init::Uniform { bound } => {
                let d = Uniform::new_inclusive(-bound, bound).map_err(|e| Error::Config(e.to_string()))?;
                (0..n).map(|_| d.sample(&mut rng)).collect()
            }
        };
        Ok(Tensor::from_vec(data, shape, &self.device)?.to_dtype(self.dtype)?)
    }

    /// Returns the parameter `name`, creating it on first use.
    pub fn get(&self, name: &str, shape: &[usize], init: Init) -> Result<Tensor> {
        self.get_var(name, shape, init, true)
    }

    /// Like [`get`](Self::get) but excluded from optimization (running
    /// statistics and the like).
    pub fn get_buffer(&self, name: &str, shape: &[usize], init: Init) -> Result<Var> {
        self.get_var(name, shape, init, false)?;
        let inner = self.inner.lock().expect("parameter store poisoned");
        Ok(inner.vars[name].clone())
    }

    fn get_var(&self, name: &str, shape: &[usize], init: Init, trainable: bool) -> Result<Tensor> {
        let mut inner = self.inner.lock().expect("parameter store poisoned");
        if let Some(v) = inner.vars.get(name) {
            if v.dims() != shape {
                return Err(Error::Shape(format!("parameter {name}: {:?} vs requested {shape:?}", v.dims())));
            }
            return Ok(v.as_tensor().clone());
        }
        let var = Var::from_tensor(&self.make(name, shape, init)?)?;
        let t = var.as_tensor().clone();
        inner.vars.insert(name.to_string(), var);
        if !trainable {
            inner.frozen.insert(name.to_string());
        }
        Ok(t)
    }

    /// Trainable parameters in name order.
    pub fn trainable(&self) -> Vec<(String, Var)> {
        let inner = self.inner.lock().expect("parameter store poisoned");
        inner
            .vars
            .iter()
            .filter(|(k, _)| !inner.frozen.contains(*k))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }

    /// Every registered tensor, trainable or not, in name order.
    pub fn all(&self) -> Vec<(String, Var)> {
        let inner = self.inner.lock().expect("parameter store poisoned");
        inner.vars.iter().map(|(k, v)| (k.clone(), v.clone())).collect()
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("parameter store poisoned").vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn parameter_count(&self) -> usize {
        self.trainable().iter().map(|(_, v)| v.elem_count()).sum()
    }

    /// Overwrites every registered tensor from `tensors`. All names must be
    /// present with matching shapes; extra entries are ignored.
    pub fn load(&self, tensors: &BTreeMap<String, Tensor>) -> Result<()> {
        let inner = self.inner.lock().expect("parameter store poisoned");
        for (name, var) in &inner.vars {
            let t = tensors
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
            if t.dims() != var.dims() {
                return Err(Error::Checkpoint(format!(
                    "tensor {name} has shape {:?}, model expects {:?}",
                    t.dims(),
                    var.dims()
                )));
            }
            var.set(&t.to_dtype(self.dtype)?)?;
        }
        Ok(())
    }

    pub fn snapshot(&self) -> Result<BTreeMap<String, Tensor>> {
        let inner = self.inner.lock().expect("parameter store poisoned");
        inner
            .vars
            .iter()
            .map(|(k, v)| Ok((k.clone(), v.as_tensor().copy()?)))
            .collect()
    }
}

/// Prefixed view into a [`ParamStore`].
#[derive(Clone)]
pub struct Scope {
    store: ParamStore,
    prefix: String,
}

impl Scope {
    pub fn root(store: &ParamStore, prefix: &str) -> Self {
        Scope {
            store: store.clone(),
            prefix: prefix.to_string(),
        }
    }

    pub fn sub(&self, name: impl std::fmt::Display) -> Scope {
        Scope {
            store: self.store.clone(),
            prefix: format!("{}.{}", self.prefix, name),
        }
    }

    fn path(&self, name: &str) -> String {
        format!("{}.{}", self.prefix, name)
    }

    pub fn get(&self, name: &str, shape: &[usize], init: Init) -> Result<Tensor> {
        self.store.get(&self.path(name), shape, init)
    }

    pub fn get_buffer(&self, name: &str, shape: &[usize], init: Init) -> Result<Var> {
        self.store.get_buffer(&self.path(name), shape, init)
    }
}
