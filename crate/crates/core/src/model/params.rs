//! Named, deterministically initialized trainable parameters.

use std::collections::BTreeMap;

use candle_core::{DType, Shape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, StandardNormal};

use crate::{device, Error, Result};

/// How a parameter is initialized.
#[derive(Clone, Debug)]
pub enum Init {
    Uniform(f64),
    Normal(f64),
    Const(f64),
    /// Dirac kernel for a square `C×C×k×k` convolution: the centre tap of
    /// channel `c → c` is `gain`, everything else zero.
    Dirac(f64),
    /// First `n` entries zero, the rest the given constant.
    SplitConst { head: usize, tail_value: f64 },
}

/// 64-bit FNV-1a, used to derive a per-parameter seed from its name.
fn fnv1a(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Owns the trainable variables of one network, keyed by dotted name
/// (`<network>.<stage>.<layer>.<param>`).
///
/// Initial values depend only on the store seed and the parameter name, not
/// on construction order.
#[derive(Debug)]
pub struct ParamStore {
    vars: BTreeMap<String, Var>,
    dtype: DType,
    seed: u64,
}

impl ParamStore {
    pub fn new(dtype: DType, seed: u64) -> Self {
        Self {
            vars: BTreeMap::new(),
            dtype,
            seed,
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    /// Creates a parameter. Names must be unique within the store.
    pub fn create(&mut self, name: String, shape: impl Into<Shape>, init: Init) -> Result<Tensor> {
        if self.vars.contains_key(&name) {
            return Err(Error::InvalidArgument(format!("duplicate parameter {name}")));
        }
        let shape: Shape = shape.into();
        let n = shape.elem_count();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(self.seed ^ fnv1a(&name));
        let values: Vec<f64> = match init {
            Init::Uniform(bound) => (0..n).map(|_| rng.random_range(-bound..bound)).collect(),
            Init::Normal(std) => (0..n)
                .map(|_| {
                    let v: f64 = StandardNormal.sample(&mut rng);
                    v * std
                })
                .collect(),
            Init::Const(c) => vec![c; n],
            Init::Dirac(gain) => {
                let dims = shape.dims();
                let (co, ci, kh, kw) = match dims {
                    [a, b, c, d] if a == b && c == d && c % 2 == 1 => (*a, *b, *c, *d),
                    _ => return Err(Error::shape("dirac init", "C×C×k×k (k odd)", format!("{dims:?}"))),
                };
                let mut v = vec![0.0; n];
                for c in 0..co {
                    v[((c * ci + c) * kh + kh / 2) * kw + kw / 2] = gain;
                }
                v
            }
            Init::SplitConst { head, tail_value } => {
                (0..n).map(|i| if i < head { 0.0 } else { tail_value }).collect()
            }
        };
        let t = Tensor::from_vec(values, shape, &device())?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        let tensor = var.as_tensor().clone();
        self.vars.insert(name, var);
        Ok(tensor)
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    /// Parameters in name order.
    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }

    /// Overwrites every parameter from `tensors`; all names must be present
    /// with matching shapes.
    pub fn load(&self, tensors: &std::collections::HashMap<String, Tensor>) -> Result<()> {
        for (name, var) in &self.vars {
            let t = tensors
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
            if t.dims() != var.dims() {
                return Err(Error::Checkpoint(format!(
                    "parameter {name}: expected shape {:?}, found {:?}",
                    var.dims(),
                    t.dims()
                )));
            }
            var.set(&t.to_dtype(self.dtype)?)?;
        }
        Ok(())
    }

    /// Order-sensitive digest of all parameter bits, for change detection.
    pub fn fingerprint(&self) -> Result<u64> {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for (name, var) in &self.vars {
            h ^= fnv1a(name);
            let values = var.as_tensor().flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?;
            for v in values {
                h = (h ^ v.to_bits()).wrapping_mul(0x0100_0000_01b3);
            }
        }
        Ok(h)
    }
}

/// Counts trainable scalars. Equivalent to [`ParamStore::count`].
pub fn count_params(store: &ParamStore) -> usize {
    store.count()
}
