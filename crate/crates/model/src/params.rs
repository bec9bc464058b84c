//! Named parameter storage, the naming scheme, and initialization.

use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use hstkit_tensor::{Graph, Real, Tensor, Var};

use crate::config::HSTConfig;
use crate::error::{ModelError, Result};

/// How a parameter is initialized; derived from its role in the network.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    /// Convolution weights: uniform in ±1/sqrt(fan_in).
    ConvUniform,
    /// Attention, MLP and relative-bias tables: normal σ=0.02 truncated at 2σ.
    TruncNormal,
    Zeros,
    Ones,
}

/// Name, shape and initializer of every parameter, in store order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

fn conv(out: &mut Vec<ParamSpec>, name: &str, cin: usize, cout: usize, k: usize) {
    out.push(ParamSpec {
        name: format!("{name}.weight"),
        shape: vec![cout, cin, k, k],
        init: Init::ConvUniform,
    });
    out.push(ParamSpec {
        name: format!("{name}.bias"),
        shape: vec![cout],
        init: Init::Zeros,
    });
}

fn linear(out: &mut Vec<ParamSpec>, name: &str, din: usize, dout: usize) {
    out.push(ParamSpec {
        name: format!("{name}.weight"),
        shape: vec![dout, din],
        init: Init::TruncNormal,
    });
    out.push(ParamSpec {
        name: format!("{name}.bias"),
        shape: vec![dout],
        init: Init::Zeros,
    });
}

fn norm(out: &mut Vec<ParamSpec>, name: &str, c: usize) {
    out.push(ParamSpec {
        name: format!("{name}.weight"),
        shape: vec![c],
        init: Init::Ones,
    });
    out.push(ParamSpec {
        name: format!("{name}.bias"),
        shape: vec![c],
        init: Init::Zeros,
    });
}

/// Full parameter layout of a configuration.
///
/// Names: `<branch>.extract`, `<branch>.rstb<r>.stl<s>.{norm1,attn.qkv,attn.proj,
/// attn.rel_bias,norm2,mlp.fc1,mlp.fc2}`, `<branch>.rstb<r>.conv`,
/// `fuse.<from>_<to>.{up,conv}`, `recon.{up0,up1,out}`.
pub fn layout(cfg: &HSTConfig) -> Result<Vec<ParamSpec>> {
    cfg.validate()?;
    let mut out = Vec::new();
    let n = cfg.branches();
    let span = 2 * cfg.window - 1;
    // extraction: high k7 s1 from the image, mid k5 s2 from the image, low k3 s2 from mid
    for i in (0..n).rev() {
        let c = cfg.channels[i];
        let (cin, k) = match n - 1 - i {
            0 => (cfg.in_channels, 7),
            1 => (cfg.in_channels, 5),
            _ => (cfg.channels[i + 1], 3),
        };
        conv(&mut out, &format!("{}.extract", cfg.branch_name(i)), cin, c, k);
    }
    for i in 0..n {
        let c = cfg.channels[i];
        let b = cfg.branch_name(i);
        if i > 0 {
            let from = cfg.channels[i - 1];
            let name = format!("fuse.{}_{b}", cfg.branch_name(i - 1));
            conv(&mut out, &format!("{name}.up"), from, 4 * from, 3);
            conv(&mut out, &format!("{name}.conv"), c + from, c, 3);
        }
        for r in 0..cfg.rstbs[i] {
            for s in 0..cfg.stl_per_rstb {
                let p = format!("{b}.rstb{r}.stl{s}");
                let hidden = cfg.mlp_hidden(c);
                norm(&mut out, &format!("{p}.norm1"), c);
                linear(&mut out, &format!("{p}.attn.qkv"), c, 3 * c);
                linear(&mut out, &format!("{p}.attn.proj"), c, c);
                out.push(ParamSpec {
                    name: format!("{p}.attn.rel_bias"),
                    shape: vec![span * span, cfg.heads],
                    init: Init::TruncNormal,
                });
                norm(&mut out, &format!("{p}.norm2"), c);
                linear(&mut out, &format!("{p}.mlp.fc1"), c, hidden);
                linear(&mut out, &format!("{p}.mlp.fc2"), hidden, c);
            }
            conv(&mut out, &format!("{b}.rstb{r}.conv"), c, c, 3);
        }
    }
    let ch = cfg.high_channels();
    conv(&mut out, "recon.up0", ch, 4 * ch, 3);
    conv(&mut out, "recon.up1", ch, 4 * ch, 3);
    conv(&mut out, "recon.out", ch, cfg.out_channels, 3);
    Ok(out)
}

/// Parameter count implied by a configuration, without allocating.
pub fn count_for_config(cfg: &HSTConfig) -> Result<usize> {
    Ok(layout(cfg)?.iter().map(|p| p.shape.iter().product::<usize>()).sum())
}

/// Ordered name → tensor map; iteration order is insertion order.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamStore<T: Real = f32> {
    tensors: IndexMap<String, Tensor<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            tensors: IndexMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.tensors.contains_key(&name) {
            return Err(ModelError::DuplicateParam(name));
        }
        self.tensors.insert(name, tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.tensors.get(name).ok_or_else(|| ModelError::MissingParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.tensors.get_mut(name).ok_or_else(|| ModelError::MissingParam(name.to_string()))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }

    /// Records every tensor on `g`, as trainable leaves or as constants.
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> Bound {
        let vars = self
            .tensors
            .iter()
            .map(|(k, v)| {
                let t = v.clone();
                (k.clone(), if trainable { g.param(t) } else { g.constant(t) })
            })
            .collect();
        Bound { vars }
    }

    /// Checks the store holds exactly the parameters `cfg` needs, with matching shapes.
    pub fn check_against(&self, cfg: &HSTConfig) -> Result<()> {
        let specs = layout(cfg)?;
        for spec in &specs {
            let t = self.get(&spec.name)?;
            if t.shape() != spec.shape.as_slice() {
                return Err(ModelError::Config(format!(
                    "parameter {} has shape {:?}, config needs {:?}",
                    spec.name,
                    t.shape(),
                    spec.shape
                )));
            }
        }
        if specs.len() != self.len() {
            return Err(ModelError::Config(format!(
                "store holds {} tensors, config defines {}",
                self.len(),
                specs.len()
            )));
        }
        Ok(())
    }
}

/// Graph handles of a bound store.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: IndexMap<String, Var>,
}

impl Bound {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars.get(name).copied().ok_or_else(|| ModelError::MissingParam(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

impl FromIterator<(String, Var)> for Bound {
    fn from_iter<I: IntoIterator<Item = (String, Var)>>(iter: I) -> Self {
        Bound {
            vars: iter.into_iter().collect(),
        }
    }
}

/// Sum of element counts of every tensor in the store.
pub fn count_parameters<T: Real>(store: &ParamStore<T>) -> usize {
    store.iter().map(|(_, t)| t.numel()).sum()
}

const TRUNC_STD: f64 = 0.02;

/// Allocates and initializes every parameter of `cfg`; deterministic in `seed`.
pub fn build<T: Real>(cfg: &HSTConfig, seed: u64) -> Result<ParamStore<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, TRUNC_STD).expect("valid std");
    let mut store = ParamStore::new();
    for spec in layout(cfg)? {
        let numel: usize = spec.shape.iter().product();
        let data: Vec<T> = match spec.init {
            Init::Zeros => vec![T::zero(); numel],
            Init::Ones => vec![T::one(); numel],
            Init::ConvUniform => {
                let fan_in: usize = spec.shape[1..].iter().product();
                let bound = 1.0 / (fan_in as f64).sqrt();
                (0..numel).map(|_| T::from_f64(rng.random_range(-bound..bound))).collect()
            }
            Init::TruncNormal => (0..numel)
                .map(|_| loop {
                    let v: f64 = normal.sample(&mut rng);
                    if v.abs() <= 2.0 * TRUNC_STD {
                        break T::from_f64(v);
                    }
                })
                .collect(),
        };
        store.insert(spec.name, Tensor::new(spec.shape, data)?)?;
    }
    Ok(store)
}
