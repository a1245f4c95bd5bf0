use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::ModelConfig;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Standard deviation of the normal initialiser for weight matrices and embeddings.
pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Init {
    Normal,
    Zeros,
    Ones,
}

/// Names, shapes and initialisers of every tensor, in storage order.
fn layout(cfg: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let (d, f, v) = (cfg.d_model, cfg.d_ff, cfg.vocab_size);
    let mut out = vec![("embed".to_string(), vec![v, d], Init::Normal)];
    let linear = |out: &mut Vec<_>, p: &str, i: usize, o: usize| {
        out.push((format!("{p}.w"), vec![i, o], Init::Normal));
        out.push((format!("{p}.b"), vec![o], Init::Zeros));
    };
    let attn = |out: &mut Vec<_>, p: &str| {
        for m in ["q", "k", "v", "o"] {
            linear(out, &format!("{p}.{m}"), d, d);
        }
    };
    let norm = |out: &mut Vec<(String, Vec<usize>, Init)>, p: &str| {
        out.push((format!("{p}.g"), vec![d], Init::Ones));
        out.push((format!("{p}.b"), vec![d], Init::Zeros));
    };
    for l in 0..cfg.n_layers {
        let p = format!("enc.{l}");
        attn(&mut out, &format!("{p}.self"));
        norm(&mut out, &format!("{p}.ln1"));
        linear(&mut out, &format!("{p}.ff1"), d, f);
        linear(&mut out, &format!("{p}.ff2"), f, d);
        norm(&mut out, &format!("{p}.ln2"));
    }
    for l in 0..cfg.n_layers {
        let p = format!("dec.{l}");
        attn(&mut out, &format!("{p}.self"));
        norm(&mut out, &format!("{p}.ln1"));
        attn(&mut out, &format!("{p}.cross"));
        norm(&mut out, &format!("{p}.ln2"));
        linear(&mut out, &format!("{p}.ff1"), d, f);
        linear(&mut out, &format!("{p}.ff2"), f, d);
        norm(&mut out, &format!("{p}.ln3"));
    }
    linear(&mut out, "out", d, v);
    out
}

/// One parameter set shared by every language and translation direction.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters {
    config: ModelConfig,
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ModelParameters {
    pub fn init<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let normal = Normal::new(0.0, INIT_STD).expect("valid normal");
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for (name, shape, init) in layout(&config) {
            let n: usize = shape.iter().product();
            let data = match init {
                Init::Normal => (0..n).map(|_| normal.sample(rng)).collect(),
                Init::Zeros => vec![0.0; n],
                Init::Ones => vec![1.0; n],
            };
            names.push(name);
            tensors.push(Tensor::new(&shape, data)?);
        }
        Ok(Self { config, names, tensors })
    }

    /// Rebuilds a parameter set from named tensors, checking them against the layout.
    pub fn from_named(config: ModelConfig, named: Vec<(String, Tensor)>) -> Result<Self> {
        config.validate()?;
        let expected = layout(&config);
        if expected.len() != named.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                expected.len(),
                named.len()
            )));
        }
        for ((name, shape, _), (got, t)) in expected.iter().zip(&named) {
            if name != got || shape.as_slice() != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {got} {:?} does not match expected {name} {shape:?}",
                    t.shape()
                )));
            }
        }
        let (names, tensors) = named.into_iter().unzip();
        Ok(Self { config, names, tensors })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub(crate) fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }
}
