use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::ModelConfig;
use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
enum Init {
    Zeros,
    /// Uniform(-a, a).
    Uniform(f64),
    Normal,
}

struct Spec {
    name: String,
    shape: Vec<usize>,
    init: Init,
}

fn xavier(fan_in: usize, fan_out: usize) -> Init {
    Init::Uniform((6.0 / (fan_in + fan_out) as f64).sqrt())
}

/// Names, shapes and initialisers of every parameter, in a fixed order.
fn layout(c: &ModelConfig) -> Vec<Spec> {
    let mut v = Vec::new();
    let mut push = |name: String, shape: Vec<usize>, init: Init| v.push(Spec { name, shape, init });
    let (k, l, e) = (c.k, c.l, c.embed_dim);
    for (i, &card) in c.geometry.dyn_cards.iter().enumerate() {
        push(format!("emb.dyn.{i}"), vec![card, e], Init::Normal);
    }
    for (i, &card) in c.geometry.static_cards.iter().enumerate() {
        push(format!("emb.stat.{i}"), vec![card, e], Init::Normal);
    }
    if c.geometry.n_static_real > 0 {
        let r = c.geometry.n_static_real;
        push("static_real.w".into(), vec![r, e], xavier(r, e));
        push("static_real.b".into(), vec![e], Init::Zeros);
    }
    for b in 1..=2 {
        push(format!("conv{b}.w"), vec![c.kernel_size, k, k], xavier(c.kernel_size * k, k));
        push(format!("conv{b}.b"), vec![k], Init::Zeros);
        if c.context_blocks.includes(b) {
            // identity modulation at init
            push(format!("film{b}.w"), vec![c.ctx_dim(), 2 * k], Init::Zeros);
            push(format!("film{b}.b"), vec![2 * k], Init::Zeros);
        }
    }
    for (prefix, nodes, dim) in [("fgat", k, l), ("tgat", l, k)] {
        if c.use_gatv2 {
            push(format!("{prefix}.w"), vec![2 * dim, 2 * dim], xavier(2 * dim, 2 * dim));
        } else {
            push(format!("{prefix}.w"), vec![dim, dim], xavier(dim, dim));
        }
        push(format!("{prefix}.a"), vec![2 * dim, 1], xavier(2 * dim, 1));
        push(format!("{prefix}.bias"), vec![nodes, nodes], Init::Zeros);
    }
    let gru = |v: &mut Vec<Spec>, prefix: &str, layers: usize, input: usize, hidden: usize| {
        let a = Init::Uniform(1.0 / (hidden as f64).sqrt());
        for layer in 0..layers {
            let inp = if layer == 0 { input } else { hidden };
            for (n, shape) in [
                ("w_ih", vec![inp, 3 * hidden]),
                ("w_hh", vec![hidden, 3 * hidden]),
                ("b_ih", vec![3 * hidden]),
                ("b_hh", vec![3 * hidden]),
            ] {
                v.push(Spec {
                    name: format!("{prefix}.{layer}.{n}"),
                    shape,
                    init: a,
                });
            }
        }
    };
    gru(&mut v, "enc", c.gru_layers, 3 * k, c.gru_hidden);
    let mut width = c.gru_hidden;
    for i in 0..c.forecast_layers {
        v.push(Spec {
            name: format!("fc.{i}.w"),
            shape: vec![width, c.forecast_hidden],
            init: xavier(width, c.forecast_hidden),
        });
        v.push(Spec {
            name: format!("fc.{i}.b"),
            shape: vec![c.forecast_hidden],
            init: Init::Zeros,
        });
        width = c.forecast_hidden;
    }
    v.push(Spec {
        name: "fc.out.w".into(),
        shape: vec![width, c.h * k],
        init: xavier(width, c.h * k),
    });
    v.push(Spec {
        name: "fc.out.b".into(),
        shape: vec![c.h * k],
        init: Init::Zeros,
    });
    v.push(Spec {
        name: "dec.init.w".into(),
        shape: vec![c.gru_hidden, c.recon_hidden],
        init: xavier(c.gru_hidden, c.recon_hidden),
    });
    v.push(Spec {
        name: "dec.init.b".into(),
        shape: vec![c.recon_hidden],
        init: Init::Zeros,
    });
    gru(&mut v, "dec", c.recon_layers, c.recon_hidden, c.recon_hidden);
    v.push(Spec {
        name: "dec.out.w".into(),
        shape: vec![c.recon_hidden, k],
        init: xavier(c.recon_hidden, k),
    });
    v.push(Spec {
        name: "dec.out.b".into(),
        shape: vec![k],
        init: Init::Zeros,
    });
    v
}

/// Expected `(name, shape)` pairs for a configuration.
pub fn param_shapes(c: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    layout(c).into_iter().map(|s| (s.name, s.shape)).collect()
}

/// All trainable tensors of one model plus its configuration and seed.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    pub config: ModelConfig,
    pub rng_seed: u64,
    names: Vec<String>,
    index: BTreeMap<String, usize>,
    params: Vec<Tensor<f64>>,
}

impl ModelState {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let specs = layout(&config);
        let mut names = Vec::with_capacity(specs.len());
        let mut params = Vec::with_capacity(specs.len());
        for s in specs {
            let n: usize = s.shape.iter().product();
            let data: Vec<f64> = match s.init {
                Init::Zeros => vec![0.0; n],
                Init::Uniform(a) => (0..n).map(|_| rng.random_range(-a..=a)).collect(),
                Init::Normal => (0..n).map(|_| StandardNormal.sample(&mut rng)).collect(),
            };
            params.push(Tensor::new(s.shape, data)?.requiring_grad());
            names.push(s.name);
        }
        Self::assemble(config, seed, names, params)
    }

    pub(crate) fn assemble(
        config: ModelConfig,
        rng_seed: u64,
        names: Vec<String>,
        params: Vec<Tensor<f64>>,
    ) -> Result<Self> {
        let expected = param_shapes(&config);
        if expected.len() != names.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameter tensors, found {}",
                expected.len(),
                names.len()
            )));
        }
        for ((en, es), (n, p)) in expected.iter().zip(names.iter().zip(&params)) {
            if en != n || es.as_slice() != p.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {n} has shape {:?}, configuration expects {en} with shape {es:?}",
                    p.shape()
                )));
            }
        }
        let index = names.iter().cloned().zip(0..).collect();
        Ok(Self {
            config,
            rng_seed,
            names,
            index,
            params,
        })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Tensor<f64>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<f64>] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<f64>> {
        self.index.get(name).map(|&i| &self.params[i])
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor<f64>> {
        self.index.get(name).map(|&i| &mut self.params[i])
    }

    pub fn n_scalars(&self) -> usize {
        self.params.iter().map(Tensor::numel).sum()
    }

    /// Registers every parameter as a graph leaf.
    pub fn bind(&self, g: &mut Graph<f64>) -> Bound<'_> {
        Bound {
            state: self,
            vars: self.params.iter().map(|p| g.leaf(p)).collect(),
        }
    }

    /// Wraps externally created leaves, one per parameter in model order.
    pub fn bind_vars(&self, vars: Vec<Var>) -> Result<Bound<'_>> {
        if vars.len() != self.params.len() {
            return Err(Error::Contract(format!(
                "expected {} parameter handles, got {}",
                self.params.len(),
                vars.len()
            )));
        }
        Ok(Bound { state: self, vars })
    }

    /// Copies gradients from a finished backward pass into the parameter slots.
    pub fn collect_grads(&mut self, g: &Graph<f64>, bound: &[Var]) -> Result<()> {
        for (p, &v) in self.params.iter_mut().zip(bound) {
            p.zero_grad();
            g.write_grad(v, p)?;
        }
        Ok(())
    }
}

/// Graph handles of a model's parameters.
pub struct Bound<'a> {
    state: &'a ModelState,
    pub vars: Vec<Var>,
}

impl Bound<'_> {
    pub fn get(&self, name: &str) -> Var {
        match self.state.index.get(name) {
            Some(&i) => self.vars[i],
            None => panic!("parameter {name} is not part of this model"),
        }
    }

    pub fn has(&self, name: &str) -> bool {
        self.state.index.contains_key(name)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.state.config
    }
}
