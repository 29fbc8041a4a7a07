use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::activation::{gelu, gelu_grad};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Named, ordered parameter blocks shared by the optimizer, EMA, gradient
/// checks and checkpoints.
pub trait ParamSet {
    fn block_names(&self) -> Vec<String>;
    fn blocks(&self) -> Vec<&[f64]>;
    fn blocks_mut(&mut self) -> Vec<&mut [f64]>;

    fn param_count(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }

    fn to_flat(&self) -> Vec<f64> {
        self.blocks().concat()
    }

    fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Shape(format!(
                "flat vector has {} values, parameters need {}",
                flat.len(),
                self.param_count()
            )));
        }
        let mut offset = 0;
        for block in self.blocks_mut() {
            block.copy_from_slice(&flat[offset..offset + block.len()]);
            offset += block.len();
        }
        Ok(())
    }
}

/// Plain list of named blocks; handy for tests and scalar problems.
#[derive(Clone, Debug, PartialEq)]
pub struct NamedParams {
    pub names: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl ParamSet for NamedParams {
    fn block_names(&self) -> Vec<String> {
        self.names.clone()
    }
    fn blocks(&self) -> Vec<&[f64]> {
        self.values.iter().map(Vec::as_slice).collect()
    }
    fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        self.values.iter_mut().map(Vec::as_mut_slice).collect()
    }
}

/// Gradient buffers laid out like the parameter blocks they belong to.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub blocks: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like<P: ParamSet + ?Sized>(params: &P) -> Self {
        Gradients {
            blocks: params.blocks().iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.blocks.iter_mut().zip(&other.blocks) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, k: f64) {
        self.blocks
            .iter_mut()
            .flat_map(|b| b.iter_mut())
            .for_each(|x| *x *= k);
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.blocks.concat()
    }
}

/// Affine map `y = W x + b`, `W` stored row-major as `out × in`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn identity(dim: usize) -> Self {
        let mut weight = vec![0.0; dim * dim];
        for i in 0..dim {
            weight[i * dim + i] = 1.0;
        }
        Linear {
            in_dim: dim,
            out_dim: dim,
            weight,
            bias: vec![0.0; dim],
        }
    }

    /// LeCun-normal weights, zero bias.
    pub fn random(in_dim: usize, out_dim: usize, rng: &mut Rng) -> Self {
        let std = (1.0 / in_dim as f64).sqrt();
        let weight = (0..in_dim * out_dim)
            .map(|_| std * Distribution::<f64>::sample(&StandardNormal, rng))
            .collect::<Vec<f64>>();
        Linear {
            in_dim,
            out_dim,
            weight,
            bias: vec![0.0; out_dim],
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.weight
            .chunks_exact(self.in_dim)
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect()
    }

    /// Accumulates `dL/dW`, `dL/db` and returns `dL/dx`.
    fn backward(&self, x: &[f64], dy: &[f64], gw: &mut [f64], gb: &mut [f64]) -> Vec<f64> {
        let mut dx = vec![0.0; self.in_dim];
        for (o, &g) in dy.iter().enumerate() {
            gb[o] += g;
            if g == 0.0 {
                continue;
            }
            let row = &self.weight[o * self.in_dim..(o + 1) * self.in_dim];
            let grow = &mut gw[o * self.in_dim..(o + 1) * self.in_dim];
            for i in 0..self.in_dim {
                grow[i] += g * x[i];
                dx[i] += g * row[i];
            }
        }
        dx
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Head hidden width; `None` means `4 × dim`.
    pub hidden_dim: Option<usize>,
    pub dropout: f64,
    pub teacher_temp: f64,
    pub student_temp: f64,
    pub ema_momentum: f64,
    pub center_momentum: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden_dim: None,
            dropout: 0.5,
            teacher_temp: 0.04,
            student_temp: 1.0,
            ema_momentum: 0.99,
            center_momentum: 0.9,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, m: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::Config(m.to_string()))
            }
        };
        check(
            (0.0..1.0).contains(&self.dropout),
            "dropout must be in [0, 1)",
        )?;
        check(
            self.teacher_temp > 0.0 && self.student_temp > 0.0,
            "temperatures must be positive",
        )?;
        check(
            (0.0..=1.0).contains(&self.ema_momentum),
            "ema_momentum must be in [0, 1]",
        )?;
        check(
            (0.0..1.0).contains(&self.center_momentum),
            "center_momentum must be in [0, 1)",
        )?;
        check(self.hidden_dim != Some(0), "hidden_dim must be positive")
    }
}

/// Intermediate values of one forward pass, kept for backprop.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    x: Vec<f64>,
    adapted: Vec<f64>,
    z1: Vec<f64>,
    h1: Vec<f64>,
    mask1: Option<Vec<f64>>,
    z2: Vec<f64>,
    h2: Vec<f64>,
    mask2: Option<Vec<f64>>,
    pub output: Vec<f64>,
}

/// Base adapter followed by the MLP head: `D → D → H → H → D`.
#[derive(Clone, Debug, PartialEq)]
pub struct Branch {
    pub adapter: Linear,
    pub head: [Linear; 3],
    pub dropout: f64,
}

pub const BLOCK_NAMES: [&str; 8] = [
    "adapter.weight",
    "adapter.bias",
    "head.0.weight",
    "head.0.bias",
    "head.1.weight",
    "head.1.bias",
    "head.2.weight",
    "head.2.bias",
];

/// Number of leading blocks that belong to the base adapter.
pub const ADAPTER_BLOCKS: usize = 2;

impl Branch {
    pub fn new(dim: usize, hidden: usize, dropout: f64, rng: &mut Rng) -> Self {
        Branch {
            adapter: Linear::identity(dim),
            head: [
                Linear::random(dim, hidden, rng),
                Linear::random(hidden, hidden, rng),
                Linear::random(hidden, dim, rng),
            ],
            dropout,
        }
    }

    pub fn dim(&self) -> usize {
        self.adapter.in_dim
    }

    pub fn hidden(&self) -> usize {
        self.head[0].out_dim
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::Shape(format!(
                "input has dimension {}, model expects {}",
                x.len(),
                self.dim()
            )));
        }
        Ok(())
    }

    fn dropout_mask(&self, n: usize, rng: &mut Rng) -> Vec<f64> {
        let keep = 1.0 - self.dropout;
        (0..n)
            .map(|_| {
                if rng.random::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            })
            .collect()
    }

    fn run(&self, x: &[f64], mut rng: Option<&mut Rng>) -> ForwardCache {
        let adapted = self.adapter.forward(x);
        let z1 = self.head[0].forward(&adapted);
        let mut h1: Vec<f64> = z1.iter().map(|&z| gelu(z)).collect();
        let mask1 = rng
            .as_deref_mut()
            .map(|r| self.dropout_mask(h1.len(), r));
        if let Some(m) = &mask1 {
            h1.iter_mut().zip(m).for_each(|(h, k)| *h *= k);
        }
        let z2 = self.head[1].forward(&h1);
        let mut h2: Vec<f64> = z2.iter().map(|&z| gelu(z)).collect();
        let mask2 = rng.map(|r| self.dropout_mask(h2.len(), r));
        if let Some(m) = &mask2 {
            h2.iter_mut().zip(m).for_each(|(h, k)| *h *= k);
        }
        let output = self.head[2].forward(&h2);
        ForwardCache {
            x: x.to_vec(),
            adapted,
            z1,
            h1,
            mask1,
            z2,
            h2,
            mask2,
            output,
        }
    }

    /// Deterministic forward pass; the output is not normalised.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.run(x, None).output)
    }

    /// Forward pass with inverted dropout after each GELU.
    pub fn forward_dropout(&self, x: &[f64], rng: &mut Rng) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.run(x, Some(rng)).output)
    }

    pub fn forward_cached(&self, x: &[f64]) -> Result<ForwardCache> {
        self.check_input(x)?;
        Ok(self.run(x, None))
    }

    /// Adds the gradient of a loss with `dL/d(output) = d_out` into `grads`.
    pub fn backward(&self, cache: &ForwardCache, d_out: &[f64], grads: &mut Gradients) {
        let [ga_w, ga_b, g0_w, g0_b, g1_w, g1_b, g2_w, g2_b] = &mut grads.blocks[..] else {
            panic!("gradient buffer does not match the branch layout");
        };
        let mut dh2 = self.head[2].backward(&cache.h2, d_out, g2_w, g2_b);
        if let Some(m) = &cache.mask2 {
            dh2.iter_mut().zip(m).for_each(|(d, k)| *d *= k);
        }
        let dz2: Vec<f64> = dh2
            .iter()
            .zip(&cache.z2)
            .map(|(d, &z)| d * gelu_grad(z))
            .collect();
        let mut dh1 = self.head[1].backward(&cache.h1, &dz2, g1_w, g1_b);
        if let Some(m) = &cache.mask1 {
            dh1.iter_mut().zip(m).for_each(|(d, k)| *d *= k);
        }
        let dz1: Vec<f64> = dh1
            .iter()
            .zip(&cache.z1)
            .map(|(d, &z)| d * gelu_grad(z))
            .collect();
        let da = self.head[0].backward(&cache.adapted, &dz1, g0_w, g0_b);
        self.adapter.backward(&cache.x, &da, ga_w, ga_b);
    }
}

impl ParamSet for Branch {
    fn block_names(&self) -> Vec<String> {
        BLOCK_NAMES.iter().map(|s| s.to_string()).collect()
    }

    fn blocks(&self) -> Vec<&[f64]> {
        let [h0, h1, h2] = &self.head;
        vec![
            &self.adapter.weight,
            &self.adapter.bias,
            &h0.weight,
            &h0.bias,
            &h1.weight,
            &h1.bias,
            &h2.weight,
            &h2.bias,
        ]
    }

    fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let [h0, h1, h2] = &mut self.head;
        vec![
            &mut self.adapter.weight,
            &mut self.adapter.bias,
            &mut h0.weight,
            &mut h0.bias,
            &mut h1.weight,
            &mut h1.bias,
            &mut h2.weight,
            &mut h2.bias,
        ]
    }
}

/// Student and teacher branches plus everything the distillation loss reads.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    pub student: Branch,
    pub teacher: Branch,
    pub center: Vec<f64>,
    pub teacher_temp: f64,
    pub student_temp: f64,
    pub ema_momentum: f64,
    pub center_momentum: f64,
}

impl ModelState {
    /// Both branches start from the identity adapter; the two heads are drawn
    /// independently.
    pub fn new(dim: usize, cfg: &ModelConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        if dim < 2 {
            return Err(Error::Config(format!("dimension {dim} < 2")));
        }
        let hidden = cfg.hidden_dim.unwrap_or(4 * dim);
        let student = Branch::new(dim, hidden, cfg.dropout, rng);
        let teacher = Branch::new(dim, hidden, cfg.dropout, rng);
        Ok(ModelState {
            student,
            teacher,
            center: vec![0.0; dim],
            teacher_temp: cfg.teacher_temp,
            student_temp: cfg.student_temp,
            ema_momentum: cfg.ema_momentum,
            center_momentum: cfg.center_momentum,
        })
    }

    pub fn dim(&self) -> usize {
        self.student.dim()
    }
}
