//! Token-set classifier with hand-derived gradients.
//!
//! Each token `x` (length `d_in`) is embedded as `act(W^T x + b)` with
//! `W: d_in x d_h`. The embeddings are mean pooled (an empty token set pools
//! to the zero vector) and the logits are `V^T p + c` with `V: d_h x K`.
//! The loss is softmax cross-entropy.
//!
//! Flattened parameter layout, all row-major:
//!
//! | block          | shape        | offset                          |
//! |----------------|--------------|---------------------------------|
//! | `embed_weights`| `d_in x d_h` | `0`                             |
//! | `embed_bias`   | `d_h`        | `d_in*d_h`                      |
//! | `head_weights` | `d_h x K`    | `d_in*d_h + d_h`                |
//! | `head_bias`    | `K`          | `d_in*d_h + d_h + d_h*K`        |
//!
//! # Checkpoint format
//!
//! UTF-8 text, `\n` line endings:
//!
//! ```text
//! maskdp-checkpoint v1
//! d_in <usize>
//! d_h <usize>
//! n_classes <usize>
//! activation tanh|identity
//! values <count>
//! <value 0>
//! ...
//! <value count-1>
//! ```
//!
//! Values follow the flattened layout, one per line, in Rust's shortest
//! round-trip decimal form (`{}` formatting of `f64`), so reading a
//! checkpoint reproduces the parameters bit for bit.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::mechanism::{GradientVector, RandomSeed, Stream};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("token {index} has dimension {got}, expected {expected}")]
    TokenDimension {
        index: usize,
        got: usize,
        expected: usize,
    },
    #[error("label {label} out of range for {n_classes} classes")]
    LabelOutOfRange { label: usize, n_classes: usize },
    #[error("parameter vector has length {got}, expected {expected}")]
    ParamLength { got: usize, expected: usize },
    #[error("invalid model dimensions: {0}")]
    InvalidDims(String),
    #[error("checkpoint line {line}: {message}")]
    Checkpoint { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Elementwise nonlinearity applied to every embedded token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    /// Linear test mode: no nonlinearity.
    Identity,
}

impl Activation {
    fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub d_in: usize,
    pub d_h: usize,
    pub n_classes: usize,
}

impl ModelDims {
    pub fn new(d_in: usize, d_h: usize, n_classes: usize) -> Result<Self, ModelError> {
        if d_in == 0 || d_h == 0 || n_classes == 0 {
            return Err(ModelError::InvalidDims(format!(
                "d_in={d_in}, d_h={d_h}, n_classes={n_classes} must all be >= 1"
            )));
        }
        Ok(Self {
            d_in,
            d_h,
            n_classes,
        })
    }

    pub fn param_count(&self) -> usize {
        self.d_in * self.d_h + self.d_h + self.d_h * self.n_classes + self.n_classes
    }

    fn embed_bias_offset(&self) -> usize {
        self.d_in * self.d_h
    }

    fn head_weights_offset(&self) -> usize {
        self.embed_bias_offset() + self.d_h
    }

    fn head_bias_offset(&self) -> usize {
        self.head_weights_offset() + self.d_h * self.n_classes
    }
}

/// Parameters of the classifier, stored flattened.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    dims: ModelDims,
    activation: Activation,
    values: Vec<f64>,
}

/// Borrowed view of a subset of a sample's tokens.
#[derive(Debug, Clone, Default)]
pub struct TokenSubset<'a> {
    tokens: Vec<&'a [f64]>,
}

impl<'a> TokenSubset<'a> {
    pub fn new(tokens: Vec<&'a [f64]>) -> Self {
        Self { tokens }
    }

    pub fn empty() -> Self {
        Self { tokens: Vec::new() }
    }

    pub fn from_tokens(tokens: &'a [Vec<f64>]) -> Self {
        Self {
            tokens: tokens.iter().map(Vec::as_slice).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[&'a [f64]] {
        &self.tokens
    }
}

impl ModelParams {
    pub fn zeros(dims: ModelDims, activation: Activation) -> Self {
        Self {
            dims,
            activation,
            values: vec![0.0; dims.param_count()],
        }
    }

    /// Uniform `[-a, a]` weights with `a = sqrt(6 / (fan_in + fan_out))` per
    /// layer, zero biases.
    pub fn init(dims: ModelDims, activation: Activation, seed: RandomSeed) -> Self {
        let mut rng = seed.stream(Stream::ModelInit);
        let mut params = Self::zeros(dims, activation);
        let embed_limit = (6.0 / (dims.d_in + dims.d_h) as f64).sqrt();
        let head_limit = (6.0 / (dims.d_h + dims.n_classes) as f64).sqrt();
        let (ew, rest) = params.values.split_at_mut(dims.embed_bias_offset());
        for w in ew {
            *w = rng.random_range(-embed_limit..=embed_limit);
        }
        let hw_start = dims.head_weights_offset() - dims.embed_bias_offset();
        let hw_end = dims.head_bias_offset() - dims.embed_bias_offset();
        for w in &mut rest[hw_start..hw_end] {
            *w = rng.random_range(-head_limit..=head_limit);
        }
        params
    }

    pub fn from_flat(
        dims: ModelDims,
        activation: Activation,
        values: Vec<f64>,
    ) -> Result<Self, ModelError> {
        if values.len() != dims.param_count() {
            return Err(ModelError::ParamLength {
                got: values.len(),
                expected: dims.param_count(),
            });
        }
        Ok(Self {
            dims,
            activation,
            values,
        })
    }

    pub fn dims(&self) -> ModelDims {
        self.dims
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn flat(&self) -> &[f64] {
        &self.values
    }

    pub fn flat_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.values
    }

    pub fn embed_weights(&self) -> &[f64] {
        &self.values[..self.dims.embed_bias_offset()]
    }

    pub fn embed_bias(&self) -> &[f64] {
        &self.values[self.dims.embed_bias_offset()..self.dims.head_weights_offset()]
    }

    pub fn head_weights(&self) -> &[f64] {
        &self.values[self.dims.head_weights_offset()..self.dims.head_bias_offset()]
    }

    pub fn head_bias(&self) -> &[f64] {
        &self.values[self.dims.head_bias_offset()..]
    }

    /// `theta <- theta - step * g`.
    pub fn apply_update(&mut self, g: &GradientVector, step: f64) {
        assert_eq!(g.len(), self.values.len(), "gradient dimension mismatch");
        self.values
            .iter_mut()
            .zip(g.as_slice())
            .for_each(|(p, d)| *p -= step * d);
    }

    fn check_tokens(&self, subset: &TokenSubset<'_>) -> Result<(), ModelError> {
        for (index, t) in subset.tokens.iter().enumerate() {
            if t.len() != self.dims.d_in {
                return Err(ModelError::TokenDimension {
                    index,
                    got: t.len(),
                    expected: self.dims.d_in,
                });
            }
        }
        Ok(())
    }

    /// Post-activation embedding of one token into `out`.
    fn embed_token(&self, token: &[f64], out: &mut [f64]) {
        let d_h = self.dims.d_h;
        out.copy_from_slice(self.embed_bias());
        let w = self.embed_weights();
        for (i, &x) in token.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            let row = &w[i * d_h..(i + 1) * d_h];
            out.iter_mut().zip(row).for_each(|(o, &wij)| *o += x * wij);
        }
        if self.activation == Activation::Tanh {
            out.iter_mut().for_each(|o| *o = o.tanh());
        }
    }

    fn head(&self, pooled: &[f64]) -> Vec<f64> {
        let k = self.dims.n_classes;
        let mut logits = self.head_bias().to_vec();
        let v = self.head_weights();
        for (j, &p) in pooled.iter().enumerate() {
            let row = &v[j * k..(j + 1) * k];
            logits
                .iter_mut()
                .zip(row)
                .for_each(|(l, &vjc)| *l += p * vjc);
        }
        logits
    }

    /// Logits for a token subset.
    pub fn forward(&self, subset: &TokenSubset<'_>) -> Result<Vec<f64>, ModelError> {
        self.check_tokens(subset)?;
        let d_h = self.dims.d_h;
        let mut pooled = vec![0.0; d_h];
        if !subset.is_empty() {
            let mut h = vec![0.0; d_h];
            for token in &subset.tokens {
                self.embed_token(token, &mut h);
                pooled.iter_mut().zip(&h).for_each(|(p, v)| *p += v);
            }
            let inv = 1.0 / subset.len() as f64;
            pooled.iter_mut().for_each(|p| *p *= inv);
        }
        Ok(self.head(&pooled))
    }

    /// Cross-entropy loss and its exact gradient w.r.t. the flattened parameters.
    pub fn loss_and_grad(
        &self,
        subset: &TokenSubset<'_>,
        label: usize,
    ) -> Result<(f64, GradientVector), ModelError> {
        self.check_tokens(subset)?;
        let ModelDims {
            d_in,
            d_h,
            n_classes,
        } = self.dims;
        if label >= n_classes {
            return Err(ModelError::LabelOutOfRange { label, n_classes });
        }

        let n = subset.len();
        let mut hidden = vec![0.0; n * d_h];
        let mut pooled = vec![0.0; d_h];
        for (t, token) in subset.tokens.iter().enumerate() {
            let h = &mut hidden[t * d_h..(t + 1) * d_h];
            self.embed_token(token, h);
            pooled.iter_mut().zip(h.iter()).for_each(|(p, v)| *p += v);
        }
        let inv_n = if n == 0 { 0.0 } else { 1.0 / n as f64 };
        pooled.iter_mut().for_each(|p| *p *= inv_n);

        let logits = self.head(&pooled);
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = logits.iter().map(|l| (l - max).exp()).sum();
        let log_z = max + sum_exp.ln();
        let loss = log_z - logits[label];

        // dL/dlogits = softmax - onehot
        let mut d_logits: Vec<f64> = logits.iter().map(|l| (l - log_z).exp()).collect();
        d_logits[label] -= 1.0;

        let mut grad = GradientVector::zeros(self.dims.param_count());
        let g = grad.as_mut_slice();
        let (g_embed, g_rest) = g.split_at_mut(self.dims.embed_bias_offset());
        let (g_ebias, g_rest) = g_rest.split_at_mut(d_h);
        let (g_head, g_hbias) = g_rest.split_at_mut(d_h * n_classes);

        g_hbias.copy_from_slice(&d_logits);
        let v = self.head_weights();
        let mut d_pooled = vec![0.0; d_h];
        for j in 0..d_h {
            let row = &v[j * n_classes..(j + 1) * n_classes];
            let g_row = &mut g_head[j * n_classes..(j + 1) * n_classes];
            let mut acc = 0.0;
            for c in 0..n_classes {
                g_row[c] = pooled[j] * d_logits[c];
                acc += row[c] * d_logits[c];
            }
            d_pooled[j] = acc;
        }

        let mut d_pre = vec![0.0; d_h];
        for (t, token) in subset.tokens.iter().enumerate() {
            let h = &hidden[t * d_h..(t + 1) * d_h];
            for j in 0..d_h {
                let dh = d_pooled[j] * inv_n;
                d_pre[j] = match self.activation {
                    Activation::Tanh => dh * (1.0 - h[j] * h[j]),
                    Activation::Identity => dh,
                };
            }
            g_ebias.iter_mut().zip(&d_pre).for_each(|(g, d)| *g += d);
            for i in 0..d_in {
                let x = token[i];
                if x == 0.0 {
                    continue;
                }
                let g_row = &mut g_embed[i * d_h..(i + 1) * d_h];
                g_row.iter_mut().zip(&d_pre).for_each(|(g, d)| *g += x * d);
            }
        }
        Ok((loss, grad))
    }

    pub fn to_checkpoint_string(&self) -> String {
        let mut out = String::new();
        let d = self.dims;
        out.push_str("maskdp-checkpoint v1\n");
        let _ = writeln!(out, "d_in {}", d.d_in);
        let _ = writeln!(out, "d_h {}", d.d_h);
        let _ = writeln!(out, "n_classes {}", d.n_classes);
        let _ = writeln!(out, "activation {}", self.activation.name());
        let _ = writeln!(out, "values {}", self.values.len());
        for v in &self.values {
            let _ = writeln!(out, "{v}");
        }
        out
    }

    pub fn from_checkpoint_str(text: &str) -> Result<Self, ModelError> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let err = |line: usize, message: String| ModelError::Checkpoint { line, message };

        let mut next = |expected: &str| -> Result<(usize, String), ModelError> {
            let (no, line) = lines
                .next()
                .ok_or_else(|| err(0, format!("unexpected end of file, expected {expected}")))?;
            Ok((no, line.to_owned()))
        };

        let (no, magic) = next("header")?;
        if magic != "maskdp-checkpoint v1" {
            return Err(err(no, format!("bad magic {magic:?}")));
        }
        let mut field = |name: &str| -> Result<(usize, String), ModelError> {
            let (no, line) = next(name)?;
            match line.split_once(' ') {
                Some((key, value)) if key == name => Ok((no, value.to_owned())),
                _ => Err(err(no, format!("expected `{name} <value>`, got {line:?}"))),
            }
        };
        let parse_usize = |(no, v): (usize, String)| {
            v.parse::<usize>()
                .map_err(|e| err(no, format!("invalid integer {v:?}: {e}")))
        };
        let d_in = parse_usize(field("d_in")?)?;
        let d_h = parse_usize(field("d_h")?)?;
        let n_classes = parse_usize(field("n_classes")?)?;
        let (no, act) = field("activation")?;
        let activation = match act.as_str() {
            "tanh" => Activation::Tanh,
            "identity" => Activation::Identity,
            other => return Err(err(no, format!("unknown activation {other:?}"))),
        };
        let count_field = field("values")?;
        let count_line = count_field.0;
        let count = parse_usize(count_field)?;
        let dims = ModelDims::new(d_in, d_h, n_classes)?;
        if count != dims.param_count() {
            return Err(err(
                count_line,
                format!(
                    "{count} values declared, dimensions need {}",
                    dims.param_count()
                ),
            ));
        }

        let mut values = Vec::with_capacity(count);
        for (no, line) in lines.by_ref() {
            if values.len() == count {
                if line.trim().is_empty() {
                    continue;
                }
                return Err(err(no, "trailing data after parameter values".into()));
            }
            let v = line
                .parse::<f64>()
                .map_err(|e| err(no, format!("invalid value {line:?}: {e}")))?;
            values.push(v);
        }
        if values.len() != count {
            return Err(err(
                0,
                format!("expected {count} values, found {}", values.len()),
            ));
        }
        Self::from_flat(dims, activation, values)
    }

    pub fn write_checkpoint(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        std::fs::write(path, self.to_checkpoint_string())?;
        Ok(())
    }

    pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        Self::from_checkpoint_str(&std::fs::read_to_string(path)?)
    }
}
