//! Fully-connected Q-network with hand-derived backpropagation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::param::{Block, Gradient, GradientSource, Layout, ParamVector};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `z`.
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
        }
    }

    fn tag(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Relu => 1,
            Activation::Tanh => 2,
        }
    }

    fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Identity),
            1 => Some(Activation::Relu),
            2 => Some(Activation::Tanh),
            _ => None,
        }
    }
}

/// Layer sizes plus one activation per hidden layer. The output layer is
/// always linear.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    layer_sizes: Vec<usize>,
    hidden: Vec<Activation>,
}

impl Architecture {
    /// Every hidden layer uses `activation`.
    pub fn new(layer_sizes: Vec<usize>, activation: Activation) -> Result<Self> {
        let hidden = vec![activation; layer_sizes.len().saturating_sub(2)];
        Self::with_activations(layer_sizes, hidden)
    }

    pub fn with_activations(layer_sizes: Vec<usize>, hidden: Vec<Activation>) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::InvalidArgument(
                "network needs at least an input and an output size".into(),
            ));
        }
        if layer_sizes.contains(&0) {
            return Err(Error::InvalidArgument("layer sizes must be positive".into()));
        }
        if hidden.len() != layer_sizes.len() - 2 {
            return Err(Error::InvalidArgument(format!(
                "{} hidden layers but {} activations",
                layer_sizes.len() - 2,
                hidden.len()
            )));
        }
        Ok(Self {
            layer_sizes,
            hidden,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn hidden_activations(&self) -> &[Activation] {
        &self.hidden
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn layout(&self) -> Layout {
        Layout::new(
            self.layer_sizes
                .windows(2)
                .map(|w| Block {
                    rows: w[1],
                    cols: w[0],
                    bias: true,
                })
                .collect(),
        )
    }

    pub fn param_count(&self) -> usize {
        self.layout().len()
    }

    fn activation(&self, layer: usize) -> Activation {
        self.hidden.get(layer).copied().unwrap_or(Activation::Identity)
    }

    fn check_params(&self, params: &[f64]) -> Result<()> {
        let expected = self.param_count();
        if params.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                actual: params.len(),
            });
        }
        Ok(())
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                actual: input.len(),
            });
        }
        Ok(())
    }

    /// Forward pass on an external parameter slice.
    pub fn forward(&self, params: &[f64], input: &[f64]) -> Result<Vec<f64>> {
        self.check_params(params)?;
        self.check_input(input)?;
        let mut act = input.to_vec();
        let mut offset = 0;
        let n_layers = self.layer_sizes.len() - 1;
        for l in 0..n_layers {
            let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let z = affine(params, &mut offset, n_in, n_out, &act);
            let f = self.activation(l);
            act = z.into_iter().map(|v| f.apply(v)).collect();
        }
        Ok(act)
    }

    /// Adds `scale * d<upstream, forward(input)>/dparams` into `grad`.
    pub fn backward_into(
        &self,
        params: &[f64],
        input: &[f64],
        upstream: &[f64],
        scale: f64,
        grad: &mut [f64],
    ) -> Result<()> {
        self.check_params(params)?;
        self.check_input(input)?;
        if upstream.len() != self.output_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.output_dim(),
                actual: upstream.len(),
            });
        }
        if grad.len() != params.len() {
            return Err(Error::DimensionMismatch {
                expected: params.len(),
                actual: grad.len(),
            });
        }

        let n_layers = self.layer_sizes.len() - 1;
        // acts[l] is the input to layer l; pre[l] its pre-activation output
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(n_layers + 1);
        let mut pre: Vec<Vec<f64>> = Vec::with_capacity(n_layers);
        let mut offsets = Vec::with_capacity(n_layers);
        acts.push(input.to_vec());
        let mut offset = 0;
        for l in 0..n_layers {
            offsets.push(offset);
            let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let z = affine(params, &mut offset, n_in, n_out, &acts[l]);
            let f = self.activation(l);
            acts.push(z.iter().map(|&v| f.apply(v)).collect());
            pre.push(z);
        }

        let mut delta: Vec<f64> = upstream.iter().map(|u| scale * u).collect();
        for l in (0..n_layers).rev() {
            let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let f = self.activation(l);
            for (d, &z) in delta.iter_mut().zip(&pre[l]) {
                *d *= f.derivative(z);
            }
            let w0 = offsets[l];
            let b0 = w0 + n_in * n_out;
            let a = &acts[l];
            for j in 0..n_out {
                let dj = delta[j];
                if dj == 0.0 {
                    continue;
                }
                let row = &mut grad[w0 + j * n_in..w0 + (j + 1) * n_in];
                for (g, &ak) in row.iter_mut().zip(a) {
                    *g += dj * ak;
                }
                grad[b0 + j] += dj;
            }
            if l > 0 {
                let mut prev = vec![0.0; n_in];
                for j in 0..n_out {
                    let dj = delta[j];
                    if dj == 0.0 {
                        continue;
                    }
                    let row = &params[w0 + j * n_in..w0 + (j + 1) * n_in];
                    for (p, &w) in prev.iter_mut().zip(row) {
                        *p += w * dj;
                    }
                }
                delta = prev;
            }
        }
        Ok(())
    }
}

fn affine(params: &[f64], offset: &mut usize, n_in: usize, n_out: usize, x: &[f64]) -> Vec<f64> {
    let w = &params[*offset..*offset + n_in * n_out];
    let b = &params[*offset + n_in * n_out..*offset + n_in * n_out + n_out];
    *offset += n_in * n_out + n_out;
    (0..n_out)
        .map(|j| {
            let row = &w[j * n_in..(j + 1) * n_in];
            b[j] + row.iter().zip(x).map(|(wi, xi)| wi * xi).sum::<f64>()
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpNetwork {
    arch: Architecture,
    weights: ParamVector,
}

const WEIGHTS_MAGIC: &[u8; 4] = b"SVRW";
const WEIGHTS_VERSION: u32 = 1;

impl MlpNetwork {
    /// Glorot-uniform weights, zero biases.
    pub fn init<R: Rng + ?Sized>(arch: Architecture, rng: &mut R) -> Self {
        let layout = arch.layout();
        let mut weights = ParamVector::zeros(layout);
        let mut offset = 0;
        let data = weights.as_mut_slice();
        for w in arch.layer_sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for x in &mut data[offset..offset + fan_in * fan_out] {
                *x = rng.gen_range(-limit..=limit);
            }
            offset += fan_in * fan_out + fan_out;
        }
        Self { arch, weights }
    }

    pub fn from_weights(arch: Architecture, weights: ParamVector) -> Result<Self> {
        if weights.layout() != &arch.layout() {
            return Err(Error::LayoutMismatch);
        }
        weights.ensure_finite("network weights")?;
        Ok(Self { arch, weights })
    }

    pub fn zeros(arch: Architecture) -> Self {
        let weights = ParamVector::zeros(arch.layout());
        Self { arch, weights }
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn weights(&self) -> &ParamVector {
        &self.weights
    }

    pub fn set_weights(&mut self, weights: ParamVector) -> Result<()> {
        if weights.layout() != self.weights.layout() {
            return Err(Error::LayoutMismatch);
        }
        weights.ensure_finite("network weights")?;
        self.weights = weights;
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.arch.forward(self.weights.as_slice(), input)
    }

    /// Gradient of `<upstream, forward(input)>` with respect to every weight.
    pub fn backward(&self, input: &[f64], upstream: &[f64]) -> Result<Gradient> {
        let mut grad = ParamVector::zeros(self.weights.layout().clone());
        self.arch.backward_into(
            self.weights.as_slice(),
            input,
            upstream,
            1.0,
            grad.as_mut_slice(),
        )?;
        Ok(Gradient::new(grad, GradientSource::SingleSample))
    }

    /// Binary weight checkpoint: magic, version, layer sizes, hidden
    /// activation tags, then the flat weights as little-endian `f64`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let sizes = &self.arch.layer_sizes;
        let mut out = Vec::with_capacity(16 + 8 * (sizes.len() + self.weights.len()));
        out.extend_from_slice(WEIGHTS_MAGIC);
        out.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
        out.extend_from_slice(&(sizes.len() as u32).to_le_bytes());
        for &s in sizes {
            out.extend_from_slice(&(s as u64).to_le_bytes());
        }
        for a in &self.arch.hidden {
            out.push(a.tag());
        }
        out.extend_from_slice(&(self.weights.len() as u64).to_le_bytes());
        for x in self.weights.as_slice() {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader { bytes, pos: 0 };
        if r.take(4)? != WEIGHTS_MAGIC {
            return Err(Error::Corrupt("bad weight file magic".into()));
        }
        let version = r.u32()?;
        if version != WEIGHTS_VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: WEIGHTS_VERSION,
            });
        }
        let n = r.u32()? as usize;
        if n < 2 || n > 1 << 16 {
            return Err(Error::Corrupt(format!("implausible layer count {n}")));
        }
        let sizes = (0..n)
            .map(|_| r.u64().map(|s| s as usize))
            .collect::<Result<Vec<_>>>()?;
        let hidden = (0..n - 2)
            .map(|_| {
                let tag = r.take(1)?[0];
                Activation::from_tag(tag)
                    .ok_or_else(|| Error::Corrupt(format!("unknown activation tag {tag}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let arch = Architecture::with_activations(sizes, hidden)
            .map_err(|e| Error::Corrupt(e.to_string()))?;
        let count = r.u64()? as usize;
        if count != arch.param_count() {
            return Err(Error::Corrupt(format!(
                "weight count {count} does not match architecture ({})",
                arch.param_count()
            )));
        }
        let data = (0..count)
            .map(|_| r.u64().map(f64::from_bits))
            .collect::<Result<Vec<_>>>()?;
        if r.pos != bytes.len() {
            return Err(Error::Corrupt("trailing bytes after weights".into()));
        }
        let weights = ParamVector::new(arch.layout(), data)?;
        Ok(Self { arch, weights })
    }
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Corrupt("truncated weight file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Convenience wrappers matching the free-function style used elsewhere.
pub fn mlp_forward(net: &MlpNetwork, input: &[f64]) -> Result<Vec<f64>> {
    net.forward(input)
}

pub fn mlp_backward(net: &MlpNetwork, input: &[f64], upstream: &[f64]) -> Result<Gradient> {
    net.backward(input, upstream)
}
