//! Flat parameter vectors with per-layer shape metadata.
//!
//! Every optimizer in this crate works on a single contiguous `Vec<f64>`;
//! the [`Layout`] records how that buffer maps back onto weight matrices
//! and bias vectors so networks can be flattened and rebuilt exactly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One parameter block: a `rows x cols` row-major matrix, optionally
/// followed by a bias vector of length `rows`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub rows: usize,
    pub cols: usize,
    pub bias: bool,
}

impl Block {
    pub fn len(&self) -> usize {
        self.rows * self.cols + if self.bias { self.rows } else { 0 }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    blocks: Vec<Block>,
}

impl Layout {
    pub fn new(blocks: Vec<Block>) -> Self {
        Self { blocks }
    }

    /// A plain vector of `dim` coordinates.
    pub fn flat(dim: usize) -> Self {
        Self::new(vec![Block {
            rows: dim,
            cols: 1,
            bias: false,
        }])
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.iter().map(Block::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Unflattened view of one [`Block`].
#[derive(Clone, Debug, PartialEq)]
pub struct BlockParams {
    pub rows: usize,
    pub cols: usize,
    /// Row-major `rows x cols`.
    pub weights: Vec<f64>,
    pub bias: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    data: Vec<f64>,
    layout: Layout,
}

impl ParamVector {
    pub fn zeros(layout: Layout) -> Self {
        Self {
            data: vec![0.0; layout.len()],
            layout,
        }
    }

    pub fn new(layout: Layout, data: Vec<f64>) -> Result<Self> {
        if data.len() != layout.len() {
            return Err(Error::DimensionMismatch {
                expected: layout.len(),
                actual: data.len(),
            });
        }
        let v = Self { data, layout };
        v.ensure_finite("parameter vector")?;
        Ok(v)
    }

    /// Wraps `data` with a single flat block.
    pub fn from_flat(data: Vec<f64>) -> Result<Self> {
        Self::new(Layout::flat(data.len()), data)
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        if self.data.iter().all(|x| x.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite(what.to_string()))
        }
    }

    pub fn check_compatible(&self, other: &ParamVector) -> Result<()> {
        if self.layout != other.layout {
            return Err(Error::LayoutMismatch);
        }
        Ok(())
    }

    /// Same layout, different values.
    pub fn with_values(&self, data: Vec<f64>) -> Result<Self> {
        Self::new(self.layout.clone(), data)
    }

    /// `self += a * x`
    pub fn axpy(&mut self, a: f64, x: &ParamVector) -> Result<()> {
        self.check_compatible(x)?;
        for (s, xi) in self.data.iter_mut().zip(&x.data) {
            *s += a * xi;
        }
        Ok(())
    }

    pub fn sub(&self, other: &ParamVector) -> Result<ParamVector> {
        self.check_compatible(other)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        Ok(Self {
            data,
            layout: self.layout.clone(),
        })
    }

    pub fn scaled(&self, c: f64) -> ParamVector {
        Self {
            data: self.data.iter().map(|x| c * x).collect(),
            layout: self.layout.clone(),
        }
    }

    pub fn dot(&self, other: &ParamVector) -> Result<f64> {
        self.check_compatible(other)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    pub fn unflatten(&self) -> Vec<BlockParams> {
        let mut offset = 0;
        self.layout
            .blocks
            .iter()
            .map(|b| {
                let nw = b.rows * b.cols;
                let weights = self.data[offset..offset + nw].to_vec();
                offset += nw;
                let bias = b.bias.then(|| {
                    let v = self.data[offset..offset + b.rows].to_vec();
                    offset += b.rows;
                    v
                });
                BlockParams {
                    rows: b.rows,
                    cols: b.cols,
                    weights,
                    bias,
                }
            })
            .collect()
    }

    pub fn flatten(blocks: &[BlockParams]) -> Result<ParamVector> {
        let mut layout = Vec::with_capacity(blocks.len());
        let mut data = Vec::new();
        for b in blocks {
            if b.weights.len() != b.rows * b.cols {
                return Err(Error::DimensionMismatch {
                    expected: b.rows * b.cols,
                    actual: b.weights.len(),
                });
            }
            data.extend_from_slice(&b.weights);
            if let Some(bias) = &b.bias {
                if bias.len() != b.rows {
                    return Err(Error::DimensionMismatch {
                        expected: b.rows,
                        actual: bias.len(),
                    });
                }
                data.extend_from_slice(bias);
            }
            layout.push(Block {
                rows: b.rows,
                cols: b.cols,
                bias: b.bias.is_some(),
            });
        }
        ParamVector::new(Layout::new(layout), data)
    }
}

/// Where a gradient came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradientSource {
    SingleSample,
    Minibatch,
    Anchor,
    SvrgCorrected,
    /// The displacement surrogate handed to Adam by the outer step.
    Composite,
    FiniteDifference,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gradient {
    pub values: ParamVector,
    pub source: GradientSource,
}

impl Gradient {
    pub fn new(values: ParamVector, source: GradientSource) -> Self {
        Self { values, source }
    }

    pub fn zeros(layout: Layout, source: GradientSource) -> Self {
        Self::new(ParamVector::zeros(layout), source)
    }

    pub fn as_slice(&self) -> &[f64] {
        self.values.as_slice()
    }

    pub fn layout(&self) -> &Layout {
        self.values.layout()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}
