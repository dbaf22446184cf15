use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Architecture;
use crate::{Error, Result};

/// Offsets of one dense layer inside a flat parameter buffer.
///
/// Weights are stored row-major with one row per output unit (`out × in`),
/// followed by the `out` biases.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpan {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: usize,
    pub bias: usize,
}

impl LayerSpan {
    pub fn end(&self) -> usize {
        self.bias + self.outputs
    }
}

fn spans(layer_sizes: &[usize]) -> Vec<LayerSpan> {
    let mut offset = 0;
    layer_sizes
        .windows(2)
        .map(|w| {
            let span = LayerSpan {
                inputs: w[0],
                outputs: w[1],
                weights: offset,
                bias: offset + w[0] * w[1],
            };
            offset = span.end();
            span
        })
        .collect()
}

fn param_count(layer_sizes: &[usize]) -> usize {
    layer_sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

/// All weights and biases of an MLP in one flat buffer, layer by layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSet {
    layer_sizes: Vec<usize>,
    values: Vec<f64>,
}

/// Partial derivatives with exactly the layout of the [`ParameterSet`] they belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    layer_sizes: Vec<usize>,
    values: Vec<f64>,
}

macro_rules! flat_accessors {
    ($ty:ty) => {
        impl $ty {
            pub fn layer_sizes(&self) -> &[usize] {
                &self.layer_sizes
            }

            pub fn values(&self) -> &[f64] {
                &self.values
            }

            pub fn values_mut(&mut self) -> &mut [f64] {
                &mut self.values
            }

            pub fn len(&self) -> usize {
                self.values.len()
            }

            pub fn is_empty(&self) -> bool {
                self.values.is_empty()
            }

            pub fn spans(&self) -> Vec<LayerSpan> {
                spans(&self.layer_sizes)
            }

            pub fn l2_norm(&self) -> f64 {
                self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
            }

            pub fn is_finite(&self) -> bool {
                self.values.iter().all(|v| v.is_finite())
            }
        }
    };
}

flat_accessors!(ParameterSet);
flat_accessors!(GradientSet);

impl ParameterSet {
    pub fn zeros(arch: &Architecture) -> Self {
        let layer_sizes = arch.layer_sizes().to_vec();
        let values = vec![0.0; param_count(&layer_sizes)];
        Self {
            layer_sizes,
            values,
        }
    }

    /// Builds a parameter set from a flat buffer laid out as described on [`LayerSpan`].
    pub fn from_values(layer_sizes: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
            return Err(Error::shape(format!("invalid layer sizes {layer_sizes:?}")));
        }
        let expected = param_count(&layer_sizes);
        if values.len() != expected {
            return Err(Error::shape(format!(
                "expected {expected} values for layers {layer_sizes:?}, got {}",
                values.len()
            )));
        }
        Ok(Self {
            layer_sizes,
            values,
        })
    }

    /// Glorot-uniform weights, zero biases.
    pub fn glorot_uniform<R: Rng + ?Sized>(arch: &Architecture, rng: &mut R) -> Self {
        let mut params = Self::zeros(arch);
        for span in params.spans() {
            let limit = (6.0 / (span.inputs + span.outputs) as f64).sqrt();
            for w in &mut params.values[span.weights..span.bias] {
                *w = rng.random_range(-limit..limit);
            }
        }
        params
    }

    pub fn matches(&self, arch: &Architecture) -> bool {
        self.layer_sizes == arch.layer_sizes()
    }

    pub fn same_shape(&self, other: &ParameterSet) -> bool {
        self.layer_sizes == other.layer_sizes
    }

    pub fn zeros_like(&self) -> GradientSet {
        GradientSet {
            layer_sizes: self.layer_sizes.clone(),
            values: vec![0.0; self.values.len()],
        }
    }

    pub(crate) fn check_shape(&self, other: &ParameterSet) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::shape(format!(
                "parameter layouts differ: {:?} vs {:?}",
                self.layer_sizes, other.layer_sizes
            )))
        }
    }

    /// Size in bytes of [`ParameterSet::write_to`]'s output for this layout.
    pub fn serialized_len(&self) -> u64 {
        serialized_len(&self.layer_sizes)
    }

    /// Writes the checkpoint format: `u32` count of layer sizes, each size as `u32`,
    /// then every value as `f64`, all little-endian.
    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        let count = u32::try_from(self.layer_sizes.len())
            .map_err(|_| Error::Checkpoint("too many layers".into()))?;
        out.write_all(&count.to_le_bytes())?;
        for &size in &self.layer_sizes {
            let size =
                u32::try_from(size).map_err(|_| Error::Checkpoint("layer too wide".into()))?;
            out.write_all(&size.to_le_bytes())?;
        }
        for v in &self.values {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(self.serialized_len() as usize);
        self.write_to(&mut buf)
            .expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_from<R: Read>(mut input: R) -> Result<Self> {
        let mut word = [0u8; 4];
        input
            .read_exact(&mut word)
            .map_err(|e| Error::Checkpoint(format!("missing header: {e}")))?;
        let count = u32::from_le_bytes(word) as usize;
        if !(2..=4096).contains(&count) {
            return Err(Error::Checkpoint(format!(
                "implausible layer count {count}"
            )));
        }
        let mut layer_sizes = Vec::with_capacity(count);
        for _ in 0..count {
            input
                .read_exact(&mut word)
                .map_err(|e| Error::Checkpoint(format!("truncated header: {e}")))?;
            layer_sizes.push(u32::from_le_bytes(word) as usize);
        }
        if layer_sizes.contains(&0) {
            return Err(Error::Checkpoint(format!(
                "zero-width layer in {layer_sizes:?}"
            )));
        }
        let n = param_count(&layer_sizes);
        let mut values = Vec::with_capacity(n);
        let mut dword = [0u8; 8];
        for i in 0..n {
            input
                .read_exact(&mut dword)
                .map_err(|e| Error::Checkpoint(format!("truncated at value {i} of {n}: {e}")))?;
            values.push(f64::from_le_bytes(dword));
        }
        let mut trailing = [0u8; 1];
        if input.read(&mut trailing)? != 0 {
            return Err(Error::Checkpoint("trailing bytes after parameters".into()));
        }
        Ok(Self {
            layer_sizes,
            values,
        })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::read_from(bytes)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes)
    }
}

impl GradientSet {
    pub fn from_values(layer_sizes: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        ParameterSet::from_values(layer_sizes, values).map(|p| GradientSet {
            layer_sizes: p.layer_sizes,
            values: p.values,
        })
    }

    pub(crate) fn check_shape(&self, params: &ParameterSet) -> Result<()> {
        if self.layer_sizes == params.layer_sizes {
            Ok(())
        } else {
            Err(Error::shape(format!(
                "gradient layout {:?} does not match parameters {:?}",
                self.layer_sizes, params.layer_sizes
            )))
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.values.iter_mut().for_each(|g| *g *= factor);
    }
}

/// Checkpoint size for a given layout, without materialising the parameters.
pub fn serialized_len(layer_sizes: &[usize]) -> u64 {
    4 + 4 * layer_sizes.len() as u64 + 8 * param_count(layer_sizes) as u64
}
