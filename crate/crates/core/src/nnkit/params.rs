use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{NnError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
}

impl Activation {
    pub(crate) fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the activation output `y`.
    pub(crate) fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Fully connected network: `input_dim -> hidden_dims... -> class_count`,
/// with `activation` after every hidden layer and linear logits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub class_count: usize,
    pub activation: Activation,
}

impl NetworkSpec {
    pub fn new(input_dim: usize, hidden_dims: Vec<usize>, class_count: usize) -> Self {
        Self {
            input_dim,
            hidden_dims,
            class_count,
            activation: Activation::Tanh,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(NnError::InvalidNetwork("every layer width must be >= 1".into()));
        }
        if self.class_count < 2 {
            return Err(NnError::InvalidNetwork(format!(
                "need at least 2 classes, got {}",
                self.class_count
            )));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` for each dense layer.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut widths = vec![self.input_dim];
        widths.extend(&self.hidden_dims);
        widths.push(self.class_count);
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn layout(&self) -> Vec<LayoutEntry> {
        self.layer_dims()
            .into_iter()
            .enumerate()
            .flat_map(|(l, (fan_in, fan_out))| {
                [
                    LayoutEntry {
                        name: format!("dense{l}.weight"),
                        shape: vec![fan_out, fan_in],
                    },
                    LayoutEntry {
                        name: format!("dense{l}.bias"),
                        shape: vec![fan_out],
                    },
                ]
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| (i + 1) * o).sum()
    }

    /// Glorot-uniform weights and zero biases.
    pub fn init_params(&self, seed: u64) -> Result<ParamVector> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = Vec::with_capacity(self.param_count());
        for (fan_in, fan_out) in self.layer_dims() {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            values.extend((0..fan_in * fan_out).map(|_| rng.random_range(-limit..limit)));
            values.extend(std::iter::repeat_n(0.0, fan_out));
        }
        ParamVector::new(values, self.layout())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

impl LayoutEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Flat parameter vector plus the layout that maps it onto layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    values: Vec<f64>,
    layout: Vec<LayoutEntry>,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    len: usize,
    layout: Vec<LayoutEntry>,
}

impl ParamVector {
    pub fn new(values: Vec<f64>, layout: Vec<LayoutEntry>) -> Result<Self> {
        let expected: usize = layout.iter().map(LayoutEntry::len).sum();
        if values.len() != expected {
            return Err(NnError::DimensionMismatch(format!(
                "{} values for a layout of {expected}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(NnError::InvalidNetwork("non-finite parameter".into()));
        }
        Ok(Self { values, layout })
    }

    /// Unstructured vector with a single layout entry.
    pub fn flat(values: Vec<f64>) -> Self {
        let layout = vec![LayoutEntry {
            name: "flat".into(),
            shape: vec![values.len()],
        }];
        Self { values, layout }
    }

    pub fn zeros_like(other: &Self) -> Self {
        Self {
            values: vec![0.0; other.values.len()],
            layout: other.layout.clone(),
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn layout(&self) -> &[LayoutEntry] {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn same_layout(&self, other: &Self) -> bool {
        self.layout == other.layout
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Values of the named layout entry.
    pub fn segment(&self, name: &str) -> Option<&[f64]> {
        let mut start = 0;
        for entry in &self.layout {
            if entry.name == name {
                return Some(&self.values[start..start + entry.len()]);
            }
            start += entry.len();
        }
        None
    }

    fn sidecar_path(path: &Path) -> PathBuf {
        let mut s = path.as_os_str().to_owned();
        s.push(".json");
        PathBuf::from(s)
    }

    /// Writes little-endian `f64` values to `path` and the layout to
    /// `<path>.json`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes: Vec<u8> = self.values.iter().flat_map(|v| v.to_le_bytes()).collect();
        fs::write(path, bytes)?;
        let sidecar = Sidecar {
            len: self.values.len(),
            layout: self.layout.clone(),
        };
        let json = serde_json::to_string_pretty(&sidecar).map_err(|e| NnError::Format(e.to_string()))?;
        fs::write(Self::sidecar_path(path), json)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let sidecar: Sidecar = serde_json::from_str(&fs::read_to_string(Self::sidecar_path(path))?)
            .map_err(|e| NnError::Format(e.to_string()))?;
        let bytes = fs::read(path)?;
        if bytes.len() != sidecar.len * 8 {
            return Err(NnError::Format(format!(
                "expected {} bytes, found {}",
                sidecar.len * 8,
                bytes.len()
            )));
        }
        let values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Self::new(values, sidecar.layout)
    }
}
