//! Cross-modal condition scorer.
//!
//! For a candidate table with column embeddings `a_1..a_m`, condition
//! embedding `c` and metadata embedding `e`:
//!
//! ```text
//! x_j   = [a_j, c, a_j - c, a_j * c]          (4d)
//! h_j   = tanh(W1 x_j + b1)                   (d_h)
//! h_ct  = max_j h_j                           (componentwise)
//! h_cm  = tanh(W2 [e, c, e - c, e * c] + b2)  (d_h)
//! rho_c = MLP([h_ct; h_cm])                   (scalar, linear output)
//! ```
//!
//! Pooling runs over the columns of one candidate, which keeps the score
//! per-candidate.

mod tensor;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use tensor::{DenseLayer, Matrix};

pub const DEFAULT_HIDDEN: usize = 128;
pub const DEFAULT_HEAD_WIDTH: usize = 64;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ModelError {
    #[error("{what}: expected dimension {expected}, got {found}")]
    DimMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("max-pooling over an empty set")]
    EmptyPool,
    #[error("invalid model: {0}")]
    InvalidModel(String),
}

fn expect_dim(what: &'static str, expected: usize, found: usize) -> Result<(), ModelError> {
    if expected != found {
        return Err(ModelError::DimMismatch { what, expected, found });
    }
    Ok(())
}

/// Tanh hidden layers followed by a linear scalar output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionHead {
    pub layers: Vec<DenseLayer>,
}

impl FusionHead {
    /// Activations of every layer; the last element is the 1-vector output.
    pub fn forward_trace(&self, input: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len());
        let mut cur = input.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = layer.affine(&cur);
            if l + 1 < self.layers.len() {
                z.iter_mut().for_each(|v| *v = v.tanh());
            }
            acts.push(z.clone());
            cur = z;
        }
        acts
    }

    pub fn forward(&self, input: &[f64]) -> f64 {
        self.forward_trace(input).last().map_or(0.0, |o| o[0])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub dim: usize,
    pub hidden: usize,
    /// Widths of the head's hidden layers; the scalar output layer is implied.
    pub head_widths: Vec<usize>,
    pub lambda: f64,
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(dim: usize) -> Self {
        ModelConfig {
            dim,
            hidden: DEFAULT_HIDDEN,
            head_widths: vec![DEFAULT_HEAD_WIDTH],
            lambda: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossFusionModel {
    pub dim: usize,
    pub hidden: usize,
    /// `W1, b1`: column/condition interaction.
    pub interaction: DenseLayer,
    /// `W2, b2`: metadata/condition interaction.
    pub metadata: DenseLayer,
    pub head: FusionHead,
    /// Weight of the table score in the fused ranking score.
    pub lambda: f64,
}

impl CrossFusionModel {
    pub fn new(config: &ModelConfig) -> Result<Self, ModelError> {
        if config.dim == 0 || config.hidden == 0 || config.head_widths.contains(&0) {
            return Err(ModelError::InvalidModel("dimensions must be positive".into()));
        }
        if !(config.lambda >= 0.0 && config.lambda.is_finite()) {
            return Err(ModelError::InvalidModel(format!("lambda must be >= 0, got {}", config.lambda)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (d, h) = (config.dim, config.hidden);
        let interaction = DenseLayer::glorot(h, 4 * d, &mut rng);
        let metadata = DenseLayer::glorot(h, 4 * d, &mut rng);
        let mut layers = Vec::new();
        let mut fan_in = 2 * h;
        for &w in config.head_widths.iter().chain(std::iter::once(&1)) {
            layers.push(DenseLayer::glorot(w, fan_in, &mut rng));
            fan_in = w;
        }
        Ok(CrossFusionModel {
            dim: d,
            hidden: h,
            interaction,
            metadata,
            head: FusionHead { layers },
            lambda: config.lambda,
        })
    }

    /// Checks every shape against `dim`/`hidden`, finiteness, and `lambda >= 0`.
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidModel(m));
        for (name, layer) in [("interaction", &self.interaction), ("metadata", &self.metadata)] {
            if !layer.is_consistent() || layer.out_dim() != self.hidden || layer.in_dim() != 4 * self.dim {
                return bad(format!(
                    "{name} layer is {}x{}, expected {}x{}",
                    layer.out_dim(),
                    layer.in_dim(),
                    self.hidden,
                    4 * self.dim
                ));
            }
        }
        if self.head.layers.is_empty() {
            return bad("head has no layers".into());
        }
        let mut fan_in = 2 * self.hidden;
        for (l, layer) in self.head.layers.iter().enumerate() {
            if !layer.is_consistent() || layer.in_dim() != fan_in {
                return bad(format!("head layer {l} does not chain"));
            }
            fan_in = layer.out_dim();
        }
        if fan_in != 1 {
            return bad(format!("head output width {fan_in}, expected 1"));
        }
        let finite = self.interaction.is_finite()
            && self.metadata.is_finite()
            && self.head.layers.iter().all(DenseLayer::is_finite);
        if !finite {
            return bad("non-finite parameter".into());
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be >= 0, got {}", self.lambda));
        }
        Ok(())
    }

    pub fn condition_table_vector<V: AsRef<[f64]>>(&self, columns: &[V], c: &[f64]) -> Result<Vec<f64>, ModelError> {
        Ok(self.table_branch(columns, c)?.pooled)
    }

    pub fn condition_metadata_vector(&self, meta: &[f64], c: &[f64]) -> Result<Vec<f64>, ModelError> {
        Ok(self.metadata_branch(meta, c)?.1)
    }

    pub fn condition_score<V: AsRef<[f64]>>(
        &self,
        columns: &[V],
        meta: &[f64],
        c: &[f64],
    ) -> Result<ConditionScore, ModelError> {
        let fwd = self.forward(columns, meta, c)?;
        Ok(ConditionScore {
            value: fwd.value,
            h_ct: fwd.table.pooled,
            h_cm: fwd.h_cm,
        })
    }

    pub(crate) fn table_branch<V: AsRef<[f64]>>(&self, columns: &[V], c: &[f64]) -> Result<TableBranch, ModelError> {
        expect_dim("condition", self.dim, c.len())?;
        let mut column_hidden = Vec::with_capacity(columns.len());
        for col in columns {
            let x = interaction_features(col.as_ref(), c)?;
            expect_dim("column embedding", self.dim, col.as_ref().len())?;
            column_hidden.push(hidden(&self.interaction, &x)?);
        }
        let (pooled, argmax) = max_pool_with_argmax(&column_hidden)?;
        Ok(TableBranch {
            column_hidden,
            argmax,
            pooled,
        })
    }

    /// Returns (features, h_cm).
    pub(crate) fn metadata_branch(&self, meta: &[f64], c: &[f64]) -> Result<(Vec<f64>, Vec<f64>), ModelError> {
        expect_dim("metadata embedding", self.dim, meta.len())?;
        expect_dim("condition", self.dim, c.len())?;
        let x = interaction_features(meta, c)?;
        let h = hidden(&self.metadata, &x)?;
        Ok((x, h))
    }

    pub(crate) fn forward<V: AsRef<[f64]>>(
        &self,
        columns: &[V],
        meta: &[f64],
        c: &[f64],
    ) -> Result<Forward, ModelError> {
        let table = self.table_branch(columns, c)?;
        let (meta_features, h_cm) = self.metadata_branch(meta, c)?;
        let mut head_input = table.pooled.clone();
        head_input.extend_from_slice(&h_cm);
        let head_acts = self.head.forward_trace(&head_input);
        let value = head_acts.last().map_or(0.0, |o| o[0]);
        Ok(Forward {
            table,
            meta_features,
            h_cm,
            head_input,
            head_acts,
            value,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionScore {
    pub value: f64,
    pub h_ct: Vec<f64>,
    pub h_cm: Vec<f64>,
}

pub(crate) struct TableBranch {
    pub column_hidden: Vec<Vec<f64>>,
    /// Winning column per hidden component (lowest index on ties).
    pub argmax: Vec<usize>,
    pub pooled: Vec<f64>,
}

pub(crate) struct Forward {
    pub table: TableBranch,
    pub meta_features: Vec<f64>,
    pub h_cm: Vec<f64>,
    pub head_input: Vec<f64>,
    pub head_acts: Vec<Vec<f64>>,
    pub value: f64,
}

/// `[t, c, t - c, t * c]`.
pub fn interaction_features(t: &[f64], c: &[f64]) -> Result<Vec<f64>, ModelError> {
    expect_dim("interaction operands", t.len(), c.len())?;
    let mut out = Vec::with_capacity(4 * t.len());
    out.extend_from_slice(t);
    out.extend_from_slice(c);
    out.extend(t.iter().zip(c).map(|(a, b)| a - b));
    out.extend(t.iter().zip(c).map(|(a, b)| a * b));
    Ok(out)
}

/// `tanh(W x + b)`.
pub fn hidden(layer: &DenseLayer, x: &[f64]) -> Result<Vec<f64>, ModelError> {
    expect_dim("layer input", layer.in_dim(), x.len())?;
    let mut z = layer.affine(x);
    z.iter_mut().for_each(|v| *v = v.tanh());
    Ok(z)
}

pub fn max_pool<V: AsRef<[f64]>>(vectors: &[V]) -> Result<Vec<f64>, ModelError> {
    Ok(max_pool_with_argmax(vectors)?.0)
}

fn max_pool_with_argmax<V: AsRef<[f64]>>(vectors: &[V]) -> Result<(Vec<f64>, Vec<usize>), ModelError> {
    let first = vectors.first().ok_or(ModelError::EmptyPool)?.as_ref();
    let mut pooled = first.to_vec();
    let mut argmax = vec![0usize; first.len()];
    for (j, v) in vectors.iter().enumerate().skip(1) {
        let v = v.as_ref();
        expect_dim("pooled vector", first.len(), v.len())?;
        for (i, &x) in v.iter().enumerate() {
            if x > pooled[i] {
                pooled[i] = x;
                argmax[i] = j;
            }
        }
    }
    Ok((pooled, argmax))
}
