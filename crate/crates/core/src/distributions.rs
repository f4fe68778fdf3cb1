//! Synthetic access distributions over ranked embeddings.
//!
//! Parametric kinds assign an unnormalized weight to each rank `x` in
//! `1..=E` and normalize:
//!
//! | kind          | weight                    | default shape |
//! |---------------|---------------------------|---------------|
//! | `zipf`        | `x^-s`                    | `s = 1`       |
//! | `exponential` | `exp(-λ·x/E)`             | `λ = 5`       |
//! | `half_normal` | `exp(-(x/E)² / (2σ²))`    | `σ = 0.08`    |
//!
//! The exponential and half-normal kinds take the rank relative to `E`, so
//! [`DistributionSpec::scale`] stretches the same shape over a larger
//! vocabulary rather than appending a negligible tail.

use serde::{Deserialize, Serialize};

use crate::cost_model::EmbeddingDistribution;
use crate::error::{Error, Result};
use crate::numeric::compensated_sum;

pub const DEFAULT_ZIPF_EXPONENT: f64 = 1.0;
pub const DEFAULT_EXPONENTIAL_RATE: f64 = 5.0;
pub const DEFAULT_HALF_NORMAL_SCALE: f64 = 0.08;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistributionKind {
    Zipf,
    Exponential,
    HalfNormal,
    Empirical,
}

impl DistributionKind {
    pub fn name(self) -> &'static str {
        match self {
            DistributionKind::Zipf => "zipf",
            DistributionKind::Exponential => "exponential",
            DistributionKind::HalfNormal => "half_normal",
            DistributionKind::Empirical => "empirical",
        }
    }

    /// Default shape parameter for parametric kinds.
    pub fn default_shape(self) -> Option<f64> {
        match self {
            DistributionKind::Zipf => Some(DEFAULT_ZIPF_EXPONENT),
            DistributionKind::Exponential => Some(DEFAULT_EXPONENTIAL_RATE),
            DistributionKind::HalfNormal => Some(DEFAULT_HALF_NORMAL_SCALE),
            DistributionKind::Empirical => None,
        }
    }
}

impl std::fmt::Display for DistributionKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Serializable description of an access distribution.
///
/// JSON form: `{"kind": "zipf", "size": 1000, "shape": 1.0}` or
/// `{"kind": "empirical", "probs": [...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DistributionSpec {
    Zipf { size: usize, shape: f64 },
    Exponential { size: usize, shape: f64 },
    HalfNormal { size: usize, shape: f64 },
    Empirical { probs: Vec<f64> },
}

impl DistributionSpec {
    /// A parametric spec; rejects `Empirical`, `size = 0` and non-positive shapes.
    pub fn parametric(kind: DistributionKind, size: usize, shape: f64) -> Result<Self> {
        let spec = match kind {
            DistributionKind::Zipf => DistributionSpec::Zipf { size, shape },
            DistributionKind::Exponential => DistributionSpec::Exponential { size, shape },
            DistributionKind::HalfNormal => DistributionSpec::HalfNormal { size, shape },
            DistributionKind::Empirical => {
                return Err(Error::invalid(
                    "empirical distributions carry explicit probabilities",
                ))
            }
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_default_shape(kind: DistributionKind, size: usize) -> Result<Self> {
        let shape = kind
            .default_shape()
            .ok_or_else(|| Error::invalid("empirical distributions have no shape"))?;
        Self::parametric(kind, size, shape)
    }

    pub fn kind(&self) -> DistributionKind {
        match self {
            DistributionSpec::Zipf { .. } => DistributionKind::Zipf,
            DistributionSpec::Exponential { .. } => DistributionKind::Exponential,
            DistributionSpec::HalfNormal { .. } => DistributionKind::HalfNormal,
            DistributionSpec::Empirical { .. } => DistributionKind::Empirical,
        }
    }

    pub fn size(&self) -> usize {
        match self {
            DistributionSpec::Zipf { size, .. }
            | DistributionSpec::Exponential { size, .. }
            | DistributionSpec::HalfNormal { size, .. } => *size,
            DistributionSpec::Empirical { probs } => probs.len(),
        }
    }

    pub fn shape(&self) -> Option<f64> {
        match self {
            DistributionSpec::Zipf { shape, .. }
            | DistributionSpec::Exponential { shape, .. }
            | DistributionSpec::HalfNormal { shape, .. } => Some(*shape),
            DistributionSpec::Empirical { .. } => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.size() == 0 {
            return Err(Error::invalid("distribution size must be at least 1"));
        }
        if let Some(shape) = self.shape() {
            if !(shape.is_finite() && shape > 0.0) {
                return Err(Error::invalid(format!(
                    "{} shape must be positive and finite, got {shape}",
                    self.kind()
                )));
            }
        }
        Ok(())
    }

    /// Same kind and shape over `factor` times as many embeddings.
    pub fn scale(&self, factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(Error::invalid("scale factor must be at least 1"));
        }
        let shape = self
            .shape()
            .ok_or_else(|| Error::invalid("empirical distributions cannot be scaled"))?;
        let size = self
            .size()
            .checked_mul(factor)
            .ok_or_else(|| Error::invalid("scaled size overflows"))?;
        Self::parametric(self.kind(), size, shape)
    }

    pub fn materialize(&self) -> Result<EmbeddingDistribution> {
        self.validate()?;
        // Weights are taken relative to rank 1 so steep shapes do not underflow.
        let weights: Vec<f64> = match *self {
            DistributionSpec::Zipf { size, shape } => {
                (1..=size).map(|x| (x as f64).powf(-shape)).collect()
            }
            DistributionSpec::Exponential { size, shape } => {
                let e = size as f64;
                (1..=size)
                    .map(|x| (-shape * (x - 1) as f64 / e).exp())
                    .collect()
            }
            DistributionSpec::HalfNormal { size, shape } => {
                let e = size as f64;
                let denom = 2.0 * shape * shape;
                let r1 = 1.0 / e;
                (1..=size)
                    .map(|x| {
                        let r = x as f64 / e;
                        (-(r - r1) * (r + r1) / denom).exp()
                    })
                    .collect()
            }
            DistributionSpec::Empirical { ref probs } => {
                return EmbeddingDistribution::new(probs.clone())
            }
        };
        let total = compensated_sum(weights.iter().copied());
        if !(total.is_finite() && total > 0.0) {
            return Err(Error::invalid(format!(
                "{} weights do not normalize (total {total})",
                self.kind()
            )));
        }
        EmbeddingDistribution::new(weights.into_iter().map(|w| w / total).collect())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }
}
