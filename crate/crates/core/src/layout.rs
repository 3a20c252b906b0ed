//! Naming and constraint transforms for slices of the flat parameter vector.

use serde::{Deserialize, Serialize};

/// Map from an unconstrained stored value to the model parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Transform {
    Identity,
    /// `x = x̃²`
    Square,
    /// `η = 2σ(η̃) ∈ (0, 2)`
    TwoSigmoid,
    /// `l = 2σ(l̃) − 1 ∈ (−1, 1)`
    SignedSigmoid,
    /// Column-major `rows × cols` matrix kept on the Stiefel manifold by
    /// projection and QR retraction.
    Stiefel { rows: usize, cols: usize },
    /// Lower-triangular values whose diagonal is stored as a square root.
    SquaredDiagonal,
}

impl Transform {
    pub fn apply(self, raw: f64) -> f64 {
        match self {
            Transform::Square => raw * raw,
            Transform::TwoSigmoid => 2.0 / (1.0 + (-raw).exp()),
            Transform::SignedSigmoid => 2.0 / (1.0 + (-raw).exp()) - 1.0,
            _ => raw,
        }
    }
}

/// One named slice of `λ`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSlice {
    pub name: String,
    pub offset: usize,
    pub len: usize,
    pub transform: Transform,
}

/// Index map over `λ`; slices are contiguous and cover it exactly once.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexMap {
    pub slices: Vec<ParamSlice>,
}

impl IndexMap {
    pub fn push(&mut self, name: impl Into<String>, len: usize, transform: Transform) {
        let offset = self.len();
        self.slices.push(ParamSlice { name: name.into(), offset, len, transform });
    }

    pub fn len(&self) -> usize {
        self.slices.last().map_or(0, |s| s.offset + s.len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, name: &str) -> Option<&ParamSlice> {
        self.slices.iter().find(|s| s.name == name)
    }

    /// Checks contiguity and exact coverage of `0..len`.
    pub fn validate(&self) -> bool {
        let mut next = 0;
        for s in &self.slices {
            if s.offset != next {
                return false;
            }
            if let Transform::Stiefel { rows, cols } = s.transform {
                if rows * cols != s.len {
                    return false;
                }
            }
            next += s.len;
        }
        true
    }

    /// Appends another map, shifting its offsets and prefixing its names.
    pub fn extend_prefixed(&mut self, prefix: &str, other: &IndexMap) {
        for s in &other.slices {
            self.push(format!("{prefix}{}", s.name), s.len, s.transform);
        }
    }
}
