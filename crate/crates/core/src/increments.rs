//! Second-order differences of the observed positions.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::simulate::ObservationGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IncrementScheme {
    /// `X_{(2p+1)h} − 2X_{2ph} + X_{(2p−1)h}`: disjoint windows, the
    /// estimators' scheme.
    EvenGrid,
    /// `X_{(p+1)h} − 2X_{ph} + X_{(p−1)h}`: overlapping windows, as used by
    /// contrast-based estimators.
    Consecutive,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DoubleIncrements {
    dim: usize,
    values: Vec<f64>,
    scheme: IncrementScheme,
    h: f64,
    count: usize,
}

impl DoubleIncrements {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn scheme(&self) -> IncrementScheme {
        self.scheme
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Increment for `p` (1-based, as in `Δ₂X(p, n)`).
    pub fn get(&self, p: usize) -> &[f64] {
        assert!(p >= 1 && p <= self.count, "p = {p} outside 1..={}", self.count);
        &self.values[(p - 1) * self.dim..p * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.dim)
    }

    /// Flat storage, `count * dim` values.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `Σ_{p ≤ upto} Δ₂X(p) ⊗ Δ₂X(p)`, row-major `d * d`. Sums run in index
    /// order so every estimator built on the same increments sees the same
    /// bits.
    pub fn outer_sum(&self, upto: usize) -> Vec<f64> {
        let d = self.dim;
        let mut out = vec![0.0; d * d];
        for inc in self.iter().take(upto) {
            for i in 0..d {
                for j in 0..d {
                    out[i * d + j] += inc[i] * inc[j];
                }
            }
        }
        out
    }
}

/// Number of grid points needed for `count` increments under `scheme`.
pub fn required_points(scheme: IncrementScheme, count: usize) -> usize {
    match scheme {
        IncrementScheme::EvenGrid => 2 * count + 2,
        IncrementScheme::Consecutive => count + 2,
    }
}

pub fn double_increments(grid: &ObservationGrid, scheme: IncrementScheme, count: usize) -> Result<DoubleIncrements> {
    if count < 1 {
        return Err(invalid("count", "must be >= 1"));
    }
    let required = required_points(scheme, count);
    if grid.len() < required {
        return Err(Error::Sizing {
            what: match scheme {
                IncrementScheme::EvenGrid => "even-grid double increments",
                IncrementScheme::Consecutive => "consecutive double increments",
            },
            required,
            available: grid.len(),
        });
    }
    let d = grid.dim();
    let mut values = Vec::with_capacity(count * d);
    for p in 1..=count {
        let mid = match scheme {
            IncrementScheme::EvenGrid => 2 * p,
            IncrementScheme::Consecutive => p,
        };
        let (prev, centre, next) = (grid.position(mid - 1), grid.position(mid), grid.position(mid + 1));
        values.extend((0..d).map(|i| next[i] - 2.0 * centre[i] + prev[i]));
    }
    Ok(DoubleIncrements {
        dim: d,
        values,
        scheme,
        h: grid.h(),
        count,
    })
}
