use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point of the finite truncation l2^n.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedVector {
    coords: DVector<f64>,
}

impl TruncatedVector {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        Self::from_dvector(DVector::from_vec(coords))
    }

    pub fn from_dvector(coords: DVector<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::invalid("ambient dimension must be at least 1"));
        }
        if let Some(i) = coords.iter().position(|c| !c.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self { coords })
    }

    /// Canonical basis vector e_{i+1} (0-based `i`).
    pub fn basis(i: usize, dim: usize) -> Self {
        assert!(i < dim, "basis index {i} out of range for dimension {dim}");
        let mut coords = DVector::zeros(dim);
        coords[i] = 1.0;
        Self { coords }
    }

    pub fn zeros(dim: usize) -> Self {
        assert!(dim >= 1);
        Self {
            coords: DVector::zeros(dim),
        }
    }

    /// Uniformly distributed unit vector: Gaussian draw on ChaCha8 stream `stream` of `seed`.
    pub fn random_unit(dim: usize, seed: u64, stream: u64) -> Self {
        assert!(dim >= 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        loop {
            let v = DVector::<f64>::from_fn(dim, |_, _| StandardNormal.sample(&mut rng));
            let n = v.norm();
            if n > 0.0 {
                return Self { coords: v / n };
            }
        }
    }

    pub fn ambient_dim(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &DVector<f64> {
        &self.coords
    }

    pub fn into_inner(self) -> DVector<f64> {
        self.coords
    }

    pub fn norm(&self) -> f64 {
        self.coords.norm()
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.coords.dot(&other.coords)
    }

    pub fn normalized(&self) -> Result<Self> {
        let n = self.norm();
        if n == 0.0 {
            return Err(Error::invalid("cannot normalize the zero vector"));
        }
        Ok(Self {
            coords: &self.coords / n,
        })
    }
}

/// Numerical tolerances shared by every construction and diagnostic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToleranceConfig {
    /// Relative rank threshold: singular values at or below `rank_tol * sigma_max` count as zero.
    pub rank_tol: f64,
    pub biorth_tol: f64,
    pub span_tol: f64,
    pub net_resolution: f64,
}

impl Default for ToleranceConfig {
    fn default() -> Self {
        Self {
            rank_tol: 1e-10,
            biorth_tol: 1e-8,
            span_tol: 1e-8,
            net_resolution: 0.01,
        }
    }
}

impl ToleranceConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("rank_tol", self.rank_tol),
            ("biorth_tol", self.biorth_tol),
            ("span_tol", self.span_tol),
            ("net_resolution", self.net_resolution),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if self.net_resolution >= 1.0 {
            return Err(Error::invalid(format!(
                "net_resolution must be below 1, got {}",
                self.net_resolution
            )));
        }
        Ok(())
    }
}
