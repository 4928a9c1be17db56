//! GARCH(1,1) return simulator used as a stand-in "real market".

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::series::ReturnSeries;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GarchError {
    #[error("GARCH parameters must satisfy omega > 0, alpha >= 0, beta >= 0, alpha + beta < 1")]
    NonStationary,
    #[error("cannot simulate an empty series")]
    Empty,
}

/// `σ²ₜ = ω + α r²ₜ₋₁ + β σ²ₜ₋₁`, `rₜ = σₜ εₜ`, `εₜ ~ N(0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GarchParams {
    pub omega: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl Default for GarchParams {
    fn default() -> Self {
        Self {
            omega: 1e-6,
            alpha: 0.09,
            beta: 0.90,
        }
    }
}

impl GarchParams {
    pub fn validate(&self) -> Result<(), GarchError> {
        let ok = self.omega > 0.0
            && self.alpha >= 0.0
            && self.beta >= 0.0
            && self.alpha + self.beta < 1.0;
        if ok {
            Ok(())
        } else {
            Err(GarchError::NonStationary)
        }
    }

    pub fn unconditional_variance(&self) -> f64 {
        self.omega / (1.0 - self.alpha - self.beta)
    }
}

const BURN_IN: usize = 500;

pub fn simulate_garch(params: &GarchParams, n: usize, seed: u64) -> Result<ReturnSeries, GarchError> {
    params.validate()?;
    if n == 0 {
        return Err(GarchError::Empty);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut var = params.unconditional_variance();
    let mut out = Vec::with_capacity(n);
    for i in 0..n + BURN_IN {
        let eps: f64 = StandardNormal.sample(&mut rng);
        let r = var.sqrt() * eps;
        if i >= BURN_IN {
            out.push(r);
        }
        var = params.omega + params.alpha * r * r + params.beta * var;
    }
    Ok(ReturnSeries::real(out).expect("GARCH output is finite"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_on_scale() {
        let p = GarchParams::default();
        let a = simulate_garch(&p, 5000, 1).unwrap();
        let b = simulate_garch(&p, 5000, 1).unwrap();
        assert_eq!(a, b);
        let sd = crate::series::sample_std(a.values());
        assert!(sd > 0.005 && sd < 0.02, "sd {sd}");
    }

    #[test]
    fn rejects_explosive() {
        let p = GarchParams {
            omega: 1e-6,
            alpha: 0.5,
            beta: 0.6,
        };
        assert_eq!(simulate_garch(&p, 10, 0).unwrap_err(), GarchError::NonStationary);
    }
}
