use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::Condition;

/// Which condition drives a DDIM inversion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InversionPolicy {
    /// The original condition of the input image.
    #[default]
    Original,
    /// The edit condition.
    Edit,
    /// No condition.
    Null,
}

impl InversionPolicy {
    pub fn condition(self, cond_o: Condition, cond_edit: Condition) -> Condition {
        match self {
            Self::Original => cond_o,
            Self::Edit => cond_edit,
            Self::Null => Condition::null(),
        }
    }
}

/// Hyperparameters of one edit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EditParams {
    /// Preservation weight; `1 - lambda` weights the guidance loss.
    pub lambda: f64,
    /// Learning rate of the latent optimiser.
    pub gamma: f64,
    /// Number of decode timesteps (from the top) that receive updates.
    pub t_u: usize,
    /// Optimiser steps per updated timestep.
    pub k: usize,
    /// Encoding level.
    pub t_e: usize,
    /// Mask threshold on the max-normalised difference map.
    pub tau: f64,
    pub n_seeds: usize,
    /// Mask-estimation seeds; must hold exactly `n_seeds` entries.
    pub seeds: Vec<u64>,
    /// Gaussian smoothing width for the mask, in pixels.
    pub sigma_blur: f64,
    /// Seed of the random-noise encoding used to build the guidance image.
    pub guidance_seed: u64,
    /// Condition used to invert the input image.
    pub inversion: InversionPolicy,
    /// Condition used to invert the guidance image.
    pub guidance_inversion: InversionPolicy,
}

impl Default for EditParams {
    fn default() -> Self {
        Self {
            lambda: 0.6,
            gamma: 0.1,
            t_u: 15,
            k: 1,
            t_e: 25,
            tau: 0.1,
            n_seeds: 10,
            seeds: (0..10).collect(),
            sigma_blur: 1.0,
            guidance_seed: 999,
            inversion: InversionPolicy::Original,
            guidance_inversion: InversionPolicy::Original,
        }
    }
}

impl EditParams {
    /// Profile for harder inputs: more updated steps, more optimiser steps
    /// and a stricter mask.
    pub fn real_image() -> Self {
        Self {
            t_u: 20,
            k: 20,
            tau: 0.2,
            ..Self::default()
        }
    }

    /// Guidance-only profile used to refine a guidance image.
    pub fn refinement() -> Self {
        Self {
            lambda: 0.0,
            t_u: 6,
            k: 1,
            ..Self::default()
        }
    }

    /// Replaces all seeds with ones derived from a single run seed.
    pub fn with_run_seed(mut self, seed: u64) -> Self {
        let base = seed.wrapping_mul(1000);
        self.seeds = (0..self.n_seeds as u64)
            .map(|i| base.wrapping_add(i))
            .collect();
        self.guidance_seed = base.wrapping_add(999);
        self
    }

    /// Sets `n_seeds` and regenerates consecutive seeds starting at the first one.
    pub fn with_n_seeds(mut self, n: usize) -> Self {
        let start = self.seeds.first().copied().unwrap_or(0);
        self.n_seeds = n;
        self.seeds = (0..n as u64).map(|i| start.wrapping_add(i)).collect();
        self
    }

    pub fn validate(&self, steps: usize) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidParams(msg));
        if !(0.0..=1.0).contains(&self.lambda) {
            return fail(format!("lambda must lie in [0, 1], got {}", self.lambda));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return fail(format!("gamma must be positive, got {}", self.gamma));
        }
        if self.t_e < 1 || self.t_e > steps {
            return fail(format!("t_e must lie in 1..={steps}, got {}", self.t_e));
        }
        if self.t_u < 1 || self.t_u > self.t_e {
            return fail(format!(
                "t_u must lie in 1..={}, got {}",
                self.t_e, self.t_u
            ));
        }
        if self.k < 1 {
            return fail("k must be at least 1".into());
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return fail(format!("tau must lie in (0, 1), got {}", self.tau));
        }
        if self.n_seeds < 1 {
            return fail("n_seeds must be at least 1".into());
        }
        if self.seeds.len() != self.n_seeds {
            return fail(format!(
                "expected {} seeds, got {}",
                self.n_seeds,
                self.seeds.len()
            ));
        }
        if !(self.sigma_blur >= 0.0 && self.sigma_blur.is_finite()) {
            return fail(format!("sigma_blur must be >= 0, got {}", self.sigma_blur));
        }
        Ok(())
    }
}
