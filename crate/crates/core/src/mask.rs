//! Edit-mask estimation from noise-prediction differences.
//!
//! For each seed the input is encoded with random noise, decoded to `t = 1`
//! separately under the original and the edit condition, and the absolute
//! difference of the two noise predictions at `t = 1` is recorded. The
//! seed-averaged, channel-averaged map is smoothed, rescaled to a maximum of
//! one and thresholded.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::{LatentImage, WeightMap};
use crate::params::EditParams;
use crate::sampler::{decode_range, no_hook, Conditioned, NoisePredictor};
use crate::scene::{Condition, SceneMixture};
use crate::schedule::NoiseSchedule;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditMask {
    pub height: usize,
    pub width: usize,
    /// Seed-averaged difference map before smoothing and normalisation.
    pub raw: Vec<f64>,
    /// Smoothed map rescaled to `[0, 1]`.
    pub soft: Vec<f64>,
    /// `soft >= tau`
    pub binary: Vec<bool>,
    pub tau: f64,
    pub seeds: Vec<u64>,
    pub sigma_blur: f64,
}

impl EditMask {
    /// Builds a mask from a precomputed raw difference map.
    pub fn from_raw(
        height: usize,
        width: usize,
        raw: Vec<f64>,
        tau: f64,
        sigma_blur: f64,
        seeds: Vec<u64>,
    ) -> Result<Self> {
        if raw.len() != height * width {
            return Err(Error::InvalidShape(format!(
                "{height}x{width} mask needs {} values, got {}",
                height * width,
                raw.len()
            )));
        }
        let mut soft = gaussian_smooth(&raw, height, width, sigma_blur);
        let max = soft.iter().copied().fold(0.0, f64::max);
        if max > 0.0 {
            soft.iter_mut().for_each(|v| *v /= max);
        } else {
            soft.iter_mut().for_each(|v| *v = 0.0);
        }
        let binary = soft.iter().map(|&v| v >= tau).collect();
        Ok(Self {
            height,
            width,
            raw,
            soft,
            binary,
            tau,
            seeds,
            sigma_blur,
        })
    }

    /// A user-supplied binary edit region.
    pub fn from_binary(height: usize, width: usize, binary: Vec<bool>) -> Result<Self> {
        if binary.len() != height * width {
            return Err(Error::InvalidShape(format!(
                "{height}x{width} mask needs {} values, got {}",
                height * width,
                binary.len()
            )));
        }
        let soft: Vec<f64> = binary.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        Ok(Self {
            height,
            width,
            raw: soft.clone(),
            soft,
            binary,
            tau: 0.5,
            seeds: Vec::new(),
            sigma_blur: 0.0,
        })
    }

    /// Re-thresholds the soft map.
    pub fn with_tau(&self, tau: f64) -> Self {
        Self {
            binary: self.soft.iter().map(|&v| v >= tau).collect(),
            tau,
            ..self.clone()
        }
    }

    /// 1 inside the edit region, 0 elsewhere.
    pub fn edit_weights(&self) -> WeightMap {
        WeightMap::from_binary(self.height, self.width, &self.binary)
            .expect("mask dimensions are consistent")
    }

    /// Weights for the preservation loss: the complement of the edit region.
    pub fn preservation_weights(&self) -> WeightMap {
        self.edit_weights().complement()
    }

    pub fn area(&self) -> usize {
        self.binary.iter().filter(|b| **b).count()
    }
}

/// Truncation radius of the smoothing kernel: `ceil(4 sigma)`.
pub fn kernel_radius(sigma: f64) -> usize {
    (4.0 * sigma).ceil() as usize
}

/// Normalised 1-D Gaussian taps for offsets `-radius..=radius`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = kernel_radius(sigma) as i64;
    let taps: Vec<f64> = (-radius..=radius)
        .map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    taps.into_iter().map(|w| w / total).collect()
}

/// Half-sample symmetric reflection of `i` into `0..n`.
pub fn reflect_index(i: i64, n: usize) -> usize {
    let n = n as i64;
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - 1 - m }) as usize
}

/// Separable Gaussian blur of an `H x W` map with reflective borders.
/// `sigma == 0` returns the input unchanged.
pub fn gaussian_smooth(map: &[f64], height: usize, width: usize, sigma: f64) -> Vec<f64> {
    assert_eq!(
        map.len(),
        height * width,
        "map does not match its dimensions"
    );
    if sigma <= 0.0 {
        return map.to_vec();
    }
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as i64;

    let mut rows = vec![0.0; map.len()];
    for r in 0..height {
        for c in 0..width {
            rows[r * width + c] = kernel
                .iter()
                .enumerate()
                .map(|(i, w)| {
                    w * map[r * width + reflect_index(c as i64 + i as i64 - radius, width)]
                })
                .sum();
        }
    }
    let mut out = vec![0.0; map.len()];
    for r in 0..height {
        for c in 0..width {
            out[r * width + c] = kernel
                .iter()
                .enumerate()
                .map(|(i, w)| {
                    w * rows[reflect_index(r as i64 + i as i64 - radius, height) * width + c]
                })
                .sum();
        }
    }
    out
}

/// Channel-averaged `|eps_edit - eps_orig|` at `t = 1` for one seed.
pub fn seed_difference(
    x0: &LatentImage,
    cond_o: Condition,
    cond_edit: Condition,
    t_e: usize,
    seed: u64,
    mix: &SceneMixture,
    sched: &NoiseSchedule,
) -> Result<Vec<f64>> {
    let (h, w, ch) = x0.shape();
    let noise = LatentImage::standard_normal(h, w, ch, seed);
    let x_e = sched.stochastic_encode(x0, t_e, &noise)?;

    let eps_at_one = |cond: Condition| -> Result<LatentImage> {
        let model = Conditioned::new(mix, cond, sched);
        let x1 = if t_e > 1 {
            decode_range(&x_e, t_e, 1, &model, sched, &mut no_hook())?
                .first()
                .clone()
        } else {
            x_e.clone()
        };
        model.predict(&x1, 1)
    };
    let eps_o = eps_at_one(cond_o)?;
    let eps_e = eps_at_one(cond_edit)?;

    let mut diff = vec![0.0; h * w];
    for (p, d) in diff.iter_mut().enumerate() {
        let a = &eps_e.as_slice()[p * ch..(p + 1) * ch];
        let b = &eps_o.as_slice()[p * ch..(p + 1) * ch];
        *d = a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / ch as f64;
    }
    Ok(diff)
}

/// Estimates the edit region between `cond_o` and `cond_edit`.
pub fn estimate_mask(
    x0: &LatentImage,
    cond_o: Condition,
    cond_edit: Condition,
    params: &EditParams,
    mix: &SceneMixture,
    sched: &NoiseSchedule,
) -> Result<EditMask> {
    if params.seeds.is_empty() {
        return Err(Error::InvalidParams(
            "mask estimation needs at least one seed".into(),
        ));
    }
    if params.t_e < 1 || params.t_e > sched.steps() {
        return Err(Error::InvalidParams(format!(
            "t_e must lie in 1..={}, got {}",
            sched.steps(),
            params.t_e
        )));
    }
    let (h, w, _) = x0.shape();

    let mut per_seed: Vec<(u64, Vec<f64>)> = params
        .seeds
        .par_iter()
        .map(|&s| seed_difference(x0, cond_o, cond_edit, params.t_e, s, mix, sched).map(|d| (s, d)))
        .collect::<Result<_>>()?;
    // Fixed reduction order, independent of the order seeds were listed in.
    per_seed.sort_by_key(|(s, _)| *s);

    let mut raw = vec![0.0; h * w];
    for (_, d) in &per_seed {
        for (acc, v) in raw.iter_mut().zip(d) {
            *acc += v;
        }
    }
    let n = per_seed.len() as f64;
    raw.iter_mut().for_each(|v| *v /= n);

    EditMask::from_raw(
        h,
        w,
        raw,
        params.tau,
        params.sigma_blur,
        params.seeds.clone(),
    )
}
