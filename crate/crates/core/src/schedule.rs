//! Discrete noise schedules and the deterministic DDIM transition.
//!
//! Levels are indexed `0..=T` with `alpha_bar[0] == 1`, so `t = 0` is the
//! clean image and `t = T` the most heavily noised latent.

use std::f64::consts::FRAC_PI_2;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::LatentImage;

const COSINE_OFFSET: f64 = 0.008;
const ALPHA_BAR_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    /// Squared-cosine profile, floored at `1e-5`.
    #[default]
    Cosine,
    /// Linear betas, rescaled from the 1000-step reference range to `T` steps.
    Linear,
}

impl FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cosine" => Ok(Self::Cosine),
            "linear" => Ok(Self::Linear),
            other => Err(Error::UnknownScheduleKind(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    pub fn build(steps: usize, kind: ScheduleKind) -> Result<Self> {
        if steps < 2 {
            return Err(Error::InvalidSchedule(format!(
                "need at least 2 steps, got {steps}"
            )));
        }
        let alpha_bar = match kind {
            ScheduleKind::Cosine => (0..=steps)
                .map(|t| {
                    if t == 0 {
                        1.0
                    } else {
                        cosine_level(t, steps).max(ALPHA_BAR_FLOOR)
                    }
                })
                .collect(),
            ScheduleKind::Linear => {
                let scale = 1000.0 / steps as f64;
                let (lo, hi) = (1e-4 * scale, 0.02 * scale);
                let mut acc = 1.0;
                let mut levels = vec![1.0];
                for i in 0..steps {
                    let beta = lo + (hi - lo) * i as f64 / (steps - 1) as f64;
                    acc *= 1.0 - beta.min(0.999);
                    levels.push(acc);
                }
                levels
            }
        };
        Self::from_alpha_bar(alpha_bar)
    }

    /// Default schedule: squared cosine.
    pub fn cosine(steps: usize) -> Result<Self> {
        Self::build(steps, ScheduleKind::Cosine)
    }

    /// Wraps explicit levels, enforcing `alpha_bar[0] == 1`, strict decrease and
    /// `0 < alpha_bar[T] < 1`.
    pub fn from_alpha_bar(alpha_bar: Vec<f64>) -> Result<Self> {
        if alpha_bar.len() < 3 {
            return Err(Error::InvalidSchedule(
                "need at least 2 steps (3 levels)".into(),
            ));
        }
        if alpha_bar[0] != 1.0 {
            return Err(Error::InvalidSchedule(format!(
                "alpha_bar[0] must be 1, got {}",
                alpha_bar[0]
            )));
        }
        for (t, w) in alpha_bar.windows(2).enumerate() {
            if !(w[1] < w[0]) {
                return Err(Error::InvalidSchedule(format!(
                    "alpha_bar not strictly decreasing at t={}",
                    t + 1
                )));
            }
        }
        let last = *alpha_bar.last().unwrap();
        if !(last > 0.0 && last < 1.0) || !last.is_finite() {
            return Err(Error::InvalidSchedule(format!(
                "alpha_bar[T] must lie in (0, 1), got {last}"
            )));
        }
        Ok(Self { alpha_bar })
    }

    /// Number of transitions `T`.
    pub fn steps(&self) -> usize {
        self.alpha_bar.len() - 1
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    pub fn levels(&self) -> &[f64] {
        &self.alpha_bar
    }

    /// Encoding level for a ratio in `[0, 1]`: `round(ratio * T)`.
    pub fn encoding_level(&self, ratio: f64) -> Result<usize> {
        if !(0.0..=1.0).contains(&ratio) {
            return Err(Error::InvalidParams(format!(
                "encoding ratio must lie in [0, 1], got {ratio}"
            )));
        }
        Ok((ratio * self.steps() as f64).round() as usize)
    }

    fn check_t(&self, t: usize, lo: usize, hi: usize) -> Result<()> {
        if t < lo || t > hi {
            return Err(Error::TimestepOutOfRange { t, lo, hi });
        }
        Ok(())
    }

    /// One deterministic denoising step `x_t -> x_{t-1}`.
    pub fn ddim_step(&self, x_t: &LatentImage, eps: &LatentImage, t: usize) -> Result<LatentImage> {
        self.check_t(t, 1, self.steps())?;
        ddim_transition(x_t, eps, self.alpha_bar[t], self.alpha_bar[t - 1])
    }

    /// One inversion step `x_t -> x_{t+1}`.
    pub fn ddim_invert_step(
        &self,
        x_t: &LatentImage,
        eps: &LatentImage,
        t: usize,
    ) -> Result<LatentImage> {
        self.check_t(t, 0, self.steps() - 1)?;
        ddim_transition(x_t, eps, self.alpha_bar[t], self.alpha_bar[t + 1])
    }

    /// `sqrt(a_t) * x0 + sqrt(1 - a_t) * noise`
    pub fn stochastic_encode(
        &self,
        x0: &LatentImage,
        t: usize,
        noise: &LatentImage,
    ) -> Result<LatentImage> {
        self.check_t(t, 0, self.steps())?;
        let a = self.alpha_bar[t];
        x0.lin_comb(a.sqrt(), noise, (1.0 - a).sqrt())
    }
}

fn cosine_level(t: usize, steps: usize) -> f64 {
    let phase = ((t as f64 / steps as f64) + COSINE_OFFSET) / (1.0 + COSINE_OFFSET) * FRAC_PI_2;
    phase.cos().powi(2)
}

/// Moves a latent between two signal levels along the DDIM direction `eps`:
///
/// `x_to = sqrt(a_to / a_from) x + sqrt(a_to) (sqrt(1/a_to - 1) - sqrt(1/a_from - 1)) eps`
///
/// Denoising uses `a_to > a_from`; inversion uses `a_to < a_from`.
pub fn ddim_transition(
    x: &LatentImage,
    eps: &LatentImage,
    a_from: f64,
    a_to: f64,
) -> Result<LatentImage> {
    if !(a_from > 0.0 && a_from <= 1.0 && a_to > 0.0 && a_to <= 1.0) {
        return Err(Error::InvalidSchedule(format!(
            "signal levels must lie in (0, 1], got {a_from} -> {a_to}"
        )));
    }
    let x_coef = (a_to / a_from).sqrt();
    let eps_coef = a_to.sqrt() * ((1.0 / a_to - 1.0).sqrt() - (1.0 / a_from - 1.0).sqrt());
    x.lin_comb(x_coef, eps, eps_coef)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> LatentImage {
        LatentImage::from_vec(1, 1, 1, vec![v]).unwrap()
    }

    #[test]
    fn cosine_schedule_invariants() {
        let s = NoiseSchedule::cosine(25).unwrap();
        assert_eq!(s.steps(), 25);
        assert_eq!(s.alpha_bar(0), 1.0);
        assert!(s.levels().windows(2).all(|w| w[1] < w[0]));
        assert!(s.alpha_bar(25) > 0.0);
        assert_eq!(s.alpha_bar(25), ALPHA_BAR_FLOOR);
    }

    #[test]
    fn cosine_level_matches_closed_form() {
        // cos^2(((12/25) + 0.008) / 1.008 * pi/2), evaluated at 50 digits.
        let s = NoiseSchedule::cosine(25).unwrap();
        let expected = 0.524_922_942_830_348_6;
        assert!((s.alpha_bar(12) - expected).abs() < 1e-15);
    }

    #[test]
    fn rejects_short_and_unknown() {
        assert!(NoiseSchedule::cosine(1).is_err());
        assert!(matches!(
            "sigmoid".parse::<ScheduleKind>(),
            Err(Error::UnknownScheduleKind(_))
        ));
        assert_eq!(
            "Cosine".parse::<ScheduleKind>().unwrap(),
            ScheduleKind::Cosine
        );
    }

    #[test]
    fn linear_schedule_is_valid() {
        let s = NoiseSchedule::build(25, ScheduleKind::Linear).unwrap();
        assert_eq!(s.steps(), 25);
    }

    #[test]
    fn from_alpha_bar_validates() {
        assert!(NoiseSchedule::from_alpha_bar(vec![1.0, 0.5, 0.5]).is_err());
        assert!(NoiseSchedule::from_alpha_bar(vec![0.9, 0.5, 0.1]).is_err());
        assert!(NoiseSchedule::from_alpha_bar(vec![1.0, 0.5, 0.0]).is_err());
        assert!(NoiseSchedule::from_alpha_bar(vec![1.0, 0.5, 0.1]).is_ok());
    }

    #[test]
    fn equal_levels_with_zero_eps_is_identity() {
        let x = scalar(0.37);
        let out = ddim_transition(&x, &scalar(0.0), 0.6, 0.6).unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn scalar_step_matches_hand_evaluation() {
        // sqrt(1.6) * 1 + sqrt(0.8) * (0.5 - 1) * 0.2, evaluated at 50 digits.
        let out = ddim_transition(&scalar(1.0), &scalar(0.2), 0.5, 0.8).unwrap();
        assert!((out.as_slice()[0] - 1.175_468_344_967_360_1).abs() < 1e-14);
    }

    #[test]
    fn scalar_inversion_matches_hand_evaluation() {
        let out = ddim_transition(&scalar(1.17547), &scalar(0.2), 0.8, 0.5).unwrap();
        assert!((out.as_slice()[0] - 1.000_001_308_418_186).abs() < 1e-14);
    }

    #[test]
    fn step_and_invert_reject_bad_inputs() {
        let s = NoiseSchedule::cosine(25).unwrap();
        let x = LatentImage::zeros(2, 2, 1);
        let bad = LatentImage::zeros(2, 1, 1);
        assert!(matches!(
            s.ddim_step(&x, &x, 0),
            Err(Error::TimestepOutOfRange { .. })
        ));
        assert!(s.ddim_step(&x, &x, 26).is_err());
        assert!(s.ddim_invert_step(&x, &x, 25).is_err());
        assert!(matches!(
            s.ddim_step(&x, &bad, 3),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn stochastic_encode_edge_cases() {
        let s = NoiseSchedule::cosine(25).unwrap();
        let x0 = LatentImage::standard_normal(3, 3, 2, 1);
        let n = LatentImage::standard_normal(3, 3, 2, 2);
        assert_eq!(s.stochastic_encode(&x0, 0, &n).unwrap(), x0);

        let zero = LatentImage::zeros(3, 3, 2);
        let a = s.alpha_bar(7);
        let scaled = s.stochastic_encode(&x0, 7, &zero).unwrap();
        for (o, i) in scaled.as_slice().iter().zip(x0.as_slice()) {
            assert_eq!(*o, a.sqrt() * i);
        }
        let noise_only = s.stochastic_encode(&zero, 7, &n).unwrap();
        for (o, i) in noise_only.as_slice().iter().zip(n.as_slice()) {
            assert!((o - (1.0 - a).sqrt() * i).abs() < 1e-15);
        }
    }

    #[test]
    fn clean_signal_is_transported_exactly() {
        // x_t = sqrt(a_t) x0 + sqrt(1 - a_t) e with eps = e lands on level t-1.
        let s = NoiseSchedule::cosine(25).unwrap();
        let x0 = LatentImage::standard_normal(4, 4, 3, 10);
        let e = LatentImage::standard_normal(4, 4, 3, 11);
        for t in 1..=25 {
            let x_t = s.stochastic_encode(&x0, t, &e).unwrap();
            let stepped = s.ddim_step(&x_t, &e, t).unwrap();
            let expected = s.stochastic_encode(&x0, t - 1, &e).unwrap();
            for (a, b) in stepped.as_slice().iter().zip(expected.as_slice()) {
                assert!((a - b).abs() < 1e-9 * (1.0 + b.abs()), "t={t}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn expansion_coefficient_exceeds_one() {
        let s = NoiseSchedule::cosine(25).unwrap();
        for t in 1..=25 {
            assert!((s.alpha_bar(t - 1) / s.alpha_bar(t)).sqrt() > 1.0);
        }
    }
}
