//! Full-trajectory DDIM encoding and decoding.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::LatentImage;
use crate::scene::{Condition, SceneMixture};
use crate::schedule::NoiseSchedule;

/// Anything that predicts the noise contained in `x_t`.
pub trait NoisePredictor {
    fn predict(&self, x_t: &LatentImage, t: usize) -> Result<LatentImage>;
}

/// The exact mixture denoiser bound to one condition.
#[derive(Debug, Clone, Copy)]
pub struct Conditioned<'a> {
    pub mixture: &'a SceneMixture,
    pub condition: Condition,
    pub schedule: &'a NoiseSchedule,
}

impl<'a> Conditioned<'a> {
    pub fn new(
        mixture: &'a SceneMixture,
        condition: Condition,
        schedule: &'a NoiseSchedule,
    ) -> Self {
        Self {
            mixture,
            condition,
            schedule,
        }
    }
}

impl NoisePredictor for Conditioned<'_> {
    fn predict(&self, x_t: &LatentImage, t: usize) -> Result<LatentImage> {
        self.mixture
            .predict_eps(x_t, t, &self.condition, self.schedule)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Encode,
    Decode,
}

/// Latents for every timestep in `t_lo..=t_hi`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    t_lo: usize,
    latents: Vec<LatentImage>,
    condition: Option<Condition>,
    direction: Direction,
}

impl Trajectory {
    pub fn t_lo(&self) -> usize {
        self.t_lo
    }

    pub fn t_hi(&self) -> usize {
        self.t_lo + self.latents.len() - 1
    }

    pub fn len(&self) -> usize {
        self.latents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.latents.is_empty()
    }

    pub fn condition(&self) -> Option<Condition> {
        self.condition
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    /// Latent at timestep `t`, if covered.
    pub fn at(&self, t: usize) -> Option<&LatentImage> {
        t.checked_sub(self.t_lo).and_then(|i| self.latents.get(i))
    }

    pub fn latents(&self) -> &[LatentImage] {
        &self.latents
    }

    /// The `t = t_lo` end (the clean image for a full decode or encode).
    pub fn first(&self) -> &LatentImage {
        &self.latents[0]
    }

    pub fn last(&self) -> &LatentImage {
        self.latents.last().expect("trajectories are never empty")
    }
}

fn check_level(t: usize, sched: &NoiseSchedule) -> Result<()> {
    if t == 0 || t > sched.steps() {
        return Err(Error::TimestepOutOfRange {
            t,
            lo: 1,
            hi: sched.steps(),
        });
    }
    Ok(())
}

/// DDIM inversion `x_0 -> x_{t_e}`, storing every intermediate latent.
///
/// The step leaving `t = 0` evaluates the predictor at `t = 1`.
pub fn encode_ddim(
    x0: &LatentImage,
    t_e: usize,
    model: &dyn NoisePredictor,
    sched: &NoiseSchedule,
) -> Result<Trajectory> {
    check_level(t_e, sched)?;
    let mut latents = Vec::with_capacity(t_e + 1);
    latents.push(x0.clone());
    for t in 0..t_e {
        let x_t = &latents[t];
        let eps = model.predict(x_t, t.max(1))?;
        let next = sched.ddim_invert_step(x_t, &eps, t)?;
        latents.push(next);
    }
    Ok(Trajectory {
        t_lo: 0,
        latents,
        condition: None,
        direction: Direction::Encode,
    })
}

/// Per-step latent transform applied at timestep `t` before the noise is predicted.
pub type Hook<'h> = dyn FnMut(usize, &mut LatentImage) -> Result<()> + 'h;

/// DDIM decoding from `x_from` at level `t_from` down to level `t_to`.
///
/// Before the denoising step at each `t` in `t_from..=t_to+1`, `hook` may
/// rewrite the current latent. The stored trajectory holds the supplied
/// boundary latent at `t_from` and every stepped latent below it.
pub fn decode_range(
    x_from: &LatentImage,
    t_from: usize,
    t_to: usize,
    model: &dyn NoisePredictor,
    sched: &NoiseSchedule,
    hook: &mut Hook<'_>,
) -> Result<Trajectory> {
    check_level(t_from, sched)?;
    if t_to >= t_from {
        return Err(Error::TimestepOutOfRange {
            t: t_to,
            lo: 0,
            hi: t_from - 1,
        });
    }
    // Filled from the top; reversed at the end so index 0 is t_to.
    let mut latents = Vec::with_capacity(t_from - t_to + 1);
    latents.push(x_from.clone());
    let mut y = x_from.clone();
    for t in (t_to + 1..=t_from).rev() {
        hook(t, &mut y)?;
        let eps = model.predict(&y, t)?;
        y = sched.ddim_step(&y, &eps, t)?;
        latents.push(y.clone());
    }
    latents.reverse();
    Ok(Trajectory {
        t_lo: t_to,
        latents,
        condition: None,
        direction: Direction::Decode,
    })
}

/// DDIM decoding `x_{t_e} -> x_0` with a per-step hook.
pub fn decode_ddim(
    x_te: &LatentImage,
    t_e: usize,
    model: &dyn NoisePredictor,
    sched: &NoiseSchedule,
    hook: &mut Hook<'_>,
) -> Result<Trajectory> {
    decode_range(x_te, t_e, 0, model, sched, hook)
}

/// Identity hook.
pub fn no_hook() -> impl FnMut(usize, &mut LatentImage) -> Result<()> {
    |_, _| Ok(())
}

/// Inversion under the mixture denoiser with a fixed condition.
pub fn encode_conditioned(
    x0: &LatentImage,
    t_e: usize,
    cond: Condition,
    mix: &SceneMixture,
    sched: &NoiseSchedule,
) -> Result<Trajectory> {
    let mut traj = encode_ddim(x0, t_e, &Conditioned::new(mix, cond, sched), sched)?;
    traj.condition = Some(cond);
    Ok(traj)
}

/// Decoding under the mixture denoiser with a fixed condition.
pub fn decode_conditioned(
    x_te: &LatentImage,
    t_e: usize,
    cond: Condition,
    mix: &SceneMixture,
    sched: &NoiseSchedule,
    hook: &mut Hook<'_>,
) -> Result<Trajectory> {
    let mut traj = decode_ddim(x_te, t_e, &Conditioned::new(mix, cond, sched), sched, hook)?;
    traj.condition = Some(cond);
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{Position, SceneConfig};

    fn point_mass() -> SceneMixture {
        SceneMixture::build(&SceneConfig {
            palette: vec![vec![0.6, 0.3, 0.1]],
            grid_rows: vec![7],
            grid_cols: vec![7],
            sigma: 0.0,
            ..SceneConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn shortest_encode_has_two_latents() {
        let mix = point_mass();
        let sched = NoiseSchedule::cosine(25).unwrap();
        let x0 = mix.components()[0].mean.clone();
        let traj = encode_conditioned(&x0, 1, Condition::null(), &mix, &sched).unwrap();
        assert_eq!(traj.len(), 2);
        assert_eq!(traj.first(), &x0);
        assert_eq!(traj.direction(), Direction::Encode);
    }

    #[test]
    fn point_mass_decodes_to_its_mean_from_anywhere() {
        let mix = point_mass();
        let sched = NoiseSchedule::cosine(25).unwrap();
        let mu = &mix.components()[0].mean;
        for seed in 0..3 {
            let x_t = LatentImage::standard_normal(16, 16, 3, seed);
            let traj =
                decode_conditioned(&x_t, 25, Condition::null(), &mix, &sched, &mut no_hook())
                    .unwrap();
            assert_eq!(traj.at(25).unwrap(), &x_t);
            for (a, b) in traj.first().as_slice().iter().zip(mu.as_slice()) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn replacing_hook_forces_stored_output() {
        let mix = SceneMixture::build(&SceneConfig::default()).unwrap();
        let sched = NoiseSchedule::cosine(25).unwrap();
        let cond = Condition::both(1, Position::new(4, 7));
        let x0 = mix.components()[10].mean.clone();
        let stored = encode_conditioned(&x0, 10, cond, &mix, &sched).unwrap();
        let reference =
            decode_conditioned(stored.last(), 10, cond, &mix, &sched, &mut no_hook()).unwrap();

        let garbage = LatentImage::standard_normal(16, 16, 3, 77);
        let mut replace = |t: usize, y: &mut LatentImage| {
            if t == 10 {
                *y = stored.at(10).unwrap().clone();
            }
            Ok(())
        };
        let forced = decode_conditioned(&garbage, 10, cond, &mix, &sched, &mut replace).unwrap();
        assert_eq!(forced.first(), reference.first());
    }

    #[test]
    fn hooks_see_every_step_in_order() {
        let mix = point_mass();
        let sched = NoiseSchedule::cosine(25).unwrap();
        let x = LatentImage::standard_normal(16, 16, 3, 1);
        let mut seen = Vec::new();
        let mut record = |t: usize, _: &mut LatentImage| {
            seen.push(t);
            Ok(())
        };
        decode_conditioned(&x, 6, Condition::null(), &mix, &sched, &mut record).unwrap();
        assert_eq!(seen, vec![6, 5, 4, 3, 2, 1]);
    }

    #[test]
    fn decode_range_stops_early() {
        let mix = point_mass();
        let sched = NoiseSchedule::cosine(25).unwrap();
        let x = LatentImage::standard_normal(16, 16, 3, 1);
        let model = Conditioned::new(&mix, Condition::null(), &sched);
        let traj = decode_range(&x, 25, 1, &model, &sched, &mut no_hook()).unwrap();
        assert_eq!((traj.t_lo(), traj.t_hi()), (1, 25));
        assert!(decode_range(&x, 5, 5, &model, &sched, &mut no_hook()).is_err());
        assert!(encode_ddim(&x, 0, &model, &sched).is_err());
        assert!(encode_ddim(&x, 26, &model, &sched).is_err());
    }
}
