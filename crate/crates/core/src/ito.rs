//! Inference-time optimisation of diffusion latents.
//!
//! During decoding, the latent `y_t` of the edited image is nudged by a few
//! optimiser steps on
//!
//! `(1 - lambda) * L_g(y_t, g_t) + lambda * L_rec(y_t, x_t, m)`
//!
//! where `x_t` is the inversion trajectory of the input, `g_t` that of a
//! guidance image and `m` the preservation mask (the complement of the edit
//! region). `L_rec` is a masked squared error, `L_g` one minus the cosine
//! similarity.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::{LatentImage, WeightMap};
use crate::mask::{estimate_mask, EditMask};
use crate::params::EditParams;
use crate::sampler::{decode_conditioned, encode_conditioned, no_hook, Trajectory};
use crate::scene::{Condition, SceneMixture};
use crate::schedule::NoiseSchedule;

/// `sum (m*y - m*x)^2` and its gradient `2 m^2 (y - x)`, with `m` broadcast
/// over channels.
pub fn preservation_loss_grad(
    y: &LatentImage,
    x: &LatentImage,
    mask: &WeightMap,
) -> Result<(f64, LatentImage)> {
    y.ensure_same_shape(x)?;
    mask.ensure_matches(y)?;
    let ch = y.channels();
    let mut grad = LatentImage::zeros(y.height(), y.width(), ch);
    let mut loss = 0.0;
    for (i, ((g, yv), xv)) in grad
        .as_mut_slice()
        .iter_mut()
        .zip(y.as_slice())
        .zip(x.as_slice())
        .enumerate()
    {
        let m = mask.values()[i / ch];
        let d = m * yv - m * xv;
        loss += d * d;
        *g = 2.0 * m * m * (yv - xv);
    }
    Ok((loss, grad))
}

/// `1 - cos(y, g)` over the flattened latents, and its gradient in `y`.
pub fn guidance_loss_grad(y: &LatentImage, g: &LatentImage) -> Result<(f64, LatentImage)> {
    y.ensure_same_shape(g)?;
    let ny = y.norm();
    let ng = g.norm();
    if ny == 0.0 {
        return Err(Error::DegenerateLatent("edited latent"));
    }
    if ng == 0.0 {
        return Err(Error::DegenerateLatent("guidance latent"));
    }
    let dot = y.dot(g)?;
    let cos = dot / (ny * ng);
    let a = 1.0 / (ny * ng);
    let b = dot / (ny * ny * ny * ng);
    // d/dy cos = g / (|y||g|) - (y.g) y / (|y|^3 |g|)
    let grad = g.lin_comb(-a, y, b)?;
    Ok((1.0 - cos, grad))
}

/// Adam with bias-corrected moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(lr: f64, len: usize) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[f64], &[f64]) {
        (&self.m, &self.v)
    }

    pub fn reset(&mut self) {
        self.step = 0;
        self.m.iter_mut().for_each(|v| *v = 0.0);
        self.v.iter_mut().for_each(|v| *v = 0.0);
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), self.m.len(), "parameter length changed");
        assert_eq!(grad.len(), self.m.len(), "gradient length mismatch");
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Weighting and step budget of one latent update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateRule {
    pub lambda: f64,
    pub gamma: f64,
    pub k: usize,
}

impl From<&EditParams> for UpdateRule {
    fn from(p: &EditParams) -> Self {
        Self {
            lambda: p.lambda,
            gamma: p.gamma,
            k: p.k,
        }
    }
}

/// Loss terms of the combined objective at one latent.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossTerms {
    pub preservation: Option<f64>,
    pub guidance: Option<f64>,
    pub total: f64,
}

/// Value and gradient of `(1 - lambda) L_g(y, g) + lambda L_rec(y, x, m)`.
/// A term with zero weight is skipped, so its reference may be absent.
pub fn combined_loss_grad(
    y: &LatentImage,
    x: Option<&LatentImage>,
    g: Option<&LatentImage>,
    preserve: &WeightMap,
    lambda: f64,
) -> Result<(LossTerms, LatentImage)> {
    let (h, w, c) = y.shape();
    let mut grad = LatentImage::zeros(h, w, c);
    let mut terms = LossTerms::default();
    if lambda > 0.0 {
        let x = x.ok_or_else(|| {
            Error::InvalidParams("preservation reference missing with lambda > 0".into())
        })?;
        let (l, gr) = preservation_loss_grad(y, x, preserve)?;
        terms.preservation = Some(l);
        terms.total += lambda * l;
        grad = grad.lin_comb(1.0, &gr, lambda)?;
    }
    if lambda < 1.0 {
        let g = g.ok_or_else(|| {
            Error::InvalidParams("guidance reference missing with lambda < 1".into())
        })?;
        let (l, gr) = guidance_loss_grad(y, g)?;
        terms.guidance = Some(l);
        terms.total += (1.0 - lambda) * l;
        grad = grad.lin_comb(1.0, &gr, 1.0 - lambda)?;
    }
    Ok((terms, grad))
}

/// Runs `rule.k` optimiser steps on `y` against the combined objective.
/// The optimiser state carries over between the `k` steps; callers reset it
/// between timesteps.
pub fn ito_update(
    y: &LatentImage,
    x: Option<&LatentImage>,
    g: Option<&LatentImage>,
    preserve: &WeightMap,
    rule: &UpdateRule,
    opt: &mut Adam,
) -> Result<LatentImage> {
    let mut out = y.clone();
    opt.lr = rule.gamma;
    for _ in 0..rule.k {
        let (_, grad) = combined_loss_grad(&out, x, g, preserve, rule.lambda)?;
        opt.step(out.as_mut_slice(), grad.as_slice());
    }
    Ok(out)
}

/// Loss values recorded before the update at one decode timestep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub t: usize,
    pub losses: LossTerms,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Ours,
    DiffEdit,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Ours => "ours",
            Method::DiffEdit => "diffedit",
        }
    }
}

/// Output of an edit together with its intermediate artifacts.
#[derive(Debug, Clone, PartialEq)]
pub struct EditResult {
    pub method: Method,
    pub input: LatentImage,
    pub edited: LatentImage,
    pub guidance: Option<LatentImage>,
    pub guidance_skipped: bool,
    pub mask: EditMask,
    /// Inversion trajectory of the input.
    pub source_trajectory: Trajectory,
    /// Inversion trajectory of the guidance image, when one was generated.
    pub guidance_trajectory: Option<Trajectory>,
    /// Decode trajectory of the edited latent (pre-update latents).
    pub edit_trajectory: Trajectory,
    pub steps: Vec<StepLog>,
}

fn first_updated(t_e: usize, t_u: usize) -> usize {
    // Timesteps t_e, t_e-1, ..., t_e-t_u+1 receive updates.
    t_e + 1 - t_u.min(t_e)
}

/// Builds a guidance image: random-noise encoding of `x0` followed by a
/// decode under `cond_edit` with preservation-only updates. The reference
/// at level `t` is the random-noise encoding of `x0` to `t` with the same
/// noise draw.
pub fn generate_guidance(
    x0: &LatentImage,
    cond_edit: Condition,
    preserve: &WeightMap,
    params: &EditParams,
    mix: &SceneMixture,
    sched: &NoiseSchedule,
    seed: u64,
) -> Result<LatentImage> {
    let (h, w, c) = x0.shape();
    let noise = LatentImage::standard_normal(h, w, c, seed);
    let start = sched.stochastic_encode(x0, params.t_e, &noise)?;
    let rule = UpdateRule {
        lambda: 1.0,
        ..UpdateRule::from(params)
    };
    let lowest = first_updated(params.t_e, params.t_u);
    let mut hook = |t: usize, y: &mut LatentImage| -> Result<()> {
        if params.t_u == 0 || t < lowest {
            return Ok(());
        }
        let reference = sched.stochastic_encode(x0, t, &noise)?;
        let mut opt = Adam::new(rule.gamma, y.len());
        *y = ito_update(y, Some(&reference), None, preserve, &rule, &mut opt)?;
        Ok(())
    };
    let traj = decode_conditioned(&start, params.t_e, cond_edit, mix, sched, &mut hook)?;
    Ok(traj.first().clone())
}

/// Full edit: mask estimation, guidance generation (skipped at
/// `lambda == 1`) and the optimised decode.
pub fn run_edit(
    x0: &LatentImage,
    cond_o: Condition,
    cond_edit: Condition,
    params: &EditParams,
    mix: &SceneMixture,
    sched: &NoiseSchedule,
) -> Result<EditResult> {
    params.validate(sched.steps())?;
    let mask = estimate_mask(x0, cond_o, cond_edit, params, mix, sched)?;
    run_edit_with_mask(x0, cond_o, cond_edit, mask, params, mix, sched)
}

/// [`run_edit`] with a caller-supplied edit mask.
pub fn run_edit_with_mask(
    x0: &LatentImage,
    cond_o: Condition,
    cond_edit: Condition,
    mask: EditMask,
    params: &EditParams,
    mix: &SceneMixture,
    sched: &NoiseSchedule,
) -> Result<EditResult> {
    params.validate(sched.steps())?;
    check_mask(&mask, x0)?;
    let preserve = mask.preservation_weights();
    let t_e = params.t_e;

    let guidance_skipped = params.lambda >= 1.0;
    let (guidance, guidance_trajectory) = if guidance_skipped {
        (None, None)
    } else {
        let g0 = generate_guidance(
            x0,
            cond_edit,
            &preserve,
            params,
            mix,
            sched,
            params.guidance_seed,
        )?;
        let g_cond = params.guidance_inversion.condition(cond_o, cond_edit);
        let traj = encode_conditioned(&g0, t_e, g_cond, mix, sched)?;
        (Some(g0), Some(traj))
    };

    let x_cond = params.inversion.condition(cond_o, cond_edit);
    let source = encode_conditioned(x0, t_e, x_cond, mix, sched)?;

    let rule = UpdateRule::from(params);
    let lowest = first_updated(t_e, params.t_u);
    let mut steps = Vec::with_capacity(params.t_u);
    let mut hook = |t: usize, y: &mut LatentImage| -> Result<()> {
        if t < lowest {
            return Ok(());
        }
        let x_ref = source.at(t);
        let g_ref = guidance_trajectory.as_ref().and_then(|g| g.at(t));
        let (losses, _) = combined_loss_grad(y, x_ref, g_ref, &preserve, rule.lambda)?;
        steps.push(StepLog { t, losses });
        let mut opt = Adam::new(rule.gamma, y.len());
        *y = ito_update(y, x_ref, g_ref, &preserve, &rule, &mut opt)?;
        Ok(())
    };
    let edit_trajectory = decode_conditioned(source.last(), t_e, cond_edit, mix, sched, &mut hook)?;

    Ok(EditResult {
        method: Method::Ours,
        input: x0.clone(),
        edited: edit_trajectory.first().clone(),
        guidance,
        guidance_skipped,
        mask,
        source_trajectory: source,
        guidance_trajectory,
        edit_trajectory,
        steps,
    })
}

/// Blending baseline: after every denoising step the latent outside the
/// edit mask is replaced by the input's inversion latent at the same level.
pub fn diffedit_baseline(
    x0: &LatentImage,
    cond_o: Condition,
    cond_edit: Condition,
    params: &EditParams,
    mix: &SceneMixture,
    sched: &NoiseSchedule,
) -> Result<EditResult> {
    params.validate(sched.steps())?;
    let mask = estimate_mask(x0, cond_o, cond_edit, params, mix, sched)?;
    diffedit_with_mask(x0, cond_o, cond_edit, mask, params, mix, sched)
}

/// [`diffedit_baseline`] with a caller-supplied edit mask.
pub fn diffedit_with_mask(
    x0: &LatentImage,
    cond_o: Condition,
    cond_edit: Condition,
    mask: EditMask,
    params: &EditParams,
    mix: &SceneMixture,
    sched: &NoiseSchedule,
) -> Result<EditResult> {
    params.validate(sched.steps())?;
    check_mask(&mask, x0)?;
    let t_e = params.t_e;
    let x_cond = params.inversion.condition(cond_o, cond_edit);
    let source = encode_conditioned(x0, t_e, x_cond, mix, sched)?;
    let edit = mask.edit_weights();

    let mut hook = |t: usize, y: &mut LatentImage| -> Result<()> {
        if t < t_e {
            *y = blend(y, source.at(t).expect("inversion covers 0..=t_e"), &edit)?;
        }
        Ok(())
    };
    let edit_trajectory = decode_conditioned(source.last(), t_e, cond_edit, mix, sched, &mut hook)?;
    let edited = blend(edit_trajectory.first(), source.first(), &edit)?;

    Ok(EditResult {
        method: Method::DiffEdit,
        input: x0.clone(),
        edited,
        guidance: None,
        guidance_skipped: true,
        mask,
        source_trajectory: source,
        guidance_trajectory: None,
        edit_trajectory,
        steps: Vec::new(),
    })
}

/// `m * y + (1 - m) * x`
pub fn blend(y: &LatentImage, x: &LatentImage, m: &WeightMap) -> Result<LatentImage> {
    y.ensure_same_shape(x)?;
    m.ensure_matches(y)?;
    let ch = y.channels();
    let mut out = y.clone();
    for (i, (o, xv)) in out.as_mut_slice().iter_mut().zip(x.as_slice()).enumerate() {
        let w = m.values()[i / ch];
        *o = w * *o + (1.0 - w) * xv;
    }
    Ok(out)
}

/// Refines a guidance image with guidance-only updates that pull its decode
/// toward the inversion trajectory of the input image.
///
/// `g0` is inverted and decoded under `cond_g`, the condition describing
/// its content; the input is inverted following `params.inversion`.
pub fn refine_guidance(
    g0: &LatentImage,
    x0: &LatentImage,
    cond_o: Condition,
    cond_g: Condition,
    params: &EditParams,
    mix: &SceneMixture,
    sched: &NoiseSchedule,
) -> Result<LatentImage> {
    if params.lambda != 0.0 {
        return Err(Error::InvalidParams(format!(
            "guidance refinement uses the guidance loss only (lambda = 0), got {}",
            params.lambda
        )));
    }
    g0.ensure_same_shape(x0)?;
    let t_e = params.t_e;
    if t_e < 1 || t_e > sched.steps() {
        return Err(Error::InvalidParams(format!(
            "t_e must lie in 1..={}",
            sched.steps()
        )));
    }
    let g_traj = encode_conditioned(g0, t_e, cond_g, mix, sched)?;
    if params.t_u == 0 {
        let traj = decode_conditioned(g_traj.last(), t_e, cond_g, mix, sched, &mut no_hook())?;
        return Ok(traj.first().clone());
    }
    let reference = encode_conditioned(
        x0,
        t_e,
        params.inversion.condition(cond_o, cond_g),
        mix,
        sched,
    )?;
    let preserve = WeightMap::filled(x0.height(), x0.width(), 0.0);
    let rule = UpdateRule::from(params);
    let lowest = first_updated(t_e, params.t_u);
    let mut hook = |t: usize, y: &mut LatentImage| -> Result<()> {
        if t < lowest {
            return Ok(());
        }
        let mut opt = Adam::new(rule.gamma, y.len());
        *y = ito_update(y, None, reference.at(t), &preserve, &rule, &mut opt)?;
        Ok(())
    };
    let traj = decode_conditioned(g_traj.last(), t_e, cond_g, mix, sched, &mut hook)?;
    Ok(traj.first().clone())
}

fn check_mask(mask: &EditMask, x0: &LatentImage) -> Result<()> {
    if mask.height != x0.height() || mask.width != x0.width() {
        return Err(Error::ShapeMismatch {
            expected: x0.shape(),
            actual: (mask.height, mask.width, x0.channels()),
        });
    }
    Ok(())
}
