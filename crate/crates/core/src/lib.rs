//! Diffusion image editing by inference-time optimisation of latents.
//!
//! The noise predictor is the exact posterior-mean denoiser of a
//! condition-indexed Gaussian mixture over small synthetic scenes, so every
//! sampler and optimiser step can be checked against closed forms.

pub mod corpus;
pub mod error;
pub mod ito;
pub mod latent;
pub mod mask;
pub mod metrics;
pub mod params;
pub mod sampler;
pub mod scene;
pub mod schedule;

pub use corpus::{enumerate_edits, sample_edits, EditCase, EditKind};
pub use error::{Error, Result};
pub use ito::{
    diffedit_baseline, diffedit_with_mask, generate_guidance, refine_guidance, run_edit,
    run_edit_with_mask, Adam, EditResult, Method, UpdateRule,
};
pub use latent::{LatentImage, WeightMap};
pub use mask::{estimate_mask, EditMask};
pub use metrics::{evaluate, l1, GroundTruth, MetricsRecord};
pub use params::{EditParams, InversionPolicy};
pub use sampler::{decode_ddim, encode_ddim, Trajectory};
pub use scene::{render_scene, Condition, Position, SceneConfig, SceneMixture};
pub use schedule::{NoiseSchedule, ScheduleKind};
