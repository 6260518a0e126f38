//! JSON run configuration.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use itoedit::{EditParams, InversionPolicy, NoiseSchedule, SceneConfig, ScheduleKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleSection {
    pub steps: usize,
    pub kind: ScheduleKind,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        Self {
            steps: 25,
            kind: ScheduleKind::Cosine,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EditSection {
    pub lambda: f64,
    pub gamma: f64,
    pub t_u: usize,
    pub k: usize,
    /// Fraction of the trajectory to encode; `t_e = round(ratio * steps)`.
    pub encoding_ratio: f64,
    /// Run seed from which mask and guidance seeds are derived.
    pub seed: u64,
    pub inversion: InversionPolicy,
    pub guidance_inversion: InversionPolicy,
}

impl Default for EditSection {
    fn default() -> Self {
        let p = EditParams::default();
        Self {
            lambda: p.lambda,
            gamma: p.gamma,
            t_u: p.t_u,
            k: p.k,
            encoding_ratio: 1.0,
            seed: 0,
            inversion: p.inversion,
            guidance_inversion: p.guidance_inversion,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaskSection {
    pub tau: f64,
    pub n_seeds: usize,
    pub sigma_blur: f64,
    /// Explicit mask seeds; when absent they derive from the run seed.
    pub seeds: Option<Vec<u64>>,
}

impl Default for MaskSection {
    fn default() -> Self {
        let p = EditParams::default();
        Self {
            tau: p.tau,
            n_seeds: p.n_seeds,
            sigma_blur: p.sigma_blur,
            seeds: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OutputSection {
    /// Output root; `ITOEDIT_OUT` and `--out` take precedence.
    pub root: Option<String>,
    /// Latent intensities mapped to the full 16-bit range in image files.
    pub intensity_range: [f64; 2],
    /// Nearest-neighbour upscaling of contact-sheet tiles.
    pub sheet_scale: usize,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            root: None,
            intensity_range: [-1.5, 1.5],
            sheet_scale: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub schedule: ScheduleSection,
    pub scene: SceneConfig,
    pub edit: EditSection,
    pub mask: MaskSection,
    pub output: OutputSection,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        serde_json::from_str(&text)
            .with_context(|| format!("invalid config file {}", path.display()))
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        Ok(NoiseSchedule::build(
            self.schedule.steps,
            self.schedule.kind,
        )?)
    }

    /// Resolves the sections into validated edit parameters.
    pub fn edit_params(&self, sched: &NoiseSchedule) -> Result<EditParams> {
        let e = &self.edit;
        let m = &self.mask;
        let mut p = EditParams {
            lambda: e.lambda,
            gamma: e.gamma,
            t_u: e.t_u,
            k: e.k,
            t_e: sched.encoding_level(e.encoding_ratio)?,
            tau: m.tau,
            n_seeds: m.n_seeds,
            sigma_blur: m.sigma_blur,
            inversion: e.inversion,
            guidance_inversion: e.guidance_inversion,
            ..EditParams::default()
        }
        .with_run_seed(e.seed);
        if let Some(seeds) = &m.seeds {
            p.seeds = seeds.clone();
            p.n_seeds = seeds.len();
        }
        p.validate(sched.steps())?;
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_resolve_to_library_defaults() {
        let c = Config::default();
        let s = c.schedule().unwrap();
        assert_eq!(c.edit_params(&s).unwrap(), EditParams::default());
    }

    #[test]
    fn partial_json_fills_defaults() {
        let c: Config = serde_json::from_str(r#"{"edit": {"lambda": 0.2}}"#).unwrap();
        assert_eq!(c.edit.lambda, 0.2);
        assert_eq!(c.edit.t_u, 15);
        assert_eq!(c.scene, SceneConfig::default());
        let back: Config = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }
}
