//! Deterministic edit corpora over the scene grid.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::LatentImage;
use crate::metrics::GroundTruth;
use crate::scene::{render_scene, Condition, SceneConfig};

/// Which attributes an edit may change.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EditKind {
    /// Same class, new position.
    Position,
    /// New class, same position.
    Class,
    /// Any non-identity change.
    #[default]
    Any,
}

impl std::str::FromStr for EditKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "position" => Ok(Self::Position),
            "class" => Ok(Self::Class),
            "any" => Ok(Self::Any),
            other => Err(Error::InvalidParams(format!("unknown edit kind '{other}'"))),
        }
    }
}

/// One edit: source scene, target attributes and the two conditions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditCase {
    pub truth: GroundTruth,
}

impl EditCase {
    pub fn cond_o(&self) -> Condition {
        Condition::both(self.truth.source_class, self.truth.source_position)
    }

    pub fn cond_edit(&self) -> Condition {
        Condition::both(self.truth.target_class, self.truth.target_position)
    }

    /// The rendered source scene.
    pub fn input(&self, config: &SceneConfig) -> Result<LatentImage> {
        render_scene(self.truth.source_class, self.truth.source_position, config)
    }

    /// The rendered ideal result.
    pub fn target(&self, config: &SceneConfig) -> Result<LatentImage> {
        render_scene(self.truth.target_class, self.truth.target_position, config)
    }
}

/// Every non-identity edit of the requested kind, in lexicographic order of
/// (source class, source position, target class, target position).
pub fn enumerate_edits(config: &SceneConfig, kind: EditKind) -> Vec<EditCase> {
    let positions = config.positions();
    let mut out = Vec::new();
    for sc in 0..config.classes() {
        for &sp in &positions {
            for tc in 0..config.classes() {
                for &tp in &positions {
                    let keep = match kind {
                        EditKind::Position => sc == tc && sp != tp,
                        EditKind::Class => sc != tc && sp == tp,
                        EditKind::Any => sc != tc || sp != tp,
                    };
                    if keep {
                        out.push(EditCase {
                            truth: GroundTruth {
                                source_class: sc,
                                source_position: sp,
                                target_class: tc,
                                target_position: tp,
                            },
                        });
                    }
                }
            }
        }
    }
    out
}

/// A seeded subsample of [`enumerate_edits`] of at most `size` cases. The
/// selected cases keep their enumeration order.
pub fn sample_edits(
    config: &SceneConfig,
    kind: EditKind,
    size: usize,
    seed: u64,
) -> Result<Vec<EditCase>> {
    let all = enumerate_edits(config, kind);
    if all.is_empty() {
        return Err(Error::InvalidScene(format!(
            "scene admits no {kind:?} edits"
        )));
    }
    let mut idx: Vec<usize> = (0..all.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx.truncate(size);
    idx.sort_unstable();
    Ok(idx.into_iter().map(|i| all[i]).collect())
}
