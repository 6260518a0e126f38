//! Preservation and edit-success measurements.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ito::EditResult;
use crate::latent::LatentImage;
use crate::scene::{Position, SceneConfig, SceneMixture};

/// Mean absolute difference over the pixels selected by `region` (all
/// channels of each selected pixel), or over the whole image.
pub fn l1(a: &LatentImage, b: &LatentImage, region: Option<&[bool]>) -> Result<f64> {
    a.ensure_same_shape(b)?;
    let ch = a.channels();
    match region {
        None => {
            let sum: f64 = a
                .as_slice()
                .iter()
                .zip(b.as_slice())
                .map(|(x, y)| (x - y).abs())
                .sum();
            Ok(sum / a.len() as f64)
        }
        Some(region) => {
            if region.len() != a.pixels() {
                return Err(Error::InvalidShape(format!(
                    "region has {} pixels, latent has {}",
                    region.len(),
                    a.pixels()
                )));
            }
            let mut sum = 0.0;
            let mut count = 0usize;
            for (p, _) in region.iter().enumerate().filter(|(_, r)| **r) {
                let xs = &a.as_slice()[p * ch..(p + 1) * ch];
                let ys = &b.as_slice()[p * ch..(p + 1) * ch];
                sum += xs.iter().zip(ys).map(|(x, y)| (x - y).abs()).sum::<f64>();
                count += ch;
            }
            if count == 0 {
                return Err(Error::EmptyRegion);
            }
            Ok(sum / count as f64)
        }
    }
}

/// Intersection over union of two binary maps; two empty maps score 1.
pub fn iou(a: &[bool], b: &[bool]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::InvalidShape(format!(
            "maps have {} and {} pixels",
            a.len(),
            b.len()
        )));
    }
    let inter = a.iter().zip(b).filter(|(x, y)| **x && **y).count();
    let union = a.iter().zip(b).filter(|(x, y)| **x || **y).count();
    Ok(if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    })
}

/// Attributes of the scene before and after an edit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub source_class: usize,
    pub source_position: Position,
    pub target_class: usize,
    pub target_position: Position,
}

impl GroundTruth {
    pub fn is_identity(&self) -> bool {
        self.source_class == self.target_class && self.source_position == self.target_position
    }

    /// Pixels covered by the source or target glyph.
    pub fn footprint(&self, config: &SceneConfig) -> Result<Vec<bool>> {
        config.footprint_union(self.source_position, self.target_position)
    }

    /// Complement of [`GroundTruth::footprint`].
    pub fn background(&self, config: &SceneConfig) -> Result<Vec<bool>> {
        Ok(self.footprint(config)?.into_iter().map(|b| !b).collect())
    }
}

/// One row of an evaluation report.
///
/// CSV column order: `l1_full, l1_background, edit_success,
/// original_retained, mask_iou`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub l1_full: f64,
    pub l1_background: f64,
    pub edit_success: bool,
    pub original_retained: bool,
    pub mask_iou: f64,
}

impl MetricsRecord {
    pub const COLUMNS: [&'static str; 5] = [
        "l1_full",
        "l1_background",
        "edit_success",
        "original_retained",
        "mask_iou",
    ];
}

/// Scores an image against the input and the edit's ground truth.
pub fn evaluate_image(
    input: &LatentImage,
    edited: &LatentImage,
    mask: &[bool],
    truth: &GroundTruth,
    mix: &SceneMixture,
    config: &SceneConfig,
) -> Result<MetricsRecord> {
    let footprint = truth.footprint(config)?;
    let background: Vec<bool> = footprint.iter().map(|b| !b).collect();
    let (class, pos) = mix.classify(edited)?;
    Ok(MetricsRecord {
        l1_full: l1(input, edited, None)?,
        l1_background: l1(input, edited, Some(&background))?,
        edit_success: class == truth.target_class && pos == truth.target_position,
        original_retained: class == truth.source_class && pos == truth.source_position,
        mask_iou: iou(mask, &footprint)?,
    })
}

pub fn evaluate(
    result: &EditResult,
    truth: &GroundTruth,
    mix: &SceneMixture,
    config: &SceneConfig,
) -> Result<MetricsRecord> {
    evaluate_image(
        &result.input,
        &result.edited,
        &result.mask.binary,
        truth,
        mix,
        config,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::render_scene;

    #[test]
    fn l1_basic_cases() {
        let a = LatentImage::standard_normal(4, 4, 3, 1);
        assert_eq!(l1(&a, &a, None).unwrap(), 0.0);
        let b = a.map(|v| v + 0.5);
        assert!((l1(&a, &b, None).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(l1(&a, &b, Some(&[false; 16])), Err(Error::EmptyRegion));
        assert!(l1(&a, &b, Some(&[true; 3])).is_err());
    }

    #[test]
    fn iou_edge_cases() {
        assert_eq!(iou(&[false, false], &[false, false]).unwrap(), 1.0);
        assert_eq!(iou(&[true, false], &[false, true]).unwrap(), 0.0);
        assert_eq!(iou(&[true, true], &[true, false]).unwrap(), 0.5);
    }

    #[test]
    fn exact_target_render_counts_as_success() {
        let config = SceneConfig::default();
        let mix = SceneMixture::build(&config).unwrap();
        let truth = GroundTruth {
            source_class: 0,
            source_position: Position::new(4, 4),
            target_class: 0,
            target_position: Position::new(10, 10),
        };
        let input = render_scene(0, truth.source_position, &config).unwrap();
        let target = render_scene(0, truth.target_position, &config).unwrap();
        let gt = truth.footprint(&config).unwrap();

        let hit = evaluate_image(&input, &target, &gt, &truth, &mix, &config).unwrap();
        assert!(hit.edit_success && !hit.original_retained);
        assert_eq!(hit.mask_iou, 1.0);
        assert!(hit.l1_background.abs() < 1e-15);

        let miss = evaluate_image(&input, &input, &gt, &truth, &mix, &config).unwrap();
        assert!(!miss.edit_success && miss.original_retained);
        assert_eq!(miss.l1_full, 0.0);
    }
}
