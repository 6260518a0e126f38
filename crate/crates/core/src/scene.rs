//! Synthetic conditioned scenes and their exact denoiser.
//!
//! Every scene is a class glyph stamped at a layout anchor over a fixed,
//! class-independent background. The data distribution is a mixture of
//! isotropic Gaussians centred on those renders, one component per
//! `(class, position)` pair, so the Bayes-optimal noise predictor has a
//! closed form and stands in for a trained diffusion network.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::LatentImage;
use crate::schedule::NoiseSchedule;

/// Glyph anchor: the centre pixel of the square glyph footprint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Position {
    pub row: usize,
    pub col: usize,
}

impl Position {
    pub const fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }
}

impl fmt::Display for Position {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.row, self.col)
    }
}

/// Conditioning signal. `class_id` plays the role of a text prompt and
/// `layout` that of a spatial layout input; both absent is the null
/// (unconditional) condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Condition {
    #[serde(default)]
    pub class_id: Option<usize>,
    #[serde(default)]
    pub layout: Option<Position>,
}

impl Condition {
    pub const fn null() -> Self {
        Self {
            class_id: None,
            layout: None,
        }
    }

    pub const fn class(class_id: usize) -> Self {
        Self {
            class_id: Some(class_id),
            layout: None,
        }
    }

    pub const fn layout(position: Position) -> Self {
        Self {
            class_id: None,
            layout: Some(position),
        }
    }

    pub const fn both(class_id: usize, position: Position) -> Self {
        Self {
            class_id: Some(class_id),
            layout: Some(position),
        }
    }

    pub fn is_null(&self) -> bool {
        self.class_id.is_none() && self.layout.is_none()
    }

    /// Whether a component with these attributes is consistent with the condition.
    pub fn admits(&self, class_id: usize, position: Position) -> bool {
        self.class_id.is_none_or(|c| c == class_id) && self.layout.is_none_or(|p| p == position)
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.class_id, self.layout) {
            (None, None) => write!(f, "null"),
            (Some(c), None) => write!(f, "class {c}"),
            (None, Some(p)) => write!(f, "layout {p}"),
            (Some(c), Some(p)) => write!(f, "class {c} at {p}"),
        }
    }
}

/// Canvas, glyph palette and mixture parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Side length of the square glyph footprint (odd).
    pub glyph_size: usize,
    /// Base intensity per class, one entry per channel.
    pub palette: Vec<Vec<f64>>,
    /// Anchor rows and columns of the position grid.
    pub grid_rows: Vec<usize>,
    pub grid_cols: Vec<usize>,
    /// Per-pixel standard deviation of each mixture component.
    pub sigma: f64,
    pub background_level: f64,
    pub background_gradient: f64,
    pub texel_amplitude: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            height: 16,
            width: 16,
            channels: 3,
            glyph_size: 5,
            palette: vec![
                vec![0.2, 0.8, 0.0],
                vec![0.8, 0.2, 0.2],
                vec![0.5, 0.5, -0.3],
                vec![0.0, 0.4, 0.25],
            ],
            grid_rows: vec![4, 7, 10],
            grid_cols: vec![4, 7, 10],
            sigma: 0.05,
            background_level: -0.6,
            background_gradient: 0.3,
            texel_amplitude: 0.1,
        }
    }
}

impl SceneConfig {
    pub fn classes(&self) -> usize {
        self.palette.len()
    }

    pub fn positions(&self) -> Vec<Position> {
        self.grid_rows
            .iter()
            .flat_map(|&r| self.grid_cols.iter().map(move |&c| Position::new(r, c)))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.channels == 0 {
            return Err(Error::InvalidScene(
                "canvas dimensions must be positive".into(),
            ));
        }
        if self.glyph_size == 0 || self.glyph_size.is_multiple_of(2) {
            return Err(Error::InvalidScene(format!(
                "glyph size must be odd, got {}",
                self.glyph_size
            )));
        }
        if self.palette.is_empty() {
            return Err(Error::InvalidScene("palette has no classes".into()));
        }
        if let Some(bad) = self.palette.iter().position(|p| p.len() != self.channels) {
            return Err(Error::InvalidScene(format!(
                "palette entry {bad} does not have {} channels",
                self.channels
            )));
        }
        if self.grid_rows.is_empty() || self.grid_cols.is_empty() {
            return Err(Error::InvalidScene("position grid is empty".into()));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidScene(format!(
                "sigma must be >= 0, got {}",
                self.sigma
            )));
        }
        for p in self.positions() {
            self.check_layout(p)?;
        }
        Ok(())
    }

    fn half(&self) -> usize {
        self.glyph_size / 2
    }

    pub fn check_layout(&self, p: Position) -> Result<()> {
        let h = self.half();
        if p.row < h || p.col < h || p.row + h >= self.height || p.col + h >= self.width {
            return Err(Error::LayoutOutOfBounds {
                row: p.row,
                col: p.col,
                height: self.height,
                width: self.width,
            });
        }
        Ok(())
    }

    /// Pixels covered by a glyph anchored at `p`, as an `H x W` row-major map.
    pub fn footprint(&self, p: Position) -> Result<Vec<bool>> {
        self.check_layout(p)?;
        let h = self.half();
        let mut map = vec![false; self.height * self.width];
        for r in p.row - h..=p.row + h {
            for c in p.col - h..=p.col + h {
                map[r * self.width + c] = true;
            }
        }
        Ok(map)
    }

    /// Union of the footprints at `a` and `b`.
    pub fn footprint_union(&self, a: Position, b: Position) -> Result<Vec<bool>> {
        let fa = self.footprint(a)?;
        let fb = self.footprint(b)?;
        Ok(fa.iter().zip(&fb).map(|(x, y)| *x || *y).collect())
    }

    pub fn background_value(&self, row: usize, col: usize, channel: usize) -> f64 {
        let span = (self.height + self.width).saturating_sub(2).max(1) as f64;
        let ramp = (row + col) as f64 / span - 0.5;
        // Five fixed texel levels in [-1, 1].
        let texel = ((row * 7 + col * 13 + channel * 5) % 5) as f64 / 2.0 - 1.0;
        self.background_level + self.background_gradient * ramp + self.texel_amplitude * texel
    }

    /// Glyph intensity at offset `(dr, dc)` inside the footprint. The
    /// offset-dependent pattern makes two placements of one glyph disagree on
    /// every pixel they share.
    pub fn glyph_value(&self, class_id: usize, dr: usize, dc: usize, channel: usize) -> f64 {
        let base = self.palette[class_id][channel];
        let sign = |k: usize| if k.is_multiple_of(2) { 1.0 } else { -1.0 };
        let pattern = match channel % 3 {
            0 => 0.15 * sign(dr),
            1 => 0.15 * sign(dc),
            _ => 0.03 * (dr * self.glyph_size + dc) as f64,
        };
        base + pattern
    }
}

/// Renders the mean image of class `class_id` anchored at `layout`.
pub fn render_scene(
    class_id: usize,
    layout: Position,
    config: &SceneConfig,
) -> Result<LatentImage> {
    if class_id >= config.classes() {
        return Err(Error::UnknownClass(class_id));
    }
    config.check_layout(layout)?;
    let (h, w, ch) = (config.height, config.width, config.channels);
    let mut img = LatentImage::zeros(h, w, ch);
    for r in 0..h {
        for c in 0..w {
            for k in 0..ch {
                img.set(r, c, k, config.background_value(r, c, k));
            }
        }
    }
    let half = config.glyph_size / 2;
    for dr in 0..config.glyph_size {
        for dc in 0..config.glyph_size {
            let (r, c) = (layout.row + dr - half, layout.col + dc - half);
            for k in 0..ch {
                img.set(r, c, k, config.glyph_value(class_id, dr, dc, k));
            }
        }
    }
    Ok(img)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub class_id: usize,
    pub position: Position,
    pub mean: LatentImage,
    pub weight: f64,
}

/// Condition-indexed isotropic Gaussian mixture over images.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneMixture {
    components: Vec<Component>,
    sigma: f64,
}

impl SceneMixture {
    /// One component per `(class, grid position)` pair with uniform priors.
    pub fn build(config: &SceneConfig) -> Result<Self> {
        config.validate()?;
        let positions = config.positions();
        let n = (config.classes() * positions.len()) as f64;
        let mut components = Vec::with_capacity(n as usize);
        for class_id in 0..config.classes() {
            for &position in &positions {
                components.push(Component {
                    class_id,
                    position,
                    mean: render_scene(class_id, position, config)?,
                    weight: 1.0 / n,
                });
            }
        }
        Self::from_components(components, config.sigma)
    }

    pub fn from_components(components: Vec<Component>, sigma: f64) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| Error::InvalidScene("mixture has no components".into()))?;
        let shape = first.mean.shape();
        if let Some(bad) = components.iter().position(|c| c.mean.shape() != shape) {
            return Err(Error::InvalidScene(format!(
                "component {bad} has shape {:?}, expected {shape:?}",
                components[bad].mean.shape()
            )));
        }
        if components.iter().any(|c| !(c.weight > 0.0)) {
            return Err(Error::InvalidScene(
                "component weights must be positive".into(),
            ));
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidScene(format!(
                "weights sum to {total}, not 1"
            )));
        }
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidScene(format!(
                "sigma must be >= 0, got {sigma}"
            )));
        }
        Ok(Self { components, sigma })
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.components[0].mean.shape()
    }

    /// Indices of components the condition admits.
    pub fn admitted(&self, cond: &Condition) -> Vec<usize> {
        self.components
            .iter()
            .enumerate()
            .filter(|(_, c)| cond.admits(c.class_id, c.position))
            .map(|(i, _)| i)
            .collect()
    }

    /// Posterior responsibilities `(component index, r_j)` over admitted components.
    pub fn responsibilities(
        &self,
        x_t: &LatentImage,
        t: usize,
        cond: &Condition,
        sched: &NoiseSchedule,
    ) -> Result<Vec<(usize, f64)>> {
        self.check_input(x_t, t, sched)?;
        let admitted = self.admitted(cond);
        if admitted.is_empty() {
            return Err(Error::InconsistentCondition(cond.to_string()));
        }
        let a = sched.alpha_bar(t);
        let sa = a.sqrt();
        let var = a * self.sigma * self.sigma + 1.0 - a;
        let logits: Vec<f64> = admitted
            .iter()
            .map(|&j| {
                let comp = &self.components[j];
                let d2: f64 = x_t
                    .as_slice()
                    .iter()
                    .zip(comp.mean.as_slice())
                    .map(|(x, m)| {
                        let d = x - sa * m;
                        d * d
                    })
                    .sum();
                comp.weight.ln() - d2 / (2.0 * var)
            })
            .collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let unnorm: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = unnorm.iter().sum();
        Ok(admitted
            .into_iter()
            .zip(unnorm)
            .map(|(j, w)| (j, w / total))
            .collect())
    }

    /// Posterior mean `E[x_0 | x_t, cond]`.
    pub fn posterior_mean(
        &self,
        x_t: &LatentImage,
        t: usize,
        cond: &Condition,
        sched: &NoiseSchedule,
    ) -> Result<LatentImage> {
        let resp = self.responsibilities(x_t, t, cond, sched)?;
        let a = sched.alpha_bar(t);
        let sa = a.sqrt();
        let var = a * self.sigma * self.sigma + 1.0 - a;
        let shrink = sa * self.sigma * self.sigma / var;

        // sum_j r_j (mu_j + shrink (x - sa mu_j)) = (1 - shrink sa) sum_j r_j mu_j + shrink x
        let mut mean_mix = vec![0.0; x_t.len()];
        for (j, r) in resp {
            for (acc, m) in mean_mix.iter_mut().zip(self.components[j].mean.as_slice()) {
                *acc += r * m;
            }
        }
        let keep = 1.0 - shrink * sa;
        let data = mean_mix
            .iter()
            .zip(x_t.as_slice())
            .map(|(m, x)| keep * m + shrink * x)
            .collect();
        let (h, w, c) = x_t.shape();
        LatentImage::from_vec(h, w, c, data)
    }

    /// Exact noise prediction `eps(x_t, t, cond)`.
    pub fn predict_eps(
        &self,
        x_t: &LatentImage,
        t: usize,
        cond: &Condition,
        sched: &NoiseSchedule,
    ) -> Result<LatentImage> {
        let x0_hat = self.posterior_mean(x_t, t, cond, sched)?;
        let a = sched.alpha_bar(t);
        let (sa, sn) = (a.sqrt(), (1.0 - a).sqrt());
        x_t.zip_map(&x0_hat, |x, m| (x - sa * m) / sn)
    }

    /// Nearest-mean classification; ties resolve to the lowest component index.
    pub fn classify(&self, x0: &LatentImage) -> Result<(usize, Position)> {
        let mut best: Option<(usize, f64)> = None;
        for (j, comp) in self.components.iter().enumerate() {
            let d = x0.squared_distance(&comp.mean)?;
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((j, d));
            }
        }
        let (j, _) = best.expect("mixture is never empty");
        Ok((self.components[j].class_id, self.components[j].position))
    }

    fn check_input(&self, x_t: &LatentImage, t: usize, sched: &NoiseSchedule) -> Result<()> {
        if x_t.shape() != self.shape() {
            return Err(Error::ShapeMismatch {
                expected: self.shape(),
                actual: x_t.shape(),
            });
        }
        if t == 0 || t > sched.steps() {
            return Err(Error::TimestepOutOfRange {
                t,
                lo: 1,
                hi: sched.steps(),
            });
        }
        Ok(())
    }
}
