//! Command-line arguments.

use std::path::PathBuf;

use anyhow::{anyhow, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use itoedit::{EditKind, Position};

#[derive(Debug, Parser)]
#[command(
    name = "itoedit",
    version,
    about = "Diffusion image editing with latent optimisation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a scene, run one position edit and write all artifacts.
    Demo(DemoArgs),
    /// Render a scene to an image and a latent file.
    Render(RenderArgs),
    /// Edit an input image.
    Edit(EditArgs),
    /// Estimate the edit mask only.
    Mask(MaskArgs),
    /// Run a parameter grid over a generated edit corpus.
    Sweep(SweepArgs),
    /// Replay an edit from its manifest and check the latents match.
    Rerun(RerunArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// JSON configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output root directory.
    #[arg(long, env = "ITOEDIT_OUT")]
    pub out: Option<PathBuf>,
    /// Name of the run directory under the output root.
    #[arg(long)]
    pub run_name: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Default,
    RealImage,
    Refinement,
}

/// Overrides of configuration values.
#[derive(Debug, Clone, Default, Args)]
pub struct ParamArgs {
    #[arg(long)]
    pub preset: Option<Preset>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub t_u: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub n_seeds: Option<usize>,
    /// Explicit comma-separated mask seeds.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub sigma_blur: Option<f64>,
    #[arg(long)]
    pub encoding_ratio: Option<f64>,
    /// Run seed from which mask and guidance seeds derive.
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Source and target scene attributes.
#[derive(Debug, Clone, Args)]
pub struct EditTarget {
    /// Class of the input scene; inferred from the input when omitted.
    #[arg(long)]
    pub source_class: Option<usize>,
    /// Anchor `ROW,COL` of the input glyph; inferred when omitted.
    #[arg(long, value_parser = parse_position)]
    pub source_pos: Option<Position>,
    /// Target class; defaults to the source class.
    #[arg(long)]
    pub to_class: Option<usize>,
    /// Target anchor `ROW,COL`; defaults to the source anchor.
    #[arg(long, value_parser = parse_position)]
    pub to_pos: Option<Position>,
}

#[derive(Debug, Clone, Args)]
pub struct DemoArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub params: ParamArgs,
    #[arg(long, default_value_t = 0)]
    pub class: usize,
    #[arg(long, value_parser = parse_position, default_value = "4,4")]
    pub from: Position,
    #[arg(long, value_parser = parse_position, default_value = "10,10")]
    pub to: Position,
    /// Also run the blending baseline.
    #[arg(long)]
    pub baseline: bool,
}

#[derive(Debug, Clone, Args)]
pub struct RenderArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub class: usize,
    #[arg(long, value_parser = parse_position)]
    pub pos: Position,
    /// Add Gaussian noise of this standard deviation.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub noise_seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct EditArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub params: ParamArgs,
    #[command(flatten)]
    pub target: EditTarget,
    /// Input image (P5/P6) or latent file (.lat).
    #[arg(long)]
    pub input: PathBuf,
    /// Binary edit mask (P4) replacing the estimated one.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Also run the blending baseline.
    #[arg(long)]
    pub baseline: bool,
}

#[derive(Debug, Clone, Args)]
pub struct MaskArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub params: ParamArgs,
    #[command(flatten)]
    pub target: EditTarget,
    #[arg(long)]
    pub input: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Run seed shared by every cell.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    pub lambda: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub t_u: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub k: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub tau: Option<Vec<f64>>,
    #[arg(long, default_value_t = 20)]
    pub corpus_size: usize,
    #[arg(long, default_value = "any", value_parser = parse_kind)]
    pub corpus_kind: EditKind,
    #[arg(long, default_value_t = 0)]
    pub corpus_seed: u64,
    /// Worker threads; 0 uses all cores.
    #[arg(long, default_value_t = 0)]
    pub workers: usize,
    /// Corpus items shown in each contact sheet.
    #[arg(long, default_value_t = 8)]
    pub sheet_items: usize,
}

#[derive(Debug, Clone, Args)]
pub struct RerunArgs {
    /// Manifest of an earlier `edit` or `demo` run.
    pub manifest: PathBuf,
    #[arg(long, env = "ITOEDIT_OUT")]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub run_name: Option<String>,
}

pub fn parse_position(s: &str) -> Result<Position> {
    let (r, c) = s
        .split_once(',')
        .ok_or_else(|| anyhow!("expected ROW,COL, got '{s}'"))?;
    Ok(Position::new(r.trim().parse()?, c.trim().parse()?))
}

fn parse_kind(s: &str) -> Result<EditKind> {
    Ok(s.parse()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn positions_parse() {
        assert_eq!(parse_position("4, 10").unwrap(), Position::new(4, 10));
        assert!(parse_position("4").is_err());
        assert!(parse_position("a,1").is_err());
    }

    #[test]
    fn list_flags_split_on_commas() {
        let cli = Cli::parse_from(["itoedit", "sweep", "--lambda", "0,0.5,1", "--k", "1,30"]);
        let Command::Sweep(s) = cli.command else {
            panic!("expected sweep")
        };
        assert_eq!(s.lambda, Some(vec![0.0, 0.5, 1.0]));
        assert_eq!(s.k, Some(vec![1, 30]));
    }
}
