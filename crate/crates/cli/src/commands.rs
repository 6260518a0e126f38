//! Command implementations.

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use rayon::prelude::*;
use serde::Serialize;

use itoedit::metrics::{evaluate, GroundTruth};
use itoedit::sampler::{decode_conditioned, encode_conditioned, no_hook};
use itoedit::{
    diffedit_with_mask, estimate_mask, l1, render_scene, run_edit_with_mask, sample_edits,
    Condition, EditMask, EditParams, LatentImage, MetricsRecord, NoiseSchedule, SceneConfig,
    SceneMixture,
};

use crate::args::{
    CommonArgs, DemoArgs, EditArgs, EditTarget, MaskArgs, ParamArgs, Preset, RenderArgs, RerunArgs,
    SweepArgs,
};
use crate::config::Config;
use crate::imageio::{self, IntensityMap};
use crate::manifest::{sha256_hex, Artifact, CaseRecord, MetricsEntry, RunManifest, SeedRecord};

const DEFAULT_ROOT: &str = "itoedit-out";

/// A per-run output directory and the manifest being assembled for it.
pub struct RunDir {
    pub path: PathBuf,
    pub manifest: RunManifest,
    map: IntensityMap,
    started: Instant,
}

impl RunDir {
    pub fn create(
        root: Option<&Path>,
        run_name: Option<&str>,
        command: &str,
        config: Config,
    ) -> Result<Self> {
        let root = root
            .map(Path::to_path_buf)
            .or_else(|| config.output.root.as_ref().map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_ROOT));
        let manifest = RunManifest::new(command, config);
        let name = run_name.map_or_else(
            || {
                format!(
                    "{command}-{}-{}",
                    manifest.created_unix_ms,
                    std::process::id()
                )
            },
            str::to_string,
        );
        let path = root.join(name);
        fs::create_dir_all(&path)
            .with_context(|| format!("cannot create run directory {}", path.display()))?;
        let map = IntensityMap::new(manifest.config.output.intensity_range)?;
        Ok(Self {
            path,
            manifest,
            map,
            started: Instant::now(),
        })
    }

    pub fn write_bytes(&mut self, key: &str, file: &str, bytes: &[u8]) -> Result<()> {
        let full = self.path.join(file);
        fs::write(&full, bytes).with_context(|| format!("cannot write {}", full.display()))?;
        self.manifest.artifacts.insert(
            key.to_string(),
            Artifact {
                path: file.to_string(),
                sha256: sha256_hex(bytes),
            },
        );
        Ok(())
    }

    /// Writes `<stem>.ppm` (or `.pgm`) and the exact `<stem>.lat`.
    pub fn write_latent(&mut self, stem: &str, img: &LatentImage) -> Result<()> {
        if matches!(img.channels(), 1 | 3) {
            let ext = if img.channels() == 1 { "pgm" } else { "ppm" };
            let bytes = imageio::encode_pnm(img, &self.map)?;
            self.write_bytes(stem, &format!("{stem}.{ext}"), &bytes)?;
        }
        self.write_bytes(
            &format!("{stem}_lat"),
            &format!("{stem}.lat"),
            &imageio::encode_lat(img),
        )
    }

    pub fn write_mask(&mut self, mask: &EditMask) -> Result<()> {
        let (h, w) = (mask.height, mask.width);
        self.write_bytes(
            "mask_soft",
            "mask_soft.pgm",
            &imageio::encode_pgm_unit(&mask.soft, h, w)?,
        )?;
        self.write_bytes(
            "mask_binary",
            "mask_binary.pbm",
            &imageio::encode_pbm(&mask.binary, h, w)?,
        )?;
        let sidecar = serde_json::to_vec_pretty(mask)?;
        self.write_bytes("mask_sidecar", "mask.json", &sidecar)
    }

    pub fn finish(mut self) -> Result<PathBuf> {
        self.manifest.duration_s = self.started.elapsed().as_secs_f64();
        let path = self.path.join("manifest.json");
        self.manifest.save(&path)?;
        Ok(path)
    }
}

/// One metrics row of a CSV report.
#[derive(Debug, Clone, Serialize)]
pub struct ReportRow {
    pub case: usize,
    pub source_class: usize,
    pub source_row: usize,
    pub source_col: usize,
    pub target_class: usize,
    pub target_row: usize,
    pub target_col: usize,
    pub method: String,
    pub lambda: f64,
    pub t_u: usize,
    pub k: usize,
    pub tau: f64,
    pub l1_full: Option<f64>,
    pub l1_background: Option<f64>,
    pub edit_success: Option<bool>,
    pub original_retained: Option<bool>,
    pub mask_iou: Option<f64>,
    pub error: String,
}

impl ReportRow {
    fn new(case: usize, truth: &GroundTruth, method: &str, p: &EditParams) -> Self {
        Self {
            case,
            source_class: truth.source_class,
            source_row: truth.source_position.row,
            source_col: truth.source_position.col,
            target_class: truth.target_class,
            target_row: truth.target_position.row,
            target_col: truth.target_position.col,
            method: method.to_string(),
            lambda: p.lambda,
            t_u: p.t_u,
            k: p.k,
            tau: p.tau,
            l1_full: None,
            l1_background: None,
            edit_success: None,
            original_retained: None,
            mask_iou: None,
            error: String::new(),
        }
    }

    fn with_metrics(mut self, m: &MetricsRecord) -> Self {
        self.l1_full = Some(m.l1_full);
        self.l1_background = Some(m.l1_background);
        self.edit_success = Some(m.edit_success);
        self.original_retained = Some(m.original_retained);
        self.mask_iou = Some(m.mask_iou);
        self
    }
}

fn csv_bytes(rows: &[ReportRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    Ok(w.into_inner()?)
}

fn apply_params(cfg: &mut Config, p: &ParamArgs) {
    match p.preset {
        Some(Preset::Default) => {
            let d = EditParams::default();
            (cfg.edit.lambda, cfg.edit.t_u, cfg.edit.k, cfg.mask.tau) =
                (d.lambda, d.t_u, d.k, d.tau);
        }
        Some(Preset::RealImage) => {
            let d = EditParams::real_image();
            (cfg.edit.lambda, cfg.edit.t_u, cfg.edit.k, cfg.mask.tau) =
                (d.lambda, d.t_u, d.k, d.tau);
        }
        Some(Preset::Refinement) => {
            let d = EditParams::refinement();
            (cfg.edit.lambda, cfg.edit.t_u, cfg.edit.k, cfg.mask.tau) =
                (d.lambda, d.t_u, d.k, d.tau);
        }
        None => {}
    }
    let e = &mut cfg.edit;
    let m = &mut cfg.mask;
    if let Some(v) = p.lambda {
        e.lambda = v;
    }
    if let Some(v) = p.gamma {
        e.gamma = v;
    }
    if let Some(v) = p.t_u {
        e.t_u = v;
    }
    if let Some(v) = p.k {
        e.k = v;
    }
    if let Some(v) = p.encoding_ratio {
        e.encoding_ratio = v;
    }
    if let Some(v) = p.seed {
        e.seed = v;
    }
    if let Some(v) = p.tau {
        m.tau = v;
    }
    if let Some(v) = p.n_seeds {
        m.n_seeds = v;
        m.seeds = None;
    }
    if let Some(v) = p.sigma_blur {
        m.sigma_blur = v;
    }
    if let Some(v) = &p.seeds {
        m.seeds = Some(v.clone());
        m.n_seeds = v.len();
    }
}

struct Engine {
    scene: SceneConfig,
    mix: SceneMixture,
    sched: NoiseSchedule,
}

impl Engine {
    fn new(cfg: &Config) -> Result<Self> {
        cfg.scene.validate()?;
        Ok(Self {
            scene: cfg.scene.clone(),
            mix: SceneMixture::build(&cfg.scene)?,
            sched: cfg.schedule()?,
        })
    }

    fn check_input(&self, x0: &LatentImage) -> Result<()> {
        let want = self.mix.shape();
        ensure!(
            x0.shape() == want,
            "input is {:?} but the scene canvas is {:?}",
            x0.shape(),
            want
        );
        Ok(())
    }

    fn resolve_truth(&self, x0: &LatentImage, t: &EditTarget) -> Result<GroundTruth> {
        let (sc, sp) = match (t.source_class, t.source_pos) {
            (Some(c), Some(p)) => (c, p),
            (c, p) => {
                let (gc, gp) = self.mix.classify(x0)?;
                (c.unwrap_or(gc), p.unwrap_or(gp))
            }
        };
        let truth = GroundTruth {
            source_class: sc,
            source_position: sp,
            target_class: t.to_class.unwrap_or(sc),
            target_position: t.to_pos.unwrap_or(sp),
        };
        for (c, p) in [(sc, sp), (truth.target_class, truth.target_position)] {
            ensure!(c < self.scene.classes(), "class {c} is not in the scene");
            ensure!(
                self.scene.positions().contains(&p),
                "position {p} is not on the layout grid"
            );
        }
        Ok(truth)
    }
}

fn conditions(truth: &GroundTruth) -> (Condition, Condition) {
    (
        Condition::both(truth.source_class, truth.source_position),
        Condition::both(truth.target_class, truth.target_position),
    )
}

/// Per-pixel L1 of an encode/decode round trip under the inversion condition.
pub fn roundtrip_l1(
    x0: &LatentImage,
    cond: Condition,
    t_e: usize,
    mix: &SceneMixture,
    sched: &NoiseSchedule,
) -> Result<f64> {
    let enc = encode_conditioned(x0, t_e, cond, mix, sched)?;
    let dec = decode_conditioned(enc.last(), t_e, cond, mix, sched, &mut no_hook())?;
    Ok(l1(x0, dec.first(), None)?)
}

struct EditJob<'a> {
    x0: &'a LatentImage,
    truth: GroundTruth,
    params: EditParams,
    baseline: bool,
    mask_override: Option<(EditMask, String)>,
}

fn execute_edit(run: &mut RunDir, eng: &Engine, job: EditJob<'_>) -> Result<()> {
    let EditJob {
        x0,
        truth,
        params,
        baseline,
        mask_override,
    } = job;
    let (cond_o, cond_edit) = conditions(&truth);
    let (mix, sched) = (&eng.mix, &eng.sched);

    run.write_latent("input", x0)?;
    run.write_latent(
        "target",
        &render_scene(truth.target_class, truth.target_position, &eng.scene)?,
    )?;

    let (mask, mask_path) = match mask_override {
        Some((m, path)) => (m, Some(path)),
        None => (
            estimate_mask(x0, cond_o, cond_edit, &params, mix, sched)?,
            None,
        ),
    };
    run.write_mask(&mask)?;

    let ours = run_edit_with_mask(x0, cond_o, cond_edit, mask.clone(), &params, mix, sched)?;
    if let Some(g) = &ours.guidance {
        run.write_latent("guidance", g)?;
    }
    run.write_latent("edited", &ours.edited)?;
    let mut rows = vec![ReportRow::new(0, &truth, "ours", &params)
        .with_metrics(&evaluate(&ours, &truth, mix, &eng.scene)?)];
    run.manifest.metrics.push(MetricsEntry {
        method: "ours".into(),
        record: evaluate(&ours, &truth, mix, &eng.scene)?,
    });

    if baseline {
        let base = diffedit_with_mask(x0, cond_o, cond_edit, mask, &params, mix, sched)?;
        run.write_latent("diffedit", &base.edited)?;
        let m = evaluate(&base, &truth, mix, &eng.scene)?;
        rows.push(ReportRow::new(0, &truth, "diffedit", &params).with_metrics(&m));
        run.manifest.metrics.push(MetricsEntry {
            method: "diffedit".into(),
            record: m,
        });
    }
    run.write_bytes("metrics", "metrics.csv", &csv_bytes(&rows)?)?;

    run.manifest.roundtrip_l1 = Some(roundtrip_l1(
        x0,
        params.inversion.condition(cond_o, cond_edit),
        params.t_e,
        mix,
        sched,
    )?);
    run.manifest.guidance_skipped = Some(ours.guidance_skipped);
    run.manifest.seeds = Some(SeedRecord::new(run.manifest.config.edit.seed, &params));
    run.manifest.case = Some(CaseRecord {
        input: "input.lat".into(),
        source_class: truth.source_class,
        source_position: truth.source_position,
        target_class: truth.target_class,
        target_position: truth.target_position,
        cond_o,
        cond_edit,
        mask_override: mask_path,
        baseline,
    });
    run.manifest.params = Some(params);
    Ok(())
}

fn load_config(common: &CommonArgs, params: Option<&ParamArgs>) -> Result<Config> {
    let mut cfg = Config::load_or_default(common.config.as_deref())?;
    if let Some(p) = params {
        apply_params(&mut cfg, p);
    }
    Ok(cfg)
}

fn report(path: &Path) {
    println!("{}", path.display());
}

pub fn demo(args: &DemoArgs) -> Result<PathBuf> {
    let cfg = load_config(&args.common, Some(&args.params))?;
    let eng = Engine::new(&cfg)?;
    let params = cfg.edit_params(&eng.sched)?;
    let x0 = render_scene(args.class, args.from, &eng.scene)?;
    let truth = eng.resolve_truth(
        &x0,
        &EditTarget {
            source_class: Some(args.class),
            source_pos: Some(args.from),
            to_class: None,
            to_pos: Some(args.to),
        },
    )?;
    let mut run = RunDir::create(
        args.common.out.as_deref(),
        args.common.run_name.as_deref(),
        "demo",
        cfg,
    )?;
    execute_edit(
        &mut run,
        &eng,
        EditJob {
            x0: &x0,
            truth,
            params,
            baseline: args.baseline,
            mask_override: None,
        },
    )?;
    let path = run.finish()?;
    report(&path);
    Ok(path)
}

pub fn render(args: &RenderArgs) -> Result<PathBuf> {
    let cfg = load_config(&args.common, None)?;
    let eng = Engine::new(&cfg)?;
    let mut img = render_scene(args.class, args.pos, &eng.scene)?;
    if args.noise != 0.0 {
        let (h, w, c) = img.shape();
        let n = LatentImage::standard_normal(h, w, c, args.noise_seed);
        img = img.lin_comb(1.0, &n, args.noise)?;
    }
    let mut run = RunDir::create(
        args.common.out.as_deref(),
        args.common.run_name.as_deref(),
        "render",
        cfg,
    )?;
    run.write_latent("scene", &img)?;
    let path = run.finish()?;
    report(&path);
    Ok(path)
}

fn read_mask_override(path: &Path, eng: &Engine) -> Result<EditMask> {
    let bytes = fs::read(path).with_context(|| format!("cannot read mask {}", path.display()))?;
    let (h, w, bits) = imageio::decode_pbm(&bytes)?;
    ensure!(
        (h, w) == (eng.scene.height, eng.scene.width),
        "mask is {h}x{w} but the canvas is {}x{}",
        eng.scene.height,
        eng.scene.width
    );
    Ok(EditMask::from_binary(h, w, bits)?)
}

pub fn edit(args: &EditArgs) -> Result<PathBuf> {
    let cfg = load_config(&args.common, Some(&args.params))?;
    let eng = Engine::new(&cfg)?;
    let params = cfg.edit_params(&eng.sched)?;
    let map = IntensityMap::new(cfg.output.intensity_range)?;
    let x0 = imageio::read_latent(&args.input, &map)?;
    eng.check_input(&x0)?;
    let truth = eng.resolve_truth(&x0, &args.target)?;
    let mask = args
        .mask
        .as_deref()
        .map(|p| read_mask_override(p, &eng))
        .transpose()?;

    let mut run = RunDir::create(
        args.common.out.as_deref(),
        args.common.run_name.as_deref(),
        "edit",
        cfg,
    )?;
    let mask_override = match mask {
        Some(m) => {
            let bytes = imageio::encode_pbm(&m.binary, m.height, m.width)?;
            run.write_bytes("mask_override", "mask_override.pbm", &bytes)?;
            Some((m, "mask_override.pbm".to_string()))
        }
        None => None,
    };
    execute_edit(
        &mut run,
        &eng,
        EditJob {
            x0: &x0,
            truth,
            params,
            baseline: args.baseline,
            mask_override,
        },
    )?;
    let path = run.finish()?;
    report(&path);
    Ok(path)
}

pub fn mask(args: &MaskArgs) -> Result<PathBuf> {
    let cfg = load_config(&args.common, Some(&args.params))?;
    let eng = Engine::new(&cfg)?;
    let params = cfg.edit_params(&eng.sched)?;
    let map = IntensityMap::new(cfg.output.intensity_range)?;
    let x0 = imageio::read_latent(&args.input, &map)?;
    eng.check_input(&x0)?;
    let truth = eng.resolve_truth(&x0, &args.target)?;
    let (cond_o, cond_edit) = conditions(&truth);
    let mask = estimate_mask(&x0, cond_o, cond_edit, &params, &eng.mix, &eng.sched)?;

    let mut run = RunDir::create(
        args.common.out.as_deref(),
        args.common.run_name.as_deref(),
        "mask",
        cfg,
    )?;
    run.write_latent("input", &x0)?;
    run.write_mask(&mask)?;
    run.manifest.seeds = Some(SeedRecord::new(run.manifest.config.edit.seed, &params));
    run.manifest.case = Some(CaseRecord {
        input: "input.lat".into(),
        source_class: truth.source_class,
        source_position: truth.source_position,
        target_class: truth.target_class,
        target_position: truth.target_position,
        cond_o,
        cond_edit,
        mask_override: None,
        baseline: false,
    });
    run.manifest.params = Some(params);
    let path = run.finish()?;
    report(&path);
    Ok(path)
}

pub fn rerun(args: &RerunArgs) -> Result<PathBuf> {
    let original = RunManifest::load(&args.manifest)?;
    let base_dir = args.manifest.parent().unwrap_or(Path::new("."));
    let (Some(case), Some(params)) = (original.case.clone(), original.params.clone()) else {
        bail!(
            "manifest {} does not describe an edit",
            args.manifest.display()
        );
    };
    ensure!(
        matches!(original.command.as_str(), "edit" | "demo"),
        "cannot replay a '{}' run",
        original.command
    );
    let eng = Engine::new(&original.config)?;
    let x0 = imageio::decode_lat(
        &fs::read(base_dir.join(&case.input))
            .with_context(|| format!("cannot read {}", base_dir.join(&case.input).display()))?,
    )?;
    let mut run = RunDir::create(
        args.out.as_deref().or(base_dir.parent()),
        args.run_name.as_deref(),
        &original.command,
        original.config.clone(),
    )?;
    let mask_override = match &case.mask_override {
        Some(rel) => {
            let m = read_mask_override(&base_dir.join(rel), &eng)?;
            let bytes = imageio::encode_pbm(&m.binary, m.height, m.width)?;
            run.write_bytes("mask_override", rel, &bytes)?;
            Some((m, rel.clone()))
        }
        None => None,
    };
    execute_edit(
        &mut run,
        &eng,
        EditJob {
            x0: &x0,
            truth: GroundTruth {
                source_class: case.source_class,
                source_position: case.source_position,
                target_class: case.target_class,
                target_position: case.target_position,
            },
            params,
            baseline: case.baseline,
            mask_override,
        },
    )?;
    let replay = run.manifest.clone();
    let path = run.finish()?;

    let mut mismatched = Vec::new();
    for (key, art) in original
        .artifacts
        .iter()
        .filter(|(k, _)| k.ends_with("_lat"))
    {
        match replay.artifacts.get(key) {
            Some(new) if new.sha256 == art.sha256 => {}
            _ => mismatched.push(key.clone()),
        }
    }
    ensure!(
        mismatched.is_empty(),
        "replay differs from the original in {}",
        mismatched.join(", ")
    );
    report(&path);
    Ok(path)
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Cell {
    lambda: f64,
    t_u: usize,
    k: usize,
    tau: f64,
}

#[derive(Debug, Clone, Serialize)]
struct SummaryRow {
    lambda: f64,
    t_u: usize,
    k: usize,
    tau: f64,
    items: usize,
    errors: usize,
    mean_l1_full: f64,
    mean_l1_background: f64,
    edit_success_rate: f64,
    original_retained_rate: f64,
    mean_mask_iou: f64,
}

fn summarise(cell: &Cell, rows: &[&ReportRow]) -> SummaryRow {
    let ok: Vec<&&ReportRow> = rows.iter().filter(|r| r.error.is_empty()).collect();
    let n = ok.len().max(1) as f64;
    let mean = |f: &dyn Fn(&ReportRow) -> f64| ok.iter().map(|r| f(r)).sum::<f64>() / n;
    SummaryRow {
        lambda: cell.lambda,
        t_u: cell.t_u,
        k: cell.k,
        tau: cell.tau,
        items: rows.len(),
        errors: rows.len() - ok.len(),
        mean_l1_full: mean(&|r| r.l1_full.unwrap_or(0.0)),
        mean_l1_background: mean(&|r| r.l1_background.unwrap_or(0.0)),
        edit_success_rate: mean(&|r| (r.edit_success == Some(true)) as u8 as f64),
        original_retained_rate: mean(&|r| (r.original_retained == Some(true)) as u8 as f64),
        mean_mask_iou: mean(&|r| r.mask_iou.unwrap_or(0.0)),
    }
}

fn panic_message(p: Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| p.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "worker panicked".into())
}

pub fn sweep(args: &SweepArgs) -> Result<PathBuf> {
    let mut cfg = load_config(&args.common, None)?;
    if let Some(s) = args.seed {
        cfg.edit.seed = s;
    }
    let eng = Engine::new(&cfg)?;
    let base = cfg.edit_params(&eng.sched)?;
    let lambdas = args.lambda.clone().unwrap_or_else(|| vec![base.lambda]);
    let t_us = args.t_u.clone().unwrap_or_else(|| vec![base.t_u]);
    let ks = args.k.clone().unwrap_or_else(|| vec![base.k]);
    let taus = args.tau.clone().unwrap_or_else(|| vec![base.tau]);
    ensure!(
        !lambdas.is_empty() && !t_us.is_empty() && !ks.is_empty() && !taus.is_empty(),
        "every sweep axis needs at least one value"
    );
    ensure!(args.corpus_size > 0, "corpus size must be positive");
    let items = sample_edits(
        &eng.scene,
        args.corpus_kind,
        args.corpus_size,
        args.corpus_seed,
    )?;

    let mut cells = Vec::new();
    for &lambda in &lambdas {
        for &t_u in &t_us {
            for &k in &ks {
                for &tau in &taus {
                    cells.push(Cell {
                        lambda,
                        t_u,
                        k,
                        tau,
                    });
                }
            }
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.workers)
        .build()?;
    let inputs: Vec<LatentImage> = items
        .iter()
        .map(|e| e.input(&eng.scene))
        .collect::<itoedit::Result<_>>()?;
    let (masks, outcomes) = pool.install(|| {
        let masks: Vec<std::result::Result<EditMask, String>> = items
            .par_iter()
            .zip(&inputs)
            .map(|(e, x0)| {
                estimate_mask(x0, e.cond_o(), e.cond_edit(), &base, &eng.mix, &eng.sched)
                    .map_err(|err| err.to_string())
            })
            .collect();
        let jobs: Vec<(usize, usize)> = (0..items.len())
            .flat_map(|i| (0..cells.len()).map(move |c| (i, c)))
            .collect();
        let outcomes: Vec<(ReportRow, Option<LatentImage>)> = jobs
            .par_iter()
            .map(|&(i, c)| {
                let cell = cells[c];
                let e = &items[i];
                let params = EditParams {
                    lambda: cell.lambda,
                    t_u: cell.t_u,
                    k: cell.k,
                    tau: cell.tau,
                    ..base.clone()
                };
                let row = ReportRow::new(i, &e.truth, "ours", &params);
                let attempt = catch_unwind(AssertUnwindSafe(|| -> Result<_> {
                    params.validate(eng.sched.steps())?;
                    let mask = match &masks[i] {
                        Ok(m) => m.with_tau(cell.tau),
                        Err(msg) => bail!("mask estimation failed: {msg}"),
                    };
                    let r = run_edit_with_mask(
                        &inputs[i],
                        e.cond_o(),
                        e.cond_edit(),
                        mask,
                        &params,
                        &eng.mix,
                        &eng.sched,
                    )?;
                    let m = evaluate(&r, &e.truth, &eng.mix, &eng.scene)?;
                    Ok((m, r.edited))
                }));
                match attempt {
                    Ok(Ok((m, img))) => (row.with_metrics(&m), Some(img)),
                    Ok(Err(err)) => (
                        ReportRow {
                            error: format!("{err:#}"),
                            ..row
                        },
                        None,
                    ),
                    Err(p) => (
                        ReportRow {
                            error: panic_message(p),
                            ..row
                        },
                        None,
                    ),
                }
            })
            .collect();
        (masks, outcomes)
    });
    drop(masks);

    let mut run = RunDir::create(
        args.common.out.as_deref(),
        args.common.run_name.as_deref(),
        "sweep",
        cfg.clone(),
    )?;
    let rows: Vec<ReportRow> = outcomes.iter().map(|(r, _)| r.clone()).collect();
    run.write_bytes("report", "sweep.csv", &csv_bytes(&rows)?)?;

    let summary: Vec<SummaryRow> = cells
        .iter()
        .enumerate()
        .map(|(c, cell)| {
            let cell_rows: Vec<&ReportRow> = (0..items.len())
                .map(|i| &rows[i * cells.len() + c])
                .collect();
            summarise(cell, &cell_rows)
        })
        .collect();
    let mut w = csv::Writer::from_writer(Vec::new());
    for s in &summary {
        w.serialize(s)?;
    }
    run.write_bytes("summary", "summary.csv", &w.into_inner()?)?;

    // One contact sheet per axis with several values; other axes at their first value.
    let scale = cfg.output.sheet_scale.max(1);
    let axes: [(&str, usize); 4] = [
        ("lambda", lambdas.len()),
        ("t_u", t_us.len()),
        ("k", ks.len()),
        ("tau", taus.len()),
    ];
    let strides = [
        t_us.len() * ks.len() * taus.len(),
        ks.len() * taus.len(),
        taus.len(),
        1,
    ];
    let shown = items.len().min(args.sheet_items.max(1));
    let (h, w, ch) = eng.mix.shape();
    let fill = cfg.output.intensity_range[1];
    for (a, (name, len)) in axes.iter().enumerate() {
        if *len < 2 {
            continue;
        }
        let tiles: Vec<Vec<Option<LatentImage>>> = (0..shown)
            .map(|i| {
                let mut row = vec![Some(imageio::upscale(&inputs[i], scale))];
                for v in 0..*len {
                    let c = v * strides[a];
                    row.push(
                        outcomes[i * cells.len() + c]
                            .1
                            .as_ref()
                            .map(|img| imageio::upscale(img, scale)),
                    );
                }
                row
            })
            .collect();
        let sheet = imageio::contact_sheet(&tiles, (h * scale, w * scale, ch), 2, fill);
        let bytes = imageio::encode_pnm(&sheet, &IntensityMap::new(cfg.output.intensity_range)?)?;
        run.write_bytes(
            &format!("sheet_{name}"),
            &format!("sheet_{name}.ppm"),
            &bytes,
        )?;
    }

    run.manifest.params = Some(base.clone());
    run.manifest.seeds = Some(SeedRecord::new(cfg.edit.seed, &base));
    let path = run.finish()?;
    let failed = rows.iter().filter(|r| !r.error.is_empty()).count();
    if failed > 0 {
        eprintln!("{failed} of {} cells failed; see sweep.csv", rows.len());
    }
    report(&path);
    Ok(path)
}
