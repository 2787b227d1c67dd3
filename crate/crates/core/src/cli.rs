//! Command-line front end: configuration, dataset loading and subcommands.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use crate::bu::build_candidates;
use crate::error::Error;
use crate::featsal::HarvestConfig;
use crate::inference::{
    pixel_max, rescale_independent, ImageInput, ImageSaliency, InferenceOptions, ModelBundle, SaliencyEngine,
};
use crate::io::{encode_pgm, load_map, load_mask, load_ppm, load_tensor, save_map, save_mask, write_atomic};
use crate::manifest::{load_manifest, DatasetManifest, ManifestEntry};
use crate::map::{Mask, SaliencyMap};
use crate::metrics::{
    average_precision, f_measure, jaccard, localization_ap, localization_hit, precision_at_eer, ConfusionMatrix, LocalizationMode,
};
use crate::pooling::DEFAULT_LEVELS;
use crate::refine::DEFAULT_SCALES;
use crate::svm::{TrainConfig, DEFAULT_SEED};
use crate::synth::{generate, SynthSpec};
use crate::tasks::{detect, localize, segment_object, semantic_labels, LabelMap};
use crate::training::{train_bundle, TrainOptions, TrainingImage};

pub const EXIT_OK: u8 = 0;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_INTERNAL: u8 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMode {
    Saliency,
    Segmentation,
    Localization,
    Detection,
}

impl FromStr for EvalMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "saliency" => Ok(Self::Saliency),
            "segmentation" => Ok(Self::Segmentation),
            "localization" => Ok(Self::Localization),
            "detection" => Ok(Self::Detection),
            _ => Err(format!(
                "unknown mode {s:?} (saliency, segmentation, localization, detection)"
            )),
        }
    }
}

impl EvalMode {
    pub fn name(self) -> &'static str {
        match self {
            Self::Saliency => "saliency",
            Self::Segmentation => "segmentation",
            Self::Localization => "localization",
            Self::Detection => "detection",
        }
    }
}

/// Fully resolved settings for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub manifest: Option<PathBuf>,
    pub categories: Vec<String>,
    pub bundle: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub ids: Vec<String>,
    pub levels: Vec<usize>,
    pub lambda: f64,
    pub epochs: usize,
    pub seed: u64,
    pub neg_per_image: usize,
    pub scales: Vec<usize>,
    pub no_superpixel: bool,
    pub emit_ften: bool,
    pub mode: EvalMode,
    pub workers: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let svm = TrainConfig::default();
        Self {
            manifest: None,
            categories: Vec::new(),
            bundle: None,
            out: None,
            ids: Vec::new(),
            levels: DEFAULT_LEVELS.to_vec(),
            lambda: svm.lambda,
            epochs: svm.max_epochs,
            seed: DEFAULT_SEED,
            neg_per_image: HarvestConfig::default().neg_per_image,
            scales: DEFAULT_SCALES.to_vec(),
            no_superpixel: false,
            emit_ften: false,
            mode: EvalMode::Saliency,
            workers: None,
        }
    }
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, Error> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|_| Error::Config(format!("{key}: cannot parse {s:?}")))
        })
        .collect()
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T, Error> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

impl RunConfig {
    /// Applies `key = value` lines. `#` starts a comment; relative paths
    /// resolve against `base_dir`.
    pub fn apply_file_text(&mut self, text: &str, base_dir: &Path) -> Result<(), Error> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            self.set(key.trim(), value.trim(), base_dir)
                .map_err(|e| e.context(format!("config line {}", n + 1)))?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str, base_dir: &Path) -> Result<(), Error> {
        let path = || Some(base_dir.join(value));
        match key {
            "manifest" => self.manifest = path(),
            "bundle" => self.bundle = path(),
            "out" => self.out = path(),
            "categories" => self.categories = parse_list(key, value)?,
            "ids" => self.ids = parse_list(key, value)?,
            "levels" => self.levels = parse_list(key, value)?,
            "scales" => self.scales = parse_list(key, value)?,
            "lambda" => self.lambda = parse_value(key, value)?,
            "epochs" => self.epochs = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "neg_per_image" => self.neg_per_image = parse_value(key, value)?,
            "no_superpixel" => self.no_superpixel = parse_value(key, value)?,
            "emit_ften" => self.emit_ften = parse_value(key, value)?,
            "mode" => self.mode = value.parse().map_err(Error::Config)?,
            "workers" => self.workers = Some(parse_value(key, value)?),
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), Error> {
        if self.levels.is_empty() || self.levels.contains(&0) {
            return Err(Error::Config("levels must be a non-empty list of positive sizes".into()));
        }
        if self.scales.is_empty() || self.scales.contains(&0) {
            return Err(Error::Config("scales must be a non-empty list of positive counts".into()));
        }
        if self.workers == Some(0) {
            return Err(Error::Config("workers must be >= 1".into()));
        }
        self.train_options().svm.validate()
    }

    pub fn train_options(&self) -> TrainOptions {
        TrainOptions {
            levels: self.levels.clone(),
            svm: TrainConfig {
                lambda: self.lambda,
                max_epochs: self.epochs,
                seed: self.seed,
                ..TrainConfig::default()
            },
            harvest: HarvestConfig {
                neg_per_image: self.neg_per_image,
                seed: self.seed,
            },
        }
    }

    pub fn inference_options(&self) -> InferenceOptions {
        InferenceOptions {
            superpixel: !self.no_superpixel,
            scales: self.scales.clone(),
            ..InferenceOptions::default()
        }
    }

    fn require<'a>(opt: &'a Option<PathBuf>, what: &str) -> Result<&'a Path, Error> {
        opt.as_deref()
            .ok_or_else(|| Error::Config(format!("--{what} is required")))
    }

    pub fn manifest_path(&self) -> Result<&Path, Error> {
        Self::require(&self.manifest, "manifest")
    }

    pub fn bundle_path(&self) -> Result<&Path, Error> {
        Self::require(&self.bundle, "bundle")
    }

    pub fn out_dir(&self) -> Result<&Path, Error> {
        Self::require(&self.out, "out")
    }
}

#[derive(Debug, Parser)]
#[command(name = "tdsal", version, about = "Top-down saliency from image-level labels")]
pub struct Cli {
    #[command(flatten)]
    pub flags: Flags,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Default)]
pub struct Flags {
    /// `key = value` configuration file; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    #[arg(long, global = true)]
    pub bundle: Option<PathBuf>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Comma-separated category names (default: all).
    #[arg(long, global = true, value_delimiter = ',')]
    pub categories: Option<Vec<String>>,
    /// Comma-separated image ids (default: the whole manifest).
    #[arg(long, global = true, value_delimiter = ',')]
    pub ids: Option<Vec<String>>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub no_superpixel: bool,
    /// Also write a 2-d FTEN next to every PGM map.
    #[arg(long, global = true)]
    pub emit_ften: bool,
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[arg(long, global = true, value_delimiter = ',')]
    pub levels: Option<Vec<usize>>,
    #[arg(long, global = true)]
    pub lambda: Option<f64>,
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    #[arg(long, global = true)]
    pub neg_per_image: Option<usize>,
    #[arg(long, global = true, value_delimiter = ',')]
    pub scales: Option<Vec<usize>>,
    /// Evaluation protocol: saliency, segmentation, localization or detection.
    #[arg(long, global = true)]
    pub mode: Option<EvalMode>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train image and feature classifiers and write a model bundle.
    Train,
    /// Write per-category and category-independent saliency maps.
    Saliency,
    /// Score every bottom-up candidate and report the selection.
    SelectBu,
    /// Write semantic label maps and per-category object masks.
    Segment,
    /// Write the localization point of every probable category.
    Localize,
    /// Write detection boxes.
    Detect,
    /// Evaluate against the manifest's ground truth.
    Eval,
    /// Generate a synthetic dataset under --out.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 16)]
    pub grid: usize,
    #[arg(long, default_value_t = 8)]
    pub depth: usize,
    #[arg(long, default_value_t = 40)]
    pub positives: usize,
    #[arg(long, default_value_t = 40)]
    pub negatives: usize,
    /// Also render RGB images so superpixel refinement can run.
    #[arg(long)]
    pub render: bool,
}

impl Flags {
    pub fn resolve(&self) -> Result<RunConfig, Error> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            let base = path.parent().unwrap_or(Path::new("."));
            cfg.apply_file_text(&text, base)?;
        }
        macro_rules! over {
            ($field:ident) => {
                if let Some(v) = &self.$field {
                    cfg.$field = v.clone().into();
                }
            };
        }
        over!(manifest);
        over!(bundle);
        over!(out);
        over!(categories);
        over!(ids);
        over!(seed);
        over!(levels);
        over!(lambda);
        over!(epochs);
        over!(neg_per_image);
        over!(scales);
        over!(mode);
        if self.workers.is_some() {
            cfg.workers = self.workers;
        }
        cfg.no_superpixel |= self.no_superpixel;
        cfg.emit_ften |= self.emit_ften;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Exit code for an error chain: 2 configuration, 3 data, 4 internal.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e.root() {
                Error::Config(_) | Error::BadSpec(_) | Error::UnknownCategory(_) => EXIT_CONFIG,
                Error::IndexOutOfRange { .. } => EXIT_INTERNAL,
                _ => EXIT_DATA,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return EXIT_DATA;
        }
    }
    EXIT_INTERNAL
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = cli.flags.resolve()?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cfg.workers {
        pool = pool.num_threads(n);
    }
    let pool = pool.build().context("building worker pool")?;
    pool.install(|| match cli.command {
        Command::Train => cmd_train(&cfg),
        Command::Saliency => cmd_saliency(&cfg),
        Command::SelectBu => cmd_select_bu(&cfg),
        Command::Segment => cmd_segment(&cfg),
        Command::Localize => cmd_localize(&cfg),
        Command::Detect => cmd_detect(&cfg),
        Command::Eval => cmd_eval(&cfg),
        Command::Synth(args) => cmd_synth(&cfg, &args),
    })
}

/// Candidate name from a bottom-up map path, without the image-id prefix.
fn bu_name(entry: &ManifestEntry, path: &Path) -> String {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    stem.strip_prefix(&format!("{}_", entry.id))
        .map(str::to_string)
        .unwrap_or(stem)
}

fn load_input(entry: &ManifestEntry) -> crate::Result<ImageInput> {
    let ctx = |e: Error| e.context(format!("image {}", entry.id));
    let features = load_tensor(&entry.features_path).map_err(ctx)?;
    let image = entry.image_path.as_deref().map(load_ppm).transpose().map_err(ctx)?;
    let bu_maps = entry
        .bu_map_paths
        .iter()
        .map(|p| Ok((bu_name(entry, p), load_map(p)?)))
        .collect::<crate::Result<Vec<_>>>()
        .map_err(ctx)?;
    Ok(ImageInput {
        features,
        image,
        bu_maps,
    })
}

fn selected_entries<'a>(cfg: &RunConfig, manifest: &'a DatasetManifest) -> crate::Result<Vec<&'a ManifestEntry>> {
    if cfg.ids.is_empty() {
        return Ok(manifest.entries.iter().collect());
    }
    cfg.ids
        .iter()
        .map(|id| {
            manifest
                .get(id)
                .ok_or_else(|| Error::Config(format!("id {id:?} is not in the manifest")))
        })
        .collect()
}

fn cmd_synth(cfg: &RunConfig, args: &SynthArgs) -> anyhow::Result<()> {
    let out = cfg.out_dir()?;
    let mut spec = SynthSpec {
        grid_h: args.grid,
        grid_w: args.grid,
        depth: args.depth,
        positives_per_category: args.positives,
        negatives: args.negatives,
        render_images: args.render,
        seed: cfg.seed,
        ..SynthSpec::default()
    };
    if !cfg.categories.is_empty() {
        spec.categories = cfg.categories.clone();
    }
    let ds = generate(&spec, out)?;
    println!("wrote {} images to {}", ds.images.len(), ds.manifest_path.display());
    Ok(())
}

fn cmd_train(cfg: &RunConfig) -> anyhow::Result<()> {
    let manifest = load_manifest(cfg.manifest_path()?)?;
    let bundle_path = cfg.bundle_path()?;
    let categories = if cfg.categories.is_empty() {
        manifest.categories()
    } else {
        cfg.categories.clone()
    };
    let images = manifest
        .entries
        .par_iter()
        .map(|e| {
            Ok(TrainingImage {
                id: e.id.clone(),
                labels: e.labels.clone(),
                input: load_input(e)?,
            })
        })
        .collect::<crate::Result<Vec<_>>>()?;
    let (bundle, reports) = train_bundle(&images, &categories, &cfg.train_options())?;
    bundle.save(bundle_path)?;
    for r in &reports {
        println!(
            "{}: image objective {:.6} ({} epochs{}), feature objective {:.6} ({} epochs{}), {} positive / {} negative features",
            r.name,
            r.image_objective,
            r.image_epochs,
            if r.image_converged { ", converged" } else { "" },
            r.feature_objective,
            r.feature_epochs,
            if r.feature_converged { ", converged" } else { "" },
            r.positives,
            r.negatives,
        );
    }
    println!("wrote {}", bundle_path.display());
    Ok(())
}

/// Shared state of the inference subcommands.
struct Session {
    manifest: DatasetManifest,
    bundle: ModelBundle,
    /// Bundle indices of the requested categories.
    categories: Vec<usize>,
}

impl Session {
    fn open(cfg: &RunConfig) -> anyhow::Result<Self> {
        let manifest = load_manifest(cfg.manifest_path()?)?;
        let bundle = ModelBundle::load(cfg.bundle_path()?)?;
        let categories = if cfg.categories.is_empty() {
            (0..bundle.categories.len()).collect()
        } else {
            cfg.categories
                .iter()
                .map(|c| bundle.index_of(c))
                .collect::<crate::Result<Vec<_>>>()?
        };
        Ok(Self {
            manifest,
            bundle,
            categories,
        })
    }

    fn name(&self, idx: usize) -> &str {
        &self.bundle.categories[idx].name
    }

    /// Runs inference on the selected images in parallel; results keep
    /// manifest order.
    fn infer(&self, cfg: &RunConfig) -> anyhow::Result<Vec<(&ManifestEntry, ImageSaliency)>> {
        let engine = SaliencyEngine::new(&self.bundle, cfg.inference_options());
        let entries = selected_entries(cfg, &self.manifest)?;
        let results = entries
            .par_iter()
            .map(|e| {
                let input = load_input(e)?;
                let sal = engine.run(&input).map_err(|err| err.context(format!("image {}", e.id)))?;
                Ok((*e, sal))
            })
            .collect::<crate::Result<Vec<_>>>()?;
        Ok(results)
    }
}

fn fmt(v: f64) -> String {
    format!("{v:.6}")
}

fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    write_atomic(path, text.as_bytes())?;
    Ok(())
}

fn cmd_saliency(cfg: &RunConfig) -> anyhow::Result<()> {
    let out = cfg.out_dir()?;
    let session = Session::open(cfg)?;
    let results = session.infer(cfg)?;
    let mut csv = String::from("id,category,score,confidence,selected_bu\n");
    for (entry, sal) in &results {
        let dir = out.join(&entry.id);
        for &ci in &session.categories {
            let c = &sal.categories[ci];
            let selected = c.maps.as_ref().map(|m| m.selected_bu.as_str()).unwrap_or("");
            writeln!(csv, "{},{},{},{},{}", entry.id, c.name, fmt(c.score), fmt(c.phi_hat), selected)?;
            if c.maps.is_some() {
                save_map(&c.s_categ, &dir.join(format!("{}.pgm", c.name)), cfg.emit_ften)?;
            }
        }
        save_map(&independent(&session, sal)?, &dir.join("ind.pgm"), cfg.emit_ften)?;
    }
    write_text(&out.join("saliency.csv"), &csv)?;
    println!("wrote maps for {} images to {}", results.len(), out.display());
    Ok(())
}

/// Rescaled pixelwise max over the requested categories.
fn independent(session: &Session, sal: &ImageSaliency) -> crate::Result<SaliencyMap> {
    if session.categories.len() == sal.categories.len() {
        return Ok(sal.s_ind.clone());
    }
    let maps: Vec<&SaliencyMap> = session.categories.iter().map(|&i| &sal.categories[i].s_categ).collect();
    Ok(rescale_independent(&pixel_max(&maps)?))
}

fn cmd_select_bu(cfg: &RunConfig) -> anyhow::Result<()> {
    let out = cfg.out_dir()?;
    let session = Session::open(cfg)?;
    let entries = selected_entries(cfg, &session.manifest)?;
    let rows = entries
        .par_iter()
        .map(|e| -> crate::Result<String> {
            let input = load_input(e)?;
            let f = &input.features;
            let layout = session.bundle.layout_for(f)?;
            let candidates = build_candidates(f.height(), f.width(), input.image.as_ref(), &input.bu_maps)?;
            let mut rows = String::new();
            for &ci in &session.categories {
                let model = &session.bundle.categories[ci].image;
                let sel = crate::bu::select(f, &candidates, model, &layout)?;
                for (k, ((name, _), s)) in candidates.maps().iter().zip(&sel.scores).enumerate() {
                    let _ = writeln!(
                        rows,
                        "{},{},{},{},{},{},{},{}",
                        e.id,
                        session.name(ci),
                        name,
                        fmt(s.b_hat),
                        fmt(s.b_tilde),
                        fmt(s.mean_mu),
                        fmt(s.objective),
                        (k == sel.index) as u8
                    );
                }
            }
            Ok(rows)
        })
        .collect::<crate::Result<Vec<_>>>()?;
    let mut csv = String::from("id,category,candidate,b_hat,b_tilde,mean_mu,objective,selected\n");
    rows.iter().for_each(|r| csv.push_str(r));
    write_text(&out.join("select_bu.csv"), &csv)?;
    println!("wrote {}", out.join("select_bu.csv").display());
    Ok(())
}

fn cmd_segment(cfg: &RunConfig) -> anyhow::Result<()> {
    let out = cfg.out_dir()?;
    let session = Session::open(cfg)?;
    let results = session.infer(cfg)?;
    for (entry, sal) in &results {
        let dir = out.join(&entry.id);
        let maps: Vec<&SaliencyMap> = session.categories.iter().map(|&i| &sal.categories[i].s_categ).collect();
        let labels = semantic_labels(&maps)?;
        let pixels: Vec<u8> = labels.labels().iter().map(|&l| l.min(255) as u8).collect();
        write_atomic(&dir.join("labels.pgm"), &encode_pgm(labels.height(), labels.width(), &pixels))?;
        for &ci in &session.categories {
            let c = &sal.categories[ci];
            if c.maps.is_some() {
                save_mask(&segment_object(&c.s_categ), &dir.join(format!("{}_mask.pgm", c.name)))?;
            }
        }
    }
    println!("wrote segmentations for {} images to {}", results.len(), out.display());
    Ok(())
}

/// Localization points of probable categories, in manifest then category order.
fn localizations(session: &Session, results: &[(&ManifestEntry, ImageSaliency)]) -> Vec<(usize, usize, (usize, usize), f64)> {
    let mut out = Vec::new();
    for (k, (_, sal)) in results.iter().enumerate() {
        for &ci in &session.categories {
            let c = &sal.categories[ci];
            if let Some(maps) = &c.maps {
                out.push((k, ci, localize(&maps.s_pre), c.score));
            }
        }
    }
    out
}

fn cmd_localize(cfg: &RunConfig) -> anyhow::Result<()> {
    let out = cfg.out_dir()?;
    let session = Session::open(cfg)?;
    let results = session.infer(cfg)?;
    let mut csv = String::from("id,category,x,y,score\n");
    for (k, ci, (x, y), score) in localizations(&session, &results) {
        writeln!(csv, "{},{},{x},{y},{}", results[k].0.id, session.name(ci), fmt(score))?;
    }
    write_text(&out.join("localizations.csv"), &csv)?;
    println!("wrote {}", out.join("localizations.csv").display());
    Ok(())
}

fn cmd_detect(cfg: &RunConfig) -> anyhow::Result<()> {
    let out = cfg.out_dir()?;
    let session = Session::open(cfg)?;
    let results = session.infer(cfg)?;
    let mut csv = String::from("id,category,x,y,w,h,score\n");
    for (entry, sal) in &results {
        for &ci in &session.categories {
            let c = &sal.categories[ci];
            for b in detect(&c.s_categ, &c.name) {
                writeln!(csv, "{},{},{},{},{},{},{}", entry.id, b.category, b.x, b.y, b.w, b.h, fmt(b.score))?;
            }
        }
    }
    write_text(&out.join("detections.csv"), &csv)?;
    println!("wrote {}", out.join("detections.csv").display());
    Ok(())
}

fn load_gt_mask(entry: &ManifestEntry, category: &str, dims: (usize, usize)) -> anyhow::Result<Option<Mask>> {
    let Some(path) = entry.gt_mask_path(category) else {
        return Ok(None);
    };
    let mask = load_mask(path)?;
    if mask.dims() != dims {
        bail!(crate::error::dim_mismatch(format!(
            "ground truth {} is {}x{}, maps are {}x{}",
            path.display(),
            mask.height(),
            mask.width(),
            dims.0,
            dims.1
        )));
    }
    Ok(Some(mask))
}

/// Report table: header plus rows, written as CSV and echoed to stdout.
struct Report {
    header: Vec<&'static str>,
    rows: Vec<Vec<String>>,
}

impl Report {
    fn csv(&self) -> String {
        let mut s = self.header.join(",");
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.join(","));
            s.push('\n');
        }
        s
    }

    fn print(&self) {
        let widths: Vec<usize> = (0..self.header.len())
            .map(|i| {
                self.rows
                    .iter()
                    .map(|r| r[i].len())
                    .chain([self.header[i].len()])
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let line = |cells: Vec<&str>| {
            let padded: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
            println!("{}", padded.join("  ").trim_end());
        };
        line(self.header.clone());
        for r in &self.rows {
            line(r.iter().map(String::as_str).collect());
        }
    }
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

fn cmd_eval(cfg: &RunConfig) -> anyhow::Result<()> {
    let out = cfg.out_dir()?;
    let session = Session::open(cfg)?;
    let results = session.infer(cfg)?;
    let report = match cfg.mode {
        EvalMode::Saliency => eval_saliency(&session, &results)?,
        EvalMode::Segmentation => eval_segmentation(&session, &results)?,
        EvalMode::Localization => eval_localization(&session, &results)?,
        EvalMode::Detection => eval_detection(&session, &results)?,
    };
    let path = out.join(format!("eval_{}.csv", cfg.mode.name()));
    write_text(&path, &report.csv())?;
    report.print();
    Ok(())
}

fn missing_gt(category: &str) -> anyhow::Error {
    anyhow!(Error::MissingGroundTruth(category.to_string()))
}

fn eval_saliency(session: &Session, results: &[(&ManifestEntry, ImageSaliency)]) -> anyhow::Result<Report> {
    let mut rows = Vec::new();
    let mut eer_means = Vec::new();
    for &ci in &session.categories {
        let name = session.name(ci);
        let mut eers = Vec::new();
        for (entry, sal) in results.iter().filter(|(e, _)| e.is_positive(name)) {
            let map = &sal.categories[ci].s_categ;
            if let Some(gt) = load_gt_mask(entry, name, map.dims())? {
                eers.push(precision_at_eer(map, &gt).with_context(|| format!("image {}", entry.id))?);
            }
        }
        if eers.is_empty() {
            return Err(missing_gt(name));
        }
        eer_means.push(mean(&eers));
        rows.push(vec![name.to_string(), eers.len().to_string(), fmt(mean(&eers)), String::new()]);
    }
    let mut fs = Vec::new();
    for (entry, sal) in results {
        let mut union: Option<Mask> = None;
        for &ci in &session.categories {
            if let Some(m) = load_gt_mask(entry, session.name(ci), sal.s_ind.dims())? {
                union = Some(match union {
                    Some(u) => u.union(&m)?,
                    None => m,
                });
            }
        }
        if let Some(gt) = union.filter(|m| m.count() > 0) {
            fs.push(f_measure(&independent(session, sal)?, &gt)?);
        }
    }
    rows.push(vec!["mean".into(), results.len().to_string(), fmt(mean(&eer_means)), fmt(mean(&fs))]);
    Ok(Report {
        header: vec!["category", "images", "precision_eer", "f_measure"],
        rows,
    })
}

fn eval_segmentation(session: &Session, results: &[(&ManifestEntry, ImageSaliency)]) -> anyhow::Result<Report> {
    let mut rows = Vec::new();
    let mut cm = ConfusionMatrix::new(session.categories.len() + 1);
    let mut per_cat: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for (entry, sal) in results {
        let dims = sal.s_ind.dims();
        let mut masks = Vec::new();
        let mut complete = true;
        for &ci in &session.categories {
            let name = session.name(ci);
            let gt = load_gt_mask(entry, name, dims)?;
            if let Some(gt) = &gt {
                let pred = segment_object(&sal.categories[ci].s_categ);
                per_cat.entry(ci).or_default().push(jaccard(&pred, gt)?);
            } else if entry.is_positive(name) {
                complete = false;
            }
            masks.push(gt);
        }
        if complete {
            let refs: Vec<Option<&Mask>> = masks.iter().map(Option::as_ref).collect();
            let truth = LabelMap::from_masks(&refs, dims.0, dims.1)?;
            let maps: Vec<&SaliencyMap> = session.categories.iter().map(|&i| &sal.categories[i].s_categ).collect();
            cm.add(&semantic_labels(&maps)?, &truth)?;
        }
    }
    let mut means = Vec::new();
    for (k, &ci) in session.categories.iter().enumerate() {
        let name = session.name(ci);
        let scores = per_cat.get(&ci).ok_or_else(|| missing_gt(name))?;
        let iou = cm.iou()[k + 1];
        means.push(mean(scores));
        rows.push(vec![
            name.to_string(),
            scores.len().to_string(),
            fmt(mean(scores)),
            iou.map(fmt).unwrap_or_default(),
        ]);
    }
    rows.push(vec!["mean".into(), results.len().to_string(), fmt(mean(&means)), fmt(cm.mean_iou())]);
    Ok(Report {
        header: vec!["category", "images", "jaccard", "iou"],
        rows,
    })
}

fn eval_localization(session: &Session, results: &[(&ManifestEntry, ImageSaliency)]) -> anyhow::Result<Report> {
    let points = localizations(session, results);
    let mut rows = Vec::new();
    let mut cols: [Vec<f64>; 4] = Default::default();
    for &ci in &session.categories {
        let name = session.name(ci);
        let gt: Vec<Vec<_>> = results.iter().map(|(e, _)| e.boxes_for(name).collect()).collect();
        if gt.iter().all(Vec::is_empty) {
            return Err(missing_gt(name));
        }
        let mine: Vec<_> = points
            .iter()
            .filter(|p| p.1 == ci)
            .map(|&(k, _, pt, score)| (k, pt, score))
            .collect();
        let rate = |mode| {
            let hits = mine.iter().filter(|&&(k, pt, _)| localization_hit(pt, &gt[k], mode)).count();
            if mine.is_empty() {
                0.0
            } else {
                hits as f64 / mine.len() as f64
            }
        };
        let vals = [
            rate(LocalizationMode::Exact),
            rate(LocalizationMode::Tolerance),
            localization_ap(&mine, &gt, LocalizationMode::Exact)?,
            localization_ap(&mine, &gt, LocalizationMode::Tolerance)?,
        ];
        let mut row = vec![name.to_string(), mine.len().to_string()];
        for (col, v) in cols.iter_mut().zip(vals) {
            col.push(v);
            row.push(fmt(v));
        }
        rows.push(row);
    }
    let mut row = vec!["mean".into(), points.len().to_string()];
    row.extend(cols.iter().map(|c| fmt(mean(c))));
    rows.push(row);
    Ok(Report {
        header: vec!["category", "predictions", "exact", "pix18", "ap_exact", "ap_pix18"],
        rows,
    })
}

fn eval_detection(session: &Session, results: &[(&ManifestEntry, ImageSaliency)]) -> anyhow::Result<Report> {
    let mut rows = Vec::new();
    let mut aps = Vec::new();
    for &ci in &session.categories {
        let name = session.name(ci);
        let gt: Vec<Vec<_>> = results.iter().map(|(e, _)| e.boxes_for(name).collect()).collect();
        if gt.iter().all(Vec::is_empty) {
            return Err(missing_gt(name));
        }
        let mut dets = Vec::new();
        for (k, (_, sal)) in results.iter().enumerate() {
            for b in detect(&sal.categories[ci].s_categ, name) {
                dets.push((k, b.pixel_box(), b.score));
            }
        }
        let ap = average_precision(&dets, &gt)?;
        aps.push(ap);
        rows.push(vec![name.to_string(), dets.len().to_string(), fmt(ap)]);
    }
    rows.push(vec!["mean".into(), String::new(), fmt(mean(&aps))]);
    Ok(Report {
        header: vec!["category", "detections", "ap"],
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_file_parsing() {
        let mut cfg = RunConfig::default();
        cfg.apply_file_text(
            "# comment\nmanifest = data/m.csv\nlevels = 1, 2\nlambda = 0.5 # trailing\nno_superpixel = true\nmode = detection\n",
            Path::new("/base"),
        )
        .unwrap();
        assert_eq!(cfg.manifest, Some(PathBuf::from("/base/data/m.csv")));
        assert_eq!(cfg.levels, vec![1, 2]);
        assert_eq!(cfg.lambda, 0.5);
        assert!(cfg.no_superpixel);
        assert_eq!(cfg.mode, EvalMode::Detection);
    }

    #[test]
    fn config_errors() {
        let mut cfg = RunConfig::default();
        let base = Path::new(".");
        assert!(matches!(cfg.apply_file_text("colour = red", base).unwrap_err().root(), Error::Config(_)));
        assert!(cfg.apply_file_text("lambda", base).is_err());
        assert!(cfg.apply_file_text("seed = -1", base).is_err());
        assert!(cfg.apply_file_text("mode = fast", base).is_err());
        cfg.lambda = 0.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, "seed = 5\nlambda = 0.2\n").unwrap();
        let cli = Cli::try_parse_from([
            "tdsal",
            "train",
            "--config",
            path.to_str().unwrap(),
            "--seed",
            "9",
        ])
        .unwrap();
        let cfg = cli.flags.resolve().unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.lambda, 0.2);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&anyhow!(Error::Config("x".into()))), EXIT_CONFIG);
        assert_eq!(exit_code(&anyhow!(Error::EmptyImage)), EXIT_DATA);
        let nested = Error::NoPositives.context("category a");
        assert_eq!(exit_code(&anyhow!(nested)), EXIT_DATA);
        assert_eq!(exit_code(&anyhow!(Error::IndexOutOfRange { index: 1, len: 0 })), EXIT_INTERNAL);
        assert_eq!(exit_code(&anyhow!("plain")), EXIT_INTERNAL);
    }
}
