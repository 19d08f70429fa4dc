//! The `cmfd` command line.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 training
//! failure, 4 when every input failed to load.

use std::ffi::OsString;
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use cmfd_core::ckn::describe;
use cmfd_core::eval::{
    dataset_report, patch_centers, patch_retrieval_eval, pixel_metrics, random_forgery, transformed_patch_classes,
    ImageOutcome, TransformSpec, RETRIEVAL_VIEWS,
};
use cmfd_core::keypoints::DogParams;
use cmfd_core::pipeline::{detect, DetectConfig, Executor};
use cmfd_core::synthetic::texture;
use cmfd_core::training::{harvest_patches, train_model, TrainConfig};
use cmfd_core::{GrayImage, LabelMap, TamperMap};

use crate::config::Settings;
use crate::exec::{StageTimer, ThreadPool};
use crate::image_io::{load_labelmap, load_mask, load_rgb, save_mask, save_rgb};
use crate::model_io::{load_model, save_model};
use crate::report::{detection_records, write_evaluation_csv, write_jsonl, SidecarRecord};

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_TRAINING: i32 = 3;
pub const EXIT_IO: i32 = 4;

/// Patches cropped per training image unless configured otherwise.
pub const DEFAULT_PATCHES_PER_IMAGE: usize = 80;

#[derive(Parser, Debug)]
#[command(name = "cmfd", version, about = "Copy-move forgery detection with CKN-grad descriptors")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Learn a descriptor model from a directory of images.
    Train(TrainArgs),
    /// Write a tamper map and a JSON-lines sidecar for each image.
    Detect(DetectArgs),
    /// Score tamper maps against ground-truth masks with matching names.
    Evaluate(EvaluateArgs),
    /// Generate a synthetic copy-move forgery and its ground truth.
    Synth(SynthArgs),
    /// Measure transformed-patch retrieval accuracy of a model.
    Retrieve(RetrieveArgs),
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Seed for every random choice; defaults to 0.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; 0 uses every core. Results do not depend on it.
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
    /// key = value file overriding defaults; flags override the file.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Directory of training images.
    #[arg(long)]
    pub images: PathBuf,
    /// Model file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Training log CSV; defaults to the model path with a `.csv` extension.
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long)]
    pub patches_per_image: Option<usize>,
}

#[derive(Args, Debug)]
pub struct DetectArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub model: PathBuf,
    /// Output directory for `<stem>.png` maps and `<stem>.jsonl` sidecars.
    #[arg(long)]
    pub out: PathBuf,
    /// Label map PNG for a single image, or a directory of `<stem>.png`.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub regions: Option<usize>,
    #[arg(long)]
    pub knn: Option<usize>,
    #[arg(long)]
    pub min_matches: Option<usize>,
    #[arg(long)]
    pub ransac_iters: Option<usize>,
    #[arg(long)]
    pub inlier_tol: Option<f64>,
    #[arg(long)]
    pub zncc: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(required = true)]
    pub images: Vec<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Directory of tamper maps.
    #[arg(long)]
    pub maps: PathBuf,
    /// Directory of ground-truth masks; an empty mask marks an original.
    #[arg(long)]
    pub gt: PathBuf,
    /// Report CSV; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum TransformKind {
    None,
    Translate,
    Rotate,
    Scale,
    Combo,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: Common,
    /// Host image; a seeded synthetic texture when absent.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Side of the generated texture.
    #[arg(long, default_value_t = 256)]
    pub size: usize,
    /// Writes `<out>/images/<name>.png` and `<out>/gt/<name>.png`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "forged")]
    pub name: String,
    #[arg(long, value_enum, default_value_t = TransformKind::Translate)]
    pub transform: TransformKind,
    #[arg(long, default_value_t = 15.0)]
    pub angle: f64,
    #[arg(long, default_value_t = 1.2)]
    pub factor: f64,
    #[arg(long, default_value_t = 64)]
    pub block: usize,
    #[arg(long, default_value_t = 30)]
    pub margin: usize,
}

#[derive(Args, Debug)]
pub struct RetrieveArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub model: PathBuf,
    /// Directory of images to crop patches from.
    #[arg(long)]
    pub images: PathBuf,
    /// Number of patch classes.
    #[arg(long, default_value_t = 100)]
    pub patches: usize,
}

/// A failure carrying its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

fn fail(code: i32, message: impl Into<String>) -> CliError {
    CliError { code, message: message.into() }
}

fn usage(e: impl fmt::Display) -> CliError {
    fail(EXIT_USAGE, e.to_string())
}

type CliResult<T> = Result<T, CliError>;

/// Parses `args` and runs the command, returning the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Train(a) => cmd_train(&a),
        Command::Detect(a) => cmd_detect(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
        Command::Synth(a) => cmd_synth(&a),
        Command::Retrieve(a) => cmd_retrieve(&a),
    }
}

fn settings(common: &Common) -> CliResult<Settings> {
    match &common.config {
        Some(p) => Settings::load(p).map_err(|e| usage(format!("--config: {e}"))),
        None => Ok(Settings::default()),
    }
}

fn pool(common: &Common) -> CliResult<ThreadPool> {
    ThreadPool::new(common.threads).map_err(|e| usage(format!("--threads: {e}")))
}

fn require_dir(flag: &str, path: &Path) -> CliResult<()> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(usage(format!("{flag}: {} is not a directory", path.display())))
    }
}

fn require_file(flag: &str, path: &Path) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(usage(format!("{flag}: {} does not exist", path.display())))
    }
}

const IMAGE_EXTENSIONS: [&str; 6] = ["png", "jpg", "jpeg", "bmp", "tif", "tiff"];

/// Image files directly inside `dir`, sorted by name.
pub fn list_images(dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    out.sort();
    Ok(out)
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn load_gray_dir(flag: &str, dir: &Path) -> CliResult<Vec<GrayImage>> {
    require_dir(flag, dir)?;
    let files = list_images(dir).map_err(|e| usage(format!("{flag}: {e}")))?;
    if files.is_empty() {
        return Err(usage(format!("{flag}: no images in {}", dir.display())));
    }
    let mut out = Vec::new();
    for f in &files {
        match load_rgb(f) {
            Ok(img) => out.push(img.to_gray()),
            Err(e) => eprintln!("warning: skipping {e}"),
        }
    }
    if out.is_empty() {
        return Err(fail(EXIT_IO, format!("{flag}: none of the {} images could be read", files.len())));
    }
    Ok(out)
}

pub fn cmd_train(a: &TrainArgs) -> CliResult<()> {
    let s = settings(&a.common)?;
    let mut config = TrainConfig::default();
    s.apply_train(&mut config).map_err(usage)?;
    if let Some(seed) = a.common.seed {
        config.seed = seed;
    }
    config.validate().map_err(usage)?;
    let per_image = match a.patches_per_image {
        Some(n) => n,
        None => s.get("patches_per_image").map_err(usage)?.unwrap_or(DEFAULT_PATCHES_PER_IMAGE),
    };
    let images = load_gray_dir("--images", &a.images)?;
    let pool = pool(&a.common)?;
    let dog = DogParams::default();
    let harvested = pool.map(images.len(), |i| harvest_patches(&images[i], &dog, per_image));
    let mut patches = Vec::new();
    for h in harvested {
        patches.extend(h.map_err(|e| fail(EXIT_TRAINING, e.to_string()))?);
    }
    let t0 = Instant::now();
    let trained = train_model(&patches, &config).map_err(|e| fail(EXIT_TRAINING, format!("training failed: {e}")))?;
    save_model(&a.out, &trained.model).map_err(|e| fail(EXIT_IO, e.to_string()))?;
    let log_path = a.log.clone().unwrap_or_else(|| a.out.with_extension("csv"));
    let mut log = csv::Writer::from_path(&log_path).map_err(|e| fail(EXIT_IO, format!("{}: {e}", log_path.display())))?;
    let mut write = |r: [String; 3]| log.write_record(&r).map_err(|e| fail(EXIT_IO, e.to_string()));
    write(["epoch".into(), "train_loss".into(), "heldout_loss".into()])?;
    for r in &trained.layer2.log {
        write([r.epoch.to_string(), r.train_loss.to_string(), r.heldout_loss.to_string()])?;
    }
    log.flush().map_err(|e| fail(EXIT_IO, e.to_string()))?;
    println!(
        "trained on {} patches in {:.1} s; held-out objective {:.6} -> {:.6}",
        patches.len(),
        t0.elapsed().as_secs_f64(),
        trained.layer2.initial_heldout_loss,
        trained.layer2.final_heldout_loss
    );
    Ok(())
}

/// Defaults, then the config file, then flags.
pub fn detect_config(a: &DetectArgs) -> CliResult<DetectConfig> {
    let mut c = DetectConfig::default();
    settings(&a.common)?.apply_detect(&mut c).map_err(usage)?;
    if let Some(v) = a.common.seed {
        c.seed = v;
    }
    if let Some(v) = a.regions {
        c.region_count = Some(v);
    }
    if let Some(v) = a.knn {
        c.matching.knn = v;
    }
    if let Some(v) = a.min_matches {
        c.matching.min_matches = v;
    }
    if let Some(v) = a.ransac_iters {
        c.ransac.iterations = v;
    }
    if let Some(v) = a.inlier_tol {
        c.ransac.inlier_tol = v;
    }
    if let Some(v) = a.zncc {
        c.verify.zncc_threshold = v;
    }
    if let Some(v) = a.lambda {
        c.lambda = v;
    }
    Ok(c)
}

fn labels_for(a: &DetectArgs, image: &Path) -> crate::error::Result<Option<LabelMap>> {
    let Some(l) = &a.labels else { return Ok(None) };
    let path = if l.is_dir() { l.join(format!("{}.png", stem(image))) } else { l.clone() };
    load_labelmap(path).map(Some)
}

pub fn cmd_detect(a: &DetectArgs) -> CliResult<()> {
    let config = detect_config(a)?;
    require_file("--model", &a.model)?;
    let model = load_model(&a.model).map_err(|e| usage(format!("--model: {e}")))?;
    if let Some(l) = &a.labels {
        if l.is_file() && a.images.len() > 1 {
            return Err(usage("--labels: a single label map needs a single image; pass a directory instead"));
        }
    }
    std::fs::create_dir_all(&a.out).map_err(|e| usage(format!("--out: {e}")))?;
    let pool = pool(&a.common)?;
    let mut failures = 0;
    for path in &a.images {
        let name = stem(path);
        let sidecar = a.out.join(format!("{name}.jsonl"));
        let outcome = (|| -> Result<Vec<SidecarRecord>, String> {
            let img = load_rgb(path).map_err(|e| e.to_string())?;
            let labels = labels_for(a, path).map_err(|e| e.to_string())?;
            let mut timer = StageTimer::default();
            let d = detect(&img, labels, &model, &config, &pool, &mut timer).map_err(|e| e.to_string())?;
            save_mask(a.out.join(format!("{name}.png")), &d.tamper_map).map_err(|e| e.to_string())?;
            Ok(detection_records(&path.display().to_string(), &d, &timer.timings))
        })();
        let records = match outcome {
            Ok(r) => r,
            Err(error) => {
                failures += 1;
                eprintln!("error: {}: {error}", path.display());
                vec![SidecarRecord::Error { image: path.display().to_string(), error }]
            }
        };
        write_jsonl(&sidecar, &records).map_err(|e| fail(EXIT_IO, e.to_string()))?;
    }
    if failures == a.images.len() {
        return Err(fail(EXIT_IO, format!("all {failures} images failed")));
    }
    Ok(())
}

pub fn cmd_evaluate(a: &EvaluateArgs) -> CliResult<()> {
    require_dir("--maps", &a.maps)?;
    require_dir("--gt", &a.gt)?;
    let maps = list_images(&a.maps).map_err(|e| usage(format!("--maps: {e}")))?;
    if maps.is_empty() {
        return Err(usage(format!("--maps: no maps in {}", a.maps.display())));
    }
    let mut names = Vec::new();
    let mut outcomes = Vec::new();
    let mut gts: Vec<TamperMap> = Vec::new();
    let mut loaded = 0;
    for m in &maps {
        let gt_path = a.gt.join(format!("{}.png", stem(m)));
        if !gt_path.is_file() {
            return Err(usage(format!("--gt: no ground truth {} for {}", gt_path.display(), m.display())));
        }
        let (map, gt) = match (load_mask(m), load_mask(&gt_path)) {
            (Ok(map), Ok(gt)) => (map, gt),
            (Err(e), _) | (_, Err(e)) => {
                eprintln!("error: {e}");
                continue;
            }
        };
        loaded += 1;
        names.push(m.display().to_string());
        outcomes.push(ImageOutcome { verdict: !map.is_empty(), map });
        gts.push(gt);
    }
    if loaded == 0 {
        return Err(fail(EXIT_IO, "no map could be read"));
    }
    let original: Vec<bool> = gts.iter().map(TamperMap::is_empty).collect();
    let report = dataset_report(&outcomes, &gts, &original).map_err(usage)?;
    let rows: Vec<_> = outcomes.iter().zip(&gts).map(|(o, g)| pixel_metrics(&o.map, g)).collect::<Result<_, _>>().map_err(usage)?;
    let verdicts: Vec<bool> = outcomes.iter().map(|o| o.verdict).collect();
    match &a.out {
        Some(p) => {
            let f = std::fs::File::create(p).map_err(|e| fail(EXIT_IO, format!("{}: {e}", p.display())))?;
            write_evaluation_csv(f, &names, &rows, &verdicts, &report)
        }
        None => write_evaluation_csv(std::io::stdout().lock(), &names, &rows, &verdicts, &report),
    }
    .map_err(|e| fail(EXIT_IO, e.to_string()))
}

pub fn cmd_synth(a: &SynthArgs) -> CliResult<()> {
    let seed = a.common.seed.unwrap_or(0);
    let host = match &a.input {
        Some(p) => load_rgb(p).map_err(|e| fail(EXIT_IO, format!("--input: {e}")))?,
        None => texture(a.size, a.size, seed),
    };
    let (dx, dy) = (0.0, 0.0);
    let spec = match a.transform {
        TransformKind::None => None,
        TransformKind::Translate => Some(TransformSpec::Translate { dx, dy }),
        TransformKind::Rotate => Some(TransformSpec::Rotate { dx, dy, degrees: a.angle }),
        TransformKind::Scale => Some(TransformSpec::Scale { dx, dy, factor: a.factor }),
        TransformKind::Combo => Some(TransformSpec::Combo { dx, dy, degrees: a.angle, factor: a.factor }),
    };
    let (img, gt) = match spec {
        None => (host.clone(), TamperMap::empty(host.width, host.height)),
        Some(spec) => {
            let (img, gt, _, _) = random_forgery(&host, a.block, &spec, a.margin, seed).map_err(usage)?;
            (img, gt)
        }
    };
    let (images, gts) = (a.out.join("images"), a.out.join("gt"));
    for d in [&images, &gts] {
        std::fs::create_dir_all(d).map_err(|e| usage(format!("--out: {e}")))?;
    }
    save_rgb(images.join(format!("{}.png", a.name)), &img).map_err(|e| fail(EXIT_IO, e.to_string()))?;
    save_mask(gts.join(format!("{}.png", a.name)), &gt).map_err(|e| fail(EXIT_IO, e.to_string()))?;
    Ok(())
}

pub fn cmd_retrieve(a: &RetrieveArgs) -> CliResult<()> {
    if a.patches < 2 {
        return Err(usage("--patches: retrieval needs at least two classes"));
    }
    require_file("--model", &a.model)?;
    let model = load_model(&a.model).map_err(|e| usage(format!("--model: {e}")))?;
    let images = load_gray_dir("--images", &a.images)?;
    let side = model.shape.patch_side;
    let max_scale = RETRIEVAL_VIEWS.iter().map(|v| v.1).fold(1.0, f64::max);
    let centers = patch_centers(&images, a.patches, side, max_scale, a.common.seed.unwrap_or(0)).map_err(usage)?;
    let (patches, classes) = transformed_patch_classes(&images, &centers, &RETRIEVAL_VIEWS, side).map_err(usage)?;
    let pool = pool(&a.common)?;
    let t0 = Instant::now();
    let descs = pool.map(patches.len(), |i| describe(&patches[i], &model).map(|d| d.values));
    let elapsed = t0.elapsed().as_secs_f64();
    let descs = descs.into_iter().collect::<Result<Vec<_>, _>>().map_err(usage)?;
    let accuracy = patch_retrieval_eval(&descs, &classes).map_err(usage)?;
    println!("classes {} patches {} accuracy {accuracy:.4}", a.patches, descs.len());
    println!("extraction time per 10000 patches {:.2} s", elapsed * 10_000.0 / descs.len() as f64);
    Ok(())
}
