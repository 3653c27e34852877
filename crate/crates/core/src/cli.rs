//! Command-line surface: `synth`, `preprocess`, `train`, `select-transfer`,
//! `predict`, and `evaluate`.
//!
//! Every tunable flag can also come from an optional `--config` file of
//! `key = value` lines (keys are the long flag names); explicit flags win.
//! Input/output paths are command-line only. All subcommands are
//! bit-reproducible for a fixed `--seed`.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use crate::drunet::{
    load_checkpoint, predict_image, save_checkpoint, NetworkSpec, TrainConfig,
};
use crate::error::{Error, Result};
use crate::eval::{
    apply_threshold, confusion, format_metrics_line, metrics, roc_auc, ConfusionCounts,
};
use crate::imgio::{
    load_dataset_dir, load_image, load_mask, save_gray_pgm, save_mask_pgm, save_rgb_ppm,
    synth_vessels, Domain, LoadedImage, ManifestEntry, PictureLabel, SampleRecord, SynthStyle,
    MANIFEST_NAME,
};
use crate::preprocess::{preprocess_chain, ClaheConfig};
use crate::tensor::AdamConfig;
use crate::transfer::{run_selection, two_stage_loop, TransferConfig};

#[derive(Parser)]
#[command(
    name = "vesselseg",
    version,
    about = "Patch-based vessel segmentation with selective cross-domain transfer"
)]
struct Cli {
    /// Config file of `key = value` lines mirroring the tunable flags.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a deterministic synthetic dataset (images, masks, manifest).
    Synth(SynthArgs),
    /// Standardize, equalize, and gamma-adjust every image of a dataset.
    Preprocess(PreprocessArgs),
    /// Train a network, optionally alternating with transfer selection.
    Train(TrainArgs),
    /// Score source images against the target domain and emit a selection report.
    SelectTransfer(SelectArgs),
    /// Stitch per-patch predictions into full probability maps.
    Predict(PredictArgs),
    /// Print `acc sen spe auc` for probability maps against ground truth.
    Evaluate(EvaluateArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Root directory; the dataset is written to `<out>/<dataset>/`.
    #[arg(long)]
    out: PathBuf,
    /// Dataset name [default: synth]
    #[arg(long)]
    dataset: Option<String>,
    /// Number of images [default: 4]
    #[arg(long)]
    count: Option<usize>,
    /// Base seed; image i uses seed + i [default: 1]
    #[arg(long)]
    seed: Option<u64>,
    /// Image width [default: 64]
    #[arg(long)]
    width: Option<usize>,
    /// Image height [default: 64]
    #[arg(long)]
    height: Option<usize>,
    /// Drawing style: retina | neuron [default: retina]
    #[arg(long)]
    style: Option<String>,
    /// Domain column for the manifest: target | source [default: target]
    #[arg(long)]
    domain: Option<String>,
    /// Picture label: similar | dissimilar | none | auto [default: auto]
    ///
    /// `auto` labels target datasets `similar` and leaves sources unlabeled.
    #[arg(long)]
    label: Option<String>,
}

#[derive(Args)]
struct PreprocessArgs {
    /// Dataset directory (with manifest.tsv).
    #[arg(long)]
    data: PathBuf,
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
    /// Gamma exponent [default: 1.2]
    #[arg(long)]
    gamma: Option<f64>,
    /// CLAHE clip limit (multiple of the uniform bin height) [default: 2.0]
    #[arg(long)]
    clip_limit: Option<f64>,
    /// CLAHE tile grid as NxM [default: 8x8]
    #[arg(long)]
    tiles: Option<String>,
    /// CLAHE histogram bins [default: 256]
    #[arg(long)]
    bins: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    /// Target dataset directory.
    #[arg(long)]
    data: PathBuf,
    /// Source dataset directory; repeatable.
    #[arg(long)]
    source: Vec<PathBuf>,
    /// Checkpoint output path.
    #[arg(long)]
    out: PathBuf,
    /// Transfer rounds; 1 trains on the target only [default: 1]
    #[arg(long)]
    rounds: Option<usize>,
    /// Network patch side [default: 48]
    #[arg(long)]
    patch_size: Option<usize>,
    /// Pooling stages [default: 2]
    #[arg(long)]
    depth: Option<usize>,
    /// First-stage channels [default: 16]
    #[arg(long)]
    base_channels: Option<usize>,
    /// Embedding dimension [default: 64]
    #[arg(long)]
    latent_dim: Option<usize>,
    /// Epochs per round [default: 30]
    #[arg(long)]
    epochs: Option<usize>,
    /// Minibatch size [default: 8]
    #[arg(long)]
    batch: Option<usize>,
    /// Random patches sampled per image per round [default: 16]
    #[arg(long)]
    patches_per_image: Option<usize>,
    /// Adam learning rate [default: 1e-3]
    #[arg(long)]
    lr: Option<f64>,
    /// Seed for init, patch sampling, and batch order [default: 42]
    #[arg(long)]
    seed: Option<u64>,
    /// Clusters for the selection step [default: 4]
    #[arg(long)]
    k: Option<usize>,
    /// Acceptance threshold on the patch vote fraction [default: 0.5]
    #[arg(long)]
    vote_threshold: Option<f64>,
    /// Stride of the latent grid; 0 means the patch size [default: 0]
    #[arg(long)]
    latent_stride: Option<usize>,
    /// Prefix for per-round selection reports [default: derived from --out]
    #[arg(long)]
    selection_out: Option<PathBuf>,
}

#[derive(Args)]
struct SelectArgs {
    /// Trained checkpoint.
    #[arg(long)]
    model: PathBuf,
    /// Target dataset directory.
    #[arg(long)]
    data: PathBuf,
    /// Source dataset directory; repeatable.
    #[arg(long, required = true)]
    source: Vec<PathBuf>,
    /// Selection report output path (TSV).
    #[arg(long)]
    out: PathBuf,
    /// Clusters [default: 4]
    #[arg(long)]
    k: Option<usize>,
    /// Acceptance threshold [default: 0.5]
    #[arg(long)]
    vote_threshold: Option<f64>,
    /// Stride of the latent grid; 0 means the patch size [default: 0]
    #[arg(long)]
    latent_stride: Option<usize>,
}

#[derive(Args)]
struct PredictArgs {
    /// Trained checkpoint.
    #[arg(long)]
    model: PathBuf,
    /// Dataset directory to predict.
    #[arg(long)]
    data: PathBuf,
    /// Output directory for probability-map PGMs.
    #[arg(long)]
    out: PathBuf,
    /// Grid stride [default: 24]
    #[arg(long)]
    stride: Option<usize>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Probability map (PGM) or directory of them.
    #[arg(long)]
    pred: PathBuf,
    /// Ground-truth mask, mask directory, or dataset directory.
    #[arg(long)]
    truth: PathBuf,
    /// Decision threshold [default: 0.5]
    #[arg(long)]
    threshold: Option<f64>,
    /// Optional ROI mask restricting evaluated pixels.
    #[arg(long)]
    roi: Option<PathBuf>,
}

/// `key = value` lines, one per tunable flag.
struct ConfigMap(BTreeMap<String, String>);

impl ConfigMap {
    fn empty() -> Self {
        ConfigMap(BTreeMap::new())
    }

    fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut map = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "{}:{}: expected `key = value`, got `{line}`",
                    path.display(),
                    i + 1
                ))
            })?;
            map.insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(ConfigMap(map))
    }

    fn resolve<T: FromStr + Clone>(&self, cli: &Option<T>, key: &str, default: T) -> Result<T> {
        if let Some(v) = cli {
            return Ok(v.clone());
        }
        match self.0.get(key) {
            Some(raw) => raw
                .parse::<T>()
                .map_err(|_| Error::Config(format!("config key `{key}` has invalid value `{raw}`"))),
            None => Ok(default),
        }
    }
}

fn parse_tiles(s: &str) -> Result<(usize, usize)> {
    let (x, y) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| Error::Config(format!("tiles must be NxM, got `{s}`")))?;
    let parse = |v: &str| {
        v.parse::<usize>()
            .map_err(|_| Error::Config(format!("tiles must be NxM, got `{s}`")))
    };
    Ok((parse(x)?, parse(y)?))
}

/// Runs the CLI; returns the process exit code (0 success, 1 runtime
/// failure, 2 usage error).
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    let cfg = match &cli.config {
        Some(path) => match ConfigMap::load(path) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("error: {e}");
                return 1;
            }
        },
        None => ConfigMap::empty(),
    };
    let outcome = match cli.cmd {
        Cmd::Synth(a) => cmd_synth(a, &cfg),
        Cmd::Preprocess(a) => cmd_preprocess(a, &cfg),
        Cmd::Train(a) => cmd_train(a, &cfg),
        Cmd::SelectTransfer(a) => cmd_select(a, &cfg),
        Cmd::Predict(a) => cmd_predict(a, &cfg),
        Cmd::Evaluate(a) => cmd_evaluate(a, &cfg),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn cmd_synth(a: SynthArgs, cfg: &ConfigMap) -> Result<()> {
    let dataset = cfg.resolve(&a.dataset, "dataset", "synth".to_string())?;
    let count = cfg.resolve(&a.count, "count", 4)?;
    let seed = cfg.resolve(&a.seed, "seed", 1)?;
    let width = cfg.resolve(&a.width, "width", 64)?;
    let height = cfg.resolve(&a.height, "height", 64)?;
    let style = SynthStyle::parse(&cfg.resolve(&a.style, "style", "retina".to_string())?)?;
    let domain = match cfg.resolve(&a.domain, "domain", "target".to_string())?.as_str() {
        "target" => Domain::Target,
        "source" => Domain::Source,
        other => return Err(Error::Config(format!("unknown domain `{other}`"))),
    };
    let label_raw = cfg.resolve(&a.label, "label", "auto".to_string())?;
    let picture_label = match (label_raw.as_str(), domain) {
        ("similar", _) => Some(PictureLabel::Similar),
        ("dissimilar", _) => Some(PictureLabel::Dissimilar),
        ("none", _) => None,
        ("auto", Domain::Target) => Some(PictureLabel::Similar),
        ("auto", Domain::Source) => None,
        (other, _) => return Err(Error::Config(format!("unknown label `{other}`"))),
    };

    let root = a.out.join(&dataset);
    fs::create_dir_all(root.join("images")).map_err(|e| Error::io(&root, e))?;
    fs::create_dir_all(root.join("masks")).map_err(|e| Error::io(&root, e))?;
    let mut entries = Vec::with_capacity(count);
    for i in 0..count {
        let id = format!("{dataset}_{i:03}");
        let (img, mask) = synth_vessels(seed.wrapping_add(i as u64), width, height, style)?;
        save_rgb_ppm(&img, &root.join("images").join(format!("{id}.ppm")))?;
        save_mask_pgm(&mask, &root.join("masks").join(format!("{id}.pgm")))?;
        entries.push(ManifestEntry {
            id,
            domain,
            dataset_name: dataset.clone(),
            picture_label,
        });
    }
    crate::imgio::write_manifest(&root.join(MANIFEST_NAME), &entries)?;
    println!("wrote {count} {} images to {}", style.as_str(), root.display());
    Ok(())
}

fn cmd_preprocess(a: PreprocessArgs, cfg: &ConfigMap) -> Result<()> {
    let gamma = cfg.resolve(&a.gamma, "gamma", 1.2)?;
    let clip_limit = cfg.resolve(&a.clip_limit, "clip-limit", 2.0)?;
    let (tiles_x, tiles_y) = parse_tiles(&cfg.resolve(&a.tiles, "tiles", "8x8".to_string())?)?;
    let bins = cfg.resolve(&a.bins, "bins", 256)?;
    let clahe_cfg = ClaheConfig {
        tiles_x,
        tiles_y,
        clip_limit,
        bins,
    };

    let records = load_dataset_dir(&a.data)?;
    fs::create_dir_all(a.out.join("images")).map_err(|e| Error::io(&a.out, e))?;
    fs::create_dir_all(a.out.join("masks")).map_err(|e| Error::io(&a.out, e))?;
    let mut entries = Vec::with_capacity(records.len());
    for rec in &records {
        let processed = preprocess_chain(&rec.image, &clahe_cfg, gamma)?;
        save_gray_pgm(&processed, &a.out.join("images").join(format!("{}.pgm", rec.id)))?;
        if let Some(mask) = &rec.mask {
            save_mask_pgm(mask, &a.out.join("masks").join(format!("{}.pgm", rec.id)))?;
        }
        entries.push(ManifestEntry {
            id: rec.id.clone(),
            domain: rec.domain,
            dataset_name: rec.dataset_name.clone(),
            picture_label: rec.picture_label,
        });
    }
    crate::imgio::write_manifest(&a.out.join(MANIFEST_NAME), &entries)?;
    println!("preprocessed {} images into {}", records.len(), a.out.display());
    Ok(())
}

fn load_split(
    target_dir: &Path,
    source_dirs: &[PathBuf],
) -> Result<(Vec<SampleRecord>, Vec<SampleRecord>)> {
    let targets: Vec<SampleRecord> = load_dataset_dir(target_dir)?
        .into_iter()
        .filter(|r| r.domain == Domain::Target)
        .collect();
    if targets.is_empty() {
        return Err(Error::Config(format!(
            "no target-domain records in {}",
            target_dir.display()
        )));
    }
    let mut sources = Vec::new();
    for dir in source_dirs {
        sources.extend(
            load_dataset_dir(dir)?
                .into_iter()
                .filter(|r| r.domain == Domain::Source),
        );
    }
    Ok((targets, sources))
}

fn cmd_train(a: TrainArgs, cfg: &ConfigMap) -> Result<()> {
    let rounds = cfg.resolve(&a.rounds, "rounds", 1)?;
    let spec = NetworkSpec {
        depth: cfg.resolve(&a.depth, "depth", 2)?,
        base_channels: cfg.resolve(&a.base_channels, "base-channels", 16)?,
        latent_dim: cfg.resolve(&a.latent_dim, "latent-dim", 64)?,
        patch: cfg.resolve(&a.patch_size, "patch-size", 48)?,
        seed: cfg.resolve(&a.seed, "seed", 42)?,
    };
    let train_cfg = TrainConfig {
        epochs: cfg.resolve(&a.epochs, "epochs", 30)?,
        batch: cfg.resolve(&a.batch, "batch", 8)?,
        patches_per_image: cfg.resolve(&a.patches_per_image, "patches-per-image", 16)?,
        adam: AdamConfig {
            lr: cfg.resolve(&a.lr, "lr", 1e-3)?,
            ..Default::default()
        },
        seed: spec.seed,
    };
    let transfer_cfg = TransferConfig {
        k: cfg.resolve(&a.k, "k", 4)?,
        vote_threshold: cfg.resolve(&a.vote_threshold, "vote-threshold", 0.5)?,
        latent_stride: cfg.resolve(&a.latent_stride, "latent-stride", 0)?,
        rounds,
        ..Default::default()
    };

    let (targets, sources) = load_split(&a.data, &a.source)?;
    let (model, selections) = two_stage_loop(&targets, &sources, &spec, &train_cfg, &transfer_cfg)?;

    println!(
        "round 1/{rounds}: trained on {} patches from {} target images",
        targets.len() * train_cfg.patches_per_image,
        targets.len()
    );
    let selection_prefix = a.selection_out.clone().unwrap_or_else(|| a.out.clone());
    for (i, sel) in selections.iter().enumerate() {
        let round = i + 2;
        let accepted = sel.accepted_ids().len();
        let masked = sel
            .accepted_ids()
            .iter()
            .filter(|id| {
                sources
                    .iter()
                    .any(|s| s.id == **id && s.mask.is_some())
            })
            .count();
        println!(
            "round {round}/{rounds}: accepted {accepted}/{} sources ({masked} with masks joined training)",
            sel.records.len()
        );
        let path = selection_path(&selection_prefix, round);
        fs::write(&path, sel.to_tsv()).map_err(|e| Error::io(&path, e))?;
    }
    save_checkpoint(&model, &a.out)?;
    println!("checkpoint written to {}", a.out.display());
    Ok(())
}

fn selection_path(prefix: &Path, round: usize) -> PathBuf {
    let mut name = prefix.file_name().unwrap_or_default().to_os_string();
    name.push(format!(".round{round}.selection.tsv"));
    prefix.with_file_name(name)
}

fn cmd_select(a: SelectArgs, cfg: &ConfigMap) -> Result<()> {
    let transfer_cfg = TransferConfig {
        k: cfg.resolve(&a.k, "k", 4)?,
        vote_threshold: cfg.resolve(&a.vote_threshold, "vote-threshold", 0.5)?,
        latent_stride: cfg.resolve(&a.latent_stride, "latent-stride", 0)?,
        ..Default::default()
    };
    let model = load_checkpoint(&a.model)?;
    let (targets, sources) = load_split(&a.data, &a.source)?;
    if sources.is_empty() {
        return Err(Error::Config("no source-domain records to select from".into()));
    }
    let selection = run_selection(&model, &targets, &sources, &transfer_cfg)?;
    fs::write(&a.out, selection.to_tsv()).map_err(|e| Error::io(&a.out, e))?;
    println!(
        "accepted {}/{} sources; report written to {}",
        selection.accepted_ids().len(),
        selection.records.len(),
        a.out.display()
    );
    Ok(())
}

fn cmd_predict(a: PredictArgs, cfg: &ConfigMap) -> Result<()> {
    let stride = cfg.resolve(&a.stride, "stride", 24)?;
    let model = load_checkpoint(&a.model)?;
    let stride = stride.min(model.spec().patch);
    let records = load_dataset_dir(&a.data)?;
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    for rec in &records {
        let prob = predict_image(&model, &rec.image, stride)?;
        save_gray_pgm(&prob, &a.out.join(format!("{}.pgm", rec.id)))?;
    }
    println!("wrote {} probability maps to {}", records.len(), a.out.display());
    Ok(())
}

fn load_prob_map(path: &Path) -> Result<crate::imgio::GrayImage> {
    match load_image(path)? {
        LoadedImage::Gray(g) => Ok(g),
        LoadedImage::Rgb(_) => Err(Error::Config(format!(
            "{} is a color image, expected a probability map",
            path.display()
        ))),
    }
}

// Pairs of (prediction, truth) paths for evaluation.
fn evaluation_pairs(pred: &Path, truth: &Path) -> Result<Vec<(PathBuf, PathBuf)>> {
    if pred.is_file() {
        return Ok(vec![(pred.to_path_buf(), truth.to_path_buf())]);
    }
    let truth_dir = if truth.join("masks").is_dir() {
        truth.join("masks")
    } else {
        truth.to_path_buf()
    };
    let mut names: Vec<String> = fs::read_dir(pred)
        .map_err(|e| Error::io(pred, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".pgm"))
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(Error::Config(format!("no .pgm files in {}", pred.display())));
    }
    names
        .into_iter()
        .map(|n| {
            let t = truth_dir.join(&n);
            if !t.is_file() {
                return Err(Error::Config(format!("missing ground truth {}", t.display())));
            }
            Ok((pred.join(&n), t))
        })
        .collect()
}

fn cmd_evaluate(a: EvaluateArgs, cfg: &ConfigMap) -> Result<()> {
    let threshold = cfg.resolve(&a.threshold, "threshold", 0.5)?;
    let roi = a.roi.as_deref().map(load_mask).transpose()?;
    let pairs = evaluation_pairs(&a.pred, &a.truth)?;

    let mut counts = ConfusionCounts::default();
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for (pred_path, truth_path) in &pairs {
        let prob = load_prob_map(pred_path)?;
        let truth = load_mask(truth_path)?;
        let pred = apply_threshold(&prob, threshold)?;
        counts.merge(&confusion(&pred, &truth, roi.as_ref())?);
        for i in 0..prob.pixels().len() {
            if let Some(r) = &roi {
                if r.pixels().get(i) != Some(&1) {
                    continue;
                }
            }
            scores.push(prob.pixels()[i]);
            labels.push(truth.pixels()[i] == 1);
        }
    }
    let m = metrics(&counts)?;
    let auc = match roc_auc(&scores, &labels) {
        Ok((_, auc)) => Some(auc),
        Err(Error::UndefinedAuc) => None,
        Err(e) => return Err(e),
    };
    println!("{}", format_metrics_line(&m, auc));
    Ok(())
}
