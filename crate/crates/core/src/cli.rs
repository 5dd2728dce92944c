//! The `glassseg` command line.
//!
//! Exit status is 0 on success, 1 for usage and validation errors and 2 for
//! I/O errors.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, LevelFilter};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fixtures::{gen_fixture_set, FixtureOptions, PerturbParams};
use crate::fusion::{decisions_to_json, fuse, FusionConfig, RejectMode};
use crate::manifest::{Manifest, Record};
use crate::merge::{
    build_merge_policy, derive_similar_pairs, ConfusionMatrix, MergeDerivationConfig, MergePolicy,
    OverrideSpec,
};
use crate::metrics::{compute_metrics, merge_tallies, tally_image, Tally};
use crate::raster::{
    decode_rle, encode_rle, read_labelmap, write_groundtruth, write_labelmap, write_masklets,
    BitMask, LabelMap, RleCounts, UnknownModel,
};
use crate::taxonomy::{ClassId, Taxonomy};

/// Environment variable consulted for the worker count when `--jobs` is absent.
pub const JOBS_ENV: &str = "GLASSSEG_JOBS";

#[derive(Debug, Parser)]
#[command(name = "glassseg", version, about = "Masklet fusion, class merging and merge-aware metrics for glass segmentation")]
struct Cli {
    /// Worker threads for manifest processing [env: GLASSSEG_JOBS]
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,

    /// Only report errors
    #[arg(long, short, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic fixture set with a manifest
    GenFixtures(GenFixturesArgs),
    /// Refine label maps with masklets
    Fuse(FuseArgs),
    /// Accumulate a confusion matrix over a manifest
    Confmat(ConfmatArgs),
    /// Derive a merge policy from a confusion matrix
    DeriveMerges(DeriveMergesArgs),
    /// Compute per-class IoU and accuracy over a manifest
    Evaluate(EvaluateArgs),
    /// Convert between binary masks and RLE counts
    #[command(subcommand)]
    Rle(RleCommand),
}

#[derive(Debug, Args)]
struct GenFixturesArgs {
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    count: usize,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 64)]
    height: usize,
    /// Taxonomy to draw classes and models from (default: built-in)
    #[arg(long)]
    taxonomy: Option<PathBuf>,
    /// Perturb object interiors only (holes and label flips)
    #[arg(long)]
    interior_only: bool,
    /// Maximum masklet grow/shrink in pixels
    #[arg(long, default_value_t = 1)]
    jitter: usize,
    /// Background masklets per scene
    #[arg(long, default_value_t = 2)]
    spurious: usize,
}

#[derive(Debug, Args)]
struct FuseArgs {
    /// Single label map to refine
    #[arg(long, requires_all = ["masklets", "out"], conflicts_with = "manifest")]
    labelmap: Option<PathBuf>,
    #[arg(long)]
    masklets: Option<PathBuf>,
    /// Output label map
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-masklet decisions report
    #[arg(long)]
    decisions: Option<PathBuf>,
    /// Refine every record of a manifest instead
    #[arg(long, requires = "out_dir")]
    manifest: Option<PathBuf>,
    /// Where fused maps and the new manifest go
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    taxonomy: Option<PathBuf>,
    /// Minimum share of one glass class for a masklet to be accepted
    #[arg(long, default_value_t = 0.10)]
    glass_fraction: f64,
    /// Drop masklets scoring below this
    #[arg(long, default_value_t = 0.0)]
    quality_min: f64,
    #[arg(long, value_enum, default_value_t = RejectArg::Background)]
    reject_mode: RejectArg,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum RejectArg {
    /// Overwrite rejected masklets with background
    Background,
    /// Leave pixels under rejected masklets unchanged
    Keep,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum UnknownModelArg {
    Warn,
    Error,
    Ignore,
}

impl From<UnknownModelArg> for UnknownModel {
    fn from(a: UnknownModelArg) -> Self {
        match a {
            UnknownModelArg::Warn => UnknownModel::Warn,
            UnknownModelArg::Error => UnknownModel::Error,
            UnknownModelArg::Ignore => UnknownModel::Ignore,
        }
    }
}

#[derive(Debug, Args)]
struct ConfmatArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    taxonomy: Option<PathBuf>,
    /// Output file; `.csv` selects CSV, anything else JSON
    #[arg(long)]
    out: PathBuf,
    /// Ground-truth models missing from the taxonomy registry
    #[arg(long, value_enum, default_value_t = UnknownModelArg::Warn)]
    unknown_model: UnknownModelArg,
}

#[derive(Debug, Args)]
struct DeriveMergesArgs {
    /// Confusion matrix JSON written by `confmat`
    #[arg(long)]
    confmat: PathBuf,
    #[arg(long)]
    taxonomy: Option<PathBuf>,
    /// Pairs merge when a row-normalized entry is strictly above this
    #[arg(long, default_value_t = 0.05)]
    threshold: f64,
    /// Class that never merges; repeatable. The taxonomy's unseen classes
    /// are always excluded.
    #[arg(long, value_name = "CLASS")]
    exclude: Vec<String>,
    /// Water-glass designation and per-model allowlists
    #[arg(long)]
    overrides: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    taxonomy: Option<PathBuf>,
    /// Merge policy JSON (default: identity)
    #[arg(long)]
    policy: Option<PathBuf>,
    /// Class to report separately; repeatable (default: the unseen classes)
    #[arg(long, value_name = "CLASS")]
    highlight: Vec<String>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = UnknownModelArg::Warn)]
    unknown_model: UnknownModelArg,
}

#[derive(Debug, Subcommand)]
enum RleCommand {
    /// PGM mask to `{"size":[H,W],"counts":[...]}`
    Encode {
        #[arg(long)]
        pgm: PathBuf,
        /// Encode pixels equal to this value (default: every non-zero pixel)
        #[arg(long)]
        value: Option<u8>,
        #[arg(long)]
        out: PathBuf,
    },
    /// RLE document to a PGM mask with values 0 and 255
    Decode {
        #[arg(long)]
        rle: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RleDoc {
    size: [usize; 2],
    counts: Vec<i64>,
}

/// Runs the CLI on `args` (including the program name) and returns the
/// process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let _ = env_logger::Builder::new()
        .filter_level(if cli.quiet { LevelFilter::Error } else { LevelFilter::Info })
        .format_timestamp(None)
        .format_target(false)
        .try_init();

    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_io() {
                2
            } else {
                1
            }
        }
    }
}

fn jobs(flag: Option<usize>) -> Result<usize> {
    let n = match flag {
        Some(n) => n,
        None => match std::env::var(JOBS_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{JOBS_ENV}={v:?} is not a thread count")))?,
            Err(_) => std::thread::available_parallelism().map_or(1, |n| n.get()),
        },
    };
    if n == 0 {
        return Err(Error::Config("--jobs must be at least 1".into()));
    }
    Ok(n)
}

fn dispatch(cli: Cli) -> Result<()> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs(cli.jobs)?)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| match cli.command {
        Command::GenFixtures(a) => gen_fixtures(a),
        Command::Fuse(a) => fuse_cmd(a),
        Command::Confmat(a) => confmat(a),
        Command::DeriveMerges(a) => derive_merges(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Rle(c) => rle(c),
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut text = text.to_owned();
    if !text.ends_with('\n') {
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// `--taxonomy` if given, else the one named by the manifest, else the
/// built-in default.
fn resolve_taxonomy(flag: Option<&Path>, manifest: Option<&Manifest>) -> Result<Taxonomy> {
    let path = flag
        .map(Path::to_path_buf)
        .or_else(|| manifest.and_then(Manifest::taxonomy_path));
    match path {
        Some(p) => Taxonomy::load(p),
        None => {
            info!("using the built-in taxonomy");
            Ok(Taxonomy::default_config())
        }
    }
}

fn class_list(names: &[String], t: &Taxonomy) -> Result<Vec<ClassId>> {
    names.iter().map(|n| t.class_by_name(n)).collect()
}

fn gen_fixtures(a: GenFixturesArgs) -> Result<()> {
    let t = resolve_taxonomy(a.taxonomy.as_deref(), None)?;
    let mut opts = FixtureOptions::typical(&t, a.width, a.height);
    if a.interior_only {
        opts.perturb = PerturbParams::interior_patchiness();
    }
    opts.jitter = a.jitter;
    opts.spurious = a.spurious;
    let scenes = gen_fixture_set(a.seed, a.count, &t, &opts)?;

    create_dir(&a.out_dir)?;
    write_text(&a.out_dir.join("taxonomy.json"), &t.to_json())?;
    scenes.par_iter().try_for_each(|s| -> Result<()> {
        let dir = a.out_dir.join(&s.id);
        create_dir(&dir)?;
        write_groundtruth(dir.join("gt.json"), &s.scene.groundtruth, &t)?;
        write_labelmap(&s.scene.labels, dir.join("gt.pgm"))?;
        write_labelmap(&s.prediction, dir.join("pred.pgm"))?;
        write_masklets(dir.join("masklets.json"), a.width, a.height, &s.masklets)
    })?;
    let records = scenes
        .iter()
        .map(|s| Record {
            id: s.id.clone(),
            groundtruth: Path::new(&s.id).join("gt.json"),
            prediction: Path::new(&s.id).join("pred.pgm"),
            masklets: Some(Path::new(&s.id).join("masklets.json")),
        })
        .collect();
    let m = Manifest::new(&a.out_dir, Some("taxonomy.json".into()), records)?;
    write_text(&a.out_dir.join("manifest.json"), &m.to_json())?;
    info!("wrote {} scenes to {}", scenes.len(), a.out_dir.display());
    Ok(())
}

fn fuse_cmd(a: FuseArgs) -> Result<()> {
    let cfg = FusionConfig {
        glass_fraction_min: a.glass_fraction,
        quality_min: a.quality_min,
        reject_mode: match a.reject_mode {
            RejectArg::Background => RejectMode::Background,
            RejectArg::Keep => RejectMode::Keep,
        },
    };
    cfg.validate()?;
    if let Some(manifest) = &a.manifest {
        return fuse_manifest(manifest, a.out_dir.as_deref().expect("clap requires out-dir"), a.taxonomy.as_deref(), &cfg);
    }
    let (Some(labelmap), Some(masklets), Some(out)) = (&a.labelmap, &a.masklets, &a.out) else {
        return Err(Error::Config(
            "fuse needs either --labelmap/--masklets/--out or --manifest/--out-dir".into(),
        ));
    };
    let t = resolve_taxonomy(a.taxonomy.as_deref(), None)?;
    let s = read_labelmap(labelmap, Some(&t))?;
    let file = crate::raster::read_masklets(masklets)?;
    crate::error::check_dims(s.dims(), (file.width, file.height))?;
    let (fused, decisions) = fuse(&s, &file.masklets, &t, &cfg)?;
    write_labelmap(&fused, out)?;
    if let Some(d) = &a.decisions {
        write_text(d, &decisions_to_json(&decisions, &t))?;
    }
    let accepted = decisions.iter().filter(|d| d.assigned_class().is_some()).count();
    info!("{accepted} of {} masklets accepted", decisions.len());
    Ok(())
}

/// Fuses every record and writes `<out-dir>/<id>/fused.pgm`,
/// `<out-dir>/<id>/decisions.json` and a manifest pointing at the fused maps.
fn fuse_manifest(path: &Path, out_dir: &Path, taxonomy: Option<&Path>, cfg: &FusionConfig) -> Result<()> {
    let m = Manifest::load(path)?;
    let t = resolve_taxonomy(taxonomy, Some(&m))?;
    create_dir(out_dir)?;
    let abs = |p: PathBuf| std::path::absolute(&p).map_err(|e| Error::io(p, e));
    let records = m
        .records()
        .par_iter()
        .map(|r| -> Result<Record> {
            let s = read_labelmap(m.resolve(&r.prediction), Some(&t))?;
            let masklets = m.load_masklets(r, s.dims())?;
            let (fused, decisions) = fuse(&s, &masklets, &t, cfg)?;
            let dir = out_dir.join(&r.id);
            create_dir(&dir)?;
            write_labelmap(&fused, dir.join("fused.pgm"))?;
            write_text(&dir.join("decisions.json"), &decisions_to_json(&decisions, &t))?;
            Ok(Record {
                id: r.id.clone(),
                groundtruth: abs(m.resolve(&r.groundtruth))?,
                prediction: Path::new(&r.id).join("fused.pgm"),
                masklets: r.masklets.as_ref().map(|p| abs(m.resolve(p))).transpose()?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let taxonomy_path = match taxonomy.map(Path::to_path_buf).or_else(|| m.taxonomy_path()) {
        Some(p) => Some(abs(p)?),
        None => None,
    };
    let fused = Manifest::new(out_dir, taxonomy_path, records)?;
    write_text(&out_dir.join("manifest.json"), &fused.to_json())?;
    info!("fused {} records into {}", fused.len(), out_dir.display());
    Ok(())
}

fn confmat(a: ConfmatArgs) -> Result<()> {
    let m = Manifest::load(&a.manifest)?;
    let t = resolve_taxonomy(a.taxonomy.as_deref(), Some(&m))?;
    let unknown = a.unknown_model.into();
    let parts = m
        .records()
        .par_iter()
        .map(|r| {
            let (gt, pred) = m.load_pair(r, &t, unknown)?;
            let mut c = ConfusionMatrix::new(t.len());
            c.accumulate(&gt, &pred, &t)?;
            Ok(c)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut total = ConfusionMatrix::new(t.len());
    for c in &parts {
        total.merge(c)?;
    }
    let text = if a.out.extension().is_some_and(|e| e == "csv") {
        total.to_csv(&t)
    } else {
        total.to_json(&t)
    };
    write_text(&a.out, &text)?;
    info!("confusion over {} records, {} pixels", m.len(), total.total());
    Ok(())
}

fn derive_merges(a: DeriveMergesArgs) -> Result<()> {
    let t = resolve_taxonomy(a.taxonomy.as_deref(), None)?;
    let text = std::fs::read_to_string(&a.confmat).map_err(|e| Error::io(&a.confmat, e))?;
    let matrix = ConfusionMatrix::parse_json(&text, &t)?;
    let mut excluded: BTreeSet<ClassId> = class_list(&a.exclude, &t)?.into_iter().collect();
    excluded.extend(t.unseen().iter().copied());
    let cfg = MergeDerivationConfig {
        similarity_min: a.threshold,
        excluded,
    };
    let pairs = derive_similar_pairs(&matrix.row_normalize(), &cfg, &t)?;
    for p in &pairs {
        info!("similar: {} ~ {}", t.name(p.low()), t.name(p.high()));
    }
    let spec = match &a.overrides {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            Some(OverrideSpec::parse(&text, &t)?)
        }
        None => None,
    };
    let policy = build_merge_policy(&pairs, spec.as_ref(), &t)?;
    write_text(&a.out, &policy.to_json(&t))
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let m = Manifest::load(&a.manifest)?;
    let t = resolve_taxonomy(a.taxonomy.as_deref(), Some(&m))?;
    let policy = match &a.policy {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            MergePolicy::parse_json(&text, &t)?
        }
        None => MergePolicy::identity(&t),
    };
    let highlight = if a.highlight.is_empty() {
        t.unseen().iter().copied().collect()
    } else {
        class_list(&a.highlight, &t)?
    };
    let unknown = a.unknown_model.into();
    let tallies = m
        .records()
        .par_iter()
        .map(|r| {
            let (gt, pred) = m.load_pair(r, &t, unknown)?;
            tally_image(&gt, &pred, &policy, &t)
        })
        .collect::<Result<Vec<Tally>>>()?;
    let total = if tallies.is_empty() {
        Tally::new(t.len())
    } else {
        merge_tallies(&tallies)?
    };
    let report = compute_metrics(&total, &t);
    write_text(&a.out, &report.to_json(&t, &highlight, m.len()))?;
    if let Some(csv) = &a.csv {
        write_text(csv, &report.to_csv(&t))?;
    }
    let fmt = |v: Option<f64>| v.map_or("undefined".to_owned(), |v| format!("{v:.4}"));
    info!("mIoU {} mAcc {} over {} records", fmt(report.miou), fmt(report.macc), m.len());
    Ok(())
}

fn rle(c: RleCommand) -> Result<()> {
    match c {
        RleCommand::Encode { pgm, value, out } => {
            let map = read_labelmap(&pgm, None)?;
            let (w, h) = map.dims();
            let mask = BitMask::from_fn(w, h, |x, y| {
                let v = map.get(x, y).0;
                value.map_or(v != 0, |want| v == want)
            });
            let doc = RleDoc {
                size: [h, w],
                counts: encode_rle(&mask).0.into_iter().map(|c| c as i64).collect(),
            };
            write_text(&out, &serde_json::to_string(&doc).expect("rle serializes"))
        }
        RleCommand::Decode { rle, out } => {
            let text = std::fs::read_to_string(&rle).map_err(|e| Error::io(&rle, e))?;
            let doc: RleDoc = serde_json::from_str(&text).map_err(|e| Error::json("rle", e))?;
            let [h, w] = doc.size;
            if w == 0 || h == 0 {
                return Err(Error::Rle(format!("empty size [{h},{w}]")));
            }
            let mask = decode_rle(&RleCounts::from_signed(&doc.counts)?, w, h)?;
            let data = mask
                .to_bools()
                .into_iter()
                .map(|b| ClassId(if b { 255 } else { 0 }))
                .collect();
            write_labelmap(&LabelMap::from_data(w, h, data)?, out)
        }
    }
}
