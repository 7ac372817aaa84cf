//! Command-line front end. Every command writes `resolved_config.toml` into
//! its output directory; `puzzlegan replay <that file>` reruns it.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{load_layout_file, RunConfig};
use crate::dataio::{self, ImageStore};
use crate::error::Error;
use crate::export;
use crate::influence::{block_influence, classify_regions, symbolic_influence, InfluenceMap, Region};
use crate::latent::{mix, sample_bundle, sample_bundles};
use crate::layout::{canonical_layout, validate_layout, LayoutKind, PartId, PartLayout};
use crate::metrics::{extract_features, frechet_distance, region_stats, swap_mse, Extractor, FeatureSummary};
use crate::model::{Checkpoint, ModelSpec};
use crate::tensor::{deterministic_mode, Tensor};
use crate::training::{train, TrainEvent, TrainLog};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "puzzlegan", version, about = "Compositional GAN with per-part latent priors")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "command")]
pub enum Command {
    /// Parse and validate a layout file, printing the grid.
    LayoutCheck(LayoutCheckArgs),
    /// Train a model from a TOML config.
    Train(TrainArgs),
    /// Render random samples from a checkpoint.
    Sample(SampleArgs),
    /// Target | reference | mix comparison grid.
    Swap(SwapArgs),
    /// Symbolic influence maps and region masks.
    Influence(InfluenceArgs),
    /// Swap-MSE heatmaps and per-region statistics.
    EvalRegions(EvalRegionsArgs),
    /// Fréchet distance between generated and real images.
    Fid(FidArgs),
    /// Write procedural aligned face images.
    Synth(SynthArgs),
    /// Preprocess an image folder into a store.
    Ingest(IngestArgs),
    /// Re-run a command from its resolved_config.toml.
    #[serde(skip)]
    Replay(ReplayArgs),
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct LayoutCheckArgs {
    /// Layout file.
    #[arg(long, value_name = "PATH")]
    pub layout: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct TrainArgs {
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Overrides `train.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the layout section with a layout file.
    #[arg(long, value_name = "PATH")]
    pub layout: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Fully resolved config (filled in before the snapshot is written).
    #[arg(skip)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolved: Option<RunConfig>,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct SampleArgs {
    #[arg(long, value_name = "PATH")]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 16)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct SwapArgs {
    #[arg(long, value_name = "PATH")]
    pub checkpoint: PathBuf,
    /// Seed of the target bundles.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Seed of the reference bundles.
    #[arg(long, default_value_t = 1)]
    pub reference_seed: u64,
    /// Parts taken from the reference, e.g. `2,3`; empty for none.
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    pub parts: Vec<PartId>,
    /// Number of target/reference pairs (rows).
    #[arg(long, default_value_t = 4)]
    pub n: usize,
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct InfluenceArgs {
    /// Take the architecture from a checkpoint.
    #[arg(long, value_name = "PATH")]
    pub checkpoint: Option<PathBuf>,
    /// Take layout and model from a run config.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Layout file or canonical kind (`face_swap`, `facial_parts`).
    #[arg(long, value_name = "PATH")]
    pub layout: Option<String>,
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct EvalRegionsArgs {
    #[arg(long, value_name = "PATH")]
    pub checkpoint: PathBuf,
    /// One part; all parts when omitted.
    #[arg(long)]
    pub part: Option<PartId>,
    #[arg(long, default_value_t = 500)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct FidArgs {
    #[arg(long, value_name = "PATH")]
    pub checkpoint: PathBuf,
    /// Real-image store.
    #[arg(long, value_name = "PATH")]
    pub data: PathBuf,
    #[arg(long, default_value = "pixel_downsample")]
    pub extractor: String,
    /// Precomputed feature rows (`real` then `generated` files) for an
    /// external extractor: whitespace-separated numbers, one image per line.
    #[arg(long, value_name = "PATH", num_args = 2)]
    pub features: Vec<PathBuf>,
    #[arg(long, default_value_t = 500)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 2048)]
    pub n: usize,
    #[arg(long, default_value_t = 32)]
    pub resolution: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct IngestArgs {
    /// Folder of aligned images.
    pub folder: PathBuf,
    #[arg(long, default_value_t = 32)]
    pub resolution: usize,
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct ReplayArgs {
    /// A resolved_config.toml written by an earlier run.
    pub snapshot: PathBuf,
    /// Write to this directory instead of the recorded one.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

/// Parse `args` and run; returns the process exit code.
pub fn run_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
        }
    };
    match run(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}

/// Validation problems exit 1; everything else (I/O, numerics) exits 2.
pub fn exit_code(e: &anyhow::Error) -> i32 {
    if e.downcast_ref::<Invalid>().is_some() {
        return EXIT_VALIDATION;
    }
    match e.downcast_ref::<Error>() {
        Some(
            Error::UnknownLayoutKind(_)
            | Error::PartOutOfRange { .. }
            | Error::CellOutOfRange { .. }
            | Error::Parse { .. }
            | Error::InvalidLayout(_)
            | Error::LayoutMismatch(_)
            | Error::Shape(_)
            | Error::Format(_)
            | Error::Config(_)
            | Error::UnsupportedLayer(_),
        ) => EXIT_VALIDATION,
        _ => EXIT_RUNTIME,
    }
}

/// A user-facing validation failure that is not a library error.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct Invalid(pub String);

const SNAPSHOT: &str = "resolved_config.toml";

fn name_of(cmd: &Command) -> &'static str {
    match cmd {
        Command::LayoutCheck(_) => "layout-check",
        Command::Train(_) => "train",
        Command::Sample(_) => "sample",
        Command::Swap(_) => "swap",
        Command::Influence(_) => "influence",
        Command::EvalRegions(_) => "eval-regions",
        Command::Fid(_) => "fid",
        Command::Synth(_) => "synth",
        Command::Ingest(_) => "ingest",
        Command::Replay(_) => "replay",
    }
}

fn out_field(cmd: &mut Command) -> Option<&mut Option<PathBuf>> {
    match cmd {
        Command::Train(a) => Some(&mut a.out),
        Command::Sample(a) => Some(&mut a.out),
        Command::Swap(a) => Some(&mut a.out),
        Command::Influence(a) => Some(&mut a.out),
        Command::EvalRegions(a) => Some(&mut a.out),
        Command::Fid(a) => Some(&mut a.out),
        Command::Synth(a) => Some(&mut a.out),
        Command::Ingest(a) => Some(&mut a.out),
        Command::LayoutCheck(_) | Command::Replay(_) => None,
    }
}

/// Default output directory: `runs/<command>-<hash of the arguments>`.
fn default_out(cmd: &Command) -> PathBuf {
    let text = toml::to_string(cmd).expect("command serializes");
    let hash = Sha256::digest(text.as_bytes());
    let short: String = hash[..4].iter().map(|b| format!("{b:02x}")).collect();
    PathBuf::from("runs").join(format!("{}-{short}", name_of(cmd)))
}

/// Create the output directory and write the resolved snapshot.
fn prepare_out(cmd: &mut Command) -> anyhow::Result<PathBuf> {
    let default = default_out(cmd);
    let slot = out_field(cmd).expect("command has an output directory");
    let out = slot.get_or_insert(default).clone();
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let snapshot = toml::to_string(cmd)?;
    fs::write(out.join(SNAPSHOT), snapshot)?;
    println!("output: {}", out.display());
    Ok(out)
}

pub fn run(command: Command) -> anyhow::Result<()> {
    let mut cmd = command;
    if let Command::Replay(r) = &cmd {
        let text = fs::read_to_string(&r.snapshot).with_context(|| format!("reading {}", r.snapshot.display()))?;
        let mut replayed: Command = toml::from_str(&text).map_err(|e| Invalid(format!("bad snapshot: {e}")))?;
        if let Some(out) = &r.out {
            if let Some(slot) = out_field(&mut replayed) {
                *slot = Some(out.clone());
            }
        }
        return run(replayed);
    }
    if let Command::Train(a) = &mut cmd {
        a.resolved = Some(resolve_train_config(a)?);
    }
    if let Command::LayoutCheck(a) = &cmd {
        return layout_check(a);
    }
    let out = prepare_out(&mut cmd)?;
    log::info!("deterministic reductions: {}", deterministic_mode());
    match &cmd {
        Command::Train(a) => cmd_train(a, &out),
        Command::Sample(a) => cmd_sample(a, &out),
        Command::Swap(a) => cmd_swap(a, &out),
        Command::Influence(a) => cmd_influence(a, &out),
        Command::EvalRegions(a) => cmd_eval_regions(a, &out),
        Command::Fid(a) => cmd_fid(a, &out),
        Command::Synth(a) => cmd_synth(a, &out),
        Command::Ingest(a) => cmd_ingest(a, &out),
        Command::LayoutCheck(_) | Command::Replay(_) => unreachable!(),
    }
}

fn layout_check(a: &LayoutCheckArgs) -> anyhow::Result<()> {
    let text = fs::read_to_string(&a.layout).with_context(|| format!("reading {}", a.layout.display()))?;
    let layout = PartLayout::from_text(&text)?;
    print!("{}", render_grid(&layout));
    let report = validate_layout(&layout);
    if !report.is_ok() {
        return Err(Invalid(format!("{} is invalid:\n{report}", a.layout.display())).into());
    }
    println!(
        "ok: {} parts, cell counts {:?}",
        layout.num_parts(),
        layout.cell_counts()
    );
    Ok(())
}

/// Grid of part ids (`.` for unassigned cells).
pub fn render_grid(layout: &PartLayout) -> String {
    let owners = layout.owner_grid();
    let mut s = String::new();
    for row in owners.chunks(layout.grid_width()) {
        let cells: Vec<String> = row
            .iter()
            .map(|o| o.map_or_else(|| ".".to_string(), |p| p.to_string()))
            .collect();
        s.push_str(&cells.join(" "));
        s.push('\n');
    }
    s
}

fn resolve_train_config(a: &TrainArgs) -> anyhow::Result<RunConfig> {
    if let Some(r) = &a.resolved {
        return Ok(r.clone());
    }
    let mut cfg = match &a.config {
        Some(p) => RunConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => RunConfig::default(),
    };
    if let Some(seed) = a.seed {
        cfg.train.seed = seed;
    }
    if let Some(layout) = &a.layout {
        cfg.layout.file = Some(layout.clone());
    }
    cfg.resolve()?;
    Ok(cfg)
}

fn cmd_train(a: &TrainArgs, out: &Path) -> anyhow::Result<()> {
    let cfg = a.resolved.clone().expect("resolved before dispatch");
    let (spec, prior) = cfg.resolve()?;
    let data = cfg.data.load(spec.out_resolution)?;
    let ckpt_dir = out.join("checkpoints");
    fs::create_dir_all(&ckpt_dir)?;
    let mut log = TrainLog::new(std::io::BufWriter::new(fs::File::create(out.join("train_log.jsonl"))?));
    let total = cfg.train.total_steps;
    let result = train(&data, spec, prior, cfg.train.clone(), |event| {
        match event {
            TrainEvent::Record(r) => {
                log.append(r)?;
                if r.step % 100 == 0 || r.step == total {
                    println!(
                        "step {:>6}  d_loss {:>10.4}  g_loss {:>10.4}  gap {:>8.4}",
                        r.step, r.d_loss, r.g_loss, r.score_gap
                    );
                }
            }
            TrainEvent::Checkpoint(c) => c.save(&ckpt_dir.join(format!("step_{:07}.ckpt", c.step)))?,
            TrainEvent::Diverged(c) => {
                let p = out.join("diverged.ckpt");
                c.save(&p)?;
                eprintln!("diagnostic checkpoint: {}", p.display());
            }
        }
        Ok(())
    });
    let ckpt = result?;
    ckpt.save(&out.join("final.ckpt"))?;
    let samples = ckpt.generator.generate(&sample_bundles(
        &ckpt.generator.prior,
        &ckpt.generator.spec.layout,
        0,
        16,
    )?)?;
    export::save_image_grid(&samples, 4, &out.join("samples.png"))?;
    println!("final checkpoint: {}", out.join("final.ckpt").display());
    Ok(())
}

fn load_checkpoint(path: &Path) -> anyhow::Result<Checkpoint> {
    Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn write_raw(t: &Tensor, path: &Path) -> anyhow::Result<()> {
    let bytes: Vec<u8> = t.data().iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(path, bytes)?;
    Ok(())
}

fn cmd_sample(a: &SampleArgs, out: &Path) -> anyhow::Result<()> {
    if a.n == 0 {
        return Err(Invalid("--n must be at least 1".into()).into());
    }
    let ck = load_checkpoint(&a.checkpoint)?;
    let g = &ck.generator;
    let bundles = sample_bundles(&g.prior, &g.spec.layout, a.seed, a.n)?;
    let images = g.generate_chunked(&bundles, 32)?;
    let cols = (a.n as f64).sqrt().ceil() as usize;
    export::save_image_grid(&images, cols, &out.join("samples.png"))?;
    write_raw(&images, &out.join("samples.f32"))?;
    println!("{} samples -> {}", a.n, out.join("samples.png").display());
    Ok(())
}

fn cmd_swap(a: &SwapArgs, out: &Path) -> anyhow::Result<()> {
    let ck = load_checkpoint(&a.checkpoint)?;
    let g = &ck.generator;
    let layout = &g.spec.layout;
    let parts: BTreeSet<PartId> = a.parts.iter().copied().collect();
    for &p in &parts {
        layout.check_part(p)?;
    }
    if a.n == 0 {
        return Err(Invalid("--n must be at least 1".into()).into());
    }
    let mut rows = Vec::with_capacity(3 * a.n);
    for j in 0..a.n as u64 {
        let target = sample_bundle(&g.prior, layout, crate::latent::derive_seed(a.seed, j))?;
        let reference = sample_bundle(&g.prior, layout, crate::latent::derive_seed(a.reference_seed, j))?;
        let mixed = mix(&target, &reference, &parts)?;
        rows.extend([target, reference, mixed]);
    }
    let images = g.generate_chunked(&rows, 30)?;
    export::save_image_grid(&images, 3, &out.join("swap.png"))?;
    write_raw(&images, &out.join("swap.f32"))?;
    println!(
        "target | reference | mix{:?} -> {}",
        parts,
        out.join("swap.png").display()
    );
    Ok(())
}

fn influence_source(a: &InfluenceArgs) -> anyhow::Result<ModelSpec> {
    if let Some(p) = &a.checkpoint {
        return Ok(load_checkpoint(p)?.generator.spec);
    }
    let mut cfg = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let layout = match &a.layout {
        Some(l) if Path::new(l).exists() => load_layout_file(Path::new(l))?,
        Some(l) => canonical_layout(l.parse::<LayoutKind>()?),
        None => cfg.layout.load()?,
    };
    cfg.layout.file = None;
    Ok(cfg.model.spec(layout)?)
}

fn write_influence(map: &InfluenceMap, dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir)?;
    let w = map.width();
    let counts: Vec<f64> = map.part_count_image().iter().map(|&c| c as f64).collect();
    export::save_gray(&counts, w, map.num_parts() as f64, &dir.join("part_count.png"))?;
    fs::write(dir.join("influence.txt"), map.to_text())?;
    for part in 1..=map.num_parts() {
        let masks = classify_regions(map, part)?;
        for region in Region::ALL {
            export::save_mask(
                masks.mask(region),
                w,
                &dir.join(format!("part{part}_{}.png", region.name())),
            )?;
        }
    }
    Ok(())
}

fn cmd_influence(a: &InfluenceArgs, out: &Path) -> anyhow::Result<()> {
    let spec = influence_source(a)?;
    let exact = symbolic_influence(&spec, &spec.layout)?;
    write_influence(&exact, &out.join("exact"))?;
    write_influence(&block_influence(&spec)?, &out.join("block"))?;
    let mut hist = vec![0usize; spec.layout.num_parts() + 1];
    for c in exact.part_count_image() {
        hist[c as usize] += 1;
    }
    println!("parts-per-pixel histogram (exact, {0}x{0}):", exact.width());
    for (k, n) in hist.iter().enumerate().filter(|(_, &n)| n > 0) {
        println!("  {k} parts: {n} pixels");
    }
    Ok(())
}

fn cmd_eval_regions(a: &EvalRegionsArgs, out: &Path) -> anyhow::Result<()> {
    let ck = load_checkpoint(&a.checkpoint)?;
    let g = &ck.generator;
    if a.n == 0 {
        return Err(Invalid("--n must be at least 1".into()).into());
    }
    let parts: Vec<PartId> = match a.part {
        Some(p) => {
            g.spec.layout.check_part(p)?;
            vec![p]
        }
        None => (1..=g.num_parts()).collect(),
    };
    let exact = symbolic_influence(&g.spec, &g.spec.layout)?;
    let block = block_influence(&g.spec)?;
    let mut table = fs::File::create(out.join("region_stats.txt"))?;
    for part in parts {
        let s = swap_mse(g, part, a.n, a.seed, false)?;
        let r = s.heatmap.resolution;
        export::save_gray(
            &s.heatmap.values,
            r,
            s.heatmap.max(),
            &out.join(format!("heatmap_part{part}.png")),
        )?;
        fs::write(out.join(format!("heatmap_part{part}.txt")), s.heatmap.to_text())?;
        for (name, map) in [("exact", &exact), ("block", &block)] {
            let stats = region_stats(&s.per_image, &classify_regions(map, part)?)?;
            let text = format!(
                "## regions={name} ordering(inside>interlocking>outside)={}\n{stats}",
                if stats.median_ordering_holds() {
                    "holds"
                } else {
                    "violated"
                }
            );
            print!("{text}");
            table.write_all(text.as_bytes())?;
        }
    }
    Ok(())
}

fn read_feature_rows(path: &Path) -> anyhow::Result<(Vec<f64>, usize)> {
    let text = fs::read_to_string(path)?;
    let mut rows = Vec::new();
    let mut dim = None;
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let row: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map_err(|e| Invalid(format!("{}:{}: {e}", path.display(), i + 1)))?;
        if *dim.get_or_insert(row.len()) != row.len() {
            return Err(Invalid(format!("{}:{}: ragged feature row", path.display(), i + 1)).into());
        }
        rows.extend(row);
    }
    Ok((rows, dim.unwrap_or(0)))
}

fn cmd_fid(a: &FidArgs, out: &Path) -> anyhow::Result<()> {
    let extractor: Extractor = a.extractor.parse()?;
    let (real, fake) = if let Extractor::External(_) = &extractor {
        if a.features.len() != 2 {
            return Err(Invalid("external extractor needs --features REAL GENERATED".into()).into());
        }
        let (r, dr) = read_feature_rows(&a.features[0])?;
        let (f, df) = read_feature_rows(&a.features[1])?;
        (
            FeatureSummary::from_rows(extractor.id(), &r, dr)?,
            FeatureSummary::from_rows(extractor.id(), &f, df)?,
        )
    } else {
        let ck = load_checkpoint(&a.checkpoint)?;
        let store = ImageStore::load(&a.data).with_context(|| format!("loading {}", a.data.display()))?;
        let n_real = a.n.min(store.len());
        let idx: Vec<usize> = (0..n_real).collect();
        let real_imgs = store.batch(&idx);
        let g = &ck.generator;
        let fake_imgs = g.generate_chunked(&sample_bundles(&g.prior, &g.spec.layout, a.seed, a.n)?, 32)?;
        let d = Some(&ck.discriminator);
        (
            extract_features(&real_imgs, &extractor, d)?,
            extract_features(&fake_imgs, &extractor, d)?,
        )
    };
    let fid = frechet_distance(&real, &fake)?;
    let record = serde_json::json!({
        "extractor": extractor.id(),
        "dim": real.dim,
        "real_count": real.count,
        "generated_count": fake.count,
        "frechet_distance": fid,
    });
    fs::write(out.join("fid.json"), serde_json::to_string_pretty(&record)?)?;
    fs::write(out.join("features_real.json"), real.to_json())?;
    fs::write(out.join("features_generated.json"), fake.to_json())?;
    println!(
        "{fid:.6}  (extractor {}, real {}, generated {})",
        extractor.id(),
        real.count,
        fake.count
    );
    Ok(())
}

fn cmd_synth(a: &SynthArgs, out: &Path) -> anyhow::Result<()> {
    dataio::write_synthetic_faces(out, a.n, a.resolution, a.seed)?;
    println!("{} synthetic faces -> {}", a.n, out.display());
    Ok(())
}

fn cmd_ingest(a: &IngestArgs, out: &Path) -> anyhow::Result<()> {
    let (manifest, store) = dataio::ingest(&a.folder, a.resolution)?;
    store.save(&out.join("store.bin"))?;
    fs::write(out.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    println!(
        "{} images at {}px ({} skipped) -> {}",
        manifest.image_count,
        manifest.resolution,
        manifest.skipped.len(),
        out.join("store.bin").display()
    );
    Ok(())
}
