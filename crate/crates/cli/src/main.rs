//! `ovcd`: detect, evaluate, synth and bench over manifest-described pairs.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 internal failure.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use ovcd::eval::{aggregate, confusion, Aggregation, EvalReport, TimingStats};
use ovcd::pipeline::{class_ground_truth, run_detect, Ablation, PipelineConfig};
use ovcd::synth::{gen_scene, Rect, SceneSpec};
use ovcd::tensorio::{load_pair_bundle, write_dense_array, PairBundle};

#[derive(Parser)]
#[command(name = "ovcd", version, about = "Training-free open-vocabulary change detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Predict a change mask per pair.
    Detect(DetectArgs),
    /// Score predictions against ground truth and write JSON/CSV reports.
    Evaluate(EvaluateArgs),
    /// Generate synthetic pairs with a planted change.
    Synth(SynthArgs),
    /// Time the pipeline per pair after a warm-up pass.
    Bench(BenchArgs),
}

#[derive(Args, Clone)]
struct PipelineArgs {
    /// Pipeline configuration (JSON); missing fields take defaults.
    #[arg(long, env = "OVCD_CONFIG")]
    config: Option<PathBuf>,
    /// Stages to remove, comma separated or repeated.
    #[arg(long, value_delimiter = ',')]
    ablate: Vec<String>,
    /// Override the 8-bit decision threshold.
    #[arg(long)]
    tau_u8: Option<u8>,
    /// Override the superpixel count.
    #[arg(long)]
    segments: Option<usize>,
}

impl PipelineArgs {
    fn resolve(&self) -> anyhow::Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::from_path(p)?,
            None => PipelineConfig::default(),
        };
        for name in &self.ablate {
            let a: Ablation = name.parse().map_err(|e| Usage(format!("{e}")))?;
            cfg.ablations.enable(a);
        }
        if let Some(t) = self.tau_u8 {
            cfg.decode.tau_u8 = t;
        }
        if let Some(n) = self.segments {
            cfg.slic.n_segments = Some(n);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct DetectArgs {
    /// Pair manifests; a `.txt` argument is read as a list of manifest paths.
    #[arg(required = true)]
    manifests: Vec<PathBuf>,
    /// Queried class (a key of the manifest's classes or a configured prompt bank).
    #[arg(long)]
    class: String,
    #[command(flatten)]
    pipeline: PipelineArgs,
    /// Also write {pair_id}.{delta,gate,fused,pooled,y0}.npy.
    #[arg(long)]
    dump_intermediates: bool,
    #[arg(long, default_value = "ovcd-out")]
    out_dir: PathBuf,
    /// Worker threads (default: logical cores).
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum AggregationArg {
    Micro,
    Macro,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(required = true)]
    manifests: Vec<PathBuf>,
    /// Classes to score; defaults to every class the pairs define.
    #[arg(long)]
    class: Vec<String>,
    #[command(flatten)]
    pipeline: PipelineArgs,
    #[arg(long, value_enum, default_value = "micro")]
    aggregation: AggregationArg,
    #[arg(long, default_value = "ovcd-out")]
    out_dir: PathBuf,
    #[arg(long)]
    workers: Option<usize>,
    /// Also write predicted masks.
    #[arg(long)]
    save_masks: bool,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value = "ovcd-synth")]
    out_dir: PathBuf,
    /// Scene spec (JSON); flags below override its fields.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Number of pairs; pair i uses seed + i.
    #[arg(long, default_value_t = 1)]
    count: u64,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    vocab_size: Option<usize>,
    #[arg(long)]
    token_depth: Option<usize>,
    /// Token grid side (h = w).
    #[arg(long)]
    token_grid: Option<usize>,
    /// Planted rectangle as y,x,height,width.
    #[arg(long, value_delimiter = ',', num_args = 4)]
    region: Option<Vec<usize>>,
    #[arg(long)]
    competitor_strength: Option<f64>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    token_noise: Option<f64>,
    /// Rotation of region tokens, radians.
    #[arg(long)]
    token_change: Option<f64>,
    #[arg(long)]
    mask_downsample: Option<usize>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(required = true)]
    manifests: Vec<PathBuf>,
    #[arg(long)]
    class: String,
    #[command(flatten)]
    pipeline: PipelineArgs,
    /// Passes over the pair list; the first is a warm-up.
    #[arg(long, default_value_t = 3)]
    repetitions: usize,
    /// Write the report here as well as to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug)]
struct Usage(String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<Usage>().is_some() {
        return 1;
    }
    match err.downcast_ref::<ovcd::Error>() {
        Some(e) if e.is_data_error() => 2,
        Some(_) => 1,
        None if err.downcast_ref::<std::io::Error>().is_some() => 2,
        None => 3,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match std::panic::catch_unwind(|| run(cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
        Err(_) => ExitCode::from(3),
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Detect(a) => detect(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Synth(a) => synth(a),
        Command::Bench(a) => bench(a),
    }
}

/// Print a line, ignoring a closed stdout.
fn emit(text: &str) {
    use std::io::Write;
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

/// Expand `.txt` list files; list entries resolve against the list's directory.
fn expand_manifests(args: &[PathBuf]) -> anyhow::Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in args {
        if p.extension().is_some_and(|e| e == "txt") {
            let text = fs::read_to_string(p)
                .map_err(|_| ovcd::Error::MissingFile(p.clone()))?;
            let base = p.parent().unwrap_or(Path::new("."));
            out.extend(
                text.lines()
                    .map(str::trim)
                    .filter(|l| !l.is_empty() && !l.starts_with('#'))
                    .map(|l| base.join(l)),
            );
        } else {
            out.push(p.clone());
        }
    }
    if out.is_empty() {
        return Err(ovcd::Error::EmptyDataset.into());
    }
    Ok(out)
}

fn thread_pool(workers: Option<usize>) -> anyhow::Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers {
        if n == 0 {
            bail!(Usage("--workers must be at least 1".into()));
        }
        b = b.num_threads(n);
    }
    Ok(b.build()?)
}

fn load(path: &Path) -> anyhow::Result<PairBundle> {
    load_pair_bundle(path).with_context(|| format!("loading {}", path.display()))
}

fn write_mask(dir: &Path, name: &str, mask: &ovcd::decode::ChangeMask) -> anyhow::Result<PathBuf> {
    let png = dir.join(format!("{name}.mask.png"));
    mask.write_png(&png)?;
    write_dense_array(dir.join(format!("{name}.mask.npy")), &mask.to_array())?;
    Ok(png)
}

#[derive(Serialize)]
struct DetectRecord {
    pair_id: String,
    class: String,
    changed_pixels: usize,
    mask: PathBuf,
    digest: String,
}

fn detect(a: DetectArgs) -> anyhow::Result<()> {
    let cfg = a.pipeline.resolve()?;
    let manifests = expand_manifests(&a.manifests)?;
    fs::create_dir_all(&a.out_dir)?;
    let pool = thread_pool(a.workers)?;
    let records: Vec<DetectRecord> = pool.install(|| {
        manifests
            .par_iter()
            .map(|m| -> anyhow::Result<DetectRecord> {
                let bundle = load(m)?;
                let det = run_detect(&bundle, &a.class, &cfg)
                    .with_context(|| format!("pair {}", bundle.pair_id))?;
                let name = format!("{}.{}", bundle.pair_id, a.class);
                let png = write_mask(&a.out_dir, &name, &det.mask)?;
                if a.dump_intermediates {
                    det.write_intermediates(&a.out_dir, &bundle.pair_id)?;
                }
                Ok(DetectRecord {
                    pair_id: bundle.pair_id,
                    class: a.class.clone(),
                    changed_pixels: det.mask.count_ones(),
                    mask: png,
                    digest: det.mask.digest(),
                })
            })
            .collect::<anyhow::Result<_>>()
    })?;
    let summary = serde_json::json!({
        "config_hash": cfg.config_hash(),
        "ablations": cfg.ablations.active().iter().map(|a| a.name()).collect::<Vec<_>>(),
        "pairs": records,
    });
    let text = serde_json::to_string_pretty(&summary)?;
    fs::write(a.out_dir.join("detect.json"), &text)?;
    emit(&text);
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> anyhow::Result<()> {
    let cfg = a.pipeline.resolve()?;
    let manifests = expand_manifests(&a.manifests)?;
    fs::create_dir_all(&a.out_dir)?;
    let pool = thread_pool(a.workers)?;
    let per_pair: Vec<Vec<(String, String, ovcd::eval::ConfusionCounts)>> = pool.install(|| {
        manifests
            .par_iter()
            .map(|m| -> anyhow::Result<_> {
                let bundle = load(m)?;
                let classes: Vec<String> = if a.class.is_empty() {
                    bundle
                        .classes
                        .keys()
                        .chain(cfg.prompt_banks.keys())
                        .cloned()
                        .collect::<std::collections::BTreeSet<_>>()
                        .into_iter()
                        .collect()
                } else {
                    a.class.clone()
                };
                let mut out = Vec::with_capacity(classes.len());
                for class in classes {
                    let gt = class_ground_truth(&bundle, &class)?;
                    let det = run_detect(&bundle, &class, &cfg)
                        .with_context(|| format!("pair {} class {class}", bundle.pair_id))?;
                    if a.save_masks {
                        write_mask(&a.out_dir, &format!("{}.{class}", bundle.pair_id), &det.mask)?;
                    }
                    out.push((bundle.pair_id.clone(), class, confusion(&det.mask, &gt)?));
                }
                Ok(out)
            })
            .collect::<anyhow::Result<_>>()
    })?;
    let mode = match a.aggregation {
        AggregationArg::Micro => Aggregation::Micro,
        AggregationArg::Macro => Aggregation::Macro,
    };
    let mut report: EvalReport = aggregate(
        per_pair
            .iter()
            .flatten()
            .map(|(p, c, k)| (p.as_str(), c.as_str(), *k)),
        mode,
    )?;
    report.meta.insert("config_hash".into(), cfg.config_hash());
    let active: Vec<&str> = cfg.ablations.active().iter().map(|a| a.name()).collect();
    report.meta.insert(
        "ablations".into(),
        if active.is_empty() { "none".into() } else { active.join(",") },
    );
    fs::write(a.out_dir.join("report.json"), report.to_json())?;
    fs::write(a.out_dir.join("report.csv"), report.to_csv())?;
    emit(report.to_table().trim_end());
    Ok(())
}

fn synth(a: SynthArgs) -> anyhow::Result<()> {
    let mut spec = match &a.spec {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|_| ovcd::Error::MissingFile(p.clone()))?;
            serde_json::from_str::<SceneSpec>(&text)
                .map_err(|e| ovcd::Error::SpecInvalid(e.to_string()))?
        }
        None => SceneSpec::default(),
    };
    macro_rules! set {
        ($($flag:ident => $field:ident),*) => {
            $(if let Some(v) = a.$flag { spec.$field = v; })*
        };
    }
    set!(seed => seed, height => height, width => width, vocab_size => vocab_size,
        token_depth => token_depth, competitor_strength => competitor_strength,
        noise => pseudo_change_noise, token_noise => token_noise,
        token_change => token_change_magnitude, mask_downsample => mask_downsample);
    if let Some(n) = a.token_grid {
        spec.token_height = n;
        spec.token_width = n;
    }
    if let Some(r) = &a.region {
        spec.planted_region = Rect {
            y: r[0],
            x: r[1],
            height: r[2],
            width: r[3],
        };
    }
    spec.validate()?;
    fs::create_dir_all(&a.out_dir)?;
    let mut list = String::new();
    for i in 0..a.count {
        let scene_spec = SceneSpec {
            seed: spec.seed.wrapping_add(i),
            ..spec.clone()
        };
        let rel = format!("pair_{i:03}");
        gen_scene(&scene_spec, a.out_dir.join(&rel))?;
        list.push_str(&format!("{rel}/manifest.json\n"));
        emit(&a.out_dir.join(&rel).join("manifest.json").display().to_string());
    }
    fs::write(a.out_dir.join("pairs.txt"), list)?;
    Ok(())
}

#[derive(Serialize)]
struct BenchReport {
    config_hash: String,
    class: String,
    pairs: usize,
    repetitions: usize,
    threads: usize,
    timing: TimingStats,
    /// True when every repetition produced the same mask for every pair.
    deterministic: bool,
    mask_digests: Vec<String>,
}

fn bench(a: BenchArgs) -> anyhow::Result<()> {
    if a.repetitions < 2 {
        bail!(Usage("--repetitions must be at least 2 (one warm-up, one measured)".into()));
    }
    let cfg = a.pipeline.resolve()?;
    let manifests = expand_manifests(&a.manifests)?;
    let mut latencies = Vec::new();
    let mut digests: Vec<Option<String>> = vec![None; manifests.len()];
    let mut deterministic = true;
    for rep in 0..a.repetitions {
        for (i, m) in manifests.iter().enumerate() {
            let (res, secs) = ovcd::eval::time_pair(|| -> anyhow::Result<_> {
                let bundle = load(m)?;
                Ok(run_detect(&bundle, &a.class, &cfg)?)
            });
            let det = res?;
            let d = det.mask.digest();
            match &digests[i] {
                Some(prev) => deterministic &= *prev == d,
                None => digests[i] = Some(d),
            }
            if rep > 0 {
                latencies.push(secs);
            }
        }
    }
    let timing = TimingStats::from_latencies(&latencies, manifests.len())
        .context("no measured runs")?;
    let report = BenchReport {
        config_hash: cfg.config_hash(),
        class: a.class,
        pairs: manifests.len(),
        repetitions: a.repetitions,
        threads: 1,
        timing,
        deterministic,
        mask_digests: digests.into_iter().flatten().collect(),
    };
    let text = serde_json::to_string_pretty(&report)?;
    if let Some(p) = &a.out {
        if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        fs::write(p, &text)?;
    }
    emit(&text);
    Ok(())
}
