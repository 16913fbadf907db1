use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use occlusynth::boundary::{boundaries_from_geojson, boundaries_to_geojson, build_boundary_map, extract_curbs};
use occlusynth::dataset::{build_samples, read_raw_scenes, split_geographic, write_dataset, SplitSpec};
use occlusynth::digest::sha256_file;
use occlusynth::geom::Point2;
use occlusynth::kernels::{grad_check, GradKernel, KernelReport, SgcArch};
use occlusynth::metrics::evaluate;
use occlusynth::pipeline::{run_demo, scene_id, synthesize_one, write_json, PipelineConfig, PlacementSet, VehicleLibrary};
use occlusynth::ply::{read_ply, write_ply, WriteOptions};
use occlusynth::postprocess::merge_completion;
use occlusynth::scanstrip::{estimate_normals, filter_strip, load_strip, strip_to_oriented_cloud};
use occlusynth::{Error, SeededRng};

const GRAD_TOLERANCE: f64 = 1e-4;

#[derive(Parser, Debug)]
#[command(name = "occlusynth", version, about = "Synthetic occlusion pairs and completion tooling for urban LiDAR scenes")]
struct Cli {
    /// JSON pipeline configuration; missing keys take defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "OCCLUSYNTH_THREADS")]
    threads: Option<usize>,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Range and height filtering of a scan strip, written as an oriented cloud.
    Filter(FilterArgs),
    /// Curb extraction into a boundary map.
    Boundaries(BoundariesArgs),
    /// Vehicle placement along the boundaries.
    Place(PlaceArgs),
    /// Occlusion synthesis for every placed vehicle.
    Synthesize(SynthesizeArgs),
    /// Normalized, split dataset from synthesized scenes.
    Dataset(DatasetArgs),
    /// Finite-difference checks of the kernel gradients.
    KernelCheck(KernelCheckArgs),
    /// Completion metrics of a prediction against ground truth.
    Eval(EvalArgs),
    /// Merge generated points into a measured cloud.
    Merge(MergeArgs),
    /// End-to-end run on a synthetic street.
    Demo(DemoArgs),
}

#[derive(Args, Debug)]
struct FilterArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    max_range: Option<f64>,
    #[arg(long)]
    sensor_height: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    h_min: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    h_max: Option<f64>,
}

#[derive(Args, Debug)]
struct BoundariesArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct PlaceArgs {
    #[arg(long)]
    boundaries: PathBuf,
    #[arg(long)]
    cloud: PathBuf,
    /// Directory of OBJ vehicle models; a procedural car is used without it.
    #[arg(long)]
    models: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SynthesizeArgs {
    #[arg(long)]
    cloud: PathBuf,
    #[arg(long)]
    poses: PathBuf,
    #[arg(long)]
    models: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct DatasetArgs {
    #[arg(long)]
    scenes: PathBuf,
    /// Split regions; falls back to the `split` entry of the config.
    #[arg(long)]
    split: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    augment: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct KernelCheckArgs {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 50)]
    trials: usize,
    #[arg(long, default_value_t = 1e-6)]
    eps: f64,
    /// Restrict to these kernels (default: all).
    #[arg(long = "kernel", value_enum)]
    kernels: Vec<KernelName>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum KernelName {
    Gridding,
    GriddingReverse,
    CubicFeatureSampling,
    Folding,
}

impl From<KernelName> for GradKernel {
    fn from(k: KernelName) -> Self {
        match k {
            KernelName::Gridding => GradKernel::Gridding,
            KernelName::GriddingReverse => GradKernel::GriddingReverse,
            KernelName::CubicFeatureSampling => GradKernel::CubicFeatureSampling,
            KernelName::Folding => GradKernel::Folding,
        }
    }
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    d: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct MergeArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    generated: PathBuf,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Arch {
    Full,
    Tiny,
}

#[derive(Args, Debug)]
struct DemoArgs {
    #[arg(long)]
    seed: Option<u64>,
    /// Network size; overrides the config's model.
    #[arg(long, value_enum)]
    arch: Option<Arch>,
    #[arg(long, default_value = "demo_out")]
    out: PathBuf,
}

enum Failure {
    Usage(String),
    Domain(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Domain(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Domain(e.into())
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

#[derive(Serialize)]
struct FileDigest {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct RunManifest {
    tool: &'static str,
    version: &'static str,
    subcommand: &'static str,
    argv: Vec<String>,
    config_sha256: String,
    config: PipelineConfig,
    seed: u64,
    threads: usize,
    inputs: Vec<FileDigest>,
    outputs: Vec<FileDigest>,
}

struct Run {
    subcommand: &'static str,
    config: PipelineConfig,
    threads: usize,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

fn is_manifest(p: &Path) -> bool {
    p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n == "run_manifest.json" || n.ends_with(".manifest.json"))
}

fn digests(paths: &[PathBuf]) -> CliResult<Vec<FileDigest>> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut files: Vec<PathBuf> = std::fs::read_dir(p)?.filter_map(|e| e.ok().map(|e| e.path())).filter(|f| f.is_file() && !is_manifest(f)).collect();
            files.sort();
            for f in files {
                out.push(FileDigest { path: f.display().to_string(), sha256: sha256_file(&f)? });
            }
        } else {
            out.push(FileDigest { path: p.display().to_string(), sha256: sha256_file(p)? });
        }
    }
    Ok(out)
}

impl Run {
    /// Writes the manifest next to a file output or inside a directory
    /// output.
    fn finish(self, anchor: &Path) -> CliResult<()> {
        let manifest = RunManifest {
            tool: "occlusynth",
            version: env!("CARGO_PKG_VERSION"),
            subcommand: self.subcommand,
            argv: std::env::args().collect(),
            config_sha256: self.config.hash(),
            seed: self.config.seed,
            threads: self.threads,
            inputs: digests(&self.inputs)?,
            outputs: digests(&self.outputs)?,
            config: self.config,
        };
        let path = if anchor.is_dir() {
            anchor.join("run_manifest.json")
        } else {
            let mut name = anchor.file_name().unwrap_or_default().to_os_string();
            name.push(".manifest.json");
            anchor.with_file_name(name)
        };
        write_json(path, &manifest)?;
        Ok(())
    }
}

fn load_config(path: Option<&Path>) -> CliResult<PipelineConfig> {
    match path {
        None => Ok(PipelineConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", p.display())))?;
            PipelineConfig::from_json(&text).map_err(|e| Failure::Usage(e.to_string()))
        }
    }
}

fn revalidate(cfg: &PipelineConfig) -> CliResult<()> {
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Failure::Domain(Error::Format(format!("{}: {e}", path.display()))))
}

fn library(models: Option<&Path>, cfg: &PipelineConfig, seed: u64) -> CliResult<VehicleLibrary> {
    Ok(match models {
        Some(dir) => VehicleLibrary::load(dir, &cfg.vehicle)?,
        None => VehicleLibrary::procedural(&cfg.vehicle, &SeededRng::new(seed).derive("library"))?,
    })
}

fn execute(cli: Cli, threads: usize) -> CliResult<()> {
    let mut cfg = load_config(cli.config.as_deref())?;
    let mut inputs: Vec<PathBuf> = cli.config.iter().cloned().collect();
    let (name, anchor, outputs): (&'static str, PathBuf, Vec<PathBuf>) = match cli.command {
        Command::Filter(a) => {
            let f = &mut cfg.filter;
            f.max_range = a.max_range.unwrap_or(f.max_range);
            f.sensor_height = a.sensor_height.unwrap_or(f.sensor_height);
            f.h_min = a.h_min.unwrap_or(f.h_min);
            f.h_max = a.h_max.unwrap_or(f.h_max);
            revalidate(&cfg)?;
            let strip = load_strip(&a.input)?;
            let cloud = strip_to_oriented_cloud(&filter_strip(&estimate_normals(&strip), &cfg.filter));
            log::info!("{} of {} returns kept", cloud.len(), strip.valid_count());
            write_ply(&a.out, &cloud, WriteOptions::default())?;
            inputs.push(a.input);
            ("filter", a.out.clone(), vec![a.out])
        }
        Command::Boundaries(a) => {
            let cloud = read_ply(&a.input)?;
            let curbs = extract_curbs(&cloud, &cfg.grow, &cfg.curb)?;
            let lines = build_boundary_map(&curbs, &cloud.points);
            log::info!("{} curb segments, {} polylines", curbs.len(), lines.len());
            write_json(&a.out, &boundaries_to_geojson(&lines))?;
            inputs.push(a.input);
            ("boundaries", a.out.clone(), vec![a.out])
        }
        Command::Place(a) => {
            cfg.seed = a.seed.unwrap_or(cfg.seed);
            let cloud = read_ply(&a.cloud)?;
            let lines = boundaries_from_geojson(&read_json(&a.boundaries)?)?;
            let lib = library(a.models.as_deref(), &cfg, cfg.seed)?;
            let set = occlusynth::pipeline::place_all(&cloud, &lines, &lib, &cfg, cfg.seed)?;
            log::info!("{} vehicles placed, {} candidates skipped", set.placements.len(), set.skipped);
            write_json(&a.out, &set)?;
            inputs.extend([a.boundaries, a.cloud]);
            inputs.extend(a.models);
            ("place", a.out.clone(), vec![a.out])
        }
        Command::Synthesize(a) => {
            cfg.seed = a.seed.unwrap_or(cfg.seed);
            let cloud = read_ply(&a.cloud)?;
            let set: PlacementSet = read_json(&a.poses)?;
            let lib = library(a.models.as_deref(), &cfg, set.seed)?;
            let root = SeededRng::new(cfg.seed).derive("synthesize");
            let mut written = 0;
            for (i, p) in set.placements.iter().enumerate() {
                let id = scene_id(i);
                let rng = root.derive(&id);
                match synthesize_one(&cloud, p, &lib, &cfg.crop, &rng) {
                    Ok(raw) => {
                        occlusynth::dataset::write_raw_scene(&a.out, &id, &raw, &rng.path_string())?;
                        written += 1;
                    }
                    Err(Error::InsufficientPoints { have, need }) => {
                        log::warn!("{id} skipped: crop has {have} points, {need} needed");
                    }
                    Err(e) => return Err(e.into()),
                }
            }
            std::fs::create_dir_all(&a.out)?;
            log::info!("{written} scenes written");
            inputs.extend([a.cloud, a.poses]);
            inputs.extend(a.models);
            ("synthesize", a.out.clone(), vec![a.out])
        }
        Command::Dataset(a) => {
            cfg.seed = a.seed.unwrap_or(cfg.seed);
            cfg.augment |= a.augment;
            let spec: SplitSpec = match (&a.split, &cfg.split) {
                (Some(p), _) => read_json(p)?,
                (None, Some(s)) => s.clone(),
                (None, None) => return Err(Failure::Usage("a split is required: pass --split or set `split` in the config".into())),
            };
            let raws: Vec<(String, _)> = read_raw_scenes(&a.scenes)?.into_iter().map(|r| (r.meta.scene_id, r.pair)).collect();
            let root = SeededRng::new(cfg.seed).derive("dataset");
            let mut pairs = Vec::new();
            for (res, (id, _)) in build_samples(&raws, &cfg.norm, cfg.augment, &root).into_iter().zip(&raws) {
                match res {
                    Ok(p) => pairs.push(p),
                    Err(e @ (Error::InsufficientPoints { .. } | Error::OutsideCube { .. })) => log::warn!("{id} rejected: {e}"),
                    Err(e) => return Err(e.into()),
                }
            }
            let located: Vec<(String, Point2)> = pairs
                .iter()
                .map(|p| (p.scene_id.clone(), Point2::new(p.world_center.x, p.world_center.y)))
                .collect();
            let manifest = split_geographic(&located, &spec, cfg.seed)?;
            write_dataset(&pairs, &manifest, &a.out)?;
            inputs.push(a.scenes);
            inputs.extend(a.split);
            ("dataset", a.out.clone(), vec![a.out])
        }
        Command::KernelCheck(a) => {
            cfg.seed = a.seed.unwrap_or(cfg.seed);
            let kernels: Vec<GradKernel> = if a.kernels.is_empty() {
                GradKernel::ALL.to_vec()
            } else {
                a.kernels.iter().map(|&k| k.into()).collect()
            };
            let reports: Vec<KernelReport> = kernels
                .iter()
                .map(|&k| grad_check(k, a.trials, a.eps, cfg.seed))
                .collect::<occlusynth::Result<_>>()?;
            let pass = reports.iter().all(|r| r.max_rel_error < GRAD_TOLERANCE);
            for r in &reports {
                println!("{:<24} max rel error {:.3e} over {} trials", r.kernel.name(), r.max_rel_error, r.trials);
            }
            #[derive(Serialize)]
            struct Report<'a> {
                seed: u64,
                tolerance: f64,
                pass: bool,
                kernels: &'a [KernelReport],
            }
            write_json(&a.out, &Report { seed: cfg.seed, tolerance: GRAD_TOLERANCE, pass, kernels: &reports })?;
            Run { subcommand: "kernel-check", config: cfg, threads, inputs, outputs: vec![a.out.clone()] }.finish(&a.out)?;
            if !pass {
                return Err(Failure::Domain(Error::InvalidArgument("gradient check exceeded tolerance".into())));
            }
            return Ok(());
        }
        Command::Eval(a) => {
            cfg.fscore_threshold = a.d.unwrap_or(cfg.fscore_threshold);
            revalidate(&cfg)?;
            let report = evaluate(&read_ply(&a.pred)?, &read_ply(&a.gt)?, cfg.fscore_threshold)?;
            println!(
                "CD {:.4} (x1e-4)  P {:.4}  R {:.4}  F {:.4}",
                report.cd_display(),
                report.precision,
                report.recall,
                report.fscore
            );
            write_json(&a.out, &report)?;
            inputs.extend([a.pred, a.gt]);
            ("eval", a.out.clone(), vec![a.out])
        }
        Command::Merge(a) => {
            cfg.merge.threshold = a.threshold.unwrap_or(cfg.merge.threshold);
            revalidate(&cfg)?;
            let merged = merge_completion(&read_ply(&a.input)?, &read_ply(&a.generated)?, &cfg.merge)?;
            write_ply(&a.out, &merged, WriteOptions::default())?;
            inputs.extend([a.input, a.generated]);
            ("merge", a.out.clone(), vec![a.out])
        }
        Command::Demo(a) => {
            cfg.seed = a.seed.unwrap_or(cfg.seed);
            match a.arch {
                Some(Arch::Full) => cfg.model = SgcArch::full(),
                Some(Arch::Tiny) => cfg.model = SgcArch::tiny(),
                None => {}
            }
            let outcome = run_demo(&cfg, &a.out)?;
            for (file, sum) in &outcome.checksums {
                println!("{sum}  {file}");
            }
            ("demo", a.out.clone(), vec![a.out])
        }
    };
    Run { subcommand: name, config: cfg, threads, inputs, outputs }.finish(&anchor)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        // help and version exit 0, usage errors 2
        Err(e) => e.exit(),
    };
    env_logger::Builder::new()
        .filter_level(match cli.verbose {
            0 => log::LevelFilter::Warn,
            1 => log::LevelFilter::Info,
            _ => log::LevelFilter::Debug,
        })
        .parse_env("OCCLUSYNTH_LOG")
        .init();
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        pool = pool.num_threads(n);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start thread pool: {e}");
            return ExitCode::from(1);
        }
    };
    let threads = pool.current_num_threads();
    match pool.install(|| execute(cli, threads)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Domain(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
