//! Command-line pipeline driver: synth, extract, build, export, eval, run.
//!
//! Exit codes: 0 ok, 2 config error, 3 data error, 4 topology error,
//! 5 export/validation error.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use lanemap_core::cloud::Frame;
use lanemap_core::config::PipelineConfig;
use lanemap_core::error::{Error, Result};
use lanemap_core::evaluation::{continuity_report, lane_width_stats, map_distance};
use lanemap_core::odr::{read_opendrive, write_opendrive};
use lanemap_core::pipeline;
use lanemap_core::synth::{self, SceneSpec};

#[derive(Parser)]
#[command(
    name = "lanemap",
    about = "Reconstruct OpenDRIVE road descriptions from sparse lane-marking point clouds",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Pipeline configuration file (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Global RNG seed; overrides the seeds in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker thread cap (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic recording plus its ground-truth OpenDRIVE map.
    Synth {
        /// Scene description (TOML). Defaults to a 600 m 3-lane straight.
        #[arg(long)]
        scene: Option<PathBuf>,
        /// Write packed binary frames instead of CSV.
        #[arg(long)]
        binary: bool,
        /// Also write perturbed recording variants with these seeds.
        #[arg(long = "perturb-seed")]
        perturb_seeds: Vec<u64>,
        /// Point noise applied to each perturbed variant.
        #[arg(long, default_value_t = 0.03)]
        perturb_sigma: f64,
    },
    /// Read a recording and extract the world-frame marking cloud.
    Extract {
        /// Recording directory (frame files + poses.csv).
        #[arg(long)]
        recording: PathBuf,
    },
    /// Build the road model from an extracted marking cloud.
    Build {
        /// Marking cloud artifact written by `extract`.
        #[arg(long)]
        cloud: PathBuf,
        /// Also dump clusters and candidate lines as CSV for inspection.
        #[arg(long)]
        debug_dump: bool,
    },
    /// Export a road model to OpenDRIVE and self-validate continuity.
    Export {
        /// Road model artifact written by `build`.
        #[arg(long)]
        model: PathBuf,
        /// Ground-plane samples for the superelevation profile.
        #[arg(long)]
        planes: Option<PathBuf>,
    },
    /// Compare two OpenDRIVE maps by reference-line distance.
    Eval {
        map_a: PathBuf,
        map_b: PathBuf,
        /// Sampling step in meters (default: configuration eval_step).
        #[arg(long)]
        step: Option<f64>,
    },
    /// Full pipeline: extract, build, export, self-validate.
    Run {
        /// Recording directory (frame files + poses.csv).
        #[arg(long)]
        recording: PathBuf,
        /// Also dump clusters and candidate lines as CSV for inspection.
        #[arg(long)]
        debug_dump: bool,
    },
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.set_global_seed(seed);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn ensure_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn load_frames(recording: &Path) -> Result<(Vec<Frame>, nalgebra::Vector3<f64>)> {
    let (frames, origin) = lanemap_core::ingest::read_recording_with_origin(recording)?;
    log::info!("read {} frames from {}", frames.len(), recording.display());
    Ok((frames, origin))
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Structural(format!("serialize report: {e}")))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn cmd_synth(
    cli: &Cli,
    scene: Option<&Path>,
    binary: bool,
    perturb_seeds: &[u64],
    perturb_sigma: f64,
) -> Result<()> {
    let mut spec = match scene {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            toml::from_str::<SceneSpec>(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        }
        None => SceneSpec::default(),
    };
    if let Some(seed) = cli.seed {
        spec.seed = seed;
    }
    ensure_out(&cli.out)?;
    let (recording, truth) = synth::generate_scene(&spec)?;
    let rec_dir = cli.out.join("recording");
    synth::write_recording(&recording, &rec_dir, binary)?;
    write_opendrive(&truth.document, &cli.out.join("ground_truth.xodr"))?;
    let spec_echo = toml::to_string_pretty(&spec)
        .map_err(|e| Error::Config(format!("echo scene spec: {e}")))?;
    fs::write(cli.out.join("scene.toml"), spec_echo)
        .map_err(|e| Error::io(cli.out.join("scene.toml"), e))?;
    log::info!(
        "synth: {} frames, {} m road -> {}",
        recording.frames.len(),
        spec.total_length(),
        rec_dir.display()
    );
    for &seed in perturb_seeds {
        let dir = cli.out.join(format!("recording_p{seed}"));
        synth::perturb_recording(&rec_dir, &dir, perturb_sigma, seed)?;
        log::info!("synth: perturbed variant (seed {seed}) -> {}", dir.display());
    }
    Ok(())
}

fn cmd_extract(cli: &Cli, recording: &Path) -> Result<()> {
    let cfg = load_config(cli)?;
    ensure_out(&cli.out)?;
    let (frames, _) = load_frames(recording)?;
    if frames.is_empty() {
        log::warn!("recording is empty; writing an empty marking cloud");
    }
    let (cloud, planes, stats) = pipeline::extract_markings(&frames, &cfg)?;
    pipeline::write_world_cloud(&cli.out.join("markings.csv"), &cloud)?;
    pipeline::write_planes(&cli.out.join("planes.csv"), &planes)?;
    write_json(
        &cli.out.join("extract_report.json"),
        &serde_json::json!({
            "format": "lanemap-extract-report",
            "version": 1,
            "stats": stats,
        }),
    )
}

fn cmd_build(cli: &Cli, cloud_path: &Path, debug_dump: bool) -> Result<()> {
    let cfg = load_config(cli)?;
    ensure_out(&cli.out)?;
    let cloud = pipeline::read_world_cloud(cloud_path)?;
    let build = pipeline::build_model(&cloud, &cfg)?;
    if build.model.lane_count == 1 {
        log::warn!("degenerate single-line road model");
    }
    pipeline::write_road_model(&cli.out.join("road_model.json"), &build.model)?;
    pipeline::write_relations(&cli.out.join("relations.csv"), &build.lookups)?;
    if debug_dump {
        pipeline::write_clusters_debug(&cli.out.join("clusters.csv"), &build.clusters)?;
        pipeline::write_lines_debug(&cli.out.join("candidate_lines.csv"), &build.lines)?;
    }
    write_json(
        &cli.out.join("build_report.json"),
        &serde_json::json!({
            "format": "lanemap-build-report",
            "version": 1,
            "stats": build.stats,
            "lane_count": build.model.lane_count,
            "lane_widths": build.model.lane_widths,
        }),
    )
}

fn continuity_json(doc: &lanemap_core::odr::OdrDocument) -> serde_json::Value {
    let junctions = continuity_report(doc);
    let worst_gap = junctions.iter().map(|j| j.gap).fold(0.0, f64::max);
    let worst_kink = junctions.iter().map(|j| j.kink_deg).fold(0.0, f64::max);
    serde_json::json!({
        "format": "lanemap-continuity-report",
        "version": 1,
        "junctions": junctions,
        "worst_gap": worst_gap,
        "worst_kink_deg": worst_kink,
    })
}

fn cmd_export(cli: &Cli, model_path: &Path, planes_path: Option<&Path>) -> Result<()> {
    let cfg = load_config(cli)?;
    ensure_out(&cli.out)?;
    let model = pipeline::read_road_model(model_path)?;
    let planes = match planes_path {
        Some(p) => pipeline::read_planes(p)?,
        None => Vec::new(),
    };
    let doc = pipeline::export_document(
        &model,
        &planes,
        &cfg,
        "+proj=tmerc +datum=WGS84 +units=m (local frame: recording origin)".into(),
    )?;
    write_opendrive(&doc, &cli.out.join("map.xodr"))?;
    write_json(&cli.out.join("continuity.json"), &continuity_json(&doc))
}

fn cmd_eval(cli: &Cli, map_a: &Path, map_b: &Path, step: Option<f64>) -> Result<()> {
    let cfg = load_config(cli)?;
    let step = step.unwrap_or(cfg.eval_step);
    let a = read_opendrive(map_a)?;
    let b = read_opendrive(map_b)?;
    let report = map_distance(&a, &b, step)?;
    let json = serde_json::json!({
        "format": "lanemap-eval-report",
        "version": 1,
        "map_a": map_a.display().to_string(),
        "map_b": map_b.display().to_string(),
        "step": step,
        "report": report,
    });
    println!(
        "{}",
        serde_json::to_string_pretty(&json)
            .map_err(|e| Error::Structural(format!("serialize report: {e}")))?
    );
    eprint!("{}", report.table());
    ensure_out(&cli.out)?;
    write_json(&cli.out.join("eval.json"), &json)?;
    fs::write(cli.out.join("eval.txt"), report.table())
        .map_err(|e| Error::io(cli.out.join("eval.txt"), e))?;
    Ok(())
}

fn cmd_run(cli: &Cli, recording: &Path, debug_dump: bool) -> Result<()> {
    let cfg = load_config(cli)?;
    ensure_out(&cli.out)?;
    let (frames, origin) = load_frames(recording)?;
    if frames.is_empty() {
        log::warn!("recording is empty; nothing to reconstruct");
    }
    let out = pipeline::run_pipeline_at_origin(&frames, &cfg, &origin)?;
    pipeline::write_world_cloud(&cli.out.join("markings.csv"), &out.cloud)?;
    pipeline::write_planes(&cli.out.join("planes.csv"), &out.planes)?;
    pipeline::write_road_model(&cli.out.join("road_model.json"), &out.build.model)?;
    pipeline::write_relations(&cli.out.join("relations.csv"), &out.build.lookups)?;
    if debug_dump {
        pipeline::write_clusters_debug(&cli.out.join("clusters.csv"), &out.build.clusters)?;
        pipeline::write_lines_debug(&cli.out.join("candidate_lines.csv"), &out.build.lines)?;
    }
    write_opendrive(&out.document, &cli.out.join("map.xodr"))?;
    write_json(&cli.out.join("continuity.json"), &continuity_json(&out.document))?;
    let widths = lane_width_stats(&out.build.model).ok();
    write_json(
        &cli.out.join("run_report.json"),
        &serde_json::json!({
            "format": "lanemap-run-report",
            "version": 1,
            "extract": out.extract_stats,
            "build": out.build.stats,
            "lane_count": out.build.model.lane_count,
            "lane_widths": out.build.model.lane_widths,
            "width_mean": widths.map(|w| w.0),
            "width_sigma": widths.map(|w| w.1),
            "road_length": out.document.total_length(),
            "map": cli.out.join("map.xodr").display().to_string(),
        }),
    )?;
    log::info!(
        "run: {} lanes over {:.1} m -> {}",
        out.build.model.lane_count,
        out.document.total_length(),
        cli.out.join("map.xodr").display()
    );
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Synth {
            scene,
            binary,
            perturb_seeds,
            perturb_sigma,
        } => cmd_synth(cli, scene.as_deref(), *binary, perturb_seeds, *perturb_sigma),
        Command::Extract { recording } => cmd_extract(cli, recording),
        Command::Build { cloud, debug_dump } => cmd_build(cli, cloud, *debug_dump),
        Command::Export { model, planes } => cmd_export(cli, model, planes.as_deref()),
        Command::Eval { map_a, map_b, step } => cmd_eval(cli, map_a, map_b, *step),
        Command::Run { recording, debug_dump } => cmd_run(cli, recording, *debug_dump),
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
        {
            log::warn!("could not apply --threads {}: {e}", cli.threads);
        }
    }
    if let Err(e) = dispatch(&cli) {
        log::error!("{e}");
        std::process::exit(e.exit_code());
    }
}
