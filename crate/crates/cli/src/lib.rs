//! Command-line front end: configuration, calibration, single-frame and
//! batch detection, evaluation and synthetic data.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use creekgauge::ensemble::{calibrate, run_pipeline_on_file, FrameContext, PipelineDiagnostics};
use creekgauge::matcher::{load_template, save_template};
use creekgauge::metrics::{self, GroundTruthSet};
use creekgauge::records::{self, timestamp_from_name};
use creekgauge::synth::SynthConfig;
use creekgauge::{CalibrationModel, ColorImage, EdgeKind, PipelineConfig, ReadingRecord, Status, Template};

/// Extensions picked up by `batch`.
const IMAGE_EXTENSIONS: [&str; 6] = ["png", "pgm", "ppm", "pnm", "jpg", "jpeg"];

#[derive(Debug, Parser)]
#[command(name = "creekgauge", version, about = "Water-level readings from fixed-camera images")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Pipeline configuration (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output file or directory, depending on the command.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for `batch`.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    /// Emit per-image diagnostics as JSON lines on stderr.
    #[arg(long, global = true)]
    pub debug: bool,
    /// Override the configured edge provider.
    #[arg(long, global = true)]
    pub edge: Option<EdgeKind>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Configuration helpers.
    #[command(subcommand)]
    Config(ConfigCommand),
    /// Cut a template from a reference image with a known water height.
    Calibrate {
        reference: PathBuf,
        /// Annotated water-line row in the reference image.
        #[arg(long)]
        row: f64,
        /// Water height in the reference image (cm).
        #[arg(long)]
        h_r: f64,
        #[arg(long, default_value_t = 1.0)]
        cm_per_pixel: f64,
    },
    /// Read one image and print its record as CSV.
    Detect { image: PathBuf },
    /// Read every timestamped image in a directory.
    Batch { dir: PathBuf },
    /// Score readings against ground truth.
    Eval {
        readings: PathBuf,
        /// Ground-truth CSV, or a directory of annotation XML files.
        ground_truth: PathBuf,
        /// Optional `timestamp,value` series to correlate heights against.
        #[arg(long)]
        gauge: Option<PathBuf>,
    },
    /// Render a synthetic dataset with ground truth.
    Synth {
        /// Batch description (TOML); defaults apply when omitted.
        scene_config: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum ConfigCommand {
    /// Write a configuration with every default spelled out.
    Init {
        /// Emit a synthetic-batch description instead.
        #[arg(long)]
        synth: bool,
    },
}

/// Runs a parsed command and returns the process exit code.
pub fn run(cli: &Cli) -> Result<u8> {
    let g = &cli.global;
    match &cli.command {
        Command::Config(ConfigCommand::Init { synth }) => {
            let text = if *synth { SynthConfig::default().to_toml()? } else { PipelineConfig::default().to_toml()? };
            emit_text(g.out.as_deref(), &text)?;
            Ok(0)
        }
        Command::Calibrate { reference, row, h_r, cm_per_pixel } => {
            cmd_calibrate(g, reference, *row, *h_r, *cm_per_pixel)?;
            Ok(0)
        }
        Command::Detect { image } => cmd_detect(g, image),
        Command::Batch { dir } => {
            cmd_batch(g, dir)?;
            Ok(0)
        }
        Command::Eval { readings, ground_truth, gauge } => {
            cmd_eval(g, readings, ground_truth, gauge.as_deref())?;
            Ok(0)
        }
        Command::Synth { scene_config } => {
            cmd_synth(g, scene_config.as_deref())?;
            Ok(0)
        }
    }
}

fn emit_text(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

/// Loads the configuration and applies command-line overrides.
pub fn load_config(g: &GlobalArgs) -> Result<PipelineConfig> {
    let mut cfg = match &g.config {
        Some(p) => PipelineConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => PipelineConfig::default(),
    };
    if let Some(kind) = g.edge {
        cfg.edge.kind = kind;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_model(cfg: &PipelineConfig) -> Result<(Template, CalibrationModel)> {
    let (tmpl, stored) = load_template(&cfg.template_path)
        .with_context(|| format!("loading template {}", cfg.template_path.display()))?;
    let cal = cfg
        .calibration
        .clone()
        .or(stored)
        .context("no calibration in the configuration or the template file")?;
    cal.validate()?;
    Ok((tmpl, cal))
}

fn cmd_calibrate(g: &GlobalArgs, reference: &Path, row: f64, h_r: f64, cm_per_pixel: f64) -> Result<()> {
    let cfg = load_config(g)?;
    let img = ColorImage::load(reference).with_context(|| format!("reading {}", reference.display()))?;
    let name = reference.file_name().and_then(|n| n.to_str()).unwrap_or_default();
    let ctx = FrameContext { timestamp: timestamp_from_name(name), image_path: Some(reference), label: name };
    let (tmpl, cal) = calibrate(&img, row, h_r, cm_per_pixel, &cfg, &ctx)?;
    let out = g.out.clone().unwrap_or_else(|| cfg.template_path.clone());
    save_template(&tmpl, Some(&cal), &out)?;
    eprintln!(
        "template {}x{} at ({}, {}), reference slope {:.4}, written to {}",
        tmpl.width(),
        tmpl.height(),
        tmpl.origin_in_reference.x,
        tmpl.origin_in_reference.y,
        tmpl.reference_slope,
        out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct DebugLine<'a> {
    file: &'a str,
    record: &'a ReadingRecord,
    diagnostics: Option<&'a PipelineDiagnostics>,
    error: Option<String>,
}

fn emit_debug(file: &Path, record: &ReadingRecord, diag: Option<&PipelineDiagnostics>, error: Option<String>) {
    let line = DebugLine { file: &file.to_string_lossy(), record, diagnostics: diag, error };
    match serde_json::to_string(&line) {
        Ok(s) => eprintln!("{s}"),
        Err(e) => log::warn!("cannot serialize diagnostics: {e}"),
    }
}

fn cmd_detect(g: &GlobalArgs, image: &Path) -> Result<u8> {
    let cfg = load_config(g)?;
    let (tmpl, cal) = load_model(&cfg)?;
    let (record, diag) = run_pipeline_on_file(image, &tmpl, &cal, &cfg)
        .with_context(|| format!("processing {}", image.display()))?;
    if g.debug {
        emit_debug(image, &record, Some(&diag), None);
    }
    let mut buf = Vec::new();
    records::write_records(&mut buf, std::slice::from_ref(&record))?;
    emit_text(g.out.as_deref(), &String::from_utf8(buf)?)?;
    Ok(record.status.exit_code() as u8)
}

/// Image files in `dir`, ordered by the timestamp in their names, then by name.
pub fn list_frames(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut frames: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading directory {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    frames.sort_by_cached_key(|p| {
        let name = p.file_name().unwrap_or_default().to_string_lossy().into_owned();
        (timestamp_from_name(&name), name)
    });
    Ok(frames)
}

/// Processes every frame of `dir` and returns the records in timestamp order.
pub fn process_batch(
    frames: &[PathBuf],
    tmpl: &Template,
    cal: &CalibrationModel,
    cfg: &PipelineConfig,
    jobs: usize,
    debug: bool,
) -> Result<Vec<ReadingRecord>> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build()?;
    let records = pool.install(|| {
        frames
            .par_iter()
            .map(|path| match run_pipeline_on_file(path, tmpl, cal, cfg) {
                Ok((record, diag)) => {
                    if debug {
                        emit_debug(path, &record, Some(&diag), None);
                    }
                    record
                }
                Err(e) => {
                    log::error!("{}: {e}", path.display());
                    let name = path.file_name().unwrap_or_default().to_string_lossy();
                    let record = ReadingRecord::without_reading(timestamp_from_name(&name), Status::Error);
                    if debug {
                        emit_debug(path, &record, None, Some(e.to_string()));
                    }
                    record
                }
            })
            .collect()
    });
    Ok(records)
}

/// Counts per status and the share of `ok` records.
pub fn summary_line(records: &[ReadingRecord]) -> String {
    let count = |s: Status| records.iter().filter(|r| r.status == s).count();
    let ok = count(Status::Ok);
    format!(
        "frames {} ok {} rejected_dark {} no_match {} detector_failure {} non_convergent {} error {} response_rate {:.4}",
        records.len(),
        ok,
        count(Status::RejectedDark),
        count(Status::NoMatch),
        count(Status::DetectorFailure),
        count(Status::NonConvergent),
        count(Status::Error),
        ok as f64 / records.len().max(1) as f64
    )
}

fn cmd_batch(g: &GlobalArgs, dir: &Path) -> Result<()> {
    let cfg = load_config(g)?;
    let (tmpl, cal) = load_model(&cfg)?;
    let frames = list_frames(dir)?;
    if frames.is_empty() {
        bail!("no images found in {}", dir.display());
    }
    let records = process_batch(&frames, &tmpl, &cal, &cfg, g.jobs, g.debug)?;
    match &g.out {
        Some(p) => {
            let f = File::create(p).with_context(|| format!("creating {}", p.display()))?;
            records::write_records(BufWriter::new(f), &records)?;
        }
        None => records::write_records(io::stdout().lock(), &records)?,
    }
    eprintln!("{}", summary_line(&records));
    Ok(())
}

fn load_ground_truth(path: &Path) -> Result<GroundTruthSet> {
    if path.is_dir() {
        Ok(GroundTruthSet::from_labelimg_dir(path)?)
    } else {
        let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
        Ok(GroundTruthSet::from_csv(f)?)
    }
}

fn cmd_eval(g: &GlobalArgs, readings: &Path, ground_truth: &Path, gauge: Option<&Path>) -> Result<()> {
    let f = File::open(readings).with_context(|| format!("opening {}", readings.display()))?;
    let recs = records::read_records(f)?;
    let gt = load_ground_truth(ground_truth)?;
    let report = metrics::evaluate(&recs, &gt)?;
    let out_dir = g.out.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out_dir)?;
    metrics::write_summary(File::create(out_dir.join("summary.csv"))?, &report)?;
    metrics::write_per_day_errors(File::create(out_dir.join("per_day_errors.csv"))?, &report)?;
    let opt = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.4}"));
    println!(
        "n {} mae {:.4} mape {} r2 {} response_rate {:.4}",
        report.n,
        report.mae,
        opt(report.mape),
        opt(report.r2),
        report.response_rate
    );
    if let Some(gauge) = gauge {
        let series = metrics::read_series(File::open(gauge).with_context(|| format!("opening {}", gauge.display()))?)?;
        let mut heights: Vec<_> = recs
            .iter()
            .filter_map(|r| Some((r.timestamp?, r.reading?.height_cm)))
            .collect();
        heights.sort_by_key(|p| p.0);
        let pairs = metrics::align_nearest(&heights, &series, metrics::default_alignment_window());
        let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let r2 = metrics::cross_series_r2(&a, &b)?;
        println!("gauge pairs {} cross_r2 {r2:.4}", a.len());
    }
    Ok(())
}

fn cmd_synth(g: &GlobalArgs, scene_config: Option<&Path>) -> Result<()> {
    let cfg = match scene_config {
        Some(p) => SynthConfig::from_toml(
            &std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
        )?,
        None => SynthConfig::default(),
    };
    let out = g.out.clone().context("synth needs --out DIR")?;
    let frames = cfg.render(&out)?;
    eprintln!("wrote {} frames and ground_truth.csv to {}", frames.len(), out.display());
    Ok(())
}
