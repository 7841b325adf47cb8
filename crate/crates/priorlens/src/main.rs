//! `priorlens` command line: synthetic scenes, masked attention, pseudo-label
//! refinement, vanishing-point plots, mAP evaluation, and an end-to-end demo.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use priorlens::attention::{motion_prior_attention, AttentionConfig, MaskMode};
use priorlens::eval::{evaluate, MapReport};
use priorlens::geometry::PARALLEL_TOL;
use priorlens::io::{
    read_detections, read_feature_stack, write_detections, write_feature_stack, DetectionRecord,
};
use priorlens::losses::gradient_check_report;
use priorlens::refiner::{
    build_all_tracklets, fit_tracklet_lines, refine, Detection, RefineReport, RefinerConfig,
};
use priorlens::svg::render_overlay;
use priorlens::synth::{feature_stack_from_scene, generate, SceneSpec};
use priorlens::vanishing::{identify_region, pairwise_intersections};
use priorlens::Line2;

const EXIT_VALIDATION: u8 = 1;
const EXIT_ACCEPTANCE: u8 = 2;

#[derive(Parser)]
#[command(name = "priorlens", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the motion-prior attention kernel on a FSTK feature stack.
    Attend(AttendArgs),
    /// Refine pseudo labels with the vanishing-point filter.
    Refine(RefineArgs),
    /// Recover the vanishing region of a detection stream and plot it.
    Vp(VpArgs),
    /// Generate a deterministic synthetic scene.
    Synth(SynthArgs),
    /// Evaluate detections against ground truth (six mAP variants).
    Eval(EvalArgs),
    /// Finite-difference check of the loss gradients.
    Gradcheck(GradcheckArgs),
    /// End-to-end synthetic pipeline with pass/fail thresholds.
    Demo(DemoArgs),
}

#[derive(Args)]
struct AttendArgs {
    #[arg(long)]
    features: PathBuf,
    #[arg(long, value_enum, default_value = "motion-prior")]
    mode: CliMaskMode,
    #[arg(long, default_value_t = 0)]
    ref_frame: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum CliMaskMode {
    MotionPrior,
    None,
    Softmax,
    Binary,
}

impl From<CliMaskMode> for MaskMode {
    fn from(m: CliMaskMode) -> Self {
        match m {
            CliMaskMode::MotionPrior => MaskMode::MotionPrior,
            CliMaskMode::None => MaskMode::None,
            CliMaskMode::Softmax => MaskMode::Softmax,
            CliMaskMode::Binary => MaskMode::Binary,
        }
    }
}

#[derive(Args)]
struct RefineArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Image size as WxH, e.g. 1920x1080.
    #[arg(long)]
    image_size: String,
    #[arg(long, default_value_t = 0.9)]
    sigma: f64,
    #[arg(long, default_value_t = 5)]
    d: usize,
    #[arg(long, default_value_t = 1.0)]
    eps: f64,
    #[arg(long, default_value_t = 0.1)]
    min_iou: f64,
    #[arg(long, default_value_t = 2)]
    min_pts: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct VpArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    image_size: String,
    #[arg(long, default_value_t = 1.0)]
    eps: f64,
    #[arg(long, default_value_t = 2)]
    min_pts: usize,
    #[arg(long, default_value_t = 5)]
    d: usize,
    #[arg(long, default_value_t = 0.9)]
    sigma: f64,
    #[arg(long)]
    svg: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    /// SceneSpec JSON file; omit for the default spec.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dets: PathBuf,
    #[arg(long)]
    out_truth: PathBuf,
    #[arg(long)]
    out_features: Option<PathBuf>,
    #[arg(long, default_value_t = 16)]
    channels: usize,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    dets: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct DemoArgs {
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    svg: Option<PathBuf>,
}

fn main() -> ExitCode {
    if let Some(threads) = std::env::var("PRIORLENS_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
    {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap's help/version output is a success, parse failures are
            // validation errors (exit 1)
            if e.use_stderr() {
                eprintln!("{e}");
                return ExitCode::from(EXIT_VALIDATION);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    let result = match cli.command {
        Command::Attend(args) => cmd_attend(args),
        Command::Refine(args) => cmd_refine(args),
        Command::Vp(args) => cmd_vp(args),
        Command::Synth(args) => cmd_synth(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
        Command::Demo(args) => cmd_demo(args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_VALIDATION)
        }
    }
}

type CmdResult = Result<ExitCode, Box<dyn std::error::Error>>;

fn parse_image_size(s: &str) -> Result<(f64, f64), String> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected WxH, got {s:?}"))?;
    let w: f64 = w.parse().map_err(|_| format!("bad width {w:?}"))?;
    let h: f64 = h.parse().map_err(|_| format!("bad height {h:?}"))?;
    if w <= 0.0 || h <= 0.0 {
        return Err("image size must be positive".into());
    }
    Ok((w, h))
}

fn write_json<T: Serialize>(path: Option<&PathBuf>, value: &T) -> CmdResult {
    let json = serde_json::to_string_pretty(value)?;
    match path {
        Some(p) => {
            let mut f = BufWriter::new(File::create(p)?);
            f.write_all(json.as_bytes())?;
            f.write_all(b"\n")?;
        }
        None => println!("{json}"),
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct AttendReport {
    n: usize,
    t: usize,
    c: usize,
    scores: Vec<f64>,
    /// n rows of c fused feature values.
    features: Vec<Vec<f64>>,
}

fn cmd_attend(args: AttendArgs) -> CmdResult {
    let stack = read_feature_stack(BufReader::new(File::open(&args.features)?))?;
    let cfg = AttentionConfig {
        reference_frame: args.ref_frame,
        mask_mode: args.mode.into(),
        binary_threshold: 0.5,
    };
    let out = motion_prior_attention(&stack, &cfg)?;
    let report = AttendReport {
        n: stack.n,
        t: stack.t,
        c: stack.c,
        scores: out.scores,
        features: out
            .features
            .chunks(stack.c)
            .map(|row| row.to_vec())
            .collect(),
    };
    write_json(Some(&args.out), &report)
}

fn group_by_video(records: Vec<DetectionRecord>) -> BTreeMap<String, Vec<Detection>> {
    let mut by_video: BTreeMap<String, Vec<Detection>> = BTreeMap::new();
    for rec in records {
        by_video
            .entry(rec.video_id.clone())
            .or_default()
            .push(rec.to_detection());
    }
    by_video
}

#[derive(Serialize)]
struct MultiVideoReport {
    videos: BTreeMap<String, RefineReport>,
}

fn cmd_refine(args: RefineArgs) -> CmdResult {
    let (w, h) = parse_image_size(&args.image_size)?;
    let cfg = RefinerConfig {
        sigma: args.sigma,
        d: args.d,
        min_iou: args.min_iou,
        eps: args.eps,
        min_pts: args.min_pts,
    };
    let records = read_detections(BufReader::new(File::open(&args.input)?))?;
    let by_video = group_by_video(records);

    let refined: Vec<(String, (Vec<Detection>, RefineReport))> = by_video
        .into_par_iter()
        .map(|(vid, dets)| {
            let result = refine(&dets, w, h, &cfg);
            (vid, result)
        })
        .collect();

    // deterministic output order: by video id, then frame
    let mut out_records = Vec::new();
    let mut reports = BTreeMap::new();
    let mut sorted = refined;
    sorted.sort_by(|a, b| a.0.cmp(&b.0));
    for (vid, (dets, report)) in sorted {
        let mut dets = dets;
        dets.sort_by_key(|d| d.frame);
        out_records.extend(
            dets.iter()
                .map(|d| DetectionRecord::from_detection(&vid, d)),
        );
        reports.insert(vid, report);
    }
    write_detections(BufWriter::new(File::create(&args.out)?), &out_records)?;
    if args.report.is_some() {
        write_json(args.report.as_ref(), &MultiVideoReport { videos: reports })?;
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct VpReport {
    videos: BTreeMap<String, Option<priorlens::VanishingRegion>>,
}

fn cmd_vp(args: VpArgs) -> CmdResult {
    let (w, h) = parse_image_size(&args.image_size)?;
    let cfg = RefinerConfig {
        sigma: args.sigma,
        d: args.d,
        eps: args.eps,
        min_pts: args.min_pts,
        ..Default::default()
    };
    let records = read_detections(BufReader::new(File::open(&args.input)?))?;
    let by_video = group_by_video(records);

    let mut regions = BTreeMap::new();
    let mut all_lines: Vec<Line2> = Vec::new();
    let mut last_intersections = None;
    for (vid, dets) in by_video {
        let kept: Vec<Detection> = dets.iter().filter(|d| d.score >= cfg.sigma).copied().collect();
        let mut tracklets = build_all_tracklets(&kept, &cfg);
        fit_tracklet_lines(&mut tracklets, &kept);
        let lines: Vec<Line2> = tracklets.iter().filter_map(|t| t.fitted_line).collect();
        let intersections = pairwise_intersections(&lines, PARALLEL_TOL);
        let eps_px = cfg.eps / 100.0 * (w * w + h * h).sqrt();
        let region = identify_region(&intersections, eps_px, cfg.min_pts);
        all_lines.extend(&lines);
        regions.insert(vid, region);
        last_intersections = Some(intersections);
    }

    if let (Some(path), Some(intersections)) = (&args.svg, &last_intersections) {
        let region = regions.values().flatten().next();
        let svg = render_overlay(w, h, &all_lines, intersections, region);
        std::fs::write(path, svg)?;
    }
    write_json(None, &VpReport { videos: regions })
}

fn cmd_synth(args: SynthArgs) -> CmdResult {
    let mut spec: SceneSpec = match &args.spec {
        Some(path) => serde_json::from_reader(BufReader::new(File::open(path)?))?,
        None => SceneSpec::default(),
    };
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let scene = generate(&spec);
    let dets: Vec<DetectionRecord> = scene
        .detections
        .iter()
        .map(|d| DetectionRecord::from_detection("synth", d))
        .collect();
    let truth: Vec<DetectionRecord> = scene
        .truth
        .iter()
        .map(|d| DetectionRecord::from_detection("synth", d))
        .collect();
    write_detections(BufWriter::new(File::create(&args.out_dets)?), &dets)?;
    write_detections(BufWriter::new(File::create(&args.out_truth)?), &truth)?;
    if let Some(path) = &args.out_features {
        let stack = feature_stack_from_scene(&scene, args.channels, spec.seed.wrapping_add(1))
            .ok_or("scene has no object visible in every frame")?;
        write_feature_stack(BufWriter::new(File::create(path)?), &stack)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_eval(args: EvalArgs) -> CmdResult {
    let dets: Vec<Detection> = read_detections(BufReader::new(File::open(&args.dets)?))?
        .iter()
        .map(DetectionRecord::to_detection)
        .collect();
    let truth: Vec<Detection> = read_detections(BufReader::new(File::open(&args.truth)?))?
        .iter()
        .map(DetectionRecord::to_detection)
        .collect();
    let report = evaluate(&dets, &truth);
    write_json(args.report.as_ref(), &report)
}

#[derive(Serialize)]
struct GradcheckOutput {
    seed: u64,
    bbox_max_rel_err: f64,
    cls_max_rel_err: f64,
}

fn cmd_gradcheck(args: GradcheckArgs) -> CmdResult {
    let (bbox, cls) = gradient_check_report(args.seed, 1e-2);
    write_json(None, &GradcheckOutput {
        seed: args.seed,
        bbox_max_rel_err: bbox,
        cls_max_rel_err: cls,
    })
}

#[derive(Serialize)]
struct DemoReport {
    seed: u64,
    detections: usize,
    corrupted_labels: usize,
    relabels: usize,
    vp_error_px: Option<f64>,
    corrupted_accuracy: f64,
    refined_accuracy: f64,
    map_before: MapReport,
    map_after: MapReport,
    attention_scores: Vec<f64>,
    failures: Vec<String>,
}

fn class_accuracy(dets: &[Detection], truth: &[Detection]) -> f64 {
    let hits = dets
        .iter()
        .zip(truth)
        .filter(|(d, t)| d.class_id == t.class_id)
        .count();
    hits as f64 / dets.len().max(1) as f64
}

fn cmd_demo(args: DemoArgs) -> CmdResult {
    let spec = SceneSpec {
        seed: args.seed,
        ..SceneSpec::default()
    };
    let scene = generate(&spec);
    let cfg = RefinerConfig::default();
    let (refined, refine_report) = refine(&scene.detections, spec.image_w, spec.image_h, &cfg);

    // score_range keeps everything above sigma, so the streams align 1:1
    let corrupted_accuracy = class_accuracy(&scene.detections, &scene.truth);
    let refined_accuracy = class_accuracy(&refined, &scene.truth);
    let corrupted_labels = scene
        .detections
        .iter()
        .zip(&scene.truth)
        .filter(|(d, t)| d.class_id != t.class_id)
        .count();

    let map_before = evaluate(&scene.detections, &scene.truth);
    let map_after = evaluate(&refined, &scene.truth);

    let stack = feature_stack_from_scene(&scene, 16, spec.seed.wrapping_add(1))
        .ok_or("scene has no object visible in every frame")?;
    let attn = motion_prior_attention(&stack, &AttentionConfig::default())?;

    let vp_error_px = refine_report
        .region
        .as_ref()
        .map(|r| r.centroid.dist(&scene.true_vp));

    let mut failures = Vec::new();
    match vp_error_px {
        None => failures.push("no vanishing region recovered".to_string()),
        Some(err) if err > 15.0 => {
            failures.push(format!("vanishing point error {err:.2} px > 15 px"))
        }
        _ => {}
    }
    if refined_accuracy < 1.0 {
        failures.push(format!("refined accuracy {refined_accuracy:.4} < 1.0"));
    }
    if refine_report.relabel_count > 0 && refined_accuracy <= corrupted_accuracy {
        failures.push("relabeling did not improve accuracy".to_string());
    }
    if let (Some(before), Some(after)) = (map_before.map, map_after.map) {
        if after + 1e-12 < before {
            failures.push(format!("mAP regressed: {before:.4} -> {after:.4}"));
        }
    }
    if attn.scores.iter().any(|&m| !(0.0..=1.0).contains(&m)) {
        failures.push("attention score outside [0, 1]".to_string());
    }

    if let Some(path) = &args.svg {
        let kept: Vec<Detection> = scene
            .detections
            .iter()
            .filter(|d| d.score >= cfg.sigma)
            .copied()
            .collect();
        let mut tracklets = build_all_tracklets(&kept, &cfg);
        fit_tracklet_lines(&mut tracklets, &kept);
        let lines: Vec<Line2> = tracklets.iter().filter_map(|t| t.fitted_line).collect();
        let intersections = pairwise_intersections(&lines, PARALLEL_TOL);
        let svg = render_overlay(
            spec.image_w,
            spec.image_h,
            &lines,
            &intersections,
            refine_report.region.as_ref(),
        );
        std::fs::write(path, svg)?;
    }

    let report = DemoReport {
        seed: args.seed,
        detections: scene.detections.len(),
        corrupted_labels,
        relabels: refine_report.relabel_count,
        vp_error_px,
        corrupted_accuracy,
        refined_accuracy,
        map_before,
        map_after,
        attention_scores: attn.scores,
        failures: failures.clone(),
    };
    write_json(args.report.as_ref(), &report)?;
    if failures.is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        Ok(ExitCode::from(EXIT_ACCEPTANCE))
    }
}
