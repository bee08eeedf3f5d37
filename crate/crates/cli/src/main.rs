//! Batch front-end: pseudo-label generation, evaluation, synthetic data
//! creation and BEV figure rendering over KITTI-layout directories.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use lidarlabel::boxfit::{Objective, SizeFilter};
use lidarlabel::eval::{match_and_score, FrameLabels, MatchOptions};
use lidarlabel::frustum::extract_frustum;
use lidarlabel::geom::PointSet;
use lidarlabel::kitti::{label_to_box3d, list_frames, load_scene, read_labels};
use lidarlabel::pipeline::{run_generate, PipelineConfig};
use lidarlabel::render::{render_bev, RenderInput};
use lidarlabel::synth::{generate, parse_spec, sample_scene, write_kitti_frame, SamplerOptions};

#[derive(Parser)]
#[command(name = "lidarlabel", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ObjectiveArg {
    /// Minimize the fraction of points far from both key edges.
    Edge,
    /// Minimize rectangle area (comparison baseline).
    Area,
}

#[derive(Subcommand)]
enum Command {
    /// Generate 3D pseudo-labels for a KITTI-layout dataset.
    Generate {
        /// Dataset root containing velodyne/, calib/ and label_2/.
        #[arg(long)]
        data: PathBuf,
        /// Output directory for label files and run metadata.
        #[arg(long)]
        output: PathBuf,
        /// Frames to process: comma list and/or N-M ranges (default: all).
        #[arg(long)]
        frames: Option<String>,
        /// TOML file with a full pipeline configuration; flags override it.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Worker threads (0 = all cores).
        #[arg(long, default_value_t = 0)]
        jobs: usize,
        /// Ground-plane RANSAC seed.
        #[arg(long, alias = "ransac-seed")]
        seed: Option<u64>,
        #[arg(long)]
        ransac_iters: Option<usize>,
        #[arg(long)]
        ransac_thresh: Option<f64>,
        #[arg(long)]
        theta_seg: Option<f64>,
        #[arg(long)]
        phi_min: Option<f64>,
        #[arg(long)]
        phi_max: Option<f64>,
        #[arg(long)]
        phi_step: Option<f64>,
        /// Use a single growth radius instead of the adaptive sweep.
        #[arg(long)]
        fixed_phi: Option<f64>,
        #[arg(long)]
        angle_step: Option<f64>,
        #[arg(long)]
        theta_rect_frac: Option<f64>,
        #[arg(long)]
        vertex_eps: Option<f64>,
        /// l_min,l_max,w_min,w_max,h_min,h_max in meters.
        #[arg(long)]
        size_filter: Option<String>,
        #[arg(long, value_enum)]
        objective: Option<ObjectiveArg>,
        /// Keep ground points in the growth domain.
        #[arg(long)]
        no_ground_removal: bool,
        /// Single rectangle fit without the iterative refinement.
        #[arg(long)]
        no_denoise: bool,
        /// Do not complete rectangles against the frustum boundaries.
        #[arg(long)]
        no_frustum_intersection: bool,
        #[arg(long)]
        min_frustum_points: Option<usize>,
        /// Class of 2D boxes to label.
        #[arg(long)]
        class: Option<String>,
    },
    /// Score generated labels against ground truth.
    Eval {
        /// Directory of predicted label files.
        #[arg(long)]
        pred: PathBuf,
        /// Ground-truth label directory (the dataset's label_2/).
        #[arg(long)]
        gt: PathBuf,
        /// IoU thresholds for precision.
        #[arg(long, default_value = "0.3,0.5,0.7")]
        thresholds: String,
        /// Class to evaluate.
        #[arg(long, default_value = "Car")]
        class: String,
        /// Write the per-object JSONL records here.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Write synthetic KITTI-layout scenes.
    Synth {
        #[arg(long)]
        output: PathBuf,
        /// Number of random scenes (ignored with --spec).
        #[arg(long, default_value_t = 10)]
        scenes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Scene description file instead of random sampling.
        #[arg(long)]
        spec: Option<PathBuf>,
    },
    /// Render one frame's BEV view as SVG.
    Render {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        frame: String,
        /// Directory of predicted labels to overlay.
        #[arg(long)]
        pred: Option<PathBuf>,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 800.0)]
        width: f64,
        #[arg(long, default_value_t = 800.0)]
        height: f64,
    },
}

fn parse_frames(arg: &str) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for part in arg.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        if let Some((a, b)) = part.split_once('-') {
            let lo: u64 = a.trim().parse().context("bad frame range start")?;
            let hi: u64 = b.trim().parse().context("bad frame range end")?;
            for i in lo..=hi {
                out.push(format!("{i:06}"));
            }
        } else {
            let n: u64 = part.parse().context("bad frame id")?;
            out.push(format!("{n:06}"));
        }
    }
    Ok(out)
}

fn parse_size_filter(arg: &str) -> Result<SizeFilter> {
    let vals: Vec<f64> = arg
        .split(',')
        .map(|t| t.trim().parse::<f64>().context("bad size filter value"))
        .collect::<Result<_>>()?;
    if vals.len() != 6 {
        bail!("--size-filter needs 6 comma-separated values");
    }
    Ok(SizeFilter {
        length: (vals[0], vals[1]),
        width: (vals[2], vals[3]),
        height: (vals[4], vals[5]),
    })
}

fn load_labels_dir(dir: &Path, frames: &[String]) -> Result<Vec<FrameLabels>> {
    let mut out = Vec::new();
    for frame_id in frames {
        let path = dir.join(format!("{frame_id}.txt"));
        if !path.exists() {
            continue;
        }
        let text = std::fs::read_to_string(&path)
            .with_context(|| format!("reading {}", path.display()))?;
        out.push(FrameLabels {
            frame_id: frame_id.clone(),
            records: read_labels(&text).with_context(|| path.display().to_string())?,
        });
    }
    Ok(out)
}

fn frame_ids_in(dir: &Path) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).with_context(|| dir.display().to_string())? {
        let name = entry?.file_name().to_string_lossy().into_owned();
        if let Some(stem) = name.strip_suffix(".txt") {
            out.push(stem.to_string());
        }
    }
    out.sort();
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn cmd_generate(
    data: PathBuf,
    output: PathBuf,
    frames: Option<String>,
    config: Option<PathBuf>,
    flags: GenerateFlags,
) -> Result<()> {
    let mut cfg: PipelineConfig = match &config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            toml::from_str(&text).context("parsing config file")?
        }
        None => PipelineConfig::default(),
    };
    flags.apply(&mut cfg)?;
    let frames = match frames {
        Some(arg) => parse_frames(&arg)?,
        None => Vec::new(),
    };
    if frames.is_empty() && list_frames(&data)?.is_empty() {
        eprintln!("warning: no frames found under {}", data.display());
        return Ok(());
    }
    let summary = run_generate(&data, &output, &frames, &cfg)?;
    println!(
        "frames: {} (failed {})\nobjects: {} generated, {} skipped, {} filtered, {} failed",
        summary.frames,
        summary.frames_failed,
        summary.counts.generated,
        summary.counts.skipped,
        summary.counts.filtered,
        summary.counts.failed,
    );
    if summary.counts.unstable > 0 || summary.counts.intersect_fallback > 0 {
        println!(
            "flags: {} unstable, {} intersection fallbacks",
            summary.counts.unstable, summary.counts.intersect_fallback
        );
    }
    Ok(())
}

struct GenerateFlags {
    jobs: usize,
    seed: Option<u64>,
    ransac_iters: Option<usize>,
    ransac_thresh: Option<f64>,
    theta_seg: Option<f64>,
    phi_min: Option<f64>,
    phi_max: Option<f64>,
    phi_step: Option<f64>,
    fixed_phi: Option<f64>,
    angle_step: Option<f64>,
    theta_rect_frac: Option<f64>,
    vertex_eps: Option<f64>,
    size_filter: Option<String>,
    objective: Option<ObjectiveArg>,
    no_ground_removal: bool,
    no_denoise: bool,
    no_frustum_intersection: bool,
    min_frustum_points: Option<usize>,
    class: Option<String>,
}

impl GenerateFlags {
    fn apply(self, cfg: &mut PipelineConfig) -> Result<()> {
        cfg.jobs = self.jobs;
        if let Some(v) = self.seed {
            cfg.ransac.seed = v;
        }
        if let Some(v) = self.ransac_iters {
            cfg.ransac.iterations = v;
        }
        if let Some(v) = self.ransac_thresh {
            cfg.ransac.inlier_threshold = v;
        }
        if let Some(v) = self.theta_seg {
            cfg.segmentation.theta_seg = v;
        }
        if self.phi_min.is_some() || self.phi_max.is_some() || self.phi_step.is_some() {
            let lo = self.phi_min.unwrap_or(0.1);
            let hi = self.phi_max.unwrap_or(0.7);
            let step = self.phi_step.unwrap_or(0.1);
            if step <= 0.0 || hi < lo {
                bail!("invalid phi sweep");
            }
            let mut phis = Vec::new();
            let mut v = lo;
            while v <= hi + 1e-9 {
                phis.push(v);
                v += step;
            }
            cfg.segmentation.phis = phis;
        }
        if let Some(v) = self.fixed_phi {
            cfg.segmentation.phis = vec![v];
        }
        if let Some(v) = self.angle_step {
            cfg.rect_fit.angle_step_deg = v;
        }
        if let Some(v) = self.theta_rect_frac {
            cfg.rect_fit.theta_rect_fraction = v;
        }
        if let Some(v) = self.vertex_eps {
            cfg.rect_fit.vertex_stability_eps = v;
        }
        if let Some(ref s) = self.size_filter {
            cfg.rect_fit.size_filter = parse_size_filter(s)?;
        }
        if let Some(o) = self.objective {
            cfg.objective = match o {
                ObjectiveArg::Edge => Objective::EdgeSupport,
                ObjectiveArg::Area => Objective::Area,
            };
        }
        if self.no_ground_removal {
            cfg.ground_removal = false;
        }
        if self.no_denoise {
            cfg.denoise = false;
        }
        if self.no_frustum_intersection {
            cfg.frustum_intersection = false;
        }
        if let Some(v) = self.min_frustum_points {
            cfg.min_frustum_points = v;
        }
        if let Some(c) = self.class {
            cfg.class = c;
        }
        Ok(())
    }
}

fn cmd_eval(
    pred: PathBuf,
    gt: PathBuf,
    thresholds: String,
    class: String,
    output: Option<PathBuf>,
) -> Result<()> {
    let thresholds: Vec<f64> = thresholds
        .split(',')
        .map(|t| t.trim().parse::<f64>().context("bad threshold"))
        .collect::<Result<_>>()?;
    let frames = frame_ids_in(&pred)?;
    let pred_labels = load_labels_dir(&pred, &frames)?;
    let gt_labels = load_labels_dir(&gt, &frames)?;
    let opts = MatchOptions {
        class,
        thresholds,
        ..MatchOptions::default()
    };
    let mut report = match_and_score(&pred_labels, &gt_labels, &opts)?;
    // Pull pipeline flags from the generation metadata when present.
    let stats_path = pred.join("stats.jsonl");
    if let Ok(text) = std::fs::read_to_string(&stats_path) {
        for line in text.lines() {
            let Ok(rec) = serde_json::from_str::<lidarlabel::pipeline::StatsRecord>(line) else {
                continue;
            };
            match rec.status.as_str() {
                "skipped" | "failed" => report.counts.skipped += 1,
                "filtered" => report.counts.filtered += 1,
                _ => {}
            }
            if rec.unstable {
                report.counts.unstable += 1;
            }
            if let Some(obj) = report
                .per_object
                .iter_mut()
                .find(|o| o.frame_id == rec.frame_id && o.object_index == rec.object_index)
            {
                if rec.unstable {
                    obj.flags.push("unstable".to_string());
                }
                if rec.intersect_fallback {
                    obj.flags.push("intersect_fallback".to_string());
                }
            }
        }
    }
    print!("{}", report.table());
    if let Some(path) = output {
        std::fs::write(&path, report.jsonl())
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn cmd_synth(output: PathBuf, scenes: usize, seed: u64, spec: Option<PathBuf>) -> Result<()> {
    match spec {
        Some(path) => {
            let text = std::fs::read_to_string(&path)
                .with_context(|| format!("reading {}", path.display()))?;
            let spec = parse_spec(&text)?;
            let scene = generate(&spec)?;
            write_kitti_frame(&output, "000000", &scene)?;
            println!("wrote 1 frame to {}", output.display());
        }
        None => {
            let opts = SamplerOptions::default();
            for i in 0..scenes {
                let sampled = sample_scene(seed.wrapping_add(i as u64), &opts);
                let scene = generate(&sampled.spec)?;
                write_kitti_frame(&output, &format!("{i:06}"), &scene)?;
            }
            println!("wrote {scenes} frames to {}", output.display());
        }
    }
    Ok(())
}

fn cmd_render(
    data: PathBuf,
    frame: String,
    pred: Option<PathBuf>,
    output: PathBuf,
    width: f64,
    height: f64,
) -> Result<()> {
    let scene = load_scene(&data, &frame)?;
    let mut input = RenderInput {
        points: scene.cloud.points().to_vec(),
        ..RenderInput::default()
    };
    // Ground truth may be absent; render what exists.
    for b in &scene.boxes2d {
        let f = extract_frustum(
            &scene.cloud,
            &PointSet::full(scene.cloud.len()),
            b.box2d,
            &scene.calib,
        );
        input.frustums.push((f.left_dir, f.right_dir));
    }
    let gt_path = data.join("label_2").join(format!("{frame}.txt"));
    if let Ok(text) = std::fs::read_to_string(&gt_path) {
        for rec in read_labels(&text)? {
            if let Ok(b) = label_to_box3d(&rec) {
                input.gt_boxes.push(b);
            }
        }
    }
    if let Some(pred_dir) = pred {
        let path = pred_dir.join(format!("{frame}.txt"));
        let text = std::fs::read_to_string(&path)
            .with_context(|| format!("reading {}", path.display()))?;
        for rec in read_labels(&text)? {
            if let Ok(b) = label_to_box3d(&rec) {
                // Mark the corner facing the camera, the observed one.
                let nearest = b
                    .corners_bev()
                    .into_iter()
                    .min_by(|a, c| a.norm().partial_cmp(&c.norm()).unwrap())
                    .unwrap();
                input.key_vertices.push(nearest);
                input.pred_boxes.push(b);
            }
        }
    }
    let svg = render_bev(&input, width, height);
    std::fs::write(&output, svg).with_context(|| format!("writing {}", output.display()))?;
    println!("wrote {}", output.display());
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Generate {
            data,
            output,
            frames,
            config,
            jobs,
            seed,
            ransac_iters,
            ransac_thresh,
            theta_seg,
            phi_min,
            phi_max,
            phi_step,
            fixed_phi,
            angle_step,
            theta_rect_frac,
            vertex_eps,
            size_filter,
            objective,
            no_ground_removal,
            no_denoise,
            no_frustum_intersection,
            min_frustum_points,
            class,
        } => cmd_generate(
            data,
            output,
            frames,
            config,
            GenerateFlags {
                jobs,
                seed,
                ransac_iters,
                ransac_thresh,
                theta_seg,
                phi_min,
                phi_max,
                phi_step,
                fixed_phi,
                angle_step,
                theta_rect_frac,
                vertex_eps,
                size_filter,
                objective,
                no_ground_removal,
                no_denoise,
                no_frustum_intersection,
                min_frustum_points,
                class,
            },
        ),
        Command::Eval {
            pred,
            gt,
            thresholds,
            class,
            output,
        } => cmd_eval(pred, gt, thresholds, class, output),
        Command::Synth {
            output,
            scenes,
            seed,
            spec,
        } => cmd_synth(output, scenes, seed, spec),
        Command::Render {
            data,
            frame,
            pred,
            output,
            width,
            height,
        } => cmd_render(data, frame, pred, output, width, height),
    }
}
