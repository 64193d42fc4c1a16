use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use stground::benchtools::{
    aggregate_frame, build_single_action_clips, points_to_bbox, qc_sample_size, widespread_fraction,
    KeypointRecord,
};
use stground::config::RunConfig;
use stground::datamodel::{
    load_bank, load_clip_dir, load_gt, load_predictions, read_jsonl, save_bank, save_clip_features, save_gt,
    save_predictions, synth_generate, write_json, write_jsonl, BBox, FramePrediction, Label,
};
use stground::groundnet::{parse_stack, train, write_train_log, Layer, ModelParams, Optimizer};
use stground::infer::{align_transcript, st_ground, st_ground_with_labels, transcript_similarity, VideoInput};
use stground::metrics::{evaluate, EvalReport, Metric};
use stground::otselect::{frame_scores, select_frames, SelectionStrategy};
use stground::{Error, Result};

#[derive(Parser)]
#[command(name = "stground", version, about = "Spatio-temporal grounding on feature-level data")]
struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random stream (overrides the config seeds).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; falls back to STGROUND_THREADS, then to all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic dataset with planted ground truth.
    Synth(SynthArgs),
    /// Select training frames for every clip.
    Select(SelectArgs),
    /// Train the four projections.
    Train(TrainArgs),
    /// Ground every video: labels, heatmaps, masks, points.
    Infer(InferArgs),
    /// Score predictions against ground truth.
    Eval(EvalArgs),
    /// Annotation aggregation and benchmark arithmetic.
    #[command(subcommand)]
    Annot(AnnotCmd),
    /// Merge evaluation reports into one table.
    Report(ReportArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(short = 'o', long)]
    out: PathBuf,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    videos: Option<usize>,
    #[arg(long)]
    sigma: Option<f64>,
    /// Trailing videos written to the held-out split.
    #[arg(long)]
    holdout_videos: Option<usize>,
}

#[derive(Args)]
struct SelectArgs {
    #[arg(long)]
    clips: PathBuf,
    /// Trained parameters; identity projections when omitted.
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(short = 'o', long)]
    out: PathBuf,
    #[arg(long, value_enum)]
    strategy: Option<SelectionStrategy>,
    #[arg(long = "T", alias = "t")]
    t: Option<usize>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    clips: PathBuf,
    #[arg(short = 'o', long)]
    out: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    proj_dim: Option<usize>,
    #[arg(long, value_enum)]
    optimizer: Option<Optimizer>,
    #[arg(long, value_enum)]
    strategy: Option<SelectionStrategy>,
    #[arg(long = "T", alias = "t")]
    t: Option<usize>,
    /// Attention stack, e.g. `cross,self,cross` or `CSC`.
    #[arg(long, value_parser = parse_stack)]
    stack: Option<Vec<Layer>>,
    #[arg(long)]
    no_global: bool,
    #[arg(long)]
    no_local: bool,
    /// Re-run frame selection after every epoch (true/false).
    #[arg(long)]
    reselect_every_epoch: Option<bool>,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    clips: PathBuf,
    #[arg(long)]
    bank: PathBuf,
    #[arg(long)]
    params: PathBuf,
    #[arg(short = 'o', long)]
    out: PathBuf,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    bg_score: Option<f64>,
    #[arg(long, default_value_t = 320.0)]
    width: f64,
    #[arg(long, default_value_t = 240.0)]
    height: f64,
    /// Ground truth whose ordered transcripts constrain the labels.
    #[arg(long)]
    transcript: Option<PathBuf>,
    #[arg(long, value_parser = parse_stack)]
    stack: Option<Vec<Layer>>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    #[arg(short = 'o', long)]
    out: PathBuf,
    /// Metrics to compute; all when omitted.
    #[arg(long, value_enum, value_delimiter = ',')]
    metric: Vec<Metric>,
    #[arg(long)]
    iou: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    vmap_thresholds: Option<Vec<f64>>,
    /// Dataset name used as the row key by `report`.
    #[arg(long, default_value = "synthetic")]
    dataset: String,
}

#[derive(Subcommand)]
enum AnnotCmd {
    /// Majority-vote presence and centroids per frame.
    Aggregate(AnnotIo),
    /// Point-union boxes for frames where the action is present.
    Bbox(AnnotIo),
    /// Share of boxes above the widespread area.
    Widespread(WidespreadArgs),
    /// QC sample size with finite population correction.
    SampleSize(SampleSizeArgs),
    /// Single-action clip windows around GT segments.
    Clips(ClipsArgs),
}

#[derive(Args)]
struct AnnotIo {
    #[arg(long)]
    input: PathBuf,
    #[arg(short = 'o', long)]
    out: PathBuf,
    #[arg(long)]
    majority_k: Option<usize>,
    #[arg(long)]
    margin: Option<f64>,
}

#[derive(Args)]
struct WidespreadArgs {
    /// `boxes.jsonl` as written by `annot bbox`.
    #[arg(long)]
    boxes: PathBuf,
    #[arg(short = 'o', long)]
    out: PathBuf,
    #[arg(long)]
    area: Option<f64>,
}

#[derive(Args)]
struct SampleSizeArgs {
    #[arg(long, default_value_t = 0.95)]
    alpha: f64,
    #[arg(long, default_value_t = 0.03)]
    eps: f64,
    #[arg(long, default_value_t = 0.5)]
    p: f64,
    #[arg(long = "N")]
    n: u64,
    #[arg(short = 'o', long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ClipsArgs {
    #[arg(long)]
    gt: PathBuf,
    #[arg(short = 'o', long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// `report.json` files written by `eval`.
    #[arg(required = true)]
    reports: Vec<PathBuf>,
    #[arg(short = 'o', long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let threads = cli
        .threads
        .or_else(|| std::env::var("STGROUND_THREADS").ok().and_then(|v| v.parse().ok()));
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| Error::BadParams(e.to_string()))?;
    }
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.synth.seed = s;
        cfg.train.seed = s;
    }
    match cli.cmd {
        Cmd::Synth(a) => synth(a, cfg),
        Cmd::Select(a) => select(a, cfg),
        Cmd::Train(a) => train_cmd(a, cfg),
        Cmd::Infer(a) => infer(a, cfg),
        Cmd::Eval(a) => eval(a, cfg),
        Cmd::Annot(a) => annot(a, cfg),
        Cmd::Report(a) => report(a),
    }
}

fn out_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Writes `run.json` with the command name and the effective configuration.
fn echo(dir: &Path, command: &str, cfg: &Value) -> Result<()> {
    write_json(&dir.join("run.json"), &json!({ "command": command, "config": cfg }))
}

fn synth(a: SynthArgs, mut cfg: RunConfig) -> Result<()> {
    if let Some(v) = a.classes {
        cfg.synth.classes = v;
    }
    if let Some(v) = a.videos {
        cfg.synth.videos = v;
    }
    if let Some(v) = a.sigma {
        cfg.synth.sigma = v;
    }
    if let Some(v) = a.holdout_videos {
        cfg.holdout_videos = v;
    }
    cfg.validate()?;
    let data = synth_generate(&cfg.synth)?;
    let (train_clips, held) = cfg.split(&data.clips);
    out_dir(&a.out)?;
    for (name, clips) in [("train", &train_clips), ("heldout", &held)] {
        if clips.is_empty() {
            continue;
        }
        let dir = a.out.join(name);
        out_dir(&dir)?;
        for c in clips.iter() {
            save_clip_features(c, &dir.join(format!("{}.json", c.clip_id)))?;
        }
        let ids: std::collections::BTreeSet<&str> = clips.iter().map(|c| c.video_id.as_str()).collect();
        let gt: Vec<_> = data.gt.iter().filter(|g| ids.contains(g.video_id.as_str())).cloned().collect();
        save_gt(&gt, &a.out.join(format!("gt_{name}.jsonl")))?;
    }
    save_bank(&data.bank, &a.out.join("bank.json"))?;
    save_gt(&data.gt, &a.out.join("gt.jsonl"))?;
    echo(&a.out, "synth", &json!({ "synth": cfg.synth, "holdout_videos": cfg.holdout_videos }))
}

fn load_params_or_identity(path: Option<&Path>, dim: usize) -> Result<ModelParams> {
    match path {
        Some(p) => ModelParams::load(p),
        None => Ok(ModelParams::identity(dim)),
    }
}

#[derive(Serialize, Deserialize)]
struct SelectionRecord {
    video_id: String,
    clip_id: String,
    frames: Vec<usize>,
    scores: Vec<f64>,
}

fn select(a: SelectArgs, mut cfg: RunConfig) -> Result<()> {
    let t = &mut cfg.train;
    if let Some(v) = a.strategy {
        t.strategy = v;
    }
    if let Some(v) = a.t {
        t.frames = v;
    }
    if let Some(v) = a.epsilon {
        t.sinkhorn.epsilon = v;
    }
    if let Some(v) = a.iters {
        t.sinkhorn.max_iters = v;
    }
    if let Some(v) = a.tol {
        t.sinkhorn.tol = v;
    }
    cfg.train.validate()?;
    let clips = load_clip_dir(&a.clips)?;
    let dim = clips.first().ok_or(Error::NoSamples)?.dim;
    let params = load_params_or_identity(a.params.as_deref(), dim)?;
    let t = &cfg.train;
    let records = clips
        .par_iter()
        .map(|c| {
            Ok(SelectionRecord {
                video_id: c.video_id.clone(),
                clip_id: c.clip_id.clone(),
                frames: select_frames(c, t.strategy, t.frames, &params, &t.sinkhorn)?,
                scores: frame_scores(c, t.strategy, &params, &t.sinkhorn)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    out_dir(&a.out)?;
    write_jsonl(&a.out.join("selection.jsonl"), &records)?;
    echo(
        &a.out,
        "select",
        &json!({ "strategy": t.strategy, "T": t.frames, "sinkhorn": t.sinkhorn }),
    )
}

fn train_cmd(a: TrainArgs, mut cfg: RunConfig) -> Result<()> {
    let t = &mut cfg.train;
    if let Some(v) = a.epochs {
        t.epochs = v;
    }
    if let Some(v) = a.lr {
        t.lr = v;
    }
    if let Some(v) = a.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = a.delta {
        t.delta = v;
    }
    if let Some(v) = a.proj_dim {
        t.proj_dim = v;
    }
    if let Some(v) = a.optimizer {
        t.optimizer = v;
    }
    if let Some(v) = a.strategy {
        t.strategy = v;
    }
    if let Some(v) = a.t {
        t.frames = v;
    }
    if let Some(v) = a.reselect_every_epoch {
        t.reselect_every_epoch = v;
    }
    if a.no_global {
        t.use_global = false;
    }
    if a.no_local {
        t.use_local = false;
    }
    if let Some(s) = a.stack {
        cfg.attention.stack = s;
    }
    cfg.train.validate()?;
    cfg.attention.validate()?;
    let clips = load_clip_dir(&a.clips)?;
    let dim = clips.first().ok_or(Error::NoSamples)?.dim;
    let p0 = cfg.train.init_params(dim);
    let out = train(&clips, &p0, &cfg.train, &cfg.attention)?;
    let echoed = json!({ "train": cfg.train, "attention": cfg.attention });
    out_dir(&a.out)?;
    out.params.save(&a.out.join("params.json"), &echoed)?;
    write_train_log(&a.out.join("train_log.jsonl"), &out.log)?;
    let first = out.log.first().map_or(0.0, |e| e.loss_total);
    let last = out.log.last().map_or(0.0, |e| e.loss_total);
    println!("loss {first:.4} -> {last:.4} over {} epochs", cfg.train.epochs);
    echo(&a.out, "train", &echoed)
}

fn infer(a: InferArgs, mut cfg: RunConfig) -> Result<()> {
    if let Some(v) = a.theta {
        cfg.infer.theta_temporal = v;
    }
    if let Some(v) = a.tau {
        cfg.infer.tau_spatial = v;
    }
    if let Some(v) = a.bg_score {
        cfg.infer.background_score = v;
    }
    if let Some(s) = a.stack {
        cfg.attention.stack = s;
    }
    cfg.infer.validate()?;
    cfg.attention.validate()?;
    if !(a.width > 0.0 && a.height > 0.0) {
        return Err(Error::BadParams("--width and --height must be positive".into()));
    }
    let clips = load_clip_dir(&a.clips)?;
    let bank = load_bank(&a.bank)?;
    let params = ModelParams::load(&a.params)?;
    let transcripts: Option<BTreeMap<String, Vec<Label>>> = match &a.transcript {
        Some(p) => Some(
            load_gt(p)?
                .into_iter()
                .map(|g| (g.video_id, g.ordered_transcript))
                .collect(),
        ),
        None => None,
    };
    let videos = VideoInput::group(clips, a.width, a.height);
    let preds = videos
        .par_iter()
        .map(|v| match transcripts.as_ref().and_then(|t| t.get(&v.video_id)) {
            Some(slots) if !slots.is_empty() => {
                let sim = transcript_similarity(v, slots, &bank, &params, &cfg.infer)?;
                let assign = align_transcript(&sim, slots, &cfg.infer)?;
                let labels: Vec<(Label, f64)> = assign
                    .iter()
                    .enumerate()
                    .map(|(i, &j)| (slots[j], sim.get(i, j)))
                    .collect();
                st_ground_with_labels(v, &labels, &bank, &params, &cfg.attention, &cfg.infer)
            }
            _ => st_ground(v, &bank, &params, &cfg.attention, &cfg.infer),
        })
        .collect::<Result<Vec<_>>>()?;
    let frames: Vec<FramePrediction> = preds.into_iter().flat_map(|p| p.frames).collect();
    out_dir(&a.out)?;
    save_predictions(&frames, &a.out.join("pred.jsonl"))?;
    echo(
        &a.out,
        "infer",
        &json!({
            "infer": cfg.infer,
            "attention": cfg.attention,
            "width": a.width,
            "height": a.height,
            "aligned": a.transcript.is_some(),
        }),
    )
}

#[derive(Serialize, Deserialize)]
struct DatasetReport {
    dataset: String,
    #[serde(flatten)]
    report: EvalReport,
}

fn eval(a: EvalArgs, mut cfg: RunConfig) -> Result<()> {
    if let Some(v) = a.iou {
        cfg.eval.iou = v;
    }
    if let Some(v) = a.vmap_thresholds {
        cfg.eval.vmap_thresholds = v;
    }
    let metrics = if a.metric.is_empty() { Metric::ALL.to_vec() } else { a.metric };
    let preds = load_predictions(&a.pred)?;
    let gts = load_gt(&a.gt)?;
    let report = evaluate(&preds, &gts, &metrics, &cfg.eval)?;
    out_dir(&a.out)?;
    let table = report.table();
    print!("{table}");
    fs::write(a.out.join("report.txt"), &table).map_err(|e| Error::io(a.out.join("report.txt"), e))?;
    write_json(
        &a.out.join("report.json"),
        &DatasetReport {
            dataset: a.dataset,
            report,
        },
    )?;
    echo(&a.out, "eval", &json!({ "eval": cfg.eval, "metrics": metrics }))
}

fn load_annotations(path: &Path) -> Result<Vec<KeypointRecord>> {
    read_jsonl::<KeypointRecord>(path)?
        .into_iter()
        .map(|(line, r)| {
            r.validate().map_err(|msg| Error::Schema {
                path: path.to_path_buf(),
                line,
                msg,
            })?;
            Ok(r)
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
struct BoxRecord {
    video_id: String,
    frame_index: usize,
    class_id: usize,
    #[serde(rename = "box")]
    bbox: BBox,
}

fn annot(cmd: AnnotCmd, mut cfg: RunConfig) -> Result<()> {
    match cmd {
        AnnotCmd::Aggregate(a) => {
            apply_bench(&mut cfg, &a)?;
            let recs = load_annotations(&a.input)?;
            let agg: Vec<_> = recs.iter().map(|r| aggregate_frame(r, &cfg.bench)).collect();
            out_dir(&a.out)?;
            write_jsonl(&a.out.join("aggregated.jsonl"), &agg)?;
            echo(&a.out, "annot aggregate", &json!({ "bench": cfg.bench }))
        }
        AnnotCmd::Bbox(a) => {
            apply_bench(&mut cfg, &a)?;
            let recs = load_annotations(&a.input)?;
            let mut boxes = Vec::new();
            for r in &recs {
                let agg = aggregate_frame(r, &cfg.bench);
                if agg.present {
                    boxes.push(BoxRecord {
                        video_id: r.video_id.clone(),
                        frame_index: r.frame_index,
                        class_id: r.class_id,
                        bbox: points_to_bbox(&agg.points, r.width, r.height, &cfg.bench)?,
                    });
                }
            }
            out_dir(&a.out)?;
            write_jsonl(&a.out.join("boxes.jsonl"), &boxes)?;
            echo(&a.out, "annot bbox", &json!({ "bench": cfg.bench }))
        }
        AnnotCmd::Widespread(a) => {
            if let Some(v) = a.area {
                cfg.bench.widespread_area = v;
            }
            cfg.bench.validate()?;
            let boxes: Vec<BBox> = read_jsonl::<BoxRecord>(&a.boxes)?.into_iter().map(|(_, b)| b.bbox).collect();
            let frac = widespread_fraction(&boxes, &cfg.bench)?;
            println!("{frac}");
            out_dir(&a.out)?;
            write_json(
                &a.out.join("widespread.json"),
                &json!({ "boxes": boxes.len(), "fraction": frac, "area": cfg.bench.widespread_area }),
            )?;
            echo(&a.out, "annot widespread", &json!({ "bench": cfg.bench }))
        }
        AnnotCmd::SampleSize(a) => {
            let n = qc_sample_size(a.alpha, a.eps, a.p, a.n)?;
            println!("{n}");
            if let Some(dir) = a.out {
                out_dir(&dir)?;
                let args = json!({ "alpha": a.alpha, "eps": a.eps, "p": a.p, "N": a.n });
                write_json(&dir.join("sample_size.json"), &json!({ "args": args, "sample_size": n }))?;
                echo(&dir, "annot sample-size", &args)?;
            }
            Ok(())
        }
        AnnotCmd::Clips(a) => {
            let gts = load_gt(&a.gt)?;
            let clips: Vec<_> = gts.iter().flat_map(build_single_action_clips).collect();
            out_dir(&a.out)?;
            write_jsonl(&a.out.join("clips.jsonl"), &clips)?;
            echo(&a.out, "annot clips", &json!({}))
        }
    }
}

fn apply_bench(cfg: &mut RunConfig, a: &AnnotIo) -> Result<()> {
    if let Some(v) = a.majority_k {
        cfg.bench.majority_k = v;
    }
    if let Some(v) = a.margin {
        cfg.bench.bbox_margin_frac = v;
    }
    cfg.bench.validate()
}

fn report(a: ReportArgs) -> Result<()> {
    let mut rows: BTreeMap<(String, String), f64> = BTreeMap::new();
    for p in &a.reports {
        let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
        let r: DatasetReport = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: p.clone(),
            line: e.line(),
            field: e.to_string().split('`').nth(1).unwrap_or("?").to_string(),
            msg: e.to_string(),
        })?;
        for (m, v) in r.report.metrics {
            rows.insert((r.dataset.clone(), m), v);
        }
    }
    let datasets: Vec<&String> = rows.keys().map(|k| &k.0).collect::<std::collections::BTreeSet<_>>().into_iter().collect();
    let metrics: Vec<&String> = rows.keys().map(|k| &k.1).collect::<std::collections::BTreeSet<_>>().into_iter().collect();
    let mut table = format!("{:<16}", "dataset");
    for m in &metrics {
        table.push_str(&format!(" {m:>18}"));
    }
    table.push('\n');
    for d in &datasets {
        table.push_str(&format!("{d:<16}"));
        for m in &metrics {
            match rows.get(&((*d).clone(), (*m).clone())) {
                Some(v) => table.push_str(&format!(" {v:>18.4}")),
                None => table.push_str(&format!(" {:>18}", "-")),
            }
        }
        table.push('\n');
    }
    print!("{table}");
    out_dir(&a.out)?;
    fs::write(a.out.join("table.txt"), &table).map_err(|e| Error::io(a.out.join("table.txt"), e))?;
    let merged: Vec<Value> = rows
        .iter()
        .map(|((d, m), v)| json!({ "dataset": d, "metric": m, "value": v }))
        .collect();
    write_json(&a.out.join("table.json"), &merged)?;
    echo(&a.out, "report", &json!({ "reports": a.reports }))
}
