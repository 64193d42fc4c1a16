#![allow(dead_code)]

use std::path::PathBuf;

use stground::config::RunConfig;
use stground::datamodel::{synth_generate, ClipFeatures, FramePrediction, SynthData, VideoGt};
use stground::groundnet::{train, TrainOutput};
use stground::infer::{argmax_point, class_heatmaps, st_ground, VideoInput};
use stground::metrics::{iod_jaccard, pointing_game};
use stground::otselect::{select_frames, SelectionStrategy};

pub fn fixture_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/e2e.json")
}

pub fn fixture() -> RunConfig {
    let cfg = RunConfig::load(&fixture_path()).expect("fixture config");
    cfg.validate().expect("valid fixture");
    cfg
}

/// Planted frames of `clip` (clip-local indices) and their class, read from the video GT.
pub fn planted(clip: &ClipFeatures, offset: usize, gt: &VideoGt) -> (usize, Vec<usize>) {
    let u = clip.frames();
    for s in &gt.segments {
        let (a, b) = (s.start_frame.max(offset), s.end_frame.min(offset + u));
        if a < b {
            return (s.class_id, (a - offset..b - offset).collect());
        }
    }
    panic!("clip {} has no planted segment", clip.clip_id);
}

pub struct EndToEnd {
    pub trained: TrainOutput,
    pub loss_ratio: f64,
    pub pointing: f64,
    pub pointing_untrained: f64,
    pub jaccard: f64,
    pub recall_sinkhorn: f64,
    pub recall_global: f64,
}

fn held_videos(data: &SynthData, held: &[&ClipFeatures], cfg: &RunConfig) -> Vec<(VideoInput, VideoGt)> {
    let clips: Vec<ClipFeatures> = held.iter().map(|c| (*c).clone()).collect();
    VideoInput::group(clips, cfg.synth.width, cfg.synth.height)
        .into_iter()
        .map(|v| {
            let gt = data.gt.iter().find(|g| g.video_id == v.video_id).unwrap().clone();
            (v, gt)
        })
        .collect()
}

fn pointing_on(
    videos: &[(VideoInput, VideoGt)],
    data: &SynthData,
    params: &stground::groundnet::ModelParams,
    cfg: &RunConfig,
) -> f64 {
    let mut preds = Vec::new();
    for (v, gt) in videos {
        let mut offset = 0;
        for clip in &v.clips {
            let (class, frames) = planted(clip, offset, gt);
            let maps = class_heatmaps(clip, &frames, class, &data.bank, params, &cfg.attention).unwrap();
            for (f, hm) in frames.iter().zip(maps) {
                preds.push(FramePrediction {
                    video_id: v.video_id.clone(),
                    frame_index: offset + f,
                    label: Some(class),
                    score: 1.0,
                    argmax_point: argmax_point(&hm, v.width as usize, v.height as usize).unwrap(),
                    mask: vec![],
                    heatmap: hm,
                });
            }
            offset += clip.frames();
        }
    }
    let gts: Vec<VideoGt> = videos.iter().map(|(_, g)| g.clone()).collect();
    pointing_game(&preds, &gts).unwrap().accuracy
}

pub fn end_to_end(cfg: &RunConfig) -> EndToEnd {
    let data = synth_generate(&cfg.synth).unwrap();
    let (train_clips, held) = cfg.split(&data.clips);
    let train_clips: Vec<ClipFeatures> = train_clips.into_iter().cloned().collect();
    let p0 = cfg.train.init_params(cfg.synth.dim);
    let trained = train(&train_clips, &p0, &cfg.train, &cfg.attention).unwrap();
    let params = &trained.params;
    let loss_ratio = trained.log.last().unwrap().loss_total / trained.log[0].loss_total;

    let videos = held_videos(&data, &held, cfg);
    let pointing = pointing_on(&videos, &data, params, cfg);
    let pointing_untrained = pointing_on(&videos, &data, &p0, cfg);

    let mut preds = Vec::new();
    for (v, _) in &videos {
        preds.push(st_ground(v, &data.bank, params, &cfg.attention, &cfg.infer).unwrap());
    }
    let gts: Vec<VideoGt> = videos.iter().map(|(_, g)| g.clone()).collect();
    let jaccard = iod_jaccard(&preds, &gts).unwrap().mean_jaccard;

    let recall = |strategy| {
        let mut sum = 0.0;
        let mut n = 0;
        for (v, gt) in &videos {
            let mut offset = 0;
            for clip in &v.clips {
                let (_, truth) = planted(clip, offset, gt);
                let sel = select_frames(clip, strategy, cfg.train.frames, params, &cfg.train.sinkhorn).unwrap();
                sum += sel.iter().filter(|u| truth.contains(u)).count() as f64 / truth.len() as f64;
                n += 1;
                offset += clip.frames();
            }
        }
        sum / n as f64
    };
    EndToEnd {
        loss_ratio,
        pointing,
        pointing_untrained,
        jaccard,
        recall_sinkhorn: recall(SelectionStrategy::Sinkhorn),
        recall_global: recall(SelectionStrategy::Global),
        trained,
    }
}

/// Frame-level temporal diagnostics on held-out videos: (precision, recall, background false-positive rate).
pub fn frame_stats(cfg: &RunConfig, params: &stground::groundnet::ModelParams) -> (f64, f64, f64) {
    let data = synth_generate(&cfg.synth).unwrap();
    let (_, held) = cfg.split(&data.clips);
    let videos = held_videos(&data, &held, cfg);
    let (mut tp, mut fp, mut fneg, mut bg, mut bgfp) = (0, 0, 0, 0, 0);
    for (v, gt) in &videos {
        let labels = stground::infer::temporal_classify(v, &data.bank, params, &cfg.infer).unwrap();
        let mut truth = vec![None; labels.len()];
        for s in &gt.segments {
            for f in s.start_frame..s.end_frame {
                truth[f] = Some(s.class_id);
            }
        }
        for (l, t) in labels.iter().zip(&truth) {
            match (l.0, *t) {
                (Some(a), Some(b)) if a == b => tp += 1,
                (Some(_), Some(_)) => {
                    fp += 1;
                    fneg += 1
                }
                (Some(_), None) => {
                    fp += 1;
                    bgfp += 1;
                    bg += 1
                }
                (None, Some(_)) => fneg += 1,
                (None, None) => bg += 1,
            }
        }
    }
    (
        tp as f64 / (tp + fp).max(1) as f64,
        tp as f64 / (tp + fneg).max(1) as f64,
        bgfp as f64 / bg.max(1) as f64,
    )
}
