//! Untrimmed-video inference: per-frame classification with a background
//! threshold, rollout heatmaps for classified frames, grid masks and argmax
//! points, and monotone transcript alignment.

use serde::{Deserialize, Serialize};

use crate::datamodel::{derive_segments, ClipFeatures, FramePrediction, Label, LabelBank, SpatioTemporalPrediction};
use crate::error::{Error, Result};
use crate::groundnet::{local_forward_tokens, project, rollout_heatmap, AttentionConfig, ModelParams};
use crate::numcore::Matrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferConfig {
    /// Cosine threshold separating actions from background.
    pub theta_temporal: f64,
    /// Heatmap threshold for the grid mask.
    pub tau_spatial: f64,
    /// Score of a background slot in transcript alignment.
    pub background_score: f64,
}

impl Default for InferConfig {
    fn default() -> Self {
        Self {
            theta_temporal: 0.5,
            tau_spatial: 0.01,
            background_score: 0.5,
        }
    }
}

impl InferConfig {
    pub fn validate(&self) -> Result<()> {
        if !(-1.0..=1.0).contains(&self.theta_temporal) {
            return Err(Error::BadParams("theta_temporal must lie in [-1, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.tau_spatial) {
            return Err(Error::BadParams("tau_spatial must lie in [0, 1]".into()));
        }
        if !self.background_score.is_finite() {
            return Err(Error::NonFinite("background_score"));
        }
        Ok(())
    }
}

/// One untrimmed video as consecutive clips; frame `i` of clip `j` is video
/// frame `Σ_{<j} U + i`.
#[derive(Clone, Debug)]
pub struct VideoInput {
    pub video_id: String,
    pub width: f64,
    pub height: f64,
    pub clips: Vec<ClipFeatures>,
}

impl VideoInput {
    pub fn frames(&self) -> usize {
        self.clips.iter().map(ClipFeatures::frames).sum()
    }

    /// Groups clips by `video_id`, keeping each video's clips in input order.
    pub fn group(clips: Vec<ClipFeatures>, width: f64, height: f64) -> Vec<VideoInput> {
        let mut out: Vec<VideoInput> = Vec::new();
        for c in clips {
            match out.iter_mut().find(|v| v.video_id == c.video_id) {
                Some(v) => v.clips.push(c),
                None => out.push(VideoInput {
                    video_id: c.video_id.clone(),
                    width,
                    height,
                    clips: vec![c],
                }),
            }
        }
        out.sort_by(|a, b| a.video_id.cmp(&b.video_id));
        out
    }
}

/// `frames × C` cosine between projected frame globals and class sentences.
pub fn class_similarity(frame_global: &Matrix, bank: &LabelBank, params: &ModelParams) -> Result<Matrix> {
    if bank.dim != params.dim() || frame_global.cols() != params.dim() {
        return Err(Error::dims(format!(
            "bank {} / frames {} vs params {}",
            bank.dim,
            frame_global.cols(),
            params.dim()
        )));
    }
    let f = project(frame_global, &params.w_f)?;
    let s = project(&bank.sentence_matrix(), &params.w_g)?;
    f.matmul_t(&s)
}

/// Per-frame label and best similarity: the most similar class when its
/// cosine reaches `theta_temporal`, else background. Ties go to the lower id.
pub fn temporal_classify(
    video: &VideoInput,
    bank: &LabelBank,
    params: &ModelParams,
    cfg: &InferConfig,
) -> Result<Vec<(Label, f64)>> {
    if bank.classes.is_empty() {
        return Err(Error::BadParams("label bank is empty".into()));
    }
    let mut out = Vec::with_capacity(video.frames());
    for clip in &video.clips {
        let sim = class_similarity(&clip.frame_global, bank, params)?;
        for row in sim.iter_rows() {
            let (best, score) = row
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (c, &s)| if s > acc.1 { (c, s) } else { acc });
            out.push(((score >= cfg.theta_temporal).then_some(best), score));
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub class_id: usize,
    pub start: usize,
    pub end: usize,
}

/// Maximal runs of one non-background label.
pub fn segments_from_labels(labels: &[Label]) -> Vec<Segment> {
    let mut out: Vec<Segment> = Vec::new();
    for (i, l) in labels.iter().enumerate() {
        let Some(c) = *l else { continue };
        match out.last_mut() {
            Some(s) if s.class_id == c && s.end == i => s.end = i + 1,
            _ => out.push(Segment {
                class_id: c,
                start: i,
                end: i + 1,
            }),
        }
    }
    out
}

pub fn labels_from_segments(segments: &[Segment], frames: usize) -> Vec<Label> {
    let mut out = vec![None; frames];
    for s in segments {
        out[s.start..s.end].iter_mut().for_each(|l| *l = Some(s.class_id));
    }
    out
}

/// Pixel center of the maximum of the bilinearly upsampled `g × g` map.
///
/// Grid coordinates of pixel `x` are `(x + 0.5)·g/W − 0.5`, clamped to the
/// grid; ties go to the smallest row, then column.
pub fn argmax_point(heatmap: &[f64], width: usize, height: usize) -> Result<(f64, f64)> {
    let g = crate::datamodel::grid_side(heatmap.len())
        .ok_or_else(|| Error::dims(format!("{} cells is not a square grid", heatmap.len())))?;
    if width == 0 || height == 0 {
        return Err(Error::dims("empty frame"));
    }
    let taps = |pixels: usize| -> Vec<(usize, usize, f64)> {
        (0..pixels)
            .map(|p| {
                let c = ((p as f64 + 0.5) * g as f64 / pixels as f64 - 0.5).clamp(0.0, (g - 1) as f64);
                let lo = c.floor() as usize;
                (lo, (lo + 1).min(g - 1), c - lo as f64)
            })
            .collect()
    };
    let (xs, ys) = (taps(width), taps(height));
    // horizontal pass per grid row, then vertical per pixel row
    let rows: Vec<Vec<f64>> = (0..g)
        .map(|r| {
            let row = &heatmap[r * g..(r + 1) * g];
            xs.iter().map(|&(a, b, f)| row[a] * (1.0 - f) + row[b] * f).collect()
        })
        .collect();
    let mut best = (f64::NEG_INFINITY, 0, 0);
    for (y, &(a, b, f)) in ys.iter().enumerate() {
        for x in 0..width {
            let v = rows[a][x] * (1.0 - f) + rows[b][x] * f;
            if v > best.0 {
                best = (v, x, y);
            }
        }
    }
    Ok((best.1 as f64 + 0.5, best.2 as f64 + 0.5))
}

/// Heatmaps for `frames` of `clip`, with all bank words as text tokens and
/// the words of `class_id` as the query.
pub fn class_heatmaps(
    clip: &ClipFeatures,
    frames: &[usize],
    class_id: usize,
    bank: &LabelBank,
    params: &ModelParams,
    attn: &AttentionConfig,
) -> Result<Vec<Vec<f64>>> {
    let (words, ranges) = bank.word_matrix();
    let range = ranges
        .get(class_id)
        .ok_or_else(|| Error::dims(format!("class {class_id} not in bank")))?;
    let query: Vec<usize> = range.clone().collect();
    let out = local_forward_tokens(&clip.grid_tokens(frames), &words, params, attn)?;
    rollout_heatmap(&out.trace, &query, attn.residual_weight, clip.cells)
}

/// Full spatio-temporal prediction for one video.
///
/// Within each clip, the frames assigned to one class are grounded together;
/// background frames carry a zero heatmap and an empty mask.
pub fn st_ground(
    video: &VideoInput,
    bank: &LabelBank,
    params: &ModelParams,
    attn: &AttentionConfig,
    cfg: &InferConfig,
) -> Result<SpatioTemporalPrediction> {
    let labels = temporal_classify(video, bank, params, cfg)?;
    st_ground_with_labels(video, &labels, bank, params, attn, cfg)
}

/// As [`st_ground`] but with per-frame `(label, score)` supplied, e.g. from
/// transcript alignment.
pub fn st_ground_with_labels(
    video: &VideoInput,
    labels: &[(Label, f64)],
    bank: &LabelBank,
    params: &ModelParams,
    attn: &AttentionConfig,
    cfg: &InferConfig,
) -> Result<SpatioTemporalPrediction> {
    cfg.validate()?;
    if labels.len() != video.frames() {
        return Err(Error::dims(format!("{} labels for {} frames", labels.len(), video.frames())));
    }
    let (w, h) = (video.width.round() as usize, video.height.round() as usize);
    let mut frames = Vec::with_capacity(labels.len());
    let mut offset = 0;
    for clip in &video.clips {
        let u = clip.frames();
        let local = &labels[offset..offset + u];
        let mut maps: Vec<Option<Vec<f64>>> = vec![None; u];
        let mut classes: Vec<usize> = local.iter().filter_map(|l| l.0).collect();
        classes.sort_unstable();
        classes.dedup();
        for c in classes {
            let idx: Vec<usize> = (0..u).filter(|&i| local[i].0 == Some(c)).collect();
            let hm = class_heatmaps(clip, &idx, c, bank, params, attn)?;
            for (i, m) in idx.into_iter().zip(hm) {
                maps[i] = Some(m);
            }
        }
        for (i, m) in maps.into_iter().enumerate() {
            let (label, score) = local[i];
            let heatmap = m.unwrap_or_else(|| vec![0.0; clip.cells]);
            let mask = match label {
                Some(_) => heatmap.iter().map(|&x| x >= cfg.tau_spatial).collect(),
                None => vec![false; clip.cells],
            };
            frames.push(FramePrediction {
                video_id: video.video_id.clone(),
                frame_index: offset + i,
                label,
                score,
                argmax_point: argmax_point(&heatmap, w, h)?,
                heatmap,
                mask,
            });
        }
        offset += u;
    }
    let segments = derive_segments(&frames);
    Ok(SpatioTemporalPrediction {
        video_id: video.video_id.clone(),
        frames,
        segments,
    })
}

/// `frames × slots` similarity for an ordered transcript; background slots
/// score `background_score`.
pub fn transcript_similarity(
    video: &VideoInput,
    transcript: &[Label],
    bank: &LabelBank,
    params: &ModelParams,
    cfg: &InferConfig,
) -> Result<Matrix> {
    let mut sim = Matrix::zeros(video.frames(), transcript.len());
    let mut offset = 0;
    for clip in &video.clips {
        let s = class_similarity(&clip.frame_global, bank, params)?;
        for u in 0..clip.frames() {
            for (j, l) in transcript.iter().enumerate() {
                let v = match *l {
                    Some(c) if c < bank.classes.len() => s.get(u, c),
                    Some(c) => return Err(Error::dims(format!("transcript class {c} not in bank"))),
                    None => cfg.background_score,
                };
                sim.set(offset + u, j, v);
            }
        }
        offset += clip.frames();
    }
    Ok(sim)
}

/// Monotone assignment of frames to transcript slots maximizing total
/// similarity, every slot used at least once. Columns of background slots
/// are replaced by `background_score`. Ties go to the earliest transition.
pub fn align_transcript(sim: &Matrix, slots: &[Label], cfg: &InferConfig) -> Result<Vec<usize>> {
    let (f, s) = sim.shape();
    if s == 0 || slots.len() != s {
        return Err(Error::dims(format!("{} slot labels for {s} similarity columns", slots.len())));
    }
    if f < s {
        return Err(Error::InfeasibleAlignment { frames: f, slots: s });
    }
    let score = |i: usize, j: usize| match slots[j] {
        Some(_) => sim.get(i, j),
        None => cfg.background_score,
    };
    // best[i][j]: optimum over frames i.. with frame i in slot j, finishing in the last slot
    let mut best = vec![vec![f64::NEG_INFINITY; s]; f];
    best[f - 1][s - 1] = score(f - 1, s - 1);
    for i in (0..f - 1).rev() {
        for j in 0..s {
            let stay = best[i + 1][j];
            let advance = if j + 1 < s { best[i + 1][j + 1] } else { f64::NEG_INFINITY };
            let next = stay.max(advance);
            if next > f64::NEG_INFINITY {
                best[i][j] = score(i, j) + next;
            }
        }
    }
    let mut out = Vec::with_capacity(f);
    let mut j = 0;
    out.push(0);
    for i in 1..f {
        if j + 1 < s && best[i][j + 1] >= best[i][j] {
            j += 1;
        }
        out.push(j);
    }
    Ok(out)
}

/// Sum of aligned scores, with background slots at `background_score`.
pub fn alignment_score(sim: &Matrix, slots: &[Label], assignment: &[usize], cfg: &InferConfig) -> f64 {
    assignment
        .iter()
        .enumerate()
        .map(|(i, &j)| match slots[j] {
            Some(_) => sim.get(i, j),
            None => cfg.background_score,
        })
        .sum()
}
