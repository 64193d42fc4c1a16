//! Clip features, label bank, ground truth and prediction records, their file
//! formats, and the synthetic generator.

mod io;
mod synth;

pub use io::{
    load_bank, load_clip_features, load_clip_dir, load_gt, load_predictions, read_jsonl,
    save_bank, save_clip_features, save_gt, save_predictions, write_json, write_jsonl,
    FORMAT_VERSION,
};
pub use synth::{synth_generate, SynthConfig, SynthData};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::Matrix;

/// Background label as written in files.
pub const BACKGROUND: i64 = -1;

/// In-memory frame label: `None` is background.
pub type Label = Option<usize>;

pub fn label_to_file(l: Label) -> i64 {
    l.map_or(BACKGROUND, |c| c as i64)
}

pub fn label_from_file(v: i64) -> std::result::Result<Label, String> {
    match v {
        BACKGROUND => Ok(None),
        c if c >= 0 => Ok(Some(c as usize)),
        c => Err(format!("label {c} is neither a class id nor {BACKGROUND}")),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Word {
    pub text: String,
    pub vec: Vec<f64>,
}

/// Token embeddings of one clip: `U` frames of `N` grid cells, one global
/// token per frame, `K` words and a sentence token.
#[derive(Clone, Debug, PartialEq)]
pub struct ClipFeatures {
    pub video_id: String,
    pub clip_id: String,
    pub dim: usize,
    pub cells: usize,
    /// `U·N × d`, frame-major then row-major over the grid.
    pub grid: Matrix,
    /// `U × d`.
    pub frame_global: Matrix,
    pub words: Vec<Word>,
    pub sentence: Vec<f64>,
    pub fps: f64,
    pub start_s: f64,
}

impl ClipFeatures {
    pub fn frames(&self) -> usize {
        self.frame_global.rows()
    }

    pub fn grid_side(&self) -> usize {
        grid_side(self.cells).unwrap_or(0)
    }

    /// Word vectors as a `K × d` matrix.
    pub fn word_matrix(&self) -> Matrix {
        let rows: Vec<&[f64]> = self.words.iter().map(|w| w.vec.as_slice()).collect();
        Matrix::from_rows(&rows).expect("validated clip")
    }

    pub fn sentence_matrix(&self) -> Matrix {
        Matrix::from_rows(&[&self.sentence]).expect("validated clip")
    }

    /// Grid tokens of the given frames, `len·N × d`.
    pub fn grid_tokens(&self, frames: &[usize]) -> Matrix {
        let idx: Vec<usize> = frames
            .iter()
            .flat_map(|&u| u * self.cells..(u + 1) * self.cells)
            .collect();
        self.grid.select_rows(&idx)
    }

    /// Checks every type invariant; the message names the first violation.
    pub fn validate(&self) -> std::result::Result<(), String> {
        let u = self.frame_global.rows();
        if u == 0 {
            return Err("clip has no frames".into());
        }
        if self.words.is_empty() {
            return Err("clip has no words".into());
        }
        if grid_side(self.cells).is_none() {
            return Err(format!("cell count {} is not a perfect square", self.cells));
        }
        if self.grid.rows() != u * self.cells {
            return Err(format!(
                "grid has {} vectors, expected U×N = {}",
                self.grid.rows(),
                u * self.cells
            ));
        }
        let d = self.dim;
        if d == 0 {
            return Err("dimension is zero".into());
        }
        if self.grid.cols() != d || self.frame_global.cols() != d {
            return Err(format!("grid or frame_global vectors are not {d}-dimensional"));
        }
        if let Some(w) = self.words.iter().find(|w| w.vec.len() != d) {
            return Err(format!("word `{}` is not {d}-dimensional", w.text));
        }
        if self.sentence.len() != d {
            return Err(format!("sentence is not {d}-dimensional"));
        }
        if !(self.fps > 0.0) || !(self.start_s >= 0.0) {
            return Err("fps must be positive and start_s non-negative".into());
        }
        Ok(())
    }
}

/// Side length of a square grid of `n` cells.
pub fn grid_side(n: usize) -> Option<usize> {
    let s = (n as f64).sqrt().round() as usize;
    (s > 0 && s * s == n).then_some(s)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BankClass {
    pub class_id: usize,
    pub name: String,
    pub words: Vec<Vec<f64>>,
    pub sentence: Vec<f64>,
}

/// The pool of action descriptions used at inference.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelBank {
    pub dim: usize,
    pub classes: Vec<BankClass>,
}

impl LabelBank {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.classes.is_empty() {
            return Err("bank has no classes".into());
        }
        let mut names = std::collections::BTreeSet::new();
        for (i, c) in self.classes.iter().enumerate() {
            if c.class_id != i {
                return Err(format!("class ids must be dense 0..C-1, found {} at {i}", c.class_id));
            }
            if !names.insert(c.name.as_str()) {
                return Err(format!("duplicate class name `{}`", c.name));
            }
            if c.words.is_empty() {
                return Err(format!("class `{}` has no words", c.name));
            }
            if c.sentence.len() != self.dim || c.words.iter().any(|w| w.len() != self.dim) {
                return Err(format!("class `{}` has vectors that are not {}-dimensional", c.name, self.dim));
            }
        }
        Ok(())
    }

    /// All bank words stacked in class order, with the row range of each class.
    pub fn word_matrix(&self) -> (Matrix, Vec<std::ops::Range<usize>>) {
        let mut rows = Vec::new();
        let mut ranges = Vec::with_capacity(self.classes.len());
        for c in &self.classes {
            let start = rows.len();
            rows.extend(c.words.iter().map(Vec::as_slice));
            ranges.push(start..rows.len());
        }
        (Matrix::from_rows(&rows).expect("validated bank"), ranges)
    }

    pub fn sentence_matrix(&self) -> Matrix {
        let rows: Vec<&[f64]> = self.classes.iter().map(|c| c.sentence.as_slice()).collect();
        Matrix::from_rows(&rows).expect("validated bank")
    }
}

/// Axis-aligned pixel box `[x0, y0, x1, y1]`.
pub type BBox = [f64; 4];

pub fn box_contains(b: &BBox, x: f64, y: f64) -> bool {
    x >= b[0] && x <= b[2] && y >= b[1] && y <= b[3]
}

pub fn box_area(b: &BBox) -> f64 {
    (b[2] - b[0]).max(0.0) * (b[3] - b[1]).max(0.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GtSegment {
    pub class_id: usize,
    pub start_frame: usize,
    /// Exclusive.
    pub end_frame: usize,
    /// One box per frame of the segment.
    pub boxes: Vec<BBox>,
    /// Grid cells that carry the action; empty for annotated (non-synthetic) data.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub cells: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VideoGt {
    pub video_id: String,
    pub width: f64,
    pub height: f64,
    pub frames: usize,
    pub segments: Vec<GtSegment>,
    pub ordered_transcript: Vec<Label>,
}

impl VideoGt {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if !(self.width > 0.0 && self.height > 0.0) {
            return Err("frame geometry must be positive".into());
        }
        for s in &self.segments {
            if s.start_frame >= s.end_frame || s.end_frame > self.frames {
                return Err(format!(
                    "segment [{}, {}) outside 0..{}",
                    s.start_frame, s.end_frame, self.frames
                ));
            }
            if s.boxes.len() != s.end_frame - s.start_frame {
                return Err(format!(
                    "segment [{}, {}) has {} boxes",
                    s.start_frame,
                    s.end_frame,
                    s.boxes.len()
                ));
            }
            for b in &s.boxes {
                if !(b[0] >= 0.0 && b[1] >= 0.0 && b[2] <= self.width && b[3] <= self.height)
                    || b[0] > b[2]
                    || b[1] > b[3]
                {
                    return Err(format!("box {b:?} outside the {}x{} frame", self.width, self.height));
                }
            }
        }
        Ok(())
    }

    /// Per-frame `(class, box)` for every annotated frame.
    pub fn frame_boxes(&self) -> Vec<(usize, usize, BBox)> {
        let mut out = Vec::new();
        for s in &self.segments {
            for (i, b) in s.boxes.iter().enumerate() {
                out.push((s.start_frame + i, s.class_id, *b));
            }
        }
        out.sort_by_key(|&(f, c, _)| (f, c));
        out
    }
}

/// Prediction for one frame of one video.
#[derive(Clone, Debug, PartialEq)]
pub struct FramePrediction {
    pub video_id: String,
    pub frame_index: usize,
    pub label: Label,
    /// Best class similarity of this frame; ranks detections.
    pub score: f64,
    pub heatmap: Vec<f64>,
    pub argmax_point: (f64, f64),
    pub mask: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredSegment {
    pub class_id: usize,
    pub start: usize,
    pub end: usize,
    pub confidence: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpatioTemporalPrediction {
    pub video_id: String,
    pub frames: Vec<FramePrediction>,
    pub segments: Vec<PredSegment>,
}

impl SpatioTemporalPrediction {
    /// Regroups flat frame records by video and derives segments: maximal
    /// runs of one class, confidence = mean frame score.
    pub fn from_frames(mut records: Vec<FramePrediction>) -> Vec<SpatioTemporalPrediction> {
        records.sort_by(|a, b| (&a.video_id, a.frame_index).cmp(&(&b.video_id, b.frame_index)));
        let mut out: Vec<SpatioTemporalPrediction> = Vec::new();
        for r in records {
            match out.last_mut() {
                Some(p) if p.video_id == r.video_id => p.frames.push(r),
                _ => out.push(SpatioTemporalPrediction {
                    video_id: r.video_id.clone(),
                    frames: vec![r],
                    segments: Vec::new(),
                }),
            }
        }
        for p in &mut out {
            p.segments = derive_segments(&p.frames);
        }
        out
    }
}

/// Maximal runs of one non-background label over consecutive frame indices.
pub fn derive_segments(frames: &[FramePrediction]) -> Vec<PredSegment> {
    let mut segs: Vec<PredSegment> = Vec::new();
    let mut sums: Vec<f64> = Vec::new();
    let mut prev: Option<(usize, Label)> = None;
    for f in frames {
        if let Some(c) = f.label {
            let extends = matches!(prev, Some((i, Some(pc))) if pc == c && i + 1 == f.frame_index);
            if extends {
                let s = segs.last_mut().unwrap();
                s.end = f.frame_index + 1;
                *sums.last_mut().unwrap() += f.score;
            } else {
                segs.push(PredSegment {
                    class_id: c,
                    start: f.frame_index,
                    end: f.frame_index + 1,
                    confidence: 0.0,
                });
                sums.push(f.score);
            }
        }
        prev = Some((f.frame_index, f.label));
    }
    for (s, sum) in segs.iter_mut().zip(sums) {
        s.confidence = sum / (s.end - s.start) as f64;
    }
    segs
}

pub(crate) fn schema(path: &std::path::Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Schema {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

pub(crate) fn ensure(cond: bool, path: &std::path::Path, line: usize, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(schema(path, line, msg()))
    }
}
