//! Benchmark-construction arithmetic: keypoint aggregation and majority
//! voting, point-union boxes, refined boundaries, widespread analysis, QC
//! sample sizes and agreement, and single-action clip windows.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::datamodel::{box_area, BBox, VideoGt};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotatorEntry {
    #[serde(default)]
    pub point: Option<[f64; 2]>,
    #[serde(default)]
    pub cant_solve: bool,
    #[serde(default)]
    pub corrupt: bool,
}

/// Raw labels of one frame from up to five annotators.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeypointRecord {
    pub video_id: String,
    pub frame_index: usize,
    pub class_id: usize,
    pub width: f64,
    pub height: f64,
    pub annotators: Vec<AnnotatorEntry>,
}

impl KeypointRecord {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.annotators.len() > 5 {
            return Err(format!("{} annotator entries, at most 5 allowed", self.annotators.len()));
        }
        if !(self.width > 0.0 && self.height > 0.0) {
            return Err("frame geometry must be positive".into());
        }
        for a in &self.annotators {
            if let Some([x, y]) = a.point {
                if a.cant_solve {
                    return Err("entry has both a point and cant_solve".into());
                }
                if !(0.0..=self.width).contains(&x) || !(0.0..=self.height).contains(&y) {
                    return Err(format!("point ({x}, {y}) outside the {}x{} frame", self.width, self.height));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub majority_k: usize,
    /// Box margin per side as a fraction of W and of H.
    pub bbox_margin_frac: f64,
    /// Widespread area threshold in px².
    pub widespread_area: f64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            majority_k: 3,
            bbox_margin_frac: 0.05,
            widespread_area: 60_000.0,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=5).contains(&self.majority_k) {
            return Err(Error::BadParams("majority_k must lie in 1..=5".into()));
        }
        if !(self.bbox_margin_frac >= 0.0) || !(self.widespread_area >= 0.0) {
            return Err(Error::BadParams("margin and area must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregatedFrame {
    pub video_id: String,
    pub frame_index: usize,
    pub class_id: usize,
    pub present: bool,
    pub points: Vec<[f64; 2]>,
    pub centroid: Option<[f64; 2]>,
}

/// Majority vote over non-corrupt entries; the centroid is the mean point.
pub fn aggregate_frame(rec: &KeypointRecord, cfg: &BenchConfig) -> AggregatedFrame {
    let points: Vec<[f64; 2]> = rec
        .annotators
        .iter()
        .filter(|a| !a.corrupt)
        .filter_map(|a| a.point)
        .collect();
    let present = points.len() >= cfg.majority_k;
    let centroid = present.then(|| {
        let n = points.len() as f64;
        [
            points.iter().map(|p| p[0]).sum::<f64>() / n,
            points.iter().map(|p| p[1]).sum::<f64>() / n,
        ]
    });
    AggregatedFrame {
        video_id: rec.video_id.clone(),
        frame_index: rec.frame_index,
        class_id: rec.class_id,
        present,
        points,
        centroid,
    }
}

/// Hull of the points grown by the margin on each side, clamped to the frame.
pub fn points_to_bbox(points: &[[f64; 2]], width: f64, height: f64, cfg: &BenchConfig) -> Result<BBox> {
    if points.is_empty() {
        return Err(Error::NoPoints);
    }
    let (mx, my) = (cfg.bbox_margin_frac * width, cfg.bbox_margin_frac * height);
    let x0 = points.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
    let y0 = points.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min);
    let x1 = points.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max);
    let y1 = points.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max);
    Ok([
        (x0 - mx).max(0.0),
        (y0 - my).max(0.0),
        (x1 + mx).min(width),
        (y1 + my).min(height),
    ])
}

/// Maximal runs of present frames as half-open intervals.
pub fn refine_boundaries(present: &[bool]) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = Vec::new();
    for (i, &p) in present.iter().enumerate() {
        if !p {
            continue;
        }
        match out.last_mut() {
            Some(s) if s.1 == i => s.1 = i + 1,
            _ => out.push((i, i + 1)),
        }
    }
    out
}

/// Share of boxes whose area exceeds the widespread threshold.
pub fn widespread_fraction(boxes: &[BBox], cfg: &BenchConfig) -> Result<f64> {
    if boxes.is_empty() {
        return Err(Error::NoSamples);
    }
    let wide = boxes.iter().filter(|b| box_area(b) > cfg.widespread_area).count();
    Ok(wide as f64 / boxes.len() as f64)
}

/// Sample size for estimating a proportion `p` at confidence `alpha` and
/// margin `eps`, with the finite population correction for `n` items.
pub fn qc_sample_size(alpha: f64, eps: f64, p: f64, n: u64) -> Result<u64> {
    if !(alpha > 0.0 && alpha < 1.0) || !(eps > 0.0 && eps < 1.0) || !(0.0..=1.0).contains(&p) || n < 1 {
        return Err(Error::BadParams(
            "need 0 < alpha < 1, 0 < eps < 1, 0 <= p <= 1 and N >= 1".into(),
        ));
    }
    let z = Normal::standard().inverse_cdf(1.0 - (1.0 - alpha) / 2.0);
    let n0 = z * z / (eps * eps) * p * (1.0 - p);
    let n = n as f64;
    Ok((n0 * n / (n0 + n - 1.0)).floor() as u64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Agreement {
    pub fp_rate: f64,
    pub fn_rate: f64,
    pub disagree_rate: f64,
}

/// Aggregated labels checked against specialist labels on the same frames.
pub fn qc_agreement(specialist: &[bool], aggregated: &[bool]) -> Result<Agreement> {
    if specialist.len() != aggregated.len() {
        return Err(Error::dims(format!(
            "{} specialist vs {} aggregated frames",
            specialist.len(),
            aggregated.len()
        )));
    }
    if specialist.is_empty() {
        return Err(Error::NoSamples);
    }
    let n = specialist.len() as f64;
    let fp = specialist.iter().zip(aggregated).filter(|(s, a)| !**s && **a).count() as f64;
    let fneg = specialist.iter().zip(aggregated).filter(|(s, a)| **s && !**a).count() as f64;
    Ok(Agreement {
        fp_rate: fp / n,
        fn_rate: fneg / n,
        disagree_rate: (fp + fneg) / n,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SingleActionClip {
    pub video_id: String,
    pub class_id: usize,
    pub start: usize,
    pub end: usize,
    pub action_start: usize,
    pub action_end: usize,
}

impl SingleActionClip {
    pub fn action_fraction(&self) -> f64 {
        (self.action_end - self.action_start) as f64 / (self.end - self.start) as f64
    }
}

/// One clip per segment `[a, b)`: `[a − (b − a), b + (b − a))` clamped to the video.
pub fn build_single_action_clips(gt: &VideoGt) -> Vec<SingleActionClip> {
    gt.segments
        .iter()
        .map(|s| {
            let len = s.end_frame - s.start_frame;
            SingleActionClip {
                video_id: gt.video_id.clone(),
                class_id: s.class_id,
                start: s.start_frame.saturating_sub(len),
                end: (s.end_frame + len).min(gt.frames),
                action_start: s.start_frame,
                action_end: s.end_frame,
            }
        })
        .collect()
}
