//! Grounding metrics: pointing game, spatial and video mAP, the combined
//! IoU + pointing-game score and temporal IoD / Jaccard.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::datamodel::{box_contains, grid_side, BBox, FramePrediction, SpatioTemporalPrediction, VideoGt};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Pg,
    Smap,
    Vmap,
    Ioupg,
    Temporal,
}

impl Metric {
    pub const ALL: [Metric; 5] = [Metric::Pg, Metric::Smap, Metric::Vmap, Metric::Ioupg, Metric::Temporal];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Pg => "pg",
            Metric::Smap => "smap",
            Metric::Vmap => "vmap",
            Metric::Ioupg => "ioupg",
            Metric::Temporal => "temporal",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub iou: f64,
    pub vmap_thresholds: Vec<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iou: 0.3,
            vmap_thresholds: vec![0.1, 0.2, 0.3, 0.4, 0.5],
        }
    }
}

/// Grid cells whose centers lie in the closed box.
pub fn rasterize_box(b: &BBox, width: f64, height: f64, cells: usize) -> Result<Vec<bool>> {
    let g = grid_side(cells).ok_or_else(|| Error::dims(format!("{cells} cells is not a square grid")))?;
    let gf = g as f64;
    Ok((0..cells)
        .map(|i| {
            let (r, c) = ((i / g) as f64, (i % g) as f64);
            box_contains(b, (c + 0.5) * width / gf, (r + 0.5) * height / gf)
        })
        .collect())
}

pub fn mask_iou(a: &[bool], b: &[bool]) -> f64 {
    let inter = a.iter().zip(b).filter(|(x, y)| **x && **y).count();
    let union = a.iter().zip(b).filter(|(x, y)| **x || **y).count();
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// All-point interpolated AP: `Σ (r_i − r_{i−1}) · max_{j ≥ i} p_j` over
/// the ranked hits `tp`.
pub fn average_precision(tp: &[bool], positives: usize) -> f64 {
    if positives == 0 {
        return 0.0;
    }
    let mut prec = Vec::with_capacity(tp.len());
    let mut rec = Vec::with_capacity(tp.len());
    let mut hits = 0usize;
    for (i, &t) in tp.iter().enumerate() {
        hits += t as usize;
        prec.push(hits as f64 / (i + 1) as f64);
        rec.push(hits as f64 / positives as f64);
    }
    for i in (0..prec.len().saturating_sub(1)).rev() {
        prec[i] = prec[i].max(prec[i + 1]);
    }
    let mut ap = 0.0;
    let mut last_r = 0.0;
    for i in 0..tp.len() {
        if rec[i] > last_r {
            ap += (rec[i] - last_r) * prec[i];
            last_r = rec[i];
        }
    }
    ap
}

type FrameKey<'a> = (&'a str, usize);

fn pred_index(preds: &[FramePrediction]) -> HashMap<FrameKey<'_>, &FramePrediction> {
    preds.iter().map(|p| ((p.video_id.as_str(), p.frame_index), p)).collect()
}

fn gt_frames(gts: &[VideoGt]) -> Vec<(&VideoGt, usize, usize, BBox)> {
    let mut out = Vec::new();
    for g in gts {
        for (f, c, b) in g.frame_boxes() {
            out.push((g, f, c, b));
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointingResult {
    pub hits: usize,
    pub misses: usize,
    pub accuracy: f64,
}

/// Hit when the argmax point of the frame lies in its GT box; a GT frame
/// without a prediction is a miss.
pub fn pointing_game(preds: &[FramePrediction], gts: &[VideoGt]) -> Result<PointingResult> {
    let idx = pred_index(preds);
    let (mut hits, mut misses) = (0, 0);
    for (g, f, _, b) in gt_frames(gts) {
        match idx.get(&(g.video_id.as_str(), f)) {
            Some(p) if box_contains(&b, p.argmax_point.0, p.argmax_point.1) => hits += 1,
            _ => misses += 1,
        }
    }
    if hits + misses == 0 {
        return Err(Error::NoSamples);
    }
    Ok(PointingResult {
        hits,
        misses,
        accuracy: hits as f64 / (hits + misses) as f64,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapResult {
    pub map: f64,
    pub per_class: BTreeMap<usize, f64>,
}

fn mean_over(per_class: &BTreeMap<usize, f64>) -> Result<f64> {
    if per_class.is_empty() {
        return Err(Error::NoSamples);
    }
    Ok(per_class.values().sum::<f64>() / per_class.len() as f64)
}

/// Frame-level detections of class `c` ranked by score; correct when the
/// mask overlaps the rasterized GT box of class `c` with IoU above `iou_thr`.
pub fn spatial_map(preds: &[FramePrediction], gts: &[VideoGt], iou_thr: f64) -> Result<MapResult> {
    let mut gt_at: HashMap<(FrameKey<'_>, usize), (BBox, f64, f64)> = HashMap::new();
    let mut positives: BTreeMap<usize, usize> = BTreeMap::new();
    for (g, f, c, b) in gt_frames(gts) {
        gt_at.insert(((g.video_id.as_str(), f), c), (b, g.width, g.height));
        *positives.entry(c).or_default() += 1;
    }
    let mut per_class = BTreeMap::new();
    for (&c, &npos) in &positives {
        let mut dets: Vec<&FramePrediction> = preds.iter().filter(|p| p.label == Some(c)).collect();
        dets.sort_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then_with(|| (&a.video_id, a.frame_index).cmp(&(&b.video_id, b.frame_index)))
        });
        let mut used = BTreeSet::new();
        let mut tp = Vec::with_capacity(dets.len());
        for p in dets {
            let key = (p.video_id.as_str(), p.frame_index);
            let hit = match gt_at.get(&(key, c)) {
                Some((b, w, h)) if !used.contains(&key) => {
                    mask_iou(&p.mask, &rasterize_box(b, *w, *h, p.mask.len())?) > iou_thr
                }
                _ => false,
            };
            if hit {
                used.insert(key);
            }
            tp.push(hit);
        }
        per_class.insert(c, average_precision(&tp, npos));
    }
    Ok(MapResult {
        map: mean_over(&per_class)?,
        per_class,
    })
}

/// Voxel set of a tube: `(frame, cell)` pairs.
type Tube = BTreeSet<(usize, usize)>;

fn tube_iou(a: &Tube, b: &Tube) -> f64 {
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

struct Tubes<'a> {
    /// `(video, class, confidence, start, tube)`
    dets: Vec<(&'a str, usize, f64, usize, Tube)>,
    /// `(video, class, tube)`
    gts: Vec<(&'a str, usize, Tube)>,
}

fn build_tubes<'a>(preds: &'a [SpatioTemporalPrediction], gts: &'a [VideoGt]) -> Result<Tubes<'a>> {
    let mut dets = Vec::new();
    for p in preds {
        let by_frame: HashMap<usize, &FramePrediction> = p.frames.iter().map(|f| (f.frame_index, f)).collect();
        for s in &p.segments {
            let mut tube = Tube::new();
            for f in s.start..s.end {
                if let Some(fp) = by_frame.get(&f) {
                    tube.extend(fp.mask.iter().enumerate().filter(|(_, m)| **m).map(|(i, _)| (f, i)));
                }
            }
            dets.push((p.video_id.as_str(), s.class_id, s.confidence, s.start, tube));
        }
    }
    // grid size per video comes from its predictions
    let cells: HashMap<&str, usize> = preds
        .iter()
        .filter_map(|p| p.frames.first().map(|f| (p.video_id.as_str(), f.mask.len())))
        .collect();
    let mut gt_tubes = Vec::new();
    for g in gts {
        let n = cells.get(g.video_id.as_str()).copied().unwrap_or(0);
        for s in &g.segments {
            let mut tube = Tube::new();
            if n > 0 {
                for (i, b) in s.boxes.iter().enumerate() {
                    let r = rasterize_box(b, g.width, g.height, n)?;
                    tube.extend(r.iter().enumerate().filter(|(_, m)| **m).map(|(c, _)| (s.start_frame + i, c)));
                }
            }
            gt_tubes.push((g.video_id.as_str(), s.class_id, tube));
        }
    }
    Ok(Tubes { dets, gts: gt_tubes })
}

/// Tube detections matched greedily in confidence order: each takes the
/// unmatched GT tube of its video and class with the highest voxel IoU, and
/// is a true positive when that IoU reaches the threshold.
pub fn video_map(
    preds: &[SpatioTemporalPrediction],
    gts: &[VideoGt],
    thresholds: &[f64],
) -> Result<Vec<(f64, MapResult)>> {
    let tubes = build_tubes(preds, gts)?;
    let classes: BTreeSet<usize> = tubes.gts.iter().map(|g| g.1).collect();
    if classes.is_empty() {
        return Err(Error::NoSamples);
    }
    let mut out = Vec::with_capacity(thresholds.len());
    for &thr in thresholds {
        let mut per_class = BTreeMap::new();
        for &c in &classes {
            let gt: Vec<usize> = (0..tubes.gts.len()).filter(|&i| tubes.gts[i].1 == c).collect();
            let mut dets: Vec<usize> = (0..tubes.dets.len()).filter(|&i| tubes.dets[i].1 == c).collect();
            dets.sort_by(|&a, &b| {
                let (da, db) = (&tubes.dets[a], &tubes.dets[b]);
                db.2.total_cmp(&da.2).then_with(|| (da.0, da.3).cmp(&(db.0, db.3)))
            });
            let mut matched = vec![false; tubes.gts.len()];
            let mut tp = Vec::with_capacity(dets.len());
            for d in dets {
                let det = &tubes.dets[d];
                let mut best: Option<(usize, f64)> = None;
                for &g in &gt {
                    if matched[g] || tubes.gts[g].0 != det.0 {
                        continue;
                    }
                    let iou = tube_iou(&det.4, &tubes.gts[g].2);
                    if best.is_none_or(|(_, b)| iou > b) {
                        best = Some((g, iou));
                    }
                }
                let hit = matches!(best, Some((_, iou)) if iou >= thr);
                if let (true, Some((g, _))) = (hit, best) {
                    matched[g] = true;
                }
                tp.push(hit);
            }
            per_class.insert(c, average_precision(&tp, gt.len()));
        }
        out.push((
            thr,
            MapResult {
                map: mean_over(&per_class)?,
                per_class,
            },
        ));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IouPgResult {
    pub score: f64,
    pub per_class: BTreeMap<usize, f64>,
}

/// Per class: frames predicted as the class with the point inside its GT
/// box, over the union of predicted and GT frames of the class; averaged
/// over classes present in the GT.
pub fn iou_pointing_game(preds: &[FramePrediction], gts: &[VideoGt]) -> Result<IouPgResult> {
    let mut gt_by_class: BTreeMap<usize, HashMap<FrameKey<'_>, BBox>> = BTreeMap::new();
    for (g, f, c, b) in gt_frames(gts) {
        gt_by_class.entry(c).or_default().insert((g.video_id.as_str(), f), b);
    }
    let mut per_class = BTreeMap::new();
    for (&c, gt) in &gt_by_class {
        let mut union = gt.len();
        let mut tp = 0;
        for p in preds.iter().filter(|p| p.label == Some(c)) {
            match gt.get(&(p.video_id.as_str(), p.frame_index)) {
                Some(b) => tp += box_contains(b, p.argmax_point.0, p.argmax_point.1) as usize,
                None => union += 1,
            }
        }
        per_class.insert(c, tp as f64 / union as f64);
    }
    Ok(IouPgResult {
        score: mean_over(&per_class)?,
        per_class,
    })
}

/// `(IoD, Jaccard)` of half-open intervals `g` (truth) and `d` (detection).
pub fn interval_iod_jaccard(g: (usize, usize), d: (usize, usize)) -> (f64, f64) {
    let inter = g.1.min(d.1).saturating_sub(g.0.max(d.0));
    let dl = d.1.saturating_sub(d.0);
    let union = g.1.saturating_sub(g.0) + dl - inter;
    let iod = if dl == 0 { 0.0 } else { inter as f64 / dl as f64 };
    let jac = if union == 0 { 0.0 } else { inter as f64 / union as f64 };
    (iod, jac)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemporalInstance {
    pub video_id: String,
    pub class_id: usize,
    pub start: usize,
    pub end: usize,
    pub iod: f64,
    pub jaccard: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemporalResult {
    pub mean_iod: f64,
    pub mean_jaccard: f64,
    pub instances: Vec<TemporalInstance>,
}

/// Each GT segment is matched to the same-video, same-class predicted
/// segment with the largest overlap (earliest on ties); unmatched scores 0.
pub fn iod_jaccard(preds: &[SpatioTemporalPrediction], gts: &[VideoGt]) -> Result<TemporalResult> {
    let mut instances = Vec::new();
    for g in gts {
        let segs = preds.iter().find(|p| p.video_id == g.video_id).map(|p| p.segments.as_slice()).unwrap_or(&[]);
        for s in &g.segments {
            let gi = (s.start_frame, s.end_frame);
            let mut best: Option<(usize, (usize, usize))> = None;
            for d in segs.iter().filter(|d| d.class_id == s.class_id) {
                let ov = gi.1.min(d.end).saturating_sub(gi.0.max(d.start));
                if ov > 0 && best.is_none_or(|(b, _)| ov > b) {
                    best = Some((ov, (d.start, d.end)));
                }
            }
            let (iod, jaccard) = best.map_or((0.0, 0.0), |(_, d)| interval_iod_jaccard(gi, d));
            instances.push(TemporalInstance {
                video_id: g.video_id.clone(),
                class_id: s.class_id,
                start: s.start_frame,
                end: s.end_frame,
                iod,
                jaccard,
            });
        }
    }
    if instances.is_empty() {
        return Err(Error::NoSamples);
    }
    let n = instances.len() as f64;
    Ok(TemporalResult {
        mean_iod: instances.iter().map(|i| i.iod).sum::<f64>() / n,
        mean_jaccard: instances.iter().map(|i| i.jaccard).sum::<f64>() / n,
        instances,
    })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metrics: BTreeMap<String, f64>,
    pub per_class: BTreeMap<String, BTreeMap<String, f64>>,
    pub counts: BTreeMap<String, usize>,
    pub config: serde_json::Value,
}

impl EvalReport {
    pub fn table(&self) -> String {
        let mut s = String::from("metric                 value\n");
        for (k, v) in &self.metrics {
            s.push_str(&format!("{k:<22} {v:.4}\n"));
        }
        for (k, v) in &self.counts {
            s.push_str(&format!("{k:<22} {v}\n"));
        }
        s
    }
}

fn class_map(m: &BTreeMap<usize, f64>) -> BTreeMap<String, f64> {
    m.iter().map(|(c, v)| (c.to_string(), *v)).collect()
}

/// Runs the requested metrics over flat frame predictions.
pub fn evaluate(
    preds: &[FramePrediction],
    gts: &[VideoGt],
    metrics: &[Metric],
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    let mut r = EvalReport {
        config: serde_json::to_value(cfg).expect("plain config"),
        ..Default::default()
    };
    let st = SpatioTemporalPrediction::from_frames(preds.to_vec());
    for m in metrics {
        match m {
            Metric::Pg => {
                let pg = pointing_game(preds, gts)?;
                r.metrics.insert("pointing_game".into(), pg.accuracy);
                r.counts.insert("pg_hits".into(), pg.hits);
                r.counts.insert("pg_misses".into(), pg.misses);
            }
            Metric::Smap => {
                let s = spatial_map(preds, gts, cfg.iou)?;
                r.metrics.insert(format!("spatial_map@{}", cfg.iou), s.map);
                r.per_class.insert("spatial_map".into(), class_map(&s.per_class));
            }
            Metric::Vmap => {
                for (thr, res) in video_map(&st, gts, &cfg.vmap_thresholds)? {
                    r.metrics.insert(format!("video_map@{thr}"), res.map);
                    r.per_class.insert(format!("video_map@{thr}"), class_map(&res.per_class));
                }
            }
            Metric::Ioupg => {
                let s = iou_pointing_game(preds, gts)?;
                r.metrics.insert("iou_pointing_game".into(), s.score);
                r.per_class.insert("iou_pointing_game".into(), class_map(&s.per_class));
            }
            Metric::Temporal => {
                let t = iod_jaccard(&st, gts)?;
                r.metrics.insert("iod".into(), t.mean_iod);
                r.metrics.insert("jaccard".into(), t.mean_jaccard);
                r.counts.insert("temporal_instances".into(), t.instances.len());
            }
        }
    }
    Ok(r)
}
