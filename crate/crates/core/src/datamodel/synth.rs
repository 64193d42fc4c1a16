//! Synthetic clips with planted ground truth.
//!
//! Every clip window holds one action: a block of `action_frames` frames whose
//! planted grid cells and frame-global tokens carry the class prototype. The
//! first word of each clip carries the class, the others are distractors.
//!
//! Optional structure on top of the plain prototype-plus-noise model:
//! a per-clip scene vector shared by frames, cells and words (instance
//! identity across modalities), and clutter, where background frames show the
//! objects that the distractor words name.

use serde::{Deserialize, Serialize};

use super::{
    grid_side, BBox, BankClass, ClipFeatures, GtSegment, Label, LabelBank, VideoGt, Word,
};
use crate::error::{Error, Result};
use crate::numcore::{l2_normalize, Matrix, Rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub classes: usize,
    pub videos: usize,
    pub frames_per_video: usize,
    /// Candidate frames per clip (U).
    pub frames_per_clip: usize,
    /// Planted action length inside each clip (T).
    pub action_frames: usize,
    /// Grid cells per frame (N), a perfect square.
    pub cells: usize,
    pub dim: usize,
    pub words_per_clip: usize,
    /// Prototype weight in planted tokens.
    pub signal: f64,
    /// Per-coordinate standard deviation of the additive noise.
    pub sigma: f64,
    pub planted_cells: usize,
    pub scene_frames: f64,
    pub scene_cells: f64,
    pub scene_words: f64,
    /// Weight of each distractor object in background frame globals; when
    /// positive the distractor words name those objects.
    pub clutter: f64,
    pub objects: usize,
    pub width: f64,
    pub height: f64,
    pub fps: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            classes: 4,
            videos: 50,
            frames_per_video: 80,
            frames_per_clip: 16,
            action_frames: 4,
            cells: 16,
            dim: 32,
            words_per_clip: 4,
            signal: 1.0,
            sigma: 0.1,
            planted_cells: 1,
            scene_frames: 0.0,
            scene_cells: 0.0,
            scene_words: 0.0,
            clutter: 0.0,
            objects: 16,
            width: 320.0,
            height: 240.0,
            fps: 1.0,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::BadParams(m));
        let counts = [
            ("classes", self.classes),
            ("videos", self.videos),
            ("frames_per_video", self.frames_per_video),
            ("frames_per_clip", self.frames_per_clip),
            ("action_frames", self.action_frames),
            ("cells", self.cells),
            ("dim", self.dim),
            ("words_per_clip", self.words_per_clip),
            ("planted_cells", self.planted_cells),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return bad(format!("{name} must be positive"));
        }
        if self.frames_per_video % self.frames_per_clip != 0 {
            return bad("frames_per_video must be a multiple of frames_per_clip".into());
        }
        if self.action_frames > self.frames_per_clip {
            return bad("action_frames exceeds frames_per_clip".into());
        }
        if grid_side(self.cells).is_none() {
            return bad(format!("cells = {} is not a perfect square", self.cells));
        }
        if self.planted_cells > self.cells {
            return bad("planted_cells exceeds cells".into());
        }
        if !(self.signal > 0.0) || !(self.sigma >= 0.0) {
            return bad("signal must be positive and sigma non-negative".into());
        }
        let weights = [self.scene_frames, self.scene_cells, self.scene_words, self.clutter];
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return bad("scene and clutter weights must be non-negative".into());
        }
        if self.clutter > 0.0 && self.objects < self.words_per_clip - 1 {
            return bad("objects must cover the distractor words".into());
        }
        if !(self.width > 0.0 && self.height > 0.0 && self.fps > 0.0) {
            return bad("width, height and fps must be positive".into());
        }
        Ok(())
    }

    pub fn clips_per_video(&self) -> usize {
        self.frames_per_video / self.frames_per_clip
    }
}

#[derive(Clone, Debug)]
pub struct SynthData {
    /// Ordered by video, then by position in the video.
    pub clips: Vec<ClipFeatures>,
    pub bank: LabelBank,
    pub gt: Vec<VideoGt>,
}

/// Values as they will read back from 32-bit storage.
fn quantize(v: Vec<f64>) -> Vec<f64> {
    v.into_iter().map(|x| x as f32 as f64).collect()
}

fn unit(rng: &mut Rng, d: usize) -> Vec<f64> {
    loop {
        if let Ok(v) = l2_normalize(&rng.normal_vec(d, 1.0)) {
            return v;
        }
    }
}

/// `normalize(structure + σ·n)`; a token without structure is pure noise.
fn token(structure: &[f64], sigma: f64, rng: &mut Rng) -> Vec<f64> {
    let n = rng.normal_vec(structure.len(), 1.0);
    let plain = structure.iter().all(|&x| x == 0.0);
    let v: Vec<f64> = if plain {
        n
    } else {
        structure.iter().zip(&n).map(|(s, e)| s + sigma * e).collect()
    };
    match l2_normalize(&v) {
        Ok(u) => quantize(u),
        Err(_) => quantize(unit(rng, structure.len())),
    }
}

fn weighted_sum(parts: &[(f64, &[f64])], d: usize) -> Vec<f64> {
    let mut out = vec![0.0; d];
    for (w, v) in parts {
        if *w != 0.0 {
            for (o, x) in out.iter_mut().zip(v.iter()) {
                *o += w * x;
            }
        }
    }
    out
}

fn cell_box(cell: usize, side: usize, w: f64, h: f64) -> BBox {
    let (r, c) = ((cell / side) as f64, (cell % side) as f64);
    let (cw, ch) = (w / side as f64, h / side as f64);
    [c * cw, r * ch, (c + 1.0) * cw, (r + 1.0) * ch]
}

pub fn synth_generate(cfg: &SynthConfig) -> Result<SynthData> {
    cfg.validate()?;
    let d = cfg.dim;
    let root = Rng::new(cfg.seed);
    let mut proto_rng = root.derive(1);
    let protos: Vec<Vec<f64>> = (0..cfg.classes).map(|_| unit(&mut proto_rng, d)).collect();
    let mut obj_rng = root.derive(2);
    let objects: Vec<Vec<f64>> = (0..cfg.objects).map(|_| unit(&mut obj_rng, d)).collect();

    let bank = LabelBank {
        dim: d,
        classes: protos
            .iter()
            .enumerate()
            .map(|(c, p)| BankClass {
                class_id: c,
                name: format!("action_{c}"),
                words: vec![quantize(p.clone())],
                sentence: quantize(p.clone()),
            })
            .collect(),
    };

    let side = grid_side(cfg.cells).expect("validated");
    let (u_len, t_len, n_cells) = (cfg.frames_per_clip, cfg.action_frames, cfg.cells);
    let mut clips = Vec::new();
    let mut gts = Vec::new();
    for v in 0..cfg.videos {
        let mut rng = root.derive(1000 + v as u64);
        let video_id = format!("vid{v:03}");
        let mut labels: Vec<Label> = vec![None; cfg.frames_per_video];
        let mut segments = Vec::new();
        for k in 0..cfg.clips_per_video() {
            let class = rng.below(cfg.classes);
            let offset = rng.below(u_len - t_len + 1);
            let mut cells = rng.sample_distinct(n_cells, cfg.planted_cells);
            cells.sort_unstable();
            let scene = unit(&mut rng, d);
            let picked = if cfg.objects >= cfg.words_per_clip - 1 {
                rng.sample_distinct(cfg.objects, cfg.words_per_clip - 1)
            } else {
                Vec::new()
            };
            let p = &protos[class];
            let zero = vec![0.0; d];
            let clutter: Vec<f64> = if cfg.clutter > 0.0 {
                let parts: Vec<(f64, &[f64])> =
                    picked.iter().map(|&j| (cfg.clutter, objects[j].as_slice())).collect();
                weighted_sum(&parts, d)
            } else {
                zero.clone()
            };
            let planted = |u: usize| (offset..offset + t_len).contains(&u);

            let mut fg = Vec::with_capacity(u_len * d);
            let mut grid = Vec::with_capacity(u_len * n_cells * d);
            for u in 0..u_len {
                let s = if planted(u) {
                    weighted_sum(&[(cfg.scene_frames, &scene), (cfg.signal, p)], d)
                } else {
                    weighted_sum(&[(cfg.scene_frames, &scene), (1.0, &clutter)], d)
                };
                fg.extend(token(&s, cfg.sigma, &mut rng));
                for n in 0..n_cells {
                    let s = if planted(u) && cells.binary_search(&n).is_ok() {
                        weighted_sum(&[(cfg.scene_cells, &scene), (cfg.signal, p)], d)
                    } else {
                        weighted_sum(&[(cfg.scene_cells, &scene)], d)
                    };
                    grid.extend(token(&s, cfg.sigma, &mut rng));
                }
            }

            let mut words = vec![Word {
                text: format!("action_{class}"),
                vec: token(&weighted_sum(&[(cfg.scene_words, &scene), (1.0, p)], d), cfg.sigma, &mut rng),
            }];
            for i in 0..cfg.words_per_clip - 1 {
                let (text, s) = if cfg.clutter > 0.0 {
                    let j = picked[i];
                    (
                        format!("object_{j}"),
                        weighted_sum(&[(cfg.scene_words, &scene), (1.0, &objects[j])], d),
                    )
                } else {
                    (format!("noise_{i}"), weighted_sum(&[(cfg.scene_words, &scene)], d))
                };
                words.push(Word {
                    text,
                    vec: token(&s, cfg.sigma, &mut rng),
                });
            }
            let mut mean = vec![0.0; d];
            for w in &words {
                for (m, x) in mean.iter_mut().zip(&w.vec) {
                    *m += x / words.len() as f64;
                }
            }
            let sentence = quantize(l2_normalize(&mean).unwrap_or_else(|_| words[0].vec.clone()));

            let base = k * u_len;
            for f in base + offset..base + offset + t_len {
                labels[f] = Some(class);
            }
            let bbox = cells.iter().fold([f64::MAX, f64::MAX, 0.0, 0.0], |acc, &c| {
                let b = cell_box(c, side, cfg.width, cfg.height);
                [acc[0].min(b[0]), acc[1].min(b[1]), acc[2].max(b[2]), acc[3].max(b[3])]
            });
            segments.push(GtSegment {
                class_id: class,
                start_frame: base + offset,
                end_frame: base + offset + t_len,
                boxes: vec![bbox; t_len],
                cells: cells.clone(),
            });

            clips.push(ClipFeatures {
                video_id: video_id.clone(),
                clip_id: format!("{video_id}_c{k:02}"),
                dim: d,
                cells: n_cells,
                grid: Matrix::new(u_len * n_cells, d, grid)?,
                frame_global: Matrix::new(u_len, d, fg)?,
                words,
                sentence,
                fps: cfg.fps,
                start_s: base as f64 / cfg.fps,
            });
        }
        let mut transcript: Vec<Label> = Vec::new();
        for (i, l) in labels.iter().enumerate() {
            if i == 0 || labels[i - 1] != *l {
                transcript.push(*l);
            }
        }
        gts.push(VideoGt {
            video_id,
            width: cfg.width,
            height: cfg.height,
            frames: cfg.frames_per_video,
            segments,
            ordered_transcript: transcript,
        });
    }
    Ok(SynthData {
        clips,
        bank,
        gt: gts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::cosine;

    fn cfg() -> SynthConfig {
        SynthConfig {
            videos: 3,
            frames_per_video: 32,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn noise_free_planted_cell_matches_class_word() {
        let data = synth_generate(&SynthConfig { sigma: 0.0, ..cfg() }).unwrap();
        for (clip, seg) in data.clips.iter().zip(data.gt.iter().flat_map(|g| &g.segments)) {
            let u = seg.start_frame % clip.frames();
            let cell = seg.cells[0];
            let v = clip.grid.row(u * clip.cells + cell);
            assert_eq!(cosine(v, &clip.words[0].vec).unwrap(), 1.0);
        }
    }

    #[test]
    fn same_seed_same_data() {
        let a = synth_generate(&cfg()).unwrap();
        let b = synth_generate(&cfg()).unwrap();
        assert_eq!(a.clips, b.clips);
        assert_eq!(a.gt, b.gt);
        let c = synth_generate(&SynthConfig { seed: 8, ..cfg() }).unwrap();
        assert_ne!(a.clips, c.clips);
    }

    #[test]
    fn planted_cells_beat_background_cells() {
        // Monte-Carlo over the generator: mean cosine to the own class word
        let data = synth_generate(&SynthConfig {
            videos: 20,
            ..SynthConfig::default()
        })
        .unwrap();
        let (mut planted, mut background) = (Vec::new(), Vec::new());
        let segs: Vec<_> = data.gt.iter().flat_map(|g| &g.segments).collect();
        for (clip, seg) in data.clips.iter().zip(segs) {
            let word = &clip.words[0].vec;
            for f in seg.start_frame..seg.end_frame {
                let u = f % clip.frames();
                for n in 0..clip.cells {
                    let c = cosine(clip.grid.row(u * clip.cells + n), word).unwrap();
                    if seg.cells.contains(&n) {
                        planted.push(c);
                    } else {
                        background.push(c);
                    }
                }
            }
        }
        assert!(planted.len() >= 1000 || background.len() >= 1000);
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(mean(&planted) - mean(&background) >= 0.3);
    }

    #[test]
    fn whole_frame_planting_marks_whole_frames() {
        let c = SynthConfig {
            planted_cells: 16,
            ..cfg()
        };
        let data = synth_generate(&c).unwrap();
        for g in &data.gt {
            for s in &g.segments {
                assert_eq!(s.cells, (0..16).collect::<Vec<_>>());
                assert!(s.boxes.iter().all(|b| *b == [0.0, 0.0, 320.0, 240.0]));
            }
            let planted: usize = g.segments.iter().map(|s| s.end_frame - s.start_frame).sum();
            assert_eq!(planted, g.frames / c.frames_per_clip * c.action_frames);
        }
    }

    #[test]
    fn generated_objects_are_valid() {
        let data = synth_generate(&SynthConfig {
            scene_frames: 0.7,
            scene_cells: 1.0,
            scene_words: 0.7,
            clutter: 0.7,
            ..cfg()
        })
        .unwrap();
        data.bank.validate().unwrap();
        for c in &data.clips {
            c.validate().unwrap();
        }
        for g in &data.gt {
            g.validate().unwrap();
        }
    }

    #[test]
    fn invalid_config_is_rejected() {
        assert!(synth_generate(&SynthConfig { cells: 15, ..cfg() }).is_err());
        assert!(synth_generate(&SynthConfig { action_frames: 17, ..cfg() }).is_err());
    }
}
