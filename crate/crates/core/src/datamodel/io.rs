//! JSON / JSON-lines storage. Vectors are written as 32-bit floats and widened
//! on load; every loaded object is validated before it is returned.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{
    ensure, label_from_file, label_to_file, schema, BankClass, ClipFeatures, FramePrediction,
    GtSegment, LabelBank, VideoGt, Word,
};
use crate::error::{Error, Result};
use crate::numcore::Matrix;

pub const FORMAT_VERSION: u32 = 1;

fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

fn widen(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

fn parse_error(path: &Path, err: serde_json::Error, line_offset: usize) -> Error {
    let msg = err.to_string();
    // serde names the offending field in backticks when it knows it
    let field = msg
        .split('`')
        .nth(1)
        .map(str::to_string)
        .unwrap_or_else(|| "?".into());
    Error::Parse {
        path: path.to_path_buf(),
        line: line_offset + err.line().max(1) - 1,
        field,
        msg,
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string(value).expect("serializable value");
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_jsonl<T: Serialize>(path: &Path, values: impl IntoIterator<Item = T>) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for v in values {
        serde_json::to_writer(&mut w, &v).expect("serializable value");
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| parse_error(path, e, 1))
}

/// Parses every non-empty line; returns records with their 1-based line numbers.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| parse_error(path, e, i + 1))?;
        out.push((i + 1, rec));
    }
    Ok(out)
}

fn check_version(path: &Path, line: usize, v: u32) -> Result<()> {
    ensure(v == FORMAT_VERSION, path, line, || {
        format!("format_version {v}, expected {FORMAT_VERSION}")
    })
}

fn matrix(path: &Path, line: usize, rows: &[Vec<f32>], what: &str) -> Result<Matrix> {
    let cols = rows.first().map_or(0, Vec::len);
    if let Some(r) = rows.iter().position(|r| r.len() != cols) {
        return Err(schema(path, line, format!("{what}[{r}] has a different length")));
    }
    let data: Vec<f64> = rows.iter().flat_map(|r| widen(r)).collect();
    Matrix::new(rows.len(), cols, data)
        .map_err(|_| schema(path, line, format!("{what} has non-finite values")))
}

fn finite(path: &Path, line: usize, v: &[f64], what: &str) -> Result<()> {
    ensure(v.iter().all(|x| x.is_finite()), path, line, || format!("{what} has non-finite values"))
}

#[derive(Serialize, Deserialize)]
struct WordFile {
    text: String,
    vec: Vec<f32>,
}

#[derive(Serialize, Deserialize)]
struct ClipFile {
    format_version: u32,
    video_id: String,
    clip_id: String,
    dim: usize,
    frames: usize,
    cells: usize,
    fps: f64,
    start_s: f64,
    grid: Vec<Vec<f32>>,
    frame_global: Vec<Vec<f32>>,
    words: Vec<WordFile>,
    sentence: Vec<f32>,
}

pub fn save_clip_features(cf: &ClipFeatures, path: &Path) -> Result<()> {
    let file = ClipFile {
        format_version: FORMAT_VERSION,
        video_id: cf.video_id.clone(),
        clip_id: cf.clip_id.clone(),
        dim: cf.dim,
        frames: cf.frames(),
        cells: cf.cells,
        fps: cf.fps,
        start_s: cf.start_s,
        grid: cf.grid.iter_rows().map(to_f32).collect(),
        frame_global: cf.frame_global.iter_rows().map(to_f32).collect(),
        words: cf
            .words
            .iter()
            .map(|w| WordFile {
                text: w.text.clone(),
                vec: to_f32(&w.vec),
            })
            .collect(),
        sentence: to_f32(&cf.sentence),
    };
    write_json(path, &file)
}

pub fn load_clip_features(path: &Path) -> Result<ClipFeatures> {
    let f: ClipFile = read_json(path)?;
    check_version(path, 1, f.format_version)?;
    ensure(f.grid.len() == f.frames * f.cells, path, 1, || {
        format!(
            "grid has {} vectors, expected U×N = {}×{}",
            f.grid.len(),
            f.frames,
            f.cells
        )
    })?;
    ensure(f.frame_global.len() == f.frames, path, 1, || {
        format!("frame_global has {} vectors for {} frames", f.frame_global.len(), f.frames)
    })?;
    let grid = matrix(path, 1, &f.grid, "grid")?;
    let frame_global = matrix(path, 1, &f.frame_global, "frame_global")?;
    let words: Vec<Word> = f
        .words
        .into_iter()
        .map(|w| Word {
            text: w.text,
            vec: widen(&w.vec),
        })
        .collect();
    for w in &words {
        finite(path, 1, &w.vec, "word vector")?;
    }
    let sentence = widen(&f.sentence);
    finite(path, 1, &sentence, "sentence")?;
    let cf = ClipFeatures {
        video_id: f.video_id,
        clip_id: f.clip_id,
        dim: f.dim,
        cells: f.cells,
        grid,
        frame_global,
        words,
        sentence,
        fps: f.fps,
        start_s: f.start_s,
    };
    cf.validate().map_err(|m| schema(path, 1, m))?;
    Ok(cf)
}

/// Loads every `*.json` clip in `dir`, sorted by (video_id, start_s, clip_id).
pub fn load_clip_dir(dir: &Path) -> Result<Vec<ClipFeatures>> {
    let mut paths: Vec<_> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    let mut clips = paths
        .iter()
        .map(|p| load_clip_features(p))
        .collect::<Result<Vec<_>>>()?;
    clips.sort_by(|a, b| {
        (&a.video_id, a.start_s, &a.clip_id)
            .partial_cmp(&(&b.video_id, b.start_s, &b.clip_id))
            .expect("finite start times")
    });
    Ok(clips)
}

#[derive(Serialize, Deserialize)]
struct BankClassFile {
    class_id: usize,
    name: String,
    words: Vec<Vec<f32>>,
    sentence: Vec<f32>,
}

#[derive(Serialize, Deserialize)]
struct BankFile {
    format_version: u32,
    dim: usize,
    classes: Vec<BankClassFile>,
}

pub fn save_bank(bank: &LabelBank, path: &Path) -> Result<()> {
    let file = BankFile {
        format_version: FORMAT_VERSION,
        dim: bank.dim,
        classes: bank
            .classes
            .iter()
            .map(|c| BankClassFile {
                class_id: c.class_id,
                name: c.name.clone(),
                words: c.words.iter().map(|w| to_f32(w)).collect(),
                sentence: to_f32(&c.sentence),
            })
            .collect(),
    };
    write_json(path, &file)
}

pub fn load_bank(path: &Path) -> Result<LabelBank> {
    let f: BankFile = read_json(path)?;
    check_version(path, 1, f.format_version)?;
    let bank = LabelBank {
        dim: f.dim,
        classes: f
            .classes
            .into_iter()
            .map(|c| BankClass {
                class_id: c.class_id,
                name: c.name,
                words: c.words.iter().map(|w| widen(w)).collect(),
                sentence: widen(&c.sentence),
            })
            .collect(),
    };
    for c in &bank.classes {
        finite(path, 1, &c.sentence, "bank sentence")?;
        for w in &c.words {
            finite(path, 1, w, "bank word")?;
        }
    }
    bank.validate().map_err(|m| schema(path, 1, m))?;
    Ok(bank)
}

#[derive(Serialize, Deserialize)]
struct GtSegmentFile {
    class_id: usize,
    start_frame: usize,
    end_frame: usize,
    boxes: Vec<[f32; 4]>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    cells: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct GtFile {
    format_version: u32,
    video_id: String,
    width: f64,
    height: f64,
    frames: usize,
    segments: Vec<GtSegmentFile>,
    ordered_transcript: Vec<i64>,
}

pub fn save_gt(gts: &[VideoGt], path: &Path) -> Result<()> {
    write_jsonl(
        path,
        gts.iter().map(|g| GtFile {
            format_version: FORMAT_VERSION,
            video_id: g.video_id.clone(),
            width: g.width,
            height: g.height,
            frames: g.frames,
            segments: g
                .segments
                .iter()
                .map(|s| GtSegmentFile {
                    class_id: s.class_id,
                    start_frame: s.start_frame,
                    end_frame: s.end_frame,
                    boxes: s.boxes.iter().map(|b| b.map(|x| x as f32)).collect(),
                    cells: s.cells.clone(),
                })
                .collect(),
            ordered_transcript: g.ordered_transcript.iter().map(|&l| label_to_file(l)).collect(),
        }),
    )
}

pub fn load_gt(path: &Path) -> Result<Vec<VideoGt>> {
    let mut out = Vec::new();
    for (line, f) in read_jsonl::<GtFile>(path)? {
        check_version(path, line, f.format_version)?;
        let ordered_transcript = f
            .ordered_transcript
            .iter()
            .map(|&v| label_from_file(v))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|m| schema(path, line, m))?;
        let gt = VideoGt {
            video_id: f.video_id,
            width: f.width,
            height: f.height,
            frames: f.frames,
            segments: f
                .segments
                .into_iter()
                .map(|s| GtSegment {
                    class_id: s.class_id,
                    start_frame: s.start_frame,
                    end_frame: s.end_frame,
                    boxes: s.boxes.iter().map(|b| b.map(|x| x as f64)).collect(),
                    cells: s.cells,
                })
                .collect(),
            ordered_transcript,
        };
        gt.validate().map_err(|m| schema(path, line, m))?;
        out.push(gt);
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct FramePredFile {
    format_version: u32,
    video_id: String,
    frame_index: usize,
    label: i64,
    score: f32,
    heatmap: Vec<f32>,
    argmax_point: [f32; 2],
    mask: Vec<bool>,
}

pub fn save_predictions(preds: &[FramePrediction], path: &Path) -> Result<()> {
    write_jsonl(
        path,
        preds.iter().map(|p| FramePredFile {
            format_version: FORMAT_VERSION,
            video_id: p.video_id.clone(),
            frame_index: p.frame_index,
            label: label_to_file(p.label),
            score: p.score as f32,
            heatmap: to_f32(&p.heatmap),
            argmax_point: [p.argmax_point.0 as f32, p.argmax_point.1 as f32],
            mask: p.mask.clone(),
        }),
    )
}

pub fn load_predictions(path: &Path) -> Result<Vec<FramePrediction>> {
    let mut out = Vec::new();
    for (line, f) in read_jsonl::<FramePredFile>(path)? {
        check_version(path, line, f.format_version)?;
        let label = label_from_file(f.label).map_err(|m| schema(path, line, m))?;
        ensure(f.heatmap.len() == f.mask.len(), path, line, || {
            format!("heatmap has {} cells, mask {}", f.heatmap.len(), f.mask.len())
        })?;
        let heatmap = widen(&f.heatmap);
        ensure(heatmap.iter().all(|v| (0.0..=1.0).contains(v)), path, line, || {
            "heatmap values must lie in [0, 1]".into()
        })?;
        ensure(f.score.is_finite(), path, line, || "score is not finite".into())?;
        out.push(FramePrediction {
            video_id: f.video_id,
            frame_index: f.frame_index,
            label,
            score: f.score as f64,
            heatmap,
            argmax_point: (f.argmax_point[0] as f64, f.argmax_point[1] as f64),
            mask: f.mask,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::{synth_generate, SynthConfig};

    fn small() -> SynthConfig {
        SynthConfig {
            videos: 2,
            frames_per_video: 8,
            frames_per_clip: 4,
            action_frames: 2,
            dim: 6,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn clip_round_trip() {
        let data = synth_generate(&small()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("clip.json");
        save_clip_features(&data.clips[0], &p).unwrap();
        assert_eq!(load_clip_features(&p).unwrap(), data.clips[0]);
    }

    #[test]
    fn bank_and_gt_round_trip() {
        let data = synth_generate(&small()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let bp = dir.path().join("bank.json");
        save_bank(&data.bank, &bp).unwrap();
        assert_eq!(load_bank(&bp).unwrap(), data.bank);
        let gp = dir.path().join("gt.jsonl");
        save_gt(&data.gt, &gp).unwrap();
        assert_eq!(load_gt(&gp).unwrap(), data.gt);
    }

    fn edit_clip(f: impl FnOnce(&mut serde_json::Value)) -> Result<ClipFeatures> {
        let data = synth_generate(&small()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("clip.json");
        save_clip_features(&data.clips[0], &p).unwrap();
        let mut v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&p).unwrap()).unwrap();
        f(&mut v);
        fs::write(&p, serde_json::to_string_pretty(&v).unwrap()).unwrap();
        load_clip_features(&p)
    }

    #[test]
    fn short_grid_is_a_schema_error() {
        let err = edit_clip(|v| {
            v["grid"].as_array_mut().unwrap().pop();
        })
        .unwrap_err();
        assert!(matches!(err, Error::Schema { .. }), "{err}");
        assert!(err.to_string().contains("U×N"));
    }

    #[test]
    fn missing_sentence_is_a_parse_error() {
        let err = edit_clip(|v| {
            v.as_object_mut().unwrap().remove("sentence");
        })
        .unwrap_err();
        match err {
            Error::Parse { field, .. } => assert_eq!(field, "sentence"),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn wrong_version_is_rejected() {
        let err = edit_clip(|v| v["format_version"] = 2.into()).unwrap_err();
        assert!(matches!(err, Error::Schema { .. }));
    }

    #[test]
    fn jsonl_errors_carry_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("gt.jsonl");
        let data = synth_generate(&small()).unwrap();
        save_gt(&data.gt, &p).unwrap();
        let mut text = fs::read_to_string(&p).unwrap();
        text.push_str("{\"format_version\": 1}\n");
        fs::write(&p, text).unwrap();
        match load_gt(&p).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn predictions_round_trip() {
        let p = FramePrediction {
            video_id: "v".into(),
            frame_index: 3,
            label: Some(2),
            score: 0.75,
            heatmap: vec![0.0, 0.5, 1.0, 0.25],
            argmax_point: (10.5, 20.5),
            mask: vec![false, true, true, true],
        };
        let bg = FramePrediction {
            label: None,
            frame_index: 4,
            ..p.clone()
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pred.jsonl");
        save_predictions(&[p.clone(), bg.clone()], &path).unwrap();
        assert_eq!(load_predictions(&path).unwrap(), vec![p, bg]);
        let raw = fs::read_to_string(&path).unwrap();
        assert!(raw.lines().nth(1).unwrap().contains("\"label\":-1"));
    }
}
