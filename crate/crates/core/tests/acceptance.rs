//! Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

mod common;

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use stground::benchtools::{aggregate_frame, build_single_action_clips, qc_sample_size, AnnotatorEntry, BenchConfig, KeypointRecord};
use stground::datamodel::{synth_generate, BBox, FramePrediction, GtSegment, SpatioTemporalPrediction, SynthConfig, VideoGt};
use stground::groundnet::{nce_loss, total_loss_and_grads, AttentionConfig, Example, Layer, ModelParams, TrainConfig};
use stground::infer::{align_transcript, alignment_score, InferConfig};
use stground::metrics::{interval_iod_jaccard, spatial_map, video_map};
use stground::numcore::{finite_diff_check, Matrix, Rng};
use stground::otselect::{marginal_violation, sinkhorn, SinkhornConfig};

fn report(n: usize, ok: bool, detail: String) {
    println!("criterion {n}: {} ({detail})", if ok { "PASS" } else { "FAIL" });
}

#[test]
fn criterion_1_sample_size() {
    let n = qc_sample_size(0.95, 0.03, 0.5, 26_987).unwrap();
    let ok = n == 1026;
    report(1, ok, format!("qc_sample_size(0.95, 0.03, 0.5, 26987) = {n}"));
    assert!(ok);
}

#[test]
fn criterion_2_sinkhorn() {
    let start = Instant::now();
    let cfg = SinkhornConfig {
        epsilon: 0.1,
        max_iters: 500,
        tol: 1e-6,
        log_domain: false,
    };
    let (u, k) = (16, 8);
    let mut rng = Rng::new(2);
    let mut worst_violation: f64 = 0.0;
    let mut worst_shift: f64 = 0.0;
    let mut max_iters = 0;
    for _ in 0..100 {
        let data: Vec<f64> = (0..k * u).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
        let p = Matrix::new(k, u, data).unwrap();
        let plan = sinkhorn(&p, &cfg).unwrap();
        max_iters = max_iters.max(plan.iterations);
        worst_violation = worst_violation.max(marginal_violation(&plan.q));
        let c = rng.uniform_range(-2.0, 2.0);
        let shifted = Matrix::new(k, u, p.data().iter().map(|x| x + c).collect()).unwrap();
        let q2 = sinkhorn(&shifted, &cfg).unwrap().q;
        let d = plan.q.data().iter().zip(q2.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        worst_shift = worst_shift.max(d);
    }
    let uni = sinkhorn(&Matrix::filled(k, u, 0.37), &cfg).unwrap().q;
    let target = 1.0 / (u * k) as f64;
    let uni_err = uni.data().iter().map(|x| (x - target).abs()).fold(0.0, f64::max);
    let secs = start.elapsed().as_secs_f64();
    let ok = max_iters <= 500 && worst_violation < 1e-6 && uni_err <= 1e-12 && worst_shift <= 1e-8 && secs < 5.0;
    report(
        2,
        ok,
        format!(
            "max iters {max_iters}, violation {worst_violation:.2e}, uniform err {uni_err:.1e}, shift diff {worst_shift:.1e}, {secs:.2}s"
        ),
    );
    assert!(ok);
}

fn grad_clips(b: usize, d: usize, seed: u64) -> Vec<stground::datamodel::ClipFeatures> {
    synth_generate(&SynthConfig {
        videos: 1,
        frames_per_video: 8 * b,
        frames_per_clip: 8,
        action_frames: 2,
        cells: 4,
        dim: d,
        words_per_clip: 3,
        seed,
        ..Default::default()
    })
    .unwrap()
    .clips
}

#[test]
fn criterion_3_gradients() {
    let start = Instant::now();
    let stacks = [
        vec![Layer::Cross, Layer::SelfAttn, Layer::Cross],
        vec![Layer::Cross, Layer::Cross],
        vec![Layer::SelfAttn, Layer::Cross],
    ];
    let mut rng = Rng::new(3);
    let mut worst: f64 = 0.0;
    for i in 0..20 {
        let b = [2, 4][i % 2];
        let dp = [8, 16][(i / 2) % 2];
        let stack = stacks[i % 3].clone();
        let d = 6;
        let clips = grad_clips(b, d, rng.next_u64());
        let mut frames = rng.sample_distinct(8, 3);
        frames.sort_unstable();
        let batch: Vec<Example> = clips.iter().map(|c| Example { clip: c, frames: &frames }).collect();
        let params = ModelParams::random(d, dp, &mut rng);
        let attn = AttentionConfig {
            stack,
            ..Default::default()
        };
        let cfg = TrainConfig {
            delta: rng.uniform_range(0.0, 0.5),
            ..Default::default()
        };
        let (gb, _) = total_loss_and_grads(&batch, &params, &cfg, &attn).unwrap();
        let f = |m: &stground::numcore::ParamMap| {
            total_loss_and_grads(&batch, &ModelParams::from_map(m).unwrap(), &cfg, &attn)
                .unwrap()
                .0
                .value
        };
        worst = worst.max(finite_diff_check(f, &params.to_map(), &gb.grads, 1e-5));
    }
    let secs = start.elapsed().as_secs_f64();
    let ok = worst < 1e-4 && secs < 60.0;
    report(3, ok, format!("worst relative error {worst:.2e} over 20 configurations, {secs:.1}s"));
    assert!(ok);
}

fn unit_rows(rng: &mut Rng, b: usize, d: usize) -> Matrix {
    let rows: Vec<Vec<f64>> = (0..b)
        .map(|_| stground::numcore::l2_normalize(&rng.normal_vec(d, 1.0)).unwrap())
        .collect();
    Matrix::from_rows(&rows).unwrap()
}

#[test]
fn criterion_4_loss_identities() {
    let mut rng = Rng::new(4);
    let mut ok = true;
    let mut worst_b1: f64 = 0.0;
    for _ in 0..20 {
        let (x, y) = (unit_rows(&mut rng, 1, 5), unit_rows(&mut rng, 1, 5));
        worst_b1 = worst_b1.max(nce_loss(&x, &y, rng.uniform_range(0.0, 1.0)).unwrap().abs());
    }
    ok &= worst_b1 <= 1e-12;

    let eye = Matrix::identity(2);
    let sym = nce_loss(&eye, &eye, 0.0).unwrap();
    let sym_err = (sym - 2.0 * (1.0 + (-1.0f64).exp()).ln()).abs();
    ok &= sym_err <= 1e-9;

    let mut perm_err: f64 = 0.0;
    let mut monotone = true;
    for trial in 0..50 {
        let b = 2 + trial % 6;
        let (x, y) = (unit_rows(&mut rng, b, 8), unit_rows(&mut rng, b, 8));
        let delta = rng.uniform_range(0.0, 1.0);
        let base = nce_loss(&x, &y, delta).unwrap();
        let mut order: Vec<usize> = (0..b).collect();
        rng.shuffle(&mut order);
        let permuted = nce_loss(&x.select_rows(&order), &y.select_rows(&order), delta).unwrap();
        perm_err = perm_err.max((base - permuted).abs());
        let deltas = [0.0, 0.05, 0.1, 0.3, 0.7, 1.5];
        let losses: Vec<f64> = deltas.iter().map(|&d| nce_loss(&x, &y, d).unwrap()).collect();
        monotone &= losses.windows(2).all(|w| w[1] > w[0]);
    }
    ok &= perm_err <= 1e-12 && monotone;
    report(
        4,
        ok,
        format!(
            "B=1 max |loss| {worst_b1:.1e}, symmetric err {sym_err:.1e}, permutation err {perm_err:.1e}, strictly increasing in delta: {monotone}"
        ),
    );
    assert!(ok);
}

// ---- brute-force references for criterion 5 ----

const W: f64 = 4.0;
const H: f64 = 4.0;
const CELLS: usize = 4;

fn naive_raster(b: &BBox) -> Vec<bool> {
    let mut out = Vec::new();
    for r in 0..2 {
        for c in 0..2 {
            let (x, y) = ((c as f64 + 0.5) * W / 2.0, (r as f64 + 0.5) * H / 2.0);
            out.push(x >= b[0] && x <= b[2] && y >= b[1] && y <= b[3]);
        }
    }
    out
}

fn naive_iou(a: &[bool], b: &[bool]) -> f64 {
    let (mut i, mut u) = (0.0, 0.0);
    for k in 0..a.len() {
        if a[k] && b[k] {
            i += 1.0;
        }
        if a[k] || b[k] {
            u += 1.0;
        }
    }
    if u == 0.0 {
        0.0
    } else {
        i / u
    }
}

/// AP as the mean, over true positives, of the best precision at or below that rank.
fn naive_ap(tp: &[bool], positives: usize) -> f64 {
    let mut sum = 0.0;
    for k in 0..tp.len() {
        if !tp[k] {
            continue;
        }
        let mut best: f64 = 0.0;
        for j in k..tp.len() {
            let hits = tp[..=j].iter().filter(|t| **t).count();
            best = best.max(hits as f64 / (j + 1) as f64);
        }
        sum += best;
    }
    sum / positives as f64
}

fn random_box(rng: &mut Rng) -> BBox {
    let (x0, x1) = (rng.uniform_range(0.0, W), rng.uniform_range(0.0, W));
    let (y0, y1) = (rng.uniform_range(0.0, H), rng.uniform_range(0.0, H));
    [x0.min(x1), y0.min(y1), x0.max(x1), y0.max(y1)]
}

fn random_instance(rng: &mut Rng) -> (Vec<FramePrediction>, Vec<VideoGt>) {
    let classes = 1 + rng.below(3);
    let videos = 1 + rng.below(2);
    let mut preds = Vec::new();
    let mut gts = Vec::new();
    for v in 0..videos {
        let id = format!("v{v}");
        let frames = 3 + rng.below(18);
        let mut segments = Vec::new();
        for c in 0..classes {
            if rng.uniform() < 0.8 {
                let a = rng.below(frames);
                let b = a + 1 + rng.below(frames - a);
                segments.push(GtSegment {
                    class_id: c,
                    start_frame: a,
                    end_frame: b,
                    boxes: (a..b).map(|_| random_box(rng)).collect(),
                    cells: vec![],
                });
            }
        }
        for f in 0..frames {
            let label = if rng.uniform() < 0.25 { None } else { Some(rng.below(classes)) };
            let mask: Vec<bool> = (0..CELLS).map(|_| rng.uniform() < 0.5).collect();
            preds.push(FramePrediction {
                video_id: id.clone(),
                frame_index: f,
                label,
                // a coarse score grid produces ties
                score: rng.below(4) as f64 / 4.0,
                heatmap: vec![0.0; CELLS],
                argmax_point: (0.5, 0.5),
                mask,
            });
        }
        gts.push(VideoGt {
            video_id: id,
            width: W,
            height: H,
            frames,
            ordered_transcript: segments.iter().map(|s| Some(s.class_id)).collect(),
            segments,
        });
    }
    if gts.iter().all(|g| g.segments.is_empty()) {
        return random_instance(rng);
    }
    (preds, gts)
}

fn gt_box(gts: &[VideoGt], video: &str, frame: usize, class: usize) -> Option<BBox> {
    let g = gts.iter().find(|g| g.video_id == video)?;
    let s = g
        .segments
        .iter()
        .find(|s| s.class_id == class && s.start_frame <= frame && frame < s.end_frame)?;
    Some(s.boxes[frame - s.start_frame])
}

fn gt_classes(gts: &[VideoGt]) -> Vec<usize> {
    let mut c: Vec<usize> = gts.iter().flat_map(|g| g.segments.iter().map(|s| s.class_id)).collect();
    c.sort_unstable();
    c.dedup();
    c
}

fn naive_spatial_map(preds: &[FramePrediction], gts: &[VideoGt], thr: f64) -> f64 {
    let classes = gt_classes(gts);
    let mut total = 0.0;
    for &c in &classes {
        let positives: usize = gts
            .iter()
            .flat_map(|g| &g.segments)
            .filter(|s| s.class_id == c)
            .map(|s| s.end_frame - s.start_frame)
            .sum();
        let mut dets: Vec<&FramePrediction> = preds.iter().filter(|p| p.label == Some(c)).collect();
        // insertion sort on (−score, video, frame)
        for i in 1..dets.len() {
            let mut j = i;
            while j > 0 && {
                let (a, b) = (dets[j - 1], dets[j]);
                a.score < b.score || (a.score == b.score && (a.video_id.clone(), a.frame_index) > (b.video_id.clone(), b.frame_index))
            } {
                dets.swap(j - 1, j);
                j -= 1;
            }
        }
        let tp: Vec<bool> = dets
            .iter()
            .map(|p| match gt_box(gts, &p.video_id, p.frame_index, c) {
                Some(b) => naive_iou(&p.mask, &naive_raster(&b)) > thr,
                None => false,
            })
            .collect();
        total += naive_ap(&tp, positives);
    }
    total / classes.len() as f64
}

fn naive_video_map(preds: &[FramePrediction], gts: &[VideoGt], thr: f64) -> f64 {
    // detections: runs of one label over consecutive frames of a video
    struct Det {
        video: String,
        class: usize,
        conf: f64,
        start: usize,
        end: usize,
    }
    let mut dets: Vec<Det> = Vec::new();
    for g in gts {
        let mut frames: Vec<&FramePrediction> = preds.iter().filter(|p| p.video_id == g.video_id).collect();
        frames.sort_by_key(|p| p.frame_index);
        let mut i = 0;
        while i < frames.len() {
            let Some(c) = frames[i].label else {
                i += 1;
                continue;
            };
            let mut j = i;
            while j + 1 < frames.len() && frames[j + 1].label == Some(c) && frames[j + 1].frame_index == frames[j].frame_index + 1 {
                j += 1;
            }
            let conf = frames[i..=j].iter().map(|p| p.score).sum::<f64>() / (j - i + 1) as f64;
            dets.push(Det {
                video: g.video_id.clone(),
                class: c,
                conf,
                start: frames[i].frame_index,
                end: frames[j].frame_index + 1,
            });
            i = j + 1;
        }
    }
    let voxels = |video: &str, frame: usize, cell: usize| -> bool {
        preds
            .iter()
            .find(|p| p.video_id == video && p.frame_index == frame)
            .is_some_and(|p| p.mask[cell])
    };
    let classes = gt_classes(gts);
    let mut total = 0.0;
    for &c in &classes {
        let gt_list: Vec<(&VideoGt, &GtSegment)> = gts
            .iter()
            .flat_map(|g| g.segments.iter().map(move |s| (g, s)))
            .filter(|(_, s)| s.class_id == c)
            .collect();
        let mut order: Vec<&Det> = dets.iter().filter(|d| d.class == c).collect();
        order.sort_by(|a, b| b.conf.partial_cmp(&a.conf).unwrap().then((&a.video, a.start).cmp(&(&b.video, b.start))));
        let mut used = vec![false; gt_list.len()];
        let mut tp = Vec::new();
        for d in order {
            let mut best: Option<(usize, f64)> = None;
            for (gi, (g, s)) in gt_list.iter().enumerate() {
                if used[gi] || g.video_id != d.video {
                    continue;
                }
                let (mut inter, mut union) = (0.0, 0.0);
                for f in 0..g.frames {
                    let gm = if f >= s.start_frame && f < s.end_frame {
                        naive_raster(&s.boxes[f - s.start_frame])
                    } else {
                        vec![false; CELLS]
                    };
                    for cell in 0..CELLS {
                        let dm = f >= d.start && f < d.end && voxels(&d.video, f, cell);
                        if dm && gm[cell] {
                            inter += 1.0;
                        }
                        if dm || gm[cell] {
                            union += 1.0;
                        }
                    }
                }
                let iou = if union == 0.0 { 0.0 } else { inter / union };
                if best.is_none() || iou > best.unwrap().1 {
                    best = Some((gi, iou));
                }
            }
            let hit = best.is_some_and(|(_, iou)| iou >= thr);
            if hit {
                used[best.unwrap().0] = true;
            }
            tp.push(hit);
        }
        total += naive_ap(&tp, gt_list.len());
    }
    total / classes.len() as f64
}

/// Best total over every monotone onto labelling, by enumerating cut points.
fn naive_alignment(sim: &Matrix, slots: &[Option<usize>], bg: f64) -> f64 {
    let (f, s) = sim.shape();
    let score = |i: usize, j: usize| if slots[j].is_some() { sim.get(i, j) } else { bg };
    let mut best = f64::NEG_INFINITY;
    // bitmask over the f−1 gaps marks where the slot advances
    for mask in 0u32..(1 << (f - 1)) {
        if mask.count_ones() as usize != s - 1 {
            continue;
        }
        let mut j = 0;
        let mut total = score(0, 0);
        for i in 1..f {
            if mask & (1 << (i - 1)) != 0 {
                j += 1;
            }
            total += score(i, j);
        }
        best = best.max(total);
    }
    best
}

#[test]
fn criterion_5_metric_oracles() {
    let start = Instant::now();
    let mut rng = Rng::new(5);
    let thresholds = [0.1, 0.2, 0.3, 0.4, 0.5];
    let (mut smap_err, mut vmap_err, mut align_err): (f64, f64, f64) = (0.0, 0.0, 0.0);
    let instances = 60;
    let (mut smap_nonzero, mut vmap_nonzero) = (0, 0);
    for _ in 0..instances {
        let (preds, gts) = random_instance(&mut rng);
        for thr in [0.0, 0.3, 0.5] {
            let got = spatial_map(&preds, &gts, thr).unwrap().map;
            smap_nonzero += (got > 0.0) as usize;
            smap_err = smap_err.max((got - naive_spatial_map(&preds, &gts, thr)).abs());
        }
        let st = SpatioTemporalPrediction::from_frames(preds.clone());
        for (thr, r) in video_map(&st, &gts, &thresholds).unwrap() {
            vmap_nonzero += (r.map > 0.0) as usize;
            vmap_err = vmap_err.max((r.map - naive_video_map(&preds, &gts, thr)).abs());
        }
    }
    for _ in 0..instances {
        let f = 1 + rng.below(10);
        let s = 1 + rng.below(f.min(5));
        let slots: Vec<Option<usize>> = (0..s).map(|_| if rng.uniform() < 0.3 { None } else { Some(rng.below(4)) }).collect();
        let sim = Matrix::new(f, s, (0..f * s).map(|_| rng.uniform_range(-1.0, 1.0)).collect()).unwrap();
        let cfg = InferConfig::default();
        let assign = align_transcript(&sim, &slots, &cfg).unwrap();
        let monotone_onto = assign[0] == 0 && assign[f - 1] == s - 1 && assign.windows(2).all(|w| w[1] == w[0] || w[1] == w[0] + 1);
        assert!(monotone_onto, "{assign:?}");
        let got = alignment_score(&sim, &slots, &assign, &cfg);
        align_err = align_err.max((got - naive_alignment(&sim, &slots, cfg.background_score)).abs());
    }
    let mut iod_ok = true;
    for _ in 0..10_000 {
        let g0 = rng.below(50);
        let g = (g0, g0 + 1 + rng.below(30));
        let d0 = rng.below(50);
        let d = (d0, d0 + 1 + rng.below(30));
        let (iod, jac) = interval_iod_jaccard(g, d);
        iod_ok &= iod >= jac;
    }
    let secs = start.elapsed().as_secs_f64();
    // the comparison is vacuous if every instance scores zero
    let informative = smap_nonzero > instances && vmap_nonzero > instances;
    let ok = smap_err <= 1e-9 && vmap_err <= 1e-9 && align_err <= 1e-9 && iod_ok && informative && secs < 60.0;
    report(
        5,
        ok,
        format!(
            "{instances} instances each: spatial mAP err {smap_err:.1e} ({smap_nonzero} non-zero), video mAP err {vmap_err:.1e} ({vmap_nonzero} non-zero), alignment err {align_err:.1e}; IoD >= Jaccard on 10000 pairs: {iod_ok}; {secs:.1}s"
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_6_synthetic_end_to_end() {
    let start = Instant::now();
    let cfg = common::fixture();
    let r = common::end_to_end(&cfg);
    let secs = start.elapsed().as_secs_f64();
    let checks = [
        ("loss ratio < 0.5", r.loss_ratio < 0.5, format!("{:.4}", r.loss_ratio)),
        ("pointing game >= 0.9", r.pointing >= 0.9, format!("{:.3} (untrained {:.3})", r.pointing, r.pointing_untrained)),
        ("temporal Jaccard >= 0.7", r.jaccard >= 0.7, format!("{:.3}", r.jaccard)),
        (
            "Sinkhorn recall > Global recall",
            r.recall_sinkhorn > r.recall_global,
            format!("{:.3} vs {:.3}", r.recall_sinkhorn, r.recall_global),
        ),
        ("runtime < 5 min", secs < 300.0, format!("{secs:.1}s")),
    ];
    for (name, ok, value) in &checks {
        println!("  criterion 6 {name}: {} ({value})", if *ok { "pass" } else { "fail" });
    }
    let ok = checks.iter().all(|c| c.1);
    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    report(
        6,
        ok,
        if ok {
            "all sub-checks met".into()
        } else {
            format!("unmet: {}", failed.join(", "))
        },
    );
    assert!(ok, "unmet: {failed:?}");
}

fn read_tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn pipeline(root: &Path, threads: &str) {
    let bin = env!("CARGO_BIN_EXE_stground");
    let cfg = common::fixture_path();
    let cfg = cfg.to_str().unwrap();
    let r = |p: &str| root.join(p).to_string_lossy().into_owned();
    let steps: Vec<Vec<String>> = vec![
        vec!["synth".into(), "-o".into(), r("data")],
        vec!["select".into(), "--clips".into(), r("data/train"), "-o".into(), r("sel")],
        vec!["train".into(), "--clips".into(), r("data/train"), "-o".into(), r("model")],
        vec![
            "infer".into(),
            "--clips".into(),
            r("data/heldout"),
            "--bank".into(),
            r("data/bank.json"),
            "--params".into(),
            r("model/params.json"),
            "-o".into(),
            r("pred"),
        ],
        vec![
            "eval".into(),
            "--pred".into(),
            r("pred/pred.jsonl"),
            "--gt".into(),
            r("data/gt_heldout.jsonl"),
            "-o".into(),
            r("eval"),
        ],
    ];
    for args in steps {
        let out = Command::new(bin)
            .args(["--config", cfg, "--seed", "7", "--threads", threads])
            .args(&args)
            .output()
            .unwrap();
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn criterion_7_determinism() {
    let dirs: Vec<tempfile::TempDir> = (0..3).map(|_| tempfile::tempdir().unwrap()).collect();
    pipeline(dirs[0].path(), "1");
    pipeline(dirs[1].path(), "1");
    pipeline(dirs[2].path(), "8");
    let trees: Vec<_> = dirs.iter().map(|d| read_tree(d.path())).collect();
    let rerun = trees[0] == trees[1];
    let threads = trees[0] == trees[2];
    let ok = rerun && threads && !trees[0].is_empty();
    report(
        7,
        ok,
        format!(
            "{} files; rerun identical: {rerun}; --threads 8 equals --threads 1: {threads}",
            trees[0].len()
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_8_benchmark_constants() {
    let cfg = BenchConfig::default();
    let widespread = cfg.widespread_area == 60_000.0;
    let majority = cfg.majority_k == 3;
    let rec = |points: usize| KeypointRecord {
        video_id: "v".into(),
        frame_index: 0,
        class_id: 0,
        width: 100.0,
        height: 100.0,
        annotators: (0..5)
            .map(|i| AnnotatorEntry {
                point: (i < points).then_some([10.0, 10.0]),
                cant_solve: i >= points,
                corrupt: false,
            })
            .collect(),
    };
    let votes = !aggregate_frame(&rec(2), &cfg).present && aggregate_frame(&rec(3), &cfg).present;
    let gt = VideoGt {
        video_id: "v".into(),
        width: 100.0,
        height: 100.0,
        frames: 100,
        segments: vec![GtSegment {
            class_id: 0,
            start_frame: 40,
            end_frame: 50,
            boxes: vec![[0.0, 0.0, 1.0, 1.0]; 10],
            cells: vec![],
        }],
        ordered_transcript: vec![Some(0)],
    };
    let clips = build_single_action_clips(&gt);
    let third = clips.len() == 1 && (clips[0].action_fraction() - 1.0 / 3.0).abs() < 1e-12;
    let ok = widespread && majority && votes && third;
    report(
        8,
        ok,
        format!(
            "widespread area {}, majority {} of 5 (2 votes absent, 3 present: {votes}), unclamped action fraction {:.4}",
            cfg.widespread_area,
            cfg.majority_k,
            clips.first().map_or(f64::NAN, |c| c.action_fraction())
        ),
    );
    assert!(ok);
}
