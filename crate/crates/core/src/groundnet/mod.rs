//! The trainable model: projections, the parameter-free attention stack,
//! both contrastive losses, attention rollout and the training loop.

mod params;
mod train;

pub use params::{project, ModelParams, W_F, W_F_LOCAL, W_G, W_G_LOCAL};
pub use train::{read_train_log, train, write_train_log, EpochLoss, Optimizer, TrainConfig, TrainOutput};

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::datamodel::ClipFeatures;
use crate::error::{Error, Result};
use crate::numcore::tape::{CustomOp, Tape, Var};
use crate::numcore::{GradBundle, Matrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layer {
    Cross,
    #[serde(rename = "self")]
    SelfAttn,
}

impl FromStr for Layer {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "cross" | "c" => Ok(Layer::Cross),
            "self" | "s" => Ok(Layer::SelfAttn),
            other => Err(format!("unknown layer `{other}` (expected cross or self)")),
        }
    }
}

/// Parses `cross,self,cross` or the short form `CSC`.
pub fn parse_stack(s: &str) -> std::result::Result<Vec<Layer>, String> {
    if s.contains(',') {
        s.split(',').map(str::parse).collect()
    } else {
        s.chars().map(|c| c.to_string().parse()).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttentionConfig {
    pub stack: Vec<Layer>,
    pub residual_weight: f64,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        Self {
            stack: vec![Layer::Cross, Layer::SelfAttn, Layer::Cross],
            residual_weight: 0.5,
        }
    }
}

impl AttentionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stack.last() != Some(&Layer::Cross) {
            return Err(Error::BadParams("attention stack must end with a cross layer".into()));
        }
        if !(0.0..=1.0).contains(&self.residual_weight) {
            return Err(Error::BadParams("residual_weight must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Attention matrices of one layer.
#[derive(Clone, Debug, PartialEq)]
pub enum LayerTrace {
    /// Video tokens over words (`TN × K`) and words over video tokens (`K × TN`).
    Cross { v_to_s: Matrix, s_to_v: Matrix },
    /// Video (`TN × TN`) and text (`K × K`) self-attention.
    SelfAttn { video: Matrix, text: Matrix },
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct AttentionTrace {
    pub layers: Vec<LayerTrace>,
}

impl AttentionTrace {
    pub fn matrices(&self) -> impl Iterator<Item = &Matrix> {
        self.layers.iter().flat_map(|l| match l {
            LayerTrace::Cross { v_to_s, s_to_v } => [v_to_s, s_to_v],
            LayerTrace::SelfAttn { video, text } => [video, text],
        })
    }
}

/// Projected, unit-norm tokens of one clip.
#[derive(Clone, Debug)]
pub struct ProjectedTokens {
    pub video: Matrix,
    pub words: Matrix,
    pub frame_globals: Matrix,
    pub sentence: Matrix,
}

pub fn project_tokens(clip: &ClipFeatures, frames: &[usize], params: &ModelParams) -> Result<ProjectedTokens> {
    check_frames(clip, frames, params)?;
    Ok(ProjectedTokens {
        video: project(&clip.grid_tokens(frames), &params.w_f_local)?,
        words: project(&clip.word_matrix(), &params.w_g_local)?,
        frame_globals: project(&clip.frame_global.select_rows(frames), &params.w_f)?,
        sentence: project(&clip.sentence_matrix(), &params.w_g)?,
    })
}

fn check_frames(clip: &ClipFeatures, frames: &[usize], params: &ModelParams) -> Result<()> {
    if clip.dim != params.dim() {
        return Err(Error::dims(format!("clip dimension {} vs params {}", clip.dim, params.dim())));
    }
    if frames.is_empty() || frames.len() > clip.frames() || frames.iter().any(|&u| u >= clip.frames()) {
        return Err(Error::dims(format!(
            "frame selection {frames:?} does not fit a {}-frame clip",
            clip.frames()
        )));
    }
    Ok(())
}

/// Cosine cross-attention of `queries` over `kv`: the contextual tokens and
/// the attention matrix. Parameter-free.
pub fn cross_attention(queries: &Matrix, kv: &Matrix) -> Result<(Matrix, Matrix)> {
    let mut t = Tape::new();
    let (q, k) = (t.leaf(queries.clone()), t.leaf(kv.clone()));
    let (out, a) = cross_on_tape(&mut t, q, k)?;
    Ok((t.value(out).clone(), t.value(a).clone()))
}

/// Scaled dot-product self-attention with `K = Q = V = tokens`.
pub fn self_attention(tokens: &Matrix) -> Result<(Matrix, Matrix)> {
    let mut t = Tape::new();
    let x = t.leaf(tokens.clone());
    let (out, a) = self_on_tape(&mut t, x)?;
    Ok((t.value(out).clone(), t.value(a).clone()))
}

fn cross_on_tape(t: &mut Tape, q: Var, kv: Var) -> Result<(Var, Var)> {
    let qn = t.row_normalize(q)?;
    let kn = t.row_normalize(kv)?;
    let e = t.matmul_t(qn, kn)?;
    let a = t.row_softmax(e);
    Ok((t.matmul(a, kv)?, a))
}

fn self_on_tape(t: &mut Tape, x: Var) -> Result<(Var, Var)> {
    let d = t.value(x).cols() as f64;
    let logits = t.matmul_t(x, x)?;
    let logits = t.scale(logits, 1.0 / d.sqrt());
    let a = t.row_softmax(logits);
    Ok((t.matmul(a, x)?, a))
}

/// Runs the stack on the tape; returns raw mean-pooled `(V̄, S̄)` (1 × d′ each).
fn stack_on_tape(
    t: &mut Tape,
    mut v: Var,
    mut s: Var,
    attn: &AttentionConfig,
    trace: Option<&mut AttentionTrace>,
) -> Result<(Var, Var)> {
    let mut layers = Vec::new();
    for layer in &attn.stack {
        match layer {
            Layer::Cross => {
                // both directions read the same inputs
                let (v2, a_vs) = cross_on_tape(t, v, s)?;
                let (s2, a_sv) = cross_on_tape(t, s, v)?;
                layers.push((*layer, a_vs, a_sv));
                v = v2;
                s = s2;
            }
            Layer::SelfAttn => {
                let (v2, a_v) = self_on_tape(t, v)?;
                let (s2, a_s) = self_on_tape(t, s)?;
                layers.push((*layer, a_v, a_s));
                v = v2;
                s = s2;
            }
        }
    }
    if let Some(tr) = trace {
        tr.layers = layers
            .into_iter()
            .map(|(l, a, b)| {
                let (a, b) = (t.value(a).clone(), t.value(b).clone());
                match l {
                    Layer::Cross => LayerTrace::Cross { v_to_s: a, s_to_v: b },
                    Layer::SelfAttn => LayerTrace::SelfAttn { video: a, text: b },
                }
            })
            .collect();
    }
    Ok((t.mean_rows(v), t.mean_rows(s)))
}

#[derive(Clone, Debug)]
pub struct LocalOutput {
    /// Mean-pooled final video tokens (not normalized).
    pub v_bar: Vec<f64>,
    /// Mean-pooled final word tokens (not normalized).
    pub s_bar: Vec<f64>,
    pub trace: AttentionTrace,
}

/// Local branch on raw (unprojected) video tokens `TN × d` and text tokens `K × d`.
pub fn local_forward_tokens(
    video: &Matrix,
    words: &Matrix,
    params: &ModelParams,
    attn: &AttentionConfig,
) -> Result<LocalOutput> {
    attn.validate()?;
    let mut t = Tape::new();
    let (wf, wg) = (t.leaf(params.w_f_local.clone()), t.leaf(params.w_g_local.clone()));
    let (x, y) = (t.leaf(video.clone()), t.leaf(words.clone()));
    let v = t.matmul(x, wf)?;
    let v = t.row_normalize(v)?;
    let s = t.matmul(y, wg)?;
    let s = t.row_normalize(s)?;
    let mut trace = AttentionTrace::default();
    let (vb, sb) = stack_on_tape(&mut t, v, s, attn, Some(&mut trace))?;
    Ok(LocalOutput {
        v_bar: t.value(vb).data().to_vec(),
        s_bar: t.value(sb).data().to_vec(),
        trace,
    })
}

pub fn local_forward(
    clip: &ClipFeatures,
    frames: &[usize],
    params: &ModelParams,
    attn: &AttentionConfig,
) -> Result<LocalOutput> {
    check_frames(clip, frames, params)?;
    local_forward_tokens(&clip.grid_tokens(frames), &clip.word_matrix(), params, attn)
}

/// Value and input gradients of the two-sided NCE loss over the rows of
/// `x` and `y` (unit-norm, `B × d′`).
struct NceOp {
    delta: f64,
}

impl NceOp {
    /// Loss plus `dL/dM` for `M = X·Yᵀ`.
    fn eval(&self, m: &Matrix) -> (f64, Matrix) {
        let b = m.rows();
        let mut shifted = m.clone();
        for l in 0..b {
            shifted.set(l, l, m.get(l, l) - self.delta);
        }
        let row = shifted.row_softmax();
        let col = shifted.transpose().row_softmax().transpose();
        let mut loss = 0.0;
        for l in 0..b {
            loss -= col.get(l, l).ln() + row.get(l, l).ln();
        }
        let mut dm = row.add(&col).expect("same shape");
        for l in 0..b {
            dm.set(l, l, dm.get(l, l) - 2.0);
        }
        (loss / b as f64, dm.scale(1.0 / b as f64))
    }
}

impl CustomOp for NceOp {
    fn backward(&self, inputs: &[&Matrix], _output: &Matrix, grad_out: &Matrix) -> Vec<Matrix> {
        let (x, y) = (inputs[0], inputs[1]);
        let m = x.matmul_t(y).expect("validated shapes");
        let dm = self.eval(&m).1.scale(grad_out.get(0, 0));
        vec![dm.matmul(y).expect("shapes"), dm.t_matmul(x).expect("shapes")]
    }
}

/// Two-sided NCE with margin `delta` on the diagonal, averaged over pairs.
pub fn nce_loss(x: &Matrix, y: &Matrix, delta: f64) -> Result<f64> {
    if x.shape() != y.shape() || x.rows() == 0 {
        return Err(Error::dims(format!("NCE pairs {:?} vs {:?}", x.shape(), y.shape())));
    }
    Ok(NceOp { delta }.eval(&x.matmul_t(y)?).0)
}

fn nce_on_tape(t: &mut Tape, x: Var, y: Var, delta: f64) -> Result<Var> {
    let m = t.value(x).matmul_t(t.value(y))?;
    let op = NceOp { delta };
    let loss = op.eval(&m).0;
    Ok(t.custom(&[x, y], Matrix::filled(1, 1, loss), Box::new(op)))
}

/// Loss components for one batch.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct LossParts {
    pub global: f64,
    pub local: f64,
}

impl LossParts {
    pub fn total(&self) -> f64 {
        self.global + self.local
    }
}

/// One training example: a clip and its selected frames.
#[derive(Clone, Copy, Debug)]
pub struct Example<'a> {
    pub clip: &'a ClipFeatures,
    pub frames: &'a [usize],
}

/// `L_global + L_local` over the batch with gradients for all four matrices.
pub fn total_loss_and_grads(
    batch: &[Example<'_>],
    params: &ModelParams,
    cfg: &TrainConfig,
    attn: &AttentionConfig,
) -> Result<(GradBundle, LossParts)> {
    attn.validate()?;
    if batch.is_empty() {
        return Err(Error::NoSamples);
    }
    let mut t = Tape::new();
    let wf = t.leaf(params.w_f.clone());
    let wg = t.leaf(params.w_g.clone());
    let wfl = t.leaf(params.w_f_local.clone());
    let wgl = t.leaf(params.w_g_local.clone());

    let mut parts = LossParts::default();
    let mut terms = Vec::new();
    if cfg.use_global {
        let mut xs = Vec::with_capacity(batch.len());
        let mut ys = Vec::with_capacity(batch.len());
        for ex in batch {
            check_frames(ex.clip, ex.frames, params)?;
            let fg = t.leaf(ex.clip.frame_global.select_rows(ex.frames));
            let f = t.matmul(fg, wf)?;
            let f = t.row_normalize(f)?;
            let f = t.mean_rows(f);
            xs.push(t.row_normalize(f)?);
            let sent = t.leaf(ex.clip.sentence_matrix());
            let g = t.matmul(sent, wg)?;
            ys.push(t.row_normalize(g)?);
        }
        let (x, y) = (t.vstack(&xs)?, t.vstack(&ys)?);
        let l = nce_on_tape(&mut t, x, y, cfg.delta)?;
        parts.global = t.value(l).get(0, 0);
        terms.push(l);
    }
    if cfg.use_local {
        let mut xs = Vec::with_capacity(batch.len());
        let mut ys = Vec::with_capacity(batch.len());
        for ex in batch {
            check_frames(ex.clip, ex.frames, params)?;
            let grid = t.leaf(ex.clip.grid_tokens(ex.frames));
            let v = t.matmul(grid, wfl)?;
            let v = t.row_normalize(v)?;
            let words = t.leaf(ex.clip.word_matrix());
            let s = t.matmul(words, wgl)?;
            let s = t.row_normalize(s)?;
            let (vb, sb) = stack_on_tape(&mut t, v, s, attn, None)?;
            xs.push(t.row_normalize(vb)?);
            ys.push(t.row_normalize(sb)?);
        }
        let (x, y) = (t.vstack(&xs)?, t.vstack(&ys)?);
        let l = nce_on_tape(&mut t, x, y, cfg.delta)?;
        parts.local = t.value(l).get(0, 0);
        terms.push(l);
    }

    let mut grads = params.to_map();
    let value = parts.total();
    match terms.as_slice() {
        [] => grads.values_mut().for_each(|g| *g = Matrix::zeros(g.rows(), g.cols())),
        _ => {
            let loss = match terms[..] {
                [a] => a,
                [a, b] => t.add(a, b)?,
                _ => unreachable!(),
            };
            let g = t.backward(loss)?;
            for (name, var) in [(W_F, wf), (W_G, wg), (W_F_LOCAL, wfl), (W_G_LOCAL, wgl)] {
                let p = &grads[name];
                let gv = g.get_or_zeros(var, p);
                grads.insert(name.to_string(), gv);
            }
        }
    }
    Ok((GradBundle { value, grads }, parts))
}

/// Per-frame heatmaps (`frames × N`) from the rollout of the last self
/// layer before the last cross layer into that cross layer.
///
/// `R = (w·I + (1−w)·A_self)·A_cross`; the score of a token is its `R` mass on
/// the query words, min-max normalized over the whole clip. A flat map is all
/// zeros.
pub fn rollout_heatmap(
    trace: &AttentionTrace,
    query: &[usize],
    residual_weight: f64,
    cells: usize,
) -> Result<Vec<Vec<f64>>> {
    if query.is_empty() {
        return Err(Error::EmptyQuery);
    }
    let last = trace
        .layers
        .iter()
        .rposition(|l| matches!(l, LayerTrace::Cross { .. }))
        .ok_or_else(|| Error::BadParams("trace has no cross layer".into()))?;
    let LayerTrace::Cross { v_to_s, .. } = &trace.layers[last] else { unreachable!() };
    let (m, k) = v_to_s.shape();
    if let Some(&bad) = query.iter().find(|&&q| q >= k) {
        return Err(Error::dims(format!("query word {bad} but only {k} words")));
    }
    if cells == 0 || m % cells != 0 {
        return Err(Error::dims(format!("{m} video tokens do not split into {cells}-cell frames")));
    }
    let a_self = trace.layers[..last].iter().rev().find_map(|l| match l {
        LayerTrace::SelfAttn { video, .. } => Some(video),
        _ => None,
    });
    let r = match a_self {
        Some(a) => {
            let mut mix = a.scale(1.0 - residual_weight);
            for i in 0..m {
                mix.set(i, i, mix.get(i, i) + residual_weight);
            }
            mix.matmul(v_to_s)?
        }
        None => v_to_s.clone(),
    };
    let raw: Vec<f64> = (0..m).map(|i| query.iter().map(|&q| r.get(i, q)).sum()).collect();
    Ok(min_max(&raw).chunks(cells).map(<[f64]>::to_vec).collect())
}

/// Min-max normalization to `[0, 1]`. A range within rounding of zero
/// (`1e-12` relative) counts as flat and maps to zeros.
pub fn min_max(v: &[f64]) -> Vec<f64> {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi - lo > 1e-12 * hi.abs().max(lo.abs()).max(1.0)) {
        return vec![0.0; v.len()];
    }
    v.iter().map(|x| (x - lo) / (hi - lo)).collect()
}
