//! Word-to-frame similarity, entropic optimal transport between words and
//! candidate frames, and training-time frame selection.

use serde::{Deserialize, Serialize};

use crate::datamodel::ClipFeatures;
use crate::error::{Error, Result};
use crate::groundnet::{project, ModelParams};
use crate::numcore::{log_sum_exp, Matrix};

/// Switch to log-domain scaling above this `max|P|/ε`.
const LOG_DOMAIN_RATIO: f64 = 500.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SinkhornConfig {
    pub epsilon: f64,
    pub max_iters: usize,
    pub tol: f64,
    pub log_domain: bool,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.1,
            max_iters: 500,
            tol: 1e-6,
            log_domain: false,
        }
    }
}

impl SinkhornConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || !(self.tol > 0.0) || self.max_iters == 0 {
            return Err(Error::BadParams(
                "Sinkhorn needs epsilon > 0, tol > 0 and at least one iteration".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SelectionStrategy {
    None,
    Global,
    Local,
    Sinkhorn,
}

/// Transport plan `Q` (`U × K`) with its convergence record.
#[derive(Clone, Debug)]
pub struct Plan {
    pub q: Matrix,
    pub iterations: usize,
    pub violation: f64,
    pub log_domain: bool,
}

/// `P[k][u] = cosine(g(word_k), f(frame_global_u))` with the global projections.
pub fn similarity_matrix(clip: &ClipFeatures, params: &ModelParams) -> Result<Matrix> {
    if clip.dim != params.dim() {
        return Err(Error::dims(format!(
            "clip dimension {} vs projection input {}",
            clip.dim,
            params.dim()
        )));
    }
    let words = project(&clip.word_matrix(), &params.w_g)?;
    let frames = project(&clip.frame_global, &params.w_f)?;
    let mut p = words.matmul_t(&frames)?;
    p.data_mut().iter_mut().for_each(|v| *v = v.clamp(-1.0, 1.0));
    Ok(p)
}

/// Largest L∞ deviation of the row sums from `1/U` and column sums from `1/K`.
pub fn marginal_violation(q: &Matrix) -> f64 {
    let (u, k) = q.shape();
    let rows = q.row_sums().into_iter().map(|s| (s - 1.0 / u as f64).abs());
    let cols = q.col_sums().into_iter().map(|s| (s - 1.0 / k as f64).abs());
    rows.chain(cols).fold(0.0, f64::max)
}

/// Scales `exp(Pᵀ/ε)` onto the polytope with row sums `1/U` and column sums
/// `1/K`, where `P` is `K × U`.
///
/// Returns [`Error::NotConverged`] with the last plan when `max_iters` runs
/// out before the marginal violation drops below `tol`.
pub fn sinkhorn(p: &Matrix, cfg: &SinkhornConfig) -> Result<Plan> {
    cfg.validate()?;
    if !p.is_finite() {
        return Err(Error::NonFinite("similarity matrix"));
    }
    let (k, u) = p.shape();
    if k == 0 || u == 0 {
        return Err(Error::dims("empty similarity matrix"));
    }
    let lo = p.data().iter().copied().fold(f64::INFINITY, f64::min);
    let hi = p.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    // the range check guards exp underflow that the magnitude check alone misses
    let log_domain = cfg.log_domain
        || p.max_abs() / cfg.epsilon > LOG_DOMAIN_RATIO
        || (hi - lo) / cfg.epsilon > LOG_DOMAIN_RATIO;
    let (q, iterations, violation) = if log_domain {
        scale_log(p, cfg, hi)
    } else {
        scale_plain(p, cfg, hi)
    };
    if violation < cfg.tol {
        Ok(Plan {
            q,
            iterations,
            violation,
            log_domain,
        })
    } else {
        Err(Error::NotConverged {
            iterations,
            violation,
            plan: q,
        })
    }
}

fn scale_plain(p: &Matrix, cfg: &SinkhornConfig, shift: f64) -> (Matrix, usize, f64) {
    let (k, u) = p.shape();
    let (ru, ck) = (1.0 / u as f64, 1.0 / k as f64);
    let mut kern = Matrix::zeros(u, k);
    for i in 0..u {
        for j in 0..k {
            kern.set(i, j, ((p.get(j, i) - shift) / cfg.epsilon).exp());
        }
    }
    let mut alpha = vec![1.0; u];
    let mut beta = vec![1.0; k];
    let mut q = Matrix::zeros(u, k);
    let mut violation = f64::INFINITY;
    let mut it = 0;
    while it < cfg.max_iters {
        it += 1;
        for (i, a) in alpha.iter_mut().enumerate() {
            let s: f64 = kern.row(i).iter().zip(&beta).map(|(x, b)| x * b).sum();
            *a = ru / s;
        }
        for (j, b) in beta.iter_mut().enumerate() {
            let mut s = 0.0;
            for (i, a) in alpha.iter().enumerate() {
                s += kern.get(i, j) * a;
            }
            *b = ck / s;
        }
        for i in 0..u {
            for j in 0..k {
                q.set(i, j, alpha[i] * kern.get(i, j) * beta[j]);
            }
        }
        violation = marginal_violation(&q);
        if violation < cfg.tol {
            break;
        }
    }
    (q, it, violation)
}

fn scale_log(p: &Matrix, cfg: &SinkhornConfig, shift: f64) -> (Matrix, usize, f64) {
    let (k, u) = p.shape();
    let (lu, lk) = (-(u as f64).ln(), -(k as f64).ln());
    let mut logk = Matrix::zeros(u, k);
    for i in 0..u {
        for j in 0..k {
            logk.set(i, j, (p.get(j, i) - shift) / cfg.epsilon);
        }
    }
    let mut f = vec![0.0; u];
    let mut g = vec![0.0; k];
    let mut q = Matrix::zeros(u, k);
    let mut violation = f64::INFINITY;
    let mut it = 0;
    while it < cfg.max_iters {
        it += 1;
        for (i, fi) in f.iter_mut().enumerate() {
            *fi = lu - log_sum_exp(logk.row(i).iter().zip(&g).map(|(l, gj)| l + gj));
        }
        for (j, gj) in g.iter_mut().enumerate() {
            *gj = lk - log_sum_exp((0..u).map(|i| logk.get(i, j) + f[i]));
        }
        for i in 0..u {
            for j in 0..k {
                q.set(i, j, (f[i] + logk.get(i, j) + g[j]).exp());
            }
        }
        violation = marginal_violation(&q);
        if violation < cfg.tol {
            break;
        }
    }
    (q, it, violation)
}

/// Per-frame selection score under `strategy`; higher is better.
///
/// The Sinkhorn score is the transported similarity `Σ_k Q[u][k]·P[k][u]`.
/// Plain row sums of a converged plan are all `1/U` and cannot rank frames.
pub fn frame_scores(
    clip: &ClipFeatures,
    strategy: SelectionStrategy,
    params: &ModelParams,
    cfg: &SinkhornConfig,
) -> Result<Vec<f64>> {
    let u = clip.frames();
    match strategy {
        SelectionStrategy::None => {
            // distance from the centre of the window, negated
            let c = (u as f64 - 1.0) / 2.0;
            Ok((0..u).map(|i| -(i as f64 - c).abs()).collect())
        }
        SelectionStrategy::Global => {
            let s = project(&clip.sentence_matrix(), &params.w_g)?;
            let f = project(&clip.frame_global, &params.w_f)?;
            Ok(f.matmul_t(&s)?.data().to_vec())
        }
        SelectionStrategy::Local => {
            let p = similarity_matrix(clip, params)?;
            Ok((0..u)
                .map(|i| (0..p.rows()).map(|k| p.get(k, i)).fold(f64::NEG_INFINITY, f64::max))
                .collect())
        }
        SelectionStrategy::Sinkhorn => {
            let p = similarity_matrix(clip, params)?;
            let q = match sinkhorn(&p, cfg) {
                Ok(plan) => plan.q,
                Err(Error::NotConverged { plan, .. }) => plan,
                Err(e) => return Err(e),
            };
            Ok((0..u)
                .map(|i| (0..p.rows()).map(|k| q.get(i, k) * p.get(k, i)).sum())
                .collect())
        }
    }
}

/// The `t` highest-scoring indices (ties to the lower index), ascending.
pub fn top_t(scores: &[f64], t: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(t);
    idx.sort_unstable();
    idx
}

/// Exactly `min(t, U)` distinct frame indices in ascending order.
pub fn select_frames(
    clip: &ClipFeatures,
    strategy: SelectionStrategy,
    t: usize,
    params: &ModelParams,
    cfg: &SinkhornConfig,
) -> Result<Vec<usize>> {
    if t < 1 {
        return Err(Error::BadT(t));
    }
    let u = clip.frames();
    if t >= u {
        return Ok((0..u).collect());
    }
    if strategy == SelectionStrategy::None {
        let start = (u - t) / 2;
        return Ok((start..start + t).collect());
    }
    Ok(top_t(&frame_scores(clip, strategy, params, cfg)?, t))
}
