use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{total_loss_and_grads, AttentionConfig, Example, LossParts, ModelParams};
use crate::datamodel::{read_jsonl, write_jsonl, ClipFeatures};
use crate::error::{Error, Result};
use crate::numcore::{Matrix, ParamMap, Rng};
use crate::otselect::{select_frames, SelectionStrategy, SinkhornConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Projected dimension d′.
    pub proj_dim: usize,
    pub delta: f64,
    pub lr: f64,
    pub epochs: usize,
    pub use_global: bool,
    pub use_local: bool,
    pub optimizer: Optimizer,
    pub seed: u64,
    /// Frames kept per clip (T).
    pub frames: usize,
    pub strategy: SelectionStrategy,
    pub sinkhorn: SinkhornConfig,
    pub reselect_every_epoch: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            proj_dim: 64,
            delta: 0.1,
            lr: 1e-4,
            epochs: 10,
            use_global: true,
            use_local: true,
            optimizer: Optimizer::Adam,
            seed: 0,
            frames: 8,
            strategy: SelectionStrategy::Sinkhorn,
            sinkhorn: SinkhornConfig::default(),
            reselect_every_epoch: true,
        }
    }
}

impl TrainConfig {
    /// Initial projections drawn from a stream derived from `seed`.
    pub fn init_params(&self, dim: usize) -> ModelParams {
        ModelParams::random(dim, self.proj_dim, &mut Rng::new(self.seed).derive(0x494e_4954))
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.proj_dim == 0 {
            return Err(Error::BadParams("batch_size and proj_dim must be at least 1".into()));
        }
        if !(self.delta >= 0.0) || !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::BadParams("delta and lr must be non-negative".into()));
        }
        if self.frames == 0 {
            return Err(Error::BadT(0));
        }
        self.sinkhorn.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub loss_global: f64,
    pub loss_local: f64,
    pub loss_total: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub params: ModelParams,
    /// Entry 0 is the loss at the initial parameters, entry `e` the loss after epoch `e`.
    pub log: Vec<EpochLoss>,
    /// Final frame selection per clip.
    pub selections: Vec<Vec<usize>>,
}

struct Adam {
    m: ParamMap,
    v: ParamMap,
    step: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(params: &ParamMap) -> Self {
        let zeros: ParamMap = params
            .iter()
            .map(|(n, p)| (n.clone(), Matrix::zeros(p.rows(), p.cols())))
            .collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    fn update(&mut self, params: &mut ParamMap, grads: &ParamMap, lr: f64) {
        self.step += 1;
        let c1 = 1.0 - Self::B1.powi(self.step);
        let c2 = 1.0 - Self::B2.powi(self.step);
        for (name, p) in params.iter_mut() {
            let g = grads[name].data();
            let m = self.m.get_mut(name).unwrap().data_mut();
            let v = self.v.get_mut(name).unwrap().data_mut();
            for (i, w) in p.data_mut().iter_mut().enumerate() {
                m[i] = Self::B1 * m[i] + (1.0 - Self::B1) * g[i];
                v[i] = Self::B2 * v[i] + (1.0 - Self::B2) * g[i] * g[i];
                *w -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + Self::EPS);
            }
        }
    }
}

fn select_all(
    clips: &[ClipFeatures],
    params: &ModelParams,
    cfg: &TrainConfig,
) -> Result<Vec<Vec<usize>>> {
    clips
        .par_iter()
        .map(|c| select_frames(c, cfg.strategy, cfg.frames, params, &cfg.sinkhorn))
        .collect()
}

/// Sample-weighted mean batch loss over consecutive, unshuffled batches.
fn eval_loss(
    clips: &[ClipFeatures],
    sel: &[Vec<usize>],
    params: &ModelParams,
    cfg: &TrainConfig,
    attn: &AttentionConfig,
) -> Result<LossParts> {
    let examples: Vec<Example> = clips
        .iter()
        .zip(sel)
        .map(|(clip, f)| Example { clip, frames: f })
        .collect();
    let mut sum = LossParts::default();
    for batch in examples.chunks(cfg.batch_size) {
        let (_, p) = total_loss_and_grads(batch, params, cfg, attn)?;
        let w = batch.len() as f64;
        sum.global += w * p.global;
        sum.local += w * p.local;
    }
    let n = examples.len() as f64;
    Ok(LossParts {
        global: sum.global / n,
        local: sum.local / n,
    })
}

fn entry(epoch: usize, p: LossParts) -> EpochLoss {
    EpochLoss {
        epoch,
        loss_global: p.global,
        loss_local: p.local,
        loss_total: p.total(),
    }
}

/// Mini-batch training with frame selection under the current parameters.
///
/// Batches are drawn in a seeded shuffled order each epoch. The log holds
/// `epochs + 1` evaluations over fixed, unshuffled batches.
pub fn train(
    clips: &[ClipFeatures],
    params0: &ModelParams,
    cfg: &TrainConfig,
    attn: &AttentionConfig,
) -> Result<TrainOutput> {
    cfg.validate()?;
    attn.validate()?;
    params0.validate()?;
    if clips.is_empty() {
        return Err(Error::NoSamples);
    }
    let mut params = params0.clone();
    let mut map = params.to_map();
    let mut adam = Adam::new(&map);
    let mut rng = Rng::new(cfg.seed).derive(0x5348_5546);
    let mut sel = select_all(clips, &params, cfg)?;
    let mut log = vec![entry(0, eval_loss(clips, &sel, &params, cfg, attn)?)];
    let mut order: Vec<usize> = (0..clips.len()).collect();

    for epoch in 1..=cfg.epochs {
        rng.shuffle(&mut order);
        for idx in order.chunks(cfg.batch_size) {
            let batch: Vec<Example> = idx
                .iter()
                .map(|&i| Example {
                    clip: &clips[i],
                    frames: &sel[i],
                })
                .collect();
            let (gb, _) = total_loss_and_grads(&batch, &params, cfg, attn)?;
            match cfg.optimizer {
                Optimizer::Adam => adam.update(&mut map, &gb.grads, cfg.lr),
                Optimizer::Sgd => {
                    for (name, p) in map.iter_mut() {
                        for (w, g) in p.data_mut().iter_mut().zip(gb.grads[name].data()) {
                            *w -= cfg.lr * g;
                        }
                    }
                }
            }
            params = ModelParams::from_map(&map)?;
        }
        if cfg.reselect_every_epoch {
            sel = select_all(clips, &params, cfg)?;
        }
        log.push(entry(epoch, eval_loss(clips, &sel, &params, cfg, attn)?));
    }
    Ok(TrainOutput {
        params,
        log,
        selections: sel,
    })
}

pub fn write_train_log(path: &Path, log: &[EpochLoss]) -> Result<()> {
    write_jsonl(path, log)
}

pub fn read_train_log(path: &Path) -> Result<Vec<EpochLoss>> {
    Ok(read_jsonl(path)?.into_iter().map(|(_, e)| e).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::{synth_generate, SynthConfig};

    fn small() -> (Vec<ClipFeatures>, TrainConfig) {
        let data = synth_generate(&SynthConfig {
            videos: 3,
            frames_per_video: 16,
            frames_per_clip: 8,
            action_frames: 2,
            cells: 4,
            dim: 8,
            ..Default::default()
        })
        .unwrap();
        let cfg = TrainConfig {
            batch_size: 2,
            epochs: 2,
            frames: 2,
            lr: 1e-2,
            seed: 3,
            ..Default::default()
        };
        (data.clips, cfg)
    }

    #[test]
    fn zero_lr_keeps_params() {
        let (clips, mut cfg) = small();
        cfg.lr = 0.0;
        let p0 = ModelParams::random(8, 4, &mut Rng::new(1));
        let out = train(&clips, &p0, &cfg, &AttentionConfig::default()).unwrap();
        assert_eq!(out.params, p0);
        assert_eq!(out.log.len(), 3);
        assert!(out.log.windows(2).all(|w| w[0].loss_total == w[1].loss_total));
    }

    #[test]
    fn deterministic_in_seed() {
        let (clips, cfg) = small();
        let p0 = ModelParams::random(8, 4, &mut Rng::new(1));
        let a = train(&clips, &p0, &cfg, &AttentionConfig::default()).unwrap();
        let b = train(&clips, &p0, &cfg, &AttentionConfig::default()).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.log, b.log);
        assert_ne!(a.params, p0);
    }

    #[test]
    fn log_round_trip() {
        let log = vec![EpochLoss {
            epoch: 0,
            loss_global: 1.0,
            loss_local: 0.5,
            loss_total: 1.5,
        }];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        write_train_log(&path, &log).unwrap();
        assert_eq!(read_train_log(&path).unwrap(), log);
    }
}
