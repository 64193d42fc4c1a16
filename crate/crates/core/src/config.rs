//! One JSON document holding every module configuration, as read by the
//! command-line tool and the end-to-end fixture.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::benchtools::BenchConfig;
use crate::datamodel::{ClipFeatures, SynthConfig};
use crate::error::{Error, Result};
use crate::groundnet::{AttentionConfig, TrainConfig};
use crate::infer::InferConfig;
use crate::metrics::EvalConfig;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub synth: SynthConfig,
    /// Trailing synthetic videos written to the held-out split.
    pub holdout_videos: usize,
    pub train: TrainConfig,
    pub attention: AttentionConfig,
    pub infer: InferConfig,
    pub eval: EvalConfig,
    pub bench: BenchConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: RunConfig = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            field: e.to_string().split('`').nth(1).unwrap_or("?").to_string(),
            msg: e.to_string(),
        })?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        if self.holdout_videos > self.synth.videos {
            return Err(Error::BadParams("holdout_videos exceeds videos".into()));
        }
        self.train.validate()?;
        self.attention.validate()?;
        self.infer.validate()?;
        self.bench.validate()
    }

    /// Splits clips into (train, held-out) by video: the last
    /// `holdout_videos` distinct video ids in sorted order are held out.
    pub fn split<'a>(&self, clips: &'a [ClipFeatures]) -> (Vec<&'a ClipFeatures>, Vec<&'a ClipFeatures>) {
        let mut ids: Vec<&str> = clips.iter().map(|c| c.video_id.as_str()).collect();
        ids.sort_unstable();
        ids.dedup();
        let held: std::collections::BTreeSet<&str> =
            ids.iter().rev().take(self.holdout_videos).copied().collect();
        clips.iter().partition(|c| !held.contains(c.video_id.as_str()))
    }
}
