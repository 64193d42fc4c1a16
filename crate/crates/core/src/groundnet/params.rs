use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datamodel::{write_json, FORMAT_VERSION};
use crate::error::{Error, Result};
use crate::numcore::{Matrix, ParamMap, Rng};

pub const W_F: &str = "w_f";
pub const W_G: &str = "w_g";
pub const W_F_LOCAL: &str = "w_f_local";
pub const W_G_LOCAL: &str = "w_g_local";

/// The four trainable projections, each `d × d′`: video and text global
/// (`w_f`, `w_g`) and video and text local token projections.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub w_f: Matrix,
    pub w_g: Matrix,
    pub w_f_local: Matrix,
    pub w_g_local: Matrix,
}

impl ModelParams {
    /// Independent Gaussian entries with variance `1/d`.
    pub fn random(d: usize, d_proj: usize, rng: &mut Rng) -> Self {
        let sigma = 1.0 / (d as f64).sqrt();
        let mut draw = || Matrix::new(d, d_proj, rng.normal_vec(d * d_proj, sigma)).expect("finite draws");
        Self {
            w_f: draw(),
            w_g: draw(),
            w_f_local: draw(),
            w_g_local: draw(),
        }
    }

    pub fn identity(d: usize) -> Self {
        let i = Matrix::identity(d);
        Self {
            w_f: i.clone(),
            w_g: i.clone(),
            w_f_local: i.clone(),
            w_g_local: i,
        }
    }

    pub fn dim(&self) -> usize {
        self.w_f.rows()
    }

    pub fn proj_dim(&self) -> usize {
        self.w_f.cols()
    }

    pub fn validate(&self) -> Result<()> {
        let shape = self.w_f.shape();
        for (name, m) in self.iter() {
            if m.shape() != shape {
                return Err(Error::dims(format!("{name} is {:?}, w_f is {shape:?}", m.shape())));
            }
            if !m.is_finite() {
                return Err(Error::NonFinite("projection matrix"));
            }
        }
        if shape.0 == 0 || shape.1 == 0 {
            return Err(Error::dims("empty projection matrices"));
        }
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&'static str, &Matrix)> {
        [
            (W_F, &self.w_f),
            (W_G, &self.w_g),
            (W_F_LOCAL, &self.w_f_local),
            (W_G_LOCAL, &self.w_g_local),
        ]
        .into_iter()
    }

    pub fn to_map(&self) -> ParamMap {
        self.iter().map(|(n, m)| (n.to_string(), m.clone())).collect()
    }

    pub fn from_map(map: &ParamMap) -> Result<Self> {
        let get = |n: &str| {
            map.get(n)
                .cloned()
                .ok_or_else(|| Error::dims(format!("parameter {n} missing")))
        };
        let p = Self {
            w_f: get(W_F)?,
            w_g: get(W_G)?,
            w_f_local: get(W_F_LOCAL)?,
            w_g_local: get(W_G_LOCAL)?,
        };
        p.validate()?;
        Ok(p)
    }

    /// Writes `params.json`; `config` is echoed verbatim for provenance.
    pub fn save(&self, path: &Path, config: &serde_json::Value) -> Result<()> {
        let mats = self
            .iter()
            .map(|(n, m)| {
                (
                    n.to_string(),
                    MatrixFile {
                        rows: m.rows(),
                        cols: m.cols(),
                        data: m.data().iter().map(|&x| x as f32).collect(),
                    },
                )
            })
            .collect();
        write_json(
            path,
            &ParamsFile {
                format_version: FORMAT_VERSION,
                dim: self.dim(),
                proj_dim: self.proj_dim(),
                matrices: mats,
                config: config.clone(),
            },
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let f: ParamsFile = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            field: e.to_string().split('`').nth(1).unwrap_or("?").to_string(),
            msg: e.to_string(),
        })?;
        let schema = |msg: String| Error::Schema {
            path: path.to_path_buf(),
            line: 1,
            msg,
        };
        if f.format_version != FORMAT_VERSION {
            return Err(schema(format!("format_version {}", f.format_version)));
        }
        let mut map = ParamMap::new();
        for (name, m) in f.matrices {
            let data = m.data.iter().map(|&x| x as f64).collect();
            let mat = Matrix::new(m.rows, m.cols, data).map_err(|e| schema(format!("{name}: {e}")))?;
            map.insert(name, mat);
        }
        let p = Self::from_map(&map).map_err(|e| schema(e.to_string()))?;
        if p.dim() != f.dim || p.proj_dim() != f.proj_dim {
            return Err(schema("matrix shapes disagree with dim/proj_dim".into()));
        }
        Ok(p)
    }

    /// Values as they read back from 32-bit storage.
    pub fn quantized(&self) -> Self {
        let q = |m: &Matrix| {
            Matrix::new(m.rows(), m.cols(), m.data().iter().map(|&x| x as f32 as f64).collect())
                .expect("finite")
        };
        Self {
            w_f: q(&self.w_f),
            w_g: q(&self.w_g),
            w_f_local: q(&self.w_f_local),
            w_g_local: q(&self.w_g_local),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct MatrixFile {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

#[derive(Serialize, Deserialize)]
struct ParamsFile {
    format_version: u32,
    dim: usize,
    proj_dim: usize,
    matrices: std::collections::BTreeMap<String, MatrixFile>,
    #[serde(default)]
    config: serde_json::Value,
}

/// `normalize(x · w)` row-wise.
pub fn project(x: &Matrix, w: &Matrix) -> Result<Matrix> {
    x.matmul(w)?.row_normalize()
}
