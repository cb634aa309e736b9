//! Binary model checkpoints with a JSON sidecar.
//!
//! Layout, all integers little-endian `u32`:
//!
//! ```text
//! "GCEC" version
//! height width channels connectivity hops detach aggregation
//! edge_hidden edge_out weight_hidden gcn0 gcn1 gcn2 n_classes
//! tensor_count
//! tensor_count × (rank dims... f32 values...)
//! ```
//!
//! Tensors follow [`ModelParams::tensors`] order. The sidecar
//! (`<file>.json`) echoes the config and the parameter count.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::graph::Connectivity;
use crate::layers::{count_parameters, parameter_breakdown, Affine, Aggregation, LayerCount, LayerDims, ModelConfig, ModelParams};
use crate::tensor::{Shape, Tensor};

pub const MAGIC: &[u8; 4] = b"GCEC";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ModelParams<f32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub format: String,
    pub version: u32,
    pub count_parameters: usize,
    pub layers: Vec<LayerCount>,
    pub config: ModelConfig,
}

/// Path of the JSON sidecar belonging to a checkpoint file.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".json");
    PathBuf::from(name)
}

fn push(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn u32(&mut self) -> Result<u32, String> {
        let b = self
            .bytes
            .get(self.pos..self.pos + 4)
            .ok_or_else(|| format!("truncated at offset {}", self.pos))?;
        self.pos += 4;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn usize(&mut self) -> Result<usize, String> {
        self.u32().map(|v| v as usize)
    }
}

impl Checkpoint {
    pub fn new(config: ModelConfig, params: ModelParams<f32>) -> Result<Self, ModelError> {
        config.validate()?;
        params.check_config(&config)?;
        Ok(Checkpoint { config, params })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let c = &self.config;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        push(&mut out, VERSION as usize);
        for v in [
            c.height,
            c.width,
            c.channels,
            c.connectivity.count(),
            c.edge_conv_hops,
            c.detach_edge_weights as usize,
            match c.aggregation {
                Aggregation::Max => 0,
                Aggregation::Mean => 1,
            },
            c.dims.edge_hidden,
            c.dims.edge_out,
            c.dims.weight_hidden,
            c.dims.gcn[0],
            c.dims.gcn[1],
            c.dims.gcn[2],
            c.n_classes,
        ] {
            push(&mut out, v);
        }
        let tensors = self.params.tensors();
        push(&mut out, tensors.len());
        for t in tensors {
            let dims = t.shape().dims();
            push(&mut out, dims.len());
            for d in dims {
                push(&mut out, d);
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, String> {
        if bytes.get(..4) != Some(MAGIC.as_slice()) {
            return Err("missing GCEC magic".into());
        }
        let mut r = Reader { bytes, pos: 4 };
        let version = r.u32()?;
        if version != VERSION {
            return Err(format!("unsupported version {version}"));
        }
        let mut h = [0usize; 14];
        for v in &mut h {
            *v = r.usize()?;
        }
        let connectivity = Connectivity::from_count(h[3]).map_err(|e| e.to_string())?;
        let aggregation = match h[6] {
            0 => Aggregation::Max,
            1 => Aggregation::Mean,
            other => return Err(format!("unknown aggregation code {other}")),
        };
        let config = ModelConfig {
            height: h[0],
            width: h[1],
            channels: h[2],
            connectivity,
            edge_conv_hops: h[4],
            detach_edge_weights: h[5] != 0,
            aggregation,
            dims: LayerDims {
                edge_hidden: h[7],
                edge_out: h[8],
                weight_hidden: h[9],
                gcn: [h[10], h[11], h[12]],
            },
            n_classes: h[13],
        };
        config.validate().map_err(|e| e.to_string())?;
        let count = r.usize()?;
        if count != 16 {
            return Err(format!("expected 16 tensors, found {count}"));
        }
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let rank = r.usize()?;
            let dims = (0..rank).map(|_| r.usize()).collect::<Result<Vec<_>, _>>()?;
            let shape = Shape::from_dims(&dims).ok_or_else(|| format!("unsupported tensor rank {rank}"))?;
            let n = shape.numel();
            let raw = bytes
                .get(r.pos..r.pos + 4 * n)
                .ok_or_else(|| format!("tensor data truncated at offset {}", r.pos))?;
            r.pos += 4 * n;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            tensors.push(Tensor::new(shape, data).map_err(|e| e.to_string())?);
        }
        if r.pos != bytes.len() {
            return Err(format!("{} trailing bytes", bytes.len() - r.pos));
        }
        let mut it = tensors.into_iter();
        let mut affines = Vec::with_capacity(8);
        while let (Some(w), Some(b)) = (it.next(), it.next()) {
            affines.push(Affine::from_parts(w, b).map_err(|e| e.to_string())?);
        }
        let params = ModelParams::from_affines(affines).map_err(|e| e.to_string())?;
        params.check_config(&config).map_err(|e| e.to_string())?;
        Ok(Checkpoint { config, params })
    }

    pub fn sidecar(&self) -> Sidecar {
        Sidecar {
            format: "GCEC".into(),
            version: VERSION,
            count_parameters: count_parameters(&self.params),
            layers: parameter_breakdown(&self.config),
            config: self.config.clone(),
        }
    }

    /// Writes the checkpoint and its sidecar.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        let path = path.as_ref();
        let io = |p: &Path| {
            let p = p.to_path_buf();
            move |source| ModelError::Io { path: p, source }
        };
        fs::write(path, self.to_bytes()).map_err(io(path))?;
        let side = sidecar_path(path);
        let mut json = serde_json::to_string_pretty(&self.sidecar()).expect("sidecar serializes");
        json.push('\n');
        fs::write(&side, json).map_err(io(&side))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|source| ModelError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Checkpoint::from_bytes(&bytes).map_err(|message| ModelError::Checkpoint {
            path: path.to_path_buf(),
            message,
        })
    }
}

/// Human-readable list of differences between two configs, empty if equal.
pub fn config_diff(expected: &ModelConfig, found: &ModelConfig) -> Vec<String> {
    let a = serde_json::to_value(expected).expect("config serializes");
    let b = serde_json::to_value(found).expect("config serializes");
    let mut out = Vec::new();
    diff_values("", &a, &b, &mut out);
    out
}

fn diff_values(prefix: &str, a: &serde_json::Value, b: &serde_json::Value, out: &mut Vec<String>) {
    match (a, b) {
        (serde_json::Value::Object(x), serde_json::Value::Object(y)) => {
            for (k, va) in x {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                match y.get(k) {
                    Some(vb) => diff_values(&key, va, vb, out),
                    None => out.push(format!("{key}: {va} vs missing")),
                }
            }
        }
        _ if a != b => out.push(format!("{prefix}: {a} vs {b}")),
        _ => {}
    }
}
