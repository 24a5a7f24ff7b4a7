//! JSON persistence for flow-map models.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fml::flowmap::{FlowMapModel, Normalization};
use crate::fml::mlp::{Activation, Layer, Mlp};
use crate::scalar::Scalar;

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    /// Row-major `out × in`.
    #[serde(rename = "W")]
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormRecord {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    #[serde(rename = "n_M")]
    pub n_m: usize,
    pub dt: f64,
    pub widths: Vec<usize>,
    pub activation: Activation,
    pub norm: NormRecord,
    pub layers: Vec<LayerRecord>,
}

pub(crate) fn mlp_to_records<T: Scalar>(mlp: &Mlp<T>) -> Vec<LayerRecord> {
    mlp.layers()
        .iter()
        .map(|l| LayerRecord {
            w: l.w.iter().map(|x| x.as_f64()).collect(),
            b: l.b.iter().map(|x| x.as_f64()).collect(),
        })
        .collect()
}

pub(crate) fn mlp_from_records<T: Scalar>(widths: &[usize], layers: &[LayerRecord]) -> Result<Mlp<T>> {
    if widths.len() != layers.len() + 1 {
        return Err(Error::Format(format!(
            "{} widths for {} layers",
            widths.len(),
            layers.len()
        )));
    }
    let layers = layers
        .iter()
        .zip(widths.windows(2))
        .map(|(rec, w)| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let wm = Array2::from_shape_vec((fan_out, fan_in), rec.w.iter().map(|&x| T::lit(x)).collect())
                .map_err(|e| Error::Format(format!("weight matrix {fan_out}×{fan_in}: {e}")))?;
            if rec.b.len() != fan_out {
                return Err(Error::Format(format!("bias length {} vs width {fan_out}", rec.b.len())));
            }
            Ok(Layer {
                w: wm,
                b: Array1::from(rec.b.iter().map(|&x| T::lit(x)).collect::<Vec<_>>()),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Mlp::from_layers(layers)
}

impl<T: Scalar> FlowMapModel<T> {
    pub fn to_file(&self) -> ModelFile {
        let norm = self.norm();
        ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            n_m: self.n_memory(),
            dt: self.dt().as_f64(),
            widths: self.mlp().widths(),
            activation: self.mlp().activation(),
            norm: NormRecord {
                mean: norm.mean.map(Scalar::as_f64),
                std: norm.std.map(Scalar::as_f64),
            },
            layers: mlp_to_records(self.mlp()),
        }
    }

    pub fn from_file(file: &ModelFile) -> Result<Self> {
        if file.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "model format version {} (expected {MODEL_FORMAT_VERSION})",
                file.format_version
            )));
        }
        let mlp = mlp_from_records(&file.widths, &file.layers)?;
        let norm = Normalization {
            mean: file.norm.mean.map(T::lit),
            std: file.norm.std.map(T::lit),
        };
        FlowMapModel::new(mlp, file.n_m, T::lit(file.dt), norm)
    }
}

pub fn save_model<T: Scalar>(model: &FlowMapModel<T>, path: &Path) -> Result<()> {
    write_json(path, &model.to_file())
}

pub fn load_model<T: Scalar>(path: &Path) -> Result<FlowMapModel<T>> {
    let file: ModelFile = read_json(path)?;
    FlowMapModel::from_file(&file).map_err(|e| Error::parse(path, None, e.to_string()))
}

pub(crate) fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let text = serde_json::to_string(value).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<S: for<'de> Deserialize<'de>>(path: &Path) -> Result<S> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, Some(e.line()), e.to_string()))
}
