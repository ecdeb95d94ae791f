//! JSON documents exchanged by the CLI, the dataset directory and the
//! HTTP service.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use lindeform_core::datagen::{Family, ProcShape, Split};
use lindeform_core::deform::Dictionary;
use lindeform_core::eval::{EvalConfig, MetricsReport};
use lindeform_core::geometry::{Point, PointCloud};
use lindeform_core::handles::{HandleKind, PartBox};
use lindeform_core::nets::Variant;

use crate::Result;

/// `shapes/<id>.json` in a dataset directory. Points live in
/// `clouds/<id>.xyz`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapeFile {
    pub id: String,
    pub family: Family,
    pub split: Split,
    pub params: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub with_arms: Option<bool>,
    pub parts: Vec<PartBox>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HandleInfo {
    pub index: usize,
    pub part: usize,
    pub kind: HandleKind,
    pub axis: usize,
    pub default: f64,
    /// `0` for scales, `null` for translations.
    pub lower_bound: Option<f64>,
}

/// Full shape JSON served by `GET /api/shapes/{id}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeView {
    #[serde(flatten)]
    pub file: ShapeFile,
    pub handles: Vec<HandleInfo>,
    pub points: Vec<Point>,
}

impl ShapeView {
    pub fn new(id: &str, split: Split, shape: &ProcShape) -> Self {
        let hs = &shape.handle_space;
        let handles = hs
            .handles
            .iter()
            .enumerate()
            .map(|(index, h)| HandleInfo {
                index,
                part: h.part,
                kind: h.kind,
                axis: h.axis,
                default: hs.defaults[index],
                lower_bound: hs.lower_bounds[index],
            })
            .collect();
        ShapeView {
            file: shape_file(id, split, shape),
            handles,
            points: shape.cloud.points().to_vec(),
        }
    }
}

pub fn shape_file(id: &str, split: Split, shape: &ProcShape) -> ShapeFile {
    ShapeFile {
        id: id.to_string(),
        family: shape.family(),
        split,
        params: shape.params.values.clone(),
        with_arms: shape.params.with_arms,
        parts: shape.parts.clone(),
    }
}

/// One entry of `GET /api/shapes`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeSummary {
    pub id: String,
    pub family: Family,
    pub split: Split,
    pub num_handles: usize,
    pub num_points: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub n: usize,
    pub k: usize,
    pub variant: Variant,
}

/// Predicted dictionary of one shape; `columns[j]` is the flattened
/// `3n` offset field of element `j`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DictionaryFile {
    pub n: usize,
    pub k: usize,
    pub columns: Vec<Vec<f64>>,
}

impl From<&Dictionary> for DictionaryFile {
    fn from(d: &Dictionary) -> Self {
        DictionaryFile { n: d.n(), k: d.k(), columns: d.columns() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HandleEdit {
    pub handle: usize,
    pub value: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectRequest {
    #[serde(default)]
    pub edits: Vec<HandleEdit>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectResponse {
    pub z_hat: Vec<f64>,
    pub points: Vec<Point>,
}

/// The edit to transfer: either projected handle parameters of `src`
/// (`{"z_hat": [...]}`) or a latent delta (`{"latent_delta": [...]}`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetEdit {
    ZHat(Vec<f64>),
    LatentDelta(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferRequest {
    pub src: String,
    pub tgt_edit: TargetEdit,
    pub dst: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointsResponse {
    pub points: Vec<Point>,
}

impl From<&PointCloud> for PointsResponse {
    fn from(pc: &PointCloud) -> Self {
        PointsResponse { points: pc.points().to_vec() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataInfo {
    pub family: Family,
    pub count: usize,
    pub n: usize,
    pub seed: u64,
    pub split: Split,
    pub evaluated: usize,
}

/// Output of `eval`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub metrics: MetricsReport,
    pub config: EvalConfig,
    pub model: ModelInfo,
    pub data: DataInfo,
    pub notes: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

/// Compact JSON; every response body and JSON output file goes through
/// here so CLI and service bytes agree.
pub fn to_json<T: Serialize>(v: &T) -> Result<Vec<u8>> {
    Ok(serde_json::to_vec(v)?)
}

pub fn from_json<T: serde::de::DeserializeOwned>(bytes: &[u8]) -> Result<T> {
    Ok(serde_json::from_slice(bytes)?)
}

/// JSON schema of the `GET /api/shapes` response.
pub const SHAPES_SCHEMA: &str = r#"{
  "$schema": "http://json-schema.org/draft-07/schema#",
  "title": "shape summaries",
  "type": "array",
  "items": {
    "type": "object",
    "required": ["id", "family", "split", "num_handles", "num_points"],
    "additionalProperties": false,
    "properties": {
      "id": {"type": "string", "minLength": 1},
      "family": {"enum": ["table", "chair", "hinge"]},
      "split": {"enum": ["train", "val", "test"]},
      "num_handles": {"type": "integer", "minimum": 0},
      "num_points": {"type": "integer", "minimum": 1}
    }
  }
}"#;
