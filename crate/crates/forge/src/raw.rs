//! Raw little-endian voxel dumps with a JSON sidecar.
//!
//! `name.raw` holds the samples in memory order (axis 2 fastest; vector
//! components stored one after another) and `name.json` describes them:
//!
//! ```json
//! {"shape": [64, 64, 64], "spacing": [1.0, 1.0, 1.0], "dtype": "float32",
//!  "kind": "scalar", "axis_convention": "LR-PA-IS", "byte_order": "little"}
//! ```
//!
//! Either file of the pair may be passed as the path.

use std::path::Path;

use serde::{Deserialize, Serialize};

use forge_core::volume::{Shape3, Spacing3};

use crate::error::{Error, Result};
use crate::io::{read_bytes, sibling, write_bytes, DType, Kind, Payload, Stored};

pub const AXIS_CONVENTION: &str = "LR-PA-IS";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sidecar {
    pub shape: [usize; 3],
    pub spacing: [f64; 3],
    pub dtype: String,
    pub kind: Kind,
    pub axis_convention: String,
    #[serde(default = "little")]
    pub byte_order: String,
}

fn little() -> String {
    "little".into()
}

fn dtype_name(d: DType) -> &'static str {
    match d {
        DType::Float32 => "float32",
        DType::Int16 => "int16",
        DType::Uint8 => "uint8",
    }
}

pub(crate) fn write(stored: &Stored, path: &Path) -> Result<()> {
    let sidecar = Sidecar {
        shape: stored.shape.0,
        spacing: stored.spacing.0,
        dtype: dtype_name(stored.payload.dtype()).into(),
        kind: stored.kind,
        axis_convention: AXIS_CONVENTION.into(),
        byte_order: little(),
    };
    let json_path = sibling(path, "json");
    let text = serde_json::to_string_pretty(&sidecar).map_err(|e| Error::json(&json_path, e))?;
    write_bytes(&sibling(path, "raw"), &stored.payload.to_le_bytes())?;
    write_bytes(&json_path, text.as_bytes())
}

pub(crate) fn read(path: &Path) -> Result<Stored> {
    let json_path = sibling(path, "json");
    let raw_path = sibling(path, "raw");
    let text = read_bytes(&json_path)?;
    let sc: Sidecar = serde_json::from_slice(&text).map_err(|e| Error::json(&json_path, e))?;
    if sc.axis_convention != AXIS_CONVENTION {
        return Err(Error::unsupported(&json_path, format!("axis convention {:?}", sc.axis_convention)));
    }
    if sc.byte_order != "little" {
        return Err(Error::unsupported(&json_path, format!("byte order {:?}", sc.byte_order)));
    }
    let dtype = match sc.dtype.as_str() {
        "float32" => DType::Float32,
        "int16" => DType::Int16,
        "uint8" => DType::Uint8,
        other => return Err(Error::unsupported(&json_path, format!("dtype {other:?}"))),
    };
    let shape = Shape3(sc.shape);
    if shape.is_empty() {
        return Err(Error::format(&json_path, "shape", format!("{:?} has a zero extent", sc.shape)));
    }
    let spacing = Spacing3(sc.spacing);
    if spacing.validate().is_err() {
        return Err(Error::format(&json_path, "spacing", format!("{:?} must be positive and finite", sc.spacing)));
    }
    let comps = if sc.kind == Kind::Vector { 3 } else { 1 };
    let bytes = read_bytes(&raw_path)?;
    let need = shape.len() * comps * dtype.size();
    if bytes.len() != need {
        return Err(Error::format(&raw_path, "data", format!("expected {need} bytes, found {}", bytes.len())));
    }
    Ok(Stored { shape, spacing, kind: sc.kind, payload: Payload::from_le_bytes(dtype, &bytes) })
}
