//! Versioned JSON documents for shape models and forests.
//!
//! Floats are written in shortest round-trip form and parsed with correct
//! rounding, so a saved model reloads bit for bit. SM distance tables are not
//! stored: the forest keeps their shape parameters and rebuilds them from
//! the shape model, whose checksum the forest document records.

use std::path::Path;

use myoseg_core::forest::{Forest, TrainConfig, Tree};
use myoseg_core::{ShapeModel, ShapeParams};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const SHAPE_MODEL_FORMAT: &str = "myoseg-shape-model";
pub const FOREST_FORMAT: &str = "myoseg-forest";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ShapeModelDoc {
    format: String,
    version: u32,
    model: ShapeModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ForestDoc {
    format: String,
    version: u32,
    width: usize,
    height: usize,
    shape_model_sha256: String,
    config: TrainConfig,
    sm_params: Vec<ShapeParams>,
    trees: Vec<Tree>,
}

/// SHA-256 of the model's canonical JSON encoding, hex encoded.
pub fn checksum(model: &ShapeModel) -> String {
    let bytes = serde_json::to_vec(model).expect("shape model serializes");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn check_header(format: &str, version: u32, want: &'static str, path: &Path) -> Result<(), CliError> {
    if format != want {
        return Err(CliError::format(
            "model document",
            path,
            format!("expected format {want:?}, found {format:?}"),
        ));
    }
    if version != FORMAT_VERSION {
        return Err(CliError::format(
            "model document",
            path,
            format!("unsupported version {version} (expected {FORMAT_VERSION})"),
        ));
    }
    Ok(())
}

fn parse<T: for<'de> Deserialize<'de>>(text: &str, what: &'static str, path: &Path) -> Result<T, CliError> {
    serde_json::from_str(text).map_err(|e| CliError::format(what, path, e.to_string()))
}

pub fn shape_model_to_string(model: &ShapeModel) -> String {
    let doc = ShapeModelDoc {
        format: SHAPE_MODEL_FORMAT.into(),
        version: FORMAT_VERSION,
        model: model.clone(),
    };
    serde_json::to_string_pretty(&doc).expect("shape model serializes")
}

pub fn shape_model_from_str(text: &str, path: &Path) -> Result<ShapeModel, CliError> {
    let doc: ShapeModelDoc = parse(text, "shape model", path)?;
    check_header(&doc.format, doc.version, SHAPE_MODEL_FORMAT, path)?;
    let m = doc.model;
    let d = 2 * m.m;
    if m.mean.len() != d || m.modes.len() != d * m.k || m.eigenvalues.len() != m.k {
        return Err(CliError::format(
            "shape model",
            path,
            "array lengths disagree with M and K",
        ));
    }
    Ok(m)
}

pub fn save_shape_model(path: &Path, model: &ShapeModel) -> Result<(), CliError> {
    std::fs::write(path, shape_model_to_string(model)).map_err(|e| CliError::io(path, e))
}

pub fn load_shape_model(path: &Path) -> Result<ShapeModel, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    shape_model_from_str(&text, path)
}

pub fn forest_to_string(forest: &Forest, model: &ShapeModel) -> String {
    let (width, height) = forest.dims();
    let doc = ForestDoc {
        format: FOREST_FORMAT.into(),
        version: FORMAT_VERSION,
        width,
        height,
        shape_model_sha256: checksum(model),
        config: forest.config,
        sm_params: forest.sm_params(),
        trees: forest.trees.clone(),
    };
    serde_json::to_string(&doc).expect("forest serializes")
}

/// Parses a forest document and rebuilds its SM tables from `model`, which
/// must be the model the forest was trained with.
pub fn forest_from_str(text: &str, path: &Path, model: &ShapeModel) -> Result<Forest, CliError> {
    let doc: ForestDoc = parse(text, "forest", path)?;
    check_header(&doc.format, doc.version, FOREST_FORMAT, path)?;
    let sum = checksum(model);
    if doc.shape_model_sha256 != sum {
        return Err(CliError::ModelMismatch(format!(
            "forest {} was trained with shape model {}, supplied model is {}",
            path.display(),
            doc.shape_model_sha256,
            sum
        )));
    }
    Forest::from_parts(doc.trees, doc.sm_params, doc.config, model, doc.width, doc.height)
        .map_err(|e| CliError::format("forest", path, e.to_string()))
}

pub fn save_forest(path: &Path, forest: &Forest, model: &ShapeModel) -> Result<(), CliError> {
    std::fs::write(path, forest_to_string(forest, model)).map_err(|e| CliError::io(path, e))
}

pub fn load_forest(path: &Path, model: &ShapeModel) -> Result<Forest, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    forest_from_str(&text, path, model)
}
