//! Late fusion by hard per-image selection, and the ground-truth oracle.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::dataset::ImagePair;
use crate::ian::IlluminationWeights;
use crate::{BoundingBox, Detection, Error, Image, Modality, Result};

/// Anything that turns an image into detections.
pub trait Detect {
    fn detect(&self, image: &Image) -> Result<Vec<Detection>>;
}

/// Anything that scores how much to trust each detector on a pair.
pub trait WeightPredictor {
    fn predict_weights(&self, pair: &ImagePair) -> Result<IlluminationWeights>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionResult {
    pub id: String,
    pub chosen: Modality,
    pub detections: Vec<Detection>,
    pub weights: Option<IlluminationWeights>,
    pub oracle: bool,
}

/// Ties go to RGB.
pub fn select(weights: IlluminationWeights) -> Modality {
    if weights.w_rgb >= weights.w_ir {
        Modality::Rgb
    } else {
        Modality::Ir
    }
}

/// Runs both detectors and the selector, keeping only the trusted side.
pub fn fuse(pair: &ImagePair, rgb_model: &impl Detect, ir_model: &impl Detect, selector: &impl WeightPredictor) -> Result<FusionResult> {
    let rgb = rgb_model.detect(&pair.rgb)?;
    let ir = ir_model.detect(&pair.ir)?;
    let weights = selector.predict_weights(pair)?;
    let chosen = select(weights);
    Ok(FusionResult {
        id: pair.id.clone(),
        chosen,
        detections: if chosen == Modality::Rgb { rgb } else { ir },
        weights: Some(weights),
        oracle: false,
    })
}

/// Picks, per image, the side with the higher `score_fn` against ground
/// truth. Ties go to RGB.
pub fn oracle_fuse(
    id: &str,
    rgb: &[Detection],
    ir: &[Detection],
    gt: Option<&[BoundingBox]>,
    score_fn: impl Fn(&[Detection], &[BoundingBox]) -> f64,
) -> Result<FusionResult> {
    let gt = gt.ok_or_else(|| Error::MissingGroundTruth(id.into()))?;
    let chosen = if score_fn(rgb, gt) >= score_fn(ir, gt) {
        Modality::Rgb
    } else {
        Modality::Ir
    };
    Ok(FusionResult {
        id: id.into(),
        chosen,
        detections: if chosen == Modality::Rgb { rgb.to_vec() } else { ir.to_vec() },
        weights: None,
        oracle: true,
    })
}
