use pnl_core::geometry::{
    classify_positioning, mm_distance, GeometryError, ImageShape, LandmarkSet, Laterality, PixelSpacing, Point2,
    QualityVerdict,
};
use serde::{Deserialize, Serialize};

use crate::ServiceError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerdictRequest {
    pub landmarks: LandmarkSet,
    pub shape: ImageShape,
    pub laterality: Laterality,
    #[serde(default)]
    pub spacing: Option<PixelSpacing>,
}

/// The verdict plus what a viewer needs to draw it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictResponse {
    #[serde(flatten)]
    pub verdict: QualityVerdict,
    /// Nipple to foot of the perpendicular.
    pub pnl: [Point2; 2],
    pub pectoral: [Point2; 2],
    /// Length of the PNL segment when a pixel spacing was given.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pnl_mm: Option<f64>,
}

impl VerdictRequest {
    pub fn parse(body: &[u8]) -> Result<Self, ServiceError> {
        let req: VerdictRequest = serde_json::from_slice(body).map_err(|e| ServiceError::BadRequest(e.to_string()))?;
        ImageShape::new(req.shape.width, req.shape.height).map_err(|e| ServiceError::BadRequest(e.to_string()))?;
        if let Some(s) = req.spacing {
            PixelSpacing::new(s.sx, s.sy).map_err(|e| ServiceError::BadRequest(e.to_string()))?;
        }
        Ok(req)
    }
}

pub fn handle_verdict(req: &VerdictRequest) -> Result<VerdictResponse, ServiceError> {
    let lm = &req.landmarks;
    let verdict = classify_positioning(lm, req.shape, req.laterality).map_err(|e| match e {
        GeometryError::DegenerateLine(..) => ServiceError::Unprocessable(e.to_string()),
        other => ServiceError::BadRequest(other.to_string()),
    })?;
    Ok(VerdictResponse {
        verdict,
        pnl: [lm.nipple, verdict.foot],
        pectoral: [lm.pec1, lm.pec2],
        pnl_mm: req.spacing.map(|s| mm_distance(lm.nipple, verdict.foot, s)),
    })
}
