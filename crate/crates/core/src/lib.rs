//! Mammographic MLO positioning assessment by the posterior nipple line.
//!
//! * [`geometry`] – PNL foot, bounds check, good/poor verdict, angle and mm metrics.
//! * [`imaging`] – landmark extraction and the crop/pad/resize pipeline.
//! * [`loss`] – wing loss and its landmark-aware weighted sum.
//! * [`data`] – annotation schema, exam-grouped splits, synthetic cases.
//! * [`evaluation`] – landmark error statistics and confusion metrics.

pub mod data;
pub mod evaluation;
pub mod geometry;
pub mod imaging;
pub mod loss;

pub use geometry::{ImageShape, Laterality, LandmarkSet, PixelSpacing, Point2, QualityLabel, QualityVerdict};
