//! Wing loss and its landmark-aware composition over the three landmarks.
//!
//! Coordinates are laid out `[nipple.x, nipple.y, pec1.x, pec1.y, pec2.x,
//! pec2.y]`; the per-landmark weights apply in that order.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("wing parameters must be positive and finite (w = {w}, epsilon = {epsilon})")]
    InvalidWing { w: f64, epsilon: f64 },
    #[error("landmark weights must be non-negative with at least one positive: {0:?}")]
    InvalidWeights([f64; 3]),
}

/// Width `w`, curvature `epsilon` and the continuity constant
/// `c = w - w ln(1 + w/epsilon)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WingParams {
    w: f64,
    epsilon: f64,
    c: f64,
}

impl WingParams {
    pub fn new(w: f64, epsilon: f64) -> Result<Self, LossError> {
        if !(w > 0.0 && epsilon > 0.0 && w.is_finite() && epsilon.is_finite()) {
            return Err(LossError::InvalidWing { w, epsilon });
        }
        Ok(Self { w, epsilon, c: w - w * (w / epsilon).ln_1p() })
    }

    pub fn w(&self) -> f64 {
        self.w
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn c(&self) -> f64 {
        self.c
    }
}

impl Default for WingParams {
    /// `w = 3`, `epsilon = 1.5`.
    fn default() -> Self {
        Self::new(3.0, 1.5).expect("valid defaults")
    }
}

#[derive(Deserialize)]
struct WingParamsRepr {
    w: f64,
    epsilon: f64,
}

impl<'de> Deserialize<'de> for WingParams {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let r = WingParamsRepr::deserialize(d)?;
        WingParams::new(r.w, r.epsilon).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 3]", into = "[f64; 3]")]
pub struct LawWeights {
    alpha: f64,
    beta: f64,
    gamma: f64,
}

impl LawWeights {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<Self, LossError> {
        let v = [alpha, beta, gamma];
        if v.iter().any(|x| !(x.is_finite() && *x >= 0.0)) || v.iter().all(|&x| x == 0.0) {
            return Err(LossError::InvalidWeights(v));
        }
        Ok(Self { alpha, beta, gamma })
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.alpha, self.beta, self.gamma]
    }
}

impl Default for LawWeights {
    fn default() -> Self {
        Self { alpha: 1.0, beta: 1.0, gamma: 1.0 }
    }
}

impl TryFrom<[f64; 3]> for LawWeights {
    type Error = LossError;
    fn try_from(v: [f64; 3]) -> Result<Self, LossError> {
        Self::new(v[0], v[1], v[2])
    }
}

impl From<LawWeights> for [f64; 3] {
    fn from(w: LawWeights) -> Self {
        w.as_array()
    }
}

/// Wing loss of an absolute error.
pub fn wing(y_abs: f64, p: &WingParams) -> f64 {
    if y_abs < p.w {
        p.w * (y_abs / p.epsilon).ln_1p()
    } else {
        y_abs - p.c
    }
}

/// d wing(|y|) / dy. The branch point takes the linear-branch slope and
/// `y = 0` gives zero.
pub fn wing_grad(y: f64, p: &WingParams) -> f64 {
    let a = y.abs();
    let sign = if y > 0.0 {
        1.0
    } else if y < 0.0 {
        -1.0
    } else {
        0.0
    };
    if a < p.w {
        sign * p.w / (p.epsilon + a)
    } else {
        sign
    }
}

/// Weighted sum over landmarks of the mean wing loss of their x and y errors.
pub fn law_loss(pred: &[f64; 6], target: &[f64; 6], p: &WingParams, wts: &LawWeights) -> f64 {
    wts.as_array()
        .iter()
        .enumerate()
        .map(|(k, wk)| {
            let lx = wing((pred[2 * k] - target[2 * k]).abs(), p);
            let ly = wing((pred[2 * k + 1] - target[2 * k + 1]).abs(), p);
            wk * 0.5 * (lx + ly)
        })
        .sum()
}

/// Gradient of [`law_loss`] with respect to `pred`.
pub fn law_grad(pred: &[f64; 6], target: &[f64; 6], p: &WingParams, wts: &LawWeights) -> [f64; 6] {
    let w = wts.as_array();
    std::array::from_fn(|i| 0.5 * w[i / 2] * wing_grad(pred[i] - target[i], p))
}

/// Plain squared error, kept as a sanity baseline.
pub fn l2_loss(pred: &[f64; 6], target: &[f64; 6]) -> f64 {
    pred.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / 6.0
}
