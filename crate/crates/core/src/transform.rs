//! Per-microbatch gradient conditioning.
//!
//! [`GradientTransform::Clip`] rescales a gradient onto the L2 ball of radius
//! `C` (classic DP-SGD). [`GradientTransform::Tanh`] squashes every
//! coordinate through `c * tanh(g / k)`: `c` widens the output range
//! `(-c, c)` and `k` widens the input range over which the filter stays close
//! to linear.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum GradientTransform {
    Clip { clip_norm: f64 },
    Tanh { scale: f64, expansion: f64 },
}

impl GradientTransform {
    pub fn clip(clip_norm: f64) -> Result<Self> {
        check_positive("clip_norm", clip_norm)?;
        Ok(Self::Clip { clip_norm })
    }

    pub fn tanh(scale: f64, expansion: f64) -> Result<Self> {
        check_positive("c", scale)?;
        check_positive("k", expansion)?;
        Ok(Self::Tanh { scale, expansion })
    }

    /// Re-checks the parameter invariants, e.g. after deserialization.
    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::Clip { clip_norm } => check_positive("clip_norm", clip_norm),
            Self::Tanh { scale, expansion } => {
                check_positive("c", scale)?;
                check_positive("k", expansion)
            }
        }
    }

    pub fn apply(&self, g: &[f64]) -> Vec<f64> {
        let mut out = g.to_vec();
        self.apply_in_place(&mut out);
        out
    }

    pub fn apply_in_place(&self, g: &mut [f64]) {
        match *self {
            Self::Clip { clip_norm } => clip_l2_in_place(g, clip_norm),
            Self::Tanh { scale, expansion } => tanh_filter_in_place(g, scale, expansion),
        }
    }

    /// Worst-case L2 norm of a transformed gradient with `n` entries.
    pub fn sensitivity_bound(&self, n: usize) -> f64 {
        match *self {
            Self::Clip { clip_norm } => clip_norm,
            Self::Tanh { scale, .. } => scale * (n as f64).sqrt(),
        }
    }

    /// Short stable label, e.g. `clip-C1` or `tanh-c2-k10`.
    pub fn label(&self) -> String {
        match *self {
            Self::Clip { clip_norm } => format!("clip-C{clip_norm}"),
            Self::Tanh { scale, expansion } => format!("tanh-c{scale}-k{expansion}"),
        }
    }
}

fn check_positive(field: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::config(field, format!("must be positive and finite, got {v}")))
    }
}

/// Euclidean norm, rescaling internally when the plain sum of squares would
/// overflow or underflow.
pub fn l2_norm(g: &[f64]) -> f64 {
    let sum: f64 = g.iter().map(|v| v * v).sum();
    if sum.is_finite() && sum >= f64::MIN_POSITIVE {
        return sum.sqrt();
    }
    let max = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if max == 0.0 || !max.is_finite() {
        return max;
    }
    let scaled: f64 = g.iter().map(|v| (v / max) * (v / max)).sum();
    max * scaled.sqrt()
}

/// `g * min(1, clip_norm / ||g||)`.
pub fn clip_l2(g: &[f64], clip_norm: f64) -> Vec<f64> {
    let mut out = g.to_vec();
    clip_l2_in_place(&mut out, clip_norm);
    out
}

pub fn clip_l2_in_place(g: &mut [f64], clip_norm: f64) {
    let norm = l2_norm(g);
    if norm > clip_norm {
        let factor = clip_norm / norm;
        for v in g {
            *v *= factor;
        }
    }
}

/// Elementwise `scale * tanh(g / expansion)`.
pub fn tanh_filter(g: &[f64], scale: f64, expansion: f64) -> Vec<f64> {
    let mut out = g.to_vec();
    tanh_filter_in_place(&mut out, scale, expansion);
    out
}

pub fn tanh_filter_in_place(g: &mut [f64], scale: f64, expansion: f64) {
    // tanh rounds to exactly +-1 once |x| > ~19; keep outputs inside the open
    // interval (-scale, scale).
    let ceiling = scale.next_down();
    for v in g {
        let y = scale * (*v / expansion).tanh();
        *v = if y.abs() > ceiling {
            ceiling.copysign(y)
        } else {
            y
        };
    }
}
