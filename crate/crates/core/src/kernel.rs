//! Low-dimensional distances and similarity kernels.
//!
//! Every loss sees the embedding only through these kernels. Squared
//! distances are clamped below by [`MIN_SQ_DIST`] before any log or
//! division; inside the clamp the kernel is treated as constant, so its
//! gradient is zero there.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Lower clamp on squared embedding distances.
pub const MIN_SQ_DIST: f64 = 1e-12;

/// Squared Euclidean distance.
pub fn sq_dist(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(invalid(format!(
            "dimension mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    Ok(sq_dist_unchecked(a, b))
}

#[inline]
pub(crate) fn sq_dist_unchecked(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Cauchy kernel `1 / (d² + 1)`.
pub fn cauchy(d_sq: f64) -> Result<f64> {
    if !(d_sq >= 0.0) || !d_sq.is_finite() {
        return Err(invalid(format!("cauchy needs a finite d² >= 0, got {d_sq}")));
    }
    Ok(1.0 / (d_sq + 1.0))
}

/// Derivative of [`cauchy`] with respect to `d²`.
pub fn cauchy_derivative(d_sq: f64) -> f64 {
    let phi = 1.0 / (d_sq + 1.0);
    -phi * phi
}

/// Unnormalized companion `φ̃ = 1 / d²`, satisfying `φ̃ / (φ̃ + 1) = cauchy(d²)`.
pub fn cauchy_unnormalized(d_sq: f64) -> Result<f64> {
    if !(d_sq > 0.0) || !d_sq.is_finite() {
        return Err(invalid(format!(
            "unnormalized cauchy kernel is singular at d² = {d_sq}"
        )));
    }
    Ok(1.0 / d_sq)
}

/// `exp(-‖a - b‖ / tau)`.
pub fn exp_sim(a: &[f64], b: &[f64], tau: f64) -> Result<f64> {
    if !(tau > 0.0) {
        return Err(invalid(format!("temperature must be > 0, got {tau}")));
    }
    Ok((-sq_dist(a, b)?.sqrt() / tau).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Cauchy,
    CauchyUnnormalized,
    ExpTemperature,
}

/// Similarity used inside the temperature kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Similarity {
    /// `-‖a - b‖`.
    #[default]
    NegativeDistance,
    /// `a·b / (‖a‖ ‖b‖)`.
    Cosine,
}

impl std::str::FromStr for Similarity {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "negative_distance" | "negative-distance" | "distance" => Ok(Similarity::NegativeDistance),
            "cosine" => Ok(Similarity::Cosine),
            other => Err(invalid(format!("unknown similarity {other:?}"))),
        }
    }
}

impl Similarity {
    pub fn name(self) -> &'static str {
        match self {
            Similarity::NegativeDistance => "negative_distance",
            Similarity::Cosine => "cosine",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub tau: f64,
    pub similarity: Similarity,
}

impl KernelSpec {
    pub fn cauchy() -> Self {
        Self {
            kind: KernelKind::Cauchy,
            tau: 1.0,
            similarity: Similarity::NegativeDistance,
        }
    }

    pub fn exp(tau: f64, similarity: Similarity) -> Result<Self> {
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(invalid(format!("temperature must be > 0, got {tau}")));
        }
        Ok(Self {
            kind: KernelKind::ExpTemperature,
            tau,
            similarity,
        })
    }

    /// Log of the pair similarity.
    pub fn log_sim(&self, a: &[f64], b: &[f64]) -> f64 {
        match self.kind {
            KernelKind::Cauchy => -sq_dist_unchecked(a, b).max(MIN_SQ_DIST).ln_1p(),
            KernelKind::CauchyUnnormalized => -sq_dist_unchecked(a, b).max(MIN_SQ_DIST).ln(),
            KernelKind::ExpTemperature => match self.similarity {
                Similarity::NegativeDistance => {
                    -sq_dist_unchecked(a, b).max(MIN_SQ_DIST).sqrt() / self.tau
                }
                Similarity::Cosine => cosine(a, b).0 / self.tau,
            },
        }
    }

    pub(crate) fn is_cauchy_family(&self) -> bool {
        matches!(self.kind, KernelKind::Cauchy | KernelKind::CauchyUnnormalized)
    }

    /// `(k, c)` with `∂ log k / ∂a = c · (a - b)`, for the Cauchy family only.
    pub(crate) fn sim_radial(&self, a: &[f64], b: &[f64]) -> (f64, f64) {
        let raw = sq_dist_unchecked(a, b);
        let u = raw.max(MIN_SQ_DIST);
        let (k, c) = match self.kind {
            KernelKind::CauchyUnnormalized => (1.0 / u, -2.0 / u),
            _ => {
                let k = 1.0 / (1.0 + u);
                (k, -2.0 * k)
            }
        };
        (k, if raw < MIN_SQ_DIST { 0.0 } else { c })
    }

    /// `(log k, c)` with `∂ log k / ∂a = c · (a - b)`; `None` for cosine
    /// similarity, whose gradient is not radial.
    pub(crate) fn log_sim_radial(&self, a: &[f64], b: &[f64]) -> Option<(f64, f64)> {
        let raw = sq_dist_unchecked(a, b);
        let u = raw.max(MIN_SQ_DIST);
        let (l, c) = match (self.kind, self.similarity) {
            (KernelKind::Cauchy, _) => (-u.ln_1p(), -2.0 / (1.0 + u)),
            (KernelKind::CauchyUnnormalized, _) => (-u.ln(), -2.0 / u),
            (KernelKind::ExpTemperature, Similarity::NegativeDistance) => {
                let r = u.sqrt();
                (-r / self.tau, -1.0 / (self.tau * r))
            }
            (KernelKind::ExpTemperature, Similarity::Cosine) => return None,
        };
        Some((l, if raw < MIN_SQ_DIST { 0.0 } else { c }))
    }

    /// Adds `g · ∂ log k(a, b) / ∂a` into `ga` and `g · ∂ log k(a, b) / ∂b`
    /// into `gb`.
    pub fn add_log_sim_grad(&self, a: &[f64], b: &[f64], g: f64, ga: &mut [f64], gb: &mut [f64]) {
        if let (KernelKind::ExpTemperature, Similarity::Cosine) = (self.kind, self.similarity) {
            let (cos, na, nb) = cosine(a, b);
            let s = g / self.tau;
            for c in 0..a.len() {
                ga[c] += s * (b[c] / (na * nb) - cos * a[c] / (na * na));
                gb[c] += s * (a[c] / (na * nb) - cos * b[c] / (nb * nb));
            }
            return;
        }
        let u = sq_dist_unchecked(a, b);
        if u < MIN_SQ_DIST {
            return;
        }
        // ∂ log k / ∂a = coef · (a - b)
        let coef = match self.kind {
            KernelKind::Cauchy => -2.0 / (1.0 + u),
            KernelKind::CauchyUnnormalized => -2.0 / u,
            KernelKind::ExpTemperature => -1.0 / (self.tau * u.sqrt()),
        } * g;
        for c in 0..a.len() {
            let t = coef * (a[c] - b[c]);
            ga[c] += t;
            gb[c] -= t;
        }
    }
}

fn cosine(a: &[f64], b: &[f64]) -> (f64, f64, f64) {
    let na = a.iter().map(|x| x * x).sum::<f64>().max(MIN_SQ_DIST).sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().max(MIN_SQ_DIST).sqrt();
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    (dot / (na * nb), na, nb)
}
