//! Frequency positional encoding and its integrated variant over
//! conical frustums.
//!
//! The integrated encoding is the expectation of the sin/cos features
//! under a Gaussian fit to the frustum: each band `k` is attenuated by
//! `exp(-0.5 * 4^k * var)` per axis, so wide frustums lose their high
//! frequencies. Covariances are kept diagonal.

use nalgebra::Vector3;

use crate::error::{CoreError, Result};
use crate::geometry::Ray;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EncodingConfig {
    /// Frequency band count for positions.
    pub l_pos: usize,
    /// Frequency band count for view directions.
    pub l_dir: usize,
    /// Prepend the raw input to the features.
    pub include_input: bool,
}

impl Default for EncodingConfig {
    fn default() -> Self {
        Self { l_pos: 10, l_dir: 4, include_input: true }
    }
}

impl EncodingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.l_pos == 0 || self.l_dir == 0 {
            return Err(CoreError::Config("encoding band counts must be >= 1".into()));
        }
        Ok(())
    }

    pub fn pos_dim(&self) -> usize {
        feature_len(self.l_pos, self.include_input)
    }

    pub fn dir_dim(&self) -> usize {
        feature_len(self.l_dir, self.include_input)
    }
}

pub fn feature_len(bands: usize, include_input: bool) -> usize {
    3 * 2 * bands + if include_input { 3 } else { 0 }
}

/// Gaussian approximation of a conical frustum: mean plus per-axis variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrustumGaussian {
    pub mean: Vector3<f64>,
    pub var: Vector3<f64>,
}

/// Plain frequency encoding: for each band `k` emits `sin(2^k x)` and
/// `cos(2^k x)` per coordinate.
pub fn positional_encode(x: &Vector3<f64>, bands: usize, include_input: bool, out: &mut Vec<f64>) {
    out.clear();
    if include_input {
        out.extend_from_slice(&[x.x, x.y, x.z]);
    }
    let mut scale = 1.0;
    for _ in 0..bands {
        for c in [x.x, x.y, x.z] {
            let a = scale * c;
            out.push(a.sin());
            out.push(a.cos());
        }
        scale *= 2.0;
    }
}

/// Expected frequency encoding under a diagonal Gaussian. With zero
/// variance this reduces exactly to [`positional_encode`].
pub fn integrated_positional_encode(
    g: &FrustumGaussian,
    bands: usize,
    include_input: bool,
    out: &mut Vec<f64>,
) {
    out.clear();
    if include_input {
        out.extend_from_slice(&[g.mean.x, g.mean.y, g.mean.z]);
    }
    let mut scale = 1.0; // 2^k
    for _ in 0..bands {
        let freq_sq = scale * scale; // 4^k
        for (m, v) in [(g.mean.x, g.var.x), (g.mean.y, g.var.y), (g.mean.z, g.var.z)] {
            let a = scale * m;
            let atten = (-0.5 * freq_sq * v).exp();
            out.push(a.sin() * atten);
            out.push(a.cos() * atten);
        }
        scale *= 2.0;
    }
}

/// Fit a Gaussian to the conical frustum of `ray` between distances
/// `t0 < t1`. The cone has radius `pixel_radius * t` at distance `t`;
/// moments are the exact volume moments of the frustum, expressed in the
/// numerically stable midpoint/half-width form.
pub fn frustum_gaussian(ray: &Ray, t0: f64, t1: f64) -> Result<FrustumGaussian> {
    if !(t0 < t1) || t0 < 0.0 {
        return Err(CoreError::InvalidInterval { t0, t1 });
    }
    let t_mu = 0.5 * (t0 + t1);
    let t_half = 0.5 * (t1 - t0);
    let mu2 = t_mu * t_mu;
    let h2 = t_half * t_half;
    let denom = 3.0 * mu2 + h2;

    let mean_t = t_mu + 2.0 * t_mu * h2 / denom;
    let var_t = h2 / 3.0 - (4.0 * h2 * h2 * (12.0 * mu2 - h2)) / (15.0 * denom * denom);
    let r2 = ray.pixel_radius * ray.pixel_radius;
    let var_r = r2 * (mu2 / 4.0 + 5.0 * h2 / 12.0 - 4.0 * h2 * h2 / (15.0 * denom));

    let d = ray.direction;
    let dd = Vector3::new(d.x * d.x, d.y * d.y, d.z * d.z);
    let mean = ray.origin + mean_t * d;
    let var = Vector3::new(
        var_t * dd.x + var_r * (1.0 - dd.x),
        var_t * dd.y + var_r * (1.0 - dd.y),
        var_t * dd.z + var_r * (1.0 - dd.z),
    );
    Ok(FrustumGaussian { mean, var: var.map(|v| v.max(0.0)) })
}
