//! Gaussian control predictions and their reduction to bounded control sets.
//!
//! A predictor emits, for each step of the horizon, a mean control and a 2×2
//! covariance. Confidence scales the covariance by `1/β`; a mass threshold γ
//! then trims every control dimension to the symmetric interval around the
//! mean holding mass γ under its marginal, and the hard caps clip the result.
//! The reachability solver only sees the bounds at the first and last step of
//! the horizon and interpolates linearly in between.

use serde::{Deserialize, Serialize};

use crate::dynamics::{ACCEL_CAP, STEER_RATE_CAP};
use crate::error::{Error, Result};

/// Symmetric 2×2 covariance over (steering rate, acceleration).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[[f64; 2]; 2]", into = "[[f64; 2]; 2]")]
pub struct Cov2 {
    pub xx: f64,
    pub xy: f64,
    pub yy: f64,
}

impl Cov2 {
    pub fn new(xx: f64, xy: f64, yy: f64) -> Result<Self> {
        let c = Cov2 { xx, xy, yy };
        c.validate()?;
        Ok(c)
    }

    pub fn diag(xx: f64, yy: f64) -> Result<Self> {
        Self::new(xx, 0.0, yy)
    }

    pub fn det(&self) -> f64 {
        self.xx * self.yy - self.xy * self.xy
    }

    pub fn scaled(&self, factor: f64) -> Cov2 {
        Cov2 {
            xx: self.xx * factor,
            xy: self.xy * factor,
            yy: self.yy * factor,
        }
    }

    pub fn variance(&self, dim: usize) -> f64 {
        if dim == 0 {
            self.xx
        } else {
            self.yy
        }
    }

    fn validate(&self) -> Result<()> {
        if ![self.xx, self.xy, self.yy].iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument("covariance has non-finite entries".into()));
        }
        if self.xx <= 0.0 || self.yy <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "covariance diagonal must be positive, got ({}, {})",
                self.xx, self.yy
            )));
        }
        // Allow round-off on exactly singular matrices.
        if self.det() < -1e-12 * self.xx * self.yy {
            return Err(Error::InvalidArgument(format!(
                "covariance is not positive semi-definite (det = {})",
                self.det()
            )));
        }
        Ok(())
    }
}

impl TryFrom<[[f64; 2]; 2]> for Cov2 {
    type Error = Error;

    fn try_from(m: [[f64; 2]; 2]) -> Result<Self> {
        let scale = m[0][1].abs().max(m[1][0].abs()).max(1.0);
        if (m[0][1] - m[1][0]).abs() > 1e-9 * scale {
            return Err(Error::InvalidArgument(format!(
                "covariance is not symmetric: {} vs {}",
                m[0][1], m[1][0]
            )));
        }
        Cov2::new(m[0][0], 0.5 * (m[0][1] + m[1][0]), m[1][1])
    }
}

impl From<Cov2> for [[f64; 2]; 2] {
    fn from(c: Cov2) -> Self {
        [[c.xx, c.xy], [c.xy, c.yy]]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianControlPrediction {
    /// Spacing between predicted steps, s.
    pub dt: f64,
    pub means: Vec<[f64; 2]>,
    pub covariances: Vec<Cov2>,
}

impl GaussianControlPrediction {
    pub fn new(dt: f64, means: Vec<[f64; 2]>, covariances: Vec<Cov2>) -> Result<Self> {
        let p = Self { dt, means, covariances };
        p.validate()?;
        Ok(p)
    }

    pub fn steps(&self) -> usize {
        self.means.len()
    }

    pub fn horizon(&self) -> f64 {
        self.dt * self.steps() as f64
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "prediction dt must be positive, got {}",
                self.dt
            )));
        }
        if self.means.is_empty() {
            return Err(Error::InvalidArgument("prediction has no steps".into()));
        }
        if self.means.len() != self.covariances.len() {
            return Err(Error::InvalidArgument(format!(
                "prediction has {} means but {} covariances",
                self.means.len(),
                self.covariances.len()
            )));
        }
        if self.means.iter().flatten().any(|m| !m.is_finite()) {
            return Err(Error::InvalidArgument("prediction mean is not finite".into()));
        }
        self.covariances.iter().try_for_each(Cov2::validate)
    }
}

/// Per-step control intervals, one lower and one upper 2-vector per step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlBounds {
    pub lower: Vec<[f64; 2]>,
    pub upper: Vec<[f64; 2]>,
}

impl ControlBounds {
    pub fn steps(&self) -> usize {
        self.lower.len()
    }
}

/// Control intervals at the start and end of the horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlBoundsEndpoints {
    pub u_min_start: [f64; 2],
    pub u_max_start: [f64; 2],
    pub u_min_end: [f64; 2],
    pub u_max_end: [f64; 2],
}

impl ControlBoundsEndpoints {
    /// The same interval at both ends of the horizon.
    pub fn constant(u_min: [f64; 2], u_max: [f64; 2]) -> Self {
        Self {
            u_min_start: u_min,
            u_max_start: u_max,
            u_min_end: u_min,
            u_max_end: u_max,
        }
    }

    pub fn zero() -> Self {
        Self::constant([0.0; 2], [0.0; 2])
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.u_min_start, self.u_max_start, self.u_min_end, self.u_max_end];
        if all.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("control bounds must be finite".into()));
        }
        for i in 0..2 {
            if self.u_min_start[i] > self.u_max_start[i] || self.u_min_end[i] > self.u_max_end[i] {
                return Err(Error::InvalidArgument(format!(
                    "control bound u{} has min > max: {self:?}",
                    i + 1
                )));
            }
        }
        Ok(())
    }

    /// Error naming the cap when any component exceeds the hard physical limits.
    pub fn check_caps(&self) -> Result<()> {
        let caps = [STEER_RATE_CAP, ACCEL_CAP];
        let names = ["steering-rate cap of 2 rad/s", "acceleration cap of 10 m/s²"];
        for v in [self.u_min_start, self.u_max_start, self.u_min_end, self.u_max_end] {
            for i in 0..2 {
                if v[i].abs() > caps[i] + 1e-12 {
                    return Err(Error::InvalidArgument(format!(
                        "u{} bound {} exceeds the {}",
                        i + 1,
                        v[i],
                        names[i]
                    )));
                }
            }
        }
        Ok(())
    }

    /// Largest magnitude a bound reaches on each control axis over the horizon.
    pub fn max_abs(&self) -> [f64; 2] {
        let mut m = [0.0f64; 2];
        for v in [self.u_min_start, self.u_max_start, self.u_min_end, self.u_max_end] {
            for i in 0..2 {
                m[i] = m[i].max(v[i].abs());
            }
        }
        m
    }
}

/// Inflate the covariance by `1/beta`; means are untouched.
pub fn scale_covariance(pred: &GaussianControlPrediction, beta: f64) -> Result<GaussianControlPrediction> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "confidence beta must lie in (0, 1], got {beta}"
        )));
    }
    Ok(GaussianControlPrediction {
        dt: pred.dt,
        means: pred.means.clone(),
        covariances: pred.covariances.iter().map(|c| c.scaled(1.0 / beta)).collect(),
    })
}

/// Inverse error function: rational initial guess followed by two Newton
/// iterations on `erf`.
pub fn erfinv(y: f64) -> f64 {
    if y.is_nan() || !(-1.0..=1.0).contains(&y) {
        return f64::NAN;
    }
    if y == 1.0 {
        return f64::INFINITY;
    }
    if y == -1.0 {
        return f64::NEG_INFINITY;
    }
    // Giles (2010) single-precision approximation.
    let mut w = -((1.0 - y) * (1.0 + y)).ln();
    let p = if w < 5.0 {
        w -= 2.5;
        let mut p = 2.810_226_36e-08;
        p = 3.432_739_39e-07 + p * w;
        p = -3.523_387_7e-06 + p * w;
        p = -4.391_506_54e-06 + p * w;
        p = 0.000_218_580_87 + p * w;
        p = -0.001_253_725_03 + p * w;
        p = -0.004_177_681_64 + p * w;
        p = 0.246_640_727 + p * w;
        1.501_409_41 + p * w
    } else {
        w = w.sqrt() - 3.0;
        let mut p = -0.000_200_214_257;
        p = 0.000_100_950_558 + p * w;
        p = 0.001_349_343_22 + p * w;
        p = -0.003_673_428_44 + p * w;
        p = 0.005_739_507_73 + p * w;
        p = -0.007_622_461_3 + p * w;
        p = 0.009_438_870_47 + p * w;
        p = 1.001_674_06 + p * w;
        2.832_976_82 + p * w
    };
    let mut x = p * y;
    let two_over_sqrt_pi = std::f64::consts::FRAC_2_SQRT_PI;
    for _ in 0..2 {
        let deriv = two_over_sqrt_pi * (-x * x).exp();
        if deriv == 0.0 {
            break;
        }
        x -= (libm::erf(x) - y) / deriv;
    }
    x
}

/// Half-width of the symmetric interval holding mass `gamma` under a normal
/// marginal with unit standard deviation.
pub fn gamma_half_width(gamma: f64) -> f64 {
    std::f64::consts::SQRT_2 * erfinv(gamma)
}

/// Trim each step and control dimension to `[μ − δ, μ + δ]` where δ captures
/// mass `gamma` of the per-dimension marginal. Only the diagonal of Σ is used.
pub fn bounds_from_gamma(pred: &GaussianControlPrediction, gamma: f64) -> Result<ControlBounds> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "mass threshold gamma must lie in (0, 1), got {gamma}"
        )));
    }
    pred.validate()?;
    let k = gamma_half_width(gamma);
    let mut lower = Vec::with_capacity(pred.steps());
    let mut upper = Vec::with_capacity(pred.steps());
    for (mu, cov) in pred.means.iter().zip(&pred.covariances) {
        let mut lo = [0.0; 2];
        let mut hi = [0.0; 2];
        for i in 0..2 {
            let delta = k * cov.variance(i).sqrt();
            lo[i] = mu[i] - delta;
            hi[i] = mu[i] + delta;
        }
        lower.push(lo);
        upper.push(hi);
    }
    Ok(ControlBounds { lower, upper })
}

/// Clip every bound to ±2 rad/s steering rate and ±10 m/s² acceleration.
pub fn apply_hard_caps(bounds: &ControlBounds) -> ControlBounds {
    let clip = |v: &[f64; 2]| {
        [
            v[0].clamp(-STEER_RATE_CAP, STEER_RATE_CAP),
            v[1].clamp(-ACCEL_CAP, ACCEL_CAP),
        ]
    };
    ControlBounds {
        lower: bounds.lower.iter().map(clip).collect(),
        upper: bounds.upper.iter().map(clip).collect(),
    }
}

/// Reduce per-step bounds to the first and last step of the horizon.
pub fn endpoints(bounds: &ControlBounds) -> Result<ControlBoundsEndpoints> {
    let n = bounds.steps();
    if n < 2 || bounds.upper.len() != n {
        return Err(Error::InvalidArgument(format!(
            "need at least two steps of bounds to take endpoints, got {n}"
        )));
    }
    Ok(ControlBoundsEndpoints {
        u_min_start: bounds.lower[0],
        u_max_start: bounds.upper[0],
        u_min_end: bounds.lower[n - 1],
        u_max_end: bounds.upper[n - 1],
    })
}

/// Linearly interpolated `(u_min, u_max)` at time `tau` within `[t, t + horizon]`.
pub fn interp_bounds(ep: &ControlBoundsEndpoints, tau: f64, t: f64, horizon: f64) -> Result<([f64; 2], [f64; 2])> {
    if !(horizon > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "horizon must be positive, got {horizon}"
        )));
    }
    let slack = 1e-9 * horizon.max(1.0);
    if !(tau >= t - slack && tau <= t + horizon + slack) {
        return Err(Error::InvalidArgument(format!(
            "tau = {tau} lies outside [{t}, {}]",
            t + horizon
        )));
    }
    let w = ((tau - t) / horizon).clamp(0.0, 1.0);
    Ok(interp_weight(ep, w))
}

pub(crate) fn interp_weight(ep: &ControlBoundsEndpoints, w: f64) -> ([f64; 2], [f64; 2]) {
    let lerp = |a: [f64; 2], b: [f64; 2]| [(1.0 - w) * a[0] + w * b[0], (1.0 - w) * a[1] + w * b[1]];
    (lerp(ep.u_min_start, ep.u_min_end), lerp(ep.u_max_start, ep.u_max_end))
}

/// Where a run gets its per-step Gaussian predictions from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictionSource {
    /// One stored prediction per macro-step.
    Scripted(Vec<GaussianControlPrediction>),
    /// Zero-mean controls with a fixed diagonal covariance, i.e. "keep doing
    /// what you are doing".
    ConstantVelocity { sigma: [f64; 2], steps: usize, dt: f64 },
}

impl PredictionSource {
    /// Prediction issued at time `t`, for runs advancing in steps of `dt_macro`.
    pub fn prediction_at(&self, t: f64, dt_macro: f64) -> Result<GaussianControlPrediction> {
        match self {
            PredictionSource::Scripted(list) => {
                let idx = (t / dt_macro).round();
                if idx < 0.0 || (idx * dt_macro - t).abs() > 1e-6 * dt_macro.max(1.0) {
                    return Err(Error::ScenarioFormat {
                        pointer: "/predictions".into(),
                        message: format!("time {t} is not on the {dt_macro} s macro-step lattice"),
                    });
                }
                list.get(idx as usize).cloned().ok_or_else(|| Error::ScenarioFormat {
                    pointer: format!("/predictions/{}", idx as usize),
                    message: format!("no prediction for t = {t} s (script has {} entries)", list.len()),
                })
            }
            PredictionSource::ConstantVelocity { sigma, steps, dt } => {
                let cov = Cov2::diag(sigma[0] * sigma[0], sigma[1] * sigma[1])?;
                GaussianControlPrediction::new(*dt, vec![[0.0; 2]; *steps], vec![cov; *steps])
            }
        }
    }
}
