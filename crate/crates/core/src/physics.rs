//! Closed-form pieces of the relativistic Burgers model
//!
//! ```text
//!   d/dt ( v / (1 - 2M/r)^2 ) + d/dr ( (v^2 - 1) / (2 (1 - 2M/r)) ) = 0,   r > 2M
//! ```
//!
//! in geometric units (c = 1). Everything here is a pure function of its
//! arguments.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Schwarzschild black hole of mass `M`. `M = 0` is flat space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlackHole {
    pub mass: f64,
}

impl BlackHole {
    pub fn new(mass: f64) -> Result<Self> {
        if !(mass >= 0.0 && mass.is_finite()) {
            return Err(Error::Parameter(format!("black hole mass must be finite and >= 0, got {mass}")));
        }
        Ok(Self { mass })
    }

    pub fn flat() -> Self {
        Self { mass: 0.0 }
    }

    /// Radius of the event horizon, `2M`.
    pub fn horizon(&self) -> f64 {
        2.0 * self.mass
    }

    fn check_exterior(&self, r: f64) -> Result<()> {
        if r > self.horizon() && r.is_finite() {
            Ok(())
        } else {
            Err(Error::Domain(format!("r = {r} is not outside the horizon 2M = {}", self.horizon())))
        }
    }
}

impl Default for BlackHole {
    fn default() -> Self {
        Self { mass: 1.0 }
    }
}

/// Truncated radial domain `[2M + epsilon, r_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadialDomain {
    pub r_min: f64,
    pub r_max: f64,
    pub epsilon: f64,
}

impl RadialDomain {
    pub fn new(bh: BlackHole, epsilon: f64, r_max: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::Parameter(format!("horizon offset must be positive, got {epsilon}")));
        }
        let r_min = bh.horizon() + epsilon;
        if !(r_max > r_min && r_max.is_finite()) {
            return Err(Error::Parameter(format!("r_max = {r_max} must exceed r_min = {r_min}")));
        }
        Ok(Self { r_min, r_max, epsilon })
    }

    pub fn length(&self) -> f64 {
        self.r_max - self.r_min
    }

    pub fn contains(&self, r: f64) -> bool {
        r >= self.r_min && r <= self.r_max
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Branch {
    Plus,
    Minus,
}

impl Branch {
    pub fn sign(self) -> f64 {
        match self {
            Branch::Plus => 1.0,
            Branch::Minus => -1.0,
        }
    }
}

/// Parameters of the steady family `v = sign * sqrt(1 - K (1 - 2M/r))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteadyStateParams {
    pub k: f64,
    pub branch: Branch,
}

/// Stationary shock joining the `+` branch (r < r0) to the `-` branch (r >= r0).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteadyShockParams {
    pub k: f64,
    pub r0: f64,
}

/// Open radial interval; `upper` may be infinite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub fn contains(&self, r: f64) -> bool {
        r > self.lower && r < self.upper
    }

    pub fn is_bounded(&self) -> bool {
        self.upper.is_finite()
    }
}

/// `1 - 2M/r`.
pub fn metric(r: f64, bh: BlackHole) -> Result<f64> {
    bh.check_exterior(r)?;
    Ok(1.0 - bh.horizon() / r)
}

/// Physical flux `f(v, r) = (v^2 - 1) / (2 metric(r))`.
pub fn flux(v: f64, r: f64, bh: BlackHole) -> Result<f64> {
    let m = metric(r, bh)?;
    Ok(flux_with_metric(v, m))
}

#[inline]
pub fn flux_with_metric(v: f64, m: f64) -> f64 {
    (v * v - 1.0) / (2.0 * m)
}

/// Rankine-Hugoniot speed `metric(r) (vL + vR) / 2` of a jump at `r`.
pub fn shock_speed(v_left: f64, v_right: f64, r: f64, bh: BlackHole) -> Result<f64> {
    let m = metric(r, bh)?;
    Ok(m * 0.5 * (v_left + v_right))
}

/// Validity interval of a steady state with constant `K`.
///
/// For `K <= 1` the square root argument `1 - K + 2MK/r` is positive on the
/// whole exterior. For `K > 1` it stays positive only while `r < 2MK/(K - 1)`.
pub fn steady_state_domain(p: SteadyStateParams, bh: BlackHole) -> Result<Interval> {
    if !(p.k > 0.0 && p.k.is_finite()) {
        return Err(Error::Parameter(format!("steady state constant K must be positive, got {}", p.k)));
    }
    let lower = bh.horizon();
    let upper = if p.k <= 1.0 { f64::INFINITY } else { bh.horizon() * p.k / (p.k - 1.0) };
    Ok(Interval { lower, upper })
}

/// Steady state `sign * sqrt(1 - K (1 - 2M/r))`.
pub fn steady_state(r: f64, p: SteadyStateParams, bh: BlackHole) -> Result<f64> {
    if !(p.k > 0.0 && p.k.is_finite()) {
        return Err(Error::Parameter(format!("steady state constant K must be positive, got {}", p.k)));
    }
    let m = metric(r, bh)?;
    let arg = 1.0 - p.k * m;
    if arg < 0.0 {
        return Err(Error::Domain(format!(
            "steady state with K = {} is undefined at r = {r} (outside its validity interval)",
            p.k
        )));
    }
    Ok(p.branch.sign() * arg.sqrt())
}

/// Stationary shock at `r0`.
pub fn steady_shock(r: f64, p: SteadyShockParams, bh: BlackHole) -> Result<f64> {
    if !(p.k > 0.0 && p.k <= 1.0) {
        return Err(Error::Parameter(format!("steady shock requires K in (0, 1], got {}", p.k)));
    }
    if !(p.r0 > bh.horizon()) {
        return Err(Error::Parameter(format!("shock position r0 = {} must exceed 2M", p.r0)));
    }
    let branch = if r < p.r0 { Branch::Plus } else { Branch::Minus };
    steady_state(r, SteadyStateParams { k: p.k, branch }, bh)
}

/// Trajectory of a shock separating two `+` steady branches, `K_left` inside and
/// `K_right` outside.
///
/// Both sides are individually steady, so the discontinuity is transported at
/// the Rankine-Hugoniot speed evaluated on the two branches. Integrated with
/// classical RK4 at step `dt`; returns `(t, r_s)` samples at each requested
/// time (ascending, starting from `t >= 0`).
pub fn two_branch_shock_path(
    k_left: f64,
    k_right: f64,
    r0: f64,
    bh: BlackHole,
    times: &[f64],
    dt: f64,
) -> Result<Vec<(f64, f64)>> {
    let speed = |r: f64| -> Result<f64> {
        let vl = steady_state(r, SteadyStateParams { k: k_left, branch: Branch::Plus }, bh)?;
        let vr = steady_state(r, SteadyStateParams { k: k_right, branch: Branch::Plus }, bh)?;
        shock_speed(vl, vr, r, bh)
    };
    let mut out = Vec::with_capacity(times.len());
    let mut t = 0.0;
    let mut r = r0;
    for &target in times {
        while t < target {
            let h = dt.min(target - t);
            let k1 = speed(r)?;
            let k2 = speed(r + 0.5 * h * k1)?;
            let k3 = speed(r + 0.5 * h * k2)?;
            let k4 = speed(r + h * k3)?;
            r += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            t += h;
        }
        out.push((target, r));
    }
    Ok(out)
}
