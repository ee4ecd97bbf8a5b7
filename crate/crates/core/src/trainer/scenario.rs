use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::physics::{steady_shock, steady_state, BlackHole, Branch, RadialDomain, SteadyShockParams, SteadyStateParams};
use crate::residual::Side;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    /// `+` steady state with constant `k_left`.
    SteadyState,
    /// Stationary shock at `r0` between the `+` and `-` branches of `k_left`.
    SteadyShock,
    /// `+` branch of `k_left` inside `r0`, `+` branch of `k_right` outside.
    MovingShock,
    /// Piecewise constant `v_left` / `v_right` split at `r0`.
    Riemann,
}

impl ScenarioKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "steady_state" => Ok(Self::SteadyState),
            "steady_shock" => Ok(Self::SteadyShock),
            "moving_shock" => Ok(Self::MovingShock),
            "riemann" => Ok(Self::Riemann),
            other => Err(Error::Parameter(format!("unknown scenario '{other}'"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::SteadyState => "steady_state",
            Self::SteadyShock => "steady_shock",
            Self::MovingShock => "moving_shock",
            Self::Riemann => "riemann",
        }
    }
}

/// Initial and boundary data on a truncated domain.
///
/// Boundary targets are the initial data frozen at `r_min` and `r_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub kind: ScenarioKind,
    pub bh: BlackHole,
    pub domain: RadialDomain,
    pub t_final: f64,
    pub k_left: f64,
    pub k_right: f64,
    pub r0: f64,
    pub v_left: f64,
    pub v_right: f64,
}

pub const DEFAULT_EPSILON: f64 = 0.1;
pub const DEFAULT_R_MAX: f64 = 10.0;
pub const DEFAULT_T_FINAL: f64 = 5.0;

impl Scenario {
    /// Defaults with `M = 1`, `r in [2.1, 10]`, `T = 5`, `r0 = 5M`.
    pub fn preset(kind: ScenarioKind) -> Self {
        let bh = BlackHole::default();
        let domain = RadialDomain::new(bh, DEFAULT_EPSILON, DEFAULT_R_MAX).expect("valid default domain");
        let k_right = if kind == ScenarioKind::MovingShock { 15.0 / 16.0 } else { 0.75 };
        Self {
            kind,
            bh,
            domain,
            t_final: DEFAULT_T_FINAL,
            k_left: 0.75,
            k_right,
            r0: 5.0 * bh.mass,
            v_left: 1.0,
            v_right: 0.0,
        }
    }

    pub fn steady_state() -> Self {
        Self::preset(ScenarioKind::SteadyState)
    }

    pub fn steady_shock() -> Self {
        Self::preset(ScenarioKind::SteadyShock)
    }

    pub fn moving_shock() -> Self {
        Self::preset(ScenarioKind::MovingShock)
    }

    /// Flat-space Riemann problem on `[r_min, r_max]`.
    pub fn riemann(v_left: f64, v_right: f64, r0: f64, r_min: f64, r_max: f64, t_final: f64) -> Result<Self> {
        let bh = BlackHole::flat();
        let domain = RadialDomain::new(bh, r_min, r_max)?;
        let s = Self {
            kind: ScenarioKind::Riemann,
            bh,
            domain,
            t_final,
            k_left: 1.0,
            k_right: 1.0,
            r0,
            v_left,
            v_right,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_final >= 0.0 && self.t_final.is_finite()) {
            return Err(Error::Parameter(format!("t_final = {} must be finite and >= 0", self.t_final)));
        }
        let d = &self.domain;
        if !(d.r_min > self.bh.horizon() && d.r_max > d.r_min) {
            return Err(Error::Parameter("radial domain must lie outside the horizon".into()));
        }
        if matches!(self.kind, ScenarioKind::SteadyShock | ScenarioKind::MovingShock | ScenarioKind::Riemann)
            && !(self.r0 > d.r_min && self.r0 < d.r_max)
        {
            return Err(Error::Parameter(format!("jump location r0 = {} must be inside the domain", self.r0)));
        }
        if self.kind == ScenarioKind::Riemann && !(self.v_left.abs() <= 1.0 && self.v_right.abs() <= 1.0) {
            return Err(Error::Parameter("Riemann states must lie in [-1, 1]".into()));
        }
        // every initial value must exist on the closed domain
        self.initial(d.r_min)?;
        self.initial(d.r_max)?;
        Ok(())
    }

    fn plus(&self, k: f64, r: f64) -> Result<f64> {
        steady_state(r, SteadyStateParams { k, branch: Branch::Plus }, self.bh)
    }

    /// Initial velocity `v0(r)`.
    pub fn initial(&self, r: f64) -> Result<f64> {
        match self.kind {
            ScenarioKind::SteadyState => self.plus(self.k_left, r),
            ScenarioKind::SteadyShock => steady_shock(r, SteadyShockParams { k: self.k_left, r0: self.r0 }, self.bh),
            ScenarioKind::MovingShock => self.plus(if r < self.r0 { self.k_left } else { self.k_right }, r),
            ScenarioKind::Riemann => Ok(if r < self.r0 { self.v_left } else { self.v_right }),
        }
    }

    /// Boundary target at one end of the domain.
    pub fn boundary(&self, side: Side) -> Result<f64> {
        match side {
            Side::Inner => self.initial(self.domain.r_min),
            Side::Outer => self.initial(self.domain.r_max),
        }
    }

    pub fn boundary_radius(&self, side: Side) -> f64 {
        match side {
            Side::Inner => self.domain.r_min,
            Side::Outer => self.domain.r_max,
        }
    }

    pub fn has_closed_form(&self) -> bool {
        match self.kind {
            ScenarioKind::SteadyState | ScenarioKind::SteadyShock => true,
            ScenarioKind::Riemann => self.bh.mass == 0.0,
            ScenarioKind::MovingShock => false,
        }
    }

    /// Exact solution where one is known: the steady families are time
    /// independent, and flat-space Riemann data has the classical Burgers
    /// shock/rarefaction solution.
    pub fn exact(&self, t: f64, r: f64) -> Result<f64> {
        match self.kind {
            ScenarioKind::SteadyState | ScenarioKind::SteadyShock => self.initial(r),
            ScenarioKind::Riemann if self.bh.mass == 0.0 => Ok(burgers_riemann(self.v_left, self.v_right, self.r0, t, r)),
            _ => Err(Error::Parameter(format!("scenario {} has no closed-form solution", self.kind.name()))),
        }
    }

    /// Ground-truth shock position when the scenario has a single sharp front
    /// with a known trajectory.
    pub fn exact_shock_position(&self, t: f64) -> Option<f64> {
        match self.kind {
            ScenarioKind::SteadyShock => Some(self.r0),
            ScenarioKind::Riemann if self.bh.mass == 0.0 && self.v_left > self.v_right => {
                Some(self.r0 + 0.5 * (self.v_left + self.v_right) * t)
            }
            _ => None,
        }
    }
}

/// Entropy solution of `v_t + (v^2/2)_r = 0` with a jump at `r0`.
pub fn burgers_riemann(v_left: f64, v_right: f64, r0: f64, t: f64, r: f64) -> f64 {
    if t <= 0.0 {
        return if r < r0 { v_left } else { v_right };
    }
    let xi = (r - r0) / t;
    if v_left > v_right {
        if xi < 0.5 * (v_left + v_right) {
            v_left
        } else {
            v_right
        }
    } else {
        xi.clamp(v_left, v_right)
    }
}
