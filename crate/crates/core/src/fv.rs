//! First-order Godunov finite-volume solver for the conserved variable
//! `u = v / m^2`, with Dirichlet ghost cells at both ends.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::parallel::Parallelism;
use crate::physics::{metric, BlackHole, RadialDomain};
use crate::residual::{godunov_flux_partials, FluxVariant, Side};
use crate::trainer::Scenario;

pub const DEFAULT_CFL: f64 = 0.45;
const SPEED_FLOOR: f64 = 1e-12;
// |v| beyond this after a step means the scheme went unstable
const VELOCITY_GUARD: f64 = 1.0 + 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid1D {
    pub r_min: f64,
    pub r_max: f64,
    pub n_cells: usize,
}

impl Grid1D {
    pub fn new(r_min: f64, r_max: f64, n_cells: usize, bh: BlackHole) -> Result<Self> {
        if n_cells < 2 {
            return Err(Error::Parameter(format!("n_cells = {n_cells} must be at least 2")));
        }
        if !(r_min > bh.horizon() && r_max > r_min && r_max.is_finite()) {
            return Err(Error::Parameter(format!(
                "grid [{r_min}, {r_max}] must satisfy 2M < r_min < r_max"
            )));
        }
        Ok(Self { r_min, r_max, n_cells })
    }

    pub fn from_domain(domain: &RadialDomain, n_cells: usize, bh: BlackHole) -> Result<Self> {
        Self::new(domain.r_min, domain.r_max, n_cells, bh)
    }

    pub fn dr(&self) -> f64 {
        (self.r_max - self.r_min) / self.n_cells as f64
    }

    pub fn center(&self, i: usize) -> f64 {
        self.r_min + (i as f64 + 0.5) * self.dr()
    }

    /// Interface `i` sits between cells `i-1` and `i`; `0` and `n_cells` are
    /// the domain ends.
    pub fn interface(&self, i: usize) -> f64 {
        if i == self.n_cells {
            self.r_max
        } else {
            self.r_min + i as f64 * self.dr()
        }
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.n_cells).map(|i| self.center(i)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FvState {
    pub time: f64,
    pub u: Vec<f64>,
}

/// Per-step bookkeeping: the time step taken and the two boundary fluxes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    pub dt: f64,
    pub flux_in: f64,
    pub flux_out: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FvConfig {
    pub n_cells: usize,
    pub cfl: f64,
    pub variant: FluxVariant,
    #[serde(default)]
    pub parallelism: Parallelism,
}

impl Default for FvConfig {
    fn default() -> Self {
        Self { n_cells: 2000, cfl: DEFAULT_CFL, variant: FluxVariant::Exact, parallelism: Parallelism::default() }
    }
}

impl FvConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.cfl > 0.0 && self.cfl <= 1.0) {
            return Err(Error::Parameter(format!("cfl = {} must lie in (0, 1]", self.cfl)));
        }
        if self.n_cells < 2 {
            return Err(Error::Parameter(format!("n_cells = {} must be at least 2", self.n_cells)));
        }
        Ok(())
    }
}

/// Precomputed metric factors plus the fixed ghost values.
#[derive(Debug, Clone)]
pub struct FvSolver {
    pub grid: Grid1D,
    pub bh: BlackHole,
    pub cfl: f64,
    pub variant: FluxVariant,
    pub ghost: (f64, f64),
    pub parallelism: Parallelism,
    m_center: Vec<f64>,
    m_face: Vec<f64>,
}

impl FvSolver {
    pub fn new(grid: Grid1D, bh: BlackHole, ghost: (f64, f64), cfl: f64, variant: FluxVariant) -> Result<Self> {
        let grid = Grid1D::new(grid.r_min, grid.r_max, grid.n_cells, bh)?;
        if !(cfl > 0.0 && cfl <= 1.0) {
            return Err(Error::Parameter(format!("cfl = {cfl} must lie in (0, 1]")));
        }
        let m_center = (0..grid.n_cells).map(|i| metric(grid.center(i), bh)).collect::<Result<_>>()?;
        let m_face = (0..=grid.n_cells).map(|i| metric(grid.interface(i), bh)).collect::<Result<_>>()?;
        Ok(Self { grid, bh, cfl, variant, ghost, parallelism: Parallelism::default(), m_center, m_face })
    }

    /// Solver for a scenario, ghost cells pinned to its boundary targets.
    pub fn for_scenario(scenario: &Scenario, cfg: &FvConfig) -> Result<Self> {
        cfg.validate()?;
        let grid = Grid1D::from_domain(&scenario.domain, cfg.n_cells, scenario.bh)?;
        let ghost = (scenario.boundary(Side::Inner)?, scenario.boundary(Side::Outer)?);
        let mut s = Self::new(grid, scenario.bh, ghost, cfg.cfl, cfg.variant)?;
        s.parallelism = cfg.parallelism;
        Ok(s)
    }

    pub fn init(&self, v0: impl Fn(f64) -> Result<f64>) -> Result<FvState> {
        let u = (0..self.grid.n_cells)
            .map(|i| {
                let m = self.m_center[i];
                Ok(v0(self.grid.center(i))? / (m * m))
            })
            .collect::<Result<_>>()?;
        Ok(FvState { time: 0.0, u })
    }

    pub fn velocities(&self, state: &FvState) -> Vec<f64> {
        state.u.iter().zip(&self.m_center).map(|(u, m)| u * m * m).collect()
    }

    /// CFL time step for the current state.
    pub fn stable_dt(&self, v: &[f64]) -> f64 {
        // fixed left-to-right fold, so the result never depends on threads
        let max_speed = v.iter().zip(&self.m_center).fold(0.0f64, |acc, (v, m)| acc.max(m * v.abs()));
        self.cfl * self.grid.dr() / (max_speed + SPEED_FLOOR)
    }

    fn interface_fluxes(&self, v: &[f64]) -> Vec<f64> {
        let n = self.grid.n_cells;
        self.parallelism.map_range(n + 1, |j| {
            let vl = if j == 0 { self.ghost.0 } else { v[j - 1] };
            let vr = if j == n { self.ghost.1 } else { v[j] };
            godunov_flux_partials(vl, vr, self.m_face[j], self.variant).0
        })
    }

    /// One step of at most `dt_cap` (the CFL step if smaller).
    pub fn step_capped(&self, state: &FvState, dt_cap: f64) -> Result<(FvState, StepInfo)> {
        let v = self.velocities(state);
        let dt = self.stable_dt(&v).min(dt_cap);
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Numeric(format!("invalid time step {dt} at t = {}", state.time)));
        }
        let flux = self.interface_fluxes(&v);
        let ratio = dt / self.grid.dr();
        let u: Vec<f64> = state.u.iter().enumerate().map(|(i, u)| u - ratio * (flux[i + 1] - flux[i])).collect();
        for (i, (u, m)) in u.iter().zip(&self.m_center).enumerate() {
            let v = u * m * m;
            if !v.is_finite() || v.abs() > VELOCITY_GUARD {
                return Err(Error::Numeric(format!(
                    "velocity {v} left [-1, 1] in cell {i} at t = {}",
                    state.time + dt
                )));
            }
        }
        let info = StepInfo { dt, flux_in: flux[0], flux_out: flux[self.grid.n_cells] };
        Ok((FvState { time: state.time + dt, u }, info))
    }

    pub fn step(&self, state: &FvState) -> Result<(FvState, StepInfo)> {
        self.step_capped(state, f64::INFINITY)
    }

    /// Advance to each requested time in turn, shortening the last step
    /// before each output so snapshots land exactly on the requested times.
    pub fn run(&self, initial: FvState, output_times: &[f64]) -> Result<FvRun> {
        let mut times = output_times.to_vec();
        if times.iter().any(|t| !(t.is_finite() && *t >= initial.time)) {
            return Err(Error::Parameter("output times must be finite and not before the initial time".into()));
        }
        times.sort_by(f64::total_cmp);
        times.dedup();
        let mut state = initial;
        let mut snapshots = Vec::with_capacity(times.len());
        let mut steps = 0usize;
        for target in times {
            while state.time < target {
                let (mut next, _) = self.step_capped(&state, target - state.time)?;
                // guard against rounding leaving a sliver below the target
                if target - next.time <= 1e-14 * target.abs().max(1.0) {
                    next.time = target;
                }
                state = next;
                steps += 1;
            }
            snapshots.push(state.clone());
        }
        Ok(FvRun { grid: self.grid, steps, snapshots })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FvRun {
    pub grid: Grid1D,
    pub steps: usize,
    pub snapshots: Vec<FvState>,
}

pub fn fv_init(grid: Grid1D, scenario: &Scenario) -> Result<FvState> {
    let solver = FvSolver::new(grid, scenario.bh, (scenario.boundary(Side::Inner)?, scenario.boundary(Side::Outer)?), DEFAULT_CFL, FluxVariant::Exact)?;
    solver.init(|r| scenario.initial(r))
}

/// Single exact-variant step with ghost values `ghost = (inner, outer)`.
pub fn fv_step(state: &FvState, grid: Grid1D, bh: BlackHole, cfl: f64, ghost: (f64, f64)) -> Result<FvState> {
    Ok(FvSolver::new(grid, bh, ghost, cfl, FluxVariant::Exact)?.step(state)?.0)
}

/// Evolve a scenario's initial data, returning one snapshot per output time.
pub fn fv_run(scenario: &Scenario, cfg: &FvConfig, output_times: &[f64]) -> Result<FvRun> {
    let solver = FvSolver::for_scenario(scenario, cfg)?;
    let init = solver.init(|r| scenario.initial(r))?;
    solver.run(init, output_times)
}

/// Recover per-cell velocities from a snapshot.
pub fn cell_velocities(grid: &Grid1D, bh: BlackHole, state: &FvState) -> Result<Vec<f64>> {
    (0..grid.n_cells)
        .map(|i| {
            let m = metric(grid.center(i), bh)?;
            Ok(state.u[i] * m * m)
        })
        .collect()
}

/// `sum_i |v_i - exact(r_i)| dr` over cell centers.
pub fn l1_distance(grid: &Grid1D, v: &[f64], exact: impl Fn(f64) -> f64) -> f64 {
    v.iter().enumerate().map(|(i, v)| (v - exact(grid.center(i))).abs()).sum::<f64>() * grid.dr()
}

/// Interface with the largest velocity jump (the first one on ties).
pub fn front_location(grid: &Grid1D, v: &[f64]) -> f64 {
    let mut best = (0usize, f64::NEG_INFINITY);
    for i in 0..v.len().saturating_sub(1) {
        let jump = (v[i + 1] - v[i]).abs();
        if jump > best.1 {
            best = (i, jump);
        }
    }
    grid.interface(best.0 + 1)
}

/// Linear interpolation of cell-center values, constant beyond the outer
/// centers.
pub fn interpolate(grid: &Grid1D, v: &[f64], r: f64) -> f64 {
    let x = (r - grid.r_min) / grid.dr() - 0.5;
    if x <= 0.0 {
        return v[0];
    }
    let i = x.floor() as usize;
    if i + 1 >= v.len() {
        return v[v.len() - 1];
    }
    let w = x - i as f64;
    v[i] * (1.0 - w) + v[i + 1] * w
}

/// Snapshot table with header `t,r,v`, one row per cell per snapshot.
pub fn write_snapshots_csv<W: Write>(out: &mut W, grid: &Grid1D, bh: BlackHole, snapshots: &[FvState]) -> Result<()> {
    writeln!(out, "t,r,v")?;
    for s in snapshots {
        let v = cell_velocities(grid, bh, s)?;
        for (i, v) in v.iter().enumerate() {
            writeln!(out, "{:.16e},{:.16e},{:.16e}", s.time, grid.center(i), v)?;
        }
    }
    Ok(())
}
