use serde::{Deserialize, Serialize};

use super::{Scenario, ScenarioKind};
use crate::error::Result;
use crate::fv::{front_location, fv_run, interpolate, FvConfig};
use crate::network::{forward, shock_location, ModelSpec, ParamVector};

/// Half-width of the band around the front excluded from the "away" errors.
pub const SHOCK_BAND: f64 = 0.5;
/// Samples used for the monotonicity check of `r_s(t)`.
const MONOTONE_SAMPLES: usize = 201;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalGridConfig {
    pub n_t: usize,
    pub n_r: usize,
    pub oracle_cells: usize,
}

impl Default for EvalGridConfig {
    fn default() -> Self {
        Self { n_t: 50, n_r: 200, oracle_cells: 4000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Oracle {
    Analytic,
    FiniteVolume,
}

/// Prediction and reference on a tensor grid, time-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalTable {
    pub t: Vec<f64>,
    pub r: Vec<f64>,
    pub pred: Vec<f64>,
    pub reference: Vec<f64>,
    /// Reference shock position per time, when the scenario has one.
    pub front: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShockSample {
    pub t: f64,
    pub r_s: f64,
    pub reference: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub oracle: Oracle,
    pub rel_l2: f64,
    /// Relative L2 over `|r - front(t)| > SHOCK_BAND`.
    pub rel_l2_away: Option<f64>,
    /// Largest per-time `sum |v - v_ref| dr` over `|r - front(t)| > SHOCK_BAND`.
    pub l1_away_max: Option<f64>,
    pub shock_location_max_error: Option<f64>,
    pub shock_monotone: Option<bool>,
    pub shock_path: Vec<ShockSample>,
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![a];
    }
    (0..n).map(|i| if i == n - 1 { b } else { a + (b - a) * i as f64 / (n - 1) as f64 }).collect()
}

/// Evaluate the model against the scenario oracle on an `n_t x n_r` grid
/// including the domain edges and both end times.
pub fn evaluate(scenario: &Scenario, spec: &ModelSpec, params: &ParamVector, cfg: &EvalGridConfig) -> Result<(Metrics, EvalTable)> {
    let d = scenario.domain;
    let t = linspace(0.0, scenario.t_final, cfg.n_t);
    let r = linspace(d.r_min, d.r_max, cfg.n_r);
    let pred: Vec<f64> = t.iter().flat_map(|&t| r.iter().map(move |&r| (t, r))).map(|(t, r)| forward(params, spec, t, r).v).collect();

    let (oracle, reference, front) = if scenario.has_closed_form() {
        let reference = t
            .iter()
            .flat_map(|&t| r.iter().map(move |&r| (t, r)))
            .map(|(t, r)| scenario.exact(t, r))
            .collect::<Result<Vec<_>>>()?;
        let front = scenario.exact_shock_position(0.0).map(|_| t.iter().map(|&t| scenario.exact_shock_position(t).unwrap()).collect());
        (Oracle::Analytic, reference, front)
    } else {
        let fv_cfg = FvConfig { n_cells: cfg.oracle_cells, ..FvConfig::default() };
        let run = fv_run(scenario, &fv_cfg, &t)?;
        let mut reference = Vec::with_capacity(t.len() * r.len());
        let mut front = Vec::with_capacity(t.len());
        for snap in &run.snapshots {
            let v = crate::fv::cell_velocities(&run.grid, scenario.bh, snap)?;
            reference.extend(r.iter().map(|&r| interpolate(&run.grid, &v, r)));
            front.push(front_location(&run.grid, &v));
        }
        let front = (scenario.kind == ScenarioKind::MovingShock).then_some(front);
        (Oracle::FiniteVolume, reference, front)
    };

    let rel = |mask: &dyn Fn(usize, usize) -> bool| {
        let (mut num, mut den) = (0.0, 0.0);
        for j in 0..t.len() {
            for i in 0..r.len() {
                if mask(j, i) {
                    let k = j * r.len() + i;
                    num += (pred[k] - reference[k]).powi(2);
                    den += reference[k].powi(2);
                }
            }
        }
        (num / den).sqrt()
    };
    let rel_l2 = rel(&|_, _| true);
    let dr = d.length() / (cfg.n_r - 1) as f64;
    let (rel_l2_away, l1_away_max, shock_location_max_error, shock_monotone, shock_path) = match &front {
        Some(front) => {
            let away = |j: usize, i: usize| (r[i] - front[j]).abs() > SHOCK_BAND;
            let l1 = (0..t.len())
                .map(|j| (0..r.len()).filter(|&i| away(j, i)).map(|i| (pred[j * r.len() + i] - reference[j * r.len() + i]).abs()).sum::<f64>() * dr)
                .fold(0.0f64, f64::max);
            let path: Vec<ShockSample> = t
                .iter()
                .zip(front)
                .map(|(&t, &reference)| ShockSample { t, r_s: shock_location(params, spec, t), reference })
                .collect();
            let err = path.iter().map(|s| (s.r_s - s.reference).abs()).fold(0.0f64, f64::max);
            let dense: Vec<f64> = linspace(0.0, scenario.t_final, MONOTONE_SAMPLES).iter().map(|&t| shock_location(params, spec, t)).collect();
            let monotone = dense.windows(2).all(|w| w[1] >= w[0]);
            (Some(rel(&away)), Some(l1), Some(err), Some(monotone), path)
        }
        None => (None, None, None, None, Vec::new()),
    };
    let metrics = Metrics { oracle, rel_l2, rel_l2_away, l1_away_max, shock_location_max_error, shock_monotone, shock_path };
    Ok((metrics, EvalTable { t, r, pred, reference, front }))
}
