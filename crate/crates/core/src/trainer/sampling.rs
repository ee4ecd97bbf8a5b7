use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Scenario;
use crate::error::{Error, Result};
use crate::residual::{BoundaryPoint, CollocationSet, InitialPoint, Side};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingStrategy {
    UniformRandom,
    Grid,
}

/// Collocation counts; `n_bnd` is per side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub n_eqn: usize,
    pub n_ini: usize,
    pub n_bnd: usize,
    pub seed: u64,
    pub strategy: SamplingStrategy,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self { n_eqn: 2000, n_ini: 200, n_bnd: 200, seed: 0, strategy: SamplingStrategy::UniformRandom }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_eqn < 1 || self.n_ini < 1 || self.n_bnd < 1 {
            return Err(Error::Parameter("collocation counts must be at least 1".into()));
        }
        Ok(())
    }
}

/// Midpoints of `n` equal cells of `[a, b]`.
fn midpoints(a: f64, b: f64, n: usize) -> impl Iterator<Item = f64> {
    let h = (b - a) / n as f64;
    (0..n).map(move |i| a + (i as f64 + 0.5) * h)
}

/// Interior, initial and boundary samples for a scenario.
///
/// Interior times lie in `(0, T]`; the two sides share boundary times.
pub fn sample_collocation(scenario: &Scenario, cfg: &SamplingConfig) -> Result<CollocationSet> {
    cfg.validate()?;
    scenario.validate()?;
    let d = scenario.domain;
    let t_final = scenario.t_final;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (eqn, ini_r, bnd_t): (Vec<(f64, f64)>, Vec<f64>, Vec<f64>) = match cfg.strategy {
        SamplingStrategy::UniformRandom => {
            let eqn = (0..cfg.n_eqn)
                .map(|_| {
                    let t = t_final * (1.0 - rng.gen::<f64>());
                    (t, rng.gen_range(d.r_min..=d.r_max))
                })
                .collect();
            let ini = (0..cfg.n_ini).map(|_| rng.gen_range(d.r_min..=d.r_max)).collect();
            let bnd = (0..cfg.n_bnd).map(|_| rng.gen_range(0.0..=t_final)).collect();
            (eqn, ini, bnd)
        }
        SamplingStrategy::Grid => {
            // near-square cells in (t, r)
            let nr = ((cfg.n_eqn as f64 * d.length() / t_final.max(f64::MIN_POSITIVE)).sqrt().ceil() as usize).clamp(1, cfg.n_eqn);
            let nt = cfg.n_eqn.div_ceil(nr);
            let eqn = midpoints(0.0, t_final, nt)
                .flat_map(|t| midpoints(d.r_min, d.r_max, nr).map(move |r| (t, r)))
                .take(cfg.n_eqn)
                .collect();
            (eqn, midpoints(d.r_min, d.r_max, cfg.n_ini).collect(), midpoints(0.0, t_final, cfg.n_bnd).collect())
        }
    };
    let ini = ini_r
        .into_iter()
        .map(|r| Ok(InitialPoint { r, target: scenario.initial(r)? }))
        .collect::<Result<_>>()?;
    let targets = (scenario.boundary(Side::Inner)?, scenario.boundary(Side::Outer)?);
    let bnd = bnd_t
        .into_iter()
        .flat_map(|t| {
            [
                BoundaryPoint { t, side: Side::Inner, r: d.r_min, target: targets.0 },
                BoundaryPoint { t, side: Side::Outer, r: d.r_max, target: targets.1 },
            ]
        })
        .collect();
    Ok(CollocationSet { eqn, ini, bnd })
}
