//! Flat run configuration shared by all subcommands.
//!
//! Values come from defaults, then the `--config` file, then `--set key=value`
//! pairs, then dedicated flags. The merged config is echoed to
//! `config.toml` in the output directory.

use std::path::Path;

use relburgers::fv::FvConfig;
use relburgers::network::{ModelSpec, ShockInputs};
use relburgers::optimizer::LbfgsConfig;
use relburgers::parallel::Parallelism;
use relburgers::physics::{BlackHole, RadialDomain};
use relburgers::residual::{FluxVariant, LossWeights};
use relburgers::trainer::{
    EvalGridConfig, Phase, PhaseSchedule, SamplingConfig, SamplingStrategy, Scenario, ScenarioKind, TrainConfig,
};
use relburgers::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: ScenarioKind,
    pub seed: u64,
    pub out: String,

    pub mass: f64,
    pub epsilon: f64,
    pub r_max: f64,
    pub t_final: f64,
    pub k_left: f64,
    /// Defaults to 15/16 for `moving_shock`, else `k_left`.
    pub k_right: Option<f64>,
    /// Defaults to `5M` (`(r_min + r_max) / 2` in flat space).
    pub r0: Option<f64>,
    pub v_left: f64,
    pub v_right: f64,

    pub shock_inputs: ShockInputs,

    pub n_eqn: usize,
    pub n_ini: usize,
    pub n_bnd: usize,
    /// Defaults to `seed`.
    pub sampling_seed: Option<u64>,
    pub strategy: SamplingStrategy,
    pub phase_eqn_weights: Vec<f64>,
    pub phase_maxiter: Vec<usize>,
    pub ini_weight: f64,
    pub bnd_weight: f64,
    pub memory: usize,
    pub factr: f64,
    pub maxls: usize,
    pub pgtol: f64,
    pub delta: f64,
    pub flux_variant: FluxVariant,
    pub eval_nt: usize,
    pub eval_nr: usize,
    pub oracle_cells: usize,

    pub fv_cells: usize,
    pub cfl: f64,
    pub fv_variant: FluxVariant,
    /// Output times for `analytic` and `fv`; defaults to `0, 1, ..., T`.
    pub times: Option<Vec<f64>>,
    /// Radial samples for `analytic`.
    pub n_r: usize,

    pub parallelism: Parallelism,
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        let fv = FvConfig::default();
        Self {
            scenario: ScenarioKind::SteadyState,
            seed: 0,
            out: "out".into(),
            mass: 1.0,
            epsilon: relburgers::trainer::DEFAULT_EPSILON,
            r_max: relburgers::trainer::DEFAULT_R_MAX,
            t_final: relburgers::trainer::DEFAULT_T_FINAL,
            k_left: 0.75,
            k_right: None,
            r0: None,
            v_left: 1.0,
            v_right: 0.0,
            shock_inputs: ShockInputs::default(),
            n_eqn: train.sampling.n_eqn,
            n_ini: train.sampling.n_ini,
            n_bnd: train.sampling.n_bnd,
            sampling_seed: None,
            strategy: train.sampling.strategy,
            phase_eqn_weights: train.schedule.phases.iter().map(|p| p.weights.eqn).collect(),
            phase_maxiter: train.schedule.phases.iter().map(|p| p.maxiter).collect(),
            ini_weight: 1.0,
            bnd_weight: 1.0,
            memory: train.lbfgs.memory,
            factr: train.lbfgs.factr,
            maxls: train.lbfgs.maxls,
            pgtol: train.lbfgs.pgtol,
            delta: train.delta,
            flux_variant: train.flux_variant,
            eval_nt: train.eval.n_t,
            eval_nr: train.eval.n_r,
            oracle_cells: train.eval.oracle_cells,
            fv_cells: fv.n_cells,
            cfl: fv.cfl,
            fv_variant: fv.variant,
            times: None,
            n_r: 200,
            parallelism: Parallelism::default(),
        }
    }
}

fn parse_err(e: impl std::fmt::Display) -> Error {
    Error::Parse(e.to_string())
}

/// Merge a TOML file (optional) and `key=value` overrides into a table and
/// decode it.
pub fn load(file: Option<&Path>, sets: &[String]) -> Result<RunConfig> {
    let mut table = match file {
        Some(p) => std::fs::read_to_string(p)?.parse::<toml::Table>().map_err(parse_err)?,
        None => toml::Table::new(),
    };
    for s in sets {
        let (k, v) = s.split_once('=').ok_or_else(|| Error::Parse(format!("expected key=value, got '{s}'")))?;
        let (k, v) = (k.trim(), v.trim());
        // bare words are taken as strings
        let value = match format!("x = {v}").parse::<toml::Table>() {
            Ok(mut t) => t.remove("x").expect("parsed key"),
            Err(_) => toml::Value::String(v.to_string()),
        };
        table.insert(k.to_string(), value);
    }
    from_table(table)
}

pub fn from_table(table: toml::Table) -> Result<RunConfig> {
    RunConfig::deserialize(toml::Value::Table(table)).map_err(parse_err)
}

pub fn to_toml(cfg: &RunConfig) -> Result<String> {
    toml::to_string(cfg).map_err(parse_err)
}

impl RunConfig {
    pub fn scenario(&self) -> Result<Scenario> {
        let bh = BlackHole::new(self.mass)?;
        let domain = RadialDomain::new(bh, self.epsilon, self.r_max)?;
        let mut s = Scenario::preset(self.scenario);
        s.bh = bh;
        s.domain = domain;
        s.t_final = self.t_final;
        s.k_left = self.k_left;
        s.k_right = self.k_right.unwrap_or(if self.scenario == ScenarioKind::MovingShock { 15.0 / 16.0 } else { self.k_left });
        s.r0 = self.r0.unwrap_or(if self.mass > 0.0 { 5.0 * self.mass } else { 0.5 * (domain.r_min + domain.r_max) });
        s.v_left = self.v_left;
        s.v_right = self.v_right;
        s.validate()?;
        Ok(s)
    }

    pub fn model_spec(&self, scenario: &Scenario) -> ModelSpec {
        ModelSpec { shock_inputs: self.shock_inputs, ..ModelSpec::new(scenario.domain, scenario.t_final) }
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        if self.phase_eqn_weights.len() != self.phase_maxiter.len() {
            return Err(Error::Parameter(format!(
                "phase_eqn_weights has {} entries but phase_maxiter has {}",
                self.phase_eqn_weights.len(),
                self.phase_maxiter.len()
            )));
        }
        let phases = self
            .phase_eqn_weights
            .iter()
            .zip(&self.phase_maxiter)
            .map(|(&eqn, &maxiter)| Phase { weights: LossWeights { eqn, ini: self.ini_weight, bnd: self.bnd_weight }, maxiter })
            .collect();
        let cfg = TrainConfig {
            sampling: SamplingConfig {
                n_eqn: self.n_eqn,
                n_ini: self.n_ini,
                n_bnd: self.n_bnd,
                seed: self.sampling_seed.unwrap_or(self.seed),
                strategy: self.strategy,
            },
            schedule: PhaseSchedule { phases },
            lbfgs: LbfgsConfig {
                memory: self.memory,
                factr: self.factr,
                maxls: self.maxls,
                pgtol: self.pgtol,
                ..LbfgsConfig::default()
            },
            delta: self.delta,
            flux_variant: self.flux_variant,
            eval: EvalGridConfig { n_t: self.eval_nt, n_r: self.eval_nr, oracle_cells: self.oracle_cells },
            parallelism: self.parallelism,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn fv_config(&self) -> Result<FvConfig> {
        let cfg = FvConfig { n_cells: self.fv_cells, cfl: self.cfl, variant: self.fv_variant, parallelism: self.parallelism };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn output_times(&self, t_final: f64) -> Result<Vec<f64>> {
        let times = match &self.times {
            Some(t) => t.clone(),
            None => {
                let n = t_final.ceil() as usize;
                (0..=n).map(|i| (i as f64).min(t_final)).collect()
            }
        };
        if times.is_empty() || times.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return Err(Error::Parameter("times must be a nonempty list of finite nonnegative values".into()));
        }
        Ok(times)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig::default();
        let text = to_toml(&cfg).unwrap();
        assert_eq!(from_table(text.parse().unwrap()).unwrap(), cfg);
    }

    #[test]
    fn overrides_apply_in_order() {
        let cfg = load(None, &["scenario=moving_shock".into(), "n_eqn = 10".into(), "times=[0.5, 1.0]".into()]).unwrap();
        assert_eq!(cfg.scenario, ScenarioKind::MovingShock);
        assert_eq!(cfg.n_eqn, 10);
        assert_eq!(cfg.times, Some(vec![0.5, 1.0]));
        assert_eq!(cfg.scenario().unwrap().k_right, 15.0 / 16.0);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(load(None, &["learning_rate=0.1".into()]).is_err());
        assert!(load(None, &["novalue".into()]).is_err());
    }

    #[test]
    fn default_times_cover_the_horizon() {
        assert_eq!(RunConfig::default().output_times(5.0).unwrap(), vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(RunConfig::default().output_times(1.5).unwrap(), vec![0.0, 1.0, 1.5]);
    }
}
