//! Scenarios, collocation sampling and the staged training schedule.

mod metrics;
mod sampling;
mod scenario;

use std::hash::{DefaultHasher, Hasher};

use serde::{Deserialize, Serialize};

pub use metrics::{evaluate, EvalGridConfig, EvalTable, Metrics, Oracle, ShockSample, SHOCK_BAND};
pub use sampling::{sample_collocation, SamplingConfig, SamplingStrategy};
pub use scenario::{burgers_riemann, Scenario, ScenarioKind, DEFAULT_EPSILON, DEFAULT_R_MAX, DEFAULT_T_FINAL};

use crate::error::{Error, Result};
use crate::network::{init_params, ModelSpec, ParamVector, StoredModel};
use crate::optimizer::{lbfgs_minimize, LbfgsConfig, OptimTrace, Termination};
use crate::parallel::Parallelism;
use crate::residual::{FluxVariant, LossEvaluator, LossParts, LossWeights, DEFAULT_DELTA};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub weights: LossWeights,
    pub maxiter: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSchedule {
    pub phases: Vec<Phase>,
}

impl Default for PhaseSchedule {
    /// Data only, then a weak residual, then everything at weight one.
    fn default() -> Self {
        let phase = |eqn| Phase { weights: LossWeights { eqn, ini: 1.0, bnd: 1.0 }, maxiter: 500 };
        Self { phases: vec![phase(0.0), phase(1e-2), phase(1.0)] }
    }
}

impl PhaseSchedule {
    pub fn single(weights: LossWeights, maxiter: usize) -> Self {
        Self { phases: vec![Phase { weights, maxiter }] }
    }

    pub fn validate(&self) -> Result<()> {
        if self.phases.is_empty() {
            return Err(Error::Parameter("schedule needs at least one phase".into()));
        }
        for p in &self.phases {
            p.weights.validate()?;
            if p.maxiter == 0 {
                return Err(Error::Parameter("phase maxiter must be at least 1".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub sampling: SamplingConfig,
    pub schedule: PhaseSchedule,
    pub lbfgs: LbfgsConfig,
    pub delta: f64,
    pub flux_variant: FluxVariant,
    pub eval: EvalGridConfig,
    /// Execution strategy only; results do not depend on it.
    #[serde(skip)]
    pub parallelism: Parallelism,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            sampling: SamplingConfig::default(),
            schedule: PhaseSchedule::default(),
            lbfgs: LbfgsConfig::default(),
            delta: DEFAULT_DELTA,
            flux_variant: FluxVariant::Paper,
            eval: EvalGridConfig::default(),
            parallelism: Parallelism::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.sampling.validate()?;
        self.schedule.validate()?;
        self.lbfgs.validate()?;
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::Parameter(format!("delta = {} must be positive", self.delta)));
        }
        if self.eval.n_t < 2 || self.eval.n_r < 2 || self.eval.oracle_cells < 2 {
            return Err(Error::Parameter("evaluation grid needs at least 2 points per axis".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseReport {
    pub weights: LossWeights,
    pub maxiter: usize,
    pub start: LossParts,
    pub end: LossParts,
    /// Digests of the parameter bits entering and leaving the phase.
    pub start_digest: String,
    pub end_digest: String,
    pub trace: OptimTrace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub scenario: Scenario,
    pub spec: ModelSpec,
    pub config: TrainConfig,
    pub seed: u64,
    pub param_count: usize,
    pub degenerate_stencils: usize,
    pub phases: Vec<PhaseReport>,
    pub warm_start_improved: bool,
    pub sharpness: f64,
    pub metrics: Metrics,
    pub aborted: Option<String>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub report: TrainReport,
    pub model: StoredModel,
    pub table: EvalTable,
}

pub fn params_digest(p: &[f64]) -> String {
    let mut h = DefaultHasher::new();
    for x in p {
        h.write_u64(x.to_bits());
    }
    format!("{:016x}", h.finish())
}

/// Run every phase of the schedule, warm-starting each from the last, then
/// score the result against the scenario oracle.
///
/// A phase ending on a numeric failure stops the schedule; the report then
/// carries the reason in `aborted` and metrics for the parameters reached.
pub fn train(scenario: &Scenario, spec: &ModelSpec, cfg: &TrainConfig, seed: u64) -> Result<TrainOutcome> {
    scenario.validate()?;
    spec.validate()?;
    cfg.validate()?;
    if spec.domain != scenario.domain {
        return Err(Error::Parameter("model domain differs from the scenario domain".into()));
    }
    let colloc = sample_collocation(scenario, &cfg.sampling)?;
    let evaluator = LossEvaluator::new(spec, &colloc, scenario.bh, cfg.delta, cfg.flux_variant, cfg.parallelism)?;
    let mut params = init_params(spec, seed);
    let mut phases = Vec::with_capacity(cfg.schedule.phases.len());
    let mut aborted = None;
    for phase in &cfg.schedule.phases {
        let w = phase.weights;
        let start = evaluator.value(&params.0, w)?;
        let start_digest = params_digest(&params.0);
        let lbfgs = LbfgsConfig { maxiter: phase.maxiter, ..cfg.lbfgs };
        let objective = |x: &[f64]| evaluator.value_and_grad(x, w).map(|(parts, g)| (parts.total, g));
        let (x, trace) = lbfgs_minimize(objective, params.0.clone(), &lbfgs)?;
        params = ParamVector(x);
        let end = evaluator.value(&params.0, w)?;
        let failed = trace.reason == Termination::Numeric;
        if failed {
            aborted = Some(format!("numeric failure: {}", trace.message));
        }
        phases.push(PhaseReport {
            weights: w,
            maxiter: phase.maxiter,
            start,
            end,
            start_digest,
            end_digest: params_digest(&params.0),
            trace,
        });
        if failed {
            break;
        }
    }
    let warm_start_improved = phases.first().is_some_and(|p| p.end.total < p.start.total);
    let (metrics, table) = evaluate(scenario, spec, &params, &cfg.eval)?;
    let report = TrainReport {
        scenario: *scenario,
        spec: spec.clone(),
        config: cfg.clone(),
        seed,
        param_count: params.len(),
        degenerate_stencils: evaluator.degenerate_stencils(),
        phases,
        warm_start_improved,
        sharpness: params.sharpness(spec),
        metrics,
        aborted,
    };
    Ok(TrainOutcome { report, model: StoredModel { spec: spec.clone(), seed, params }, table })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(schedule: PhaseSchedule) -> TrainConfig {
        TrainConfig {
            sampling: SamplingConfig { n_eqn: 64, n_ini: 32, n_bnd: 16, seed: 1, strategy: SamplingStrategy::UniformRandom },
            schedule,
            eval: EvalGridConfig { n_t: 4, n_r: 20, oracle_cells: 200 },
            parallelism: Parallelism::Sequential,
            ..TrainConfig::default()
        }
    }

    fn short_schedule() -> PhaseSchedule {
        let mut s = PhaseSchedule::default();
        s.phases.iter_mut().for_each(|p| p.maxiter = 5);
        s
    }

    #[test]
    fn default_schedule_matches_three_phases() {
        let s = PhaseSchedule::default();
        let eqn: Vec<f64> = s.phases.iter().map(|p| p.weights.eqn).collect();
        assert_eq!(eqn, vec![0.0, 1e-2, 1.0]);
        assert!(s.phases.iter().all(|p| p.maxiter == 500 && p.weights.ini == 1.0 && p.weights.bnd == 1.0));
    }

    #[test]
    fn phases_chain_bit_identically() {
        let sc = Scenario::steady_state();
        let spec = ModelSpec::new(sc.domain, sc.t_final);
        let out = train(&sc, &spec, &small(short_schedule()), 3).unwrap();
        let ph = &out.report.phases;
        assert_eq!(ph.len(), 3);
        for w in ph.windows(2) {
            assert_eq!(w[0].end_digest, w[1].start_digest);
            assert_eq!((w[0].end.ini, w[0].end.bnd), (w[1].start.ini, w[1].start.bnd));
        }
        assert!(out.report.warm_start_improved);
        assert_eq!(ph[2].end_digest, params_digest(&out.model.params.0));
    }

    #[test]
    fn single_phase_is_one_optimizer_call() {
        let sc = Scenario::steady_state();
        let spec = ModelSpec::new(sc.domain, sc.t_final);
        let out = train(&sc, &spec, &small(PhaseSchedule::single(LossWeights { eqn: 1.0, ini: 1.0, bnd: 1.0 }, 4)), 0).unwrap();
        assert_eq!(out.report.phases.len(), 1);
        assert!(out.report.phases[0].trace.iterations() <= 4);
    }

    #[test]
    fn reports_are_deterministic() {
        let sc = Scenario::moving_shock();
        let spec = ModelSpec::new(sc.domain, sc.t_final);
        let cfg = small(short_schedule());
        let a = train(&sc, &spec, &cfg, 5).unwrap();
        let b = train(&sc, &spec, &TrainConfig { parallelism: Parallelism::Rayon, ..cfg }, 5).unwrap();
        assert_eq!(serde_json::to_string(&a.report).unwrap(), serde_json::to_string(&b.report).unwrap());
    }

    #[test]
    fn rejects_mismatched_domain() {
        let sc = Scenario::steady_state();
        let other = Scenario::riemann(1.0, 0.0, 2.0, 1.0, 3.0, 1.0).unwrap();
        let spec = ModelSpec::new(other.domain, sc.t_final);
        assert!(train(&sc, &spec, &small(short_schedule()), 0).is_err());
    }
}
