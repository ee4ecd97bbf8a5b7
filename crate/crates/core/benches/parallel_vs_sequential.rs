use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use relburgers::fv::{fv_init, FvConfig, FvSolver, Grid1D};
use relburgers::network::{init_params, ModelSpec};
use relburgers::parallel::Parallelism;
use relburgers::residual::{FluxVariant, LossEvaluator, LossWeights, DEFAULT_DELTA};
use relburgers::trainer::{sample_collocation, SamplingConfig, Scenario};

const MODES: [(&str, Parallelism); 2] = [("sequential", Parallelism::Sequential), ("rayon", Parallelism::Rayon)];

fn loss_and_grad(c: &mut Criterion) {
    let sc = Scenario::moving_shock();
    let spec = ModelSpec::new(sc.domain, sc.t_final);
    let colloc = sample_collocation(&sc, &SamplingConfig { n_eqn: 2000, ..SamplingConfig::default() }).unwrap();
    let params = init_params(&spec, 0);
    let w = LossWeights { eqn: 1.0, ini: 1.0, bnd: 1.0 };
    let mut group = c.benchmark_group("loss_and_grad");
    group.sample_size(10);
    for (name, mode) in MODES {
        let ev = LossEvaluator::new(&spec, &colloc, sc.bh, DEFAULT_DELTA, FluxVariant::Paper, mode).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(name), &ev, |b, ev| b.iter(|| ev.value_and_grad(&params.0, w).unwrap()));
    }
    group.finish();
}

fn fv_steps(c: &mut Criterion) {
    let sc = Scenario::moving_shock();
    let mut group = c.benchmark_group("fv_100_steps");
    group.sample_size(10);
    for (name, mode) in MODES {
        let cfg = FvConfig { n_cells: 4000, parallelism: mode, ..FvConfig::default() };
        let solver = FvSolver::for_scenario(&sc, &cfg).unwrap();
        let grid = Grid1D::from_domain(&sc.domain, cfg.n_cells, sc.bh).unwrap();
        let u0 = fv_init(grid, &sc).unwrap();
        group.bench_function(name, |b| {
            b.iter(|| {
                let mut s = u0.clone();
                for _ in 0..100 {
                    s = solver.step(&s).unwrap().0;
                }
                s
            })
        });
    }
    group.finish();
}

criterion_group!(benches, loss_and_grad, fv_steps);
criterion_main!(benches);
