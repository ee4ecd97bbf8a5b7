use serde::{Deserialize, Serialize};

use super::{godunov_flux_partials, CollocationSet, FluxVariant, LossWeights, Stencil};
use crate::error::{Error, Result};
use crate::network::batch::{BatchEval, ProbeBatch};
use crate::network::{ModelLayout, ModelSpec};
use crate::parallel::Parallelism;
use crate::physics::BlackHole;

/// Interior points per chunk (three probes each).
const EQN_CHUNK: usize = 128;
/// Initial or boundary probes per chunk.
const DATA_CHUNK: usize = 256;

#[derive(Debug, Clone, Copy)]
enum Term {
    Residual { left: usize, center: usize, right: usize, m_l: f64, m_c: f64, m_r: f64 },
    Initial { probe: usize, target: f64 },
    Boundary { probe: usize, target: f64 },
}

#[derive(Debug, Clone)]
struct Chunk {
    batch: ProbeBatch,
    terms: Vec<Term>,
    interior: bool,
}

/// Unweighted mean squares of the three terms and the weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    pub eqn: f64,
    pub ini: f64,
    pub bnd: f64,
}

#[derive(Debug, Clone, Copy, Default)]
struct Sums {
    eqn: f64,
    ini: f64,
    bnd: f64,
}

/// Batched loss and gradient over a fixed collocation set.
///
/// Points are grouped into fixed chunks at construction; chunk results are
/// summed in chunk order, so the value and gradient are bit-identical for any
/// worker count.
#[derive(Debug, Clone)]
pub struct LossEvaluator {
    spec: ModelSpec,
    layout: ModelLayout,
    delta: f64,
    variant: FluxVariant,
    chunks: Vec<Chunk>,
    n_eqn: usize,
    n_ini: usize,
    n_bnd: usize,
    degenerate_stencils: usize,
    parallelism: Parallelism,
}

impl LossEvaluator {
    pub fn new(
        spec: &ModelSpec,
        colloc: &CollocationSet,
        bh: BlackHole,
        delta: f64,
        variant: FluxVariant,
        parallelism: Parallelism,
    ) -> Result<Self> {
        spec.validate()?;
        let mut chunks = Vec::new();
        let mut degenerate_stencils = 0;
        for group in colloc.eqn.chunks(EQN_CHUNK) {
            let mut batch = ProbeBatch::default();
            let mut terms = Vec::with_capacity(group.len());
            for &(t, r) in group {
                let st = Stencil::new(spec, r, delta)?;
                degenerate_stencils += usize::from(st.clamped);
                let (m_l, m_c, m_r) = st.metrics(bh)?;
                let slot = batch.push_time(t);
                let left = batch.push_probe(slot, st.left());
                let center = batch.push_probe(slot, st.r_center);
                let right = batch.push_probe(slot, st.right());
                terms.push(Term::Residual { left, center, right, m_l, m_c, m_r });
            }
            chunks.push(Chunk { batch, terms, interior: true });
        }
        for group in colloc.ini.chunks(DATA_CHUNK) {
            let mut batch = ProbeBatch::default();
            let slot = batch.push_time(0.0);
            let terms = group
                .iter()
                .map(|p| Term::Initial { probe: batch.push_probe(slot, p.r), target: p.target })
                .collect();
            chunks.push(Chunk { batch, terms, interior: false });
        }
        for group in colloc.bnd.chunks(DATA_CHUNK) {
            let mut batch = ProbeBatch::default();
            let mut terms = Vec::with_capacity(group.len());
            let mut last_t = f64::NAN;
            let mut slot = 0;
            for p in group {
                if p.t != last_t {
                    slot = batch.push_time(p.t);
                    last_t = p.t;
                }
                terms.push(Term::Boundary { probe: batch.push_probe(slot, p.r), target: p.target });
            }
            chunks.push(Chunk { batch, terms, interior: false });
        }
        Ok(Self {
            spec: spec.clone(),
            layout: spec.layout(),
            delta,
            variant,
            chunks,
            n_eqn: colloc.eqn.len(),
            n_ini: colloc.ini.len(),
            n_bnd: colloc.bnd.len(),
            degenerate_stencils,
            parallelism,
        })
    }

    pub fn param_count(&self) -> usize {
        self.layout.param_count()
    }

    /// Interior points whose stencil had to be shifted off a domain edge.
    pub fn degenerate_stencils(&self) -> usize {
        self.degenerate_stencils
    }

    pub fn set_parallelism(&mut self, parallelism: Parallelism) {
        self.parallelism = parallelism;
    }

    fn active(&self, w: LossWeights) -> Vec<&Chunk> {
        self.chunks.iter().filter(|c| !c.interior || w.eqn != 0.0).collect()
    }

    fn finish(&self, sums: Sums, w: LossWeights) -> LossParts {
        let mean = |s: f64, n: usize| if n == 0 { 0.0 } else { s / n as f64 };
        let eqn = mean(sums.eqn, self.n_eqn);
        let ini = mean(sums.ini, self.n_ini);
        let bnd = mean(sums.bnd, self.n_bnd);
        let eqn_term = if w.eqn == 0.0 { 0.0 } else { w.eqn * eqn };
        LossParts { total: eqn_term + w.ini * ini + w.bnd * bnd, eqn, ini, bnd }
    }

    fn residual(&self, e: &BatchEval, left: usize, center: usize, right: usize, m: (f64, f64, f64)) -> (f64, [f64; 4]) {
        let (m_l, m_c, m_r) = m;
        let (vl, vc, vr) = (e.v[left], e.v[center], e.v[right]);
        let (f_r, d_cr, d_rr) = godunov_flux_partials(vc, vr, m_r, self.variant);
        let (f_l, d_ll, d_cl) = godunov_flux_partials(vl, vc, m_l, self.variant);
        let inv_d = 1.0 / self.delta;
        let inv_m2 = 1.0 / (m_c * m_c);
        let res = e.v_t[center] * inv_m2 + (f_r - f_l) * inv_d;
        // partials with respect to (vl, vc, vr, v_t at centre)
        (res, [-d_ll * inv_d, (d_cr - d_cl) * inv_d, d_rr * inv_d, inv_m2])
    }

    fn chunk_value(&self, chunk: &Chunk, params: &[f64]) -> Sums {
        let e = BatchEval::forward(&self.spec, &self.layout, params, &chunk.batch);
        let mut s = Sums::default();
        for term in &chunk.terms {
            match *term {
                Term::Residual { left, center, right, m_l, m_c, m_r } => {
                    let (res, _) = self.residual(&e, left, center, right, (m_l, m_c, m_r));
                    s.eqn += res * res;
                }
                Term::Initial { probe, target } => s.ini += (e.v[probe] - target).powi(2),
                Term::Boundary { probe, target } => s.bnd += (e.v[probe] - target).powi(2),
            }
        }
        s
    }

    fn chunk_value_and_grad(&self, chunk: &Chunk, params: &[f64], w: LossWeights) -> (Sums, Vec<f64>) {
        let e = BatchEval::forward(&self.spec, &self.layout, params, &chunk.batch);
        let n = chunk.batch.len();
        let mut v_bar = vec![0.0; n];
        let mut v_t_bar = vec![0.0; n];
        let mut s = Sums::default();
        let c_eqn = if self.n_eqn == 0 { 0.0 } else { 2.0 * w.eqn / self.n_eqn as f64 };
        let c_ini = if self.n_ini == 0 { 0.0 } else { 2.0 * w.ini / self.n_ini as f64 };
        let c_bnd = if self.n_bnd == 0 { 0.0 } else { 2.0 * w.bnd / self.n_bnd as f64 };
        for term in &chunk.terms {
            match *term {
                Term::Residual { left, center, right, m_l, m_c, m_r } => {
                    let (res, d) = self.residual(&e, left, center, right, (m_l, m_c, m_r));
                    s.eqn += res * res;
                    let g = c_eqn * res;
                    v_bar[left] += g * d[0];
                    v_bar[center] += g * d[1];
                    v_bar[right] += g * d[2];
                    v_t_bar[center] += g * d[3];
                }
                Term::Initial { probe, target } => {
                    let err = e.v[probe] - target;
                    s.ini += err * err;
                    v_bar[probe] += c_ini * err;
                }
                Term::Boundary { probe, target } => {
                    let err = e.v[probe] - target;
                    s.bnd += err * err;
                    v_bar[probe] += c_bnd * err;
                }
            }
        }
        let mut grad = vec![0.0; self.param_count()];
        e.backward(&self.layout, &self.spec, params, &chunk.batch, &v_bar, &v_t_bar, &mut grad);
        (s, grad)
    }

    /// Loss components without the gradient. Interior residuals are always
    /// evaluated so `eqn` is reported even when its weight is zero.
    pub fn value(&self, params: &[f64], w: LossWeights) -> Result<LossParts> {
        self.check(params)?;
        let parts = self.parallelism.map(&self.chunks, |c| self.chunk_value(c, params));
        let mut sums = Sums::default();
        for p in parts {
            sums.eqn += p.eqn;
            sums.ini += p.ini;
            sums.bnd += p.bnd;
        }
        let out = self.finish(sums, w);
        if !out.total.is_finite() {
            return Err(Error::Numeric("non-finite loss".into()));
        }
        Ok(out)
    }

    /// Weighted loss and its gradient. Interior chunks are skipped when the
    /// residual weight is zero (their `eqn` component is then reported as 0).
    pub fn value_and_grad(&self, params: &[f64], w: LossWeights) -> Result<(LossParts, Vec<f64>)> {
        self.check(params)?;
        let chunks = self.active(w);
        let parts = self.parallelism.map(&chunks, |c| self.chunk_value_and_grad(c, params, w));
        let mut sums = Sums::default();
        let mut grad = vec![0.0; self.param_count()];
        for (p, g) in parts {
            sums.eqn += p.eqn;
            sums.ini += p.ini;
            sums.bnd += p.bnd;
            for (a, b) in grad.iter_mut().zip(&g) {
                *a += b;
            }
        }
        let out = self.finish(sums, w);
        if !out.total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numeric("non-finite loss or gradient".into()));
        }
        Ok((out, grad))
    }

    fn check(&self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::Parameter(format!(
                "parameter vector has {} entries, model needs {}",
                params.len(),
                self.param_count()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradient;
    use crate::network::{init_params, ParamVector};
    use crate::physics::RadialDomain;
    use crate::residual::{total_loss, total_loss_generic, BoundaryPoint, InitialPoint, Side};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const M1: BlackHole = BlackHole { mass: 1.0 };

    fn setup(n_eqn: usize) -> (ModelSpec, CollocationSet) {
        let domain = RadialDomain::new(M1, 0.1, 10.0).unwrap();
        let spec = ModelSpec::new(domain, 5.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let eqn = (0..n_eqn).map(|_| (rng.gen_range(0.0..5.0), rng.gen_range(2.1..10.0))).collect();
        let ini = (0..7).map(|i| InitialPoint { r: 2.1 + i as f64, target: 0.1 * i as f64 }).collect();
        let bnd = (0..5)
            .flat_map(|i| {
                let t = i as f64;
                [
                    BoundaryPoint { t, side: Side::Inner, r: 2.1, target: 0.9 },
                    BoundaryPoint { t, side: Side::Outer, r: 10.0, target: -0.6 },
                ]
            })
            .collect();
        (spec, CollocationSet { eqn, ini, bnd })
    }

    #[test]
    fn batched_loss_matches_pointwise_loss() {
        let (spec, colloc) = setup(300);
        let p = init_params(&spec, 2);
        let w = LossWeights::new(0.7, 1.3, 0.4).unwrap();
        for variant in [FluxVariant::Paper, FluxVariant::Exact] {
            let ev = LossEvaluator::new(&spec, &colloc, M1, 1e-5, variant, Parallelism::Sequential).unwrap();
            let fast = ev.value(&p.0, w).unwrap().total;
            let slow = total_loss(&p, &spec, &colloc, w, M1, 1e-5, variant).unwrap();
            // Residuals divide stencil differences by delta = 1e-5, so ~1e-16
            // summation-order differences in v surface at ~1e-11.
            assert!((fast - slow).abs() <= 1e-9 * slow.abs().max(1.0), "{fast} vs {slow}");
            let (parts, _) = ev.value_and_grad(&p.0, w).unwrap();
            assert_eq!(parts.total.to_bits(), fast.to_bits());
        }
    }

    #[test]
    fn loss_decomposes_into_weighted_mean_squares() {
        let (spec, colloc) = setup(50);
        let p = init_params(&spec, 3);
        let ev = LossEvaluator::new(&spec, &colloc, M1, 1e-5, FluxVariant::Paper, Parallelism::Sequential).unwrap();
        let w = LossWeights::new(0.3, 2.0, 0.5).unwrap();
        let parts = ev.value(&p.0, w).unwrap();
        let recomposed = 0.3 * parts.eqn + 2.0 * parts.ini + 0.5 * parts.bnd;
        assert!((parts.total - recomposed).abs() <= 1e-14 * parts.total.max(1.0));
        let each = |w| total_loss(&p, &spec, &colloc, w, M1, 1e-5, FluxVariant::Paper).unwrap();
        assert!((each(LossWeights::new(1.0, 0.0, 0.0).unwrap()) - parts.eqn).abs() < 1e-9 * parts.eqn.max(1.0));
        assert!((each(LossWeights::new(0.0, 1.0, 0.0).unwrap()) - parts.ini).abs() < 1e-14);
        assert!((each(LossWeights::new(0.0, 0.0, 1.0).unwrap()) - parts.bnd).abs() < 1e-14);
    }

    #[test]
    fn batched_gradient_matches_tape_gradient() {
        let (spec, colloc) = setup(20);
        let mut p = init_params(&spec, 9);
        let layout = spec.layout();
        p.0[layout.sharpness] = 2.0;
        let w = LossWeights::new(1.0, 1.0, 1.0).unwrap();
        let ev = LossEvaluator::new(&spec, &colloc, M1, 1e-5, FluxVariant::Paper, Parallelism::Sequential).unwrap();
        let (parts, g) = ev.value_and_grad(&p.0, w).unwrap();
        let tape = gradient(
            |q| total_loss_generic(&spec, &layout, q, &colloc, w, M1, 1e-5, FluxVariant::Paper).unwrap(),
            &p.0,
        )
        .unwrap();
        assert!((parts.total - tape.value).abs() < 1e-9 * tape.value.max(1.0));
        let scale = tape.grad.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        for (i, (a, b)) in g.iter().zip(&tape.grad).enumerate() {
            assert!((a - b).abs() <= 1e-9 * scale, "param {i}: {a} vs {b}");
        }
    }

    #[test]
    fn zero_residual_weight_skips_interior_chunks() {
        let (spec, colloc) = setup(100);
        let p = init_params(&spec, 1);
        let ev = LossEvaluator::new(&spec, &colloc, M1, 1e-5, FluxVariant::Paper, Parallelism::Sequential).unwrap();
        let mut data_only = colloc.clone();
        data_only.eqn.clear();
        let ev2 = LossEvaluator::new(&spec, &data_only, M1, 1e-5, FluxVariant::Paper, Parallelism::Sequential).unwrap();
        let w = LossWeights::new(0.0, 1.0, 1.0).unwrap();
        let (a, ga) = ev.value_and_grad(&p.0, w).unwrap();
        let (b, gb) = ev2.value_and_grad(&p.0, w).unwrap();
        assert_eq!(a.total, b.total);
        assert_eq!(ga, gb);
    }

    #[test]
    fn parallel_and_sequential_agree_bitwise() {
        let (spec, colloc) = setup(500);
        let p = init_params(&spec, 4);
        let w = LossWeights::new(1.0, 1.0, 1.0).unwrap();
        let mut ev = LossEvaluator::new(&spec, &colloc, M1, 1e-5, FluxVariant::Paper, Parallelism::Sequential).unwrap();
        let (a, ga) = ev.value_and_grad(&p.0, w).unwrap();
        ev.set_parallelism(Parallelism::Rayon);
        let (b, gb) = ev.value_and_grad(&p.0, w).unwrap();
        assert_eq!(a.total.to_bits(), b.total.to_bits());
        assert!(ga.iter().zip(&gb).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn counts_clamped_stencils_and_rejects_bad_length() {
        let (spec, mut colloc) = setup(3);
        colloc.eqn.push((1.0, spec.domain.r_min));
        colloc.eqn.push((1.0, spec.domain.r_max));
        let ev = LossEvaluator::new(&spec, &colloc, M1, 1e-5, FluxVariant::Paper, Parallelism::Sequential).unwrap();
        assert_eq!(ev.degenerate_stencils(), 2);
        let short = ParamVector(vec![0.0; 10]);
        assert!(ev.value(&short.0, LossWeights::new(1.0, 1.0, 1.0).unwrap()).is_err());
    }
}
