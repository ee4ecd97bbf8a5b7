//! Godunov fluxes, the flux-divergence PDE residual and the training loss.
//!
//! The residual at `(t, r)` samples the model at `r - delta`, `r`, `r + delta`
//! and combines the exact time derivative with a first-order Godunov
//! divergence over the two adjacent interfaces:
//!
//! ```text
//!   R = v_t / m(r)^2 + [ F(vC, vR; r + delta/2) - F(vL, vC; r - delta/2) ] / delta
//! ```
//!
//! Functions with a `_generic` suffix run over any [`Scalar`], which is how the
//! tape gradient is produced; [`LossEvaluator`] is the batched equivalent used
//! during training.

mod evaluator;

pub use evaluator::{LossEvaluator, LossParts};

use serde::{Deserialize, Serialize};

use crate::autodiff::{Dual, Scalar};
use crate::error::{Error, Result};
use crate::network::{forward_generic, ModelLayout, ModelSpec, ParamVector};
use crate::physics::{metric, BlackHole};

/// Default stencil offset.
pub const DEFAULT_DELTA: f64 = 1e-5;

/// Which Godunov flux table to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FluxVariant {
    /// Five-case table with `0` for the transonic rarefaction and `min` for
    /// left-moving shocks.
    Paper,
    /// True Godunov flux of the convex flux: `max(f(vL), f(vR))` across any
    /// shock and `f(0)` for the transonic rarefaction.
    Exact,
}

/// Godunov flux and its partials with respect to `(vL, vR)` at metric `m`.
///
/// Ties select the left state.
#[inline]
pub fn godunov_flux_partials(vl: f64, vr: f64, m: f64, variant: FluxVariant) -> (f64, f64, f64) {
    let f = |v: f64| (v * v - 1.0) / (2.0 * m);
    let (fl, fr) = (f(vl), f(vr));
    let (dl, dr) = (vl / m, vr / m);
    if vl > vr {
        let take_max = match variant {
            FluxVariant::Exact => true,
            FluxVariant::Paper => m * 0.5 * (vl + vr) >= 0.0,
        };
        let left = if take_max { fl >= fr } else { fl <= fr };
        if left {
            (fl, dl, 0.0)
        } else {
            (fr, 0.0, dr)
        }
    } else if vl >= 0.0 {
        (fl, dl, 0.0)
    } else if vr <= 0.0 {
        (fr, 0.0, dr)
    } else {
        match variant {
            FluxVariant::Paper => (0.0, 0.0, 0.0),
            FluxVariant::Exact => (-1.0 / (2.0 * m), 0.0, 0.0),
        }
    }
}

/// Godunov flux over any scalar type; same case logic as
/// [`godunov_flux_partials`].
pub fn godunov_flux_generic<S: Scalar>(vl: S, vr: S, m: f64, variant: FluxVariant) -> S {
    let f = |v: S| (v * v).offset(-1.0).scale(0.5 / m);
    let s = m * 0.5 * (vl.value() + vr.value());
    if vl.value() > vr.value() {
        match (variant, s >= 0.0) {
            (FluxVariant::Exact, _) | (FluxVariant::Paper, true) => f(vl).max(f(vr)),
            (FluxVariant::Paper, false) => f(vl).min(f(vr)),
        }
    } else if vl.value() >= 0.0 {
        f(vl)
    } else if vr.value() <= 0.0 {
        f(vr)
    } else {
        match variant {
            FluxVariant::Paper => S::constant(0.0),
            FluxVariant::Exact => S::constant(-1.0 / (2.0 * m)),
        }
    }
}

/// Godunov interface flux at radius `r`.
pub fn godunov_flux(vl: f64, vr: f64, r: f64, bh: BlackHole, variant: FluxVariant) -> Result<f64> {
    let m = metric(r, bh)?;
    Ok(godunov_flux_partials(vl, vr, m, variant).0)
}

/// Three-point radial stencil around a collocation point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stencil {
    /// Centre actually used; differs from the requested `r` when clamped.
    pub r_center: f64,
    pub delta: f64,
    /// The requested point was within `delta` of a domain edge and the stencil
    /// was shifted inward.
    pub clamped: bool,
}

impl Stencil {
    pub fn new(spec: &ModelSpec, r: f64, delta: f64) -> Result<Self> {
        let d = &spec.domain;
        if !(delta > 0.0 && 2.0 * delta < d.length()) {
            return Err(Error::Parameter(format!("stencil offset {delta} must be positive and fit in the domain")));
        }
        let r_center = r.clamp(d.r_min + delta, d.r_max - delta);
        Ok(Self { r_center, delta, clamped: r_center != r })
    }

    pub fn left(&self) -> f64 {
        self.r_center - self.delta
    }

    pub fn right(&self) -> f64 {
        self.r_center + self.delta
    }

    /// Metrics at the centre and at the two interfaces `r -+ delta/2`.
    pub fn metrics(&self, bh: BlackHole) -> Result<(f64, f64, f64)> {
        Ok((
            metric(self.r_center - 0.5 * self.delta, bh)?,
            metric(self.r_center, bh)?,
            metric(self.r_center + 0.5 * self.delta, bh)?,
        ))
    }
}

/// Model values on the stencil `(r - delta, r, r + delta)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterfaceValues {
    pub v_left: f64,
    pub v_center: f64,
    pub v_right: f64,
    pub stencil: Stencil,
}

pub fn interface_values(params: &ParamVector, spec: &ModelSpec, t: f64, r: f64, delta: f64) -> Result<InterfaceValues> {
    let stencil = Stencil::new(spec, r, delta)?;
    let layout = spec.layout();
    let p = params.as_slice();
    let at = |x: f64| forward_generic(spec, &layout, p, t, x).v;
    Ok(InterfaceValues {
        v_left: at(stencil.left()),
        v_center: at(stencil.r_center),
        v_right: at(stencil.right()),
        stencil,
    })
}

/// Residual from stencil samples and the centre time derivative.
pub fn stencil_residual<S: Scalar>(
    v_t: S,
    vl: S,
    vc: S,
    vr: S,
    stencil: &Stencil,
    bh: BlackHole,
    variant: FluxVariant,
) -> Result<S> {
    let (m_l, m_c, m_r) = stencil.metrics(bh)?;
    let divergence = (godunov_flux_generic(vc, vr, m_r, variant) - godunov_flux_generic(vl, vc, m_l, variant))
        .scale(1.0 / stencil.delta);
    Ok(v_t.scale(1.0 / (m_c * m_c)) + divergence)
}

/// PDE residual over any scalar parameter type.
#[allow(clippy::too_many_arguments)]
pub fn pde_residual_generic<S: Scalar>(
    spec: &ModelSpec,
    layout: &ModelLayout,
    params: &[S],
    t: f64,
    r: f64,
    bh: BlackHole,
    delta: f64,
    variant: FluxVariant,
) -> Result<S> {
    let st = Stencil::new(spec, r, delta)?;
    let lifted: Vec<Dual<S>> = params.iter().map(|&p| Dual::lift(p)).collect();
    let center = forward_generic(spec, layout, &lifted, Dual::variable(S::constant(t)), Dual::lift(S::constant(st.r_center))).v;
    let vl = forward_generic(spec, layout, params, S::constant(t), S::constant(st.left())).v;
    let vr = forward_generic(spec, layout, params, S::constant(t), S::constant(st.right())).v;
    stencil_residual(center.eps, vl, center.re, vr, &st, bh, variant)
}

#[allow(clippy::too_many_arguments)]
pub fn pde_residual(
    params: &ParamVector,
    spec: &ModelSpec,
    t: f64,
    r: f64,
    bh: BlackHole,
    delta: f64,
    variant: FluxVariant,
) -> Result<f64> {
    let out = pde_residual_generic(spec, &spec.layout(), params.as_slice(), t, r, bh, delta, variant)?;
    if !out.is_finite() {
        return Err(Error::Numeric(format!("non-finite residual at (t, r) = ({t}, {r})")));
    }
    Ok(out)
}

/// Nonnegative weights of the three loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub eqn: f64,
    pub ini: f64,
    pub bnd: f64,
}

impl LossWeights {
    pub fn new(eqn: f64, ini: f64, bnd: f64) -> Result<Self> {
        let w = Self { eqn, ini, bnd };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, x) in [("eqn", self.eqn), ("ini", self.ini), ("bnd", self.bnd)] {
            if !(x >= 0.0 && x.is_finite()) {
                return Err(Error::Parameter(format!("loss weight {name} = {x} must be finite and nonnegative")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Inner,
    Outer,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitialPoint {
    pub r: f64,
    pub target: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryPoint {
    pub t: f64,
    pub side: Side,
    pub r: f64,
    pub target: f64,
}

/// Interior, initial and boundary samples of the three loss terms.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CollocationSet {
    /// Interior `(t, r)` points.
    pub eqn: Vec<(f64, f64)>,
    pub ini: Vec<InitialPoint>,
    pub bnd: Vec<BoundaryPoint>,
}

impl CollocationSet {
    pub fn validate(&self, spec: &ModelSpec, t_final: f64) -> Result<()> {
        if self.ini.is_empty() || self.bnd.is_empty() {
            return Err(Error::Parameter("initial and boundary sets must be nonempty".into()));
        }
        let d = &spec.domain;
        let in_time = |t: f64| (0.0..=t_final).contains(&t);
        let ok_target = |v: f64| v.is_finite() && (-1.0..=1.0).contains(&v);
        if let Some(&(t, r)) = self.eqn.iter().find(|(t, r)| !(in_time(*t) && d.contains(*r))) {
            return Err(Error::Parameter(format!("interior point ({t}, {r}) outside the domain")));
        }
        if let Some(p) = self.ini.iter().find(|p| !(d.contains(p.r) && ok_target(p.target))) {
            return Err(Error::Parameter(format!("invalid initial point {p:?}")));
        }
        if let Some(p) = self.bnd.iter().find(|p| !(in_time(p.t) && d.contains(p.r) && ok_target(p.target))) {
            return Err(Error::Parameter(format!("invalid boundary point {p:?}")));
        }
        Ok(())
    }
}

/// Weighted three-term loss over any scalar parameter type.
#[allow(clippy::too_many_arguments)]
pub fn total_loss_generic<S: Scalar>(
    spec: &ModelSpec,
    layout: &ModelLayout,
    params: &[S],
    colloc: &CollocationSet,
    w: LossWeights,
    bh: BlackHole,
    delta: f64,
    variant: FluxVariant,
) -> Result<S> {
    let mut total = S::constant(0.0);
    if !colloc.eqn.is_empty() && w.eqn != 0.0 {
        let mut acc = S::constant(0.0);
        for &(t, r) in &colloc.eqn {
            let res = pde_residual_generic(spec, layout, params, t, r, bh, delta, variant)?;
            acc = acc + res * res;
        }
        total = total + acc.scale(w.eqn / colloc.eqn.len() as f64);
    }
    if !colloc.ini.is_empty() {
        let mut acc = S::constant(0.0);
        for p in &colloc.ini {
            let e = forward_generic(spec, layout, params, S::constant(0.0), S::constant(p.r)).v.offset(-p.target);
            acc = acc + e * e;
        }
        total = total + acc.scale(w.ini / colloc.ini.len() as f64);
    }
    if !colloc.bnd.is_empty() {
        let mut acc = S::constant(0.0);
        for p in &colloc.bnd {
            let e = forward_generic(spec, layout, params, S::constant(p.t), S::constant(p.r)).v.offset(-p.target);
            acc = acc + e * e;
        }
        total = total + acc.scale(w.bnd / colloc.bnd.len() as f64);
    }
    Ok(total)
}

#[allow(clippy::too_many_arguments)]
pub fn total_loss(
    params: &ParamVector,
    spec: &ModelSpec,
    colloc: &CollocationSet,
    w: LossWeights,
    bh: BlackHole,
    delta: f64,
    variant: FluxVariant,
) -> Result<f64> {
    w.validate()?;
    let out = total_loss_generic(spec, &spec.layout(), params.as_slice(), colloc, w, bh, delta, variant)?;
    if !out.is_finite() {
        return Err(Error::Numeric("non-finite loss".into()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::init_params;
    use crate::physics::{flux, RadialDomain};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const M1: BlackHole = BlackHole { mass: 1.0 };

    fn spec() -> ModelSpec {
        let domain = RadialDomain::new(M1, 0.1, 10.0).unwrap();
        ModelSpec::new(domain, 5.0)
    }

    #[test]
    fn flux_examples() {
        let flat = BlackHole::flat();
        for v in [FluxVariant::Paper, FluxVariant::Exact] {
            assert!((godunov_flux(0.5, -0.5, 3.0, flat, v).unwrap() + 0.375).abs() < 1e-15);
            assert!((godunov_flux(0.6, 0.6, 4.0, M1, v).unwrap() + 0.64).abs() < 1e-15);
        }
        assert_eq!(godunov_flux(-0.2, 0.3, 3.0, flat, FluxVariant::Paper).unwrap(), 0.0);
        assert_eq!(godunov_flux(-0.2, 0.3, 3.0, flat, FluxVariant::Exact).unwrap(), -0.5);
        assert!(godunov_flux(0.1, 0.2, 2.0, M1, FluxVariant::Exact).is_err());
    }

    #[test]
    fn left_moving_shock_takes_upwind_state_in_exact_variant() {
        // vL = 0.2, vR = -0.8 moves left, so the interface sees vR.
        let exact = godunov_flux(0.2, -0.8, 3.0, BlackHole::flat(), FluxVariant::Exact).unwrap();
        let paper = godunov_flux(0.2, -0.8, 3.0, BlackHole::flat(), FluxVariant::Paper).unwrap();
        assert!((exact - (0.64 - 1.0) / 2.0).abs() < 1e-15);
        assert!((paper - (0.04 - 1.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn consistency_on_equal_states() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let v = rng.gen_range(-1.0..=1.0);
            let r = rng.gen_range(2.01..50.0);
            let f = flux(v, r, M1).unwrap();
            for variant in [FluxVariant::Exact, FluxVariant::Paper] {
                assert!((godunov_flux(v, v, r, M1, variant).unwrap() - f).abs() <= 1e-14);
            }
        }
    }

    #[test]
    fn exact_variant_is_monotone() {
        let n = 81;
        let grid: Vec<f64> = (0..n).map(|i| -1.0 + 2.0 * i as f64 / (n - 1) as f64).collect();
        for &m in &[0.05, 0.5, 1.0] {
            for i in 0..n {
                for j in 0..n {
                    let f = godunov_flux_partials(grid[i], grid[j], m, FluxVariant::Exact).0;
                    if i + 1 < n {
                        assert!(godunov_flux_partials(grid[i + 1], grid[j], m, FluxVariant::Exact).0 >= f);
                    }
                    if j + 1 < n {
                        assert!(godunov_flux_partials(grid[i], grid[j + 1], m, FluxVariant::Exact).0 <= f);
                    }
                }
            }
        }
    }

    #[test]
    fn partials_match_generic_dual_route() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..500 {
            let vl = rng.gen_range(-1.0..1.0);
            let vr = rng.gen_range(-1.0..1.0);
            let m = rng.gen_range(0.05..1.0);
            for variant in [FluxVariant::Exact, FluxVariant::Paper] {
                let (f, dl, dr) = godunov_flux_partials(vl, vr, m, variant);
                let a = godunov_flux_generic(Dual::variable(vl), Dual::lift(vr), m, variant);
                let b = godunov_flux_generic(Dual::lift(vl), Dual::variable(vr), m, variant);
                assert!((f - a.re).abs() <= 1e-15 * f.abs().max(1.0));
                assert!((dl - a.eps).abs() < 1e-14 && (dr - b.eps).abs() < 1e-14);
            }
        }
    }

    /// Parameters whose model output is the constant `c`: all zero except the
    /// smooth network's output bias.
    fn constant_model(spec: &ModelSpec, c: f64) -> ParamVector {
        let l = spec.layout();
        let mut p = init_params(spec, 0);
        for x in &mut p.0[..l.sharpness] {
            *x = 0.0;
        }
        p.0[l.smooth.output().b] = c;
        p
    }

    #[test]
    fn constant_model_stencil_and_residual() {
        let s = spec();
        let p = constant_model(&s, 0.3);
        let iv = interface_values(&p, &s, 1.0, 5.0, 1e-5).unwrap();
        assert_eq!((iv.v_left, iv.v_center, iv.v_right), (0.3, 0.3, 0.3));
        assert!(!iv.stencil.clamped);
        let flat_spec = ModelSpec::new(RadialDomain::new(BlackHole::flat(), 2.1, 10.0).unwrap(), 5.0);
        let p = constant_model(&flat_spec, 0.3);
        let res = pde_residual(&p, &flat_spec, 1.0, 5.0, BlackHole::flat(), 1e-5, FluxVariant::Paper).unwrap();
        assert_eq!(res, 0.0);
    }

    #[test]
    fn edge_points_clamp_inward() {
        let s = spec();
        let p = constant_model(&s, -0.1);
        let iv = interface_values(&p, &s, 0.0, s.domain.r_min, 1e-5).unwrap();
        assert!(iv.stencil.clamped);
        assert_eq!(iv.stencil.r_center, s.domain.r_min + 1e-5);
        let iv = interface_values(&p, &s, 0.0, s.domain.r_max - 1e-6, 1e-5).unwrap();
        assert!(iv.stencil.clamped && iv.stencil.right() <= s.domain.r_max);
        assert!(interface_values(&p, &s, 0.0, 5.0, 0.0).is_err());
    }

    #[test]
    fn stencil_difference_matches_radial_derivative() {
        let s = spec();
        let p = init_params(&s, 8);
        let l = s.layout();
        let lifted: Vec<Dual<f64>> = p.0.iter().map(|&x| Dual::lift(x)).collect();
        for &(t, r) in &[(0.3, 3.0), (2.0, 6.0), (4.0, 9.0)] {
            let iv = interface_values(&p, &s, t, r, 1e-5).unwrap();
            let dr = forward_generic(&s, &l, &lifted, Dual::lift(t), Dual::variable(r)).v.eps;
            let fd = (iv.v_right - iv.v_left) / 2e-5;
            assert!((fd - dr).abs() <= 1e-3 * dr.abs().max(1e-3), "fd={fd} ad={dr}");
        }
    }

    fn analytic_residual(v: impl Fn(f64, f64) -> f64, v_t: f64, t: f64, r: f64, bh: BlackHole, delta: f64, variant: FluxVariant) -> f64 {
        let st = Stencil { r_center: r, delta, clamped: false };
        stencil_residual(v_t, v(t, r - delta), v(t, r), v(t, r + delta), &st, bh, variant).unwrap()
    }

    #[test]
    fn steady_state_residual_decays_linearly() {
        use crate::physics::{steady_state, Branch, SteadyStateParams};
        let p = SteadyStateParams { k: 0.75, branch: Branch::Plus };
        let v = |_: f64, r: f64| steady_state(r, p, M1).unwrap();
        let radii: Vec<f64> = (0..100).map(|i| 2.2 + 7.7 * i as f64 / 99.0).collect();
        let max_res = |delta: f64| {
            radii.iter().map(|&r| analytic_residual(v, 0.0, 0.0, r, M1, delta, FluxVariant::Paper).abs()).fold(0.0, f64::max)
        };
        let (a, b, c) = (max_res(1e-2), max_res(1e-3), max_res(1e-4));
        assert!(a > b && b > c, "{a} {b} {c}");
        for ratio in [a / b, b / c] {
            assert!((5.0..20.0).contains(&ratio), "ratio {ratio}");
        }
    }

    #[test]
    fn flat_space_residual_matches_strong_form() {
        // v = 0.5 + 0.3 sin r + 0.1 t is not a solution; compare with
        // v_t + v v_r evaluated analytically.
        let flat = BlackHole::flat();
        let v = |t: f64, r: f64| 0.5 + 0.3 * r.sin() + 0.1 * t;
        for &(t, r) in &[(0.2, 1.0), (1.0, 2.5), (3.0, 4.0)] {
            let strong = 0.1 + v(t, r) * 0.3 * r.cos();
            let e3 = (analytic_residual(v, 0.1, t, r, flat, 1e-3, FluxVariant::Paper) - strong).abs();
            let e4 = (analytic_residual(v, 0.1, t, r, flat, 1e-4, FluxVariant::Paper) - strong).abs();
            assert!(e3 < 1e-3 && e4 < 1e-4, "{e3} {e4}");
        }
    }

    #[test]
    fn loss_examples() {
        let s = spec();
        let p = constant_model(&s, 0.2);
        let colloc = CollocationSet {
            eqn: vec![],
            ini: vec![InitialPoint { r: 4.0, target: 0.1 }],
            bnd: vec![BoundaryPoint { t: 1.0, side: Side::Inner, r: s.domain.r_min, target: 0.2 }],
        };
        let w = LossWeights::new(0.0, 1.0, 0.0).unwrap();
        let l = total_loss(&p, &s, &colloc, w, M1, 1e-5, FluxVariant::Paper).unwrap();
        assert!((l - 0.01).abs() < 1e-15);
        let zero = LossWeights::new(0.0, 0.0, 0.0).unwrap();
        assert_eq!(total_loss(&p, &s, &colloc, zero, M1, 1e-5, FluxVariant::Paper).unwrap(), 0.0);
        let exact = CollocationSet {
            eqn: vec![],
            ini: vec![InitialPoint { r: 4.0, target: 0.2 }],
            bnd: colloc.bnd.clone(),
        };
        let all = LossWeights::new(1.0, 1.0, 1.0).unwrap();
        assert_eq!(total_loss(&p, &s, &exact, all, M1, 1e-5, FluxVariant::Paper).unwrap(), 0.0);
        assert!(LossWeights::new(-1.0, 1.0, 1.0).is_err());
    }
}
