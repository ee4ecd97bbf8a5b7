//! Composite model `v = N_smooth(t, r) + F_shock(t, r, h(t, r))`.
//!
//! `N_smooth` is a dense tanh network over the normalized inputs. The jump
//! block predicts a shock curve `r_s(t)` with a small locator network squashed
//! into the radial domain, builds the smoothed indicator
//! `h = sigmoid(k (r - r_s(t)))` with trainable sharpness `k = softplus(kappa)`,
//! and feeds `(t, r, h)` (or `h` alone) to a second small dense network.

pub mod batch;
mod persist;

pub use persist::{load_model, parse_model, save_model, write_model, StoredModel};

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{softplus, softplus_inverse, Dual, Scalar};
use crate::error::{Error, Result};
use crate::physics::RadialDomain;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::Parameter(format!("unsupported activation '{other}'"))),
        }
    }
}

/// Inputs of the shock feature network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShockInputs {
    /// `(t, r, h)`.
    #[default]
    TimeRadiusIndicator,
    /// `h` alone, so every jump the block produces sits on `r_s(t)`. With the
    /// default sizes this variant has 4724 parameters in total.
    IndicatorOnly,
}

impl ShockInputs {
    pub fn name(self) -> &'static str {
        match self {
            Self::TimeRadiusIndicator => "t_r_h",
            Self::IndicatorOnly => "h",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "t_r_h" => Ok(Self::TimeRadiusIndicator),
            "h" => Ok(Self::IndicatorOnly),
            other => Err(Error::Parameter(format!("unknown shock inputs '{other}'"))),
        }
    }

    pub fn width(self) -> usize {
        match self {
            Self::TimeRadiusIndicator => 3,
            Self::IndicatorOnly => 1,
        }
    }
}

/// Affine maps taking `t in [0, T]` and `r in [r_min, r_max]` onto `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputScaling {
    pub t_center: f64,
    pub t_half_width: f64,
    pub r_center: f64,
    pub r_half_width: f64,
}

impl InputScaling {
    pub fn new(domain: &RadialDomain, t_final: f64) -> Self {
        Self {
            t_center: 0.5 * t_final,
            t_half_width: 0.5 * t_final,
            r_center: 0.5 * (domain.r_min + domain.r_max),
            r_half_width: 0.5 * domain.length(),
        }
    }

    #[inline]
    pub fn t_hat<S: Scalar>(&self, t: S) -> S {
        (t - S::constant(self.t_center)) / S::constant(self.t_half_width)
    }

    #[inline]
    pub fn r_hat<S: Scalar>(&self, r: S) -> S {
        (r - S::constant(self.r_center)) / S::constant(self.r_half_width)
    }
}

/// Architecture and input normalization of the composite model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub smooth_hidden: Vec<usize>,
    pub locator_hidden: Vec<usize>,
    pub shock_feature_hidden: Vec<usize>,
    #[serde(default)]
    pub shock_inputs: ShockInputs,
    pub activation: Activation,
    pub domain: RadialDomain,
    pub scaling: InputScaling,
}

impl ModelSpec {
    /// Default sizes: smooth `[16, 32, 32, 32, 16]`, locator `[32, 32]`,
    /// shock features `[16, 16]`.
    pub fn new(domain: RadialDomain, t_final: f64) -> Self {
        Self {
            smooth_hidden: vec![16, 32, 32, 32, 16],
            locator_hidden: vec![32, 32],
            shock_feature_hidden: vec![16, 16],
            shock_inputs: ShockInputs::default(),
            activation: Activation::Tanh,
            domain,
            scaling: InputScaling::new(&domain, t_final),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, h) in [
            ("smooth", &self.smooth_hidden),
            ("locator", &self.locator_hidden),
            ("shock feature", &self.shock_feature_hidden),
        ] {
            if h.iter().any(|&n| n == 0) {
                return Err(Error::Parameter(format!("{name} network has an empty layer")));
            }
        }
        if !(self.scaling.t_half_width > 0.0 && self.scaling.r_half_width > 0.0) {
            return Err(Error::Parameter("input scaling must have positive half widths".into()));
        }
        if !(self.domain.r_max > self.domain.r_min) {
            return Err(Error::Parameter("empty radial domain".into()));
        }
        Ok(())
    }

    pub fn layout(&self) -> ModelLayout {
        let smooth = MlpLayout::new(2, &self.smooth_hidden, 0);
        let locator = MlpLayout::new(1, &self.locator_hidden, smooth.end());
        let shock = MlpLayout::new(self.shock_inputs.width(), &self.shock_feature_hidden, locator.end());
        let sharpness = shock.end();
        ModelLayout { smooth, locator, shock, sharpness }
    }
}

/// One dense layer inside the flat parameter vector: `W` is row-major
/// `n_out x n_in` starting at `w`, the bias starts at `b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DenseLayer {
    pub n_in: usize,
    pub n_out: usize,
    pub w: usize,
    pub b: usize,
}

/// Dense tanh network with a scalar linear output layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpLayout {
    pub input: usize,
    /// Hidden layers followed by the output layer.
    pub layers: Vec<DenseLayer>,
}

impl MlpLayout {
    pub fn new(input: usize, hidden: &[usize], offset: usize) -> Self {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut n_in = input;
        let mut at = offset;
        for &n_out in hidden.iter().chain(std::iter::once(&1)) {
            layers.push(DenseLayer { n_in, n_out, w: at, b: at + n_in * n_out });
            at += n_in * n_out + n_out;
            n_in = n_out;
        }
        Self { input, layers }
    }

    pub fn start(&self) -> usize {
        self.layers[0].w
    }

    pub fn end(&self) -> usize {
        let last = self.layers.last().expect("at least the output layer");
        last.b + last.n_out
    }

    pub fn len(&self) -> usize {
        self.end() - self.start()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn hidden(&self) -> &[DenseLayer] {
        &self.layers[..self.layers.len() - 1]
    }

    pub fn output(&self) -> &DenseLayer {
        self.layers.last().expect("at least the output layer")
    }

    /// Scalar forward pass.
    pub fn eval<S: Scalar>(&self, params: &[S], input: &[S]) -> S {
        debug_assert_eq!(input.len(), self.input);
        let mut x: Vec<S> = input.to_vec();
        for layer in self.hidden() {
            x = dense(params, layer, &x).into_iter().map(S::tanh).collect();
        }
        dense(params, self.output(), &x)[0]
    }
}

fn dense<S: Scalar>(params: &[S], layer: &DenseLayer, x: &[S]) -> Vec<S> {
    (0..layer.n_out)
        .map(|o| {
            let row = &params[layer.w + o * layer.n_in..layer.w + (o + 1) * layer.n_in];
            row.iter().zip(x).fold(params[layer.b + o], |acc, (&w, &xi)| acc + w * xi)
        })
        .collect()
}

/// Positions of the three subnetworks and the sharpness scalar.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelLayout {
    pub smooth: MlpLayout,
    pub locator: MlpLayout,
    pub shock: MlpLayout,
    pub sharpness: usize,
}

impl ModelLayout {
    pub fn param_count(&self) -> usize {
        self.sharpness + 1
    }
}

/// Number of trainable scalars.
pub fn param_count(spec: &ModelSpec) -> usize {
    spec.layout().param_count()
}

/// Flat vector of all trainable scalars in declared order: smooth network,
/// locator network, shock feature network, raw sharpness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector(pub Vec<f64>);

/// Borrowed per-subnetwork slices of a [`ParamVector`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamViews<'a> {
    pub smooth: &'a [f64],
    pub locator: &'a [f64],
    pub shock: &'a [f64],
    pub sharpness_raw: f64,
}

impl ParamVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn views(&self, spec: &ModelSpec) -> ParamViews<'_> {
        let l = spec.layout();
        ParamViews {
            smooth: &self.0[l.smooth.start()..l.smooth.end()],
            locator: &self.0[l.locator.start()..l.locator.end()],
            shock: &self.0[l.shock.start()..l.shock.end()],
            sharpness_raw: self.0[l.sharpness],
        }
    }

    pub fn from_views(views: ParamViews<'_>) -> Self {
        let mut v = Vec::with_capacity(views.smooth.len() + views.locator.len() + views.shock.len() + 1);
        v.extend_from_slice(views.smooth);
        v.extend_from_slice(views.locator);
        v.extend_from_slice(views.shock);
        v.push(views.sharpness_raw);
        Self(v)
    }

    /// Sharpness `k = softplus(kappa)`.
    pub fn sharpness(&self, spec: &ModelSpec) -> f64 {
        softplus(self.0[spec.layout().sharpness])
    }

    pub fn check_len(&self, spec: &ModelSpec) -> Result<()> {
        let n = param_count(spec);
        if self.0.len() != n {
            return Err(Error::Parameter(format!("parameter vector has {} entries, model needs {n}", self.0.len())));
        }
        Ok(())
    }
}

/// Glorot-uniform weights, zero biases, and sharpness `10 / (r_max - r_min)`.
pub fn init_params(spec: &ModelSpec, seed: u64) -> ParamVector {
    let layout = spec.layout();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = vec![0.0; layout.param_count()];
    for net in [&layout.smooth, &layout.locator, &layout.shock] {
        for layer in &net.layers {
            let bound = (6.0 / (layer.n_in + layer.n_out) as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound);
            for w in &mut p[layer.w..layer.b] {
                *w = dist.sample(&mut rng);
            }
        }
    }
    p[layout.sharpness] = softplus_inverse(10.0 / spec.domain.length());
    ParamVector(p)
}

/// Model prediction at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelOutput<S> {
    pub v: S,
    /// Shock location `r_s(t)`.
    pub r_s: S,
    /// Smoothed Heaviside value.
    pub h: S,
}

/// Locator output squashed into the radial domain.
pub fn shock_location_generic<S: Scalar>(spec: &ModelSpec, layout: &ModelLayout, params: &[S], t: S) -> S {
    let z = layout.locator.eval(params, &[spec.scaling.t_hat(t)]);
    z.sigmoid().scale(spec.domain.length()).offset(spec.domain.r_min)
}

/// Full forward pass over any [`Scalar`].
pub fn forward_generic<S: Scalar>(spec: &ModelSpec, layout: &ModelLayout, params: &[S], t: S, r: S) -> ModelOutput<S> {
    let th = spec.scaling.t_hat(t);
    let rh = spec.scaling.r_hat(r);
    let smooth = layout.smooth.eval(params, &[th, rh]);
    let r_s = shock_location_generic(spec, layout, params, t);
    let k = params[layout.sharpness].softplus();
    let h = (k * (r - r_s)).sigmoid();
    let jump = match spec.shock_inputs {
        ShockInputs::TimeRadiusIndicator => layout.shock.eval(params, &[th, rh, h]),
        ShockInputs::IndicatorOnly => layout.shock.eval(params, &[h]),
    };
    ModelOutput { v: smooth + jump, r_s, h }
}

pub fn forward(params: &ParamVector, spec: &ModelSpec, t: f64, r: f64) -> ModelOutput<f64> {
    forward_generic(spec, &spec.layout(), params.as_slice(), t, r)
}

/// Forward pass with the exact time derivative of `v` in `.v.eps`.
pub fn forward_with_time_tangent(params: &ParamVector, spec: &ModelSpec, t: f64, r: f64) -> ModelOutput<Dual<f64>> {
    let lifted: Vec<Dual<f64>> = params.0.iter().map(|&p| Dual::lift(p)).collect();
    forward_generic(spec, &spec.layout(), &lifted, Dual::variable(t), Dual::lift(r))
}

pub fn shock_location(params: &ParamVector, spec: &ModelSpec, t: f64) -> f64 {
    shock_location_generic(spec, &spec.layout(), params.as_slice(), t)
}

pub fn heaviside_smooth(params: &ParamVector, spec: &ModelSpec, t: f64, r: f64) -> f64 {
    let r_s = shock_location(params, spec, t);
    (params.sharpness(spec) * (r - r_s)).sigmoid()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::sigmoid;
    use crate::physics::BlackHole;
    use rand::Rng;

    fn spec() -> ModelSpec {
        let domain = RadialDomain::new(BlackHole::default(), 0.1, 10.0).unwrap();
        ModelSpec::new(domain, 5.0)
    }

    fn dense_count(input: usize, hidden: &[usize]) -> usize {
        let mut n_in = input;
        let mut total = 0;
        for &n in hidden.iter().chain(std::iter::once(&1)) {
            total += n_in * n + n;
            n_in = n;
        }
        total
    }

    #[test]
    fn subnetwork_counts() {
        let l = spec().layout();
        assert_eq!(l.smooth.len(), 3249);
        assert_eq!(l.locator.len(), 1153);
        assert_eq!(dense_count(2, &[16, 32, 32, 32, 16]), 3249);
        assert_eq!(dense_count(1, &[32, 32]), 1153);
        assert_eq!(l.shock.len(), dense_count(3, &[16, 16]));
        assert_eq!(param_count(&spec()), 3249 + 1153 + 353 + 1);
        assert_ne!(param_count(&spec()), 4724);
        let h_only = ModelSpec { shock_inputs: ShockInputs::IndicatorOnly, ..spec() };
        assert_eq!(h_only.layout().shock.len(), dense_count(1, &[16, 16]));
        assert_eq!(param_count(&h_only), 4724);
    }

    #[test]
    fn init_is_reproducible_with_zero_biases_and_glorot_bounds() {
        let s = spec();
        let a = init_params(&s, 7);
        assert_eq!(a, init_params(&s, 7));
        assert_ne!(a, init_params(&s, 8));
        let l = s.layout();
        for net in [&l.smooth, &l.locator, &l.shock] {
            for layer in &net.layers {
                assert!(a.0[layer.b..layer.b + layer.n_out].iter().all(|&b| b == 0.0));
                let bound = (6.0 / (layer.n_in + layer.n_out) as f64).sqrt();
                assert!(a.0[layer.w..layer.b].iter().all(|w| w.abs() <= bound));
            }
        }
        assert!((a.sharpness(&s) - 10.0 / 7.9).abs() < 1e-12);
    }

    #[test]
    fn zero_locator_output_gives_midpoint() {
        let s = spec();
        let mut p = init_params(&s, 1);
        let l = s.layout();
        for x in &mut p.0[l.locator.start()..l.locator.end()] {
            *x = 0.0;
        }
        assert!((shock_location(&p, &s, 1.3) - 6.05).abs() < 1e-12);
        let out = l.locator.output();
        p.0[out.b] = 50.0;
        assert!((shock_location(&p, &s, 1.3) - 10.0).abs() < 1e-12);
        p.0[out.b] = -50.0;
        assert!((shock_location(&p, &s, 1.3) - 2.1).abs() < 1e-12);
    }

    #[test]
    fn heaviside_examples() {
        let s = spec();
        let mut p = init_params(&s, 3);
        let t = 0.7;
        let rs = shock_location(&p, &s, t);
        assert!((heaviside_smooth(&p, &s, t, rs) - 0.5).abs() < 1e-15);
        let kappa = s.layout().sharpness;
        p.0[kappa] = softplus_inverse(2.0);
        let h = heaviside_smooth(&p, &s, t, rs + 1.0);
        assert!((h - 0.880797).abs() < 1e-6);
        assert!((h - sigmoid(2.0)).abs() < 1e-12);
        p.0[kappa] = 1e4;
        assert_eq!(heaviside_smooth(&p, &s, t, rs + 0.1), 1.0);
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let s = spec();
        let mut p = init_params(&s, 3);
        let kappa = s.layout().sharpness;
        for (i, x) in p.0.iter_mut().enumerate() {
            if i != kappa {
                *x = 0.0;
            }
        }
        assert_eq!(forward(&p, &s, 2.0, 4.0).v, 0.0);
    }

    #[test]
    fn zeroed_shock_network_reduces_to_smooth_network() {
        let s = spec();
        let l = s.layout();
        let mut p = init_params(&s, 11);
        for x in &mut p.0[l.shock.start()..l.shock.end()] {
            *x = 0.0;
        }
        for &(t, r) in &[(0.0, 2.1), (2.5, 5.0), (5.0, 9.9)] {
            let smooth = l.smooth.eval(&p.0, &[s.scaling.t_hat(t), s.scaling.r_hat(r)]);
            assert_eq!(forward(&p, &s, t, r).v, smooth);
        }
    }

    #[test]
    fn time_tangent_matches_finite_differences() {
        let s = spec();
        let p = init_params(&s, 5);
        for &(t, r) in &[(0.5, 3.0), (2.0, 5.5), (4.5, 8.0)] {
            let d = forward_with_time_tangent(&p, &s, t, r).v;
            let h = 1e-4;
            let fd = (forward(&p, &s, t + h, r).v - forward(&p, &s, t - h, r).v) / (2.0 * h);
            assert!((d.eps - fd).abs() <= 1e-5 * fd.abs().max(1e-2), "ad={} fd={fd}", d.eps);
        }
    }

    #[test]
    fn bounds_hold_on_random_probes() {
        let s = spec();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for trial in 0..10 {
            let mut p = init_params(&s, trial);
            // random scaled parameters, including large locator outputs
            for x in &mut p.0 {
                *x *= rng.gen_range(0.5..3.0);
            }
            for _ in 0..100 {
                let t = rng.gen_range(0.0..5.0);
                let r = rng.gen_range(2.1..10.0);
                let out = forward(&p, &s, t, r);
                assert!(out.r_s >= 2.1 && out.r_s <= 10.0);
                assert!(out.h > 0.0 && out.h < 1.0);
                assert!(p.sharpness(&s) > 0.0);
            }
        }
    }

    #[test]
    fn indicator_is_monotone_in_radius() {
        let s = spec();
        let p = init_params(&s, 2);
        let mut prev = 0.0;
        for i in 0..200 {
            let r = 2.1 + 7.9 * i as f64 / 199.0;
            let h = heaviside_smooth(&p, &s, 1.0, r);
            assert!(h > prev);
            prev = h;
        }
    }

    #[test]
    fn views_round_trip() {
        let s = spec();
        let p = init_params(&s, 4);
        assert_eq!(ParamVector::from_views(p.views(&s)), p);
    }
}
