//! Unconstrained L-BFGS with a strong Wolfe line search.
//!
//! The stopping rules follow the usual quasi-Newton conventions: a relative
//! function-decrease test scaled by `factr * f64::EPSILON`, a gradient
//! infinity-norm test, and an iteration cap.

use std::collections::VecDeque;
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LbfgsConfig {
    pub memory: usize,
    pub factr: f64,
    pub maxls: usize,
    pub maxiter: usize,
    pub pgtol: f64,
    #[serde(default = "default_c1")]
    pub c1: f64,
    #[serde(default = "default_c2")]
    pub c2: f64,
}

fn default_c1() -> f64 {
    1e-4
}

fn default_c2() -> f64 {
    0.9
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self { memory: 50, factr: 10.0, maxls: 100, maxiter: 500, pgtol: 1e-10, c1: default_c1(), c2: default_c2() }
    }
}

impl LbfgsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.memory < 1 || self.maxiter < 1 || self.maxls < 1 {
            return Err(Error::Parameter("memory, maxiter and maxls must be at least 1".into()));
        }
        if !(self.factr >= 0.0) || !(self.pgtol >= 0.0) {
            return Err(Error::Parameter("factr and pgtol must be non-negative".into()));
        }
        if !(0.0 < self.c1 && self.c1 < self.c2 && self.c2 < 1.0) {
            return Err(Error::Parameter(format!("need 0 < c1 < c2 < 1, got c1 = {}, c2 = {}", self.c1, self.c2)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    #[serde(rename = "ftol")]
    Ftol,
    #[serde(rename = "pgtol")]
    Pgtol,
    #[serde(rename = "maxiter")]
    MaxIter,
    #[serde(rename = "ls_failure")]
    LineSearchFailure,
    #[serde(rename = "numeric")]
    Numeric,
}

impl Termination {
    pub fn name(self) -> &'static str {
        match self {
            Self::Ftol => "ftol",
            Self::Pgtol => "pgtol",
            Self::MaxIter => "maxiter",
            Self::LineSearchFailure => "ls_failure",
            Self::Numeric => "numeric",
        }
    }
}

impl fmt::Display for Termination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One accepted step. `dphi0` and `dphi` are the directional derivatives
/// along the search direction before and after the step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub iter: usize,
    pub f: f64,
    pub gnorm: f64,
    pub step: f64,
    pub ls_evals: usize,
    pub dphi0: f64,
    pub dphi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimTrace {
    pub initial_f: f64,
    pub initial_gnorm: f64,
    pub records: Vec<IterRecord>,
    pub reason: Termination,
    pub evaluations: usize,
    pub message: String,
}

impl OptimTrace {
    pub fn iterations(&self) -> usize {
        self.records.len()
    }

    pub fn final_f(&self) -> f64 {
        self.records.last().map_or(self.initial_f, |r| r.f)
    }

    /// Check the strong Wolfe conditions on every recorded step.
    pub fn satisfies_strong_wolfe(&self, c1: f64, c2: f64) -> bool {
        let mut f_prev = self.initial_f;
        self.records.iter().all(|r| {
            let ok = r.f <= f_prev + c1 * r.step * r.dphi0 && r.dphi.abs() <= c2 * r.dphi0.abs();
            f_prev = r.f;
            ok
        })
    }

    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "iter,f,gnorm,step,ls_evals")?;
        for r in &self.records {
            writeln!(out, "{},{:.16e},{:.16e},{:.16e},{}", r.iter, r.f, r.gnorm, r.step, r.ls_evals)?;
        }
        Ok(())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn is_finite(f: f64, g: &[f64]) -> bool {
    f.is_finite() && g.iter().all(|x| x.is_finite())
}

#[derive(Debug, Clone)]
pub struct CurvaturePair {
    pub s: Vec<f64>,
    pub y: Vec<f64>,
    rho: f64,
}

impl CurvaturePair {
    /// Returns `None` when `s.y <= 1e-12 |s||y|`.
    pub fn new(s: Vec<f64>, y: Vec<f64>) -> Option<Self> {
        let sy = dot(&s, &y);
        let bound = 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt();
        (sy > bound).then(|| Self { rho: 1.0 / sy, s, y })
    }
}

/// Two-loop recursion: returns `-H g` for the inverse-Hessian approximation
/// built from `pairs` (oldest first) with scaling `s.y / y.y` of the newest
/// pair.
pub fn two_loop_direction<'a>(g: &[f64], pairs: impl DoubleEndedIterator<Item = &'a CurvaturePair> + Clone) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::new();
    for p in pairs.clone().rev() {
        let a = p.rho * dot(&p.s, &q);
        for (qi, yi) in q.iter_mut().zip(&p.y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    if let Some(last) = pairs.clone().next_back() {
        let gamma = 1.0 / (last.rho * dot(&last.y, &last.y));
        q.iter_mut().for_each(|x| *x *= gamma);
    }
    for (p, a) in pairs.zip(alphas.into_iter().rev()) {
        let b = p.rho * dot(&p.y, &q);
        for (qi, si) in q.iter_mut().zip(&p.s) {
            *qi += (a - b) * si;
        }
    }
    q.iter_mut().for_each(|x| *x = -*x);
    q
}

struct Point {
    alpha: f64,
    f: f64,
    g: Vec<f64>,
    dphi: f64,
}

enum Search {
    Accepted(Point, usize),
    Failed(usize),
    Numeric(usize, String),
}

/// Strong Wolfe bracketing and zoom (cubic interpolation with bisection
/// safeguard).
fn line_search<F>(obj: &mut F, x: &[f64], p: &[f64], f0: f64, d0: f64, alpha0: f64, cfg: &LbfgsConfig) -> Result<Search>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let mut evals = 0usize;
    let mut eval = |alpha: f64, evals: &mut usize| -> Result<std::result::Result<Point, String>> {
        *evals += 1;
        let xt: Vec<f64> = x.iter().zip(p).map(|(x, p)| x + alpha * p).collect();
        match obj(&xt) {
            Ok((f, g)) if is_finite(f, &g) => {
                let dphi = dot(&g, p);
                Ok(Ok(Point { alpha, f, g, dphi }))
            }
            Ok(_) => Ok(Err(format!("non-finite objective at step {alpha:e}"))),
            Err(Error::Numeric(m)) => Ok(Err(m)),
            Err(e) => Err(e),
        }
    };
    let armijo = |pt: &Point| pt.f <= f0 + cfg.c1 * pt.alpha * d0;
    let curvature = |pt: &Point| pt.dphi.abs() <= -cfg.c2 * d0;

    let mut prev = Point { alpha: 0.0, f: f0, g: Vec::new(), dphi: d0 };
    let mut alpha = alpha0;
    let (mut lo, mut hi) = loop {
        let pt = match eval(alpha, &mut evals)? {
            Ok(pt) => pt,
            Err(m) => return Ok(Search::Numeric(evals, m)),
        };
        if !armijo(&pt) || (evals > 1 && pt.f >= prev.f) {
            break (prev, pt);
        }
        if curvature(&pt) {
            return Ok(Search::Accepted(pt, evals));
        }
        if pt.dphi >= 0.0 {
            break (pt, prev);
        }
        if evals >= cfg.maxls {
            return Ok(Search::Failed(evals));
        }
        alpha = 2.0 * pt.alpha;
        prev = pt;
    };

    loop {
        if evals >= cfg.maxls {
            return Ok(Search::Failed(evals));
        }
        let (a, b) = (lo.alpha.min(hi.alpha), lo.alpha.max(hi.alpha));
        let width = b - a;
        if width <= 1e-16 * b.max(1e-300) {
            return Ok(Search::Failed(evals));
        }
        let mut trial = cubic_minimizer(&lo, &hi);
        if !(trial.is_finite() && trial > a + 0.1 * width && trial < b - 0.1 * width) {
            trial = 0.5 * (a + b);
        }
        let pt = match eval(trial, &mut evals)? {
            Ok(pt) => pt,
            Err(m) => return Ok(Search::Numeric(evals, m)),
        };
        if !armijo(&pt) || pt.f >= lo.f {
            hi = pt;
        } else {
            if curvature(&pt) {
                return Ok(Search::Accepted(pt, evals));
            }
            if pt.dphi * (hi.alpha - lo.alpha) >= 0.0 {
                hi = lo;
            }
            lo = pt;
        }
    }
}

/// Minimizer of the cubic matching value and slope at both ends.
fn cubic_minimizer(p: &Point, q: &Point) -> f64 {
    let d1 = p.dphi + q.dphi - 3.0 * (p.f - q.f) / (p.alpha - q.alpha);
    let disc = d1 * d1 - p.dphi * q.dphi;
    if disc < 0.0 {
        return f64::NAN;
    }
    let d2 = (q.alpha - p.alpha).signum() * disc.sqrt();
    q.alpha - (q.alpha - p.alpha) * (q.dphi + d2 - d1) / (q.dphi - p.dphi + 2.0 * d2)
}

/// Minimize `objective` (value and gradient) from `x0`.
///
/// Returns the best iterate and the trace. An objective error of kind
/// [`Error::Numeric`] or a non-finite value ends the run with reason
/// `numeric` (at `x0` it is returned as an error); other errors propagate.
pub fn lbfgs_minimize<F>(mut objective: F, x0: Vec<f64>, cfg: &LbfgsConfig) -> Result<(Vec<f64>, OptimTrace)>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    cfg.validate()?;
    let (mut f, mut g) = objective(&x0)?;
    if !is_finite(f, &g) {
        return Err(Error::Numeric("objective is not finite at the starting point".into()));
    }
    if g.len() != x0.len() {
        return Err(Error::Parameter(format!("gradient has {} entries for {} parameters", g.len(), x0.len())));
    }
    let mut x = x0;
    let mut trace = OptimTrace {
        initial_f: f,
        initial_gnorm: inf_norm(&g),
        records: Vec::new(),
        reason: Termination::MaxIter,
        evaluations: 1,
        message: String::new(),
    };
    let ftol = cfg.factr * f64::EPSILON;

    // A stationary start admits no descent direction; record the null step,
    // whose zero decrease passes the ftol test.
    if g.iter().all(|&gi| gi == 0.0) {
        trace.records.push(IterRecord { iter: 1, f, gnorm: 0.0, step: 0.0, ls_evals: 0, dphi0: 0.0, dphi: 0.0 });
        trace.reason = Termination::Ftol;
        trace.message = "zero gradient at start".into();
        return Ok((x, trace));
    }
    if trace.initial_gnorm <= cfg.pgtol {
        trace.reason = Termination::Pgtol;
        return Ok((x, trace));
    }

    let mut pairs: VecDeque<CurvaturePair> = VecDeque::with_capacity(cfg.memory);
    let mut restarted = false;
    while trace.records.len() < cfg.maxiter {
        let mut p = two_loop_direction(&g, pairs.iter());
        let mut d0 = dot(&g, &p);
        if !(d0 < 0.0) {
            pairs.clear();
            p = g.iter().map(|x| -x).collect();
            d0 = dot(&g, &p);
        }
        let alpha0 = if pairs.is_empty() { (1.0 / dot(&p, &p).sqrt()).min(1.0) } else { 1.0 };
        match line_search(&mut objective, &x, &p, f, d0, alpha0, cfg)? {
            Search::Accepted(pt, evals) => {
                trace.evaluations += evals;
                let s: Vec<f64> = p.iter().map(|p| pt.alpha * p).collect();
                let y: Vec<f64> = pt.g.iter().zip(&g).map(|(a, b)| a - b).collect();
                if let Some(pair) = CurvaturePair::new(s, y) {
                    if pairs.len() == cfg.memory {
                        pairs.pop_front();
                    }
                    pairs.push_back(pair);
                }
                for (xi, pi) in x.iter_mut().zip(&p) {
                    *xi += pt.alpha * pi;
                }
                let f_old = f;
                f = pt.f;
                g = pt.g;
                restarted = false;
                let gnorm = inf_norm(&g);
                trace.records.push(IterRecord {
                    iter: trace.records.len() + 1,
                    f,
                    gnorm,
                    step: pt.alpha,
                    ls_evals: evals,
                    dphi0: d0,
                    dphi: pt.dphi,
                });
                if (f_old - f) / f_old.abs().max(f.abs()).max(1.0) <= ftol {
                    trace.reason = Termination::Ftol;
                    return Ok((x, trace));
                }
                if gnorm <= cfg.pgtol {
                    trace.reason = Termination::Pgtol;
                    return Ok((x, trace));
                }
            }
            Search::Failed(evals) => {
                trace.evaluations += evals;
                if restarted {
                    trace.reason = Termination::LineSearchFailure;
                    trace.message = format!("line search failed after {evals} evaluations");
                    return Ok((x, trace));
                }
                pairs.clear();
                restarted = true;
            }
            Search::Numeric(evals, msg) => {
                trace.evaluations += evals;
                trace.reason = Termination::Numeric;
                trace.message = msg;
                return Ok((x, trace));
            }
        }
    }
    trace.reason = Termination::MaxIter;
    Ok((x, trace))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sphere(x: &[f64]) -> Result<(f64, Vec<f64>)> {
        Ok((x.iter().map(|v| v * v).sum(), x.iter().map(|v| 2.0 * v).collect()))
    }

    fn rosenbrock(x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (a, b) = (x[0], x[1]);
        let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
        Ok((f, g))
    }

    #[test]
    fn quadratic_in_three_iterations() {
        let cfg = LbfgsConfig::default();
        let (x, trace) = lbfgs_minimize(sphere, vec![1.0; 10], &cfg).unwrap();
        assert!(trace.iterations() <= 3, "{trace:?}");
        assert!(x.iter().map(|v| v * v).sum::<f64>().sqrt() <= 1e-8);
        assert!(trace.satisfies_strong_wolfe(cfg.c1, cfg.c2));
    }

    #[test]
    fn rosenbrock_within_hundred_iterations() {
        let cfg = LbfgsConfig::default();
        let (x, trace) = lbfgs_minimize(rosenbrock, vec![-1.2, 1.0], &cfg).unwrap();
        let f = rosenbrock(&x).unwrap().0;
        let hit = trace.records.iter().position(|r| r.f <= 1e-10).expect("reaches 1e-10");
        assert!(hit < 100, "needed {} iterations", hit + 1);
        assert!(f <= 1e-10);
        assert!(trace.satisfies_strong_wolfe(cfg.c1, cfg.c2));
        assert!(trace.records.iter().all(|r| r.dphi0 < 0.0));
    }

    #[test]
    fn constant_objective_stops_on_ftol_at_iteration_one() {
        let (x, trace) = lbfgs_minimize(|_x: &[f64]| Ok((3.0, vec![0.0; 2])), vec![1.0, 2.0], &LbfgsConfig::default()).unwrap();
        assert_eq!(trace.reason, Termination::Ftol);
        assert_eq!(trace.iterations(), 1);
        assert_eq!(x, vec![1.0, 2.0]);
    }

    #[test]
    fn loss_sequence_is_nonincreasing() {
        let (_, trace) = lbfgs_minimize(rosenbrock, vec![-1.2, 1.0], &LbfgsConfig::default()).unwrap();
        let mut prev = trace.initial_f;
        for r in &trace.records {
            assert!(r.f <= prev);
            prev = r.f;
        }
    }

    #[test]
    fn maxiter_is_respected() {
        let cfg = LbfgsConfig { maxiter: 5, ..LbfgsConfig::default() };
        let (_, trace) = lbfgs_minimize(rosenbrock, vec![-1.2, 1.0], &cfg).unwrap();
        assert_eq!(trace.iterations(), 5);
        assert_eq!(trace.reason, Termination::MaxIter);
    }

    #[test]
    fn non_finite_objective_reports_numeric() {
        // finite only inside the unit ball, so the first long step blows up
        let obj = |x: &[f64]| {
            let r2: f64 = x.iter().map(|v| v * v).sum();
            if r2 > 4.0 {
                Ok((f64::NAN, vec![0.0; x.len()]))
            } else {
                Ok((-x[0], vec![-1.0, 0.0]))
            }
        };
        let (_, trace) = lbfgs_minimize(obj, vec![0.0, 0.0], &LbfgsConfig::default()).unwrap();
        assert_eq!(trace.reason, Termination::Numeric);
        assert!(lbfgs_minimize(|_x: &[f64]| Ok((f64::INFINITY, vec![1.0])), vec![0.0], &LbfgsConfig::default()).is_err());
    }

    #[test]
    fn unbounded_line_search_fails_cleanly() {
        // linear objective: Armijo always holds and the slope never flattens
        let obj = |x: &[f64]| Ok((x[0], vec![1.0]));
        let cfg = LbfgsConfig { maxls: 20, ..LbfgsConfig::default() };
        let (_, trace) = lbfgs_minimize(obj, vec![0.0], &cfg).unwrap();
        assert_eq!(trace.reason, Termination::LineSearchFailure);
    }

    #[test]
    fn memory_window_matches_full_history_while_short() {
        let obj = |x: &[f64]| {
            let f: f64 = x.iter().enumerate().map(|(i, v)| (i as f64 + 1.0) * v.powi(4) + v * v).sum();
            let g = x.iter().enumerate().map(|(i, v)| 4.0 * (i as f64 + 1.0) * v.powi(3) + 2.0 * v).collect();
            Ok((f, g))
        };
        let x0: Vec<f64> = (0..6).map(|i| 1.0 - 0.3 * i as f64).collect();
        let short = LbfgsConfig { memory: 4, maxiter: 5, pgtol: 0.0, factr: 0.0, ..LbfgsConfig::default() };
        let full = LbfgsConfig { memory: 100, ..short };
        let (xa, ta) = lbfgs_minimize(obj, x0.clone(), &short).unwrap();
        let (xb, tb) = lbfgs_minimize(obj, x0, &full).unwrap();
        // at iteration k <= m only k - 1 pairs exist, so both runs agree
        assert_eq!(ta.records, tb.records);
        assert_eq!(xa, xb);
    }

    #[test]
    fn two_loop_uses_only_given_pairs() {
        let g = vec![1.0, -2.0, 0.5];
        let p1 = CurvaturePair::new(vec![0.1, 0.0, 0.0], vec![0.2, 0.0, 0.0]).unwrap();
        let p2 = CurvaturePair::new(vec![0.0, 0.1, 0.1], vec![0.0, 0.3, 0.1]).unwrap();
        let all = [p1.clone(), p2.clone()];
        let newest = [p2];
        assert_ne!(two_loop_direction(&g, all.iter()), two_loop_direction(&g, newest.iter()));
        // no pairs: steepest descent
        assert_eq!(two_loop_direction(&g, [].iter()), vec![-1.0, 2.0, -0.5]);
        // curvature pairs with s.y <= 0 are skipped
        assert!(CurvaturePair::new(vec![1.0, 0.0], vec![-1.0, 0.0]).is_none());
    }

    #[test]
    fn secant_equation_holds_for_single_pair() {
        let p = CurvaturePair::new(vec![0.3, -0.1], vec![0.5, 0.2]).unwrap();
        // H y = s for the BFGS update built from one pair
        let hy: Vec<f64> = two_loop_direction(&p.y, [p.clone()].iter()).iter().map(|x| -x).collect();
        for (a, b) in hy.iter().zip(&p.s) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn trace_csv_layout() {
        let (_, trace) = lbfgs_minimize(sphere, vec![1.0, 1.0], &LbfgsConfig::default()).unwrap();
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("iter,f,gnorm,step,ls_evals\n1,"));
        assert_eq!(text.lines().count(), trace.iterations() + 1);
    }
}
