//! Smooth unconstrained minimization: preconditioned L-BFGS with a
//! strong-Wolfe line search, and damped Newton for problems with Hessians.

use std::collections::VecDeque;

use nalgebra::{Cholesky, DMatrix};

use crate::error::Result;
use crate::space::Element;

#[derive(Clone, Debug)]
pub struct LbfgsOptions {
    pub max_iter: usize,
    pub memory: usize,
    /// Stop once the gradient norm drops below this.
    pub gtol: f64,
    /// Stop once the objective drops below this (useful for certificates
    /// with known infimum zero).
    pub f_target: f64,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        LbfgsOptions {
            max_iter: 500,
            memory: 12,
            gtol: 1e-10,
            f_target: f64::NEG_INFINITY,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LbfgsStatus {
    Converged,
    TargetReached,
    MaxIter,
    LineSearchFailed,
}

#[derive(Clone, Debug)]
pub struct LbfgsOutcome {
    pub x: Element,
    pub f: f64,
    pub grad: Element,
    pub gnorm: f64,
    pub iterations: usize,
    /// `(f, ‖g‖)` after each accepted step, starting with the initial point.
    pub history: Vec<(f64, f64)>,
    pub status: LbfgsStatus,
    /// Times the search direction failed to be a descent direction.
    pub resets: usize,
}

/// Objective returning value and Euclidean gradient.
pub trait Objective {
    fn eval(&mut self, x: &Element) -> Result<(f64, Element)>;
}

impl<F> Objective for F
where
    F: FnMut(&Element) -> Result<(f64, Element)>,
{
    fn eval(&mut self, x: &Element) -> Result<(f64, Element)> {
        self(x)
    }
}

/// Geometry for the quasi-Newton iteration: `precondition` approximates the
/// inverse Hessian, `norm` measures gradients for the stopping test.
pub struct Geometry<'a> {
    pub precondition: Option<&'a dyn Fn(&Element) -> Element>,
    pub norm: &'a dyn Fn(&Element) -> f64,
}

pub fn euclidean_norm(g: &Element) -> f64 {
    g.norm()
}

impl Default for Geometry<'static> {
    fn default() -> Self {
        Geometry {
            precondition: None,
            norm: &euclidean_norm,
        }
    }
}

pub fn lbfgs(obj: &mut dyn Objective, x0: Element, opts: &LbfgsOptions, geom: &Geometry) -> Result<LbfgsOutcome> {
    let mut x = x0;
    let (mut f, mut g) = obj.eval(&x)?;
    let mut gnorm = (geom.norm)(&g);
    let mut history = vec![(f, gnorm)];
    let mut pairs: VecDeque<(Element, Element, f64)> = VecDeque::new();
    let mut resets = 0;
    let mut status = LbfgsStatus::MaxIter;
    let mut iterations = 0;

    for it in 0..opts.max_iter {
        if gnorm <= opts.gtol {
            status = LbfgsStatus::Converged;
            break;
        }
        if f <= opts.f_target {
            status = LbfgsStatus::TargetReached;
            break;
        }
        let mut d = -two_loop(&g, &pairs, geom.precondition);
        let mut slope = g.dot(&d);
        if !(slope < 0.0) {
            resets += 1;
            pairs.clear();
            d = -apply_h0(&g, geom.precondition);
            slope = g.dot(&d);
            if !(slope < 0.0) {
                d = -g.clone();
                slope = g.dot(&d);
            }
        }
        let alpha0 = if it == 0 && pairs.is_empty() && geom.precondition.is_none() {
            (1.0 / g.amax().max(1e-300)).min(1.0)
        } else {
            1.0
        };
        match wolfe_search(obj, &x, f, &d, slope, alpha0)? {
            Some(step) => {
                let s = &step.x - &x;
                let y = &step.g - &g;
                let sy = s.dot(&y);
                if sy > 1e-16 * s.norm() * y.norm() && sy > 0.0 {
                    if pairs.len() == opts.memory {
                        pairs.pop_front();
                    }
                    pairs.push_back((s, y, 1.0 / sy));
                }
                x = step.x;
                f = step.f;
                g = step.g;
                gnorm = (geom.norm)(&g);
                history.push((f, gnorm));
                iterations = it + 1;
            }
            None => {
                if !pairs.is_empty() {
                    // Retry once from the preconditioned gradient direction.
                    pairs.clear();
                    resets += 1;
                    let d = -apply_h0(&g, geom.precondition);
                    let slope = g.dot(&d);
                    if slope < 0.0 {
                        if let Some(step) = wolfe_search(obj, &x, f, &d, slope, 1.0)? {
                            x = step.x;
                            f = step.f;
                            g = step.g;
                            gnorm = (geom.norm)(&g);
                            history.push((f, gnorm));
                            iterations = it + 1;
                            continue;
                        }
                    }
                }
                status = LbfgsStatus::LineSearchFailed;
                iterations = it;
                break;
            }
        }
    }
    if status == LbfgsStatus::MaxIter {
        if gnorm <= opts.gtol {
            status = LbfgsStatus::Converged;
        } else if f <= opts.f_target {
            status = LbfgsStatus::TargetReached;
        }
    }
    Ok(LbfgsOutcome {
        x,
        f,
        grad: g,
        gnorm,
        iterations,
        history,
        status,
        resets,
    })
}

fn apply_h0(g: &Element, precond: Option<&dyn Fn(&Element) -> Element>) -> Element {
    match precond {
        Some(p) => p(g),
        None => g.clone(),
    }
}

fn two_loop(
    g: &Element,
    pairs: &VecDeque<(Element, Element, f64)>,
    precond: Option<&dyn Fn(&Element) -> Element>,
) -> Element {
    let mut q = g.clone();
    let mut alphas = Vec::with_capacity(pairs.len());
    for (s, y, rho) in pairs.iter().rev() {
        let a = rho * s.dot(&q);
        q.axpy(-a, y, 1.0);
        alphas.push(a);
    }
    let mut r = apply_h0(&q, precond);
    if let Some((s, y, _)) = pairs.back() {
        let hy = apply_h0(y, precond);
        let yhy = y.dot(&hy);
        if yhy > 0.0 {
            r *= s.dot(y) / yhy;
        }
    }
    for ((s, y, rho), a) in pairs.iter().zip(alphas.into_iter().rev()) {
        let b = rho * y.dot(&r);
        r.axpy(a - b, s, 1.0);
    }
    r
}

struct Step {
    x: Element,
    f: f64,
    g: Element,
}

/// Strong-Wolfe line search (bracketing then zoom). Returns `None` when no
/// point with sufficient decrease is found.
fn wolfe_search(
    obj: &mut dyn Objective,
    x: &Element,
    f0: f64,
    d: &Element,
    slope0: f64,
    alpha_init: f64,
) -> Result<Option<Step>> {
    const C1: f64 = 1e-4;
    const C2: f64 = 0.9;
    let mut eval = |a: f64| -> Result<(f64, f64, Step)> {
        let xa = x + d * a;
        let (fa, ga) = obj.eval(&xa)?;
        let fa = if fa.is_finite() { fa } else { f64::INFINITY };
        let da = ga.dot(d);
        Ok((fa, da, Step { x: xa, f: fa, g: ga }))
    };
    let armijo = |a: f64, fa: f64| fa <= f0 + C1 * a * slope0;

    let mut a_prev = 0.0;
    let mut f_prev = f0;
    let mut d_prev = slope0;
    let mut best: Option<Step> = None;
    let mut a = alpha_init;
    for i in 0..40 {
        let (fa, da, step) = eval(a)?;
        if !armijo(a, fa) || (i > 0 && fa >= f_prev) {
            return zoom(
                &mut eval,
                &armijo,
                (a_prev, f_prev, d_prev),
                (a, fa, da),
                slope0,
                best,
                C2,
            );
        }
        if da.abs() <= -C2 * slope0 {
            return Ok(Some(step));
        }
        if da >= 0.0 {
            return zoom(
                &mut eval,
                &armijo,
                (a, fa, da),
                (a_prev, f_prev, d_prev),
                slope0,
                Some(step),
                C2,
            );
        }
        a_prev = a;
        f_prev = fa;
        d_prev = da;
        best = Some(step);
        a *= 4.0;
    }
    Ok(best)
}

type Probe = (f64, f64, f64);

fn zoom(
    eval: &mut dyn FnMut(f64) -> Result<(f64, f64, Step)>,
    armijo: &dyn Fn(f64, f64) -> bool,
    mut lo: Probe,
    mut hi: Probe,
    slope0: f64,
    mut best: Option<Step>,
    c2: f64,
) -> Result<Option<Step>> {
    for _ in 0..60 {
        let (alo, flo, dlo) = lo;
        let (ahi, fhi, _) = hi;
        let width = ahi - alo;
        if width.abs() <= 1e-16 * alo.abs().max(ahi.abs()).max(1e-300) {
            break;
        }
        // Quadratic interpolation from (alo, flo, dlo) and (ahi, fhi),
        // safeguarded towards the interior of the bracket.
        let mut a = if fhi.is_finite() {
            let denom = 2.0 * (fhi - flo - dlo * width);
            if denom > 0.0 {
                alo - dlo * width * width / denom
            } else {
                alo + 0.5 * width
            }
        } else {
            alo + 0.1 * width
        };
        let (lo_b, hi_b) = if width > 0.0 {
            (alo + 0.1 * width, ahi - 0.1 * width)
        } else {
            (ahi - 0.1 * width, alo + 0.1 * width)
        };
        let (lo_b, hi_b) = (lo_b.min(hi_b), lo_b.max(hi_b));
        if !(a >= lo_b && a <= hi_b) {
            a = alo + 0.5 * width;
        }
        let (fa, da, step) = eval(a)?;
        if !armijo(a, fa) || fa >= flo {
            hi = (a, fa, da);
        } else {
            if da.abs() <= -c2 * slope0 {
                return Ok(Some(step));
            }
            if da * (ahi - alo) >= 0.0 {
                hi = lo;
            }
            lo = (a, fa, da);
            best = Some(step);
        }
    }
    Ok(best)
}

#[derive(Clone, Debug)]
pub struct NewtonOutcome {
    pub x: Element,
    pub f: f64,
    /// Half the squared Newton decrement at the returned point, an estimate
    /// of `f(x) − inf f` for locally quadratic objectives.
    pub gap: f64,
    pub iterations: usize,
}

/// Value, gradient and Hessian.
pub type ValueGradHess = (f64, Element, DMatrix<f64>);

/// Damped Newton for a smooth convex objective with Hessian.
///
/// `fgh` returns value, gradient and Hessian; iteration stops once the gap
/// estimate falls below `gap_tol` or progress stalls at rounding level.
pub fn newton_minimize(
    fgh: &mut dyn FnMut(&Element) -> Result<ValueGradHess>,
    x0: Element,
    gap_tol: f64,
    max_iter: usize,
) -> Result<NewtonOutcome> {
    let mut x = x0;
    let (mut f, mut g, mut h) = fgh(&x)?;
    for it in 0..max_iter {
        let step = solve_spd(&h, &g);
        let dec = g.dot(&step);
        let gap = 0.5 * dec.max(0.0);
        if gap <= gap_tol || !gap.is_finite() {
            return Ok(NewtonOutcome {
                x,
                f,
                gap,
                iterations: it,
            });
        }
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let xt = &x - &step * t;
            let (ft, gt, ht) = fgh(&xt)?;
            if ft.is_finite() && ft <= f - 0.25 * t * dec {
                x = xt;
                f = ft;
                g = gt;
                h = ht;
                accepted = true;
                break;
            }
            // At rounding level the decrease test is meaningless; accept a
            // full step that does not increase the gradient.
            if t == 1.0 && ft.is_finite() && (ft - f).abs() <= 1e-14 * (1.0 + f.abs()) && gt.norm() <= g.norm() {
                x = xt;
                f = ft;
                g = gt;
                h = ht;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            return Ok(NewtonOutcome {
                x,
                f,
                gap,
                iterations: it,
            });
        }
    }
    let step = solve_spd(&h, &g);
    let gap = 0.5 * g.dot(&step).max(0.0);
    Ok(NewtonOutcome {
        x,
        f,
        gap,
        iterations: max_iter,
    })
}

/// Solves `H s = g` for symmetric positive (semi)definite `H`, adding a
/// small diagonal shift when the factorization fails.
pub fn solve_spd(h: &DMatrix<f64>, g: &Element) -> Element {
    if let Some(c) = Cholesky::new(h.clone()) {
        return c.solve(g);
    }
    let scale = h.diagonal().amax().max(1e-300);
    let mut shift = 1e-12 * scale;
    loop {
        let mut hs = h.clone();
        for i in 0..hs.nrows() {
            hs[(i, i)] += shift;
        }
        if let Some(c) = Cholesky::new(hs) {
            return c.solve(g);
        }
        shift *= 10.0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dvector, DVector};

    fn rosenbrock(x: &Element) -> Result<(f64, Element)> {
        let (a, b) = (x[0], x[1]);
        let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        let g = dvector![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
        Ok((f, g))
    }

    #[test]
    fn lbfgs_solves_rosenbrock() {
        let opts = LbfgsOptions {
            max_iter: 200,
            gtol: 1e-10,
            ..Default::default()
        };
        let out = lbfgs(&mut rosenbrock, dvector![-1.2, 1.0], &opts, &Geometry::default()).unwrap();
        assert_eq!(out.status, LbfgsStatus::Converged);
        assert!((out.x - dvector![1.0, 1.0]).amax() < 1e-8);
        for w in out.history.windows(2) {
            assert!(w[1].0 <= w[0].0);
        }
    }

    #[test]
    fn exact_preconditioner_converges_in_one_step() {
        let q = DMatrix::from_diagonal(&dvector![1.0, 1e4, 1e-2]);
        let b = dvector![1.0, -2.0, 3.0];
        let qc = q.clone();
        let mut obj = move |x: &Element| -> Result<(f64, Element)> {
            let g = &qc * x - &b;
            Ok((0.5 * x.dot(&(&qc * x)) - b.dot(x), g))
        };
        let inv = q.clone().try_inverse().unwrap();
        let pre = move |g: &Element| &inv * g;
        let geom = Geometry {
            precondition: Some(&pre),
            norm: &euclidean_norm,
        };
        let opts = LbfgsOptions::default();
        let out = lbfgs(&mut obj, DVector::zeros(3), &opts, &geom).unwrap();
        assert_eq!(out.status, LbfgsStatus::Converged);
        assert!(out.iterations <= 2);
    }

    #[test]
    fn newton_finds_quartic_minimum() {
        // minimize x⁴/4 + x²/2 − 2x  →  x³ + x = 2  →  x = 1
        let mut fgh = |x: &Element| -> Result<(f64, Element, DMatrix<f64>)> {
            let v = x[0];
            Ok((
                v.powi(4) / 4.0 + v * v / 2.0 - 2.0 * v,
                dvector![v.powi(3) + v - 2.0],
                DMatrix::from_element(1, 1, 3.0 * v * v + 1.0),
            ))
        };
        let out = newton_minimize(&mut fgh, dvector![5.0], 1e-30, 100).unwrap();
        assert!((out.x[0] - 1.0).abs() < 1e-14);
    }
}
