//! Coupled anti-Hamiltonian system on `(0, 1)` with Dirichlet data:
//!
//! `Δ(v + u) + b₁u' = |u|^{p−2}u + u^{m−1}v^m + f`,
//! `Δ(v − c²u) + b₂v' = |v|^{q−2}v − u^m v^{m−1} + g`.
//!
//! In canonical form `x = (u, v)`, `φ(u, v) = Ψ(u) + Φ(v)` with
//! `Ψ(u) = ½∫|u'|² + ∫|u|^p/p + ¼∫b₁'u²`, the skew operator
//! `B(u, v) = (−T₁u − Δv, c²Δu − T₂v)` with `Tᵢ = bᵢ∂ₓ + ½bᵢ'`, and
//! `Λ(u, v) = (u^{m−1}v^m, −u^m v^{m−1})`.

use nalgebra::{DMatrix, DVector};

use crate::convex::ConvexFunction;
use crate::error::{Error, Result};
use crate::operators::{ConservativeMap, ConservativeOp, LinearMap, VjpMode};
use crate::space::{Element, Space};
use crate::stationary::StationaryProblem;
use crate::stencil::{dirichlet_stiffness, skew_transport};

use super::{interior_nodes, newton_oracle, NewtonSolution, Profile};

#[derive(Clone, Debug)]
pub struct CoupledParams {
    /// Interior nodes per component.
    pub n: usize,
    pub p: f64,
    pub q: f64,
    /// Integer coupling exponent, `m ≥ 2`.
    pub m: u32,
    /// Wave-speed factor of the off-diagonal coupling; only `c = 1` is skew.
    pub c: f64,
    pub b1: Profile,
    pub b2: Profile,
    pub f: Profile,
    pub g: Profile,
}

impl Default for CoupledParams {
    fn default() -> Self {
        CoupledParams {
            n: 64,
            p: 2.0,
            q: 2.0,
            m: 2,
            c: 1.0,
            b1: Profile::Constant(0.0),
            b2: Profile::Constant(0.0),
            f: Profile::Sine { amp: 1.0, k: 1.0 },
            g: Profile::Sine { amp: 0.5, k: 2.0 },
        }
    }
}

#[derive(Clone, Debug)]
pub struct Coupled1d {
    pub params: CoupledParams,
    pub nodes: Vec<f64>,
    pub problem: StationaryProblem,
}

impl Coupled1d {
    /// Newton solve of the full nonlinear system, started from zero.
    pub fn newton(&self, tol: f64) -> Result<NewtonSolution> {
        newton_oracle(&self.problem, &self.problem.space().zeros(), tol)
    }

    /// Splits a state into its `(u, v)` components.
    pub fn split(&self, x: &Element) -> (Element, Element) {
        let n = self.params.n;
        (x.rows(0, n).into_owned(), x.rows(n, n).into_owned())
    }
}

struct Coupling {
    n: usize,
    m: i32,
}

impl ConservativeOp for Coupling {
    fn apply(&self, x: &Element) -> Element {
        let (n, m) = (self.n, self.m);
        let mut out = DVector::zeros(2 * n);
        for i in 0..n {
            let (u, v) = (x[i], x[n + i]);
            out[i] = u.powi(m - 1) * v.powi(m);
            out[n + i] = -u.powi(m) * v.powi(m - 1);
        }
        out
    }

    fn vjp(&self, x: &Element, w: &Element) -> Option<Element> {
        // Pointwise 2×2 Jacobian; the Gram is a multiple of the identity.
        let (n, m) = (self.n, self.m);
        let mf = m as f64;
        let mut out = DVector::zeros(2 * n);
        for i in 0..n {
            let (u, v) = (x[i], x[n + i]);
            let (wu, wv) = (w[i], w[n + i]);
            let a11 = (mf - 1.0) * u.powi(m - 2) * v.powi(m);
            let a12 = mf * u.powi(m - 1) * v.powi(m - 1);
            let a21 = -mf * u.powi(m - 1) * v.powi(m - 1);
            let a22 = -(mf - 1.0) * u.powi(m) * v.powi(m - 2);
            out[i] = a11 * wu + a21 * wv;
            out[n + i] = a12 * wu + a22 * wv;
        }
        Some(out)
    }
}

pub fn build_coupled_system_1d(p: &CoupledParams) -> Result<Coupled1d> {
    if p.n < 3 {
        return Err(Error::InvalidArgument(format!(
            "coupled grid needs n ≥ 3 nodes, got {}",
            p.n
        )));
    }
    if !(p.p >= 2.0) || !(p.q >= 2.0) {
        return Err(Error::InvalidArgument(format!(
            "coupled system needs p, q ≥ 2, got p={}, q={}",
            p.p, p.q
        )));
    }
    if p.m < 2 {
        return Err(Error::InvalidArgument(format!(
            "coupled system needs an integer m ≥ 2, got {}",
            p.m
        )));
    }
    if p.c != 1.0 {
        return Err(Error::InvalidArgument(format!(
            "the coupling (Δ, −c²Δ) is skew only for c = 1, got c = {}",
            p.c
        )));
    }
    let n = p.n;
    let h = 1.0 / (n + 1) as f64;
    let nodes = interior_nodes(n);
    let space = Space::with_diagonal_gram(DVector::from_element(2 * n, h))?;
    let k = dirichlet_stiffness(n, h);

    let mut q = DMatrix::zeros(2 * n, 2 * n);
    q.view_mut((0, 0), (n, n)).copy_from(&k);
    q.view_mut((n, n), (n, n)).copy_from(&k);
    let mut bm = DMatrix::zeros(2 * n, 2 * n);
    for (block, prof) in [(0, &p.b1), (1, &p.b2)] {
        let off = block * n;
        for (i, &x) in nodes.iter().enumerate() {
            let div = (prof.eval(x + h) - prof.eval(x - h)) / (2.0 * h);
            if div < -1e-12 {
                return Err(Error::InvalidArgument(format!(
                    "sign condition div b{} ≥ 0 fails at node {i} (x = {x:.6}): value {div:.3e}",
                    block + 1
                )));
            }
            q[(off + i, off + i)] += 0.5 * h * div.max(0.0);
        }
        let b = DVector::from_iterator(n, nodes.iter().map(|&x| prof.eval(x)));
        bm.view_mut((off, off), (n, n)).copy_from(&(-skew_transport(&b, h)));
    }
    // Δ acts as −K/h on nodal values.
    bm.view_mut((0, n), (n, n)).copy_from(&(&k / h));
    bm.view_mut((n, 0), (n, n)).copy_from(&(&k * (-p.c * p.c / h)));

    // Quadratic powers join `q`; others act on one component through a
    // coordinate selector.
    let half = Space::with_diagonal_gram(DVector::from_element(n, h))?;
    let mut terms = Vec::new();
    for (block, power) in [(0, p.p), (1, p.q)] {
        let off = block * n;
        if power == 2.0 {
            for i in 0..n {
                q[(off + i, off + i)] += h;
            }
        } else {
            let select = DMatrix::from_fn(n, 2 * n, |i, j| if j == off + i { 1.0 } else { 0.0 });
            let inner = ConvexFunction::separable_power(&half, power, DVector::from_element(n, h))?;
            terms.push(ConvexFunction::linear_precompose(
                &space,
                inner,
                LinearMap::from_matrix(&space, &half, select)?,
                half.zeros(),
            )?);
        }
    }
    terms.push(ConvexFunction::quadratic(&space, q, space.zeros(), 0.0)?);
    let phi = ConvexFunction::sum(&space, terms)?;

    let b = LinearMap::from_matrix(&space, &space, bm)?;
    let lam = ConservativeMap::new(&space, Coupling { n, m: p.m as i32 }, VjpMode::Analytic);
    let mut f = DVector::zeros(2 * n);
    for (i, &x) in nodes.iter().enumerate() {
        f[i] = p.f.eval(x);
        f[n + i] = p.g.eval(x);
    }
    let problem = StationaryProblem::new(&space, phi, b, lam, f)?;
    Ok(Coupled1d {
        params: p.clone(),
        nodes,
        problem,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stationary::MinimizeOptions;

    #[test]
    fn coupling_is_exactly_conservative_with_exact_vjp() {
        let c = build_coupled_system_1d(&CoupledParams {
            n: 6,
            m: 3,
            ..Default::default()
        })
        .unwrap();
        let lam = c.problem.lam();
        let x = DVector::from_fn(12, |i, _| (i as f64 * 0.9).sin());
        let w = DVector::from_fn(12, |i, _| (i as f64 * 0.3).cos());
        assert!(c.problem.space().dot(&lam.apply(&x), &x).abs() < 1e-15);
        let fd = lam.vjp_fd(&x, &w, 1e-3).unwrap();
        assert!((lam.vjp(&x, &w) - &fd).norm() < 1e-10 * fd.norm());
    }

    #[test]
    fn unequal_speed_is_refused() {
        let err = build_coupled_system_1d(&CoupledParams {
            c: 2.0,
            ..Default::default()
        })
        .unwrap_err();
        assert!(err.to_string().contains("c = 1"));
    }

    #[test]
    fn negative_divergence_is_refused() {
        let err = build_coupled_system_1d(&CoupledParams {
            b2: Profile::Linear { c0: 1.0, c1: -1.0 },
            ..Default::default()
        })
        .unwrap_err();
        assert!(err.to_string().contains("div b2"));
    }

    #[test]
    fn zero_data_gives_zero_solution() {
        let c = build_coupled_system_1d(&CoupledParams {
            n: 8,
            f: Profile::Constant(0.0),
            g: Profile::Constant(0.0),
            ..Default::default()
        })
        .unwrap();
        let zero = c.problem.space().zeros();
        assert_eq!(c.problem.certificate(&zero).unwrap(), 0.0);
    }

    #[test]
    fn newton_solution_solves_the_pde_form() {
        let c = build_coupled_system_1d(&CoupledParams {
            n: 16,
            b1: Profile::Linear { c0: 0.0, c1: 1.0 },
            ..Default::default()
        })
        .unwrap();
        let sol = c.newton(1e-12).unwrap();
        let (u, v) = c.split(&sol.x);
        // Residual of the first equation written with plain stencils.
        let n = 16;
        let h = 1.0 / 17.0;
        let at = |z: &Element, i: isize| if i < 0 || i >= n as isize { 0.0 } else { z[i as usize] };
        let mut worst: f64 = 0.0;
        for i in 0..n as isize {
            let x = (i + 1) as f64 * h;
            let lap = |z: &Element| (at(z, i + 1) - 2.0 * at(z, i) + at(z, i - 1)) / (h * h);
            let ui = at(&u, i);
            let vi = at(&v, i);
            // b₁ = x, so T₁u = x·u' + ½u up to the skew averaging of b₁.
            let b_avg_r = 0.5 * (x + x + h);
            let b_avg_l = 0.5 * (x + x - h);
            let t1 = (b_avg_r * at(&u, i + 1) - b_avg_l * at(&u, i - 1)) / (2.0 * h);
            let r = lap(&v) + lap(&u) + t1 - 0.5 * ui - ui - ui * vi * vi - (std::f64::consts::PI * x).sin();
            worst = worst.max(r.abs());
        }
        assert!(worst < 1e-8, "residual {worst}");
        let rep = c.problem.solve_minimize(&MinimizeOptions::default()).unwrap();
        assert!(rep.certificate <= 1e-6);
        assert!((&rep.x - &sol.x).norm() <= 1e-6 * sol.x.norm());
    }
}
