//! Scalar transport-diffusion-reaction problem on `(0, 1)` with Dirichlet
//! data:
//! `−ν u'' + a·u' + ½a'·u + |u|^{m−2}u + ½(a' − 2a₀)·u + βΛ(u) + f = 0`
//! in canonical form, where the skew part `a·∂ₓ + ½a'` sits in `B` and the
//! remaining terms in `φ`.

use nalgebra::{DMatrix, DVector};

use crate::convex::ConvexFunction;
use crate::error::{Error, Result};
use crate::operators::{ConservativeMap, ConservativeOp, LinearMap, VjpMode};
use crate::space::{Element, Space};
use crate::stationary::StationaryProblem;
use crate::stencil::{dirichlet_stiffness, skew_transport};

use super::{interior_nodes, newton_oracle, NewtonSolution, Profile};

#[derive(Clone, Debug)]
pub struct TransportParams {
    /// Number of interior nodes.
    pub n: usize,
    pub nu: f64,
    /// Reaction exponent, `m ≥ 2`.
    pub m: f64,
    /// Transport velocity.
    pub a: Profile,
    /// Zeroth-order coefficient; convexity needs `½a' − a₀ ≥ 0`.
    pub a0: Profile,
    pub forcing: Profile,
    /// Coefficient of the conservative Burgers term.
    pub burgers: f64,
}

impl Default for TransportParams {
    fn default() -> Self {
        TransportParams {
            n: 128,
            nu: 0.1,
            m: 2.0,
            a: Profile::Constant(1.0),
            a0: Profile::Constant(0.0),
            forcing: Profile::Sine { amp: 1.0, k: 1.0 },
            burgers: 0.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Transport1d {
    pub params: TransportParams,
    pub nodes: Vec<f64>,
    pub problem: StationaryProblem,
}

impl Transport1d {
    /// Newton solve of the discrete equation, started from zero.
    pub fn newton(&self, tol: f64) -> Result<NewtonSolution> {
        newton_oracle(&self.problem, &self.problem.space().zeros(), tol)
    }
}

/// Skew-symmetric Burgers convection `β·(u·u' + (u²)')/3` on interior nodes
/// with zero boundary values.
struct Burgers {
    beta: f64,
    h: f64,
}

impl Burgers {
    fn at(u: &Element, i: isize) -> f64 {
        if i < 0 || i as usize >= u.len() {
            0.0
        } else {
            u[i as usize]
        }
    }
}

impl ConservativeOp for Burgers {
    fn apply(&self, u: &Element) -> Element {
        let c = self.beta / (6.0 * self.h);
        DVector::from_fn(u.len(), |i, _| {
            let (l, r) = (Self::at(u, i as isize - 1), Self::at(u, i as isize + 1));
            c * (u[i] * (r - l) + r * r - l * l)
        })
    }

    fn vjp(&self, u: &Element, w: &Element) -> Option<Element> {
        // Gram is a multiple of the identity, so the adjoint is Jᵀw.
        let c = self.beta / (6.0 * self.h);
        let n = u.len();
        let mut out = DVector::zeros(n);
        for i in 0..n {
            let (l, r) = (Self::at(u, i as isize - 1), Self::at(u, i as isize + 1));
            out[i] += c * (r - l) * w[i];
            if i + 1 < n {
                out[i + 1] += c * (u[i] + 2.0 * r) * w[i];
            }
            if i > 0 {
                out[i - 1] -= c * (u[i] + 2.0 * l) * w[i];
            }
        }
        Some(out)
    }
}

pub fn build_transport_1d(p: &TransportParams) -> Result<Transport1d> {
    if p.n < 3 {
        return Err(Error::InvalidArgument(format!(
            "transport grid needs n ≥ 3 nodes, got {}",
            p.n
        )));
    }
    if !(p.nu > 0.0) {
        return Err(Error::InvalidArgument(format!("transport needs ν > 0, got {}", p.nu)));
    }
    if !(p.m >= 2.0) {
        return Err(Error::InvalidArgument(format!("transport needs m ≥ 2, got {}", p.m)));
    }
    let n = p.n;
    let h = 1.0 / (n + 1) as f64;
    let nodes = interior_nodes(n);
    let space = Space::with_diagonal_gram(DVector::from_element(n, h))?;

    let a = DVector::from_iterator(n, nodes.iter().map(|&x| p.a.eval(x)));
    let mut react = DVector::zeros(n);
    for (i, &x) in nodes.iter().enumerate() {
        let da = (p.a.eval(x + h) - p.a.eval(x - h)) / (2.0 * h);
        let margin = 0.5 * da - p.a0.eval(x);
        if margin < -1e-12 {
            return Err(Error::InvalidArgument(format!(
                "convexity condition ½a' − a₀ ≥ 0 fails at node {i} (x = {x:.6}): value {margin:.3e}"
            )));
        }
        react[i] = h * margin.max(0.0);
    }

    let terms = vec![
        ConvexFunction::quadratic(
            &space,
            dirichlet_stiffness(n, h) * p.nu + DMatrix::from_diagonal(&react),
            space.zeros(),
            0.0,
        )?,
        ConvexFunction::separable_power(&space, p.m, DVector::from_element(n, h))?,
    ];
    let phi = ConvexFunction::sum(&space, terms)?;
    let b = LinearMap::from_matrix(&space, &space, skew_transport(&a, h))?;
    let lam = if p.burgers == 0.0 {
        ConservativeMap::zero(&space)
    } else {
        ConservativeMap::new(&space, Burgers { beta: p.burgers, h }, VjpMode::Analytic)
    };
    let f = DVector::from_iterator(n, nodes.iter().map(|&x| p.forcing.eval(x)));
    let problem = StationaryProblem::new(&space, phi, b, lam, f)?;
    Ok(Transport1d {
        params: p.clone(),
        nodes,
        problem,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stationary::MinimizeOptions;

    fn rel(a: &Element, b: &Element) -> f64 {
        (a - b).norm() / b.norm().max(1e-300)
    }

    #[test]
    fn burgers_is_conservative_with_exact_vjp() {
        let t = build_transport_1d(&TransportParams {
            n: 12,
            burgers: 1.5,
            ..Default::default()
        })
        .unwrap();
        let s = t.problem.space();
        let u = DVector::from_fn(12, |i, _| ((i * 7 % 5) as f64 - 2.0) * 0.3);
        let w = DVector::from_fn(12, |i, _| (i as f64 * 0.4).cos());
        assert!(s.dot(&t.problem.lam().apply(&u), &u).abs() < 1e-13);
        let fd = t.problem.lam().vjp_fd(&u, &w, 1e-3).unwrap();
        assert!(rel(&t.problem.lam().vjp(&u, &w), &fd) < 1e-10);
    }

    /// Stands in for weak-to-weak continuity of `Λ`: solutions with the
    /// Burgers term settle under refinement, coarse nodes `i` matching fine
    /// nodes `2i + 1`.
    #[test]
    fn burgers_solutions_are_stable_under_refinement() {
        let solve = |n: usize| {
            let t = build_transport_1d(&TransportParams {
                n,
                burgers: 2.0,
                m: 3.0,
                ..Default::default()
            })
            .unwrap();
            let x = t.newton(1e-12).unwrap().x;
            assert!(t.problem.certificate(&x).unwrap().abs() < 1e-10);
            x
        };
        let sols: Vec<Element> = [31, 63, 127, 255].into_iter().map(solve).collect();
        let gaps: Vec<f64> = sols
            .windows(2)
            .map(|w| {
                let fine = DVector::from_fn(w[0].len(), |i, _| w[1][2 * i + 1]);
                (&w[0] - &fine).amax()
            })
            .collect();
        for g in gaps.windows(2) {
            assert!(g[1] < 0.35 * g[0], "{gaps:?}");
        }
        assert!(gaps[2] < 1e-3, "{gaps:?}");
    }

    #[test]
    fn convexity_violation_names_the_node() {
        let err = build_transport_1d(&TransportParams {
            n: 9,
            a0: Profile::Linear { c0: -0.5, c1: 1.0 },
            ..Default::default()
        })
        .unwrap_err();
        // ½a' − a₀ = 0.5 − x < 0 from x > 0.5, first at node 5 (x = 0.6).
        assert!(err.to_string().contains("node 5"), "{err}");
    }

    #[test]
    fn minimizer_matches_newton_with_nonlinearity() {
        let t = build_transport_1d(&TransportParams {
            n: 32,
            m: 4.0,
            burgers: 1.0,
            a: Profile::Linear { c0: 1.0, c1: 0.5 },
            ..Default::default()
        })
        .unwrap();
        let newton = t.newton(1e-12).unwrap();
        let rep = t.problem.solve_minimize(&MinimizeOptions::default()).unwrap();
        assert!(rep.certificate <= 1e-8, "certificate {}", rep.certificate);
        assert!(rel(&rep.x, &newton.x) < 1e-6);
    }

    #[test]
    fn zero_velocity_is_a_gradient_problem() {
        let t = build_transport_1d(&TransportParams {
            n: 16,
            a: Profile::Constant(0.0),
            ..Default::default()
        })
        .unwrap();
        assert!(t.problem.b().matrix().amax() == 0.0);
        let rep = t.problem.solve_minimize(&MinimizeOptions::default()).unwrap();
        assert!(rep.certificate <= 1e-10);
    }
}
