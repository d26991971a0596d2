//! Ready-made discretizations in canonical form, each paired with an
//! independent classical oracle.

mod coupled;
mod heat;
mod nse2d;
mod transport;

pub use coupled::{build_coupled_system_1d, Coupled1d, CoupledParams};
pub use heat::{build_heat_1d, BoundaryCondition, Heat1d, HeatInitial, HeatParams};
pub use nse2d::{
    build_nse2d_evolution, build_nse2d_stationary, picard_spectral, Forcing, Nse2d, Nse2dEvolution, Nse2dParams,
    NseInitial, Perturbation, PicardSpectral, SpectralGrid,
};
pub use transport::{build_transport_1d, Transport1d, TransportParams};

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::space::Element;
use crate::stationary::StationaryProblem;

/// A scalar coefficient profile on `[0, 1]`.
#[derive(Clone)]
pub enum Profile {
    Constant(f64),
    /// `c0 + c1·x`.
    Linear {
        c0: f64,
        c1: f64,
    },
    /// `amp·sin(k·π·x)`.
    Sine {
        amp: f64,
        k: f64,
    },
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl fmt::Debug for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Profile::Constant(c) => write!(f, "const:{c}"),
            Profile::Linear { c0, c1 } => write!(f, "linear:{c0},{c1}"),
            Profile::Sine { amp, k } => write!(f, "sine:{amp},{k}"),
            Profile::Custom(_) => write!(f, "custom"),
        }
    }
}

impl Profile {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Profile::Constant(c) => *c,
            Profile::Linear { c0, c1 } => c0 + c1 * x,
            Profile::Sine { amp, k } => amp * (k * std::f64::consts::PI * x).sin(),
            Profile::Custom(f) => f(x),
        }
    }

    /// Parses `const:c`, `linear:c0,c1` or `sine:amp,k`.
    pub fn parse(text: &str) -> Result<Self> {
        let (kind, args) = text.split_once(':').unwrap_or((text, ""));
        let nums = args
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Parse(format!("bad number {s:?} in profile {text:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        match (kind.trim(), nums.as_slice()) {
            ("const", [c]) => Ok(Profile::Constant(*c)),
            ("linear", [c0, c1]) => Ok(Profile::Linear { c0: *c0, c1: *c1 }),
            ("sine", [amp, k]) => Ok(Profile::Sine { amp: *amp, k: *k }),
            _ => Err(Error::Parse(format!(
                "unknown profile {text:?}; expected const:c, linear:c0,c1 or sine:amp,k"
            ))),
        }
    }
}

/// Outcome of a Newton oracle solve.
#[derive(Clone, Debug)]
pub struct NewtonSolution {
    pub x: Element,
    pub iterations: usize,
    /// Dual norm of the final residual.
    pub residual: f64,
}

/// Newton's method on the residual `F(x) = ∇φ(x) + G(Bx + Λx + f)`
/// (Euclidean), with a difference Jacobian for `Λ`. Requires a smooth `φ`
/// with Hessian.
pub fn newton_oracle(problem: &StationaryProblem, x0: &Element, tol: f64) -> Result<NewtonSolution> {
    let s = problem.space();
    let n = s.dim();
    let bm = s.gram_apply_matrix(&problem.b().matrix());
    let residual = |x: &Element| -> Result<Element> {
        let g = problem
            .phi()
            .grad_e(x)
            .ok_or_else(|| Error::InvalidArgument("Newton oracle needs a differentiable φ".into()))?;
        Ok(g + s.gram_apply(&(problem.b().apply(x) + problem.lam().apply(x) + problem.f())))
    };
    let mut x = x0.clone();
    let mut r = residual(&x)?;
    let mut rn = s.dual_norm(&r);
    for it in 0..100 {
        if rn <= tol {
            return Ok(NewtonSolution {
                x,
                iterations: it,
                residual: rn,
            });
        }
        let mut jac = problem
            .phi()
            .hessian_e(&x)
            .ok_or_else(|| Error::InvalidArgument("Newton oracle needs a Hessian of φ".into()))?
            + &bm;
        if !problem.lam().is_zero() {
            let eps = 1e-4 * (1.0 + x.amax());
            let mut e = s.zeros();
            let mut jl = DMatrix::zeros(n, n);
            for j in 0..n {
                e[j] = 1.0;
                jl.set_column(j, &problem.lam().jvp_fd(&x, &e, eps));
                e[j] = 0.0;
            }
            jac += s.gram_apply_matrix(&jl);
        }
        let step = jac.lu().solve(&r).ok_or_else(|| Error::NotConverged {
            what: "singular Newton system".into(),
            gap: rn,
        })?;
        // Backtrack on the residual norm.
        let mut t = 1.0;
        loop {
            let xt = &x - &step * t;
            let rt = residual(&xt)?;
            let rtn = s.dual_norm(&rt);
            if rtn < rn || t < 1e-4 {
                x = xt;
                r = rt;
                rn = rtn;
                break;
            }
            t *= 0.5;
        }
    }
    if rn <= tol * 1e3 {
        return Ok(NewtonSolution {
            x,
            iterations: 100,
            residual: rn,
        });
    }
    Err(Error::NotConverged {
        what: "Newton oracle".into(),
        gap: rn,
    })
}

/// Uniform interior nodes `x_i = i/(n+1)`, `i = 1..n`.
pub(crate) fn interior_nodes(n: usize) -> Vec<f64> {
    let h = 1.0 / (n + 1) as f64;
    (1..=n).map(|i| i as f64 * h).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profiles_parse_and_evaluate() {
        assert_eq!(Profile::parse("const:2.5").unwrap().eval(0.3), 2.5);
        assert_eq!(Profile::parse("linear:1,2").unwrap().eval(0.5), 2.0);
        assert!((Profile::parse("sine:2,1").unwrap().eval(0.5) - 2.0).abs() < 1e-15);
        assert!(Profile::parse("cubic:1").is_err());
        assert!(Profile::parse("const:x").is_err());
    }
}
