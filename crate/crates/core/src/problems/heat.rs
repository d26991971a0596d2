//! Heat equation `u̇ = ν·u''` on `[0, 1]`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::convex::ConvexFunction;
use crate::error::{Error, Result};
use crate::evolution::PathProblem;
use crate::operators::{ConservativeMap, LinearMap};
use crate::space::{Element, Space};
use crate::stationary::StationaryProblem;
use crate::stencil::{dirichlet_stiffness, periodic_stiffness};

use super::interior_nodes;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoundaryCondition {
    Dirichlet,
    /// Periodic with the mean removed: coordinates are the first `n − 1`
    /// nodal values, the last one being minus their sum.
    Periodic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeatInitial {
    /// `sin(πx)` (Dirichlet) or `sin(2πx)` (periodic).
    Sine,
    Zero,
}

#[derive(Clone, Debug)]
pub struct HeatParams {
    /// Number of grid intervals.
    pub n: usize,
    pub nu: f64,
    pub bc: BoundaryCondition,
    pub horizon: f64,
    pub steps: usize,
    pub initial: HeatInitial,
}

impl Default for HeatParams {
    fn default() -> Self {
        HeatParams {
            n: 64,
            nu: 1.0,
            bc: BoundaryCondition::Dirichlet,
            horizon: 0.1,
            steps: 32,
            initial: HeatInitial::Sine,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Heat1d {
    pub params: HeatParams,
    /// Positions of the coordinates.
    pub nodes: Vec<f64>,
    pub problem: PathProblem,
}

impl Heat1d {
    /// Exact solution at time `t`, sampled at the coordinate nodes.
    pub fn exact(&self, t: f64) -> Element {
        let p = &self.params;
        let (freq, amp) = match p.initial {
            HeatInitial::Zero => (0.0, 0.0),
            HeatInitial::Sine => {
                let k = match p.bc {
                    BoundaryCondition::Dirichlet => PI,
                    BoundaryCondition::Periodic => 2.0 * PI,
                };
                (k, (-p.nu * k * k * t).exp())
            }
        };
        DVector::from_iterator(self.nodes.len(), self.nodes.iter().map(|x| amp * (freq * x).sin()))
    }

    /// Relative error `‖u − exact(t)‖/‖exact(t)‖` in the problem's norm.
    pub fn relative_error(&self, u: &Element, t: f64) -> f64 {
        let s = self.problem.space();
        let e = self.exact(t);
        s.norm(&(u - &e)) / s.norm(&e).max(1e-300)
    }
}

pub fn build_heat_1d(p: &HeatParams) -> Result<Heat1d> {
    if p.n < 4 {
        return Err(Error::InvalidArgument(format!(
            "heat grid needs n ≥ 4 intervals, got {}",
            p.n
        )));
    }
    if !(p.nu > 0.0) || !(p.horizon > 0.0) || p.steps == 0 {
        return Err(Error::InvalidArgument(
            "heat needs ν > 0, T > 0 and at least one step".into(),
        ));
    }
    let h = 1.0 / p.n as f64;
    let (space, stiffness, nodes) = match p.bc {
        BoundaryCondition::Dirichlet => {
            let m = p.n - 1;
            let space = Space::with_diagonal_gram(DVector::from_element(m, h))?;
            (space, dirichlet_stiffness(m, h), interior_nodes(m))
        }
        BoundaryCondition::Periodic => {
            let m = p.n - 1;
            // u = E y with E = [I; −1ᵀ].
            let mut e = DMatrix::zeros(p.n, m);
            for i in 0..m {
                e[(i, i)] = 1.0;
                e[(m, i)] = -1.0;
            }
            let space = Space::with_gram(e.transpose() * &e * h)?;
            let k = e.transpose() * periodic_stiffness(p.n, h) * &e;
            let nodes = (0..m).map(|i| i as f64 * h).collect();
            (space, k, nodes)
        }
    };
    let phi = ConvexFunction::quadratic(&space, stiffness * p.nu, space.zeros(), 0.0)?;
    let base = StationaryProblem::new(
        &space,
        phi,
        LinearMap::zero(&space, &space),
        ConservativeMap::zero(&space),
        space.zeros(),
    )?;
    let mut heat = Heat1d {
        params: p.clone(),
        nodes,
        problem: PathProblem::new(base.clone(), space.zeros(), p.horizon, p.steps)?,
    };
    let v0 = heat.exact(0.0);
    heat.problem = PathProblem::new(base, v0, p.horizon, p.steps)?;
    Ok(heat)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evolution::PathOptions;

    #[test]
    fn zero_initial_data_gives_zero_path() {
        let heat = build_heat_1d(&HeatParams {
            initial: HeatInitial::Zero,
            n: 8,
            steps: 4,
            ..Default::default()
        })
        .unwrap();
        let rep = heat.problem.solve_path_minimize(&PathOptions::default()).unwrap();
        assert!(rep.path.nodes.iter().all(|u| u.amax() == 0.0));
    }

    #[test]
    fn periodic_gram_is_mean_zero_l2() {
        let heat = build_heat_1d(&HeatParams {
            bc: BoundaryCondition::Periodic,
            n: 16,
            ..Default::default()
        })
        .unwrap();
        let s = heat.problem.space();
        // ∫ sin²(2πx) dx = ½, reproduced by the rectangle rule.
        assert!((s.norm_sq(&heat.exact(0.0)) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn dirichlet_decay_is_close_to_exact() {
        let heat = build_heat_1d(&HeatParams::default()).unwrap();
        let rep = heat.problem.solve_marching_prox().unwrap();
        let err = heat.relative_error(rep.path.last(), heat.params.horizon);
        // First-order in time: |(1 + π²h)^{-N} − e^{−π²T}| / e^{−π²T} ≈ 0.015.
        assert!(err < 0.03, "error {err}");
    }
}
