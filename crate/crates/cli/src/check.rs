//! Self-checks of the algebra, the operators and the built-in problems.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use selfdual::operators::{conservativity_defect, pair_up, skew_defect};
use selfdual::problems::{
    build_coupled_system_1d, build_heat_1d, build_nse2d_stationary, build_transport_1d, CoupledParams, Forcing,
    HeatParams, Nse2dParams, TransportParams,
};
use selfdual::stencil::skew_transport;
use selfdual::{seeded_rng, ConvexFunction, Element, Lagrangian, LinearMap, Result, Space};

pub const SUITES: [&str; 4] = ["algebra", "operators", "problems", "all"];

/// One measured defect against its tolerance.
#[derive(Clone, Debug)]
pub struct Check {
    pub suite: &'static str,
    pub name: &'static str,
    pub value: f64,
    pub tol: f64,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.value.is_finite() && self.value <= self.tol
    }
}

fn check(suite: &'static str, name: &'static str, tol: f64, f: impl FnOnce() -> Result<f64>) -> Check {
    Check {
        suite,
        name,
        value: f().map_or(f64::NAN, f64::abs),
        tol,
    }
}

fn weighted_space(d: usize) -> Space {
    Space::with_diagonal_gram(DVector::from_fn(d, |i, _| 0.5 + 0.25 * i as f64)).expect("positive weights")
}

fn spd(d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(d, d, |i, j| {
        if i == j {
            2.0 + i as f64
        } else {
            0.3 / (1.0 + (i + j) as f64)
        }
    })
}

/// Worst `φ(x) + φ*(p) − ⟨x, p⟩` with `p` the Riesz gradient at `x`.
fn fenchel_young(phi: &ConvexFunction, samples: &[Element]) -> Result<f64> {
    let s = phi.space();
    let mut worst = 0.0f64;
    for x in samples {
        let p = phi.subgradient(x)?.value;
        let gap = phi.eval(x)? + phi.conjugate(&p)? - s.dot(x, &p);
        worst = worst.max(gap.abs() / (1.0 + s.norm_sq(x)));
    }
    Ok(worst)
}

fn algebra() -> Vec<Check> {
    let s = weighted_space(3);
    let samples = s.random_elements(&mut seeded_rng(11), 6, 1.5);
    vec![
        check("algebra", "fenchel_young_quadratic", 1e-10, || {
            let b = DVector::from_vec(vec![0.2, -0.1, 0.4]);
            fenchel_young(&ConvexFunction::quadratic(&s, spd(3), b, 0.0)?, &samples)
        }),
        check("algebra", "fenchel_young_power", 1e-8, || {
            fenchel_young(&ConvexFunction::power_norm(&s, 3.0, 0.7)?, &samples)
        }),
        check("algebra", "fenchel_young_separable", 1e-8, || {
            fenchel_young(
                &ConvexFunction::separable_power(&s, 4.0, DVector::from_element(3, 0.5))?,
                &samples,
            )
        }),
        check("algebra", "asd_shifted_basic", 1e-6, || {
            let s2 = weighted_space(2);
            let phi = ConvexFunction::quadratic(&s2, spd(2), DVector::from_vec(vec![0.1, -0.2]), 0.0)?;
            let skew = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
            let b = LinearMap::from_matrix(&s2, &s2, s2.gram_solve_matrix(&skew))?;
            let l = Lagrangian::shift(&Lagrangian::basic(phi), &b)?;
            let pts = s2.random_elements(&mut seeded_rng(12), 6, 1.0);
            Ok(l.asd_defect(&pair_up(&pts), 4.0, 9)?.defect)
        }),
    ]
}

fn operators() -> Vec<Check> {
    let n = 48;
    let h = 1.0 / (n + 1) as f64;
    let s = Space::with_diagonal_gram(DVector::from_element(n, h)).expect("positive weights");
    let samples = s.random_elements(&mut seeded_rng(21), 8, 1.0);
    let small_nse = || {
        build_nse2d_stationary(&Nse2dParams {
            n: 16,
            forcing: Forcing::Zero,
            ..Nse2dParams::default()
        })
    };
    vec![
        check("operators", "skew_transport", 1e-12, || {
            let a = DVector::from_fn(n, |i, _| 1.0 + ((i + 1) as f64 * h).sin());
            let b = LinearMap::from_matrix(&s, &s, s.gram_solve_matrix(&skew_transport(&a, h)))?;
            skew_defect(&s, &b, &pair_up(&samples))
        }),
        check("operators", "nse_conservativity", 1e-10, || {
            let nse = small_nse()?;
            let sp = nse.problem.space();
            conservativity_defect(sp, nse.problem.lam(), &sp.random_elements(&mut seeded_rng(22), 4, 1.0))
        }),
        check("operators", "nse_vjp_vs_difference", 1e-6, || {
            let nse = small_nse()?;
            let sp = nse.problem.space();
            let pts = sp.random_elements(&mut seeded_rng(23), 2, 1.0);
            let lam = nse.problem.lam();
            let (exact, fd) = (lam.vjp(&pts[0], &pts[1]), lam.vjp_fd(&pts[0], &pts[1], 1e-4)?);
            Ok(sp.dual_norm(&(&exact - &fd)) / sp.dual_norm(&exact).max(1e-300))
        }),
    ]
}

fn problems() -> Vec<Check> {
    let structure = |d: selfdual::Defects| d.skew.max(d.boundary).max(d.conservativity);
    vec![
        check("problems", "heat_1d_structure", 1e-10, || {
            Ok(structure(
                build_heat_1d(&HeatParams::default())?.problem.stage(1).defects(),
            ))
        }),
        check("problems", "heat_1d_marching_certificate", 1e-10, || {
            let heat = build_heat_1d(&HeatParams::default())?;
            let r = heat.problem.solve_marching_prox()?;
            heat.problem.certificate(&r.path)
        }),
        check("problems", "transport_1d_newton_certificate", 1e-10, || {
            let t = build_transport_1d(&TransportParams::default())?;
            t.problem.certificate(&t.newton(1e-12)?.x)
        }),
        check("problems", "coupled_1d_newton_certificate", 1e-10, || {
            let c = build_coupled_system_1d(&CoupledParams::default())?;
            c.problem.certificate(&c.newton(1e-12)?.x)
        }),
        check("problems", "nse2d_structure", 1e-10, || {
            let nse = build_nse2d_stationary(&Nse2dParams {
                n: 16,
                ..Nse2dParams::default()
            })?;
            Ok(structure(nse.problem.defects()))
        }),
    ]
}

/// Runs a suite; `None` for an unknown name.
pub fn run_suite(name: &str) -> Option<Vec<Check>> {
    Some(match name {
        "algebra" => algebra(),
        "operators" => operators(),
        "problems" => problems(),
        "all" => [algebra(), operators(), problems()].concat(),
        _ => return None,
    })
}

/// Prints the table; returns true when every check passes.
pub fn print_table(checks: &[Check], started: Instant) -> bool {
    println!("{:<10} {:<34} {:>11} {:>9}  result", "suite", "check", "value", "tol");
    for c in checks {
        println!(
            "{:<10} {:<34} {:>11.3e} {:>9.1e}  {}",
            c.suite,
            c.name,
            c.value,
            c.tol,
            if c.passed() { "pass" } else { "FAIL" }
        );
    }
    let failed = checks.iter().filter(|c| !c.passed()).count();
    println!(
        "{} checks, {} failed, {:.2} s",
        checks.len(),
        failed,
        started.elapsed().as_secs_f64()
    );
    failed == 0
}
