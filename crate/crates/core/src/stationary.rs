//! Stationary inclusions `0 ∈ ∂φ(x) + Bx + Λx + f` solved by minimizing the
//! self-dual functional
//!
//! `I(x) = φ(x) + ⟨f, x⟩ + φ*(−Λx − Bx − f) [+ ℓ(b₁x, b₂x)]`,
//!
//! whose infimum is zero. The value at the returned point certifies the
//! solution.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::convex::ConvexFunction;
use crate::error::{check_dim, Error, Result};
use crate::lagrangian::{BoundaryLagrangian, Lagrangian};
use crate::operators::{
    boundary_skew_defect, conservativity_defect, pair_up, skew_defect, BoundaryPair, ConservativeMap, LinearMap,
};
use crate::optim::{lbfgs, Geometry, LbfgsOptions, LbfgsStatus};
use crate::space::{seeded_rng, Element, Space};

/// Tolerance on the structural defects checked at construction.
pub const STRUCTURE_TOL: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolveStatus {
    Converged,
    MaxIter,
    Failed,
}

impl SolveStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SolveStatus::Converged => "converged",
            SolveStatus::MaxIter => "max_iter",
            SolveStatus::Failed => "failed",
        }
    }
}

#[derive(Clone, Debug)]
pub struct SolveReport {
    pub x: Element,
    pub certificate: f64,
    pub inclusion_residual: f64,
    pub iterations: usize,
    /// `(I, ‖∇I‖)` per accepted step; for Picard, `(I, ‖Δx‖)`.
    pub history: Vec<(f64, f64)>,
    pub status: SolveStatus,
    /// `1 + |φ(x)| + |φ*(q)|` at the returned point.
    pub scale: f64,
    /// `C` with `inclusion_residual ≤ C·sqrt(certificate)` near the solution;
    /// NaN when not estimated.
    pub residual_constant: f64,
    /// Smoothing parameter used for a nonsmooth `φ`, if any.
    pub smoothing: Option<f64>,
    pub warnings: Vec<String>,
}

impl SolveReport {
    /// Certificate within `1e-6·scale`.
    pub fn certified(&self) -> bool {
        self.certificate <= 1e-6 * self.scale
    }
}

/// Structural defects measured at construction.
#[derive(Clone, Copy, Debug, Default)]
pub struct Defects {
    pub skew: f64,
    pub boundary: f64,
    pub conservativity: f64,
}

#[derive(Clone, Debug)]
pub struct StationaryProblem {
    space: Space,
    phi: ConvexFunction,
    b: LinearMap,
    lam: ConservativeMap,
    f: Element,
    boundary: Option<(BoundaryPair, BoundaryLagrangian)>,
    lagrangian: Lagrangian,
    defects: Defects,
}

#[derive(Clone, Debug)]
pub struct MinimizeOptions {
    pub max_iter: usize,
    /// Absolute gradient tolerance in the dual norm; defaults to
    /// `1e-10·scale` at the initial point.
    pub gtol: Option<f64>,
    pub initial: Option<Element>,
    /// Moreau smoothing parameter for nonsmooth `φ`.
    pub smoothing: f64,
    pub estimate_residual_constant: bool,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        MinimizeOptions {
            max_iter: 2000,
            gtol: None,
            initial: None,
            smoothing: 1e-4,
            estimate_residual_constant: true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PicardOptions {
    pub damping: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub initial: Option<Element>,
}

impl Default for PicardOptions {
    fn default() -> Self {
        PicardOptions {
            damping: 1.0,
            max_iter: 500,
            tol: 1e-13,
            initial: None,
        }
    }
}

fn sample_set(space: &Space, seed: u64) -> Vec<Element> {
    let mut rng = seeded_rng(seed);
    space.random_elements(&mut rng, 24, 2.0)
}

impl StationaryProblem {
    /// Checks skewness of `B` and conservativity of `Λ` on random samples.
    pub fn new(space: &Space, phi: ConvexFunction, b: LinearMap, lam: ConservativeMap, f: Element) -> Result<Self> {
        let n = space.dim();
        check_dim(n, phi.space().dim())?;
        check_dim(n, b.dim_in())?;
        check_dim(n, b.dim_out())?;
        check_dim(n, lam.space().dim())?;
        space.check(&f)?;
        let samples = sample_set(space, 0x5ca1e);
        let skew = skew_defect(space, &b, &pair_up(&samples))?;
        if skew > STRUCTURE_TOL {
            return Err(Error::Structure {
                what: "skew-adjointness of B".into(),
                defect: skew,
                tol: STRUCTURE_TOL,
            });
        }
        let conservativity = conservativity_defect(space, &lam, &samples)?;
        if conservativity > STRUCTURE_TOL {
            return Err(Error::Structure {
                what: "conservativity of Λ".into(),
                defect: conservativity,
                tol: STRUCTURE_TOL,
            });
        }
        let lagrangian = Lagrangian::shift(&Lagrangian::basic(phi.tilt(&f)?), &b)?;
        Ok(StationaryProblem {
            space: space.clone(),
            phi,
            b,
            lam,
            f,
            boundary: None,
            lagrangian,
            defects: Defects {
                skew,
                boundary: 0.0,
                conservativity,
            },
        })
    }

    /// Boundary-augmented variant: `B` need only be skew modulo `(b₁, b₂)`.
    pub fn with_boundary(
        space: &Space,
        phi: ConvexFunction,
        b: LinearMap,
        lam: ConservativeMap,
        f: Element,
        bp: BoundaryPair,
        ell: BoundaryLagrangian,
    ) -> Result<Self> {
        let samples = sample_set(space, 0x5ca1e);
        let boundary = boundary_skew_defect(space, &b, &bp, &samples)?;
        if boundary > STRUCTURE_TOL {
            return Err(Error::Structure {
                what: "boundary skew identity".into(),
                defect: boundary,
                tol: STRUCTURE_TOL,
            });
        }
        let conservativity = conservativity_defect(space, &lam, &samples)?;
        if conservativity > STRUCTURE_TOL {
            return Err(Error::Structure {
                what: "conservativity of Λ".into(),
                defect: conservativity,
                tol: STRUCTURE_TOL,
            });
        }
        let lagrangian = Lagrangian::augment_boundary(&Lagrangian::basic(phi.tilt(&f)?), &b, &bp, &ell)?;
        Ok(StationaryProblem {
            space: space.clone(),
            phi,
            b,
            lam,
            f,
            boundary: Some((bp, ell)),
            lagrangian,
            defects: Defects {
                skew: f64::NAN,
                boundary,
                conservativity,
            },
        })
    }

    pub fn space(&self) -> &Space {
        &self.space
    }

    pub fn phi(&self) -> &ConvexFunction {
        &self.phi
    }

    pub fn b(&self) -> &LinearMap {
        &self.b
    }

    pub fn lam(&self) -> &ConservativeMap {
        &self.lam
    }

    pub fn f(&self) -> &Element {
        &self.f
    }

    pub fn defects(&self) -> Defects {
        self.defects
    }

    /// The Lagrangian `L` with `I(x) = L(x, Λx)`.
    pub fn lagrangian(&self) -> &Lagrangian {
        &self.lagrangian
    }

    /// Argument of the conjugate: `−Λx − Bx − f`.
    pub fn dual_argument(&self, x: &Element) -> Element {
        -(self.lam.apply(x) + self.b.apply(x) + &self.f)
    }

    pub fn certificate(&self, x: &Element) -> Result<f64> {
        self.space.check(x)?;
        self.lagrangian.eval(x, &self.lam.apply(x))
    }

    /// `I(x)` and its Euclidean gradient.
    pub fn certificate_grad(&self, x: &Element) -> Result<(f64, Element)> {
        self.space.check(x)?;
        certificate_grad_with(&self.lagrangian, &self.lam, x)
    }

    pub fn scale(&self, x: &Element) -> Result<f64> {
        let q = self.dual_argument(x);
        Ok(1.0 + self.phi.eval(x)?.abs() + self.phi.conjugate(&q)?.abs())
    }

    /// `‖x − prox_φ(x − Λx − Bx − f)‖ / (1 + ‖x‖)`.
    pub fn inclusion_residual(&self, x: &Element) -> Result<f64> {
        self.space.check(x)?;
        let z = self.phi.prox(1.0, &(x + self.dual_argument(x)))?;
        Ok(self.space.norm(&(x - z)) / (1.0 + self.space.norm(x)))
    }

    /// `M(x, y) = ⟨y, −Λx⟩ + ⟨x, By⟩ − ℓ(b₁y, b₂y) + ψ(x) − ψ(y)` with
    /// `ψ = φ + ⟨f, ·⟩`.
    pub fn minmax(&self, x: &Element, y: &Element) -> Result<f64> {
        self.space.check(x)?;
        self.space.check(y)?;
        let s = &self.space;
        let psi = |z: &Element| -> Result<f64> { Ok(self.phi.eval(z)? + s.dot(&self.f, z)) };
        let ell = match &self.boundary {
            Some((bp, ell)) => ell.eval(&bp.b1.apply(y), &bp.b2.apply(y))?,
            None => 0.0,
        };
        Ok(-s.dot(y, &self.lam.apply(x)) + s.dot(x, &self.b.apply(y)) - ell + psi(x)? - psi(y)?)
    }

    /// Supremum of `M(x, ·)` over `count` random probes plus the structured
    /// probes `y ∈ {0, x, ∇ψ*(−Λx − Bx)}`. A lower bound on the true sup.
    pub fn minmax_sup(&self, x: &Element, count: usize, seed: u64) -> Result<f64> {
        let mut rng = seeded_rng(seed);
        let radius = 2.0 * (1.0 + self.space.norm(x));
        let mut probes = vec![self.space.zeros(), x.clone()];
        if let Ok(cp) = self.phi.conjugate_point(&self.dual_argument(x)) {
            probes.push(cp.argmax);
        }
        probes.extend(self.space.random_elements(&mut rng, count, radius));
        let mut sup = f64::NEG_INFINITY;
        for y in &probes {
            sup = sup.max(self.minmax(x, y)?);
        }
        Ok(sup)
    }

    /// Ray test of coercivity: `φ(t·d)/t` should grow along random rays.
    pub fn coercivity_warnings(&self) -> Vec<String> {
        let mut rng = seeded_rng(0xc0e);
        let mut out = Vec::new();
        for d in self.space.random_elements(&mut rng, 8, 1.0) {
            let n = self.space.norm(&d);
            if n == 0.0 {
                continue;
            }
            let d = d / n;
            let r1 = self.phi.value(&(&d * 1e2)) / 1e2;
            let r2 = self.phi.value(&(&d * 1e3)) / 1e3;
            if !(r2 > r1) {
                out.push("φ does not look coercive along a sampled ray".to_string());
                break;
            }
        }
        out
    }

    /// Constant Euclidean curvature model `Q + (GM)ᵀQ⁻¹(GM)` of `I`.
    fn curvature_model(&self, phi: &ConvexFunction) -> Option<DMatrix<f64>> {
        let q = phi.quadratic_model()?;
        let chol = Cholesky::new(q.clone())?;
        if self.b.is_zero() {
            return Some(q);
        }
        let gm = self.space.gram_apply_matrix(&self.b.matrix());
        let inner = chol.solve(&gm);
        let h = q + gm.transpose() * inner;
        Some((&h + h.transpose()) * 0.5)
    }

    /// Quasi-Newton minimization of `I`.
    pub fn solve_minimize(&self, opts: &MinimizeOptions) -> Result<SolveReport> {
        let x0 = match &opts.initial {
            Some(x) => {
                self.space.check(x)?;
                x.clone()
            }
            None => self.space.zeros(),
        };
        let mut warnings = self.coercivity_warnings();
        let (lagrangian, smoothing) = if self.phi.is_smooth() {
            (self.lagrangian.clone(), None)
        } else {
            let smooth = self.phi.envelope(opts.smoothing)?;
            let l = Lagrangian::basic(smooth.tilt(&self.f)?);
            let l = match &self.boundary {
                Some((bp, ell)) => Lagrangian::augment_boundary(&l, &self.b, bp, ell)?,
                None => Lagrangian::shift(&l, &self.b)?,
            };
            (l, Some(opts.smoothing))
        };
        let model = self
            .curvature_model(&self.phi)
            .or_else(|| Some(self.space.gram_matrix()))
            .and_then(Cholesky::new);
        let precondition = model.as_ref().map(|c| move |g: &Element| c.solve(g));
        let space = self.space.clone();
        let norm = move |g: &Element| space.dual_norm(g);
        let geom = Geometry {
            precondition: precondition.as_ref().map(|p| p as &dyn Fn(&Element) -> Element),
            norm: &norm,
        };
        let gtol = match opts.gtol {
            Some(g) => g,
            None => 1e-10 * self.scale(&x0).unwrap_or(1.0),
        };
        let lbfgs_opts = LbfgsOptions {
            max_iter: opts.max_iter,
            gtol,
            memory: 20,
            ..Default::default()
        };
        let lam = &self.lam;
        let mut obj = |x: &Element| certificate_grad_with(&lagrangian, lam, x);
        let out = lbfgs(&mut obj, x0, &lbfgs_opts, &geom)?;
        if out.resets > 0 {
            warnings.push(format!("{} non-descent directions reset", out.resets));
        }
        let x = out.x;
        let certificate = self.certificate(&x)?;
        let scale = self.scale(&x)?;
        let status = match out.status {
            LbfgsStatus::Converged | LbfgsStatus::TargetReached => SolveStatus::Converged,
            LbfgsStatus::MaxIter => SolveStatus::MaxIter,
            // A stalled line search at a certified point is a rounding-level stop.
            LbfgsStatus::LineSearchFailed if certificate <= 1e-6 * scale => SolveStatus::Converged,
            LbfgsStatus::LineSearchFailed => SolveStatus::Failed,
        };
        let residual_constant = if opts.estimate_residual_constant && status == SolveStatus::Converged {
            self.residual_constant(&x).unwrap_or(f64::NAN)
        } else {
            f64::NAN
        };
        Ok(SolveReport {
            inclusion_residual: self.inclusion_residual(&x)?,
            x,
            certificate,
            iterations: out.iterations,
            history: out.history,
            status,
            scale,
            residual_constant,
            smoothing,
            warnings,
        })
    }

    /// Damped fixed-point iteration `x⁺ = (1−θ)x + θ∇ψ*(−Λx − Bx)`.
    pub fn solve_picard(&self, opts: &PicardOptions) -> Result<SolveReport> {
        if !(opts.damping > 0.0 && opts.damping <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "damping must lie in (0, 1], got {}",
                opts.damping
            )));
        }
        if self.boundary.is_some() {
            return Err(Error::InvalidArgument(
                "Picard iteration does not handle boundary terms".into(),
            ));
        }
        let mut x = match &opts.initial {
            Some(x) => {
                self.space.check(x)?;
                x.clone()
            }
            None => self.space.zeros(),
        };
        let theta = opts.damping;
        let mut history = Vec::new();
        let mut steps: Vec<f64> = Vec::new();
        let mut status = SolveStatus::MaxIter;
        let mut iterations = 0;
        for it in 0..opts.max_iter {
            let cp = self.phi.conjugate_point(&self.dual_argument(&x))?;
            let next = &x * (1.0 - theta) + cp.argmax * theta;
            let step = self.space.norm(&(&next - &x)) / (1.0 + self.space.norm(&next));
            x = next;
            iterations = it + 1;
            if !step.is_finite() || !x.iter().all(|v| v.is_finite()) {
                status = SolveStatus::Failed;
                break;
            }
            history.push((f64::NAN, step));
            steps.push(step);
            if step <= opts.tol {
                status = SolveStatus::Converged;
                break;
            }
            let k = steps.len();
            if k > 10 && steps[k - 10..].windows(2).all(|w| w[1] > w[0]) && step > steps[k - 11] {
                status = SolveStatus::Failed;
                break;
            }
        }
        let finite = x.iter().all(|v| v.is_finite());
        let certificate = if finite { self.certificate(&x)? } else { f64::INFINITY };
        if let Some(last) = history.last_mut() {
            last.0 = certificate;
        }
        let scale = if finite { self.scale(&x)? } else { f64::INFINITY };
        let inclusion_residual = if finite {
            self.inclusion_residual(&x)?
        } else {
            f64::INFINITY
        };
        Ok(SolveReport {
            x,
            certificate,
            inclusion_residual,
            iterations,
            history,
            status,
            scale,
            residual_constant: f64::NAN,
            smoothing: None,
            warnings: Vec::new(),
        })
    }

    /// `C = (2 + ‖D(Λ + B)‖)·sqrt(2/μ)` with `μ` the smallest Gram-relative
    /// eigenvalue of the Hessian of `I` at `x`, estimated by differences.
    pub fn residual_constant(&self, x: &Element) -> Result<f64> {
        let n = self.space.dim();
        if n > 512 {
            return Ok(f64::NAN);
        }
        let eps = 1e-5 * (1.0 + x.amax());
        let mut h = DMatrix::zeros(n, n);
        let mut y = x.clone();
        for j in 0..n {
            y[j] = x[j] + eps;
            let gp = self.certificate_grad(&y)?.1;
            y[j] = x[j] - eps;
            let gm = self.certificate_grad(&y)?.1;
            y[j] = x[j];
            h.set_column(j, &((gp - gm) / (2.0 * eps)));
        }
        let h = (&h + h.transpose()) * 0.5;
        let mu = generalized_min_eig(&self.space, &h);
        if !(mu > 0.0) {
            return Ok(f64::NAN);
        }
        // Power iteration for the Gram operator norm of D(Λ + B) at x.
        let mut v = DVector::from_element(n, 1.0);
        v /= self.space.norm(&v);
        let mut lip = 0.0;
        for _ in 0..30 {
            let jv = self.lam.jvp_fd(x, &v, 1e-5 * (1.0 + x.norm())) + self.b.apply(&v);
            let jtjv = self.lam.vjp(x, &jv) + self.b.adjoint_apply(&jv);
            let nrm = self.space.norm(&jtjv);
            if nrm == 0.0 {
                break;
            }
            lip = nrm.sqrt();
            v = jtjv / nrm;
        }
        Ok((2.0 + lip) * (2.0 / mu).sqrt())
    }
}

/// `I(x) = L(x, Λx)` and `∇I = ∂ₓL + DΛᵀ∂ₚL` (Euclidean).
pub(crate) fn certificate_grad_with(l: &Lagrangian, lam: &ConservativeMap, x: &Element) -> Result<(f64, Element)> {
    let s = l.space();
    let (v, gx, gp) = l.eval_grad_unchecked(x, &lam.apply(x))?;
    if lam.is_zero() {
        return Ok((v, gx));
    }
    let back = s.gram_apply(&lam.vjp(x, &s.gram_solve(&gp)));
    Ok((v, gx + back))
}

/// Smallest eigenvalue of `h` relative to the Gram matrix.
fn generalized_min_eig(space: &Space, h: &DMatrix<f64>) -> f64 {
    let n = h.nrows();
    let m = match space.gram_diagonal() {
        Some(w) => {
            let r = w.map(|v| 1.0 / v.sqrt());
            DMatrix::from_fn(n, n, |i, j| h[(i, j)] * r[i] * r[j])
        }
        None => {
            let chol = Cholesky::new(space.gram_matrix()).expect("Gram is SPD");
            let l = chol.l();
            let li = l.clone().try_inverse().expect("triangular factor invertible");
            &li * h * li.transpose()
        }
    };
    m.symmetric_eigenvalues().min()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};

    fn gradient_case() -> StationaryProblem {
        let s = Space::euclidean(2);
        StationaryProblem::new(
            &s,
            ConvexFunction::half_norm_sq(&s),
            LinearMap::zero(&s, &s),
            ConservativeMap::zero(&s),
            dvector![1.0, 0.0],
        )
        .unwrap()
    }

    fn skew_case() -> StationaryProblem {
        let s = Space::with_diagonal_gram(dvector![1.0, 2.0, 0.5]).unwrap();
        let k = dmatrix![3.0, -1.0, 0.0; -1.0, 2.0, -0.5; 0.0, -0.5, 1.0];
        let phi = ConvexFunction::quadratic(&s, k, s.zeros(), 0.0).unwrap();
        // Euclidean-antisymmetric A gives a Gram-skew map G⁻¹A.
        let a = dmatrix![0.0, 1.0, -2.0; -1.0, 0.0, 0.5; 2.0, -0.5, 0.0];
        let m = s.gram_solve_matrix(&a);
        let b = LinearMap::from_matrix(&s, &s, m).unwrap();
        StationaryProblem::new(&s, phi, b, ConservativeMap::zero(&s), dvector![0.3, -1.0, 0.7]).unwrap()
    }

    #[test]
    fn certificate_examples() {
        let p = gradient_case();
        assert_eq!(p.certificate(&dvector![-1.0, 0.0]).unwrap(), 0.0);
        assert_eq!(p.certificate(&dvector![0.0, 0.0]).unwrap(), 0.5);
    }

    #[test]
    fn minimize_gradient_case() {
        let rep = gradient_case().solve_minimize(&MinimizeOptions::default()).unwrap();
        assert_eq!(rep.status, SolveStatus::Converged);
        assert!((rep.x - dvector![-1.0, 0.0]).amax() < 1e-10);
        assert!(rep.certificate <= 1e-12);
    }

    #[test]
    fn skew_case_matches_linear_solve() {
        let p = skew_case();
        // Oracle: (K + G M) x = −G f, in Euclidean coordinates.
        let s = p.space();
        let k = p.phi().hessian_e(&s.zeros()).unwrap();
        let lhs = k + s.gram_apply_matrix(&p.b().matrix());
        let x_ref = lhs.lu().solve(&-s.gram_apply(p.f())).unwrap();
        let rep = p.solve_minimize(&MinimizeOptions::default()).unwrap();
        assert_eq!(rep.status, SolveStatus::Converged);
        assert!((&rep.x - &x_ref).norm() / x_ref.norm() < 1e-9);
        assert!(rep.inclusion_residual < 1e-10);
        assert!(rep.residual_constant.is_finite());
        let pic = p
            .solve_picard(&PicardOptions {
                damping: 0.5,
                max_iter: 2000,
                ..Default::default()
            })
            .unwrap();
        assert!((&pic.x - &x_ref).norm() / x_ref.norm() < 1e-9, "{:?}", pic.status);
    }

    #[test]
    fn rejects_non_skew_operator() {
        let s = Space::euclidean(2);
        let id = LinearMap::from_matrix(&s, &s, DMatrix::identity(2, 2)).unwrap();
        let r = StationaryProblem::new(
            &s,
            ConvexFunction::half_norm_sq(&s),
            id,
            ConservativeMap::zero(&s),
            s.zeros(),
        );
        assert!(matches!(r, Err(Error::Structure { .. })));
    }

    #[test]
    fn minmax_diagonal_and_sup() {
        let p = skew_case();
        let mut rng = seeded_rng(1);
        for x in p.space().random_elements(&mut rng, 20, 3.0) {
            assert!(p.minmax(&x, &x).unwrap() <= 1e-12);
            let sup = p.minmax_sup(&x, 50, 2).unwrap();
            let cert = p.certificate(&x).unwrap();
            assert!((sup - cert).abs() <= 1e-9 * (1.0 + cert));
        }
    }

    #[test]
    fn residual_far_from_solution_is_order_one() {
        let p = gradient_case();
        let r = p.inclusion_residual(&dvector![3.0, -2.0]).unwrap();
        assert!(r > 0.1 && r < 10.0);
    }
}
