//! Anti-selfdual Lagrangians `L(x, p)` on `X × X*`, their Hamiltonians and
//! self-dual boundary Lagrangians.
//!
//! Gradients returned by [`Lagrangian::eval_grad`] are Euclidean in both
//! slots; values computed through an inner optimization carry the
//! envelope-theorem gradient at the inner optimum.

use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;

use crate::convex::ConvexFunction;
use crate::error::{check_dim, Error, Result};
use crate::operators::{boundary_skew_defect, BoundaryPair, LinearMap};
use crate::optim::{lbfgs, Geometry, LbfgsOptions, LbfgsOutcome, LbfgsStatus};
use crate::space::{seeded_rng, Element, Space};

/// Value plus Euclidean gradients in `x` and `p`.
pub type ValueGrad = (f64, Element, Element);

type CustomFn = Arc<dyn Fn(&Element, &Element) -> ValueGrad + Send + Sync>;

#[derive(Clone)]
#[allow(clippy::large_enum_variant)]
enum Kind {
    Basic(ConvexFunction),
    Oplus {
        l: Lagrangian,
        m: Lagrangian,
        /// `basic(ψ₁ + ψ₂)` when both operands are basic.
        merged: Option<Lagrangian>,
    },
    Star(Lagrangian, Lagrangian),
    Shift(Lagrangian, LinearMap),
    Regularized {
        inner: Lagrangian,
        alpha: f64,
        beta: f64,
    },
    BoundaryAug {
        inner: Lagrangian,
        b: LinearMap,
        bp: BoundaryPair,
        ell: BoundaryLagrangian,
    },
    Custom(CustomFn),
}

/// A Lagrangian on `X × X*` built from the ASD permanence operations.
#[derive(Clone)]
pub struct Lagrangian {
    space: Space,
    kind: Arc<Kind>,
}

impl fmt::Debug for Lagrangian {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Lagrangian({}, dim {})", self.kind_name(), self.space.dim())
    }
}

/// Regularization presets for [`Lagrangian::lambda_regularize`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RegPreset {
    /// `‖x − z‖²/(2λ) + λ‖p‖²/2`.
    Proximal(f64),
    /// `λ²‖x − z‖²/2 + ‖p‖²/(2λ²)`.
    Scaled(f64),
}

impl RegPreset {
    pub fn alpha_beta(self) -> (f64, f64) {
        match self {
            RegPreset::Proximal(l) => (l, l),
            RegPreset::Scaled(l) => (1.0 / (l * l), 1.0 / (l * l)),
        }
    }
}

/// Result of a brute-force self-duality check.
#[derive(Clone, Debug)]
pub struct AsdReport {
    pub defect: f64,
    /// Some supremum was attained outside the search box; enlarge it.
    pub boundary_hit: bool,
}

const INNER_GTOL: f64 = 1e-11;

fn inner_minimize(
    obj: &mut dyn FnMut(&Element) -> Result<(f64, Element)>,
    x0: Element,
    what: &str,
) -> Result<LbfgsOutcome> {
    let mut wrapped = |x: &Element| obj(x);
    let opts = LbfgsOptions {
        max_iter: 800,
        gtol: INNER_GTOL,
        ..Default::default()
    };
    let out = lbfgs(&mut wrapped, x0, &opts, &Geometry::default())?;
    let ok = out.status == LbfgsStatus::Converged || out.gnorm <= 1e-7 * (1.0 + out.f.abs());
    if !ok {
        return Err(Error::NotConverged {
            what: what.into(),
            gap: out.gnorm,
        });
    }
    Ok(out)
}

impl Lagrangian {
    fn wrap(space: &Space, kind: Kind) -> Self {
        Lagrangian {
            space: space.clone(),
            kind: Arc::new(kind),
        }
    }

    /// `ψ(x) + ψ*(−p)`.
    pub fn basic(psi: ConvexFunction) -> Self {
        let space = psi.space().clone();
        Self::wrap(&space, Kind::Basic(psi))
    }

    /// `(L ⊕ M)(x, p) = inf_r L(x, r) + M(x, p − r)`.
    pub fn oplus(l: &Lagrangian, m: &Lagrangian) -> Result<Self> {
        check_dim(l.space.dim(), m.space.dim())?;
        let merged = match (&*l.kind, &*m.kind) {
            (Kind::Basic(a), Kind::Basic(b)) => {
                let s = ConvexFunction::sum(&l.space, vec![a.clone(), b.clone()])?;
                Some(Lagrangian::basic(s))
            }
            _ => None,
        };
        Ok(Self::wrap(
            &l.space,
            Kind::Oplus {
                l: l.clone(),
                m: m.clone(),
                merged,
            },
        ))
    }

    /// `(L ⋆ M)(x, p) = inf_z L(z, p) + M(x − z, p)`.
    pub fn star(l: &Lagrangian, m: &Lagrangian) -> Result<Self> {
        check_dim(l.space.dim(), m.space.dim())?;
        Ok(Self::wrap(&l.space, Kind::Star(l.clone(), m.clone())))
    }

    /// `L_B(x, p) = L(x, Bx + p)`.
    pub fn shift(l: &Lagrangian, b: &LinearMap) -> Result<Self> {
        check_dim(l.space.dim(), b.dim_in())?;
        check_dim(l.space.dim(), b.dim_out())?;
        Ok(Self::wrap(&l.space, Kind::Shift(l.clone(), b.clone())))
    }

    /// `inf_z L(z, p) + ‖x − z‖²/(2α) + β‖p‖²/2`. Anti-selfdual when
    /// `α = β`, which both presets satisfy.
    pub fn lambda_regularize(l: &Lagrangian, alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha > 0.0) || !(beta > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "regularization needs α, β > 0, got α={alpha}, β={beta}"
            )));
        }
        if let Kind::Shift(inner, b) = &*l.kind {
            if b.is_zero() {
                return Self::lambda_regularize(inner, alpha, beta);
            }
        }
        Ok(Self::wrap(
            &l.space,
            Kind::Regularized {
                inner: l.clone(),
                alpha,
                beta,
            },
        ))
    }

    pub fn regularize_preset(l: &Lagrangian, preset: RegPreset) -> Result<Self> {
        let (a, b) = preset.alpha_beta();
        Self::lambda_regularize(l, a, b)
    }

    /// `L(x, Bx + p) + ℓ(b₁x, b₂x)`, refused unless `B` is skew modulo the
    /// boundary pair to 1e-8 on random samples.
    pub fn augment_boundary(
        l: &Lagrangian,
        b: &LinearMap,
        bp: &BoundaryPair,
        ell: &BoundaryLagrangian,
    ) -> Result<Self> {
        let mut rng = seeded_rng(0xb0);
        let samples = l.space.random_elements(&mut rng, 32, 3.0);
        let defect = boundary_skew_defect(&l.space, b, bp, &samples)?;
        if defect > 1e-8 {
            return Err(Error::Structure {
                what: "boundary skew identity".into(),
                defect,
                tol: 1e-8,
            });
        }
        Self::augment_boundary_unchecked(l, b, bp, ell)
    }

    /// As [`Lagrangian::augment_boundary`] without the structural check, for
    /// operators that are only dissipative modulo the boundary.
    pub fn augment_boundary_unchecked(
        l: &Lagrangian,
        b: &LinearMap,
        bp: &BoundaryPair,
        ell: &BoundaryLagrangian,
    ) -> Result<Self> {
        let n = l.space.dim();
        check_dim(n, b.dim_in())?;
        check_dim(n, b.dim_out())?;
        check_dim(n, bp.b1.dim_in())?;
        check_dim(bp.h1.dim(), ell.h1.dim())?;
        check_dim(bp.h2.dim(), ell.h2.dim())?;
        Ok(Self::wrap(
            &l.space,
            Kind::BoundaryAug {
                inner: l.clone(),
                b: b.clone(),
                bp: bp.clone(),
                ell: ell.clone(),
            },
        ))
    }

    /// Arbitrary Lagrangian given by value and Euclidean gradients.
    pub fn custom(space: &Space, f: impl Fn(&Element, &Element) -> ValueGrad + Send + Sync + 'static) -> Self {
        Self::wrap(space, Kind::Custom(Arc::new(f)))
    }

    pub fn space(&self) -> &Space {
        &self.space
    }

    pub fn kind_name(&self) -> &'static str {
        match &*self.kind {
            Kind::Basic(_) => "basic",
            Kind::Oplus { .. } => "oplus",
            Kind::Star(..) => "star",
            Kind::Shift(..) => "shift",
            Kind::Regularized { .. } => "lambda_reg",
            Kind::BoundaryAug { .. } => "boundary_aug",
            Kind::Custom(_) => "custom",
        }
    }

    /// `ψ` when this is a basic Lagrangian.
    pub fn basic_function(&self) -> Option<&ConvexFunction> {
        match &*self.kind {
            Kind::Basic(psi) => Some(psi),
            _ => None,
        }
    }

    pub fn eval(&self, x: &Element, p: &Element) -> Result<f64> {
        self.space.check(x)?;
        self.space.check(p)?;
        self.value(x, p)
    }

    fn value(&self, x: &Element, p: &Element) -> Result<f64> {
        match &*self.kind {
            Kind::Basic(psi) => Ok(psi.value(x) + psi.conjugate_unchecked(&-p)?.value),
            Kind::Shift(l, b) => l.value(x, &(b.apply(x) + p)),
            Kind::Oplus { merged: Some(m), .. } => m.value(x, p),
            Kind::Regularized { inner, alpha, beta } => {
                if let Kind::Basic(psi) = &*inner.kind {
                    let z = psi.prox_unchecked(*alpha, x)?;
                    let cp = psi.conjugate_unchecked(&-p)?;
                    return Ok(psi.value(&z)
                        + self.space.norm_sq(&(x - &z)) / (2.0 * alpha)
                        + cp.value
                        + 0.5 * beta * self.space.norm_sq(p));
                }
                Ok(self.eval_grad_unchecked(x, p)?.0)
            }
            Kind::BoundaryAug { inner, b, bp, ell } => {
                Ok(inner.value(x, &(b.apply(x) + p))? + ell.value(&bp.b1.apply(x), &bp.b2.apply(x)))
            }
            Kind::Custom(f) => Ok(f(x, p).0),
            _ => Ok(self.eval_grad_unchecked(x, p)?.0),
        }
    }

    /// Value and Euclidean gradients `(∂ₓL, ∂ₚL)`.
    pub fn eval_grad(&self, x: &Element, p: &Element) -> Result<ValueGrad> {
        self.space.check(x)?;
        self.space.check(p)?;
        self.eval_grad_unchecked(x, p)
    }

    pub(crate) fn eval_grad_unchecked(&self, x: &Element, p: &Element) -> Result<ValueGrad> {
        let s = &self.space;
        match &*self.kind {
            Kind::Basic(psi) => {
                let cp = psi.conjugate_unchecked(&-p)?;
                let gx = psi.grad_e(x).ok_or_else(|| {
                    Error::InvalidArgument(format!(
                        "{} is not differentiable here; regularize first",
                        psi.kind_name()
                    ))
                })?;
                Ok((psi.value(x) + cp.value, gx, -s.gram_apply(&cp.argmax)))
            }
            Kind::Shift(l, b) => {
                let (v, gx, gp) = l.eval_grad_unchecked(x, &(b.apply(x) + p))?;
                let gx = gx + s.gram_apply(&b.adjoint_apply(&s.gram_solve(&gp)));
                Ok((v, gx, gp))
            }
            Kind::Oplus { merged: Some(m), .. } => m.eval_grad_unchecked(x, p),
            Kind::Oplus { l, m, merged: None } => {
                let mut obj = |r: &Element| -> Result<(f64, Element)> {
                    let (vl, _, gl) = l.eval_grad_unchecked(x, r)?;
                    let (vm, _, gm) = m.eval_grad_unchecked(x, &(p - r))?;
                    Ok((vl + vm, gl - gm))
                };
                let out = inner_minimize(&mut obj, p * 0.5, "inner infimum of L ⊕ M")?;
                let r = out.x;
                let (vl, gxl, _) = l.eval_grad_unchecked(x, &r)?;
                let (vm, gxm, gpm) = m.eval_grad_unchecked(x, &(p - &r))?;
                Ok((vl + vm, gxl + gxm, gpm))
            }
            Kind::Star(l, m) => {
                let mut obj = |z: &Element| -> Result<(f64, Element)> {
                    let (vl, gl, _) = l.eval_grad_unchecked(z, p)?;
                    let (vm, gm, _) = m.eval_grad_unchecked(&(x - z), p)?;
                    Ok((vl + vm, gl - gm))
                };
                let out = inner_minimize(&mut obj, x * 0.5, "inner infimum of L ⋆ M")?;
                let z = out.x;
                let (vl, _, gpl) = l.eval_grad_unchecked(&z, p)?;
                let (vm, gxm, gpm) = m.eval_grad_unchecked(&(x - &z), p)?;
                Ok((vl + vm, gxm, gpl + gpm))
            }
            Kind::Regularized { inner, alpha, beta } => {
                let z = self.j_unchecked(x, p)?;
                let (vl, _, gpl) = inner.eval_grad_unchecked(&z, p)?;
                let d = x - &z;
                let v = vl + s.norm_sq(&d) / (2.0 * alpha) + 0.5 * beta * s.norm_sq(p);
                Ok((v, s.gram_apply(&d) / *alpha, gpl + s.gram_apply(p) * *beta))
            }
            Kind::BoundaryAug { inner, b, bp, ell } => {
                let (v, gx, gp) = inner.eval_grad_unchecked(x, &(b.apply(x) + p))?;
                let mut gx = gx + s.gram_apply(&b.adjoint_apply(&s.gram_solve(&gp)));
                let (r, t) = (bp.b1.apply(x), bp.b2.apply(x));
                let (gr, gt) = ell.grad_e(&r, &t)?;
                gx += s.gram_apply(&bp.b1.adjoint_apply(&bp.h1.gram_solve(&gr)));
                gx += s.gram_apply(&bp.b2.adjoint_apply(&bp.h2.gram_solve(&gt)));
                Ok((v + ell.value(&r, &t), gx, gp))
            }
            Kind::Custom(f) => Ok(f(x, p)),
        }
    }

    /// Proximal point `J(x, p) = argmin_z L(z, p) + ‖x − z‖²/(2α)` of a
    /// regularized Lagrangian.
    pub fn j_lambda(&self, x: &Element, p: &Element) -> Result<Element> {
        self.space.check(x)?;
        self.space.check(p)?;
        if !matches!(&*self.kind, Kind::Regularized { .. }) {
            return Err(Error::InvalidArgument(
                "J is defined for regularized Lagrangians only".into(),
            ));
        }
        self.j_unchecked(x, p)
    }

    fn j_unchecked(&self, x: &Element, p: &Element) -> Result<Element> {
        let Kind::Regularized { inner, alpha, .. } = &*self.kind else {
            unreachable!("checked by caller")
        };
        if let Kind::Basic(psi) = &*inner.kind {
            return psi.prox_unchecked(*alpha, x);
        }
        let s = &self.space;
        let mut obj = |z: &Element| -> Result<(f64, Element)> {
            let (v, gz, _) = inner.eval_grad_unchecked(z, p)?;
            let d = z - x;
            Ok((v + s.norm_sq(&d) / (2.0 * alpha), gz + s.gram_apply(&d) / *alpha))
        };
        Ok(inner_minimize(&mut obj, x.clone(), "proximal point J")?.x)
    }

    /// `H_L(x, y) = sup_p ⟨p, y⟩ − L(x, p)`, by closed-form rules where they
    /// exist and numerically otherwise. `+∞` when the sup diverges.
    pub fn hamiltonian(&self, x: &Element, y: &Element) -> Result<f64> {
        self.space.check(x)?;
        self.space.check(y)?;
        self.hamiltonian_unchecked(x, y)
    }

    fn hamiltonian_unchecked(&self, x: &Element, y: &Element) -> Result<f64> {
        let s = &self.space;
        match &*self.kind {
            Kind::Basic(psi) => Ok(psi.value(&-y) - psi.value(x)),
            Kind::Shift(l, b) => Ok(l.hamiltonian_unchecked(x, y)? - s.dot(&b.apply(x), y)),
            Kind::Oplus { l, m, .. } => Ok(l.hamiltonian_unchecked(x, y)? + m.hamiltonian_unchecked(x, y)?),
            Kind::Regularized { inner, alpha, beta } => match &*inner.kind {
                Kind::Basic(psi) => {
                    let za = psi.prox_unchecked(*alpha, x)?;
                    let ya = -y;
                    let zb = psi.prox_unchecked(*beta, &ya)?;
                    let env_a = psi.value(&za) + s.norm_sq(&(x - &za)) / (2.0 * alpha);
                    let env_b = psi.value(&zb) + s.norm_sq(&(&ya - &zb)) / (2.0 * beta);
                    Ok(env_b - env_a)
                }
                _ => self.hamiltonian_numeric_unchecked(x, y),
            },
            Kind::BoundaryAug { inner, b, bp, ell } => Ok(inner.hamiltonian_unchecked(x, y)?
                - s.dot(&b.apply(x), y)
                - ell.value(&bp.b1.apply(x), &bp.b2.apply(x))),
            _ => self.hamiltonian_numeric_unchecked(x, y),
        }
    }

    /// `H_L(x, y)` by direct numerical maximization over `p`.
    pub fn hamiltonian_numeric(&self, x: &Element, y: &Element) -> Result<f64> {
        self.space.check(x)?;
        self.space.check(y)?;
        self.hamiltonian_numeric_unchecked(x, y)
    }

    fn hamiltonian_numeric_unchecked(&self, x: &Element, y: &Element) -> Result<f64> {
        let gy = self.space.gram_apply(y);
        let mut obj = |p: &Element| -> Result<(f64, Element)> {
            let (v, _, gp) = self.eval_grad_unchecked(x, p)?;
            Ok((v - gy.dot(p), gp - &gy))
        };
        let scale = 1.0 + self.space.norm_sq(x) + self.space.norm_sq(y);
        let opts = LbfgsOptions {
            max_iter: 800,
            gtol: INNER_GTOL * scale.sqrt(),
            f_target: -1e12 * scale,
            ..Default::default()
        };
        let out = lbfgs(&mut obj, -y, &opts, &Geometry::default())?;
        match out.status {
            LbfgsStatus::TargetReached => Ok(f64::INFINITY),
            LbfgsStatus::Converged => Ok(-out.f),
            _ if out.gnorm <= 1e-7 * scale => Ok(-out.f),
            _ => Err(Error::NotConverged {
                what: "Hamiltonian supremum".into(),
                gap: out.gnorm,
            }),
        }
    }

    /// Brute-force check of `L*(p, x) = L(−x, −p)` on `dim ≤ 3`.
    ///
    /// `L*` is maximized over the box `[−half_width, half_width]^{2·dim}` on a
    /// grid with `grid_n` points per axis, then refined by quasi-Newton from
    /// the best grid point.
    pub fn asd_defect(&self, samples: &[(Element, Element)], half_width: f64, grid_n: usize) -> Result<AsdReport> {
        let d = self.space.dim();
        if d > 3 {
            return Err(Error::InvalidArgument(format!("asd_defect needs dim ≤ 3, got {d}")));
        }
        if samples.is_empty() || grid_n < 2 || !(half_width > 0.0) {
            return Err(Error::InvalidArgument(
                "asd_defect needs samples, grid_n ≥ 2 and a positive box".into(),
            ));
        }
        let axis: Vec<f64> = (0..grid_n)
            .map(|i| -half_width + 2.0 * half_width * i as f64 / (grid_n - 1) as f64)
            .collect();
        let total = grid_n.pow(2 * d as u32);
        let mut points = Vec::with_capacity(total);
        let mut values = Vec::with_capacity(total);
        let mut idx = vec![0usize; 2 * d];
        for _ in 0..total {
            let a = DVector::from_fn(d, |i, _| axis[idx[i]]);
            let b = DVector::from_fn(d, |i, _| axis[idx[d + i]]);
            values.push(self.value(&a, &b)?);
            points.push((a, b));
            for slot in idx.iter_mut() {
                *slot += 1;
                if *slot < grid_n {
                    break;
                }
                *slot = 0;
            }
        }
        let s = &self.space;
        let mut defect = 0.0f64;
        let mut boundary_hit = false;
        for (x, p) in samples {
            s.check(x)?;
            s.check(p)?;
            let (gp, gx) = (s.gram_apply(p), s.gram_apply(x));
            let mut best = (f64::NEG_INFINITY, 0usize);
            for (k, ((a, b), v)) in points.iter().zip(&values).enumerate() {
                let t = gp.dot(a) + gx.dot(b) - v;
                if t > best.0 {
                    best = (t, k);
                }
            }
            let (a0, b0) = &points[best.1];
            let z0 = DVector::from_iterator(2 * d, a0.iter().chain(b0.iter()).copied());
            let mut obj = |z: &Element| -> Result<(f64, Element)> {
                let a = z.rows(0, d).into_owned();
                let b = z.rows(d, d).into_owned();
                let (v, ga, gb) = self.eval_grad_unchecked(&a, &b)?;
                let g = DVector::from_iterator(2 * d, (ga - &gp).iter().chain((gb - &gx).iter()).copied());
                Ok((v - gp.dot(&a) - gx.dot(&b), g))
            };
            let opts = LbfgsOptions {
                max_iter: 400,
                gtol: 1e-12,
                ..Default::default()
            };
            let out = lbfgs(&mut obj, z0, &opts, &Geometry::default())?;
            let sup = (-out.f).max(best.0);
            if out.x.amax() > half_width {
                boundary_hit = true;
            }
            let target = self.value(&-x, &-p)?;
            defect = defect.max((sup - target).abs());
        }
        Ok(AsdReport { defect, boundary_hit })
    }
}

/// Boundary Lagrangian `ℓ(r, s) = ψ₁(r) + ψ₂(s)` on `H₁ × H₂`.
#[derive(Clone, Debug)]
pub struct BoundaryLagrangian {
    h1: Space,
    h2: Space,
    psi1: ConvexFunction,
    psi2: ConvexFunction,
}

impl BoundaryLagrangian {
    /// `½‖r‖² − 2⟨a, r⟩ + ‖a‖² + ½‖s‖²`, encoding the initial condition `a`.
    pub fn initial_value(h1: &Space, h2: &Space, a: &Element) -> Result<Self> {
        h1.check(a)?;
        let psi1 = ConvexFunction::quadratic(h1, h1.gram_matrix(), -a * 2.0, h1.norm_sq(a))?;
        Ok(BoundaryLagrangian {
            h1: h1.clone(),
            h2: h2.clone(),
            psi1,
            psi2: ConvexFunction::half_norm_sq(h2),
        })
    }

    pub fn custom(psi1: ConvexFunction, psi2: ConvexFunction) -> Self {
        BoundaryLagrangian {
            h1: psi1.space().clone(),
            h2: psi2.space().clone(),
            psi1,
            psi2,
        }
    }

    /// `ℓ ≡ 0`, for use with vanishing boundary operators.
    pub fn zero(h1: &Space, h2: &Space) -> Self {
        Self::custom(ConvexFunction::zero(h1), ConvexFunction::zero(h2))
    }

    pub fn h1(&self) -> &Space {
        &self.h1
    }

    pub fn h2(&self) -> &Space {
        &self.h2
    }

    pub fn eval(&self, r: &Element, s: &Element) -> Result<f64> {
        self.h1.check(r)?;
        self.h2.check(s)?;
        Ok(self.value(r, s))
    }

    pub(crate) fn value(&self, r: &Element, s: &Element) -> f64 {
        self.psi1.value(r) + self.psi2.value(s)
    }

    fn grad_e(&self, r: &Element, s: &Element) -> Result<(Element, Element)> {
        let nonsmooth = || Error::InvalidArgument("boundary Lagrangian is not differentiable here".into());
        Ok((
            self.psi1.grad_e(r).ok_or_else(nonsmooth)?,
            self.psi2.grad_e(s).ok_or_else(nonsmooth)?,
        ))
    }

    /// `ℓ*(h₁, h₂) = ψ₁*(h₁) + ψ₂*(h₂)`.
    pub fn conjugate(&self, h1: &Element, h2: &Element) -> Result<f64> {
        Ok(self.psi1.conjugate(h1)? + self.psi2.conjugate(h2)?)
    }

    /// Max of `|ℓ*(−h₁, h₂) − ℓ(h₁, h₂)|` over the samples.
    pub fn selfdual_defect(&self, samples: &[(Element, Element)]) -> Result<f64> {
        let mut worst = 0.0f64;
        for (a, b) in samples {
            let d = self.conjugate(&-a, b)? - self.eval(a, b)?;
            worst = worst.max(d.abs());
        }
        Ok(worst)
    }

    /// Smallest value of `ℓ(r, s) − ½(‖s‖² − ‖r‖²)` over the samples; the
    /// inequality holds when this is nonnegative.
    pub fn inequality_margin(&self, samples: &[(Element, Element)]) -> Result<f64> {
        let mut worst = f64::INFINITY;
        for (r, s) in samples {
            let m = self.eval(r, s)? - 0.5 * (self.h2.norm_sq(s) - self.h1.norm_sq(r));
            worst = worst.min(m);
        }
        Ok(worst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector, DMatrix};

    fn half_sq(n: usize) -> Lagrangian {
        Lagrangian::basic(ConvexFunction::half_norm_sq(&Space::euclidean(n)))
    }

    fn rot() -> LinearMap {
        let s = Space::euclidean(2);
        LinearMap::from_matrix(&s, &s, dmatrix![0.0, 1.0; -1.0, 0.0]).unwrap()
    }

    #[test]
    fn eval_examples() {
        let l = half_sq(2);
        assert_eq!(l.eval(&dvector![1.0, 0.0], &dvector![0.0, 1.0]).unwrap(), 1.0);
        let (x, p) = (dvector![1.0, 0.0], dvector![-1.0, 0.0]);
        assert_eq!(l.eval(&x, &p).unwrap(), 1.0);
        assert_eq!(l.eval(&x, &p).unwrap() + x.dot(&p), 0.0);
        let lb = Lagrangian::shift(&l, &rot()).unwrap();
        assert_eq!(lb.eval(&x, &dvector![0.0, 0.0]).unwrap(), 1.0);
    }

    #[test]
    fn hamiltonian_examples() {
        let s = Space::euclidean(2);
        let sq = ConvexFunction::quadratic(&s, DMatrix::identity(2, 2) * 2.0, s.zeros(), 0.0).unwrap();
        let h = Lagrangian::basic(sq);
        assert_eq!(h.hamiltonian(&dvector![1.0, 0.0], &dvector![0.0, 2.0]).unwrap(), 3.0);
        let x = dvector![0.3, -0.7];
        assert_eq!(half_sq(2).hamiltonian(&x, &-&x).unwrap(), 0.0);
    }

    #[test]
    fn shift_rule_matches_numeric_sup() {
        let lb = Lagrangian::shift(&half_sq(2), &rot()).unwrap();
        let mut rng = seeded_rng(3);
        for _ in 0..10 {
            let x = Space::euclidean(2).random_element(&mut rng, 2.0);
            let y = Space::euclidean(2).random_element(&mut rng, 2.0);
            let closed = lb.hamiltonian(&x, &y).unwrap();
            let numeric = lb.hamiltonian_numeric(&x, &y).unwrap();
            assert!((closed - numeric).abs() < 1e-8, "{closed} vs {numeric}");
        }
    }

    #[test]
    fn shift_by_zero_is_neutral() {
        let s = Space::euclidean(2);
        let l = half_sq(2);
        let l0 = Lagrangian::shift(&l, &LinearMap::zero(&s, &s)).unwrap();
        let (x, p) = (dvector![0.4, 1.0], dvector![-2.0, 0.5]);
        assert_eq!(l.eval(&x, &p).unwrap(), l0.eval(&x, &p).unwrap());
    }

    #[test]
    fn oplus_of_basics_sums_hamiltonians() {
        let l = half_sq(1);
        let o = Lagrangian::oplus(&l, &l).unwrap();
        let (x, y) = (dvector![0.8], dvector![-1.3]);
        let expect = 2.0 * (0.5 * 1.3f64.powi(2) - 0.5 * 0.8f64.powi(2));
        assert!((o.hamiltonian(&x, &y).unwrap() - expect).abs() < 1e-14);
        assert!((o.hamiltonian_numeric(&x, &y).unwrap() - expect).abs() < 1e-9);
    }

    #[test]
    fn regularized_basic_examples() {
        let l = half_sq(1);
        let r = Lagrangian::lambda_regularize(&l, 1.0, 1.0).unwrap();
        let j = r.j_lambda(&dvector![2.0], &dvector![0.0]).unwrap();
        assert!((j[0] - 1.0).abs() < 1e-15);
        assert_eq!(r.j_lambda(&dvector![2.0], &dvector![5.0]).unwrap(), j);
        let (_, gx, _) = r.eval_grad(&dvector![2.0], &dvector![0.0]).unwrap();
        assert!((gx[0] - 1.0).abs() < 1e-15);
        assert!(Lagrangian::lambda_regularize(&l, 0.0, 1.0).is_err());
    }

    #[test]
    fn generic_regularization_matches_closed_form() {
        let l = half_sq(2);
        let inner = l.clone();
        let lb = Lagrangian::custom(&Space::euclidean(2), move |x, p| inner.eval_grad(x, p).unwrap());
        let closed = Lagrangian::lambda_regularize(&l, 0.5, 0.5).unwrap();
        let generic = Lagrangian::lambda_regularize(&lb, 0.5, 0.5).unwrap();
        let (x, p) = (dvector![1.0, -2.0], dvector![0.3, 0.1]);
        let (a, ga, pa) = closed.eval_grad(&x, &p).unwrap();
        let (b, gb, pb) = generic.eval_grad(&x, &p).unwrap();
        assert!((a - b).abs() < 1e-12);
        assert!((ga - gb).amax() < 1e-9 && (pa - pb).amax() < 1e-9);
    }

    #[test]
    fn asd_detector_fires_on_broken_lagrangian() {
        let s = Space::euclidean(1);
        let broken = Lagrangian::custom(&s, |x, p| {
            let t = x[0] + p[0];
            (0.5 * t * t, dvector![t], dvector![t])
        });
        let rep = broken.asd_defect(&[(dvector![1.0], dvector![1.0])], 4.0, 200).unwrap();
        assert!(rep.defect > 0.1, "defect {}", rep.defect);
    }

    #[test]
    fn boundary_lagrangian_examples() {
        let h = Space::euclidean(2);
        let z = BoundaryLagrangian::initial_value(&h, &h, &h.zeros()).unwrap();
        let samples = vec![
            (dvector![1.0, 2.0], dvector![-0.5, 0.0]),
            (dvector![0.0, 3.0], dvector![1.0, 1.0]),
        ];
        assert_eq!(z.selfdual_defect(&samples).unwrap(), 0.0);
        let a = BoundaryLagrangian::initial_value(&h, &h, &dvector![1.0, 0.0]).unwrap();
        assert!(a.selfdual_defect(&samples).unwrap() <= 1e-10);
        assert!(a.inequality_margin(&samples).unwrap() >= 0.0);
        let probe = BoundaryLagrangian::custom(
            ConvexFunction::quadratic(&h, DMatrix::identity(2, 2) * 2.0, h.zeros(), 0.0).unwrap(),
            ConvexFunction::half_norm_sq(&h),
        );
        assert!(probe.selfdual_defect(&samples).unwrap() > 0.1);
    }

    #[test]
    fn augmented_with_zero_boundary_is_shift() {
        let s = Space::euclidean(2);
        let l = half_sq(2);
        let bp = BoundaryPair::zero(&s);
        let ell = BoundaryLagrangian::zero(&bp.h1, &bp.h2);
        let aug = Lagrangian::augment_boundary(&l, &rot(), &bp, &ell).unwrap();
        let sh = Lagrangian::shift(&l, &rot()).unwrap();
        let (x, p) = (dvector![0.2, -1.0], dvector![1.5, 0.5]);
        assert_eq!(aug.eval(&x, &p).unwrap(), sh.eval(&x, &p).unwrap());
        let id = LinearMap::from_matrix(&s, &s, DMatrix::identity(2, 2)).unwrap();
        assert!(matches!(
            Lagrangian::augment_boundary(&l, &id, &bp, &ell),
            Err(Error::Structure { .. })
        ));
    }

    #[test]
    fn augmented_initial_value_is_nonnegative() {
        let s = Space::euclidean(2);
        let l = half_sq(2);
        let bp = BoundaryPair::zero(&s);
        let ell = BoundaryLagrangian::initial_value(&bp.h1, &bp.h2, &dvector![0.0]).unwrap();
        let aug = Lagrangian::augment_boundary(&l, &rot(), &bp, &ell).unwrap();
        assert_eq!(aug.eval(&s.zeros(), &s.zeros()).unwrap(), 0.0);
        let mut rng = seeded_rng(5);
        for x in s.random_elements(&mut rng, 50, 3.0) {
            let v = aug.eval(&x, &s.zeros()).unwrap();
            assert!(v >= 0.0 && (v > 0.0 || x.norm() == 0.0));
        }
    }
}
