//! Closed convex functions with conjugates, proximal maps and subgradients.
//!
//! Conventions: `φ(x) = ½ xᵀQx + ⟨b, x⟩ + c` for the quadratic kind, with
//! `Q` the Euclidean energy matrix and `⟨·,·⟩` the Gram pairing. Dual
//! arguments (`p` in `φ*(p)`) are Riesz representatives, so
//! `φ*(p) = sup_x ⟨p, x⟩ − φ(x)` and `∇φ*(p)` is a primal element.
//! Gradients suffixed `_e` are Euclidean (`∂φ/∂xᵢ`); `subgradient`
//! returns the Riesz representative `G⁻¹∇φ`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{check_dim, Error, Result};
use crate::operators::LinearMap;
use crate::optim::{lbfgs, newton_minimize, Geometry, LbfgsOptions, LbfgsStatus};
use crate::space::{Element, Space};

type ScalarFn = Arc<dyn Fn(&Element) -> f64 + Send + Sync>;
type VecFn = Arc<dyn Fn(&Element) -> Element + Send + Sync>;

#[derive(Clone)]
struct Quadratic {
    q: DMatrix<f64>,
    /// `G b`, the Euclidean linear coefficient.
    gb: Element,
    c: f64,
    diag: Option<DVector<f64>>,
    chol: Option<Cholesky<f64, Dyn>>,
}

impl Quadratic {
    fn new(space: &Space, q: DMatrix<f64>, gb: Element, c: f64) -> Result<Self> {
        let n = space.dim();
        check_dim(n, q.nrows())?;
        check_dim(n, q.ncols())?;
        check_dim(n, gb.len())?;
        let scale = q.amax().max(f64::MIN_POSITIVE);
        if (&q - q.transpose()).amax() > 1e-12 * scale {
            return Err(Error::NotPositiveDefinite("quadratic form is not symmetric".into()));
        }
        let is_diag = (0..n).all(|i| (0..n).all(|j| i == j || q[(i, j)] == 0.0));
        let diag = is_diag.then(|| q.diagonal());
        if let Some(d) = &diag {
            if d.iter().any(|v| *v < 0.0) {
                return Err(Error::NotPositiveDefinite("negative diagonal entry".into()));
            }
        }
        let chol = if is_diag { None } else { Cholesky::new(q.clone()) };
        if !is_diag && chol.is_none() {
            // Positive semidefinite forms are allowed; reject indefinite ones.
            let eig = q.clone().symmetric_eigenvalues();
            if eig.min() < -1e-12 * scale {
                return Err(Error::NotPositiveDefinite("quadratic form is indefinite".into()));
            }
        }
        Ok(Quadratic { q, gb, c, diag, chol })
    }

    fn is_definite(&self) -> bool {
        match &self.diag {
            Some(d) => d.iter().all(|v| *v > 0.0),
            None => self.chol.is_some(),
        }
    }

    fn apply(&self, x: &Element) -> Element {
        match &self.diag {
            Some(d) => x.component_mul(d),
            None => &self.q * x,
        }
    }

    fn solve(&self, y: &Element) -> Option<Element> {
        match (&self.diag, &self.chol) {
            (Some(d), _) if d.iter().all(|v| *v > 0.0) => Some(y.component_div(d)),
            (None, Some(c)) => Some(c.solve(y)),
            _ => None,
        }
    }
}

#[derive(Clone)]
struct Numeric {
    value: ScalarFn,
    gradient: Option<VecFn>,
    lower: Element,
    upper: Element,
    smooth: bool,
}

#[derive(Clone)]
enum Kind {
    Quadratic(Quadratic),
    PowerNorm {
        m: f64,
        weight: f64,
    },
    SeparablePower {
        m: f64,
        weights: DVector<f64>,
    },
    Sum(Vec<ConvexFunction>),
    Precompose {
        inner: ConvexFunction,
        a: LinearMap,
        shift: Element,
    },
    Tilt {
        inner: ConvexFunction,
        f: Element,
    },
    Envelope {
        inner: ConvexFunction,
        alpha: f64,
    },
    Numeric(Numeric),
}

/// A closed convex function on a [`Space`].
#[derive(Clone)]
pub struct ConvexFunction {
    space: Space,
    kind: Arc<Kind>,
}

impl fmt::Debug for ConvexFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match &*self.kind {
            Kind::Quadratic(_) => "quadratic",
            Kind::PowerNorm { .. } => "power_norm",
            Kind::SeparablePower { .. } => "separable_power",
            Kind::Sum(_) => "sum",
            Kind::Precompose { .. } => "linear_precompose",
            Kind::Tilt { .. } => "tilt",
            Kind::Envelope { .. } => "envelope",
            Kind::Numeric(_) => "numeric",
        };
        write!(f, "ConvexFunction({name}, dim {})", self.space.dim())
    }
}

/// Value and maximizer of `sup_x ⟨p, x⟩ − φ(x)`.
#[derive(Clone, Debug)]
pub struct ConjugatePoint {
    pub value: f64,
    /// `∇φ*(p)`, the maximizing primal point.
    pub argmax: Element,
    /// Estimated optimality gap of the inner maximization (0 for closed forms).
    pub gap: f64,
}

#[derive(Clone, Debug)]
pub struct Subgradient {
    /// Riesz representative of the selected subgradient.
    pub value: Element,
    /// False when the point looked nondifferentiable and a prox-based
    /// approximation was returned.
    pub exact: bool,
}

const INNER_GAP_TOL: f64 = 1e-24;

impl ConvexFunction {
    fn wrap(space: &Space, kind: Kind) -> Self {
        ConvexFunction {
            space: space.clone(),
            kind: Arc::new(kind),
        }
    }

    /// `½ xᵀQx + ⟨b, x⟩ + c`; `Q` must be symmetric positive semidefinite.
    pub fn quadratic(space: &Space, q: DMatrix<f64>, b: Element, c: f64) -> Result<Self> {
        space.check(&b)?;
        let gb = space.gram_apply(&b);
        Ok(Self::wrap(space, Kind::Quadratic(Quadratic::new(space, q, gb, c)?)))
    }

    /// `½‖x‖²` in the Gram norm.
    pub fn half_norm_sq(space: &Space) -> Self {
        Self::quadratic(space, space.gram_matrix(), space.zeros(), 0.0).expect("Gram matrix is SPD")
    }

    pub fn zero(space: &Space) -> Self {
        let n = space.dim();
        Self::quadratic(space, DMatrix::zeros(n, n), space.zeros(), 0.0).expect("zero form")
    }

    /// `weight·‖x‖^m / m` in the Gram norm, `m > 1`.
    pub fn power_norm(space: &Space, m: f64, weight: f64) -> Result<Self> {
        if !(m > 1.0) || !(weight > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "power_norm needs m > 1 and weight > 0, got m={m}, weight={weight}"
            )));
        }
        Ok(Self::wrap(space, Kind::PowerNorm { m, weight }))
    }

    /// `Σ wᵢ|xᵢ|^m / m`, `m > 1`, positive quadrature weights.
    pub fn separable_power(space: &Space, m: f64, weights: DVector<f64>) -> Result<Self> {
        check_dim(space.dim(), weights.len())?;
        if !(m > 1.0) || weights.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::InvalidArgument(
                "separable_power needs m > 1 and positive weights".into(),
            ));
        }
        Ok(Self::wrap(space, Kind::SeparablePower { m, weights }))
    }

    /// Sum of functions on one space. Quadratic terms (including `m = 2`
    /// powers) are merged into a single quadratic.
    pub fn sum(space: &Space, terms: Vec<ConvexFunction>) -> Result<Self> {
        let n = space.dim();
        let mut flat = Vec::new();
        let mut stack = terms;
        while let Some(t) = stack.pop() {
            check_dim(n, t.space.dim())?;
            match &*t.kind {
                Kind::Sum(inner) => stack.extend(inner.iter().cloned()),
                _ => flat.push(t),
            }
        }
        flat.reverse();
        let mut q = DMatrix::zeros(n, n);
        let mut gb = DVector::zeros(n);
        let mut c = 0.0;
        let mut quadratic_terms = 0;
        let mut rest = Vec::new();
        for t in flat {
            match &*t.kind {
                Kind::Quadratic(qd) => {
                    q += &qd.q;
                    gb += &qd.gb;
                    c += qd.c;
                    quadratic_terms += 1;
                }
                Kind::SeparablePower { m, weights } if *m == 2.0 => {
                    for i in 0..n {
                        q[(i, i)] += weights[i];
                    }
                    quadratic_terms += 1;
                }
                Kind::PowerNorm { m, weight } if *m == 2.0 => {
                    q += space.gram_matrix() * *weight;
                    quadratic_terms += 1;
                }
                Kind::Tilt { inner, f } => {
                    gb += space.gram_apply(f);
                    quadratic_terms += 1;
                    rest.push(inner.clone());
                }
                _ => rest.push(t),
            }
        }
        let mut out = Vec::new();
        if quadratic_terms > 0 {
            out.push(Self::wrap(space, Kind::Quadratic(Quadratic::new(space, q, gb, c)?)));
        }
        // Tilts may have exposed further quadratics.
        if rest
            .iter()
            .any(|t| matches!(&*t.kind, Kind::Quadratic(_) | Kind::Sum(_) | Kind::Tilt { .. }))
        {
            let mut all = out;
            all.extend(rest);
            return Self::sum(space, all);
        }
        out.extend(rest);
        match out.len() {
            0 => Ok(Self::zero(space)),
            1 => Ok(out.pop().unwrap()),
            _ => Ok(Self::wrap(space, Kind::Sum(out))),
        }
    }

    /// `x ↦ inner(Ax + shift)` with `A: space → inner.space`. Quadratic
    /// inner functions are folded into a quadratic.
    pub fn linear_precompose(space: &Space, inner: ConvexFunction, a: LinearMap, shift: Element) -> Result<Self> {
        check_dim(space.dim(), a.dim_in())?;
        check_dim(inner.space.dim(), a.dim_out())?;
        inner.space.check(&shift)?;
        if let Kind::Quadratic(qd) = &*inner.kind {
            let am = a.matrix();
            let q = am.transpose() * &qd.q * &am;
            let q = (&q + q.transpose()) * 0.5;
            let lin = &qd.q * &shift + &qd.gb;
            let gb = am.transpose() * &lin;
            let c = 0.5 * shift.dot(&(&qd.q * &shift)) + qd.gb.dot(&shift) + qd.c;
            return Ok(Self::wrap(space, Kind::Quadratic(Quadratic::new(space, q, gb, c)?)));
        }
        Ok(Self::wrap(space, Kind::Precompose { inner, a, shift }))
    }

    /// `φ + ⟨f, ·⟩`.
    pub fn tilt(&self, f: &Element) -> Result<Self> {
        self.space.check(f)?;
        if let Kind::Quadratic(qd) = &*self.kind {
            let gb = &qd.gb + self.space.gram_apply(f);
            return Ok(Self::wrap(
                &self.space,
                Kind::Quadratic(Quadratic::new(&self.space, qd.q.clone(), gb, qd.c)?),
            ));
        }
        Ok(Self::wrap(
            &self.space,
            Kind::Tilt {
                inner: self.clone(),
                f: f.clone(),
            },
        ))
    }

    /// Moreau envelope `min_z φ(z) + ‖x − z‖²/(2α)`.
    pub fn envelope(&self, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "envelope parameter must be positive, got {alpha}"
            )));
        }
        if let Kind::Quadratic(qd) = &*self.kind {
            // Envelope of a quadratic: Hessian P − P A⁻¹ P with P = G/α, A = Q + P.
            let p = self.space.gram_matrix() / alpha;
            let a = Cholesky::new(&qd.q + &p).ok_or_else(|| Error::NotPositiveDefinite("envelope system".into()))?;
            let hess = &p - &p * a.solve(&p);
            let hess = (&hess + hess.transpose()) * 0.5;
            let ainv_gb = a.solve(&qd.gb);
            let lin = &p * &ainv_gb;
            let c = qd.c - 0.5 * qd.gb.dot(&ainv_gb);
            return Ok(Self::wrap(
                &self.space,
                Kind::Quadratic(Quadratic::new(&self.space, hess, lin, c)?),
            ));
        }
        Ok(Self::wrap(
            &self.space,
            Kind::Envelope {
                inner: self.clone(),
                alpha,
            },
        ))
    }

    /// User-supplied convex function. The box seeds the multi-start inner
    /// maximizations; `smooth` declares differentiability.
    pub fn numeric(
        space: &Space,
        value: impl Fn(&Element) -> f64 + Send + Sync + 'static,
        gradient: Option<VecFn>,
        lower: Element,
        upper: Element,
        smooth: bool,
    ) -> Result<Self> {
        space.check(&lower)?;
        space.check(&upper)?;
        if lower.iter().zip(upper.iter()).any(|(l, u)| !(l < u)) {
            return Err(Error::InvalidArgument("bounding box must have lower < upper".into()));
        }
        Ok(Self::wrap(
            space,
            Kind::Numeric(Numeric {
                value: Arc::new(value),
                gradient,
                lower,
                upper,
                smooth,
            }),
        ))
    }

    pub fn space(&self) -> &Space {
        &self.space
    }

    pub fn kind_name(&self) -> &'static str {
        match &*self.kind {
            Kind::Quadratic(_) => "quadratic",
            Kind::PowerNorm { .. } => "power_norm",
            Kind::SeparablePower { .. } => "separable_power",
            Kind::Sum(_) => "sum",
            Kind::Precompose { .. } => "linear_precompose",
            Kind::Tilt { .. } => "tilt",
            Kind::Envelope { .. } => "envelope",
            Kind::Numeric(_) => "numeric",
        }
    }

    pub fn is_smooth(&self) -> bool {
        match &*self.kind {
            Kind::Sum(ts) => ts.iter().all(|t| t.is_smooth()),
            Kind::Precompose { inner, .. } | Kind::Tilt { inner, .. } => inner.is_smooth(),
            Kind::Numeric(n) => n.smooth,
            _ => true,
        }
    }

    /// True when the conjugate has a closed form.
    pub fn has_exact_conjugate(&self) -> bool {
        match &*self.kind {
            Kind::Quadratic(q) => q.is_definite(),
            Kind::PowerNorm { .. } | Kind::SeparablePower { .. } => true,
            Kind::Tilt { inner, .. } | Kind::Envelope { inner, .. } => inner.has_exact_conjugate(),
            _ => false,
        }
    }

    pub fn eval(&self, x: &Element) -> Result<f64> {
        self.space.check(x)?;
        Ok(self.value(x))
    }

    pub(crate) fn value(&self, x: &Element) -> f64 {
        match &*self.kind {
            Kind::Quadratic(q) => 0.5 * x.dot(&q.apply(x)) + q.gb.dot(x) + q.c,
            Kind::PowerNorm { m, weight } => weight * self.space.norm(x).powf(*m) / m,
            Kind::SeparablePower { m, weights } => {
                x.iter()
                    .zip(weights.iter())
                    .map(|(v, w)| w * v.abs().powf(*m))
                    .sum::<f64>()
                    / m
            }
            Kind::Sum(ts) => ts.iter().map(|t| t.value(x)).sum(),
            Kind::Precompose { inner, a, shift } => inner.value(&(a.apply(x) + shift)),
            Kind::Tilt { inner, f } => inner.value(x) + self.space.dot(f, x),
            Kind::Envelope { inner, alpha } => match inner.prox_unchecked(*alpha, x) {
                Ok(z) => inner.value(&z) + self.space.norm_sq(&(x - &z)) / (2.0 * alpha),
                Err(_) => f64::NAN,
            },
            Kind::Numeric(n) => (n.value)(x),
        }
    }

    /// Euclidean gradient `∂φ/∂x`, when the function is differentiable at `x`.
    pub fn grad_e(&self, x: &Element) -> Option<Element> {
        match &*self.kind {
            Kind::Quadratic(q) => Some(q.apply(x) + &q.gb),
            Kind::PowerNorm { m, weight } => {
                let r = self.space.norm(x);
                if r == 0.0 {
                    return Some(self.space.zeros());
                }
                Some(self.space.gram_apply(x) * (weight * r.powf(m - 2.0)))
            }
            Kind::SeparablePower { m, weights } => Some(DVector::from_iterator(
                x.len(),
                x.iter()
                    .zip(weights.iter())
                    .map(|(v, w)| w * v.signum() * v.abs().powf(m - 1.0)),
            )),
            Kind::Sum(ts) => {
                let mut g = self.space.zeros();
                for t in ts {
                    g += t.grad_e(x)?;
                }
                Some(g)
            }
            Kind::Precompose { inner, a, shift } => {
                let gi = inner.grad_e(&(a.apply(x) + shift))?;
                // Aᵀ g = G A*(G'⁻¹ g)
                Some(self.space.gram_apply(&a.adjoint_apply(&inner.space.gram_solve(&gi))))
            }
            Kind::Tilt { inner, f } => Some(inner.grad_e(x)? + self.space.gram_apply(f)),
            Kind::Envelope { inner, alpha } => {
                let z = inner.prox_unchecked(*alpha, x).ok()?;
                Some(self.space.gram_apply(&(x - z)) / *alpha)
            }
            Kind::Numeric(n) => match &n.gradient {
                Some(g) => Some(g(x)),
                None => {
                    let (g, kink) = fd_gradient(&*n.value, x);
                    (!kink || n.smooth).then_some(g)
                }
            },
        }
    }

    /// Euclidean Hessian, when available in closed form.
    pub fn hessian_e(&self, x: &Element) -> Option<DMatrix<f64>> {
        match &*self.kind {
            Kind::Quadratic(q) => Some(q.q.clone()),
            Kind::PowerNorm { m, weight } => {
                let r = self.space.norm(x);
                let g = self.space.gram_matrix();
                if r == 0.0 {
                    return (*m == 2.0).then(|| g * *weight);
                }
                let gx = self.space.gram_apply(x);
                Some(g * (weight * r.powf(m - 2.0)) + &gx * gx.transpose() * (weight * (m - 2.0) * r.powf(m - 4.0)))
            }
            Kind::SeparablePower { m, weights } => {
                if *m < 2.0 && x.iter().any(|v| *v == 0.0) {
                    return None;
                }
                Some(DMatrix::from_diagonal(&DVector::from_iterator(
                    x.len(),
                    x.iter()
                        .zip(weights.iter())
                        .map(|(v, w)| w * (m - 1.0) * v.abs().powf(m - 2.0)),
                )))
            }
            Kind::Sum(ts) => {
                let mut h = DMatrix::zeros(x.len(), x.len());
                for t in ts {
                    h += t.hessian_e(x)?;
                }
                Some(h)
            }
            Kind::Precompose { inner, a, shift } => {
                let hi = inner.hessian_e(&(a.apply(x) + shift))?;
                let am = a.matrix();
                Some(am.transpose() * hi * am)
            }
            Kind::Tilt { inner, .. } => inner.hessian_e(x),
            Kind::Envelope { .. } | Kind::Numeric(_) => None,
        }
    }

    /// Constant Euclidean Hessian of the quadratic part, used to precondition
    /// outer solvers.
    pub fn quadratic_model(&self) -> Option<DMatrix<f64>> {
        match &*self.kind {
            Kind::Quadratic(q) => Some(q.q.clone()),
            Kind::PowerNorm { m, weight } if *m == 2.0 => Some(self.space.gram_matrix() * *weight),
            Kind::SeparablePower { m, weights } if *m == 2.0 => Some(DMatrix::from_diagonal(weights)),
            Kind::Sum(ts) => {
                let mut acc: Option<DMatrix<f64>> = None;
                for t in ts {
                    if let Some(h) = t.quadratic_model() {
                        acc = Some(match acc {
                            Some(a) => a + h,
                            None => h,
                        });
                    }
                }
                acc
            }
            Kind::Precompose { inner, a, .. } => {
                let h = inner.quadratic_model()?;
                let am = a.matrix();
                Some(am.transpose() * h * am)
            }
            Kind::Tilt { inner, .. } => inner.quadratic_model(),
            _ => None,
        }
    }

    /// A member of `∂φ(x)` as a Riesz representative.
    pub fn subgradient(&self, x: &Element) -> Result<Subgradient> {
        self.space.check(x)?;
        if let Some(g) = self.grad_e(x) {
            return Ok(Subgradient {
                value: self.space.gram_solve(&g),
                exact: true,
            });
        }
        // Minimal-norm selection approximated through a small-step prox.
        let eps = 1e-7 * (1.0 + self.space.norm(x));
        let z = self.prox_unchecked(eps, x)?;
        Ok(Subgradient {
            value: (x - z) / eps,
            exact: false,
        })
    }

    pub fn conjugate(&self, p: &Element) -> Result<f64> {
        Ok(self.conjugate_point(p)?.value)
    }

    /// `φ*(p)` together with `∇φ*(p)`.
    pub fn conjugate_point(&self, p: &Element) -> Result<ConjugatePoint> {
        self.space.check(p)?;
        self.conjugate_unchecked(p)
    }

    pub(crate) fn conjugate_unchecked(&self, p: &Element) -> Result<ConjugatePoint> {
        match &*self.kind {
            Kind::Quadratic(q) => {
                let u = self.space.gram_apply(p) - &q.gb;
                match q.solve(&u) {
                    Some(x) => Ok(ConjugatePoint {
                        value: 0.5 * u.dot(&x) - q.c,
                        argmax: x,
                        gap: 0.0,
                    }),
                    None => Err(Error::InvalidArgument(
                        "conjugate of a degenerate quadratic is an indicator; use a definite form".into(),
                    )),
                }
            }
            Kind::PowerNorm { m, weight } => {
                let ms = m / (m - 1.0);
                let s = self.space.norm(p);
                let value = weight.powf(-1.0 / (m - 1.0)) * s.powf(ms) / ms;
                let argmax = if s == 0.0 {
                    self.space.zeros()
                } else {
                    p * ((s / weight).powf(1.0 / (m - 1.0)) / s)
                };
                Ok(ConjugatePoint {
                    value,
                    argmax,
                    gap: 0.0,
                })
            }
            Kind::SeparablePower { m, weights } => {
                let ms = m / (m - 1.0);
                let q = self.space.gram_apply(p);
                let mut value = 0.0;
                let argmax = DVector::from_iterator(
                    q.len(),
                    q.iter().zip(weights.iter()).map(|(qi, w)| {
                        value += w.powf(-1.0 / (m - 1.0)) * qi.abs().powf(ms) / ms;
                        qi.signum() * (qi.abs() / w).powf(1.0 / (m - 1.0))
                    }),
                );
                Ok(ConjugatePoint {
                    value,
                    argmax,
                    gap: 0.0,
                })
            }
            Kind::Tilt { inner, f } => inner.conjugate_unchecked(&(p - f)),
            Kind::Envelope { inner, alpha } => {
                let cp = inner.conjugate_unchecked(p)?;
                Ok(ConjugatePoint {
                    value: cp.value + 0.5 * alpha * self.space.norm_sq(p),
                    argmax: cp.argmax + p * *alpha,
                    gap: cp.gap,
                })
            }
            _ => self.numeric_conjugate(p),
        }
    }

    /// `sup_x ⟨p, x⟩ − φ(x)` by Newton when Hessians exist, otherwise by
    /// multi-start L-BFGS seeded inside the bounding box.
    fn numeric_conjugate(&self, p: &Element) -> Result<ConjugatePoint> {
        let q = self.space.gram_apply(p);
        let x0 = match self.quadratic_model().and_then(Cholesky::new) {
            Some(c) => c.solve(&(&q - self.grad_e(&self.space.zeros()).unwrap_or_else(|| self.space.zeros()))),
            None => self.space.zeros(),
        };
        if self.hessian_e(&x0).is_some() {
            let mut fgh = |x: &Element| -> Result<(f64, Element, DMatrix<f64>)> {
                let h = self.hessian_e(x).ok_or_else(|| Error::NotConverged {
                    what: "Hessian unavailable".into(),
                    gap: f64::INFINITY,
                })?;
                let g = self.grad_e(x).expect("smooth where Hessian exists") - &q;
                Ok((self.value(x) - q.dot(x), g, h))
            };
            let scale = 1.0 + q.norm() * (1.0 + x0.norm());
            let out = newton_minimize(&mut fgh, x0, INNER_GAP_TOL * scale * scale, 200)?;
            if out.gap > 1e-14 * scale {
                return Err(Error::NotConverged {
                    what: format!("conjugate of {} by Newton", self.kind_name()),
                    gap: out.gap,
                });
            }
            return Ok(ConjugatePoint {
                value: -out.f,
                argmax: out.x,
                gap: out.gap,
            });
        }
        self.multistart_max(&q)
    }

    fn multistart_max(&self, q: &Element) -> Result<ConjugatePoint> {
        let n = self.space.dim();
        if n > 64 {
            return Err(Error::InvalidArgument(format!(
                "numeric conjugation without Hessian is limited to dim ≤ 64, got {n}"
            )));
        }
        let (lower, upper) = self.bounding_box();
        let mut starts = vec![(&lower + &upper) * 0.5];
        let mut rng = crate::space::seeded_rng(0x5eed);
        for _ in 0..4 {
            use rand::Rng;
            starts.push(DVector::from_fn(n, |i, _| rng.gen_range(lower[i]..upper[i])));
        }
        let diam = (&upper - &lower).norm();
        let mut best: Option<(f64, Element, f64)> = None;
        for x0 in starts {
            let mut obj = |x: &Element| -> Result<(f64, Element)> {
                let g = self.grad_e(x).unwrap_or_else(|| match &*self.kind {
                    Kind::Numeric(nm) => fd_gradient(&*nm.value, x).0,
                    _ => fd_gradient(&|y: &Element| self.value(y), x).0,
                });
                Ok((self.value(x) - q.dot(x), g - q))
            };
            let opts = LbfgsOptions {
                max_iter: 400,
                gtol: 1e-11 * (1.0 + q.norm()),
                ..Default::default()
            };
            let out = lbfgs(&mut obj, x0, &opts, &Geometry::default())?;
            let gap = out.gnorm * diam.max(out.x.norm());
            if best.as_ref().map_or(true, |(f, _, _)| out.f < *f) {
                best = Some((out.f, out.x, gap));
            }
            if out.status == LbfgsStatus::Converged && gap < 1e-12 {
                break;
            }
        }
        let (f, x, gap) = best.expect("at least one start");
        if !(gap <= 1e-6 * (1.0 + f.abs())) {
            return Err(Error::NotConverged {
                what: format!("conjugate of {} by multi-start quasi-Newton", self.kind_name()),
                gap,
            });
        }
        Ok(ConjugatePoint {
            value: -f,
            argmax: x,
            gap,
        })
    }

    fn bounding_box(&self) -> (Element, Element) {
        match &*self.kind {
            Kind::Numeric(nm) => (nm.lower.clone(), nm.upper.clone()),
            Kind::Sum(ts) => ts
                .iter()
                .find_map(|t| matches!(&*t.kind, Kind::Numeric(_)).then(|| t.bounding_box()))
                .unwrap_or_else(|| default_box(self.space.dim())),
            Kind::Tilt { inner, .. } | Kind::Envelope { inner, .. } => inner.bounding_box(),
            _ => default_box(self.space.dim()),
        }
    }

    /// `argmin_z φ(z) + ‖x − z‖²/(2λ)`.
    pub fn prox(&self, lambda: f64, x: &Element) -> Result<Element> {
        if !(lambda > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "prox parameter must be positive, got {lambda}"
            )));
        }
        self.space.check(x)?;
        self.prox_unchecked(lambda, x)
    }

    pub(crate) fn prox_unchecked(&self, lambda: f64, x: &Element) -> Result<Element> {
        match &*self.kind {
            Kind::Quadratic(q) => {
                let rhs = self.space.gram_apply(x) / lambda - &q.gb;
                if let (Some(d), Some(w)) = (&q.diag, self.space.gram_diagonal()) {
                    return Ok(DVector::from_fn(x.len(), |i, _| rhs[i] / (d[i] + w[i] / lambda)));
                }
                let m = &q.q + self.space.gram_matrix() / lambda;
                Cholesky::new(m)
                    .map(|c| c.solve(&rhs))
                    .ok_or_else(|| Error::NotPositiveDefinite("prox system".into()))
            }
            Kind::PowerNorm { m, weight } => {
                let r = self.space.norm(x);
                if r == 0.0 {
                    return Ok(x.clone());
                }
                // radius t solves t + λ w t^{m−1} = r
                let t = scalar_root(|t| t + lambda * weight * t.powf(m - 1.0) - r, 0.0, r);
                Ok(x * (t / r))
            }
            Kind::SeparablePower { m, weights } if self.space.is_diagonal() => {
                let g = self.space.gram_diagonal().expect("diagonal Gram");
                Ok(DVector::from_fn(x.len(), |i, _| {
                    let (xi, w, gi) = (x[i], weights[i], g[i]);
                    if xi == 0.0 {
                        return 0.0;
                    }
                    let a = xi.abs();
                    // w t^{m−1} + g (t − a)/λ = 0 on [0, a]
                    xi.signum() * scalar_root(|t| w * t.powf(m - 1.0) + gi * (t - a) / lambda, 0.0, a)
                }))
            }
            Kind::Tilt { inner, f } => inner.prox_unchecked(lambda, &(x - f * lambda)),
            _ => self.numeric_prox(lambda, x),
        }
    }

    fn numeric_prox(&self, lambda: f64, x: &Element) -> Result<Element> {
        let gm = self.space.gram_matrix();
        let scale = 1.0 + self.space.norm_sq(x) / lambda + self.value(x).abs();
        if self.hessian_e(x).is_some() {
            let mut fgh = |z: &Element| -> Result<(f64, Element, DMatrix<f64>)> {
                let d = z - x;
                let gd = self.space.gram_apply(&d);
                let h = self.hessian_e(z).ok_or_else(|| Error::NotConverged {
                    what: "Hessian unavailable".into(),
                    gap: f64::INFINITY,
                })?;
                Ok((
                    self.value(z) + d.dot(&gd) / (2.0 * lambda),
                    self.grad_e(z).expect("smooth") + gd / lambda,
                    h + &gm / lambda,
                ))
            };
            let out = newton_minimize(&mut fgh, x.clone(), INNER_GAP_TOL * scale * scale, 200)?;
            if out.gap > 1e-14 * scale {
                return Err(Error::NotConverged {
                    what: "prox by Newton".into(),
                    gap: out.gap,
                });
            }
            return Ok(out.x);
        }
        let mut obj = |z: &Element| -> Result<(f64, Element)> {
            let d = z - x;
            let gd = self.space.gram_apply(&d);
            let g = self
                .grad_e(z)
                .unwrap_or_else(|| fd_gradient(&|y: &Element| self.value(y), z).0);
            Ok((self.value(z) + d.dot(&gd) / (2.0 * lambda), g + gd / lambda))
        };
        let opts = LbfgsOptions {
            max_iter: 1000,
            gtol: 1e-12 * scale,
            ..Default::default()
        };
        let out = lbfgs(&mut obj, x.clone(), &opts, &Geometry::default())?;
        if self.is_smooth() && out.gnorm > 1e-6 * scale {
            return Err(Error::NotConverged {
                what: "prox by quasi-Newton".into(),
                gap: out.gnorm,
            });
        }
        Ok(out.x)
    }
}

fn default_box(n: usize) -> (Element, Element) {
    (DVector::from_element(n, -10.0), DVector::from_element(n, 10.0))
}

/// Central-difference gradient; the flag reports one-sided slopes that
/// disagree (a kink).
fn fd_gradient(f: &dyn Fn(&Element) -> f64, x: &Element) -> (Element, bool) {
    let n = x.len();
    let mut g = DVector::zeros(n);
    let mut kink = false;
    let f0 = f(x);
    let mut y = x.clone();
    for i in 0..n {
        let h = 1e-6 * (1.0 + x[i].abs());
        y[i] = x[i] + h;
        let fp = f(&y);
        y[i] = x[i] - h;
        let fm = f(&y);
        y[i] = x[i];
        g[i] = (fp - fm) / (2.0 * h);
        let (right, left) = ((fp - f0) / h, (f0 - fm) / h);
        if (right - left).abs() > 1e-2 * (1.0 + right.abs() + left.abs()) {
            kink = true;
        }
    }
    (g, kink)
}

/// Root of an increasing scalar function on `[lo, hi]` by safeguarded
/// bisection-secant.
fn scalar_root(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let mut flo = f(lo);
    let mut fhi = f(hi);
    if flo >= 0.0 {
        return lo;
    }
    if fhi <= 0.0 {
        return hi;
    }
    for _ in 0..200 {
        let secant = lo - flo * (hi - lo) / (fhi - flo);
        let mid = 0.5 * (lo + hi);
        let t = if secant > lo && secant < hi {
            0.5 * (secant + mid)
        } else {
            mid
        };
        let ft = f(t);
        if ft == 0.0 || (hi - lo) <= 4.0 * f64::EPSILON * hi.abs() {
            return t;
        }
        if ft < 0.0 {
            lo = t;
            flo = ft;
        } else {
            hi = t;
            fhi = ft;
        }
    }
    0.5 * (lo + hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::seeded_rng;
    use nalgebra::dvector;

    fn quartic_1d() -> ConvexFunction {
        ConvexFunction::separable_power(&Space::euclidean(1), 4.0, dvector![1.0]).unwrap()
    }

    #[test]
    fn eval_examples() {
        let s = Space::euclidean(2);
        let q = ConvexFunction::half_norm_sq(&s);
        assert_eq!(q.eval(&dvector![3.0, 4.0]).unwrap(), 12.5);
        let p = ConvexFunction::separable_power(&s, 4.0, dvector![1.0, 1.0]).unwrap();
        assert_eq!(p.eval(&dvector![1.0, 1.0]).unwrap(), 0.5);
        let sum = ConvexFunction::sum(&s, vec![q, p]).unwrap();
        assert_eq!(sum.eval(&dvector![1.0, 0.0]).unwrap(), 0.75);
        assert!(sum.eval(&dvector![1.0]).is_err());
    }

    #[test]
    fn conjugate_examples() {
        let s = Space::euclidean(2);
        let q = ConvexFunction::half_norm_sq(&s);
        assert!((q.conjugate(&dvector![1.0, 2.0]).unwrap() - 2.5).abs() < 1e-15);
        let q2 = ConvexFunction::quadratic(&s, DMatrix::from_diagonal(&dvector![2.0, 2.0]), s.zeros(), 0.0).unwrap();
        assert!((q2.conjugate(&dvector![2.0, 0.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((quartic_1d().conjugate(&dvector![1.0]).unwrap() - 0.75).abs() < 1e-15);
    }

    #[test]
    fn quartic_conjugate_matches_grid_sup() {
        // Brute-force sup over a 1e-4 grid on [−3, 3].
        let phi = quartic_1d();
        for p in [1.0, -0.4, 2.5] {
            let grid = (0..=60_000).map(|i| -3.0 + 1e-4 * i as f64);
            let sup = grid.map(|x| p * x - x.powi(4) / 4.0).fold(f64::NEG_INFINITY, f64::max);
            let exact = phi.conjugate(&dvector![p]).unwrap();
            assert!((exact - sup).abs() < 1e-7, "p={p}: {exact} vs {sup}");
        }
    }

    #[test]
    fn prox_examples() {
        let s = Space::euclidean(2);
        let q = ConvexFunction::half_norm_sq(&s);
        assert!((q.prox(1.0, &dvector![2.0, 0.0]).unwrap() - dvector![1.0, 0.0]).amax() < 1e-15);
        let z = ConvexFunction::zero(&s);
        assert_eq!(z.prox(0.7, &dvector![2.0, -1.0]).unwrap(), dvector![2.0, -1.0]);
        let r = quartic_1d().prox(1.0, &dvector![2.0]).unwrap();
        assert!((r[0] - 1.0).abs() < 1e-14);
        assert!(q.prox(0.0, &dvector![1.0, 1.0]).is_err());
    }

    #[test]
    fn subgradient_examples() {
        let s = Space::euclidean(2);
        let q = ConvexFunction::half_norm_sq(&s);
        assert_eq!(q.subgradient(&dvector![1.0, 2.0]).unwrap().value, dvector![1.0, 2.0]);
        assert_eq!(quartic_1d().subgradient(&dvector![2.0]).unwrap().value, dvector![8.0]);
        let g = Space::with_diagonal_gram(dvector![3.0, 0.5]).unwrap();
        let h = ConvexFunction::half_norm_sq(&g);
        let sg = h.subgradient(&dvector![1.0, 1.0]).unwrap();
        assert!((sg.value - dvector![1.0, 1.0]).amax() < 1e-15);
    }

    #[test]
    fn nonsmooth_numeric_subgradient_is_flagged() {
        let s = Space::euclidean(1);
        let f = ConvexFunction::numeric(&s, |x| x[0].abs(), None, dvector![-5.0], dvector![5.0], false).unwrap();
        let sg = f.subgradient(&dvector![0.0]).unwrap();
        assert!(!sg.exact);
        assert!(sg.value[0].abs() < 1e-6);
        let sg = f.subgradient(&dvector![2.0]).unwrap();
        assert!(sg.exact);
        assert!((sg.value[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn power_norm_closed_forms() {
        let s = Space::with_diagonal_gram(dvector![2.0, 0.5]).unwrap();
        let f = ConvexFunction::power_norm(&s, 3.0, 1.5).unwrap();
        let p = dvector![0.3, -1.2];
        let cp = f.conjugate_point(&p).unwrap();
        // Fenchel–Young equality at the maximizer.
        let fy = f.eval(&cp.argmax).unwrap() + cp.value - s.dot(&p, &cp.argmax);
        assert!(fy.abs() < 1e-14);
        let sg = f.subgradient(&cp.argmax).unwrap();
        assert!((sg.value - p).amax() < 1e-13);
        let x = dvector![1.0, 2.0];
        let z = f.prox(0.8, &x).unwrap();
        let resid = (&x - &z) / 0.8 - f.subgradient(&z).unwrap().value;
        assert!(resid.amax() < 1e-12);
    }

    #[test]
    fn composite_conjugate_by_newton() {
        let s = Space::with_diagonal_gram(dvector![0.5, 0.5, 0.5]).unwrap();
        let k = DMatrix::from_row_slice(3, 3, &[2.0, -1.0, 0.0, -1.0, 2.0, -1.0, 0.0, -1.0, 2.0]);
        let q = ConvexFunction::quadratic(&s, k, s.zeros(), 0.0).unwrap();
        let p4 = ConvexFunction::separable_power(&s, 4.0, dvector![0.5, 0.5, 0.5]).unwrap();
        let f = ConvexFunction::sum(&s, vec![q, p4])
            .unwrap()
            .tilt(&dvector![0.1, 0.0, -0.3])
            .unwrap();
        assert!(!f.has_exact_conjugate());
        let p = dvector![1.0, -2.0, 0.5];
        let cp = f.conjugate_point(&p).unwrap();
        let fy = f.eval(&cp.argmax).unwrap() + cp.value - s.dot(&p, &cp.argmax);
        assert!(fy.abs() < 1e-12);
        let sg = f.subgradient(&cp.argmax).unwrap();
        assert!((sg.value - &p).amax() < 1e-9);
    }

    #[test]
    fn precompose_folds_quadratics() {
        let s = Space::euclidean(2);
        let t = Space::euclidean(1);
        let a = LinearMap::from_matrix(&s, &t, DMatrix::from_row_slice(1, 2, &[1.0, 2.0])).unwrap();
        let inner = ConvexFunction::half_norm_sq(&t);
        let f = ConvexFunction::linear_precompose(&s, inner, a, dvector![1.0]).unwrap();
        assert_eq!(f.kind_name(), "quadratic");
        assert!((f.eval(&dvector![1.0, 1.0]).unwrap() - 8.0).abs() < 1e-15);
    }

    #[test]
    fn envelope_conjugate_adds_quadratic() {
        let s = Space::euclidean(1);
        let f = quartic_1d().envelope(0.5).unwrap();
        let p = dvector![0.7];
        let cp = f.conjugate_point(&p).unwrap();
        let fy = f.eval(&cp.argmax).unwrap() + cp.value - s.dot(&p, &cp.argmax);
        assert!(fy.abs() < 1e-12);
    }

    #[test]
    fn numeric_kind_conjugate_matches_closed_form() {
        let s = Space::euclidean(2);
        let f = ConvexFunction::numeric(
            &s,
            |x| 0.5 * x.norm_squared(),
            None,
            dvector![-4.0, -4.0],
            dvector![4.0, 4.0],
            true,
        )
        .unwrap();
        let v = f.conjugate(&dvector![1.0, 2.0]).unwrap();
        assert!((v - 2.5).abs() < 1e-8);
    }

    #[test]
    fn convexity_on_random_triples() {
        let s = Space::euclidean(3);
        let f = ConvexFunction::sum(
            &s,
            vec![
                ConvexFunction::power_norm(&s, 3.0, 1.0).unwrap(),
                ConvexFunction::separable_power(&s, 1.5, dvector![1.0, 2.0, 0.5]).unwrap(),
            ],
        )
        .unwrap();
        let mut rng = seeded_rng(9);
        use rand::Rng;
        for _ in 0..100 {
            let x = s.random_element(&mut rng, 3.0);
            let y = s.random_element(&mut rng, 3.0);
            let t: f64 = rng.gen();
            let lhs = f.eval(&(&x * t + &y * (1.0 - t))).unwrap();
            let rhs = t * f.eval(&x).unwrap() + (1.0 - t) * f.eval(&y).unwrap();
            assert!(lhs <= rhs + 1e-9 * (1.0 + rhs.abs()));
        }
    }
}
