//! Linear maps, boundary pairs, conservative nonlinear maps and the
//! structural defect checks built on them.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::space::{Element, Space};

type VecFn = Arc<dyn Fn(&Element) -> Element + Send + Sync>;

#[derive(Clone)]
enum MapKind {
    Zero,
    Matrix { fwd: DMatrix<f64>, adj: DMatrix<f64> },
    Fn { fwd: VecFn, adj: VecFn },
}

/// A linear map between two spaces together with its adjoint with respect
/// to their Gram matrices.
#[derive(Clone)]
pub struct LinearMap {
    dim_in: usize,
    dim_out: usize,
    kind: MapKind,
}

impl fmt::Debug for LinearMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            MapKind::Zero => "zero",
            MapKind::Matrix { .. } => "matrix",
            MapKind::Fn { .. } => "matrix-free",
        };
        write!(f, "LinearMap({}x{}, {kind})", self.dim_out, self.dim_in)
    }
}

impl LinearMap {
    pub fn zero(domain: &Space, codomain: &Space) -> Self {
        LinearMap {
            dim_in: domain.dim(),
            dim_out: codomain.dim(),
            kind: MapKind::Zero,
        }
    }

    /// Map given by a matrix in coordinates; the adjoint is
    /// `G_dom⁻¹ Mᵀ G_cod`.
    pub fn from_matrix(domain: &Space, codomain: &Space, m: DMatrix<f64>) -> Result<Self> {
        check_dim(domain.dim(), m.ncols())?;
        check_dim(codomain.dim(), m.nrows())?;
        let adj = domain.gram_solve_matrix(&codomain.gram_apply_matrix(&m).transpose());
        Ok(LinearMap {
            dim_in: m.ncols(),
            dim_out: m.nrows(),
            kind: MapKind::Matrix { fwd: m, adj },
        })
    }

    /// Matrix-free map; the caller supplies the Gram adjoint.
    pub fn from_fns(
        dim_in: usize,
        dim_out: usize,
        apply: impl Fn(&Element) -> Element + Send + Sync + 'static,
        adjoint: impl Fn(&Element) -> Element + Send + Sync + 'static,
    ) -> Self {
        LinearMap {
            dim_in,
            dim_out,
            kind: MapKind::Fn {
                fwd: Arc::new(apply),
                adj: Arc::new(adjoint),
            },
        }
    }

    pub fn dim_in(&self) -> usize {
        self.dim_in
    }

    pub fn dim_out(&self) -> usize {
        self.dim_out
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.kind, MapKind::Zero)
    }

    pub fn apply(&self, x: &Element) -> Element {
        match &self.kind {
            MapKind::Zero => DVector::zeros(self.dim_out),
            MapKind::Matrix { fwd, .. } => fwd * x,
            MapKind::Fn { fwd, .. } => fwd(x),
        }
    }

    pub fn adjoint_apply(&self, y: &Element) -> Element {
        match &self.kind {
            MapKind::Zero => DVector::zeros(self.dim_in),
            MapKind::Matrix { adj, .. } => adj * y,
            MapKind::Fn { adj, .. } => adj(y),
        }
    }

    /// Dense coordinate matrix; matrix-free maps are materialized column by
    /// column.
    pub fn matrix(&self) -> DMatrix<f64> {
        match &self.kind {
            MapKind::Zero => DMatrix::zeros(self.dim_out, self.dim_in),
            MapKind::Matrix { fwd, .. } => fwd.clone(),
            MapKind::Fn { fwd, .. } => {
                let mut m = DMatrix::zeros(self.dim_out, self.dim_in);
                let mut e = DVector::zeros(self.dim_in);
                for j in 0..self.dim_in {
                    e[j] = 1.0;
                    m.set_column(j, &fwd(&e));
                    e[j] = 0.0;
                }
                m
            }
        }
    }

    /// Max of `|⟨y, Ax⟩ − ⟨A*y, x⟩| / (1 + ‖x‖‖y‖)` over the samples.
    pub fn adjoint_defect(&self, domain: &Space, codomain: &Space, pairs: &[(Element, Element)]) -> Result<f64> {
        let mut worst = 0.0f64;
        for (x, y) in pairs {
            domain.check(x)?;
            codomain.check(y)?;
            let lhs = codomain.dot(y, &self.apply(x));
            let rhs = domain.dot(&self.adjoint_apply(y), x);
            worst = worst.max((lhs - rhs).abs() / (1.0 + domain.norm(x) * codomain.norm(y)));
        }
        Ok(worst)
    }
}

/// Boundary operators `b₁: X → H₁`, `b₂: X → H₂`.
#[derive(Clone, Debug)]
pub struct BoundaryPair {
    pub b1: LinearMap,
    pub b2: LinearMap,
    pub h1: Space,
    pub h2: Space,
}

impl BoundaryPair {
    pub fn new(space: &Space, b1: LinearMap, h1: Space, b2: LinearMap, h2: Space) -> Result<Self> {
        for (b, h) in [(&b1, &h1), (&b2, &h2)] {
            check_dim(space.dim(), b.dim_in())?;
            check_dim(h.dim(), b.dim_out())?;
        }
        Ok(BoundaryPair { b1, b2, h1, h2 })
    }

    /// `b₁ = b₂ = 0` into one-dimensional trace spaces.
    pub fn zero(space: &Space) -> Self {
        let h = Space::euclidean(1);
        BoundaryPair {
            b1: LinearMap::zero(space, &h),
            b2: LinearMap::zero(space, &h),
            h1: h.clone(),
            h2: h,
        }
    }

    /// Point traces `b₁x = x[first]`, `b₂x = x[last]` into `R`.
    pub fn endpoint_traces(space: &Space, first: usize, last: usize) -> Result<Self> {
        let n = space.dim();
        if first >= n || last >= n {
            return Err(Error::InvalidArgument(format!("trace index out of range for dim {n}")));
        }
        let h = Space::euclidean(1);
        let mut m1 = DMatrix::zeros(1, n);
        m1[(0, first)] = 1.0;
        let mut m2 = DMatrix::zeros(1, n);
        m2[(0, last)] = 1.0;
        BoundaryPair::new(
            space,
            LinearMap::from_matrix(space, &h, m1)?,
            h.clone(),
            LinearMap::from_matrix(space, &h, m2)?,
            h,
        )
    }
}

/// A nonlinear map with `⟨Λx, x⟩ = 0`.
pub trait ConservativeOp: Send + Sync {
    fn apply(&self, x: &Element) -> Element;

    /// Gram adjoint of the Jacobian applied to `w`, when known in closed form.
    fn vjp(&self, _x: &Element, _w: &Element) -> Option<Element> {
        None
    }
}

struct FnOp<F>(F);

impl<F> ConservativeOp for FnOp<F>
where
    F: Fn(&Element) -> Element + Send + Sync,
{
    fn apply(&self, x: &Element) -> Element {
        (self.0)(x)
    }
}

struct LinearOp(LinearMap);

impl ConservativeOp for LinearOp {
    fn apply(&self, x: &Element) -> Element {
        self.0.apply(x)
    }

    fn vjp(&self, _x: &Element, w: &Element) -> Option<Element> {
        Some(self.0.adjoint_apply(w))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VjpMode {
    Analytic,
    FiniteDifference,
}

#[derive(Clone)]
pub struct ConservativeMap {
    space: Space,
    op: Option<Arc<dyn ConservativeOp>>,
    mode: VjpMode,
}

impl fmt::Debug for ConservativeMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.op {
            None => write!(f, "ConservativeMap(zero)"),
            Some(_) => write!(f, "ConservativeMap({:?})", self.mode),
        }
    }
}

impl ConservativeMap {
    pub fn zero(space: &Space) -> Self {
        ConservativeMap {
            space: space.clone(),
            op: None,
            mode: VjpMode::Analytic,
        }
    }

    /// Wraps an operator; `mode` records whether its `vjp` is analytic.
    pub fn new(space: &Space, op: impl ConservativeOp + 'static, mode: VjpMode) -> Self {
        ConservativeMap {
            space: space.clone(),
            op: Some(Arc::new(op)),
            mode,
        }
    }

    /// Closure without an analytic Jacobian; vjps use finite differences.
    pub fn from_fn(space: &Space, f: impl Fn(&Element) -> Element + Send + Sync + 'static) -> Self {
        Self::new(space, FnOp(f), VjpMode::FiniteDifference)
    }

    /// A linear skew map viewed as a conservative map.
    pub fn linear(space: &Space, k: LinearMap) -> Self {
        Self::new(space, LinearOp(k), VjpMode::Analytic)
    }

    pub fn space(&self) -> &Space {
        &self.space
    }

    pub fn is_zero(&self) -> bool {
        self.op.is_none()
    }

    pub fn vjp_mode(&self) -> VjpMode {
        self.mode
    }

    pub fn apply(&self, x: &Element) -> Element {
        match &self.op {
            None => self.space.zeros(),
            Some(op) => op.apply(x),
        }
    }

    /// `(DΛ(x))*w`, analytic when the operator provides it, otherwise a
    /// fourth-order central difference with `h = 1e-5·(1+‖x‖)`.
    pub fn vjp(&self, x: &Element, w: &Element) -> Element {
        match &self.op {
            None => self.space.zeros(),
            Some(op) => match op.vjp(x, w) {
                Some(v) => v,
                None => self.fd_vjp(op.as_ref(), x, w, 1e-5 * (1.0 + self.space.norm(x))),
            },
        }
    }

    pub fn vjp_fd(&self, x: &Element, w: &Element, h: f64) -> Result<Element> {
        if !(h > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "finite-difference step must be positive, got {h}"
            )));
        }
        self.space.check(x)?;
        self.space.check(w)?;
        Ok(match &self.op {
            None => self.space.zeros(),
            Some(op) => self.fd_vjp(op.as_ref(), x, w, h),
        })
    }

    /// Fourth-order central directional derivative `DΛ(x)·d`.
    pub fn jvp_fd(&self, x: &Element, d: &Element, h: f64) -> Element {
        match &self.op {
            None => self.space.zeros(),
            Some(op) => central4(op.as_ref(), x, d, h),
        }
    }

    fn fd_vjp(&self, op: &dyn ConservativeOp, x: &Element, w: &Element, h: f64) -> Element {
        let gw = self.space.gram_apply(w);
        let n = self.space.dim();
        let mut e = DVector::zeros(n);
        let mut c = DVector::zeros(n);
        for j in 0..n {
            e[j] = 1.0;
            c[j] = central4(op, x, &e, h).dot(&gw);
            e[j] = 0.0;
        }
        self.space.gram_solve(&c)
    }
}

fn central4(op: &dyn ConservativeOp, x: &Element, d: &Element, h: f64) -> Element {
    let at = |s: f64| op.apply(&(x + d * s));
    (at(-2.0 * h) - at(2.0 * h) + (at(h) - at(-h)) * 8.0) / (12.0 * h)
}

/// Max of `|⟨y, Bx⟩ + ⟨By, x⟩| / (1 + ‖x‖‖y‖)`.
pub fn skew_defect(space: &Space, b: &LinearMap, pairs: &[(Element, Element)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("no samples".into()));
    }
    let mut worst = 0.0f64;
    for (x, y) in pairs {
        space.check(x)?;
        space.check(y)?;
        let s = space.dot(y, &b.apply(x)) + space.dot(&b.apply(y), x);
        worst = worst.max(s.abs() / (1.0 + space.norm(x) * space.norm(y)));
    }
    Ok(worst)
}

/// Max of `|⟨x, Bx⟩ − ½(‖b₂x‖² − ‖b₁x‖²)| / (1 + ‖x‖²)`.
pub fn boundary_skew_defect(space: &Space, b: &LinearMap, bp: &BoundaryPair, samples: &[Element]) -> Result<f64> {
    let mut worst = 0.0f64;
    for x in samples {
        space.check(x)?;
        let lhs = space.dot(x, &b.apply(x));
        let rhs = 0.5 * (bp.h2.norm_sq(&bp.b2.apply(x)) - bp.h1.norm_sq(&bp.b1.apply(x)));
        worst = worst.max((lhs - rhs).abs() / (1.0 + space.norm_sq(x)));
    }
    Ok(worst)
}

/// Max of `|⟨Λx, x⟩| / (1 + ‖x‖²)`.
pub fn conservativity_defect(space: &Space, lam: &ConservativeMap, samples: &[Element]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("no samples".into()));
    }
    let mut worst = 0.0f64;
    for x in samples {
        space.check(x)?;
        let v = space.dot(&lam.apply(x), x);
        worst = worst.max(v.abs() / (1.0 + space.norm_sq(x)));
    }
    Ok(worst)
}

/// Consecutive pairs of the sample list, wrapping around.
pub fn pair_up(samples: &[Element]) -> Vec<(Element, Element)> {
    let n = samples.len();
    (0..n)
        .map(|i| (samples[i].clone(), samples[(i + 1) % n].clone()))
        .collect()
}
