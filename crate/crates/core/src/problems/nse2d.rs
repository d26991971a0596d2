//! Two-dimensional periodic Navier–Stokes on `[0, 2π]²`, pseudo-spectral with
//! 2/3-rule truncation.
//!
//! States are divergence-free, mean-zero velocities `u = (∂ᵧψ, −∂ₓψ)` stored
//! through the stream function `ψ = Σ aₖ cos(k·x) + bₖ sin(k·x)` over a
//! half-plane of wavenumbers with `|k₁|, |k₂| ≤ K = ⌊(N−1)/3⌋`, interleaved as
//! `(a₀, b₀, a₁, b₁, …)`. The Gram is the `L²` inner product of velocities.
//! The canonical equation is `0 = −νΔu + P[(u·∇)u] + f`.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::{Fft, FftPlanner};

use crate::convex::ConvexFunction;
use crate::error::{Error, Result};
use crate::evolution::PathProblem;
use crate::operators::{ConservativeMap, ConservativeOp, LinearMap, VjpMode};
use crate::space::{seeded_rng, Element, Space};
use crate::stationary::{SolveStatus, StationaryProblem};

/// Mode table and FFT plans for an `N × N` collocation grid.
#[derive(Clone)]
pub struct SpectralGrid {
    n: usize,
    modes: Vec<[i64; 2]>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for SpectralGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SpectralGrid({}², {} modes)", self.n, self.modes.len())
    }
}

impl SpectralGrid {
    pub fn new(n: usize) -> Result<Self> {
        if n < 4 {
            return Err(Error::InvalidArgument(format!("spectral grid needs N ≥ 4, got {n}")));
        }
        let k = ((n - 1) / 3) as i64;
        let mut modes = Vec::new();
        for k1 in 0..=k {
            for k2 in -k..=k {
                if k1 > 0 || k2 > 0 {
                    modes.push([k1, k2]);
                }
            }
        }
        let mut planner = FftPlanner::new();
        Ok(SpectralGrid {
            n,
            modes,
            fwd: planner.plan_fft_forward(n),
            inv: planner.plan_fft_inverse(n),
        })
    }

    /// Grid points per direction.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn cutoff(&self) -> i64 {
        ((self.n - 1) / 3) as i64
    }

    pub fn modes(&self) -> &[[i64; 2]] {
        &self.modes
    }

    pub fn dim(&self) -> usize {
        2 * self.modes.len()
    }

    /// Gram diagonal `2π²|k|²` (the `L²` norm of `∇^⊥cos(k·x)`).
    pub fn gram_weights(&self) -> DVector<f64> {
        DVector::from_fn(self.dim(), |i, _| 2.0 * PI * PI * k2(self.modes[i / 2]))
    }

    /// Index `(k₁ mod N)·N + (k₂ mod N)` in a row-major grid array.
    fn idx(&self, k1: i64, k2: i64) -> usize {
        let n = self.n as i64;
        (k1.rem_euclid(n) * n + k2.rem_euclid(n)) as usize
    }

    fn fft2(&self, data: &mut [Complex64], inverse: bool) {
        let n = self.n;
        let plan = if inverse { &self.inv } else { &self.fwd };
        for row in data.chunks_mut(n) {
            plan.process(row);
        }
        let mut col = vec![Complex64::new(0.0, 0.0); n];
        for j in 0..n {
            for i in 0..n {
                col[i] = data[i * n + j];
            }
            plan.process(&mut col);
            for i in 0..n {
                data[i * n + j] = col[i];
            }
        }
    }

    /// Grid values of `Σ mult(k)·ψ̂(k)e^{ik·x}` for the stream function with
    /// coordinates `x`.
    fn synth(&self, x: &Element, mult: impl Fn(f64, f64) -> Complex64) -> Vec<f64> {
        let mut data = vec![Complex64::new(0.0, 0.0); self.n * self.n];
        for (j, k) in self.modes.iter().enumerate() {
            let c = Complex64::new(0.5 * x[2 * j], -0.5 * x[2 * j + 1]);
            let (k1, k2) = (k[0] as f64, k[1] as f64);
            data[self.idx(k[0], k[1])] = mult(k1, k2) * c;
            data[self.idx(-k[0], -k[1])] = mult(-k1, -k2) * c.conj();
        }
        self.fft2(&mut data, true);
        data.iter().map(|z| z.re).collect()
    }

    /// Velocity components on the grid.
    pub fn velocity(&self, x: &Element) -> (Vec<f64>, Vec<f64>) {
        let i = Complex64::i();
        (self.synth(x, |_, k2| i * k2), self.synth(x, |k1, _| -i * k1))
    }

    /// `(∂ₓuₓ, ∂ᵧuₓ, ∂ₓuᵧ, ∂ᵧuᵧ)` on the grid.
    pub fn velocity_gradient(&self, x: &Element) -> [Vec<f64>; 4] {
        let r = |v: f64| Complex64::new(v, 0.0);
        [
            self.synth(x, |k1, k2| r(-k1 * k2)),
            self.synth(x, |_, k2| r(-k2 * k2)),
            self.synth(x, |k1, _| r(k1 * k1)),
            self.synth(x, |k1, k2| r(k1 * k2)),
        ]
    }

    fn spectrum(&self, field: &[f64]) -> Vec<Complex64> {
        let scale = 1.0 / (self.n * self.n) as f64;
        let mut data: Vec<Complex64> = field.iter().map(|&v| Complex64::new(v * scale, 0.0)).collect();
        self.fft2(&mut data, false);
        data
    }

    /// Coordinates of the Leray projection of a grid velocity field onto the
    /// retained modes; equivalently the Riesz representative of `v ↦ ∫w·v`.
    pub fn project_field(&self, wx: &[f64], wy: &[f64]) -> Element {
        let (sx, sy) = (self.spectrum(wx), self.spectrum(wy));
        let mut out = DVector::zeros(self.dim());
        for (j, k) in self.modes.iter().enumerate() {
            let id = self.idx(k[0], k[1]);
            let (k1, k2) = (k[0] as f64, k[1] as f64);
            let curl = Complex64::i() * (sy[id] * k1 - sx[id] * k2);
            let chi = curl / k2sum(k1, k2);
            out[2 * j] = 2.0 * chi.re;
            out[2 * j + 1] = -2.0 * chi.im;
        }
        out
    }

    /// Largest `|k·ŵ(k)|` and `|ŵ(0)|` over the grid spectrum of a field.
    pub fn divergence_and_mean(&self, wx: &[f64], wy: &[f64]) -> (f64, f64) {
        let (sx, sy) = (self.spectrum(wx), self.spectrum(wy));
        let n = self.n as i64;
        let mut div: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                let k1 = if i <= n / 2 { i } else { i - n } as f64;
                let k2 = if j <= n / 2 { j } else { j - n } as f64;
                let id = (i * n + j) as usize;
                div = div.max((sx[id] * k1 + sy[id] * k2).norm());
            }
        }
        (div, sx[0].norm().max(sy[0].norm()))
    }

    /// Coordinates of the Taylor–Green field `(sin x cos y, −cos x sin y)`,
    /// whose stream function is `½cos(x − y) − ½cos(x + y)`.
    pub fn taylor_green(&self) -> Element {
        let mut out = DVector::zeros(self.dim());
        for (j, k) in self.modes.iter().enumerate() {
            match k {
                [1, -1] => out[2 * j] = 0.5,
                [1, 1] => out[2 * j] = -0.5,
                _ => {}
            }
        }
        out
    }

    /// Physical grid coordinates `2πi/N`.
    pub fn points(&self) -> Vec<f64> {
        (0..self.n).map(|i| 2.0 * PI * i as f64 / self.n as f64).collect()
    }
}

fn k2(k: [i64; 2]) -> f64 {
    (k[0] * k[0] + k[1] * k[1]) as f64
}

fn k2sum(k1: f64, k2: f64) -> f64 {
    k1 * k1 + k2 * k2
}

/// Leray-projected convection `P[(u·∇)u]`.
struct Convection(Arc<SpectralGrid>);

impl ConservativeOp for Convection {
    fn apply(&self, x: &Element) -> Element {
        let g = &self.0;
        let (ux, uy) = g.velocity(x);
        let [dxux, dyux, dxuy, dyuy] = g.velocity_gradient(x);
        let m = ux.len();
        let wx: Vec<f64> = (0..m).map(|i| ux[i] * dxux[i] + uy[i] * dyux[i]).collect();
        let wy: Vec<f64> = (0..m).map(|i| ux[i] * dxuy[i] + uy[i] * dyuy[i]).collect();
        g.project_field(&wx, &wy)
    }

    /// `P[(∇u)ᵀw − (u·∇)w]`, using `div u = 0`.
    fn vjp(&self, x: &Element, w: &Element) -> Option<Element> {
        let g = &self.0;
        let (ux, uy) = g.velocity(x);
        let [dxux, dyux, dxuy, dyuy] = g.velocity_gradient(x);
        let (wx, wy) = g.velocity(w);
        let [dxwx, dywx, dxwy, dywy] = g.velocity_gradient(w);
        let m = ux.len();
        let vx: Vec<f64> = (0..m)
            .map(|i| dxux[i] * wx[i] + dxuy[i] * wy[i] - ux[i] * dxwx[i] - uy[i] * dywx[i])
            .collect();
        let vy: Vec<f64> = (0..m)
            .map(|i| dyux[i] * wx[i] + dyuy[i] * wy[i] - ux[i] * dxwy[i] - uy[i] * dywy[i])
            .collect();
        Some(g.project_field(&vx, &vy))
    }
}

/// Canonical forcing `f` in `0 = −νΔu + P[(u·∇)u] + f`.
#[derive(Clone, Debug)]
pub enum Forcing {
    Zero,
    /// `f = −2ν·u_TG`, with solution `u_TG`.
    TaylorGreen,
    /// Gaussian coefficients on modes with `|k|² ≤ 8`, scaled to `L²` norm `amp`.
    RandomSeeded {
        seed: u64,
        amp: f64,
    },
    /// Grid velocity field, row-major with the first index along `x`;
    /// must be mean-zero and divergence-free.
    Field {
        fx: Vec<f64>,
        fy: Vec<f64>,
    },
}

/// Small bounded perturbation `εAᵃ − εI` of the linear part: `Aᵃ` a random
/// skew map of unit norm added to `B`, `−εI` added to `φ`.
#[derive(Clone, Copy, Debug)]
pub struct Perturbation {
    pub eps: f64,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct Nse2dParams {
    /// Collocation points per direction.
    pub n: usize,
    pub nu: f64,
    pub forcing: Forcing,
    pub perturbation: Option<Perturbation>,
}

impl Default for Nse2dParams {
    fn default() -> Self {
        Nse2dParams {
            n: 32,
            nu: 1.0,
            forcing: Forcing::RandomSeeded { seed: 1, amp: 1.0 },
            perturbation: None,
        }
    }
}

#[derive(Clone, Debug)]
pub enum NseInitial {
    Zero,
    TaylorGreen,
    RandomSeeded { seed: u64, amp: f64 },
}

#[derive(Clone, Debug)]
pub struct Nse2d {
    pub params: Nse2dParams,
    pub grid: Arc<SpectralGrid>,
    pub problem: StationaryProblem,
}

#[derive(Clone, Debug)]
pub struct Nse2dEvolution {
    pub base: Nse2d,
    pub initial: NseInitial,
    pub problem: PathProblem,
}

impl Nse2dEvolution {
    /// `e^{−2νt}u_TG`, exact for Taylor–Green data without forcing.
    pub fn exact_taylor_green(&self, t: f64) -> Element {
        self.base.grid.taylor_green() * (-2.0 * self.base.params.nu * t).exp()
    }
}

fn random_coords(grid: &SpectralGrid, space: &Space, seed: u64, amp: f64) -> Element {
    let mut rng = seeded_rng(seed);
    let mut x = DVector::zeros(grid.dim());
    for (j, k) in grid.modes().iter().enumerate() {
        if k2(*k) <= 8.0 {
            let scale = 1.0 / k2(*k);
            x[2 * j] = rng.sample::<f64, _>(StandardNormal) * scale;
            x[2 * j + 1] = rng.sample::<f64, _>(StandardNormal) * scale;
        }
    }
    let norm = space.norm(&x);
    if norm > 0.0 {
        x *= amp / norm;
    }
    x
}

fn nse_space(grid: &SpectralGrid) -> Result<Space> {
    Space::with_diagonal_gram(grid.gram_weights())
}

pub fn build_nse2d_stationary(p: &Nse2dParams) -> Result<Nse2d> {
    if !(p.nu > 0.0) {
        return Err(Error::InvalidArgument(format!("NSE needs ν > 0, got {}", p.nu)));
    }
    let grid = Arc::new(SpectralGrid::new(p.n)?);
    let space = nse_space(&grid)?;
    let w = grid.gram_weights();
    let dim = grid.dim();
    let mut q = DMatrix::from_diagonal(&DVector::from_fn(dim, |i, _| p.nu * k2(grid.modes[i / 2]) * w[i]));
    let mut b = DMatrix::zeros(dim, dim);
    if let Some(pert) = p.perturbation {
        // The smallest eigenvalue of −Δ on the retained modes is 1.
        if !(pert.eps >= 0.0) || p.nu - pert.eps <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "perturbation needs 0 ≤ ε < ν for coercivity, got ε = {}, ν = {}",
                pert.eps, p.nu
            )));
        }
        q -= DMatrix::from_diagonal(&w) * pert.eps;
        let mut rng = seeded_rng(pert.seed);
        let s = DMatrix::from_fn(dim, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        let s = &s - s.transpose();
        // Antisymmetric in orthonormal coordinates y = G^{1/2}x, so
        // B = G^{−1/2}·S·G^{1/2} is Gram-skew with ‖B‖ = ε.
        let norm = s.clone().singular_values().max();
        for i in 0..dim {
            for j in 0..dim {
                b[(i, j)] = s[(i, j)] * (w[j] / w[i]).sqrt() * pert.eps / norm;
            }
        }
    }
    let phi = ConvexFunction::quadratic(&space, q, space.zeros(), 0.0)?;
    // Sign self-test on the linear part: with `f = −2ν·u_TG` the Stokes
    // residual `−νΔu_TG + f` must vanish.
    let tg = grid.taylor_green();
    let stokes = ConvexFunction::quadratic(
        &space,
        DMatrix::from_diagonal(&DVector::from_fn(dim, |i, _| p.nu * k2(grid.modes[i / 2]) * w[i])),
        space.zeros(),
        0.0,
    )?;
    let lin = stokes.grad_e(&tg).expect("quadratic") - space.gram_apply(&(&tg * (2.0 * p.nu)));
    if space.dual_norm(&lin) > 1e-10 * space.norm(&tg) {
        return Err(Error::Structure {
            what: "Stokes sign self-test".into(),
            defect: space.dual_norm(&lin),
            tol: 1e-10,
        });
    }
    let f = match &p.forcing {
        Forcing::Zero => space.zeros(),
        Forcing::TaylorGreen => grid.taylor_green() * (-2.0 * p.nu),
        Forcing::RandomSeeded { seed, amp } => random_coords(&grid, &space, *seed, *amp),
        Forcing::Field { fx, fy } => {
            let cells = p.n * p.n;
            if fx.len() != cells || fy.len() != cells {
                return Err(Error::Dimension {
                    expected: cells,
                    got: fx.len().min(fy.len()),
                });
            }
            let (div, mean) = grid.divergence_and_mean(fx, fy);
            let size = fx.iter().chain(fy).fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
            if mean > 1e-10 * size {
                return Err(Error::InvalidArgument(format!(
                    "forcing must be mean-zero, mean {mean:.3e}"
                )));
            }
            if div > 1e-10 * size {
                return Err(Error::InvalidArgument(format!(
                    "forcing must be divergence-free, |k·f̂| {div:.3e}"
                )));
            }
            grid.project_field(fx, fy)
        }
    };
    let lam = ConservativeMap::new(&space, Convection(grid.clone()), VjpMode::Analytic);
    let problem = StationaryProblem::new(&space, phi, LinearMap::from_matrix(&space, &space, b)?, lam, f)?;
    Ok(Nse2d {
        params: p.clone(),
        grid,
        problem,
    })
}

pub fn build_nse2d_evolution(
    p: &Nse2dParams,
    initial: NseInitial,
    horizon: f64,
    steps: usize,
) -> Result<Nse2dEvolution> {
    let base = build_nse2d_stationary(p)?;
    let space = base.problem.space().clone();
    let v0 = match &initial {
        NseInitial::Zero => space.zeros(),
        NseInitial::TaylorGreen => base.grid.taylor_green(),
        NseInitial::RandomSeeded { seed, amp } => random_coords(&base.grid, &space, *seed, *amp),
    };
    let problem = PathProblem::new(base.problem.clone(), v0, horizon, steps)?;
    Ok(Nse2dEvolution { base, initial, problem })
}

/// Outcome of the vorticity Picard oracle.
#[derive(Clone, Debug)]
pub struct PicardSpectral {
    pub x: Element,
    pub iterations: usize,
    pub increment: f64,
    pub status: SolveStatus,
}

/// Independent fixed point in vorticity form,
/// `ω̂ ← −(u·∇ω + curl f)^/(ν|k|²)`, on the full complex spectrum of the
/// retained modes. Ignores any perturbation.
pub fn picard_spectral(nse: &Nse2d, tol: f64, max_iter: usize) -> PicardSpectral {
    let g = &*nse.grid;
    let nu = nse.params.nu;
    let n = g.n;
    let kc = g.cutoff();
    let retained: Vec<(i64, i64)> = (-kc..=kc)
        .flat_map(|a| (-kc..=kc).map(move |b| (a, b)))
        .filter(|&(a, b)| a != 0 || b != 0)
        .collect();
    // Vorticity of the forcing, ω = −Δχ for the stream function χ of f.
    let stream_hat = |x: &Element| {
        let mut s = vec![Complex64::new(0.0, 0.0); n * n];
        for (j, k) in g.modes.iter().enumerate() {
            let c = Complex64::new(0.5 * x[2 * j], -0.5 * x[2 * j + 1]);
            s[g.idx(k[0], k[1])] = c;
            s[g.idx(-k[0], -k[1])] = c.conj();
        }
        s
    };
    let curl_f: Vec<Complex64> = stream_hat(nse.problem.f())
        .iter()
        .enumerate()
        .map(|(id, c)| {
            let (k1, k2) = wavenumber(id, n);
            c * k2sum(k1, k2)
        })
        .collect();
    let mut omega = vec![Complex64::new(0.0, 0.0); n * n];
    let mut increment = f64::INFINITY;
    let mut it = 0;
    while it < max_iter {
        it += 1;
        let field = |mult: &dyn Fn(f64, f64) -> Complex64| {
            let mut d: Vec<Complex64> = omega
                .iter()
                .enumerate()
                .map(|(id, w)| {
                    let (k1, k2) = wavenumber(id, n);
                    let kk = k2sum(k1, k2);
                    if kk == 0.0 {
                        Complex64::new(0.0, 0.0)
                    } else {
                        mult(k1, k2) * w
                    }
                })
                .collect();
            g.fft2(&mut d, true);
            d.iter().map(|z| z.re).collect::<Vec<f64>>()
        };
        let i = Complex64::i();
        let ux = field(&|k1, k2| i * k2 / k2sum(k1, k2));
        let uy = field(&|k1, k2| -i * k1 / k2sum(k1, k2));
        let wx = field(&|k1, _| i * k1);
        let wy = field(&|_, k2| i * k2);
        let adv: Vec<f64> = (0..n * n).map(|p| ux[p] * wx[p] + uy[p] * wy[p]).collect();
        let adv_hat = g.spectrum(&adv);
        let mut next = vec![Complex64::new(0.0, 0.0); n * n];
        let mut diff: f64 = 0.0;
        let mut size: f64 = 0.0;
        for &(a, b) in &retained {
            let id = g.idx(a, b);
            let kk = k2sum(a as f64, b as f64);
            next[id] = -(adv_hat[id] + curl_f[id]) / (nu * kk);
            diff = diff.max((next[id] - omega[id]).norm());
            size = size.max(next[id].norm());
        }
        omega = next;
        increment = diff / size.max(1e-300);
        if !increment.is_finite() || increment > 1e6 {
            break;
        }
        if increment <= tol {
            break;
        }
    }
    let mut x = DVector::zeros(g.dim());
    for (j, k) in g.modes.iter().enumerate() {
        let psi = omega[g.idx(k[0], k[1])] / k2(*k);
        x[2 * j] = 2.0 * psi.re;
        x[2 * j + 1] = -2.0 * psi.im;
    }
    let status = if increment <= tol {
        SolveStatus::Converged
    } else if increment.is_finite() && increment <= 1e6 {
        SolveStatus::MaxIter
    } else {
        SolveStatus::Failed
    };
    PicardSpectral {
        x,
        iterations: it,
        increment,
        status,
    }
}

fn wavenumber(id: usize, n: usize) -> (f64, f64) {
    let (i, j) = ((id / n) as i64, (id % n) as i64);
    let n = n as i64;
    let w = |v: i64| if v <= n / 2 { v } else { v - n } as f64;
    (w(i), w(j))
}
