//! Evolutions `u̇ + Bu + Λu + ∂φ(u) + f ∋ 0`, `u(0) = v₀`, solved by
//! minimizing a discrete path certificate.
//!
//! With `h = T/N`, backward differences `u̇ₖ = (uₖ − uₖ₋₁)/h` and the stage
//! Lagrangian `Lₖ(x, p) = ψₖ(x) + ψₖ*(−Bx − p)`, `ψₖ = φₖ + ⟨f, ·⟩`:
//!
//! * `J(u) = Σₖ h·Lₖ(uₖ, Λuₖ + u̇ₖ) + ℓ(u₀, u_N)` is the discrete path
//!   functional with the initial-value boundary Lagrangian `ℓ`;
//! * `C(u) = Σₖ gapₖ + ‖u₀ − v₀‖²` with
//!   `gapₖ = h·[Lₖ(uₖ, Λuₖ + u̇ₖ) + ⟨uₖ, u̇ₖ⟩] ≥ 0` is the certificate that is
//!   minimized. `C = J + ½Σ‖uₖ − uₖ₋₁‖²`, and `C = 0` exactly on the
//!   implicit Euler path.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::convex::ConvexFunction;
use crate::error::{check_dim, Error, Result};
use crate::lagrangian::{BoundaryLagrangian, Lagrangian, RegPreset};
use crate::optim::{lbfgs, Geometry, LbfgsOptions, LbfgsStatus};
use crate::space::{Element, Space};
use crate::stationary::{MinimizeOptions, SolveStatus, StationaryProblem};

#[derive(Clone, Debug)]
pub struct PathProblem {
    stages: Vec<StationaryProblem>,
    v0: Element,
    horizon: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiscretePath {
    pub nodes: Vec<Element>,
    pub h: f64,
}

impl DiscretePath {
    pub fn steps(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.h
    }

    pub fn last(&self) -> &Element {
        self.nodes.last().expect("paths have at least two nodes")
    }

    /// Backward-difference velocity at node `k ≥ 1`.
    pub fn velocity(&self, k: usize) -> Element {
        (&self.nodes[k] - &self.nodes[k - 1]) / self.h
    }
}

#[derive(Clone, Debug)]
pub struct PathReport {
    pub path: DiscretePath,
    pub certificate: f64,
    /// `gapₖ` for `k = 1..N`.
    pub step_gaps: Vec<f64>,
    pub initial_defect: f64,
    pub energy_defect: f64,
    pub iterations: usize,
    pub history: Vec<(f64, f64)>,
    pub status: SolveStatus,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct PathOptions {
    pub max_iter: usize,
    /// Dual-norm gradient tolerance; defaults to `1e-12·(1 + ‖v₀‖²)`.
    pub gtol: Option<f64>,
    pub initial: Option<DiscretePath>,
}

impl Default for PathOptions {
    fn default() -> Self {
        PathOptions {
            max_iter: 5000,
            gtol: None,
            initial: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LambdaFlowReport {
    pub schedule: Vec<f64>,
    pub reports: Vec<PathReport>,
    /// `max_k ‖u̇ₖ‖ / ‖u̇₁‖` per schedule entry.
    pub velocity_ratios: Vec<f64>,
    pub warnings: Vec<String>,
}

impl LambdaFlowReport {
    pub fn certificates(&self) -> Vec<f64> {
        self.reports.iter().map(|r| r.certificate).collect()
    }

    pub fn final_path(&self) -> &DiscretePath {
        &self.reports.last().expect("nonempty schedule").path
    }
}

impl PathProblem {
    /// Time-independent data: every step uses `base`.
    pub fn new(base: StationaryProblem, v0: Element, horizon: f64, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidArgument("need at least one time step".into()));
        }
        Self::time_dependent(vec![base; steps], v0, horizon)
    }

    /// One stationary problem per step `k = 1..N`, evaluated at `t = k·h`.
    pub fn time_dependent(stages: Vec<StationaryProblem>, v0: Element, horizon: f64) -> Result<Self> {
        let first = stages
            .first()
            .ok_or_else(|| Error::InvalidArgument("need at least one time step".into()))?;
        let n = first.space().dim();
        for s in &stages {
            check_dim(n, s.space().dim())?;
        }
        first.space().check(&v0)?;
        if !(horizon > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        Ok(PathProblem { stages, v0, horizon })
    }

    pub fn space(&self) -> &Space {
        self.stages[0].space()
    }

    pub fn steps(&self) -> usize {
        self.stages.len()
    }

    pub fn h(&self) -> f64 {
        self.horizon / self.stages.len() as f64
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn v0(&self) -> &Element {
        &self.v0
    }

    pub fn stage(&self, k: usize) -> &StationaryProblem {
        &self.stages[k - 1]
    }

    fn lagrangians(&self) -> Vec<Lagrangian> {
        self.stages.iter().map(|s| s.lagrangian().clone()).collect()
    }

    fn check_path(&self, path: &DiscretePath) -> Result<()> {
        check_dim(self.steps() + 1, path.nodes.len())?;
        for u in &path.nodes {
            self.space().check(u)?;
        }
        if (path.h - self.h()).abs() > 1e-12 * self.h() {
            return Err(Error::InvalidArgument(format!(
                "path step {} differs from problem step {}",
                path.h,
                self.h()
            )));
        }
        Ok(())
    }

    /// The constant path `uₖ = v₀`.
    pub fn constant_path(&self) -> DiscretePath {
        DiscretePath {
            nodes: vec![self.v0.clone(); self.steps() + 1],
            h: self.h(),
        }
    }

    /// `ℓ(r, s) = ½‖r‖² − 2⟨v₀, r⟩ + ‖v₀‖² + ½‖s‖²`.
    pub fn boundary_lagrangian(&self) -> Result<BoundaryLagrangian> {
        BoundaryLagrangian::initial_value(self.space(), self.space(), &self.v0)
    }

    /// `Σₖ h·Lₖ(uₖ, Λuₖ + u̇ₖ) + ℓ(u₀, u_N)`.
    pub fn path_functional(&self, path: &DiscretePath) -> Result<f64> {
        self.check_path(path)?;
        let h = path.h;
        let mut total = 0.0;
        for k in 1..=self.steps() {
            let st = self.stage(k);
            let u = &path.nodes[k];
            total += h * st.lagrangian().eval(u, &(st.lam().apply(u) + path.velocity(k)))?;
        }
        Ok(total + self.boundary_lagrangian()?.eval(&path.nodes[0], path.last())?)
    }

    /// Per-step gaps `h·[Lₖ(uₖ, Λuₖ + u̇ₖ) + ⟨uₖ, u̇ₖ⟩]`.
    pub fn step_gaps(&self, path: &DiscretePath) -> Result<Vec<f64>> {
        self.check_path(path)?;
        step_gaps_with(&self.lagrangians(), &self.stages, path)
    }

    /// `Σₖ gapₖ + ‖u₀ − v₀‖²`.
    pub fn certificate(&self, path: &DiscretePath) -> Result<f64> {
        let gaps = self.step_gaps(path)?;
        Ok(gaps.iter().sum::<f64>() + self.space().norm_sq(&(&path.nodes[0] - &self.v0)))
    }

    /// `max_k |‖uₖ‖² − ‖v₀‖² + 2Σ_{j≤k} h·Lⱼ| / max(‖v₀‖², 1e-300)`; zero
    /// for the zero path.
    pub fn energy_identity_defect(&self, path: &DiscretePath) -> Result<f64> {
        self.check_path(path)?;
        energy_defect_with(&self.lagrangians(), &self.stages, &self.v0, path)
    }

    /// Joint quasi-Newton minimization of the path certificate over all
    /// nodes.
    pub fn solve_path_minimize(&self, opts: &PathOptions) -> Result<PathReport> {
        self.minimize_with(&self.lagrangians(), None, opts)
    }

    fn minimize_with(&self, lags: &[Lagrangian], reg: Option<(f64, f64)>, opts: &PathOptions) -> Result<PathReport> {
        let space = self.space().clone();
        let n = space.dim();
        let nsteps = self.steps();
        let h = self.h();
        let init = match &opts.initial {
            Some(p) => {
                self.check_path(p)?;
                p.clone()
            }
            None => self.constant_path(),
        };
        let z0 = pack(&init);
        let precond = ModalPreconditioner::new(&self.stages[0], nsteps, h, reg);
        let apply = |g: &Element| precond.apply(g);
        let norm = |g: &Element| -> f64 {
            (0..=nsteps)
                .map(|k| {
                    let gk = g.rows(k * n, n).into_owned();
                    gk.dot(&space.gram_solve(&gk))
                })
                .sum::<f64>()
                .sqrt()
        };
        let geom = Geometry {
            precondition: Some(&apply),
            norm: &norm,
        };
        let scale = 1.0 + space.norm_sq(&self.v0);
        let lbfgs_opts = LbfgsOptions {
            max_iter: opts.max_iter,
            gtol: opts.gtol.unwrap_or(1e-12 * scale),
            memory: 20,
            ..Default::default()
        };
        let mut obj = |z: &Element| certificate_grad(lags, &self.stages, &self.v0, &unpack(z, n, h));
        let out = lbfgs(&mut obj, z0, &lbfgs_opts, &geom)?;
        let path = unpack(&out.x, n, h);
        let step_gaps = step_gaps_with(lags, &self.stages, &path)?;
        let initial_defect = space.norm(&(&path.nodes[0] - &self.v0));
        let certificate = step_gaps.iter().sum::<f64>() + initial_defect * initial_defect;
        let status = match out.status {
            LbfgsStatus::Converged | LbfgsStatus::TargetReached => SolveStatus::Converged,
            LbfgsStatus::MaxIter => SolveStatus::MaxIter,
            LbfgsStatus::LineSearchFailed if certificate <= 1e-6 * scale => SolveStatus::Converged,
            LbfgsStatus::LineSearchFailed => SolveStatus::Failed,
        };
        let mut warnings = Vec::new();
        if out.resets > 0 {
            warnings.push(format!("{} non-descent directions reset", out.resets));
        }
        Ok(PathReport {
            energy_defect: energy_defect_with(lags, &self.stages, &self.v0, &path)?,
            path,
            certificate,
            step_gaps,
            initial_defect,
            iterations: out.iterations,
            history: out.history,
            status,
            warnings,
        })
    }

    /// Implicit Euler: each step solves
    /// `(uₖ − uₖ₋₁)/h + Buₖ + Λuₖ + ∂φₖ(uₖ) + f ∋ 0` with the stationary
    /// solver.
    pub fn solve_marching_prox(&self) -> Result<PathReport> {
        self.march(&|st: &StationaryProblem| Ok(st.phi().clone()))
    }

    fn march(&self, modify: &dyn Fn(&StationaryProblem) -> Result<ConvexFunction>) -> Result<PathReport> {
        let space = self.space().clone();
        let h = self.h();
        let mut nodes = vec![self.v0.clone()];
        let mut iterations = 0;
        let mut history = Vec::new();
        for k in 1..=self.steps() {
            let st = self.stage(k);
            let prev = nodes.last().expect("nonempty").clone();
            let phi = modify(st)?;
            let inertia = ConvexFunction::quadratic(&space, space.gram_matrix() / h, space.zeros(), 0.0)?;
            let phi = ConvexFunction::sum(&space, vec![phi, inertia])?;
            let f = st.f() - &prev / h;
            let step = StationaryProblem::new(&space, phi, st.b().clone(), st.lam().clone(), f)?;
            let rep = step.solve_minimize(&MinimizeOptions {
                initial: Some(prev),
                estimate_residual_constant: false,
                ..Default::default()
            })?;
            if rep.status != SolveStatus::Converged || rep.inclusion_residual > 1e-8 {
                return Err(Error::NotConverged {
                    what: format!("implicit step {k} ({})", rep.status.as_str()),
                    gap: rep.inclusion_residual,
                });
            }
            iterations += rep.iterations;
            history.push((rep.certificate, rep.inclusion_residual));
            nodes.push(rep.x);
        }
        let path = DiscretePath { nodes, h };
        let lags = self.lagrangians();
        let step_gaps = step_gaps_with(&lags, &self.stages, &path)?;
        Ok(PathReport {
            certificate: step_gaps.iter().sum(),
            energy_defect: energy_defect_with(&lags, &self.stages, &self.v0, &path)?,
            step_gaps,
            path,
            initial_defect: 0.0,
            iterations,
            history,
            status: SolveStatus::Converged,
            warnings: Vec::new(),
        })
    }

    /// Regularized Lagrangians `Lₖ ⋆ T_λ` with the proximal preset.
    pub fn regularized_lagrangians(&self, lambda: f64) -> Result<Vec<Lagrangian>> {
        self.stages
            .iter()
            .map(|s| Lagrangian::regularize_preset(s.lagrangian(), RegPreset::Proximal(lambda)))
            .collect()
    }

    /// Path minimization with each stage Lagrangian replaced by its
    /// λ-regularization, for every λ of a decreasing schedule. Each solve
    /// is warm-started from the previous one.
    pub fn lambda_flow(&self, schedule: &[f64], opts: &PathOptions) -> Result<LambdaFlowReport> {
        if schedule.is_empty() || schedule.iter().any(|l| !(*l > 0.0)) {
            return Err(Error::InvalidArgument(
                "λ-schedule must be nonempty and positive".into(),
            ));
        }
        if schedule.windows(2).any(|w| !(w[1] < w[0])) {
            return Err(Error::InvalidArgument("λ-schedule must be strictly decreasing".into()));
        }
        // v₀ must lie where ∂φ is finite.
        let sg = self.stages[0].phi().subgradient(&self.v0)?;
        if !sg.value.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument("v₀ is outside the domain of ∂φ".into()));
        }
        let mut reports: Vec<PathReport> = Vec::new();
        let mut velocity_ratios = Vec::new();
        let mut warnings = Vec::new();
        for &lambda in schedule {
            let lags = self.regularized_lagrangians(lambda)?;
            let warm = PathOptions {
                initial: reports.last().map(|r| r.path.clone()).or_else(|| opts.initial.clone()),
                ..opts.clone()
            };
            let rep = self.minimize_with(&lags, Some((lambda, lambda)), &warm)?;
            velocity_ratios.push(velocity_ratio(&self.space().clone(), &rep.path));
            reports.push(rep);
        }
        let certs: Vec<f64> = reports.iter().map(|r| r.certificate).collect();
        if certs.len() > 1 && certs.windows(2).all(|w| w[1] >= w[0]) {
            warnings.push("certificates did not decrease along the λ-schedule".to_string());
        }
        Ok(LambdaFlowReport {
            schedule: schedule.to_vec(),
            reports,
            velocity_ratios,
            warnings,
        })
    }

    /// Implicit Euler for the λ-regularized stages, where `φ` is replaced
    /// by its Moreau envelope; requires `B = 0`.
    pub fn solve_marching_regularized(&self, lambda: f64) -> Result<PathReport> {
        if self.stages.iter().any(|s| !s.b().is_zero()) {
            return Err(Error::InvalidArgument("regularized marching needs B = 0".into()));
        }
        let mut rep = self.march(&|st: &StationaryProblem| st.phi().envelope(lambda))?;
        let lags = self.regularized_lagrangians(lambda)?;
        rep.step_gaps = step_gaps_with(&lags, &self.stages, &rep.path)?;
        rep.certificate = rep.step_gaps.iter().sum();
        rep.energy_defect = energy_defect_with(&lags, &self.stages, &self.v0, &rep.path)?;
        Ok(rep)
    }
}

/// `max_k ‖u̇ₖ‖ / ‖u̇₁‖`, or 0 for a stationary path.
pub fn velocity_ratio(space: &Space, path: &DiscretePath) -> f64 {
    let v1 = space.norm(&path.velocity(1));
    if v1 == 0.0 {
        return 0.0;
    }
    (1..=path.steps())
        .map(|k| space.norm(&path.velocity(k)))
        .fold(0.0, f64::max)
        / v1
}

fn pack(path: &DiscretePath) -> Element {
    let n = path.nodes[0].len();
    let mut z = DVector::zeros(n * path.nodes.len());
    for (k, u) in path.nodes.iter().enumerate() {
        z.rows_mut(k * n, n).copy_from(u);
    }
    z
}

fn unpack(z: &Element, n: usize, h: f64) -> DiscretePath {
    DiscretePath {
        nodes: (0..z.len() / n).map(|k| z.rows(k * n, n).into_owned()).collect(),
        h,
    }
}

fn step_gaps_with(lags: &[Lagrangian], stages: &[StationaryProblem], path: &DiscretePath) -> Result<Vec<f64>> {
    let space = stages[0].space();
    let h = path.h;
    (1..path.nodes.len())
        .map(|k| {
            let u = &path.nodes[k];
            let v = path.velocity(k);
            let l = lags[k - 1].eval(u, &(stages[k - 1].lam().apply(u) + &v))?;
            Ok(h * (l + space.dot(u, &v)))
        })
        .collect()
}

fn energy_defect_with(
    lags: &[Lagrangian],
    stages: &[StationaryProblem],
    v0: &Element,
    path: &DiscretePath,
) -> Result<f64> {
    let space = stages[0].space();
    let e0 = space.norm_sq(v0);
    let mut acc = 0.0;
    let mut worst = 0.0f64;
    for k in 1..path.nodes.len() {
        let u = &path.nodes[k];
        acc += path.h * lags[k - 1].eval(u, &(stages[k - 1].lam().apply(u) + path.velocity(k)))?;
        worst = worst.max((space.norm_sq(u) - e0 + 2.0 * acc).abs());
    }
    Ok(if e0 > 0.0 { worst / e0 } else { worst })
}

/// Certificate and its Euclidean gradient with respect to all nodes.
fn certificate_grad(
    lags: &[Lagrangian],
    stages: &[StationaryProblem],
    v0: &Element,
    path: &DiscretePath,
) -> Result<(f64, Element)> {
    let space = stages[0].space();
    let n = space.dim();
    let h = path.h;
    let nodes = &path.nodes;
    let mut g = DVector::zeros(n * nodes.len());
    let d0 = &nodes[0] - v0;
    let mut value = space.norm_sq(&d0);
    g.rows_mut(0, n).copy_from(&(space.gram_apply(&d0) * 2.0));
    for k in 1..nodes.len() {
        let (u, prev) = (&nodes[k], &nodes[k - 1]);
        let lam = stages[k - 1].lam();
        let v = (u - prev) / h;
        let (l, gx, gp) = lags[k - 1].eval_grad_unchecked(u, &(lam.apply(u) + &v))?;
        value += h * (l + space.dot(u, &v));
        let mut gu = gx * h + &gp + space.gram_apply(&(u * 2.0 - prev));
        if !lam.is_zero() {
            gu += space.gram_apply(&lam.vjp(u, &space.gram_solve(&gp))) * h;
        }
        let gprev = -(gp + space.gram_apply(u));
        let mut blk = g.rows_mut(k * n, n);
        blk += gu;
        let mut blk = g.rows_mut((k - 1) * n, n);
        blk += gprev;
    }
    Ok((value, g))
}

/// Inverse of the certificate Hessian for `B = Λ = 0` and the quadratic
/// part of `φ`: in the Gram-orthonormal eigenbasis of `Qv = μGv` it is a
/// tridiagonal matrix over time per mode.
struct ModalPreconditioner {
    n: usize,
    steps: usize,
    /// Columns are Gram-orthonormal modes; `None` for the diagonal case
    /// with `v = G^{-1/2}`.
    basis: Option<DMatrix<f64>>,
    inv_sqrt_gram: Option<DVector<f64>>,
    /// Per-mode LDLᵀ factors of the time tridiagonal: (diag, sub-diag ratio).
    factors: Vec<(Vec<f64>, Vec<f64>)>,
}

impl ModalPreconditioner {
    fn new(stage: &StationaryProblem, steps: usize, h: f64, reg: Option<(f64, f64)>) -> Self {
        let space = stage.space();
        let n = space.dim();
        let q = stage.phi().quadratic_model().unwrap_or_else(|| space.gram_matrix());
        let q_diag = (0..n).all(|i| (0..n).all(|j| i == j || q[(i, j)] == 0.0));
        let (mu, basis, inv_sqrt_gram) = match (q_diag, space.gram_diagonal()) {
            (true, Some(w)) => {
                let mu = DVector::from_fn(n, |i, _| q[(i, i)] / w[i]);
                (mu, None, Some(w.map(|v| 1.0 / v.sqrt())))
            }
            _ => {
                let chol = Cholesky::new(space.gram_matrix()).expect("Gram is SPD");
                let li = chol.l().try_inverse().expect("invertible factor");
                let m = &li * &q * li.transpose();
                let eig = ((&m + m.transpose()) * 0.5).symmetric_eigen();
                let v = li.transpose() * eig.eigenvectors;
                (eig.eigenvalues, Some(v), None)
            }
        };
        let mu_max = mu.amax().max(1e-300);
        let factors = mu
            .iter()
            .map(|&m| {
                let m = m.max(1e-10 * mu_max).max(1e-300);
                let (a, c) = match reg {
                    None => (m, 1.0 / m),
                    Some((alpha, beta)) => (m / (1.0 + alpha * m), 1.0 / m + beta),
                };
                let off = -1.0 - c / h;
                let diag: Vec<f64> = (0..=steps)
                    .map(|k| {
                        if k == 0 {
                            2.0 + c / h
                        } else if k == steps {
                            h * a + 2.0 + c / h
                        } else {
                            h * a + 2.0 + 2.0 * c / h
                        }
                    })
                    .collect();
                ldl_tridiagonal(&diag, off)
            })
            .collect();
        ModalPreconditioner {
            n,
            steps,
            basis,
            inv_sqrt_gram,
            factors,
        }
    }

    fn apply(&self, g: &Element) -> Element {
        let (n, m) = (self.n, self.steps + 1);
        // Modal coefficients, laid out mode-major.
        let mut c = DMatrix::zeros(n, m);
        for k in 0..m {
            let gk = g.rows(k * n, n);
            let ck = match (&self.basis, &self.inv_sqrt_gram) {
                (Some(v), _) => v.tr_mul(&gk),
                (None, Some(s)) => gk.component_mul(s),
                _ => unreachable!("one representation is always set"),
            };
            c.set_column(k, &ck);
        }
        for (i, (d, l)) in self.factors.iter().enumerate() {
            let mut row: Vec<f64> = c.row(i).iter().copied().collect();
            ldl_solve(d, l, &mut row);
            for k in 0..m {
                c[(i, k)] = row[k];
            }
        }
        let mut out = DVector::zeros(n * m);
        for k in 0..m {
            let ck = c.column(k);
            let uk = match (&self.basis, &self.inv_sqrt_gram) {
                (Some(v), _) => v * ck,
                (None, Some(s)) => ck.component_mul(s),
                _ => unreachable!("one representation is always set"),
            };
            out.rows_mut(k * n, n).copy_from(&uk);
        }
        out
    }
}

/// LDLᵀ of a symmetric tridiagonal matrix with constant off-diagonal.
fn ldl_tridiagonal(diag: &[f64], off: f64) -> (Vec<f64>, Vec<f64>) {
    let m = diag.len();
    let mut d = vec![0.0; m];
    let mut l = vec![0.0; m];
    d[0] = diag[0];
    for k in 1..m {
        l[k] = off / d[k - 1];
        d[k] = diag[k] - l[k] * off;
    }
    (d, l)
}

fn ldl_solve(d: &[f64], l: &[f64], x: &mut [f64]) {
    let m = d.len();
    for k in 1..m {
        x[k] -= l[k] * x[k - 1];
    }
    for k in 0..m {
        x[k] /= d[k];
    }
    for k in (0..m - 1).rev() {
        x[k] -= l[k + 1] * x[k + 1];
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::{ConservativeMap, LinearMap};
    use nalgebra::{dmatrix, dvector};

    fn scalar_flow(a: f64, v0: f64, horizon: f64, steps: usize) -> PathProblem {
        let s = Space::euclidean(1);
        let phi = ConvexFunction::quadratic(&s, dmatrix![a], s.zeros(), 0.0).unwrap();
        let st =
            StationaryProblem::new(&s, phi, LinearMap::zero(&s, &s), ConservativeMap::zero(&s), s.zeros()).unwrap();
        PathProblem::new(st, dvector![v0], horizon, steps).unwrap()
    }

    #[test]
    fn single_step_example() {
        let pp = scalar_flow(1.0, 1.0, 1.0, 1);
        let path = DiscretePath {
            nodes: vec![dvector![1.0], dvector![0.5]],
            h: 1.0,
        };
        assert_eq!(pp.certificate(&path).unwrap(), 0.0);
        assert_eq!(pp.path_functional(&path).unwrap(), -0.125);
        let rep = pp.solve_path_minimize(&PathOptions::default()).unwrap();
        assert!((rep.path.nodes[1][0] - 0.5).abs() < 1e-10);
        assert!((rep.path.nodes[0][0] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn zero_data_gives_zero_path() {
        let pp = scalar_flow(2.0, 0.0, 1.0, 4);
        let path = pp.constant_path();
        assert_eq!(pp.certificate(&path).unwrap(), 0.0);
        assert_eq!(pp.path_functional(&path).unwrap(), 0.0);
        assert_eq!(pp.energy_identity_defect(&path).unwrap(), 0.0);
    }

    #[test]
    fn linear_flow_matches_resolvent_recursion() {
        let (a, h) = (3.0, 0.05);
        let pp = scalar_flow(a, 1.0, 1.0, 20);
        let march = pp.solve_marching_prox().unwrap();
        let joint = pp.solve_path_minimize(&PathOptions::default()).unwrap();
        let mut u = 1.0;
        for k in 1..=20 {
            u /= 1.0 + h * a;
            assert!((march.path.nodes[k][0] - u).abs() < 1e-12);
            assert!((joint.path.nodes[k][0] - u).abs() < 1e-9);
        }
        assert!(joint.step_gaps.iter().all(|g| *g >= -1e-12));
    }

    #[test]
    fn regularized_quadratic_flow_uses_yosida_rate() {
        let (a, lambda, h) = (4.0, 0.1, 0.1);
        let pp = scalar_flow(a, 1.0, 1.0, 10);
        let flow = pp.lambda_flow(&[lambda], &PathOptions::default()).unwrap();
        let march = pp.solve_marching_regularized(lambda).unwrap();
        let rate = a / (1.0 + lambda * a);
        let mut u = 1.0;
        for k in 1..=10 {
            u /= 1.0 + h * rate;
            assert!((march.path.nodes[k][0] - u).abs() < 1e-10);
            assert!((flow.final_path().nodes[k][0] - u).abs() < 1e-8);
        }
    }

    #[test]
    fn preconditioner_inverts_linear_hessian() {
        // For a diagonal quadratic flow the modal preconditioner is exact, so
        // one preconditioned step lands on the minimizer.
        let s = Space::with_diagonal_gram(dvector![0.5, 2.0]).unwrap();
        let phi = ConvexFunction::quadratic(&s, DMatrix::from_diagonal(&dvector![1.0, 6.0]), s.zeros(), 0.0).unwrap();
        let st =
            StationaryProblem::new(&s, phi, LinearMap::zero(&s, &s), ConservativeMap::zero(&s), s.zeros()).unwrap();
        let pp = PathProblem::new(st, dvector![1.0, -1.0], 0.5, 5).unwrap();
        let rep = pp.solve_path_minimize(&PathOptions::default()).unwrap();
        assert!(rep.iterations <= 3, "iterations {}", rep.iterations);
        assert!(rep.certificate < 1e-20);
    }
}
