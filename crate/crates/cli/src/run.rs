//! Building problems from a config, solving, and writing reports.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use selfdual::problems::newton_oracle;
use selfdual::problems::{
    build_coupled_system_1d, build_heat_1d, build_nse2d_evolution, build_nse2d_stationary, build_transport_1d,
    picard_spectral, BoundaryCondition, CoupledParams, Forcing, HeatInitial, HeatParams, Nse2d, Nse2dParams,
    NseInitial, Perturbation, Profile, TransportParams,
};
use selfdual::{
    Element, MinimizeOptions, PathOptions, PathProblem, PathReport, PicardOptions, SolveReport, SolveStatus,
    StationaryProblem,
};

use crate::config::{Config, ConfigError};
use crate::report::{self, Summary};

/// A failed run, mapped onto the exit-code contract.
#[derive(Debug)]
pub enum Failure {
    Config(String),
    Build(String),
    Solve(String),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Solve(_) => 1,
            Failure::Config(_) => 2,
            Failure::Build(_) => 3,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "config error: {m}"),
            Failure::Build(m) => write!(f, "build error: {m}"),
            Failure::Solve(m) => write!(f, "solve error: {m}"),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

fn build_err(e: selfdual::Error) -> Failure {
    Failure::Build(e.to_string())
}

fn solve_err(e: impl fmt::Display) -> Failure {
    Failure::Solve(e.to_string())
}

pub const PROBLEMS: [&str; 5] = ["heat_1d", "transport_1d", "coupled_1d", "nse2d", "nse2d_evolution"];

const COMMON_KEYS: [&str; 8] = [
    "problem.name",
    "problem.seed",
    "solver.method",
    "solver.max_iter",
    "solver.threshold",
    "solver.gtol",
    "output.dir",
    "output.prefix",
];

fn problem_keys(name: &str) -> &'static [&'static str] {
    match name {
        "heat_1d" => &[
            "problem.n",
            "problem.nu",
            "problem.bc",
            "problem.horizon",
            "problem.steps",
            "problem.initial",
        ],
        "transport_1d" => &[
            "problem.n",
            "problem.nu",
            "problem.m",
            "problem.a",
            "problem.a0",
            "problem.forcing",
            "problem.burgers",
        ],
        "coupled_1d" => &[
            "problem.n",
            "problem.p",
            "problem.q",
            "problem.m",
            "problem.c",
            "problem.b1",
            "problem.b2",
            "problem.f",
            "problem.g",
        ],
        "nse2d" => &[
            "problem.n",
            "problem.nu",
            "problem.forcing",
            "problem.amp",
            "problem.perturbation_eps",
            "problem.perturbation_seed",
        ],
        "nse2d_evolution" => &[
            "problem.n",
            "problem.nu",
            "problem.forcing",
            "problem.amp",
            "problem.initial",
            "problem.initial_amp",
            "problem.horizon",
            "problem.steps",
        ],
        _ => &[],
    }
}

fn solver_keys(method: &str) -> &'static [&'static str] {
    match method {
        "picard" => &["solver.damping", "solver.tol"],
        "lambda_flow" => &["solver.lambda"],
        _ => &[],
    }
}

fn is_path_problem(name: &str) -> bool {
    matches!(name, "heat_1d" | "nse2d_evolution")
}

/// Every key accepted for the config's problem and solver.
pub fn schema(cfg: &Config) -> Result<Vec<&'static str>, Failure> {
    let name = problem_name(cfg)?;
    let method = method(cfg, name)?;
    let mut keys: Vec<&'static str> = COMMON_KEYS.to_vec();
    keys.extend_from_slice(problem_keys(name));
    keys.extend_from_slice(solver_keys(method));
    Ok(keys)
}

fn problem_name(cfg: &Config) -> Result<&'static str, Failure> {
    let raw = cfg
        .raw("problem.name")
        .ok_or_else(|| Failure::Config("missing `problem.name`".into()))?;
    PROBLEMS.iter().find(|p| **p == raw).copied().ok_or_else(|| {
        cfg.error(
            "problem.name",
            format!("unknown problem `{raw}` (expected {})", PROBLEMS.join(", ")),
        )
        .into()
    })
}

fn method(cfg: &Config, problem: &str) -> Result<&'static str, Failure> {
    let (allowed, default): (&[&'static str], _) = if is_path_problem(problem) {
        (&["path_minimize", "marching", "lambda_flow"], "path_minimize")
    } else {
        (&["minimize", "picard"], "minimize")
    };
    match cfg.raw("solver.method") {
        None => Ok(default),
        Some(m) => allowed.iter().find(|a| **a == m).copied().ok_or_else(|| {
            cfg.error(
                "solver.method",
                format!("`{m}` does not apply to {problem} (expected {})", allowed.join(", ")),
            )
            .into()
        }),
    }
}

fn profile(cfg: &Config, key: &str, default: Profile) -> Result<Profile, Failure> {
    match cfg.raw(key) {
        None => Ok(default),
        Some(v) => Profile::parse(v).map_err(|e| cfg.error(key, e.to_string()).into()),
    }
}

/// `name` or `name(seed)` for the seeded-random choice.
fn named_seeded(cfg: &Config, key: &str, default: &str, seed: u64) -> Result<(String, u64), Failure> {
    let raw = cfg.string(key, default);
    if let Some(inner) = raw.strip_prefix("random_seeded(").and_then(|r| r.strip_suffix(')')) {
        let s = inner
            .trim()
            .parse()
            .map_err(|_| cfg.error(key, format!("bad seed in `{raw}`")))?;
        return Ok(("random_seeded".into(), s));
    }
    Ok((raw, seed))
}

fn nse_forcing(cfg: &Config, seed: u64) -> Result<Forcing, Failure> {
    let (name, s) = named_seeded(cfg, "problem.forcing", "random_seeded", seed)?;
    let amp = cfg.get("problem.amp", 1.0)?;
    match name.as_str() {
        "zero" => Ok(Forcing::Zero),
        "taylor_green" => Ok(Forcing::TaylorGreen),
        "random_seeded" => Ok(Forcing::RandomSeeded { seed: s, amp }),
        other => Err(cfg
            .error(
                "problem.forcing",
                format!("unknown forcing `{other}` (expected zero, taylor_green, random_seeded(seed))"),
            )
            .into()),
    }
}

type Oracle = Box<dyn Fn(&StationaryProblem) -> Option<(&'static str, Element)>>;

enum Model {
    Stationary {
        problem: Box<StationaryProblem>,
        oracle: Oracle,
    },
    Path {
        problem: PathProblem,
        exact: Option<Box<dyn Fn(f64) -> Element>>,
    },
}

fn newton(p: &StationaryProblem) -> Option<(&'static str, Element)> {
    newton_oracle(p, &p.space().zeros(), 1e-12)
        .ok()
        .map(|s| ("newton", s.x))
}

fn build(cfg: &Config, name: &str, seed: u64) -> Result<Model, Failure> {
    match name {
        "heat_1d" => {
            let d = HeatParams::default();
            let bc = match cfg.string("problem.bc", "dirichlet").as_str() {
                "dirichlet" => BoundaryCondition::Dirichlet,
                "periodic" => BoundaryCondition::Periodic,
                other => {
                    return Err(cfg
                        .error("problem.bc", format!("expected dirichlet or periodic, got `{other}`"))
                        .into())
                }
            };
            let initial = match cfg.string("problem.initial", "sine").as_str() {
                "sine" => HeatInitial::Sine,
                "zero" => HeatInitial::Zero,
                other => {
                    return Err(cfg
                        .error("problem.initial", format!("expected sine or zero, got `{other}`"))
                        .into())
                }
            };
            let p = HeatParams {
                n: cfg.get("problem.n", d.n)?,
                nu: cfg.get("problem.nu", d.nu)?,
                bc,
                horizon: cfg.get("problem.horizon", d.horizon)?,
                steps: cfg.get("problem.steps", d.steps)?,
                initial,
            };
            let heat = build_heat_1d(&p).map_err(build_err)?;
            let problem = heat.problem.clone();
            Ok(Model::Path {
                problem,
                exact: Some(Box::new(move |t| heat.exact(t))),
            })
        }
        "transport_1d" => {
            let d = TransportParams::default();
            let p = TransportParams {
                n: cfg.get("problem.n", d.n)?,
                nu: cfg.get("problem.nu", d.nu)?,
                m: cfg.get("problem.m", d.m)?,
                a: profile(cfg, "problem.a", d.a)?,
                a0: profile(cfg, "problem.a0", d.a0)?,
                forcing: profile(cfg, "problem.forcing", d.forcing)?,
                burgers: cfg.get("problem.burgers", d.burgers)?,
            };
            let t = build_transport_1d(&p).map_err(build_err)?;
            Ok(Model::Stationary {
                problem: Box::new(t.problem),
                oracle: Box::new(newton),
            })
        }
        "coupled_1d" => {
            let d = CoupledParams::default();
            let p = CoupledParams {
                n: cfg.get("problem.n", d.n)?,
                p: cfg.get("problem.p", d.p)?,
                q: cfg.get("problem.q", d.q)?,
                m: cfg.get("problem.m", d.m)?,
                c: cfg.get("problem.c", d.c)?,
                b1: profile(cfg, "problem.b1", d.b1)?,
                b2: profile(cfg, "problem.b2", d.b2)?,
                f: profile(cfg, "problem.f", d.f)?,
                g: profile(cfg, "problem.g", d.g)?,
            };
            let c = build_coupled_system_1d(&p).map_err(build_err)?;
            Ok(Model::Stationary {
                problem: Box::new(c.problem),
                oracle: Box::new(newton),
            })
        }
        "nse2d" => {
            let d = Nse2dParams::default();
            let eps: f64 = cfg.get("problem.perturbation_eps", 0.0)?;
            let p = Nse2dParams {
                n: cfg.get("problem.n", d.n)?,
                nu: cfg.get("problem.nu", d.nu)?,
                forcing: nse_forcing(cfg, seed)?,
                perturbation: (eps != 0.0)
                    .then(|| -> Result<Perturbation, Failure> {
                        Ok(Perturbation {
                            eps,
                            seed: cfg.get("problem.perturbation_seed", seed)?,
                        })
                    })
                    .transpose()?,
            };
            let nse = build_nse2d_stationary(&p).map_err(build_err)?;
            let problem = Box::new(nse.problem.clone());
            let perturbed = p.perturbation.is_some();
            Ok(Model::Stationary {
                problem,
                oracle: Box::new(move |pr| if perturbed { newton(pr) } else { picard(&nse) }),
            })
        }
        "nse2d_evolution" => {
            let d = Nse2dParams::default();
            let p = Nse2dParams {
                n: cfg.get("problem.n", 16)?,
                nu: cfg.get("problem.nu", d.nu)?,
                forcing: match cfg.raw("problem.forcing") {
                    None => Forcing::Zero,
                    Some(_) => nse_forcing(cfg, seed)?,
                },
                perturbation: None,
            };
            let (init_name, init_seed) = named_seeded(cfg, "problem.initial", "taylor_green", seed)?;
            let initial = match init_name.as_str() {
                "zero" => NseInitial::Zero,
                "taylor_green" => NseInitial::TaylorGreen,
                "random_seeded" => NseInitial::RandomSeeded {
                    seed: init_seed,
                    amp: cfg.get("problem.initial_amp", 1.0)?,
                },
                other => {
                    return Err(cfg
                        .error(
                            "problem.initial",
                            format!(
                                "unknown initial data `{other}` (expected zero, taylor_green, random_seeded(seed))"
                            ),
                        )
                        .into())
                }
            };
            let exact_tg = matches!(initial, NseInitial::TaylorGreen) && matches!(p.forcing, Forcing::Zero);
            let evo = build_nse2d_evolution(
                &p,
                initial,
                cfg.get("problem.horizon", 0.5)?,
                cfg.get("problem.steps", 32)?,
            )
            .map_err(build_err)?;
            let problem = evo.problem.clone();
            Ok(Model::Path {
                problem,
                exact: exact_tg.then(|| Box::new(move |t| evo.exact_taylor_green(t)) as Box<dyn Fn(f64) -> Element>),
            })
        }
        _ => unreachable!("validated problem name"),
    }
}

fn picard(nse: &Nse2d) -> Option<(&'static str, Element)> {
    let r = picard_spectral(nse, 1e-14, 2000);
    (r.status == SolveStatus::Converged).then_some(("picard_spectral", r.x))
}

/// Outcome of a completed run; `exit` is 0 or 1.
pub struct Outcome {
    pub summary: Summary,
    pub summary_path: PathBuf,
    pub exit: u8,
    pub wall_seconds: f64,
}

/// Builds, solves and writes `<prefix>.summary.json`, `<prefix>.solution.csv`,
/// `<prefix>.history.csv` and `<prefix>.timing.json` into `out_dir`.
pub fn run(cfg: &Config, out_dir: &Path) -> Result<Outcome, Failure> {
    let start = std::time::Instant::now();
    let name = problem_name(cfg)?;
    cfg.check_known(&schema(cfg)?)?;
    let method = method(cfg, name)?;
    let seed: u64 = cfg.get("problem.seed", 0)?;
    let threshold: f64 = cfg.get("solver.threshold", 1e-6)?;
    let prefix = cfg.string("output.prefix", name);
    let model = build(cfg, name, seed)?;
    fs::create_dir_all(out_dir).map_err(|e| solve_err(format!("creating {}: {e}", out_dir.display())))?;
    let file = |ext: &str| out_dir.join(format!("{prefix}.{ext}"));

    let mut summary = Summary {
        problem: name.to_string(),
        solver: method.to_string(),
        seed,
        status: String::new(),
        certificate: f64::NAN,
        scale: f64::NAN,
        inclusion_residual: None,
        iterations: 0,
        dimension: 0,
        steps: None,
        defect_skew: 0.0,
        defect_boundary: 0.0,
        defect_conservativity: 0.0,
        oracle: "none".into(),
        oracle_error: None,
        warnings: Vec::new(),
    };

    match model {
        Model::Stationary { problem, oracle } => {
            let report = solve_stationary(cfg, method, &problem)?;
            let defects = problem.defects();
            let certificate = problem.certificate(&report.x).map_err(solve_err)?;
            summary.status = report.status.as_str().into();
            summary.certificate = certificate;
            summary.scale = report.scale;
            summary.inclusion_residual = Some(report.inclusion_residual);
            summary.iterations = report.iterations;
            summary.dimension = problem.space().dim();
            summary.defect_skew = defects.skew;
            summary.defect_boundary = defects.boundary;
            summary.defect_conservativity = defects.conservativity;
            summary.warnings = report.warnings.clone();
            if let Some((label, x)) = oracle(&problem) {
                let s = problem.space();
                summary.oracle = label.into();
                summary.oracle_error = Some(s.norm(&(&report.x - &x)) / s.norm(&x).max(1e-300));
            }
            report::write_history_csv(&file("history.csv"), &report.history).map_err(solve_err)?;
            report::write_vector_csv(&file("solution.csv"), &report.x).map_err(solve_err)?;
            let back = report::read_vector_csv(&file("solution.csv")).map_err(solve_err)?;
            self_check(certificate, problem.certificate(&back).map_err(solve_err)?)?;
        }
        Model::Path { problem, exact } => {
            let (report, extra) = solve_path(cfg, method, &problem)?;
            let defects = problem.stage(1).defects();
            let certificate = problem.certificate(&report.path).map_err(solve_err)?;
            summary.status = report.status.as_str().into();
            summary.certificate = certificate;
            summary.scale = 1.0 + problem.space().norm_sq(problem.v0());
            summary.iterations = report.iterations;
            summary.dimension = problem.space().dim();
            summary.steps = Some(problem.steps());
            summary.defect_skew = defects.skew;
            summary.defect_boundary = defects.boundary;
            summary.defect_conservativity = defects.conservativity;
            summary.warnings = report.warnings.clone();
            if let Some(exact) = exact {
                let s = problem.space();
                let e = exact(problem.horizon());
                summary.oracle = "exact".into();
                summary.oracle_error = Some(s.norm(&(report.path.last() - &e)) / s.norm(&e).max(1e-300));
            }
            if let Some(rows) = extra {
                fs::write(file("lambda.csv"), rows).map_err(solve_err)?;
            }
            let mut gaps = vec![problem.space().norm_sq(&(&report.path.nodes[0] - problem.v0()))];
            gaps.extend(problem.step_gaps(&report.path).map_err(solve_err)?);
            report::write_history_csv(&file("history.csv"), &report.history).map_err(solve_err)?;
            report::write_path_csv(&file("solution.csv"), &report.path, &gaps).map_err(solve_err)?;
            let back = report::read_path_csv(&file("solution.csv"), problem.h()).map_err(solve_err)?;
            self_check(certificate, problem.certificate(&back).map_err(solve_err)?)?;
        }
    }

    let summary_path = file("summary.json");
    fs::write(&summary_path, summary.to_json()).map_err(solve_err)?;
    let stored = report::read_certificate(&summary_path).map_err(solve_err)?;
    if summary.certificate.is_finite() {
        self_check(summary.certificate, stored)?;
    }
    let wall_seconds = start.elapsed().as_secs_f64();
    fs::write(
        file("timing.json"),
        format!("{{\n  \"wall_seconds\": {}\n}}\n", report::num(wall_seconds)),
    )
    .map_err(solve_err)?;
    let ok = summary.status == "converged" && summary.certificate <= threshold * summary.scale;
    Ok(Outcome {
        summary,
        summary_path,
        exit: if ok { 0 } else { 1 },
        wall_seconds,
    })
}

fn self_check(expected: f64, recomputed: f64) -> Result<(), Failure> {
    if (expected - recomputed).abs() > 1e-12 {
        return Err(Failure::Solve(format!(
            "write-read self-check failed: certificate {expected:e} vs {recomputed:e} from the written report"
        )));
    }
    Ok(())
}

fn solve_stationary(cfg: &Config, method: &str, problem: &StationaryProblem) -> Result<SolveReport, Failure> {
    match method {
        "minimize" => {
            let d = MinimizeOptions::default();
            let gtol = cfg
                .raw("solver.gtol")
                .map(|_| cfg.get("solver.gtol", 0.0))
                .transpose()?;
            problem
                .solve_minimize(&MinimizeOptions {
                    max_iter: cfg.get("solver.max_iter", d.max_iter)?,
                    gtol,
                    ..d
                })
                .map_err(solve_err)
        }
        "picard" => {
            let d = PicardOptions::default();
            problem
                .solve_picard(&PicardOptions {
                    damping: cfg.get("solver.damping", d.damping)?,
                    max_iter: cfg.get("solver.max_iter", d.max_iter)?,
                    tol: cfg.get("solver.tol", d.tol)?,
                    initial: None,
                })
                .map_err(solve_err)
        }
        _ => unreachable!("validated method"),
    }
}

fn solve_path(cfg: &Config, method: &str, problem: &PathProblem) -> Result<(PathReport, Option<String>), Failure> {
    let d = PathOptions::default();
    let gtol = cfg
        .raw("solver.gtol")
        .map(|_| cfg.get("solver.gtol", 0.0))
        .transpose()?;
    let opts = PathOptions {
        max_iter: cfg.get("solver.max_iter", d.max_iter)?,
        gtol,
        initial: None,
    };
    match method {
        "path_minimize" => Ok((problem.solve_path_minimize(&opts).map_err(solve_err)?, None)),
        "marching" => Ok((problem.solve_marching_prox().map_err(solve_err)?, None)),
        "lambda_flow" => {
            let schedule = cfg.list("solver.lambda", &[0.1, 0.05, 0.02, 0.01])?;
            if schedule.is_empty() || schedule.iter().any(|l| !(*l > 0.0)) {
                return Err(cfg.error("solver.lambda", "needs positive values").into());
            }
            let flow = problem.lambda_flow(&schedule, &opts).map_err(solve_err)?;
            let mut rows = String::from("lambda,regularized_certificate,certificate,velocity_ratio,iterations\n");
            for ((l, r), v) in schedule.iter().zip(&flow.reports).zip(&flow.velocity_ratios) {
                let c = problem.certificate(&r.path).map_err(solve_err)?;
                rows.push_str(&format!(
                    "{},{},{},{},{}\n",
                    report::num(*l),
                    report::num(r.certificate),
                    report::num(c),
                    report::num(*v),
                    r.iterations
                ));
            }
            let mut last = flow.reports.last().expect("nonempty schedule").clone();
            last.iterations = flow.reports.iter().map(|r| r.iterations).sum();
            last.warnings.extend(flow.warnings.iter().cloned());
            Ok((last, Some(rows)))
        }
        _ => unreachable!("validated method"),
    }
}
