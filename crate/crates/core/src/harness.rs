//! Experiment drivers behind the `kpp` command line.
//!
//! Every command takes a [`RunConfig`], writes CSV tables and a JSON summary
//! under an output prefix, and returns the summary. Each CSV starts with a
//! `#` comment carrying the SHA-256 of the canonical config, then a header.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::flow::{build_flow, FlowKind, FlowSpec};
use crate::front::{
    default_lambda_center, diffusivity_relation_check, front_speed, front_speed_weighted, grid_min,
    lambda_grid_around, mu_curve, powerlaw_fit, sweep_sigma, FrontSpeedResult, IpsBackend, MuBackend, MuCurve,
    OracleBackend,
};
use crate::ips::{
    empirical_histogram, estimate_mu_observed, substep_with, substeps_for, CarriedWeights, DriftConvention,
    Histogram, IpsParams, KppProblem, ResamplePolicy,
};
use crate::rng::{derive_seed, RngStream};
use crate::sde::Ensemble;
use crate::spectral::{
    dense_principal_eigenvalue, oracle_mu, principal_eigenvalue, splitting_errors, KppGenerator, Propagator,
    Scheme, SplitGenerator, SplittingTestProblem,
};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    #[default]
    Ips,
    Oracle,
}

/// Reference eigenvalue for a convergence study.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reference {
    /// Fourier-Galerkin eigenvalue at `H`, `dt_ref`.
    Oracle,
    /// The finest step of the study, which is then left out of the fit.
    Finest,
    Value(f64),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleTask {
    /// `μ(λ)` from the Galerkin propagator.
    #[default]
    Eigenvalue,
    /// Operator-norm error of the split propagator for each `dt_list` entry.
    Splitting,
}

/// Closed interval a headline result must fall in under `--assert`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub min: f64,
    pub max: f64,
}

impl Band {
    pub fn contains(&self, v: f64) -> bool {
        v >= self.min && v <= self.max
    }
}

fn one() -> f64 {
    1.0
}

fn default_h() -> usize {
    12
}

fn default_dt_ref() -> f64 {
    1.0 / 1024.0
}

fn default_bins() -> usize {
    64
}

fn default_particles() -> usize {
    10_000
}

fn default_iters() -> usize {
    100
}

/// One experiment, read from a single JSON document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub flow: FlowSpec,
    #[serde(default = "one")]
    pub kappa: f64,
    #[serde(default = "one")]
    pub tau: f64,
    #[serde(default = "one")]
    pub fprime0: f64,
    /// Front direction; the first unit vector when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub e: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_grid: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_grid: Option<Vec<f64>>,
    /// Per-σ λ grids for sweeps; defaults are centred on tabulated minimizers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_grids: Option<Vec<Vec<f64>>>,
    #[serde(rename = "N", default = "default_particles")]
    pub particles: usize,
    #[serde(default = "default_iters")]
    pub n_iters: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(rename = "M", default, skip_serializing_if = "Option::is_none")]
    pub substeps: Option<usize>,
    #[serde(rename = "T", default, skip_serializing_if = "Option::is_none")]
    pub period: Option<f64>,
    /// Simulated time per run; overrides `n_iters` when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    /// Simulated time discarded before averaging; overrides `burn_in`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub burn_in_time: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub burn_in: usize,
    #[serde(default)]
    pub backend: Backend,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outputs: Option<String>,
    #[serde(default)]
    pub drift: DriftConvention,
    #[serde(default)]
    pub resample: ResamplePolicy,
    #[serde(default)]
    pub weighted_fit: bool,
    #[serde(rename = "H", default = "default_h")]
    pub h: usize,
    #[serde(default = "default_dt_ref")]
    pub dt_ref: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt_list: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<Reference>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phases: Option<Vec<f64>>,
    #[serde(default = "default_bins")]
    pub bins: usize,
    #[serde(default)]
    pub oracle_task: OracleTask,
    /// Use the built-in time-periodic splitting test operator instead of the
    /// KPP problem in `oracle` runs.
    #[serde(default)]
    pub test_problem: bool,
    /// Effective-diffusivity exponent compared against the sweep slope.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_diff: Option<f64>,
    /// Acceptance band for the headline number under `--assert`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accept: Option<Band>,
    /// Absolute tolerance for oracle comparisons under `--assert`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
}

impl RunConfig {
    /// Minimal config for a flow with every other field at its default.
    pub fn for_flow(flow: FlowSpec) -> Self {
        serde_json::from_value(json!({ "flow": flow })).expect("defaults always deserialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the compact serialization.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        if self.lambda.is_some() && self.lambda_grid.is_some() {
            return cfg("lambda and lambda_grid are mutually exclusive".into());
        }
        if self.sigma.is_some() && self.sigma_grid.is_some() {
            return cfg("sigma and sigma_grid are mutually exclusive".into());
        }
        if let (Some(dt), Some(m), Some(t)) = (self.dt, self.substeps, self.period) {
            if (dt * m as f64 - t).abs() > 1e-10 {
                return cfg(format!("dt*M = {} differs from T = {t}", dt * m as f64));
            }
        }
        if self.h == 0 || !(self.dt_ref > 0.0) {
            return cfg("H must be positive and dt_ref > 0".into());
        }
        if let Some(p) = self.phases.as_ref().and_then(|p| p.iter().find(|&&p| !(0.0..=1.0).contains(&p))) {
            return cfg(format!("phase {p} outside [0, 1]"));
        }
        build_flow(&self.flow).map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    pub fn time_step(&self) -> Result<f64> {
        match (self.dt, self.substeps, self.period) {
            (Some(dt), _, _) => Ok(dt),
            (None, Some(m), Some(t)) => Ok(t / m as f64),
            (None, _, _) => Err(Error::Config("dt (or M together with T) is required".into())),
        }
    }

    pub fn direction(&self) -> Vec<f64> {
        self.e.clone().unwrap_or_else(|| {
            let mut e = vec![0.0; self.flow.name.dim()];
            e[0] = 1.0;
            e
        })
    }

    /// The KPP problem at tilt `lambda`.
    pub fn problem(&self, lambda: f64) -> Result<KppProblem> {
        let flow = build_flow(&self.flow)?;
        Ok(KppProblem::new(flow, self.direction(), lambda)?
            .with_kappa(self.kappa)?
            .with_tau(self.tau)?
            .with_fprime0(self.fprime0)?
            .with_sigma(self.sigma)?
            .with_drift(self.drift))
    }

    fn single_lambda(&self) -> Result<f64> {
        self.lambda.ok_or_else(|| Error::Config("a single lambda is required".into()))
    }

    fn lambda_grid(&self) -> Result<Vec<f64>> {
        self.lambda_grid.clone().ok_or_else(|| Error::Config("lambda_grid is required".into()))
    }

    /// Period length used to turn times into iteration counts.
    fn period_length(&self, dt: f64) -> Result<f64> {
        let flow = build_flow(&self.flow)?;
        let m = substeps_for(&flow, dt, self.substeps)?;
        Ok(m as f64 * dt)
    }

    /// Particle parameters at step `dt`.
    pub fn ips_params(&self, dt: f64) -> Result<IpsParams> {
        let period = self.period_length(dt)?;
        let iterations = match self.horizon {
            Some(h) => (h / period).ceil().max(1.0) as usize,
            None => self.n_iters,
        };
        let burn_in = match self.burn_in_time {
            Some(b) => (b / period).ceil() as usize,
            None => self.burn_in,
        };
        let flow = build_flow(&self.flow)?;
        Ok(IpsParams {
            particles: self.particles,
            iterations,
            dt,
            substeps: Some(substeps_for(&flow, dt, self.substeps)?),
            seed: self.seed,
            burn_in,
            resample: self.resample,
        })
    }

    fn prefix(&self, opts: &RunOptions) -> String {
        opts.out.clone().or_else(|| self.outputs.clone()).unwrap_or_else(|| "kpp".into())
    }
}

/// Command-line switches shared by every command.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub out: Option<String>,
    pub assert: bool,
}

/// Exit status for an error, following the documented convention.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_)
        | Error::UnknownFlow(_)
        | Error::UnexpectedParameter { .. }
        | Error::InvalidParameter(_)
        | Error::Dimension { .. }
        | Error::PeriodMismatch { .. }
        | Error::RankDeficient(_)
        | Error::Json(_) => 2,
        Error::NonFinite(_) | Error::NoConvergence { .. } => 3,
        Error::OracleMismatch(_) => 4,
        Error::Io(_) => 1,
    }
}

/// CSV text with the provenance comment and a header row.
struct Table {
    head: String,
    header: String,
    body: String,
}

impl Table {
    fn new(command: &str, cfg: &RunConfig, header: &[&str]) -> Self {
        Table {
            head: format!("# kpp {command} config_sha256={}\n", cfg.hash()),
            header: header.join(",") + "\n",
            body: String::new(),
        }
    }

    /// Extra metadata; comments always precede the header row.
    fn comment(&mut self, line: &str) {
        let _ = writeln!(self.head, "# {line}");
    }

    fn row(&mut self, fields: &[String]) {
        self.body.push_str(&fields.join(","));
        self.body.push('\n');
    }

    fn write(&self, path: &str) -> Result<()> {
        write_file(path, &format!("{}{}{}", self.head, self.header, self.body))
    }
}

fn write_file(path: &str, text: &str) -> Result<()> {
    if let Some(dir) = Path::new(path).parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text)?;
    Ok(())
}

fn write_summary(prefix: &str, command: &str, cfg: &RunConfig, mut body: Value) -> Result<Value> {
    body["command"] = json!(command);
    body["config_sha256"] = json!(cfg.hash());
    let text = serde_json::to_string_pretty(&body)? + "\n";
    write_file(&format!("{prefix}_summary.json"), &text)?;
    Ok(body)
}

fn f(v: f64) -> String {
    format!("{v}")
}

fn mismatch(msg: String) -> Error {
    Error::OracleMismatch(msg)
}

fn is_homogeneous(cfg: &RunConfig) -> bool {
    cfg.flow.amplitude == 0.0
}

/// Exact `μ` when the flow vanishes.
fn homogeneous_mu(p: &KppProblem) -> f64 {
    p.potential_constant()
}

/// `eig`: one eigenvalue estimate with its per-iteration trace.
pub fn cmd_eig(cfg: &RunConfig, opts: &RunOptions) -> Result<Value> {
    let lambda = cfg.single_lambda()?;
    let problem = cfg.problem(lambda)?;
    let prefix = cfg.prefix(opts);
    let params = cfg.ips_params(cfg.time_step()?)?;
    let mut table = Table::new("eig", cfg, &["k", "E_k", "running_mu", "running_stderr"]);
    let est = estimate_mu_observed(&problem, &params, |rec, _| {
        table.row(&[rec.k.to_string(), f(rec.e_k), f(rec.running_mu), f(rec.running_stderr)]);
    })?;
    if !est.stderr_is_finite() {
        table.comment("stderr undefined: fewer than two periods after burn-in");
    }
    table.write(&format!("{prefix}_curve.csv"))?;

    let mut body = json!({
        "lambda": lambda,
        "mu": est.mu,
        "stderr": est.stderr,
        "stderr_finite": est.stderr_is_finite(),
        "n_iters": est.n_iters,
        "burn_in": est.burn_in,
        "dt": params.dt,
        "substeps": params.substeps,
        "particles": params.particles,
    });
    if opts.assert {
        let (reference, kind) = if is_homogeneous(cfg) {
            (homogeneous_mu(&problem), "analytic")
        } else if problem.dim() == 2 {
            (oracle_mu(&problem, cfg.h, cfg.dt_ref)?.mu, "oracle")
        } else {
            return Err(Error::Config("no reference eigenvalue for three-dimensional flows".into()));
        };
        let tol = cfg.tolerance.unwrap_or(0.01).max(4.0 * est.stderr.max(0.0));
        let err = (est.mu - reference).abs();
        body["reference"] = json!({ "kind": kind, "mu": reference, "abs_error": err, "tolerance": tol });
        write_summary(&prefix, "eig", cfg, body.clone())?;
        if !(err <= tol) {
            return Err(mismatch(format!("|μ̂ - μ_ref| = {err:e} exceeds {tol:e}")));
        }
        return Ok(body);
    }
    write_summary(&prefix, "eig", cfg, body)
}

fn backend_for(cfg: &RunConfig) -> Result<Box<dyn MuBackend>> {
    Ok(match cfg.backend {
        Backend::Ips => Box::new(IpsBackend { params: cfg.ips_params(cfg.time_step()?)? }),
        Backend::Oracle => Box::new(OracleBackend { h: cfg.h, dt_ref: cfg.dt_ref }),
    })
}

fn speed_json(s: &FrontSpeedResult) -> Value {
    json!({
        "a": s.fit.map(|f| f.a),
        "b": s.fit.map(|f| f.b),
        "c": s.fit.map(|f| f.c),
        "residual": s.fit.map(|f| f.residual),
        "lambda_star": s.lambda_star,
        "c_star": s.c_star,
        "method": s.method,
    })
}

fn curve_table(command: &str, cfg: &RunConfig, curve: &MuCurve) -> Table {
    let mut t = Table::new(command, cfg, &["lambda", "mu", "stderr", "ratio"]);
    for i in 0..curve.len() {
        t.row(&[f(curve.lambdas[i]), f(curve.mu[i]), f(curve.stderr[i]), f(curve.ratio[i])]);
    }
    t
}

/// `front-speed`: `μ(λ)` over the grid, rational fit and `c*`.
pub fn cmd_front_speed(cfg: &RunConfig, opts: &RunOptions) -> Result<Value> {
    let grid = cfg.lambda_grid()?;
    let problem = cfg.problem(grid[0])?;
    let prefix = cfg.prefix(opts);
    let backend = backend_for(cfg)?;
    let curve = mu_curve(&problem, &grid, backend.as_ref(), 0)?;
    let speed = if cfg.weighted_fit { front_speed_weighted(&curve) } else { front_speed(&curve) };
    curve_table("front-speed", cfg, &curve).write(&format!("{prefix}_curve.csv"))?;
    let mut body = speed_json(&speed);
    body["lambdas"] = json!(curve.lambdas);
    body["mu"] = json!(curve.mu);

    if opts.assert {
        let check = if is_homogeneous(cfg) {
            let lambda_star = (problem.potential_constant() - problem.kappa_lambda_sq()).sqrt()
                / problem.diffusion().sqrt();
            let c = 2.0 * (problem.diffusion() * (problem.potential_constant() - problem.kappa_lambda_sq())).sqrt();
            let tol = cfg.tolerance.unwrap_or(1e-9);
            let err = (speed.c_star - c).abs().max((speed.lambda_star - lambda_star).abs());
            json!({ "kind": "analytic", "c_star": c, "lambda_star": lambda_star, "abs_error": err, "tolerance": tol })
        } else if problem.dim() == 2 {
            // refined grid of oracle ratios over the same range
            let (lo, hi) = (grid[0], grid[grid.len() - 1]);
            let fine: Vec<f64> = (0..=200).map(|j| lo + (hi - lo) * j as f64 / 200.0).collect();
            let oracle = OracleBackend { h: cfg.h, dt_ref: cfg.dt_ref };
            let fine_curve = mu_curve(&problem, &fine, &oracle, 0)?;
            let (l_ref, c_ref) = grid_min(&fine_curve);
            let tol = cfg.tolerance.unwrap_or(match cfg.backend {
                Backend::Oracle => 1e-3,
                Backend::Ips => 0.01,
            });
            json!({ "kind": "refined_oracle_grid", "c_star": c_ref, "lambda_star": l_ref,
                    "abs_error": (speed.c_star - c_ref).abs(), "tolerance": tol })
        } else {
            return Err(Error::Config("no reference front speed for three-dimensional flows".into()));
        };
        body["reference"] = check.clone();
        write_summary(&prefix, "front-speed", cfg, body.clone())?;
        let (err, tol) = (check["abs_error"].as_f64().unwrap(), check["tolerance"].as_f64().unwrap());
        if !(err <= tol) {
            return Err(mismatch(format!("front speed off by {err:e} (tolerance {tol:e})")));
        }
        return Ok(body);
    }
    write_summary(&prefix, "front-speed", cfg, body)
}

impl KppProblem {
    /// `κλ²` (or `σλ²` when rescaled).
    fn kappa_lambda_sq(&self) -> f64 {
        self.diffusion() * self.lambda * self.lambda
    }
}

/// λ grids of a sweep: explicit per-σ grids, one shared grid, or defaults.
pub fn sweep_grids(cfg: &RunConfig, sigmas: &[f64]) -> Result<Vec<Vec<f64>>> {
    if let Some(g) = &cfg.lambda_grids {
        if g.len() != sigmas.len() {
            return Err(Error::Config(format!("{} λ grids for {} σ values", g.len(), sigmas.len())));
        }
        return Ok(g.clone());
    }
    if let Some(g) = &cfg.lambda_grid {
        return Ok(vec![g.clone(); sigmas.len()]);
    }
    Ok(sigmas.iter().map(|&s| lambda_grid_around(default_lambda_center(cfg.flow.name, s), 7)).collect())
}

/// `sweep`: rescaled speeds over σ and the power-law exponent.
pub fn cmd_sweep(cfg: &RunConfig, opts: &RunOptions) -> Result<Value> {
    let backend = backend_for(cfg)?;
    cmd_sweep_with(cfg, opts, backend.as_ref())
}

/// [`cmd_sweep`] with an explicit backend.
pub fn cmd_sweep_with<B: MuBackend + ?Sized>(cfg: &RunConfig, opts: &RunOptions, backend: &B) -> Result<Value> {
    let sigmas = cfg.sigma_grid.clone().ok_or_else(|| Error::Config("sigma_grid is required".into()))?;
    if sigmas.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Config("sigma_grid must be strictly descending".into()));
    }
    let grids = sweep_grids(cfg, &sigmas)?;
    let base = cfg.problem(grids[0][0])?.with_sigma(None)?;
    let prefix = cfg.prefix(opts);
    let rows = sweep_sigma(&base, &sigmas, &grids, backend, cfg.weighted_fit)?;

    let mut table = Table::new("sweep", cfg, &["sigma", "c_star_tilde", "lambda_star", "method", "alpha_running"]);
    for (i, r) in rows.iter().enumerate() {
        let running = if i >= 1 {
            let c: Vec<f64> = rows[..=i].iter().map(|r| r.c_star_tilde).collect();
            powerlaw_fit(&sigmas[..=i], &c).map(|p| p.alpha).unwrap_or(f64::NAN)
        } else {
            f64::NAN
        };
        let method = serde_json::to_value(r.method)?.as_str().unwrap_or_default().to_string();
        table.row(&[f(r.sigma), f(r.c_star_tilde), f(r.lambda_star), method, f(running)]);
    }
    table.write(&format!("{prefix}_curve.csv"))?;

    let c: Vec<f64> = rows.iter().map(|r| r.c_star_tilde).collect();
    let fit = powerlaw_fit(&sigmas, &c)?;
    let mut body = json!({
        "sigmas": sigmas,
        "c_star_tilde": c,
        "lambda_star": rows.iter().map(|r| r.lambda_star).collect::<Vec<_>>(),
        "curves": rows.iter().map(|r| &r.curve).collect::<Vec<_>>(),
        "alpha": fit.alpha,
        "intercept": fit.intercept,
        "r2": fit.r2,
    });
    if let Some(ad) = cfg.alpha_diff {
        body["diffusivity_check"] = serde_json::to_value(diffusivity_relation_check(fit.alpha, ad))?;
    }
    let body = write_summary(&prefix, "sweep", cfg, body)?;
    if opts.assert {
        if let Some(band) = cfg.accept {
            if !band.contains(fit.alpha) {
                return Err(mismatch(format!("α = {} outside [{}, {}]", fit.alpha, band.min, band.max)));
            }
        }
    }
    Ok(body)
}

/// Slope and intercept of `log error` against `log dt`, with r².
pub fn loglog_slope(dts: &[f64], errors: &[f64]) -> Result<(f64, f64, f64)> {
    let fit = powerlaw_fit(dts, errors)?;
    Ok((fit.alpha, fit.intercept, fit.r2))
}

/// Per-step result of a convergence study.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ConvergencePoint {
    pub dt: f64,
    pub mu: f64,
    pub stderr: f64,
    pub error: f64,
}

/// Eigenvalue at each step of `dt_list`, from particles or from the split
/// Galerkin propagator, and its distance to the reference.
pub fn convergence_study(cfg: &RunConfig) -> Result<(Vec<ConvergencePoint>, f64)> {
    let dts = cfg.dt_list.clone().ok_or_else(|| Error::Config("dt_list is required".into()))?;
    if dts.len() < 3 {
        return Err(Error::Config("a convergence study needs at least three steps".into()));
    }
    let problem = cfg.problem(cfg.single_lambda()?)?;
    let estimates = dts
        .iter()
        .enumerate()
        .map(|(i, &dt)| match cfg.backend {
            Backend::Ips => {
                let mut params = cfg.ips_params(dt)?;
                params.seed = derive_seed(cfg.seed, &[i as u64]);
                let est = crate::ips::estimate_mu(&problem, &params)?;
                Ok((est.mu, est.stderr))
            }
            Backend::Oracle => {
                let gen = KppGenerator::new(&problem, cfg.h)?;
                let horizon = cfg.period_length(dt)?;
                let m = (horizon / dt).round() as usize;
                let k = Propagator::new(&gen, dt, m, Scheme::LieTrotter)?;
                Ok((principal_eigenvalue(&k, horizon)?.mu, 0.0))
            }
        })
        .collect::<Result<Vec<_>>>()?;

    let (reference, skip) = match cfg.reference.unwrap_or(Reference::Oracle) {
        Reference::Value(v) => (v, None),
        Reference::Oracle => (oracle_mu(&problem, cfg.h, cfg.dt_ref)?.mu, None),
        Reference::Finest => {
            let (i, _) = dts.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).unwrap();
            (estimates[i].0, Some(i))
        }
    };
    let points = dts
        .iter()
        .zip(&estimates)
        .enumerate()
        .filter(|(i, _)| Some(*i) != skip)
        .map(|(_, (&dt, &(mu, stderr)))| ConvergencePoint { dt, mu, stderr, error: (mu - reference).abs() })
        .collect();
    Ok((points, reference))
}

/// `convergence`: error against `dt` and the fitted log-log slope.
pub fn cmd_convergence(cfg: &RunConfig, opts: &RunOptions) -> Result<Value> {
    let prefix = cfg.prefix(opts);
    let (points, reference) = convergence_study(cfg)?;
    let mut table = Table::new("convergence", cfg, &["dt", "mu", "stderr", "error"]);
    for p in &points {
        table.row(&[f(p.dt), f(p.mu), f(p.stderr), f(p.error)]);
    }
    table.write(&format!("{prefix}_curve.csv"))?;
    let dts: Vec<f64> = points.iter().map(|p| p.dt).collect();
    let errs: Vec<f64> = points.iter().map(|p| p.error).collect();
    let (slope, intercept, r2) = loglog_slope(&dts, &errs)?;
    let body = write_summary(
        &prefix,
        "convergence",
        cfg,
        json!({ "reference_mu": reference, "points": points, "slope": slope, "intercept": intercept, "r2": r2 }),
    )?;
    if opts.assert {
        if let Some(band) = cfg.accept {
            if !band.contains(slope) {
                return Err(mismatch(format!("slope {slope} outside [{}, {}]", band.min, band.max)));
            }
        }
    }
    Ok(body)
}

fn phase_label(phase: f64) -> String {
    format!("{phase:.4}")
}

/// Histograms of the ensemble at the requested phases of the period that
/// follows `n_iters` full periods.
pub fn phase_histograms(problem: &KppProblem, params: &IpsParams, phases: &[f64], bins: usize) -> Result<Vec<(f64, Histogram)>> {
    if problem.dim() != 2 {
        return Err(Error::Dimension { expected: 2, got: problem.dim() });
    }
    let source = RngStream::new(params.seed);
    let mut ens = Ensemble::uniform_from(params.particles, 2, params.seed, &source)?;
    let m = substeps_for(&problem.flow, params.dt, params.substeps)?;
    let mut carried = CarriedWeights::default();
    for _ in 0..params.iterations {
        crate::ips::run_period_with(&mut ens, problem, m, params.dt, &source, params.resample, &mut carried)?;
    }
    let mut wanted: Vec<(usize, f64)> = phases.iter().map(|&p| ((p * m as f64).round() as usize, p)).collect();
    wanted.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut out = Vec::with_capacity(wanted.len());
    let mut next = 0;
    for i in 0..=m {
        while next < wanted.len() && wanted[next].0 == i {
            out.push((wanted[next].1, empirical_histogram(&ens, bins)?));
            next += 1;
        }
        if i < m {
            substep_with(&mut ens, problem, params.dt, &source, params.resample, &mut carried)?;
        }
    }
    Ok(out)
}

fn histogram_table(cfg: &RunConfig, phase: f64, h: &Histogram) -> Table {
    let mut t = Table::new("histogram", cfg, &["row", "col", "x1", "x2", "mass"]);
    t.comment(&format!("bins_per_dim={} domain=[0,2pi)^2 phase={phase}", h.bins));
    let w = crate::sde::TWO_PI / h.bins as f64;
    for r in 0..h.bins {
        for c in 0..h.bins {
            t.row(&[r.to_string(), c.to_string(), f((r as f64 + 0.5) * w), f((c as f64 + 0.5) * w), f(h.get(r, c))]);
        }
    }
    t
}

/// `histogram`: occupation histograms at phases of one period, optionally
/// for every σ of `sigma_grid`.
pub fn cmd_histogram(cfg: &RunConfig, opts: &RunOptions) -> Result<Value> {
    if cfg.flow.name.dim() != 2 {
        return Err(Error::Config("histograms need a two-dimensional flow".into()));
    }
    let prefix = cfg.prefix(opts);
    let phases = cfg.phases.clone().unwrap_or_else(|| vec![0.0, 1.0]);
    let lambda = cfg.lambda.unwrap_or(0.0);
    let sigmas: Vec<Option<f64>> = match &cfg.sigma_grid {
        Some(g) => g.iter().map(|&s| Some(s)).collect(),
        None => vec![cfg.sigma],
    };
    let mut runs = Vec::new();
    for (i, sigma) in sigmas.iter().enumerate() {
        let problem = cfg.problem(lambda)?.with_sigma(*sigma)?;
        let mut params = cfg.ips_params(cfg.time_step()?)?;
        if cfg.horizon.is_none() {
            params.iterations = cfg.n_iters;
        }
        let run_prefix = if cfg.sigma_grid.is_some() { format!("{prefix}_s{i}") } else { prefix.clone() };
        let hists = phase_histograms(&problem, &params, &phases, cfg.bins)?;
        let mut entries = Vec::new();
        for (phase, h) in &hists {
            let path = format!("{run_prefix}_hist_{}.csv", phase_label(*phase));
            histogram_table(cfg, *phase, h).write(&path)?;
            entries.push(json!({ "phase": phase, "file": path, "max_mass": h.max(), "total": h.total() }));
        }
        let tv_first_last = match (hists.first(), hists.last()) {
            (Some(a), Some(b)) if hists.len() > 1 => Some(a.1.total_variation(&b.1)),
            _ => None,
        };
        runs.push(json!({ "sigma": sigma, "histograms": entries, "tv_first_last": tv_first_last }));
    }
    let body = write_summary(&prefix, "histogram", cfg, json!({ "bins": cfg.bins, "runs": runs }))?;
    if opts.assert {
        for run in body["runs"].as_array().unwrap() {
            for h in run["histograms"].as_array().unwrap() {
                let total = h["total"].as_f64().unwrap();
                if (total - 1.0).abs() > 1e-12 {
                    return Err(mismatch(format!("histogram mass {total}")));
                }
            }
        }
    }
    Ok(body)
}

/// `oracle`: Galerkin eigenvalues or splitting errors.
pub fn cmd_oracle(cfg: &RunConfig, opts: &RunOptions) -> Result<Value> {
    let prefix = cfg.prefix(opts);
    match cfg.oracle_task {
        OracleTask::Eigenvalue => {
            let grid = match (&cfg.lambda_grid, cfg.lambda) {
                (Some(g), _) => g.clone(),
                (None, Some(l)) => vec![l],
                (None, None) => return Err(Error::Config("lambda or lambda_grid is required".into())),
            };
            let mut table = Table::new("oracle", cfg, &["lambda", "mu", "rho_im", "iterations"]);
            let mut rows = Vec::new();
            for &lambda in &grid {
                let p = cfg.problem(lambda)?;
                let eig = oracle_mu(&p, cfg.h, cfg.dt_ref)?;
                let dense = if p.flow.is_steady() {
                    Some(dense_principal_eigenvalue(&KppGenerator::new(&p, cfg.h)?)?.re)
                } else {
                    None
                };
                table.row(&[f(lambda), f(eig.mu), f(eig.rho.im), eig.iterations.to_string()]);
                rows.push(json!({ "lambda": lambda, "mu": eig.mu, "dense_mu": dense, "rho_im": eig.rho.im }));
            }
            table.write(&format!("{prefix}_curve.csv"))?;
            let body = write_summary(&prefix, "oracle", cfg, json!({ "H": cfg.h, "dt_ref": cfg.dt_ref, "eigenvalues": rows }))?;
            if opts.assert {
                let tol = cfg.tolerance.unwrap_or(1e-8);
                for r in body["eigenvalues"].as_array().unwrap() {
                    if let Some(d) = r["dense_mu"].as_f64() {
                        let err = (r["mu"].as_f64().unwrap() - d).abs();
                        if err > tol {
                            return Err(mismatch(format!("power iteration and Schur differ by {err:e}")));
                        }
                    }
                }
            }
            Ok(body)
        }
        OracleTask::Splitting => {
            let dts = cfg.dt_list.clone().ok_or_else(|| Error::Config("dt_list is required".into()))?;
            let errors = if cfg.test_problem {
                let gen = SplittingTestProblem::new(cfg.h)?;
                splitting_errors(&gen, &dts, cfg.dt_ref, 1.0)?
            } else {
                let p = cfg.problem(cfg.lambda.unwrap_or(0.0))?;
                let gen = KppGenerator::new(&p, cfg.h)?;
                let horizon = gen.period().or(cfg.period).unwrap_or(1.0);
                splitting_errors(&gen, &dts, cfg.dt_ref, horizon)?
            };
            let mut table = Table::new("oracle", cfg, &["dt", "error"]);
            for (dt, e) in &errors {
                table.row(&[f(*dt), f(*e)]);
            }
            table.write(&format!("{prefix}_curve.csv"))?;
            let (d, e): (Vec<f64>, Vec<f64>) = errors.iter().copied().unzip();
            let (slope, intercept, r2) = loglog_slope(&d, &e)?;
            let body = write_summary(
                &prefix,
                "oracle",
                cfg,
                json!({ "dts": d, "errors": e, "slope": slope, "intercept": intercept, "r2": r2 }),
            )?;
            if opts.assert {
                if let Some(band) = cfg.accept {
                    if !band.contains(slope) {
                        return Err(mismatch(format!("splitting slope {slope} outside [{}, {}]", band.min, band.max)));
                    }
                }
            }
            Ok(body)
        }
    }
}

/// Subcommands of the `kpp` binary.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Eig,
    FrontSpeed,
    Sweep,
    Convergence,
    Histogram,
    Oracle,
}

pub fn run(command: Command, cfg: &RunConfig, opts: &RunOptions) -> Result<Value> {
    match command {
        Command::Eig => cmd_eig(cfg, opts),
        Command::FrontSpeed => cmd_front_speed(cfg, opts),
        Command::Sweep => cmd_sweep(cfg, opts),
        Command::Convergence => cmd_convergence(cfg, opts),
        Command::Histogram => cmd_histogram(cfg, opts),
        Command::Oracle => cmd_oracle(cfg, opts),
    }
}

/// Default config for a flow family, handy as a starting point.
pub fn template(kind: FlowKind) -> RunConfig {
    let spec = match kind {
        FlowKind::UnsteadyCellular2D => FlowSpec::new(kind, 1.0).with_delta(0.5),
        FlowKind::Mixing2D | FlowKind::TimeDependentKolmogorov3D => FlowSpec::new(kind, 1.0).with_theta(1.0),
        FlowKind::TimeDependentABC3D => FlowSpec::new(kind, 1.0).with_omega(1.0),
        _ => FlowSpec::new(kind, 1.0),
    };
    RunConfig::for_flow(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn homogeneous() -> RunConfig {
        let mut cfg = RunConfig::for_flow(FlowSpec::new(FlowKind::Cellular2D, 0.0));
        cfg.particles = 200;
        cfg.n_iters = 5;
        cfg.dt = Some(0.1);
        cfg
    }

    #[test]
    fn config_round_trip_and_hash() {
        let mut cfg = homogeneous();
        cfg.lambda = Some(1.0);
        cfg.dt_list = Some(vec![0.5, 0.25]);
        cfg.reference = Some(Reference::Value(1.5));
        let back = RunConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        cfg.seed = 9;
        assert_ne!(back.hash(), cfg.hash());
    }

    #[test]
    fn config_rejections() {
        let bad = r#"{"flow":{"name":"Cellular2D","A":1.0},"lambda":1.0,"lambda_grid":[1.0]}"#;
        assert!(matches!(RunConfig::from_json(bad), Err(Error::Config(_))));
        let bad = r#"{"flow":{"name":"Cellular2D","A":1.0},"dt":0.1,"M":3,"T":1.0}"#;
        assert!(RunConfig::from_json(bad).is_err());
        let bad = r#"{"flow":{"name":"Nope","A":1.0}}"#;
        assert!(RunConfig::from_json(bad).is_err());
        let bad = r#"{"flow":{"name":"Cellular2D","A":1.0},"unknown":1}"#;
        assert!(RunConfig::from_json(bad).is_err());
        let ok = r#"{"flow":{"name":"UnsteadyCellular2D","A":1.0,"delta":0.5},"M":8,"T":1.0}"#;
        assert_eq!(RunConfig::from_json(ok).unwrap().time_step().unwrap(), 0.125);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Config("x".into())), 2);
        assert_eq!(exit_code(&Error::NonFinite("x".into())), 3);
        assert_eq!(exit_code(&Error::OracleMismatch("x".into())), 4);
    }

    #[test]
    fn eig_writes_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = homogeneous();
        cfg.lambda = Some(2.0);
        let opts = RunOptions { out: Some(dir.path().join("h").display().to_string()), assert: true };
        let body = cmd_eig(&cfg, &opts).unwrap();
        assert_eq!(body["mu"].as_f64().unwrap(), 5.0);
        let csv = fs::read_to_string(dir.path().join("h_curve.csv")).unwrap();
        let mut lines = csv.lines();
        assert!(lines.next().unwrap().starts_with("# kpp eig config_sha256="));
        assert_eq!(lines.next().unwrap(), "k,E_k,running_mu,running_stderr");
        assert_eq!(lines.count(), 5);
        assert!(dir.path().join("h_summary.json").exists());
    }

    #[test]
    fn histogram_without_iterations_is_near_uniform() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = homogeneous();
        cfg.fprime0 = 0.0;
        cfg.n_iters = 0;
        cfg.particles = 100_000;
        cfg.bins = 4;
        cfg.phases = Some(vec![0.0]);
        let opts = RunOptions { out: Some(dir.path().join("u").display().to_string()), assert: true };
        let body = cmd_histogram(&cfg, &opts).unwrap();
        let max = body["runs"][0]["histograms"][0]["max_mass"].as_f64().unwrap();
        assert!((max - 1.0 / 16.0).abs() < 0.005, "{max}");
        assert!(dir.path().join("u_hist_0.0000.csv").exists());
    }

    #[test]
    fn sweep_needs_descending_sigmas() {
        let mut cfg = homogeneous();
        cfg.sigma_grid = Some(vec![0.5, 1.0]);
        let opts = RunOptions::default();
        assert!(matches!(cmd_sweep(&cfg, &opts), Err(Error::Config(_))));
    }
}
