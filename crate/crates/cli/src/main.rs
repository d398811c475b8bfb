//! `grainfield` — batch experiment runner for germ-grain random fields.
//!
//! Every subcommand reads an optional JSON configuration, writes CSV data files,
//! a JSON report and JSON metadata sidecars into `--out`, and exits with status 0
//! if and only if every assertion recorded in the report passes.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use grainfield::geometry::{GrainShape, TestMeasure};
use grainfield::grain_model::{self, FieldSimulator, ModelParams};
use grainfield::harness::{self, ExperimentConfig, LawChoice};
use grainfield::heavytail::{self, VolumeLaw};
use grainfield::kernels::{self, KernelSpec};
use grainfield::limit_fields::{self, GaussianCovariance, GaussianFieldSpec, IntermediateFieldSpec, SmallJumpMode};
use grainfield::quadrature::Tolerance;
use grainfield::rng::Streams;
use grainfield::stats::{self, ReplicateBatch};
use serde::{Deserialize, Serialize};
use serde_json::json;

#[derive(Parser, Debug)]
#[command(name = "grainfield", version, about = "Germ-grain random field experiments")]
struct Cli {
    /// JSON configuration file for the subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the seed of the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "grainfield-out")]
    out: PathBuf,
    /// Worker threads (results do not depend on this).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Relative quadrature tolerance.
    #[arg(long, global = true)]
    tolerance: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Tabulate the limit kernel, Riesz energies and the limit Gram matrix.
    Kernel,
    /// Raw grain-field replicates with their exact moments.
    Simulate,
    /// Sample a limit field (Gaussian, stable or intermediate).
    Limit,
    /// Run a convergence experiment along a scaling schedule.
    Converge,
    /// Long-range-dependence covariance curves.
    Lrd,
}

fn default_gamma() -> f64 {
    1.5
}

fn default_shape() -> GrainShape {
    GrainShape::interval()
}

fn default_measures() -> Vec<TestMeasure> {
    vec![TestMeasure::interval(0.0, 1.0).expect("valid interval").with_id("unit")]
}

fn default_replicates() -> usize {
    10_000
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct KernelConfig {
    #[serde(default = "default_gamma")]
    gamma: f64,
    #[serde(default = "default_shape")]
    shape: GrainShape,
    #[serde(default)]
    rotated: bool,
    /// Radii along the first axis at which `K` is tabulated.
    #[serde(default = "default_radii")]
    xs: Vec<f64>,
    #[serde(default = "default_measures")]
    measures: Vec<TestMeasure>,
    /// Riesz indices `α` for the energy table.
    #[serde(default = "default_alphas")]
    alphas: Vec<f64>,
}

fn default_radii() -> Vec<f64> {
    vec![0.25, 0.5, 1.0, 2.0, 4.0, 8.0]
}

fn default_alphas() -> Vec<f64> {
    vec![0.1, 0.25, 0.5, 0.9]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SimulateConfig {
    #[serde(default)]
    gamma: Option<f64>,
    #[serde(default)]
    law: LawChoice,
    lambda: f64,
    rho: f64,
    #[serde(default = "default_shape")]
    shape: GrainShape,
    #[serde(default)]
    rotated: bool,
    #[serde(default = "default_measures")]
    measures: Vec<TestMeasure>,
    #[serde(default = "default_replicates")]
    replicates: usize,
    #[serde(default)]
    seed: u64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
enum LimitKind {
    Gaussian,
    Stable,
    Intermediate,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LimitConfig {
    kind: LimitKind,
    #[serde(default = "default_gamma")]
    gamma: f64,
    #[serde(default = "default_shape")]
    shape: GrainShape,
    #[serde(default)]
    rotated: bool,
    #[serde(default = "default_measures")]
    measures: Vec<TestMeasure>,
    #[serde(default = "default_replicates")]
    replicates: usize,
    /// Lattice spacing of the stable sampler.
    #[serde(default = "default_cell")]
    h: f64,
    /// `σ₀` of the intermediate field; `1/γ` when absent.
    #[serde(default)]
    sigma0: Option<f64>,
    #[serde(default)]
    small_jump_mode: SmallJumpMode,
    #[serde(default)]
    seed: u64,
}

fn default_cell() -> f64 {
    1e-3
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LrdConfig {
    #[serde(default)]
    gamma: Option<f64>,
    #[serde(default)]
    law: LawChoice,
    #[serde(default = "default_shape")]
    shape: GrainShape,
    #[serde(default = "default_r_grid")]
    r_grid: Vec<f64>,
}

fn default_r_grid() -> Vec<f64> {
    vec![2.0, 4.0, 8.0, 16.0, 32.0, 64.0]
}

/// One named assertion of a run report.
#[derive(Debug, Clone, Serialize)]
struct Check {
    name: String,
    value: f64,
    target: f64,
    tolerance: f64,
    pass: bool,
}

impl Check {
    fn within(name: impl Into<String>, value: f64, target: f64, tolerance: f64) -> Self {
        Check {
            name: name.into(),
            value,
            target,
            tolerance,
            pass: (value - target).abs() <= tolerance,
        }
    }
}

fn read_config<T: for<'de> Deserialize<'de>>(path: Option<&Path>) -> Result<Option<T>> {
    let Some(path) = path else {
        return Ok(None);
    };
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    Ok(Some(value))
}

fn tolerance_for(d: usize, rel: Option<f64>) -> Tolerance {
    let base = kernels::default_tolerance(d);
    match rel {
        Some(rel) => Tolerance::new(base.abs.min(rel * 1e-3), rel),
        None => base,
    }
}

fn law_of(choice: LawChoice, gamma: Option<f64>) -> Result<VolumeLaw> {
    Ok(match choice {
        LawChoice::Pareto => {
            let Some(gamma) = gamma else {
                bail!("a Pareto law needs gamma");
            };
            VolumeLaw::pareto_unit_mean(gamma)?
        }
        LawChoice::Exponential => VolumeLaw::exponential_unit_mean(),
    })
}

fn write_json(dir: &Path, name: &str, value: &impl Serialize) -> Result<()> {
    fs::write(dir.join(name), serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn write_report(dir: &Path, config: &impl Serialize, checks: &[Check], extra: serde_json::Value) -> Result<bool> {
    let pass = checks.iter().all(|c| c.pass);
    write_json(
        dir,
        "report.json",
        &json!({ "config": config, "checks": checks, "results": extra, "pass": pass }),
    )?;
    for c in checks {
        log::info!(
            "{}: value {:.6} target {:.6} tol {:.3e} {}",
            c.name,
            c.value,
            c.target,
            c.tolerance,
            if c.pass { "PASS" } else { "FAIL" }
        );
    }
    Ok(pass)
}

fn ids(measures: &[TestMeasure]) -> Vec<String> {
    measures
        .iter()
        .enumerate()
        .map(|(i, m)| m.id.clone().unwrap_or_else(|| format!("phi{i}")))
        .collect()
}

fn run_kernel(cli: &Cli) -> Result<bool> {
    let cfg: KernelConfig = match read_config(cli.config.as_deref())? {
        Some(c) => c,
        None => KernelConfig {
            gamma: default_gamma(),
            shape: default_shape(),
            rotated: false,
            xs: default_radii(),
            measures: default_measures(),
            alphas: default_alphas(),
        },
    };
    let spec = KernelSpec::new(cfg.gamma, cfg.shape, cfg.rotated)?;
    let tol = tolerance_for(spec.dim(), cli.tolerance);
    fs::write(cli.out.join("kernel.csv"), kernels::kernel_table_csv(&spec, &cfg.xs)?)?;

    let n = cfg.measures.len();
    let mut gram = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i..n {
            let c = kernels::cov_limit(&spec, &cfg.measures[i], &cfg.measures[j], tol)?;
            gram[i][j] = c;
            gram[j][i] = c;
        }
    }
    fs::write(cli.out.join("gram.csv"), kernels::gram_table_csv(&gram)?)?;

    let mut riesz = String::from("measure,alpha,inner\n");
    let mut checks = Vec::new();
    for (id, m) in ids(&cfg.measures).iter().zip(&cfg.measures) {
        for &alpha in &cfg.alphas {
            let e = kernels::riesz_inner(m, m, alpha, tol)?;
            riesz.push_str(&format!("{id},{alpha},{e}\n"));
            checks.push(Check {
                name: format!("riesz_finite[{id},{alpha}]"),
                value: e,
                target: 0.0,
                tolerance: f64::INFINITY,
                pass: e.is_finite() && e >= -1e-10,
            });
        }
    }
    fs::write(cli.out.join("riesz.csv"), riesz)?;
    let min_diag = (0..n).map(|i| gram[i][i]).fold(f64::INFINITY, f64::min);
    checks.push(Check {
        name: "gram_positive_diagonal".into(),
        value: min_diag,
        target: 0.0,
        tolerance: 0.0,
        pass: min_diag >= -1e-10,
    });
    let mut extra = json!({ "hurst": spec.hurst(), "gram": gram });
    if spec.dim() <= 2 {
        extra["theorem3_constant"] = json!(kernels::theorem3_constant(cfg.gamma, cfg.shape)?);
    }
    write_report(&cli.out, &cfg, &checks, extra)
}

fn run_simulate(cli: &Cli) -> Result<bool> {
    let Some(mut cfg): Option<SimulateConfig> = read_config(cli.config.as_deref())? else {
        bail!("simulate needs --config");
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let law = law_of(cfg.law, cfg.gamma)?;
    let params = ModelParams::new(cfg.lambda, cfg.rho, law, cfg.shape, cfg.rotated)?;
    let tol = tolerance_for(params.dim(), cli.tolerance);
    let sim = FieldSimulator::new(params.clone(), &cfg.measures, None)?;
    let batch = sim.batch(cfg.replicates, Streams::new(cfg.seed))?;
    batch.write(&cli.out, "samples")?;

    let mut checks = Vec::new();
    let mut moments = Vec::new();
    for (j, (id, m)) in ids(&cfg.measures).iter().zip(&cfg.measures).enumerate() {
        let col = batch.column(j);
        let (mean, mean_se) = stats::mean_se(&col);
        let exact_mean = grain_model::mean_j(&params, m) - sim.bias_bound(m).copysign(m.total_mass());
        checks.push(Check::within(format!("mean[{id}]"), mean, exact_mean, 4.0 * mean_se));
        let exact_var = if law.second_moment().is_finite() {
            let v = grain_model::cov_j(&params, m, m, tol)?;
            let (var, var_se) = stats::variance_se(&col);
            checks.push(Check::within(format!("variance[{id}]"), var, v, 4.0 * var_se));
            Some(v)
        } else {
            None
        };
        moments.push(json!({ "measure": id, "mean": mean, "exact_mean": exact_mean, "exact_variance": exact_var }));
    }
    let extra = json!({
        "v_cut": sim.v_cut(),
        "expected_count": sim.expected_count(),
        "expected_omitted": sim.expected_omitted(),
        "moments": moments,
    });
    write_report(&cli.out, &cfg, &checks, extra)
}

fn cf_check(batch: &ReplicateBatch, j: usize, id: &str, target: impl Fn(f64) -> Result<(f64, f64)>) -> Result<Check> {
    let col = batch.column(j);
    let n = col.len() as f64;
    let mut sup = 0.0f64;
    for p in stats::empirical_cf(&col, &harness::DEFAULT_T_GRID)? {
        let (re, im) = target(p.t)?;
        sup = sup.max((p.re - re).hypot(p.im - im));
    }
    Ok(Check::within(
        format!("sup_cf_distance[{id}]"),
        sup,
        0.0,
        4.0 / n.sqrt() + harness::LIMIT_CF_SLACK,
    ))
}

fn run_limit(cli: &Cli) -> Result<bool> {
    let Some(mut cfg): Option<LimitConfig> = read_config(cli.config.as_deref())? else {
        bail!("limit needs --config");
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let d = cfg.shape.d;
    let tol = tolerance_for(d, cli.tolerance);
    let streams = Streams::new(cfg.seed);
    let names = ids(&cfg.measures);
    let mut checks = Vec::new();
    let extra;
    match cfg.kind {
        LimitKind::Gaussian => {
            let spec = KernelSpec::new(cfg.gamma, cfg.shape, cfg.rotated)?;
            let field = GaussianFieldSpec::new(GaussianCovariance::Kernel(spec), &cfg.measures, tol)?;
            let batch = limit_fields::sample_gaussian_field(&field, cfg.replicates, streams)?;
            batch.write(&cli.out, "samples")?;
            for (j, id) in names.iter().enumerate() {
                let (var, se) = stats::variance_se(&batch.column(j));
                checks.push(Check::within(format!("variance[{id}]"), var, field.gram[j][j], 4.0 * se));
            }
            extra = json!({ "gram": field.gram, "jitter": field.jitter });
        }
        LimitKind::Stable => {
            let batch = limit_fields::sample_stable_field(&cfg.measures, cfg.gamma, cfg.h, cfg.replicates, streams)?;
            batch.write(&cli.out, "samples")?;
            let mut params = Vec::new();
            for (j, (id, m)) in names.iter().zip(&cfg.measures).enumerate() {
                let p = limit_fields::stable_marginal_params(m, cfg.gamma)?;
                checks.push(cf_check(&batch, j, id, |t| {
                    let z = heavytail::stable_cf(&p, t);
                    Ok((z.re, z.im))
                })?);
                params.push(json!({ "measure": id, "sigma": p.sigma, "beta": p.beta }));
            }
            extra = json!({ "marginals": params, "h": cfg.h });
        }
        LimitKind::Intermediate => {
            let spec = match cfg.sigma0 {
                Some(s) => IntermediateFieldSpec::new(cfg.gamma, cfg.shape, cfg.rotated, s, cfg.small_jump_mode)?,
                None => IntermediateFieldSpec::unit(cfg.gamma, cfg.shape, cfg.rotated, cfg.small_jump_mode)?,
            };
            let sampler = limit_fields::IntermediateSampler::new(spec, &cfg.measures)?;
            let batch = sampler.batch(cfg.replicates, streams)?;
            batch.write(&cli.out, "samples")?;
            let kspec = KernelSpec::new(cfg.gamma, cfg.shape, cfg.rotated)?;
            let mut targets = Vec::new();
            for (j, (id, m)) in names.iter().zip(sampler.dilated()).enumerate() {
                let target = kernels::cov_limit(&kspec, m, m, tol)?;
                let (var, se) = stats::variance_se(&batch.column(j));
                if cfg.small_jump_mode == SmallJumpMode::Gaussian {
                    checks.push(Check::within(format!("variance[{id}]"), var, target, 4.0 * se));
                }
                targets.push(target);
            }
            extra = json!({
                "delta": sampler.delta(),
                "expected_grains": sampler.expected_grains(),
                "variance_targets": targets,
            });
        }
    }
    write_report(&cli.out, &cfg, &checks, extra)
}

fn run_converge(cli: &Cli) -> Result<bool> {
    let Some(mut cfg): Option<ExperimentConfig> = read_config(cli.config.as_deref())? else {
        bail!("converge needs --config");
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if cli.tolerance.is_some() {
        cfg.tolerance = cli.tolerance;
    }
    let experiment = harness::run_convergence_experiment(&cfg)?;
    experiment.write(&cli.out)?;
    write_json(&cli.out, "config.json", &cfg)?;
    let r = &experiment.report;
    for row in &r.rows {
        log::info!(
            "rho {:.3e}: lambda {:.3e}, sup CF distance {:.4} (tolerance {:.4}) {}",
            row.rho,
            row.lambda,
            row.sup_distance,
            row.tolerance(),
            if row.pass { "PASS" } else { "FAIL" }
        );
    }
    if let Some(err) = &r.error {
        log::error!("experiment stopped early: {err}");
    }
    Ok(r.pass)
}

fn run_lrd(cli: &Cli) -> Result<bool> {
    let cfg: LrdConfig = match read_config(cli.config.as_deref())? {
        Some(c) => c,
        None => LrdConfig {
            gamma: Some(default_gamma()),
            law: LawChoice::Pareto,
            shape: default_shape(),
            r_grid: default_r_grid(),
        },
    };
    let law = law_of(cfg.law, cfg.gamma)?;
    let params = ModelParams::new(1.0, 1.0, law, cfg.shape, false)?;
    let tol = tolerance_for(cfg.shape.d, cli.tolerance);
    let prelimit = grain_model::lrd_covariance_curve(&params, &cfg.r_grid, tol)?;
    let limit = match law.tail_index() {
        Some(gamma) => Some(kernels::lrd_limit_divergence(&KernelSpec::new(gamma, cfg.shape, false)?, &cfg.r_grid, tol)?),
        None => None,
    };
    let mut csv = String::from("r,prelimit,limit\n");
    for (k, r) in cfg.r_grid.iter().enumerate() {
        let lim = limit.as_ref().map(|l| l[k].to_string()).unwrap_or_default();
        csv.push_str(&format!("{r},{},{lim}\n", prelimit[k]));
    }
    fs::write(cli.out.join("lrd.csv"), csv)?;
    let checks: Vec<Check> = prelimit
        .iter()
        .zip(&cfg.r_grid)
        .map(|(&c, r)| Check {
            name: format!("finite[r={r}]"),
            value: c,
            target: 0.0,
            tolerance: f64::INFINITY,
            pass: c.is_finite(),
        })
        .collect();
    write_report(&cli.out, &cfg, &checks, json!({ "prelimit": prelimit, "limit": limit }))
}

fn run(cli: &Cli) -> Result<bool> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the worker pool")?;
    }
    fs::create_dir_all(&cli.out).with_context(|| format!("creating {}", cli.out.display()))?;
    match cli.command {
        Command::Kernel => run_kernel(cli),
        Command::Simulate => run_simulate(cli),
        Command::Limit => run_limit(cli),
        Command::Converge => run_converge(cli),
        Command::Lrd => run_lrd(cli),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            log::warn!("some assertions failed; see {}", cli.out.join("report.json").display());
            ExitCode::FAILURE
        }
        Err(e) => {
            log::error!("{e:#}");
            ExitCode::from(2)
        }
    }
}
