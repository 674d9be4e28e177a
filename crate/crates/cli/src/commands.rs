use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use mmlqr::evaluation::{evaluate_policy, unstable_count};
use mmlqr::inference::{least_squares_estimate, sample_confidence_region, PosteriorSpec};
use mmlqr::io::{
    from_json, matrix_to_rows, read_json, rows_to_matrix, to_json, DatasetDoc, EvaluationDoc, PolicyDoc, Rows,
    SampleSetDoc, SystemDoc,
};
use mmlqr::model::{make_toeplitz_system, simulate_dataset, Dataset, LinearSystem};
use mmlqr::synthesis::{
    solve_common_lyapunov, synthesize, synthesize_alternate_s, synthesize_nominal, SynthesisConfig,
};
use mmlqr::{Cost, Error};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use tracing::{info, warn};

use crate::bench::{self, BenchmarkConfig, Method};
use crate::{exit, BenchArgs, Cli, Command, EvaluateArgs, InferArgs, SimulateArgs, SynthesizeArgs};

/// An error with the exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        Self { code: exit::USAGE, message: msg.into() }
    }

    fn internal(e: impl std::fmt::Display) -> Self {
        Self { code: exit::INTERNAL, message: e.to_string() }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

type CliResult<T> = std::result::Result<T, CliError>;

/// Input problems are usage errors; everything else is internal.
fn input_error(e: Error) -> CliError {
    match e {
        Error::Io(_) | Error::Parse(_) | Error::Dimension(_) | Error::InvalidArgument(_) | Error::NotPsd(_) => {
            CliError::usage(e.to_string())
        }
        other => CliError::internal(other),
    }
}

fn read_doc<T: for<'de> serde::Deserialize<'de>>(path: &Path) -> CliResult<T> {
    if !path.is_file() {
        return Err(CliError::usage(format!("{}: no such file", path.display())));
    }
    read_json(path).map_err(input_error)
}

fn emit<T: Serialize>(out: Option<&Path>, doc: &T) -> CliResult<()> {
    let text = to_json(doc).map_err(CliError::internal)?;
    match out {
        Some(p) => fs::write(p, format!("{text}\n")).map_err(|e| CliError::usage(format!("{}: {e}", p.display()))),
        None => {
            let mut stdout = std::io::stdout().lock();
            writeln!(stdout, "{text}").map_err(CliError::internal)
        }
    }
}

/// Runs a parsed command line and returns the exit code on success.
pub fn run(cli: &Cli) -> CliResult<i32> {
    let out = cli.out.as_deref();
    match &cli.command {
        Command::Simulate(a) => simulate(a, cli.seed, out),
        Command::Infer(a) => infer(a, cli.seed, out),
        Command::Synthesize(a) => synthesize_cmd(a, out),
        Command::Evaluate(a) => evaluate(a, cli.seed, out),
        Command::Bench(a) => bench_cmd(a, cli.seed, out),
    }
}

fn simulate(a: &SimulateArgs, seed: u64, out: Option<&Path>) -> CliResult<i32> {
    if a.rollouts == 0 || a.horizon == 0 {
        return Err(CliError::usage("--rollouts and --horizon must be positive"));
    }
    let system = match &a.system {
        Some(p) => read_doc::<SystemDoc>(p)?.to_system().map_err(input_error)?,
        None => {
            if a.nx == 0 {
                return Err(CliError::usage("--nx must be positive"));
            }
            make_toeplitz_system(a.nx).map_err(input_error)?
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = simulate_dataset(&system, a.rollouts, a.horizon, &mut rng).map_err(input_error)?;
    info!(rollouts = a.rollouts, horizon = a.horizon, "simulated dataset");
    emit(out, &DatasetDoc::from_dataset(&data))?;
    Ok(exit::OK)
}

fn parse_known_pi(arg: &str, n_x: usize) -> CliResult<DMatrix<f64>> {
    let pi = if arg == "identity" {
        DMatrix::identity(n_x, n_x)
    } else {
        let rows: Rows = read_doc(Path::new(arg))?;
        rows_to_matrix(&rows, "known Pi").map_err(input_error)?
    };
    if pi.shape() != (n_x, n_x) {
        return Err(CliError::usage(format!("known Pi must be {n_x}x{n_x}")));
    }
    Ok(pi)
}

/// Residual covariance of the least-squares fit.
fn residual_covariance(data: &Dataset<f64>, a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = data.n_x();
    let mut s = DMatrix::zeros(n, n);
    for (x, u, xn) in data.transitions() {
        let e = xn - a * x - b * u;
        s += &e * e.transpose();
    }
    let dof = data.num_transitions().saturating_sub(n + data.n_u()).max(1);
    s / dof as f64
}

fn infer(a: &InferArgs, seed: u64, out: Option<&Path>) -> CliResult<i32> {
    if a.gibbs && a.known_pi.is_some() {
        return Err(CliError::usage("--gibbs and --known-pi are mutually exclusive"));
    }
    if a.samples == 0 {
        return Err(CliError::usage("--samples must be positive"));
    }
    let pool = a.pool.unwrap_or(20 * a.samples);
    if pool < a.samples {
        return Err(CliError::usage("--pool must be at least --samples"));
    }
    if !(a.confidence > 0.0 && a.confidence <= 100.0) {
        return Err(CliError::usage("--confidence must lie in (0, 100]"));
    }
    let data = read_doc::<DatasetDoc>(&a.data)?.to_dataset().map_err(input_error)?;
    let inference_error = |e: Error| CliError { code: exit::INFERENCE, message: e.to_string() };
    let (a_ls, b_ls) = least_squares_estimate(&data).map_err(inference_error)?;
    let (spec, nominal_pi) = if a.gibbs {
        (PosteriorSpec::unknown_pi(), residual_covariance(&data, &a_ls, &b_ls))
    } else {
        let pi = parse_known_pi(a.known_pi.as_deref().unwrap_or("identity"), data.n_x())?;
        (PosteriorSpec::known_pi(pi.clone()), pi)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let set =
        sample_confidence_region(&data, &spec, a.confidence, a.samples, pool, &mut rng).map_err(inference_error)?;
    info!(
        pool = set.stats.pool,
        weight_discards = set.stats.weight_discards,
        unstabilizable = set.stats.unstabilizable,
        "drew confidence-region samples"
    );
    let nominal = LinearSystem::new(a_ls, b_ls, nominal_pi).ok();
    if nominal.is_none() {
        warn!("least-squares model could not be stored as the nominal system");
    }
    emit(out, &SampleSetDoc::from_set(&set, nominal.as_ref()))?;
    Ok(exit::OK)
}

fn synthesis_config(a: &SynthesizeArgs, n_x: usize, n_u: usize) -> CliResult<SynthesisConfig<f64>> {
    if !(a.q_scale >= 0.0 && a.r_scale > 0.0 && a.tol >= 0.0) {
        return Err(CliError::usage("--q-scale and --tol must be nonnegative and --r-scale positive"));
    }
    let mut cfg =
        SynthesisConfig::new(DMatrix::identity(n_x, n_x) * a.q_scale, DMatrix::identity(n_u, n_u) * a.r_scale)
            .map_err(input_error)?;
    cfg.epsilon_conv = a.tol;
    cfg.max_mm_iters = a.max_iters;
    cfg.enforce_common_lyap_certificate = a.certificate;
    Ok(cfg)
}

fn infeasible(e: Error) -> CliError {
    match e {
        Error::Infeasible | Error::Numerical(_) | Error::Unstabilizable => {
            CliError { code: exit::INFEASIBLE, message: format!("infeasible_init: {e}") }
        }
        other => input_error(other),
    }
}

fn synthesize_cmd(a: &SynthesizeArgs, out: Option<&Path>) -> CliResult<i32> {
    let doc: SampleSetDoc = read_doc(&a.samples)?;
    let set = doc.to_set().map_err(input_error)?;
    let nominal = doc.nominal_system().map_err(input_error)?;
    let first =
        set.samples.first().or(nominal.as_ref()).ok_or_else(|| CliError::usage("sample file holds no models"))?;
    let cfg = synthesis_config(a, first.n_x(), first.n_u())?;
    let method = Method::from(a.method);
    let need_nominal =
        || nominal.as_ref().ok_or_else(|| CliError::usage(format!("method {method} needs a nominal model")));
    let need_samples = || {
        if set.samples.is_empty() {
            Err(CliError::usage(format!("method {method} needs at least one sample")))
        } else {
            Ok(&set.samples)
        }
    };
    let mut policy = PolicyDoc {
        k: Vec::new(),
        q: matrix_to_rows(&cfg.q),
        r: matrix_to_rows(&cfg.r),
        method: method.to_string(),
        cost_trace: Vec::new(),
        status: None,
        iterations: None,
        certificate: None,
    };
    let mut code = exit::OK;
    match method {
        Method::Nominal => {
            let nom = need_nominal()?;
            let k = synthesize_nominal(nom.a(), nom.b(), &cfg).map_err(infeasible)?;
            policy.k = matrix_to_rows(k.k());
            policy.status = Some("ok".into());
        }
        Method::Cl => {
            let cl = solve_common_lyapunov(need_samples()?, &cfg).map_err(infeasible)?;
            policy.k = matrix_to_rows(cl.k.k());
            policy.cost_trace = vec![Cost::from(cl.objective)];
            policy.status = Some("ok".into());
            policy.certificate = Some(matrix_to_rows(&cl.x));
        }
        Method::Proposed | Method::AlternateS => {
            let report = if method == Method::Proposed {
                synthesize(need_samples()?, &cfg)
            } else {
                synthesize_alternate_s(need_samples()?, need_nominal()?, &cfg)
            }
            .map_err(infeasible)?;
            policy.k = matrix_to_rows(report.k.k());
            policy.cost_trace = report.cost_trace.iter().map(|&c| Cost::from(c)).collect();
            policy.iterations = Some(report.iterations);
            policy.status = Some(report.status.as_str().into());
            policy.certificate = report.certificate.as_ref().map(|c| matrix_to_rows(&c.x));
            if report.status == mmlqr::synthesis::SynthesisStatus::MaxIters {
                warn!(iterations = report.iterations, "MM iteration cap reached");
                code = exit::MAX_ITERS;
            }
        }
    }
    info!(method = %method, status = ?policy.status, "synthesis finished");
    emit(out, &policy)?;
    Ok(code)
}

fn evaluate(a: &EvaluateArgs, seed: u64, out: Option<&Path>) -> CliResult<i32> {
    let policy: PolicyDoc = read_doc(&a.policy)?;
    let truth = read_doc::<SystemDoc>(&a.truth)?.to_system().map_err(input_error)?;
    let k = policy.gain().map_err(input_error)?;
    let (q, r) = policy.weights().map_err(input_error)?;
    if k.k().shape() != (truth.n_u(), truth.n_x()) {
        return Err(CliError::usage("policy and true system have different dimensions"));
    }
    let robustness = match (&a.data, a.robust_samples) {
        (Some(path), Some(count)) => {
            if count == 0 {
                return Err(CliError::usage("--robust-samples must be positive"));
            }
            let data = read_doc::<DatasetDoc>(path)?.to_dataset().map_err(input_error)?;
            let spec = PosteriorSpec::known_pi(truth.pi().clone());
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let fresh = sample_confidence_region(&data, &spec, a.confidence, count, 20 * count, &mut rng)
                .map_err(|e| CliError { code: exit::INFERENCE, message: e.to_string() })?;
            Some(unstable_count(&k, &fresh.samples))
        }
        _ => None,
    };
    let report = evaluate_policy(&k, &truth, &q, &r, robustness).map_err(CliError::internal)?;
    emit(out, &EvaluationDoc::from(&report))?;
    Ok(exit::OK)
}

fn bench_config(a: &BenchArgs, seed: u64) -> CliResult<BenchmarkConfig> {
    let cfg = match &a.config {
        Some(path) => {
            if !path.is_file() {
                return Err(CliError::usage(format!("{}: no such file", path.display())));
            }
            let text = fs::read_to_string(path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
            from_json::<BenchmarkConfig>(&text).map_err(input_error)?
        }
        None => {
            let mut cfg = BenchmarkConfig::new(
                a.nx,
                a.rollouts.clone(),
                a.trials,
                a.samples,
                a.methods.iter().map(|&m| m.into()).collect(),
            );
            cfg.horizon = a.horizon;
            cfg.confidence = a.confidence;
            cfg.robust_samples = a.robust_samples;
            cfg.sweep_m = a.sweep_m.clone();
            cfg.known_pi = !a.gibbs;
            cfg.seed = seed;
            cfg
        }
    };
    cfg.validate().map_err(input_error)?;
    Ok(cfg)
}

fn bench_cmd(a: &BenchArgs, seed: u64, out: Option<&Path>) -> CliResult<i32> {
    let cfg = bench_config(a, seed)?;
    let dir: PathBuf = out.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir).map_err(|e| CliError::usage(format!("{}: {e}", dir.display())))?;
    let rows = bench::run_bench(&cfg).map_err(CliError::internal)?;
    let summary = bench::summarize(&rows);
    let open = |name: &str| {
        let p = dir.join(name);
        fs::File::create(&p).map_err(|e| CliError::usage(format!("{}: {e}", p.display())))
    };
    bench::write_cells(open("cells.csv")?, &rows).map_err(CliError::internal)?;
    bench::write_summary(open("summary.csv")?, &summary).map_err(CliError::internal)?;
    info!(cells = rows.len(), dir = %dir.display(), "benchmark written");
    Ok(exit::OK)
}
