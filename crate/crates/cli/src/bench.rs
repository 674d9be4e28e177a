//! Benchmark harness: simulate → infer → synthesize → evaluate over a grid
//! of trials, rollout counts, sample counts and methods.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use mmlqr::evaluation::{cost_lqr, dare, unstable_count};
use mmlqr::inference::{least_squares_estimate, sample_confidence_region, PosteriorSpec, SampleSet};
use mmlqr::model::{make_toeplitz_system, simulate_dataset, LinearSystem};
use mmlqr::synthesis::{
    solve_common_lyapunov, synthesize, synthesize_alternate_s, synthesize_nominal, SynthesisConfig, SynthesisReport,
};
use mmlqr::{Cost, Error, Gain, Result};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tracing::{debug, info};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Nominal,
    Cl,
    Proposed,
    AlternateS,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Nominal, Method::Cl, Method::Proposed, Method::AlternateS];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Nominal => "nominal",
            Method::Cl => "cl",
            Method::Proposed => "proposed",
            Method::AlternateS => "alternate-s",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Method::ALL
            .iter()
            .find(|m| m.as_str() == s)
            .copied()
            .ok_or_else(|| format!("unknown method `{s}` (expected nominal, cl, proposed or alternate-s)"))
    }
}

fn default_horizon() -> usize {
    6
}
fn default_confidence() -> f64 {
    95.0
}
fn default_true() -> bool {
    true
}
fn default_pool_factor() -> usize {
    20
}
fn default_q_scale() -> f64 {
    1e-3
}
fn default_r_scale() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub n_x: usize,
    pub rollout_counts: Vec<usize>,
    #[serde(rename = "T", default = "default_horizon")]
    pub horizon: usize,
    pub trials: usize,
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "c", default = "default_confidence")]
    pub confidence: f64,
    pub methods: Vec<Method>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_true")]
    pub known_pi: bool,
    /// Fresh confidence-region samples per cell for the unstable fraction;
    /// zero skips the robustness check.
    #[serde(default)]
    pub robust_samples: usize,
    /// Sample counts for an M-sweep; `M` is used when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep_m: Option<Vec<usize>>,
    #[serde(default = "default_pool_factor")]
    pub pool_factor: usize,
    #[serde(default = "default_q_scale")]
    pub q_scale: f64,
    #[serde(default = "default_r_scale")]
    pub r_scale: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon_conv: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_mm_iters: Option<usize>,
}

impl BenchmarkConfig {
    pub fn new(n_x: usize, rollout_counts: Vec<usize>, trials: usize, m: usize, methods: Vec<Method>) -> Self {
        Self {
            n_x,
            rollout_counts,
            horizon: default_horizon(),
            trials,
            m,
            confidence: default_confidence(),
            methods,
            seed: 0,
            known_pi: true,
            robust_samples: 0,
            sweep_m: None,
            pool_factor: default_pool_factor(),
            q_scale: default_q_scale(),
            r_scale: default_r_scale(),
            epsilon_conv: None,
            max_mm_iters: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(msg.to_string()));
        if self.n_x == 0 || self.horizon == 0 || self.trials == 0 || self.m == 0 || self.pool_factor == 0 {
            return bad("n_x, T, trials, M and pool_factor must be positive");
        }
        if self.rollout_counts.is_empty() || self.rollout_counts.contains(&0) {
            return bad("rollout_counts must be a nonempty list of positive counts");
        }
        if self.methods.is_empty() {
            return bad("at least one method is required");
        }
        if let Some(ms) = &self.sweep_m {
            if ms.is_empty() || ms.contains(&0) {
                return bad("sweep_m must be a nonempty list of positive counts");
            }
        }
        if !(self.confidence > 0.0 && self.confidence <= 100.0) {
            return bad("c must lie in (0, 100]");
        }
        if !(self.q_scale >= 0.0 && self.r_scale > 0.0) {
            return bad("q_scale must be nonnegative and r_scale positive");
        }
        Ok(())
    }

    pub fn sample_counts(&self) -> Vec<usize> {
        self.sweep_m.clone().unwrap_or_else(|| vec![self.m])
    }

    pub fn synthesis_config(&self) -> Result<SynthesisConfig<f64>> {
        let mut cfg = SynthesisConfig::new(
            DMatrix::identity(self.n_x, self.n_x) * self.q_scale,
            DMatrix::identity(self.n_x, self.n_x) * self.r_scale,
        )?;
        if let Some(e) = self.epsilon_conv {
            cfg.epsilon_conv = e;
        }
        if let Some(k) = self.max_mm_iters {
            cfg.max_mm_iters = k;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Order-sensitive hash of seed components.
pub fn derive_seed(parts: &[u64]) -> u64 {
    parts.iter().fold(0x6A09_E667_F3BC_C908, |h, &p| mix(h ^ mix(p)))
}

const TAG_DATA: u64 = 0xD1;
const TAG_SAMPLES: u64 = 0x5A;
const TAG_ROBUST: u64 = 0x70;

/// One CSV row.
#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub trial: usize,
    pub n_x: usize,
    pub n: usize,
    pub method: Method,
    pub m: usize,
    pub suboptimality: Cost<f64>,
    pub unstable_fraction: Option<f64>,
    pub iterations: Option<usize>,
    pub status: String,
    pub wall_time: f64,
    /// MM cost per iterate; empty for one-shot methods. Not written to CSV.
    pub cost_trace: Vec<f64>,
}

impl CellResult {
    /// A policy was produced.
    pub fn has_policy(&self) -> bool {
        matches!(self.status.as_str(), "ok" | "converged" | "max_iters")
    }
}

/// Everything shared by the methods of one `(trial, N, M)` cell group.
struct Scenario {
    truth: LinearSystem<f64>,
    nominal: Option<LinearSystem<f64>>,
    samples: std::result::Result<SampleSet<f64>, Error>,
    fresh: Option<Vec<LinearSystem<f64>>>,
}

fn posterior_spec(cfg: &BenchmarkConfig, truth: &LinearSystem<f64>) -> PosteriorSpec<f64> {
    if cfg.known_pi {
        PosteriorSpec::known_pi(truth.pi().clone())
    } else {
        PosteriorSpec::unknown_pi()
    }
}

fn prepare(cfg: &BenchmarkConfig, trial: usize, n: usize, m: usize) -> Result<Scenario> {
    let truth = make_toeplitz_system::<f64>(cfg.n_x)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[cfg.seed, trial as u64, n as u64, TAG_DATA]));
    let data = simulate_dataset(&truth, n, cfg.horizon, &mut rng)?;
    let spec = posterior_spec(cfg, &truth);
    let nominal =
        least_squares_estimate(&data).ok().and_then(|(a, b)| LinearSystem::new(a, b, truth.pi().clone()).ok());
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[cfg.seed, trial as u64, n as u64, m as u64, TAG_SAMPLES]));
    let samples = sample_confidence_region(&data, &spec, cfg.confidence, m, m * cfg.pool_factor, &mut rng);
    let fresh = if cfg.robust_samples > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[cfg.seed, trial as u64, n as u64, m as u64, TAG_ROBUST]));
        let k = cfg.robust_samples;
        sample_confidence_region(&data, &spec, cfg.confidence, k, k * cfg.pool_factor, &mut rng).ok().map(|s| s.samples)
    } else {
        None
    };
    Ok(Scenario { truth, nominal, samples, fresh })
}

struct Outcome {
    gain: Option<Gain>,
    iterations: Option<usize>,
    status: String,
    cost_trace: Vec<f64>,
}

impl Outcome {
    fn one_shot(k: Gain, iterations: Option<usize>) -> Self {
        Outcome { gain: Some(k), iterations, status: "ok".into(), cost_trace: Vec::new() }
    }

    fn from_report(r: SynthesisReport<f64>) -> Self {
        Outcome {
            gain: Some(r.k),
            iterations: Some(r.iterations),
            status: r.status.as_str().into(),
            cost_trace: r.cost_trace,
        }
    }
}

fn failed(status: &str) -> Outcome {
    Outcome { gain: None, iterations: None, status: status.to_string(), cost_trace: Vec::new() }
}

fn synthesis_failure(e: &Error) -> Outcome {
    match e {
        Error::Infeasible | Error::Numerical(_) => failed("infeasible_init"),
        Error::Unstabilizable => failed("unstabilizable"),
        _ => failed("error"),
    }
}

fn run_method(method: Method, sc: &Scenario, scfg: &SynthesisConfig<f64>) -> Outcome {
    let samples = match (&sc.samples, method) {
        (_, Method::Nominal) => None,
        (Ok(s), _) => Some(&s.samples),
        (Err(_), _) => return failed("inference_failed"),
    };
    match method {
        Method::Nominal => match &sc.nominal {
            Some(nom) => match synthesize_nominal(nom.a(), nom.b(), scfg) {
                Ok(k) => Outcome::one_shot(k, None),
                Err(e) => synthesis_failure(&e),
            },
            None => failed("inference_failed"),
        },
        Method::Cl => match solve_common_lyapunov(samples.expect("samples"), scfg) {
            Ok(cl) => Outcome::one_shot(cl.k, Some(0)),
            Err(e) => synthesis_failure(&e),
        },
        Method::Proposed => match synthesize(samples.expect("samples"), scfg) {
            Ok(r) => Outcome::from_report(r),
            Err(e) => synthesis_failure(&e),
        },
        Method::AlternateS => match &sc.nominal {
            Some(nom) => match synthesize_alternate_s(samples.expect("samples"), nom, scfg) {
                Ok(r) => Outcome::from_report(r),
                Err(e) => synthesis_failure(&e),
            },
            None => failed("inference_failed"),
        },
    }
}

fn evaluate_cell(
    cfg: &BenchmarkConfig,
    scfg: &SynthesisConfig<f64>,
    key: (usize, usize, usize),
    method: Method,
    sc: &Scenario,
) -> CellResult {
    let (trial, n, m) = key;
    let start = Instant::now();
    let out = run_method(method, sc, scfg);
    let wall_time = start.elapsed().as_secs_f64();
    let (suboptimality, unstable_fraction) = match &out.gain {
        Some(k) => {
            let sub = match dare(sc.truth.a(), sc.truth.b(), &scfg.q, &scfg.r) {
                Ok((_, k_opt)) => match cost_lqr(&k_opt, &sc.truth, &scfg.q, &scfg.r) {
                    Cost::Finite(opt) => cost_lqr(k, &sc.truth, &scfg.q, &scfg.r).ratio(opt),
                    Cost::Infinite => Cost::Infinite,
                },
                Err(_) => Cost::Infinite,
            };
            let frac = sc.fresh.as_ref().map(|f| unstable_count(k, f).fraction());
            (sub, frac)
        }
        None => (Cost::Infinite, None),
    };
    debug!(trial, n, m, method = method.as_str(), status = %out.status, "cell done");
    CellResult {
        trial,
        n_x: cfg.n_x,
        n,
        method,
        m,
        suboptimality,
        unstable_fraction,
        iterations: out.iterations,
        status: out.status,
        wall_time,
        cost_trace: out.cost_trace,
    }
}

/// Runs every cell. Groups sharing `(trial, N, M)` share data and samples;
/// groups run concurrently and rows come back in `(trial, N, M, method)`
/// order.
pub fn run_bench(cfg: &BenchmarkConfig) -> Result<Vec<CellResult>> {
    cfg.validate()?;
    let scfg = cfg.synthesis_config()?;
    let mut methods = cfg.methods.clone();
    methods.sort();
    methods.dedup();
    let mut keys = Vec::new();
    for trial in 0..cfg.trials {
        for &n in &cfg.rollout_counts {
            for m in cfg.sample_counts() {
                keys.push((trial, n, m));
            }
        }
    }
    info!(groups = keys.len(), methods = methods.len(), "starting benchmark");
    let groups: Vec<Result<Vec<CellResult>>> = keys
        .par_iter()
        .map(|&(trial, n, m)| {
            let sc = prepare(cfg, trial, n, m)?;
            let rows = methods.iter().map(|&method| evaluate_cell(cfg, &scfg, (trial, n, m), method, &sc)).collect();
            info!(trial, n, m, "group done");
            Ok(rows)
        })
        .collect();
    let mut rows = Vec::new();
    for g in groups {
        rows.extend(g?);
    }
    Ok(rows)
}

/// Median over trials for one `(N, M, method)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub n_x: usize,
    pub n: usize,
    pub m: usize,
    pub method: Method,
    pub trials: usize,
    /// Median with failed cells counted as infinite.
    pub median_suboptimality: Cost<f64>,
    /// Median over cells that produced a policy.
    pub median_suboptimality_feasible: Option<Cost<f64>>,
    pub infeasible_pct: f64,
    pub median_unstable_fraction: Option<f64>,
}

fn median_f64(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    let k = v.len();
    Some(if k % 2 == 1 { v[k / 2] } else { 0.5 * (v[k / 2 - 1] + v[k / 2]) })
}

pub fn summarize(rows: &[CellResult]) -> Vec<SummaryRow> {
    let mut keys: Vec<(usize, usize, Method)> = rows.iter().map(|r| (r.n, r.m, r.method)).collect();
    keys.sort();
    keys.dedup();
    keys.into_iter()
        .map(|(n, m, method)| {
            let cells: Vec<&CellResult> = rows.iter().filter(|r| r.n == n && r.m == m && r.method == method).collect();
            let all: Vec<Cost<f64>> = cells.iter().map(|r| r.suboptimality).collect();
            let feasible: Vec<Cost<f64>> = cells.iter().filter(|r| r.has_policy()).map(|r| r.suboptimality).collect();
            let infeasible = cells.iter().filter(|r| !r.has_policy()).count();
            SummaryRow {
                n_x: cells[0].n_x,
                n,
                m,
                method,
                trials: cells.len(),
                median_suboptimality: mmlqr::scalar::median_cost(&all).unwrap_or(Cost::Infinite),
                median_suboptimality_feasible: mmlqr::scalar::median_cost(&feasible),
                infeasible_pct: 100.0 * infeasible as f64 / cells.len() as f64,
                median_unstable_fraction: median_f64(cells.iter().filter_map(|r| r.unstable_fraction).collect()),
            }
        })
        .collect()
}

fn opt_str<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub const CELL_HEADER: [&str; 10] =
    ["trial", "n_x", "N", "method", "M", "suboptimality", "unstable_fraction", "iterations", "status", "wall_time"];

pub const SUMMARY_HEADER: [&str; 9] = [
    "n_x",
    "N",
    "M",
    "method",
    "trials",
    "median_suboptimality",
    "median_suboptimality_feasible",
    "infeasible_pct",
    "median_unstable_fraction",
];

pub fn write_cells<W: std::io::Write>(w: W, rows: &[CellResult]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let io = |e: csv::Error| Error::Io(e.to_string());
    out.write_record(CELL_HEADER).map_err(io)?;
    for r in rows {
        out.write_record([
            r.trial.to_string(),
            r.n_x.to_string(),
            r.n.to_string(),
            r.method.to_string(),
            r.m.to_string(),
            r.suboptimality.to_string(),
            opt_str(r.unstable_fraction),
            opt_str(r.iterations),
            r.status.clone(),
            format!("{:.6}", r.wall_time),
        ])
        .map_err(io)?;
    }
    out.flush().map_err(|e| Error::Io(e.to_string()))
}

pub fn write_summary<W: std::io::Write>(w: W, rows: &[SummaryRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let io = |e: csv::Error| Error::Io(e.to_string());
    out.write_record(SUMMARY_HEADER).map_err(io)?;
    for r in rows {
        out.write_record([
            r.n_x.to_string(),
            r.n.to_string(),
            r.m.to_string(),
            r.method.to_string(),
            r.trials.to_string(),
            r.median_suboptimality.to_string(),
            opt_str(r.median_suboptimality_feasible),
            format!("{}", r.infeasible_pct),
            opt_str(r.median_unstable_fraction),
        ])
        .map_err(io)?;
    }
    out.flush().map_err(|e| Error::Io(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_are_order_sensitive_and_distinct() {
        assert_ne!(derive_seed(&[1, 2]), derive_seed(&[2, 1]));
        assert_ne!(derive_seed(&[0, 0, 5]), derive_seed(&[0, 0, 20]));
        assert_eq!(derive_seed(&[7, 3]), derive_seed(&[7, 3]));
    }

    #[test]
    fn method_names_roundtrip() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
        assert!("worst-case".parse::<Method>().is_err());
    }

    #[test]
    fn config_json_uses_short_keys() {
        let text = r#"{"n_x": 3, "rollout_counts": [5], "trials": 2, "M": 10, "methods": ["nominal", "alternate-s"]}"#;
        let cfg: BenchmarkConfig = serde_json::from_str(text).unwrap();
        assert_eq!(cfg.horizon, 6);
        assert_eq!(cfg.confidence, 95.0);
        assert!(cfg.known_pi);
        assert_eq!(cfg.methods, vec![Method::Nominal, Method::AlternateS]);
        cfg.validate().unwrap();
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut cfg = BenchmarkConfig::new(3, vec![5], 1, 10, vec![Method::Nominal]);
        cfg.rollout_counts = vec![0];
        assert!(cfg.validate().is_err());
        let cfg = BenchmarkConfig::new(3, vec![5], 1, 10, vec![]);
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn summary_medians_sort_infinity_last() {
        let row = |trial, sub: Cost<f64>, status: &str| CellResult {
            trial,
            n_x: 3,
            n: 5,
            method: Method::Proposed,
            m: 10,
            suboptimality: sub,
            unstable_fraction: None,
            iterations: None,
            status: status.into(),
            wall_time: 0.0,
            cost_trace: Vec::new(),
        };
        let rows = vec![
            row(0, Cost::Finite(1.2), "converged"),
            row(1, Cost::Infinite, "infeasible_init"),
            row(2, Cost::Finite(1.1), "converged"),
        ];
        let s = summarize(&rows);
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].median_suboptimality, Cost::Finite(1.2));
        assert_eq!(s[0].median_suboptimality_feasible, Some(Cost::Finite(1.15)));
        assert!((s[0].infeasible_pct - 100.0 / 3.0).abs() < 1e-12);
    }
}
