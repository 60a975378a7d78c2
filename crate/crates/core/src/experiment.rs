//! Experiment configuration, orchestration and run artifacts.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{BasisKind, BasisSet};
use crate::benchmarks::{benchmark, sample_initial_conditions, BenchmarkSpec};
use crate::dynamics::{integrate_closed_loop, TimeGrid, Trajectory};
use crate::error::{Error, Result};
use crate::metrics::{compare_rollouts, EvaluationReport, EvaluationSettings};
use crate::model::{ModelLayout, PolynomialModel};
use crate::objective::TrainingSet;
use crate::optimizer::{self, OptimizerConfig, OptimizerTrace};
use crate::oracles::{open_loop_solve, riccati_rollout, solve_are, OpenLoopSettings};

pub const RUN_FORMAT: &str = "polyfeedback-run/1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisFamily {
    TotalDegree,
    HyperbolicCross,
}

impl BasisFamily {
    pub fn with_degree(self, n: u32) -> BasisKind {
        match self {
            BasisFamily::TotalDegree => BasisKind::TotalDegree(n),
            BasisFamily::HyperbolicCross => BasisKind::HyperbolicCross(n),
        }
    }

    fn of(kind: BasisKind) -> Option<BasisFamily> {
        match kind {
            BasisKind::TotalDegree(_) => Some(BasisFamily::TotalDegree),
            BasisKind::HyperbolicCross(_) => Some(BasisFamily::HyperbolicCross),
            BasisKind::Custom => None,
        }
    }
}

/// A single value or a list run in order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Schedule<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> Schedule<T> {
    pub fn values(&self) -> Vec<T> {
        match self {
            Schedule::One(v) => vec![v.clone()],
            Schedule::Many(v) => v.clone(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialGuessChoice {
    Zero,
    /// The benchmark's own initial guess (zero where it has none).
    #[default]
    Analytic,
    WarmStartFrom(PathBuf),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleKind {
    Riccati,
    OpenLoop,
    None,
}

fn default_true() -> bool {
    true
}

/// Experiment description. Omitted fields take the benchmark defaults;
/// [`ExperimentConfig::resolve`] fills them in.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub benchmark: String,
    #[serde(default)]
    pub basis_kind: Option<BasisFamily>,
    /// Degrees trained in order, each warm started from the previous one.
    #[serde(default)]
    pub degree: Option<Schedule<u32>>,
    /// Penalty weights trained in order (a ladder must decrease strictly).
    #[serde(default)]
    pub gamma: Option<Schedule<f64>>,
    #[serde(default)]
    pub r: Option<f64>,
    #[serde(default)]
    pub beta: Option<f64>,
    #[serde(default)]
    pub horizon: Option<f64>,
    #[serde(default)]
    pub steps: Option<usize>,
    /// Training set sizes; each set is a prefix of the same sample stream.
    #[serde(default)]
    pub training_sizes: Option<Vec<usize>>,
    #[serde(default)]
    pub test_size: Option<usize>,
    #[serde(default)]
    pub train_seed: Option<u64>,
    #[serde(default)]
    pub test_seed: Option<u64>,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub initial_guess: InitialGuessChoice,
    #[serde(default)]
    pub oracle: Option<OracleKind>,
    #[serde(default)]
    pub open_loop: OpenLoopSettings,
    #[serde(default)]
    pub evaluation: EvaluationSettings,
    #[serde(default = "default_true")]
    pub evaluate_training: bool,
    #[serde(default = "default_true")]
    pub write_trajectories: bool,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Minimal configuration for a benchmark with every default.
    pub fn for_benchmark(name: &str) -> ExperimentConfig {
        ExperimentConfig {
            benchmark: name.to_string(),
            basis_kind: None,
            degree: None,
            gamma: None,
            r: None,
            beta: None,
            horizon: None,
            steps: None,
            training_sizes: None,
            test_size: None,
            train_seed: None,
            test_seed: None,
            optimizer: OptimizerConfig::default(),
            initial_guess: InitialGuessChoice::default(),
            oracle: None,
            open_loop: OpenLoopSettings::default(),
            evaluation: EvaluationSettings::default(),
            evaluate_training: true,
            write_trajectories: true,
            output_dir: None,
        }
    }

    pub fn from_json(text: &str) -> Result<ExperimentConfig> {
        let raw: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid JSON: {e}")))?;
        if let Some(opt) = raw.get("optimizer").and_then(|o| o.as_object()) {
            for key in ["gamma", "r"] {
                if opt.contains_key(key) {
                    return Err(Error::Config(format!("set '{key}' at the top level, not under 'optimizer'")));
                }
            }
        }
        let cfg: ExperimentConfig = serde_json::from_value(raw).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<ExperimentConfig> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        ExperimentConfig::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(g) = &self.gamma {
            let values = g.values();
            if values.is_empty() || values.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
                return Err(Error::Config("gamma values must be positive".into()));
            }
            if values.windows(2).any(|w| w[1] >= w[0]) {
                return Err(Error::Config("gamma ladder must be strictly decreasing".into()));
            }
        }
        if let Some(r) = self.r {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::Config(format!("r = {r} outside [0, 1]")));
            }
        }
        if let Some(d) = &self.degree {
            let values = d.values();
            if values.is_empty() || values.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::Config("degrees must be given in increasing order".into()));
            }
        }
        if let Some(sizes) = &self.training_sizes {
            if sizes.is_empty() || sizes.contains(&0) {
                return Err(Error::Config("training sizes must be positive".into()));
            }
        }
        if self.test_size == Some(0) {
            return Err(Error::Config("test size must be positive".into()));
        }
        if matches!(self.horizon, Some(t) if !(t > 0.0)) || self.steps == Some(0) {
            return Err(Error::Config("horizon and steps must be positive".into()));
        }
        self.optimizer
            .validate()
            .map_err(|e| Error::Config(format!("optimizer: {e}")))
    }

    /// Copy with every benchmark default made explicit.
    pub fn resolve(&self, spec: &BenchmarkSpec) -> ExperimentConfig {
        let mut out = self.clone();
        let kind = spec.basis_kind;
        out.basis_kind = Some(self.basis_kind.or(BasisFamily::of(kind)).unwrap_or(BasisFamily::TotalDegree));
        out.degree = Some(
            self.degree
                .clone()
                .unwrap_or_else(|| Schedule::One(kind.degree().unwrap_or(2))),
        );
        out.gamma = Some(self.gamma.clone().unwrap_or_else(|| match &spec.gamma_ladder {
            Some(l) => Schedule::Many(l.clone()),
            None => Schedule::One(spec.gamma),
        }));
        out.r = Some(self.r.unwrap_or(spec.r));
        out.beta = Some(spec.system.beta());
        out.horizon = Some(self.horizon.unwrap_or(spec.horizon));
        out.steps = Some(self.steps.unwrap_or(spec.steps));
        out.training_sizes = Some(self.training_sizes.clone().unwrap_or_else(|| vec![spec.train_size]));
        out.test_size = Some(self.test_size.unwrap_or(spec.test_size));
        out.train_seed = Some(self.train_seed.unwrap_or(spec.train_seed));
        out.test_seed = Some(self.test_seed.unwrap_or(spec.test_seed));
        out.oracle = Some(self.oracle.unwrap_or(if spec.linear.is_some() {
            OracleKind::Riccati
        } else {
            OracleKind::OpenLoop
        }));
        out
    }
}

/// Learned coefficients with everything needed to rebuild the model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    /// Plain-text basis listing.
    pub basis: String,
    pub scale: f64,
    pub theta: Vec<f64>,
}

impl ModelArtifact {
    pub fn from_model(model: &PolynomialModel) -> ModelArtifact {
        ModelArtifact {
            basis: model.basis().to_listing(),
            scale: model.scale(),
            theta: model.theta().to_vec(),
        }
    }

    pub fn layout(&self) -> Result<Arc<ModelLayout>> {
        ModelLayout::new(BasisSet::from_listing(&self.basis)?, self.scale)
    }

    pub fn model(&self) -> Result<PolynomialModel> {
        let layout = self.layout()?;
        if layout.len() != self.theta.len() {
            return Err(Error::Format(format!(
                "{} coefficients for {} basis elements",
                self.theta.len(),
                layout.len()
            )));
        }
        layout.model(self.theta.clone())
    }
}

/// One trained model with its trace, evaluations and the resolved config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunArtifact {
    pub format: String,
    pub benchmark: String,
    pub training_size: usize,
    pub degree: u32,
    pub gamma: f64,
    pub r: f64,
    pub model: ModelArtifact,
    pub support: usize,
    pub trace: OptimizerTrace,
    pub train: Option<EvaluationReport>,
    pub test: Option<EvaluationReport>,
    pub config: ExperimentConfig,
}

impl RunArtifact {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<RunArtifact> {
        let artifact: RunArtifact =
            serde_json::from_str(text).map_err(|e| Error::Format(format!("corrupt run artifact: {e}")))?;
        if artifact.format != RUN_FORMAT {
            return Err(Error::Format(format!("unsupported artifact format {:?}", artifact.format)));
        }
        Ok(artifact)
    }

    pub fn from_file(path: &Path) -> Result<RunArtifact> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Format(format!("cannot read {}: {e}", path.display())))?;
        RunArtifact::from_json(&text)
    }
}

/// Benchmark and grid a resolved configuration describes.
pub struct Problem {
    pub spec: BenchmarkSpec,
    pub grid: TimeGrid,
}

impl Problem {
    pub fn from_config(cfg: &ExperimentConfig) -> Result<Problem> {
        let spec = benchmark(&cfg.benchmark, cfg.beta)?;
        let grid = TimeGrid::new(cfg.horizon.unwrap_or(spec.horizon), cfg.steps.unwrap_or(spec.steps))
            .map_err(|e| Error::Config(e.to_string()))?;
        Ok(Problem { spec, grid })
    }

    pub fn layout(&self, family: BasisFamily, degree: u32) -> Result<Arc<ModelLayout>> {
        self.spec.layout(family.with_degree(degree))
    }

    /// Optimal reference trajectories; `fallback` rollouts seed the open-loop
    /// solver where the uncontrolled state leaves its safety box.
    pub fn references(
        &self,
        oracle: OracleKind,
        points: &[Vec<f64>],
        fallback: Option<&[Trajectory]>,
        settings: &OpenLoopSettings,
    ) -> Result<Vec<Trajectory>> {
        let sys = &self.spec.system;
        match oracle {
            OracleKind::None => Err(Error::Config("no oracle configured".into())),
            OracleKind::Riccati => {
                let lin = self
                    .spec
                    .linear
                    .as_ref()
                    .ok_or_else(|| Error::Config(format!("{} is not linear-quadratic", self.spec.name)))?;
                let are = solve_are(&lin.a, sys.control_matrix(), &lin.q, sys.beta())?;
                points
                    .iter()
                    .map(|y0| riccati_rollout(&lin.a, sys.control_matrix(), &are, y0, self.grid))
                    .collect()
            }
            OracleKind::OpenLoop => points
                .par_iter()
                .enumerate()
                .map(|(i, y0)| {
                    let warm = fallback
                        .and_then(|f| f.get(i))
                        .filter(|t| !t.is_escaped())
                        .map(|t| t.controls());
                    let sol = open_loop_solve(sys, y0, self.grid, settings, warm)?;
                    if !sol.converged {
                        log::warn!("open-loop oracle not converged at point {i} (|g| = {:.2e})", sol.gradient_norm);
                    }
                    Ok(sol.trajectory)
                })
                .collect(),
        }
    }
}

/// Copies coefficients of shared multi-indices; new ones start at zero.
pub fn inject_coefficients(from: &BasisSet, theta: &[f64], to: &BasisSet) -> Result<Vec<f64>> {
    let mut out = vec![0.0; to.len()];
    for (alpha, &c) in from.iter().zip(theta) {
        match to.position(alpha) {
            Some(k) => out[k] = c,
            None if c == 0.0 => {}
            None => {
                return Err(Error::Config(format!("warm start coefficient on {alpha} has no place in the new basis")));
            }
        }
    }
    Ok(out)
}

fn learned_rollouts(model: &PolynomialModel, problem: &Problem, points: &[Vec<f64>]) -> Result<Vec<Trajectory>> {
    points
        .par_iter()
        .map(|y0| integrate_closed_loop(&problem.spec.system, model, y0, problem.grid))
        .collect()
}

/// Learned and reference rollouts on one point set.
pub struct Evaluation {
    pub report: EvaluationReport,
    pub learned: Vec<Trajectory>,
    pub references: Vec<Trajectory>,
}

/// Oracle trajectories are computed on the first call and reused.
struct ReferenceCache {
    points: Vec<Vec<f64>>,
    references: Option<Vec<Trajectory>>,
}

impl ReferenceCache {
    fn new(points: Vec<Vec<f64>>) -> Self {
        ReferenceCache {
            points,
            references: None,
        }
    }

    fn evaluate(&mut self, model: &PolynomialModel, problem: &Problem, cfg: &ExperimentConfig) -> Result<Evaluation> {
        let learned = learned_rollouts(model, problem, &self.points)?;
        if self.references.is_none() {
            let oracle = cfg.oracle.unwrap_or(OracleKind::OpenLoop);
            self.references = Some(problem.references(oracle, &self.points, Some(&learned), &cfg.open_loop)?);
        }
        let references = self.references.clone().expect("filled above");
        let report = compare_rollouts(&problem.spec.system, &learned, &references, &cfg.evaluation)?;
        Ok(Evaluation {
            report,
            learned,
            references,
        })
    }
}

fn initial_theta(cfg: &ExperimentConfig, problem: &Problem, layout: &Arc<ModelLayout>) -> Result<Vec<f64>> {
    match &cfg.initial_guess {
        InitialGuessChoice::Zero => Ok(vec![0.0; layout.len()]),
        InitialGuessChoice::Analytic => problem.spec.initial_guess.theta_for(layout),
        InitialGuessChoice::WarmStartFrom(path) => {
            let artifact = RunArtifact::from_file(path).map_err(|e| Error::Config(e.to_string()))?;
            if artifact.benchmark != problem.spec.name {
                return Err(Error::Config(format!(
                    "warm start artifact is for {}, not {}",
                    artifact.benchmark, problem.spec.name
                )));
            }
            if artifact.model.scale != layout.scale() {
                return Err(Error::Config("warm start artifact uses a different scale".into()));
            }
            let from = BasisSet::from_listing(&artifact.model.basis).map_err(|e| Error::Config(e.to_string()))?;
            if from.dim() != layout.dim() {
                return Err(Error::Config("warm start artifact has a different state dimension".into()));
            }
            inject_coefficients(&from, &artifact.model.theta, layout.basis())
        }
    }
}

/// Trains every (training size, degree, γ) combination of the config.
/// Writes artifacts and tables when an output directory is configured.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<RunArtifact>> {
    config.validate()?;
    let problem = Problem::from_config(config)?;
    let cfg = config.resolve(&problem.spec);
    let family = cfg.basis_kind.expect("resolved");
    let degrees = cfg.degree.as_ref().expect("resolved").values();
    let gammas = cfg.gamma.as_ref().expect("resolved").values();
    let r = cfg.r.expect("resolved");
    let sizes = cfg.training_sizes.clone().expect("resolved");
    let sys = &problem.spec.system;

    let (dim, scale) = (sys.dim(), problem.spec.scale);
    let test_points = sample_initial_conditions(dim, scale, cfg.test_size.expect("resolved"), cfg.test_seed.expect("resolved"));
    let mut test_cache = ReferenceCache::new(test_points);
    let max_size = sizes.iter().copied().max().unwrap_or(1);
    let pool = sample_initial_conditions(dim, scale, max_size, cfg.train_seed.expect("resolved"));
    let mut train_cache = ReferenceCache::new(pool.clone());

    let out_dir = cfg.output_dir.clone();
    if let Some(dir) = &out_dir {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("config.json"), serde_json::to_string_pretty(&cfg)?)?;
    }

    let mut artifacts = Vec::new();
    for &size in &sizes {
        let train = TrainingSet::new(pool[..size].to_vec(), problem.grid, sys)?;
        let mut previous: Option<(Arc<ModelLayout>, Vec<f64>)> = None;
        for &degree in &degrees {
            let layout = problem.layout(family, degree)?;
            for &gamma in &gammas {
                let theta0 = match &previous {
                    Some((prev_layout, theta)) => inject_coefficients(prev_layout.basis(), theta, layout.basis())?,
                    None => initial_theta(&cfg, &problem, &layout)?,
                };
                let mut opt = cfg.optimizer.clone();
                opt.gamma = gamma;
                opt.r = r;
                log::info!(
                    "{}: size {size}, degree {degree}, gamma {gamma:e}, |X| = {}",
                    problem.spec.name,
                    layout.len()
                );
                let out = optimizer::run(sys, &train, &layout, theta0, &opt)?;
                let model = layout.model(out.theta.clone())?;
                let train_eval = if cfg.evaluate_training && cfg.oracle != Some(OracleKind::None) {
                    // Training points are a prefix of the pool, so reuse its references.
                    let mut sub = ReferenceCache::new(pool[..size].to_vec());
                    if let Some(refs) = &train_cache.references {
                        if refs.len() >= size {
                            sub.references = Some(refs[..size].to_vec());
                        }
                    }
                    let eval = sub.evaluate(&model, &problem, &cfg)?;
                    if train_cache.references.as_ref().is_none_or(|r| r.len() < size) {
                        train_cache.references = sub.references.clone();
                    }
                    Some(eval)
                } else {
                    None
                };
                let test_eval = if cfg.oracle != Some(OracleKind::None) {
                    Some(test_cache.evaluate(&model, &problem, &cfg)?)
                } else {
                    None
                };
                let artifact = RunArtifact {
                    format: RUN_FORMAT.to_string(),
                    benchmark: problem.spec.name.clone(),
                    training_size: size,
                    degree,
                    gamma,
                    r,
                    model: ModelArtifact::from_model(&model),
                    support: model.support().len(),
                    trace: out.trace,
                    train: train_eval.as_ref().map(|e| e.report.clone()),
                    test: test_eval.as_ref().map(|e| e.report.clone()),
                    config: cfg.clone(),
                };
                if let Some(dir) = &out_dir {
                    write_run(dir, artifacts.len(), &artifact, test_eval.as_ref(), cfg.write_trajectories)?;
                }
                artifacts.push(artifact);
                previous = Some((Arc::clone(&layout), out.theta));
            }
        }
    }
    if let Some(dir) = &out_dir {
        write_tables(dir, &artifacts)?;
    }
    Ok(artifacts)
}

fn write_run(
    dir: &Path,
    index: usize,
    artifact: &RunArtifact,
    test: Option<&Evaluation>,
    trajectories: bool,
) -> Result<()> {
    let stem = format!("run{index:03}");
    fs::write(dir.join(format!("{stem}.json")), artifact.to_json()?)?;
    fs::write(dir.join(format!("{stem}_model.json")), serde_json::to_string_pretty(&artifact.model)?)?;
    artifact.trace.write_csv(fs::File::create(dir.join(format!("{stem}_trace.csv")))?)?;
    if let Some(eval) = test {
        eval.report
            .write_pairs_csv(fs::File::create(dir.join(format!("{stem}_pairs.csv")))?)?;
        fs::write(dir.join(format!("{stem}_test.json")), eval.report.summary_json()?)?;
        if trajectories {
            let tdir = dir.join(format!("{stem}_trajectories"));
            fs::create_dir_all(&tdir)?;
            for (i, (l, r)) in eval.learned.iter().zip(&eval.references).enumerate() {
                l.write_csv(fs::File::create(tdir.join(format!("learned_{i:03}.csv")))?)?;
                r.write_csv(fs::File::create(tdir.join(format!("oracle_{i:03}.csv")))?)?;
            }
        }
    }
    Ok(())
}

/// `errors.csv` (one row per run and point set, percentages) and
/// `support.csv` (support cardinality per run).
fn write_tables(dir: &Path, artifacts: &[RunArtifact]) -> Result<()> {
    use std::io::Write;
    let mut errors = fs::File::create(dir.join("errors.csv"))?;
    writeln!(errors, "run,training_size,degree,gamma,set,sse_u_pct,sse_y_pct,sse_j_pct,failures,unstabilized")?;
    let mut support = fs::File::create(dir.join("support.csv"))?;
    writeln!(support, "run,training_size,degree,gamma,support,cardinality,objective,iterations")?;
    for (i, a) in artifacts.iter().enumerate() {
        for (set, report) in [("train", &a.train), ("test", &a.test)] {
            if let Some(rep) = report {
                writeln!(
                    errors,
                    "{i},{},{},{:e},{set},{:.5},{:.5},{:.5},{},{}",
                    a.training_size,
                    a.degree,
                    a.gamma,
                    rep.sse_u_percent(),
                    rep.sse_y_percent(),
                    rep.sse_j_percent(),
                    rep.failures,
                    rep.unstabilized
                )?;
            }
        }
        let cardinality = a.model.theta.len();
        let last = a.trace.last();
        writeln!(
            support,
            "{i},{},{},{:e},{},{cardinality},{:e},{}",
            a.training_size,
            a.degree,
            a.gamma,
            a.support,
            last.map_or(f64::NAN, |r| r.objective),
            last.map_or(0, |r| r.iter)
        )?;
    }
    Ok(())
}

/// Re-evaluates a stored model on fresh points; defaults to the artifact's
/// test seed and size.
pub fn replay(artifact: &RunArtifact, seed: Option<u64>, count: Option<usize>) -> Result<EvaluationReport> {
    let cfg = &artifact.config;
    let problem = Problem::from_config(cfg)?;
    let model = artifact.model.model()?;
    if model.dim() != problem.spec.system.dim() {
        return Err(Error::Format("artifact model does not match its benchmark".into()));
    }
    let count = count.or(cfg.test_size).unwrap_or(problem.spec.test_size);
    if count == 0 {
        return Err(Error::InvalidArgument("replay needs at least one test point".into()));
    }
    let seed = seed.or(cfg.test_seed).unwrap_or(problem.spec.test_seed);
    let points = sample_initial_conditions(problem.spec.system.dim(), problem.spec.scale, count, seed);
    let mut cache = ReferenceCache::new(points);
    Ok(cache.evaluate(&model, &problem, cfg)?.report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::MultiIndex;

    #[test]
    fn config_parsing() {
        let cfg = ExperimentConfig::from_json(r#"{"benchmark": "lc_circuit", "gamma": [1e-1, 1e-2]}"#).unwrap();
        assert_eq!(cfg.gamma.unwrap().values(), vec![1e-1, 1e-2]);
        let cfg = ExperimentConfig::from_json(r#"{"benchmark": "vanderpol", "gamma": 1e-3, "degree": [4, 5]}"#).unwrap();
        assert_eq!(cfg.degree.unwrap().values(), vec![4, 5]);
        for bad in [
            r#"{"benchmark": "lc_circuit", "colour": 1}"#,
            r#"{"benchmark": "lc_circuit", "gamma": [1e-2, 1e-1]}"#,
            r#"{"benchmark": "lc_circuit", "gamma": [1e-2, 1e-2]}"#,
            r#"{"benchmark": "lc_circuit", "optimizer": {"gamma": 1.0}}"#,
            r#"{"benchmark": "lc_circuit", "optimizer": {"kappa": 0.0}}"#,
            r#"{"benchmark": "lc_circuit", "r": 2.0}"#,
            r#"{"benchmark": "lc_circuit", "degree": [3, 2]}"#,
            r#"{"benchmark": "lc_circuit""#,
        ] {
            assert!(matches!(ExperimentConfig::from_json(bad), Err(Error::Config(_))), "{bad}");
        }
        let cfg = ExperimentConfig::from_json(r#"{"benchmark": "lc_circuit", "initial_guess": {"warm_start_from": "a.json"}}"#).unwrap();
        assert_eq!(cfg.initial_guess, InitialGuessChoice::WarmStartFrom("a.json".into()));
    }

    #[test]
    fn resolve_fills_benchmark_defaults() {
        let spec = benchmark("allen_cahn", None).unwrap();
        let cfg = ExperimentConfig::for_benchmark("allen_cahn").resolve(&spec);
        assert_eq!(cfg.gamma.unwrap().values().len(), 10);
        assert_eq!(cfg.basis_kind, Some(BasisFamily::HyperbolicCross));
        assert_eq!(cfg.degree.unwrap().values(), vec![6]);
        assert_eq!(cfg.oracle, Some(OracleKind::OpenLoop));
        let lc = benchmark("lc_circuit", None).unwrap();
        assert_eq!(ExperimentConfig::for_benchmark("lc_circuit").resolve(&lc).oracle, Some(OracleKind::Riccati));
    }

    #[test]
    fn coefficient_injection() {
        let small = BasisSet::custom(2, vec![MultiIndex::new(vec![2, 0]), MultiIndex::new(vec![1, 1])]).unwrap();
        let big = BasisSet::custom(
            2,
            vec![MultiIndex::new(vec![1, 1]), MultiIndex::new(vec![0, 3]), MultiIndex::new(vec![2, 0])],
        )
        .unwrap();
        let at = |set: &BasisSet, e: [u32; 2]| set.position(&MultiIndex::new(e.to_vec())).unwrap();
        let mut theta_small = vec![0.0; 2];
        theta_small[at(&small, [2, 0])] = 1.5;
        theta_small[at(&small, [1, 1])] = -2.0;
        let injected = inject_coefficients(&small, &theta_small, &big).unwrap();
        assert_eq!(injected[at(&big, [2, 0])], 1.5);
        assert_eq!(injected[at(&big, [1, 1])], -2.0);
        assert_eq!(injected[at(&big, [0, 3])], 0.0);
        assert!(inject_coefficients(&big, &[1.0, 1.0, 1.0], &small).is_err());
        let mut theta_big = vec![1.0; 3];
        theta_big[at(&big, [0, 3])] = 0.0;
        assert_eq!(inject_coefficients(&big, &theta_big, &small).unwrap(), vec![1.0, 1.0]);
    }
}
