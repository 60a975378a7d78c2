//! Proximal gradient iteration for `min_θ J(θ) + γ((1−r)/2|θ|² + r|θ|₁)` with
//! Barzilai–Borwein initial steps, backtracking and optional greedy
//! single-coordinate updates.

use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dynamics::ControlSystem;
use crate::error::{Error, Result};
use crate::model::ModelLayout;
use crate::objective::{penalty, ClosedLoopObjective, TrainingSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateMode {
    Full,
    Greedy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub gamma: f64,
    pub r: f64,
    /// Sufficient-decrease constant κ.
    pub kappa: f64,
    /// Backtracking factor.
    pub shrink_factor: f64,
    pub max_iterations: usize,
    pub max_backtracks: usize,
    pub gtol: f64,
    pub tol: f64,
    pub step_min: f64,
    pub step_max: f64,
    pub initial_step: f64,
    pub update_mode: UpdateMode,
    /// Score greedy candidates with the unscaled subdifferential of `|·|`.
    pub literal_greedy: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            gamma: 1e-6,
            r: 0.1,
            kappa: 0.5,
            shrink_factor: 0.5,
            max_iterations: 500,
            max_backtracks: 40,
            gtol: 1e-6,
            tol: 1e-10,
            step_min: 1e-8,
            step_max: 1e3,
            initial_step: 1.0,
            update_mode: UpdateMode::Full,
            literal_greedy: false,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(format!("optimizer: {what}")));
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return bad("gamma must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.r) {
            return bad("r must lie in [0, 1]");
        }
        if !(self.kappa > 0.0 && self.kappa < 1.0) {
            return bad("kappa must lie in (0, 1)");
        }
        if !(self.shrink_factor > 0.0 && self.shrink_factor < 1.0) {
            return bad("shrink_factor must lie in (0, 1)");
        }
        if !(self.step_min > 0.0 && self.step_min <= self.step_max) {
            return bad("step clamp must satisfy 0 < step_min <= step_max");
        }
        if !(self.initial_step > 0.0) {
            return bad("initial_step must be positive");
        }
        Ok(())
    }

    /// Weight of the `ℓ¹` term, `γ r`.
    pub fn l1_weight(&self) -> f64 {
        self.gamma * self.r
    }

    /// Weight of the quadratic term in the smooth part, `γ (1 − r)`.
    pub fn l2_weight(&self) -> f64 {
        self.gamma * (1.0 - self.r)
    }
}

/// Soft thresholding.
pub fn shrink(a: f64, b: f64) -> f64 {
    if a - b > 0.0 {
        a - b
    } else if a + b < 0.0 {
        a + b
    } else {
        0.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Coordinates {
    All,
    Single(usize),
}

/// `θ_j ← shrink(θ_j − s d_j, s γr)` on the selected coordinates.
pub fn prox_update(theta: &[f64], d: &[f64], s: f64, l1_weight: f64, coords: Coordinates) -> Vec<f64> {
    let mut out = theta.to_vec();
    match coords {
        Coordinates::All => {
            for (j, o) in out.iter_mut().enumerate() {
                *o = shrink(theta[j] - s * d[j], s * l1_weight);
            }
        }
        Coordinates::Single(j) => out[j] = shrink(theta[j] - s * d[j], s * l1_weight),
    }
    out
}

/// Distance of `0` from `d_j + γr ∂|·|(θ_j)`.
pub fn stationarity_score(d: f64, theta: f64, l1_weight: f64) -> f64 {
    if theta != 0.0 {
        (d + l1_weight * theta.signum()).abs()
    } else {
        (d.abs() - l1_weight).max(0.0)
    }
}

/// Coordinate with the largest stationarity violation; ties go to the lowest
/// index.
pub fn greedy_coordinate(d: &[f64], theta: &[f64], l1_weight: f64) -> usize {
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for j in 0..d.len() {
        let score = stationarity_score(d[j], theta[j], l1_weight);
        if score > best_score {
            best = j;
            best_score = score;
        }
    }
    best
}

/// Parity-alternating Barzilai–Borwein step, clamped to `[s_min, s_max]`.
/// Falls back to the clamp midpoint when the quotient is undefined.
pub fn bb_step(
    theta: &[f64],
    theta_prev: &[f64],
    d: &[f64],
    d_prev: &[f64],
    k: usize,
    clamp: (f64, f64),
) -> f64 {
    let mut ss = 0.0;
    let mut sy = 0.0;
    let mut yy = 0.0;
    for j in 0..theta.len() {
        let s = theta[j] - theta_prev[j];
        let y = d[j] - d_prev[j];
        ss += s * s;
        sy += s * y;
        yy += y * y;
    }
    let (num, den) = if k % 2 == 1 { (sy, yy) } else { (ss, sy) };
    let step = num / den;
    if !(den > 0.0) || !step.is_finite() || !(step > 0.0) {
        return 0.5 * (clamp.0 + clamp.1);
    }
    step.clamp(clamp.0, clamp.1)
}

/// Smooth part of the training problem.
pub trait SmoothObjective {
    /// Objective value, `+∞` for infeasible `θ`.
    fn value(&mut self, theta: &[f64]) -> Result<f64>;
    fn value_and_gradient(&mut self, theta: &[f64]) -> Result<(f64, Vec<f64>)>;
}

impl SmoothObjective for ClosedLoopObjective {
    fn value(&mut self, theta: &[f64]) -> Result<f64> {
        ClosedLoopObjective::value(self, theta)
    }
    fn value_and_gradient(&mut self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        ClosedLoopObjective::value_and_gradient(self, theta)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum BacktrackOutcome {
    Accepted {
        step: f64,
        theta: Vec<f64>,
        /// Smooth objective at the candidate.
        value: f64,
        /// Penalized objective at the candidate.
        penalized: f64,
        trials: usize,
    },
    /// The proximal map leaves `θ` unchanged.
    Unchanged,
    Failed,
}

/// Backtracking on `s = s₀ β_ls^i` until
/// `F(θ⁺) ≤ F(θ) − (κ/s)|θ − θ⁺|²` for the penalized objective `F`.
pub fn backtrack<O: SmoothObjective + ?Sized>(
    obj: &mut O,
    theta: &[f64],
    penalized: f64,
    d: &[f64],
    s0: f64,
    cfg: &OptimizerConfig,
    coords: Coordinates,
) -> Result<BacktrackOutcome> {
    let mut s = s0;
    for trial in 0..cfg.max_backtracks.max(1) {
        let candidate = prox_update(theta, d, s, cfg.l1_weight(), coords);
        if candidate == theta {
            return Ok(BacktrackOutcome::Unchanged);
        }
        let value = obj.value(&candidate)?;
        if value.is_finite() {
            let cand_penalized = value + penalty(&candidate, cfg.gamma, cfg.r);
            let dist2: f64 = candidate.iter().zip(theta).map(|(a, b)| (a - b) * (a - b)).sum();
            if cand_penalized <= penalized - cfg.kappa / s * dist2 {
                return Ok(BacktrackOutcome::Accepted {
                    step: s,
                    theta: candidate,
                    value,
                    penalized: cand_penalized,
                    trials: trial + 1,
                });
            }
        }
        s *= cfg.shrink_factor;
    }
    Ok(BacktrackOutcome::Failed)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    GradientTolerance,
    Stagnation,
    StepFailure,
    Stationary,
    MaxIterations,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    /// Penalized objective at the iterate.
    pub objective: f64,
    /// Smooth objective at the iterate.
    pub smooth: f64,
    pub grad_norm: f64,
    /// `|θ − prox(θ − d)|`, zero exactly at stationarity.
    pub prox_residual: f64,
    /// Step accepted to reach this iterate (0 for the initial point).
    pub step: f64,
    pub support: usize,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OptimizerTrace {
    pub rows: Vec<TraceRow>,
    pub stop: Option<StopReason>,
}

impl OptimizerTrace {
    /// Whether accepted objectives never increase.
    pub fn is_monotone(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].objective <= w[0].objective)
    }

    pub fn last(&self) -> Option<&TraceRow> {
        self.rows.last()
    }

    /// CSV `iter,J,grad_norm,step,support,seconds`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "iter,J,grad_norm,step,support,seconds")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{:e},{:e},{:e},{},{:.6}",
                r.iter, r.objective, r.grad_norm, r.step, r.support, r.seconds
            )?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerOutput {
    pub theta: Vec<f64>,
    pub trace: OptimizerTrace,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn support_size(theta: &[f64]) -> usize {
    theta.iter().filter(|&&t| t != 0.0).count()
}

/// Runs the proximal iteration from `theta0`.
pub fn minimize<O: SmoothObjective + ?Sized>(
    obj: &mut O,
    theta0: Vec<f64>,
    cfg: &OptimizerConfig,
) -> Result<OptimizerOutput> {
    cfg.validate()?;
    let start = Instant::now();
    let mut theta = theta0;
    let value0 = obj.value(&theta)?;
    if !value0.is_finite() {
        return Err(Error::InfeasibleInitialGuess(
            "closed loop leaves the box from some training initial condition".into(),
        ));
    }
    let (mut value, mut grad) = obj.value_and_gradient(&theta)?;
    let mut penalized = value + penalty(&theta, cfg.gamma, cfg.r);
    let mut trace = OptimizerTrace::default();
    let mut prev: Option<(Vec<f64>, Vec<f64>)> = None;
    let mut last_step = 0.0;

    for k in 0..=cfg.max_iterations {
        let d: Vec<f64> = grad
            .iter()
            .zip(&theta)
            .map(|(g, t)| g + cfg.l2_weight() * t)
            .collect();
        let prox_gap: Vec<f64> = prox_update(&theta, &d, 1.0, cfg.l1_weight(), Coordinates::All)
            .iter()
            .zip(&theta)
            .map(|(a, b)| a - b)
            .collect();
        let grad_norm = norm(&d);
        trace.rows.push(TraceRow {
            iter: k,
            objective: penalized,
            smooth: value,
            grad_norm,
            prox_residual: norm(&prox_gap),
            step: last_step,
            support: support_size(&theta),
            seconds: start.elapsed().as_secs_f64(),
        });
        log::debug!("iter {k}: J={penalized:.6e} |d|={grad_norm:.3e} support={}", support_size(&theta));
        if grad_norm <= cfg.gtol {
            trace.stop = Some(StopReason::GradientTolerance);
            break;
        }
        if k == cfg.max_iterations {
            trace.stop = Some(StopReason::MaxIterations);
            break;
        }
        let s0 = match &prev {
            None => cfg.initial_step,
            Some((theta_prev, d_prev)) => bb_step(&theta, theta_prev, &d, d_prev, k, (cfg.step_min, cfg.step_max)),
        };
        let coords = match cfg.update_mode {
            UpdateMode::Full => Coordinates::All,
            UpdateMode::Greedy => {
                let j = if cfg.literal_greedy {
                    greedy_coordinate(&d, &theta, 1.0)
                } else {
                    greedy_coordinate(&d, &theta, cfg.l1_weight())
                };
                Coordinates::Single(j)
            }
        };
        match backtrack(obj, &theta, penalized, &d, s0, cfg, coords)? {
            BacktrackOutcome::Accepted {
                step,
                theta: next,
                penalized: next_penalized,
                ..
            } => {
                let (v, g) = obj.value_and_gradient(&next)?;
                let change = (penalized - next_penalized).abs();
                prev = Some((std::mem::replace(&mut theta, next), d));
                value = v;
                grad = g;
                penalized = next_penalized;
                last_step = step;
                if change <= cfg.tol {
                    let d: Vec<f64> = grad
                        .iter()
                        .zip(&theta)
                        .map(|(g, t)| g + cfg.l2_weight() * t)
                        .collect();
                    let gap: Vec<f64> = prox_update(&theta, &d, 1.0, cfg.l1_weight(), Coordinates::All)
                        .iter()
                        .zip(&theta)
                        .map(|(a, b)| a - b)
                        .collect();
                    trace.rows.push(TraceRow {
                        iter: k + 1,
                        objective: penalized,
                        smooth: value,
                        grad_norm: norm(&d),
                        prox_residual: norm(&gap),
                        step,
                        support: support_size(&theta),
                        seconds: start.elapsed().as_secs_f64(),
                    });
                    trace.stop = Some(StopReason::Stagnation);
                    break;
                }
            }
            BacktrackOutcome::Unchanged => {
                trace.stop = Some(StopReason::Stationary);
                break;
            }
            BacktrackOutcome::Failed => {
                log::warn!("backtracking exhausted at iteration {k}");
                trace.stop = Some(StopReason::StepFailure);
                break;
            }
        }
    }
    Ok(OptimizerOutput { theta, trace })
}

/// Trains a polynomial value function on `train` starting from `theta0`.
pub fn run(
    sys: &ControlSystem,
    train: &TrainingSet,
    layout: &Arc<ModelLayout>,
    theta0: Vec<f64>,
    cfg: &OptimizerConfig,
) -> Result<OptimizerOutput> {
    let mut obj = ClosedLoopObjective::new(sys.clone(), train.clone(), Arc::clone(layout))?;
    minimize(&mut obj, theta0, cfg)
}
