//! Normalized squared errors of learned feedback rollouts against reference
//! (optimal) trajectories, and the value scatter regression.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{integrate_closed_loop, ControlSystem, TimeGrid, Trajectory};
use crate::error::{Error, Result};
use crate::model::PolynomialModel;
use crate::objective::trajectory_cost;

/// Optimal value and learned value at one test point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValuePair {
    pub index: usize,
    pub oracle: f64,
    pub learned: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Regression {
    pub slope: f64,
    pub intercept: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub sse_u: f64,
    pub sse_y: f64,
    pub sse_j: f64,
    /// Escaped rollouts, excluded from every sum.
    pub failures: usize,
    /// Escapes plus rollouts ending above the stabilization threshold.
    pub unstabilized: usize,
    pub pairs: Vec<ValuePair>,
    /// `None` when fewer than two pairs or constant oracle values.
    pub regression: Option<Regression>,
}

impl EvaluationReport {
    pub fn sse_u_percent(&self) -> f64 {
        100.0 * self.sse_u
    }

    pub fn sse_y_percent(&self) -> f64 {
        100.0 * self.sse_y
    }

    pub fn sse_j_percent(&self) -> f64 {
        100.0 * self.sse_j
    }

    /// JSON summary `{sse_u, sse_y, sse_j, failures, unstabilized, slope, intercept}`.
    pub fn summary_json(&self) -> Result<String> {
        let summary = serde_json::json!({
            "sse_u": self.sse_u,
            "sse_y": self.sse_y,
            "sse_j": self.sse_j,
            "failures": self.failures,
            "unstabilized": self.unstabilized,
            "slope": self.regression.map(|r| r.slope),
            "intercept": self.regression.map(|r| r.intercept),
        });
        Ok(serde_json::to_string_pretty(&summary)?)
    }

    /// CSV `index,j_oracle,j_learned`.
    pub fn write_pairs_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "index,j_oracle,j_learned")?;
        for p in &self.pairs {
            writeln!(w, "{},{:e},{:e}", p.index, p.oracle, p.learned)?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSettings {
    /// A rollout with `|y(T)|_∞` above this counts as unstabilized.
    pub stabilization_threshold: Option<f64>,
}

/// Sum that does not depend on the order of the terms.
fn sorted_sum(mut terms: Vec<f64>) -> f64 {
    terms.sort_by(f64::total_cmp);
    terms.iter().sum()
}

fn ratio(num: f64, den: f64) -> f64 {
    if num == 0.0 {
        0.0
    } else {
        num / den
    }
}

fn squared_distance_integral(grid: &TimeGrid, a: &[f64], b: Option<&[f64]>, width: usize) -> f64 {
    (0..=grid.steps)
        .map(|k| {
            let row = &a[k * width..(k + 1) * width];
            let sq: f64 = match b {
                Some(b) => row.iter().zip(&b[k * width..(k + 1) * width]).map(|(x, y)| (x - y) * (x - y)).sum(),
                None => row.iter().map(|x| x * x).sum(),
            };
            grid.quadrature_weight(k) * sq
        })
        .sum()
}

/// Compares precomputed learned rollouts with reference trajectories; both
/// must carry node controls on the same grid.
pub fn compare_rollouts(
    sys: &ControlSystem,
    learned: &[Trajectory],
    references: &[Trajectory],
    settings: &EvaluationSettings,
) -> Result<EvaluationReport> {
    if learned.len() != references.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} learned rollouts for {} references",
            learned.len(),
            references.len()
        )));
    }
    let mut failures = 0;
    let mut unstabilized = 0;
    let (mut u_num, mut u_den, mut y_num, mut y_den, mut j_num, mut j_den) =
        (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut pairs = Vec::new();
    for (index, (l, r)) in learned.iter().zip(references).enumerate() {
        if l.grid != r.grid || l.dim() != r.dim() {
            return Err(Error::DimensionMismatch(format!("rollout {index} and its reference use different grids")));
        }
        if !r.has_controls() || r.is_escaped() {
            return Err(Error::InvalidArgument(format!("reference {index} is incomplete")));
        }
        if l.is_escaped() {
            failures += 1;
            unstabilized += 1;
            continue;
        }
        if let Some(limit) = settings.stabilization_threshold {
            if l.final_state().iter().any(|v| v.abs() > limit) {
                unstabilized += 1;
            }
        }
        let grid = r.grid;
        let m = r.control_dim();
        u_num.push(squared_distance_integral(&grid, l.controls(), Some(r.controls()), m));
        u_den.push(squared_distance_integral(&grid, r.controls(), None, m));
        y_num.push(squared_distance_integral(&grid, l.states(), Some(r.states()), r.dim()));
        y_den.push(squared_distance_integral(&grid, r.states(), None, r.dim()));
        let oracle = trajectory_cost(sys, r).total();
        let value = trajectory_cost(sys, l).total();
        j_num.push((oracle - value) * (oracle - value));
        j_den.push(oracle * oracle);
        pairs.push(ValuePair {
            index,
            oracle,
            learned: value,
        });
    }
    if pairs.is_empty() {
        return Err(Error::Evaluation("no test rollout stayed within the escape bound".into()));
    }
    let regression = scatter_regression(&pairs).ok();
    Ok(EvaluationReport {
        sse_u: ratio(sorted_sum(u_num), sorted_sum(u_den)),
        sse_y: ratio(sorted_sum(y_num), sorted_sum(y_den)),
        sse_j: ratio(sorted_sum(j_num), sorted_sum(j_den)),
        failures,
        unstabilized,
        pairs,
        regression,
    })
}

/// Rolls out the learned feedback from every test point and compares with
/// the references.
pub fn evaluate(
    model: &PolynomialModel,
    sys: &ControlSystem,
    test_points: &[Vec<f64>],
    references: &[Trajectory],
    grid: TimeGrid,
    settings: &EvaluationSettings,
) -> Result<(EvaluationReport, Vec<Trajectory>)> {
    if test_points.len() != references.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} test points for {} references",
            test_points.len(),
            references.len()
        )));
    }
    let learned = test_points
        .par_iter()
        .map(|y0| integrate_closed_loop(sys, model, y0, grid))
        .collect::<Result<Vec<_>>>()?;
    let report = compare_rollouts(sys, &learned, references, settings)?;
    Ok((report, learned))
}

/// Least-squares line of learned values on oracle values.
pub fn scatter_regression(pairs: &[ValuePair]) -> Result<Regression> {
    if pairs.len() < 2 {
        return Err(Error::Evaluation("regression needs at least two pairs".into()));
    }
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.oracle).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.learned).sum::<f64>() / n;
    let sxx: f64 = pairs.iter().map(|p| (p.oracle - mx).powi(2)).sum();
    let sxy: f64 = pairs.iter().map(|p| (p.oracle - mx) * (p.learned - my)).sum();
    let sx2: f64 = pairs.iter().map(|p| p.oracle * p.oracle).sum();
    if sxx <= 1e-24 * sx2.max(f64::MIN_POSITIVE) {
        return Err(Error::Evaluation("oracle values are constant".into()));
    }
    let slope = sxy / sxx;
    Ok(Regression {
        slope,
        intercept: my - slope * mx,
    })
}
