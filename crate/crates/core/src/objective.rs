//! Finite-horizon training objective, its adjoint-based gradient and the
//! elastic-net penalty.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::dynamics::{integrate_closed_loop, ClosedLoop, ControlSystem, TimeGrid, Trajectory};
use crate::error::{Error, Result};
use crate::model::{ModelLayout, PolynomialModel};

/// Initial conditions and time grid of the training problem.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSet {
    initial_conditions: Vec<Vec<f64>>,
    grid: TimeGrid,
}

impl TrainingSet {
    pub fn new(initial_conditions: Vec<Vec<f64>>, grid: TimeGrid, sys: &ControlSystem) -> Result<Self> {
        if initial_conditions.is_empty() {
            return Err(Error::InvalidArgument("training set is empty".into()));
        }
        for y0 in &initial_conditions {
            if y0.len() != sys.dim() {
                return Err(Error::DimensionMismatch(format!(
                    "initial condition of length {} for state dimension {}",
                    y0.len(),
                    sys.dim()
                )));
            }
            if !sys.in_box(y0) {
                return Err(Error::InvalidArgument("initial condition outside the box".into()));
            }
        }
        Ok(TrainingSet {
            initial_conditions,
            grid,
        })
    }

    pub fn initial_conditions(&self) -> &[Vec<f64>] {
        &self.initial_conditions
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn len(&self) -> usize {
        self.initial_conditions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.initial_conditions.is_empty()
    }
}

/// Cost split of one closed-loop trajectory.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrajectoryCost {
    /// `∫ ℓ(y) dt`
    pub state: f64,
    /// `∫ (β/2)|u|² dt`
    pub control: f64,
}

impl TrajectoryCost {
    pub fn total(&self) -> f64 {
        self.state + self.control
    }
}

#[derive(Clone, Debug)]
pub struct ObjectiveReport {
    /// Mean trajectory cost, `+∞` when any trajectory escaped.
    pub value: f64,
    pub costs: Vec<TrajectoryCost>,
    pub feasible: bool,
    pub trajectories: Vec<Trajectory>,
}

/// Trapezoid-rule cost of a trajectory with recorded feedback controls.
/// Only meaningful for trajectories that did not escape.
pub fn trajectory_cost(sys: &ControlSystem, traj: &Trajectory) -> TrajectoryCost {
    let mut state = 0.0;
    let mut control = 0.0;
    for k in 0..traj.len() {
        let q = traj.grid.quadrature_weight(k);
        state += q * sys.dynamics().running_cost(traj.state(k));
        if traj.has_controls() {
            control += q * 0.5 * sys.beta() * traj.control(k).iter().map(|u| u * u).sum::<f64>();
        }
    }
    TrajectoryCost { state, control }
}

/// Closed-loop rollouts from every training initial condition and the mean
/// cost. An escaped trajectory makes the value `+∞`.
pub fn cost(model: &PolynomialModel, sys: &ControlSystem, train: &TrainingSet) -> Result<ObjectiveReport> {
    let trajectories = train
        .initial_conditions
        .par_iter()
        .map(|y0| integrate_closed_loop(sys, model, y0, train.grid))
        .collect::<Result<Vec<_>>>()?;
    let feasible = trajectories.iter().all(|t| !t.is_escaped());
    let costs: Vec<TrajectoryCost> = trajectories.iter().map(|t| trajectory_cost(sys, t)).collect();
    let value = if feasible {
        costs.iter().map(TrajectoryCost::total).sum::<f64>() / train.len() as f64
    } else {
        f64::INFINITY
    };
    Ok(ObjectiveReport {
        value,
        costs,
        feasible,
        trajectories,
    })
}

/// Adjoint samples `p(t_k)` on the forward grid, row `k` at `[k·d, (k+1)·d)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Adjoint {
    pub dim: usize,
    pub values: Vec<f64>,
}

impl Adjoint {
    pub fn at(&self, k: usize) -> &[f64] {
        &self.values[k * self.dim..(k + 1) * self.dim]
    }
}

/// Linear adjoint coefficients at one node: `p' = M p + c`.
struct AdjointNode {
    m: DMatrix<f64>,
    c: DVector<f64>,
    grad_v: DVector<f64>,
}

fn adjoint_node(cl: &mut ClosedLoop<'_>, sys: &ControlSystem, y: &[f64]) -> AdjointNode {
    let d = y.len();
    let mut f = vec![0.0; d];
    let mut df = DMatrix::zeros(d, d);
    cl.rhs_and_jacobian(y, &mut f, &mut df);
    let grad_v = DVector::from_column_slice(cl.value_gradient());
    let hess = cl.value_hessian();
    let mut dl = vec![0.0; d];
    sys.dynamics().running_cost_gradient(y, &mut dl);
    // M = −DFᵀ with DF = Df − (1/β)BBᵀ∇²v; c = (1/β)∇²v BBᵀ ∇v + ∇ℓ
    let m = -df.transpose();
    let c = hess * (sys.control_gram() * &grad_v) / sys.beta() + DVector::from_vec(dl);
    AdjointNode { m, c, grad_v }
}

/// How the adjoint is discretized.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdjointScheme {
    /// Exact adjoint of the Crank–Nicolson and trapezoid discretization; the
    /// gradient is that of the computed objective.
    #[default]
    Discrete,
    /// Crank–Nicolson applied to the continuous adjoint equation; consistent
    /// with the discrete gradient up to `O(h²)`.
    Continuous,
}

/// Adjoint on the forward nodes, `p(T) = 0`.
///
/// For [`AdjointScheme::Continuous`] this integrates
/// `p' = −Df(y)ᵀ p + (1/β) ∇²v(y) BBᵀ (∇v(y) + p) + ∇ℓ(y)` backward with
/// Crank–Nicolson. For [`AdjointScheme::Discrete`] it returns the multipliers
/// of the discrete scheme rescaled to the same quantity, so that the
/// gradient formula is identical for both.
pub fn solve_adjoint(
    traj: &Trajectory,
    model: &PolynomialModel,
    sys: &ControlSystem,
    scheme: AdjointScheme,
) -> Result<Adjoint> {
    solve_adjoint_with_nodes(traj, model, sys, scheme).map(|(adj, _)| adj)
}

fn solve_adjoint_with_nodes(
    traj: &Trajectory,
    model: &PolynomialModel,
    sys: &ControlSystem,
    scheme: AdjointScheme,
) -> Result<(Adjoint, Vec<DVector<f64>>)> {
    if traj.is_escaped() {
        return Err(Error::GradientUnavailable("trajectory escaped the box".into()));
    }
    let d = sys.dim();
    let n = traj.len();
    let half = 0.5 * traj.grid.step();
    let id = DMatrix::<f64>::identity(d, d);
    let mut cl = ClosedLoop::new(sys, model);
    let mut values = vec![0.0; n * d];
    let mut grads = vec![DVector::zeros(d); n];
    let fail = |k: usize| Error::GradientUnavailable(format!("adjoint solve failed at node {k}"));
    match scheme {
        AdjointScheme::Continuous => {
            let mut next = adjoint_node(&mut cl, sys, traj.state(n - 1));
            let mut p_next = DVector::<f64>::zeros(d);
            grads[n - 1] = next.grad_v.clone();
            for k in (0..n - 1).rev() {
                let cur = adjoint_node(&mut cl, sys, traj.state(k));
                let lhs = &id + &cur.m * half;
                let rhs = (&id - &next.m * half) * &p_next - (&cur.c + &next.c) * half;
                let p = lhs
                    .lu()
                    .solve(&rhs)
                    .filter(|p| p.iter().all(|v| v.is_finite()))
                    .ok_or_else(|| fail(k))?;
                values[k * d..(k + 1) * d].copy_from_slice(p.as_slice());
                grads[k] = cur.grad_v.clone();
                p_next = p;
                next = cur;
            }
        }
        AdjointScheme::Discrete => {
            // Multipliers λ_k of the step equations y_k − y_{k−1} − (h/2)(F_{k−1} + F_k) = 0:
            // (I − (h/2)DF_k)ᵀ λ_k = (I + (h/2)DF_k)ᵀ λ_{k+1} − q_k ∂c/∂y(y_k), λ_{K+1} = 0.
            // With M = −DFᵀ the matrices are I + (h/2)M and I − (h/2)M.
            let mut lambda_next = DVector::<f64>::zeros(d);
            for k in (0..n).rev() {
                let node = adjoint_node(&mut cl, sys, traj.state(k));
                let q = traj.grid.quadrature_weight(k);
                grads[k] = node.grad_v;
                let lambda_here = if k == 0 {
                    DVector::zeros(d)
                } else {
                    let rhs = (&id - &node.m * half) * &lambda_next - &node.c * q;
                    (&id + &node.m * half)
                        .lu()
                        .solve(&rhs)
                        .filter(|l| l.iter().all(|v| v.is_finite()))
                        .ok_or_else(|| fail(k))?
                };
                // Effective p_k = (h/2q_k)(λ_k + λ_{k+1}).
                let p = (&lambda_here + &lambda_next) * (half / q);
                values[k * d..(k + 1) * d].copy_from_slice(p.as_slice());
                lambda_next = lambda_here;
            }
        }
    }
    Ok((Adjoint { dim: d, values }, grads))
}

/// `Σ_k q_k ∇φ_j(y_k)ᵀ BBᵀ(∇v(y_k) + p_k)` for every basis element `j`.
fn trajectory_gradient(
    traj: &Trajectory,
    model: &PolynomialModel,
    sys: &ControlSystem,
    scheme: AdjointScheme,
) -> Result<Vec<f64>> {
    let (adjoint, grads) = solve_adjoint_with_nodes(traj, model, sys, scheme)?;
    let layout = model.layout();
    let d = sys.dim();
    let mut out = vec![0.0; layout.len()];
    let mut values = vec![0.0; layout.tree().len()];
    let bbt = sys.control_gram();
    let mut w = vec![0.0; d];
    for k in 0..traj.len() {
        let p = adjoint.at(k);
        for (i, wi) in w.iter_mut().enumerate() {
            *wi = (0..d).map(|j| bbt[(i, j)] * (grads[k][j] + p[j])).sum();
        }
        layout.evaluate_features(traj.state(k), &mut values);
        layout.accumulate_feature_gradients(&values, &w, traj.grid.quadrature_weight(k), &mut out);
    }
    Ok(out)
}

/// Gradient of the mean cost with respect to `θ`,
/// `∂J/∂θ_j = (1/(Iβ)) Σ_i ∫ ∇φ_jᵀ BBᵀ (∇v + p_i) dt`.
pub fn gradient(
    model: &PolynomialModel,
    sys: &ControlSystem,
    train: &TrainingSet,
) -> Result<(Vec<f64>, ObjectiveReport)> {
    gradient_with(model, sys, train, AdjointScheme::Discrete)
}

pub fn gradient_with(
    model: &PolynomialModel,
    sys: &ControlSystem,
    train: &TrainingSet,
    scheme: AdjointScheme,
) -> Result<(Vec<f64>, ObjectiveReport)> {
    let report = cost(model, sys, train)?;
    let grad = gradient_from_report(model, sys, &report, scheme)?;
    Ok((grad, report))
}

/// Gradient from already computed forward trajectories.
pub fn gradient_from_report(
    model: &PolynomialModel,
    sys: &ControlSystem,
    report: &ObjectiveReport,
    scheme: AdjointScheme,
) -> Result<Vec<f64>> {
    if !report.feasible {
        return Err(Error::GradientUnavailable("model is infeasible on the training set".into()));
    }
    let per_trajectory = report
        .trajectories
        .par_iter()
        .map(|t| trajectory_gradient(t, model, sys, scheme))
        .collect::<Result<Vec<_>>>()?;
    let factor = 1.0 / (report.trajectories.len() as f64 * sys.beta());
    let mut out = vec![0.0; model.layout().len()];
    for g in &per_trajectory {
        for (o, v) in out.iter_mut().zip(g) {
            *o += v;
        }
    }
    out.iter_mut().for_each(|o| *o *= factor);
    Ok(out)
}

/// `γ((1−r)/2 |θ|₂² + r |θ|₁)`.
pub fn penalty(theta: &[f64], gamma: f64, r: f64) -> f64 {
    let sq: f64 = theta.iter().map(|t| t * t).sum();
    let abs: f64 = theta.iter().map(|t| t.abs()).sum();
    gamma * (0.5 * (1.0 - r) * sq + r * abs)
}

/// Training objective over a fixed layout; caches the last forward solve so a
/// gradient request at an accepted point does not repeat it.
pub struct ClosedLoopObjective {
    sys: ControlSystem,
    train: TrainingSet,
    layout: Arc<ModelLayout>,
    cache: Option<(PolynomialModel, ObjectiveReport)>,
}

impl ClosedLoopObjective {
    pub fn new(sys: ControlSystem, train: TrainingSet, layout: Arc<ModelLayout>) -> Result<Self> {
        if layout.dim() != sys.dim() {
            return Err(Error::DimensionMismatch(format!(
                "basis dimension {} for state dimension {}",
                layout.dim(),
                sys.dim()
            )));
        }
        Ok(ClosedLoopObjective {
            sys,
            train,
            layout,
            cache: None,
        })
    }

    pub fn system(&self) -> &ControlSystem {
        &self.sys
    }

    pub fn training_set(&self) -> &TrainingSet {
        &self.train
    }

    pub fn layout(&self) -> &Arc<ModelLayout> {
        &self.layout
    }

    fn evaluate(&mut self, theta: &[f64]) -> Result<&(PolynomialModel, ObjectiveReport)> {
        let hit = matches!(&self.cache, Some((m, _)) if m.theta() == theta);
        if !hit {
            let model = self.layout.model(theta.to_vec())?;
            let report = cost(&model, &self.sys, &self.train)?;
            self.cache = Some((model, report));
        }
        Ok(self.cache.as_ref().expect("cache filled"))
    }

    /// Mean cost (`+∞` if infeasible).
    pub fn value(&mut self, theta: &[f64]) -> Result<f64> {
        Ok(self.evaluate(theta)?.1.value)
    }

    pub fn value_and_gradient(&mut self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        let sys = self.sys.clone();
        let (model, report) = self.evaluate(theta)?;
        let g = gradient_from_report(model, &sys, report, AdjointScheme::Discrete)?;
        Ok((report.value, g))
    }

    pub fn report(&mut self, theta: &[f64]) -> Result<ObjectiveReport> {
        Ok(self.evaluate(theta)?.1.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{BasisSet, MultiIndex};
    use crate::dynamics::{FnDynamics, LinearQuadratic};

    fn scalar_sys(a: f64, q: f64, l: f64) -> ControlSystem {
        let lq = LinearQuadratic::new(DMatrix::from_element(1, 1, a), DMatrix::from_element(1, 1, q)).unwrap();
        ControlSystem::new(Arc::new(lq), DMatrix::from_element(1, 1, 1.0), 1.0, l).unwrap()
    }

    fn y_squared(l: f64) -> Arc<ModelLayout> {
        ModelLayout::new(BasisSet::custom(1, vec![MultiIndex::new(vec![2])]).unwrap(), l).unwrap()
    }

    #[test]
    fn penalty_examples() {
        assert_eq!(penalty(&[0.0, 0.0], 1.0, 0.5), 0.0);
        assert_eq!(penalty(&[3.0, -4.0], 1.0, 0.0), 12.5);
        assert_eq!(penalty(&[3.0, -4.0], 2.0, 1.0), 14.0);
    }

    #[test]
    fn trivial_cost_is_zero() {
        let dynamics = FnDynamics::new(1, |_y, o| o[0] = 0.0, |_y, j| j.fill(0.0), |_y| 0.0, |_y, g| g[0] = 0.0);
        let sys = ControlSystem::new(Arc::new(dynamics), DMatrix::from_element(1, 1, 1.0), 1.0, 2.0).unwrap();
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let train = TrainingSet::new(vec![vec![1.0]], grid, &sys).unwrap();
        let report = cost(&y_squared(2.0).zero_model(), &sys, &train).unwrap();
        assert_eq!(report.value, 0.0);
        assert!(report.feasible);
    }

    #[test]
    fn decaying_state_cost() {
        // y' = −y, ℓ = y² (Q = 2 in the ½yᵀQy form): ∫₀^T e^{−2t} = (1 − e^{−2T})/2
        let sys = scalar_sys(-1.0, 2.0, 2.0);
        let grid = TimeGrid::new(10.0, 2000).unwrap();
        let train = TrainingSet::new(vec![vec![1.0]], grid, &sys).unwrap();
        let report = cost(&y_squared(2.0).zero_model(), &sys, &train).unwrap();
        let want = 0.5 * (1.0 - (-20.0f64).exp());
        assert!((report.value - want).abs() < 1e-4, "{}", report.value);
    }

    #[test]
    fn escape_gives_infinite_cost() {
        let sys = scalar_sys(1.0, 1.0, 1.0);
        let grid = TimeGrid::new(5.0, 100).unwrap();
        let train = TrainingSet::new(vec![vec![0.9]], grid, &sys).unwrap();
        let model = y_squared(1.0).zero_model();
        let report = cost(&model, &sys, &train).unwrap();
        assert!(!report.feasible);
        assert_eq!(report.value, f64::INFINITY);
        assert!(gradient(&model, &sys, &train).is_err());
    }

    #[test]
    fn adjoint_vanishes_without_forcing() {
        let dynamics = FnDynamics::new(1, |y, o| o[0] = -y[0], |_y, j| j.fill(-1.0), |_y| 0.0, |_y, g| g[0] = 0.0);
        let sys = ControlSystem::new(Arc::new(dynamics), DMatrix::from_element(1, 1, 1.0), 1.0, 2.0).unwrap();
        let model = y_squared(2.0).zero_model();
        let traj = integrate_closed_loop(&sys, &model, &[1.0], TimeGrid::new(1.0, 20).unwrap()).unwrap();
        for scheme in [AdjointScheme::Continuous, AdjointScheme::Discrete] {
            let p = solve_adjoint(&traj, &model, &sys, scheme).unwrap();
            assert!(p.values.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn adjoint_converges_at_second_order() {
        let sys = scalar_sys(0.0, 1.0, 2.0);
        let model = y_squared(1.0).model(vec![0.3]).unwrap();
        let solve = |steps: usize| {
            let traj = integrate_closed_loop(&sys, &model, &[1.0], TimeGrid::new(2.0, steps).unwrap()).unwrap();
            solve_adjoint(&traj, &model, &sys, AdjointScheme::Continuous).unwrap().at(0)[0]
        };
        let reference = solve(6400);
        let e1 = (solve(50) - reference).abs();
        let e2 = (solve(100) - reference).abs();
        assert!(e1 / e2 > 3.5 && e1 / e2 < 4.5, "ratio {}", e1 / e2);
    }

    #[test]
    fn adjoint_matches_closed_form() {
        // y' = −a y (a = 2θ), ℓ = y²/2, v = θy², β = 1, so ∇v = 2θy, ∇²v = 2θ.
        // The adjoint reduces to p' = a p + (a² + 1) e^{−at}, p(T) = 0, so
        // p(t) = −(a²+1)/(2a) (e^{−at} − e^{a(t−2T)}).
        let theta = 0.4;
        let a = 2.0 * theta;
        let t_end = 1.5;
        let sys = scalar_sys(0.0, 1.0, 2.0);
        let model = y_squared(1.0).model(vec![theta]).unwrap();
        let grid = TimeGrid::new(t_end, 3000).unwrap();
        let traj = integrate_closed_loop(&sys, &model, &[1.0], grid).unwrap();
        let p = solve_adjoint(&traj, &model, &sys, AdjointScheme::Continuous).unwrap();
        for k in [0, 1000, 2999] {
            let t = grid.time(k);
            let exact = -(a * a + 1.0) / (2.0 * a) * ((-a * t).exp() - (a * (t - 2.0 * t_end)).exp());
            assert!((p.at(k)[0] - exact).abs() < 1e-6, "k={k}: {} vs {exact}", p.at(k)[0]);
        }
    }

    #[test]
    fn gradient_matches_finite_differences_scalar() {
        let sys = scalar_sys(0.5, 1.0, 3.0);
        let layout = ModelLayout::new(
            BasisSet::custom(1, vec![MultiIndex::new(vec![2]), MultiIndex::new(vec![4])]).unwrap(),
            3.0,
        )
        .unwrap();
        let grid = TimeGrid::new(2.0, 2000).unwrap();
        let train = TrainingSet::new(vec![vec![1.0], vec![-2.0]], grid, &sys).unwrap();
        let theta = vec![6.0, 1.5];
        let (g, _) = gradient(&layout.model(theta.clone()).unwrap(), &sys, &train).unwrap();
        for j in 0..2 {
            let h = 1e-4 * theta[j].abs().max(1.0);
            let f = |delta: f64| {
                let mut t = theta.clone();
                t[j] += delta;
                cost(&layout.model(t).unwrap(), &sys, &train).unwrap().value
            };
            let fd = (8.0 * (f(h) - f(-h)) - (f(2.0 * h) - f(-2.0 * h))) / (12.0 * h);
            assert!((fd - g[j]).abs() <= 1e-4 * fd.abs().max(1e-8), "{j}: {fd} vs {}", g[j]);
        }
    }

    #[test]
    fn discrete_gradient_is_exact_on_coarse_grids() {
        // Nonlinear drift, cubic term in v, very coarse step: only the exact
        // discrete adjoint agrees with finite differences to many digits.
        let dynamics = FnDynamics::new(
            2,
            |y, o| {
                o[0] = y[1];
                o[1] = -y[0] + 0.5 * y[0] * y[0] * y[1];
            },
            |y, j| {
                j[(0, 0)] = 0.0;
                j[(0, 1)] = 1.0;
                j[(1, 0)] = -1.0 + y[0] * y[1];
                j[(1, 1)] = 0.5 * y[0] * y[0];
            },
            |y| 0.5 * (y[0] * y[0] + y[1] * y[1]),
            |y, g| g.copy_from_slice(y),
        );
        let sys = ControlSystem::new(Arc::new(dynamics), DMatrix::from_column_slice(2, 1, &[0.0, 1.0]), 0.5, 2.0)
            .unwrap();
        let basis = BasisSet::custom(
            2,
            vec![MultiIndex::new(vec![0, 2]), MultiIndex::new(vec![1, 1]), MultiIndex::new(vec![1, 2])],
        )
        .unwrap();
        let layout = ModelLayout::new(basis, 2.0).unwrap();
        let grid = TimeGrid::new(2.0, 16).unwrap();
        let train = TrainingSet::new(vec![vec![1.0, -0.5], vec![-1.5, 1.0]], grid, &sys).unwrap();
        let theta = vec![1.2, 0.4, -0.3];
        let (g, _) = gradient(&layout.model(theta.clone()).unwrap(), &sys, &train).unwrap();
        let (gc, _) = gradient_with(&layout.model(theta.clone()).unwrap(), &sys, &train, AdjointScheme::Continuous).unwrap();
        let mut continuous_gap = 0.0f64;
        for j in 0..3 {
            let h = 1e-4;
            let f = |delta: f64| {
                let mut t = theta.clone();
                t[j] += delta;
                cost(&layout.model(t).unwrap(), &sys, &train).unwrap().value
            };
            let fd = (8.0 * (f(h) - f(-h)) - (f(2.0 * h) - f(-2.0 * h))) / (12.0 * h);
            assert!((fd - g[j]).abs() <= 1e-9 * fd.abs().max(1.0), "{j}: {fd} vs {}", g[j]);
            continuous_gap = continuous_gap.max((fd - gc[j]).abs() / fd.abs().max(1.0));
        }
        assert!(continuous_gap > 1e-6, "coarse continuous adjoint unexpectedly exact");
    }
}
