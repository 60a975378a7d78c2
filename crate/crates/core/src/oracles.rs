//! Reference solutions: the algebraic Riccati equation for linear-quadratic
//! problems and a trajectory-wise open-loop solver for nonlinear ones.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::{crank_nicolson_step, integrate_linear, sup_norm, ControlSystem, NewtonSettings, StepRhs, TimeGrid, Trajectory};
use crate::error::{Error, Result};

/// Solves `M X + X Mᵀ = C` for symmetric `X` by a dense solve over the
/// `d(d+1)/2` upper-triangular unknowns. `C` must be symmetric.
pub fn solve_lyapunov(m: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = m.nrows();
    if m.ncols() != d || c.shape() != (d, d) {
        return Err(Error::DimensionMismatch(format!(
            "Lyapunov operands {:?} and {:?}",
            m.shape(),
            c.shape()
        )));
    }
    let idx = |i: usize, j: usize| {
        let (a, b) = if i <= j { (i, j) } else { (j, i) };
        a * d - a * (a + 1) / 2 + b
    };
    let n = d * (d + 1) / 2;
    let mut sys = DMatrix::<f64>::zeros(n, n);
    let mut rhs = DVector::<f64>::zeros(n);
    for i in 0..d {
        for j in i..d {
            let row = idx(i, j);
            rhs[row] = c[(i, j)];
            for k in 0..d {
                sys[(row, idx(k, j))] += m[(i, k)];
                sys[(row, idx(i, k))] += m[(j, k)];
            }
        }
    }
    let sol = sys
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Riccati("singular Lyapunov operator".into()))?;
    Ok(DMatrix::from_fn(d, d, |i, j| sol[idx(i, j)]))
}

fn max_real_eigenvalue(a: &DMatrix<f64>) -> f64 {
    a.complex_eigenvalues()
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

pub fn is_hurwitz(a: &DMatrix<f64>) -> bool {
    max_real_eigenvalue(a) < 0.0
}

#[derive(Clone, Debug, PartialEq)]
pub struct RiccatiSolution {
    pub p: DMatrix<f64>,
    /// `K = (1/β) Bᵀ P`, feedback `u = −K y`.
    pub gain: DMatrix<f64>,
    /// Frobenius norm of `AᵀP + PA − (1/β)PBBᵀP + Q`.
    pub residual: f64,
    pub iterations: usize,
}

impl RiccatiSolution {
    /// Infinite-horizon value `½ yᵀ P y` for the cost `∫ ½yᵀQy + (β/2)|u|²`.
    pub fn value(&self, y: &[f64]) -> f64 {
        let y = DVector::from_column_slice(y);
        0.5 * y.dot(&(&self.p * &y))
    }
}

/// Continuous-time ARE `AᵀP + PA − (1/β)PBBᵀP + Q = 0` by Newton–Kleinman.
/// The initial gain comes from a Lyapunov-based stabilization of the
/// shifted matrix `A + σI`.
pub fn solve_are(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, beta: f64) -> Result<RiccatiSolution> {
    let d = a.nrows();
    if a.ncols() != d || b.nrows() != d || q.shape() != (d, d) {
        return Err(Error::DimensionMismatch(format!(
            "A {:?}, B {:?}, Q {:?}",
            a.shape(),
            b.shape(),
            q.shape()
        )));
    }
    if !(beta > 0.0) {
        return Err(Error::InvalidArgument(format!("beta must be positive, got {beta}")));
    }
    let bt = b.transpose();
    let mut gain = if is_hurwitz(a) {
        DMatrix::zeros(b.ncols(), d)
    } else {
        let spread = a
            .complex_eigenvalues()
            .iter()
            .map(|z| z.re.abs())
            .fold(0.0, f64::max);
        let sigma = 1.0 + spread;
        let shifted = a + DMatrix::identity(d, d) * sigma;
        let x = solve_lyapunov(&shifted, &(b * &bt * 2.0))?;
        let x_inv = x
            .try_inverse()
            .ok_or_else(|| Error::Riccati("no stabilizing initial gain (pair not controllable)".into()))?;
        &bt * x_inv
    };
    if !is_hurwitz(&(a - b * &gain)) {
        return Err(Error::Riccati("initial gain is not stabilizing".into()));
    }
    let residual_of = |p: &DMatrix<f64>| {
        (a.transpose() * p + p * a - p * b * &bt * p / beta + q).norm()
    };
    let mut p = DMatrix::zeros(d, d);
    let mut residual = f64::INFINITY;
    let mut best = f64::INFINITY;
    let mut stalled = 0;
    for it in 1..=100 {
        let closed = a - b * &gain;
        let rhs = -(q + gain.transpose() * &gain * beta);
        p = solve_lyapunov(&closed.transpose(), &rhs)?;
        p = (&p + p.transpose()) * 0.5;
        gain = &bt * &p / beta;
        residual = residual_of(&p);
        if residual <= 1e-10 {
            return finish(a, b, p, gain, residual, it);
        }
        if residual < 0.5 * best {
            best = residual;
            stalled = 0;
        } else {
            stalled += 1;
            if stalled >= 5 {
                break;
            }
        }
    }
    if residual <= 1e-8 * (1.0 + p.norm()) {
        return finish(a, b, p, gain, residual, 100);
    }
    Err(Error::Riccati(format!("Newton–Kleinman stagnated at residual {residual:e}")))
}

fn finish(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    p: DMatrix<f64>,
    gain: DMatrix<f64>,
    residual: f64,
    iterations: usize,
) -> Result<RiccatiSolution> {
    if !is_hurwitz(&(a - b * &gain)) {
        return Err(Error::Riccati("closed loop is not Hurwitz".into()));
    }
    Ok(RiccatiSolution {
        p,
        gain,
        residual,
        iterations,
    })
}

/// Crank–Nicolson rollout of `y' = (A − BK) y` with the recorded controls
/// `u = −K y`.
pub fn riccati_rollout(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    solution: &RiccatiSolution,
    y0: &[f64],
    grid: TimeGrid,
) -> Result<Trajectory> {
    let closed = a - b * &solution.gain;
    let states = integrate_linear(&closed, y0, grid)?;
    let m = b.ncols();
    let mut controls = Vec::with_capacity(states.len() * m);
    for k in 0..states.len() {
        let u = -(&solution.gain * DVector::from_column_slice(states.state(k)));
        controls.extend(u.iter());
    }
    Trajectory::from_parts(grid, a.nrows(), m, states.states().to_vec(), controls)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OpenLoopSettings {
    /// Tolerance on the sup-norm of the `L²` gradient `βu + Bᵀp`.
    pub tol: f64,
    pub max_iterations: usize,
    /// The state may not leave `safety_factor · l` (or the system's escape
    /// bound, if larger).
    pub safety_factor: f64,
    pub armijo: f64,
    pub max_backtracks: usize,
}

impl Default for OpenLoopSettings {
    fn default() -> Self {
        OpenLoopSettings {
            tol: 1e-6,
            max_iterations: 5000,
            safety_factor: 10.0,
            armijo: 1e-4,
            max_backtracks: 40,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OpenLoopSolution {
    pub trajectory: Trajectory,
    /// `J(u*, y₀) = ∫ ℓ(y) + (β/2)|u|²` by the trapezoid rule.
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Sup-norm of the final `L²` gradient.
    pub gradient_norm: f64,
    /// Started from a supplied control instead of `u = 0`.
    pub warm_started: bool,
}

#[derive(Serialize)]
struct OpenLoopSummary {
    #[serde(rename = "J")]
    objective: f64,
    iterations: usize,
    converged: bool,
    gradient_norm: f64,
    warm_started: bool,
}

impl OpenLoopSolution {
    /// CSV `t,u1..um,y1..yd`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let t = &self.trajectory;
        let mut header = vec!["t".to_string()];
        header.extend((1..=t.control_dim()).map(|i| format!("u{i}")));
        header.extend((1..=t.dim()).map(|i| format!("y{i}")));
        writeln!(w, "{}", header.join(","))?;
        for k in 0..t.len() {
            let mut row = vec![format!("{}", t.grid.time(k))];
            row.extend(t.control(k).iter().map(|v| format!("{v:e}")));
            row.extend(t.state(k).iter().map(|v| format!("{v:e}")));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    /// JSON `{J, iterations, converged, ...}`.
    pub fn summary_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&OpenLoopSummary {
            objective: self.objective,
            iterations: self.iterations,
            converged: self.converged,
            gradient_norm: self.gradient_norm,
            warm_started: self.warm_started,
        })?)
    }
}

struct OpenLoopRhs<'a> {
    sys: &'a ControlSystem,
    forcing: Vec<f64>,
}

impl StepRhs for OpenLoopRhs<'_> {
    fn rhs(&mut self, y: &[f64], out: &mut [f64]) {
        self.sys.dynamics().drift(y, out);
        out.iter_mut().zip(&self.forcing).for_each(|(o, f)| *o += f);
    }
    fn rhs_and_jacobian(&mut self, y: &[f64], out: &mut [f64], jac: &mut DMatrix<f64>) {
        self.rhs(y, out);
        self.sys.dynamics().jacobian(y, jac);
    }
}

/// Discrete open-loop problem: controls at the grid nodes, CN states and
/// the trapezoid cost.
struct OpenLoopProblem<'a> {
    sys: &'a ControlSystem,
    y0: &'a [f64],
    grid: TimeGrid,
    bound: f64,
}

impl OpenLoopProblem<'_> {
    fn forcing(&self, u: &[f64], k: usize) -> Vec<f64> {
        let m = self.sys.control_dim();
        let b = self.sys.control_matrix();
        (0..self.sys.dim())
            .map(|i| (0..m).map(|c| b[(i, c)] * u[k * m + c]).sum())
            .collect()
    }

    /// States for the controls `u`, or `None` if the solve fails or leaves
    /// the safety box.
    fn states(&self, u: &[f64]) -> Option<Vec<f64>> {
        let d = self.sys.dim();
        let h = self.grid.step();
        let mut states = Vec::with_capacity((self.grid.steps + 1) * d);
        states.extend_from_slice(self.y0);
        let mut y = self.y0.to_vec();
        let mut fy = vec![0.0; d];
        let mut rhs = OpenLoopRhs {
            sys: self.sys,
            forcing: self.forcing(u, 0),
        };
        rhs.rhs(&y, &mut fy);
        let settings = NewtonSettings::default();
        for k in 0..self.grid.steps {
            rhs.forcing = self.forcing(u, k + 1);
            let z = crank_nicolson_step(&mut rhs, &y, &fy, h, &settings)?;
            if !(sup_norm(&z) <= self.bound) {
                return None;
            }
            y = z;
            rhs.rhs(&y, &mut fy);
            states.extend_from_slice(&y);
        }
        Some(states)
    }

    fn cost(&self, u: &[f64], states: &[f64]) -> f64 {
        let d = self.sys.dim();
        let m = self.sys.control_dim();
        let beta = self.sys.beta();
        (0..=self.grid.steps)
            .map(|k| {
                let uk = &u[k * m..(k + 1) * m];
                self.grid.quadrature_weight(k)
                    * (self.sys.dynamics().running_cost(&states[k * d..(k + 1) * d])
                        + 0.5 * beta * uk.iter().map(|v| v * v).sum::<f64>())
            })
            .sum()
    }

    fn evaluate(&self, u: &[f64]) -> Option<(Vec<f64>, f64)> {
        let states = self.states(u)?;
        let j = self.cost(u, &states);
        j.is_finite().then_some((states, j))
    }

    /// Exact gradient of the discrete cost, divided by the quadrature weights
    /// so that it approximates the `L²` gradient `βu + Bᵀp`.
    fn gradient(&self, u: &[f64], states: &[f64]) -> Option<Vec<f64>> {
        let d = self.sys.dim();
        let m = self.sys.control_dim();
        let n = self.grid.steps;
        let half = 0.5 * self.grid.step();
        let b = self.sys.control_matrix();
        let id = DMatrix::<f64>::identity(d, d);
        let mut df = DMatrix::zeros(d, d);
        let mut dl = vec![0.0; d];
        // λ_k for k = 1..=n; λ_0 = λ_{n+1} = 0.
        let mut lambda = vec![DVector::<f64>::zeros(d); n + 2];
        for k in (1..=n).rev() {
            let y = &states[k * d..(k + 1) * d];
            self.sys.dynamics().jacobian(y, &mut df);
            self.sys.dynamics().running_cost_gradient(y, &mut dl);
            let w = self.grid.quadrature_weight(k);
            let dft = df.transpose();
            let lhs = &id - &dft * half;
            let mut rhs = -DVector::from_column_slice(&dl) * w;
            if k < n {
                rhs += (&id + &dft * half) * &lambda[k + 1];
            }
            lambda[k] = lhs.lu().solve(&rhs)?;
        }
        let beta = self.sys.beta();
        let mut g = vec![0.0; (n + 1) * m];
        for k in 0..=n {
            let w = self.grid.quadrature_weight(k);
            let sum = &lambda[k] + &lambda[k + 1];
            for c in 0..m {
                let bt_l: f64 = (0..d).map(|i| b[(i, c)] * sum[i]).sum();
                let grad = w * beta * u[k * m + c] - half * bt_l;
                g[k * m + c] = grad / w;
            }
        }
        g.iter().all(|v| v.is_finite()).then_some(g)
    }

    fn weighted_dot(&self, a: &[f64], b: &[f64]) -> f64 {
        let m = self.sys.control_dim();
        (0..=self.grid.steps)
            .map(|k| {
                self.grid.quadrature_weight(k)
                    * (0..m).map(|c| a[k * m + c] * b[k * m + c]).sum::<f64>()
            })
            .sum()
    }
}

/// Solves the open-loop problem from `y0` by gradient descent with
/// Barzilai–Borwein trial steps and Armijo backtracking.
///
/// Starts from `u = 0`; if that leaves the safety box and `fallback` is
/// given (node-wise controls, row-major `(K+1)×m`), starts from `fallback`.
pub fn open_loop_solve(
    sys: &ControlSystem,
    y0: &[f64],
    grid: TimeGrid,
    settings: &OpenLoopSettings,
    fallback: Option<&[f64]>,
) -> Result<OpenLoopSolution> {
    let d = sys.dim();
    let m = sys.control_dim();
    if y0.len() != d {
        return Err(Error::DimensionMismatch(format!("y0 has {} entries, expected {d}", y0.len())));
    }
    if !sys.in_box(y0) {
        return Err(Error::InvalidArgument("initial condition outside the box".into()));
    }
    let nodes = grid.steps + 1;
    if let Some(f) = fallback {
        if f.len() != nodes * m {
            return Err(Error::DimensionMismatch(format!(
                "warm start has {} values, expected {}",
                f.len(),
                nodes * m
            )));
        }
    }
    let problem = OpenLoopProblem {
        sys,
        y0,
        grid,
        bound: (settings.safety_factor * sys.box_half_width()).max(sys.escape_bound()),
    };
    let mut u = vec![0.0; nodes * m];
    let mut warm_started = false;
    let (mut states, mut j) = match problem.evaluate(&u) {
        Some(e) => e,
        None => {
            let f = fallback.ok_or_else(|| {
                Error::OpenLoop("uncontrolled state leaves the safety box and no warm start was given".into())
            })?;
            u = f.to_vec();
            warm_started = true;
            problem
                .evaluate(&u)
                .ok_or_else(|| Error::OpenLoop("warm start leaves the safety box".into()))?
        }
    };
    let mut g = problem
        .gradient(&u, &states)
        .ok_or_else(|| Error::OpenLoop("adjoint solve failed".into()))?;
    let mut prev: Option<(Vec<f64>, Vec<f64>)> = None;
    let mut step = 1.0;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < settings.max_iterations {
        if sup_norm(&g) <= settings.tol {
            converged = true;
            break;
        }
        if let Some((u_prev, g_prev)) = &prev {
            let du: Vec<f64> = u.iter().zip(u_prev).map(|(a, b)| a - b).collect();
            let dg: Vec<f64> = g.iter().zip(g_prev).map(|(a, b)| a - b).collect();
            let sy = problem.weighted_dot(&du, &dg);
            let trial = if iterations % 2 == 1 {
                sy / problem.weighted_dot(&dg, &dg)
            } else {
                problem.weighted_dot(&du, &du) / sy
            };
            if trial.is_finite() && trial > 0.0 {
                step = trial;
            }
        }
        let g2 = problem.weighted_dot(&g, &g);
        let slack = 8.0 * f64::EPSILON * j.abs();
        let mut accepted = None;
        let mut s = step;
        for _ in 0..settings.max_backtracks {
            let cand: Vec<f64> = u.iter().zip(&g).map(|(a, b)| a - s * b).collect();
            if let Some((st, jc)) = problem.evaluate(&cand) {
                if jc <= j - settings.armijo * s * g2 + slack {
                    accepted = Some((cand, st, jc));
                    break;
                }
            }
            s *= 0.5;
        }
        let Some((cand, st, jc)) = accepted else {
            log::warn!("open-loop line search failed at iteration {iterations}");
            break;
        };
        let g_new = problem
            .gradient(&cand, &st)
            .ok_or_else(|| Error::OpenLoop("adjoint solve failed".into()))?;
        prev = Some((std::mem::replace(&mut u, cand), std::mem::replace(&mut g, g_new)));
        states = st;
        j = jc;
        step = s;
        iterations += 1;
    }
    if !converged && sup_norm(&g) <= settings.tol {
        converged = true;
    }
    if !converged {
        log::warn!(
            "open-loop solver stopped after {iterations} iterations with gradient {:e}",
            sup_norm(&g)
        );
    }
    let trajectory = Trajectory::from_parts(grid, d, m, states, u)?;
    Ok(OpenLoopSolution {
        trajectory,
        objective: j,
        iterations,
        converged,
        gradient_norm: sup_norm(&g),
        warm_started,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{FnDynamics, LinearQuadratic};
    use std::sync::Arc;

    fn m(rows: usize, cols: usize, v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(rows, cols, v)
    }

    #[test]
    fn lyapunov_small() {
        let a = m(2, 2, &[-1.0, 2.0, 0.0, -3.0]);
        let c = m(2, 2, &[1.0, 0.5, 0.5, 2.0]);
        let x = solve_lyapunov(&a, &c).unwrap();
        let res = &a * &x + &x * a.transpose() - &c;
        assert!(res.norm() < 1e-12);
        assert_eq!(x, x.transpose());
    }

    #[test]
    fn scalar_are_closed_form() {
        for a in [0.0, 1.0, -2.0, 3.5] {
            let sol = solve_are(&m(1, 1, &[a]), &m(1, 1, &[1.0]), &m(1, 1, &[1.0]), 1.0).unwrap();
            let want = a + (a * a + 1.0).sqrt();
            assert!((sol.p[(0, 0)] - want).abs() <= 1e-12 * want.max(1.0), "a={a}");
        }
        let sol = solve_are(&m(1, 1, &[0.0]), &m(1, 1, &[1.0]), &m(1, 1, &[1.0]), 1.0).unwrap();
        assert!((sol.p[(0, 0)] - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn identity_are() {
        let id = DMatrix::identity(3, 3);
        let sol = solve_are(&DMatrix::zeros(3, 3), &id, &id, 1.0).unwrap();
        assert!((&sol.p - &id).norm() < 1e-12);
    }

    #[test]
    fn unstable_pair_is_stabilized() {
        let a = m(2, 2, &[1.0, 1.0, 0.0, 2.0]);
        let b = m(2, 1, &[0.0, 1.0]);
        let sol = solve_are(&a, &b, &DMatrix::identity(2, 2), 0.5).unwrap();
        assert!(sol.residual <= 1e-10);
        assert!(is_hurwitz(&(&a - &b * &sol.gain)));
        assert!((sol.p.clone() - sol.p.transpose()).norm() <= 1e-12);
    }

    #[test]
    fn uncontrollable_unstable_pair_fails() {
        let a = m(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        let b = m(2, 1, &[0.0, 1.0]);
        assert!(solve_are(&a, &b, &DMatrix::identity(2, 2), 1.0).is_err());
    }

    fn scalar_lq() -> ControlSystem {
        let lq = LinearQuadratic::new(m(1, 1, &[0.0]), m(1, 1, &[1.0])).unwrap();
        ControlSystem::new(Arc::new(lq), m(1, 1, &[1.0]), 1.0, 2.0).unwrap()
    }

    #[test]
    fn zero_cost_gives_zero_control() {
        let dynamics = FnDynamics::new(1, |y, o| o[0] = -y[0], |_y, j| j.fill(-1.0), |_y| 0.0, |_y, g| g[0] = 0.0);
        let sys = ControlSystem::new(Arc::new(dynamics), m(1, 1, &[1.0]), 1.0, 2.0).unwrap();
        let sol = open_loop_solve(&sys, &[1.0], TimeGrid::new(1.0, 50).unwrap(), &OpenLoopSettings::default(), None)
            .unwrap();
        assert!(sol.converged);
        assert_eq!(sol.objective, 0.0);
        assert!(sol.trajectory.controls().iter().all(|&u| u == 0.0));
    }

    #[test]
    fn scalar_lqr_value() {
        // y' = u, ℓ = y²/2, β = 1: P = 1, V(y0) = y0²/2; finite-T gap is O(e^{−2T}).
        let sys = scalar_lq();
        let grid = TimeGrid::new(10.0, 2000).unwrap();
        let sol = open_loop_solve(&sys, &[1.5], grid, &OpenLoopSettings::default(), None).unwrap();
        assert!(sol.converged, "gradient {}", sol.gradient_norm);
        assert!((sol.objective - 0.5 * 1.5 * 1.5).abs() < 1e-4, "{}", sol.objective);
        // Optimal feedback u = −y along the trajectory.
        for k in (100..1500).step_by(100) {
            let (u, y) = (sol.trajectory.control(k)[0], sol.trajectory.state(k)[0]);
            assert!((u + y).abs() < 1e-3, "k={k}: u={u}, y={y}");
        }
    }

    #[test]
    fn discrete_gradient_matches_finite_differences() {
        let dynamics = FnDynamics::new(
            2,
            |y, o| {
                o[0] = y[1];
                o[1] = -y[0] + 0.3 * y[0] * y[0] * y[1];
            },
            |y, j| {
                j.copy_from_slice(&[0.0, -1.0 + 0.6 * y[0] * y[1], 1.0, 0.3 * y[0] * y[0]]);
            },
            |y| 0.5 * (y[0] * y[0] + y[1] * y[1]),
            |y, g| g.copy_from_slice(y),
        );
        let sys = ControlSystem::new(Arc::new(dynamics), m(2, 1, &[0.0, 1.0]), 0.1, 3.0).unwrap();
        let grid = TimeGrid::new(1.0, 20).unwrap();
        let y0 = [1.0, -0.5];
        let problem = OpenLoopProblem { sys: &sys, y0: &y0, grid, bound: 30.0 };
        let u: Vec<f64> = (0..21).map(|k| (k as f64 * 0.3).sin()).collect();
        let (states, _) = problem.evaluate(&u).unwrap();
        let g = problem.gradient(&u, &states).unwrap();
        for k in [0, 7, 20] {
            let h = 1e-6;
            let mut up = u.clone();
            let mut um = u.clone();
            up[k] += h;
            um[k] -= h;
            let fd = (problem.evaluate(&up).unwrap().1 - problem.evaluate(&um).unwrap().1) / (2.0 * h);
            let analytic = g[k] * grid.quadrature_weight(k);
            assert!((fd - analytic).abs() <= 1e-7 * fd.abs().max(1e-3), "k={k}: {fd} vs {analytic}");
        }
    }

    #[test]
    fn warm_start_used_when_uncontrolled_escapes() {
        // y' = y³ blows up in finite time from y0 = 1.
        let dynamics = FnDynamics::new(
            1,
            |y, o| o[0] = y[0] * y[0] * y[0],
            |y, j| j[(0, 0)] = 3.0 * y[0] * y[0],
            |y| 0.5 * y[0] * y[0],
            |y, g| g[0] = y[0],
        );
        let sys = ControlSystem::new(Arc::new(dynamics), m(1, 1, &[1.0]), 1.0, 1.0).unwrap();
        let grid = TimeGrid::new(2.0, 200).unwrap();
        assert!(open_loop_solve(&sys, &[1.0], grid, &OpenLoopSettings::default(), None).is_err());
        let fallback = vec![-1.0; 201];
        let sol = open_loop_solve(&sys, &[1.0], grid, &OpenLoopSettings::default(), Some(&fallback)).unwrap();
        assert!(sol.warm_started);
        assert!(sol.converged);
        let mut buf = Vec::new();
        sol.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("t,u1,y1\n"));
        assert!(sol.summary_json().unwrap().contains("\"J\""));
    }
}
