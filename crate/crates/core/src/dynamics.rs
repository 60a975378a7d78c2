//! Control systems on the box `(−l, l)^d` and Crank–Nicolson integration of
//! the closed loop `y' = f(y) − (1/β) B Bᵀ ∇v(y)`.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{EvalScratch, PolynomialModel};

/// Uncontrolled drift `f`, its Jacobian and the running cost `ℓ`.
pub trait Dynamics: Send + Sync {
    fn dim(&self) -> usize;
    fn drift(&self, y: &[f64], out: &mut [f64]);
    /// Writes `Df(y)` into a `d×d` matrix.
    fn jacobian(&self, y: &[f64], out: &mut DMatrix<f64>);
    fn running_cost(&self, y: &[f64]) -> f64;
    fn running_cost_gradient(&self, y: &[f64], out: &mut [f64]);
}

/// `f(y) = A y`, `ℓ(y) = ½ yᵀ Q y`.
#[derive(Clone, Debug)]
pub struct LinearQuadratic {
    pub a: DMatrix<f64>,
    pub q: DMatrix<f64>,
}

impl LinearQuadratic {
    pub fn new(a: DMatrix<f64>, q: DMatrix<f64>) -> Result<Self> {
        let d = a.nrows();
        if a.ncols() != d || q.shape() != (d, d) {
            return Err(Error::DimensionMismatch(format!(
                "A is {:?}, Q is {:?}",
                a.shape(),
                q.shape()
            )));
        }
        Ok(LinearQuadratic { a, q })
    }
}

fn mat_vec(m: &DMatrix<f64>, y: &[f64], out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate() {
        *o = (0..m.ncols()).map(|j| m[(i, j)] * y[j]).sum();
    }
}

impl Dynamics for LinearQuadratic {
    fn dim(&self) -> usize {
        self.a.nrows()
    }

    fn drift(&self, y: &[f64], out: &mut [f64]) {
        mat_vec(&self.a, y, out);
    }

    fn jacobian(&self, _y: &[f64], out: &mut DMatrix<f64>) {
        out.copy_from(&self.a);
    }

    fn running_cost(&self, y: &[f64]) -> f64 {
        let mut qy = vec![0.0; y.len()];
        mat_vec(&self.q, y, &mut qy);
        0.5 * qy.iter().zip(y).map(|(a, b)| a * b).sum::<f64>()
    }

    fn running_cost_gradient(&self, y: &[f64], out: &mut [f64]) {
        let qs = 0.5 * (&self.q + self.q.transpose());
        mat_vec(&qs, y, out);
    }
}

type VecFn = Box<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
type MatFn = Box<dyn Fn(&[f64], &mut DMatrix<f64>) + Send + Sync>;
type ScalarFn = Box<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Dynamics assembled from closures.
pub struct FnDynamics {
    dim: usize,
    drift: VecFn,
    jacobian: MatFn,
    cost: ScalarFn,
    cost_gradient: VecFn,
}

impl FnDynamics {
    pub fn new(
        dim: usize,
        drift: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
        jacobian: impl Fn(&[f64], &mut DMatrix<f64>) + Send + Sync + 'static,
        cost: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        cost_gradient: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        FnDynamics {
            dim,
            drift: Box::new(drift),
            jacobian: Box::new(jacobian),
            cost: Box::new(cost),
            cost_gradient: Box::new(cost_gradient),
        }
    }
}

impl Dynamics for FnDynamics {
    fn dim(&self) -> usize {
        self.dim
    }
    fn drift(&self, y: &[f64], out: &mut [f64]) {
        (self.drift)(y, out)
    }
    fn jacobian(&self, y: &[f64], out: &mut DMatrix<f64>) {
        (self.jacobian)(y, out)
    }
    fn running_cost(&self, y: &[f64]) -> f64 {
        (self.cost)(y)
    }
    fn running_cost_gradient(&self, y: &[f64], out: &mut [f64]) {
        (self.cost_gradient)(y, out)
    }
}

/// Dynamics plus control matrix `B`, control weight `β` and box half-width `l`.
#[derive(Clone)]
pub struct ControlSystem {
    dynamics: Arc<dyn Dynamics>,
    b: DMatrix<f64>,
    bbt: DMatrix<f64>,
    beta: f64,
    box_half_width: f64,
    escape_bound: f64,
}

impl fmt::Debug for ControlSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ControlSystem")
            .field("dim", &self.dim())
            .field("control_dim", &self.control_dim())
            .field("beta", &self.beta)
            .field("box_half_width", &self.box_half_width)
            .field("escape_bound", &self.escape_bound)
            .finish()
    }
}

impl ControlSystem {
    /// Checks `β > 0`, `l > 0`, `f(0) = 0` and `ℓ(0) = 0`.
    pub fn new(
        dynamics: Arc<dyn Dynamics>,
        b: DMatrix<f64>,
        beta: f64,
        box_half_width: f64,
    ) -> Result<ControlSystem> {
        let d = dynamics.dim();
        if b.nrows() != d {
            return Err(Error::DimensionMismatch(format!(
                "B has {} rows, state dimension is {d}",
                b.nrows()
            )));
        }
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::InvalidArgument(format!("beta must be positive, got {beta}")));
        }
        if !(box_half_width > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "box half-width must be positive, got {box_half_width}"
            )));
        }
        let zero = vec![0.0; d];
        let mut f0 = vec![0.0; d];
        dynamics.drift(&zero, &mut f0);
        if f0.iter().any(|&v| v != 0.0) {
            return Err(Error::InvalidArgument("f(0) must vanish".into()));
        }
        if dynamics.running_cost(&zero) != 0.0 {
            return Err(Error::InvalidArgument("running cost must vanish at 0".into()));
        }
        let bbt = &b * b.transpose();
        Ok(ControlSystem {
            dynamics,
            b,
            bbt,
            beta,
            box_half_width,
            escape_bound: box_half_width,
        })
    }

    /// Copy whose closed-loop trajectories count as escaped only beyond
    /// `bound` (at least `l`) instead of `l`.
    pub fn with_escape_bound(mut self, bound: f64) -> Result<ControlSystem> {
        if !(bound >= self.box_half_width) {
            return Err(Error::InvalidArgument(format!(
                "escape bound {bound} is below the box half-width {}",
                self.box_half_width
            )));
        }
        self.escape_bound = bound;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dynamics.dim()
    }

    pub fn control_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn dynamics(&self) -> &dyn Dynamics {
        self.dynamics.as_ref()
    }

    pub fn control_matrix(&self) -> &DMatrix<f64> {
        &self.b
    }

    /// `B Bᵀ`.
    pub fn control_gram(&self) -> &DMatrix<f64> {
        &self.bbt
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn box_half_width(&self) -> f64 {
        self.box_half_width
    }

    /// Copy with a different control weight.
    pub fn with_beta(&self, beta: f64) -> Result<ControlSystem> {
        ControlSystem::new(Arc::clone(&self.dynamics), self.b.clone(), beta, self.box_half_width)?
            .with_escape_bound(self.escape_bound)
    }

    pub fn escape_bound(&self) -> f64 {
        self.escape_bound
    }

    /// `|y|_∞ ≤ l`.
    pub fn in_box(&self, y: &[f64]) -> bool {
        y.iter().all(|v| v.is_finite() && v.abs() <= self.box_half_width)
    }

    fn within_escape_bound(&self, y: &[f64]) -> bool {
        y.iter().all(|v| v.is_finite() && v.abs() <= self.escape_bound)
    }

    /// Feedback control `u = −(1/β) Bᵀ ∇v(y)` from a value gradient.
    pub fn feedback_from_gradient(&self, grad: &[f64], out: &mut [f64]) {
        let inv = 1.0 / self.beta;
        for (c, o) in out.iter_mut().enumerate() {
            *o = -inv * (0..grad.len()).map(|i| self.b[(i, c)] * grad[i]).sum::<f64>();
        }
    }
}

/// Uniform grid `t_k = k·T/K`, `k = 0..=K`.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TimeGrid {
    pub horizon: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<TimeGrid> {
        if !(horizon > 0.0 && horizon.is_finite()) || steps == 0 {
            return Err(Error::InvalidArgument(format!(
                "invalid time grid: T={horizon}, steps={steps}"
            )));
        }
        Ok(TimeGrid { horizon, steps })
    }

    /// Grid with step `h`; `h` must divide `T` up to rounding.
    pub fn with_step(horizon: f64, h: f64) -> Result<TimeGrid> {
        let ratio = horizon / h;
        let steps = ratio.round();
        if !(steps >= 1.0) || (ratio - steps).abs() > 1e-9 * ratio {
            return Err(Error::InvalidArgument(format!("step {h} does not divide horizon {horizon}")));
        }
        TimeGrid::new(horizon, steps as usize)
    }

    pub fn step(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        self.horizon * k as f64 / self.steps as f64
    }

    /// Trapezoid weight of node `k`.
    pub fn quadrature_weight(&self, k: usize) -> f64 {
        if k == 0 || k == self.steps {
            0.5 * self.step()
        } else {
            self.step()
        }
    }
}

/// States (and feedback controls) sampled on a [`TimeGrid`].
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub grid: TimeGrid,
    dim: usize,
    control_dim: usize,
    states: Vec<f64>,
    controls: Vec<f64>,
    /// First grid index whose state left the box (or could not be computed).
    pub escaped: Option<usize>,
}

impl Trajectory {
    pub fn new(grid: TimeGrid, dim: usize, control_dim: usize) -> Self {
        Trajectory {
            grid,
            dim,
            control_dim,
            states: Vec::with_capacity((grid.steps + 1) * dim),
            controls: Vec::new(),
            escaped: None,
        }
    }

    pub fn from_states(grid: TimeGrid, dim: usize, states: Vec<f64>) -> Result<Self> {
        if states.len() != (grid.steps + 1) * dim {
            return Err(Error::DimensionMismatch(format!(
                "{} state values for {} nodes of dimension {dim}",
                states.len(),
                grid.steps + 1
            )));
        }
        Ok(Trajectory {
            grid,
            dim,
            control_dim: 0,
            states,
            controls: Vec::new(),
            escaped: None,
        })
    }

    /// Trajectory from state and control samples (`control_dim = 0` for none).
    pub fn from_parts(
        grid: TimeGrid,
        dim: usize,
        control_dim: usize,
        states: Vec<f64>,
        controls: Vec<f64>,
    ) -> Result<Self> {
        let nodes = grid.steps + 1;
        if states.len() != nodes * dim || (control_dim > 0 && controls.len() != nodes * control_dim) {
            return Err(Error::DimensionMismatch(format!(
                "{} state and {} control values for {nodes} nodes",
                states.len(),
                controls.len()
            )));
        }
        Ok(Trajectory {
            grid,
            dim,
            control_dim,
            states,
            controls,
            escaped: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn control_dim(&self) -> usize {
        self.control_dim
    }

    /// Number of stored nodes (fewer than `steps + 1` after an escape).
    pub fn len(&self) -> usize {
        self.states.len() / self.dim.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn is_escaped(&self) -> bool {
        self.escaped.is_some()
    }

    pub fn state(&self, k: usize) -> &[f64] {
        &self.states[k * self.dim..(k + 1) * self.dim]
    }

    pub fn states(&self) -> &[f64] {
        &self.states
    }

    pub fn has_controls(&self) -> bool {
        self.control_dim > 0 && !self.controls.is_empty()
    }

    pub fn control(&self, k: usize) -> &[f64] {
        &self.controls[k * self.control_dim..(k + 1) * self.control_dim]
    }

    pub fn controls(&self) -> &[f64] {
        &self.controls
    }

    pub fn final_state(&self) -> &[f64] {
        self.state(self.len() - 1)
    }

    pub(crate) fn push_state(&mut self, y: &[f64]) {
        self.states.extend_from_slice(y);
    }

    pub(crate) fn push_control(&mut self, u: &[f64]) {
        self.controls.extend_from_slice(u);
    }


    /// CSV with header `t,y1..yd[,u1..um]`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.dim).map(|i| format!("y{i}")));
        if self.has_controls() {
            header.extend((1..=self.control_dim).map(|i| format!("u{i}")));
        }
        writeln!(w, "{}", header.join(","))?;
        for k in 0..self.len() {
            let mut row = vec![format!("{}", self.grid.time(k))];
            row.extend(self.state(k).iter().map(|v| format!("{v:e}")));
            if self.has_controls() && k * self.control_dim < self.controls.len() {
                row.extend(self.control(k).iter().map(|v| format!("{v:e}")));
            }
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Settings of the implicit Crank–Nicolson step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NewtonSettings {
    pub max_iterations: usize,
    /// Acceptance threshold on `|residual|_∞ / max(1, |z|_∞)`.
    pub residual_tolerance: f64,
    pub fixed_point_sweeps: usize,
}

impl Default for NewtonSettings {
    fn default() -> Self {
        NewtonSettings {
            max_iterations: 25,
            residual_tolerance: 1e-10,
            fixed_point_sweeps: 5,
        }
    }
}

pub(crate) fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| if x.abs() > m || x.is_nan() { x.abs() } else { m })
}

/// Closed-loop right-hand side `F` and Jacobian `DF` with reusable buffers.
pub struct ClosedLoop<'a> {
    sys: &'a ControlSystem,
    model: &'a PolynomialModel,
    scratch: EvalScratch,
    grad: Vec<f64>,
    hess: DMatrix<f64>,
    df: DMatrix<f64>,
    bt_grad: Vec<f64>,
}

impl<'a> ClosedLoop<'a> {
    pub fn new(sys: &'a ControlSystem, model: &'a PolynomialModel) -> Self {
        let d = sys.dim();
        ClosedLoop {
            sys,
            model,
            scratch: EvalScratch::default(),
            grad: vec![0.0; d],
            hess: DMatrix::zeros(d, d),
            df: DMatrix::zeros(d, d),
            bt_grad: vec![0.0; d],
        }
    }

    /// `∇v` from the last evaluation.
    pub fn value_gradient(&self) -> &[f64] {
        &self.grad
    }

    /// `∇²v` from the last evaluation with Jacobian.
    pub fn value_hessian(&self) -> &DMatrix<f64> {
        &self.hess
    }

    fn control_term(&mut self, out: &mut [f64]) {
        // out -= (1/β) B Bᵀ ∇v
        let inv = 1.0 / self.sys.beta;
        let bbt = &self.sys.bbt;
        let d = self.grad.len();
        for i in 0..d {
            self.bt_grad[i] = (0..d).map(|j| bbt[(i, j)] * self.grad[j]).sum();
        }
        for i in 0..d {
            out[i] -= inv * self.bt_grad[i];
        }
    }

    /// `F(y) = f(y) − (1/β) B Bᵀ ∇v(y)`.
    pub fn rhs(&mut self, y: &[f64], out: &mut [f64]) {
        self.sys.dynamics.drift(y, out);
        self.model.eval_into(y, &mut self.scratch, &mut self.grad, None);
        self.control_term(out);
    }

    /// `F(y)` and `DF(y) = Df(y) − (1/β) B Bᵀ ∇²v(y)`.
    pub fn rhs_and_jacobian(&mut self, y: &[f64], out: &mut [f64], jac: &mut DMatrix<f64>) {
        self.sys.dynamics.drift(y, out);
        self.model
            .eval_into(y, &mut self.scratch, &mut self.grad, Some(self.hess.as_mut_slice()));
        self.control_term(out);
        self.sys.dynamics.jacobian(y, &mut self.df);
        jac.copy_from(&self.df);
        if !self.model.support().is_empty() {
            let inv = 1.0 / self.sys.beta;
            jac.gemm(-inv, &self.sys.bbt, &self.hess, 1.0);
        }
    }
}

/// Right-hand side of an autonomous implicit step.
pub(crate) trait StepRhs {
    fn rhs(&mut self, y: &[f64], out: &mut [f64]);
    fn rhs_and_jacobian(&mut self, y: &[f64], out: &mut [f64], jac: &mut DMatrix<f64>);
}

impl StepRhs for ClosedLoop<'_> {
    fn rhs(&mut self, y: &[f64], out: &mut [f64]) {
        ClosedLoop::rhs(self, y, out)
    }
    fn rhs_and_jacobian(&mut self, y: &[f64], out: &mut [f64], jac: &mut DMatrix<f64>) {
        ClosedLoop::rhs_and_jacobian(self, y, out, jac)
    }
}

/// F(y) for a closed loop.
pub fn closed_loop_rhs(sys: &ControlSystem, model: &PolynomialModel, y: &[f64]) -> DVector<f64> {
    let mut out = DVector::zeros(sys.dim());
    ClosedLoop::new(sys, model).rhs(y, out.as_mut_slice());
    out
}

/// Solves one implicit step `z = y + (h/2)(F(y) + F(z))`; `None` on failure.
pub(crate) fn crank_nicolson_step<R: StepRhs>(
    cl: &mut R,
    y: &[f64],
    fy: &[f64],
    h: f64,
    settings: &NewtonSettings,
) -> Option<Vec<f64>> {
    let d = y.len();
    let half = 0.5 * h;
    let mut z = y.to_vec();
    let mut fz = vec![0.0; d];
    let mut jac = DMatrix::zeros(d, d);
    let mut residual = vec![0.0; d];
    let mut trial = vec![0.0; d];
    let mut f_trial = vec![0.0; d];

    let residual_into = |z: &[f64], fz: &[f64], out: &mut [f64]| {
        for i in 0..d {
            out[i] = z[i] - y[i] - half * (fy[i] + fz[i]);
        }
    };

    cl.rhs_and_jacobian(&z, &mut fz, &mut jac);
    residual_into(&z, &fz, &mut residual);
    let mut res_norm = sup_norm(&residual);
    let mut converged = false;
    for it in 0..settings.max_iterations {
        if it > 0 {
            cl.rhs_and_jacobian(&z, &mut fz, &mut jac);
        }
        let scale = 1.0 + sup_norm(&z);
        if res_norm <= 1e-15 * scale {
            converged = true;
            break;
        }
        // (I − (h/2) DF) δ = −R
        let mut m = &jac * (-half);
        for i in 0..d {
            m[(i, i)] += 1.0;
        }
        let rhs = DVector::from_iterator(d, residual.iter().map(|r| -r));
        let delta = match m.lu().solve(&rhs) {
            Some(delta) if delta.iter().all(|v| v.is_finite()) => delta,
            _ => break,
        };
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..12 {
            for i in 0..d {
                trial[i] = z[i] + lambda * delta[i];
            }
            cl.rhs(&trial, &mut f_trial);
            let mut r_trial = vec![0.0; d];
            residual_into(&trial, &f_trial, &mut r_trial);
            let n = sup_norm(&r_trial);
            if n.is_finite() && (n < res_norm || n <= 1e-14 * scale) {
                z.copy_from_slice(&trial);
                residual = r_trial;
                res_norm = n;
                accepted = true;
                break;
            }
            lambda *= 0.5;
        }
        if !accepted {
            break;
        }
        if lambda * sup_norm(delta.as_slice()) <= 1e-13 * (1.0 + sup_norm(&z)) {
            converged = true;
            break;
        }
    }
    let tolerance = settings.residual_tolerance * sup_norm(&z).max(1.0);
    if !converged && !(res_norm <= tolerance) {
        for _ in 0..settings.fixed_point_sweeps {
            cl.rhs(&z, &mut fz);
            for i in 0..d {
                z[i] = y[i] + half * (fy[i] + fz[i]);
            }
        }
        cl.rhs(&z, &mut fz);
        residual_into(&z, &fz, &mut residual);
        res_norm = sup_norm(&residual);
    }
    (res_norm <= settings.residual_tolerance * sup_norm(&z).max(1.0)).then_some(z)
}

/// Integrates the closed loop with Crank–Nicolson. Integration stops at the
/// first node outside the escape bound (the box unless widened), or where the
/// implicit step fails; that index is recorded in [`Trajectory::escaped`].
pub fn integrate_closed_loop(
    sys: &ControlSystem,
    model: &PolynomialModel,
    y0: &[f64],
    grid: TimeGrid,
) -> Result<Trajectory> {
    integrate_closed_loop_with(sys, model, y0, grid, &NewtonSettings::default())
}

pub fn integrate_closed_loop_with(
    sys: &ControlSystem,
    model: &PolynomialModel,
    y0: &[f64],
    grid: TimeGrid,
    settings: &NewtonSettings,
) -> Result<Trajectory> {
    let d = sys.dim();
    if y0.len() != d || model.dim() != d {
        return Err(Error::DimensionMismatch(format!(
            "state dimension {d}, initial condition {}, model {}",
            y0.len(),
            model.dim()
        )));
    }
    if !sys.in_box(y0) {
        return Err(Error::InvalidArgument("initial condition outside the box".into()));
    }
    let m = sys.control_dim();
    let h = grid.step();
    let mut traj = Trajectory::new(grid, d, m);
    traj.control_dim = m;
    let mut cl = ClosedLoop::new(sys, model);
    let mut y = y0.to_vec();
    let mut fy = vec![0.0; d];
    let mut u = vec![0.0; m];
    cl.rhs(&y, &mut fy);
    traj.push_state(&y);
    sys.feedback_from_gradient(cl.value_gradient(), &mut u);
    traj.push_control(&u);
    for k in 0..grid.steps {
        let next = crank_nicolson_step(&mut cl, &y, &fy, h, settings);
        match next {
            Some(z) if sys.within_escape_bound(&z) => {
                y = z;
                cl.rhs(&y, &mut fy);
                traj.push_state(&y);
                sys.feedback_from_gradient(cl.value_gradient(), &mut u);
                traj.push_control(&u);
            }
            _ => {
                traj.escaped = Some(k + 1);
                break;
            }
        }
    }
    Ok(traj)
}

/// Crank–Nicolson for `y' = A y`: `(I − hA/2) y_{k+1} = (I + hA/2) y_k`.
pub fn integrate_linear(a: &DMatrix<f64>, y0: &[f64], grid: TimeGrid) -> Result<Trajectory> {
    let d = a.nrows();
    if a.ncols() != d || y0.len() != d {
        return Err(Error::DimensionMismatch(format!(
            "A is {:?}, y0 has {} entries",
            a.shape(),
            y0.len()
        )));
    }
    let half = 0.5 * grid.step();
    let id = DMatrix::<f64>::identity(d, d);
    let lhs = &id - a * half;
    let rhs = &id + a * half;
    let lu = lhs.lu();
    if !lu.is_invertible() {
        return Err(Error::SingularStep { step: 0 });
    }
    let mut traj = Trajectory::new(grid, d, 0);
    let mut y = DVector::from_column_slice(y0);
    traj.push_state(y.as_slice());
    for k in 0..grid.steps {
        y = lu
            .solve(&(&rhs * &y))
            .ok_or(Error::SingularStep { step: k })?;
        traj.push_state(y.as_slice());
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{BasisSet, MultiIndex};
    use crate::model::ModelLayout;

    fn scalar_system(a: f64, box_half_width: f64) -> ControlSystem {
        let lq = LinearQuadratic::new(
            DMatrix::from_element(1, 1, a),
            DMatrix::from_element(1, 1, 1.0),
        )
        .unwrap();
        ControlSystem::new(Arc::new(lq), DMatrix::from_element(1, 1, 1.0), 1.0, box_half_width).unwrap()
    }

    fn quadratic_layout(dim: usize, l: f64) -> Arc<ModelLayout> {
        let basis = crate::basis::strip_low_order(&crate::basis::total_degree_indices(dim, 2).unwrap());
        ModelLayout::new(basis, l).unwrap()
    }

    #[test]
    fn scalar_decay_matches_cn_recurrence() {
        let sys = scalar_system(-1.0, 10.0);
        let model = quadratic_layout(1, 10.0).zero_model();
        let grid = TimeGrid::with_step(1.0, 0.1).unwrap();
        let traj = integrate_closed_loop(&sys, &model, &[1.0], grid).unwrap();
        let factor: f64 = (1.0 - 0.05) / (1.0 + 0.05);
        let want = factor.powi(10);
        assert!((traj.final_state()[0] - want).abs() < 1e-13);
        assert!((want - 0.36780).abs() < 5e-4);
        let lin = integrate_linear(&DMatrix::from_element(1, 1, -1.0), &[1.0], grid).unwrap();
        assert!((lin.final_state()[0] - want).abs() < 1e-14);
    }

    #[test]
    fn second_order_convergence() {
        let a = DMatrix::from_element(1, 1, -1.0);
        let err = |steps| {
            let t = integrate_linear(&a, &[1.0], TimeGrid::new(1.0, steps).unwrap()).unwrap();
            (t.final_state()[0] - (-1.0f64).exp()).abs()
        };
        let ratio = err(20) / err(40);
        assert!((ratio - 4.0).abs() < 0.4, "ratio {ratio}");
    }

    #[test]
    fn zero_dynamics_constant() {
        let lq = LinearQuadratic::new(DMatrix::zeros(2, 2), DMatrix::identity(2, 2)).unwrap();
        let sys = ControlSystem::new(Arc::new(lq), DMatrix::zeros(2, 1), 1.0, 5.0).unwrap();
        let model = quadratic_layout(2, 5.0).model(vec![1.0, 2.0, 3.0]).unwrap();
        let traj = integrate_closed_loop(&sys, &model, &[1.0, -2.0], TimeGrid::new(1.0, 10).unwrap()).unwrap();
        for k in 0..traj.len() {
            assert_eq!(traj.state(k), &[1.0, -2.0]);
        }
        assert_eq!(integrate_linear(&DMatrix::zeros(2, 2), &[1.0, 2.0], TimeGrid::new(1.0, 3).unwrap())
            .unwrap()
            .final_state(), &[1.0, 2.0]);
    }

    #[test]
    fn rotation_energy_drift() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let t = integrate_linear(&a, &[1.0, 0.0], TimeGrid::new(10.0, 1000).unwrap()).unwrap();
        let r: f64 = t.final_state().iter().map(|v| v * v).sum::<f64>().sqrt();
        // CN is norm-preserving for skew-symmetric A.
        assert!((r - 1.0).abs() < 1e-12);
    }

    #[test]
    fn feedback_stabilizes_and_controls_are_recorded() {
        // y' = y + u with v = θ y²/l² and l = 1, θ = 1: u = −2y, closed loop y' = −y.
        let sys = scalar_system(1.0, 1.0);
        let basis = BasisSet::custom(1, vec![MultiIndex::new(vec![2])]).unwrap();
        let model = ModelLayout::new(basis, 1.0).unwrap().model(vec![1.0]).unwrap();
        let rhs = closed_loop_rhs(&sys, &model, &[0.5]);
        assert!((rhs[0] + 0.5).abs() < 1e-15);
        let traj = integrate_closed_loop(&sys, &model, &[0.5], TimeGrid::new(1.0, 10).unwrap()).unwrap();
        assert!(!traj.is_escaped());
        assert!((traj.control(0)[0] + 1.0).abs() < 1e-15);
        let factor: f64 = (1.0 - 0.05) / (1.0 + 0.05);
        assert!((traj.final_state()[0] - 0.5 * factor.powi(10)).abs() < 1e-12);
    }

    #[test]
    fn unstable_escapes_and_escape_is_monotone() {
        let sys = scalar_system(1.0, 1.0);
        let model = quadratic_layout(1, 1.0).zero_model();
        let short = integrate_closed_loop(&sys, &model, &[0.5], TimeGrid::new(2.0, 200).unwrap()).unwrap();
        let long = integrate_closed_loop(&sys, &model, &[0.5], TimeGrid::new(4.0, 400).unwrap()).unwrap();
        assert_eq!(short.escaped, long.escaped);
        assert!(short.escaped.is_some());
        // e^t·0.5 reaches 1 at t = ln 2
        let t_escape = short.grid.time(short.escaped.unwrap());
        assert!((t_escape - 2f64.ln()).abs() < 0.02);
    }

    #[test]
    fn csv_header() {
        let sys = scalar_system(-1.0, 2.0);
        let model = quadratic_layout(1, 2.0).zero_model();
        let traj = integrate_closed_loop(&sys, &model, &[1.0], TimeGrid::new(1.0, 2).unwrap()).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,y1,u1\n"));
        assert_eq!(text.lines().count(), 4);
    }

    #[test]
    fn construction_checks() {
        let lq = LinearQuadratic::new(DMatrix::zeros(1, 1), DMatrix::identity(1, 1)).unwrap();
        assert!(ControlSystem::new(Arc::new(lq.clone()), DMatrix::zeros(1, 1), 0.0, 1.0).is_err());
        assert!(ControlSystem::new(Arc::new(lq), DMatrix::zeros(2, 1), 1.0, 1.0).is_err());
        let shifted = FnDynamics::new(
            1,
            |_y, out| out[0] = 1.0,
            |_y, j| j.fill(0.0),
            |_y| 0.0,
            |_y, g| g[0] = 0.0,
        );
        assert!(ControlSystem::new(Arc::new(shifted), DMatrix::zeros(1, 1), 1.0, 1.0).is_err());
    }
}
