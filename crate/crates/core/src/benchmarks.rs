//! The four benchmark control problems and uniform initial-condition sampling.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::basis::{hyperbolic_cross_indices, reduce_basis, strip_low_order, total_degree_indices, BasisKind, BasisSet, MultiIndex};
use crate::dynamics::{ControlSystem, Dynamics, FnDynamics, LinearQuadratic};
use crate::error::{Error, Result};
use crate::dynamics::TimeGrid;
use crate::model::ModelLayout;
use crate::objective::{cost, TrainingSet};

pub const BENCHMARK_NAMES: [&str; 4] = ["lc_circuit", "vanderpol", "allen_cahn", "cucker_smale"];

/// Chebyshev extreme points with differentiation matrices and
/// Clenshaw–Curtis weights.
#[derive(Clone, Debug, PartialEq)]
pub struct ChebGrid {
    /// `x_j = cos(jπ/N)`, `j = 0..=N`.
    pub points: Vec<f64>,
    pub d1: DMatrix<f64>,
    pub d2: DMatrix<f64>,
    pub weights: Vec<f64>,
}

impl ChebGrid {
    pub fn order(&self) -> usize {
        self.points.len() - 1
    }
}

pub fn cheb_grid(n: usize) -> Result<ChebGrid> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("Chebyshev grid needs N >= 2, got {n}")));
    }
    let points: Vec<f64> = (0..=n).map(|j| (j as f64 * PI / n as f64).cos()).collect();
    let c = |i: usize| {
        let base = if i == 0 || i == n { 2.0 } else { 1.0 };
        if i % 2 == 0 {
            base
        } else {
            -base
        }
    };
    let mut d1 = DMatrix::<f64>::zeros(n + 1, n + 1);
    for i in 0..=n {
        for j in 0..=n {
            if i != j {
                d1[(i, j)] = c(i) / c(j) / (points[i] - points[j]);
            }
        }
        // Negative-sum trick: rows annihilate constants exactly.
        let off: f64 = (0..=n).filter(|&j| j != i).map(|j| d1[(i, j)]).sum();
        d1[(i, i)] = -off;
    }
    let d2 = &d1 * &d1;

    let mut weights = vec![0.0; n + 1];
    let nf = n as f64;
    let mut v = vec![1.0; n.saturating_sub(1)];
    let theta = |j: usize| j as f64 * PI / nf;
    if n % 2 == 0 {
        weights[0] = 1.0 / (nf * nf - 1.0);
        weights[n] = weights[0];
        for k in 1..n / 2 {
            let kf = k as f64;
            for (idx, vi) in v.iter_mut().enumerate() {
                *vi -= 2.0 * (2.0 * kf * theta(idx + 1)).cos() / (4.0 * kf * kf - 1.0);
            }
        }
        for (idx, vi) in v.iter_mut().enumerate() {
            *vi -= (nf * theta(idx + 1)).cos() / (nf * nf - 1.0);
        }
    } else {
        weights[0] = 1.0 / (nf * nf);
        weights[n] = weights[0];
        for k in 1..=(n - 1) / 2 {
            let kf = k as f64;
            for (idx, vi) in v.iter_mut().enumerate() {
                *vi -= 2.0 * (2.0 * kf * theta(idx + 1)).cos() / (4.0 * kf * kf - 1.0);
            }
        }
    }
    for (idx, vi) in v.iter().enumerate() {
        weights[idx + 1] = 2.0 * vi / nf;
    }
    Ok(ChebGrid {
        points,
        d1,
        d2,
        weights,
    })
}

/// Initial coefficients for training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialGuess {
    Zero,
    /// Coefficients of the scaled monomials `φ_α(y/l)`.
    Analytic(Vec<(MultiIndex, f64)>),
}

impl InitialGuess {
    /// Coefficient vector over `layout`; every analytic term must be present.
    pub fn theta_for(&self, layout: &ModelLayout) -> Result<Vec<f64>> {
        let mut theta = vec![0.0; layout.len()];
        if let InitialGuess::Analytic(terms) = self {
            for (alpha, c) in terms {
                let k = layout.basis().position(alpha).ok_or_else(|| {
                    Error::InvalidArgument(format!(
                        "initial guess needs {alpha}, which is not in the basis (degree too low?)"
                    ))
                })?;
                theta[k] = *c;
            }
        }
        Ok(theta)
    }
}

/// Data of a linear-quadratic problem, for the Riccati oracle.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearData {
    pub a: DMatrix<f64>,
    /// Running cost `½ yᵀQy`.
    pub q: DMatrix<f64>,
}

#[derive(Clone, Debug)]
pub struct BenchmarkSpec {
    pub name: String,
    pub system: ControlSystem,
    pub horizon: f64,
    pub steps: usize,
    /// Normalization length and sampling box half-width.
    pub scale: f64,
    pub gamma: f64,
    pub r: f64,
    /// Ladder of penalty weights for progressive training, if any.
    pub gamma_ladder: Option<Vec<f64>>,
    pub basis_kind: BasisKind,
    pub train_size: usize,
    pub test_size: usize,
    pub train_seed: u64,
    pub test_seed: u64,
    pub initial_guess: InitialGuess,
    pub linear: Option<LinearData>,
}

impl BenchmarkSpec {
    /// Reduced basis `X_n \ (B₁ ∪ O(X_n))` of the given kind and degree.
    pub fn basis(&self, kind: BasisKind) -> Result<BasisSet> {
        let d = self.system.dim();
        let full = match kind {
            BasisKind::TotalDegree(n) => total_degree_indices(d, n)?,
            BasisKind::HyperbolicCross(n) => hyperbolic_cross_indices(d, n)?,
            BasisKind::Custom => {
                return Err(Error::InvalidArgument("benchmarks use generated bases".into()));
            }
        };
        reduce_basis(&strip_low_order(&full), self.system.control_matrix())
    }

    pub fn default_basis(&self) -> Result<BasisSet> {
        self.basis(self.basis_kind)
    }

    pub fn layout(&self, kind: BasisKind) -> Result<Arc<ModelLayout>> {
        ModelLayout::new(self.basis(kind)?, self.scale)
    }

    pub fn training_pool(&self, count: usize) -> Vec<Vec<f64>> {
        sample_initial_conditions(self.system.dim(), self.scale, count, self.train_seed)
    }

    pub fn test_points(&self, count: usize) -> Vec<Vec<f64>> {
        sample_initial_conditions(self.system.dim(), self.scale, count, self.test_seed)
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.horizon, self.steps)
    }

    /// Fails unless the initial guess keeps every default training
    /// trajectory inside the escape bound.
    pub fn check_initial_guess(&self) -> Result<()> {
        let layout = self.layout(self.basis_kind)?;
        let model = layout.model(self.initial_guess.theta_for(&layout)?)?;
        let train = TrainingSet::new(self.training_pool(self.train_size), self.grid()?, &self.system)?;
        let report = cost(&model, &self.system, &train)?;
        if !report.feasible {
            return Err(Error::InfeasibleInitialGuess(format!(
                "{}: initial guess escapes on the default training set",
                self.name
            )));
        }
        Ok(())
    }

    fn checked(self) -> Result<Self> {
        self.check_initial_guess()?;
        Ok(self)
    }
}

/// Uniform samples in `(−l, l)^d` from a seeded ChaCha8 stream; coordinates
/// are drawn point by point, so a shorter request is a prefix of a longer one.
pub fn sample_initial_conditions(dim: usize, l: f64, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            (0..dim)
                .map(|_| {
                    // 53 random bits centred in their cell: u ∈ (0, 1)
                    let u = ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64);
                    l * (2.0 * u - 1.0)
                })
                .collect()
        })
        .collect()
}

const DEFAULT_STEPS: usize = 400;

pub fn make_lc_circuit(beta: f64) -> Result<BenchmarkSpec> {
    let a = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, -1.0, -1.0, 0.0, 0.0, 1.0, 0.0, 1.0]);
    let b = DMatrix::from_column_slice(3, 1, &[0.0, 1.0, 0.0]);
    let q = DMatrix::identity(3, 3);
    let l = 10.0;
    let lq = LinearQuadratic::new(a.clone(), q.clone())?;
    // The uncontrolled circuit grows by up to e^{0.57 T}; the zero initial
    // guess is only admissible with a wider escape bound than the box.
    let system = ControlSystem::new(Arc::new(lq), b, beta, l)?.with_escape_bound(1e3 * l)?;
    BenchmarkSpec {
        name: "lc_circuit".into(),
        system,
        horizon: 10.0,
        steps: DEFAULT_STEPS,
        scale: l,
        gamma: 1e-30,
        r: 0.1,
        gamma_ladder: None,
        basis_kind: BasisKind::TotalDegree(2),
        train_size: 20,
        test_size: 100,
        train_seed: 11,
        test_seed: 12,
        initial_guess: InitialGuess::Zero,
        linear: Some(LinearData { a, q }),
    }
    .checked()
}

#[derive(Clone, Copy, Debug)]
struct VanDerPol {
    nu: f64,
    mu: f64,
}

impl Dynamics for VanDerPol {
    fn dim(&self) -> usize {
        2
    }
    fn drift(&self, y: &[f64], out: &mut [f64]) {
        out[0] = y[1];
        out[1] = self.nu * (1.0 - y[0] * y[0]) * y[1] - y[0] + self.mu * y[0] * y[0] * y[0];
    }
    fn jacobian(&self, y: &[f64], out: &mut DMatrix<f64>) {
        out[(0, 0)] = 0.0;
        out[(0, 1)] = 1.0;
        out[(1, 0)] = -2.0 * self.nu * y[0] * y[1] - 1.0 + 3.0 * self.mu * y[0] * y[0];
        out[(1, 1)] = self.nu * (1.0 - y[0] * y[0]);
    }
    fn running_cost(&self, y: &[f64]) -> f64 {
        0.5 * (y[0] * y[0] + y[1] * y[1])
    }
    fn running_cost_gradient(&self, y: &[f64], out: &mut [f64]) {
        out.copy_from_slice(y);
    }
}

pub fn make_vanderpol(nu: f64, mu: f64, beta: f64) -> Result<BenchmarkSpec> {
    let l = 10.0;
    let b = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
    let system = ControlSystem::new(Arc::new(VanDerPol { nu, mu }), b, beta, l)?;
    // v₀(y) = μβ y₁³y₂ + (βν/2) y₂² in scaled monomials.
    let initial_guess = InitialGuess::Analytic(vec![
        (MultiIndex::new(vec![3, 1]), mu * beta * l.powi(4)),
        (MultiIndex::new(vec![0, 2]), 0.5 * beta * nu * l * l),
    ]);
    BenchmarkSpec {
        name: "vanderpol".into(),
        system,
        horizon: 3.0,
        steps: DEFAULT_STEPS,
        scale: l,
        gamma: 1e-6,
        r: 0.1,
        gamma_ladder: None,
        basis_kind: BasisKind::TotalDegree(4),
        train_size: 5,
        test_size: 100,
        train_seed: 21,
        test_seed: 22,
        initial_guess,
        linear: None,
    }
    .checked()
}

/// Planar Cucker–Smale flocking with `a(r) = K/(1 + r²)`. State layout:
/// all positions `(x_1, …, x_N)` then all velocities `(y_1, …, y_N)`.
#[derive(Clone, Copy, Debug)]
struct CuckerSmale {
    agents: usize,
    coupling: f64,
}

impl CuckerSmale {
    fn kernel(&self, r2: f64) -> f64 {
        self.coupling / (1.0 + r2)
    }

    /// `a'(r)/r`
    fn kernel_slope(&self, r2: f64) -> f64 {
        -2.0 * self.coupling / ((1.0 + r2) * (1.0 + r2))
    }

    fn position(&self, y: &[f64], i: usize) -> [f64; 2] {
        [y[2 * i], y[2 * i + 1]]
    }

    fn velocity(&self, y: &[f64], i: usize) -> [f64; 2] {
        let off = 2 * self.agents;
        [y[off + 2 * i], y[off + 2 * i + 1]]
    }

    fn mean_velocity(&self, y: &[f64]) -> [f64; 2] {
        let n = self.agents as f64;
        let mut m = [0.0; 2];
        for i in 0..self.agents {
            let v = self.velocity(y, i);
            m[0] += v[0] / n;
            m[1] += v[1] / n;
        }
        m
    }
}

impl Dynamics for CuckerSmale {
    fn dim(&self) -> usize {
        4 * self.agents
    }

    fn drift(&self, y: &[f64], out: &mut [f64]) {
        let n = self.agents;
        let off = 2 * n;
        out[..off].copy_from_slice(&y[off..]);
        for i in 0..n {
            let xi = self.position(y, i);
            let vi = self.velocity(y, i);
            let mut acc = [0.0; 2];
            for j in 0..n {
                if j == i {
                    continue;
                }
                let xj = self.position(y, j);
                let vj = self.velocity(y, j);
                let r2 = (xi[0] - xj[0]).powi(2) + (xi[1] - xj[1]).powi(2);
                let a = self.kernel(r2);
                acc[0] += a * (vj[0] - vi[0]);
                acc[1] += a * (vj[1] - vi[1]);
            }
            out[off + 2 * i] = acc[0] / n as f64;
            out[off + 2 * i + 1] = acc[1] / n as f64;
        }
    }

    fn jacobian(&self, y: &[f64], out: &mut DMatrix<f64>) {
        let n = self.agents;
        let off = 2 * n;
        let inv_n = 1.0 / n as f64;
        out.fill(0.0);
        for k in 0..off {
            out[(k, off + k)] = 1.0;
        }
        for i in 0..n {
            let xi = self.position(y, i);
            let vi = self.velocity(y, i);
            for j in 0..n {
                if j == i {
                    continue;
                }
                let xj = self.position(y, j);
                let vj = self.velocity(y, j);
                let dx = [xi[0] - xj[0], xi[1] - xj[1]];
                let r2 = dx[0] * dx[0] + dx[1] * dx[1];
                let a = self.kernel(r2) * inv_n;
                let g = self.kernel_slope(r2) * inv_n;
                for c in 0..2 {
                    let row = off + 2 * i + c;
                    out[(row, off + 2 * j + c)] += a;
                    out[(row, off + 2 * i + c)] -= a;
                    let dv = vj[c] - vi[c];
                    for e in 0..2 {
                        out[(row, 2 * i + e)] += g * dv * dx[e];
                        out[(row, 2 * j + e)] -= g * dv * dx[e];
                    }
                }
            }
        }
    }

    fn running_cost(&self, y: &[f64]) -> f64 {
        let m = self.mean_velocity(y);
        let mut s = 0.0;
        for i in 0..self.agents {
            let v = self.velocity(y, i);
            s += (v[0] - m[0]).powi(2) + (v[1] - m[1]).powi(2);
        }
        s / self.agents as f64
    }

    fn running_cost_gradient(&self, y: &[f64], out: &mut [f64]) {
        let n = self.agents;
        let off = 2 * n;
        let m = self.mean_velocity(y);
        out[..off].iter_mut().for_each(|o| *o = 0.0);
        for i in 0..n {
            let v = self.velocity(y, i);
            out[off + 2 * i] = 2.0 / n as f64 * (v[0] - m[0]);
            out[off + 2 * i + 1] = 2.0 / n as f64 * (v[1] - m[1]);
        }
    }
}

pub fn make_cucker_smale(agents: usize, coupling: f64, beta: f64) -> Result<BenchmarkSpec> {
    if agents < 2 {
        return Err(Error::InvalidArgument("Cucker–Smale needs at least two agents".into()));
    }
    let l = 5.0;
    let d = 4 * agents;
    let m = 2 * agents;
    let mut b = DMatrix::zeros(d, m);
    for c in 0..m {
        b[(2 * agents + c, c)] = 1.0;
    }
    let cs = CuckerSmale { agents, coupling };
    // Positions drift with the flock and leave the sampling box.
    let system = ControlSystem::new(Arc::new(cs), b, beta, l)?.with_escape_bound(1e3 * l)?;
    // v₀ = 10Kβ Σ|y_i|² over velocities.
    let terms = (0..m)
        .map(|c| {
            let mut e = vec![0u32; d];
            e[2 * agents + c] = 2;
            (MultiIndex::new(e), 10.0 * coupling * beta * l * l)
        })
        .collect();
    BenchmarkSpec {
        name: "cucker_smale".into(),
        system,
        horizon: 3.0,
        steps: DEFAULT_STEPS,
        scale: l,
        gamma: 1e-5,
        r: 0.9,
        gamma_ladder: None,
        basis_kind: BasisKind::HyperbolicCross(4),
        train_size: 5,
        test_size: 100,
        train_seed: 41,
        test_seed: 42,
        initial_guess: InitialGuess::Analytic(terms),
        linear: None,
    }
    .checked()
}

/// Chebyshev collocation of the Neumann Allen–Cahn equation on the interior
/// nodes, with boundary values eliminated through the boundary rows of `D`.
#[derive(Clone, Debug)]
pub struct AllenCahnDiscretization {
    pub grid: ChebGrid,
    /// Maps interior values to all `N+1` nodal values.
    pub reconstruction: DMatrix<f64>,
    /// Interior rows of `D² R`.
    pub laplacian: DMatrix<f64>,
    /// `Rᵀ W R`, so that `ℓ(y) = yᵀ Q y ≈ ∫ y(x)² dx`.
    pub mass: DMatrix<f64>,
}

pub fn allen_cahn_discretization(interior: usize) -> Result<AllenCahnDiscretization> {
    if interior < 4 {
        return Err(Error::InvalidArgument(format!(
            "Allen–Cahn needs at least 4 interior nodes, got {interior}"
        )));
    }
    let n = interior + 1;
    let grid = cheb_grid(n)?;
    let d = &grid.d1;
    // [D00 D0N; DN0 DNN] (u0, uN) = −[D0,int; DN,int] y
    let edge = DMatrix::from_row_slice(2, 2, &[d[(0, 0)], d[(0, n)], d[(n, 0)], d[(n, n)]]);
    let coupling = DMatrix::from_fn(2, interior, |r, j| d[(if r == 0 { 0 } else { n }, j + 1)]);
    let boundary = -edge
        .try_inverse()
        .ok_or_else(|| Error::InvalidArgument("singular Neumann boundary block".into()))?
        * coupling;
    let mut reconstruction = DMatrix::zeros(n + 1, interior);
    for j in 0..interior {
        reconstruction[(0, j)] = boundary[(0, j)];
        reconstruction[(n, j)] = boundary[(1, j)];
        reconstruction[(j + 1, j)] = 1.0;
    }
    let full = &grid.d2 * &reconstruction;
    let laplacian = full.rows(1, interior).into_owned();
    let w = DMatrix::from_diagonal(&DVector::from_column_slice(&grid.weights));
    let mass = reconstruction.transpose() * w * &reconstruction;
    Ok(AllenCahnDiscretization {
        grid,
        reconstruction,
        laplacian,
        mass,
    })
}

pub const ALLEN_CAHN_GAMMA_LADDER: [f64; 10] =
    [1e-1, 8.9e-2, 7.8e-2, 6.7e-2, 5.6e-2, 4.4e-2, 3.3e-2, 2.2e-2, 1.1e-2, 1e-6];

pub fn make_allen_cahn(nu: f64, interior: usize, beta: f64) -> Result<BenchmarkSpec> {
    let disc = allen_cahn_discretization(interior)?;
    let points: Vec<f64> = disc.grid.points[1..=interior].to_vec();
    let regions = [(-0.7, -0.4), (-0.2, 0.2), (0.4, 0.7)];
    let b = DMatrix::from_fn(interior, regions.len(), |j, c| {
        let (lo, hi) = regions[c];
        if points[j] > lo && points[j] < hi {
            1.0
        } else {
            0.0
        }
    });
    let stiffness = disc.laplacian * nu;
    let mass = disc.mass;
    let stiffness_j = stiffness.clone();
    let mass_g = mass.clone();
    let dynamics = FnDynamics::new(
        interior,
        move |y, out| {
            for i in 0..y.len() {
                let diffusion: f64 = (0..y.len()).map(|j| stiffness[(i, j)] * y[j]).sum();
                out[i] = diffusion + y[i] * (1.0 - y[i] * y[i]);
            }
        },
        move |y, jac| {
            jac.copy_from(&stiffness_j);
            for i in 0..y.len() {
                jac[(i, i)] += 1.0 - 3.0 * y[i] * y[i];
            }
        },
        {
            let mass = mass.clone();
            move |y| {
                let y = DVector::from_column_slice(y);
                y.dot(&(&mass * &y))
            }
        },
        move |y, g| {
            for i in 0..y.len() {
                g[i] = 2.0 * (0..y.len()).map(|j| mass_g[(i, j)] * y[j]).sum::<f64>();
            }
        },
    );
    let l = 10.0;
    let system = ControlSystem::new(Arc::new(dynamics), b, beta, l)?;
    BenchmarkSpec {
        name: "allen_cahn".into(),
        system,
        horizon: 4.0,
        steps: DEFAULT_STEPS,
        scale: l,
        gamma: ALLEN_CAHN_GAMMA_LADDER[0],
        r: 0.9,
        gamma_ladder: Some(ALLEN_CAHN_GAMMA_LADDER.to_vec()),
        basis_kind: BasisKind::HyperbolicCross(6),
        train_size: 5,
        test_size: 100,
        train_seed: 31,
        test_seed: 32,
        initial_guess: InitialGuess::Zero,
        linear: None,
    }
    .checked()
}

/// Benchmark by registry name with default parameters; `beta` overrides the
/// control weight.
pub fn benchmark(name: &str, beta: Option<f64>) -> Result<BenchmarkSpec> {
    match name {
        "lc_circuit" => make_lc_circuit(beta.unwrap_or(1.0)),
        "vanderpol" => make_vanderpol(1.5, 0.8, beta.unwrap_or(1e-3)),
        "allen_cahn" => make_allen_cahn(0.5, 19, beta.unwrap_or(1e-2)),
        "cucker_smale" => make_cucker_smale(10, 0.1, beta.unwrap_or(1e-2)),
        other => Err(Error::Config(format!(
            "unknown benchmark '{other}' (known: {})",
            BENCHMARK_NAMES.join(", ")
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{closed_loop_rhs, integrate_closed_loop};

    fn check_jacobian(sys: &ControlSystem, points: &[Vec<f64>]) {
        let d = sys.dim();
        let mut jac = DMatrix::zeros(d, d);
        for y in points {
            sys.dynamics().jacobian(y, &mut jac);
            for j in 0..d {
                let h = 1e-6 * y[j].abs().max(1.0);
                let mut yp = y.clone();
                let mut ym = y.clone();
                yp[j] += h;
                ym[j] -= h;
                let mut fp = vec![0.0; d];
                let mut fm = vec![0.0; d];
                sys.dynamics().drift(&yp, &mut fp);
                sys.dynamics().drift(&ym, &mut fm);
                for i in 0..d {
                    let fd = (fp[i] - fm[i]) / (2.0 * h);
                    let scale = jac.column(j).amax().max(1.0);
                    assert!((fd - jac[(i, j)]).abs() <= 1e-6 * scale, "({i},{j}): {fd} vs {}", jac[(i, j)]);
                }
            }
        }
    }

    #[test]
    fn cheb_grid_invariants() {
        for n in [4, 8, 16, 20, 21] {
            let g = cheb_grid(n).unwrap();
            assert!((g.weights.iter().sum::<f64>() - 2.0).abs() < 1e-12);
            for i in 0..=n {
                assert!(g.d1.row(i).sum().abs() < 1e-12);
                let dx: f64 = (0..=n).map(|j| g.d1[(i, j)] * g.points[j]).sum();
                assert!((dx - 1.0).abs() < 1e-10);
            }
            for i in 1..n {
                let d2x2: f64 = (0..=n).map(|j| g.d2[(i, j)] * g.points[j] * g.points[j]).sum();
                assert!((d2x2 - 2.0).abs() < 1e-8);
            }
            let int_x2: f64 = g.weights.iter().zip(&g.points).map(|(w, x)| w * x * x).sum();
            assert!((int_x2 - 2.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn lc_matrices_and_basis() {
        let spec = make_lc_circuit(1.0).unwrap();
        let a = &spec.linear.as_ref().unwrap().a;
        assert_eq!(a.trace(), 1.0);
        assert_eq!(a[(0, 2)], -1.0);
        assert_eq!(a[(2, 0)], 1.0);
        let basis = spec.default_basis().unwrap();
        let want: Vec<MultiIndex> = [[0, 1, 1], [0, 2, 0], [1, 1, 0]].iter().map(|e| MultiIndex::new(e.to_vec())).collect();
        let mut got = basis.indices().to_vec();
        got.sort_by(|a, b| a.exponents().cmp(b.exponents()));
        assert_eq!(got, want);
    }

    #[test]
    fn vanderpol_initial_guess() {
        let spec = make_vanderpol(1.5, 0.8, 1e-3).unwrap();
        let layout = spec.layout(BasisKind::TotalDegree(4)).unwrap();
        assert_eq!(layout.len(), 9);
        let theta = spec.initial_guess.theta_for(&layout).unwrap();
        let model = layout.model(theta).unwrap();
        assert!((model.coefficient(&MultiIndex::new(vec![3, 1])).unwrap() - 8.0).abs() < 1e-12);
        assert!((model.coefficient(&MultiIndex::new(vec![0, 2])).unwrap() - 0.075).abs() < 1e-15);
        let rhs = closed_loop_rhs(&spec.system, &model, &[1.0, 1.0]);
        assert!((rhs[0] - 1.0).abs() < 1e-12);
        assert!((rhs[1] - (-1.0 - 1.5)).abs() < 1e-12, "{}", rhs[1]);
        let low = spec.layout(BasisKind::TotalDegree(3)).unwrap();
        assert!(spec.initial_guess.theta_for(&low).is_err());
        for (n, size) in [(4, 9), (5, 14), (6, 20), (7, 27), (8, 35)] {
            assert_eq!(spec.basis(BasisKind::TotalDegree(n)).unwrap().len(), size);
        }
    }

    #[test]
    fn cucker_smale_setup() {
        let spec = make_cucker_smale(10, 0.1, 1e-2).unwrap();
        assert_eq!(spec.system.dim(), 40);
        assert_eq!(spec.default_basis().unwrap().len(), 650);
        let cs = CuckerSmale { agents: 10, coupling: 0.1 };
        assert_eq!(cs.kernel(0.0), 0.1);
        // Equal velocities: zero consensus cost.
        let mut y = spec.training_pool(1).remove(0);
        for i in 0..10 {
            y[20 + 2 * i] = 1.5;
            y[21 + 2 * i] = -0.5;
        }
        assert!(spec.system.dynamics().running_cost(&y).abs() < 1e-28);
        let pts = spec.training_pool(3);
        check_jacobian(&spec.system, &pts);
    }

    #[test]
    fn cucker_smale_mean_velocity_conserved() {
        let spec = make_cucker_smale(10, 0.1, 1e-2).unwrap();
        let layout = ModelLayout::new(BasisSet::custom(40, vec![]).unwrap(), 5.0).unwrap();
        let model = layout.zero_model();
        let y0 = spec.training_pool(1).remove(0);
        let traj = integrate_closed_loop(&spec.system, &model, &y0, TimeGrid::new(3.0, 300).unwrap()).unwrap();
        let cs = CuckerSmale { agents: 10, coupling: 0.1 };
        let m0 = cs.mean_velocity(traj.state(0));
        let m1 = cs.mean_velocity(traj.final_state());
        assert!((m0[0] - m1[0]).abs() < 1e-10 && (m0[1] - m1[1]).abs() < 1e-10);
    }

    #[test]
    fn allen_cahn_setup() {
        let spec = make_allen_cahn(0.5, 19, 0.1).unwrap();
        assert_eq!(spec.system.dim(), 19);
        assert_eq!(spec.default_basis().unwrap().len(), 350);
        let b = spec.system.control_matrix();
        assert_eq!(b.iter().filter(|&&v| v == 1.0).count(), 7);
        for c in [1.0, -1.0] {
            let mut f = vec![0.0; 19];
            spec.system.dynamics().drift(&[c; 19], &mut f);
            assert!(f.iter().all(|v| v.abs() < 1e-9), "{f:?}");
        }
        check_jacobian(&spec.system, &spec.training_pool(2).iter().map(|y| y.iter().map(|v| v / 10.0).collect()).collect::<Vec<_>>());
        assert!(make_allen_cahn(0.5, 3, 0.1).is_err());
    }

    #[test]
    fn neumann_decay_rate() {
        for interior in [15, 19, 24] {
            let disc = allen_cahn_discretization(interior).unwrap();
            let mut re: Vec<f64> = disc.laplacian.complex_eigenvalues().iter().map(|z| z.re).collect();
            re.sort_by(|a, b| b.partial_cmp(a).unwrap());
            assert!(re[0].abs() < 1e-8);
            let rate = -0.5 * re[1];
            let want = 0.5 * PI * PI / 4.0;
            assert!((rate - want).abs() <= 0.02 * want, "N={interior}: {rate} vs {want}");
        }
    }

    #[test]
    fn vanderpol_jacobian() {
        let spec = make_vanderpol(1.5, 0.8, 1e-3).unwrap();
        check_jacobian(&spec.system, &spec.training_pool(20));
    }

    #[test]
    fn sampling() {
        let a = sample_initial_conditions(3, 2.0, 50, 7);
        let b = sample_initial_conditions(3, 2.0, 50, 7);
        assert_eq!(a, b);
        assert_eq!(sample_initial_conditions(3, 2.0, 10, 7), a[..10].to_vec());
        assert!(a.iter().flatten().all(|v| v.abs() < 2.0));
        let n = 100_000;
        let big = sample_initial_conditions(2, 1.0, n, 3);
        for c in 0..2 {
            let mean: f64 = big.iter().map(|y| y[c]).sum::<f64>() / n as f64;
            assert!(mean.abs() <= 3.0 / (12.0 * n as f64).sqrt());
        }
    }

    #[test]
    fn registry() {
        for name in BENCHMARK_NAMES {
            let spec = benchmark(name, None).unwrap();
            assert_eq!(spec.name, name);
            let zero = vec![0.0; spec.system.dim()];
            let mut f = vec![0.0; spec.system.dim()];
            spec.system.dynamics().drift(&zero, &mut f);
            assert!(f.iter().all(|&v| v == 0.0));
        }
        assert!(benchmark("nope", None).is_err());
    }
}
