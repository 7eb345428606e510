//! Coupled heat cascade on `Ω = (0, 1)` with homogeneous Dirichlet data:
//!
//! ```text
//! y' − y_xx = 1_ω h,    z' − z_xx = y,
//! ```
//!
//! semi-discretized with the 3-point Laplacian on `N` interior nodes and
//! integrated with the θ-scheme over `M` steps of length `dt = T / M`.
//!
//! The flow and control maps follow the sign convention
//!
//! ```text
//! y(T) = A1 y0 − B1 h,    z(T) = A2 y0 + A3 z0 − B2 h,
//! ```
//!
//! so that null control of `y` is the exact block `A1 y0 = B1 h` of a mixed
//! problem. Controls are piecewise constant in time and nodal on the grid
//! points strictly inside `ω`; a [`ControlField`] stores them step-major
//! (`index = step · n_omega + node`).
//!
//! Norms reported in physical units use the discrete `L²` norm
//! `√h · ‖·‖₂`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::douglas::{mixed_solve, MixedProblem};
use crate::error::{Error, Result};
use crate::linop::{Operator, Tolerances};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeatConfig {
    /// Interior grid points; spacing `1 / (n + 1)`.
    pub n: usize,
    /// Time steps.
    pub m: usize,
    /// Horizon.
    pub t: f64,
    /// Control interval `(a, b)`.
    pub omega: (f64, f64),
    pub theta: f64,
}

impl HeatConfig {
    pub fn new(n: usize, m: usize, t: f64, omega: (f64, f64), theta: f64) -> Result<Self> {
        let cfg = HeatConfig { n, m, t, omega, theta };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.m == 0 {
            return Err(Error::InvalidInput("n and m must be positive".into()));
        }
        if !(self.t > 0.0 && self.t.is_finite()) {
            return Err(Error::InvalidInput(format!("horizon must be positive, got {}", self.t)));
        }
        let (a, b) = self.omega;
        if !(0.0 <= a && a < b && b <= 1.0) {
            return Err(Error::InvalidInput(format!(
                "omega must satisfy 0 <= a < b <= 1, got ({a}, {b})"
            )));
        }
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(Error::InvalidInput(format!(
                "theta must lie in [0, 1], got {}",
                self.theta
            )));
        }
        if self.omega_nodes().is_empty() {
            return Err(Error::InvalidInput(format!(
                "omega = ({a}, {b}) contains no interior grid node for n = {}",
                self.n
            )));
        }
        Ok(())
    }

    pub fn spacing(&self) -> f64 {
        1.0 / (self.n + 1) as f64
    }

    pub fn dt(&self) -> f64 {
        self.t / self.m as f64
    }

    /// Interior node coordinates `x_i = i h`, `i = 1..n`.
    pub fn nodes(&self) -> Vec<f64> {
        let h = self.spacing();
        (1..=self.n).map(|i| i as f64 * h).collect()
    }

    /// Zero-based indices of nodes strictly inside `ω`.
    pub fn omega_nodes(&self) -> Vec<usize> {
        let (a, b) = self.omega;
        self.nodes()
            .iter()
            .enumerate()
            .filter(|(_, &x)| a < x && x < b)
            .map(|(i, _)| i)
            .collect()
    }

    /// Same interval and θ with `n` and `m` multiplied by `factor`.
    pub fn refined(&self, factor: usize) -> HeatConfig {
        HeatConfig {
            n: self.n * factor,
            m: self.m * factor,
            ..*self
        }
    }
}

/// `(1/h²) · tridiag(1, −2, 1)` with `h = 1 / (n + 1)`.
pub fn assemble_laplacian(n: usize) -> Result<Operator> {
    if n == 0 {
        return Err(Error::InvalidInput("laplacian needs at least one node".into()));
    }
    let inv_h2 = ((n + 1) * (n + 1)) as f64;
    let mut l = DMatrix::zeros(n, n);
    for i in 0..n {
        l[(i, i)] = -2.0 * inv_h2;
        if i + 1 < n {
            l[(i, i + 1)] = inv_h2;
            l[(i + 1, i)] = inv_h2;
        }
    }
    Operator::from_matrix(l)
}

/// One θ-step `(I − θ dt L) u⁺ = (I + (1 − θ) dt L) u + dt f` with a
/// precomputed Thomas factorization of the implicit matrix.
#[derive(Debug, Clone)]
struct ThetaStepper {
    n: usize,
    dt: f64,
    expl_diag: f64,
    expl_off: f64,
    impl_off: f64,
    /// Pivots of the forward sweep.
    pivots: Vec<f64>,
}

impl ThetaStepper {
    fn new(cfg: &HeatConfig) -> Self {
        let r = cfg.dt() / (cfg.spacing() * cfg.spacing());
        let impl_diag = 1.0 + 2.0 * cfg.theta * r;
        let impl_off = -cfg.theta * r;
        let mut pivots = Vec::with_capacity(cfg.n);
        pivots.push(impl_diag);
        for i in 1..cfg.n {
            let prev = pivots[i - 1];
            pivots.push(impl_diag - impl_off * impl_off / prev);
        }
        ThetaStepper {
            n: cfg.n,
            dt: cfg.dt(),
            expl_diag: 1.0 - 2.0 * (1.0 - cfg.theta) * r,
            expl_off: (1.0 - cfg.theta) * r,
            impl_off,
            pivots,
        }
    }

    fn step(&self, u: &DVector<f64>, forcing: Option<&DVector<f64>>) -> DVector<f64> {
        let n = self.n;
        let mut rhs = DVector::zeros(n);
        for i in 0..n {
            let mut v = self.expl_diag * u[i];
            if i > 0 {
                v += self.expl_off * u[i - 1];
            }
            if i + 1 < n {
                v += self.expl_off * u[i + 1];
            }
            if let Some(f) = forcing {
                v += self.dt * f[i];
            }
            rhs[i] = v;
        }
        for i in 1..n {
            rhs[i] -= self.impl_off / self.pivots[i - 1] * rhs[i - 1];
        }
        rhs[n - 1] /= self.pivots[n - 1];
        for i in (0..n - 1).rev() {
            rhs[i] = (rhs[i] - self.impl_off * rhs[i + 1]) / self.pivots[i];
        }
        rhs
    }
}

/// Piecewise-constant control on the `ω` nodes, stored step-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlField {
    n_omega: usize,
    steps: usize,
    values: DVector<f64>,
}

impl ControlField {
    pub fn zeros(n_omega: usize, steps: usize) -> Self {
        ControlField {
            n_omega,
            steps,
            values: DVector::zeros(n_omega * steps),
        }
    }

    pub fn from_vector(n_omega: usize, steps: usize, values: DVector<f64>) -> Result<Self> {
        if values.len() != n_omega * steps {
            return Err(Error::dims("ControlField", n_omega * steps, values.len()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("control"));
        }
        Ok(ControlField { n_omega, steps, values })
    }

    pub fn n_omega(&self) -> usize {
        self.n_omega
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn get(&self, step: usize, node: usize) -> f64 {
        self.values[step * self.n_omega + node]
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    fn step_slice(&self, step: usize) -> &[f64] {
        &self.values.as_slice()[step * self.n_omega..(step + 1) * self.n_omega]
    }
}

/// Grid function values at the interior nodes for each time level
/// `t_k = k dt`, `k = 0..=M`. Boundary values are zero and not stored.
#[derive(Debug, Clone, PartialEq)]
pub struct StateField {
    pub nodes: Vec<f64>,
    pub times: Vec<f64>,
    pub levels: Vec<DVector<f64>>,
}

impl StateField {
    /// Long-format rows `(time, node, value)`.
    pub fn rows(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.times
            .iter()
            .zip(&self.levels)
            .flat_map(move |(&t, u)| self.nodes.iter().zip(u.iter()).map(move |(&x, &v)| (t, x, v)))
    }
}

#[derive(Debug, Clone)]
pub struct HeatModel {
    pub config: HeatConfig,
    pub laplacian: Operator,
    /// `I − θ dt L`.
    pub step_implicit: Operator,
    /// `I + (1 − θ) dt L`.
    pub step_explicit: Operator,
    pub omega_mask: Operator,
    pub omega_nodes: Vec<usize>,
    pub a1: Operator,
    pub a2: Operator,
    pub a3: Operator,
    pub b1: Operator,
    pub b2: Operator,
    stepper: ThetaStepper,
}

#[derive(Debug, Clone)]
pub struct ForwardSolution {
    pub y_terminal: DVector<f64>,
    pub z_terminal: DVector<f64>,
    pub y: StateField,
    pub z: StateField,
}

#[derive(Debug, Clone)]
pub struct AdjointSolution {
    pub phi0: DVector<f64>,
    pub psi0: DVector<f64>,
    /// `−∫ φ(t, x_j) dt` over each step, trapezoidal in time. Pairs with a
    /// control in the Euclidean product like `Bᵀ(φᵀ, ψᵀ)` does.
    pub trace: ControlField,
    pub phi: StateField,
    pub psi: StateField,
}

impl HeatModel {
    pub fn assemble(cfg: HeatConfig) -> Result<HeatModel> {
        assemble_model(cfg)
    }

    pub fn n(&self) -> usize {
        self.config.n
    }

    pub fn n_omega(&self) -> usize {
        self.omega_nodes.len()
    }

    /// Number of control degrees of freedom, `n_omega · M`.
    pub fn control_dim(&self) -> usize {
        self.n_omega() * self.config.m
    }

    /// Discrete `L²(Ω)` norm.
    pub fn l2_norm(&self, v: &DVector<f64>) -> f64 {
        self.config.spacing().sqrt() * v.norm()
    }

    /// Discrete `L²((0,T) × ω)` norm of a control.
    pub fn control_l2_norm(&self, h: &ControlField) -> f64 {
        (self.config.spacing() * self.config.dt()).sqrt() * h.values.norm()
    }

    /// Grid samples of `sin(kπx)`.
    pub fn sine_mode(&self, k: usize) -> DVector<f64> {
        sine_mode(&self.config, k)
    }

    pub fn zero_control(&self) -> ControlField {
        ControlField::zeros(self.n_omega(), self.config.m)
    }

    /// The mixed problem `(A1, A2, B1, B2)` of null control in `y` and
    /// approximate control in `z`.
    pub fn mixed_problem(&self, tol: Tolerances) -> Result<MixedProblem> {
        MixedProblem::new(self.a1.clone(), self.a2.clone(), self.b1.clone(), self.b2.clone(), tol)
    }

    fn embed(&self, values: &[f64]) -> DVector<f64> {
        let mut out = DVector::zeros(self.n());
        for (&node, &v) in self.omega_nodes.iter().zip(values) {
            out[node] = v;
        }
        out
    }

    fn integrate(
        &self,
        y0: &DVector<f64>,
        z0: &DVector<f64>,
        control: Option<&ControlField>,
    ) -> (Vec<DVector<f64>>, Vec<DVector<f64>>) {
        let theta = self.config.theta;
        let m = self.config.m;
        let mut ys = Vec::with_capacity(m + 1);
        let mut zs = Vec::with_capacity(m + 1);
        ys.push(y0.clone());
        zs.push(z0.clone());
        for k in 0..m {
            let forcing = control.map(|c| self.embed(c.step_slice(k)));
            let y_next = self.stepper.step(&ys[k], forcing.as_ref());
            let source = &y_next * theta + &ys[k] * (1.0 - theta);
            let z_next = self.stepper.step(&zs[k], Some(&source));
            ys.push(y_next);
            zs.push(z_next);
        }
        (ys, zs)
    }

    fn state_field(&self, levels: Vec<DVector<f64>>) -> StateField {
        let dt = self.config.dt();
        StateField {
            nodes: self.config.nodes(),
            times: (0..levels.len()).map(|k| k as f64 * dt).collect(),
            levels,
        }
    }
}

fn sine_mode(cfg: &HeatConfig, k: usize) -> DVector<f64> {
    DVector::from_iterator(cfg.n, cfg.nodes().into_iter().map(|x| (k as f64 * PI * x).sin()))
}

/// Assembles flow maps by simulating unit initial data and control maps by
/// simulating unit impulses in each control degree of freedom.
///
/// The scheme is time-invariant, so the response to an impulse applied at
/// step `k` is the state `M − k` steps into the trajectory of the same
/// impulse applied at step 0; one trajectory per `ω` node yields all `M`
/// columns for that node.
pub fn assemble_model(cfg: HeatConfig) -> Result<HeatModel> {
    cfg.validate()?;
    let n = cfg.n;
    let m = cfg.m;
    let dt = cfg.dt();
    let theta = cfg.theta;
    let laplacian = assemble_laplacian(n)?;
    let eye = DMatrix::<f64>::identity(n, n);
    let step_implicit = Operator::from_matrix(&eye - laplacian.matrix() * (theta * dt))?;
    let step_explicit = Operator::from_matrix(&eye + laplacian.matrix() * ((1.0 - theta) * dt))?;
    let omega_nodes = cfg.omega_nodes();
    let mut mask = DMatrix::zeros(n, n);
    for &i in &omega_nodes {
        mask[(i, i)] = 1.0;
    }

    let mut model = HeatModel {
        config: cfg,
        laplacian,
        step_implicit,
        step_explicit,
        omega_mask: Operator::from_matrix(mask)?,
        omega_nodes,
        a1: Operator::zeros(n, n),
        a2: Operator::zeros(n, n),
        a3: Operator::zeros(n, n),
        b1: Operator::zeros(n, 1),
        b2: Operator::zeros(n, 1),
        stepper: ThetaStepper::new(&cfg),
    };

    let zero = DVector::zeros(n);
    let flows: Vec<(DVector<f64>, DVector<f64>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut e = DVector::zeros(n);
            e[i] = 1.0;
            let (ys, zs) = model.integrate(&e, &zero, None);
            (ys[m].clone(), zs[m].clone())
        })
        .collect();
    let mut a1 = DMatrix::zeros(n, n);
    let mut a2 = DMatrix::zeros(n, n);
    for (i, (y, z)) in flows.iter().enumerate() {
        a1.set_column(i, y);
        a2.set_column(i, z);
    }

    let n_omega = model.n_omega();
    let impulses: Vec<_> = (0..n_omega)
        .into_par_iter()
        .map(|j| {
            let mut c = ControlField::zeros(n_omega, m);
            c.values[j] = 1.0;
            model.integrate(&zero, &zero, Some(&c))
        })
        .collect();
    let mut b1 = DMatrix::zeros(n, n_omega * m);
    let mut b2 = DMatrix::zeros(n, n_omega * m);
    for (j, (ys, zs)) in impulses.iter().enumerate() {
        for k in 0..m {
            let col = k * n_omega + j;
            b1.set_column(col, &(-&ys[m - k]));
            b2.set_column(col, &(-&zs[m - k]));
        }
    }

    model.a1 = Operator::from_matrix(a1)?;
    model.a2 = Operator::from_matrix(a2)?;
    // z obeys the same scalar equation as y when y0 = h = 0.
    model.a3 = model.a1.clone();
    model.b1 = Operator::from_matrix(b1)?;
    model.b2 = Operator::from_matrix(b2)?;
    Ok(model)
}

fn check_len(context: &'static str, v: &DVector<f64>, n: usize) -> Result<()> {
    if v.len() != n {
        return Err(Error::dims(context, n, v.len()));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite(context));
    }
    Ok(())
}

pub fn simulate_forward(
    model: &HeatModel,
    y0: &DVector<f64>,
    z0: &DVector<f64>,
    h: &ControlField,
) -> Result<ForwardSolution> {
    check_len("simulate_forward (y0)", y0, model.n())?;
    check_len("simulate_forward (z0)", z0, model.n())?;
    if h.n_omega != model.n_omega() || h.steps != model.config.m {
        return Err(Error::dims(
            "simulate_forward (control)",
            format!("{}x{}", model.n_omega(), model.config.m),
            format!("{}x{}", h.n_omega, h.steps),
        ));
    }
    let (ys, zs) = model.integrate(y0, z0, Some(h));
    Ok(ForwardSolution {
        y_terminal: ys[model.config.m].clone(),
        z_terminal: zs[model.config.m].clone(),
        y: model.state_field(ys),
        z: model.state_field(zs),
    })
}

/// Backward θ-scheme for `−φ' − φ_xx = ψ`, `−ψ' − ψ_xx = 0` from terminal
/// data `(φᵀ, ψᵀ)`.
pub fn simulate_adjoint(model: &HeatModel, phi_t: &DVector<f64>, psi_t: &DVector<f64>) -> Result<AdjointSolution> {
    check_len("simulate_adjoint (phiT)", phi_t, model.n())?;
    check_len("simulate_adjoint (psiT)", psi_t, model.n())?;
    let m = model.config.m;
    let theta = model.config.theta;
    let dt = model.config.dt();
    let mut phi = vec![DVector::zeros(model.n()); m + 1];
    let mut psi = vec![DVector::zeros(model.n()); m + 1];
    phi[m] = phi_t.clone();
    psi[m] = psi_t.clone();
    for k in (0..m).rev() {
        psi[k] = model.stepper.step(&psi[k + 1], None);
        let source = &psi[k] * theta + &psi[k + 1] * (1.0 - theta);
        phi[k] = model.stepper.step(&phi[k + 1], Some(&source));
    }

    let n_omega = model.n_omega();
    let mut trace = ControlField::zeros(n_omega, m);
    for k in 0..m {
        for (j, &node) in model.omega_nodes.iter().enumerate() {
            trace.values[k * n_omega + j] = -0.5 * dt * (phi[k][node] + phi[k + 1][node]);
        }
    }
    Ok(AdjointSolution {
        phi0: phi[0].clone(),
        psi0: psi[0].clone(),
        trace,
        phi: model.state_field(phi),
        psi: model.state_field(psi),
    })
}

/// Backward scalar heat flow `−η' − η_xx = 0`, `η(T) = φᵀ`.
pub fn simulate_scalar_adjoint(model: &HeatModel, phi_t: &DVector<f64>) -> Result<StateField> {
    check_len("simulate_scalar_adjoint", phi_t, model.n())?;
    let m = model.config.m;
    let mut eta = vec![DVector::zeros(model.n()); m + 1];
    eta[m] = phi_t.clone();
    for k in (0..m).rev() {
        eta[k] = model.stepper.step(&eta[k + 1], None);
    }
    Ok(model.state_field(eta))
}

/// Smooth terminal datum `Σ_l c_l sin(lπx)` with known coefficients, so the
/// continuous adjoint solution is available in closed form.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalProbe {
    pub coefficients: Vec<f64>,
}

impl ModalProbe {
    pub fn sample(&self, cfg: &HeatConfig) -> DVector<f64> {
        let mut v = DVector::zeros(cfg.n);
        for (l, &c) in self.coefficients.iter().enumerate() {
            v += sine_mode(cfg, l + 1) * c;
        }
        v
    }

    fn eigenvalue(l: usize) -> f64 {
        let k = l as f64 * PI;
        k * k
    }

    /// Continuous `η(0)` for `η(T) = probe`, sampled on the grid.
    pub fn backward_flow(&self, cfg: &HeatConfig) -> DVector<f64> {
        let mut v = DVector::zeros(cfg.n);
        for (l, &c) in self.coefficients.iter().enumerate() {
            v += sine_mode(cfg, l + 1) * (c * (-Self::eigenvalue(l + 1) * cfg.t).exp());
        }
        v
    }

    /// Continuous `−∫_{t_k}^{t_{k+1}} η(t, x_j) dt` on the `ω` nodes, laid
    /// out like a [`ControlField`].
    pub fn observation(&self, cfg: &HeatConfig) -> DVector<f64> {
        let dt = cfg.dt();
        let nodes = cfg.nodes();
        let omega = cfg.omega_nodes();
        let n_omega = omega.len();
        let mut out = DVector::zeros(n_omega * cfg.m);
        for k in 0..cfg.m {
            let remaining = cfg.t - (k + 1) as f64 * dt;
            for (j, &node) in omega.iter().enumerate() {
                let mut acc = 0.0;
                for (l, &c) in self.coefficients.iter().enumerate() {
                    let lam = Self::eigenvalue(l + 1);
                    let integral = (-lam * remaining).exp() * (-(-lam * dt).exp_m1()) / lam;
                    acc += c * ((l + 1) as f64 * PI * nodes[node]).sin() * integral;
                }
                out[k * n_omega + j] = -acc;
            }
        }
        out
    }
}

/// Random modal probes over the first `modes` sine modes, seeded.
pub fn random_probes(count: usize, modes: usize, seed: u64) -> Vec<ModalProbe> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| ModalProbe {
            coefficients: (0..modes).map(|_| StandardNormal.sample(&mut rng)).collect(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdjointCheckReport {
    pub config: HeatConfig,
    pub probes: usize,
    pub seed: u64,
    /// `max |⟨Av, w⟩ − ⟨v, Aᵀw⟩| / (‖A‖_F ‖v‖ ‖w‖)` over `A1, A2, B1, B2`.
    pub tier1_transpose_residual: f64,
    /// Backward θ-scheme adjoint versus the assembled transposes `Aᵀ`, `Bᵀ`
    /// (exact up to rounding for θ = 1/2).
    pub scheme_adjoint_deviation: f64,
    /// Assembled `A1ᵀ φᵀ` and `B1ᵀ φᵀ` versus the continuous adjoint solution
    /// for smooth probes, max relative deviation. The flow part is relative
    /// to `‖φᵀ‖` (an operator error, since `η(0)` can be tiny); the trace part
    /// is relative to the continuous trace.
    pub tier2_deviation: f64,
    pub tier2_flow_deviation: f64,
    pub tier2_observation_deviation: f64,
}

const PROBE_MODES: usize = 3;

pub fn adjoint_check(model: &HeatModel, probes: usize, seed: u64) -> Result<AdjointCheckReport> {
    let cfg = &model.config;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gaussian = |len: usize| DVector::from_fn(len, |_, _| StandardNormal.sample(&mut rng));

    let mut tier1: f64 = 0.0;
    for op in [&model.a1, &model.a2, &model.b1, &model.b2] {
        for _ in 0..probes.max(1) {
            let v = gaussian(op.cols());
            let w = gaussian(op.rows());
            let lhs = (op.matrix() * &v).dot(&w);
            let rhs = v.dot(&(op.matrix().transpose() * &w));
            let scale = op.matrix().norm() * v.norm() * w.norm();
            if scale > 0.0 {
                tier1 = tier1.max((lhs - rhs).abs() / scale);
            }
        }
    }

    let mut scheme: f64 = 0.0;
    for _ in 0..probes.max(1) {
        let phi_t = gaussian(cfg.n);
        let psi_t = gaussian(cfg.n);
        let adj = simulate_adjoint(model, &phi_t, &psi_t)?;
        let flow = model.a1.matrix().tr_mul(&phi_t) + model.a2.matrix().tr_mul(&psi_t);
        let obs = model.b1.matrix().tr_mul(&phi_t) + model.b2.matrix().tr_mul(&psi_t);
        scheme = scheme
            .max(relative(&adj.phi0, &flow))
            .max(relative(adj.trace.values(), &obs));
    }

    let mut flow_dev: f64 = 0.0;
    let mut obs_dev: f64 = 0.0;
    for probe in random_probes(probes, PROBE_MODES, seed ^ 0x9e37_79b9_7f4a_7c15) {
        let phi_t = probe.sample(cfg);
        let flow_err = (model.a1.matrix().tr_mul(&phi_t) - probe.backward_flow(cfg)).norm();
        flow_dev = flow_dev.max(flow_err / phi_t.norm());
        obs_dev = obs_dev.max(relative(&model.b1.matrix().tr_mul(&phi_t), &probe.observation(cfg)));
    }

    Ok(AdjointCheckReport {
        config: *cfg,
        probes,
        seed,
        tier1_transpose_residual: tier1,
        scheme_adjoint_deviation: scheme,
        tier2_deviation: flow_dev.max(obs_dev),
        tier2_flow_deviation: flow_dev,
        tier2_observation_deviation: obs_dev,
    })
}

fn relative(value: &DVector<f64>, reference: &DVector<f64>) -> f64 {
    let scale = reference.norm();
    let diff = (value - reference).norm();
    if scale > 0.0 {
        diff / scale
    } else {
        diff
    }
}

/// Relative terminal errors of `A1` and `A2` on the `k`-th sine mode against
/// `e^{−k²π²T}` and `T e^{−k²π²T}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ModeDecay {
    pub mode: usize,
    pub a1_error: f64,
    pub a2_error: f64,
}

pub fn mode_decay(model: &HeatModel, k: usize) -> ModeDecay {
    let s = model.sine_mode(k);
    let lam = (k as f64 * PI).powi(2);
    let t = model.config.t;
    let decay = (-lam * t).exp();
    let a1 = model.a1.matrix() * &s;
    let a2 = model.a2.matrix() * &s;
    ModeDecay {
        mode: k,
        a1_error: (a1 - &s * decay).norm() / s.norm(),
        a2_error: (a2 - &s * (t * decay)).norm() / s.norm(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceLevel {
    pub n: usize,
    pub m: usize,
    pub modes: Vec<ModeDecay>,
    pub tier2_deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub base: HeatConfig,
    pub levels: Vec<ConvergenceLevel>,
    /// `log2` of consecutive error ratios per mode for `A1`, level-major.
    pub a1_orders: Vec<Vec<f64>>,
    pub a2_orders: Vec<Vec<f64>>,
    pub tier2_ratios: Vec<f64>,
}

/// Mode-decay errors for modes `1..=modes` and the tier-2 adjoint deviation
/// on `levels` configurations, each doubling `n` and `m`.
pub fn convergence(
    base: HeatConfig,
    levels: usize,
    modes: usize,
    probes: usize,
    seed: u64,
) -> Result<ConvergenceReport> {
    if levels == 0 || modes == 0 {
        return Err(Error::InvalidInput("need at least one level and one mode".into()));
    }
    let rows = (0..levels)
        .map(|l| {
            let cfg = base.refined(1 << l);
            let model = assemble_model(cfg)?;
            let adj = adjoint_check(&model, probes, seed)?;
            Ok(ConvergenceLevel {
                n: cfg.n,
                m: cfg.m,
                modes: (1..=modes).map(|k| mode_decay(&model, k)).collect(),
                tier2_deviation: adj.tier2_deviation,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let orders = |pick: fn(&ModeDecay) -> f64| -> Vec<Vec<f64>> {
        rows.windows(2)
            .map(|w| {
                w[0].modes
                    .iter()
                    .zip(&w[1].modes)
                    .map(|(c, f)| (pick(c) / pick(f)).log2())
                    .collect()
            })
            .collect()
    };
    Ok(ConvergenceReport {
        base,
        a1_orders: orders(|d| d.a1_error),
        a2_orders: orders(|d| d.a2_error),
        tier2_ratios: rows
            .windows(2)
            .map(|w| w[0].tier2_deviation / w[1].tier2_deviation)
            .collect(),
        levels: rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SynthesisResult {
    #[serde(skip)]
    pub control: ControlField,
    /// Discrete `L²` norm of the resimulated `y(T)`.
    pub y_terminal_norm: f64,
    /// Discrete `L²` norm of the resimulated `z(T) − zᵀ`.
    pub z_error: f64,
    /// Discrete `L²((0,T) × ω)` norm of the control.
    pub control_norm: f64,
    pub epsilon: f64,
    /// Always true: the residuals above come from a fresh forward simulation.
    pub resimulated: bool,
    /// Residuals as reported by the constrained least-squares solve, in the
    /// Euclidean norm, kept for comparison only.
    pub solver_exact_residual: f64,
    pub solver_approx_residual: f64,
}

/// Control with `y(T) = 0` and `‖z(T) − zᵀ‖ ≤ ε` for the cascade started
/// at `(y0, z0)`.
///
/// Nonzero `z0` is absorbed into the target: the approximate block is
/// `‖A2 y0 − B2 h − (zᵀ − A3 z0)‖`. It is posed as a mixed problem on
/// `H1 = R^{N+1}` with data `(y0, 1)`, the extra column of the second block
/// carrying the shift `A3 z0 − zᵀ`.
pub fn synthesize_control(
    model: &HeatModel,
    y0: &DVector<f64>,
    z0: &DVector<f64>,
    z_target: &DVector<f64>,
    epsilon: f64,
    tol: &Tolerances,
) -> Result<SynthesisResult> {
    let n = model.n();
    check_len("synthesize_control (y0)", y0, n)?;
    check_len("synthesize_control (z0)", z0, n)?;
    check_len("synthesize_control (zT)", z_target, n)?;
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "epsilon must be positive and finite, got {epsilon}"
        )));
    }

    let shift = model.a3.matrix() * z0 - z_target;
    let mut a1 = DMatrix::zeros(n, n + 1);
    a1.columns_mut(0, n).copy_from(model.a1.matrix());
    let mut a2 = DMatrix::zeros(n, n + 1);
    a2.columns_mut(0, n).copy_from(model.a2.matrix());
    a2.set_column(n, &shift);
    let problem = MixedProblem::new(
        Operator::from_matrix(a1)?,
        Operator::from_matrix(a2)?,
        model.b1.clone(),
        model.b2.clone(),
        *tol,
    )?;
    let mut h1 = DVector::zeros(n + 1);
    h1.rows_mut(0, n).copy_from(y0);
    h1[n] = 1.0;

    let euclid_eps = epsilon / model.config.spacing().sqrt();
    let solve = mixed_solve(&problem, &h1, euclid_eps)?;
    let control = ControlField::from_vector(model.n_omega(), model.config.m, DVector::from_vec(solve.h2))?;

    let sim = simulate_forward(model, y0, z0, &control)?;
    let y_terminal_norm = model.l2_norm(&sim.y_terminal);
    let z_error = model.l2_norm(&(&sim.z_terminal - z_target));
    let y_threshold = tol.residual_rel * model.l2_norm(y0).max(1.0);
    if y_terminal_norm > y_threshold {
        return Err(Error::ToleranceFailure {
            what: "y_terminal_norm",
            value: y_terminal_norm,
            threshold: y_threshold,
        });
    }
    if z_error > epsilon {
        return Err(Error::EpsilonNotMet {
            achieved: z_error,
            requested: epsilon,
        });
    }
    Ok(SynthesisResult {
        control_norm: model.control_l2_norm(&control),
        control,
        y_terminal_norm,
        z_error,
        epsilon,
        resimulated: true,
        solver_exact_residual: solve.exact_residual,
        solver_approx_residual: solve.approx_residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn cfg(n: usize, m: usize, t: f64) -> HeatConfig {
        HeatConfig::new(n, m, t, (0.3, 0.8), 0.5).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(HeatConfig::new(0, 10, 1.0, (0.3, 0.8), 0.5).is_err());
        assert!(HeatConfig::new(10, 10, 0.0, (0.3, 0.8), 0.5).is_err());
        assert!(HeatConfig::new(10, 10, 1.0, (0.8, 0.3), 0.5).is_err());
        assert!(HeatConfig::new(10, 10, 1.0, (0.3, 0.8), 1.5).is_err());
        // N = 3 has nodes 0.25, 0.5, 0.75; (0.26, 0.49) holds none of them.
        let err = HeatConfig::new(3, 10, 1.0, (0.26, 0.49), 0.5).unwrap_err();
        assert!(err.to_string().contains("no interior grid node"));
        assert_eq!(cfg(30, 60, 0.5).omega_nodes().len(), 15);
    }

    #[test]
    fn laplacian_examples() {
        assert_eq!(assemble_laplacian(1).unwrap(), Operator::from_rows(&[&[-8.0]]).unwrap());
        let l3 = assemble_laplacian(3).unwrap();
        let expected = Operator::from_rows(&[&[-32.0, 16.0, 0.0], &[16.0, -32.0, 16.0], &[0.0, 16.0, -32.0]]).unwrap();
        assert_eq!(l3, expected);
        let eig = (-l3.matrix()).symmetric_eigen();
        let largest = eig.eigenvalues.max();
        // (4/h²) sin²(3πh/2) with h = 1/4
        let closed = 64.0 * (3.0 * PI / 8.0).sin().powi(2);
        assert_relative_eq!(largest, closed, max_relative = 1e-12);
        assert_relative_eq!(closed, 54.627, epsilon = 1e-3);
    }

    #[test]
    fn stepper_matches_dense_step() {
        let c = HeatConfig::new(7, 5, 0.3, (0.2, 0.6), 0.7).unwrap();
        let model = assemble_model(c).unwrap();
        let u = DVector::from_fn(7, |i, _| (i as f64 * 0.7).cos());
        let f = DVector::from_fn(7, |i, _| i as f64 - 2.0);
        let rhs = model.step_explicit.matrix() * &u + &f * c.dt();
        let dense = model.step_implicit.matrix().clone().lu().solve(&rhs).unwrap();
        let fast = model.stepper.step(&u, Some(&f));
        assert!((dense - fast).norm() < 1e-13);
    }

    #[test]
    fn zero_time_flow_is_identity() {
        let model = assemble_model(cfg(10, 1, 1e-12)).unwrap();
        let eye = DMatrix::<f64>::identity(10, 10);
        assert!((model.a1.matrix() - eye).amax() < 1e-9);
    }

    #[test]
    fn model_structure() {
        let model = assemble_model(cfg(12, 20, 0.2)).unwrap();
        let l = model.laplacian.matrix();
        assert_eq!(l, &l.transpose());
        assert!(l.clone().symmetric_eigen().eigenvalues.max() < 0.0);

        let a1 = model.a1.matrix();
        assert!((a1 - a1.transpose()).amax() < 1e-14);
        let eig = a1.clone().symmetric_eigen().eigenvalues;
        assert!(eig.min() > -1e-14 && eig.max() < 1.0);
        assert_eq!(model.a3, model.a1);
        assert_eq!((model.b1.rows(), model.b1.cols()), (12, model.control_dim()));
    }

    #[test]
    fn first_mode_decay_at_reference_config() {
        let model = assemble_model(cfg(30, 60, 0.1)).unwrap();
        let d = mode_decay(&model, 1);
        assert!(d.a1_error <= 5e-3, "{d:?}");
        assert!(d.a2_error <= 5e-3, "{d:?}");
        assert_relative_eq!((-PI * PI * 0.1f64).exp(), 0.372708, epsilon = 1e-6);
    }

    #[test]
    fn forward_simulation_matches_operators() {
        let model = assemble_model(cfg(10, 15, 0.2)).unwrap();
        let y0 = DVector::from_fn(10, |i, _| (i as f64).sin());
        let z0 = DVector::from_fn(10, |i, _| 0.1 * i as f64);
        let free = simulate_forward(&model, &y0, &DVector::zeros(10), &model.zero_control()).unwrap();
        assert!((free.y_terminal - model.a1.matrix() * &y0).norm() < 1e-13);
        assert!((free.z_terminal - model.a2.matrix() * &y0).norm() < 1e-13);

        let h = ControlField::from_vector(
            model.n_omega(),
            15,
            DVector::from_fn(model.control_dim(), |i, _| ((i * 7) % 11) as f64 - 5.0),
        )
        .unwrap();
        let forced = simulate_forward(&model, &DVector::zeros(10), &DVector::zeros(10), &h).unwrap();
        assert!((forced.y_terminal + model.b1.matrix() * h.values()).norm() < 1e-12);
        assert!((forced.z_terminal + model.b2.matrix() * h.values()).norm() < 1e-12);

        let all = simulate_forward(&model, &y0, &z0, &h).unwrap();
        let y = model.a1.matrix() * &y0 - model.b1.matrix() * h.values();
        let z = model.a2.matrix() * &y0 + model.a3.matrix() * &z0 - model.b2.matrix() * h.values();
        assert!((all.y_terminal - &y).norm() <= 1e-12 * y.norm());
        assert!((all.z_terminal - &z).norm() <= 1e-12 * z.norm());
        assert_eq!(all.y.levels.len(), 16);
        assert_eq!(all.y.rows().count(), 16 * 10);
    }

    #[test]
    fn simulate_rejects_wrong_shapes() {
        let model = assemble_model(cfg(10, 5, 0.2)).unwrap();
        let err = simulate_forward(&model, &DVector::zeros(9), &DVector::zeros(10), &model.zero_control());
        assert!(matches!(err, Err(Error::DimensionMismatch { .. })));
        let bad = ControlField::zeros(model.n_omega(), 4);
        assert!(simulate_forward(&model, &DVector::zeros(10), &DVector::zeros(10), &bad).is_err());
        assert!(simulate_adjoint(&model, &DVector::zeros(10), &DVector::zeros(3)).is_err());
    }

    #[test]
    fn adjoint_zero_data() {
        let model = assemble_model(cfg(10, 8, 0.2)).unwrap();
        let adj = simulate_adjoint(&model, &DVector::zeros(10), &DVector::zeros(10)).unwrap();
        assert_eq!(adj.phi0.amax(), 0.0);
        assert_eq!(adj.trace.values().amax(), 0.0);
    }

    #[test]
    fn adjoint_without_psi_is_scalar_backward_flow() {
        let model = assemble_model(cfg(30, 60, 0.1)).unwrap();
        let s = model.sine_mode(1);
        let adj = simulate_adjoint(&model, &s, &DVector::zeros(30)).unwrap();
        let eta = simulate_scalar_adjoint(&model, &s).unwrap();
        for (p, e) in adj.phi.levels.iter().zip(&eta.levels) {
            assert!((p - e).norm() <= 1e-12 * e.norm().max(1.0));
        }
        let expected = &s * (-PI * PI * 0.1).exp();
        assert!((adj.phi0 - &expected).norm() <= 5e-3 * expected.norm());
    }

    #[test]
    fn adjoint_duality_identity() {
        let model = assemble_model(cfg(20, 30, 0.2)).unwrap();
        let h = ControlField::from_vector(
            model.n_omega(),
            30,
            DVector::from_fn(model.control_dim(), |i, _| ((i * 13) % 7) as f64 - 3.0),
        )
        .unwrap();
        let phi_t = model.sine_mode(1) + model.sine_mode(4) * 0.3;
        let psi_t = model.sine_mode(2);
        let fwd = simulate_forward(&model, &DVector::zeros(20), &DVector::zeros(20), &h).unwrap();
        let adj = simulate_adjoint(&model, &phi_t, &psi_t).unwrap();
        let lhs = fwd.y_terminal.dot(&phi_t) + fwd.z_terminal.dot(&psi_t);
        // ⟨y(T), φᵀ⟩ + ⟨z(T), ψᵀ⟩ = Σ h ∫φ = −Σ h · trace
        let rhs = -h.values().dot(adj.trace.values());
        let scale = h.values().norm() * adj.trace.values().norm();
        assert!((lhs - rhs).abs() <= 5e-3 * scale, "{lhs} vs {rhs}");
    }

    #[test]
    fn adjoint_check_reference_config() {
        let model = assemble_model(cfg(30, 60, 0.1)).unwrap();
        let r = adjoint_check(&model, 20, 3).unwrap();
        assert!(r.tier1_transpose_residual <= 1e-13, "{r:?}");
        assert!(r.scheme_adjoint_deviation <= 1e-12, "{r:?}");
        assert!(r.tier2_deviation <= 1e-2, "{r:?}");
    }

    #[test]
    fn implicit_euler_preserves_positivity() {
        let c = HeatConfig::new(15, 20, 0.3, (0.2, 0.5), 1.0).unwrap();
        let model = assemble_model(c).unwrap();
        let h = ControlField::from_vector(
            model.n_omega(),
            20,
            DVector::from_fn(model.control_dim(), |i, _| (i % 3) as f64),
        )
        .unwrap();
        let y = -(model.b1.matrix() * h.values());
        assert!(y.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn trivial_synthesis_returns_zero_control() {
        let model = assemble_model(cfg(12, 20, 0.5)).unwrap();
        let zero = DVector::zeros(12);
        let r = synthesize_control(&model, &zero, &zero, &zero, 1e-3, &Tolerances::default()).unwrap();
        assert_eq!(r.control.values().amax(), 0.0);
        assert_eq!(r.y_terminal_norm, 0.0);
        assert_eq!(r.z_error, 0.0);
        assert!(r.resimulated);
    }

    #[test]
    fn modal_probe_reference_is_consistent() {
        let c = cfg(20, 40, 0.1);
        let p = ModalProbe {
            coefficients: vec![1.0, 0.0, -0.5],
        };
        let s = p.sample(&c);
        let expected = sine_mode(&c, 1) - sine_mode(&c, 3) * 0.5;
        assert!((s - expected).norm() < 1e-14);
        // Integrated observation over all steps equals the closed-form time integral.
        let obs = p.observation(&c);
        let n_omega = c.omega_nodes().len();
        let node = c.omega_nodes()[0];
        let x = c.nodes()[node];
        let total: f64 = (0..c.m).map(|k| obs[k * n_omega]).sum();
        let closed: f64 = -[(1.0, 1usize), (-0.5, 3)]
            .iter()
            .map(|&(a, l)| {
                let lam = (l as f64 * PI).powi(2);
                a * (l as f64 * PI * x).sin() * (1.0 - (-lam * 0.1).exp()) / lam
            })
            .sum::<f64>();
        assert_relative_eq!(total, closed, max_relative = 1e-12);
    }

    #[test]
    fn synthesis_reference_config() {
        let model = assemble_model(cfg(30, 60, 0.5)).unwrap();
        let y0 = model.sine_mode(1);
        let zero = DVector::zeros(30);
        let tol = Tolerances::default();
        let r = synthesize_control(&model, &y0, &zero, &zero, 1e-2, &tol).unwrap();
        assert!(r.y_terminal_norm <= 1e-8 * model.l2_norm(&y0), "{r:?}");
        assert!(r.z_error <= 1e-2, "{r:?}");

        let z0 = model.sine_mode(1);
        let z_target = model.a3.matrix() * &z0;
        let shifted = synthesize_control(&model, &y0, &z0, &z_target, 1e-2, &tol).unwrap();
        let diff = (shifted.control.values() - r.control.values()).norm();
        assert!(diff <= 1e-10 * r.control.values().norm().max(1.0), "{diff}");
    }
}
