//! Reconstruction engine: regularized output least-squares losses,
//! adjoint states, parameter gradients (exact discrete adjoint or the
//! Riesz-smoothed continuous form), ADAM training of the network
//! coefficient and a projected-gradient nodal FEM baseline.

use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::fem::{
    apply_dirichlet, assemble_load, assemble_mass, assemble_mass_filtered,
    assemble_stiffness_with_rule, AssemblyMode, CoefficientField, FeField, FeFunction, SOLVE_TOL,
};
use crate::forward::{ParabolicProblem, ParabolicSetup};
use crate::linalg::{solve_spd, solve_spd_warm, SparseMatrix};
use crate::mesh::{Mesh, Point};
use crate::neural::{project_box, BoxBounds, MlpParams, ProjectedNetwork};
use crate::quad::QuadratureRule;
use crate::scalar::Real;

/// Relative loss-change threshold and lookback window for early stop.
const STOP_REL: f64 = 1e-9;
const STOP_WINDOW: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradientMode {
    /// Exact gradient of the implemented discrete loss.
    DiscreteAdjoint,
    /// Nodal loss derivative smoothed through the H1 Riesz map.
    RieszSmoothed,
}

#[derive(Debug, Clone, Copy)]
pub struct InverseConfig<T> {
    pub gamma: T,
    pub bounds: BoxBounds<T>,
    /// Axis-aligned observation box; `None` observes all of the domain.
    /// Elements belong to the box iff their barycenter does.
    pub omega: Option<(Point<T>, Point<T>)>,
    pub grad_mode: GradientMode,
    pub mode: AssemblyMode,
    pub learning_rate: T,
    pub max_iters: usize,
    pub seed: u64,
}

/// The governing PDE of a reconstruction run. Parabolic observations
/// start at `t0` (the window is `[t0, t_final]`).
pub enum ProblemSpec<'a, T: Real> {
    Elliptic {
        f: &'a dyn CoefficientField<T>,
    },
    Parabolic {
        f: &'a (dyn Fn(T, &Point<T>) -> T + Sync),
        u0: &'a dyn CoefficientField<T>,
        t_final: T,
        n_steps: usize,
        t0: T,
    },
}

/// Observed data with its provenance (noise level, realized distance
/// to the exact states, generator seed).
pub struct ObservationSet<T> {
    pub data: ObservationData<T>,
    pub noise_rel: f64,
    pub delta: f64,
    pub seed: u64,
}

pub enum ObservationData<T> {
    Static(Vec<T>),
    /// Snapshots `z_n` for n = 0..=N; loss terms start at `n0`.
    TimeSeries { z: Vec<Vec<T>>, n0: usize },
}

#[derive(Debug, Clone, Copy)]
pub struct LossParts {
    pub total: f64,
    pub data_fit: f64,
    pub penalty: f64,
}

#[derive(Debug, Clone)]
pub struct ReconstructionResult<T> {
    pub network: Option<MlpParams<T>>,
    pub nodal: Option<FeFunction<T>>,
    /// Loss value at every iteration, index 0 being the initial point.
    pub loss_history: Vec<f64>,
    /// (iteration, relative error) samples, when the truth is known.
    pub error_history: Vec<(usize, f64)>,
    pub iterations: usize,
    pub wall_secs: f64,
}

/// Per-run immutable context: matrices, quadrature rule and load data
/// shared across every loss/gradient evaluation of a training run.
pub struct InverseWorkspace<'a, T: Real> {
    pub mesh: &'a Mesh<T>,
    pub cfg: &'a InverseConfig<T>,
    problem: &'a ProblemSpec<'a, T>,
    obs: &'a ObservationSet<T>,
    rule: QuadratureRule<T>,
    mass: SparseMatrix<T>,
    mass_obs: SparseMatrix<T>,
    boundary: Vec<bool>,
    /// Unit-coefficient stiffness without boundary conditions.
    stiff_unit: SparseMatrix<T>,
    /// H1 Riesz operator `M + A_1` (natural boundary conditions).
    smooth_op: SparseMatrix<T>,
    elliptic_load: Option<Vec<T>>,
    parabolic: Option<ParabolicSetup<T>>,
    n0: usize,
}

enum ForwardOut<T> {
    Ell {
        u: Vec<T>,
        system: SparseMatrix<T>,
    },
    Par {
        states: Vec<Vec<T>>,
        system: SparseMatrix<T>,
        tau: T,
    },
}

impl<'a, T: Real> InverseWorkspace<'a, T> {
    pub fn new(
        mesh: &'a Mesh<T>,
        problem: &'a ProblemSpec<'a, T>,
        cfg: &'a InverseConfig<T>,
        obs: &'a ObservationSet<T>,
    ) -> Result<Self> {
        if cfg.gamma < T::zero() {
            return Err(Error::config("gamma must be nonnegative"));
        }
        let rule = cfg.mode.rule(mesh);
        let mass = assemble_mass(mesh);
        let mass_obs = match cfg.omega {
            None => mass.clone(),
            Some((lo, hi)) => assemble_mass_filtered(mesh, |k| {
                let b = mesh.barycenter(k);
                (0..mesh.dim()).all(|d| b[d] >= lo[d] && b[d] <= hi[d])
            }),
        };
        let boundary: Vec<bool> = (0..mesh.node_count()).map(|i| mesh.is_boundary(i)).collect();
        let unit_rule = QuadratureRule::subsimplex(mesh, 0);
        let stiff_unit =
            assemble_stiffness_with_rule(mesh, &crate::fem::Constant(T::one()), &unit_rule);
        let smooth_op = mass.add_scaled(&stiff_unit, T::one());

        let mut elliptic_load = None;
        let mut parabolic = None;
        let mut n0 = 0usize;
        match problem {
            ProblemSpec::Elliptic { f } => {
                if !matches!(obs.data, ObservationData::Static(_)) {
                    return Err(Error::config("elliptic problem needs static observations"));
                }
                elliptic_load = Some(assemble_load(mesh, *f));
            }
            ProblemSpec::Parabolic {
                f,
                u0,
                t_final,
                n_steps,
                t0,
            } => {
                let setup = ParabolicSetup::build(&ParabolicProblem {
                    mesh,
                    q: &crate::fem::Constant(T::one()),
                    f: *f,
                    u0: *u0,
                    t_final: *t_final,
                    n_steps: *n_steps,
                    mode: cfg.mode,
                })?;
                let tau = setup.tau;
                let frac = (*t0 / tau).as_f64();
                n0 = frac.round() as usize;
                if (frac - n0 as f64).abs() > 1e-9 {
                    return Err(Error::config("t0 must be a multiple of tau"));
                }
                match &obs.data {
                    ObservationData::TimeSeries { z, n0: obs_n0 } => {
                        if z.len() != n_steps + 1 {
                            return Err(Error::config(format!(
                                "observation series has {} snapshots, expected {}",
                                z.len(),
                                n_steps + 1
                            )));
                        }
                        if *obs_n0 != n0 {
                            return Err(Error::config("observation window start mismatch"));
                        }
                    }
                    _ => return Err(Error::config("parabolic problem needs a time series")),
                }
                parabolic = Some(setup);
            }
        }
        Ok(InverseWorkspace {
            mesh,
            cfg,
            problem,
            obs,
            rule,
            mass,
            mass_obs,
            boundary,
            stiff_unit,
            smooth_op,
            elliptic_load,
            parabolic,
            n0,
        })
    }

    pub fn rule(&self) -> &QuadratureRule<T> {
        &self.rule
    }

    pub fn mass(&self) -> &SparseMatrix<T> {
        &self.mass
    }

    pub fn observation_mass(&self) -> &SparseMatrix<T> {
        &self.mass_obs
    }

    /// Number of loss terms in the parabolic observation window.
    pub fn window_len(&self) -> usize {
        match self.problem {
            ProblemSpec::Elliptic { .. } => 1,
            ProblemSpec::Parabolic { n_steps, .. } => n_steps - self.n0 + 1,
        }
    }

    fn run_forward(&self, q: &dyn CoefficientField<T>) -> Result<ForwardOut<T>> {
        let a = assemble_stiffness_with_rule(self.mesh, q, &self.rule);
        match self.problem {
            ProblemSpec::Elliptic { .. } => {
                let load = self.elliptic_load.as_ref().unwrap();
                let (a_bc, b_bc) = apply_dirichlet(&a, load, self.mesh);
                let u = solve_spd(&a_bc, &b_bc, T::of(SOLVE_TOL))?;
                Ok(ForwardOut::Ell { u, system: a_bc })
            }
            ProblemSpec::Parabolic { .. } => {
                let setup = self.parabolic.as_ref().unwrap();
                let sol = crate::forward::solve_parabolic_assembled(self.mesh, &a, setup)?;
                Ok(ForwardOut::Par {
                    states: sol.states,
                    system: sol.system,
                    tau: sol.tau,
                })
            }
        }
    }

    fn data_fit(&self, fwd: &ForwardOut<T>) -> T {
        let half = T::of(0.5);
        match fwd {
            ForwardOut::Ell { u, .. } => {
                let z = match &self.obs.data {
                    ObservationData::Static(z) => z,
                    _ => unreachable!(),
                };
                let d: Vec<T> = u.iter().zip(z).map(|(&a, &b)| a - b).collect();
                half * crate::fem::quadratic_form(&self.mass_obs, &d)
            }
            ForwardOut::Par { states, tau, .. } => {
                let z = match &self.obs.data {
                    ObservationData::TimeSeries { z, .. } => z,
                    _ => unreachable!(),
                };
                let mut s = T::zero();
                for n in self.n0..states.len() {
                    let d: Vec<T> =
                        states[n].iter().zip(&z[n]).map(|(&a, &b)| a - b).collect();
                    s += crate::fem::quadratic_form(&self.mass_obs, &d);
                }
                half * *tau * s
            }
        }
    }

    /// Per-element stiffness sensitivity `D_K`: the data-fit derivative
    /// with respect to the element's integrated coefficient. Elliptic:
    /// `grad u . grad v`; parabolic: `sum_n tau grad U^n . grad W^{n-1}`.
    fn element_sensitivities(&self, fwd: &ForwardOut<T>) -> Result<Vec<T>> {
        let ne = self.mesh.element_count();
        let mut d = vec![T::zero(); ne];
        match fwd {
            ForwardOut::Ell { u, system } => {
                let z = match &self.obs.data {
                    ObservationData::Static(z) => z,
                    _ => unreachable!(),
                };
                let v = adjoint_elliptic(system, &self.mass_obs, &self.boundary, u, z)?;
                let uf = FeFunction { values: u.clone() };
                let vf = FeFunction { values: v };
                for k in 0..ne {
                    let gu = uf.element_gradient(self.mesh, k);
                    let gv = vf.element_gradient(self.mesh, k);
                    d[k] = gu[0] * gv[0] + gu[1] * gv[1];
                }
            }
            ForwardOut::Par {
                states,
                system,
                tau,
            } => {
                let z = match &self.obs.data {
                    ObservationData::TimeSeries { z, .. } => z,
                    _ => unreachable!(),
                };
                let w = adjoint_parabolic(
                    system,
                    &self.mass,
                    &self.mass_obs,
                    &self.boundary,
                    states,
                    z,
                    self.n0,
                    *tau,
                )?;
                let n_steps = states.len() - 1;
                for n in 1..=n_steps {
                    let un = FeFunction {
                        values: states[n].clone(),
                    };
                    let wn = FeFunction {
                        values: w[n - 1].clone(),
                    };
                    for k in 0..ne {
                        let gu = un.element_gradient(self.mesh, k);
                        let gw = wn.element_gradient(self.mesh, k);
                        d[k] += *tau * (gu[0] * gw[0] + gu[1] * gw[1]);
                    }
                }
            }
        }
        Ok(d)
    }

    /// Loss of a network iterate: data fit of the projected coefficient
    /// plus the quadrature penalty on the unprojected network.
    pub fn loss_network(&self, params: &MlpParams<T>) -> Result<LossParts> {
        let field = ProjectedNetwork {
            params,
            bounds: self.cfg.bounds,
        };
        let fwd = self.run_forward(&field)?;
        Ok(self.finish_loss(self.data_fit(&fwd), self.network_penalty(params)))
    }

    fn network_penalty(&self, params: &MlpParams<T>) -> T {
        let half = T::of(0.5);
        half * self.cfg.gamma
            * self.rule.integrate(|_, x| {
                let g = params.input_gradient(x);
                g[0] * g[0] + g[1] * g[1]
            })
    }

    fn finish_loss(&self, data_fit: T, penalty: T) -> LossParts {
        LossParts {
            total: (data_fit + penalty).as_f64(),
            data_fit: data_fit.as_f64(),
            penalty: penalty.as_f64(),
        }
    }

    /// Loss plus its parameter gradient in the configured mode.
    pub fn loss_and_gradient_network(
        &self,
        params: &MlpParams<T>,
    ) -> Result<(LossParts, Vec<T>)> {
        let field = ProjectedNetwork {
            params,
            bounds: self.cfg.bounds,
        };
        let fwd = self.run_forward(&field)?;
        let parts = self.finish_loss(self.data_fit(&fwd), self.network_penalty(params));
        let d = self.element_sensitivities(&fwd)?;
        let grad = match self.cfg.grad_mode {
            GradientMode::DiscreteAdjoint => self.gradient_discrete(params, &d),
            GradientMode::RieszSmoothed => self.gradient_riesz(params, &d)?,
        };
        Ok((parts, grad))
    }

    fn gradient_discrete(&self, params: &MlpParams<T>, d: &[T]) -> Vec<T> {
        let mut grad = vec![T::zero(); params.param_count()];
        let gamma = self.cfg.gamma;
        for k in 0..self.mesh.element_count() {
            let (pts, ws) = self.rule.points_of(k);
            for (p, &w) in pts.iter().zip(ws) {
                let (val, gq) = params.forward_with_gradient(p);
                let (_, active) = project_box(val, self.cfg.bounds);
                let sv = if active { w * d[k] } else { T::zero() };
                let sg = [gamma * w * gq[0], gamma * w * gq[1]];
                params.param_vjp(p, sv, sg, &mut grad);
            }
        }
        grad
    }

    /// The continuous-form gradient: assemble the weak loss derivative
    /// as a nodal load, pull it through the H1 Riesz map, then pair the
    /// representative with the network sensitivities in H1.
    fn gradient_riesz(&self, params: &MlpParams<T>, d: &[T]) -> Result<Vec<T>> {
        let g_repr = self.riesz_representative(params, d)?;
        let gf = FeFunction { values: g_repr };
        let mut grad = vec![T::zero(); params.param_count()];
        for k in 0..self.mesh.element_count() {
            let gg = gf.element_gradient(self.mesh, k);
            let (pts, ws) = self.rule.points_of(k);
            for (p, &w) in pts.iter().zip(ws) {
                let gval = gf.eval(self.mesh, k, p);
                params.param_vjp(p, w * gval, [w * gg[0], w * gg[1]], &mut grad);
            }
        }
        Ok(grad)
    }

    /// Nodal load `r_i = (D, phi_i) + gamma (grad q, grad phi_i)` and the
    /// solve `(M + A_1) G = r` with natural boundary conditions.
    fn riesz_representative(&self, params: &MlpParams<T>, d: &[T]) -> Result<Vec<T>> {
        let nv = self.mesh.dim() + 1;
        let mut r = vec![T::zero(); self.mesh.node_count()];
        let gamma = self.cfg.gamma;
        for k in 0..self.mesh.element_count() {
            let e = self.mesh.element(k);
            let phi_int = self.mesh.element_measure(k) / T::of(nv as f64);
            let grads = self.mesh.basis_gradients(k);
            for &v in e {
                r[v] += d[k] * phi_int;
            }
            let (pts, ws) = self.rule.points_of(k);
            for (p, &w) in pts.iter().zip(ws) {
                let gq = params.input_gradient(p);
                for (i, &v) in e.iter().enumerate() {
                    r[v] += gamma * w * (gq[0] * grads[i][0] + gq[1] * grads[i][1]);
                }
            }
        }
        solve_spd(&self.smooth_op, &r, T::of(SOLVE_TOL))
    }

    /// Loss of a nodal baseline iterate (values assumed inside the box;
    /// the optimizer clips after every step). The penalty is the exact
    /// P1 Dirichlet energy.
    pub fn loss_nodal(&self, q: &[T]) -> Result<LossParts> {
        let field = FeField {
            mesh: self.mesh,
            values: q,
        };
        let fwd = self.run_forward(&field)?;
        let half = T::of(0.5);
        let penalty = half * self.cfg.gamma * crate::fem::quadratic_form(&self.stiff_unit, q);
        Ok(self.finish_loss(self.data_fit(&fwd), penalty))
    }

    /// Riesz-smoothed descent direction for the nodal baseline: the
    /// nodal loss derivative pulled through `(M + A_1)^{-1}`.
    pub fn nodal_gradient(&self, q: &[T]) -> Result<(LossParts, Vec<T>)> {
        let field = FeField {
            mesh: self.mesh,
            values: q,
        };
        let fwd = self.run_forward(&field)?;
        let half = T::of(0.5);
        let penalty = half * self.cfg.gamma * crate::fem::quadratic_form(&self.stiff_unit, q);
        let parts = self.finish_loss(self.data_fit(&fwd), penalty);
        let d = self.element_sensitivities(&fwd)?;

        let nv = self.mesh.dim() + 1;
        let mut r = self.stiff_unit.matvec(q);
        for ri in r.iter_mut() {
            *ri *= self.cfg.gamma;
        }
        for k in 0..self.mesh.element_count() {
            let phi_int = self.mesh.element_measure(k) / T::of(nv as f64);
            for &v in self.mesh.element(k) {
                r[v] += d[k] * phi_int;
            }
        }
        let g = solve_spd(&self.smooth_op, &r, T::of(SOLVE_TOL))?;
        Ok((parts, g))
    }

    /// Relative L2 error of the projected network against a reference.
    pub fn relative_error_network(
        &self,
        params: &MlpParams<T>,
        q_true: &dyn CoefficientField<T>,
    ) -> f64 {
        let rule = QuadratureRule::reference(self.mesh);
        let num = rule.integrate(|k, x| {
            let (qv, _) = project_box(params.forward(x), self.cfg.bounds);
            let d = q_true.value(k, x) - qv;
            d * d
        });
        let den = rule.integrate(|k, x| {
            let t = q_true.value(k, x);
            t * t
        });
        (num.as_f64() / den.as_f64()).sqrt()
    }

    /// Relative L2 error of a nodal coefficient against a reference.
    pub fn relative_error_nodal(&self, q: &[T], q_true: &dyn CoefficientField<T>) -> f64 {
        let field = FeField {
            mesh: self.mesh,
            values: q,
        };
        let rule = QuadratureRule::reference(self.mesh);
        let num = rule.integrate(|k, x| {
            let d = q_true.value(k, x) - field.value(k, x);
            d * d
        });
        let den = rule.integrate(|k, x| {
            let t = q_true.value(k, x);
            t * t
        });
        (num.as_f64() / den.as_f64()).sqrt()
    }
}

/// Discrete adjoint of the elliptic data fit: `A v = M_w (z - u)` with
/// zero boundary values (the system matrix is its own adjoint).
pub fn adjoint_elliptic<T: Real>(
    system: &SparseMatrix<T>,
    mass_obs: &SparseMatrix<T>,
    boundary: &[bool],
    u: &[T],
    z: &[T],
) -> Result<Vec<T>> {
    let d: Vec<T> = z.iter().zip(u).map(|(&a, &b)| a - b).collect();
    let mut rhs = mass_obs.matvec(&d);
    for (r, &b) in rhs.iter_mut().zip(boundary) {
        if b {
            *r = T::zero();
        }
    }
    solve_spd(system, &rhs, T::of(SOLVE_TOL))
}

/// Backward adjoint marching: `W^N = 0` and, stepping n = N..1,
/// `(M + tau A) W^{n-1} = M W^n + tau M_w (z_n - U^n) 1{n >= n0}`.
/// Returns `W^0..W^N`.
#[allow(clippy::too_many_arguments)]
pub fn adjoint_parabolic<T: Real>(
    system: &SparseMatrix<T>,
    mass: &SparseMatrix<T>,
    mass_obs: &SparseMatrix<T>,
    boundary: &[bool],
    states: &[Vec<T>],
    z: &[Vec<T>],
    n0: usize,
    tau: T,
) -> Result<Vec<Vec<T>>> {
    let n_steps = states.len() - 1;
    let n_nodes = states[0].len();
    let tol = T::of(SOLVE_TOL);
    let mut w = vec![Vec::new(); n_steps + 1];
    w[n_steps] = vec![T::zero(); n_nodes];
    let mut rhs = vec![T::zero(); n_nodes];
    for n in (1..=n_steps).rev() {
        mass.matvec_into(&w[n], &mut rhs);
        if n >= n0 {
            let d: Vec<T> = z[n].iter().zip(&states[n]).map(|(&a, &b)| a - b).collect();
            let md = mass_obs.matvec(&d);
            for (r, m) in rhs.iter_mut().zip(&md) {
                *r += tau * *m;
            }
        }
        for (r, &b) in rhs.iter_mut().zip(boundary) {
            if b {
                *r = T::zero();
            }
        }
        let guess = w[n].clone();
        w[n - 1] = solve_spd_warm(system, &rhs, tol, guess)?;
    }
    Ok(w)
}

// The log deliberately carries no wall-clock column: rerunning with
// the same config and seed must reproduce the file byte for byte.
fn maybe_log(
    log: &mut Option<std::io::BufWriter<std::fs::File>>,
    iter: usize,
    parts: &LossParts,
    rel: Option<f64>,
) -> Result<()> {
    if let Some(f) = log {
        let rel_s = rel.map(|r| format!("{r:.8e}")).unwrap_or_default();
        writeln!(
            f,
            "{},{:.12e},{:.12e},{:.12e},{}",
            iter, parts.total, parts.data_fit, parts.penalty, rel_s
        )?;
    }
    Ok(())
}

fn open_log(path: Option<&Path>) -> Result<Option<std::io::BufWriter<std::fs::File>>> {
    match path {
        None => Ok(None),
        Some(p) => {
            let mut f = std::io::BufWriter::new(std::fs::File::create(p)?);
            writeln!(f, "iteration,loss,data_fit,penalty,relative_error")?;
            Ok(Some(f))
        }
    }
}

fn stopped(history: &[f64]) -> bool {
    let i = history.len();
    if i <= STOP_WINDOW {
        return false;
    }
    let cur = history[i - 1];
    let prev = history[i - 1 - STOP_WINDOW];
    (prev - cur).abs() <= STOP_REL * cur.abs().max(1e-300)
}

/// ADAM minimization of the network loss.
pub fn train<T: Real>(
    ws: &InverseWorkspace<T>,
    init: &MlpParams<T>,
    q_true: Option<&dyn CoefficientField<T>>,
    log_path: Option<&Path>,
) -> Result<ReconstructionResult<T>> {
    let start = Instant::now();
    let mut log = open_log(log_path)?;
    let mut params = init.clone();
    let mut theta = params.flatten();
    let np = theta.len();
    let mut m = vec![T::zero(); np];
    let mut v = vec![T::zero(); np];
    let (b1, b2, eps) = (T::of(0.9), T::of(0.999), T::of(1e-8));
    let lr = ws.cfg.learning_rate;

    let mut loss_history = Vec::with_capacity(ws.cfg.max_iters + 1);
    let mut error_history = Vec::new();

    let record_err = |it: usize, params: &MlpParams<T>, hist: &mut Vec<(usize, f64)>| {
        if let Some(qt) = q_true {
            hist.push((it, ws.relative_error_network(params, qt)));
        }
    };

    let mut iter = 0usize;
    loop {
        let do_grad = iter < ws.cfg.max_iters;
        let (parts, grad) = if do_grad {
            ws.loss_and_gradient_network(&params)?
        } else {
            (ws.loss_network(&params)?, Vec::new())
        };
        if !parts.total.is_finite() {
            return Err(Error::Divergence {
                iteration: iter,
                message: format!("loss is not finite: {}", parts.total),
            });
        }
        loss_history.push(parts.total);
        let rel = if iter % 100 == 0 || !do_grad {
            record_err(iter, &params, &mut error_history);
            error_history.last().map(|&(_, e)| e)
        } else {
            None
        };
        maybe_log(&mut log, iter, &parts, rel)?;
        if !do_grad || stopped(&loss_history) {
            break;
        }

        iter += 1;
        let t = T::of(iter as f64);
        let bc1 = T::one() - b1.powf(t);
        let bc2 = T::one() - b2.powf(t);
        for i in 0..np {
            m[i] = b1 * m[i] + (T::one() - b1) * grad[i];
            v[i] = b2 * v[i] + (T::one() - b2) * grad[i] * grad[i];
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            theta[i] -= lr * mhat / (vhat.sqrt() + eps);
        }
        params.assign_from_flat(&theta);
    }
    if let Some(f) = log.as_mut() {
        f.flush()?;
    }
    Ok(ReconstructionResult {
        network: Some(params),
        nodal: None,
        loss_history,
        error_history,
        iterations: iter,
        wall_secs: start.elapsed().as_secs_f64(),
    })
}

/// Projected gradient descent on a nodal P1 coefficient: each step
/// moves along the Riesz-smoothed gradient, clips nodal values into the
/// box, and halves the step until the loss decreases.
pub fn train_baseline_fem<T: Real>(
    ws: &InverseWorkspace<T>,
    init: &FeFunction<T>,
    q_true: Option<&dyn CoefficientField<T>>,
    log_path: Option<&Path>,
) -> Result<ReconstructionResult<T>> {
    let start = Instant::now();
    let mut log = open_log(log_path)?;
    let bounds = ws.cfg.bounds;
    let clip = |vals: &mut Vec<T>| {
        for v in vals.iter_mut() {
            *v = project_box(*v, bounds).0;
        }
    };
    let mut q = init.values.clone();
    clip(&mut q);
    let step0 = ws.cfg.learning_rate;
    let mut step = step0;

    let mut loss_history = Vec::with_capacity(ws.cfg.max_iters + 1);
    let mut error_history = Vec::new();
    let mut iter = 0usize;
    let (mut parts, mut grad) = {
        let (p, g) = ws.nodal_gradient(&q)?;
        (p, g)
    };
    loop {
        if !parts.total.is_finite() {
            return Err(Error::Divergence {
                iteration: iter,
                message: format!("loss is not finite: {}", parts.total),
            });
        }
        loss_history.push(parts.total);
        let rel = if iter % 100 == 0 || iter == ws.cfg.max_iters {
            if let Some(qt) = q_true {
                error_history.push((iter, ws.relative_error_nodal(&q, qt)));
            }
            error_history.last().map(|&(_, e)| e)
        } else {
            None
        };
        maybe_log(&mut log, iter, &parts, rel)?;
        if iter >= ws.cfg.max_iters || stopped(&loss_history) {
            break;
        }

        // Backtracking line search along the smoothed direction.
        step = (step * T::of(2.0)).min(step0);
        let mut accepted = false;
        for _ in 0..30 {
            let mut trial: Vec<T> = q.iter().zip(&grad).map(|(&a, &g)| a - step * g).collect();
            clip(&mut trial);
            let (tp, tg) = ws.nodal_gradient(&trial)?;
            if tp.total <= parts.total {
                q = trial;
                parts = tp;
                grad = tg;
                accepted = true;
                break;
            }
            step *= T::of(0.5);
        }
        iter += 1;
        if !accepted {
            // No decrease at the smallest step: converged.
            loss_history.push(parts.total);
            break;
        }
    }
    if let Some(f) = log.as_mut() {
        f.flush()?;
    }
    Ok(ReconstructionResult {
        network: None,
        nodal: Some(FeFunction { values: q }),
        loss_history,
        error_history,
        iterations: iter,
        wall_secs: start.elapsed().as_secs_f64(),
    })
}
