//! Discrete forward maps: the elliptic solve and backward-Euler
//! parabolic marching, both with Dirichlet elimination and either exact
//! or sub-simplex quadrature assembly of the coefficient terms.

use crate::error::{Error, Result};
use crate::fem::{
    apply_dirichlet, assemble_load, assemble_mass, assemble_stiffness_with_rule,
    AssemblyMode, CoefficientField, FeFunction, SOLVE_TOL,
};
use crate::linalg::{solve_spd, solve_spd_warm, SparseMatrix};
use crate::mesh::{Mesh, Point};
use crate::scalar::Real;

pub struct EllipticProblem<'a, T: Real> {
    pub mesh: &'a Mesh<T>,
    pub q: &'a dyn CoefficientField<T>,
    pub f: &'a dyn CoefficientField<T>,
    pub mode: AssemblyMode,
}

/// State plus the Dirichlet-eliminated stiffness matrix; the adjoint
/// solve reuses the matrix (the operator is self-adjoint).
pub struct EllipticSolution<T> {
    pub u: FeFunction<T>,
    pub system: SparseMatrix<T>,
}

/// Solve `(q grad u, grad phi) = (f, phi)` with zero boundary values.
pub fn solve_elliptic<T: Real>(p: &EllipticProblem<T>) -> Result<FeFunction<T>> {
    let load = assemble_load(p.mesh, p.f);
    Ok(solve_elliptic_assembled(p.mesh, p.q, &load, p.mode)?.u)
}

/// Same solve from a preassembled load vector.
pub fn solve_elliptic_assembled<T: Real>(
    mesh: &Mesh<T>,
    q: &dyn CoefficientField<T>,
    load: &[T],
    mode: AssemblyMode,
) -> Result<EllipticSolution<T>> {
    let rule = mode.rule(mesh);
    let a = assemble_stiffness_with_rule(mesh, q, &rule);
    let (a_bc, b_bc) = apply_dirichlet(&a, load, mesh);
    let values = solve_spd(&a_bc, &b_bc, T::of(SOLVE_TOL))?;
    Ok(EllipticSolution {
        u: FeFunction { values },
        system: a_bc,
    })
}

pub struct ParabolicProblem<'a, T: Real> {
    pub mesh: &'a Mesh<T>,
    pub q: &'a dyn CoefficientField<T>,
    /// Source `f(t, x)`, evaluated at the right endpoint of each step.
    pub f: &'a (dyn Fn(T, &Point<T>) -> T + Sync),
    pub u0: &'a dyn CoefficientField<T>,
    pub t_final: T,
    pub n_steps: usize,
    pub mode: AssemblyMode,
}

impl<T: Real> ParabolicProblem<'_, T> {
    pub fn tau(&self) -> T {
        self.t_final / T::of(self.n_steps as f64)
    }
}

/// Coefficient-independent data of a parabolic run: the mass matrix,
/// the load vectors of every step and the projected initial state.
/// Training builds this once and reruns the marching per iterate.
pub struct ParabolicSetup<T> {
    pub mass: SparseMatrix<T>,
    /// `loads[n - 1]` is the load vector of `f(t_n)`, n = 1..=N.
    pub loads: Vec<Vec<T>>,
    /// L2 projection of `u0` onto the zero-boundary P1 space.
    pub initial: Vec<T>,
    pub tau: T,
    pub n_steps: usize,
}

impl<T: Real> ParabolicSetup<T> {
    pub fn build(p: &ParabolicProblem<T>) -> Result<Self> {
        if p.n_steps == 0 {
            return Err(Error::invalid("parabolic problem needs n_steps >= 1"));
        }
        let mass = assemble_mass(p.mesh);
        let tau = p.tau();
        let b0 = assemble_load(p.mesh, p.u0);
        let (m_bc, b0_bc) = apply_dirichlet(&mass, &b0, p.mesh);
        let initial = solve_spd(&m_bc, &b0_bc, T::of(SOLVE_TOL))?;
        let mut loads = Vec::with_capacity(p.n_steps);
        for n in 1..=p.n_steps {
            let t = tau * T::of(n as f64);
            let fld = crate::fem::AnalyticField::new(move |x: &Point<T>| (p.f)(t, x));
            loads.push(assemble_load(p.mesh, &fld));
        }
        Ok(ParabolicSetup {
            mass,
            loads,
            initial,
            tau,
            n_steps: p.n_steps,
        })
    }
}

/// Forward states `U^0..U^N` plus the Dirichlet-eliminated step matrix
/// `M + tau A`, reused by the backward adjoint marching.
pub struct ParabolicStates<T> {
    pub states: Vec<Vec<T>>,
    pub system: SparseMatrix<T>,
    pub tau: T,
}

pub fn solve_parabolic<T: Real>(p: &ParabolicProblem<T>) -> Result<ParabolicStates<T>> {
    let setup = ParabolicSetup::build(p)?;
    let rule = p.mode.rule(p.mesh);
    let a = assemble_stiffness_with_rule(p.mesh, p.q, &rule);
    solve_parabolic_assembled(p.mesh, &a, &setup)
}

/// Backward-Euler marching `(M + tau A) U^n = M U^{n-1} + tau b(t_n)`
/// from a preassembled stiffness matrix; each CG solve warm-starts from
/// the previous state.
pub fn solve_parabolic_assembled<T: Real>(
    mesh: &Mesh<T>,
    stiffness: &SparseMatrix<T>,
    setup: &ParabolicSetup<T>,
) -> Result<ParabolicStates<T>> {
    let n_nodes = mesh.node_count();
    let s = setup.mass.add_scaled(stiffness, setup.tau);
    let eliminate: Vec<bool> = (0..n_nodes).map(|i| mesh.is_boundary(i)).collect();
    let s_bc = s.eliminate_symmetric(&eliminate);
    let tol = T::of(SOLVE_TOL);

    let mut states = Vec::with_capacity(setup.n_steps + 1);
    states.push(setup.initial.clone());
    let mut rhs = vec![T::zero(); n_nodes];
    for n in 1..=setup.n_steps {
        setup.mass.matvec_into(&states[n - 1], &mut rhs);
        for (r, b) in rhs.iter_mut().zip(&setup.loads[n - 1]) {
            *r += setup.tau * *b;
        }
        for (r, &e) in rhs.iter_mut().zip(&eliminate) {
            if e {
                *r = T::zero();
            }
        }
        let guess = states[n - 1].clone();
        let u = solve_spd_warm(&s_bc, &rhs, tol, guess).map_err(|e| match e {
            Error::SolverFailure {
                context,
                residual,
                iterations,
            } => Error::SolverFailure {
                context: format!("time step {n}: {context}"),
                residual,
                iterations,
            },
            other => other,
        })?;
        states.push(u);
    }
    Ok(ParabolicStates {
        states,
        system: s_bc,
        tau: setup.tau,
    })
}

/// Time average of stored snapshot data over step `n`, i.e. over
/// `[t_{n-1}, t_n]`: the trapezoid average of the two endpoints. A
/// single-snapshot series degenerates to that snapshot.
pub fn observation_average<T: Real>(z: &[Vec<T>], n: usize) -> Result<Vec<T>> {
    if z.is_empty() {
        return Err(Error::invalid("empty observation series"));
    }
    if z.len() == 1 {
        return Ok(z[0].clone());
    }
    if n == 0 || n >= z.len() {
        return Err(Error::invalid(format!(
            "step {n} outside observation window 1..={}",
            z.len() - 1
        )));
    }
    let half = T::of(0.5);
    Ok(z[n - 1]
        .iter()
        .zip(&z[n])
        .map(|(&a, &b)| half * (a + b))
        .collect())
}
