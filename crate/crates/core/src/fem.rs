//! P1 finite element space on a structured mesh: coefficient fields,
//! mass/stiffness/load assembly, the L2 projection, Dirichlet
//! elimination and inter-mesh transfer.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::{solve_spd, SparseMatrix, TripletBuffer};
use crate::mesh::{nested_node_map, Mesh, Point};
use crate::quad::QuadratureRule;
use crate::scalar::Real;

/// Default relative residual tolerance for all SPD solves.
pub const SOLVE_TOL: f64 = 1e-10;

/// A pointwise-evaluable coefficient as seen by assembly. Evaluation
/// receives the element index so nodal FE coefficients avoid point
/// location; globally defined fields may ignore it.
pub trait CoefficientField<T: Real>: Sync {
    fn value(&self, elem: usize, x: &Point<T>) -> T;

    /// Spatial gradient, if the field provides one.
    fn gradient(&self, _elem: usize, _x: &Point<T>) -> Option<[T; 2]> {
        None
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Constant<T>(pub T);

impl<T: Real> CoefficientField<T> for Constant<T> {
    fn value(&self, _elem: usize, _x: &Point<T>) -> T {
        self.0
    }

    fn gradient(&self, _elem: usize, _x: &Point<T>) -> Option<[T; 2]> {
        Some([T::zero(), T::zero()])
    }
}

/// Coefficient defined by closures.
pub struct AnalyticField<'a, T> {
    f: Box<dyn Fn(&Point<T>) -> T + Sync + 'a>,
    grad: Option<Box<dyn Fn(&Point<T>) -> [T; 2] + Sync + 'a>>,
}

impl<'a, T: Real> AnalyticField<'a, T> {
    pub fn new(f: impl Fn(&Point<T>) -> T + Sync + 'a) -> Self {
        AnalyticField {
            f: Box::new(f),
            grad: None,
        }
    }

    pub fn with_gradient(mut self, g: impl Fn(&Point<T>) -> [T; 2] + Sync + 'a) -> Self {
        self.grad = Some(Box::new(g));
        self
    }
}

impl<T: Real> CoefficientField<T> for AnalyticField<'_, T> {
    fn value(&self, _elem: usize, x: &Point<T>) -> T {
        (self.f)(x)
    }

    fn gradient(&self, _elem: usize, x: &Point<T>) -> Option<[T; 2]> {
        self.grad.as_ref().map(|g| g(x))
    }
}

/// Nodal coefficient vector representing a P1 function on a mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct FeFunction<T> {
    pub values: Vec<T>,
}

impl<T: Real> FeFunction<T> {
    pub fn zeros(n: usize) -> Self {
        FeFunction {
            values: vec![T::zero(); n],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Constant P1 gradient on element `k`.
    pub fn element_gradient(&self, mesh: &Mesh<T>, k: usize) -> [T; 2] {
        let grads = mesh.basis_gradients(k);
        let mut g = [T::zero(); 2];
        for (i, &v) in mesh.element(k).iter().enumerate() {
            g[0] += self.values[v] * grads[i][0];
            g[1] += self.values[v] * grads[i][1];
        }
        g
    }

    pub fn eval(&self, mesh: &Mesh<T>, k: usize, x: &Point<T>) -> T {
        let lam = mesh.barycentric(k, x);
        let mut s = T::zero();
        for (i, &v) in mesh.element(k).iter().enumerate() {
            s += lam[i] * self.values[v];
        }
        s
    }

    pub fn export_csv(&self, mesh: &Mesh<T>, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        if mesh.dim() == 1 {
            writeln!(f, "node,x1,value")?;
            for (i, v) in self.values.iter().enumerate() {
                writeln!(f, "{},{:.17e},{:.17e}", i, mesh.node(i)[0].as_f64(), v.as_f64())?;
            }
        } else {
            writeln!(f, "node,x1,x2,value")?;
            for (i, v) in self.values.iter().enumerate() {
                let p = mesh.node(i);
                writeln!(
                    f,
                    "{},{:.17e},{:.17e},{:.17e}",
                    i,
                    p[0].as_f64(),
                    p[1].as_f64(),
                    v.as_f64()
                )?;
            }
        }
        Ok(())
    }
}

/// Borrowed (mesh, nodal values) pair viewed as a coefficient field.
pub struct FeField<'a, T> {
    pub mesh: &'a Mesh<T>,
    pub values: &'a [T],
}

impl<T: Real> CoefficientField<T> for FeField<'_, T> {
    fn value(&self, elem: usize, x: &Point<T>) -> T {
        let lam = self.mesh.barycentric(elem, x);
        let mut s = T::zero();
        for (i, &v) in self.mesh.element(elem).iter().enumerate() {
            s += lam[i] * self.values[v];
        }
        s
    }

    fn gradient(&self, elem: usize, _x: &Point<T>) -> Option<[T; 2]> {
        let grads = self.mesh.basis_gradients(elem);
        let mut g = [T::zero(); 2];
        for (i, &v) in self.mesh.element(elem).iter().enumerate() {
            g[0] += self.values[v] * grads[i][0];
            g[1] += self.values[v] * grads[i][1];
        }
        Some(g)
    }
}

/// Integration mode for coefficient-dependent terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AssemblyMode {
    /// Degree-4 Gauss reference rule per element.
    Exact,
    /// Sub-simplex vertex rule at the given level.
    Quadrature(u32),
}

impl AssemblyMode {
    pub fn rule<T: Real>(&self, mesh: &Mesh<T>) -> QuadratureRule<T> {
        match *self {
            AssemblyMode::Exact => QuadratureRule::reference(mesh),
            AssemblyMode::Quadrature(n) => QuadratureRule::subsimplex(mesh, n),
        }
    }
}

/// P1 mass matrix, assembled from the closed-form element matrices.
pub fn assemble_mass<T: Real>(mesh: &Mesh<T>) -> SparseMatrix<T> {
    assemble_mass_filtered(mesh, |_| true)
}

/// Mass matrix restricted to the elements selected by `keep`
/// (data-fit restriction to an observation subdomain).
pub fn assemble_mass_filtered<T: Real>(
    mesh: &Mesh<T>,
    keep: impl Fn(usize) -> bool,
) -> SparseMatrix<T> {
    let nv = mesh.dim() + 1;
    let mut buf = TripletBuffer::with_capacity(mesh.element_count() * nv * nv);
    for k in 0..mesh.element_count() {
        if !keep(k) {
            continue;
        }
        let e = mesh.element(k);
        let measure = mesh.element_measure(k);
        // Local P1 mass matrix: |K|/((d+1)(d+2)) * (1 + delta_ij).
        let scale = measure / T::of(((nv) * (nv + 1)) as f64);
        for i in 0..nv {
            for j in 0..nv {
                let factor = if i == j { T::of(2.0) } else { T::one() };
                buf.push(e[i], e[j], scale * factor);
            }
        }
    }
    buf.compress(mesh.node_count()).expect("element indices valid")
}

/// Stiffness matrix for coefficient `q`: the P1 basis gradients are
/// constant per element, so only `q` is integrated by the rule.
pub fn assemble_stiffness<T: Real>(
    mesh: &Mesh<T>,
    q: &dyn CoefficientField<T>,
    mode: AssemblyMode,
) -> SparseMatrix<T> {
    let rule = mode.rule(mesh);
    assemble_stiffness_with_rule(mesh, q, &rule)
}

pub fn assemble_stiffness_with_rule<T: Real>(
    mesh: &Mesh<T>,
    q: &dyn CoefficientField<T>,
    rule: &QuadratureRule<T>,
) -> SparseMatrix<T> {
    let nv = mesh.dim() + 1;
    let mut buf = TripletBuffer::with_capacity(mesh.element_count() * nv * nv);
    for k in 0..mesh.element_count() {
        let (pts, ws) = rule.points_of(k);
        let mut q_int = T::zero();
        for (p, &w) in pts.iter().zip(ws) {
            q_int += w * q.value(k, p);
        }
        let grads = mesh.basis_gradients(k);
        let e = mesh.element(k);
        for i in 0..nv {
            for j in 0..nv {
                let gij = grads[i][0] * grads[j][0] + grads[i][1] * grads[j][1];
                buf.push(e[i], e[j], q_int * gij);
            }
        }
    }
    buf.compress(mesh.node_count()).expect("element indices valid")
}

/// Load vector via the degree-4 reference rule.
pub fn assemble_load<T: Real>(mesh: &Mesh<T>, f: &dyn CoefficientField<T>) -> Vec<T> {
    let rule = QuadratureRule::reference(mesh);
    assemble_load_with_rule(mesh, f, &rule)
}

pub fn assemble_load_with_rule<T: Real>(
    mesh: &Mesh<T>,
    f: &dyn CoefficientField<T>,
    rule: &QuadratureRule<T>,
) -> Vec<T> {
    let mut b = vec![T::zero(); mesh.node_count()];
    for k in 0..mesh.element_count() {
        let (pts, ws) = rule.points_of(k);
        let e = mesh.element(k);
        for (p, &w) in pts.iter().zip(ws) {
            let fv = f.value(k, p);
            let lam = mesh.barycentric(k, p);
            for (i, &v) in e.iter().enumerate() {
                b[v] += w * fv * lam[i];
            }
        }
    }
    b
}

/// L2 projection onto the P1 space (no boundary condition).
pub fn l2_project<T: Real>(mesh: &Mesh<T>, v: &dyn CoefficientField<T>) -> Result<FeFunction<T>> {
    let m = assemble_mass(mesh);
    let b = assemble_load(mesh, v);
    let values = solve_spd(&m, &b, T::of(SOLVE_TOL))?;
    Ok(FeFunction { values })
}

/// Symmetric elimination of homogeneous Dirichlet rows/columns:
/// boundary rows become identity with zero right-hand side.
pub fn apply_dirichlet<T: Real>(
    a: &SparseMatrix<T>,
    b: &[T],
    mesh: &Mesh<T>,
) -> (SparseMatrix<T>, Vec<T>) {
    let eliminate: Vec<bool> = (0..mesh.node_count()).map(|i| mesh.is_boundary(i)).collect();
    let a2 = a.eliminate_symmetric(&eliminate);
    let mut b2 = b.to_vec();
    for (i, &e) in eliminate.iter().enumerate() {
        if e {
            b2[i] = T::zero();
        }
    }
    (a2, b2)
}

/// Nodal restriction of a fine-mesh P1 function to a nested coarse mesh.
pub fn transfer<T: Real>(
    fine_mesh: &Mesh<T>,
    fine: &FeFunction<T>,
    coarse_mesh: &Mesh<T>,
) -> Result<FeFunction<T>> {
    if fine.len() != fine_mesh.node_count() {
        return Err(Error::invalid("nodal vector length mismatch"));
    }
    let map = nested_node_map(fine_mesh, coarse_mesh)?;
    Ok(FeFunction {
        values: map.iter().map(|&f| fine.values[f]).collect(),
    })
}

/// Quadratic form `x^T A x`.
pub fn quadratic_form<T: Real>(a: &SparseMatrix<T>, x: &[T]) -> T {
    let ax = a.matvec(x);
    x.iter().zip(&ax).map(|(&xi, &yi)| xi * yi).sum()
}

/// Mass-weighted L2 norm of a nodal difference.
pub fn l2_norm_diff<T: Real>(mass: &SparseMatrix<T>, u: &[T], v: &[T]) -> T {
    let d: Vec<T> = u.iter().zip(v).map(|(&a, &b)| a - b).collect();
    quadratic_form(mass, &d).max(T::zero()).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{refine_uniform, unit_interval_mesh, unit_square_mesh};
    use std::f64::consts::PI;

    #[test]
    fn mass_row_sums_are_domain_measure() {
        for mesh in [unit_interval_mesh::<f64>(4).unwrap(), unit_square_mesh(3).unwrap()] {
            let m = assemble_mass(&mesh);
            let ones = vec![1.0; mesh.node_count()];
            let total: f64 = m.matvec(&ones).iter().sum();
            assert!((total - 1.0).abs() < 1e-12);
            assert!(m.asymmetry() <= 1e-12);
        }
    }

    #[test]
    fn mass_1d_closed_form() {
        let mesh = unit_interval_mesh::<f64>(4).unwrap();
        let m = assemble_mass(&mesh);
        let h = 0.25;
        assert!((m.get(2, 2) - 2.0 * h / 3.0).abs() < 1e-14);
        assert!((m.get(2, 3) - h / 6.0).abs() < 1e-14);
    }

    #[test]
    fn mass_2d_single_triangle_pattern() {
        let mesh = unit_square_mesh::<f64>(1).unwrap();
        let m = assemble_mass(&mesh);
        // Node 1 = (1,0) belongs to one triangle of area 1/2: diag 2*T/12.
        assert!((m.get(1, 1) - 2.0 * 0.5 / 12.0).abs() < 1e-14);
        assert!((m.get(1, 3) - 0.5 / 12.0).abs() < 1e-14);
        // Node 3 = (1,1) sits on the diagonal, shared by both triangles.
        assert!((m.get(3, 3) - 2.0 * 2.0 * 0.5 / 12.0).abs() < 1e-14);
    }

    #[test]
    fn stiffness_1d_unit_coefficient() {
        let mesh = unit_interval_mesh::<f64>(2).unwrap();
        for mode in [AssemblyMode::Exact, AssemblyMode::Quadrature(0)] {
            let a = assemble_stiffness(&mesh, &Constant(1.0), mode);
            assert!((a.get(1, 1) - 4.0).abs() < 1e-13);
            assert!((a.get(1, 0) + 2.0).abs() < 1e-13);
            assert!((a.get(1, 2) + 2.0).abs() < 1e-13);
        }
    }

    struct PerElementConstant;
    impl CoefficientField<f64> for PerElementConstant {
        fn value(&self, elem: usize, _x: &[f64; 2]) -> f64 {
            1.0 + elem as f64 * 0.5
        }
    }

    #[test]
    fn exact_and_vertex_rule_agree_for_piecewise_constant_q() {
        let mesh = unit_square_mesh::<f64>(2).unwrap();
        let a_exact = assemble_stiffness(&mesh, &PerElementConstant, AssemblyMode::Exact);
        let a_quad = assemble_stiffness(&mesh, &PerElementConstant, AssemblyMode::Quadrature(0));
        for r in 0..mesh.node_count() {
            let (cols, vals) = a_exact.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                assert!((v - a_quad.get(r, c)).abs() < 1e-13);
            }
        }
    }

    fn matrix_max_diff(a: &SparseMatrix<f64>, b: &SparseMatrix<f64>) -> f64 {
        let mut worst = 0.0f64;
        for r in 0..a.size() {
            let (cols, vals) = a.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                worst = worst.max((v - b.get(r, c)).abs());
            }
        }
        worst
    }

    #[test]
    fn quadrature_level_consistency_rate() {
        // Matrix differences between consecutive levels shrink ~4x for
        // a smooth coefficient.
        let mesh = unit_interval_mesh::<f64>(8).unwrap();
        let q = AnalyticField::new(|x: &[f64; 2]| 2.0 + (2.0 * PI * x[0]).sin());
        let mats: Vec<_> = (0..5)
            .map(|n| assemble_stiffness(&mesh, &q, AssemblyMode::Quadrature(n)))
            .collect();
        let mut prev = f64::NAN;
        for n in 0..4 {
            let d = matrix_max_diff(&mats[n], &mats[n + 1]);
            if n > 0 {
                let ratio = prev / d;
                assert!((3.0..5.0).contains(&ratio), "n={n} ratio={ratio}");
            }
            prev = d;
        }
    }

    #[test]
    fn load_cases() {
        let mesh = unit_interval_mesh::<f64>(5).unwrap();
        let b1 = assemble_load(&mesh, &Constant(1.0));
        let total: f64 = b1.iter().sum();
        assert!((total - 1.0).abs() < 1e-13);

        let b10 = assemble_load(&mesh, &Constant(10.0));
        let h = 0.2;
        for i in 1..5 {
            assert!((b10[i] - 10.0 * h).abs() < 1e-13);
        }

        let b0 = assemble_load(&mesh, &Constant(0.0));
        assert!(b0.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn l2_projection_identity_on_p1() {
        let mesh = unit_interval_mesh::<f64>(6).unwrap();
        let nodal: Vec<f64> = (0..mesh.node_count()).map(|i| (i as f64).cos()).collect();
        let field = FeField {
            mesh: &mesh,
            values: &nodal,
        };
        let p = l2_project(&mesh, &field).unwrap();
        for (a, b) in p.values.iter().zip(&nodal) {
            assert!((a - b).abs() < 1e-10);
        }
        let c = l2_project(&mesh, &Constant(2.5)).unwrap();
        assert!(c.values.iter().all(|v| (v - 2.5).abs() < 1e-10));
    }

    #[test]
    fn l2_projection_rate() {
        let v = AnalyticField::new(|x: &[f64; 2]| (PI * x[0]).sin());
        let mut errs = Vec::new();
        for m in [4usize, 8] {
            let mesh = unit_interval_mesh::<f64>(m).unwrap();
            let p = l2_project(&mesh, &v).unwrap();
            let rule = QuadratureRule::reference(&mesh);
            let fe = FeField {
                mesh: &mesh,
                values: &p.values,
            };
            let err2 = rule.integrate(|k, x| {
                let d = fe.value(k, x) - (PI * x[0]).sin();
                d * d
            });
            errs.push(err2.sqrt());
        }
        let ratio = errs[0] / errs[1];
        assert!((3.5..4.5).contains(&ratio), "ratio={ratio}");
    }

    #[test]
    fn dirichlet_reduces_to_interior() {
        let mesh = unit_interval_mesh::<f64>(2).unwrap();
        let a = assemble_stiffness(&mesh, &Constant(1.0), AssemblyMode::Exact);
        let b = assemble_load(&mesh, &Constant(1.0));
        let (a2, b2) = apply_dirichlet(&a, &b, &mesh);
        assert!(a2.asymmetry() <= 1e-12);
        // Boundary rows are identity with zero rhs.
        for i in [0usize, 2] {
            let (cols, vals) = a2.row(i);
            assert_eq!(cols, &[i]);
            assert_eq!(vals, &[1.0]);
            assert_eq!(b2[i], 0.0);
        }
        let x = solve_spd(&a2, &b2, 1e-10).unwrap();
        assert_eq!(x[0], 0.0);
        assert_eq!(x[2], 0.0);
    }

    #[test]
    fn transfer_cases() {
        let coarse = unit_interval_mesh::<f64>(4).unwrap();
        let fine = refine_uniform(&coarse);
        // P1 function on the coarse mesh, interpolated on the fine mesh.
        let g = |x: f64| 2.0 * x + 1.0;
        let fine_vals = FeFunction {
            values: fine.nodes().iter().map(|p| g(p[0])).collect(),
        };
        let back = transfer(&fine, &fine_vals, &coarse).unwrap();
        for (i, v) in back.values.iter().enumerate() {
            assert!((v - g(coarse.node(i)[0])).abs() < 1e-14);
        }
        // sin(pi x) samples coincide at shared nodes.
        let sf = FeFunction {
            values: fine.nodes().iter().map(|p| (PI * p[0]).sin()).collect(),
        };
        let sc = transfer(&fine, &sf, &coarse).unwrap();
        for (i, v) in sc.values.iter().enumerate() {
            assert!((v - (PI * coarse.node(i)[0]).sin()).abs() < 1e-14);
        }
        // Non-nested meshes are rejected.
        let other = unit_interval_mesh::<f64>(3).unwrap();
        assert!(transfer(&fine, &sf, &other).is_err());
    }

    #[test]
    fn stiffness_positive_semidefinite_and_symmetric() {
        let mesh = unit_square_mesh::<f64>(3).unwrap();
        let q = AnalyticField::new(|x: &[f64; 2]| 1.0 + x[0] + x[1]);
        let a = assemble_stiffness(&mesh, &q, AssemblyMode::Quadrature(1));
        assert!(a.asymmetry() <= 1e-12);
        // x^T A x >= 0 for a few vectors.
        for s in 0..5u64 {
            let x: Vec<f64> = (0..mesh.node_count())
                .map(|i| ((i as f64 + 1.3) * (s as f64 + 0.7)).sin())
                .collect();
            assert!(quadratic_form(&a, &x) >= -1e-12);
        }
    }
}
