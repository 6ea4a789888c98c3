//! Continuous piecewise-linear finite elements with homogeneous Dirichlet
//! boundary values: operators, loads, point sources and error norms.

use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{Point, PointLocation, TriMesh, VertexOrigin};
use crate::nonlinearity::Nonlinearity;
use crate::quadrature::QuadratureRule;
use crate::sparse::{self, CsrMatrix, Jacobi, Multigrid, Preconditioner};

/// Nodal values of a P1 function; boundary vertices hold exactly zero.
#[derive(Debug, Clone)]
pub struct FeFunction {
    mesh: Arc<TriMesh>,
    values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeFunctionJson {
    pub mesh_level: usize,
    pub values: Vec<f64>,
}

impl FeFunction {
    pub fn zeros(mesh: &Arc<TriMesh>) -> FeFunction {
        FeFunction {
            mesh: Arc::clone(mesh),
            values: vec![0.0; mesh.n_vertices()],
        }
    }

    /// Scatters interior unknowns to vertices.
    pub fn from_dofs(mesh: &Arc<TriMesh>, dofs: &[f64]) -> FeFunction {
        assert_eq!(dofs.len(), mesh.n_dofs());
        let mut f = FeFunction::zeros(mesh);
        for (&v, &x) in mesh.dof_vertices().iter().zip(dofs) {
            f.values[v] = x;
        }
        f
    }

    /// Takes vertex values, zeroing the boundary.
    pub fn from_vertex_values(mesh: &Arc<TriMesh>, mut values: Vec<f64>) -> Result<FeFunction> {
        if values.len() != mesh.n_vertices() {
            return Err(Error::DimensionMismatch(format!(
                "{} values for {} vertices",
                values.len(),
                mesh.n_vertices()
            )));
        }
        for (v, b) in mesh.boundary().iter().enumerate() {
            if *b {
                values[v] = 0.0;
            }
        }
        Ok(FeFunction {
            mesh: Arc::clone(mesh),
            values,
        })
    }

    pub fn mesh(&self) -> &Arc<TriMesh> {
        &self.mesh
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dofs(&self) -> Vec<f64> {
        self.mesh.dof_vertices().iter().map(|&v| self.values[v]).collect()
    }

    pub fn eval_location(&self, loc: &PointLocation) -> f64 {
        self.mesh
            .cell(loc.cell_index)
            .iter()
            .zip(&loc.barycentric)
            .map(|(&v, b)| b * self.values[v])
            .sum()
    }

    pub fn eval(&self, z: &Point) -> Result<f64> {
        Ok(self.eval_location(&self.mesh.locate(z)?))
    }

    fn at_cell(&self, c: usize, bary: &[f64; 4]) -> f64 {
        self.mesh
            .cell(c)
            .iter()
            .zip(bary)
            .map(|(&v, b)| b * self.values[v])
            .sum()
    }

    pub fn linear_combination(&self, a: f64, other: &FeFunction, b: f64) -> FeFunction {
        assert!(Arc::ptr_eq(&self.mesh, &other.mesh));
        FeFunction {
            mesh: Arc::clone(&self.mesh),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(x, y)| a * x + b * y)
                .collect(),
        }
    }

    /// Exact representation on a uniformly refined descendant mesh.
    pub fn prolongate(&self, target: &Arc<TriMesh>) -> Result<FeFunction> {
        let mut chain: Vec<&Arc<TriMesh>> = Vec::new();
        let mut cur = target;
        while cur.level() > self.mesh.level() {
            chain.push(cur);
            cur = cur.parent().ok_or_else(|| {
                Error::MeshMismatch(format!("level {} mesh has no parent", cur.level()))
            })?;
        }
        if !same_mesh(cur, &self.mesh) {
            return Err(Error::MeshMismatch(format!(
                "target level {} does not descend from the level {} mesh",
                target.level(),
                self.mesh.level()
            )));
        }
        let mut values = self.values.clone();
        for mesh in chain.into_iter().rev() {
            let lin = mesh.lineage().expect("chain meshes have lineage");
            values = lin
                .origins
                .iter()
                .map(|o| match *o {
                    VertexOrigin::Copy(a) => values[a],
                    VertexOrigin::Midpoint(a, b) => 0.5 * (values[a] + values[b]),
                })
                .collect();
        }
        Ok(FeFunction {
            mesh: Arc::clone(target),
            values,
        })
    }

    pub fn to_json(&self) -> FeFunctionJson {
        FeFunctionJson {
            mesh_level: self.mesh.level(),
            values: self.values.clone(),
        }
    }
}

fn same_mesh(a: &Arc<TriMesh>, b: &Arc<TriMesh>) -> bool {
    Arc::ptr_eq(a, b)
        || (a.level() == b.level()
            && a.n_vertices() == b.n_vertices()
            && a.vertices() == b.vertices()
            && a.cells().eq(b.cells()))
}

/// A quadrature point as seen by coefficient callbacks.
#[derive(Debug, Clone, Copy)]
pub struct QuadPoint<'a> {
    pub cell: usize,
    /// Global index `cell * rule.len() + q`, for looking up cached samples.
    pub index: usize,
    pub x: Point,
    pub barycentric: &'a [f64; 4],
}

/// The discrete space `V_h` over a mesh together with cached structure.
#[derive(Debug)]
pub struct FeSpace {
    mesh: Arc<TriMesh>,
    rule: QuadratureRule,
    row_ptr: Arc<Vec<usize>>,
    col_idx: Arc<Vec<usize>>,
    stiffness: OnceLock<CsrMatrix>,
    prolongations: OnceLock<Vec<CsrMatrix>>,
}

impl FeSpace {
    pub fn new(mesh: Arc<TriMesh>) -> FeSpace {
        let n = mesh.n_dofs();
        let mut rows: Vec<Vec<usize>> = vec![Vec::new(); n];
        for cell in mesh.cells() {
            for &a in cell {
                if let Some(i) = mesh.dof_of(a) {
                    rows[i].extend(cell.iter().filter_map(|&b| mesh.dof_of(b)));
                }
            }
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        row_ptr.push(0);
        for mut r in rows {
            r.sort_unstable();
            r.dedup();
            col_idx.extend(r);
            row_ptr.push(col_idx.len());
        }
        let rule = QuadratureRule::for_dim(mesh.dim());
        FeSpace {
            mesh,
            rule,
            row_ptr: Arc::new(row_ptr),
            col_idx: Arc::new(col_idx),
            stiffness: OnceLock::new(),
            prolongations: OnceLock::new(),
        }
    }

    pub fn mesh(&self) -> &Arc<TriMesh> {
        &self.mesh
    }

    pub fn rule(&self) -> &QuadratureRule {
        &self.rule
    }

    pub fn n_dofs(&self) -> usize {
        self.mesh.n_dofs()
    }

    pub fn n_quadrature_points(&self) -> usize {
        self.mesh.n_cells() * self.rule.len()
    }

    fn empty_operator(&self) -> CsrMatrix {
        CsrMatrix::with_pattern(self.n_dofs(), Arc::clone(&self.row_ptr), Arc::clone(&self.col_idx))
    }

    /// Visits every quadrature point with its physical weight.
    pub fn for_each_quadrature_point(&self, mut f: impl FnMut(&QuadPoint, f64)) {
        let nq = self.rule.len();
        let scale = 1.0 / self.rule.reference_measure();
        for c in 0..self.mesh.n_cells() {
            let corners = self.mesh.corners(c);
            let map = self.mesh.affine_map(c);
            let vol = map.measure() * scale;
            for (q, (bary, w)) in self.rule.points.iter().zip(&self.rule.weights).enumerate() {
                let mut x = [0.0; 3];
                for (k, corner) in corners.iter().enumerate().take(self.mesh.dim() + 1) {
                    for a in 0..3 {
                        x[a] += bary[k] * corner[a];
                    }
                }
                let qp = QuadPoint {
                    cell: c,
                    index: c * nq + q,
                    x,
                    barycentric: bary,
                };
                f(&qp, w * vol);
            }
        }
    }

    /// Values of `f` at every quadrature point, indexed by `QuadPoint::index`.
    pub fn sample(&self, mut f: impl FnMut(&Point) -> f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_quadrature_points());
        self.for_each_quadrature_point(|qp, _| out.push(f(&qp.x)));
        out
    }

    /// Evaluates `u` at a quadrature point.
    pub fn value_at(&self, u: &FeFunction, qp: &QuadPoint) -> f64 {
        u.at_cell(qp.cell, qp.barycentric)
    }

    pub fn integrate(&self, mut f: impl FnMut(&QuadPoint) -> f64) -> f64 {
        let mut s = 0.0;
        self.for_each_quadrature_point(|qp, w| s += w * f(qp));
        s
    }

    /// `(grad phi_i, grad phi_j)` over interior unknowns, exact per cell.
    pub fn stiffness(&self) -> &CsrMatrix {
        self.stiffness.get_or_init(|| {
            let mesh = &self.mesh;
            let d = mesh.dim();
            let mut k = self.empty_operator();
            for c in 0..mesh.n_cells() {
                let map = mesh.affine_map(c);
                let g = map.gradients();
                let vol = map.measure();
                let cell = mesh.cell(c);
                for (a, &va) in cell.iter().enumerate() {
                    let Some(i) = mesh.dof_of(va) else { continue };
                    for (b, &vb) in cell.iter().enumerate() {
                        let Some(j) = mesh.dof_of(vb) else { continue };
                        let dot: f64 = (0..d).map(|s| g[a][s] * g[b][s]).sum();
                        k.add_to(i, j, vol * dot);
                    }
                }
            }
            k
        })
    }

    /// `(w phi_i, phi_j)` by quadrature. A negative weight at any quadrature
    /// point is reported as a monotonicity violation.
    pub fn weighted_mass(&self, mut weight: impl FnMut(&QuadPoint) -> f64) -> Result<CsrMatrix> {
        let mesh = &self.mesh;
        let mut m = self.empty_operator();
        let mut err = None;
        self.for_each_quadrature_point(|qp, w| {
            if err.is_some() {
                return;
            }
            let wv = weight(qp);
            if !(wv >= 0.0) {
                err = Some(Error::MonotonicityViolation {
                    point: qp.x[..mesh.dim()].to_vec(),
                    value: wv,
                });
                return;
            }
            if wv == 0.0 {
                return;
            }
            let cell = mesh.cell(qp.cell);
            for (a, &va) in cell.iter().enumerate() {
                let Some(i) = mesh.dof_of(va) else { continue };
                let fa = w * wv * qp.barycentric[a];
                for (b, &vb) in cell.iter().enumerate() {
                    if let Some(j) = mesh.dof_of(vb) {
                        m.add_to(i, j, fa * qp.barycentric[b]);
                    }
                }
            }
        });
        match err {
            Some(e) => Err(e),
            None => Ok(m),
        }
    }

    pub fn mass(&self) -> CsrMatrix {
        self.weighted_mass(|_| 1.0).expect("unit weight is nonnegative")
    }

    /// `(f, phi_i)` by quadrature over interior unknowns.
    pub fn load(&self, mut density: impl FnMut(&QuadPoint) -> f64) -> Vec<f64> {
        let mesh = &self.mesh;
        let mut rhs = vec![0.0; self.n_dofs()];
        self.for_each_quadrature_point(|qp, w| {
            let f = density(qp);
            if f == 0.0 {
                return;
            }
            for (a, &v) in mesh.cell(qp.cell).iter().enumerate() {
                if let Some(i) = mesh.dof_of(v) {
                    rhs[i] += w * f * qp.barycentric[a];
                }
            }
        });
        rhs
    }

    /// `(a(x, y_h), phi_i)` by quadrature.
    pub fn semilinear_residual(&self, y: &FeFunction, nl: &dyn Nonlinearity) -> Vec<f64> {
        self.load(|qp| nl.a(&qp.x, self.value_at(y, qp)))
    }

    /// `sum_z u_z phi_i(z)` for located sources.
    pub fn dirac_load(&self, sources: &[PointLocation], u: &[f64]) -> Vec<f64> {
        assert_eq!(sources.len(), u.len());
        let mut rhs = vec![0.0; self.n_dofs()];
        for (loc, &uz) in sources.iter().zip(u) {
            for (&v, &b) in self.mesh.cell(loc.cell_index).iter().zip(&loc.barycentric) {
                if let Some(i) = self.mesh.dof_of(v) {
                    rhs[i] += uz * b;
                }
            }
        }
        rhs
    }

    /// Interior-unknown prolongation operators down the mesh lineage:
    /// entry `k` maps level `L-k-1` unknowns to level `L-k` unknowns.
    pub fn prolongations(&self) -> &[CsrMatrix] {
        self.prolongations.get_or_init(|| {
            let mut out = Vec::new();
            let mut fine = Arc::clone(&self.mesh);
            while let Some(lin) = fine.lineage() {
                let coarse = &lin.parent;
                if coarse.n_dofs() == 0 {
                    break;
                }
                let mut trip = Vec::new();
                for (v, origin) in lin.origins.iter().enumerate() {
                    let Some(i) = fine.dof_of(v) else { continue };
                    match *origin {
                        VertexOrigin::Copy(a) => {
                            if let Some(j) = coarse.dof_of(a) {
                                trip.push((i, j, 1.0));
                            }
                        }
                        VertexOrigin::Midpoint(a, b) => {
                            for e in [a, b] {
                                if let Some(j) = coarse.dof_of(e) {
                                    trip.push((i, j, 0.5));
                                }
                            }
                        }
                    }
                }
                out.push(CsrMatrix::from_triplets(fine.n_dofs(), coarse.n_dofs(), &trip));
                let next = Arc::clone(coarse);
                fine = next;
            }
            out
        })
    }

    /// Preconditioner for an operator on this space: multigrid over the mesh
    /// lineage when available, Jacobi otherwise.
    pub fn preconditioner(&self, op: &CsrMatrix) -> Box<dyn Preconditioner> {
        let prol = self.prolongations();
        if prol.is_empty() || self.n_dofs() <= 32 {
            Box::new(Jacobi::new(op))
        } else {
            Box::new(Multigrid::new(op, prol))
        }
    }

    /// Solves `op x = rhs` to relative residual `tol`.
    pub fn solve(&self, op: &CsrMatrix, rhs: &[f64], tol: f64) -> Result<Vec<f64>> {
        let pc = self.preconditioner(op);
        solve_with(op, pc.as_ref(), rhs, None, tol)
    }
}

pub(crate) fn solve_with(
    op: &CsrMatrix,
    pc: &dyn Preconditioner,
    rhs: &[f64],
    initial: Option<&[f64]>,
    tol: f64,
) -> Result<Vec<f64>> {
    sparse::pcg(op, rhs, initial, pc, tol, sparse::default_max_iter(rhs.len())).map(|(x, _)| x)
}

/// The function a fine-mesh solution is compared against.
pub enum Comparand<'a> {
    /// A P1 function on the same mesh or an ancestor of it.
    Fe(&'a FeFunction),
    /// A pointwise-evaluable field.
    Field(&'a dyn Fn(&Point) -> f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NormErrors {
    pub l2: f64,
    pub l1: f64,
    /// Maximum over fine-mesh vertices inside the subdomain; zero if none.
    pub linf: f64,
}

/// L2 and L1 norms of `fine - other` by quadrature on the fine mesh, and the
/// vertex maximum over `subdomain` (the whole mesh when `None`).
pub fn norm_errors(
    space: &FeSpace,
    fine: &FeFunction,
    other: Comparand,
    subdomain: Option<&dyn Fn(&Point) -> bool>,
) -> Result<NormErrors> {
    if !Arc::ptr_eq(fine.mesh(), space.mesh()) && !same_mesh(fine.mesh(), space.mesh()) {
        return Err(Error::MeshMismatch("fine function is not on the space mesh".into()));
    }
    let mesh = space.mesh();
    let inside = |p: &Point| subdomain.map_or(true, |s| s(p));
    let (l2sq, l1, linf) = match other {
        Comparand::Fe(coarse) => {
            let diff = fine.linear_combination(1.0, &coarse.prolongate(mesh)?, -1.0);
            let mut l2sq = 0.0;
            let mut l1 = 0.0;
            space.for_each_quadrature_point(|qp, w| {
                let d = space.value_at(&diff, qp);
                l2sq += w * d * d;
                l1 += w * d.abs();
            });
            let linf = (0..mesh.n_vertices())
                .filter(|&v| inside(mesh.vertex(v)))
                .map(|v| diff.values[v].abs())
                .fold(0.0, f64::max);
            (l2sq, l1, linf)
        }
        Comparand::Field(g) => {
            let mut l2sq = 0.0;
            let mut l1 = 0.0;
            space.for_each_quadrature_point(|qp, w| {
                let d = space.value_at(fine, qp) - g(&qp.x);
                l2sq += w * d * d;
                l1 += w * d.abs();
            });
            let linf = (0..mesh.n_vertices())
                .filter(|&v| inside(mesh.vertex(v)))
                .map(|v| (fine.values[v] - g(mesh.vertex(v))).abs())
                .fold(0.0, f64::max);
            (l2sq, l1, linf)
        }
    };
    Ok(NormErrors {
        l2: l2sq.sqrt(),
        l1,
        linf,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{refine_times, triangulate_polygon};
    use crate::nonlinearity::Builtin;
    use nalgebra::DVector;

    fn square(level: usize) -> Arc<TriMesh> {
        let m0 = Arc::new(triangulate_polygon(&[[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]).unwrap());
        refine_times(&m0, level)
    }

    fn vertex_at(mesh: &TriMesh, p: [f64; 2]) -> usize {
        (0..mesh.n_vertices())
            .find(|&v| (mesh.vertex(v)[0] - p[0]).abs() < 1e-14 && (mesh.vertex(v)[1] - p[1]).abs() < 1e-14)
            .unwrap()
    }

    #[test]
    fn stiffness_is_five_point_stencil() {
        let mesh = square(2);
        let space = FeSpace::new(mesh.clone());
        let k = space.stiffness();
        assert_eq!(k.max_asymmetry(), 0.0);
        let center = mesh.dof_of(vertex_at(&mesh, [0.5, 0.5])).unwrap();
        assert_eq!(k.get(center, center), 4.0);
        let mut off: Vec<f64> = k.row(center).filter(|&(j, _)| j != center).map(|(_, v)| v).collect();
        off.retain(|v| *v != 0.0);
        assert_eq!(off, vec![-1.0; 4]);
        for p in [[0.25, 0.5], [0.75, 0.5], [0.5, 0.25], [0.5, 0.75]] {
            let j = mesh.dof_of(vertex_at(&mesh, p)).unwrap();
            assert_eq!(k.get(center, j), -1.0);
        }
    }

    #[test]
    fn single_triangle_has_no_unknowns() {
        let m = Arc::new(triangulate_polygon(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]).unwrap());
        let space = FeSpace::new(m);
        assert_eq!(space.stiffness().n_rows(), 0);
    }

    #[test]
    fn element_mass_matrix_of_reference_triangle() {
        // element matrices are only visible through interior unknowns, so
        // integrate the products of barycentric coordinates directly
        let m = Arc::new(triangulate_polygon(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]).unwrap());
        let space = FeSpace::new(m);
        let area = 0.5;
        for i in 0..3 {
            for j in 0..3 {
                let v = space.integrate(|qp| qp.barycentric[i] * qp.barycentric[j]);
                let expect = area / 12.0 * if i == j { 2.0 } else { 1.0 };
                assert!((v - expect).abs() < 1e-15, "{i}{j}");
            }
        }
    }

    #[test]
    fn zero_weight_gives_zero_operator() {
        let space = FeSpace::new(square(2));
        let m = space.weighted_mass(|_| 0.0).unwrap();
        assert!(m.values().iter().all(|&v| v == 0.0));
        let err = space.weighted_mass(|qp| qp.x[0] - 0.5).unwrap_err();
        assert!(matches!(err, Error::MonotonicityViolation { .. }));
    }

    #[test]
    fn mass_row_sums_and_total() {
        let mesh = square(3);
        let space = FeSpace::new(mesh.clone());
        let m = space.mass();
        let ones: Vec<f64> = space.load(|_| 1.0);
        let mut full_total = 0.0;
        for i in 0..m.n_rows() {
            let s: f64 = m.row(i).map(|(_, v)| v).sum();
            // interior rows touching the boundary lose the boundary columns
            assert!(s <= ones[i] + 1e-15);
        }
        // partition of unity over all vertices equals the area
        space.for_each_quadrature_point(|qp, w| {
            full_total += w * qp.barycentric[..3].iter().sum::<f64>();
        });
        assert!((full_total - 1.0).abs() < 1e-14);
        assert!((m.max_asymmetry()) < 1e-18);
    }

    #[test]
    fn linear_residual_is_mass_times_values() {
        let mesh = square(3);
        let space = FeSpace::new(mesh.clone());
        let dofs: Vec<f64> = (0..space.n_dofs()).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
        let y = FeFunction::from_dofs(&mesh, &dofs);
        let r = space.semilinear_residual(&y, &Builtin::Linear { coefficient: 1.0 });
        let my = space.mass().apply(&dofs);
        for (a, b) in r.iter().zip(&my) {
            assert!((a - b).abs() < 1e-14);
        }
        let z = space.semilinear_residual(&y, &Builtin::Zero);
        assert!(z.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cubic_residual_of_constant_field() {
        // the residual only sees interior basis functions, and y must vanish on
        // the boundary, so compare on cells away from the boundary by taking a
        // field that is constant on the support of one interior hat
        let mesh = square(3);
        let space = FeSpace::new(mesh.clone());
        let c = 0.7;
        let mut values = vec![c; mesh.n_vertices()];
        for (v, b) in mesh.boundary().iter().enumerate() {
            if *b {
                values[v] = 0.0;
            }
        }
        let y = FeFunction::from_vertex_values(&mesh, values).unwrap();
        let r = space.semilinear_residual(&y, &Builtin::Cubic { coefficient: 1.0 });
        let hat_integral = space.load(|_| 1.0);
        let center = mesh.dof_of(vertex_at(&mesh, [0.5, 0.5])).unwrap();
        assert!((r[center] - c * c * c * hat_integral[center]).abs() < 1e-15);
    }

    #[test]
    fn dirac_load_vertex_and_cell() {
        let mesh = square(2);
        let space = FeSpace::new(mesh.clone());
        let v = vertex_at(&mesh, [0.5, 0.5]);
        let loc = mesh.locate(&[0.5, 0.5, 0.0]).unwrap();
        let f = space.dirac_load(&[loc], &[1.0]);
        let dof = mesh.dof_of(v).unwrap();
        for (i, x) in f.iter().enumerate() {
            assert!((x - if i == dof { 1.0 } else { 0.0 }).abs() < 1e-15);
        }
        let loc = mesh.locate(&[0.4, 0.45, 0.0]).unwrap();
        let f = space.dirac_load(&[loc.clone()], &[1.0]);
        let nz: Vec<f64> = f.iter().copied().filter(|&x| x != 0.0).collect();
        assert_eq!(nz.len(), 3);
        assert!((nz.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        let loc2 = mesh.locate(&[0.7, 0.3, 0.0]).unwrap();
        let combo = space.dirac_load(&[loc.clone(), loc2.clone()], &[2.0, -1.0]);
        let f1 = space.dirac_load(&[loc], &[1.0]);
        let f2 = space.dirac_load(&[loc2], &[1.0]);
        for i in 0..combo.len() {
            assert!((combo[i] - (2.0 * f1[i] - f2[i])).abs() < 1e-15);
        }
    }

    #[test]
    fn five_point_solve_matches_dense_elimination() {
        let mesh = square(2); // 3x3 interior grid
        let space = FeSpace::new(mesh.clone());
        assert_eq!(space.n_dofs(), 9);
        let k = space.stiffness();
        let rhs: Vec<f64> = (0..9).map(|i| (i as f64 + 1.0).sqrt()).collect();
        let x = sparse::solve_spd(k, &rhs, 1e-14).unwrap();
        let dense = dense_gauss(k.to_dense(), rhs.clone());
        for (a, b) in x.iter().zip(&dense) {
            assert!((a - b).abs() < 1e-10);
        }
        let loc = mesh.locate(&[0.3, 0.6, 0.0]).unwrap();
        let f = space.dirac_load(&[loc], &[1.0]);
        let x = space.solve(k, &f, 1e-12).unwrap();
        let r: Vec<f64> = k.apply(&x).iter().zip(&f).map(|(a, b)| a - b).collect();
        assert!(sparse::norm2(&r) <= 1e-12 * sparse::norm2(&f));
    }

    /// Plain Gaussian elimination with partial pivoting.
    fn dense_gauss(mut a: nalgebra::DMatrix<f64>, mut b: Vec<f64>) -> Vec<f64> {
        let n = b.len();
        for col in 0..n {
            let piv = (col..n).max_by(|&i, &j| a[(i, col)].abs().total_cmp(&a[(j, col)].abs())).unwrap();
            a.swap_rows(col, piv);
            b.swap(col, piv);
            for row in col + 1..n {
                let f = a[(row, col)] / a[(col, col)];
                for c in col..n {
                    a[(row, c)] -= f * a[(col, c)];
                }
                b[row] -= f * b[col];
            }
        }
        let mut x = vec![0.0; n];
        for row in (0..n).rev() {
            let s: f64 = (row + 1..n).map(|c| a[(row, c)] * x[c]).sum();
            x[row] = (b[row] - s) / a[(row, row)];
        }
        x
    }

    #[test]
    fn stiffness_kernel_is_constants() {
        // row sums of the full (boundary-included) stiffness vanish; with
        // elimination, rows of vertices away from the boundary still sum to zero
        let mesh = square(3);
        let space = FeSpace::new(mesh.clone());
        let k = space.stiffness();
        for v in 0..mesh.n_vertices() {
            let Some(i) = mesh.dof_of(v) else { continue };
            let p = mesh.vertex(v);
            if p[0] > 0.2 && p[0] < 0.8 && p[1] > 0.2 && p[1] < 0.8 {
                let s: f64 = k.row(i).map(|(_, x)| x).sum();
                assert!(s.abs() < 1e-14);
            }
        }
    }

    #[test]
    fn prolongation_is_exact() {
        let coarse = square(2);
        let fine = refine_times(&coarse, 2);
        let cs = FeSpace::new(coarse.clone());
        let dofs: Vec<f64> = (0..cs.n_dofs()).map(|i| (i as f64 * 0.7).cos()).collect();
        let f = FeFunction::from_dofs(&coarse, &dofs);
        let pf = f.prolongate(&fine).unwrap();
        for v in 0..coarse.n_vertices() {
            assert_eq!(pf.values()[v], f.values()[v]);
        }
        for p in [[0.3, 0.55], [0.81, 0.12]] {
            let z = [p[0], p[1], 0.0];
            assert!((pf.eval(&z).unwrap() - f.eval(&z).unwrap()).abs() < 1e-14);
        }
        let fs = FeSpace::new(fine.clone());
        let e = norm_errors(&fs, &pf, Comparand::Fe(&f), None).unwrap();
        assert_eq!((e.l2, e.l1, e.linf), (0.0, 0.0, 0.0));
        // unrelated mesh
        let other = square(3);
        assert!(matches!(f.prolongate(&other), Ok(_)));
        let tri = Arc::new(triangulate_polygon(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]).unwrap());
        let g = FeFunction::zeros(&refine_times(&tri, 1));
        assert!(matches!(g.prolongate(&fine), Err(Error::MeshMismatch(_))));
    }

    #[test]
    fn multigrid_prolongation_matches_lineage() {
        let mesh = square(4);
        let space = FeSpace::new(mesh.clone());
        let p = &space.prolongations()[0];
        let parent = mesh.parent().unwrap();
        let cdofs: Vec<f64> = (0..parent.n_dofs()).map(|i| i as f64).collect();
        let via_matrix = p.apply(&cdofs);
        let via_lineage = FeFunction::from_dofs(parent, &cdofs).prolongate(&mesh).unwrap().dofs();
        assert_eq!(via_matrix, via_lineage);
        let k = space.stiffness();
        let rhs = space.load(|qp| qp.x[0] * qp.x[1]);
        let x = space.solve(k, &rhs, 1e-13).unwrap();
        let direct = k.to_dense().cholesky().unwrap().solve(&DVector::from_vec(rhs));
        for (a, b) in x.iter().zip(direct.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_difference_norms() {
        let mesh = square(3);
        let space = FeSpace::new(mesh.clone());
        let zero = FeFunction::zeros(&mesh);
        let one = |_: &Point| 1.0;
        let e = norm_errors(&space, &zero, Comparand::Field(&one), None).unwrap();
        assert!((e.l2 - 1.0).abs() < 1e-14);
        assert!((e.l1 - 1.0).abs() < 1e-14);
        assert_eq!(e.linf, 1.0);
    }
}
