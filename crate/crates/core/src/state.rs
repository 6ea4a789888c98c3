//! Discrete state equation `K y + (a(., y), phi) = sum_z u_z phi(z)` and its
//! linearizations.

use std::fmt;
use std::sync::Arc;

use log::debug;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{solve_with, FeFunction, FeSpace};
use crate::mesh::{Point, PointLocation, TriMesh};
use crate::nonlinearity::Nonlinearity;
use crate::sparse::{norm_inf, CsrMatrix, Preconditioner};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Relative residual of inner CG solves.
    pub tol_lin: f64,
    /// Max-norm of the algebraic Newton residual.
    pub tol_newton: f64,
    pub max_newton: usize,
    pub max_halvings: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol_lin: 1e-12,
            tol_newton: 1e-10,
            max_newton: 50,
            max_halvings: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NewtonReport {
    pub iterations: usize,
    pub residual: f64,
    pub damping_steps: usize,
    pub converged: bool,
    pub residual_history: Vec<f64>,
}

impl fmt::Display for NewtonReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} iterations, residual {:e}, {} halvings, converged = {}",
            self.iterations, self.residual, self.damping_steps, self.converged
        )
    }
}

/// Point sources located in a mesh.
#[derive(Debug, Clone)]
pub struct DiracSources {
    pub points: Vec<Point>,
    pub locations: Vec<PointLocation>,
}

impl DiracSources {
    /// Locates every point; points not strictly inside the domain are rejected.
    pub fn locate(mesh: &TriMesh, points: &[Point]) -> Result<DiracSources> {
        let mut locations = Vec::with_capacity(points.len());
        for p in points {
            if !mesh.domain_contains_strictly(p, 0.0) {
                return Err(Error::PointOutsideDomain {
                    point: p[..mesh.dim()].to_vec(),
                });
            }
            locations.push(mesh.locate(p)?);
        }
        Ok(DiracSources {
            points: points.to_vec(),
            locations,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Point values `f(z)` in the order of the sources.
    pub fn evaluate(&self, f: &FeFunction) -> Vec<f64> {
        self.locations.iter().map(|l| f.eval_location(l)).collect()
    }
}

pub fn dirac_load_vector(space: &FeSpace, sources: &DiracSources, u: &[f64]) -> Result<Vec<f64>> {
    if u.len() != sources.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} amplitudes for {} sources",
            u.len(),
            sources.len()
        )));
    }
    Ok(space.dirac_load(&sources.locations, u))
}

/// `K + M_w` with `w = a_y(x, y_h(x))`.
pub fn newton_step_operator(space: &FeSpace, y: &FeFunction, nl: &dyn Nonlinearity) -> Result<CsrMatrix> {
    let mw = space.weighted_mass(|qp| nl.a_y(&qp.x, space.value_at(y, qp)))?;
    Ok(space.stiffness().add_scaled(1.0, &mw))
}

fn residual(space: &FeSpace, y: &FeFunction, nl: &dyn Nonlinearity, load: &[f64]) -> Vec<f64> {
    let ydofs = y.dofs();
    let mut r = space.stiffness().apply(&ydofs);
    let n = space.semilinear_residual(y, nl);
    for i in 0..r.len() {
        r[i] += n[i] - load[i];
    }
    r
}

/// Damped Newton for the discrete state. The step is halved until the
/// residual max-norm decreases.
pub fn solve_state(
    space: &FeSpace,
    sources: &DiracSources,
    u: &[f64],
    nl: &dyn Nonlinearity,
    opts: &SolverOptions,
    initial: Option<&FeFunction>,
) -> Result<(FeFunction, NewtonReport)> {
    if u.iter().any(|x| !x.is_finite()) {
        return Err(Error::DimensionMismatch("non-finite control".into()));
    }
    let mesh = space.mesh();
    let load = dirac_load_vector(space, sources, u)?;
    let mut y = match initial {
        Some(y0) if Arc::ptr_eq(y0.mesh(), mesh) => y0.clone(),
        Some(y0) => y0.prolongate(mesh)?,
        None => FeFunction::zeros(mesh),
    };
    let mut r = residual(space, &y, nl, &load);
    let mut rnorm = norm_inf(&r);
    let mut report = NewtonReport {
        iterations: 0,
        residual: rnorm,
        damping_steps: 0,
        converged: false,
        residual_history: vec![rnorm],
    };
    // The algebraic residual scales like h^d, so a small residual alone does
    // not bound the state error on fine meshes; the last increment does.
    let mut step_norm = f64::INFINITY;
    loop {
        if rnorm <= opts.tol_newton && step_norm <= opts.tol_newton {
            report.converged = true;
            report.residual = rnorm;
            return Ok((y, report));
        }
        if report.iterations >= opts.max_newton {
            report.residual = rnorm;
            return Err(Error::NonlinearSolveFailure(report));
        }
        report.iterations += 1;
        let jac = newton_step_operator(space, &y, nl)?;
        let neg: Vec<f64> = r.iter().map(|x| -x).collect();
        let pc = space.preconditioner(&jac);
        let delta = solve_with(&jac, pc.as_ref(), &neg, None, opts.tol_lin)?;
        let ydofs = y.dofs();
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..=opts.max_halvings {
            let trial: Vec<f64> = ydofs.iter().zip(&delta).map(|(a, d)| a + t * d).collect();
            let ytrial = FeFunction::from_dofs(mesh, &trial);
            let rtrial = residual(space, &ytrial, nl, &load);
            let ntrial = norm_inf(&rtrial);
            if ntrial < rnorm || ntrial <= opts.tol_newton {
                step_norm = t * norm_inf(&delta);
                y = ytrial;
                r = rtrial;
                rnorm = ntrial;
                accepted = true;
                break;
            }
            t *= 0.5;
            report.damping_steps += 1;
        }
        report.residual_history.push(rnorm);
        debug!("newton iteration {}: residual {rnorm:e}, increment {step_norm:e}", report.iterations);
        if !accepted {
            report.residual = rnorm;
            return Err(Error::NonlinearSolveFailure(report));
        }
    }
}

/// The operator `K + M_{a_y(y)}` at a fixed state, ready for repeated solves.
pub struct Linearization<'a> {
    space: &'a FeSpace,
    state: &'a FeFunction,
    nl: &'a dyn Nonlinearity,
    op: CsrMatrix,
    precond: Box<dyn Preconditioner>,
    tol_lin: f64,
}

impl<'a> Linearization<'a> {
    pub fn new(
        space: &'a FeSpace,
        state: &'a FeFunction,
        nl: &'a dyn Nonlinearity,
        tol_lin: f64,
    ) -> Result<Linearization<'a>> {
        let op = newton_step_operator(space, state, nl)?;
        let precond = space.preconditioner(&op);
        Ok(Linearization {
            space,
            state,
            nl,
            op,
            precond,
            tol_lin,
        })
    }

    pub fn operator(&self) -> &CsrMatrix {
        &self.op
    }

    pub fn solve(&self, rhs: &[f64]) -> Result<FeFunction> {
        let x = solve_with(&self.op, self.precond.as_ref(), rhs, None, self.tol_lin)?;
        Ok(FeFunction::from_dofs(self.space.mesh(), &x))
    }

    /// `phi = S'(u) v`.
    pub fn linearized_state(&self, sources: &DiracSources, v: &[f64]) -> Result<FeFunction> {
        self.solve(&dirac_load_vector(self.space, sources, v)?)
    }

    /// Second derivative `S''(u)(v, w)` from the two first-order directions.
    pub fn second_linearized(&self, phi_v: &FeFunction, phi_w: &FeFunction) -> Result<FeFunction> {
        let sp = self.space;
        let rhs = sp.load(|qp| {
            let y = sp.value_at(self.state, qp);
            -self.nl.a_yy(&qp.x, y) * sp.value_at(phi_v, qp) * sp.value_at(phi_w, qp)
        });
        self.solve(&rhs)
    }

    /// Adjoint state for the tracking term; `target` holds the desired state
    /// at every quadrature point of the space.
    pub fn adjoint(&self, target: &[f64]) -> Result<FeFunction> {
        let sp = self.space;
        assert_eq!(target.len(), sp.n_quadrature_points());
        let rhs = sp.load(|qp| sp.value_at(self.state, qp) - target[qp.index]);
        self.solve(&rhs)
    }
}

pub fn solve_linearized_state(
    space: &FeSpace,
    y: &FeFunction,
    nl: &dyn Nonlinearity,
    sources: &DiracSources,
    v: &[f64],
    tol_lin: f64,
) -> Result<FeFunction> {
    Linearization::new(space, y, nl, tol_lin)?.linearized_state(sources, v)
}

pub fn solve_second_linearized(
    space: &FeSpace,
    y: &FeFunction,
    nl: &dyn Nonlinearity,
    phi_v: &FeFunction,
    phi_w: &FeFunction,
    tol_lin: f64,
) -> Result<FeFunction> {
    Linearization::new(space, y, nl, tol_lin)?.second_linearized(phi_v, phi_w)
}

pub fn solve_adjoint(
    space: &FeSpace,
    y: &FeFunction,
    nl: &dyn Nonlinearity,
    target: &[f64],
    tol_lin: f64,
) -> Result<FeFunction> {
    Linearization::new(space, y, nl, tol_lin)?.adjoint(target)
}
