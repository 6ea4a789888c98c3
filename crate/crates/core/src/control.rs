//! The reduced control problem over the amplitudes `u`: cost, adjoint
//! gradient, projection, projected-gradient solver, reduced Hessian and the
//! second-order sufficiency check.

use std::sync::Arc;

use log::debug;
use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fem::{FeFunction, FeSpace};
use crate::field::Field;
use crate::mesh::{Point, TriMesh};
use crate::nonlinearity::Nonlinearity;
use crate::sparse::{dot, norm_inf};
use crate::state::{solve_state, DiracSources, Linearization, NewtonReport, SolverOptions};

/// Box `[lower_z, upper_z]` per source.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ControlBounds {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl ControlBounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<ControlBounds> {
        let mut problems = Vec::new();
        if lower.len() != upper.len() {
            problems.push(format!("{} lower bounds but {} upper bounds", lower.len(), upper.len()));
        }
        for (z, (a, b)) in lower.iter().zip(&upper).enumerate() {
            if !(a < b) {
                problems.push(format!("bounds[{z}]: lower {a} must be < upper {b}"));
            }
        }
        if problems.is_empty() {
            Ok(ControlBounds { lower, upper })
        } else {
            Err(Error::Validation(problems))
        }
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    pub fn contains(&self, u: &[f64]) -> bool {
        u.len() == self.len() && u.iter().enumerate().all(|(z, &x)| self.lower[z] <= x && x <= self.upper[z])
    }
}

/// Componentwise `max(a_z, min(b_z, u_z))`.
pub fn project(u: &[f64], bounds: &ControlBounds) -> Vec<f64> {
    u.iter()
        .zip(bounds.lower.iter().zip(&bounds.upper))
        .map(|(&t, (&a, &b))| a.max(b.min(t)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ActiveTag {
    Lower,
    Upper,
    Free,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KktDiagnostics {
    /// `psi_z = p(z) + alpha u_z`.
    pub psi: Vec<f64>,
    /// `max_z |u_z - Pi(-p(z)/alpha)|`.
    pub projection_residual: f64,
    pub active_set: Vec<ActiveTag>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SoscReport {
    pub tau: f64,
    pub kappa_min: f64,
    /// Indices with `|psi_z| <= tau`.
    pub critical: Vec<usize>,
    /// Smallest eigenvalue of the Hessian restricted to the critical indices;
    /// `None` when the critical set is empty.
    pub min_eigenvalue: Option<f64>,
    pub positive: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceEntry {
    pub iter: usize,
    pub j: f64,
    pub proj_residual: f64,
    pub step: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OptimizerOptions {
    pub tol_kkt: f64,
    pub max_iterations: usize,
    pub armijo: f64,
    pub max_backtracks: usize,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        OptimizerOptions {
            tol_kkt: 1e-8,
            max_iterations: 500,
            armijo: 1e-4,
            max_backtracks: 40,
        }
    }
}

/// Mesh-independent problem data.
#[derive(Debug)]
pub struct ControlProblem {
    pub points: Vec<Point>,
    pub bounds: ControlBounds,
    pub alpha: f64,
    pub target: Field,
    pub nonlinearity: Arc<dyn Nonlinearity>,
    pub solver: SolverOptions,
    pub optimizer: OptimizerOptions,
}

impl ControlProblem {
    pub fn n_controls(&self) -> usize {
        self.points.len()
    }
}

/// State, adjoint and derived quantities at one control.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub control: Vec<f64>,
    pub state: FeFunction,
    pub adjoint: FeFunction,
    pub cost: f64,
    /// `psi = p(z) + alpha u`.
    pub gradient: Vec<f64>,
    /// `p(z)` at the sources.
    pub adjoint_at_sources: Vec<f64>,
    pub newton: NewtonReport,
}

#[derive(Debug, Clone)]
pub struct OcpSolution {
    pub control: Vec<f64>,
    pub state: FeFunction,
    pub adjoint: FeFunction,
    pub cost: f64,
    pub diagnostics: KktDiagnostics,
    pub trace: Vec<TraceEntry>,
}

/// The problem discretized on one mesh.
pub struct DiscreteProblem {
    problem: Arc<ControlProblem>,
    space: Arc<FeSpace>,
    sources: DiracSources,
    target: Vec<f64>,
}

impl DiscreteProblem {
    pub fn new(problem: Arc<ControlProblem>, mesh: Arc<TriMesh>) -> Result<DiscreteProblem> {
        Self::with_space(problem, Arc::new(FeSpace::new(mesh)))
    }

    pub fn with_space(problem: Arc<ControlProblem>, space: Arc<FeSpace>) -> Result<DiscreteProblem> {
        let sources = DiracSources::locate(space.mesh(), &problem.points)?;
        let target = problem.target.sample(&space)?;
        Ok(DiscreteProblem {
            problem,
            space,
            sources,
            target,
        })
    }

    pub fn problem(&self) -> &Arc<ControlProblem> {
        &self.problem
    }

    pub fn space(&self) -> &Arc<FeSpace> {
        &self.space
    }

    pub fn mesh(&self) -> &Arc<TriMesh> {
        self.space.mesh()
    }

    pub fn sources(&self) -> &DiracSources {
        &self.sources
    }

    /// Desired state at the quadrature points.
    pub fn target_samples(&self) -> &[f64] {
        &self.target
    }

    fn nl(&self) -> &dyn Nonlinearity {
        self.problem.nonlinearity.as_ref()
    }

    fn check_len(&self, u: &[f64]) -> Result<()> {
        if u.len() != self.sources.len() {
            return Err(Error::DimensionMismatch(format!(
                "control has {} entries, expected {}",
                u.len(),
                self.sources.len()
            )));
        }
        Ok(())
    }

    pub fn state(&self, u: &[f64], initial: Option<&FeFunction>) -> Result<(FeFunction, NewtonReport)> {
        self.check_len(u)?;
        solve_state(&self.space, &self.sources, u, self.nl(), &self.problem.solver, initial)
    }

    /// `1/2 ||y - y_d||^2 + alpha/2 |u|^2` with the tracking term by quadrature.
    pub fn cost_of_state(&self, y: &FeFunction, u: &[f64]) -> f64 {
        let sp = &self.space;
        let tracking = sp.integrate(|qp| {
            let d = sp.value_at(y, qp) - self.target[qp.index];
            d * d
        });
        0.5 * tracking + 0.5 * self.problem.alpha * dot(u, u)
    }

    pub fn cost(&self, u: &[f64]) -> Result<f64> {
        let (y, _) = self.state(u, None)?;
        Ok(self.cost_of_state(&y, u))
    }

    pub fn linearization<'a>(&'a self, y: &'a FeFunction) -> Result<Linearization<'a>> {
        Linearization::new(&self.space, y, self.nl(), self.problem.solver.tol_lin)
    }

    /// Solves state and adjoint at `u`.
    pub fn evaluate(&self, u: &[f64], initial: Option<&FeFunction>) -> Result<Evaluation> {
        let (state, newton) = self.state(u, initial)?;
        self.evaluate_with_state(u, state, newton)
    }

    fn evaluate_with_state(&self, u: &[f64], state: FeFunction, newton: NewtonReport) -> Result<Evaluation> {
        let adjoint = self.linearization(&state)?.adjoint(&self.target)?;
        let pz = self.sources.evaluate(&adjoint);
        let alpha = self.problem.alpha;
        let gradient = pz.iter().zip(u).map(|(p, x)| p + alpha * x).collect();
        let cost = self.cost_of_state(&state, u);
        Ok(Evaluation {
            control: u.to_vec(),
            state,
            adjoint,
            cost,
            gradient,
            adjoint_at_sources: pz,
            newton,
        })
    }

    pub fn reduced_gradient(&self, u: &[f64]) -> Result<Vec<f64>> {
        Ok(self.evaluate(u, None)?.gradient)
    }

    pub fn kkt_diagnostics(&self, eval: &Evaluation) -> KktDiagnostics {
        let b = &self.problem.bounds;
        let alpha = self.problem.alpha;
        let fixed_point: Vec<f64> = eval.adjoint_at_sources.iter().map(|p| -p / alpha).collect();
        let projected = project(&fixed_point, b);
        let projection_residual = eval
            .control
            .iter()
            .zip(&projected)
            .fold(0.0, |m: f64, (u, q)| m.max((u - q).abs()));
        let active_set = eval
            .control
            .iter()
            .enumerate()
            .map(|(z, &u)| {
                if u <= b.lower[z] {
                    ActiveTag::Lower
                } else if u >= b.upper[z] {
                    ActiveTag::Upper
                } else {
                    ActiveTag::Free
                }
            })
            .collect();
        KktDiagnostics {
            psi: eval.gradient.clone(),
            projection_residual,
            active_set,
        }
    }

    /// Projected gradient with Barzilai-Borwein steps and Armijo backtracking,
    /// stopped when the projection residual is at most `tol_kkt`.
    pub fn solve_ocp(&self, u0: &[f64], initial_state: Option<&FeFunction>) -> Result<OcpSolution> {
        self.check_len(u0)?;
        let opts = self.problem.optimizer;
        let bounds = &self.problem.bounds;
        let alpha = self.problem.alpha;
        let mut u = project(u0, bounds);
        let mut cur = self.evaluate(&u, initial_state)?;
        let mut diag = self.kkt_diagnostics(&cur);
        let mut trace = vec![TraceEntry {
            iter: 0,
            j: cur.cost,
            proj_residual: diag.projection_residual,
            step: 0.0,
        }];
        let mut step = 1.0 / alpha;
        for iter in 1..=opts.max_iterations {
            if diag.projection_residual <= opts.tol_kkt {
                break;
            }
            let g = &cur.gradient;
            let mut s = step;
            let mut accepted = None;
            for _ in 0..=opts.max_backtracks {
                let trial: Vec<f64> = project(
                    &u.iter().zip(g).map(|(x, gi)| x - s * gi).collect::<Vec<_>>(),
                    bounds,
                );
                let d: Vec<f64> = trial.iter().zip(&u).map(|(a, b)| a - b).collect();
                let (y, newton) = self.state(&trial, Some(&cur.state))?;
                let j = self.cost_of_state(&y, &trial);
                // slack absorbs evaluation noise once decreases reach round-off level
                let slack = 1e-10 * cur.cost.abs();
                if j <= cur.cost + opts.armijo * dot(g, &d) + slack {
                    accepted = Some((trial, y, newton));
                    break;
                }
                s *= 0.5;
            }
            let Some((trial, y, newton)) = accepted else {
                return Err(Error::OptimizerStalled {
                    iterations: iter,
                    residual: diag.projection_residual,
                    diagnostics: Box::new(diag),
                });
            };
            let next = self.evaluate_with_state(&trial, y, newton)?;
            let sk: Vec<f64> = trial.iter().zip(&u).map(|(a, b)| a - b).collect();
            let yk: Vec<f64> = next.gradient.iter().zip(g).map(|(a, b)| a - b).collect();
            let sy = dot(&sk, &yk);
            step = if sy > 0.0 { dot(&sk, &sk) / sy } else { 1.0 / alpha };
            step = step.clamp(1e-12, 1e12);
            u = trial;
            cur = next;
            diag = self.kkt_diagnostics(&cur);
            debug!(
                "pg iter {iter}: j = {:e}, residual = {:e}, step = {s:e}",
                cur.cost, diag.projection_residual
            );
            trace.push(TraceEntry {
                iter,
                j: cur.cost,
                proj_residual: diag.projection_residual,
                step: s,
            });
        }
        if diag.projection_residual > opts.tol_kkt {
            return Err(Error::OptimizerStalled {
                iterations: opts.max_iterations,
                residual: diag.projection_residual,
                diagnostics: Box::new(diag),
            });
        }
        Ok(OcpSolution {
            control: u,
            state: cur.state,
            adjoint: cur.adjoint,
            cost: cur.cost,
            diagnostics: diag,
            trace,
        })
    }

    /// `j''(u)` assembled from one linearized solve per source.
    pub fn reduced_hessian(&self, u: &[f64]) -> Result<DMatrix<f64>> {
        let eval = self.evaluate(u, None)?;
        self.reduced_hessian_at(&eval)
    }

    pub fn reduced_hessian_at(&self, eval: &Evaluation) -> Result<DMatrix<f64>> {
        let n = self.sources.len();
        let lin = self.linearization(&eval.state)?;
        let dirs: Vec<FeFunction> = (0..n)
            .into_par_iter()
            .map(|z| {
                let mut e = vec![0.0; n];
                e[z] = 1.0;
                lin.linearized_state(&self.sources, &e)
            })
            .collect::<Result<_>>()?;
        let sp = &self.space;
        let nl = self.nl();
        let mut h = DMatrix::<f64>::zeros(n, n);
        let mut phi = vec![0.0; n];
        sp.for_each_quadrature_point(|qp, w| {
            let y = sp.value_at(&eval.state, qp);
            let p = sp.value_at(&eval.adjoint, qp);
            let weight = w * (1.0 - p * nl.a_yy(&qp.x, y));
            for (slot, d) in phi.iter_mut().zip(&dirs) {
                *slot = sp.value_at(d, qp);
            }
            for a in 0..n {
                for b in a..n {
                    h[(a, b)] += weight * phi[a] * phi[b];
                }
            }
        });
        for a in 0..n {
            h[(a, a)] += self.problem.alpha;
            for b in 0..a {
                h[(a, b)] = h[(b, a)];
            }
        }
        Ok(h)
    }

    /// Smallest eigenvalue of `j''(u)` on `{v : v_z = 0 if |psi_z| > tau}`.
    pub fn check_sosc(&self, u: &[f64], tau: f64, kappa_min: f64) -> Result<SoscReport> {
        let eval = self.evaluate(u, None)?;
        let h = self.reduced_hessian_at(&eval)?;
        Ok(sosc_report(&h, &eval.gradient, tau, kappa_min))
    }
}

/// Restricts `hessian` to the indices with `|psi_z| <= tau` and compares its
/// smallest eigenvalue with `kappa_min`.
pub fn sosc_report(hessian: &DMatrix<f64>, psi: &[f64], tau: f64, kappa_min: f64) -> SoscReport {
    let critical: Vec<usize> = psi
        .iter()
        .enumerate()
        .filter(|(_, p)| p.abs() <= tau)
        .map(|(z, _)| z)
        .collect();
    let min_eigenvalue = (!critical.is_empty()).then(|| {
        let k = critical.len();
        let sub = DMatrix::from_fn(k, k, |i, j| hessian[(critical[i], critical[j])]);
        SymmetricEigen::new(sub).eigenvalues.min()
    });
    SoscReport {
        tau,
        kappa_min,
        positive: min_eigenvalue.map_or(true, |l| l >= kappa_min),
        critical,
        min_eigenvalue,
    }
}

/// Smallest value of `psi . (v - u) / |v - u|` over `samples` random
/// feasible `v`; nonnegative up to round-off at a stationary point.
pub fn variational_inequality_margin<R: Rng>(
    u: &[f64],
    psi: &[f64],
    bounds: &ControlBounds,
    samples: usize,
    rng: &mut R,
) -> f64 {
    let mut worst = f64::INFINITY;
    for _ in 0..samples {
        let v: Vec<f64> = (0..u.len())
            .map(|z| rng.gen_range(bounds.lower[z]..=bounds.upper[z]))
            .collect();
        let d: Vec<f64> = v.iter().zip(u).map(|(a, b)| a - b).collect();
        let norm = dot(&d, &d).sqrt();
        if norm > 0.0 {
            worst = worst.min(dot(psi, &d) / norm);
        }
    }
    worst
}

/// Default `tau = 10 tol_kkt` and `kappa_min = alpha / 2`.
pub fn default_sosc_parameters(problem: &ControlProblem) -> (f64, f64) {
    (10.0 * problem.optimizer.tol_kkt, 0.5 * problem.alpha)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm_inf(&d)
}
