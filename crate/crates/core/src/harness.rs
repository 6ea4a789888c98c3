//! Mesh-refinement studies: errors of coarse solutions against a fine
//! reference solution, fitted convergence rates, CSV and JSON reports.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::{default_sosc_parameters, max_abs_diff, ControlProblem, DiscreteProblem, Evaluation, SoscReport};
use crate::error::{Error, Result};
use crate::fem::{norm_errors, Comparand, FeFunction};
use crate::mesh::{polygon_inner_distance, validate_polygon, DomainShape, Point, TriMesh};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    StateL2,
    StateL1,
    AdjointLinf,
    GradientGap,
    ControlErr,
}

impl Quantity {
    pub const ALL: [Quantity; 5] = [
        Quantity::StateL2,
        Quantity::StateL1,
        Quantity::AdjointLinf,
        Quantity::GradientGap,
        Quantity::ControlErr,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Quantity::StateL2 => "state_l2",
            Quantity::StateL1 => "state_l1",
            Quantity::AdjointLinf => "adjoint_linf",
            Quantity::GradientGap => "gradient_gap",
            Quantity::ControlErr => "control_err",
        }
    }

    /// Power `m` of the `|log h|` factor in the expected error bound.
    pub fn log_power(self) -> i32 {
        match self {
            Quantity::StateL2 => 0,
            Quantity::StateL1 | Quantity::AdjointLinf => 2,
            Quantity::GradientGap | Quantity::ControlErr => 3,
        }
    }

    /// Only the state studies are meaningful in three dimensions.
    pub fn supports_dim(self, dim: usize) -> bool {
        dim == 2 || matches!(self, Quantity::StateL2 | Quantity::StateL1)
    }
}

impl fmt::Display for Quantity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Quantity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Quantity> {
        Quantity::ALL
            .into_iter()
            .find(|q| q.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown quantity {s:?}")))
    }
}

/// The interior subdomain on which the adjoint max-norm error is measured.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Subdomain {
    Polygon { vertices: Vec<[f64; 2]> },
    Box { lower: [f64; 3], upper: [f64; 3] },
}

impl Subdomain {
    /// The domain scaled by one half about its centre.
    pub fn default_for(shape: &DomainShape) -> Subdomain {
        match shape {
            DomainShape::Polygon(poly) => {
                let n = poly.len() as f64;
                let cx = poly.iter().map(|p| p[0]).sum::<f64>() / n;
                let cy = poly.iter().map(|p| p[1]).sum::<f64>() / n;
                Subdomain::Polygon {
                    vertices: poly.iter().map(|p| [0.5 * (p[0] + cx), 0.5 * (p[1] + cy)]).collect(),
                }
            }
            DomainShape::Box { lower, upper, .. } => {
                let mut lo = [0.0; 3];
                let mut hi = [0.0; 3];
                for k in 0..3 {
                    let c = 0.5 * (lower[k] + upper[k]);
                    let r = 0.25 * (upper[k] - lower[k]);
                    lo[k] = c - r;
                    hi[k] = c + r;
                }
                Subdomain::Box { lower: lo, upper: hi }
            }
        }
    }

    /// The default subdomain, widened towards the full domain when some
    /// point lies on or outside its boundary.
    pub fn default_containing(shape: &DomainShape, points: &[Point]) -> Subdomain {
        let half = Subdomain::default_for(shape);
        let mut scale = 0.5;
        let mut candidate = half.clone();
        for _ in 0..6 {
            if points.iter().all(|p| candidate.inner_distance(p) > 0.0) {
                return candidate;
            }
            scale = 0.5 * (1.0 + scale);
            candidate = half.scaled_about_centre(scale / 0.5);
        }
        half
    }

    fn scaled_about_centre(&self, factor: f64) -> Subdomain {
        match self {
            Subdomain::Polygon { vertices } => {
                let n = vertices.len() as f64;
                let cx = vertices.iter().map(|p| p[0]).sum::<f64>() / n;
                let cy = vertices.iter().map(|p| p[1]).sum::<f64>() / n;
                Subdomain::Polygon {
                    vertices: vertices
                        .iter()
                        .map(|p| [cx + factor * (p[0] - cx), cy + factor * (p[1] - cy)])
                        .collect(),
                }
            }
            Subdomain::Box { lower, upper } => {
                let mut lo = *lower;
                let mut hi = *upper;
                for k in 0..3 {
                    let c = 0.5 * (lower[k] + upper[k]);
                    lo[k] = c + factor * (lower[k] - c);
                    hi[k] = c + factor * (upper[k] - c);
                }
                Subdomain::Box { lower: lo, upper: hi }
            }
        }
    }

    /// Distance from `p` to the boundary of the subdomain, positive inside.
    pub fn inner_distance(&self, p: &Point) -> f64 {
        match self {
            Subdomain::Polygon { vertices } => polygon_inner_distance(vertices, [p[0], p[1]]),
            Subdomain::Box { lower, upper } => (0..3)
                .map(|k| (p[k] - lower[k]).min(upper[k] - p[k]))
                .fold(f64::INFINITY, f64::min),
        }
    }

    pub fn contains(&self, p: &Point) -> bool {
        self.inner_distance(p) >= -1e-12
    }

    fn corners(&self) -> Vec<Point> {
        match self {
            Subdomain::Polygon { vertices } => vertices.iter().map(|v| [v[0], v[1], 0.0]).collect(),
            Subdomain::Box { lower, upper } => (0..8)
                .map(|m| {
                    let mut p = [0.0; 3];
                    for k in 0..3 {
                        p[k] = if m >> k & 1 == 1 { upper[k] } else { lower[k] };
                    }
                    p
                })
                .collect(),
        }
    }

    fn validate(&self, mesh: &TriMesh, points: &[Point], problems: &mut Vec<String>) {
        match (self, mesh.dim()) {
            (Subdomain::Polygon { vertices }, 2) => {
                if let Err(e) = validate_polygon(vertices) {
                    problems.push(format!("subdomain: {e}"));
                    return;
                }
            }
            (Subdomain::Box { lower, upper }, 3) => {
                if (0..3).any(|k| !(lower[k] < upper[k])) {
                    problems.push("subdomain: degenerate box".into());
                    return;
                }
            }
            _ => {
                problems.push(format!("subdomain kind does not match dimension {}", mesh.dim()));
                return;
            }
        }
        // both sets are convex, so checking the corners suffices
        if !self.corners().iter().all(|c| mesh.domain_contains_strictly(c, 0.0)) {
            problems.push("subdomain must have positive distance to the domain boundary".into());
        }
        for (z, p) in points.iter().enumerate() {
            if self.inner_distance(p) <= 0.0 {
                problems.push(format!("point {z} {p:?} is not strictly inside the subdomain"));
            }
        }
    }
}

pub struct StudyPlan {
    pub problem: Arc<ControlProblem>,
    /// Level-0 mesh of the domain.
    pub base_mesh: Arc<TriMesh>,
    /// Fixed control for the state, adjoint and gradient studies.
    pub control: Vec<f64>,
    pub levels: Vec<usize>,
    pub reference_level: usize,
    pub quantities: Vec<Quantity>,
    pub subdomain: Subdomain,
}

impl StudyPlan {
    /// Plan with default reference level `max + 2` and the default subdomain.
    pub fn new(
        problem: Arc<ControlProblem>,
        base_mesh: Arc<TriMesh>,
        control: Vec<f64>,
        levels: Vec<usize>,
        quantities: Vec<Quantity>,
    ) -> StudyPlan {
        let reference_level = levels.iter().max().map_or(2, |m| m + 2);
        let subdomain = Subdomain::default_containing(base_mesh.shape(), &problem.points);
        StudyPlan {
            problem,
            base_mesh,
            control,
            levels,
            reference_level,
            quantities,
            subdomain,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        let mut levels = self.levels.clone();
        levels.sort_unstable();
        levels.dedup();
        if levels.len() != self.levels.len() {
            problems.push("levels must be distinct".into());
        }
        if levels.len() < 3 {
            problems.push(format!("at least 3 levels are needed for a rate fit, got {}", levels.len()));
        }
        if let Some(&max) = levels.last() {
            if self.reference_level < max + 2 {
                problems.push(format!(
                    "reference level {} must be at least max level + 2 = {}",
                    self.reference_level,
                    max + 2
                ));
            }
        }
        if self.quantities.is_empty() {
            problems.push("no quantities requested".into());
        }
        let dim = self.base_mesh.dim();
        for q in &self.quantities {
            if !q.supports_dim(dim) {
                problems.push(format!("quantity {q} is only available in two dimensions"));
            }
        }
        if self.control.len() != self.problem.n_controls() {
            problems.push(format!(
                "control has {} entries for {} points",
                self.control.len(),
                self.problem.n_controls()
            ));
        }
        self.subdomain.validate(&self.base_mesh, &self.problem.points, &mut problems);
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }

    fn wants(&self, q: Quantity) -> bool {
        self.quantities.contains(&q)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Least-squares fit of `log error = slope * log h + intercept`. Pairs with a
/// nonpositive or non-finite error are dropped.
pub fn fit_rate(pairs: &[(f64, f64)]) -> Result<RateFit> {
    let pts: Vec<(f64, f64)> = pairs
        .iter()
        .filter(|&&(h, e)| {
            let keep = h > 0.0 && e > 0.0 && e.is_finite();
            if !keep {
                warn!("dropping pair (h = {h:e}, error = {e:e}) from rate fit");
            }
            keep
        })
        .map(|&(h, e)| (h.ln(), e.ln()))
        .collect();
    if pts.len() < 3 {
        return Err(Error::InsufficientData(pts.len()));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InsufficientData(1));
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(RateFit {
        slope,
        intercept: my - slope * mx,
        r2,
    })
}

/// Rate of `error / |log h|^m`, i.e. the exponent `k` in `error ~ h^k |log h|^m`.
pub fn fit_log_corrected_rate(pairs: &[(f64, f64)], log_power: i32) -> Result<RateFit> {
    let scaled: Vec<(f64, f64)> = pairs
        .iter()
        .map(|&(h, e)| (h, e / h.ln().abs().powi(log_power)))
        .collect();
    fit_rate(&scaled)
}

/// Nonincreasing over the last three values, tolerating one increase of at most 5%.
pub fn is_monotone_tail(errors: &[f64]) -> bool {
    let tail = &errors[errors.len().saturating_sub(3)..];
    let mut increases = 0;
    for w in tail.windows(2) {
        if w[1] > w[0] {
            if w[1] > 1.05 * w[0] {
                return false;
            }
            increases += 1;
        }
    }
    increases <= 1
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelRow {
    pub level: usize,
    pub h: f64,
    pub state_l2: Option<f64>,
    pub state_l1: Option<f64>,
    pub adjoint_linf: Option<f64>,
    pub gradient_gap: Option<f64>,
    pub control_err: Option<f64>,
    /// Discrete optimal control, for control studies.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub control: Option<Vec<f64>>,
}

impl LevelRow {
    fn new(level: usize, h: f64) -> LevelRow {
        LevelRow {
            level,
            h,
            state_l2: None,
            state_l1: None,
            adjoint_linf: None,
            gradient_gap: None,
            control_err: None,
            control: None,
        }
    }

    pub fn get(&self, q: Quantity) -> Option<f64> {
        match q {
            Quantity::StateL2 => self.state_l2,
            Quantity::StateL1 => self.state_l1,
            Quantity::AdjointLinf => self.adjoint_linf,
            Quantity::GradientGap => self.gradient_gap,
            Quantity::ControlErr => self.control_err,
        }
    }

    fn set(&mut self, q: Quantity, v: f64) {
        let slot = match q {
            Quantity::StateL2 => &mut self.state_l2,
            Quantity::StateL1 => &mut self.state_l1,
            Quantity::AdjointLinf => &mut self.adjoint_linf,
            Quantity::GradientGap => &mut self.gradient_gap,
            Quantity::ControlErr => &mut self.control_err,
        };
        *slot = Some(v);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuantityReport {
    pub quantity: Quantity,
    pub log_power: i32,
    /// `None` when fewer than three positive errors remain.
    pub rate: Option<RateFit>,
    pub log_corrected_rate: Option<RateFit>,
    pub monotone: bool,
    /// Error of the level `reference - 1` solution against the reference.
    pub reference_error: f64,
    /// `reference_error <= coarsest error / 4`.
    pub reference_valid: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub dim: usize,
    pub reference_level: usize,
    pub rows: Vec<LevelRow>,
    pub quantities: Vec<QuantityReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference_control: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sosc: Option<SoscReport>,
}

impl ConvergenceReport {
    pub fn quantity(&self, q: Quantity) -> Option<&QuantityReport> {
        self.quantities.iter().find(|r| r.quantity == q)
    }

    pub fn slope(&self, q: Quantity) -> Option<f64> {
        self.quantity(q).and_then(|r| r.rate).map(|f| f.slope)
    }

    pub fn errors(&self, q: Quantity) -> Vec<(f64, f64)> {
        self.rows.iter().filter_map(|r| r.get(q).map(|e| (r.h, e))).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("level,h,state_l2,state_l1,adjoint_linf,gradient_gap,control_err\n");
        for r in &self.rows {
            out.push_str(&format!("{},{}", r.level, r.h));
            for q in Quantity::ALL {
                out.push(',');
                if let Some(v) = r.get(q) {
                    out.push_str(&format!("{v:e}"));
                }
            }
            out.push('\n');
        }
        out
    }

    /// Writes `convergence.csv` and `convergence.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let io = |context: String| move |source| Error::Io { context, source };
        std::fs::create_dir_all(dir).map_err(io(format!("creating {}", dir.display())))?;
        let csv = dir.join("convergence.csv");
        std::fs::write(&csv, self.to_csv()).map_err(io(format!("writing {}", csv.display())))?;
        let json = dir.join("convergence.json");
        let mut f = std::fs::File::create(&json).map_err(io(format!("writing {}", json.display())))?;
        let text = serde_json::to_string_pretty(self).expect("report serializes");
        writeln!(f, "{text}").map_err(io(format!("writing {}", json.display())))?;
        Ok(())
    }
}

/// Meshes of levels `0..=top`, each refined from the previous one.
fn hierarchy(base: &Arc<TriMesh>, top: usize) -> Vec<Arc<TriMesh>> {
    let mut meshes = vec![Arc::clone(base)];
    for _ in 0..top {
        let next = crate::mesh::refine_uniform(meshes.last().unwrap());
        meshes.push(next);
    }
    meshes
}

struct LevelSolution {
    level: usize,
    dp: DiscreteProblem,
    eval: Evaluation,
}

/// Runs every requested study of `plan` on a pool of `threads` workers.
pub fn run_study(plan: &StudyPlan, threads: usize) -> Result<ConvergenceReport> {
    plan.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::Validation(vec![format!("thread pool: {e}")]))?;
    pool.install(|| run_study_inner(plan))
}

pub fn run_state_study(plan: &StudyPlan, threads: usize) -> Result<ConvergenceReport> {
    run_subset(plan, &[Quantity::StateL2, Quantity::StateL1], threads)
}

pub fn run_adjoint_study(plan: &StudyPlan, threads: usize) -> Result<ConvergenceReport> {
    run_subset(plan, &[Quantity::AdjointLinf], threads)
}

pub fn run_gradient_gap_study(plan: &StudyPlan, threads: usize) -> Result<ConvergenceReport> {
    run_subset(plan, &[Quantity::GradientGap], threads)
}

pub fn run_control_study(plan: &StudyPlan, threads: usize) -> Result<ConvergenceReport> {
    run_subset(plan, &[Quantity::ControlErr], threads)
}

fn run_subset(plan: &StudyPlan, qs: &[Quantity], threads: usize) -> Result<ConvergenceReport> {
    let sub = StudyPlan {
        problem: Arc::clone(&plan.problem),
        base_mesh: Arc::clone(&plan.base_mesh),
        control: plan.control.clone(),
        levels: plan.levels.clone(),
        reference_level: plan.reference_level,
        quantities: qs.to_vec(),
        subdomain: plan.subdomain.clone(),
    };
    run_study(&sub, threads)
}

fn run_study_inner(plan: &StudyPlan) -> Result<ConvergenceReport> {
    let mut levels = plan.levels.clone();
    levels.sort_unstable();
    let reference = plan.reference_level;
    let meshes = hierarchy(&plan.base_mesh, reference);
    let mut rows: Vec<LevelRow> = levels.iter().map(|&l| LevelRow::new(l, meshes[l].h())).collect();
    let mut reference_errors: Vec<(Quantity, f64)> = Vec::new();

    let fixed: Vec<Quantity> = plan
        .quantities
        .iter()
        .copied()
        .filter(|q| *q != Quantity::ControlErr)
        .collect();
    if !fixed.is_empty() {
        let mut all_levels = levels.clone();
        all_levels.extend([reference - 1, reference]);
        let solutions: Vec<LevelSolution> = all_levels
            .par_iter()
            .map(|&level| {
                let dp = DiscreteProblem::new(Arc::clone(&plan.problem), Arc::clone(&meshes[level]))
                    .map_err(|e| e.at_level(level))?;
                let eval = dp.evaluate(&plan.control, None).map_err(|e| e.at_level(level))?;
                info!("level {level}: state and adjoint solved ({})", eval.newton);
                Ok(LevelSolution { level, dp, eval })
            })
            .collect::<Result<_>>()?;
        let (reference_solution, coarse) = solutions.split_last().unwrap();
        for s in coarse {
            let errs = fixed_errors(plan, &fixed, reference_solution, s)?;
            if s.level == reference - 1 {
                reference_errors.extend(errs);
            } else {
                let row = rows.iter_mut().find(|r| r.level == s.level).unwrap();
                for (q, e) in errs {
                    row.set(q, e);
                }
            }
        }
    }

    let mut reference_control = None;
    let mut sosc = None;
    if plan.wants(Quantity::ControlErr) {
        let mut all_levels = levels.clone();
        all_levels.extend([reference - 1, reference]);
        let mut u = plan.control.clone();
        let mut previous_state: Option<FeFunction> = None;
        let mut controls = Vec::new();
        let mut last_dp = None;
        for &level in &all_levels {
            let dp = DiscreteProblem::new(Arc::clone(&plan.problem), Arc::clone(&meshes[level]))
                .map_err(|e| e.at_level(level))?;
            let warm = match &previous_state {
                Some(y) => Some(y.prolongate(&meshes[level]).map_err(|e| e.at_level(level))?),
                None => None,
            };
            let sol = dp.solve_ocp(&u, warm.as_ref()).map_err(|e| e.at_level(level))?;
            info!(
                "level {level}: control solved in {} iterations, residual {:e}",
                sol.trace.len() - 1,
                sol.diagnostics.projection_residual
            );
            u = sol.control.clone();
            previous_state = Some(sol.state);
            controls.push((level, sol.control));
            last_dp = Some(dp);
        }
        let (_, u_ref) = controls.last().unwrap().clone();
        for (level, ctrl) in &controls[..controls.len() - 1] {
            let e = max_abs_diff(ctrl, &u_ref);
            if *level == reference - 1 {
                reference_errors.push((Quantity::ControlErr, e));
            } else {
                let row = rows.iter_mut().find(|r| r.level == *level).unwrap();
                row.set(Quantity::ControlErr, e);
                row.control = Some(ctrl.clone());
            }
        }
        let dp = last_dp.unwrap();
        let (tau, kappa) = default_sosc_parameters(&plan.problem);
        let report = dp.check_sosc(&u_ref, tau, kappa).map_err(|e| e.at_level(reference))?;
        if !report.positive {
            warn!("second-order sufficiency check failed at the reference solution");
        }
        sosc = Some(report);
        reference_control = Some(u_ref);
    }

    let quantities = Quantity::ALL
        .into_iter()
        .filter(|q| plan.wants(*q))
        .map(|q| {
            let pairs: Vec<(f64, f64)> = rows.iter().filter_map(|r| r.get(q).map(|e| (r.h, e))).collect();
            let errors: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            let reference_error = reference_errors
                .iter()
                .find(|(r, _)| *r == q)
                .map_or(f64::NAN, |(_, e)| *e);
            let coarsest = errors.first().copied().unwrap_or(f64::NAN);
            let reference_valid = reference_error <= 0.25 * coarsest;
            if !reference_valid {
                warn!("{q}: reference error {reference_error:e} exceeds a quarter of the coarsest error {coarsest:e}");
            }
            let rate = fit_rate(&pairs).ok();
            let log_corrected_rate = fit_log_corrected_rate(&pairs, q.log_power()).ok();
            QuantityReport {
                quantity: q,
                log_power: q.log_power(),
                rate,
                log_corrected_rate,
                monotone: is_monotone_tail(&errors),
                reference_error,
                reference_valid,
            }
        })
        .collect();

    Ok(ConvergenceReport {
        dim: plan.base_mesh.dim(),
        reference_level: reference,
        rows,
        quantities,
        reference_control,
        sosc,
    })
}

fn fixed_errors(
    plan: &StudyPlan,
    qs: &[Quantity],
    reference: &LevelSolution,
    coarse: &LevelSolution,
) -> Result<Vec<(Quantity, f64)>> {
    let space = reference.dp.space();
    let annotate = |e: Error| e.at_level(coarse.level);
    let mut out = Vec::new();
    if qs.iter().any(|q| matches!(q, Quantity::StateL2 | Quantity::StateL1)) {
        let n = norm_errors(space, &reference.eval.state, Comparand::Fe(&coarse.eval.state), None).map_err(annotate)?;
        for &q in qs {
            match q {
                Quantity::StateL2 => out.push((q, n.l2)),
                Quantity::StateL1 => out.push((q, n.l1)),
                _ => {}
            }
        }
    }
    if qs.contains(&Quantity::AdjointLinf) {
        let inside = |p: &Point| plan.subdomain.contains(p);
        let n = norm_errors(
            space,
            &reference.eval.adjoint,
            Comparand::Fe(&coarse.eval.adjoint),
            Some(&inside),
        )
        .map_err(annotate)?;
        out.push((Quantity::AdjointLinf, n.linf));
    }
    if qs.contains(&Quantity::GradientGap) {
        out.push((
            Quantity::GradientGap,
            max_abs_diff(&coarse.eval.gradient, &reference.eval.gradient),
        ));
    }
    Ok(out)
}
