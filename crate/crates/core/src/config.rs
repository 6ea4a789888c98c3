//! TOML problem specifications: parsing, validation and construction of the
//! solver objects.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::control::{project, ControlBounds, ControlProblem, OptimizerOptions};
use crate::error::{Error, Result};
use crate::fem::{FeFunction, FeFunctionJson};
use crate::field::Field;
use crate::harness::Subdomain;
use crate::mesh::{box_mesh, polygon_inner_distance, refine_times, triangulate_polygon, validate_polygon, Point, TriMesh};
use crate::nonlinearity::{check_consistency, Builtin, Nonlinearity};
use crate::state::SolverOptions;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainSpec {
    /// Convex polygon, counter-clockwise.
    Polygon(Vec<[f64; 2]>),
    Box { lower: [f64; 3], upper: [f64; 3] },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TargetSpec {
    Constant { value: f64 },
    /// Closed form in `x`, `y`, `z`.
    Expression { expression: String },
    /// JSON `{mesh_level, values}` with vertex values on the domain mesh
    /// refined `mesh_level` times. Relative paths resolve against the spec file.
    FeFile { path: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToleranceSpec {
    #[serde(default = "default_lin")]
    pub lin: f64,
    #[serde(default = "default_newton")]
    pub newton: f64,
    #[serde(default = "default_kkt")]
    pub kkt: f64,
}

fn default_lin() -> f64 {
    SolverOptions::default().tol_lin
}

fn default_newton() -> f64 {
    SolverOptions::default().tol_newton
}

fn default_kkt() -> f64 {
    OptimizerOptions::default().tol_kkt
}

impl Default for ToleranceSpec {
    fn default() -> Self {
        ToleranceSpec {
            lin: default_lin(),
            newton: default_newton(),
            kkt: default_kkt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub dimension: usize,
    pub points: Vec<Vec<f64>>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub alpha: f64,
    #[serde(default)]
    pub seed: u64,
    /// Fixed control for `solve` and the fixed-control studies; defaults to
    /// the projection of the all-ones vector.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub control: Option<Vec<f64>>,
    pub domain: DomainSpec,
    pub target: TargetSpec,
    pub nonlinearity: Builtin,
    #[serde(default)]
    pub tolerances: ToleranceSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subdomain: Option<Subdomain>,
}

/// Everything needed to run solves and studies for one spec.
#[derive(Debug)]
pub struct Model {
    pub problem: Arc<ControlProblem>,
    pub base_mesh: Arc<TriMesh>,
    pub control: Vec<f64>,
    pub subdomain: Subdomain,
}

/// Reads, parses and validates a spec file.
pub fn parse_spec(path: &Path) -> Result<ProblemSpec> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        context: format!("reading {}", path.display()),
        source,
    })?;
    let spec = parse_spec_str(&text)?;
    Ok(spec)
}

pub fn parse_spec_str(text: &str) -> Result<ProblemSpec> {
    let spec: ProblemSpec = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    spec.validate()?;
    Ok(spec)
}

pub fn emit_spec(spec: &ProblemSpec) -> String {
    toml::to_string(spec).expect("spec serializes to TOML")
}

impl ProblemSpec {
    /// Checks every invariant and reports all violations together.
    pub fn validate(&self) -> Result<()> {
        let mut v = Vec::new();
        let d = self.dimension;
        if d != 2 && d != 3 {
            v.push(format!("dimension must be 2 or 3, got {d}"));
        }
        match (&self.domain, d) {
            (DomainSpec::Polygon(poly), 2) => {
                if let Err(e) = validate_polygon(poly) {
                    v.push(format!("domain: {e}"));
                }
            }
            (DomainSpec::Box { lower, upper }, 3) => {
                if (0..3).any(|k| !(lower[k] < upper[k]) || !lower[k].is_finite() || !upper[k].is_finite()) {
                    v.push("domain: box needs finite lower < upper in every coordinate".into());
                }
            }
            (DomainSpec::Polygon(_), _) => v.push("domain: polygons require dimension 2".into()),
            (DomainSpec::Box { .. }, _) => v.push("domain: boxes require dimension 3".into()),
        }
        if self.points.is_empty() {
            v.push("points: at least one source point is required".into());
        }
        for (z, p) in self.points.iter().enumerate() {
            if p.len() != d {
                v.push(format!("points[{z}] has {} coordinates, expected {d}", p.len()));
            } else if !(self.inner_distance(p) > 0.0) {
                v.push(format!("points[{z}] {p:?} is not strictly inside the domain"));
            }
        }
        let n = self.points.len();
        if self.lower.len() != n {
            v.push(format!("lower has {} entries for {n} points", self.lower.len()));
        }
        if self.upper.len() != n {
            v.push(format!("upper has {} entries for {n} points", self.upper.len()));
        }
        for (z, (a, b)) in self.lower.iter().zip(&self.upper).enumerate() {
            if !(a < b) {
                v.push(format!("bounds[{z}]: lower {a} must be < upper {b}"));
            }
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            v.push(format!("alpha must be positive and finite, got {}", self.alpha));
        }
        match &self.target {
            TargetSpec::Constant { value } if !value.is_finite() => {
                v.push(format!("target: constant {value} is not finite"));
            }
            TargetSpec::Expression { expression } => {
                if let Err(e) = Field::expression(expression) {
                    v.push(format!("target: {e}"));
                }
            }
            _ => {}
        }
        let c = self.nonlinearity.coefficient();
        if !(c >= 0.0 && c.is_finite()) {
            v.push(format!("nonlinearity: coefficient must be nonnegative, got {c}"));
        }
        let meta = self.nonlinearity.metadata();
        if d == 3 && meta.growth_exponent >= 2.0 {
            v.push(format!(
                "nonlinearity: {} grows with exponent {}; three-dimensional problems need an exponent below 2",
                meta.name, meta.growth_exponent
            ));
        }
        let t = &self.tolerances;
        for (name, value) in [("lin", t.lin), ("newton", t.newton), ("kkt", t.kkt)] {
            if !(value > 0.0 && value.is_finite()) {
                v.push(format!("tolerances.{name} must be positive, got {value}"));
            }
        }
        if self.seed > i64::MAX as u64 {
            v.push(format!("seed {} does not fit a TOML integer", self.seed));
        }
        if let Some(u) = &self.control {
            if u.len() != n {
                v.push(format!("control has {} entries for {n} points", u.len()));
            }
            for (z, x) in u.iter().enumerate() {
                if z < self.lower.len().min(self.upper.len()) && !(self.lower[z] <= *x && *x <= self.upper[z]) {
                    v.push(format!("control[{z}] = {x} violates its bounds"));
                }
            }
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(v))
        }
    }

    fn inner_distance(&self, p: &[f64]) -> f64 {
        match &self.domain {
            DomainSpec::Polygon(poly) => polygon_inner_distance(poly, [p[0], p[1]]),
            DomainSpec::Box { lower, upper } => (0..3)
                .map(|k| (p[k] - lower[k]).min(upper[k] - p[k]))
                .fold(f64::INFINITY, f64::min),
        }
    }

    pub fn points(&self) -> Vec<Point> {
        self.points
            .iter()
            .map(|p| [p[0], p[1], p.get(2).copied().unwrap_or(0.0)])
            .collect()
    }

    pub fn base_mesh(&self) -> Result<Arc<TriMesh>> {
        Ok(Arc::new(match &self.domain {
            DomainSpec::Polygon(poly) => triangulate_polygon(poly)?,
            DomainSpec::Box { lower, upper } => box_mesh(*lower, *upper)?,
        }))
    }

    /// Builds the problem; `base_dir` resolves relative target file paths.
    pub fn build(&self, base_dir: &Path) -> Result<Model> {
        self.validate()?;
        let base_mesh = self.base_mesh()?;
        let nl: Arc<dyn Nonlinearity> = Arc::new(self.nonlinearity);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        check_consistency(nl.as_ref(), self.dimension, 200, &mut rng)
            .map_err(|e| Error::Validation(vec![format!("nonlinearity: {e}")]))?;
        let target = match &self.target {
            TargetSpec::Constant { value } => Field::Constant(*value),
            TargetSpec::Expression { expression } => Field::expression(expression)?,
            TargetSpec::FeFile { path } => Field::Fe(load_fe_file(&base_dir.join(path), &base_mesh)?),
        };
        let bounds = ControlBounds::new(self.lower.clone(), self.upper.clone())?;
        let control = match &self.control {
            Some(u) => u.clone(),
            None => project(&vec![1.0; self.points.len()], &bounds),
        };
        let points = self.points();
        let subdomain = match &self.subdomain {
            Some(s) => s.clone(),
            None => Subdomain::default_containing(base_mesh.shape(), &points),
        };
        let problem = Arc::new(ControlProblem {
            points,
            bounds,
            alpha: self.alpha,
            target,
            nonlinearity: nl,
            solver: SolverOptions {
                tol_lin: self.tolerances.lin,
                tol_newton: self.tolerances.newton,
                ..SolverOptions::default()
            },
            optimizer: OptimizerOptions {
                tol_kkt: self.tolerances.kkt,
                ..OptimizerOptions::default()
            },
        });
        Ok(Model {
            problem,
            base_mesh,
            control,
            subdomain,
        })
    }
}

fn load_fe_file(path: &Path, base: &Arc<TriMesh>) -> Result<FeFunction> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        context: format!("reading {}", path.display()),
        source,
    })?;
    let data: FeFunctionJson =
        serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    let mesh = refine_times(base, data.mesh_level);
    FeFunction::from_vertex_values(&mesh, data.values)
}
