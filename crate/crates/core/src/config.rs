//! Experiment configuration: JSON schema with strict validation, field and
//! source/boundary selection, and named presets for the reference problems.

use crate::coefficient::{AffineCoefficient, ThetaDescriptor, ThetaKind};
use crate::grid::{build_mesh, StructuredMesh};
use crate::raster::Raster;
use crate::{Error, Result};
use std::path::Path;

/// A pointwise scalar field such as a source term or boundary data.
pub type ScalarField = Box<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// One kappa_q field: a raster file or a built-in generator.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case", tag = "kind")]
pub enum FieldConfig {
    /// Text raster with one value per fine cell.
    Raster { path: String },
    /// The oscillatory field x^2 y + 1 / (3 + 2.8 sin(15 pi (x - y))).
    Periodic,
    /// Background-1 field with seeded random high-contrast inclusions.
    Contrast { seed: u64, tau: f64 },
    Constant { value: f64 },
}

/// One affine coefficient term: Theta family, parameter component, field.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermConfig {
    pub theta: ThetaKind,
    pub component: usize,
    pub field: FieldConfig,
}

/// Source-term selection.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case", tag = "kind")]
pub enum SourceConfig {
    /// pi^2 (2 + y) sin(pi x) sin(pi y) + 2 pi^2 x cos(pi x) cos(pi y).
    Paper41,
    Constant { value: f64 },
    /// Cell raster looked up at the containing fine cell.
    Raster { path: String },
}

/// Dirichlet boundary-data selection.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case", tag = "kind")]
pub enum BoundaryConfig {
    /// sin(pi x) sin(pi y) + y + 0.1.
    Paper41,
    /// y + 0.1 + 0.35 (cos(12 pi x) + cos(12 pi y)): an injection profile
    /// oscillating below the coarse scale, for the high-contrast presets.
    Oscillatory,
    Constant { value: f64 },
    Raster { path: String },
}

/// Predictor family trained in the offline stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorKind {
    Gpc,
    Gpr,
}

/// Full experiment description; the JSON schema rejects unknown keys.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub fine_nx: usize,
    pub fine_ny: usize,
    pub coarse_nx: usize,
    pub coarse_ny: usize,
    /// Parameter dimension M.
    pub m: usize,
    pub terms: Vec<TermConfig>,
    pub source: SourceConfig,
    pub boundary: BoundaryConfig,
    /// Training sample count.
    pub n_s: usize,
    pub seed: u64,
    /// gPC total degree.
    pub p: usize,
    /// POD energy tolerance.
    pub epsilon: f64,
    /// Retained spectral modes per neighborhood.
    pub l: usize,
    pub predictor: PredictorKind,
    pub mu_star: Vec<Vec<f64>>,
    pub output_dir: String,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        build_mesh(self.fine_nx, self.fine_ny, self.coarse_nx, self.coarse_ny)?;
        if self.m == 0 {
            return Err(Error::Config("parameter dimension m must be at least 1".into()));
        }
        if self.terms.is_empty() {
            return Err(Error::Config("at least one coefficient term is required".into()));
        }
        for (q, t) in self.terms.iter().enumerate() {
            if t.component >= self.m {
                return Err(Error::Config(format!(
                    "term {q} uses component {} but m = {}",
                    t.component, self.m
                )));
            }
            if let FieldConfig::Contrast { tau, .. } = t.field {
                if tau <= 1.0 {
                    return Err(Error::Config(format!(
                        "term {q} contrast tau must exceed 1, got {tau}"
                    )));
                }
            }
            if let FieldConfig::Constant { value } = t.field {
                if value <= 0.0 {
                    return Err(Error::Config(format!(
                        "term {q} constant field must be positive, got {value}"
                    )));
                }
            }
        }
        if self.n_s == 0 {
            return Err(Error::Config("n_s must be at least 1".into()));
        }
        if self.l == 0 {
            return Err(Error::Config("l must be at least 1".into()));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::Config(format!(
                "epsilon must lie in (0, 1), got {}",
                self.epsilon
            )));
        }
        for (i, mu) in self.mu_star.iter().enumerate() {
            if mu.len() != self.m {
                return Err(Error::Config(format!(
                    "mu_star[{i}] has {} components, expected m = {}",
                    mu.len(),
                    self.m
                )));
            }
            for t in &self.terms {
                let d = ThetaDescriptor { kind: t.theta, component: t.component };
                if !d.admissible(mu) {
                    return Err(Error::Config(format!(
                        "mu_star[{i}] = {mu:?} is inadmissible for component {}",
                        t.component
                    )));
                }
            }
        }
        if self.output_dir.is_empty() {
            return Err(Error::Config("output_dir must not be empty".into()));
        }
        Ok(())
    }

    pub fn mesh(&self) -> Result<StructuredMesh> {
        build_mesh(self.fine_nx, self.fine_ny, self.coarse_nx, self.coarse_ny)
    }

    /// Builds the affine coefficient; raster paths resolve against base_dir.
    pub fn coefficient(
        &self,
        mesh: &StructuredMesh,
        base_dir: &Path,
    ) -> Result<AffineCoefficient> {
        let mut terms = Vec::with_capacity(self.terms.len());
        for t in &self.terms {
            let raster = match &t.field {
                FieldConfig::Raster { path } => {
                    let r = Raster::load(&base_dir.join(path))?;
                    if r.nx() != mesh.nx() || r.ny() != mesh.ny() {
                        return Err(Error::Config(format!(
                            "raster {path} is {}x{} but the fine grid is {}x{}",
                            r.nx(),
                            r.ny(),
                            mesh.nx(),
                            mesh.ny()
                        )));
                    }
                    r
                }
                FieldConfig::Periodic => crate::coefficient::analytic_periodic_field(mesh),
                FieldConfig::Contrast { seed, tau } => {
                    crate::coefficient::synth_contrast_field(mesh, *seed, *tau)?
                }
                FieldConfig::Constant { value } => {
                    Raster::constant(mesh.nx(), mesh.ny(), *value)
                }
            };
            terms.push((ThetaDescriptor { kind: t.theta, component: t.component }, raster));
        }
        AffineCoefficient::new(terms, self.m)
    }

    pub fn source_fn(&self, mesh: &StructuredMesh, base_dir: &Path) -> Result<ScalarField> {
        match &self.source {
            SourceConfig::Paper41 => Ok(Box::new(paper41_source)),
            SourceConfig::Constant { value } => {
                let v = *value;
                Ok(Box::new(move |_, _| v))
            }
            SourceConfig::Raster { path } => raster_field(mesh, &base_dir.join(path)),
        }
    }

    pub fn boundary_fn(&self, mesh: &StructuredMesh, base_dir: &Path) -> Result<ScalarField> {
        match &self.boundary {
            BoundaryConfig::Paper41 => Ok(Box::new(paper41_boundary)),
            BoundaryConfig::Oscillatory => Ok(Box::new(oscillatory_boundary)),
            BoundaryConfig::Constant { value } => {
                let v = *value;
                Ok(Box::new(move |_, _| v))
            }
            BoundaryConfig::Raster { path } => raster_field(mesh, &base_dir.join(path)),
        }
    }

    /// Theta weights straight from the descriptors; needs no field data, so
    /// artifact-only online runs never touch rasters.
    pub fn thetas(&self, mu: &[f64]) -> Result<Vec<f64>> {
        if mu.len() != self.m {
            return Err(Error::Config(format!(
                "parameter length {} does not match M={}",
                mu.len(),
                self.m
            )));
        }
        self.terms
            .iter()
            .map(|t| ThetaDescriptor { kind: t.theta, component: t.component }.eval(mu))
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<ExperimentConfig> {
        let cfg: ExperimentConfig = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("config parse error: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Reads and validates a JSON config file.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    ExperimentConfig::from_json(&text)
}

fn paper41_source(x: f64, y: f64) -> f64 {
    let pi = std::f64::consts::PI;
    pi * pi * (2.0 + y) * (pi * x).sin() * (pi * y).sin()
        + 2.0 * pi * pi * x * (pi * x).cos() * (pi * y).cos()
}

fn paper41_boundary(x: f64, y: f64) -> f64 {
    let pi = std::f64::consts::PI;
    (pi * x).sin() * (pi * y).sin() + y + 0.1
}

fn oscillatory_boundary(x: f64, y: f64) -> f64 {
    let pi = std::f64::consts::PI;
    y + 0.1 + 0.35 * ((12.0 * pi * x).cos() + (12.0 * pi * y).cos())
}

/// Wraps a cell raster as a point function via containing-cell lookup.
fn raster_field(mesh: &StructuredMesh, path: &Path) -> Result<ScalarField> {
    let r = Raster::load(path)?;
    if r.nx() != mesh.nx() || r.ny() != mesh.ny() {
        return Err(Error::Config(format!(
            "raster {} is {}x{} but the fine grid is {}x{}",
            path.display(),
            r.nx(),
            r.ny(),
            mesh.nx(),
            mesh.ny()
        )));
    }
    let (hx, hy) = (mesh.hx(), mesh.hy());
    let (nx, ny) = (r.nx(), r.ny());
    Ok(Box::new(move |x, y| {
        let ix = ((x / hx) as usize).min(nx - 1);
        let iy = ((y / hy) as usize).min(ny - 1);
        r.get(ix, iy)
    }))
}

/// Named configurations for the reference experiments.
pub fn preset(name: &str) -> Result<ExperimentConfig> {
    let cfg = match name {
        "paper41" => ExperimentConfig {
            fine_nx: 100,
            fine_ny: 100,
            coarse_nx: 5,
            coarse_ny: 5,
            m: 1,
            terms: vec![TermConfig {
                theta: ThetaKind::MuPlusMuSq,
                component: 0,
                field: FieldConfig::Periodic,
            }],
            source: SourceConfig::Paper41,
            boundary: BoundaryConfig::Paper41,
            n_s: 50,
            seed: 2024,
            p: 3,
            epsilon: 1e-6,
            l: 5,
            predictor: PredictorKind::Gpc,
            mu_star: vec![vec![0.6]],
            output_dir: "out/paper41".into(),
        },
        "case1" => ExperimentConfig {
            fine_nx: 100,
            fine_ny: 100,
            coarse_nx: 5,
            coarse_ny: 5,
            m: 1,
            terms: vec![TermConfig {
                theta: ThetaKind::MuPlusMuSq,
                component: 0,
                field: FieldConfig::Contrast { seed: 101, tau: 1e4 },
            }],
            source: SourceConfig::Paper41,
            boundary: BoundaryConfig::Oscillatory,
            n_s: 50,
            seed: 2024,
            p: 3,
            epsilon: 1e-6,
            l: 14,
            predictor: PredictorKind::Gpc,
            mu_star: vec![vec![0.6]],
            output_dir: "out/case1".into(),
        },
        "case2" => ExperimentConfig {
            fine_nx: 100,
            fine_ny: 100,
            coarse_nx: 5,
            coarse_ny: 5,
            m: 2,
            terms: vec![
                TermConfig {
                    theta: ThetaKind::MuPlusMuSq,
                    component: 0,
                    field: FieldConfig::Contrast { seed: 102, tau: 1e4 },
                },
                TermConfig {
                    theta: ThetaKind::MuPlusMuSq,
                    component: 1,
                    field: FieldConfig::Contrast { seed: 103, tau: 1e4 },
                },
            ],
            source: SourceConfig::Paper41,
            boundary: BoundaryConfig::Oscillatory,
            n_s: 50,
            seed: 2024,
            p: 2,
            epsilon: 1e-6,
            l: 8,
            predictor: PredictorKind::Gpc,
            mu_star: vec![vec![0.8, 0.8]],
            output_dir: "out/case2".into(),
        },
        "case3" => ExperimentConfig {
            fine_nx: 100,
            fine_ny: 100,
            coarse_nx: 5,
            coarse_ny: 5,
            m: 4,
            terms: (0..4)
                .map(|c| TermConfig {
                    theta: ThetaKind::MuPlusMuSq,
                    component: c,
                    field: FieldConfig::Contrast { seed: 104 + c as u64, tau: 1e4 },
                })
                .collect(),
            source: SourceConfig::Paper41,
            boundary: BoundaryConfig::Oscillatory,
            n_s: 50,
            seed: 2024,
            p: 2,
            epsilon: 1e-6,
            l: 5,
            predictor: PredictorKind::Gpc,
            mu_star: vec![vec![0.8, 0.8, 0.8, 0.8]],
            output_dir: "out/case3".into(),
        },
        other => {
            return Err(Error::Config(format!(
                "unknown preset '{other}'; expected paper41, case1, case2, or case3"
            )))
        }
    };
    cfg.validate()?;
    Ok(cfg)
}
