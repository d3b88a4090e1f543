//! Experiment configuration files (TOML) and their resolution into meshes,
//! models, assignments and excitation dictionaries.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::boundary_ops::QuadratureOptions;
use crate::constitutive::{default_grid, validate_hypotheses, ConductivityModel};
use crate::error::{Error, Result};
use crate::excitation::ExcitationSpec;
use crate::forward::{SolverOptions, TraceFunction};
use crate::imaging::{Contrast, TestGrid};
use crate::mesh::{rasterize_phantom, Mesh, Phantom};
use crate::verify::{sha256_hex, Order};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub mesh: MeshSpec,
    pub models: BTreeMap<String, ModelSpec>,
    /// Defaults to the homogeneous phantom of the first model id.
    #[serde(default)]
    pub phantom: Option<Phantom>,
    #[serde(default)]
    pub excitations: ExcitationSpec,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default)]
    pub quadrature: QuadratureOptions,
    #[serde(default)]
    pub imaging: Option<ImagingSpec>,
    #[serde(default)]
    pub verify: VerifySpec,
    #[serde(default)]
    pub curves: Option<CurvesSpec>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MeshSpec {
    UnitSquare { n: usize },
    Disk { radius: f64, refinement: usize },
    /// Mesh text file; relative paths resolve against the config file's directory.
    File { path: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Linear,
    Monomial,
    Polynomial,
    Tabulated,
}

/// One conductivity law. Which parameters are required depends on `kind`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub kind: ModelKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coefficients: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fields: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub currents: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub e0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper: Option<f64>,
}

impl ModelSpec {
    pub fn build(&self, id: &str) -> Result<ConductivityModel> {
        let need = |v: Option<f64>, name: &str| {
            v.ok_or_else(|| Error::Config(format!("model {id:?} ({:?}) is missing `{name}`", self.kind)))
        };
        let model = match self.kind {
            ModelKind::Linear => ConductivityModel::linear(need(self.sigma0, "sigma0")?)?,
            ModelKind::Monomial => ConductivityModel::monomial(need(self.theta, "theta")?, need(self.p, "p")?)?,
            ModelKind::Polynomial => ConductivityModel::polynomial(
                self.coefficients
                    .clone()
                    .ok_or_else(|| Error::Config(format!("model {id:?} is missing `coefficients`")))?,
            )?,
            ModelKind::Tabulated => {
                let fields = self.fields.clone().ok_or_else(|| Error::Config(format!("model {id:?} is missing `fields`")))?;
                let currents =
                    self.currents.clone().ok_or_else(|| Error::Config(format!("model {id:?} is missing `currents`")))?;
                ConductivityModel::tabulated(fields, currents, need(self.p, "p")?)?
            }
        };
        let model = match self.e0 {
            Some(e0) => model.with_e0(e0)?,
            None => model,
        };
        match (self.lower, self.upper) {
            (None, None) => Ok(model),
            (Some(l), Some(u)) => model.with_bounds(l, u),
            _ => Err(Error::Config(format!("model {id:?} must give both `lower` and `upper` or neither"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImagingSpec {
    pub background: String,
    pub anomaly: String,
    #[serde(default)]
    pub contrast: Contrast,
    #[serde(default = "default_tau")]
    pub tau: f64,
    /// Relative noise level applied to the synthetic measurements.
    #[serde(default)]
    pub noise: f64,
    pub grid: TestGrid,
}

fn default_tau() -> f64 {
    1e-6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairSpec {
    pub first: String,
    pub second: String,
    #[serde(default)]
    pub order: Order,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySpec {
    /// Declared ordered model pairs for the monotonicity checks.
    pub pairs: Vec<PairSpec>,
    /// Additional seeded random ordered polynomial pairs.
    pub random_pairs: usize,
    /// Models for the single-model checks; empty means every model.
    pub models: Vec<String>,
    /// Random `(f, phi)` pairs for the derivative and continuity checks.
    pub trials: usize,
    /// Random interior perturbations in the minimality check.
    pub perturbations: usize,
}

impl Default for VerifySpec {
    fn default() -> Self {
        Self { pairs: Vec::new(), random_pairs: 0, models: Vec::new(), trials: 2, perturbations: 20 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurvesSpec {
    pub model: String,
    /// Defaults to `E = 0` followed by the hypothesis grid.
    #[serde(default)]
    pub grid: Option<Vec<f64>>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if config.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                config.schema_version
            )));
        }
        Ok(config)
    }

    /// Reads a config; a relative mesh file path is resolved against the config's directory.
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut config = Self::from_toml(&text)?;
        if let MeshSpec::File { path: mesh_path } = &mut config.mesh {
            if mesh_path.is_relative() {
                if let Some(dir) = path.parent() {
                    *mesh_path = dir.join(&*mesh_path);
                }
            }
        }
        Ok(config)
    }

    pub fn model_ids(&self) -> Vec<&str> {
        self.models.keys().map(String::as_str).collect()
    }

    pub fn phantom(&self) -> Phantom {
        self.phantom.clone().unwrap_or_else(|| {
            Phantom::homogeneous(self.models.keys().next().cloned().unwrap_or_default())
        })
    }

    fn index_of(&self, id: &str) -> Result<usize> {
        self.models
            .keys()
            .position(|k| k == id)
            .ok_or_else(|| Error::Config(format!("unknown model id {id:?}")))
    }

    /// Checks references and parameters before any solve starts.
    pub fn validate(&self) -> Result<()> {
        if self.models.is_empty() {
            return Err(Error::Config("no models defined".into()));
        }
        for (id, spec) in &self.models {
            spec.build(id)?;
        }
        let phantom = self.phantom();
        self.index_of(&phantom.background)?;
        for inc in &phantom.inclusions {
            self.index_of(&inc.model)?;
        }
        if let Some(img) = &self.imaging {
            self.index_of(&img.background)?;
            self.index_of(&img.anomaly)?;
            if !(img.tau >= 0.0) || !(img.noise >= 0.0) {
                return Err(Error::Config("imaging tau and noise must be nonnegative".into()));
            }
            if !(img.grid.radius > 0.0) || img.grid.lattice == 0 {
                return Err(Error::Config("imaging grid needs a positive radius and lattice size".into()));
            }
        }
        for pair in &self.verify.pairs {
            self.index_of(&pair.first)?;
            self.index_of(&pair.second)?;
        }
        for id in &self.verify.models {
            self.index_of(id)?;
        }
        if let Some(curves) = &self.curves {
            self.index_of(&curves.model)?;
        }
        let q = &self.quadrature;
        if q.nodes == 0 || 2 * q.nodes > crate::boundary_ops::MAX_QUADRATURE_NODES || !(q.tol > 0.0) {
            return Err(Error::Config(format!("invalid quadrature options {q:?}")));
        }
        let s = &self.solver;
        if !(s.tol_abs >= 0.0 && s.tol_rel >= 0.0 && s.tol_abs + s.tol_rel > 0.0) {
            return Err(Error::Config("solver tolerances must be nonnegative and not both zero".into()));
        }
        match &self.mesh {
            MeshSpec::UnitSquare { n } if *n == 0 => Err(Error::Config("unit square needs n >= 1".into())),
            MeshSpec::Disk { radius, refinement } if !(*radius > 0.0) || *refinement == 0 => {
                Err(Error::Config("disk needs a positive radius and refinement".into()))
            }
            _ => Ok(()),
        }
    }

    /// Hex SHA-256 of everything that influences results: the canonical JSON
    /// form without the output directory, with a mesh file replaced by the
    /// hash of its contents.
    pub fn digest(&self) -> Result<String> {
        let mut canonical = self.clone();
        canonical.output_dir = PathBuf::new();
        let mut mesh_hash = String::new();
        if let MeshSpec::File { path } = &mut canonical.mesh {
            mesh_hash = sha256_hex(&std::fs::read(&*path)?);
            *path = PathBuf::new();
        }
        let json = serde_json::to_string(&canonical).expect("config serializes");
        Ok(sha256_hex(format!("{json}{mesh_hash}").as_bytes()))
    }

    pub fn build_mesh(&self) -> Result<Mesh> {
        match &self.mesh {
            MeshSpec::UnitSquare { n } => Ok(Mesh::unit_square(*n)),
            MeshSpec::Disk { radius, refinement } => Ok(Mesh::disk(*radius, *refinement)),
            MeshSpec::File { path } => Mesh::read(path),
        }
    }

    /// Validates and resolves everything needed to run the experiment.
    pub fn resolve(&self) -> Result<Experiment> {
        self.validate()?;
        let mesh = self.build_mesh()?;
        let ids = self.model_ids();
        let models = self.models.iter().map(|(id, spec)| spec.build(id)).collect::<Result<Vec<_>>>()?;
        let assignment = rasterize_phantom(&mesh, &self.phantom(), &ids)?;
        let mut used: Vec<usize> = assignment.clone();
        if let Some(img) = &self.imaging {
            used.push(self.index_of(&img.background)?);
            used.push(self.index_of(&img.anomaly)?);
        }
        used.sort_unstable();
        used.dedup();
        for &m in &used {
            let report = validate_hypotheses(&models[m], &default_grid(models[m].e0()))?;
            if !report.all_pass() {
                return Err(Error::Config(format!("model {:?} fails the admissibility checks: {report:?}", ids[m])));
            }
        }
        let excitations = self.excitations.build(&mesh)?;
        let digest = self.digest()?;
        Ok(Experiment {
            model_ids: ids.iter().map(|s| s.to_string()).collect(),
            config: self.clone(),
            mesh,
            models,
            assignment,
            excitations,
            digest,
        })
    }
}

/// A validated configuration with its mesh, models and dictionary built.
#[derive(Debug)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub mesh: Mesh,
    pub model_ids: Vec<String>,
    pub models: Vec<ConductivityModel>,
    pub assignment: Vec<usize>,
    pub excitations: Vec<TraceFunction>,
    pub digest: String,
}

impl Experiment {
    pub fn model_index(&self, id: &str) -> Result<usize> {
        self.model_ids
            .iter()
            .position(|k| k == id)
            .ok_or_else(|| Error::Config(format!("unknown model id {id:?}")))
    }
}
