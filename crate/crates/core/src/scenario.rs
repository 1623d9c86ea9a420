//! Scenario files: the complete, human-editable description of a run.
//!
//! Scenarios are TOML. Every section and key is optional; missing values
//! fall back to the spacecraft formation preset, and unknown keys are
//! rejected. [`Scenario::echo`] writes the fully populated form, which
//! loads back to an identical scenario.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::controller::ControllerGains;
use crate::error::{Error, Result};
use crate::linalg;
use crate::network::{build_mesh, FormationSpec, LeaderTrajectory, MeshGraph};
use crate::pde::SweepTemplate;
use crate::ph::{spacecraft_plant, PlantModel, QuadraticPotential, SpacecraftParams};
use crate::sim::{AccelMode, InitialPerturbation, Integrator, Network, SimConfig};

/// Mean motion of the reference orbit, rad/h.
pub const MEO_MEAN_MOTION: f64 = 0.5307;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub mesh: MeshSection,
    pub formation: FormationSection,
    pub plant: PlantSection,
    pub gains: GainsSection,
    pub sim: SimSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeshSection {
    pub dims: usize,
    pub extents: Vec<usize>,
}

impl Default for MeshSection {
    fn default() -> Self {
        Self {
            dims: 2,
            extents: vec![3, 2],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FormationSection {
    /// One offset per mesh direction, `Delta^k`.
    pub axis_offsets: Vec<Vec<f64>>,
    pub leader: LeaderTrajectory,
}

impl Default for FormationSection {
    fn default() -> Self {
        Self {
            axis_offsets: vec![vec![10.0, 0.0, 0.0], vec![0.0, 20.0, 0.0]],
            leader: LeaderTrajectory::Gco {
                radius: 5.0,
                rate: MEO_MEAN_MOTION,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PlantSection {
    /// Linearized relative orbital dynamics about a circular orbit.
    Spacecraft { n0: f64 },
    /// Mass, damping and quadratic potential given explicitly.
    Generic {
        mass: MatrixSpec,
        damping: MatrixSpec,
        stiffness: MatrixSpec,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        gyroscopic: Option<MatrixSpec>,
    },
}

impl Default for PlantSection {
    fn default() -> Self {
        PlantSection::Spacecraft {
            n0: MEO_MEAN_MOTION,
        }
    }
}

/// A matrix written either as rows or as `{ diag = [...] }`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixSpec {
    Diag { diag: Vec<f64> },
    Rows(Vec<Vec<f64>>),
}

impl MatrixSpec {
    pub fn to_matrix(&self, key: &str) -> Result<DMatrix<f64>> {
        match self {
            MatrixSpec::Diag { diag } => Ok(DMatrix::from_diagonal(&DVector::from_row_slice(diag))),
            MatrixSpec::Rows(rows) => {
                let m = linalg::from_rows(key, rows)?;
                if m.nrows() != m.ncols() {
                    return Err(Error::Config(format!(
                        "{key}: matrix must be square, got {}x{}",
                        m.nrows(),
                        m.ncols()
                    )));
                }
                Ok(m)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GainsSection {
    pub stiffness: MatrixSpec,
    pub interconnection: MatrixSpec,
    pub damping: MatrixSpec,
    /// Per-agent replacements; agents not listed use the network gains.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub overrides: Vec<GainOverride>,
}

impl Default for GainsSection {
    fn default() -> Self {
        let j = 1.0615;
        Self {
            stiffness: MatrixSpec::Diag {
                diag: vec![30.0, 30.0, 20.0],
            },
            interconnection: MatrixSpec::Rows(vec![
                vec![0.0, j, 0.0],
                vec![-j, 0.0, 0.0],
                vec![0.0, 0.0, 0.0],
            ]),
            damping: MatrixSpec::Diag {
                diag: vec![34.4, 42.3, 10.59],
            },
            overrides: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainOverride {
    pub agent: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stiffness: Option<MatrixSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interconnection: Option<MatrixSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub damping: Option<MatrixSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PerturbationKind {
    #[default]
    Uniform,
    MaxScaled,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSection {
    pub dt: f64,
    pub t_end: f64,
    pub integrator: Integrator,
    pub accel_mode: AccelMode,
    /// Bound on the initial position offsets, km.
    pub alpha: f64,
    pub perturbation: PerturbationKind,
    pub seed: u64,
}

impl Default for SimSection {
    fn default() -> Self {
        let d = SimConfig::default();
        Self {
            dt: d.dt,
            t_end: d.t_end,
            integrator: d.integrator,
            accel_mode: d.accel_mode,
            alpha: 1.0,
            perturbation: PerturbationKind::Uniform,
            seed: d.seed,
        }
    }
}

/// A scenario turned into runnable objects.
#[derive(Debug, Clone)]
pub struct BuiltScenario {
    pub graph: MeshGraph,
    pub formation: FormationSpec,
    pub plant: PlantModel,
    /// Network-wide gains, before per-agent overrides.
    pub gains: ControllerGains,
    pub network: Network,
    pub sim: SimConfig,
}

impl BuiltScenario {
    pub fn sweep_template(&self) -> SweepTemplate {
        SweepTemplate {
            formation: self.formation.clone(),
            plant: self.plant.clone(),
            gains: self.gains.clone(),
        }
    }
}

fn message(e: &Error) -> String {
    match e {
        Error::Config(msg) => msg.clone(),
        other => other.to_string(),
    }
}

fn keyed(key: &str) -> impl Fn(Error) -> Error + '_ {
    move |e| match e {
        Error::Config(msg) if msg.starts_with(key) => Error::Config(msg),
        other => Error::Config(format!("{key}: {}", message(&other))),
    }
}

impl Scenario {
    /// The spacecraft formation preset: six agents on a 3x2 mesh tracking a
    /// circular relative orbit.
    pub fn sff_meo() -> Self {
        Self::default()
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let s: Scenario = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        s.build()?;
        Ok(s)
    }

    /// Fully populated TOML form.
    pub fn echo(&self) -> String {
        toml::to_string(self).expect("scenario serializes to TOML")
    }

    /// SHA-256 of the echoed form, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.echo().as_bytes()))
    }

    pub fn sim_config(&self) -> SimConfig {
        let s = &self.sim;
        SimConfig {
            dt: s.dt,
            t_end: s.t_end,
            integrator: s.integrator,
            accel_mode: s.accel_mode,
            initial_perturbation: match s.perturbation {
                PerturbationKind::Uniform => InitialPerturbation::Uniform { alpha: s.alpha },
                PerturbationKind::MaxScaled => InitialPerturbation::MaxScaled { alpha: s.alpha },
                PerturbationKind::None => InitialPerturbation::None,
            },
            seed: s.seed,
        }
    }

    pub fn plant_model(&self) -> Result<PlantModel> {
        match &self.plant {
            PlantSection::Spacecraft { n0 } => {
                spacecraft_plant(SpacecraftParams { n0: *n0 }).map_err(keyed("plant.n0"))
            }
            PlantSection::Generic {
                mass,
                damping,
                stiffness,
                gyroscopic,
            } => {
                let m = mass.to_matrix("plant.mass")?;
                let r = damping.to_matrix("plant.damping")?;
                let k = stiffness.to_matrix("plant.stiffness")?;
                let pot = QuadraticPotential::new(k).map_err(keyed("plant.stiffness"))?;
                let mut plant =
                    PlantModel::new(m, r, std::sync::Arc::new(pot)).map_err(keyed("plant"))?;
                if let Some(g) = gyroscopic {
                    plant = plant
                        .with_gyroscopic(g.to_matrix("plant.gyroscopic")?)
                        .map_err(keyed("plant.gyroscopic"))?;
                }
                Ok(plant)
            }
        }
    }

    fn gains_from(
        k: &MatrixSpec,
        j: &MatrixSpec,
        r: &MatrixSpec,
        prefix: &str,
    ) -> Result<ControllerGains> {
        let k = k.to_matrix(&format!("{prefix}.stiffness"))?;
        let j = j.to_matrix(&format!("{prefix}.interconnection"))?;
        let r = r.to_matrix(&format!("{prefix}.damping"))?;
        let n = k.nrows();
        for (key, m) in [("interconnection", &j), ("damping", &r)] {
            if m.nrows() != n {
                return Err(Error::Config(format!(
                    "{prefix}.{key}: expected {n}x{n}, got {}x{}",
                    m.nrows(),
                    m.ncols()
                )));
            }
        }
        ControllerGains::new(k, j, r).map_err(|e| {
            let key = match &e {
                Error::NotPositiveDefinite { name, .. } | Error::NotSkew { name, .. } => {
                    match name.as_str() {
                        "K" => "stiffness",
                        "Jbar" => "interconnection",
                        _ => "damping",
                    }
                }
                _ => "",
            };
            Error::Config(format!("{prefix}.{key}: {}", message(&e)))
        })
    }

    pub fn network_gains(&self) -> Result<ControllerGains> {
        let g = &self.gains;
        Self::gains_from(&g.stiffness, &g.interconnection, &g.damping, "gains")
    }

    /// Validate every section and assemble the network.
    pub fn build(&self) -> Result<BuiltScenario> {
        if self.mesh.dims != self.mesh.extents.len() {
            return Err(Error::Config(format!(
                "mesh.dims: {} does not match the {} extents given",
                self.mesh.dims,
                self.mesh.extents.len()
            )));
        }
        let graph = build_mesh(self.mesh.dims, &self.mesh.extents).map_err(keyed("mesh"))?;
        let offsets = self
            .formation
            .axis_offsets
            .iter()
            .map(|o| DVector::from_row_slice(o))
            .collect();
        let formation = FormationSpec::new(offsets, self.formation.leader.clone())
            .map_err(keyed("formation"))?;
        formation
            .check_graph(&graph)
            .map_err(keyed("formation.axis_offsets"))?;
        let plant = self.plant_model()?;
        if plant.dim() != formation.dim() {
            return Err(Error::Config(format!(
                "plant: dimension {} does not match formation dimension {}",
                plant.dim(),
                formation.dim()
            )));
        }
        let gains = self.network_gains()?;
        if gains.dim() != plant.dim() {
            return Err(Error::Config(format!(
                "gains: dimension {} does not match plant dimension {}",
                gains.dim(),
                plant.dim()
            )));
        }
        let mut per_agent = vec![gains.clone(); graph.len()];
        for (k, o) in self.gains.overrides.iter().enumerate() {
            let prefix = format!("gains.overrides[{k}]");
            let slot = per_agent.get_mut(o.agent).ok_or_else(|| {
                Error::Config(format!(
                    "{prefix}.agent: {} out of range for {} agents",
                    o.agent,
                    graph.len()
                ))
            })?;
            *slot = Self::gains_from(
                o.stiffness.as_ref().unwrap_or(&self.gains.stiffness),
                o.interconnection
                    .as_ref()
                    .unwrap_or(&self.gains.interconnection),
                o.damping.as_ref().unwrap_or(&self.gains.damping),
                &prefix,
            )?;
        }
        let sim = self.sim_config();
        sim.validate().map_err(keyed("sim"))?;
        let network = Network::new(
            graph.clone(),
            formation.clone(),
            vec![plant.clone(); graph.len()],
            per_agent,
        )?;
        Ok(BuiltScenario {
            graph,
            formation,
            plant,
            gains,
            network,
            sim,
        })
    }

    pub fn identical_gains(&self) -> bool {
        self.gains.overrides.is_empty()
    }
}

/// Read and validate a scenario file.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    Scenario::from_toml(&text)
        .map_err(|e| Error::Config(format!("{}: {}", path.display(), message(&e))))
}
