//! Distributed formation tracking for networks of port-Hamiltonian
//! mechanical agents.
//!
//! Agents sit on a directed mesh. The leader tracks a prescribed trajectory;
//! every follower tracks the average of its predecessors shifted by the
//! formation offsets. Each agent runs a timed IDA-PBC law that renders its
//! closed loop a contractive port-Hamiltonian system, and the network error
//! is analysed as the spatial discretization of a PDE whose temporal part
//! certifies size-independent stability.
//!
//! ```
//! use formnet_core::{scenario::Scenario, sim};
//!
//! let mut scenario = Scenario::sff_meo();
//! scenario.sim.t_end = 0.5;
//! scenario.sim.dt = 0.01;
//! let built = scenario.build().unwrap();
//! let log = sim::simulate(&built.network, &built.sim).unwrap();
//! assert_eq!(log.len(), 51);
//! ```

pub mod controller;
pub mod error;
pub mod linalg;
pub mod network;
pub mod pde;
pub mod ph;
pub mod scenario;
pub mod sim;

pub use controller::{
    certify_contractivity, control_law, ContractivityReport, ControllerGains, ReferencePoint,
    TrackingController, EPSILON_GRID, SPECTRAL_TOL,
};
pub use error::{Error, Result};
pub use network::{build_mesh, FormationSpec, LeaderTrajectory, MeshGraph, NetworkSnapshot};
pub use pde::{
    build_pde_coefficients, certify_temporal_stability, discretization_residual, sas_sweep,
    PdeCoefficients, SasSweepResult, SweepTemplate, TemporalStabilityReport,
};
pub use ph::{
    hamiltonian, open_loop_rhs, spacecraft_plant, AgentState, PlantModel, SpacecraftParams,
    StateRate,
};
pub use scenario::{load_scenario, Scenario};
pub use sim::{
    simulate, AccelMode, InitialPerturbation, Integrator, Network, SimConfig, TrajectoryLog,
};
