//! Directed mesh communication graph, formation geometry, and the
//! leader/follower reference protocol.

mod formation;
mod mesh;
mod reference;

pub use formation::{FormationSpec, LeaderTrajectory, TrajectorySample};
pub use mesh::{build_mesh, MeshGraph};
pub use reference::{
    follower_reference, formation_errors, leader_reference, FormationError, NetworkSnapshot,
};
