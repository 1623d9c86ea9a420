use nalgebra::DVector;

use crate::controller::ReferencePoint;
use crate::error::{check_len, Error, Result};
use crate::ph::{AgentState, PlantModel, StateRate};

use super::{FormationSpec, MeshGraph};

/// Network state at one instant. `rates[j]` holds agent `j`'s state
/// derivative once it is known; followers read their neighbours' velocity
/// and momentum rate from it.
#[derive(Debug, Clone)]
pub struct NetworkSnapshot<'a> {
    pub t: f64,
    pub states: &'a [AgentState],
    pub rates: Vec<Option<StateRate>>,
}

impl<'a> NetworkSnapshot<'a> {
    pub fn new(t: f64, states: &'a [AgentState]) -> Self {
        Self {
            t,
            states,
            rates: vec![None; states.len()],
        }
    }

    pub fn with_rates(t: f64, states: &'a [AgentState], rates: Vec<StateRate>) -> Self {
        Self {
            t,
            states,
            rates: rates.into_iter().map(Some).collect(),
        }
    }
}

/// Leader's desired point: `q* = q_r`, `p* = M0 qdot_r`, `pdot* = M0 qddot_r`.
/// Depends only on `t` and the formation spec.
pub fn leader_reference(
    spec: &FormationSpec,
    plant: &PlantModel,
    t: f64,
) -> Result<ReferencePoint> {
    check_len("leader trajectory", plant.dim(), spec.dim())?;
    let s = spec.leader().sample(t);
    Ok(ReferencePoint {
        q_star: s.q,
        p_star: plant.mass() * s.q_dot,
        pdot_star: plant.mass() * s.q_ddot,
    })
}

/// Follower's desired point from its in-neighbours:
///
/// ```text
/// q*     = 1/Q sum_j (q_j + Delta_{i,j})
/// p*     = M0 (1/Q sum_j qdot_j)
/// pdot*  = 1/Q sum_j pdot_j
/// ```
pub fn follower_reference(
    agent: usize,
    graph: &MeshGraph,
    spec: &FormationSpec,
    snapshot: &NetworkSnapshot<'_>,
    plant: &PlantModel,
) -> Result<ReferencePoint> {
    let preds = graph.predecessors(agent);
    if preds.is_empty() {
        return Err(Error::Graph(format!("agent {agent} has no predecessors")));
    }
    let n = plant.dim();
    let mut q_star = DVector::zeros(n);
    let mut v_star = DVector::zeros(n);
    let mut pdot_star = DVector::zeros(n);
    for &(_, j) in preds {
        let rate = snapshot.rates[j].as_ref().ok_or_else(|| {
            Error::Input(format!(
                "rate of agent {j} unavailable for follower {agent}"
            ))
        })?;
        q_star += &snapshot.states[j].q + spec.offset(graph, agent, j);
        v_star += &rate.q_dot;
        pdot_star += &rate.p_dot;
    }
    let inv_q = 1.0 / preds.len() as f64;
    q_star *= inv_q;
    v_star *= inv_q;
    pdot_star *= inv_q;
    Ok(ReferencePoint {
        q_star,
        p_star: plant.mass() * v_star,
        pdot_star,
    })
}

/// Position and momentum tracking error of one agent against the formation
/// anchored at the leader's reference trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct FormationError {
    pub q: DVector<f64>,
    pub p: DVector<f64>,
}

/// `q~_i = q_i - (q_r(t) + Delta_{i,leader})`, `p~_i = p_i - M0 qdot_r(t)`.
pub fn formation_errors(
    snapshot: &NetworkSnapshot<'_>,
    graph: &MeshGraph,
    spec: &FormationSpec,
    plant: &PlantModel,
) -> Result<Vec<FormationError>> {
    check_len("snapshot agents", graph.len(), snapshot.states.len())?;
    let s = spec.leader().sample(snapshot.t);
    let p_ref = plant.mass() * &s.q_dot;
    snapshot
        .states
        .iter()
        .enumerate()
        .map(|(i, st)| {
            check_len("agent position", spec.dim(), st.q.len())?;
            Ok(FormationError {
                q: &st.q - &s.q - spec.offset_from_leader(graph, i),
                p: &st.p - &p_ref,
            })
        })
        .collect()
}
