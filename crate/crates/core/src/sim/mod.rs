//! Closed-loop network integration.
//!
//! The whole network is one coupled ODE. At every right-hand-side
//! evaluation all references are built from the same snapshot: agents are
//! visited in id order, which is a topological order of the mesh, so a
//! follower reads the momentum rate its predecessors have at that same
//! snapshot (`AccelMode::Exact`). `AccelMode::FdAccel` instead feeds
//! followers backward differences of the logged velocities, held over
//! the step.

mod integrate;
mod log;

pub use integrate::{euler_step, rk4_step, rk4_step_from, Integrator};
pub use log::{monotone_after_last_peak, AgentSummary, Channel, LogSummary, TrajectoryLog};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::controller::{ControllerGains, ReferencePoint, TrackingController};
use crate::error::{check_len, Error, Result};
use crate::network::{
    follower_reference, formation_errors, leader_reference, FormationError, FormationSpec,
    MeshGraph, NetworkSnapshot, TrajectorySample,
};
use crate::ph::{open_loop_rhs, AgentState, PlantModel, StateRate};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum AccelMode {
    #[default]
    #[serde(rename = "exact")]
    Exact,
    #[serde(rename = "fd", alias = "fd-accel")]
    FdAccel,
}

/// Initial offsets from the formation at `t = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitialPerturbation {
    None,
    /// Independent position offsets uniform in `[-alpha, alpha]^n`, zero
    /// velocity offsets.
    Uniform {
        alpha: f64,
    },
    /// Uniform draws rescaled so the largest agent offset norm is exactly
    /// `alpha`.
    MaxScaled {
        alpha: f64,
    },
    Explicit {
        position: Vec<Vec<f64>>,
        velocity: Vec<Vec<f64>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dt: f64,
    pub t_end: f64,
    pub integrator: Integrator,
    pub accel_mode: AccelMode,
    pub initial_perturbation: InitialPerturbation,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            t_end: 20.0,
            integrator: Integrator::Rk4,
            accel_mode: AccelMode::Exact,
            initial_perturbation: InitialPerturbation::Uniform { alpha: 1.0 },
            seed: 42,
        }
    }
}

impl SimConfig {
    /// Number of steps; the horizon must be an integer multiple of `dt`.
    pub fn steps(&self) -> Result<usize> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::Config(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        if !(self.t_end > 0.0) || !self.t_end.is_finite() {
            return Err(Error::Config(format!(
                "t_end must be positive, got {}",
                self.t_end
            )));
        }
        if self.dt >= self.t_end {
            return Err(Error::Config(format!(
                "dt ({}) must be smaller than t_end ({})",
                self.dt, self.t_end
            )));
        }
        let ratio = self.t_end / self.dt;
        let steps = ratio.round();
        if (ratio - steps).abs() > 1e-9 * ratio {
            return Err(Error::Config(format!(
                "t_end ({}) is not an integer multiple of dt ({})",
                self.t_end, self.dt
            )));
        }
        Ok(steps as usize)
    }

    pub fn validate(&self) -> Result<()> {
        self.steps()?;
        match &self.initial_perturbation {
            InitialPerturbation::Uniform { alpha } | InitialPerturbation::MaxScaled { alpha }
                if !(alpha.is_finite() && *alpha >= 0.0) =>
            {
                Err(Error::Config(format!(
                    "alpha must be finite and >= 0, got {alpha}"
                )))
            }
            _ => Ok(()),
        }
    }
}

/// Mesh, formation, and one tracking controller per agent.
#[derive(Debug, Clone)]
pub struct Network {
    graph: MeshGraph,
    formation: FormationSpec,
    controllers: Vec<TrackingController>,
}

impl Network {
    /// All agents must share the same mass matrix; potentials and gains may
    /// differ.
    pub fn new(
        graph: MeshGraph,
        formation: FormationSpec,
        plants: Vec<PlantModel>,
        gains: Vec<ControllerGains>,
    ) -> Result<Self> {
        formation.check_graph(&graph)?;
        check_len("plants per agent", graph.len(), plants.len())?;
        check_len("gains per agent", graph.len(), gains.len())?;
        let mass = plants[0].mass().clone();
        let controllers = plants
            .into_iter()
            .zip(gains)
            .enumerate()
            .map(|(i, (plant, gains))| {
                check_len("agent dimension", formation.dim(), plant.dim())?;
                if plant.mass() != &mass {
                    return Err(Error::Config(format!(
                        "agent {i} has a different mass matrix; the network requires a common M0"
                    )));
                }
                TrackingController::new(gains, plant)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            graph,
            formation,
            controllers,
        })
    }

    pub fn uniform(
        graph: MeshGraph,
        formation: FormationSpec,
        plant: PlantModel,
        gains: ControllerGains,
    ) -> Result<Self> {
        let n = graph.len();
        Self::new(graph, formation, vec![plant; n], vec![gains; n])
    }

    pub fn graph(&self) -> &MeshGraph {
        &self.graph
    }

    pub fn formation(&self) -> &FormationSpec {
        &self.formation
    }

    pub fn controllers(&self) -> &[TrackingController] {
        &self.controllers
    }

    pub fn len(&self) -> usize {
        self.graph.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graph.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.formation.dim()
    }

    pub fn mass(&self) -> &DMatrix<f64> {
        self.controllers[0].plant().mass()
    }

    pub fn mass_inv(&self) -> &DMatrix<f64> {
        self.controllers[0].plant().mass_inv()
    }

    pub fn identical_gains(&self) -> bool {
        let g0 = self.controllers[0].gains();
        self.controllers.iter().all(|c| c.gains() == g0)
    }

    /// States on the formation at `t = 0` plus the configured initial perturbation.
    pub fn initial_states(&self, cfg: &SimConfig) -> Result<Vec<AgentState>> {
        let n = self.dim();
        let count = self.len();
        let (dq, dv): (Vec<DVector<f64>>, Vec<DVector<f64>>) = match &cfg.initial_perturbation {
            InitialPerturbation::None => (
                vec![DVector::zeros(n); count],
                vec![DVector::zeros(n); count],
            ),
            InitialPerturbation::Uniform { alpha } | InitialPerturbation::MaxScaled { alpha } => {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                let a = *alpha;
                let mut dq: Vec<DVector<f64>> = (0..count)
                    .map(|_| {
                        DVector::from_fn(n, |_, _| {
                            if a > 0.0 {
                                rng.random_range(-a..=a)
                            } else {
                                0.0
                            }
                        })
                    })
                    .collect();
                if matches!(
                    cfg.initial_perturbation,
                    InitialPerturbation::MaxScaled { .. }
                ) {
                    let max = dq.iter().map(|d| d.norm()).fold(0.0, f64::max);
                    if max > 0.0 {
                        dq.iter_mut().for_each(|d| *d *= a / max);
                    }
                }
                (dq, vec![DVector::zeros(n); count])
            }
            InitialPerturbation::Explicit { position, velocity } => {
                check_len("explicit position offsets", count, position.len())?;
                check_len("explicit velocity offsets", count, velocity.len())?;
                let to_vecs = |rows: &[Vec<f64>]| -> Result<Vec<DVector<f64>>> {
                    rows.iter()
                        .map(|r| {
                            check_len("explicit offset", n, r.len())?;
                            Ok(DVector::from_row_slice(r))
                        })
                        .collect()
                };
                (to_vecs(position)?, to_vecs(velocity)?)
            }
        };
        let s = self.formation.leader().sample(0.0);
        Ok((0..count)
            .map(|i| AgentState {
                q: &s.q + self.formation.offset_from_leader(&self.graph, i) + &dq[i],
                p: self.mass() * (&s.q_dot + &dv[i]),
            })
            .collect())
    }
}

/// Everything computed in one closed-loop evaluation.
#[derive(Debug, Clone)]
pub struct ClosedLoopEval {
    pub rates: Vec<StateRate>,
    pub inputs: Vec<DVector<f64>>,
    pub references: Vec<ReferencePoint>,
}

/// Evaluate every agent's reference, control input and state derivative.
/// `fd_accelerations`, when given, replaces the neighbour accelerations
/// followers see.
pub fn closed_loop_eval(
    network: &Network,
    t: f64,
    states: &[AgentState],
    fd_accelerations: Option<&[DVector<f64>]>,
) -> Result<ClosedLoopEval> {
    let count = network.len();
    check_len("network states", count, states.len())?;
    let mut snapshot = NetworkSnapshot::new(t, states);
    if let Some(acc) = fd_accelerations {
        check_len("neighbour accelerations", count, acc.len())?;
        for (j, a) in acc.iter().enumerate() {
            snapshot.rates[j] = Some(StateRate {
                q_dot: network.mass_inv() * &states[j].p,
                p_dot: network.mass() * a,
            });
        }
    }
    let mut out = ClosedLoopEval {
        rates: Vec::with_capacity(count),
        inputs: Vec::with_capacity(count),
        references: Vec::with_capacity(count),
    };
    for (i, ctrl) in network.controllers.iter().enumerate() {
        if !states[i].is_finite() {
            return Err(Error::NonFinite { agent: i, time: t });
        }
        let reference = if network.graph.is_leader(i) {
            leader_reference(&network.formation, ctrl.plant(), t)?
        } else {
            follower_reference(
                i,
                &network.graph,
                &network.formation,
                &snapshot,
                ctrl.plant(),
            )?
        };
        let u = ctrl.input(&states[i], &reference)?;
        let rate = open_loop_rhs(&states[i], ctrl.plant(), &u)?;
        if !(rate
            .q_dot
            .iter()
            .chain(rate.p_dot.iter())
            .all(|x| x.is_finite()))
        {
            return Err(Error::NonFinite { agent: i, time: t });
        }
        if fd_accelerations.is_none() {
            snapshot.rates[i] = Some(rate.clone());
        }
        out.rates.push(rate);
        out.inputs.push(u);
        out.references.push(reference);
    }
    Ok(out)
}

/// Per-agent `(qdot, pdot)` of the closed-loop network.
pub fn closed_loop_rhs(
    network: &Network,
    t: f64,
    states: &[AgentState],
    fd_accelerations: Option<&[DVector<f64>]>,
) -> Result<Vec<StateRate>> {
    Ok(closed_loop_eval(network, t, states, fd_accelerations)?.rates)
}

pub(crate) fn flatten(states: &[AgentState]) -> Vec<f64> {
    let mut y = Vec::with_capacity(states.len() * 2 * states.first().map_or(0, |s| s.dim()));
    for s in states {
        y.extend(s.q.iter());
        y.extend(s.p.iter());
    }
    y
}

fn flatten_rates(rates: &[StateRate]) -> Vec<f64> {
    let mut y = Vec::new();
    for r in rates {
        y.extend(r.q_dot.iter());
        y.extend(r.p_dot.iter());
    }
    y
}

pub(crate) fn unflatten(y: &[f64], n: usize) -> Vec<AgentState> {
    y.chunks_exact(2 * n)
        .map(|c| AgentState {
            q: DVector::from_row_slice(&c[..n]),
            p: DVector::from_row_slice(&c[n..]),
        })
        .collect()
}

/// One logged instant, handed to [`run`] observers.
pub struct Frame<'a> {
    pub step: usize,
    pub t: f64,
    pub states: &'a [AgentState],
    pub eval: &'a ClosedLoopEval,
    pub errors: &'a [FormationError],
    pub leader: &'a TrajectorySample,
    pub mass_inv: &'a DMatrix<f64>,
}

/// Integrate the closed loop and stream every logged instant (including
/// `t = 0` and `t_end`) to `observer`.
pub fn run<F>(network: &Network, cfg: &SimConfig, mut observer: F) -> Result<()>
where
    F: FnMut(&Frame<'_>),
{
    cfg.validate()?;
    let steps = cfg.steps()?;
    let n = network.dim();
    let plant = network.controllers[0].plant();
    let mut states = network.initial_states(cfg)?;
    let mut prev_velocity: Option<Vec<DVector<f64>>> = None;

    for step in 0..=steps {
        let t = step as f64 * cfg.dt;
        let velocity: Vec<DVector<f64>> =
            states.iter().map(|s| network.mass_inv() * &s.p).collect();
        let fd_acc: Option<Vec<DVector<f64>>> = match (cfg.accel_mode, &prev_velocity) {
            (AccelMode::FdAccel, Some(prev)) => Some(
                velocity
                    .iter()
                    .zip(prev)
                    .map(|(v, pv)| (v - pv) / cfg.dt)
                    .collect(),
            ),
            _ => None,
        };
        let eval = closed_loop_eval(network, t, &states, fd_acc.as_deref())?;
        let snapshot = NetworkSnapshot::new(t, &states);
        let errors = formation_errors(&snapshot, &network.graph, &network.formation, plant)?;
        observer(&Frame {
            step,
            t,
            states: &states,
            eval: &eval,
            errors: &errors,
            leader: &network.formation.leader().sample(t),
            mass_inv: network.mass_inv(),
        });
        if step == steps {
            break;
        }
        let y = flatten(&states);
        let k1 = flatten_rates(&eval.rates);
        let next = cfg
            .integrator
            .step_from(&y, t, cfg.dt, &k1, |ts, ys| {
                let st = unflatten(ys, n);
                Ok(flatten_rates(&closed_loop_rhs(
                    network,
                    ts,
                    &st,
                    fd_acc.as_deref(),
                )?))
            })
            .map_err(|e| match e {
                Error::NonFiniteRate { time } => Error::NonFinite { agent: 0, time },
                other => other,
            })?;
        states = unflatten(&next, n);
        if let Some(i) = states.iter().position(|s| !s.is_finite()) {
            return Err(Error::NonFinite {
                agent: i,
                time: t + cfg.dt,
            });
        }
        prev_velocity = Some(velocity);
    }
    Ok(())
}

/// Run the closed loop and record every step.
pub fn simulate(network: &Network, cfg: &SimConfig) -> Result<TrajectoryLog> {
    let mut log = TrajectoryLog::new(network, cfg.clone());
    run(network, cfg, |frame| log.push(frame))?;
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_horizon_validation() {
        let mut cfg = SimConfig::default();
        assert_eq!(cfg.steps().unwrap(), 20_000);
        cfg.dt = 0.0;
        assert!(cfg.steps().is_err());
        cfg.dt = 0.3;
        cfg.t_end = 1.0;
        assert!(cfg.steps().is_err());
        cfg.dt = 2.0;
        assert!(cfg.steps().is_err());
        cfg.dt = 0.25;
        assert_eq!(cfg.steps().unwrap(), 4);
    }

    #[test]
    fn flatten_round_trip() {
        let states = vec![
            AgentState::new(
                DVector::from_vec(vec![1.0, 2.0]),
                DVector::from_vec(vec![3.0, 4.0]),
            )
            .unwrap(),
            AgentState::new(
                DVector::from_vec(vec![5.0, 6.0]),
                DVector::from_vec(vec![7.0, 8.0]),
            )
            .unwrap(),
        ];
        let y = flatten(&states);
        assert_eq!(y, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
        assert_eq!(unflatten(&y, 2), states);
    }
}
