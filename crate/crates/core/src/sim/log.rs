//! Recorded trajectories and their CSV/JSON exports.

use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{Frame, Network, SimConfig};
use crate::error::{Error, Result};

/// Per-agent recorded quantities. All are stored flat, `dim` values per
/// logged step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    Position,
    Momentum,
    Input,
    PositionError,
    MomentumError,
    /// `d/dt q~ = M0^{-1} p~`.
    ErrorVelocity,
    /// `d2/dt2 q~ = M0^{-1} pdot - qddot_r`.
    ErrorAcceleration,
}

impl Channel {
    pub const ALL: [Channel; 7] = [
        Channel::Position,
        Channel::Momentum,
        Channel::Input,
        Channel::PositionError,
        Channel::MomentumError,
        Channel::ErrorVelocity,
        Channel::ErrorAcceleration,
    ];

    fn index(self) -> usize {
        self as usize
    }

    fn csv_prefix(self) -> Option<&'static str> {
        match self {
            Channel::Position => Some("q"),
            Channel::Momentum => Some("p"),
            Channel::Input => Some("u"),
            Channel::PositionError => Some("eq"),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct AgentSeries {
    channels: [Option<Vec<f64>>; 7],
}

/// Time-indexed record of a closed-loop run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryLog {
    dim: usize,
    extents: Vec<usize>,
    config: SimConfig,
    scenario_hash: Option<String>,
    times: Vec<f64>,
    agents: Vec<AgentSeries>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSummary {
    pub id: usize,
    pub index: Vec<usize>,
    pub peak_error: f64,
    pub peak_time: f64,
    pub final_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogSummary {
    pub scenario_hash: Option<String>,
    pub config: SimConfig,
    pub extents: Vec<usize>,
    pub steps: usize,
    pub max_peak_error: f64,
    pub max_final_error: f64,
    pub agents: Vec<AgentSummary>,
}

impl TrajectoryLog {
    pub fn new(network: &Network, config: SimConfig) -> Self {
        let agents = (0..network.len())
            .map(|_| AgentSeries {
                channels: std::array::from_fn(|_| Some(Vec::new())),
            })
            .collect();
        Self {
            dim: network.dim(),
            extents: network.graph().extents().to_vec(),
            config,
            scenario_hash: None,
            times: Vec::new(),
            agents,
        }
    }

    pub(crate) fn push(&mut self, frame: &Frame<'_>) {
        self.times.push(frame.t);
        for (i, series) in self.agents.iter_mut().enumerate() {
            let st = &frame.states[i];
            let err = &frame.errors[i];
            let rate = &frame.eval.rates[i];
            let values: [&[f64]; 5] = [
                st.q.as_slice(),
                st.p.as_slice(),
                frame.eval.inputs[i].as_slice(),
                err.q.as_slice(),
                err.p.as_slice(),
            ];
            for (c, v) in values.iter().enumerate() {
                if let Some(buf) = series.channels[c].as_mut() {
                    buf.extend_from_slice(v);
                }
            }
            if let Some(buf) = series.channels[Channel::ErrorVelocity.index()].as_mut() {
                buf.extend((frame.mass_inv * &err.p).iter());
            }
            if let Some(buf) = series.channels[Channel::ErrorAcceleration.index()].as_mut() {
                let a = frame.mass_inv * &rate.p_dot - &frame.leader.q_ddot;
                buf.extend(a.iter());
            }
        }
    }

    pub fn with_scenario_hash(mut self, hash: impl Into<String>) -> Self {
        self.scenario_hash = Some(hash.into());
        self
    }

    /// Drop a channel from every agent, as a log read from a reduced export
    /// would lack it.
    pub fn without_channel(mut self, channel: Channel) -> Self {
        for a in &mut self.agents {
            a.channels[channel.index()] = None;
        }
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn extents(&self) -> &[usize] {
        &self.extents
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn scenario_hash(&self) -> Option<&str> {
        self.scenario_hash.as_deref()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn agent_count(&self) -> usize {
        self.agents.len()
    }

    pub fn has_channel(&self, channel: Channel) -> bool {
        self.agents
            .iter()
            .all(|a| a.channels[channel.index()].is_some())
    }

    /// Value of `channel` for `agent` at logged step `step`.
    pub fn get(&self, channel: Channel, agent: usize, step: usize) -> Result<&[f64]> {
        let series = self.agents.get(agent).ok_or_else(|| {
            Error::Input(format!(
                "agent {agent} not in log of {} agents",
                self.agents.len()
            ))
        })?;
        let buf = series.channels[channel.index()]
            .as_ref()
            .ok_or_else(|| Error::Input(format!("log has no {channel:?} channel")))?;
        let n = self.dim;
        buf.get(step * n..(step + 1) * n)
            .ok_or_else(|| Error::Input(format!("step {step} beyond log length {}", self.len())))
    }

    /// `||q~_i(t)||` at every logged step.
    pub fn error_norms(&self, agent: usize) -> Vec<f64> {
        self.agents[agent].channels[Channel::PositionError.index()]
            .as_ref()
            .map(|buf| {
                buf.chunks_exact(self.dim)
                    .map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt())
                    .collect()
            })
            .unwrap_or_default()
    }

    pub fn max_error_at(&self, step: usize) -> f64 {
        (0..self.agents.len())
            .map(|i| {
                self.get(Channel::PositionError, i, step)
                    .map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt())
                    .unwrap_or(f64::NAN)
            })
            .fold(0.0, f64::max)
    }

    /// Every stored value is finite.
    pub fn is_finite(&self) -> bool {
        self.times.iter().all(|t| t.is_finite())
            && self.agents.iter().all(|a| {
                a.channels
                    .iter()
                    .flatten()
                    .all(|buf| buf.iter().all(|x| x.is_finite()))
            })
    }

    pub fn summary(&self) -> LogSummary {
        let strides = strides(&self.extents);
        let agents: Vec<AgentSummary> = (0..self.agents.len())
            .map(|id| {
                let norms = self.error_norms(id);
                let (k, peak) = norms
                    .iter()
                    .copied()
                    .enumerate()
                    .fold((0, 0.0), |acc, (k, e)| if e > acc.1 { (k, e) } else { acc });
                AgentSummary {
                    id,
                    index: strides
                        .iter()
                        .zip(&self.extents)
                        .map(|(s, r)| (id / s) % r)
                        .collect(),
                    peak_error: peak,
                    peak_time: self.times.get(k).copied().unwrap_or(0.0),
                    final_error: norms.last().copied().unwrap_or(0.0),
                }
            })
            .collect();
        LogSummary {
            scenario_hash: self.scenario_hash.clone(),
            config: self.config.clone(),
            extents: self.extents.clone(),
            steps: self.len().saturating_sub(1),
            max_peak_error: agents.iter().map(|a| a.peak_error).fold(0.0, f64::max),
            max_final_error: agents.iter().map(|a| a.final_error).fold(0.0, f64::max),
            agents,
        }
    }

    fn axis_names(&self) -> Vec<String> {
        if self.dim == 3 {
            ["x", "y", "z"].iter().map(|s| s.to_string()).collect()
        } else {
            (0..self.dim).map(|k| k.to_string()).collect()
        }
    }

    /// Trajectory CSV: `t,agent_<id>_{q,p,u,eq}<axis>...`, one row per
    /// logged step.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let axes = self.axis_names();
        let channels: Vec<Channel> = Channel::ALL
            .into_iter()
            .filter(|c| c.csv_prefix().is_some() && self.has_channel(*c))
            .collect();
        let mut line = String::from("t");
        for id in 0..self.agents.len() {
            for c in &channels {
                for a in &axes {
                    write!(
                        line,
                        ",agent_{id}_{}{a}",
                        c.csv_prefix().unwrap_or_default()
                    )
                    .ok();
                }
            }
        }
        writeln!(w, "{line}")?;
        for (k, t) in self.times.iter().enumerate() {
            line.clear();
            write!(line, "{t}").ok();
            for id in 0..self.agents.len() {
                for c in &channels {
                    for x in self.get(*c, id, k)? {
                        write!(line, ",{x}").ok();
                    }
                }
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    /// Long-format error norms: `t,agent,position_error,momentum_error`.
    pub fn write_error_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,agent,position_error,momentum_error")?;
        let norm = |c: &[f64]| c.iter().map(|x| x * x).sum::<f64>().sqrt();
        for (k, t) in self.times.iter().enumerate() {
            for id in 0..self.agents.len() {
                let eq = norm(self.get(Channel::PositionError, id, k)?);
                let ep = norm(self.get(Channel::MomentumError, id, k)?);
                writeln!(w, "{t},{id},{eq},{ep}")?;
            }
        }
        Ok(())
    }

    pub fn write_summary_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, &self.summary())
            .map_err(|e| Error::Io(std::io::Error::other(e)))
    }
}

fn strides(extents: &[usize]) -> Vec<usize> {
    let mut s = vec![1; extents.len()];
    for k in (0..extents.len().saturating_sub(1)).rev() {
        s[k] = s[k + 1] * extents[k + 1];
    }
    s
}

/// True if `series` never increases after its last strict local maximum
/// (or after the start, if it has none).
pub fn monotone_after_last_peak(series: &[f64]) -> bool {
    let last_peak = (1..series.len().saturating_sub(1))
        .rev()
        .find(|&k| series[k] > series[k - 1] && series[k] >= series[k + 1])
        .unwrap_or(0);
    series[last_peak..].windows(2).all(|w| w[1] <= w[0])
}
