use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::MeshGraph;

/// Leader position, velocity and acceleration at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySample {
    pub q: DVector<f64>,
    pub q_dot: DVector<f64>,
    pub q_ddot: DVector<f64>,
}

/// Exogenous reference trajectory known only to the leader.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum LeaderTrajectory {
    /// General circular orbit formation in the Hill frame:
    /// `x = r/2 cos(wt)`, `y = -r sin(wt)`, `z = sqrt(3)/2 r cos(wt)`.
    Gco {
        radius: f64,
        rate: f64,
    },
    Static {
        position: Vec<f64>,
    },
    /// `q(t) = sum_k c_k t^k`, one coefficient vector per power.
    Polynomial {
        coefficients: Vec<Vec<f64>>,
    },
}

impl LeaderTrajectory {
    pub fn dim(&self) -> usize {
        match self {
            Self::Gco { .. } => 3,
            Self::Static { position } => position.len(),
            Self::Polynomial { coefficients } => coefficients.first().map_or(0, Vec::len),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = |xs: &[f64]| xs.iter().all(|x| x.is_finite());
        match self {
            Self::Gco { radius, rate } => {
                if !(radius.is_finite() && rate.is_finite() && *radius >= 0.0) {
                    return Err(Error::Config("gco radius must be finite and >= 0".into()));
                }
            }
            Self::Static { position } => {
                if position.is_empty() || !finite(position) {
                    return Err(Error::Config(
                        "static leader position must be finite and non-empty".into(),
                    ));
                }
            }
            Self::Polynomial { coefficients } => {
                let n = self.dim();
                if n == 0 || coefficients.iter().any(|c| c.len() != n || !finite(c)) {
                    return Err(Error::Config(
                        "polynomial coefficients must be non-empty, finite, and of equal length"
                            .into(),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn sample(&self, t: f64) -> TrajectorySample {
        match self {
            Self::Gco { radius, rate } => {
                let (s, c) = (rate * t).sin_cos();
                let (r, w) = (*radius, *rate);
                let h = 0.75f64.sqrt() * r;
                TrajectorySample {
                    q: DVector::from_vec(vec![0.5 * r * c, -r * s, h * c]),
                    q_dot: DVector::from_vec(vec![-0.5 * r * w * s, -r * w * c, -h * w * s]),
                    q_ddot: DVector::from_vec(vec![
                        -0.5 * r * w * w * c,
                        r * w * w * s,
                        -h * w * w * c,
                    ]),
                }
            }
            Self::Static { position } => {
                let n = position.len();
                TrajectorySample {
                    q: DVector::from_row_slice(position),
                    q_dot: DVector::zeros(n),
                    q_ddot: DVector::zeros(n),
                }
            }
            Self::Polynomial { coefficients } => {
                let n = self.dim();
                let mut out = TrajectorySample {
                    q: DVector::zeros(n),
                    q_dot: DVector::zeros(n),
                    q_ddot: DVector::zeros(n),
                };
                for (k, c) in coefficients.iter().enumerate() {
                    let c = DVector::from_row_slice(c);
                    let kf = k as f64;
                    out.q += &c * t.powi(k as i32);
                    if k >= 1 {
                        out.q_dot += &c * (kf * t.powi(k as i32 - 1));
                    }
                    if k >= 2 {
                        out.q_ddot += &c * (kf * (kf - 1.0) * t.powi(k as i32 - 2));
                    }
                }
                out
            }
        }
    }
}

/// Formation geometry: one offset vector per mesh axis, plus the leader's
/// trajectory. Pairwise offsets are `Delta_{i,j} = sum_k (i^k - j^k) a_k`,
/// which makes them path independent.
#[derive(Debug, Clone, PartialEq)]
pub struct FormationSpec {
    axis_offsets: Vec<DVector<f64>>,
    leader: LeaderTrajectory,
}

impl FormationSpec {
    pub fn new(axis_offsets: Vec<DVector<f64>>, leader: LeaderTrajectory) -> Result<Self> {
        leader.validate()?;
        let n = leader.dim();
        if let Some(k) = axis_offsets.iter().position(|a| a.len() != n) {
            return Err(Error::Config(format!(
                "axis offset {k} has length {}, leader trajectory has dimension {n}",
                axis_offsets[k].len()
            )));
        }
        if axis_offsets
            .iter()
            .any(|a| a.iter().any(|x| !x.is_finite()))
        {
            return Err(Error::Config("axis offsets must be finite".into()));
        }
        Ok(Self {
            axis_offsets,
            leader,
        })
    }

    pub fn dim(&self) -> usize {
        self.leader.dim()
    }

    pub fn axis_offsets(&self) -> &[DVector<f64>] {
        &self.axis_offsets
    }

    pub fn leader(&self) -> &LeaderTrajectory {
        &self.leader
    }

    pub fn check_graph(&self, graph: &MeshGraph) -> Result<()> {
        if graph.dims() != self.axis_offsets.len() {
            return Err(Error::Config(format!(
                "mesh has {} axes but {} axis offsets were given",
                graph.dims(),
                self.axis_offsets.len()
            )));
        }
        Ok(())
    }

    /// Desired `q_i - q_j`.
    pub fn offset(&self, graph: &MeshGraph, i: usize, j: usize) -> DVector<f64> {
        let (ii, jj) = (graph.multi_index(i), graph.multi_index(j));
        let mut d = DVector::zeros(self.dim());
        for (k, a) in self.axis_offsets.iter().enumerate() {
            let steps = ii[k] as f64 - jj[k] as f64;
            if steps != 0.0 {
                d += a * steps;
            }
        }
        d
    }

    /// Desired `q_i - q_leader`.
    pub fn offset_from_leader(&self, graph: &MeshGraph, i: usize) -> DVector<f64> {
        self.offset(graph, i, graph.leader())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn gco_at_origin_time() {
        let n0 = 0.5307;
        let traj = LeaderTrajectory::Gco {
            radius: 5.0,
            rate: n0,
        };
        let s = traj.sample(0.0);
        assert_abs_diff_eq!(s.q[0], 2.5, epsilon = 1e-15);
        assert_abs_diff_eq!(s.q[1], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s.q[2], 3f64.sqrt() / 2.0 * 5.0, epsilon = 1e-14);
        assert_abs_diff_eq!(s.q_dot[0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s.q_dot[1], -5.0 * n0, epsilon = 1e-15);
        assert_abs_diff_eq!(s.q_dot[2], 0.0, epsilon = 1e-15);
    }

    fn check_derivatives(traj: &LeaderTrajectory, times: &[f64]) {
        for &t in times {
            let h = 1e-5;
            let (a, b, c) = (traj.sample(t - h), traj.sample(t), traj.sample(t + h));
            let fd_v = (&c.q - &a.q) / (2.0 * h);
            let fd_a = (&c.q_dot - &a.q_dot) / (2.0 * h);
            assert!((&fd_v - &b.q_dot).norm() <= 1e-6 * b.q_dot.norm().max(1.0));
            assert!((&fd_a - &b.q_ddot).norm() <= 1e-6 * b.q_ddot.norm().max(1.0));
        }
    }

    #[test]
    fn derivative_consistency() {
        let times = [0.0, 0.37, 1.2, 5.5, 19.0];
        check_derivatives(
            &LeaderTrajectory::Gco {
                radius: 5.0,
                rate: 0.5307,
            },
            &times,
        );
        check_derivatives(
            &LeaderTrajectory::Polynomial {
                coefficients: vec![
                    vec![1.0, 0.0],
                    vec![0.5, -1.0],
                    vec![0.0, 0.25],
                    vec![0.01, 0.0],
                ],
            },
            &times,
        );
        check_derivatives(
            &LeaderTrajectory::Static {
                position: vec![1.0, 2.0],
            },
            &times,
        );
    }

    #[test]
    fn rejects_mismatched_offsets() {
        let leader = LeaderTrajectory::Static {
            position: vec![0.0; 3],
        };
        assert!(FormationSpec::new(vec![DVector::zeros(2)], leader.clone()).is_err());
        assert!(FormationSpec::new(vec![DVector::zeros(3)], leader).is_ok());
        let bad = LeaderTrajectory::Polynomial {
            coefficients: vec![vec![1.0], vec![1.0, 2.0]],
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn trajectory_config_rejects_unknown_keys() {
        let ok: LeaderTrajectory =
            toml::from_str("kind = \"gco\"\nradius = 5.0\nrate = 0.5").unwrap();
        assert_eq!(
            ok,
            LeaderTrajectory::Gco {
                radius: 5.0,
                rate: 0.5
            }
        );
        assert!(toml::from_str::<LeaderTrajectory>(
            "kind = \"gco\"\nradius = 5.0\nrate = 0.5\nfoo = 1"
        )
        .is_err());
    }
}
