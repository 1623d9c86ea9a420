//! Continuum view of a mesh network with identical gains.
//!
//! Along every mesh direction the follower error obeys a finite-difference
//! relation whose coefficients are `F1 = M0^-1 K0` and
//! `F2 = -M0^-1 (Jbar0 - Rbar0)`. Separating variables leaves the temporal
//! system `T'' + F2 T' + F1 T = 0`, whose stability is independent of the
//! network size.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::controller::{ControllerGains, SPECTRAL_TOL};
use crate::error::{Error, Result};
use crate::linalg::{self, Eigenvalue};
use crate::network::{build_mesh, FormationSpec, MeshGraph};
use crate::ph::PlantModel;
use crate::sim::{self, Channel, InitialPerturbation, Network, SimConfig, TrajectoryLog};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdeCoefficients {
    #[serde(with = "rows")]
    pub f1: DMatrix<f64>,
    #[serde(with = "rows")]
    pub f2: DMatrix<f64>,
    /// Grid spacing `1 / (r^k - 1)` per mesh direction.
    pub deltas: Vec<f64>,
}

impl PdeCoefficients {
    /// Coefficients from the raw design matrices.
    pub fn homogeneous(
        mass: &DMatrix<f64>,
        stiffness: &DMatrix<f64>,
        interconnection: &DMatrix<f64>,
        damping: &DMatrix<f64>,
        extents: &[usize],
    ) -> Result<Self> {
        let n = mass.nrows();
        linalg::require_spd("M0", mass, n)?;
        let m_inv = mass
            .clone()
            .cholesky()
            .map(|c| c.inverse())
            .ok_or_else(|| Error::Config("M0 not invertible".into()))?;
        let deltas = extents
            .iter()
            .enumerate()
            .map(|(axis, &r)| {
                if r < 2 {
                    Err(Error::DegenerateDirection { axis })
                } else {
                    Ok(1.0 / (r as f64 - 1.0))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            f1: &m_inv * stiffness,
            f2: -(&m_inv * (interconnection - damping)),
            deltas,
        })
    }

    pub fn dim(&self) -> usize {
        self.f1.nrows()
    }
}

pub fn build_pde_coefficients(
    gains: &ControllerGains,
    plant: &PlantModel,
    extents: &[usize],
) -> Result<PdeCoefficients> {
    if gains.dim() != plant.dim() {
        return Err(Error::Dimension {
            context: "gains vs plant",
            expected: plant.dim(),
            actual: gains.dim(),
        });
    }
    PdeCoefficients::homogeneous(
        plant.mass(),
        gains.stiffness(),
        gains.interconnection(),
        gains.damping(),
        extents,
    )
}

/// Largest violation, over followers and logged steps, of
///
/// ```text
/// Q_i q~''_i - sum_j q~''_j = -F1 (Q_i q~_i - sum_j q~_j) - F2 (Q_i q~'_i - sum_j q~'_j)
/// ```
///
/// where `j` ranges over the `Q_i` predecessors of agent `i`.
pub fn discretization_residual(
    log: &TrajectoryLog,
    graph: &MeshGraph,
    coeffs: &PdeCoefficients,
) -> Result<f64> {
    if log.agent_count() != graph.len() {
        return Err(Error::Input(format!(
            "log has {} agents, graph has {}",
            log.agent_count(),
            graph.len()
        )));
    }
    if log.dim() != coeffs.dim() {
        return Err(Error::Input(format!(
            "log dimension {} does not match coefficient dimension {}",
            log.dim(),
            coeffs.dim()
        )));
    }
    for c in [
        Channel::PositionError,
        Channel::ErrorVelocity,
        Channel::ErrorAcceleration,
    ] {
        if !log.has_channel(c) {
            return Err(Error::Input(format!("log is missing the {c:?} channel")));
        }
    }
    let n = log.dim();
    let diff = |c: Channel, i: usize, preds: &[(usize, usize)], k: usize| -> Result<DVector<f64>> {
        let mut d = DVector::from_row_slice(log.get(c, i, k)?) * preds.len() as f64;
        for &(_, j) in preds {
            d -= DVector::from_row_slice(log.get(c, j, k)?);
        }
        Ok(d)
    };
    let mut worst = 0.0_f64;
    for i in 0..graph.len() {
        let preds = graph.predecessors(i);
        if preds.is_empty() {
            continue;
        }
        for k in 0..log.len() {
            let e = diff(Channel::PositionError, i, preds, k)?;
            let de = diff(Channel::ErrorVelocity, i, preds, k)?;
            let dde = diff(Channel::ErrorAcceleration, i, preds, k)?;
            let r = dde + &coeffs.f1 * e + &coeffs.f2 * de;
            debug_assert_eq!(r.len(), n);
            worst = worst.max(r.norm());
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalStabilityReport {
    #[serde(with = "rows")]
    pub b: DMatrix<f64>,
    pub b_eigenvalues: Vec<Eigenvalue>,
    pub b_hurwitz: bool,
    pub lyapunov_decrescent: bool,
    pub lyapunov_samples: usize,
    /// Largest `|y2^T Jbar0 y2|` over the samples.
    pub max_skew_contribution: f64,
    /// Largest `|Vdot(y) + y2^T Rbar0 y2|` over the samples.
    pub max_identity_residual: f64,
    pub gamma: f64,
    pub certified: bool,
}

pub const LYAPUNOV_SAMPLES: usize = 1000;
const LYAPUNOV_SEED: u64 = 0x7e3d_5a11;

/// `B = [[0, I], [-F1, -F2]]`.
pub fn temporal_matrix(coeffs: &PdeCoefficients) -> DMatrix<f64> {
    let n = coeffs.dim();
    linalg::block2(
        &DMatrix::zeros(n, n),
        &DMatrix::identity(n, n),
        &-&coeffs.f1,
        &-&coeffs.f2,
    )
}

/// Spectral and Lyapunov certificate of the temporal system, with
/// `V(y) = 1/2 y1^T K0 y1 + 1/2 y2^T M0 y2`.
pub fn certify_temporal_stability(
    coeffs: &PdeCoefficients,
    gains: &ControllerGains,
    plant: &PlantModel,
) -> Result<TemporalStabilityReport> {
    let n = gains.dim();
    if plant.dim() != n || coeffs.dim() != n {
        return Err(Error::Certification(format!(
            "dimension mismatch: gains {n}, plant {}, coefficients {}",
            plant.dim(),
            coeffs.dim()
        )));
    }
    for (name, m) in [("K0", gains.stiffness()), ("M0", plant.mass())] {
        linalg::require_spd(name, m, n).map_err(|e| Error::Certification(e.to_string()))?;
    }
    let expected = build_pde_coefficients(gains, plant, &[])?;
    let mismatch = (&expected.f1 - &coeffs.f1).norm() + (&expected.f2 - &coeffs.f2).norm();
    if mismatch > 1e-9 * (1.0 + expected.f1.norm() + expected.f2.norm()) {
        return Err(Error::Certification(format!(
            "coefficients do not match the gains (deviation {mismatch:.3e})"
        )));
    }

    let b = temporal_matrix(coeffs);
    let b_eigenvalues = linalg::eigenvalues(&b);
    let b_hurwitz = b_eigenvalues.iter().all(|e| e.re < -SPECTRAL_TOL);

    let grad_scale = linalg::block_diag(gains.stiffness(), plant.mass());
    let mut rng = ChaCha8Rng::seed_from_u64(LYAPUNOV_SEED);
    let mut decrescent = true;
    let mut max_skew = 0.0_f64;
    let mut max_residual = 0.0_f64;
    for _ in 0..LYAPUNOV_SAMPLES {
        let y = DVector::from_fn(2 * n, |_, _| rng.random_range(-1.0..=1.0));
        let y2 = y.rows(n, n).into_owned();
        let v_dot = (&grad_scale * &y).dot(&(&b * &y));
        let skew = y2.dot(&(gains.interconnection() * &y2));
        let dissipation = y2.dot(&(gains.damping() * &y2));
        let scale = 1.0 + v_dot.abs() + dissipation.abs();
        max_skew = max_skew.max(skew.abs());
        max_residual = max_residual.max((v_dot + dissipation).abs());
        if v_dot > 1e-12 * scale {
            decrescent = false;
        }
    }

    let p_eigs = linalg::symmetric_eigenvalues(&grad_scale);
    let gamma = (p_eigs[p_eigs.len() - 1] / p_eigs[0]).sqrt();
    Ok(TemporalStabilityReport {
        b,
        b_eigenvalues,
        b_hurwitz,
        lyapunov_decrescent: decrescent,
        lyapunov_samples: LYAPUNOV_SAMPLES,
        max_skew_contribution: max_skew,
        max_identity_residual: max_residual,
        gamma,
        certified: b_hurwitz && decrescent,
    })
}

/// Everything a size sweep needs besides the mesh extents.
#[derive(Debug, Clone)]
pub struct SweepTemplate {
    pub formation: FormationSpec,
    pub plant: PlantModel,
    pub gains: ControllerGains,
}

impl SweepTemplate {
    /// Network on a mesh with the given extents, using the leading axis
    /// offsets of the template formation.
    pub fn network(&self, extents: &[usize]) -> Result<Network> {
        let offsets = self.formation.axis_offsets();
        if extents.is_empty() || extents.len() > offsets.len() {
            return Err(Error::Config(format!(
                "mesh of dimension {} needs between 1 and {} extents",
                extents.len(),
                offsets.len()
            )));
        }
        let formation = FormationSpec::new(
            offsets[..extents.len()].to_vec(),
            self.formation.leader().clone(),
        )?;
        let graph = build_mesh(extents.len(), extents)?;
        Network::uniform(graph, formation, self.plant.clone(), self.gains.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub extents: Vec<usize>,
    pub agents: usize,
    pub peak_error: f64,
    pub final_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SasSweepResult {
    pub rows: Vec<SweepRow>,
    pub alpha: f64,
    pub gamma: f64,
    pub uniform_bound: f64,
    pub convergence_threshold: f64,
    /// Least-squares slope of peak error against agent count.
    pub slope: f64,
    /// 95% Student-t interval of the slope; absent with fewer than three
    /// sizes.
    pub slope_ci: Option<[f64; 2]>,
    pub bounded: bool,
    pub converged: bool,
    pub no_growth: bool,
    pub temporal: TemporalStabilityReport,
    pub sas_pass: bool,
    pub reasons: Vec<String>,
}

impl SasSweepResult {
    pub fn sizes(&self) -> Vec<Vec<usize>> {
        self.rows.iter().map(|r| r.extents.clone()).collect()
    }

    pub fn peak_errors(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.peak_error).collect()
    }

    pub fn final_errors(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.final_error).collect()
    }

    /// `N,peak_error,final_error,bound`.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "N,peak_error,final_error,bound")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{}",
                r.agents, r.peak_error, r.final_error, self.uniform_bound
            )?;
        }
        Ok(())
    }
}

/// Ordinary least-squares slope and its two-sided 95% interval.
pub fn slope_with_ci(x: &[f64], y: &[f64]) -> (f64, Option<[f64; 2]>) {
    let m = x.len();
    if m < 2 {
        return (0.0, None);
    }
    let mf = m as f64;
    let mx = x.iter().sum::<f64>() / mf;
    let my = y.iter().sum::<f64>() / mf;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx == 0.0 {
        return (0.0, None);
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    if m < 3 {
        return (slope, None);
    }
    let intercept = my - slope * mx;
    let sse: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - intercept - slope * a).powi(2))
        .sum();
    let se = (sse / (mf - 2.0) / sxx).sqrt();
    let t = StudentsT::new(0.0, 1.0, mf - 2.0)
        .map(|d| d.inverse_cdf(0.975))
        .unwrap_or(f64::INFINITY);
    (slope, Some([slope - t * se, slope + t * se]))
}

/// Roundoff allowance of the sweep predicates, relative to
/// `max(alpha, peak, 1)`: for peaks exceeding the uniform bound and for
/// growth of the peak across the size grid.
pub const GROWTH_TOL: f64 = 1e-9;

/// Simulate every size and test size-independence of the error bound.
///
/// Each run starts from the same seed with its perturbation rescaled so
/// that the largest initial offset is exactly `alpha`, which makes runs of
/// different size comparable under the hypothesis `max_i ||x_i(0)|| <= alpha`.
pub fn sas_sweep(
    template: &SweepTemplate,
    sizes: &[Vec<usize>],
    config: &SimConfig,
    convergence_threshold: f64,
) -> Result<SasSweepResult> {
    if sizes.is_empty() {
        return Err(Error::Config("size list is empty".into()));
    }
    let alpha = match &config.initial_perturbation {
        InitialPerturbation::None => 0.0,
        InitialPerturbation::Uniform { alpha } | InitialPerturbation::MaxScaled { alpha } => *alpha,
        InitialPerturbation::Explicit { .. } => {
            return Err(Error::Config(
                "a sweep needs a random perturbation, not explicit offsets".into(),
            ))
        }
    };
    let mut cfg = config.clone();
    if alpha > 0.0 {
        cfg.initial_perturbation = InitialPerturbation::MaxScaled { alpha };
    }
    cfg.validate()?;

    let coeffs = build_pde_coefficients(&template.gains, &template.plant, &[])?;
    let temporal = certify_temporal_stability(&coeffs, &template.gains, &template.plant)?;

    let outcomes: Vec<Result<SweepRow>> = sizes
        .par_iter()
        .map(|extents| {
            let wrap = |e: Error| Error::Sweep {
                size: extents.clone(),
                source: Box::new(e),
            };
            let network = template.network(extents).map_err(wrap)?;
            let mut peak = 0.0_f64;
            let mut last = 0.0_f64;
            sim::run(&network, &cfg, |frame| {
                let worst = frame.errors.iter().map(|e| e.q.norm()).fold(0.0, f64::max);
                peak = peak.max(worst);
                last = worst;
            })
            .map_err(wrap)?;
            Ok(SweepRow {
                extents: extents.clone(),
                agents: network.len(),
                peak_error: peak,
                final_error: last,
            })
        })
        .collect();
    let rows = outcomes.into_iter().collect::<Result<Vec<_>>>()?;

    let uniform_bound = temporal.gamma * alpha;
    let x: Vec<f64> = rows.iter().map(|r| r.agents as f64).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.peak_error).collect();
    let (slope, slope_ci) = slope_with_ci(&x, &y);

    let slack = GROWTH_TOL * y.iter().copied().fold(alpha.max(1.0), f64::max);
    let within_bound = |r: &SweepRow| r.peak_error <= uniform_bound + slack;
    let bounded = rows.iter().all(&within_bound);
    let converged = rows.iter().all(|r| r.final_error < convergence_threshold);
    // Growth across the whole grid below roundoff of the peaks is no growth,
    // whatever its interval says.
    let span =
        x.iter().copied().fold(f64::MIN, f64::max) - x.iter().copied().fold(f64::MAX, f64::min);
    let negligible = slope * span <= slack;
    let no_growth = negligible || slope_ci.is_none_or(|ci| ci[0] <= 0.0);

    let mut reasons = Vec::new();
    if !temporal.b_hurwitz {
        reasons.push("temporal matrix B is not Hurwitz".to_string());
    }
    if !temporal.lyapunov_decrescent {
        reasons.push("Lyapunov derivative positive at a sample".to_string());
    }
    for r in &rows {
        if !within_bound(r) {
            reasons.push(format!(
                "size {:?}: peak error {:.3e} exceeds bound {:.3e}",
                r.extents, r.peak_error, uniform_bound
            ));
        }
        if r.final_error >= convergence_threshold {
            reasons.push(format!(
                "size {:?}: final error {:.3e} not below {:.1e}",
                r.extents, r.final_error, convergence_threshold
            ));
        }
    }
    if !no_growth {
        reasons.push(format!("peak error grows with N (slope {slope:.3e})"));
    }

    Ok(SasSweepResult {
        rows,
        alpha,
        gamma: temporal.gamma,
        uniform_bound,
        convergence_threshold,
        slope,
        slope_ci,
        bounded,
        converged,
        no_growth,
        sas_pass: reasons.is_empty(),
        temporal,
        reasons,
    })
}

mod rows {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        crate::linalg::to_rows(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        crate::linalg::from_rows("matrix", &rows).map_err(serde::de::Error::custom)
    }
}
