//! Timed IDA-PBC tracking law for a single fully actuated agent, plus the
//! spectral contractivity certificate for its target dynamics.
//!
//! Target dynamics (with `v = M0^-1 p`):
//!
//! ```text
//! qdot = v
//! pdot = -K (q - L(t)) + (Jbar - Rbar) v
//! ```
//!
//! which is `xdot = Fd grad Hd` with `Fd = [[0, I], [-I, Jbar - Rbar]]` and
//! `Hd = 1/2 p^T M0^-1 p + 1/2 (q - L)^T K (q - L)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::linalg::{self, Eigenvalue};
use crate::ph::{AgentState, PlantModel, StateRate};

/// Desired stiffness `K`, interconnection `Jbar` and damping `Rbar`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerGains {
    stiffness: DMatrix<f64>,
    interconnection: DMatrix<f64>,
    damping: DMatrix<f64>,
}

impl ControllerGains {
    pub fn new(
        stiffness: DMatrix<f64>,
        interconnection: DMatrix<f64>,
        damping: DMatrix<f64>,
    ) -> Result<Self> {
        let n = stiffness.nrows();
        if n == 0 {
            return Err(Error::Config("gain matrices must be non-empty".into()));
        }
        linalg::require_spd("K", &stiffness, n)?;
        linalg::require_skew("Jbar", &interconnection, n)?;
        // Rbar = 0 is admitted so that lossless targets can be certified
        // (and rejected) rather than failing validation.
        linalg::require_sym_psd("Rbar", &damping, n)?;
        Ok(Self {
            stiffness,
            interconnection,
            damping,
        })
    }

    pub fn dim(&self) -> usize {
        self.stiffness.nrows()
    }

    pub fn stiffness(&self) -> &DMatrix<f64> {
        &self.stiffness
    }

    pub fn interconnection(&self) -> &DMatrix<f64> {
        &self.interconnection
    }

    pub fn damping(&self) -> &DMatrix<f64> {
        &self.damping
    }

    /// `Jbar - Rbar`.
    pub fn structure(&self) -> DMatrix<f64> {
        &self.interconnection - &self.damping
    }

    /// Apply the same coordinate permutation to all three matrices.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let n = self.dim();
        let p = |m: &DMatrix<f64>| DMatrix::from_fn(n, n, |i, j| m[(perm[i], perm[j])]);
        Self {
            stiffness: p(&self.stiffness),
            interconnection: p(&self.interconnection),
            damping: p(&self.damping),
        }
    }
}

/// Sample of a feasible desired trajectory: position, momentum, and the
/// momentum's time derivative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferencePoint {
    pub q_star: DVector<f64>,
    pub p_star: DVector<f64>,
    pub pdot_star: DVector<f64>,
}

impl ReferencePoint {
    pub fn new(
        q_star: DVector<f64>,
        p_star: DVector<f64>,
        pdot_star: DVector<f64>,
    ) -> Result<Self> {
        check_len("reference momentum", q_star.len(), p_star.len())?;
        check_len("reference momentum rate", q_star.len(), pdot_star.len())?;
        let r = Self {
            q_star,
            p_star,
            pdot_star,
        };
        if !r.is_finite() {
            return Err(Error::Input("reference has non-finite entries".into()));
        }
        Ok(r)
    }

    pub fn is_finite(&self) -> bool {
        linalg::all_finite(&self.q_star)
            && linalg::all_finite(&self.p_star)
            && linalg::all_finite(&self.pdot_star)
    }
}

/// Gains and plant with the inverses the control law needs, computed once.
#[derive(Debug, Clone)]
pub struct TrackingController {
    gains: ControllerGains,
    plant: PlantModel,
    stiffness_inv: DMatrix<f64>,
    structure: DMatrix<f64>,
    structure_minv: DMatrix<f64>,
}

impl TrackingController {
    pub fn new(gains: ControllerGains, plant: PlantModel) -> Result<Self> {
        check_len("gains vs plant", plant.dim(), gains.dim())?;
        let stiffness_inv = linalg::spd_inverse(gains.stiffness());
        let structure = gains.structure();
        let structure_minv = &structure * plant.mass_inv();
        Ok(Self {
            gains,
            plant,
            stiffness_inv,
            structure,
            structure_minv,
        })
    }

    pub fn gains(&self) -> &ControllerGains {
        &self.gains
    }

    pub fn plant(&self) -> &PlantModel {
        &self.plant
    }

    pub fn dim(&self) -> usize {
        self.plant.dim()
    }

    fn check_state(&self, state: &AgentState) -> Result<()> {
        check_len("agent position", self.dim(), state.q.len())?;
        check_len("agent momentum", self.dim(), state.p.len())
    }

    fn check_reference(&self, r: &ReferencePoint) -> Result<()> {
        check_len("reference position", self.dim(), r.q_star.len())?;
        check_len("reference momentum", self.dim(), r.p_star.len())?;
        check_len("reference momentum rate", self.dim(), r.pdot_star.len())
    }

    /// `L = q* - K^-1 ((Jbar - Rbar) M0^-1 p* - pdot*)`.
    pub fn setpoint(&self, r: &ReferencePoint) -> Result<DVector<f64>> {
        self.check_reference(r)?;
        let inner = &self.structure_minv * &r.p_star - &r.pdot_star;
        Ok(&r.q_star - &self.stiffness_inv * inner)
    }

    /// Target closed-loop vector field for a given setpoint `L`.
    pub fn target_rhs(&self, state: &AgentState, setpoint: &DVector<f64>) -> Result<StateRate> {
        self.check_state(state)?;
        check_len("setpoint", self.dim(), setpoint.len())?;
        let v = self.plant.mass_inv() * &state.p;
        let p_dot = -(self.gains.stiffness() * (&state.q - setpoint)) + &self.structure * &v;
        Ok(StateRate { q_dot: v, p_dot })
    }

    /// Control input that turns the open-loop plant into the target
    /// dynamics. Full actuation means every open-loop force is cancelled
    /// and replaced: `u = -f_open(q, p) - K (q - L) + (Jbar - Rbar) M0^-1 p`.
    pub fn input(&self, state: &AgentState, r: &ReferencePoint) -> Result<DVector<f64>> {
        let setpoint = self.setpoint(r)?;
        self.input_with_setpoint(state, &setpoint)
    }

    pub fn input_with_setpoint(
        &self,
        state: &AgentState,
        setpoint: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        let target = self.target_rhs(state, setpoint)?;
        Ok(target.p_dot - self.plant.open_loop_force(state))
    }
}

/// `Hd = 1/2 p^T M0^-1 p + 1/2 (q - L)^T K (q - L)`.
pub fn desired_hamiltonian(
    state: &AgentState,
    setpoint: &DVector<f64>,
    gains: &ControllerGains,
    plant: &PlantModel,
) -> Result<f64> {
    let n = plant.dim();
    check_len("agent position", n, state.q.len())?;
    check_len("agent momentum", n, state.p.len())?;
    check_len("setpoint", n, setpoint.len())?;
    check_len("gains", n, gains.dim())?;
    let e = &state.q - setpoint;
    Ok(0.5 * state.p.dot(&(plant.mass_inv() * &state.p)) + 0.5 * e.dot(&(gains.stiffness() * &e)))
}

/// Time-varying setpoint `L(t)` that makes the reference a trajectory of the
/// target dynamics.
pub fn compute_setpoint(
    reference: &ReferencePoint,
    gains: &ControllerGains,
    plant: &PlantModel,
) -> Result<DVector<f64>> {
    TrackingController::new(gains.clone(), plant.clone())?.setpoint(reference)
}

/// The tracking control input `u`.
pub fn control_law(
    state: &AgentState,
    reference: &ReferencePoint,
    gains: &ControllerGains,
    plant: &PlantModel,
) -> Result<DVector<f64>> {
    TrackingController::new(gains.clone(), plant.clone())?.input(state, reference)
}

/// Default probe grid for the `N`-matrix test.
pub const EPSILON_GRID: [f64; 4] = [1e-8, 1e-6, 1e-4, 1e-2];
/// Hurwitz margin and relative imaginary-axis tolerance.
pub const SPECTRAL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NMatrixProbe {
    pub epsilon: f64,
    pub eigenvalues: Vec<Eigenvalue>,
    /// `min |re(lambda)| / max(1, |lambda|)` over the spectrum.
    pub min_axis_distance: f64,
    pub has_imaginary_axis_eig: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContractivityReport {
    pub alpha: f64,
    pub beta: f64,
    pub eta: f64,
    pub fd_eigenvalues: Vec<Eigenvalue>,
    pub fd_hurwitz: bool,
    pub n_matrix: Vec<NMatrixProbe>,
    /// True when no probed epsilon yields an axis-free spectrum.
    pub n_has_imaginary_axis_eig: bool,
    pub epsilon_grid: Vec<f64>,
    pub tol: f64,
    pub certified: bool,
    pub note: String,
}

/// `Fd = [[0, I], [-I, Jbar - Rbar]]`.
pub fn target_structure_matrix(gains: &ControllerGains) -> DMatrix<f64> {
    let n = gains.dim();
    linalg::block2(
        &DMatrix::zeros(n, n),
        &DMatrix::identity(n, n),
        &-DMatrix::identity(n, n),
        &gains.structure(),
    )
}

/// `N = [[Fd, eta Fd Fd^T], [-(eta + eps) I, -Fd^T]]`.
pub fn contraction_test_matrix(fd: &DMatrix<f64>, eta: f64, epsilon: f64) -> DMatrix<f64> {
    let m = fd.nrows();
    linalg::block2(
        fd,
        &(fd * fd.transpose() * eta),
        &(DMatrix::identity(m, m) * -(eta + epsilon)),
        &-fd.transpose(),
    )
}

/// Spectral contractivity check of the target dynamics.
///
/// The desired Hamiltonian is quadratic, so its Hessian is the constant
/// `blockdiag(K, M0^-1)`; `alpha` and `beta` are its exact extremal
/// eigenvalues. Certification requires `Fd` Hurwitz and at least one
/// epsilon in the grid for which `N` has no eigenvalue on the imaginary
/// axis.
pub fn certify_contractivity(
    gains: &ControllerGains,
    plant: &PlantModel,
    epsilon_grid: &[f64],
    tol: f64,
) -> Result<ContractivityReport> {
    if plant.dim() != gains.dim() {
        return Err(Error::Certification(format!(
            "gain dimension {} does not match plant dimension {}",
            gains.dim(),
            plant.dim()
        )));
    }
    if epsilon_grid.is_empty() || epsilon_grid.iter().any(|e| !(*e > 0.0)) {
        return Err(Error::Certification(
            "epsilon grid must be non-empty and positive".into(),
        ));
    }
    if !(tol > 0.0) {
        return Err(Error::Certification("tolerance must be positive".into()));
    }
    let n = gains.dim();
    for (name, m) in [("K", gains.stiffness()), ("M0", plant.mass())] {
        linalg::require_spd(name, m, n).map_err(|e| Error::Certification(e.to_string()))?;
    }

    let hessian = linalg::block_diag(gains.stiffness(), plant.mass_inv());
    let h_eigs = linalg::symmetric_eigenvalues(&hessian);
    let alpha = h_eigs[0];
    let beta = h_eigs[h_eigs.len() - 1];
    let eta = 1.0 - alpha / beta;

    let fd = target_structure_matrix(gains);
    let fd_eigenvalues = linalg::eigenvalues(&fd);
    let fd_hurwitz = fd_eigenvalues.iter().all(|e| e.re < -tol);

    let n_matrix: Vec<NMatrixProbe> = epsilon_grid
        .iter()
        .map(|&epsilon| {
            let eigenvalues = linalg::eigenvalues(&contraction_test_matrix(&fd, eta, epsilon));
            let min_axis_distance = eigenvalues
                .iter()
                .map(|e| e.re.abs() / e.norm().max(1.0))
                .fold(f64::INFINITY, f64::min);
            let has_imaginary_axis_eig = eigenvalues.iter().any(|e| e.on_imaginary_axis(tol));
            NMatrixProbe {
                epsilon,
                eigenvalues,
                min_axis_distance,
                has_imaginary_axis_eig,
            }
        })
        .collect();
    let n_has_imaginary_axis_eig = n_matrix.iter().all(|p| p.has_imaginary_axis_eig);
    let certified = fd_hurwitz && !n_has_imaginary_axis_eig;

    let note = if alpha < beta {
        "Hessian of Hd is constant; strict bounds hold with alpha - delta, beta + delta for any delta > 0"
            .to_string()
    } else {
        "Hessian of Hd is a multiple of the identity (alpha = beta, eta = 0)".to_string()
    };

    Ok(ContractivityReport {
        alpha,
        beta,
        eta,
        fd_eigenvalues,
        fd_hurwitz,
        n_matrix,
        n_has_imaginary_axis_eig,
        epsilon_grid: epsilon_grid.to_vec(),
        tol,
        certified,
        note,
    })
}
