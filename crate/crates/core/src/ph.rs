//! Port-Hamiltonian agent model: state, open-loop dynamics, energy, and the
//! concrete plants (generic mechanical agent and the Hill-frame spacecraft).
//!
//! Each agent is fully actuated with a constant mass matrix `M0`:
//!
//! ```text
//! qdot = M0^-1 p
//! pdot = -grad U(q) - R M0^-1 p + G M0^-1 p + u
//! H(q, p) = 1/2 p^T M0^-1 p + U(q)
//! ```
//!
//! `R` is the (positive semi-definite) damping and `G` an optional skew
//! gyroscopic matrix. `G` is workless, so it never enters the energy; it is
//! how velocity-dependent Coriolis terms of the rotating Hill frame are
//! housed.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::linalg;

/// Position/momentum pair of one agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub q: DVector<f64>,
    pub p: DVector<f64>,
}

impl AgentState {
    pub fn new(q: DVector<f64>, p: DVector<f64>) -> Result<Self> {
        if q.is_empty() {
            return Err(Error::Config("agent state must have dimension >= 1".into()));
        }
        check_len("AgentState momentum", q.len(), p.len())?;
        Ok(Self { q, p })
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            q: DVector::zeros(n),
            p: DVector::zeros(n),
        }
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }

    pub fn is_finite(&self) -> bool {
        linalg::all_finite(&self.q) && linalg::all_finite(&self.p)
    }
}

/// Time derivative of an [`AgentState`].
#[derive(Debug, Clone, PartialEq)]
pub struct StateRate {
    pub q_dot: DVector<f64>,
    pub p_dot: DVector<f64>,
}

/// Potential energy `U(q)` and its gradient.
pub trait Potential: Send + Sync + fmt::Debug {
    fn energy(&self, q: &DVector<f64>) -> f64;
    fn gradient(&self, q: &DVector<f64>) -> DVector<f64>;
}

/// `U(q) = 1/2 q^T S q` with symmetric `S` (not necessarily definite).
#[derive(Debug, Clone)]
pub struct QuadraticPotential {
    stiffness: DMatrix<f64>,
}

impl QuadraticPotential {
    pub fn new(stiffness: DMatrix<f64>) -> Result<Self> {
        if !stiffness.is_square() {
            return Err(Error::Config("potential stiffness must be square".into()));
        }
        let asym = (&stiffness - stiffness.transpose()).abs().max();
        if asym > 1e-12 * stiffness.abs().max().max(1.0) {
            return Err(Error::Config(
                "potential stiffness must be symmetric".into(),
            ));
        }
        Ok(Self { stiffness })
    }

    pub fn zero(n: usize) -> Self {
        Self {
            stiffness: DMatrix::zeros(n, n),
        }
    }

    pub fn stiffness(&self) -> &DMatrix<f64> {
        &self.stiffness
    }
}

impl Potential for QuadraticPotential {
    fn energy(&self, q: &DVector<f64>) -> f64 {
        0.5 * q.dot(&(&self.stiffness * q))
    }

    fn gradient(&self, q: &DVector<f64>) -> DVector<f64> {
        &self.stiffness * q
    }
}

/// Mass, damping and force field of one agent's open-loop dynamics.
#[derive(Clone)]
pub struct PlantModel {
    mass: DMatrix<f64>,
    mass_inv: DMatrix<f64>,
    damping: DMatrix<f64>,
    gyroscopic: DMatrix<f64>,
    potential: Arc<dyn Potential>,
}

impl fmt::Debug for PlantModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PlantModel")
            .field("mass", &self.mass)
            .field("damping", &self.damping)
            .field("gyroscopic", &self.gyroscopic)
            .field("potential", &self.potential)
            .finish()
    }
}

const GRADIENT_CHECK_TOL: f64 = 1e-5;

impl PlantModel {
    /// Validates `mass` (SPD), `damping` (PSD symmetric part) and the
    /// gradient/energy consistency of `potential` at a few seeded points.
    pub fn new(
        mass: DMatrix<f64>,
        damping: DMatrix<f64>,
        potential: Arc<dyn Potential>,
    ) -> Result<Self> {
        let n = mass.nrows();
        if n == 0 {
            return Err(Error::Config("plant dimension must be >= 1".into()));
        }
        linalg::require_spd("M0", &mass, n)?;
        linalg::require_psd_sym_part("Rdiss", &damping, n)?;
        let mass_inv = linalg::spd_inverse(&mass);
        let plant = Self {
            mass,
            mass_inv,
            damping,
            gyroscopic: DMatrix::zeros(n, n),
            potential,
        };
        let err = plant.gradient_consistency(8, 0x5eed, 2.0);
        if !(err < GRADIENT_CHECK_TOL) {
            return Err(Error::Config(format!(
                "potential gradient inconsistent with energy (relative error {err:e})"
            )));
        }
        Ok(plant)
    }

    /// Unit mass, no damping, no potential.
    pub fn free_particle(n: usize) -> Self {
        Self::new(
            DMatrix::identity(n, n),
            DMatrix::zeros(n, n),
            Arc::new(QuadraticPotential::zero(n)),
        )
        .expect("identity mass is valid")
    }

    /// Adds a skew (workless) velocity-dependent force `G * M0^-1 p`.
    pub fn with_gyroscopic(mut self, gyroscopic: DMatrix<f64>) -> Result<Self> {
        linalg::require_skew("G", &gyroscopic, self.dim())?;
        self.gyroscopic = gyroscopic;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.mass.nrows()
    }

    pub fn mass(&self) -> &DMatrix<f64> {
        &self.mass
    }

    pub fn mass_inv(&self) -> &DMatrix<f64> {
        &self.mass_inv
    }

    pub fn damping(&self) -> &DMatrix<f64> {
        &self.damping
    }

    pub fn gyroscopic(&self) -> &DMatrix<f64> {
        &self.gyroscopic
    }

    pub fn potential(&self) -> &dyn Potential {
        self.potential.as_ref()
    }

    pub fn potential_energy(&self, q: &DVector<f64>) -> f64 {
        self.potential.energy(q)
    }

    /// `grad U(q)`.
    pub fn potential_force(&self, q: &DVector<f64>) -> DVector<f64> {
        self.potential.gradient(q)
    }

    /// Every open-loop force acting on the momentum except the input:
    /// `-grad U(q) - R v + G v` with `v = M0^-1 p`.
    pub fn open_loop_force(&self, state: &AgentState) -> DVector<f64> {
        let v = &self.mass_inv * &state.p;
        let mut f = -self.potential.gradient(&state.q);
        f -= &self.damping * &v;
        f += &self.gyroscopic * &v;
        f
    }

    /// Max relative error between the potential's gradient and central
    /// finite differences of its energy, at `samples` points drawn
    /// uniformly from `[-radius, radius]^n`. The relative error is floored
    /// at unit gradient scale.
    pub fn gradient_consistency(&self, samples: usize, seed: u64, radius: f64) -> f64 {
        let n = self.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst = 0.0_f64;
        for _ in 0..samples {
            let q = DVector::from_fn(n, |_, _| rng.random_range(-radius..=radius));
            let grad = self.potential.gradient(&q);
            let mut fd = DVector::zeros(n);
            for k in 0..n {
                let h = 1e-5 * q[k].abs().max(1.0);
                let mut qp = q.clone();
                let mut qm = q.clone();
                qp[k] += h;
                qm[k] -= h;
                fd[k] = (self.potential.energy(&qp) - self.potential.energy(&qm)) / (2.0 * h);
            }
            let rel = (&fd - &grad).norm() / grad.norm().max(1.0);
            worst = worst.max(if rel.is_nan() { f64::INFINITY } else { rel });
        }
        worst
    }

    fn check_state(&self, state: &AgentState) -> Result<()> {
        check_len("agent position", self.dim(), state.q.len())?;
        check_len("agent momentum", self.dim(), state.p.len())
    }
}

/// `H = 1/2 p^T M0^-1 p + U(q)`.
pub fn hamiltonian(state: &AgentState, plant: &PlantModel) -> Result<f64> {
    plant.check_state(state)?;
    let kinetic = 0.5 * state.p.dot(&(plant.mass_inv() * &state.p));
    Ok(kinetic + plant.potential_energy(&state.q))
}

/// Open-loop port-Hamiltonian right-hand side with input `u`.
pub fn open_loop_rhs(
    state: &AgentState,
    plant: &PlantModel,
    u: &DVector<f64>,
) -> Result<StateRate> {
    plant.check_state(state)?;
    check_len("control input", plant.dim(), u.len())?;
    Ok(StateRate {
        q_dot: plant.mass_inv() * &state.p,
        p_dot: plant.open_loop_force(state) + u,
    })
}

/// Passive output `y = M0^-1 p` (the velocity).
pub fn passive_output(state: &AgentState, plant: &PlantModel) -> Result<DVector<f64>> {
    plant.check_state(state)?;
    Ok(plant.mass_inv() * &state.p)
}

/// Reference-orbit parameters of the Hill-frame spacecraft plant. Time is in
/// hours and length in km, so `n0` is in rad/h.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpacecraftParams {
    pub n0: f64,
}

/// Point-mass spacecraft (`M0 = I3`) with linearized Hill-Clohessy-Wiltshire
/// relative dynamics about a circular orbit:
///
/// ```text
/// xdd = 3 n0^2 x + 2 n0 yd + ux
/// ydd =          - 2 n0 xd + uy
/// zdd =   -n0^2 z          + uz
/// ```
///
/// The position-dependent part is the potential
/// `U = -3/2 n0^2 x^2 + 1/2 n0^2 z^2`; the Coriolis part is gyroscopic.
pub fn spacecraft_plant(params: SpacecraftParams) -> Result<PlantModel> {
    let n0 = params.n0;
    if !(n0 > 0.0) || !n0.is_finite() {
        return Err(Error::Config(format!("n0 must be positive, got {n0}")));
    }
    let n2 = n0 * n0;
    let stiffness = DMatrix::from_diagonal(&DVector::from_vec(vec![-3.0 * n2, 0.0, n2]));
    let gyro = DMatrix::from_row_slice(
        3,
        3,
        &[0.0, 2.0 * n0, 0.0, -2.0 * n0, 0.0, 0.0, 0.0, 0.0, 0.0],
    );
    PlantModel::new(
        DMatrix::identity(3, 3),
        DMatrix::zeros(3, 3),
        Arc::new(QuadraticPotential::new(stiffness)?),
    )?
    .with_gyroscopic(gyro)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(x)
    }

    #[derive(Debug)]
    struct Pendulum;

    impl Potential for Pendulum {
        fn energy(&self, q: &DVector<f64>) -> f64 {
            q.iter().map(|x| 1.0 - x.cos()).sum()
        }
        fn gradient(&self, q: &DVector<f64>) -> DVector<f64> {
            q.map(f64::sin)
        }
    }

    #[derive(Debug)]
    struct WrongGradient;

    impl Potential for WrongGradient {
        fn energy(&self, q: &DVector<f64>) -> f64 {
            q.norm_squared()
        }
        fn gradient(&self, q: &DVector<f64>) -> DVector<f64> {
            q.clone()
        }
    }

    #[test]
    fn hamiltonian_zero_state() {
        let plant = PlantModel::free_particle(3);
        assert_eq!(hamiltonian(&AgentState::zeros(3), &plant).unwrap(), 0.0);
    }

    #[test]
    fn hamiltonian_kinetic_only() {
        let plant = PlantModel::free_particle(3);
        let s = AgentState::new(DVector::zeros(3), v(&[3.0, 4.0, 0.0])).unwrap();
        assert_eq!(hamiltonian(&s, &plant).unwrap(), 12.5);
    }

    #[test]
    fn hamiltonian_spacecraft_is_potential_at_rest() {
        let n0: f64 = 0.5307;
        let plant = spacecraft_plant(SpacecraftParams { n0 }).unwrap();
        let s = AgentState::new(v(&[1.0, 0.0, 0.0]), DVector::zeros(3)).unwrap();
        // U = -3/2 n0^2 x^2 + 1/2 n0^2 z^2 at x = 1, z = 0
        let expected = -1.5 * n0 * n0;
        assert_abs_diff_eq!(hamiltonian(&s, &plant).unwrap(), expected, epsilon = 1e-15);
        assert_abs_diff_eq!(expected, -0.42246373, epsilon = 1e-8);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let plant = PlantModel::free_particle(3);
        let s = AgentState::zeros(2);
        assert!(matches!(
            hamiltonian(&s, &plant),
            Err(Error::Dimension { .. })
        ));
        assert!(AgentState::new(DVector::zeros(2), DVector::zeros(3)).is_err());
        let u = DVector::zeros(2);
        assert!(open_loop_rhs(&AgentState::zeros(3), &plant, &u).is_err());
    }

    #[test]
    fn equilibrium_and_free_particle() {
        let plant = PlantModel::free_particle(2);
        let s = AgentState::new(v(&[4.0, -1.0]), DVector::zeros(2)).unwrap();
        let r = open_loop_rhs(&s, &plant, &DVector::zeros(2)).unwrap();
        assert_eq!(r.q_dot, DVector::zeros(2));
        assert_eq!(r.p_dot, DVector::zeros(2));

        let s = AgentState::new(DVector::zeros(2), v(&[1.0, 0.0])).unwrap();
        let r = open_loop_rhs(&s, &plant, &v(&[0.0, 1.0])).unwrap();
        assert_eq!(r.q_dot, v(&[1.0, 0.0]));
        assert_eq!(r.p_dot, v(&[0.0, 1.0]));
    }

    #[test]
    fn passive_output_cases() {
        let plant = PlantModel::new(
            DMatrix::from_element(1, 1, 2.0),
            DMatrix::zeros(1, 1),
            Arc::new(QuadraticPotential::zero(1)),
        )
        .unwrap();
        let s = AgentState::new(DVector::zeros(1), v(&[4.0])).unwrap();
        assert!((passive_output(&s, &plant).unwrap()[0] - 2.0).abs() < 1e-15);
        let s = AgentState::zeros(1);
        assert_eq!(passive_output(&s, &plant).unwrap(), v(&[0.0]));
    }

    #[test]
    fn passive_output_inverts_mass() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let a = DMatrix::from_fn(4, 4, |_, _| rng.random_range(-1.0..1.0));
            let mass = &a * a.transpose() + DMatrix::identity(4, 4) * 0.5;
            let plant = PlantModel::new(
                mass.clone(),
                DMatrix::zeros(4, 4),
                Arc::new(QuadraticPotential::zero(4)),
            )
            .unwrap();
            let p = DVector::from_fn(4, |_, _| rng.random_range(-3.0..3.0));
            let s = AgentState::new(DVector::zeros(4), p.clone()).unwrap();
            let y = passive_output(&s, &plant).unwrap();
            assert!((&mass * y - p).amax() < 1e-12);
        }
    }

    #[test]
    fn spacecraft_plant_shape() {
        let plant = spacecraft_plant(SpacecraftParams { n0: 0.5307 }).unwrap();
        assert_eq!(plant.mass(), &DMatrix::identity(3, 3));
        let r = open_loop_rhs(&AgentState::zeros(3), &plant, &DVector::zeros(3)).unwrap();
        assert_eq!(r.p_dot, DVector::zeros(3));
        assert!(spacecraft_plant(SpacecraftParams { n0: 0.0 }).is_err());
        assert!(spacecraft_plant(SpacecraftParams { n0: -1.0 }).is_err());
    }

    #[test]
    fn spacecraft_matches_hcw_at_given_point() {
        let n: f64 = 0.5307;
        let plant = spacecraft_plant(SpacecraftParams { n0: n }).unwrap();
        let (q, qd) = ([1.0, 2.0, 3.0], [0.1, 0.0, -0.1]);
        let s = AgentState::new(v(&q), v(&qd)).unwrap();
        let r = open_loop_rhs(&s, &plant, &DVector::zeros(3)).unwrap();
        let hcw = [
            3.0 * n * n * q[0] + 2.0 * n * qd[1],
            -2.0 * n * qd[0],
            -n * n * q[2],
        ];
        for k in 0..3 {
            assert_abs_diff_eq!(r.p_dot[k], hcw[k], epsilon = 1e-12);
            assert_abs_diff_eq!(r.q_dot[k], qd[k], epsilon = 1e-15);
        }
    }

    #[test]
    fn spacecraft_matches_hcw_random_states() {
        let n: f64 = 0.5307;
        let plant = spacecraft_plant(SpacecraftParams { n0: n }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let q: Vec<f64> = (0..3).map(|_| rng.random_range(-50.0..50.0)).collect();
            let qd: Vec<f64> = (0..3).map(|_| rng.random_range(-5.0..5.0)).collect();
            let r = open_loop_rhs(
                &AgentState::new(v(&q), v(&qd)).unwrap(),
                &plant,
                &DVector::zeros(3),
            )
            .unwrap();
            let xdd = 3.0 * n * n * q[0] + 2.0 * n * qd[1];
            let ydd = -2.0 * n * qd[0];
            let zdd = -n * n * q[2];
            assert_abs_diff_eq!(r.p_dot[0], xdd, epsilon = 1e-12);
            assert_abs_diff_eq!(r.p_dot[1], ydd, epsilon = 1e-12);
            assert_abs_diff_eq!(r.p_dot[2], zdd, epsilon = 1e-12);
        }
    }

    #[test]
    fn gradient_consistency_at_random_points() {
        let sc = spacecraft_plant(SpacecraftParams { n0: 0.5307 }).unwrap();
        assert!(sc.gradient_consistency(100, 1, 10.0) < 1e-5);
        let pend = PlantModel::new(
            DMatrix::identity(2, 2),
            DMatrix::zeros(2, 2),
            Arc::new(Pendulum),
        )
        .unwrap();
        assert!(pend.gradient_consistency(100, 2, 3.0) < 1e-5);
    }

    #[test]
    fn inconsistent_gradient_rejected() {
        let err = PlantModel::new(
            DMatrix::identity(2, 2),
            DMatrix::zeros(2, 2),
            Arc::new(WrongGradient),
        )
        .unwrap_err();
        assert!(err.to_string().contains("gradient"));
    }

    #[test]
    fn invalid_mass_and_damping_rejected() {
        let pot = Arc::new(QuadraticPotential::zero(2));
        let bad_mass = DMatrix::from_diagonal(&v(&[1.0, -1.0]));
        assert!(PlantModel::new(bad_mass, DMatrix::zeros(2, 2), pot.clone()).is_err());
        let bad_damping = DMatrix::from_diagonal(&v(&[1.0, -0.5]));
        assert!(PlantModel::new(DMatrix::identity(2, 2), bad_damping, pot).is_err());
    }
}
