//! Fixed-step explicit integrators over flat state vectors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Integrator {
    #[default]
    Rk4,
    Euler,
}

fn checked(time: f64, v: Vec<f64>) -> Result<Vec<f64>> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(v)
    } else {
        Err(Error::NonFiniteRate { time })
    }
}

fn axpy(y: &[f64], h: f64, k: &[f64]) -> Vec<f64> {
    y.iter().zip(k).map(|(a, b)| a + h * b).collect()
}

/// One classical Runge-Kutta step.
pub fn rk4_step<F>(y: &[f64], t: f64, dt: f64, mut rhs: F) -> Result<Vec<f64>>
where
    F: FnMut(f64, &[f64]) -> Result<Vec<f64>>,
{
    let k1 = checked(t, rhs(t, y)?)?;
    rk4_step_from(y, t, dt, &k1, rhs)
}

/// RK4 step reusing an already evaluated first slope `k1 = f(t, y)`.
pub fn rk4_step_from<F>(y: &[f64], t: f64, dt: f64, k1: &[f64], mut rhs: F) -> Result<Vec<f64>>
where
    F: FnMut(f64, &[f64]) -> Result<Vec<f64>>,
{
    let half = 0.5 * dt;
    let k2 = checked(t + half, rhs(t + half, &axpy(y, half, k1))?)?;
    let k3 = checked(t + half, rhs(t + half, &axpy(y, half, &k2))?)?;
    let k4 = checked(t + dt, rhs(t + dt, &axpy(y, dt, &k3))?)?;
    let sixth = dt / 6.0;
    Ok(y.iter()
        .enumerate()
        .map(|(i, yi)| yi + sixth * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect())
}

pub fn euler_step<F>(y: &[f64], t: f64, dt: f64, mut rhs: F) -> Result<Vec<f64>>
where
    F: FnMut(f64, &[f64]) -> Result<Vec<f64>>,
{
    let k1 = checked(t, rhs(t, y)?)?;
    Ok(axpy(y, dt, &k1))
}

impl Integrator {
    pub fn step<F>(self, y: &[f64], t: f64, dt: f64, rhs: F) -> Result<Vec<f64>>
    where
        F: FnMut(f64, &[f64]) -> Result<Vec<f64>>,
    {
        match self {
            Self::Rk4 => rk4_step(y, t, dt, rhs),
            Self::Euler => euler_step(y, t, dt, rhs),
        }
    }

    pub(crate) fn step_from<F>(
        self,
        y: &[f64],
        t: f64,
        dt: f64,
        k1: &[f64],
        rhs: F,
    ) -> Result<Vec<f64>>
    where
        F: FnMut(f64, &[f64]) -> Result<Vec<f64>>,
    {
        match self {
            Self::Rk4 => rk4_step_from(y, t, dt, k1, rhs),
            Self::Euler => Ok(axpy(y, dt, k1)),
        }
    }
}
