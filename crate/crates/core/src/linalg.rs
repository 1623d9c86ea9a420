//! Small dense linear-algebra helpers shared by the model, controller and
//! analysis modules.

use nalgebra::{Complex, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Eigenvalue in a serialization-friendly form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Eigenvalue {
    pub re: f64,
    pub im: f64,
}

impl Eigenvalue {
    pub fn norm(&self) -> f64 {
        self.re.hypot(self.im)
    }

    /// True when the eigenvalue sits on the imaginary axis within a
    /// scale-relative tolerance: `|re| <= tol * max(1, |lambda|)`.
    pub fn on_imaginary_axis(&self, tol: f64) -> bool {
        self.re.abs() <= tol * self.norm().max(1.0)
    }
}

impl From<Complex<f64>> for Eigenvalue {
    fn from(c: Complex<f64>) -> Self {
        Self { re: c.re, im: c.im }
    }
}

/// Eigenvalues of a general real square matrix, sorted by real part then
/// imaginary part.
pub fn eigenvalues(m: &DMatrix<f64>) -> Vec<Eigenvalue> {
    let mut ev: Vec<Eigenvalue> = m
        .clone()
        .complex_eigenvalues()
        .iter()
        .map(|c| Eigenvalue::from(*c))
        .collect();
    ev.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    ev
}

pub fn symmetric_part(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Eigenvalues of the symmetric part, ascending.
pub fn symmetric_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = symmetric_part(m)
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .collect();
    ev.sort_by(f64::total_cmp);
    ev
}

fn scale(m: &DMatrix<f64>) -> f64 {
    m.abs().max().max(1.0)
}

fn require_square(name: &str, m: &DMatrix<f64>, n: usize) -> Result<()> {
    if m.nrows() != n || m.ncols() != n {
        return Err(Error::Config(format!(
            "{name} must be {n}x{n}, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

fn require_finite(name: &str, m: &DMatrix<f64>) -> Result<()> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Config(format!("{name} has non-finite entries")));
    }
    Ok(())
}

/// Symmetric positive definite check. Asymmetry above `1e-12` relative is
/// rejected outright.
pub fn require_spd(name: &str, m: &DMatrix<f64>, n: usize) -> Result<()> {
    require_square(name, m, n)?;
    require_finite(name, m)?;
    let s = scale(m);
    let asym = (m - m.transpose()).abs().max();
    if asym > 1e-12 * s {
        return Err(Error::Config(format!(
            "{name} must be symmetric (max |A - A^T| = {asym:e})"
        )));
    }
    let min = symmetric_eigenvalues(m)[0];
    if min <= 1e-12 * s {
        return Err(Error::NotPositiveDefinite {
            name: name.to_string(),
            min_eigenvalue: min,
        });
    }
    Ok(())
}

/// Positive semi-definite symmetric part, up to `1e-12` relative slack.
pub fn require_psd_sym_part(name: &str, m: &DMatrix<f64>, n: usize) -> Result<()> {
    require_square(name, m, n)?;
    require_finite(name, m)?;
    let min = symmetric_eigenvalues(m)[0];
    if min < -1e-12 * scale(m) {
        return Err(Error::NotPositiveDefinite {
            name: name.to_string(),
            min_eigenvalue: min,
        });
    }
    Ok(())
}

/// Symmetric with a positive semi-definite spectrum.
pub fn require_sym_psd(name: &str, m: &DMatrix<f64>, n: usize) -> Result<()> {
    require_square(name, m, n)?;
    require_finite(name, m)?;
    let asym = (m - m.transpose()).abs().max();
    if asym > 1e-12 * scale(m) {
        return Err(Error::Config(format!(
            "{name} must be symmetric (max |A - A^T| = {asym:e})"
        )));
    }
    require_psd_sym_part(name, m, n)
}

/// Skew-symmetry: Frobenius norm of `A + A^T` below `1e-12`.
pub fn require_skew(name: &str, m: &DMatrix<f64>, n: usize) -> Result<()> {
    require_square(name, m, n)?;
    require_finite(name, m)?;
    let deviation = (m + m.transpose()).norm();
    if deviation >= 1e-12 {
        return Err(Error::NotSkew {
            name: name.to_string(),
            deviation,
        });
    }
    Ok(())
}

/// Assemble a 2x2 block matrix from equally sized square blocks.
pub fn block2(
    a11: &DMatrix<f64>,
    a12: &DMatrix<f64>,
    a21: &DMatrix<f64>,
    a22: &DMatrix<f64>,
) -> DMatrix<f64> {
    let n = a11.nrows();
    let mut out = DMatrix::zeros(2 * n, 2 * n);
    out.view_mut((0, 0), (n, n)).copy_from(a11);
    out.view_mut((0, n), (n, n)).copy_from(a12);
    out.view_mut((n, 0), (n, n)).copy_from(a21);
    out.view_mut((n, n), (n, n)).copy_from(a22);
    out
}

pub fn block_diag(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let z = DMatrix::zeros(a.nrows(), a.nrows());
    block2(a, &z, &z, b)
}

/// Inverse of a matrix already known to be symmetric positive definite.
pub(crate) fn spd_inverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.clone()
        .cholesky()
        .map(|c| c.inverse())
        .unwrap_or_else(|| m.clone().try_inverse().expect("validated SPD matrix"))
}

/// Row-major nested vectors, the layout used in reports and configs.
pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn from_rows(name: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, |r| r.len());
    if let Some(bad) = rows.iter().find(|r| r.len() != ncols) {
        return Err(Error::Config(format!(
            "{name}: ragged rows ({} vs {ncols} entries)",
            bad.len()
        )));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub(crate) fn all_finite(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}
