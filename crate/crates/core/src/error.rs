use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("{name} is not positive definite (min eigenvalue {min_eigenvalue:e})")]
    NotPositiveDefinite { name: String, min_eigenvalue: f64 },

    #[error("{name} skew-symmetry violated (|A + A^T| = {deviation:e})")]
    NotSkew { name: String, deviation: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("graph error: {0}")]
    Graph(String),

    #[error("direction {axis} has a single agent; drop it from the PDE model")]
    DegenerateDirection { axis: usize },

    #[error("certification error: {0}")]
    Certification(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("non-finite state for agent {agent} at t = {time}")]
    NonFinite { agent: usize, time: f64 },

    #[error("non-finite rate at t = {time}")]
    NonFiniteRate { time: f64 },

    #[error("sweep failed at size {size:?}: {source}")]
    Sweep {
        size: Vec<usize>,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::Dimension {
            context,
            expected,
            actual,
        });
    }
    Ok(())
}
