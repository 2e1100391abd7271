use thiserror::Error;

/// Pipeline error, tagged with the subsystem it originated from.
#[derive(Debug, Error)]
pub enum Error {
    #[error("[jet_core] {0}")]
    Jet(String),
    #[error("[geometry] {0}")]
    Geometry(String),
    #[error("[linear_analysis] {0}")]
    Linear(String),
    #[error("[lambda_solver] {0}")]
    Lambda(String),
    #[error("[shaping_synthesis] {0}")]
    Shaping(String),
    #[error("[simulator] {0}")]
    Simulator(String),
    /// An order-by-order solve hit an unsatisfiable constraint row.
    #[error("[{module}] inconsistent linear system at order {order}: row {row}")]
    Inconsistent {
        module: &'static str,
        order: usize,
        row: String,
    },
    #[error("[{module}] {msg}")]
    Tagged { module: &'static str, msg: String },
}

pub type Result<T> = std::result::Result<T, Error>;
