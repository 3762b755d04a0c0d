use thiserror::Error;

/// Error taxonomy shared by the whole workspace.
///
/// The CLI maps these onto process exit codes: `Verify` and `Audit` exit 1,
/// everything else here exits 2 (usage errors are handled by the CLI itself
/// and exit 3).
#[derive(Debug, Error)]
pub enum Error {
    /// Workload dimensions are malformed (zero-sized axis, overflow).
    #[error("shape error: {0}")]
    Shape(String),

    /// A kernel was handed data that violates its contract.
    #[error("data error: {0}")]
    Data(String),

    /// Invalid hardware spec, tiling, or configuration file.
    #[error("config error: {0}")]
    Config(String),

    /// A working set cannot fit on-chip, or the overwrite guardian could not
    /// free enough space even after evicting every eligible tile.
    #[error("capacity error: {0}")]
    Capacity(String),

    /// A tuning search space contains no feasible configuration.
    #[error("infeasible: {0}")]
    Infeasible(String),

    /// The event loop wedged (no runnable task while work remains) or the
    /// task graph is internally inconsistent.
    #[error("simulation error: {0}")]
    Simulation(String),

    /// Functional output does not match the reference computation.
    #[error("verification failure: {0}")]
    Verify(String),

    /// A counter audit found numbers that disagree with their closed forms.
    #[error("audit failure: {0}")]
    Audit(String),
}

pub type Result<T> = std::result::Result<T, Error>;
