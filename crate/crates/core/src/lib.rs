//! Leaderless population protocols: definitions, a uniform random-pair
//! simulator with exact null-skipping, exhaustive reachability checks, the
//! transition-sequence surgery toolkit, semilinear helpers and compilers for
//! linear functions.

pub mod config;
pub mod linear;
pub mod protocol;
pub mod protocols;
pub mod sim;
pub mod stats;
pub mod surgery;
pub mod verify;

pub use config::{apply_transition, execute_path, is_applicable, ConfigError, Configuration, TransitionSequence};
pub use protocol::{Protocol, ProtocolBuilder, ProtocolError, Roles, StateId, Transition};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Sim(#[from] sim::SimError),
    #[error(transparent)]
    Verify(#[from] verify::VerifyError),
    #[error(transparent)]
    Surgery(#[from] surgery::SurgeryError),
    #[error(transparent)]
    Linear(#[from] linear::LinearError),
    #[error(transparent)]
    Compile(#[from] protocols::CompileError),
}
