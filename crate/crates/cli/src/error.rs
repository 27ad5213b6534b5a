//! Error families and exit codes. Every failure a command can hit is folded
//! into one of seven families with a stable nonzero exit code, so scripts
//! can branch on *why* an invocation failed without parsing messages.

use pht_core::builder::BuildError;
use pht_core::registry::{RegistryError, StoreError};
use pht_core::station::StationError;
use std::fmt;

/// One exit-code family per kind of failure.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Family {
    /// Unexpected internal failure (I/O corruption, serialization bugs).
    Internal = 1,
    /// Bad usage, missing files, or a misconfigured workspace.
    Config = 2,
    /// The principal is not allowed to do this.
    AccessDenied = 3,
    /// A named train, image, repo, entity, or route does not exist.
    NotFound = 4,
    /// Protocol verification failed — a signature, chain, or trust check.
    Protocol = 5,
    /// The analysis itself failed: bad data, resource limits, unsupported kind.
    DataExec = 6,
    /// The operation is valid but the lifecycle state does not admit it.
    Lifecycle = 7,
}

impl Family {
    pub fn slug(self) -> &'static str {
        match self {
            Family::Internal => "internal",
            Family::Config => "config",
            Family::AccessDenied => "access_denied",
            Family::NotFound => "not_found",
            Family::Protocol => "protocol",
            Family::DataExec => "data_exec",
            Family::Lifecycle => "lifecycle",
        }
    }

    pub fn exit_code(self) -> i32 {
        self as i32
    }
}

#[derive(Debug)]
pub struct CliError {
    pub family: Family,
    pub message: String,
}

impl CliError {
    pub fn new(family: Family, message: impl Into<String>) -> Self {
        CliError {
            family,
            message: message.into(),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(Family::Config, message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(Family::Internal, message)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.message)
    }
}

fn store_family(e: &StoreError) -> Family {
    match e {
        StoreError::DuplicateEntity(_)
        | StoreError::BuilderExists(_)
        | StoreError::DuplicateStationName(_)
        | StoreError::RouteExists(_) => Family::Lifecycle,
        StoreError::UnknownEntity(_)
        | StoreError::UnknownStationName(_)
        | StoreError::UnknownRoute(_) => Family::NotFound,
        StoreError::NoBuilder => Family::Config,
        StoreError::NotRouter(_) | StoreError::NotParticipant { .. } => Family::AccessDenied,
        StoreError::Io(_)
        | StoreError::Corrupt(_)
        | StoreError::Model(_)
        | StoreError::Crypto(_) => Family::Internal,
    }
}

fn registry_family(e: &RegistryError) -> Family {
    match e {
        RegistryError::AccessDenied { .. }
        | RegistryError::AuthRequired(_)
        | RegistryError::AuthFailed(_) => Family::AccessDenied,
        RegistryError::UnknownRepo(_)
        | RegistryError::NotFound { .. }
        | RegistryError::MissingImage { .. } => Family::NotFound,
        RegistryError::TerminalRoute(_)
        | RegistryError::NotFinished(_)
        | RegistryError::TamperFailed(_) => Family::Lifecycle,
        RegistryError::Store(e) => store_family(e),
        RegistryError::Io(_)
        | RegistryError::Corrupt(_)
        | RegistryError::Model(_)
        | RegistryError::Crypto(_) => Family::Internal,
    }
}

fn build_family(e: &BuildError) -> Family {
    match e {
        BuildError::NotBuilder(_) => Family::AccessDenied,
        BuildError::UnknownStation(_) => Family::NotFound,
        BuildError::NotProposed(_) | BuildError::NotApproved(_) | BuildError::DoubleVote(_) => {
            Family::Lifecycle
        }
        BuildError::WrongUser { .. }
        | BuildError::EmptyRoute
        | BuildError::DuplicateStation(_)
        | BuildError::MalformedSubmission(_)
        | BuildError::Io(_) => Family::Config,
        BuildError::UntrustedBase(_) | BuildError::UserSignature(_) => Family::Protocol,
        BuildError::Store(e) => store_family(e),
        BuildError::Registry(e) => registry_family(e),
        BuildError::Crypto(_) | BuildError::Model(_) => Family::Internal,
    }
}

fn station_family(e: &StationError) -> Family {
    match e {
        StationError::Abort(_) => Family::Protocol,
        StationError::Unsupported(_) | StationError::Data(_) | StationError::Execution(_) => {
            Family::DataExec
        }
        StationError::Config(_) => Family::Config,
        StationError::Store(e) => store_family(e),
        StationError::Model(_) | StationError::Crypto(_) => Family::Internal,
    }
}

impl From<StoreError> for CliError {
    fn from(e: StoreError) -> Self {
        CliError::new(store_family(&e), e.to_string())
    }
}

impl From<RegistryError> for CliError {
    fn from(e: RegistryError) -> Self {
        CliError::new(registry_family(&e), e.to_string())
    }
}

impl From<BuildError> for CliError {
    fn from(e: BuildError) -> Self {
        CliError::new(build_family(&e), e.to_string())
    }
}

impl From<StationError> for CliError {
    fn from(e: StationError) -> Self {
        CliError::new(station_family(&e), e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::internal(format!("JSON serialization failed: {e}"))
    }
}

impl From<pht_core::paillier::PaillierError> for CliError {
    fn from(e: pht_core::paillier::PaillierError) -> Self {
        CliError::internal(format!("homomorphic arithmetic failed: {e}"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn families_have_distinct_stable_exit_codes() {
        let all = [
            Family::Internal,
            Family::Config,
            Family::AccessDenied,
            Family::NotFound,
            Family::Protocol,
            Family::DataExec,
            Family::Lifecycle,
        ];
        let codes: Vec<i32> = all.iter().map(|f| f.exit_code()).collect();
        assert_eq!(codes, vec![1, 2, 3, 4, 5, 6, 7]);
    }

    #[test]
    fn nested_sources_keep_their_family() {
        let denied = RegistryError::Store(StoreError::NotRouter("u1".into()));
        assert_eq!(CliError::from(denied).family, Family::AccessDenied);
        let missing = BuildError::Registry(RegistryError::UnknownRepo("x".into()));
        assert_eq!(CliError::from(missing).family, Family::NotFound);
    }
}
