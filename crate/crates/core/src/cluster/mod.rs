//! Master and slave roles over a frame [`Transport`].
//!
//! Slaves dial the master and say Hello; the master answers Ack and numbers
//! slaves in registration order. Each generation the master sends one Assign
//! per slave and waits for every SubResult before selecting (a barrier; there
//! is no pipelining and no fault tolerance). Terminate ends the run.

mod master;
mod slave;
mod transport;

use std::time::Duration;

use thiserror::Error;

use crate::engine::AbortReason;
use crate::wire::{WireError, DEFAULT_PORT};

pub use master::{accept_slaves, master_run, master_run_on, run_virtual, RemoteWorkers};
pub use slave::{serve, slave_handshake, slave_run};
pub use transport::{ChannelTransport, LinkError, TcpTransport, Transport};

pub const DEFAULT_HANDSHAKE_TIMEOUT: Duration = Duration::from_secs(10);
pub const DEFAULT_GATHER_TIMEOUT: Duration = Duration::from_secs(30);

/// Reason prefix a slave uses when its cached system or parameters do not
/// match an Assign.
pub const DIGEST_MISMATCH: &str = "digest_mismatch";

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("handshake failed: {0}")]
    HandshakeFailure(String),
    #[error("slave {slave} did not answer within the gather timeout")]
    GatherTimeout { slave: usize },
    #[error("lost connection to slave {slave}")]
    SlaveLost { slave: usize },
    #[error("slave {slave} rejected the assignment: {reason}")]
    DigestMismatch { slave: usize, reason: String },
    #[error("slave {slave} failed: {reason}")]
    SlaveError { slave: usize, reason: String },
    #[error("protocol error{}: {message}", slave.map(|s| format!(" from slave {s}")).unwrap_or_default())]
    Protocol { slave: Option<usize>, message: String },
    #[error("connection to master lost")]
    ConnectionLost,
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl ClusterError {
    pub fn slave(&self) -> Option<usize> {
        match self {
            ClusterError::GatherTimeout { slave }
            | ClusterError::SlaveLost { slave }
            | ClusterError::DigestMismatch { slave, .. }
            | ClusterError::SlaveError { slave, .. } => Some(*slave),
            ClusterError::Protocol { slave, .. } => *slave,
            _ => None,
        }
    }

    pub fn abort_reason(&self) -> AbortReason {
        AbortReason {
            slave: self.slave(),
            message: self.to_string(),
        }
    }

    pub(crate) fn from_link(slave: usize, e: LinkError) -> Self {
        match e {
            LinkError::Timeout => ClusterError::GatherTimeout { slave },
            LinkError::Closed => ClusterError::SlaveLost { slave },
            LinkError::Wire(w) => ClusterError::Protocol {
                slave: Some(slave),
                message: w.to_string(),
            },
            LinkError::Io(io) => ClusterError::Protocol {
                slave: Some(slave),
                message: io.to_string(),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Master,
    Slave,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterConfig {
    pub role: Role,
    /// Master: address to listen on. Slave: master address to dial.
    pub address: String,
    /// Slaves the master waits for before starting.
    pub slave_count: usize,
    pub handshake_timeout: Duration,
    pub gather_timeout: Duration,
}

impl ClusterConfig {
    pub fn master(listen: impl Into<String>, slave_count: usize) -> Self {
        Self {
            role: Role::Master,
            address: listen.into(),
            slave_count,
            handshake_timeout: DEFAULT_HANDSHAKE_TIMEOUT,
            gather_timeout: DEFAULT_GATHER_TIMEOUT,
        }
    }

    pub fn slave(connect: impl Into<String>) -> Self {
        Self {
            role: Role::Slave,
            address: connect.into(),
            slave_count: 1,
            handshake_timeout: DEFAULT_HANDSHAKE_TIMEOUT,
            gather_timeout: DEFAULT_GATHER_TIMEOUT,
        }
    }

    pub fn with_timeouts(mut self, handshake: Duration, gather: Duration) -> Self {
        self.handshake_timeout = handshake;
        self.gather_timeout = gather;
        self
    }
}

/// `host:port` with the default port filled in when missing.
pub fn with_default_port(addr: &str) -> String {
    if addr.rsplit_once(':').is_some_and(|(_, p)| p.parse::<u16>().is_ok()) {
        addr.to_string()
    } else {
        format!("{addr}:{DEFAULT_PORT}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_port() {
        assert_eq!(with_default_port("127.0.0.1"), "127.0.0.1:7201");
        assert_eq!(with_default_port("localhost:9000"), "localhost:9000");
    }

    #[test]
    fn link_errors_name_the_slave() {
        assert!(matches!(
            ClusterError::from_link(3, LinkError::Timeout),
            ClusterError::GatherTimeout { slave: 3 }
        ));
        let reason = ClusterError::from_link(1, LinkError::Closed).abort_reason();
        assert_eq!(reason.slave, Some(1));
    }
}
