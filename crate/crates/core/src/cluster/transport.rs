use std::io::{self, ErrorKind, Read, Write};
use std::net::{Shutdown, TcpStream};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::time::{Duration, Instant};

use crate::wire::{self, WireError};

#[derive(Debug, thiserror::Error)]
pub enum LinkError {
    #[error("timed out")]
    Timeout,
    #[error("connection closed")]
    Closed,
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error(transparent)]
    Io(io::Error),
}

/// A bidirectional frame pipe. Frames include their length prefix.
pub trait Transport: Send {
    fn send_frame(&mut self, frame: &[u8]) -> Result<(), LinkError>;

    /// Blocks until a full frame arrives or `deadline` passes. Also returns
    /// the instant the first byte of the frame was seen.
    fn recv_frame(&mut self, deadline: Option<Instant>) -> Result<(Vec<u8>, Instant), LinkError>;

    fn peer(&self) -> String;
}

pub struct TcpTransport {
    stream: TcpStream,
    peer: String,
}

impl TcpTransport {
    pub fn new(stream: TcpStream) -> io::Result<Self> {
        stream.set_nodelay(true)?;
        stream.set_nonblocking(false)?;
        let peer = stream
            .peer_addr()
            .map(|a| a.to_string())
            .unwrap_or_else(|_| "?".into());
        Ok(Self { stream, peer })
    }

    fn read_full(&mut self, buf: &mut [u8], deadline: Option<Instant>) -> Result<(), LinkError> {
        let mut filled = 0;
        while filled < buf.len() {
            let timeout = match deadline {
                Some(d) => {
                    let left = d.saturating_duration_since(Instant::now());
                    if left.is_zero() {
                        return Err(LinkError::Timeout);
                    }
                    Some(left)
                }
                None => None,
            };
            self.stream.set_read_timeout(timeout).map_err(LinkError::Io)?;
            match self.stream.read(&mut buf[filled..]) {
                Ok(0) => return Err(LinkError::Closed),
                Ok(k) => filled += k,
                Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {
                    return Err(LinkError::Timeout)
                }
                Err(e) if e.kind() == ErrorKind::Interrupted => {}
                Err(e) if is_disconnect(&e) => return Err(LinkError::Closed),
                Err(e) => return Err(LinkError::Io(e)),
            }
        }
        Ok(())
    }
}

fn is_disconnect(e: &io::Error) -> bool {
    matches!(
        e.kind(),
        ErrorKind::ConnectionReset | ErrorKind::ConnectionAborted | ErrorKind::BrokenPipe | ErrorKind::UnexpectedEof
    )
}

impl Transport for TcpTransport {
    fn send_frame(&mut self, frame: &[u8]) -> Result<(), LinkError> {
        self.stream.write_all(frame).map_err(|e| {
            if is_disconnect(&e) {
                LinkError::Closed
            } else {
                LinkError::Io(e)
            }
        })
    }

    fn recv_frame(&mut self, deadline: Option<Instant>) -> Result<(Vec<u8>, Instant), LinkError> {
        let mut first = [0u8; 1];
        self.read_full(&mut first, deadline)?;
        let arrived = Instant::now();
        let mut rest = [0u8; 3];
        self.read_full(&mut rest, deadline)?;
        let prefix = [first[0], rest[0], rest[1], rest[2]];
        let len = u32::from_be_bytes(prefix) as usize;
        if len > wire::MAX_FRAME_LEN {
            let _ = self.stream.shutdown(Shutdown::Both);
            return Err(WireError::OversizeFrame(len).into());
        }
        let mut frame = vec![0u8; 4 + len];
        frame[..4].copy_from_slice(&prefix);
        self.read_full(&mut frame[4..], deadline)?;
        Ok((frame, arrived))
    }

    fn peer(&self) -> String {
        self.peer.clone()
    }
}

/// In-memory transport; frames are moved through channels whole.
pub struct ChannelTransport {
    tx: Sender<Vec<u8>>,
    rx: Receiver<Vec<u8>>,
    name: String,
}

impl ChannelTransport {
    /// Two connected ends.
    pub fn pair(name: &str) -> (Self, Self) {
        let (a_tx, b_rx) = mpsc::channel();
        let (b_tx, a_rx) = mpsc::channel();
        (
            Self {
                tx: a_tx,
                rx: a_rx,
                name: format!("{name}/master"),
            },
            Self {
                tx: b_tx,
                rx: b_rx,
                name: format!("{name}/slave"),
            },
        )
    }
}

impl Transport for ChannelTransport {
    fn send_frame(&mut self, frame: &[u8]) -> Result<(), LinkError> {
        self.tx.send(frame.to_vec()).map_err(|_| LinkError::Closed)
    }

    fn recv_frame(&mut self, deadline: Option<Instant>) -> Result<(Vec<u8>, Instant), LinkError> {
        let frame = match deadline {
            None => self.rx.recv().map_err(|_| LinkError::Closed)?,
            Some(d) => {
                let left = d.saturating_duration_since(Instant::now()).max(Duration::from_micros(1));
                self.rx.recv_timeout(left).map_err(|e| match e {
                    RecvTimeoutError::Timeout => LinkError::Timeout,
                    RecvTimeoutError::Disconnected => LinkError::Closed,
                })?
            }
        };
        Ok((frame, Instant::now()))
    }

    fn peer(&self) -> String {
        self.name.clone()
    }
}
