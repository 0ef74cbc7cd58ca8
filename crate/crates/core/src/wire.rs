//! Master/slave message vocabulary and framing.
//!
//! A frame is a 4-byte big-endian length followed by that many bytes of a JSON
//! object with a `"type"` field. Reals are written with 17 significant digits
//! so every `f64` crosses the wire bit-exactly; an infinite error travels as
//! the string `"inf"`.

use std::io::Read;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evolution::{EvoParams, Individual, SelectionMethod};
use crate::json;
use crate::problem::LinearSystem;

pub const PROTOCOL_VERSION: u32 = 1;
pub const DEFAULT_PORT: u16 = 7201;
pub const MAX_FRAME_LEN: usize = 64 * 1024 * 1024;
const PREFIX_LEN: usize = 4;

#[derive(Debug, Error)]
pub enum WireError {
    #[error("incomplete frame: have {have} bytes, need {need}")]
    FrameTooShort { have: usize, need: usize },
    #[error("frame of {0} bytes exceeds the 64 MiB limit")]
    OversizeFrame(usize),
    #[error("malformed payload: {0}")]
    MalformedPayload(String),
    #[error("protocol version {got} is not supported (expected {expected})")]
    VersionMismatch { got: u32, expected: u32 },
    #[error("non-finite value in {0}")]
    NonFiniteValue(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, WireError>;

/// Candidate sent to a slave.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gene {
    pub x: Vec<f64>,
    pub omega: f64,
}

/// Candidate returned by a slave.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluatedGene {
    pub x: Vec<f64>,
    pub omega: f64,
    #[serde(with = "json::real")]
    pub error: f64,
}

impl From<&Individual> for Gene {
    fn from(i: &Individual) -> Self {
        Gene {
            x: i.x.clone(),
            omega: i.omega,
        }
    }
}

impl From<Gene> for Individual {
    fn from(g: Gene) -> Self {
        Individual::new(g.x, g.omega)
    }
}

impl From<EvaluatedGene> for Individual {
    fn from(g: EvaluatedGene) -> Self {
        Individual::new(g.x, g.omega).with_error(g.error)
    }
}

/// One-time payload: the system, parameters and run seed. Sent with the first
/// Assign of a run so slaves can cache them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Setup {
    pub system: LinearSystem,
    pub params: EvoParams,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assign {
    pub generation: u64,
    pub system_digest: String,
    pub params_digest: String,
    pub selection_method: SelectionMethod,
    /// Stream of the block's first adaptation pair; pair k uses this + k.
    pub rng_stream_id: u64,
    pub subpop: Vec<Gene>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub setup: Option<Setup>,
}

/// Phase durations measured on the slave, in seconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SlaveTimings {
    pub t_m: f64,
    pub t_f: f64,
    pub t_a: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_s_partial: Option<f64>,
    pub t_um: f64,
}

impl SlaveTimings {
    /// Time the slave spent between receiving the Assign and replying.
    pub fn busy(&self) -> f64 {
        self.t_um + self.t_m + self.t_f + self.t_a + self.t_s_partial.unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubResult {
    pub generation: u64,
    pub subpop: Vec<EvaluatedGene>,
    pub timings: SlaveTimings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Message {
    Hello { protocol_version: u32, slave_capacity: u32 },
    Assign(Assign),
    SubResult(SubResult),
    Terminate { reason: String },
    Ack { generation: u64 },
}

impl Message {
    pub fn hello() -> Self {
        Message::Hello {
            protocol_version: PROTOCOL_VERSION,
            slave_capacity: 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Message::Hello { .. } => "hello",
            Message::Assign(_) => "assign",
            Message::SubResult(_) => "sub_result",
            Message::Terminate { .. } => "terminate",
            Message::Ack { .. } => "ack",
        }
    }

    fn check_finite(&self) -> Result<()> {
        let finite = |v: f64, what: &str| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(WireError::NonFiniteValue(what.to_string()))
            }
        };
        match self {
            Message::Assign(a) => {
                for g in &a.subpop {
                    finite(g.omega, "omega")?;
                    g.x.iter().try_for_each(|&v| finite(v, "x"))?;
                }
                if let Some(setup) = &a.setup {
                    let p = &setup.params;
                    for v in [
                        p.epsilon,
                        p.omega_lower,
                        p.omega_upper,
                        p.gamma,
                        p.lambda,
                        p.p_max,
                        p.p_min,
                        p.init_clip,
                    ] {
                        finite(v, "params")?;
                    }
                }
            }
            Message::SubResult(r) => {
                for g in &r.subpop {
                    finite(g.omega, "omega")?;
                    g.x.iter().try_for_each(|&v| finite(v, "x"))?;
                    if g.error.is_nan() || g.error < 0.0 {
                        return Err(WireError::NonFiniteValue("error".into()));
                    }
                }
                let t = &r.timings;
                for v in [t.t_m, t.t_f, t.t_a, t.t_um, t.t_s_partial.unwrap_or(0.0)] {
                    finite(v, "timings")?;
                }
            }
            Message::Hello { .. } | Message::Terminate { .. } | Message::Ack { .. } => {}
        }
        Ok(())
    }
}

/// Encodes one frame.
pub fn encode(msg: &Message) -> Result<Vec<u8>> {
    msg.check_finite()?;
    let body = json::to_vec(msg).map_err(|e| WireError::MalformedPayload(e.to_string()))?;
    if body.len() > MAX_FRAME_LEN {
        return Err(WireError::OversizeFrame(body.len()));
    }
    let mut frame = Vec::with_capacity(PREFIX_LEN + body.len());
    frame.extend_from_slice(&(body.len() as u32).to_be_bytes());
    frame.extend_from_slice(&body);
    Ok(frame)
}

/// Length announced by a frame prefix, if enough bytes are present.
fn announced_len(buf: &[u8]) -> Result<usize> {
    if buf.len() < PREFIX_LEN {
        return Err(WireError::FrameTooShort {
            have: buf.len(),
            need: PREFIX_LEN,
        });
    }
    let len = u32::from_be_bytes(buf[..PREFIX_LEN].try_into().unwrap()) as usize;
    if len > MAX_FRAME_LEN {
        return Err(WireError::OversizeFrame(len));
    }
    Ok(len)
}

fn parse_body(body: &[u8]) -> Result<Message> {
    let msg: Message =
        serde_json::from_slice(body).map_err(|e| WireError::MalformedPayload(e.to_string()))?;
    if let Message::Hello {
        protocol_version, ..
    } = msg
    {
        if protocol_version != PROTOCOL_VERSION {
            return Err(WireError::VersionMismatch {
                got: protocol_version,
                expected: PROTOCOL_VERSION,
            });
        }
    }
    Ok(msg)
}

/// Decodes the first frame in `buf`, returning the message and the number of
/// bytes it occupied. An incomplete frame yields `FrameTooShort` and consumes
/// nothing.
pub fn decode(buf: &[u8]) -> Result<(Message, usize)> {
    let len = announced_len(buf)?;
    let need = PREFIX_LEN + len;
    if buf.len() < need {
        return Err(WireError::FrameTooShort {
            have: buf.len(),
            need,
        });
    }
    Ok((parse_body(&buf[PREFIX_LEN..need])?, need))
}

/// [`encode`] plus its duration in seconds.
pub fn encode_timed(msg: &Message) -> Result<(Vec<u8>, f64)> {
    let start = Instant::now();
    let frame = encode(msg)?;
    Ok((frame, start.elapsed().as_secs_f64()))
}

/// [`decode`] plus its duration in seconds.
pub fn decode_timed(buf: &[u8]) -> Result<(Message, usize, f64)> {
    let start = Instant::now();
    let (msg, used) = decode(buf)?;
    Ok((msg, used, start.elapsed().as_secs_f64()))
}

/// Incremental decoder for arbitrarily chunked input.
#[derive(Debug, Default)]
pub struct FrameDecoder {
    buf: Vec<u8>,
    poisoned: bool,
}

impl FrameDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    /// Next complete message, `Ok(None)` if more bytes are needed. An oversize
    /// prefix poisons the decoder.
    pub fn next_message(&mut self) -> Result<Option<Message>> {
        if self.poisoned {
            return Err(WireError::MalformedPayload("decoder poisoned by oversize frame".into()));
        }
        match decode(&self.buf) {
            Ok((msg, used)) => {
                self.buf.drain(..used);
                Ok(Some(msg))
            }
            Err(WireError::FrameTooShort { .. }) => Ok(None),
            Err(e @ WireError::OversizeFrame(_)) => {
                self.poisoned = true;
                Err(e)
            }
            Err(e) => {
                // Drop the bad frame so the stream can continue.
                if let Ok(len) = announced_len(&self.buf) {
                    self.buf.drain(..PREFIX_LEN + len);
                }
                Err(e)
            }
        }
    }

    pub fn buffered(&self) -> usize {
        self.buf.len()
    }
}

/// Reads exactly one raw frame (prefix included) from a blocking reader.
pub fn read_frame<R: Read>(reader: &mut R) -> Result<Vec<u8>> {
    let mut prefix = [0u8; PREFIX_LEN];
    reader.read_exact(&mut prefix)?;
    let len = announced_len(&prefix)?;
    let mut frame = vec![0u8; PREFIX_LEN + len];
    frame[..PREFIX_LEN].copy_from_slice(&prefix);
    reader.read_exact(&mut frame[PREFIX_LEN..])?;
    Ok(frame)
}
