use std::net::TcpStream;
use std::thread;
use std::time::{Duration, Instant};

use log::{info, warn};

use crate::engine::slave_work;
use crate::evolution::{EvoParams, Individual};
use crate::json;
use crate::problem::LinearSystem;
use crate::wire::{self, Assign, EvaluatedGene, Message, SlaveTimings, SubResult};

use super::transport::{LinkError, TcpTransport, Transport};
use super::{ClusterConfig, ClusterError, DIGEST_MISMATCH};

/// What a slave keeps between Assigns.
struct Cache {
    system: LinearSystem,
    params: EvoParams,
    seed: u64,
    system_digest: String,
    params_digest: String,
}

fn send(link: &mut dyn Transport, msg: &Message) -> Result<(), ClusterError> {
    let frame = wire::encode(msg)?;
    link.send_frame(&frame).map_err(|e| match e {
        LinkError::Closed => ClusterError::ConnectionLost,
        other => ClusterError::Protocol {
            slave: None,
            message: other.to_string(),
        },
    })
}

/// Slave side of the handshake: Hello, then wait for Ack.
pub fn slave_handshake(link: &mut dyn Transport, deadline: Instant) -> Result<(), ClusterError> {
    send(link, &Message::hello())?;
    let (frame, _) = link
        .recv_frame(Some(deadline))
        .map_err(|e| ClusterError::HandshakeFailure(format!("no ack from master ({e})")))?;
    match wire::decode(&frame)? {
        (Message::Ack { .. }, _) => Ok(()),
        (Message::Terminate { reason }, _) => Err(ClusterError::HandshakeFailure(reason)),
        (other, _) => Err(ClusterError::HandshakeFailure(format!(
            "expected ack, got {}",
            other.kind()
        ))),
    }
}

fn handle_assign(
    cache: &mut Option<Cache>,
    assign: Assign,
    t_um: f64,
) -> Result<Message, String> {
    if let Some(setup) = assign.setup {
        let system_digest = setup.system.digest();
        let params_digest = json::digest(&setup.params).map_err(|e| e.to_string())?;
        *cache = Some(Cache {
            system: setup.system,
            params: setup.params,
            seed: setup.seed,
            system_digest,
            params_digest,
        });
    }
    let Some(c) = cache.as_ref() else {
        return Err(format!("{DIGEST_MISMATCH}: no system cached"));
    };
    if c.system_digest != assign.system_digest {
        return Err(format!(
            "{DIGEST_MISMATCH}: system {} != {}",
            assign.system_digest, c.system_digest
        ));
    }
    if c.params_digest != assign.params_digest || c.params.selection != assign.selection_method {
        return Err(format!(
            "{DIGEST_MISMATCH}: params {} != {}",
            assign.params_digest, c.params_digest
        ));
    }
    let block: Vec<Individual> = assign.subpop.into_iter().map(Individual::from).collect();
    let out = slave_work(
        &block,
        &c.system,
        &c.params,
        assign.generation,
        c.seed,
        assign.rng_stream_id,
    )
    .map_err(|e| e.to_string())?;
    Ok(Message::SubResult(SubResult {
        generation: assign.generation,
        subpop: out
            .members
            .into_iter()
            .map(|m| EvaluatedGene {
                error: m.fitness(),
                x: m.x,
                omega: m.omega,
            })
            .collect(),
        timings: SlaveTimings {
            t_m: out.t_m,
            t_f: out.t_f,
            t_a: out.t_a,
            t_s_partial: out.t_s_partial,
            t_um,
        },
    }))
}

/// Serves Assigns until Terminate. A closed connection is an error.
pub fn serve(link: &mut dyn Transport) -> Result<(), ClusterError> {
    let mut cache: Option<Cache> = None;
    loop {
        let (frame, _) = link.recv_frame(None).map_err(|e| match e {
            LinkError::Closed => ClusterError::ConnectionLost,
            other => ClusterError::Protocol {
                slave: None,
                message: other.to_string(),
            },
        })?;
        let (msg, _, t_um) = wire::decode_timed(&frame)?;
        match msg {
            Message::Assign(assign) => {
                let reply = handle_assign(&mut cache, assign, t_um).unwrap_or_else(|reason| {
                    warn!("rejecting assignment: {reason}");
                    Message::Terminate { reason }
                });
                send(link, &reply)?;
            }
            Message::Terminate { reason } => {
                info!("terminated by master: {reason}");
                return Ok(());
            }
            other => {
                return Err(ClusterError::Protocol {
                    slave: None,
                    message: format!("unexpected {} from master", other.kind()),
                })
            }
        }
    }
}

/// Dials the master (retrying until the handshake timeout), registers, and
/// serves until Terminate.
pub fn slave_run(config: &ClusterConfig) -> Result<(), ClusterError> {
    let deadline = Instant::now() + config.handshake_timeout;
    let stream = loop {
        match TcpStream::connect(&config.address) {
            Ok(s) => break s,
            Err(e) if Instant::now() < deadline => {
                log::debug!("master not reachable yet: {e}");
                thread::sleep(Duration::from_millis(50));
            }
            Err(e) => {
                return Err(ClusterError::HandshakeFailure(format!(
                    "cannot reach master at {}: {e}",
                    config.address
                )))
            }
        }
    };
    let mut link = TcpTransport::new(stream)?;
    slave_handshake(&mut link, deadline)?;
    info!("registered with master at {}", config.address);
    serve(&mut link)
}
