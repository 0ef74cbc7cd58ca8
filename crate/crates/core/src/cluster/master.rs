use std::net::TcpListener;
use std::thread;
use std::time::{Duration, Instant};

use log::{debug, info, warn};

use crate::engine::{self, check_partition, record_slave, EngineError, SlaveOutput, SolveResult, Workers};
use crate::evolution::{EvoParams, Individual};
use crate::json;
use crate::metrics::PhaseTimings;
use crate::problem::LinearSystem;
use crate::rng::block_stream;
use crate::wire::{self, Assign, Gene, Message, Setup, WireError};

use super::slave::{serve, slave_handshake};
use super::transport::{ChannelTransport, LinkError, TcpTransport, Transport};
use super::{ClusterConfig, ClusterError, DIGEST_MISMATCH};

/// Master side of the handshake on one link.
fn master_handshake(link: &mut dyn Transport, deadline: Instant) -> Result<(), ClusterError> {
    let (frame, _) = link.recv_frame(Some(deadline)).map_err(|e| {
        ClusterError::HandshakeFailure(format!("{}: no Hello ({e})", link.peer()))
    })?;
    match wire::decode(&frame) {
        Ok((Message::Hello { .. }, _)) => {}
        Ok((other, _)) => {
            return Err(ClusterError::HandshakeFailure(format!(
                "{}: expected hello, got {}",
                link.peer(),
                other.kind()
            )))
        }
        Err(e @ WireError::VersionMismatch { .. }) => {
            if let Ok(f) = wire::encode(&Message::Terminate {
                reason: e.to_string(),
            }) {
                let _ = link.send_frame(&f);
            }
            return Err(ClusterError::HandshakeFailure(format!("{}: {e}", link.peer())));
        }
        Err(e) => return Err(ClusterError::HandshakeFailure(format!("{}: {e}", link.peer()))),
    }
    let ack = wire::encode(&Message::Ack { generation: 0 })?;
    link.send_frame(&ack)
        .map_err(|e| ClusterError::HandshakeFailure(format!("{}: {e}", link.peer())))
}

/// Accepts `count` slaves on `listener`, in registration order.
pub fn accept_slaves(
    listener: &TcpListener,
    count: usize,
    timeout: Duration,
) -> Result<Vec<TcpTransport>, ClusterError> {
    let deadline = Instant::now() + timeout;
    listener.set_nonblocking(true)?;
    let mut links = Vec::with_capacity(count);
    while links.len() < count {
        match listener.accept() {
            Ok((stream, addr)) => {
                let mut link = TcpTransport::new(stream)?;
                master_handshake(&mut link, deadline)?;
                info!("slave {} registered from {addr}", links.len());
                links.push(link);
            }
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                if Instant::now() >= deadline {
                    return Err(ClusterError::HandshakeFailure(format!(
                        "only {} of {count} slaves registered within {timeout:?}",
                        links.len()
                    )));
                }
                thread::sleep(Duration::from_millis(5));
            }
            Err(e) => return Err(e.into()),
        }
    }
    listener.set_nonblocking(false)?;
    Ok(links)
}

/// Master-side [`Workers`] over a set of slave links.
pub struct RemoteWorkers<'a, T: Transport> {
    links: Vec<T>,
    sys: &'a LinearSystem,
    params: &'a EvoParams,
    seed: u64,
    system_digest: String,
    params_digest: String,
    setup_sent: Vec<bool>,
    gather_timeout: Duration,
}

impl<'a, T: Transport> RemoteWorkers<'a, T> {
    pub fn new(
        links: Vec<T>,
        sys: &'a LinearSystem,
        params: &'a EvoParams,
        seed: u64,
        gather_timeout: Duration,
    ) -> Self {
        let setup_sent = vec![false; links.len()];
        Self {
            links,
            sys,
            params,
            seed,
            system_digest: sys.digest(),
            params_digest: json::digest(params).expect("parameters serialize"),
            setup_sent,
            gather_timeout,
        }
    }

    /// Sends Terminate to every slave, ignoring failures.
    pub fn terminate(&mut self, reason: &str) {
        let frame = wire::encode(&Message::Terminate {
            reason: reason.to_string(),
        })
        .expect("terminate encodes");
        for link in &mut self.links {
            let _ = link.send_frame(&frame);
        }
    }

    pub fn into_links(self) -> Vec<T> {
        self.links
    }

    fn gather(&mut self, deadline: Instant) -> Vec<Result<(Vec<u8>, Instant), LinkError>> {
        if self.links.len() == 1 {
            return vec![self.links[0].recv_frame(Some(deadline))];
        }
        thread::scope(|s| {
            let handles: Vec<_> = self
                .links
                .iter_mut()
                .map(|link| s.spawn(move || link.recv_frame(Some(deadline))))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("gather thread panicked"))
                .collect()
        })
    }
}

impl<T: Transport> Workers for RemoteWorkers<'_, T> {
    fn slave_count(&self) -> usize {
        self.links.len()
    }

    fn dispatch(
        &mut self,
        blocks: Vec<Vec<Individual>>,
        t: u64,
        timings: &mut PhaseTimings,
    ) -> engine::Result<Vec<Vec<Individual>>> {
        let sizes: Vec<usize> = blocks.iter().map(Vec::len).collect();
        let mut sent_at = Vec::with_capacity(blocks.len());
        let mut offset = 0;
        for (k, block) in blocks.iter().enumerate() {
            let setup = (!self.setup_sent[k]).then(|| Setup {
                system: self.sys.clone(),
                params: self.params.clone(),
                seed: self.seed,
            });
            let msg = Message::Assign(Assign {
                generation: t,
                system_digest: self.system_digest.clone(),
                params_digest: self.params_digest.clone(),
                selection_method: self.params.selection,
                rng_stream_id: block_stream(offset),
                subpop: block.iter().map(Gene::from).collect(),
                setup,
            });
            let (frame, dt) = wire::encode_timed(&msg).map_err(ClusterError::from)?;
            timings.t_marshal += dt;
            self.links[k]
                .send_frame(&frame)
                .map_err(|e| ClusterError::from_link(k, e))?;
            self.setup_sent[k] = true;
            sent_at.push(Instant::now());
            offset += block.len();
        }

        let replies = self.gather(Instant::now() + self.gather_timeout);

        let mut out = Vec::with_capacity(replies.len());
        for (k, reply) in replies.into_iter().enumerate() {
            let (frame, arrived) = reply.map_err(|e| ClusterError::from_link(k, e))?;
            let (msg, _, dt) = wire::decode_timed(&frame).map_err(|e| ClusterError::Protocol {
                slave: Some(k),
                message: e.to_string(),
            })?;
            let res = match msg {
                Message::SubResult(r) => r,
                Message::Terminate { reason } if reason.starts_with(DIGEST_MISMATCH) => {
                    return Err(ClusterError::DigestMismatch { slave: k, reason }.into())
                }
                Message::Terminate { reason } => {
                    return Err(ClusterError::SlaveError { slave: k, reason }.into())
                }
                other => {
                    return Err(ClusterError::Protocol {
                        slave: Some(k),
                        message: format!("expected sub_result, got {}", other.kind()),
                    }
                    .into())
                }
            };
            if res.generation != t || res.subpop.len() != sizes[k] {
                return Err(ClusterError::Protocol {
                    slave: Some(k),
                    message: format!(
                        "answer for generation {} with {} members, expected generation {t} with {}",
                        res.generation,
                        res.subpop.len(),
                        sizes[k]
                    ),
                }
                .into());
            }
            let st = res.timings;
            timings.t_unmarshal += dt + st.t_um;
            let round_trip = arrived.saturating_duration_since(sent_at[k]).as_secs_f64();
            timings.t_trans += (round_trip - st.busy()).max(0.0);
            let members: Vec<Individual> = res.subpop.into_iter().map(Individual::from).collect();
            record_slave(
                timings,
                &SlaveOutput {
                    members: Vec::new(),
                    t_m: st.t_m,
                    t_f: st.t_f,
                    t_a: st.t_a,
                    t_s_partial: st.t_s_partial,
                },
            );
            out.push(members);
        }
        debug!("generation {t}: gathered {} blocks", out.len());
        Ok(out)
    }
}

/// Binds `config.address`, waits for the slaves and runs the solver.
pub fn master_run(
    sys: &LinearSystem,
    params: &EvoParams,
    config: &ClusterConfig,
    seed: u64,
) -> engine::Result<SolveResult> {
    let listener = TcpListener::bind(&config.address).map_err(ClusterError::from)?;
    info!("master listening on {}", listener.local_addr().map_err(ClusterError::from)?);
    master_run_on(&listener, sys, params, config, seed)
}

/// [`master_run`] on an already bound listener.
pub fn master_run_on(
    listener: &TcpListener,
    sys: &LinearSystem,
    params: &EvoParams,
    config: &ClusterConfig,
    seed: u64,
) -> engine::Result<SolveResult> {
    params.validate()?;
    check_partition(params.pop_size, config.slave_count)?;
    let links = accept_slaves(listener, config.slave_count, config.handshake_timeout)?;
    let mut workers = RemoteWorkers::new(links, sys, params, seed, config.gather_timeout);
    let result = engine::drive(sys, params, &mut workers, seed);
    workers.terminate(match &result {
        Ok(r) if r.aborted() => "aborted",
        Ok(_) => "done",
        Err(_) => "error",
    });
    result
}

/// Runs the solver on `slaves` in-process slave threads connected by
/// in-memory channels. The slaves run the same loop as networked ones.
pub fn run_virtual(
    sys: &LinearSystem,
    params: &EvoParams,
    slaves: usize,
    seed: u64,
) -> engine::Result<SolveResult> {
    params.validate()?;
    check_partition(params.pop_size, slaves)?;
    let mut links = Vec::with_capacity(slaves);
    let mut handles = Vec::with_capacity(slaves);
    for k in 0..slaves {
        let (mut master_end, mut slave_end) = ChannelTransport::pair(&format!("virtual-{k}"));
        let handle = thread::Builder::new()
            .name(format!("virtual-slave-{k}"))
            .spawn(move || -> Result<(), ClusterError> {
                slave_handshake(&mut slave_end, Instant::now() + super::DEFAULT_HANDSHAKE_TIMEOUT)?;
                serve(&mut slave_end)
            })
            .map_err(ClusterError::from)?;
        master_handshake(&mut master_end, Instant::now() + super::DEFAULT_HANDSHAKE_TIMEOUT)?;
        links.push(master_end);
        handles.push(handle);
    }
    let mut workers = RemoteWorkers::new(links, sys, params, seed, super::DEFAULT_GATHER_TIMEOUT);
    let result = engine::drive(sys, params, &mut workers, seed);
    workers.terminate("done");
    drop(workers);
    for (k, h) in handles.into_iter().enumerate() {
        match h.join() {
            Ok(Ok(())) => {}
            Ok(Err(e)) => warn!("virtual slave {k} exited with error: {e}"),
            Err(_) => warn!("virtual slave {k} panicked"),
        }
    }
    result.map_err(|e: EngineError| e)
}
