//! The generation loop.
//!
//! Each generation: the master recombines and partitions the population; every
//! slave mutates, evaluates and adapts its block (and, under TS, twins each
//! pair's winner); the master gathers all blocks, selects, and checks the
//! champion against `epsilon`.
//!
//! Slave work only depends on `(block, seed, pair streams, generation)`, and
//! pair streams follow population position rather than slave identity, so any
//! number of slaves, local or remote, produces the same populations.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::{self, ClusterError};
use crate::evolution::{
    adapt_subpop, evaluate, init_population, mutate, recombine, select_bas, select_ts_champion,
    select_ts_partial, EvoError, EvoParams, Individual, Population, SelectionMethod,
};
use crate::json;
use crate::metrics::{PhaseTimings, SlavePhase};
use crate::problem::LinearSystem;
use crate::rng::{block_stream, generation_epoch, RngStream, MASTER_STREAM};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Evo(#[from] EvoError),
    #[error("population of {pop} cannot be split over {slaves} slaves")]
    IndivisiblePopulation { pop: usize, slaves: usize },
    #[error("invalid topology: {0}")]
    InvalidTopology(String),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
}

pub type Result<T> = std::result::Result<T, EngineError>;

/// Where slave work runs.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Topology {
    /// Everything in this process, one block.
    #[default]
    Single,
    /// `slaves` in-process slave threads speaking the wire protocol over
    /// in-memory channels.
    Virtual { slaves: usize },
    /// Real TCP cluster: the master listens on `listen` and waits for
    /// `slaves` registrations.
    Network { listen: String, slaves: usize },
}

impl Topology {
    pub fn slave_count(&self) -> usize {
        match self {
            Topology::Single => 1,
            Topology::Virtual { slaves } | Topology::Network { slaves, .. } => *slaves,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Topology::Single => "single",
            Topology::Virtual { .. } => "virtual",
            Topology::Network { .. } => "network",
        }
    }

    /// Population must split into equal, even blocks of at least two.
    pub fn validate(&self, pop_size: usize) -> Result<()> {
        check_partition(pop_size, self.slave_count())
    }
}

pub(crate) fn check_partition(pop: usize, slaves: usize) -> Result<()> {
    if slaves == 0 {
        return Err(EngineError::InvalidTopology("slave count must be positive".into()));
    }
    if !pop.is_multiple_of(slaves) {
        return Err(EngineError::IndivisiblePopulation { pop, slaves });
    }
    let block = pop / slaves;
    if block < 2 || !block.is_multiple_of(2) {
        return Err(EngineError::InvalidTopology(format!(
            "block size {block} (= {pop}/{slaves}) must be even and >= 2"
        )));
    }
    Ok(())
}

/// Why a cluster run stopped early.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbortReason {
    /// 0-based registration index of the slave at fault, if one is known.
    pub slave: Option<usize>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveResult {
    pub champion_x: Vec<f64>,
    #[serde(with = "json::real")]
    pub champion_error: f64,
    pub omega_at_convergence: f64,
    pub generations: u64,
    pub converged: bool,
    /// Champion error after each generation.
    #[serde(with = "json::reals")]
    pub trajectory: Vec<f64>,
    pub timings: Vec<PhaseTimings>,
    /// Mutations performed (N per generation).
    pub mutations: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub abort: Option<AbortReason>,
}

impl SolveResult {
    pub fn aborted(&self) -> bool {
        self.abort.is_some()
    }
}

/// Contiguous, order-preserving blocks of `N/m` members.
pub fn partition(pop: &Population, m: usize) -> Result<Vec<Vec<Individual>>> {
    if m == 0 || !pop.len().is_multiple_of(m) {
        return Err(EngineError::IndivisiblePopulation {
            pop: pop.len(),
            slaves: m,
        });
    }
    let size = pop.len() / m;
    Ok(pop.members.chunks(size).map(<[Individual]>::to_vec).collect())
}

/// Output of one slave's share of a generation.
#[derive(Debug, Clone, PartialEq)]
pub struct SlaveOutput {
    pub members: Vec<Individual>,
    pub t_m: f64,
    pub t_f: f64,
    pub t_a: f64,
    pub t_s_partial: Option<f64>,
}

/// Mutate, evaluate, adapt and (TS only) twin-select one block.
///
/// `stream_id` is the stream of the block's first pair; pair `k` of the
/// block draws from `stream_id + k`.
pub fn slave_work(
    block: &[Individual],
    sys: &LinearSystem,
    params: &EvoParams,
    t: u64,
    seed: u64,
    stream_id: u64,
) -> std::result::Result<SlaveOutput, EvoError> {
    let mut members = block.to_vec();

    let clock = Instant::now();
    mutate(&mut members, sys)?;
    let t_m = clock.elapsed().as_secs_f64();

    let clock = Instant::now();
    evaluate(&mut members, sys)?;
    let t_f = clock.elapsed().as_secs_f64();

    let clock = Instant::now();
    if !members.len().is_multiple_of(2) {
        return Err(EvoError::OddSubpopulation(members.len()));
    }
    let mut adapted = Vec::with_capacity(members.len());
    for (k, pair) in members.chunks_exact(2).enumerate() {
        let mut rng = RngStream::at_epoch(seed, stream_id + k as u64, generation_epoch(t));
        adapted.extend(adapt_subpop(pair, t, params, &mut rng)?);
    }
    let mut members = adapted;
    let t_a = clock.elapsed().as_secs_f64();

    let t_s_partial = match params.selection {
        SelectionMethod::Bas => None,
        SelectionMethod::Ts => {
            let clock = Instant::now();
            members = select_ts_partial(&members)?;
            Some(clock.elapsed().as_secs_f64())
        }
    };
    Ok(SlaveOutput {
        members,
        t_m,
        t_f,
        t_a,
        t_s_partial,
    })
}

/// Executes the slave side of a generation for every block.
pub trait Workers {
    fn slave_count(&self) -> usize;

    /// Returns one block per slave, in slave order, and fills the slave and
    /// communication fields of `timings`.
    fn dispatch(
        &mut self,
        blocks: Vec<Vec<Individual>>,
        t: u64,
        timings: &mut PhaseTimings,
    ) -> Result<Vec<Vec<Individual>>>;
}

/// Single-process execution: the whole population as one block.
pub struct LocalWorkers<'a> {
    sys: &'a LinearSystem,
    params: &'a EvoParams,
    seed: u64,
}

impl<'a> LocalWorkers<'a> {
    pub fn new(sys: &'a LinearSystem, params: &'a EvoParams, seed: u64) -> Self {
        Self { sys, params, seed }
    }
}

impl Workers for LocalWorkers<'_> {
    fn slave_count(&self) -> usize {
        1
    }

    fn dispatch(
        &mut self,
        blocks: Vec<Vec<Individual>>,
        t: u64,
        timings: &mut PhaseTimings,
    ) -> Result<Vec<Vec<Individual>>> {
        let mut out = Vec::with_capacity(blocks.len());
        for block in blocks {
            let res = slave_work(&block, self.sys, self.params, t, self.seed, block_stream(0))?;
            timings.t_m += res.t_m;
            timings.t_f += res.t_f;
            timings.t_a += res.t_a;
            timings.t_s += res.t_s_partial.unwrap_or(0.0);
            out.push(res.members);
        }
        Ok(out)
    }
}

pub(crate) fn record_slave(timings: &mut PhaseTimings, out: &SlaveOutput) {
    timings.t_m += out.t_m;
    timings.t_f += out.t_f;
    timings.t_a += out.t_a;
    timings.per_slave.push(SlavePhase {
        t_m: out.t_m,
        t_f: out.t_f,
        t_a: out.t_a,
        t_s_partial: out.t_s_partial.unwrap_or(0.0),
    });
}

#[derive(Debug, Clone)]
pub struct GenerationOutcome {
    pub next: Population,
    pub champion: Individual,
    pub timings: PhaseTimings,
    pub mutations: usize,
}

/// Runs generation `pop.t`. `pop` must be evaluated.
pub fn run_generation(
    pop: &Population,
    params: &EvoParams,
    workers: &mut dyn Workers,
    seed: u64,
) -> Result<GenerationOutcome> {
    let t = pop.t;
    if t >= params.max_gen {
        return Err(EvoError::InvalidParams(format!(
            "generation {t} is past max_gen {}",
            params.max_gen
        ))
        .into());
    }
    let mut timings = PhaseTimings::default();

    let clock = Instant::now();
    let mut rng = RngStream::at_epoch(seed, MASTER_STREAM, generation_epoch(t));
    let recombined = recombine(pop, &mut rng);
    timings.t_r = clock.elapsed().as_secs_f64();

    let m = workers.slave_count();
    let blocks = partition(&recombined, m)?;
    let sizes: Vec<usize> = blocks.iter().map(Vec::len).collect();
    let returned = workers.dispatch(blocks, t, &mut timings)?;
    if returned.len() != m || returned.iter().zip(&sizes).any(|(b, &s)| b.len() != s) {
        return Err(EngineError::Cluster(ClusterError::Protocol {
            slave: None,
            message: "gathered blocks do not match the dispatched sizes".into(),
        }));
    }
    let collected: Vec<Individual> = returned.into_iter().flatten().collect();
    let mutations = collected.len();

    let clock = Instant::now();
    let (mut next, champion) = match params.selection {
        SelectionMethod::Bas => {
            let offspring = Population::new(collected, t);
            let next = select_bas(pop, &offspring)?;
            let champion = next.members[0].clone();
            (next, champion)
        }
        SelectionMethod::Ts => {
            let next = select_ts_champion(&collected, params.pop_size)?;
            let champion = next.members[0].clone();
            (next, champion)
        }
    };
    timings.t_s += clock.elapsed().as_secs_f64();
    next.t = t + 1;
    next.n = pop.n;

    Ok(GenerationOutcome {
        next,
        champion,
        timings,
        mutations,
    })
}

/// Runs the full loop over any [`Workers`].
///
/// Cluster failures during the loop end the run with the best champion so
/// far and an [`AbortReason`]; other errors propagate.
pub fn drive(
    sys: &LinearSystem,
    params: &EvoParams,
    workers: &mut dyn Workers,
    seed: u64,
) -> Result<SolveResult> {
    params.validate()?;
    check_partition(params.pop_size, workers.slave_count())?;

    let mut rng = RngStream::at_epoch(seed, MASTER_STREAM, 0);
    let mut pop = init_population(params, sys.n(), &mut rng)?;
    evaluate(&mut pop.members, sys)?;
    let mut best = pop.champion().expect("population is non-empty").clone();

    let mut result = SolveResult {
        champion_x: Vec::new(),
        champion_error: f64::INFINITY,
        omega_at_convergence: 0.0,
        generations: 0,
        converged: best.fitness() <= params.epsilon,
        trajectory: Vec::new(),
        timings: Vec::new(),
        mutations: 0,
        abort: None,
    };

    while !result.converged && pop.t < params.max_gen {
        let outcome = match run_generation(&pop, params, workers, seed) {
            Ok(o) => o,
            Err(EngineError::Cluster(e)) => {
                log::warn!("aborting at generation {}: {e}", pop.t);
                result.abort = Some(e.abort_reason());
                break;
            }
            Err(e) => return Err(e),
        };
        let err = outcome.champion.fitness();
        result.trajectory.push(err);
        result.timings.push(outcome.timings);
        result.mutations += outcome.mutations as u64;
        result.generations = outcome.next.t;
        if err < best.fitness() {
            best = outcome.champion;
        }
        result.converged = err <= params.epsilon;
        pop = outcome.next;
    }

    result.champion_error = best.fitness();
    result.omega_at_convergence = best.omega;
    result.champion_x = best.x;
    Ok(result)
}

/// Solves `sys` on the given topology.
pub fn run_solver(
    sys: &LinearSystem,
    params: &EvoParams,
    topology: &Topology,
    seed: u64,
) -> Result<SolveResult> {
    params.validate()?;
    topology.validate(params.pop_size)?;
    match topology {
        Topology::Single => drive(sys, params, &mut LocalWorkers::new(sys, params, seed), seed),
        Topology::Virtual { slaves } => cluster::run_virtual(sys, params, *slaves, seed),
        Topology::Network { listen, slaves } => {
            let config = cluster::ClusterConfig::master(listen.clone(), *slaves);
            Ok(cluster::master_run(sys, params, &config, seed)?)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{generate, Family, ProblemSpec};

    fn p1(n: usize, seed: u64) -> LinearSystem {
        generate(
            &ProblemSpec::new(Family::P1, n, seed),
            &mut RngStream::new(seed, crate::rng::PROBLEM_STREAM),
        )
        .unwrap()
    }

    fn numbered(n: usize) -> Population {
        Population::new((0..n).map(|i| Individual::new(vec![i as f64, 0.0], 1.0)).collect(), 0)
    }

    #[test]
    fn partition_examples() {
        let pop = numbered(6);
        let blocks = partition(&pop, 3).unwrap();
        let ids: Vec<Vec<f64>> = blocks.iter().map(|b| b.iter().map(|m| m.x[0]).collect()).collect();
        assert_eq!(ids, vec![vec![0.0, 1.0], vec![2.0, 3.0], vec![4.0, 5.0]]);

        let whole = partition(&pop, 1).unwrap();
        assert_eq!(whole, vec![pop.members.clone()]);
        assert_eq!(blocks.concat(), pop.members);

        assert!(matches!(partition(&pop, 4), Err(EngineError::IndivisiblePopulation { .. })));
    }

    #[test]
    fn topology_validation() {
        assert!(Topology::Virtual { slaves: 5 }.validate(40).is_ok());
        assert!(Topology::Virtual { slaves: 3 }.validate(7).is_err());
        assert!(Topology::Virtual { slaves: 4 }.validate(12).is_err());
        assert!(Topology::Virtual { slaves: 6 }.validate(6).is_err());
        assert!(Topology::Single.validate(2).is_ok());
    }

    #[test]
    fn zero_generations() {
        let sys = p1(10, 1);
        let params = EvoParams {
            max_gen: 0,
            ..EvoParams::default()
        };
        let r = run_solver(&sys, &params, &Topology::Single, 3).unwrap();
        assert!(!r.converged);
        assert_eq!(r.generations, 0);
        let mut rng = RngStream::at_epoch(3, MASTER_STREAM, 0);
        let mut init = init_population(&params, 10, &mut rng).unwrap();
        evaluate(&mut init.members, &sys).unwrap();
        let champ = init.champion().unwrap();
        assert_eq!(r.champion_x, champ.x);
        assert_eq!(r.champion_error, champ.error.unwrap());
    }

    #[test]
    fn exact_solution_survives_bas() {
        let sys = LinearSystem::from_rows(vec![vec![2.0, 1.0], vec![1.0, 3.0]], vec![3.0, 4.0]).unwrap();
        let params = EvoParams {
            pop_size: 4,
            max_gen: 10,
            ..EvoParams::default()
        };
        let mut members: Vec<Individual> = (0..4)
            .map(|i| Individual::new(vec![i as f64 + 2.0, -1.0], 0.5))
            .collect();
        members[2] = Individual::new(vec![1.0, 1.0], 0.9);
        let mut pop = Population::new(members, 0);
        evaluate(&mut pop.members, &sys).unwrap();
        let out = run_generation(&pop, &params, &mut LocalWorkers::new(&sys, &params, 0), 0).unwrap();
        assert_eq!(out.champion.error, Some(0.0));
        assert_eq!(out.next.t, 1);
        assert_eq!(out.mutations, 4);
    }

    #[test]
    fn bas_champion_never_worsens_and_runs_replay() {
        let sys = p1(30, 4);
        let params = EvoParams {
            pop_size: 10,
            max_gen: 200,
            ..EvoParams::default()
        };
        let a = run_solver(&sys, &params, &Topology::Single, 21).unwrap();
        let b = run_solver(&sys, &params, &Topology::Single, 21).unwrap();
        assert_eq!(a.trajectory, b.trajectory);
        assert_eq!(a.champion_x, b.champion_x);
        assert!(a.trajectory.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(a.mutations, 10 * a.generations);
        if a.converged {
            assert!(sys.residual_error(&a.champion_x).unwrap() <= params.epsilon);
        }
    }
}
