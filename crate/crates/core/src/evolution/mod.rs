//! Evolutionary operators: initialization, recombination, mutation, fitness,
//! time-variant adaptation of relaxation factors, and the BAS/TS selections.
//!
//! Every operator is a pure function of its inputs and an [`RngStream`].

mod adapt;
mod operators;
mod select;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::problem::ProblemError;

pub use adapt::{adapt_omegas, adapt_pair, adapt_subpop, tva_factor, AdaptDraws};
pub use operators::{
    evaluate, init_population, mutate, mutate_and_evaluate, recombine, recombine_with,
    StochasticMatrix, INIT_SD,
};
pub use select::{select_bas, select_ts_champion, select_ts_partial};

#[derive(Debug, Error)]
pub enum EvoError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("subpopulation of size {0} cannot be paired")]
    OddSubpopulation(usize),
    #[error("individual {0} has no evaluated error")]
    UnevaluatedError(usize),
    #[error("cannot select a champion from an empty collection")]
    EmptyCollection,
    #[error(transparent)]
    Problem(#[from] ProblemError),
}

pub type Result<T> = std::result::Result<T, EvoError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionMethod {
    /// Best All Selection: master keeps the best N of parents and offspring.
    Bas,
    /// Twin Selection: slaves twin each pair's winner, master clones the champion.
    Ts,
}

impl FromStr for SelectionMethod {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "bas" => Ok(Self::Bas),
            "ts" => Ok(Self::Ts),
            other => Err(format!("unknown selection method `{other}` (expected bas or ts)")),
        }
    }
}

impl fmt::Display for SelectionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Bas => "bas",
            Self::Ts => "ts",
        })
    }
}

/// Exogenous knobs of the algorithm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvoParams {
    pub pop_size: usize,
    pub epsilon: f64,
    pub max_gen: u64,
    pub omega_lower: f64,
    pub omega_upper: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub p_max: f64,
    pub p_min: f64,
    pub selection: SelectionMethod,
    pub init_clip: f64,
}

impl Default for EvoParams {
    fn default() -> Self {
        Self {
            pop_size: 40,
            epsilon: 1e-8,
            max_gen: 10_000,
            omega_lower: 0.05,
            omega_upper: 1.95,
            gamma: 2.0,
            lambda: 20.0,
            p_max: 0.125,
            p_min: 0.0325,
            selection: SelectionMethod::Bas,
            init_clip: 15.0,
        }
    }
}

impl EvoParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(EvoError::InvalidParams(msg));
        if self.pop_size < 2 || !self.pop_size.is_multiple_of(2) {
            return bad(format!("population size {} must be even and >= 2", self.pop_size));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return bad(format!("epsilon {} must be positive", self.epsilon));
        }
        if !(self.omega_lower < self.omega_upper)
            || !self.omega_lower.is_finite()
            || !self.omega_upper.is_finite()
        {
            return bad(format!(
                "omega bounds [{}, {}] must be finite with lower < upper",
                self.omega_lower, self.omega_upper
            ));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return bad(format!("gamma {} must be positive", self.gamma));
        }
        if self.selection == SelectionMethod::Ts && !(self.lambda > 10.0 && self.lambda.is_finite()) {
            return bad(format!("lambda {} must exceed 10 for TS", self.lambda));
        }
        if !self.p_max.is_finite() || !self.p_min.is_finite() {
            return bad("p_max and p_min must be finite".into());
        }
        if !(self.init_clip > 0.0 && self.init_clip.is_finite()) {
            return bad(format!("init_clip {} must be positive", self.init_clip));
        }
        if self.max_gen >= u64::from(u32::MAX) {
            return bad(format!("max_gen {} is too large", self.max_gen));
        }
        Ok(())
    }

    pub fn clamp_omega(&self, omega: f64) -> f64 {
        omega.clamp(self.omega_lower, self.omega_upper)
    }
}

/// Candidate solution with its relaxation factor and cached residual.
///
/// `error` is `None` until evaluated and `Some(f64::INFINITY)` for individuals
/// whose iterate diverged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Individual {
    pub x: Vec<f64>,
    pub omega: f64,
    #[serde(with = "crate::json::opt_real")]
    pub error: Option<f64>,
}

impl Individual {
    pub fn new(x: Vec<f64>, omega: f64) -> Self {
        Self { x, omega, error: None }
    }

    pub fn with_error(mut self, error: f64) -> Self {
        self.error = Some(error);
        self
    }

    /// Error for comparisons; unevaluated counts as worst.
    pub fn fitness(&self) -> f64 {
        self.error.unwrap_or(f64::INFINITY)
    }
}

/// Ordered members plus generation counter. Order matters: partitioning and
/// twin pairing are positional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Population {
    pub members: Vec<Individual>,
    pub t: u64,
    pub n: usize,
}

impl Population {
    pub fn new(members: Vec<Individual>, t: u64) -> Self {
        let n = members.first().map_or(0, |m| m.x.len());
        debug_assert!(members.iter().all(|m| m.x.len() == n));
        Self { members, t, n }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Lowest-error member, earliest position on ties.
    pub fn champion(&self) -> Option<&Individual> {
        champion_index(&self.members).map(|i| &self.members[i])
    }
}

pub(crate) fn champion_index(members: &[Individual]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, m) in members.iter().enumerate() {
        match best {
            Some(b) if members[b].fitness() <= m.fitness() => {}
            _ => best = Some(i),
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_params_validate() {
        EvoParams::default().validate().unwrap();
        let ts = EvoParams {
            selection: SelectionMethod::Ts,
            ..EvoParams::default()
        };
        ts.validate().unwrap();
    }

    #[test]
    fn rejects_bad_params() {
        let odd = EvoParams {
            pop_size: 7,
            ..EvoParams::default()
        };
        assert!(matches!(odd.validate(), Err(EvoError::InvalidParams(_))));
        let small_lambda = EvoParams {
            selection: SelectionMethod::Ts,
            lambda: 10.0,
            ..EvoParams::default()
        };
        assert!(small_lambda.validate().is_err());
        let flipped = EvoParams {
            omega_lower: 1.0,
            omega_upper: 0.5,
            ..EvoParams::default()
        };
        assert!(flipped.validate().is_err());
    }

    #[test]
    fn champion_prefers_earliest_on_ties() {
        let m = |e: f64| Individual::new(vec![e], 1.0).with_error(e);
        let pop = Population::new(vec![m(3.0), m(1.0), m(1.0), m(2.0)], 0);
        assert_eq!(champion_index(&pop.members), Some(1));
        assert_eq!(champion_index(&[]), None);
    }
}
