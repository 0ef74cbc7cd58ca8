use crate::problem::{LinearSystem, ProblemError};
use crate::rng::RngStream;

use super::{EvoError, EvoParams, Individual, Population, Result};

/// Standard deviation of the initial Gaussian draw (before clipping).
pub const INIT_SD: f64 = 5.0;

/// Rows whose sum falls below this are redrawn.
const MIN_ROW_SUM: f64 = 1e-9;

/// Random population: `x ~ N(0, INIT_SD)` clipped to `±init_clip`,
/// `omega ~ U(omega_lower, omega_upper)`. Draws all x of an individual, then
/// its omega.
pub fn init_population(params: &EvoParams, n: usize, rng: &mut RngStream) -> Result<Population> {
    if params.pop_size < 2 || !params.pop_size.is_multiple_of(2) {
        return Err(EvoError::InvalidParams(format!(
            "population size {} must be even and >= 2",
            params.pop_size
        )));
    }
    if n < 2 {
        return Err(EvoError::InvalidParams(format!("dimension {n} must be >= 2")));
    }
    let clip = params.init_clip;
    let members = (0..params.pop_size)
        .map(|_| {
            let x = (0..n)
                .map(|_| rng.gaussian(0.0, INIT_SD).clamp(-clip, clip))
                .collect();
            let omega = rng.uniform(params.omega_lower, params.omega_upper);
            Individual::new(x, omega)
        })
        .collect();
    Ok(Population::new(members, 0))
}

/// Row-stochastic `N x N` matrix: non-negative entries, rows summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct StochasticMatrix {
    size: usize,
    entries: Vec<f64>,
}

impl StochasticMatrix {
    /// Draws `N^2` uniforms row by row and normalizes each row, redrawing a
    /// row whose sum is below `1e-9`.
    pub fn random(size: usize, rng: &mut RngStream) -> Self {
        let mut entries = Vec::with_capacity(size * size);
        for _ in 0..size {
            let row = loop {
                let row: Vec<f64> = (0..size).map(|_| rng.unit()).collect();
                let sum: f64 = row.iter().sum();
                if sum >= MIN_ROW_SUM {
                    break row.into_iter().map(|r| r / sum).collect::<Vec<_>>();
                }
            };
            entries.extend(row);
        }
        Self { size, entries }
    }

    pub fn identity(size: usize) -> Self {
        let mut entries = vec![0.0; size * size];
        for i in 0..size {
            entries[i * size + i] = 1.0;
        }
        Self { size, entries }
    }

    /// Checks the stochastic constraints, returning `None` if violated.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Option<Self> {
        let size = rows.len();
        let ok = rows.iter().all(|r| {
            r.len() == size
                && r.iter().all(|&v| v >= 0.0 && v.is_finite())
                && (r.iter().sum::<f64>() - 1.0).abs() <= 1e-12
        });
        ok.then(|| Self {
            size,
            entries: rows.into_iter().flatten().collect(),
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.size..(i + 1) * self.size]
    }
}

/// `X' = R X` with a freshly drawn `R`. Omegas stay in place, errors are cleared.
pub fn recombine(pop: &Population, rng: &mut RngStream) -> Population {
    let r = StochasticMatrix::random(pop.len(), rng);
    recombine_with(pop, &r)
}

pub fn recombine_with(pop: &Population, r: &StochasticMatrix) -> Population {
    assert_eq!(r.size(), pop.len(), "recombination matrix does not match population");
    let n = pop.n;
    let members = pop
        .members
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let mut x = vec![0.0; n];
            for (w, parent) in r.row(i).iter().zip(&pop.members) {
                if *w == 0.0 {
                    continue;
                }
                for (xi, pi) in x.iter_mut().zip(&parent.x) {
                    *xi += w * pi;
                }
            }
            Individual::new(x, m.omega)
        })
        .collect();
    Population {
        members,
        t: pop.t,
        n,
    }
}

/// One Jacobi-SR sweep per individual with its own omega.
///
/// A sweep that leaves the finite range resets `x` to zero and marks the
/// individual with error `+inf`; the others have their error cleared.
pub fn mutate(subpop: &mut [Individual], sys: &LinearSystem) -> Result<()> {
    for ind in subpop.iter_mut() {
        match sys.jacobi_sr_step(&ind.x, ind.omega) {
            Ok(x) => {
                ind.x = x;
                ind.error = None;
            }
            Err(ProblemError::NonFiniteResult { .. }) => {
                ind.x.iter_mut().for_each(|v| *v = 0.0);
                ind.error = Some(f64::INFINITY);
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok(())
}

/// Fills every missing error with the L1 residual (`+inf` if it overflows).
pub fn evaluate(subpop: &mut [Individual], sys: &LinearSystem) -> Result<()> {
    for ind in subpop.iter_mut().filter(|i| i.error.is_none()) {
        let e = sys.residual_error(&ind.x)?;
        ind.error = Some(if e.is_finite() { e } else { f64::INFINITY });
    }
    Ok(())
}

pub fn mutate_and_evaluate(subpop: &[Individual], sys: &LinearSystem) -> Result<Vec<Individual>> {
    let mut out = subpop.to_vec();
    mutate(&mut out, sys)?;
    evaluate(&mut out, sys)?;
    Ok(out)
}
