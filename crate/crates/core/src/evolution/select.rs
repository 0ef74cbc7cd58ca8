use std::cmp::Ordering;

use super::{champion_index, EvoError, Individual, Population, Result};

fn require_evaluated(members: &[Individual], offset: usize) -> Result<()> {
    match members.iter().position(|m| m.error.is_none()) {
        Some(i) => Err(EvoError::UnevaluatedError(offset + i)),
        None => Ok(()),
    }
}

/// Best All Selection.
///
/// Keeps the `N` lowest-error members of `parents ∪ offspring`, sorted
/// ascending. Ties prefer offspring, then the lower original index.
pub fn select_bas(parents: &Population, offspring: &Population) -> Result<Population> {
    require_evaluated(&parents.members, 0)?;
    require_evaluated(&offspring.members, parents.len())?;
    let size = parents.len();

    // (error, 0 = offspring / 1 = parent, index)
    let mut ranked: Vec<(f64, u8, usize)> = offspring
        .members
        .iter()
        .enumerate()
        .map(|(i, m)| (m.fitness(), 0, i))
        .chain(parents.members.iter().enumerate().map(|(i, m)| (m.fitness(), 1, i)))
        .collect();
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let members = ranked
        .into_iter()
        .take(size)
        .map(|(_, src, i)| {
            if src == 0 {
                offspring.members[i].clone()
            } else {
                parents.members[i].clone()
            }
        })
        .collect();
    Ok(Population {
        members,
        t: offspring.t,
        n: offspring.n,
    })
}

/// Twin Selection, slave side: the better of each consecutive pair is kept
/// twice. Ties keep the first of the pair.
pub fn select_ts_partial(subpop: &[Individual]) -> Result<Vec<Individual>> {
    if !subpop.len().is_multiple_of(2) {
        return Err(EvoError::OddSubpopulation(subpop.len()));
    }
    require_evaluated(subpop, 0)?;
    let mut out = Vec::with_capacity(subpop.len());
    for pair in subpop.chunks_exact(2) {
        let winner = match pair[0].fitness().total_cmp(&pair[1].fitness()) {
            Ordering::Greater => &pair[1],
            _ => &pair[0],
        };
        out.push(winner.clone());
        out.push(winner.clone());
    }
    Ok(out)
}

/// Twin Selection, master side: the champion (earliest on ties) cloned `size`
/// times.
pub fn select_ts_champion(collected: &[Individual], size: usize) -> Result<Population> {
    require_evaluated(collected, 0)?;
    let i = champion_index(collected).ok_or(EvoError::EmptyCollection)?;
    Ok(Population::new(vec![collected[i].clone(); size], 0))
}
