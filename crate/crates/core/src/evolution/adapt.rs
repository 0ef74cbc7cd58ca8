//! Time-variant adaptation (TVA) of relaxation factors.
//!
//! For a pair where `x` is worse than `y`:
//!
//! * the worse factor moves toward the better one,
//!   `w_x' = (0.5 + P_x)(w_x + w_y)`;
//! * the better factor is pushed away from the worse one toward the nearer
//!   bound, `w_y' = w_y + P_y (w_U - w_y)` if `w_y > w_x`, else
//!   `w_y + P_y (w_L - w_y)`.
//!
//! `P_x` and `P_y` are Gaussian perturbations damped by a schedule `T_w(t)`:
//! `(1 - t/T)^gamma` for BAS and `lambda ln(1 + 1/(t + lambda))` for TS.

use crate::rng::RngStream;

use super::{EvoError, EvoParams, Individual, Result, SelectionMethod};

/// Standard deviation of the perturbation draws.
const PERTURBATION_SD: f64 = 0.25;

/// Perturbation parameters applied to one pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptDraws {
    pub p_x: f64,
    pub p_y: f64,
}

pub fn tva_factor(method: SelectionMethod, t: u64, params: &EvoParams) -> Result<f64> {
    match method {
        SelectionMethod::Bas => {
            if params.max_gen == 0 || t > params.max_gen {
                return Err(EvoError::InvalidParams(format!(
                    "generation {t} outside [0, {}]",
                    params.max_gen
                )));
            }
            Ok((1.0 - t as f64 / params.max_gen as f64).powf(params.gamma))
        }
        SelectionMethod::Ts => {
            let lambda = params.lambda;
            if !(lambda > 10.0) {
                return Err(EvoError::InvalidParams(format!("lambda {lambda} must exceed 10")));
            }
            Ok(lambda * (1.0 / (t as f64 + lambda)).ln_1p())
        }
    }
}

/// Bound on the worse factor's perturbation: `|w_y - w_x| / (2 (w_x + w_y))`.
fn worse_bound(wx: f64, wy: f64) -> f64 {
    let sum = wx + wy;
    if sum > 0.0 {
        (wy - wx).abs() / (2.0 * sum)
    } else {
        0.0
    }
}

/// Bound on the better factor's perturbation.
///
/// The optimal factor is unknown; it is estimated by continuing from `w_y`
/// away from `w_x` by the same gap, clipped to the domain.
fn better_bound(wx: f64, wy: f64, params: &EvoParams) -> f64 {
    let target = params.clamp_omega(wy + (wy - wx));
    let gap = (target - wy).abs();
    let denom = if wy > wx {
        params.omega_upper - wy
    } else {
        2.0 * (wy - params.omega_lower)
    };
    if denom > 0.0 {
        (gap / denom).min(1.0)
    } else {
        0.0
    }
}

/// Applies one adaptation with given perturbations, clamping into bounds.
/// Returns `(w_x', w_y')`.
pub fn adapt_omegas(wx: f64, wy: f64, draws: AdaptDraws, params: &EvoParams) -> (f64, f64) {
    let wx_new = (0.5 + draws.p_x) * (wx + wy);
    let bound = if wy > wx {
        params.omega_upper
    } else {
        params.omega_lower
    };
    let wy_new = wy + draws.p_y * (bound - wy);
    (params.clamp_omega(wx_new), params.clamp_omega(wy_new))
}

fn draw(wx: f64, wy: f64, t: u64, params: &EvoParams, rng: &mut RngStream) -> Result<AdaptDraws> {
    let damping = tva_factor(params.selection, t, params)?;
    let gx = rng.gaussian(0.0, PERTURBATION_SD);
    let gy = rng.gaussian(0.0, PERTURBATION_SD);
    Ok(match params.selection {
        SelectionMethod::Bas => AdaptDraws {
            p_x: worse_bound(wx, wy) * gx * damping,
            p_y: better_bound(wx, wy, params) * gy.abs() * damping,
        },
        SelectionMethod::Ts => AdaptDraws {
            p_x: gx * params.p_max * damping,
            p_y: gy * params.p_min * damping,
        },
    })
}

/// Adapts one ordered pair. Returns `(omega_worse', omega_better')`.
pub fn adapt_pair(
    worse: &Individual,
    better: &Individual,
    t: u64,
    params: &EvoParams,
    rng: &mut RngStream,
) -> Result<(f64, f64)> {
    let draws = draw(worse.omega, better.omega, t, params, rng)?;
    Ok(adapt_omegas(worse.omega, better.omega, draws, params))
}

/// Adapts consecutive pairs `(0,1), (2,3), ...`. Equal errors are left alone.
pub fn adapt_subpop(
    subpop: &[Individual],
    t: u64,
    params: &EvoParams,
    rng: &mut RngStream,
) -> Result<Vec<Individual>> {
    if !subpop.len().is_multiple_of(2) {
        return Err(EvoError::OddSubpopulation(subpop.len()));
    }
    let mut out = subpop.to_vec();
    for (k, pair) in out.chunks_exact_mut(2).enumerate() {
        let (e0, e1) = match (pair[0].error, pair[1].error) {
            (Some(a), Some(b)) => (a, b),
            (None, _) => return Err(EvoError::UnevaluatedError(2 * k)),
            (_, None) => return Err(EvoError::UnevaluatedError(2 * k + 1)),
        };
        if e0 == e1 {
            continue;
        }
        let (worse, better) = if e0 > e1 { (0, 1) } else { (1, 0) };
        let (ww, wb) = adapt_pair(&pair[worse], &pair[better], t, params, rng)?;
        pair[worse].omega = ww;
        pair[better].omega = wb;
    }
    Ok(out)
}
