//! Outcome likelihoods under solved equilibrium cutoffs.
//!
//! Four observable classes: the property never sells; a lone entrant buys at
//! the reserve; several entrants bid the price up to the second-highest
//! value; and everything the equilibrium assigns probability zero (for one
//! particular draw), such as a winning bid below the round's predicted
//! cutoff.

use crate::distributions::ValueDistribution;
use crate::equilibrium::{
    solve_thresholds, AuctionPrimitives, SolveResult, ThresholdSequence,
};
use crate::estimation::{
    AuctionObservation, AuctionParams, EstimationError, VALUE_HI, VALUE_LO,
};

/// Relative tolerance classifying a deal price as "at the reserve".
const RESERVE_REL_TOL: f64 = 1e-9;

/// Buyer value distribution induced by one primitives draw.
pub fn induced_distribution(
    params: &AuctionParams,
) -> Result<ValueDistribution, EstimationError> {
    Ok(ValueDistribution::truncated_log_normal(
        params.mu,
        params.sigma,
        VALUE_LO,
        VALUE_HI,
    )?)
}

/// Solves the equilibrium cutoffs implied by a primitives draw for one
/// observation's environment (its `N`, reserves, and the dataset `δ`).
pub fn solve_for_observation(
    params: &AuctionParams,
    obs: &AuctionObservation,
    delta: f64,
) -> Result<SolveResult, EstimationError> {
    let dist = induced_distribution(params)?;
    let prims = AuctionPrimitives::new(
        dist,
        obs.n,
        delta,
        0.0,
        params.entry_cost.max(1e-9),
        obs.reserves.clone(),
    )?;
    Ok(solve_thresholds(&prims)?)
}

fn binomial(n: u32, k: u32) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut acc = 1.0;
    for i in 0..k {
        acc = acc * f64::from(n - i) / f64::from(i + 1);
    }
    acc
}

/// Likelihood of an observed outcome given a value distribution and its
/// equilibrium cutoffs. Malformed observations are rejected; outcomes the
/// equilibrium rules out return 0.
pub fn outcome_likelihood(
    obs: &AuctionObservation,
    dist: &ValueDistribution,
    thr: &ThresholdSequence,
) -> Result<f64, EstimationError> {
    obs.validate()?;
    let rounds = obs.reserves.len();
    if thr.rounds() != rounds {
        return Err(EstimationError::MalformedObservation(format!(
            "thresholds cover {} rounds, observation has {rounds}",
            thr.rounds()
        )));
    }
    let n = obs.n;
    let ni = n as i32;
    match (obs.round_sold, obs.price) {
        // Every round failed: all N values sit below the final cutoff.
        (None, None) => Ok(dist.cdf(thr.terminal()).powi(ni)),
        (Some(t), Some(price)) => {
            let f_t = dist.cdf(thr.cutoff(t));
            let f_prev = dist.cdf(thr.cutoff(t - 1));
            let reserve = obs.reserves[t - 1];
            let at_reserve = (price - reserve).abs() <= RESERVE_REL_TOL * reserve.abs().max(1.0);
            if obs.entrants == 1 {
                // A lone entrant always buys at the reserve.
                if !at_reserve {
                    return Ok(0.0);
                }
                Ok(f64::from(n) * (f_prev - f_t) * f_t.powi(ni - 1))
            } else {
                // Competitive sale: price equals the second-highest entrant
                // value, which must lie inside the round's entry bracket.
                if at_reserve {
                    return Ok(0.0);
                }
                let f_p = dist.cdf(price);
                if f_p <= f_t || f_p > f_prev {
                    return Ok(0.0);
                }
                let ne = obs.entrants;
                let nef = f64::from(ne);
                Ok(binomial(n, ne)
                    * nef
                    * (nef - 1.0)
                    * f_t.powi((n - ne) as i32)
                    * dist.pdf(price)
                    * (f_p - f_t).powi(ne as i32 - 2)
                    * (f_prev - f_p))
            }
        }
        _ => Err(EstimationError::MalformedObservation(
            "price must accompany a sale".into(),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimation::Covariates;
    use crate::numeric::adaptive_quad;

    fn base_obs(reserves: Vec<f64>, n: u32) -> AuctionObservation {
        AuctionObservation {
            round_sold: None,
            price: None,
            entrants: 0,
            n,
            reserves,
            covariates: Covariates::new(90.0f64.ln(), 1.3, 0.9),
        }
    }

    fn fixture() -> (AuctionParams, AuctionObservation, ValueDistribution, ThresholdSequence)
    {
        let params = AuctionParams { mu: 4.3, sigma: 0.25, entry_cost: 0.8 };
        let obs = base_obs(vec![70.0, 56.0, 56.0], 8);
        let dist = induced_distribution(&params).unwrap();
        let thr = solve_for_observation(&params, &obs, 0.95)
            .unwrap()
            .thresholds;
        (params, obs, dist, thr)
    }

    #[test]
    fn failed_all_rounds_is_terminal_cdf_power() {
        let (_, obs, dist, thr) = fixture();
        let l = outcome_likelihood(&obs, &dist, &thr).unwrap();
        assert!((l - dist.cdf(thr.terminal()).powi(8)).abs() < 1e-15);
        assert!(l > 0.0 && l < 1.0);
    }

    #[test]
    fn price_below_round_cutoff_has_zero_likelihood() {
        let (_, mut obs, dist, thr) = fixture();
        obs.round_sold = Some(1);
        obs.entrants = 2;
        // Above the reserve but below the round-1 entry cutoff.
        obs.price = Some((thr.cutoff(1) - 1.0).max(obs.reserves[0] + 1.0));
        assert!(obs.price.unwrap() < thr.cutoff(1));
        let l = outcome_likelihood(&obs, &dist, &thr).unwrap();
        assert_eq!(l, 0.0);
    }

    #[test]
    fn lone_entrant_must_pay_reserve() {
        let (_, mut obs, dist, thr) = fixture();
        obs.round_sold = Some(2);
        obs.entrants = 1;
        obs.price = Some(obs.reserves[1]);
        let l = outcome_likelihood(&obs, &dist, &thr).unwrap();
        let f_t = dist.cdf(thr.cutoff(2));
        let f_prev = dist.cdf(thr.cutoff(1));
        assert!((l - 8.0 * (f_prev - f_t) * f_t.powi(7)).abs() < 1e-15);
        // A lone entrant above the reserve is impossible.
        obs.price = Some(obs.reserves[1] + 5.0);
        assert_eq!(outcome_likelihood(&obs, &dist, &thr).unwrap(), 0.0);
        // Several entrants exactly at the reserve likewise.
        obs.entrants = 3;
        obs.price = Some(obs.reserves[1]);
        assert_eq!(outcome_likelihood(&obs, &dist, &thr).unwrap(), 0.0);
    }

    #[test]
    fn malformed_observations_are_rejected() {
        let (_, mut obs, dist, thr) = fixture();
        obs.round_sold = Some(1);
        assert!(outcome_likelihood(&obs, &dist, &thr).is_err());
    }

    #[test]
    fn scenario_masses_telescope_to_one() {
        // L1 + Σ_t [L2(t) + Σ_{Ne>=2} ∫ L3 dp] = 1: each round's sale mass
        // is F(v*_{t-1})^N − F(v*_t)^N.
        let (_, obs, dist, thr) = fixture();
        let n = obs.n;
        let mut total = dist.cdf(thr.terminal()).powi(n as i32);
        for t in 1..=3usize {
            let mut sold = obs.clone();
            sold.round_sold = Some(t);
            sold.entrants = 1;
            sold.price = Some(obs.reserves[t - 1]);
            total += outcome_likelihood(&sold, &dist, &thr).unwrap();
            for ne in 2..=n {
                let mut comp = obs.clone();
                comp.round_sold = Some(t);
                comp.entrants = ne;
                let lo = thr.cutoff(t).max(obs.reserves[t - 1]);
                let hi = thr.cutoff(t - 1);
                if hi <= lo {
                    continue;
                }
                total += adaptive_quad(
                    &mut |p| {
                        let mut o = comp.clone();
                        o.price = Some(p);
                        outcome_likelihood(&o, &dist, &thr).unwrap()
                    },
                    lo,
                    hi,
                    1e-10,
                );
            }
        }
        assert!((total - 1.0).abs() < 1e-6, "total scenario mass {total}");
    }

    #[test]
    fn per_round_masses_match_cdf_power_differences() {
        let (_, obs, dist, thr) = fixture();
        let n = obs.n;
        for t in 1..=3usize {
            let f_t = dist.cdf(thr.cutoff(t));
            let f_prev = dist.cdf(thr.cutoff(t - 1));
            let mut mass = 0.0;
            let mut sold = obs.clone();
            sold.round_sold = Some(t);
            sold.entrants = 1;
            sold.price = Some(obs.reserves[t - 1]);
            mass += outcome_likelihood(&sold, &dist, &thr).unwrap();
            for ne in 2..=n {
                let mut comp = obs.clone();
                comp.round_sold = Some(t);
                comp.entrants = ne;
                let lo = thr.cutoff(t).max(obs.reserves[t - 1]);
                let hi = thr.cutoff(t - 1);
                if hi <= lo {
                    continue;
                }
                mass += adaptive_quad(
                    &mut |p| {
                        let mut o = comp.clone();
                        o.price = Some(p);
                        outcome_likelihood(&o, &dist, &thr).unwrap()
                    },
                    lo,
                    hi,
                    1e-11,
                );
            }
            let want = f_prev.powi(n as i32) - f_t.powi(n as i32);
            assert!(
                (mass - want).abs() < 1e-8 * (1.0 + want),
                "round {t}: {mass} vs {want}"
            );
        }
    }
}
