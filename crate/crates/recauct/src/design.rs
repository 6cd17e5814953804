//! Optimal reserve-price sequences.
//!
//! Rather than searching over reserves directly, the designer optimizes the
//! entry cutoffs and recovers the reserves that induce them. The first-order
//! conditions couple adjacent cutoffs only, and for `t < T` they are linear
//! in `F(v*_{t+1})`: given a guess for `v*_1` the whole sequence unrolls in
//! closed form per step, the terminal condition supplies a shooting
//! residual, and the residual's sign change in `v*_1` is bracketed on a grid
//! and bisected.
//!
//! The profit-maximizing system is the efficiency system with the cutoff
//! replaced by its virtual value wherever it enters as a payoff.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::equilibrium::{
    reserves_from_thresholds, AuctionPrimitives, EquilibriumError, ThresholdSequence,
};
use crate::numeric::bisect_root;
use crate::outcomes;

const GRID: usize = 512;
const XTOL: f64 = 1e-10;
const FOC_TOL: f64 = 1e-8;

/// Design objective: expected total surplus or seller profit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Efficiency,
    Revenue,
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Objective::Efficiency => write!(f, "efficiency"),
            Objective::Revenue => write!(f, "revenue"),
        }
    }
}

/// Solved design: optimal cutoffs, inducing reserves, objective value, and
/// the first-order-condition residuals at the optimum.
#[derive(Debug, Clone, Serialize)]
pub struct DesignResult {
    pub objective: Objective,
    pub thresholds: ThresholdSequence,
    pub reserves: Vec<f64>,
    pub objective_value: f64,
    pub foc_residuals: Vec<f64>,
}

/// Payoff transform entering the FOC: the cutoff itself for efficiency, its
/// virtual value for revenue.
fn payoff_term(prims: &AuctionPrimitives, objective: Objective, v: f64) -> f64 {
    match objective {
        Objective::Efficiency => v - prims.seller_value,
        Objective::Revenue => prims
            .dist
            .virtual_value(v)
            .map(|psi| psi - prims.seller_value)
            .unwrap_or(f64::NEG_INFINITY),
    }
}

/// First-order condition residual at round `t` (value units).
/// `f_next` is `F(v*_{t+1})` and must be `None` exactly at `t = T`.
pub fn foc_residual(
    prims: &AuctionPrimitives,
    objective: Objective,
    f_prev: f64,
    v_t: f64,
    f_next: Option<f64>,
) -> f64 {
    let nf = f64::from(prims.n);
    let k = prims.entry_cost;
    let f_t = prims.dist.cdf(v_t);
    let ratio = (f_prev / f_t).powi(prims.n as i32 - 1);
    match f_next {
        Some(f_next) => {
            (ratio - prims.delta * (nf * f_t - (nf - 1.0) * f_next) / f_t) * k
                - (1.0 - prims.delta) * payoff_term(prims, objective, v_t)
        }
        None => ratio * k - payoff_term(prims, objective, v_t),
    }
}

/// Residuals of the full system at a candidate sequence.
pub fn foc_residuals(
    prims: &AuctionPrimitives,
    thr: &ThresholdSequence,
    objective: Objective,
) -> Vec<f64> {
    let rounds = thr.rounds();
    (1..=rounds)
        .map(|t| {
            let f_prev = prims.dist.cdf(thr.cutoff(t - 1));
            let f_next = if t < rounds {
                Some(prims.dist.cdf(thr.cutoff(t + 1)))
            } else {
                None
            };
            foc_residual(prims, objective, f_prev, thr.cutoff(t), f_next)
        })
        .collect()
}

struct DesignUnroll {
    levels: Vec<f64>,
    terminal_residual: f64,
    clamped: bool,
}

/// Unrolls the cutoff sequence from a first-round guess. The `t < T` branch
/// is solved for `F(v*_{t+1})`; an unroll leaving `[0, F(v*_t)]` is clamped
/// and the clamp recorded, so the terminal residual stays continuous for
/// bracketing while clamped candidates are later rejected.
fn unroll(prims: &AuctionPrimitives, objective: Objective, v1: f64) -> DesignUnroll {
    let rounds = prims.rounds();
    let nf = f64::from(prims.n);
    let k = prims.entry_cost;
    let mut levels = vec![prims.dist.hi(), v1];
    let mut clamped = false;
    for t in 1..rounds {
        let f_prev = prims.dist.cdf(levels[t - 1]);
        let v_t = levels[t];
        let f_t = prims.dist.cdf(v_t);
        let ratio = (f_prev / f_t).powi(prims.n as i32 - 1);
        let rhs = ratio * k - (1.0 - prims.delta) * payoff_term(prims, objective, v_t);
        // (ratio − δ(N·F_t − (N−1)F_next)/F_t)K = (1−δ)·payoff, solved for F_next.
        let mut f_next = (nf * f_t - f_t * rhs / (prims.delta * k)) / (nf - 1.0);
        if !f_next.is_finite() {
            return DesignUnroll { levels, terminal_residual: f64::NAN, clamped: true };
        }
        if f_next < 0.0 {
            f_next = 0.0;
            clamped = true;
        } else if f_next > f_t {
            f_next = f_t;
            clamped = true;
        }
        levels.push(prims.dist.quantile(f_next));
    }
    let f_prev = prims.dist.cdf(levels[rounds - 1]);
    let terminal_residual =
        foc_residual(prims, objective, f_prev, levels[rounds], None);
    DesignUnroll { levels, terminal_residual, clamped }
}

fn shooting_grid(prims: &AuctionPrimitives) -> Vec<f64> {
    let (lo, hi) = prims.dist.support();
    let span = hi - lo;
    let mut grid: Vec<f64> = (0..GRID)
        .map(|i| prims.dist.quantile((i as f64 + 0.5) / GRID as f64))
        .collect();
    let q_hi = prims.dist.quantile(1.0 - 0.5 / GRID as f64);
    for i in 0..=64 {
        grid.push(q_hi + (hi - 1e-9 * span - q_hi) * i as f64 / 64.0);
    }
    grid.retain(|v| v.is_finite() && *v > lo && *v < hi);
    grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
    grid.dedup();
    grid
}

/// Solves the design FOC system for the given objective over the horizon
/// implied by `prims.rounds()`. The reserve sequence already in `prims` is
/// ignored; only the environment (distribution, N, δ, v_s, K) matters.
pub fn design(
    prims: &AuctionPrimitives,
    objective: Objective,
) -> Result<DesignResult, EquilibriumError> {
    if objective == Objective::Revenue {
        check_regularity(prims)?;
    }
    if prims.n == 1 {
        return single_buyer_design(prims, objective);
    }
    let (_, hi) = prims.dist.support();
    let rounds = prims.rounds();

    let residual_at = |v1: f64| unroll(prims, objective, v1).terminal_residual;
    let mut roots = Vec::new();
    let mut prev: Option<(f64, f64)> = None;
    for v1 in shooting_grid(prims) {
        let r = residual_at(v1);
        if !r.is_finite() {
            prev = None;
            continue;
        }
        if r == 0.0 {
            roots.push(v1);
        } else if let Some((pv, pr)) = prev {
            if pr.signum() != r.signum() {
                if let Some(root) = bisect_root(residual_at, pv, v1, XTOL) {
                    roots.push(root.x);
                }
            }
        }
        prev = Some((v1, r));
    }

    let scale = 1.0 + hi.abs();
    let mut best: Option<DesignResult> = None;
    for root in roots {
        let un = unroll(prims, objective, root);
        if un.clamped {
            continue;
        }
        let thr = match ThresholdSequence::from_levels(un.levels) {
            Ok(t) => t,
            Err(_) => continue,
        };
        // Strict interleaving: consecutive cutoffs must be separated.
        if thr
            .levels()
            .windows(2)
            .any(|w| rounds > 1 && w[0] - w[1] <= 1e-12 * scale)
        {
            continue;
        }
        let residuals = foc_residuals(prims, &thr, objective);
        if residuals.iter().any(|r| r.abs() > FOC_TOL * scale) {
            continue;
        }
        let value = objective_value(prims, &thr, objective);
        if best.as_ref().map_or(true, |b| value > b.objective_value) {
            let reserves = reserves_from_thresholds(&thr, prims)?;
            best = Some(DesignResult {
                objective,
                thresholds: thr,
                reserves,
                objective_value: value,
                foc_residuals: residuals,
            });
        }
    }
    best.ok_or_else(|| {
        EquilibriumError::NoBracket(format!(
            "design shooting found no verified optimum ({objective}, T={rounds})"
        ))
    })
}

/// Efficiency-maximizing design over the horizon in `prims`.
pub fn efficient_design(prims: &AuctionPrimitives) -> Result<DesignResult, EquilibriumError> {
    design(prims, Objective::Efficiency)
}

/// Profit-maximizing design over the horizon in `prims`. Requires an
/// increasing virtual value over the search region.
pub fn revenue_design(prims: &AuctionPrimitives) -> Result<DesignResult, EquilibriumError> {
    design(prims, Objective::Revenue)
}

fn objective_value(
    prims: &AuctionPrimitives,
    thr: &ThresholdSequence,
    objective: Objective,
) -> f64 {
    match objective {
        Objective::Efficiency => outcomes::expected_surplus(thr, prims),
        Objective::Revenue => outcomes::expected_revenue_from_thresholds(thr, prims),
    }
}

fn check_regularity(prims: &AuctionPrimitives) -> Result<(), EquilibriumError> {
    let mut prev = f64::NEG_INFINITY;
    for i in 1..=200 {
        let v = prims.dist.quantile(i as f64 / 201.0);
        let psi = prims
            .dist
            .virtual_value(v)
            .map_err(|_| EquilibriumError::NonMonotoneVirtualValue)?;
        if psi < prev - 1e-9 * (1.0 + psi.abs()) {
            return Err(EquilibriumError::NonMonotoneVirtualValue);
        }
        prev = psi;
    }
    Ok(())
}

/// With one buyer every round shares the same optimal cutoff: the value (or
/// virtual value) that nets the seller exactly the entry cost.
fn single_buyer_design(
    prims: &AuctionPrimitives,
    objective: Objective,
) -> Result<DesignResult, EquilibriumError> {
    let (lo, hi) = prims.dist.support();
    let target = |v: f64| payoff_term(prims, objective, v) - prims.entry_cost;
    let cutoff = if target(lo) >= 0.0 {
        lo
    } else if target(hi) <= 0.0 {
        hi
    } else {
        bisect_root(target, lo, hi, 1e-12 * (1.0 + hi.abs()))
            .map(|r| r.x)
            .unwrap_or(hi)
    };
    let thr = ThresholdSequence::new(hi, &vec![cutoff; prims.rounds()])?;
    let reserves = reserves_from_thresholds(&thr, prims)?;
    let residuals = foc_residuals(prims, &thr, objective);
    let objective_value = objective_value(prims, &thr, objective);
    Ok(DesignResult { objective, thresholds: thr, reserves, objective_value, foc_residuals: residuals })
}

/// Marginal trade-off of delaying the round-`t` cutoff type by one round.
#[derive(Debug, Clone, Serialize)]
pub struct TradeoffRow {
    pub round: usize,
    /// Entry-cost saving from entering only after a failed round.
    pub entry_cost_saving: f64,
    /// Discounting loss from allocating one period later.
    pub delayed_allocation_loss: f64,
    /// Cost of rivals' extra entry in round `t+1`.
    pub next_round_entry_loss: f64,
}

/// Per-round gain/loss decomposition of the efficiency FOC for `t < T`.
/// At an efficient optimum the saving balances the two losses exactly.
pub fn design_tradeoff_report(
    prims: &AuctionPrimitives,
    thr: &ThresholdSequence,
) -> Vec<TradeoffRow> {
    let nf = f64::from(prims.n);
    let k = prims.entry_cost;
    let d = &prims.dist;
    (1..thr.rounds())
        .map(|t| {
            let f_prev = d.cdf(thr.cutoff(t - 1));
            let f_t = d.cdf(thr.cutoff(t));
            let f_next = d.cdf(thr.cutoff(t + 1));
            let ratio = (f_t / f_prev).powi(prims.n as i32 - 1);
            TradeoffRow {
                round: t,
                entry_cost_saving: (1.0 - prims.delta * ratio) * k,
                delayed_allocation_loss: (1.0 - prims.delta)
                    * ratio
                    * (thr.cutoff(t) - prims.seller_value),
                next_round_entry_loss: prims.delta * ratio * (nf - 1.0) * (f_t - f_next) / f_t
                    * k,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::ValueDistribution;
    use crate::equilibrium::solve_thresholds;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn shell(dist: ValueDistribution, n: u32, k: f64, rounds: usize) -> AuctionPrimitives {
        AuctionPrimitives::new(dist, n, 0.97, 0.0, k, vec![0.0; rounds]).unwrap()
    }

    fn example1(rounds: usize) -> AuctionPrimitives {
        shell(ValueDistribution::uniform(0.0, 1.0).unwrap(), 2, 0.2, rounds)
    }

    fn example2(n: u32, rounds: usize) -> AuctionPrimitives {
        shell(ValueDistribution::uniform(1.0, 2.0).unwrap(), n, 0.3, rounds)
    }

    #[test]
    fn efficient_design_example1_reserves_and_surplus() {
        let res = efficient_design(&example1(2)).unwrap();
        assert!((res.reserves[0] - 0.14).abs() < 0.005, "r1 = {}", res.reserves[0]);
        assert!(res.reserves[1].abs() < 1e-6, "r2 = {}", res.reserves[1]);
        assert!((res.objective_value - 0.42).abs() < 0.005, "TS = {}", res.objective_value);
        assert!(res.foc_residuals.iter().all(|r| r.abs() < 1e-8));
        // Designed thresholds form an equilibrium under the recovered reserves.
        let prims = example1(2).with_reserves(res.reserves.clone()).unwrap();
        let sol = solve_thresholds(&prims).unwrap();
        for (a, b) in sol.thresholds.per_round().iter().zip(res.thresholds.per_round()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn revenue_design_example1_matches_printed_reserves() {
        let res = revenue_design(&example1(2)).unwrap();
        assert!((res.reserves[0] - 0.4).abs() < 0.01, "r1 = {}", res.reserves[0]);
        assert!((res.reserves[1] - 0.37).abs() < 0.01, "r2 = {}", res.reserves[1]);
        assert!((res.objective_value - 0.26).abs() < 0.005, "R = {}", res.objective_value);
    }

    #[test]
    fn single_round_design_reduces_to_benchmarks() {
        // T=1 efficiency: reserve v_s, cutoff solving (v − v_s)G(v) = K.
        let res = efficient_design(&example1(1)).unwrap();
        assert!((res.reserves[0] - 0.0).abs() < 1e-8);
        assert!((res.thresholds.cutoff(1) - 0.2f64.sqrt()).abs() < 1e-8);
        // T=1 revenue: matches the single-round profit benchmark.
        let res = revenue_design(&example1(1)).unwrap();
        let (cutoff, reserve, revenue) =
            crate::outcomes::single_round_revenue_optimal(&example1(1)).unwrap();
        assert!((res.thresholds.cutoff(1) - cutoff).abs() < 1e-7);
        assert!((res.reserves[0] - reserve).abs() < 1e-7);
        assert!((res.objective_value - revenue).abs() < 1e-9);
    }

    #[test]
    fn example2_designed_surplus_levels() {
        let t2 = efficient_design(&example2(2, 2)).unwrap();
        assert!((t2.objective_value - 1.23).abs() < 0.01, "TS2 = {}", t2.objective_value);
        let t3 = efficient_design(&example2(2, 3)).unwrap();
        assert!((t3.objective_value - 1.26).abs() < 0.01, "TS3 = {}", t3.objective_value);
        // Strict interleaving of the designed cutoffs.
        for res in [&t2, &t3] {
            for w in res.thresholds.levels().windows(2) {
                assert!(w[0] > w[1] + 1e-9);
            }
        }
    }

    #[test]
    fn footnote_recurring_revenue_designs() {
        // Power(4), K=0.4, δ=0.97, T=2: revenue 0.2935.
        let p4 = shell(ValueDistribution::power(4.0).unwrap(), 2, 0.4, 2);
        let res = revenue_design(&p4).unwrap();
        assert!((res.objective_value - 0.2935).abs() < 0.002, "R = {}", res.objective_value);
        // Uniform(0.6, 1), K=0.2, δ=0.97, T=2: revenue 0.467.
        let u = shell(ValueDistribution::uniform(0.6, 1.0).unwrap(), 2, 0.2, 2);
        let res = revenue_design(&u).unwrap();
        assert!((res.objective_value - 0.467).abs() < 0.002, "R = {}", res.objective_value);
    }

    #[test]
    fn revenue_foc_is_efficiency_foc_at_virtual_value() {
        // rev_residual(v) − eff_residual(v) collapses to the virtual-value
        // shift, (1−δ)(ψ(v) − v) for t < T and (ψ(v) − v) at T.
        let prims = example1(2);
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..200 {
            let f_prev: f64 = 0.3 + 0.7 * rng.random::<f64>();
            let v: f64 = 0.2 + 0.7 * rng.random::<f64>();
            let f_next = prims.dist.cdf(v) * rng.random::<f64>();
            let psi = prims.dist.virtual_value(v).unwrap();
            let eff = foc_residual(&prims, Objective::Efficiency, f_prev, v, Some(f_next));
            let rev = foc_residual(&prims, Objective::Revenue, f_prev, v, Some(f_next));
            assert!((rev - eff - (1.0 - prims.delta) * (v - psi)).abs() < 1e-12);
            let eff_t = foc_residual(&prims, Objective::Efficiency, f_prev, v, None);
            let rev_t = foc_residual(&prims, Objective::Revenue, f_prev, v, None);
            assert!((rev_t - eff_t - (v - psi)).abs() < 1e-12);
        }
    }

    #[test]
    fn perturbing_optimal_thresholds_lowers_objective() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..20 {
            let n = rng.random_range(2..=5);
            let k = 0.05 + 0.2 * rng.random::<f64>();
            let prims = shell(ValueDistribution::uniform(0.0, 1.0).unwrap(), n, k, 2);
            for objective in [Objective::Efficiency, Objective::Revenue] {
                let res = design(&prims, objective).unwrap();
                let base = res.objective_value;
                for t in 1..=2usize {
                    for step in [-1e-3, 1e-3] {
                        let mut levels = res.thresholds.levels().to_vec();
                        levels[t] = (levels[t] + step).clamp(0.0, 1.0);
                        // Re-project onto monotonicity.
                        for i in 1..levels.len() {
                            levels[i] = levels[i].min(levels[i - 1]);
                        }
                        let thr = ThresholdSequence::from_levels(levels).unwrap();
                        let value = objective_value(&prims, &thr, objective);
                        assert!(
                            value <= base + 1e-10,
                            "{objective} improved by perturbing t={t}: {value} > {base}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn tradeoff_report_balances_at_efficient_optimum() {
        let res = efficient_design(&example1(2)).unwrap();
        let rows = design_tradeoff_report(&example1(2), &res.thresholds);
        // One row per t < T; no terminal row.
        assert_eq!(rows.len(), 1);
        let gap = rows[0].entry_cost_saving
            - rows[0].delayed_allocation_loss
            - rows[0].next_round_entry_loss;
        assert!(gap.abs() < 1e-8, "gap = {gap}");
        // Delayed-allocation loss carries the (1−δ) factor.
        let mut lowdelta = example1(2);
        lowdelta.delta = 0.5;
        let res2 = efficient_design(&lowdelta).unwrap();
        let rows2 = design_tradeoff_report(&lowdelta, &res2.thresholds);
        let ratio2 = (lowdelta.dist.cdf(res2.thresholds.cutoff(1))
            / lowdelta.dist.cdf(res2.thresholds.cutoff(0)))
        .powi(1);
        let expect = (1.0 - 0.5) * ratio2 * res2.thresholds.cutoff(1);
        assert!((rows2[0].delayed_allocation_loss - expect).abs() < 1e-12);
    }

    #[test]
    fn revenue_design_flags_non_monotone_virtual_value() {
        // F(v) = v^0.3 on [0,1] has a decreasing virtual value region.
        let d = ValueDistribution::power(0.3).unwrap();
        let prims = AuctionPrimitives::new(d, 2, 0.97, 0.0, 0.05, vec![0.0, 0.0]).unwrap();
        assert!(matches!(
            revenue_design(&prims),
            Err(EquilibriumError::NonMonotoneVirtualValue)
        ));
    }

    #[test]
    fn single_buyer_design_is_flat_at_cost_recovery() {
        let prims = AuctionPrimitives::new(
            ValueDistribution::uniform(0.0, 1.0).unwrap(),
            1,
            0.95,
            0.1,
            0.2,
            vec![0.0, 0.0],
        )
        .unwrap();
        let res = efficient_design(&prims).unwrap();
        for t in 1..=2 {
            assert!((res.thresholds.cutoff(t) - 0.3).abs() < 1e-9);
        }
    }
}
