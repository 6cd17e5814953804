//! Closed-form auction outcomes for a cutoff sequence.
//!
//! Expected total surplus, seller revenue (in both the reserve-explicit form
//! and the substituted thresholds-only form, which agree whenever the
//! reserves are the ones induced by the cutoffs), failure probabilities, and
//! the single-round benchmarks: the efficient reserve `r = v_s`, the
//! profit-maximizing symmetric cutoff, and asymmetric duopoly equilibria.
//!
//! Revenue follows the seller-profit convention of the threshold formulas:
//! every sale term carries `−v_s`, so revenue is measured relative to the
//! seller keeping the item.

use serde::Serialize;

use crate::design::{self, Objective};
use crate::distributions::ValueDistribution;
use crate::equilibrium::{
    solve_thresholds, AuctionPrimitives, EquilibriumError, ThresholdSequence,
};
use crate::numeric::{adaptive_quad, brent_root};

/// Aggregate outcome of one auction environment under given cutoffs.
#[derive(Debug, Clone, Serialize)]
pub struct OutcomeSummary {
    pub total_surplus: f64,
    pub revenue: f64,
    pub failure_probability: f64,
    pub per_round_sale_probability: Vec<f64>,
    pub expected_entrants_per_round: Vec<f64>,
}

impl OutcomeSummary {
    /// CSV header matching [`OutcomeSummary::to_csv_row`].
    pub fn csv_header(rounds: usize) -> String {
        let mut cols = vec![
            "total_surplus".to_string(),
            "revenue".to_string(),
            "failure_probability".to_string(),
        ];
        for t in 1..=rounds {
            cols.push(format!("sale_prob_r{t}"));
        }
        for t in 1..=rounds {
            cols.push(format!("entrants_r{t}"));
        }
        cols.join(",")
    }

    /// One CSV row, 6 significant digits.
    pub fn to_csv_row(&self) -> String {
        let mut cols = vec![
            format!("{:.5e}", self.total_surplus),
            format!("{:.5e}", self.revenue),
            format!("{:.5e}", self.failure_probability),
        ];
        for p in &self.per_round_sale_probability {
            cols.push(format!("{p:.5e}"));
        }
        for e in &self.expected_entrants_per_round {
            cols.push(format!("{e:.5e}"));
        }
        cols.join(",")
    }
}

/// Expected total surplus of the recurring auction at cutoffs `thr`:
/// discounted allocative gains net of expected entry costs, plus the
/// seller's value of keeping the item.
pub fn expected_surplus(thr: &ThresholdSequence, prims: &AuctionPrimitives) -> f64 {
    let n = prims.n;
    let d = &prims.dist;
    let vs = prims.seller_value;
    let mut total = vs;
    for t in 1..=thr.rounds() {
        let (vt, vprev) = (thr.cutoff(t), thr.cutoff(t - 1));
        let f_t = d.cdf(vt);
        let f_prev = d.cdf(vprev);
        let alloc = d.partial_expectation_dg(n, vt, vprev)
            - vs * (f_prev.powi(n as i32) - f_t.powi(n as i32));
        let entry = f64::from(n)
            * f_prev.powi(n as i32 - 1)
            * (f_prev - f_t)
            * prims.entry_cost;
        total += prims.delta.powi(t as i32 - 1) * (alloc - entry);
    }
    total
}

/// Expected seller profit in the reserve-explicit form: competitive-price
/// terms when two or more bidders show up, reserve terms when exactly one
/// does. Uses `prims.reserves`.
pub fn expected_revenue(thr: &ThresholdSequence, prims: &AuctionPrimitives) -> f64 {
    let n = i32::try_from(prims.n).unwrap();
    let nf = f64::from(prims.n);
    let d = &prims.dist;
    let vs = prims.seller_value;
    let mut total = 0.0;
    for t in 1..=thr.rounds() {
        let (vt, vprev) = (thr.cutoff(t), thr.cutoff(t - 1));
        let f_t = d.cdf(vt);
        let f_prev = d.cdf(vprev);
        // N(N−1)·∫ (x−v_s) f (F_prev − F) F^(N−2) dx expressed through
        // partial expectations of orders N−1 and N.
        let pe_nm1 = d.partial_expectation_dg(prims.n - 1, vt, vprev);
        let pe_n = d.partial_expectation_dg(prims.n, vt, vprev);
        let d_gm1 = f_prev.powi(n - 1) - f_t.powi(n - 1);
        let d_gn = f_prev.powi(n) - f_t.powi(n);
        let competitive =
            nf * f_prev * (pe_nm1 - vs * d_gm1) - (nf - 1.0) * (pe_n - vs * d_gn);
        let lone = nf * (f_prev - f_t) * f_t.powi(n - 1) * (prims.reserves[t - 1] - vs);
        total += prims.delta.powi(t as i32 - 1) * (competitive + lone);
    }
    total
}

/// Expected seller profit in the thresholds-only form, valid when reserves
/// are the induced ones `r(v*)`. Agrees with [`expected_revenue`] to within
/// quadrature tolerance in that case.
pub fn expected_revenue_from_thresholds(
    thr: &ThresholdSequence,
    prims: &AuctionPrimitives,
) -> f64 {
    let n = i32::try_from(prims.n).unwrap();
    let nf = f64::from(prims.n);
    let d = &prims.dist;
    let vs = prims.seller_value;
    let delta = prims.delta;
    let rounds = thr.rounds();
    let v_term = thr.cutoff(rounds);
    let f_term = d.cdf(v_term);
    let g_term = f_term.powi(n - 1);
    let mut total =
        delta.powi(rounds as i32) * nf * (1.0 - f_term) * g_term * v_term;
    for t in 1..=rounds {
        let (vt, vprev) = (thr.cutoff(t), thr.cutoff(t - 1));
        let f_t = d.cdf(vt);
        let f_prev = d.cdf(vprev);
        let g_t = f_t.powi(n - 1);
        let g_prev = f_prev.powi(n - 1);
        // N·∫ x(1−F) dG = N·PE_{N−1} − (N−1)·PE_N.
        let pe_nm1 = d.partial_expectation_dg(prims.n - 1, vt, vprev);
        let pe_n = d.partial_expectation_dg(prims.n, vt, vprev);
        let inner = nf * pe_nm1 - (nf - 1.0) * pe_n
            + nf * (1.0 - delta) * (1.0 - f_t) * g_t * vt
            - nf * g_prev * (f_prev - f_t) * prims.entry_cost
            - vs * (f_prev.powi(n) - f_t.powi(n));
        total += delta.powi(t as i32 - 1) * inner;
    }
    total
}

/// Probability the item never sells: `F(v*_T)^N`.
pub fn failure_probability(thr: &ThresholdSequence, prims: &AuctionPrimitives) -> f64 {
    prims.dist.cdf(thr.terminal()).powi(prims.n as i32)
}

/// Per-round sale probabilities `F(v*_{t-1})^N − F(v*_t)^N`.
pub fn per_round_sale_probability(
    thr: &ThresholdSequence,
    prims: &AuctionPrimitives,
) -> Vec<f64> {
    let n = prims.n as i32;
    (1..=thr.rounds())
        .map(|t| prims.dist.cdf(thr.cutoff(t - 1)).powi(n) - prims.dist.cdf(thr.cutoff(t)).powi(n))
        .collect()
}

/// Expected number of entrants per round (unconditional).
pub fn expected_entrants_per_round(
    thr: &ThresholdSequence,
    prims: &AuctionPrimitives,
) -> Vec<f64> {
    let n = prims.n as i32;
    (1..=thr.rounds())
        .map(|t| {
            let f_prev = prims.dist.cdf(thr.cutoff(t - 1));
            let f_t = prims.dist.cdf(thr.cutoff(t));
            f64::from(prims.n) * f_prev.powi(n - 1) * (f_prev - f_t)
        })
        .collect()
}

/// Full outcome summary at cutoffs `thr` under `prims.reserves`.
pub fn summary(thr: &ThresholdSequence, prims: &AuctionPrimitives) -> OutcomeSummary {
    OutcomeSummary {
        total_surplus: expected_surplus(thr, prims),
        revenue: expected_revenue(thr, prims),
        failure_probability: failure_probability(thr, prims),
        per_round_sale_probability: per_round_sale_probability(thr, prims),
        expected_entrants_per_round: expected_entrants_per_round(thr, prims),
    }
}

/// Entry cutoff of a single-round auction at reserve `r`: the root of
/// `(v − r)·G(v) = K`, or the `v̄` corner when even the top type cannot
/// recoup the entry cost.
pub fn single_round_cutoff(prims: &AuctionPrimitives, reserve: f64) -> f64 {
    let (lo, hi) = prims.dist.support();
    let lower = reserve.max(lo);
    let profit = |v: f64| (v - reserve) * prims.g(v) - prims.entry_cost;
    if lower >= hi || profit(hi) < 0.0 {
        return hi;
    }
    if profit(lower) >= 0.0 {
        return lower;
    }
    brent_root(profit, lower, hi, 1e-12 * (1.0 + hi.abs()))
        .map(|r| r.x)
        .unwrap_or(hi)
}

/// Efficiency-maximizing single-round auction: reserve at the seller's value.
/// Returns the entry cutoff and the expected total surplus.
pub fn single_round_efficient(prims: &AuctionPrimitives) -> (f64, f64) {
    let cutoff = single_round_cutoff(prims, prims.seller_value);
    let thr = ThresholdSequence::new(prims.dist.hi(), &[cutoff]).expect("single cutoff");
    let one_round = prims
        .with_reserves(vec![prims.seller_value])
        .expect("reserve at seller value");
    (cutoff, expected_surplus(&thr, &one_round))
}

fn check_virtual_value_increasing(dist: &ValueDistribution) -> Result<(), EquilibriumError> {
    let mut prev = f64::NEG_INFINITY;
    for i in 1..=200 {
        let v = dist.quantile(i as f64 / 201.0);
        let psi = dist
            .virtual_value(v)
            .map_err(|_| EquilibriumError::NonMonotoneVirtualValue)?;
        if psi < prev - 1e-9 * (1.0 + psi.abs()) {
            return Err(EquilibriumError::NonMonotoneVirtualValue);
        }
        prev = psi;
    }
    Ok(())
}

/// Profit-maximizing single-round auction for a regular value distribution.
/// Returns `(cutoff, reserve, revenue)`: the cutoff solves
/// `K/G(v) = ψ(v) − v_s`, the reserve is the one inducing it, and revenue is
/// the single-round reduction of the thresholds-only profit formula.
pub fn single_round_revenue_optimal(
    prims: &AuctionPrimitives,
) -> Result<(f64, f64, f64), EquilibriumError> {
    check_virtual_value_increasing(&prims.dist)?;
    let (lo, hi) = prims.dist.support();
    let objective = |v: f64| {
        let psi = prims.dist.virtual_value(v).unwrap_or(f64::NEG_INFINITY);
        prims.entry_cost / prims.g(v) - (psi - prims.seller_value)
    };
    // Decreasing from +inf near v̲ to K − (v̄ − v_s) < 0 at v̄: scan quantile
    // grid for the sign change.
    let mut bracket = None;
    let mut prev: Option<(f64, f64)> = None;
    for i in 1..=512 {
        let v = prims.dist.quantile(i as f64 / 513.0);
        if v <= lo || v >= hi {
            continue;
        }
        let val = objective(v);
        if !val.is_finite() {
            prev = None;
            continue;
        }
        if let Some((pv, pval)) = prev {
            if pval.signum() != val.signum() {
                bracket = Some((pv, v));
                break;
            }
        }
        prev = Some((v, val));
    }
    let (a, b) = bracket.ok_or_else(|| {
        EquilibriumError::NoBracket("revenue-optimal cutoff not bracketed".into())
    })?;
    let cutoff = brent_root(objective, a, b, 1e-12 * (1.0 + hi.abs()))
        .ok_or_else(|| EquilibriumError::NoBracket("cutoff refinement failed".into()))?
        .x;
    let reserve = cutoff - prims.entry_cost / prims.g(cutoff);
    let thr = ThresholdSequence::new(hi, &[cutoff])?;
    let one_round = prims.with_reserves(vec![reserve])?;
    let revenue = expected_revenue_from_thresholds(&thr, &one_round);
    Ok((cutoff, reserve, revenue))
}

/// Cutoff of the asymmetric always-enter duopoly equilibrium: the rival of a
/// sure entrant participates iff their value exceeds the root of
/// `∫_v̲^c (c − x) dF(x) = K`.
pub fn asymmetric_always_enter_cutoff(
    prims: &AuctionPrimitives,
) -> Result<f64, EquilibriumError> {
    let (lo, hi) = prims.dist.support();
    let gain = |c: f64| {
        c * prims.dist.cdf(c) - prims.dist.partial_expectation_dg(1, lo, c) - prims.entry_cost
    };
    brent_root(gain, lo, hi, 1e-12 * (1.0 + hi.abs()))
        .map(|r| r.x)
        .ok_or_else(|| EquilibriumError::NoBracket("always-enter cutoff not bracketed".into()))
}

/// Expected surplus and seller profit of a single-round duopoly where buyer
/// 1 enters iff `v_1 > c_1` and buyer 2 iff `v_2 > c_2` (`c_1 ≤ c_2`), with
/// truthful bidding and the item going to the highest entrant.
///
/// Profit uses the payoff-equivalent formulation `E[ψ(winner)] − K·E[#entrants]`
/// (cutoff types keep exactly their entry cost), which reproduces pricing at
/// `max(second-highest entrant value, reserve)` under the cutoff-supporting
/// reserves.
pub fn asymmetric_duopoly_single_round(
    prims: &AuctionPrimitives,
    cutoffs: (f64, f64),
) -> Result<(f64, f64), EquilibriumError> {
    if prims.n != 2 {
        return Err(EquilibriumError::InvalidPrimitives(format!(
            "asymmetric duopoly needs n = 2, got {}",
            prims.n
        )));
    }
    let (c1, c2) = cutoffs;
    if c1 > c2 {
        return Err(EquilibriumError::InvalidThresholds(
            "asymmetric cutoffs must satisfy c1 <= c2".into(),
        ));
    }
    let d = &prims.dist;
    let (lo, hi) = d.support();
    let c1 = c1.clamp(lo, hi);
    let c2 = c2.clamp(lo, hi);
    let vs = prims.seller_value;
    // Winner-weighted expectation of h: buyer 1 wins on (c1, c2] when buyer 2
    // is absent and on (c2, v̄] when also beating an entered rival; buyer 2
    // symmetric above c2.
    let weighted = |h: &dyn Fn(f64) -> f64| {
        let low_seg = adaptive_quad(&mut |x| h(x) * d.pdf(x), c1, c2, 1e-11) * d.cdf(c2);
        let high_seg = adaptive_quad(&mut |x| h(x) * d.pdf(x) * d.cdf(x), c2, hi, 1e-11);
        low_seg + 2.0 * high_seg
    };
    let expected_entry = (1.0 - d.cdf(c1)) + (1.0 - d.cdf(c2));
    let surplus =
        weighted(&|x| x - vs) - prims.entry_cost * expected_entry + vs;
    let psi = |x: f64| d.virtual_value(x).unwrap_or(x);
    let profit = weighted(&|x| psi(x) - vs) - prims.entry_cost * expected_entry;
    Ok((surplus, profit))
}

/// Counterfactual experiment over one environment.
#[derive(Debug, Clone)]
pub enum CounterfactualMode {
    /// Drop trailing rounds: rows for `T' = 1..=T` with prefix reserves.
    TruncateHorizon,
    /// Re-design reserves per horizon for the given objective.
    OptimalReserves(Objective),
    /// Scale the entry cost, keeping observed reserves and the full horizon.
    EntryCostScale(Vec<f64>),
}

#[derive(Debug, Clone, Serialize)]
pub struct CounterfactualRow {
    pub label: String,
    pub summary: OutcomeSummary,
}

/// Re-solves the equilibrium per row and evaluates outcomes.
pub fn counterfactual_table(
    prims: &AuctionPrimitives,
    mode: &CounterfactualMode,
) -> Result<Vec<CounterfactualRow>, EquilibriumError> {
    let mut rows = Vec::new();
    match mode {
        CounterfactualMode::TruncateHorizon => {
            for horizon in 1..=prims.rounds() {
                let truncated = prims.with_reserves(prims.reserves[..horizon].to_vec())?;
                let sol = solve_thresholds(&truncated)?;
                rows.push(CounterfactualRow {
                    label: format!("T={horizon}"),
                    summary: summary(&sol.thresholds, &truncated),
                });
            }
        }
        CounterfactualMode::OptimalReserves(objective) => {
            for horizon in 1..=prims.rounds() {
                let shell = prims.with_reserves(vec![prims.seller_value; horizon])?;
                let result = design::design(&shell, *objective)?;
                let designed = prims.with_reserves(result.reserves.clone())?;
                rows.push(CounterfactualRow {
                    label: format!("T={horizon} ({objective})"),
                    summary: summary(&result.thresholds, &designed),
                });
            }
        }
        CounterfactualMode::EntryCostScale(scales) => {
            for &scale in scales {
                if !(scale.is_finite() && scale > 0.0) {
                    return Err(EquilibriumError::InvalidPrimitives(format!(
                        "entry-cost scale must be positive, got {scale}"
                    )));
                }
                let scaled = AuctionPrimitives::new(
                    prims.dist,
                    prims.n,
                    prims.delta,
                    prims.seller_value,
                    prims.entry_cost * scale,
                    prims.reserves.clone(),
                )?;
                let sol = solve_thresholds(&scaled)?;
                rows.push(CounterfactualRow {
                    label: format!("K x {scale}"),
                    summary: summary(&sol.thresholds, &scaled),
                });
            }
        }
    }
    Ok(rows)
}
