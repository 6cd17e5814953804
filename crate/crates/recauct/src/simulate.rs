//! Monte Carlo play-out of the recurring auction under cutoff strategies.
//!
//! Serves as the independent oracle for the closed-form outcome formulas and
//! as the engine behind the synthetic-data generator. Draws are deterministic
//! given a seed and independent of the worker count: each draw gets its own
//! substream keyed by `(seed, index)` and aggregation runs over fixed-size
//! chunks combined in index order.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::equilibrium::{AuctionPrimitives, ThresholdSequence};

/// Aggregation chunk; fixed so results do not depend on thread scheduling.
const CHUNK: u64 = 4096;

/// Realized path of one simulated auction.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuctionOutcome {
    pub sold: bool,
    /// Transaction round, 1-based; `None` if the item never sells.
    pub round: Option<usize>,
    pub price: Option<f64>,
    /// Entrant counts for every round; zeros after the transaction round
    /// (those auctions never take place).
    pub entrants_per_round: Vec<u32>,
    pub winner_value: Option<f64>,
    pub discounted_surplus_sample: f64,
    pub discounted_revenue_sample: f64,
}

/// SplitMix64-mixed per-draw substream; schedule-independent.
pub fn substream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut z = seed ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^= z >> 31;
    ChaCha8Rng::seed_from_u64(z)
}

/// Plays out the auction for explicit buyer values. Entry in round `t`
/// requires a value strictly above `v*_t` (and at most `v*_{t-1}`, or the
/// buyer would have entered earlier); a lone entrant buys at the reserve,
/// otherwise the price is the second-highest entrant value.
pub fn simulate_with_values(
    values: &[f64],
    thr: &ThresholdSequence,
    prims: &AuctionPrimitives,
) -> AuctionOutcome {
    let rounds = prims.rounds();
    let mut entrants_per_round = vec![0u32; rounds];
    let mut cost = 0.0;
    for t in 1..=rounds {
        let lo = thr.cutoff(t);
        let hi = thr.cutoff(t - 1);
        let mut best = f64::NEG_INFINITY;
        let mut second = f64::NEG_INFINITY;
        let mut count = 0u32;
        for &v in values {
            if v > lo && v <= hi {
                count += 1;
                if v > best {
                    second = best;
                    best = v;
                } else if v > second {
                    second = v;
                }
            }
        }
        entrants_per_round[t - 1] = count;
        cost += prims.delta.powi(t as i32 - 1) * f64::from(count) * prims.entry_cost;
        if count == 0 {
            continue;
        }
        let reserve = prims.reserves[t - 1];
        let price = if count == 1 { reserve } else { second.max(reserve) };
        let disc = prims.delta.powi(t as i32 - 1);
        return AuctionOutcome {
            sold: true,
            round: Some(t),
            price: Some(price),
            entrants_per_round,
            winner_value: Some(best),
            discounted_surplus_sample: disc * (best - prims.seller_value) - cost
                + prims.seller_value,
            discounted_revenue_sample: disc * (price - prims.seller_value),
        };
    }
    AuctionOutcome {
        sold: false,
        round: None,
        price: None,
        entrants_per_round,
        winner_value: None,
        discounted_surplus_sample: prims.seller_value - cost,
        discounted_revenue_sample: 0.0,
    }
}

/// Draws `N` i.i.d. buyer values and plays out the auction.
pub fn simulate_auction<R: Rng + ?Sized>(
    thr: &ThresholdSequence,
    prims: &AuctionPrimitives,
    rng: &mut R,
) -> AuctionOutcome {
    let values: Vec<f64> = (0..prims.n).map(|_| prims.dist.sample(rng)).collect();
    simulate_with_values(&values, thr, prims)
}

/// Sample means with standard errors over `n_draws` simulated auctions.
#[derive(Debug, Clone, Serialize)]
pub struct MonteCarloSummary {
    pub n_draws: u64,
    pub mean_surplus: f64,
    pub se_surplus: f64,
    pub mean_revenue: f64,
    pub se_revenue: f64,
    pub failure_rate: f64,
    pub se_failure: f64,
    pub per_round_sale_rate: Vec<f64>,
}

#[derive(Clone)]
struct ChunkStats {
    n: u64,
    sum_s: f64,
    sumsq_s: f64,
    sum_r: f64,
    sumsq_r: f64,
    failures: u64,
    sold_by_round: Vec<u64>,
}

impl ChunkStats {
    fn zero(rounds: usize) -> Self {
        Self {
            n: 0,
            sum_s: 0.0,
            sumsq_s: 0.0,
            sum_r: 0.0,
            sumsq_r: 0.0,
            failures: 0,
            sold_by_round: vec![0; rounds],
        }
    }

    fn absorb(&mut self, o: &AuctionOutcome) {
        self.n += 1;
        self.sum_s += o.discounted_surplus_sample;
        self.sumsq_s += o.discounted_surplus_sample * o.discounted_surplus_sample;
        self.sum_r += o.discounted_revenue_sample;
        self.sumsq_r += o.discounted_revenue_sample * o.discounted_revenue_sample;
        match o.round {
            Some(t) => self.sold_by_round[t - 1] += 1,
            None => self.failures += 1,
        }
    }

    fn merge(&mut self, other: &ChunkStats) {
        self.n += other.n;
        self.sum_s += other.sum_s;
        self.sumsq_s += other.sumsq_s;
        self.sum_r += other.sum_r;
        self.sumsq_r += other.sumsq_r;
        self.failures += other.failures;
        for (a, b) in self.sold_by_round.iter_mut().zip(&other.sold_by_round) {
            *a += b;
        }
    }
}

/// Runs `n_draws` independent simulated auctions in parallel and aggregates
/// means and standard errors. Deterministic given `seed`, bit-identical
/// across worker counts.
pub fn estimate_outcomes(
    thr: &ThresholdSequence,
    prims: &AuctionPrimitives,
    n_draws: u64,
    seed: u64,
) -> MonteCarloSummary {
    let rounds = prims.rounds();
    let n_chunks = n_draws.div_ceil(CHUNK);
    let mut chunks: Vec<ChunkStats> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let lo = c * CHUNK;
            let hi = ((c + 1) * CHUNK).min(n_draws);
            let mut stats = ChunkStats::zero(rounds);
            let mut values = vec![0.0f64; prims.n as usize];
            for i in lo..hi {
                let mut rng = substream(seed, i);
                for v in values.iter_mut() {
                    *v = prims.dist.sample(&mut rng);
                }
                stats.absorb(&simulate_with_values(&values, thr, prims));
            }
            stats
        })
        .collect();
    // Pairwise order-respecting reduction keeps floating-point sums stable
    // and independent of the chunk count partition.
    while chunks.len() > 1 {
        let mut next = Vec::with_capacity(chunks.len().div_ceil(2));
        for pair in chunks.chunks(2) {
            let mut merged = pair[0].clone();
            if let Some(second) = pair.get(1) {
                merged.merge(second);
            }
            next.push(merged);
        }
        chunks = next;
    }
    let total = chunks
        .pop()
        .unwrap_or_else(|| ChunkStats::zero(rounds));
    let nf = total.n.max(1) as f64;
    let mean_s = total.sum_s / nf;
    let mean_r = total.sum_r / nf;
    let var_s = (total.sumsq_s / nf - mean_s * mean_s).max(0.0);
    let var_r = (total.sumsq_r / nf - mean_r * mean_r).max(0.0);
    let fail = total.failures as f64 / nf;
    MonteCarloSummary {
        n_draws: total.n,
        mean_surplus: mean_s,
        se_surplus: (var_s / nf).sqrt(),
        mean_revenue: mean_r,
        se_revenue: (var_r / nf).sqrt(),
        failure_rate: fail,
        se_failure: (fail * (1.0 - fail) / nf).sqrt(),
        per_round_sale_rate: total
            .sold_by_round
            .iter()
            .map(|&s| s as f64 / nf)
            .collect(),
    }
}
