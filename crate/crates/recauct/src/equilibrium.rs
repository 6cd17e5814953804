//! Symmetric entry equilibrium of the recurring auction.
//!
//! Buyers follow cutoff strategies: in round `t` a buyer enters iff their
//! value exceeds `v*_t`, and the cutoffs are pinned down by marginal types
//! being indifferent between entering now and waiting one round. The solver
//! uses forward shooting: guess `v*_1`, unroll each later cutoff from the
//! adjacent-round indifference condition by a bracketed scalar root-find,
//! and drive the terminal indifference residual to zero by bracketing its
//! sign change on a quantile grid and bisecting.
//!
//! The inverse map — recovering the reserve sequence that induces a given
//! weakly decreasing cutoff sequence — is closed-form and implemented in
//! [`reserves_from_thresholds`].

use serde::Serialize;
use thiserror::Error;

use crate::distributions::ValueDistribution;
use crate::numeric::bisect_root;

/// Shooting grid for bracketing the terminal residual in `v*_1`.
const SHOOT_GRID: usize = 512;
/// Bisection tolerance on the shooting variable.
const SHOOT_XTOL: f64 = 1e-10;
/// Indifference residuals above this (value units) invalidate a candidate.
const RESID_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum EquilibriumError {
    #[error("invalid primitives: {0}")]
    InvalidPrimitives(String),
    #[error("invalid threshold sequence: {0}")]
    InvalidThresholds(String),
    #[error("round {t} out of range 1..={rounds}")]
    RoundOutOfRange { t: usize, rounds: usize },
    #[error("shooting failed to bracket an equilibrium: {0}")]
    NoBracket(String),
    #[error("zero buyer mass below threshold in round {t}; reserve undefined")]
    ZeroMass { t: usize },
    #[error("virtual value is not increasing over the search region")]
    NonMonotoneVirtualValue,
}

/// One auction environment: value law, buyer count, horizon, discounting,
/// seller value, entry cost, and the announced reserve sequence. The number
/// of rounds `T` is the length of `reserves`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuctionPrimitives {
    pub dist: ValueDistribution,
    pub n: u32,
    pub delta: f64,
    pub seller_value: f64,
    pub entry_cost: f64,
    pub reserves: Vec<f64>,
}

impl AuctionPrimitives {
    pub fn new(
        dist: ValueDistribution,
        n: u32,
        delta: f64,
        seller_value: f64,
        entry_cost: f64,
        reserves: Vec<f64>,
    ) -> Result<Self, EquilibriumError> {
        if n < 1 {
            return Err(EquilibriumError::InvalidPrimitives("need n >= 1".into()));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(EquilibriumError::InvalidPrimitives(format!(
                "discount factor must lie in (0, 1), got {delta}"
            )));
        }
        if !(entry_cost > 0.0 && entry_cost.is_finite()) {
            return Err(EquilibriumError::InvalidPrimitives(format!(
                "entry cost must be positive, got {entry_cost}"
            )));
        }
        if !(seller_value < dist.hi() - entry_cost) {
            return Err(EquilibriumError::InvalidPrimitives(format!(
                "need seller value < v_bar - K, got v_s={seller_value}, v_bar={}, K={entry_cost}",
                dist.hi()
            )));
        }
        if reserves.is_empty() || reserves.iter().any(|r| !r.is_finite()) {
            return Err(EquilibriumError::InvalidPrimitives(
                "reserve sequence must be non-empty and finite".into(),
            ));
        }
        Ok(Self { dist, n, delta, seller_value, entry_cost, reserves })
    }

    /// Number of auction rounds `T`.
    pub fn rounds(&self) -> usize {
        self.reserves.len()
    }

    /// Rival count `N − 1` entering the order-statistic CDF.
    pub fn rivals(&self) -> u32 {
        self.n - 1
    }

    /// `G(v) = F(v)^(N-1)`, the CDF of the highest rival value.
    pub fn g(&self, v: f64) -> f64 {
        self.dist.order_stat_cdf(self.rivals(), v)
    }

    /// Same primitives with a different reserve sequence.
    pub fn with_reserves(&self, reserves: Vec<f64>) -> Result<Self, EquilibriumError> {
        Self::new(self.dist, self.n, self.delta, self.seller_value, self.entry_cost, reserves)
    }
}

/// Entry cutoffs `v*_0 .. v*_T` with the convention `v*_0 = v̄`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdSequence {
    v: Vec<f64>,
}

impl ThresholdSequence {
    /// Builds from the full level vector including the leading `v̄`.
    pub fn from_levels(v: Vec<f64>) -> Result<Self, EquilibriumError> {
        if v.len() < 2 {
            return Err(EquilibriumError::InvalidThresholds(
                "need v*_0 plus at least one round".into(),
            ));
        }
        for w in v.windows(2) {
            if !(w[1] <= w[0]) {
                return Err(EquilibriumError::InvalidThresholds(format!(
                    "thresholds must be weakly decreasing, got {:?}",
                    v
                )));
            }
        }
        Ok(Self { v })
    }

    /// Builds from per-round cutoffs `v*_1..v*_T`, prepending `v*_0 = v̄`.
    pub fn new(v_bar: f64, cutoffs: &[f64]) -> Result<Self, EquilibriumError> {
        let mut v = Vec::with_capacity(cutoffs.len() + 1);
        v.push(v_bar);
        v.extend_from_slice(cutoffs);
        if !cutoffs.is_empty() && cutoffs[0] > v_bar {
            return Err(EquilibriumError::InvalidThresholds(
                "v*_1 must not exceed v̄".into(),
            ));
        }
        Self::from_levels(v)
    }

    /// `v*_t` for `t ∈ 0..=T`.
    pub fn cutoff(&self, t: usize) -> f64 {
        self.v[t]
    }

    /// Number of rounds `T`.
    pub fn rounds(&self) -> usize {
        self.v.len() - 1
    }

    /// Cutoffs `v*_1..v*_T` without the leading `v̄`.
    pub fn per_round(&self) -> &[f64] {
        &self.v[1..]
    }

    pub fn levels(&self) -> &[f64] {
        &self.v
    }

    /// Last-round cutoff `v*_T`.
    pub fn terminal(&self) -> f64 {
        *self.v.last().unwrap()
    }

    /// Checks support bounds and the `v*_0 = v̄` convention against `prims`.
    pub fn validate(&self, prims: &AuctionPrimitives) -> Result<(), EquilibriumError> {
        let (lo, hi) = prims.dist.support();
        if (self.v[0] - hi).abs() > 1e-9 * (1.0 + hi.abs()) {
            return Err(EquilibriumError::InvalidThresholds(format!(
                "v*_0 = {} must equal v̄ = {hi}",
                self.v[0]
            )));
        }
        if self.rounds() != prims.rounds() {
            return Err(EquilibriumError::InvalidThresholds(format!(
                "{} cutoffs for {} rounds",
                self.rounds(),
                prims.rounds()
            )));
        }
        if self.terminal() < lo - 1e-12 * (1.0 + lo.abs()) {
            return Err(EquilibriumError::InvalidThresholds(format!(
                "v*_T = {} below support lower bound {lo}",
                self.terminal()
            )));
        }
        Ok(())
    }
}

/// Unconditional interim payoff `Π_t(v; v*)` from entering the round-`t`
/// auction and bidding truthfully, when rivals follow the cutoffs in `thr`.
/// The payoff conditional on round `t` being held is `Π_t / G(v*_{t-1})`.
pub fn interim_payoff(
    v: f64,
    t: usize,
    thr: &ThresholdSequence,
    prims: &AuctionPrimitives,
) -> Result<f64, EquilibriumError> {
    let rounds = prims.rounds();
    if t < 1 || t > rounds {
        return Err(EquilibriumError::RoundOutOfRange { t, rounds });
    }
    let m = prims.rivals();
    let vt = thr.cutoff(t);
    let vprev = thr.cutoff(t - 1);
    // Integration bound min{max{v, v*_t}, v*_{t-1}} clips the win-against-
    // current-entrants integral to the round's entry bracket.
    let upper = v.clamp(vt, vprev);
    let win_integral = v * (prims.dist.order_stat_cdf(m, upper) - prims.dist.order_stat_cdf(m, vt))
        - prims.dist.partial_expectation_dg(m, vt, upper);
    let g_t = prims.dist.order_stat_cdf(m, vt);
    let g_prev = prims.dist.order_stat_cdf(m, vprev);
    let inner = win_integral + (v - prims.reserves[t - 1]) * g_t - g_prev * prims.entry_cost;
    Ok(prims.delta.powi(t as i32 - 1) * inner)
}

/// Round a value of type `v` enters in equilibrium: the payoff-maximizing
/// round, or `None` when every round yields a non-positive payoff.
pub fn best_entry_time(
    v: f64,
    thr: &ThresholdSequence,
    prims: &AuctionPrimitives,
) -> Result<Option<usize>, EquilibriumError> {
    let mut best: Option<(usize, f64)> = None;
    for t in 1..=prims.rounds() {
        let p = interim_payoff(v, t, thr, prims)?;
        if best.map_or(true, |(_, bp)| p > bp) {
            best = Some((t, p));
        }
    }
    Ok(best.filter(|&(_, p)| p > 0.0).map(|(t, _)| t))
}

/// Solver diagnostics: candidate multiplicity, skipped rounds, corner cases.
#[derive(Debug, Clone, Default, Serialize)]
pub struct SolveDiagnostics {
    /// All `v*_1` candidates that survived verification, descending.
    pub candidates: Vec<f64>,
    pub multiple_equilibria: bool,
    /// Rounds `t` with `v*_t = v*_{t-1}` (no entry possible in round `t`).
    pub skipped_rounds: Vec<usize>,
    /// Nobody enters in any round; all cutoffs sit at `v̄`.
    pub no_entry: bool,
    /// Largest indifference residual over non-skipped rounds.
    pub max_residual: f64,
    /// A non-adjacent waiting deviation attains the Definition-level maximum.
    pub nonadjacent_binding: bool,
}

/// Solved equilibrium: cutoffs plus per-round indifference residuals.
#[derive(Debug, Clone, Serialize)]
pub struct SolveResult {
    pub thresholds: ThresholdSequence,
    /// Residual of the round-`t` indifference condition (0 for skipped rounds).
    pub residuals: Vec<f64>,
    pub diagnostics: SolveDiagnostics,
}

/// Left side of the round-`t` indifference condition:
/// `G(v_t)(v_t − r_t) − K·G(v_{t-1})`.
fn indiff_lhs(prims: &AuctionPrimitives, v_prev: f64, v_t: f64, t: usize) -> f64 {
    prims.g(v_t) * (v_t - prims.reserves[t - 1]) - prims.entry_cost * prims.g(v_prev)
}

/// Right side for `t < T` as a function of the next cutoff `w`:
/// `δ[G(v_t)(v_t − K) − ∫_w^{v_t} x dG − r_{t+1} G(w)]`.
fn indiff_rhs(prims: &AuctionPrimitives, v_t: f64, w: f64, t: usize) -> f64 {
    let m = prims.rivals();
    prims.delta
        * (prims.g(v_t) * (v_t - prims.entry_cost)
            - prims.dist.partial_expectation_dg(m, w, v_t)
            - prims.reserves[t] * prims.dist.order_stat_cdf(m, w))
}

/// Residual of the round-`t` indifference condition at a full sequence.
fn eq_residual(prims: &AuctionPrimitives, thr: &[f64], t: usize) -> f64 {
    let rounds = prims.rounds();
    let lhs = indiff_lhs(prims, thr[t - 1], thr[t], t);
    if t < rounds {
        lhs - indiff_rhs(prims, thr[t], thr[t + 1], t)
    } else {
        lhs
    }
}

struct Unroll {
    levels: Vec<f64>,
    terminal_residual: f64,
    /// An inner solve had no root inside its bracket and was clamped.
    forced: bool,
}

/// Safeguarded Newton on the inner indifference equation, which is monotone
/// increasing in the next cutoff on `[max(r_{t+1}, v̲), v_t]`.
fn solve_next_cutoff(prims: &AuctionPrimitives, v_t: f64, t: usize, lhs: f64) -> (f64, bool) {
    let (lo_support, _) = prims.dist.support();
    let lo = prims.reserves[t].max(lo_support);
    if lo >= v_t {
        // Reserve at or above the current cutoff: nobody can enter next round.
        return (v_t, false);
    }
    let h = |w: f64| indiff_rhs(prims, v_t, w, t) - lhs;
    let h_hi = h(v_t);
    if h_hi < 0.0 {
        // Even an empty next round leaves waiting unattractive; no root.
        let scale = 1e-11 * (1.0 + v_t.abs());
        return (v_t, h_hi < -scale);
    }
    let h_lo = h(lo);
    if h_lo > 0.0 {
        let scale = 1e-11 * (1.0 + v_t.abs());
        return (lo, h_lo > scale);
    }
    // Newton from the midpoint with a shrinking bracket as safeguard.
    let m = prims.rivals();
    let mut a = lo;
    let mut b = v_t;
    let mut fa = h_lo;
    let mut w = 0.5 * (a + b);
    let xtol = 1e-13 * (1.0 + v_t.abs());
    for _ in 0..80 {
        let hw = h(w);
        if hw == 0.0 {
            return (w, false);
        }
        if hw.signum() == fa.signum() {
            a = w;
            fa = hw;
        } else {
            b = w;
        }
        if b - a <= xtol {
            break;
        }
        // h'(w) = δ·g(w)·(w − r_{t+1}) with g the order-statistic density.
        let dens = f64::from(m)
            * prims.dist.cdf(w).powi(m as i32 - 1)
            * prims.dist.pdf(w)
            * prims.delta
            * (w - prims.reserves[t]);
        let mut next = if dens > 0.0 { w - hw / dens } else { 0.5 * (a + b) };
        if !(next > a && next < b) {
            next = 0.5 * (a + b);
        }
        if (next - w).abs() <= xtol {
            w = next;
            break;
        }
        w = next;
    }
    (w.clamp(a, b), false)
}

/// Unrolls the cutoff sequence from a guess for the first active round.
///
/// `head` holds cutoffs for rounds before `start` (all pinned at `v̄` when
/// leading rounds are skipped).
fn unroll(prims: &AuctionPrimitives, head: &[f64], start: usize, guess: f64) -> Unroll {
    let rounds = prims.rounds();
    let mut levels = Vec::with_capacity(rounds + 1);
    levels.extend_from_slice(head);
    levels.push(guess);
    let mut forced = false;
    for t in start..rounds {
        let lhs = indiff_lhs(prims, levels[t - 1], levels[t], t);
        let (next, was_forced) = solve_next_cutoff(prims, levels[t], t, lhs);
        forced |= was_forced;
        levels.push(next);
    }
    let terminal_residual = indiff_lhs(prims, levels[rounds - 1], levels[rounds], rounds);
    Unroll { levels, terminal_residual, forced }
}

/// Verifies the definition-level optimality of a candidate sequence:
/// indifference with the best *future* round at every non-skipped cutoff and
/// weak preference for waiting at skipped ones. Returns the non-adjacent
/// binding flag, or `None` if the candidate fails.
fn verify_definition(prims: &AuctionPrimitives, thr: &ThresholdSequence) -> Option<bool> {
    let rounds = prims.rounds();
    let scale = 1e-7 * (1.0 + prims.dist.hi().abs());
    let mut nonadjacent = false;
    for t in 1..=rounds {
        let vt = thr.cutoff(t);
        let here = interim_payoff(vt, t, thr, prims).ok()?;
        let mut fut_max = 0.0_f64; // Π_{T+1} = 0: never entering.
        let mut fut_argmax = rounds + 1;
        for tau in (t + 1)..=rounds {
            let p = interim_payoff(vt, tau, thr, prims).ok()?;
            if p > fut_max {
                fut_max = p;
                fut_argmax = tau;
            }
        }
        if here > fut_max + scale {
            return None;
        }
        if thr.cutoff(t - 1) > vt + skip_gap(vt) {
            // Non-skipped round: the marginal type must be exactly indifferent.
            if (here - fut_max).abs() > scale {
                return None;
            }
            if fut_argmax > t + 1 && fut_argmax <= rounds {
                let adj = interim_payoff(vt, t + 1, thr, prims).ok()?;
                if fut_max > adj + scale {
                    nonadjacent = true;
                }
            }
        }
    }
    Some(nonadjacent)
}

/// Cutoffs closer than this (relative) count as an identical, skipped round;
/// matches what the shooting tolerance can resolve.
fn skip_gap(scale: f64) -> f64 {
    1e-8 * (1.0 + scale.abs())
}

fn skipped_rounds(levels: &[f64]) -> Vec<usize> {
    (1..levels.len())
        .filter(|&t| levels[t] >= levels[t - 1] - skip_gap(levels[t]))
        .collect()
}

/// Solves the symmetric equilibrium entry cutoffs for `prims`.
///
/// Signals the no-entry corner through `diagnostics.no_entry` (all cutoffs at
/// `v̄`) and reports every verified shooting candidate; with several sign
/// changes the largest `v*_1` wins and `multiple_equilibria` is set.
pub fn solve_thresholds(prims: &AuctionPrimitives) -> Result<SolveResult, EquilibriumError> {
    let (_, hi) = prims.dist.support();
    let rounds = prims.rounds();

    // No-entry corner: even the top type cannot profit in any round.
    if prims
        .reserves
        .iter()
        .all(|r| hi - r - prims.entry_cost <= 0.0)
    {
        let thr = ThresholdSequence::from_levels(vec![hi; rounds + 1])?;
        return Ok(SolveResult {
            thresholds: thr,
            residuals: vec![0.0; rounds],
            diagnostics: SolveDiagnostics {
                no_entry: true,
                skipped_rounds: (1..=rounds).collect(),
                ..Default::default()
            },
        });
    }

    if prims.n == 1 {
        return solve_single_buyer(prims);
    }

    let mut failure_notes = Vec::new();
    // Try an interior first active round; fall back to skipping leading
    // rounds (prohibitive early reserves) and shooting from deeper starts.
    for start in 1..=rounds {
        let head: Vec<f64> = vec![hi; start];
        match shoot_from(prims, &head, start) {
            Ok(Some(result)) => return Ok(result),
            Ok(None) => failure_notes.push(format!("start {start}: no verified candidate")),
            Err(e) => failure_notes.push(format!("start {start}: {e}")),
        }
    }
    Err(EquilibriumError::NoBracket(failure_notes.join("; ")))
}

/// Scans the shooting grid for sign changes of the terminal residual, refines
/// each bracket by bisection, and verifies candidates against the cutoff
/// definition. Returns `Ok(None)` when no candidate survives.
fn shoot_from(
    prims: &AuctionPrimitives,
    head: &[f64],
    start: usize,
) -> Result<Option<SolveResult>, EquilibriumError> {
    let (lo, hi) = prims.dist.support();
    let span = hi - lo;
    let top = head[start - 1].min(hi);

    // Quantile-spaced grid plus linear padding in both tails so thin-density
    // regions near the support ends still get bracketed.
    let mut grid: Vec<f64> = (0..SHOOT_GRID)
        .map(|i| prims.dist.quantile((i as f64 + 0.5) / SHOOT_GRID as f64))
        .collect();
    let q_hi = prims.dist.quantile(1.0 - 0.5 / SHOOT_GRID as f64);
    let q_lo = prims.dist.quantile(0.5 / SHOOT_GRID as f64);
    for i in 0..=64 {
        grid.push(q_hi + (hi - 1e-9 * span - q_hi) * i as f64 / 64.0);
    }
    for i in 0..16 {
        grid.push(lo + 1e-9 * span + (q_lo - lo) * i as f64 / 16.0);
    }
    grid.retain(|v| v.is_finite() && *v > lo && *v < top);
    grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
    grid.dedup();

    let residual_at = |v1: f64| unroll(prims, head, start, v1).terminal_residual;
    let mut roots: Vec<f64> = Vec::new();
    let mut prev: Option<(f64, f64)> = None;
    for &v1 in &grid {
        let r = residual_at(v1);
        if !r.is_finite() {
            prev = None;
            continue;
        }
        if r == 0.0 {
            roots.push(v1);
        } else if let Some((pv, pr)) = prev {
            if pr.signum() != r.signum() {
                if let Some(root) = bisect_root(residual_at, pv, v1, SHOOT_XTOL) {
                    roots.push(root.x);
                }
            }
        }
        prev = Some((v1, r));
    }

    // Verify candidates, preferring the largest first-round cutoff.
    roots.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut verified: Vec<(Vec<f64>, Vec<f64>, bool)> = Vec::new();
    for root in roots {
        let un = unroll(prims, head, start, root);
        if un.forced {
            continue;
        }
        let thr = match ThresholdSequence::from_levels(un.levels.clone()) {
            Ok(t) => t,
            Err(_) => continue,
        };
        if thr.validate(prims).is_err() {
            continue;
        }
        let skips = skipped_rounds(&un.levels);
        let mut residuals = vec![0.0; prims.rounds()];
        let mut ok = true;
        for t in 1..=prims.rounds() {
            if skips.contains(&t) {
                continue;
            }
            let r = eq_residual(prims, &un.levels, t);
            residuals[t - 1] = r;
            if r.abs() > RESID_TOL * (1.0 + hi.abs()) {
                ok = false;
                break;
            }
        }
        if !ok {
            continue;
        }
        // Marginal entrants must clear their round's reserve.
        for t in 1..=prims.rounds() {
            if !skips.contains(&t) && un.levels[t] <= prims.reserves[t - 1] {
                ok = false;
                break;
            }
        }
        if !ok {
            continue;
        }
        match verify_definition(prims, &thr) {
            Some(nonadjacent) => verified.push((un.levels, residuals, nonadjacent)),
            None => continue,
        }
    }

    if verified.is_empty() {
        return Ok(None);
    }
    let multiple = verified.len() > 1;
    let candidates: Vec<f64> = verified.iter().map(|(l, _, _)| l[start]).collect();
    let (levels, residuals, nonadjacent) = verified.swap_remove(0);
    let skips = skipped_rounds(&levels);
    let max_residual = residuals.iter().fold(0.0_f64, |a, r| a.max(r.abs()));
    Ok(Some(SolveResult {
        thresholds: ThresholdSequence::from_levels(levels)?,
        residuals,
        diagnostics: SolveDiagnostics {
            candidates,
            multiple_equilibria: multiple,
            skipped_rounds: skips,
            no_entry: false,
            max_residual,
            nonadjacent_binding: nonadjacent,
        },
    }))
}

/// With a single potential buyer the rival CDF is identically one and each
/// cutoff solves a one-dimensional indifference against the best later round.
fn solve_single_buyer(prims: &AuctionPrimitives) -> Result<SolveResult, EquilibriumError> {
    let (lo, hi) = prims.dist.support();
    let rounds = prims.rounds();
    let pay = |v: f64, t: usize| {
        prims.delta.powi(t as i32 - 1) * (v - prims.reserves[t - 1] - prims.entry_cost)
    };
    let mut cutoffs = vec![hi; rounds];
    for t in (1..=rounds).rev() {
        // Π_t(v) − max(0, max_{τ>t} Π_τ(v)) is strictly increasing in v.
        let diff = |v: f64| {
            let fut = ((t + 1)..=rounds).map(|tau| pay(v, tau)).fold(0.0_f64, f64::max);
            pay(v, t) - fut
        };
        let cut = if diff(lo) >= 0.0 {
            lo
        } else if diff(hi) <= 0.0 {
            hi
        } else {
            bisect_root(diff, lo, hi, 1e-12 * (1.0 + hi.abs()))
                .map(|r| r.x)
                .unwrap_or(hi)
        };
        cutoffs[t - 1] = cut;
    }
    // Entry opportunities only improve as rounds are exhausted under
    // decreasing reserves; enforce monotonicity for odd reserve paths.
    for t in (1..rounds).rev() {
        if cutoffs[t - 1] < cutoffs[t] {
            cutoffs[t - 1] = cutoffs[t];
        }
    }
    let thr = ThresholdSequence::new(hi, &cutoffs)?;
    let skips = skipped_rounds(thr.levels());
    Ok(SolveResult {
        thresholds: thr,
        residuals: vec![0.0; rounds],
        diagnostics: SolveDiagnostics {
            skipped_rounds: skips,
            ..Default::default()
        },
    })
}

/// Reserve sequence that induces a given weakly decreasing cutoff sequence.
///
/// Requires positive buyer mass below every cutoff (`F(v*_t) > 0`); otherwise
/// the round-`t` reserve is undefined.
pub fn reserves_from_thresholds(
    thr: &ThresholdSequence,
    prims: &AuctionPrimitives,
) -> Result<Vec<f64>, EquilibriumError> {
    let rounds = thr.rounds();
    let m = prims.rivals();
    let delta = prims.delta;
    let mut reserves = Vec::with_capacity(rounds);
    let g = |v: f64| prims.dist.order_stat_cdf(m, v);
    for t in 1..=rounds {
        let g_t = g(thr.cutoff(t));
        if prims.dist.cdf(thr.cutoff(t)) <= 0.0 {
            return Err(EquilibriumError::ZeroMass { t });
        }
        let mut acc = -prims.entry_cost * g(thr.cutoff(t - 1));
        for tau in t..=rounds {
            acc += (1.0 - delta) * delta.powi((tau - t) as i32) * g(thr.cutoff(tau)) * thr.cutoff(tau);
        }
        for tau in t..rounds {
            acc += delta.powi((tau - t + 1) as i32)
                * prims.dist.partial_expectation_dg(m, thr.cutoff(tau + 1), thr.cutoff(tau));
        }
        acc += delta.powi((rounds - t + 1) as i32) * g(thr.cutoff(rounds)) * thr.cutoff(rounds);
        reserves.push(acc / g_t);
    }
    Ok(reserves)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::ValueDistribution;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// N = 2 uniform buyers on [0,1], v_s = 0, K = 0.2, δ = 0.97.
    fn example1(reserves: Vec<f64>) -> AuctionPrimitives {
        AuctionPrimitives::new(
            ValueDistribution::uniform(0.0, 1.0).unwrap(),
            2,
            0.97,
            0.0,
            0.2,
            reserves,
        )
        .unwrap()
    }

    #[test]
    fn primitives_validation() {
        let d = ValueDistribution::uniform(0.0, 1.0).unwrap();
        assert!(AuctionPrimitives::new(d, 2, 1.0, 0.0, 0.2, vec![0.0]).is_err());
        assert!(AuctionPrimitives::new(d, 2, 0.9, 0.0, 0.0, vec![0.0]).is_err());
        assert!(AuctionPrimitives::new(d, 2, 0.9, 0.9, 0.2, vec![0.0]).is_err());
        assert!(AuctionPrimitives::new(d, 2, 0.9, 0.0, 0.2, vec![]).is_err());
        assert!(AuctionPrimitives::new(d, 0, 0.9, 0.0, 0.2, vec![0.0]).is_err());
    }

    #[test]
    fn threshold_sequence_rejects_increasing() {
        assert!(ThresholdSequence::from_levels(vec![1.0, 0.5, 0.6]).is_err());
        assert!(ThresholdSequence::new(1.0, &[0.66, 0.36]).is_ok());
    }

    #[test]
    fn interim_payoff_example1_values() {
        let prims = example1(vec![0.14, 0.0]);
        let thr = ThresholdSequence::new(1.0, &[0.66, 0.3633]).unwrap();
        // Terminal indifference: v_2² = K·v_1 makes Π_2 vanish at v_2.
        let p2_at_cut = interim_payoff(0.3633, 2, &thr, &prims).unwrap();
        assert!(p2_at_cut.abs() < 1e-4, "got {p2_at_cut}");
        let p1 = interim_payoff(0.66, 1, &thr, &prims).unwrap();
        assert!((p1 - 0.1432).abs() < 1e-6, "got {p1}");
        let p2 = interim_payoff(0.66, 2, &thr, &prims).unwrap();
        assert!((p2 - 0.1472).abs() < 2e-4, "got {p2}");
        // Printed thresholds are 2-decimal roundings; payoffs agree loosely.
        assert!((p1 - p2).abs() < 0.005);
        // Round index range.
        assert!(matches!(
            interim_payoff(0.5, 3, &thr, &prims),
            Err(EquilibriumError::RoundOutOfRange { .. })
        ));
    }

    #[test]
    fn interim_payoff_closed_form_at_negligible_entry_cost() {
        // With K → 0, T = 1, r = 0: Π_1(v) = ∫_0^v (v−x) dx = v²/2.
        let prims = AuctionPrimitives::new(
            ValueDistribution::uniform(0.0, 1.0).unwrap(),
            2,
            0.97,
            0.0,
            1e-12,
            vec![0.0],
        )
        .unwrap();
        let thr = ThresholdSequence::new(1.0, &[0.0]).unwrap();
        for v in [0.2, 0.5, 0.9] {
            let p = interim_payoff(v, 1, &thr, &prims).unwrap();
            assert!((p - v * v / 2.0).abs() < 1e-9, "v={v}: {p}");
        }
    }

    #[test]
    fn solves_example1_recurring_thresholds() {
        let prims = example1(vec![0.14, 0.0]);
        let sol = solve_thresholds(&prims).unwrap();
        let v = sol.thresholds.per_round();
        assert!((v[0] - 0.66).abs() < 0.01, "v1 = {}", v[0]);
        assert!((v[1] - 0.36).abs() < 0.01, "v2 = {}", v[1]);
        assert!(sol.diagnostics.max_residual < 1e-8);
        assert!(!sol.diagnostics.multiple_equilibria);
        assert!(sol.diagnostics.skipped_rounds.is_empty());
        // Marginal entrants clear the reserves.
        assert!(v[0] > 0.14 && v[1] > 0.0);
    }

    #[test]
    fn solves_single_round_cutoff() {
        let prims = example1(vec![0.0]);
        let sol = solve_thresholds(&prims).unwrap();
        // v·v = K at the cutoff; √0.2 ≈ 0.447, printed 0.45.
        assert!((sol.thresholds.cutoff(1) - 0.2f64.sqrt()).abs() < 1e-8);
    }

    #[test]
    fn terminal_reserve_at_single_round_level_skips_second_round() {
        // r_1 = v_s, r_2 = v** − K reproduces the single-round outcome:
        // first-round cutoff v** and an empty second round.
        let vss = 0.2f64.sqrt();
        let prims = example1(vec![0.0, vss - 0.2]);
        let sol = solve_thresholds(&prims).unwrap();
        let v = sol.thresholds.per_round();
        assert!((v[0] - vss).abs() < 1e-6, "v1 = {}", v[0]);
        assert!((v[1] - vss).abs() < 1e-6, "v2 = {}", v[1]);
        assert_eq!(sol.diagnostics.skipped_rounds, vec![2]);
    }

    #[test]
    fn lowering_terminal_reserve_widens_the_cutoff_gap() {
        // Starting from r_2 = v** − K, each reduction in r_2 strictly
        // increases v*_1 − v*_2.
        let vss = 0.2f64.sqrt();
        let mut last_gap = 0.0;
        for dr in [0.0, 0.05, 0.1, 0.2] {
            let prims = example1(vec![0.0, vss - 0.2 - dr]);
            let sol = solve_thresholds(&prims).unwrap();
            let v = sol.thresholds.per_round();
            let gap = v[0] - v[1];
            assert!(
                gap >= last_gap - 1e-9,
                "gap {gap} did not increase (prev {last_gap}) at dr={dr}"
            );
            last_gap = gap;
        }
        assert!(last_gap > 0.01);
    }

    #[test]
    fn no_entry_corner_is_signalled() {
        // v̄ − r_t < K in both rounds: nobody ever enters.
        let prims = example1(vec![0.9, 0.85]);
        let sol = solve_thresholds(&prims).unwrap();
        assert!(sol.diagnostics.no_entry);
        assert!(sol.thresholds.per_round().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn prohibitive_first_round_reserve_skips_into_second() {
        // Round 1 is unprofitable even for the top type, round 2 is open.
        let prims = example1(vec![0.95, 0.0]);
        let sol = solve_thresholds(&prims).unwrap();
        assert!(sol.diagnostics.skipped_rounds.contains(&1));
        let v = sol.thresholds.per_round();
        assert!((v[0] - 1.0).abs() < 1e-9);
        // Remaining game is a single round at r = 0: cutoff √K.
        assert!((v[1] - 0.2f64.sqrt()).abs() < 1e-6);
    }

    #[test]
    fn best_entry_time_follows_threshold_rule() {
        let prims = example1(vec![0.14, 0.0]);
        let sol = solve_thresholds(&prims).unwrap();
        let thr = &sol.thresholds;
        assert_eq!(best_entry_time(0.9, thr, &prims).unwrap(), Some(1));
        assert_eq!(best_entry_time(0.5, thr, &prims).unwrap(), Some(2));
        assert_eq!(best_entry_time(0.1, thr, &prims).unwrap(), None);
        // Cutoff optimality on a random grid.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let v: f64 = rng.random();
            let by_rule = if v > thr.cutoff(1) {
                Some(1)
            } else if v > thr.cutoff(2) {
                Some(2)
            } else {
                None
            };
            let eps = 1e-9;
            if (v - thr.cutoff(1)).abs() < eps || (v - thr.cutoff(2)).abs() < eps {
                continue;
            }
            assert_eq!(best_entry_time(v, thr, &prims).unwrap(), by_rule, "v = {v}");
        }
    }

    #[test]
    fn entry_round_weakly_increasing_as_value_falls() {
        let prims = example1(vec![0.14, 0.0]);
        let sol = solve_thresholds(&prims).unwrap();
        let mut prev_round = 0usize;
        for i in (1..100).rev() {
            let v = i as f64 / 100.0;
            let r = best_entry_time(v, &sol.thresholds, &prims)
                .unwrap()
                .map_or(usize::MAX, |t| t);
            assert!(r >= prev_round, "higher type entered later at v={v}");
            prev_round = r;
        }
    }

    #[test]
    fn single_crossing_of_interim_payoffs() {
        let prims = example1(vec![0.14, 0.0]);
        let thr = solve_thresholds(&prims).unwrap().thresholds;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..500 {
            let a: f64 = rng.random();
            let b: f64 = rng.random();
            let (v, v_hi) = if a < b { (a, b) } else { (b, a) };
            let d_low = interim_payoff(v, 1, &thr, &prims).unwrap()
                - interim_payoff(v, 2, &thr, &prims).unwrap();
            let d_high = interim_payoff(v_hi, 1, &thr, &prims).unwrap()
                - interim_payoff(v_hi, 2, &thr, &prims).unwrap();
            assert!(d_high >= d_low - 1e-12, "single crossing failed at ({v}, {v_hi})");
        }
    }

    #[test]
    fn reserves_round_trip_through_solver() {
        // Eq-recovery: thresholds -> reserves -> thresholds is the identity.
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let dists = [
            ValueDistribution::uniform(0.0, 1.0).unwrap(),
            ValueDistribution::uniform(1.0, 2.0).unwrap(),
            ValueDistribution::power(4.0).unwrap(),
        ];
        let mut tested = 0;
        while tested < 200 {
            let dist = dists[rng.random_range(0..dists.len())];
            let (lo, hi) = dist.support();
            let n = rng.random_range(2..=5);
            let rounds = rng.random_range(1..=3usize);
            let k = 0.05 + 0.15 * rng.random::<f64>();
            let delta = 0.9 + 0.09 * rng.random::<f64>();
            // Strictly decreasing cutoffs away from the support ends.
            let mut cuts: Vec<f64> = (0..rounds)
                .map(|_| lo + (hi - lo) * (0.15 + 0.7 * rng.random::<f64>()))
                .collect();
            cuts.sort_by(|a, b| b.partial_cmp(a).unwrap());
            if cuts.windows(2).any(|w| w[0] - w[1] < 0.05 * (hi - lo)) {
                continue;
            }
            let prims =
                AuctionPrimitives::new(dist, n, delta, 0.0, k, vec![0.0; rounds]).unwrap();
            let thr = ThresholdSequence::new(hi, &cuts).unwrap();
            let reserves = reserves_from_thresholds(&thr, &prims).unwrap();
            let prims2 = match prims.with_reserves(reserves) {
                Ok(p) => p,
                Err(_) => continue,
            };
            let sol = match solve_thresholds(&prims2) {
                Ok(s) => s,
                Err(e) => panic!(
                    "round-trip solve failed: {e} (cuts {cuts:?}, n={n}, delta={delta}, k={k}, dist {:?})",
                    dist.family()
                ),
            };
            for (got, want) in sol.thresholds.per_round().iter().zip(&cuts) {
                assert!(
                    (got - want).abs() < 1e-6,
                    "round trip drifted: {got} vs {want} (n={n}, T={rounds})"
                );
            }
            tested += 1;
        }
    }

    #[test]
    fn reserve_recovery_single_round_reduces_to_indifference_rearrangement() {
        // T=1: Eq-recovery collapses to r_1 = v*_1 − K/G(v*_1).
        let prims = example1(vec![0.0]);
        let v1 = 0.7;
        let thr = ThresholdSequence::new(1.0, &[v1]).unwrap();
        let r = reserves_from_thresholds(&thr, &prims).unwrap();
        assert!((r[0] - (v1 - 0.2 / v1)).abs() < 1e-12);
        // Single-round efficient cutoff maps back to r = v_s.
        let vss = 0.2f64.sqrt();
        let thr = ThresholdSequence::new(1.0, &[vss]).unwrap();
        let r = reserves_from_thresholds(&thr, &prims).unwrap();
        assert!(r[0].abs() < 1e-12);
    }

    #[test]
    fn reserve_recovery_rejects_zero_mass() {
        let prims = example1(vec![0.0, 0.0]);
        let thr = ThresholdSequence::new(1.0, &[0.5, 0.0]).unwrap();
        assert!(matches!(
            reserves_from_thresholds(&thr, &prims),
            Err(EquilibriumError::ZeroMass { t: 2 })
        ));
    }

    #[test]
    fn single_buyer_thresholds_are_explicit() {
        // N = 1: cutoffs solve one-dimensional indifference conditions;
        // terminal cutoff is r_T + K.
        let prims = AuctionPrimitives::new(
            ValueDistribution::uniform(0.0, 1.0).unwrap(),
            1,
            0.9,
            0.0,
            0.1,
            vec![0.3, 0.2],
        )
        .unwrap();
        let sol = solve_thresholds(&prims).unwrap();
        let v = sol.thresholds.per_round();
        assert!((v[1] - 0.3).abs() < 1e-9, "terminal cutoff {}", v[1]);
        // Indifference at t=1: (v − 0.4) = δ(v − 0.3)  =>  v = 1.3.. > v̄?
        // (v − r_1 − K) = δ(v − r_2 − K): v(1−δ) = r_1 + K − δ(r_2 + K)
        let expect: f64 = (0.3 + 0.1 - 0.9 * (0.2 + 0.1)) / 0.1;
        assert!((v[0] - expect.clamp(0.0, 1.0)).abs() < 1e-9, "v1 = {}", v[0]);
    }
}
