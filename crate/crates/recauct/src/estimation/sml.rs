//! Simulated maximum likelihood with importance sampling.
//!
//! Primitives draws and their outcome likelihoods are expensive (each draw
//! requires an equilibrium solve), so they are generated once under the
//! density at a fixed base point `B₀` and cached in a [`DrawBank`]. Any
//! candidate `B` is then scored by reweighting the cached draws with the
//! density ratio `φ(Λ|B,X)/φ(Λ|B₀,X)`; at `B = B₀` every weight is one.

use rayon::prelude::*;

use crate::estimation::{
    likelihood, log_primitive_density, nelder_mead, trn_sample_from_uniform, AuctionParams,
    Covariates, Dataset, EstimationError, HyperParams, NelderMeadOptions, K_BOUNDS, MU_BOUNDS,
    SIGMA_BOUNDS,
};
use crate::simulate::substream;

/// Log-likelihood floor for observations no draw can rationalize.
const LOG_FLOOR: f64 = -690.775527898; // ln(1e-300)

/// One cached draw: the primitives, the precomputed outcome likelihood in
/// logs, and the importance density at the base point.
#[derive(Debug, Clone)]
pub struct BankEntry {
    pub params: AuctionParams,
    /// `ln L_is`; `-inf` when the draw cannot rationalize the outcome.
    pub log_lik: f64,
    /// `ln g(Λ_is|X_i) = ln φ(Λ_is|B₀,X_i)`.
    pub log_g: f64,
}

/// Precomputed draws for every observation, keyed by `(B₀, seed, S)`.
#[derive(Debug, Clone)]
pub struct DrawBank {
    pub b0: HyperParams,
    pub seed: u64,
    pub draws_per_auction: usize,
    pub entries: Vec<Vec<BankEntry>>,
    /// Equilibrium solves that failed and were excluded (scored as zero).
    pub solve_failures: usize,
}

fn hyper_hash(b: &HyperParams) -> u64 {
    // FNV-1a over the packed field bit patterns; identifies a bank's base point.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |x: f64| {
        for byte in x.to_bits().to_le_bytes() {
            h ^= u64::from(byte);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    };
    b.beta_mu.iter().for_each(|&x| eat(x));
    b.beta_sigma.iter().for_each(|&x| eat(x));
    b.beta_k.iter().for_each(|&x| eat(x));
    eat(b.omega_mu);
    eat(b.omega_sigma);
    eat(b.omega_k);
    h
}

impl DrawBank {
    /// Cache key line; a reloaded bank must match it.
    pub fn key(&self) -> String {
        format!(
            "b0_hash={:016x} seed={} s={}",
            hyper_hash(&self.b0),
            self.seed,
            self.draws_per_auction
        )
    }

    /// Persists the bank as CSV with the key in a comment header.
    pub fn write_csv(&self, path: &std::path::Path) -> Result<(), EstimationError> {
        let mut out = format!("# recauct draw bank {}\n", self.key());
        out.push_str("auction,draw,mu,sigma,k,log_lik,log_g\n");
        for (i, draws) in self.entries.iter().enumerate() {
            for (s, e) in draws.iter().enumerate() {
                out.push_str(&format!(
                    "{i},{s},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}\n",
                    e.params.mu, e.params.sigma, e.params.entry_cost, e.log_lik, e.log_g
                ));
            }
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    /// Reloads a persisted bank, verifying it was built for `(b0, seed, s)`.
    pub fn read_csv(
        path: &std::path::Path,
        b0: &HyperParams,
        seed: u64,
        draws_per_auction: usize,
        auctions: usize,
    ) -> Result<Self, EstimationError> {
        let text = std::fs::read_to_string(path)?;
        let mut lines = text.lines();
        let header = lines.next().unwrap_or_default();
        let mut bank = DrawBank {
            b0: *b0,
            seed,
            draws_per_auction,
            entries: vec![Vec::with_capacity(draws_per_auction); auctions],
            solve_failures: 0,
        };
        let want = format!("# recauct draw bank {}", bank.key());
        if header != want {
            return Err(EstimationError::BankMismatch(format!(
                "found `{header}`, expected `{want}`"
            )));
        }
        for (lineno, line) in lines.enumerate() {
            if lineno == 0 || line.trim().is_empty() {
                continue; // column header
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 7 {
                return Err(EstimationError::Parse {
                    line: lineno + 3,
                    message: "expected 7 fields".into(),
                });
            }
            let idx: usize = fields[0].parse().map_err(|e| EstimationError::Parse {
                line: lineno + 3,
                message: format!("auction index: {e}"),
            })?;
            let val = |j: usize| -> Result<f64, EstimationError> {
                fields[j].parse::<f64>().map_err(|e| EstimationError::Parse {
                    line: lineno + 3,
                    message: format!("field {j}: {e}"),
                })
            };
            if idx >= auctions {
                return Err(EstimationError::BankMismatch(format!(
                    "bank references auction {idx} outside the dataset"
                )));
            }
            bank.entries[idx].push(BankEntry {
                params: AuctionParams {
                    mu: val(2)?,
                    sigma: val(3)?,
                    entry_cost: val(4)?,
                },
                log_lik: val(5)?,
                log_g: val(6)?,
            });
        }
        if bank.entries.iter().any(|d| d.len() != draws_per_auction) {
            return Err(EstimationError::BankMismatch(
                "bank draw counts do not match S for every auction".into(),
            ));
        }
        Ok(bank)
    }
}

/// Draws `S` primitives per auction from the importance density
/// `g = φ(·|B₀,X)`, solves the equilibrium once per draw, and stores the
/// outcome likelihoods. Parallel over `(auction, draw)` pairs with
/// schedule-independent substreams.
pub fn precompute_draws(
    b0: &HyperParams,
    dataset: &Dataset,
    draws_per_auction: usize,
    seed: u64,
) -> Result<DrawBank, EstimationError> {
    b0.validate()?;
    if dataset.is_empty() {
        return Err(EstimationError::EmptyDataset);
    }
    for obs in &dataset.observations {
        obs.validate()?;
    }
    let jobs: Vec<(usize, usize)> = (0..dataset.len())
        .flat_map(|i| (0..draws_per_auction).map(move |s| (i, s)))
        .collect();
    let results: Vec<(usize, BankEntry, bool)> = jobs
        .into_par_iter()
        .map(|(i, s)| {
            let obs = &dataset.observations[i];
            let mut rng = substream(seed, (i as u64) << 20 | s as u64);
            let params = super::draw_primitives(b0, &obs.covariates, &mut rng);
            let log_g = log_primitive_density(b0, &obs.covariates, &params);
            let (log_lik, failed) =
                match likelihood::solve_for_observation(&params, obs, dataset.delta) {
                    Ok(sol) => {
                        let dist = likelihood::induced_distribution(&params)
                            .expect("params inside bounds");
                        match likelihood::outcome_likelihood(obs, &dist, &sol.thresholds) {
                            Ok(l) if l > 0.0 => (l.ln(), false),
                            Ok(_) => (f64::NEG_INFINITY, false),
                            Err(_) => (f64::NEG_INFINITY, true),
                        }
                    }
                    Err(_) => (f64::NEG_INFINITY, true),
                };
            (i, BankEntry { params, log_lik, log_g }, failed)
        })
        .collect();
    let mut entries: Vec<Vec<BankEntry>> =
        vec![Vec::with_capacity(draws_per_auction); dataset.len()];
    let mut solve_failures = 0;
    for (i, entry, failed) in results {
        solve_failures += usize::from(failed);
        entries[i].push(entry);
    }
    Ok(DrawBank { b0: *b0, seed, draws_per_auction, entries, solve_failures })
}

/// Simulated log-likelihood of `B` plus importance-sampling diagnostics.
#[derive(Debug, Clone)]
pub struct LoglikResult {
    pub loglik: f64,
    /// Effective sample size of the importance weights per auction.
    pub ess: Vec<f64>,
    /// Observations whose simulated likelihood was zero across all draws.
    pub floored: usize,
}

/// Evaluates `Σ_i log[(1/S) Σ_s L_is · φ(Λ_is|B,X_i)/g(Λ_is|X_i)]` in log
/// space. Observations with zero simulated likelihood contribute a floored
/// log value and are counted rather than dropped.
pub fn simulated_loglik(
    b: &HyperParams,
    dataset: &Dataset,
    bank: &DrawBank,
) -> Result<LoglikResult, EstimationError> {
    b.validate()?;
    if bank.entries.len() != dataset.len() {
        return Err(EstimationError::BankMismatch(format!(
            "bank covers {} auctions, dataset has {}",
            bank.entries.len(),
            dataset.len()
        )));
    }
    let s_count = bank.draws_per_auction as f64;
    let per_auction: Vec<(f64, f64)> = dataset
        .observations
        .par_iter()
        .zip(&bank.entries)
        .map(|(obs, draws)| {
            let x = &obs.covariates;
            // log w_is = log φ(Λ|B,X) − log g(Λ|X); term = log L + log w.
            let mut terms: Vec<f64> = Vec::with_capacity(draws.len());
            let mut log_weights: Vec<f64> = Vec::with_capacity(draws.len());
            for e in draws {
                let lw = log_primitive_density(b, x, &e.params) - e.log_g;
                log_weights.push(lw);
                if e.log_lik > f64::NEG_INFINITY {
                    terms.push(e.log_lik + lw);
                }
            }
            let lse = log_sum_exp(&terms);
            let contribution = if lse > f64::NEG_INFINITY {
                lse - s_count.ln()
            } else {
                LOG_FLOOR
            };
            (contribution, effective_sample_size(&log_weights))
        })
        .collect();
    let mut loglik = 0.0;
    let mut ess = Vec::with_capacity(per_auction.len());
    let mut floored = 0;
    for (contribution, e) in per_auction {
        loglik += contribution;
        ess.push(e);
        if contribution == LOG_FLOOR {
            floored += 1;
        }
    }
    Ok(LoglikResult { loglik, ess, floored })
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return f64::NEG_INFINITY;
    }
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

fn effective_sample_size(log_weights: &[f64]) -> f64 {
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return 0.0;
    }
    let mut sum = 0.0;
    let mut sumsq = 0.0;
    for lw in log_weights {
        let w = (lw - max).exp();
        sum += w;
        sumsq += w * w;
    }
    sum * sum / sumsq
}

#[derive(Debug, Clone)]
pub struct FitSettings {
    pub max_iterations: usize,
    /// Additional simplex restarts around the incumbent optimum.
    pub restarts: usize,
    pub f_tol: f64,
}

impl Default for FitSettings {
    fn default() -> Self {
        Self { max_iterations: 2500, restarts: 1, f_tol: 1e-7 }
    }
}

#[derive(Debug, Clone)]
pub struct FitDiagnostics {
    pub iterations: usize,
    pub converged: bool,
    pub loglik_trace: Vec<f64>,
    pub mean_ess: f64,
    pub min_ess: f64,
    pub floored_observations: usize,
    pub bank_solve_failures: usize,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: HyperParams,
    pub loglik: f64,
    pub diagnostics: FitDiagnostics,
}

/// Maximizes the simulated log-likelihood over `B` by Nelder–Mead (scales in
/// logs), restarting the simplex around the incumbent after convergence.
pub fn fit(
    dataset: &Dataset,
    b0: &HyperParams,
    draws_per_auction: usize,
    seed: u64,
    settings: &FitSettings,
) -> Result<FitResult, EstimationError> {
    let bank = precompute_draws(b0, dataset, draws_per_auction, seed)?;
    fit_with_bank(dataset, &bank, settings)
}

/// Same as [`fit`] but reusing an existing draw bank.
pub fn fit_with_bank(
    dataset: &Dataset,
    bank: &DrawBank,
    settings: &FitSettings,
) -> Result<FitResult, EstimationError> {
    let objective = |v: &[f64]| -> f64 {
        let b = HyperParams::unpack(v);
        match simulated_loglik(&b, dataset, bank) {
            Ok(r) => -r.loglik,
            Err(_) => f64::INFINITY,
        }
    };
    let opts = NelderMeadOptions {
        max_iterations: settings.max_iterations,
        f_tol: settings.f_tol,
        x_tol: 1e-6,
    };
    let mut x = bank.b0.pack();
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    for round in 0..=settings.restarts {
        let steps: Vec<f64> = x
            .iter()
            .map(|xi| (0.05 * xi.abs() + 0.02) / (round + 1) as f64)
            .collect();
        let res = nelder_mead(&objective, &x, &steps, &opts);
        iterations += res.iterations;
        trace.extend(res.trace.iter().map(|f| -f));
        converged = res.converged;
        x = res.x;
    }
    let params = HyperParams::unpack(&x);
    let final_eval = simulated_loglik(&params, dataset, bank)?;
    let mean_ess = final_eval.ess.iter().sum::<f64>() / final_eval.ess.len().max(1) as f64;
    let min_ess = final_eval.ess.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(FitResult {
        params,
        loglik: final_eval.loglik,
        diagnostics: FitDiagnostics {
            iterations,
            converged,
            loglik_trace: trace,
            mean_ess,
            min_ess: if min_ess.is_finite() { min_ess } else { 0.0 },
            floored_observations: final_eval.floored,
            bank_solve_failures: bank.solve_failures,
        },
    })
}

/// Dataset-average implied means of (μ, σ, K) under hyper-parameters `b`:
/// the per-auction truncated-normal means averaged over covariates.
pub fn implied_primitive_means(b: &HyperParams, dataset: &Dataset) -> (f64, f64, f64) {
    let mut acc = (0.0, 0.0, 0.0);
    for obs in &dataset.observations {
        let x: &Covariates = &obs.covariates;
        acc.0 += super::trn_mean(x.dot(&b.beta_mu), b.omega_mu, MU_BOUNDS.0, MU_BOUNDS.1);
        acc.1 += super::trn_mean(
            x.dot(&b.beta_sigma),
            b.omega_sigma,
            SIGMA_BOUNDS.0,
            SIGMA_BOUNDS.1,
        );
        acc.2 += super::trn_mean(x.dot(&b.beta_k), b.omega_k, K_BOUNDS.0, K_BOUNDS.1);
    }
    let p = dataset.len().max(1) as f64;
    (acc.0 / p, acc.1 / p, acc.2 / p)
}

/// Random ±`spread` relative perturbation of every hyper-parameter entry,
/// used by the self-consistency checks.
pub fn perturb_hyper(b: &HyperParams, spread: f64, seed: u64) -> HyperParams {
    use rand::Rng;
    let mut rng = substream(seed, 0xb);
    let mut v = b.pack();
    for (i, x) in v.iter_mut().enumerate() {
        let u: f64 = rng.random::<f64>() * 2.0 - 1.0;
        if i < 12 {
            *x *= 1.0 + spread * u;
            if x.abs() < 1e-12 {
                *x = spread * u * 0.1;
            }
        } else {
            // Scales live in logs: shift by log(1 ± spread).
            *x += (1.0 + spread * u).ln();
        }
    }
    HyperParams::unpack(&v)
}

/// A draw from `TRN` clamped into the parameter box, for tests needing raw
/// truncated normal deviates.
pub fn trn_draw<R: rand::Rng + ?Sized>(
    mean: f64,
    sd: f64,
    lo: f64,
    hi: f64,
    rng: &mut R,
) -> f64 {
    trn_sample_from_uniform(mean, sd, lo, hi, rng.random::<f64>())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimation::{generate_synthetic, synthetic_baseline, GeneratorSettings};

    fn tiny_dataset() -> (HyperParams, Dataset) {
        let b = synthetic_baseline();
        let ds = generate_synthetic(&b, 12, 7, &GeneratorSettings::default()).unwrap();
        (b, ds)
    }

    #[test]
    fn bank_is_deterministic_and_sized() {
        let (b, ds) = tiny_dataset();
        let bank1 = precompute_draws(&b, &ds, 5, 42).unwrap();
        let bank2 = precompute_draws(&b, &ds, 5, 42).unwrap();
        assert_eq!(bank1.entries.len(), ds.len());
        for (d1, d2) in bank1.entries.iter().zip(&bank2.entries) {
            assert_eq!(d1.len(), 5);
            for (e1, e2) in d1.iter().zip(d2) {
                assert_eq!(e1.params.mu.to_bits(), e2.params.mu.to_bits());
                assert_eq!(e1.log_lik.to_bits(), e2.log_lik.to_bits());
            }
        }
    }

    #[test]
    fn bank_entries_match_direct_likelihood_evaluation() {
        let (b, ds) = tiny_dataset();
        let bank = precompute_draws(&b, &ds, 3, 9).unwrap();
        for (obs, draws) in ds.observations.iter().zip(&bank.entries) {
            for e in draws {
                let sol =
                    likelihood::solve_for_observation(&e.params, obs, ds.delta).unwrap();
                let dist = likelihood::induced_distribution(&e.params).unwrap();
                let l = likelihood::outcome_likelihood(obs, &dist, &sol.thresholds).unwrap();
                if l > 0.0 {
                    assert!((e.log_lik - l.ln()).abs() < 1e-12);
                } else {
                    assert_eq!(e.log_lik, f64::NEG_INFINITY);
                }
            }
        }
    }

    #[test]
    fn weights_are_unit_at_base_point() {
        let (b, ds) = tiny_dataset();
        let bank = precompute_draws(&b, &ds, 8, 11).unwrap();
        let at_base = simulated_loglik(&b, &ds, &bank).unwrap();
        // Plain simulated likelihood with unit weights.
        let mut plain = 0.0;
        for draws in &bank.entries {
            let terms: Vec<f64> = draws
                .iter()
                .filter(|e| e.log_lik > f64::NEG_INFINITY)
                .map(|e| e.log_lik)
                .collect();
            let lse = log_sum_exp(&terms);
            plain += if lse > f64::NEG_INFINITY {
                lse - (8.0f64).ln()
            } else {
                LOG_FLOOR
            };
        }
        assert!((at_base.loglik - plain).abs() < 1e-9);
        // ESS equals S when weights are identically one.
        for e in &at_base.ess {
            assert!((e - 8.0).abs() < 1e-9);
        }
    }

    #[test]
    fn single_draw_bank_degenerates_to_one_term() {
        let (b, ds) = tiny_dataset();
        let bank = precompute_draws(&b, &ds, 1, 21).unwrap();
        let r = simulated_loglik(&b, &ds, &bank).unwrap();
        let mut want = 0.0;
        for draws in &bank.entries {
            want += if draws[0].log_lik.is_finite() {
                draws[0].log_lik
            } else {
                LOG_FLOOR
            };
        }
        assert!((r.loglik - want).abs() < 1e-9);
    }

    #[test]
    fn loglik_is_always_finite() {
        let (b, ds) = tiny_dataset();
        let bank = precompute_draws(&b, &ds, 2, 5).unwrap();
        // An absurd candidate far from the data still yields a finite value.
        let mut far = b;
        far.beta_mu[0] += 3.0;
        far.omega_mu = 0.01;
        let r = simulated_loglik(&far, &ds, &bank).unwrap();
        assert!(r.loglik.is_finite());
    }

    #[test]
    fn bank_csv_round_trip_and_key_check() {
        let (b, ds) = tiny_dataset();
        let bank = precompute_draws(&b, &ds, 3, 13).unwrap();
        let dir = std::env::temp_dir().join("recauct_bank_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bank.csv");
        bank.write_csv(&path).unwrap();
        let back = DrawBank::read_csv(&path, &b, 13, 3, ds.len()).unwrap();
        assert_eq!(back.entries.len(), bank.entries.len());
        let l1 = simulated_loglik(&b, &ds, &bank).unwrap().loglik;
        let l2 = simulated_loglik(&b, &ds, &back).unwrap().loglik;
        assert!((l1 - l2).abs() < 1e-9);
        // A different seed must be refused.
        assert!(DrawBank::read_csv(&path, &b, 14, 3, ds.len()).is_err());
        std::fs::remove_file(&path).ok();
    }
}
