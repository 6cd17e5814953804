//! Structural estimation of auction-level primitives.
//!
//! Each property `i` carries unobserved parameters `Λ_i = (μ_i, σ_i, K_i)`:
//! buyer values follow a truncated log-normal `TRLN(μ_i, σ_i, v̲, v̄)` and
//! entry costs `K_i`. The parameters themselves follow truncated normal laws
//! whose means are linear in observed covariates, governed by the
//! hyper-parameter vector `B`. Estimation is simulated maximum likelihood
//! with importance sampling: primitives are drawn once from the law at a
//! fixed base point `B₀`, equilibrium cutoffs and outcome likelihoods are
//! precomputed per draw, and candidate `B`s only reweight the cached draws.

mod likelihood;
mod simplex;
mod sml;
mod synth;

pub use likelihood::{induced_distribution, outcome_likelihood, solve_for_observation};
pub use simplex::{nelder_mead, NelderMeadOptions, NelderMeadResult};
pub use sml::{
    fit, fit_with_bank, implied_primitive_means, perturb_hyper, precompute_draws,
    simulated_loglik, trn_draw, DrawBank, FitDiagnostics, FitResult, FitSettings, LoglikResult,
};
pub use synth::{generate_synthetic, synthetic_baseline, GeneratorSettings};

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::distributions::DistError;
use crate::equilibrium::EquilibriumError;

/// Truncation bounds of the hyper-distributions for (μ, σ, K).
pub const MU_BOUNDS: (f64, f64) = (1.0, 7.0);
pub const SIGMA_BOUNDS: (f64, f64) = (0.01, 3.0);
pub const K_BOUNDS: (f64, f64) = (0.0, 15.0);

/// Truncation bounds of the buyer value distribution, wide enough to make
/// the truncation itself negligible.
pub const VALUE_LO: f64 = 1e-4;
pub const VALUE_HI: f64 = 1200.0;

/// Number of covariates (constant included).
pub const N_COVARIATES: usize = 4;

#[derive(Debug, Error)]
pub enum EstimationError {
    #[error("malformed observation: {0}")]
    MalformedObservation(String),
    #[error("invalid hyper-parameters: {0}")]
    InvalidHyperParams(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("draw bank does not match (B0, seed, S, dataset) it was built for: {0}")]
    BankMismatch(String),
    #[error("dataset I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("dataset parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Distribution(#[from] DistError),
    #[error(transparent)]
    Equilibrium(#[from] EquilibriumError),
}

/// Property covariates `X = (1, log assessed price, area in 100 m²,
/// log distance to city center)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Covariates {
    pub x: [f64; N_COVARIATES],
}

impl Covariates {
    pub fn new(log_assess: f64, area_100m2: f64, log_dist: f64) -> Self {
        Self { x: [1.0, log_assess, area_100m2, log_dist] }
    }

    pub fn dot(&self, beta: &[f64; N_COVARIATES]) -> f64 {
        self.x.iter().zip(beta).map(|(a, b)| a * b).sum()
    }

    pub fn log_assess(&self) -> f64 {
        self.x[1]
    }

    pub fn area(&self) -> f64 {
        self.x[2]
    }

    pub fn log_dist(&self) -> f64 {
        self.x[3]
    }
}

/// Hyper-parameters `B`: covariate coefficients and untruncated standard
/// deviations of the (μ, σ, K) laws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub beta_mu: [f64; N_COVARIATES],
    pub beta_sigma: [f64; N_COVARIATES],
    pub beta_k: [f64; N_COVARIATES],
    pub omega_mu: f64,
    pub omega_sigma: f64,
    pub omega_k: f64,
}

impl HyperParams {
    pub fn validate(&self) -> Result<(), EstimationError> {
        let finite = self
            .beta_mu
            .iter()
            .chain(&self.beta_sigma)
            .chain(&self.beta_k)
            .all(|b| b.is_finite());
        if !finite {
            return Err(EstimationError::InvalidHyperParams(
                "coefficients must be finite".into(),
            ));
        }
        for (name, w) in [
            ("omega_mu", self.omega_mu),
            ("omega_sigma", self.omega_sigma),
            ("omega_k", self.omega_k),
        ] {
            if !(w.is_finite() && w > 0.0) {
                return Err(EstimationError::InvalidHyperParams(format!(
                    "{name} must be positive, got {w}"
                )));
            }
        }
        Ok(())
    }

    /// Packs into the optimizer vector; scales enter in logs to stay positive.
    pub fn pack(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(15);
        v.extend_from_slice(&self.beta_mu);
        v.extend_from_slice(&self.beta_sigma);
        v.extend_from_slice(&self.beta_k);
        v.push(self.omega_mu.ln());
        v.push(self.omega_sigma.ln());
        v.push(self.omega_k.ln());
        v
    }

    pub fn unpack(v: &[f64]) -> Self {
        let grab = |off: usize| {
            let mut a = [0.0; N_COVARIATES];
            a.copy_from_slice(&v[off..off + N_COVARIATES]);
            a
        };
        Self {
            beta_mu: grab(0),
            beta_sigma: grab(4),
            beta_k: grab(8),
            omega_mu: v[12].exp(),
            omega_sigma: v[13].exp(),
            omega_k: v[14].exp(),
        }
    }
}

/// One property's unobserved primitives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuctionParams {
    pub mu: f64,
    pub sigma: f64,
    pub entry_cost: f64,
}

/// Observed outcome of one property: the transaction round and deal price
/// (absent when every round failed), entrant count in the transaction round,
/// the buyer pool size, the reserve path, and covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuctionObservation {
    /// 1-based transaction round; `None` if the property never sold.
    pub round_sold: Option<usize>,
    pub price: Option<f64>,
    /// Entrants in the transaction round (0 when unsold).
    pub entrants: u32,
    pub n: u32,
    pub reserves: Vec<f64>,
    pub covariates: Covariates,
}

impl AuctionObservation {
    pub fn validate(&self) -> Result<(), EstimationError> {
        let rounds = self.reserves.len();
        if rounds == 0 {
            return Err(EstimationError::MalformedObservation(
                "empty reserve sequence".into(),
            ));
        }
        if self.n < 1 {
            return Err(EstimationError::MalformedObservation("n must be >= 1".into()));
        }
        match (self.round_sold, self.price) {
            (Some(t), Some(p)) => {
                if t < 1 || t > rounds {
                    return Err(EstimationError::MalformedObservation(format!(
                        "transaction round {t} outside 1..={rounds}"
                    )));
                }
                if self.entrants < 1 || self.entrants > self.n {
                    return Err(EstimationError::MalformedObservation(format!(
                        "sold with {} entrants out of n = {}",
                        self.entrants, self.n
                    )));
                }
                let r = self.reserves[t - 1];
                if p < r * (1.0 - 1e-9) - 1e-12 {
                    return Err(EstimationError::MalformedObservation(format!(
                        "deal price {p} below round reserve {r}"
                    )));
                }
            }
            (None, None) => {
                if self.entrants != 0 {
                    return Err(EstimationError::MalformedObservation(
                        "failed auction with recorded entrants".into(),
                    ));
                }
            }
            _ => {
                return Err(EstimationError::MalformedObservation(
                    "deal price must be present iff the property sold".into(),
                ));
            }
        }
        Ok(())
    }
}

/// A collection of observations sharing the horizon and discount factor.
#[derive(Debug, Clone, Serialize)]
pub struct Dataset {
    pub observations: Vec<AuctionObservation>,
    pub rounds: usize,
    pub delta: f64,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// CSV with the columns
    /// `id,round_sold,deal_price,entrants,n,r1,r2,r3,log_assess,area_100m2,log_dist`;
    /// `round_sold` is 0 and `deal_price` empty for unsold properties.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "id,round_sold,deal_price,entrants,n,r1,r2,r3,log_assess,area_100m2,log_dist\n",
        );
        for (id, obs) in self.observations.iter().enumerate() {
            let round = obs.round_sold.unwrap_or(0);
            let price = obs.price.map_or(String::new(), |p| format!("{p:.6}"));
            let mut r = obs.reserves.clone();
            r.resize(3, *r.last().unwrap_or(&0.0));
            out.push_str(&format!(
                "{id},{round},{price},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
                obs.entrants,
                obs.n,
                r[0],
                r[1],
                r[2],
                obs.covariates.log_assess(),
                obs.covariates.area(),
                obs.covariates.log_dist(),
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &std::path::Path) -> Result<(), EstimationError> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn from_csv(text: &str, delta: f64) -> Result<Self, EstimationError> {
        let mut observations = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if lineno == 0 || line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 11 {
                return Err(EstimationError::Parse {
                    line: lineno + 1,
                    message: format!("expected 11 fields, got {}", fields.len()),
                });
            }
            let parse_f = |s: &str, what: &str| -> Result<f64, EstimationError> {
                s.trim().parse::<f64>().map_err(|e| EstimationError::Parse {
                    line: lineno + 1,
                    message: format!("{what}: {e}"),
                })
            };
            let round: usize = fields[1].trim().parse().map_err(|e| EstimationError::Parse {
                line: lineno + 1,
                message: format!("round_sold: {e}"),
            })?;
            let price = if fields[2].trim().is_empty() {
                None
            } else {
                Some(parse_f(fields[2], "deal_price")?)
            };
            let entrants: u32 =
                fields[3].trim().parse().map_err(|e| EstimationError::Parse {
                    line: lineno + 1,
                    message: format!("entrants: {e}"),
                })?;
            let n: u32 = fields[4].trim().parse().map_err(|e| EstimationError::Parse {
                line: lineno + 1,
                message: format!("n: {e}"),
            })?;
            let obs = AuctionObservation {
                round_sold: if round == 0 { None } else { Some(round) },
                price,
                entrants,
                n,
                reserves: vec![
                    parse_f(fields[5], "r1")?,
                    parse_f(fields[6], "r2")?,
                    parse_f(fields[7], "r3")?,
                ],
                covariates: Covariates::new(
                    parse_f(fields[8], "log_assess")?,
                    parse_f(fields[9], "area_100m2")?,
                    parse_f(fields[10], "log_dist")?,
                ),
            };
            obs.validate()?;
            observations.push(obs);
        }
        if observations.is_empty() {
            return Err(EstimationError::EmptyDataset);
        }
        Ok(Self { observations, rounds: 3, delta })
    }

    pub fn read_csv(path: &std::path::Path, delta: f64) -> Result<Self, EstimationError> {
        Self::from_csv(&std::fs::read_to_string(path)?, delta)
    }
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal")
}

/// Inverse-CDF draw from `TRN(mean, sd, lo, hi)` given a uniform `u`.
/// A vanishing scale degenerates to the clamped location.
pub(crate) fn trn_sample_from_uniform(mean: f64, sd: f64, lo: f64, hi: f64, u: f64) -> f64 {
    if sd <= 1e-12 {
        return mean.clamp(lo, hi);
    }
    let n = std_normal();
    let a = n.cdf((lo - mean) / sd);
    let b = n.cdf((hi - mean) / sd);
    let p = (a + u * (b - a)).clamp(f64::MIN_POSITIVE, 1.0 - 1e-16);
    (mean + sd * n.inverse_cdf(p)).clamp(lo, hi)
}

/// Log-density of `TRN(mean, sd, lo, hi)` at `x`.
pub(crate) fn log_trn_pdf(x: f64, mean: f64, sd: f64, lo: f64, hi: f64) -> f64 {
    if x < lo || x > hi || sd <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let n = std_normal();
    let mass = n.cdf((hi - mean) / sd) - n.cdf((lo - mean) / sd);
    if mass <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let z = (x - mean) / sd;
    -0.5 * z * z - sd.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln() - mass.ln()
}

/// Analytic mean of `TRN(mean, sd, lo, hi)`.
pub(crate) fn trn_mean(mean: f64, sd: f64, lo: f64, hi: f64) -> f64 {
    if sd <= 1e-12 {
        return mean.clamp(lo, hi);
    }
    let n = std_normal();
    let a = (lo - mean) / sd;
    let b = (hi - mean) / sd;
    let mass = n.cdf(b) - n.cdf(a);
    let phi = |z: f64| (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
    mean + sd * (phi(a) - phi(b)) / mass
}

/// Draws `Λ = (μ, σ, K)` from the hyper-distributions at covariates `x`.
pub fn draw_primitives<R: rand::Rng + ?Sized>(
    b: &HyperParams,
    x: &Covariates,
    rng: &mut R,
) -> AuctionParams {
    let mu = trn_sample_from_uniform(
        x.dot(&b.beta_mu),
        b.omega_mu,
        MU_BOUNDS.0,
        MU_BOUNDS.1,
        rng.random::<f64>(),
    );
    let sigma = trn_sample_from_uniform(
        x.dot(&b.beta_sigma),
        b.omega_sigma,
        SIGMA_BOUNDS.0,
        SIGMA_BOUNDS.1,
        rng.random::<f64>(),
    );
    let entry_cost = trn_sample_from_uniform(
        x.dot(&b.beta_k),
        b.omega_k,
        K_BOUNDS.0,
        K_BOUNDS.1,
        rng.random::<f64>(),
    );
    AuctionParams { mu, sigma, entry_cost }
}

/// Log-density of `Λ` under the hyper-distributions at `(B, X)`.
pub fn log_primitive_density(b: &HyperParams, x: &Covariates, params: &AuctionParams) -> f64 {
    log_trn_pdf(params.mu, x.dot(&b.beta_mu), b.omega_mu, MU_BOUNDS.0, MU_BOUNDS.1)
        + log_trn_pdf(
            params.sigma,
            x.dot(&b.beta_sigma),
            b.omega_sigma,
            SIGMA_BOUNDS.0,
            SIGMA_BOUNDS.1,
        )
        + log_trn_pdf(
            params.entry_cost,
            x.dot(&b.beta_k),
            b.omega_k,
            K_BOUNDS.0,
            K_BOUNDS.1,
        )
}
