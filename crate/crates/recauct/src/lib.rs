//! Toolkit for recurring English auctions with costly, informed entry.
//!
//! A seller offers one item through up to `T` English auctions, holding a
//! follow-up round only when the previous round fails. Potential buyers know
//! their private values and pay a sunk entry cost to participate, which makes
//! them sort their entry over time: strong buyers enter early, weak buyers
//! wait until failed rounds reveal a less competitive field.
//!
//! The crate covers the full pipeline around that game:
//!
//! - [`distributions`]: value-distribution families and the order-statistic
//!   integrals every other module consumes;
//! - [`equilibrium`]: the symmetric entry-threshold equilibrium for a given
//!   reserve-price sequence, and the inverse map from thresholds to reserves;
//! - [`outcomes`]: closed-form expected surplus, seller revenue, and failure
//!   probabilities, plus single-round benchmarks;
//! - [`design`]: efficiency- and profit-maximizing reserve sequences;
//! - [`simulate`]: seeded Monte Carlo play-out used as an independent oracle
//!   and as the synthetic-data engine;
//! - [`estimation`]: simulated maximum likelihood with importance sampling
//!   over auction-level heterogeneity in value distribution and entry cost.

pub mod design;
pub mod distributions;
pub mod equilibrium;
pub mod estimation;
pub mod numeric;
pub mod outcomes;
pub mod simulate;

pub use design::{DesignResult, Objective};
pub use distributions::{DistError, DistributionFamily, ValueDistribution};
pub use equilibrium::{AuctionPrimitives, EquilibriumError, SolveResult, ThresholdSequence};
pub use outcomes::OutcomeSummary;
pub use simulate::{AuctionOutcome, MonteCarloSummary};
