//! Buyer value distributions on a bounded support.
//!
//! Every solver in this crate works through [`ValueDistribution`]: CDF `F`,
//! density `f`, quantile, the order-statistic CDF `G(v) = F(v)^m` of the
//! highest rival value, partial expectations `∫ x dF(x)^m`, and the virtual
//! value `v − (1−F(v))/f(v)` used by profit-maximizing design.
//!
//! Four families are supported: uniform, a power-law CDF `F(v) = v^k` on
//! [0, 1], and truncated log-normal / truncated normal with renormalized
//! mass. Partial expectations use closed forms for the uniform and power
//! families and adaptive Gauss–Kronrod quadrature otherwise.

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};
use thiserror::Error;

use crate::numeric::adaptive_quad;

/// Absolute tolerance for quadrature-based partial expectations.
const QUAD_TOL: f64 = 1e-10;

/// Density below this level is treated as degenerate for the virtual value.
const DENSITY_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum DistError {
    #[error("invalid distribution parameters: {0}")]
    InvalidParameters(String),
    #[error("truncated probability mass below 1e-12")]
    NegligibleMass,
    #[error("degenerate density at v = {v}")]
    DegenerateDensity { v: f64 },
    #[error("unknown distribution family `{0}`")]
    UnknownFamily(String),
}

/// Parametric family tag. `Power(k)` is `F(v) = v^k` on [0, 1]; the truncated
/// families renormalize by the mass inside `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DistributionFamily {
    Uniform { a: f64, b: f64 },
    Power { k: f64 },
    TruncatedLogNormal { mu: f64, sigma: f64, lo: f64, hi: f64 },
    TruncatedNormal { mu: f64, sigma: f64, lo: f64, hi: f64 },
}

/// A buyer value law `F` on `[support_lo, support_hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValueDistribution {
    family: DistributionFamily,
    support_lo: f64,
    support_hi: f64,
    // Φ at the (transformed) truncation points and the mass between them;
    // (0, 1, 1) for the untruncated families.
    alpha: f64,
    beta: f64,
    mass: f64,
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal")
}

impl ValueDistribution {
    pub fn uniform(a: f64, b: f64) -> Result<Self, DistError> {
        if !(a.is_finite() && b.is_finite() && a < b) {
            return Err(DistError::InvalidParameters(format!(
                "uniform requires a < b, got ({a}, {b})"
            )));
        }
        Ok(Self {
            family: DistributionFamily::Uniform { a, b },
            support_lo: a,
            support_hi: b,
            alpha: 0.0,
            beta: 1.0,
            mass: 1.0,
        })
    }

    pub fn power(k: f64) -> Result<Self, DistError> {
        if !(k.is_finite() && k > 0.0) {
            return Err(DistError::InvalidParameters(format!(
                "power requires k > 0, got {k}"
            )));
        }
        Ok(Self {
            family: DistributionFamily::Power { k },
            support_lo: 0.0,
            support_hi: 1.0,
            alpha: 0.0,
            beta: 1.0,
            mass: 1.0,
        })
    }

    pub fn truncated_log_normal(mu: f64, sigma: f64, lo: f64, hi: f64) -> Result<Self, DistError> {
        if !(sigma.is_finite() && sigma > 0.0 && lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(DistError::InvalidParameters(format!(
                "trln requires sigma > 0 and lo < hi, got ({mu}, {sigma}, {lo}, {hi})"
            )));
        }
        if lo <= 0.0 {
            return Err(DistError::InvalidParameters(
                "trln requires a positive lower bound".into(),
            ));
        }
        let n = std_normal();
        let alpha = n.cdf((lo.ln() - mu) / sigma);
        let beta = n.cdf((hi.ln() - mu) / sigma);
        let mass = beta - alpha;
        if mass < 1e-12 {
            return Err(DistError::NegligibleMass);
        }
        Ok(Self {
            family: DistributionFamily::TruncatedLogNormal { mu, sigma, lo, hi },
            support_lo: lo,
            support_hi: hi,
            alpha,
            beta,
            mass,
        })
    }

    pub fn truncated_normal(mu: f64, sigma: f64, lo: f64, hi: f64) -> Result<Self, DistError> {
        if !(sigma.is_finite() && sigma > 0.0 && lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(DistError::InvalidParameters(format!(
                "trn requires sigma > 0 and lo < hi, got ({mu}, {sigma}, {lo}, {hi})"
            )));
        }
        let n = std_normal();
        let alpha = n.cdf((lo - mu) / sigma);
        let beta = n.cdf((hi - mu) / sigma);
        let mass = beta - alpha;
        if mass < 1e-12 {
            return Err(DistError::NegligibleMass);
        }
        Ok(Self {
            family: DistributionFamily::TruncatedNormal { mu, sigma, lo, hi },
            support_lo: lo,
            support_hi: hi,
            alpha,
            beta,
            mass,
        })
    }

    /// Builds from the tagged JSON-config record: family name plus a
    /// positional parameter list.
    pub fn from_spec(family: &str, params: &[f64]) -> Result<Self, DistError> {
        let need = |n: usize| {
            if params.len() == n {
                Ok(())
            } else {
                Err(DistError::InvalidParameters(format!(
                    "family `{family}` takes {n} parameters, got {}",
                    params.len()
                )))
            }
        };
        match family {
            "uniform" => {
                need(2)?;
                Self::uniform(params[0], params[1])
            }
            "power" => {
                need(1)?;
                Self::power(params[0])
            }
            "trln" => {
                need(4)?;
                Self::truncated_log_normal(params[0], params[1], params[2], params[3])
            }
            "trn" => {
                need(4)?;
                Self::truncated_normal(params[0], params[1], params[2], params[3])
            }
            other => Err(DistError::UnknownFamily(other.to_string())),
        }
    }

    pub fn family(&self) -> DistributionFamily {
        self.family
    }

    /// Support bounds `(v̲, v̄)`.
    pub fn support(&self) -> (f64, f64) {
        (self.support_lo, self.support_hi)
    }

    pub fn lo(&self) -> f64 {
        self.support_lo
    }

    pub fn hi(&self) -> f64 {
        self.support_hi
    }

    /// CDF `F(v)`. Values outside the support clamp to 0/1 so that
    /// root-finders may probe slightly past the bracket.
    pub fn cdf(&self, v: f64) -> f64 {
        if v <= self.support_lo {
            return 0.0;
        }
        if v >= self.support_hi {
            return 1.0;
        }
        match self.family {
            DistributionFamily::Uniform { a, b } => (v - a) / (b - a),
            DistributionFamily::Power { k } => v.powf(k),
            DistributionFamily::TruncatedLogNormal { mu, sigma, .. } => {
                let z = (v.ln() - mu) / sigma;
                ((std_normal().cdf(z) - self.alpha) / self.mass).clamp(0.0, 1.0)
            }
            DistributionFamily::TruncatedNormal { mu, sigma, .. } => {
                let z = (v - mu) / sigma;
                ((std_normal().cdf(z) - self.alpha) / self.mass).clamp(0.0, 1.0)
            }
        }
    }

    /// Density `f(v)` on the support, 0 outside.
    pub fn pdf(&self, v: f64) -> f64 {
        if v < self.support_lo || v > self.support_hi {
            return 0.0;
        }
        match self.family {
            DistributionFamily::Uniform { a, b } => 1.0 / (b - a),
            DistributionFamily::Power { k } => k * v.powf(k - 1.0),
            DistributionFamily::TruncatedLogNormal { mu, sigma, .. } => {
                let z = (v.ln() - mu) / sigma;
                std_normal().pdf(z) / (v * sigma * self.mass)
            }
            DistributionFamily::TruncatedNormal { mu, sigma, .. } => {
                let z = (v - mu) / sigma;
                std_normal().pdf(z) / (sigma * self.mass)
            }
        }
    }

    /// Inverse CDF; exact closed forms for every family.
    pub fn quantile(&self, p: f64) -> f64 {
        let p = p.clamp(0.0, 1.0);
        if p == 0.0 {
            return self.support_lo;
        }
        if p == 1.0 {
            return self.support_hi;
        }
        let v = match self.family {
            DistributionFamily::Uniform { a, b } => a + p * (b - a),
            DistributionFamily::Power { k } => p.powf(1.0 / k),
            DistributionFamily::TruncatedLogNormal { mu, sigma, .. } => {
                let z = std_normal().inverse_cdf(self.alpha + p * self.mass);
                (mu + sigma * z).exp()
            }
            DistributionFamily::TruncatedNormal { mu, sigma, .. } => {
                mu + sigma * std_normal().inverse_cdf(self.alpha + p * self.mass)
            }
        };
        v.clamp(self.support_lo, self.support_hi)
    }

    /// CDF of the highest value among `m` independent rivals: `F(v)^m`.
    /// `m = 0` is the empty maximum and returns 1.
    pub fn order_stat_cdf(&self, m: u32, v: f64) -> f64 {
        if m == 0 {
            return 1.0;
        }
        self.cdf(v).powi(m as i32)
    }

    /// Partial expectation against the order-statistic law:
    /// `∫_a^b x dF(x)^m`.
    ///
    /// Closed form for the uniform and power families; integration by parts
    /// with adaptive quadrature otherwise. `m = 0` or `a ≥ b` return 0.
    pub fn partial_expectation_dg(&self, m: u32, a: f64, b: f64) -> f64 {
        if m == 0 {
            return 0.0;
        }
        let a = a.max(self.support_lo);
        let b = b.min(self.support_hi);
        if a >= b {
            return 0.0;
        }
        let mf = f64::from(m);
        match self.family {
            DistributionFamily::Uniform { a: a0, b: b0 } => {
                // x = a0 + (b0-a0)u with u = F(x):
                // ∫ x d(u^m) = a0·Δu^m + (b0-a0)·m/(m+1)·Δu^(m+1).
                let ua = (a - a0) / (b0 - a0);
                let ub = (b - a0) / (b0 - a0);
                a0 * (ub.powi(m as i32) - ua.powi(m as i32))
                    + (b0 - a0) * mf / (mf + 1.0)
                        * (ub.powi(m as i32 + 1) - ua.powi(m as i32 + 1))
            }
            DistributionFamily::Power { k } => {
                // ∫ x d(x^(km)) = km/(km+1)·(b^(km+1) − a^(km+1)).
                let km = k * mf;
                km / (km + 1.0) * (b.powf(km + 1.0) - a.powf(km + 1.0))
            }
            _ => {
                // ∫ x dG = [x G]_a^b − ∫ G dx.
                let ga = self.order_stat_cdf(m, a);
                let gb = self.order_stat_cdf(m, b);
                let tail = adaptive_quad(&mut |x| self.order_stat_cdf(m, x), a, b, QUAD_TOL);
                b * gb - a * ga - tail
            }
        }
    }

    /// Mean of the distribution.
    pub fn mean(&self) -> f64 {
        self.partial_expectation_dg(1, self.support_lo, self.support_hi)
    }

    /// Virtual value `ψ(v) = v − (1−F(v))/f(v)`.
    pub fn virtual_value(&self, v: f64) -> Result<f64, DistError> {
        let f = self.pdf(v);
        if f < DENSITY_FLOOR {
            return Err(DistError::DegenerateDensity { v });
        }
        Ok(v - (1.0 - self.cdf(v)) / f)
    }

    /// One inverse-CDF draw.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.quantile(rng.random::<f64>())
    }
}
