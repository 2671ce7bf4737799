//! Renyi-DP accounting for the Poisson-subsampled Gaussian mechanism.
//!
//! For an integer order `alpha`, sampling rate `q` and noise multiplier
//! `sigma`, one step costs
//!
//! ```text
//! eps_alpha = 1/(alpha-1) * ln sum_{j=0..alpha} C(alpha,j) (1-q)^(alpha-j) q^j exp(j(j-1) / (2 sigma^2))
//! ```
//!
//! which is the order-`alpha` Renyi divergence of `(1-q) N(0, sigma^2) + q N(1, sigma^2)`
//! from `N(0, sigma^2)`. Steps compose by addition and the total converts to
//! `(eps, delta)` via `eps = eps_alpha + ln(1/delta) / (alpha - 1)`, minimized
//! over an order grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Integers 2..=64 plus 128 and 256.
pub fn default_orders() -> Vec<u32> {
    (2..=64).chain([128, 256]).collect()
}

/// Per-step RDP at integer order `alpha >= 2`.
///
/// Returns `f64::INFINITY` when `sigma == 0` and `q > 0`: an unbounded
/// privacy cost rather than an error.
pub fn rdp_subsampled_gaussian(q: f64, sigma: f64, alpha: u32) -> f64 {
    debug_assert!((0.0..=1.0).contains(&q) && sigma >= 0.0 && alpha >= 2);
    if q == 0.0 {
        return 0.0;
    }
    if sigma == 0.0 {
        return f64::INFINITY;
    }
    let a = alpha as f64;
    let inv_two_var = 1.0 / (2.0 * sigma * sigma);
    if q == 1.0 {
        return a * inv_two_var;
    }

    // With J ~ Binomial(alpha, q) the sum is E[exp(J(J-1)/(2 sigma^2))].
    // Its excess over 1 only involves j >= 2, where every term is positive:
    //   A - 1 = sum_{j>=2} P(J = j) * expm1(j(j-1)/(2 sigma^2)).
    let ln_q = q.ln();
    let ln_1mq = (-q).ln_1p();
    let mut ln_binom = a.ln();
    let mut terms = Vec::with_capacity(alpha as usize - 1);
    for j in 2..=alpha {
        ln_binom += ((alpha - j + 1) as f64).ln() - (j as f64).ln();
        let jf = j as f64;
        terms.push(ln_binom + (a - jf) * ln_1mq + jf * ln_q + ln_expm1(jf * (jf - 1.0) * inv_two_var));
    }
    softplus(log_sum_exp(&terms)) / (a - 1.0)
}

/// `ln(e^x - 1)` for `x > 0`.
fn ln_expm1(x: f64) -> f64 {
    if x > 40.0 {
        x + (-(-x).exp()).ln_1p()
    } else {
        x.exp_m1().ln()
    }
}

/// `ln(1 + e^x)`.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// RDP of `steps` identical mechanisms.
pub fn compose(rdp_per_step: f64, steps: u64) -> f64 {
    if steps == 0 {
        0.0
    } else {
        rdp_per_step * steps as f64
    }
}

/// `eps_alpha + ln(1/delta) / (alpha - 1)`.
pub fn rdp_to_dp(rdp: f64, alpha: f64, delta: f64) -> f64 {
    rdp + (1.0 / delta).ln() / (alpha - 1.0)
}

/// The inputs from which a cumulative `(eps, delta)` guarantee is computed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyLedger {
    pub sampling_rate: f64,
    pub noise_multiplier: f64,
    pub steps: u64,
    pub delta: f64,
    pub orders: Vec<u32>,
}

impl PrivacyLedger {
    pub fn new(sampling_rate: f64, noise_multiplier: f64, steps: u64, delta: f64) -> Self {
        Self {
            sampling_rate,
            noise_multiplier,
            steps,
            delta,
            orders: default_orders(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.sampling_rate) {
            return Err(Error::config("q", "sampling rate must lie in [0, 1]"));
        }
        if self.noise_multiplier.is_nan() || self.noise_multiplier < 0.0 {
            return Err(Error::config("sigma", "noise multiplier must be >= 0"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::config("delta", "delta must lie in (0, 1)"));
        }
        if self.orders.is_empty() {
            return Err(Error::config("orders", "order grid is empty"));
        }
        if let Some(a) = self.orders.iter().find(|&&a| a < 2) {
            return Err(Error::config("orders", format!("order {a} must be >= 2")));
        }
        Ok(())
    }

    /// Smallest `eps` over the order grid and the order attaining it.
    pub fn epsilon(&self) -> Result<(f64, u32)> {
        let curve = RdpCurve::new(
            self.sampling_rate,
            self.noise_multiplier,
            self.delta,
            self.orders.clone(),
        )?;
        Ok(curve.epsilon_at(self.steps))
    }
}

/// See [`PrivacyLedger::epsilon`].
pub fn epsilon(ledger: &PrivacyLedger) -> Result<(f64, u32)> {
    ledger.epsilon()
}

/// Per-step RDP over an order grid, cached so that cumulative `eps` can be
/// queried for every step of a run.
#[derive(Debug, Clone)]
pub struct RdpCurve {
    orders: Vec<u32>,
    per_step: Vec<f64>,
    delta: f64,
}

impl RdpCurve {
    pub fn new(sampling_rate: f64, noise_multiplier: f64, delta: f64, orders: Vec<u32>) -> Result<Self> {
        PrivacyLedger {
            sampling_rate,
            noise_multiplier,
            steps: 0,
            delta,
            orders: orders.clone(),
        }
        .validate()?;
        let per_step = orders
            .iter()
            .map(|&a| rdp_subsampled_gaussian(sampling_rate, noise_multiplier, a))
            .collect();
        Ok(Self {
            orders,
            per_step,
            delta,
        })
    }

    pub fn orders(&self) -> &[u32] {
        &self.orders
    }

    pub fn per_step(&self) -> &[f64] {
        &self.per_step
    }

    /// `(eps, best order)` after `steps` steps; ties go to the smaller order.
    pub fn epsilon_at(&self, steps: u64) -> (f64, u32) {
        let mut best = (f64::INFINITY, self.orders[0]);
        for (&a, &rdp) in self.orders.iter().zip(&self.per_step) {
            let eps = rdp_to_dp(compose(rdp, steps), a as f64, self.delta);
            if eps < best.0 {
                best = (eps, a);
            }
        }
        best
    }
}

/// Noise multiplier for the classic Gaussian mechanism:
/// `sigma = c * sensitivity / eps` with `c = sqrt(2 ln(1.25 / delta))`,
/// nudged up by 1e-9 so the strict inequality `c^2 > 2 ln(1.25/delta)` holds.
/// Only valid for `0 < eps < 1`.
pub fn calibrate_sigma(eps: f64, delta: f64, sensitivity: f64) -> Result<f64> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::Domain(format!(
            "the Gaussian mechanism bound needs 0 < eps < 1, got {eps}"
        )));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Domain(format!("delta must lie in (0, 1), got {delta}")));
    }
    if !(sensitivity > 0.0 && sensitivity.is_finite()) {
        return Err(Error::Domain(format!(
            "sensitivity must be positive, got {sensitivity}"
        )));
    }
    let c = (2.0 * (1.25 / delta).ln()).sqrt() * (1.0 + 1e-9);
    Ok(c * sensitivity / eps)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rdp_trivial_cases() {
        for a in [2, 7, 256] {
            assert_eq!(rdp_subsampled_gaussian(0.0, 0.3, a), 0.0);
            assert_eq!(rdp_subsampled_gaussian(0.1, 0.0, a), f64::INFINITY);
        }
        assert_eq!(rdp_subsampled_gaussian(1.0, 1.0, 2), 1.0);
        for (s, a) in [(0.5, 3u32), (1.1, 64), (4.0, 256)] {
            let exact = a as f64 / (2.0 * s * s);
            assert!((rdp_subsampled_gaussian(1.0, s, a) - exact).abs() <= 1e-12 * exact);
        }
    }

    #[test]
    fn rdp_order_two_closed_form() {
        // alpha = 2: ln(1 + q^2 (e^{1/sigma^2} - 1))
        let (q, s) = (0.01f64, 1.1f64);
        let expected = (q * q * ((1.0 / (s * s)).exp() - 1.0)).ln_1p();
        let got = rdp_subsampled_gaussian(q, s, 2);
        assert!((got - expected).abs() <= 1e-12 * expected, "{got} {expected} {}", (got - expected) / expected);
        assert!((got - 1.2851e-4).abs() < 5e-8);
    }

    #[test]
    fn large_orders_do_not_overflow() {
        let v = rdp_subsampled_gaussian(0.5, 0.1, 256);
        assert!(v.is_finite() && v > 0.0);
    }

    #[test]
    fn compose_examples() {
        assert_eq!(compose(0.3, 0), 0.0);
        assert_eq!(compose(f64::INFINITY, 0), 0.0);
        assert_eq!(compose(0.3, 1), 0.3);
        let per = 1.2851e-4;
        let summed: f64 = (0..100).map(|_| per).sum();
        assert!((compose(per, 100) - 1.2851e-2).abs() < 1e-15);
        assert!((compose(per, 100) - summed).abs() < 1e-14);
    }

    #[test]
    fn conversion_examples() {
        assert_eq!(rdp_to_dp(0.7, 5.0, 1.0), 0.7);
        assert!((rdp_to_dp(0.5, 2.0, 1e-5) - 12.0129).abs() < 1e-4);
        assert!((rdp_to_dp(1.0, 101.0, 1e-5) - 1.11513).abs() < 1e-5);
    }

    #[test]
    fn zero_steps_leaves_only_conversion_term() {
        let ledger = PrivacyLedger::new(0.01, 1.1, 0, 1e-5);
        let (eps, alpha) = ledger.epsilon().unwrap();
        assert_eq!(alpha, 256);
        assert!((eps - (1e5f64).ln() / 255.0).abs() < 1e-15);
    }

    #[test]
    fn empty_grid_is_config_error() {
        let mut ledger = PrivacyLedger::new(0.01, 1.1, 10, 1e-5);
        ledger.orders.clear();
        assert!(matches!(ledger.epsilon(), Err(Error::Config { .. })));
        ledger.orders = vec![1];
        assert!(ledger.epsilon().is_err());
    }

    #[test]
    fn ties_prefer_smaller_order() {
        // q = 0 makes every order cost nothing; duplicate orders tie exactly.
        let mut ledger = PrivacyLedger::new(0.0, 1.0, 5, 1e-5);
        ledger.orders = vec![8, 8, 16, 16];
        assert_eq!(ledger.epsilon().unwrap().1, 16);
        ledger.orders = vec![3, 3];
        assert_eq!(ledger.epsilon().unwrap().1, 3);
    }

    #[test]
    fn calibration() {
        let s = calibrate_sigma(1.0 - 1e-9, 1e-5, 1.0).unwrap();
        let bound = (2.0 * 1.25e5f64.ln()).sqrt();
        assert!(s > bound && (s / bound - 1.0).abs() < 1e-8);
        assert!((s - 4.8448).abs() < 1e-4);
        let base = calibrate_sigma(0.5, 1e-5, 1.0).unwrap();
        assert_eq!(calibrate_sigma(0.25, 1e-5, 1.0).unwrap(), 2.0 * base);
        assert_eq!(calibrate_sigma(0.5, 1e-5, 2.0).unwrap(), 2.0 * base);
        assert!(matches!(calibrate_sigma(1.0, 1e-5, 1.0), Err(Error::Domain(_))));
        assert!(calibrate_sigma(0.0, 1e-5, 1.0).is_err());
        assert!(calibrate_sigma(0.5, 0.0, 1.0).is_err());
    }
}
