//! Independent reference implementations used by the integration tests.
//!
//! Nothing here calls into the code paths it is used to check: the forward
//! oracle multiplies matrices by index arithmetic over the flattened
//! parameters, gradients are checked with central differences, and Renyi
//! divergences come from direct quadrature over the real line.

#![allow(dead_code)]

use dpfg::model::Model;
use dpfg::tensor::Tensor;

/// Logits by explicit index arithmetic on `model.flatten()`.
pub fn forward_oracle(model: &Model, inputs: &Tensor) -> Vec<f64> {
    let params = model.flatten();
    let (batch, features) = (inputs.shape()[0], inputs.shape()[1]);
    let mut widths = vec![features];
    widths.extend(model.layers().iter().map(|l| l.weight.shape()[1]));
    let act = model.hidden_activation();

    let mut out = Vec::new();
    for r in 0..batch {
        let mut h: Vec<f64> = inputs.data()[r * features..(r + 1) * features].to_vec();
        let mut offset = 0;
        for l in 0..widths.len() - 1 {
            let (fi, fo) = (widths[l], widths[l + 1]);
            let w = &params[offset..offset + fi * fo];
            let b = &params[offset + fi * fo..offset + fi * fo + fo];
            offset += fi * fo + fo;
            let mut z = vec![0.0; fo];
            for j in 0..fo {
                let mut s = b[j];
                for i in 0..fi {
                    s += h[i] * w[i * fo + j];
                }
                z[j] = s;
            }
            if l + 2 < widths.len() {
                for v in &mut z {
                    *v = match act {
                        dpfg::Activation::Relu => v.max(0.0),
                        dpfg::Activation::Tanh => v.tanh(),
                    };
                }
            }
            h = z;
        }
        out.extend(h);
    }
    out
}

/// Mean softmax cross-entropy computed from the oracle logits.
pub fn loss_oracle(model: &Model, inputs: &Tensor, labels: &[usize]) -> f64 {
    let logits = forward_oracle(model, inputs);
    let k = model.class_count();
    let mut total = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        let row = &logits[r * k..(r + 1) * k];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += lse - row[y];
    }
    total / labels.len() as f64
}

/// Central difference of the loss along parameter `i`.
pub fn finite_difference(model: &Model, inputs: &Tensor, labels: &[usize], i: usize, h: f64) -> f64 {
    let mut p = model.flatten();
    let orig = p[i];
    p[i] = orig + h;
    let plus = loss_oracle(&model.unflatten(&p).unwrap(), inputs, labels);
    p[i] = orig - h;
    let minus = loss_oracle(&model.unflatten(&p).unwrap(), inputs, labels);
    (plus - minus) / (2.0 * h)
}

/// Partials below this magnitude are compared absolutely: a central
/// difference with step 1e-5 carries ~1e-10 of rounding and truncation noise,
/// which would swamp a relative comparison against an exact zero partial.
pub const GRAD_FLOOR: f64 = 1e-4;

/// `|a - n| / max(|a|, |n|, GRAD_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_FLOOR)
}

/// Neumaier-compensated sum.
struct Sum {
    sum: f64,
    comp: f64,
}

impl Sum {
    fn new() -> Self {
        Sum { sum: 0.0, comp: 0.0 }
    }
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }
    fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

fn ln_normal_pdf(z: f64, sigma: f64) -> f64 {
    -0.5 * (z / sigma).powi(2) - (sigma * (2.0 * std::f64::consts::PI).sqrt()).ln()
}

/// `ln(1 - q + q e^u)` without overflow.
fn ln_mixture_ratio(q: f64, u: f64) -> f64 {
    if u > 700.0 {
        let base = q.ln() + u;
        base + ((1.0 - q) * (-base).exp()).ln_1p()
    } else {
        (q * u.exp_m1()).ln_1p()
    }
}

/// Order-`alpha` Renyi divergence of `(1-q) N(0, s^2) + q N(1, s^2)` from
/// `N(0, s^2)` by trapezoidal quadrature over `[-14 s, alpha + 14 s]`.
///
/// When the moment `A = E_0[(mix/base)^alpha]` is moderate, `A - 1` is
/// integrated directly (accurate even when the divergence is ~1e-8);
/// otherwise `ln A` is accumulated in log space.
pub fn renyi_quadrature(q: f64, sigma: f64, alpha: f64) -> f64 {
    let lo = -14.0 * sigma;
    let hi = alpha + 14.0 * sigma;
    let h = sigma / 100.0;
    let n = ((hi - lo) / h).ceil() as usize;
    let h = (hi - lo) / n as f64;
    let two_var = 2.0 * sigma * sigma;

    let log_integrand = |z: f64| {
        let u = (2.0 * z - 1.0) / two_var;
        ln_normal_pdf(z, sigma) + alpha * ln_mixture_ratio(q, u)
    };

    // Peak of the log integrand decides which route is safe.
    let peak = (0..=n)
        .map(|i| log_integrand(lo + i as f64 * h))
        .fold(f64::NEG_INFINITY, f64::max);

    if peak < 20.0 {
        let mut excess = Sum::new();
        for i in 0..=n {
            let z = lo + i as f64 * h;
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            let u = (2.0 * z - 1.0) / two_var;
            let s = alpha * ln_mixture_ratio(q, u);
            let base = ln_normal_pdf(z, sigma).exp();
            excess.add(w * base * s.exp_m1());
        }
        (excess.value() * h).ln_1p() / (alpha - 1.0)
    } else {
        let mut total = Sum::new();
        for i in 0..=n {
            let z = lo + i as f64 * h;
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            total.add(w * (log_integrand(z) - peak).exp());
        }
        (peak + (total.value() * h).ln()) / (alpha - 1.0)
    }
}

/// Smallest `eps` over `orders` using quadrature RDP.
pub fn epsilon_oracle(q: f64, sigma: f64, steps: u64, delta: f64, orders: &[u32]) -> (f64, u32) {
    let mut best = (f64::INFINITY, 0);
    for &a in orders {
        let rdp = renyi_quadrature(q, sigma, a as f64);
        let eps = steps as f64 * rdp + (1.0 / delta).ln() / (a as f64 - 1.0);
        if eps < best.0 {
            best = (eps, a);
        }
    }
    best
}

/// Golden one-epoch epsilon at q = 0.00427, sigma = 1.1, delta = 1e-5,
/// T = 234 over orders 2..=64, 128, 256. Produced by `epsilon_oracle` and
/// confirmed against a 60-digit evaluation of the binomial moment.
pub const GOLDEN_EPOCH_EPSILON: f64 = 1.0344425270865231;
pub const GOLDEN_EPOCH_ORDER: u32 = 13;

/// Plain minibatch SGD on mean cross-entropy, used as a convergence
/// reference. Deterministic full passes in index order.
pub fn plain_sgd(model: &Model, inputs: &Tensor, labels: &[usize], lr: f64, epochs: usize, batch: usize) -> Model {
    let mut m = model.clone();
    let n = labels.len();
    for _ in 0..epochs {
        let mut start = 0;
        while start < n {
            let end = (start + batch).min(n);
            let rows: Vec<usize> = (start..end).collect();
            let x = inputs.select_rows(&rows).unwrap();
            let (_, g) = m.loss_and_grad(&x, &labels[start..end]).unwrap();
            m = m.apply_update(g.data(), lr).unwrap();
            start = end;
        }
    }
    m
}

/// `c^2 n - |f|^2` summed as `(c - |f_i|)(c + |f_i|)`. Positive exactly when
/// the norm bound `|f| < c sqrt(n)` holds, without the upward rounding that
/// evaluating `|f|` itself picks up on saturated vectors.
pub fn norm_deficit(f: &[f64], c: f64) -> f64 {
    f.iter().map(|v| (c - v.abs()) * (c + v.abs())).sum()
}
