//! Tail-risk statistics and the CVaR Lagrangian.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Episode losses, optionally with exact probabilities (from enumeration).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossSamples {
    pub values: Vec<f64>,
    pub weights: Option<Vec<f64>>,
}

impl LossSamples {
    pub fn unweighted(values: Vec<f64>) -> Self {
        Self { values, weights: None }
    }

    pub fn weighted(values: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if values.len() != weights.len() {
            return Err(Error::Domain("values and weights differ in length".into()));
        }
        let total: f64 = weights.iter().sum();
        if weights.iter().any(|w| *w < 0.0) || (total - 1.0).abs() > 1e-12 * (1.0 + weights.len() as f64) {
            return Err(Error::Domain(format!("weights must be non-negative and sum to 1 (sum {total})")));
        }
        Ok(Self {
            values,
            weights: Some(weights),
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `(value, probability)` pairs.
    pub fn atoms(&self) -> Vec<(f64, f64)> {
        match &self.weights {
            Some(w) => self.values.iter().copied().zip(w.iter().copied()).collect(),
            None => {
                let p = 1.0 / self.values.len() as f64;
                self.values.iter().map(|&v| (v, p)).collect()
            }
        }
    }

    /// `𝔼[f(𝒞)]`.
    pub fn expect(&self, f: impl Fn(f64) -> f64) -> f64 {
        match &self.weights {
            Some(w) => self.values.iter().zip(w).map(|(&v, &p)| p * f(v)).sum(),
            None => self.values.iter().map(|&v| f(v)).sum::<f64>() / self.values.len() as f64,
        }
    }

    pub fn mean(&self) -> f64 {
        self.expect(|v| v)
    }

    pub fn std_dev(&self) -> f64 {
        let m = self.mean();
        let var = self.expect(|v| (v - m) * (v - m));
        match &self.weights {
            Some(_) => var.sqrt(),
            None if self.len() > 1 => (var * self.len() as f64 / (self.len() - 1) as f64).sqrt(),
            None => 0.0,
        }
    }

    /// Indices sorted by value descending; ties keep sample order.
    fn order_desc(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.values.len()).collect();
        idx.sort_by(|&a, &b| self.values[b].total_cmp(&self.values[a]));
        idx
    }
}

fn check(samples: &LossSamples, epsilon: f64) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::Domain("risk statistic of an empty sample".into()));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::Domain(format!("epsilon must lie in (0, 1), got {epsilon}")));
    }
    Ok(())
}

/// Number of top samples forming the empirical ε-tail, `⌈εN⌉`.
pub fn tail_count(n: usize, epsilon: f64) -> usize {
    ((epsilon * n as f64 - 1e-9).ceil() as usize).clamp(1, n)
}

/// Upper-ε value at risk: the largest `z` with `P(𝒞 ≥ z) ≥ ε`.
pub fn var_epsilon(samples: &LossSamples, epsilon: f64) -> Result<f64> {
    check(samples, epsilon)?;
    let order = samples.order_desc();
    match &samples.weights {
        None => Ok(samples.values[order[tail_count(samples.len(), epsilon) - 1]]),
        Some(w) => {
            let mut mass = 0.0;
            for &i in &order {
                mass += w[i];
                if mass >= epsilon - 1e-12 {
                    return Ok(samples.values[i]);
                }
            }
            Ok(samples.values[*order.last().unwrap()])
        }
    }
}

/// Conditional value at risk.
///
/// Unweighted samples: mean of the top `⌈εN⌉` values. Weighted samples: mean of
/// the upper ε probability mass, splitting the boundary atom, which equals
/// `min_v surrogate(v)` exactly.
pub fn cvar_epsilon(samples: &LossSamples, epsilon: f64) -> Result<f64> {
    check(samples, epsilon)?;
    let order = samples.order_desc();
    match &samples.weights {
        None => {
            let k = tail_count(samples.len(), epsilon);
            Ok(order[..k].iter().map(|&i| samples.values[i]).sum::<f64>() / k as f64)
        }
        Some(w) => {
            let mut remaining = epsilon;
            let mut acc = 0.0;
            for &i in &order {
                let take = w[i].min(remaining);
                acc += take * samples.values[i];
                remaining -= take;
                if remaining <= 0.0 {
                    break;
                }
            }
            Ok(acc / (epsilon - remaining.max(0.0)))
        }
    }
}

/// `v + 𝔼[max(0, 𝒞 − v)]/ε`.
pub fn surrogate(v: f64, samples: &LossSamples, epsilon: f64) -> Result<f64> {
    check(samples, epsilon)?;
    Ok(v + samples.expect(|c| (c - v).max(0.0)) / epsilon)
}

/// `𝔼[1(𝒞 ≥ v)]`.
pub fn indicator_mean(samples: &LossSamples, v: f64) -> f64 {
    samples.expect(|c| if c >= v { 1.0 } else { 0.0 })
}

/// `𝔼[max(0, 𝒞 − v)]`.
pub fn dprime_mean(samples: &LossSamples, v: f64) -> f64 {
    samples.expect(|c| (c - v).max(0.0))
}

/// The saddle-point iterate `(v, λ)` with its fixed constants and step sizes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LagrangianState {
    pub v: f64,
    pub lambda: f64,
    pub zeta: f64,
    pub epsilon: f64,
    pub alpha_v: f64,
    pub alpha_lambda: f64,
}

impl LagrangianState {
    pub fn new(v: f64, lambda: f64, zeta: f64, epsilon: f64, alpha_v: f64, alpha_lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0) {
            return Err(Error::Domain(format!("lambda must be non-negative, got {lambda}")));
        }
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(Error::Domain(format!("epsilon must lie in (0, 1), got {epsilon}")));
        }
        if !(alpha_v >= 0.0 && alpha_lambda >= 0.0) {
            return Err(Error::Domain("step sizes must be non-negative".into()));
        }
        Ok(Self {
            v,
            lambda,
            zeta,
            epsilon,
            alpha_v,
            alpha_lambda,
        })
    }
}

/// `𝔼[𝒞] + λ(v + 𝔼[𝒞″]/ε − ζ)`.
pub fn lagrangian_value(soft_robust_loss: f64, dprime_mean: f64, state: &LagrangianState) -> f64 {
    soft_robust_loss + state.lambda * (state.v + dprime_mean / state.epsilon - state.zeta)
}

/// `λ(1 − 𝔼[1(𝒞 ≥ v)]/ε)`, the subgradient of the Lagrangian in `v`.
pub fn grad_v(state: &LagrangianState, indicator_mean: f64) -> f64 {
    state.lambda * (1.0 - indicator_mean / state.epsilon)
}

/// `v + 𝔼[𝒞″]/ε − ζ`; positive means the constraint is violated.
pub fn grad_lambda(state: &LagrangianState, dprime_mean: f64) -> f64 {
    state.v + dprime_mean / state.epsilon - state.zeta
}

/// Descent in `v`, projected ascent in `λ`.
pub fn update_v_lambda(state: &LagrangianState, grad_v: f64, grad_lambda: f64) -> LagrangianState {
    LagrangianState {
        v: state.v - state.alpha_v * grad_v,
        lambda: (state.lambda + state.alpha_lambda * grad_lambda).max(0.0),
        ..*state
    }
}
