//! Diffusion time functions and the trapezoid quadrature behind every
//! time-averaged quantity.
//!
//! The forward process is the Ornstein-Uhlenbeck SDE
//! dX = -X/2 dt + dW, whose transition kernel is
//! N(alpha(t) x0, h(t) I) with alpha = exp(-t/2) and h = 1 - exp(-t).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Time window [t0, T] with a uniform trapezoid rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionSchedule {
    pub t0: f64,
    #[serde(rename = "T")]
    pub t_end: f64,
    pub n_nodes: usize,
}

impl Default for DiffusionSchedule {
    fn default() -> Self {
        // 1/h^2 blows up as t0 -> 0; these keep integrands around 1e4.
        DiffusionSchedule {
            t0: 0.01,
            t_end: 1.0,
            n_nodes: 64,
        }
    }
}

/// alpha, h, h_tilde and rho at a single time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleValues {
    /// e^{-t/2}
    pub alpha: f64,
    /// 1 - e^{-t}
    pub h: f64,
    /// alpha^2 sigma^2 + h
    pub h_tilde: f64,
    /// alpha^2 sigma^2 / h_tilde = 1 - h / h_tilde
    pub rho: f64,
}

/// Evaluates the schedule functions for noise level `sigma`.
pub fn schedule_eval(t: f64, sigma: f64) -> Result<ScheduleValues> {
    if t < 0.0 || !t.is_finite() {
        return Err(Error::NegativeTime { t });
    }
    let alpha = (-t / 2.0).exp();
    // exp_m1 keeps h accurate near t = 0.
    let h = -(-t).exp_m1();
    let h_tilde = alpha * alpha * sigma * sigma + h;
    let rho = if h_tilde > 0.0 {
        alpha * alpha * sigma * sigma / h_tilde
    } else {
        0.0
    };
    Ok(ScheduleValues {
        alpha,
        h,
        h_tilde,
        rho,
    })
}

/// A time average together with its per-node integrand samples.
#[derive(Debug, Clone)]
pub struct TimeAverage {
    pub value: f64,
    pub per_node: Vec<f64>,
}

impl DiffusionSchedule {
    pub fn new(t0: f64, t_end: f64, n_nodes: usize) -> Result<Self> {
        if !(t0 > 0.0 && t_end > t0) || n_nodes < 2 {
            return Err(Error::InvalidArgument(format!(
                "need 0 < t0 < T and n_nodes >= 2, got t0 = {t0}, T = {t_end}, n = {n_nodes}"
            )));
        }
        Ok(DiffusionSchedule { t0, t_end, n_nodes })
    }

    /// Uniform quadrature nodes in [t0, T].
    pub fn nodes(&self) -> Vec<f64> {
        let n = self.n_nodes;
        let dt = (self.t_end - self.t0) / (n - 1) as f64;
        (0..n).map(|i| self.t0 + i as f64 * dt).collect()
    }

    /// Trapezoid weights; they sum to T - t0.
    pub fn weights(&self) -> Vec<f64> {
        let n = self.n_nodes;
        let dt = (self.t_end - self.t0) / (n - 1) as f64;
        (0..n)
            .map(|i| if i == 0 || i == n - 1 { dt / 2.0 } else { dt })
            .collect()
    }

    pub fn window(&self) -> f64 {
        self.t_end - self.t0
    }

    /// (1/(T - t0)) integral of the integrand, by the trapezoid rule.
    pub fn time_average(&self, integrand: impl FnMut(f64) -> f64) -> Result<TimeAverage> {
        let per_node: Vec<f64> = self.nodes().into_iter().map(integrand).collect();
        self.average_of_samples(&per_node)
    }

    /// Combines already-evaluated per-node integrand values.
    pub fn average_of_samples(&self, per_node: &[f64]) -> Result<TimeAverage> {
        assert_eq!(per_node.len(), self.n_nodes, "one sample per node");
        let nodes = self.nodes();
        let mut sum = 0.0;
        for ((&v, &w), &t) in per_node.iter().zip(self.weights().iter()).zip(nodes.iter()) {
            if !v.is_finite() {
                return Err(Error::NonFiniteIntegrand { node: t });
            }
            sum += w * v;
        }
        Ok(TimeAverage {
            value: sum / self.window(),
            per_node: per_node.to_vec(),
        })
    }
}
