//! Discrete knowledge-state transition dynamics.
//!
//! One step maps a distribution over knowledge states through the verifier
//! (state -> detected conflict label) and then the generator
//! (label -> new state):
//!
//! `p_t(k_n) = sum_c sum_k p_model(k_n | c) * p_verify(c | k) * p_{t-1}(k)`

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ComplexityError;

pub const NORMALIZATION_TOL: f64 = 1e-12;

/// `verify_kernel[k][c] = p_verify(c | k)` and
/// `model_kernel[c][k_n] = p_model(k_n | c)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionModel {
    pub states: Vec<String>,
    pub labels: Vec<String>,
    pub verify_kernel: Vec<Vec<f64>>,
    pub model_kernel: Vec<Vec<f64>>,
    pub initial: Vec<f64>,
    /// Optional per-state complexity, used to derive an expected-complexity
    /// schedule from the iterated distributions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub complexity: Option<Vec<f64>>,
}

fn check_distribution(what: &str, row: &[f64], len: usize) -> Result<(), ComplexityError> {
    if row.len() != len {
        return Err(ComplexityError::InvalidKernel(format!("{what}: expected {len} entries, got {}", row.len())));
    }
    if let Some(v) = row.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
        return Err(ComplexityError::InvalidKernel(format!("{what}: entry {v} is not a probability")));
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > NORMALIZATION_TOL {
        return Err(ComplexityError::InvalidKernel(format!("{what}: sums to {sum}")));
    }
    Ok(())
}

impl TransitionModel {
    pub fn validate(&self) -> Result<(), ComplexityError> {
        let (ns, nl) = (self.states.len(), self.labels.len());
        if ns == 0 || nl == 0 {
            return Err(ComplexityError::InvalidKernel("states and labels must be non-empty".into()));
        }
        if self.verify_kernel.len() != ns {
            return Err(ComplexityError::InvalidKernel(format!("verify_kernel needs {ns} rows")));
        }
        if self.model_kernel.len() != nl {
            return Err(ComplexityError::InvalidKernel(format!("model_kernel needs {nl} rows")));
        }
        for (k, row) in self.verify_kernel.iter().enumerate() {
            check_distribution(&format!("verify_kernel[{}]", self.states[k]), row, nl)?;
        }
        for (c, row) in self.model_kernel.iter().enumerate() {
            check_distribution(&format!("model_kernel[{}]", self.labels[c]), row, ns)?;
        }
        check_distribution("initial", &self.initial, ns)?;
        if let Some(cx) = &self.complexity {
            if cx.len() != ns || cx.iter().any(|v| !(*v >= 0.0)) {
                return Err(ComplexityError::InvalidKernel("complexity needs one non-negative value per state".into()));
            }
        }
        Ok(())
    }

    pub fn from_json_file(path: &Path) -> Result<Self, ComplexityError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ComplexityError::InvalidKernel(format!("{}: {e}", path.display())))?;
        let model: TransitionModel =
            serde_json::from_str(&text).map_err(|e| ComplexityError::InvalidKernel(e.to_string()))?;
        model.validate()?;
        Ok(model)
    }

    /// Marginal over conflict labels: `p(c) = sum_k p_verify(c | k) p(k)`.
    pub fn label_marginal(&self, current: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.labels.len()];
        for (k, pk) in current.iter().enumerate() {
            for (c, pv) in self.verify_kernel[k].iter().enumerate() {
                out[c] += pv * pk;
            }
        }
        out
    }

    /// The same step written through the verifier posterior
    /// `p(k | c) = p_verify(c | k) p(k) / p(c)`:
    /// `p_t(k_n) = sum_{k,c} p(c) p(k | c) p_model(k_n | c)`.
    /// Labels with zero marginal contribute nothing.
    pub fn bayesian_step(&self, current: &[f64]) -> Result<Vec<f64>, ComplexityError> {
        self.validate()?;
        check_distribution("current", current, self.states.len())?;
        let marginal = self.label_marginal(current);
        let mut out = vec![0.0; self.states.len()];
        for (c, &pc) in marginal.iter().enumerate() {
            if pc == 0.0 {
                continue;
            }
            for (k, &pk) in current.iter().enumerate() {
                let posterior = self.verify_kernel[k][c] * pk / pc;
                for (kn, pm) in self.model_kernel[c].iter().enumerate() {
                    out[kn] += pc * posterior * pm;
                }
            }
        }
        Ok(out)
    }

    /// Iterates `steps` transitions from `initial`, returning every
    /// distribution including the starting one.
    pub fn iterate(&self, steps: usize) -> Result<Vec<Vec<f64>>, ComplexityError> {
        let mut out = vec![self.initial.clone()];
        for _ in 0..steps {
            let next = simulate_transition_step(self, out.last().expect("non-empty"))?;
            out.push(next);
        }
        Ok(out)
    }

    pub fn expected_complexity(&self, dist: &[f64]) -> Option<f64> {
        self.complexity
            .as_ref()
            .map(|cx| cx.iter().zip(dist).map(|(c, p)| c * p).sum())
    }
}

/// One forward step, computed as two matrix-vector products.
pub fn simulate_transition_step(model: &TransitionModel, current: &[f64]) -> Result<Vec<f64>, ComplexityError> {
    model.validate()?;
    check_distribution("current", current, model.states.len())
        .map_err(|e| ComplexityError::InvalidKernel(e.to_string()))?;
    let marginal = model.label_marginal(current);
    let mut out = vec![0.0; model.states.len()];
    for (c, pc) in marginal.iter().enumerate() {
        for (kn, pm) in model.model_kernel[c].iter().enumerate() {
            out[kn] += pm * pc;
        }
    }
    Ok(out)
}
