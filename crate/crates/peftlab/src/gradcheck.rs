//! Shift-rule Jacobians against central finite differences on random
//! circuits.

use std::f64::consts::PI;

use peftlab_core::circuits::{expectation_bundle, parameter_shift_jacobian, CircuitSpec, ParamVector};
use peftlab_core::qsim::{amplitude_embed, EmbedSpec, StateVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{AppError, AppResult};

pub const MAX_QUBITS: usize = 6;
pub const MAX_DEPTH: usize = 4;
/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    pub qubits: usize,
    pub depth: usize,
    pub trials: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            qubits: 3,
            depth: 2,
            trials: 20,
            tol: 1e-6,
            seed: 0,
        }
    }
}

impl GradCheckOptions {
    pub fn validate(&self) -> AppResult<()> {
        if !(1..=MAX_QUBITS).contains(&self.qubits) {
            return Err(AppError::Config(format!(
                "qubits must be in 1..={MAX_QUBITS}, got {}",
                self.qubits
            )));
        }
        if !(1..=MAX_DEPTH).contains(&self.depth) {
            return Err(AppError::Config(format!("depth must be in 1..={MAX_DEPTH}, got {}", self.depth)));
        }
        if self.trials == 0 {
            return Err(AppError::Config("trials must be at least 1".into()));
        }
        if !(self.tol.is_finite() && self.tol >= 0.0) {
            return Err(AppError::Config(format!("tolerance must be finite and non-negative, got {}", self.tol)));
        }
        Ok(())
    }
}

/// The single largest deviation seen.
#[derive(Debug, Clone, PartialEq)]
pub struct Worst {
    pub trial: usize,
    /// Observable (qubit) index.
    pub i: usize,
    /// Angle index.
    pub j: usize,
    pub theta: Vec<f64>,
    pub deviation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub options: GradCheckOptions,
    pub max_deviation: f64,
    pub worst: Worst,
}

impl GradCheckReport {
    /// Strictly below tolerance, so a zero tolerance always fails.
    pub fn passed(&self) -> bool {
        self.max_deviation < self.options.tol
    }
}

/// Finite-difference Jacobian, row-major `[qubit][angle]`.
pub fn finite_difference(spec: &CircuitSpec, theta: &[f64], input: &StateVector) -> AppResult<Vec<Vec<f64>>> {
    let n = spec.n_qubits();
    let mut jac = vec![vec![0.0; theta.len()]; n];
    let mut t = theta.to_vec();
    for j in 0..theta.len() {
        t[j] = theta[j] + FD_STEP;
        let plus = expectation_bundle(spec, &ParamVector::new(t.clone()).map_err(AppError::runtime)?, input)
            .map_err(AppError::runtime)?;
        t[j] = theta[j] - FD_STEP;
        let minus = expectation_bundle(spec, &ParamVector::new(t.clone()).map_err(AppError::runtime)?, input)
            .map_err(AppError::runtime)?;
        t[j] = theta[j];
        for i in 0..n {
            jac[i][j] = (plus[i] - minus[i]) / (2.0 * FD_STEP);
        }
    }
    Ok(jac)
}

pub fn grad_check(opts: &GradCheckOptions) -> AppResult<GradCheckReport> {
    opts.validate()?;
    let spec = CircuitSpec::new(opts.qubits, opts.depth).map_err(AppError::config)?;
    let dim = 1usize << opts.qubits;
    let embed = EmbedSpec::new(dim).map_err(AppError::config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut worst: Option<Worst> = None;
    for trial in 0..opts.trials {
        let theta: Vec<f64> = (0..spec.param_count()).map(|_| rng.random_range(-PI..=PI)).collect();
        let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let input = amplitude_embed(&x, &embed).map_err(AppError::runtime)?;
        let params = ParamVector::new(theta.clone()).map_err(AppError::runtime)?;
        let shift = parameter_shift_jacobian(&spec, &params, &input).map_err(AppError::runtime)?;
        let fd = finite_difference(&spec, &theta, &input)?;
        for (i, row) in fd.iter().enumerate() {
            for (j, f) in row.iter().enumerate() {
                let dev = (shift.get(i, j) - f).abs();
                if worst.as_ref().is_none_or(|w| dev > w.deviation) {
                    worst = Some(Worst {
                        trial,
                        i,
                        j,
                        theta: theta.clone(),
                        deviation: dev,
                    });
                }
            }
        }
    }
    let worst = worst.expect("at least one trial and one angle");
    Ok(GradCheckReport {
        options: *opts,
        max_deviation: worst.deviation,
        worst,
    })
}
