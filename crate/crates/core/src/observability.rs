//! Local (Hermann-Krener) observability along a state trajectory.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::ekf::numeric_jacobian;
use crate::physio::{
    arterial_o2, derivative_with_drive, measurement, state_cardiac_output, transport_delay, Delayed,
    DelayBuffer, ModelParams, StateVector,
};

#[derive(Debug, Clone, PartialEq)]
pub struct ObservabilityConfig {
    /// Number of repeated Lie derivatives stacked below the measurement rows.
    pub order: usize,
    /// Relative singular-value threshold for the rank test.
    pub rank_tol: f64,
    /// Evaluate every `stride`-th trajectory sample.
    pub stride: usize,
    /// Column scaling applied before rank and scores (typical state excursion).
    pub state_scale: [f64; 5],
    /// Relative finite-difference step for the nested derivatives.
    pub step: f64,
}

impl Default for ObservabilityConfig {
    fn default() -> Self {
        Self {
            order: 2,
            rank_tol: 1e-8,
            stride: 10,
            // widths of the moderate-intensity physiological ranges
            state_scale: [25.0, 8.0, 0.04, 0.08, 0.25],
            step: 1e-5,
        }
    }
}

/// `order`-th Lie derivative of `h` along `f`, by nested central differences
/// in the direction of the vector field.
fn lie_derivative<F, H>(f: &F, h: &H, x: &DVector<f64>, order: usize, step: f64) -> DVector<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
    H: Fn(&DVector<f64>) -> DVector<f64>,
{
    if order == 0 {
        return h(x);
    }
    let v = f(x);
    let speed = v
        .iter()
        .zip(x.iter())
        .map(|(vi, xi)| vi.abs() / xi.abs().max(1.0))
        .fold(0.0, f64::max);
    if speed == 0.0 {
        return DVector::zeros(h(x).len());
    }
    let eps = step / speed;
    let xp = x + &v * eps;
    let xm = x - &v * eps;
    (lie_derivative(f, h, &xp, order - 1, step) - lie_derivative(f, h, &xm, order - 1, step)) / (2.0 * eps)
}

/// Stack the Jacobians of h, L_f h, …, L_f^order h.
pub fn lie_observability_matrix_with<F, H>(
    f: F,
    h: H,
    x0: &DVector<f64>,
    order: usize,
    step: f64,
) -> Result<DMatrix<f64>>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
    H: Fn(&DVector<f64>) -> DVector<f64>,
{
    if order == 0 {
        return Err(Error::invalid("Lie derivative order must be at least 1"));
    }
    let m = h(x0).len();
    let n = x0.len();
    let mut out = DMatrix::zeros(m * (order + 1), n);
    for k in 0..=order {
        let block = numeric_jacobian(|y| lie_derivative(&f, &h, y, k, step), x0, step)?;
        if block.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical(format!("non-finite Lie derivative of order {k}")));
        }
        out.rows_mut(k * m, m).copy_from(&block);
    }
    Ok(out)
}

fn to_state(v: &DVector<f64>) -> StateVector {
    StateVector::from_column_slice(v.as_slice())
}

/// Observability matrix of the gas-exchange model at one state, with the
/// heart-rate input and delayed controller inputs frozen.
pub fn lie_observability_matrix(
    x0: &StateVector,
    u0: f64,
    delayed: Delayed,
    order: usize,
    params: &ModelParams,
    step: f64,
) -> Result<DMatrix<f64>> {
    let f = |v: &DVector<f64>| {
        let d = derivative_with_drive(&to_state(v), u0, delayed, params, None);
        DVector::from_column_slice(d.as_slice())
    };
    let h = |v: &DVector<f64>| DVector::from_column_slice(&measurement(&to_state(v), u0, params));
    lie_observability_matrix_with(f, h, &DVector::from_column_slice(x0.as_slice()), order, step)
}

/// Number of singular values above `tol`·σ_max.
pub fn rank_with_tolerance(m: &DMatrix<f64>, tol: f64) -> usize {
    let sv = m.clone().singular_values();
    let max = sv.max();
    if !(max > 0.0) {
        return 0;
    }
    sv.iter().filter(|s| **s > tol * max).count()
}

/// Ratio of the largest to the smallest singular value.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().singular_values();
    sv.max() / sv.min()
}

/// Column 2-norms divided by their maximum.
pub fn per_state_scores(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    let norms: Vec<f64> = m.column_iter().map(|c| c.norm()).collect();
    let max = norms.iter().copied().fold(0.0, f64::max);
    if !(max > 0.0) {
        return Err(Error::invalid("observability matrix is all zero"));
    }
    Ok(norms.iter().map(|s| s / max).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservabilityReport {
    /// Trajectory sample indices that were evaluated.
    pub points: Vec<usize>,
    pub rank_per_step: Vec<usize>,
    pub mean_rank: f64,
    /// Normalized column norms of the trajectory-stacked, scaled matrix.
    pub per_state_scores: Vec<f64>,
    pub matrix_condition: Vec<f64>,
}

impl ObservabilityReport {
    /// Fraction of evaluation points with full rank.
    pub fn full_rank_fraction(&self) -> f64 {
        let full = self.rank_per_step.iter().filter(|r| **r == 5).count();
        full as f64 / self.rank_per_step.len().max(1) as f64
    }
}

/// Evaluate observability at every `stride`-th sample of a 1 Hz trajectory.
/// Delayed inputs are reconstructed from the trajectory itself.
pub fn analyze_trajectory(
    states: &[StateVector],
    u: &[f64],
    cfg: &ObservabilityConfig,
    params: &ModelParams,
) -> Result<ObservabilityReport> {
    if states.is_empty() || states.len() != u.len() {
        return Err(Error::invalid("trajectory and input must be non-empty and of equal length"));
    }
    if cfg.stride == 0 {
        return Err(Error::invalid("stride must be at least 1"));
    }
    let mut buffer = DelayBuffer::new(states.len(), params.basal_delayed());
    for (k, x) in states.iter().enumerate() {
        buffer.push(k as f64, arterial_o2(x, params), x[1])?;
    }
    let scale = DMatrix::from_diagonal(&DVector::from_column_slice(&cfg.state_scale));
    let mut points = Vec::new();
    let mut ranks = Vec::new();
    let mut conds = Vec::new();
    let mut col_sq = [0.0; 5];
    for k in (0..states.len()).step_by(cfg.stride) {
        let x = &states[k];
        let q = state_cardiac_output(x, u[k], params);
        let delayed = if q > 0.0 {
            transport_delay(&buffer, k as f64, q, params)?
        } else {
            params.basal_delayed()
        };
        let m = lie_observability_matrix(x, u[k], delayed, cfg.order, params, cfg.step)? * &scale;
        ranks.push(rank_with_tolerance(&m, cfg.rank_tol));
        conds.push(condition_number(&m));
        for (j, c) in m.column_iter().enumerate() {
            col_sq[j] += c.norm_squared();
        }
        points.push(k);
    }
    let norms = col_sq.map(f64::sqrt);
    let max = norms.iter().copied().fold(0.0, f64::max);
    let per_state_scores = if max > 0.0 {
        norms.iter().map(|s| s / max).collect()
    } else {
        vec![0.0; 5]
    };
    let mean_rank = ranks.iter().sum::<usize>() as f64 / ranks.len() as f64;
    Ok(ObservabilityReport {
        points,
        rank_per_step: ranks,
        mean_rank,
        per_state_scores,
        matrix_condition: conds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_examples() {
        assert_eq!(rank_with_tolerance(&DMatrix::identity(5, 5), 1e-8), 5);
        let a = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let b = DVector::from_vec(vec![4.0, -1.0, 0.5]);
        assert_eq!(rank_with_tolerance(&(&a * b.transpose()), 1e-8), 1);
        let d = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1e-15]);
        assert_eq!(rank_with_tolerance(&d, 1e-8), 1);
        assert_eq!(rank_with_tolerance(&DMatrix::zeros(3, 3), 1e-8), 0);
    }

    #[test]
    fn score_examples() {
        let s = per_state_scores(&DMatrix::identity(5, 5)).unwrap();
        assert!(s.iter().all(|v| *v == 1.0));
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0, 4.0, 0.0, 0.0]));
        assert_eq!(per_state_scores(&m).unwrap(), vec![0.25, 0.5, 1.0, 0.0, 0.0]);
        assert!(per_state_scores(&DMatrix::zeros(2, 5)).is_err());
    }

    #[test]
    fn linear_system_rows_are_c_and_ca() {
        let a = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0, -1.0, -2.0, -3.0]);
        let c = DMatrix::from_row_slice(1, 3, &[1.0, 0.5, 0.0]);
        let (a2, c2) = (a.clone(), c.clone());
        let x = DVector::from_vec(vec![0.3, -0.2, 1.1]);
        let m = lie_observability_matrix_with(move |v| &a2 * v, move |v| &c2 * v, &x, 1, 1e-5).unwrap();
        let mut expect = DMatrix::zeros(2, 3);
        expect.rows_mut(0, 1).copy_from(&c);
        expect.rows_mut(1, 1).copy_from(&(&c * &a));
        assert!((m - expect).amax() < 1e-6);
    }

    #[test]
    fn zero_perfusion_kills_measurement_rows() {
        let p = ModelParams::default();
        let x = StateVector::new(100.0, 38.0, 0.12, 0.63, 0.3);
        let m = lie_observability_matrix(&x, 0.0, p.basal_delayed(), 2, &p, 1e-5).unwrap();
        assert!(m.rows(0, 2).amax() == 0.0);
    }

    #[test]
    fn order_zero_rejected() {
        let p = ModelParams::default();
        let x = StateVector::new(100.0, 38.0, 0.12, 0.63, 0.3);
        assert!(lie_observability_matrix(&x, 1.0, p.basal_delayed(), 0, &p, 1e-5).is_err());
    }
}
